use std::path::Path;
use std::process::{Command, Output};

use mogen::dataset::SyntheticSpec;

fn mogen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mogen")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr_line(o: &Output) -> String {
    let s = String::from_utf8_lossy(&o.stderr).to_string();
    let lines: Vec<&str> = s.lines().filter(|l| l.starts_with("error[")).collect();
    assert_eq!(lines.len(), 1, "stderr: {s}");
    lines[0].to_string()
}

const CONFIG: &str = r#"
[model]
seed = 1
[model.explicit]
joints = 9
root = 0
frames = 20
categories = 6
latent = 6
enc_hidden = 16
enc_feature = 16
traj_embed = 8
traj_hidden = 16
traj_feature = 8
motion_embed = 16
motion_hidden = 16
layers = 1
endpoint_conditioning = true

[train]
epochs = 3
window = 20
batch_size = 8

[modes]
min_members = 3

[classifier]
hidden = 8
feature = 8
epochs = 2

[eval]
sets = 2
per_category = 8

[customization]
trials = 1
codes_per_category = 2
interpolants = 2
"#;

fn small_spec(dir: &Path) -> std::path::PathBuf {
    let mut spec = SyntheticSpec::default_desk();
    spec.frames = 20;
    for c in &mut spec.categories {
        let per = 12 / c.modes.len();
        for m in &mut c.modes {
            m.count = per;
        }
    }
    let path = dir.join("spec.json");
    std::fs::write(&path, serde_json::to_string_pretty(&spec).unwrap()).unwrap();
    path
}

#[test]
fn grad_check_tiny_passes() {
    let o = mogen(&["grad-check", "--tiny"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("max relative error"), "{out}");
}

#[test]
fn failures_exit_with_class_codes() {
    let o = mogen(&["grad-check"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_line(&o).starts_with("error[config]"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nepochz = 1\n").unwrap();
    let o = mogen(&["train", "--config", p(&bad), "--corpus", p(dir.path()), "--out", p(&dir.path().join("m"))]);
    assert_eq!(o.status.code(), Some(2));
    stderr_line(&o);

    let o = mogen(&["train", "--corpus", p(&dir.path().join("nothing")), "--out", p(&dir.path().join("m"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr_line(&o).starts_with("error[data]"));

    let o = mogen(&["customize", "--model", p(dir.path()), "--category", "walk", "--endpoint", "1,2"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec = small_spec(d);
    let cfg = d.join("run.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let corpus = d.join("corpus");
    let model = d.join("model");
    let cls = d.join("classifier");

    let ok = |o: Output| {
        assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8_lossy(&o.stdout).to_string()
    };
    let out = ok(mogen(&["synth-data", "--spec", p(&spec), "--seed", "2", "--out", p(&corpus)]));
    assert!(out.contains("72 records"), "{out}");
    let out = ok(mogen(&["train", "--config", p(&cfg), "--corpus", p(&corpus), "--out", p(&model)]));
    assert!(out.contains("walk: K="), "{out}");
    for f in ["model.txt", "params.bin", "catalog.txt", "bank.txt", "skeleton.txt", "train_log.csv", "run_config.toml"] {
        assert!(model.join(f).exists(), "{f}");
    }
    ok(mogen(&["train-classifier", "--config", p(&cfg), "--corpus", p(&corpus), "--out", p(&cls)]));
    let eval_dir = d.join("eval");
    let out = ok(mogen(&[
        "evaluate",
        "--model",
        p(&model),
        "--classifier",
        p(&cls),
        "--corpus",
        p(&corpus),
        "--config",
        p(&cfg),
        "--customization",
        "--out",
        p(&eval_dir),
    ]));
    assert!(out.contains("FID") && out.contains("dist_e"), "{out}");
    let csv = std::fs::read_to_string(eval_dir.join("report.csv")).unwrap();
    assert!(csv.starts_with("label,metric,category,mean,ci95"));

    let out = ok(mogen(&["discover-modes", "--model", p(&model), "--corpus", p(&corpus), "--config", p(&cfg)]));
    assert!(out.contains("squat: K="));
    assert!(model.join("latent_map.csv").exists());

    // fixed seed, identical files
    let s1 = d.join("s1");
    let s2 = d.join("s2");
    for s in [&s1, &s2] {
        ok(mogen(&["sample", "--model", p(&model), "--category", "run", "--count", "3", "--seed", "5", "--out", p(s), "--csv"]));
    }
    for f in ["records.bin", "manifest.txt", "motion_0002.csv"] {
        assert_eq!(std::fs::read(s1.join(f)).unwrap(), std::fs::read(s2.join(f)).unwrap(), "{f}");
    }

    let interp = d.join("interp");
    ok(mogen(&[
        "interpolate", "--model", p(&model), "--category", "walk", "--mode-a", "0", "--mode-b", "0", "--steps", "4", "--out",
        p(&interp),
    ]));
    assert!(std::fs::read_to_string(interp.join("manifest.txt")).unwrap().contains("counts=4,0,0,0,0,0"));

    let cust = d.join("cust");
    let out = ok(mogen(&[
        "customize", "--model", p(&model), "--category", "kick", "--endpoint", "0.5,0,1", "--endpoint", "-1,0,0.2", "--count",
        "2", "--out", p(&cust),
    ]));
    assert_eq!(out.lines().filter(|l| l.chars().next().is_some_and(|c| c.is_ascii_digit())).count(), 4);
    let dist = std::fs::read_to_string(cust.join("dist_e.csv")).unwrap();
    assert_eq!(dist.lines().count(), 5);
    for line in dist.lines().skip(1) {
        let d: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(d.is_finite() && d >= 0.0);
    }

    let code = d.join("code.txt");
    std::fs::write(&code, "0 0 0\n").unwrap();
    let o = mogen(&["customize", "--model", p(&model), "--category", "kick", "--endpoint", "0,0,1", "--code-file", p(&code), "--out", p(&cust)]);
    assert_eq!(o.status.code(), Some(3));
    let o = mogen(&["sample", "--model", p(&model), "--category", "swim", "--out", p(&cust)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_line(&o).contains("swim"));
}
