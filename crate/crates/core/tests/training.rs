use mogen::dataset::{Corpus, SyntheticSpec};
use mogen::losses::AblationFlags;
use mogen::model::{ModelConfig, MotionModel};
use mogen::training::{tf_schedule, train, TeacherForcing, TrainConfig, TrainLog};
use mogen::ErrorKind;

fn corpus() -> Corpus {
    let mut spec = SyntheticSpec::default_desk();
    spec.frames = 16;
    for c in &mut spec.categories {
        let per = 12 / c.modes.len();
        for m in &mut c.modes {
            m.count = per;
        }
    }
    Corpus::synthetic(&spec, 3).unwrap()
}

fn small_model(corpus: &Corpus, endpoint: bool, seed: u64) -> MotionModel {
    let cfg = ModelConfig {
        joints: corpus.joints(),
        root: corpus.manifest.skeleton.root,
        frames: corpus.frames(),
        categories: corpus.num_categories(),
        latent: 6,
        enc_hidden: 16,
        enc_feature: 12,
        traj_embed: 8,
        traj_hidden: 12,
        traj_feature: 8,
        motion_embed: 16,
        motion_hidden: 16,
        layers: 1,
        endpoint_conditioning: endpoint,
    };
    MotionModel::new(cfg, seed).unwrap()
}

fn run(corpus: &Corpus, cfg: &TrainConfig, model_seed: u64) -> (MotionModel, TrainLog) {
    let mut m = small_model(corpus, !cfg.ablation.no_endpoint, model_seed);
    let (_, log) = train(&mut m, corpus, cfg, |_| {}).unwrap();
    (m, log)
}

fn params(m: &MotionModel, dir: &std::path::Path) -> Vec<u8> {
    m.save(dir, &Default::default()).unwrap();
    std::fs::read(dir.join("params.bin")).unwrap()
}

fn cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        window: 16,
        batch_size: 8,
        ..TrainConfig::desk()
    }
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let c = corpus();
    let dir = tempfile::tempdir().unwrap();
    let (a, la) = run(&c, &cfg(2), 4);
    let (b, lb) = run(&c, &cfg(2), 4);
    let pa = params(&a, &dir.path().join("a"));
    assert_eq!(pa, params(&b, &dir.path().join("b")));
    let strip = |l: &TrainLog| l.epochs.iter().map(|e| e.losses).collect::<Vec<_>>();
    assert_eq!(strip(&la), strip(&lb));

    let (other, _) = run(&c, &TrainConfig { seed: 5, ..cfg(2) }, 4);
    assert_ne!(pa, params(&other, &dir.path().join("c")));
}

#[test]
fn loss_falls() {
    let c = corpus();
    let (_, log) = run(&c, &cfg(30), 0);
    let first = log.epochs[0].losses.total;
    let tail = &log.epochs[27..];
    let last = tail.iter().map(|e| e.losses.total).sum::<f64>() / tail.len() as f64;
    assert!(last < 0.5 * first, "first {first}, last {last}");
    let csv = log.to_csv();
    assert!(csv.starts_with("epoch,l_es,l_r,l_mre,l_cons,total,tf_rate"));
    assert_eq!(csv.lines().count(), 31);
}

#[test]
fn ablations_zero_their_terms() {
    let c = corpus();
    let flags = AblationFlags {
        no_traj: true,
        ..Default::default()
    };
    let (_, log) = run(&c, &TrainConfig { ablation: flags, ..cfg(1) }, 0);
    let l = log.epochs[0].losses;
    assert_eq!((l.l_r, l.l_cons), (0.0, 0.0));
    assert!(l.l_mre > 0.0);

    let flags = AblationFlags {
        no_endpoint: true,
        ..Default::default()
    };
    let (m, _) = run(&c, &TrainConfig { ablation: flags, ..cfg(1) }, 0);
    assert!(!m.config.endpoint_conditioning);
}

#[test]
fn mismatched_setups_are_rejected() {
    let c = corpus();
    let mut m = small_model(&c, true, 0);
    let bad_window = TrainConfig { window: 12, ..cfg(1) };
    assert_eq!(train(&mut m, &c, &bad_window, |_| {}).unwrap_err().kind(), ErrorKind::Config);
    let flags = AblationFlags {
        no_endpoint: true,
        ..Default::default()
    };
    let mismatch = TrainConfig { ablation: flags, ..cfg(1) };
    assert_eq!(train(&mut m, &c, &mismatch, |_| {}).unwrap_err().kind(), ErrorKind::Config);
    let bad_rate = TrainConfig { tf_end: 1.5, ..cfg(1) };
    assert_eq!(train(&mut m, &c, &bad_rate, |_| {}).unwrap_err().kind(), ErrorKind::Config);
}

#[test]
fn schedule_and_recipe() {
    let d = TrainConfig::default();
    assert_eq!(tf_schedule(0, &d), 1.0);
    assert!((tf_schedule(150, &d) - 0.65).abs() < 1e-12);
    assert!((tf_schedule(300, &d) - 0.3).abs() < 1e-12);
    assert_eq!(d.teacher_forcing, TeacherForcing::Frame);
    let desk = TrainConfig::desk();
    assert_eq!(desk.teacher_forcing, TeacherForcing::Sequence);
    assert_eq!((desk.epochs, desk.batch_size, desk.tf_end), (d.epochs, d.batch_size, d.tf_end));
}
