//! Subcommand implementations.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use mogen::bundle::ModelBundle;
use mogen::dataset::{Corpus, MotionRecord, SyntheticSpec};
use mogen::kinematics::Motion;
use mogen::latent::{interpolate as lerp, sample_mode, sample_mode_preserving, ConventionalSampler, Pca};
use mogen::metrics::{
    evaluate as run_eval, train_classifier as fit_classifier, trajectory_customization_eval, ActionClassifier,
    CodeSource, MotionSource,
};
use mogen::model::{GenRequest, Generated, LatentCode, MotionModel};
use mogen::training::{grad_check_tiny, train as fit};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::{MotionOut, Sampler};

/// Gradient-check acceptance threshold.
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

pub fn parse_point(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    match v.as_slice() {
        [x, y, z] if v.iter().all(|c| c.is_finite()) => Ok([*x, *y, *z]),
        _ => Err(format!("expected three finite numbers `x,y,z`, got `{s}`")),
    }
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn require_dir(path: &Path, what: &str) -> CliResult<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{what} directory {} does not exist", path.display())))
    }
}

pub fn synth_data(spec: Option<&Path>, seed: u64, out: &Path) -> CliResult<()> {
    let spec = match spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            serde_json::from_str::<SyntheticSpec>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => SyntheticSpec::default_desk(),
    };
    let corpus = Corpus::synthetic(&spec, seed)?;
    corpus.save(out)?;
    println!(
        "wrote {} records ({} categories, {} frames) to {}",
        corpus.records.len(),
        corpus.num_categories(),
        corpus.frames(),
        out.display()
    );
    Ok(())
}

pub fn train(config: Option<&Path>, corpus_dir: &Path, out: &Path, epochs: Option<usize>) -> CliResult<()> {
    let mut cfg = RunConfig::load_or_default(config)?;
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    cfg.train.validate()?;
    require_dir(corpus_dir, "corpus")?;
    let corpus = Corpus::load(corpus_dir)?;
    let model_cfg = cfg.model_config(&corpus)?;
    create_dir(out)?;
    let mut model = MotionModel::new(model_cfg, cfg.model.seed)?;
    log::info!("training {} parameters for {} epochs", model.store.numel(), cfg.train.epochs);
    let (meta, log) = fit(&mut model, &corpus, &cfg.train, |e| {
        log::info!("epoch {} total {:.4} tf {:.3}", e.epoch, e.losses.total, e.tf_rate);
    })?;
    let bundle = ModelBundle::build(model, meta, &corpus, cfg.modes.seed, &cfg.modes.select_k())?;
    bundle.save(out)?;
    write_file(&out.join("train_log.csv"), &log.to_csv())?;
    let echo = toml::to_string(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
    write_file(&out.join("run_config.toml"), &echo)?;
    if let Some(last) = log.epochs.last() {
        println!("final epoch {}: total loss {:.4}", last.epoch, last.losses.total);
    }
    print_modes(&bundle);
    println!("saved model bundle to {}", out.display());
    Ok(())
}

fn print_modes(bundle: &ModelBundle) {
    for cat in &bundle.catalog.categories {
        println!(
            "{}: K={} searched, {} modes kept, weights {:?}",
            cat.name,
            cat.selection.k,
            cat.modes(),
            cat.membership_weights().iter().map(|w| format!("{w:.3}")).collect::<Vec<_>>()
        );
    }
}

pub fn train_classifier(config: Option<&Path>, corpus_dir: &Path, out: &Path) -> CliResult<()> {
    let cfg = RunConfig::load_or_default(config)?;
    require_dir(corpus_dir, "corpus")?;
    let corpus = Corpus::load(corpus_dir)?;
    create_dir(out)?;
    let (cls, report) = fit_classifier(&corpus, &cfg.classifier)?;
    cls.save(out)?;
    println!(
        "train accuracy {:.4}, held-out accuracy {:.4}",
        report.train_accuracy, report.held_out_accuracy
    );
    Ok(())
}

pub struct EvaluateArgs<'a> {
    pub model: &'a Path,
    pub classifier: &'a Path,
    pub corpus: &'a Path,
    pub config: Option<&'a Path>,
    pub sets: Option<usize>,
    pub per_category: Option<usize>,
    pub seed: Option<u64>,
    pub sampler: Sampler,
    pub customization: bool,
    pub out: Option<&'a Path>,
}

pub fn evaluate(a: EvaluateArgs) -> CliResult<()> {
    let mut cfg = RunConfig::load_or_default(a.config)?;
    let protocol = &mut cfg.eval;
    if let Some(s) = a.sets {
        protocol.sets = s;
    }
    if let Some(n) = a.per_category {
        protocol.per_category = n;
    }
    if let Some(s) = a.seed {
        protocol.seed = s;
        cfg.customization.seed = s;
    }
    let bundle = ModelBundle::load(a.model)?;
    let cls = ActionClassifier::load(a.classifier)?;
    let corpus = Corpus::load(a.corpus)?;
    if corpus.manifest.categories != bundle.category_names() {
        return Err(CliError::Data("corpus categories differ from the model's".into()));
    }
    let out = a.out.unwrap_or(a.model);
    create_dir(out)?;
    let conventional;
    let (codes, label) = match a.sampler {
        Sampler::ModePreserving => (CodeSource::ModePreserving(&bundle.catalog), "mode-preserving"),
        Sampler::Conventional => {
            conventional = ConventionalSampler::fit(&bundle.bank)?;
            (CodeSource::Conventional(&conventional), "conventional")
        }
    };
    let source = MotionSource::Model {
        model: &bundle.model,
        codes,
        knn: &bundle.knn,
    };
    let report = run_eval(&source, &corpus, &cls, &cfg.eval, label)?;
    let mut text = report.to_text();
    write_file(&out.join("report.csv"), &report.to_csv())?;
    if a.customization {
        let c = trajectory_customization_eval(&bundle.model, codes, &bundle.bank, &cls, &cfg.customization)?;
        text.push('\n');
        text.push_str(&c.to_text());
    }
    write_file(&out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn discover_modes(model: &Path, corpus_dir: &Path, config: Option<&Path>, seed: Option<u64>) -> CliResult<()> {
    let mut cfg = RunConfig::load_or_default(config)?;
    if let Some(s) = seed {
        cfg.modes.seed = s;
    }
    let bundle = ModelBundle::load(model)?;
    let corpus = Corpus::load(corpus_dir)?;
    let bundle = ModelBundle::build(bundle.model, bundle.meta, &corpus, cfg.modes.seed, &cfg.modes.select_k())?;
    bundle.save(model)?;
    let mut csv = String::from("category,record,x,y,mode\n");
    for cat in &bundle.catalog.categories {
        let codes: Vec<Vec<f64>> = cat.members.iter().map(|&i| bundle.bank.codes[i].clone()).collect();
        let pca = Pca::fit(&codes)?;
        for ((&i, z), &m) in cat.members.iter().zip(&codes).zip(&cat.gmm().assignment) {
            let [x, y] = pca.project(z);
            let _ = writeln!(csv, "{},{i},{x},{y},{m}", cat.name);
        }
    }
    write_file(&model.join("latent_map.csv"), &csv)?;
    print_modes(&bundle);
    Ok(())
}

fn category_of(bundle: &ModelBundle, name: &str) -> CliResult<usize> {
    Ok(bundle.category_index(name)?)
}

fn endpoint_for(bundle: &ModelBundle, category: usize, code: &LatentCode) -> CliResult<Option<[f64; 3]>> {
    if bundle.model.config.endpoint_conditioning {
        Ok(Some(bundle.knn.predict(code, category)?))
    } else {
        Ok(None)
    }
}

fn motion_csv(m: &Motion) -> String {
    let mut s = String::from("frame,joint,x,y,z\n");
    for t in 0..m.frames() {
        for j in 0..m.joints() {
            let [x, y, z] = m.joint(t, j);
            let _ = writeln!(s, "{t},{j},{x},{y},{z}");
        }
    }
    s
}

/// Store generated motions as a corpus, tagged with their source mode.
fn write_motions(bundle: &ModelBundle, motions: Vec<(Generated, Option<usize>)>, out: &MotionOut, seed: u64) -> CliResult<()> {
    let records: Vec<MotionRecord> = motions
        .into_iter()
        .map(|(g, mode)| MotionRecord { motion: g.motion, mode })
        .collect();
    if out.csv {
        create_dir(&out.out)?;
        for (i, r) in records.iter().enumerate() {
            write_file(&out.out.join(format!("motion_{i:04}.csv")), &motion_csv(&r.motion))?;
        }
    }
    let n = records.len();
    let corpus = Corpus::new(bundle.skeleton.clone(), bundle.category_names(), records, seed)?;
    corpus.save(&out.out)?;
    println!("wrote {n} motions to {}", out.out.display());
    Ok(())
}

pub fn sample(model: &Path, category: &str, mode: Option<usize>, count: usize, seed: u64, out: &MotionOut) -> CliResult<()> {
    if count == 0 {
        return Err(CliError::Config("--count must be positive".into()));
    }
    let bundle = ModelBundle::load(model)?;
    let c = category_of(&bundle, category)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut requests = Vec::with_capacity(count);
    let mut modes = Vec::with_capacity(count);
    for _ in 0..count {
        let (k, z) = match mode {
            Some(k) => (k, sample_mode(&bundle.catalog, c, k, &mut rng)?),
            None => sample_mode_preserving(&bundle.catalog, c, None, &mut rng)?,
        };
        let endpoint = endpoint_for(&bundle, c, &z)?;
        requests.push(GenRequest {
            category: c,
            code: z,
            endpoint,
        });
        modes.push(Some(k));
    }
    let generated = bundle.model.generate_batch(&requests)?;
    write_motions(&bundle, generated.into_iter().zip(modes).collect(), out, seed)
}

fn mode_mean(bundle: &ModelBundle, category: usize, mode: usize) -> CliResult<LatentCode> {
    let cat = bundle.catalog.category(category)?;
    let g = cat.gmm().components.get(mode).ok_or_else(|| mogen::Error::Unknown {
        what: "mode",
        name: format!("{}/{mode}", cat.name),
    })?;
    Ok(LatentCode(g.mean.iter().copied().collect()))
}

pub fn interpolate(model: &Path, category: &str, mode_a: usize, mode_b: usize, steps: usize, out: &MotionOut) -> CliResult<()> {
    let bundle = ModelBundle::load(model)?;
    let c = category_of(&bundle, category)?;
    let a = mode_mean(&bundle, c, mode_a)?;
    let b = mode_mean(&bundle, c, mode_b)?;
    let requests = lerp(&a, &b, steps)?
        .into_iter()
        .map(|z| {
            Ok(GenRequest {
                category: c,
                endpoint: endpoint_for(&bundle, c, &z)?,
                code: z,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let generated = bundle.model.generate_batch(&requests)?;
    write_motions(&bundle, generated.into_iter().map(|g| (g, None)).collect(), out, 0)
}

fn read_code(path: &Path, dim: usize) -> CliResult<LatentCode> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let v: Vec<f64> = text
        .split(|ch: char| ch == ',' || ch.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|e| CliError::Data(format!("{}: `{s}`: {e}", path.display()))))
        .collect::<CliResult<_>>()?;
    if v.len() != dim || v.iter().any(|x| !x.is_finite()) {
        return Err(CliError::Data(format!(
            "{}: expected {dim} finite numbers, found {}",
            path.display(),
            v.len()
        )));
    }
    Ok(LatentCode(v))
}

pub fn customize(
    model: &Path,
    category: &str,
    endpoints: &[[f64; 3]],
    code_file: Option<&Path>,
    count: usize,
    seed: u64,
    out: &MotionOut,
) -> CliResult<()> {
    let bundle = ModelBundle::load(model)?;
    if !bundle.model.config.endpoint_conditioning {
        return Err(mogen::Error::EndpointUnsupported.into());
    }
    let c = category_of(&bundle, category)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codes: Vec<(Option<usize>, LatentCode)> = match code_file {
        Some(p) => vec![(None, read_code(p, bundle.model.config.latent)?)],
        None => {
            if count == 0 {
                return Err(CliError::Config("--count must be positive".into()));
            }
            (0..count)
                .map(|_| sample_mode_preserving(&bundle.catalog, c, None, &mut rng).map(|(k, z)| (Some(k), z)))
                .collect::<mogen::Result<_>>()?
        }
    };
    let mut requests = Vec::new();
    let mut tags = Vec::new();
    for (ci, (mode, z)) in codes.iter().enumerate() {
        for &e in endpoints {
            requests.push(GenRequest {
                category: c,
                code: z.clone(),
                endpoint: Some(e),
            });
            tags.push((ci, *mode));
        }
    }
    let generated = bundle.model.generate_batch(&requests)?;
    let mut csv = String::from("sample,code,x,y,z,dist_e\n");
    for (i, (g, r)) in generated.iter().zip(&requests).enumerate() {
        let e = r.endpoint.expect("every request has an endpoint");
        let root = g.motion.root_position(g.motion.frames() - 1);
        let d: f64 = (0..3).map(|k| (root[k] - e[k]).powi(2)).sum();
        let line = format!("{i},{},{},{},{},{d}", tags[i].0, e[0], e[1], e[2]);
        println!("{line}");
        csv.push_str(&line);
        csv.push('\n');
    }
    let motions = generated.into_iter().zip(tags).map(|(g, (_, m))| (g, m)).collect();
    write_motions(&bundle, motions, out, seed)?;
    write_file(&out.out.join("dist_e.csv"), &csv)
}

pub fn grad_check(tiny: bool, seed: u64) -> CliResult<()> {
    if !tiny {
        return Err(CliError::Config("only the tiny configuration is supported; pass --tiny".into()));
    }
    let r = grad_check_tiny(seed)?;
    println!(
        "max relative error {:.3e} over {} coordinates (worst: {} [{}])",
        r.max_rel_error,
        r.coords_checked,
        r.worst_param.as_deref().unwrap_or("-"),
        r.worst_index
    );
    if r.max_rel_error < GRAD_CHECK_TOLERANCE {
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "gradient check failed: max relative error {:.3e} ≥ {GRAD_CHECK_TOLERANCE:e}",
            r.max_rel_error
        )))
    }
}

pub fn serve(model: &Path, host: &str, port: u16) -> CliResult<()> {
    let bundle = ModelBundle::load(model)?;
    let state = mogen_service::AppState::new(bundle)?;
    let addr: std::net::SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| CliError::Config(format!("bad listen address `{host}:{port}`: {e}")))?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Data(format!("cannot start runtime: {e}")))?;
    println!("serving on http://{addr}");
    rt.block_on(mogen_service::serve(state, addr))
        .map_err(|e| CliError::Data(format!("server failed on {addr}: {e}")))
}
