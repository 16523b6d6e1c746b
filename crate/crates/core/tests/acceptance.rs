//! Primary acceptance criteria, one `[PASS]`/`[FAIL]` line each.
//!
//! Everything runs inside a single test so the heavy parts (a full
//! 300-epoch training run, twelve ablation runs) execute one after the
//! other. Expect a little over an hour on one core. The lines go to stderr
//! as each criterion finishes.

use std::fmt::Write as _;
use std::io::Write as _;
use std::time::Instant;

use mogen::dataset::{Corpus, SyntheticSpec};
use mogen::kinematics::{decompose, integrate_velocities, recompose, Motion};
use mogen::latent::{select_k, ConventionalSampler, KnnEndpointModel, ModeCatalog, SelectKOptions, KNN_K};
use mogen::losses::{l_es_parts, spring_centering_lhs_rhs, AblationFlags, ContrastiveConfig};
use mogen::metrics::{
    apd, discovered_mode_groups, evaluate, fid, mode_homogeneity, shuffled_groups, train_classifier,
    trajectory_customization_eval, ActionClassifier, ClassifierConfig, CodeSource, CustomizationProtocol,
    EvalProtocol, FeatureStats, MetricReport, MotionSource,
};
use mogen::model::{LatentPosterior, ModelConfig, MotionModel};
use mogen::training::{extract_code_bank, grad_check_tiny, train, TrainConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Epochs per ablation run; every variant and seed gets the same budget.
const ABLATION_EPOCHS: usize = 100;
const ABLATION_SEEDS: [u64; 3] = [0, 1, 2];
/// Criteria whose targets the desk-scale model does not reach. Their lines
/// still print; README's "Acceptance status" gives the measurements.
const KNOWN_SHORTFALLS: &[&str] = &[];

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

#[derive(Default)]
struct Sheet {
    rows: Vec<Outcome>,
}

/// Writes straight to stderr, which the test harness does not capture, so
/// the lines show up in a plain `cargo test` run.
fn emit(text: &str) {
    let mut err = std::io::stderr().lock();
    let _ = err.write_all(text.as_bytes());
    let _ = err.flush();
}

impl Sheet {
    fn record(&mut self, name: &'static str, pass: bool, detail: String) {
        emit(&format!("[{}] {name}: {detail}\n", if pass { "PASS" } else { "FAIL" }));
        self.rows.push(Outcome { name, pass, detail });
    }
}

/// The training recipe used for every acceptance run.
fn recipe(epochs: usize, seed: u64, ablation: AblationFlags) -> TrainConfig {
    TrainConfig {
        epochs,
        seed,
        ablation,
        ..TrainConfig::desk()
    }
}

fn desk_model(corpus: &Corpus, seed: u64) -> MotionModel {
    let cfg = ModelConfig::desk(corpus.joints(), corpus.manifest.skeleton.root, corpus.frames(), corpus.num_categories());
    MotionModel::new(cfg, seed).unwrap()
}

fn random_motion(rng: &mut impl Rng, frames: usize, joints: usize) -> Motion {
    let p = (0..frames * joints * 3).map(|_| rng.random_range(-3.0..3.0)).collect();
    Motion::new(frames, joints, rng.random_range(0..joints), p, 0).unwrap()
}

fn grad_check(sheet: &mut Sheet) {
    let t = Instant::now();
    let r = grad_check_tiny(0).unwrap();
    let secs = t.elapsed().as_secs_f64();
    sheet.record(
        "gradient correctness",
        r.max_rel_error < 1e-4 && secs < 60.0,
        format!("max relative error {:.2e} over {} coordinates in {secs:.1} s", r.max_rel_error, r.coords_checked),
    );
}

fn kinematics(sheet: &mut Sheet) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let frames = rng.random_range(1..80);
        let joints = rng.random_range(1..16);
        let m = random_motion(&mut rng, frames, joints);
        let (lmp, traj) = decompose(&m);
        let back = recompose(&lmp, &traj, 0).unwrap();
        for (a, b) in m.positions().iter().zip(back.positions()) {
            worst = worst.max((a - b).abs());
        }
        let re = integrate_velocities(&traj.velocities());
        for (a, b) in re.points.iter().zip(&traj.points) {
            for k in 0..3 {
                worst = worst.max((a[k] - b[k]).abs());
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    sheet.record(
        "kinematics identities",
        worst <= 1e-12 && secs < 5.0,
        format!("worst round-trip error {worst:.1e} on 100 motions in {secs:.2} s"),
    );
}

fn apd_oracle(sheet: &mut Sheet) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for n in 2..=20 {
        let frames = rng.random_range(1..30);
        let joints = rng.random_range(1..10);
        let set: Vec<Motion> = (0..n).map(|_| random_motion(&mut rng, frames, joints)).collect();
        let mut brute = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let sq: f64 = set[i].positions().iter().zip(set[j].positions()).map(|(a, b)| (a - b).powi(2)).sum();
                    brute += sq.sqrt();
                }
            }
        }
        brute /= (n * (n - 1)) as f64;
        worst = worst.max((apd(&set).unwrap() - brute).abs());
    }
    // two single-joint motions offset by δ along one axis at every frame
    let (frames, delta) = (37, 0.7);
    let a = Motion::new(frames, 1, 0, vec![0.2; frames * 3], 0).unwrap();
    let shifted: Vec<f64> = a.positions().iter().enumerate().map(|(i, v)| if i % 3 == 0 { v + delta } else { *v }).collect();
    let b = Motion::new(frames, 1, 0, shifted, 0).unwrap();
    let closed = (apd(&[a, b]).unwrap() - delta * (frames as f64).sqrt()).abs();
    let secs = t.elapsed().as_secs_f64();
    sheet.record(
        "APD oracle equivalence",
        worst <= 1e-12 && closed <= 1e-12 && secs < 5.0,
        format!("brute-force gap {worst:.1e}, δ√T gap {closed:.1e}, {secs:.2} s"),
    );
}

fn spring(sheet: &mut Sheet) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..40);
        let d = rng.random_range(1..25);
        let mus: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-4.0..4.0)).collect()).collect();
        let (lhs, rhs) = spring_centering_lhs_rhs(&mus).unwrap();
        worst = worst.max((lhs - rhs).abs());
    }
    let secs = t.elapsed().as_secs_f64();
    sheet.record(
        "spring-centering identity",
        worst < 1e-9 && secs < 5.0,
        format!("worst |lhs − rhs| {worst:.1e} over 100 sets in {secs:.2} s"),
    );
}

fn sqrtm_eig(a: &DMatrix<f64>) -> DMatrix<f64> {
    let e = a.clone().symmetric_eigen();
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

fn fid_properties(sheet: &mut Sheet) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let d = 6;
    let spd = |rng: &mut ChaCha8Rng| {
        let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        &m * m.transpose() + DMatrix::identity(d, d) * 0.1
    };
    let stats = |mean: DVector<f64>, cov: DMatrix<f64>| FeatureStats { mean, cov, count: 100 };
    let (c1, c2) = (spd(&mut rng), spd(&mut rng));
    let m1 = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
    let m2 = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
    let a = stats(m1.clone(), c1.clone());
    let b = stats(m2.clone(), c2.clone());
    let self_gap = fid(&a, &a).unwrap().abs();
    let sym = (fid(&a, &b).unwrap() - fid(&b, &a).unwrap()).abs();
    let mut shift = DVector::zeros(d);
    shift[0] = 1.0;
    let unit = (fid(&stats(DVector::zeros(d), DMatrix::identity(d, d)), &stats(shift, DMatrix::identity(d, d))).unwrap()
        - 1.0)
        .abs();
    // tr √(C1 C2) equals tr √(C1^½ C2 C1^½), a symmetric eigenproblem
    let r1 = sqrtm_eig(&c1);
    let inner = sqrtm_eig(&(&r1 * &c2 * &r1));
    let oracle = (&m1 - &m2).norm_squared() + c1.trace() + c2.trace() - 2.0 * inner.trace();
    let sqrtm = (fid(&a, &b).unwrap() - oracle).abs();
    let secs = t.elapsed().as_secs_f64();
    sheet.record(
        "FID properties",
        self_gap <= 1e-8 && sym <= 1e-8 && unit <= 1e-8 && sqrtm <= 1e-8 && secs < 10.0,
        format!("fid(a,a) {self_gap:.1e}, asymmetry {sym:.1e}, unit shift gap {unit:.1e}, eigen-oracle gap {sqrtm:.1e}"),
    );
}

fn contrastive_spots(sheet: &mut Sheet) {
    let cfg = ContrastiveConfig::default();
    let post = |mean: Vec<f64>| LatentPosterior {
        var: vec![cfg.target_var; mean.len()],
        mean,
    };
    let (m, p) = l_es_parts(&post(vec![0.4; 20]), 2, &post(vec![0.4; 20]), 2, &cfg).unwrap();
    let spot = (m + p - 40.0 * (1.0 - 0.05f64.ln())).abs();
    let mut hinge = 0.0f64;
    for d in [5.0, 5.5, 9.0] {
        let mut far = vec![0.0; 20];
        far[3] = d;
        let (m, _) = l_es_parts(&post(vec![0.0; 20]), 0, &post(far), 1, &cfg).unwrap();
        hinge = hinge.max(m.abs());
    }
    sheet.record(
        "contrastive spot values",
        spot < 1e-9 && hinge == 0.0,
        format!("same-class gap {spot:.1e}, largest hinge at or beyond the margin {hinge:.1e}"),
    );
}

struct Trained {
    model: MotionModel,
    catalog: ModeCatalog,
    knn: KnnEndpointModel,
    bank: mogen::latent::CodeBank,
    seconds: f64,
}

fn fit(corpus: &Corpus, cfg: &TrainConfig, model_seed: u64) -> Trained {
    let mut model = desk_model(corpus, model_seed);
    let t = Instant::now();
    train(&mut model, corpus, cfg, |_| {}).unwrap();
    let seconds = t.elapsed().as_secs_f64();
    let bank = extract_code_bank(&model, corpus).unwrap();
    let catalog = ModeCatalog::discover(&bank, &corpus.manifest.categories, 0, &SelectKOptions::default()).unwrap();
    let knn = KnnEndpointModel::new(&bank, KNN_K).unwrap();
    Trained {
        model,
        catalog,
        knn,
        bank,
        seconds,
    }
}

fn report(t: &Trained, corpus: &Corpus, cls: &ActionClassifier, proto: &EvalProtocol) -> MetricReport {
    let source = MotionSource::Model {
        model: &t.model,
        codes: CodeSource::ModePreserving(&t.catalog),
        knn: &t.knn,
    };
    evaluate(&source, corpus, cls, proto, "model").unwrap()
}

fn end_to_end(sheet: &mut Sheet, corpus: &Corpus, cls: &ActionClassifier, held_out: f64) -> Trained {
    let trained = fit(corpus, &recipe(300, 0, AblationFlags::default()), 0);
    let proto = EvalProtocol::default();
    let rep = report(&trained, corpus, cls, &proto);
    emit(&rep.to_text());

    let untrained = desk_model(corpus, 0);
    let ubank = extract_code_bank(&untrained, corpus).unwrap();
    let uconv = ConventionalSampler::fit(&ubank).unwrap();
    let uknn = KnnEndpointModel::new(&ubank, KNN_K).unwrap();
    let usource = MotionSource::Model {
        model: &untrained,
        codes: CodeSource::Conventional(&uconv),
        knn: &uknn,
    };
    let urep = evaluate(&usource, corpus, cls, &proto, "untrained").unwrap();

    let ratio = rep.fid.mean / urep.fid.mean;
    let mut detail = String::new();
    let _ = write!(
        detail,
        "training {:.0} s; held-out Acc {:.3}; generated Acc {:.3}±{:.3}; FID {:.3} vs untrained {:.3} (ratio {:.3}); n-APD {:.1}±{:.1}",
        trained.seconds, held_out, rep.accuracy.mean, rep.accuracy.ci, rep.fid.mean, urep.fid.mean, ratio, rep.n_apd.mean, rep.n_apd.ci
    );
    sheet.record("end-to-end (a) classifier held-out Acc ≥ 0.95", held_out >= 0.95, format!("{held_out:.3}"));
    sheet.record(
        "end-to-end (b) generated Acc ≥ 0.85",
        rep.accuracy.mean >= 0.85,
        format!("{:.3}±{:.3}", rep.accuracy.mean, rep.accuracy.ci),
    );
    sheet.record("end-to-end (c) FID ≤ 20% of untrained", ratio <= 0.2, format!("ratio {ratio:.3}"));
    sheet.record(
        "end-to-end (d) n-APD in [60, 140]",
        (60.0..=140.0).contains(&rep.n_apd.mean),
        format!("{:.1}±{:.1}", rep.n_apd.mean, rep.n_apd.ci),
    );
    sheet.record("end-to-end training under 20 min", trained.seconds < 1200.0, detail);
    trained
}

fn mode_discovery(sheet: &mut Sheet, corpus: &Corpus, trained: &Trained) {
    let walk = corpus.manifest.categories.iter().position(|n| n == "walk").unwrap();
    let codes = trained.bank.category_codes(walk);
    let ks: Vec<usize> = (0..10).map(|s| select_k(&codes, s, &SelectKOptions::default()).unwrap().k).collect();
    let hits = ks.iter().filter(|&&k| k == 3).count();
    sheet.record("mode discovery: select_k = 3 on walk in ≥ 8/10 seeds", hits >= 8, format!("K per seed {ks:?}"));

    let groups = discovered_mode_groups(&trained.catalog, corpus).unwrap();
    let h = mode_homogeneity(&groups).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let shuffled: Vec<f64> = (0..10).map(|_| mode_homogeneity(&shuffled_groups(&groups, &mut rng)).unwrap()).collect();
    let base = shuffled.iter().sum::<f64>() / shuffled.len() as f64;
    sheet.record(
        "mode discovery: homogeneity > 0 and ≥ 5 points above shuffled",
        h > 0.0 && h - base >= 5.0,
        format!("homogeneity {h:.2}, shuffled baseline {base:.2}"),
    );
}

fn ablations(sheet: &mut Sheet, corpus: &Corpus, cls: &ActionClassifier) {
    let variants = [
        ("full", AblationFlags::default()),
        ("no-es", AblationFlags { no_es: true, ..Default::default() }),
        ("no-cons", AblationFlags { no_cons: true, ..Default::default() }),
        ("no-traj", AblationFlags { no_traj: true, ..Default::default() }),
    ];
    let proto = EvalProtocol { sets: 3, ..Default::default() };
    let cust = CustomizationProtocol { trials: 3, codes_per_category: 10, ..Default::default() };
    let mut acc = [0.0; 4];
    let mut dist = [0.0; 4];
    let mut target = 0.0;
    for &seed in &ABLATION_SEEDS {
        for (v, (name, flags)) in variants.iter().enumerate() {
            let t = fit(corpus, &recipe(ABLATION_EPOCHS, seed, *flags), seed);
            let rep = report(&t, corpus, cls, &EvalProtocol { seed, ..proto.clone() });
            let c = trajectory_customization_eval(
                &t.model,
                CodeSource::ModePreserving(&t.catalog),
                &t.bank,
                cls,
                &CustomizationProtocol { seed, ..cust.clone() },
            )
            .unwrap();
            emit(&format!(
                "  ablation {name} seed {seed}: Acc {:.3}, dist_e {:.4}, mean target distance {:.3}\n",
                rep.accuracy.mean, c.dist_e.mean, c.mean_target_distance
            ));
            acc[v] += rep.accuracy.mean / ABLATION_SEEDS.len() as f64;
            dist[v] += c.dist_e.mean / ABLATION_SEEDS.len() as f64;
            if v == 0 {
                target += c.mean_target_distance / ABLATION_SEEDS.len() as f64;
            }
        }
    }
    sheet.record("ablation: −L_es lowers generated Acc", acc[1] < acc[0], format!("full {:.3}, −L_es {:.3}", acc[0], acc[1]));
    sheet.record(
        "ablation: −L_cons and −L_traj raise dist_e",
        dist[2] > dist[0] && dist[3] > dist[0],
        format!("full {:.4}, −L_cons {:.4}, −L_traj {:.4}", dist[0], dist[2], dist[3]),
    );
    sheet.record(
        "ablation: full dist_e ≤ 10% of mean target length",
        dist[0] <= 0.1 * target,
        format!("dist_e {:.4} (RMS {:.3}) vs 0.1 × {:.3}", dist[0], dist[0].sqrt(), target),
    );
}

fn determinism(sheet: &mut Sheet, corpus: &Corpus, cls: &ActionClassifier) {
    let cfg = recipe(2, 9, AblationFlags::default());
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    let mut texts = Vec::new();
    for run in 0..2 {
        let t = fit(corpus, &cfg, 9);
        let path = dir.path().join(format!("run{run}"));
        t.model.save(&path, &Default::default()).unwrap();
        files.push(std::fs::read(path.join("params.bin")).unwrap());
        let rep = report(&t, corpus, cls, &EvalProtocol { sets: 2, per_category: 8, seed: 3 });
        let samples: Vec<u64> = mogen::metrics::MotionSource::Model {
            model: &t.model,
            codes: CodeSource::ModePreserving(&t.catalog),
            knn: &t.knn,
        }
        .draw(1, 4, &mut ChaCha8Rng::seed_from_u64(4))
        .unwrap()
        .iter()
        .flat_map(|m| m.positions().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect();
        texts.push((rep.to_csv(), samples));
    }
    sheet.record(
        "determinism: identical seeds give identical checkpoints, samples and reports",
        files[0] == files[1] && texts[0] == texts[1],
        format!("{} parameter bytes compared", files[0].len()),
    );
}

#[test]
fn primary_acceptance_criteria() {
    let mut sheet = Sheet::default();
    grad_check(&mut sheet);
    kinematics(&mut sheet);
    apd_oracle(&mut sheet);
    spring(&mut sheet);
    fid_properties(&mut sheet);
    contrastive_spots(&mut sheet);

    let corpus = Corpus::synthetic(&SyntheticSpec::default_desk(), 0).unwrap();
    let (cls, cls_report) = train_classifier(&corpus, &ClassifierConfig::default()).unwrap();
    let trained = end_to_end(&mut sheet, &corpus, &cls, cls_report.held_out_accuracy);
    mode_discovery(&mut sheet, &corpus, &trained);
    ablations(&mut sheet, &corpus, &cls);
    determinism(&mut sheet, &corpus, &cls);

    let failed: Vec<&Outcome> = sheet.rows.iter().filter(|o| !o.pass).collect();
    emit(&format!("{} of {} criteria pass\n", sheet.rows.len() - failed.len(), sheet.rows.len()));
    let unexpected: Vec<String> = failed
        .iter()
        .filter(|o| !KNOWN_SHORTFALLS.contains(&o.name))
        .map(|o| format!("{}: {}", o.name, o.detail))
        .collect();
    assert!(unexpected.is_empty(), "failed criteria: {unexpected:#?}");
}
