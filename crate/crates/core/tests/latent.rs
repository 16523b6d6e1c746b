use mogen::latent::*;
use mogen::model::LatentCode;
use mogen::Error;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// `per` points around each center with isotropic noise `sd`.
fn blobs(centers: &[Vec<f64>], per: usize, sd: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::new();
    let mut labels = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per {
            pts.push(
                center
                    .iter()
                    .map(|m| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        m + sd * e
                    })
                    .collect(),
            );
            labels.push(c);
        }
    }
    (pts, labels)
}

fn three_centers() -> Vec<Vec<f64>> {
    vec![vec![0.0, 0.0, 0.0, 0.0], vec![4.0, 0.0, 0.0, 0.0], vec![0.0, 4.0, 0.0, 0.0]]
}

/// Same partition up to relabeling.
fn same_partition(a: &[usize], b: &[usize]) -> bool {
    let mut map = std::collections::HashMap::new();
    a.iter().zip(b).all(|(x, y)| *map.entry(*x).or_insert(*y) == *y)
        && map.values().collect::<std::collections::HashSet<_>>().len() == map.len()
}

#[test]
fn silhouette_hand_example() {
    let pts = vec![vec![0.0], vec![1.0], vec![10.0], vec![11.0]];
    let s = silhouette(&pts, &[0, 0, 1, 1]).unwrap();
    let expect = (2.0 * (1.0 - 1.0 / 10.5) + 2.0 * (1.0 - 1.0 / 9.5)) / 4.0;
    assert!((s - expect).abs() < 1e-12, "{s} vs {expect}");
}

#[test]
fn silhouette_edge_cases() {
    let pts = vec![vec![0.0], vec![1.0], vec![5.0]];
    // singleton cluster contributes 0
    let s = silhouette(&pts, &[0, 0, 1]).unwrap();
    let expect = ((1.0 - 1.0 / 5.0) + (1.0 - 1.0 / 4.0)) / 3.0;
    assert!((s - expect).abs() < 1e-12);
    assert_eq!(silhouette(&pts, &[2, 2, 2]).unwrap(), 0.0);
    assert!(silhouette(&pts, &[0, 1]).is_err());
}

#[test]
fn choose_k_rule() {
    assert_eq!(choose_k(&[(3, 0.5), (4, 0.6), (5, 0.4)], 0.95), Some(4));
    assert_eq!(choose_k(&[(3, 0.7), (4, 0.6)], 0.95), Some(3));
    // 0.5 > 0.95 · 0.52 already stops at K=3
    assert_eq!(choose_k(&[(3, 0.5), (4, 0.52), (5, 0.6)], 0.95), Some(3));
    // strictly improving scores fall back to the argmax
    assert_eq!(choose_k(&[(3, 0.4), (4, 0.52), (5, 0.6)], 0.95), Some(5));
    assert_eq!(choose_k(&[(3, 0.0), (4, 0.0)], 0.95), Some(3));
    assert_eq!(choose_k(&[], 0.95), None);
}

#[test]
fn em_log_likelihood_is_monotone() {
    let (pts, _) = blobs(&three_centers(), 30, 0.7, 1);
    for k in 2..=5 {
        let m = fit_gmm(&pts, k, 3).unwrap();
        assert!(m.log_likelihoods.len() >= 2);
        for w in m.log_likelihoods.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), "k={k}: {} then {}", w[0], w[1]);
        }
        let total: f64 = m.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn gmm_recovers_separated_blobs() {
    let (pts, labels) = blobs(&three_centers(), 40, 0.3, 2);
    let m = fit_gmm(&pts, 3, 0).unwrap();
    assert!(same_partition(&m.assignment, &labels));
    let r = m.responsibilities(&pts[0]);
    assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn fit_is_deterministic_per_seed() {
    let (pts, _) = blobs(&three_centers(), 30, 0.8, 4);
    assert_eq!(fit_gmm(&pts, 4, 9).unwrap(), fit_gmm(&pts, 4, 9).unwrap());
}

#[test]
fn select_k_finds_three_planted_modes() {
    let (pts, labels) = blobs(&three_centers(), 40, 0.4, 5);
    for seed in 0..5 {
        let sel = select_k(&pts, seed, &SelectKOptions::default()).unwrap();
        assert_eq!(sel.k, 3, "seed {seed}: scores {:?}", sel.scores);
        assert_eq!(sel.scores.first().unwrap().0, 3);
        assert_eq!(sel.scores.last().unwrap().0, 11);
        assert!(sel.dropped.is_empty());
        assert!(same_partition(&sel.model.assignment, &labels));
    }
}

#[test]
fn select_k_caps_search_by_point_count() {
    let (pts, _) = blobs(&three_centers(), 2, 0.4, 6);
    let sel = select_k(&pts, 0, &SelectKOptions { min_members: 1, ..Default::default() }).unwrap();
    assert_eq!(sel.scores.last().unwrap().0, 5);
    let err = select_k(&pts[..3], 0, &SelectKOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Data(_)));
}

#[test]
fn prune_drops_small_components_and_renormalizes() {
    let centers = vec![vec![0.0, 0.0], vec![6.0, 0.0], vec![0.0, 6.0]];
    let (mut pts, _) = blobs(&centers[..2], 30, 0.3, 7);
    let (few, _) = blobs(&centers[2..], 4, 0.3, 8);
    pts.extend(few);
    let full = fit_gmm(&pts, 3, 0).unwrap();
    let (model, dropped) = prune(&pts, &full, 10).unwrap();
    assert_eq!(model.k(), 2);
    assert_eq!(dropped.len(), 1);
    assert_eq!(dropped[0].1, 4);
    assert!((model.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(model.assignment.len(), pts.len());
    assert!(model.assignment.iter().all(|&a| a < 2));
    // nothing qualifies: the largest component survives alone
    let (model, dropped) = prune(&pts, &full, 1000).unwrap();
    assert_eq!(model.k(), 1);
    assert_eq!(dropped.len(), 2);
    assert_eq!(model.weights, vec![1.0]);
}

#[test]
fn near_identical_codes_do_not_panic() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pts: Vec<Vec<f64>> = (0..40)
        .map(|_| {
            (0..3)
                .map(|_| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    1.0 + 1e-9 * e
                })
                .collect()
        })
        .collect();
    let sel = select_k(&pts, 0, &SelectKOptions::default()).unwrap();
    assert!(sel.model.k() >= 1);
    assert_eq!(sel.model.assignment.len(), pts.len());
}

#[test]
fn identical_codes_fall_back_to_one_gaussian() {
    let pts = vec![vec![0.5, -1.0, 2.0]; 30];
    let sel = select_k(&pts, 3, &SelectKOptions::default()).unwrap();
    assert_eq!((sel.k, sel.model.k()), (1, 1));
    assert!(sel.scores.iter().all(|&(_, s)| s == -1.0));
    assert_eq!(sel.model.weights, vec![1.0]);
    assert!(sel.model.assignment.iter().all(|&a| a == 0));
}

#[test]
fn gaussian_fit_and_sampling_moments() {
    let mean = DVector::from_vec(vec![1.0, -2.0]);
    let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 0.5]);
    let g = Gaussian::new(mean.clone(), cov.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let draws: Vec<Vec<f64>> = (0..20000).map(|_| g.sample(&mut rng)).collect();
    let fit = Gaussian::fit(&draws).unwrap();
    assert!((fit.mean.clone() - mean).amax() < 0.05);
    assert!((fit.cov.clone() - cov).amax() < 0.06);
    // the log density integrates the stated normalizer
    let at_mean = g.log_pdf(&[1.0, -2.0]);
    let det: f64 = 2.0 * 0.5 - 0.36;
    let expect = -(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln();
    assert!((at_mean - expect).abs() < 1e-9);
}

fn toy_bank() -> CodeBank {
    let (mut codes, mut modes) = blobs(&three_centers(), 20, 0.3, 12);
    let (b, bm) = blobs(&[vec![10.0, 10.0, 0.0, 0.0], vec![14.0, 10.0, 0.0, 0.0]], 20, 0.3, 13);
    codes.extend(b);
    modes.extend(bm);
    let categories: Vec<usize> = (0..codes.len()).map(|i| usize::from(i >= 60)).collect();
    let end_points = codes.iter().map(|c| [c[0], 0.0, c[1]]).collect();
    CodeBank::new(codes, categories, end_points, modes.into_iter().map(Some).collect()).unwrap()
}

fn names() -> Vec<String> {
    vec!["a".into(), "b".into()]
}

#[test]
fn code_bank_validation_and_round_trip() {
    let bank = toy_bank();
    assert_eq!(bank.num_categories(), 2);
    assert_eq!(bank.indices(1).len(), 40);
    let dir = tempfile::tempdir().unwrap();
    bank.save(dir.path(), "bank").unwrap();
    assert_eq!(CodeBank::load(dir.path(), "bank").unwrap(), bank);
    assert!(CodeBank::new(vec![vec![0.0]], vec![], vec![], vec![]).is_err());
    assert!(CodeBank::new(vec![vec![f64::NAN]], vec![0], vec![[0.0; 3]], vec![None]).is_err());
}

#[test]
fn catalog_discovery_and_round_trip() {
    let bank = toy_bank();
    let opts = SelectKOptions {
        min_members: 5,
        ..Default::default()
    };
    let cat = ModeCatalog::discover(&bank, &names(), 0, &opts).unwrap();
    assert_eq!(cat.categories[0].modes(), 3);
    assert_eq!(cat.category_index("b"), Some(1));
    let w = cat.categories[0].membership_weights();
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let dir = tempfile::tempdir().unwrap();
    cat.save(dir.path()).unwrap();
    let back = ModeCatalog::load(dir.path()).unwrap();
    assert_eq!(back, cat);
}

#[test]
fn catalog_rejects_tampering() {
    let bank = toy_bank();
    let cat = ModeCatalog::discover(&bank, &names(), 0, &SelectKOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    cat.save(dir.path()).unwrap();
    let bin = dir.path().join("catalog.bin");
    let mut bytes = std::fs::read(&bin).unwrap();
    bytes[3] ^= 1;
    std::fs::write(&bin, bytes).unwrap();
    assert!(matches!(ModeCatalog::load(dir.path()), Err(Error::Checksum { .. })));
}

#[test]
fn mode_preserving_sampling_follows_membership() {
    let bank = toy_bank();
    let opts = SelectKOptions {
        min_members: 5,
        ..Default::default()
    };
    let cat = ModeCatalog::discover(&bank, &names(), 0, &opts).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 6000;
    let mut counts = [0usize; 3];
    for _ in 0..n {
        let (k, code) = sample_mode_preserving(&cat, 0, None, &mut rng).unwrap();
        assert_eq!(code.dim(), 4);
        counts[k] += 1;
    }
    // chi-square against the membership weights, 2 dof, p ≈ 0.001
    let w = cat.categories[0].membership_weights();
    let chi: f64 = counts
        .iter()
        .zip(&w)
        .map(|(&c, &p)| (c as f64 - n as f64 * p).powi(2) / (n as f64 * p))
        .sum();
    assert!(chi < 13.8, "chi² {chi}");
    // weight override pins one mode
    for _ in 0..50 {
        let (k, _) = sample_mode_preserving(&cat, 0, Some(&[0.0, 1.0, 0.0]), &mut rng).unwrap();
        assert_eq!(k, 1);
    }
    assert!(matches!(
        sample_mode_preserving(&cat, 0, Some(&[1.0]), &mut rng),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        sample_mode_preserving(&cat, 7, None, &mut rng),
        Err(Error::Unknown { .. })
    ));
    assert!(sample_mode(&cat, 0, 9, &mut rng).is_err());
}

#[test]
fn conventional_sampler_matches_category_moments() {
    let bank = toy_bank();
    let s = ConventionalSampler::fit(&bank).unwrap();
    assert_eq!(s.gaussians.len(), 2);
    let direct = Gaussian::fit(&bank.category_codes(1)).unwrap();
    assert_eq!(s.gaussians[1], direct);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut a = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(s.sample(1, &mut rng).unwrap(), sample_conventional(&bank, 1, &mut a).unwrap());
}

#[test]
fn interpolation_endpoints_and_linearity() {
    let a = LatentCode(vec![0.0, 2.0]);
    let b = LatentCode(vec![1.0, -2.0]);
    let path = interpolate(&a, &b, 5).unwrap();
    assert_eq!(path.len(), 5);
    assert_eq!(path[0], a);
    assert_eq!(path[4], b);
    assert_eq!(path[2], LatentCode(vec![0.5, 0.0]));
    assert!(interpolate(&a, &b, 1).is_err());
    assert!(interpolate(&a, &LatentCode(vec![0.0]), 3).is_err());
}

#[test]
fn knn_regression() {
    let bank = toy_bank();
    let knn = KnnEndpointModel::new(&bank, KNN_K).unwrap();
    // a query on a stored code is dominated by that code's end point
    let i = 7;
    let e = knn.predict(&LatentCode(bank.codes[i].clone()), 0).unwrap();
    for k in 0..3 {
        assert!((e[k] - bank.end_points[i][k]).abs() < 1e-6);
    }
    // with k = all and an equidistant query the prediction is the plain mean
    let codes = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
    let b2 = CodeBank::new(codes, vec![0, 0], vec![[2.0, 0.0, 0.0], [0.0, 0.0, 4.0]], vec![None, None]).unwrap();
    let knn = KnnEndpointModel::new(&b2, 5).unwrap();
    let e = knn.predict(&LatentCode(vec![0.0, 3.0]), 0).unwrap();
    assert!((e[0] - 1.0).abs() < 1e-12 && (e[2] - 2.0).abs() < 1e-12);
    assert!(knn.predict(&LatentCode(vec![0.0, 0.0]), 1).is_err());
    assert!(KnnEndpointModel::new(&b2, 0).is_err());
}

#[test]
fn pca_axes_projection_and_lift() {
    // variance mostly along (1, 1, 0)/√2, then along z
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pts: Vec<Vec<f64>> = (0..500)
        .map(|_| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            let c: f64 = StandardNormal.sample(&mut rng);
            vec![3.0 * a + 0.01 * c + 1.0, 3.0 * a - 0.01 * c, 1.5 * b]
        })
        .collect();
    let (proj, pca) = pca_project(&pts).unwrap();
    assert_eq!(proj.len(), pts.len());
    let s = std::f64::consts::FRAC_1_SQRT_2;
    assert!((pca.basis[0][0] - s).abs() < 1e-3 && (pca.basis[0][1] - s).abs() < 1e-3);
    assert!((pca.basis[1][2] - 1.0).abs() < 1e-3);
    assert!(pca.explained[0] > pca.explained[1]);
    assert!(pca.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    // on-plane points survive project ∘ lift
    let p = [0.7, -1.2];
    let back = pca.project(&pca.lift(p).0);
    assert!((back[0] - p[0]).abs() < 1e-12 && (back[1] - p[1]).abs() < 1e-12);
    // the sign convention makes the fit independent of point order
    let mut rev = pts.clone();
    rev.reverse();
    let pca2 = Pca::fit(&rev).unwrap();
    for k in 0..3 {
        assert!((pca.basis[0][k] - pca2.basis[0][k]).abs() < 1e-9);
    }
    assert!(Pca::fit(&pts[..1]).is_err());
}

#[test]
fn ellipse_axes() {
    let (a, b, angle) = ellipse([[4.0, 0.0], [0.0, 1.0]], 2.0);
    assert!((a - 4.0).abs() < 1e-12 && (b - 2.0).abs() < 1e-12 && angle.abs() < 1e-12);
    let (a, b, angle) = ellipse([[1.0, 0.0], [0.0, 9.0]], 1.0);
    assert!((a - 3.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12);
    assert!((angle.abs() - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
}
