use mogen::kinematics::{
    decompose, integrate_velocities, normalize_origin, recompose, sample_window, Motion, Trajectory,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_motion(rng: &mut impl Rng, frames: usize, joints: usize) -> Motion {
    let p = (0..frames * joints * 3).map(|_| rng.random_range(-3.0..3.0)).collect();
    Motion::new(frames, joints, rng.random_range(0..joints), p, 0).unwrap()
}

fn toy(frames: &[[f64; 6]]) -> Motion {
    Motion::new(frames.len(), 2, 0, frames.iter().flatten().copied().collect(), 1).unwrap()
}

#[test]
fn joints_on_root_give_zero_lmp() {
    let m = toy(&[[1.0, 2.0, 3.0, 1.0, 2.0, 3.0], [4.0, 5.0, 6.0, 4.0, 5.0, 6.0]]);
    let (lmp, traj) = decompose(&m);
    assert!(lmp.offsets.iter().all(|&v| v == 0.0));
    assert_eq!(traj.points, vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
}

#[test]
fn translated_static_pose_gives_constant_lmp_and_linear_track() {
    let pose = [0.0, 0.0, 0.0, 0.5, 1.0, -0.25];
    let frames: Vec<[f64; 6]> = (0..3)
        .map(|t| {
            let mut f = pose;
            f[0] += t as f64;
            f[3] += t as f64;
            f
        })
        .collect();
    let (lmp, traj) = decompose(&toy(&frames));
    for t in 0..3 {
        assert_eq!(lmp.frame(t), &[0.0, 0.0, 0.0, 0.5, 1.0, -0.25]);
        assert_eq!(traj.points[t], [t as f64, 0.0, 0.0]);
    }
}

#[test]
fn zero_lmp_rides_the_root() {
    let m = toy(&[[0.0; 6], [0.0; 6]]);
    let (lmp, _) = decompose(&m);
    let traj = Trajectory {
        points: vec![[1.0, 0.0, 0.0], [2.0, 1.0, 0.0]],
    };
    let r = recompose(&lmp, &traj, 0).unwrap();
    assert_eq!(r.joint(1, 1), [2.0, 1.0, 0.0]);
}

#[test]
fn recompose_rejects_length_mismatch() {
    let (lmp, _) = decompose(&toy(&[[0.0; 6], [0.0; 6]]));
    let traj = Trajectory {
        points: vec![[0.0; 3]],
    };
    assert!(recompose(&lmp, &traj, 0).is_err());
}

#[test]
fn round_trips_on_random_motions() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let frames = rng.random_range(1..40);
        let joints = rng.random_range(1..12);
        let m = random_motion(&mut rng, frames, joints);
        let (lmp, traj) = decompose(&m);
        let back = recompose(&lmp, &traj, m.category).unwrap();
        for (a, b) in m.positions().iter().zip(back.positions()) {
            assert!((a - b).abs() <= 1e-12);
        }
        for t in 0..frames {
            let r = m.root() * 3;
            assert_eq!(&lmp.frame(t)[r..r + 3], &[0.0; 3]);
        }
        let v = traj.velocities();
        let re = integrate_velocities(&v);
        for (a, b) in re.points.iter().zip(&traj.points) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn zero_and_constant_velocities() {
    let t = integrate_velocities(&[[0.0; 3]; 4]);
    assert!(t.points.iter().all(|p| *p == [0.0; 3]));
    let t = integrate_velocities(&[[0.0, 0.0, 1.0]; 5]);
    for (i, p) in t.points.iter().enumerate() {
        assert_eq!(*p, [0.0, 0.0, (i + 1) as f64]);
    }
    assert_eq!(t.end(), [0.0, 0.0, 5.0]);
}

#[test]
fn window_of_full_length_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = random_motion(&mut rng, 10, 3);
    for seed in 0..5 {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        assert_eq!(sample_window(&m, 10, &mut r).unwrap(), m);
    }
}

#[test]
fn short_source_is_padded_with_last_frame() {
    let m = Motion::new(3, 1, 0, vec![1.0, 0.0, 0.0, 2.0, 0.0, 0.0, 3.0, 0.0, 0.0], 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let w = sample_window(&m, 5, &mut rng).unwrap();
    let xs: Vec<f64> = (0..5).map(|t| w.joint(t, 0)[0]).collect();
    assert_eq!(xs, vec![1.0, 2.0, 3.0, 3.0, 3.0]);
    assert!(sample_window(&m, 0, &mut rng).is_err());
}

#[test]
fn window_start_is_uniform() {
    // frame t stores x = t, so the first x of a window is its start
    let frames = 14;
    let target = 5;
    let p = (0..frames).flat_map(|t| [t as f64, 0.0, 0.0]).collect();
    let m = Motion::new(frames, 1, 0, p, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cells = frames - target + 1;
    let mut counts = vec![0usize; cells];
    let draws = 10_000;
    for _ in 0..draws {
        let w = sample_window(&m, target, &mut rng).unwrap();
        counts[w.joint(0, 0)[0] as usize] += 1;
    }
    let expect = draws as f64 / cells as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
    // 9 degrees of freedom, 0.999 quantile ≈ 27.88
    assert!(chi2 < 27.88, "chi2 = {chi2}");
}

#[test]
fn normalize_origin_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let m = random_motion(&mut rng, 8, 4);
    let n = normalize_origin(&m);
    assert_eq!(n.root_position(0), [0.0; 3]);
    assert_eq!(normalize_origin(&n), n);
    let (a, _) = decompose(&m);
    let (b, _) = decompose(&n);
    for (x, y) in a.offsets.iter().zip(&b.offsets) {
        assert!((x - y).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn lmp_is_translation_invariant(seed in 0u64..1000, dx in -10.0..10.0f64, dy in -10.0..10.0f64, dz in -10.0..10.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_motion(&mut rng, 6, 5);
        let (a, _) = decompose(&m);
        let (b, _) = decompose(&m.translated([dx, dy, dz]));
        for (x, y) in a.offsets.iter().zip(&b.offsets) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn differencing_inverts_integration(seed in 0u64..1000, len in 1usize..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<[f64; 3]> = (0..len).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let back = integrate_velocities(&v).velocities();
        for (a, b) in back.iter().zip(&v) {
            for k in 0..3 {
                prop_assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
    }
}
