use mogen::kinematics::{decompose, Motion};
use mogen::model::{GenRequest, LatentCode, ModelConfig, MotionModel};
use mogen::Error;
use mogen_tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn tiny() -> MotionModel {
    MotionModel::new(ModelConfig::tiny(), 7).unwrap()
}

fn code(d: usize, seed: u64) -> LatentCode {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LatentCode((0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
}

fn random_motion(c: &ModelConfig, seed: u64) -> Motion {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = (0..c.frames * c.pose_dim())
        .map(|_| {
            let e: f64 = StandardNormal.sample(&mut rng);
            0.2 * e
        })
        .collect();
    Motion::new(c.frames, c.joints, c.root, p, 0).unwrap()
}

#[test]
fn generation_shapes() {
    let m = tiny();
    let c = &m.config;
    let g = m.generate(1, &code(c.latent, 0), Some([0.5, 0.0, 0.2])).unwrap();
    assert_eq!(g.motion.frames(), c.frames);
    assert_eq!(g.motion.joints(), c.joints);
    assert_eq!(g.motion.category, 1);
    assert_eq!(g.trajectory.len(), c.frames);
    assert_eq!(g.velocities.len(), c.frames);
    // generated motions start with the root at the origin
    assert_eq!(g.motion.root_position(0), [0.0; 3]);
    assert!(g.motion.positions().iter().all(|v| v.is_finite()));
}

#[test]
fn batch_matches_single_generation() {
    let m = tiny();
    let d = m.config.latent;
    let reqs: Vec<GenRequest> = (0..3)
        .map(|i| GenRequest {
            category: i % 2,
            code: code(d, i as u64),
            endpoint: Some([i as f64 * 0.1, 0.0, 0.3]),
        })
        .collect();
    let batch = m.generate_batch(&reqs).unwrap();
    for (r, g) in reqs.iter().zip(&batch) {
        let single = m.generate(r.category, &r.code, r.endpoint).unwrap();
        for (a, b) in single.motion.positions().iter().zip(g.motion.positions()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    assert!(m.generate_batch(&[]).unwrap().is_empty());
}

#[test]
fn initialization_and_generation_are_deterministic() {
    let a = tiny();
    let b = tiny();
    for (pa, pb) in a.store.iter().zip(b.store.iter()) {
        assert_eq!(pa.value, pb.value);
    }
    let z = code(a.config.latent, 3);
    assert_eq!(
        a.generate(0, &z, Some([1.0, 0.0, 0.0])).unwrap(),
        b.generate(0, &z, Some([1.0, 0.0, 0.0])).unwrap()
    );
    let c = MotionModel::new(ModelConfig::tiny(), 8).unwrap();
    assert_ne!(a.store.iter().next().unwrap().value, c.store.iter().next().unwrap().value);
}

#[test]
fn zeroed_velocity_head_keeps_trajectory_at_origin() {
    let mut m = tiny();
    for name in ["traj.out.w", "traj.out.b"] {
        let id = m.store.find(name).unwrap();
        let shape = m.store.value(id).shape().to_vec();
        m.store.set_value(id, Tensor::zeros(&shape)).unwrap();
    }
    let (v, traj) = m.gen_trajectory(0, &code(m.config.latent, 1), Some([2.0, 0.0, 1.0])).unwrap();
    assert!(v.iter().flatten().all(|&x| x == 0.0));
    assert!(traj.points.iter().flatten().all(|&x| x == 0.0));
}

#[test]
fn endpoint_conditioning_is_enforced() {
    let m = tiny();
    let z = code(m.config.latent, 0);
    assert!(matches!(m.generate(0, &z, None), Err(Error::EndpointRequired)));
    let cfg = ModelConfig {
        endpoint_conditioning: false,
        ..ModelConfig::tiny()
    };
    let free = MotionModel::new(cfg, 0).unwrap();
    assert!(matches!(free.generate(0, &z, Some([0.0; 3])), Err(Error::EndpointUnsupported)));
    free.generate(0, &z, None).unwrap();
    // mixed batches are rejected as a whole
    let reqs = vec![
        GenRequest {
            category: 0,
            code: z.clone(),
            endpoint: Some([0.0; 3]),
        },
        GenRequest {
            category: 0,
            code: z.clone(),
            endpoint: None,
        },
    ];
    assert!(matches!(m.generate_batch(&reqs), Err(Error::EndpointRequired)));
}

#[test]
fn bad_requests_are_rejected() {
    let m = tiny();
    let z = code(m.config.latent, 0);
    assert!(matches!(m.generate(5, &z, Some([0.0; 3])), Err(Error::Unknown { .. })));
    assert!(matches!(
        m.generate(0, &LatentCode(vec![0.0; 2]), Some([0.0; 3])),
        Err(Error::Shape(_))
    ));
    let mut nan = z.clone();
    nan.0[0] = f64::NAN;
    assert!(m.generate(0, &nan, Some([0.0; 3])).is_err());
}

#[test]
fn encoder_outputs_positive_variances() {
    let m = tiny();
    let (lmp, _) = decompose(&random_motion(&m.config, 1));
    let p = m.encode(&lmp).unwrap();
    assert_eq!(p.mean.len(), m.config.latent);
    assert!(p.var.iter().all(|v| *v > 0.0 && v.is_finite()));
    let wrong = Motion::new(3, 4, 0, vec![0.0; 36], 0).unwrap();
    assert!(matches!(m.encode(&decompose(&wrong).0), Err(Error::Shape(_))));
}

#[test]
fn full_teacher_forcing_never_reads_the_last_true_frame() {
    let m = tiny();
    let c = &m.config;
    let z = code(c.latent, 2);
    let (_, traj) = m.gen_trajectory(0, &z, Some([0.0; 3])).unwrap();
    let t1 = random_motion(c, 4);
    let mut p = t1.positions().to_vec();
    let last = p.len() - 1;
    p[last] += 1.0;
    let t2 = Motion::new(c.frames, c.joints, c.root, p, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = m.gen_motion(0, &z, &traj, Some(&t1), 1.0, &mut rng).unwrap();
    let b = m.gen_motion(0, &z, &traj, Some(&t2), 1.0, &mut rng).unwrap();
    assert_eq!(a, b);
    // but a change in frame 0 propagates
    let mut p = t1.positions().to_vec();
    p[0] += 1.0;
    let t3 = Motion::new(c.frames, c.joints, c.root, p, 0).unwrap();
    let d = m.gen_motion(0, &z, &traj, Some(&t3), 1.0, &mut rng).unwrap();
    assert_ne!(a, d);
    assert!(m.gen_motion(0, &z, &traj, Some(&t1), 1.5, &mut rng).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let m = tiny();
    let dir = tempfile::tempdir().unwrap();
    let meta = mogen::model::CheckpointMeta {
        step: 42,
        rng: Some((3, 1234)),
    };
    m.save(dir.path(), &meta).unwrap();
    let (back, meta2) = MotionModel::load(dir.path()).unwrap();
    assert_eq!(meta2, meta);
    assert_eq!(back.config, m.config);
    for (a, b) in m.store.iter().zip(back.store.iter()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.value, b.value);
    }
    let z = code(m.config.latent, 1);
    assert_eq!(
        m.generate(1, &z, Some([0.1; 3])).unwrap(),
        back.generate(1, &z, Some([0.1; 3])).unwrap()
    );
    // cloning keeps parameters
    assert_eq!(
        m.clone().generate(1, &z, Some([0.1; 3])).unwrap(),
        m.generate(1, &z, Some([0.1; 3])).unwrap()
    );
}

#[test]
fn checkpoint_corruption_and_mismatch_are_detected() {
    let m = tiny();
    let dir = tempfile::tempdir().unwrap();
    m.save(dir.path(), &Default::default()).unwrap();
    let other = ModelConfig {
        latent: 5,
        ..ModelConfig::tiny()
    };
    assert!(matches!(MotionModel::load_expecting(dir.path(), &other), Err(Error::Shape(_))));
    MotionModel::load_expecting(dir.path(), &ModelConfig::tiny()).unwrap();

    let bin = dir.path().join("params.bin");
    let mut bytes = std::fs::read(&bin).unwrap();
    bytes[10] ^= 0x40;
    std::fs::write(&bin, &bytes).unwrap();
    assert!(matches!(MotionModel::load(dir.path()), Err(Error::Checksum { .. })));

    let man = dir.path().join("model.txt");
    let text = std::fs::read_to_string(&man).unwrap().replace("version=1", "version=9");
    std::fs::write(&man, text).unwrap();
    assert!(matches!(MotionModel::load(dir.path()), Err(Error::Version { .. })));
}

#[test]
fn config_validation() {
    let mut c = ModelConfig::tiny();
    c.root = 4;
    assert!(matches!(MotionModel::new(c, 0), Err(Error::Config(_))));
    let mut c = ModelConfig::tiny();
    c.latent = 0;
    assert!(MotionModel::new(c, 0).is_err());
}
