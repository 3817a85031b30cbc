use geoflow_core::epdiff::{rhs_call_count, shoot, ShootingConfig};
use geoflow_core::lddmm::{Lddmm, RegistrationProblem};
use geoflow_core::{Grid, ScalarField, VectorField};
use geoflow_gdn::checkpoint;
use geoflow_gdn::training::{
    evaluate, geodesic_loss, joint_loss, make_oracle, train, TrainOutput,
};
use geoflow_gdn::{
    Gdn, GdnError, GnoConfig, GnoInit, ModelConfig, Parameters, Schedule, TrainConfig, TrainingPair,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(seed: u64, steps: usize) -> ModelConfig {
    let mut cfg = ModelConfig::new(&[16, 16]);
    cfg.seed = seed;
    cfg.gno = GnoConfig { k_max: Some(2), ..GnoConfig::default() };
    cfg.shooting = ShootingConfig { steps, ..ShootingConfig::default() };
    cfg
}

fn disk(grid: Grid, cx: f64, cy: f64, r: f64) -> ScalarField {
    ScalarField::from_fn(grid, |x| {
        let d = ((x[0] - cx).powi(2) + (x[1] - cy).powi(2)).sqrt();
        0.5 * (1.0 - ((d - r) * 25.0).tanh())
    })
}

fn pairs(grid: Grid, n: usize, seed: u64) -> Vec<TrainingPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let (cx, cy) = (rng.gen_range(0.4..0.6), rng.gen_range(0.4..0.6));
            let r = rng.gen_range(0.15..0.25);
            TrainingPair { source: disk(grid, cx, cy, r), target: disk(grid, cx, cy, r * rng.gen_range(1.1..1.3)) }
        })
        .collect()
}

fn constant(grid: Grid, a: f64, b: f64) -> VectorField {
    VectorField::constant(grid, &[a, b]).unwrap()
}

#[test]
fn geodesic_loss_reductions() {
    let g = Grid::square(8).unwrap();
    let w: Vec<VectorField> = (0..4).map(|t| constant(g, 0.1 * t as f64, -0.2)).collect();
    assert_eq!(geodesic_loss(&w, &w[1..]).unwrap(), 0.0);
    let zeros = vec![VectorField::zeros(g); 3];
    let expect = w[1..].iter().map(|v| v.norm_sq() * g.cell_volume()).sum::<f64>() / 3.0;
    let l = geodesic_loss(&w, &zeros).unwrap();
    assert!((l - expect).abs() < 1e-15);
    let doubled: Vec<VectorField> = w.iter().map(|v| v.scaled(2.0)).collect();
    assert!((geodesic_loss(&doubled, &zeros).unwrap() - 4.0 * l).abs() < 1e-14);
    assert!(matches!(geodesic_loss(&w, &zeros[..2]), Err(GdnError::Shape(_))));
}

#[test]
fn oracle_matches_shooting_and_fixed_points() {
    let g = Grid::square(16).unwrap();
    let cfg = ShootingConfig { steps: 5, ..ShootingConfig::default() };
    let metric = cfg.multiplier(g).unwrap();
    let zero = make_oracle(&VectorField::zeros(g), &cfg, &metric).unwrap();
    assert_eq!(zero.len(), 5);
    assert!(zero.iter().all(|v| v.max_abs() == 0.0));
    let c = constant(g, 0.03, -0.01);
    for v in make_oracle(&c, &cfg, &metric).unwrap() {
        assert_eq!(v, c);
    }
    let v0 = VectorField::from_fn(g, |x| {
        [0.02 * (2.0 * std::f64::consts::PI * x[1]).sin(), 0.01 * (2.0 * std::f64::consts::PI * x[0]).cos(), 0.0]
    });
    let oracle = make_oracle(&v0, &cfg, &metric).unwrap();
    let traj = shoot(&v0, &cfg).unwrap();
    assert_eq!(oracle.as_slice(), &traj.velocities[1..]);
}

/// Model whose decoder ignores the latent and outputs the constant `c`.
fn constant_output_model(c: [f64; 2]) -> Gdn {
    let mut cfg = config(3, 4);
    cfg.gno.init_noise = 0.0;
    let mut m = Gdn::new(cfg).unwrap();
    m.params.regnet.dec2_w.fill(0.0);
    m.params.regnet.dec2_b.data_mut().copy_from_slice(&c);
    m
}

#[test]
fn zero_output_on_identical_images_gives_zero_loss() {
    let m = constant_output_model([0.0, 0.0]);
    let s = disk(*m.grid(), 0.5, 0.5, 0.2);
    let batch = vec![TrainingPair { source: s.clone(), target: s }];
    let out = joint_loss(&m, &batch, &TrainConfig::default(), None).unwrap();
    assert_eq!(out.terms.total(), 0.0);
}

#[test]
fn registration_only_loss_matches_lddmm_energy() {
    let c = [0.04, -0.025];
    let m = constant_output_model(c);
    let grid = *m.grid();
    let (s, t) = (disk(grid, 0.5, 0.5, 0.2), disk(grid, 0.52, 0.47, 0.22));
    let cfg = TrainConfig { eta: 0.0, lambda: 0.7, ..TrainConfig::default() };
    let out = joint_loss(&m, &[TrainingPair { source: s.clone(), target: t.clone() }], &cfg, None).unwrap();
    assert_eq!(out.terms.geodesic, 0.0);
    let prob = RegistrationProblem::new(s, t, 0.7, m.config().shooting).unwrap();
    let terms = Lddmm::new(prob).unwrap().terms(&constant(grid, c[0], c[1])).unwrap();
    assert!((out.terms.regularity - 0.5 * terms.regularity).abs() < 1e-14 * terms.regularity);
    assert!((out.terms.matching - terms.matching).abs() < 1e-12 * terms.matching);
}

#[test]
fn predict_never_evaluates_epdiff() {
    let m = Gdn::new(config(5, 6)).unwrap();
    let p = &pairs(*m.grid(), 1, 5)[0];
    let before = rhs_call_count();
    let pred = m.predict(&p.source, &p.target).unwrap();
    assert_eq!(rhs_call_count(), before);
    assert_eq!(pred.trajectory.velocities.len(), 7);
    assert_eq!(pred.trajectory.transforms.len(), 7);
    assert_eq!(pred.latents.len(), 7);
    assert!(pred.trajectory.transforms[0].is_identity());
}

#[test]
fn predict_rejects_other_grids() {
    let m = Gdn::new(config(5, 2)).unwrap();
    let s = ScalarField::zeros(Grid::square(32).unwrap());
    assert!(m.predict(&s, &s).is_err());
}

#[test]
fn one_epoch_smoke_writes_one_csv_row_and_checkpoints() {
    let mut m = Gdn::new(config(7, 3)).unwrap();
    let data = pairs(*m.grid(), 4, 7);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { epochs: 1, batch_size: 2, ..TrainConfig::default() };
    let report = train(&mut m, &data, &[], &cfg, &TrainOutput { dir: Some(dir.path().to_path_buf()) }).unwrap();
    assert_eq!(report.history.len(), 1);
    let csv = std::fs::read_to_string(dir.path().join("loss.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,match,reg,geodesic,total");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("1,"));
    let best = checkpoint::load(&dir.path().join("best.gckp")).unwrap();
    assert_eq!(best.params, report.best_params);
    assert!(dir.path().join("last.gckp").is_file());
}

#[test]
fn training_is_reproducible_and_reduces_loss() {
    let run = || {
        let mut m = Gdn::new(config(8, 3)).unwrap();
        let data = pairs(*m.grid(), 6, 8);
        let cfg = TrainConfig { epochs: 8, batch_size: 2, seed: 8, ..TrainConfig::default() };
        (train(&mut m, &data, &data[..2], &cfg, &TrainOutput::default()).unwrap(), m)
    };
    let (a, ma) = run();
    let (b, mb) = run();
    assert_eq!(a.history[0].train.total().to_bits(), b.history[0].train.total().to_bits());
    assert_eq!(ma.params, mb.params);
    let first = a.history[0].train.total();
    let last = a.history.last().unwrap().train.total();
    assert!(last < first, "{first} -> {last}");
    let best_val = a.history.iter().map(|h| h.validation.unwrap().total()).fold(f64::INFINITY, f64::min);
    assert_eq!(a.history[a.best_epoch - 1].validation.unwrap().total(), best_val);
}

#[test]
fn alternating_schedule_freezes_one_group_per_phase() {
    let mut m = Gdn::new(config(9, 2)).unwrap();
    let start = m.params.clone();
    let data = pairs(*m.grid(), 2, 9);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 2,
        schedule: Schedule::Alternating { period: 1 },
        ..TrainConfig::default()
    };
    train(&mut m, &data, &[], &cfg, &TrainOutput::default()).unwrap();
    assert_ne!(m.params.regnet, start.regnet);
    assert_eq!(m.params.gno, start.gno);
    let after_first = m.params.clone();
    let cfg2 = TrainConfig { epochs: 2, ..cfg };
    let mut m2 = Gdn::from_params(m.config().clone(), start).unwrap();
    train(&mut m2, &data, &[], &cfg2, &TrainOutput::default()).unwrap();
    assert_eq!(m2.params.regnet, after_first.regnet);
    assert_ne!(m2.params.gno, after_first.gno);
}

#[test]
fn non_finite_loss_aborts_with_diagnostics() {
    let mut m = constant_output_model([0.0, 0.0]);
    let mut data = pairs(*m.grid(), 2, 10);
    data[1].source.values_mut().iter_mut().for_each(|x| *x *= 1e200);
    let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
    let err = train(&mut m, &data, &[], &cfg, &TrainOutput::default()).unwrap_err();
    assert!(matches!(err, GdnError::NonFiniteLoss { epoch: 1, .. }), "{err}");
}

#[test]
fn empty_inputs_are_rejected() {
    let mut m = Gdn::new(config(11, 2)).unwrap();
    assert!(matches!(
        train(&mut m, &[], &[], &TrainConfig::default(), &TrainOutput::default()),
        Err(GdnError::EmptyDataset(_))
    ));
    assert!(joint_loss(&m, &[], &TrainConfig::default(), None).is_err());
    let bad = TrainConfig { lambda: 0.0, ..TrainConfig::default() };
    assert!(matches!(bad.validate(), Err(GdnError::Config(_))));
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let mut cfg = config(12, 3);
    cfg.gno.init = GnoInit::Random;
    let m = Gdn::new(cfg).unwrap();
    let bytes = checkpoint::encode(m.config(), &m.params).unwrap();
    let back = checkpoint::decode(&bytes).unwrap();
    assert_eq!(back.params, m.params);
    assert_eq!(back.config(), m.config());

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(checkpoint::decode(&bad), Err(GdnError::Checkpoint(_))));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(checkpoint::decode(&bad), Err(GdnError::Checkpoint(_))));
    assert!(matches!(checkpoint::decode(&bytes[..bytes.len() - 3]), Err(GdnError::Checkpoint(_))));
    let mut long = bytes.clone();
    long.push(0);
    assert!(checkpoint::decode(&long).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.gckp");
    checkpoint::save(&path, m.config(), &m.params).unwrap();
    let loaded = checkpoint::load(&path).unwrap();
    let p = &pairs(*m.grid(), 1, 12)[0];
    let a = m.predict(&p.source, &p.target).unwrap();
    let b = loaded.predict(&p.source, &p.target).unwrap();
    assert_eq!(a.deformed, b.deformed);
}

#[test]
fn evaluation_is_deterministic_and_nonnegative() {
    let m = Gdn::new(config(13, 3)).unwrap();
    let data = pairs(*m.grid(), 3, 13);
    let a = evaluate(&m, &data, &TrainConfig::default()).unwrap();
    let b = evaluate(&m, &data, &TrainConfig::default()).unwrap();
    assert_eq!(a, b);
    assert!(a.matching >= 0.0 && a.regularity >= 0.0 && a.geodesic >= 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn joint_loss_is_nonnegative(seed in 0u64..1000, scale in 0.0f64..0.5) {
        let mut cfg = config(seed, 2);
        cfg.regnet.output_init_scale = scale;
        cfg.gno.init = GnoInit::Random;
        let m = Gdn::new(cfg).unwrap();
        let data = pairs(*m.grid(), 1, seed);
        let out = joint_loss(&m, &data, &TrainConfig::default(), None).unwrap();
        if out.used == 1 {
            prop_assert!(out.terms.matching >= 0.0);
            prop_assert!(out.terms.regularity >= 0.0);
            prop_assert!(out.terms.geodesic >= 0.0);
        }
    }

    #[test]
    fn geodesic_loss_is_quadratically_homogeneous(a in -3.0f64..3.0, vals in proptest::collection::vec(-1.0f64..1.0, 2 * 64 * 3)) {
        let g = Grid::square(8).unwrap();
        let pred: Vec<VectorField> = std::iter::once(VectorField::zeros(g))
            .chain(vals.chunks(128).map(|c| VectorField::new(g, c.to_vec()).unwrap()))
            .collect();
        let zeros = vec![VectorField::zeros(g); 3];
        let base = geodesic_loss(&pred, &zeros).unwrap();
        let scaled: Vec<VectorField> = pred.iter().map(|v| v.scaled(a)).collect();
        let s = geodesic_loss(&scaled, &zeros).unwrap();
        prop_assert!((s - a * a * base).abs() <= 1e-12 * (1.0 + base));
    }

    #[test]
    fn checkpoint_round_trips_any_weights(seed in 0u64..10_000) {
        let mut cfg = config(seed, 2);
        cfg.gno.init = GnoInit::Random;
        let m = Gdn::new(cfg).unwrap();
        let back = checkpoint::decode(&checkpoint::encode(m.config(), &m.params).unwrap()).unwrap();
        prop_assert_eq!(back.params.flatten(), m.params.flatten());
    }
}
