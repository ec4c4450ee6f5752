use std::sync::Arc;

use super::*;
use crate::numeric::{mean, mean_se};

fn scalar(b0: f64, sigma: f64, jumps: Option<JumpConfig>) -> Arc<AffineModel> {
    Arc::new(AffineModel::scalar(b0, 0.0, 0.0, sigma, 0.0, jumps).unwrap())
}

fn origin() -> InitialLaw {
    InitialLaw::Point { at: vec![0.0] }
}

fn pool(n: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap()
}

#[test]
fn frozen_paths_without_coefficients() {
    let spec = JumpDiffusionSpec::new(scalar(0.0, 0.0, None), InitialLaw::Uniform { low: vec![-1.0], high: vec![1.0] }).unwrap();
    let g = TimeGrid::new(0.0, 1.0, 20).unwrap();
    let b = simulate_jump_diffusion(&spec, 50, &g, 1).unwrap();
    assert_eq!(b.values(0), b.values(20));
    assert!(b.jump_log().is_empty());
}

#[test]
fn deterministic_drift_reaches_one() {
    let spec = JumpDiffusionSpec::new(scalar(1.0, 0.0, None), origin()).unwrap();
    let g = TimeGrid::new(0.0, 1.0, 1000).unwrap();
    let b = simulate_jump_diffusion(&spec, 10, &g, 1).unwrap();
    assert!(b.values(1000).iter().all(|x| (x - 1.0).abs() < 1e-12));
}

#[test]
fn poisson_jump_counts() {
    let n = 20_000;
    let j = AffineModel::mark_jumps(2.0, MarkLaw::Constant { value: vec![1.0] });
    let spec = JumpDiffusionSpec::new(scalar(0.0, 0.0, Some(j)), origin()).unwrap();
    let g = TimeGrid::new(0.0, 3.0, 30).unwrap();
    let b = simulate_jump_diffusion(&spec, n, &g, 11).unwrap();
    let per = b.jump_log().len() as f64 / n as f64;
    assert!((per - 6.0).abs() <= 3.0 * (6.0 / n as f64).sqrt(), "{per}");
    // unit jumps: terminal value counts the jumps
    let total: f64 = b.values(30).iter().sum();
    assert_eq!(total as usize, b.jump_log().len());
}

#[test]
fn zero_eta_matches_plain_diffusion() {
    let m = scalar(0.3, 0.7, None);
    let g = TimeGrid::new(0.0, 1.0, 50).unwrap();
    let a = simulate_jump_diffusion(&JumpDiffusionSpec::new(m.clone(), origin()).unwrap(), 100, &g, 5).unwrap();
    let s = SingularSpec::new(m, vec![1.0], EtaScenario::None, origin()).unwrap();
    let b = simulate_singular(&s, 100, &g, 5).unwrap();
    for k in 0..=50 {
        assert_eq!(a.values(k), b.values(k));
    }
}

#[test]
fn common_jump_shifts_law() {
    let s = SingularSpec::new(
        scalar(0.0, 0.0, None),
        vec![2.0],
        EtaScenario::Deterministic { jumps: vec![(0.5, vec![1.0])], rate: vec![0.0] },
        origin(),
    )
    .unwrap();
    let g = TimeGrid::with_mandatory(0.0, 1.0, 7, &s.common_times()).unwrap();
    let b = simulate_singular(&s, 30, &g, 2).unwrap();
    let k = g.node_index(0.5).unwrap();
    let before = b.marginal(k, Side::Left).unwrap().mean_and_variance().0[0];
    let after = b.marginal(k, Side::Right).unwrap().mean_and_variance().0[0];
    assert_eq!((before, after), (0.0, 2.0));
    assert_eq!(b.marginal(0, Side::Left).unwrap(), b.marginal(0, Side::Right).unwrap());
    assert!(b.marginal(99, Side::Left).is_err());
    let log = b.jump_log();
    assert_eq!(log.len(), 30);
    assert!(log.iter().all(|e| e.kind == JumpKind::Common && e.node == k && e.jump == vec![2.0]));
    for node in 0..g.nodes().len() {
        assert_eq!(b.left(node) != b.values(node), b.is_common(node));
        assert_eq!(log.iter().any(|e| e.node == node), b.is_common(node));
    }
    assert_eq!(b.eta_totals(), vec![1.0; 30]);
}

#[test]
fn idiosyncratic_eta_keeps_mean_continuous() {
    let n = 2000;
    let s = SingularSpec::new(
        scalar(0.0, 0.0, None),
        vec![1.0],
        EtaScenario::Idiosyncratic(IdiosyncraticEta::Poisson { rate: 1.0, size: vec![1.0] }),
        origin(),
    )
    .unwrap();
    let g = TimeGrid::new(0.0, 1.0, 100).unwrap();
    let b = simulate_singular(&s, n, &g, 3).unwrap();
    let means: Vec<f64> = (0..=100).map(|k| mean(b.values(k))).collect();
    let max_inc = means.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    // expected per-step increment is rate * dt = 0.01 plus binomial noise
    assert!(max_inc <= 0.01 + 4.0 * (0.01 / n as f64).sqrt() + 2.0 / n as f64, "{max_inc}");
    assert!(b.jump_log().iter().all(|e| e.kind == JumpKind::Idiosyncratic));
    assert!(b.common_nodes().is_empty());
}

#[test]
fn results_independent_of_thread_count() {
    let j = AffineModel::mark_jumps(1.5, MarkLaw::Uniform { low: vec![-1.0], high: vec![1.0] });
    let m = Arc::new(AffineModel::scalar(0.1, -0.5, 0.2, 0.4, 0.1, Some(j)).unwrap());
    let spec = JumpDiffusionSpec::new(m, InitialLaw::Normal { mean: vec![0.0], std: vec![1.0] }).unwrap();
    let g = TimeGrid::new(0.0, 1.0, 40).unwrap();
    let a = pool(1).install(|| simulate_jump_diffusion(&spec, 3000, &g, 9).unwrap());
    let b = pool(4).install(|| simulate_jump_diffusion(&spec, 3000, &g, 9).unwrap());
    let mut ba = Vec::new();
    let mut bb = Vec::new();
    a.write_binary(&mut ba).unwrap();
    b.write_binary(&mut bb).unwrap();
    assert_eq!(ba, bb);
}

#[test]
fn quadratic_variation_is_sigma_squared_t() {
    let spec = JumpDiffusionSpec::new(scalar(0.0, 0.6, None), origin()).unwrap();
    let g = TimeGrid::new(0.0, 2.0, 300).unwrap();
    let b = simulate_jump_diffusion(&spec, 5, &g, 4).unwrap();
    for i in 0..5 {
        let qv: f64 = (0..300).map(|k| b.qv(k)[i]).sum();
        assert!((qv - 0.36 * 2.0).abs() < 1e-12);
    }
}

#[test]
fn martingale_mean() {
    let spec = JumpDiffusionSpec::new(scalar(0.0, 1.0, None), InitialLaw::Normal { mean: vec![0.5], std: vec![0.2] }).unwrap();
    let g = TimeGrid::new(0.0, 1.0, 50).unwrap();
    let b = simulate_jump_diffusion(&spec, 20_000, &g, 8).unwrap();
    let diff: Vec<f64> = b.values(50).iter().zip(b.values(0)).map(|(a, c)| a - c).collect();
    let (m, se) = mean_se(&diff);
    assert!(m.abs() <= 3.0 * se);
}

#[test]
fn binary_roundtrip() {
    let s = SingularSpec::new(
        scalar(0.1, 0.3, None),
        vec![1.0],
        EtaScenario::Deterministic { jumps: vec![(0.25, vec![0.5])], rate: vec![0.0] },
        origin(),
    )
    .unwrap();
    let g = TimeGrid::with_mandatory(0.0, 1.0, 10, &s.common_times()).unwrap();
    let b = simulate_singular(&s, 7, &g, 1).unwrap();
    let mut buf = Vec::new();
    b.write_binary(&mut buf).unwrap();
    let f = BundleFile::read(&buf[..]).unwrap();
    assert_eq!(f.n, 7);
    assert_eq!(f.times, g.nodes());
    assert_eq!(&f.values[..7], b.values(0));
    assert_eq!(f.common_left.len(), 1);
    assert_eq!(f.log, b.jump_log());
    let mut csv = Vec::new();
    b.write_summary_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), g.nodes().len() + 1);
}

#[test]
fn blow_up_reports_step_and_particle() {
    let m = Arc::new(AffineModel::scalar(0.0, 1e300, 0.0, 0.0, 0.0, None).unwrap());
    let spec = JumpDiffusionSpec::new(m, InitialLaw::Point { at: vec![1e10] }).unwrap();
    let g = TimeGrid::new(0.0, 1.0, 10).unwrap();
    assert!(matches!(simulate_jump_diffusion(&spec, 3, &g, 1), Err(crate::Error::NonFiniteState { step: 0, particle: 0 })));
}

#[test]
fn replay_reproduces_stream() {
    struct Sum(f64, usize);
    impl StepObserver for Sum {
        fn begin(&mut self, _: &RunInfo, _: &[f64], v: &[f64], _: Option<CommonJump>) -> crate::Result<()> {
            self.0 += v.iter().sum::<f64>();
            Ok(())
        }
        fn step(&mut self, r: &StepRecord) -> crate::Result<()> {
            self.0 += r.end.iter().sum::<f64>() + r.qv.iter().sum::<f64>();
            self.1 += r.events.len();
            Ok(())
        }
    }
    let j = AffineModel::mark_jumps(3.0, MarkLaw::Normal { mean: vec![0.0], std: vec![1.0] });
    let spec = JumpDiffusionSpec::new(scalar(0.2, 0.5, Some(j)), origin()).unwrap();
    let g = TimeGrid::new(0.0, 1.0, 25).unwrap();
    let mut live = Sum(0.0, 0);
    run_jump_diffusion(&spec, 200, &g, 17, &mut live).unwrap();
    let b = simulate_jump_diffusion(&spec, 200, &g, 17).unwrap();
    let mut rep = Sum(0.0, 0);
    b.replay(&mut rep).unwrap();
    assert_eq!((live.0.to_bits(), live.1), (rep.0.to_bits(), rep.1));
}
