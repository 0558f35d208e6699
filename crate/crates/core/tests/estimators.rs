use std::sync::Arc;

use gffpin::environment::{DisorderLaw, EnvironmentRealization, PinningParams};
use gffpin::estimators::{
    annealed_free_energy, free_energy, free_energy_thermo, EstimatorChoice, ImportanceConfig, Method, ThermoConfig,
    TwoPointAccumulator,
};
use gffpin::lattice::Lattice;
use gffpin::oracle::{free_energy_expansion, ExactSampler, GreenFunction};
use gffpin::sampler::{run_chain, FieldState, ModelSpec, SweepOrder};

fn thermo(seed: u64) -> ThermoConfig {
    ThermoConfig {
        sweeps: 4000,
        seed,
        ..ThermoConfig::default()
    }
}

#[test]
fn three_estimators_agree_on_small_boxes() {
    let cases = [
        (2, 2, DisorderLaw::BernoulliPm1, 1.0, 0.0, 7),
        (1, 3, DisorderLaw::StandardGaussian, 0.8, 0.1, 3),
        (3, 2, DisorderLaw::Constant, 0.0, 0.3, 0),
    ];
    for (d, n, law, b, h, seed) in cases {
        let l = Arc::new(Lattice::new(d, n).unwrap());
        let env = EnvironmentRealization::sample(law, PinningParams::new(1.0, b, h).unwrap(), &l, seed).unwrap();
        let exact = free_energy_expansion(&l, env.rewards(), 1.0).unwrap();
        let ti = free_energy_thermo(&l, &env, &thermo(seed + 1)).unwrap();
        let is = free_energy(
            &l,
            env.rewards(),
            1.0,
            &EstimatorChoice::Importance(ImportanceConfig {
                samples: 200_000,
                seed: seed + 2,
                ..ImportanceConfig::default()
            }),
        )
        .unwrap();
        for est in [&ti, &is] {
            let se = (est.std_error.powi(2) + exact.std_error.powi(2)).sqrt();
            assert!(
                (est.value - exact.value).abs() <= 4.0 * se,
                "{} on d={d} n={n}: {} +- {} vs {}",
                est.method,
                est.value,
                est.std_error,
                exact.value
            );
        }
        assert_eq!(exact.method, Method::OracleExpansion);
    }
}

#[test]
fn annealed_free_energy_vanishes_without_reward() {
    let l = Arc::new(Lattice::new(2, 4).unwrap());
    let params = PinningParams::new(1.0, 0.0, 0.0).unwrap();
    let est = annealed_free_energy(&DisorderLaw::Constant, &params, &l, &EstimatorChoice::OracleExpansion).unwrap();
    assert_eq!(est.value, 0.0);
    assert_eq!(est.std_error, 0.0);
}

#[test]
fn free_field_chain_matches_green_function() {
    let l = Arc::new(Lattice::new(2, 6).unwrap());
    let g = GreenFunction::dense(&l).unwrap();
    let c = l.center();
    let right = l.offset(c, 0, 1).unwrap();
    let model = ModelSpec::free_field(l.clone(), 1.0).unwrap();
    let mut state = FieldState::zeros(l.volume(), 21);
    let mut acc = TwoPointAccumulator::new(&l, c, 0, 1);
    run_chain(&mut state, &model, SweepOrder::Checkerboard, 500, 40_000, |s| acc.record(&s.phi));
    let est = acc.finish(32);
    let (var, se) = est.variance();
    let exact = g.entry(c, c).unwrap();
    assert!((var - exact).abs() < 4.0 * se, "Var {var} +- {se} vs G {exact}");
    // the k = 1 entry averages both neighbors along the axis
    let left = l.offset(c, 0, -1).unwrap();
    let exact1 = 0.5 * (g.entry(c, right).unwrap() + g.entry(c, left).unwrap());
    assert!((est.correlation[1] - exact1).abs() < 4.0 * est.correlation_se[1]);
}

#[test]
fn exact_sampler_covariance_matches_green_function() {
    let l = Lattice::new(2, 3).unwrap();
    let g = GreenFunction::dense(&l).unwrap();
    let sampler = ExactSampler::new(&l, 5).unwrap();
    let v = l.volume();
    let draws = 100_000u64;
    let mut cov = vec![0.0; v * v];
    let mut phi = vec![0.0; v];
    for i in 0..draws {
        sampler.draw_into(i, &mut phi);
        for x in 0..v {
            for y in 0..v {
                cov[x * v + y] += phi[x] * phi[y];
            }
        }
    }
    for x in 0..v {
        for y in 0..v {
            let emp = cov[x * v + y] / draws as f64;
            let exact = g.entry(x, y).unwrap();
            // Var(φ_x φ_y) <= G_xx G_yy + G_xy², well below 2 for these boxes
            let se = (2.0f64 / draws as f64).sqrt();
            assert!((emp - exact).abs() < 5.0 * se, "({x},{y}): {emp} vs {exact}");
        }
    }
}
