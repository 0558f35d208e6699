use std::sync::Arc;

use gffpin::environment::{DisorderLaw, EnvironmentRealization, PinningParams};
use gffpin::experiments::{conditional_second_moment, gap_bound_at};
use gffpin::lattice::{Lattice, Parity, BOUNDARY};
use gffpin::oracle::{rectangle_probability, GreenFunction};
use gffpin::rng::{Domain, Philox4x32};
use gffpin::sampler::{pin_probability, sweep, FieldState, ModelSpec, SweepOrder};
use gffpin::truncnorm::{sample_interval, sample_tilted_well};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn small_box() -> impl Strategy<Value = (usize, usize)> {
    prop_oneof![(1usize..=1, 1usize..40), (2usize..=2, 1usize..12), (3usize..=3, 1usize..6), (4usize..=4, 1usize..4)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encode_inverts_decode((d, n) in small_box(), pick in any::<prop::sample::Index>()) {
        let l = Lattice::new(d, n).unwrap();
        let s = pick.index(l.volume());
        let c = l.decode(s).unwrap();
        prop_assert_eq!(l.encode(&c).unwrap(), s);
    }

    #[test]
    fn neighbor_relation_is_symmetric_and_bipartite((d, n) in small_box()) {
        let l = Lattice::new(d, n).unwrap();
        let mut boundary = 0;
        for x in 0..l.volume() {
            for &y in l.neighbors(x) {
                if y == BOUNDARY {
                    boundary += 1;
                    continue;
                }
                let y = y as usize;
                prop_assert!(l.neighbors(y).contains(&(x as u32)));
                prop_assert_ne!(l.parity(x), l.parity(y));
            }
        }
        // each of the 2d faces exposes n^(d-1) slots
        prop_assert_eq!(boundary, 2 * d * n.pow(d as u32 - 1));
        let even = l.sites_of_parity(Parity::Even).len();
        let odd = l.sites_of_parity(Parity::Odd).len();
        prop_assert_eq!(even + odd, l.volume());
    }

    #[test]
    fn pin_probability_is_monotone_in_reward(m in -6.0f64..6.0, a in 0.05f64..3.0, w in -5.0f64..5.0, dw in 0.0f64..3.0) {
        let p0 = pin_probability(m, a, w);
        let p1 = pin_probability(m, a, w + dw);
        prop_assert!((0.0..=1.0).contains(&p0));
        prop_assert!(p1 >= p0 - 1e-14);
        prop_assert!((pin_probability(-m, a, w) - p0).abs() < 1e-12);
    }

    #[test]
    fn rectangle_probability_ignores_coordinate_signs(seed in any::<u64>(), k in 1usize..5, flips in any::<u8>(), a in 0.3f64..2.0) {
        // random SPD matrix B Bᵀ + I
        let mut s = Philox4x32::new(seed, Domain::ExactSampler).stream(0, 0);
        let b = DMatrix::from_fn(k, k, |_, _| s.uniform() - 0.5);
        let cov = &b * b.transpose() + DMatrix::identity(k, k);
        let sign = DMatrix::from_fn(k, k, |i, j| {
            if i != j { 0.0 } else if (flips >> i) & 1 == 1 { -1.0 } else { 1.0 }
        });
        let flipped = &sign * &cov * &sign;
        let p = rectangle_probability(&cov, a, 1e-7).unwrap();
        let q = rectangle_probability(&flipped, a, 1e-7).unwrap();
        prop_assert!((p.value - q.value).abs() < 5e-6, "{} vs {}", p.value, q.value);
        let wider = rectangle_probability(&cov, a + 0.2, 1e-7).unwrap();
        prop_assert!(wider.value >= p.value - 5e-6);
    }

    #[test]
    fn interval_draws_stay_inside(seed in any::<u64>(), m in -20.0f64..20.0, lo in -10.0f64..10.0, width in 1e-6f64..5.0) {
        let mut s = Philox4x32::new(seed, Domain::Dynamics).stream(1, 2);
        for _ in 0..16 {
            let x = sample_interval(m, lo, lo + width, &mut s);
            prop_assert!(x >= lo && x <= lo + width, "{x} outside [{lo}, {}]", lo + width);
        }
    }

    #[test]
    fn tilted_draws_are_finite(seed in any::<u64>(), m in -40.0f64..40.0, a in 1e-3f64..4.0, w in -60.0f64..60.0) {
        let mut s = Philox4x32::new(seed, Domain::Dynamics).stream(0, 0);
        for _ in 0..8 {
            prop_assert!(sample_tilted_well(m, a, w, &mut s).is_finite());
        }
    }

    #[test]
    fn sweeps_are_reproducible(seed in any::<u64>(), (d, n) in small_box()) {
        let l = Arc::new(Lattice::new(d, n).unwrap());
        let env = EnvironmentRealization::sample(DisorderLaw::BernoulliPm1, PinningParams::new(1.0, 1.0, 0.1).unwrap(), &l, seed).unwrap();
        let model = ModelSpec::new(l.clone(), &env, 1.0).unwrap();
        let mut x = FieldState::zeros(l.volume(), seed);
        let mut y = FieldState::zeros(l.volume(), seed);
        for _ in 0..3 {
            sweep(&mut x, &model, SweepOrder::Checkerboard);
            sweep(&mut y, &model, SweepOrder::Checkerboard);
        }
        prop_assert_eq!(x.phi, y.phi);
    }

    #[test]
    fn environment_text_round_trips(seed in any::<u64>(), (d, n) in small_box(), b in 0.0f64..2.0, h in -1.0f64..1.0) {
        let l = Lattice::new(d, n).unwrap();
        let env = EnvironmentRealization::sample(DisorderLaw::StandardGaussian, PinningParams::new(0.7, b, h).unwrap(), &l, seed).unwrap();
        let mut buf = Vec::new();
        env.write_text(&mut buf).unwrap();
        let back = EnvironmentRealization::read_text(buf.as_slice()).unwrap();
        prop_assert_eq!(back, env);
    }

    #[test]
    fn gap_bound_is_nonpositive_and_nonincreasing(b in 0.01f64..2.0, h in -1.0f64..1.0, l0 in 0.01f64..0.98, dl in 0.0f64..0.5) {
        let law = DisorderLaw::BernoulliPm1;
        let params = PinningParams::new(1.0, b, h).unwrap();
        let l1 = (l0 + dl).min(1.0);
        let g0 = gap_bound_at(&law, &params, l0).unwrap();
        let g1 = gap_bound_at(&law, &params, l1).unwrap();
        prop_assert!(g0 < 0.0);
        prop_assert!(g1 <= g0 + 1e-14);
    }

    #[test]
    fn conditional_second_moment_is_at_least_squared_mean(m in -8.0f64..8.0, a in 0.05f64..3.0, w in -6.0f64..6.0) {
        // E X² >= (E X)² and, with the well preferred, at most 1 + m²
        let e2 = conditional_second_moment(m, a, w);
        prop_assert!(e2 > 0.0);
        if w >= 0.0 {
            prop_assert!(e2 <= 1.0 + m * m + 1e-9);
        }
    }
}

#[test]
fn green_function_is_symmetric_and_positive() {
    let l = Lattice::new(2, 5).unwrap();
    let g = GreenFunction::dense(&l).unwrap();
    for x in 0..l.volume() {
        for y in 0..l.volume() {
            let (gxy, gyx) = (g.entry(x, y).unwrap(), g.entry(y, x).unwrap());
            assert!((gxy - gyx).abs() < 1e-13);
            assert!(gxy > 0.0);
        }
    }
}
