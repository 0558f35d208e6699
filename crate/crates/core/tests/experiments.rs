//! Small, fast runs of every experiment driver.

use gffpin::environment::{DisorderLaw, PinningParams};
use gffpin::estimators::ThermoConfig;
use gffpin::experiments::*;

fn quick() -> ThermoConfig {
    ThermoConfig {
        nodes: 8,
        sweeps: 400,
        max_sweeps: 800,
        ..ThermoConfig::default()
    }
}

#[test]
fn gap_without_disorder_is_zero_within_noise() {
    let cfg = GapConfig {
        d: 2,
        sizes: vec![4],
        law: DisorderLaw::BernoulliPm1,
        params: PinningParams::new(1.0, 0.0, 0.2).unwrap(),
        replicates: 4,
        thermo: quick(),
        ..GapConfig::default()
    };
    let r = run_gap_experiment(&cfg).unwrap();
    let c = r.check("gap_zero_without_disorder").expect("check present");
    assert!(c.passed(), "{}", c.detail);
    assert_eq!(r.fits["bound"], 0.0);
    assert_eq!(r.rows.len(), 5);
}

#[test]
fn gap_report_has_bound_and_series() {
    let cfg = GapConfig {
        d: 2,
        sizes: vec![4, 6],
        replicates: 3,
        thermo: quick(),
        c1: 0.1,
        ..GapConfig::default()
    };
    let r = run_gap_experiment(&cfg).unwrap();
    assert!(r.fits["bound"] < 0.0);
    assert_eq!(r.series("gap").len(), 2);
    assert!(r.check("bound_negative").unwrap().passed());
}

#[test]
fn gap_bound_outside_its_range_is_a_guard() {
    // d = 2, ell = log cosh 1 + 0.2: lambda / |log lambda| exceeds 1 for c1 = 1
    let cfg = GapConfig {
        sizes: vec![4],
        replicates: 2,
        thermo: quick(),
        ..GapConfig::default()
    };
    let r = run_gap_experiment(&cfg).unwrap();
    assert_eq!(r.check("bound_negative").unwrap().status, CheckStatus::Guard);
    assert_eq!(r.verdict, Verdict::Inconclusive);
    assert!(!r.fits.contains_key("bound"));
}

#[test]
fn scaling_starts_at_zero_and_fits_a_line() {
    let cfg = ScalingConfig {
        d: 3,
        n: 4,
        ells: vec![0.0, 0.05, 0.1, 0.2],
        thermo: quick(),
        ..ScalingConfig::default()
    };
    let r = run_annealed_scaling(&cfg).unwrap();
    let f = r.series("f");
    assert_eq!(f[0].value, 0.0);
    assert!(!f[0].used_in_fit);
    assert!(r.fits["slope"] > 0.0);
    assert!(r.check("monotone_in_ell").unwrap().passed());
}

#[test]
fn scaling_rejects_large_ell_in_two_dimensions() {
    let cfg = ScalingConfig {
        d: 2,
        ells: vec![0.5, 1.5],
        ..ScalingConfig::default()
    };
    assert!(matches!(run_annealed_scaling(&cfg), Err(ExperimentError::Config(_))));
}

#[test]
fn truncation_of_constant_law_is_exact() {
    let cfg = TruncationConfig {
        n: 4,
        law: DisorderLaw::Constant,
        params: PinningParams::new(1.0, 0.0, 0.4).unwrap(),
        cutoffs: vec![0.5, 1.0],
        replicates: 2,
        thermo: quick(),
        ..TruncationConfig::default()
    };
    let r = run_truncation_check(&cfg).unwrap();
    assert!(r.series("abs_delta").iter().all(|p| p.value == 0.0));
    assert!(r.check("no_truncation_gives_zero").unwrap().passed());
}

#[test]
fn truncation_of_gaussian_law_runs() {
    let cfg = TruncationConfig {
        n: 4,
        cutoffs: vec![0.5, 1.0, 10.0],
        replicates: 3,
        thermo: quick(),
        ..TruncationConfig::default()
    };
    let r = run_truncation_check(&cfg).unwrap();
    let abs = r.series("abs_delta");
    assert_eq!(abs.len(), 3);
    assert_eq!(abs[2].value, 0.0);
    assert!(abs[0].value > 0.0);
}

#[test]
fn homogeneous_box_doubling_has_only_noise_variance() {
    let cfg = BoxDoublingConfig {
        sizes: vec![2, 4],
        law: DisorderLaw::Constant,
        params: PinningParams::new(1.0, 0.0, 0.3).unwrap(),
        replicates: 3,
        thermo: quick(),
        ..BoxDoublingConfig::default()
    };
    let r = run_box_doubling(&cfg).unwrap();
    // 3 replicates x (1 + 4) boxes
    assert_eq!(r.rows.len(), 15);
    for p in r.series("variance") {
        assert!(p.value < 1e-3, "variance {} at n={}", p.value, p.n);
    }
    assert_eq!(r.series("defect").len(), 1);
}

#[test]
fn defect_check_compares_smaller_box_to_larger_box() {
    let cfg = BoxDoublingConfig {
        sizes: vec![2, 4, 8],
        replicates: 2,
        thermo: quick(),
        ..BoxDoublingConfig::default()
    };
    let r = run_box_doubling(&cfg).unwrap();
    let check = r.check("defect_shrinks").unwrap();
    assert!(check.detail.starts_with("|defect(4)|"), "{}", check.detail);
    let (d4, d8) = (r.fits["defect_4"], r.fits["defect_8"]);
    assert_eq!(check.passed(), d8.abs() < d4.abs());
}

#[test]
fn box_doubling_needs_a_doubling_chain() {
    let cfg = BoxDoublingConfig {
        sizes: vec![4, 6],
        ..BoxDoublingConfig::default()
    };
    assert!(run_box_doubling(&cfg).is_err());
}

#[test]
fn domination_reports_rates_and_unit_probabilities() {
    let cfg = DominationConfig {
        d: 2,
        n: 8,
        epsilons: vec![0.0, 0.1, 0.3],
        sweeps: 1500,
        burn_in: Some(200),
        ..DominationConfig::default()
    };
    let r = run_domination_test(&cfg).unwrap();
    assert!(r.report.check("probabilities_in_unit_interval").unwrap().passed());
    assert_eq!(r.points.len(), 3);
    // no thinning at ε = 0: ν-void probability is exactly one
    assert!(r.points[0].sets.iter().all(|s| s.void_probability == 1.0));
    assert!(r.points[0].lambda_hat.is_some());
    assert!(r.points[0].ratio.is_none());
    for p in &r.points[1..] {
        assert!(p.lambda_hat.unwrap() > 0.0);
        assert!((p.g - domination_rate(2, p.epsilon)).abs() < 1e-15);
    }
}

#[test]
fn tail_exceedance_at_zero_is_at_most_one() {
    let cfg = TailConfig {
        sizes: vec![8, 16],
        sweeps: 1500,
        burn_in: Some(300),
        ..TailConfig::default()
    };
    let r = run_tail_check(&cfg).unwrap();
    assert!(r.check("exceedance_in_unit_interval").unwrap().passed());
    for n in [8, 16] {
        let curve = r.series(&format!("exceedance_n{n}"));
        assert!(curve[0].value <= 1.0);
        assert!(curve.windows(2).all(|w| w[1].value <= w[0].value));
    }
    // Green diagonal grows with the box
    let g = r.series("green_diagonal");
    assert!(g[1].value > g[0].value);
}

#[test]
fn variance_run_reports_slope_and_mass() {
    let cfg = VarianceConfig {
        n: 16,
        epsilons: vec![0.05, 0.2, 0.5],
        sweeps: 2000,
        burn_in: Some(500),
        max_separation: 6,
        ..VarianceConfig::default()
    };
    let r = run_variance_d2(&cfg).unwrap();
    assert!(r.fits.contains_key("slope"));
    assert_eq!(r.series("variance").len(), 3);
    assert!(r.rows.iter().any(|row| row.method == "rao_blackwell"));
}

#[test]
fn verdicts_follow_check_statuses() {
    let mut r = ScalingReport::new("x", serde_json::Value::Null);
    r.checks.push(Check::new("a", true, String::new()));
    assert_eq!(r.clone().finalize().verdict, Verdict::Pass);
    r.checks.push(Check::guard("b", String::new()));
    assert_eq!(r.clone().finalize().verdict, Verdict::Inconclusive);
    r.checks.push(Check::new("c", false, String::new()));
    assert_eq!(r.finalize().verdict, Verdict::Fail);
}
