//! CSV rows shared by every estimator and experiment.
//!
//! `results.csv` columns:
//! `experiment,quantity,replicate,method,d,n,a,b,h,law,seed,t_nodes,value,std_error,sweeps,wall_time`.
//! `points.csv` columns: `experiment,series,x,n,value,std_error,replicates,used_in_fit`.
//! Floats are written in shortest round-trip form.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::environment::{DisorderLaw, PinningParams};
use crate::estimators::FreeEnergyEstimate;

pub const RESULTS_HEADER: &str =
    "experiment,quantity,replicate,method,d,n,a,b,h,law,seed,t_nodes,value,std_error,sweeps,wall_time";
pub const POINTS_HEADER: &str = "experiment,series,x,n,value,std_error,replicates,used_in_fit";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub experiment: String,
    pub quantity: String,
    pub replicate: u64,
    pub method: String,
    pub d: usize,
    pub n: usize,
    pub a: f64,
    pub b: f64,
    pub h: f64,
    pub law: String,
    pub seed: u64,
    pub t_nodes: usize,
    pub value: f64,
    pub std_error: f64,
    pub sweeps: u64,
    pub wall_time: f64,
}

/// Identifies what a row measures; the numeric payload is filled in by
/// [`RowContext::row`] and friends.
#[derive(Debug, Clone)]
pub struct RowContext {
    pub experiment: String,
    pub d: usize,
    pub n: usize,
    pub law: DisorderLaw,
    pub params: PinningParams,
}

impl RowContext {
    pub fn estimate_row(
        &self,
        quantity: &str,
        replicate: u64,
        seed: u64,
        est: &FreeEnergyEstimate,
        wall_time: f64,
    ) -> EstimateRow {
        EstimateRow {
            experiment: self.experiment.clone(),
            quantity: quantity.to_string(),
            replicate,
            method: est.method.to_string(),
            d: self.d,
            n: self.n,
            a: self.params.a,
            b: self.params.b,
            h: self.params.h,
            law: self.law.to_string(),
            seed,
            t_nodes: est.diagnostics.nodes.unwrap_or(0),
            value: est.value,
            std_error: est.std_error,
            sweeps: est.diagnostics.sweeps.or(est.diagnostics.samples).unwrap_or(0),
            wall_time,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn observable_row(
        &self,
        quantity: &str,
        method: &str,
        replicate: u64,
        seed: u64,
        value: f64,
        std_error: f64,
        sweeps: u64,
        wall_time: f64,
    ) -> EstimateRow {
        EstimateRow {
            experiment: self.experiment.clone(),
            quantity: quantity.to_string(),
            replicate,
            method: method.to_string(),
            d: self.d,
            n: self.n,
            a: self.params.a,
            b: self.params.b,
            h: self.params.h,
            law: self.law.to_string(),
            seed,
            t_nodes: 0,
            value,
            std_error,
            sweeps,
            wall_time,
        }
    }
}

fn f(x: f64) -> String {
    format!("{x:?}")
}

impl EstimateRow {
    /// Every column except `wall_time`; identical runs give identical strings.
    pub fn payload(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.experiment,
            self.quantity,
            self.replicate,
            self.method,
            self.d,
            self.n,
            f(self.a),
            f(self.b),
            f(self.h),
            self.law,
            self.seed,
            self.t_nodes,
            f(self.value),
            f(self.std_error),
            self.sweeps
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{},{:.3}", self.payload(), self.wall_time)
    }
}

pub fn write_results<W: Write>(mut out: W, rows: &[EstimateRow]) -> std::io::Result<()> {
    writeln!(out, "{RESULTS_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.to_csv())?;
    }
    Ok(())
}

/// One plotted point of an experiment report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportPoint {
    pub series: String,
    pub x: f64,
    pub n: usize,
    pub value: f64,
    pub std_error: f64,
    pub replicates: usize,
    pub used_in_fit: bool,
}

pub fn write_points<W: Write>(mut out: W, experiment: &str, points: &[ReportPoint]) -> std::io::Result<()> {
    writeln!(out, "{POINTS_HEADER}")?;
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            experiment,
            p.series,
            f(p.x),
            p.n,
            f(p.value),
            f(p.std_error),
            p.replicates,
            p.used_in_fit
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::Method;

    #[test]
    fn row_payload_excludes_wall_time() {
        let ctx = RowContext {
            experiment: "free-energy".into(),
            d: 2,
            n: 4,
            law: DisorderLaw::BernoulliPm1,
            params: PinningParams::new(1.0, 1.0, 0.0).unwrap(),
        };
        let est = FreeEnergyEstimate::zero(Method::Importance);
        let a = ctx.estimate_row("f", 0, 7, &est, 1.25);
        let b = ctx.estimate_row("f", 0, 7, &est, 9.5);
        assert_eq!(a.payload(), b.payload());
        assert_ne!(a.to_csv(), b.to_csv());
        assert_eq!(a.to_csv().split(',').count(), RESULTS_HEADER.split(',').count());
        assert!(a.payload().starts_with("free-energy,f,0,importance,2,4,1.0,1.0,0.0,bernoulli,7,"));
    }
}
