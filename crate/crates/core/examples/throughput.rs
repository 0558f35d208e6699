//! Heat-bath sweep throughput on a few box sizes.

use std::sync::Arc;
use std::time::Instant;

use gffpin::lattice::Lattice;
use gffpin::sampler::{sweep, FieldState, ModelSpec, SweepOrder};

fn main() {
    for &(d, n, w) in &[(2usize, 16usize, 0.4f64), (2, 64, 0.05), (3, 12, 0.1)] {
        let lattice = Arc::new(Lattice::new(d, n).unwrap());
        let v = lattice.volume();
        let model = ModelSpec::with_rewards(lattice, 1.0, vec![w; v]).unwrap();
        let mut state = FieldState::zeros(v, 1);
        let sweeps = 2_000_000 / v;
        let t0 = Instant::now();
        for _ in 0..sweeps {
            sweep(&mut state, &model, SweepOrder::Checkerboard);
        }
        let ns = t0.elapsed().as_nanos() as f64 / (sweeps * v) as f64;
        println!("d={d} n={n}: {ns:.1} ns/update");
    }
}
