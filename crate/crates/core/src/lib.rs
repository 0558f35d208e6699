//! Monte Carlo toolkit for the lattice Gaussian free field with a disordered
//! square-well pinning potential.

pub mod environment;
pub mod experiments;
pub mod estimators;
pub mod io;
pub mod lattice;
pub mod normal;
pub mod oracle;
pub mod quadrature;
pub mod rng;
pub mod sampler;
pub mod stats;
pub mod truncnorm;
