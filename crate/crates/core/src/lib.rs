pub mod bounds;
pub mod control;
pub mod error;
pub mod gp;
pub mod harness;
pub mod hyper;
pub mod kernels;
pub mod optimize;
pub mod oracles;
