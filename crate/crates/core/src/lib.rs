pub mod data;
pub mod error;
pub mod fit;
pub mod cli;
pub mod graph;
pub mod init;
pub mod io;
pub mod solvers;
pub mod synth;
pub mod rng;
pub mod eval;
