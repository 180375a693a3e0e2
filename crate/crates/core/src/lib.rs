pub mod analysis;
pub mod cli;
pub mod evaluation;
pub mod genotype;
pub mod hwmodel;
pub mod kv;
pub mod nsga;
