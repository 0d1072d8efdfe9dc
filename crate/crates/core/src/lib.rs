pub mod data;
pub mod regress;
pub mod treatment;
pub mod baseline;
pub mod propensity;
pub mod effects;
pub mod mc;
pub mod fixture;
pub mod cli;
