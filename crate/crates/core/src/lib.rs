pub mod asymptotics;
pub mod config;
pub mod matrix_json;
pub mod montecarlo;
pub mod report;
pub mod rules;
pub mod spectral;
pub mod urn;
