//! Shared setup for the benchmark targets.

use coalsamp::configspace::SampleConfig;
use coalsamp::fixtures::primate_model;
use coalsamp::model::MutationModel;

pub fn bench_model(theta: f64) -> MutationModel {
    primate_model(theta)
}

pub fn cfg(counts: &[u32]) -> SampleConfig {
    SampleConfig::new(counts.to_vec()).expect("benchmark config")
}
