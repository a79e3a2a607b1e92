//! Benchmark-only crate; see `benches/solvers.rs`. Shared fixtures live
//! here so the bench target and any future profiling binaries agree on the
//! workloads.

use mfglab::{ActionSet, CaseStudy, ScalarFn};

/// Coupled scalar case-study instance used across the benchmarks.
pub fn coupled_case_study() -> CaseStudy {
    CaseStudy::new(
        ActionSet::interval(-1.0, 1.0).expect("valid interval"),
        vec![0.3],
        1.0,
        1.0,
        0.25,
        0.5,
        ScalarFn::Tanh,
        1.0,
        ScalarFn::Identity,
        0.5,
    )
    .expect("valid model")
}
