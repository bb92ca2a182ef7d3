//! Metrics, evaluation areas, sparse sampling protocols, synthetic scenes
//! and the benchmark harness.

mod area;
mod benchmark;
mod metrics;
pub mod scene;

pub use area::{
    area_mask, erase_region, evaluation_mask, sample_sparse, sample_sparse_in, AreaKind,
    EvaluationArea,
};
pub use benchmark::{
    benchmark_condition, normalize_relative, run_benchmark, run_benchmark_with, scene_seed,
    BenchmarkRecord, BenchmarkReport, Protocol, Scene, SceneFailure, AGGREGATE_ID,
};
pub use metrics::{compute_metrics, MetricsAccumulator, MetricsReport, DELTA1_THRESHOLD};
pub use scene::{synth_scene, Camera, Primitive, SceneSpec};
