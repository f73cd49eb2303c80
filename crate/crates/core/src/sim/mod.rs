//! Seeded multi-agent harness: scenes, stand-in detectors, the budgeted box
//! exchange, feature synthesis against a surrogate ego encoder, and box-level
//! evaluation with the ablation sweeps built on it.

pub mod ablation;
pub mod detector;
pub mod encoder;
pub mod eval;
pub mod pipeline;
pub mod scenario;

use rand::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

pub use ablation::{ablate_kmax, ablate_quant_bits, evaluate_suite, write_metrics_csv, AblationRow, SuiteConfig};
pub use detector::{stub_detect, Detection, StubDetectorConfig};
pub use encoder::{make_teacher_stub, FrozenEncoder};
pub use eval::{evaluate_boxes, ApAccumulator, MetricsReport, IOU_THRESHOLDS};
pub use pipeline::{exchange, late_union, run_pipeline, Harness, LinkConfig, PipelineReport, PipelineRun, Synthesis};
pub use scenario::{gen_scenario, gen_scenario_in, GtObject, ObjectClass, Scenario};

/// Independent 64-bit seed for sub-stream `stream` of `seed`.
pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    SplitMix64::seed_from_u64(seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15)).next_u64()
}
