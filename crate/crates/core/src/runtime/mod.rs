//! Training runtime: datasets, the preparing stage (placement, splitting,
//! subgraph construction) and the execution stage (the training loop with
//! adaptive rescaling, subgraph reuse and memory budgeting).

pub mod bench;
pub mod checkpoint;
pub mod data;
pub mod params;
pub mod plan;
pub mod reference;
pub mod run;
pub mod train;

pub use bench::{ablation, simulate_batches, ExponentTrace, LatencyReport};
pub use checkpoint::Checkpoint;
pub use data::{gen_blobs, gen_images, load_idx_dataset, parse_idx, Dataset};
pub use params::{init_float, ParamStore};
pub use plan::{BuildCost, ExecutionPlan, PlanOptions, Technique, Techniques};
pub use reference::FloatNet;
pub use run::{
    resolve_config, resolve_cost, resolve_model, run_reference, run_training, synthetic_for,
    RunOutput, TrainRunConfig, TrainSummary, METRICS_HEADER,
};
pub use train::{evaluate_int8, AdaptiveRescale, BuiltSubgraph, StepMetrics, Trainer};
