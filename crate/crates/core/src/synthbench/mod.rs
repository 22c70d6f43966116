//! Seeded synthetic benchmark: a generative world with class, state and
//! context factors, a linear probe trained with the alignment losses, and
//! the ablation harness.

pub mod ablation;
pub mod bank;
pub mod train;
pub mod world;

pub use ablation::{
    grid_arms, pooled_std, run_ablation, run_single, seeds_from_root, AblationResult, AblationRow, AblationSummary,
    Arm, ArmSummary, GridKind, LossSummary, MeanStd, RunOutcome,
};
pub use bank::{build_toy_bank, build_toy_bank_with, world_descriptions, DescMode, WorldEncoder};
pub use train::{evaluate, evaluate_transfer, train, Metrics, ProbeInit, ProbeModel, TrainConfig, TrainData};
pub use world::{generate_world, select_max_size_proposal, Proposal, SampleKind, ToySample, World, WorldFactors, WorldSpec};
