//! Evaluation harness, map generation, rendering and run configuration.

mod ablate;
mod config;
mod eval;
mod maze;
mod render;

pub use ablate::{ablation_csv, ablation_row, matched_hidden, train_variant, AblationRow};
pub use config::{ArchSpec, DecompositionSpec, EvalSettings, MapSpec, ModelSource, RunConfig, SpeedSpec, RUN_CONFIG_VERSION};
pub use eval::{
    evaluate, evaluate_pairs, sample_pairs, EvalReport, FmmPlanner, LearnedPlanner, MethodStats, Planner, QueryRecord,
    RrtPlanner,
};
pub use maze::{flood_fill_components, gen_maze, DOOR_WIDTH, WALL_THICKNESS};
pub use render::{render, viridis, Canvas, Overlay, PATH_COLORS};
