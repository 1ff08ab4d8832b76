//! Goals, metrics, the episode runner, and benchmark and ablation harnesses.

mod ablation;
mod bench;
mod episode;
mod goals;
mod metrics;

pub use ablation::{ablate, ablation_specs, cell_name, evaluate_ablation, AblationCell, AblationReport, SIMILARITIES};
pub use bench::{
    benchmark, mean_std, run_episodes, sha256_hex, BenchConfig, BenchReport, BenchRow, Method, RANDOM_POLICY,
};
pub use episode::{run_episode, EpisodeConfig, EpisodeReport, Policy};
pub use goals::{make_goal, GoalId, GoalSpec};
pub use metrics::{matched_distance, paired_geom_distance, pixel_intersection};
