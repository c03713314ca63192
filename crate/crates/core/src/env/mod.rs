//! Deterministic planar push world: dynamics, rendering, scripted policies
//! and the episode dataset format.

mod dataset;
mod policy;
mod render;
mod sim;

pub use dataset::{gen_dataset, is_expert_episode, read_dataset, run_episode, write_dataset, DatasetSummary, EpisodeRecord, StepRecord};
pub use policy::{expert_action, scripted_policy, PolicyProfile};
pub use render::{
    box_start, extract_centroids, extract_centroids_tensor, render, Centroids, DETECT_THRESHOLD, FRAME_BYTES,
};
pub use sim::{
    center_bounds, check_action, default_tasks, dist, env_step, EnvState, Region, TaskSpec, ACTION_SCALE,
    AGENT_EXTENT, BLOCK_EXTENT, CONTACT, FRAME_SIZE, GOAL_EXTENT,
};
