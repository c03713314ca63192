//! Receding-horizon planning with a frame predictor.

mod candidates;
mod control;
mod reward;

pub use candidates::{
    heuristic_step, propose_candidates, ActionSequence, Candidate, CandidateSet, PlannerConfig, Provenance,
};
pub use control::{control_loop, evaluate_and_select, EpisodeResult, ReplanRecord, Selection, PLANNER_STREAM_TAG};
pub use reward::{frame_progress, reward_progress, reward_progress_discounted, MISSING_BLOCK_PENALTY};
