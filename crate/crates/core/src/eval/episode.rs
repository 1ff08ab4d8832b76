use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::goals::{make_goal, GoalSpec};
use super::metrics::{paired_geom_distance, pixel_intersection};
use crate::error::{Error, Result};
use crate::planner::{random_policy_step, LatentModel, Planner};
use crate::rng;
use crate::sim::{segment, Env, RenderParams};

/// Who chooses the actions of an episode.
#[derive(Clone, Copy)]
pub enum Policy<'a> {
    Random,
    Model(&'a (dyn LatentModel + Sync)),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub max_steps: usize,
    /// Candidate actions scored per planning step.
    pub n_candidates: usize,
    pub randomize: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig { max_steps: 20, n_candidates: 100, randomize: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub seed: u64,
    pub goal: GoalSpec,
    /// Distance to the goal state before the first action and after each one.
    pub trace: Vec<f64>,
    /// Foreground pixels shared with the goal image, aligned with `trace`.
    pub intersections: Vec<usize>,
    pub best: f64,
    pub final_metric: f64,
    pub actions: usize,
    /// Every executed action as `[pick.., delta..]`.
    pub taken: Vec<Vec<f64>>,
    /// Steps whose mask was taken from a canonical re-render.
    pub fallbacks: usize,
    pub wall_ms: u64,
}

/// Resets with `seed`, then runs `max_steps` actions toward `goal`,
/// replanning every step.
pub fn run_episode(env: &Env, policy: Policy<'_>, goal: &GoalSpec, cfg: &EpisodeConfig, seed: u64) -> Result<EpisodeReport> {
    let start = Instant::now();
    let (goal_state, goal_obs) = make_goal(env, goal)?;
    let canonical = RenderParams::canonical(env.kind(), env.image_size());
    let goal_mask = segment(&goal_obs, &canonical);
    let planner = match policy {
        Policy::Random => None,
        Policy::Model(m) => {
            if m.env_kind() != env.kind() {
                return Err(Error::InvalidArgument(format!("{} model in a {} environment", m.env_kind(), env.kind())));
            }
            Some(Planner::new(m, &goal_obs)?)
        }
    };
    let (mut state, mut obs, params) = env.reset(seed, cfg.randomize)?;
    let mut rng = rng::stream(seed, "policy", 0);
    let mut trace = Vec::with_capacity(cfg.max_steps + 1);
    let mut intersections = Vec::with_capacity(cfg.max_steps + 1);
    let mut fallbacks = 0;
    let mut taken = Vec::with_capacity(cfg.max_steps);
    trace.push(paired_geom_distance(&state, &goal_state)?);
    intersections.push(pixel_intersection(&segment(&obs, &params), &goal_mask)?);
    for step in 0..cfg.max_steps {
        let mut mask = segment(&obs, &params);
        let mut view = obs.clone();
        if mask.is_empty() {
            view = env.render(&state, &canonical)?;
            mask = segment(&view, &canonical);
            fallbacks += 1;
            log::warn!("episode {seed}: empty mask at step {step}, using a canonical render");
            if mask.is_empty() {
                log::error!("episode {seed}: object not visible at step {step} even with canonical rendering");
                return Err(Error::EmptyMask);
            }
        }
        let action = match &planner {
            None => random_policy_step(&mask, &mut rng, env.kind())?,
            Some(p) => p.plan(&view, &mask, cfg.n_candidates, &mut rng)?.action().clone(),
        };
        state = env.step(&state, &action, &params)?;
        taken.push(action.to_vec());
        obs = env.render(&state, &params)?;
        trace.push(paired_geom_distance(&state, &goal_state)?);
        intersections.push(pixel_intersection(&segment(&obs, &params), &goal_mask)?);
    }
    let best = trace.iter().copied().fold(f64::INFINITY, f64::min);
    let final_metric = *trace.last().expect("nonempty");
    Ok(EpisodeReport {
        seed,
        goal: *goal,
        trace,
        intersections,
        best,
        final_metric,
        actions: cfg.max_steps,
        taken,
        fallbacks,
        wall_ms: start.elapsed().as_millis() as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::GoalId;
    use crate::sim::EnvKind;

    #[test]
    fn random_episode_shape_and_determinism() {
        let env = Env::new(EnvKind::Rope, 16).unwrap();
        let goal = GoalSpec::new(EnvKind::Rope, GoalId::Horizontal, 0).unwrap();
        let cfg = EpisodeConfig { max_steps: 6, ..Default::default() };
        let a = run_episode(&env, Policy::Random, &goal, &cfg, 11).unwrap();
        let b = run_episode(&env, Policy::Random, &goal, &cfg, 11).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.trace.len(), 7);
        assert_eq!(a.intersections.len(), 7);
        assert_eq!(a.best, a.trace.iter().copied().fold(f64::INFINITY, f64::min));
        assert_eq!(a.final_metric, a.trace[6]);
        let (s0, _, _) = env.reset(11, false).unwrap();
        let (g, _) = make_goal(&env, &goal).unwrap();
        assert_eq!(a.trace[0], paired_geom_distance(&s0, &g).unwrap());
    }
}
