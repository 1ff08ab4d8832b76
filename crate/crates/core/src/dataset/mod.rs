//! Random-policy interaction data.
//!
//! A [`Dataset`] holds whole trajectories, including the simulator states
//! behind every image. Training code only ever sees a [`TransitionView`],
//! which exposes `(o_t, a_t, o_{t+1})` tuples and nothing else.

mod batch;
mod format;

use log::warn;
use rand::Rng;
use rayon::prelude::*;

pub use batch::{Batch, TransitionView};
pub use format::{load, read_file, save, write_file, DATASET_MAGIC, DATASET_VERSION};
pub(crate) use format::Reader;

use crate::error::{Error, Result};
use crate::rng;
use crate::sim::{segment, BinaryMask, Env, EnvKind, EnvState, ImageObs, PickPlaceAction, RenderParams};

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Seed passed to `Env::reset`; replaying from it reproduces the images.
    pub reset_seed: u64,
    pub params: RenderParams,
    pub images: Vec<ImageObs>,
    pub actions: Vec<PickPlaceAction>,
    states: Vec<EnvState>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    kind: EnvKind,
    image_size: usize,
    randomize: bool,
    trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(kind: EnvKind, image_size: usize, randomize: bool, trajectories: Vec<Trajectory>) -> Result<Self> {
        let traj_len = trajectories.first().map(Trajectory::len).unwrap_or(0);
        for t in &trajectories {
            if t.len() != traj_len || t.images.len() != traj_len + 1 || t.states.len() != traj_len + 1 {
                return Err(Error::Shape("trajectories must share one length with one more image than action".into()));
            }
            if t.images.iter().any(|im| im.size() != image_size) {
                return Err(Error::Shape(format!("images must be {image_size}x{image_size}")));
            }
            if t.actions.iter().any(|a| a.kind() != kind) || t.states.iter().any(|s| s.kind != kind) {
                return Err(Error::InvalidArgument(format!("trajectory content does not match env kind {kind}")));
            }
        }
        Ok(Dataset { kind, image_size, randomize, trajectories })
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn randomize(&self) -> bool {
        self.randomize
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn traj_len(&self) -> usize {
        self.trajectories.first().map_or(0, Trajectory::len)
    }

    pub fn transition_count(&self) -> usize {
        self.trajectories.len() * self.traj_len()
    }

    pub fn transitions(&self) -> TransitionView<'_> {
        TransitionView::new(self)
    }

    /// Simulator states aligned with `trajectories()[i].images`. For
    /// evaluation and diagnostics only.
    pub fn ground_truth(&self, traj: usize) -> &[EnvState] {
        &self.trajectories[traj].states
    }
}

/// Random policy over a segmentation mask: pick the center of a uniformly
/// chosen foreground pixel, delta uniform in `[-1, 1]^d`. Components are
/// rounded to `f32`, the precision actions are stored at.
pub fn random_action<R: Rng + ?Sized>(rng: &mut R, kind: EnvKind, mask: &BinaryMask) -> Result<PickPlaceAction> {
    let delta: Vec<f64> = (0..kind.delta_dim()).map(|_| rng.gen_range(-1.0f32..=1.0) as f64).collect();
    if !kind.has_pick() {
        return PickPlaceAction::new(kind, None, &delta);
    }
    let fg = mask.foreground();
    if fg.is_empty() {
        return Err(Error::EmptyMask);
    }
    let (r, c) = fg[rng.gen_range(0..fg.len())];
    let s = mask.size() as f64;
    PickPlaceAction::new(kind, Some([(c as f64 + 0.5) / s, (r as f64 + 0.5) / s]), &delta)
}

const MAX_ATTEMPTS: u64 = 100;

fn collect_one(env: &Env, traj_seed: u64, traj_len: usize, randomize: bool) -> Result<(Trajectory, u64)> {
    for attempt in 0..MAX_ATTEMPTS {
        let reset_seed = rng::derive_seed(traj_seed, "attempt", attempt);
        let (mut state, obs, params) = env.reset(reset_seed, randomize)?;
        let mut arng = rng::stream(reset_seed, "actions", 0);
        let mut images = vec![obs];
        let mut actions = Vec::with_capacity(traj_len);
        let mut states = vec![quantize(&state)];
        let mut failed = false;
        for _ in 0..traj_len {
            let mask = segment(images.last().expect("nonempty"), &params);
            let action = match random_action(&mut arng, env.kind(), &mask) {
                Ok(a) => a,
                Err(Error::EmptyMask) => {
                    failed = true;
                    break;
                }
                Err(e) => return Err(e),
            };
            state = env.step(&state, &action, &params)?;
            images.push(env.render(&state, &params)?);
            states.push(quantize(&state));
            actions.push(action);
        }
        if !failed {
            return Ok((Trajectory { reset_seed, params, images, actions, states }, attempt));
        }
    }
    Err(Error::InvalidArgument(format!(
        "segmentation stayed empty after {MAX_ATTEMPTS} render-parameter resamples"
    )))
}

/// States are stored at `f32` precision.
fn quantize(s: &EnvState) -> EnvState {
    let q = |v: &Vec<[f64; 3]>| v.iter().map(|p| p.map(|x| x as f32 as f64)).collect();
    EnvState { kind: s.kind, positions: q(&s.positions), velocities: q(&s.velocities) }
}

/// Collects `n_traj` random-policy trajectories of `traj_len` actions. Each
/// trajectory draws from its own seed stream, so the result does not depend
/// on the thread count. A trajectory whose mask becomes empty is restarted
/// with fresh render parameters; restarts are logged.
pub fn collect_random(env: &Env, n_traj: usize, traj_len: usize, seed: u64, randomize: bool) -> Result<Dataset> {
    if n_traj == 0 || traj_len == 0 {
        return Err(Error::InvalidArgument("n_traj and traj_len must be at least 1".into()));
    }
    let results: Vec<(Trajectory, u64)> = (0..n_traj)
        .into_par_iter()
        .map(|i| collect_one(env, rng::derive_seed(seed, "trajectory", i as u64), traj_len, randomize))
        .collect::<Result<_>>()?;
    let resamples: u64 = results.iter().map(|r| r.1).sum();
    if resamples > 0 {
        warn!("resampled render parameters {resamples} times after empty segmentation");
    }
    let trajectories = results.into_iter().map(|r| r.0).collect();
    Dataset::new(env.kind(), env.image_size(), randomize, trajectories)
}

/// Re-simulates a trajectory from its reset seed and actions.
pub fn replay(env: &Env, traj: &Trajectory, randomize: bool) -> Result<Vec<ImageObs>> {
    let (mut state, obs, params) = env.reset(traj.reset_seed, randomize)?;
    let mut images = vec![obs];
    for a in &traj.actions {
        state = env.step(&state, a, &params)?;
        images.push(env.render(&state, &params)?);
    }
    Ok(images)
}
