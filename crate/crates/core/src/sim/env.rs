use rand::Rng;

use super::params::sample_render_params;
use super::physics::{self, SimConfig, StepTrace};
use super::render::{self, IMAGE_SIZES};
use super::{EnvKind, EnvState, ImageObs, JitterConfig, PickPlaceAction, RenderParams};
use crate::error::{Error, Result};
use crate::rng;

/// A simulator bound to an object kind, image size and configuration.
/// Stateless: every method is a pure function of its arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct Env {
    kind: EnvKind,
    image_size: usize,
    sim: SimConfig,
    jitter: JitterConfig,
}

impl Env {
    pub fn new(kind: EnvKind, image_size: usize) -> Result<Self> {
        Self::with_config(kind, image_size, SimConfig::default(), JitterConfig::default())
    }

    pub fn with_config(kind: EnvKind, image_size: usize, sim: SimConfig, jitter: JitterConfig) -> Result<Self> {
        if !IMAGE_SIZES.contains(&image_size) {
            return Err(Error::InvalidArgument(format!(
                "image size {image_size} not in {IMAGE_SIZES:?}"
            )));
        }
        sim.validate()?;
        jitter.validate()?;
        sim.check_stability(&jitter)?;
        Ok(Env { kind, image_size, sim, jitter })
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn sim_config(&self) -> &SimConfig {
        &self.sim
    }

    pub fn jitter(&self) -> &JitterConfig {
        &self.jitter
    }

    /// Canonical flat or straight object, before any perturbation.
    pub fn canonical_state(&self) -> EnvState {
        match self.kind {
            EnvKind::Pointmass => EnvState::pointmass([0.5, 0.5]),
            EnvKind::Rope => EnvState::rope_line([0.5, 0.5], [1.0, 0.0], self.sim.rope_rest),
            EnvKind::Cloth => EnvState::cloth_flat([0.5, 0.5], self.sim.cloth_spacing),
        }
    }

    pub fn reset(&self, seed: u64, randomize: bool) -> Result<(EnvState, ImageObs, RenderParams)> {
        let mut prng = rng::stream(seed, "render-params", 0);
        let params = sample_render_params(&mut prng, self.kind, self.image_size, randomize, &self.jitter)?;
        let mut srng = rng::stream(seed, "reset", 0);
        let state = match self.kind {
            EnvKind::Pointmass => EnvState::pointmass([srng.gen_range(0.1..=0.9), srng.gen_range(0.1..=0.9)]),
            kind => {
                let count = match kind {
                    EnvKind::Rope => self.sim.rope_reset_actions,
                    _ => self.sim.cloth_reset_actions,
                };
                let mut state = self.canonical_state();
                for _ in 0..count {
                    let p = state.positions[srng.gen_range(0..state.positions.len())];
                    let delta: Vec<f64> = (0..kind.delta_dim()).map(|_| srng.gen_range(-1.0..=1.0)).collect();
                    let action = PickPlaceAction::new(kind, Some([p[0], p[1]]), &delta)?;
                    state = self.step(&state, &action, &params)?;
                }
                state
            }
        };
        let obs = self.render(&state, &params)?;
        Ok((state, obs, params))
    }

    pub fn step(&self, state: &EnvState, action: &PickPlaceAction, params: &RenderParams) -> Result<EnvState> {
        Ok(self.step_traced(state, action, params)?.0)
    }

    pub fn step_traced(
        &self,
        state: &EnvState,
        action: &PickPlaceAction,
        params: &RenderParams,
    ) -> Result<(EnvState, StepTrace)> {
        if state.kind != self.kind {
            return Err(Error::InvalidArgument(format!("{} state given to {} env", state.kind, self.kind)));
        }
        physics::step_traced(&self.sim, state, action, params)
    }

    pub fn render(&self, state: &EnvState, params: &RenderParams) -> Result<ImageObs> {
        render::render(state, params, self.image_size)
    }

    /// Free relaxation without any grab, as after a missed pick.
    pub fn relax(&self, state: &EnvState, params: &RenderParams) -> EnvState {
        let mut out = state.clone();
        physics::relax(&self.sim, &mut out, params, &mut StepTrace::default());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{max_rope_gap, segment};

    #[test]
    fn reset_is_deterministic() {
        for kind in EnvKind::ALL {
            let env = Env::new(kind, 32).unwrap();
            let a = env.reset(17, true).unwrap();
            let b = env.reset(17, true).unwrap();
            assert_eq!(a.0, b.0);
            assert_eq!(a.1, b.1);
            assert_eq!(a.2, b.2);
            assert!(!segment(&a.1, &a.2).is_empty());
        }
    }

    #[test]
    fn rope_reset_respects_stretch_limit() {
        let env = Env::new(EnvKind::Rope, 32).unwrap();
        for seed in 0..5 {
            let (s, _, _) = env.reset(seed, false).unwrap();
            assert_eq!(s.positions.len(), 25);
            assert!(max_rope_gap(&s) <= env.sim_config().stretch_limit * env.sim_config().rope_rest);
        }
    }

    #[test]
    fn zero_delta_on_relaxed_rope_is_a_fixed_point() {
        let env = Env::new(EnvKind::Rope, 32).unwrap();
        let (s, _, p) = env.reset(3, false).unwrap();
        let s = env.relax(&s, &p);
        let q = s.positions[7];
        let a = PickPlaceAction::new(EnvKind::Rope, Some([q[0], q[1]]), &[0.0, 0.0]).unwrap();
        let t = env.step(&s, &a, &p).unwrap();
        let moved = s
            .positions
            .iter()
            .zip(&t.positions)
            .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
            .fold(0.0, f64::max);
        assert!(moved < 1e-3, "moved {moved}");
    }

    #[test]
    fn rejects_unsupported_sizes_and_kinds() {
        assert!(Env::new(EnvKind::Rope, 48).is_err());
        let env = Env::new(EnvKind::Rope, 16).unwrap();
        let pm = EnvState::pointmass([0.5, 0.5]);
        let a = PickPlaceAction::new(EnvKind::Pointmass, None, &[0.0, 0.0]).unwrap();
        assert!(env.step(&pm, &a, &RenderParams::canonical(EnvKind::Pointmass, 16)).is_err());
    }
}
