use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{Env, EnvKind, EnvState, ImageObs, RenderParams};

/// Squiggle: a sinusoid of 1.5 periods across the workspace.
const SQUIGGLE_PERIODS: f64 = 1.5;
const SQUIGGLE_AMPLITUDE: f64 = 0.15;
const SQUIGGLE_SPAN: [f64; 2] = [0.1, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalId {
    Horizontal,
    Vertical,
    Diag45,
    Diag135,
    Squiggle,
    Random,
    Flat,
    Center,
}

impl GoalId {
    pub const ALL: [GoalId; 8] = [
        GoalId::Horizontal,
        GoalId::Vertical,
        GoalId::Diag45,
        GoalId::Diag135,
        GoalId::Squiggle,
        GoalId::Random,
        GoalId::Flat,
        GoalId::Center,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GoalId::Horizontal => "horizontal",
            GoalId::Vertical => "vertical",
            GoalId::Diag45 => "diag45",
            GoalId::Diag135 => "diag135",
            GoalId::Squiggle => "squiggle",
            GoalId::Random => "random",
            GoalId::Flat => "flat",
            GoalId::Center => "center",
        }
    }

    pub fn valid_for(self, kind: EnvKind) -> bool {
        match self {
            GoalId::Random => true,
            GoalId::Flat => kind == EnvKind::Cloth,
            GoalId::Center => kind == EnvKind::Pointmass,
            _ => kind == EnvKind::Rope,
        }
    }

    /// Goals evaluated by default for an environment.
    pub fn defaults(kind: EnvKind) -> Vec<GoalId> {
        match kind {
            EnvKind::Pointmass => vec![GoalId::Center, GoalId::Random],
            EnvKind::Rope => vec![GoalId::Horizontal, GoalId::Vertical, GoalId::Diag45, GoalId::Diag135, GoalId::Random],
            EnvKind::Cloth => vec![GoalId::Flat, GoalId::Random],
        }
    }
}

impl fmt::Display for GoalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GoalId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown goal `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalSpec {
    pub env: EnvKind,
    pub goal: GoalId,
    /// Only used by random goals.
    pub seed: u64,
}

impl GoalSpec {
    pub fn new(env: EnvKind, goal: GoalId, seed: u64) -> Result<Self> {
        if !goal.valid_for(env) {
            return Err(Error::InvalidArgument(format!("goal `{goal}` does not apply to {env}")));
        }
        Ok(GoalSpec { env, goal, seed })
    }
}

fn squiggle(n: usize) -> EnvState {
    let positions = (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            let x = SQUIGGLE_SPAN[0] + t * (SQUIGGLE_SPAN[1] - SQUIGGLE_SPAN[0]);
            let y = 0.5 + SQUIGGLE_AMPLITUDE * (2.0 * std::f64::consts::PI * SQUIGGLE_PERIODS * t).sin();
            [x, y, 0.0]
        })
        .collect();
    EnvState::at_rest(EnvKind::Rope, positions)
}

/// Goal state, rendered with canonical parameters.
pub fn make_goal(env: &Env, spec: &GoalSpec) -> Result<(EnvState, ImageObs)> {
    if spec.env != env.kind() {
        return Err(Error::InvalidArgument(format!("{} goal for a {} environment", spec.env, env.kind())));
    }
    GoalSpec::new(spec.env, spec.goal, spec.seed)?;
    let rest = env.sim_config().rope_rest;
    let center = [0.5, 0.5];
    let state = match spec.goal {
        GoalId::Horizontal => EnvState::rope_line(center, [1.0, 0.0], rest),
        GoalId::Vertical => EnvState::rope_line(center, [0.0, 1.0], rest),
        GoalId::Diag45 => EnvState::rope_line(center, [1.0, 1.0], rest),
        GoalId::Diag135 => EnvState::rope_line(center, [-1.0, 1.0], rest),
        GoalId::Squiggle => squiggle(EnvKind::Rope.particle_count()),
        GoalId::Flat => EnvState::cloth_flat(center, env.sim_config().cloth_spacing),
        GoalId::Center => EnvState::pointmass(center),
        GoalId::Random => env.reset(spec.seed, false)?.0,
    };
    let obs = env.render(&state, &RenderParams::canonical(env.kind(), env.image_size()))?;
    Ok((state, obs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_goals_have_the_right_geometry() {
        let env = Env::new(EnvKind::Rope, 32).unwrap();
        let (h, _) = make_goal(&env, &GoalSpec::new(EnvKind::Rope, GoalId::Horizontal, 0).unwrap()).unwrap();
        assert!(h.positions.iter().all(|p| p[1] == h.positions[0][1]));
        assert!(h.positions.windows(2).all(|w| w[1][0] > w[0][0]));
        let span = h.positions[24][0] - h.positions[0][0];
        assert!((span - 24.0 * 0.025).abs() < 1e-12);

        let (d, _) = make_goal(&env, &GoalSpec::new(EnvKind::Rope, GoalId::Diag45, 0).unwrap()).unwrap();
        for w in d.positions.windows(2) {
            let (dx, dy) = (w[1][0] - w[0][0], w[1][1] - w[0][1]);
            assert!((dx - dy).abs() < 1e-12 && dx > 0.0);
        }
        let (s, _) = make_goal(&env, &GoalSpec::new(EnvKind::Rope, GoalId::Squiggle, 0).unwrap()).unwrap();
        assert!((s.positions[0][0] - 0.1).abs() < 1e-12 && (s.positions[24][0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn random_goals_reproduce_and_invalid_combinations_fail() {
        let env = Env::new(EnvKind::Cloth, 16).unwrap();
        let spec = GoalSpec::new(EnvKind::Cloth, GoalId::Random, 7).unwrap();
        assert_eq!(make_goal(&env, &spec).unwrap(), make_goal(&env, &spec).unwrap());
        assert!(GoalSpec::new(EnvKind::Cloth, GoalId::Horizontal, 0).is_err());
        assert!(GoalSpec::new(EnvKind::Rope, GoalId::Flat, 0).is_err());
        assert!(GoalSpec::new(EnvKind::Rope, GoalId::Center, 0).is_err());
        let rope = GoalSpec { env: EnvKind::Rope, goal: GoalId::Horizontal, seed: 0 };
        assert!(make_goal(&env, &rope).is_err());
        for g in GoalId::ALL {
            assert_eq!(g.name().parse::<GoalId>().unwrap(), g);
        }
    }
}
