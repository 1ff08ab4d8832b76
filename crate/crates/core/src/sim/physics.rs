//! Friction-dominated mass-spring dynamics.
//!
//! Particles move with velocity proportional to the net force (the
//! overdamped limit of semi-implicit Euler with implicit drag), so a substep
//! is `x += dt * mobility * F(x)` followed by projection onto the workspace
//! box and the table plane. Springs only resist stretching. The resulting
//! potential is convex, and with `dt * mobility * k` small the free update is
//! a nonexpansive map: successive displacements, and therefore the kinetic
//! energy, never grow while the object relaxes.

use serde::{Deserialize, Serialize};

use super::{EnvKind, EnvState, JitterConfig, PickPlaceAction, RenderParams, CLOTH_SIDE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub drag_substeps: usize,
    pub relax_substeps: usize,
    /// Workspace displacement of a unit delta for rope and cloth.
    pub move_scale: f64,
    /// Workspace displacement of a unit delta for the pointmass.
    pub delta_scale: f64,
    pub grab_radius: f64,
    pub rope_rest: f64,
    pub rope_stiffness: f64,
    /// Minimum distance between rope particles two apart, in rest lengths,
    /// enforced while dragging. Limits how sharply the rope can fold.
    pub rope_min_span: f64,
    /// Minimum distance between rope particles further apart, enforced while
    /// dragging; the rope's thickness.
    pub rope_thickness: f64,
    pub rope_iterations: usize,
    pub stretch_limit: f64,
    pub cloth_spacing: f64,
    pub cloth_stiffness: f64,
    pub shear_ratio: f64,
    pub cloth_iterations: usize,
    pub gravity: f64,
    pub lift_height: f64,
    pub base_drag: f64,
    pub rope_reset_actions: usize,
    pub cloth_reset_actions: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.01,
            drag_substeps: 40,
            relax_substeps: 60,
            move_scale: 5.0 / 64.0,
            delta_scale: 0.1,
            grab_radius: 3.0 / 32.0,
            rope_rest: 0.025,
            rope_stiffness: 1000.0,
            rope_min_span: 1.4,
            rope_thickness: 0.05,
            rope_iterations: 4,
            stretch_limit: 1.1,
            cloth_spacing: 0.05,
            cloth_stiffness: 300.0,
            shear_ratio: 0.5,
            cloth_iterations: 10,
            gravity: 50.0,
            lift_height: 0.1,
            base_drag: 100.0,
            rope_reset_actions: 120,
            cloth_reset_actions: 50,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("move_scale", self.move_scale),
            ("delta_scale", self.delta_scale),
            ("grab_radius", self.grab_radius),
            ("rope_rest", self.rope_rest),
            ("rope_stiffness", self.rope_stiffness),
            ("cloth_spacing", self.cloth_spacing),
            ("cloth_stiffness", self.cloth_stiffness),
            ("base_drag", self.base_drag),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("sim.{name} must be positive, got {v}")));
            }
        }
        if self.drag_substeps == 0 {
            return Err(Error::InvalidArgument("sim.drag_substeps must be at least 1".into()));
        }
        if self.stretch_limit < 1.0 {
            return Err(Error::InvalidArgument("sim.stretch_limit must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.shear_ratio) || self.gravity < 0.0 || self.lift_height < 0.0 {
            return Err(Error::InvalidArgument("sim.shear_ratio, gravity or lift_height out of range".into()));
        }
        Ok(())
    }

    /// Rejects jitter ranges under which a substep could overshoot. The
    /// bound is `dt * mobility * L <= 1`, with `L` the largest spring
    /// Laplacian eigenvalue estimate (twice the heaviest weighted degree).
    pub fn check_stability(&self, jitter: &JitterConfig) -> Result<()> {
        let mobility = 1.0 / (self.base_drag * jitter.mass.0 * (jitter.damping.0 + jitter.friction.0) / 2.0);
        let degree = (2.0 * self.rope_stiffness).max(4.0 * self.cloth_stiffness * (1.0 + self.shear_ratio));
        let bound = self.dt * mobility * 2.0 * degree * jitter.stiffness.1;
        if bound > 1.0 {
            return Err(Error::InvalidArgument(format!(
                "sim step too stiff for the jitter ranges: dt * mobility * L = {bound:.3} exceeds 1"
            )));
        }
        Ok(())
    }
}

/// Diagnostics of one step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepTrace {
    pub grabbed: Option<usize>,
    /// Kinetic energy after each free relaxation substep.
    pub relax_kinetic: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Spring {
    a: usize,
    b: usize,
    rest: f64,
    k: f64,
    structural: bool,
}

fn springs(kind: EnvKind, cfg: &SimConfig, stiffness: f64) -> Vec<Spring> {
    match kind {
        EnvKind::Pointmass => Vec::new(),
        EnvKind::Rope => (0..kind.particle_count() - 1)
            .map(|i| Spring {
                a: i,
                b: i + 1,
                rest: cfg.rope_rest,
                k: cfg.rope_stiffness * stiffness,
                structural: true,
            })
            .collect(),
        EnvKind::Cloth => {
            let n = CLOTH_SIDE;
            let idx = |r: usize, c: usize| r * n + c;
            let k = cfg.cloth_stiffness * stiffness;
            let diag = cfg.cloth_spacing * std::f64::consts::SQRT_2;
            let mut out = Vec::new();
            for r in 0..n {
                for c in 0..n {
                    if c + 1 < n {
                        out.push(Spring { a: idx(r, c), b: idx(r, c + 1), rest: cfg.cloth_spacing, k, structural: true });
                    }
                    if r + 1 < n {
                        out.push(Spring { a: idx(r, c), b: idx(r + 1, c), rest: cfg.cloth_spacing, k, structural: true });
                    }
                    if r + 1 < n && c + 1 < n {
                        let ks = k * cfg.shear_ratio;
                        out.push(Spring { a: idx(r, c), b: idx(r + 1, c + 1), rest: diag, k: ks, structural: false });
                        out.push(Spring { a: idx(r, c + 1), b: idx(r + 1, c), rest: diag, k: ks, structural: false });
                    }
                }
            }
            out
        }
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn contain(p: &mut [f64; 3]) {
    p[0] = p[0].clamp(0.0, 1.0);
    p[1] = p[1].clamp(0.0, 1.0);
    p[2] = p[2].max(0.0);
}

struct Integrator<'a> {
    kind: EnvKind,
    cfg: &'a SimConfig,
    springs: Vec<Spring>,
    alpha: f64,
    mass: f64,
    forces: Vec<[f64; 3]>,
}

impl<'a> Integrator<'a> {
    fn new(kind: EnvKind, cfg: &'a SimConfig, params: &RenderParams) -> Self {
        let mass = params.mass;
        let mobility = 1.0 / (mass * cfg.base_drag * (params.damping + params.friction) / 2.0);
        Integrator {
            kind,
            cfg,
            springs: springs(kind, cfg, params.stiffness),
            alpha: cfg.dt * mobility,
            mass,
            forces: vec![[0.0; 3]; kind.particle_count()],
        }
    }

    /// One overdamped substep; `pinned` particles keep their position.
    fn substep(&mut self, x: &mut [[f64; 3]], pinned: Option<usize>) {
        self.forces.iter_mut().for_each(|f| *f = [0.0; 3]);
        for s in &self.springs {
            let d = sub(x[s.b], x[s.a]);
            let len = norm(d);
            if len > s.rest {
                let mag = s.k * (len - s.rest) / len;
                for ax in 0..3 {
                    self.forces[s.a][ax] += mag * d[ax];
                    self.forces[s.b][ax] -= mag * d[ax];
                }
            }
        }
        if self.kind == EnvKind::Cloth {
            for f in self.forces.iter_mut() {
                f[2] -= self.mass * self.cfg.gravity;
            }
        }
        for (i, (p, f)) in x.iter_mut().zip(&self.forces).enumerate() {
            if Some(i) == pinned {
                continue;
            }
            for ax in 0..3 {
                p[ax] += self.alpha * f[ax];
            }
            contain(p);
        }
    }

    /// Constraint passes while a particle is held. Rope: follow-the-leader
    /// inextensibility outward from the grabbed particle, alternated with
    /// fold and thickness separation. Cloth: Gauss-Seidel passes over the
    /// structural springs.
    fn project(&self, x: &mut [[f64; 3]], grabbed: usize) {
        match self.kind {
            EnvKind::Pointmass => {}
            EnvKind::Rope => {
                let rest = self.cfg.rope_rest;
                let span = self.cfg.rope_min_span * rest;
                let thick = self.cfg.rope_thickness;
                let follow = |x: &mut [[f64; 3]]| {
                    for j in grabbed + 1..x.len() {
                        pull_within(x, j - 1, j, rest);
                    }
                    for j in (0..grabbed).rev() {
                        pull_within(x, j + 1, j, rest);
                    }
                };
                for _ in 0..self.cfg.rope_iterations {
                    follow(x);
                    for i in 0..x.len() {
                        for j in i + 2..x.len() {
                            let min = if j == i + 2 { span } else { thick };
                            separate(x, i, j, min, grabbed);
                        }
                    }
                }
                follow(x);
            }
            EnvKind::Cloth => {
                for _ in 0..self.cfg.cloth_iterations {
                    for s in self.springs.iter().filter(|s| s.structural) {
                        let d = sub(x[s.b], x[s.a]);
                        let len = norm(d);
                        if len <= s.rest {
                            continue;
                        }
                        let excess = (len - s.rest) / len;
                        let (wa, wb) = match (s.a == grabbed, s.b == grabbed) {
                            (true, _) => (0.0, 1.0),
                            (_, true) => (1.0, 0.0),
                            _ => (0.5, 0.5),
                        };
                        for ax in 0..3 {
                            x[s.a][ax] += wa * excess * d[ax];
                            x[s.b][ax] -= wb * excess * d[ax];
                        }
                        contain(&mut x[s.a]);
                        contain(&mut x[s.b]);
                    }
                }
            }
        }
    }
}

/// Moves `x[j]` toward `x[lead]` until they are at most `rest` apart.
fn pull_within(x: &mut [[f64; 3]], lead: usize, j: usize, rest: f64) {
    let d = sub(x[j], x[lead]);
    let len = norm(d);
    if len > rest {
        for ax in 0..3 {
            x[j][ax] = x[lead][ax] + d[ax] * rest / len;
        }
        contain(&mut x[j]);
    }
}

/// Pushes `x[i]` and `x[j]` apart on the table plane to at least `min`.
fn separate(x: &mut [[f64; 3]], i: usize, j: usize, min: f64, pinned: usize) {
    let d = sub(x[j], x[i]);
    let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
    if len >= min || len < 1e-12 {
        return;
    }
    let push = (min - len) / len;
    let (wi, wj) = match (i == pinned, j == pinned) {
        (true, _) => (0.0, 1.0),
        (_, true) => (1.0, 0.0),
        _ => (0.5, 0.5),
    };
    for ax in 0..2 {
        x[i][ax] -= wi * push * d[ax];
        x[j][ax] += wj * push * d[ax];
    }
    contain(&mut x[i]);
    contain(&mut x[j]);
}

fn set_velocities(v: &mut [[f64; 3]], before: &[[f64; 3]], after: &[[f64; 3]], dt: f64) {
    for ((v, b), a) in v.iter_mut().zip(before).zip(after) {
        *v = [(a[0] - b[0]) / dt, (a[1] - b[1]) / dt, (a[2] - b[2]) / dt];
    }
}

pub fn kinetic_energy(state: &EnvState, mass: f64) -> f64 {
    0.5 * mass * state.velocities.iter().map(|v| v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sum::<f64>()
}

/// Largest distance between adjacent rope particles (0 for other kinds).
pub fn max_rope_gap(state: &EnvState) -> f64 {
    if state.kind != EnvKind::Rope {
        return 0.0;
    }
    state
        .positions
        .windows(2)
        .map(|w| norm(sub(w[1], w[0])))
        .fold(0.0, f64::max)
}

pub(crate) fn relax(cfg: &SimConfig, state: &mut EnvState, params: &RenderParams, trace: &mut StepTrace) {
    if state.kind == EnvKind::Pointmass {
        return;
    }
    let mut integ = Integrator::new(state.kind, cfg, params);
    let mut prev = state.positions.clone();
    for _ in 0..cfg.relax_substeps {
        integ.substep(&mut state.positions, None);
        set_velocities(&mut state.velocities, &prev, &state.positions, cfg.dt);
        trace.relax_kinetic.push(kinetic_energy(state, integ.mass));
        prev.copy_from_slice(&state.positions);
    }
}

pub(crate) fn step_traced(
    cfg: &SimConfig,
    state: &EnvState,
    action: &PickPlaceAction,
    params: &RenderParams,
) -> Result<(EnvState, StepTrace)> {
    if action.kind() != state.kind {
        return Err(Error::InvalidArgument(format!(
            "{} action applied to {} state",
            action.kind(),
            state.kind
        )));
    }
    let mut next = state.clone();
    let mut trace = StepTrace::default();
    let delta = action.delta();
    let Some(pick) = action.pick() else {
        let p = &mut next.positions[0];
        p[0] = (p[0] + cfg.delta_scale * delta[0]).clamp(0.0, 1.0);
        p[1] = (p[1] + cfg.delta_scale * delta[1]).clamp(0.0, 1.0);
        next.velocities[0] = [0.0; 3];
        return Ok((next, trace));
    };
    let (g, dist) = state.nearest_particle(pick);
    if dist <= cfg.grab_radius {
        trace.grabbed = Some(g);
        let mut integ = Integrator::new(state.kind, cfg, params);
        let start = state.positions[g];
        let target = [
            (start[0] + delta[0] * cfg.move_scale).clamp(0.0, 1.0),
            (start[1] + delta[1] * cfg.move_scale).clamp(0.0, 1.0),
        ];
        let lift = delta.get(2).map_or(0.0, |dz| cfg.lift_height * (dz + 1.0) / 2.0);
        let mut prev = next.positions.clone();
        for s in 1..=cfg.drag_substeps {
            let frac = s as f64 / cfg.drag_substeps as f64;
            let z = if s == cfg.drag_substeps { 0.0 } else { lift * (std::f64::consts::PI * frac).sin() };
            next.positions[g] = [
                start[0] + frac * (target[0] - start[0]),
                start[1] + frac * (target[1] - start[1]),
                z.max(0.0),
            ];
            integ.substep(&mut next.positions, Some(g));
            integ.project(&mut next.positions, g);
            set_velocities(&mut next.velocities, &prev, &next.positions, cfg.dt);
            prev.copy_from_slice(&next.positions);
        }
    }
    relax(cfg, &mut next, params, &mut trace);
    Ok((next, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn canonical(kind: EnvKind) -> RenderParams {
        RenderParams::canonical(kind, 32)
    }

    fn random_action<R: Rng>(rng: &mut R, state: &EnvState) -> PickPlaceAction {
        let kind = state.kind;
        let delta: Vec<f64> = (0..kind.delta_dim()).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let pick = kind.has_pick().then(|| {
            let p = state.positions[rng.gen_range(0..state.positions.len())];
            [p[0], p[1]]
        });
        PickPlaceAction::new(kind, pick, &delta).unwrap()
    }

    #[test]
    fn default_config_is_stable() {
        let jitter = JitterConfig::default();
        SimConfig::default().validate().unwrap();
        SimConfig::default().check_stability(&jitter).unwrap();
        let stiff = SimConfig { rope_stiffness: 1e5, ..Default::default() };
        assert!(stiff.check_stability(&jitter).is_err());
    }

    #[test]
    fn pointmass_moves_and_clamps() {
        let cfg = SimConfig::default();
        let p = canonical(EnvKind::Pointmass);
        let a = PickPlaceAction::new(EnvKind::Pointmass, None, &[1.0, 0.0]).unwrap();
        let (s, _) = step_traced(&cfg, &EnvState::pointmass([0.5, 0.5]), &a, &p).unwrap();
        assert!((s.positions[0][0] - 0.6).abs() < 1e-12);
        assert_eq!(s.positions[0][1], 0.5);
        let (s, _) = step_traced(&cfg, &EnvState::pointmass([0.95, 0.5]), &a, &p).unwrap();
        assert_eq!(s.positions[0][0], 1.0);
    }

    #[test]
    fn rope_drag_moves_grabbed_particle_to_target() {
        let cfg = SimConfig::default();
        let state = EnvState::rope_line([0.5, 0.5], [1.0, 0.0], cfg.rope_rest);
        let pick = [state.positions[12][0], state.positions[12][1]];
        let a = PickPlaceAction::new(EnvKind::Rope, Some(pick), &[0.0, 1.0]).unwrap();
        let (s, trace) = step_traced(&cfg, &state, &a, &canonical(EnvKind::Rope)).unwrap();
        assert_eq!(trace.grabbed, Some(12));
        assert!((s.positions[12][1] - (0.5 + cfg.move_scale)).abs() < 1e-12);
        assert!(max_rope_gap(&s) <= cfg.rope_rest * (1.0 + 1e-12));
        // The ends are pulled inward, not left behind.
        assert!(s.positions[0][1] > 0.5 && s.positions[0][0] > state.positions[0][0]);
    }

    #[test]
    fn pick_far_from_object_is_a_relaxed_copy() {
        let cfg = SimConfig::default();
        let state = EnvState::rope_line([0.5, 0.5], [1.0, 0.0], cfg.rope_rest);
        let a = PickPlaceAction::new(EnvKind::Rope, Some([0.5, 0.05]), &[1.0, 1.0]).unwrap();
        let (s, trace) = step_traced(&cfg, &state, &a, &canonical(EnvKind::Rope)).unwrap();
        assert_eq!(trace.grabbed, None);
        assert_eq!(trace.relax_kinetic.len(), cfg.relax_substeps);
        assert_eq!(s.positions, state.positions);
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let cfg = SimConfig::default();
        let a = PickPlaceAction::new(EnvKind::Pointmass, None, &[0.0, 0.0]).unwrap();
        let state = EnvState::rope_line([0.5, 0.5], [1.0, 0.0], cfg.rope_rest);
        assert!(step_traced(&cfg, &state, &a, &canonical(EnvKind::Rope)).is_err());
    }

    #[test]
    fn invariants_hold_over_random_actions() {
        let cfg = SimConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let jitter = JitterConfig::default();
        for kind in [EnvKind::Rope, EnvKind::Cloth] {
            let mut state = match kind {
                EnvKind::Rope => EnvState::rope_line([0.5, 0.5], [1.0, 0.0], cfg.rope_rest),
                _ => EnvState::cloth_flat([0.5, 0.5], cfg.cloth_spacing),
            };
            let params =
                super::super::params::sample_render_params(&mut rng, kind, 32, true, &jitter).unwrap();
            for _ in 0..300 {
                let a = random_action(&mut rng, &state);
                let (s, trace) = step_traced(&cfg, &state, &a, &params).unwrap();
                for p in &s.positions {
                    assert!((0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1]) && p[2] >= 0.0);
                }
                assert!(max_rope_gap(&s) <= cfg.stretch_limit * cfg.rope_rest);
                for w in trace.relax_kinetic.windows(2) {
                    assert!(w[1] <= w[0] + 1e-9, "{kind}: kinetic energy rose {} -> {}", w[0], w[1]);
                }
                state = s;
            }
        }
    }

    #[test]
    fn cloth_settles_back_onto_the_table() {
        let cfg = SimConfig::default();
        let state = EnvState::cloth_flat([0.5, 0.5], cfg.cloth_spacing);
        let p = state.positions[40];
        let a = PickPlaceAction::new(EnvKind::Cloth, Some([p[0], p[1]]), &[0.5, 0.0, 1.0]).unwrap();
        let (s, _) = step_traced(&cfg, &state, &a, &canonical(EnvKind::Cloth)).unwrap();
        assert!(s.positions.iter().all(|p| p[2] < 1e-9));
        assert!(s.positions[40][0] > p[0]);
    }
}
