//! One-step model-predictive control in latent space, and the random policy.

use rand::Rng;

use crate::dataset::random_action;
use crate::error::{Error, Result};
use crate::models::{Latent, Model};
use crate::sim::{BinaryMask, EnvKind, ImageObs, PickPlaceAction};

/// What the planner needs from a model: an encoder and a batched forward
/// model. Implemented by [`Model`]; tests inject hand-built latents.
pub trait LatentModel {
    fn env_kind(&self) -> EnvKind;
    fn encode(&self, obs: &ImageObs) -> Result<Latent>;
    fn predict_batch(&self, z: &[f32], actions: &[PickPlaceAction]) -> Result<Vec<Latent>>;
}

impl LatentModel for Model {
    fn env_kind(&self) -> EnvKind {
        self.spec.env
    }

    fn encode(&self, obs: &ImageObs) -> Result<Latent> {
        Model::encode(self, obs)
    }

    fn predict_batch(&self, z: &[f32], actions: &[PickPlaceAction]) -> Result<Vec<Latent>> {
        Model::predict_batch(self, z, actions)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    /// Index of the executed candidate.
    pub chosen: usize,
    pub candidates: Vec<PickPlaceAction>,
    /// `|f(z, a) - z_goal|` per candidate.
    pub distances: Vec<f64>,
    pub z: Latent,
    pub z_goal: Latent,
}

impl PlanResult {
    pub fn action(&self) -> &PickPlaceAction {
        &self.candidates[self.chosen]
    }

    pub fn best_distance(&self) -> f64 {
        self.distances[self.chosen]
    }
}

/// `n` actions with picks uniform over the foreground and deltas uniform in
/// `[-1, 1]^d`.
pub fn sample_candidate_actions<R: Rng + ?Sized>(
    mask: &BinaryMask,
    n: usize,
    rng: &mut R,
    kind: EnvKind,
) -> Result<Vec<PickPlaceAction>> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one candidate".into()));
    }
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    (0..n).map(|_| random_action(rng, kind, mask)).collect()
}

pub fn random_policy_step<R: Rng + ?Sized>(mask: &BinaryMask, rng: &mut R, kind: EnvKind) -> Result<PickPlaceAction> {
    Ok(sample_candidate_actions(mask, 1, rng, kind)?.remove(0))
}

pub fn l2(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum::<f64>().sqrt()
}

/// Index of the smallest value; the first one wins ties. NaN never wins.
pub fn argmin(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.map_or(true, |b| v < values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Scores given candidates from already encoded latents.
pub fn score_candidates<M: LatentModel + ?Sized>(
    model: &M,
    z: Latent,
    z_goal: Latent,
    candidates: Vec<PickPlaceAction>,
) -> Result<PlanResult> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("need at least one candidate".into()));
    }
    if z.len() != z_goal.len() {
        return Err(Error::Shape(format!("latent {} vs goal latent {}", z.len(), z_goal.len())));
    }
    let preds = model.predict_batch(&z, &candidates)?;
    let distances: Vec<f64> = preds.iter().map(|p| l2(p, &z_goal)).collect();
    let chosen = argmin(&distances).ok_or_else(|| Error::NonFinite("every candidate distance".into()))?;
    Ok(PlanResult { chosen, candidates, distances, z, z_goal })
}

/// Samples `n` candidates on `mask` and scores them from latents.
pub fn plan_from_latents<M: LatentModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    z: Latent,
    z_goal: Latent,
    mask: &BinaryMask,
    n: usize,
    rng: &mut R,
) -> Result<PlanResult> {
    let candidates = sample_candidate_actions(mask, n, rng, model.env_kind())?;
    score_candidates(model, z, z_goal, candidates)
}

pub fn plan_step<M: LatentModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    obs: &ImageObs,
    goal_obs: &ImageObs,
    mask: &BinaryMask,
    n: usize,
    rng: &mut R,
) -> Result<PlanResult> {
    let z_goal = model.encode(goal_obs)?;
    Planner { model, z_goal }.plan(obs, mask, n, rng)
}

/// A planner bound to one goal; the goal latent is encoded once.
pub struct Planner<'a, M: LatentModel + ?Sized> {
    model: &'a M,
    z_goal: Latent,
}

impl<'a, M: LatentModel + ?Sized> Planner<'a, M> {
    pub fn new(model: &'a M, goal_obs: &ImageObs) -> Result<Self> {
        Ok(Planner { model, z_goal: model.encode(goal_obs)? })
    }

    pub fn goal_latent(&self) -> &[f32] {
        &self.z_goal
    }

    pub fn plan<R: Rng + ?Sized>(&self, obs: &ImageObs, mask: &BinaryMask, n: usize, rng: &mut R) -> Result<PlanResult> {
        let z = self.model.encode(obs)?;
        plan_from_latents(self.model, z, self.z_goal.clone(), mask, n, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ModelSpec, Objective};
    use crate::rng;
    use crate::sim::{segment, Env};

    /// Latent = the two action deltas' effect on a point; forward adds them.
    struct Shift;

    impl LatentModel for Shift {
        fn env_kind(&self) -> EnvKind {
            EnvKind::Rope
        }

        fn encode(&self, _obs: &ImageObs) -> Result<Latent> {
            Ok(vec![0.0, 0.0])
        }

        fn predict_batch(&self, z: &[f32], actions: &[PickPlaceAction]) -> Result<Vec<Latent>> {
            Ok(actions.iter().map(|a| vec![z[0] + a.delta()[0] as f32, z[1] + a.delta()[1] as f32]).collect())
        }
    }

    fn rope_mask() -> (ImageObs, BinaryMask) {
        let env = Env::new(EnvKind::Rope, 16).unwrap();
        let (_, obs, params) = env.reset(4, true).unwrap();
        let mask = segment(&obs, &params);
        (obs, mask)
    }

    #[test]
    fn candidates_lie_on_the_mask() {
        let (_, mask) = rope_mask();
        let c = sample_candidate_actions(&mask, 100, &mut rng::stream(1, "c", 0), EnvKind::Rope).unwrap();
        assert_eq!(c.len(), 100);
        for a in &c {
            let [x, y] = a.pick().unwrap();
            assert!(mask.get((y * 16.0) as usize, (x * 16.0) as usize));
            assert!(a.delta().iter().all(|d| d.abs() <= 1.0));
        }
        let again = sample_candidate_actions(&mask, 100, &mut rng::stream(1, "c", 0), EnvKind::Rope).unwrap();
        assert_eq!(c, again);

        let mut bits = vec![false; 16 * 16];
        bits[5 * 16 + 9] = true;
        let single = BinaryMask::from_bits(16, bits).unwrap();
        let c = sample_candidate_actions(&single, 20, &mut rng::stream(2, "c", 0), EnvKind::Rope).unwrap();
        assert!(c.iter().all(|a| a.pick() == c[0].pick()));
        assert!(c.iter().any(|a| a.delta() != c[0].delta()));

        let empty = BinaryMask::from_bits(16, vec![false; 256]).unwrap();
        assert!(matches!(sample_candidate_actions(&empty, 5, &mut rng::stream(0, "c", 0), EnvKind::Rope), Err(Error::EmptyMask)));
        assert!(matches!(random_policy_step(&empty, &mut rng::stream(0, "c", 0), EnvKind::Rope), Err(Error::EmptyMask)));
    }

    #[test]
    fn exact_match_wins_and_ties_take_the_first() {
        let (obs, mask) = rope_mask();
        let mut r = rng::stream(3, "p", 0);
        let cands = sample_candidate_actions(&mask, 50, &mut r, EnvKind::Rope).unwrap();
        let target = cands[17].delta();
        let goal = vec![target[0] as f32, target[1] as f32];
        let res = score_candidates(&Shift, vec![0.0, 0.0], goal, cands).unwrap();
        assert_eq!(res.chosen, 17);
        assert_eq!(res.best_distance(), 0.0);
        assert!(res.distances.iter().all(|&d| d >= res.best_distance()));

        assert_eq!(argmin(&[2.0, 1.0, 1.0, f64::NAN]), Some(1));
        assert_eq!(argmin(&[f64::NAN]), None);
        let _ = obs;
    }

    #[test]
    fn plan_step_is_deterministic_and_monotone_in_candidates() {
        let (obs, mask) = rope_mask();
        let env = Env::new(EnvKind::Rope, 16).unwrap();
        let (_, goal, _) = env.reset(9, false).unwrap();
        let model = Model::new(ModelSpec::new(EnvKind::Rope, 16, Objective::Cfm).unwrap(), 2, serde_json::Value::Null).unwrap();
        let a = plan_step(&model, &obs, &goal, &mask, 40, &mut rng::stream(5, "p", 0)).unwrap();
        let b = plan_step(&model, &obs, &goal, &mask, 40, &mut rng::stream(5, "p", 0)).unwrap();
        assert_eq!(a, b);
        let more = plan_step(&model, &obs, &goal, &mask, 80, &mut rng::stream(5, "p", 0)).unwrap();
        assert_eq!(&more.candidates[..40], &a.candidates[..]);
        assert!(more.best_distance() <= a.best_distance());

        let squashed: Vec<f64> = a.distances.iter().map(|d| (3.0 * d).exp()).collect();
        assert_eq!(argmin(&squashed), Some(a.chosen));
    }
}
