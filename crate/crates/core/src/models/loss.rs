use super::net::{decoder, encoder, forward_model, inverse_model, log_similarity};
use super::spec::{ModelSpec, Objective, Similarity};
use crate::dataset::Batch;
use crate::error::{Error, Result};
use crate::nn::{Graph, ParamStore, Scalar, Tensor, Var};

/// Batch tensors at the working precision.
#[derive(Debug, Clone)]
pub struct LossInputs<T> {
    pub obs: Tensor<T>,
    pub actions: Tensor<T>,
    pub next_obs: Tensor<T>,
}

impl<T: Scalar> LossInputs<T> {
    pub fn from_batch(b: &Batch) -> Self {
        LossInputs { obs: b.obs.cast(), actions: b.actions.cast(), next_obs: b.next_obs.cast() }
    }

    pub fn rows(&self) -> usize {
        self.obs.shape()[0]
    }
}

pub fn similarity_e2(z1: &[f64], z2: &[f64]) -> f64 {
    (-z1.iter().zip(z2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).exp()
}

pub fn similarity_logbilinear(z1: &[f64], z2: &[f64]) -> f64 {
    z1.iter().zip(z2).map(|(a, b)| a * b).sum::<f64>().exp()
}

pub fn similarity(sim: Similarity, z1: &[f64], z2: &[f64]) -> f64 {
    match sim {
        Similarity::E2 => similarity_e2(z1, z2),
        Similarity::LogBilinear => similarity_logbilinear(z1, z2),
    }
}

/// `sum |x - y|^2 / rows` for two `[rows, n]` nodes.
fn row_sq_error<T: Scalar>(g: &mut Graph<T>, x: Var, y: Var) -> Result<Var> {
    let rows = g.shape(x)[0];
    let d = g.sub(x, y)?;
    let sq = g.square(d)?;
    let s = g.sum(sq)?;
    g.scale(s, 1.0 / rows as f64)
}

/// InfoNCE from predicted and actual next latents; row `i` of `target` is
/// the positive for row `i` of `pred`.
pub fn infonce<T: Scalar>(g: &mut Graph<T>, sim: Similarity, include_positive: bool, pred: Var, target: Var) -> Result<Var> {
    if g.shape(pred)[0] < 2 {
        return Err(Error::InvalidArgument("InfoNCE needs at least 2 rows".into()));
    }
    let logits = log_similarity(g, sim, pred, target)?;
    g.infonce(logits, include_positive)
}

/// Latents of both frames and the forward prediction.
pub struct Encoded {
    pub z: Var,
    pub z_next: Var,
    pub pred: Var,
}

pub fn encode_pair<T: Scalar>(g: &mut Graph<T>, p: &ParamStore<T>, spec: &ModelSpec, x: &LossInputs<T>) -> Result<Encoded> {
    let obs = g.input(x.obs.clone());
    let next = g.input(x.next_obs.clone());
    let act = g.input(x.actions.clone());
    let z = encoder(g, p, spec, obs)?;
    let z_next = encoder(g, p, spec, next)?;
    let pred = forward_model(g, p, spec, z, act)?;
    Ok(Encoded { z, z_next, pred })
}

/// The scalar training loss of `spec.objective`.
pub fn objective_loss<T: Scalar>(g: &mut Graph<T>, p: &ParamStore<T>, spec: &ModelSpec, x: &LossInputs<T>) -> Result<Var> {
    if x.rows() < 2 {
        return Err(Error::InvalidArgument("a batch needs at least 2 rows".into()));
    }
    let e = encode_pair(g, p, spec, x)?;
    match spec.objective {
        Objective::Cfm => infonce(g, spec.similarity, spec.include_positive, e.pred, e.z_next),
        Objective::NaiveMse => row_sq_error(g, e.pred, e.z_next),
        Objective::Autoencoder => {
            if !p.contains("dec.fc.w") {
                return Err(Error::MissingHead("decoder parameters"));
            }
            let recon = decoder(g, p, spec, e.z)?;
            let obs = g.input(x.obs.clone());
            let diff = g.sub(recon, obs)?;
            let sq = g.square(diff)?;
            let rec = g.mean(sq)?;
            let fwd = row_sq_error(g, e.pred, e.z_next)?;
            let fwd = g.scale(fwd, spec.lambda_forward)?;
            g.add(rec, fwd)
        }
        Objective::Joint => {
            if !p.contains("inv.out.w") {
                return Err(Error::MissingHead("inverse model parameters"));
            }
            let inv = inverse_model(g, p, spec, e.z, e.z_next)?;
            let act = g.input(x.actions.clone());
            let fwd = row_sq_error(g, e.pred, e.z_next)?;
            let inv_term = row_sq_error(g, inv, act)?;
            let inv_term = g.scale(inv_term, spec.lambda_inverse)?;
            g.add(fwd, inv_term)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::net::init_params;
    use crate::sim::EnvKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn similarity_values() {
        let a = [0.3, -0.2, 1.0];
        assert_eq!(similarity_e2(&a, &a), 1.0);
        assert!((similarity_e2(&[0.0, 0.0], &[1.0, 0.0]) - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(similarity_e2(&a, &[0.0; 3]), similarity_e2(&[0.0; 3], &a));
        assert_eq!(similarity_logbilinear(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
        assert!((similarity_logbilinear(&[1.0, 0.0], &[1.0, 0.0]) - std::f64::consts::E).abs() < 1e-15);
        let s1 = similarity_logbilinear(&a, &a);
        let scaled: Vec<f64> = a.iter().map(|v| v * 1.5).collect();
        assert!(similarity_logbilinear(&a, &scaled) > s1);
    }

    fn inputs(rng: &mut ChaCha8Rng, rows: usize, size: usize, adim: usize) -> LossInputs<f64> {
        let mut img = || Tensor::from_fn(&[rows, 3, size, size], |_| rng.gen_range(-1.0..1.0));
        let obs = img();
        let next_obs = img();
        LossInputs { obs, next_obs, actions: Tensor::from_fn(&[rows, adim], |i| (i as f64 * 0.37).sin()) }
    }

    #[test]
    fn infonce_far_negatives_vanish() {
        let mut g = Graph::<f64>::new();
        let mut pred = vec![0.0; 4 * 2];
        for (i, row) in pred.chunks_mut(2).enumerate() {
            row[0] = i as f64 * 50f64.sqrt();
        }
        let p = g.input(Tensor::new(vec![4, 2], pred.clone()).unwrap());
        let t = g.input(Tensor::new(vec![4, 2], pred).unwrap());
        let l = infonce(&mut g, Similarity::E2, true, p, t).unwrap();
        assert!(g.value(l).item() < 1e-6);
    }

    #[test]
    fn heads_are_required() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = inputs(&mut rng, 2, 16, 4);
        let cfm = ModelSpec::new(EnvKind::Rope, 16, Objective::Cfm).unwrap();
        let p: ParamStore<f64> = init_params(&cfm, &mut rng).unwrap();
        for obj in [Objective::Autoencoder, Objective::Joint] {
            let spec = ModelSpec { objective: obj, ..cfm.clone() };
            let mut g = Graph::new();
            assert!(matches!(objective_loss(&mut g, &p, &spec, &x), Err(Error::MissingHead(_))));
        }
        let x1 = inputs(&mut rng, 1, 16, 4);
        assert!(objective_loss(&mut Graph::new(), &p, &cfm, &x1).is_err());
    }

    #[test]
    fn every_objective_is_finite_at_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = inputs(&mut rng, 3, 16, 4);
        for obj in Objective::ALL {
            let spec = ModelSpec::new(EnvKind::Rope, 16, obj).unwrap();
            let p: ParamStore<f64> = init_params(&spec, &mut rng).unwrap();
            let mut g = Graph::new();
            let l = objective_loss(&mut g, &p, &spec, &x).unwrap();
            assert!(g.value(l).item().is_finite());
            g.backward(l).unwrap();
        }
    }
}
