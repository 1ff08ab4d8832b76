use serde::{Deserialize, Serialize};

use super::loss::{objective_loss, LossInputs};
use super::spec::ModelSpec;
use super::Model;
use crate::dataset::TransitionView;
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamConfig, Graph};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 30, batch_size: 128, adam: AdamConfig::default(), seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument("batch_size must be at least 2".into()));
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && a.lr.is_finite() && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(Error::InvalidArgument("adam needs lr > 0, betas in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub batches: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    /// Mean loss of every epoch.
    pub losses: Vec<f64>,
}

/// Trains `spec` on the transitions of `view` with Adam. Batches come from a
/// fresh shuffle each epoch; the result depends only on the inputs.
pub fn train(
    view: TransitionView<'_>,
    spec: ModelSpec,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats, &Model),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if view.kind() != spec.env {
        return Err(Error::InvalidArgument(format!("{} dataset for a {} model", view.kind(), spec.env)));
    }
    if view.image_size() != spec.encoder.input_size {
        return Err(Error::InvalidArgument(format!(
            "dataset images are {}x{}, the encoder expects {}",
            view.image_size(),
            view.image_size(),
            spec.encoder.input_size
        )));
    }
    if view.len() < cfg.batch_size {
        return Err(Error::InvalidArgument(format!(
            "dataset holds {} transitions, fewer than one batch of {}",
            view.len(),
            cfg.batch_size
        )));
    }
    let config = serde_json::to_value(cfg)?;
    let mut model = Model::new(spec, cfg.seed, config)?;
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut r = rng::stream(cfg.seed, "batches", epoch as u64);
        let batches = view.epoch(cfg.batch_size, &mut r)?;
        let mut total = 0.0;
        for (bi, idx) in batches.iter().enumerate() {
            let inputs = LossInputs::<f32>::from_batch(&view.batch(idx)?);
            let mut g = Graph::new();
            let diverged = |e: Error| match e {
                Error::NonFinite(_) => Error::Divergence { epoch, batch: bi, loss: f64::NAN },
                other => other,
            };
            let loss = objective_loss(&mut g, &model.params, &model.spec, &inputs).map_err(diverged)?;
            let value = g.value(loss).item() as f64;
            if !value.is_finite() {
                return Err(Error::Divergence { epoch, batch: bi, loss: value });
            }
            let grads = g.backward(loss).map_err(diverged)?;
            model.params.zero_grads();
            model.params.accumulate(&g, &grads)?;
            adam_step(&mut model.params, &cfg.adam)?;
            total += value;
        }
        let stats = EpochStats { epoch, mean_loss: total / batches.len() as f64, batches: batches.len() };
        log::info!("epoch {} loss {:.6}", epoch + 1, stats.mean_loss);
        on_epoch(&stats, &model);
        losses.push(stats.mean_loss);
    }
    Ok(TrainOutcome { model, losses })
}

/// Per-dimension standard deviation of the latents of the first `limit`
/// observations of `view`.
pub fn embedding_std(model: &Model, view: TransitionView<'_>, limit: usize) -> Result<Vec<f64>> {
    let n = view.len().min(limit);
    if n < 2 {
        return Err(Error::InvalidArgument("need at least 2 observations".into()));
    }
    let idx: Vec<usize> = (0..n).collect();
    let mut zs = Vec::with_capacity(n);
    for chunk in idx.chunks(256) {
        let ids = if chunk.len() == 1 { vec![chunk[0], chunk[0]] } else { chunk.to_vec() };
        let b = view.batch(&ids)?;
        let mut z = model.encode_tensor(b.obs)?;
        z.truncate(chunk.len());
        zs.extend(z);
    }
    let d = model.latent_dim();
    let mut out = vec![0.0; d];
    for (k, o) in out.iter_mut().enumerate() {
        let mean = zs.iter().map(|z| z[k] as f64).sum::<f64>() / n as f64;
        let var = zs.iter().map(|z| (z[k] as f64 - mean).powi(2)).sum::<f64>() / n as f64;
        *o = var.sqrt();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::collect_random;
    use crate::models::spec::Objective;
    use crate::sim::{Env, EnvKind};

    #[test]
    fn training_is_deterministic_and_rejects_mismatches() {
        let env = Env::new(EnvKind::Pointmass, 16).unwrap();
        let data = collect_random(&env, 4, 10, 5, false).unwrap();
        let spec = ModelSpec::new(EnvKind::Pointmass, 16, Objective::Cfm).unwrap();
        let cfg = TrainConfig { epochs: 2, batch_size: 16, seed: 3, ..TrainConfig::default() };
        let mut seen = Vec::new();
        let a = train(data.transitions(), spec.clone(), &cfg, |s, _| seen.push(s.epoch)).unwrap();
        let b = train(data.transitions(), spec.clone(), &cfg, |_, _| {}).unwrap();
        assert_eq!(seen, vec![0, 1]);
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.model.params, b.model.params);
        assert_eq!(a.model.params.step_count(), 4);
        assert!(a.losses.iter().all(|l| l.is_finite()));
        assert_eq!(embedding_std(&a.model, data.transitions(), 40).unwrap().len(), 8);

        let rope = ModelSpec::new(EnvKind::Rope, 16, Objective::Cfm).unwrap();
        assert!(train(data.transitions(), rope, &cfg, |_, _| {}).is_err());
        let big = TrainConfig { batch_size: 64, ..cfg.clone() };
        assert!(train(data.transitions(), spec.clone(), &big, |_, _| {}).is_err());
        let bad = TrainConfig { epochs: 0, ..cfg };
        assert!(train(data.transitions(), spec, &bad, |_, _| {}).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let env = Env::new(EnvKind::Pointmass, 16).unwrap();
        let data = collect_random(&env, 2, 10, 1, false).unwrap();
        let spec = ModelSpec::new(EnvKind::Pointmass, 16, Objective::NaiveMse).unwrap();
        let mut cfg = TrainConfig { epochs: 3, batch_size: 8, ..TrainConfig::default() };
        cfg.adam.lr = 1e30;
        match train(data.transitions(), spec, &cfg, |_, _| {}) {
            Err(Error::Divergence { .. }) => {}
            other => panic!("expected divergence, got {:?}", other.map(|o| o.losses)),
        }
    }
}
