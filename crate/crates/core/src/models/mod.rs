//! Encoder, latent forward models, objectives and training.

pub mod checkpoint;
mod loss;
pub mod net;
mod spec;
mod train;

pub use loss::{
    encode_pair, infonce, objective_loss, similarity, similarity_e2, similarity_logbilinear, Encoded, LossInputs,
};
pub use spec::{EncoderSpec, ForwardModelSpec, ForwardVariant, ModelSpec, Objective, Similarity};
pub use train::{embedding_std, train, EpochStats, TrainConfig, TrainOutcome};

use crate::error::{Error, Result};
use crate::nn::{Graph, ParamStore, Tensor};
use crate::rng;
use crate::sim::{normalize_into, ImageObs, PickPlaceAction};

/// A latent vector `z = g(o)`.
pub type Latent = Vec<f32>;

/// Images per encoder pass at inference time.
const INFERENCE_CHUNK: usize = 256;

/// Trained (or freshly initialized) parameters together with their spec.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamStore<f32>,
    /// Echo of the configuration that produced the parameters.
    pub config: serde_json::Value,
}

impl Model {
    pub fn new(spec: ModelSpec, seed: u64, config: serde_json::Value) -> Result<Self> {
        let mut r = rng::stream(seed, "init", 0);
        let params = net::init_params(&spec, &mut r)?;
        Ok(Model { spec, params, config })
    }

    /// Verifies that the parameters have exactly the layout `spec` implies.
    pub fn check_layout(&self) -> Result<()> {
        let mut r = rng::stream(0, "layout", 0);
        let expected: ParamStore<f32> = net::init_params(&self.spec, &mut r)?;
        if self.spec.has_decoder() && !self.params.contains("dec.fc.w") {
            return Err(Error::MissingHead("decoder parameters"));
        }
        if self.spec.has_inverse() && !self.params.contains("inv.out.w") {
            return Err(Error::MissingHead("inverse model parameters"));
        }
        if self.params.len() != expected.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                self.params.len()
            )));
        }
        for p in expected.iter() {
            match self.params.get(&p.name) {
                Some(v) if v.shape() == p.value.shape() => {}
                Some(v) => {
                    return Err(Error::Shape(format!(
                        "parameter `{}` has shape {:?}, spec implies {:?}",
                        p.name,
                        v.shape(),
                        p.value.shape()
                    )))
                }
                None => return Err(Error::Shape(format!("missing parameter `{}`", p.name))),
            }
        }
        Ok(())
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.latent_dim()
    }

    pub fn image_size(&self) -> usize {
        self.spec.encoder.input_size
    }

    fn images_tensor(&self, obs: &[&ImageObs]) -> Result<Tensor<f32>> {
        let s = self.image_size();
        let mut data = Vec::with_capacity(obs.len() * 3 * s * s);
        for o in obs {
            if o.size() != s {
                return Err(Error::Shape(format!("model expects {s}x{s} images, got {}x{}", o.size(), o.size())));
            }
            normalize_into(o.pixels(), s, &mut data);
        }
        Tensor::new(vec![obs.len(), 3, s, s], data)
    }

    /// Latents of pre-normalized images `[B, 3, H, W]`.
    pub fn encode_tensor(&self, x: Tensor<f32>) -> Result<Vec<Latent>> {
        let mut g = Graph::new();
        let xv = g.input(x);
        let z = net::encoder(&mut g, &self.params, &self.spec, xv)?;
        let out = g.value(z);
        if !out.all_finite() {
            return Err(Error::NonFinite("latent".into()));
        }
        Ok(out.data().chunks(self.latent_dim()).map(<[f32]>::to_vec).collect())
    }

    pub fn encode(&self, obs: &ImageObs) -> Result<Latent> {
        Ok(self.encode_batch(&[obs])?.remove(0))
    }

    pub fn encode_batch(&self, obs: &[&ImageObs]) -> Result<Vec<Latent>> {
        let mut out = Vec::with_capacity(obs.len());
        for chunk in obs.chunks(INFERENCE_CHUNK) {
            out.extend(self.encode_tensor(self.images_tensor(chunk)?)?);
        }
        Ok(out)
    }

    pub fn forward_latent(&self, z: &[f32], action: &PickPlaceAction) -> Result<Latent> {
        Ok(self.predict_batch(z, std::slice::from_ref(action))?.remove(0))
    }

    /// `f(z, a)` for one latent and many actions.
    pub fn predict_batch(&self, z: &[f32], actions: &[PickPlaceAction]) -> Result<Vec<Latent>> {
        let d = self.latent_dim();
        let adim = self.spec.action_dim();
        if z.len() != d {
            return Err(Error::Shape(format!("latent has {} dims, model uses {d}", z.len())));
        }
        if actions.is_empty() {
            return Ok(Vec::new());
        }
        if let Some(a) = actions.iter().find(|a| a.kind() != self.spec.env) {
            return Err(Error::InvalidArgument(format!("{} action for a {} model", a.kind(), self.spec.env)));
        }
        let n = actions.len();
        let zs = Tensor::new(vec![n, d], z.repeat(n))?;
        let av: Vec<f32> = actions.iter().flat_map(|a| a.features()).collect();
        let mut g = Graph::new();
        let zv = g.input(zs);
        let avar = g.input(Tensor::new(vec![n, adim], av)?);
        let pred = net::forward_model(&mut g, &self.params, &self.spec, zv, avar)?;
        Ok(g.value(pred).data().chunks(d).map(<[f32]>::to_vec).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Env, EnvKind, RenderParams};

    fn model(variant: ForwardVariant) -> Model {
        let mut spec = ModelSpec::new(EnvKind::Rope, 16, Objective::Cfm).unwrap();
        spec.forward.variant = variant;
        Model::new(spec, 1, serde_json::Value::Null).unwrap()
    }

    #[test]
    fn encode_is_deterministic_and_batch_consistent() {
        let m = model(ForwardVariant::MlpLinear);
        let env = Env::new(EnvKind::Rope, 16).unwrap();
        let obs: Vec<ImageObs> = (0..5).map(|s| env.reset(s, true).unwrap().1).collect();
        let refs: Vec<&ImageObs> = obs.iter().collect();
        let batch = m.encode_batch(&refs).unwrap();
        for (o, z) in obs.iter().zip(&batch) {
            assert_eq!(&m.encode(o).unwrap(), z);
            assert_eq!(z.len(), 8);
        }
        let big = ImageObs::new(32, vec![0; 32 * 32 * 3]).unwrap();
        assert!(m.encode(&big).is_err());
    }

    #[test]
    fn identity_and_bias_forward_cases() {
        let a = PickPlaceAction::new(EnvKind::Rope, Some([0.3, 0.6]), &[0.5, -0.5]).unwrap();
        let z: Vec<f32> = (0..8).map(|i| i as f32 * 0.25 - 1.0).collect();

        let mut m = model(ForwardVariant::MlpLinear);
        assert_eq!(m.forward_latent(&z, &a).unwrap(), z);
        for (i, v) in m.params.get_mut("fwd.out.w").unwrap().data_mut().iter_mut().enumerate() {
            *v = (i % 7) as f32 * 0.1;
        }
        assert_ne!(m.forward_latent(&z, &a).unwrap(), z);
        let names: Vec<String> = m.params.names().filter(|n| n.starts_with("fwd.") && n.ends_with(".w")).map(String::from).collect();
        for n in &names {
            m.params.get_mut(n).unwrap().fill(0.0);
        }
        assert_eq!(m.forward_latent(&z, &a).unwrap(), z);

        let mut m = model(ForwardVariant::Linear);
        m.params.get_mut("fwd.w").unwrap().fill(0.0);
        let bias: Vec<f32> = (0..8).map(|i| i as f32).collect();
        m.params.get_mut("fwd.b").unwrap().data_mut().copy_from_slice(&bias);
        assert_eq!(m.forward_latent(&z, &a).unwrap(), bias);
        assert_eq!(m.forward_latent(&[0.0; 8], &a).unwrap(), bias);

        let pm = PickPlaceAction::new(EnvKind::Pointmass, None, &[0.0, 0.0]).unwrap();
        assert!(m.forward_latent(&z, &pm).is_err());
        assert!(m.forward_latent(&z[..4], &a).is_err());
    }

    #[test]
    fn layout_check_catches_mismatches() {
        let mut m = model(ForwardVariant::Mlp);
        m.check_layout().unwrap();
        m.spec.forward.variant = ForwardVariant::Linear;
        assert!(m.check_layout().is_err());
        let _ = RenderParams::canonical(EnvKind::Rope, 16);
    }
}
