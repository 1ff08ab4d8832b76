use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::EnvKind;

/// Convolutional encoder: a stack of `conv -> bias -> leaky ReLU` layers
/// followed by one dense layer to the latent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub input_size: usize,
    pub kernels: Vec<usize>,
    pub strides: Vec<usize>,
    pub filters: Vec<usize>,
    pub pads: Vec<usize>,
    pub latent_dim: usize,
}

impl EncoderSpec {
    /// Six convolutions on 64x64 images.
    pub fn full() -> Self {
        EncoderSpec {
            input_size: 64,
            kernels: vec![3, 4, 3, 4, 4, 4],
            strides: vec![1, 2, 1, 2, 2, 2],
            filters: vec![64, 64, 64, 128, 256, 256],
            pads: vec![1; 6],
            latent_dim: 8,
        }
    }

    /// Four convolutions on 32x32 images.
    pub fn desk() -> Self {
        EncoderSpec {
            input_size: 32,
            kernels: vec![3, 4, 4, 4],
            strides: vec![1, 2, 2, 2],
            filters: vec![16, 32, 32, 64],
            pads: vec![1; 4],
            latent_dim: 8,
        }
    }

    /// Three convolutions on 16x16 images.
    pub fn tiny() -> Self {
        EncoderSpec {
            input_size: 16,
            kernels: vec![3, 4, 4],
            strides: vec![1, 2, 2],
            filters: vec![16, 32, 32],
            pads: vec![1; 3],
            latent_dim: 8,
        }
    }

    /// Preset matching an image size.
    pub fn for_size(size: usize) -> Result<Self> {
        match size {
            16 => Ok(Self::tiny()),
            32 => Ok(Self::desk()),
            64 => Ok(Self::full()),
            _ => Err(Error::InvalidArgument(format!("no encoder preset for {size}x{size} images"))),
        }
    }

    /// Side length after each convolution.
    pub fn sides(&self) -> Result<Vec<usize>> {
        let n = self.kernels.len();
        if n == 0 || self.strides.len() != n || self.filters.len() != n || self.pads.len() != n {
            return Err(Error::InvalidArgument("encoder kernels/strides/filters/pads must be equally long and nonempty".into()));
        }
        if self.latent_dim == 0 || self.filters.contains(&0) || self.strides.contains(&0) {
            return Err(Error::InvalidArgument("encoder dimensions must be positive".into()));
        }
        let mut side = self.input_size;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let padded = side + 2 * self.pads[i];
            if padded < self.kernels[i] {
                return Err(Error::InvalidArgument(format!("encoder layer {i} kernel exceeds its input")));
            }
            side = (padded - self.kernels[i]) / self.strides[i] + 1;
            out.push(side);
        }
        Ok(out)
    }

    /// Width of the flattened final feature map.
    pub fn flat_dim(&self) -> Result<usize> {
        let sides = self.sides()?;
        let last = *sides.last().expect("nonempty");
        Ok(self.filters.last().expect("nonempty") * last * last)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardVariant {
    /// One affine map of `concat(z, a)`.
    Linear,
    /// MLP of `concat(z, a)`.
    Mlp,
    /// MLP emitting `(A, c)`; the prediction is `A z + c`.
    MlpLinear,
}

impl ForwardVariant {
    pub const ALL: [ForwardVariant; 3] = [ForwardVariant::Linear, ForwardVariant::Mlp, ForwardVariant::MlpLinear];

    pub fn name(self) -> &'static str {
        match self {
            ForwardVariant::Linear => "linear",
            ForwardVariant::Mlp => "mlp",
            ForwardVariant::MlpLinear => "mlp_linear",
        }
    }
}

impl fmt::Display for ForwardVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ForwardVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown forward model `{s}` (linear|mlp|mlp_linear)")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardModelSpec {
    pub variant: ForwardVariant,
    pub hidden: Vec<usize>,
    /// For `mlp_linear`: feed the MLP only the action instead of `concat(z, a)`.
    #[serde(default)]
    pub action_only: bool,
}

impl Default for ForwardModelSpec {
    fn default() -> Self {
        ForwardModelSpec { variant: ForwardVariant::MlpLinear, hidden: vec![32, 32], action_only: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    /// `exp(-|z1 - z2|^2)`
    E2,
    /// `exp(z1 . z2)`
    LogBilinear,
}

impl Similarity {
    pub fn name(self) -> &'static str {
        match self {
            Similarity::E2 => "e2",
            Similarity::LogBilinear => "log_bilinear",
        }
    }
}

impl fmt::Display for Similarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Similarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "e2" => Ok(Similarity::E2),
            "log_bilinear" | "logbilinear" => Ok(Similarity::LogBilinear),
            _ => Err(Error::InvalidArgument(format!("unknown similarity `{s}` (e2|log_bilinear)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// InfoNCE over in-batch negatives.
    Cfm,
    /// Reconstruction plus latent forward prediction.
    Autoencoder,
    /// Latent forward prediction plus an inverse model.
    Joint,
    /// Latent forward prediction alone; collapses to a constant encoder.
    NaiveMse,
}

impl Objective {
    pub const ALL: [Objective; 4] = [Objective::Cfm, Objective::Autoencoder, Objective::Joint, Objective::NaiveMse];

    pub fn name(self) -> &'static str {
        match self {
            Objective::Cfm => "cfm",
            Objective::Autoencoder => "autoencoder",
            Objective::Joint => "joint",
            Objective::NaiveMse => "naive_mse",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown objective `{s}` (cfm|autoencoder|joint|naive_mse)")))
    }
}

/// Everything needed to rebuild a model's computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub env: EnvKind,
    pub encoder: EncoderSpec,
    pub forward: ForwardModelSpec,
    pub objective: Objective,
    pub similarity: Similarity,
    /// Whether the positive term sits in the InfoNCE denominator.
    pub include_positive: bool,
    /// Weight of the latent forward term in the autoencoder objective.
    pub lambda_forward: f64,
    /// Weight of the inverse term in the joint objective.
    pub lambda_inverse: f64,
    pub inverse_hidden: Vec<usize>,
}

impl ModelSpec {
    pub fn new(env: EnvKind, image_size: usize, objective: Objective) -> Result<Self> {
        Ok(ModelSpec {
            env,
            encoder: EncoderSpec::for_size(image_size)?,
            forward: ForwardModelSpec::default(),
            objective,
            similarity: Similarity::E2,
            include_positive: true,
            lambda_forward: 1.0,
            lambda_inverse: 1.0,
            inverse_hidden: vec![32, 32],
        })
    }

    pub fn action_dim(&self) -> usize {
        self.env.action_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.latent_dim
    }

    pub fn has_decoder(&self) -> bool {
        self.objective == Objective::Autoencoder
    }

    pub fn has_inverse(&self) -> bool {
        self.objective == Objective::Joint
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.sides()?;
        if self.has_decoder() {
            let sides = self.encoder.sides()?;
            let ups = self.encoder.strides.iter().filter(|&&s| s == 2).count();
            if self.encoder.strides.iter().any(|&s| s > 2) || sides.last().copied().unwrap_or(0) << ups != self.encoder.input_size {
                return Err(Error::InvalidArgument(
                    "the decoder needs an encoder whose strides are 1 or 2 and halve the image exactly".into(),
                ));
            }
        }
        if self.forward.hidden.contains(&0) || self.inverse_hidden.contains(&0) {
            return Err(Error::InvalidArgument("hidden sizes must be positive".into()));
        }
        if self.forward.variant == ForwardVariant::Mlp && self.forward.hidden.is_empty() {
            return Err(Error::InvalidArgument("the mlp forward model needs at least one hidden layer".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_reduce_to_four_by_four() {
        assert_eq!(EncoderSpec::full().sides().unwrap(), vec![64, 32, 32, 16, 8, 4]);
        assert_eq!(EncoderSpec::desk().sides().unwrap(), vec![32, 16, 8, 4]);
        assert_eq!(EncoderSpec::tiny().sides().unwrap(), vec![16, 8, 4]);
        assert_eq!(EncoderSpec::desk().flat_dim().unwrap(), 64 * 16);
        assert!(EncoderSpec::for_size(48).is_err());
    }

    #[test]
    fn names_round_trip() {
        for v in ForwardVariant::ALL {
            assert_eq!(v.name().parse::<ForwardVariant>().unwrap(), v);
        }
        for o in Objective::ALL {
            assert_eq!(o.name().parse::<Objective>().unwrap(), o);
        }
        assert_eq!("log_bilinear".parse::<Similarity>().unwrap(), Similarity::LogBilinear);
        let s = ModelSpec::new(EnvKind::Rope, 32, Objective::Autoencoder).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<ModelSpec>(&json).unwrap(), s);
        s.validate().unwrap();
    }
}
