//! Parameter layout and graph builders for every network.
//!
//! Parameter names: `enc.conv{i}.{w,b}`, `enc.fc.{w,b}`, `fwd.l{i}.{w,b}`
//! and `fwd.out.{w,b}` (or `fwd.{w,b}` for the linear variant),
//! `dec.fc.{w,b}`, `dec.deconv{i}.{w,b}`, `inv.l{i}.{w,b}`, `inv.out.{w,b}`.

use rand::Rng;

use super::spec::{ForwardVariant, ModelSpec, Similarity};
use crate::error::Result;
use crate::nn::{glorot_uniform, Graph, ParamStore, Scalar, Tensor, Var, LEAKY_SLOPE};

const DECONV_KERNEL: usize = 4;

fn dense_params<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    prefix: &str,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Result<()> {
    store.insert(&format!("{prefix}.w"), glorot_uniform(&[fan_in, fan_out], fan_in, fan_out, rng))?;
    store.insert(&format!("{prefix}.b"), Tensor::zeros(&[fan_out]))
}

fn mlp_params<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    prefix: &str,
    input: usize,
    hidden: &[usize],
    output: usize,
    rng: &mut R,
) -> Result<()> {
    let mut width = input;
    for (i, &h) in hidden.iter().enumerate() {
        dense_params(store, &format!("{prefix}.l{i}"), width, h, rng)?;
        width = h;
    }
    dense_params(store, &format!("{prefix}.out"), width, output, rng)
}

/// Decoder layers as `(in_channels, out_channels, output_side)`: one
/// transposed convolution per stride-2 encoder layer, in reverse.
pub fn decoder_layers(spec: &ModelSpec) -> Result<Vec<(usize, usize, usize)>> {
    let enc = &spec.encoder;
    let sides = enc.sides()?;
    let mut side = *sides.last().expect("nonempty");
    let down: Vec<usize> = (0..enc.strides.len()).filter(|&i| enc.strides[i] == 2).collect();
    let mut channels = *enc.filters.last().expect("nonempty");
    let mut out = Vec::new();
    for (n, &i) in down.iter().enumerate().rev() {
        let next = if n == 0 { 3 } else { enc.filters[i - 1] };
        side *= 2;
        out.push((channels, next, side));
        channels = next;
    }
    Ok(out)
}

/// Fresh parameters for the encoder, forward model and whichever head the
/// objective needs. Weights are Glorot-uniform, biases zero. The output bias
/// of the `mlp_linear` forward model starts at `A = I, c = 0`.
pub fn init_params<T: Scalar, R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<ParamStore<T>> {
    spec.validate()?;
    let enc = &spec.encoder;
    let d = enc.latent_dim;
    let a = spec.action_dim();
    let mut store = ParamStore::new();
    let mut channels = 3;
    for i in 0..enc.kernels.len() {
        let (k, f) = (enc.kernels[i], enc.filters[i]);
        let kernel = glorot_uniform(&[f, channels, k, k], channels * k * k, f * k * k, rng);
        store.insert(&format!("enc.conv{i}.w"), kernel)?;
        store.insert(&format!("enc.conv{i}.b"), Tensor::zeros(&[f]))?;
        channels = f;
    }
    dense_params(&mut store, "enc.fc", enc.flat_dim()?, d, rng)?;

    let fwd = &spec.forward;
    match fwd.variant {
        ForwardVariant::Linear => dense_params(&mut store, "fwd", d + a, d, rng)?,
        ForwardVariant::Mlp => mlp_params(&mut store, "fwd", d + a, &fwd.hidden, d, rng)?,
        ForwardVariant::MlpLinear => {
            let input = if fwd.action_only { a } else { d + a };
            mlp_params(&mut store, "fwd", input, &fwd.hidden, d * d + d, rng)?;
            // starts as the identity map
            store.get_mut("fwd.out.w").expect("just inserted").data_mut().fill(T::zero());
            let bias = store.get_mut("fwd.out.b").expect("just inserted");
            for r in 0..d {
                bias.data_mut()[r * d + r] = T::one();
            }
        }
    }

    if spec.has_decoder() {
        let layers = decoder_layers(spec)?;
        let (c0, _, s0) = layers[0];
        let s0 = s0 / 2;
        dense_params(&mut store, "dec.fc", d, c0 * s0 * s0, rng)?;
        for (i, &(cin, cout, _)) in layers.iter().enumerate() {
            let k = DECONV_KERNEL;
            let kernel = glorot_uniform(&[cin, cout, k, k], cin * k * k, cout * k * k, rng);
            store.insert(&format!("dec.deconv{i}.w"), kernel)?;
            store.insert(&format!("dec.deconv{i}.b"), Tensor::zeros(&[cout]))?;
        }
    }
    if spec.has_inverse() {
        mlp_params(&mut store, "inv", 2 * d, &spec.inverse_hidden, a, rng)?;
    }
    Ok(store)
}

fn dense<T: Scalar>(g: &mut Graph<T>, p: &ParamStore<T>, prefix: &str, x: Var) -> Result<Var> {
    let w = g.param(p, &format!("{prefix}.w"))?;
    let b = g.param(p, &format!("{prefix}.b"))?;
    g.dense(x, w, b)
}

fn mlp<T: Scalar>(g: &mut Graph<T>, p: &ParamStore<T>, prefix: &str, hidden: usize, x: Var) -> Result<Var> {
    let mut h = x;
    for i in 0..hidden {
        h = dense(g, p, &format!("{prefix}.l{i}"), h)?;
        h = g.leaky_relu(h, LEAKY_SLOPE)?;
    }
    dense(g, p, &format!("{prefix}.out"), h)
}

/// `x: [B, 3, H, W]` to latents `[B, d]`.
pub fn encoder<T: Scalar>(g: &mut Graph<T>, p: &ParamStore<T>, spec: &ModelSpec, x: Var) -> Result<Var> {
    let enc = &spec.encoder;
    let mut h = x;
    for i in 0..enc.kernels.len() {
        let w = g.param(p, &format!("enc.conv{i}.w"))?;
        let b = g.param(p, &format!("enc.conv{i}.b"))?;
        h = g.conv2d(h, w, enc.strides[i], enc.pads[i])?;
        h = g.add_channel_bias(h, b)?;
        h = g.leaky_relu(h, LEAKY_SLOPE)?;
    }
    let batch = g.shape(h)[0];
    let flat = g.reshape(h, &[batch, enc.flat_dim()?])?;
    dense(g, p, "enc.fc", flat)
}

/// Predicted next latents `[B, d]` from `z: [B, d]` and `a: [B, action_dim]`.
pub fn forward_model<T: Scalar>(g: &mut Graph<T>, p: &ParamStore<T>, spec: &ModelSpec, z: Var, a: Var) -> Result<Var> {
    let fwd = &spec.forward;
    match fwd.variant {
        ForwardVariant::Linear => {
            let za = g.concat_cols(z, a)?;
            dense(g, p, "fwd", za)
        }
        ForwardVariant::Mlp => {
            let za = g.concat_cols(z, a)?;
            mlp(g, p, "fwd", fwd.hidden.len(), za)
        }
        ForwardVariant::MlpLinear => {
            let input = if fwd.action_only { a } else { g.concat_cols(z, a)? };
            let coeffs = mlp(g, p, "fwd", fwd.hidden.len(), input)?;
            g.affine_apply(coeffs, z)
        }
    }
}

/// Reconstructed images `[B, 3, H, W]` from latents.
pub fn decoder<T: Scalar>(g: &mut Graph<T>, p: &ParamStore<T>, spec: &ModelSpec, z: Var) -> Result<Var> {
    let layers = decoder_layers(spec)?;
    let (c0, _, s0) = layers[0];
    let s0 = s0 / 2;
    let batch = g.shape(z)[0];
    let h = dense(g, p, "dec.fc", z)?;
    let h = g.leaky_relu(h, LEAKY_SLOPE)?;
    let mut h = g.reshape(h, &[batch, c0, s0, s0])?;
    for i in 0..layers.len() {
        let w = g.param(p, &format!("dec.deconv{i}.w"))?;
        let b = g.param(p, &format!("dec.deconv{i}.b"))?;
        h = g.conv_transpose2d(h, w, 2, 1)?;
        h = g.add_channel_bias(h, b)?;
        if i + 1 < layers.len() {
            h = g.leaky_relu(h, LEAKY_SLOPE)?;
        }
    }
    Ok(h)
}

/// Predicted actions `[B, action_dim]` from consecutive latents.
pub fn inverse_model<T: Scalar>(g: &mut Graph<T>, p: &ParamStore<T>, spec: &ModelSpec, z: Var, z_next: Var) -> Result<Var> {
    let zz = g.concat_cols(z, z_next)?;
    mlp(g, p, "inv", spec.inverse_hidden.len(), zz)
}

/// Log-similarity matrix `[B, B]` between predictions and candidates.
pub fn log_similarity<T: Scalar>(g: &mut Graph<T>, sim: Similarity, pred: Var, target: Var) -> Result<Var> {
    match sim {
        Similarity::E2 => g.neg_sq_dist(pred, target),
        Similarity::LogBilinear => g.matmul_nt(pred, target),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::spec::Objective;
    use crate::sim::EnvKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn decoder_mirrors_encoder() {
        let s = ModelSpec::new(EnvKind::Rope, 32, Objective::Autoencoder).unwrap();
        assert_eq!(decoder_layers(&s).unwrap(), vec![(64, 32, 8), (32, 32, 16), (32, 3, 32)]);
        let s = ModelSpec::new(EnvKind::Rope, 64, Objective::Autoencoder).unwrap();
        assert_eq!(
            decoder_layers(&s).unwrap(),
            vec![(256, 256, 8), (256, 128, 16), (128, 64, 32), (64, 3, 64)]
        );
    }

    #[test]
    fn shapes_flow_through_every_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for obj in [Objective::Autoencoder, Objective::Joint] {
            let spec = ModelSpec::new(EnvKind::Cloth, 16, obj).unwrap();
            let p: ParamStore<f32> = init_params(&spec, &mut rng).unwrap();
            let mut g = Graph::new();
            let x = g.input(Tensor::zeros(&[2, 3, 16, 16]));
            let a = g.input(Tensor::zeros(&[2, 5]));
            let z = encoder(&mut g, &p, &spec, x).unwrap();
            assert_eq!(g.shape(z), &[2, 8]);
            let zn = forward_model(&mut g, &p, &spec, z, a).unwrap();
            assert_eq!(g.shape(zn), &[2, 8]);
            if obj == Objective::Autoencoder {
                let r = decoder(&mut g, &p, &spec, z).unwrap();
                assert_eq!(g.shape(r), &[2, 3, 16, 16]);
            } else {
                let inv = inverse_model(&mut g, &p, &spec, z, zn).unwrap();
                assert_eq!(g.shape(inv), &[2, 5]);
            }
        }
    }
}
