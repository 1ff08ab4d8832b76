//! Finite-difference checks of every layer and every training objective.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::models::{net, objective_loss, EncoderSpec, ForwardModelSpec, LossInputs, ModelSpec, Objective, Similarity};
use crate::nn::{grad_check, GradCheckOptions, Graph, ParamStore, Tensor, Var, LEAKY_SLOPE};
use crate::rng;
use crate::sim::EnvKind;

pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_SEEDS: u64 = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradEntry {
    pub name: String,
    pub seed: u64,
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradSuiteReport {
    pub tolerance: f64,
    pub entries: Vec<GradEntry>,
}

impl GradSuiteReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_err < self.tolerance && e.checked > 0)
    }

    pub fn worst(&self) -> Option<&GradEntry> {
        self.entries.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }

    /// Worst error per check name, in suite order.
    pub fn summary(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = Vec::new();
        for e in &self.entries {
            match out.iter_mut().find(|(n, _)| *n == e.name) {
                Some((_, w)) => *w = w.max(e.max_rel_err),
                None => out.push((e.name.clone(), e.max_rel_err)),
            }
        }
        out
    }
}

type Build = fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>;

/// `sum(y^2)` so every output coordinate carries a distinct weight.
fn reduce(g: &mut Graph<f64>, y: Var) -> Result<Var> {
    let sq = g.square(y)?;
    g.sum(sq)
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn store(rng: &mut ChaCha8Rng, tensors: &[(&str, &[usize])]) -> Result<ParamStore<f64>> {
    let mut s = ParamStore::new();
    for (name, shape) in tensors {
        s.insert(name, random(rng, shape))?;
    }
    Ok(s)
}

struct LayerCase {
    name: &'static str,
    tensors: &'static [(&'static str, &'static [usize])],
    build: Build,
}

const LAYERS: &[LayerCase] = &[
    LayerCase {
        name: "dense",
        tensors: &[("x", &[3, 4]), ("w", &[4, 5]), ("b", &[5])],
        build: |g, p| {
            let (x, w, b) = (g.param(p, "x")?, g.param(p, "w")?, g.param(p, "b")?);
            let y = g.dense(x, w, b)?;
            reduce(g, y)
        },
    },
    LayerCase {
        name: "conv2d_s1",
        tensors: &[("x", &[2, 2, 5, 5]), ("k", &[3, 2, 3, 3])],
        build: |g, p| {
            let (x, k) = (g.param(p, "x")?, g.param(p, "k")?);
            let y = g.conv2d(x, k, 1, 1)?;
            reduce(g, y)
        },
    },
    LayerCase {
        name: "conv2d_s2",
        tensors: &[("x", &[2, 2, 6, 6]), ("k", &[3, 2, 4, 4])],
        build: |g, p| {
            let (x, k) = (g.param(p, "x")?, g.param(p, "k")?);
            let y = g.conv2d(x, k, 2, 1)?;
            reduce(g, y)
        },
    },
    LayerCase {
        name: "conv_transpose2d",
        tensors: &[("x", &[2, 3, 3, 3]), ("k", &[3, 2, 4, 4])],
        build: |g, p| {
            let (x, k) = (g.param(p, "x")?, g.param(p, "k")?);
            let y = g.conv_transpose2d(x, k, 2, 1)?;
            reduce(g, y)
        },
    },
    LayerCase {
        name: "channel_bias",
        tensors: &[("x", &[2, 3, 2, 2]), ("b", &[3])],
        build: |g, p| {
            let (x, b) = (g.param(p, "x")?, g.param(p, "b")?);
            let y = g.add_channel_bias(x, b)?;
            reduce(g, y)
        },
    },
    LayerCase {
        name: "leaky_relu",
        tensors: &[("x", &[4, 6])],
        build: |g, p| {
            let x = g.param(p, "x")?;
            let y = g.leaky_relu(x, LEAKY_SLOPE)?;
            let y = g.scale(y, 3.0)?;
            reduce(g, y)
        },
    },
    LayerCase {
        name: "concat_reshape",
        tensors: &[("a", &[3, 2]), ("b", &[3, 4])],
        build: |g, p| {
            let (a, b) = (g.param(p, "a")?, g.param(p, "b")?);
            let c = g.concat_cols(a, b)?;
            let r = g.reshape(c, &[2, 9])?;
            let m = g.matmul_nt(r, r)?;
            g.mean(m)
        },
    },
    LayerCase {
        name: "neg_sq_dist",
        tensors: &[("a", &[4, 3]), ("b", &[4, 3])],
        build: |g, p| {
            let (a, b) = (g.param(p, "a")?, g.param(p, "b")?);
            let y = g.neg_sq_dist(a, b)?;
            reduce(g, y)
        },
    },
    LayerCase {
        name: "infonce",
        tensors: &[("l", &[5, 5])],
        build: |g, p| {
            let l = g.param(p, "l")?;
            let a = g.infonce(l, true)?;
            let b = g.infonce(l, false)?;
            g.add(a, b)
        },
    },
    LayerCase {
        name: "affine_apply",
        tensors: &[("c", &[3, 12]), ("z", &[3, 3])],
        build: |g, p| {
            let (c, z) = (g.param(p, "c")?, g.param(p, "z")?);
            let y = g.affine_apply(c, z)?;
            reduce(g, y)
        },
    },
];

/// Small model used for the objective checks.
pub fn check_spec(objective: Objective, similarity: Similarity) -> ModelSpec {
    ModelSpec {
        env: EnvKind::Rope,
        encoder: EncoderSpec {
            input_size: 16,
            kernels: vec![3, 4],
            strides: vec![1, 2],
            filters: vec![3, 4],
            pads: vec![1, 1],
            latent_dim: 4,
        },
        forward: ForwardModelSpec { hidden: vec![6], ..ForwardModelSpec::default() },
        objective,
        similarity,
        include_positive: true,
        lambda_forward: 1.0,
        lambda_inverse: 1.0,
        inverse_hidden: vec![6],
    }
}

fn objective_cases() -> Vec<(&'static str, ModelSpec)> {
    vec![
        ("cfm_e2", check_spec(Objective::Cfm, Similarity::E2)),
        ("cfm_log_bilinear", check_spec(Objective::Cfm, Similarity::LogBilinear)),
        ("autoencoder", check_spec(Objective::Autoencoder, Similarity::E2)),
        ("joint", check_spec(Objective::Joint, Similarity::E2)),
    ]
}

/// Every check name the suite runs.
pub fn check_names() -> Vec<&'static str> {
    LAYERS.iter().map(|l| l.name).chain(objective_cases().into_iter().map(|(n, _)| n)).collect()
}

fn options(seed: u64, h: f64) -> GradCheckOptions {
    GradCheckOptions { h, seed, ..GradCheckOptions::default() }
}

fn check_layer(case: &LayerCase, seed: u64, h: f64) -> Result<GradEntry> {
    let mut r = rng::stream(seed, case.name, 0);
    let p = store(&mut r, case.tensors)?;
    let rep = grad_check(case.build, &p, &options(seed, h))?;
    Ok(GradEntry { name: case.name.into(), seed, max_rel_err: rep.max_rel_err, checked: rep.checked, skipped: rep.skipped })
}

fn check_objective(name: &str, spec: &ModelSpec, seed: u64, h: f64) -> Result<GradEntry> {
    let mut r = rng::stream(seed, name, 0);
    let mut p: ParamStore<f64> = net::init_params(spec, &mut r)?;
    let names: Vec<String> = p.names().map(String::from).collect();
    for n in names {
        for v in p.get_mut(&n).expect("listed").data_mut() {
            *v += r.gen_range(-0.1..0.1);
        }
    }
    let s = spec.encoder.input_size;
    let rows = 4;
    let x = LossInputs {
        obs: random(&mut r, &[rows, 3, s, s]),
        actions: random(&mut r, &[rows, spec.action_dim()]),
        next_obs: random(&mut r, &[rows, 3, s, s]),
    };
    let f = |g: &mut Graph<f64>, p: &ParamStore<f64>| objective_loss(g, p, spec, &x);
    let rep = grad_check(f, &p, &options(seed, h))?;
    Ok(GradEntry { name: name.into(), seed, max_rel_err: rep.max_rel_err, checked: rep.checked, skipped: rep.skipped })
}

/// Runs every check for seeds `0..seeds`, optionally only those whose name
/// contains `filter`.
pub fn run(seeds: u64, h: f64, tolerance: f64, filter: Option<&str>) -> Result<GradSuiteReport> {
    let keep = |n: &str| filter.map_or(true, |f| n.contains(f));
    let mut entries = Vec::new();
    for seed in 0..seeds {
        for case in LAYERS.iter().filter(|c| keep(c.name)) {
            entries.push(check_layer(case, seed, h)?);
        }
        for (name, spec) in objective_cases().iter().filter(|(n, _)| keep(n)) {
            entries.push(check_objective(name, spec, seed, h)?);
        }
    }
    Ok(GradSuiteReport { tolerance, entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_seed_passes() {
        let rep = run(1, 1e-5, DEFAULT_TOLERANCE, None).unwrap();
        assert_eq!(rep.summary().len(), check_names().len());
        assert!(rep.passed(), "{:?}", rep.worst());
        let only = run(1, 1e-5, DEFAULT_TOLERANCE, Some("joint")).unwrap();
        assert_eq!(only.entries.len(), 1);
    }
}
