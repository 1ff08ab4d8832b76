//! Central finite-difference checks of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamStore, Var};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub h: f64,
    /// Parameters with more coordinates than this are probed on a random
    /// subset of this size.
    pub max_coords: usize,
    /// Denominator floor of the relative error, so that coordinates whose
    /// true gradient is ~0 are compared on an absolute scale.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-5,
            max_coords: 32,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(parameter, flat index)` of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Probes whose `±h` evaluations crossed a leaky-ReLU kink.
    pub skipped: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`, defined as 0 when both are exactly 0.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare the reverse-mode gradient of the scalar built by `f` against
/// `(f(p + h) - f(p - h)) / 2h` for the coordinates of every parameter in
/// `params`. `f` must be deterministic.
pub fn grad_check<F>(f: F, params: &ParamStore<f64>, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, params)?;
    let grads = g.backward(loss)?;
    let base_sig = g.kink_signature();

    let eval = |p: &ParamStore<f64>| -> Result<(f64, u64)> {
        let mut g = Graph::new();
        let l = f(&mut g, p)?;
        Ok((g.value(l).item(), g.kink_signature()))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
    };
    let mut probe = params.clone();
    for p in params.iter() {
        let var = g.params().iter().find(|(n, _)| *n == p.name).map(|(_, v)| *v);
        let analytic = var.and_then(|v| grads.get(v));
        let n = p.value.len();
        let coords: Vec<usize> = if n <= opts.max_coords {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, opts.max_coords).into_vec();
            c.sort_unstable();
            c
        };
        for i in coords {
            let orig = p.value.data()[i];
            probe.get_mut(&p.name).unwrap().data_mut()[i] = orig + opts.h;
            let (fp, sp) = eval(&probe)?;
            probe.get_mut(&p.name).unwrap().data_mut()[i] = orig - opts.h;
            let (fm, sm) = eval(&probe)?;
            probe.get_mut(&p.name).unwrap().data_mut()[i] = orig;
            if sp != base_sig || sm != base_sig {
                report.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * opts.h);
            let a = analytic.map_or(0.0, |t| t.data()[i]);
            let err = relative_error(a, numeric, opts.floor);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((p.name.clone(), i));
            }
        }
    }
    Ok(report)
}
