use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::episode::{run_episode, EpisodeConfig, EpisodeReport, Policy};
use super::goals::{GoalId, GoalSpec};
use crate::error::{Error, Result};
use crate::planner::LatentModel;
use crate::rng;
use crate::sim::{Env, EnvKind};

pub const RANDOM_POLICY: &str = "random";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub env: EnvKind,
    pub goals: Vec<GoalId>,
    pub episodes: usize,
    pub episode: EpisodeConfig,
    pub seed: u64,
}

impl BenchConfig {
    pub fn new(env: EnvKind) -> Self {
        let max_steps = if env == EnvKind::Cloth { 40 } else { 20 };
        BenchConfig {
            env,
            goals: GoalId::defaults(env),
            episodes: 50,
            episode: EpisodeConfig { max_steps, ..Default::default() },
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 || self.episode.n_candidates == 0 {
            return Err(Error::InvalidArgument("episodes and n_candidates must be positive".into()));
        }
        if self.goals.is_empty() {
            return Err(Error::InvalidArgument("no goals to evaluate".into()));
        }
        for g in &self.goals {
            GoalSpec::new(self.env, *g, 0)?;
        }
        Ok(())
    }

    /// Reset seed of episode `i`; shared by every method so all of them face
    /// the same starts and goals.
    pub fn episode_seed(&self, goal: GoalId, i: usize) -> u64 {
        rng::derive_seed(rng::derive_seed(self.seed, goal.name(), 0), "episode", i as u64)
    }

    pub fn goal_spec(&self, goal: GoalId, i: usize) -> GoalSpec {
        GoalSpec { env: self.env, goal, seed: rng::derive_seed(self.episode_seed(goal, i), "goal", 0) }
    }

    /// SHA-256 of the canonical JSON of the config and method names.
    pub fn hash(&self, methods: &[&str]) -> String {
        let json = serde_json::to_string(&(self, methods)).expect("serializable");
        sha256_hex(json.as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// A named policy to evaluate.
#[derive(Clone, Copy)]
pub struct Method<'a> {
    pub name: &'a str,
    pub policy: Policy<'a>,
}

impl<'a> Method<'a> {
    pub fn model(name: &'a str, model: &'a (dyn LatentModel + Sync)) -> Self {
        Method { name, policy: Policy::Model(model) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub goal: GoalId,
    pub n: usize,
    pub mean_best: f64,
    pub std_best: f64,
    pub mean_final: f64,
    pub std_final: f64,
    /// Mean over episodes of the best pixel intersection with the goal image.
    pub mean_intersection: f64,
    pub seeds: Vec<u64>,
}

/// Mean and population standard deviation, summed in ascending order.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let mut dev: Vec<f64> = v.iter().map(|x| (x - mean).powi(2)).collect();
    dev.sort_by(f64::total_cmp);
    (mean, (dev.iter().sum::<f64>() / n).sqrt())
}

fn summarize(method: &str, goal: GoalId, eps: &[EpisodeReport]) -> BenchRow {
    let best: Vec<f64> = eps.iter().map(|e| e.best).collect();
    let fin: Vec<f64> = eps.iter().map(|e| e.final_metric).collect();
    let inter: Vec<f64> = eps.iter().map(|e| *e.intersections.iter().max().expect("nonempty") as f64).collect();
    let (mean_best, std_best) = mean_std(&best);
    let (mean_final, std_final) = mean_std(&fin);
    BenchRow {
        method: method.to_string(),
        goal,
        n: eps.len(),
        mean_best,
        std_best,
        mean_final,
        std_final,
        mean_intersection: mean_std(&inter).0,
        seeds: eps.iter().map(|e| e.seed).collect(),
    }
}

/// All episodes of one method on one goal.
pub fn run_episodes(env: &Env, cfg: &BenchConfig, policy: Policy<'_>, goal: GoalId) -> Result<Vec<EpisodeReport>> {
    (0..cfg.episodes)
        .into_par_iter()
        .map(|i| run_episode(env, policy, &cfg.goal_spec(goal, i), &cfg.episode, cfg.episode_seed(goal, i)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub config_hash: String,
    pub rows: Vec<BenchRow>,
}

/// Evaluates the random policy and every method on every goal.
pub fn benchmark(env: &Env, cfg: &BenchConfig, methods: &[Method<'_>]) -> Result<BenchReport> {
    cfg.validate()?;
    if env.kind() != cfg.env {
        return Err(Error::InvalidArgument(format!("{} benchmark in a {} environment", cfg.env, env.kind())));
    }
    let mut all = vec![Method { name: RANDOM_POLICY, policy: Policy::Random }];
    all.extend_from_slice(methods);
    let mut rows = Vec::new();
    for m in &all {
        for &goal in &cfg.goals {
            let eps = run_episodes(env, cfg, m.policy, goal)?;
            let row = summarize(m.name, goal, &eps);
            log::info!("{} {}: best {:.4} +- {:.4}", m.name, goal, row.mean_best, row.std_best);
            rows.push(row);
        }
    }
    let names: Vec<&str> = all.iter().map(|m| m.name).collect();
    Ok(BenchReport { config: cfg.clone(), config_hash: cfg.hash(&names), rows })
}

impl BenchReport {
    pub fn row(&self, method: &str, goal: GoalId) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method && r.goal == goal)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("method\tgoal\tn\tmean_best\tstd_best\tmean_final\tstd_final\tmean_intersection\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.2}",
                r.method, r.goal, r.n, r.mean_best, r.std_best, r.mean_final, r.std_final, r.mean_intersection
            );
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Methods as rows, goals as columns, `best (final)` per cell.
    pub fn format_table(&self) -> String {
        let mut methods: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !methods.contains(&r.method.as_str()) {
                methods.push(&r.method);
            }
        }
        let width = methods.iter().map(|m| m.len()).max().unwrap_or(6).max(6);
        let mut s = format!("{:width$}", "method");
        for g in &self.config.goals {
            let _ = write!(s, " | {:>21}", g.name());
        }
        s.push('\n');
        for m in methods {
            let _ = write!(s, "{m:width$}");
            for &g in &self.config.goals {
                match self.row(m, g) {
                    Some(r) => {
                        let _ = write!(s, " | {:>9.3} ({:>9.3})", r.mean_best, r.mean_final);
                    }
                    None => s.push_str(&format!(" | {:>21}", "-")),
                }
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_and_hash() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
        assert_eq!(mean_std(&[3.0, 1.0, 2.0]), mean_std(&[1.0, 2.0, 3.0]));
        let cfg = BenchConfig::new(EnvKind::Rope);
        assert_eq!(cfg.hash(&["a"]), cfg.hash(&["a"]));
        assert_ne!(cfg.hash(&["a"]), cfg.hash(&["b"]));
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn random_benchmark_is_reproducible() {
        let env = Env::new(EnvKind::Pointmass, 16).unwrap();
        let mut cfg = BenchConfig::new(EnvKind::Pointmass);
        cfg.episodes = 4;
        cfg.episode.max_steps = 3;
        let a = benchmark(&env, &cfg, &[]).unwrap();
        let b = benchmark(&env, &cfg, &[]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 2);
        assert_eq!(a.to_tsv().lines().count(), 3);
        assert!(a.format_table().contains("random"));
        let back: BenchReport = serde_json::from_str(&a.to_json().unwrap()).unwrap();
        assert_eq!(back, a);
        let wrong = Env::new(EnvKind::Rope, 16).unwrap();
        assert!(benchmark(&wrong, &cfg, &[]).is_err());
    }
}
