use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::bench::{benchmark, BenchConfig, BenchReport, BenchRow, Method, RANDOM_POLICY};
use super::goals::GoalId;
use crate::dataset::TransitionView;
use crate::error::{Error, Result};
use crate::models::{train, ForwardVariant, Model, ModelSpec, Similarity, TrainConfig};
use crate::sim::Env;

pub const SIMILARITIES: [Similarity; 2] = [Similarity::E2, Similarity::LogBilinear];

/// The six forward model x similarity variants of `base`, row-major.
pub fn ablation_specs(base: &ModelSpec) -> Vec<ModelSpec> {
    let mut out = Vec::with_capacity(6);
    for variant in ForwardVariant::ALL {
        for sim in SIMILARITIES {
            let mut s = base.clone();
            s.forward.variant = variant;
            s.similarity = sim;
            out.push(s);
        }
    }
    out
}

pub fn cell_name(spec: &ModelSpec) -> String {
    format!("{}/{}", spec.forward.variant, spec.similarity)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub variant: ForwardVariant,
    pub similarity: Similarity,
    pub losses: Vec<f64>,
    pub rows: Vec<BenchRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub bench: BenchReport,
    pub cells: Vec<AblationCell>,
}

/// Evaluates already trained cells; `cells` holds `(model, loss curve)`.
pub fn evaluate_ablation(env: &Env, bench: &BenchConfig, cells: &[(Model, Vec<f64>)]) -> Result<AblationReport> {
    let names: Vec<String> = cells.iter().map(|(m, _)| cell_name(&m.spec)).collect();
    let methods: Vec<Method<'_>> = cells.iter().zip(&names).map(|((m, _), n)| Method::model(n, m)).collect();
    let report = benchmark(env, bench, &methods)?;
    let cells = cells
        .iter()
        .zip(&names)
        .map(|((m, losses), n)| AblationCell {
            variant: m.spec.forward.variant,
            similarity: m.spec.similarity,
            losses: losses.clone(),
            rows: report.rows.iter().filter(|r| &r.method == n).cloned().collect(),
        })
        .collect();
    Ok(AblationReport { bench: report, cells })
}

/// Trains every variant of `base` on `view`, then evaluates them.
pub fn ablate(
    view: TransitionView<'_>,
    base: &ModelSpec,
    train_cfg: &TrainConfig,
    env: &Env,
    bench: &BenchConfig,
) -> Result<AblationReport> {
    if env.kind() != base.env {
        return Err(Error::InvalidArgument(format!("{} model in a {} environment", base.env, env.kind())));
    }
    let mut cells = Vec::new();
    for spec in ablation_specs(base) {
        log::info!("training {}", cell_name(&spec));
        let out = train(view, spec, train_cfg, |_, _| {})?;
        cells.push((out.model, out.losses));
    }
    evaluate_ablation(env, bench, &cells)
}

impl AblationReport {
    pub fn cell(&self, variant: ForwardVariant, similarity: Similarity) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.variant == variant && c.similarity == similarity)
    }

    pub fn random_row(&self, goal: GoalId) -> Option<&BenchRow> {
        self.bench.row(RANDOM_POLICY, goal)
    }

    /// One line per cell: variant, similarity, goal, mean best metric.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("forward\tsimilarity\tgoal\tmean_best\tstd_best\tmean_final\n");
        for r in self.bench.rows.iter().filter(|r| r.method == RANDOM_POLICY) {
            let _ = writeln!(s, "random\t-\t{}\t{:.6}\t{:.6}\t{:.6}", r.goal, r.mean_best, r.std_best, r.mean_final);
        }
        for c in &self.cells {
            for r in &c.rows {
                let _ = writeln!(
                    s,
                    "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}",
                    c.variant, c.similarity, r.goal, r.mean_best, r.std_best, r.mean_final
                );
            }
        }
        s
    }

    /// Forward models as rows, similarities as columns, for `goal`.
    pub fn format_grid(&self, goal: GoalId) -> String {
        let mut s = format!("{:12} | {:>12} | {:>12}\n", goal.name(), "e2", "log_bilinear");
        for v in ForwardVariant::ALL {
            let _ = write!(s, "{:12}", v.name());
            for sim in SIMILARITIES {
                let cell = self.cell(v, sim).and_then(|c| c.rows.iter().find(|r| r.goal == goal));
                match cell {
                    Some(r) => {
                        let _ = write!(s, " | {:>12.4}", r.mean_best);
                    }
                    None => s.push_str(&format!(" | {:>12}", "-")),
                }
            }
            s.push('\n');
        }
        if let Some(r) = self.random_row(goal) {
            let _ = writeln!(s, "{:12} | {:>12.4} |", RANDOM_POLICY, r.mean_best);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Objective;
    use crate::sim::EnvKind;

    #[test]
    fn grid_has_six_distinct_cells() {
        let base = ModelSpec::new(EnvKind::Rope, 16, Objective::Cfm).unwrap();
        let specs = ablation_specs(&base);
        assert_eq!(specs.len(), 6);
        let names: std::collections::BTreeSet<String> = specs.iter().map(cell_name).collect();
        assert_eq!(names.len(), 6);
        assert!(names.contains("mlp_linear/e2") && names.contains("linear/log_bilinear"));
    }
}
