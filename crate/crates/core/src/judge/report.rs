//! Four-condition benchmark tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::stats::{pct, sr_summary, StatsError, SuccessRateSummary, TaskRate};

pub const CONDITIONS: [&str; 4] = ["task_only", "trace_replay", "plan_guided", "guarded"];
pub const GUARDED: &str = "guarded";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub task: String,
    pub seed: u64,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRuns {
    pub family: String,
    pub condition: String,
    pub runs: Vec<RunOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub family: String,
    pub cells: BTreeMap<String, SuccessRateSummary>,
    /// Guarded minus each baseline, in percentage points.
    pub deltas: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub bench_id: String,
    pub conditions: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub aggregate: ReportRow,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReportError {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

fn rates(runs: &[&RunOutcome]) -> Vec<TaskRate> {
    let mut by_task: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for r in runs {
        let e = by_task.entry(&r.task).or_default();
        e.0 += r.success as u64;
        e.1 += 1;
    }
    by_task
        .into_iter()
        .map(|(t, (s, n))| TaskRate { task: t.to_string(), successes: s, total: n })
        .collect()
}

fn row(family: &str, by_cond: &BTreeMap<&str, Vec<&RunOutcome>>) -> Result<ReportRow, ReportError> {
    let mut cells = BTreeMap::new();
    for (c, runs) in by_cond {
        cells.insert(c.to_string(), sr_summary(rates(runs))?);
    }
    let mut deltas = BTreeMap::new();
    if let Some(g) = cells.get(GUARDED) {
        for (c, s) in &cells {
            if c != GUARDED {
                deltas.insert(c.clone(), (g.mean - s.mean) * 100.0);
            }
        }
    }
    Ok(ReportRow { family: family.to_string(), cells, deltas })
}

/// Refuses to compare conditions that did not run the same (task, seed) grid.
pub fn bench_report(bench_id: &str, cells: &[CellRuns]) -> Result<BenchReport, ReportError> {
    let mut conditions: Vec<String> = vec![];
    for c in cells {
        if !conditions.contains(&c.condition) {
            conditions.push(c.condition.clone());
        }
    }
    conditions.sort_by_key(|c| CONDITIONS.iter().position(|k| k == c).unwrap_or(CONDITIONS.len()));
    let mut families: BTreeMap<&str, BTreeMap<&str, Vec<&RunOutcome>>> = BTreeMap::new();
    for c in cells {
        families.entry(&c.family).or_default().entry(&c.condition).or_default().extend(c.runs.iter());
    }
    for (fam, by_cond) in &families {
        let mut grid: Option<(&str, BTreeSet<(&str, u64)>)> = None;
        for cond in &conditions {
            let Some(runs) = by_cond.get(cond.as_str()) else {
                return Err(ReportError::GridMismatch(format!("{fam} has no {cond} runs")));
            };
            let keys: BTreeSet<(&str, u64)> = runs.iter().map(|r| (r.task.as_str(), r.seed)).collect();
            if keys.len() != runs.len() {
                return Err(ReportError::GridMismatch(format!("{fam}/{cond} repeats a (task, seed) pair")));
            }
            match &grid {
                None => grid = Some((cond, keys)),
                Some((first, g)) if *g != keys => {
                    return Err(ReportError::GridMismatch(format!("{fam}: {cond} ran a different grid than {first}")))
                }
                _ => {}
            }
        }
    }
    let mut rows = vec![];
    let mut all: BTreeMap<&str, Vec<&RunOutcome>> = BTreeMap::new();
    for (fam, by_cond) in &families {
        rows.push(row(fam, by_cond)?);
        for (c, runs) in by_cond {
            all.entry(c).or_default().extend(runs.iter().copied());
        }
    }
    Ok(BenchReport { bench_id: bench_id.to_string(), conditions, rows, aggregate: row("all tasks", &all)? })
}

impl BenchReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("family,condition,mean,std,successes,total\n");
        for r in self.rows.iter().chain(std::iter::once(&self.aggregate)) {
            for c in &self.conditions {
                let s = &r.cells[c];
                let _ = writeln!(out, "{},{},{:.4},{:.4},{},{}", r.family, c, s.mean, s.std, s.successes(), s.total());
            }
        }
        out
    }

    pub fn markdown(&self) -> String {
        let mut out = format!("# Benchmark {}\n\n", self.bench_id);
        let _ = writeln!(out, "| family | {} |", self.conditions.join(" | "));
        let _ = writeln!(out, "|---|{}", "---|".repeat(self.conditions.len()));
        for r in self.rows.iter().chain(std::iter::once(&self.aggregate)) {
            let cells: Vec<String> = self.conditions.iter().map(|c| r.cells[c].render()).collect();
            let name = if std::ptr::eq(r, &self.aggregate) { format!("**{}**", r.family) } else { r.family.clone() };
            let _ = writeln!(out, "| {} | {} |", name, cells.join(" | "));
        }
        let baselines: Vec<&String> = self.conditions.iter().filter(|c| *c != GUARDED).collect();
        if self.conditions.iter().any(|c| c == GUARDED) && !baselines.is_empty() {
            let _ = writeln!(out, "\n## Guarded minus baseline (percentage points)\n");
            let _ = writeln!(out, "| family | {} |", baselines.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(" | "));
            let _ = writeln!(out, "|---|{}", "---|".repeat(baselines.len()));
            for r in self.rows.iter().chain(std::iter::once(&self.aggregate)) {
                let cells: Vec<String> = baselines.iter().map(|b| format!("{:+.1}", r.deltas[*b])).collect();
                let _ = writeln!(out, "| {} | {} |", r.family, cells.join(" | "));
            }
        }
        let _ = writeln!(
            out,
            "\nCells are mean ± population standard deviation of per-task success rates; \
             each task is one original or variation task of a family. The last row pools all tasks. \
             Mean success rate of the aggregate guarded column: {}.",
            pct(self.aggregate.cells.get(GUARDED).map(|s| s.mean).unwrap_or(0.0))
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(cond: &str, outcomes: &[(&str, u64, bool)]) -> CellRuns {
        CellRuns {
            family: "f".into(),
            condition: cond.into(),
            runs: outcomes.iter().map(|(t, s, ok)| RunOutcome { task: t.to_string(), seed: *s, success: *ok }).collect(),
        }
    }

    #[test]
    fn equal_conditions_have_zero_deltas() {
        let runs = [("a", 1, true), ("a", 2, false), ("b", 1, true), ("b", 2, true)];
        let cells: Vec<CellRuns> = CONDITIONS.iter().map(|c| cell(c, &runs)).collect();
        let r = bench_report("t", &cells).unwrap();
        assert!(r.rows[0].deltas.values().all(|d| *d == 0.0));
        assert_eq!(r.rows[0].cells["guarded"].render(), "75.0% ± 25.0%");
        assert!(r.csv().lines().count() == 1 + 2 * 4);
        assert!(r.markdown().contains("| f |"));
    }

    #[test]
    fn unequal_grids_are_refused() {
        let cells = vec![cell("task_only", &[("a", 1, true)]), cell("guarded", &[("a", 2, true)])];
        assert!(matches!(bench_report("t", &cells), Err(ReportError::GridMismatch(_))));
    }
}
