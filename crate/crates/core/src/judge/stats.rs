//! Success rates and judge agreement.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

type Q = Ratio<i128>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRate {
    pub task: String,
    pub successes: u64,
    pub total: u64,
}

impl TaskRate {
    pub fn rate(&self) -> f64 {
        self.successes as f64 / self.total as f64
    }
}

/// Mean and population standard deviation of per-task success rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessRateSummary {
    pub per_task: Vec<TaskRate>,
    pub mean: f64,
    pub std: f64,
    /// Exact mean as "p/q".
    pub mean_exact: String,
    /// Exact std as "p/q" when the variance is a rational square.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_exact: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StatsError {
    #[error("no labelled runs")]
    EmptyInput,
    #[error("label lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("reference labels are all one class; kappa is undefined")]
    DegenerateReference,
}

fn isqrt(n: i128) -> Option<i128> {
    if n < 0 {
        return None;
    }
    let r = (n as f64).sqrt().round() as i128;
    (r.saturating_sub(1)..=r + 1).find(|c| *c >= 0 && c * c == n)
}

fn q_str(q: &Q) -> String {
    format!("{}/{}", q.numer(), q.denom())
}

fn to_f64(q: &Q) -> f64 {
    *q.numer() as f64 / *q.denom() as f64
}

pub fn pct(x: f64) -> String {
    format!("{:.1}%", x * 100.0)
}

impl SuccessRateSummary {
    pub fn render(&self) -> String {
        format!("{} ± {}", pct(self.mean), pct(self.std))
    }

    pub fn successes(&self) -> u64 {
        self.per_task.iter().map(|t| t.successes).sum()
    }

    pub fn total(&self) -> u64 {
        self.per_task.iter().map(|t| t.total).sum()
    }
}

/// Tasks with zero runs are rejected; every other task contributes equally.
pub fn sr_summary(per_task: Vec<TaskRate>) -> Result<SuccessRateSummary, StatsError> {
    if per_task.is_empty() || per_task.iter().any(|t| t.total == 0) {
        return Err(StatsError::EmptyInput);
    }
    let rates: Vec<Q> = per_task.iter().map(|t| Q::new(t.successes as i128, t.total as i128)).collect();
    let k = Q::from_integer(rates.len() as i128);
    let mean = rates.iter().cloned().fold(Q::from_integer(0), |a, b| a + b) / k;
    let var = rates.iter().map(|r| (r - mean) * (r - mean)).fold(Q::from_integer(0), |a, b| a + b) / k;
    let std_exact = match (isqrt(*var.numer()), isqrt(*var.denom())) {
        (Some(n), Some(d)) => Some(Q::new(n, d)),
        _ => None,
    };
    Ok(SuccessRateSummary {
        per_task,
        mean: to_f64(&mean),
        std: std_exact.as_ref().map(to_f64).unwrap_or_else(|| to_f64(&var).sqrt()),
        mean_exact: q_str(&mean),
        std_exact: std_exact.as_ref().map(q_str),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub kappa: f64,
}

impl AgreementStats {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let n = (tp + fp + fn_ + tn) as f64;
        let div = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
        let precision = div(tp as f64, (tp + fp) as f64);
        let recall = div(tp as f64, (tp + fn_) as f64);
        let f1 = div(2.0 * precision * recall, precision + recall);
        let po = div((tp + tn) as f64, n);
        let pe = div(((tp + fp) * (tp + fn_) + (fn_ + tn) * (fp + tn)) as f64, n * n);
        let kappa = if pe < 1.0 { (po - pe) / (1.0 - pe) } else { 1.0 };
        AgreementStats { tp, fp, fn_, tn, accuracy: po, precision, recall, f1, kappa }
    }
}

/// Agreement of `judge` against `reference`; positives are successes.
pub fn agreement(judge: &[bool], reference: &[bool]) -> Result<AgreementStats, StatsError> {
    if judge.len() != reference.len() {
        return Err(StatsError::LengthMismatch(judge.len(), reference.len()));
    }
    if reference.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    if reference.iter().all(|r| *r) || reference.iter().all(|r| !*r) {
        return Err(StatsError::DegenerateReference);
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (j, r) in judge.iter().zip(reference) {
        match (j, r) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(AgreementStats::from_counts(tp, fp, fn_, tn))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rate(task: &str, s: u64, t: u64) -> TaskRate {
        TaskRate { task: task.into(), successes: s, total: t }
    }

    #[test]
    fn single_task() {
        let s = sr_summary(vec![rate("a", 3, 5)]).unwrap();
        assert_eq!(s.mean_exact, "3/5");
        assert_eq!(s.std_exact.as_deref(), Some("0/1"));
    }

    #[test]
    fn two_point_population_std() {
        let s = sr_summary(vec![rate("a", 4, 5), rate("b", 2, 5)]).unwrap();
        assert_eq!(s.mean_exact, "3/5");
        assert_eq!(s.std_exact.as_deref(), Some("1/5"));
        assert_eq!(s.render(), "60.0% ± 20.0%");
    }

    #[test]
    fn irrational_std_falls_back_to_float() {
        let s = sr_summary(vec![rate("a", 1, 1), rate("b", 0, 1), rate("c", 0, 1)]).unwrap();
        assert_eq!(s.std_exact, None);
        assert!((s.std - (2.0f64 / 9.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn empty() {
        assert_eq!(sr_summary(vec![]).unwrap_err(), StatsError::EmptyInput);
        assert_eq!(sr_summary(vec![rate("a", 0, 0)]).unwrap_err(), StatsError::EmptyInput);
    }

    #[test]
    fn always_positive_judge() {
        let reference = [true, false, true, false];
        let a = agreement(&[true; 4], &reference).unwrap();
        assert_eq!((a.recall, a.precision, a.kappa), (1.0, 0.5, 0.0));
    }

    #[test]
    fn degenerate_reference() {
        assert_eq!(agreement(&[true, false], &[true, true]).unwrap_err(), StatsError::DegenerateReference);
    }
}
