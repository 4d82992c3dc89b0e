//! Ranking and calibration metrics, run aggregation and the results table.

use std::fmt::Write as _;

use crate::error::{Error, Result};
pub use crate::model::log_loss;

/// Scores paired with binary labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredBatch {
    pub scores: Vec<f64>,
    pub labels: Vec<f64>,
}

impl ScoredBatch {
    pub fn new(scores: Vec<f64>, labels: Vec<f64>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Invalid(format!(
                "{} scores for {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l != 0.0 && l != 1.0) {
            return Err(Error::Invalid(format!("label {l} is not 0 or 1")));
        }
        Ok(ScoredBatch { scores, labels })
    }

    pub fn auc(&self) -> Result<f64> {
        auc(&self.scores, &self.labels)
    }

    pub fn log_loss(&self) -> f64 {
        log_loss(&self.scores, &self.labels)
    }
}

/// Area under the ROC curve as the Mann-Whitney statistic. Tied scores share
/// their average rank, which gives ties half credit.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numerical("AUC over NaN scores".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1.0).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Invalid(format!(
            "AUC needs both classes, got {pos} positives and {neg} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; the tie block i..j shares the mean rank
        let mean_rank = (i + j + 1) as f64 / 2.0;
        let tied_pos = order[i..j].iter().filter(|&&k| labels[k] == 1.0).count();
        rank_sum += mean_rank * tied_pos as f64;
        i = j;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Summary> {
        if values.is_empty() {
            return Err(Error::Invalid("summary of zero values".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Ok(Summary { mean, std })
    }
}

/// One evaluated period of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodMetric {
    pub period: i64,
    pub auc: f64,
    pub logloss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    /// Per period: mean and std across runs.
    pub per_period: Vec<(i64, Summary, Summary)>,
    /// Each run's metrics averaged over the selected periods, then summarized
    /// across runs.
    pub auc: Summary,
    pub logloss: Summary,
}

/// Summarizes `runs` over `periods`; every run must cover every period.
pub fn aggregate(runs: &[Vec<PeriodMetric>], periods: &[i64]) -> Result<Aggregate> {
    if runs.is_empty() || periods.is_empty() {
        return Err(Error::Invalid(
            "aggregate needs at least one run and one period".into(),
        ));
    }
    let lookup = |run: &[PeriodMetric], p: i64| -> Result<PeriodMetric> {
        run.iter()
            .find(|m| m.period == p)
            .cloned()
            .ok_or_else(|| Error::Invalid(format!("run has no metrics for period {p}")))
    };
    let mut per_period = Vec::with_capacity(periods.len());
    for &p in periods {
        let ms: Vec<PeriodMetric> = runs.iter().map(|r| lookup(r, p)).collect::<Result<_>>()?;
        let aucs: Vec<f64> = ms.iter().map(|m| m.auc).collect();
        let lls: Vec<f64> = ms.iter().map(|m| m.logloss).collect();
        per_period.push((p, Summary::of(&aucs)?, Summary::of(&lls)?));
    }
    let mut run_auc = Vec::with_capacity(runs.len());
    let mut run_ll = Vec::with_capacity(runs.len());
    for r in runs {
        let ms: Vec<PeriodMetric> = periods
            .iter()
            .map(|&p| lookup(r, p))
            .collect::<Result<_>>()?;
        let k = ms.len() as f64;
        run_auc.push(ms.iter().map(|m| m.auc).sum::<f64>() / k);
        run_ll.push(ms.iter().map(|m| m.logloss).sum::<f64>() / k);
    }
    Ok(Aggregate {
        per_period,
        auc: Summary::of(&run_auc)?,
        logloss: Summary::of(&run_ll)?,
    })
}

/// Relative AUC gain over the baseline, in percent.
pub fn auc_improvement(method: f64, baseline: f64) -> f64 {
    (method - baseline) / baseline * 100.0
}

/// Relative LogLoss reduction against the baseline, in percent; lower loss
/// is a positive improvement.
pub fn logloss_improvement(method: f64, baseline: f64) -> f64 {
    (baseline - method) / baseline * 100.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub method: String,
    pub dataset: String,
    pub auc: Summary,
    pub logloss: Summary,
}

/// `results.csv` contents. The improvement columns are filled against the
/// `IU` row of the same dataset and left out entirely when there is none.
pub fn results_csv(rows: &[ResultRow]) -> String {
    let has_iu = rows.iter().any(|r| r.method == "IU");
    let mut out = String::from("method,dataset,auc_mean,auc_std,logloss_mean,logloss_std");
    if has_iu {
        out.push_str(",auc_imp_pct,logloss_imp_pct");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6}",
            r.method, r.dataset, r.auc.mean, r.auc.std, r.logloss.mean, r.logloss.std
        );
        if has_iu {
            match rows
                .iter()
                .find(|b| b.method == "IU" && b.dataset == r.dataset)
            {
                Some(iu) => {
                    let _ = write!(
                        out,
                        ",{:.2},{:.2}",
                        auc_improvement(r.auc.mean, iu.auc.mean),
                        logloss_improvement(r.logloss.mean, iu.logloss.mean)
                    );
                }
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    out
}

/// Markdown table with the same columns as [`results_csv`].
pub fn results_markdown(rows: &[ResultRow]) -> String {
    let mut out = String::from("| method | dataset | AUC | LogLoss | AUC imp% | LogLoss imp% |\n|---|---|---|---|---|---|\n");
    for r in rows {
        let iu = rows
            .iter()
            .find(|b| b.method == "IU" && b.dataset == r.dataset);
        let (ai, li) = match iu {
            Some(iu) => (
                format!("{:.2}%", auc_improvement(r.auc.mean, iu.auc.mean)),
                format!(
                    "{:.2}%",
                    logloss_improvement(r.logloss.mean, iu.logloss.mean)
                ),
            ),
            None => ("-".into(), "-".into()),
        };
        let _ = writeln!(
            out,
            "| {} | {} | {:.4} ± {:.4} | {:.4} ± {:.4} | {ai} | {li} |",
            r.method, r.dataset, r.auc.mean, r.auc.std, r.logloss.mean, r.logloss.std
        );
    }
    out
}
