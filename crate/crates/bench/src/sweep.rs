//! Seed × planner grids and their aggregate report.

use std::collections::BTreeMap;
use std::path::Path;

use resin_core::network::MessageKind;
use serde::{Deserialize, Serialize};

use crate::config::{PlannerKind, ScenarioConfig};
use crate::error::{BenchError, Result};
use crate::metrics::mean_std;
use crate::output::emit_outputs;
use crate::scenario::run_scenario;

pub const SUMMARY_FILE: &str = "summary.csv";
pub const REPORT_FILE: &str = "report.csv";

/// One run of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub planner: PlannerKind,
    pub seed: u64,
    pub mean_error: f64,
    pub scored_steps: usize,
    pub messages: u64,
    pub bytes: u64,
    pub detection_count_bytes: u64,
}

/// Seed-aggregated errors of one planner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub planner: PlannerKind,
    pub runs: usize,
    pub mean_error: f64,
    pub std_error: f64,
}

/// Runs `base` for every (planner, seed). With `out`, each run's files go
/// to `out/<planner>/seed-<seed>/` and the summary to `out/summary.csv`.
pub fn sweep(base: &ScenarioConfig, planners: &[PlannerKind], seeds: &[u64], out: Option<&Path>) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::with_capacity(planners.len() * seeds.len());
    for &planner in planners {
        for &seed in seeds {
            let cfg = ScenarioConfig {
                planner,
                seed,
                ..base.clone()
            };
            let run = run_scenario(&cfg)?;
            if let Some(dir) = out {
                emit_outputs(&run, &dir.join(planner.as_str()).join(format!("seed-{seed}")))?;
            }
            let totals = |kind: Option<MessageKind>| {
                run.ledger
                    .iter()
                    .filter(|r| kind.map_or(true, |k| r.kind == k))
                    .fold((0u64, 0u64), |(m, b), r| (m + 1, b + r.payload_bytes as u64))
            };
            let (messages, bytes) = totals(None);
            rows.push(SummaryRow {
                planner,
                seed,
                mean_error: run.mean_error(),
                scored_steps: run.metrics.len(),
                messages,
                bytes,
                detection_count_bytes: totals(Some(MessageKind::DetectionCounts)).1,
            });
        }
    }
    if let Some(dir) = out {
        write_rows(&dir.join(SUMMARY_FILE), &rows)?;
    }
    Ok(rows)
}

/// Mean ± standard deviation of the run errors per planner, in
/// [`PlannerKind::ALL`] order.
pub fn report(rows: &[SummaryRow]) -> Vec<ReportRow> {
    let mut by: BTreeMap<PlannerKind, Vec<f64>> = BTreeMap::new();
    for r in rows {
        by.entry(r.planner).or_default().push(r.mean_error);
    }
    by.into_iter()
        .map(|(planner, errs)| {
            let (mean_error, std_error) = mean_std(&errs);
            ReportRow {
                planner,
                runs: errs.len(),
                mean_error,
                std_error,
            }
        })
        .collect()
}

pub fn write_rows<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| BenchError::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| BenchError::csv(path, e))?;
    }
    w.flush().map_err(|e| BenchError::io(path, e))
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| BenchError::csv(path, e))?;
    r.deserialize().collect::<csv::Result<_>>().map_err(|e| BenchError::csv(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(planner: PlannerKind, seed: u64, e: f64) -> SummaryRow {
        SummaryRow {
            planner,
            seed,
            mean_error: e,
            scored_steps: 1,
            messages: 0,
            bytes: 0,
            detection_count_bytes: 0,
        }
    }

    #[test]
    fn report_groups_in_planner_order() {
        let rows = [
            row(PlannerKind::Random, 0, 4.0),
            row(PlannerKind::Resin, 0, 1.0),
            row(PlannerKind::Resin, 1, 3.0),
        ];
        let rep = report(&rows);
        assert_eq!(rep.len(), 2);
        assert_eq!(rep[0].planner, PlannerKind::Resin);
        assert_eq!((rep[0].runs, rep[0].mean_error), (2, 2.0));
        assert_eq!(rep[1].planner, PlannerKind::Random);
    }
}
