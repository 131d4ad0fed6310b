//! Prediction-error metrics.

use std::collections::BTreeMap;

use resin_core::{SensorId, TargetId, Vec2};

/// Mean distance between a predicted path and the true positions over the
/// same steps.
pub fn path_error(predicted: &[Vec2<f64>], truth: &[Vec2<f64>]) -> f64 {
    assert_eq!(predicted.len(), truth.len(), "path lengths differ");
    assert!(!predicted.is_empty(), "empty path");
    let total: f64 = predicted.iter().zip(truth).map(|(p, t)| p.distance(*t)).sum();
    total / predicted.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairError {
    pub sensor: SensorId,
    pub target: TargetId,
    pub error: f64,
}

/// Errors of one step, over every (sensor, target) pair evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u32,
    pub pairs: Vec<PairError>,
    /// Mean over all pairs.
    pub mean_error: f64,
    /// Mean over sensors, per target.
    pub per_target: BTreeMap<TargetId, f64>,
}

impl MetricsRow {
    /// `None` when no pair was evaluated.
    pub fn from_pairs(step: u32, pairs: Vec<PairError>) -> Option<Self> {
        if pairs.is_empty() {
            return None;
        }
        let mean_error = pairs.iter().map(|p| p.error).sum::<f64>() / pairs.len() as f64;
        let mut acc: BTreeMap<TargetId, (f64, usize)> = BTreeMap::new();
        for p in &pairs {
            let e = acc.entry(p.target).or_default();
            e.0 += p.error;
            e.1 += 1;
        }
        let per_target = acc.into_iter().map(|(t, (s, n))| (t, s / n as f64)).collect();
        Some(Self {
            step,
            pairs,
            mean_error,
            per_target,
        })
    }
}

/// Run-level score: the mean of the per-step means.
pub fn run_mean(rows: &[MetricsRow]) -> f64 {
    if rows.is_empty() {
        return f64::NAN;
    }
    rows.iter().map(|r| r.mean_error).sum::<f64>() / rows.len() as f64
}

/// Sample mean and standard deviation (n − 1 denominator).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_error_is_mean_distance() {
        let p = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0)];
        let t = [Vec2::new(3.0, 4.0), Vec2::new(1.0, 0.0)];
        assert_eq!(path_error(&p, &t), 2.5);
    }

    #[test]
    fn row_aggregates() {
        let pairs = vec![
            PairError { sensor: 0, target: 1, error: 1.0 },
            PairError { sensor: 1, target: 1, error: 3.0 },
            PairError { sensor: 0, target: 2, error: 5.0 },
        ];
        let row = MetricsRow::from_pairs(4, pairs).unwrap();
        assert_eq!(row.mean_error, 3.0);
        assert_eq!(row.per_target[&1], 2.0);
        assert_eq!(row.per_target[&2], 5.0);
        assert!(MetricsRow::from_pairs(0, vec![]).is_none());
    }

    #[test]
    fn sample_statistics() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
    }
}
