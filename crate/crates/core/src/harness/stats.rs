use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name of the dispersion estimator used in every report and CSV.
pub const STD_ESTIMATOR: &str = "sample standard deviation (n - 1 denominator)";

/// Arithmetic mean and sample standard deviation. The std of a single value
/// is reported as 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Evaluation result at one checkpoint of one seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub mean_return: f64,
    pub std_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedCurve {
    pub seed: u64,
    pub points: Vec<CurvePoint>,
}

impl SeedCurve {
    pub fn final_return(&self) -> Option<f64> {
        self.points.last().map(|p| p.mean_return)
    }
}

/// Cross-seed statistics at one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregatePoint {
    pub step: u64,
    pub n_seeds: usize,
    pub mean_return: f64,
    pub std_return: f64,
}

/// Averages per-seed curves checkpoint by checkpoint. All curves must share
/// the same evaluation steps.
pub fn aggregate(curves: &[SeedCurve]) -> Result<Vec<AggregatePoint>> {
    let Some(first) = curves.first() else {
        return Ok(Vec::new());
    };
    let grid: Vec<u64> = first.points.iter().map(|p| p.step).collect();
    for c in curves {
        let steps: Vec<u64> = c.points.iter().map(|p| p.step).collect();
        if steps != grid {
            return Err(Error::Schema(format!(
                "seed {} was evaluated at different steps than seed {}",
                c.seed, first.seed
            )));
        }
    }
    Ok(grid
        .iter()
        .enumerate()
        .map(|(k, &step)| {
            let values: Vec<f64> = curves.iter().map(|c| c.points[k].mean_return).collect();
            let (mean_return, std_return) = mean_std(&values);
            AggregatePoint {
                step,
                n_seeds: values.len(),
                mean_return,
                std_return,
            }
        })
        .collect())
}
