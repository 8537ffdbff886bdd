// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


use super::{LearnError, Result};

/// Regression metrics; `mape_excluded` counts targets equal to zero that MAPE
/// skipped.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    pub mae: f64,
    pub mse: f64,
    pub mape_percent: f64,
    pub nnse: f64,
    pub mape_excluded: usize,
}

fn check_lengths(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(LearnError::Metrics(format!(
            "length mismatch: {} targets, {} predictions",
            y.len(),
            y_hat.len()
        )));
    }
    if y.is_empty() {
        return Err(LearnError::Metrics("no targets".into()));
    }
    Ok(())
}

pub fn evaluate(y: &[f64], y_hat: &[f64]) -> Result<MetricsReport> {
    check_lengths(y, y_hat)?;
    let n = y.len() as f64;
    let mut abs = 0.0;
    let mut sq = 0.0;
    let mut pct = 0.0;
    let mut included = 0usize;
    for (&t, &p) in y.iter().zip(y_hat) {
        let e = t - p;
        abs += e.abs();
        sq += e * e;
        if t != 0.0 {
            pct += e.abs() / t.abs();
            included += 1;
        }
    }
    if included == 0 {
        return Err(LearnError::Metrics("MAPE undefined: all targets are zero".into()));
    }
    let mean = y.iter().sum::<f64>() / n;
    let ss_tot: f64 = y.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(LearnError::Metrics("NNSE undefined: targets have zero variance".into()));
    }
    let nse = 1.0 - sq / ss_tot;
    Ok(MetricsReport {
        mae: abs / n,
        mse: sq / n,
        mape_percent: 100.0 * pct / included as f64,
        nnse: 1.0 / (2.0 - nse),
        mape_excluded: y.len() - included,
    })
}

/// MSE of always predicting `mean(y)`.
pub fn mean_predictor_mse(y: &[f64]) -> Result<f64> {
    check_lengths(y, y)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    Ok(y.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / y.len() as f64)
}
