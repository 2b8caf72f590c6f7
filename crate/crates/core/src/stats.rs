//! Batch-means estimators for stationary sampling.

use serde::Serialize;

/// Sums over one batch of samples.
#[derive(Clone, Debug)]
pub struct Batch {
    pub count: f64,
    /// `power[p][i] = sum x_i^(p+1)`.
    pub power: Vec<Vec<f64>>,
    /// `cross[i][j] = sum x_i x_j` for `j >= i`.
    pub cross: Vec<Vec<f64>>,
}

impl Batch {
    pub fn new(l: usize, orders: usize) -> Self {
        Batch {
            count: 0.0,
            power: vec![vec![0.0; l]; orders],
            cross: vec![vec![0.0; l]; l],
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        let l = x.len();
        self.count += 1.0;
        for i in 0..l {
            let mut p = 1.0;
            for row in self.power.iter_mut() {
                p *= x[i];
                row[i] += p;
            }
            for j in i..l {
                self.cross[i][j] += x[i] * x[j];
            }
        }
    }
}

/// Stationary estimates with batch-means standard errors.
#[derive(Clone, Debug, Serialize)]
pub struct StationarySummary {
    pub means: Vec<f64>,
    pub mean_errors: Vec<f64>,
    /// `<x_i x_l>`.
    pub second_moments: Vec<Vec<f64>>,
    /// `<x_i x_l> - <x_i><x_l>`.
    pub covariances: Vec<Vec<f64>>,
    pub covariance_errors: Vec<Vec<f64>>,
    /// Raw single-site moments, `moments[p][i] = <x_i^(p+1)>`.
    pub moments: Vec<Vec<f64>>,
    pub moment_errors: Vec<Vec<f64>>,
    pub samples_per_replica: usize,
    pub replicas: usize,
    pub base_seed: u64,
    /// Recorded configurations, if requested.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<Vec<f64>>,
}

fn mean_and_error(values: impl Iterator<Item = f64> + Clone, weights: &[f64]) -> (f64, f64) {
    let total: f64 = weights.iter().sum();
    let nb = weights.len() as f64;
    let mean: f64 = values.clone().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total;
    let var: f64 = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (nb - 1.0).max(1.0);
    (mean, (var / nb).sqrt())
}

/// Pools batches (from all replicas) into a summary.
pub fn summarize(batches: &[Batch], l: usize, samples_per_replica: usize, replicas: usize, base_seed: u64) -> StationarySummary {
    let w: Vec<f64> = batches.iter().map(|b| b.count).collect();
    let orders = batches.first().map_or(0, |b| b.power.len());
    let mut moments = vec![vec![0.0; l]; orders];
    let mut moment_errors = vec![vec![0.0; l]; orders];
    for p in 0..orders {
        for i in 0..l {
            let (m, e) = mean_and_error(batches.iter().map(|b| b.power[p][i] / b.count), &w);
            moments[p][i] = m;
            moment_errors[p][i] = e;
        }
    }
    let means: Vec<f64> = (0..l).map(|i| mean_and_error(batches.iter().map(|b| b.power[0][i] / b.count), &w).0).collect();
    let mean_errors: Vec<f64> = (0..l).map(|i| mean_and_error(batches.iter().map(|b| b.power[0][i] / b.count), &w).1).collect();
    let mut second = vec![vec![0.0; l]; l];
    let mut cov = vec![vec![0.0; l]; l];
    let mut cov_err = vec![vec![0.0; l]; l];
    for i in 0..l {
        for j in i..l {
            let (m2, _) = mean_and_error(batches.iter().map(|b| b.cross[i][j] / b.count), &w);
            let per_batch = batches
                .iter()
                .map(|b| b.cross[i][j] / b.count - b.power[0][i] * b.power[0][j] / (b.count * b.count));
            let (_, e) = mean_and_error(per_batch, &w);
            second[i][j] = m2;
            second[j][i] = m2;
            cov[i][j] = m2 - means[i] * means[j];
            cov[j][i] = cov[i][j];
            cov_err[i][j] = e;
            cov_err[j][i] = e;
        }
    }
    StationarySummary {
        means,
        mean_errors,
        second_moments: second,
        covariances: cov,
        covariance_errors: cov_err,
        moments,
        moment_errors,
        samples_per_replica,
        replicas,
        base_seed,
        samples: Vec::new(),
    }
}
