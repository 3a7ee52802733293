//! Linear soft-margin SVM with internal feature standardisation.
//!
//! Training solves the dual by sequential minimal optimisation with
//! maximal-violating-pair selection (second-order choice of the partner),
//! iterated in a fixed order, so results are deterministic. The primal
//! weights are recovered as `w = Σ αₖ yₖ xₖ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmConfig {
    #[serde(rename = "C")]
    pub c: f64,
    /// Stop once the maximal KKT violation falls below this.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            tol: 1e-6,
            max_iters: 1_000_000,
        }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::parameter("C", "must be > 0"));
        }
        if !(self.tol > 0.0 && self.tol <= 1e-4) {
            return Err(Error::parameter("svm.tol", "must be in (0, 1e-4]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    #[serde(rename = "C")]
    pub c: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Label,
    pub margin: f64,
}

impl TrainedModel {
    pub fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.feature_mean.iter().zip(&self.feature_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        let z = self.standardize(x);
        z.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>() + self.bias
    }

    /// Zero margin counts as normal.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        if x.len() != self.weights.len() {
            return Err(Error::parameter(
                "features",
                format!("{} values for a {}-feature model", x.len(), self.weights.len()),
            ));
        }
        let margin = self.decision(x);
        let label = if margin > 0.0 { Label::Deep } else { Label::Normal };
        Ok(Prediction { label, margin })
    }

    /// `½‖w‖² + C Σ max(0, 1 − yₖ f(xₖ))` on the given (raw) data.
    pub fn primal_objective(&self, x: &[Vec<f64>], labels: &[Label]) -> f64 {
        let reg = 0.5 * self.weights.iter().map(|w| w * w).sum::<f64>();
        let hinge: f64 = x
            .iter()
            .zip(labels)
            .map(|(xi, l)| (1.0 - l.sign() * self.decision(xi)).max(0.0))
            .sum();
        reg + self.c * hinge
    }
}

/// Per-dimension training mean and population std; zero-variance
/// dimensions get std 1.
pub fn standardization(x: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = x[0].len();
    let n = x.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let std = (0..d)
        .map(|j| {
            let var = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
            let s = var.sqrt();
            if s > 1e-12 * mean[j].abs() && s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

const TAU: f64 = 1e-12;

pub fn train_svm(x: &[Vec<f64>], labels: &[Label], cfg: &SvmConfig, seed: u64) -> Result<TrainedModel> {
    cfg.validate()?;
    if x.len() != labels.len() {
        return Err(Error::parameter(
            "labels",
            format!("{} feature rows but {} labels", x.len(), labels.len()),
        ));
    }
    if !labels.contains(&Label::Deep) || !labels.contains(&Label::Normal) {
        return Err(Error::parameter("labels", "training needs both classes"));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::parameter("features", "rows have different lengths"));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite training feature".into()));
    }

    let (feature_mean, feature_std) = standardization(x);
    let z: Vec<Vec<f64>> = x
        .iter()
        .map(|r| {
            r.iter()
                .zip(feature_mean.iter().zip(&feature_std))
                .map(|(v, (m, s))| (v - m) / s)
                .collect()
        })
        .collect();
    let y: Vec<f64> = labels.iter().map(|l| l.sign()).collect();
    let n = z.len();
    let kernel: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| z[i].iter().zip(&z[j]).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();
    let q = |i: usize, j: usize| y[i] * y[j] * kernel[i][j];
    let c = cfg.c;

    let mut alpha = vec![0.0; n];
    // gradient of ½αᵀQα − eᵀα
    let mut grad = vec![-1.0; n];
    let in_up = |a: f64, yi: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
    let in_low = |a: f64, yi: f64| (yi > 0.0 && a > 0.0) || (yi < 0.0 && a < c);

    let mut iters = 0;
    loop {
        let mut i = usize::MAX;
        let mut gmax = f64::NEG_INFINITY;
        for t in 0..n {
            if in_up(alpha[t], y[t]) && -y[t] * grad[t] > gmax {
                gmax = -y[t] * grad[t];
                i = t;
            }
        }
        let mut j = usize::MAX;
        let mut gmin = f64::INFINITY;
        let mut best = f64::INFINITY;
        for t in 0..n {
            if !in_low(alpha[t], y[t]) {
                continue;
            }
            let v = -y[t] * grad[t];
            gmin = gmin.min(v);
            if i != usize::MAX && v < gmax {
                let b = gmax - v;
                let a = (kernel[i][i] + kernel[t][t] - 2.0 * kernel[i][t]).max(TAU);
                let obj = -b * b / a;
                if obj < best {
                    best = obj;
                    j = t;
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < cfg.tol {
            break;
        }
        if iters >= cfg.max_iters {
            return Err(Error::Solver {
                message: format!("SMO did not reach tolerance in {iters} iterations"),
                residual: gmax - gmin,
            });
        }
        iters += 1;

        let (ai, aj) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (kernel[i][i] + kernel[j][j] - 2.0 * kernel[i][j]).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (kernel[i][i] + kernel[j][j] - 2.0 * kernel[i][j]).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - ai, alpha[j] - aj);
        for (t, g) in grad.iter_mut().enumerate() {
            *g += q(i, t) * di + q(j, t) * dj;
        }
    }

    // bias from free vectors, or the midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free_sum, mut free_n) = (0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free_sum += yg;
            free_n += 1;
        }
    }
    let rho = if free_n > 0 {
        free_sum / free_n as f64
    } else {
        0.5 * (ub + lb)
    };

    let mut weights = vec![0.0; d];
    for t in 0..n {
        if alpha[t] != 0.0 {
            for (w, v) in weights.iter_mut().zip(&z[t]) {
                *w += alpha[t] * y[t] * v;
            }
        }
    }
    Ok(TrainedModel {
        weights,
        bias: -rho,
        feature_mean,
        feature_std,
        c,
        seed,
    })
}
