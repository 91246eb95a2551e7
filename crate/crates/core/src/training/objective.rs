use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    LeastSquares,
    Logistic,
}

/// One client's samples, features stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDataset {
    pub client_id: usize,
    pub dim: usize,
    pub features: Vec<f64>,
    pub targets: Vec<f64>,
}

impl LocalDataset {
    pub fn new(client_id: usize, dim: usize, features: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        if dim == 0 || features.len() != targets.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: targets.len() * dim,
                found: features.len(),
            });
        }
        if features.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(invalid_input(format!("client {client_id}: non-finite sample")));
        }
        Ok(Self {
            client_id,
            dim,
            features,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Per-sample loss `ℓ(θ; ξ)` plus an optional ridge term on the average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Loss {
    pub kind: ObjectiveKind,
    pub ridge: f64,
}

impl Loss {
    pub fn new(kind: ObjectiveKind, ridge: f64) -> Self {
        Self { kind, ridge }
    }

    fn sample_value(&self, x: &[f64], y: f64, theta: &[f64]) -> f64 {
        let z = dot(x, theta);
        match self.kind {
            ObjectiveKind::LeastSquares => 0.5 * (z - y) * (z - y),
            ObjectiveKind::Logistic => softplus(z) - y * z,
        }
    }

    /// Residual `dℓ/dz` for the linear score `z = x·θ`.
    fn residual(&self, x: &[f64], y: f64, theta: &[f64]) -> f64 {
        let z = dot(x, theta);
        match self.kind {
            ObjectiveKind::LeastSquares => z - y,
            ObjectiveKind::Logistic => sigmoid(z) - y,
        }
    }

    fn ridge_value(&self, theta: &[f64]) -> f64 {
        0.5 * self.ridge * dot(theta, theta)
    }

    /// Mean loss over the dataset.
    pub fn value(&self, data: &LocalDataset, theta: &[f64]) -> f64 {
        let sum: f64 = (0..data.len())
            .map(|i| self.sample_value(data.row(i), data.targets[i], theta))
            .sum();
        sum / data.len() as f64 + self.ridge_value(theta)
    }

    /// Mean gradient over the rows in `batch`.
    pub fn batch_gradient(&self, data: &LocalDataset, theta: &[f64], batch: &[usize]) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Err(invalid_input("empty mini-batch"));
        }
        if theta.len() != data.dim {
            return Err(Error::DimensionMismatch {
                expected: data.dim,
                found: theta.len(),
            });
        }
        let mut grad = vec![0.0; data.dim];
        for &i in batch {
            if i >= data.len() {
                return Err(invalid_input(format!("batch index {i} out of range {}", data.len())));
            }
            let row = data.row(i);
            let r = self.residual(row, data.targets[i], theta);
            for (g, x) in grad.iter_mut().zip(row) {
                *g += r * x;
            }
        }
        let inv = 1.0 / batch.len() as f64;
        for (g, t) in grad.iter_mut().zip(theta) {
            *g = *g * inv + self.ridge * t;
        }
        Ok(grad)
    }

    pub fn full_gradient(&self, data: &LocalDataset, theta: &[f64]) -> Vec<f64> {
        let all: Vec<usize> = (0..data.len()).collect();
        self.batch_gradient(data, theta, &all)
            .expect("full batch over a non-empty dataset")
    }
}

/// The federated objective `F(θ) = (1/N) Σ_i F_i(θ)`.
#[derive(Debug, Clone)]
pub struct GlobalObjective {
    pub loss: Loss,
    pub datasets: Vec<LocalDataset>,
}

impl GlobalObjective {
    pub fn new(loss: Loss, datasets: Vec<LocalDataset>) -> Result<Self> {
        let first = datasets.first().ok_or_else(|| invalid_input("no client datasets"))?;
        let dim = first.dim;
        for d in &datasets {
            if d.dim != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: d.dim,
                });
            }
            if d.is_empty() {
                return Err(invalid_input(format!("client {} has no samples", d.client_id)));
            }
        }
        Ok(Self { loss, datasets })
    }

    pub fn dim(&self) -> usize {
        self.datasets[0].dim
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let sum: f64 = self.datasets.iter().map(|d| self.loss.value(d, theta)).sum();
        sum / self.datasets.len() as f64
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.dim()];
        for d in &self.datasets {
            for (g, gi) in grad.iter_mut().zip(self.loss.full_gradient(d, theta)) {
                *g += gi;
            }
        }
        let inv = 1.0 / self.datasets.len() as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        grad
    }

    /// `(1/N) Σ_i (1/n_i) X_iᵀ X_i`.
    fn gram(&self) -> DMatrix<f64> {
        let dim = self.dim();
        let mut gram = DMatrix::zeros(dim, dim);
        for d in &self.datasets {
            let x = DMatrix::from_row_slice(d.len(), dim, &d.features);
            gram += x.transpose() * &x / d.len() as f64;
        }
        gram / self.datasets.len() as f64
    }

    /// Weighted Hessian `(1/N) Σ_i (1/n_i) Σ_j w_j x_j x_jᵀ + ridge·I`.
    fn logistic_hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        let dim = self.dim();
        let mut h = DMatrix::zeros(dim, dim);
        for d in &self.datasets {
            let mut local = DMatrix::zeros(dim, dim);
            for i in 0..d.len() {
                let row = d.row(i);
                let s = sigmoid(dot(row, theta));
                let x = DVector::from_column_slice(row);
                local += (&x * x.transpose()) * (s * (1.0 - s));
            }
            h += local / d.len() as f64;
        }
        h / self.datasets.len() as f64 + DMatrix::identity(dim, dim) * self.loss.ridge
    }

    /// Smoothness constant: `λ_max(Gram) + ridge` for least squares and
    /// `λ_max(Gram)/4 + ridge` for logistic loss.
    pub fn smoothness(&self) -> f64 {
        let lambda_max = self
            .gram()
            .symmetric_eigenvalues()
            .iter()
            .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        match self.loss.kind {
            ObjectiveKind::LeastSquares => lambda_max + self.loss.ridge,
            ObjectiveKind::Logistic => 0.25 * lambda_max + self.loss.ridge,
        }
    }

    /// Global minimiser: closed form for least squares, damped Newton for
    /// logistic loss.
    pub fn minimize(&self) -> Vec<f64> {
        let dim = self.dim();
        match self.loss.kind {
            ObjectiveKind::LeastSquares => {
                let a = self.gram() + DMatrix::identity(dim, dim) * self.loss.ridge;
                let mut rhs = DVector::zeros(dim);
                for d in &self.datasets {
                    let x = DMatrix::from_row_slice(d.len(), dim, &d.features);
                    let y = DVector::from_column_slice(&d.targets);
                    rhs += x.transpose() * y / d.len() as f64;
                }
                rhs /= self.datasets.len() as f64;
                let sol = match a.clone().cholesky() {
                    Some(ch) => ch.solve(&rhs),
                    None => a
                        .svd(true, true)
                        .solve(&rhs, 1e-12)
                        .unwrap_or_else(|_| DVector::zeros(dim)),
                };
                sol.iter().copied().collect()
            }
            ObjectiveKind::Logistic => {
                let mut theta = vec![0.0; dim];
                let mut value = self.value(&theta);
                for _ in 0..200 {
                    let g = self.gradient(&theta);
                    if g.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-12 {
                        break;
                    }
                    let h = self.logistic_hessian(&theta);
                    let gv = DVector::from_column_slice(&g);
                    let step = match h.clone().cholesky() {
                        Some(ch) => ch.solve(&gv),
                        None => gv.clone(),
                    };
                    let mut t = 1.0;
                    loop {
                        let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, s)| a - t * s).collect();
                        let v = self.value(&cand);
                        if v <= value || t < 1e-10 {
                            theta = cand;
                            value = v;
                            break;
                        }
                        t *= 0.5;
                    }
                }
                theta
            }
        }
    }

    /// Largest per-client mean squared deviation of single-sample gradients
    /// from that client's full gradient, at `theta`.
    pub fn gradient_variance(&self, theta: &[f64]) -> f64 {
        self.datasets
            .iter()
            .map(|d| {
                let mean = self.loss.full_gradient(d, theta);
                let total: f64 = (0..d.len())
                    .map(|i| {
                        let g = self.loss.batch_gradient(d, theta, &[i]).expect("row in range");
                        g.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                    })
                    .sum();
                total / d.len() as f64
            })
            .fold(0.0, f64::max)
    }
}

/// Constants of an objective needed by the convergence bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    pub dim: usize,
    pub smoothness: f64,
    pub gradient_variance: f64,
    pub optimum_value: f64,
    pub initial_gap: f64,
    pub ridge: f64,
}

impl ObjectiveSpec {
    pub fn analyze(objective: &GlobalObjective, theta0: &[f64]) -> Self {
        let optimum = objective.minimize();
        let optimum_value = objective.value(&optimum);
        Self {
            kind: objective.loss.kind,
            dim: objective.dim(),
            smoothness: objective.smoothness(),
            gradient_variance: objective.gradient_variance(theta0),
            optimum_value,
            initial_gap: (objective.value(theta0) - optimum_value).max(0.0),
            ridge: objective.loss.ridge,
        }
    }
}
