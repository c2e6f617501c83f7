//! Exact Gaussian process regression for disturbance learning.
//!
//! One scalar GP is fitted per state dimension from residual labels
//! `y = xdot_measured - (f(x) + g(x) u)`. At a query state the per-dimension
//! posterior mean and standard deviation define confidence intervals
//! `mu_d +/- k_c * sigma_d`; clamping each endpoint to `[-d_max, d_max]` and
//! taking all corner combinations yields the `2^n`-vertex disturbance hull
//! consumed by the robust execution constraints.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::linalg::Cholesky;
use nalgebra::{DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlAffineModel, DisturbanceHull};
use crate::DimensionMismatch;

/// Squared-exponential kernel with an isotropic lengthscale, plus the
/// observation noise variance added to the Gram diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SquaredExponential {
    /// Signal variance `sigma_f^2`.
    pub signal_variance: f64,
    /// Isotropic lengthscale `l`.
    pub lengthscale: f64,
    /// Noise variance `sigma_n^2`.
    pub noise_variance: f64,
}

impl SquaredExponential {
    pub fn eval(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        let d2 = (a - b).norm_squared();
        self.signal_variance * (-0.5 * d2 / (self.lengthscale * self.lengthscale)).exp()
    }
}

/// Errors from dataset handling and model fitting.
#[derive(Debug)]
pub enum GpError {
    Dimension(DimensionMismatch),
    /// The regularized Gram matrix was not positive definite.
    Factorization,
    EmptyDataset,
    Io(std::io::Error),
    /// A dataset file did not parse.
    Format(String),
}

impl fmt::Display for GpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GpError::Dimension(d) => d.fmt(f),
            GpError::Factorization => write!(f, "Gram matrix factorization failed"),
            GpError::EmptyDataset => write!(f, "dataset has no samples"),
            GpError::Io(e) => write!(f, "dataset I/O error: {e}"),
            GpError::Format(msg) => write!(f, "dataset format error: {msg}"),
        }
    }
}

impl std::error::Error for GpError {}

impl From<DimensionMismatch> for GpError {
    fn from(e: DimensionMismatch) -> Self {
        GpError::Dimension(e)
    }
}

impl From<std::io::Error> for GpError {
    fn from(e: std::io::Error) -> Self {
        GpError::Io(e)
    }
}

/// Training data for one robot: states, the commanded inputs at those states,
/// and the residual labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GpDataset {
    pub inputs: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub labels: Vec<DVector<f64>>,
}

impl GpDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn push(&mut self, state: DVector<f64>, control: DVector<f64>, label: DVector<f64>) {
        if let Some(first) = self.inputs.first() {
            assert_eq!(state.len(), first.len(), "inconsistent state dimension");
            assert_eq!(label.len(), self.labels[0].len(), "inconsistent label dimension");
        }
        self.inputs.push(state);
        self.controls.push(control);
        self.labels.push(label);
    }

    /// Keep every `stride`-th sample so that at most `max_points` remain.
    pub fn decimate(&self, max_points: usize) -> GpDataset {
        assert!(max_points > 0);
        if self.len() <= max_points {
            return self.clone();
        }
        let stride = self.len().div_ceil(max_points);
        let mut out = GpDataset::default();
        for k in (0..self.len()).step_by(stride) {
            out.push(
                self.inputs[k].clone(),
                self.controls[k].clone(),
                self.labels[k].clone(),
            );
        }
        out
    }

    /// Write as columnar text: comment header, column-name row, then one row
    /// per sample holding state, input, and label components.
    pub fn save(&self, path: &Path) -> Result<(), GpError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let n = self.inputs.first().map_or(0, |v| v.len());
        let m = self.controls.first().map_or(0, |v| v.len());
        writeln!(f, "# disturbance training data: one row per sample")?;
        writeln!(f, "# state x (state units), input u (input units), label y = xdot - (f + g u) (state units / s)")?;
        writeln!(f, "# state_dim={n} input_dim={m} label_dim={n}")?;
        let mut header: Vec<String> = Vec::new();
        header.extend((0..n).map(|d| format!("x{d}")));
        header.extend((0..m).map(|d| format!("u{d}")));
        header.extend((0..n).map(|d| format!("y{d}")));
        writeln!(f, "{}", header.join(","))?;
        for k in 0..self.len() {
            let row: Vec<String> = self.inputs[k]
                .iter()
                .chain(self.controls[k].iter())
                .chain(self.labels[k].iter())
                .map(|v| format!("{v}"))
                .collect();
            writeln!(f, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<GpDataset, GpError> {
        let f = BufReader::new(std::fs::File::open(path)?);
        let mut dims: Option<(usize, usize)> = None;
        let mut out = GpDataset::default();
        for line in f.lines() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('#') {
                if let Some(d) = parse_dims(rest) {
                    dims = Some(d);
                }
                continue;
            }
            if trimmed.starts_with('x') {
                continue; // column-name row
            }
            let (n, m) =
                dims.ok_or_else(|| GpError::Format("missing state_dim/input_dim header".into()))?;
            let values: Result<Vec<f64>, _> =
                trimmed.split(',').map(|s| s.trim().parse::<f64>()).collect();
            let values = values.map_err(|e| GpError::Format(format!("bad number: {e}")))?;
            if values.len() != 2 * n + m {
                return Err(GpError::Format(format!(
                    "row has {} values, expected {}",
                    values.len(),
                    2 * n + m
                )));
            }
            out.push(
                DVector::from_row_slice(&values[..n]),
                DVector::from_row_slice(&values[n..n + m]),
                DVector::from_row_slice(&values[n + m..]),
            );
        }
        Ok(out)
    }
}

fn parse_dims(comment: &str) -> Option<(usize, usize)> {
    let mut n = None;
    let mut m = None;
    for token in comment.split_whitespace() {
        if let Some(v) = token.strip_prefix("state_dim=") {
            n = v.parse().ok();
        } else if let Some(v) = token.strip_prefix("input_dim=") {
            m = v.parse().ok();
        }
    }
    Some((n?, m?))
}

/// Regression input for a robot state: the heading is embedded as its
/// cosine/sine pair so that headings near the +/- pi seam stay close in the
/// kernel metric.
pub fn regression_input(model: &ControlAffineModel, x: &DVector<f64>) -> DVector<f64> {
    match model {
        ControlAffineModel::Unicycle(_) => {
            let (sin, cos) = x[2].sin_cos();
            DVector::from_vec(vec![x[0], x[1], cos, sin])
        }
        _ => x.clone(),
    }
}

/// Residual label `y = xdot_measured - (f(x) + g(x) u)`.
pub fn collect_label(
    model: &ControlAffineModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    measured_xdot: &DVector<f64>,
) -> Result<DVector<f64>, DimensionMismatch> {
    DimensionMismatch::check("state", model.state_dim(), x.len())?;
    DimensionMismatch::check("input", model.input_dim(), u.len())?;
    DimensionMismatch::check("measured rate", model.state_dim(), measured_xdot.len())?;
    Ok(measured_xdot - model.nominal_rate(x, u))
}

/// A fitted scalar GP for one output dimension.
#[derive(Debug, Clone)]
pub struct GpModel {
    kernel: SquaredExponential,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    train_inputs: Vec<DVector<f64>>,
    log_marginal_likelihood: f64,
}

impl GpModel {
    pub fn kernel(&self) -> &SquaredExponential {
        &self.kernel
    }

    pub fn num_points(&self) -> usize {
        self.train_inputs.len()
    }

    /// Log marginal likelihood of the training labels under this model.
    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_marginal_likelihood
    }

    /// Posterior mean and standard deviation at a query point.
    pub fn predict(&self, x: &DVector<f64>) -> (f64, f64) {
        let n = self.train_inputs.len();
        let k_star = DVector::from_iterator(
            n,
            self.train_inputs.iter().map(|xi| self.kernel.eval(xi, x)),
        );
        let mean = k_star.dot(&self.alpha);
        // var = k(x, x) - k*^T (K + noise I)^{-1} k*, computed through the factor.
        let v = self.chol.l().solve_lower_triangular(&k_star).expect("factor is nonsingular");
        let var = self.kernel.eval(x, x) - v.norm_squared();
        (mean, var.max(0.0).sqrt())
    }
}

fn fit_dimension(
    inputs: &[DVector<f64>],
    labels: &DVector<f64>,
    kernel: SquaredExponential,
) -> Result<GpModel, GpError> {
    let n = inputs.len();
    let mut gram = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.eval(&inputs[i], &inputs[j]);
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    for i in 0..n {
        gram[(i, i)] += kernel.noise_variance;
    }
    let chol = Cholesky::new(gram).ok_or(GpError::Factorization)?;
    let alpha = chol.solve(labels);
    let log_det: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    let lml = -0.5 * labels.dot(&alpha)
        - 0.5 * log_det
        - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    Ok(GpModel {
        kernel,
        chol,
        alpha,
        train_inputs: inputs.to_vec(),
        log_marginal_likelihood: lml,
    })
}

/// Fit one GP per label dimension with shared hyperparameters.
pub fn fit(dataset: &GpDataset, kernel: SquaredExponential) -> Result<Vec<GpModel>, GpError> {
    if dataset.is_empty() {
        return Err(GpError::EmptyDataset);
    }
    assert!(
        kernel.signal_variance > 0.0 && kernel.lengthscale > 0.0 && kernel.noise_variance >= 0.0,
        "kernel hyperparameters must be positive"
    );
    let dims = dataset.labels[0].len();
    (0..dims)
        .map(|d| {
            let labels = DVector::from_iterator(
                dataset.len(),
                dataset.labels.iter().map(|y| y[d]),
            );
            fit_dimension(&dataset.inputs, &labels, kernel)
        })
        .collect()
}

/// Fit with a coarse deterministic grid search over hyperparameters,
/// maximizing per-dimension log marginal likelihood. Ties keep the earliest
/// candidate.
pub fn fit_with_grid_search(
    dataset: &GpDataset,
    candidates: &[SquaredExponential],
) -> Result<Vec<GpModel>, GpError> {
    assert!(!candidates.is_empty(), "grid search needs candidates");
    if dataset.is_empty() {
        return Err(GpError::EmptyDataset);
    }
    let dims = dataset.labels[0].len();
    let mut models = Vec::with_capacity(dims);
    for d in 0..dims {
        let labels = DVector::from_iterator(dataset.len(), dataset.labels.iter().map(|y| y[d]));
        let mut best: Option<GpModel> = None;
        for k in candidates {
            let model = fit_dimension(&dataset.inputs, &labels, *k)?;
            let better = best
                .as_ref()
                .is_none_or(|b| model.log_marginal_likelihood > b.log_marginal_likelihood);
            if better {
                best = Some(model);
            }
        }
        models.push(best.expect("at least one candidate"));
    }
    Ok(models)
}

/// Per-dimension posterior means and standard deviations at a query state.
pub fn predict(models: &[GpModel], x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let mut mean = DVector::zeros(models.len());
    let mut std = DVector::zeros(models.len());
    for (d, model) in models.iter().enumerate() {
        let (m, s) = model.predict(x);
        mean[d] = m;
        std[d] = s;
    }
    (mean, std)
}

/// Confidence multiplier and magnitude cap for disturbance-hull extraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceEstimateConfig {
    /// Confidence multiplier on the posterior standard deviation.
    pub k_c: f64,
    /// Per-component cap on the disturbance magnitude (state units / s).
    pub d_max: f64,
}

/// Build the `2^n`-corner hull from per-dimension confidence intervals
/// `[mu_d - k_c sigma_d, mu_d + k_c sigma_d]`, each endpoint clamped to
/// `[-d_max, d_max]`.
pub fn hull_from_intervals(
    mean: &DVector<f64>,
    std: &DVector<f64>,
    cfg: &DisturbanceEstimateConfig,
) -> DisturbanceHull {
    assert!(cfg.k_c > 0.0 && cfg.d_max > 0.0);
    assert_eq!(mean.len(), std.len());
    let n = mean.len();
    let intervals: Vec<(f64, f64)> = (0..n)
        .map(|d| {
            let lo = (mean[d] - cfg.k_c * std[d]).clamp(-cfg.d_max, cfg.d_max);
            let hi = (mean[d] + cfg.k_c * std[d]).clamp(-cfg.d_max, cfg.d_max);
            (lo, hi)
        })
        .collect();
    let mut vertices = Vec::with_capacity(1 << n);
    for corner in 0..(1usize << n) {
        let v = DVector::from_iterator(
            n,
            intervals.iter().enumerate().map(|(d, (lo, hi))| {
                if corner & (1 << d) == 0 {
                    *lo
                } else {
                    *hi
                }
            }),
        );
        vertices.push(v);
    }
    DisturbanceHull::new(vertices)
}

/// Query the fitted models and expand the confidence intervals into the
/// disturbance hull at `x`.
pub fn disturbance_hull(
    models: &[GpModel],
    cfg: &DisturbanceEstimateConfig,
    x: &DVector<f64>,
) -> DisturbanceHull {
    let (mean, std) = predict(models, x);
    hull_from_intervals(&mean, &std, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::UnicycleModel;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unicycle() -> ControlAffineModel {
        ControlAffineModel::Unicycle(UnicycleModel::new(0.05, 0.2, 3.6))
    }

    fn vec_of(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    fn kernel() -> SquaredExponential {
        SquaredExponential {
            signal_variance: 1.0,
            lengthscale: 0.5,
            noise_variance: 1e-8,
        }
    }

    #[test]
    fn label_zero_when_measurement_matches_nominal() {
        let model = unicycle();
        let x = vec_of(&[0.2, 0.1, 0.5]);
        let u = vec_of(&[0.1, -0.2]);
        let nominal = model.nominal_rate(&x, &u);
        let label = collect_label(&model, &x, &u, &nominal).unwrap();
        assert_relative_eq!(label.norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn label_recovers_slope_residual() {
        let model = unicycle();
        let x = vec_of(&[0.0, 0.0, 0.0]);
        let u = vec_of(&[1.0, 0.0]);
        let label = collect_label(&model, &x, &u, &vec_of(&[1.02, 0.0, 0.0])).unwrap();
        assert_relative_eq!(label[0], 0.02, epsilon = 1e-15);
        assert_relative_eq!(label[1], 0.0, epsilon = 1e-15);
        assert_relative_eq!(label[2], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn label_with_zero_input_is_the_measurement_for_driftless_models() {
        let model = unicycle();
        let x = vec_of(&[0.0, 0.0, 0.0]);
        let label =
            collect_label(&model, &x, &vec_of(&[0.0, 0.0]), &vec_of(&[0.05, 0.0, 0.0])).unwrap();
        assert_eq!(label, vec_of(&[0.05, 0.0, 0.0]));
    }

    #[test]
    fn label_rejects_bad_dimensions() {
        let model = unicycle();
        let err = collect_label(
            &model,
            &vec_of(&[0.0, 0.0, 0.0]),
            &vec_of(&[0.0]),
            &vec_of(&[0.0, 0.0, 0.0]),
        )
        .unwrap_err();
        assert_eq!(err.what, "input");
    }

    #[test]
    fn single_point_interpolates() {
        let mut ds = GpDataset::default();
        ds.push(vec_of(&[0.3]), vec_of(&[0.0]), vec_of(&[0.7]));
        let models = fit(&ds, kernel()).unwrap();
        let (mean, _) = predict(&models, &vec_of(&[0.3]));
        assert_relative_eq!(mean[0], 0.7, epsilon = 1e-4);
    }

    #[test]
    fn duplicate_inputs_average_like_the_dense_solve() {
        let k = SquaredExponential {
            signal_variance: 1.0,
            lengthscale: 0.5,
            noise_variance: 0.1,
        };
        let mut ds = GpDataset::default();
        ds.push(vec_of(&[0.0]), vec_of(&[0.0]), vec_of(&[1.0]));
        ds.push(vec_of(&[0.0]), vec_of(&[0.0]), vec_of(&[0.0]));
        let models = fit(&ds, k).unwrap();
        let (mean, _) = predict(&models, &vec_of(&[0.0]));
        // Dense oracle: mu = k*^T (K + noise I)^{-1} y with K = signal * ones.
        let gram = DMatrix::from_row_slice(2, 2, &[1.1, 1.0, 1.0, 1.1]);
        let weights = gram.try_inverse().unwrap() * vec_of(&[1.0, 0.0]);
        let expected = vec_of(&[1.0, 1.0]).dot(&weights);
        assert_relative_eq!(mean[0], expected, epsilon = 1e-10);
    }

    #[test]
    fn duplicate_inputs_without_noise_fail_to_factor() {
        let k = SquaredExponential {
            signal_variance: 1.0,
            lengthscale: 0.5,
            noise_variance: 0.0,
        };
        let mut ds = GpDataset::default();
        ds.push(vec_of(&[0.0]), vec_of(&[0.0]), vec_of(&[1.0]));
        ds.push(vec_of(&[0.0]), vec_of(&[0.0]), vec_of(&[0.0]));
        assert!(matches!(fit(&ds, k), Err(GpError::Factorization)));
    }

    #[test]
    fn prior_recovered_far_from_data() {
        let mut ds = GpDataset::default();
        ds.push(vec_of(&[0.0]), vec_of(&[0.0]), vec_of(&[0.5]));
        ds.push(vec_of(&[0.1]), vec_of(&[0.0]), vec_of(&[0.4]));
        let models = fit(&ds, kernel()).unwrap();
        let (mean, std) = predict(&models, &vec_of(&[100.0]));
        assert_relative_eq!(mean[0], 0.0, epsilon = 1e-8);
        assert_relative_eq!(std[0], 1.0, epsilon = 1e-8); // sigma_f = sqrt(signal_variance)
    }

    #[test]
    fn posterior_std_never_exceeds_prior() {
        let mut ds = GpDataset::default();
        for i in 0..8 {
            let x = i as f64 * 0.2;
            ds.push(vec_of(&[x]), vec_of(&[0.0]), vec_of(&[x.sin()]));
        }
        let models = fit(&ds, kernel()).unwrap();
        for q in [-1.0, 0.0, 0.35, 0.9, 3.0] {
            let (_, std) = predict(&models, &vec_of(&[q]));
            assert!(std[0] <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn predictions_match_dense_oracle() {
        // Five-point 1-D dataset checked against an explicit dense solve.
        let k = SquaredExponential {
            signal_variance: 0.8,
            lengthscale: 0.4,
            noise_variance: 1e-4,
        };
        let xs = [0.0, 0.3, 0.5, 0.9, 1.4];
        let ys = [0.1, -0.2, 0.4, 0.3, -0.1];
        let mut ds = GpDataset::default();
        for (x, y) in xs.iter().zip(ys.iter()) {
            ds.push(vec_of(&[*x]), vec_of(&[0.0]), vec_of(&[*y]));
        }
        let models = fit(&ds, k).unwrap();

        let n = xs.len();
        let mut gram = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                gram[(i, j)] = k.eval(&vec_of(&[xs[i]]), &vec_of(&[xs[j]]));
            }
            gram[(i, i)] += k.noise_variance;
        }
        let gram_inv = gram.try_inverse().unwrap();
        let y = DVector::from_row_slice(&ys);

        for q in [0.1, 0.45, 0.8, 1.2, 2.0] {
            let query = vec_of(&[q]);
            let k_star =
                DVector::from_iterator(n, xs.iter().map(|x| k.eval(&vec_of(&[*x]), &query)));
            let mean_oracle = k_star.dot(&(&gram_inv * &y));
            let var_oracle = k.eval(&query, &query) - (k_star.transpose() * &gram_inv * &k_star)[0];
            let (mean, std) = predict(&models, &query);
            assert_relative_eq!(mean[0], mean_oracle, epsilon = 1e-10, max_relative = 1e-8);
            assert_relative_eq!(
                std[0],
                var_oracle.max(0.0).sqrt(),
                epsilon = 1e-10,
                max_relative = 1e-8
            );
        }
    }

    #[test]
    fn grid_search_prefers_the_generating_lengthscale() {
        let mut ds = GpDataset::default();
        for i in 0..20 {
            let x = i as f64 * 0.1;
            ds.push(vec_of(&[x]), vec_of(&[0.0]), vec_of(&[(2.0 * x).sin()]));
        }
        let candidates = [
            SquaredExponential {
                signal_variance: 1.0,
                lengthscale: 5.0,
                noise_variance: 1e-6,
            },
            SquaredExponential {
                signal_variance: 1.0,
                lengthscale: 0.5,
                noise_variance: 1e-6,
            },
        ];
        let models = fit_with_grid_search(&ds, &candidates).unwrap();
        assert_relative_eq!(models[0].kernel().lengthscale, 0.5);
    }

    #[test]
    fn hull_collapses_when_uncertainty_is_zero() {
        let cfg = DisturbanceEstimateConfig { k_c: 2.0, d_max: 0.1 };
        let hull = hull_from_intervals(&vec_of(&[0.0, 0.0, 0.0]), &vec_of(&[0.0, 0.0, 0.0]), &cfg);
        assert_eq!(hull.num_vertices(), 8);
        for v in hull.vertices() {
            assert_eq!(v.norm(), 0.0);
        }
    }

    #[test]
    fn hull_corners_by_hand() {
        let cfg = DisturbanceEstimateConfig { k_c: 2.0, d_max: 0.5 };
        let hull = hull_from_intervals(&vec_of(&[0.05, 0.0]), &vec_of(&[0.01, 0.0]), &cfg);
        assert_eq!(hull.num_vertices(), 4);
        for v in hull.vertices() {
            assert!((v[0] - 0.03).abs() < 1e-15 || (v[0] - 0.07).abs() < 1e-15);
            assert_eq!(v[1], 0.0);
        }
    }

    #[test]
    fn hull_clamps_to_magnitude_cap() {
        let cfg = DisturbanceEstimateConfig { k_c: 2.0, d_max: 0.10 };
        let hull = hull_from_intervals(
            &vec_of(&[0.5, 0.0, 0.0]),
            &vec_of(&[0.0, 0.0, 0.0]),
            &cfg,
        );
        assert_eq!(hull.num_vertices(), 8);
        for v in hull.vertices() {
            assert_relative_eq!(v[0], 0.10, epsilon = 1e-15);
        }
    }

    #[test]
    fn dataset_round_trips_through_disk() {
        let model = unicycle();
        let mut ds = GpDataset::default();
        for i in 0..5 {
            let x = vec_of(&[i as f64 * 0.1, -0.3, 0.7]);
            let u = vec_of(&[0.1, 0.02 * i as f64]);
            let label = collect_label(&model, &x, &u, &model.nominal_rate(&x, &u)).unwrap();
            ds.push(x, u, label);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("robot_0.csv");
        ds.save(&path).unwrap();
        let loaded = GpDataset::load(&path).unwrap();
        assert_eq!(ds, loaded);
    }

    proptest! {
        #[test]
        fn hull_vertices_stay_in_clamped_intervals(
            mean in proptest::collection::vec(-0.5f64..0.5, 2..4),
            std in proptest::collection::vec(0.0f64..0.3, 2..4),
            k_c in 0.1f64..4.0,
            d_max in 0.01f64..0.5,
        ) {
            let n = mean.len().min(std.len());
            let mean = DVector::from_row_slice(&mean[..n]);
            let std = DVector::from_row_slice(&std[..n]);
            let cfg = DisturbanceEstimateConfig { k_c, d_max };
            let hull = hull_from_intervals(&mean, &std, &cfg);
            prop_assert_eq!(hull.num_vertices(), 1usize << n);
            for v in hull.vertices() {
                for d in 0..n {
                    let lo = (mean[d] - k_c * std[d]).clamp(-d_max, d_max);
                    let hi = (mean[d] + k_c * std[d]).clamp(-d_max, d_max);
                    prop_assert!(v[d] >= lo - 1e-15 && v[d] <= hi + 1e-15);
                }
            }
        }

        #[test]
        fn widening_confidence_never_shrinks_intervals(
            mean in proptest::collection::vec(-0.5f64..0.5, 2..4),
            std in proptest::collection::vec(0.0f64..0.3, 2..4),
            k_small in 0.1f64..2.0,
            extra in 0.0f64..2.0,
        ) {
            let n = mean.len().min(std.len());
            let mean = DVector::from_row_slice(&mean[..n]);
            let std = DVector::from_row_slice(&std[..n]);
            let small = DisturbanceEstimateConfig { k_c: k_small, d_max: 0.2 };
            let large = DisturbanceEstimateConfig { k_c: k_small + extra, d_max: 0.2 };
            let hull_small = hull_from_intervals(&mean, &std, &small);
            let hull_large = hull_from_intervals(&mean, &std, &large);
            for d in 0..n {
                let lo_s = hull_small.vertices().iter().map(|v| v[d]).fold(f64::INFINITY, f64::min);
                let hi_s = hull_small.vertices().iter().map(|v| v[d]).fold(f64::NEG_INFINITY, f64::max);
                let lo_l = hull_large.vertices().iter().map(|v| v[d]).fold(f64::INFINITY, f64::min);
                let hi_l = hull_large.vertices().iter().map(|v| v[d]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(lo_l <= lo_s + 1e-15);
                prop_assert!(hi_l >= hi_s - 1e-15);
            }
        }
    }
}
