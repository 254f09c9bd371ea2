//! Independent per-objective Gaussian-process surrogates with an isotropic
//! squared-exponential kernel, fitted by multi-start maximization of the log
//! marginal likelihood.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::sampling::{latin_hypercube, seeded_rng};
use crate::types::{Bounds, EvaluatedSolution};

/// Posterior mean and standard deviation per objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Anything that predicts objective vectors at normalized decisions.
pub trait Surrogate: Send + Sync {
    fn n_objectives(&self) -> usize;

    fn predict(&self, x: &[f64]) -> Result<Prediction>;

    fn predict_mean(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.predict(x).map(|p| p.mean)
    }
}

pub const NOISE_FLOOR: f64 = 1e-8;
pub const JITTER_RETRIES: usize = 3;
pub const N_STARTS: usize = 8;
pub const LENGTH_SCALE_RANGE: (f64, f64) = (1e-2, 10.0);
pub const SIGNAL_VARIANCE_RANGE: (f64, f64) = (1e-2, 10.0);
const START_SEED: u64 = 0x6770_5f73_7461_7274;
const MIN_STEP: f64 = 1e-3;
const MAX_EVALS_PER_START: usize = 200;

/// Fitted hyperparameters of one objective's GP; variances are on the
/// standardized target scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub target_mean: f64,
    pub target_std: f64,
}

#[derive(Debug, Clone)]
struct Posterior {
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
}

/// Serialized form: training data and hyperparameters only. The posterior
/// factorization is re-derived on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpModelData {
    pub inputs: Vec<Vec<f64>>,
    /// `targets[j][i]` is objective `j` at input `i`.
    pub targets: Vec<Vec<f64>>,
    pub hyperparams: Vec<Hyperparams>,
}

/// One GP per objective over a shared set of normalized training inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GpModelData", into = "GpModelData")]
pub struct GpModel {
    data: GpModelData,
    posteriors: Vec<Posterior>,
}

impl PartialEq for GpModel {
    fn eq(&self, other: &Self) -> bool {
        self.data == other.data
    }
}

impl TryFrom<GpModelData> for GpModel {
    type Error = Error;
    fn try_from(data: GpModelData) -> Result<Self> {
        GpModel::from_data(data)
    }
}

impl From<GpModel> for GpModelData {
    fn from(m: GpModel) -> Self {
        m.data
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kernel_matrix(sq: &DMatrix<f64>, length_scale: f64, signal_variance: f64, noise: f64) -> DMatrix<f64> {
    let inv = -0.5 / (length_scale * length_scale);
    let mut k = sq.map(|d| signal_variance * (d * inv).exp());
    for i in 0..k.nrows() {
        k[(i, i)] += noise;
    }
    k
}

fn pairwise_sq(inputs: &[Vec<f64>]) -> DMatrix<f64> {
    let n = inputs.len();
    DMatrix::from_fn(n, n, |i, j| sq_dist(&inputs[i], &inputs[j]))
}

/// Factorize `K + noise I`, multiplying the noise by 10 on failure up to
/// [`JITTER_RETRIES`] times. Returns the factor and the noise actually used.
fn factorize(sq: &DMatrix<f64>, length_scale: f64, signal_variance: f64, noise: f64) -> Option<(DMatrix<f64>, f64)> {
    let mut noise = noise;
    for _ in 0..=JITTER_RETRIES {
        let k = kernel_matrix(sq, length_scale, signal_variance, noise);
        if let Some(c) = k.cholesky() {
            let l = c.unpack();
            if l.diagonal().iter().all(|d| *d > 0.0 && d.is_finite()) {
                return Some((l, noise));
            }
        }
        noise *= 10.0;
    }
    None
}

fn lml_from_factor(l: &DMatrix<f64>, y: &DVector<f64>) -> (f64, DVector<f64>) {
    let n = y.len() as f64;
    let tmp = l.solve_lower_triangular(y).expect("non-singular factor");
    let alpha = l.transpose().solve_upper_triangular(&tmp).expect("non-singular factor");
    let log_det: f64 = l.diagonal().iter().map(|d| d.ln()).sum();
    let lml = -0.5 * y.dot(&alpha) - log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
    (lml, alpha)
}

/// Log marginal likelihood of standardized targets `y` under the given
/// hyperparameters, using the jitter retry schedule. `None` when the kernel
/// matrix cannot be factorized.
pub fn log_marginal_likelihood(inputs: &[Vec<f64>], y: &[f64], length_scale: f64, signal_variance: f64) -> Option<f64> {
    let sq = pairwise_sq(inputs);
    let (l, _) = factorize(&sq, length_scale, signal_variance, NOISE_FLOOR)?;
    Some(lml_from_factor(&l, &DVector::from_column_slice(y)).0)
}

/// The deterministic multi-start points, as `(length_scale, signal_variance)`.
pub fn starting_points() -> Vec<(f64, f64)> {
    let mut rng = seeded_rng(START_SEED);
    let (l0, l1) = (LENGTH_SCALE_RANGE.0.ln(), LENGTH_SCALE_RANGE.1.ln());
    let (s0, s1) = (SIGNAL_VARIANCE_RANGE.0.ln(), SIGNAL_VARIANCE_RANGE.1.ln());
    latin_hypercube(N_STARTS, 2, &mut rng)
        .into_iter()
        .map(|u| ((l0 + u[0] * (l1 - l0)).exp(), (s0 + u[1] * (s1 - s0)).exp()))
        .collect()
}

/// Bounded compass search in log-hyperparameter space from one start.
fn local_search(sq: &DMatrix<f64>, y: &DVector<f64>, start: (f64, f64)) -> ((f64, f64), f64) {
    let lo = [LENGTH_SCALE_RANGE.0.ln(), SIGNAL_VARIANCE_RANGE.0.ln()];
    let hi = [LENGTH_SCALE_RANGE.1.ln(), SIGNAL_VARIANCE_RANGE.1.ln()];
    let eval = |p: [f64; 2]| -> f64 {
        match factorize(sq, p[0].exp(), p[1].exp(), NOISE_FLOOR) {
            Some((l, _)) => {
                let v = lml_from_factor(&l, y).0;
                if v.is_finite() {
                    v
                } else {
                    f64::NEG_INFINITY
                }
            }
            None => f64::NEG_INFINITY,
        }
    };
    let mut p = [start.0.ln(), start.1.ln()];
    let mut best = eval(p);
    let mut step = 1.0;
    let mut evals = 1;
    while step >= MIN_STEP && evals < MAX_EVALS_PER_START {
        let mut improved = false;
        for axis in 0..2 {
            for dir in [1.0, -1.0] {
                let mut q = p;
                q[axis] = (q[axis] + dir * step).clamp(lo[axis], hi[axis]);
                if q == p {
                    continue;
                }
                let v = eval(q);
                evals += 1;
                if v > best {
                    best = v;
                    p = q;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    ((p[0].exp(), p[1].exp()), best)
}

fn standardize(y: &[f64]) -> (f64, f64, Vec<f64>) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let mut std = var.sqrt();
    if !(std > 1e-12 * mean.abs().max(1.0)) {
        std = 1.0;
    }
    (mean, std, y.iter().map(|v| (v - mean) / std).collect())
}

fn fit_objective(sq: &DMatrix<f64>, y_raw: &[f64], exec: Execution) -> Result<(Hyperparams, Posterior)> {
    let (mean, std, ys) = standardize(y_raw);
    let y = DVector::from_vec(ys);
    let starts = starting_points();
    let results = exec::map_with(exec, &starts, |s| local_search(sq, &y, *s));
    let mut best: Option<((f64, f64), f64)> = None;
    for r in results {
        if best.is_none_or(|b| r.1 > b.1) {
            best = Some(r);
        }
    }
    let ((length_scale, signal_variance), lml) = best.expect("at least one start");
    if !lml.is_finite() {
        return Err(Error::Cholesky {
            attempts: JITTER_RETRIES + 1,
        });
    }
    let (l, noise) = factorize(sq, length_scale, signal_variance, NOISE_FLOOR).ok_or(Error::Cholesky {
        attempts: JITTER_RETRIES + 1,
    })?;
    let (_, alpha) = lml_from_factor(&l, &y);
    Ok((
        Hyperparams {
            length_scale,
            signal_variance,
            noise_variance: noise,
            target_mean: mean,
            target_std: std,
        },
        Posterior { chol: l, alpha },
    ))
}

fn canonical_order(inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..inputs.len()).collect();
    idx.sort_by(|&a, &b| {
        let key = |i: usize| inputs[i].iter().chain(targets.iter().map(move |t| &t[i]));
        key(a)
            .zip(key(b))
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    idx
}

impl GpModel {
    /// Fit on normalized `inputs` with row-major `outputs` (`outputs[i]` is
    /// the objective vector of `inputs[i]`).
    pub fn fit(inputs: &[Vec<f64>], outputs: &[Vec<f64>]) -> Result<Self> {
        Self::fit_with(inputs, outputs, Execution::default())
    }

    pub fn fit_with(inputs: &[Vec<f64>], outputs: &[Vec<f64>], exec: Execution) -> Result<Self> {
        if inputs.len() != outputs.len() {
            return Err(Error::Dimension {
                expected: inputs.len(),
                got: outputs.len(),
            });
        }
        let distinct = {
            let mut v: Vec<&Vec<f64>> = inputs.iter().collect();
            v.sort_by(|a, b| {
                a.iter()
                    .zip(b.iter())
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            v.dedup();
            v.len()
        };
        if distinct < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                got: distinct,
            });
        }
        let d = inputs[0].len();
        let m = outputs[0].len();
        if inputs.iter().any(|x| x.len() != d) || outputs.iter().any(|y| y.len() != m) || m == 0 {
            return Err(Error::usage("ragged GP training data"));
        }
        if outputs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::usage("GP targets must be finite"));
        }

        let by_objective: Vec<Vec<f64>> = (0..m).map(|j| outputs.iter().map(|y| y[j]).collect()).collect();
        let order = canonical_order(inputs, &by_objective);
        let inputs: Vec<Vec<f64>> = order.iter().map(|&i| inputs[i].clone()).collect();
        let targets: Vec<Vec<f64>> = by_objective
            .iter()
            .map(|t| order.iter().map(|&i| t[i]).collect())
            .collect();

        let sq = pairwise_sq(&inputs);
        let fitted = exec::map_with(exec, &targets, |t| fit_objective(&sq, t, exec));
        let mut hyperparams = Vec::with_capacity(m);
        let mut posteriors = Vec::with_capacity(m);
        for r in fitted {
            let (h, p) = r?;
            hyperparams.push(h);
            posteriors.push(p);
        }
        Ok(GpModel {
            data: GpModelData {
                inputs,
                targets,
                hyperparams,
            },
            posteriors,
        })
    }

    /// Rebuild a model from stored data without refitting hyperparameters.
    pub fn from_data(data: GpModelData) -> Result<Self> {
        let n = data.inputs.len();
        if n == 0 || data.targets.len() != data.hyperparams.len() || data.targets.iter().any(|t| t.len() != n) {
            return Err(Error::usage("inconsistent GP model data"));
        }
        let sq = pairwise_sq(&data.inputs);
        let mut posteriors = Vec::with_capacity(data.targets.len());
        for (t, h) in data.targets.iter().zip(&data.hyperparams) {
            let k = kernel_matrix(&sq, h.length_scale, h.signal_variance, h.noise_variance);
            let l = k
                .cholesky()
                .ok_or(Error::Cholesky { attempts: 1 })?
                .unpack();
            let y = DVector::from_iterator(n, t.iter().map(|v| (v - h.target_mean) / h.target_std));
            let (_, alpha) = lml_from_factor(&l, &y);
            posteriors.push(Posterior { chol: l, alpha });
        }
        Ok(GpModel { data, posteriors })
    }

    pub fn data(&self) -> &GpModelData {
        &self.data
    }

    pub fn hyperparams(&self) -> &[Hyperparams] {
        &self.data.hyperparams
    }

    pub fn n_train(&self) -> usize {
        self.data.inputs.len()
    }

    pub fn dim(&self) -> usize {
        self.data.inputs[0].len()
    }

    /// Log marginal likelihood of objective `j` at its fitted hyperparameters.
    pub fn fitted_lml(&self, j: usize) -> f64 {
        let h = &self.data.hyperparams[j];
        let y = DVector::from_iterator(
            self.n_train(),
            self.data.targets[j].iter().map(|v| (v - h.target_mean) / h.target_std),
        );
        lml_from_factor(&self.posteriors[j].chol, &y).0
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn sq_to_train(&self, x: &[f64]) -> Vec<f64> {
        self.data.inputs.iter().map(|xi| sq_dist(xi, x)).collect()
    }

    pub fn predict_batch(&self, xs: &[Vec<f64>], exec: Execution) -> Result<Vec<Prediction>> {
        exec::map_with(exec, xs, |x| self.predict(x)).into_iter().collect()
    }
}

impl Surrogate for GpModel {
    fn n_objectives(&self) -> usize {
        self.data.hyperparams.len()
    }

    fn predict(&self, x: &[f64]) -> Result<Prediction> {
        self.check_input(x)?;
        let sq = self.sq_to_train(x);
        let n = sq.len();
        let mut mean = Vec::with_capacity(self.n_objectives());
        let mut std = Vec::with_capacity(self.n_objectives());
        for (h, p) in self.data.hyperparams.iter().zip(&self.posteriors) {
            let inv = -0.5 / (h.length_scale * h.length_scale);
            let k = DVector::from_iterator(n, sq.iter().map(|d| h.signal_variance * (d * inv).exp()));
            let mu = k.dot(&p.alpha);
            let v = p.chol.solve_lower_triangular(&k).expect("non-singular factor");
            let var = (h.signal_variance - v.norm_squared()).max(0.0);
            mean.push(h.target_mean + h.target_std * mu);
            std.push(var.sqrt() * h.target_std);
        }
        Ok(Prediction { mean, std })
    }

    fn predict_mean(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let sq = self.sq_to_train(x);
        Ok(self
            .data
            .hyperparams
            .iter()
            .zip(&self.posteriors)
            .map(|(h, p)| {
                let inv = -0.5 / (h.length_scale * h.length_scale);
                let mu: f64 = sq
                    .iter()
                    .zip(p.alpha.iter())
                    .map(|(d, a)| h.signal_variance * (d * inv).exp() * a)
                    .sum();
                h.target_mean + h.target_std * mu
            })
            .collect())
    }
}

/// Fit a GP on true evaluations, normalizing decisions with `bounds`.
pub fn train_gp(data: &[EvaluatedSolution], bounds: &Bounds) -> Result<GpModel> {
    let inputs = data
        .iter()
        .map(|s| bounds.normalize(&s.decision).map(|d| d.0))
        .collect::<Result<Vec<_>>>()?;
    let outputs: Vec<Vec<f64>> = data.iter().map(|s| s.objectives.0.clone()).collect();
    if inputs.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: inputs.len(),
        });
    }
    GpModel::fit(&inputs, &outputs)
}
