//! Zero-mean Gaussian process regression: weight fitting, posterior mean,
//! log marginal likelihood and a derivative-free hyperparameter search.

use argmin::core::{CostFunction, Error as ArgminError, Executor};
use argmin::solver::neldermead::NelderMead;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Gp3Error, Result};
use crate::kernels::{KernelFamily, KernelSpec};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Training inputs (row-major, `N × d`) and targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    dim: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
}

impl TrainingSet {
    pub fn new(dim: usize, inputs: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Gp3Error::InvalidParameter("input dimension must be positive".into()));
        }
        if targets.is_empty() {
            return Err(Gp3Error::Empty("training set has no samples".into()));
        }
        if inputs.len() != dim * targets.len() {
            return Err(Gp3Error::DimensionMismatch {
                expected: dim * targets.len(),
                got: inputs.len(),
            });
        }
        if inputs.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Gp3Error::InvalidParameter("training data must be finite".into()));
        }
        Ok(Self {
            dim,
            inputs,
            targets,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], targets: Vec<f64>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.len() != targets.len() {
            return Err(Gp3Error::DimensionMismatch {
                expected: rows.len(),
                got: targets.len(),
            });
        }
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(Gp3Error::DimensionMismatch {
                expected: dim,
                got: r.len(),
            });
        }
        Self::new(dim, rows.concat(), targets)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.inputs.chunks_exact(self.dim)
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Same inputs with different targets.
    pub fn with_targets(&self, targets: Vec<f64>) -> Result<Self> {
        Self::new(self.dim, self.inputs.clone(), targets)
    }
}

/// Fitted GP posterior mean `μ(x) = k(x)ᵀ λ`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpModel {
    spec: KernelSpec,
    noise_variance: f64,
    jitter: f64,
    train: TrainingSet,
    weights: Vec<f64>,
    /// Row-major lower-triangular Cholesky factor of `K + (σ_n² + jitter) I`.
    factor: Vec<f64>,
}

/// Lower-triangular Cholesky factorization in place (row-major, `n × n`).
fn cholesky(a: &mut [f64], n: usize) -> Result<()> {
    for j in 0..n {
        let mut diag = a[j * n + j];
        for k in 0..j {
            diag -= a[j * n + k] * a[j * n + k];
        }
        if !(diag > 0.0 && diag.is_finite()) {
            return Err(Gp3Error::NotPositiveDefinite {
                pivot: j,
                value: diag,
            });
        }
        let ljj = diag.sqrt();
        a[j * n + j] = ljj;
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / ljj;
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            a[i * n + j] = 0.0;
        }
    }
    Ok(())
}

/// Solves `L Lᵀ x = b` for a row-major lower-triangular `L`.
fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut z = b.to_vec();
    for i in 0..n {
        let mut v = z[i];
        for k in 0..i {
            v -= l[i * n + k] * z[k];
        }
        z[i] = v / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut v = z[i];
        for k in i + 1..n {
            v -= l[k * n + i] * z[k];
        }
        z[i] = v / l[i * n + i];
    }
    z
}

impl GpModel {
    /// Fits `λ = (K + σ_n² I)⁻¹ y` through a Cholesky factorization.
    ///
    /// With `σ_n² = 0` a failed factorization is retried once with jitter
    /// `1e-10 · σ_f²`; the jitter used is reported by [`GpModel::jitter`].
    pub fn fit(train: TrainingSet, spec: KernelSpec, noise_variance: f64) -> Result<Self> {
        if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
            return Err(Gp3Error::InvalidParameter(format!(
                "noise variance must be non-negative, got {noise_variance}"
            )));
        }
        if spec.dim() != train.dim() {
            return Err(Gp3Error::DimensionMismatch {
                expected: spec.dim(),
                got: train.dim(),
            });
        }
        let n = train.len();
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let k = spec.eval_unchecked(train.row(i), train.row(j));
                gram[i * n + j] = k;
                gram[j * n + i] = k;
            }
        }
        let attempt = |jitter: f64| -> Result<Vec<f64>> {
            let mut a = gram.clone();
            for i in 0..n {
                a[i * n + i] += noise_variance + jitter;
            }
            cholesky(&mut a, n)?;
            Ok(a)
        };
        let (factor, jitter) = match attempt(0.0) {
            Ok(f) => (f, 0.0),
            Err(e) if noise_variance == 0.0 => {
                let jitter = 1e-10 * spec.signal_variance();
                log::warn!("factorization failed ({e}); retrying with jitter {jitter:e}");
                (attempt(jitter)?, jitter)
            }
            Err(e) => return Err(e),
        };
        let weights = cholesky_solve(&factor, n, train.targets());
        Ok(Self {
            spec,
            noise_variance,
            jitter,
            train,
            weights,
            factor,
        })
    }

    /// Model with the given weights and no factorization, for analyses that
    /// only need `μ(x) = k(x)ᵀ λ`.
    pub fn from_weights(train: TrainingSet, spec: KernelSpec, weights: Vec<f64>) -> Result<Self> {
        if spec.dim() != train.dim() {
            return Err(Gp3Error::DimensionMismatch {
                expected: spec.dim(),
                got: train.dim(),
            });
        }
        if weights.len() != train.len() {
            return Err(Gp3Error::DimensionMismatch {
                expected: train.len(),
                got: weights.len(),
            });
        }
        Ok(Self {
            spec,
            noise_variance: 0.0,
            jitter: 0.0,
            train,
            weights,
            factor: Vec::new(),
        })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn train(&self) -> &TrainingSet {
        &self.train
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.train.dim()
    }

    /// Posterior mean at `x`.
    pub fn mean(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Gp3Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.mean_unchecked(x))
    }

    #[inline]
    pub(crate) fn mean_unchecked(&self, x: &[f64]) -> f64 {
        self.train
            .rows()
            .zip(&self.weights)
            .map(|(xi, w)| w * self.spec.eval_unchecked(xi, x))
            .sum()
    }

    /// Gradient of the posterior mean at `x`.
    pub fn mean_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Gp3Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let mut g = vec![0.0; self.dim()];
        for (xi, w) in self.train.rows().zip(&self.weights) {
            for (j, gj) in g.iter_mut().enumerate() {
                *gj += w * self.spec.partial_unchecked(xi, x, j);
            }
        }
        Ok(g)
    }

    /// `log p(y | X, θ)`; NaN for models built with [`GpModel::from_weights`].
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.train.len();
        if self.factor.is_empty() {
            return f64::NAN;
        }
        let fit: f64 = self
            .train
            .targets()
            .iter()
            .zip(&self.weights)
            .map(|(y, w)| y * w)
            .sum();
        let log_det: f64 = (0..n).map(|i| self.factor[i * n + i].ln()).sum();
        -0.5 * fit - log_det - 0.5 * n as f64 * LN_2PI
    }

    /// `‖(K + σ_n² I) λ - y‖`, recomputed from the kernel.
    pub fn residual_norm(&self) -> f64 {
        let n = self.train.len();
        let diag = self.noise_variance + self.jitter;
        (0..n)
            .map(|i| {
                let mut v = diag * self.weights[i] - self.train.targets()[i];
                for j in 0..n {
                    v += self.spec.eval_unchecked(self.train.row(i), self.train.row(j)) * self.weights[j];
                }
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Hyperparameter search settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HyperparameterSearch {
    /// Number of additional randomized starting simplices.
    pub restarts: usize,
    pub max_iters: u64,
    pub seed: u64,
    /// Keep the noise variance at its initial value.
    pub freeze_noise: bool,
}

impl Default for HyperparameterSearch {
    fn default() -> Self {
        Self {
            restarts: 4,
            max_iters: 400,
            seed: 0,
            freeze_noise: false,
        }
    }
}

/// Result of [`optimize_hyperparameters`].
#[derive(Debug, Clone)]
pub struct Hyperparameters {
    pub spec: KernelSpec,
    pub noise_variance: f64,
    pub log_marginal_likelihood: f64,
}

#[derive(Clone)]
struct NegLogLikelihood<'a> {
    train: &'a TrainingSet,
    family: KernelFamily,
    noise: Option<f64>,
}

impl NegLogLikelihood<'_> {
    fn decode(&self, p: &[f64]) -> Result<(KernelSpec, f64)> {
        let d = self.train.dim();
        let spec = KernelSpec::new(self.family, p[0].exp(), p[1..=d].iter().map(|v| v.exp()).collect())?;
        let noise = self.noise.unwrap_or_else(|| p[d + 1].exp());
        Ok((spec, noise))
    }

    fn lml(&self, p: &[f64]) -> Option<f64> {
        let (spec, noise) = self.decode(p).ok()?;
        let m = GpModel::fit(self.train.clone(), spec, noise).ok()?;
        (m.jitter() == 0.0).then(|| m.log_marginal_likelihood()).filter(|v| v.is_finite())
    }
}

impl CostFunction for NegLogLikelihood<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, ArgminError> {
        Ok(self.lml(p).map_or(1e300, |v| -v))
    }
}

/// Maximizes the log marginal likelihood over `(σ_f², l, σ_n²)` in log
/// space with Nelder–Mead, from `init` and `search.restarts` perturbed starts.
///
/// The returned likelihood is never below the value at `init`.
pub fn optimize_hyperparameters(
    train: &TrainingSet,
    init: &KernelSpec,
    init_noise: f64,
    search: &HyperparameterSearch,
) -> Result<Hyperparameters> {
    let d = train.dim();
    if init.dim() != d {
        return Err(Gp3Error::DimensionMismatch {
            expected: d,
            got: init.dim(),
        });
    }
    let objective = NegLogLikelihood {
        train,
        family: init.family(),
        noise: search.freeze_noise.then_some(init_noise),
    };
    let mut start = vec![init.signal_variance().ln()];
    start.extend(init.length_scales().iter().map(|l| l.ln()));
    if !search.freeze_noise {
        if init_noise <= 0.0 {
            return Err(Gp3Error::InvalidParameter(
                "noise variance must be positive when it is optimized".into(),
            ));
        }
        start.push(init_noise.ln());
    }
    let init_lml = objective.lml(&start).ok_or_else(|| {
        Gp3Error::Optimizer("log marginal likelihood is not finite at the initial parameters".into())
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(search.seed);
    let mut best = (start.clone(), init_lml);
    for restart in 0..=search.restarts {
        let origin: Vec<f64> = if restart == 0 {
            start.clone()
        } else {
            start.iter().map(|v| v + rng.gen_range(-1.0..1.0)).collect()
        };
        let mut simplex = vec![origin.clone()];
        for k in 0..origin.len() {
            let mut v = origin.clone();
            v[k] += 0.5;
            simplex.push(v);
        }
        let solver = NelderMead::new(simplex)
            .with_sd_tolerance(1e-9)
            .map_err(|e| Gp3Error::Optimizer(e.to_string()))?;
        let res = Executor::new(objective.clone(), solver)
            .configure(|s| s.max_iters(search.max_iters))
            .run()
            .map_err(|e| Gp3Error::Optimizer(e.to_string()))?;
        if let Some(p) = res.state().best_param.clone() {
            if let Some(v) = objective.lml(&p) {
                if v > best.1 {
                    best = (p, v);
                }
            }
        }
    }
    let (spec, noise_variance) = objective.decode(&best.0)?;
    Ok(Hyperparameters {
        spec,
        noise_variance,
        log_marginal_likelihood: best.1,
    })
}
