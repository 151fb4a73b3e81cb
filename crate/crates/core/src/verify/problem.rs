use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Gp3Error, Result};
use crate::gp::GpModel;
use crate::rect::Hyperrectangle;

use super::bounds::local_lipschitz;

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type MapFn = Arc<dyn Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync>;

/// The function `g` compared against the posterior mean.
#[derive(Clone)]
pub enum Observable {
    /// `g = μ`; its Lipschitz constant on the image box comes from the model.
    Mean,
    /// A user function with a Lipschitz constant valid on the image of `f`.
    Function { eval: ScalarFn, lipschitz: f64 },
}

impl Observable {
    pub fn eval(&self, model: &GpModel, x: &[f64]) -> f64 {
        match self {
            Observable::Mean => model.mean_unchecked(x),
            Observable::Function { eval, .. } => eval(x),
        }
    }

    /// Lipschitz constant of `g` on `image`.
    pub fn lipschitz_on(&self, model: &GpModel, image: &Hyperrectangle) -> Result<f64> {
        match self {
            Observable::Mean => local_lipschitz(model, image),
            Observable::Function { lipschitz, .. } => Ok(*lipschitz),
        }
    }
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Observable::Mean => write!(f, "Mean"),
            Observable::Function { lipschitz, .. } => write!(f, "Function {{ lipschitz: {lipschitz} }}"),
        }
    }
}

/// The state map `f`.
#[derive(Clone)]
pub enum StateMap {
    Identity,
    /// Map with a Lipschitz constant `L_f` valid on the domain.
    Lipschitz { eval: MapFn, lipschitz: f64 },
    /// Rounds every coordinate to the nearest point of the lattice
    /// `origin + spacing · ℤ^d` (ties round up).
    NearestGrid { origin: Vec<f64>, spacing: Vec<f64> },
}

/// Enclosure of `f(cell)`.
#[derive(Debug, Clone)]
pub struct Image {
    /// `f(c)`
    pub point: Vec<f64>,
    /// Box containing `f(x)` for every `x` in the cell.
    pub rect: Hyperrectangle,
    /// Bound on `‖f(x) - f(c)‖` over the cell.
    pub radius: f64,
}

impl StateMap {
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            StateMap::Identity => Ok(x.to_vec()),
            StateMap::Lipschitz { eval, .. } => eval(x),
            StateMap::NearestGrid { origin, spacing } => Ok(x
                .iter()
                .zip(origin.iter().zip(spacing))
                .map(|(v, (o, h))| o + h * ((v - o) / h + 0.5).floor())
                .collect()),
        }
    }

    pub fn image(&self, cell: &Hyperrectangle) -> Result<Image> {
        match self {
            StateMap::Identity => Ok(Image {
                point: cell.center().to_vec(),
                rect: cell.clone(),
                radius: cell.radius(),
            }),
            StateMap::Lipschitz { lipschitz, .. } => {
                let point = self.apply(cell.center())?;
                if point.len() != cell.dim() {
                    return Err(Gp3Error::DimensionMismatch {
                        expected: cell.dim(),
                        got: point.len(),
                    });
                }
                let radius = lipschitz * cell.radius();
                // Cube around f(c) containing the ball of radius L_f ‖b‖.
                let rect = Hyperrectangle::new(point.clone(), vec![radius; cell.dim()])?;
                Ok(Image {
                    point,
                    rect,
                    radius,
                })
            }
            StateMap::NearestGrid { .. } => {
                let point = self.apply(cell.center())?;
                let lo = self.apply(&cell.lower())?;
                let hi = self.apply(&cell.upper())?;
                let radius = point
                    .iter()
                    .zip(lo.iter().zip(&hi))
                    .map(|(p, (l, h))| (p - l).max(h - p).powi(2))
                    .sum::<f64>()
                    .sqrt();
                Ok(Image {
                    point,
                    rect: Hyperrectangle::from_bounds(&lo, &hi)?,
                    radius,
                })
            }
        }
    }
}

impl fmt::Debug for StateMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateMap::Identity => write!(f, "Identity"),
            StateMap::Lipschitz { lipschitz, .. } => write!(f, "Lipschitz {{ lipschitz: {lipschitz} }}"),
            StateMap::NearestGrid { origin, spacing } => f
                .debug_struct("NearestGrid")
                .field("origin", origin)
                .field("spacing", spacing)
                .finish(),
        }
    }
}

/// Target tolerance `ε̄(c)`; `+∞` disables that side.
#[derive(Clone)]
pub enum TargetBound {
    Constant(f64),
    Function(ScalarFn),
}

impl TargetBound {
    pub fn unbounded() -> Self {
        TargetBound::Constant(f64::INFINITY)
    }

    pub fn at(&self, c: &[f64]) -> f64 {
        match self {
            TargetBound::Constant(v) => *v,
            TargetBound::Function(f) => f(c),
        }
    }
}

impl fmt::Debug for TargetBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetBound::Constant(v) => write!(f, "Constant({v})"),
            TargetBound::Function(_) => write!(f, "Function(..)"),
        }
    }
}

/// Region whose cells are taken as verified without evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Exclusion {
    Ball { center: Vec<f64>, radius: f64 },
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

impl Exclusion {
    /// Whether the whole cell lies inside the region.
    pub fn contains_cell(&self, cell: &Hyperrectangle) -> bool {
        match self {
            Exclusion::Ball { center, radius } => {
                let dist = center
                    .iter()
                    .zip(cell.center())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                dist + cell.radius() <= *radius
            }
            Exclusion::Box { lower, upper } => {
                let lo = cell.lower();
                let hi = cell.upper();
                (0..cell.dim()).all(|k| lower[k] <= lo[k] && hi[k] <= upper[k])
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Exclusion::Ball { center, .. } => center.len(),
            Exclusion::Box { lower, .. } => lower.len(),
        }
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        match self {
            Exclusion::Ball { center, radius } => {
                center.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() <= *radius
            }
            Exclusion::Box { lower, upper } => {
                x.iter().zip(lower.iter().zip(upper)).all(|(v, (l, u))| l <= v && v <= u)
            }
        }
    }
}

/// Everything the refinement driver needs besides the model.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub g: Observable,
    pub f: StateMap,
    /// `ε̄₁(c)`: require `g(f(x)) - μ(x) ≥ -ε̄₁(c)`.
    pub target_lower: TargetBound,
    /// `ε̄₂(c)`: require `g(f(x)) - μ(x) ≤ ε̄₂(c)`.
    pub target_upper: TargetBound,
    pub b_min: f64,
    pub domain: Hyperrectangle,
    pub initial_cells: usize,
    /// Hard cap on refinement depth, independent of `b_min`.
    pub max_depth: u32,
    /// Stop refining cells whose whole range provably misses a target.
    pub prune_violations: bool,
    /// Cells still open once this many have been evaluated are reported as
    /// unresolved.
    pub max_evaluations: usize,
}

impl ProblemSpec {
    /// `g = μ`, `f = id`, unbounded targets, one initial cell.
    pub fn new(domain: Hyperrectangle, b_min: f64) -> Self {
        Self {
            g: Observable::Mean,
            f: StateMap::Identity,
            target_lower: TargetBound::unbounded(),
            target_upper: TargetBound::unbounded(),
            b_min,
            domain,
            initial_cells: 1,
            max_depth: 60,
            prune_violations: true,
            max_evaluations: usize::MAX,
        }
    }

    pub fn with_g(mut self, g: Observable) -> Self {
        self.g = g;
        self
    }

    pub fn with_f(mut self, f: StateMap) -> Self {
        self.f = f;
        self
    }

    pub fn with_targets(mut self, lower: TargetBound, upper: TargetBound) -> Self {
        self.target_lower = lower;
        self.target_upper = upper;
        self
    }

    pub fn with_initial_cells(mut self, m: usize) -> Self {
        self.initial_cells = m;
        self
    }

    pub fn with_max_depth(mut self, depth: u32) -> Self {
        self.max_depth = depth;
        self
    }

    pub fn with_pruning(mut self, prune: bool) -> Self {
        self.prune_violations = prune;
        self
    }

    pub fn with_max_evaluations(mut self, budget: usize) -> Self {
        self.max_evaluations = budget;
        self
    }

    pub(crate) fn validate(&self, model: &GpModel) -> Result<()> {
        if model.dim() != self.domain.dim() {
            return Err(Gp3Error::DimensionMismatch {
                expected: self.domain.dim(),
                got: model.dim(),
            });
        }
        if !(self.b_min > 0.0 && self.b_min.is_finite()) {
            return Err(Gp3Error::InvalidParameter(format!(
                "b_min must be positive, got {}",
                self.b_min
            )));
        }
        if self.initial_cells == 0 {
            return Err(Gp3Error::InvalidParameter("initial_cells must be positive".into()));
        }
        if self.domain.half_widths().iter().any(|b| *b <= 0.0) {
            return Err(Gp3Error::InvalidCell("domain has a zero-width axis".into()));
        }
        match &self.f {
            StateMap::Lipschitz { lipschitz, .. } if !(*lipschitz >= 0.0) => {
                return Err(Gp3Error::InvalidParameter("L_f must be non-negative".into()))
            }
            StateMap::NearestGrid { origin, spacing }
                if origin.len() != self.domain.dim()
                    || spacing.len() != self.domain.dim()
                    || spacing.iter().any(|h| !(*h > 0.0)) =>
            {
                return Err(Gp3Error::InvalidParameter("invalid nearest-grid lattice".into()))
            }
            _ => {}
        }
        if let Observable::Function { lipschitz, .. } = &self.g {
            if !(*lipschitz >= 0.0) {
                return Err(Gp3Error::InvalidParameter("L_g must be non-negative".into()));
            }
        }
        Ok(())
    }
}
