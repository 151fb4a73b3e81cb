use serde::{Deserialize, Serialize};

use crate::error::{Gp3Error, Result};
use crate::gp::GpModel;
use crate::interval::Interval;
use crate::kernels::DerivBound;
use crate::par::Workers;
use crate::rect::Hyperrectangle;

use super::problem::ProblemSpec;

/// Local Lipschitz constant of the posterior mean on `cell`.
///
/// Per axis, the derivative enclosures of all kernel terms are combined with
/// the weights (upper rows with positive weights, lower rows with negative
/// ones and vice versa), and the larger squared row sum bounds the squared
/// partial derivative of `μ`. The result bounds `‖∇μ‖` on the cell.
pub fn local_lipschitz(model: &GpModel, cell: &Hyperrectangle) -> Result<f64> {
    let d = model.dim();
    if cell.dim() != d {
        return Err(Gp3Error::DimensionMismatch {
            expected: d,
            got: cell.dim(),
        });
    }
    let spec = model.spec();
    let mut scratch = vec![DerivBound { upper: 0.0, lower: 0.0 }; d];
    let mut upper = vec![0.0; d];
    let mut lower = vec![0.0; d];
    for (xi, &w) in model.train().rows().zip(model.weights()) {
        if w == 0.0 {
            continue;
        }
        spec.derivative_bounds_all(xi, cell.center(), cell.half_widths(), &mut scratch)?;
        for j in 0..d {
            let b = scratch[j];
            if w > 0.0 {
                upper[j] += w * b.upper;
                lower[j] += w * b.lower;
            } else {
                upper[j] += w * b.lower;
                lower[j] += w * b.upper;
            }
        }
    }
    Ok(upper
        .iter()
        .zip(&lower)
        .map(|(u, l)| (u * u).max(l * l))
        .sum::<f64>()
        .sqrt())
}

/// Certified range of `g(f(x)) - μ(x)` on a cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellBounds {
    pub lo: f64,
    pub hi: f64,
    /// `μ(c)`
    pub mean_center: f64,
}

impl CellBounds {
    /// `max(0, -lo)`
    pub fn eps1(&self) -> f64 {
        (-self.lo).max(0.0)
    }

    /// `max(0, hi)`
    pub fn eps2(&self) -> f64 {
        self.hi.max(0.0)
    }

    pub fn as_interval(&self) -> Interval {
        Interval::hull(self.lo, self.hi)
    }
}

/// `g(f(c)) - μ(c) ∓ (L_g ρ_f + L_μ ‖b‖)`, where `ρ_f` bounds `‖f(x) - f(c)‖`
/// on the cell (`L_f ‖b‖` for a Lipschitz map) and `L_g` is valid on a box
/// enclosing `f(cell)`.
pub fn cell_bounds(
    problem: &ProblemSpec,
    model: &GpModel,
    cell: &Hyperrectangle,
    l_mu: f64,
) -> Result<CellBounds> {
    let non_finite = |what: &str| Gp3Error::NonFinite {
        context: what.to_string(),
        center: cell.center().to_vec(),
    };
    let image = problem.f.image(cell)?;
    if image.point.iter().any(|v| !v.is_finite()) || !image.radius.is_finite() {
        return Err(non_finite("evaluating f"));
    }
    let g_fc = problem.g.eval(model, &image.point);
    if !g_fc.is_finite() {
        return Err(non_finite("evaluating g(f(c))"));
    }
    let mu_c = model.mean_unchecked(cell.center());
    let l_g = if image.radius > 0.0 {
        problem.g.lipschitz_on(model, &image.rect)?
    } else {
        0.0
    };
    let slack = l_g * image.radius + l_mu * cell.radius();
    if !slack.is_finite() {
        return Err(non_finite("combining Lipschitz constants"));
    }
    let range = Interval::point(g_fc - mu_c) + Interval::hull(-slack, slack);
    Ok(CellBounds {
        lo: range.lo(),
        hi: range.hi(),
        mean_center: mu_c,
    })
}

/// Certified enclosure of `μ` over `cell`: `μ(c) ± L_μ ‖b‖`.
pub fn certified_range(model: &GpModel, cell: &Hyperrectangle) -> Result<Interval> {
    let l = local_lipschitz(model, cell)?;
    let m = model.mean(cell.center())?;
    let r = l * cell.radius();
    Ok(Interval::hull(m - r, m + r))
}

/// Lower bound on `min μ` over the union of `cells`.
pub fn certified_min(model: &GpModel, cells: &[Hyperrectangle], workers: &Workers) -> Result<f64> {
    if cells.is_empty() {
        return Err(Gp3Error::Empty("no cells for certified minimum".into()));
    }
    let lows = workers.try_map(cells, |c| certified_range(model, c).map(|r| r.lo()))?;
    Ok(lows.into_iter().fold(f64::INFINITY, f64::min))
}
