//! Axis-aligned hyperrectangles described by center and half-widths.

use serde::{Deserialize, Serialize};

use crate::error::{Gp3Error, Result};
use crate::interval::Interval;

/// The box `{x : |x - c| <= b}` (element-wise).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperrectangle {
    center: Vec<f64>,
    half_widths: Vec<f64>,
}

impl Hyperrectangle {
    pub fn new(center: Vec<f64>, half_widths: Vec<f64>) -> Result<Self> {
        if center.is_empty() {
            return Err(Gp3Error::InvalidCell("zero-dimensional cell".into()));
        }
        if center.len() != half_widths.len() {
            return Err(Gp3Error::DimensionMismatch {
                expected: center.len(),
                got: half_widths.len(),
            });
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Gp3Error::InvalidCell(format!("non-finite center {center:?}")));
        }
        if half_widths.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Gp3Error::InvalidCell(format!(
                "half-widths must be finite and non-negative, got {half_widths:?}"
            )));
        }
        Ok(Self {
            center,
            half_widths,
        })
    }

    /// Box spanning `[lower, upper]` per axis.
    pub fn from_bounds(lower: &[f64], upper: &[f64]) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Gp3Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.iter().zip(upper).any(|(l, u)| l > u) {
            return Err(Gp3Error::InvalidCell(format!(
                "lower {lower:?} exceeds upper {upper:?}"
            )));
        }
        let center = lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u)).collect();
        let half = lower.iter().zip(upper).map(|(l, u)| 0.5 * (u - l)).collect();
        Self::new(center, half)
    }

    /// Degenerate box at a single point.
    pub fn point(x: Vec<f64>) -> Result<Self> {
        let d = x.len();
        Self::new(x, vec![0.0; d])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.center.len()
    }

    #[inline]
    pub fn center(&self) -> &[f64] {
        &self.center
    }

    #[inline]
    pub fn half_widths(&self) -> &[f64] {
        &self.half_widths
    }

    pub fn lower(&self) -> Vec<f64> {
        self.center
            .iter()
            .zip(&self.half_widths)
            .map(|(c, b)| c - b)
            .collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.center
            .iter()
            .zip(&self.half_widths)
            .map(|(c, b)| c + b)
            .collect()
    }

    /// Interval hull of coordinate `k`.
    pub fn axis(&self, k: usize) -> Interval {
        Interval::hull(
            self.center[k] - self.half_widths[k],
            self.center[k] + self.half_widths[k],
        )
    }

    /// Euclidean norm of the half-width vector (circumscribed-ball radius).
    pub fn radius(&self) -> f64 {
        self.half_widths.iter().map(|b| b * b).sum::<f64>().sqrt()
    }

    pub fn volume(&self) -> f64 {
        self.half_widths.iter().map(|b| 2.0 * b).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.center.iter().zip(&self.half_widths))
                .all(|(xi, (c, b))| (xi - c).abs() <= *b)
    }

    /// `self ⊆ other`
    pub fn is_inside(&self, other: &Hyperrectangle) -> bool {
        self.dim() == other.dim()
            && (0..self.dim()).all(|k| self.axis(k).is_subset_of(&other.axis(k)))
    }

    /// Whether the interiors of two boxes intersect.
    pub fn interiors_overlap(&self, other: &Hyperrectangle) -> bool {
        (0..self.dim()).all(|k| {
            let (a, b) = (self.axis(k), other.axis(k));
            a.lo() < b.hi() && b.lo() < a.hi()
        })
    }

    /// Whether the closed boxes share at least one point.
    pub fn touches(&self, other: &Hyperrectangle, slack: f64) -> bool {
        (0..self.dim()).all(|k| {
            let (a, b) = (self.axis(k), other.axis(k));
            a.lo() <= b.hi() + slack && b.lo() <= a.hi() + slack
        })
    }

    /// Splits into `2^d` children with halved half-widths.
    ///
    /// Child `m` takes the upper half along axis `k` iff bit `k` of `m` is set.
    pub fn refine(&self) -> Result<Vec<Hyperrectangle>> {
        if let Some(k) = self.half_widths.iter().position(|b| *b <= 0.0) {
            return Err(Gp3Error::InvalidCell(format!(
                "cannot split zero-width dimension {k}"
            )));
        }
        let d = self.dim();
        let half: Vec<f64> = self.half_widths.iter().map(|b| 0.5 * b).collect();
        Ok((0..1usize << d)
            .map(|m| {
                let center = (0..d)
                    .map(|k| {
                        if m >> k & 1 == 1 {
                            self.center[k] + half[k]
                        } else {
                            self.center[k] - half[k]
                        }
                    })
                    .collect();
                Hyperrectangle {
                    center,
                    half_widths: half.clone(),
                }
            })
            .collect())
    }

    /// Uniform grid of `counts[k]` cells per axis tiling `self`, in row-major
    /// order with the last axis varying fastest.
    pub fn grid(&self, counts: &[usize]) -> Result<Vec<Hyperrectangle>> {
        let d = self.dim();
        if counts.len() != d {
            return Err(Gp3Error::DimensionMismatch {
                expected: d,
                got: counts.len(),
            });
        }
        if counts.contains(&0) {
            return Err(Gp3Error::InvalidParameter("grid count must be positive".into()));
        }
        let total: usize = counts.iter().product();
        let lower = self.lower();
        let half: Vec<f64> = (0..d)
            .map(|k| self.half_widths[k] / counts[k] as f64)
            .collect();
        let mut cells = Vec::with_capacity(total);
        let mut idx = vec![0usize; d];
        for _ in 0..total {
            let center = (0..d)
                .map(|k| lower[k] + (2 * idx[k] + 1) as f64 * half[k])
                .collect();
            cells.push(Hyperrectangle {
                center,
                half_widths: half.clone(),
            });
            for k in (0..d).rev() {
                idx[k] += 1;
                if idx[k] < counts[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Ok(cells)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(c: &[f64], b: &[f64]) -> Hyperrectangle {
        Hyperrectangle::new(c.to_vec(), b.to_vec()).unwrap()
    }

    #[test]
    fn refine_midpoint_split_1d() {
        let kids = rect(&[0.0], &[1.0]).refine().unwrap();
        assert_eq!(kids, vec![rect(&[-0.5], &[0.5]), rect(&[0.5], &[0.5])]);
    }

    #[test]
    fn refine_2d_coordinate_product() {
        let kids = rect(&[0.0, 0.0], &[1.0, 2.0]).refine().unwrap();
        assert_eq!(kids.len(), 4);
        for k in &kids {
            assert_eq!(k.half_widths(), &[0.5, 1.0]);
            assert_eq!(k.center()[0].abs(), 0.5);
            assert_eq!(k.center()[1].abs(), 1.0);
        }
        let mut centers: Vec<_> = kids.iter().map(|k| k.center().to_vec()).collect();
        centers.sort_by(|a, b| a.partial_cmp(b).unwrap());
        centers.dedup();
        assert_eq!(centers.len(), 4);
    }

    #[test]
    fn refine_conserves_volume() {
        let parent = rect(&[0.3, -1.0, 2.0], &[0.25, 1.5, 0.125]);
        let kids = parent.refine().unwrap();
        assert_eq!(kids.len(), 8);
        let total: f64 = kids.iter().map(Hyperrectangle::volume).sum();
        assert_eq!(total, parent.volume());
        for (i, a) in kids.iter().enumerate() {
            assert!(a.is_inside(&parent));
            for b in &kids[i + 1..] {
                assert!(!a.interiors_overlap(b));
            }
        }
    }

    #[test]
    fn refine_rejects_zero_width() {
        assert!(rect(&[0.0, 0.0], &[1.0, 0.0]).refine().is_err());
    }

    #[test]
    fn invalid_cells_rejected() {
        assert!(Hyperrectangle::new(vec![0.0], vec![-1.0]).is_err());
        assert!(Hyperrectangle::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(Hyperrectangle::from_bounds(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn grid_tiles_box() {
        let dom = Hyperrectangle::from_bounds(&[-6.0, -4.0], &[4.0, 4.0]).unwrap();
        let cells = dom.grid(&[5, 4]).unwrap();
        assert_eq!(cells.len(), 20);
        let vol: f64 = cells.iter().map(Hyperrectangle::volume).sum();
        assert!((vol - dom.volume()).abs() < 1e-12 * dom.volume());
        assert!(cells.iter().all(|c| c.is_inside(&dom)));
        assert_eq!(cells[0].center(), &[-5.0, -3.0]);
    }
}
