//! Stationary covariance kernels with ARD length scales, their partial
//! derivatives, and enclosures of those derivatives over hyperrectangles.
//!
//! All three families share the structure
//!
//! ```text
//! ∂k(x', x)/∂x_j = D(Δ_j, s),   D(t, s) = C · t / l_j² · φ(√(t²/l_j² + s²))
//! ```
//!
//! with `Δ = x' - x`, `s` the ARD distance restricted to the axes other than
//! `j`, and `φ` positive and decreasing. `D` is odd in `t`, decreasing in `s`
//! for `t > 0`, and unimodal on `t ≥ 0` with its maximum at `l_j · u*(s)`.
//! The bounds below locate the extremes of `D` over the box by splitting on
//! where the derived-direction offset range sits relative to that peak.

use serde::{Deserialize, Serialize};

use crate::error::{Gp3Error, Result};
use crate::rect::Hyperrectangle;

const SQRT3: f64 = 1.732_050_807_568_877_2;
const SQRT5: f64 = 2.236_067_977_499_79;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    #[serde(alias = "se")]
    SquaredExponential,
    #[serde(alias = "matern_32", alias = "m32")]
    Matern32,
    #[serde(alias = "matern_52", alias = "m52")]
    Matern52,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 3] = [
        KernelFamily::SquaredExponential,
        KernelFamily::Matern32,
        KernelFamily::Matern52,
    ];

    pub fn short_name(&self) -> &'static str {
        match self {
            KernelFamily::SquaredExponential => "se",
            KernelFamily::Matern32 => "matern32",
            KernelFamily::Matern52 => "matern52",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "se" | "squared_exponential" | "rbf" => Some(KernelFamily::SquaredExponential),
            "matern32" | "matern_32" | "m32" => Some(KernelFamily::Matern32),
            "matern52" | "matern_52" | "m52" => Some(KernelFamily::Matern52),
            _ => None,
        }
    }

    /// Location of the maximum of `t ↦ D(t, s)` on `t ≥ 0`, in units of `l_j`.
    ///
    /// For the Matérn families the peak moves outward as the off-axis
    /// distance `s` grows; at `s = 0` it is `1/√3` (m = 1) and
    /// `(5 + √5)/10` (m = 2).
    #[inline]
    pub fn peak_offset(&self, s: f64) -> f64 {
        let s2 = s * s;
        match self {
            KernelFamily::SquaredExponential => 1.0,
            KernelFamily::Matern32 => ((1.0 + (1.0 + 12.0 * s2).sqrt()) / 6.0).sqrt(),
            KernelFamily::Matern52 => ((15.0 + (125.0 + 500.0 * s2).sqrt()) / 50.0).sqrt(),
        }
    }

    /// Radial profile `k(r) / σ_f²`.
    #[inline]
    fn profile(&self, r: f64) -> f64 {
        match self {
            KernelFamily::SquaredExponential => (-0.5 * r * r).exp(),
            KernelFamily::Matern32 => (1.0 + SQRT3 * r) * (-SQRT3 * r).exp(),
            KernelFamily::Matern52 => {
                (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * (-SQRT5 * r).exp()
            }
        }
    }

    /// `φ(r)` in the derivative factorization, including the family constant.
    #[inline]
    fn derivative_factor(&self, r: f64) -> f64 {
        match self {
            KernelFamily::SquaredExponential => (-0.5 * r * r).exp(),
            KernelFamily::Matern32 => 3.0 * (-SQRT3 * r).exp(),
            KernelFamily::Matern52 => 5.0 / 3.0 * (1.0 + SQRT5 * r) * (-SQRT5 * r).exp(),
        }
    }
}

/// Kernel family with signal variance and per-dimension length scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    family: KernelFamily,
    signal_variance: f64,
    length_scales: Vec<f64>,
}

/// Enclosure of a partial derivative over a box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivBound {
    pub upper: f64,
    pub lower: f64,
}

impl DerivBound {
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Position of the derived-direction offset range `[|Δ_j| - b_j, |Δ_j| + b_j]`
/// relative to the peak of the univariate derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MonotoneCase {
    /// Whole range beyond the peak: the derivative decreases across it.
    BeyondPeak,
    /// Whole range before the peak: the derivative increases across it.
    BeforePeak,
    /// The peak lies inside the range.
    AroundPeak,
}

impl MonotoneCase {
    pub fn classify(offset: f64, half_width: f64, peak: f64) -> Self {
        if offset - half_width > peak {
            MonotoneCase::BeyondPeak
        } else if offset + half_width < peak {
            MonotoneCase::BeforePeak
        } else {
            MonotoneCase::AroundPeak
        }
    }
}

impl KernelSpec {
    pub fn new(family: KernelFamily, signal_variance: f64, length_scales: Vec<f64>) -> Result<Self> {
        if !(signal_variance.is_finite() && signal_variance > 0.0) {
            return Err(Gp3Error::InvalidParameter(format!(
                "signal variance must be positive, got {signal_variance}"
            )));
        }
        if length_scales.is_empty() {
            return Err(Gp3Error::InvalidParameter("no length scales".into()));
        }
        if let Some(l) = length_scales.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Gp3Error::InvalidParameter(format!(
                "length scales must be positive, got {l}"
            )));
        }
        Ok(Self {
            family,
            signal_variance,
            length_scales,
        })
    }

    #[inline]
    pub fn family(&self) -> KernelFamily {
        self.family
    }

    #[inline]
    pub fn signal_variance(&self) -> f64 {
        self.signal_variance
    }

    #[inline]
    pub fn length_scales(&self) -> &[f64] {
        &self.length_scales
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.length_scales.len()
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() == self.dim() {
            Ok(())
        } else {
            Err(Gp3Error::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            })
        }
    }

    fn check_index(&self, j: usize) -> Result<()> {
        if j < self.dim() {
            Ok(())
        } else {
            Err(Gp3Error::InvalidDimensionIndex {
                index: j,
                dim: self.dim(),
            })
        }
    }

    /// ARD distance `sqrt(Σ (x_i - x'_i)² / l_i²)`.
    pub fn ard_distance(&self, x: &[f64], x_prime: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        self.check_dim(x_prime)?;
        Ok(self.ard_distance_unchecked(x, x_prime))
    }

    #[inline]
    pub(crate) fn ard_distance_unchecked(&self, x: &[f64], x_prime: &[f64]) -> f64 {
        x.iter()
            .zip(x_prime)
            .zip(&self.length_scales)
            .map(|((a, b), l)| {
                let z = (a - b) / l;
                z * z
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Kernel value as a function of the ARD distance.
    #[inline]
    pub fn eval_radial(&self, r: f64) -> f64 {
        self.signal_variance * self.family.profile(r)
    }

    pub fn eval(&self, x: &[f64], x_prime: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        self.check_dim(x_prime)?;
        Ok(self.eval_unchecked(x, x_prime))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], x_prime: &[f64]) -> f64 {
        self.eval_radial(self.ard_distance_unchecked(x, x_prime))
    }

    /// Exact `∂k(x_train, x)/∂x_j`.
    pub fn partial(&self, x_train: &[f64], x: &[f64], j: usize) -> Result<f64> {
        self.check_dim(x_train)?;
        self.check_dim(x)?;
        self.check_index(j)?;
        Ok(self.partial_unchecked(x_train, x, j))
    }

    #[inline]
    pub(crate) fn partial_unchecked(&self, x_train: &[f64], x: &[f64], j: usize) -> f64 {
        let r = self.ard_distance_unchecked(x_train, x);
        let lj = self.length_scales[j];
        self.signal_variance * (x_train[j] - x[j]) / (lj * lj) * self.family.derivative_factor(r)
    }

    /// `D(t, s)`: the derivative along axis `j` at derived-direction offset
    /// `t` and off-axis ARD distance `s`.
    #[inline]
    fn partial_profile(&self, t: f64, s: f64, j: usize) -> f64 {
        let lj = self.length_scales[j];
        let u = t / lj;
        let r = (u * u + s * s).sqrt();
        self.signal_variance * t / (lj * lj) * self.family.derivative_factor(r)
    }

    /// Offset `l̃_j` at which the univariate derivative along axis `j` peaks.
    pub fn maximum_point(&self, j: usize) -> f64 {
        self.length_scales[j] * self.family.peak_offset(0.0)
    }

    /// Enclosure of `∂k(x_train, x)/∂x_j` over every `x` in `cell`.
    pub fn derivative_bounds(
        &self,
        x_train: &[f64],
        cell: &Hyperrectangle,
        j: usize,
    ) -> Result<DerivBound> {
        self.check_dim(x_train)?;
        self.check_dim(cell.center())?;
        self.check_index(j)?;
        let (s_near, s_far) = self.off_axis_range(x_train, cell.center(), cell.half_widths(), j);
        let delta = x_train[j] - cell.center()[j];
        self.axis_bound(delta, cell.half_widths()[j], s_near, s_far, j)
    }

    /// Smallest and largest off-axis ARD distance over the box.
    fn off_axis_range(&self, x_train: &[f64], center: &[f64], half: &[f64], j: usize) -> (f64, f64) {
        let mut near = 0.0;
        let mut far = 0.0;
        for k in 0..self.dim() {
            if k == j {
                continue;
            }
            let a = (x_train[k] - center[k]).abs();
            let l = self.length_scales[k];
            let n = (a - half[k]).max(0.0) / l;
            let f = (a + half[k]) / l;
            near += n * n;
            far += f * f;
        }
        (near.sqrt(), far.sqrt())
    }

    /// Bounds along axis `j` given the signed derived-direction offset
    /// `delta = x_train_j - c_j`, its half-width, and the off-axis distance
    /// range `[s_near, s_far]`.
    fn axis_bound(&self, delta: f64, half: f64, s_near: f64, s_far: f64, j: usize) -> Result<DerivBound> {
        let a = delta.abs();
        let (t_lo, t_hi) = (a - half, a + half);
        let peak = self.length_scales[j] * self.family.peak_offset(s_near);

        // Largest value: positive offsets at the nearest off-axis distance.
        let upper = match MonotoneCase::classify(a, half, peak) {
            MonotoneCase::BeyondPeak => self.partial_profile(t_lo, s_near, j),
            MonotoneCase::BeforePeak => self.partial_profile(t_hi, s_near, j),
            MonotoneCase::AroundPeak => self.partial_profile(peak, s_near, j),
        };

        // Smallest value. Without a sign change the unimodal profile attains
        // it at an endpoint of the offset range, at the farthest off-axis
        // distance. When the range crosses the training point the negative
        // lobe is the mirrored positive one at the nearest off-axis distance.
        let lower = if t_lo >= 0.0 {
            self.partial_profile(t_lo, s_far, j)
                .min(self.partial_profile(t_hi, s_far, j))
        } else {
            -self.partial_profile(peak.min(-t_lo), s_near, j)
        };

        let (upper, lower) = if delta > 0.0 {
            (upper, lower)
        } else {
            (-lower, -upper)
        };
        if lower > upper {
            let slack = 1e-12 * upper.abs().max(lower.abs()) + f64::MIN_POSITIVE;
            if lower - upper > slack {
                return Err(Gp3Error::BoundInconsistency { lower, upper });
            }
            return Ok(DerivBound {
                upper: lower,
                lower: upper,
            });
        }
        Ok(DerivBound { upper, lower })
    }

    /// Writes the enclosure for every axis into `out` (length `d`).
    ///
    /// `center` and `half` describe the box; no dimension checks are made.
    pub(crate) fn derivative_bounds_all(
        &self,
        x_train: &[f64],
        center: &[f64],
        half: &[f64],
        out: &mut [DerivBound],
    ) -> Result<()> {
        let d = self.dim();
        if d == 1 {
            out[0] = self.axis_bound(x_train[0] - center[0], half[0], 0.0, 0.0, 0)?;
            return Ok(());
        }
        for (j, slot) in out.iter_mut().enumerate().take(d) {
            let (s_near, s_far) = self.off_axis_range(x_train, center, half, j);
            *slot = self.axis_bound(x_train[j] - center[j], half[j], s_near, s_far, j)?;
        }
        Ok(())
    }
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(family: KernelFamily, sf2: f64, l: &[f64]) -> KernelSpec {
        KernelSpec::new(family, sf2, l.to_vec()).unwrap()
    }

    fn rect(c: &[f64], b: &[f64]) -> Hyperrectangle {
        Hyperrectangle::new(c.to_vec(), b.to_vec()).unwrap()
    }

    #[test]
    fn ard_distance_examples() {
        let s1 = spec(KernelFamily::SquaredExponential, 1.0, &[1.0]);
        assert_eq!(s1.ard_distance(&[0.3], &[0.3]).unwrap(), 0.0);
        assert_eq!(s1.ard_distance(&[2.0], &[0.0]).unwrap(), 2.0);
        let s2 = spec(KernelFamily::SquaredExponential, 1.0, &[1.0, 2.0]);
        assert_relative_eq!(s2.ard_distance(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 2f64.sqrt());
        assert!(matches!(
            s2.ard_distance(&[1.0], &[0.0, 0.0]),
            Err(Gp3Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn kernel_values() {
        for fam in KernelFamily::ALL {
            let s = spec(fam, 2.5, &[0.7, 1.3]);
            assert_eq!(s.eval(&[0.1, 0.2], &[0.1, 0.2]).unwrap(), 2.5);
        }
        let se = spec(KernelFamily::SquaredExponential, 1.0, &[1.0]);
        assert_relative_eq!(se.eval(&[1.0], &[0.0]).unwrap(), 0.606_530_659_712_633_4, epsilon = 1e-15);
        let m32 = spec(KernelFamily::Matern32, 1.0, &[1.0]);
        assert_relative_eq!(m32.eval(&[1.0], &[0.0]).unwrap(), 0.483_357_724_596_507_7, epsilon = 1e-15);
    }

    #[test]
    fn partial_examples() {
        for fam in KernelFamily::ALL {
            let s = spec(fam, 1.0, &[1.0, 2.0]);
            assert_eq!(s.partial(&[0.5, 0.5], &[0.5, 0.5], 1).unwrap(), 0.0);
        }
        let se = spec(KernelFamily::SquaredExponential, 1.0, &[1.0]);
        let p = se.partial(&[0.0], &[1.0], 0).unwrap();
        let h = 1e-6;
        let fd = (se.eval(&[0.0], &[1.0 + h]).unwrap() - se.eval(&[0.0], &[1.0 - h]).unwrap()) / (2.0 * h);
        assert_relative_eq!(fd, -0.606_530_659_712_633_4, epsilon = 1e-9);
        assert_relative_eq!(p, fd, epsilon = 1e-9);
        assert!(matches!(
            se.partial(&[0.0], &[1.0], 1),
            Err(Gp3Error::InvalidDimensionIndex { .. })
        ));
    }

    #[test]
    fn partial_is_odd_in_derived_direction() {
        for fam in KernelFamily::ALL {
            let s = spec(fam, 1.3, &[0.8, 1.7, 0.5]);
            let x = [0.2, -0.4, 1.0];
            let xt = [1.1, 0.3, 0.7];
            let mirrored = [2.0 * x[0] - xt[0], xt[1], xt[2]];
            let a = s.partial(&xt, &x, 0).unwrap();
            let b = s.partial(&mirrored, &x, 0).unwrap();
            assert_relative_eq!(a, -b, epsilon = 1e-15);
        }
    }

    #[test]
    fn maximum_points() {
        assert_eq!(spec(KernelFamily::SquaredExponential, 1.0, &[2.0]).maximum_point(0), 2.0);
        assert_relative_eq!(spec(KernelFamily::Matern32, 1.0, &[3f64.sqrt()]).maximum_point(0), 1.0, epsilon = 1e-15);
        assert_relative_eq!(
            spec(KernelFamily::Matern52, 1.0, &[10.0]).maximum_point(0),
            5.0 + 5f64.sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn peak_is_argmax_of_profile() {
        // Golden-section search on D(·, s) as an independent check.
        for fam in KernelFamily::ALL {
            let k = spec(fam, 1.0, &[1.0, 1.0]);
            for s in [0.0, 0.3, 1.0, 2.5] {
                let (mut a, mut b) = (0.0, 10.0);
                let g = 0.5 * (5f64.sqrt() - 1.0);
                for _ in 0..200 {
                    let c = b - g * (b - a);
                    let d = a + g * (b - a);
                    if k.partial_profile(c, s, 0) > k.partial_profile(d, s, 0) {
                        b = d;
                    } else {
                        a = c;
                    }
                }
                assert_relative_eq!(fam.peak_offset(s), 0.5 * (a + b), epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn point_cell_bounds_are_exact() {
        for fam in KernelFamily::ALL {
            let s = spec(fam, 0.9, &[1.2, 0.6]);
            let xt = [0.4, -0.3];
            let c = [1.0, 0.5];
            for j in 0..2 {
                let b = s.derivative_bounds(&xt, &rect(&c, &[0.0, 0.0]), j).unwrap();
                let exact = s.partial(&xt, &c, j).unwrap();
                assert_relative_eq!(b.upper, exact, epsilon = 1e-15);
                assert_relative_eq!(b.lower, exact, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn orientation_follows_sign_of_offset() {
        // Training point left of the center: derivative is negative,
        // upper is the negated lower of the mirrored configuration.
        let s = spec(KernelFamily::SquaredExponential, 1.0, &[1.0]);
        let left = s.derivative_bounds(&[0.0], &rect(&[3.0], &[0.5]), 0).unwrap();
        let right = s.derivative_bounds(&[6.0], &rect(&[3.0], &[0.5]), 0).unwrap();
        assert!(left.upper < 0.0);
        assert_relative_eq!(left.upper, -right.lower, epsilon = 1e-15);
        assert_relative_eq!(left.lower, -right.upper, epsilon = 1e-15);
        // First case: |Δ| = 3 > b + l̃ = 1.5; extremes sit at the offset endpoints.
        let d = |t: f64| t * (-0.5 * t * t).exp();
        assert_relative_eq!(right.upper, d(2.5), epsilon = 1e-15);
        assert_relative_eq!(right.lower, d(3.5), epsilon = 1e-15);
    }

    #[test]
    fn dense_sampling_example_1d() {
        let s = spec(KernelFamily::SquaredExponential, 1.0, &[1.0]);
        let b = s.derivative_bounds(&[0.0], &rect(&[3.0], &[0.5]), 0).unwrap();
        for i in 0..=10_000 {
            let x = 2.5 + i as f64 / 10_000.0;
            let v = s.partial(&[0.0], &[x], 0).unwrap();
            assert!(b.lower - 1e-15 <= v && v <= b.upper + 1e-15);
        }
    }

    #[test]
    fn mirror_symmetry() {
        for fam in KernelFamily::ALL {
            let s = spec(fam, 1.1, &[0.9, 1.4]);
            let cell = rect(&[0.3, -0.2], &[0.25, 0.4]);
            let xt = [1.2, 0.5];
            let mirrored = [2.0 * 0.3 - 1.2, 0.5];
            let a = s.derivative_bounds(&xt, &cell, 0).unwrap();
            let b = s.derivative_bounds(&mirrored, &cell, 0).unwrap();
            assert_relative_eq!(a.upper, -b.lower, epsilon = 1e-14);
            assert_relative_eq!(a.lower, -b.upper, epsilon = 1e-14);
        }
    }

    #[test]
    fn case_boundaries_agree() {
        // At |Δ| = b + l̃ the "beyond" and "around" formulas coincide, and at
        // |Δ| = l̃ - b the "before" and "around" formulas coincide.
        for fam in KernelFamily::ALL {
            let s = spec(fam, 1.0, &[1.3]);
            let lt = s.maximum_point(0);
            let half = 0.2;
            for offset in [half + lt, lt - half] {
                let eps = 1e-10;
                let below = s
                    .derivative_bounds(&[offset - eps], &rect(&[0.0], &[half]), 0)
                    .unwrap();
                let above = s
                    .derivative_bounds(&[offset + eps], &rect(&[0.0], &[half]), 0)
                    .unwrap();
                assert!((below.upper - above.upper).abs() < 1e-9);
                assert!((below.lower - above.lower).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn tightness_at_degeneracy() {
        let s = spec(KernelFamily::Matern52, 1.0, &[0.8, 1.1]);
        let xt = [0.9, -0.4];
        let c = [0.1, 0.2];
        let exact = s.partial(&xt, &c, 0).unwrap();
        let mut prev = f64::INFINITY;
        for k in 1..12 {
            let b = 2f64.powi(-k);
            let db = s.derivative_bounds(&xt, &rect(&c, &[b, b]), 0).unwrap();
            assert!(db.width() <= prev + 1e-15);
            assert!(db.contains(exact));
            prev = db.width();
        }
        assert!(prev < 1e-3);
    }

    fn random_instance(rng: &mut ChaCha8Rng, d: usize) -> (KernelSpec, Vec<f64>, Hyperrectangle) {
        let fam = KernelFamily::ALL[rng.gen_range(0..3)];
        let l: Vec<f64> = (0..d).map(|_| rng.gen_range(0.2..3.0)).collect();
        let s = KernelSpec::new(fam, rng.gen_range(0.1..3.0), l).unwrap();
        let xt: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let c: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..2.0f64).powi(2)).collect();
        (s, xt, Hyperrectangle::new(c, b).unwrap())
    }

    #[test]
    fn containment_randomized() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut x = [0.0; 4];
        for trial in 0..2000 {
            let d = 1 + trial % 4;
            let (s, xt, cell) = random_instance(&mut rng, d);
            for j in 0..d {
                let bound = s.derivative_bounds(&xt, &cell, j).unwrap();
                for _ in 0..60 {
                    for k in 0..d {
                        let u: f64 = rng.gen_range(-1.0..=1.0);
                        // bias toward faces and corners
                        let u = if rng.gen_bool(0.3) { u.signum() } else { u };
                        x[k] = cell.center()[k] + u * cell.half_widths()[k];
                    }
                    let v = s.partial(&xt, &x[..d], j).unwrap();
                    let tol = 1e-12 * (1.0 + v.abs());
                    assert!(
                        bound.lower - tol <= v && v <= bound.upper + tol,
                        "violation: {v} not in [{}, {}]", bound.lower, bound.upper
                    );
                }
            }
        }
    }

    proptest! {
        #[test]
        fn monotone_refinement(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = 1 + (seed % 3) as usize;
            let (s, xt, cell) = random_instance(&mut rng, d);
            prop_assume!(cell.half_widths().iter().all(|b| *b > 0.0));
            for child in cell.refine().unwrap() {
                for j in 0..d {
                    let outer = s.derivative_bounds(&xt, &cell, j).unwrap();
                    let inner = s.derivative_bounds(&xt, &child, j).unwrap();
                    prop_assert!(outer.lower - 1e-12 <= inner.lower);
                    prop_assert!(inner.upper <= outer.upper + 1e-12);
                }
            }
        }

        #[test]
        fn partial_matches_finite_differences(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = 1 + (seed % 3) as usize;
            let (s, xt, _) = random_instance(&mut rng, d);
            let dir: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = s.ard_distance(&dir, &vec![0.0; d]).unwrap();
            let r = rng.gen_range(0.01..10.0);
            let x: Vec<f64> = xt.iter().zip(&dir).map(|(a, u)| a + u * r / norm).collect();
            let j = rng.gen_range(0..d);
            let h = 1e-6;
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[j] += h;
            xm[j] -= h;
            let fd = (s.eval(&xt, &xp).unwrap() - s.eval(&xt, &xm).unwrap()) / (2.0 * h);
            let exact = s.partial(&xt, &x, j).unwrap();
            let scale = s.signal_variance() / s.length_scales()[j];
            prop_assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1e-3 * scale));
        }
    }
}
