use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Gp3Error, Result};
use crate::gp::GpModel;
use crate::par::Workers;
use crate::rect::Hyperrectangle;

use super::bounds::{cell_bounds, local_lipschitz};
use super::problem::{Exclusion, ProblemSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    /// Both targets hold on the whole cell.
    Satisfied,
    /// Targets not certified and the cell is too small to split further.
    MinSizeReached,
    /// Inside an exclusion region; not evaluated.
    AssumedVerified,
    /// The certified range lies entirely outside a target.
    Violated,
    /// Left unrefined because the evaluation budget ran out.
    Unresolved,
}

impl CellStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            CellStatus::Satisfied => "satisfied",
            CellStatus::MinSizeReached => "min_size_reached",
            CellStatus::AssumedVerified => "assumed_verified",
            CellStatus::Violated => "violated",
            CellStatus::Unresolved => "unresolved",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            CellStatus::Satisfied,
            CellStatus::MinSizeReached,
            CellStatus::AssumedVerified,
            CellStatus::Violated,
            CellStatus::Unresolved,
        ]
        .into_iter()
        .find(|c| c.as_str() == s)
    }
}

/// Quantities computed for an evaluated cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellEval {
    pub lo: f64,
    pub hi: f64,
    pub l_mu: f64,
    pub mean_center: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: Hyperrectangle,
    pub depth: u32,
    pub status: CellStatus,
    /// `None` for cells inside an exclusion region.
    pub eval: Option<CellEval>,
}

impl CellResult {
    pub fn eps1(&self) -> Option<f64> {
        self.eval.map(|e| (-e.lo).max(0.0))
    }

    pub fn eps2(&self) -> Option<f64> {
        self.eval.map(|e| e.hi.max(0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaveStats {
    pub evaluated: usize,
    pub excluded: usize,
    pub finalized: usize,
    pub refined: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationReport {
    pub cells: Vec<CellResult>,
    pub total_cells_evaluated: usize,
    pub max_depth: u32,
    /// Seconds.
    pub wall_time: f64,
    pub initial_grid: Vec<usize>,
    pub waves: Vec<WaveStats>,
    /// Some cell stopped at the depth cap rather than at `b_min`.
    pub depth_cap_hit: bool,
    /// The run stopped at `max_evaluations` and left cells unresolved.
    #[serde(default)]
    pub budget_exhausted: bool,
}

impl VerificationReport {
    pub fn count(&self, status: CellStatus) -> usize {
        self.cells.iter().filter(|c| c.status == status).count()
    }

    /// Largest `max(0, -lo)` over evaluated cells.
    pub fn eps1(&self) -> f64 {
        self.cells.iter().filter_map(CellResult::eps1).fold(0.0, f64::max)
    }

    /// Largest `max(0, hi)` over evaluated cells.
    pub fn eps2(&self) -> f64 {
        self.cells.iter().filter_map(CellResult::eps2).fold(0.0, f64::max)
    }

    pub fn all_satisfied(&self) -> bool {
        self.cells
            .iter()
            .all(|c| matches!(c.status, CellStatus::Satisfied | CellStatus::AssumedVerified))
    }

    pub fn covered_volume(&self) -> f64 {
        self.cells.iter().map(|c| c.cell.volume()).sum()
    }
}

/// Per-axis cell counts proportional to the domain widths with product `≥ m`.
pub fn initial_grid_counts(domain: &Hyperrectangle, m: usize) -> Vec<usize> {
    let d = domain.dim();
    let widths = domain.half_widths();
    let vol: f64 = widths.iter().product();
    let scale = (m as f64 / vol).powf(1.0 / d as f64);
    // Start just below the target so the greedy loop distributes the rest.
    let mut counts: Vec<usize> = widths
        .iter()
        .map(|w| ((w * scale).floor() as usize).max(1))
        .collect();
    while counts.iter().product::<usize>() < m {
        let k = (0..d)
            .max_by(|&a, &b| {
                (widths[a] / counts[a] as f64)
                    .partial_cmp(&(widths[b] / counts[b] as f64))
                    .unwrap()
                    .then(b.cmp(&a))
            })
            .unwrap();
        counts[k] += 1;
    }
    counts
}

fn evaluate(problem: &ProblemSpec, model: &GpModel, cell: &Hyperrectangle) -> Result<CellEval> {
    let l_mu = local_lipschitz(model, cell)?;
    let b = cell_bounds(problem, model, cell, l_mu)?;
    Ok(CellEval {
        lo: b.lo,
        hi: b.hi,
        l_mu,
        mean_center: b.mean_center,
    })
}

/// Multi-resolution analysis of `g(f(x)) - μ(x)` over `problem.domain`.
///
/// Starts from a uniform grid of at least `problem.initial_cells` cells. In
/// each wave every open cell is evaluated in parallel; cells meeting both
/// targets, reaching `b_min`, lying inside an exclusion, or (when pruning)
/// certainly violating a target are finalized, and all others are split into
/// `2^d` children for the next wave.
pub fn run_analysis(
    problem: &ProblemSpec,
    model: &GpModel,
    exclusions: &[Exclusion],
    workers: &Workers,
) -> Result<VerificationReport> {
    let start = Instant::now();
    problem.validate(model)?;
    if let Some(e) = exclusions.iter().find(|e| e.dim() != problem.domain.dim()) {
        return Err(Gp3Error::DimensionMismatch {
            expected: problem.domain.dim(),
            got: e.dim(),
        });
    }
    let counts = initial_grid_counts(&problem.domain, problem.initial_cells);
    let mut frontier: Vec<(Hyperrectangle, u32)> = problem
        .domain
        .grid(&counts)?
        .into_iter()
        .map(|c| (c, 0))
        .collect();

    let mut cells = Vec::new();
    let mut waves = Vec::new();
    let mut evaluated_total = 0;
    let mut max_depth = 0;
    let mut depth_cap_hit = false;
    let mut budget_exhausted = false;

    while !frontier.is_empty() {
        let (excluded, open): (Vec<_>, Vec<_>) = frontier
            .into_iter()
            .partition(|(c, _)| exclusions.iter().any(|e| e.contains_cell(c)));
        let mut stats = WaveStats {
            evaluated: open.len(),
            excluded: excluded.len(),
            finalized: excluded.len(),
            refined: 0,
        };
        for (cell, depth) in excluded {
            max_depth = max_depth.max(depth);
            cells.push(CellResult {
                cell,
                depth,
                status: CellStatus::AssumedVerified,
                eval: None,
            });
        }

        if evaluated_total + open.len() > problem.max_evaluations {
            log::warn!(
                "evaluation budget {} exhausted with {} open cells",
                problem.max_evaluations,
                open.len()
            );
            budget_exhausted = true;
            for (cell, depth) in open {
                max_depth = max_depth.max(depth);
                cells.push(CellResult {
                    cell,
                    depth,
                    status: CellStatus::Unresolved,
                    eval: None,
                });
            }
            stats.evaluated = 0;
            stats.finalized = stats.excluded;
            waves.push(stats);
            break;
        }
        let evals = workers.try_map(&open, |(c, _)| evaluate(problem, model, c))?;
        evaluated_total += open.len();

        let mut next = Vec::new();
        for ((cell, depth), ev) in open.into_iter().zip(evals) {
            max_depth = max_depth.max(depth);
            let c = cell.center();
            let lower_target = problem.target_lower.at(c);
            let upper_target = problem.target_upper.at(c);
            let status = if ev.lo >= -lower_target && ev.hi <= upper_target {
                Some(CellStatus::Satisfied)
            } else if cell.radius() <= problem.b_min {
                Some(CellStatus::MinSizeReached)
            } else if depth >= problem.max_depth {
                if !depth_cap_hit {
                    log::warn!("depth cap {} reached before b_min", problem.max_depth);
                }
                depth_cap_hit = true;
                Some(CellStatus::MinSizeReached)
            } else if problem.prune_violations && (ev.hi < -lower_target || ev.lo > upper_target) {
                Some(CellStatus::Violated)
            } else {
                None
            };
            match status {
                Some(status) => {
                    stats.finalized += 1;
                    cells.push(CellResult {
                        cell,
                        depth,
                        status,
                        eval: Some(ev),
                    });
                }
                None => {
                    stats.refined += 1;
                    next.extend(cell.refine()?.into_iter().map(|ch| (ch, depth + 1)));
                }
            }
        }
        log::debug!(
            "wave {}: {} evaluated, {} refined",
            waves.len(),
            stats.evaluated,
            stats.refined
        );
        waves.push(stats);
        frontier = next;
    }

    Ok(VerificationReport {
        cells,
        total_cells_evaluated: evaluated_total,
        max_depth,
        wall_time: start.elapsed().as_secs_f64(),
        initial_grid: counts,
        waves,
        depth_cap_hit,
        budget_exhausted,
    })
}

/// Global Lipschitz constants of `μ` on `domain` from uniform refinement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LipschitzEnvelope {
    /// Smallest wave maximum; a valid Lipschitz constant on the domain.
    pub global: f64,
    /// `(cell count, max local constant)` per wave.
    pub curve: Vec<(usize, f64)>,
}

/// Uniformly 2-refines `domain` and records the largest local Lipschitz
/// constant per wave, stopping before the cell count exceeds `cell_budget`.
pub fn lipschitz_envelope(
    model: &GpModel,
    domain: &Hyperrectangle,
    cell_budget: usize,
    workers: &Workers,
) -> Result<LipschitzEnvelope> {
    let d = domain.dim();
    if model.dim() != d {
        return Err(Gp3Error::DimensionMismatch {
            expected: d,
            got: model.dim(),
        });
    }
    if cell_budget == 0 {
        return Err(Gp3Error::InvalidParameter("cell budget must be positive".into()));
    }
    let lower = domain.lower();
    let mut curve = Vec::new();
    let mut per_axis: usize = 1;
    loop {
        let n = match per_axis.checked_pow(d as u32) {
            Some(n) if n <= cell_budget => n,
            _ => break,
        };
        let half: Vec<f64> = domain.half_widths().iter().map(|b| b / per_axis as f64).collect();
        let values = workers.map_range(n, |idx| {
            let mut rem = idx;
            let mut center = vec![0.0; d];
            for k in (0..d).rev() {
                let i = rem % per_axis;
                rem /= per_axis;
                center[k] = lower[k] + (2 * i + 1) as f64 * half[k];
            }
            let cell = Hyperrectangle::new(center, half.clone())?;
            local_lipschitz(model, &cell)
        });
        let mut wave_max: f64 = 0.0;
        for v in values {
            wave_max = wave_max.max(v?);
        }
        curve.push((n, wave_max));
        per_axis *= 2;
    }
    let global = curve.iter().map(|(_, l)| *l).fold(f64::INFINITY, f64::min);
    Ok(LipschitzEnvelope { global, curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::TrainingSet;
    use crate::kernels::{KernelFamily, KernelSpec};
    use crate::verify::{Observable, TargetBound};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn random_model(seed: u64, n: usize, d: usize, fam: KernelFamily) -> GpModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let spec = KernelSpec::new(fam, 1.0, vec![0.8; d]).unwrap();
        GpModel::fit(TrainingSet::new(d, x, y).unwrap(), spec, 0.05).unwrap()
    }

    fn square(h: f64) -> Hyperrectangle {
        Hyperrectangle::from_bounds(&[-h, -h], &[h, h]).unwrap()
    }

    #[test]
    fn grid_counts_follow_widths() {
        let dom = Hyperrectangle::from_bounds(&[-6.0, -4.0], &[4.0, 4.0]).unwrap();
        let c = initial_grid_counts(&dom, 20);
        assert!(c.iter().product::<usize>() >= 20);
        assert!(c[0] >= c[1]);
        assert_eq!(initial_grid_counts(&dom, 1), vec![1, 1]);
        let c = initial_grid_counts(&square(1.0), 100);
        assert_eq!(c, vec![10, 10]);
    }

    #[test]
    fn infinite_targets_finish_in_one_wave() {
        let m = random_model(1, 10, 2, KernelFamily::SquaredExponential);
        let p = ProblemSpec::new(square(2.0), 1e-3).with_initial_cells(16);
        let r = run_analysis(&p, &m, &[], &Workers::sequential()).unwrap();
        assert_eq!(r.waves.len(), 1);
        assert_eq!(r.count(CellStatus::Satisfied), 16);
        assert!(r.all_satisfied());
    }

    #[test]
    fn zero_mean_zero_targets() {
        let t = TrainingSet::new(2, vec![0.0, 0.0], vec![1.0]).unwrap();
        let spec = KernelSpec::new(KernelFamily::Matern32, 1.0, vec![1.0, 1.0]).unwrap();
        let m = GpModel::from_weights(t, spec, vec![0.0]).unwrap();
        let p = ProblemSpec::new(square(1.0), 1e-3)
            .with_g(Observable::Function {
                eval: Arc::new(|_: &[f64]| 0.0),
                lipschitz: 0.0,
            })
            .with_targets(TargetBound::Constant(0.0), TargetBound::Constant(0.0))
            .with_initial_cells(4);
        let r = run_analysis(&p, &m, &[], &Workers::sequential()).unwrap();
        assert_eq!(r.waves.len(), 1);
        assert!(r.cells.iter().all(|c| c.eval.unwrap().lo == 0.0 && c.eval.unwrap().hi == 0.0));
    }

    #[test]
    fn coverage_and_termination() {
        let m = random_model(2, 12, 2, KernelFamily::Matern52);
        let b_min = 0.02;
        let p = ProblemSpec::new(square(1.0), b_min)
            .with_targets(TargetBound::Constant(0.05), TargetBound::Constant(0.05))
            .with_initial_cells(4);
        let r = run_analysis(&p, &m, &[], &Workers::sequential()).unwrap();
        let vol = p.domain.volume();
        assert!((r.covered_volume() - vol).abs() <= 1e-9 * vol);
        for (i, a) in r.cells.iter().enumerate() {
            for b in &r.cells[i + 1..] {
                assert!(!a.cell.interiors_overlap(&b.cell));
            }
        }
        // Initial cell width 1, so depth ≤ ceil(log2(width / b_min · √d)) + 1.
        let bound = ((1.0f64 / b_min) * 2f64.sqrt()).log2().ceil() as u32 + 1;
        assert!(r.max_depth <= bound);
        assert!(r.count(CellStatus::MinSizeReached) > 0 || r.all_satisfied());
    }

    #[test]
    fn exclusions_are_not_evaluated() {
        let m = random_model(3, 8, 2, KernelFamily::SquaredExponential);
        let p = ProblemSpec::new(square(1.0), 0.05)
            .with_targets(TargetBound::unbounded(), TargetBound::Constant(-1.0))
            .with_initial_cells(16);
        let ex = [Exclusion::Box {
            lower: vec![-1.0, -1.0],
            upper: vec![1.0, 1.0],
        }];
        let r = run_analysis(&p, &m, &ex, &Workers::sequential()).unwrap();
        assert_eq!(r.total_cells_evaluated, 0);
        assert_eq!(r.count(CellStatus::AssumedVerified), 16);
    }

    #[test]
    fn pruning_marks_certain_violations() {
        let m = random_model(4, 8, 2, KernelFamily::SquaredExponential);
        // g - μ ≡ 0 can never be ≤ -1.
        let p = ProblemSpec::new(square(1.0), 1e-3)
            .with_targets(TargetBound::unbounded(), TargetBound::Constant(-1.0))
            .with_initial_cells(4);
        let r = run_analysis(&p, &m, &[], &Workers::sequential()).unwrap();
        assert!(r.count(CellStatus::Violated) > 0);
        assert_eq!(r.count(CellStatus::Satisfied), 0);
        let r2 = run_analysis(&p.clone().with_pruning(false).with_max_depth(3), &m, &[], &Workers::sequential());
        let r2 = r2.unwrap();
        assert!(r2.depth_cap_hit);
        assert_eq!(r2.count(CellStatus::Violated), 0);
    }

    #[test]
    fn budget_leaves_cells_unresolved() {
        let m = random_model(4, 8, 2, KernelFamily::SquaredExponential);
        let p = ProblemSpec::new(square(1.0), 1e-6)
            .with_targets(TargetBound::unbounded(), TargetBound::Constant(-1.0))
            .with_pruning(false)
            .with_initial_cells(4)
            .with_max_evaluations(30);
        let r = run_analysis(&p, &m, &[], &Workers::sequential()).unwrap();
        assert!(r.budget_exhausted);
        assert_eq!(r.total_cells_evaluated, 20);
        assert_eq!(r.count(CellStatus::Unresolved), 64);
        assert!((r.covered_volume() - 4.0).abs() < 1e-12);
        assert!(r.cells.iter().all(|c| (c.status == CellStatus::Unresolved) == c.eval.is_none()));
    }

    #[test]
    fn deterministic_across_worker_counts() {
        let m = random_model(5, 20, 2, KernelFamily::Matern32);
        let p = ProblemSpec::new(square(1.5), 0.01)
            .with_targets(TargetBound::Constant(0.02), TargetBound::Constant(0.02))
            .with_initial_cells(9);
        let a = run_analysis(&p, &m, &[], &Workers::new(1)).unwrap();
        let b = run_analysis(&p, &m, &[], &Workers::new(3)).unwrap();
        assert_eq!(a.cells, b.cells);
        assert_eq!(a.waves, b.waves);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let m = random_model(6, 5, 3, KernelFamily::SquaredExponential);
        let p = ProblemSpec::new(square(1.0), 0.01);
        assert!(matches!(
            run_analysis(&p, &m, &[], &Workers::sequential()),
            Err(Gp3Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn envelope_behaviour() {
        let m = random_model(7, 15, 2, KernelFamily::SquaredExponential);
        let env = lipschitz_envelope(&m, &square(2.0), 5000, &Workers::sequential()).unwrap();
        let counts: Vec<usize> = env.curve.iter().map(|c| c.0).collect();
        assert_eq!(counts, vec![1, 4, 16, 64, 256, 1024, 4096]);
        for w in env.curve.windows(2) {
            assert!(w[1].1 <= w[0].1 + 1e-9);
        }
        assert!(env.curve[0].1 > env.curve.last().unwrap().1);

        let t = TrainingSet::new(2, vec![0.0, 0.0], vec![1.0]).unwrap();
        let zero = GpModel::from_weights(t, m.spec().clone(), vec![0.0]).unwrap();
        let env = lipschitz_envelope(&zero, &square(2.0), 100, &Workers::sequential()).unwrap();
        assert!(env.curve.iter().all(|c| c.1 == 0.0));

        let one = lipschitz_envelope(&m, &square(2.0), 1, &Workers::sequential()).unwrap();
        assert_eq!(one.curve.len(), 1);
    }
}
