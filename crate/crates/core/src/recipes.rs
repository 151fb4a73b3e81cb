//! End-to-end pipelines: global Lipschitz constants of a learned function,
//! and region-of-attraction certification for the single machine infinite
//! bus system.

use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    build_lyapunov_dataset, flow_map, grid_points, roa_baseline, BaselineGrid, IntegratorConfig, LyapunovDataset,
    OdeSystem, sample_grid_counts, Smib, SmibParams,
};
use crate::error::{Gp3Error, Result};
use crate::gp::{optimize_hyperparameters, GpModel, HyperparameterSearch, TrainingSet};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::par::Workers;
use crate::rect::Hyperrectangle;
use crate::verify::{
    certified_min, certified_range, lipschitz_envelope, run_analysis, CellResult, CellStatus, Exclusion,
    LipschitzEnvelope, ProblemSpec, StateMap, TargetBound, VerificationReport,
};

/// `1 - sin(x₁) + 1 / (1 + e^{-x₂})`.
pub fn lipschitz_target(x: &[f64]) -> f64 {
    1.0 - x[0].sin() + 1.0 / (1.0 + (-x[1]).exp())
}

/// Kernel hyperparameters together with the observation noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSetting {
    pub spec: KernelSpec,
    pub noise_variance: f64,
}

impl KernelSetting {
    /// Reference hyperparameters for [`lipschitz_target`] on `[-6,4]×[-4,4]`.
    pub fn reference(family: KernelFamily) -> Self {
        let (sf2, l) = match family {
            KernelFamily::SquaredExponential => (0.956, [1.762, 5.537]),
            KernelFamily::Matern32 => (1.274, [3.755, 15.052]),
            KernelFamily::Matern52 => (1.012, [2.333, 8.496]),
        };
        Self {
            spec: KernelSpec::new(family, sf2, l.to_vec()).expect("valid reference hyperparameters"),
            noise_variance: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LipschitzRecipeConfig {
    pub domain: Hyperrectangle,
    /// Number of grid samples of [`lipschitz_target`]; ignored with `data`.
    pub samples: usize,
    /// Standard deviation of Gaussian noise added to the generated targets.
    pub target_noise: f64,
    pub seed: u64,
    /// Training data replacing the built-in target.
    pub data: Option<TrainingSet>,
    pub kernels: Vec<KernelSetting>,
    /// Re-fit hyperparameters starting from each setting.
    pub optimize: Option<HyperparameterSearch>,
    pub cell_budget: usize,
}

impl Default for LipschitzRecipeConfig {
    fn default() -> Self {
        Self {
            domain: Hyperrectangle::from_bounds(&[-6.0, -4.0], &[4.0, 4.0]).expect("valid domain"),
            samples: 100,
            target_noise: 0.0,
            seed: 0,
            data: None,
            kernels: KernelFamily::ALL.iter().map(|f| KernelSetting::reference(*f)).collect(),
            optimize: None,
            cell_budget: 2000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelCurve {
    pub setting: KernelSetting,
    pub envelope: LipschitzEnvelope,
    pub wall_time: f64,
}

impl KernelCurve {
    /// The single-cell bound over the whole domain.
    pub fn naive(&self) -> f64 {
        self.envelope.curve[0].1
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LipschitzRecipeResult {
    pub training: TrainingSet,
    pub curves: Vec<KernelCurve>,
}

/// Training data of the built-in target on a uniform grid.
pub fn lipschitz_training_set(config: &LipschitzRecipeConfig) -> Result<TrainingSet> {
    if let Some(data) = &config.data {
        return Ok(data.clone());
    }
    if config.domain.dim() != 2 {
        return Err(Gp3Error::DimensionMismatch {
            expected: 2,
            got: config.domain.dim(),
        });
    }
    let counts = sample_grid_counts(&config.domain, config.samples)?;
    let rows = grid_points(&config.domain, &counts);
    let mut targets: Vec<f64> = rows.iter().map(|x| lipschitz_target(x)).collect();
    if config.target_noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, config.target_noise)
            .map_err(|e| Gp3Error::InvalidParameter(e.to_string()))?;
        for t in &mut targets {
            *t += normal.sample(&mut rng);
        }
    }
    TrainingSet::from_rows(&rows, targets)
}

/// Fits one posterior mean per kernel setting and records its Lipschitz
/// envelope over the domain.
pub fn run_lipschitz_recipe(config: &LipschitzRecipeConfig, workers: &Workers) -> Result<LipschitzRecipeResult> {
    if config.kernels.is_empty() {
        return Err(Gp3Error::Empty("no kernels configured".into()));
    }
    let training = lipschitz_training_set(config)?;
    let mut curves = Vec::with_capacity(config.kernels.len());
    for setting in &config.kernels {
        let start = Instant::now();
        let setting = match &config.optimize {
            Some(search) => {
                let h = optimize_hyperparameters(&training, &setting.spec, setting.noise_variance, search)?;
                KernelSetting {
                    spec: h.spec,
                    noise_variance: h.noise_variance,
                }
            }
            None => setting.clone(),
        };
        let model = GpModel::fit(training.clone(), setting.spec.clone(), setting.noise_variance)?;
        let envelope = lipschitz_envelope(&model, &config.domain, config.cell_budget, workers)?;
        log::info!(
            "{}: L = {:.4} after {} cells",
            setting.spec.family().short_name(),
            envelope.global,
            envelope.curve.last().map_or(0, |c| c.0)
        );
        curves.push(KernelCurve {
            setting,
            envelope,
            wall_time: start.elapsed().as_secs_f64(),
        });
    }
    Ok(LipschitzRecipeResult { training, curves })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoaRecipeConfig {
    pub system: SmibParams,
    pub domain: Hyperrectangle,
    /// Number of training initial states.
    pub samples: usize,
    pub horizon: usize,
    pub dt: f64,
    pub integrator: IntegratorConfig,
    pub kernel: KernelSetting,
    pub optimize: Option<HyperparameterSearch>,
    /// Lipschitz constant of the flow map over one sample time.
    pub l_f: f64,
    pub b_min: f64,
    pub initial_cells: usize,
    pub max_depth: u32,
    /// Cap on evaluated cells; open cells beyond it count as unverified.
    pub max_evaluations: Option<usize>,
    pub exclusion_radius: f64,
    /// `None` skips the simulation baseline.
    pub baseline: Option<BaselineConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub grid: usize,
    pub steps: usize,
    /// Trajectories ending within this distance of the origin converge.
    pub radius: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            grid: 4000,
            steps: 10_000,
            radius: 0.1,
        }
    }
}

impl Default for RoaRecipeConfig {
    fn default() -> Self {
        Self {
            system: SmibParams::default(),
            domain: Hyperrectangle::from_bounds(&[-5.0, -5.0], &[5.0, 5.0]).expect("valid domain"),
            samples: 1024,
            horizon: 1000,
            dt: 0.01,
            integrator: IntegratorConfig::default(),
            // Maximum-likelihood fit to the default dataset with the noise
            // variance held at 0.1.
            kernel: KernelSetting {
                spec: KernelSpec::new(KernelFamily::SquaredExponential, 7.188_734_786e7, vec![0.616_846, 0.342_903])
                    .expect("valid kernel"),
                noise_variance: 0.1,
            },
            optimize: None,
            l_f: 20.0,
            b_min: 1e-4,
            initial_cells: 1,
            max_depth: 60,
            max_evaluations: None,
            exclusion_radius: 0.1,
            baseline: Some(BaselineConfig::default()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoaResult {
    pub dataset: LyapunovDataset,
    pub kernel: KernelSetting,
    pub report: VerificationReport,
    /// Cells with certified decrease.
    pub decrease: Vec<CellResult>,
    /// Lower bound on the learned Lyapunov function over all cells without
    /// certified decrease; `+∞` if there are none.
    pub c_star: f64,
    /// Decrease or excluded cells on which the certified upper bound of the
    /// learned Lyapunov function is at most `c_star`.
    pub level_set: Vec<CellResult>,
    pub baseline: Option<BaselineGrid>,
    pub warnings: Vec<String>,
}

/// [`run_roa_analysis`] for the single machine infinite bus system with
/// `config.system` parameters.
pub fn run_roa_recipe(config: &RoaRecipeConfig, workers: &Workers) -> Result<RoaResult> {
    let system: Arc<dyn OdeSystem> = Arc::new(Smib::new(config.system)?);
    run_roa_analysis(system, config, workers)
}

/// Learns a Lyapunov function from finite-horizon trajectory costs,
/// certifies its decrease along the flow, and extracts the largest certified
/// sublevel set inside the decrease region.
pub fn run_roa_analysis(system: Arc<dyn OdeSystem>, config: &RoaRecipeConfig, workers: &Workers) -> Result<RoaResult> {
    if !(config.exclusion_radius > 0.0) || !(config.b_min > 0.0) || !(config.l_f >= 0.0) {
        return Err(Gp3Error::InvalidParameter(
            "exclusion radius and b_min must be positive and L_f non-negative".into(),
        ));
    }
    let start = Instant::now();
    let dataset = build_lyapunov_dataset(
        system.as_ref(),
        &config.domain,
        config.samples,
        config.horizon,
        config.dt,
        &config.integrator,
        workers,
    )?;
    log::info!("dataset built in {:.1} s", start.elapsed().as_secs_f64());
    let training = dataset.to_training_set()?;

    let kernel = match &config.optimize {
        Some(search) => {
            let h = optimize_hyperparameters(&training, &config.kernel.spec, config.kernel.noise_variance, search)?;
            KernelSetting {
                spec: h.spec,
                noise_variance: h.noise_variance,
            }
        }
        None => config.kernel.clone(),
    };
    let model = GpModel::fit(training, kernel.spec.clone(), kernel.noise_variance)?;

    let f = flow_map(system.clone(), config.dt, config.integrator)?;
    let problem = ProblemSpec::new(config.domain.clone(), config.b_min)
        .with_f(StateMap::Lipschitz {
            eval: f,
            lipschitz: config.l_f,
        })
        .with_targets(TargetBound::unbounded(), TargetBound::Constant(0.0))
        .with_initial_cells(config.initial_cells)
        .with_max_depth(config.max_depth)
        .with_max_evaluations(config.max_evaluations.unwrap_or(usize::MAX));
    let origin = vec![0.0; config.domain.dim()];
    let exclusion = Exclusion::Ball {
        center: origin,
        radius: config.exclusion_radius,
    };
    let report = run_analysis(&problem, &model, std::slice::from_ref(&exclusion), workers)?;
    log::info!(
        "decrease analysis: {} cells evaluated in {:.1} s",
        report.total_cells_evaluated,
        report.wall_time
    );

    let mut warnings = Vec::new();
    let decrease: Vec<CellResult> = report
        .cells
        .iter()
        .filter(|c| c.status == CellStatus::Satisfied)
        .cloned()
        .collect();
    if decrease.is_empty() {
        warnings.push("no cell with certified decrease".to_string());
    }
    if report.budget_exhausted {
        warnings.push(format!(
            "evaluation budget exhausted; {} cells unresolved",
            report.count(CellStatus::Unresolved)
        ));
    }
    if report.depth_cap_hit {
        warnings.push(format!("depth cap {} reached before b_min", config.max_depth));
    }

    let unverified: Vec<Hyperrectangle> = report
        .cells
        .iter()
        .filter(|c| matches!(
                c.status,
                CellStatus::Violated | CellStatus::MinSizeReached | CellStatus::Unresolved
            ))
        .map(|c| c.cell.clone())
        .collect();
    let c_star = if unverified.is_empty() {
        f64::INFINITY
    } else {
        certified_min(&model, &unverified, workers)?
    };

    let verified: Vec<&CellResult> = report
        .cells
        .iter()
        .filter(|c| matches!(c.status, CellStatus::Satisfied | CellStatus::AssumedVerified))
        .collect();
    let uppers = workers.try_map(&verified, |c| match &c.eval {
        Some(ev) => Ok(ev.mean_center + ev.l_mu * c.cell.radius()),
        None => certified_range(&model, &c.cell).map(|r| r.hi()),
    })?;
    let level_set: Vec<CellResult> = verified
        .into_iter()
        .zip(uppers)
        .filter(|(_, u)| *u <= c_star)
        .map(|(c, _)| c.clone())
        .collect();

    let baseline = match &config.baseline {
        Some(b) => Some(roa_baseline(
            system.as_ref(),
            &config.domain,
            b.grid,
            b.steps,
            config.dt,
            b.radius,
            &config.integrator,
            workers,
        )?),
        None => None,
    };

    Ok(RoaResult {
        dataset,
        kernel,
        report,
        decrease,
        c_star,
        level_set,
        baseline,
        warnings,
    })
}
