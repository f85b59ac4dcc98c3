//! One concrete scenario: geometry, users, pilots, and the evaluation of a
//! phase configuration against it.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{make_user_channel, PilotBook, UserChannel};
use crate::error::Result;
use crate::estimator::{build_artifacts, nmse_monte_carlo};
use crate::geometry::{
    build_layout, build_propagation_set, path_loss, read_correlation_file, CorrelationKind, CorrelationModel,
    LayoutParams, PhaseStack, PropagationSet, SimStack,
};
use crate::optimizer::{codebook_search, optimize, NmseProblem, OptimizerResult, UserStats};
use crate::rng::{stream, Role};

use super::config::ScenarioConfig;

/// A scenario realized from its config: users are placed from the master
/// seed alone, so changing `N` or `L` keeps the same user population.
#[derive(Debug, Clone)]
pub struct ScenarioInstance {
    pub config: ScenarioConfig,
    pub stack: SimStack<f64>,
    pub correlation: CorrelationModel<f64>,
    pub users: Vec<UserChannel<f64>>,
    pub book: PilotBook<f64>,
    /// Ground distances in meters.
    pub distances: Vec<f64>,
}

/// Closed-form and Monte-Carlo NMSE of one user (or of the user average).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmseRecord {
    pub nmse_paper: f64,
    pub nmse_consistent: f64,
    /// `(mean, stderr)`.
    pub monte_carlo: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointEstimate {
    pub per_user: Vec<NmseRecord>,
    pub average: NmseRecord,
}

fn layout_params(cfg: &ScenarioConfig) -> LayoutParams<f64> {
    let lambda = cfg.wavelength();
    LayoutParams {
        num_layers: cfg.layers,
        elements_per_layer: cfg.elements,
        per_row: cfg.per_row,
        per_col: cfg.per_col(),
        element_width: cfg.element_width_wavelengths * lambda,
        element_height: cfg.element_height_wavelengths * lambda,
        thickness: cfg.thickness(),
        wavelength: lambda,
        antenna_count: cfg.antennas,
        antenna_spacing: cfg.antenna_spacing_wavelengths * lambda,
        height: cfg.height,
    }
}

impl ScenarioInstance {
    pub fn build(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = build_layout(&layout_params(cfg))?;
        let props = build_propagation_set(&layout)?;
        Self::assemble(cfg, layout, props)
    }

    /// The same users observed directly by `N_t = N` antennas: one layer,
    /// unit phases and an identity antenna map, so `G W^1 = I`.
    pub fn conventional(cfg: &ScenarioConfig) -> Result<Self> {
        let mut cfg = cfg.clone();
        cfg.layers = 1;
        cfg.antennas = cfg.elements;
        cfg.validate()?;
        let layout = build_layout(&layout_params(&cfg))?;
        Self::assemble(&cfg, layout, PropagationSet::identity(cfg.elements))
    }

    fn assemble(cfg: &ScenarioConfig, layout: crate::geometry::SimLayout<f64>, props: PropagationSet<f64>) -> Result<Self> {
        let correlation = match cfg.correlation.kind {
            CorrelationKind::CustomFile => {
                let path = cfg.correlation.path.as_deref().expect("validated");
                CorrelationModel::custom(read_correlation_file(path, cfg.elements)?, cfg.elements)?
            }
            kind => CorrelationModel::from_layout(&layout, kind)?,
        };
        let kappas = cfg.kappas();
        let c0 = cfg.c0();
        let mut users = Vec::with_capacity(cfg.users);
        let mut distances = Vec::with_capacity(cfg.users);
        for k in 0..cfg.users {
            let mut place = stream(cfg.seed, Role::Placement, &[k as u64]);
            let d = if cfg.distance_max > cfg.distance_min {
                place.random_range(cfg.distance_min..cfg.distance_max)
            } else {
                cfg.distance_min
            };
            let aoa = match &cfg.angles {
                Some(a) => (a[k][0], a[k][1]),
                None => {
                    let mut ang = stream(cfg.seed, Role::Angles, &[k as u64]);
                    let half_pi = std::f64::consts::FRAC_PI_2;
                    (ang.random_range(-half_pi..half_pi), ang.random_range(0.0..half_pi))
                }
            };
            let slant = (d * d + cfg.height * cfg.height).sqrt();
            let beta = path_loss(slant, cfg.path_loss.d0, cfg.path_loss.exponent, c0)?;
            let mut rng = stream(cfg.seed, Role::Instance, &[k as u64]);
            users.push(make_user_channel(&mut rng, beta, kappas[k], aoa, &layout, &correlation)?);
            distances.push(d);
        }
        let book = PilotBook::new(cfg.tau(), cfg.users, cfg.rho, cfg.sigma2_watts())?;
        let phases = PhaseStack::ones(cfg.layers, cfg.elements);
        Ok(Self {
            config: cfg.clone(),
            stack: SimStack::new(layout, props, phases)?,
            correlation,
            users,
            book,
            distances,
        })
    }

    pub fn problem(&self) -> Result<NmseProblem<f64>> {
        let users = self.users.iter().map(|u| UserStats { q: u.q, kappa: u.kappa }).collect();
        NmseProblem::new(
            self.stack.props().clone(),
            self.correlation.matrix().clone(),
            users,
            self.book.noise_ratio(),
            self.config.nmse_mode,
        )
    }

    /// Uniformly random starting phases from the master seed.
    pub fn initial_phases(&self) -> PhaseStack<f64> {
        let mut rng = stream(self.config.seed, Role::InitialPhases, &[]);
        PhaseStack::random(&mut rng, self.config.layers, self.config.elements)
    }

    pub fn optimize(&self) -> Result<OptimizerResult<f64>> {
        optimize(&self.problem()?, self.initial_phases(), &self.config.optimizer)
    }

    /// Best codebook entry's phases and objective.
    pub fn codebook(&self) -> Result<(PhaseStack<f64>, f64)> {
        let r = codebook_search(self.config.seed, &self.problem()?, self.config.codebook_size())?;
        Ok((r.phases, r.objective))
    }

    /// Both closed forms for every user at `phases`, plus Monte Carlo with
    /// `config.trials` realizations when `monte_carlo` is set.
    pub fn evaluate(&self, phases: &PhaseStack<f64>, monte_carlo: bool) -> Result<PointEstimate> {
        let mut stack = self.stack.clone();
        stack.set_phases(phases.clone())?;
        let closed: Vec<(f64, f64)> = self
            .users
            .par_iter()
            .map(|u| {
                let art = build_artifacts(&stack, u, &self.book, &self.correlation)?;
                Ok((art.nmse_paper, art.nmse_consistent))
            })
            .collect::<Result<_>>()?;
        let mc = if monte_carlo {
            Some(nmse_monte_carlo(
                self.config.seed,
                &stack,
                &self.users,
                &self.book,
                &self.correlation,
                self.config.trials,
            )?)
        } else {
            None
        };
        let k = self.users.len() as f64;
        let per_user = closed
            .iter()
            .enumerate()
            .map(|(i, &(p, c))| NmseRecord {
                nmse_paper: p,
                nmse_consistent: c,
                monte_carlo: mc.as_ref().map(|m| m.per_user[i]),
            })
            .collect();
        let average = NmseRecord {
            nmse_paper: closed.iter().map(|c| c.0).sum::<f64>() / k,
            nmse_consistent: closed.iter().map(|c| c.1).sum::<f64>() / k,
            monte_carlo: mc.as_ref().map(|m| (m.mean, m.stderr)),
        };
        Ok(PointEstimate { per_user, average })
    }
}

/// NMSE of a plain `N`-antenna receiver for the same users: the bound the
/// SIM curves are compared against.
pub fn conventional_baseline(cfg: &ScenarioConfig, monte_carlo: bool) -> Result<PointEstimate> {
    let inst = ScenarioInstance::conventional(cfg)?;
    let phases = PhaseStack::ones(1, cfg.elements);
    inst.evaluate(&phases, monte_carlo)
}
