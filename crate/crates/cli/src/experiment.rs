//! Physical setup shared by every subcommand.

use std::collections::BTreeMap;

use catchain::fock::{partial_trace, DensityMatrix, OperatorMatrix, StateVector};
use catchain::krotov::{optimize_with, ControlGuess, IterationRecord, KrotovConfig, OptimizationResult, ShapeSpec};
use catchain::model::{build_controls, build_static, scenario_states, ChainModel, ControlLayout};
use catchain::observables::{fidelity_pure, fidelity_to_pure};
use catchain::open_system::{propagate_open_with, BathSpec, OpenDiagnostics, OpenSolverOptions, OpenSystem};
use catchain::propagate::{forward, ControlSet, TimeGrid, Trajectory};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, GuessSection};
use crate::{CliError, Result};

/// Chain, operators, grid and scenario states built from a configuration.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub chain: ChainModel<f64>,
    pub h0: OperatorMatrix<f64>,
    pub layout: ControlLayout<f64>,
    pub grid: TimeGrid<f64>,
    pub psi0: StateVector<f64>,
    pub target: StateVector<f64>,
}

/// Closed-system replay of one control set.
#[derive(Debug, Clone)]
pub struct ClosedRun {
    pub trajectory: Trajectory<f64>,
    /// `|<target|phi(t_k)>|^2`
    pub fidelity: Vec<f64>,
    /// `populations[k][j]`: mean occupation of site `j` at `t_k`.
    pub populations: Vec<Vec<f64>>,
    pub norms: Vec<f64>,
    pub norm_drift: f64,
    pub excitation_drift: f64,
}

impl ClosedRun {
    pub fn final_fidelity(&self) -> f64 {
        *self.fidelity.last().expect("grid has at least one step")
    }
}

/// Open-system replay of one control set.
#[derive(Debug, Clone)]
pub struct OpenRun {
    pub fidelity: Vec<f64>,
    /// `rho(t_k)` for the grid indices that were asked for.
    pub kept: BTreeMap<usize, DensityMatrix<f64>>,
    pub final_rho: DensityMatrix<f64>,
    pub diagnostics: OpenDiagnostics<f64>,
}

impl OpenRun {
    pub fn final_fidelity(&self) -> f64 {
        *self.fidelity.last().expect("grid has at least one step")
    }
}

impl Experiment {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let c = &config.chain;
        let chain = ChainModel::uniform(c.n_sites, c.omega0, c.k0, c.cutoff)?;
        let h0 = build_static(&chain)?;
        let layout = build_controls(&chain)?;
        let s = &config.scenario;
        let grid = TimeGrid::new(s.t_final, s.n_steps)?;
        let (psi0, target) = scenario_states(&chain, Complex::new(s.alpha, 0.0), s.theta_radians())?;
        Ok(Self { config: config.clone(), chain, h0, layout, grid, psi0, target })
    }

    pub fn labels(&self) -> &[String] {
        self.layout.labels()
    }

    pub fn krotov_config(&self) -> KrotovConfig<f64> {
        let k = &self.config.krotov;
        let n = self.chain.n_sites();
        let mut cfg = KrotovConfig::defaults(n, self.grid.t_final());
        cfg.lambda_a = vec![k.lambda_a; self.layout.n_controls()];
        cfg.shape = ShapeSpec { ramp_fraction: k.ramp_fraction, overrides: Vec::new() };
        cfg.goal = k.goal;
        cfg.max_iters = k.max_iters;
        cfg.guess = (0..self.layout.n_controls())
            .map(|l| match k.guess {
                GuessSection::Sinusoid { amplitude, frequency } if l >= n => ControlGuess::Sinusoid {
                    amplitude,
                    frequency: frequency.unwrap_or(std::f64::consts::PI / self.grid.t_final()),
                },
                _ => ControlGuess::Constant { value: 0.0 },
            })
            .collect();
        cfg
    }

    pub fn initial_guess(&self) -> Result<ControlSet<f64>> {
        let cfg = self.krotov_config();
        let mut guess = cfg.initial_guess(self.grid, self.labels().to_vec())?;
        if let GuessSection::Random { amplitude } = self.config.krotov.guess {
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
            let t_final = self.grid.t_final();
            for l in self.chain.n_sites()..self.layout.n_controls() {
                for k in 0..self.grid.n_steps() {
                    let envelope = (std::f64::consts::PI * self.grid.time(k) / t_final).sin();
                    let v = if amplitude > 0.0 { rng.gen_range(-amplitude..=amplitude) } else { 0.0 };
                    guess.set(l, k, v * envelope);
                }
            }
        }
        Ok(guess)
    }

    pub fn optimize(&self, on_record: impl FnMut(&IterationRecord<f64>)) -> Result<OptimizationResult<f64>> {
        let guess = self.initial_guess()?;
        Ok(optimize_with(&self.h0, &self.layout, &guess, &self.psi0, &self.target, &self.krotov_config(), on_record)?)
    }

    pub fn closed_run(&self, controls: &ControlSet<f64>) -> Result<ClosedRun> {
        let trajectory = forward(&self.h0, &self.layout, controls, &self.psi0)?;
        let fidelity = trajectory.states.iter().map(|s| fidelity_pure(&self.target, s)).collect();
        let populations: Vec<Vec<f64>> = trajectory.states.iter().map(|s| s.mean_occupations()).collect();
        let norms = trajectory.states.iter().map(|s| s.norm()).collect();
        let total: Vec<f64> = populations.iter().map(|p| p.iter().sum()).collect();
        let excitation_drift = total.iter().fold(0.0f64, |m, n| m.max((n - total[0]).abs()));
        Ok(ClosedRun { norm_drift: trajectory.norm_drift(), trajectory, fidelity, populations, norms, excitation_drift })
    }

    pub fn open_system(&self) -> Result<OpenSystem<f64>> {
        Ok(OpenSystem::new(&self.chain)?)
    }

    /// Non-Markovian replay; `keep` lists grid indices whose `rho` is returned.
    pub fn open_run(
        &self,
        system: &OpenSystem<f64>,
        controls: &ControlSet<f64>,
        bath: BathSpec<f64>,
        keep: &[usize],
    ) -> Result<OpenRun> {
        let rho0 = system.pure(&self.psi0)?;
        let target = system.restrict(&self.target)?;
        let mut fidelity = Vec::with_capacity(self.grid.n_steps() + 1);
        let mut kept = BTreeMap::new();
        let mut failure = None;
        let traj = propagate_open_with(system, controls, &rho0, &bath, &OpenSolverOptions::default(), |k, rho| {
            match fidelity_to_pure(rho, &target) {
                Ok(f) => fidelity.push(f),
                Err(e) => {
                    fidelity.push(f64::NAN);
                    failure.get_or_insert(e);
                }
            }
            if keep.contains(&k) {
                kept.insert(k, rho.clone());
            }
        })?;
        if let Some(e) = failure {
            return Err(e.into());
        }
        Ok(OpenRun { fidelity, kept, final_rho: traj.final_rho().clone(), diagnostics: traj.diagnostics })
    }

    /// Grid index of a requested snapshot time.
    pub fn grid_index(&self, t: f64) -> Result<usize> {
        self.grid
            .index_of_time(t)
            .ok_or_else(|| CliError::Input(format!("time {t} is not a point of the {}-step grid on [0, {}]", self.grid.n_steps(), self.grid.t_final())))
    }

    /// Converts a 1-based site number to a mode index.
    pub fn mode_of_site(&self, site: usize) -> Result<usize> {
        if site == 0 || site > self.chain.n_sites() {
            return Err(CliError::Input(format!("site {site} outside 1..={}", self.chain.n_sites())));
        }
        Ok(site - 1)
    }
}

/// Reduced single-site state of a pure chain state.
pub(crate) fn reduced_pure(psi: &StateVector<f64>, mode: usize) -> Result<DensityMatrix<f64>> {
    Ok(partial_trace(&psi.projector(), mode)?)
}
