//! Subcommand bodies. Each writes its artifacts into `out` and returns a
//! summary that is also saved there as JSON.

use std::path::{Path, PathBuf};
use std::time::Instant;

use catchain::fock::DensityMatrix;
use catchain::io::{
    fidelity_table, population_table, read_controls, read_json, sweep_table, write_controls, write_history, write_json,
    write_wigner, Columns, DensityFile, HistoryRow,
};
use catchain::observables::{linspace, wigner, wigner_on_axes, WignerGrid};
use catchain::open_system::BathSpec;
use catchain::propagate::ControlSet;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::experiment::{reduced_pure, Experiment};
use crate::sweep::{fidelity_contour, sweep_fidelities};
use crate::{CliError, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunDiagnostics {
    pub closed_norm_drift: Option<f64>,
    pub closed_excitation_drift: Option<f64>,
    pub open_trace_drift: Option<f64>,
    pub open_hermiticity_residue: Option<f64>,
    pub open_min_eigenvalue: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub command: String,
    /// Fully resolved configuration.
    pub config: ExperimentConfig,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub final_jt: Option<f64>,
    pub closed_delta_f: Option<f64>,
    pub open_delta_f: Option<f64>,
    pub sweep_failures: Option<usize>,
    pub diagnostics: RunDiagnostics,
    pub wall_time_seconds: f64,
    /// Files written, relative to the output directory.
    pub manifest: Vec<String>,
}

impl RunSummary {
    fn new(command: &str, config: &ExperimentConfig) -> Self {
        Self {
            command: command.to_string(),
            config: config.clone(),
            iterations: None,
            converged: None,
            final_jt: None,
            closed_delta_f: None,
            open_delta_f: None,
            sweep_failures: None,
            diagnostics: RunDiagnostics::default(),
            wall_time_seconds: 0.0,
            manifest: Vec::new(),
        }
    }

    /// Exit status: 2 when an optimization missed its goal, 0 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.converged == Some(false) {
            2
        } else {
            0
        }
    }

    fn finish(mut self, out: &Path, started: Instant) -> Result<Self> {
        self.wall_time_seconds = started.elapsed().as_secs_f64();
        let name = format!("{}_summary.json", self.command);
        self.manifest.push(name.clone());
        write_json(&out.join(&name), &self)?;
        Ok(self)
    }
}

struct Output<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl<'a> Output<'a> {
    fn new(dir: &'a Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir, files: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }
}

/// Runs Krotov from the configured guess; writes controls, history and a
/// summary. Non-convergence is reported through [`RunSummary::converged`].
pub fn run_optimize(config: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    let started = Instant::now();
    let exp = Experiment::new(config)?;
    let mut output = Output::new(out)?;
    let mut summary = RunSummary::new("optimize", config);
    let controls = optimize_into(&exp, &mut output, &mut summary)?;
    replay(&exp, &controls, &mut summary, None)?;
    summary.manifest = output.files;
    summary.finish(out, started)
}

fn optimize_into(exp: &Experiment, output: &mut Output, summary: &mut RunSummary) -> Result<ControlSet<f64>> {
    let result = exp.optimize(|r| log::info!("iteration {}: J_T = {:.6e}", r.iteration, r.j_t))?;
    if exp.config.outputs.controls {
        write_controls(&output.path("controls.csv"), &result.controls)?;
    }
    if exp.config.outputs.history {
        let rows: Vec<HistoryRow<f64>> = result.history.iter().map(HistoryRow::from).collect();
        write_history(&output.path("history.csv"), &rows)?;
    }
    summary.iterations = Some(result.iterations());
    summary.converged = Some(result.converged);
    summary.final_jt = Some(result.final_jt());
    Ok(result.controls)
}

/// Closed replay plus, when a bath is configured, the open replay.
fn replay(
    exp: &Experiment,
    controls: &ControlSet<f64>,
    summary: &mut RunSummary,
    keep: Option<&[usize]>,
) -> Result<(crate::ClosedRun, Option<crate::OpenRun>)> {
    let closed = exp.closed_run(controls)?;
    summary.closed_delta_f = Some(1.0 - closed.final_fidelity());
    summary.diagnostics.closed_norm_drift = Some(closed.norm_drift);
    summary.diagnostics.closed_excitation_drift = Some(closed.excitation_drift);
    let open = match exp.config.bath {
        Some(b) => {
            let system = exp.open_system()?;
            let run = exp.open_run(&system, controls, BathSpec::new(b.lambda, b.gamma)?, keep.unwrap_or(&[]))?;
            summary.open_delta_f = Some(1.0 - run.final_fidelity());
            summary.diagnostics.open_trace_drift = Some(run.diagnostics.max_trace_drift);
            summary.diagnostics.open_hermiticity_residue = Some(run.diagnostics.max_hermiticity_residue);
            summary.diagnostics.open_min_eigenvalue = run.diagnostics.final_min_eigenvalue;
            Some(run)
        }
        None => None,
    };
    Ok((closed, open))
}

fn load_controls(exp: &Experiment, path: &Path) -> Result<ControlSet<f64>> {
    read_controls(path, exp.grid, exp.labels()).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Replays a controls file; writes the fidelity and population series and
/// the configured Wigner snapshots (taken from the open trajectory when a
/// bath is configured).
pub fn run_propagate(config: &ExperimentConfig, controls_path: &Path, out: &Path) -> Result<RunSummary> {
    let started = Instant::now();
    let exp = Experiment::new(config)?;
    let controls = load_controls(&exp, controls_path)?;
    let mut output = Output::new(out)?;
    let mut summary = RunSummary::new("propagate", config);
    let o = &config.outputs;
    let snapshot_ks: Vec<usize> = if o.wigner {
        o.wigner_times.iter().map(|&t| exp.grid_index(t)).collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let (closed, open) = replay(&exp, &controls, &mut summary, Some(&snapshot_ks))?;
    let times: Vec<f64> = (0..=exp.grid.n_steps()).map(|k| exp.grid.time(k)).collect();
    if o.fidelity {
        let open_f = open.as_ref().map(|r| r.fidelity.clone());
        fidelity_table(times.clone(), Some(closed.fidelity.clone()), open_f).write(&output.path("fidelity.csv"))?;
    }
    if o.populations {
        population_table(times, &closed.populations, closed.norms.clone()).write(&output.path("populations.csv"))?;
    }
    if o.final_density {
        let rho = match &open {
            Some(run) => DensityFile::from_density(&run.final_rho),
            None => DensityFile::from_density(&closed.trajectory.final_state().projector()),
        };
        write_json(&output.path("final_density.json"), &rho)?;
    }
    for &k in &snapshot_ks {
        for mode in 0..exp.chain.n_sites() {
            let reduced = match &open {
                Some(run) => catchain::fock::partial_trace(&run.kept[&k], mode)?,
                None => reduced_pure(&closed.trajectory.states[k], mode)?,
            };
            let mut grid = wigner_grid(&exp, &reduced)?;
            grid.mode = mode;
            grid.time = Some(exp.grid.time(k));
            let stem = format!("wigner_site{}_k{:05}", mode + 1, k);
            write_wigner(&output.path(&format!("{stem}.csv")), &output.path(&format!("{stem}.json")), &grid)?;
        }
    }
    summary.manifest = output.files;
    summary.finish(out, started)
}

fn wigner_grid(exp: &Experiment, reduced: &DensityMatrix<f64>) -> Result<WignerGrid<f64>> {
    let o = &exp.config.outputs;
    let e = o.wigner_extent;
    match wigner(reduced, (-e, e), o.wigner_points) {
        Ok(g) => Ok(g),
        Err(catchain::Error::GridTooSmall { boundary, peak }) => {
            log::warn!("Wigner grid [-{e}, {e}] clips the state (edge {boundary:e} vs peak {peak:e}); writing it anyway");
            let axis = linspace(-e, e, o.wigner_points);
            Ok(wigner_on_axes(reduced, axis.clone(), axis)?)
        }
        Err(other) => Err(other.into()),
    }
}

/// Sweeps the configured `(lambda, gamma)` grid with `jobs` workers. Uses
/// `controls_path` when given, otherwise optimizes first.
pub fn run_sweep(config: &ExperimentConfig, controls_path: Option<&Path>, jobs: usize, out: &Path) -> Result<RunSummary> {
    let started = Instant::now();
    let exp = Experiment::new(config)?;
    let mut output = Output::new(out)?;
    let mut summary = RunSummary::new("sweep", config);
    summary.config.sweep = Some(config.sweep_or_default());
    let controls = match controls_path {
        Some(p) => load_controls(&exp, p)?,
        None => optimize_into(&exp, &mut output, &mut summary)?,
    };
    let sweep = config.sweep_or_default();
    let points = sweep_fidelities(&exp, &controls, &sweep.lambda_grid, &sweep.gamma_grid, jobs)?;
    sweep_table(&points).write(&output.path("sweep.csv"))?;
    let contour = fidelity_contour(&points, sweep.contour_level);
    Columns::new()
        .with("gamma", contour.iter().map(|c| c.gamma).collect())
        .with("lambda", contour.iter().map(|c| c.lambda).collect())
        .with("crossings", contour.iter().map(|c| c.crossings as f64).collect())
        .write(&output.path("contour.csv"))?;
    summary.sweep_failures = Some(points.iter().filter(|p| p.final_fidelity.is_nan()).count());
    if let Some(p) = points.iter().find(|p| p.lambda == 0.0) {
        summary.closed_delta_f = Some(1.0 - p.final_fidelity);
    }
    summary.manifest = output.files;
    summary.finish(out, started)
}

/// Where `run_wigner` takes its state from.
#[derive(Debug, Clone, PartialEq)]
pub enum WignerSource {
    /// State at grid time `time` under the controls in `path`; the open
    /// trajectory is used when a bath is configured.
    Controls { path: PathBuf, time: f64 },
    /// A serialized density matrix.
    Density { path: PathBuf },
}

/// Wigner CSV and sidecar for each requested 1-based site (all sites when
/// `sites` is empty).
pub fn run_wigner(config: &ExperimentConfig, source: &WignerSource, sites: &[usize], out: &Path) -> Result<RunSummary> {
    let started = Instant::now();
    let exp = Experiment::new(config)?;
    let mut output = Output::new(out)?;
    let mut summary = RunSummary::new("wigner", config);
    let (state, time, tag) = match source {
        WignerSource::Controls { path, time } => {
            let controls = load_controls(&exp, path)?;
            let k = exp.grid_index(*time)?;
            let rho = match config.bath {
                Some(b) => {
                    let system = exp.open_system()?;
                    let mut run = exp.open_run(&system, &controls, BathSpec::new(b.lambda, b.gamma)?, &[k])?;
                    run.kept.remove(&k).expect("snapshot requested")
                }
                None => {
                    let mut traj = exp.closed_run(&controls)?.trajectory;
                    traj.states.swap_remove(k).projector()
                }
            };
            (rho, Some(exp.grid.time(k)), format!("k{k:05}"))
        }
        WignerSource::Density { path } => {
            let file: DensityFile = read_json(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            (file.to_density()?, None, "density".to_string())
        }
    };
    let n_modes = state.space().n_modes();
    let modes: Vec<usize> = if sites.is_empty() {
        (0..n_modes).collect()
    } else {
        sites
            .iter()
            .map(|&s| {
                if s == 0 || s > n_modes {
                    Err(CliError::Input(format!("site {s} outside 1..={n_modes}")))
                } else {
                    Ok(s - 1)
                }
            })
            .collect::<Result<_>>()?
    };
    for mode in modes {
        let reduced = if n_modes == 1 { state.clone() } else { catchain::fock::partial_trace(&state, mode)? };
        let mut grid = wigner_grid(&exp, &reduced)?;
        grid.mode = mode;
        grid.time = time;
        let stem = format!("wigner_site{}_{tag}", mode + 1);
        write_wigner(&output.path(&format!("{stem}.csv")), &output.path(&format!("{stem}.json")), &grid)?;
    }
    summary.manifest = output.files;
    summary.finish(out, started)
}
