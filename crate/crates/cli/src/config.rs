//! Experiment configuration: one TOML document drives every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub chain: ChainSection,
    pub scenario: ScenarioSection,
    pub krotov: KrotovSection,
    pub bath: Option<BathSection>,
    pub sweep: Option<SweepSection>,
    pub outputs: OutputsSection,
    /// Seeds the randomized guess; unused otherwise.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            chain: ChainSection::default(),
            scenario: ScenarioSection::default(),
            krotov: KrotovSection::default(),
            bath: None,
            sweep: None,
            outputs: OutputsSection::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainSection {
    pub n_sites: usize,
    pub omega0: f64,
    pub k0: f64,
    /// Fock levels kept per oscillator.
    pub cutoff: usize,
}

impl Default for ChainSection {
    fn default() -> Self {
        Self { n_sites: 3, omega0: 1.0, k0: 0.3, cutoff: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    /// Real cat amplitude.
    pub alpha: f64,
    pub theta_target_degrees: f64,
    pub t_final: f64,
    pub n_steps: usize,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self { alpha: 1.0, theta_target_degrees: 90.0, t_final: 5.0, n_steps: 500 }
    }
}

impl ScenarioSection {
    pub fn theta_radians(&self) -> f64 {
        self.theta_target_degrees.to_radians()
    }
}

/// How the first control iterate is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GuessSection {
    /// `amplitude * sin(frequency t)` on the couplings, zero on the
    /// frequencies; `frequency` defaults to `pi / T`.
    Sinusoid { amplitude: f64, frequency: Option<f64> },
    /// All controls zero.
    Zero,
    /// Uniform noise in `[-amplitude, amplitude]` on the couplings under a
    /// `sin(pi t / T)` envelope, drawn from `seed`.
    Random { amplitude: f64 },
}

impl Default for GuessSection {
    fn default() -> Self {
        GuessSection::Sinusoid { amplitude: 0.1, frequency: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KrotovSection {
    pub lambda_a: f64,
    pub ramp_fraction: f64,
    pub goal: f64,
    pub max_iters: usize,
    pub guess: GuessSection,
}

impl Default for KrotovSection {
    fn default() -> Self {
        Self {
            lambda_a: 5.0,
            ramp_fraction: 0.05,
            goal: 1e-7,
            max_iters: 200,
            guess: GuessSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathSection {
    pub lambda: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub lambda_grid: Vec<f64>,
    pub gamma_grid: Vec<f64>,
    /// Level of the extracted fidelity contour.
    pub contour_level: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            lambda_grid: catchain::observables::linspace(0.0, 0.3, 13),
            gamma_grid: catchain::observables::linspace(0.2, 5.0, 13),
            contour_level: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputsSection {
    pub directory: PathBuf,
    pub controls: bool,
    pub history: bool,
    pub fidelity: bool,
    pub populations: bool,
    pub wigner: bool,
    pub wigner_times: Vec<f64>,
    /// Phase-space window `[-extent, extent]` on both axes.
    pub wigner_extent: f64,
    pub wigner_points: usize,
    /// Also write the final density matrix as JSON.
    pub final_density: bool,
}

impl Default for OutputsSection {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            controls: true,
            history: true,
            fidelity: true,
            populations: true,
            wigner: true,
            wigner_times: vec![0.0, 2.5, 5.0],
            wigner_extent: 5.0,
            wigner_points: 201,
            final_density: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// The resolved document, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let finite = |name: &str, v: f64| -> Result<(), CliError> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(CliError::Config(format!("{name} must be finite, got {v}")))
            }
        };
        let c = &self.chain;
        if c.n_sites < 2 {
            return bad(format!("chain.n_sites must be at least 2, got {}", c.n_sites));
        }
        if c.cutoff < 2 {
            return bad(format!("chain.cutoff must be at least 2, got {}", c.cutoff));
        }
        finite("chain.omega0", c.omega0)?;
        finite("chain.k0", c.k0)?;
        if c.omega0 <= 0.0 {
            return bad(format!("chain.omega0 must be positive, got {}", c.omega0));
        }
        let s = &self.scenario;
        finite("scenario.alpha", s.alpha)?;
        finite("scenario.theta_target_degrees", s.theta_target_degrees)?;
        finite("scenario.t_final", s.t_final)?;
        if s.t_final <= 0.0 || s.n_steps == 0 {
            return bad("scenario.t_final and scenario.n_steps must be positive".into());
        }
        let k = &self.krotov;
        for (name, v) in [("krotov.lambda_a", k.lambda_a), ("krotov.ramp_fraction", k.ramp_fraction), ("krotov.goal", k.goal)] {
            finite(name, v)?;
        }
        if k.lambda_a <= 0.0 {
            return bad(format!("krotov.lambda_a must be positive, got {}", k.lambda_a));
        }
        if !(0.0..=0.5).contains(&k.ramp_fraction) {
            return bad(format!("krotov.ramp_fraction must lie in [0, 0.5], got {}", k.ramp_fraction));
        }
        if !(k.goal > 0.0 && k.goal <= 1.0) {
            return bad(format!("krotov.goal must lie in (0, 1], got {}", k.goal));
        }
        if k.max_iters == 0 {
            return bad("krotov.max_iters must be at least 1".into());
        }
        match k.guess {
            GuessSection::Sinusoid { amplitude, frequency } => {
                finite("krotov.guess.amplitude", amplitude)?;
                finite("krotov.guess.frequency", frequency.unwrap_or(0.0))?;
            }
            GuessSection::Random { amplitude } => finite("krotov.guess.amplitude", amplitude)?,
            GuessSection::Zero => {}
        }
        if let Some(b) = &self.bath {
            finite("bath.lambda", b.lambda)?;
            finite("bath.gamma", b.gamma)?;
            if b.lambda < 0.0 || b.gamma <= 0.0 {
                return bad(format!("bath needs lambda >= 0 and gamma > 0, got ({}, {})", b.lambda, b.gamma));
            }
        }
        if let Some(sw) = &self.sweep {
            if sw.lambda_grid.is_empty() || sw.gamma_grid.is_empty() {
                return bad("sweep grids must be non-empty".into());
            }
            for &v in sw.lambda_grid.iter().chain(&sw.gamma_grid) {
                finite("sweep grid value", v)?;
            }
            if sw.lambda_grid.iter().any(|&l| l < 0.0) || sw.gamma_grid.iter().any(|&g| g <= 0.0) {
                return bad("sweep grids need lambda >= 0 and gamma > 0".into());
            }
            finite("sweep.contour_level", sw.contour_level)?;
        }
        let o = &self.outputs;
        for &t in &o.wigner_times {
            finite("outputs.wigner_times", t)?;
            if t < 0.0 || t > s.t_final {
                return bad(format!("Wigner time {t} outside [0, {}]", s.t_final));
            }
        }
        if o.wigner_points < 2 || !(o.wigner_extent > 0.0) {
            return bad("Wigner grid needs at least 2 points and a positive extent".into());
        }
        Ok(())
    }

    /// Sweep block, or the default grids when absent.
    pub fn sweep_or_default(&self) -> SweepSection {
        self.sweep.clone().unwrap_or_default()
    }
}
