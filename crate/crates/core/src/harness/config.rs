//! Experiment configuration, read from TOML.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bounds::BoundReport;
use crate::classical::Scheme;
use crate::error::{Error, Result};
use crate::ot::OtConfig;
use crate::potentials::{Potential, PotentialSpec};
use crate::quantum::SpatialGrid;
use crate::sampling::InitialMeasure;

/// Which pipeline a config drives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Particle clouds, W₂ against the exact flow.
    Classical,
    /// Wavefunction L² errors at a single ħ.
    Quantum,
    /// Husimi transport distances over the whole `(Δt, ħ)` grid.
    Uniform,
}

/// Spatial and phase-space discretization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Overrides the automatic point count (power of two).
    pub n_points: Option<usize>,
    /// Overrides the automatic half width `L`.
    pub half_width: Option<f64>,
    /// Husimi grid spacing in units of `√ħ`.
    pub phase_step: f64,
    /// Cell cap of the coarsened Husimi densities fed to the exact solver.
    pub max_cells: usize,
    /// Cell cap used for the jackknife replicates.
    pub jackknife_cells: usize,
    /// Number of leave-one-group-out replicates.
    pub jackknife_groups: usize,
    /// Relative mass threshold of `density_to_measure`.
    pub threshold: f64,
    /// Particle cap of the classical W₂ computation.
    pub classical_support: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            n_points: None,
            half_width: None,
            phase_step: 0.25,
            max_cells: 2000,
            jackknife_cells: 500,
            jackknife_groups: 8,
            threshold: 1e-8,
            classical_support: 2000,
        }
    }
}

/// Accuracy of the reference solutions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    /// Quantum reference step is the smallest `Δt` divided by this.
    pub dt_divisor: f64,
    /// Local error tolerance of the classical reference integrator.
    pub classical_tol: f64,
    /// Target for the change of a quantum reference when its step is
    /// halved; the step is refined until this holds.
    pub consistency_tol: f64,
    /// Refinement rounds allowed while chasing `consistency_tol`.
    pub max_refinements: usize,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig {
            dt_divisor: 64.0,
            classical_tol: 1e-12,
            consistency_tol: 1e-8,
            max_refinements: 4,
        }
    }
}

fn default_particles() -> usize {
    4096
}

fn default_states() -> usize {
    64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub scheme: Scheme,
    pub potential: PotentialSpec,
    pub initial: InitialMeasure,
    pub final_time: f64,
    pub dt_list: Vec<f64>,
    #[serde(default)]
    pub hbar_list: Vec<f64>,
    #[serde(default = "default_particles")]
    pub n_particles: usize,
    #[serde(default = "default_states")]
    pub n_states: usize,
    #[serde(default)]
    pub seed: u64,
    /// Externally supplied Strang constant `M′`; calibrated from the run
    /// when absent.
    #[serde(default)]
    pub m_prime: Option<f64>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub ot: OtConfig,
    #[serde(default)]
    pub reference: ReferenceConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// The defaults used by the acceptance criteria: pendulum, Gaussian at
    /// `(1, 0)` with spreads 0.25, `T = 1`.
    pub fn default_for(experiment: ExperimentKind, scheme: Scheme) -> Self {
        ExperimentConfig {
            experiment,
            scheme,
            potential: PotentialSpec::Pendulum { amplitude: 1.0 },
            initial: InitialMeasure::Gaussian {
                mean_q: vec![1.0],
                mean_p: vec![0.0],
                std_q: 0.25,
                std_p: 0.25,
            },
            final_time: 1.0,
            dt_list: vec![0.2, 0.1, 0.05, 0.025, 0.0125],
            hbar_list: vec![1.0, 0.1, 0.01, 0.001],
            n_particles: default_particles(),
            n_states: default_states(),
            seed: 0,
            m_prime: None,
            grid: GridConfig::default(),
            ot: OtConfig::default(),
            reference: ReferenceConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.scheme == Scheme::Reference {
            return bad("scheme must be lie_trotter or strang".into());
        }
        self.initial.validate().map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if !(self.final_time > 0.0 && self.final_time.is_finite()) {
            return bad(format!("final_time must be positive, got {}", self.final_time));
        }
        if self.dt_list.is_empty() {
            return bad("dt_list is empty".into());
        }
        if let Some(dt) = self.dt_list.iter().find(|dt| !(**dt > 0.0 && **dt <= 0.5)) {
            return bad(format!("every dt must lie in (0, 1/2], got {dt}"));
        }
        if let Some(dt) = self.dt_list.iter().find(|dt| **dt > self.final_time) {
            return bad(format!("dt {dt} exceeds the final time"));
        }
        if self.hbar_list.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return bad("every hbar must be positive".into());
        }
        match self.experiment {
            ExperimentKind::Classical => {
                if self.n_particles == 0 {
                    return bad("n_particles must be >= 1".into());
                }
            }
            ExperimentKind::Quantum | ExperimentKind::Uniform => {
                if self.hbar_list.is_empty() {
                    return bad("hbar_list is empty".into());
                }
                if self.n_states == 0 {
                    return bad("n_states must be >= 1".into());
                }
            }
        }
        if self.experiment == ExperimentKind::Quantum && self.hbar_list.len() != 1 {
            return bad("the quantum experiment takes exactly one hbar".into());
        }
        if self.experiment == ExperimentKind::Uniform && self.initial.dim() != 1 {
            return bad("the uniform sweep works in one dimension".into());
        }
        let g = &self.grid;
        if !(g.phase_step > 0.0) || g.max_cells < 64 || g.jackknife_cells < 64 || g.classical_support < 2 {
            return bad(format!("bad grid settings {g:?}"));
        }
        if !(g.threshold >= 0.0 && g.threshold < 1.0) {
            return bad(format!("threshold must lie in [0, 1), got {}", g.threshold));
        }
        let r = &self.reference;
        if !(r.dt_divisor >= 1.0) || !(r.classical_tol > 0.0) || !(r.consistency_tol > 0.0) {
            return bad(format!("bad reference settings {:?}", self.reference));
        }
        if let Some(m) = self.m_prime {
            if !(m >= 0.0 && m.is_finite()) {
                return bad(format!("m_prime must be finite and >= 0, got {m}"));
            }
        }
        self.ot.validate()?;
        self.build_potential()?;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.initial.dim()
    }

    pub fn build_potential(&self) -> Result<Potential> {
        self.potential.build(self.dim())
    }

    /// Spatial period of the potential, if it is periodic.
    pub fn potential_period(&self) -> Option<f64> {
        match self.potential {
            PotentialSpec::Pendulum { .. } | PotentialSpec::TrigSeries { .. } => Some(2.0 * PI),
            PotentialSpec::Zero | PotentialSpec::Harmonic { .. } => None,
        }
    }

    pub fn spatial_grid(&self, hbar: f64) -> Result<SpatialGrid> {
        let v = self.build_potential()?;
        let auto = SpatialGrid::for_experiment(hbar, &self.initial, self.final_time, &v, self.potential_period())?;
        match (self.grid.n_points, self.grid.half_width) {
            (None, None) => Ok(auto),
            (n, l) => SpatialGrid::new(self.dim(), n.unwrap_or(auto.n_points()), l.unwrap_or(auto.half_width())),
        }
    }

    pub fn dt_max(&self) -> f64 {
        self.dt_list.iter().copied().fold(0.0, f64::max)
    }

    pub fn dt_min(&self) -> f64 {
        self.dt_list.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `BoundReport` with `C_T` evaluated at the largest time step.
    pub fn bound_report(&self, m_prime: Option<f64>) -> Result<BoundReport> {
        BoundReport::build(&self.build_potential()?, &self.initial, self.final_time, self.dt_max(), m_prime)
    }
}

/// Step count `⌊T/Δt⌋`, robust to `T/Δt` landing a hair below an integer.
pub fn n_steps(final_time: f64, dt: f64) -> usize {
    (final_time / dt + 1e-9).floor() as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
experiment = "uniform"
scheme = "strang"
final_time = 1.0
dt_list = [0.2, 0.1]
hbar_list = [0.1]
n_states = 16
seed = 7

[potential]
kind = "pendulum"
amplitude = 1.0

[initial]
kind = "gaussian"
mean_q = [1.0]
mean_p = [0.0]
std_q = 0.25
std_p = 0.25

[grid]
max_cells = 1000

[ot]
tol = 1e-5
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml_str(EXAMPLE).unwrap();
        assert_eq!(cfg.experiment, ExperimentKind::Uniform);
        assert_eq!(cfg.scheme, Scheme::Strang);
        assert_eq!(cfg.grid.max_cells, 1000);
        assert_eq!(cfg.grid.jackknife_groups, 8);
        assert_eq!(cfg.n_particles, 4096);
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        let cases = [
            EXAMPLE.replace("dt_list = [0.2, 0.1]", "dt_list = [0.7]"),
            EXAMPLE.replace("dt_list = [0.2, 0.1]", "dt_list = []"),
            EXAMPLE.replace("hbar_list = [0.1]", "hbar_list = [-0.1]"),
            EXAMPLE.replace("scheme = \"strang\"", "scheme = \"reference\""),
            EXAMPLE.replace("seed = 7", "seed = 7\nunknown = 1"),
            EXAMPLE.replace("experiment = \"uniform\"", "experiment = \"quantum\"").replace("[0.1]", "[0.1, 0.2]"),
            EXAMPLE.replace("std_q = 0.25", "std_q = -1.0"),
        ];
        for c in cases {
            assert!(matches!(ExperimentConfig::from_toml_str(&c), Err(Error::InvalidConfig(_))), "{c}");
        }
    }

    #[test]
    fn step_counts_align_with_the_final_time() {
        for dt in [0.2, 0.1, 0.05, 0.025, 0.0125] {
            assert_eq!(n_steps(1.0, dt) as f64 * dt, 1.0);
        }
        assert_eq!(n_steps(1.0, 0.3), 3);
    }

    #[test]
    fn default_config_is_valid() {
        for kind in [ExperimentKind::Classical, ExperimentKind::Quantum, ExperimentKind::Uniform] {
            let mut cfg = ExperimentConfig::default_for(kind, Scheme::LieTrotter);
            if kind == ExperimentKind::Quantum {
                cfg.hbar_list = vec![0.5];
            }
            cfg.validate().unwrap();
        }
        let cfg = ExperimentConfig::default_for(ExperimentKind::Uniform, Scheme::Strang);
        let g = cfg.spatial_grid(1e-3).unwrap();
        assert_eq!(g.n_points(), 8192);
    }
}
