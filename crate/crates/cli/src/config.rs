//! Run configuration: TOML on disk, every default written back out.

use serde::{Deserialize, Serialize};
use std::path::PathBuf;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    EquilibriumSim,
    TiltedSim,
    HydroCheck,
    EntropyCheck,
    ReplacementSweep,
    #[serde(rename = "pathological-1d")]
    Pathological1d,
    #[serde(rename = "pathological-2d")]
    Pathological2d,
    #[serde(rename = "pathological-3d")]
    Pathological3d,
    DissipationSweep,
    LyapunovCheck,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::EquilibriumSim => "equilibrium-sim",
            Experiment::TiltedSim => "tilted-sim",
            Experiment::HydroCheck => "hydro-check",
            Experiment::EntropyCheck => "entropy-check",
            Experiment::ReplacementSweep => "replacement-sweep",
            Experiment::Pathological1d => "pathological-1d",
            Experiment::Pathological2d => "pathological-2d",
            Experiment::Pathological3d => "pathological-3d",
            Experiment::DissipationSweep => "dissipation-sweep",
            Experiment::LyapunovCheck => "lyapunov-check",
        }
    }

    /// Experiments built on the one-dimensional regular test path.
    fn needs_1d(self) -> bool {
        matches!(
            self,
            Experiment::TiltedSim
                | Experiment::HydroCheck
                | Experiment::EntropyCheck
                | Experiment::ReplacementSweep
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeConfig {
    pub dim: usize,
    pub side: usize,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        LatticeConfig { dim: 1, side: 16 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EquilibriumKind {
    Uniform,
    Profile,
    Conditioned,
}

/// `u(x) = rho (1 + amplitude cos(2 pi x_1))`, optionally conditioned on
/// total mass at most `cap`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquilibriumConfig {
    pub kind: EquilibriumKind,
    pub rho: f64,
    pub amplitude: f64,
    pub cap: f64,
}

impl Default for EquilibriumConfig {
    fn default() -> Self {
        EquilibriumConfig {
            kind: EquilibriumKind::Uniform,
            rho: 1.0,
            amplitude: 0.5,
            cap: 2.0,
        }
    }
}

/// Tilt towards `u = 1 + a e^{-2 pi^2 t} cos(2 pi x) + b t sin(2 pi x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TiltConfig {
    pub a: f64,
    pub b: f64,
    pub cutoff: f64,
    pub rho: f64,
    pub slices: usize,
    pub control_grid: usize,
    /// Mass cap of the initial law; 0 means none.
    pub mass_cap: f64,
}

impl Default for TiltConfig {
    fn default() -> Self {
        TiltConfig {
            a: 0.5,
            b: 1.0,
            cutoff: 16.0,
            rho: 1.0,
            slices: 33,
            control_grid: 128,
            mass_cap: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target3d {
    TwoBump,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathologicalConfig {
    /// Sequence indices for the d = 1 construction.
    pub n_values: Vec<usize>,
    /// Number of jumps kept in the d = 2 construction (at most 4).
    pub jump_counts: Vec<usize>,
    /// Sequence indices for the d = 3 construction.
    pub relaxed_n: Vec<usize>,
    pub horizon: f64,
    pub t0: f64,
    pub x0: f64,
    pub sigma0: f64,
    pub target: Target3d,
    pub floor: f64,
    pub mass_cap: f64,
    pub construction_seed: u64,
    /// Envelope margin over the calibrated constant (d = 2).
    pub envelope_margin: f64,
}

impl Default for PathologicalConfig {
    fn default() -> Self {
        PathologicalConfig {
            n_values: vec![4, 8, 16, 32],
            jump_counts: vec![1, 2, 4],
            relaxed_n: vec![2, 4, 8],
            horizon: 1.0,
            t0: 0.5,
            x0: 0.5,
            sigma0: 0.45,
            target: Target3d::TwoBump,
            floor: 0.5,
            mass_cap: 2.0,
            construction_seed: 3,
            envelope_margin: 1.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub sizes: Vec<usize>,
    pub eps: Vec<f64>,
    pub sigma: Vec<f64>,
    pub dims: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            sizes: vec![16, 32, 64],
            eps: vec![0.1],
            sigma: vec![0.25, 0.125, 0.0625, 0.03125, 0.015625],
            dims: vec![1, 2, 3],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub reference: usize,
    pub metric_k_max: usize,
    pub cost_min: usize,
    pub cost_per_n: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            reference: 512,
            metric_k_max: 64,
            cost_min: 1024,
            cost_per_n: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToleranceConfig {
    pub energy_drift: f64,
    pub entropy_relative: f64,
    pub j_variation: f64,
    pub weak_residual: f64,
    pub slope: f64,
    pub cost_ratio_3d: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        ToleranceConfig {
            energy_drift: 1e-12,
            entropy_relative: 0.15,
            j_variation: 0.25,
            weak_residual: 1e-5,
            slope: 0.1,
            cost_ratio_3d: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub experiment: Experiment,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
    #[serde(default = "default_budget")]
    pub event_budget: u64,
    #[serde(default)]
    pub lattice: LatticeConfig,
    #[serde(default)]
    pub equilibrium: EquilibriumConfig,
    #[serde(default)]
    pub tilt: TiltConfig,
    #[serde(default)]
    pub pathological: PathologicalConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub grids: GridConfig,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
}

fn default_seed() -> u64 {
    1
}
fn default_replicas() -> usize {
    8
}
fn default_output() -> PathBuf {
    PathBuf::from("kmplab-out")
}
fn default_horizon() -> f64 {
    0.1
}
fn default_snapshots() -> usize {
    10
}
fn default_budget() -> u64 {
    200_000_000
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The fully materialized configuration as TOML.
    pub fn resolved(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), String> {
        let fail = |m: &str| Err(m.to_string());
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!(
                "schema_version must be {SCHEMA_VERSION}, got {}",
                self.schema_version
            ));
        }
        if !(1..=3).contains(&self.lattice.dim) {
            return fail("lattice.dim must be 1, 2 or 3");
        }
        if self.lattice.side < 3 {
            return fail("lattice.side must be at least 3");
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return fail("horizon must be positive and finite");
        }
        if self.replicas == 0 {
            return fail("replicas must be at least 1");
        }
        if self.snapshots == 0 {
            return fail("snapshots must be at least 1");
        }
        if self.experiment.needs_1d() && self.lattice.dim != 1 {
            return Err(format!(
                "{} runs on the one-dimensional torus only",
                self.experiment.name()
            ));
        }
        let eq = &self.equilibrium;
        if !(eq.rho > 0.0) || !(eq.amplitude >= 0.0 && eq.amplitude < 1.0) {
            return fail("equilibrium needs rho > 0 and amplitude in [0, 1)");
        }
        let t = &self.tilt;
        if !(t.cutoff > 0.0 && t.rho > 0.0)
            || t.slices < 2
            || t.control_grid < 8
            || t.mass_cap < 0.0
        {
            return fail(
                "tilt needs cutoff > 0, rho > 0, slices >= 2, control_grid >= 8, mass_cap >= 0",
            );
        }
        if 1.0 - t.a.abs() - t.b.abs() * self.horizon <= 0.0 {
            return fail("tilt path must stay positive: |a| + |b| T < 1");
        }
        let p = &self.pathological;
        if p.n_values.is_empty() || p.n_values.contains(&0) {
            return fail("pathological.n_values must be nonempty and positive");
        }
        if p.jump_counts.is_empty() || p.jump_counts.iter().any(|&n| n == 0 || n > 4) {
            return fail("pathological.jump_counts entries must lie in 1..=4");
        }
        if p.relaxed_n.is_empty() || p.relaxed_n.contains(&0) {
            return fail("pathological.relaxed_n must be nonempty and positive");
        }
        if !(p.horizon > 0.0) || !(p.t0 > 0.0 && p.t0 < p.horizon) || !(p.sigma0 > 0.0) {
            return fail("pathological needs 0 < t0 < horizon and sigma0 > 0");
        }
        let s = &self.sweep;
        if s.sizes.is_empty() || s.sizes.iter().any(|&n| n < 3) {
            return fail("sweep.sizes must be nonempty with entries >= 3");
        }
        if s.eps.iter().chain(&s.sigma).any(|v| !(*v > 0.0)) || s.eps.is_empty() {
            return fail("sweep.eps and sweep.sigma must be positive");
        }
        if s.dims.iter().any(|d| !(1..=3).contains(d)) {
            return fail("sweep.dims entries must be 1, 2 or 3");
        }
        if self.grids.reference < 8 || self.grids.metric_k_max == 0 {
            return fail("grids.reference >= 8 and grids.metric_k_max >= 1 required");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_materializes_defaults() {
        let cfg =
            RunConfig::parse("schema_version = 1\nexperiment = \"equilibrium-sim\"\n").unwrap();
        assert_eq!(cfg.lattice, LatticeConfig::default());
        let again = RunConfig::parse(&cfg.resolved()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn schema_violations_are_reported() {
        assert!(
            RunConfig::parse("schema_version = 2\nexperiment = \"equilibrium-sim\"\n").is_err()
        );
        assert!(RunConfig::parse("schema_version = 1\nexperiment = \"warp-drive\"\n").is_err());
        assert!(RunConfig::parse(
            "schema_version = 1\nexperiment = \"hydro-check\"\n[lattice]\ndim = 2\n"
        )
        .is_err());
        assert!(
            RunConfig::parse("schema_version = 1\nexperiment = \"tilted-sim\"\nbogus = 3\n")
                .is_err()
        );
    }
}
