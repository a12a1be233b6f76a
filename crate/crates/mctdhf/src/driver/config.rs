//! Run configuration: one structured text file (TOML sections), all physical
//! quantities in atomic units except the pulse wavelength (nm) and peak
//! intensity (W/cm^2).

use crate::mesh::MAX_DIM;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("invalid override '{0}': expected section.key=value")]
    BadOverride(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub dimension: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub coarse_size: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefinementConfig {
    pub threshold: f64,
    pub min_size: f64,
    pub max_size: f64,
    #[serde(default = "default_max_passes")]
    pub max_passes: usize,
    #[serde(default = "default_max_leaves")]
    pub max_leaves: usize,
}

fn default_max_passes() -> usize {
    12
}
fn default_max_leaves() -> usize {
    5_000_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    pub order: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NucleiConfig {
    pub charges: Vec<f64>,
    pub positions: Vec<Vec<f64>>,
    #[serde(default)]
    pub softening: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectronsConfig {
    pub n_alpha: usize,
    pub n_beta: usize,
    pub orbitals: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EcsConfigFile {
    /// Interior half-width per axis, bohr.
    pub r0: Vec<f64>,
    /// Scaling angle, radians.
    pub theta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseConfig {
    pub wavelength_nm: f64,
    pub peak_intensity_wcm2: f64,
    pub polarization: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagationConfig {
    pub dt: f64,
    pub steps: usize,
    #[serde(default = "default_one")]
    pub output_every: usize,
    /// 0 disables checkpointing.
    #[serde(default)]
    pub checkpoint_every: usize,
}

fn default_one() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImaginaryConfig {
    pub dt: f64,
    pub tol_energy: f64,
    #[serde(default = "default_imag_steps")]
    pub max_steps: usize,
}

fn default_imag_steps() -> usize {
    5000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceConfig {
    #[serde(default = "default_arnoldi_tol")]
    pub arnoldi_tol: f64,
    #[serde(default = "default_arnoldi_max_dim")]
    pub arnoldi_max_dim: usize,
    #[serde(default = "default_mass_tol")]
    pub mass_tol: f64,
    #[serde(default = "default_poisson_tol")]
    pub poisson_tol: f64,
}

fn default_arnoldi_tol() -> f64 {
    1e-10
}
fn default_arnoldi_max_dim() -> usize {
    15
}
fn default_mass_tol() -> f64 {
    1e-12
}
fn default_poisson_tol() -> f64 {
    1e-10
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        ToleranceConfig {
            arnoldi_tol: default_arnoldi_tol(),
            arnoldi_max_dim: default_arnoldi_max_dim(),
            mass_tol: default_mass_tol(),
            poisson_tol: default_poisson_tol(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// 0 = library default; MCTDHF_THREADS overrides.
    #[serde(default)]
    pub threads: usize,
    pub outdir: String,
    /// Strang-split CI half-steps around the orbital step (accuracy studies).
    #[serde(default)]
    pub strang_ci_split: bool,
}

fn default_seed() -> u64 {
    7
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainConfig,
    pub refinement: RefinementConfig,
    pub space: SpaceConfig,
    pub nuclei: NucleiConfig,
    pub electrons: ElectronsConfig,
    pub ecs: Option<EcsConfigFile>,
    pub pulse: Option<PulseConfig>,
    pub propagation: PropagationConfig,
    pub imaginary: ImaginaryConfig,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
    pub run: RunSection,
}

impl RunConfig {
    pub fn from_str_validated(text: &str) -> Result<RunConfig, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &str) -> Result<(RunConfig, String), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_string(), source })?;
        let cfg = RunConfig::from_str_validated(&text)?;
        Ok((cfg, text))
    }

    /// Apply `section.key=value` overrides to the TOML text (used by the CLI
    /// for smoke runs and parameter scans), then re-validate.
    pub fn apply_overrides(text: &str, overrides: &[String]) -> Result<String, ConfigError> {
        let mut doc: toml::Table = toml::from_str(text)?;
        for ov in overrides {
            let (path, value) = ov
                .split_once('=')
                .ok_or_else(|| ConfigError::BadOverride(ov.clone()))?;
            let mut parts = path.trim().split('.');
            let (section, key) = (
                parts.next().ok_or_else(|| ConfigError::BadOverride(ov.clone()))?,
                parts.next().ok_or_else(|| ConfigError::BadOverride(ov.clone()))?,
            );
            if parts.next().is_some() {
                return Err(ConfigError::BadOverride(ov.clone()));
            }
            let parsed: toml::Value = value
                .trim()
                .parse()
                .map_err(|_| ConfigError::BadOverride(ov.clone()))?;
            let entry = doc
                .entry(section.to_string())
                .or_insert_with(|| toml::Value::Table(Default::default()));
            let table = entry
                .as_table_mut()
                .ok_or_else(|| ConfigError::BadOverride(ov.clone()))?;
            table.insert(key.to_string(), parsed);
        }
        Ok(toml::to_string(&doc).expect("re-serializing a parsed table cannot fail"))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let d = self.domain.dimension;
        let err = |msg: String| Err(ConfigError::Invalid(msg));
        if d == 0 || d > MAX_DIM {
            return err(format!("dimension must be 1..=3, got {d}"));
        }
        if self.domain.lo.len() != d || self.domain.hi.len() != d {
            return err("lo/hi must each have `dimension` entries".into());
        }
        for k in 0..d {
            if self.domain.hi[k] <= self.domain.lo[k] {
                return err(format!("hi[{k}] must exceed lo[{k}]"));
            }
            let ratio = (self.domain.hi[k] - self.domain.lo[k]) / self.domain.coarse_size;
            if (ratio - ratio.round()).abs() > 1e-9 {
                return err(format!(
                    "extent along axis {k} is not a multiple of coarse_size"
                ));
            }
        }
        if self.space.order < 1 {
            return err("polynomial order must be >= 1".into());
        }
        if self.refinement.min_size > self.refinement.max_size {
            return err("refinement.min_size exceeds max_size".into());
        }
        if self.refinement.threshold <= 0.0 {
            return err("refinement.threshold must be positive".into());
        }
        if self.domain.coarse_size > self.refinement.max_size + 1e-12 {
            return err("coarse_size exceeds refinement.max_size".into());
        }
        if self.nuclei.charges.len() != self.nuclei.positions.len() {
            return err("nuclei.charges and nuclei.positions disagree in length".into());
        }
        for (a, pos) in self.nuclei.positions.iter().enumerate() {
            if pos.len() != d {
                return err(format!("nucleus {a} position must have {d} components"));
            }
            for k in 0..d {
                if pos[k] < self.domain.lo[k] || pos[k] > self.domain.hi[k] {
                    return err(format!("nucleus {a} lies outside the box"));
                }
            }
        }
        if self.nuclei.softening < 0.0 {
            return err("nuclei.softening must be non-negative".into());
        }
        let m = self.electrons.orbitals;
        if m == 0 || m > 63 {
            return err("electrons.orbitals must be in 1..=63".into());
        }
        if m < self.electrons.n_alpha.max(self.electrons.n_beta) {
            return err(format!(
                "orbitals ({m}) fewer than max(n_alpha, n_beta) = {}",
                self.electrons.n_alpha.max(self.electrons.n_beta)
            ));
        }
        if let Some(ecs) = &self.ecs {
            if ecs.r0.len() != d {
                return err("ecs.r0 must have `dimension` entries".into());
            }
            if !(0.0..std::f64::consts::FRAC_PI_2).contains(&ecs.theta) {
                return err("ecs.theta must be in [0, pi/2)".into());
            }
            for k in 0..d {
                if ecs.r0[k].is_finite()
                    && (ecs.r0[k] >= self.domain.hi[k] || -ecs.r0[k] <= self.domain.lo[k])
                {
                    return err(format!("ecs.r0[{k}] is not strictly inside the box"));
                }
            }
        }
        if let Some(p) = &self.pulse {
            if p.polarization.len() != d {
                return err("pulse.polarization must have `dimension` entries".into());
            }
            if p.polarization.iter().all(|&x| x == 0.0) {
                return err("pulse.polarization must be nonzero".into());
            }
            if p.wavelength_nm <= 0.0 || p.peak_intensity_wcm2 < 0.0 {
                return err("pulse wavelength/intensity out of range".into());
            }
        }
        if self.propagation.dt <= 0.0 {
            return err("propagation.dt must be positive".into());
        }
        if self.propagation.output_every == 0 {
            return err("propagation.output_every must be >= 1".into());
        }
        if self.imaginary.dt <= 0.0 || self.imaginary.tol_energy <= 0.0 {
            return err("imaginary.dt and imaginary.tol_energy must be positive".into());
        }
        if self.tolerances.arnoldi_max_dim < 2 || self.tolerances.arnoldi_max_dim > 64 {
            return err("tolerances.arnoldi_max_dim must be in 2..=64".into());
        }
        if self.run.outdir.is_empty() {
            return err("run.outdir must be set".into());
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.domain.dimension
    }
}
