//! Run configuration: one TOML file per run, with a few flag overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use bloch_edge::edge::Side;
use bloch_edge::field::CoefficientField;
use bloch_edge::fieldfile::FieldFile;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Field file, relative to the config file's directory.
    pub field: PathBuf,
    #[serde(default = "default_cutoff")]
    pub cutoff: usize,
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_n_bands")]
    pub n_bands: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge: Option<EdgeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_multi: Option<SplitMultiSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global: Option<GlobalSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub homog: Option<HomogSection>,
}

fn default_cutoff() -> usize {
    8
}
fn default_grid() -> usize {
    33
}
fn default_n_bands() -> usize {
    6
}
fn default_b_cutoff() -> usize {
    2
}
fn default_probe_radius() -> f64 {
    0.02
}
fn default_kappa() -> f64 {
    1.0
}
fn default_one() -> f64 {
    1.0
}
fn default_retries() -> usize {
    bloch_edge::perturbation::DEFAULT_RETRIES
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub symmetry: f64,
    pub lambda1_zero: f64,
    pub slope_min: f64,
    pub containment_delta: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { symmetry: 1e-8, lambda1_zero: 1e-10, slope_min: 0.8, containment_delta: 0.1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSection {
    pub band: usize,
    pub side: Side,
    #[serde(default = "default_probe_radius")]
    pub probe_radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub eta: Vec<f64>,
    pub lambda0: f64,
    #[serde(default = "default_b_cutoff")]
    pub b_cutoff: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub eta: Vec<f64>,
    pub lambda0: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitMultiSection {
    pub targets: Vec<Target>,
    #[serde(default = "default_b_cutoff")]
    pub b_cutoff: usize,
    #[serde(default = "default_retries")]
    pub retries: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalSection {
    pub band: usize,
    #[serde(default = "default_b_cutoff")]
    pub b_cutoff: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomogSection {
    /// Band whose minimum is the upper edge of the gap below it.
    pub band: usize,
    pub epsilons: Vec<f64>,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_probe_radius")]
    pub probe_radius: f64,
    /// Multiplies the fitted edge Hessian; values other than 1 give a negative control.
    #[serde(default = "default_one")]
    pub hessian_scale: f64,
    /// Radius of the projection `F` used by `compare-resolvents`.
    #[serde(default = "default_projection_radius")]
    pub projection_radius: f64,
}

fn default_projection_radius() -> f64 {
    0.25
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub cutoff: Option<usize>,
    pub grid: Option<usize>,
    pub n_bands: Option<usize>,
}

/// Config with its field loaded and the digest of everything that determines the output.
pub struct Loaded {
    pub config: RunConfig,
    pub field: CoefficientField,
    pub digest: String,
}

fn check(cond: bool, msg: &str) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.to_string())
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), String> {
        check(self.cutoff >= 1, "cutoff must be at least 1")?;
        check(self.grid >= 3, "grid must be at least 3")?;
        check(self.n_bands >= 1, "n_bands must be at least 1")?;
        let t = &self.tolerances;
        check(
            t.symmetry > 0.0 && t.lambda1_zero > 0.0 && t.slope_min > 0.0 && t.containment_delta > 0.0,
            "all tolerances must be positive",
        )?;
        if let Some(e) = &self.edge {
            check(e.band >= 1 && e.probe_radius > 0.0, "edge: band >= 1 and probe_radius > 0 required")?;
        }
        if let Some(h) = &self.homog {
            check(h.band >= 2, "homog: band must be at least 2 (an upper gap edge)")?;
            check(!h.epsilons.is_empty(), "homog: epsilons must not be empty")?;
            check(h.epsilons.iter().all(|e| *e > 0.0), "homog: epsilons must be positive")?;
            check(h.epsilons.windows(2).all(|w| w[1] < w[0]), "homog: epsilons must be descending")?;
            check(h.kappa > 0.0 && h.probe_radius > 0.0 && h.hessian_scale > 0.0, "homog: kappa, probe_radius and hessian_scale must be positive")?;
        }
        if let Some(s) = &self.split_multi {
            check(!s.targets.is_empty(), "split_multi: targets must not be empty")?;
        }
        Ok(())
    }
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<Loaded, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let mut config: RunConfig = toml::from_str(&text).map_err(|e| format!("config {}: {}", path.display(), e.message()))?;
    if let Some(s) = overrides.seed {
        config.seed = s;
    }
    if let Some(k) = overrides.cutoff {
        config.cutoff = k;
    }
    if let Some(m) = overrides.grid {
        config.grid = m;
    }
    if let Some(n) = overrides.n_bands {
        config.n_bands = n;
    }
    config.validate()?;
    let field_path = path.parent().unwrap_or(Path::new(".")).join(&config.field);
    let field_text =
        std::fs::read_to_string(&field_path).map_err(|e| format!("cannot read field file {}: {e}", field_path.display()))?;
    let field = FieldFile::parse(&field_text)
        .and_then(|f| f.to_field())
        .map_err(|e| format!("field file {}: {e}", field_path.display()))?;
    let resolved = toml::to_string(&config).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(resolved.as_bytes());
    hasher.update(field_text.as_bytes());
    let digest = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok(Loaded { config, field, digest })
}
