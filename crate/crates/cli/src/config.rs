//! The JSON run configuration. Field names and nesting mirror
//! `schema/config.schema.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use iwdg::clt::{CovarianceSource, Statistic};
use iwdg::expansions::{ExpansionSuite, DEFAULT_TOLERANCE};
use iwdg::patterns::{GlobalPattern, Pattern};
use iwdg::sampler::{Start, UpdateKind, DEFAULT_BURN_IN, DEFAULT_THINNING};
use iwdg::{BoundaryCondition, IsingParams, LatticeBox, Site};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dimension: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ModelParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact: Option<ExactBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<SampleBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cumulants: Option<CumulantsBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treelen: Option<TreelenBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wdg_check: Option<WdgCheckBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern_count: Option<PatternCountBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify_expansions: Option<VerifyBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clt: Option<CltBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance_scaling: Option<VarianceScalingBlock>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub beta: f64,
    #[serde(default)]
    pub h: f64,
    pub bc: BoundaryCondition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExactBlock {
    #[serde(rename = "box")]
    pub region: LatticeBox,
    /// Spin products `⟨σ_A⟩` to report.
    #[serde(default)]
    pub expectations: Vec<Vec<Site>>,
    /// Joint cumulants of all site sets up to this size go to the CSV; 0
    /// skips the table.
    #[serde(default = "default_cumulant_order")]
    pub cumulant_order: usize,
    #[serde(default = "default_enumeration_cap")]
    pub cap: usize,
}

fn default_cumulant_order() -> usize {
    2
}

fn default_enumeration_cap() -> usize {
    25
}

/// Chain settings shared by `sample` and `cumulants`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainBlock {
    #[serde(rename = "box")]
    pub region: LatticeBox,
    pub n_samples: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_thinning")]
    pub thinning: usize,
    #[serde(default = "default_update")]
    pub update: UpdateKind,
    #[serde(default)]
    pub start: Start,
    #[serde(default)]
    pub stream: u64,
}

fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

fn default_thinning() -> usize {
    DEFAULT_THINNING
}

fn default_update() -> UpdateKind {
    UpdateKind::SingleFlip
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleBlock {
    pub chain: ChainBlock,
    /// Spin products estimated from the samples.
    #[serde(default)]
    pub observables: Vec<Vec<Site>>,
    /// Write the raw samples to `samples.spool`.
    #[serde(default = "yes")]
    pub spool: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CumulantsBlock {
    pub chain: ChainBlock,
    /// Site multisets whose joint cumulants are estimated.
    pub sets: Vec<Vec<Site>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreelenBlock {
    pub terminals: Vec<Site>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WdgCheckBlock {
    #[serde(rename = "box")]
    pub region: LatticeBox,
    #[serde(default = "default_max_order")]
    pub max_order: usize,
    /// Fixed `ε`; fitted from pair cumulants when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Include multisets with repeated sites.
    #[serde(default = "yes")]
    pub duplicates: bool,
}

fn default_max_order() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigurationSource {
    /// One sign character per site in lexicographic order, e.g. `"+-+-"`.
    Spins(String),
    Uniform(iwdg::Sign),
    /// Every record of a sample spool.
    Spool(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternCountBlock {
    #[serde(rename = "box")]
    pub region: LatticeBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<Pattern>,
    /// JSON file holding a pattern; exclusive with `pattern`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern_file: Option<PathBuf>,
    pub configuration: ConfigurationSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyBlock {
    #[serde(default = "default_shapes")]
    pub shapes: Vec<Vec<usize>>,
    #[serde(default = "default_betas")]
    pub betas: Vec<f64>,
    #[serde(default = "default_fields")]
    pub fields: Vec<f64>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub perturb: f64,
}

impl Default for VerifyBlock {
    fn default() -> Self {
        let suite = ExpansionSuite::default();
        Self {
            shapes: suite.shapes,
            betas: suite.betas,
            fields: suite.fields,
            tolerance: DEFAULT_TOLERANCE,
            perturb: 0.0,
        }
    }
}

fn default_shapes() -> Vec<Vec<usize>> {
    ExpansionSuite::default().shapes
}

fn default_betas() -> Vec<f64> {
    ExpansionSuite::default().betas
}

fn default_fields() -> Vec<f64> {
    ExpansionSuite::default().fields
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesBlock {
    pub radius: u64,
    pub source: CovarianceSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditBlock {
    #[serde(default = "default_s")]
    pub s: f64,
    #[serde(default = "default_c2")]
    pub c2: f64,
}

fn default_s() -> f64 {
    3.0
}

fn default_c2() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CltBlock {
    pub statistics: Vec<Statistic>,
    pub sizes: Vec<u32>,
    pub replicas: usize,
    #[serde(default = "default_clt_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_update")]
    pub update: UpdateKind,
    /// Covariance series for the first magnetization or local statistic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series: Option<SeriesBlock>,
    /// Variance-growth audit of the magnetization; needs `series`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<AuditBlock>,
}

fn default_clt_burn_in() -> usize {
    iwdg::clt::DEFAULT_CLT_BURN_IN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceScalingBlock {
    pub pattern: GlobalPattern,
    pub sizes: Vec<u32>,
    pub replicas: usize,
    #[serde(default = "default_clt_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_update")]
    pub update: UpdateKind,
    /// Fails the run (exit 3) when the fitted slope against `ln |Λ_n|`
    /// differs from `2m - 1` by more than this fraction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope_tolerance: Option<f64>,
}

/// Reads and parses `path`, reporting the JSON path of the first violation.
pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<RunConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("at {path}: {}", e.into_inner()))
    })
}

impl RunConfig {
    pub fn ising(&self) -> Result<IsingParams, CliError> {
        let p = self
            .params
            .ok_or_else(|| CliError::Config("at params: missing for this command".into()))?;
        IsingParams::new(self.dimension, p.beta, p.h, p.bc)
            .map_err(|e| CliError::Config(format!("at params: {e}")))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

/// `Some(block)` or a config error naming the missing block.
pub fn required<'a, T>(block: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    block
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("at {name}: block required by this command")))
}

/// Checks that a box has the configured dimension.
pub fn check_box(region: &LatticeBox, dimension: usize, at: &str) -> Result<(), CliError> {
    if region.dim() != dimension {
        return Err(CliError::Config(format!(
            "at {at}: box has dimension {}, expected {dimension}",
            region.dim()
        )));
    }
    Ok(())
}

pub fn check_sites<'a>(
    sites: impl IntoIterator<Item = &'a Site>,
    region: &LatticeBox,
    at: &str,
) -> Result<(), CliError> {
    for s in sites {
        if !region.contains(s) {
            return Err(CliError::Config(format!(
                "at {at}: site {:?} lies outside the box",
                s.coords()
            )));
        }
    }
    Ok(())
}
