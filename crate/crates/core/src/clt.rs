//! Central limit theorem experiments for the magnetization and for local and
//! global pattern counts: replicated sampling over growing boxes
//! `Λ_n = [-n, n]^d`, normality diagnostics, covariance-series variance
//! estimates, the variance-growth audit and global-pattern variance scaling.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{BoundaryCondition, ExactSystem, IsingParams, Sign};
use crate::lattice::{sphere_count_upper_bound, LatticeBox, Site};
use crate::patterns::{
    global_indicator, GlobalCounter, GlobalPattern, LocalCounter, LocalPattern,
    DEFAULT_GLOBAL_BUDGET,
};
use crate::sampler::{run_chain, Chain, ChainSpec, Start, UpdateKind};
use crate::stats::{self, LinearFit};
use crate::wdg::IsingWdg;

/// Replicas below this count are reported but never pass a normality check.
pub const MIN_NORMALITY_REPLICAS: usize = 200;
pub const SKEWNESS_THRESHOLD: f64 = 0.15;
pub const KURTOSIS_THRESHOLD: f64 = 0.3;
pub const KS_LEVEL: f64 = 0.01;
pub const DEFAULT_CLT_BURN_IN: usize = 200;

/// The replicated statistic `S_n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    /// `Σ_{i∈Λ_n} σ_i`.
    Magnetization,
    /// `Σ_{i∈Λ_n} Z_i^P`.
    Local(LocalPattern),
    /// Number of occurrences of a global pattern among sites of `Λ_n`.
    Global(GlobalPattern),
}

impl Statistic {
    pub fn label(&self) -> &'static str {
        match self {
            Statistic::Magnetization => "magnetization",
            Statistic::Local(_) => "local",
            Statistic::Global(_) => "global",
        }
    }

    pub fn normalization(&self) -> Normalization {
        match self {
            Statistic::Global(_) => Normalization::SqrtVariance,
            _ => Normalization::SqrtVolume,
        }
    }

    /// Spacing of the lattice of values the statistic takes.
    fn span(&self) -> f64 {
        match self {
            Statistic::Magnetization => 2.0,
            _ => 1.0,
        }
    }

    fn dim(&self) -> Option<usize> {
        match self {
            Statistic::Magnetization => None,
            Statistic::Local(p) => Some(p.dim()),
            Statistic::Global(p) => Some(p.dim()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `(S_n - E S_n) / √|Λ_n|`.
    SqrtVolume,
    /// `(S_n - E S_n) / √Var S_n`.
    SqrtVariance,
}

/// A replicated experiment: one independent chain per replica and box size,
/// each burnt in from its start state and observed once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CltExperiment {
    pub params: IsingParams<f64>,
    /// Statistics evaluated on the same replicas.
    pub statistics: Vec<Statistic>,
    /// Box radii `n`, strictly increasing.
    pub sizes: Vec<u32>,
    pub replicas: usize,
    pub seed: u64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_update")]
    pub update: UpdateKind,
}

fn default_burn_in() -> usize {
    DEFAULT_CLT_BURN_IN
}

fn default_update() -> UpdateKind {
    UpdateKind::SingleFlip
}

impl CltExperiment {
    pub fn new(
        params: IsingParams<f64>,
        statistics: Vec<Statistic>,
        sizes: Vec<u32>,
        replicas: usize,
        seed: u64,
    ) -> Self {
        Self {
            params,
            statistics,
            sizes,
            replicas,
            seed,
            burn_in: DEFAULT_CLT_BURN_IN,
            update: UpdateKind::SingleFlip,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.sizes.is_empty() || self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter {
                name: "sizes",
                reason: "must be non-empty and strictly increasing".into(),
            });
        }
        if self.replicas < 4 {
            return Err(Error::InvalidParameter {
                name: "replicas",
                reason: format!("need at least 4, got {}", self.replicas),
            });
        }
        if self.statistics.is_empty() {
            return Err(Error::InvalidParameter {
                name: "statistics",
                reason: "at least one statistic is required".into(),
            });
        }
        for s in &self.statistics {
            if let Some(d) = s.dim() {
                if d != self.params.dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.params.dim,
                        found: d,
                    });
                }
            }
        }
        if self.replicas as u64 > u64::from(u32::MAX)
            || self.sizes.len() as u64 > u64::from(u32::MAX)
        {
            return Err(Error::Overflow("replica stream index"));
        }
        Ok(())
    }

    /// Chain for one replica: streams `(size_index << 32) | replica` of the
    /// experiment seed.
    pub fn chain_spec(&self, size_index: usize, replica: usize) -> Result<ChainSpec> {
        let region = LatticeBox::centered(self.params.dim, self.sizes[size_index])?;
        Ok(ChainSpec {
            params: self.params,
            region,
            seed: self.seed,
            stream: (size_index as u64) << 32 | replica as u64,
            burn_in: self.burn_in,
            thinning: 1,
            n_samples: 1,
            update: self.update,
            start: Start::Auto,
        })
    }
}

enum Evaluator {
    Magnetization,
    Local(LocalCounter),
    Global(GlobalCounter),
}

impl Evaluator {
    fn new(s: &Statistic, region: &LatticeBox, bc: BoundaryCondition) -> Result<Self> {
        Ok(match s {
            Statistic::Magnetization => Evaluator::Magnetization,
            Statistic::Local(p) => Evaluator::Local(LocalCounter::new(p, region, bc, region)?),
            Statistic::Global(p) => {
                Evaluator::Global(GlobalCounter::new(p, region, DEFAULT_GLOBAL_BUDGET)?)
            }
        })
    }

    fn value(&self, spins: &[i8]) -> f64 {
        match self {
            Evaluator::Magnetization => spins.iter().map(|&s| f64::from(s)).sum(),
            Evaluator::Local(c) => c.count(spins) as f64,
            Evaluator::Global(c) => c.count(spins) as f64,
        }
    }
}

/// Replica values for one box size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSamples {
    pub n: u32,
    pub sites: usize,
    /// `values[statistic][replica]`.
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltRun {
    pub experiment: CltExperiment,
    pub samples: Vec<SizeSamples>,
}

/// Runs every replica of every size. Replicas run in parallel; results are
/// ordered by replica index.
pub fn run_clt_experiment(exp: &CltExperiment) -> Result<CltRun> {
    exp.validate()?;
    let mut samples = Vec::with_capacity(exp.sizes.len());
    for (k, &n) in exp.sizes.iter().enumerate() {
        let region = LatticeBox::centered(exp.params.dim, n)?;
        let evaluators = exp
            .statistics
            .iter()
            .map(|s| Evaluator::new(s, &region, exp.params.bc))
            .collect::<Result<Vec<_>>>()?;
        let per_replica: Vec<Vec<f64>> = (0..exp.replicas)
            .into_par_iter()
            .map(|r| {
                let mut chain = Chain::new(exp.chain_spec(k, r)?)?;
                chain.burn_in();
                Ok(evaluators.iter().map(|e| e.value(chain.spins())).collect())
            })
            .collect::<Result<_>>()?;
        let values = (0..evaluators.len())
            .map(|s| per_replica.iter().map(|v| v[s]).collect())
            .collect();
        samples.push(SizeSamples {
            n,
            sites: region.len(),
            values,
        });
    }
    Ok(CltRun {
        experiment: exp.clone(),
        samples,
    })
}

/// Gaussianity diagnostics of one statistic at one box size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityRow {
    pub n: u32,
    pub sites: usize,
    pub replicas: usize,
    pub mean: f64,
    pub variance: f64,
    /// Variance of the normalized statistic: `Var/|Λ_n|`, or 1 under
    /// [`Normalization::SqrtVariance`].
    pub normalized_variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// Against the normal with the sample mean and variance, with a
    /// continuity correction for the lattice of values.
    pub ks_statistic: f64,
    pub ks_p_value: f64,
}

impl NormalityRow {
    /// `|skew| < 0.15`, `|excess kurtosis| < 0.3`, KS p-value above 0.01 and
    /// at least [`MIN_NORMALITY_REPLICAS`] replicas.
    pub fn meets_thresholds(&self) -> bool {
        self.replicas >= MIN_NORMALITY_REPLICAS
            && self.skewness.abs() < SKEWNESS_THRESHOLD
            && self.excess_kurtosis.abs() < KURTOSIS_THRESHOLD
            && self.ks_p_value > KS_LEVEL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    pub statistic: Statistic,
    pub normalization: Normalization,
    pub rows: Vec<NormalityRow>,
}

impl NormalityReport {
    pub fn largest(&self) -> &NormalityRow {
        self.rows.last().expect("reports have at least one size")
    }
}

pub fn normality_row(
    n: u32,
    sites: usize,
    values: &[f64],
    statistic: &Statistic,
) -> Result<NormalityRow> {
    let m = stats::moments(values).map_err(|e| match e {
        Error::DegenerateVariance(_) => {
            Error::DegenerateVariance(format!("{} at n = {n}", statistic.label()))
        }
        other => other,
    })?;
    let sd = m.variance.sqrt();
    let (ks_statistic, ks_p_value) = stats::ks_normal(values, m.mean, sd, statistic.span())?;
    let normalized_variance = match statistic.normalization() {
        Normalization::SqrtVolume => m.variance / sites as f64,
        Normalization::SqrtVariance => 1.0,
    };
    Ok(NormalityRow {
        n,
        sites,
        replicas: values.len(),
        mean: m.mean,
        variance: m.variance,
        normalized_variance,
        skewness: m.skewness,
        excess_kurtosis: m.excess_kurtosis,
        ks_statistic,
        ks_p_value,
    })
}

impl CltRun {
    pub fn values(&self, statistic: usize, size_index: usize) -> &[f64] {
        &self.samples[size_index].values[statistic]
    }

    /// One report per statistic. A statistic with zero sample variance at
    /// some size is an error.
    pub fn reports(&self) -> Result<Vec<NormalityReport>> {
        self.experiment
            .statistics
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let rows = self
                    .samples
                    .iter()
                    .map(|z| normality_row(z.n, z.sites, &z.values[k], s))
                    .collect::<Result<Vec<_>>>()?;
                Ok(NormalityReport {
                    statistic: s.clone(),
                    normalization: s.normalization(),
                    rows,
                })
            })
            .collect()
    }

    /// CSV with columns `n,replica,statistic`.
    pub fn write_csv<W: Write>(&self, statistic: usize, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "replica", "statistic"])?;
        for z in &self.samples {
            for (r, v) in z.values[statistic].iter().enumerate() {
                w.write_record([z.n.to_string(), r.to_string(), crate::format::float(*v)])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Covariance series `v² = Σ_i ⟨f_0; f_i⟩`.

/// Sum of covariances `⟨f_0; f_k⟩` over displacements at one L1 distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shell {
    pub distance: u64,
    /// Number of displacements at this distance.
    pub count: usize,
    pub value: f64,
    pub std_error: f64,
}

/// Fitted `|⟨f_0; f_k⟩| ≲ C ε^{|k|}` envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decay {
    pub epsilon: f64,
    /// Smallest `C` with `mean |cov|` at distance `y` at most `C ε^{y/2}`.
    pub constant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceSeries {
    pub radius: u64,
    /// `Σ_{|k|₁ ≤ R} ⟨f_0; f_k⟩`.
    pub value: f64,
    pub std_error: f64,
    pub shells: Vec<Shell>,
    pub decay: Option<Decay>,
    /// `C Σ_{y > R} N_d(y) ε^{y/2}`, with `N_d(y)` the sphere-count bound;
    /// zero when no covariance beyond the origin is resolved.
    pub tail_bound: f64,
}

/// The observable whose covariances are summed.
fn field_of(s: &Statistic) -> Result<&Statistic> {
    match s {
        Statistic::Global(_) => Err(Error::InvalidParameter {
            name: "pattern",
            reason: "covariance series are defined for the magnetization and local patterns".into(),
        }),
        other => Ok(other),
    }
}

/// How a field value is read at one position.
enum Read {
    Spin(usize),
    Pattern(Vec<(usize, i8)>),
    Never,
}

impl Read {
    fn new(
        field: &Statistic,
        region: &LatticeBox,
        bc: BoundaryCondition,
        x: &Site,
    ) -> Result<Self> {
        let (shape, signs): (Vec<Site>, Vec<Sign>) = match field {
            Statistic::Magnetization => {
                let k = region
                    .index_of(x)
                    .ok_or_else(|| Error::SiteOutsideBox(x.to_vec()))?;
                return Ok(Read::Spin(k));
            }
            Statistic::Local(p) => (p.shape().to_vec(), p.signs().to_vec()),
            Statistic::Global(_) => unreachable!("rejected by field_of"),
        };
        let mut reqs = Vec::with_capacity(shape.len());
        for (j, s) in shape.iter().zip(signs) {
            let y = x.offset(j);
            match region.index_of(&y) {
                Some(k) => reqs.push((k, s.spin())),
                None => match bc.ghost() {
                    None => return Err(Error::FreeBoundaryRead(y.to_vec())),
                    Some(g) if g == s.spin() => {}
                    Some(_) => return Ok(Read::Never),
                },
            }
        }
        Ok(Read::Pattern(reqs))
    }

    fn value(&self, spins: &[i8]) -> f64 {
        match self {
            Read::Spin(k) => f64::from(spins[*k]),
            Read::Pattern(reqs) => f64::from(u8::from(reqs.iter().all(|&(k, s)| spins[k] == s))),
            Read::Never => 0.0,
        }
    }
}

/// Displacements with `|k|₁ ≤ radius`, with their distances.
fn ball(dim: usize, radius: u64) -> Vec<(Site, u64)> {
    let r = radius as i32;
    let mut out = Vec::new();
    let mut k = vec![-r; dim];
    loop {
        let y: u64 = k.iter().map(|c| c.unsigned_abs() as u64).sum();
        if y <= radius {
            out.push((Site::new(k.clone()), y));
        }
        let mut axis = 0;
        loop {
            if axis == dim {
                return out;
            }
            if k[axis] < r {
                k[axis] += 1;
                break;
            }
            k[axis] = -r;
            axis += 1;
        }
    }
}

fn shell_counts(dim: usize, radius: u64) -> Vec<usize> {
    let mut counts = vec![0; radius as usize + 1];
    for (_, y) in ball(dim, radius) {
        counts[y as usize] += 1;
    }
    counts
}

/// Builds the series from shell sums and fits the decay envelope used for
/// the tail bound.
pub fn series_from_shells(
    dim: usize,
    radius: u64,
    shells: Vec<Shell>,
    std_error: f64,
) -> Result<VarianceSeries> {
    let value: f64 = shells.iter().map(|s| s.value).sum();
    let scale = shells.first().map_or(0.0, |s| s.value.abs());
    let resolved: Vec<&Shell> = shells
        .iter()
        .filter(|s| s.value.abs() > 3.0 * s.std_error && s.value.abs() > 1e-13 * scale)
        .collect();
    let (decay, tail_bound) = if resolved.iter().all(|s| s.distance == 0) {
        (None, 0.0)
    } else {
        let x: Vec<f64> = resolved.iter().map(|s| s.distance as f64).collect();
        let y: Vec<f64> = resolved
            .iter()
            .map(|s| (s.value.abs() / s.count as f64).ln())
            .collect();
        let (slope, _) = stats::weighted_slope(&x, &y, &vec![1.0; x.len()])?;
        if !(slope < 0.0) {
            return Err(Error::NonDecaying(slope));
        }
        let epsilon = slope.exp();
        let half = epsilon.sqrt();
        let constant = resolved
            .iter()
            .map(|s| s.value.abs() / s.count as f64 / half.powi(s.distance as i32))
            .fold(0.0, f64::max);
        let mut tail = 0.0;
        let mut y = radius + 1;
        loop {
            let term =
                constant * sphere_count_upper_bound(dim as u32, y)? as f64 * half.powf(y as f64);
            tail += term;
            if term <= 1e-17 * tail.max(f64::MIN_POSITIVE) || y > radius + 100_000 {
                break;
            }
            y += 1;
        }
        (Some(Decay { epsilon, constant }), tail)
    };
    Ok(VarianceSeries {
        radius,
        value,
        std_error,
        shells,
        decay,
        tail_bound,
    })
}

/// Where covariances come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceSource {
    /// Exact enumeration on `[-half_width, half_width]^d` with the field at
    /// the origin; boundary effects are not removed.
    Exact { half_width: u32 },
    /// Closed-form covariances of the infinite chain (`d = 1`,
    /// magnetization only).
    InfiniteChain,
    /// Monte Carlo on a box large enough that every read stays `margin`
    /// sites from the boundary.
    Sampled(SamplingPlan),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingPlan {
    pub seed: u64,
    pub samples: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_plan_thinning")]
    pub thinning: usize,
    /// Sites between the outermost read and the box boundary.
    #[serde(default = "default_margin")]
    pub margin: u32,
    /// Base points `x` range over `[-inner, inner]^d`.
    #[serde(default = "default_inner")]
    pub inner: u32,
}

fn default_plan_thinning() -> usize {
    5
}

fn default_margin() -> u32 {
    8
}

fn default_inner() -> u32 {
    6
}

impl SamplingPlan {
    pub fn new(seed: u64, samples: usize) -> Self {
        Self {
            seed,
            samples,
            burn_in: DEFAULT_CLT_BURN_IN,
            thinning: default_plan_thinning(),
            margin: default_margin(),
            inner: default_inner(),
        }
    }
}

/// `v² ≈ Σ_{|k|₁ ≤ R} ⟨f_0; f_k⟩` for the magnetization (`f = σ`) or a local
/// pattern (`f = Z^P`), with a tail bound from the fitted decay.
pub fn variance_series_estimate(
    params: &IsingParams<f64>,
    field: &Statistic,
    radius: u64,
    source: &CovarianceSource,
) -> Result<VarianceSeries> {
    params.validate()?;
    let field = field_of(field)?;
    match source {
        CovarianceSource::Exact { half_width } => exact_series(params, field, radius, *half_width),
        CovarianceSource::InfiniteChain => chain_series(params, field, radius),
        CovarianceSource::Sampled(plan) => sampled_series(params, field, radius, plan),
    }
}

fn exact_series(
    params: &IsingParams<f64>,
    field: &Statistic,
    radius: u64,
    half_width: u32,
) -> Result<VarianceSeries> {
    let region = LatticeBox::centered(params.dim, half_width)?;
    let sys = ExactSystem::new(region.clone(), *params)?;
    let origin = Site::origin(params.dim);
    let centre = Read::new(field, &region, params.bc, &origin)?;
    let counts = shell_counts(params.dim, radius);
    let displacements = ball(params.dim, radius);
    let others = displacements
        .iter()
        .map(|(k, _)| Read::new(field, &region, params.bc, k))
        .collect::<Result<Vec<_>>>()?;
    // Layout: ⟨f_0⟩, then ⟨f_k⟩ and ⟨f_0 f_k⟩ per displacement.
    let e = sys.expectations(1 + 2 * others.len(), |s, out| {
        let c = centre.value(s);
        out[0] = c;
        for (j, o) in others.iter().enumerate() {
            let v = o.value(s);
            out[1 + 2 * j] = v;
            out[2 + 2 * j] = c * v;
        }
    });
    let mut values = vec![0.0; counts.len()];
    for (j, (_, y)) in displacements.iter().enumerate() {
        values[*y as usize] += e[2 + 2 * j] - e[0] * e[1 + 2 * j];
    }
    let shells = shells_of(&counts, &values, &vec![0.0; counts.len()]);
    series_from_shells(params.dim, radius, shells, 0.0)
}

fn shells_of(counts: &[usize], values: &[f64], errors: &[f64]) -> Vec<Shell> {
    counts
        .iter()
        .zip(values)
        .zip(errors)
        .enumerate()
        .map(|(y, ((&count, &value), &std_error))| Shell {
            distance: y as u64,
            count,
            value,
            std_error,
        })
        .collect()
}

/// Infinite-volume `⟨σ_0; σ_r⟩` of the one-dimensional chain:
/// `(1 - m²)(λ₋/λ₊)^r` with `m = sinh h / √(sinh² h + e^{-4β})`.
pub fn chain_covariance(beta: f64, h: f64, r: u64) -> f64 {
    let root = ((2.0 * beta).exp() * h.sinh().powi(2) + (-2.0 * beta).exp()).sqrt();
    let base = beta.exp() * h.cosh();
    let ratio = (base - root) / (base + root);
    let m2 = h.sinh().powi(2) / (h.sinh().powi(2) + (-4.0 * beta).exp());
    (1.0 - m2) * ratio.powf(r as f64)
}

fn chain_series(
    params: &IsingParams<f64>,
    field: &Statistic,
    radius: u64,
) -> Result<VarianceSeries> {
    if params.dim != 1 || *field != Statistic::Magnetization {
        return Err(Error::InvalidParameter {
            name: "source",
            reason: "the infinite-chain source covers the d = 1 magnetization only".into(),
        });
    }
    let counts = shell_counts(1, radius);
    let values: Vec<f64> = (0..=radius)
        .map(|y| counts[y as usize] as f64 * chain_covariance(params.beta, params.h, y))
        .collect();
    let shells = shells_of(&counts, &values, &vec![0.0; counts.len()]);
    series_from_shells(1, radius, shells, 0.0)
}

fn reach(field: &Statistic) -> u32 {
    match field {
        Statistic::Local(p) => p
            .shape()
            .iter()
            .flat_map(|s| s.iter().map(|c| c.unsigned_abs()))
            .max()
            .unwrap_or(0),
        _ => 0,
    }
}

fn sampled_series(
    params: &IsingParams<f64>,
    field: &Statistic,
    radius: u64,
    plan: &SamplingPlan,
) -> Result<VarianceSeries> {
    let r = u32::try_from(radius).map_err(|_| Error::Overflow("series radius"))?;
    let field_half = plan.inner + r;
    let half = field_half + reach(field) + plan.margin;
    let region = LatticeBox::centered(params.dim, half)?;
    let field_box = LatticeBox::centered(params.dim, field_half)?;
    let reads = field_box
        .sites()
        .map(|x| Read::new(field, &region, params.bc, &x))
        .collect::<Result<Vec<_>>>()?;
    let inner: Vec<usize> = LatticeBox::centered(params.dim, plan.inner)?
        .sites()
        .map(|x| {
            field_box
                .index_of(&x)
                .expect("inner box lies in the field box")
        })
        .collect();
    // Displacements as flat offsets in the field box, grouped by distance.
    let strides: Vec<isize> = {
        let e = field_box.extents();
        let mut s = vec![1isize; e.len()];
        for k in (0..e.len().saturating_sub(1)).rev() {
            s[k] = s[k + 1] * e[k + 1] as isize;
        }
        s
    };
    let counts = shell_counts(params.dim, radius);
    let offsets: Vec<(isize, usize)> = ball(params.dim, radius)
        .into_iter()
        .map(|(k, y)| {
            (
                k.iter().zip(&strides).map(|(&c, &s)| c as isize * s).sum(),
                y as usize,
            )
        })
        .collect();

    let mut spec = ChainSpec::new(*params, region, plan.seed, plan.samples);
    spec.burn_in = plan.burn_in;
    spec.thinning = plan.thinning;
    let batch = run_chain(&spec)?;

    let n_inner = inner.len() as f64;
    let mut means = Vec::with_capacity(batch.len());
    let mut shell_samples = vec![Vec::with_capacity(batch.len()); counts.len()];
    let mut f = vec![0.0; reads.len()];
    for spins in batch.iter() {
        for (v, read) in f.iter_mut().zip(&reads) {
            *v = read.value(spins);
        }
        let mut acc = vec![0.0; counts.len()];
        let mut mean = 0.0;
        for &x in &inner {
            let fx = f[x];
            mean += fx;
            if fx == 0.0 {
                continue;
            }
            for &(off, y) in &offsets {
                acc[y] += fx * f[(x as isize + off) as usize];
            }
        }
        means.push(mean / n_inner);
        for (s, a) in shell_samples.iter_mut().zip(acc) {
            s.push(a / n_inner);
        }
    }
    let mu = means.iter().sum::<f64>() / means.len() as f64;
    let mut values = Vec::with_capacity(counts.len());
    let mut errors = Vec::with_capacity(counts.len());
    for (s, &c) in shell_samples.iter().zip(&counts) {
        let (m, se) = stats::batch_means(s)?;
        values.push(m - c as f64 * mu * mu);
        errors.push(se);
    }
    let totals: Vec<f64> = (0..batch.len())
        .map(|t| shell_samples.iter().map(|s| s[t]).sum())
        .collect();
    let (_, total_se) = stats::batch_means(&totals)?;
    let shells = shells_of(&counts, &values, &errors);
    series_from_shells(params.dim, radius, shells, total_se)
}

// ---------------------------------------------------------------------------
// Variance-growth conditions.

/// Measured quantities for one box size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditPoint {
    pub n: u32,
    /// `N_n`, the number of summands.
    pub n_vars: f64,
    /// `Δ_n`, one plus the largest weighted degree.
    pub delta: f64,
    /// `a_n`, the normalization.
    pub a_n: f64,
    /// `v_n² = Var S_n`.
    pub v_n2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub n: u32,
    /// `v_n² / a_n²`.
    pub variance_ratio: f64,
    /// `a_n² / (N_n Δ_n)`, to be bounded by `C₂`.
    pub growth_ratio: f64,
    /// `(N_n/Δ_n)^{1/s} Δ_n / a_n`, to tend to zero.
    pub decay_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionAudit {
    pub s: f64,
    pub c2: f64,
    pub rows: Vec<ConditionRow>,
    /// Relative change of `v_n²/a_n²` between the last two sizes is at most
    /// 10%.
    pub variance_ratio_settles: bool,
    /// `a_n² ≤ C₂ N_n Δ_n` at every size.
    pub growth_bounded: bool,
    /// The decay ratio decreases strictly from size to size.
    pub decay_ratio_decreasing: bool,
    pub max_delta: f64,
}

/// Audits the three variance-growth conditions over increasing sizes.
pub fn check_criterion_conditions(
    points: &[AuditPoint],
    c2: f64,
    s: f64,
) -> Result<CriterionAudit> {
    if !(s >= 3.0) {
        return Err(Error::InvalidParameter {
            name: "s",
            reason: format!("must be at least 3, got {s}"),
        });
    }
    if points.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, have: 0 });
    }
    let rows: Vec<ConditionRow> = points
        .iter()
        .map(|p| ConditionRow {
            n: p.n,
            variance_ratio: p.v_n2 / (p.a_n * p.a_n),
            growth_ratio: p.a_n * p.a_n / (p.n_vars * p.delta),
            decay_ratio: (p.n_vars / p.delta).powf(1.0 / s) * p.delta / p.a_n,
        })
        .collect();
    let variance_ratio_settles = match rows.as_slice() {
        [.., a, b] => ((b.variance_ratio - a.variance_ratio) / a.variance_ratio).abs() <= 0.1,
        _ => true,
    };
    Ok(CriterionAudit {
        s,
        c2,
        variance_ratio_settles,
        growth_bounded: rows.iter().all(|r| r.growth_ratio <= c2),
        decay_ratio_decreasing: rows.windows(2).all(|w| w[1].decay_ratio < w[0].decay_ratio),
        max_delta: points.iter().map(|p| p.delta).fold(0.0, f64::max),
        rows,
    })
}

/// `1 + Σ_{j ∈ Λ, j ≠ c} ε^{|j - c|/2}` at the centre `c` of `region`, the
/// largest weighted degree of `Λ` plus one.
pub fn max_degree_in_box(region: &LatticeBox, g: &IsingWdg<f64>) -> f64 {
    let centre: Vec<i32> = region
        .lo()
        .iter()
        .zip(region.hi().iter())
        .map(|(a, b)| a + (b - a) / 2)
        .collect();
    let mut by_distance: Vec<usize> = Vec::new();
    for s in region.sites() {
        let y = s
            .iter()
            .zip(&centre)
            .map(|(a, b)| (a - b).unsigned_abs() as usize)
            .sum::<usize>();
        if by_distance.len() <= y {
            by_distance.resize(y + 1, 0);
        }
        by_distance[y] += 1;
    }
    1.0 + by_distance
        .iter()
        .enumerate()
        .skip(1)
        .map(|(y, &c)| c as f64 * g.weight_at_distance(y as u64))
        .sum::<f64>()
}

/// `1 + Σ_{y ≥ 1} N_d(y) ε^{y/2}`: a size-independent bound on `Δ_n`.
pub fn degree_limit(g: &IsingWdg<f64>) -> Result<f64> {
    let mut total = 1.0;
    let mut y = 1;
    loop {
        let term = sphere_count_upper_bound(g.dim as u32, y)? as f64 * g.weight_at_distance(y);
        total += term;
        if term < 1e-17 * total {
            return Ok(total);
        }
        y += 1;
    }
}

/// Audit inputs for the magnetization: `N_n = |Λ_n|`, `a_n = √|Λ_n|`,
/// `v_n²` the replica variance and `Δ_n` from the weighted dependency graph
/// with parameter `ε`.
pub fn magnetization_audit_points(
    run: &CltRun,
    statistic: usize,
    g: &IsingWdg<f64>,
) -> Result<Vec<AuditPoint>> {
    run.samples
        .iter()
        .map(|z| {
            let region = LatticeBox::centered(run.experiment.params.dim, z.n)?;
            let m = stats::moments(&z.values[statistic])?;
            Ok(AuditPoint {
                n: z.n,
                n_vars: z.sites as f64,
                delta: max_degree_in_box(&region, g),
                a_n: (z.sites as f64).sqrt(),
                v_n2: m.variance,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Global-pattern variance scaling.

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub n: u32,
    pub sites: usize,
    pub variance: f64,
    pub variance_std_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_std_error: f64,
    /// 95% confidence interval.
    pub lower: f64,
    pub upper: f64,
}

impl From<LinearFit> for SlopeFit {
    fn from(f: LinearFit) -> Self {
        Self {
            slope: f.slope,
            intercept: f.intercept,
            slope_std_error: f.slope_std_error,
            lower: f.slope_interval.0,
            upper: f.slope_interval.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceScaling {
    pub points: Vec<ScalingPoint>,
    /// `ln Var` against `ln |Λ_n|`; the lower bound predicts `2m - 1`.
    pub versus_sites: SlopeFit,
    /// `ln Var` against `ln n`.
    pub versus_radius: SlopeFit,
    pub predicted_exponent: f64,
}

/// Standard error of the unbiased sample variance.
fn variance_std_error(values: &[f64]) -> Result<f64> {
    let m = stats::moments(values)?;
    let n = values.len() as f64;
    let m2 = m.variance * (n - 1.0) / n;
    let m4 = (m.excess_kurtosis + 3.0) * m2 * m2;
    Ok(((m4 - m2 * m2 * (n - 3.0) / (n - 1.0)) / n).max(0.0).sqrt())
}

/// Fits the growth exponent of `Var S_{n,P̃}` from a run of a global
/// statistic over at least three sizes.
pub fn global_variance_scaling(run: &CltRun, statistic: usize) -> Result<VarianceScaling> {
    let m = match &run.experiment.statistics[statistic] {
        Statistic::Global(p) => p.m(),
        Statistic::Local(_) | Statistic::Magnetization => 1,
    };
    if run.samples.len() < 3 {
        return Err(Error::InsufficientSamples {
            needed: 3,
            have: run.samples.len(),
        });
    }
    let points = run
        .samples
        .iter()
        .map(|z| {
            let v = &z.values[statistic];
            Ok(ScalingPoint {
                n: z.n,
                sites: z.sites,
                variance: stats::moments(v)?.variance,
                variance_std_error: variance_std_error(v)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ln_var: Vec<f64> = points.iter().map(|p| p.variance.ln()).collect();
    let ln_sites: Vec<f64> = points.iter().map(|p| (p.sites as f64).ln()).collect();
    let ln_n: Vec<f64> = points.iter().map(|p| f64::from(p.n).ln()).collect();
    Ok(VarianceScaling {
        versus_sites: stats::linear_fit(&ln_sites, &ln_var, 0.95)?.into(),
        versus_radius: stats::linear_fit(&ln_n, &ln_var, 0.95)?.into(),
        predicted_exponent: (2 * m - 1) as f64,
        points,
    })
}

/// Runs the replicated experiment for an all-plus global pattern with
/// `m ≤ 3` and fits the variance exponent.
pub fn run_global_variance_scaling(exp: &CltExperiment) -> Result<(CltRun, VarianceScaling)> {
    let [Statistic::Global(p)] = exp.statistics.as_slice() else {
        return Err(Error::InvalidParameter {
            name: "statistics",
            reason: "variance scaling takes exactly one global pattern".into(),
        });
    };
    if p.m() > 3 || p.signs().iter().any(|&s| s != Sign::Plus) {
        return Err(Error::InvalidParameter {
            name: "pattern",
            reason: "variance scaling needs an all-plus pattern with m <= 3".into(),
        });
    }
    if exp.sizes.len() < 3 {
        return Err(Error::InsufficientSamples {
            needed: 3,
            have: exp.sizes.len(),
        });
    }
    let run = run_clt_experiment(exp)?;
    let fit = global_variance_scaling(&run, 0)?;
    Ok((run, fit))
}

/// Estimated `Cov(Z_X, Z_Y)` for two site sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummandCovariance {
    pub x: Vec<Site>,
    pub y: Vec<Site>,
    pub covariance: f64,
    pub std_error: f64,
}

fn random_occurrence_set<R: rand::Rng>(
    p: &GlobalPattern,
    region: &LatticeBox,
    plus: &crate::gibbs::SpinConfiguration,
    rng: &mut R,
) -> Result<Vec<Site>> {
    let shape_only = GlobalPattern::new(p.ranks().to_vec(), vec![Sign::Plus; p.m()])?;
    for _ in 0..10_000 {
        let mut idx: Vec<usize> = (0..p.m())
            .map(|_| rng.random_range(0..region.len()))
            .collect();
        idx.sort_unstable();
        idx.dedup();
        if idx.len() < p.m() {
            continue;
        }
        let x: Vec<Site> = idx.iter().map(|&i| region.site(i)).collect();
        if global_indicator(plus, &shape_only, &x)? {
            return Ok(x);
        }
    }
    Err(Error::InvalidParameter {
        name: "region",
        reason: "box too small to place the pattern".into(),
    })
}

/// Samples `pairs` random pairs `(X, Y)` of site sets that can carry the
/// pattern and estimates `Cov(Z_X, Z_Y)` from one chain with batch-means
/// standard errors.
pub fn summand_covariances(
    spec: &ChainSpec,
    p: &GlobalPattern,
    pairs: usize,
) -> Result<Vec<SummandCovariance>> {
    use rand::SeedableRng;
    let region = spec.region.clone();
    let plus = crate::gibbs::SpinConfiguration::uniform(
        region.clone(),
        Sign::Plus,
        BoundaryCondition::Free,
    );
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed);
    let sets = (0..pairs)
        .map(|_| {
            Ok((
                random_occurrence_set(p, &region, &plus, &mut rng)?,
                random_occurrence_set(p, &region, &plus, &mut rng)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let batch = run_chain(spec)?;
    let indicator = |x: &[Site], spins: &[i8]| -> Result<f64> {
        let cfg =
            crate::gibbs::SpinConfiguration::new(region.clone(), spins.to_vec(), spec.params.bc)?;
        Ok(f64::from(u8::from(global_indicator(&cfg, p, x)?)))
    };
    sets.into_iter()
        .map(|(x, y)| {
            let mut zx = Vec::with_capacity(batch.len());
            let mut zy = Vec::with_capacity(batch.len());
            for spins in batch.iter() {
                zx.push(indicator(&x, spins)?);
                zy.push(indicator(&y, spins)?);
            }
            let n = zx.len() as f64;
            let mx = zx.iter().sum::<f64>() / n;
            let my = zy.iter().sum::<f64>() / n;
            let products: Vec<f64> = zx
                .iter()
                .zip(&zy)
                .map(|(a, b)| (a - mx) * (b - my))
                .collect();
            let (covariance, std_error) = stats::batch_means(&products)?;
            Ok(SummandCovariance {
                x,
                y,
                covariance,
                std_error,
            })
        })
        .collect()
}

/// Sites left and right of the separated occurrences in
/// [`separated_occurrence_covariance`].
pub const SEPARATION_PAD: u32 = 6;

/// Exact `Cov(X_{x₁,+} X_{x₂,+}, X_{x₁,+} X_{y₂,+})` on a one-dimensional
/// strip, with `x₂ = x₁ + R`, `y₂ = x₁ + 2R` and
/// [`SEPARATION_PAD`] extra sites on each side.
pub fn separated_occurrence_covariance(
    beta: f64,
    h: f64,
    bc: BoundaryCondition,
    r: u32,
) -> Result<f64> {
    if r == 0 {
        return Err(Error::InvalidParameter {
            name: "R",
            reason: "separation must be at least 1".into(),
        });
    }
    let length = 2 * r + 1 + 2 * SEPARATION_PAD;
    let region = LatticeBox::with_shape(&[length as usize])?;
    let sys = ExactSystem::new(region, IsingParams::new(1, beta, h, bc)?)?;
    let (a, b, c) = (
        SEPARATION_PAD as usize,
        (SEPARATION_PAD + r) as usize,
        (SEPARATION_PAD + 2 * r) as usize,
    );
    let x = |s: i8| f64::from(u8::from(s > 0));
    let both = sys.expectation(|s| x(s[a]) * x(s[b]) * x(s[c]));
    let left = sys.expectation(|s| x(s[a]) * x(s[b]));
    let right = sys.expectation(|s| x(s[a]) * x(s[c]));
    Ok(both - left * right)
}
