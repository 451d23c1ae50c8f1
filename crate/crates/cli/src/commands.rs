//! One function per subcommand: validate, compute, then hand back the files
//! to write.

use std::path::Path;

use serde::Serialize;

use iwdg::clt::{
    check_criterion_conditions, magnetization_audit_points, run_clt_experiment,
    run_global_variance_scaling, variance_series_estimate, CltExperiment, CriterionAudit,
    NormalityReport, Statistic, VarianceScaling, VarianceSeries,
};
use iwdg::cumulants::{
    estimated_cumulant, CumulantTable, Provenance, MAX_ESTIMATED_ORDER, MAX_ORDER,
};
use iwdg::expansions::{run_suite, ExpansionSuite, IdentityCheck};
use iwdg::gibbs::DEFAULT_STORAGE_CAP;
use iwdg::lattice::l1_distance;
use iwdg::patterns::{GlobalCounter, LocalCounter, Pattern, DEFAULT_GLOBAL_BUDGET};
use iwdg::sampler::{estimate_observable, read_spool, run_chain, spin_product, ChainSpec};
use iwdg::treelen::{check_two_factor, TerminalSet, STEINER_TERMINAL_CAP};
use iwdg::wdg::{check_wdg_inequality_over, fit_epsilon, IsingWdg, WdgReport};
use iwdg::{ExactSystem, IsingParams, LatticeBox, Sign, Site, SpinConfiguration};

use crate::config::{check_box, check_sites, required, ChainBlock, ConfigurationSource, RunConfig};
use crate::output::{Artifact, Contents, Header};
use crate::CliError;

/// Files to write and, for checks that did not pass, the reason (exit 3).
pub struct Outcome {
    pub artifacts: Vec<Artifact>,
    pub failure: Option<String>,
}

impl Outcome {
    fn ok(artifacts: Vec<Artifact>) -> Self {
        Self {
            artifacts,
            failure: None,
        }
    }
}

/// Errors raised while checking the configuration.
fn invalid(at: &str) -> impl Fn(iwdg::Error) -> CliError + '_ {
    move |e| match e {
        iwdg::Error::CapExceeded { .. } => CliError::Cap(e.to_string()),
        other => CliError::Config(format!("at {at}: {other}")),
    }
}

/// Errors raised while computing.
fn failed(e: iwdg::Error) -> CliError {
    match e {
        iwdg::Error::CapExceeded { .. } => CliError::Cap(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

fn cap(what: &str, size: usize, cap: usize) -> Result<(), CliError> {
    if size > cap {
        return Err(CliError::Cap(format!(
            "{what} of size {size} exceeds the cap of {cap}"
        )));
    }
    Ok(())
}

/// Index tuples `i_1 < … < i_r`, or `i_1 ≤ … ≤ i_r` with `repeat`.
fn index_tuples(n: usize, r: usize, repeat: bool) -> Vec<Vec<usize>> {
    fn go(
        n: usize,
        r: usize,
        repeat: bool,
        start: usize,
        cur: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if cur.len() == r {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(n, r, repeat, if repeat { i } else { i + 1 }, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(n, r, repeat, 0, &mut Vec::new(), &mut out);
    out
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SpinProduct {
    sites: Vec<Site>,
    value: f64,
}

#[derive(Serialize)]
struct ExactResult {
    n_sites: usize,
    ln_partition_function: f64,
    partition_function: f64,
    expectations: Vec<SpinProduct>,
}

pub fn exact(cfg: &RunConfig, header: &Header) -> Result<Outcome, CliError> {
    let block = required(&cfg.exact, "exact")?;
    let params = cfg.ising()?;
    check_box(&block.region, cfg.dimension, "exact.box")?;
    check_sites(
        block.expectations.iter().flatten(),
        &block.region,
        "exact.expectations",
    )?;
    if block.cumulant_order > MAX_ORDER {
        return Err(CliError::Config(format!(
            "at exact.cumulant_order: at most {MAX_ORDER}"
        )));
    }
    let n = block.region.len();
    cap(
        "enumerated box",
        n,
        block.cap.min(iwdg::gibbs::DEFAULT_ENUMERATION_CAP),
    )?;
    if block.cumulant_order > 0 {
        cap("box for the cumulant table", n, DEFAULT_STORAGE_CAP)?;
    }
    let sys =
        ExactSystem::with_cap(block.region.clone(), params, block.cap).map_err(invalid("exact"))?;

    let ln_z = sys.ln_partition_function();
    let expectations = block
        .expectations
        .iter()
        .map(|a| {
            Ok(SpinProduct {
                sites: a.clone(),
                value: sys.spin_product_expectation(a).map_err(failed)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut artifacts = vec![header.json(
        "exact.json",
        &ExactResult {
            n_sites: n,
            ln_partition_function: ln_z,
            partition_function: ln_z.exp(),
            expectations,
        },
    )?];
    if block.cumulant_order > 0 {
        let tables = sys.moment_tables().map_err(failed)?;
        let mut table = CumulantTable::new(Provenance::Exact);
        for r in 1..=block.cumulant_order.min(n) {
            for idx in index_tuples(n, r, false) {
                let sites: Vec<Site> = idx.iter().map(|&i| block.region.site(i)).collect();
                table
                    .insert_exact(&sites, tables.spin_cumulant(&idx).map_err(failed)?)
                    .map_err(failed)?;
            }
        }
        let mut body = Vec::new();
        table.write_csv(&mut body).map_err(failed)?;
        artifacts.push(header.csv("cumulants.csv", body)?);
    }
    Ok(Outcome::ok(artifacts))
}

// ---------------------------------------------------------------------------

fn chain_spec(cfg: &RunConfig, block: &ChainBlock, at: &str) -> Result<ChainSpec, CliError> {
    let params = cfg.ising()?;
    check_box(&block.region, cfg.dimension, &format!("{at}.box"))?;
    let spec = ChainSpec {
        params,
        region: block.region.clone(),
        seed: cfg.seed(),
        stream: block.stream,
        burn_in: block.burn_in,
        thinning: block.thinning,
        n_samples: block.n_samples,
        update: block.update,
        start: block.start,
    };
    spec.validate().map_err(invalid(at))?;
    Ok(spec)
}

#[derive(Serialize)]
struct Estimate {
    sites: Vec<Site>,
    mean: f64,
    std_error: f64,
}

#[derive(Serialize)]
struct SampleResult {
    n_samples: usize,
    /// Magnetization per site.
    magnetization: Estimate,
    observables: Vec<Estimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    spool: Option<&'static str>,
}

pub fn sample(cfg: &RunConfig, header: &Header) -> Result<Outcome, CliError> {
    let block = required(&cfg.sample, "sample")?;
    let spec = chain_spec(cfg, &block.chain, "sample.chain")?;
    check_sites(
        block.observables.iter().flatten(),
        &spec.region,
        "sample.observables",
    )?;

    let batch = run_chain(&spec).map_err(failed)?;
    let n = spec.region.len() as f64;
    let (mean, std_error) =
        estimate_observable(&batch, |s| s.iter().map(|&x| f64::from(x)).sum::<f64>() / n)
            .map_err(failed)?;
    let observables = block
        .observables
        .iter()
        .map(|a| {
            let f = spin_product(&spec.region, a).map_err(failed)?;
            let (mean, std_error) = estimate_observable(&batch, f).map_err(failed)?;
            Ok(Estimate {
                sites: a.clone(),
                mean,
                std_error,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let result = SampleResult {
        n_samples: batch.len(),
        magnetization: Estimate {
            sites: Vec::new(),
            mean,
            std_error,
        },
        observables,
        spool: block.spool.then_some("samples.spool"),
    };
    let mut artifacts = vec![header.json("sample.json", &result)?];
    if block.spool {
        artifacts.push(Artifact {
            file: "samples.spool".into(),
            contents: Contents::Spool(batch),
        });
    }
    Ok(Outcome::ok(artifacts))
}

pub fn cumulants(cfg: &RunConfig, header: &Header) -> Result<Outcome, CliError> {
    let block = required(&cfg.cumulants, "cumulants")?;
    let spec = chain_spec(cfg, &block.chain, "cumulants.chain")?;
    check_sites(block.sets.iter().flatten(), &spec.region, "cumulants.sets")?;
    if let Some(bad) = block
        .sets
        .iter()
        .find(|s| s.is_empty() || s.len() > MAX_ESTIMATED_ORDER)
    {
        return Err(CliError::Config(format!(
            "at cumulants.sets: {} sites, expected 1..={MAX_ESTIMATED_ORDER}",
            bad.len()
        )));
    }
    let batch = run_chain(&spec).map_err(failed)?;
    let mut table = CumulantTable::new(Provenance::Estimated);
    for set in &block.sets {
        let (value, se) = estimated_cumulant(&batch, set).map_err(failed)?;
        table.insert_estimated(set, value, se).map_err(failed)?;
    }
    let mut body = Vec::new();
    table.write_csv(&mut body).map_err(failed)?;
    Ok(Outcome::ok(vec![header.csv("cumulants.csv", body)?]))
}

// ---------------------------------------------------------------------------

pub fn treelen(cfg: &RunConfig, header: &Header) -> Result<Outcome, CliError> {
    let block = required(&cfg.treelen, "treelen")?;
    if let Some(s) = block.terminals.iter().find(|s| s.dim() != cfg.dimension) {
        return Err(CliError::Config(format!(
            "at treelen.terminals: site {:?} does not have dimension {}",
            s.coords(),
            cfg.dimension
        )));
    }
    let set = TerminalSet::new(block.terminals.clone()).map_err(invalid("treelen.terminals"))?;
    cap("Steiner terminal set", set.len(), STEINER_TERMINAL_CAP)?;
    let check = check_two_factor(&set).map_err(failed)?;
    Ok(Outcome::ok(vec![header.json("treelen.json", &check)?]))
}

#[derive(Serialize)]
struct WdgResult {
    epsilon: f64,
    epsilon_fitted: bool,
    report: WdgReport,
}

pub fn wdg_check(cfg: &RunConfig, header: &Header) -> Result<Outcome, CliError> {
    let block = required(&cfg.wdg_check, "wdg_check")?;
    let params = cfg.ising()?;
    check_box(&block.region, cfg.dimension, "wdg_check.box")?;
    if !(1..=MAX_ORDER).contains(&block.max_order) {
        return Err(CliError::Config(format!(
            "at wdg_check.max_order: expected 1..={MAX_ORDER}"
        )));
    }
    if let Some(eps) = block.epsilon {
        IsingWdg::new(eps, cfg.dimension).map_err(invalid("wdg_check.epsilon"))?;
    }
    let n = block.region.len();
    cap("box for the cumulant table", n, DEFAULT_STORAGE_CAP)?;
    let sys = ExactSystem::new(block.region.clone(), params).map_err(invalid("wdg_check"))?;

    let tables = sys.moment_tables().map_err(failed)?;
    let site = |i: usize| block.region.site(i);
    let epsilon = match block.epsilon {
        Some(e) => e,
        None => {
            let pairs = index_tuples(n, 2, false)
                .into_iter()
                .map(|p| {
                    Ok((
                        l1_distance(&site(p[0]), &site(p[1])).map_err(failed)?,
                        tables.spin_cumulant(&p).map_err(failed)?,
                    ))
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            fit_epsilon(&pairs).map_err(failed)?
        }
    };
    let g = IsingWdg::new(epsilon, cfg.dimension).map_err(failed)?;
    let mut table = CumulantTable::new(Provenance::Exact);
    let mut multisets = Vec::new();
    for r in 1..=block.max_order {
        for idx in index_tuples(n, r, block.duplicates) {
            let b: Vec<Site> = idx.iter().map(|&i| site(i)).collect();
            table
                .insert_exact(&b, tables.spin_cumulant(&idx).map_err(failed)?)
                .map_err(failed)?;
            multisets.push(b);
        }
    }
    let report = check_wdg_inequality_over(&table, &g, &multisets).map_err(failed)?;
    let failure = (!report.all_finite()).then(|| "some C_r is infinite".to_string());
    let artifact = header.json(
        "wdg.json",
        &WdgResult {
            epsilon,
            epsilon_fitted: block.epsilon.is_none(),
            report,
        },
    )?;
    Ok(Outcome {
        artifacts: vec![artifact],
        failure,
    })
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct PatternCountResult {
    pattern: Pattern,
    counts: Vec<u64>,
}

enum Counter {
    Local(LocalCounter),
    Global(GlobalCounter),
}

pub fn pattern_count(cfg: &RunConfig, header: &Header, base: &Path) -> Result<Outcome, CliError> {
    let block = required(&cfg.pattern_count, "pattern_count")?;
    let params = cfg.ising()?;
    let region = &block.region;
    check_box(region, cfg.dimension, "pattern_count.box")?;
    let pattern = match (&block.pattern, &block.pattern_file) {
        (Some(p), None) => p.clone(),
        (None, Some(file)) => {
            let path = base.join(file);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| CliError::Config(format!("at pattern_count.pattern_file: {e}")))?;
            let de = &mut serde_json::Deserializer::from_str(&text);
            serde_path_to_error::deserialize(de).map_err(|e| {
                CliError::Config(format!(
                    "in {} at {}: {}",
                    path.display(),
                    e.path(),
                    e.inner()
                ))
            })?
        }
        _ => {
            return Err(CliError::Config(
                "at pattern_count: give exactly one of pattern and pattern_file".into(),
            ))
        }
    };
    let dim = match &pattern {
        Pattern::Local(p) => p.dim(),
        Pattern::Global(p) => p.dim(),
    };
    if dim != cfg.dimension {
        return Err(CliError::Config(format!(
            "at pattern_count.pattern: dimension {dim}, expected {}",
            cfg.dimension
        )));
    }
    let configurations: Vec<Vec<i8>> = match &block.configuration {
        ConfigurationSource::Spins(text) => {
            let signs = iwdg::patterns::Signs::parse(text)
                .map_err(invalid("pattern_count.configuration.spins"))?;
            if signs.0.len() != region.len() {
                return Err(CliError::Config(format!(
                    "at pattern_count.configuration.spins: {} signs for a box of {} sites",
                    signs.0.len(),
                    region.len()
                )));
            }
            vec![signs.0.iter().map(|s| s.spin()).collect()]
        }
        ConfigurationSource::Uniform(s) => vec![vec![s.spin(); region.len()]],
        ConfigurationSource::Spool(file) => {
            let (spool_box, records) = read_spool(&base.join(file))
                .map_err(invalid("pattern_count.configuration.spool"))?;
            if &spool_box != region {
                return Err(CliError::Config(
                    "at pattern_count.configuration.spool: spool box differs from box".into(),
                ));
            }
            records
        }
    };
    let counter = match &pattern {
        Pattern::Local(p) => Counter::Local(
            LocalCounter::new(p, region, params.bc, region)
                .map_err(invalid("pattern_count.pattern"))?,
        ),
        Pattern::Global(p) => Counter::Global(
            GlobalCounter::new(p, region, block.budget.unwrap_or(DEFAULT_GLOBAL_BUDGET))
                .map_err(invalid("pattern_count.pattern"))?,
        ),
    };
    let counts = configurations
        .iter()
        .map(|spins| {
            // Validates the spin array against the box and boundary.
            SpinConfiguration::new(region.clone(), spins.clone(), params.bc).map_err(failed)?;
            Ok(match &counter {
                Counter::Local(c) => c.count(spins),
                Counter::Global(c) => c.count(spins),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(Outcome::ok(vec![header.json(
        "pattern_count.json",
        &PatternCountResult { pattern, counts },
    )?]))
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct VerifyResult {
    tolerance: f64,
    checked: usize,
    failed: usize,
    max_error: f64,
    rows: Vec<IdentityCheck>,
}

pub fn verify_expansions(cfg: &RunConfig, header: &Header) -> Result<Outcome, CliError> {
    let block = required(&cfg.verify_expansions, "verify_expansions")?;
    if !(block.tolerance > 0.0) {
        return Err(CliError::Config(
            "at verify_expansions.tolerance: must be positive".into(),
        ));
    }
    if !(block.perturb > -1.0) {
        return Err(CliError::Config(
            "at verify_expansions.perturb: must exceed -1".into(),
        ));
    }
    for (k, shape) in block.shapes.iter().enumerate() {
        let at = format!("verify_expansions.shapes[{k}]");
        let region =
            LatticeBox::with_shape(shape).map_err(|e| CliError::Config(format!("at {at}: {e}")))?;
        cap(
            "expansion box",
            region.len(),
            iwdg::expansions::islands::DEFAULT_ISLAND_CAP,
        )?;
    }
    for (k, beta) in block.betas.iter().enumerate() {
        if !(beta.is_finite() && *beta >= 0.0) {
            return Err(CliError::Config(format!(
                "at verify_expansions.betas[{k}]: must be finite and non-negative"
            )));
        }
    }
    if let Some(k) = block.fields.iter().position(|h| !h.is_finite()) {
        return Err(CliError::Config(format!(
            "at verify_expansions.fields[{k}]: must be finite"
        )));
    }
    let suite = ExpansionSuite {
        shapes: block.shapes.clone(),
        betas: block.betas.clone(),
        fields: block.fields.clone(),
        perturb: block.perturb,
    };
    let rows = run_suite(&suite).map_err(failed)?;
    let failed_rows = rows.iter().filter(|r| !r.passes(block.tolerance)).count();
    let result = VerifyResult {
        tolerance: block.tolerance,
        checked: rows.len(),
        failed: failed_rows,
        max_error: rows.iter().map(|r| r.error).fold(0.0, f64::max),
        rows,
    };
    let failure = (failed_rows > 0).then(|| {
        format!(
            "{failed_rows} of {} identities exceed {:e}",
            result.checked, block.tolerance
        )
    });
    Ok(Outcome {
        artifacts: vec![header.json("expansions.json", &result)?],
        failure,
    })
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct CltResult {
    reports: Vec<NormalityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    series: Option<VarianceSeries>,
    #[serde(skip_serializing_if = "Option::is_none")]
    audit: Option<CriterionAudit>,
}

fn experiment(
    params: IsingParams,
    statistics: Vec<Statistic>,
    sizes: &[u32],
    replicas: usize,
    seed: u64,
    burn_in: usize,
    update: iwdg::sampler::UpdateKind,
    at: &str,
) -> Result<CltExperiment, CliError> {
    let mut exp = CltExperiment::new(params, statistics, sizes.to_vec(), replicas, seed);
    exp.burn_in = burn_in;
    exp.update = update;
    exp.validate().map_err(invalid(at))?;
    Ok(exp)
}

pub fn clt(cfg: &RunConfig, header: &Header) -> Result<Outcome, CliError> {
    let block = required(&cfg.clt, "clt")?;
    let params = cfg.ising()?;
    let exp = experiment(
        params,
        block.statistics.clone(),
        &block.sizes,
        block.replicas,
        cfg.seed(),
        block.burn_in,
        block.update,
        "clt",
    )?;
    let series_field = block
        .statistics
        .iter()
        .find(|s| !matches!(s, Statistic::Global(_)));
    if block.series.is_some() && series_field.is_none() {
        return Err(CliError::Config(
            "at clt.series: needs a magnetization or local statistic".into(),
        ));
    }
    let magnetization = block
        .statistics
        .iter()
        .position(|s| *s == Statistic::Magnetization);
    if let Some(audit) = &block.audit {
        if block.series.is_none() {
            return Err(CliError::Config(
                "at clt.audit: needs clt.series for the decay fit".into(),
            ));
        }
        if magnetization.is_none() {
            return Err(CliError::Config(
                "at clt.audit: needs a magnetization statistic".into(),
            ));
        }
        if !(audit.s >= 3.0) || !(audit.c2 > 0.0) {
            return Err(CliError::Config(
                "at clt.audit: needs s >= 3 and c2 > 0".into(),
            ));
        }
    }

    let run = run_clt_experiment(&exp).map_err(failed)?;
    let reports = run.reports().map_err(failed)?;
    let series = match (&block.series, series_field) {
        (Some(s), Some(field)) => {
            Some(variance_series_estimate(&params, field, s.radius, &s.source).map_err(failed)?)
        }
        _ => None,
    };
    let audit = match (&block.audit, &series, magnetization) {
        (Some(a), Some(series), Some(k)) => {
            let decay = series.decay.ok_or_else(|| {
                CliError::Runtime("covariance series has no decay fit for the audit".into())
            })?;
            let g = IsingWdg::new(decay.epsilon, cfg.dimension).map_err(failed)?;
            let points = magnetization_audit_points(&run, k, &g).map_err(failed)?;
            Some(check_criterion_conditions(&points, a.c2, a.s).map_err(failed)?)
        }
        _ => None,
    };
    let mut artifacts = vec![header.json(
        "clt.json",
        &CltResult {
            reports,
            series,
            audit,
        },
    )?];
    for (k, s) in block.statistics.iter().enumerate() {
        let mut body = Vec::new();
        run.write_csv(k, &mut body).map_err(failed)?;
        artifacts.push(header.csv(&format!("clt_{k}_{}.csv", s.label()), body)?);
    }
    Ok(Outcome::ok(artifacts))
}

#[derive(Serialize)]
struct ScalingResult {
    scaling: VarianceScaling,
    reports: Vec<NormalityReport>,
}

pub fn variance_scaling(cfg: &RunConfig, header: &Header) -> Result<Outcome, CliError> {
    let block = required(&cfg.variance_scaling, "variance_scaling")?;
    let params = cfg.ising()?;
    let p = &block.pattern;
    if p.dim() != cfg.dimension {
        return Err(CliError::Config(format!(
            "at variance_scaling.pattern: dimension {}, expected {}",
            p.dim(),
            cfg.dimension
        )));
    }
    if p.m() > 3 || p.signs().iter().any(|&s| s != Sign::Plus) {
        return Err(CliError::Config(
            "at variance_scaling.pattern: needs an all-plus pattern with m <= 3".into(),
        ));
    }
    if block.sizes.len() < 3 {
        return Err(CliError::Config(
            "at variance_scaling.sizes: needs at least three sizes".into(),
        ));
    }
    if let Some(t) = block.slope_tolerance {
        if !(t > 0.0) {
            return Err(CliError::Config(
                "at variance_scaling.slope_tolerance: must be positive".into(),
            ));
        }
    }
    let exp = experiment(
        params,
        vec![Statistic::Global(p.clone())],
        &block.sizes,
        block.replicas,
        cfg.seed(),
        block.burn_in,
        block.update,
        "variance_scaling",
    )?;

    let (run, scaling) = run_global_variance_scaling(&exp).map_err(failed)?;
    let reports = run.reports().map_err(failed)?;
    let failure = block.slope_tolerance.and_then(|t| {
        let want = scaling.predicted_exponent;
        let got = scaling.versus_sites.slope;
        ((got - want).abs() > t * want).then(|| format!("slope {got} is not within {t} of {want}"))
    });
    let mut body = Vec::new();
    run.write_csv(0, &mut body).map_err(failed)?;
    Ok(Outcome {
        artifacts: vec![
            header.json("variance_scaling.json", &ScalingResult { scaling, reports })?,
            header.csv("variance_scaling.csv", body)?,
        ],
        failure,
    })
}
