//! End-to-end acceptance checks. Runs without the libtest harness and prints
//! one PASS/FAIL line per criterion. Set `IWDG_ACCEPTANCE_STRICT=1` to exit
//! nonzero when any fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use iwdg::clt::{
    check_criterion_conditions, degree_limit, magnetization_audit_points, run_clt_experiment,
    run_global_variance_scaling, variance_series_estimate, CltExperiment, CltRun, CovarianceSource,
    SamplingPlan, Statistic, VarianceSeries,
};
use iwdg::cumulants::{q_deviation, CumulantTable, Provenance};
use iwdg::expansions::{run_suite, ExpansionSuite};
use iwdg::gibbs::hamiltonian;
use iwdg::patterns::{GlobalPattern, LocalPattern};
use iwdg::sampler::{estimate_observable, run_chain, spin_product, ChainSpec, Coins, Dynamics};
use iwdg::stats::linear_fit;
use iwdg::treelen::{check_two_factor, mst_tree_length, steiner_tree_length, TerminalSet};
use iwdg::wdg::{check_wdg_inequality_over, fit_epsilon, max_weight_spanning_tree, IsingWdg};
use iwdg::{
    BoundaryCondition, ExactSystem, IsingParams, LatticeBox, Sign, Site, SpinConfiguration,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn params(beta: f64, h: f64, bc: BoundaryCondition) -> IsingParams {
    IsingParams::new(2, beta, h, bc).unwrap()
}

fn exact(shape: &[usize], p: IsingParams) -> ExactSystem {
    ExactSystem::new(LatticeBox::with_shape(shape).unwrap(), p).unwrap()
}

fn steiner(sites: &[Site]) -> u64 {
    steiner_tree_length(&TerminalSet::new(sites.to_vec()).unwrap()).unwrap()
}

/// Index tuples `i_1 < … < i_r` (or `≤` with `repeat`) over `0..n`.
fn tuples(n: usize, r: usize, repeat: bool) -> Vec<Vec<usize>> {
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

const REGIMES: [(f64, BoundaryCondition); 2] = [
    (0.2, BoundaryCondition::Free),
    (1.2, BoundaryCondition::Plus),
];

// ---------------------------------------------------------------------------

fn representation_identities() -> Outcome {
    let start = Instant::now();
    let rows = run_suite(&ExpansionSuite::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let worst = rows.iter().map(|r| r.error).fold(0.0, f64::max);
    let ok = rows.iter().all(|r| r.passes(1e-10));
    outcome(
        ok && secs < 30.0,
        format!(
            "{} identities, max error {worst:.2e}, {secs:.1}s",
            rows.len()
        ),
    )
}

/// `κ(σ_A)` for every set `|A| ≤ 4` of a box, keyed by the sorted sites.
fn set_cumulants(sys: &ExactSystem) -> Vec<(Vec<Site>, f64)> {
    let tables = sys.moment_tables().unwrap();
    let region = sys.region();
    let mut out = Vec::new();
    for r in 1..=4 {
        for idx in tuples(region.len(), r, false) {
            let sites = idx.iter().map(|&i| region.site(i)).collect();
            out.push((sites, tables.spin_cumulant(&idx).unwrap()));
        }
    }
    out
}

fn pair_epsilon(cumulants: &[(Vec<Site>, f64)]) -> f64 {
    let pairs: Vec<(u64, f64)> = cumulants
        .iter()
        .filter(|(a, _)| a.len() == 2)
        .map(|(a, k)| (iwdg::lattice::l1_distance(&a[0], &a[1]).unwrap(), *k))
        .collect();
    fit_epsilon(&pairs).unwrap()
}

/// `D_r = max_{|A| = r} |κ(A)| / ε^{ℓ_T(A)}`. With `odd_vanish` the odd
/// orders, zero by spin-flip symmetry, are left at zero.
fn decay_constants(cumulants: &[(Vec<Site>, f64)], eps: f64, odd_vanish: bool) -> [f64; 4] {
    let mut d = [0.0f64; 4];
    for (a, k) in cumulants {
        if odd_vanish && a.len() % 2 == 1 {
            continue;
        }
        let bound = eps.powf(steiner(a) as f64);
        d[a.len() - 1] = d[a.len() - 1].max(k.abs() / bound);
    }
    d
}

/// Relative growth allowed for `D_r` when the box grows from 4×4 to 5×4.
const GROWTH_TOLERANCE: f64 = 0.05;

fn cumulant_decay() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for (beta, bc) in REGIMES {
        let p = params(beta, 0.0, bc);
        let small = set_cumulants(&exact(&[4, 4], p));
        let large = set_cumulants(&exact(&[5, 4], p));
        let eps = pair_epsilon(&small);
        let symmetric = bc == BoundaryCondition::Free;
        let d4 = decay_constants(&small, eps, symmetric);
        let d5 = decay_constants(&large, eps, symmetric);
        let growth: Vec<f64> = d4
            .iter()
            .zip(&d5)
            .map(|(a, b)| if *a == 0.0 { 1.0 } else { b / a })
            .collect();
        ok &= d4.iter().chain(&d5).all(|x| x.is_finite());
        ok &= growth.iter().all(|g| *g <= 1.0 + GROWTH_TOLERANCE);
        detail.push(format!(
            "β={beta} ε={eps:.3e} D_r(4x4)={:?} growth={:?}",
            d4.map(|x| format!("{x:.3e}")),
            growth.iter().map(|g| format!("{g:.3}")).collect::<Vec<_>>()
        ));
    }
    outcome(ok, detail.join("; "))
}

fn wdg_inequality() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for (beta, bc) in REGIMES {
        let sys = exact(&[4, 4], params(beta, 0.0, bc));
        let eps = pair_epsilon(&set_cumulants(&sys));
        let g = IsingWdg::new(eps, 2).unwrap();
        let tables = sys.moment_tables().unwrap();
        let region = sys.region();
        let mut table = CumulantTable::new(Provenance::Exact);
        let mut multisets = Vec::new();
        let mut worst_mismatch = 0.0f64;
        for r in 1..=4 {
            for idx in tuples(region.len(), r, true) {
                let b: Vec<Site> = idx.iter().map(|&i| region.site(i)).collect();
                table
                    .insert_exact(&b, tables.spin_cumulant(&idx).unwrap())
                    .unwrap();
                let mwst = max_weight_spanning_tree(&g, &b).weight;
                let support = mst_tree_length(&TerminalSet::new(b.clone()).unwrap());
                let want = eps.powf(support as f64 / 2.0);
                worst_mismatch = worst_mismatch.max((mwst - want).abs() / want);
                multisets.push(b);
            }
        }
        let report = check_wdg_inequality_over(&table, &g, &multisets).unwrap();
        ok &= report.all_finite() && worst_mismatch <= 1e-12;
        let c: Vec<String> = report
            .orders
            .iter()
            .map(|o| format!("{:.3e}", o.c_r))
            .collect();
        detail.push(format!(
            "β={beta} {} multisets C_r={c:?} MWST mismatch {worst_mismatch:.1e}",
            multisets.len()
        ));
    }
    outcome(ok, detail.join("; "))
}

fn tree_length_sandwich() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut failures = 0;
    for _ in 0..1000 {
        let k = rng.random_range(1..=5);
        let mut pts = Vec::new();
        while pts.len() < k {
            let s = Site::from([rng.random_range(-6..=6), rng.random_range(-6..=6)]);
            if !pts.contains(&s) {
                pts.push(s);
            }
        }
        if !check_two_factor(&TerminalSet::new(pts).unwrap())
            .unwrap()
            .ok
        {
            failures += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        failures == 0 && secs < 60.0,
        format!("1000 sets, {failures} violations, {secs:.1}s"),
    )
}

/// Forces one proposal outcome and records the acceptance probability.
struct Forced {
    decision: bool,
    p: f64,
}

impl Coins for Forced {
    fn accept(&mut self, p: f64) -> bool {
        self.p = p.min(1.0);
        self.decision
    }

    fn choose(&mut self, _: usize) -> usize {
        unreachable!("single-flip updates make no uniform choices")
    }
}

fn spins_of(region: &LatticeBox, state: usize, bc: BoundaryCondition) -> Vec<i8> {
    SpinConfiguration::from_state(region.clone(), state as u64, bc)
        .spins()
        .to_vec()
}

fn state_of(spins: &[i8]) -> usize {
    spins
        .iter()
        .enumerate()
        .filter(|(_, &s)| s < 0)
        .map(|(i, _)| 1 << i)
        .sum()
}

fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum())
                .collect()
        })
        .collect()
}

/// Solves `π P = π`, `Σ π = 1` by Gaussian elimination with partial pivoting.
fn stationary(p: &[Vec<f64>]) -> Vec<f64> {
    let n = p.len();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n)
                .map(|j| p[j][i] - if i == j { 1.0 } else { 0.0 })
                .collect();
            row.push(0.0);
            row
        })
        .collect();
    m[n - 1] = vec![1.0; n + 1];
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap();
        m.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..=n {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    (0..n).map(|i| m[i][n] / m[i][i]).collect()
}

fn sweep_matrix_error(beta: f64, h: f64, bc: BoundaryCondition) -> f64 {
    let region = LatticeBox::with_shape(&[2, 2]).unwrap();
    let p = params(beta, h, bc);
    let dynamics = Dynamics::new(&region, &p);
    let n_states = 1 << region.len();
    let mut sweep: Option<Vec<Vec<f64>>> = None;
    for i in 0..region.len() {
        let mut k = vec![vec![0.0; n_states]; n_states];
        for (s, row) in k.iter_mut().enumerate() {
            let mut spins = spins_of(&region, s, bc);
            let mut coins = Forced {
                decision: true,
                p: 0.0,
            };
            dynamics.metropolis_site(&mut spins, i, &mut coins);
            row[state_of(&spins)] += coins.p;
            row[s] += 1.0 - coins.p;
        }
        sweep = Some(match sweep {
            None => k,
            Some(acc) => mat_mul(&acc, &k),
        });
    }
    let pi = stationary(&sweep.unwrap());
    let weights: Vec<f64> = (0..n_states)
        .map(|s| {
            let cfg = SpinConfiguration::from_state(region.clone(), s as u64, bc);
            (-hamiltonian(&cfg, &p).unwrap()).exp()
        })
        .collect();
    let z: f64 = weights.iter().sum();
    let enumerated = ExactSystem::new(region.clone(), p)
        .unwrap()
        .probabilities()
        .unwrap();
    (0..n_states)
        .map(|s| {
            (pi[s] - weights[s] / z)
                .abs()
                .max((enumerated[s] - weights[s] / z).abs())
        })
        .fold(0.0, f64::max)
}

fn sampler_correctness() -> Outcome {
    let worst = [
        (0.4, 0.3, BoundaryCondition::Free),
        (0.4, 0.3, BoundaryCondition::Plus),
        (1.2, 0.0, BoundaryCondition::Plus),
        (0.2, 0.0, BoundaryCondition::Free),
    ]
    .into_iter()
    .map(|(b, h, bc)| sweep_matrix_error(b, h, bc))
    .fold(0.0, f64::max);

    let p = params(0.2, 0.0, BoundaryCondition::Free);
    let region = LatticeBox::with_shape(&[3, 3]).unwrap();
    let a = [region.site(0), region.site(1)];
    let want = ExactSystem::new(region.clone(), p)
        .unwrap()
        .spin_product_expectation(&a)
        .unwrap();
    let f = spin_product(&region, &a).unwrap();
    let covered = (0..100u64)
        .filter(|&rep| {
            let mut spec = ChainSpec::new(p, region.clone(), 2024, 4000);
            spec.stream = rep;
            spec.burn_in = 500;
            spec.thinning = 1;
            let (mean, se) = estimate_observable(&run_chain(&spec).unwrap(), &f).unwrap();
            (mean - want).abs() <= 3.0 * se
        })
        .count();
    outcome(
        worst <= 1e-10 && covered >= 95,
        format!("stationary vs Gibbs max error {worst:.1e}; {covered}/100 runs within 3 SE"),
    )
}

// ---------------------------------------------------------------------------

const CLT_REPLICAS: usize = 8000;

fn clt_run() -> &'static CltRun {
    static RUN: OnceLock<CltRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let mut exp = CltExperiment::new(
            params(0.2, 0.0, BoundaryCondition::Free),
            vec![
                Statistic::Magnetization,
                Statistic::Local(LocalPattern::isolated_plus(2)),
            ],
            vec![8, 16, 32],
            CLT_REPLICAS,
            61,
        );
        exp.burn_in = 150;
        run_clt_experiment(&exp).unwrap()
    })
}

fn magnetization_series() -> &'static VarianceSeries {
    static SERIES: OnceLock<VarianceSeries> = OnceLock::new();
    SERIES.get_or_init(|| {
        let source = CovarianceSource::Sampled(SamplingPlan::new(62, 4000));
        variance_series_estimate(
            &params(0.2, 0.0, BoundaryCondition::Free),
            &Statistic::Magnetization,
            12,
            &source,
        )
        .unwrap()
    })
}

fn magnetization_clt() -> Outcome {
    let reports = clt_run().reports().unwrap();
    let row = reports[0].largest();
    let series = magnetization_series();
    let rel = (row.normalized_variance - series.value).abs() / series.value;
    outcome(
        row.meets_thresholds() && rel <= 0.1,
        format!(
            "n={} skew {:.3} kurt {:.3} KS p {:.3}; Var/|Λ| {:.4} vs series {:.4}±{:.4} ({:.1}%)",
            row.n,
            row.skewness,
            row.excess_kurtosis,
            row.ks_p_value,
            row.normalized_variance,
            series.value,
            series.std_error,
            100.0 * rel
        ),
    )
}

fn local_pattern_clt() -> Outcome {
    let reports = clt_run().reports().unwrap();
    let row = reports[1].largest();
    let skews: Vec<String> = reports[1]
        .rows
        .iter()
        .map(|r| format!("{}:{:.3}", r.n, r.skewness))
        .collect();
    outcome(
        row.meets_thresholds(),
        format!(
            "skew by n {skews:?}; n={} kurt {:.3} KS p {:.3} Var/|Λ| {:.4}",
            row.n, row.excess_kurtosis, row.ks_p_value, row.normalized_variance
        ),
    )
}

fn global_variance_scaling() -> Outcome {
    let mut exp = CltExperiment::new(
        params(0.2, 0.0, BoundaryCondition::Free),
        vec![Statistic::Global(GlobalPattern::chain(2, 2, Sign::Plus))],
        vec![8, 12, 16, 20],
        CLT_REPLICAS,
        81,
    );
    exp.burn_in = 150;
    let (run, scaling) = run_global_variance_scaling(&exp).unwrap();
    let report = run.reports().unwrap().remove(0);
    let row = report.largest().clone();
    let skews: Vec<String> = report
        .rows
        .iter()
        .map(|r| format!("{}:{:.3}", r.n, r.skewness))
        .collect();
    let slope = scaling.versus_sites.slope;
    outcome(
        (2.7..=3.3).contains(&slope) && row.meets_thresholds(),
        format!(
            "slope vs |Λ| {slope:.3}±{:.3} (vs n {:.3}); skew by n {skews:?}; n={} kurt {:.3} KS p {:.3}",
            scaling.versus_sites.slope_std_error, scaling.versus_radius.slope, row.n, row.excess_kurtosis, row.ks_p_value
        ),
    )
}

fn criterion_audit() -> Outcome {
    let Some(decay) = magnetization_series().decay else {
        return outcome(false, "no decay fit for the covariance series".into());
    };
    let g = IsingWdg::new(decay.epsilon, 2).unwrap();
    let points = magnetization_audit_points(clt_run(), 0, &g).unwrap();
    let audit = check_criterion_conditions(&points, 1.0, 3.0).unwrap();
    let limit = degree_limit(&g).unwrap();
    let ratios: Vec<String> = audit
        .rows
        .iter()
        .map(|r| format!("{:.4}", r.decay_ratio))
        .collect();
    outcome(
        audit.decay_ratio_decreasing && audit.max_delta <= limit,
        format!(
            "ε={:.3} decay ratios {ratios:?}; Δ_n ≤ {:.4} (limit {limit:.4})",
            decay.epsilon, audit.max_delta
        ),
    )
}

fn q_quantity_decay() -> Outcome {
    let sys = exact(&[4, 4], params(1.2, 0.0, BoundaryCondition::Plus));
    let tables = sys.moment_tables().unwrap();
    let region = sys.region();
    let mut envelope: BTreeMap<u64, f64> = BTreeMap::new();
    for r in 2..=3 {
        for idx in tuples(region.len(), r, false) {
            let a: Vec<Site> = idx.iter().map(|&i| region.site(i)).collect();
            let dev = q_deviation(r, |delta| {
                let mask = idx
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| delta >> k & 1 == 1)
                    .map(|(_, &i)| 1u64 << i)
                    .sum();
                tables.signed_deficit(mask)
            })
            .unwrap();
            let e = envelope.entry(steiner(&a)).or_insert(0.0);
            *e = e.max(dev.abs());
        }
    }
    let lengths: Vec<f64> = envelope.keys().map(|&l| l as f64).collect();
    let values: Vec<f64> = envelope.values().copied().collect();
    let monotone = values.windows(2).all(|w| w[1] <= w[0]);
    let fit = linear_fit(
        &lengths,
        &values.iter().map(|v| v.ln()).collect::<Vec<_>>(),
        0.95,
    )
    .unwrap();
    let shown: Vec<String> = envelope
        .iter()
        .map(|(l, v)| format!("{l}:{v:.2e}"))
        .collect();
    outcome(
        monotone && fit.slope < 0.0,
        format!("max|Q-1| by ℓ_T {shown:?}; log slope {:.3}", fit.slope),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("representation identities", representation_identities),
        ("cumulant decay constants", cumulant_decay),
        ("weighted dependency graph inequality", wdg_inequality),
        ("tree-length sandwich", tree_length_sandwich),
        ("sampler correctness", sampler_correctness),
        ("magnetization CLT", magnetization_clt),
        ("local-pattern CLT", local_pattern_clt),
        ("global-pattern variance scaling", global_variance_scaling),
        ("criterion audit", criterion_audit),
        ("Q-quantity decay", q_quantity_decay),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        failed += usize::from(!result.pass);
        println!(
            "criterion {:>2} {:<40} {} ({:.1}s) {}",
            k + 1,
            name,
            if result.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            result.detail
        );
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    // Report-only by default; IWDG_ACCEPTANCE_STRICT=1 turns any FAIL into a nonzero exit.
    if failed > 0 && std::env::var_os("IWDG_ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
        std::process::exit(1);
    }
}
