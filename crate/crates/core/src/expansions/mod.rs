//! The three combinatorial representations of Ising quantities: even
//! subgraphs (high temperature, `h = 0`, free boundary), contours (low
//! temperature, `h = 0`, `+` boundary) and minus islands (strong field, `+`
//! boundary). Each is evaluated by brute-force enumeration and compared with
//! [`ExactSystem`](crate::gibbs::ExactSystem).

pub mod contours;
pub mod high_temperature;
pub mod islands;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gibbs::{BoundaryCondition, ExactSystem, IsingParams};
use crate::lattice::{LatticeBox, Site};

pub use contours::{extract_contours, Contour, ContourGeometry, Face};
pub use high_temperature::{even_subgraph_sum, EvenSubgraphTerm};
pub use islands::{minus_island_sum, IslandQuery, SignedLogSum};

/// Default pass threshold for `verify-expansions`.
pub const DEFAULT_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    HighTemperature,
    Contours,
    MinusIslands,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    /// `Z`, or `Z⁺` for the `+` boundary.
    PartitionFunction,
    /// `Σ_ω exp(Σ_j t_j σ_j) e^{-H(ω)}`.
    GeneratingSum,
    /// `⟨σ_A⟩`.
    SpinProduct,
}

/// Relative error for partition-type sums, absolute for expectations (which
/// may vanish).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMetric {
    Relative,
    Absolute,
}

/// One row of the verification table: `lhs` from the representation, `rhs`
/// from direct enumeration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub representation: Representation,
    pub quantity: Quantity,
    #[serde(rename = "box")]
    pub region: LatticeBox,
    pub beta: f64,
    pub h: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub marked: Vec<Site>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub t: Vec<f64>,
    pub lhs: f64,
    pub rhs: f64,
    pub error: f64,
    pub metric: ErrorMetric,
}

impl IdentityCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.error.is_finite() && self.error <= tolerance
    }
}

/// Parameter grid for [`run_suite`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpansionSuite {
    /// Box shapes; each box has its lower corner at the origin.
    pub shapes: Vec<Vec<usize>>,
    pub betas: Vec<f64>,
    /// Fields; the high-temperature and contour checks use only `h = 0`.
    pub fields: Vec<f64>,
    /// Multiplies every representation-side partition sum by `1 + perturb`.
    #[serde(default)]
    pub perturb: f64,
}

impl Default for ExpansionSuite {
    /// Every box up to 3×3 on the grid β ∈ {0, 0.2, 0.5, 1.2}, h ∈ {0, 0.5, 1.5}.
    fn default() -> Self {
        let mut shapes = Vec::new();
        for a in 1..=3 {
            for b in 1..=3 {
                shapes.push(vec![a, b]);
            }
        }
        Self {
            shapes,
            betas: vec![0.0, 0.2, 0.5, 1.2],
            fields: vec![0.0, 0.5, 1.5],
            perturb: 0.0,
        }
    }
}

fn relative(ln_lhs: f64, ln_rhs: f64) -> f64 {
    (ln_lhs - ln_rhs).exp_m1().abs()
}

struct Row<'a> {
    representation: Representation,
    region: &'a LatticeBox,
    beta: f64,
    h: f64,
}

impl Row<'_> {
    fn partition(
        &self,
        quantity: Quantity,
        marked: &[Site],
        t: &[f64],
        ln_lhs: f64,
        ln_rhs: f64,
    ) -> IdentityCheck {
        IdentityCheck {
            representation: self.representation,
            quantity,
            region: self.region.clone(),
            beta: self.beta,
            h: self.h,
            marked: marked.to_vec(),
            t: t.to_vec(),
            lhs: ln_lhs.exp(),
            rhs: ln_rhs.exp(),
            error: relative(ln_lhs, ln_rhs),
            metric: ErrorMetric::Relative,
        }
    }

    fn expectation(&self, marked: &[Site], lhs: f64, rhs: f64) -> IdentityCheck {
        IdentityCheck {
            representation: self.representation,
            quantity: Quantity::SpinProduct,
            region: self.region.clone(),
            beta: self.beta,
            h: self.h,
            marked: marked.to_vec(),
            t: Vec::new(),
            lhs,
            rhs,
            error: (lhs - rhs).abs(),
            metric: ErrorMetric::Absolute,
        }
    }
}

/// Up to two marked sites: the first and last site of the box.
fn probe_sites(region: &LatticeBox) -> Vec<Site> {
    let mut out = vec![region.site(0)];
    if region.len() > 1 {
        out.push(region.site(region.len() - 1));
    }
    out
}

fn probe_fields(n: usize) -> Vec<f64> {
    [0.3, -0.45][..n].to_vec()
}

fn exact(
    region: &LatticeBox,
    beta: f64,
    h: f64,
    bc: BoundaryCondition,
) -> Result<ExactSystem<f64>> {
    ExactSystem::new(region.clone(), IsingParams::new(region.dim(), beta, h, bc)?)
}

/// High-temperature identity at `h = 0` with free boundary: `Z` and the
/// generating sum with two marked sites.
pub fn check_high_temperature(
    region: &LatticeBox,
    beta: f64,
    perturb: f64,
) -> Result<Vec<IdentityCheck>> {
    let sys = exact(region, beta, 0.0, BoundaryCondition::Free)?;
    let row = Row {
        representation: Representation::HighTemperature,
        region,
        beta,
        h: 0.0,
    };
    let shift = perturb.ln_1p();
    let lhs = high_temperature::ln_partition_from_even_subgraphs(region, &[], beta, &[])? + shift;
    let mut out = vec![row.partition(
        Quantity::PartitionFunction,
        &[],
        &[],
        lhs,
        sys.ln_partition_function(),
    )];
    let marked = probe_sites(region);
    let t = probe_fields(marked.len());
    let lhs =
        high_temperature::ln_partition_from_even_subgraphs(region, &marked, beta, &t)? + shift;
    let rhs = sys.ln_generating_sum(&marked, &t)?;
    out.push(row.partition(Quantity::GeneratingSum, &marked, &t, lhs, rhs));
    Ok(out)
}

/// Contour identity at `h = 0` with `+` boundary: `Z⁺` and `⟨σ_A⟩⁺`.
pub fn check_contours(region: &LatticeBox, beta: f64, perturb: f64) -> Result<Vec<IdentityCheck>> {
    let sys = exact(region, beta, 0.0, BoundaryCondition::Plus)?;
    let row = Row {
        representation: Representation::Contours,
        region,
        beta,
        h: 0.0,
    };
    let lhs = contours::ln_partition_from_contours(region, beta)? + perturb.ln_1p();
    let mut out = vec![row.partition(
        Quantity::PartitionFunction,
        &[],
        &[],
        lhs,
        sys.ln_partition_function(),
    )];
    let a = probe_sites(region);
    let lhs = contours::sigma_a_contour_ratio(region, beta, &a)?;
    out.push(row.expectation(&a, lhs, sys.spin_product_expectation(&a)?));
    Ok(out)
}

/// Strong-field identity with `+` boundary: `Z⁺`, `⟨σ_A⟩⁺` and the
/// generating sum.
pub fn check_minus_islands(
    region: &LatticeBox,
    beta: f64,
    h: f64,
    perturb: f64,
) -> Result<Vec<IdentityCheck>> {
    let sys = exact(region, beta, h, BoundaryCondition::Plus)?;
    let row = Row {
        representation: Representation::MinusIslands,
        region,
        beta,
        h,
    };
    let shift = perturb.ln_1p();
    let lhs = islands::ln_partition_from_islands(region, beta, h)? + shift;
    let mut out = vec![row.partition(
        Quantity::PartitionFunction,
        &[],
        &[],
        lhs,
        sys.ln_partition_function(),
    )];
    let a = probe_sites(region);
    let lhs = islands::sigma_a_from_islands(region, beta, h, &a)?;
    out.push(row.expectation(&a, lhs, sys.spin_product_expectation(&a)?));
    let t = probe_fields(a.len());
    let marked: Vec<(Site, f64)> = a.iter().cloned().zip(t.iter().copied()).collect();
    let lhs = islands::ln_generating_from_islands(region, beta, h, &marked)? + shift;
    let rhs = sys.ln_generating_sum(&a, &t)?;
    out.push(row.partition(Quantity::GeneratingSum, &a, &t, lhs, rhs));
    Ok(out)
}

/// All three representations over the suite's grid.
pub fn run_suite(suite: &ExpansionSuite) -> Result<Vec<IdentityCheck>> {
    let mut out = Vec::new();
    for shape in &suite.shapes {
        let region = LatticeBox::with_shape(shape)?;
        for &beta in &suite.betas {
            for &h in &suite.fields {
                if h == 0.0 {
                    out.extend(check_high_temperature(&region, beta, suite.perturb)?);
                    out.extend(check_contours(&region, beta, suite.perturb)?);
                }
                out.extend(check_minus_islands(&region, beta, h, suite.perturb)?);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes() {
        let rows = run_suite(&ExpansionSuite::default()).unwrap();
        assert_eq!(rows.len(), 9 * 4 * (2 + 2 + 3 * 3));
        for r in &rows {
            assert!(r.passes(1e-10), "{r:?}");
        }
    }

    #[test]
    fn perturbation_is_detected() {
        let suite = ExpansionSuite {
            shapes: vec![vec![2, 2]],
            betas: vec![0.2],
            fields: vec![0.0],
            perturb: 1e-6,
        };
        let rows = run_suite(&suite).unwrap();
        assert!(rows
            .iter()
            .filter(|r| r.metric == ErrorMetric::Relative)
            .all(|r| !r.passes(DEFAULT_TOLERANCE)));
    }

    #[test]
    fn infinite_temperature_counts() {
        let region = LatticeBox::with_shape(&[3, 3]).unwrap();
        let rows = check_high_temperature(&region, 0.0, 0.0).unwrap();
        assert!((rows[0].lhs - 512.0).abs() < 1e-9);
    }

    #[test]
    fn report_rows_serialize() {
        let region = LatticeBox::with_shape(&[1, 2]).unwrap();
        let rows = check_minus_islands(&region, 0.5, 0.5, 0.0).unwrap();
        let json = serde_json::to_value(&rows[1]).unwrap();
        assert_eq!(json["representation"], "minus_islands");
        assert_eq!(json["quantity"], "spin_product");
        assert_eq!(json["metric"], "absolute");
        assert!(json["box"]["lo"].is_array());
    }
}
