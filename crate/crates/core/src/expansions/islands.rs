//! Strong-field representation: sums over the set `Λ⁻` of minus sites under
//! the `+` boundary condition.
//!
//! `wt(Λ⁻) = exp(-2β|δ_eΛ⁻| - 2h|Λ⁻|)`, with `δ_eΛ⁻` the edges of `𝓔^b_Λ`
//! with exactly one endpoint in `Λ⁻`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{Adjacency, LatticeBox, Site};
use crate::scalar::{LogSumExp, Real};

/// Default limit on box size.
pub const DEFAULT_ISLAND_CAP: usize = 25;

const CHUNK_BITS: usize = 8;

/// Sum of signed terms kept as two log-domain accumulators.
#[derive(Debug, Clone, Copy)]
pub struct SignedLogSum<T> {
    pub positive: LogSumExp<T>,
    pub negative: LogSumExp<T>,
}

impl<T: Real> SignedLogSum<T> {
    fn new() -> Self {
        Self {
            positive: LogSumExp::new(),
            negative: LogSumExp::new(),
        }
    }

    fn push(&mut self, negative: bool, log_term: T) {
        if negative {
            self.negative.push(log_term);
        } else {
            self.positive.push(log_term);
        }
    }

    fn merge(&mut self, other: &Self) {
        self.positive.merge(&other.positive);
        self.negative.merge(&other.negative);
    }

    /// `Σ_+ - Σ_-` divided by `e^{scale}`.
    pub fn value_scaled(&self, scale: T) -> T {
        (self.positive.ln() - scale).exp() - (self.negative.ln() - scale).exp()
    }

    /// Log of the sum of absolute values.
    pub fn ln_abs_total(&self) -> T {
        let mut all = self.positive;
        all.merge(&self.negative);
        all.ln()
    }
}

/// Which sum over `Λ⁻` to evaluate.
#[derive(Debug, Clone, Default)]
pub struct IslandQuery<T> {
    /// Sites `A` contributing `(-1)^{|A ∩ Λ⁻|}`.
    pub signed: Vec<Site>,
    /// Sites and parameters contributing `Π_{i∈Λ⁻} e^{-2 t_i}`.
    pub generating: Vec<(Site, T)>,
}

fn index(region: &LatticeBox, s: &Site) -> Result<usize> {
    region
        .index_of(s)
        .ok_or_else(|| Error::SiteOutsideBox(s.to_vec()))
}

/// Σ over `Λ⁻ ⊆ Λ` of `wt(Λ⁻)` times the factors requested by `query`.
pub fn island_sum<T: Real>(
    region: &LatticeBox,
    beta: T,
    h: T,
    query: &IslandQuery<T>,
) -> Result<SignedLogSum<T>> {
    let n = region.len();
    if n > DEFAULT_ISLAND_CAP {
        return Err(Error::CapExceeded {
            what: "minus-island enumeration box",
            size: n,
            cap: DEFAULT_ISLAND_CAP,
        });
    }
    let adj: Adjacency = region.adjacency();
    let mut sign_mask = 0u64;
    for s in &query.signed {
        sign_mask ^= 1 << index(region, s)?;
    }
    let mut tilt = vec![T::zero(); n];
    for (s, t) in &query.generating {
        let i = index(region, s)?;
        tilt[i] = tilt[i] - T::of(2.0) * *t;
    }
    let two_beta = T::of(2.0) * beta;
    let two_h = T::of(2.0) * h;

    let high = n.min(CHUNK_BITS);
    let low = n - high;
    let parts: Vec<SignedLogSum<T>> = (0..1u64 << high)
        .into_par_iter()
        .map(|chunk| {
            let mut acc = SignedLogSum::new();
            let mut set = chunk << low;
            let member = |set: u64, i: usize| set >> i & 1 == 1;
            // |δ_e Λ⁻|: crossing edges of members plus cut interior edges.
            let mut boundary: i64 = (0..n)
                .filter(|&i| member(set, i))
                .map(|i| i64::from(adj.outside[i]))
                .sum::<i64>()
                + adj
                    .edges
                    .iter()
                    .filter(|&&(a, b)| member(set, a) != member(set, b))
                    .count() as i64;
            let mut size = i64::from(set.count_ones());
            let mut tilted = (0..n)
                .filter(|&i| member(set, i))
                .fold(T::zero(), |a, i| a + tilt[i]);
            let mut emit = |set: u64, boundary: i64, size: i64, tilted: T| {
                let log_w =
                    -two_beta * T::of(boundary as f64) - two_h * T::of(size as f64) + tilted;
                acc.push((set & sign_mask).count_ones() % 2 == 1, log_w);
            };
            emit(set, boundary, size, tilted);
            for g in 1..(1u64 << low) {
                let i = g.trailing_zeros() as usize;
                let joining = !member(set, i);
                let in_set_neighbours =
                    adj.inside[i].iter().filter(|&&j| member(set, j)).count() as i64;
                let others =
                    adj.inside[i].len() as i64 - in_set_neighbours + i64::from(adj.outside[i]);
                // Joining cuts edges to non-members and heals edges to members.
                let delta = others - in_set_neighbours;
                if joining {
                    boundary += delta;
                    size += 1;
                    tilted = tilted + tilt[i];
                } else {
                    boundary -= delta;
                    size -= 1;
                    tilted = tilted - tilt[i];
                }
                set ^= 1 << i;
                emit(set, boundary, size, tilted);
            }
            acc
        })
        .collect();
    let mut total = SignedLogSum::new();
    for p in &parts {
        total.merge(p);
    }
    Ok(total)
}

/// `Σ_{Λ⁻⊆Λ} wt(Λ⁻)`.
pub fn minus_island_sum<T: Real>(region: &LatticeBox, beta: T, h: T) -> Result<T> {
    Ok(island_sum(region, beta, h, &IslandQuery::default())?
        .positive
        .ln()
        .exp())
}

/// `ln Z⁺ = β|𝓔^b_Λ| + h|Λ| + ln Σ_{Λ⁻} wt(Λ⁻)`.
pub fn ln_partition_from_islands<T: Real>(region: &LatticeBox, beta: T, h: T) -> Result<T> {
    let s = island_sum(region, beta, h, &IslandQuery::default())?;
    Ok(prefactor(region, beta, h) + s.positive.ln())
}

/// `⟨σ_A⟩⁺ = Σ (-1)^{|A∩Λ⁻|} wt(Λ⁻) / Σ wt(Λ⁻)`.
pub fn sigma_a_from_islands<T: Real>(region: &LatticeBox, beta: T, h: T, a: &[Site]) -> Result<T> {
    let signed = island_sum(
        region,
        beta,
        h,
        &IslandQuery {
            signed: a.to_vec(),
            generating: Vec::new(),
        },
    )?;
    // The signed split partitions the plain sum: ratio = (P - N) / (P + N).
    Ok(signed.value_scaled(signed.ln_abs_total()))
}

/// `Σ_{Λ⁻} (-1)^{|A∩Λ⁻|} wt(Λ⁻)`.
pub fn signed_minus_island_sum<T: Real>(
    region: &LatticeBox,
    beta: T,
    h: T,
    a: &[Site],
) -> Result<T> {
    let signed = island_sum(
        region,
        beta,
        h,
        &IslandQuery {
            signed: a.to_vec(),
            generating: Vec::new(),
        },
    )?;
    Ok(signed.value_scaled(T::zero()))
}

/// `ln Σ_ω exp(Σ_i t_i σ_i) e^{-H(ω)}` via
/// `exp(β|𝓔^b_Λ| + h|Λ| + Σ t_i) Σ_{Λ⁻} wt(Λ⁻) Π_{i∈Λ⁻∩A} e^{-2t_i}`.
pub fn ln_generating_from_islands<T: Real>(
    region: &LatticeBox,
    beta: T,
    h: T,
    marked: &[(Site, T)],
) -> Result<T> {
    let s = island_sum(
        region,
        beta,
        h,
        &IslandQuery {
            signed: Vec::new(),
            generating: marked.to_vec(),
        },
    )?;
    let shift = marked.iter().fold(T::zero(), |a, (_, t)| a + *t);
    Ok(prefactor(region, beta, h) + shift + s.positive.ln())
}

fn prefactor<T: Real>(region: &LatticeBox, beta: T, h: T) -> T {
    let adj = region.adjacency();
    let n_boundary = adj.edges.len() + adj.crossing_count();
    beta * T::of_usize(n_boundary) + h * T::of_usize(region.len())
}
