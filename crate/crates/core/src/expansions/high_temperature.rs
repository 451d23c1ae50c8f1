//! Even-subgraph (high-temperature) representation at zero field.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{LatticeBox, Site};
use crate::scalar::Real;

/// Default limit on `|𝓔_Λ|` for edge-subset enumeration.
pub const DEFAULT_EDGE_CAP: usize = 24;

const CHUNK_BITS: usize = 6;

/// One pair `(E, B)`: an edge subset and the marked sites of odd degree.
#[derive(Debug, Clone, PartialEq)]
pub struct EvenSubgraphTerm<T> {
    pub edges: Vec<(usize, usize)>,
    /// Bitmask over site indices.
    pub odd: u64,
    pub weight: T,
}

impl<T> EvenSubgraphTerm<T> {
    /// Re-derives the odd-degree set from the edge list.
    pub fn degree_parity_holds(&self, marked: u64) -> bool {
        let mut odd = 0u64;
        for &(a, b) in &self.edges {
            odd ^= 1 << a;
            odd ^= 1 << b;
        }
        odd == self.odd && odd & !marked == 0
    }
}

struct Setup<T> {
    edges: Vec<(usize, usize)>,
    marked: u64,
    tanh_beta: T,
    /// `tanh t_j` by site index, for marked sites.
    tanh_t: Vec<T>,
}

fn setup<T: Real>(
    region: &LatticeBox,
    marked: &[Site],
    beta: T,
    t: &[T],
    cap: usize,
) -> Result<Setup<T>> {
    if marked.len() != t.len() {
        return Err(Error::Malformed("one parameter t per marked site".into()));
    }
    if region.len() > 64 {
        return Err(Error::CapExceeded {
            what: "sites for parity masks",
            size: region.len(),
            cap: 64,
        });
    }
    let edges = region.adjacency().edges;
    if edges.len() > cap {
        return Err(Error::CapExceeded {
            what: "interior edges",
            size: edges.len(),
            cap,
        });
    }
    let mut tanh_t = vec![T::zero(); region.len()];
    let mut mask = 0u64;
    for (s, &tj) in marked.iter().zip(t) {
        let i = region
            .index_of(s)
            .ok_or_else(|| Error::SiteOutsideBox(s.to_vec()))?;
        if mask >> i & 1 == 1 {
            return Err(Error::Malformed("marked sites must be distinct".into()));
        }
        mask |= 1 << i;
        tanh_t[i] = tj.tanh();
    }
    Ok(Setup {
        edges,
        marked: mask,
        tanh_beta: beta.tanh(),
        tanh_t,
    })
}

impl<T: Real> Setup<T> {
    fn term_weight(&self, n_edges: u32, odd: u64) -> Option<T> {
        if odd & !self.marked != 0 {
            return None;
        }
        let mut w = self.tanh_beta.powi(n_edges as i32);
        let mut rest = odd;
        while rest != 0 {
            let i = rest.trailing_zeros() as usize;
            w = w * self.tanh_t[i];
            rest &= rest - 1;
        }
        Some(w)
    }
}

/// `Ξ^A = Σ_{(E,B)} (tanh β)^{|E|} Π_{j∈B} tanh t_j` over edge subsets `E`
/// whose odd-degree sites `B` are all marked.
pub fn even_subgraph_sum<T: Real>(
    region: &LatticeBox,
    marked: &[Site],
    beta: T,
    t: &[T],
) -> Result<T> {
    even_subgraph_sum_with_cap(region, marked, beta, t, DEFAULT_EDGE_CAP)
}

pub fn even_subgraph_sum_with_cap<T: Real>(
    region: &LatticeBox,
    marked: &[Site],
    beta: T,
    t: &[T],
    cap: usize,
) -> Result<T> {
    let s = setup(region, marked, beta, t, cap)?;
    let m = s.edges.len();
    let high = m.min(CHUNK_BITS);
    let low = m - high;
    let edge_mask: Vec<u64> = s
        .edges
        .iter()
        .map(|&(a, b)| (1u64 << a) | (1u64 << b))
        .collect();
    let parts: Vec<T> = (0..1u64 << high)
        .into_par_iter()
        .map(|chunk| {
            let mut subset = chunk << low;
            let mut odd = 0u64;
            for (e, mask) in edge_mask.iter().enumerate() {
                if subset >> e & 1 == 1 {
                    odd ^= mask;
                }
            }
            let mut acc = T::zero();
            let mut visit = |subset: u64, odd: u64| {
                if let Some(w) = s.term_weight(subset.count_ones(), odd) {
                    acc = acc + w;
                }
            };
            visit(subset, odd);
            for g in 1..(1u64 << low) {
                let e = g.trailing_zeros() as usize;
                subset ^= 1 << e;
                odd ^= edge_mask[e];
                visit(subset, odd);
            }
            acc
        })
        .collect();
    Ok(parts.into_iter().fold(T::zero(), |a, b| a + b))
}

/// Every term of `Ξ^A`, listed explicitly (small boxes only).
pub fn even_subgraph_terms<T: Real>(
    region: &LatticeBox,
    marked: &[Site],
    beta: T,
    t: &[T],
) -> Result<Vec<EvenSubgraphTerm<T>>> {
    let s = setup(region, marked, beta, t, 16)?;
    let mut out = Vec::new();
    for subset in 0u64..(1 << s.edges.len()) {
        let edges: Vec<(usize, usize)> = (0..s.edges.len())
            .filter(|e| subset >> e & 1 == 1)
            .map(|e| s.edges[e])
            .collect();
        let odd = edges
            .iter()
            .fold(0u64, |o, &(a, b)| o ^ (1 << a) ^ (1 << b));
        if let Some(weight) = s.term_weight(edges.len() as u32, odd) {
            out.push(EvenSubgraphTerm { edges, odd, weight });
        }
    }
    Ok(out)
}

/// `ln Z^A = |Λ| ln 2 + |𝓔_Λ| ln cosh β + Σ_j ln cosh t_j + ln Ξ^A`.
pub fn ln_partition_from_even_subgraphs<T: Real>(
    region: &LatticeBox,
    marked: &[Site],
    beta: T,
    t: &[T],
) -> Result<T> {
    let xi = even_subgraph_sum(region, marked, beta, t)?;
    let n_edges = region.adjacency().edges.len();
    let prefactor = T::of_usize(region.len()) * T::LN_2()
        + T::of_usize(n_edges) * beta.cosh().ln()
        + t.iter().fold(T::zero(), |a, &tj| a + tj.cosh().ln());
    Ok(prefactor + xi.ln())
}
