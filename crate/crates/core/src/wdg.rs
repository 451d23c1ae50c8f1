//! Weighted dependency graphs: weight functions, maximum-weight spanning
//! trees of induced multiset subgraphs, graph powers, weighted degrees and
//! the cumulant inequality checker.

use serde::{Deserialize, Serialize};

use crate::cumulants::CumulantTable;
use crate::error::{Error, Result};
use crate::gibbs::Sign;
use crate::lattice::{dist, Site};
use crate::scalar::Real;
use crate::stats;

/// A complete graph given by a symmetric weight function with values in
/// `[0, 1]`. Equal vertices are joined with weight exactly 1.
pub trait WeightedGraph<T: Real> {
    type Vertex: PartialEq;

    /// Weight between distinct vertices.
    fn edge_weight(&self, a: &Self::Vertex, b: &Self::Vertex) -> T;

    fn weight(&self, a: &Self::Vertex, b: &Self::Vertex) -> T {
        if a == b {
            T::one()
        } else {
            self.edge_weight(a, b)
        }
    }
}

/// Sites of `Z^d` with `w(i, j) = ε^{dist(i,j)/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsingWdg<T> {
    pub epsilon: T,
    pub dim: usize,
}

impl<T: Real> IsingWdg<T> {
    pub fn new(epsilon: T, dim: usize) -> Result<Self> {
        if !(epsilon > T::zero() && epsilon < T::one()) {
            return Err(Error::InvalidParameter {
                name: "epsilon",
                reason: format!("must lie in (0, 1), got {epsilon}"),
            });
        }
        if dim == 0 {
            return Err(Error::InvalidDimension(0));
        }
        Ok(Self { epsilon, dim })
    }

    /// `ε^{y/2}`.
    pub fn weight_at_distance(&self, y: u64) -> T {
        self.epsilon.powf(T::of(y as f64) / T::of(2.0))
    }
}

impl<T: Real> WeightedGraph<T> for IsingWdg<T> {
    type Vertex = Site;

    fn edge_weight(&self, a: &Site, b: &Site) -> T {
        self.weight_at_distance(dist(a, b))
    }
}

/// A site together with a sign, vertex of `Z^d × {+, -}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SignedSite {
    pub site: Site,
    pub sign: Sign,
}

/// Lifts a site graph to signed sites; the sign does not affect weights
/// except that `(i,+)` and `(i,-)` are distinct vertices at distance 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Signed<G>(pub G);

impl<T: Real, G: WeightedGraph<T, Vertex = Site>> WeightedGraph<T> for Signed<G> {
    type Vertex = SignedSite;

    fn edge_weight(&self, a: &SignedSite, b: &SignedSite) -> T {
        self.0.weight(&a.site, &b.site)
    }
}

/// `G^m`: vertices are multisets of at most `m` base vertices and
/// `w_m(I, J) = max_{i∈I, j∈J} w(i, j)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerGraph<G> {
    pub base: G,
    pub m: usize,
}

impl<G> PowerGraph<G> {
    pub fn new(base: G, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidParameter {
                name: "m",
                reason: "power must be >= 1".into(),
            });
        }
        Ok(Self { base, m })
    }
}

impl<T: Real, G: WeightedGraph<T>> WeightedGraph<T> for PowerGraph<G>
where
    G::Vertex: Clone,
{
    type Vertex = Vec<G::Vertex>;

    fn edge_weight(&self, a: &Self::Vertex, b: &Self::Vertex) -> T {
        let mut best = T::zero();
        for i in a {
            for j in b {
                let w = self.base.weight(i, j);
                if w > best {
                    best = w;
                }
            }
        }
        best
    }
}

/// An explicit weight matrix on `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixGraph<T> {
    weights: Vec<Vec<T>>,
}

impl<T: Real> MatrixGraph<T> {
    pub fn new(weights: Vec<Vec<T>>) -> Result<Self> {
        let n = weights.len();
        for (i, row) in weights.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Malformed("weight matrix must be square".into()));
            }
            for (j, &w) in row.iter().enumerate() {
                if !(w >= T::zero() && w <= T::one()) {
                    return Err(Error::Malformed(format!("weight {w} outside [0,1]")));
                }
                if w != weights[j][i] {
                    return Err(Error::Malformed("weight matrix must be symmetric".into()));
                }
            }
        }
        Ok(Self { weights })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

impl<T: Real> WeightedGraph<T> for MatrixGraph<T> {
    type Vertex = usize;

    fn edge_weight(&self, a: &usize, b: &usize) -> T {
        self.weights[*a][*b]
    }
}

/// A maximum-weight spanning tree of an induced subgraph; edges index into
/// the vertex list it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanningTree<T> {
    pub weight: T,
    pub edges: Vec<(usize, usize)>,
}

struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb)] = ra.min(rb);
        true
    }
}

/// `M(G[B])`: the largest product of edge weights over spanning trees of the
/// subgraph induced by the multiset `B` (Kruskal on `-log w`). A multiset
/// with no spanning tree of positive weight gives weight 0 and no edges.
pub fn max_weight_spanning_tree<T, G>(g: &G, b: &[G::Vertex]) -> SpanningTree<T>
where
    T: Real,
    G: WeightedGraph<T>,
{
    let n = b.len();
    let mut candidates: Vec<(T, usize, usize)> = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let w = g.weight(&b[i], &b[j]);
            if w > T::zero() {
                candidates.push((-w.ln(), i, j));
            }
        }
    }
    candidates.sort_by(|x, y| {
        x.0.partial_cmp(&y.0)
            .expect("weights are not NaN")
            .then((x.1, x.2).cmp(&(y.1, y.2)))
    });
    let mut sets = DisjointSets::new(n);
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut weight = T::one();
    for (_, i, j) in candidates {
        if sets.union(i, j) {
            weight = weight * g.weight(&b[i], &b[j]);
            edges.push((i, j));
            if edges.len() + 1 == n {
                break;
            }
        }
    }
    if n > 0 && edges.len() + 1 != n {
        return SpanningTree {
            weight: T::zero(),
            edges: Vec::new(),
        };
    }
    SpanningTree { weight, edges }
}

/// `Σ_{u ∈ restriction, u ≠ v} w(u, v)`.
pub fn weighted_degree<T, G>(g: &G, v: &G::Vertex, restriction: &[G::Vertex]) -> T
where
    T: Real,
    G: WeightedGraph<T>,
{
    restriction
        .iter()
        .filter(|u| *u != v)
        .fold(T::zero(), |acc, u| acc + g.weight(u, v))
}

/// Largest weighted degree within `vertices`.
pub fn max_weighted_degree<T, G>(g: &G, vertices: &[G::Vertex]) -> T
where
    T: Real,
    G: WeightedGraph<T>,
{
    vertices
        .iter()
        .map(|v| weighted_degree(g, v, vertices))
        .fold(T::zero(), |a, b| if b > a { b } else { a })
}

/// Decay rate from pair cumulants: `ε = exp(slope)` of the least-squares
/// line through `(y, log max|κ₂| at distance y)`, so that pair cumulants
/// behave like `ε^{dist}`.
pub fn fit_epsilon(pairs: &[(u64, f64)]) -> Result<f64> {
    let mut envelope: std::collections::BTreeMap<u64, f64> = std::collections::BTreeMap::new();
    for &(y, k) in pairs {
        if y == 0 || k == 0.0 || !k.is_finite() {
            continue;
        }
        let e = envelope.entry(y).or_insert(0.0);
        *e = e.max(k.abs());
    }
    let (x, logs): (Vec<f64>, Vec<f64>) =
        envelope.iter().map(|(&y, &k)| (y as f64, k.ln())).unzip();
    if x.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            have: x.len(),
        });
    }
    let w = vec![1.0; x.len()];
    let (slope, _) = stats::weighted_slope(&x, &logs, &w)?;
    let eps = slope.exp();
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::NonDecaying(slope));
    }
    Ok(eps)
}

/// Inequality audit for one order `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderReport {
    pub r: usize,
    pub tested: usize,
    /// Smallest `C_r` with `|κ(B)| ≤ C_r·M(G[B])` over tested `B`.
    pub c_r: f64,
    pub worst: Vec<Site>,
    pub worst_kappa: f64,
    pub worst_weight: f64,
    /// Counts of `|κ(B)| / (C_r M(G[B]))` in ten equal bins of `[0, 1]`.
    pub margin_histogram: [usize; 10],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WdgReport {
    pub epsilon: f64,
    pub orders: Vec<OrderReport>,
}

impl WdgReport {
    pub fn all_finite(&self) -> bool {
        self.orders.iter().all(|o| o.c_r.is_finite())
    }
}

/// Fits `C_r` for every `r ≤ r_max` over the multisets stored in `table`.
pub fn check_wdg_inequality(table: &CumulantTable, g: &IsingWdg<f64>, r_max: usize) -> WdgReport {
    let multisets: Vec<Vec<Site>> = table
        .iter()
        .filter(|(b, _)| b.len() <= r_max)
        .map(|(b, _)| b.to_vec())
        .collect();
    check_wdg_inequality_over(table, g, &multisets).expect("multisets taken from the table")
}

/// As [`check_wdg_inequality`], over an explicit list of multisets that the
/// table must cover.
pub fn check_wdg_inequality_over(
    table: &CumulantTable,
    g: &IsingWdg<f64>,
    multisets: &[Vec<Site>],
) -> Result<WdgReport> {
    let r_max = multisets.iter().map(Vec::len).max().unwrap_or(0);
    let mut ratios: Vec<Vec<(f64, f64, f64, &Vec<Site>)>> = vec![Vec::new(); r_max + 1];
    for b in multisets {
        let kappa = table.require(b)?.value;
        let m = max_weight_spanning_tree(g, b).weight;
        ratios[b.len()].push((kappa.abs(), m, 0.0, b));
    }
    let mut orders = Vec::new();
    for (r, rows) in ratios.iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        let mut c_r: f64 = 0.0;
        let mut worst = (rows[0].0, rows[0].1, rows[0].3);
        for &(k, m, _, b) in rows {
            let ratio = if m > 0.0 {
                k / m
            } else if k > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            if ratio > c_r {
                c_r = ratio;
                worst = (k, m, b);
            }
        }
        let mut hist = [0usize; 10];
        for &(k, m, _, _) in rows {
            let margin = if c_r > 0.0 && c_r.is_finite() && m > 0.0 {
                k / (c_r * m)
            } else {
                0.0
            };
            hist[((margin * 10.0) as usize).min(9)] += 1;
        }
        orders.push(OrderReport {
            r,
            tested: rows.len(),
            c_r,
            worst: worst.2.clone(),
            worst_kappa: worst.0,
            worst_weight: worst.1,
            margin_histogram: hist,
        });
    }
    Ok(WdgReport {
        epsilon: g.epsilon,
        orders,
    })
}
