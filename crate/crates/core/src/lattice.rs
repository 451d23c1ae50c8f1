//! Geometry of `Z^d`: sites, boxes, L1 distance and nearest-neighbour edges.
//!
//! Sites inside a [`LatticeBox`] are indexed in lexicographic order of their
//! coordinates (first axis most significant). Every index-based structure in
//! the crate (spin arrays, bitmasks, spool records) uses this order.

use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of `Z^d`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Site(Vec<i32>);

impl Site {
    pub fn new(coords: Vec<i32>) -> Self {
        Site(coords)
    }

    pub fn origin(dim: usize) -> Self {
        Site(vec![0; dim])
    }

    /// The unit vector `e_axis` scaled by `step`.
    pub fn unit(dim: usize, axis: usize, step: i32) -> Self {
        let mut c = vec![0; dim];
        c[axis] = step;
        Site(c)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i32] {
        &self.0
    }

    /// Coordinatewise sum. Panics on dimension mismatch.
    pub fn offset(&self, by: &Site) -> Site {
        assert_eq!(self.dim(), by.dim(), "offset dimension mismatch");
        Site(self.0.iter().zip(&by.0).map(|(a, b)| a + b).collect())
    }

    pub fn shifted(&self, axis: usize, step: i32) -> Site {
        let mut c = self.0.clone();
        c[axis] += step;
        Site(c)
    }
}

impl Deref for Site {
    type Target = [i32];
    fn deref(&self) -> &[i32] {
        &self.0
    }
}

impl fmt::Debug for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, c) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl From<Vec<i32>> for Site {
    fn from(v: Vec<i32>) -> Self {
        Site(v)
    }
}

impl<const N: usize> From<[i32; N]> for Site {
    fn from(v: [i32; N]) -> Self {
        Site(v.to_vec())
    }
}

/// Dimension context; the single place where site dimensions are validated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lattice {
    dim: usize,
}

impl Lattice {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDimension(dim));
        }
        Ok(Self { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn check(&self, site: &Site) -> Result<()> {
        if site.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: site.dim(),
            });
        }
        Ok(())
    }

    pub fn distance(&self, a: &Site, b: &Site) -> Result<u64> {
        self.check(a)?;
        self.check(b)?;
        Ok(dist(a, b))
    }
}

/// L1 (graph) distance between two sites of equal dimension.
pub fn l1_distance(a: &Site, b: &Site) -> Result<u64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(dist(a, b))
}

/// Unchecked L1 distance for hot loops; callers guarantee equal dimensions.
#[inline]
pub(crate) fn dist(a: &[i32], b: &[i32]) -> u64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (i64::from(*x) - i64::from(*y)).unsigned_abs())
        .sum()
}

/// An axis-aligned box `[lo, hi]` of `Z^d`, corners inclusive. Never empty.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "BoxCorners", into = "BoxCorners")]
pub struct LatticeBox {
    lo: Site,
    hi: Site,
    extents: Vec<usize>,
    strides: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct BoxCorners {
    lo: Site,
    hi: Site,
}

impl TryFrom<BoxCorners> for LatticeBox {
    type Error = Error;
    fn try_from(c: BoxCorners) -> Result<Self> {
        LatticeBox::new(c.lo, c.hi)
    }
}

impl From<LatticeBox> for BoxCorners {
    fn from(b: LatticeBox) -> Self {
        BoxCorners { lo: b.lo, hi: b.hi }
    }
}

impl fmt::Debug for LatticeBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:?}..{:?}]", self.lo, self.hi)
    }
}

impl LatticeBox {
    pub fn new(lo: Site, hi: Site) -> Result<Self> {
        if lo.dim() == 0 {
            return Err(Error::InvalidDimension(0));
        }
        if lo.dim() != hi.dim() {
            return Err(Error::DimensionMismatch {
                expected: lo.dim(),
                found: hi.dim(),
            });
        }
        if lo.iter().zip(hi.iter()).any(|(a, b)| a > b) {
            return Err(Error::EmptyBox {
                lo: lo.0.clone(),
                hi: hi.0.clone(),
            });
        }
        let extents: Vec<usize> = lo
            .iter()
            .zip(hi.iter())
            .map(|(a, b)| (i64::from(*b) - i64::from(*a) + 1) as usize)
            .collect();
        let mut strides = vec![1usize; extents.len()];
        for k in (0..extents.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1]
                .checked_mul(extents[k + 1])
                .ok_or(Error::Overflow("box volume"))?;
        }
        strides[0]
            .checked_mul(extents[0])
            .ok_or(Error::Overflow("box volume"))?;
        Ok(Self {
            lo,
            hi,
            extents,
            strides,
        })
    }

    /// `Λ_n = [-n, n]^d`.
    pub fn centered(dim: usize, n: u32) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDimension(dim));
        }
        let n = i32::try_from(n).map_err(|_| Error::Overflow("box radius"))?;
        Self::new(Site(vec![-n; dim]), Site(vec![n; dim]))
    }

    /// Box with `lo` at the origin and the given side lengths.
    pub fn with_shape(shape: &[usize]) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidParameter {
                name: "shape",
                reason: "side lengths must be positive".into(),
            });
        }
        let hi = shape
            .iter()
            .map(|&s| i32::try_from(s - 1).map_err(|_| Error::Overflow("box shape")))
            .collect::<Result<Vec<_>>>()?;
        Self::new(Site::origin(shape.len()), Site(hi))
    }

    /// A single-site box.
    pub fn single(site: Site) -> Result<Self> {
        Self::new(site.clone(), site)
    }

    pub fn dim(&self) -> usize {
        self.lo.dim()
    }

    pub fn lo(&self) -> &Site {
        &self.lo
    }

    pub fn hi(&self) -> &Site {
        &self.hi
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn len(&self) -> usize {
        self.strides[0] * self.extents[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, site: &[i32]) -> bool {
        site.len() == self.dim()
            && site
                .iter()
                .zip(self.lo.iter().zip(self.hi.iter()))
                .all(|(c, (l, h))| l <= c && c <= h)
    }

    pub fn index_of(&self, site: &[i32]) -> Option<usize> {
        if !self.contains(site) {
            return None;
        }
        Some(
            site.iter()
                .zip(self.lo.iter())
                .zip(&self.strides)
                .map(|((c, l), s)| (c - l) as usize * s)
                .sum(),
        )
    }

    pub fn site(&self, index: usize) -> Site {
        assert!(index < self.len(), "site index out of range");
        let mut rem = index;
        let coords = self
            .strides
            .iter()
            .zip(self.lo.iter())
            .map(|(s, l)| {
                let q = rem / s;
                rem %= s;
                l + q as i32
            })
            .collect();
        Site(coords)
    }

    /// Sites in lexicographic order.
    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        (0..self.len()).map(move |i| self.site(i))
    }

    /// Translate the box by `by`.
    pub fn translated(&self, by: &Site) -> Result<Self> {
        Self::new(self.lo.offset(by), self.hi.offset(by))
    }

    /// Whether `other` is contained in `self`.
    pub fn contains_box(&self, other: &LatticeBox) -> bool {
        self.contains(other.lo()) && self.contains(other.hi())
    }

    /// Index-level neighbour tables.
    pub fn adjacency(&self) -> Adjacency {
        let d = self.dim();
        let n = self.len();
        let mut inside = vec![Vec::with_capacity(2 * d); n];
        let mut outside = vec![0u32; n];
        let mut edges = Vec::new();
        for i in 0..n {
            let s = self.site(i);
            for axis in 0..d {
                for step in [-1, 1] {
                    let t = s.shifted(axis, step);
                    match self.index_of(&t) {
                        Some(j) => {
                            inside[i].push(j);
                            if step == 1 {
                                edges.push((i, j));
                            }
                        }
                        None => outside[i] += 1,
                    }
                }
            }
        }
        Adjacency {
            inside,
            outside,
            edges,
        }
    }
}

/// Neighbour structure of a box in index form.
#[derive(Debug, Clone)]
pub struct Adjacency {
    /// In-box neighbours of each site.
    pub inside: Vec<Vec<usize>>,
    /// Number of out-of-box neighbours of each site (crossing edges).
    pub outside: Vec<u32>,
    /// Interior edges `(i, j)` with `i < j`, in lexicographic order of `i`.
    pub edges: Vec<(usize, usize)>,
}

impl Adjacency {
    pub fn crossing_count(&self) -> usize {
        self.outside.iter().map(|&c| c as usize).sum()
    }
}

/// An unordered nearest-neighbour pair, stored with `a < b`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
pub struct Edge {
    pub a: Site,
    pub b: Site,
}

impl Edge {
    pub fn new(x: Site, y: Site) -> Self {
        if x <= y {
            Edge { a: x, b: y }
        } else {
            Edge { a: y, b: x }
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct EdgeSet {
    edges: Vec<Edge>,
}

impl EdgeSet {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Edge> {
        self.edges.iter()
    }

    pub fn contains(&self, e: &Edge) -> bool {
        self.edges.contains(e)
    }
}

impl FromIterator<Edge> for EdgeSet {
    fn from_iter<I: IntoIterator<Item = Edge>>(iter: I) -> Self {
        EdgeSet {
            edges: iter.into_iter().collect(),
        }
    }
}

/// `𝓔_Λ`: pairs of box sites at distance one.
pub fn interior_edges(region: &LatticeBox) -> EdgeSet {
    let adj = region.adjacency();
    adj.edges
        .iter()
        .map(|&(i, j)| Edge::new(region.site(i), region.site(j)))
        .collect()
}

/// Edges with exactly one endpoint in the box.
pub fn crossing_edges(region: &LatticeBox) -> EdgeSet {
    let mut out = Vec::new();
    for s in region.sites() {
        for axis in 0..region.dim() {
            for step in [-1, 1] {
                let t = s.shifted(axis, step);
                if !region.contains(&t) {
                    out.push(Edge::new(s.clone(), t));
                }
            }
        }
    }
    EdgeSet { edges: out }
}

/// `𝓔^b_Λ`: edges with at least one endpoint in the box.
pub fn boundary_edges(region: &LatticeBox) -> EdgeSet {
    let mut all = interior_edges(region).edges;
    all.extend(crossing_edges(region).edges);
    EdgeSet { edges: all }
}

/// `2^d · C(d+y-1, d-1)`, an upper bound on the number of sites at L1
/// distance `y` from a point. Overflow is reported, never wrapped.
pub fn sphere_count_upper_bound(dim: u32, y: u64) -> Result<u64> {
    if dim == 0 {
        return Err(Error::InvalidDimension(0));
    }
    if y == 0 {
        return Err(Error::InvalidParameter {
            name: "y",
            reason: "distance must be at least 1".into(),
        });
    }
    let pow = 1u64
        .checked_shl(dim)
        .filter(|_| dim < 64)
        .ok_or(Error::Overflow("2^d"))?;
    let binom = binomial(u64::from(dim) + y - 1, u64::from(dim) - 1)?;
    pow.checked_mul(binom)
        .ok_or(Error::Overflow("sphere count bound"))
}

/// Exact binomial coefficient with overflow detection.
pub fn binomial(n: u64, k: u64) -> Result<u64> {
    if k > n {
        return Ok(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * u128::from(n - i) / u128::from(i + 1);
        if acc > u128::from(u64::MAX) {
            return Err(Error::Overflow("binomial"));
        }
    }
    Ok(acc as u64)
}
