//! Local and global spin patterns: occurrence indicators, occurrence counts
//! and the dependency-graph weights between occurrences.

use std::fmt;

use rayon::prelude::*;
use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{BoundaryCondition, Sign, SpinConfiguration};
use crate::lattice::{binomial, dist, LatticeBox, Site};
use crate::scalar::Real;
use crate::wdg::{IsingWdg, PowerGraph, Signed, SignedSite, WeightedGraph};

/// Default limit on the number of `m`-subsets scanned by [`count_global`].
pub const DEFAULT_GLOBAL_BUDGET: u64 = 2_000_000_000;

/// A sign string such as `"+--+"`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Signs(pub Vec<Sign>);

impl Signs {
    pub fn parse(text: &str) -> Result<Self> {
        text.chars()
            .map(|c| Sign::from_char(c).ok_or_else(|| Error::Malformed(format!("bad sign {c:?}"))))
            .collect::<Result<Vec<_>>>()
            .map(Signs)
    }
}

impl fmt::Display for Signs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.iter().try_for_each(|s| write!(f, "{}", s.as_char()))
    }
}

impl Serialize for Signs {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Signs {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Signs::parse(&text).map_err(de::Error::custom)
    }
}

/// A finite shape `D ∋ 0` with a sign for each of its sites.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawLocal", into = "RawLocal")]
pub struct LocalPattern {
    shape: Vec<Site>,
    signs: Vec<Sign>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLocal {
    shape: Vec<Site>,
    signs: Signs,
}

impl TryFrom<RawLocal> for LocalPattern {
    type Error = Error;

    fn try_from(raw: RawLocal) -> Result<Self> {
        LocalPattern::new(raw.shape, raw.signs.0)
    }
}

impl From<LocalPattern> for RawLocal {
    fn from(p: LocalPattern) -> Self {
        RawLocal {
            shape: p.shape,
            signs: Signs(p.signs),
        }
    }
}

impl LocalPattern {
    pub fn new(shape: Vec<Site>, signs: Vec<Sign>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::Malformed("pattern shape is empty".into()));
        }
        if shape.len() != signs.len() {
            return Err(Error::Malformed(format!(
                "{} shape sites but {} signs",
                shape.len(),
                signs.len()
            )));
        }
        let d = shape[0].dim();
        if let Some(s) = shape.iter().find(|s| s.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: s.dim(),
            });
        }
        if !shape.iter().any(|s| s.iter().all(|&c| c == 0)) {
            return Err(Error::Malformed(
                "pattern shape must contain the origin".into(),
            ));
        }
        let mut sorted = shape.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != shape.len() {
            return Err(Error::Malformed("pattern shape has repeated sites".into()));
        }
        Ok(Self { shape, signs })
    }

    /// `+` at the origin and `-` at its `2d` neighbours.
    pub fn isolated_plus(dim: usize) -> Self {
        let mut shape = vec![Site::origin(dim)];
        let mut signs = vec![Sign::Plus];
        for axis in 0..dim {
            for step in [-1, 1] {
                shape.push(Site::unit(dim, axis, step));
                signs.push(Sign::Minus);
            }
        }
        Self { shape, signs }
    }

    pub fn single_site(dim: usize, sign: Sign) -> Self {
        Self {
            shape: vec![Site::origin(dim)],
            signs: vec![sign],
        }
    }

    pub fn dim(&self) -> usize {
        self.shape[0].dim()
    }

    pub fn shape(&self) -> &[Site] {
        &self.shape
    }

    pub fn signs(&self) -> &[Sign] {
        &self.signs
    }

    /// `max_{α,β∈D} dist(α, β)`.
    pub fn diameter(&self) -> u64 {
        let mut best = 0;
        for a in &self.shape {
            for b in &self.shape {
                best = best.max(dist(a, b));
            }
        }
        best
    }

    /// The signed sites `(i + j, s(j))` read by the occurrence at `i`.
    pub fn occurrence(&self, position: &Site) -> Vec<SignedSite> {
        self.shape
            .iter()
            .zip(&self.signs)
            .map(|(j, &sign)| SignedSite {
                site: position.offset(j),
                sign,
            })
            .collect()
    }
}

/// `d` total orders on `{0, …, m-1}` (as rank vectors) and `m` signs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawGlobal", into = "RawGlobal")]
pub struct GlobalPattern {
    /// `ranks[k][i]`: position of element `i` in the order along axis `k`.
    ranks: Vec<Vec<usize>>,
    signs: Vec<Sign>,
}

/// JSON form: `orders[k][i]` is the 1-based rank of element `i` on axis `k`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGlobal {
    m: usize,
    orders: Vec<Vec<usize>>,
    signs: Signs,
}

impl TryFrom<RawGlobal> for GlobalPattern {
    type Error = Error;

    fn try_from(raw: RawGlobal) -> Result<Self> {
        let ranks = raw
            .orders
            .iter()
            .map(|o| {
                o.iter()
                    .map(|&r| {
                        r.checked_sub(1)
                            .ok_or_else(|| Error::Malformed("order ranks start at 1".into()))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let p = GlobalPattern::new(ranks, raw.signs.0)?;
        if p.m() != raw.m {
            return Err(Error::Malformed(format!(
                "m = {} but {} signs",
                raw.m,
                p.m()
            )));
        }
        Ok(p)
    }
}

impl From<GlobalPattern> for RawGlobal {
    fn from(p: GlobalPattern) -> Self {
        RawGlobal {
            m: p.m(),
            orders: p
                .ranks
                .iter()
                .map(|o| o.iter().map(|r| r + 1).collect())
                .collect(),
            signs: Signs(p.signs),
        }
    }
}

impl GlobalPattern {
    pub fn new(ranks: Vec<Vec<usize>>, signs: Vec<Sign>) -> Result<Self> {
        let m = signs.len();
        if m == 0 {
            return Err(Error::Malformed("global pattern needs m >= 1".into()));
        }
        if ranks.is_empty() {
            return Err(Error::InvalidDimension(0));
        }
        for order in &ranks {
            let mut seen = vec![false; m];
            if order.len() != m {
                return Err(Error::Malformed(
                    "each order must rank all m elements".into(),
                ));
            }
            for &r in order {
                if r >= m || seen[r] {
                    return Err(Error::Malformed("order is not a permutation".into()));
                }
                seen[r] = true;
            }
        }
        Ok(Self { ranks, signs })
    }

    /// `m` points increasing along every axis, all with sign `sign`.
    pub fn chain(dim: usize, m: usize, sign: Sign) -> Self {
        Self {
            ranks: vec![(0..m).collect(); dim],
            signs: vec![sign; m],
        }
    }

    pub fn m(&self) -> usize {
        self.signs.len()
    }

    pub fn dim(&self) -> usize {
        self.ranks.len()
    }

    pub fn signs(&self) -> &[Sign] {
        &self.signs
    }

    pub fn ranks(&self) -> &[Vec<usize>] {
        &self.ranks
    }

    /// Whether element `i` precedes `j` on axis `k`.
    #[inline]
    pub fn precedes(&self, k: usize, i: usize, j: usize) -> bool {
        self.ranks[k][i] < self.ranks[k][j]
    }

    /// Elements listed in their order along the first axis.
    fn by_first_axis(&self) -> Vec<usize> {
        let mut e: Vec<usize> = (0..self.m()).collect();
        e.sort_by_key(|&i| self.ranks[0][i]);
        e
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    Local(LocalPattern),
    Global(GlobalPattern),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternCount {
    pub value: u64,
    pub region: LatticeBox,
    pub pattern: Pattern,
}

/// `Z_i^P`: whether the pattern occurs at position `i`.
pub fn local_indicator(cfg: &SpinConfiguration, p: &LocalPattern, position: &Site) -> Result<bool> {
    let spins = p
        .shape
        .iter()
        .map(|j| cfg.spin(&position.offset(j)))
        .collect::<Result<Vec<_>>>()?;
    Ok(spins.iter().zip(&p.signs).all(|(&x, s)| x == s.spin()))
}

/// Precomputed reads for counting one local pattern over a box.
///
/// Under `Free` boundary conditions, positions whose occurrence leaves the
/// configuration's box are excluded; under `Plus`/`Minus` such reads use the
/// boundary spin.
#[derive(Debug, Clone)]
pub struct LocalCounter {
    /// For each counted position: in-box `(index, spin)` requirements.
    positions: Vec<Vec<(usize, i8)>>,
}

impl LocalCounter {
    pub fn new(
        p: &LocalPattern,
        config_box: &LatticeBox,
        bc: BoundaryCondition,
        positions: &LatticeBox,
    ) -> Result<Self> {
        if p.dim() != config_box.dim() || positions.dim() != config_box.dim() {
            return Err(Error::DimensionMismatch {
                expected: config_box.dim(),
                found: p.dim(),
            });
        }
        let mut out = Vec::with_capacity(positions.len());
        'pos: for i in positions.sites() {
            let mut reqs = Vec::with_capacity(p.shape.len());
            for (j, s) in p.shape.iter().zip(&p.signs) {
                let x = i.offset(j);
                match config_box.index_of(&x) {
                    Some(k) => reqs.push((k, s.spin())),
                    None => match bc.ghost() {
                        None => continue 'pos,
                        Some(g) if g == s.spin() => {}
                        Some(_) => {
                            // Can never match; keep as an unsatisfiable position.
                            reqs.clear();
                            reqs.push((usize::MAX, 0));
                            break;
                        }
                    },
                }
            }
            out.push(reqs);
        }
        Ok(Self { positions: out })
    }

    /// Number of positions counted (after exclusions).
    pub fn n_positions(&self) -> usize {
        self.positions.len()
    }

    pub fn count(&self, spins: &[i8]) -> u64 {
        self.positions
            .iter()
            .filter(|reqs| reqs.iter().all(|&(k, s)| k != usize::MAX && spins[k] == s))
            .count() as u64
    }
}

/// `S_{n,P} = Σ_{i∈Λ} Z_i^P` over positions `i` in `region`.
pub fn count_local(
    cfg: &SpinConfiguration,
    p: &LocalPattern,
    region: &LatticeBox,
) -> Result<PatternCount> {
    let counter = LocalCounter::new(p, cfg.region(), cfg.bc(), region)?;
    Ok(PatternCount {
        value: counter.count(cfg.spins()),
        region: region.clone(),
        pattern: Pattern::Local(p.clone()),
    })
}

/// `Z^{P̃}_X`: whether some labelling of the `m` sites of `X` realises the
/// orders and the signs. Equal coordinates on any axis never match.
pub fn global_indicator(cfg: &SpinConfiguration, p: &GlobalPattern, x: &[Site]) -> Result<bool> {
    if x.len() != p.m() {
        return Err(Error::Malformed(format!(
            "expected {} sites, got {}",
            p.m(),
            x.len()
        )));
    }
    if x.iter().any(|s| s.dim() != p.dim()) {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            found: x[0].dim(),
        });
    }
    // The first axis forces the labelling: sort X along it.
    let mut pts: Vec<&Site> = x.iter().collect();
    pts.sort_by_key(|s| s[0]);
    let order = p.by_first_axis();
    let mut assigned: Vec<&Site> = vec![pts[0]; p.m()];
    for (r, &e) in order.iter().enumerate() {
        assigned[e] = pts[r];
    }
    for i in 0..p.m() {
        if cfg.spin(assigned[i])? != p.signs[i].spin() {
            return Ok(false);
        }
        for j in 0..p.m() {
            if i == j {
                continue;
            }
            for k in 0..p.dim() {
                let le = assigned[i][k] <= assigned[j][k];
                if le != p.precedes(k, i, j) {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// Counts occurrences of a global pattern among sites of `region`, given as
/// coordinates and spins in lexicographic order.
#[derive(Debug, Clone)]
pub struct GlobalCounter {
    pattern: GlobalPattern,
    coords: Vec<Vec<i32>>,
    order: Vec<usize>,
    chain: Option<ChainPlan>,
}

/// Patterns whose every axis order agrees with or reverses the first-axis
/// order are counted by dynamic programming over strict-dominance prefix
/// sums, in `O(m |Λ|)` per configuration.
#[derive(Debug, Clone)]
struct ChainPlan {
    extents: Vec<usize>,
    strides: Vec<usize>,
    /// Per axis, whether coordinates increase along the chain.
    increasing: Vec<bool>,
}

impl ChainPlan {
    fn detect(p: &GlobalPattern, order: &[usize], region: &LatticeBox) -> Option<Self> {
        let mut increasing = Vec::with_capacity(p.dim());
        for k in 0..p.dim() {
            let ranks: Vec<usize> = order.iter().map(|&e| p.ranks[k][e]).collect();
            if ranks.windows(2).all(|w| w[0] < w[1]) {
                increasing.push(true);
            } else if ranks.windows(2).all(|w| w[0] > w[1]) {
                increasing.push(false);
            } else {
                return None;
            }
        }
        let extents = region.extents().to_vec();
        let mut strides = vec![1; extents.len()];
        for k in (0..extents.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * extents[k + 1];
        }
        Some(Self {
            extents,
            strides,
            increasing,
        })
    }

    /// Replaces `w` by its strict-dominance sums: entry `c` becomes the sum
    /// of `w` over sites strictly before `c` on every axis.
    fn dominance_sums(&self, w: &mut [u64]) {
        let n = w.len();
        for (k, (&stride, &extent)) in self.strides.iter().zip(&self.extents).enumerate() {
            let coord = |i: usize| i / stride % extent;
            if self.increasing[k] {
                for i in 0..n {
                    if coord(i) > 0 {
                        w[i] += w[i - stride];
                    }
                }
            } else {
                for i in (0..n).rev() {
                    if coord(i) + 1 < extent {
                        w[i] += w[i + stride];
                    }
                }
            }
        }
        // Inclusive sums are shifted one step back on every axis.
        let mut shift: isize = 0;
        for (k, &stride) in self.strides.iter().enumerate() {
            shift += if self.increasing[k] {
                stride as isize
            } else {
                -(stride as isize)
            };
        }
        let strict: Vec<u64> = (0..n)
            .map(|i| {
                let inside =
                    self.strides
                        .iter()
                        .zip(&self.extents)
                        .enumerate()
                        .all(|(k, (&s, &e))| {
                            let c = i / s % e;
                            if self.increasing[k] {
                                c > 0
                            } else {
                                c + 1 < e
                            }
                        });
                if inside {
                    w[(i as isize - shift) as usize]
                } else {
                    0
                }
            })
            .collect();
        w.copy_from_slice(&strict);
    }

    fn count(&self, p: &GlobalPattern, order: &[usize], spins: &[i8]) -> u64 {
        let want = |level: usize| p.signs[order[level]].spin();
        let mut w: Vec<u64> = spins.iter().map(|&s| u64::from(s == want(0))).collect();
        for level in 1..order.len() {
            self.dominance_sums(&mut w);
            let s = want(level);
            for (x, &spin) in w.iter_mut().zip(spins) {
                if spin != s {
                    *x = 0;
                }
            }
        }
        w.iter().sum()
    }
}

impl GlobalCounter {
    pub fn new(p: &GlobalPattern, region: &LatticeBox, budget: u64) -> Result<Self> {
        if p.dim() != region.dim() {
            return Err(Error::DimensionMismatch {
                expected: region.dim(),
                found: p.dim(),
            });
        }
        let order = p.by_first_axis();
        let chain = ChainPlan::detect(p, &order, region);
        if chain.is_none() {
            let subsets = binomial(region.len() as u64, p.m() as u64)?;
            if subsets > budget {
                return Err(Error::CapExceeded {
                    what: "global pattern subsets",
                    size: usize::try_from(subsets).unwrap_or(usize::MAX),
                    cap: usize::try_from(budget).unwrap_or(usize::MAX),
                });
            }
        }
        Ok(Self {
            pattern: p.clone(),
            coords: region.sites().map(|s| s.coords().to_vec()).collect(),
            chain,
            order,
        })
    }

    fn extend(&self, spins: &[i8], chosen: &mut Vec<usize>, depth: usize, from: usize) -> u64 {
        let p = &self.pattern;
        if depth == self.order.len() {
            return 1;
        }
        let e = self.order[depth];
        let want = p.signs[e].spin();
        let mut total = 0;
        for idx in from..self.coords.len() {
            if spins[idx] != want {
                continue;
            }
            let c = &self.coords[idx];
            let ok = chosen.iter().enumerate().all(|(level, &prev)| {
                let pe = self.order[level];
                let pc = &self.coords[prev];
                pc[0] < c[0]
                    && (1..p.dim()).all(|k| {
                        if p.precedes(k, pe, e) {
                            pc[k] < c[k]
                        } else {
                            pc[k] > c[k]
                        }
                    })
            });
            if ok {
                chosen.push(idx);
                total += self.extend(spins, chosen, depth + 1, idx + 1);
                chosen.pop();
            }
        }
        total
    }

    pub fn count(&self, spins: &[i8]) -> u64 {
        match &self.chain {
            Some(plan) => plan.count(&self.pattern, &self.order, spins),
            None => self.count_by_search(spins),
        }
    }

    fn count_by_search(&self, spins: &[i8]) -> u64 {
        let p = &self.pattern;
        let first = p.signs[self.order[0]].spin();
        (0..self.coords.len())
            .into_par_iter()
            .filter(|&i| spins[i] == first)
            .map(|i| {
                let mut chosen = vec![i];
                self.extend(spins, &mut chosen, 1, i + 1)
            })
            .sum()
    }
}

/// `S_{n,P̃}`: the number of `m`-subsets of `region` where the pattern occurs.
pub fn count_global(
    cfg: &SpinConfiguration,
    p: &GlobalPattern,
    region: &LatticeBox,
) -> Result<PatternCount> {
    count_global_with_budget(cfg, p, region, DEFAULT_GLOBAL_BUDGET)
}

pub fn count_global_with_budget(
    cfg: &SpinConfiguration,
    p: &GlobalPattern,
    region: &LatticeBox,
    budget: u64,
) -> Result<PatternCount> {
    if !cfg.region().contains_box(region) {
        return Err(Error::SiteOutsideBox(region.hi().to_vec()));
    }
    let counter = GlobalCounter::new(p, region, budget)?;
    let spins: Vec<i8> = region
        .sites()
        .map(|s| cfg.spin(&s))
        .collect::<Result<Vec<_>>>()?;
    Ok(PatternCount {
        value: counter.count(&spins),
        region: region.clone(),
        pattern: Pattern::Global(p.clone()),
    })
}

/// Power-graph weight between two occurrences of a local pattern at
/// positions `i1` and `i2`.
pub fn local_pattern_weight<T: Real>(p: &LocalPattern, g: &IsingWdg<T>, i1: &Site, i2: &Site) -> T {
    let power = PowerGraph {
        base: Signed(*g),
        m: p.shape.len(),
    };
    power.weight(&p.occurrence(i1), &p.occurrence(i2))
}

/// Power-graph weight between two site sets of a global pattern.
pub fn global_pattern_weight<T: Real>(
    p: &GlobalPattern,
    g: &IsingWdg<T>,
    x: &[Site],
    y: &[Site],
) -> T {
    let power = PowerGraph { base: *g, m: p.m() };
    power.weight(&x.to_vec(), &y.to_vec())
}
