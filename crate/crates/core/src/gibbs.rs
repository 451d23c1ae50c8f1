//! Exact finite-volume Ising computations by exhaustive enumeration.
//!
//! A state of a box with `N` sites is a bitmask: bit `i` set means the site
//! with lexicographic index `i` carries the *non-reference* spin (see
//! [`MomentTables`]) or, for raw enumeration, spin `-1`.
//!
//! Enumeration walks a Gray code over the low bits of the state and splits
//! the high bits across workers. Energies are tracked as two integers (bond
//! sum and magnetization), so there is no drift along the walk.

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cumulants::{cumulant_from_moments, MAX_ORDER};
use crate::error::{Error, Result};
use crate::lattice::{Adjacency, LatticeBox, Site};
use crate::scalar::{LogSumExp, Real};

/// Default limit on the number of enumerated sites.
pub const DEFAULT_ENUMERATION_CAP: usize = 25;

/// Largest box for which full probability vectors and moment tables are
/// materialised.
pub const DEFAULT_STORAGE_CAP: usize = 22;

const CHUNK_BITS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryCondition {
    Free,
    Plus,
    Minus,
}

impl BoundaryCondition {
    /// Value of the frozen spins outside the box, if any.
    pub fn ghost(self) -> Option<i8> {
        match self {
            BoundaryCondition::Free => None,
            BoundaryCondition::Plus => Some(1),
            BoundaryCondition::Minus => Some(-1),
        }
    }

    fn ghost_value(self) -> i32 {
        self.ghost().map_or(0, i32::from)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl Sign {
    pub fn spin(self) -> i8 {
        match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }

    pub fn from_spin(s: i8) -> Self {
        if s > 0 {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            '+' => Some(Sign::Plus),
            '-' => Some(Sign::Minus),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Sign::Plus => '+',
            Sign::Minus => '-',
        }
    }
}

/// `(d, β, h, boundary condition)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsingParams<T> {
    pub dim: usize,
    pub beta: T,
    pub h: T,
    pub bc: BoundaryCondition,
}

impl<T: Real> IsingParams<T> {
    pub fn new(dim: usize, beta: T, h: T, bc: BoundaryCondition) -> Result<Self> {
        let p = Self { dim, beta, h, bc };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidDimension(0));
        }
        if !(self.beta >= T::zero()) || !self.beta.is_finite() {
            return Err(Error::InvalidParameter {
                name: "beta",
                reason: format!("must be finite and >= 0, got {}", self.beta),
            });
        }
        if !self.h.is_finite() {
            return Err(Error::InvalidParameter {
                name: "h",
                reason: "must be finite".into(),
            });
        }
        Ok(())
    }

    /// The spin favoured by boundary condition and field; `Plus` when neither
    /// breaks the symmetry.
    pub fn reference_sign(&self) -> Sign {
        match self.bc {
            BoundaryCondition::Plus => Sign::Plus,
            BoundaryCondition::Minus => Sign::Minus,
            BoundaryCondition::Free if self.h < T::zero() => Sign::Minus,
            BoundaryCondition::Free => Sign::Plus,
        }
    }

    pub fn cast<U: Real>(&self) -> IsingParams<U> {
        IsingParams {
            dim: self.dim,
            beta: U::of(self.beta.as_f64()),
            h: U::of(self.h.as_f64()),
            bc: self.bc,
        }
    }
}

/// Spins on every site of a box; exterior reads resolve via the boundary
/// condition.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpinConfiguration {
    region: LatticeBox,
    spins: Vec<i8>,
    bc: BoundaryCondition,
}

impl SpinConfiguration {
    pub fn new(region: LatticeBox, spins: Vec<i8>, bc: BoundaryCondition) -> Result<Self> {
        if spins.len() != region.len() {
            return Err(Error::Malformed(format!(
                "expected {} spins, got {}",
                region.len(),
                spins.len()
            )));
        }
        if spins.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::Malformed("spins must be +1 or -1".into()));
        }
        Ok(Self { region, spins, bc })
    }

    pub fn uniform(region: LatticeBox, spin: Sign, bc: BoundaryCondition) -> Self {
        let spins = vec![spin.spin(); region.len()];
        Self { region, spins, bc }
    }

    /// Configuration whose minus sites are the set bits of `state`.
    pub fn from_state(region: LatticeBox, state: u64, bc: BoundaryCondition) -> Self {
        let spins = (0..region.len())
            .map(|i| if state >> i & 1 == 1 { -1 } else { 1 })
            .collect();
        Self { region, spins, bc }
    }

    pub(crate) fn from_raw(region: LatticeBox, spins: Vec<i8>, bc: BoundaryCondition) -> Self {
        debug_assert_eq!(spins.len(), region.len());
        Self { region, spins, bc }
    }

    pub fn region(&self) -> &LatticeBox {
        &self.region
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.bc
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    pub fn spin_at(&self, index: usize) -> i8 {
        self.spins[index]
    }

    pub fn set_spin_at(&mut self, index: usize, s: Sign) {
        self.spins[index] = s.spin();
    }

    /// Spin at any site of `Z^d`; exterior sites read the frozen boundary.
    pub fn spin(&self, site: &[i32]) -> Result<i8> {
        match self.region.index_of(site) {
            Some(i) => Ok(self.spins[i]),
            None => self
                .bc
                .ghost()
                .ok_or_else(|| Error::FreeBoundaryRead(site.to_vec())),
        }
    }

    pub fn magnetization(&self) -> i64 {
        self.spins.iter().map(|&s| i64::from(s)).sum()
    }

    /// Bitmask of minus sites; requires at most 64 sites.
    pub fn minus_mask(&self) -> u64 {
        assert!(self.spins.len() <= 64);
        self.spins
            .iter()
            .enumerate()
            .filter(|(_, &s)| s < 0)
            .fold(0u64, |m, (i, _)| m | 1 << i)
    }
}

/// `H = -β Σ σ_i σ_j - h Σ σ_i`, over `𝓔_Λ` (free) or `𝓔^b_Λ` (fixed).
pub fn hamiltonian<T: Real>(cfg: &SpinConfiguration, p: &IsingParams<T>) -> Result<T> {
    if cfg.bc != p.bc {
        return Err(Error::BoundaryMismatch);
    }
    if cfg.region.dim() != p.dim {
        return Err(Error::DimensionMismatch {
            expected: p.dim,
            found: cfg.region.dim(),
        });
    }
    let adj = cfg.region.adjacency();
    let (bond, mag) = integer_energy(&adj, cfg.spins(), p.bc.ghost_value());
    Ok(-(p.beta * T::of(bond as f64) + p.h * T::of(mag as f64)))
}

fn integer_energy(adj: &Adjacency, spins: &[i8], ghost: i32) -> (i64, i64) {
    let mut bond = 0i64;
    for &(i, j) in &adj.edges {
        bond += i64::from(spins[i]) * i64::from(spins[j]);
    }
    if ghost != 0 {
        for (i, &out) in adj.outside.iter().enumerate() {
            bond += i64::from(spins[i]) * i64::from(ghost) * i64::from(out);
        }
    }
    let mag = spins.iter().map(|&s| i64::from(s)).sum();
    (bond, mag)
}

/// Exhaustive enumerator for one box and parameter set.
#[derive(Debug)]
pub struct ExactSystem<T: Real> {
    region: LatticeBox,
    params: IsingParams<T>,
    adj: Adjacency,
    storage_cap: usize,
    ln_z: OnceLock<T>,
    tables: OnceLock<MomentTables<T>>,
}

impl<T: Real> ExactSystem<T> {
    pub fn new(region: LatticeBox, params: IsingParams<T>) -> Result<Self> {
        Self::with_cap(region, params, DEFAULT_ENUMERATION_CAP)
    }

    pub fn with_cap(region: LatticeBox, params: IsingParams<T>, cap: usize) -> Result<Self> {
        params.validate()?;
        if region.dim() != params.dim {
            return Err(Error::DimensionMismatch {
                expected: params.dim,
                found: region.dim(),
            });
        }
        let cap = cap.min(62);
        if region.len() > cap {
            return Err(Error::CapExceeded {
                what: "enumerated box",
                size: region.len(),
                cap,
            });
        }
        let adj = region.adjacency();
        Ok(Self {
            region,
            params,
            adj,
            storage_cap: DEFAULT_STORAGE_CAP,
            ln_z: OnceLock::new(),
            tables: OnceLock::new(),
        })
    }

    pub fn region(&self) -> &LatticeBox {
        &self.region
    }

    pub fn params(&self) -> &IsingParams<T> {
        &self.params
    }

    pub fn n_sites(&self) -> usize {
        self.region.len()
    }

    pub fn n_states(&self) -> u64 {
        1u64 << self.n_sites()
    }

    pub fn index(&self, site: &[i32]) -> Result<usize> {
        self.region
            .index_of(site)
            .ok_or_else(|| Error::SiteOutsideBox(site.to_vec()))
    }

    /// Bitmask of a set of sites.
    pub fn mask_of(&self, sites: &[Site]) -> Result<u64> {
        sites
            .iter()
            .try_fold(0u64, |m, s| Ok(m | 1 << self.index(s)?))
    }

    #[inline]
    fn neg_energy(&self, bond: i64, mag: i64) -> T {
        self.params.beta * T::of(bond as f64) + self.params.h * T::of(mag as f64)
    }

    /// Visits every state of the chunk whose high bits equal `chunk`,
    /// passing `(state, spins, -H)`.
    fn walk_chunk<F: FnMut(u64, &[i8], T)>(&self, chunk: u64, low_bits: usize, mut visit: F) {
        let n = self.n_sites();
        let ghost = self.params.bc.ghost_value();
        let mut state = chunk << low_bits;
        let mut spins: Vec<i8> = (0..n)
            .map(|i| if state >> i & 1 == 1 { -1 } else { 1 })
            .collect();
        let (mut bond, mut mag) = integer_energy(&self.adj, &spins, ghost);
        visit(state, &spins, self.neg_energy(bond, mag));
        for g in 1..(1u64 << low_bits) {
            let i = g.trailing_zeros() as usize;
            let s = i64::from(spins[i]);
            let mut nb: i64 = self.adj.inside[i]
                .iter()
                .map(|&j| i64::from(spins[j]))
                .sum();
            nb += i64::from(ghost) * i64::from(self.adj.outside[i]);
            bond -= 2 * s * nb;
            mag -= 2 * s;
            spins[i] = -spins[i];
            state ^= 1 << i;
            visit(state, &spins, self.neg_energy(bond, mag));
        }
    }

    fn chunking(&self) -> (usize, u64) {
        let n = self.n_sites();
        let high = n.min(CHUNK_BITS);
        (n - high, 1u64 << high)
    }

    /// Map-reduce over all states; chunk results are merged in chunk order so
    /// the outcome does not depend on the number of worker threads.
    fn fold_states<A, I, V>(&self, init: I, visit: V) -> Vec<A>
    where
        A: Send,
        I: Fn() -> A + Sync,
        V: Fn(&mut A, u64, &[i8], T) + Sync,
    {
        let (low, chunks) = self.chunking();
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut acc = init();
                self.walk_chunk(c, low, |s, sp, w| visit(&mut acc, s, sp, w));
                acc
            })
            .collect()
    }

    /// `ln Z`.
    pub fn ln_partition_function(&self) -> T {
        *self.ln_z.get_or_init(|| {
            let parts = self.fold_states(LogSumExp::new, |acc, _, _, w| acc.push(w));
            let mut total = LogSumExp::new();
            for p in &parts {
                total.merge(p);
            }
            total.ln()
        })
    }

    /// `Z`; may overflow for large `β|𝓔|`, prefer [`Self::ln_partition_function`].
    pub fn partition_function(&self) -> T {
        self.ln_partition_function().exp()
    }

    /// `ln Σ_ω exp(Σ_j t_j σ_{x_j}) e^{-H(ω)}`.
    pub fn ln_generating_sum(&self, marked: &[Site], t: &[T]) -> Result<T> {
        if marked.len() != t.len() {
            return Err(Error::Malformed("one parameter t per marked site".into()));
        }
        let idx = marked
            .iter()
            .map(|s| self.index(s))
            .collect::<Result<Vec<_>>>()?;
        let parts = self.fold_states(LogSumExp::new, |acc, _, spins, w| {
            let extra = idx.iter().zip(t).fold(T::zero(), |a, (&i, &tj)| {
                a + tj * T::of(f64::from(spins[i]))
            });
            acc.push(w + extra);
        });
        let mut total = LogSumExp::new();
        for p in &parts {
            total.merge(p);
        }
        Ok(total.ln())
    }

    /// `⟨f⟩` for an observable of the spin array (lexicographic order).
    pub fn expectation<F>(&self, f: F) -> T
    where
        F: Fn(&[i8]) -> T + Sync,
    {
        let ln_z = self.ln_partition_function();
        let parts = self.fold_states(T::zero, |acc, _, spins, w| {
            *acc = *acc + f(spins) * (w - ln_z).exp();
        });
        parts.into_iter().fold(T::zero(), |a, b| a + b)
    }

    /// `⟨f_1⟩, …, ⟨f_k⟩` in one pass; `f` writes the `k` observables of a
    /// spin array into its output slice.
    pub fn expectations<F>(&self, k: usize, f: F) -> Vec<T>
    where
        F: Fn(&[i8], &mut [T]) + Sync,
    {
        let ln_z = self.ln_partition_function();
        let parts = self.fold_states(
            || (vec![T::zero(); k], vec![T::zero(); k]),
            |(acc, buf), _, spins, w| {
                buf.iter_mut().for_each(|b| *b = T::zero());
                f(spins, buf);
                let p = (w - ln_z).exp();
                for (a, &b) in acc.iter_mut().zip(buf.iter()) {
                    *a = *a + b * p;
                }
            },
        );
        let mut total = vec![T::zero(); k];
        for (acc, _) in parts {
            for (t, a) in total.iter_mut().zip(acc) {
                *t = *t + a;
            }
        }
        total
    }

    /// `⟨Π_{i∈A} σ_i⟩` for a set of sites.
    pub fn spin_product_expectation(&self, sites: &[Site]) -> Result<T> {
        let idx = sites
            .iter()
            .map(|s| self.index(s))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.expectation(|sp| T::of(f64::from(idx.iter().fold(1i8, |p, &i| p * sp[i])))))
    }

    /// Gibbs probabilities indexed by minus-mask.
    pub fn probabilities(&self) -> Result<Vec<T>> {
        let n = self.n_sites();
        if n > self.storage_cap {
            return Err(Error::CapExceeded {
                what: "materialised state vector",
                size: n,
                cap: self.storage_cap,
            });
        }
        let ln_z = self.ln_partition_function();
        let (low, _) = self.chunking();
        let mut p = vec![T::zero(); 1usize << n];
        p.par_chunks_mut(1usize << low)
            .enumerate()
            .for_each(|(c, slice)| {
                let base = (c as u64) << low;
                self.walk_chunk(c as u64, low, |s, _, w| {
                    slice[(s - base) as usize] = (w - ln_z).exp();
                });
            });
        Ok(p)
    }

    /// Moment tables in the reference basis; built once and cached.
    pub fn moment_tables(&self) -> Result<&MomentTables<T>> {
        if let Some(t) = self.tables.get() {
            return Ok(t);
        }
        let p = self.probabilities()?;
        let t = MomentTables::from_probabilities(p, self.n_sites(), self.params.reference_sign());
        Ok(self.tables.get_or_init(|| t))
    }

    /// Exact joint cumulant `κ(σ_{i_1}, …, σ_{i_r})` of a site multiset.
    pub fn joint_cumulant(&self, sites: &[Site]) -> Result<T> {
        let idx = sites
            .iter()
            .map(|s| self.index(s))
            .collect::<Result<Vec<_>>>()?;
        self.moment_tables()?.spin_cumulant(&idx)
    }
}

/// Exact moment tables of one system.
///
/// With `Y_i` the indicator that site `i` carries the non-reference spin,
/// `indicator[m] = E[Π_{i∈m} Y_i]` and `odd[m]` / `even[m]` are the
/// probabilities that an odd / even number of sites in `m` are non-reference.
/// All three are built from the probability vector by sums of nonnegative
/// terms, so they keep full relative precision even for tiny values.
#[derive(Debug, Clone)]
pub struct MomentTables<T> {
    n_sites: usize,
    reference: Sign,
    indicator: Vec<T>,
    even: Vec<T>,
    odd: Vec<T>,
}

impl<T: Real> MomentTables<T> {
    /// `p` is indexed by minus-mask.
    pub fn from_probabilities(p: Vec<T>, n_sites: usize, reference: Sign) -> Self {
        let len = 1usize << n_sites;
        assert_eq!(p.len(), len);
        // Re-index by non-reference mask.
        let q: Vec<T> = match reference {
            Sign::Plus => p,
            Sign::Minus => {
                let all = len - 1;
                (0..len).map(|s| p[s ^ all]).collect()
            }
        };

        let mut indicator = q.clone();
        for b in 0..n_sites {
            let bit = 1usize << b;
            for s in 0..len {
                if s & bit == 0 {
                    indicator[s] = indicator[s] + indicator[s | bit];
                }
            }
        }

        let mut even = q;
        let mut odd = vec![T::zero(); len];
        for b in 0..n_sites {
            let bit = 1usize << b;
            for s in 0..len {
                if s & bit == 0 {
                    let t = s | bit;
                    let (e0, o0, e1, o1) = (even[s], odd[s], even[t], odd[t]);
                    // Masks without b: the bit is ignored.
                    even[s] = e0 + e1;
                    odd[s] = o0 + o1;
                    // Masks with b: states carrying the bit flip parity.
                    even[t] = e0 + o1;
                    odd[t] = o0 + e1;
                }
            }
        }
        Self {
            n_sites,
            reference,
            indicator,
            even,
            odd,
        }
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn reference(&self) -> Sign {
        self.reference
    }

    /// `E[Π_{i∈mask} Y_i]`.
    pub fn indicator_moment(&self, mask: u64) -> T {
        self.indicator[mask as usize]
    }

    /// `⟨σ_A⟩` for the set `A = mask`.
    pub fn spin_moment(&self, mask: u64) -> T {
        let (sign, deficit) = self.signed_deficit(mask);
        sign * (T::one() - deficit)
    }

    /// `⟨σ_A⟩ = sign · (1 - deficit)` with `deficit = 2 P(odd)` exact to
    /// relative precision.
    pub fn signed_deficit(&self, mask: u64) -> (T, T) {
        let m = mask as usize;
        let flips = self.reference == Sign::Minus && mask.count_ones() % 2 == 1;
        let sign = if flips { -T::one() } else { T::one() };
        let total = self.even[m] + self.odd[m];
        (sign, (self.odd[m] + self.odd[m]) / total)
    }

    /// Joint cumulant of spins at a multiset of site indices.
    pub fn spin_cumulant(&self, indices: &[usize]) -> Result<T> {
        let r = indices.len();
        if r == 0 || r > MAX_ORDER {
            return Err(Error::OrderOutOfRange {
                order: r,
                max: MAX_ORDER,
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n_sites) {
            return Err(Error::Malformed(format!("site index {bad} out of range")));
        }
        if r == 1 {
            return Ok(self.spin_moment(1 << indices[0]));
        }
        // σ = ref (1 - 2Y): for r >= 2 the shift drops out and each argument
        // contributes a factor -2 ref.
        let kappa_y = cumulant_from_moments(r, |sub| {
            let support = (0..r)
                .filter(|k| sub >> k & 1 == 1)
                .fold(0u64, |m, k| m | 1 << indices[k]);
            self.indicator_moment(support)
        })?;
        let mut factor = T::of(-2.0).powi(r as i32);
        if self.reference == Sign::Minus && r % 2 == 1 {
            factor = -factor;
        }
        Ok(factor * kappa_y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sq(n: usize) -> LatticeBox {
        LatticeBox::with_shape(&[n, n]).unwrap()
    }

    fn params(dim: usize, beta: f64, h: f64, bc: BoundaryCondition) -> IsingParams<f64> {
        IsingParams::new(dim, beta, h, bc).unwrap()
    }

    /// Oracle: independent direct sum over all states, recomputing H from scratch.
    fn brute_ln_z(region: &LatticeBox, p: &IsingParams<f64>) -> f64 {
        let n = region.len();
        let mut z = 0.0;
        for s in 0..(1u64 << n) {
            let cfg = SpinConfiguration::from_state(region.clone(), s, p.bc);
            z += (-hamiltonian(&cfg, p).unwrap()).exp();
        }
        z.ln()
    }

    #[test]
    fn hamiltonian_examples() {
        let single = LatticeBox::single(Site::from([0, 0])).unwrap();
        let plus = SpinConfiguration::uniform(single.clone(), Sign::Plus, BoundaryCondition::Free);
        let p = params(2, 0.7, 0.3, BoundaryCondition::Free);
        assert_relative_eq!(hamiltonian(&plus, &p).unwrap(), -0.3);

        let minus = SpinConfiguration::uniform(single, Sign::Minus, BoundaryCondition::Plus);
        let p = params(2, 0.7, 0.0, BoundaryCondition::Plus);
        assert_relative_eq!(hamiltonian(&minus, &p).unwrap(), 4.0 * 0.7);

        let all_plus = SpinConfiguration::uniform(sq(2), Sign::Plus, BoundaryCondition::Free);
        let p = params(2, 0.4, 0.0, BoundaryCondition::Free);
        assert_relative_eq!(hamiltonian(&all_plus, &p).unwrap(), -4.0 * 0.4);
    }

    #[test]
    fn hamiltonian_rejects_bc_mismatch() {
        let cfg = SpinConfiguration::uniform(sq(2), Sign::Plus, BoundaryCondition::Free);
        let p = params(2, 0.4, 0.0, BoundaryCondition::Plus);
        assert_eq!(hamiltonian(&cfg, &p), Err(Error::BoundaryMismatch));
    }

    #[test]
    fn exterior_read_under_free_is_an_error() {
        let cfg = SpinConfiguration::uniform(sq(2), Sign::Plus, BoundaryCondition::Free);
        assert!(matches!(cfg.spin(&[5, 5]), Err(Error::FreeBoundaryRead(_))));
        let cfg = SpinConfiguration::uniform(sq(2), Sign::Plus, BoundaryCondition::Minus);
        assert_eq!(cfg.spin(&[5, 5]).unwrap(), -1);
    }

    #[test]
    fn partition_function_examples() {
        let (beta, h) = (0.37, 0.81);
        let single = LatticeBox::single(Site::from([0, 0])).unwrap();
        let sys = ExactSystem::new(single, params(2, beta, h, BoundaryCondition::Free)).unwrap();
        assert_relative_eq!(
            sys.partition_function(),
            2.0 * h.cosh(),
            max_relative = 1e-14
        );

        let pair = LatticeBox::with_shape(&[2]).unwrap();
        let sys = ExactSystem::new(pair, params(1, beta, 0.0, BoundaryCondition::Free)).unwrap();
        let want = 2.0 * beta.exp() + 2.0 * (-beta).exp();
        assert_relative_eq!(sys.partition_function(), want, max_relative = 1e-14);

        let sys = ExactSystem::new(sq(2), params(2, beta, 0.0, BoundaryCondition::Free)).unwrap();
        let want = 2.0 * (4.0 * beta).exp() + 12.0 + 2.0 * (-4.0 * beta).exp();
        assert_relative_eq!(sys.partition_function(), want, max_relative = 1e-14);
    }

    #[test]
    fn gray_walk_matches_brute_force() {
        for bc in [
            BoundaryCondition::Free,
            BoundaryCondition::Plus,
            BoundaryCondition::Minus,
        ] {
            for region in [
                sq(3),
                LatticeBox::with_shape(&[2, 2, 2]).unwrap(),
                LatticeBox::with_shape(&[3, 4]).unwrap(),
            ] {
                let p = params(region.dim(), 0.45, -0.3, bc);
                let sys = ExactSystem::new(region.clone(), p).unwrap();
                assert_relative_eq!(
                    sys.ln_partition_function(),
                    brute_ln_z(&region, &p),
                    max_relative = 1e-13
                );
            }
        }
    }

    #[test]
    fn large_beta_does_not_overflow() {
        let sys = ExactSystem::new(
            LatticeBox::with_shape(&[5, 5]).unwrap(),
            params(2, 5.0, 0.0, BoundaryCondition::Plus),
        )
        .unwrap();
        let ln_z = sys.ln_partition_function();
        assert!(ln_z.is_finite());
        // Ground state dominates: all-plus has -H = β |𝓔^b| = 5 * 60.
        assert!((ln_z - 300.0).abs() < 1e-6);
    }

    #[test]
    fn cap_is_enforced() {
        let r = LatticeBox::with_shape(&[6, 6]).unwrap();
        assert!(matches!(
            ExactSystem::new(r, params(2, 0.1, 0.0, BoundaryCondition::Free)),
            Err(Error::CapExceeded { .. })
        ));
    }

    #[test]
    fn expectation_examples() {
        let beta = 0.6;
        let single = LatticeBox::single(Site::from([0, 0])).unwrap();
        let sys = ExactSystem::new(single, params(2, beta, 0.0, BoundaryCondition::Free)).unwrap();
        assert!(sys.expectation(|s| f64::from(s[0])).abs() < 1e-15);

        let single1 = LatticeBox::single(Site::from([0])).unwrap();
        let sys = ExactSystem::new(single1, params(1, beta, 0.0, BoundaryCondition::Plus)).unwrap();
        assert_relative_eq!(
            sys.expectation(|s| f64::from(s[0])),
            (2.0 * beta).tanh(),
            max_relative = 1e-14
        );

        let pair = LatticeBox::with_shape(&[2]).unwrap();
        let sys = ExactSystem::new(pair, params(1, beta, 0.0, BoundaryCondition::Free)).unwrap();
        assert_relative_eq!(
            sys.expectation(|s| f64::from(s[0] * s[1])),
            beta.tanh(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn joint_cumulant_examples() {
        let beta = 0.3;
        let pair = LatticeBox::with_shape(&[2]).unwrap();
        let sys = ExactSystem::new(pair, params(1, beta, 0.0, BoundaryCondition::Free)).unwrap();
        let a = Site::from([0]);
        let b = Site::from([1]);
        assert!(sys.joint_cumulant(std::slice::from_ref(&a)).unwrap().abs() < 1e-15);
        assert_relative_eq!(
            sys.joint_cumulant(&[a.clone(), b.clone()]).unwrap(),
            beta.tanh(),
            max_relative = 1e-13
        );

        let sys = ExactSystem::new(
            LatticeBox::with_shape(&[2]).unwrap(),
            params(1, beta, 0.4, BoundaryCondition::Plus),
        )
        .unwrap();
        let m = sys
            .spin_product_expectation(std::slice::from_ref(&a))
            .unwrap();
        assert_relative_eq!(
            sys.joint_cumulant(std::slice::from_ref(&a)).unwrap(),
            m,
            max_relative = 1e-13
        );
        // Duplicated site: κ(σ,σ) = 1 - ⟨σ⟩².
        assert_relative_eq!(
            sys.joint_cumulant(&[a.clone(), a.clone()]).unwrap(),
            1.0 - m * m,
            max_relative = 1e-12
        );
        assert!(matches!(
            sys.joint_cumulant(&vec![a; 7]),
            Err(Error::OrderOutOfRange { .. })
        ));
    }

    /// Mixed central difference of `ln Z(t)` in every marked direction,
    /// Richardson-extrapolated once.
    fn mixed_derivative(sys: &ExactSystem<f64>, sites: &[Site], delta: f64) -> f64 {
        let r = sites.len();
        let at = |d: f64| {
            let mut acc = 0.0;
            for signs in 0..1u32 << r {
                let t: Vec<f64> = (0..r)
                    .map(|k| if signs >> k & 1 == 1 { -d } else { d })
                    .collect();
                let parity = if signs.count_ones() % 2 == 1 {
                    -1.0
                } else {
                    1.0
                };
                acc += parity * sys.ln_generating_sum(sites, &t).unwrap();
            }
            acc / (2.0 * d).powi(r as i32)
        };
        (4.0 * at(delta / 2.0) - at(delta)) / 3.0
    }

    #[test]
    fn cumulants_are_derivatives_of_the_generating_function() {
        let sys = ExactSystem::new(
            LatticeBox::with_shape(&[2, 2]).unwrap(),
            params(2, 0.4, 0.3, BoundaryCondition::Free),
        )
        .unwrap();
        let all: Vec<Site> = sys.region().sites().collect();
        for r in 1..=4 {
            let sites = &all[..r];
            let fd = mixed_derivative(&sys, sites, 1e-2);
            let k = sys.joint_cumulant(sites).unwrap();
            assert!((fd - k).abs() < 1e-5, "r={r}: {fd} vs {k}");
        }
    }

    #[test]
    fn vector_expectations_match_scalar_ones() {
        let sys = ExactSystem::new(
            LatticeBox::with_shape(&[3, 3]).unwrap(),
            params(2, 0.6, -0.2, BoundaryCondition::Plus),
        )
        .unwrap();
        let e = sys.expectations(3, |s, out| {
            out[0] = 1.0;
            out[1] = f64::from(s[4]);
            out[2] = f64::from(s[0] * s[8]);
        });
        assert!((e[0] - 1.0).abs() < 1e-13);
        assert!((e[1] - sys.expectation(|s| f64::from(s[4]))).abs() < 1e-13);
        assert!((e[2] - sys.expectation(|s| f64::from(s[0] * s[8]))).abs() < 1e-13);
    }

    #[test]
    fn spin_flip_symmetry_kills_odd_moments() {
        for shape in [[2usize, 2], [2, 3], [3, 3]] {
            let sys = ExactSystem::new(
                LatticeBox::with_shape(&shape).unwrap(),
                params(2, 0.7, 0.0, BoundaryCondition::Free),
            )
            .unwrap();
            let t = sys.moment_tables().unwrap();
            for mask in 0..(1u64 << sys.n_sites()) {
                if mask.count_ones() % 2 == 1 {
                    assert!(t.spin_moment(mask).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn gks_positivity_under_plus() {
        for shape in [[3usize, 3], [4, 4]] {
            for h in [0.0, 0.3] {
                let region = LatticeBox::with_shape(&shape).unwrap();
                let sys =
                    ExactSystem::new(region.clone(), params(2, 0.5, h, BoundaryCondition::Plus))
                        .unwrap();
                let o = region.site(0);
                for x in region.sites() {
                    assert!(sys.joint_cumulant(&[o.clone(), x]).unwrap() >= -1e-15);
                }
            }
        }
    }

    #[test]
    fn plus_boundary_raises_magnetization() {
        for beta in [0.1, 0.4, 1.0] {
            let region = sq(3);
            let c = Site::from([1, 1]);
            let plus = ExactSystem::new(
                region.clone(),
                params(2, beta, 0.0, BoundaryCondition::Plus),
            )
            .unwrap();
            let free =
                ExactSystem::new(region, params(2, beta, 0.0, BoundaryCondition::Free)).unwrap();
            let mp = plus
                .spin_product_expectation(std::slice::from_ref(&c))
                .unwrap();
            let mf = free.spin_product_expectation(&[c]).unwrap();
            assert!(mp >= mf);
        }
    }

    #[test]
    fn moment_tables_match_streaming_expectations() {
        for bc in [
            BoundaryCondition::Free,
            BoundaryCondition::Plus,
            BoundaryCondition::Minus,
        ] {
            let region = LatticeBox::with_shape(&[2, 3]).unwrap();
            let sys = ExactSystem::new(region.clone(), params(2, 0.8, 0.2, bc)).unwrap();
            let t = sys.moment_tables().unwrap();
            for mask in 0..(1u64 << 6) {
                let direct = sys.expectation(|s| {
                    f64::from(
                        (0..6)
                            .filter(|i| mask >> i & 1 == 1)
                            .fold(1i8, |p, i| p * s[i]),
                    )
                });
                assert!((t.spin_moment(mask) - direct).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn generic_over_f32() {
        let sys = ExactSystem::<f32>::new(
            sq(2),
            IsingParams::new(2, 0.3f32, 0.0, BoundaryCondition::Free).unwrap(),
        )
        .unwrap();
        let want = 2.0 * (1.2f32).exp() + 12.0 + 2.0 * (-1.2f32).exp();
        assert!((sys.partition_function() - want).abs() / want < 1e-5);
    }
}
