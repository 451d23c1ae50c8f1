//! Markov chain Monte Carlo for boxes too large to enumerate.
//!
//! Random numbers come from `ChaCha8Rng::seed_from_u64(seed)` switched to
//! stream `stream`. Independent replicas share a seed and use their replica
//! index as the stream, so a chain is fully identified by `(seed, stream)`
//! and results do not depend on how chains are scheduled across threads.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{BoundaryCondition, IsingParams, SpinConfiguration};
use crate::lattice::{LatticeBox, Site};
use crate::stats;

pub const DEFAULT_BURN_IN: usize = 1000;
pub const DEFAULT_THINNING: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateKind {
    /// Lexicographic Metropolis sweeps.
    SingleFlip,
    /// A Metropolis sweep followed by one Wolff cluster move; `h = 0` only.
    ClusterAtZeroField,
}

/// Initial configuration of a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    /// Uniform in the boundary spin under `Plus`/`Minus`, random under `Free`.
    #[default]
    Auto,
    Plus,
    Minus,
    /// Independent fair spins drawn from the chain's generator.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub params: IsingParams<f64>,
    pub region: LatticeBox,
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_thinning")]
    pub thinning: usize,
    pub n_samples: usize,
    #[serde(default = "default_update")]
    pub update: UpdateKind,
    #[serde(default)]
    pub start: Start,
}

fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

fn default_thinning() -> usize {
    DEFAULT_THINNING
}

fn default_update() -> UpdateKind {
    UpdateKind::SingleFlip
}

impl ChainSpec {
    pub fn new(params: IsingParams<f64>, region: LatticeBox, seed: u64, n_samples: usize) -> Self {
        Self {
            params,
            region,
            seed,
            stream: 0,
            burn_in: DEFAULT_BURN_IN,
            thinning: DEFAULT_THINNING,
            n_samples,
            update: UpdateKind::SingleFlip,
            start: Start::Auto,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.region.dim() != self.params.dim {
            return Err(Error::DimensionMismatch {
                expected: self.params.dim,
                found: self.region.dim(),
            });
        }
        if self.thinning == 0 {
            return Err(Error::InvalidParameter {
                name: "thinning",
                reason: "must be >= 1".into(),
            });
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidParameter {
                name: "n_samples",
                reason: "must be >= 1".into(),
            });
        }
        if self.update == UpdateKind::ClusterAtZeroField && self.params.h != 0.0 {
            return Err(Error::InvalidParameter {
                name: "update",
                reason: format!("cluster updates need h = 0, got h = {}", self.params.h),
            });
        }
        Ok(())
    }
}

/// Source of the random decisions made by an update.
pub trait Coins {
    /// `true` with probability `p` (`p >= 1` is always `true`).
    fn accept(&mut self, p: f64) -> bool;
    /// Uniform choice in `0..n`.
    fn choose(&mut self, n: usize) -> usize;
}

impl Coins for ChaCha8Rng {
    fn accept(&mut self, p: f64) -> bool {
        p >= 1.0 || self.random::<f64>() < p
    }

    fn choose(&mut self, n: usize) -> usize {
        self.random_range(0..n)
    }
}

/// Local update rules over a fixed box, independent of the randomness source.
#[derive(Debug, Clone)]
pub struct Dynamics {
    n: usize,
    degree: usize,
    /// `degree` entries per site; `NONE` marks an exterior neighbour.
    neighbours: Vec<u32>,
    ghost: i8,
    /// `exp(-ΔH)` for flipping a spin `s` with neighbour sum `k`, indexed
    /// `[(s+1)/2][k + degree]`.
    boltzmann: [Vec<f64>; 2],
    /// Wolff bond probability `1 - e^{-2β}`.
    bond: f64,
}

const NONE: u32 = u32::MAX;

impl Dynamics {
    pub fn new(region: &LatticeBox, params: &IsingParams<f64>) -> Self {
        let n = region.len();
        let degree = 2 * region.dim();
        let mut neighbours = vec![NONE; n * degree];
        for i in 0..n {
            let site = region.site(i);
            for axis in 0..region.dim() {
                for (k, step) in [-1, 1].into_iter().enumerate() {
                    let nb = site.shifted(axis, step);
                    if let Some(j) = region.index_of(&nb) {
                        neighbours[i * degree + 2 * axis + k] = j as u32;
                    }
                }
            }
        }
        let ghost = params.bc.ghost().unwrap_or(0);
        let table = |s: f64| -> Vec<f64> {
            (0..=2 * degree)
                .map(|k| {
                    let sum = k as f64 - degree as f64;
                    (-2.0 * s * (params.beta * sum + params.h)).exp()
                })
                .collect()
        };
        Self {
            n,
            degree,
            neighbours,
            ghost,
            boltzmann: [table(-1.0), table(1.0)],
            bond: -(-2.0 * params.beta).exp_m1(),
        }
    }

    pub fn n_sites(&self) -> usize {
        self.n
    }

    #[inline]
    fn neighbour_sum(&self, spins: &[i8], i: usize) -> i32 {
        let base = i * self.degree;
        self.neighbours[base..base + self.degree]
            .iter()
            .map(|&j| {
                if j == NONE {
                    i32::from(self.ghost)
                } else {
                    i32::from(spins[j as usize])
                }
            })
            .sum()
    }

    /// Metropolis proposal at site `i`; returns whether it flipped.
    #[inline]
    pub fn metropolis_site<C: Coins>(&self, spins: &mut [i8], i: usize, coins: &mut C) -> bool {
        let s = spins[i];
        let k = self.neighbour_sum(spins, i);
        let p = self.boltzmann[usize::from(s > 0)][(k + self.degree as i32) as usize];
        if coins.accept(p) {
            spins[i] = -s;
            true
        } else {
            false
        }
    }

    /// One lexicographic sweep of Metropolis proposals.
    pub fn metropolis_sweep<C: Coins>(&self, spins: &mut [i8], coins: &mut C) {
        for i in 0..self.n {
            self.metropolis_site(spins, i, coins);
        }
    }

    /// One Wolff cluster move at zero field. The cluster grows over agreeing
    /// bonds, including bonds to frozen exterior spins; a cluster that bonds
    /// to the exterior is left unflipped. Returns the number of flipped sites.
    pub fn wolff_move<C: Coins>(
        &self,
        spins: &mut [i8],
        coins: &mut C,
        scratch: &mut WolffScratch,
    ) -> usize {
        let seed = coins.choose(self.n);
        let s = spins[seed];
        scratch.reset(self.n);
        scratch.in_cluster[seed] = true;
        scratch.stack.push(seed);
        scratch.members.push(seed);
        while let Some(i) = scratch.stack.pop() {
            let base = i * self.degree;
            for &j in &self.neighbours[base..base + self.degree] {
                if j == NONE {
                    if self.ghost == s && coins.accept(self.bond) {
                        return 0;
                    }
                    continue;
                }
                let j = j as usize;
                if !scratch.in_cluster[j] && spins[j] == s && coins.accept(self.bond) {
                    scratch.in_cluster[j] = true;
                    scratch.stack.push(j);
                    scratch.members.push(j);
                }
            }
        }
        for &i in &scratch.members {
            spins[i] = -s;
        }
        scratch.members.len()
    }
}

/// Reusable buffers for [`Dynamics::wolff_move`].
#[derive(Debug, Default, Clone)]
pub struct WolffScratch {
    in_cluster: Vec<bool>,
    stack: Vec<usize>,
    members: Vec<usize>,
}

impl WolffScratch {
    fn reset(&mut self, n: usize) {
        if self.in_cluster.len() != n {
            self.in_cluster = vec![false; n];
        } else {
            for &i in &self.members {
                self.in_cluster[i] = false;
            }
        }
        self.stack.clear();
        self.members.clear();
    }
}

/// A running chain.
#[derive(Debug, Clone)]
pub struct Chain {
    spec: ChainSpec,
    dynamics: Dynamics,
    spins: Vec<i8>,
    rng: ChaCha8Rng,
    scratch: WolffScratch,
}

impl Chain {
    pub fn new(spec: ChainSpec) -> Result<Self> {
        spec.validate()?;
        let dynamics = Dynamics::new(&spec.region, &spec.params);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(spec.stream);
        let n = spec.region.len();
        let start = match (spec.start, spec.params.bc) {
            (Start::Auto, BoundaryCondition::Plus) => Start::Plus,
            (Start::Auto, BoundaryCondition::Minus) => Start::Minus,
            (Start::Auto, BoundaryCondition::Free) => Start::Random,
            (s, _) => s,
        };
        let spins = match start {
            Start::Minus => vec![-1; n],
            Start::Random => (0..n)
                .map(|_| if rng.random::<bool>() { 1 } else { -1 })
                .collect(),
            _ => vec![1; n],
        };
        Ok(Self {
            spec,
            dynamics,
            spins,
            rng,
            scratch: WolffScratch::default(),
        })
    }

    pub fn spec(&self) -> &ChainSpec {
        &self.spec
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    pub fn configuration(&self) -> SpinConfiguration {
        SpinConfiguration::from_raw(
            self.spec.region.clone(),
            self.spins.clone(),
            self.spec.params.bc,
        )
    }

    pub fn sweep(&mut self) {
        self.dynamics
            .metropolis_sweep(&mut self.spins, &mut self.rng);
        if self.spec.update == UpdateKind::ClusterAtZeroField {
            self.dynamics
                .wolff_move(&mut self.spins, &mut self.rng, &mut self.scratch);
        }
    }

    pub fn sweeps(&mut self, count: usize) {
        for _ in 0..count {
            self.sweep();
        }
    }

    pub fn burn_in(&mut self) {
        self.sweeps(self.spec.burn_in);
    }

    /// Burns in, then calls `visit` on each of the `n_samples` thinned states.
    pub fn run<F: FnMut(&[i8])>(&mut self, mut visit: F) {
        self.burn_in();
        for _ in 0..self.spec.n_samples {
            self.sweeps(self.spec.thinning);
            visit(&self.spins);
        }
    }
}

/// Samples from one chain, stored as a flat spin array.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    spec: ChainSpec,
    n_sites: usize,
    spins: Vec<i8>,
}

impl SampleBatch {
    pub fn spec(&self) -> &ChainSpec {
        &self.spec
    }

    pub fn region(&self) -> &LatticeBox {
        &self.spec.region
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.spec.params.bc
    }

    pub fn len(&self) -> usize {
        self.spins.len() / self.n_sites
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    pub fn spins(&self, k: usize) -> &[i8] {
        &self.spins[k * self.n_sites..(k + 1) * self.n_sites]
    }

    pub fn configuration(&self, k: usize) -> SpinConfiguration {
        SpinConfiguration::from_raw(self.spec.region.clone(), self.spins(k).to_vec(), self.bc())
    }

    pub fn iter(&self) -> impl Iterator<Item = &[i8]> {
        self.spins.chunks_exact(self.n_sites)
    }

    /// Writes every sample to a spool file.
    pub fn write_spool(&self, path: &Path) -> Result<()> {
        let mut w = SpoolWriter::create(path, self.region())?;
        for s in self.iter() {
            w.write(s)?;
        }
        w.finish()
    }
}

/// Runs a chain to completion and keeps its samples.
pub fn run_chain(spec: &ChainSpec) -> Result<SampleBatch> {
    let mut chain = Chain::new(spec.clone())?;
    let n_sites = spec.region.len();
    let mut spins = Vec::with_capacity(n_sites * spec.n_samples);
    chain.run(|s| spins.extend_from_slice(s));
    Ok(SampleBatch {
        spec: spec.clone(),
        n_sites,
        spins,
    })
}

/// Runs independent chains in parallel; output order follows `specs`.
pub fn run_chains(specs: &[ChainSpec]) -> Result<Vec<SampleBatch>> {
    specs.par_iter().map(run_chain).collect()
}

/// Sample mean of an observable with a batch-means standard error.
pub fn estimate_observable<F>(batch: &SampleBatch, f: F) -> Result<(f64, f64)>
where
    F: Fn(&[i8]) -> f64,
{
    let values: Vec<f64> = batch.iter().map(f).collect();
    stats::batch_means(&values)
}

/// `σ_{x_1} ⋯ σ_{x_k}` as an observable on the spin array of `region`.
pub fn spin_product(region: &LatticeBox, sites: &[Site]) -> Result<impl Fn(&[i8]) -> f64> {
    let idx = sites
        .iter()
        .map(|s| {
            region
                .index_of(s)
                .ok_or_else(|| Error::SiteOutsideBox(s.to_vec()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(move |spins: &[i8]| f64::from(idx.iter().fold(1i8, |p, &i| p * spins[i])))
}

const SPOOL_MAGIC: &[u8; 4] = b"IWDG";
const SPOOL_VERSION: u16 = 1;
const SPOOL_MAX_DIM: usize = 4;
pub const SPOOL_HEADER_LEN: usize = 32;

/// Header layout (little endian): magic `IWDG`, version `u16`, `d` as `u16`,
/// record count `u64`, then `lo` and `hi` as four `i16` each (unused axes 0).
/// Each record packs one sign bit per site in lexicographic order, least
/// significant bit first, `1` meaning `+1`.
fn encode_header(region: &LatticeBox, count: u64) -> Result<[u8; SPOOL_HEADER_LEN]> {
    let d = region.dim();
    if d > SPOOL_MAX_DIM {
        return Err(Error::InvalidParameter {
            name: "dimension",
            reason: format!("spool files support d <= {SPOOL_MAX_DIM}"),
        });
    }
    let mut h = [0u8; SPOOL_HEADER_LEN];
    h[0..4].copy_from_slice(SPOOL_MAGIC);
    h[4..6].copy_from_slice(&SPOOL_VERSION.to_le_bytes());
    h[6..8].copy_from_slice(&(d as u16).to_le_bytes());
    h[8..16].copy_from_slice(&count.to_le_bytes());
    for (corner, offset) in [(region.lo(), 16), (region.hi(), 24)] {
        for (k, &c) in corner.iter().enumerate() {
            let c = i16::try_from(c).map_err(|_| Error::InvalidParameter {
                name: "box",
                reason: format!("corner coordinate {c} does not fit in a spool header"),
            })?;
            h[offset + 2 * k..offset + 2 * k + 2].copy_from_slice(&c.to_le_bytes());
        }
    }
    Ok(h)
}

fn decode_header(h: &[u8; SPOOL_HEADER_LEN]) -> Result<(LatticeBox, u64)> {
    if &h[0..4] != SPOOL_MAGIC {
        return Err(Error::Malformed("not a spool file".into()));
    }
    let version = u16::from_le_bytes([h[4], h[5]]);
    if version != SPOOL_VERSION {
        return Err(Error::Malformed(format!(
            "unsupported spool version {version}"
        )));
    }
    let d = usize::from(u16::from_le_bytes([h[6], h[7]]));
    if d == 0 || d > SPOOL_MAX_DIM {
        return Err(Error::Malformed(format!("bad dimension {d}")));
    }
    let count = u64::from_le_bytes(h[8..16].try_into().expect("8 bytes"));
    let corner = |offset: usize| -> Site {
        Site::new(
            (0..d)
                .map(|k| {
                    i32::from(i16::from_le_bytes([
                        h[offset + 2 * k],
                        h[offset + 2 * k + 1],
                    ]))
                })
                .collect(),
        )
    };
    Ok((LatticeBox::new(corner(16), corner(24))?, count))
}

fn record_len(n_sites: usize) -> usize {
    n_sites.div_ceil(8)
}

/// Streams configurations to a spool file.
pub struct SpoolWriter {
    out: BufWriter<File>,
    region: LatticeBox,
    count: u64,
    record: Vec<u8>,
}

impl SpoolWriter {
    pub fn create(path: &Path, region: &LatticeBox) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(&encode_header(region, 0)?)?;
        Ok(Self {
            out,
            region: region.clone(),
            count: 0,
            record: vec![0; record_len(region.len())],
        })
    }

    pub fn write(&mut self, spins: &[i8]) -> Result<()> {
        if spins.len() != self.region.len() {
            return Err(Error::Malformed(
                "record length does not match the box".into(),
            ));
        }
        self.record.fill(0);
        for (i, &s) in spins.iter().enumerate() {
            if s > 0 {
                self.record[i / 8] |= 1 << (i % 8);
            }
        }
        self.out.write_all(&self.record)?;
        self.count += 1;
        Ok(())
    }

    /// Flushes and records the final count in the header.
    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        let mut file = self
            .out
            .into_inner()
            .map_err(|e| Error::Io(e.error().to_string()))?;
        file.seek(SeekFrom::Start(0))?;
        file.write_all(&encode_header(&self.region, self.count)?)?;
        file.flush()?;
        Ok(())
    }
}

/// Reads a whole spool file.
pub fn read_spool(path: &Path) -> Result<(LatticeBox, Vec<Vec<i8>>)> {
    let mut input = BufReader::new(File::open(path)?);
    let mut header = [0u8; SPOOL_HEADER_LEN];
    input.read_exact(&mut header)?;
    let (region, count) = decode_header(&header)?;
    let n = region.len();
    let mut record = vec![0u8; record_len(n)];
    let mut out = Vec::new();
    for _ in 0..count {
        input.read_exact(&mut record)?;
        out.push(
            (0..n)
                .map(|i| {
                    if record[i / 8] >> (i % 8) & 1 == 1 {
                        1
                    } else {
                        -1
                    }
                })
                .collect(),
        );
    }
    Ok((region, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::ExactSystem;

    /// Scripted coins: replays a fixed list of outcomes and records the
    /// probability of the path; used to enumerate an update's exact kernel.
    struct Script {
        outcomes: Vec<usize>,
        pos: usize,
        prob: f64,
        /// Arity of each decision taken, for backtracking.
        arities: Vec<usize>,
    }

    impl Script {
        fn next(&mut self, arity: usize) -> usize {
            let o = if self.pos < self.outcomes.len() {
                self.outcomes[self.pos]
            } else {
                self.outcomes.push(0);
                0
            };
            self.arities.truncate(self.pos);
            self.arities.push(arity);
            self.pos += 1;
            o
        }
    }

    impl Coins for Script {
        fn accept(&mut self, p: f64) -> bool {
            if p >= 1.0 {
                return true;
            }
            let yes = self.next(2) == 0;
            self.prob *= if yes { p } else { 1.0 - p };
            yes
        }

        fn choose(&mut self, n: usize) -> usize {
            let k = self.next(n);
            self.prob /= n as f64;
            k
        }
    }

    /// Transition row of `step` from state `from`, by depth-first enumeration
    /// of every decision sequence.
    fn kernel_row<F>(n: usize, from: u64, step: F) -> Vec<f64>
    where
        F: Fn(&mut [i8], &mut Script),
    {
        let mut row = vec![0.0; 1 << n];
        let mut outcomes: Vec<usize> = Vec::new();
        loop {
            let mut spins: Vec<i8> = (0..n)
                .map(|i| if from >> i & 1 == 1 { -1 } else { 1 })
                .collect();
            let mut script = Script {
                outcomes: outcomes.clone(),
                pos: 0,
                prob: 1.0,
                arities: Vec::new(),
            };
            step(&mut spins, &mut script);
            let to = spins
                .iter()
                .enumerate()
                .filter(|(_, &s)| s < 0)
                .fold(0usize, |m, (i, _)| m | 1 << i);
            row[to] += script.prob;
            // Advance to the next decision sequence.
            let mut taken = script.outcomes;
            taken.truncate(script.pos);
            let arities = script.arities;
            loop {
                match taken.pop() {
                    None => return row,
                    Some(o) => {
                        let arity = arities[taken.len()];
                        if o + 1 < arity {
                            taken.push(o + 1);
                            break;
                        }
                    }
                }
            }
            outcomes = taken;
        }
    }

    fn kernel<F>(n: usize, step: F) -> Vec<Vec<f64>>
    where
        F: Fn(&mut [i8], &mut Script) + Copy,
    {
        (0..1u64 << n).map(|s| kernel_row(n, s, step)).collect()
    }

    fn stationary(p: &[Vec<f64>]) -> Vec<f64> {
        let n = p.len();
        let mut v = vec![1.0 / n as f64; n];
        for _ in 0..200_000 {
            let mut next = vec![0.0; n];
            for (i, row) in p.iter().enumerate() {
                for (j, &x) in row.iter().enumerate() {
                    next[j] += v[i] * x;
                }
            }
            let diff: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
            v = next;
            if diff < 1e-16 {
                break;
            }
        }
        v
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    fn two_by_two() -> LatticeBox {
        LatticeBox::with_shape(&[2, 2]).unwrap()
    }

    #[test]
    fn single_flip_kernel_is_stationary_and_reversible_per_site() {
        for bc in [
            BoundaryCondition::Free,
            BoundaryCondition::Plus,
            BoundaryCondition::Minus,
        ] {
            let params = IsingParams::new(2, 0.45, 0.2, bc).unwrap();
            let region = two_by_two();
            let dynamics = Dynamics::new(&region, &params);
            let gibbs = ExactSystem::new(region, params)
                .unwrap()
                .probabilities()
                .unwrap();

            let sweep = kernel(4, |s, c| dynamics.metropolis_sweep(s, c));
            for row in &sweep {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            }
            assert!(max_diff(&stationary(&sweep), &gibbs) < 1e-10);

            for site in 0..4 {
                let p = kernel(4, |s, c| {
                    dynamics.metropolis_site(s, site, c);
                });
                for a in 0..16 {
                    for b in 0..16 {
                        let lhs = gibbs[a] * p[a][b];
                        let rhs = gibbs[b] * p[b][a];
                        assert!((lhs - rhs).abs() < 1e-15, "detailed balance at {a}->{b}");
                    }
                }
            }
        }
    }

    #[test]
    fn wolff_kernel_preserves_gibbs_law() {
        for bc in [
            BoundaryCondition::Free,
            BoundaryCondition::Plus,
            BoundaryCondition::Minus,
        ] {
            let params = IsingParams::new(2, 0.6, 0.0, bc).unwrap();
            let region = two_by_two();
            let dynamics = Dynamics::new(&region, &params);
            let gibbs = ExactSystem::new(region, params)
                .unwrap()
                .probabilities()
                .unwrap();
            let p = kernel(4, |s, c| {
                dynamics.wolff_move(s, c, &mut WolffScratch::default());
            });
            // π P = π
            let mut pushed = vec![0.0; 16];
            for (a, row) in p.iter().enumerate() {
                for (b, &x) in row.iter().enumerate() {
                    pushed[b] += gibbs[a] * x;
                }
            }
            assert!(max_diff(&pushed, &gibbs) < 1e-12);
        }
    }

    #[test]
    fn cluster_updates_require_zero_field() {
        let mut spec = ChainSpec::new(
            IsingParams::new(2, 0.2, 0.1, BoundaryCondition::Free).unwrap(),
            two_by_two(),
            1,
            10,
        );
        spec.update = UpdateKind::ClusterAtZeroField;
        assert!(matches!(
            Chain::new(spec),
            Err(Error::InvalidParameter { .. })
        ));
    }

    #[test]
    fn same_spec_same_samples() {
        let mut spec = ChainSpec::new(
            IsingParams::new(2, 0.3, 0.0, BoundaryCondition::Free).unwrap(),
            LatticeBox::with_shape(&[4, 4]).unwrap(),
            99,
            50,
        );
        spec.burn_in = 20;
        spec.thinning = 2;
        let a = run_chain(&spec).unwrap();
        let b = run_chains(&[spec.clone(), spec.clone()]).unwrap();
        assert_eq!(a, b[0]);
        assert_eq!(a, b[1]);
        spec.stream = 1;
        assert_ne!(a, run_chain(&spec).unwrap());
    }

    #[test]
    fn constant_observable_has_zero_error() {
        let mut spec = ChainSpec::new(
            IsingParams::new(1, 0.3, 0.0, BoundaryCondition::Free).unwrap(),
            LatticeBox::with_shape(&[5]).unwrap(),
            5,
            100,
        );
        spec.burn_in = 5;
        spec.thinning = 1;
        let batch = run_chain(&spec).unwrap();
        assert_eq!(estimate_observable(&batch, |_| 1.0).unwrap(), (1.0, 0.0));
    }

    #[test]
    fn infinite_temperature_is_fair() {
        let mut spec = ChainSpec::new(
            IsingParams::new(2, 0.0, 0.0, BoundaryCondition::Free).unwrap(),
            LatticeBox::with_shape(&[3, 3]).unwrap(),
            3,
            4000,
        );
        spec.burn_in = 10;
        spec.thinning = 1;
        let batch = run_chain(&spec).unwrap();
        let f = spin_product(batch.region(), &[Site::from([0, 0])]).unwrap();
        let (m, se) = estimate_observable(&batch, f).unwrap();
        assert!(m.abs() <= 3.0 * se, "{m} ± {se}");

        spec.params.h = 10.0;
        let batch = run_chain(&spec).unwrap();
        let f = spin_product(batch.region(), &[Site::from([0, 0])]).unwrap();
        assert!(estimate_observable(&batch, f).unwrap().0 >= 0.999);
    }

    #[test]
    fn spool_round_trip() {
        let mut spec = ChainSpec::new(
            IsingParams::new(2, 0.3, 0.0, BoundaryCondition::Plus).unwrap(),
            LatticeBox::new(Site::from([-2, -1]), Site::from([2, 1])).unwrap(),
            17,
            7,
        );
        spec.burn_in = 3;
        spec.thinning = 1;
        let batch = run_chain(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.spool");
        batch.write_spool(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"IWDG");
        assert_eq!(bytes.len(), SPOOL_HEADER_LEN + 7 * 2);
        let (region, records) = read_spool(&path).unwrap();
        assert_eq!(&region, batch.region());
        assert_eq!(records.len(), 7);
        for (k, r) in records.iter().enumerate() {
            assert_eq!(r.as_slice(), batch.spins(k));
        }
    }
}
