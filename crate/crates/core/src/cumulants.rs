//! Joint cumulants: the set-partition moment-cumulant formula, plug-in
//! estimates from samples, and the alternating-product quantity `Q`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Site;
use crate::sampler::SampleBatch;
use crate::scalar::Real;
use crate::stats;

/// Highest supported cumulant order.
pub const MAX_ORDER: usize = 6;

/// Highest order accepted by the sample-based estimator.
pub const MAX_ESTIMATED_ORDER: usize = 4;

/// A partition of `{0, …, r-1}`; each block is a bitmask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SetPartition {
    pub blocks: Vec<u32>,
}

impl SetPartition {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

fn generate_partitions(r: usize) -> Vec<SetPartition> {
    // Restricted growth strings: a[0] = 0, a[i] <= 1 + max(a[..i]).
    let mut out = Vec::new();
    if r == 0 {
        return out;
    }
    let mut a = vec![0usize; r];
    loop {
        let nblocks = a.iter().max().map_or(0, |m| m + 1);
        let mut blocks = vec![0u32; nblocks];
        for (i, &b) in a.iter().enumerate() {
            blocks[b] |= 1 << i;
        }
        out.push(SetPartition { blocks });

        // Next string in lexicographic order.
        let mut i = r - 1;
        loop {
            if i == 0 {
                return out;
            }
            let prefix_max = a[..i].iter().copied().max().unwrap_or(0);
            if a[i] <= prefix_max {
                a[i] += 1;
                for x in &mut a[i + 1..] {
                    *x = 0;
                }
                break;
            }
            i -= 1;
        }
    }
}

/// All set partitions of `{0, …, r-1}`, generated once per `r`.
pub fn set_partitions(r: usize) -> Result<&'static [SetPartition]> {
    static CACHE: [OnceLock<Vec<SetPartition>>; MAX_ORDER + 1] =
        [const { OnceLock::new() }; MAX_ORDER + 1];
    if r == 0 || r > MAX_ORDER {
        return Err(Error::OrderOutOfRange {
            order: r,
            max: MAX_ORDER,
        });
    }
    Ok(CACHE[r].get_or_init(|| generate_partitions(r)))
}

/// `κ(X_0, …, X_{r-1}) = Σ_π (-1)^{|π|-1} (|π|-1)! Π_{B∈π} E[Π_{i∈B} X_i]`.
///
/// `moment(mask)` must return `E[Π_{i∈mask} X_i]` for every nonempty
/// `mask ⊆ {0, …, r-1}`; each mask is queried once.
pub fn cumulant_from_moments<T: Real, F>(r: usize, mut moment: F) -> Result<T>
where
    F: FnMut(u32) -> T,
{
    let parts = set_partitions(r)?;
    let full = (1u32 << r) - 1;
    let m: Vec<T> = (0..=full)
        .map(|mask| if mask == 0 { T::one() } else { moment(mask) })
        .collect();
    let mut factorial = [T::one(); MAX_ORDER];
    for k in 1..MAX_ORDER {
        factorial[k] = factorial[k - 1] * T::of_usize(k);
    }
    let mut total = T::zero();
    for p in parts {
        let k = p.len();
        let prod = p
            .blocks
            .iter()
            .fold(T::one(), |acc, &b| acc * m[b as usize]);
        let coeff = if k % 2 == 1 {
            factorial[k - 1]
        } else {
            -factorial[k - 1]
        };
        total = total + coeff * prod;
    }
    Ok(total)
}

/// Cumulant of the indicators `X_i = (σ_i + 1)/2` from the spin cumulant.
pub fn spin_to_indicator_cumulant<T: Real>(kappa_sigma: T, r: usize) -> Result<T> {
    if r < 2 {
        return Err(Error::InvalidParameter {
            name: "r",
            reason: "the shift changes first cumulants; need r >= 2".into(),
        });
    }
    Ok(kappa_sigma / T::of(2.0).powi(r as i32))
}

fn q_exponent(delta: u32) -> i32 {
    if delta.count_ones().is_multiple_of(2) {
        1
    } else {
        -1
    }
}

/// `Q = Π_{∅≠δ⊆A} ⟨Π_{j∈δ} Y_j⟩^{(-1)^{|δ|}}` for `|A| = r`.
///
/// For `r = 2` this is `⟨Y_1Y_2⟩ / (⟨Y_1⟩⟨Y_2⟩)`.
pub fn q_quantity<T: Real, F>(r: usize, mut expectation: F) -> Result<T>
where
    F: FnMut(u32) -> T,
{
    check_q_order(r)?;
    let mut q = T::one();
    for delta in 1..(1u32 << r) {
        let e = expectation(delta);
        if e == T::zero() {
            return Err(Error::VanishingExpectation);
        }
        q = q * e.powi(q_exponent(delta));
    }
    Ok(q)
}

/// `Q - 1` computed without cancellation.
///
/// `near_one(δ)` returns `(sign, deficit)` with `⟨Π_{j∈δ} Y_j⟩ = sign·(1 - deficit)`
/// and `deficit` known to full relative precision.
pub fn q_deviation<T: Real, F>(r: usize, mut near_one: F) -> Result<T>
where
    F: FnMut(u32) -> (T, T),
{
    check_q_order(r)?;
    let mut log_abs = T::zero();
    let mut negative = false;
    for delta in 1..(1u32 << r) {
        let (sign, deficit) = near_one(delta);
        if deficit >= T::one() {
            return Err(Error::VanishingExpectation);
        }
        log_abs = log_abs + T::of(f64::from(q_exponent(delta))) * (-deficit).ln_1p();
        negative ^= sign < T::zero();
    }
    Ok(if negative {
        -log_abs.exp() - T::one()
    } else {
        log_abs.exp_m1()
    })
}

fn check_q_order(r: usize) -> Result<()> {
    if r == 0 || r > MAX_ORDER {
        return Err(Error::OrderOutOfRange {
            order: r,
            max: MAX_ORDER,
        });
    }
    Ok(())
}

/// Plug-in estimate of `κ(σ_{x_1}, …, σ_{x_r})` from a sample batch, with a
/// batch-means standard error.
pub fn estimated_cumulant(batch: &SampleBatch, sites: &[Site]) -> Result<(f64, f64)> {
    let r = sites.len();
    if r == 0 || r > MAX_ESTIMATED_ORDER {
        return Err(Error::OrderOutOfRange {
            order: r,
            max: MAX_ESTIMATED_ORDER,
        });
    }
    let region = batch.region();
    let idx = sites
        .iter()
        .map(|s| {
            region
                .index_of(s)
                .ok_or_else(|| Error::SiteOutsideBox(s.to_vec()))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = batch.len();
    let n_batches = stats::default_batch_count(n);
    if n < 2 * n_batches {
        return Err(Error::InsufficientSamples {
            needed: 2 * n_batches,
            have: n,
        });
    }

    let plug_in = |range: std::ops::Range<usize>| -> Result<f64> {
        let full = 1usize << r;
        let mut sums = vec![0i64; full];
        for k in range.clone() {
            let spins = batch.spins(k);
            for (mask, s) in sums.iter_mut().enumerate().skip(1) {
                let p = (0..r)
                    .filter(|b| mask >> b & 1 == 1)
                    .fold(1i64, |acc, b| acc * i64::from(spins[idx[b]]));
                *s += p;
            }
        }
        let len = range.len() as f64;
        cumulant_from_moments(r, |mask| sums[mask as usize] as f64 / len)
    };

    let value = plug_in(0..n)?;
    let per_batch = stats::batch_ranges(n, n_batches)
        .into_iter()
        .map(plug_in)
        .collect::<Result<Vec<_>>>()?;
    let (_, se) = stats::mean_and_standard_error(&per_batch);
    Ok((value, se))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Exact,
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CumulantEntry {
    pub value: f64,
    pub std_error: Option<f64>,
}

/// Joint cumulants keyed by site multiset (stored sorted).
#[derive(Debug, Clone, PartialEq)]
pub struct CumulantTable {
    provenance: Provenance,
    entries: BTreeMap<Vec<Site>, CumulantEntry>,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    sites: String,
    value: f64,
    std_error: Option<f64>,
    provenance: Provenance,
}

fn multiset_key(sites: &[Site]) -> Vec<Site> {
    let mut key = sites.to_vec();
    key.sort();
    key
}

fn format_sites(sites: &[Site]) -> String {
    sites
        .iter()
        .map(|s| {
            s.iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect::<Vec<_>>()
        .join(";")
}

fn parse_sites(text: &str) -> Result<Vec<Site>> {
    text.split(';')
        .map(|part| {
            part.split(',')
                .map(|c| {
                    c.trim()
                        .parse::<i32>()
                        .map_err(|e| Error::Malformed(format!("coordinate {c:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()
                .map(Site::new)
        })
        .collect()
}

impl CumulantTable {
    pub fn new(provenance: Provenance) -> Self {
        Self {
            provenance,
            entries: BTreeMap::new(),
        }
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, sites: &[Site], entry: CumulantEntry) -> Result<()> {
        match (self.provenance, entry.std_error) {
            (Provenance::Exact, Some(_)) => {
                return Err(Error::Malformed("exact entries carry no std_error".into()))
            }
            (Provenance::Estimated, None) => {
                return Err(Error::Malformed(
                    "estimated entries need a std_error".into(),
                ))
            }
            _ => {}
        }
        if sites.is_empty() {
            return Err(Error::Malformed("empty site multiset".into()));
        }
        self.entries.insert(multiset_key(sites), entry);
        Ok(())
    }

    pub fn insert_exact(&mut self, sites: &[Site], value: f64) -> Result<()> {
        self.insert(
            sites,
            CumulantEntry {
                value,
                std_error: None,
            },
        )
    }

    pub fn insert_estimated(&mut self, sites: &[Site], value: f64, std_error: f64) -> Result<()> {
        self.insert(
            sites,
            CumulantEntry {
                value,
                std_error: Some(std_error),
            },
        )
    }

    /// Lookup is insensitive to the order of `sites`.
    pub fn get(&self, sites: &[Site]) -> Option<&CumulantEntry> {
        self.entries.get(&multiset_key(sites))
    }

    pub fn require(&self, sites: &[Site]) -> Result<&CumulantEntry> {
        self.get(sites)
            .ok_or_else(|| Error::MissingEntry(format_sites(sites)))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[Site], &CumulantEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_slice(), v))
    }

    /// CSV with columns `sites,value,std_error,provenance`; sites are
    /// comma-separated coordinates joined by `;`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sites", "value", "std_error", "provenance"])?;
        for (sites, e) in &self.entries {
            w.write_record([
                format_sites(sites),
                crate::format::float(e.value),
                e.std_error.map(crate::format::float).unwrap_or_default(),
                format!("{:?}", self.provenance),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads [`write_csv`](Self::write_csv) output; lines starting with `#`
    /// are skipped.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(input);
        let mut table: Option<Self> = None;
        for row in rdr.deserialize() {
            let row: CsvRow = row?;
            let t = table.get_or_insert_with(|| Self::new(row.provenance));
            if t.provenance != row.provenance {
                return Err(Error::Malformed("mixed provenance in one table".into()));
            }
            t.insert(
                &parse_sites(&row.sites)?,
                CumulantEntry {
                    value: row.value,
                    std_error: row.std_error,
                },
            )?;
        }
        table.ok_or_else(|| Error::Malformed("empty cumulant table".into()))
    }
}
