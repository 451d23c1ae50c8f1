//! Tree lengths of finite subsets of `Z^d`: the spanning-tree length `ℓ'_T`
//! and the rectilinear Steiner length `ℓ_T`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{dist, Site};

/// Largest terminal set accepted by [`steiner_tree_length`].
pub const STEINER_TERMINAL_CAP: usize = 8;

/// A nonempty set of sites of a common dimension (duplicates removed).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TerminalSet {
    sites: Vec<Site>,
}

impl TerminalSet {
    pub fn new(mut sites: Vec<Site>) -> Result<Self> {
        let first = sites.first().ok_or_else(|| Error::InvalidParameter {
            name: "terminals",
            reason: "terminal set is empty".into(),
        })?;
        let d = first.dim();
        if let Some(bad) = sites.iter().find(|s| s.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: bad.dim(),
            });
        }
        sites.sort();
        sites.dedup();
        Ok(Self { sites })
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.sites[0].dim()
    }
}

/// Prim's algorithm on the complete graph with L1 edge lengths.
pub fn mst_length_of(points: &[&[i32]]) -> u64 {
    let k = points.len();
    if k <= 1 {
        return 0;
    }
    let mut in_tree = vec![false; k];
    let mut best = vec![u64::MAX; k];
    best[0] = 0;
    let mut total = 0;
    for _ in 0..k {
        let (v, _) = best
            .iter()
            .enumerate()
            .filter(|(i, _)| !in_tree[*i])
            .min_by_key(|(_, &b)| b)
            .expect("a vertex remains");
        in_tree[v] = true;
        total += best[v];
        for u in 0..k {
            if !in_tree[u] {
                best[u] = best[u].min(dist(points[v], points[u]));
            }
        }
    }
    total
}

/// `ℓ'_T(A)`: minimum L1 length of a spanning tree on `A`.
pub fn mst_tree_length(a: &TerminalSet) -> u64 {
    let pts: Vec<&[i32]> = a.sites.iter().map(|s| s.coords()).collect();
    mst_length_of(&pts)
}

/// Vertices of the Hanan grid: every combination of terminal coordinates.
pub fn hanan_grid(a: &TerminalSet) -> Vec<Vec<i32>> {
    let d = a.dim();
    let axes: Vec<Vec<i32>> = (0..d)
        .map(|k| {
            let mut c: Vec<i32> = a.sites.iter().map(|s| s[k]).collect();
            c.sort_unstable();
            c.dedup();
            c
        })
        .collect();
    let mut out = vec![Vec::with_capacity(d)];
    for axis in &axes {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&c| {
                    let mut q = p.clone();
                    q.push(c);
                    q
                })
            })
            .collect();
    }
    out
}

/// `ℓ_T(A)`: exact rectilinear Steiner minimal tree length.
///
/// Dreyfus–Wagner over (Hanan vertex, terminal subset); shortest paths in
/// the Hanan grid graph are L1 distances.
pub fn steiner_tree_length(a: &TerminalSet) -> Result<u64> {
    let k = a.len();
    if k > STEINER_TERMINAL_CAP {
        return Err(Error::CapExceeded {
            what: "Steiner terminals",
            size: k,
            cap: STEINER_TERMINAL_CAP,
        });
    }
    if k <= 2 {
        return Ok(mst_tree_length(a));
    }
    let grid = hanan_grid(a);
    let nv = grid.len();
    let d: Vec<Vec<u64>> = grid
        .iter()
        .map(|p| grid.iter().map(|q| dist(p, q)).collect())
        .collect();
    let terminal_vertex: Vec<usize> = a
        .sites
        .iter()
        .map(|s| {
            grid.iter()
                .position(|p| p.as_slice() == s.coords())
                .expect("terminal on grid")
        })
        .collect();

    // Subsets of the first k-1 terminals; the last terminal is the root.
    let m = k - 1;
    let full = (1usize << m) - 1;
    let mut dp = vec![vec![u64::MAX; nv]; full + 1];
    for t in 0..m {
        dp[1 << t] = d[terminal_vertex[t]].clone();
    }
    for s in 1..=full {
        if s.count_ones() < 2 {
            continue;
        }
        // Merge at u: two subtrees meeting at u.
        let mut merged = vec![u64::MAX; nv];
        let low = s & s.wrapping_neg();
        let mut sub = (s - 1) & s;
        while sub > 0 {
            // Each unordered split once: require the lowest bit in `sub`.
            if sub & low != 0 {
                let (left, right) = (&dp[sub], &dp[s ^ sub]);
                for u in 0..nv {
                    let c = left[u].saturating_add(right[u]);
                    if c < merged[u] {
                        merged[u] = c;
                    }
                }
            }
            sub = (sub - 1) & s;
        }
        // Then connect u to v by a shortest path.
        let row = &mut dp[s];
        for (v, out) in row.iter_mut().enumerate() {
            *out = (0..nv)
                .map(|u| merged[u].saturating_add(d[u][v]))
                .min()
                .expect("grid nonempty");
        }
    }
    Ok(dp[full][terminal_vertex[m]])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwoFactorCheck {
    #[serde(rename = "lT")]
    pub l_t: u64,
    #[serde(rename = "lT_prime")]
    pub l_t_prime: u64,
    pub ok: bool,
}

/// Computes both lengths and checks `ℓ_T ≤ ℓ'_T ≤ 2 ℓ_T`.
pub fn check_two_factor(a: &TerminalSet) -> Result<TwoFactorCheck> {
    let l_t = steiner_tree_length(a)?;
    let l_t_prime = mst_tree_length(a);
    Ok(TwoFactorCheck {
        l_t,
        l_t_prime,
        ok: l_t <= l_t_prime && l_t_prime <= 2 * l_t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(points: &[[i32; 2]]) -> TerminalSet {
        TerminalSet::new(points.iter().map(|&p| Site::from(p)).collect()).unwrap()
    }

    /// Oracle: MST over terminals plus every subset of Hanan points.
    fn brute_steiner(a: &TerminalSet) -> u64 {
        let extra: Vec<Vec<i32>> = hanan_grid(a)
            .into_iter()
            .filter(|p| !a.sites().iter().any(|s| s.coords() == p.as_slice()))
            .collect();
        let mut best = u64::MAX;
        for mask in 0u64..(1 << extra.len()) {
            let mut pts: Vec<&[i32]> = a.sites().iter().map(|s| s.coords()).collect();
            pts.extend(
                (0..extra.len())
                    .filter(|i| mask >> i & 1 == 1)
                    .map(|i| extra[i].as_slice()),
            );
            best = best.min(mst_length_of(&pts));
        }
        best
    }

    #[test]
    fn mst_examples() {
        assert_eq!(mst_tree_length(&set(&[[3, 4]])), 0);
        assert_eq!(mst_tree_length(&set(&[[0, 0], [3, 4]])), 7);
        assert_eq!(mst_tree_length(&set(&[[0, 0], [2, 0], [1, 2]])), 5);
    }

    #[test]
    fn steiner_examples() {
        assert_eq!(steiner_tree_length(&set(&[[0, 0], [3, 4]])).unwrap(), 7);
        assert_eq!(
            steiner_tree_length(&set(&[[0, 0], [2, 0], [1, 2]])).unwrap(),
            4
        );
        assert_eq!(
            steiner_tree_length(&set(&[[0, 0], [3, 0], [7, 0]])).unwrap(),
            7
        );
        // Cross: four arms of length 2 meeting at the centre.
        assert_eq!(
            steiner_tree_length(&set(&[[0, 2], [2, 0], [4, 2], [2, 4]])).unwrap(),
            8
        );
    }

    #[test]
    fn two_factor_examples() {
        let c = check_two_factor(&set(&[[1, 1], [4, 5]])).unwrap();
        assert_eq!((c.l_t, c.l_t_prime, c.ok), (7, 7, true));
        let c = check_two_factor(&set(&[[0, 0], [2, 0], [1, 2]])).unwrap();
        assert_eq!((c.l_t, c.l_t_prime, c.ok), (4, 5, true));
    }

    #[test]
    fn cap_and_validation() {
        let many: Vec<[i32; 2]> = (0..9).map(|i| [i, i * i]).collect();
        assert!(matches!(
            steiner_tree_length(&set(&many)),
            Err(Error::CapExceeded { .. })
        ));
        assert!(TerminalSet::new(vec![]).is_err());
        assert!(TerminalSet::new(vec![Site::from([0, 0]), Site::from([0])]).is_err());
    }

    #[test]
    fn three_dimensional_corner() {
        // Three unit vectors: Steiner point at the origin gives 3, MST gives 4.
        let a = TerminalSet::new(vec![
            Site::from([1, 0, 0]),
            Site::from([0, 1, 0]),
            Site::from([0, 0, 1]),
        ])
        .unwrap();
        assert_eq!(steiner_tree_length(&a).unwrap(), 3);
        assert_eq!(mst_tree_length(&a), 4);
    }

    fn terminals(max_len: usize, lo: i32, hi: i32) -> impl Strategy<Value = TerminalSet> {
        proptest::collection::vec((lo..=hi, lo..=hi), 1..=max_len).prop_map(|v| {
            TerminalSet::new(v.into_iter().map(|(x, y)| Site::from([x, y])).collect()).unwrap()
        })
    }

    proptest! {
        #[test]
        fn dreyfus_wagner_matches_brute_force(a in terminals(4, 0, 5)) {
            prop_assert_eq!(steiner_tree_length(&a).unwrap(), brute_steiner(&a));
        }

        #[test]
        fn sandwich_holds(a in terminals(4, -5, 5)) {
            prop_assert!(check_two_factor(&a).unwrap().ok);
        }

        #[test]
        fn adding_a_terminal_never_shortens(a in terminals(5, -4, 4), x in -4i32..=4, y in -4i32..=4) {
            let mut more = a.sites().to_vec();
            more.push(Site::from([x, y]));
            let b = TerminalSet::new(more).unwrap();
            prop_assert!(steiner_tree_length(&b).unwrap() >= steiner_tree_length(&a).unwrap());
        }

        #[test]
        fn translation_invariance(a in terminals(5, -4, 4), dx in -10i32..10, dy in -10i32..10) {
            let shift = Site::from([dx, dy]);
            let b = TerminalSet::new(a.sites().iter().map(|s| s.offset(&shift)).collect()).unwrap();
            prop_assert_eq!(steiner_tree_length(&a).unwrap(), steiner_tree_length(&b).unwrap());
            prop_assert_eq!(mst_tree_length(&a), mst_tree_length(&b));
        }
    }
}
