//! Contours of configurations under the `+` boundary condition.
//!
//! A face is the unit `(d-1)`-cell separating the cube of a site `c` from
//! that of `c + e_k`; it is stored as `(c, k)`. Faces between disagreeing
//! spins (with `+1` outside the box) form the boundary of the union of
//! minus cubes; its connected components, with faces adjacent when they
//! share a `(d-2)`-cell, are the contours.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gibbs::{BoundaryCondition, SpinConfiguration};
use crate::lattice::{LatticeBox, Site};
use crate::scalar::Real;

/// Default limit on box size for configuration-based contour sums.
pub const DEFAULT_CONTOUR_CAP: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Face {
    /// The cube on the lower side along `axis`.
    pub lower: Site,
    pub axis: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contour {
    pub faces: Vec<Face>,
    /// Box sites inside the contour, in lexicographic order.
    pub interior: Vec<Site>,
}

impl Contour {
    /// `|γ|`, the number of faces.
    pub fn len(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }
}

/// Face geometry of one box, reusable across configurations.
#[derive(Debug, Clone)]
pub struct ContourGeometry {
    region: LatticeBox,
    faces: Vec<Face>,
    /// Endpoints of each face: box indices, `None` for the exterior cube.
    ends: Vec<(Option<usize>, Option<usize>)>,
    /// Faces sharing a `(d-2)`-cell with each face.
    adjacent: Vec<Vec<usize>>,
}

impl ContourGeometry {
    pub fn new(region: &LatticeBox) -> Self {
        let d = region.dim();
        let mut faces = Vec::new();
        let mut ends = Vec::new();
        for c in region.sites() {
            let ci = region.index_of(&c);
            for axis in 0..d {
                let up = c.shifted(axis, 1);
                faces.push(Face {
                    lower: c.clone(),
                    axis,
                });
                ends.push((ci, region.index_of(&up)));
                let down = c.shifted(axis, -1);
                if !region.contains(&down) {
                    faces.push(Face { lower: down, axis });
                    ends.push((None, ci));
                }
            }
        }
        // (d-2)-cells in doubled coordinates: face centre ± e_j for j ≠ axis.
        let mut ridges: HashMap<Vec<i32>, Vec<usize>> = HashMap::new();
        for (f, face) in faces.iter().enumerate() {
            let mut centre: Vec<i32> = face.lower.iter().map(|&x| 2 * x).collect();
            centre[face.axis] += 1;
            for j in (0..d).filter(|&j| j != face.axis) {
                for step in [-1, 1] {
                    let mut r = centre.clone();
                    r[j] += step;
                    ridges.entry(r).or_default().push(f);
                }
            }
        }
        let mut adjacent = vec![Vec::new(); faces.len()];
        for members in ridges.values() {
            for &a in members {
                for &b in members {
                    if a != b {
                        adjacent[a].push(b);
                    }
                }
            }
        }
        for list in &mut adjacent {
            list.sort_unstable();
            list.dedup();
        }
        Self {
            region: region.clone(),
            faces,
            ends,
            adjacent,
        }
    }

    pub fn region(&self) -> &LatticeBox {
        &self.region
    }

    /// Number of faces, i.e. `|𝓔^b_Λ|`.
    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    fn active(&self, spins: &[i8]) -> Vec<bool> {
        let read = |i: Option<usize>| i.map_or(1, |k| spins[k]);
        self.ends.iter().map(|&(a, b)| read(a) != read(b)).collect()
    }

    /// Face sets of the contours, as lists of face ids.
    fn components(&self, spins: &[i8]) -> Vec<Vec<usize>> {
        let active = self.active(spins);
        let mut seen = vec![false; self.faces.len()];
        let mut out = Vec::new();
        for start in 0..self.faces.len() {
            if !active[start] || seen[start] {
                continue;
            }
            seen[start] = true;
            let mut stack = vec![start];
            let mut comp = Vec::new();
            while let Some(f) = stack.pop() {
                comp.push(f);
                for &g in &self.adjacent[f] {
                    if active[g] && !seen[g] {
                        seen[g] = true;
                        stack.push(g);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Sum of contour lengths: the number of disagreeing faces.
    pub fn total_length(&self, spins: &[i8]) -> usize {
        self.active(spins).into_iter().filter(|&a| a).count()
    }

    /// Box indices inside a set of faces: sites with an odd number of the
    /// set's first-axis faces strictly below them along that axis.
    fn interior_mask(&self, faces: &[usize]) -> Vec<bool> {
        let mut toggles: HashMap<Vec<i32>, Vec<i32>> = HashMap::new();
        for &f in faces {
            let face = &self.faces[f];
            if face.axis == 0 {
                let mut transverse = face.lower.coords().to_vec();
                let x0 = transverse[0];
                transverse[0] = 0;
                toggles.entry(transverse).or_default().push(x0);
            }
        }
        self.region
            .sites()
            .map(|s| {
                let mut transverse = s.coords().to_vec();
                let x0 = transverse[0];
                transverse[0] = 0;
                toggles
                    .get(&transverse)
                    .map_or(0, |xs| xs.iter().filter(|&&c| c < x0).count())
                    % 2
                    == 1
            })
            .collect()
    }

    pub fn contours(&self, spins: &[i8]) -> Vec<Contour> {
        self.components(spins)
            .into_iter()
            .map(|comp| {
                let inside = self.interior_mask(&comp);
                Contour {
                    faces: comp.iter().map(|&f| self.faces[f].clone()).collect(),
                    interior: inside
                        .iter()
                        .enumerate()
                        .filter(|(_, &b)| b)
                        .map(|(i, _)| self.region.site(i))
                        .collect(),
                }
            })
            .collect()
    }

    /// `Π_γ (-1)^{|A ∩ Int γ|} e^{-2β|γ|}`, as (sign, total length).
    fn signed_term(&self, spins: &[i8], marked: &[usize]) -> (bool, usize) {
        let mut negative = false;
        let mut length = 0;
        for comp in self.components(spins) {
            length += comp.len();
            if !marked.is_empty() {
                let inside = self.interior_mask(&comp);
                let hits = marked.iter().filter(|&&i| inside[i]).count();
                negative ^= hits % 2 == 1;
            }
        }
        (negative, length)
    }
}

/// `Γ'(ω)` for a configuration with `+` boundary condition.
pub fn extract_contours(cfg: &SpinConfiguration) -> Result<Vec<Contour>> {
    if cfg.bc() != BoundaryCondition::Plus {
        return Err(Error::BoundaryMismatch);
    }
    Ok(ContourGeometry::new(cfg.region()).contours(cfg.spins()))
}

fn check_cap(region: &LatticeBox, cap: usize) -> Result<()> {
    if region.len() > cap {
        return Err(Error::CapExceeded {
            what: "contour enumeration box",
            size: region.len(),
            cap,
        });
    }
    Ok(())
}

fn contour_sums<T: Real>(
    region: &LatticeBox,
    beta: T,
    marked: &[Site],
    cap: usize,
) -> Result<(T, T)> {
    check_cap(region, cap)?;
    let geometry = ContourGeometry::new(region);
    let marked = marked
        .iter()
        .map(|s| {
            region
                .index_of(s)
                .ok_or_else(|| Error::SiteOutsideBox(s.to_vec()))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = region.len();
    let max_len = geometry.n_faces();
    let factor: Vec<T> = (0..=max_len)
        .map(|l| (-T::of(2.0) * beta * T::of_usize(l)).exp())
        .collect();
    let high = n.min(6);
    let low = n - high;
    let parts: Vec<(T, T)> = (0..1u64 << high)
        .into_par_iter()
        .map(|chunk| {
            let mut plain = T::zero();
            let mut signed = T::zero();
            let mut spins = vec![1i8; n];
            for rest in 0..1u64 << low {
                let state = chunk << low | rest;
                for (i, s) in spins.iter_mut().enumerate() {
                    *s = if state >> i & 1 == 1 { -1 } else { 1 };
                }
                let (negative, length) = geometry.signed_term(&spins, &marked);
                let w = factor[length];
                plain = plain + w;
                signed = if negative { signed - w } else { signed + w };
            }
            (plain, signed)
        })
        .collect();
    Ok(parts
        .into_iter()
        .fold((T::zero(), T::zero()), |(a, b), (c, d)| (a + c, b + d)))
}

/// `Ξ⁺ = Σ_{Γ'} Π_γ e^{-2β|γ|}`, summed over configurations.
pub fn contour_partition_sum<T: Real>(region: &LatticeBox, beta: T) -> Result<T> {
    Ok(contour_sums(region, beta, &[], DEFAULT_CONTOUR_CAP)?.0)
}

/// `Ξ^{+,A} = Σ_{Γ'} Π_γ (-1)^{|A ∩ Int γ|} e^{-2β|γ|}`.
pub fn sigma_a_contour_sum<T: Real>(region: &LatticeBox, beta: T, a: &[Site]) -> Result<T> {
    Ok(contour_sums(region, beta, a, DEFAULT_CONTOUR_CAP)?.1)
}

/// `⟨σ_A⟩⁺ = Ξ^{+,A} / Ξ⁺`.
pub fn sigma_a_contour_ratio<T: Real>(region: &LatticeBox, beta: T, a: &[Site]) -> Result<T> {
    let (plain, signed) = contour_sums(region, beta, a, DEFAULT_CONTOUR_CAP)?;
    Ok(signed / plain)
}

/// `ln Z⁺ = β|𝓔^b_Λ| + ln Ξ⁺` at zero field.
pub fn ln_partition_from_contours<T: Real>(region: &LatticeBox, beta: T) -> Result<T> {
    let xi = contour_partition_sum(region, beta)?;
    let n_boundary = ContourGeometry::new(region).n_faces();
    Ok(beta * T::of_usize(n_boundary) + xi.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::{ExactSystem, IsingParams, Sign};
    use crate::lattice::boundary_edges;
    use approx::assert_relative_eq;

    fn all_configs(region: &LatticeBox) -> impl Iterator<Item = SpinConfiguration> + '_ {
        (0..1u64 << region.len())
            .map(move |s| SpinConfiguration::from_state(region.clone(), s, BoundaryCondition::Plus))
    }

    #[test]
    fn simple_cases() {
        let r = LatticeBox::with_shape(&[3, 3]).unwrap();
        let plus = SpinConfiguration::uniform(r.clone(), Sign::Plus, BoundaryCondition::Plus);
        assert!(extract_contours(&plus).unwrap().is_empty());

        let mut one = plus.clone();
        one.set_spin_at(4, Sign::Minus);
        let cs = extract_contours(&one).unwrap();
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].len(), 4);
        assert_eq!(cs[0].interior, vec![Site::from([1, 1])]);

        let free = SpinConfiguration::uniform(r, Sign::Plus, BoundaryCondition::Free);
        assert_eq!(extract_contours(&free), Err(Error::BoundaryMismatch));
    }

    #[test]
    fn face_count_is_boundary_edge_count() {
        for shape in [[1usize, 1], [2, 2], [3, 2]] {
            let r = LatticeBox::with_shape(&shape).unwrap();
            assert_eq!(ContourGeometry::new(&r).n_faces(), boundary_edges(&r).len());
        }
        let r = LatticeBox::with_shape(&[2, 2, 2]).unwrap();
        assert_eq!(ContourGeometry::new(&r).n_faces(), boundary_edges(&r).len());
    }

    #[test]
    fn spins_are_reconstructed_from_interiors() {
        for shape in [vec![3usize, 3], vec![2, 4], vec![2, 2, 2]] {
            let r = LatticeBox::with_shape(&shape).unwrap();
            for cfg in all_configs(&r) {
                let cs = extract_contours(&cfg).unwrap();
                for (i, s) in r.sites().enumerate() {
                    let inside = cs.iter().filter(|c| c.interior.contains(&s)).count();
                    let sign = if inside % 2 == 0 { 1 } else { -1 };
                    assert_eq!(sign, cfg.spin_at(i));
                }
                let total: usize = cs.iter().map(Contour::len).sum();
                assert_eq!(total, ContourGeometry::new(&r).total_length(cfg.spins()));
            }
        }
    }

    #[test]
    fn contour_map_is_injective() {
        let r = LatticeBox::with_shape(&[3, 3]).unwrap();
        let mut seen = std::collections::HashSet::new();
        for cfg in all_configs(&r) {
            let mut faces: Vec<Face> = extract_contours(&cfg)
                .unwrap()
                .into_iter()
                .flat_map(|c| c.faces)
                .collect();
            faces.sort();
            assert!(seen.insert(faces));
        }
        assert_eq!(seen.len(), 512);
    }

    #[test]
    fn diagonal_minus_cubes_form_one_contour() {
        let r = LatticeBox::with_shape(&[2, 2]).unwrap();
        let cfg = SpinConfiguration::new(r, vec![-1, 1, 1, -1], BoundaryCondition::Plus).unwrap();
        let cs = extract_contours(&cfg).unwrap();
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].len(), 8);
    }

    #[test]
    fn single_site_sums() {
        let r = LatticeBox::single(Site::from([0, 0])).unwrap();
        let beta = 0.3f64;
        assert_relative_eq!(
            contour_partition_sum(&r, beta).unwrap(),
            1.0 + (-8.0 * beta).exp(),
            max_relative = 1e-15
        );
        let z = ln_partition_from_contours(&r, beta).unwrap().exp();
        assert_relative_eq!(
            z,
            (4.0 * beta).exp() + (-4.0 * beta).exp(),
            max_relative = 1e-14
        );
        assert_relative_eq!(
            contour_partition_sum(&r, 10.0f64).unwrap(),
            1.0,
            max_relative = 1e-30
        );
        let ratio = sigma_a_contour_ratio(&r, beta, &[Site::from([0, 0])]).unwrap();
        assert_relative_eq!(ratio, (4.0 * beta).tanh(), max_relative = 1e-14);
        assert_eq!(sigma_a_contour_ratio(&r, beta, &[]).unwrap(), 1.0);
    }

    #[test]
    fn identities_against_enumeration() {
        for shape in [[2usize, 2], [3, 3]] {
            let r = LatticeBox::with_shape(&shape).unwrap();
            for beta in [0.0f64, 0.2, 0.5, 1.2] {
                let sys = ExactSystem::new(
                    r.clone(),
                    IsingParams::new(2, beta, 0.0, BoundaryCondition::Plus).unwrap(),
                )
                .unwrap();
                let lhs = sys.ln_partition_function();
                let rhs = ln_partition_from_contours(&r, beta).unwrap();
                assert!((lhs - rhs).abs() < 1e-12);
                let a = [Site::from([0, 0]), Site::from([0, 1])];
                let want = sys.spin_product_expectation(&a).unwrap();
                assert!((sigma_a_contour_ratio(&r, beta, &a).unwrap() - want).abs() < 1e-12);
            }
        }
    }
}
