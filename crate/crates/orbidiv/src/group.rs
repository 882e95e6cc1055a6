//! Finite unitary group actions on `C^n`.
//!
//! A group is stored as its full element list (matrices), discovered by
//! closing a generator set under multiplication. All downstream modules index
//! elements by their position in that list; the Cayley table makes subgroup
//! and conjugacy computations exact integer work once the closure has been
//! built. Matrices are deduplicated metrically, so the element list is a
//! faithful copy of the abstract group.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde_json::{json, Value};
use thiserror::Error;

use crate::cvec::CVec;
use crate::linalg;

/// Generators are rejected when `max |(u* u - id)_{ij}|` exceeds this.
pub const UNITARITY_TOL: f64 = 1e-12;
/// Two elements closer than this (max entry distance) are identified.
pub const DEDUP_TOL: f64 = 1e-9;
/// Singular values below this count as zero when extracting fixed spaces.
pub const FIXED_SVD_CUTOFF: f64 = 1e-9;
/// Closure aborts beyond this many elements.
pub const GROUP_CAP: usize = 10_000;
/// Subgroup enumeration aborts beyond this many subgroups.
pub const SUBGROUP_CAP: usize = 256;

/// Errors from group construction and queries.
#[derive(Debug, Error)]
pub enum GroupError {
    #[error("generator {index} is not unitary (defect {defect:.3e})")]
    NonUnitaryGenerator { index: usize, defect: f64 },
    #[error("group closure exceeded the cap of {cap} elements")]
    GroupSizeCapExceeded { cap: usize },
    #[error("subgroup enumeration exceeded the cap of {cap}")]
    SubgroupCapExceeded { cap: usize },
    #[error("element set is not closed under multiplication (missing product of {i} and {j})")]
    NotASubgroup { i: usize, j: usize },
    #[error("generator has shape {rows}x{cols}, expected {n}x{n}")]
    ShapeMismatch { rows: usize, cols: usize, n: usize },
    #[error("invalid group JSON: {0}")]
    BadJson(String),
}

/// A finite subgroup of `U(n)` acting on `C^n`, stored by its element list.
#[derive(Clone, Debug)]
pub struct FiniteUnitaryAction {
    n: usize,
    elements: Vec<DMatrix<Complex64>>,
    identity_index: usize,
    cayley: Vec<Vec<usize>>,
    inverse: Vec<usize>,
}

/// A subgroup, recorded as sorted indices into the parent's element list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Subgroup {
    pub elements: Vec<usize>,
}

impl Subgroup {
    pub fn order(&self) -> usize {
        self.elements.len()
    }
}

/// The full subgroup inventory of an action.
#[derive(Clone, Debug)]
pub struct SubgroupLattice {
    /// All subgroups, sorted by (order, lexicographic element indices).
    pub subgroups: Vec<Subgroup>,
    /// Indices into `subgroups`, one sorted vector per conjugacy class.
    pub conjugacy_classes: Vec<Vec<usize>>,
    /// Normalizer of each subgroup, as element indices.
    pub normalizers: Vec<Subgroup>,
}

/// A complex linear subspace of `C^n` with an orthonormal basis.
#[derive(Clone, Debug)]
pub struct ComplexSubspace {
    ambient: usize,
    basis: Vec<DVector<Complex64>>,
}

impl ComplexSubspace {
    /// Wraps an orthonormal basis; panics if it is not orthonormal to 1e-10.
    pub fn from_orthonormal(ambient: usize, basis: Vec<DVector<Complex64>>) -> Self {
        for (i, a) in basis.iter().enumerate() {
            for (j, b) in basis.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                let dot: Complex64 = a.dotc(b);
                assert!(
                    (dot.norm() - target).abs() < 1e-10,
                    "basis not orthonormal: <b{i}, b{j}> = {dot}"
                );
            }
        }
        ComplexSubspace { ambient, basis }
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[DVector<Complex64>] {
        &self.basis
    }

    /// Euclidean distance from `z` to this subspace.
    pub fn distance(&self, z: &CVec) -> f64 {
        let v = DVector::from_fn(self.ambient, |i, _| z[i]);
        let mut residual = v.clone();
        for b in &self.basis {
            // dotc conjugates the receiver, so this is <v, b>.
            let coeff: Complex64 = b.dotc(&v);
            residual -= b * coeff;
        }
        residual.norm()
    }

    /// Orthogonal projection of `z` onto this subspace.
    pub fn project(&self, z: &CVec) -> CVec {
        let v = DVector::from_fn(self.ambient, |i, _| z[i]);
        let mut out = DVector::from_element(self.ambient, Complex64::ZERO);
        for b in &self.basis {
            let coeff: Complex64 = b.dotc(&v);
            out += b * coeff;
        }
        CVec::from_slice(out.as_slice())
    }

    /// Largest principal-angle sine separating two subspaces (1 if dims differ).
    pub fn gap(&self, other: &ComplexSubspace) -> f64 {
        linalg::subspace_gap(&self.basis, &other.basis)
    }

    /// Image of this subspace under a unitary matrix.
    pub fn transform(&self, u: &DMatrix<Complex64>) -> ComplexSubspace {
        let basis = self.basis.iter().map(|b| u * b).collect();
        ComplexSubspace { ambient: self.ambient, basis }
    }
}

impl FiniteUnitaryAction {
    /// Closes a generator set into a finite group.
    ///
    /// Elements are discovered breadth-first from the identity, deduplicated
    /// at `DEDUP_TOL`, and capped at `GROUP_CAP`. The identity is always
    /// element 0.
    pub fn build_group(
        n: usize,
        generators: &[DMatrix<Complex64>],
    ) -> Result<Self, GroupError> {
        for (index, g) in generators.iter().enumerate() {
            if g.nrows() != n || g.ncols() != n {
                return Err(GroupError::ShapeMismatch { rows: g.nrows(), cols: g.ncols(), n });
            }
            let defect = linalg::unitarity_defect(g);
            if defect > UNITARITY_TOL {
                return Err(GroupError::NonUnitaryGenerator { index, defect });
            }
        }

        let identity = DMatrix::<Complex64>::identity(n, n);
        let mut elements = vec![identity];
        let mut frontier = vec![0usize];
        while let Some(i) = frontier.pop() {
            let base = elements[i].clone();
            for g in generators {
                let prod = &base * g;
                let known = elements.iter().any(|e| linalg::max_abs_diff(e, &prod) < DEDUP_TOL);
                if !known {
                    if elements.len() >= GROUP_CAP {
                        return Err(GroupError::GroupSizeCapExceeded { cap: GROUP_CAP });
                    }
                    elements.push(prod);
                    frontier.push(elements.len() - 1);
                }
            }
        }

        let m = elements.len();
        let mut cayley = vec![vec![0usize; m]; m];
        for i in 0..m {
            for j in 0..m {
                let prod = &elements[i] * &elements[j];
                let idx = elements
                    .iter()
                    .position(|e| linalg::max_abs_diff(e, &prod) < DEDUP_TOL)
                    .ok_or(GroupError::NotASubgroup { i, j })?;
                cayley[i][j] = idx;
            }
        }
        let mut inverse = vec![0usize; m];
        for i in 0..m {
            inverse[i] = cayley[i].iter().position(|&p| p == 0).expect("row has identity");
        }

        Ok(FiniteUnitaryAction { n, elements, identity_index: 0, cayley, inverse })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn identity_index(&self) -> usize {
        self.identity_index
    }

    pub fn element(&self, i: usize) -> &DMatrix<Complex64> {
        &self.elements[i]
    }

    pub fn elements(&self) -> &[DMatrix<Complex64>] {
        &self.elements
    }

    /// Product index `elements[i] * elements[j]`.
    pub fn mul(&self, i: usize, j: usize) -> usize {
        self.cayley[i][j]
    }

    pub fn inv(&self, i: usize) -> usize {
        self.inverse[i]
    }

    /// Applies element `i` to a point.
    pub fn apply(&self, i: usize, z: &CVec) -> CVec {
        linalg::apply(&self.elements[i], z)
    }

    /// Order of a single element.
    pub fn element_order(&self, i: usize) -> usize {
        let mut p = i;
        let mut ord = 1;
        while p != self.identity_index {
            p = self.mul(p, i);
            ord += 1;
        }
        ord
    }

    /// Checks that an index set is closed under products and inverses.
    pub fn check_subgroup(&self, indices: &[usize]) -> Result<(), GroupError> {
        let set: std::collections::BTreeSet<usize> = indices.iter().copied().collect();
        if !set.contains(&self.identity_index) {
            return Err(GroupError::NotASubgroup { i: self.identity_index, j: self.identity_index });
        }
        for &i in &set {
            for &j in &set {
                if !set.contains(&self.cayley[i][j]) {
                    return Err(GroupError::NotASubgroup { i, j });
                }
            }
        }
        Ok(())
    }

    /// Fixed subspace `{v : rho(h) v = v for h in subgroup}`.
    ///
    /// Built from the common kernel of the stacked `rho(h) - id`, with
    /// singular values below `FIXED_SVD_CUTOFF` treated as zero.
    pub fn fixed_subspace(&self, subgroup: &[usize]) -> Result<ComplexSubspace, GroupError> {
        self.check_subgroup(subgroup)?;
        let nontrivial: Vec<usize> =
            subgroup.iter().copied().filter(|&i| i != self.identity_index).collect();
        let rows = nontrivial.len() * self.n;
        let mut stacked = DMatrix::<Complex64>::zeros(rows, self.n);
        for (b, &h) in nontrivial.iter().enumerate() {
            let diff = &self.elements[h] - DMatrix::<Complex64>::identity(self.n, self.n);
            stacked.view_mut((b * self.n, 0), (self.n, self.n)).copy_from(&diff);
        }
        let basis = linalg::kernel_basis(&stacked, FIXED_SVD_CUTOFF);
        Ok(ComplexSubspace::from_orthonormal(self.n, basis))
    }

    /// Fixed subspaces of the nontrivial elements, deduplicated.
    ///
    /// Their union is the locus where the action fails to be free. Subspaces
    /// are ordered by decreasing dimension, then by first-element index, so
    /// the result is deterministic.
    pub fn singular_set(&self) -> Vec<ComplexSubspace> {
        let mut found: Vec<(usize, ComplexSubspace)> = Vec::new();
        for h in 0..self.order() {
            if h == self.identity_index {
                continue;
            }
            let fix = self
                .fixed_subspace(&self.cyclic_subgroup(h).elements)
                .expect("cyclic subgroup is closed");
            // A free element contributes nothing.
            if fix.dim() == 0 {
                continue;
            }
            let dup = found.iter().any(|(_, s)| s.dim() == fix.dim() && s.gap(&fix) < 1e-8);
            if !dup {
                found.push((h, fix));
            }
        }
        found.sort_by(|a, b| b.1.dim().cmp(&a.1.dim()).then(a.0.cmp(&b.0)));
        found.into_iter().map(|(_, s)| s).collect()
    }

    /// The cyclic subgroup generated by one element.
    pub fn cyclic_subgroup(&self, gen: usize) -> Subgroup {
        let mut elems = vec![self.identity_index];
        let mut p = gen;
        while p != self.identity_index {
            elems.push(p);
            p = self.mul(p, gen);
        }
        elems.sort_unstable();
        Subgroup { elements: elems }
    }

    /// All subgroups, with conjugacy classes and normalizers.
    ///
    /// Subgroups are generated by closing unions of cyclic subgroups; the
    /// enumeration aborts past `SUBGROUP_CAP`.
    pub fn all_subgroups(&self) -> Result<SubgroupLattice, GroupError> {
        let mut subs: Vec<Vec<usize>> = vec![vec![self.identity_index]];
        let mut frontier = vec![0usize];
        while let Some(si) = frontier.pop() {
            let base = subs[si].clone();
            for g in 0..self.order() {
                if base.contains(&g) {
                    continue;
                }
                let mut gen_set = base.clone();
                gen_set.push(g);
                let closed = self.close_indices(&gen_set);
                if !subs.contains(&closed) {
                    if subs.len() >= SUBGROUP_CAP {
                        return Err(GroupError::SubgroupCapExceeded { cap: SUBGROUP_CAP });
                    }
                    subs.push(closed);
                    frontier.push(subs.len() - 1);
                }
            }
        }
        subs.sort_by(|a, b| a.len().cmp(&b.len()).then(a.cmp(b)));
        let subgroups: Vec<Subgroup> = subs.into_iter().map(|elements| Subgroup { elements }).collect();

        let find = |elements: &Vec<usize>| -> usize {
            subgroups.iter().position(|s| &s.elements == elements).expect("conjugate subgroup present")
        };
        let mut class_of = vec![usize::MAX; subgroups.len()];
        let mut classes: Vec<Vec<usize>> = Vec::new();
        for i in 0..subgroups.len() {
            if class_of[i] != usize::MAX {
                continue;
            }
            let mut class = Vec::new();
            for g in 0..self.order() {
                let conj = self.conjugate_indices(&subgroups[i].elements, g);
                let j = find(&conj);
                if !class.contains(&j) {
                    class.push(j);
                }
            }
            class.sort_unstable();
            for &j in &class {
                class_of[j] = classes.len();
            }
            classes.push(class);
        }

        let normalizers = subgroups
            .iter()
            .map(|s| {
                let elems: Vec<usize> = (0..self.order())
                    .filter(|&g| self.conjugate_indices(&s.elements, g) == s.elements)
                    .collect();
                Subgroup { elements: elems }
            })
            .collect();

        Ok(SubgroupLattice { subgroups, conjugacy_classes: classes, normalizers })
    }

    /// Maximal cyclic subgroups; their union is the whole group.
    pub fn cyclic_cover(&self) -> Vec<Subgroup> {
        let mut cyclics: Vec<Subgroup> = Vec::new();
        for g in 0..self.order() {
            let c = self.cyclic_subgroup(g);
            if !cyclics.contains(&c) {
                cyclics.push(c);
            }
        }
        let maximal: Vec<Subgroup> = cyclics
            .iter()
            .filter(|c| {
                !cyclics.iter().any(|d| {
                    d.elements.len() > c.elements.len()
                        && c.elements.iter().all(|e| d.elements.contains(e))
                })
            })
            .cloned()
            .collect();
        let mut out = maximal;
        out.sort_by(|a, b| a.elements.len().cmp(&b.elements.len()).then(a.elements.cmp(&b.elements)));
        out
    }

    /// Subgroup element set conjugated by element `g`.
    fn conjugate_indices(&self, elements: &[usize], g: usize) -> Vec<usize> {
        let gi = self.inv(g);
        let mut out: Vec<usize> =
            elements.iter().map(|&h| self.mul(self.mul(g, h), gi)).collect();
        out.sort_unstable();
        out
    }

    fn close_indices(&self, start: &[usize]) -> Vec<usize> {
        let mut set: std::collections::BTreeSet<usize> = start.iter().copied().collect();
        set.insert(self.identity_index);
        loop {
            let snapshot: Vec<usize> = set.iter().copied().collect();
            let before = set.len();
            for &i in &snapshot {
                for &j in &snapshot {
                    set.insert(self.cayley[i][j]);
                }
            }
            if set.len() == before {
                break;
            }
        }
        set.into_iter().collect()
    }

    /// Serializes as `{n, elements}` with row-major `[re, im]` entry pairs.
    pub fn to_json(&self) -> Value {
        let elements: Vec<Value> = self
            .elements
            .iter()
            .map(|m| {
                let entries: Vec<Value> = (0..self.n)
                    .flat_map(|i| (0..self.n).map(move |j| (i, j)))
                    .map(|(i, j)| json!([m[(i, j)].re, m[(i, j)].im]))
                    .collect();
                Value::Array(entries)
            })
            .collect();
        json!({ "n": self.n, "elements": elements })
    }

    /// Rebuilds a group from `to_json` output, reclosing to validate.
    pub fn from_json(v: &Value) -> Result<Self, GroupError> {
        let n = v["n"].as_u64().ok_or_else(|| GroupError::BadJson("missing n".into()))? as usize;
        let arr = v["elements"]
            .as_array()
            .ok_or_else(|| GroupError::BadJson("missing elements".into()))?;
        let mut mats = Vec::new();
        for e in arr {
            let entries = e.as_array().ok_or_else(|| GroupError::BadJson("element not array".into()))?;
            if entries.len() != n * n {
                return Err(GroupError::BadJson(format!(
                    "element has {} entries, expected {}",
                    entries.len(),
                    n * n
                )));
            }
            let mut m = DMatrix::<Complex64>::zeros(n, n);
            for (k, pair) in entries.iter().enumerate() {
                let re = pair[0].as_f64().ok_or_else(|| GroupError::BadJson("bad entry".into()))?;
                let im = pair[1].as_f64().ok_or_else(|| GroupError::BadJson("bad entry".into()))?;
                m[(k / n, k % n)] = Complex64::new(re, im);
            }
            mats.push(m);
        }
        Self::build_group(n, &mats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn z2_on_c() -> FiniteUnitaryAction {
        FiniteUnitaryAction::build_group(1, &[dmatrix![c(-1.0, 0.0)]]).unwrap()
    }

    fn klein_four_on_c2() -> FiniteUnitaryAction {
        let g1 = dmatrix![c(-1.0, 0.0), c(0.0, 0.0); c(0.0, 0.0), c(1.0, 0.0)];
        let g2 = dmatrix![c(1.0, 0.0), c(0.0, 0.0); c(0.0, 0.0), c(-1.0, 0.0)];
        FiniteUnitaryAction::build_group(2, &[g1, g2]).unwrap()
    }

    #[test]
    fn trivial_group_from_no_generators() {
        let g = FiniteUnitaryAction::build_group(2, &[]).unwrap();
        assert_eq!(g.order(), 1);
        assert_eq!(g.identity_index(), 0);
    }

    #[test]
    fn diag_i_i_generates_order_four() {
        // Oracle: powers of diag(i, i) are diag(i^k, i^k), distinct for k = 0..3.
        let g = FiniteUnitaryAction::build_group(
            2,
            &[dmatrix![c(0.0, 1.0), c(0.0, 0.0); c(0.0, 0.0), c(0.0, 1.0)]],
        )
        .unwrap();
        assert_eq!(g.order(), 4, "powers of diag(i,i) close at order 4");
        assert_eq!(g.element_order(1), 4);
    }

    #[test]
    fn non_unitary_generator_rejected() {
        let r = FiniteUnitaryAction::build_group(1, &[dmatrix![c(2.0, 0.0)]]);
        assert!(matches!(r, Err(GroupError::NonUnitaryGenerator { .. })));
    }

    #[test]
    fn irrational_rotation_hits_cap() {
        let theta = 1.0f64; // 1 radian, irrational multiple of pi
        let r = FiniteUnitaryAction::build_group(
            1,
            &[dmatrix![Complex64::from_polar(1.0, theta)]],
        );
        assert!(matches!(r, Err(GroupError::GroupSizeCapExceeded { .. })));
    }

    #[test]
    fn cayley_table_is_a_group_table() {
        let g = klein_four_on_c2();
        assert_eq!(g.order(), 4);
        for i in 0..4 {
            assert_eq!(g.mul(i, g.inv(i)), g.identity_index());
            assert_eq!(g.mul(g.identity_index(), i), i);
        }
    }

    #[test]
    fn fixed_subspace_of_sign_flip_is_second_axis() {
        let g = klein_four_on_c2();
        // Find diag(-1, 1).
        let h = (0..4)
            .find(|&i| {
                (g.element(i)[(0, 0)] - c(-1.0, 0.0)).norm() < 1e-12
                    && (g.element(i)[(1, 1)] - c(1.0, 0.0)).norm() < 1e-12
            })
            .unwrap();
        let sub = g.cyclic_subgroup(h);
        let fix = g.fixed_subspace(&sub.elements).unwrap();
        assert_eq!(fix.dim(), 1);
        assert!(fix.basis()[0][0].norm() < 1e-10, "fixed space is the z2 axis");
        assert!((fix.basis()[0][1].norm() - 1.0).abs() < 1e-10);
        // Invariance of the basis under the subgroup.
        for &hh in &sub.elements {
            let moved = g.element(hh) * &fix.basis()[0];
            assert!((moved - &fix.basis()[0]).norm() < 1e-8);
        }
    }

    #[test]
    fn fixed_subspace_rejects_non_closed_sets() {
        let g = klein_four_on_c2();
        let nontrivial: Vec<usize> = (0..4).filter(|&i| i != g.identity_index()).take(2).collect();
        // Two distinct involutions without their product do not close.
        let r = g.fixed_subspace(&[g.identity_index(), nontrivial[0], nontrivial[1]]);
        assert!(matches!(r, Err(GroupError::NotASubgroup { .. })));
    }

    #[test]
    fn full_fixed_space_for_identity_subgroup() {
        let g = z2_on_c();
        let fix = g.fixed_subspace(&[0]).unwrap();
        assert_eq!(fix.dim(), 1, "trivial subgroup fixes everything");
    }

    #[test]
    fn singular_set_of_klein_four() {
        let g = klein_four_on_c2();
        let sing = g.singular_set();
        // Two axes (from the two reflections); the full flip fixes only 0.
        assert_eq!(sing.len(), 2);
        assert!(sing.iter().all(|s| s.dim() == 1));
    }

    #[test]
    fn subgroup_lattice_of_klein_four() {
        let g = klein_four_on_c2();
        let lat = g.all_subgroups().unwrap();
        assert_eq!(lat.subgroups.len(), 5, "1 + three Z/2 + full");
        // Abelian group: every subgroup is its own class, normalizer is everything.
        assert_eq!(lat.conjugacy_classes.len(), 5);
        assert!(lat.normalizers.iter().all(|nm| nm.order() == 4));
    }

    #[test]
    fn cyclic_cover_union_is_whole_group() {
        let g = klein_four_on_c2();
        let cover = g.cyclic_cover();
        let mut seen: Vec<usize> = cover.iter().flat_map(|s| s.elements.clone()).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen, (0..g.order()).collect::<Vec<_>>(), "cover must hit every element");
        assert_eq!(cover.len(), 3, "three maximal cyclic subgroups in Klein four");
    }

    #[test]
    fn conjugation_moves_fixed_subspaces_equivariantly() {
        // Quaternion-like check on a nonabelian example: S_3 faithfully in U(2)
        // via the standard representation.
        let w = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI / 3.0);
        let rot = dmatrix![w, c(0.0, 0.0); c(0.0, 0.0), w.conj()];
        let swap = dmatrix![c(0.0, 0.0), c(1.0, 0.0); c(1.0, 0.0), c(0.0, 0.0)];
        let g = FiniteUnitaryAction::build_group(2, &[rot, swap]).unwrap();
        assert_eq!(g.order(), 6);
        let lat = g.all_subgroups().unwrap();
        for s in &lat.subgroups {
            let fix = g.fixed_subspace(&s.elements).unwrap();
            for gg in 0..g.order() {
                let conj = g.conjugate_indices(&s.elements, gg);
                let fix_conj = g.fixed_subspace(&conj).unwrap();
                let moved = fix.transform(g.element(gg));
                assert!(
                    fix_conj.gap(&moved) < 1e-8,
                    "Fix(gKg^-1) should equal g Fix(K): gap {}",
                    fix_conj.gap(&moved)
                );
            }
        }
    }

    #[test]
    fn json_roundtrip_preserves_group() {
        let g = klein_four_on_c2();
        let v = g.to_json();
        let g2 = FiniteUnitaryAction::from_json(&v).unwrap();
        assert_eq!(g2.order(), g.order());
        for i in 0..g.order() {
            // Same element set (order may differ); find each.
            assert!(g2
                .elements()
                .iter()
                .any(|e| linalg::max_abs_diff(e, g.element(i)) < 1e-12));
        }
    }
}
