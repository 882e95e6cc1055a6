//! Isotropy stratifications of chart models and torus quotients.
//!
//! A stratum is a conjugacy class of effective stabilizer subgroups together
//! with (one orbit of) the locus it fixes: a linear subspace in a chart, an
//! affine subtorus downstairs in a quotient. Strata form a finite poset under
//! inclusion of the closed loci; heights count the longest strictly
//! increasing chain up to the open dense top stratum.

use nalgebra::DVector;
use num_complex::Complex64;
use serde_json::{json, Value};
use thiserror::Error;

use crate::cvec::CVec;
use crate::geometry::{FixedComponent, GeometryError, ModelChart, TorusQuotient};
use crate::group::{ComplexSubspace, FiniteUnitaryAction, GroupError, Subgroup};

/// Points farther than this from every fixed locus are regular.
pub const MEMBERSHIP_TOL: f64 = 1e-6;
/// Tolerance for exact coincidences (orbit dedup, stabilizer tests).
const EXACT_TOL: f64 = 1e-9;
/// Tolerance for subspace containment and gap tests.
const SUBSPACE_TOL: f64 = 1e-8;

/// Errors from stratification and descent queries.
#[derive(Debug, Error)]
pub enum StrataError {
    #[error("point has dimension {got}, stratification lives in C^{expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("point lies in no stratum of the poset")]
    PointNotInAnyStratum,
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// One stratum: a stabilizer class with its fixed locus.
#[derive(Clone, Debug)]
pub struct Stratum {
    /// Representative subgroup `K` of the stabilizer class (element indices).
    pub subgroup_class: Subgroup,
    /// Pointwise-fixed complex directions at the base component.
    pub fixed_subspace: ComplexSubspace,
    /// Normalizer of the representative subgroup.
    pub normalizer: Subgroup,
    /// True when `K` is exactly the pointwise stabilizer of the locus.
    pub effective: bool,
    /// Longest strictly increasing chain length from here to the top.
    pub height: usize,
    /// Distinguishes orbits of components sharing a stabilizer class.
    pub component_id: usize,
    /// Orbit of component base points (torus case; empty on charts).
    pub offsets: Vec<CVec>,
}

impl Stratum {
    /// Complex dimension of the stratum.
    pub fn dim(&self) -> usize {
        self.fixed_subspace.dim()
    }
}

#[derive(Clone, Debug)]
enum Context {
    Chart(ModelChart),
    Torus(TorusQuotient),
}

/// The finite poset of strata, ordered by inclusion of closed loci.
#[derive(Clone, Debug)]
pub struct StrataPoset {
    /// Strata sorted by (height, stabilizer order, locus coordinates).
    pub strata: Vec<Stratum>,
    /// `le[i][j]` iff the locus of stratum `i` is contained in that of `j`.
    pub le: Vec<Vec<bool>>,
    /// Index of the unique open dense top stratum.
    pub max_index: usize,
    context: Context,
}

/// Stratifies a linear chart model `C^n / H`.
pub fn local_strata(action: &FiniteUnitaryAction) -> Result<StrataPoset, StrataError> {
    let chart = ModelChart::new(action.clone(), 2.0 * std::f64::consts::PI)?;
    let lattice = action.all_subgroups()?;

    let mut strata = Vec::new();
    for class in &lattice.conjugacy_classes {
        let rep_idx = class[0];
        let k = &lattice.subgroups[rep_idx];
        let v = action.fixed_subspace(&k.elements)?;
        let stab = pointwise_stabilizer_linear(action, &v);
        if stab != k.elements {
            continue; // a larger subgroup fixes the same locus
        }
        strata.push(Stratum {
            subgroup_class: k.clone(),
            fixed_subspace: v,
            normalizer: lattice.normalizers[rep_idx].clone(),
            effective: true,
            height: 0,
            component_id: 0,
            offsets: Vec::new(),
        });
    }

    let le = chart_le(action, &strata);
    finish_poset(strata, le, Context::Chart(chart))
}

/// Stratifies a torus quotient `T^{2n} / G`.
pub fn torus_strata(quotient: &TorusQuotient) -> Result<StrataPoset, StrataError> {
    let action = quotient.group();
    let lattice = action.all_subgroups()?;

    // Every component of every Fix(K) whose pointwise stabilizer is exactly K.
    let mut kept: Vec<(Subgroup, usize, FixedComponent)> = Vec::new();
    for (si, k) in lattice.subgroups.iter().enumerate() {
        if k.order() == 1 {
            continue; // the top stratum is added separately
        }
        for comp in quotient.subgroup_fixed_components(&k.elements) {
            let stab = pointwise_stabilizer_torus(quotient, &comp);
            if stab == k.elements {
                kept.push((k.clone(), si, comp));
            }
        }
    }

    // Group components into orbits under the whole group.
    let mut used = vec![false; kept.len()];
    let mut strata = Vec::new();
    for i in 0..kept.len() {
        if used[i] {
            continue;
        }
        let mut orbit_members = vec![i];
        used[i] = true;
        for j in (i + 1)..kept.len() {
            if used[j] {
                continue;
            }
            if components_equivalent(quotient, &kept[i].2, &kept[j].2) {
                used[j] = true;
                orbit_members.push(j);
            }
        }
        // Distinct base points of the orbit, including images inside one
        // member's own component set.
        let mut offsets: Vec<CVec> = Vec::new();
        for &m in &orbit_members {
            for g in 0..action.order() {
                let moved = action.apply(g, &kept[m].2.offset);
                let (red, _) = quotient.reduce(&moved);
                if !offsets.iter().any(|o| quotient.torus_dist(o, &red) < EXACT_TOL) {
                    offsets.push(red);
                }
            }
        }
        offsets.sort_by(|a, b| a.lex_cmp(b));
        // Representative = kept member whose offset is the lex-smallest.
        let rep = *orbit_members
            .iter()
            .min_by(|&&a, &&b| kept[a].2.offset.lex_cmp(&kept[b].2.offset))
            .expect("orbit nonempty");
        let (k, si, comp) = &kept[rep];
        strata.push(Stratum {
            subgroup_class: k.clone(),
            fixed_subspace: comp.directions.clone(),
            normalizer: lattice.normalizers[*si].clone(),
            effective: true,
            height: 0,
            component_id: 0,
            offsets,
        });
    }

    // Top stratum: trivial stabilizer, whole space.
    let full = full_space(quotient.complex_dim());
    let trivial_idx = lattice
        .subgroups
        .iter()
        .position(|s| s.order() == 1)
        .expect("trivial subgroup always present");
    strata.push(Stratum {
        subgroup_class: lattice.subgroups[trivial_idx].clone(),
        fixed_subspace: full,
        normalizer: lattice.normalizers[trivial_idx].clone(),
        effective: true,
        height: 0,
        component_id: 0,
        offsets: Vec::new(),
    });

    let le = torus_le(quotient, &strata);
    finish_poset(strata, le, Context::Torus(quotient.clone()))
}

fn full_space(n: usize) -> ComplexSubspace {
    ComplexSubspace::from_orthonormal(
        n,
        (0..n)
            .map(|i| DVector::from_fn(n, |r, _| Complex64::from(f64::from(u8::from(r == i)))))
            .collect(),
    )
}

/// Elements acting as the identity on the subspace (all of them for dim 0).
fn pointwise_stabilizer_linear(action: &FiniteUnitaryAction, v: &ComplexSubspace) -> Vec<usize> {
    (0..action.order())
        .filter(|&g| {
            v.basis().iter().all(|b| {
                let moved = action.element(g) * b;
                (moved - b).norm() < EXACT_TOL
            })
        })
        .collect()
}

/// Elements fixing the component pointwise: base point fixed mod lattice and
/// identity on the tangent directions.
fn pointwise_stabilizer_torus(quotient: &TorusQuotient, comp: &FixedComponent) -> Vec<usize> {
    let action = quotient.group();
    (0..action.order())
        .filter(|&g| {
            let moved = action.apply(g, &comp.offset);
            if quotient.torus_dist(&moved, &comp.offset) > EXACT_TOL {
                return false;
            }
            comp.directions.basis().iter().all(|b| {
                let mb = action.element(g) * b;
                (mb - b).norm() < EXACT_TOL
            })
        })
        .collect()
}

/// Whether some group element maps one component onto the other.
fn components_equivalent(
    quotient: &TorusQuotient,
    a: &FixedComponent,
    b: &FixedComponent,
) -> bool {
    if a.directions.dim() != b.directions.dim() {
        return false;
    }
    let action = quotient.group();
    (0..action.order()).any(|g| {
        let moved = action.apply(g, &a.offset);
        if quotient.dist_to_component(&moved, b) > EXACT_TOL {
            return false;
        }
        a.directions.transform(action.element(g)).gap(&b.directions) < SUBSPACE_TOL
    })
}

fn chart_le(action: &FiniteUnitaryAction, strata: &[Stratum]) -> Vec<Vec<bool>> {
    let n = strata.len();
    let mut le = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            le[i][j] = i == j
                || (0..action.order()).any(|h| {
                    strata[i].fixed_subspace.basis().iter().all(|b| {
                        let moved = action.element(h) * b;
                        strata[j]
                            .fixed_subspace
                            .distance(&CVec::from_slice(moved.as_slice()))
                            < SUBSPACE_TOL
                    })
                });
        }
    }
    le
}

fn torus_le(quotient: &TorusQuotient, strata: &[Stratum]) -> Vec<Vec<bool>> {
    let action = quotient.group();
    let n = strata.len();
    let full_dim = quotient.complex_dim();
    let mut le = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j || strata[j].fixed_subspace.dim() == full_dim {
                le[i][j] = true;
                continue;
            }
            if strata[i].fixed_subspace.dim() == full_dim {
                continue; // the top fits in nothing smaller
            }
            let base_i = &strata[i].offsets[0];
            let comp_j = FixedComponent {
                element: 0,
                offset: strata[j].offsets[0],
                directions: strata[j].fixed_subspace.clone(),
            };
            le[i][j] = (0..action.order()).any(|g| {
                let moved = action.apply(g, base_i);
                if quotient.dist_to_component(&moved, &comp_j) > EXACT_TOL {
                    return false;
                }
                strata[i].fixed_subspace.basis().iter().all(|b| {
                    let mb = action.element(g) * b;
                    comp_j.directions.distance(&CVec::from_slice(mb.as_slice())) < SUBSPACE_TOL
                })
            });
        }
    }
    le
}

/// Heights, sorting, and component ids; shared tail of both constructors.
fn finish_poset(
    mut strata: Vec<Stratum>,
    le: Vec<Vec<bool>>,
    context: Context,
) -> Result<StrataPoset, StrataError> {
    let n = strata.len();
    let heights = compute_heights(&le);
    for (s, &h) in strata.iter_mut().zip(heights.iter()) {
        s.height = h;
    }

    // Deterministic order: height, stabilizer order, locus coordinates.
    let mut order: Vec<usize> = (0..n).collect();
    let key = |s: &Stratum| -> (usize, usize, Vec<f64>) {
        let coords = if s.offsets.is_empty() {
            s.fixed_subspace
                .basis()
                .iter()
                .flat_map(|b| b.iter().flat_map(|z| [z.re, z.im]))
                .collect()
        } else {
            s.offsets[0].to_real()
        };
        (s.height, s.subgroup_class.order(), coords)
    };
    order.sort_by(|&a, &b| {
        let (ha, oa, ca) = key(&strata[a]);
        let (hb, ob, cb) = key(&strata[b]);
        ha.cmp(&hb).then(oa.cmp(&ob)).then_with(|| {
            for (x, y) in ca.iter().zip(cb.iter()) {
                let c = x.total_cmp(y);
                if c != std::cmp::Ordering::Equal {
                    return c;
                }
            }
            ca.len().cmp(&cb.len())
        })
    });

    let mut sorted = Vec::with_capacity(n);
    let mut new_le = vec![vec![false; n]; n];
    for (new_i, &old_i) in order.iter().enumerate() {
        sorted.push(strata[old_i].clone());
        for (new_j, &old_j) in order.iter().enumerate() {
            new_le[new_i][new_j] = le[old_i][old_j];
        }
    }

    // Components sharing a stabilizer order and dimension get serial ids.
    for i in 0..n {
        let id = (0..i)
            .filter(|&j| {
                sorted[j].subgroup_class.order() == sorted[i].subgroup_class.order()
                    && sorted[j].dim() == sorted[i].dim()
            })
            .count();
        sorted[i].component_id = id;
    }

    let max_index = sorted
        .iter()
        .position(|s| s.height == 0)
        .ok_or(StrataError::PointNotInAnyStratum)?;

    Ok(StrataPoset { strata: sorted, le: new_le, max_index, context })
}

/// Longest-chain heights over the strict order.
fn compute_heights(le: &[Vec<bool>]) -> Vec<usize> {
    let n = le.len();
    let mut h = vec![usize::MAX; n];
    loop {
        let mut changed = false;
        for i in 0..n {
            let above: Vec<usize> =
                (0..n).filter(|&j| j != i && le[i][j] && !le[j][i]).collect();
            if above.iter().any(|&j| h[j] == usize::MAX) {
                continue;
            }
            let val = above.iter().map(|&j| h[j] + 1).max().unwrap_or(0);
            if h[i] != val {
                h[i] = val;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    assert!(h.iter().all(|&x| x != usize::MAX), "strict order must be acyclic");
    h
}

impl StrataPoset {
    /// Whether the point lies in the closed locus of stratum `idx`.
    pub fn contains(&self, idx: usize, point: &CVec) -> Result<bool, StrataError> {
        let s = &self.strata[idx];
        match &self.context {
            Context::Chart(chart) => {
                if point.dim() != chart.complex_dim() {
                    return Err(StrataError::DimensionMismatch {
                        expected: chart.complex_dim(),
                        got: point.dim(),
                    });
                }
                Ok((0..chart.group().order()).any(|g| {
                    s.fixed_subspace.distance(&chart.group().apply(g, point)) < MEMBERSHIP_TOL
                }))
            }
            Context::Torus(q) => {
                if point.dim() != q.complex_dim() {
                    return Err(StrataError::DimensionMismatch {
                        expected: q.complex_dim(),
                        got: point.dim(),
                    });
                }
                if s.dim() == q.complex_dim() {
                    return Ok(true);
                }
                let comp = FixedComponent {
                    element: 0,
                    offset: s.offsets[0],
                    directions: s.fixed_subspace.clone(),
                };
                Ok((0..q.group().order()).any(|g| {
                    q.dist_to_component(&q.group().apply(g, point), &comp) < MEMBERSHIP_TOL
                }))
            }
        }
    }

    /// The minimal stratum containing the point.
    pub fn singular_descent(&self, point: &CVec) -> Result<usize, StrataError> {
        let mut containing = Vec::new();
        for i in 0..self.strata.len() {
            if self.contains(i, point)? {
                containing.push(i);
            }
        }
        containing
            .iter()
            .copied()
            .find(|&c| containing.iter().all(|&d| self.le[c][d]))
            .ok_or(StrataError::PointNotInAnyStratum)
    }

    /// Poset as a DOT digraph of covering relations.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph strata {\n  rankdir=BT;\n");
        for (i, s) in self.strata.iter().enumerate() {
            out.push_str(&format!(
                "  s{i} [label=\"s{i}: |K|={} dim={} h={} c={}\"];\n",
                s.subgroup_class.order(),
                s.dim(),
                s.height,
                s.component_id
            ));
        }
        for i in 0..self.strata.len() {
            for j in 0..self.strata.len() {
                if i == j || !self.le[i][j] || self.le[j][i] {
                    continue;
                }
                // Covering relation: nothing strictly between.
                let covered = (0..self.strata.len()).any(|k| {
                    k != i
                        && k != j
                        && self.le[i][k]
                        && !self.le[k][i]
                        && self.le[k][j]
                        && !self.le[j][k]
                });
                if !covered {
                    out.push_str(&format!("  s{i} -> s{j};\n"));
                }
            }
        }
        out.push_str("}\n");
        out
    }

    /// Poset as JSON: strata with heights and fixed-space bases, the order
    /// matrix, and the top index.
    pub fn to_json(&self) -> Value {
        let strata: Vec<Value> = self
            .strata
            .iter()
            .map(|s| {
                let basis: Vec<Value> = s
                    .fixed_subspace
                    .basis()
                    .iter()
                    .map(|b| {
                        Value::Array(b.iter().map(|z| json!([z.re, z.im])).collect())
                    })
                    .collect();
                let offsets: Vec<Value> = s
                    .offsets
                    .iter()
                    .map(|o| {
                        Value::Array(
                            o.components().iter().map(|z| json!([z.re, z.im])).collect(),
                        )
                    })
                    .collect();
                json!({
                    "subgroup": s.subgroup_class.elements,
                    "order": s.subgroup_class.order(),
                    "normalizer": s.normalizer.elements,
                    "effective": s.effective,
                    "dim": s.dim(),
                    "height": s.height,
                    "component_id": s.component_id,
                    "fixed_basis": basis,
                    "offsets": offsets,
                })
            })
            .collect();
        let le: Vec<Value> = self
            .le
            .iter()
            .map(|row| Value::Array(row.iter().map(|&b| json!(u8::from(b))).collect()))
            .collect();
        json!({ "strata": strata, "le": le, "max_index": self.max_index })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use nalgebra::dmatrix;
    use rand::{Rng, SeedableRng};

    fn assert_poset_axioms(p: &StrataPoset) {
        let n = p.strata.len();
        for i in 0..n {
            assert!(p.le[i][i], "reflexive");
            for j in 0..n {
                if i != j {
                    assert!(!(p.le[i][j] && p.le[j][i]), "antisymmetric at {i},{j}");
                }
                for k in 0..n {
                    if p.le[i][j] && p.le[j][k] {
                        assert!(p.le[i][k], "transitive at {i},{j},{k}");
                    }
                }
            }
            assert!(p.le[i][p.max_index], "unique maximal element above all");
        }
    }

    fn brute_force_heights(p: &StrataPoset) -> Vec<usize> {
        // Longest strictly increasing chain by DFS from each stratum.
        fn longest(p: &StrataPoset, i: usize) -> usize {
            (0..p.strata.len())
                .filter(|&j| j != i && p.le[i][j] && !p.le[j][i])
                .map(|j| 1 + longest(p, j))
                .max()
                .unwrap_or(0)
        }
        (0..p.strata.len()).map(|i| longest(p, i)).collect()
    }

    #[test]
    fn trivial_group_has_single_stratum() {
        let g = FiniteUnitaryAction::build_group(1, &[]).unwrap();
        let p = local_strata(&g).unwrap();
        assert_eq!(p.strata.len(), 1);
        assert_eq!(p.strata[0].height, 0);
        assert_eq!(p.max_index, 0);
    }

    #[test]
    fn sign_flip_on_line_gives_two_strata() {
        let g = FiniteUnitaryAction::build_group(
            1,
            &[dmatrix![Complex64::new(-1.0, 0.0)]],
        )
        .unwrap();
        let p = local_strata(&g).unwrap();
        assert_eq!(p.strata.len(), 2);
        let heights: Vec<usize> = p.strata.iter().map(|s| s.height).collect();
        assert_eq!(heights, vec![0, 1]);
        assert!(p.le[1][0], "point stratum below the top");
        assert_poset_axioms(&p);
    }

    #[test]
    fn klein_four_chart_has_four_strata() {
        let chart = presets::chart_c2_klein();
        let p = local_strata(chart.group()).unwrap();
        assert_eq!(p.strata.len(), 4);
        let mut heights: Vec<usize> = p.strata.iter().map(|s| s.height).collect();
        heights.sort_unstable();
        assert_eq!(heights, vec![0, 1, 1, 2]);
        assert_poset_axioms(&p);
        assert_eq!(brute_force_heights(&p), p.strata.iter().map(|s| s.height).collect::<Vec<_>>());
        // The two axes are incomparable.
        let axes: Vec<usize> =
            (0..4).filter(|&i| p.strata[i].height == 1).collect();
        assert!(!p.le[axes[0]][axes[1]] && !p.le[axes[1]][axes[0]]);
    }

    #[test]
    fn effectivity_filters_redundant_subgroups() {
        // Z/4 = <iI> on C: the subgroup Z/2 = {+-I} also fixes only 0, so
        // only the full group survives for the origin stratum.
        let g = FiniteUnitaryAction::build_group(1, &[dmatrix![Complex64::new(0.0, 1.0)]])
            .unwrap();
        let p = local_strata(&g).unwrap();
        assert_eq!(p.strata.len(), 2);
        assert_eq!(p.strata[1].subgroup_class.order(), 4);
    }

    #[test]
    fn torus_z2_has_five_strata() {
        let q = presets::square_torus_z2();
        let p = torus_strata(&q).unwrap();
        assert_eq!(p.strata.len(), 5, "top plus 4 cone points");
        let point_strata: Vec<&Stratum> =
            p.strata.iter().filter(|s| s.dim() == 0).collect();
        assert_eq!(point_strata.len(), 4);
        for (i, s) in point_strata.iter().enumerate() {
            assert_eq!(s.height, 1);
            assert_eq!(s.subgroup_class.order(), 2);
            assert_eq!(s.component_id, i);
            assert_eq!(s.offsets.len(), 1);
        }
        assert_poset_axioms(&p);
    }

    #[test]
    fn four_torus_z2_has_seventeen_strata() {
        let q = presets::square_4torus_z2();
        let p = torus_strata(&q).unwrap();
        assert_eq!(p.strata.len(), 17, "top plus 16 half-integer points");
        assert_eq!(p.strata.iter().filter(|s| s.dim() == 0).count(), 16);
        assert_poset_axioms(&p);
    }

    #[test]
    fn hex_z6_strata_match_cone_orders() {
        let q = presets::hex_torus_z6();
        let p = torus_strata(&q).unwrap();
        assert_eq!(p.strata.len(), 4);
        let mut orders: Vec<usize> = p
            .strata
            .iter()
            .filter(|s| s.dim() == 0)
            .map(|s| s.subgroup_class.order())
            .collect();
        orders.sort_unstable();
        assert_eq!(orders, vec![2, 3, 6], "cone points of orders 2, 3, 6");
        // Orbit sizes: the order-2 stratum collects 3 half points, order-3
        // collects 2 centers, order-6 is the origin alone.
        for s in p.strata.iter().filter(|s| s.dim() == 0) {
            let expected = match s.subgroup_class.order() {
                2 => 3,
                3 => 2,
                6 => 1,
                _ => unreachable!(),
            };
            assert_eq!(s.offsets.len(), expected);
        }
        assert_poset_axioms(&p);
    }

    #[test]
    fn square_z4_strata_match_cone_orders() {
        let q = presets::square_torus_z4();
        let p = torus_strata(&q).unwrap();
        assert_eq!(p.strata.len(), 4);
        let mut orders: Vec<usize> = p
            .strata
            .iter()
            .filter(|s| s.dim() == 0)
            .map(|s| s.subgroup_class.order())
            .collect();
        orders.sort_unstable();
        assert_eq!(orders, vec![2, 4, 4]);
    }

    #[test]
    fn descent_finds_minimal_stratum() {
        let q = presets::square_4torus_z2();
        let p = torus_strata(&q).unwrap();
        // A regular point goes to the top.
        let regular = CVec::from_slice(&[
            Complex64::new(0.31, 0.17),
            Complex64::new(0.12, 0.43),
        ]);
        assert_eq!(p.singular_descent(&regular).unwrap(), p.max_index);
        // The all-half point goes to its own point stratum.
        let half = CVec::from_slice(&[Complex64::new(0.5, 0.5), Complex64::new(0.5, 0.5)]);
        let idx = p.singular_descent(&half).unwrap();
        assert_eq!(p.strata[idx].dim(), 0);
        assert!(q.torus_dist(&p.strata[idx].offsets[0], &half) < 1e-9);
    }

    #[test]
    fn descent_on_chart_axis() {
        let chart = presets::chart_c2_klein();
        let p = local_strata(chart.group()).unwrap();
        let z = CVec::from_slice(&[Complex64::new(0.0, 0.0), Complex64::new(0.7, -0.2)]);
        let idx = p.singular_descent(&z).unwrap();
        assert_eq!(p.strata[idx].height, 1, "axis point off origin");
        let origin = CVec::zero(2);
        let oi = p.singular_descent(&origin).unwrap();
        assert_eq!(p.strata[oi].height, 2);
    }

    #[test]
    fn descent_rejects_dimension_mismatch() {
        let q = presets::square_torus_z2();
        let p = torus_strata(&q).unwrap();
        let bad = CVec::zero(2);
        assert!(matches!(
            p.singular_descent(&bad),
            Err(StrataError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn generic_points_on_fixed_spaces_have_exact_isotropy() {
        // Sampled effectivity: >= 99% of random points on each stratum's
        // fixed locus have isotropy exactly the stratum subgroup.
        let chart = presets::chart_c2_klein();
        let p = local_strata(chart.group()).unwrap();
        let action = chart.group();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for s in &p.strata {
            if s.dim() == 0 {
                continue;
            }
            let mut hits = 0;
            let total = 200;
            for _ in 0..total {
                let mut z = CVec::zero(2);
                for b in s.fixed_subspace.basis() {
                    let coeff = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    z = z + CVec::from_slice(b.as_slice()) * coeff;
                }
                let iso: Vec<usize> = (0..action.order())
                    .filter(|&g| action.apply(g, &z).dist(&z) < 1e-9)
                    .collect();
                if iso == s.subgroup_class.elements {
                    hits += 1;
                }
            }
            assert!(hits * 100 >= total * 99, "only {hits}/{total} generic");
        }
    }

    #[test]
    fn exports_are_well_formed() {
        let q = presets::square_torus_z2();
        let p = torus_strata(&q).unwrap();
        let dot = p.to_dot();
        assert!(dot.starts_with("digraph"));
        assert_eq!(dot.matches(" -> ").count(), 4, "four cover edges to the top");
        let j = p.to_json();
        assert_eq!(j["strata"].as_array().unwrap().len(), 5);
        assert_eq!(j["max_index"], 0);
    }
}
