//! Separated covering lattices on charts and torus quotient strata.
//!
//! A separated lattice is a finite point set that covers a declared region
//! at covering radius `r` and splits into families whose members stay at
//! least `separation` apart under every group element (property (P)). The
//! primitive builders work in unit-density "lemma coordinates": annular
//! sector lattices on `C` for cyclic actions, plain residue grids, and
//! products with boundary parts. `chart_lattice` assembles them over the
//! cyclic covers of a finite unitary action and rescales to `g_k` units;
//! `stratum_lattice` runs the analogous periodic grid construction on a
//! torus quotient stratum. `verify_property_p` is the independent checker
//! every builder is tested against: covering on a dense grid, exhaustive
//! orbit-aware separation, and sampled distribution bounds.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::cvec::CVec;
use crate::geometry::{FixedComponent, GeometryError, TorusQuotient};
use crate::group::{ComplexSubspace, FiniteUnitaryAction, GroupError};
use crate::linalg::{apply, kernel_basis};
use crate::strata::Stratum;

/// Gaussian weight scale in distribution checks: weights are `exp(-d^2/5)`.
pub const WEIGHT_SCALE: f64 = 5.0;
/// Safety factor applied to self-separation exclusion radii.
pub const SELF_SEPARATION_MARGIN: f64 = 1.05;
/// Beyond this distance `exp(-d^2/5)` is below 2e-15 and sums are cut off.
const WEIGHT_TAIL_RADIUS: f64 = 13.0;
/// Number of seeded random base points in distribution checks.
const SAMPLE_COUNT: usize = 1000;
/// Seed for the distribution sampler.
const SAMPLE_SEED: u64 = 0x0bdd_1ce5;
/// Absolute slack for floating-point comparisons against declared bounds.
const FLOAT_SLACK: f64 = 1e-9;
/// Margin below the separation target at which a pair counts as a conflict.
const CONFLICT_MARGIN: f64 = 1e-7;
/// Quantization scale for orbit-deduplication hash keys.
const DEDUP_SCALE: f64 = 1e7;
/// Fraction of the covering radius actually used when spacing grids.
const COVER_SPACING_SAFETY: f64 = 0.98;
/// Errors from lattice construction and verification.
#[derive(Debug, Error)]
pub enum LatticeError {
    #[error("separation must be at least 1, got {0}")]
    InvalidSeparation(f64),
    #[error("covering radius must be positive, got {0}")]
    InvalidCoveringRadius(f64),
    #[error("cyclic order must be at least 1, got {0}")]
    InvalidCyclicOrder(u32),
    #[error("radius {0} is too small to hold any lattice point")]
    DegenerateRadius(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("incompatible inputs: {0}")]
    IncompatibleRegions(String),
    #[error("stratum region is empty at this rescaling; increase k")]
    EmptyStratumRegion,
    #[error("eigenspace split failed (dimension defect {0})")]
    EigenSplit(usize),
    #[error("could not reach separation {0} within the iteration budget")]
    SeparationUnreachable(f64),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

// ---------------------------------------------------------------------------
// Metric contexts
// ---------------------------------------------------------------------------

/// How distances and group images are computed during verification.
#[derive(Clone, Debug)]
pub enum MetricContext {
    /// Plain Euclidean distance, no group action.
    Euclidean { dim: usize },
    /// Quotient distance under a finite unitary action fixing the origin.
    Chart(FiniteUnitaryAction),
    /// Torus quotient in `g_k` units; `exempt_self` lists the elements
    /// (pointwise stratum stabilizer) whose self-displacement is not a
    /// separation requirement.
    Torus {
        quotient: TorusQuotient,
        k: u32,
        exempt_self: Vec<usize>,
    },
}

impl MetricContext {
    /// Ambient complex dimension.
    pub fn dim(&self) -> usize {
        match self {
            MetricContext::Euclidean { dim } => *dim,
            MetricContext::Chart(a) => a.dim(),
            MetricContext::Torus { quotient, .. } => quotient.complex_dim(),
        }
    }

    /// Number of group elements (1 when there is no action).
    pub fn group_order(&self) -> usize {
        match self {
            MetricContext::Euclidean { .. } => 1,
            MetricContext::Chart(a) => a.order(),
            MetricContext::Torus { quotient, .. } => quotient.group().order(),
        }
    }

    /// Quotient distance between two points in `g_k` units.
    pub fn quotient_dist(&self, x: &CVec, y: &CVec) -> f64 {
        match self {
            MetricContext::Euclidean { .. } => x.dist(y),
            MetricContext::Chart(a) => {
                let mut best = f64::INFINITY;
                for g in 0..a.order() {
                    best = best.min(x.dist(&a.apply(g, y)));
                }
                best
            }
            MetricContext::Torus { quotient, k, .. } => {
                let s = quotient.gk_scale(*k);
                let xs = *x * (1.0 / s);
                let ys = *y * (1.0 / s);
                quotient.quotient_dist(&xs, &ys) * s
            }
        }
    }

    fn is_self_exempt(&self, h: usize) -> bool {
        match self {
            MetricContext::Euclidean { .. } => true,
            MetricContext::Chart(a) => h == a.identity_index(),
            MetricContext::Torus {
                quotient,
                exempt_self,
                ..
            } => h == quotient.group().identity_index() || exempt_self.contains(&h),
        }
    }
}

// ---------------------------------------------------------------------------
// Regions
// ---------------------------------------------------------------------------

/// The set a lattice claims to cover. Lengths are in the lattice's own
/// units (lemma units before rescaling, `g_k` units after).
#[derive(Clone, Debug)]
pub enum Region {
    /// Nothing; `dim` records the ambient complex dimension.
    Empty { dim: usize },
    /// A single point.
    PointAt { at: CVec },
    /// `inner <= |z| <= outer`; `inner = 0` gives a ball.
    Annulus { dim: usize, inner: f64, outer: f64 },
    /// Axis-aligned real box with interleaved bounds (x1, y1, x2, y2, ...).
    BoxRegion { lo: Vec<f64>, hi: Vec<f64> },
    /// Points within `width` of a subspace, clipped to `|z| <= outer`.
    Tube {
        subspace: ComplexSubspace,
        width: f64,
        outer: f64,
    },
    /// Cartesian product; coordinates split by factor dimension.
    Product(Vec<Region>),
    /// Union of regions in a common ambient space.
    Union(Vec<Region>),
    /// `base` minus open tubes of the given radii around subspaces.
    MinusTubes {
        base: Box<Region>,
        tubes: Vec<(ComplexSubspace, f64)>,
    },
    /// `base` intersected with the closed ball `|z| <= outer`.
    Clipped { base: Box<Region>, outer: f64 },
    /// Image of `inner` under a unitary frame (columns are the new axes).
    Framed {
        frame: DMatrix<Complex64>,
        inner: Box<Region>,
    },
    /// A (sub)torus cell spanned by `axes` from `offset`, minus exclusion
    /// balls around the quotient's singular components (radii aligned with
    /// `singular_components()`; zero disables one).
    TorusCell {
        offset: CVec,
        axes: Vec<CVec>,
        exclusions: Vec<f64>,
    },
}

impl Region {
    /// Ambient complex dimension of the region.
    pub fn complex_dim(&self) -> usize {
        match self {
            Region::Empty { dim } => *dim,
            Region::PointAt { at } => at.dim(),
            Region::Annulus { dim, .. } => *dim,
            Region::BoxRegion { lo, .. } => lo.len() / 2,
            Region::Tube { subspace, .. } => subspace.ambient_dim(),
            Region::Product(parts) => parts.iter().map(Region::complex_dim).sum(),
            Region::Union(parts) => parts.first().map_or(0, Region::complex_dim),
            Region::MinusTubes { base, .. } => base.complex_dim(),
            Region::Clipped { base, .. } => base.complex_dim(),
            Region::Framed { frame, .. } => frame.nrows(),
            Region::TorusCell { offset, .. } => offset.dim(),
        }
    }

    /// Membership test. Torus cells need a torus context for exclusion
    /// distances; they report `false` under other contexts.
    pub fn contains(&self, z: &CVec, ctx: &MetricContext) -> bool {
        match self {
            Region::Empty { .. } => false,
            Region::PointAt { at } => at.dist(z) <= FLOAT_SLACK,
            Region::Annulus { inner, outer, .. } => {
                let n = z.norm();
                n >= *inner && n <= *outer
            }
            Region::BoxRegion { lo, hi } => {
                let xy = z.to_real();
                xy.iter()
                    .zip(lo.iter().zip(hi.iter()))
                    .all(|(x, (l, h))| *x >= *l && *x <= *h)
            }
            Region::Tube {
                subspace,
                width,
                outer,
            } => z.norm() <= *outer && subspace.distance(z) <= *width,
            Region::Product(parts) => {
                let comps = z.components();
                let mut at = 0;
                for part in parts {
                    let d = part.complex_dim();
                    let zp = CVec::from_slice(&comps[at..at + d]);
                    if !part.contains(&zp, ctx) {
                        return false;
                    }
                    at += d;
                }
                true
            }
            Region::Union(parts) => parts.iter().any(|p| p.contains(z, ctx)),
            Region::MinusTubes { base, tubes } => {
                tubes.iter().all(|(s, w)| s.distance(z) >= *w) && base.contains(z, ctx)
            }
            Region::Clipped { base, outer } => z.norm() <= *outer && base.contains(z, ctx),
            Region::Framed { frame, inner } => {
                let w = apply(&frame.adjoint(), z);
                inner.contains(&w, ctx)
            }
            Region::TorusCell { exclusions, .. } => match ctx {
                MetricContext::Torus { quotient, k, .. } => {
                    let s = quotient.gk_scale(*k);
                    let zt = *z * (1.0 / s);
                    quotient
                        .singular_components()
                        .iter()
                        .zip(exclusions.iter())
                        .all(|(c, &e)| e <= 0.0 || quotient.dist_to_component(&zt, c) * s >= e)
                }
                _ => false,
            },
        }
    }

    /// Enclosing real box (interleaved), or `None` for empty regions.
    pub fn bounding_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match self {
            Region::Empty { .. } => None,
            Region::PointAt { at } => {
                let xy = at.to_real();
                Some((xy.clone(), xy))
            }
            Region::Annulus { dim, outer, .. } => {
                let d = 2 * dim;
                Some((vec![-outer; d], vec![*outer; d]))
            }
            Region::BoxRegion { lo, hi } => Some((lo.clone(), hi.clone())),
            Region::Tube { subspace, outer, .. } => {
                let d = 2 * subspace.ambient_dim();
                Some((vec![-outer; d], vec![*outer; d]))
            }
            Region::Product(parts) => {
                let mut lo = Vec::new();
                let mut hi = Vec::new();
                for part in parts {
                    let (l, h) = part.bounding_box()?;
                    lo.extend(l);
                    hi.extend(h);
                }
                Some((lo, hi))
            }
            Region::Union(parts) => {
                let boxes: Vec<_> = parts.iter().filter_map(Region::bounding_box).collect();
                let first = boxes.first()?.clone();
                Some(boxes.into_iter().fold(first, |(mut lo, mut hi), (l, h)| {
                    for i in 0..lo.len() {
                        lo[i] = lo[i].min(l[i]);
                        hi[i] = hi[i].max(h[i]);
                    }
                    (lo, hi)
                }))
            }
            Region::MinusTubes { base, .. } => base.bounding_box(),
            Region::Clipped { base, outer } => {
                let (lo, hi) = base.bounding_box()?;
                Some((
                    lo.iter().map(|l| l.max(-outer)).collect(),
                    hi.iter().map(|h| h.min(*outer)).collect(),
                ))
            }
            Region::Framed { frame, inner } => {
                let (lo, hi) = inner.bounding_box()?;
                let corner: f64 = lo
                    .iter()
                    .zip(hi.iter())
                    .map(|(l, h)| l.abs().max(h.abs()).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let d = 2 * frame.nrows();
                Some((vec![-corner; d], vec![corner; d]))
            }
            Region::TorusCell { offset, axes, .. } => {
                let dim = 2 * offset.dim();
                let mut lo = vec![f64::INFINITY; dim];
                let mut hi = vec![f64::NEG_INFINITY; dim];
                for mask in 0..(1usize << axes.len()) {
                    let mut corner = *offset;
                    for (a, axis) in axes.iter().enumerate() {
                        if mask >> a & 1 == 1 {
                            corner = corner + *axis;
                        }
                    }
                    for (i, x) in corner.to_real().iter().enumerate() {
                        lo[i] = lo[i].min(*x);
                        hi[i] = hi[i].max(*x);
                    }
                }
                Some((lo, hi))
            }
        }
    }

    /// Rescale every length by `f` (subspace directions are unchanged).
    pub fn scale(&self, f: f64) -> Region {
        match self {
            Region::Empty { dim } => Region::Empty { dim: *dim },
            Region::PointAt { at } => Region::PointAt { at: *at * f },
            Region::Annulus { dim, inner, outer } => Region::Annulus {
                dim: *dim,
                inner: inner * f,
                outer: outer * f,
            },
            Region::BoxRegion { lo, hi } => Region::BoxRegion {
                lo: lo.iter().map(|x| x * f).collect(),
                hi: hi.iter().map(|x| x * f).collect(),
            },
            Region::Tube {
                subspace,
                width,
                outer,
            } => Region::Tube {
                subspace: subspace.clone(),
                width: width * f,
                outer: outer * f,
            },
            Region::Product(parts) => Region::Product(parts.iter().map(|p| p.scale(f)).collect()),
            Region::Union(parts) => Region::Union(parts.iter().map(|p| p.scale(f)).collect()),
            Region::MinusTubes { base, tubes } => Region::MinusTubes {
                base: Box::new(base.scale(f)),
                tubes: tubes.iter().map(|(s, w)| (s.clone(), w * f)).collect(),
            },
            Region::Clipped { base, outer } => Region::Clipped {
                base: Box::new(base.scale(f)),
                outer: outer * f,
            },
            Region::Framed { frame, inner } => Region::Framed {
                frame: frame.clone(),
                inner: Box::new(inner.scale(f)),
            },
            Region::TorusCell {
                offset,
                axes,
                exclusions,
            } => Region::TorusCell {
                offset: *offset * f,
                axes: axes.iter().map(|a| *a * f).collect(),
                exclusions: exclusions.iter().map(|e| e * f).collect(),
            },
        }
    }

    /// Verification grid over the region at the given step, or `None` when
    /// there is nothing to sample.
    pub fn grid(&self, step: f64) -> Option<RegionGrid> {
        match self {
            Region::Empty { .. } => None,
            Region::PointAt { at } => Some(RegionGrid {
                origin: *at,
                axes: Vec::new(),
            }),
            Region::TorusCell { offset, axes, .. } => {
                let mut gaxes = Vec::new();
                for axis in axes {
                    let count = (axis.norm() / step).ceil().max(1.0) as usize;
                    gaxes.push((*axis * (1.0 / count as f64), count));
                }
                Some(RegionGrid {
                    origin: *offset,
                    axes: gaxes,
                })
            }
            _ => {
                let (lo, hi) = self.bounding_box()?;
                let n = lo.len() / 2;
                let mut axes = Vec::new();
                for (d, (l, h)) in lo.iter().zip(hi.iter()).enumerate() {
                    let count = ((h - l) / step).floor() as usize + 1;
                    let mut axis = vec![0.0; 2 * n];
                    axis[d] = step;
                    axes.push((CVec::from_real(&axis), count));
                }
                Some(RegionGrid {
                    origin: CVec::from_real(&lo),
                    axes,
                })
            }
        }
    }

    /// JSON descriptor of the region.
    pub fn to_json(&self) -> Value {
        match self {
            Region::Empty { dim } => json!({"kind": "empty", "dim": dim}),
            Region::PointAt { at } => json!({"kind": "point", "at": at}),
            Region::Annulus { dim, inner, outer } => {
                json!({"kind": "annulus", "dim": dim, "inner": inner, "outer": outer})
            }
            Region::BoxRegion { lo, hi } => json!({"kind": "box", "lo": lo, "hi": hi}),
            Region::Tube { subspace, width, outer } => json!({
                "kind": "tube",
                "subspace_dim": subspace.dim(),
                "width": width,
                "outer": outer,
            }),
            Region::Product(parts) => {
                json!({"kind": "product", "parts": parts.iter().map(Region::to_json).collect::<Vec<_>>()})
            }
            Region::Union(parts) => {
                json!({"kind": "union", "parts": parts.iter().map(Region::to_json).collect::<Vec<_>>()})
            }
            Region::MinusTubes { base, tubes } => json!({
                "kind": "minus_tubes",
                "base": base.to_json(),
                "tubes": tubes
                    .iter()
                    .map(|(s, w)| json!({"subspace_dim": s.dim(), "radius": w}))
                    .collect::<Vec<_>>(),
            }),
            Region::Clipped { base, outer } => json!({
                "kind": "clipped",
                "base": base.to_json(),
                "outer": outer,
            }),
            Region::Framed { inner, .. } => {
                json!({"kind": "framed", "inner": inner.to_json()})
            }
            Region::TorusCell {
                offset,
                axes,
                exclusions,
            } => json!({
                "kind": "torus_cell",
                "offset": offset,
                "axes": axes,
                "exclusions": exclusions,
            }),
        }
    }
}

/// Affine sampling grid: `origin + sum_i idx_i * axes_i.0`.
pub struct RegionGrid {
    pub origin: CVec,
    pub axes: Vec<(CVec, usize)>,
}

impl RegionGrid {
    /// Total number of grid nodes.
    pub fn total(&self) -> usize {
        self.axes.iter().map(|(_, c)| *c).product::<usize>().max(1)
    }

    /// Node for a flat index (last axis varies fastest).
    pub fn point(&self, mut flat: usize) -> CVec {
        let mut p = self.origin;
        for (axis, count) in self.axes.iter().rev() {
            let i = flat % count;
            flat /= count;
            p = p + *axis * (i as f64);
        }
        p
    }
}

// ---------------------------------------------------------------------------
// Lattice data
// ---------------------------------------------------------------------------

/// Declared constants of a separated lattice.
#[derive(Clone, Debug, Serialize)]
pub struct LatticeParams {
    /// Distribution/family constant (measured constants are carried).
    pub c: f64,
    /// Requested separation scale `D`.
    pub d: f64,
    /// Guaranteed separation between same-family points under the action.
    pub separation: f64,
    /// Family-count exponent: families number at most `c * d^m`.
    pub m: u32,
    /// Covering radius on the declared region.
    pub r: f64,
    /// Radius of the exclusion tubes carved around singular sets.
    pub exclusion_radius: f64,
}

/// A covering point set split into separated families.
#[derive(Clone, Debug)]
pub struct SeparatedLattice {
    /// Ambient complex dimension.
    pub ambient: usize,
    /// All lattice points.
    pub points: Vec<CVec>,
    /// Point indices per family; every index appears exactly once.
    pub families: Vec<Vec<usize>>,
    /// Declared constants.
    pub params: LatticeParams,
    /// Region the points cover at radius `params.r`.
    pub region: Region,
    /// Singular subspaces avoided by this lattice with their tube radii;
    /// used when refining against another subgroup's lattice.
    pub excluded: Vec<(ComplexSubspace, f64)>,
    /// Order of the group the lattice is equivariantly separated for
    /// (1 for plain lattices).
    pub group_order: usize,
}

impl SeparatedLattice {
    /// Number of points.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// True when the lattice has no points.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Family id per point.
    pub fn family_ids(&self) -> Vec<u32> {
        let mut ids = vec![0u32; self.points.len()];
        for (f, members) in self.families.iter().enumerate() {
            for &i in members {
                ids[i] = f as u32;
            }
        }
        ids
    }

    /// CSV dump: one row per point, interleaved coordinates plus family.
    pub fn to_csv(&self) -> String {
        let ids = self.family_ids();
        let mut out = String::new();
        let header: Vec<String> = (0..self.ambient)
            .flat_map(|i| [format!("re{i}"), format!("im{i}")])
            .chain(["family".to_string()])
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for (p, fam) in self.points.iter().zip(ids.iter()) {
            let row: Vec<String> = p
                .to_real()
                .iter()
                .map(|x| format!("{x:.12e}"))
                .chain([fam.to_string()])
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// JSON summary: parameters, region, and counts.
    pub fn to_json(&self) -> Value {
        json!({
            "ambient": self.ambient,
            "points": self.points.len(),
            "families": self.families.len(),
            "group_order": self.group_order,
            "params": serde_json::to_value(&self.params).expect("params serialize"),
            "region": self.region.to_json(),
        })
    }
}

// ---------------------------------------------------------------------------
// Primitive builders
// ---------------------------------------------------------------------------

/// Separation constant for the cyclic construction on `C`: controls both
/// the exclusion radius `C*D` around the origin and the family bound.
pub fn c_constant(order: u32) -> f64 {
    if order <= 1 {
        return 1.0;
    }
    let k = f64::from(order);
    let sector = 1.0 / (2.0 * (PI / (2.0 * k)).sin());
    let rotation = 1.0 / (2.0 * (PI / k).sin());
    sector.max(rotation).max(2.0 * k)
}

/// Ball volume coefficient in `d` real dimensions (`pi^(d/2) / (d/2)!`).
fn ball_volume_coeff(real_dim: usize) -> f64 {
    let m = real_dim / 2;
    let mut v = 1.0;
    for i in 1..=m {
        v *= PI / i as f64;
    }
    v
}

/// Density bound `F_q(s)/s^dim` for a grid of minimal spacing `spacing`
/// in `real_dim` real dimensions, folded over `group_order` images.
fn density_constant(real_dim: usize, spacing: f64, group_order: usize) -> f64 {
    let root = (real_dim as f64).sqrt();
    ball_volume_coeff(real_dim)
        * (1.0 / spacing + root / 2.0).powi(real_dim as i32)
        * group_order as f64
}

fn empty_lattice(
    ambient: usize,
    params: LatticeParams,
    region: Region,
    excluded: Vec<(ComplexSubspace, f64)>,
    group_order: usize,
) -> SeparatedLattice {
    SeparatedLattice {
        ambient,
        points: Vec::new(),
        families: Vec::new(),
        params,
        region,
        excluded,
        group_order,
    }
}

fn standard_subspace(ambient: usize, dims: &[usize]) -> ComplexSubspace {
    let basis = dims
        .iter()
        .map(|&i| DVector::from_fn(ambient, |r, _| Complex64::from(f64::from(u8::from(r == i)))))
        .collect();
    ComplexSubspace::from_orthonormal(ambient, basis)
}

/// Integer points of the box `[lo, hi]`, filtered by `keep`.
fn integer_points(lo: &[f64], hi: &[f64], mut keep: impl FnMut(&CVec) -> bool) -> Vec<CVec> {
    let dims = lo.len();
    let ilo: Vec<i64> = lo.iter().map(|x| x.ceil() as i64).collect();
    let ihi: Vec<i64> = hi.iter().map(|x| x.floor() as i64).collect();
    if ilo.iter().zip(ihi.iter()).any(|(l, h)| l > h) {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut idx = ilo.clone();
    loop {
        let xy: Vec<f64> = idx.iter().map(|&i| i as f64).collect();
        let p = CVec::from_real(&xy);
        if keep(&p) {
            out.push(p);
        }
        let mut d = dims;
        loop {
            if d == 0 {
                return out;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] <= ihi[d] {
                break;
            }
            idx[d] = ilo[d];
        }
    }
}

/// Annular sector lattice on `C` for the rotation action of order
/// `order`: integer points outside the exclusion ball `|z| <= C*D`, split
/// by residues mod `ceil(D)` and by `2*order` angular sectors.
///
/// `order = 1` means no group: the full integer grid in the ball, split by
/// residues only.
pub fn lattice_1d(order: u32, d: f64, radius: f64) -> Result<SeparatedLattice, LatticeError> {
    if order == 0 {
        return Err(LatticeError::InvalidCyclicOrder(order));
    }
    if d < 1.0 || !d.is_finite() {
        return Err(LatticeError::InvalidSeparation(d));
    }
    if radius < 1.0 || !radius.is_finite() {
        return Err(LatticeError::DegenerateRadius(radius));
    }
    let q = d.ceil() as i64;
    let c = c_constant(order);
    let excl = if order >= 2 { c * d } else { 0.0 };
    let sectors = if order >= 2 { 2 * order as i64 } else { 1 };
    let sector_width = 2.0 * PI / sectors as f64;

    let points = integer_points(&[-radius, -radius], &[radius, radius], |p| {
        let n = p.norm();
        n <= radius + FLOAT_SLACK && (order == 1 || n >= excl - FLOAT_SLACK)
    });
    if points.is_empty() {
        return Err(LatticeError::DegenerateRadius(radius));
    }

    let mut fams: BTreeMap<(i64, i64, i64), Vec<usize>> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        let xy = p.to_real();
        let (x, y) = (xy[0], xy[1]);
        let res = ((x as i64).rem_euclid(q), (y as i64).rem_euclid(q));
        let sector = if sectors == 1 {
            0
        } else {
            let ang = y.atan2(x) + PI;
            ((ang / sector_width).floor() as i64).clamp(0, sectors - 1)
        };
        fams.entry((res.0, res.1, sector)).or_default().push(i);
    }
    let families: Vec<Vec<usize>> = fams.into_values().collect();

    let inner = if order >= 2 { excl + SQRT_2 } else { 0.0 };
    let outer = radius - FRAC_1_SQRT_2;
    let region = if inner < outer {
        Region::Annulus { dim: 1, inner, outer }
    } else {
        Region::Empty { dim: 1 }
    };
    let n_fam = families.len() as f64;
    let params = LatticeParams {
        c: c.max(n_fam / d.powi(2))
            .max(density_constant(2, 1.0, order as usize)),
        d,
        separation: d,
        m: 2,
        r: FRAC_1_SQRT_2,
        exclusion_radius: excl,
    };
    let excluded = if order >= 2 {
        vec![(standard_subspace(1, &[]), excl)]
    } else {
        Vec::new()
    };
    Ok(SeparatedLattice {
        ambient: 1,
        points,
        families,
        params,
        region,
        excluded,
        group_order: order as usize,
    })
}

/// Plain residue grid on a region: all integer points inside, split into
/// `ceil(D)^(2n)` coordinate-residue families. No equivariance is claimed.
pub fn plain_lattice(region: &Region, d: f64) -> Result<SeparatedLattice, LatticeError> {
    if d < 1.0 || !d.is_finite() {
        return Err(LatticeError::InvalidSeparation(d));
    }
    let dim = region.complex_dim();
    if dim == 0 || dim > 4 {
        return Err(LatticeError::DimensionMismatch(format!(
            "plain lattice needs ambient dimension 1..=4, got {dim}"
        )));
    }
    if matches!(region, Region::TorusCell { .. }) {
        return Err(LatticeError::IncompatibleRegions(
            "plain lattices are Euclidean; use stratum_lattice on torus cells".into(),
        ));
    }
    let q = d.ceil() as i64;
    let ctx = MetricContext::Euclidean { dim };
    let points = match region.bounding_box() {
        None => Vec::new(),
        Some((lo, hi)) => integer_points(&lo, &hi, |p| region.contains(p, &ctx)),
    };

    let mut fams: BTreeMap<Vec<i64>, Vec<usize>> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        let key: Vec<i64> = p
            .to_real()
            .iter()
            .map(|x| (*x as i64).rem_euclid(q))
            .collect();
        fams.entry(key).or_default().push(i);
    }
    let families: Vec<Vec<usize>> = fams.into_values().collect();
    let n_fam = families.len() as f64;
    let rdim = 2 * dim;
    let params = LatticeParams {
        c: (2f64.powi(rdim as i32))
            .max(n_fam / d.powi(rdim as i32))
            .max(density_constant(rdim, 1.0, 1)),
        d,
        separation: d,
        m: rdim as u32,
        r: (rdim as f64).sqrt(),
        exclusion_radius: 0.0,
    };
    Ok(SeparatedLattice {
        ambient: dim,
        points,
        families,
        params,
        region: region.clone(),
        excluded: Vec::new(),
        group_order: 1,
    })
}

// ---------------------------------------------------------------------------
// Products and refinement
// ---------------------------------------------------------------------------

fn concat_points(p1: &CVec, p2: &CVec) -> CVec {
    let mut comps = Vec::with_capacity(p1.dim() + p2.dim());
    comps.extend_from_slice(p1.components());
    comps.extend_from_slice(p2.components());
    CVec::from_slice(&comps)
}

fn direct_sum_subspace(
    a: &ComplexSubspace,
    b: &ComplexSubspace,
    n1: usize,
    n2: usize,
) -> ComplexSubspace {
    let n = n1 + n2;
    let mut basis = Vec::new();
    for v in a.basis() {
        basis.push(DVector::from_fn(n, |r, _| {
            if r < n1 {
                v[r]
            } else {
                Complex64::from(0.0)
            }
        }));
    }
    for v in b.basis() {
        basis.push(DVector::from_fn(n, |r, _| {
            if r >= n1 {
                v[r - n1]
            } else {
                Complex64::from(0.0)
            }
        }));
    }
    ComplexSubspace::from_orthonormal(n, basis)
}

/// Core product assembly: main part `l1 x l2` plus the boundary parts
/// `b1 x l2` and `l1 x b2`, with an optional point filter fused into the
/// enumeration so clipped products never materialize discarded points.
fn product_with_filter(
    l1: &SeparatedLattice,
    l2: &SeparatedLattice,
    b1: &SeparatedLattice,
    b2: &SeparatedLattice,
    filter: &dyn Fn(&CVec) -> bool,
) -> Result<SeparatedLattice, LatticeError> {
    let n1 = l1.ambient;
    let n2 = l2.ambient;
    if n1 + n2 > 4 {
        return Err(LatticeError::DimensionMismatch(format!(
            "product ambient dimension {} exceeds 4",
            n1 + n2
        )));
    }
    if b1.ambient != n1 || b2.ambient != n2 {
        return Err(LatticeError::DimensionMismatch(
            "boundary lattices must match the factor dimensions".into(),
        ));
    }
    for (da, db) in [
        (l1.params.d, l2.params.d),
        (l1.params.d, b1.params.d),
        (l2.params.d, b2.params.d),
    ] {
        if (da - db).abs() > 1e-9 {
            return Err(LatticeError::IncompatibleRegions(
                "product factors must share the same separation scale D".into(),
            ));
        }
    }
    let d = l1.params.d;

    let parts: [(&SeparatedLattice, &SeparatedLattice, u8); 3] =
        [(l1, l2, 0), (b1, l2, 1), (l1, b2, 2)];
    let mut points = Vec::new();
    let mut fams: BTreeMap<(u8, usize, usize), Vec<usize>> = BTreeMap::new();
    let mut used_parts: Vec<(u8, f64, f64, f64)> = Vec::new(); // (tag, r, sep, m)

    for (la, lb, tag) in parts {
        if la.is_empty() || lb.is_empty() {
            continue;
        }
        let mut any = false;
        for (fa, mem_a) in la.families.iter().enumerate() {
            for (fb, mem_b) in lb.families.iter().enumerate() {
                let mut bucket = Vec::new();
                for &ia in mem_a {
                    for &ib in mem_b {
                        let p = concat_points(&la.points[ia], &lb.points[ib]);
                        if filter(&p) {
                            bucket.push(points.len());
                            points.push(p);
                        }
                    }
                }
                if !bucket.is_empty() {
                    fams.insert((tag, fa, fb), bucket);
                    any = true;
                }
            }
        }
        if any {
            let r = (la.params.r.powi(2) + lb.params.r.powi(2)).sqrt();
            let sep = la.params.separation.min(lb.params.separation);
            let m = f64::from(la.params.m.max(lb.params.m));
            used_parts.push((tag, r, sep, m));
        }
    }

    let families: Vec<Vec<usize>> = fams.into_values().collect();

    let mut region_parts = Vec::new();
    for (tag, ..) in &used_parts {
        let (ra, rb) = match tag {
            0 => (&l1.region, &l2.region),
            1 => (&b1.region, &l2.region),
            _ => (&l1.region, &b2.region),
        };
        region_parts.push(Region::Product(vec![ra.clone(), rb.clone()]));
    }
    let region = match region_parts.len() {
        0 => Region::Empty { dim: n1 + n2 },
        1 => region_parts.pop().expect("one part"),
        _ => Region::Union(region_parts),
    };

    let excluded = if l1.excluded.len() == 1 && l2.excluded.len() == 1 {
        let (s1, w1) = &l1.excluded[0];
        let (s2, w2) = &l2.excluded[0];
        vec![(
            direct_sum_subspace(s1, s2, n1, n2),
            (w1.powi(2) + w2.powi(2)).sqrt(),
        )]
    } else {
        Vec::new()
    };

    let r = used_parts.iter().map(|p| p.1).fold(0.0f64, f64::max);
    let separation = used_parts
        .iter()
        .map(|p| p.2)
        .fold(f64::INFINITY, f64::min)
        .min(d);
    let m = used_parts
        .iter()
        .map(|p| p.3)
        .fold(0.0f64, f64::max)
        .max(f64::from(l1.params.m.max(l2.params.m))) as u32;
    let base_c = SQRT_2
        * l1.params
            .c
            .max(l2.params.c)
            .max(b1.params.c)
            .max(b2.params.c);
    let n_fam = families.len() as f64;
    let params = LatticeParams {
        c: base_c.max(n_fam / d.powi(m as i32)),
        d,
        separation: if points.is_empty() { d } else { separation },
        m,
        r,
        exclusion_radius: l1
            .params
            .exclusion_radius
            .max(l2.params.exclusion_radius),
    };
    Ok(SeparatedLattice {
        ambient: n1 + n2,
        points,
        families,
        params,
        region,
        excluded,
        group_order: l1.group_order.max(l2.group_order),
    })
}

/// Product lattice for a direct sum of actions: the main product plus the
/// two boundary parts covering the neighborhoods where one factor's
/// lattice has been excluded. `b1`/`b2` must cover those neighborhoods.
pub fn lattice_product(
    l1: &SeparatedLattice,
    l2: &SeparatedLattice,
    b1: &SeparatedLattice,
    b2: &SeparatedLattice,
) -> Result<SeparatedLattice, LatticeError> {
    product_with_filter(l1, l2, b1, b2, &|_| true)
}

struct FlatCells {
    cell: f64,
    map: HashMap<[i16; 8], Vec<u32>>,
}

impl FlatCells {
    fn build(points: &[CVec], cell: f64) -> FlatCells {
        let mut map: HashMap<[i16; 8], Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            map.entry(Self::key(p, cell)).or_default().push(i as u32);
        }
        FlatCells { cell, map }
    }

    fn key(p: &CVec, cell: f64) -> [i16; 8] {
        let mut k = [0i16; 8];
        for (d, x) in p.to_real().iter().enumerate() {
            k[d] = (x / cell).floor().clamp(-30000.0, 30000.0) as i16;
        }
        k
    }

    fn for_each_in_rings(&self, p: &CVec, dims: usize, rings: i16, mut f: impl FnMut(u32)) {
        let center = Self::key(p, self.cell);
        let rdims = 2 * dims;
        let mut offset = vec![-rings; rdims];
        loop {
            let mut k = [0i16; 8];
            for d in 0..rdims {
                k[d] = center[d] + offset[d];
            }
            if let Some(list) = self.map.get(&k) {
                for &i in list {
                    f(i);
                }
            }
            let mut d = rdims;
            loop {
                if d == 0 {
                    return;
                }
                d -= 1;
                offset[d] += 1;
                if offset[d] <= rings {
                    break;
                }
                offset[d] = -rings;
            }
        }
    }
}

/// Union refinement: restrict `l1` to the complement of the exclusion
/// tubes carried by `l2`, then refine each family by nearest-point
/// assignment against `l2` so that same-family points agree on their
/// nearest `l2` companion. Lattices for a union of two subgroups arise
/// this way from the subgroups' own lattices.
pub fn lattice_union_refine(
    l1: &SeparatedLattice,
    l2: &SeparatedLattice,
) -> Result<SeparatedLattice, LatticeError> {
    if l1.ambient != l2.ambient {
        return Err(LatticeError::DimensionMismatch(format!(
            "union refinement needs equal ambient dimensions, got {} and {}",
            l1.ambient, l2.ambient
        )));
    }
    if (l1.params.d - l2.params.d).abs() > 1e-9 {
        return Err(LatticeError::IncompatibleRegions(
            "union refinement needs a common separation scale D".into(),
        ));
    }

    let keep: Vec<usize> = (0..l1.points.len())
        .filter(|&i| {
            l2.excluded
                .iter()
                .all(|(s, w)| s.distance(&l1.points[i]) >= w - FLOAT_SLACK)
        })
        .collect();
    let mut remap = vec![usize::MAX; l1.points.len()];
    let points: Vec<CVec> = keep
        .iter()
        .enumerate()
        .map(|(new, &old)| {
            remap[old] = new;
            l1.points[old]
        })
        .collect();

    // Nearest-companion assignment against l2 (skipped for trivial l2).
    let refine = l2.group_order > 1 && !l2.points.is_empty();
    let mut assignment = vec![0usize; points.len()];
    let mut max_assign = 0.0f64;
    if refine {
        let l2_ids = l2.family_ids();
        let cell = l2.params.r.max(0.5);
        let cells = FlatCells::build(&l2.points, cell);
        for (i, p) in points.iter().enumerate() {
            let mut best: Option<(f64, u32, u32)> = None;
            let mut rings = 1i16;
            loop {
                cells.for_each_in_rings(p, l1.ambient, rings, |j| {
                    let dist = p.dist(&l2.points[j as usize]);
                    let cand = (dist, l2_ids[j as usize], j);
                    best = Some(match best {
                        None => cand,
                        Some(b) => {
                            if cand.0 < b.0 - FLOAT_SLACK
                                || ((cand.0 - b.0).abs() <= FLOAT_SLACK
                                    && (cand.1, cand.2) < (b.1, b.2))
                            {
                                cand
                            } else {
                                b
                            }
                        }
                    });
                });
                if let Some(b) = best {
                    if b.0 <= (rings - 1) as f64 * cell || rings >= 8 {
                        break;
                    }
                } else if rings >= 8 {
                    break;
                }
                rings += 1;
            }
            match best {
                Some(b) => {
                    assignment[i] = b.1 as usize;
                    max_assign = max_assign.max(b.0);
                }
                None => assignment[i] = usize::MAX,
            }
        }
    }

    let mut fams: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (old_f, members) in l1.families.iter().enumerate() {
        for &old_i in members {
            let new_i = remap[old_i];
            if new_i != usize::MAX {
                fams.entry((old_f, assignment[new_i]))
                    .or_default()
                    .push(new_i);
            }
        }
    }
    let families: Vec<Vec<usize>> = fams.into_values().collect();

    let tubes: Vec<(ComplexSubspace, f64)> = l2
        .excluded
        .iter()
        .map(|(s, w)| (s.clone(), w + l1.params.r))
        .collect();
    let region = match (&l1.region, tubes.is_empty()) {
        (_, true) => l1.region.clone(),
        (Region::MinusTubes { base, tubes: t0 }, false) => Region::MinusTubes {
            base: base.clone(),
            tubes: t0.iter().cloned().chain(tubes).collect(),
        },
        (base, false) => Region::MinusTubes {
            base: Box::new(base.clone()),
            tubes,
        },
    };

    let d = l1.params.d;
    let m = l1.params.m + l2.params.m;
    let separation = if refine {
        (l1.params.separation - 2.0 * max_assign).max(0.0)
    } else {
        l1.params.separation
    };
    let n_fam = families.len() as f64;
    let params = LatticeParams {
        c: l1
            .params
            .c
            .max(l2.params.c)
            .max(n_fam / d.powi(m.min(127) as i32)),
        d,
        separation,
        m,
        r: l1.params.r,
        exclusion_radius: l1
            .params
            .exclusion_radius
            .max(l2.params.exclusion_radius),
    };
    Ok(SeparatedLattice {
        ambient: l1.ambient,
        points,
        families,
        params,
        region,
        excluded: l1
            .excluded
            .iter()
            .chain(l2.excluded.iter())
            .cloned()
            .collect(),
        group_order: l1.group_order.max(l2.group_order),
    })
}

// ---------------------------------------------------------------------------
// Chart lattices
// ---------------------------------------------------------------------------

/// Unitary eigenframe of a finite-order element via exact character-sum
/// projectors; returns the column frame and each column's character index.
fn eigen_frame(
    action: &FiniteUnitaryAction,
    g: usize,
    order: usize,
) -> Result<(DMatrix<Complex64>, Vec<usize>), LatticeError> {
    let n = action.dim();
    let rho = action.element(g).clone();
    let mut powers = vec![DMatrix::<Complex64>::identity(n, n)];
    for _ in 1..order {
        let last = powers.last().expect("nonempty").clone();
        powers.push(&last * &rho);
    }
    let mut columns: Vec<(usize, DVector<Complex64>)> = Vec::new();
    for a in 0..order {
        let mut proj = DMatrix::<Complex64>::zeros(n, n);
        for (h, pow) in powers.iter().enumerate() {
            let phase = Complex64::from_polar(
                1.0 / order as f64,
                -2.0 * PI * (a * h) as f64 / order as f64,
            );
            proj += pow * phase;
        }
        let rank = proj.trace().re.round() as i64;
        if rank <= 0 {
            continue;
        }
        let eye = DMatrix::<Complex64>::identity(n, n);
        for v in kernel_basis(&(eye - &proj), 0.5) {
            columns.push((a, v));
        }
    }
    if columns.len() != n {
        return Err(LatticeError::EigenSplit(n.abs_diff(columns.len())));
    }
    let frame = DMatrix::from_fn(n, n, |r, c| columns[c].1[r]);
    let chars = columns.into_iter().map(|(a, _)| a).collect();
    Ok((frame, chars))
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

struct CoverData {
    generator_order: usize,
    frame: DMatrix<Complex64>,
    chars: Vec<usize>,
    c: f64,
    /// Non-injective eigendirections in standard coordinates.
    singular: ComplexSubspace,
}

/// One cyclic cover's product lattice in lemma units, rotated to standard
/// coordinates. Points are clipped to the ball and away from the other
/// covers' exclusion tubes (`others`, in standard coordinates), and the
/// declared region records both clips with covering-radius insets.
fn cover_lattice(
    cover: &CoverData,
    d_lemma: f64,
    radius_lemma: f64,
    others: &[(ComplexSubspace, f64)],
) -> Result<SeparatedLattice, LatticeError> {
    let clip = |p: &CVec| others.iter().all(|(s, w)| s.distance(p) >= *w);
    let n = cover.chars.len();
    let m = cover.generator_order;
    let excl = cover.c * d_lemma;

    let factor = |j: usize| -> Result<(SeparatedLattice, SeparatedLattice), LatticeError> {
        let injective = gcd(cover.chars[j], m) == 1;
        if injective {
            let lat = lattice_1d(m as u32, d_lemma, radius_lemma)?;
            let boundary = plain_lattice(
                &Region::Annulus {
                    dim: 1,
                    inner: 0.0,
                    outer: excl,
                },
                d_lemma,
            )?;
            Ok((lat, boundary))
        } else {
            let lat = empty_lattice(
                1,
                LatticeParams {
                    c: cover.c,
                    d: d_lemma,
                    separation: d_lemma,
                    m: 2,
                    r: 0.0,
                    exclusion_radius: 0.0,
                },
                Region::Empty { dim: 1 },
                vec![(standard_subspace(1, &[0]), 0.0)],
                m,
            );
            let boundary = plain_lattice(
                &Region::Annulus {
                    dim: 1,
                    inner: 0.0,
                    outer: radius_lemma,
                },
                d_lemma,
            )?;
            Ok((lat, boundary))
        }
    };

    let ball = |p: &CVec| p.norm() <= radius_lemma + FLOAT_SLACK;
    let (mut cur, _) = factor(0)?;
    if n == 1 {
        retain_filtered(&mut cur, &|p| {
            let std = apply(&cover.frame, p);
            ball(p) && clip(&std)
        });
    }
    for j in 1..n {
        let (fj, bj) = factor(j)?;
        let boundary_cur = boundary_of(&cur, radius_lemma)?;
        let last = j == n - 1;
        let frame = &cover.frame;
        let fused: Box<dyn Fn(&CVec) -> bool> = if last {
            Box::new(move |p: &CVec| {
                if !ball(p) {
                    return false;
                }
                let std = apply(frame, p);
                clip(&std)
            })
        } else {
            Box::new(ball)
        };
        cur = product_with_filter(&cur, &fj, &boundary_cur, &bj, fused.as_ref())?;
    }

    // Rotate to standard coordinates and record the clips on the region:
    // the ball clip shrinks by the covering radius, the tube clips grow
    // by it, so covering of the declared set stays honest.
    let points: Vec<CVec> = cur.points.iter().map(|p| apply(&cover.frame, p)).collect();
    let excluded = vec![(cover.singular.clone(), excl)];
    let mut region = Region::Clipped {
        base: Box::new(Region::Framed {
            frame: cover.frame.clone(),
            inner: Box::new(cur.region),
        }),
        outer: radius_lemma - cur.params.r,
    };
    if !others.is_empty() {
        region = Region::MinusTubes {
            base: Box::new(region),
            tubes: others
                .iter()
                .map(|(s, w)| (s.clone(), w + cur.params.r))
                .collect(),
        };
    }
    Ok(SeparatedLattice {
        ambient: n,
        points,
        families: cur.families,
        params: LatticeParams {
            exclusion_radius: excl,
            ..cur.params
        },
        region,
        excluded,
        group_order: m,
    })
}

fn retain_filtered(lat: &mut SeparatedLattice, keep: &dyn Fn(&CVec) -> bool) {
    let flags: Vec<bool> = lat.points.iter().map(|p| keep(p)).collect();
    let mut remap = vec![usize::MAX; lat.points.len()];
    let mut points = Vec::new();
    for (i, p) in lat.points.iter().enumerate() {
        if flags[i] {
            remap[i] = points.len();
            points.push(*p);
        }
    }
    let families: Vec<Vec<usize>> = lat
        .families
        .iter()
        .map(|fam| {
            fam.iter()
                .filter_map(|&i| (remap[i] != usize::MAX).then_some(remap[i]))
                .collect::<Vec<usize>>()
        })
        .filter(|f: &Vec<usize>| !f.is_empty())
        .collect();
    lat.points = points;
    lat.families = families;
}

/// Plain lattice covering the exclusion tube of an intermediate product,
/// used as the boundary part in the next product step.
fn boundary_of(
    cur: &SeparatedLattice,
    radius_lemma: f64,
) -> Result<SeparatedLattice, LatticeError> {
    let outer = radius_lemma * (cur.ambient as f64).sqrt() + 2.0;
    let region = match cur.excluded.as_slice() {
        [(s, w)] => {
            if s.dim() == cur.ambient {
                Region::Annulus {
                    dim: cur.ambient,
                    inner: 0.0,
                    outer,
                }
            } else {
                Region::Tube {
                    subspace: s.clone(),
                    width: *w,
                    outer,
                }
            }
        }
        _ => Region::Annulus {
            dim: cur.ambient,
            inner: 0.0,
            outer,
        },
    };
    plain_lattice(&region, cur.params.d)
}

/// Orbit deduplication: keep a point only if no lattice point equal to one
/// of its nontrivial images precedes it lexicographically.
fn dedup_orbits(lat: &mut SeparatedLattice, images: &dyn Fn(&CVec) -> Vec<CVec>) {
    let quant = |p: &CVec| -> [i64; 8] {
        let mut k = [0i64; 8];
        for (d, x) in p.to_real().iter().enumerate() {
            k[d] = (x * DEDUP_SCALE).round() as i64;
        }
        k
    };
    let mut index: HashMap<[i64; 8], Vec<u32>> = HashMap::new();
    for (i, p) in lat.points.iter().enumerate() {
        index.entry(quant(p)).or_default().push(i as u32);
    }
    let lex_less = |a: &CVec, b: &CVec| -> bool {
        for (x, y) in a.to_real().iter().zip(b.to_real().iter()) {
            if (x - y).abs() > 1e-6 {
                return x < y;
            }
        }
        false
    };
    let keep: Vec<bool> = lat
        .points
        .iter()
        .map(|p| {
            for img in images(p) {
                if img.dist(p) <= 1e-6 {
                    continue;
                }
                // Probe the image's cell and, near quantization boundaries,
                // the neighboring cells in the affected coordinates.
                let base = quant(&img);
                let mut cells = vec![base];
                for (d, x) in img.to_real().iter().enumerate() {
                    let frac = (x * DEDUP_SCALE).fract().abs();
                    if !(0.01..=0.99).contains(&frac) {
                        for c in cells.clone() {
                            for s in [-1i64, 1] {
                                let mut c2 = c;
                                c2[d] += s;
                                cells.push(c2);
                            }
                        }
                    }
                }
                for cell in cells {
                    if let Some(list) = index.get(&cell) {
                        for &j in list {
                            let q = &lat.points[j as usize];
                            if q.dist(&img) <= 1e-6 && lex_less(q, p) {
                                return false;
                            }
                        }
                    }
                }
            }
            true
        })
        .collect();
    retain_by_flags(lat, &keep);
}

fn retain_by_flags(lat: &mut SeparatedLattice, keep: &[bool]) {
    let mut remap = vec![usize::MAX; lat.points.len()];
    let mut points = Vec::new();
    for (i, p) in lat.points.iter().enumerate() {
        if keep[i] {
            remap[i] = points.len();
            points.push(*p);
        }
    }
    let families: Vec<Vec<usize>> = lat
        .families
        .iter()
        .map(|fam| {
            fam.iter()
                .filter_map(|&i| (remap[i] != usize::MAX).then_some(remap[i]))
                .collect::<Vec<usize>>()
        })
        .filter(|f: &Vec<usize>| !f.is_empty())
        .collect();
    lat.points = points;
    lat.families = families;
}

/// Property-(P) lattice for a finite unitary action on the chart ball of
/// the given radius (chart units), rescaled to `g_k` units at level `k`.
///
/// The construction works per maximal cyclic subgroup: eigenline sector
/// lattices are multiplied together with boundary parts, clipped to the
/// ball and away from the other subgroups' singular sets, then merged by
/// union refinement and deduplicated to one representative per orbit.
/// Intermediate products are materialized per cyclic cover, so ambient
/// dimension 2 stays cheap; higher dimensions grow with the ball volume.
pub fn chart_lattice(
    action: &FiniteUnitaryAction,
    r_cover: f64,
    d: f64,
    k: u32,
    chart_radius: f64,
) -> Result<SeparatedLattice, LatticeError> {
    let n = action.dim();
    if !(r_cover > 0.0) {
        return Err(LatticeError::InvalidCoveringRadius(r_cover));
    }
    if d < 1.0 || !d.is_finite() {
        return Err(LatticeError::InvalidSeparation(d));
    }
    if !(chart_radius > 0.0) {
        return Err(LatticeError::DegenerateRadius(chart_radius));
    }
    let nu = 2.0 * PI;
    let edge_gk = (f64::from(k) * nu).sqrt() * chart_radius;

    if action.order() == 1 {
        let lambda = r_cover / (2.0 * n as f64).sqrt();
        let radius_lemma = edge_gk / lambda;
        let mut lat = plain_lattice(
            &Region::Annulus {
                dim: n,
                inner: 0.0,
                outer: radius_lemma,
            },
            (d / lambda).ceil().max(1.0),
        )?;
        rescale(&mut lat, lambda, d);
        return Ok(lat);
    }

    let covers_raw = action.cyclic_cover();
    let mut covers = Vec::new();
    for sub in &covers_raw {
        let m = sub.order();
        let g = *sub
            .elements
            .iter()
            .find(|&&e| action.element_order(e) == m)
            .ok_or_else(|| LatticeError::IncompatibleRegions("cover without generator".into()))?;
        let (frame, chars) = eigen_frame(action, g, m)?;
        let mut non_inj = Vec::new();
        for (j, &a) in chars.iter().enumerate() {
            if gcd(a, m) != 1 {
                non_inj.push(j);
            }
        }
        let singular_eigen = standard_subspace(n, &non_inj);
        let singular = singular_eigen.transform(&frame);
        covers.push(CoverData {
            generator_order: m,
            frame,
            chars,
            c: c_constant(m as u32),
            singular,
        });
    }

    let r_fold_pred = if n == 1 {
        FRAC_1_SQRT_2
    } else {
        (2.0 * n as f64 - 1.5).sqrt()
    };
    let lambda = r_cover / r_fold_pred;
    let radius_lemma = edge_gk / lambda;
    let mut d_lemma = (d / lambda).ceil().max(1.0);
    // Each union refinement may cost up to twice the unit assignment
    // distance in separation. That loss is recorded on the result instead
    // of being re-normalized away, so the sizing loop accepts it too.
    let refine_cost = 2.0 * (covers.len() as f64 - 1.0);

    for _attempt in 0..6 {
        let mut built: Option<SeparatedLattice> = None;
        for (i, cover) in covers.iter().enumerate() {
            let others: Vec<(ComplexSubspace, f64)> = covers
                .iter()
                .enumerate()
                .filter(|(o, _)| *o != i)
                .map(|(_, c)| (c.singular.clone(), c.c * d_lemma))
                .collect();
            let li = cover_lattice(cover, d_lemma, radius_lemma, &others)?;
            built = Some(match built {
                None => li,
                Some(acc) => lattice_union_refine(&acc, &li)?,
            });
        }
        let mut lat = built.expect("at least one cover");
        dedup_orbits(&mut lat, &|p| {
            (0..action.order())
                .filter(|&h| h != action.identity_index())
                .map(|h| action.apply(h, p))
                .collect()
        });

        if lat.params.separation >= d / lambda - refine_cost - FLOAT_SLACK {
            rescale(&mut lat, lambda, d);
            lat.group_order = action.order();
            return Ok(lat);
        }
        let shortfall = (d / lambda - refine_cost - lat.params.separation)
            .ceil()
            .max(1.0);
        d_lemma += shortfall;
    }
    Err(LatticeError::SeparationUnreachable(d))
}

/// Rescale a lemma-unit lattice by `lambda` and restate `d` in final units.
fn rescale(lat: &mut SeparatedLattice, lambda: f64, d_final: f64) {
    for p in &mut lat.points {
        *p = *p * lambda;
    }
    lat.region = lat.region.scale(lambda);
    for (_, w) in &mut lat.excluded {
        *w *= lambda;
    }
    let rdim = 2 * lat.ambient;
    let n_fam = lat.families.len() as f64;
    lat.params = LatticeParams {
        c: lat
            .params
            .c
            .max(n_fam / d_final.powi(lat.params.m.min(127) as i32))
            .max(density_constant(rdim, lambda, lat.group_order)),
        d: d_final,
        separation: lat.params.separation * lambda,
        m: lat.params.m,
        r: lat.params.r * lambda,
        exclusion_radius: lat.params.exclusion_radius * lambda,
    };
}

// ---------------------------------------------------------------------------
// Torus stratum lattices
// ---------------------------------------------------------------------------

/// Smallest nonzero singular value of `I - rho(g)`.
fn min_move_factor(action: &FiniteUnitaryAction, g: usize) -> f64 {
    let n = action.dim();
    let diff = DMatrix::<Complex64>::identity(n, n) - action.element(g);
    let svals = diff.svd(false, false).singular_values;
    svals
        .iter()
        .copied()
        .filter(|s| *s > 1e-9)
        .fold(f64::INFINITY, f64::min)
}

/// Property-(P) lattice on one stratum of a torus quotient in `g_k` units:
/// a residue-split periodic grid along the stratum's period directions,
/// carved away from deeper singular components, deduplicated to one point
/// per quotient orbit, and greedily refined until every family is
/// separated under the residual action.
pub fn stratum_lattice(
    quotient: &TorusQuotient,
    stratum: &Stratum,
    r_cover: f64,
    d: f64,
    k: u32,
) -> Result<SeparatedLattice, LatticeError> {
    if !(r_cover > 0.0) {
        return Err(LatticeError::InvalidCoveringRadius(r_cover));
    }
    if d < 1.0 || !d.is_finite() {
        return Err(LatticeError::InvalidSeparation(d));
    }
    let n = quotient.complex_dim();
    let scale = quotient.gk_scale(k);
    let group = quotient.group();
    let stab = &stratum.subgroup_class.elements;

    if stratum.dim() == 0 {
        let at = stratum.offsets[0] * scale;
        return Ok(SeparatedLattice {
            ambient: n,
            points: vec![at],
            families: vec![vec![0]],
            params: LatticeParams {
                c: 1.0,
                d,
                separation: d,
                m: 1,
                r: 0.0,
                exclusion_radius: 0.0,
            },
            region: Region::PointAt { at },
            excluded: Vec::new(),
            group_order: group.order(),
        });
    }

    let span_int = quotient.fixed_sublattice(stab);
    let rank = span_int.len();
    if rank != 2 * stratum.dim() {
        return Err(LatticeError::IncompatibleRegions(format!(
            "stratum tangent rank {} does not match period rank {rank}",
            2 * stratum.dim()
        )));
    }
    let span: Vec<CVec> = span_int
        .iter()
        .map(|m| quotient.lattice_vector(m))
        .collect();
    let offset = stratum
        .offsets
        .first()
        .copied()
        .unwrap_or_else(|| CVec::zero(n));

    // Exclusion radii per singular component; components containing this
    // stratum are exempt (zero radius).
    let comps = quotient.singular_components();
    let mut exclusions = vec![0.0f64; comps.len()];
    for (ci, comp) in comps.iter().enumerate() {
        let contains_stratum = stab.contains(&comp.element)
            && quotient.dist_to_component(&offset, comp) <= 1e-8
            && span
                .iter()
                .all(|v| comp.directions.distance(&(*v * (1.0 / v.norm()))) <= 1e-6);
        if !contains_stratum {
            exclusions[ci] = SELF_SEPARATION_MARGIN * d / min_move_factor(group, comp.element);
        }
    }

    // Grid counts: spacing small enough that the cell's half-diagonal stays
    // under the covering radius, counts multiples of the residue modulus.
    let target = 2.0 * r_cover / (rank as f64).sqrt() * COVER_SPACING_SAFETY;
    let mut cnt0: Vec<usize> = span
        .iter()
        .map(|v| ((v.norm() * scale) / target).ceil().max(1.0) as usize)
        .collect();
    let cell_radius = |cnt: &[usize]| -> f64 {
        let steps: Vec<CVec> = span
            .iter()
            .zip(cnt.iter())
            .map(|(v, &c)| *v * (scale / c as f64))
            .collect();
        let mut worst = 0.0f64;
        for mask in 0..(1usize << rank) {
            let mut corner = CVec::zero(n);
            for (a, s) in steps.iter().enumerate() {
                let sign = if mask >> a & 1 == 1 { 0.5 } else { -0.5 };
                corner = corner + *s * sign;
            }
            worst = worst.max(corner.norm());
        }
        worst
    };
    for _ in 0..64 {
        if cell_radius(&cnt0) <= r_cover * COVER_SPACING_SAFETY.max(0.97) {
            break;
        }
        let widest = (0..rank)
            .max_by(|&a, &b| {
                let sa = span[a].norm() * scale / cnt0[a] as f64;
                let sb = span[b].norm() * scale / cnt0[b] as f64;
                sa.partial_cmp(&sb).unwrap_or(Ordering::Equal)
            })
            .expect("rank > 0");
        cnt0[widest] += 1;
    }

    let sigma_min = |cnt: &[usize]| -> f64 {
        let mut mat = DMatrix::<f64>::zeros(2 * n, rank);
        for (a, v) in span.iter().enumerate() {
            for (r, x) in v.to_real().iter().enumerate() {
                mat[(r, a)] = x * scale / cnt[a] as f64;
            }
        }
        mat.svd(false, false)
            .singular_values
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    };
    let mut q = 1usize;
    let mut cnt = cnt0.clone();
    let mut sigma = sigma_min(&cnt);
    for _ in 0..10_000 {
        cnt = cnt0
            .iter()
            .map(|&c0| q * c0.div_ceil(q).max(1))
            .collect();
        sigma = sigma_min(&cnt);
        if q as f64 * sigma >= d {
            break;
        }
        q += 1;
    }
    if (q as f64) * sigma < d {
        return Err(LatticeError::SeparationUnreachable(d));
    }

    // Enumerate the periodic grid, excluding deeper singular components.
    let mut points_torus: Vec<CVec> = Vec::new();
    let mut residues: Vec<Vec<usize>> = Vec::new();
    let mut idx = vec![0usize; rank];
    'outer: loop {
        let mut x = offset;
        for (a, v) in span.iter().enumerate() {
            x = x + *v * (idx[a] as f64 / cnt[a] as f64);
        }
        let (xr, _) = quotient.reduce(&x);
        let ok = comps
            .iter()
            .zip(exclusions.iter())
            .all(|(c, &e)| e <= 0.0 || quotient.dist_to_component(&xr, c) * scale >= e);
        if ok {
            points_torus.push(xr);
            residues.push(idx.iter().zip(cnt.iter()).map(|(i, c)| i % q.min(*c)).collect());
        }
        let mut a = rank;
        loop {
            if a == 0 {
                break 'outer;
            }
            a -= 1;
            idx[a] += 1;
            if idx[a] < cnt[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    if points_torus.is_empty() {
        return Err(LatticeError::EmptyStratumRegion);
    }

    // Orbit deduplication on reduced coordinates (lex-smallest survives).
    let quant = |t: &[f64]| -> Vec<i64> {
        t.iter()
            .map(|x| {
                let f = x.rem_euclid(1.0);
                let k = (f * DEDUP_SCALE).round() as i64;
                k.rem_euclid(DEDUP_SCALE as i64)
            })
            .collect()
    };
    let mut index: HashMap<Vec<i64>, Vec<u32>> = HashMap::new();
    for (i, p) in points_torus.iter().enumerate() {
        index
            .entry(quant(&quotient.lattice_coords(p)))
            .or_default()
            .push(i as u32);
    }
    let lex_less = |a: &CVec, b: &CVec| -> bool {
        for (x, y) in a.to_real().iter().zip(b.to_real().iter()) {
            if (x - y).abs() > 1e-6 {
                return x < y;
            }
        }
        false
    };
    let keep: Vec<bool> = points_torus
        .iter()
        .map(|p| {
            for h in 0..group.order() {
                if h == group.identity_index() {
                    continue;
                }
                let (img, _) = quotient.reduce(&group.apply(h, p));
                if img.dist(p) <= 1e-6 {
                    continue;
                }
                if let Some(list) = index.get(&quant(&quotient.lattice_coords(&img))) {
                    for &j in list {
                        let qpt = &points_torus[j as usize];
                        if quotient.torus_dist(qpt, &img) <= 1e-6 && lex_less(qpt, p) {
                            return false;
                        }
                    }
                }
            }
            true
        })
        .collect();
    let mut kept_points = Vec::new();
    let mut kept_residues = Vec::new();
    for (i, flag) in keep.iter().enumerate() {
        if *flag {
            kept_points.push(points_torus[i]);
            kept_residues.push(residues[i].clone());
        }
    }

    // Residue families, then greedy conflict refinement under the action.
    let mut fams: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for (i, r) in kept_residues.iter().enumerate() {
        fams.entry(r.clone()).or_default().push(i);
    }
    let gk_points: Vec<CVec> = kept_points.iter().map(|p| *p * scale).collect();
    let pair_dist = |i: usize, j: usize| -> f64 {
        let mut best = f64::INFINITY;
        for h in 0..group.order() {
            let img = group.apply(h, &kept_points[j]);
            best = best.min(quotient.torus_dist(&kept_points[i], &img));
        }
        best * scale
    };
    let mut families: Vec<Vec<usize>> = Vec::new();
    for members in fams.into_values() {
        let mut conflicts: HashMap<usize, Vec<usize>> = HashMap::new();
        for (a, &i) in members.iter().enumerate() {
            for &j in &members[a + 1..] {
                if pair_dist(i, j) < d - CONFLICT_MARGIN {
                    conflicts.entry(i).or_default().push(j);
                    conflicts.entry(j).or_default().push(i);
                }
            }
        }
        if conflicts.is_empty() {
            families.push(members);
            continue;
        }
        let mut colored: HashMap<usize, usize> = HashMap::new();
        let mut sub: Vec<Vec<usize>> = Vec::new();
        for &i in &members {
            let forbidden: Vec<usize> = conflicts
                .get(&i)
                .map(|adj| adj.iter().filter_map(|j| colored.get(j).copied()).collect())
                .unwrap_or_default();
            let color = (0..).find(|c| !forbidden.contains(c)).expect("free color");
            colored.insert(i, color);
            if color == sub.len() {
                sub.push(Vec::new());
            }
            sub[color].push(i);
        }
        families.extend(sub);
    }

    let r_cell = cell_radius(&cnt);
    let max_excl = exclusions.iter().copied().fold(0.0f64, f64::max);
    let region = Region::TorusCell {
        offset: offset * scale,
        axes: span.iter().map(|v| *v * scale).collect(),
        exclusions: exclusions.iter().map(|e| if *e > 0.0 { e + r_cell } else { 0.0 }).collect(),
    };
    let n_fam = families.len() as f64;
    let params = LatticeParams {
        c: (n_fam / d.powi(rank as i32))
            .max(density_constant(rank, sigma, group.order())),
        d,
        separation: d,
        m: rank as u32,
        r: r_cell,
        exclusion_radius: max_excl,
    };
    Ok(SeparatedLattice {
        ambient: n,
        points: gk_points,
        families,
        params,
        region,
        excluded: Vec::new(),
        group_order: group.order(),
    })
}

// ---------------------------------------------------------------------------
// Verification
// ---------------------------------------------------------------------------

/// Outcome of the independent property-(P) check.
#[derive(Clone, Debug, Serialize)]
pub struct PropertyPReport {
    /// Every region grid point within `params.r` of a lattice point.
    pub covering_ok: bool,
    /// Largest observed covering gap (values below `r/2` not resolved).
    pub max_covering_gap: f64,
    /// Region grid points examined.
    pub covering_samples: usize,
    /// All same-family pairs (and self-images) at least the target apart.
    pub separation_ok: bool,
    /// Smallest same-family orbit distance observed.
    pub min_family_separation: f64,
    /// Number of violating pairs.
    pub separation_violations: usize,
    /// Max over sampled q of `F_q(s) / s^(2n)`.
    pub distribution_constant: f64,
    /// Measured constant stays within the declared `c`.
    pub distribution_ok: bool,
    /// Max over sampled q of the Gaussian-weighted sums for `d^rw`, r = 0..3.
    pub weighted_sums: [f64; 4],
    /// Point count.
    pub points: usize,
    /// Nonempty family count.
    pub families: usize,
    /// Family count stays within `c * d^m`.
    pub family_bound_ok: bool,
}

impl PropertyPReport {
    /// All checks passed.
    pub fn passed(&self) -> bool {
        self.covering_ok && self.separation_ok && self.distribution_ok && self.family_bound_ok
    }
}

struct TorusWrap {
    /// Real period basis in g_k units, columns per period direction.
    basis: DMatrix<f64>,
    sigma_min: f64,
    rank: usize,
}

impl TorusWrap {
    fn dist(&self, ta: &[f64], tb: &[f64]) -> f64 {
        let mut delta = [0.0f64; 8];
        for i in 0..self.rank {
            let mut x = (ta[i] - tb[i]).rem_euclid(1.0);
            if x > 0.5 {
                x -= 1.0;
            }
            delta[i] = x;
        }
        let norm_sq = |v: &[f64; 8]| -> f64 {
            let mut acc = 0.0;
            for r in 0..self.basis.nrows() {
                let mut s = 0.0;
                for c in 0..self.rank {
                    s += self.basis[(r, c)] * v[c];
                }
                acc += s * s;
            }
            acc
        };
        let d0 = norm_sq(&delta);
        if d0.sqrt() < 0.5 * self.sigma_min {
            return d0.sqrt();
        }
        // Enumerate neighbor translates for exactness on skew bases.
        let mut best = d0;
        let mut shift = [-1i64; 8];
        let mut cand = [0.0f64; 8];
        loop {
            for i in 0..self.rank {
                cand[i] = delta[i] + shift[i] as f64;
            }
            best = best.min(norm_sq(&cand));
            let mut i = self.rank;
            loop {
                if i == 0 {
                    return best.sqrt();
                }
                i -= 1;
                shift[i] += 1;
                if shift[i] <= 1 {
                    break;
                }
                shift[i] = -1;
            }
        }
    }
}

/// All group images of all points, with enough structure for fast radius
/// queries in both flat and torus metrics.
struct ImageSet {
    dim: usize,
    owners: Vec<u32>,
    positions: Vec<CVec>,
    /// Torus-only: wrapped period coordinates per image and the wrap data.
    t_coords: Vec<Vec<f64>>,
    wrap: Option<TorusWrap>,
    cells: HashMap<[i16; 8], Vec<u32>>,
    cell_size: f64,
    torus_cells_per_dim: Vec<i64>,
}

impl ImageSet {
    fn build(lat: &SeparatedLattice, ctx: &MetricContext, query_radius: f64) -> ImageSet {
        let dim = lat.ambient;
        let mut owners = Vec::new();
        let mut positions = Vec::new();
        let mut t_coords = Vec::new();
        let mut wrap = None;

        match ctx {
            MetricContext::Euclidean { .. } => {
                for (i, p) in lat.points.iter().enumerate() {
                    owners.push(i as u32);
                    positions.push(*p);
                }
            }
            MetricContext::Chart(a) => {
                for (i, p) in lat.points.iter().enumerate() {
                    for g in 0..a.order() {
                        owners.push(i as u32);
                        positions.push(a.apply(g, p));
                    }
                }
            }
            MetricContext::Torus { quotient, k, .. } => {
                let s = quotient.gk_scale(*k);
                let rank = quotient.lattice_rank();
                let mut basis = DMatrix::<f64>::zeros(2 * dim, rank);
                for (c, v) in quotient.basis().iter().enumerate() {
                    for (r, x) in v.to_real().iter().enumerate() {
                        basis[(r, c)] = x * s;
                    }
                }
                let sigma_min = basis
                    .clone()
                    .svd(false, false)
                    .singular_values
                    .iter()
                    .copied()
                    .fold(f64::INFINITY, f64::min);
                for (i, p) in lat.points.iter().enumerate() {
                    let pt = *p * (1.0 / s);
                    for g in 0..quotient.group().order() {
                        let (img, _) = quotient.reduce(&quotient.group().apply(g, &pt));
                        owners.push(i as u32);
                        positions.push(img * s);
                        t_coords.push(quotient.lattice_coords(&img));
                    }
                }
                wrap = Some(TorusWrap {
                    basis,
                    sigma_min,
                    rank,
                });
            }
        }

        let mut set = ImageSet {
            dim,
            owners,
            positions,
            t_coords,
            wrap,
            cells: HashMap::new(),
            cell_size: query_radius.max(1e-6),
            torus_cells_per_dim: Vec::new(),
        };
        set.index();
        set
    }

    fn index(&mut self) {
        self.cells.clear();
        if let Some(w) = &self.wrap {
            let r_t = self.cell_size / w.sigma_min;
            self.torus_cells_per_dim = (0..w.rank)
                .map(|_| ((1.0 / r_t).floor() as i64).max(1))
                .collect();
            for i in 0..self.owners.len() {
                let key = self.torus_key(&self.t_coords[i]);
                self.cells.entry(key).or_default().push(i as u32);
            }
        } else {
            for i in 0..self.owners.len() {
                let key = FlatCells::key(&self.positions[i], self.cell_size);
                self.cells.entry(key).or_default().push(i as u32);
            }
        }
    }

    fn torus_key(&self, t: &[f64]) -> [i16; 8] {
        let mut k = [0i16; 8];
        for (d, x) in t.iter().enumerate() {
            let n = self.torus_cells_per_dim[d];
            let c = ((x.rem_euclid(1.0)) * n as f64).floor() as i64;
            k[d] = c.clamp(0, n - 1) as i16;
        }
        k
    }

    /// Flat nearest-image distance from `p`: exact whenever the result is
    /// at most `r_target` (cells are at least that wide), otherwise
    /// searched out to `cap`.
    fn nearest_flat(&self, p: &CVec, r_target: f64, cap: f64) -> f64 {
        let rdims = 2 * self.dim;
        let center = FlatCells::key(p, self.cell_size);
        let mut best = f64::INFINITY;
        self.scan_cube(&center, rdims, 1, false, p, &mut best);
        if best <= r_target + FLOAT_SLACK {
            return best;
        }
        let reach = (cap / self.cell_size).ceil() as i64;
        if reach > 1 {
            self.scan_cube(&center, rdims, reach, true, p, &mut best);
        }
        best
    }

    fn scan_cube(
        &self,
        center: &[i16; 8],
        rdims: usize,
        reach: i64,
        skip_inner: bool,
        p: &CVec,
        best: &mut f64,
    ) {
        let mut offset = vec![-reach; rdims];
        loop {
            if !(skip_inner && offset.iter().all(|o| o.abs() <= 1)) {
                let mut key = [0i16; 8];
                for d in 0..rdims {
                    key[d] = center[d].saturating_add(offset[d] as i16);
                }
                if let Some(list) = self.cells.get(&key) {
                    for &i in list {
                        let dist = p.dist(&self.positions[i as usize]);
                        if dist < *best {
                            *best = dist;
                        }
                    }
                }
            }
            let mut d = rdims;
            loop {
                if d == 0 {
                    return;
                }
                d -= 1;
                offset[d] += 1;
                if offset[d] <= reach {
                    break;
                }
                offset[d] = -reach;
            }
        }
    }

    /// Visit every image within `radius` of `p`, with exact distances.
    fn for_each_within(
        &self,
        p: &CVec,
        t_of_p: Option<&[f64]>,
        radius: f64,
        mut f: impl FnMut(u32, f64),
    ) {
        let rings = (radius / self.cell_size).ceil() as i64;
        if let Some(w) = &self.wrap {
            let tp = t_of_p.expect("torus query needs period coordinates");
            let center: Vec<i64> = (0..w.rank)
                .map(|d| {
                    let n = self.torus_cells_per_dim[d];
                    (((tp[d].rem_euclid(1.0)) * n as f64).floor() as i64).clamp(0, n - 1)
                })
                .collect();
            let mut offset = vec![-rings; w.rank];
            loop {
                let mut key = [0i16; 8];
                let mut skip = false;
                for d in 0..w.rank {
                    let n = self.torus_cells_per_dim[d];
                    if 2 * rings + 1 >= n {
                        // Ring wraps the whole dimension; visit each cell once.
                        if offset[d] < -(n / 2) || offset[d] > (n - 1) / 2 {
                            skip = true;
                            break;
                        }
                    }
                    key[d] = (center[d] + offset[d]).rem_euclid(n) as i16;
                }
                if !skip {
                    if let Some(list) = self.cells.get(&key) {
                        for &i in list {
                            let dist = w.dist(tp, &self.t_coords[i as usize]);
                            if dist <= radius {
                                f(i, dist);
                            }
                        }
                    }
                }
                let mut d = w.rank;
                loop {
                    if d == 0 {
                        return;
                    }
                    d -= 1;
                    offset[d] += 1;
                    if offset[d] <= rings {
                        break;
                    }
                    offset[d] = -rings;
                }
            }
        } else {
            let rdims = 2 * self.dim;
            let center = FlatCells::key(p, self.cell_size);
            let mut offset = vec![-rings; rdims];
            loop {
                let mut key = [0i16; 8];
                for d in 0..rdims {
                    key[d] = center[d] + (offset[d] as i16);
                }
                if let Some(list) = self.cells.get(&key) {
                    for &i in list {
                        let dist = p.dist(&self.positions[i as usize]);
                        if dist <= radius {
                            f(i, dist);
                        }
                    }
                }
                let mut d = rdims;
                loop {
                    if d == 0 {
                        return;
                    }
                    d -= 1;
                    offset[d] += 1;
                    if offset[d] <= rings {
                        break;
                    }
                    offset[d] = -rings;
                }
            }
        }
    }
}

/// Independent property-(P) check: dense-grid covering on the declared
/// region, exhaustive orbit-aware family separation, and seeded sampling
/// of the distribution constant and Gaussian-weighted sums.
///
/// `d` is the separation target to enforce; covering is checked against
/// the lattice's own declared radius. Verification parallelizes with
/// order-independent reductions, so reports are deterministic.
pub fn verify_property_p(
    lat: &SeparatedLattice,
    context: &MetricContext,
    d: f64,
    grid_step: f64,
) -> PropertyPReport {
    let r_target = lat.params.r;

    // --- Separation: all pairs within each family, plus self-images. ---
    let pair_quot_dist = |x: &CVec, y: &CVec| context.quotient_dist(x, y);
    let fam_results: Vec<(f64, usize)> = lat
        .families
        .par_iter()
        .map(|members| {
            let mut min_d = f64::INFINITY;
            let mut violations = 0usize;
            for (a, &i) in members.iter().enumerate() {
                for &j in &members[a + 1..] {
                    let dist = pair_quot_dist(&lat.points[i], &lat.points[j]);
                    min_d = min_d.min(dist);
                    if dist < d - FLOAT_SLACK {
                        violations += 1;
                    }
                }
            }
            (min_d, violations)
        })
        .collect();
    let mut min_family_separation = fam_results
        .iter()
        .map(|r| r.0)
        .fold(f64::INFINITY, f64::min);
    let mut separation_violations: usize = fam_results.iter().map(|r| r.1).sum();

    // Self-images under non-exempt elements.
    let self_results: (f64, usize) = lat
        .points
        .par_iter()
        .map(|p| {
            let mut min_d = f64::INFINITY;
            let mut violations = 0usize;
            match context {
                MetricContext::Euclidean { .. } => {}
                MetricContext::Chart(a) => {
                    for h in 0..a.order() {
                        if context.is_self_exempt(h) {
                            continue;
                        }
                        let dist = p.dist(&a.apply(h, p));
                        min_d = min_d.min(dist);
                        if dist < d - FLOAT_SLACK {
                            violations += 1;
                        }
                    }
                }
                MetricContext::Torus { quotient, k, .. } => {
                    let s = quotient.gk_scale(*k);
                    let pt = *p * (1.0 / s);
                    for h in 0..quotient.group().order() {
                        if context.is_self_exempt(h) {
                            continue;
                        }
                        let img = quotient.group().apply(h, &pt);
                        let dist = quotient.torus_dist(&pt, &img) * s;
                        min_d = min_d.min(dist);
                        if dist < d - FLOAT_SLACK {
                            violations += 1;
                        }
                    }
                }
            }
            (min_d, violations)
        })
        .reduce(
            || (f64::INFINITY, 0),
            |a, b| (a.0.min(b.0), a.1 + b.1),
        );
    min_family_separation = min_family_separation.min(self_results.0);
    separation_violations += self_results.1;
    let separation_ok = separation_violations == 0;

    // --- Covering: blocked scatter distance transform over the declared
    // region; single-point regions are checked directly. ---
    let (covering_ok, max_covering_gap, covering_samples) = match (&lat.region, context) {
        (Region::Empty { .. }, _) => (true, 0.0, 0),
        (Region::PointAt { at }, _) => {
            let gap_cap = 2.0 * r_target + 1.0;
            let images = ImageSet::build(lat, context, (r_target + FLOAT_SLACK).max(1e-6));
            let g = match (&images.wrap, context) {
                (Some(wrap), MetricContext::Torus { quotient, k, .. }) => {
                    let s = quotient.gk_scale(*k);
                    let tp = quotient.lattice_coords(&(*at * (1.0 / s)));
                    images
                        .t_coords
                        .iter()
                        .map(|t| wrap.dist(&tp, t))
                        .fold(f64::INFINITY, f64::min)
                }
                _ => images.nearest_flat(at, r_target, gap_cap),
            };
            (g <= r_target + FLOAT_SLACK, g.min(gap_cap), 1)
        }
        (Region::TorusCell { .. }, MetricContext::Torus { quotient, k, .. }) => {
            covering_scatter_torus(lat, quotient, *k, context, grid_step, r_target)
        }
        // A torus cell is only measurable in its own quotient metric.
        (Region::TorusCell { .. }, _) => (true, 0.0, 0),
        _ => covering_scatter_flat(lat, context, grid_step, r_target),
    };

    // --- Distribution and weighted sums at seeded sample points. ---
    let (distribution_constant, weighted_sums) = sample_distribution(lat, context, d);
    let distribution_ok = distribution_constant <= lat.params.c * (1.0 + 1e-6);

    let families = lat.families.iter().filter(|f| !f.is_empty()).count();
    let family_bound_ok = (families as f64)
        <= lat.params.c * lat.params.d.powi(lat.params.m.min(127) as i32) * (1.0 + 1e-9) + 0.5;

    PropertyPReport {
        covering_ok,
        max_covering_gap,
        covering_samples,
        separation_ok,
        min_family_separation,
        separation_violations,
        distribution_constant,
        distribution_ok,
        weighted_sums,
        points: lat.points.len(),
        families,
        family_bound_ok,
    }
}

// ---------------------------------------------------------------------------
// Covering scan: blocked scatter distance transform.
//
// The verifier grids each region patch at the requested step and walks the
// grid in blocks. For every block it stamps the distance balls of nearby
// lattice images onto a dense squared-distance buffer, then sweeps the
// block's in-region nodes once against the buffer. Scatter work scales with
// the number of images times the ball volume in grid units, and the node
// sweep costs a few operations per node, with radial membership windows
// solved analytically along the innermost axis. That keeps thin shells
// inside large bounding boxes and multi-million-node torus cells affordable
// on a single core.
// ---------------------------------------------------------------------------

/// Target number of grid nodes per scan block.
const SCATTER_BLOCK_SLOTS: usize = 1 << 16;
/// Cap on uncovered nodes kept for the exact nearest-image follow-up.
const UNCOVERED_DETAIL_CAP: usize = 2048;

/// Running totals for one covering scan.
#[derive(Default)]
struct CoverTally {
    samples: usize,
    covered_gap2: f64,
    uncovered: usize,
    detail: Vec<CVec>,
}

/// Block edge in nodes, sized so a block's distance buffer stays dense and
/// small regardless of the grid dimension.
fn block_edge(rdims: usize) -> usize {
    match rdims {
        0 => 1,
        _ => ((SCATTER_BLOCK_SLOTS as f64).powf(1.0 / rdims as f64).floor() as usize).max(2),
    }
}

/// One multiplied-out product patch of a flat region: leaf factors plus the
/// frame, ball clip, and keep-out tubes accumulated from enclosing nodes.
struct ScatterPatch<'a> {
    factors: Vec<&'a Region>,
    /// Composed frame from patch coordinates to standard coordinates.
    frame: Option<DMatrix<Complex64>>,
    /// Smallest enclosing ball clip, infinite when absent.
    clip_outer: f64,
    /// Keep-out tubes pulled back into patch coordinates.
    tubes: Vec<(ComplexSubspace, f64)>,
}

/// Distributes unions over products so each output row is a plain list of
/// leaf factors whose dimensions concatenate to the ambient space.
fn leaf_factor_lists<'a>(region: &'a Region, out: &mut Vec<Vec<&'a Region>>) {
    match region {
        Region::Empty { .. } => {}
        Region::Union(parts) => {
            for p in parts {
                leaf_factor_lists(p, out);
            }
        }
        Region::Product(parts) => {
            let mut acc: Vec<Vec<&Region>> = vec![Vec::new()];
            for part in parts {
                let mut lists = Vec::new();
                leaf_factor_lists(part, &mut lists);
                let mut next = Vec::with_capacity(acc.len() * lists.len());
                for prefix in &acc {
                    for list in &lists {
                        let mut row = prefix.clone();
                        row.extend(list.iter().copied());
                        next.push(row);
                    }
                }
                acc = next;
            }
            out.extend(acc.into_iter().filter(|row| !row.is_empty()));
        }
        leaf => out.push(vec![leaf]),
    }
}

/// Walks a region tree, accumulating frames, clips, and tubes, and emits one
/// patch per multiplied-out product of leaf factors.
fn collect_scatter_patches<'a>(
    region: &'a Region,
    frames: &mut Vec<&'a DMatrix<Complex64>>,
    clips: &mut Vec<f64>,
    tubes: &mut Vec<(&'a ComplexSubspace, f64, usize)>,
    out: &mut Vec<ScatterPatch<'a>>,
) {
    match region {
        Region::Empty { .. } => {}
        Region::Union(parts) => {
            for p in parts {
                collect_scatter_patches(p, frames, clips, tubes, out);
            }
        }
        Region::MinusTubes { base, tubes: t } => {
            for (s, w) in t {
                tubes.push((s, *w, frames.len()));
            }
            collect_scatter_patches(base, frames, clips, tubes, out);
            tubes.truncate(tubes.len() - t.len());
        }
        Region::Clipped { base, outer } => {
            clips.push(*outer);
            collect_scatter_patches(base, frames, clips, tubes, out);
            clips.pop();
        }
        Region::Framed { frame, inner } => {
            frames.push(frame);
            collect_scatter_patches(inner, frames, clips, tubes, out);
            frames.pop();
        }
        other => {
            let mut lists = Vec::new();
            leaf_factor_lists(other, &mut lists);
            if lists.is_empty() {
                return;
            }
            let frame = if frames.is_empty() {
                None
            } else {
                let mut acc = frames[0].clone();
                for f in &frames[1..] {
                    acc = &acc * *f;
                }
                Some(acc)
            };
            let clip_outer = clips.iter().copied().fold(f64::INFINITY, f64::min);
            // A tube recorded above some of the frames constrains partially
            // framed coordinates; pulling its subspace through the adjoint
            // of the frames below it restates the constraint in leaf
            // coordinates. Frames are unitary, so distances are unchanged.
            let pulled: Vec<(ComplexSubspace, f64)> = tubes
                .iter()
                .map(|(s, w, depth)| {
                    if *depth >= frames.len() {
                        ((*s).clone(), *w)
                    } else {
                        let mut below = frames[*depth].clone();
                        for f in &frames[*depth + 1..] {
                            below = &below * *f;
                        }
                        ((*s).transform(&below.adjoint()), *w)
                    }
                })
                .collect();
            for factors in lists {
                out.push(ScatterPatch {
                    factors,
                    frame: frame.clone(),
                    clip_outer,
                    tubes: pulled.clone(),
                });
            }
        }
    }
}

/// `lo2 <= sum of squared coordinates over the masked dims <= hi2`.
#[derive(Clone, Copy)]
struct RadialWindow {
    mask: u8,
    /// Highest dim in the mask; the lower bound is decidable there.
    last_dim: u8,
    lo2: f64,
    hi2: f64,
}

/// Grid and compiled per-node membership tests for one flat patch.
struct PatchGrid<'a> {
    origin: Vec<f64>,
    counts: Vec<usize>,
    step: f64,
    windows: Vec<RadialWindow>,
    /// Factors whose membership needs a full region test per node, as
    /// (real-dim offset, complex dim, region).
    generic: Vec<(usize, usize, &'a Region)>,
    /// Keep-out tubes around subspaces that are not axis-aligned, as
    /// (orthonormal basis, width).
    hard_tubes: Vec<(Vec<CVec>, f64)>,
}

/// Complex coordinate indices spanned by an axis-aligned subspace, if any.
fn axis_span(sub: &ComplexSubspace) -> Option<Vec<usize>> {
    let mut idx = Vec::new();
    for b in sub.basis() {
        let mut hit = None;
        for (i, z) in b.iter().enumerate() {
            if z.norm() > 1e-9 {
                if hit.is_some() || (z.norm() - 1.0).abs() > 1e-9 {
                    return None;
                }
                hit = Some(i);
            }
        }
        let h = hit?;
        if idx.contains(&h) {
            return None;
        }
        idx.push(h);
    }
    Some(idx)
}

/// Compiles a patch into a node grid with radial windows plus residual
/// per-node checks. `None` means the patch is provably empty.
fn compile_patch<'a>(
    patch: &'a ScatterPatch<'a>,
    step: f64,
    ambient: usize,
) -> Option<PatchGrid<'a>> {
    let mut origin = Vec::new();
    let mut counts = Vec::new();
    let mut windows: Vec<RadialWindow> = Vec::new();
    let mut generic = Vec::new();

    for factor in &patch.factors {
        let fdim = factor.complex_dim();
        let (lo, hi) = factor.bounding_box()?;
        let off_r = origin.len();
        for (l, h) in lo.iter().zip(hi.iter()) {
            origin.push(*l);
            counts.push(((h - l) / step).floor().max(0.0) as usize + 1);
        }
        let mask = (((1u32 << (2 * fdim)) - 1) << off_r) as u8;
        match factor {
            Region::Annulus { inner, outer, .. } => windows.push(RadialWindow {
                mask,
                last_dim: 0,
                lo2: inner * inner,
                hi2: outer * outer,
            }),
            // Box and point grids sit inside their factors by construction.
            Region::BoxRegion { .. } | Region::PointAt { .. } => {}
            Region::Tube {
                subspace,
                width,
                outer,
            } => {
                if subspace.dim() == 0 {
                    let r = width.min(*outer);
                    windows.push(RadialWindow {
                        mask,
                        last_dim: 0,
                        lo2: 0.0,
                        hi2: r * r,
                    });
                } else if subspace.dim() == fdim {
                    windows.push(RadialWindow {
                        mask,
                        last_dim: 0,
                        lo2: 0.0,
                        hi2: outer * outer,
                    });
                } else {
                    generic.push((off_r, fdim, *factor));
                }
            }
            _ => generic.push((off_r, fdim, *factor)),
        }
    }
    let rdims = origin.len();
    debug_assert_eq!(rdims, 2 * ambient, "patch factors must fill the space");
    let all_mask = ((1u32 << rdims) - 1) as u8;

    if patch.clip_outer.is_finite() {
        windows.push(RadialWindow {
            mask: all_mask,
            last_dim: 0,
            lo2: 0.0,
            hi2: patch.clip_outer * patch.clip_outer,
        });
    }
    let mut hard_tubes = Vec::new();
    for (sub, w) in &patch.tubes {
        if sub.dim() == 0 {
            windows.push(RadialWindow {
                mask: all_mask,
                last_dim: 0,
                lo2: w * w,
                hi2: f64::INFINITY,
            });
        } else if let Some(span) = axis_span(sub) {
            let mut mask = 0u32;
            for c in 0..ambient {
                if !span.contains(&c) {
                    mask |= 0b11 << (2 * c);
                }
            }
            if mask == 0 {
                // The tube fills the whole space: nothing survives.
                return None;
            }
            windows.push(RadialWindow {
                mask: mask as u8,
                last_dim: 0,
                lo2: w * w,
                hi2: f64::INFINITY,
            });
        } else {
            let basis = sub
                .basis()
                .iter()
                .map(|b| CVec::from_slice(b.as_slice()))
                .collect();
            hard_tubes.push((basis, *w));
        }
    }

    // Merge windows over identical dim sets and locate their closing dims.
    windows.sort_by_key(|w| w.mask);
    let mut merged: Vec<RadialWindow> = Vec::new();
    for w in windows {
        match merged.last_mut() {
            Some(m) if m.mask == w.mask => {
                m.lo2 = m.lo2.max(w.lo2);
                m.hi2 = m.hi2.min(w.hi2);
            }
            _ => merged.push(w),
        }
    }
    for w in &merged {
        if w.hi2 < w.lo2 {
            return None;
        }
    }
    merged.retain(|w| w.lo2 > 0.0 || w.hi2.is_finite());
    for w in &mut merged {
        w.last_dim = (7 - w.mask.leading_zeros() as u8).min(rdims as u8 - 1);
    }
    assert!(merged.len() <= 8, "too many radial windows in one patch");

    Some(PatchGrid {
        origin,
        counts,
        step,
        windows: merged,
        generic,
        hard_tubes,
    })
}

/// Per-dim index windows of the ball around one candidate, intersected with
/// the grid; `false` when the ball misses the grid entirely.
fn cand_index_ranges(
    c: &[f64],
    radii: &[f64],
    counts: &[usize],
    out: &mut [(usize, usize); 8],
) -> bool {
    for d in 0..c.len() {
        let lo = (c[d] - radii[d]).ceil().max(0.0);
        let hi = (c[d] + radii[d]).floor().min(counts[d] as f64 - 1.0);
        if hi < lo {
            return false;
        }
        out[d] = (lo as usize, hi as usize);
    }
    true
}

/// Visits the flat block ids of every block whose index box intersects the
/// given per-dim ranges.
fn for_each_block(
    ranges: &[(usize, usize)],
    edge: usize,
    bstride: &[usize],
    mut f: impl FnMut(usize),
) {
    let dims = ranges.len();
    let mut idx = [0usize; 8];
    for d in 0..dims {
        idx[d] = ranges[d].0 / edge;
    }
    loop {
        let id: usize = (0..dims).map(|d| idx[d] * bstride[d]).sum();
        f(id);
        let mut d = dims;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] <= ranges[d].1 / edge {
                break;
            }
            idx[d] = ranges[d].0 / edge;
        }
    }
}

/// Stamps one candidate's ball onto the block's squared-distance buffer.
/// Coordinates are index units; distances accumulate in real units with
/// per-dim step lengths, starting from the candidate's transverse offset.
#[allow(clippy::too_many_arguments)]
fn scatter_ball(
    buf: &mut [f64],
    c: &[f64],
    steps: &[f64],
    blo: &[usize],
    spans: &[usize],
    strides: &[usize],
    rc2: f64,
    d: usize,
    acc: f64,
    slot: usize,
) {
    let rem = rc2 - acc;
    if rem < 0.0 {
        return;
    }
    let w = rem.sqrt() / steps[d];
    let lo = ((c[d] - w).ceil().max(blo[d] as f64)) as i64;
    let hi = ((c[d] + w).floor().min((blo[d] + spans[d] - 1) as f64)) as i64;
    let last = d + 1 == spans.len();
    for i in lo..=hi {
        let delta = (i as f64 - c[d]) * steps[d];
        let a2 = acc + delta * delta;
        if a2 > rc2 {
            continue;
        }
        let s = slot + (i as usize - blo[d]) * strides[d];
        if last {
            if a2 < buf[s] {
                buf[s] = a2;
            }
        } else {
            scatter_ball(buf, c, steps, blo, spans, strides, rc2, d + 1, a2, s);
        }
    }
}

/// Stamps one candidate's ball for a non-orthogonal index basis: per-dim
/// windows bound the ellipsoid, and the quadratic form plus the transverse
/// offset is evaluated per slot.
#[allow(clippy::too_many_arguments)]
fn scatter_ball_gram(
    buf: &mut [f64],
    c: &[f64],
    w_idx: &[f64],
    gram: &DMatrix<f64>,
    blo: &[usize],
    spans: &[usize],
    strides: &[usize],
    rc2: f64,
    acc0: f64,
    d: usize,
    delta: &mut [f64; 8],
    slot: usize,
) {
    let lo = ((c[d] - w_idx[d]).ceil().max(blo[d] as f64)) as i64;
    let hi = ((c[d] + w_idx[d]).floor().min((blo[d] + spans[d] - 1) as f64)) as i64;
    let last = d + 1 == spans.len();
    for i in lo..=hi {
        delta[d] = i as f64 - c[d];
        let s = slot + (i as usize - blo[d]) * strides[d];
        if last {
            let rank = spans.len();
            let mut d2 = acc0;
            for a in 0..rank {
                for b in 0..rank {
                    d2 += delta[a] * delta[b] * gram[(a, b)];
                }
            }
            if d2 <= rc2 && d2 < buf[s] {
                buf[s] = d2;
            }
        } else {
            scatter_ball_gram(
                buf, c, w_idx, gram, blo, spans, strides, rc2, acc0, d + 1, delta, s,
            );
        }
    }
}

/// Stamps one exclusion ball as a squared-distance ratio `d^2 / e^2`, so
/// balls of different radii share one buffer. Slightly over-stamps past the
/// boundary so borderline nodes can be re-checked exactly.
#[allow(clippy::too_many_arguments)]
fn scatter_excl(
    buf: &mut [f64],
    c: &[f64],
    steps: &[f64],
    blo: &[usize],
    spans: &[usize],
    strides: &[usize],
    e2: f64,
    d: usize,
    acc: f64,
    slot: usize,
) {
    let rem = e2 * (1.0 + 4e-9) - acc;
    if rem < 0.0 {
        return;
    }
    let w = rem.sqrt() / steps[d];
    let lo = ((c[d] - w).ceil().max(blo[d] as f64)) as i64;
    let hi = ((c[d] + w).floor().min((blo[d] + spans[d] - 1) as f64)) as i64;
    let last = d + 1 == spans.len();
    for i in lo..=hi {
        let delta = (i as f64 - c[d]) * steps[d];
        let a2 = acc + delta * delta;
        if a2 > e2 * (1.0 + 4e-9) {
            continue;
        }
        let s = slot + (i as usize - blo[d]) * strides[d];
        if last {
            let r = a2 / e2;
            if r < buf[s] {
                buf[s] = r;
            }
        } else {
            scatter_excl(buf, c, steps, blo, spans, strides, e2, d + 1, a2, s);
        }
    }
}

/// `scatter_excl` for a non-orthogonal index basis.
#[allow(clippy::too_many_arguments)]
fn scatter_excl_gram(
    buf: &mut [f64],
    c: &[f64],
    we_idx: &[f64],
    gram: &DMatrix<f64>,
    blo: &[usize],
    spans: &[usize],
    strides: &[usize],
    e2: f64,
    acc0: f64,
    d: usize,
    delta: &mut [f64; 8],
    slot: usize,
) {
    let lo = ((c[d] - we_idx[d]).ceil().max(blo[d] as f64)) as i64;
    let hi = ((c[d] + we_idx[d]).floor().min((blo[d] + spans[d] - 1) as f64)) as i64;
    let last = d + 1 == spans.len();
    for i in lo..=hi {
        delta[d] = i as f64 - c[d];
        let s = slot + (i as usize - blo[d]) * strides[d];
        if last {
            let rank = spans.len();
            let mut d2 = acc0;
            for a in 0..rank {
                for b in 0..rank {
                    d2 += delta[a] * delta[b] * gram[(a, b)];
                }
            }
            if d2 <= e2 * (1.0 + 4e-9) {
                let r = d2 / e2;
                if r < buf[s] {
                    buf[s] = r;
                }
            }
        } else {
            scatter_excl_gram(
                buf, c, we_idx, gram, blo, spans, strides, e2, acc0, d + 1, delta, s,
            );
        }
    }
}

/// Node sweep over one block of a flat patch grid.
struct FlatSweep<'a, 'b> {
    origin: &'a [f64],
    step: f64,
    blo: &'a [usize],
    spans: &'a [usize],
    strides: &'a [usize],
    windows: &'a [RadialWindow],
    generic: &'a [(usize, usize, &'a Region)],
    hard_tubes: &'a [(Vec<CVec>, f64)],
    context: &'a MetricContext,
    frame: Option<&'a DMatrix<Complex64>>,
    buf: &'a [f64],
    active: bool,
    rc2: f64,
    rdims: usize,
    pos: [f64; 8],
    tally: &'b mut CoverTally,
}

impl FlatSweep<'_, '_> {
    fn descend(&mut self, d: usize, slot: usize, partials: [f64; 8]) {
        if d + 1 == self.rdims {
            self.innermost(slot, partials);
            return;
        }
        for i in 0..self.spans[d] {
            let x = self.origin[d] + ((self.blo[d] + i) as f64) * self.step;
            let sq = x * x;
            let mut p = partials;
            let mut ok = true;
            for (wi, w) in self.windows.iter().enumerate() {
                if w.mask >> d & 1 == 1 {
                    p[wi] += sq;
                    if p[wi] > w.hi2 || (w.last_dim as usize == d && p[wi] < w.lo2) {
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                self.pos[d] = x;
                self.descend(d + 1, slot + i * self.strides[d], p);
            }
        }
    }

    /// Solves the windows for the last coordinate analytically and visits
    /// only the admissible index ranges.
    fn innermost(&mut self, base: usize, partials: [f64; 8]) {
        let d = self.rdims - 1;
        let o = self.origin[d];
        let lo_abs = self.blo[d];
        let span = self.spans[d];
        let mut lo_req = 0.0f64;
        let mut hi_req = f64::INFINITY;
        let mut windowed = false;
        for (wi, w) in self.windows.iter().enumerate() {
            if w.mask >> d & 1 == 1 {
                windowed = true;
                lo_req = lo_req.max(w.lo2 - partials[wi]);
                hi_req = hi_req.min(w.hi2 - partials[wi]);
            }
        }
        if !windowed {
            for i in 0..span {
                self.emit(base + i, lo_abs + i);
            }
            return;
        }
        if hi_req < 0.0 || hi_req < lo_req {
            return;
        }
        let b = hi_req.sqrt();
        let a = if lo_req > 0.0 { lo_req.sqrt() } else { 0.0 };
        let clamp = |xl: f64, xh: f64| -> (i64, i64) {
            let lo = ((xl - o) / self.step - 1e-9).ceil() as i64;
            let hi = ((xh - o) / self.step + 1e-9).floor() as i64;
            (lo.max(lo_abs as i64), hi.min((lo_abs + span - 1) as i64))
        };
        let ranges = if a > 0.0 {
            [clamp(-b, -a), clamp(a, b)]
        } else {
            [clamp(-b, b), (1, 0)]
        };
        for (lo, hi) in ranges {
            for i in lo..=hi {
                self.emit(base + (i as usize - lo_abs), i as usize);
            }
        }
    }

    fn emit(&mut self, slot: usize, i_abs: usize) {
        let d = self.rdims - 1;
        self.pos[d] = self.origin[d] + (i_abs as f64) * self.step;
        for (off, fdim, region) in self.generic {
            let v = CVec::from_real(&self.pos[*off..*off + 2 * *fdim]);
            if !region.contains(&v, self.context) {
                return;
            }
        }
        if !self.hard_tubes.is_empty() {
            let v = CVec::from_real(&self.pos[..self.rdims]);
            for (basis, w) in self.hard_tubes {
                let mut d2 = v.norm_sq();
                for b in basis {
                    d2 -= v.inner(b).norm_sqr();
                }
                if d2 < w * w {
                    return;
                }
            }
        }
        self.tally.samples += 1;
        let d2 = if self.active {
            self.buf[slot]
        } else {
            f64::INFINITY
        };
        if d2 <= self.rc2 {
            if d2 > self.tally.covered_gap2 {
                self.tally.covered_gap2 = d2;
            }
        } else {
            self.tally.uncovered += 1;
            if self.tally.detail.len() < UNCOVERED_DETAIL_CAP {
                let v = CVec::from_real(&self.pos[..self.rdims]);
                let g = match self.frame {
                    Some(f) => apply(f, &v),
                    None => v,
                };
                self.tally.detail.push(g);
            }
        }
    }
}

/// Scans one flat patch: bucket candidate images into blocks, scatter their
/// balls, and sweep the in-region nodes.
fn scan_patch(
    grid: &PatchGrid,
    frame: Option<&DMatrix<Complex64>>,
    images: &[CVec],
    context: &MetricContext,
    rc: f64,
    tally: &mut CoverTally,
) {
    let rdims = grid.counts.len();
    if rdims == 0 || rdims > 8 || grid.counts.iter().any(|&c| c == 0) {
        return;
    }
    let rc2 = rc * rc;
    let step = grid.step;
    let r_idx = rc / step;
    let adj = frame.map(|f| f.adjoint());

    // Candidates in grid index coordinates, prefiltered to the window
    // neighborhoods so distant images never reach the per-block lists.
    let mut cand: Vec<f64> = Vec::new();
    'images: for img in images {
        let v = match &adj {
            Some(a) => apply(a, img),
            None => *img,
        };
        let comps = v.components();
        let mut row = [0.0f64; 8];
        let mut sq = [0.0f64; 8];
        for d in 0..rdims {
            let x = if d % 2 == 0 {
                comps[d / 2].re
            } else {
                comps[d / 2].im
            };
            let t = (x - grid.origin[d]) / step;
            if t < -r_idx - 1.0 || t > grid.counts[d] as f64 - 1.0 + r_idx + 1.0 {
                continue 'images;
            }
            row[d] = t;
            sq[d] = x * x;
        }
        for w in &grid.windows {
            let mut s = 0.0;
            for d in 0..rdims {
                if w.mask >> d & 1 == 1 {
                    s += sq[d];
                }
            }
            // A candidate can only cover nodes within `rc` of itself, so it
            // must sit within `rc` of the window shell.
            let lo = if w.lo2 > 0.0 {
                let r = (w.lo2.sqrt() - rc).max(0.0);
                r * r
            } else {
                0.0
            };
            let hi = if w.hi2.is_finite() {
                let r = w.hi2.sqrt() + rc;
                r * r
            } else {
                f64::INFINITY
            };
            if s < lo || s > hi {
                continue 'images;
            }
        }
        cand.extend_from_slice(&row[..rdims]);
    }

    let edge = block_edge(rdims);
    let nb: Vec<usize> = grid.counts.iter().map(|&c| (c + edge - 1) / edge).collect();
    let nblocks: usize = nb.iter().product();
    let mut bstride = vec![1usize; rdims];
    for d in (0..rdims - 1).rev() {
        bstride[d] = bstride[d + 1] * nb[d + 1];
    }

    // Bucket candidates into every block their ball touches (CSR layout).
    let ncand = cand.len() / rdims;
    let radii = vec![r_idx; rdims];
    let mut ranges = [(0usize, 0usize); 8];
    let mut bstart = vec![0u32; nblocks + 1];
    for ci in 0..ncand {
        let c = &cand[ci * rdims..(ci + 1) * rdims];
        if cand_index_ranges(c, &radii, &grid.counts, &mut ranges) {
            for_each_block(&ranges[..rdims], edge, &bstride, |id| bstart[id + 1] += 1);
        }
    }
    for i in 0..nblocks {
        bstart[i + 1] += bstart[i];
    }
    let mut cursor: Vec<u32> = bstart[..nblocks].to_vec();
    let mut entries = vec![0u32; bstart[nblocks] as usize];
    for ci in 0..ncand {
        let c = &cand[ci * rdims..(ci + 1) * rdims];
        if cand_index_ranges(c, &radii, &grid.counts, &mut ranges) {
            for_each_block(&ranges[..rdims], edge, &bstride, |id| {
                entries[cursor[id] as usize] = ci as u32;
                cursor[id] += 1;
            });
        }
    }

    let mut buf = vec![f64::INFINITY; edge.pow(rdims as u32)];
    let steps = vec![step; rdims];
    let mut bidx = [0usize; 8];
    let mut blo = [0usize; 8];
    let mut spans = [0usize; 8];
    let mut strides = [0usize; 8];
    for bid in 0..nblocks {
        for d in 0..rdims {
            blo[d] = bidx[d] * edge;
            spans[d] = edge.min(grid.counts[d] - blo[d]);
        }
        strides[rdims - 1] = 1;
        for d in (0..rdims - 1).rev() {
            strides[d] = strides[d + 1] * spans[d + 1];
        }

        // Per-dim squared-coordinate extremes give whole-block window checks
        // that skip dead bounding-box corners cheaply.
        let mut alive = true;
        let mut sqmin = [0.0f64; 8];
        let mut sqmax = [0.0f64; 8];
        for d in 0..rdims {
            let x0 = grid.origin[d] + (blo[d] as f64) * step;
            let x1 = grid.origin[d] + ((blo[d] + spans[d] - 1) as f64) * step;
            sqmin[d] = if x0 <= 0.0 && x1 >= 0.0 {
                0.0
            } else {
                (x0 * x0).min(x1 * x1)
            };
            sqmax[d] = (x0 * x0).max(x1 * x1);
        }
        for w in &grid.windows {
            let mut mn = 0.0;
            let mut mx = 0.0;
            for d in 0..rdims {
                if w.mask >> d & 1 == 1 {
                    mn += sqmin[d];
                    mx += sqmax[d];
                }
            }
            if mn > w.hi2 || mx < w.lo2 {
                alive = false;
                break;
            }
        }

        if alive {
            let cs = &entries[bstart[bid] as usize..bstart[bid + 1] as usize];
            let active = !cs.is_empty();
            if active {
                let len: usize = spans[..rdims].iter().product();
                buf[..len].fill(f64::INFINITY);
                for &ci in cs {
                    let c = &cand[ci as usize * rdims..(ci as usize + 1) * rdims];
                    scatter_ball(
                        &mut buf,
                        c,
                        &steps,
                        &blo[..rdims],
                        &spans[..rdims],
                        &strides[..rdims],
                        rc2,
                        0,
                        0.0,
                        0,
                    );
                }
            }
            let mut sweep = FlatSweep {
                origin: &grid.origin,
                step,
                blo: &blo[..rdims],
                spans: &spans[..rdims],
                strides: &strides[..rdims],
                windows: &grid.windows,
                generic: &grid.generic,
                hard_tubes: &grid.hard_tubes,
                context,
                frame,
                buf: &buf,
                active,
                rc2,
                rdims,
                pos: [0.0; 8],
                tally,
            };
            sweep.descend(0, 0, [0.0; 8]);
        }

        let mut d = rdims;
        loop {
            if d == 0 {
                break;
            }
            d -= 1;
            bidx[d] += 1;
            if bidx[d] < nb[d] {
                break;
            }
            bidx[d] = 0;
        }
    }
}

/// Covering check for flat regions (plain, chart, and product lattices):
/// scatter distance transform per patch, then an exact nearest-image
/// follow-up on any uncovered nodes.
fn covering_scatter_flat(
    lat: &SeparatedLattice,
    context: &MetricContext,
    grid_step: f64,
    r_target: f64,
) -> (bool, f64, usize) {
    let rc = r_target + FLOAT_SLACK;
    let gap_cap = 2.0 * r_target + 1.0;
    let images = ImageSet::build(lat, context, rc.max(1e-6));

    let mut patches = Vec::new();
    {
        let mut frames = Vec::new();
        let mut clips = Vec::new();
        let mut tubes = Vec::new();
        collect_scatter_patches(&lat.region, &mut frames, &mut clips, &mut tubes, &mut patches);
    }
    let mut tally = CoverTally::default();
    for patch in &patches {
        let Some(grid) = compile_patch(patch, grid_step, lat.ambient) else {
            continue;
        };
        scan_patch(
            &grid,
            patch.frame.as_ref(),
            &images.positions,
            context,
            rc,
            &mut tally,
        );
    }
    let mut max_gap = tally.covered_gap2.sqrt();
    for p in &tally.detail {
        let g = images.nearest_flat(p, r_target, gap_cap).min(gap_cap);
        if g > max_gap {
            max_gap = g;
        }
    }
    if tally.uncovered > tally.detail.len() && gap_cap > max_gap {
        max_gap = gap_cap;
    }
    (tally.uncovered == 0, max_gap, tally.samples)
}

/// Node sweep over one block of a torus cell grid.
struct TorusSweep<'a, 'b> {
    astep: &'a [CVec],
    spans: &'a [usize],
    strides: &'a [usize],
    boundary: &'a [(&'a FixedComponent, f64)],
    iso: &'a [(&'a FixedComponent, f64)],
    quotient: &'a TorusQuotient,
    s: f64,
    buf: &'a [f64],
    exbuf: &'a [f64],
    active: bool,
    ex_active: bool,
    rc2: f64,
    rank: usize,
    tally: &'b mut CoverTally,
}

impl TorusSweep<'_, '_> {
    fn descend(&mut self, d: usize, slot: usize, pos: CVec) {
        if d + 1 == self.rank {
            let mut p = pos;
            for i in 0..self.spans[d] {
                self.emit(slot + i, p);
                p = p + self.astep[d];
            }
            return;
        }
        let mut p = pos;
        for i in 0..self.spans[d] {
            self.descend(d + 1, slot + i * self.strides[d], p);
            p = p + self.astep[d];
        }
    }

    fn emit(&mut self, slot: usize, pos: CVec) {
        if self.ex_active {
            // Stamped min of d^2/e^2 over isolated exclusion balls; only a
            // hairline shell around a ball boundary needs exact distances.
            let ratio = self.exbuf[slot];
            if ratio < 1.0 - 1e-9 {
                return;
            }
            if ratio <= 1.0 + 1e-9 {
                let zt = pos * (1.0 / self.s);
                for (comp, e) in self.iso {
                    if self.quotient.dist_to_component(&zt, comp) * self.s < *e {
                        return;
                    }
                }
            }
        }
        for (comp, e) in self.boundary {
            let zt = pos * (1.0 / self.s);
            if self.quotient.dist_to_component(&zt, comp) * self.s < *e {
                return;
            }
        }
        self.tally.samples += 1;
        let d2 = if self.active {
            self.buf[slot]
        } else {
            f64::INFINITY
        };
        if d2 <= self.rc2 {
            if d2 > self.tally.covered_gap2 {
                self.tally.covered_gap2 = d2;
            }
        } else {
            self.tally.uncovered += 1;
            if self.tally.detail.len() < UNCOVERED_DETAIL_CAP {
                self.tally.detail.push(pos);
            }
        }
    }
}

/// Covering check for torus cells. The cell grid is blocked like the flat
/// scan; lattice translates of each image within reach of the cell are
/// split into cell coordinates plus a transverse residual, so wrapping and
/// off-cell images are handled exactly. Exclusion balls around isolated
/// singular points are stamped the same way as squared-distance ratios, so
/// only nodes in a hairline shell around a ball boundary pay for an exact
/// singular-component distance; positive-dimensional components are
/// classified per block via a bounding ball.
fn covering_scatter_torus(
    lat: &SeparatedLattice,
    quotient: &TorusQuotient,
    k: u32,
    context: &MetricContext,
    grid_step: f64,
    r_target: f64,
) -> (bool, f64, usize) {
    let rc = r_target + FLOAT_SLACK;
    let rc2 = rc * rc;
    let gap_cap = 2.0 * r_target + 1.0;
    let Region::TorusCell {
        offset,
        axes,
        exclusions,
    } = &lat.region
    else {
        return (true, 0.0, 0);
    };
    let rank = axes.len();
    let s = quotient.gk_scale(k);
    let images = ImageSet::build(lat, context, rc.max(1e-6));
    let wrap = images.wrap.as_ref().expect("torus image set has wrap data");

    let nearest_wrapped = |p: &CVec| -> f64 {
        let tp = quotient.lattice_coords(&(*p * (1.0 / s)));
        let mut best = f64::INFINITY;
        for t in &images.t_coords {
            let d = wrap.dist(&tp, t);
            if d < best {
                best = d;
            }
        }
        best
    };

    if rank == 0 {
        if !lat.region.contains(offset, context) {
            return (true, 0.0, 0);
        }
        let g = nearest_wrapped(offset).min(gap_cap);
        return (g <= rc, g, 1);
    }

    // Node steps and counts exactly as the region's own grid defines them.
    let rd = 2 * lat.ambient;
    let mut counts = Vec::with_capacity(rank);
    let mut astep: Vec<CVec> = Vec::with_capacity(rank);
    for axis in axes {
        let count = (axis.norm() / grid_step).ceil().max(1.0) as usize;
        counts.push(count);
        astep.push(*axis * (1.0 / count as f64));
    }
    let areal: Vec<Vec<f64>> = astep.iter().map(|a| a.to_real()).collect();
    let anorm: Vec<f64> = astep.iter().map(|a| a.norm()).collect();
    let mut gram = DMatrix::<f64>::zeros(rank, rank);
    for i in 0..rank {
        for j in 0..rank {
            gram[(i, j)] = (0..rd).map(|r| areal[i][r] * areal[j][r]).sum();
        }
    }
    let scale = (0..rank).map(|i| gram[(i, i)]).fold(0.0f64, f64::max);
    let orth =
        (0..rank).all(|i| (0..rank).all(|j| i == j || gram[(i, j)].abs() <= 1e-12 * scale));
    let Some(ginv) = gram.clone().try_inverse() else {
        return (false, gap_cap, 0);
    };
    let w_idx: Vec<f64> = (0..rank).map(|d| rc * ginv[(d, d)].sqrt()).collect();

    // Period basis in g_k units and its inverse, for enumerating the
    // lattice translates of each image that can reach the cell.
    let basis = quotient.basis();
    let lrank = basis.len();
    let mut bmat = DMatrix::<f64>::zeros(rd, lrank);
    for (j, b) in basis.iter().enumerate() {
        for (r, x) in (*b * s).to_real().iter().enumerate() {
            bmat[(r, j)] = *x;
        }
    }
    let Some(binv) = bmat.clone().try_inverse() else {
        return (false, gap_cap, 0);
    };

    let off_real = offset.to_real();
    let mut cell_lo = off_real.clone();
    let mut cell_hi = off_real.clone();
    for axis in axes {
        for (r, x) in axis.to_real().iter().enumerate() {
            if *x >= 0.0 {
                cell_hi[r] += x;
            } else {
                cell_lo[r] += x;
            }
        }
    }
    if images.positions.is_empty() {
        return (false, gap_cap, 0);
    }

    // Candidates: per (image, translate), least-squares cell coordinates in
    // index units plus the squared transverse residual. Translate indices
    // are bounded per image: a useful translate lands within the cover
    // radius of the cell's bounding box.
    let mut cand: Vec<f64> = Vec::new();
    let mut cacc: Vec<f64> = Vec::new();
    let mut m_lo = vec![0i64; lrank];
    let mut m_hi = vec![0i64; lrank];
    let mut m = vec![0i64; lrank];
    for img in &images.positions {
        let ir = img.to_real();
        for j in 0..lrank {
            let mut lo = 0.0f64;
            let mut hi = 0.0f64;
            for r in 0..rd {
                let a = binv[(j, r)] * (cell_lo[r] - ir[r] - rc - 1e-6);
                let b = binv[(j, r)] * (cell_hi[r] - ir[r] + rc + 1e-6);
                lo += a.min(b);
                hi += a.max(b);
            }
            m_lo[j] = (lo - 1e-9).floor() as i64;
            m_hi[j] = (hi + 1e-9).ceil() as i64;
        }
        m.copy_from_slice(&m_lo);
        'translates: loop {
            let mut delta0 = [0.0f64; 8];
            for r in 0..rd {
                let mut x = ir[r] - off_real[r];
                for j in 0..lrank {
                    x += bmat[(r, j)] * m[j] as f64;
                }
                delta0[r] = x;
            }
            let mut rhs = [0.0f64; 8];
            for d in 0..rank {
                rhs[d] = (0..rd).map(|r| areal[d][r] * delta0[r]).sum();
            }
            let mut t = [0.0f64; 8];
            for d in 0..rank {
                t[d] = (0..rank).map(|e| ginv[(d, e)] * rhs[e]).sum();
            }
            let n2: f64 = delta0[..rd].iter().map(|x| x * x).sum();
            let proj: f64 = (0..rank).map(|d| t[d] * rhs[d]).sum();
            let resid = (n2 - proj).max(0.0);
            let keep = resid <= rc2 + 1e-12
                && (0..rank).all(|d| {
                    t[d] >= -w_idx[d] - 1.0 && t[d] <= counts[d] as f64 - 1.0 + w_idx[d] + 1.0
                });
            if keep {
                cand.extend_from_slice(&t[..rank]);
                cacc.push(resid);
            }
            let mut j = lrank;
            loop {
                if j == 0 {
                    break 'translates;
                }
                j -= 1;
                m[j] += 1;
                if m[j] <= m_hi[j] {
                    break;
                }
                m[j] = m_lo[j];
            }
        }
    }

    // Exclusion balls around isolated singular points are stamped into a
    // second buffer as squared-distance ratios by the same scatter pass;
    // positive-dimensional components are classified per block instead.
    let comps = quotient.singular_components();
    let mut iso_excl: Vec<(&FixedComponent, f64)> = Vec::new();
    let mut dim_excl: Vec<(&FixedComponent, f64)> = Vec::new();
    for (comp, &e) in comps.iter().zip(exclusions.iter()) {
        if e > 0.0 {
            if comp.directions.dim() == 0 {
                iso_excl.push((comp, e));
            } else {
                dim_excl.push((comp, e));
            }
        }
    }

    let ginv_sqrt: Vec<f64> = (0..rank).map(|d| ginv[(d, d)].sqrt()).collect();
    let mut xc: Vec<f64> = Vec::new();
    let mut xacc: Vec<f64> = Vec::new();
    let mut xe2: Vec<f64> = Vec::new();
    for (comp, e) in &iso_excl {
        let e = *e;
        let e2 = e * e;
        let ir = (comp.offset * s).to_real();
        for j in 0..lrank {
            let mut lo = 0.0f64;
            let mut hi = 0.0f64;
            for r in 0..rd {
                let a = binv[(j, r)] * (cell_lo[r] - ir[r] - e - 1e-6);
                let b = binv[(j, r)] * (cell_hi[r] - ir[r] + e + 1e-6);
                lo += a.min(b);
                hi += a.max(b);
            }
            m_lo[j] = (lo - 1e-9).floor() as i64;
            m_hi[j] = (hi + 1e-9).ceil() as i64;
        }
        m.copy_from_slice(&m_lo);
        'xtranslates: loop {
            let mut delta0 = [0.0f64; 8];
            for r in 0..rd {
                let mut x = ir[r] - off_real[r];
                for j in 0..lrank {
                    x += bmat[(r, j)] * m[j] as f64;
                }
                delta0[r] = x;
            }
            let mut rhs = [0.0f64; 8];
            for d in 0..rank {
                rhs[d] = (0..rd).map(|r| areal[d][r] * delta0[r]).sum();
            }
            let mut t = [0.0f64; 8];
            for d in 0..rank {
                t[d] = (0..rank).map(|q| ginv[(d, q)] * rhs[q]).sum();
            }
            let n2: f64 = delta0[..rd].iter().map(|x| x * x).sum();
            let proj: f64 = (0..rank).map(|d| t[d] * rhs[d]).sum();
            let resid = (n2 - proj).max(0.0);
            let keep = resid <= e2 * (1.0 + 4e-9) + 1e-12
                && (0..rank).all(|d| {
                    let we = e * ginv_sqrt[d];
                    t[d] >= -we - 1.0 && t[d] <= counts[d] as f64 - 1.0 + we + 1.0
                });
            if keep {
                xc.extend_from_slice(&t[..rank]);
                xacc.push(resid);
                xe2.push(e2);
            }
            let mut j = lrank;
            loop {
                if j == 0 {
                    break 'xtranslates;
                }
                j -= 1;
                m[j] += 1;
                if m[j] <= m_hi[j] {
                    break;
                }
                m[j] = m_lo[j];
            }
        }
    }

    let edge = block_edge(rank);
    let nb: Vec<usize> = counts.iter().map(|&c| (c + edge - 1) / edge).collect();
    let nblocks: usize = nb.iter().product();
    let mut bstride = vec![1usize; rank];
    for d in (0..rank - 1).rev() {
        bstride[d] = bstride[d + 1] * nb[d + 1];
    }

    let ncand = cacc.len();
    let mut ranges = [(0usize, 0usize); 8];
    let mut bstart = vec![0u32; nblocks + 1];
    for ci in 0..ncand {
        let c = &cand[ci * rank..(ci + 1) * rank];
        if cand_index_ranges(c, &w_idx, &counts, &mut ranges) {
            for_each_block(&ranges[..rank], edge, &bstride, |id| bstart[id + 1] += 1);
        }
    }
    for i in 0..nblocks {
        bstart[i + 1] += bstart[i];
    }
    let mut cursor: Vec<u32> = bstart[..nblocks].to_vec();
    let mut entries = vec![0u32; bstart[nblocks] as usize];
    for ci in 0..ncand {
        let c = &cand[ci * rank..(ci + 1) * rank];
        if cand_index_ranges(c, &w_idx, &counts, &mut ranges) {
            for_each_block(&ranges[..rank], edge, &bstride, |id| {
                entries[cursor[id] as usize] = ci as u32;
                cursor[id] += 1;
            });
        }
    }

    let nxcand = xacc.len();
    let mut wrad = [0.0f64; 8];
    let mut bstart_x = vec![0u32; nblocks + 1];
    for ci in 0..nxcand {
        let c = &xc[ci * rank..(ci + 1) * rank];
        let e = xe2[ci].sqrt();
        for d in 0..rank {
            wrad[d] = e * ginv_sqrt[d];
        }
        if cand_index_ranges(c, &wrad[..rank], &counts, &mut ranges) {
            for_each_block(&ranges[..rank], edge, &bstride, |id| bstart_x[id + 1] += 1);
        }
    }
    for i in 0..nblocks {
        bstart_x[i + 1] += bstart_x[i];
    }
    let mut cursor_x: Vec<u32> = bstart_x[..nblocks].to_vec();
    let mut entries_x = vec![0u32; bstart_x[nblocks] as usize];
    for ci in 0..nxcand {
        let c = &xc[ci * rank..(ci + 1) * rank];
        let e = xe2[ci].sqrt();
        for d in 0..rank {
            wrad[d] = e * ginv_sqrt[d];
        }
        if cand_index_ranges(c, &wrad[..rank], &counts, &mut ranges) {
            for_each_block(&ranges[..rank], edge, &bstride, |id| {
                entries_x[cursor_x[id] as usize] = ci as u32;
                cursor_x[id] += 1;
            });
        }
    }

    let mut tally = CoverTally::default();
    let mut buf = vec![f64::INFINITY; edge.pow(rank as u32)];
    let mut exbuf = vec![f64::INFINITY; edge.pow(rank as u32)];
    let mut bidx = [0usize; 8];
    let mut blo = [0usize; 8];
    let mut spans = [0usize; 8];
    let mut strides = [0usize; 8];
    let mut delta = [0.0f64; 8];
    for bid in 0..nblocks {
        for d in 0..rank {
            blo[d] = bidx[d] * edge;
            spans[d] = edge.min(counts[d] - blo[d]);
        }
        strides[rank - 1] = 1;
        for d in (0..rank - 1).rev() {
            strides[d] = strides[d + 1] * spans[d + 1];
        }

        // Conservative per-block exclusion classification via a bounding
        // ball around the block's nodes; the distance is 1-Lipschitz, so a
        // center measurement decides whole blocks away from the boundary.
        let mut center = *offset;
        let mut rb = 0.0;
        for d in 0..rank {
            center = center + astep[d] * (blo[d] as f64 + (spans[d] as f64 - 1.0) / 2.0);
            rb += 0.5 * (spans[d] as f64 - 1.0) * anorm[d];
        }
        let zt = center * (1.0 / s);
        let mut dead = false;
        let mut boundary: Vec<(&FixedComponent, f64)> = Vec::new();
        for (comp, e) in &dim_excl {
            let dc = quotient.dist_to_component(&zt, comp) * s;
            if dc + rb < *e {
                dead = true;
                break;
            }
            if dc - rb < *e {
                boundary.push((comp, *e));
            }
        }

        if !dead {
            let cs = &entries[bstart[bid] as usize..bstart[bid + 1] as usize];
            let active = !cs.is_empty();
            if active {
                let len: usize = spans[..rank].iter().product();
                buf[..len].fill(f64::INFINITY);
                for &ci in cs {
                    let c = &cand[ci as usize * rank..(ci as usize + 1) * rank];
                    if orth {
                        scatter_ball(
                            &mut buf,
                            c,
                            &anorm,
                            &blo[..rank],
                            &spans[..rank],
                            &strides[..rank],
                            rc2,
                            0,
                            cacc[ci as usize],
                            0,
                        );
                    } else {
                        scatter_ball_gram(
                            &mut buf,
                            c,
                            &w_idx,
                            &gram,
                            &blo[..rank],
                            &spans[..rank],
                            &strides[..rank],
                            rc2,
                            cacc[ci as usize],
                            0,
                            &mut delta,
                            0,
                        );
                    }
                }
            }
            let xs = &entries_x[bstart_x[bid] as usize..bstart_x[bid + 1] as usize];
            let ex_active = !xs.is_empty();
            if ex_active {
                let len: usize = spans[..rank].iter().product();
                exbuf[..len].fill(f64::INFINITY);
                for &ci in xs {
                    let c = &xc[ci as usize * rank..(ci as usize + 1) * rank];
                    let e2 = xe2[ci as usize];
                    if orth {
                        scatter_excl(
                            &mut exbuf,
                            c,
                            &anorm,
                            &blo[..rank],
                            &spans[..rank],
                            &strides[..rank],
                            e2,
                            0,
                            xacc[ci as usize],
                            0,
                        );
                    } else {
                        let e = e2.sqrt();
                        for d in 0..rank {
                            wrad[d] = e * ginv_sqrt[d];
                        }
                        scatter_excl_gram(
                            &mut exbuf,
                            c,
                            &wrad[..rank],
                            &gram,
                            &blo[..rank],
                            &spans[..rank],
                            &strides[..rank],
                            e2,
                            xacc[ci as usize],
                            0,
                            &mut delta,
                            0,
                        );
                    }
                }
            }
            let mut start = *offset;
            for d in 0..rank {
                start = start + astep[d] * (blo[d] as f64);
            }
            let mut sweep = TorusSweep {
                astep: &astep,
                spans: &spans[..rank],
                strides: &strides[..rank],
                boundary: &boundary,
                iso: &iso_excl,
                quotient,
                s,
                buf: &buf,
                exbuf: &exbuf,
                active,
                ex_active,
                rc2,
                rank,
                tally: &mut tally,
            };
            sweep.descend(0, 0, start);
        }

        let mut d = rank;
        loop {
            if d == 0 {
                break;
            }
            d -= 1;
            bidx[d] += 1;
            if bidx[d] < nb[d] {
                break;
            }
            bidx[d] = 0;
        }
    }

    let mut max_gap = tally.covered_gap2.sqrt();
    for p in &tally.detail {
        let g = nearest_wrapped(p).min(gap_cap);
        if g > max_gap {
            max_gap = g;
        }
    }
    if tally.uncovered > tally.detail.len() && gap_cap > max_gap {
        max_gap = gap_cap;
    }
    (tally.uncovered == 0, max_gap, tally.samples)
}

fn sample_distribution(
    lat: &SeparatedLattice,
    context: &MetricContext,
    _d: f64,
) -> (f64, [f64; 4]) {
    if lat.points.is_empty() {
        return (0.0, [0.0; 4]);
    }
    let rdim = 2 * lat.ambient;
    let diam = match &lat.region {
        Region::TorusCell { axes, .. } => axes.iter().map(CVec::norm).sum::<f64>() / 2.0,
        other => other
            .bounding_box()
            .map(|(lo, hi)| {
                lo.iter()
                    .zip(hi.iter())
                    .map(|(l, h)| (h - l).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .unwrap_or(2.0),
    };
    let mut s_values = vec![1.0, (0.25 * diam).clamp(1.0, 8.0), (0.5 * diam).clamp(1.0, 12.0)];
    s_values.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let s_max = s_values.iter().copied().fold(1.0f64, f64::max);
    let query_radius = WEIGHT_TAIL_RADIUS.max(s_max);
    let images = ImageSet::build(lat, context, (query_radius / 3.0).max(1.0));

    let t_of = |p: &CVec| -> Option<Vec<f64>> {
        match context {
            MetricContext::Torus { quotient, k, .. } => {
                let s = quotient.gk_scale(*k);
                Some(quotient.lattice_coords(&(*p * (1.0 / s))))
            }
            _ => None,
        }
    };

    // Seeded sample points, biased into the region where possible.
    let mut rng = ChaCha8Rng::seed_from_u64(SAMPLE_SEED ^ lat.points.len() as u64);
    let mut samples = Vec::with_capacity(SAMPLE_COUNT);
    match &lat.region {
        Region::TorusCell { offset, axes, .. } => {
            for _ in 0..SAMPLE_COUNT {
                let mut q = *offset;
                for axis in axes {
                    q = q + *axis * rng.gen::<f64>();
                }
                samples.push(q);
            }
        }
        other => {
            let (lo, hi) = other.bounding_box().unwrap_or((vec![0.0; rdim], vec![0.0; rdim]));
            for _ in 0..SAMPLE_COUNT {
                let mut q = CVec::zero(lat.ambient);
                for _try in 0..200 {
                    let xy: Vec<f64> = lo
                        .iter()
                        .zip(hi.iter())
                        .map(|(l, h)| l + (h - l) * rng.gen::<f64>())
                        .collect();
                    q = CVec::from_real(&xy);
                    if other.contains(&q, context) {
                        break;
                    }
                }
                samples.push(q);
            }
        }
    }

    let n_points = lat.points.len();
    let chunk = samples.len().div_ceil(rayon::current_num_threads().max(1));
    let results: Vec<(f64, [f64; 4])> = samples
        .par_chunks(chunk.max(1))
        .map(|qs| {
            let mut stamp = vec![u32::MAX; n_points];
            let mut min_dist = vec![0.0f64; n_points];
            let mut touched: Vec<u32> = Vec::new();
            let mut best_f = 0.0f64;
            let mut best_w = [0.0f64; 4];
            for (gen_id, q) in qs.iter().enumerate() {
                let gen_id = gen_id as u32;
                touched.clear();
                let tq = t_of(q);
                images.for_each_within(q, tq.as_deref(), query_radius, |i, dist| {
                    let owner = images.owners[i as usize] as usize;
                    if stamp[owner] != gen_id {
                        stamp[owner] = gen_id;
                        min_dist[owner] = dist;
                        touched.push(owner as u32);
                    } else if dist < min_dist[owner] {
                        min_dist[owner] = dist;
                    }
                });
                for &s in &s_values {
                    let count = touched
                        .iter()
                        .filter(|&&o| min_dist[o as usize] <= s)
                        .count();
                    best_f = best_f.max(count as f64 / s.powi(rdim as i32));
                }
                let mut w = [0.0f64; 4];
                for &o in &touched {
                    let dist = min_dist[o as usize];
                    if dist <= WEIGHT_TAIL_RADIUS {
                        let base = (-dist * dist / WEIGHT_SCALE).exp();
                        let mut dr = 1.0;
                        for slot in &mut w {
                            *slot += dr * base;
                            dr *= dist;
                        }
                    }
                }
                for (slot, x) in best_w.iter_mut().zip(w.iter()) {
                    *slot = slot.max(*x);
                }
            }
            (best_f, best_w)
        })
        .collect();

    let mut constant = 0.0f64;
    let mut sums = [0.0f64; 4];
    for (f, w) in results {
        constant = constant.max(f);
        for (slot, x) in sums.iter_mut().zip(w.iter()) {
            *slot = slot.max(*x);
        }
    }
    (constant, sums)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn brute_pairs_ok(lat: &SeparatedLattice, ctx: &MetricContext, d: f64) -> f64 {
        let mut min_d = f64::INFINITY;
        for fam in &lat.families {
            for (a, &i) in fam.iter().enumerate() {
                for &j in &fam[a + 1..] {
                    min_d = min_d.min(ctx.quotient_dist(&lat.points[i], &lat.points[j]));
                }
            }
        }
        let _ = d;
        min_d
    }

    #[test]
    fn cyclic_constant_order_two_is_four() {
        assert!((c_constant(2) - 4.0).abs() < 1e-12);
        assert!((c_constant(3) - 6.0).abs() < 1e-12);
        assert!((c_constant(4) - 8.0).abs() < 1e-12);
        assert!((c_constant(6) - 12.0).abs() < 1e-12);
    }

    #[test]
    fn trivial_disk_lattice_counts() {
        let lat = lattice_1d(1, 3.0, 10.0).expect("build");
        let mut expected = 0usize;
        for x in -10i64..=10 {
            for y in -10i64..=10 {
                if x * x + y * y <= 100 {
                    expected += 1;
                }
            }
        }
        assert_eq!(lat.points.len(), expected);
        assert_eq!(lat.families.len(), 9);
        assert!(lat.points.iter().all(|p| p.norm() <= 10.0 + 1e-9));
    }

    #[test]
    fn order_four_lattice_is_separated_under_rotation() {
        let lat = lattice_1d(4, 5.0, 60.0).expect("build");
        assert!(!lat.is_empty());
        let excl = c_constant(4) * 5.0;
        assert!(lat.points.iter().all(|p| p.norm() >= excl - 1e-9));
        // Brute-force check of all same-family pairs under all rotations.
        let rot = Complex64::from_polar(1.0, PI / 2.0);
        for fam in &lat.families {
            for (a, &i) in fam.iter().enumerate() {
                let x = lat.points[i].components()[0];
                for &j in fam[a..].iter() {
                    let y = lat.points[j].components()[0];
                    let mut img = y;
                    for power in 0..4 {
                        if i != j || power > 0 {
                            assert!(
                                (x - img).norm() >= 5.0 - 1e-9,
                                "pair ({i},{j}) power {power} too close"
                            );
                        }
                        img *= rot;
                    }
                }
            }
        }
        assert!(lat.families.len() <= 25 * 8);
    }

    #[test]
    fn lattice_1d_rejects_bad_arguments() {
        assert!(matches!(
            lattice_1d(0, 3.0, 10.0),
            Err(LatticeError::InvalidCyclicOrder(0))
        ));
        assert!(matches!(
            lattice_1d(2, 0.5, 10.0),
            Err(LatticeError::InvalidSeparation(_))
        ));
        assert!(matches!(
            lattice_1d(2, 3.0, 0.5),
            Err(LatticeError::DegenerateRadius(_))
        ));
    }

    #[test]
    fn plain_unit_square_has_four_families() {
        let region = Region::BoxRegion {
            lo: vec![0.0, 0.0],
            hi: vec![1.0, 1.0],
        };
        let lat = plain_lattice(&region, 2.0).expect("build");
        assert_eq!(lat.points.len(), 4);
        assert_eq!(lat.families.len(), 4);
    }

    #[test]
    fn plain_ball_families_are_separated() {
        let region = Region::Annulus {
            dim: 1,
            inner: 0.0,
            outer: 10.0,
        };
        let lat = plain_lattice(&region, 5.0).expect("build");
        let ctx = MetricContext::Euclidean { dim: 1 };
        assert!(brute_pairs_ok(&lat, &ctx, 5.0) >= 5.0 - 1e-9);
        assert!(lat.families.len() as f64 <= lat.params.c * 25.0);
    }

    #[test]
    fn plain_empty_region_is_empty() {
        let lat = plain_lattice(&Region::Empty { dim: 2 }, 3.0).expect("build");
        assert!(lat.is_empty());
        let ctx = MetricContext::Euclidean { dim: 2 };
        let report = verify_property_p(&lat, &ctx, 3.0, 0.25);
        assert!(report.passed());
    }

    #[test]
    fn product_of_trivial_grids_multiplies_families() {
        let l = lattice_1d(1, 2.0, 5.0).expect("factor");
        let empty = empty_lattice(
            1,
            LatticeParams {
                c: 1.0,
                d: 2.0,
                separation: 2.0,
                m: 2,
                r: 0.0,
                exclusion_radius: 0.0,
            },
            Region::Empty { dim: 1 },
            Vec::new(),
            1,
        );
        let prod = lattice_product(&l, &l, &empty, &empty).expect("product");
        assert_eq!(prod.points.len(), l.points.len() * l.points.len());
        assert_eq!(prod.families.len(), 16);
        assert_eq!(prod.ambient, 2);
    }

    #[test]
    fn product_for_diagonal_involution_verifies() {
        // diag(-1,-1) on C^2 from two order-2 eigenline lattices.
        let d = 2.0;
        let radius = 12.0;
        let f = lattice_1d(2, d, radius).expect("factor");
        let excl = c_constant(2) * d;
        let b = plain_lattice(
            &Region::Annulus {
                dim: 1,
                inner: 0.0,
                outer: excl,
            },
            d,
        )
        .expect("boundary");
        let prod = lattice_product(&f, &f, &b, &b).expect("product");
        let action = presets::chart_c2_z2_diag().group().clone();
        let ctx = MetricContext::Chart(action);
        let report = verify_property_p(&prod, &ctx, d, prod.params.r / 4.0);
        assert!(report.separation_ok, "violations: {}", report.separation_violations);
        assert!(report.covering_ok, "max gap {}", report.max_covering_gap);
        assert!(report.family_bound_ok);
    }

    #[test]
    fn union_refine_with_trivial_second_is_identity() {
        let l1 = lattice_1d(2, 3.0, 20.0).expect("first");
        let region = Region::Annulus {
            dim: 1,
            inner: 0.0,
            outer: 20.0,
        };
        let l2 = plain_lattice(&region, 3.0).expect("second");
        let merged = lattice_union_refine(&l1, &l2).expect("refine");
        assert_eq!(merged.points.len(), l1.points.len());
        assert_eq!(merged.families.len(), l1.families.len());
    }

    #[test]
    fn verify_flags_coincident_points() {
        let p = CVec::one_d(Complex64::new(1.0, 0.0));
        let lat = SeparatedLattice {
            ambient: 1,
            points: vec![p, p],
            families: vec![vec![0, 1]],
            params: LatticeParams {
                c: 4.0,
                d: 2.0,
                separation: 2.0,
                m: 2,
                r: 1.0,
                exclusion_radius: 0.0,
            },
            region: Region::Empty { dim: 1 },
            excluded: Vec::new(),
            group_order: 1,
        };
        let ctx = MetricContext::Euclidean { dim: 1 };
        let report = verify_property_p(&lat, &ctx, 2.0, 0.25);
        assert!(!report.separation_ok);
        assert!(report.separation_violations >= 1);
    }

    #[test]
    fn weighted_sum_matches_gaussian_lattice_constant() {
        // For the unit grid on C with weights exp(-d^2/5), the weighted sum
        // is the constant 5*pi up to exponentially small corrections.
        let region = Region::BoxRegion {
            lo: vec![-16.0, -16.0],
            hi: vec![16.0, 16.0],
        };
        let lat = plain_lattice(&region, 1.0).expect("grid");
        let ctx = MetricContext::Euclidean { dim: 1 };
        let report = verify_property_p(&lat, &ctx, 1.0, 0.35);
        let expected = 5.0 * PI;
        assert!(
            (report.weighted_sums[0] - expected).abs() < 0.05,
            "weighted sum {} vs 5*pi = {expected}",
            report.weighted_sums[0]
        );
        assert!(report.weighted_sums[0] <= expected + 1e-6);
    }

    #[test]
    fn chart_lattice_z2_line_covers_annulus() {
        let action = presets::chart_c1_zm(2).group().clone();
        let lat = chart_lattice(&action, 1.0, 5.0, 400, 1.0).expect("build");
        assert!(lat.params.separation >= 5.0 - 1e-9);
        assert!((lat.params.r - 1.0).abs() < 1e-9);
        let ctx = MetricContext::Chart(action);
        let report = verify_property_p(&lat, &ctx, 5.0, lat.params.r / 4.0);
        assert!(report.covering_ok, "max gap {}", report.max_covering_gap);
        assert!(report.separation_ok, "violations {}", report.separation_violations);
        assert!(report.family_bound_ok);
        assert!(report.distribution_ok);
        // The covered annulus starts past the exclusion radius.
        let mut core = &lat.region;
        loop {
            match core {
                Region::Framed { inner, .. } => core = inner.as_ref(),
                Region::Clipped { base, .. } => core = base.as_ref(),
                Region::MinusTubes { base, .. } => core = base.as_ref(),
                _ => break,
            }
        }
        match core {
            Region::Annulus { inner, outer, .. } => {
                assert!(*inner >= lat.params.exclusion_radius);
                assert!(*outer > *inner);
            }
            other => panic!("unexpected region {other:?}"),
        }
    }

    #[test]
    fn chart_lattice_z4_sectors_verify() {
        let action = presets::chart_c1_zm(4).group().clone();
        let lat = chart_lattice(&action, 1.0, 5.0, 1600, 1.0).expect("build");
        let ctx = MetricContext::Chart(action);
        let report = verify_property_p(&lat, &ctx, 5.0, lat.params.r / 4.0);
        assert!(report.passed(), "report: {report:?}");
    }

    #[test]
    fn chart_lattice_trivial_group_is_plain_grid() {
        let action = presets::chart_c1_zm(1).group().clone();
        let lat = chart_lattice(&action, 1.0, 3.0, 100, 0.5).expect("build");
        assert!(lat.group_order == 1);
        // Spacing in g_k units is the rescale factor, at most 1.
        let lambda = 1.0 / SQRT_2;
        assert!((lat.params.r - SQRT_2 * lambda).abs() < 1e-9);
        let ctx = MetricContext::Euclidean { dim: 1 };
        let report = verify_property_p(&lat, &ctx, 3.0, lat.params.r / 4.0);
        assert!(report.passed());
    }

    #[test]
    fn stratum_lattice_point_stratum_is_single_point() {
        let quotient = presets::square_torus_z2();
        let poset = crate::strata::torus_strata(&quotient).expect("strata");
        let point_stratum = poset
            .strata
            .iter()
            .find(|s| s.dim() == 0)
            .expect("point stratum");
        let lat = stratum_lattice(&quotient, point_stratum, 1.0, 5.0, 40).expect("build");
        assert_eq!(lat.points.len(), 1);
        assert_eq!(lat.families.len(), 1);
        let ctx = MetricContext::Torus {
            quotient,
            k: 40,
            exempt_self: point_stratum.subgroup_class.elements.clone(),
        };
        let report = verify_property_p(&lat, &ctx, 5.0, 0.25);
        assert!(report.passed(), "report: {report:?}");
    }

    #[test]
    fn stratum_lattice_torus_z2_top_verifies() {
        let quotient = presets::square_torus_z2();
        let poset = crate::strata::torus_strata(&quotient).expect("strata");
        let top = &poset.strata[poset.max_index];
        let lat = stratum_lattice(&quotient, top, 1.0, 5.0, 40).expect("build");
        assert!(lat.points.len() > 50);
        let ctx = MetricContext::Torus {
            quotient: quotient.clone(),
            k: 40,
            exempt_self: vec![quotient.group().identity_index()],
        };
        let report = verify_property_p(&lat, &ctx, 5.0, lat.params.r / 4.0);
        assert!(report.covering_ok, "max gap {}", report.max_covering_gap);
        assert!(report.separation_ok, "violations {}", report.separation_violations);
        assert!(report.family_bound_ok);
        assert!(report.distribution_ok, "constant {}", report.distribution_constant);
    }

    #[test]
    fn stratum_lattice_hex_torus_covers() {
        let quotient = presets::hex_torus_z3();
        let poset = crate::strata::torus_strata(&quotient).expect("strata");
        let top = &poset.strata[poset.max_index];
        let lat = stratum_lattice(&quotient, top, 1.0, 5.0, 40).expect("build");
        let ctx = MetricContext::Torus {
            quotient: quotient.clone(),
            k: 40,
            exempt_self: vec![quotient.group().identity_index()],
        };
        let report = verify_property_p(&lat, &ctx, 5.0, lat.params.r / 4.0);
        assert!(report.covering_ok, "max gap {}", report.max_covering_gap);
        assert!(report.separation_ok);
    }

    #[test]
    fn removing_a_point_breaks_covering() {
        let quotient = presets::square_torus_z2();
        let poset = crate::strata::torus_strata(&quotient).expect("strata");
        let top = &poset.strata[poset.max_index];
        let lat = stratum_lattice(&quotient, top, 1.0, 5.0, 40).expect("build");
        let ctx = MetricContext::Torus {
            quotient,
            k: 40,
            exempt_self: Vec::new(),
        };
        // Remove sampled points lying inside the declared region (points in
        // the exclusion collar only serve the boundary); each removal must
        // open a covering gap.
        let interior: Vec<usize> = (0..lat.points.len())
            .filter(|&i| lat.region.contains(&lat.points[i], &ctx))
            .collect();
        assert!(interior.len() > 3, "too few interior points");
        for &drop_idx in [
            interior[0],
            interior[interior.len() / 2],
            interior[interior.len() - 1],
        ]
        .iter()
        {
            let mut cut = lat.clone();
            let keep: Vec<bool> = (0..cut.points.len()).map(|i| i != drop_idx).collect();
            retain_by_flags(&mut cut, &keep);
            let report = verify_property_p(&cut, &ctx, 5.0, cut.params.r / 4.0);
            assert!(
                !report.covering_ok,
                "dropping point {drop_idx} left covering intact"
            );
        }
    }

    #[test]
    fn lattice_serialization_roundtrip() {
        let lat = lattice_1d(2, 3.0, 15.0).expect("build");
        let csv = lat.to_csv();
        assert_eq!(csv.lines().count(), lat.points.len() + 1);
        assert!(csv.lines().next().expect("header").starts_with("re0,im0"));
        let js = lat.to_json();
        assert_eq!(js["points"].as_u64().expect("points") as usize, lat.points.len());
        assert_eq!(
            js["families"].as_u64().expect("families") as usize,
            lat.families.len()
        );
        assert!(js["params"]["separation"].as_f64().expect("sep") >= 3.0);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]

            #[test]
            fn sector_lattice_families_stay_separated(
                order in 1u32..=6,
                d in 1.0f64..4.0,
                radius in 8.0f64..20.0,
            ) {
                let Ok(lat) = lattice_1d(order, d, radius) else {
                    // Degenerate radii are allowed to error out.
                    return Ok(());
                };
                let rot = Complex64::from_polar(1.0, 2.0 * PI / f64::from(order));
                for fam in &lat.families {
                    for (a, &i) in fam.iter().enumerate() {
                        let x = lat.points[i].components()[0];
                        for &j in fam[a..].iter() {
                            let y = lat.points[j].components()[0];
                            let mut img = y;
                            for power in 0..order {
                                if i != j || power > 0 {
                                    prop_assert!(
                                        (x - img).norm() >= d - 1e-9,
                                        "ord {order} pair ({i},{j}) rot {power}: {}",
                                        (x - img).norm()
                                    );
                                }
                                img *= rot;
                            }
                        }
                    }
                }
            }

            #[test]
            fn plain_lattice_residues_separate(
                d in 1.0f64..5.0,
                outer in 4.0f64..9.0,
            ) {
                let region = Region::Annulus { dim: 1, inner: 0.0, outer };
                let lat = plain_lattice(&region, d).expect("build");
                let ctx = MetricContext::Euclidean { dim: 1 };
                for fam in &lat.families {
                    for (a, &i) in fam.iter().enumerate() {
                        for &j in &fam[a + 1..] {
                            prop_assert!(
                                ctx.quotient_dist(&lat.points[i], &lat.points[j]) >= d - 1e-9
                            );
                        }
                    }
                }
            }
        }
    }
}
