//! Peak sections of powers of the prequantum line bundle.
//!
//! The bundle lives on a flat model: either a linear chart `C^n / H` or a
//! torus quotient `T^{2n} / G`. In the unitary gauge the curvature form is
//! `-i k omega` and the basic object is the Gaussian peak
//! `s_p(z) = exp(-(k nu / 4)(|z|^2 + |p|^2 - 2 <z, p>))`, which has modulus
//! `exp(-d_k(z, p)^2 / 4)` and is annihilated by the twisted dbar operator.
//! Torus sections are magnetic periodizations of peaks (theta sums) with the
//! sign semicharacter supplied by the quotient geometry; chart sections come
//! either plain or with a radial `C^2` cutoff. Everything is evaluated in
//! closed form: the module produces the section value, its covariant
//! derivatives, and the dbar part with norms taken in the rescaled metric
//! `g_k = k g`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde_json::{json, Value};
use thiserror::Error;

use crate::cvec::CVec;
use crate::geometry::{GeometryError, ModelChart, SemiCharacter, TorusQuotient};
use crate::group::FiniteUnitaryAction;
use crate::linalg;

/// Per-term tail threshold for periodized sums and far-away peaks.
pub const DEFAULT_TRUNCATION_TAIL: f64 = 1e-16;

/// Cutoff bump is identically one inside this fraction of its radius.
pub const BUMP_INNER: f64 = 0.5;

/// Tolerance for recognizing points identified by the group or the lattice.
const COINCIDENCE_TOL: f64 = 1e-9;

/// Errors from section construction and evaluation.
#[derive(Debug, Error)]
pub enum SectionError {
    /// A center or sample point has the wrong complex dimension.
    #[error("point has dimension {got}, domain expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    /// The requested mode does not exist on the given domain.
    #[error("section mode {mode:?} is not available on this domain")]
    ModeUnavailable { mode: SectionMode },
    /// Underlying geometry failure (semicharacter obstruction, bad scale).
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// How a peak section is completed to a section of the model space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SectionMode {
    /// Plain chart Gaussian, holomorphic for the twisted dbar operator.
    Gaussian,
    /// Chart Gaussian multiplied by a radial `C^2` bump of radius `k^{1/6}`.
    Cutoff,
    /// Magnetic lattice periodization (theta sum) on a torus quotient.
    Periodized,
}

/// The flat model space a section lives on.
#[derive(Clone, Debug)]
pub enum SectionDomain {
    /// Linear chart `C^n / H`.
    Chart(ModelChart),
    /// Torus quotient `T^{2n} / G`.
    Torus(TorusQuotient),
}

impl SectionDomain {
    /// Complex dimension of the model.
    pub fn complex_dim(&self) -> usize {
        match self {
            SectionDomain::Chart(c) => c.complex_dim(),
            SectionDomain::Torus(q) => q.complex_dim(),
        }
    }

    /// Symplectic scale `nu`.
    pub fn nu(&self) -> f64 {
        match self {
            SectionDomain::Chart(c) => c.nu(),
            SectionDomain::Torus(q) => q.nu(),
        }
    }

    /// Metric rescaling factor: `d_k = gk_scale(k) * d_euclidean`.
    pub fn gk_scale(&self, k: u32) -> f64 {
        match self {
            SectionDomain::Chart(c) => c.gk_scale(k),
            SectionDomain::Torus(q) => q.gk_scale(k),
        }
    }

    /// The acting finite group.
    pub fn group(&self) -> &FiniteUnitaryAction {
        match self {
            SectionDomain::Chart(c) => c.group(),
            SectionDomain::Torus(q) => q.group(),
        }
    }

    /// Whether `x` and `y` are the same point of the model space.
    fn same_point(&self, x: &CVec, y: &CVec) -> bool {
        match self {
            SectionDomain::Chart(_) => x.dist(y) <= COINCIDENCE_TOL * (1.0 + x.norm()),
            SectionDomain::Torus(q) => {
                let coords = q.lattice_coords(&(*x - *y));
                coords.iter().all(|c| (c - c.round()).abs() <= COINCIDENCE_TOL)
            }
        }
    }
}

impl From<ModelChart> for SectionDomain {
    fn from(c: ModelChart) -> Self {
        SectionDomain::Chart(c)
    }
}

impl From<TorusQuotient> for SectionDomain {
    fn from(q: TorusQuotient) -> Self {
        SectionDomain::Torus(q)
    }
}

/// A single Gaussian peak, before expansion into a working section.
#[derive(Clone, Debug)]
pub struct PeakSection {
    /// Peak center.
    pub center: CVec,
    /// Tensor power of the bundle.
    pub k: u32,
    /// Completion mode.
    pub mode: SectionMode,
    /// Bump radius in `g_k` units (`k^{1/6}`; unused outside cutoff mode).
    pub cutoff_radius: f64,
    /// Per-term truncation threshold for periodized sums.
    pub truncation_tail: f64,
}

/// Builds the Gaussian peak at `center`; fails if the mode and domain do not
/// match or the center has the wrong dimension.
pub fn peak_section(
    domain: &SectionDomain,
    center: &CVec,
    k: u32,
    mode: SectionMode,
) -> Result<PeakSection, SectionError> {
    let n = domain.complex_dim();
    if center.dim() != n {
        return Err(SectionError::DimensionMismatch { expected: n, got: center.dim() });
    }
    let compatible = match (domain, mode) {
        (SectionDomain::Chart(_), SectionMode::Gaussian | SectionMode::Cutoff) => true,
        (SectionDomain::Torus(_), SectionMode::Periodized) => true,
        _ => false,
    };
    if !compatible {
        return Err(SectionError::ModeUnavailable { mode });
    }
    Ok(PeakSection {
        center: *center,
        k,
        mode,
        cutoff_radius: f64::from(k).powf(1.0 / 6.0),
        truncation_tail: DEFAULT_TRUNCATION_TAIL,
    })
}

/// One weighted peak in a section expansion.
#[derive(Clone, Debug)]
pub struct SectionTerm {
    /// Peak center (exact, not reduced to a fundamental cell).
    pub center: CVec,
    /// Complex weight.
    pub weight: Complex64,
}

/// Value and first covariant derivatives of a section at a point.
#[derive(Clone, Debug)]
pub struct FieldSample {
    /// Section value in the unitary gauge.
    pub value: Complex64,
    /// Components of the covariant (1,0)-derivative (coefficients of `dz_j`).
    pub grad10: Vec<Complex64>,
    /// Components of the dbar part (coefficients of `dzbar_j`).
    pub dbar: Vec<Complex64>,
    /// Full covariant derivative norm in `g_k`.
    pub grad_norm: f64,
    /// dbar-part norm in `g_k`.
    pub dbar_norm: f64,
}

/// Plain 2-jet of the gauge representative: value, first and second
/// Wirtinger partials (no connection terms).
#[derive(Clone, Debug)]
pub struct Jet2 {
    /// Section value.
    pub value: Complex64,
    /// Partials with respect to `z_j`.
    pub dz: Vec<Complex64>,
    /// Partials with respect to `zbar_j`.
    pub dzb: Vec<Complex64>,
    /// Second partials `d^2 s / dz_i dz_j`.
    pub dzz: DMatrix<Complex64>,
    /// Mixed partials `d^2 s / dz_i dzbar_j` (row `i` is the `z` index).
    pub dzzb: DMatrix<Complex64>,
    /// Second partials `d^2 s / dzbar_i dzbar_j`.
    pub dzbzb: DMatrix<Complex64>,
}

impl Jet2 {
    fn zero(n: usize) -> Self {
        Jet2 {
            value: Complex64::ZERO,
            dz: vec![Complex64::ZERO; n],
            dzb: vec![Complex64::ZERO; n],
            dzz: DMatrix::zeros(n, n),
            dzzb: DMatrix::zeros(n, n),
            dzbzb: DMatrix::zeros(n, n),
        }
    }
}

/// Plain 1-jet of the gauge representative: value and first Wirtinger
/// partials only (the cheap path for field evaluation on large grids).
#[derive(Clone, Debug)]
pub struct Jet1 {
    /// Section value.
    pub value: Complex64,
    /// Partials with respect to `z_j`.
    pub dz: Vec<Complex64>,
    /// Partials with respect to `zbar_j`.
    pub dzb: Vec<Complex64>,
}

impl Jet1 {
    fn zero(n: usize) -> Self {
        Jet1 {
            value: Complex64::ZERO,
            dz: vec![Complex64::ZERO; n],
            dzb: vec![Complex64::ZERO; n],
        }
    }
}

/// Cached data for periodized evaluation.
#[derive(Clone, Debug)]
struct TorusData {
    chr: SemiCharacter,
    /// Inverse period basis (lattice coordinates of the `2n` unit vectors).
    binv: DMatrix<f64>,
    /// Row norms of `binv`, bounding index offsets per Euclidean distance.
    row_norms: Vec<f64>,
}

/// A finite expansion `sum_i w_i s_{p_i}` over one domain, with all peaks
/// sharing the mode, power, and truncation policy.
#[derive(Clone, Debug)]
pub struct SectionExpansion {
    domain: SectionDomain,
    k: u32,
    mode: SectionMode,
    terms: Vec<SectionTerm>,
    truncation_tail: f64,
    cutoff_radius: f64,
    torus: Option<TorusData>,
}

impl SectionExpansion {
    /// Empty expansion in the given mode.
    pub fn new(domain: SectionDomain, k: u32, mode: SectionMode) -> Result<Self, SectionError> {
        let compatible = match (&domain, mode) {
            (SectionDomain::Chart(_), SectionMode::Gaussian | SectionMode::Cutoff) => true,
            (SectionDomain::Torus(_), SectionMode::Periodized) => true,
            _ => false,
        };
        if !compatible {
            return Err(SectionError::ModeUnavailable { mode });
        }
        let torus = match &domain {
            SectionDomain::Torus(q) => {
                let chr = q.semicharacter(k)?;
                let rd = 2 * q.complex_dim();
                let mut binv = DMatrix::<f64>::zeros(rd, rd);
                for r in 0..rd {
                    let mut unit = vec![0.0; rd];
                    unit[r] = 1.0;
                    let col = q.lattice_coords(&CVec::from_real(&unit));
                    for (i, c) in col.iter().enumerate() {
                        binv[(i, r)] = *c;
                    }
                }
                let row_norms = (0..rd)
                    .map(|i| (0..rd).map(|j| binv[(i, j)].powi(2)).sum::<f64>().sqrt())
                    .collect();
                Some(TorusData { chr, binv, row_norms })
            }
            SectionDomain::Chart(_) => None,
        };
        Ok(SectionExpansion {
            cutoff_radius: f64::from(k).powf(1.0 / 6.0),
            domain,
            k,
            mode,
            terms: Vec::new(),
            truncation_tail: DEFAULT_TRUNCATION_TAIL,
            torus,
        })
    }

    /// Expansion holding the single given peak with unit weight.
    pub fn from_peak(domain: SectionDomain, peak: &PeakSection) -> Result<Self, SectionError> {
        let mut s = SectionExpansion::new(domain, peak.k, peak.mode)?;
        s.truncation_tail = peak.truncation_tail;
        s.cutoff_radius = peak.cutoff_radius;
        s.push_term(&peak.center, Complex64::ONE)?;
        Ok(s)
    }

    /// Domain the section lives on.
    pub fn domain(&self) -> &SectionDomain {
        &self.domain
    }

    /// Tensor power.
    pub fn k(&self) -> u32 {
        self.k
    }

    /// Completion mode shared by all terms.
    pub fn mode(&self) -> SectionMode {
        self.mode
    }

    /// The expansion terms, sorted by center.
    pub fn terms(&self) -> &[SectionTerm] {
        &self.terms
    }

    /// Sum of absolute weights.
    pub fn total_weight(&self) -> f64 {
        self.terms.iter().map(|t| t.weight.norm()).sum()
    }

    /// Overrides the per-term tail threshold (looser values speed up inner
    /// loops; certification should use the default).
    pub fn set_truncation_tail(&mut self, tail: f64) {
        self.truncation_tail = tail.clamp(1e-300, 1e-1);
    }

    /// Current per-term tail threshold.
    pub fn truncation_tail(&self) -> f64 {
        self.truncation_tail
    }

    /// Adds one weighted peak, keeping terms sorted by center.
    pub fn push_term(&mut self, center: &CVec, weight: Complex64) -> Result<(), SectionError> {
        let n = self.domain.complex_dim();
        if center.dim() != n {
            return Err(SectionError::DimensionMismatch { expected: n, got: center.dim() });
        }
        let pos = self
            .terms
            .partition_point(|t| t.center.lex_cmp(center) != std::cmp::Ordering::Greater);
        self.terms.insert(pos, SectionTerm { center: *center, weight });
        Ok(())
    }

    /// Adds the group average of a peak at `center`: one term `w / |H_x|`
    /// per group element at the translated center, where `H_x` is the
    /// stabilizer of `center` in the model space. Orbit points therefore
    /// carry unit total coefficient for `w = 1`.
    pub fn push_equivariant_peak(
        &mut self,
        center: &CVec,
        weight: Complex64,
    ) -> Result<(), SectionError> {
        let group = self.domain.group().clone();
        let stab = (0..group.order())
            .filter(|&g| self.domain.same_point(&group.apply(g, center), center))
            .count()
            .max(1);
        let w = weight / stab as f64;
        for g in 0..group.order() {
            let q = group.apply(g, center);
            self.push_term(&q, w)?;
        }
        Ok(())
    }

    /// Calls `visit(center, coefficient, threshold)` for every Gaussian
    /// image able to contribute at `z` above the truncation tail. The
    /// threshold is the largest admissible squared-distance exponent
    /// `kv4 * d^2` for that image, already adjusted for its weight.
    fn visit_images(&self, z: &CVec, mut visit: impl FnMut(&CVec, Complex64, f64)) {
        let kv4 = f64::from(self.k) * self.domain.nu() / 4.0;
        let ln_tail = -self.truncation_tail.ln();
        match (&self.domain, self.mode) {
            (SectionDomain::Torus(q), SectionMode::Periodized) => {
                let data = self.torus.as_ref().expect("periodized sections cache torus data");
                let rank = q.lattice_rank();
                let mut m = vec![0i64; rank];
                let mut lo = vec![0i64; rank];
                let mut hi = vec![0i64; rank];
                for t in &self.terms {
                    let thr = ln_tail + t.weight.norm().max(1e-300).ln();
                    if thr <= 0.0 {
                        continue;
                    }
                    let t_euc = (thr / kv4).sqrt();
                    let diff = (*z - t.center).to_real();
                    let mut empty = false;
                    for i in 0..rank {
                        let ti: f64 = (0..diff.len()).map(|r| data.binv[(i, r)] * diff[r]).sum();
                        let w = data.row_norms[i] * t_euc;
                        lo[i] = (ti - w).ceil() as i64;
                        hi[i] = (ti + w).floor() as i64;
                        if lo[i] > hi[i] {
                            empty = true;
                        }
                    }
                    if empty {
                        continue;
                    }
                    m.copy_from_slice(&lo);
                    'translates: loop {
                        let lam = q.lattice_vector(&m);
                        let center = t.center + lam;
                        let phase =
                            f64::from(self.k) * q.nu() / 2.0 * t.center.inner(&lam).im;
                        let coeff = t.weight
                            * data.chr.value(&m)
                            * Complex64::from_polar(1.0, phase);
                        visit(&center, coeff, thr);
                        let mut d = rank;
                        loop {
                            if d == 0 {
                                break 'translates;
                            }
                            d -= 1;
                            m[d] += 1;
                            if m[d] <= hi[d] {
                                break;
                            }
                            m[d] = lo[d];
                        }
                    }
                }
            }
            (SectionDomain::Chart(_), SectionMode::Periodized) => {
                unreachable!("periodized mode is rejected on charts at construction")
            }
            _ => {
                for t in &self.terms {
                    let thr = ln_tail + t.weight.norm().max(1e-300).ln();
                    if thr <= 0.0 {
                        continue;
                    }
                    visit(&t.center, t.weight, thr);
                }
            }
        }
    }

    /// Plain 2-jet of the gauge representative at `z`.
    pub fn evaluate_jet(&self, z: &CVec) -> Jet2 {
        let n = self.domain.complex_dim();
        debug_assert_eq!(z.dim(), n);
        let mut jet = Jet2::zero(n);
        let kv4 = f64::from(self.k) * self.domain.nu() / 4.0;
        if self.mode == SectionMode::Cutoff {
            let gamma = self.domain.gk_scale(self.k) / self.cutoff_radius;
            self.visit_images(z, |q, c, thr| {
                accumulate_cutoff(&mut jet, z, q, c, kv4, gamma, thr);
            });
        } else {
            self.visit_images(z, |q, c, thr| accumulate_gaussian(&mut jet, z, q, c, kv4, thr));
        }
        jet
    }

    /// Plain 1-jet of the gauge representative at `z` (cheaper than the
    /// full 2-jet; use for large certification and sampling grids).
    pub fn evaluate_jet1(&self, z: &CVec) -> Jet1 {
        let n = self.domain.complex_dim();
        debug_assert_eq!(z.dim(), n);
        let mut jet = Jet1::zero(n);
        let kv4 = f64::from(self.k) * self.domain.nu() / 4.0;
        if self.mode == SectionMode::Cutoff {
            let gamma = self.domain.gk_scale(self.k) / self.cutoff_radius;
            self.visit_images(z, |q, c, thr| {
                accumulate_cutoff1(&mut jet, z, q, c, kv4, gamma, thr);
            });
        } else {
            self.visit_images(z, |q, c, thr| accumulate_gaussian1(&mut jet, z, q, c, kv4, thr));
        }
        jet
    }

    /// Section value alone at `z` (cheapest path; no derivatives).
    pub fn evaluate_value(&self, z: &CVec) -> Complex64 {
        let mut value = Complex64::ZERO;
        let kv4 = f64::from(self.k) * self.domain.nu() / 4.0;
        if self.mode == SectionMode::Cutoff {
            let gamma = self.domain.gk_scale(self.k) / self.cutoff_radius;
            self.visit_images(z, |q, c, thr| {
                let u = z.dist(q).powi(2);
                if kv4 * u > thr {
                    return;
                }
                let rho = gamma * u.sqrt();
                if rho >= 1.0 {
                    return;
                }
                let (b, _, _) = bump(rho);
                let expo = Complex64::new(-kv4 * u, 2.0 * kv4 * z.inner(q).im);
                value += c * b * expo.exp();
            });
        } else {
            self.visit_images(z, |q, c, thr| {
                let u = z.dist(q).powi(2);
                if kv4 * u > thr {
                    return;
                }
                let expo = Complex64::new(-kv4 * u, 2.0 * kv4 * z.inner(q).im);
                value += c * expo.exp();
            });
        }
        value
    }

    /// Value, covariant derivatives, and `g_k` norms at `z`.
    pub fn evaluate(&self, z: &CVec) -> FieldSample {
        let jet = self.evaluate_jet1(z);
        self.covariant_parts(z, jet.value, &jet.dz, &jet.dzb)
    }

    /// Covariant first-order data extracted from a plain 2-jet.
    pub fn covariant_sample(&self, z: &CVec, jet: &Jet2) -> FieldSample {
        self.covariant_parts(z, jet.value, &jet.dz, &jet.dzb)
    }

    fn covariant_parts(
        &self,
        z: &CVec,
        value: Complex64,
        dz: &[Complex64],
        dzb: &[Complex64],
    ) -> FieldSample {
        let n = self.domain.complex_dim();
        let kv4 = f64::from(self.k) * self.domain.nu() / 4.0;
        let mut grad10 = Vec::with_capacity(n);
        let mut dbar = Vec::with_capacity(n);
        for j in 0..n {
            let zj = z[j];
            grad10.push(dz[j] - zj.conj() * kv4 * value);
            dbar.push(dzb[j] + zj * kv4 * value);
        }
        let form = 2.0 / (f64::from(self.k) * self.domain.nu());
        let g2: f64 = grad10.iter().map(|c| c.norm_sqr()).sum();
        let d2: f64 = dbar.iter().map(|c| c.norm_sqr()).sum();
        FieldSample {
            value,
            grad10,
            dbar,
            grad_norm: (form * (g2 + d2)).sqrt(),
            dbar_norm: (form * d2).sqrt(),
        }
    }

    /// `g_k` norm of the full covariant Hessian (all four index types) at
    /// `z`. Used for Lipschitz bounds on the covariant gradient.
    pub fn hessian_norm(&self, z: &CVec, jet: &Jet2) -> f64 {
        let n = self.domain.complex_dim();
        let kv4 = f64::from(self.k) * self.domain.nu() / 4.0;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let delta = if i == j { Complex64::ONE } else { Complex64::ZERO };
                let dbar_j = jet.dzb[j] + z[j] * kv4 * jet.value;
                // (1,0)(1,0) block on nabla^{1,0} s.
                let a = jet.dzz[(i, j)]
                    - z[j].conj() * kv4 * jet.dz[i]
                    - z[i].conj() * kv4 * jet.dz[j]
                    + z[i].conj() * z[j].conj() * kv4 * kv4 * jet.value;
                // (0,1)(1,0) block on nabla^{1,0} s.
                let b = jet.dzzb[(j, i)] - delta * kv4 * jet.value
                    - z[j].conj() * kv4 * jet.dzb[i]
                    + z[i] * kv4 * jet.dz[j]
                    - z[i] * z[j].conj() * kv4 * kv4 * jet.value;
                // (1,0)(0,1) block on the dbar part.
                let p = jet.dzzb[(i, j)]
                    + (delta * jet.value + z[j] * jet.dz[i]) * kv4
                    - z[i].conj() * kv4 * dbar_j;
                // (0,1)(0,1) block on the dbar part.
                let q = jet.dzbzb[(i, j)] + z[j] * kv4 * jet.dzb[i] + z[i] * kv4 * dbar_j;
                total += a.norm_sqr() + b.norm_sqr() + p.norm_sqr() + q.norm_sqr();
            }
        }
        let form = 2.0 / (f64::from(self.k) * self.domain.nu());
        form * total.sqrt()
    }

    /// `g_k` norm of the covariant derivative of the dbar part at `z`.
    pub fn dbar_gradient_norm(&self, z: &CVec, jet: &Jet2) -> f64 {
        let n = self.domain.complex_dim();
        let kv4 = f64::from(self.k) * self.domain.nu() / 4.0;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let dbar_j = jet.dzb[j] + z[j] * kv4 * jet.value;
                let p = jet.dzzb[(i, j)]
                    + (if i == j { jet.value } else { Complex64::ZERO } + z[j] * jet.dz[i]) * kv4
                    - z[i].conj() * kv4 * dbar_j;
                let q = jet.dzbzb[(i, j)] + z[j] * kv4 * jet.dzb[i] + z[i] * kv4 * dbar_j;
                total += p.norm_sqr() + q.norm_sqr();
            }
        }
        let form = 2.0 / (f64::from(self.k) * self.domain.nu());
        form * total.sqrt()
    }

    /// JSON description: mode, power, domain summary, and all terms.
    pub fn to_json(&self) -> Value {
        let mode = match self.mode {
            SectionMode::Gaussian => "gaussian",
            SectionMode::Cutoff => "cutoff",
            SectionMode::Periodized => "periodized",
        };
        let domain = match &self.domain {
            SectionDomain::Chart(c) => json!({
                "kind": "chart",
                "n": c.complex_dim(),
                "nu": c.nu(),
                "group_order": c.group().order(),
            }),
            SectionDomain::Torus(q) => json!({
                "kind": "torus",
                "n": q.complex_dim(),
                "nu": q.nu(),
                "group_order": q.group().order(),
            }),
        };
        let terms: Vec<Value> = self
            .terms
            .iter()
            .map(|t| {
                json!({
                    "center": t.center,
                    "weight_re": t.weight.re,
                    "weight_im": t.weight.im,
                })
            })
            .collect();
        json!({
            "mode": mode,
            "k": self.k,
            "cutoff_radius": self.cutoff_radius,
            "truncation_tail": self.truncation_tail,
            "domain": domain,
            "terms": terms,
            "total_weight": self.total_weight(),
        })
    }

    /// CSV dump of `|s|`, `|grad s|`, `|dbar s|` at the given points.
    pub fn field_csv(&self, points: &[CVec]) -> String {
        let n = self.domain.complex_dim();
        let mut out = String::new();
        let mut header: Vec<String> = Vec::new();
        for j in 0..n {
            header.push(format!("re_z{j}"));
            header.push(format!("im_z{j}"));
        }
        header.push("abs_s".into());
        header.push("grad_norm".into());
        header.push("dbar_norm".into());
        out.push_str(&header.join(","));
        out.push('\n');
        for z in points {
            let s = self.evaluate(z);
            let mut row: Vec<String> = Vec::new();
            for c in z.components() {
                row.push(format!("{:.17e}", c.re));
                row.push(format!("{:.17e}", c.im));
            }
            row.push(format!("{:.17e}", s.value.norm()));
            row.push(format!("{:.17e}", s.grad_norm));
            row.push(format!("{:.17e}", s.dbar_norm));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Deterministic sample grid over the model space with the given spacing
    /// in `g_k` units: the fundamental cell for tori, a box covering all
    /// peak supports for charts.
    pub fn sample_grid(&self, spacing_gk: f64) -> Vec<CVec> {
        let s = self.domain.gk_scale(self.k);
        match &self.domain {
            SectionDomain::Torus(q) => {
                let rank = q.lattice_rank();
                let counts: Vec<usize> = q
                    .basis()
                    .iter()
                    .map(|b| ((b.norm() * s / spacing_gk).ceil() as usize).max(1))
                    .collect();
                let total: usize = counts.iter().product();
                let mut out = Vec::with_capacity(total);
                let mut idx = vec![0usize; rank];
                loop {
                    let mut z = CVec::zero(q.complex_dim());
                    for (i, b) in q.basis().iter().enumerate() {
                        z = z + *b * ((idx[i] as f64 + 0.5) / counts[i] as f64);
                    }
                    out.push(z);
                    let mut d = rank;
                    loop {
                        if d == 0 {
                            return out;
                        }
                        d -= 1;
                        idx[d] += 1;
                        if idx[d] < counts[d] {
                            break;
                        }
                        idx[d] = 0;
                    }
                }
            }
            SectionDomain::Chart(c) => {
                let reach_gk = match self.mode {
                    SectionMode::Cutoff => self.cutoff_radius,
                    _ => 2.0 * (-self.truncation_tail.ln()).sqrt(),
                };
                let center_max =
                    self.terms.iter().map(|t| t.center.norm()).fold(0.0f64, f64::max);
                let r = center_max + reach_gk / s;
                let h = spacing_gk / s;
                let steps = ((2.0 * r / h).ceil() as usize).max(1);
                let rd = 2 * c.complex_dim();
                let mut out = Vec::new();
                let mut idx = vec![0usize; rd];
                let mut xy = vec![0.0f64; rd];
                loop {
                    for i in 0..rd {
                        xy[i] = -r + (idx[i] as f64 + 0.5) * (2.0 * r / steps as f64);
                    }
                    out.push(CVec::from_real(&xy));
                    let mut d = rd;
                    loop {
                        if d == 0 {
                            return out;
                        }
                        d -= 1;
                        idx[d] += 1;
                        if idx[d] < steps {
                            break;
                        }
                        idx[d] = 0;
                    }
                }
            }
        }
    }
}

/// Adds `coeff * exp(-(k nu / 4)(|z|^2 + |q|^2 - 2 <z, q>))` and its plain
/// partials to the jet; contributions below the tail threshold are skipped.
fn accumulate_gaussian(
    jet: &mut Jet2,
    z: &CVec,
    q: &CVec,
    coeff: Complex64,
    kv4: f64,
    ln_tail: f64,
) {
    let n = z.dim();
    let d2 = z.dist(q).powi(2);
    if kv4 * d2 > ln_tail {
        return;
    }
    let mut expo = Complex64::new(-kv4 * d2, 0.0);
    // Imaginary part: the magnetic phase 2 Im <z, q> in the same exponent.
    expo.im = 2.0 * kv4 * z.inner(q).im;
    let g = coeff * expo.exp();
    for i in 0..n {
        let a_i = (z[i].conj() - 2.0 * q[i].conj()) * (-kv4);
        let b_i = z[i] * (-kv4);
        jet.dz[i] += g * a_i;
        jet.dzb[i] += g * b_i;
        for j in 0..n {
            let a_j = (z[j].conj() - 2.0 * q[j].conj()) * (-kv4);
            let b_j = z[j] * (-kv4);
            jet.dzz[(i, j)] += g * a_i * a_j;
            jet.dzbzb[(i, j)] += g * b_i * b_j;
            let mixed = if i == j {
                a_i * b_j - kv4
            } else {
                a_i * b_j
            };
            jet.dzzb[(i, j)] += g * mixed;
        }
    }
    jet.value += g;
}

/// First-order variant of `accumulate_gaussian`.
fn accumulate_gaussian1(
    jet: &mut Jet1,
    z: &CVec,
    q: &CVec,
    coeff: Complex64,
    kv4: f64,
    ln_tail: f64,
) {
    let n = z.dim();
    let d2 = z.dist(q).powi(2);
    if kv4 * d2 > ln_tail {
        return;
    }
    let mut expo = Complex64::new(-kv4 * d2, 0.0);
    expo.im = 2.0 * kv4 * z.inner(q).im;
    let g = coeff * expo.exp();
    for i in 0..n {
        jet.dz[i] += g * ((z[i].conj() - 2.0 * q[i].conj()) * (-kv4));
        jet.dzb[i] += g * (z[i] * (-kv4));
    }
    jet.value += g;
}

/// Quintic bump profile: value and first two derivatives with respect to
/// the normalized radius `rho` (one below `BUMP_INNER`, zero above one).
fn bump(rho: f64) -> (f64, f64, f64) {
    if rho <= BUMP_INNER {
        (1.0, 0.0, 0.0)
    } else if rho >= 1.0 {
        (0.0, 0.0, 0.0)
    } else {
        let t = (1.0 - rho) / (1.0 - BUMP_INNER);
        let dt = -1.0 / (1.0 - BUMP_INNER);
        let b = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
        let bt = 30.0 * t * t * (1.0 - t) * (1.0 - t);
        let btt = 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t);
        (b, bt * dt, btt * dt * dt)
    }
}

/// Adds the cutoff peak `coeff * bump(d_k / CR) * gaussian` to the jet.
fn accumulate_cutoff(
    jet: &mut Jet2,
    z: &CVec,
    p: &CVec,
    coeff: Complex64,
    kv4: f64,
    gamma: f64,
    ln_tail: f64,
) {
    let n = z.dim();
    let u = z.dist(p).powi(2);
    let rho = gamma * u.sqrt();
    if rho >= 1.0 || kv4 * u > ln_tail {
        return;
    }
    let (b, bp, bpp) = bump(rho);
    if bp == 0.0 && bpp == 0.0 {
        accumulate_gaussian(jet, z, p, coeff * b, kv4, ln_tail);
        return;
    }
    let mut expo = Complex64::new(-kv4 * u, 0.0);
    expo.im = 2.0 * kv4 * z.inner(p).im;
    let g = coeff * expo.exp();
    let su = u.sqrt();
    let radial = (bpp * gamma * gamma - bp * gamma / su) / (4.0 * u);
    let b1 = bp * gamma / (2.0 * su);
    jet.value += g * b;
    for i in 0..n {
        let wi = z[i] - p[i];
        let a_i = (z[i].conj() - 2.0 * p[i].conj()) * (-kv4);
        let c_i = z[i] * (-kv4);
        let bz_i = wi.conj() * b1;
        let bzb_i = wi * b1;
        jet.dz[i] += g * (bz_i + a_i * b);
        jet.dzb[i] += g * (bzb_i + c_i * b);
        for j in 0..n {
            let wj = z[j] - p[j];
            let a_j = (z[j].conj() - 2.0 * p[j].conj()) * (-kv4);
            let c_j = z[j] * (-kv4);
            let bz_j = wj.conj() * b1;
            let bzb_j = wj * b1;
            let bzz = wi.conj() * wj.conj() * radial;
            let bzbzb = wi * wj * radial;
            let bzzb = wi.conj() * wj * radial
                + if i == j { Complex64::from(b1) } else { Complex64::ZERO };
            jet.dzz[(i, j)] += g * (bzz + bz_i * a_j + bz_j * a_i + b * a_i * a_j);
            jet.dzbzb[(i, j)] += g * (bzbzb + bzb_i * c_j + bzb_j * c_i + b * c_i * c_j);
            let mixed_g = if i == j { a_i * c_j - kv4 } else { a_i * c_j };
            jet.dzzb[(i, j)] += g * (bzzb + bz_i * c_j + bzb_j * a_i + b * mixed_g);
        }
    }
}

/// First-order variant of `accumulate_cutoff`.
fn accumulate_cutoff1(
    jet: &mut Jet1,
    z: &CVec,
    p: &CVec,
    coeff: Complex64,
    kv4: f64,
    gamma: f64,
    ln_tail: f64,
) {
    let n = z.dim();
    let u = z.dist(p).powi(2);
    let rho = gamma * u.sqrt();
    if rho >= 1.0 || kv4 * u > ln_tail {
        return;
    }
    let (b, bp, _) = bump(rho);
    if bp == 0.0 {
        accumulate_gaussian1(jet, z, p, coeff * b, kv4, ln_tail);
        return;
    }
    let mut expo = Complex64::new(-kv4 * u, 0.0);
    expo.im = 2.0 * kv4 * z.inner(p).im;
    let g = coeff * expo.exp();
    let b1 = bp * gamma / (2.0 * u.sqrt());
    jet.value += g * b;
    for i in 0..n {
        let wi = z[i] - p[i];
        let a_i = (z[i].conj() - 2.0 * p[i].conj()) * (-kv4);
        let c_i = z[i] * (-kv4);
        jet.dz[i] += g * (wi.conj() * b1 + a_i * b);
        jet.dzb[i] += g * (wi * b1 + c_i * b);
    }
}

/// Averages the peak over the acting group: `|H_x|^{-1} sum_h h^* s`.
pub fn equivariant_average(
    domain: &SectionDomain,
    peak: &PeakSection,
) -> Result<SectionExpansion, SectionError> {
    let mut s = SectionExpansion::new(domain.clone(), peak.k, peak.mode)?;
    s.truncation_tail = peak.truncation_tail;
    s.cutoff_radius = peak.cutoff_radius;
    s.push_equivariant_peak(&peak.center, Complex64::ONE)?;
    Ok(s)
}

/// Maximum over a sample grid and all group elements of
/// `|s(g z) - s(z)|`: the equivariance defect with the canonical unitary
/// lift (which carries no extra phase on linear models).
pub fn pullback_check(section: &SectionExpansion, spacing_gk: f64) -> f64 {
    let group = section.domain().group();
    let grid = section.sample_grid(spacing_gk);
    let mut defect = 0.0f64;
    for z in &grid {
        let here = section.evaluate_jet(z).value;
        for g in 0..group.order() {
            if g == group.identity_index() {
                continue;
            }
            let moved = section.evaluate_jet(&group.apply(g, z)).value;
            let d = (moved - here).norm();
            if d > defect {
                defect = d;
            }
        }
    }
    defect
}

/// Sup norms `[ |s|, |grad s|, |dbar s|, |grad dbar s| ]` over a grid of
/// the given spacing (in `g_k` units).
pub fn sup_norms(section: &SectionExpansion, spacing_gk: f64) -> [f64; 4] {
    use rayon::prelude::*;
    let grid = section.sample_grid(spacing_gk);
    grid.par_iter()
        .map(|z| {
            let jet = section.evaluate_jet(z);
            let s = section.covariant_sample(z, &jet);
            let nd = section.dbar_gradient_norm(z, &jet);
            [s.value.norm(), s.grad_norm, s.dbar_norm, nd]
        })
        .reduce(
            || [0.0; 4],
            |a, b| {
                [a[0].max(b[0]), a[1].max(b[1]), a[2].max(b[2]), a[3].max(b[3])]
            },
        )
}

/// One row of an asymptotic profile table.
#[derive(Clone, Debug)]
pub struct ProfileRow {
    /// Tensor power.
    pub k: u32,
    /// Measured sup norms `[ |s|, |grad s|, |dbar s|, |grad dbar s| ]`.
    pub sup: [f64; 4],
}

/// Measured sup norms across powers with fitted log-log decay exponents.
#[derive(Clone, Debug)]
pub struct ProfileTable {
    /// Per-power measurements.
    pub rows: Vec<ProfileRow>,
    /// Least-squares slope of `log sup` against `log k`, per column.
    pub exponents: [f64; 4],
}

/// Builds the section at each power and measures its sup norms on a grid of
/// the given spacing; fits the decay exponent per column.
pub fn asymptotic_profile(
    builder: impl Fn(u32) -> Result<SectionExpansion, SectionError>,
    k_list: &[u32],
    spacing_gk: f64,
) -> Result<ProfileTable, SectionError> {
    let mut rows = Vec::with_capacity(k_list.len());
    for &k in k_list {
        let section = builder(k)?;
        rows.push(ProfileRow { k, sup: sup_norms(&section, spacing_gk) });
    }
    let mut exponents = [0.0f64; 4];
    for col in 0..4 {
        let xs: Vec<f64> = rows.iter().map(|r| f64::from(r.k).ln()).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.sup[col].max(1e-300).ln()).collect();
        exponents[col] = fit_slope(&xs, &ys);
    }
    Ok(ProfileTable { rows, exponents })
}

/// Least-squares slope of `y` against `x`.
fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Fixed generic cell offsets for base sections, in lattice coordinates.
const BASE_OFFSET_COORDS: [f64; 8] =
    [0.1923, 0.4371, 0.2817, 0.3539, 0.1187, 0.4723, 0.2291, 0.3863];

/// Group-invariant periodized section at a deterministic generic center:
/// the equivariant average of one theta peak.
pub fn invariant_base_section(
    quotient: &TorusQuotient,
    k: u32,
) -> Result<SectionExpansion, SectionError> {
    let mut center = CVec::zero(quotient.complex_dim());
    for (i, b) in quotient.basis().iter().enumerate() {
        center = center + *b * BASE_OFFSET_COORDS[i % BASE_OFFSET_COORDS.len()];
    }
    let domain = SectionDomain::Torus(quotient.clone());
    let peak = peak_section(&domain, &center, k, SectionMode::Periodized)?;
    equivariant_average(&domain, &peak)
}

/// Group-invariant periodized section built from equivariant theta peaks
/// on an irregular grid with roughly the requested spacing in `g_k` units.
/// Staggered offsets keep the centers away from symmetry loci and from
/// each other, so the sum has no wide low-amplitude dead zones: that is
/// what grid certification of a positive transversality margin needs.
pub fn dense_base_section(
    quotient: &TorusQuotient,
    k: u32,
    spacing_gk: f64,
) -> Result<SectionExpansion, SectionError> {
    let n = quotient.complex_dim();
    let scale = quotient.gk_scale(k);
    let domain = SectionDomain::Torus(quotient.clone());
    let mut s = SectionExpansion::new(domain, k, SectionMode::Periodized)?;
    let basis = quotient.basis();
    let counts: Vec<usize> = basis
        .iter()
        .map(|b| ((b.norm() * scale / spacing_gk).ceil() as usize).max(1))
        .collect();
    let mut idx = vec![0usize; basis.len()];
    let mut flat = 0usize;
    loop {
        let mut center = CVec::zero(n);
        for (i, b) in basis.iter().enumerate() {
            // Golden-ratio stagger: deterministic, irrational, and distinct
            // for every grid point and direction.
            let jitter = (0.618_033_988_749 * (flat as f64 + 1.0)
                + 0.154_7 * (i as f64 + 1.0))
                .fract();
            let frac = (idx[i] as f64 + 0.18 + 0.64 * jitter) / counts[i] as f64;
            center = center + *b * frac;
        }
        s.push_equivariant_peak(&center, Complex64::ONE)?;
        flat += 1;
        let mut d = counts.len();
        loop {
            if d == 0 {
                return Ok(s);
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < counts[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

/// Applies a unitary matrix to every term center (used by callers moving
/// sections between equivalent charts).
pub fn transform_centers(
    section: &SectionExpansion,
    u: &DMatrix<Complex64>,
) -> Result<SectionExpansion, SectionError> {
    let mut out =
        SectionExpansion::new(section.domain().clone(), section.k(), section.mode())?;
    out.truncation_tail = section.truncation_tail;
    out.cutoff_radius = section.cutoff_radius;
    for t in section.terms() {
        out.push_term(&linalg::apply(u, &t.center), t.weight)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn c64(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn chart_domain() -> SectionDomain {
        SectionDomain::Chart(presets::chart_c1_zm(2))
    }

    fn sample_points_1d() -> Vec<CVec> {
        let mut pts = Vec::new();
        for i in 0..5 {
            for j in 0..5 {
                pts.push(CVec::one_d(c64(
                    -0.21 + 0.11 * i as f64,
                    -0.17 + 0.09 * j as f64,
                )));
            }
        }
        pts
    }

    #[test]
    fn peak_value_at_center_is_one() {
        let domain = chart_domain();
        let p = CVec::one_d(c64(0.3, -0.2));
        let peak = peak_section(&domain, &p, 25, SectionMode::Gaussian).unwrap();
        let s = SectionExpansion::from_peak(domain, &peak).unwrap();
        assert!((s.evaluate(&p).value.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_modulus_matches_distance_profile() {
        let domain = chart_domain();
        let k = 11;
        let p = CVec::one_d(c64(0.15, 0.22));
        let peak = peak_section(&domain, &p, k, SectionMode::Gaussian).unwrap();
        let s = SectionExpansion::from_peak(domain.clone(), &peak).unwrap();
        let scale = domain.gk_scale(k);
        for z in sample_points_1d() {
            let dk = scale * z.dist(&p);
            let expected = (-dk * dk / 4.0).exp();
            assert!((s.evaluate(&z).value.norm() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn peak_obeys_fifth_power_decay_with_unit_constant() {
        let domain = chart_domain();
        let k = 50;
        let p = CVec::one_d(c64(0.1, 0.0));
        let peak = peak_section(&domain, &p, k, SectionMode::Gaussian).unwrap();
        let s = SectionExpansion::from_peak(domain.clone(), &peak).unwrap();
        let scale = domain.gk_scale(k);
        for z in sample_points_1d() {
            let dk = scale * z.dist(&p);
            let bound = (-dk * dk / 5.0).exp();
            assert!(s.evaluate(&z).value.norm() <= bound * (1.0 + 1e-9));
        }
    }

    #[test]
    fn plain_gaussian_is_dbar_closed() {
        let domain = chart_domain();
        let p = CVec::one_d(c64(-0.4, 0.33));
        let peak = peak_section(&domain, &p, 30, SectionMode::Gaussian).unwrap();
        let s = SectionExpansion::from_peak(domain, &peak).unwrap();
        for z in sample_points_1d() {
            assert!(s.evaluate(&z).dbar_norm < 1e-10);
        }
    }

    #[test]
    fn periodized_section_is_dbar_closed() {
        let q = presets::square_torus_z2();
        let s = invariant_base_section(&q, 9).unwrap();
        for z in sample_points_1d() {
            let f = s.evaluate(&z);
            assert!(f.dbar_norm < 1e-10 * (1.0 + f.value.norm()));
        }
    }

    #[test]
    fn gradient_vanishes_at_peak_center() {
        let domain = chart_domain();
        let p = CVec::one_d(c64(0.21, -0.11));
        let peak = peak_section(&domain, &p, 16, SectionMode::Gaussian).unwrap();
        let s = SectionExpansion::from_peak(domain, &peak).unwrap();
        let f = s.evaluate(&p);
        assert!(f.grad_norm < 1e-12);
    }

    #[test]
    fn evaluation_is_linear_in_weights() {
        let domain = chart_domain();
        let p1 = CVec::one_d(c64(0.2, 0.1));
        let p2 = CVec::one_d(c64(-0.3, 0.25));
        let (a, b) = (c64(1.3, -0.4), c64(-0.7, 2.1));
        let mut s1 = SectionExpansion::new(domain.clone(), 20, SectionMode::Gaussian).unwrap();
        s1.push_term(&p1, Complex64::ONE).unwrap();
        let mut s2 = SectionExpansion::new(domain.clone(), 20, SectionMode::Gaussian).unwrap();
        s2.push_term(&p2, Complex64::ONE).unwrap();
        let mut sc = SectionExpansion::new(domain, 20, SectionMode::Gaussian).unwrap();
        sc.push_term(&p1, a).unwrap();
        sc.push_term(&p2, b).unwrap();
        for z in sample_points_1d() {
            let lhs = sc.evaluate(&z).value;
            let rhs = a * s1.evaluate(&z).value + b * s2.evaluate(&z).value;
            assert!((lhs - rhs).norm() < 1e-14);
        }
    }

    #[test]
    fn jet_matches_finite_differences() {
        let domain = chart_domain();
        let k = 14;
        let p = CVec::one_d(c64(0.12, -0.31));
        let modes = [SectionMode::Gaussian, SectionMode::Cutoff];
        for mode in modes {
            let peak = peak_section(&domain, &p, k, mode).unwrap();
            let s = SectionExpansion::from_peak(domain.clone(), &peak).unwrap();
            // Probe inside the bump transition for cutoff mode.
            let offset = match mode {
                SectionMode::Cutoff => {
                    0.72 * peak.cutoff_radius / domain.gk_scale(k)
                }
                _ => 0.1,
            };
            let z = CVec::one_d(c64(p[0].re + offset, p[0].im + 0.3 * offset));
            let jet = s.evaluate_jet(&z);
            let h = 1e-5;
            let val = |z: &CVec| s.evaluate_jet(z).value;
            let shift = |z: &CVec, re: f64, im: f64| {
                CVec::one_d(c64(z[0].re + re, z[0].im + im))
            };
            // Wirtinger partials from central differences.
            let fx = (val(&shift(&z, h, 0.0)) - val(&shift(&z, -h, 0.0))) / (2.0 * h);
            let fy = (val(&shift(&z, 0.0, h)) - val(&shift(&z, 0.0, -h))) / (2.0 * h);
            let dz_fd = (fx - c64(0.0, 1.0) * fy) * 0.5;
            let dzb_fd = (fx + c64(0.0, 1.0) * fy) * 0.5;
            assert!(
                (jet.dz[0] - dz_fd).norm() < 2e-5 * (1.0 + jet.dz[0].norm()),
                "dz mismatch in {mode:?}"
            );
            assert!(
                (jet.dzb[0] - dzb_fd).norm() < 2e-5 * (1.0 + jet.dzb[0].norm()),
                "dzb mismatch in {mode:?}"
            );
            // Second partials from differences of analytic first partials.
            let djet = |z: &CVec| s.evaluate_jet(z);
            let gx = djet(&shift(&z, h, 0.0));
            let gmx = djet(&shift(&z, -h, 0.0));
            let gy = djet(&shift(&z, 0.0, h));
            let gmy = djet(&shift(&z, 0.0, -h));
            let dzx = (gx.dz[0] - gmx.dz[0]) / (2.0 * h);
            let dzy = (gy.dz[0] - gmy.dz[0]) / (2.0 * h);
            let dzz_fd = (dzx - c64(0.0, 1.0) * dzy) * 0.5;
            let dzzb_fd_t = (dzx + c64(0.0, 1.0) * dzy) * 0.5;
            let dbx = (gx.dzb[0] - gmx.dzb[0]) / (2.0 * h);
            let dby = (gy.dzb[0] - gmy.dzb[0]) / (2.0 * h);
            let dzbzb_fd = (dbx + c64(0.0, 1.0) * dby) * 0.5;
            assert!(
                (jet.dzz[(0, 0)] - dzz_fd).norm() < 1e-4 * (1.0 + jet.dzz[(0, 0)].norm()),
                "dzz mismatch in {mode:?}"
            );
            assert!(
                (jet.dzzb[(0, 0)] - dzzb_fd_t).norm()
                    < 1e-4 * (1.0 + jet.dzzb[(0, 0)].norm()),
                "dzzb mismatch in {mode:?}"
            );
            assert!(
                (jet.dzbzb[(0, 0)] - dzbzb_fd).norm()
                    < 1e-4 * (1.0 + jet.dzbzb[(0, 0)].norm()),
                "dzbzb mismatch in {mode:?}"
            );
        }
    }

    #[test]
    fn periodized_modulus_is_lattice_periodic() {
        for (q, k) in [
            (presets::square_torus_z2(), 3),
            (presets::square_torus_z4(), 4),
            (presets::hex_torus_z3(), 1),
            (presets::hex_torus_z6(), 5),
        ] {
            let domain = SectionDomain::Torus(q.clone());
            let p = CVec::one_d(c64(0.231, 0.377));
            let peak = peak_section(&domain, &p, k, SectionMode::Periodized).unwrap();
            let s = SectionExpansion::from_peak(domain, &peak).unwrap();
            let z = CVec::one_d(c64(0.4, 0.13));
            let v0 = s.evaluate(&z).value.norm();
            for b in q.basis() {
                let v1 = s.evaluate(&(z + *b)).value.norm();
                assert!(
                    (v0 - v1).abs() < 1e-12 * (1.0 + v0),
                    "periodicity failed at k = {k}"
                );
            }
        }
    }

    #[test]
    fn truncation_tail_change_is_negligible() {
        let q = presets::square_torus_z2();
        let domain = SectionDomain::Torus(q);
        let p = CVec::one_d(c64(0.231, 0.377));
        let peak = peak_section(&domain, &p, 40, SectionMode::Periodized).unwrap();
        let mut s = SectionExpansion::from_peak(domain, &peak).unwrap();
        let narrow = s.evaluate(&p).value;
        s.set_truncation_tail(1e-30);
        let wide = s.evaluate(&p).value;
        assert!((narrow - wide).norm() < 1e-12);
    }

    #[test]
    fn equivariant_average_of_fixed_point_is_single_peak() {
        let domain = chart_domain();
        let origin = CVec::zero(1);
        let peak = peak_section(&domain, &origin, 12, SectionMode::Gaussian).unwrap();
        let avg = equivariant_average(&domain, &peak).unwrap();
        let single = SectionExpansion::from_peak(domain, &peak).unwrap();
        for z in sample_points_1d() {
            let d = (avg.evaluate(&z).value - single.evaluate(&z).value).norm();
            assert!(d < 1e-13);
        }
    }

    #[test]
    fn equivariant_average_is_invariant() {
        let q = presets::hex_torus_z6();
        let domain = SectionDomain::Torus(q);
        let p = CVec::one_d(c64(0.231, 0.377));
        let peak = peak_section(&domain, &p, 5, SectionMode::Periodized).unwrap();
        let avg = equivariant_average(&domain, &peak).unwrap();
        assert!(pullback_check(&avg, 1.5) < 1e-9);
    }

    #[test]
    fn chart_equivariant_average_is_invariant() {
        let domain = SectionDomain::Chart(presets::chart_c1_zm(4));
        let p = CVec::one_d(c64(0.3, 0.1));
        let peak = peak_section(&domain, &p, 9, SectionMode::Gaussian).unwrap();
        let avg = equivariant_average(&domain, &peak).unwrap();
        assert!(pullback_check(&avg, 1.0) < 1e-9);
    }

    #[test]
    fn unaveraged_offcenter_peak_has_visible_defect() {
        let q = presets::square_torus_z2();
        let domain = SectionDomain::Torus(q);
        let p = CVec::one_d(c64(0.231, 0.377));
        let peak = peak_section(&domain, &p, 9, SectionMode::Periodized).unwrap();
        let s = SectionExpansion::from_peak(domain, &peak).unwrap();
        assert!(pullback_check(&s, 1.5) > 0.01);
    }

    #[test]
    fn half_period_average_reduces_to_plain_theta() {
        // -p differs from p by a lattice vector with trivial character, so
        // the two group terms reinforce and normalize back to one theta.
        let q = presets::square_torus_z2();
        let domain = SectionDomain::Torus(q);
        let p = CVec::one_d(c64(0.5, 0.0));
        let peak = peak_section(&domain, &p, 8, SectionMode::Periodized).unwrap();
        let avg = equivariant_average(&domain, &peak).unwrap();
        let plain = SectionExpansion::from_peak(domain, &peak).unwrap();
        for z in sample_points_1d() {
            let d = (avg.evaluate(&z).value - plain.evaluate(&z).value).norm();
            assert!(d < 1e-12);
        }
    }

    #[test]
    fn cutoff_dbar_concentrates_on_bump_annulus() {
        let domain = chart_domain();
        let k = 64;
        let peak = peak_section(&domain, &CVec::zero(1), k, SectionMode::Cutoff).unwrap();
        let s = SectionExpansion::from_peak(domain.clone(), &peak).unwrap();
        let scale = domain.gk_scale(k);
        // Inside the flat part of the bump the section stays holomorphic.
        let inner = CVec::one_d(c64(0.3 * peak.cutoff_radius / scale, 0.0));
        assert!(s.evaluate(&inner).dbar_norm < 1e-12);
        // On the transition annulus the defect obeys the product-rule bound
        // sup|bump'| * k^{-1/6} * gaussian(0.75 * k^{1/6}).
        let mid = CVec::one_d(c64(0.75 * peak.cutoff_radius / scale, 0.0));
        let dk = 0.75 * peak.cutoff_radius;
        let bound = 3.75 * f64::from(k).powf(-1.0 / 6.0) * (-dk * dk / 4.0).exp();
        let measured = s.evaluate(&mid).dbar_norm;
        assert!(measured > 0.0);
        assert!(measured <= bound * (1.0 + 1e-9));
    }

    #[test]
    fn theta_profile_dbar_column_is_numerically_zero() {
        let q = presets::square_torus_z2();
        let table = asymptotic_profile(
            |k| invariant_base_section(&q, k),
            &[5, 9],
            0.5,
        )
        .unwrap();
        for row in &table.rows {
            assert!(row.sup[2] < 1e-9);
            assert!(row.sup[0] > 0.1);
        }
    }

    #[test]
    fn expansion_tracks_total_weight_and_sorts_terms() {
        let domain = chart_domain();
        let mut s = SectionExpansion::new(domain, 10, SectionMode::Gaussian).unwrap();
        s.push_term(&CVec::one_d(c64(0.5, 0.0)), c64(0.0, 2.0)).unwrap();
        s.push_term(&CVec::one_d(c64(-0.5, 0.0)), c64(1.0, 0.0)).unwrap();
        assert!((s.total_weight() - 3.0).abs() < 1e-15);
        assert!(s.terms()[0].center[0].re < s.terms()[1].center[0].re);
    }

    #[test]
    fn json_roundtrip_is_deterministic() {
        let q = presets::square_torus_z2();
        let s1 = invariant_base_section(&q, 7).unwrap();
        let s2 = invariant_base_section(&q, 7).unwrap();
        assert_eq!(s1.to_json().to_string(), s2.to_json().to_string());
        let csv = s1.field_csv(&sample_points_1d());
        assert!(csv.lines().count() == sample_points_1d().len() + 1);
    }

    #[test]
    fn dimension_and_mode_mismatches_are_rejected() {
        let domain = chart_domain();
        let bad = CVec::from_slice(&[c64(0.0, 0.0), c64(1.0, 0.0)]);
        assert!(peak_section(&domain, &bad, 5, SectionMode::Gaussian).is_err());
        assert!(peak_section(&domain, &CVec::zero(1), 5, SectionMode::Periodized).is_err());
        let q = presets::square_torus_z2();
        let torus = SectionDomain::Torus(q);
        assert!(peak_section(&torus, &CVec::zero(1), 5, SectionMode::Cutoff).is_err());
    }

    #[test]
    fn first_order_and_value_paths_match_the_full_jet() {
        let q = presets::square_torus_z2();
        let mut sections = vec![invariant_base_section(&q, 9).unwrap()];
        let chart = chart_domain();
        for mode in [SectionMode::Gaussian, SectionMode::Cutoff] {
            let mut s = SectionExpansion::new(chart.clone(), 30, mode).unwrap();
            s.push_term(&CVec::one_d(c64(0.17, -0.05)), c64(0.8, 0.3)).unwrap();
            s.push_term(&CVec::one_d(c64(-0.11, 0.21)), c64(-0.4, 1.1)).unwrap();
            sections.push(s);
        }
        for s in &sections {
            let scale = s.domain().gk_scale(s.k());
            for t in 0..12 {
                let z = CVec::one_d(c64(
                    (0.83 * t as f64).sin() * 2.0 / scale,
                    (1.19 * t as f64).cos() * 2.0 / scale,
                ));
                let jet2 = s.evaluate_jet(&z);
                let jet1 = s.evaluate_jet1(&z);
                let val = s.evaluate_value(&z);
                assert!((jet2.value - jet1.value).norm() < 1e-13);
                assert!((jet2.value - val).norm() < 1e-13);
                for i in 0..z.dim() {
                    assert!((jet2.dz[i] - jet1.dz[i]).norm() < 1e-12);
                    assert!((jet2.dzb[i] - jet1.dzb[i]).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn covariant_hessian_norm_of_unit_peak_is_sqrt_n() {
        // At the peak center the only nonvanishing covariant second
        // derivative block is the curvature contribution, whose g_k norm
        // is exactly sqrt(n) for a unit Gaussian.
        for (action, n) in [(presets::chart_c1_zm(3), 1), (presets::chart_c2_klein(), 2)] {
            let domain = SectionDomain::Chart(action);
            let scale = domain.gk_scale(40);
            let coords: Vec<Complex64> = (0..n)
                .map(|i| c64(0.31 / scale + 0.2 * i as f64, -0.44 / scale))
                .collect();
            let center = CVec::from_slice(&coords);
            let mut s = SectionExpansion::new(domain, 40, SectionMode::Gaussian).unwrap();
            s.push_term(&center, Complex64::ONE).unwrap();
            let jet = s.evaluate_jet(&center);
            let measured = s.hessian_norm(&center, &jet);
            assert!(
                (measured - (n as f64).sqrt()).abs() < 1e-10,
                "hessian norm at center: {measured}"
            );
        }
    }

    #[test]
    fn dense_base_is_invariant_and_has_no_dead_zones() {
        let q = presets::square_torus_z2();
        let k = 9;
        let s = dense_base_section(&q, k, 3.0).unwrap();
        assert!(pullback_check(&s, 2.0) < 1e-9);
        // Every point of a coarse probe grid sees a healthy field value or
        // gradient: no exponentially small dead zones between the peaks.
        let mut floor = f64::INFINITY;
        for z in s.sample_grid(0.5) {
            let f = s.evaluate(&z);
            floor = floor.min(f.value.norm().max(f.grad_norm));
        }
        assert!(floor > 0.05, "dead zone floor {floor}");
    }
}
