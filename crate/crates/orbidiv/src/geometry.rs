//! Flat ambient geometries: linear chart models `C^n / H` and torus
//! quotients `T^{2n} / G`.
//!
//! Both carry the rescaled Kaehler metric `g_k = k * nu * g_euc`, so distances
//! at level `k` are `sqrt(k * nu)` times Euclidean ones. The torus keeps its
//! period lattice as an explicit basis; group elements act linearly and must
//! map the lattice to itself, which pins an integer matrix per element. Those
//! integer matrices drive two exact computations: fixed loci via Smith normal
//! form, and the sign character that makes periodized sections equivariant.

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

use crate::cvec::CVec;
use crate::group::{ComplexSubspace, FiniteUnitaryAction};
use crate::linalg;

/// Lattice pairing entries must be integers within this tolerance.
pub const PAIRING_INT_TOL: f64 = 1e-9;
/// Group images of lattice vectors must be lattice vectors within this.
pub const LATTICE_PRESERVE_TOL: f64 = 1e-9;

/// Errors from geometry construction and queries.
#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("expected {expected} lattice generators, got {got}")]
    BasisCount { expected: usize, got: usize },
    #[error("lattice generators are linearly dependent over R")]
    BasisRankDeficient,
    #[error("scale nu must be positive, got {0}")]
    InvalidScale(f64),
    #[error("pairing entry ({i},{j}) = {value} is not an integer; adjust nu or the lattice")]
    PairingNotIntegral { i: usize, j: usize, value: f64 },
    #[error("pairing matrix is degenerate; the scaled form is not a polarization")]
    PairingDegenerate,
    #[error("group element {element} moves the lattice off itself (residual {residual:.3e})")]
    LatticeNotPreserved { element: usize, residual: f64 },
    #[error("group element {element} distorts the lattice pairing")]
    PairingNotPreserved { element: usize },
    #[error("group/geometry dimension mismatch: group acts on C^{group_n}, geometry is C^{geom_n}")]
    DimensionMismatch { group_n: usize, geom_n: usize },
    #[error("no equivariant sign character exists at level k = {k}")]
    CharacterObstruction { k: u32 },
    #[error("fixed locus requested for the identity element")]
    IdentityFixedLocus,
}

/// Smith normal form of an integer matrix: returns `(u, d, v)` with
/// `u * m * v = d` diagonal and `u`, `v` unimodular.
fn smith_normal_form(m: &DMatrix<i64>) -> (DMatrix<i64>, DMatrix<i64>, DMatrix<i64>) {
    let (rows, cols) = m.shape();
    let mut d = m.clone();
    let mut u = DMatrix::<i64>::identity(rows, rows);
    let mut v = DMatrix::<i64>::identity(cols, cols);
    let mut t = 0;
    while t < rows.min(cols) {
        let mut pivot: Option<(usize, usize)> = None;
        for i in t..rows {
            for j in t..cols {
                if d[(i, j)] != 0
                    && pivot.map_or(true, |(pi, pj)| d[(i, j)].abs() < d[(pi, pj)].abs())
                {
                    pivot = Some((i, j));
                }
            }
        }
        let Some((pi, pj)) = pivot else { break };
        d.swap_rows(t, pi);
        u.swap_rows(t, pi);
        d.swap_columns(t, pj);
        v.swap_columns(t, pj);

        let mut clean = true;
        for i in (t + 1)..rows {
            let q = d[(i, t)].div_euclid(d[(t, t)]);
            if q != 0 {
                for j in 0..cols {
                    d[(i, j)] -= q * d[(t, j)];
                }
                for j in 0..rows {
                    u[(i, j)] -= q * u[(t, j)];
                }
            }
            if d[(i, t)] != 0 {
                clean = false;
            }
        }
        for j in (t + 1)..cols {
            let q = d[(t, j)].div_euclid(d[(t, t)]);
            if q != 0 {
                for i in 0..rows {
                    d[(i, j)] -= q * d[(i, t)];
                }
                for i in 0..cols {
                    v[(i, j)] -= q * v[(i, t)];
                }
            }
            if d[(t, j)] != 0 {
                clean = false;
            }
        }
        if clean {
            t += 1;
        }
    }
    (u, d, v)
}

/// Sign character on the period lattice making periodized sections
/// equivariant: `value(m) = (-1)^(q_k(m) + chat . m)` where `q_k` is the
/// pairing quadratic form at level `k`.
#[derive(Clone, Debug)]
pub struct SemiCharacter {
    pairing_k: DMatrix<i64>,
    chat: Vec<u8>,
}

impl SemiCharacter {
    /// Character value (+1 or -1) on the lattice vector with coordinates `m`.
    pub fn value(&self, m: &[i64]) -> f64 {
        let r = self.pairing_k.nrows();
        let mut exponent: i64 = 0;
        for i in 0..r {
            for j in (i + 1)..r {
                exponent += m[i] * m[j] * self.pairing_k[(i, j)];
            }
            exponent += i64::from(self.chat[i]) * m[i];
        }
        if exponent.rem_euclid(2) == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Half-characteristic offsets (each 0 or 1, meaning 0 or 1/2).
    pub fn half_characteristic(&self) -> &[u8] {
        &self.chat
    }

    /// Level-scaled integer pairing matrix `k * E`.
    pub fn pairing_k(&self) -> &DMatrix<i64> {
        &self.pairing_k
    }
}

/// One connected component of a group element's fixed locus on the torus.
#[derive(Clone, Debug)]
pub struct FixedComponent {
    /// Index of the group element whose fixed set this lies in.
    pub element: usize,
    /// A point on the component.
    pub offset: CVec,
    /// Complex tangent directions (empty for isolated fixed points).
    pub directions: ComplexSubspace,
}

/// A torus quotient `T^{2n} / G = (C^n / Lambda) / G`.
#[derive(Clone, Debug)]
pub struct TorusQuotient {
    n: usize,
    nu: f64,
    basis: Vec<CVec>,
    basis_real: DMatrix<f64>,
    basis_real_inv: DMatrix<f64>,
    pairing: DMatrix<i64>,
    group: FiniteUnitaryAction,
    int_actions: Vec<DMatrix<i64>>,
    singular: Vec<FixedComponent>,
}

impl TorusQuotient {
    /// Builds the quotient, validating lattice rank, pairing integrality,
    /// and that every group element maps the lattice to itself.
    pub fn new(
        n: usize,
        basis: Vec<CVec>,
        nu: f64,
        group: FiniteUnitaryAction,
    ) -> Result<Self, GeometryError> {
        if group.dim() != n {
            return Err(GeometryError::DimensionMismatch { group_n: group.dim(), geom_n: n });
        }
        if basis.len() != 2 * n {
            return Err(GeometryError::BasisCount { expected: 2 * n, got: basis.len() });
        }
        if nu <= 0.0 {
            return Err(GeometryError::InvalidScale(nu));
        }
        let rank = 2 * n;
        let basis_real = DMatrix::<f64>::from_fn(rank, rank, |i, j| basis[j].to_real()[i]);
        let basis_real_inv =
            basis_real.clone().try_inverse().ok_or(GeometryError::BasisRankDeficient)?;

        let mut pairing = DMatrix::<i64>::zeros(rank, rank);
        for i in 0..rank {
            for j in 0..rank {
                let value = nu / (2.0 * std::f64::consts::PI) * basis[i].inner(&basis[j]).im;
                let rounded = value.round();
                if (value - rounded).abs() > PAIRING_INT_TOL {
                    return Err(GeometryError::PairingNotIntegral { i, j, value });
                }
                pairing[(i, j)] = rounded as i64;
            }
        }
        let det = pairing.map(|x| x as f64).determinant();
        if det.abs() < 0.5 {
            return Err(GeometryError::PairingDegenerate);
        }

        let mut int_actions = Vec::with_capacity(group.order());
        for (element, _) in group.elements().iter().enumerate() {
            let mut image = DMatrix::<f64>::zeros(rank, rank);
            for j in 0..rank {
                let moved = group.apply(element, &basis[j]);
                let col = moved.to_real();
                for i in 0..rank {
                    image[(i, j)] = col[i];
                }
            }
            let coeff = &basis_real_inv * &image;
            let rounded = coeff.map(|x| x.round());
            let residual = (&coeff - &rounded).amax();
            if residual > LATTICE_PRESERVE_TOL {
                return Err(GeometryError::LatticeNotPreserved { element, residual });
            }
            let a = rounded.map(|x| x as i64);
            // Unitary elements preserve the pairing; verify in exact arithmetic
            // so the character solve downstream is sound.
            if a.transpose() * &pairing * &a != pairing {
                return Err(GeometryError::PairingNotPreserved { element });
            }
            int_actions.push(a);
        }

        let mut quotient = TorusQuotient {
            n,
            nu,
            basis,
            basis_real,
            basis_real_inv,
            pairing,
            group,
            int_actions,
            singular: Vec::new(),
        };
        let mut singular = Vec::new();
        for g in 0..quotient.group.order() {
            if g == quotient.group.identity_index() {
                continue;
            }
            singular.extend(quotient.fixed_components(g)?);
        }
        quotient.singular = singular;
        Ok(quotient)
    }

    pub fn complex_dim(&self) -> usize {
        self.n
    }

    /// Symplectic scale: the form is `nu * sum dx_j ^ dy_j`.
    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// Metric rescaling factor at level `k`: `d_k = gk_scale(k) * d_euc`.
    pub fn gk_scale(&self, k: u32) -> f64 {
        (f64::from(k) * self.nu).sqrt()
    }

    pub fn group(&self) -> &FiniteUnitaryAction {
        &self.group
    }

    pub fn lattice_rank(&self) -> usize {
        2 * self.n
    }

    pub fn basis(&self) -> &[CVec] {
        &self.basis
    }

    /// Integer matrix of element `g` in the lattice basis (columns = images).
    pub fn int_action(&self, g: usize) -> &DMatrix<i64> {
        &self.int_actions[g]
    }

    /// Integer pairing `E_ij = (nu / 2 pi) Im <gamma_i, gamma_j>`.
    pub fn pairing(&self) -> &DMatrix<i64> {
        &self.pairing
    }

    /// Euclidean volume of the fundamental cell.
    pub fn cell_volume(&self) -> f64 {
        self.basis_real.determinant().abs()
    }

    /// The lattice vector with integer coordinates `m`.
    pub fn lattice_vector(&self, m: &[i64]) -> CVec {
        let mut out = CVec::zero(self.n);
        for (i, &mi) in m.iter().enumerate() {
            out = out + self.basis[i] * (mi as f64);
        }
        out
    }

    /// Real coordinates of `z` in the lattice basis.
    pub fn lattice_coords(&self, z: &CVec) -> Vec<f64> {
        let real = z.to_real();
        let v = nalgebra::DVector::<f64>::from_vec(real);
        (&self.basis_real_inv * v).iter().copied().collect()
    }

    /// Representative of `z` with basis coordinates in `[0, 1)`, plus the
    /// integer coordinates split off, so `z = rep + lattice_vector(m)`.
    pub fn reduce(&self, z: &CVec) -> (CVec, Vec<i64>) {
        let coords = self.lattice_coords(z);
        let m: Vec<i64> = coords.iter().map(|c| c.floor() as i64).collect();
        let rep = *z - self.lattice_vector(&m);
        (rep, m)
    }

    /// All lattice vectors within Euclidean distance `r` of `center`.
    pub fn lattice_points_within(&self, center: &CVec, r: f64) -> Vec<(Vec<i64>, CVec)> {
        let rank = self.lattice_rank();
        let reach = center.norm() + r;
        let mut bounds = Vec::with_capacity(rank);
        for i in 0..rank {
            let row_norm: f64 =
                (0..rank).map(|j| self.basis_real_inv[(i, j)].powi(2)).sum::<f64>().sqrt();
            bounds.push((row_norm * reach).ceil() as i64 + 1);
        }
        let mut out = Vec::new();
        let mut m = vec![0i64; rank];
        self.collect_box(&mut m, 0, &bounds, center, r, &mut out);
        out
    }

    fn collect_box(
        &self,
        m: &mut Vec<i64>,
        depth: usize,
        bounds: &[i64],
        center: &CVec,
        r: f64,
        out: &mut Vec<(Vec<i64>, CVec)>,
    ) {
        if depth == bounds.len() {
            let v = self.lattice_vector(m);
            if v.dist(center) <= r {
                out.push((m.clone(), v));
            }
            return;
        }
        for value in -bounds[depth]..=bounds[depth] {
            m[depth] = value;
            self.collect_box(m, depth + 1, bounds, center, r, out);
        }
    }

    /// Distance on the underlying torus (minimum over lattice translates).
    pub fn torus_dist(&self, x: &CVec, y: &CVec) -> f64 {
        let w = *x - *y;
        let coords = self.lattice_coords(&w);
        let base: Vec<i64> = coords.iter().map(|c| c.round() as i64).collect();
        let rank = self.lattice_rank();
        let mut best = f64::INFINITY;
        let mut offset = vec![0i64; rank];
        self.nearest_search(&mut offset, 0, &base, &w, &mut best);
        best
    }

    fn nearest_search(
        &self,
        offset: &mut Vec<i64>,
        depth: usize,
        base: &[i64],
        w: &CVec,
        best: &mut f64,
    ) {
        if depth == offset.len() {
            let m: Vec<i64> = base.iter().zip(offset.iter()).map(|(b, o)| b + o).collect();
            let d = w.dist(&self.lattice_vector(&m));
            if d < *best {
                *best = d;
            }
            return;
        }
        for value in -1..=1 {
            offset[depth] = value;
            self.nearest_search(offset, depth + 1, base, w, best);
        }
    }

    /// Distance on the quotient (minimum over the group orbit of `x`).
    pub fn quotient_dist(&self, x: &CVec, y: &CVec) -> f64 {
        (0..self.group.order())
            .map(|g| self.torus_dist(&self.group.apply(g, x), y))
            .fold(f64::INFINITY, f64::min)
    }

    /// Connected components of `Fix(g)` on the torus, via Smith normal form
    /// of the integer matrix of `g - id`.
    pub fn fixed_components(&self, g: usize) -> Result<Vec<FixedComponent>, GeometryError> {
        if g == self.group.identity_index() {
            return Err(GeometryError::IdentityFixedLocus);
        }
        Ok(self.components_of_elements(&[g]))
    }

    /// Connected components of the common fixed set of an element set.
    ///
    /// The fixed set of a set of elements equals that of the subgroup they
    /// generate, so no closure check is needed. An all-trivial input yields
    /// the whole torus as a single component.
    pub fn subgroup_fixed_components(&self, elements: &[usize]) -> Vec<FixedComponent> {
        let nontrivial: Vec<usize> = elements
            .iter()
            .copied()
            .filter(|&g| g != self.group.identity_index())
            .collect();
        if nontrivial.is_empty() {
            let full = ComplexSubspace::from_orthonormal(
                self.n,
                (0..self.n)
                    .map(|i| {
                        nalgebra::DVector::from_fn(self.n, |r, _| {
                            Complex64::from(f64::from(u8::from(r == i)))
                        })
                    })
                    .collect(),
            );
            return vec![FixedComponent {
                element: self.group.identity_index(),
                offset: CVec::zero(self.n),
                directions: full,
            }];
        }
        self.components_of_elements(&nontrivial)
    }

    /// Integer basis of the sublattice of period vectors fixed by every
    /// listed element (kernel of the stacked `A_g - I` over the integers).
    /// A trivial element set yields the standard basis.
    pub fn fixed_sublattice(&self, elements: &[usize]) -> Vec<Vec<i64>> {
        let rank = self.lattice_rank();
        let nontrivial: Vec<usize> = elements
            .iter()
            .copied()
            .filter(|&g| g != self.group.identity_index())
            .collect();
        if nontrivial.is_empty() {
            return (0..rank)
                .map(|i| (0..rank).map(|j| i64::from(i == j)).collect())
                .collect();
        }
        let rows = rank * nontrivial.len();
        let mut stacked = DMatrix::<i64>::zeros(rows, rank);
        for (b, &g) in nontrivial.iter().enumerate() {
            let block = &self.int_actions[g] - DMatrix::<i64>::identity(rank, rank);
            for i in 0..rank {
                for j in 0..rank {
                    stacked[(b * rank + i, j)] = block[(i, j)];
                }
            }
        }
        let (_, d, v) = smith_normal_form(&stacked);
        let mut basis = Vec::new();
        for j in 0..rank {
            let diag = if j < rows { d[(j, j)] } else { 0 };
            if diag == 0 {
                basis.push((0..rank).map(|i| v[(i, j)]).collect());
            }
        }
        basis
    }

    /// Solves `rho(g) x = x (mod lattice)` simultaneously for all listed
    /// nontrivial elements: offsets come from Smith normal form of the
    /// stacked integer system, tangents from the common complex kernel.
    fn components_of_elements(&self, nontrivial: &[usize]) -> Vec<FixedComponent> {
        let rank = self.lattice_rank();
        let rows = rank * nontrivial.len();
        let mut stacked = DMatrix::<i64>::zeros(rows, rank);
        for (b, &g) in nontrivial.iter().enumerate() {
            let block = &self.int_actions[g] - DMatrix::<i64>::identity(rank, rank);
            for i in 0..rank {
                for j in 0..rank {
                    stacked[(b * rank + i, j)] = block[(i, j)];
                }
            }
        }
        let (_, d, v) = smith_normal_form(&stacked);
        let mut moduli = vec![0i64; rank];
        for (j, m) in moduli.iter_mut().enumerate() {
            if j < rows {
                *m = d[(j, j)].abs();
            }
        }

        let mut cstack = DMatrix::<Complex64>::zeros(nontrivial.len() * self.n, self.n);
        for (b, &g) in nontrivial.iter().enumerate() {
            let diff = self.group.element(g) - DMatrix::<Complex64>::identity(self.n, self.n);
            cstack.view_mut((b * self.n, 0), (self.n, self.n)).copy_from(&diff);
        }
        let directions = ComplexSubspace::from_orthonormal(
            self.n,
            linalg::kernel_basis(&cstack, crate::group::FIXED_SVD_CUTOFF),
        );

        let mut components = Vec::new();
        let mut s = vec![0i64; rank];
        loop {
            // coords = sum_j v[:, j] * s_j / |d_j| over constrained columns.
            let mut coords = vec![0.0f64; rank];
            for (i, c) in coords.iter_mut().enumerate() {
                let mut acc = 0.0;
                for col in 0..rank {
                    if moduli[col] != 0 {
                        acc += v[(i, col)] as f64 * s[col] as f64 / moduli[col] as f64;
                    }
                }
                *c = acc;
            }
            let mut offset = CVec::zero(self.n);
            for (i, &c) in coords.iter().enumerate() {
                offset = offset + self.basis[i] * c;
            }
            let (offset, _) = self.reduce(&offset);
            components.push(FixedComponent {
                element: nontrivial[0],
                offset,
                directions: directions.clone(),
            });

            // Odometer over the residue ranges.
            let mut pos = 0;
            loop {
                if pos == rank {
                    return components;
                }
                if moduli[pos] == 0 {
                    pos += 1;
                    continue;
                }
                s[pos] += 1;
                if s[pos] < moduli[pos] {
                    break;
                }
                s[pos] = 0;
                pos += 1;
            }
        }
    }

    /// All fixed components of nontrivial elements (the singular set upstairs).
    pub fn singular_components(&self) -> &[FixedComponent] {
        &self.singular
    }

    /// Torus distance from `z` to one fixed component.
    ///
    /// Exact for isolated fixed points. For positive-dimensional components
    /// the minimum is taken over lattice translates in a two-cell box around
    /// `z`, which covers every candidate translate for the mildly skewed
    /// period bases this crate targets.
    pub fn dist_to_component(&self, z: &CVec, comp: &FixedComponent) -> f64 {
        if comp.directions.dim() == 0 {
            return self.torus_dist(z, &comp.offset);
        }
        let w = *z - comp.offset;
        let coords = self.lattice_coords(&w);
        let base: Vec<i64> = coords.iter().map(|c| c.round() as i64).collect();
        let rank = self.lattice_rank();
        let mut best = f64::INFINITY;
        let mut idx = vec![0i64; rank];
        self.component_search(&mut idx, 0, &base, &w, comp, &mut best);
        best
    }

    fn component_search(
        &self,
        offset: &mut Vec<i64>,
        depth: usize,
        base: &[i64],
        w: &CVec,
        comp: &FixedComponent,
        best: &mut f64,
    ) {
        if depth == offset.len() {
            let m: Vec<i64> = base.iter().zip(offset.iter()).map(|(b, o)| b + o).collect();
            let shifted = *w - self.lattice_vector(&m);
            let d = comp.directions.distance(&shifted);
            if d < *best {
                *best = d;
            }
            return;
        }
        for value in -2..=2 {
            offset[depth] = value;
            self.component_search(offset, depth + 1, base, w, comp, best);
        }
    }

    /// Torus distance from `z` to the singular set (infinite if free).
    pub fn dist_to_singular(&self, z: &CVec) -> f64 {
        self.singular
            .iter()
            .map(|c| self.dist_to_component(z, c))
            .fold(f64::INFINITY, f64::min)
    }

    /// Solves for a sign character at level `k` that every group element
    /// preserves; fails with `CharacterObstruction` when none exists.
    pub fn semicharacter(&self, k: u32) -> Result<SemiCharacter, GeometryError> {
        let rank = self.lattice_rank();
        let pairing_k = self.pairing.map(|e| e * i64::from(k));
        let q_mod2 = |m: &[i64]| -> u8 {
            let mut acc: i64 = 0;
            for i in 0..rank {
                for j in (i + 1)..rank {
                    acc += m[i] * m[j] * pairing_k[(i, j)];
                }
            }
            (acc.rem_euclid(2)) as u8
        };

        // Stack the linear conditions (A^T + I) chat = ell over F_2.
        let mut rows: Vec<Vec<u8>> = Vec::new();
        let mut rhs: Vec<u8> = Vec::new();
        for a in &self.int_actions {
            for i in 0..rank {
                let mut row = vec![0u8; rank];
                for j in 0..rank {
                    let at_plus_i = a[(i, j)] + i64::from(i == j);
                    row[j] = (at_plus_i.rem_euclid(2)) as u8;
                }
                let col: Vec<i64> = (0..rank).map(|r| a[(r, i)]).collect();
                rows.push(row);
                rhs.push(q_mod2(&col));
            }
        }

        // Gaussian elimination over F_2; free variables set to zero.
        let mut chat = vec![0u8; rank];
        let nrows = rows.len();
        let mut pivot_of_col = vec![usize::MAX; rank];
        let mut row_used = 0usize;
        for col in 0..rank {
            let Some(pr) = (row_used..nrows).find(|&r| rows[r][col] == 1) else { continue };
            rows.swap(row_used, pr);
            rhs.swap(row_used, pr);
            for r in 0..nrows {
                if r != row_used && rows[r][col] == 1 {
                    for c in 0..rank {
                        rows[r][c] ^= rows[row_used][c];
                    }
                    rhs[r] ^= rhs[row_used];
                }
            }
            pivot_of_col[col] = row_used;
            row_used += 1;
        }
        for r in 0..nrows {
            if rows[r].iter().all(|&x| x == 0) && rhs[r] == 1 {
                return Err(GeometryError::CharacterObstruction { k });
            }
        }
        for col in 0..rank {
            if pivot_of_col[col] != usize::MAX {
                chat[col] = rhs[pivot_of_col[col]];
            }
        }
        Ok(SemiCharacter { pairing_k, chat })
    }
}

/// A linear local model `C^n / H` around an isolated quotient point.
#[derive(Clone, Debug)]
pub struct ModelChart {
    nu: f64,
    group: FiniteUnitaryAction,
    singular: Vec<ComplexSubspace>,
}

impl ModelChart {
    /// Wraps a finite unitary action as a chart geometry.
    pub fn new(group: FiniteUnitaryAction, nu: f64) -> Result<Self, GeometryError> {
        if nu <= 0.0 {
            return Err(GeometryError::InvalidScale(nu));
        }
        let singular = group.singular_set();
        Ok(ModelChart { nu, group, singular })
    }

    pub fn complex_dim(&self) -> usize {
        self.group.dim()
    }

    /// Symplectic scale: the form is `nu * sum dx_j ^ dy_j`.
    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// Metric rescaling factor at level `k`: `d_k = gk_scale(k) * d_euc`.
    pub fn gk_scale(&self, k: u32) -> f64 {
        (f64::from(k) * self.nu).sqrt()
    }

    pub fn group(&self) -> &FiniteUnitaryAction {
        &self.group
    }

    /// Fixed subspaces of nontrivial elements, deduplicated.
    pub fn singular_subspaces(&self) -> &[ComplexSubspace] {
        &self.singular
    }

    /// Distance between orbits `[x]` and `[y]`.
    pub fn quotient_dist(&self, x: &CVec, y: &CVec) -> f64 {
        (0..self.group.order())
            .map(|g| self.group.apply(g, x).dist(y))
            .fold(f64::INFINITY, f64::min)
    }

    /// Euclidean distance from `z` to the singular set (infinite if free).
    pub fn dist_to_singular(&self, z: &CVec) -> f64 {
        self.singular.iter().map(|s| s.distance(z)).fold(f64::INFINITY, f64::min)
    }

    /// The group orbit of a point.
    pub fn orbit(&self, z: &CVec) -> Vec<CVec> {
        (0..self.group.order()).map(|g| self.group.apply(g, z)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use nalgebra::dmatrix;
    use rand::{Rng, SeedableRng};

    #[test]
    fn smith_normal_form_factors_correctly() {
        let m = DMatrix::<i64>::from_row_slice(3, 3, &[2, 4, 4, -6, 6, 12, 10, 4, 16]);
        let (u, d, v) = smith_normal_form(&m);
        assert_eq!(&u * &m * &v, d);
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(d[(i, j)], 0);
                }
            }
        }
        let det_u = u.map(|x| x as f64).determinant();
        let det_v = v.map(|x| x as f64).determinant();
        assert!((det_u.abs() - 1.0).abs() < 1e-9);
        assert!((det_v.abs() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn square_torus_pairing_is_principal() {
        let q = presets::square_torus_z2();
        assert_eq!(q.pairing()[(0, 1)], -1);
        assert_eq!(q.pairing()[(1, 0)], 1);
        assert_eq!(q.pairing()[(0, 0)], 0);
    }

    #[test]
    fn torus_distance_wraps_around() {
        let q = presets::square_torus_z2();
        let x = CVec::one_d(Complex64::new(0.9, 0.0));
        let origin = CVec::zero(1);
        assert!((q.torus_dist(&x, &origin) - 0.1).abs() < 1e-12);
        let corner = CVec::one_d(Complex64::new(0.95, 0.95));
        let expected = (0.05f64.powi(2) * 2.0).sqrt();
        assert!((q.torus_dist(&corner, &origin) - expected).abs() < 1e-12);
    }

    #[test]
    fn quotient_distance_uses_orbit() {
        let q = presets::square_torus_z2();
        let x = CVec::one_d(Complex64::new(0.3, 0.1));
        let y = CVec::one_d(Complex64::new(-0.3, -0.1));
        assert!(q.quotient_dist(&x, &y) < 1e-12, "points in the same orbit");
    }

    #[test]
    fn z2_square_torus_has_four_fixed_points() {
        let q = presets::square_torus_z2();
        let comps = q.fixed_components(1).unwrap();
        assert_eq!(comps.len(), 4);
        assert!(comps.iter().all(|c| c.directions.dim() == 0));
        // Half-lattice points: coordinates in {0, 1/2}^2.
        for c in &comps {
            let coords = q.lattice_coords(&c.offset);
            for x in coords {
                let frac = x - x.floor();
                assert!(
                    frac.abs() < 1e-9 || (frac - 0.5).abs() < 1e-9,
                    "unexpected fixed point coordinate {x}"
                );
            }
        }
    }

    #[test]
    fn hex_torus_fixed_point_counts() {
        let q3 = presets::hex_torus_z3();
        // Both nontrivial rotations fix exactly 3 points.
        assert_eq!(q3.fixed_components(1).unwrap().len(), 3);
        assert_eq!(q3.fixed_components(2).unwrap().len(), 3);

        let q6 = presets::hex_torus_z6();
        let by_order: Vec<(usize, usize)> = (0..6)
            .filter(|&g| g != q6.group().identity_index())
            .map(|g| (q6.group().element_order(g), q6.fixed_components(g).unwrap().len()))
            .collect();
        for (ord, count) in by_order {
            let expected = match ord {
                6 => 1,
                3 => 3,
                2 => 4,
                _ => panic!("unexpected element order {ord}"),
            };
            assert_eq!(count, expected, "order-{ord} rotation fixed points");
        }
    }

    #[test]
    fn four_torus_z2_has_sixteen_fixed_points() {
        let q = presets::square_4torus_z2();
        assert_eq!(q.fixed_components(1).unwrap().len(), 16);
    }

    #[test]
    fn lattice_points_within_matches_brute_force_count() {
        let q = presets::hex_torus_z3();
        let center = CVec::one_d(Complex64::new(0.2, 0.3));
        let pts = q.lattice_points_within(&center, 2.5);
        // Brute force over a generous box.
        let mut count = 0;
        for a in -10i64..=10 {
            for b in -10i64..=10 {
                if q.lattice_vector(&[a, b]).dist(&center) <= 2.5 {
                    count += 1;
                }
            }
        }
        assert_eq!(pts.len(), count);
    }

    #[test]
    fn semicharacter_square_torus_odd_level() {
        let q = presets::square_torus_z2();
        let chi = q.semicharacter(5).unwrap();
        // (-1)-invariance allows the plain theta character chat = 0.
        assert_eq!(chi.half_characteristic(), &[0, 0]);
        assert_eq!(chi.value(&[1, 0]), 1.0);
        assert_eq!(chi.value(&[1, 1]), -1.0, "odd level pairs the two generators");
    }

    #[test]
    fn semicharacter_hex_z6_odd_level_needs_half_characteristic() {
        let q = presets::hex_torus_z6();
        let chi = q.semicharacter(7).unwrap();
        assert_eq!(chi.half_characteristic(), &[1, 1]);
        // Invariance under the full group on a sample of lattice vectors.
        for g in 0..q.group().order() {
            let a = q.int_action(g);
            for m in [[1i64, 0], [0, 1], [1, 1], [2, 1], [-1, 3]] {
                let gm: Vec<i64> =
                    (0..2).map(|i| (0..2).map(|j| a[(i, j)] * m[j]).sum()).collect();
                assert_eq!(chi.value(&gm), chi.value(&m), "chi(g m) = chi(m) for g={g} m={m:?}");
            }
        }
    }

    #[test]
    fn semicharacter_is_a_quadratic_character() {
        // chi(m + l) = chi(m) chi(l) * (-1)^(m . E_k . l) on random vectors.
        let q = presets::hex_torus_z6();
        let chi = q.semicharacter(3).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let m: Vec<i64> = (0..2).map(|_| rng.gen_range(-6..=6)).collect();
            let l: Vec<i64> = (0..2).map(|_| rng.gen_range(-6..=6)).collect();
            let sum: Vec<i64> = m.iter().zip(&l).map(|(a, b)| a + b).collect();
            let mut cross: i64 = 0;
            for i in 0..2 {
                for j in 0..2 {
                    cross += m[i] * chi.pairing_k()[(i, j)] * l[j];
                }
            }
            let sign = if cross.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            assert_eq!(chi.value(&sum), chi.value(&m) * chi.value(&l) * sign);
        }
    }

    #[test]
    fn nu_mismatch_is_rejected() {
        // Hexagonal lattice with the square-torus scale: pairing not integral.
        let group = FiniteUnitaryAction::build_group(1, &[]).unwrap();
        let tau = Complex64::from_polar(1.0, std::f64::consts::PI / 3.0);
        let r = TorusQuotient::new(
            1,
            vec![CVec::one_d(Complex64::new(1.0, 0.0)), CVec::one_d(tau)],
            2.0 * std::f64::consts::PI,
            group,
        );
        assert!(matches!(r, Err(GeometryError::PairingNotIntegral { .. })));
    }

    #[test]
    fn lattice_preservation_is_enforced() {
        // A rotation by an angle that does not preserve the square lattice.
        let g = FiniteUnitaryAction::build_group(
            1,
            &[dmatrix![Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI / 3.0)]],
        )
        .unwrap();
        let r = TorusQuotient::new(
            1,
            vec![
                CVec::one_d(Complex64::new(1.0, 0.0)),
                CVec::one_d(Complex64::new(0.0, 1.0)),
            ],
            2.0 * std::f64::consts::PI,
            g,
        );
        assert!(matches!(r, Err(GeometryError::LatticeNotPreserved { .. })));
    }

    #[test]
    fn chart_distances() {
        let chart = presets::chart_c2_klein();
        let z = CVec::from_slice(&[Complex64::new(0.3, 0.0), Complex64::new(0.0, 0.4)]);
        // Singular set is the two axes; distance is the smaller coordinate norm.
        assert!((chart.dist_to_singular(&z) - 0.3).abs() < 1e-12);
        let w = CVec::from_slice(&[Complex64::new(-0.3, 0.0), Complex64::new(0.0, 0.4)]);
        assert!(chart.quotient_dist(&z, &w) < 1e-12, "same orbit under sign flips");
    }

    #[test]
    fn dist_to_singular_on_torus_matches_sampled_minimum() {
        let q = presets::square_torus_z2();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let z = CVec::one_d(Complex64::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)));
            let fast = q.dist_to_singular(&z);
            let mut brute = f64::INFINITY;
            for a in [0.0, 0.5] {
                for b in [0.0, 0.5] {
                    let p = CVec::one_d(Complex64::new(a, b));
                    brute = brute.min(q.torus_dist(&z, &p));
                }
            }
            assert!((fast - brute).abs() < 1e-12);
        }
    }
}
