//! Ready-made quotient geometries used across tests and the CLI.
//!
//! These are the standard flat examples: square and hexagonal tori with their
//! full rotation symmetries, the four-torus with the involution, and linear
//! chart models. Scales are chosen so the pairing is principal: `nu = 2 pi`
//! for square lattices and `nu = 2 pi / Im(tau) = 4 pi / sqrt(3)` for the
//! hexagonal one, making the symplectic area of each period cell `2 pi`.

use nalgebra::{dmatrix, DMatrix};
use num_complex::Complex64;

use crate::cvec::CVec;
use crate::geometry::{ModelChart, TorusQuotient};
use crate::group::FiniteUnitaryAction;

/// Scale for square period lattices.
pub const NU_SQUARE: f64 = 2.0 * std::f64::consts::PI;

/// Scale for the hexagonal period lattice.
pub fn nu_hex() -> f64 {
    2.0 * std::f64::consts::PI / (std::f64::consts::PI / 3.0).sin()
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn rotation_1d(angle: f64) -> DMatrix<Complex64> {
    dmatrix![Complex64::from_polar(1.0, angle)]
}

fn square_basis_1d() -> Vec<CVec> {
    vec![CVec::one_d(c(1.0, 0.0)), CVec::one_d(c(0.0, 1.0))]
}

fn hex_basis_1d() -> Vec<CVec> {
    let tau = Complex64::from_polar(1.0, std::f64::consts::PI / 3.0);
    vec![CVec::one_d(c(1.0, 0.0)), CVec::one_d(tau)]
}

/// `T^2 / Z_2`: square torus with the sign involution (4 cone points).
pub fn square_torus_z2() -> TorusQuotient {
    let g = FiniteUnitaryAction::build_group(1, &[rotation_1d(std::f64::consts::PI)])
        .expect("sign involution is unitary");
    TorusQuotient::new(1, square_basis_1d(), NU_SQUARE, g).expect("preset is valid")
}

/// `T^2 / Z_4`: square torus with the quarter rotation.
pub fn square_torus_z4() -> TorusQuotient {
    let g = FiniteUnitaryAction::build_group(1, &[rotation_1d(std::f64::consts::FRAC_PI_2)])
        .expect("quarter rotation is unitary");
    TorusQuotient::new(1, square_basis_1d(), NU_SQUARE, g).expect("preset is valid")
}

/// `T^2 / Z_3`: hexagonal torus with the third rotation.
pub fn hex_torus_z3() -> TorusQuotient {
    let g =
        FiniteUnitaryAction::build_group(1, &[rotation_1d(2.0 * std::f64::consts::PI / 3.0)])
            .expect("third rotation is unitary");
    TorusQuotient::new(1, hex_basis_1d(), nu_hex(), g).expect("preset is valid")
}

/// `T^2 / Z_6`: hexagonal torus with the sixth rotation.
pub fn hex_torus_z6() -> TorusQuotient {
    let g = FiniteUnitaryAction::build_group(1, &[rotation_1d(std::f64::consts::PI / 3.0)])
        .expect("sixth rotation is unitary");
    TorusQuotient::new(1, hex_basis_1d(), nu_hex(), g).expect("preset is valid")
}

/// `T^4 / Z_2`: product square four-torus with the global sign involution
/// (16 isolated cone points).
pub fn square_4torus_z2() -> TorusQuotient {
    let minus = dmatrix![c(-1.0, 0.0), c(0.0, 0.0); c(0.0, 0.0), c(-1.0, 0.0)];
    let g = FiniteUnitaryAction::build_group(2, &[minus]).expect("sign involution is unitary");
    let basis = vec![
        CVec::from_slice(&[c(1.0, 0.0), c(0.0, 0.0)]),
        CVec::from_slice(&[c(0.0, 1.0), c(0.0, 0.0)]),
        CVec::from_slice(&[c(0.0, 0.0), c(1.0, 0.0)]),
        CVec::from_slice(&[c(0.0, 0.0), c(0.0, 1.0)]),
    ];
    TorusQuotient::new(2, basis, NU_SQUARE, g).expect("preset is valid")
}

/// Chart `C^2 / (Z_2 x Z_2)`: independent sign flips on the two axes.
pub fn chart_c2_klein() -> ModelChart {
    let g1 = dmatrix![c(-1.0, 0.0), c(0.0, 0.0); c(0.0, 0.0), c(1.0, 0.0)];
    let g2 = dmatrix![c(1.0, 0.0), c(0.0, 0.0); c(0.0, 0.0), c(-1.0, 0.0)];
    let g = FiniteUnitaryAction::build_group(2, &[g1, g2]).expect("sign flips are unitary");
    ModelChart::new(g, NU_SQUARE).expect("preset is valid")
}

/// Chart `C^2 / Z_2`: simultaneous sign flip on both axes, the local model
/// at an isolated cone point of the four-torus involution.
pub fn chart_c2_z2_diag() -> ModelChart {
    let minus = dmatrix![c(-1.0, 0.0), c(0.0, 0.0); c(0.0, 0.0), c(-1.0, 0.0)];
    let g = FiniteUnitaryAction::build_group(2, &[minus]).expect("sign involution is unitary");
    ModelChart::new(g, NU_SQUARE).expect("preset is valid")
}

/// Chart `C / Z_m`: cyclic rotation of order `m` on the line.
pub fn chart_c1_zm(m: u32) -> ModelChart {
    assert!(m >= 1, "rotation order must be positive");
    let g = FiniteUnitaryAction::build_group(
        1,
        &[rotation_1d(2.0 * std::f64::consts::PI / f64::from(m))],
    )
    .expect("root-of-unity rotation is unitary");
    ModelChart::new(g, NU_SQUARE).expect("preset is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_group_orders() {
        assert_eq!(square_torus_z2().group().order(), 2);
        assert_eq!(square_torus_z4().group().order(), 4);
        assert_eq!(hex_torus_z3().group().order(), 3);
        assert_eq!(hex_torus_z6().group().order(), 6);
        assert_eq!(square_4torus_z2().group().order(), 2);
        assert_eq!(chart_c2_klein().group().order(), 4);
        assert_eq!(chart_c1_zm(5).group().order(), 5);
    }

    #[test]
    fn period_cells_have_symplectic_area_two_pi() {
        for q in [square_torus_z2(), hex_torus_z3(), hex_torus_z6()] {
            let area = q.nu() * q.cell_volume();
            assert!((area - 2.0 * std::f64::consts::PI).abs() < 1e-12);
        }
    }
}
