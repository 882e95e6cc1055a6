//! End-to-end lattice checks on the four-dimensional chart models and a
//! mid-size torus stratum: build with the production pipeline, then verify
//! property (P) with the independent checker at full strictness.
//!
//! The chart configurations pick `r_cover` equal to the pipeline's predicted
//! folded covering radius, so the internal unit-spacing construction ships
//! unrescaled and the verification grid works at the native spacing.

use orbidiv::lattice::{chart_lattice, stratum_lattice, verify_property_p, MetricContext};
use orbidiv::presets;
use orbidiv::strata::torus_strata;

/// Covering radius predicted for folded two-complex-dimensional charts.
fn fold_radius_c2() -> f64 {
    2.5_f64.sqrt()
}

#[test]
fn diagonal_involution_chart_satisfies_property_p() {
    // diag(-1,-1) on C^2: one cyclic cover, spherical-shell exclusion, no
    // union refinement, so the full requested separation is declared.
    let action = presets::chart_c2_z2_diag().group().clone();
    let d = 5.0;
    let lat = chart_lattice(&action, fold_radius_c2(), d, 36, 1.6).expect("build");
    assert!(
        lat.params.separation >= d - 1e-9,
        "declared separation {}",
        lat.params.separation
    );
    assert!(lat.points.len() > 500, "suspiciously small: {}", lat.len());
    let ctx = MetricContext::Chart(action);
    let report = verify_property_p(&lat, &ctx, lat.params.separation, lat.params.r / 4.0);
    assert!(
        report.separation_ok,
        "{} violations, min {}",
        report.separation_violations, report.min_family_separation
    );
    assert!(
        report.covering_ok,
        "max covering gap {} over {} samples",
        report.max_covering_gap, report.covering_samples
    );
    assert!(report.covering_samples > 0, "covering was vacuous");
    assert!(report.family_bound_ok);
    assert!(
        report.distribution_ok,
        "distribution constant {} over declared {}",
        report.distribution_constant, lat.params.c
    );
}

#[test]
fn klein_chart_satisfies_property_p() {
    // Z_2 x Z_2 on C^2: three cyclic covers merged by union refinement; the
    // surviving region is the corner shell away from both singular planes.
    // Each of the two refinements may cost two units of separation, and the
    // loss is recorded on the result rather than re-normalized away.
    let action = presets::chart_c2_klein().group().clone();
    let d = 5.0;
    let lat = chart_lattice(&action, fold_radius_c2(), d, 36, 2.14).expect("build");
    assert!(
        lat.params.separation >= d - 4.0 - 1e-9,
        "declared separation {}",
        lat.params.separation
    );
    assert!(lat.points.len() > 5_000, "got {}", lat.len());
    let ctx = MetricContext::Chart(action);
    let report = verify_property_p(&lat, &ctx, lat.params.separation, lat.params.r / 4.0);
    assert!(
        report.separation_ok,
        "{} violations, min {}",
        report.separation_violations, report.min_family_separation
    );
    assert!(
        report.covering_ok,
        "max covering gap {} over {} samples",
        report.max_covering_gap, report.covering_samples
    );
    assert!(report.covering_samples > 0, "covering was vacuous");
    assert!(report.family_bound_ok);
}

#[test]
fn four_torus_stratum_lattice_scales_up() {
    let quotient = presets::square_4torus_z2();
    let poset = torus_strata(&quotient).expect("strata");
    let top = &poset.strata[poset.max_index];
    let lat = stratum_lattice(&quotient, top, 1.0, 5.0, 30).expect("build");
    assert!(lat.points.len() > 20_000, "got {}", lat.len());
    let ctx = MetricContext::Torus {
        quotient: quotient.clone(),
        k: 30,
        exempt_self: vec![quotient.group().identity_index()],
    };
    let report = verify_property_p(&lat, &ctx, lat.params.separation, lat.params.r / 4.0);
    assert!(report.covering_ok, "max gap {}", report.max_covering_gap);
    assert!(
        report.separation_ok,
        "{} violations",
        report.separation_violations
    );
    assert!(report.family_bound_ok);
    assert!(report.distribution_ok);
}

#[test]
fn chart_construction_is_deterministic() {
    let action = presets::chart_c2_z2_diag().group().clone();
    let a = chart_lattice(&action, fold_radius_c2(), 5.0, 36, 1.6).expect("first");
    let b = chart_lattice(&action, fold_radius_c2(), 5.0, 36, 1.6).expect("second");
    assert_eq!(a.points.len(), b.points.len());
    assert_eq!(a.families, b.families);
    assert_eq!(
        serde_json::to_string(&a.to_json()).expect("json a"),
        serde_json::to_string(&b.to_json()).expect("json b")
    );
    assert_eq!(a.to_csv(), b.to_csv());
}
