//! Reference values computed outside this crate and frozen here.
//!
//! Laminate values come from the exact transfer-matrix dispersion relation
//! `tr T(λ)/2 = cos 2πη`, which involves no planewave truncation. Smooth-field
//! values come from a dense planewave solve at cutoff 64. `tests/oracle/generate.py`
//! regenerates every constant below.

use bloch_edge::edge::{band_evaluator, edge_model_at, eigenvector_at, homogenized_matrix_bottom, Side};
use bloch_edge::homogenization::{
    effective_resolvent_fiber, EffectiveBranch, EffectiveResolventSpec, ExactFiber,
};
use bloch_edge::field::{CoefficientField, PerturbationField};
use bloch_edge::perturbation::splitting_matrix;
use bloch_edge::linalg::norm_hermitian;
use bloch_edge::planewave::{assemble_fiber, PlanewaveBasis};
use bloch_edge::scenarios::{cosine_series, laminate, wide_gap_profile};
use bloch_edge::spectrum::{certify_edge, BrillouinGrid, compute_bands, fiber_eigenvalues, find_gaps};

// laminate(1, 4), equal fractions
const LAM14_ETA0: [f64; 5] = [0.0, 1.479499771259919, 2.1449332238178167, 6.428460788637497, 7.748724603749635];
const LAM14_ETA_HALF: [f64; 2] = [0.28669700622765665, 0.6141121875047768];
const LAM14_ETA_03: [f64; 4] = [0.138515301223281, 0.8895053403302633, 3.0581401083581707, 5.068109124299455];
const LAM14_EDGE_CURVATURE: f64 = 10.445037033582906;
// laminate(1, 9), fractions (1/4, 3/4)
const LAM19_ETA_HALF: [f64; 4] = [0.4444444444444446, 1.7777777777777777, 7.111111111111111, 11.11111111111111];
// 1 + 0.1 cos y
const NARROW_ETA_HALF: [f64; 4] = [0.23679944549895554, 0.2617906049218565, 2.2418881110456095, 2.24189694945075];
const NARROW_ETA0: [f64; 4] = [0.0, 0.9966578243429859, 0.9966578243429859, 3.9852942254082024];
// 1 + 1.1 cos y + 0.6 cos 2y
const WIDE: [(f64, [f64; 4]); 3] = [
    (0.0, [0.0, 0.30717376546226305, 0.824793967374851, 2.1154338746151127]),
    (-0.5, [0.07444786892285209, 0.15255648623729295, 1.1998121337278844, 1.3411419477567965]),
    (0.25, [0.025552780463569652, 0.23631240639021062, 0.9587233573745606, 1.672830026115167]),
];

fn max_rel_err(got: &[f64], want: &[f64]) -> f64 {
    want.iter().zip(got).map(|(w, g)| (g - w).abs() / w.abs().max(1.0)).fold(0.0, f64::max)
}

#[test]
fn laminate_bands_converge_to_transfer_matrix_values() {
    let mut errs = Vec::new();
    for k in [24, 48] {
        let field = laminate(&[1.0, 4.0], &[0.5, 0.5], k).unwrap();
        let basis = PlanewaveBasis::new(1, k);
        let e0 = max_rel_err(&fiber_eigenvalues(&field, &basis, &[0.0]).unwrap(), &LAM14_ETA0);
        let eh = max_rel_err(&fiber_eigenvalues(&field, &basis, &[-0.5]).unwrap(), &LAM14_ETA_HALF);
        let e3 = max_rel_err(&fiber_eigenvalues(&field, &basis, &[0.3]).unwrap(), &LAM14_ETA_03);
        errs.push(e0.max(eh).max(e3));
    }
    println!("laminate(1,4) errors K=24 {:.2e}, K=48 {:.2e}", errs[0], errs[1]);
    assert!(errs[0] < 1e-4, "{errs:?}");
    assert!(errs[1] < errs[0]);
}

#[test]
fn asymmetric_laminate_matches_transfer_matrix_values() {
    let field = laminate(&[1.0, 9.0], &[0.25, 0.75], 48).unwrap();
    let basis = PlanewaveBasis::new(1, 48);
    let err = max_rel_err(&fiber_eigenvalues(&field, &basis, &[-0.5]).unwrap(), &LAM19_ETA_HALF);
    println!("laminate(1,9) error {err:.2e}");
    assert!(err < 1e-4, "{err}");
}

#[test]
fn laminate_first_gap_and_edge_curvature() {
    let k = 24;
    let field = laminate(&[1.0, 4.0], &[0.5, 0.5], k).unwrap();
    let basis = PlanewaveBasis::new(1, k);
    let bands = compute_bands(&field, &basis, &BrillouinGrid::new(1, 65).unwrap(), 3, false).unwrap();
    let gap = find_gaps(&bands).into_iter().find(|g| g.band_below == 1).expect("first gap opens");
    println!("gap ({}, {}) vs ({}, {})", gap.lower, gap.upper, LAM14_ETA_HALF[0], LAM14_ETA_HALF[1]);
    assert!((gap.lower - LAM14_ETA_HALF[0]).abs() < 1e-5);
    assert!((gap.upper - LAM14_ETA_HALF[1]).abs() < 1e-5);

    let report = certify_edge(&field, &basis, &bands, 2, Side::Min).unwrap();
    assert!(report.simple);
    let eta = report.points[0].eta[0];
    assert!((eta.abs() - 0.5).abs() < 1e-6, "edge at {eta}");
    let model = edge_model_at(&band_evaluator(&field, &basis, 2), &report.points[0].eta, 2, Side::Min, 0.02).unwrap();
    let b = model.b_edge[(0, 0)];
    println!("edge curvature {b} vs {LAM14_EDGE_CURVATURE}");
    assert!((b - LAM14_EDGE_CURVATURE).abs() / LAM14_EDGE_CURVATURE < 1e-3);
}

#[test]
fn laminate_homogenized_bottom_is_harmonic_mean() {
    // 1/(0.5/1 + 0.5/4) = 1.6; 1/(0.25/1 + 0.75/9) = 3
    let basis = PlanewaveBasis::new(1, 32);
    for (values, fractions, want) in [([1.0, 4.0], [0.5, 0.5], 1.6), ([1.0, 9.0], [0.25, 0.75], 3.0)] {
        let a = homogenized_matrix_bottom(&laminate(&values, &fractions, 32).unwrap(), &basis).unwrap()[(0, 0)];
        // planewave truncation leaves about 1e-6 at cutoff 32
        assert!((a - want).abs() < 1e-5, "{a} vs {want}");
    }
}

#[test]
fn smooth_scalar_fields_match_dense_reference() {
    let basis = PlanewaveBasis::new(1, 16);
    let narrow = CoefficientField::scalar(&cosine_series(1.0, &[0.1], &[])).unwrap();
    let e = max_rel_err(&fiber_eigenvalues(&narrow, &basis, &[-0.5]).unwrap(), &NARROW_ETA_HALF)
        .max(max_rel_err(&fiber_eigenvalues(&narrow, &basis, &[0.0]).unwrap(), &NARROW_ETA0));
    assert!(e < 1e-10, "narrow {e}");
    // the first gap of 1 + 0.1 cos y is narrow but open
    let width = NARROW_ETA_HALF[1] - NARROW_ETA_HALF[0];
    assert!(width > 0.01 && width < 0.05);

    // min a ≈ 0.15, so the spectrum converges more slowly in the cutoff
    let wide = CoefficientField::scalar(&wide_gap_profile()).unwrap();
    let basis = PlanewaveBasis::new(1, 48);
    for (eta, want) in WIDE {
        let e = max_rel_err(&fiber_eigenvalues(&wide, &basis, &[eta]).unwrap(), &want);
        assert!(e < 1e-10, "wide at {eta}: {e}");
    }
}

#[test]
fn fiber_matrix_matches_trapezoid_quadrature() {
    // a(y) = 1 + 0.5 cos y, η = 0, K = 1: H[k][k'] = ∫ a(y) (k e^{iky})^* (k' e^{ik'y}) dy / 2π
    let field = CoefficientField::scalar(&cosine_series(1.0, &[0.5], &[])).unwrap();
    let basis = PlanewaveBasis::new(1, 1);
    let h = assemble_fiber(&field, &basis, &[0.0]).matrix;
    let n = 256;
    let ks: Vec<i32> = (0..basis.len()).map(|i| basis.index(i)[0]).collect();
    for (i, &k) in ks.iter().enumerate() {
        for (j, &kp) in ks.iter().enumerate() {
            let mut acc = num_complex::Complex64::new(0.0, 0.0);
            for s in 0..n {
                let y = std::f64::consts::TAU * s as f64 / n as f64;
                let a = 1.0 + 0.5 * y.cos();
                acc += num_complex::Complex64::from_polar(a * (k * kp) as f64, ((kp - k) as f64) * y);
            }
            acc /= n as f64;
            assert!((h[(i, j)] - acc).norm() < 1e-12, "({k},{kp}): {} vs {acc}", h[(i, j)]);
        }
    }
}

#[test]
fn free_pair_splitting_matrix_at_half() {
    // A = I, η0 = 1/2, B = cos y: the pair e^{-iy}, 1 couples through the ±1 modes of B
    // with weight (−1/2)(1/2)(1/2) = −1/8.
    let field = CoefficientField::identity(1);
    let basis = PlanewaveBasis::new(1, 4);
    let b = PerturbationField::scalar(&cosine_series(0.0, &[1.0], &[]));
    // the fiber at 1/2 is reduced to −1/2, where |k − 1/2| = 1/2 for k = 0, 1
    let vals = fiber_eigenvalues(&field, &basis, &[0.5]).unwrap();
    assert!((vals[0] - 0.25).abs() < 1e-14 && (vals[1] - 0.25).abs() < 1e-14 && vals[2] > 2.0);
    let mut vectors = bloch_edge::linalg::CMat::zeros(basis.len(), 2);
    vectors[(basis.position([0, 0]).unwrap(), 0)] = num_complex::Complex64::new(1.0, 0.0);
    vectors[(basis.position([1, 0]).unwrap(), 1)] = num_complex::Complex64::new(1.0, 0.0);
    let split = splitting_matrix(&b, &basis, &[0.5], &vectors);
    assert!((split.eta[0] + 0.5).abs() < 1e-15);
    let g = &split.g;
    assert_eq!(g.nrows(), 2);
    let mut eig: Vec<f64> = bloch_edge::linalg::eigvalsh(g).unwrap();
    eig.sort_by(f64::total_cmp);
    assert!((eig[0] + 0.125).abs() < 1e-12 && (eig[1] - 0.125).abs() < 1e-12, "{eig:?}");
    assert!(g[(0, 0)].norm() < 1e-12 && g[(1, 1)].norm() < 1e-12);
    assert!((g[(0, 1)].norm() - 0.125).abs() < 1e-12);
}

fn laminate_edge_spec(k: usize) -> (CoefficientField, PlanewaveBasis, EffectiveResolventSpec) {
    let field = laminate(&[1.0, 4.0], &[0.5, 0.5], k).unwrap();
    let basis = PlanewaveBasis::new(1, k);
    let eta = vec![-0.5];
    let model = edge_model_at(&band_evaluator(&field, &basis, 2), &eta, 2, Side::Min, 0.02).unwrap();
    let phi = eigenvector_at(&field, &basis, &eta, 2).unwrap();
    let spec = EffectiveResolventSpec { branches: vec![EffectiveBranch { eta, b: model.b_edge, phi }] };
    (field, basis, spec)
}

#[test]
fn effective_fiber_norm_is_bounded_by_multiplier_norms() {
    let (_, basis, spec) = laminate_edge_spec(12);
    // ‖M_φ‖ ≤ Σ|φ̂(m)|
    let mult: f64 = spec.branches[0].phi.iter().map(|c| c.norm()).sum();
    let vol = std::f64::consts::TAU;
    for eps in [0.2, 0.05] {
        for eta in [-0.5, -0.3, 0.0, 0.2, 0.45] {
            let s = effective_resolvent_fiber(&spec, &basis, &[eta], eps, 1.0);
            let norm = norm_hermitian(&s).unwrap();
            let bound = vol * mult * mult / (eps * eps);
            assert!(norm <= bound * (1.0 + 1e-12), "eps {eps} eta {eta}: {norm} > {bound}");
        }
    }
}

#[test]
fn doubling_kappa_lowers_every_resolvent_norm() {
    // z = λ0 − ε²κ² moves away from the spectrum; the difference S − S⁰ depends on εκ only
    let (field, basis, spec) = laminate_edge_spec(12);
    let lambda0 = fiber_eigenvalues(&field, &basis, &[-0.5]).unwrap()[1];
    let sup = |eps: f64, kappa: f64| {
        let z = lambda0 - eps * eps * kappa * kappa;
        let (mut exact, mut effective) = (0.0_f64, 0.0_f64);
        for i in 0..33 {
            let eta = [-0.5 + i as f64 / 33.0];
            let s = ExactFiber::new(&field, &basis, &eta).unwrap().resolvent(z).unwrap();
            exact = exact.max(norm_hermitian(&s).unwrap());
            effective = effective.max(norm_hermitian(&effective_resolvent_fiber(&spec, &basis, &eta, eps, kappa)).unwrap());
        }
        (exact, effective)
    };
    for eps in [0.2, 0.1, 0.05] {
        let (e1, f1) = sup(eps, 1.0);
        let (e2, f2) = sup(eps, 2.0);
        assert!(e2 < e1 && f2 < f1, "eps {eps}: exact {e1} -> {e2}, effective {f1} -> {f2}");
    }
}
