use std::f64::consts::PI;

use geophase::channels::{ReservoirSpec, ReservoirState};
use geophase::distribution::{moments, redecompose, Atom, BlockMixing, MeasureKind, PhaseDistribution};
use geophase::hilbert::{time_ordered_propagator, CMatrix, CVector, Schedule, TimeGrid};
use geophase::models::{atom_hamiltonian, atom_state, closed_system_gp, pd_moments, PhaseDampingParams};
use geophase::phase::{unwrap_near, z_functional, Trajectory};
use num_complex::Complex64;
use proptest::prelude::*;

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n)
        .map(|k| f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 })
        .sum();
    (f(a) + f(b) + inner) * h / 3.0
}

/// `Z` of a diagonal phase-damping trajectory from the closed-form connection
/// `Im<psi|psi'>/<psi|psi> = (omega/2)(|e|^2 - |g|^2)/(|g|^2 + |e|^2)`.
fn pd_z_oracle(alpha: f64, theta: f64, branch: usize) -> Complex64 {
    let w = 1.0;
    let (s, c) = ((theta / 2.0).sin(), (theta / 2.0).cos());
    let r = |t: f64| (1.0 + (1.0 - (-2.0 * alpha * t).exp()).sqrt()).sqrt();
    let mods = |t: f64| {
        let (lo, hi) = ((-alpha * t).exp() / r(t), r(t));
        if branch == 0 {
            (s * lo, c * hi)
        } else {
            (s * hi, c * lo)
        }
    };
    let connection = |t: f64| {
        let (g, e) = mods(t);
        0.5 * w * (e * e - g * g) / (g * g + e * e)
    };
    let big_t = 2.0 * PI / w;
    let integral = simpson(connection, 0.0, big_t, 200_000);
    let (g, e) = mods(big_t);
    let overlap = Complex64::from_polar(s * g, -w * big_t / 2.0) + Complex64::from_polar(c * e, w * big_t / 2.0);
    Complex64::from_polar(1.0, -integral) * overlap
}

#[test]
fn phase_damping_moments_match_independent_quadrature() {
    for &(alpha, theta) in &[(1e-3, PI / 4.0), (1e-3, PI / 2.0), (1e-2, PI / 4.0)] {
        let m = pd_moments(&PhaseDampingParams::new(1.0, alpha, theta).unwrap(), 8192).unwrap();
        let zs = [pd_z_oracle(alpha, theta, 0), pd_z_oracle(alpha, theta, 1)];
        let h1 = (zs[0] / zs[0].norm() + zs[1] / zs[1].norm()) * 0.5;
        let z1 = (zs[0] + zs[1]) * 0.5;
        assert!((m.exact.mean_gp_h - h1).norm() < 1e-6);
        assert!((m.exact.mean_phase_z() - z1 / z1.norm()).norm() < 1e-6);
        let w = 1.0 / h1.norm_sqr() - 1.0;
        assert!((m.exact.spread_w - w).abs() < 1e-6 * w.max(1e-3));
    }
}

#[test]
fn phase_damping_spread_leading_coefficient() {
    // The phases of the two atoms split by +-(4/3) pi^{3/2} sqrt(alpha/omega)
    // sin^2(theta), so W -> (16/9) pi^3 (alpha/omega) sin^4(theta).
    let alpha = 1e-4;
    let m = pd_moments(&PhaseDampingParams::new(1.0, alpha, PI / 2.0).unwrap(), 8192).unwrap();
    let leading = 16.0 / 9.0 * PI.powi(3) * alpha;
    assert!(
        (m.exact.spread_w / leading - 1.0).abs() < 0.05,
        "{}",
        m.exact.spread_w / leading
    );
}

#[test]
fn closed_system_phase_in_single_precision() {
    let grid = TimeGrid::<f32>::periods(1.0, 1.0, 1024).unwrap();
    let us = time_ordered_propagator(&Schedule::constant(atom_hamiltonian(1.0f32)), &grid).unwrap();
    for theta in [0.5f32, 1.2, 2.5] {
        let traj = Trajectory::from_evolution(grid, &us, &atom_state(theta)).unwrap();
        let expect = closed_system_gp(theta);
        let beta = unwrap_near(z_functional(&traj).unwrap().beta, expect);
        assert!((beta - expect).abs() < 2e-3, "theta {theta}: {beta} vs {expect}");
    }
}

fn givens(dim: usize, i: usize, j: usize, a: f64) -> CMatrix<f64> {
    let mut m = CMatrix::identity(dim);
    m[(i, i)] = Complex64::new(a.cos(), 0.0);
    m[(j, j)] = Complex64::new(a.cos(), 0.0);
    m[(i, j)] = Complex64::new(-a.sin(), 0.0);
    m[(j, i)] = Complex64::new(a.sin(), 0.0);
    m
}

proptest! {
    #[test]
    fn redecomposition_preserves_reservoir_state(
        w in prop::collection::vec(0.05f64..1.0, 3),
        angles in prop::collection::vec(-PI..PI, 3),
        phase in -PI..PI,
    ) {
        let total: f64 = w.iter().sum();
        let states = (0..3)
            .map(|i| ReservoirState {
                weight: w[i] / total,
                state: CVector::basis(4, i),
                energy: 0.5,
            })
            .chain(std::iter::once(ReservoirState { weight: 0.0, state: CVector::basis(4, 3), energy: 2.0 }))
            .collect();
        let res = ReservoirSpec::new(states).unwrap();
        let mut v = &(&givens(3, 0, 1, angles[0]) * &givens(3, 1, 2, angles[1])) * &givens(3, 0, 2, angles[2]);
        v[(0, 0)] *= Complex64::from_polar(1.0, phase);
        v[(0, 1)] *= Complex64::from_polar(1.0, phase);
        v[(0, 2)] *= Complex64::from_polar(1.0, phase);
        let new = redecompose(&res, &[BlockMixing { block: 0, mixing: v }]).unwrap();
        prop_assert!(new.density_matrix().distance(&res.density_matrix()) < 1e-12);
        let wsum: f64 = new.states().iter().map(|s| s.weight).sum();
        prop_assert!((wsum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotating_all_atoms_shifts_mean_phases(
        raw in prop::collection::vec((0.05f64..1.0, -PI..PI, 0.2f64..1.5), 1..5),
        shift in -PI..PI,
    ) {
        let total: f64 = raw.iter().map(|r| r.0).sum();
        let make = |extra: f64| {
            PhaseDistribution::new(
                MeasureKind::Z,
                raw.iter().map(|&(w, p, m)| Atom::new(w / total, Complex64::from_polar(m, p + extra))).collect(),
            )
            .unwrap()
        };
        if let (Ok(a), Ok(b)) = (moments(&make(0.0), 2), moments(&make(shift), 2)) {
            let d = geophase::phase::principal_angle(b.mean_gp_z - a.mean_gp_z - shift);
            prop_assert!(d.abs() < 1e-9);
            prop_assert!((a.spread_w - b.spread_w).abs() < 1e-9 * a.spread_w.max(1.0));
        }
    }
}
