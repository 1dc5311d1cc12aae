//! Geometric phase of a single, possibly non-unitary and non-cyclic,
//! pure-state path.
//!
//! For a sampled path `psi(t)` the complex functional is
//! `Z[psi] = D[psi] <psi(0)|psi(t)>` with the dynamic-phase factor
//! `D[psi] = exp(-i ∫ Im<psi|psi'> / <psi|psi> dt')`, and the geometric phase
//! is `beta = arg Z`. `Z` is undefined (and so is `beta`) when it vanishes.

use num_complex::Complex;
use num_traits::Zero;

use crate::error::{Error, Result};
use crate::hilbert::{CMatrix, CVector, TimeGrid};
use crate::scalar::{cis, Real, C};

/// Norm below which a trajectory state counts as zero.
pub const MIN_STATE_NORM: f64 = 1e-12;

/// Relative threshold for `|Z|` (times `||psi(0)|| ||psi(t)||`).
pub const Z_RELATIVE_THRESHOLD: f64 = 1e-9;

/// A sampled pure-state path `psi(t_k)`, one state per grid point.
#[derive(Clone, Debug)]
pub struct Trajectory<T> {
    grid: TimeGrid<T>,
    states: Vec<CVector<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn new(grid: TimeGrid<T>, states: Vec<CVector<T>>) -> Result<Self> {
        if states.len() != grid.len() {
            return Err(Error::DimensionError {
                expected: grid.len(),
                found: states.len(),
                context: "trajectory states vs grid points",
            });
        }
        let dim = states[0].dim();
        for (index, s) in states.iter().enumerate() {
            if s.dim() != dim {
                return Err(Error::DimensionError {
                    expected: dim,
                    found: s.dim(),
                    context: "trajectory state dimension",
                });
            }
            let norm = s.norm();
            if !(norm >= T::lit(MIN_STATE_NORM)) {
                return Err(Error::DegenerateTrajectory {
                    index,
                    norm: norm.to_f64_lossy(),
                });
            }
        }
        Ok(Self { grid, states })
    }

    /// `psi(t_k) = V(t_k) psi0` for a sampled evolution `V`.
    pub fn from_evolution(grid: TimeGrid<T>, evolution: &[CMatrix<T>], psi0: &CVector<T>) -> Result<Self> {
        Self::new(grid, evolution.iter().map(|v| v.apply(psi0)).collect())
    }

    /// Samples `f(t_k)` on the grid.
    pub fn from_fn(grid: TimeGrid<T>, f: impl Fn(T) -> CVector<T>) -> Result<Self> {
        Self::new(grid, grid.times().into_iter().map(f).collect())
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn states(&self) -> &[CVector<T>] {
        &self.states
    }

    pub fn initial(&self) -> &CVector<T> {
        &self.states[0]
    }

    pub fn last(&self) -> &CVector<T> {
        self.states.last().unwrap()
    }

    pub fn dim(&self) -> usize {
        self.states[0].dim()
    }

    /// Multiplies every state by `factor`.
    pub fn scaled(&self, factor: C<T>) -> Result<Self> {
        Self::new(self.grid, self.states.iter().map(|s| s.scale(factor)).collect())
    }
}

/// Quadrature for the dynamic-phase integral `∫ Im<psi|psi'>/<psi|psi> dt`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Quadrature {
    /// `sum_k arg <psi_k|psi_{k+1}>`. Second order, exact for stationary
    /// states, and gauge invariant to rounding.
    #[default]
    Connection,
    /// Trapezoid rule over `Im<psi|psi'>/<psi|psi>` with centered differences
    /// (second-order one-sided differences at the endpoints).
    CenteredTrapezoid,
}

/// `∫_0^t Im<psi|psi'> / <psi|psi> dt'`, so that `D[psi] = exp(-i * value)`.
pub fn dynamic_phase<T: Real>(traj: &Trajectory<T>) -> T {
    dynamic_phase_with(traj, Quadrature::default())
}

pub fn dynamic_phase_with<T: Real>(traj: &Trajectory<T>, quadrature: Quadrature) -> T {
    match quadrature {
        Quadrature::Connection => traj
            .states
            .windows(2)
            .fold(T::zero(), |acc, w| acc + w[0].inner(&w[1]).arg()),
        Quadrature::CenteredTrapezoid => centered_trapezoid(traj),
    }
}

fn centered_trapezoid<T: Real>(traj: &Trajectory<T>) -> T {
    let s = &traj.states;
    let n = s.len() - 1;
    let h = traj.grid.dt();
    let two_h = h + h;
    let derivative = |k: usize| -> CVector<T> {
        let lin = |terms: &[(f64, usize)], denom: T| {
            let mut acc = CVector::zeros(s[0].dim());
            for &(w, i) in terms {
                acc = &acc + &s[i].scale(Complex::new(T::lit(w) / denom, T::zero()));
            }
            acc
        };
        if n == 1 {
            lin(&[(-1.0, 0), (1.0, 1)], h)
        } else if k == 0 {
            lin(&[(-3.0, 0), (4.0, 1), (-1.0, 2)], two_h)
        } else if k == n {
            lin(&[(3.0, n), (-4.0, n - 1), (1.0, n - 2)], two_h)
        } else {
            lin(&[(-1.0, k - 1), (1.0, k + 1)], two_h)
        }
    };
    let integrand: Vec<T> = (0..=n)
        .map(|k| s[k].inner(&derivative(k)).im / s[k].norm_sqr())
        .collect();
    let interior = integrand[1..n].iter().fold(T::zero(), |a, &x| a + x);
    h * (interior + (integrand[0] + integrand[n]) * T::lit(0.5))
}

/// `Z[psi]`, the geometric phase and their ingredients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseResult<T> {
    /// `Z[psi] = D[psi] <psi(0)|psi(t)>`.
    pub z: C<T>,
    /// `arg Z` in `(-pi, pi]`.
    pub beta: T,
    /// `∫ Im<psi|psi'>/<psi|psi> dt`; `D[psi] = exp(-i dynamic_phase)`.
    pub dynamic_phase: T,
    /// `<psi(0)|psi(t)>`.
    pub overlap: C<T>,
}

/// Evaluation of `Z` that also reports whether it clears the threshold.
#[derive(Clone, Copy, Debug)]
pub struct ZEvaluation<T> {
    pub result: PhaseResult<T>,
    pub threshold: T,
}

impl<T: Real> ZEvaluation<T> {
    pub fn is_defined(&self) -> bool {
        self.result.z.norm() >= self.threshold
    }
}

/// Computes `Z` without rejecting `Z ≈ 0`.
pub fn evaluate_z<T: Real>(traj: &Trajectory<T>, quadrature: Quadrature) -> ZEvaluation<T> {
    let dyn_phase = dynamic_phase_with(traj, quadrature);
    let overlap = traj.initial().inner(traj.last());
    let z = cis(-dyn_phase) * overlap;
    let threshold = T::lit(Z_RELATIVE_THRESHOLD) * traj.initial().norm() * traj.last().norm();
    ZEvaluation {
        result: PhaseResult {
            z,
            beta: principal_angle(z.arg()),
            dynamic_phase: dyn_phase,
            overlap,
        },
        threshold,
    }
}

/// `Z[psi]` and `beta[psi]`; errors with `UndefinedGP` when `|Z|` is below
/// `1e-9 ||psi(0)|| ||psi(t)||`.
pub fn z_functional<T: Real>(traj: &Trajectory<T>) -> Result<PhaseResult<T>> {
    z_functional_with(traj, Quadrature::default())
}

pub fn z_functional_with<T: Real>(traj: &Trajectory<T>, quadrature: Quadrature) -> Result<PhaseResult<T>> {
    let eval = evaluate_z(traj, quadrature);
    if !eval.is_defined() {
        return Err(Error::UndefinedGP {
            modulus: eval.result.z.norm().to_f64_lossy(),
            threshold: eval.threshold.to_f64_lossy(),
        });
    }
    Ok(eval.result)
}

/// `psi(t_k) -> e^{i alpha(t_k)} psi(t_k)`.
pub fn gauge_transform<T: Real>(traj: &Trajectory<T>, alpha: impl Fn(T) -> T) -> Trajectory<T> {
    let states = traj
        .grid
        .times()
        .into_iter()
        .zip(&traj.states)
        .map(|(t, s)| s.scale(cis(alpha(t))))
        .collect();
    Trajectory {
        grid: traj.grid,
        states,
    }
}

/// Maps an angle to `(-pi, pi]`.
pub fn principal_angle<T: Real>(x: T) -> T {
    let tau = T::TAU();
    let mut y = x - tau * ((x + T::PI()) / tau).floor();
    // y in [-pi, pi)
    if y <= -T::PI() {
        y = y + tau;
    }
    y
}

/// The representative of `angle (mod 2 pi)` closest to `reference`.
pub fn unwrap_near<T: Real>(angle: T, reference: T) -> T {
    reference + principal_angle(angle - reference)
}

/// Continuity-preserving unwrap of a sequence (nearest branch to the
/// previous value); the first value is kept as is.
pub fn unwrap_sequence<T: Real>(angles: &[T]) -> Vec<T> {
    let mut out: Vec<T> = Vec::with_capacity(angles.len());
    for &a in angles {
        let next = match out.last() {
            Some(&prev) => unwrap_near(a, prev),
            None => a,
        };
        out.push(next);
    }
    out
}

/// Convenience: `Z` phase factor `Z/|Z|`, or zero if `Z = 0`.
pub fn unit_phase<T: Real>(z: C<T>) -> C<T> {
    let n = z.norm();
    if n.is_zero() {
        C::zero()
    } else {
        z.unscale(n)
    }
}
