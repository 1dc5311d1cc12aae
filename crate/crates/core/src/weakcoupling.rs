//! Second-order weak-coupling theory of the geometric phase.
//!
//! In the interaction picture `U_tilde = 1 + A + B + O(H_I^3)` with
//!
//! ```text
//! A(t) = -i ∫_0^t H_I~(t1) dt1,    B(t) = -∫_0^t dt1 ∫_0^t1 dt2 H_I~(t1) H_I~(t2)
//! ```
//!
//! When every reservoir state satisfies `<r|R_mu|r> = 0`, `<A>_r` vanishes and
//! the phase correction depends on the reservoir average `<B>_R` alone.

use log::warn;
use num_traits::{One, Zero};

use crate::channels::{LindbladModel, ReservoirSpec};
use crate::error::{Error, Result};
use crate::hilbert::{
    hermitian_eigen, partial_inner, time_ordered_propagator, unitary_step, CMatrix, CVector, Schedule, TimeGrid,
};
use crate::phase::Trajectory;
use crate::scalar::{c, cis, Real, C};

/// Absolute tolerance for `<r|R_mu|r> = 0`.
pub const RCOND_TOLERANCE: f64 = 1e-10;
/// Above this `|Im <dZ>|` the perturbative moments are flagged.
pub const PERTURBATIVE_GUARD: f64 = 0.1;

/// One term `S_mu ⊗ R_mu` of `H_I = -sum_mu S_mu ⊗ R_mu`.
#[derive(Clone, Debug, PartialEq)]
pub struct Coupling<T> {
    pub system: CMatrix<T>,
    pub reservoir: CMatrix<T>,
}

/// System, reservoir and their coupling, with the initial state
/// `|psi_S><psi_S| ⊗ rho_R`.
#[derive(Clone, Debug)]
pub struct WeakCouplingModel<T> {
    h_s: Schedule<T>,
    h_r: CMatrix<T>,
    couplings: Vec<Coupling<T>>,
    reservoir: ReservoirSpec<T>,
    psi_s: CVector<T>,
}

impl<T: Real> WeakCouplingModel<T> {
    pub fn new(
        h_s: Schedule<T>,
        h_r: CMatrix<T>,
        couplings: Vec<Coupling<T>>,
        reservoir: ReservoirSpec<T>,
        psi_s: CVector<T>,
    ) -> Result<Self> {
        let (ds, dr) = (h_s.dim(), h_r.dim());
        let dims = [
            (ds, psi_s.dim(), "system state"),
            (dr, reservoir.dim(), "reservoir states vs H_R"),
        ];
        for (expected, found, context) in dims {
            if expected != found {
                return Err(Error::DimensionError {
                    expected,
                    found,
                    context,
                });
            }
        }
        for cpl in &couplings {
            if cpl.system.dim() != ds {
                return Err(Error::DimensionError {
                    expected: ds,
                    found: cpl.system.dim(),
                    context: "coupling system operator",
                });
            }
            if cpl.reservoir.dim() != dr {
                return Err(Error::DimensionError {
                    expected: dr,
                    found: cpl.reservoir.dim(),
                    context: "coupling reservoir operator",
                });
            }
        }
        if !h_r.is_hermitian(T::tol(1e-12)) {
            return Err(Error::InvalidOperand("H_R is not Hermitian".into()));
        }
        if (psi_s.norm() - T::one()).abs() > T::tol(1e-10) {
            return Err(Error::InvalidState("system state not normalized".into()));
        }
        let scale = T::one().max(h_r.frobenius_norm());
        for (i, r) in reservoir.states().iter().enumerate() {
            let residual = (&h_r.apply(&r.state) - &r.state.scale(c(r.energy, T::zero()))).norm();
            if residual > T::tol(1e-9) * scale {
                return Err(Error::InvalidState(format!(
                    "reservoir state {i} is not an eigenstate of H_R with energy {}",
                    r.energy
                )));
            }
        }
        let model = Self {
            h_s,
            h_r,
            couplings,
            reservoir,
            psi_s,
        };
        if !model.interaction().is_hermitian(T::tol(1e-12)) {
            return Err(Error::InvalidOperand("H_I is not Hermitian".into()));
        }
        Ok(model)
    }

    pub fn h_s(&self) -> &Schedule<T> {
        &self.h_s
    }

    pub fn h_r(&self) -> &CMatrix<T> {
        &self.h_r
    }

    pub fn couplings(&self) -> &[Coupling<T>] {
        &self.couplings
    }

    pub fn reservoir(&self) -> &ReservoirSpec<T> {
        &self.reservoir
    }

    pub fn psi_s(&self) -> &CVector<T> {
        &self.psi_s
    }

    pub fn dim_s(&self) -> usize {
        self.h_s.dim()
    }

    pub fn dim_r(&self) -> usize {
        self.h_r.dim()
    }

    /// Same model with `H_I -> lambda H_I`.
    pub fn with_coupling_scale(&self, lambda: T) -> Self {
        let mut out = self.clone();
        for cpl in &mut out.couplings {
            cpl.reservoir = cpl.reservoir.scale_real(lambda);
        }
        out
    }

    /// Same model with another reservoir mixture.
    pub fn with_reservoir(&self, reservoir: ReservoirSpec<T>) -> Result<Self> {
        Self::new(
            self.h_s.clone(),
            self.h_r.clone(),
            self.couplings.clone(),
            reservoir,
            self.psi_s.clone(),
        )
    }

    /// `H_I = -sum_mu S_mu ⊗ R_mu` on the joint space (system index outer).
    pub fn interaction(&self) -> CMatrix<T> {
        let dim = self.dim_s() * self.dim_r();
        self.couplings
            .iter()
            .fold(CMatrix::zeros(dim), |acc, cpl| &acc - &cpl.system.kron(&cpl.reservoir))
    }

    /// `H_S(t) ⊗ 1 + 1 ⊗ H_R + H_I`.
    pub fn joint_hamiltonian(&self) -> Schedule<T> {
        let id_s = CMatrix::identity(self.dim_s());
        let id_r = CMatrix::identity(self.dim_r());
        let fixed = &id_s.kron(&self.h_r) + &self.interaction();
        let h_s = self.h_s.clone();
        let dim = self.dim_s() * self.dim_r();
        Schedule::from_fn(dim, move |t| &h_s.eval(t).kron(&id_r) + &fixed)
    }

    /// Checks `<r|R_mu|r> = 0` for every reservoir state and coupling.
    pub fn check_rcond(&self) -> Result<()> {
        for (ri, r) in self.reservoir.states().iter().enumerate() {
            for (mi, cpl) in self.couplings.iter().enumerate() {
                let v = cpl.reservoir.expectation(&r.state);
                if v.norm() > T::lit(RCOND_TOLERANCE) {
                    return Err(Error::RCondViolated {
                        reservoir_index: ri,
                        coupling_index: mi,
                        value: v.norm().to_f64_lossy(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Grid samples of the interaction-picture quantities.
#[derive(Clone, Debug)]
pub struct PerturbationOperators<T> {
    pub grid: TimeGrid<T>,
    /// `U_S(t_k)`.
    pub u_s: Vec<CMatrix<T>>,
    /// `H_S(t_k)`.
    pub h_s: Vec<CMatrix<T>>,
    /// `H_I~(t_k) = (U_S ⊗ U_R)† H_I (U_S ⊗ U_R)`.
    pub h_i_tilde: Vec<CMatrix<T>>,
    pub a: Vec<CMatrix<T>>,
    pub b: Vec<CMatrix<T>>,
    /// `H_S~ = U_S† H_S U_S`.
    pub h_s_tilde: Vec<CMatrix<T>>,
    /// `H_S~ - <psi_S|H_S~|psi_S>`.
    pub delta_h_s_tilde: Vec<CMatrix<T>>,
}

fn cumulative_trapezoid<T: Real>(samples: &[CMatrix<T>], dt: T) -> Vec<CMatrix<T>> {
    let half = T::lit(0.5) * dt;
    let mut out = Vec::with_capacity(samples.len());
    let mut acc = CMatrix::zeros(samples[0].dim());
    out.push(acc.clone());
    for w in samples.windows(2) {
        acc = &acc + &(&w[0] + &w[1]).scale_real(half);
        out.push(acc.clone());
    }
    out
}

fn trapezoid<T: Real>(samples: &[C<T>], dt: T) -> C<T> {
    let n = samples.len();
    if n < 2 {
        return C::zero();
    }
    let inner = samples[1..n - 1].iter().fold(C::<T>::zero(), |acc, &v| acc + v);
    (inner + (samples[0] + samples[n - 1]) * T::lit(0.5)) * dt
}

fn delta_tilde<T: Real>(
    h_s: &[CMatrix<T>],
    u_s: &[CMatrix<T>],
    psi: &CVector<T>,
) -> (Vec<CMatrix<T>>, Vec<CMatrix<T>>) {
    let id = CMatrix::identity(psi.dim());
    h_s.iter()
        .zip(u_s)
        .map(|(h, u)| {
            let ht = &(&u.adjoint() * h) * u;
            let mean = ht.expectation(psi);
            let delta = &ht - &id.scale(mean);
            (ht, delta)
        })
        .unzip()
}

/// Samples `A` and `B` on the grid. `A` is a cumulative trapezoid of
/// `-i H_I~`; `B = -i ∫ H_I~ A` is a second cumulative trapezoid.
pub fn build_ab<T: Real>(model: &WeakCouplingModel<T>, grid: &TimeGrid<T>) -> Result<PerturbationOperators<T>> {
    let u_s = time_ordered_propagator(&model.h_s, grid)?;
    let h_s = model.h_s.sample_hermitian(grid)?;
    let h_i = model.interaction();
    let minus_i = c(T::zero(), -T::one());
    let mut h_i_tilde = Vec::with_capacity(grid.len());
    for (k, us) in u_s.iter().enumerate() {
        let u_r = unitary_step(&model.h_r, grid.time(k) - grid.t_start())?;
        let u0 = us.kron(&u_r);
        h_i_tilde.push(&(&u0.adjoint() * &h_i) * &u0);
    }
    let dt = grid.dt();
    let a: Vec<CMatrix<T>> = cumulative_trapezoid(&h_i_tilde, dt)
        .into_iter()
        .map(|m| m.scale(minus_i))
        .collect();
    let integrand: Vec<CMatrix<T>> = h_i_tilde.iter().zip(&a).map(|(h, a)| (h * a).scale(minus_i)).collect();
    let b = cumulative_trapezoid(&integrand, dt);
    let (h_s_tilde, delta_h_s_tilde) = delta_tilde(&h_s, &u_s, &model.psi_s);
    Ok(PerturbationOperators {
        grid: *grid,
        u_s,
        h_s,
        h_i_tilde,
        a,
        b,
        h_s_tilde,
        delta_h_s_tilde,
    })
}

/// `<X>_R = sum_r p_r <r|X|r>`, a system-space operator.
pub fn reservoir_average<T: Real>(x: &CMatrix<T>, reservoir: &ReservoirSpec<T>) -> Result<CMatrix<T>> {
    let mut out: Option<CMatrix<T>> = None;
    for r in reservoir.states() {
        let term = partial_inner(&r.state, x, &r.state)?.scale_real(r.weight);
        out = Some(match out {
            Some(acc) => &acc + &term,
            None => term,
        });
    }
    out.ok_or_else(|| Error::InvalidState("empty reservoir".into()))
}

/// Largest `|<psi_S|<r|A(t_k)|r>|psi_S>|`-style entry: the Frobenius norm of
/// `<r|A|r>` maximized over states and grid points.
pub fn max_conditional_a<T: Real>(ops: &PerturbationOperators<T>, reservoir: &ReservoirSpec<T>) -> Result<T> {
    let mut worst = T::zero();
    for a in &ops.a {
        for r in reservoir.states() {
            worst = worst.max(partial_inner(&r.state, a, &r.state)?.frobenius_norm());
        }
    }
    Ok(worst)
}

/// The reservoir-averaged second-order operator `<B>_R(t_k)` and its
/// derivative, together with the unperturbed system evolution.
#[derive(Clone, Debug)]
pub struct AveragedB<T> {
    pub grid: TimeGrid<T>,
    pub u_s: Vec<CMatrix<T>>,
    pub h_s: Vec<CMatrix<T>>,
    pub b: Vec<CMatrix<T>>,
    pub b_dot: Vec<CMatrix<T>>,
}

impl<T: Real> AveragedB<T> {
    /// From an explicit reservoir: `<B>_R` and `<dB/dt>_R = -i <H_I~ A>_R`.
    pub fn from_operators(ops: &PerturbationOperators<T>, reservoir: &ReservoirSpec<T>) -> Result<Self> {
        let minus_i = c(T::zero(), -T::one());
        let b = ops
            .b
            .iter()
            .map(|b| reservoir_average(b, reservoir))
            .collect::<Result<_>>()?;
        let b_dot = ops
            .h_i_tilde
            .iter()
            .zip(&ops.a)
            .map(|(h, a)| reservoir_average(&(h * a).scale(minus_i), reservoir))
            .collect::<Result<_>>()?;
        Ok(Self {
            grid: ops.grid,
            u_s: ops.u_s.clone(),
            h_s: ops.h_s.clone(),
            b,
            b_dot,
        })
    }

    /// Markovian form: `<dB/dt>_R = U_S† (-i dH - sum L†L) U_S`, integrated by
    /// trapezoid.
    pub fn from_lindblad(model: &LindbladModel<T>, grid: &TimeGrid<T>) -> Result<Self> {
        let u_s = time_ordered_propagator(model.h_s(), grid)?;
        let h_s = model.h_s().sample_hermitian(grid)?;
        let generator = &model.delta_h().scale(c(T::zero(), -T::one())) - &model.dissipator_sum();
        let b_dot: Vec<CMatrix<T>> = u_s.iter().map(|u| &(&u.adjoint() * &generator) * u).collect();
        let b = cumulative_trapezoid(&b_dot, grid.dt());
        Ok(Self {
            grid: *grid,
            u_s,
            h_s,
            b,
            b_dot,
        })
    }

    /// `U_S(t) psi_S`, the trajectory without the reservoir.
    pub fn unperturbed_trajectory(&self, psi_s: &CVector<T>) -> Result<Trajectory<T>> {
        Trajectory::from_evolution(self.grid, &self.u_s, psi_s)
    }
}

/// `dH` and `sum L†L` read off `U_S <dB/dt>_R U_S† = -i dH - sum L†L` at one
/// grid point.
#[derive(Clone, Debug)]
pub struct Identification<T> {
    pub time: T,
    pub delta_h: CMatrix<T>,
    pub dissipator: CMatrix<T>,
}

impl<T: Real> Identification<T> {
    /// Frobenius distance to the energy shift and `sum L†L` of a model.
    pub fn distance_to(&self, model: &LindbladModel<T>) -> T {
        self.delta_h
            .distance(model.delta_h())
            .max(self.dissipator.distance(&model.dissipator_sum()))
    }
}

/// Splits `U_S <dB/dt>_R U_S†` at every grid point. A dissipative part with
/// a negative eigenvalue (a positive part of `-sum L†L`) beyond round-off is
/// reported as `InconsistentModel`.
pub fn lindblad_identification<T: Real>(avg: &AveragedB<T>) -> Result<Vec<Identification<T>>> {
    let i = c(T::zero(), T::one());
    let mut out = Vec::with_capacity(avg.grid.len());
    for (k, (u, bd)) in avg.u_s.iter().zip(&avg.b_dot).enumerate() {
        let m = &(u * bd) * &u.adjoint();
        let dissipator = -&m.hermitian_part();
        let delta_h = m.anti_hermitian_part().scale(i);
        let min = hermitian_eigen(&dissipator)?.values[0];
        if min < -T::tol(1e-9) * T::one().max(m.frobenius_norm()) {
            return Err(Error::InconsistentModel {
                time: avg.grid.time(k).to_f64_lossy(),
                eigenvalue: min.to_f64_lossy(),
            });
        }
        out.push(Identification {
            time: avg.grid.time(k),
            delta_h,
            dissipator,
        });
    }
    Ok(out)
}

/// `<dZ>` at the final grid time for a model with an explicit reservoir.
/// Requires `<r|R_mu|r> = 0`.
pub fn delta_z<T: Real>(ops: &PerturbationOperators<T>, model: &WeakCouplingModel<T>) -> Result<C<T>> {
    model.check_rcond()?;
    let avg = AveragedB::from_operators(ops, &model.reservoir)?;
    delta_z_averaged(&avg, &model.psi_s)
}

/// `<dZ> = <U_S B>_S/<U_S>_S - <B - B†>_S/2 + i ∫ <B† dH_S~ + dH_S~ B>_S dt'`
/// with `B = <B>_R`, the first two terms at the final time and the integrand
/// at the running time `t'`.
pub fn delta_z_averaged<T: Real>(avg: &AveragedB<T>, psi_s: &CVector<T>) -> Result<C<T>> {
    let n = avg.grid.n_steps();
    let (u_t, b_t) = (&avg.u_s[n], &avg.b[n]);
    let us_mean = u_t.expectation(psi_s);
    let threshold = T::lit(crate::phase::Z_RELATIVE_THRESHOLD);
    if us_mean.norm() < threshold {
        return Err(Error::UndefinedGP {
            modulus: us_mean.norm().to_f64_lossy(),
            threshold: threshold.to_f64_lossy(),
        });
    }
    let first = (u_t * b_t).expectation(psi_s) / us_mean;
    let second = (b_t - &b_t.adjoint()).expectation(psi_s) * T::lit(0.5);
    let (_, delta) = delta_tilde(&avg.h_s, &avg.u_s, psi_s);
    let integrand: Vec<C<T>> = avg
        .b
        .iter()
        .zip(&delta)
        .map(|(b, d)| (&(&b.adjoint() * d) + &(d * b)).expectation(psi_s))
        .collect();
    let third = trapezoid(&integrand, avg.grid.dt()) * c(T::zero(), T::one());
    Ok(first - second + third)
}

/// `e^{i n beta0} (1 + i n Im<dZ>)`, shared by both measures at second order.
pub fn perturbative_moments<T: Real>(delta_z: C<T>, beta0: T, n: i32) -> C<T> {
    if delta_z.im.abs() > T::lit(PERTURBATIVE_GUARD) {
        warn!(
            "|Im <dZ>| = {} exceeds {PERTURBATIVE_GUARD}; second-order moments are unreliable",
            delta_z.im.abs()
        );
    }
    let nt = T::from_i32(n).unwrap_or_else(T::zero);
    cis(nt * beta0) * (C::<T>::one() + c(T::zero(), nt * delta_z.im))
}

/// `beta0 + Im<dZ>`, the first-order mean phase.
pub fn perturbative_mean_gp<T: Real>(delta_z: C<T>, beta0: T) -> T {
    beta0 + delta_z.im
}
