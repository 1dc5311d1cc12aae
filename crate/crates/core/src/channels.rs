//! Open-system dynamics: Lindblad integration, Kraus channels, and the
//! conditional trajectories `|psi_{r,s}(t)> = <r|U_SR(t)|r> |psi_s>` obtained
//! from a joint unitary.
//!
//! The master equation uses the normalization
//!
//! ```text
//! drho/dt = -i[H_S + dH, rho] - sum_a (L_a† L_a rho + rho L_a† L_a - 2 L_a rho L_a†)
//! ```
//!
//! (no factor 1/2), so a jump operator `sqrt(g) |g><e|` empties `|e>` at rate
//! `2 g`.

use num_traits::One;

use crate::error::{Error, Result};
use crate::hilbert::{
    hermitian_eigenvalues, partial_inner, partial_trace_reservoir, CMatrix, CVector, Schedule, TimeGrid,
};
use crate::phase::Trajectory;
use crate::scalar::{c, Real, C};

/// Relative tolerance for grouping reservoir energies into degenerate blocks.
pub const ENERGY_TOLERANCE: f64 = 1e-9;

/// `|E - E'| < 1e-9 max(1, |E|)`.
pub fn same_energy<T: Real>(e: T, f: T) -> bool {
    (e - f).abs() < T::lit(ENERGY_TOLERANCE) * T::one().max(e.abs())
}

/// One term `p_r |r><r|` of the reservoir mixture, with `H_R |r> = E_r |r>`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReservoirState<T> {
    pub weight: T,
    pub state: CVector<T>,
    pub energy: T,
}

/// Initial reservoir state `rho_R(0) = sum_r p_r |r><r|` as a mixture of
/// energy eigenstates, with its partition into degenerate-energy blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct ReservoirSpec<T> {
    states: Vec<ReservoirState<T>>,
    blocks: Vec<Vec<usize>>,
}

impl<T: Real> ReservoirSpec<T> {
    /// Mixture of orthonormal energy eigenstates.
    pub fn new(states: Vec<ReservoirState<T>>) -> Result<Self> {
        let spec = Self::from_decomposition(states)?;
        let tol = T::tol(1e-10);
        for (i, a) in spec.states.iter().enumerate() {
            for b in &spec.states[i + 1..] {
                if a.state.inner(&b.state).norm() > tol {
                    return Err(Error::InvalidState("reservoir states are not orthonormal".into()));
                }
            }
        }
        Ok(spec)
    }

    /// A decomposition of `rho_R(0)` into normalized, not necessarily
    /// orthogonal, energy eigenstates (the form produced by redecomposing
    /// inside degenerate blocks).
    pub fn from_decomposition(states: Vec<ReservoirState<T>>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InvalidState("empty reservoir mixture".into()));
        }
        let dim = states[0].state.dim();
        let mut total = T::zero();
        for s in &states {
            if s.state.dim() != dim {
                return Err(Error::DimensionError {
                    expected: dim,
                    found: s.state.dim(),
                    context: "reservoir state dimension",
                });
            }
            if !(s.weight >= T::zero()) || !s.energy.is_finite() {
                return Err(Error::InvalidState(format!(
                    "reservoir weight {} / energy {} invalid",
                    s.weight, s.energy
                )));
            }
            if (s.state.norm() - T::one()).abs() > T::tol(1e-10) {
                return Err(Error::InvalidState("reservoir state not normalized".into()));
            }
            total = total + s.weight;
        }
        if (total - T::one()).abs() > T::tol(1e-12) {
            return Err(Error::InvalidState(format!(
                "reservoir weights sum to {total}, expected 1"
            )));
        }
        let blocks = partition_blocks(states.iter().map(|s| s.energy));
        Ok(Self { states, blocks })
    }

    /// Diagonal `H_R = diag(energies)` with `rho_R = diag(weights)`.
    pub fn diagonal(energies: &[T], weights: &[T]) -> Result<Self> {
        if energies.len() != weights.len() {
            return Err(Error::DimensionError {
                expected: energies.len(),
                found: weights.len(),
                context: "reservoir weights vs energies",
            });
        }
        let dim = energies.len();
        Self::new(
            energies
                .iter()
                .zip(weights)
                .enumerate()
                .map(|(i, (&energy, &weight))| ReservoirState {
                    weight,
                    state: CVector::basis(dim, i),
                    energy,
                })
                .collect(),
        )
    }

    /// A single pure energy eigenstate.
    pub fn pure(state: CVector<T>, energy: T) -> Result<Self> {
        Self::new(vec![ReservoirState {
            weight: T::one(),
            state,
            energy,
        }])
    }

    pub fn states(&self) -> &[ReservoirState<T>] {
        &self.states
    }

    /// Index sets of states sharing one energy.
    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn dim(&self) -> usize {
        self.states[0].state.dim()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// `sum_r p_r |r><r|`.
    pub fn density_matrix(&self) -> CMatrix<T> {
        self.states.iter().fold(CMatrix::zeros(self.dim()), |acc, s| {
            &acc + &CMatrix::outer(&s.state, &s.state).scale_real(s.weight)
        })
    }

    /// `sum_r p_r |r><r|` restricted to the states of one block.
    pub fn block_density(&self, block: &[usize]) -> CMatrix<T> {
        block.iter().fold(CMatrix::zeros(self.dim()), |acc, &i| {
            let s = &self.states[i];
            &acc + &CMatrix::outer(&s.state, &s.state).scale_real(s.weight)
        })
    }
}

fn partition_blocks<T: Real>(energies: impl Iterator<Item = T>) -> Vec<Vec<usize>> {
    let mut reps: Vec<T> = Vec::new();
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    for (i, e) in energies.enumerate() {
        match reps.iter().position(|&r| same_energy(r, e)) {
            Some(b) => blocks[b].push(i),
            None => {
                reps.push(e);
                blocks.push(vec![i]);
            }
        }
    }
    blocks
}

/// Initial system state `rho_S(0) = sum_s q_s |psi_s><psi_s|`.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemEnsemble<T> {
    members: Vec<(T, CVector<T>)>,
}

impl<T: Real> SystemEnsemble<T> {
    pub fn new(members: Vec<(T, CVector<T>)>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidState("empty system ensemble".into()));
        }
        let dim = members[0].1.dim();
        let mut total = T::zero();
        for (q, psi) in &members {
            if psi.dim() != dim {
                return Err(Error::DimensionError {
                    expected: dim,
                    found: psi.dim(),
                    context: "system state dimension",
                });
            }
            if !(*q >= T::zero()) {
                return Err(Error::InvalidState(format!("negative system weight {q}")));
            }
            if (psi.norm() - T::one()).abs() > T::tol(1e-10) {
                return Err(Error::InvalidState("system state not normalized".into()));
            }
            total = total + *q;
        }
        if (total - T::one()).abs() > T::tol(1e-12) {
            return Err(Error::InvalidState(format!(
                "system weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { members })
    }

    pub fn pure(psi: CVector<T>) -> Result<Self> {
        Self::new(vec![(T::one(), psi)])
    }

    pub fn members(&self) -> &[(T, CVector<T>)] {
        &self.members
    }

    pub fn dim(&self) -> usize {
        self.members[0].1.dim()
    }

    pub fn density_matrix(&self) -> CMatrix<T> {
        self.members.iter().fold(CMatrix::zeros(self.dim()), |acc, (q, psi)| {
            &acc + &CMatrix::outer(psi, psi).scale_real(*q)
        })
    }
}

/// One weighted Kraus operator `(p_i, K_i(t))`.
#[derive(Clone, Debug)]
pub struct KrausElement<T> {
    pub weight: T,
    pub op: Schedule<T>,
}

/// `rho -> sum_i p_i K_i(t) rho K_i(t)†`.
#[derive(Clone, Debug)]
pub struct KrausChannel<T> {
    elements: Vec<KrausElement<T>>,
}

impl<T: Real> KrausChannel<T> {
    pub fn new(elements: Vec<KrausElement<T>>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::InvalidOperand("channel without Kraus operators".into()));
        }
        let dim = elements[0].op.dim();
        for e in &elements {
            if e.op.dim() != dim {
                return Err(Error::DimensionError {
                    expected: dim,
                    found: e.op.dim(),
                    context: "Kraus operator dimension",
                });
            }
            if !(e.weight >= T::zero()) {
                return Err(Error::InvalidOperand(format!("negative Kraus weight {}", e.weight)));
            }
        }
        Ok(Self { elements })
    }

    pub fn elements(&self) -> &[KrausElement<T>] {
        &self.elements
    }

    pub fn dim(&self) -> usize {
        self.elements[0].op.dim()
    }

    pub fn operators_at(&self, t: T) -> Vec<(T, CMatrix<T>)> {
        self.elements.iter().map(|e| (e.weight, e.op.eval(t))).collect()
    }

    /// `|| sum_i p_i K_i† K_i - 1 ||_F` at time `t`.
    pub fn completeness_deviation(&self, t: T) -> T {
        let sum = self
            .operators_at(t)
            .iter()
            .fold(CMatrix::zeros(self.dim()), |acc, (p, k)| {
                &acc + &(&k.adjoint() * k).scale_real(*p)
            });
        sum.distance(&CMatrix::identity(self.dim()))
    }
}

/// Generator of a Lindblad master equation.
#[derive(Clone, Debug)]
pub struct LindbladModel<T> {
    h_s: Schedule<T>,
    delta_h: CMatrix<T>,
    jumps: Vec<CMatrix<T>>,
}

impl<T: Real> LindbladModel<T> {
    pub fn new(h_s: Schedule<T>, delta_h: CMatrix<T>, jumps: Vec<CMatrix<T>>) -> Result<Self> {
        let dim = h_s.dim();
        if delta_h.dim() != dim {
            return Err(Error::DimensionError {
                expected: dim,
                found: delta_h.dim(),
                context: "energy shift dimension",
            });
        }
        if !delta_h.is_hermitian(T::tol(1e-12)) {
            return Err(Error::InvalidOperand("energy shift is not Hermitian".into()));
        }
        for l in &jumps {
            if l.dim() != dim {
                return Err(Error::DimensionError {
                    expected: dim,
                    found: l.dim(),
                    context: "jump operator dimension",
                });
            }
        }
        Ok(Self { h_s, delta_h, jumps })
    }

    /// No energy shift.
    pub fn with_jumps(h_s: Schedule<T>, jumps: Vec<CMatrix<T>>) -> Result<Self> {
        let dim = h_s.dim();
        Self::new(h_s, CMatrix::zeros(dim), jumps)
    }

    pub fn dim(&self) -> usize {
        self.h_s.dim()
    }

    pub fn h_s(&self) -> &Schedule<T> {
        &self.h_s
    }

    pub fn delta_h(&self) -> &CMatrix<T> {
        &self.delta_h
    }

    pub fn jumps(&self) -> &[CMatrix<T>] {
        &self.jumps
    }

    /// `sum_a L_a† L_a`.
    pub fn dissipator_sum(&self) -> CMatrix<T> {
        self.jumps
            .iter()
            .fold(CMatrix::zeros(self.dim()), |acc, l| &acc + &(&l.adjoint() * l))
    }

    /// No-jump generator `H_S(t) + dH - i sum L†L`; `exp(-i G t)` is the
    /// conditional evolution without quantum jumps.
    pub fn no_jump_generator(&self) -> Schedule<T> {
        let k = &self.delta_h - &self.dissipator_sum().scale(c(T::zero(), T::one()));
        self.h_s.plus(&Schedule::constant(k))
    }
}

struct Rhs<'a, T> {
    model: &'a LindbladModel<T>,
    ldl: CMatrix<T>,
    jumps_adj: Vec<CMatrix<T>>,
}

impl<'a, T: Real> Rhs<'a, T> {
    fn new(model: &'a LindbladModel<T>) -> Self {
        Self {
            model,
            ldl: model.dissipator_sum(),
            jumps_adj: model.jumps.iter().map(CMatrix::adjoint).collect(),
        }
    }

    fn eval(&self, rho: &CMatrix<T>, t: T) -> CMatrix<T> {
        let h = &self.model.h_s.eval(t) + &self.model.delta_h;
        let minus_i = c(T::zero(), -T::one());
        let mut out = h.commutator(rho).scale(minus_i);
        out = &out - &self.ldl.anticommutator(rho);
        for (l, ld) in self.model.jumps.iter().zip(&self.jumps_adj) {
            let lrl = &(l * rho) * ld;
            out = &out + &lrl.scale_real(T::lit(2.0));
        }
        out
    }
}

/// Right-hand side of the master equation at time `t`.
pub fn lindblad_rhs<T: Real>(rho: &CMatrix<T>, model: &LindbladModel<T>, t: T) -> CMatrix<T> {
    Rhs::new(model).eval(rho, t)
}

fn check_density<T: Real>(rho: &CMatrix<T>) -> Result<()> {
    if !rho.is_finite() || !rho.is_hermitian(T::tol(1e-12)) {
        return Err(Error::InvalidState("density matrix not Hermitian".into()));
    }
    let tr = rho.trace();
    if (tr - C::one()).norm() > T::tol(1e-10) {
        return Err(Error::InvalidState(format!("density matrix trace {tr}")));
    }
    let min = hermitian_eigenvalues(rho)?[0];
    if min < -T::tol(1e-10) {
        return Err(Error::InvalidState(format!("density matrix eigenvalue {min}")));
    }
    Ok(())
}

/// Classical RK4 on the grid; returns `rho(t_k)` for every grid point.
///
/// Each step is re-symmetrized. A trace drift above `1e-6` (or a non-finite
/// state) aborts with `IntegrationDiverged`.
pub fn integrate_lindblad<T: Real>(
    model: &LindbladModel<T>,
    rho0: &CMatrix<T>,
    grid: &TimeGrid<T>,
) -> Result<Vec<CMatrix<T>>> {
    if rho0.dim() != model.dim() {
        return Err(Error::DimensionError {
            expected: model.dim(),
            found: rho0.dim(),
            context: "initial density matrix",
        });
    }
    check_density(rho0)?;
    let rhs = Rhs::new(model);
    let h = grid.dt();
    let half = T::lit(0.5);
    let sixth = T::one() / T::lit(6.0);
    let mut rho = rho0.clone();
    let mut out = Vec::with_capacity(grid.len());
    out.push(rho.clone());
    for step in 0..grid.n_steps() {
        let t = grid.time(step);
        let k1 = rhs.eval(&rho, t);
        let k2 = rhs.eval(&(&rho + &k1.scale_real(h * half)), t + h * half);
        let k3 = rhs.eval(&(&rho + &k2.scale_real(h * half)), t + h * half);
        let k4 = rhs.eval(&(&rho + &k3.scale_real(h)), t + h);
        let incr = &(&k1 + &k4) + &(&k2 + &k3).scale_real(T::lit(2.0));
        rho = (&rho + &incr.scale_real(h * sixth)).hermitian_part();
        let drift = (rho.trace() - C::one()).norm();
        if !rho.is_finite() || !(drift <= T::lit(1e-6)) {
            return Err(Error::IntegrationDiverged {
                step: step + 1,
                drift: drift.to_f64_lossy(),
            });
        }
        out.push(rho.clone());
    }
    Ok(out)
}

/// `sum_i p_i K_i(t) rho0 K_i(t)†`, after checking completeness to `1e-9`.
pub fn apply_kraus<T: Real>(channel: &KrausChannel<T>, rho0: &CMatrix<T>, t: T) -> Result<CMatrix<T>> {
    if rho0.dim() != channel.dim() {
        return Err(Error::DimensionError {
            expected: channel.dim(),
            found: rho0.dim(),
            context: "density matrix vs channel",
        });
    }
    let deviation = channel.completeness_deviation(t);
    if !(deviation <= T::tol(1e-9)) {
        return Err(Error::InvalidChannel {
            time: t.to_f64_lossy(),
            deviation: deviation.to_f64_lossy(),
        });
    }
    Ok(channel
        .operators_at(t)
        .iter()
        .fold(CMatrix::zeros(channel.dim()), |acc, (p, k)| {
            &acc + &(&(k * rho0) * &k.adjoint()).scale_real(*p)
        }))
}

/// Orthonormal basis `{|b_k(r)>}` with `b_0 = r` (normalized), completed by
/// Gram–Schmidt over the standard basis minus the vector on which `r` has its
/// largest component.
pub fn adapted_basis<T: Real>(r: &CVector<T>, dim: usize) -> Result<Vec<CVector<T>>> {
    if r.dim() != dim {
        return Err(Error::DimensionError {
            expected: dim,
            found: r.dim(),
            context: "adapted basis",
        });
    }
    if r.norm() <= T::min_positive_value() {
        return Err(Error::InvalidState("adapted basis of the zero vector".into()));
    }
    let r = r.normalized()?;
    let pivot = (0..dim)
        .max_by(|&i, &j| r[i].norm().partial_cmp(&r[j].norm()).unwrap())
        .unwrap();
    let mut basis = vec![r];
    for i in (0..dim).filter(|&i| i != pivot) {
        let mut v = CVector::basis(dim, i);
        // Two passes of modified Gram–Schmidt.
        for _ in 0..2 {
            for b in &basis {
                v = &v - &b.scale(b.inner(&v));
            }
        }
        basis.push(v.normalized()?);
    }
    Ok(basis)
}

/// A trajectory together with its probability `p_r q_s` and its labels.
#[derive(Clone, Debug)]
pub struct WeightedTrajectory<T> {
    pub weight: T,
    pub reservoir_index: usize,
    pub system_index: usize,
    pub trajectory: Trajectory<T>,
}

fn check_joint<T: Real>(u: &CMatrix<T>, dim_s: usize, dim_r: usize) -> Result<()> {
    if u.dim() != dim_s * dim_r {
        return Err(Error::DimensionError {
            expected: dim_s * dim_r,
            found: u.dim(),
            context: "joint propagator vs dim_S * dim_R",
        });
    }
    Ok(())
}

/// `|psi_{r,s}(t_k)> = <r|U_SR(t_k)|r> |psi_s>` for every `(r, s)` with
/// non-zero weight. Only the `b_R(r) = r` element of the adapted basis is
/// kept; the others start from the zero vector and carry no geometric phase.
pub fn conditional_trajectories<T: Real>(
    propagators: &[CMatrix<T>],
    grid: &TimeGrid<T>,
    reservoir: &ReservoirSpec<T>,
    system: &SystemEnsemble<T>,
) -> Result<Vec<WeightedTrajectory<T>>> {
    if propagators.len() != grid.len() {
        return Err(Error::DimensionError {
            expected: grid.len(),
            found: propagators.len(),
            context: "propagator samples vs grid points",
        });
    }
    check_joint(&propagators[0], system.dim(), reservoir.dim())?;
    let mut out = Vec::new();
    for (ri, r) in reservoir.states().iter().enumerate() {
        if r.weight.is_zero() {
            continue;
        }
        let kraus: Vec<CMatrix<T>> = propagators
            .iter()
            .map(|u| partial_inner(&r.state, u, &r.state))
            .collect::<Result<_>>()?;
        for (si, (q, psi)) in system.members().iter().enumerate() {
            if q.is_zero() {
                continue;
            }
            let trajectory = Trajectory::from_evolution(*grid, &kraus, psi)?;
            out.push(WeightedTrajectory {
                weight: r.weight * *q,
                reservoir_index: ri,
                system_index: si,
                trajectory,
            });
        }
    }
    Ok(out)
}

/// Which conditional Kraus operators `<b_R(r)|U|r>` to produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KrausSelection {
    /// Only `b_R(r) = r`, the terms that enter the phase distributions.
    Kept,
    /// The full adapted basis, including the discarded `b_R != r` terms.
    All,
}

/// `<b_k(r)|U|r>` with weight `p_r`.
#[derive(Clone, Debug)]
pub struct ConditionalKraus<T> {
    pub weight: T,
    pub reservoir_index: usize,
    pub basis_index: usize,
    pub op: CMatrix<T>,
}

pub fn conditional_kraus<T: Real>(
    u: &CMatrix<T>,
    reservoir: &ReservoirSpec<T>,
    selection: KrausSelection,
) -> Result<Vec<ConditionalKraus<T>>> {
    let dim_r = reservoir.dim();
    let mut out = Vec::new();
    for (ri, r) in reservoir.states().iter().enumerate() {
        let basis = adapted_basis(&r.state, dim_r)?;
        let take = match selection {
            KrausSelection::Kept => 1,
            KrausSelection::All => basis.len(),
        };
        for (bi, b) in basis.iter().take(take).enumerate() {
            out.push(ConditionalKraus {
                weight: r.weight,
                reservoir_index: ri,
                basis_index: bi,
                op: partial_inner(b, u, &r.state)?,
            });
        }
    }
    Ok(out)
}

/// `Tr_R(U (rho_S ⊗ rho_R) U†)`.
pub fn reduced_state<T: Real>(u: &CMatrix<T>, rho_s: &CMatrix<T>, reservoir: &ReservoirSpec<T>) -> Result<CMatrix<T>> {
    check_joint(u, rho_s.dim(), reservoir.dim())?;
    let joint = rho_s.kron(&reservoir.density_matrix());
    partial_trace_reservoir(&(&(u * &joint) * &u.adjoint()), reservoir.dim())
}

/// `sum p K rho K†` over a set of conditional Kraus operators.
pub fn kraus_sum<T: Real>(ops: &[ConditionalKraus<T>], rho_s: &CMatrix<T>) -> CMatrix<T> {
    ops.iter().fold(CMatrix::zeros(rho_s.dim()), |acc, k| {
        &acc + &(&(&k.op * rho_s) * &k.op.adjoint()).scale_real(k.weight)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{pauli, time_ordered_propagator, unitary_step};
    use crate::scalar::cr;
    use num_traits::Zero;
    use proptest::prelude::*;

    fn ket_e() -> CVector<f64> {
        CVector::basis(2, 1)
    }

    fn atom_jumps(g0: f64, n: f64) -> Vec<CMatrix<f64>> {
        let lower = CMatrix::from_fn(2, |i, j| if (i, j) == (0, 1) { cr(1.0) } else { C::zero() });
        vec![
            lower.scale_real((g0 * (n + 1.0)).sqrt()),
            lower.adjoint().scale_real((g0 * n).sqrt()),
        ]
    }

    #[test]
    fn rhs_vanishes_for_stationary_closed_state() {
        let h = CMatrix::from_diag(&[cr(0.5), cr(-0.5)]);
        let model = LindbladModel::with_jumps(Schedule::constant(h), vec![]).unwrap();
        let rho = CMatrix::outer(&ket_e(), &ket_e());
        assert_eq!(lindblad_rhs(&rho, &model, 0.0).frobenius_norm(), 0.0);
    }

    #[test]
    fn hermitian_jump_leaves_maximally_mixed_state() {
        let l = (&pauli::x::<f64>() + &pauli::z::<f64>()).scale_real(0.7);
        let model = LindbladModel::with_jumps(Schedule::constant(CMatrix::zeros(2)), vec![l]).unwrap();
        let rho = CMatrix::identity(2).scale_real(0.5);
        assert!(lindblad_rhs(&rho, &model, 0.0).frobenius_norm() < 1e-15);
    }

    #[test]
    fn thermal_atom_excited_state_rate() {
        // Hand expansion: L1†L1 = g0(n+1)|e><e|, L1 rho L1† = g0(n+1)|g><g|,
        // L2 rho L2† = 0  =>  d rho_ee = -2 g0 (n+1), d rho_gg = +2 g0 (n+1).
        let (g0, n) = (0.03, 2.0);
        let h = CMatrix::from_diag(&[cr(0.5), cr(-0.5)]);
        let model = LindbladModel::with_jumps(Schedule::constant(h), atom_jumps(g0, n)).unwrap();
        let rho = CMatrix::outer(&ket_e(), &ket_e());
        let d = lindblad_rhs(&rho, &model, 0.0);
        assert!((d[(1, 1)] - cr(-2.0 * g0 * (n + 1.0))).norm() < 1e-15);
        assert!((d[(0, 0)] - cr(2.0 * g0 * (n + 1.0))).norm() < 1e-15);
        assert!(d[(0, 1)].norm() < 1e-15);
        assert!(d.trace().norm() < 1e-15);
        assert!(d.is_hermitian(1e-12));
    }

    #[test]
    fn closed_limit_matches_propagator() {
        let h = CMatrix::from_real_rows(&[&[0.4, 0.3], &[0.3, -0.2]]).unwrap();
        let grid = TimeGrid::new(0.0, 5.0, 2000).unwrap();
        let model = LindbladModel::with_jumps(Schedule::constant(h.clone()), vec![]).unwrap();
        let psi = CVector::from_real(&[0.6, 0.8]).unwrap();
        let rho0 = CMatrix::outer(&psi, &psi);
        let rhos = integrate_lindblad(&model, &rho0, &grid).unwrap();
        let us = time_ordered_propagator(&Schedule::constant(h), &grid).unwrap();
        for (rho, u) in rhos.iter().zip(&us).step_by(100) {
            let expect = &(u * &rho0) * &u.adjoint();
            assert!(rho.distance(&expect) < 1e-8);
        }
    }

    #[test]
    fn spontaneous_decay_population() {
        let g0 = 0.05;
        let grid = TimeGrid::new(0.0, 10.0, 1000).unwrap();
        let h = CMatrix::from_diag(&[cr(0.5), cr(-0.5)]);
        let model = LindbladModel::with_jumps(Schedule::constant(h), atom_jumps(g0, 0.0)).unwrap();
        let rhos = integrate_lindblad(&model, &CMatrix::outer(&ket_e(), &ket_e()), &grid).unwrap();
        for (k, rho) in rhos.iter().enumerate() {
            let t = grid.time(k);
            assert!((rho[(1, 1)].re - (-2.0 * g0 * t).exp()).abs() < 1e-9);
            assert!((rho.trace().re - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dephasing_coherence_decay() {
        // L = kappa sigma_z, H = 0: d rho_01 = -4 kappa^2 rho_01.
        let kappa = 0.2;
        let grid = TimeGrid::new(0.0, 4.0, 400).unwrap();
        let model = LindbladModel::with_jumps(
            Schedule::constant(CMatrix::zeros(2)),
            vec![pauli::z::<f64>().scale_real(kappa)],
        )
        .unwrap();
        let plus = CVector::from_real(&[1.0, 1.0]).unwrap().normalized().unwrap();
        let rhos = integrate_lindblad(&model, &CMatrix::outer(&plus, &plus), &grid).unwrap();
        let t = 4.0;
        assert!((rhos.last().unwrap()[(0, 1)].re - 0.5 * (-4.0 * kappa * kappa * t).exp()).abs() < 1e-10);
    }

    #[test]
    fn unstable_step_reports_divergence() {
        let model = LindbladModel::with_jumps(
            Schedule::constant(CMatrix::zeros(2)),
            vec![pauli::z::<f64>().scale_real(30.0)],
        )
        .unwrap();
        let plus = CVector::from_real(&[1.0, 1.0]).unwrap().normalized().unwrap();
        let grid = TimeGrid::new(0.0, 100.0, 50).unwrap();
        let res = integrate_lindblad(&model, &CMatrix::outer(&plus, &plus), &grid);
        assert!(matches!(res, Err(Error::IntegrationDiverged { .. })));
    }

    #[test]
    fn invalid_initial_state_rejected() {
        let model = LindbladModel::with_jumps(Schedule::constant(CMatrix::<f64>::zeros(2)), vec![]).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let bad = CMatrix::identity(2);
        assert!(matches!(
            integrate_lindblad(&model, &bad, &grid),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn unitary_channel_conjugates() {
        let h = CMatrix::from_real_rows(&[&[0.1, 0.7], &[0.7, 0.3]]).unwrap();
        let channel = KrausChannel::new(vec![KrausElement {
            weight: 1.0,
            op: Schedule::from_fn(2, move |t| unitary_step(&h, t).unwrap()),
        }])
        .unwrap();
        let psi = CVector::from_real(&[0.6, 0.8]).unwrap();
        let rho0 = CMatrix::outer(&psi, &psi);
        let out = apply_kraus(&channel, &rho0, 1.3).unwrap();
        let u = channel.operators_at(1.3)[0].1.clone();
        assert!(out.distance(&(&(&u * &rho0) * &u.adjoint())) < 1e-14);
        assert!(apply_kraus(&channel, &rho0, 0.0).unwrap().distance(&rho0) < 1e-15);
    }

    #[test]
    fn incomplete_channel_rejected() {
        let channel = KrausChannel::new(vec![KrausElement {
            weight: 0.5,
            op: Schedule::constant(CMatrix::<f64>::identity(2)),
        }])
        .unwrap();
        let rho0 = CMatrix::identity(2).scale_real(0.5);
        assert!(matches!(
            apply_kraus(&channel, &rho0, 0.0),
            Err(Error::InvalidChannel { .. })
        ));
    }

    #[test]
    fn adapted_basis_cases() {
        let e0 = CVector::<f64>::basis(3, 0);
        let b = adapted_basis(&e0, 3).unwrap();
        for (i, v) in b.iter().enumerate() {
            assert!(v.max_abs_diff(&CVector::basis(3, i)) < 1e-15);
        }
        let r = CVector::from_real(&[1.0, 1.0]).unwrap().normalized().unwrap();
        let b = adapted_basis(&r, 2).unwrap();
        assert!(b[0].max_abs_diff(&r) < 1e-15);
        assert!(b[1].inner(&r).norm() < 1e-15);
        assert!(matches!(
            adapted_basis(&CVector::<f64>::zeros(2), 2),
            Err(Error::InvalidState(_))
        ));
        assert!(matches!(adapted_basis(&r, 3), Err(Error::DimensionError { .. })));
    }

    proptest! {
        #[test]
        fn adapted_basis_is_orthonormal(v in prop::collection::vec(-1.0f64..1.0, 10)) {
            let r = CVector::new((0..5).map(|i| c(v[2 * i], v[2 * i + 1])).collect()).unwrap();
            prop_assume!(r.norm() > 1e-3);
            let b = adapted_basis(&r, 5).unwrap();
            let rn = r.normalized().unwrap();
            prop_assert!(b[0].inner(&rn).norm() > 1.0 - 1e-12);
            for i in 0..5 {
                for j in 0..5 {
                    let g = b[i].inner(&b[j]);
                    let expect = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((g - cr(expect)).norm() < 1e-12);
                }
            }
        }
    }

    fn coupled_qubits(g: f64) -> CMatrix<f64> {
        let hs = pauli::z::<f64>().scale_real(0.5);
        let hr = pauli::z::<f64>().scale_real(0.65);
        let id = CMatrix::identity(2);
        &(&hs.kron(&id) + &id.kron(&hr)) + &pauli::x::<f64>().kron(&pauli::x()).scale_real(g)
    }

    #[test]
    fn uncoupled_trajectories_are_independent_of_reservoir_state() {
        let grid = TimeGrid::new(0.0, 3.0, 60).unwrap();
        let us = time_ordered_propagator(&Schedule::constant(coupled_qubits(0.0)), &grid).unwrap();
        let res = ReservoirSpec::diagonal(&[0.65, -0.65], &[0.3, 0.7]).unwrap();
        let psi = CVector::from_real(&[0.6, 0.8]).unwrap();
        let sys = SystemEnsemble::pure(psi.clone()).unwrap();
        let trajs = conditional_trajectories(&us, &grid, &res, &sys).unwrap();
        assert_eq!(trajs.len(), 2);
        assert_eq!(trajs[0].weight, 0.3);
        let hs = pauli::z::<f64>().scale_real(0.5);
        for k in [0, 30, 60] {
            let expect = unitary_step(&hs, grid.time(k)).unwrap().apply(&psi);
            for tr in &trajs {
                // Up to the reservoir phase e^{-i E_r t}.
                let ov = tr.trajectory.states()[k].inner(&expect).norm();
                assert!((ov - 1.0).abs() < 1e-12);
            }
        }
        for tr in &trajs {
            assert!(tr.trajectory.initial().max_abs_diff(&psi) < 1e-15);
        }
    }

    #[test]
    fn kept_and_discarded_kraus_resum_to_reduced_dynamics() {
        let u = unitary_step(&coupled_qubits(0.3), 2.1).unwrap();
        let r0 = CVector::new(vec![c(0.6, 0.0), c(0.0, 0.8)]).unwrap();
        let r1 = CVector::new(vec![c(0.0, 0.8), c(0.6, 0.0)]).unwrap();
        // Non-eigenstates are fine here: the resummation holds for any decomposition.
        let res = ReservoirSpec::new(vec![
            ReservoirState {
                weight: 0.35,
                state: r0,
                energy: 0.0,
            },
            ReservoirState {
                weight: 0.65,
                state: r1,
                energy: 1.0,
            },
        ])
        .unwrap();
        let psi = CVector::from_real(&[0.28, 0.96]).unwrap();
        let rho_s = CMatrix::outer(&psi, &psi);
        let all = conditional_kraus(&u, &res, KrausSelection::All).unwrap();
        let kept = conditional_kraus(&u, &res, KrausSelection::Kept).unwrap();
        assert_eq!(all.len(), 4);
        assert_eq!(kept.len(), 2);
        let exact = reduced_state(&u, &rho_s, &res).unwrap();
        assert!(kraus_sum(&all, &rho_s).distance(&exact) < 1e-10);
        // Discarded terms: <b_k(r)|r> = 0, so the trajectory starts at zero.
        let id = CMatrix::identity(4);
        for k in conditional_kraus(&id, &res, KrausSelection::All).unwrap() {
            let expected_norm = if k.basis_index == 0 { 2f64.sqrt() } else { 0.0 };
            assert!((k.op.frobenius_norm() - expected_norm).abs() < 1e-12);
        }
    }

    #[test]
    fn reservoir_spec_validation_and_blocks() {
        let res = ReservoirSpec::diagonal(&[0.0, 1.0, 1.0 + 1e-12, 2.0], &[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(res.blocks(), &[vec![0], vec![1, 2], vec![3]]);
        assert!(ReservoirSpec::diagonal(&[0.0, 1.0], &[0.5, 0.6]).is_err());
        assert!(ReservoirSpec::diagonal(&[0.0, 1.0], &[-0.5, 1.5]).is_err());
        let nonorth = vec![
            ReservoirState {
                weight: 0.5,
                state: CVector::basis(2, 0),
                energy: 0.0,
            },
            ReservoirState {
                weight: 0.5,
                state: CVector::from_real(&[1.0, 1.0]).unwrap().normalized().unwrap(),
                energy: 0.0,
            },
        ];
        assert!(ReservoirSpec::new(nonorth.clone()).is_err());
        assert!(ReservoirSpec::from_decomposition(nonorth).is_ok());
    }
}
