//! Geometric-phase distributions built from weighted trajectories.
//!
//! `P_Z` keeps the complex values `Z[psi_{r,s}]`; `P_H` keeps only their
//! phases `Z/|Z|`. The mean phase of `P_Z` is `arg <z>`, the spread of `P_H`
//! is `W = |<e^{i beta}>|^{-2} - 1`.

use num_traits::{One, Zero};

use crate::channels::{same_energy, ReservoirSpec, ReservoirState, WeightedTrajectory};
use crate::error::{Error, Result};
use crate::hilbert::{partial_inner, CMatrix, CVector};
use crate::phase::{evaluate_z, principal_angle, Quadrature, Z_RELATIVE_THRESHOLD};
use crate::scalar::{cr, Real, C};

/// Tolerance on the total weight of a distribution.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-10;
/// Tolerance on `|value| = 1` for `H`-valued atoms.
pub const UNIT_CIRCLE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MeasureKind {
    /// Complex values `Z[psi]`.
    Z,
    /// Unit phases `Z[psi]/|Z[psi]|`.
    H,
}

/// `(reservoir index, system index)` of the trajectory behind an atom.
pub type AtomLabel = (usize, usize);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Atom<T> {
    pub weight: T,
    pub value: C<T>,
    pub label: Option<AtomLabel>,
}

impl<T: Real> Atom<T> {
    pub fn new(weight: T, value: C<T>) -> Self {
        Self {
            weight,
            value,
            label: None,
        }
    }
}

/// A finite weighted sum of delta functions on the complex plane.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseDistribution<T> {
    kind: MeasureKind,
    atoms: Vec<Atom<T>>,
}

impl<T: Real> PhaseDistribution<T> {
    pub fn new(kind: MeasureKind, atoms: Vec<Atom<T>>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidState("distribution without atoms".into()));
        }
        let mut total = T::zero();
        for a in &atoms {
            if !(a.weight >= T::zero()) || !a.value.re.is_finite() || !a.value.im.is_finite() {
                return Err(Error::InvalidState(format!(
                    "invalid atom (weight {}, value {})",
                    a.weight, a.value
                )));
            }
            if kind == MeasureKind::H && (a.value.norm() - T::one()).abs() > T::tol(UNIT_CIRCLE_TOLERANCE) {
                return Err(Error::InvalidState(format!(
                    "H-valued atom {} is off the unit circle",
                    a.value
                )));
            }
            total = total + a.weight;
        }
        if (total - T::one()).abs() > T::tol(WEIGHT_SUM_TOLERANCE) {
            return Err(Error::InvalidState(format!("atom weights sum to {total}, expected 1")));
        }
        Ok(Self { kind, atoms })
    }

    pub fn kind(&self) -> MeasureKind {
        self.kind
    }

    pub fn atoms(&self) -> &[Atom<T>] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// `sum_k w_k value_k^n`.
    pub fn moment(&self, n: i32) -> C<T> {
        self.atoms
            .iter()
            .fold(C::zero(), |acc, a| acc + a.value.powi(n) * a.weight)
    }

    /// Projects every atom onto the unit circle. Fails with `UndefinedGP` if
    /// an atom is too close to zero to carry a phase.
    pub fn to_holevo(&self) -> Result<Self> {
        if self.kind == MeasureKind::H {
            return Ok(self.clone());
        }
        let scale = self.atoms.iter().fold(T::zero(), |m, a| m.max(a.value.norm()));
        let threshold = T::lit(Z_RELATIVE_THRESHOLD) * scale.max(T::one());
        let atoms = self
            .atoms
            .iter()
            .map(|a| {
                let m = a.value.norm();
                if m < threshold {
                    Err(Error::UndefinedGP {
                        modulus: m.to_f64_lossy(),
                        threshold: threshold.to_f64_lossy(),
                    })
                } else {
                    Ok(Atom {
                        value: a.value / m,
                        ..*a
                    })
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            kind: MeasureKind::H,
            atoms,
        })
    }

    /// Combines atoms whose values differ by less than `tol`. Labels of
    /// merged atoms are dropped.
    pub fn merged(&self, tol: T) -> Self {
        let mut out: Vec<Atom<T>> = Vec::new();
        for a in &self.atoms {
            match out.iter_mut().find(|b| (b.value - a.value).norm() < tol) {
                Some(b) => {
                    b.weight = b.weight + a.weight;
                    b.label = None;
                }
                None => out.push(*a),
            }
        }
        Self {
            kind: self.kind,
            atoms: out,
        }
    }
}

/// One atom per trajectory, valued `Z[psi]` or `Z[psi]/|Z[psi]|`.
///
/// A `Z`-valued atom may be zero; an `H`-valued build fails with
/// `UndefinedGP` on such a trajectory.
pub fn build_distribution<T: Real>(trajs: &[WeightedTrajectory<T>], kind: MeasureKind) -> Result<PhaseDistribution<T>> {
    build_distribution_with(trajs, kind, Quadrature::default())
}

pub fn build_distribution_with<T: Real>(
    trajs: &[WeightedTrajectory<T>],
    kind: MeasureKind,
    quadrature: Quadrature,
) -> Result<PhaseDistribution<T>> {
    let Some(first) = trajs.first() else {
        return Err(Error::InvalidState("no trajectories".into()));
    };
    let grid = *first.trajectory.grid();
    let mut atoms = Vec::with_capacity(trajs.len());
    for wt in trajs {
        if *wt.trajectory.grid() != grid {
            return Err(Error::InvalidOperand("trajectories on different grids".into()));
        }
        let eval = evaluate_z(&wt.trajectory, quadrature);
        let z = eval.result.z;
        let value = match kind {
            MeasureKind::Z => z,
            MeasureKind::H => {
                if !eval.is_defined() {
                    return Err(Error::UndefinedGP {
                        modulus: z.norm().to_f64_lossy(),
                        threshold: eval.threshold.to_f64_lossy(),
                    });
                }
                z / z.norm()
            }
        };
        atoms.push(Atom {
            weight: wt.weight,
            value,
            label: Some((wt.reservoir_index, wt.system_index)),
        });
    }
    PhaseDistribution::new(kind, atoms)
}

/// Moments, mean phases and spread of a distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentReport<T> {
    /// `arg <z>` in `(-pi, pi]`.
    pub mean_gp_z: T,
    /// `<e^{i beta}> = sum_k w_k Z_k/|Z_k|`.
    pub mean_gp_h: C<T>,
    /// `|<e^{i beta}>|^{-2} - 1`.
    pub spread_w: T,
    /// `<z^n>` for `n = 1..=n_max`.
    pub z_moments: Vec<C<T>>,
    /// `<z^n>/|<z>|^n` for `n = 1..=n_max`.
    pub normalized_z_moments: Vec<C<T>>,
    /// `<e^{i n s}>` for `n = 1..=n_max`.
    pub h_moments: Vec<C<T>>,
}

impl<T: Real> MomentReport<T> {
    /// `e^{i <beta>}`.
    pub fn mean_phase_z(&self) -> C<T> {
        self.normalized_z_moments[0]
    }
}

/// Moments up to order `n_max >= 1`. For an `H`-valued input the `z` fields
/// describe the unit-modulus atoms themselves.
pub fn moments<T: Real>(dist: &PhaseDistribution<T>, n_max: usize) -> Result<MomentReport<T>> {
    if n_max == 0 {
        return Err(Error::InvalidParameter("moment order must be at least 1".into()));
    }
    let z1 = dist.moment(1);
    let scale = dist
        .atoms()
        .iter()
        .fold(T::zero(), |acc, a| acc + a.weight * a.value.norm());
    let threshold = T::lit(Z_RELATIVE_THRESHOLD) * scale;
    if !(z1.norm() > threshold) || z1.norm().is_zero() {
        return Err(Error::UndefinedGP {
            modulus: z1.norm().to_f64_lossy(),
            threshold: threshold.to_f64_lossy(),
        });
    }
    let h = dist.to_holevo()?;
    let orders = 1..=n_max as i32;
    let z_moments: Vec<C<T>> = orders.clone().map(|n| dist.moment(n)).collect();
    let normalized_z_moments = z_moments
        .iter()
        .zip(orders.clone())
        .map(|(m, n)| m / z1.norm().powi(n))
        .collect();
    let h_moments: Vec<C<T>> = orders.map(|n| h.moment(n)).collect();
    let h1 = h_moments[0];
    // A single atom is sharp by construction; skip the rounding in |h1|^-2.
    let spread_w = if dist.len() == 1 {
        T::zero()
    } else {
        (T::one() / h1.norm_sqr() - T::one()).max(T::zero())
    };
    Ok(MomentReport {
        mean_gp_z: principal_angle(z1.arg()),
        mean_gp_h: h1,
        spread_w,
        z_moments,
        normalized_z_moments,
        h_moments,
    })
}

/// `D(E) sum_{r in block} p_r <psi_S|<r|U|r>|psi_S>`, the contribution of one
/// degenerate reservoir block to `<z>`.
///
/// `dynamic_factor` is the common `D(E)` of the block; `None` means the block
/// states are parallel transported (`D = 1`).
pub fn block_first_moment<T: Real>(
    u: &CMatrix<T>,
    reservoir: &ReservoirSpec<T>,
    psi_s: &CVector<T>,
    block: &[usize],
    dynamic_factor: Option<C<T>>,
) -> Result<C<T>> {
    let Some(&head) = block.first() else {
        return Err(Error::InvalidBlock("empty block".into()));
    };
    let states = reservoir.states();
    if let Some(&bad) = block.iter().find(|&&i| i >= states.len()) {
        return Err(Error::InvalidBlock(format!("index {bad} out of range")));
    }
    let energy = states[head].energy;
    if let Some(&bad) = block.iter().find(|&&i| !same_energy(energy, states[i].energy)) {
        return Err(Error::InvalidBlock(format!(
            "state {bad} has energy {} but the block energy is {energy}",
            states[bad].energy
        )));
    }
    let mut sum: C<T> = C::zero();
    for &i in block {
        let k = partial_inner(&states[i].state, u, &states[i].state)?;
        sum = sum + k.expectation(psi_s) * states[i].weight;
    }
    Ok(sum * dynamic_factor.unwrap_or_else(C::one))
}

/// Replaces the states of one degenerate block by another pure-state
/// decomposition of the same block density matrix.
///
/// `mixing` is a unitary `V` on the block indices; the new unnormalized
/// states are `v_k = sum_j V_kj sqrt(p_j) |r_j>` with weights `||v_k||^2`.
#[derive(Clone, Debug)]
pub struct BlockMixing<T> {
    pub block: usize,
    pub mixing: CMatrix<T>,
}

/// Applies block mixings and checks that `rho_R` is reproduced within `1e-12`.
pub fn redecompose<T: Real>(reservoir: &ReservoirSpec<T>, mixings: &[BlockMixing<T>]) -> Result<ReservoirSpec<T>> {
    let blocks = reservoir.blocks();
    let old = reservoir.states();
    let mut replaced: Vec<Option<Vec<ReservoirState<T>>>> = vec![None; blocks.len()];
    for m in mixings {
        let Some(block) = blocks.get(m.block) else {
            return Err(Error::InvalidBlock(format!("no block {}", m.block)));
        };
        if m.mixing.dim() != block.len() {
            return Err(Error::DimensionError {
                expected: block.len(),
                found: m.mixing.dim(),
                context: "block mixing matrix",
            });
        }
        let energy = old[block[0]].energy;
        let mut states = Vec::with_capacity(block.len());
        for k in 0..block.len() {
            let v = block
                .iter()
                .enumerate()
                .fold(CVector::zeros(reservoir.dim()), |acc, (j, &idx)| {
                    &acc + &old[idx].state.scale(m.mixing[(k, j)] * old[idx].weight.sqrt())
                });
            let weight = v.norm_sqr();
            if weight > T::epsilon() {
                states.push(ReservoirState {
                    weight,
                    state: v.scale(cr(T::one() / weight.sqrt())),
                    energy,
                });
            }
        }
        replaced[m.block] = Some(states);
    }
    let mut states = Vec::with_capacity(old.len());
    let mut emitted = vec![false; blocks.len()];
    for (i, s) in old.iter().enumerate() {
        let b = blocks.iter().position(|blk| blk.contains(&i)).unwrap_or(0);
        match &replaced[b] {
            Some(new) => {
                if !emitted[b] {
                    states.extend(new.iter().cloned());
                    emitted[b] = true;
                }
            }
            None => states.push(s.clone()),
        }
    }
    let total = states.iter().fold(T::zero(), |acc, s| acc + s.weight);
    let deviation = (&reservoir.density_matrix()
        - &states.iter().fold(CMatrix::zeros(reservoir.dim()), |acc, s| {
            &acc + &CMatrix::outer(&s.state, &s.state).scale_real(s.weight)
        }))
        .frobenius_norm();
    if !(deviation <= T::tol(1e-12)) || (total - T::one()).abs() > T::tol(1e-12) {
        return Err(Error::InvalidDecomposition {
            deviation: deviation.max((total - T::one()).abs()).to_f64_lossy(),
        });
    }
    ReservoirSpec::from_decomposition(states)
}
