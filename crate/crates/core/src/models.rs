//! Two-level atom models with closed-form phase distributions.
//!
//! Basis ordering is `(|g>, |e>)` with `sigma_z = |e><e| - |g><g|` and
//! `H_S = -(omega/2) sigma_z`. The initial state is
//! `|psi_S> = sin(theta/2)|g> + cos(theta/2)|e>`, whose closed-system phase
//! after one period is `2 pi sin^2(theta/2)`.

use num_traits::{One, Zero};

use crate::channels::{KrausChannel, KrausElement, LindbladModel, ReservoirSpec, WeightedTrajectory};
use crate::distribution::{build_distribution_with, moments, Atom, MeasureKind, MomentReport, PhaseDistribution};
use crate::error::{Error, Result};
use crate::hilbert::{CMatrix, CVector, Schedule, TimeGrid};
use crate::phase::{Quadrature, Trajectory};
use crate::scalar::{c, cis, Real, C};
use crate::weakcoupling::{Coupling, WeakCouplingModel};

/// `sigma_z = diag(-1, 1)` in the `(g, e)` basis.
pub fn atom_sigma_z<T: Real>() -> CMatrix<T> {
    CMatrix::from_diag(&[c(-T::one(), T::zero()), C::one()])
}

/// `|g><e|`.
pub fn atom_lowering<T: Real>() -> CMatrix<T> {
    CMatrix::from_fn(2, |i, j| if (i, j) == (0, 1) { C::one() } else { C::zero() })
}

/// `|e><e|`.
pub fn excited_projector<T: Real>() -> CMatrix<T> {
    CMatrix::from_diag(&[C::zero(), C::one()])
}

/// `-(omega/2) sigma_z`.
pub fn atom_hamiltonian<T: Real>(omega: T) -> CMatrix<T> {
    atom_sigma_z::<T>().scale_real(-omega / T::lit(2.0))
}

/// `sin(theta/2)|g> + cos(theta/2)|e>`.
pub fn atom_state<T: Real>(theta: T) -> CVector<T> {
    let half = theta / T::lit(2.0);
    CVector::from_real(&[half.sin(), half.cos()]).expect("two finite amplitudes")
}

/// `2 pi sin^2(theta/2)`, unwrapped to `[0, 2 pi]`.
pub fn closed_system_gp<T: Real>(theta: T) -> T {
    T::lit(2.0) * T::PI() * (theta / T::lit(2.0)).sin().powi(2)
}

fn check_common<T: Real>(omega: T, theta: T) -> Result<()> {
    if !(omega > T::zero()) || !omega.is_finite() {
        return Err(Error::InvalidParameter(format!("omega = {omega} must be positive")));
    }
    if !(theta >= T::zero() && theta <= T::PI()) {
        return Err(Error::InvalidParameter(format!("theta = {theta} outside [0, pi]")));
    }
    Ok(())
}

fn check_rate<T: Real>(name: &str, value: T) -> Result<()> {
    if !(value >= T::zero()) || !value.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "{name} = {value} must be non-negative"
        )));
    }
    Ok(())
}

/// Two-level atom coupled to a thermal radiation field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoLevelAtomParams<T> {
    pub omega: T,
    pub gamma0: T,
    /// Mean thermal photon number.
    pub n: T,
    pub theta: T,
}

impl<T: Real> TwoLevelAtomParams<T> {
    pub fn new(omega: T, gamma0: T, n: T, theta: T) -> Result<Self> {
        check_common(omega, theta)?;
        check_rate("gamma0", gamma0)?;
        check_rate("n", n)?;
        Ok(Self {
            omega,
            gamma0,
            n,
            theta,
        })
    }

    /// `(2n + 1) gamma0`.
    pub fn gamma_n(&self) -> T {
        (T::lit(2.0) * self.n + T::one()) * self.gamma0
    }

    /// `2 pi / omega`.
    pub fn period(&self) -> T {
        T::lit(2.0) * T::PI() / self.omega
    }

    pub fn psi_s(&self) -> CVector<T> {
        atom_state(self.theta)
    }

    /// `(p0, p2) = ((n+1)/(2n+1), n/(2n+1))`; `p1 = p0`, `p3 = p2`.
    pub fn weights(&self) -> (T, T) {
        let d = T::lit(2.0) * self.n + T::one();
        ((self.n + T::one()) / d, self.n / d)
    }
}

/// Atom under phase damping.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseDampingParams<T> {
    pub omega: T,
    pub alpha: T,
    pub theta: T,
}

impl<T: Real> PhaseDampingParams<T> {
    pub fn new(omega: T, alpha: T, theta: T) -> Result<Self> {
        check_common(omega, theta)?;
        check_rate("alpha", alpha)?;
        Ok(Self { omega, alpha, theta })
    }

    pub fn period(&self) -> T {
        T::lit(2.0) * T::PI() / self.omega
    }

    pub fn psi_s(&self) -> CVector<T> {
        atom_state(self.theta)
    }

    /// `r = (1 + sqrt(1 - e^{-2 alpha t}))^{1/2}`, in `[1, sqrt 2]`.
    pub fn r_factor(&self, t: T) -> T {
        let x = -(T::lit(-2.0) * self.alpha * t).exp_m1();
        (T::one() + x.max(T::zero()).sqrt()).sqrt()
    }
}

fn diag2<T: Real>(g: C<T>, e: C<T>) -> CMatrix<T> {
    CMatrix::from_diag(&[g, e])
}

/// `e^{i phase - decay}`.
fn damped<T: Real>(phase: T, decay: T) -> C<T> {
    cis(phase) * (-decay).exp()
}

/// The four weighted Kraus operators of thermal spontaneous emission.
pub fn se_kraus_channel<T: Real>(p: &TwoLevelAtomParams<T>) -> KrausChannel<T> {
    let (p0, p2) = p.weights();
    let (w, g) = (p.omega, p.gamma_n());
    let half = T::lit(0.5);
    let jump = move |t: T| (-(T::lit(-2.0) * g * t).exp_m1()).max(T::zero()).sqrt();
    let k0 = Schedule::from_fn(2, move |t: T| {
        diag2(damped(-w * t * half, T::zero()), damped(w * t * half, g * t))
    });
    let k1 = Schedule::from_fn(2, move |t: T| atom_lowering::<T>().scale_real(jump(t)));
    let k2 = Schedule::from_fn(2, move |t: T| {
        diag2(damped(-w * t * half, g * t), damped(w * t * half, T::zero()))
    });
    let k3 = Schedule::from_fn(2, move |t: T| atom_lowering::<T>().adjoint().scale_real(jump(t)));
    KrausChannel::new(vec![
        KrausElement { weight: p0, op: k0 },
        KrausElement { weight: p0, op: k1 },
        KrausElement { weight: p2, op: k2 },
        KrausElement { weight: p2, op: k3 },
    ])
    .expect("four 2x2 operators with non-negative weights")
}

/// `L1 = sqrt(gamma0 (n+1)) |g><e|`, `L2 = sqrt(gamma0 n) |e><g|`.
pub fn se_lindblad<T: Real>(p: &TwoLevelAtomParams<T>) -> LindbladModel<T> {
    let lower = atom_lowering::<T>();
    LindbladModel::with_jumps(
        Schedule::constant(atom_hamiltonian(p.omega)),
        vec![
            lower.scale_real((p.gamma0 * (p.n + T::one())).sqrt()),
            lower.adjoint().scale_real((p.gamma0 * p.n).sqrt()),
        ],
    )
    .expect("2x2 operators")
}

/// `ln <psi_S| e^{k sigma_z} |psi_S>`, accurate for small `k`.
fn ln_sigma_z_mean<T: Real>(theta: T, k: T) -> T {
    let half = theta / T::lit(2.0);
    let (c2, s2) = (half.cos().powi(2), half.sin().powi(2));
    (c2 * k.exp_m1() + s2 * (-k).exp_m1()).ln_1p()
}

/// `f_+` (sign `+1`) or `f_-` (sign `-1`):
///
/// ```text
/// f_± = -e^{-pi g} <e^{∓ pi g sigma_z}> <e^{∓ 2 pi g sigma_z}>^{± i/(2g)},  g = gamma_n/omega
/// ```
///
/// The base of the complex power is a positive real, so the principal real
/// logarithm applies. At `g = 0` both reduce to `e^{2 pi i sin^2(theta/2)}`.
pub fn se_f<T: Real>(p: &TwoLevelAtomParams<T>, sign: T) -> C<T> {
    let g = p.gamma_n() / p.omega;
    let pi = T::PI();
    if g.is_zero() {
        return cis(closed_system_gp(p.theta));
    }
    let modulus = (-pi * g + ln_sigma_z_mean(p.theta, -sign * pi * g)).exp();
    let phase = sign * ln_sigma_z_mean(p.theta, -sign * T::lit(2.0) * pi * g) / (T::lit(2.0) * g);
    -cis(phase) * modulus
}

/// `P_Z` and `P_H` at `t = 2 pi/omega` from the closed forms. The `K_0` atom
/// is `f_+` with weight `p0`; the `K_2` atom is `f_-` with weight `p2`.
/// `K_1` and `K_3` trajectories start at the zero vector and are excluded;
/// `p0 + p2 = 1` keeps the weights normalized. Zero-weight atoms are dropped.
pub fn se_distributions<T: Real>(p: &TwoLevelAtomParams<T>) -> Result<(PhaseDistribution<T>, PhaseDistribution<T>)> {
    let (p0, p2) = p.weights();
    let mut atoms = vec![Atom {
        weight: p0,
        value: se_f(p, T::one()),
        label: Some((0, 0)),
    }];
    if p2 > T::zero() {
        atoms.push(Atom {
            weight: p2,
            value: se_f(p, -T::one()),
            label: Some((2, 0)),
        });
    }
    let z = PhaseDistribution::new(MeasureKind::Z, atoms)?;
    let h = z.to_holevo()?;
    Ok((z, h))
}

/// `pi + (omega/2 gamma0) ln <psi_S| e^{-2 pi gamma0 sigma_z/omega} |psi_S>`,
/// the zero-temperature phase of the `K_0` atom (unwrapped).
pub fn zero_temperature_gp<T: Real>(p: &TwoLevelAtomParams<T>) -> T {
    let g = p.gamma0 / p.omega;
    if g.is_zero() {
        return T::PI() - T::PI() * p.theta.cos();
    }
    T::PI() + ln_sigma_z_mean(p.theta, T::lit(-2.0) * T::PI() * g) / (T::lit(2.0) * g)
}

/// First-order mean phase `beta0 + pi^2 (gamma0/omega) sin^2 theta`.
pub fn se_first_order_gp<T: Real>(p: &TwoLevelAtomParams<T>) -> T {
    closed_system_gp(p.theta) + T::PI() * T::PI() * p.gamma0 / p.omega * p.theta.sin().powi(2)
}

/// Kept trajectories `K_i(t)|psi_S>` (`i = 0, 2`) on `n_steps` over one period.
pub fn se_trajectories<T: Real>(p: &TwoLevelAtomParams<T>, n_steps: usize) -> Result<Vec<WeightedTrajectory<T>>> {
    let grid = TimeGrid::new(T::zero(), p.period(), n_steps)?;
    let channel = se_kraus_channel(p);
    kept_trajectories(&channel, &[0, 2], &grid, &p.psi_s())
}

fn kept_trajectories<T: Real>(
    channel: &KrausChannel<T>,
    kept: &[usize],
    grid: &TimeGrid<T>,
    psi: &CVector<T>,
) -> Result<Vec<WeightedTrajectory<T>>> {
    let mut out = Vec::new();
    for &i in kept {
        let e = &channel.elements()[i];
        if e.weight.is_zero() {
            continue;
        }
        let op = e.op.clone();
        let trajectory = Trajectory::from_fn(*grid, |t| op.eval(t).apply(psi))?;
        out.push(WeightedTrajectory {
            weight: e.weight,
            reservoir_index: i,
            system_index: 0,
            trajectory,
        });
    }
    Ok(out)
}

/// The two weighted Kraus operators of phase damping.
pub fn pd_kraus_channel<T: Real>(p: &PhaseDampingParams<T>) -> KrausChannel<T> {
    let q = *p;
    let half = T::lit(0.5);
    let k0 = Schedule::from_fn(2, move |t: T| {
        let r = q.r_factor(t);
        diag2(
            damped(-q.omega * t * half, q.alpha * t) / r,
            cis(q.omega * t * half) * r,
        )
    });
    let k1 = Schedule::from_fn(2, move |t: T| {
        let r = q.r_factor(t);
        diag2(
            cis(-q.omega * t * half) * r,
            damped(q.omega * t * half, q.alpha * t) / r,
        )
    });
    KrausChannel::new(vec![
        KrausElement { weight: half, op: k0 },
        KrausElement { weight: half, op: k1 },
    ])
    .expect("two 2x2 operators")
}

/// `L = (sqrt(alpha)/2) sigma_z`, the master equation generated by
/// [`pd_kraus_channel`]: coherences decay as `e^{-alpha t}`.
pub fn pd_lindblad<T: Real>(p: &PhaseDampingParams<T>) -> LindbladModel<T> {
    LindbladModel::with_jumps(
        Schedule::constant(atom_hamiltonian(p.omega)),
        vec![atom_sigma_z::<T>().scale_real(p.alpha.sqrt() / T::lit(2.0))],
    )
    .expect("2x2 operators")
}

/// Exact phase-damping moments at one period next to the first-order
/// reference expressions.
#[derive(Clone, Debug)]
pub struct PdMoments<T> {
    pub beta0: T,
    pub exact: MomentReport<T>,
    /// `e^{i beta0} (1 + (2 i pi^2 a/3) cos(theta) sin^2(theta))`, `a = alpha/omega`.
    pub reference_mean_phase_z: C<T>,
    /// `e^{i beta0} (1 + 2 pi^2 a sin^2(theta) (i cos(theta) - (4/9) sin^2(theta)))`.
    pub reference_mean_gp_h: C<T>,
    /// `16 pi^2 sin^4(theta) a / 9`.
    pub reference_spread: T,
}

impl<T: Real> PdMoments<T> {
    /// `e^{-i beta0} e^{i <beta>} - 1` for the exact and reference values.
    pub fn z_corrections(&self) -> (C<T>, C<T>) {
        let rot = cis(-self.beta0);
        (
            self.exact.mean_phase_z() * rot - C::one(),
            self.reference_mean_phase_z * rot - C::one(),
        )
    }

    /// `e^{-i beta0} <e^{i beta}> - 1` for the exact and reference values.
    pub fn h_corrections(&self) -> (C<T>, C<T>) {
        let rot = cis(-self.beta0);
        (
            self.exact.mean_gp_h * rot - C::one(),
            self.reference_mean_gp_h * rot - C::one(),
        )
    }
}

/// Phase-damping trajectories `K_i(t)|psi_S>` over one period.
pub fn pd_trajectories<T: Real>(p: &PhaseDampingParams<T>, n_steps: usize) -> Result<Vec<WeightedTrajectory<T>>> {
    let grid = TimeGrid::new(T::zero(), p.period(), n_steps)?;
    kept_trajectories(&pd_kraus_channel(p), &[0, 1], &grid, &p.psi_s())
}

pub fn pd_moments<T: Real>(p: &PhaseDampingParams<T>, n_steps: usize) -> Result<PdMoments<T>> {
    let trajs = pd_trajectories(p, n_steps)?;
    let dist = build_distribution_with(&trajs, MeasureKind::Z, Quadrature::Connection)?;
    let exact = moments(&dist, 2)?;
    let beta0 = closed_system_gp(p.theta);
    let a = p.alpha / p.omega;
    let (s, co) = (p.theta.sin(), p.theta.cos());
    let pi2 = T::PI() * T::PI();
    let e0 = cis(beta0);
    let i = c(T::zero(), T::one());
    let two = T::lit(2.0);
    let reference_mean_phase_z = e0 * (C::<T>::one() + i * (two * pi2 * a / T::lit(3.0) * co * s * s));
    let reference_mean_gp_h = e0 * (C::<T>::one() + c(-T::lit(4.0 / 9.0) * s * s, co) * (two * pi2 * a * s * s));
    let reference_spread = T::lit(16.0) * pi2 * s.powi(4) * a / T::lit(9.0);
    Ok(PdMoments {
        beta0,
        exact,
        reference_mean_phase_z,
        reference_mean_gp_h,
        reference_spread,
    })
}

/// Number operator `diag(0, 1, ..., d-1)` of a truncated oscillator.
pub fn number_operator<T: Real>(dim: usize) -> CMatrix<T> {
    CMatrix::from_fn(dim, |i, j| {
        if i == j {
            c(T::from_usize(i).unwrap_or_else(T::zero), T::zero())
        } else {
            C::zero()
        }
    })
}

/// Truncated annihilation operator `b`.
pub fn annihilation<T: Real>(dim: usize) -> CMatrix<T> {
    CMatrix::from_fn(dim, |i, j| {
        if j == i + 1 {
            c(T::from_usize(j).unwrap_or_else(T::zero).sqrt(), T::zero())
        } else {
            C::zero()
        }
    })
}

/// Thermal Fock populations `n^k/(n+1)^{k+1}`, renormalized on `dim` levels.
pub fn thermal_populations<T: Real>(n: T, dim: usize) -> Vec<T> {
    let ratio = if n.is_zero() { T::zero() } else { n / (n + T::one()) };
    let raw: Vec<T> = (0..dim).map(|k| ratio.powi(k as i32)).collect();
    let total = raw.iter().fold(T::zero(), |a, &b| a + b);
    raw.into_iter().map(|x| x / total).collect()
}

fn oscillator_reservoir<T: Real>(omega_r: T, n: T, dim: usize) -> Result<(CMatrix<T>, ReservoirSpec<T>)> {
    if dim < 2 {
        return Err(Error::InvalidParameter(
            "oscillator truncation needs at least two levels".into(),
        ));
    }
    let energies: Vec<T> = (0..dim)
        .map(|k| omega_r * T::from_usize(k).unwrap_or_else(T::zero))
        .collect();
    let h_r = number_operator::<T>(dim).scale_real(omega_r);
    Ok((h_r, ReservoirSpec::diagonal(&energies, &thermal_populations(n, dim))?))
}

/// Atom dephased by one thermal oscillator, `H_I = -sigma_z ⊗ g a†a`.
/// `<k|a†a|k> = k`, so the weak-coupling phase formula does not apply.
pub fn thermal_dephasing_bath<T: Real>(
    p: &PhaseDampingParams<T>,
    omega_r: T,
    g: T,
    n: T,
    dim: usize,
) -> Result<WeakCouplingModel<T>> {
    let (h_r, res) = oscillator_reservoir(omega_r, n, dim)?;
    WeakCouplingModel::new(
        Schedule::constant(atom_hamiltonian(p.omega)),
        h_r,
        vec![Coupling {
            system: atom_sigma_z(),
            reservoir: number_operator::<T>(dim).scale_real(g),
        }],
        res,
        p.psi_s(),
    )
}

/// Atom exchanging excitations with one resonant oscillator,
/// `H_I = -(sigma_- ⊗ g b† + sigma_+ ⊗ g b)`. Fock states satisfy
/// `<k|b|k> = 0`.
pub fn emission_bath<T: Real>(p: &TwoLevelAtomParams<T>, g: T, dim: usize) -> Result<WeakCouplingModel<T>> {
    let (h_r, res) = oscillator_reservoir(p.omega, p.n, dim)?;
    let b = annihilation::<T>(dim);
    WeakCouplingModel::new(
        Schedule::constant(atom_hamiltonian(p.omega)),
        h_r,
        vec![
            Coupling {
                system: atom_lowering(),
                reservoir: b.adjoint().scale_real(g),
            },
            Coupling {
                system: atom_lowering::<T>().adjoint(),
                reservoir: b.scale_real(g),
            },
        ],
        res,
        p.psi_s(),
    )
}
