//! Per-point evaluation: exact distributions, closed-form references and
//! the second-order prediction.

use geophase::channels::{conditional_trajectories, ReservoirSpec, SystemEnsemble, WeightedTrajectory};
use geophase::distribution::{
    build_distribution, moments, redecompose, BlockMixing, MeasureKind, MomentReport, PhaseDistribution,
};
use geophase::hilbert::{matexp, time_ordered_propagator, CMatrix, TimeGrid};
use geophase::models::{
    closed_system_gp, pd_lindblad, pd_moments, pd_trajectories, se_distributions, se_first_order_gp, se_lindblad,
    zero_temperature_gp,
};
use geophase::phase::z_functional;
use geophase::weakcoupling::{build_ab, delta_z, delta_z_averaged, AveragedB};
use geophase::{Complex64, Error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{Mixing, ModelKind, Point, Scenario};

#[derive(Clone, Debug)]
pub struct Exact {
    pub z: PhaseDistribution<f64>,
    pub h: PhaseDistribution<f64>,
    pub moments: MomentReport<f64>,
}

/// Closed-form values, `None` where the model has none.
#[derive(Clone, Debug, Default)]
pub struct References {
    pub closed_form_gp_z: Option<f64>,
    pub first_order_gp_z: Option<f64>,
    pub first_order_gp_h: Option<f64>,
    pub spread_w: Option<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct Perturbative {
    pub delta_z: Complex64,
    /// `beta0 + Im<dZ>`, shared by both measures.
    pub mean_gp: f64,
    /// Size of the neglected terms: `(rate/omega)^2` for the atom models,
    /// `|dZ|^2` for a custom joint model, `None` without an exact path.
    pub expected_error: Option<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct RedecompositionResult {
    pub seed: u64,
    pub first_moment_z: Complex64,
    pub first_moment_h: Complex64,
}

#[derive(Clone, Debug)]
pub struct PointResult {
    pub point: Point,
    /// `gamma0/omega` or `alpha/omega` for the atom models.
    pub rate_ratio: Option<f64>,
    /// GP of the decoupled evolution.
    pub beta0: f64,
    pub exact: Option<Exact>,
    pub references: References,
    pub perturbative: Option<Perturbative>,
    pub redecompositions: Vec<RedecompositionResult>,
}

fn exact_from_trajectories(trajs: &[WeightedTrajectory<f64>], order: usize) -> geophase::Result<Exact> {
    let z = build_distribution(trajs, MeasureKind::Z)?;
    from_distribution(z, order)
}

fn from_distribution(z: PhaseDistribution<f64>, order: usize) -> geophase::Result<Exact> {
    let moments = moments(&z, order)?;
    let h = z.to_holevo()?;
    Ok(Exact { z, h, moments })
}

pub fn evaluate(s: &Scenario, point: &Point, seed: u64) -> geophase::Result<PointResult> {
    match s.model {
        ModelKind::SpontaneousEmission => spontaneous_emission(s, point),
        ModelKind::PhaseDamping => phase_damping(s, point),
        ModelKind::CustomJoint => custom_joint(s, point, seed),
        ModelKind::CustomLindblad => custom_lindblad(s, point),
    }
}

fn spontaneous_emission(s: &Scenario, point: &Point) -> geophase::Result<PointResult> {
    let p = s.atom_params(point)?;
    let (z, _) = se_distributions(&p)?;
    let exact = from_distribution(z, s.moment_order)?;
    let beta0 = closed_system_gp(p.theta);
    let grid = TimeGrid::new(0.0, p.period(), s.n_steps)?;
    let dz = delta_z_averaged(&AveragedB::from_lindblad(&se_lindblad(&p), &grid)?, &p.psi_s())?;
    let first_order = se_first_order_gp(&p);
    let a = p.gamma0 / p.omega;
    Ok(PointResult {
        point: point.clone(),
        rate_ratio: Some(a),
        beta0,
        exact: Some(exact),
        references: References {
            closed_form_gp_z: (p.n == 0.0).then(|| zero_temperature_gp(&p)),
            first_order_gp_z: Some(first_order),
            first_order_gp_h: Some(first_order),
            spread_w: None,
        },
        perturbative: Some(Perturbative {
            delta_z: dz,
            mean_gp: beta0 + dz.im,
            expected_error: Some(a * a),
        }),
        redecompositions: Vec::new(),
    })
}

fn phase_damping(s: &Scenario, point: &Point) -> geophase::Result<PointResult> {
    let p = s.damping_params(point)?;
    let exact = exact_from_trajectories(&pd_trajectories(&p, s.n_steps)?, s.moment_order)?;
    let reference = pd_moments(&p, s.n_steps)?;
    let grid = TimeGrid::new(0.0, p.period(), s.n_steps)?;
    let dz = delta_z_averaged(&AveragedB::from_lindblad(&pd_lindblad(&p), &grid)?, &p.psi_s())?;
    let a = p.alpha / p.omega;
    Ok(PointResult {
        point: point.clone(),
        rate_ratio: Some(a),
        beta0: reference.beta0,
        exact: Some(exact),
        references: References {
            closed_form_gp_z: None,
            first_order_gp_z: Some(reference.reference_mean_phase_z.arg()),
            first_order_gp_h: Some(reference.reference_mean_gp_h.arg()),
            spread_w: Some(reference.reference_spread),
        },
        perturbative: Some(Perturbative {
            delta_z: dz,
            mean_gp: reference.beta0 + dz.im,
            expected_error: Some(a * a),
        }),
        redecompositions: Vec::new(),
    })
}

/// `exp(iH)` for a Hermitian `H` with standard normal entries, or
/// `exp(K)` for a real antisymmetric `K` in the orthogonal case.
fn random_mixing(dim: usize, mixing: Mixing, rng: &mut ChaCha8Rng) -> geophase::Result<CMatrix<f64>> {
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    let a = match mixing {
        Mixing::Unitary => CMatrix::from_fn(dim, |_, _| Complex64::new(normal(), normal())),
        Mixing::Orthogonal => CMatrix::from_fn(dim, |_, _| Complex64::new(normal(), 0.0)),
    };
    match mixing {
        Mixing::Unitary => matexp(&(&a + &a.adjoint()).scale(Complex64::new(0.0, 0.5))),
        Mixing::Orthogonal => matexp(&(&a - &a.adjoint()).scale_real(0.5)),
    }
}

fn custom_joint(s: &Scenario, point: &Point, seed: u64) -> geophase::Result<PointResult> {
    let model = s.joint_model(point)?;
    let psi = s.psi_s(point);
    let grid = TimeGrid::new(0.0, s.t_end, s.n_steps)?;
    let us = time_ordered_propagator(&model.joint_hamiltonian(), &grid)?;
    let system = SystemEnsemble::pure(psi.clone())?;
    let trajectories = |r: &ReservoirSpec<f64>| conditional_trajectories(&us, &grid, r, &system);
    let exact = exact_from_trajectories(&trajectories(model.reservoir())?, s.moment_order)?;

    let ops = build_ab(&model, &grid)?;
    let avg = AveragedB::from_operators(&ops, model.reservoir())?;
    let beta0 = z_functional(&avg.unperturbed_trajectory(&psi)?)?.beta;
    let dz = delta_z(&ops, &model)?;

    let mut redecompositions = Vec::new();
    if let Some(r) = s.redecomposition {
        let size = model.reservoir().blocks()[r.block].len();
        for k in 0..r.count as u64 {
            let seed = seed.wrapping_add(k);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mixing = random_mixing(size, r.mixing, &mut rng)?;
            let res = redecompose(model.reservoir(), &[BlockMixing { block: r.block, mixing }])?;
            let trajs = trajectories(&res)?;
            redecompositions.push(RedecompositionResult {
                seed,
                first_moment_z: build_distribution(&trajs, MeasureKind::Z)?.moment(1),
                first_moment_h: build_distribution(&trajs, MeasureKind::H)?.moment(1),
            });
        }
    }

    Ok(PointResult {
        point: point.clone(),
        rate_ratio: None,
        beta0,
        exact: Some(exact),
        references: References::default(),
        perturbative: Some(Perturbative {
            delta_z: dz,
            mean_gp: beta0 + dz.im,
            expected_error: Some(dz.norm_sqr()),
        }),
        redecompositions,
    })
}

fn custom_lindblad(s: &Scenario, point: &Point) -> geophase::Result<PointResult> {
    let model = s.lindblad_model(point)?;
    let psi = s.psi_s(point);
    let grid = TimeGrid::new(0.0, s.t_end, s.n_steps)?;
    let avg = AveragedB::from_lindblad(&model, &grid)?;
    let beta0 = z_functional(&avg.unperturbed_trajectory(&psi)?)?.beta;
    let dz = delta_z_averaged(&avg, &psi)?;
    if !dz.is_finite() {
        return Err(Error::InvalidOperand("non-finite perturbative correction".into()));
    }
    Ok(PointResult {
        point: point.clone(),
        rate_ratio: None,
        beta0,
        exact: None,
        references: References::default(),
        perturbative: Some(Perturbative {
            delta_z: dz,
            mean_gp: beta0 + dz.im,
            expected_error: None,
        }),
        redecompositions: Vec::new(),
    })
}
