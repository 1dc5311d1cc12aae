//! Run reports: branch bookkeeping, the JSON schema and the CSV tables.

use std::collections::BTreeMap;
use std::io::Write;

use geophase::distribution::PhaseDistribution;
use geophase::phase::{principal_angle, unwrap_near};
use geophase::Complex64;
use serde::Serialize;

use crate::config::{ModelKind, Scenario, SCHEMA_VERSION};
use crate::evaluate::PointResult;

/// A comparison row is flagged when the exact-vs-perturbative gap exceeds
/// this multiple of the expected second-order size.
pub const ORDER_FACTOR: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    Run,
    Compare,
}

#[derive(Clone, Debug, Serialize)]
pub struct Conventions {
    pub angles: &'static str,
    pub principal_branch: &'static str,
    pub unwrapped_branch: &'static str,
    pub measures: &'static str,
}

const CONVENTIONS: Conventions = Conventions {
    angles: "radians",
    principal_branch: "(-pi, pi]",
    unwrapped_branch: "nearest branch to the same quantity at the previous sweep point; the first point uses beta0",
    measures: "Z: arg <z> over P_Z; H: arg <e^{i beta}> over P_H; ZH: shared by both measures",
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Angle {
    pub principal: f64,
    pub unwrapped: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AtomReport {
    pub reservoir_index: Option<usize>,
    pub system_index: Option<usize>,
    pub weight: f64,
    pub value: [f64; 2],
    pub phase: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MomentRow {
    pub order: usize,
    pub z: [f64; 2],
    pub normalized_z: [f64; 2],
    pub h: [f64; 2],
}

#[derive(Clone, Debug, Serialize)]
pub struct ExactReport {
    pub mean_gp_z: Angle,
    pub mean_gp_h: Angle,
    pub mean_exp_ibeta_h: [f64; 2],
    pub abs_mean_exp_ibeta_h: f64,
    pub spread_w: f64,
    pub atoms_z: Vec<AtomReport>,
    pub atoms_h: Vec<AtomReport>,
    pub moments: Vec<MomentRow>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ReferenceReport {
    pub closed_form_gp_z: Option<Angle>,
    pub first_order_gp_z: Option<Angle>,
    pub first_order_gp_h: Option<Angle>,
    pub spread_w: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PerturbativeReport {
    pub delta_z: [f64; 2],
    pub mean_gp_zh: Angle,
    pub expected_error: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RedecompositionReport {
    pub seed: u64,
    pub first_moment_z: [f64; 2],
    pub first_moment_h: [f64; 2],
    pub mean_gp_z: f64,
    pub mean_gp_h: f64,
    pub abs_change_z: f64,
    pub abs_change_h: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ComparisonRow {
    pub exact_gp_z: f64,
    pub exact_gp_h: f64,
    pub perturbative_gp_zh: f64,
    pub abs_diff_z_perturbative: f64,
    pub abs_diff_h_perturbative: f64,
    pub abs_diff_z_h: f64,
    pub expected_order: f64,
    pub order_violation: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct PointReport {
    pub index: usize,
    pub label: String,
    pub parameters: BTreeMap<&'static str, f64>,
    #[serde(skip)]
    pub parameter_order: Vec<&'static str>,
    pub rate_over_omega: Option<f64>,
    pub beta0_zh: Angle,
    pub exact: Option<ExactReport>,
    pub references: ReferenceReport,
    pub perturbative: Option<PerturbativeReport>,
    pub redecompositions: Vec<RedecompositionReport>,
    pub comparison: Option<ComparisonRow>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub schema: i64,
    pub command: CommandKind,
    pub model: ModelKind,
    pub seed: u64,
    pub conventions: Conventions,
    pub points: Vec<PointReport>,
}

fn pair(z: Complex64) -> [f64; 2] {
    [z.re, z.im]
}

fn angle_gap(a: f64, b: f64) -> f64 {
    principal_angle(a - b).abs()
}

/// Tracks the unwrapped branch of one quantity across sweep points.
#[derive(Default)]
struct Branch {
    previous: Option<f64>,
}

impl Branch {
    fn next(&mut self, angle: f64, fallback: f64) -> Angle {
        let unwrapped = unwrap_near(angle, self.previous.unwrap_or(fallback));
        self.previous = Some(unwrapped);
        Angle {
            principal: principal_angle(angle),
            unwrapped,
        }
    }

    fn next_opt(&mut self, angle: Option<f64>, fallback: f64) -> Option<Angle> {
        angle.map(|a| self.next(a, fallback))
    }
}

fn atoms(dist: &PhaseDistribution<f64>) -> Vec<AtomReport> {
    dist.atoms()
        .iter()
        .map(|a| AtomReport {
            reservoir_index: a.label.map(|l| l.0),
            system_index: a.label.map(|l| l.1),
            weight: a.weight,
            value: pair(a.value),
            phase: principal_angle(a.value.arg()),
        })
        .collect()
}

#[derive(Default)]
struct Branches {
    beta0: Option<f64>,
    z: Branch,
    h: Branch,
    closed: Branch,
    first_z: Branch,
    first_h: Branch,
    pert: Branch,
}

pub fn build(scenario: &Scenario, results: &[PointResult], command: CommandKind, seed: u64) -> RunReport {
    let mut b = Branches::default();
    let with_comparison = command == CommandKind::Compare || scenario.wants(crate::config::Output::Comparison);
    let points = results
        .iter()
        .map(|r| {
            let beta0 = match b.beta0 {
                None => r.beta0,
                Some(prev) => unwrap_near(r.beta0, prev),
            };
            b.beta0 = Some(beta0);
            let beta0_zh = Angle {
                principal: principal_angle(r.beta0),
                unwrapped: beta0,
            };
            let exact = r.exact.as_ref().map(|e| {
                let h1 = e.moments.mean_gp_h;
                ExactReport {
                    mean_gp_z: b.z.next(e.moments.mean_gp_z, beta0),
                    mean_gp_h: b.h.next(h1.arg(), beta0),
                    mean_exp_ibeta_h: pair(h1),
                    abs_mean_exp_ibeta_h: h1.norm(),
                    spread_w: e.moments.spread_w,
                    atoms_z: atoms(&e.z),
                    atoms_h: atoms(&e.h),
                    moments: (0..e.moments.z_moments.len())
                        .map(|k| MomentRow {
                            order: k + 1,
                            z: pair(e.moments.z_moments[k]),
                            normalized_z: pair(e.moments.normalized_z_moments[k]),
                            h: pair(e.moments.h_moments[k]),
                        })
                        .collect(),
                }
            });
            let refs = &r.references;
            let references = ReferenceReport {
                closed_form_gp_z: b.closed.next_opt(refs.closed_form_gp_z, beta0),
                first_order_gp_z: b.first_z.next_opt(refs.first_order_gp_z, beta0),
                first_order_gp_h: b.first_h.next_opt(refs.first_order_gp_h, beta0),
                spread_w: refs.spread_w,
            };
            let perturbative = r.perturbative.map(|p| PerturbativeReport {
                delta_z: pair(p.delta_z),
                mean_gp_zh: b.pert.next(p.mean_gp, beta0),
                expected_error: p.expected_error,
            });
            let redecompositions = match &r.exact {
                Some(e) => {
                    let (z0, h0) = (e.z.moment(1), e.h.moment(1));
                    r.redecompositions
                        .iter()
                        .map(|d| RedecompositionReport {
                            seed: d.seed,
                            first_moment_z: pair(d.first_moment_z),
                            first_moment_h: pair(d.first_moment_h),
                            mean_gp_z: principal_angle(d.first_moment_z.arg()),
                            mean_gp_h: principal_angle(d.first_moment_h.arg()),
                            abs_change_z: (d.first_moment_z - z0).norm(),
                            abs_change_h: (d.first_moment_h - h0).norm(),
                        })
                        .collect()
                }
                None => Vec::new(),
            };
            let comparison = match (&exact, &perturbative) {
                (Some(e), Some(p)) if with_comparison => {
                    let expected = p.expected_error.unwrap_or(f64::NAN);
                    let dz = angle_gap(e.mean_gp_z.unwrapped, p.mean_gp_zh.unwrapped);
                    let dh = angle_gap(e.mean_gp_h.unwrapped, p.mean_gp_zh.unwrapped);
                    Some(ComparisonRow {
                        exact_gp_z: e.mean_gp_z.unwrapped,
                        exact_gp_h: e.mean_gp_h.unwrapped,
                        perturbative_gp_zh: p.mean_gp_zh.unwrapped,
                        abs_diff_z_perturbative: dz,
                        abs_diff_h_perturbative: dh,
                        abs_diff_z_h: angle_gap(e.mean_gp_z.unwrapped, e.mean_gp_h.unwrapped),
                        expected_order: expected,
                        order_violation: dz.max(dh) > ORDER_FACTOR * expected,
                    })
                }
                _ => None,
            };
            PointReport {
                index: r.point.index,
                label: r.point.label(),
                parameters: r.point.values.iter().copied().collect(),
                parameter_order: r.point.values.iter().map(|(n, _)| *n).collect(),
                rate_over_omega: r.rate_ratio,
                beta0_zh,
                exact,
                references,
                perturbative,
                redecompositions,
                comparison,
            }
        })
        .collect();
    RunReport {
        schema: SCHEMA_VERSION,
        command,
        model: scenario.model,
        seed,
        conventions: CONVENTIONS,
        points,
    }
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn parameter_column(name: &str) -> String {
    match name {
        "theta" => "theta_rad".into(),
        "n" => "n_thermal_dimensionless".into(),
        "lambda" => "lambda_dimensionless".into(),
        other => format!("{other}_inverse_time"),
    }
}

fn rate_column(model: ModelKind) -> Option<&'static str> {
    match model {
        ModelKind::SpontaneousEmission => Some("gamma0_over_omega_dimensionless"),
        ModelKind::PhaseDamping => Some("alpha_over_omega_dimensionless"),
        _ => None,
    }
}

/// Leading columns shared by the per-point tables.
fn point_header(report: &RunReport) -> Vec<String> {
    let mut h = vec!["point_index".to_string()];
    if let Some(p) = report.points.first() {
        h.extend(p.parameter_order.iter().map(|n| parameter_column(n)));
    }
    h.extend(rate_column(report.model).map(String::from));
    h
}

fn point_prefix(report: &RunReport, p: &PointReport) -> Vec<String> {
    let mut row = vec![p.index.to_string()];
    row.extend(p.parameter_order.iter().map(|n| num(p.parameters[n])));
    if rate_column(report.model).is_some() {
        row.push(opt(p.rate_over_omega));
    }
    row
}

fn write_table<W: Write>(out: W, header: Vec<String>, rows: Vec<Vec<String>>) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_points<W: Write>(report: &RunReport, out: W) -> csv::Result<()> {
    let mut header = point_header(report);
    header.extend(
        [
            "beta0_ZH_principal_rad",
            "beta0_ZH_unwrapped_rad",
            "mean_gp_Z_principal_rad",
            "mean_gp_Z_unwrapped_rad",
            "mean_gp_H_principal_rad",
            "mean_gp_H_unwrapped_rad",
            "abs_mean_exp_ibeta_H_dimensionless",
            "spread_W_H_dimensionless",
            "ref_closed_form_gp_Z_unwrapped_rad",
            "ref_first_order_gp_Z_unwrapped_rad",
            "ref_first_order_gp_H_unwrapped_rad",
            "ref_spread_W_H_dimensionless",
            "perturbative_gp_ZH_principal_rad",
            "perturbative_gp_ZH_unwrapped_rad",
            "perturbative_delta_z_ZH_re_dimensionless",
            "perturbative_delta_z_ZH_im_dimensionless",
        ]
        .map(String::from),
    );
    let rows = report
        .points
        .iter()
        .map(|p| {
            let mut row = point_prefix(report, p);
            row.push(num(p.beta0_zh.principal));
            row.push(num(p.beta0_zh.unwrapped));
            let e = p.exact.as_ref();
            row.push(opt(e.map(|e| e.mean_gp_z.principal)));
            row.push(opt(e.map(|e| e.mean_gp_z.unwrapped)));
            row.push(opt(e.map(|e| e.mean_gp_h.principal)));
            row.push(opt(e.map(|e| e.mean_gp_h.unwrapped)));
            row.push(opt(e.map(|e| e.abs_mean_exp_ibeta_h)));
            row.push(opt(e.map(|e| e.spread_w)));
            let r = &p.references;
            row.push(opt(r.closed_form_gp_z.map(|a| a.unwrapped)));
            row.push(opt(r.first_order_gp_z.map(|a| a.unwrapped)));
            row.push(opt(r.first_order_gp_h.map(|a| a.unwrapped)));
            row.push(opt(r.spread_w));
            let q = p.perturbative.as_ref();
            row.push(opt(q.map(|q| q.mean_gp_zh.principal)));
            row.push(opt(q.map(|q| q.mean_gp_zh.unwrapped)));
            row.push(opt(q.map(|q| q.delta_z[0])));
            row.push(opt(q.map(|q| q.delta_z[1])));
            row
        })
        .collect();
    write_table(out, header, rows)
}

pub fn write_atoms<W: Write>(report: &RunReport, out: W) -> csv::Result<()> {
    let header = [
        "point_index",
        "measure",
        "atom_index",
        "reservoir_index",
        "system_index",
        "weight_dimensionless",
        "value_re_dimensionless",
        "value_im_dimensionless",
        "phase_principal_rad",
    ]
    .map(String::from)
    .to_vec();
    let mut rows = Vec::new();
    for p in &report.points {
        let Some(e) = &p.exact else { continue };
        for (measure, list) in [("Z", &e.atoms_z), ("H", &e.atoms_h)] {
            for (k, a) in list.iter().enumerate() {
                rows.push(vec![
                    p.index.to_string(),
                    measure.to_string(),
                    k.to_string(),
                    a.reservoir_index.map(|i| i.to_string()).unwrap_or_default(),
                    a.system_index.map(|i| i.to_string()).unwrap_or_default(),
                    num(a.weight),
                    num(a.value[0]),
                    num(a.value[1]),
                    num(a.phase),
                ]);
            }
        }
    }
    write_table(out, header, rows)
}

pub fn write_moments<W: Write>(report: &RunReport, out: W) -> csv::Result<()> {
    let header = [
        "point_index",
        "order_n",
        "moment_z_n_Z_re_dimensionless",
        "moment_z_n_Z_im_dimensionless",
        "normalized_moment_z_n_Z_re_dimensionless",
        "normalized_moment_z_n_Z_im_dimensionless",
        "moment_exp_inbeta_H_re_dimensionless",
        "moment_exp_inbeta_H_im_dimensionless",
    ]
    .map(String::from)
    .to_vec();
    let mut rows = Vec::new();
    for p in &report.points {
        let Some(e) = &p.exact else { continue };
        for m in &e.moments {
            rows.push(vec![
                p.index.to_string(),
                m.order.to_string(),
                num(m.z[0]),
                num(m.z[1]),
                num(m.normalized_z[0]),
                num(m.normalized_z[1]),
                num(m.h[0]),
                num(m.h[1]),
            ]);
        }
    }
    write_table(out, header, rows)
}

pub fn write_comparison<W: Write>(report: &RunReport, out: W) -> csv::Result<()> {
    let mut header = point_header(report);
    header.extend(
        [
            "exact_gp_Z_unwrapped_rad",
            "exact_gp_H_unwrapped_rad",
            "perturbative_gp_ZH_unwrapped_rad",
            "abs_diff_Z_vs_perturbative_rad",
            "abs_diff_H_vs_perturbative_rad",
            "abs_diff_Z_vs_H_rad",
            "expected_order_dimensionless",
            "order_violation",
        ]
        .map(String::from),
    );
    let rows = report
        .points
        .iter()
        .filter_map(|p| {
            let c = p.comparison.as_ref()?;
            let mut row = point_prefix(report, p);
            row.extend([
                num(c.exact_gp_z),
                num(c.exact_gp_h),
                num(c.perturbative_gp_zh),
                num(c.abs_diff_z_perturbative),
                num(c.abs_diff_h_perturbative),
                num(c.abs_diff_z_h),
                num(c.expected_order),
                c.order_violation.to_string(),
            ]);
            Some(row)
        })
        .collect();
    write_table(out, header, rows)
}

pub fn write_redecompositions<W: Write>(report: &RunReport, out: W) -> csv::Result<()> {
    let header = [
        "point_index",
        "seed",
        "first_moment_Z_re_dimensionless",
        "first_moment_Z_im_dimensionless",
        "first_moment_H_re_dimensionless",
        "first_moment_H_im_dimensionless",
        "mean_gp_Z_principal_rad",
        "mean_gp_H_principal_rad",
        "abs_change_first_moment_Z_dimensionless",
        "abs_change_first_moment_H_dimensionless",
    ]
    .map(String::from)
    .to_vec();
    let mut rows = Vec::new();
    for p in &report.points {
        for d in &p.redecompositions {
            rows.push(vec![
                p.index.to_string(),
                d.seed.to_string(),
                num(d.first_moment_z[0]),
                num(d.first_moment_z[1]),
                num(d.first_moment_h[0]),
                num(d.first_moment_h[1]),
                num(d.mean_gp_z),
                num(d.mean_gp_h),
                num(d.abs_change_z),
                num(d.abs_change_h),
            ]);
        }
    }
    write_table(out, header, rows)
}
