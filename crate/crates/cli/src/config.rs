//! Run configuration: TOML parsing and validation.
//!
//! Every validation failure carries the line and column of the offending
//! key so the user can jump straight to it.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;
use std::ops::Range;
use std::path::Path;

use geophase::channels::{LindbladModel, ReservoirSpec};
use geophase::hilbert::{CMatrix, CVector, Schedule};
use geophase::models::{atom_state, PhaseDampingParams, TwoLevelAtomParams};
use geophase::weakcoupling::{Coupling, WeakCouplingModel};
use geophase::Complex64;
use serde::{Deserialize, Serialize};
use toml::Spanned;

/// Configuration schema understood by this build.
pub const SCHEMA_VERSION: i64 = 1;

const DEFAULT_ATOM_STEPS: usize = 4096;
const DEFAULT_CUSTOM_STEPS: usize = 2000;
const MAX_MOMENT_ORDER: i64 = 16;
const MAX_REDECOMPOSITIONS: i64 = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub path: String,
    /// 1-based line and column, when the error can be located.
    pub location: Option<(usize, usize)>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.location {
            Some((line, col)) => write!(f, "{}:{line}:{col}: {}", self.path, self.message),
            None => write!(f, "{}: {}", self.path, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

struct Source<'a> {
    path: &'a str,
    text: &'a str,
}

impl Source<'_> {
    fn error(&self, span: Option<Range<usize>>, message: impl Into<String>) -> ConfigError {
        let location = span.map(|s| {
            let before = &self.text[..s.start.min(self.text.len())];
            let line = before.matches('\n').count() + 1;
            let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
            (line, col)
        });
        ConfigError {
            path: self.path.to_string(),
            location,
            message: message.into(),
        }
    }

    fn at<T>(&self, item: &Spanned<T>, message: impl Into<String>) -> ConfigError {
        self.error(Some(item.span()), message)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema: Spanned<i64>,
    model: Spanned<String>,
    outputs: Option<Spanned<Vec<String>>>,
    moment_order: Option<Spanned<i64>>,
    #[serde(default)]
    grid: RawGrid,
    params: Spanned<RawParams>,
    sweep: Option<Spanned<RawSweep>>,
    redecomposition: Option<Spanned<RawRedecomposition>>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    n_steps: Option<Spanned<i64>>,
    t_end: Option<Spanned<f64>>,
}

#[derive(Clone, Copy, Deserialize)]
#[serde(untagged)]
enum Entry {
    Real(f64),
    Complex([f64; 2]),
}

impl Entry {
    fn value(self) -> Complex64 {
        match self {
            Entry::Real(x) => Complex64::new(x, 0.0),
            Entry::Complex([re, im]) => Complex64::new(re, im),
        }
    }
}

type RawMatrix = Vec<Vec<Entry>>;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCoupling {
    system: RawMatrix,
    reservoir: RawMatrix,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    omega: Option<Spanned<f64>>,
    gamma0: Option<Spanned<f64>>,
    n: Option<Spanned<f64>>,
    alpha: Option<Spanned<f64>>,
    theta: Option<Spanned<f64>>,
    lambda: Option<Spanned<f64>>,
    h_s: Option<Spanned<RawMatrix>>,
    delta_h: Option<Spanned<RawMatrix>>,
    jumps: Option<Spanned<Vec<RawMatrix>>>,
    couplings: Option<Spanned<Vec<RawCoupling>>>,
    reservoir_energies: Option<Spanned<Vec<f64>>>,
    reservoir_weights: Option<Spanned<Vec<f64>>>,
    psi_s: Option<Spanned<Vec<Entry>>>,
}

impl RawParams {
    fn scalar(&self, name: &str) -> Option<&Spanned<f64>> {
        match name {
            "omega" => self.omega.as_ref(),
            "gamma0" => self.gamma0.as_ref(),
            "n" => self.n.as_ref(),
            "alpha" => self.alpha.as_ref(),
            "theta" => self.theta.as_ref(),
            "lambda" => self.lambda.as_ref(),
            _ => None,
        }
    }

    fn present(&self) -> Vec<(&'static str, Range<usize>)> {
        fn span<T>(name: &'static str, v: &Option<Spanned<T>>) -> Option<(&'static str, Range<usize>)> {
            v.as_ref().map(|s| (name, s.span()))
        }
        [
            span("omega", &self.omega),
            span("gamma0", &self.gamma0),
            span("n", &self.n),
            span("alpha", &self.alpha),
            span("theta", &self.theta),
            span("lambda", &self.lambda),
            span("h_s", &self.h_s),
            span("delta_h", &self.delta_h),
            span("jumps", &self.jumps),
            span("couplings", &self.couplings),
            span("reservoir_energies", &self.reservoir_energies),
            span("reservoir_weights", &self.reservoir_weights),
            span("psi_s", &self.psi_s),
        ]
        .into_iter()
        .flatten()
        .collect()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    parameter: Spanned<String>,
    values: Option<Spanned<Vec<f64>>>,
    linspace: Option<Spanned<RawLinspace>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLinspace {
    start: f64,
    stop: f64,
    count: i64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRedecomposition {
    count: Spanned<i64>,
    block: Option<Spanned<i64>>,
    mixing: Option<Spanned<String>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    SpontaneousEmission,
    PhaseDamping,
    CustomJoint,
    CustomLindblad,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::SpontaneousEmission,
        ModelKind::PhaseDamping,
        ModelKind::CustomJoint,
        ModelKind::CustomLindblad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::SpontaneousEmission => "spontaneous_emission",
            ModelKind::PhaseDamping => "phase_damping",
            ModelKind::CustomJoint => "custom_joint",
            ModelKind::CustomLindblad => "custom_lindblad",
        }
    }

    /// Every `[params]` key the model accepts.
    fn fields(self) -> &'static [&'static str] {
        match self {
            ModelKind::SpontaneousEmission => &["omega", "gamma0", "n", "theta"],
            ModelKind::PhaseDamping => &["omega", "alpha", "theta"],
            ModelKind::CustomJoint => &[
                "h_s",
                "couplings",
                "reservoir_energies",
                "reservoir_weights",
                "psi_s",
                "theta",
                "lambda",
            ],
            ModelKind::CustomLindblad => &["h_s", "delta_h", "jumps", "psi_s", "theta", "lambda"],
        }
    }

    /// Scalar parameters with their defaults (`None` = required).
    fn scalars(self) -> &'static [(&'static str, Option<f64>)] {
        match self {
            ModelKind::SpontaneousEmission => &[
                ("omega", Some(1.0)),
                ("gamma0", None),
                ("n", Some(0.0)),
                ("theta", None),
            ],
            ModelKind::PhaseDamping => &[("omega", Some(1.0)), ("alpha", None), ("theta", None)],
            ModelKind::CustomJoint | ModelKind::CustomLindblad => &[("lambda", Some(1.0)), ("theta", None)],
        }
    }

    pub fn is_custom(self) -> bool {
        matches!(self, ModelKind::CustomJoint | ModelKind::CustomLindblad)
    }

    /// Whether the model has both an exact and a perturbative evaluation.
    pub fn supports_comparison(self) -> bool {
        self != ModelKind::CustomLindblad
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Output {
    Atoms,
    Moments,
    Spread,
    SweepTable,
    Comparison,
}

impl Output {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "atoms" => Output::Atoms,
            "moments" => Output::Moments,
            "spread" => Output::Spread,
            "sweep_table" => Output::SweepTable,
            "comparison" => Output::Comparison,
            _ => return None,
        })
    }
}

/// One evaluation point: the full set of scalar parameters of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub index: usize,
    pub values: Vec<(&'static str, f64)>,
}

impl Point {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.iter().find(|(n, _)| *n == name).map(|&(_, v)| v)
    }

    fn value(&self, name: &str) -> f64 {
        self.get(name).unwrap_or_else(|| panic!("point lacks parameter {name}"))
    }

    fn set(&mut self, name: &str, value: f64) {
        if let Some(slot) = self.values.iter_mut().find(|(n, _)| *n == name) {
            slot.1 = value;
        }
    }

    /// `point 3 (theta = 1.2, gamma0 = 0.001)`.
    pub fn label(&self) -> String {
        let body: Vec<String> = self.values.iter().map(|(n, v)| format!("{n} = {v}")).collect();
        format!("point {} ({})", self.index, body.join(", "))
    }
}

#[derive(Clone, Debug)]
pub struct CustomJoint {
    pub h_s: CMatrix<f64>,
    pub energies: Vec<f64>,
    pub weights: Vec<f64>,
    pub couplings: Vec<Coupling<f64>>,
    pub psi_s: Option<CVector<f64>>,
}

#[derive(Clone, Debug)]
pub struct CustomLindblad {
    pub h_s: CMatrix<f64>,
    pub delta_h: CMatrix<f64>,
    pub jumps: Vec<CMatrix<f64>>,
    pub psi_s: Option<CVector<f64>>,
}

#[derive(Clone, Debug)]
pub enum Operators {
    None,
    Joint(CustomJoint),
    Lindblad(CustomLindblad),
}

/// Family the random block mixings are drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mixing {
    Unitary,
    /// Real orthogonal; keeps real joint dynamics real.
    Orthogonal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Redecomposition {
    pub count: usize,
    pub block: usize,
    pub mixing: Mixing,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub parameter: &'static str,
    pub values: Vec<f64>,
}

/// A validated run configuration.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub path: String,
    pub model: ModelKind,
    /// Line and column of the `model` key.
    pub model_location: Option<(usize, usize)>,
    pub operators: Operators,
    pub n_steps: usize,
    /// Final time for custom models; atom models always stop at `2 pi/omega`.
    pub t_end: f64,
    pub moment_order: usize,
    pub outputs: BTreeSet<Output>,
    pub sweep: Option<Sweep>,
    pub redecomposition: Option<Redecomposition>,
    pub points: Vec<Point>,
}

impl Scenario {
    pub fn wants(&self, output: Output) -> bool {
        self.outputs.contains(&output)
    }

    pub fn atom_params(&self, p: &Point) -> geophase::Result<TwoLevelAtomParams<f64>> {
        TwoLevelAtomParams::new(p.value("omega"), p.value("gamma0"), p.value("n"), p.value("theta"))
    }

    pub fn damping_params(&self, p: &Point) -> geophase::Result<PhaseDampingParams<f64>> {
        PhaseDampingParams::new(p.value("omega"), p.value("alpha"), p.value("theta"))
    }

    /// Initial system state of a custom model.
    pub fn psi_s(&self, p: &Point) -> CVector<f64> {
        let explicit = match &self.operators {
            Operators::Joint(j) => j.psi_s.clone(),
            Operators::Lindblad(l) => l.psi_s.clone(),
            Operators::None => None,
        };
        explicit.unwrap_or_else(|| atom_state(p.value("theta")))
    }

    pub fn joint_model(&self, p: &Point) -> geophase::Result<WeakCouplingModel<f64>> {
        let Operators::Joint(j) = &self.operators else {
            panic!("joint_model on {}", self.model.name());
        };
        let h_r = CMatrix::from_diag(&j.energies.iter().map(|&e| Complex64::new(e, 0.0)).collect::<Vec<_>>());
        let model = WeakCouplingModel::new(
            Schedule::constant(j.h_s.clone()),
            h_r,
            j.couplings.clone(),
            ReservoirSpec::diagonal(&j.energies, &j.weights)?,
            self.psi_s(p),
        )?;
        Ok(model.with_coupling_scale(p.value("lambda")))
    }

    /// `lambda` multiplies every jump operator and `lambda^2` multiplies `delta_h`.
    pub fn lindblad_model(&self, p: &Point) -> geophase::Result<LindbladModel<f64>> {
        let Operators::Lindblad(l) = &self.operators else {
            panic!("lindblad_model on {}", self.model.name());
        };
        let lambda = p.value("lambda");
        LindbladModel::new(
            Schedule::constant(l.h_s.clone()),
            l.delta_h.scale_real(lambda * lambda),
            l.jumps.iter().map(|m| m.scale_real(lambda)).collect(),
        )
    }

    /// Builds every core object a point needs, so that evaluation only fails
    /// for numerical reasons.
    fn check_point(&self, p: &Point) -> geophase::Result<()> {
        match self.model {
            ModelKind::SpontaneousEmission => self.atom_params(p).map(drop),
            ModelKind::PhaseDamping => self.damping_params(p).map(drop),
            ModelKind::CustomJoint => {
                let model = self.joint_model(p)?;
                if let Some(r) = self.redecomposition {
                    match model.reservoir().blocks().get(r.block) {
                        Some(b) if b.len() >= 2 => {}
                        _ => return Err(geophase::Error::InvalidBlock(format!(
                            "reservoir block {} is not degenerate; redecomposition needs at least two equal energies",
                            r.block
                        ))),
                    }
                }
                Ok(())
            }
            ModelKind::CustomLindblad => {
                let model = self.lindblad_model(p)?;
                let psi = self.psi_s(p);
                if psi.dim() != model.dim() {
                    return Err(geophase::Error::DimensionError {
                        expected: model.dim(),
                        found: psi.dim(),
                        context: "system state vs h_s",
                    });
                }
                if (psi.norm() - 1.0).abs() > 1e-10 {
                    return Err(geophase::Error::InvalidState("system state not normalized".into()));
                }
                Ok(())
            }
        }
    }
}

pub fn load(path: &Path) -> Result<Scenario, ConfigError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        path: display.clone(),
        location: None,
        message: format!("cannot read configuration: {e}"),
    })?;
    parse(&text, &display)
}

pub fn parse(text: &str, path: &str) -> Result<Scenario, ConfigError> {
    let src = Source { path, text };
    let raw: RawConfig = toml::from_str(text).map_err(|e| src.error(e.span(), e.message().trim_end().to_string()))?;

    if *raw.schema.get_ref() != SCHEMA_VERSION {
        return Err(src.at(
            &raw.schema,
            format!(
                "unsupported schema {}; this build reads schema {SCHEMA_VERSION}",
                raw.schema.get_ref()
            ),
        ));
    }
    let model = ModelKind::ALL
        .into_iter()
        .find(|m| m.name() == raw.model.get_ref())
        .ok_or_else(|| {
            let names: Vec<_> = ModelKind::ALL.iter().map(|m| m.name()).collect();
            src.at(
                &raw.model,
                format!(
                    "unknown model `{}`; expected one of {}",
                    raw.model.get_ref(),
                    names.join(", ")
                ),
            )
        })?;

    let outputs = parse_outputs(&src, raw.outputs.as_ref(), model)?;
    let moment_order = match &raw.moment_order {
        None => 2,
        Some(m) if (1..=MAX_MOMENT_ORDER).contains(m.get_ref()) => *m.get_ref() as usize,
        Some(m) => return Err(src.at(m, format!("moment_order must be in 1..={MAX_MOMENT_ORDER}"))),
    };
    let (n_steps, t_end) = parse_grid(&src, &raw.grid, model)?;

    let params = raw.params.get_ref();
    for (name, span) in params.present() {
        if !model.fields().contains(&name) {
            return Err(src.error(
                Some(span),
                format!("parameter `{name}` is not used by model {}", model.name()),
            ));
        }
    }

    let sweep = raw
        .sweep
        .as_ref()
        .map(|s| parse_sweep(&src, s, model, params))
        .transpose()?;
    let operators = parse_operators(&src, &raw.params, model)?;
    let has_vector_state = match &operators {
        Operators::Joint(j) => j.psi_s.is_some(),
        Operators::Lindblad(l) => l.psi_s.is_some(),
        Operators::None => false,
    };

    let mut base = Point {
        index: 0,
        values: Vec::new(),
    };
    for &(name, default) in model.scalars() {
        if name == "theta" && has_vector_state {
            if let Some(t) = &params.theta {
                return Err(src.at(t, "give either `theta` or `psi_s`, not both"));
            }
            continue;
        }
        let swept = sweep.as_ref().is_some_and(|s| s.0.parameter == name);
        let value = match (params.scalar(name), default) {
            (Some(v), _) => {
                check_scalar(name, *v.get_ref()).map_err(|m| src.at(v, m))?;
                *v.get_ref()
            }
            (None, Some(d)) => d,
            (None, None) if swept => f64::NAN,
            (None, None) if name == "theta" && model.is_custom() => {
                return Err(src.at(&raw.params, "custom models need either `theta` or `psi_s`"));
            }
            (None, None) => {
                return Err(src.at(
                    &raw.params,
                    format!("missing parameter `{name}` for model {}", model.name()),
                ));
            }
        };
        base.values.push((name, value));
    }

    let redecomposition = match &raw.redecomposition {
        None => None,
        Some(r) if model != ModelKind::CustomJoint => {
            return Err(src.at(r, "[redecomposition] is only available for model custom_joint"));
        }
        Some(r) => {
            let raw_r = r.get_ref();
            if !(1..=MAX_REDECOMPOSITIONS).contains(raw_r.count.get_ref()) {
                return Err(src.at(&raw_r.count, format!("count must be in 1..={MAX_REDECOMPOSITIONS}")));
            }
            let block = match &raw_r.block {
                Some(b) if *b.get_ref() < 0 => return Err(src.at(b, "block must be non-negative")),
                Some(b) => *b.get_ref() as usize,
                None => 0,
            };
            let mixing = match raw_r.mixing.as_ref() {
                None => Mixing::Unitary,
                Some(m) => match m.get_ref().as_str() {
                    "unitary" => Mixing::Unitary,
                    "orthogonal" => Mixing::Orthogonal,
                    other => return Err(src.at(m, format!("unknown mixing `{other}`; expected unitary or orthogonal"))),
                },
            };
            Some(Redecomposition {
                count: *raw_r.count.get_ref() as usize,
                block,
                mixing,
            })
        }
    };

    let mut scenario = Scenario {
        path: path.to_string(),
        model,
        model_location: src.at(&raw.model, "").location,
        operators,
        n_steps,
        t_end,
        moment_order,
        outputs,
        sweep: sweep.as_ref().map(|s| s.0.clone()),
        redecomposition,
        points: Vec::new(),
    };

    let points: Vec<(Point, Range<usize>)> = match &sweep {
        None => vec![(base, raw.params.span())],
        Some((s, span)) => s
            .values
            .iter()
            .enumerate()
            .map(|(index, &v)| {
                let mut p = base.clone();
                p.index = index;
                p.set(s.parameter, v);
                (p, span.clone())
            })
            .collect(),
    };
    for (p, span) in &points {
        if let Some((s, _)) = &sweep {
            check_scalar(s.parameter, p.value(s.parameter))
                .map_err(|m| src.error(Some(span.clone()), format!("sweep value {}: {m}", p.index)))?;
        }
        scenario.check_point(p).map_err(|e| {
            let span = if scenario.redecomposition.is_some() && matches!(e, geophase::Error::InvalidBlock(_)) {
                raw.redecomposition.as_ref().map(|r| r.span())
            } else {
                Some(raw.params.span())
            };
            src.error(span, format!("{}: {e}", p.label()))
        })?;
    }
    scenario.points = points.into_iter().map(|(p, _)| p).collect();
    Ok(scenario)
}

fn check_scalar(name: &str, value: f64) -> Result<(), String> {
    if !value.is_finite() {
        return Err(format!("`{name}` must be finite"));
    }
    match name {
        "omega" if value <= 0.0 => Err("`omega` must be positive".into()),
        "gamma0" | "alpha" | "n" if value < 0.0 => Err(format!("`{name}` must be non-negative")),
        _ => Ok(()),
    }
}

fn parse_outputs(
    src: &Source,
    raw: Option<&Spanned<Vec<String>>>,
    model: ModelKind,
) -> Result<BTreeSet<Output>, ConfigError> {
    let Some(raw) = raw else {
        return Ok([Output::Atoms, Output::Moments, Output::Spread, Output::SweepTable].into());
    };
    let mut set = BTreeSet::new();
    for name in raw.get_ref() {
        let out = Output::parse(name).ok_or_else(|| {
            src.at(
                raw,
                format!("unknown output `{name}`; expected atoms, moments, spread, sweep_table or comparison"),
            )
        })?;
        set.insert(out);
    }
    if set.contains(&Output::Comparison) && !model.supports_comparison() {
        return Err(src.at(
            raw,
            format!("model {} has no exact evaluation to compare against", model.name()),
        ));
    }
    Ok(set)
}

fn parse_grid(src: &Source, grid: &RawGrid, model: ModelKind) -> Result<(usize, f64), ConfigError> {
    let n_steps = match &grid.n_steps {
        None if model.is_custom() => DEFAULT_CUSTOM_STEPS,
        None => DEFAULT_ATOM_STEPS,
        Some(n) if *n.get_ref() >= 2 => *n.get_ref() as usize,
        Some(n) => return Err(src.at(n, "n_steps must be at least 2")),
    };
    let t_end = match &grid.t_end {
        None => 2.0 * PI,
        Some(t) if !model.is_custom() => {
            return Err(src.at(
                t,
                format!("t_end is fixed at one period 2 pi/omega for model {}", model.name()),
            ));
        }
        Some(t) if t.get_ref().is_finite() && *t.get_ref() > 0.0 => *t.get_ref(),
        Some(t) => return Err(src.at(t, "t_end must be positive and finite")),
    };
    Ok((n_steps, t_end))
}

fn parse_sweep(
    src: &Source,
    raw: &Spanned<RawSweep>,
    model: ModelKind,
    params: &RawParams,
) -> Result<(Sweep, Range<usize>), ConfigError> {
    let s = raw.get_ref();
    let name = s.parameter.get_ref();
    let Some(&(parameter, _)) = model.scalars().iter().find(|(n, _)| n == name) else {
        let names: Vec<_> = model.scalars().iter().map(|(n, _)| *n).collect();
        return Err(src.at(
            &s.parameter,
            format!(
                "cannot sweep `{name}` for model {}; sweepable: {}",
                model.name(),
                names.join(", ")
            ),
        ));
    };
    if parameter == "theta" && params.psi_s.is_some() {
        return Err(src.at(&s.parameter, "cannot sweep `theta` when `psi_s` is given"));
    }
    if let Some(fixed) = params.scalar(parameter) {
        return Err(src.at(fixed, format!("`{parameter}` is swept; remove it from [params]")));
    }
    let (values, span) = match (&s.values, &s.linspace) {
        (Some(v), None) => (v.get_ref().clone(), v.span()),
        (None, Some(l)) => {
            let ls = l.get_ref();
            if ls.count < 1 {
                return Err(src.at(l, "linspace count must be at least 1"));
            }
            let n = ls.count as usize;
            let values = (0..n)
                .map(|k| {
                    if n == 1 {
                        ls.start
                    } else if k == n - 1 {
                        ls.stop
                    } else {
                        ls.start + (ls.stop - ls.start) * k as f64 / (n - 1) as f64
                    }
                })
                .collect();
            (values, l.span())
        }
        _ => return Err(src.at(raw, "[sweep] needs exactly one of `values` or `linspace`")),
    };
    if values.is_empty() {
        return Err(src.error(Some(span), "sweep has no values"));
    }
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return Err(src.error(Some(span), format!("sweep value {k} is not finite")));
    }
    let ascending = values.windows(2).all(|w| w[0] <= w[1]);
    let descending = values.windows(2).all(|w| w[0] >= w[1]);
    if !ascending && !descending {
        return Err(src.error(Some(span), "sweep values must be sorted"));
    }
    Ok((Sweep { parameter, values }, span))
}

fn matrix(src: &Source, name: &str, rows: &RawMatrix, span: Range<usize>) -> Result<CMatrix<f64>, ConfigError> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(src.error(Some(span), format!("`{name}` must be a non-empty square matrix")));
    }
    let values: Vec<Vec<Complex64>> = rows.iter().map(|r| r.iter().map(|e| e.value()).collect()).collect();
    if values.iter().flatten().any(|z| !z.is_finite()) {
        return Err(src.error(Some(span), format!("`{name}` has non-finite entries")));
    }
    CMatrix::from_rows(values).map_err(|e| src.error(Some(span), format!("`{name}`: {e}")))
}

fn required<'a, T>(
    src: &Source,
    params: &Spanned<RawParams>,
    field: &'a Option<Spanned<T>>,
    name: &str,
    model: ModelKind,
) -> Result<&'a Spanned<T>, ConfigError> {
    field
        .as_ref()
        .ok_or_else(|| src.at(params, format!("missing parameter `{name}` for model {}", model.name())))
}

fn parse_state(src: &Source, raw: &Option<Spanned<Vec<Entry>>>) -> Result<Option<CVector<f64>>, ConfigError> {
    let Some(v) = raw else { return Ok(None) };
    let data: Vec<Complex64> = v.get_ref().iter().map(|e| e.value()).collect();
    if data.is_empty() || data.iter().any(|z| !z.is_finite()) {
        return Err(src.at(v, "`psi_s` must be a non-empty finite vector"));
    }
    let psi = CVector::new(data).map_err(|e| src.at(v, format!("`psi_s`: {e}")))?;
    if (psi.norm() - 1.0).abs() > 1e-10 {
        return Err(src.at(v, format!("`psi_s` has norm {}; it must be normalized", psi.norm())));
    }
    Ok(Some(psi))
}

fn parse_operators(src: &Source, params: &Spanned<RawParams>, model: ModelKind) -> Result<Operators, ConfigError> {
    let p = params.get_ref();
    let op = |name: &str, m: &Spanned<RawMatrix>| matrix(src, name, m.get_ref(), m.span());
    match model {
        ModelKind::SpontaneousEmission | ModelKind::PhaseDamping => Ok(Operators::None),
        ModelKind::CustomJoint => {
            let h_s = op("h_s", required(src, params, &p.h_s, "h_s", model)?)?;
            let couplings_raw = required(src, params, &p.couplings, "couplings", model)?;
            let mut couplings = Vec::new();
            for (k, c) in couplings_raw.get_ref().iter().enumerate() {
                couplings.push(Coupling {
                    system: matrix(src, &format!("couplings[{k}].system"), &c.system, couplings_raw.span())?,
                    reservoir: matrix(
                        src,
                        &format!("couplings[{k}].reservoir"),
                        &c.reservoir,
                        couplings_raw.span(),
                    )?,
                });
            }
            let energies = required(src, params, &p.reservoir_energies, "reservoir_energies", model)?;
            let weights = required(src, params, &p.reservoir_weights, "reservoir_weights", model)?;
            if energies.get_ref().iter().any(|e| !e.is_finite()) {
                return Err(src.at(energies, "reservoir energies must be finite"));
            }
            if weights.get_ref().len() != energies.get_ref().len() {
                return Err(src.at(weights, "need one weight per reservoir energy"));
            }
            ReservoirSpec::diagonal(energies.get_ref(), weights.get_ref())
                .map_err(|e| src.at(weights, format!("reservoir: {e}")))?;
            Ok(Operators::Joint(CustomJoint {
                h_s,
                energies: energies.get_ref().clone(),
                weights: weights.get_ref().clone(),
                couplings,
                psi_s: parse_state(src, &p.psi_s)?,
            }))
        }
        ModelKind::CustomLindblad => {
            let h_s = op("h_s", required(src, params, &p.h_s, "h_s", model)?)?;
            let delta_h = match &p.delta_h {
                Some(m) => op("delta_h", m)?,
                None => CMatrix::zeros(h_s.dim()),
            };
            let jumps_raw = required(src, params, &p.jumps, "jumps", model)?;
            let jumps = jumps_raw
                .get_ref()
                .iter()
                .enumerate()
                .map(|(k, m)| matrix(src, &format!("jumps[{k}]"), m, jumps_raw.span()))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Operators::Lindblad(CustomLindblad {
                h_s,
                delta_h,
                jumps,
                psi_s: parse_state(src, &p.psi_s)?,
            }))
        }
    }
}
