use std::collections::HashMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn geophase(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geophase"))
        .args(args)
        .output()
        .expect("binary runs")
}

struct Case {
    dir: TempDir,
}

impl Case {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("scenario.toml"), config).unwrap();
        Case { dir }
    }

    fn config(&self) -> String {
        self.dir.path().join("scenario.toml").display().to_string()
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, command: &str, out: &str, extra: &[&str]) -> Output {
        let (config, out) = (self.config(), self.out(out).display().to_string());
        let mut args = vec![command, config.as_str(), "--out", out.as_str()];
        args.extend_from_slice(extra);
        geophase(&args)
    }
}

fn success(o: &Output) {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
}

type Table = Vec<HashMap<String, String>>;

fn read_csv(path: &Path) -> (Vec<String>, Table) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| {
            header
                .iter()
                .cloned()
                .zip(rec.unwrap().iter().map(String::from))
                .collect()
        })
        .collect();
    (header, rows)
}

fn f(row: &HashMap<String, String>, key: &str) -> f64 {
    row.get(key)
        .unwrap_or_else(|| panic!("missing column {key}"))
        .parse()
        .unwrap_or_else(|_| panic!("column {key} = {:?}", row[key]))
}

const SE_SWEEP: &str = r#"
schema = 1
model = "spontaneous_emission"

[grid]
n_steps = 512

[params]
gamma0 = 1e-3

[sweep]
parameter = "theta"
linspace = { start = 0.0, stop = 3.141592653589793, count = 9 }
"#;

#[test]
fn spontaneous_emission_sweep_tracks_first_order_phase() {
    let case = Case::new(SE_SWEEP);
    success(&case.run("run", "out", &[]));
    let (_, rows) = read_csv(&case.out("out/points.csv"));
    assert_eq!(rows.len(), 9);
    let a = 1e-3;
    for row in &rows {
        let theta = f(row, "theta_rad");
        let expected = 2.0 * PI * (theta / 2.0).sin().powi(2) + PI * PI * a * theta.sin().powi(2);
        let got = f(row, "mean_gp_Z_unwrapped_rad");
        assert!(
            (got - expected).abs() <= 100.0 * a * a,
            "theta {theta}: {got} vs {expected}"
        );
        assert!((f(row, "ref_first_order_gp_Z_unwrapped_rad") - expected).abs() < 1e-12);
        // zero temperature: a single atom, so both measures agree and W = 0
        assert_eq!(f(row, "spread_W_H_dimensionless"), 0.0);
        assert!((got - f(row, "mean_gp_H_unwrapped_rad")).abs() < 1e-12);
        assert!((got - f(row, "ref_closed_form_gp_Z_unwrapped_rad")).abs() < 1e-10);
    }
}

#[test]
fn phase_damping_spread_columns() {
    let case = Case::new(
        r#"
schema = 1
model = "phase_damping"
outputs = ["spread"]

[params]
theta = 1.5707963267948966

[sweep]
parameter = "alpha"
values = [1e-5, 1e-4]
"#,
    );
    success(&case.run("run", "out", &[]));
    let (_, rows) = read_csv(&case.out("out/points.csv"));
    for row in &rows {
        let a = f(row, "alpha_over_omega_dimensionless");
        assert!((f(row, "ref_spread_W_H_dimensionless") - 16.0 * PI * PI * a / 9.0).abs() < 1e-15);
        // the exact two-atom spread carries an extra factor pi
        let exact = f(row, "spread_W_H_dimensionless");
        assert!(
            (exact / (16.0 * PI.powi(3) * a / 9.0) - 1.0).abs() < 0.05,
            "alpha {a}: W {exact}"
        );
    }
    assert!(!case.out("out/atoms.csv").exists());
}

#[test]
fn decoupled_atom_has_no_corrections() {
    let case = Case::new(
        r#"
schema = 1
model = "spontaneous_emission"

[grid]
n_steps = 256

[params]
gamma0 = 0.0
theta = 1.0
"#,
    );
    success(&case.run("run", "run", &[]));
    let (_, rows) = read_csv(&case.out("run/points.csv"));
    let beta0 = 2.0 * PI * 0.5f64.sin().powi(2);
    let row = &rows[0];
    for col in [
        "beta0_ZH_unwrapped_rad",
        "mean_gp_Z_unwrapped_rad",
        "mean_gp_H_unwrapped_rad",
        "ref_first_order_gp_Z_unwrapped_rad",
        "perturbative_gp_ZH_unwrapped_rad",
    ] {
        assert!((f(row, col) - beta0).abs() < 1e-12, "{col}");
    }
    assert_eq!(f(row, "perturbative_delta_z_ZH_im_dimensionless"), 0.0);

    success(&case.run("compare", "cmp", &[]));
    let (_, rows) = read_csv(&case.out("cmp/comparison.csv"));
    for col in [
        "abs_diff_Z_vs_perturbative_rad",
        "abs_diff_H_vs_perturbative_rad",
        "abs_diff_Z_vs_H_rad",
    ] {
        assert!(f(&rows[0], col) < 1e-12, "{col}");
    }
    assert_eq!(rows[0]["order_violation"], "false");
}

#[test]
fn perturbative_phase_is_temperature_independent() {
    let case = Case::new(
        r#"
schema = 1
model = "spontaneous_emission"

[grid]
n_steps = 512

[params]
gamma0 = 1e-3
theta = 1.5707963267948966

[sweep]
parameter = "n"
values = [0.0, 1.0, 5.0]
"#,
    );
    success(&case.run("compare", "out", &[]));
    let (_, rows) = read_csv(&case.out("out/comparison.csv"));
    let pert: Vec<&str> = rows
        .iter()
        .map(|r| r["perturbative_gp_ZH_unwrapped_rad"].as_str())
        .collect();
    assert!(pert.iter().all(|p| *p == pert[0]), "{pert:?}");
    for row in &rows {
        assert!(f(row, "abs_diff_Z_vs_perturbative_rad") <= 100.0 * 1e-6);
        assert_eq!(row["order_violation"], "false");
    }
}

#[test]
fn phase_damping_measures_split_at_first_order() {
    let case = Case::new(
        r#"
schema = 1
model = "phase_damping"

[params]
theta = 0.7853981633974483

[sweep]
parameter = "alpha"
values = [1e-3, 1e-2]
"#,
    );
    success(&case.run("compare", "out", &[]));
    let (_, rows) = read_csv(&case.out("out/comparison.csv"));
    let ratios: Vec<f64> = rows
        .iter()
        .map(|r| f(r, "abs_diff_Z_vs_H_rad") / f(r, "alpha_over_omega_dimensionless"))
        .collect();
    for r in &ratios {
        assert!((1.0..20.0).contains(r), "{ratios:?}");
    }
    // a first-order gap keeps its ratio to alpha as alpha grows tenfold
    assert!((ratios[1] / ratios[0] - 1.0).abs() < 0.2, "{ratios:?}");
    assert!(rows.iter().all(|r| r["order_violation"] == "true"));
}

const JOINT: &str = r#"
schema = 1
model = "custom_joint"
outputs = ["atoms", "moments", "sweep_table", "comparison"]

[grid]
n_steps = 600
t_end = 6.283185307179586

[params]
h_s = [[-0.5, 0.0], [0.0, 0.5]]
reservoir_energies = [0.0, 0.0, 1.0]
reservoir_weights = [0.5, 0.3, 0.2]
psi_s = [0.6, [0.0, 0.8]]
couplings = [
    { system = [[0.0, 1.0], [1.0, 0.0]], reservoir = [[0.0, 0.0, 0.1], [0.0, 0.0, 0.05], [0.1, 0.05, 0.0]] },
]

[sweep]
parameter = "lambda"
values = [0.5, 1.0]

[redecomposition]
count = 4
"#;

fn file_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn output_is_byte_identical_across_threads_and_reruns() {
    let case = Case::new(JOINT);
    success(&case.run("run", "a", &["--threads", "1", "--seed", "7"]));
    success(&case.run("run", "b", &["--threads", "4", "--seed", "7"]));
    success(&case.run("run", "c", &["--seed", "7"]));
    let a = file_bytes(&case.out("a"));
    assert_eq!(a.len(), 5);
    assert_eq!(a, file_bytes(&case.out("b")));
    assert_eq!(a, file_bytes(&case.out("c")));

    success(&case.run("run", "d", &["--seed", "8"]));
    let d = file_bytes(&case.out("d"));
    let redec = |files: &[(String, Vec<u8>)]| files.iter().find(|f| f.0 == "redecompositions.csv").unwrap().1.clone();
    assert_ne!(redec(&a), redec(&d));
    let points = |files: &[(String, Vec<u8>)]| files.iter().find(|f| f.0 == "points.csv").unwrap().1.clone();
    assert_eq!(points(&a), points(&d));
}

/// Real joint Hamiltonian on a fully degenerate reservoir: with orthogonal
/// mixings every conditional trajectory stays real, so `D = 1` throughout.
const REAL_JOINT: &str = r#"
schema = 1
model = "custom_joint"
outputs = ["sweep_table"]

[grid]
n_steps = 600
t_end = 3.0

[params]
h_s = [[0.0, [0.0, -0.5]], [[0.0, 0.5], 0.0]]
reservoir_energies = [0.0, 0.0, 0.0]
reservoir_weights = [0.5, 0.3, 0.2]
psi_s = [0.6, 0.8]
couplings = [
    { system = [[0.0, [0.0, -1.0]], [[0.0, 1.0], 0.0]], reservoir = [[0.0, 0.3, 0.15], [0.3, 0.0, 0.09], [0.15, 0.09, 0.0]] },
]

[redecomposition]
count = 6
mixing = "orthogonal"
"#;

#[test]
fn redecomposition_keeps_z_moment_and_moves_h_moment() {
    let case = Case::new(REAL_JOINT);
    success(&case.run("run", "out", &[]));
    let (_, rows) = read_csv(&case.out("out/redecompositions.csv"));
    assert_eq!(rows.len(), 6);
    let max = |col: &str| rows.iter().map(|r| f(r, col)).fold(0.0, f64::max);
    assert!(max("abs_change_first_moment_Z_dimensionless") < 1e-9);
    assert!(max("abs_change_first_moment_H_dimensionless") > 1e-6);
}

#[test]
fn custom_joint_gap_is_fourth_order() {
    let case = Case::new(JOINT);
    success(&case.run("compare", "out", &[]));
    let (_, rows) = read_csv(&case.out("out/comparison.csv"));
    let gap: Vec<f64> = rows.iter().map(|r| f(r, "abs_diff_Z_vs_perturbative_rad")).collect();
    let ratio = gap[1] / gap[0];
    assert!((10.0..25.0).contains(&ratio), "{gap:?}");
    assert!(rows.iter().all(|r| r["order_violation"] == "false"));
}

#[test]
fn headers_name_quantity_measure_and_units() {
    let case = Case::new(JOINT);
    success(&case.run("run", "out", &[]));
    for name in [
        "points.csv",
        "atoms.csv",
        "moments.csv",
        "comparison.csv",
        "redecompositions.csv",
    ] {
        let (header, rows) = read_csv(&case.out("out").join(name));
        for (k, col) in header.iter().enumerate() {
            let numeric = rows
                .iter()
                .any(|r| r[col].contains('e') && r[col].parse::<f64>().is_ok());
            if !numeric {
                continue;
            }
            assert!(
                ["_rad", "_dimensionless", "_inverse_time"]
                    .iter()
                    .any(|u| col.ends_with(u)),
                "{name}: column {k} `{col}` lacks units"
            );
            for r in &rows {
                let cell = &r[col];
                if cell.is_empty() {
                    continue;
                }
                let mantissa = cell.split('e').next().unwrap().trim_start_matches('-');
                assert_eq!(mantissa.len(), 18, "{name}: `{cell}` is not 17 significant digits");
            }
        }
        let phase_cols = header.iter().filter(|c| c.contains("gp") && c.ends_with("_rad"));
        for col in phase_cols {
            assert!(
                col.contains("_Z_") || col.contains("_H_") || col.contains("_ZH_"),
                "{name}: `{col}`"
            );
        }
    }
}

#[test]
fn json_report_mirrors_the_tables() {
    let case = Case::new(JOINT);
    success(&case.run("run", "json", &["--format", "json"]));
    success(&case.run("run", "csv", &[]));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(case.out("json/report.json")).unwrap()).unwrap();
    assert_eq!(json["schema"], 1);
    assert_eq!(json["model"], "custom_joint");
    assert_eq!(json["conventions"]["angles"], "radians");
    let points = json["points"].as_array().unwrap();
    let (_, rows) = read_csv(&case.out("csv/points.csv"));
    assert_eq!(points.len(), rows.len());
    for (p, row) in points.iter().zip(&rows) {
        let z = p["exact"]["mean_gp_z"]["unwrapped"].as_f64().unwrap();
        assert!((z - f(row, "mean_gp_Z_unwrapped_rad")).abs() <= 1e-15 * z.abs());
        assert_eq!(p["redecompositions"].as_array().unwrap().len(), 4);
    }
    assert_eq!(file_bytes(&case.out("json")).len(), 1);
}

#[test]
fn lindblad_model_reports_second_order_phase_only() {
    let case = Case::new(
        r#"
schema = 1
model = "custom_lindblad"

[grid]
n_steps = 800

[params]
h_s = [[0.5, 0.0], [0.0, -0.5]]
jumps = [[[0.0, 0.0316227766016838], [0.0, 0.0]]]
theta = 1.5707963267948966
"#,
    );
    success(&case.run("run", "out", &[]));
    let (_, rows) = read_csv(&case.out("out/points.csv"));
    // jump sqrt(g)|g><e| in the (g, e) basis is the zero-temperature emission
    // channel with g = 1e-3, so the correction is pi^2 g at theta = pi/2
    let shift = f(&rows[0], "perturbative_gp_ZH_unwrapped_rad") - f(&rows[0], "beta0_ZH_unwrapped_rad");
    assert!((shift - PI * PI * 1e-3).abs() < 1e-6, "{shift}");
    assert_eq!(rows[0]["mean_gp_Z_unwrapped_rad"], "");

    let o = case.run("compare", "cmp", &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("scenario.toml:3:"), "{err}");
}

fn config_error(config: &str) -> String {
    let case = Case::new(config);
    let o = case.run("run", "out", &[]);
    assert_eq!(
        o.status.code(),
        Some(2),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(!case.out("out").exists());
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn config_errors_exit_2_with_line() {
    let base = "schema = 1\nmodel = \"spontaneous_emission\"\n\n[params]\ngamma0 = 1e-3\ntheta = 1.0\n";
    let cases: [(String, &str, &str); 8] = [
        (base.replace("schema = 1", "schema = 2"), ":1:", "unsupported schema 2"),
        (base.replace("spontaneous_emission", "decay"), ":2:", "unknown model"),
        (base.replace("gamma0 = 1e-3", "gamma0 = -1e-3"), ":5:", "non-negative"),
        (format!("{base}gamma = 2\n"), ":7:", "unknown field"),
        (format!("{base}alpha = 2\n"), ":7:", "not used by model"),
        (base.replace("theta = 1.0\n", ""), ":4:", "missing parameter `theta`"),
        (
            base.replace("theta = 1.0\n", "") + "\n[sweep]\nparameter = \"theta\"\nvalues = [0.1, 0.3, 0.2]\n",
            ":10:",
            "sorted",
        ),
        (
            format!("{base}\n[sweep]\nparameter = \"lambda\"\nvalues = [1.0]\n"),
            ":9:",
            "cannot sweep",
        ),
    ];
    for (config, line, message) in cases {
        let err = config_error(&config);
        assert!(
            err.contains(line) && err.contains(message),
            "expected {line} {message}, got: {err}\n{config}"
        );
    }
    let err = config_error("schema = 1\nmodel = [\n");
    assert!(err.contains(":2:") || err.contains(":3:"), "{err}");
}

#[test]
fn missing_config_file_is_a_config_error() {
    let o = geophase(&["run", "/nonexistent/scenario.toml", "--out", "/tmp/unused-geophase-out"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot read configuration"));
}

#[test]
fn numerical_failure_exits_3_and_names_the_point() {
    let config = JOINT
        .replace(
            "[[0.0, 0.0, 0.1], [0.0, 0.0, 0.05], [0.1, 0.05, 0.0]]",
            "[[0.2, 0.0, 0.1], [0.0, 0.0, 0.05], [0.1, 0.05, 0.0]]",
        )
        .replace("[redecomposition]\ncount = 4\n", "");
    let case = Case::new(&config);
    let o = case.run("run", "out", &[]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("point 0 (lambda = 0.5)"), "{err}");
    assert!(err.contains("<r|R_mu|r>"), "{err}");
}

#[test]
fn version_reports_schema_and_build() {
    let o = geophase(&["--version"]);
    success(&o);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("config schema 1"), "{text}");
    assert!(text.contains(env!("CARGO_PKG_VERSION")));
    assert!(text.contains("build "));
}

#[test]
fn shipped_scenarios_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            geophase_cli::config::load(&path).unwrap_or_else(|e| panic!("{e}"));
            n += 1;
        }
    }
    assert!(n >= 5);
}
