use std::path::Path;
use std::process::{Command, Output};

use fiberhom_cli::config::{parse_value, resolve, set_path};

fn fiberhom(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fiberhom")).current_dir(dir).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Data rows of a CSV output (comments and the column line dropped).
fn rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn zero_load_capacity_row_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = fiberhom(dir.path(), &["cap", "--a", "0,0,0", "--zeta", "0", "--h", "0.3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("# config_sha256: "));
    assert!(text.contains("# mesh: vertices="));
    let r = rows(&text);
    assert_eq!(r.len(), 1);
    assert_eq!(r[0][3].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn exponential_radius_family_has_unit_gamma() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("re.toml"),
        r#"
[regime.family]
kind = "symbolic"
p = 2.0
area = 3.141592653589793
r = { coef = 1.0, exp_terms = [[-1.0, 2.0]] }
l = { law = { coef = 1.0, eps_pow = 2.0 }, r_pow = -5.0 }
"#,
    )
    .unwrap();
    let o = fiberhom(dir.path(), &["--config", "re.toml", "regime"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let rep = &doc["result"]["report"];
    assert_eq!(rep["gamma_p"], 1.0);
    assert_eq!(rep["kappa"], "inf");
    assert_eq!(doc["config"]["command"], "regime");
}

#[test]
fn identical_config_reproduces_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["cap", "--kind", "p_norm", "--p", "1.5", "--a", "0.3,-0.2,1", "--zeta", "0.4", "--h", "0.3", "-o", "r.csv"];
    assert!(fiberhom(dir.path(), &args).status.success());
    let a = std::fs::read(dir.path().join("r.csv")).unwrap();
    assert!(fiberhom(dir.path(), &args).status.success());
    let b = std::fs::read(dir.path().join("r.csv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn unknown_key_is_reported_by_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = fiberhom(dir.path(), &["cap", "--set", "mesh.hh=0.1"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("mesh.hh"));
    let o = fiberhom(dir.path(), &["cap", "--set", "mesh.h=-1"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("mesh.h"));
}

#[test]
fn flags_override_file_keys() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[cap]\nzeta = 1.0\n[mesh]\nh = 0.3\n").unwrap();
    let o = fiberhom(dir.path(), &["-c", "c.toml", "cap", "--zeta", "0", "--print-config"]);
    assert!(o.status.success());
    let cfg: toml::Table = stdout(&o).parse().unwrap();
    assert_eq!(cfg["cap"]["zeta"].as_float(), Some(0.0));
    assert_eq!(cfg["mesh"]["h"].as_float(), Some(0.3));
    let o = fiberhom(dir.path(), &["-c", "c.toml", "cap", "--zeta", "0", "--set", "cap.zeta=2.0", "--print-config"]);
    let cfg: toml::Table = stdout(&o).parse().unwrap();
    assert_eq!(cfg["cap"]["zeta"].as_float(), Some(2.0));
}

#[test]
fn cell_output_carries_symmetric_form() {
    let dir = tempfile::tempdir().unwrap();
    let o = fiberhom(dir.path(), &["cell", "--h", "0.1", "--load", "1,0", "--load", "0,1", "--load", "1,1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let vals: Vec<f64> = rows(&text).iter().map(|r| r[2].parse().unwrap()).collect();
    let block: String = text
        .lines()
        .skip_while(|l| !l.starts_with("# quadratic_form"))
        .skip(1)
        .map(|l| l.trim_start_matches('#').trim())
        .collect();
    let q: Vec<Vec<f64>> = serde_json::from_str(&block).unwrap();
    assert!((q[0][1] - q[1][0]).abs() < 1e-12);
    assert!((q[0][0] - vals[0]).abs() < 1e-10 * vals[0]);
    let both = q[0][0] + q[1][1] + 2.0 * q[0][1];
    assert!((both - vals[2]).abs() < 1e-10 * vals[2]);
}

#[test]
fn sweep_writes_one_file_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let o = fiberhom(
        dir.path(),
        &["sweep", "--target", "cap", "--parameter", "cap.zeta", "--values", "0.5,1", "--out-dir", "out", "--set", "mesh.h=0.3", "--jobs", "2"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = rows(&stdout(&o));
    assert_eq!(summary.len(), 2);
    assert!(summary.iter().all(|r| r[3] == "ok"));
    let v = |name: &str| -> f64 {
        let text = std::fs::read_to_string(dir.path().join("out").join(name)).unwrap();
        rows(&text)[0][3].parse().unwrap()
    };
    // torsion capacity is 2-homogeneous
    let (half, full) = (v("cap_cap.zeta=0.5.csv"), v("cap_cap.zeta=1.csv"));
    assert!((full - 4.0 * half).abs() < 1e-8 * full);
}

#[test]
fn verify_table_and_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    let o = fiberhom(dir.path(), &["verify", "--checks", "13"]);
    assert_eq!(o.status.code(), Some(0));
    let r = rows(&stdout(&o));
    assert_eq!(r, vec![vec!["C13".to_string(), "PASS".into(), "regime classifier".into()]]);
    let o = fiberhom(dir.path(), &["verify", "--checks", "99"]);
    assert!(!o.status.success());
}

#[test]
fn verbose_writes_solver_history() {
    let dir = tempfile::tempdir().unwrap();
    let o = fiberhom(dir.path(), &["cap", "--a", "1,0,0", "--h", "0.3", "-v", "-o", "r.csv"]);
    assert!(o.status.success());
    let hist = std::fs::read_to_string(dir.path().join("r.diag.csv")).unwrap();
    assert!(hist.starts_with("run,iteration,energy,grad_norm,step\n"));
    assert!(hist.lines().count() >= 2);
}

#[test]
fn limit1d_without_forces_is_at_rest() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("l.toml"), "[limit1d]\nnodes = 6\nlimits = { p = 3.0, k = 1.0, kappa = 0.0, gamma = 1.0 }\n")
        .unwrap();
    let o = fiberhom(dir.path(), &["-c", "l.toml", "limit1d", "--set", "limit1d.cell_h=0.1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("x3,v1,v2,v3,theta,w,delta"));
    let r = rows(&text);
    assert_eq!(r.len(), 6);
    assert!(r.iter().flat_map(|row| row[1..].to_vec()).all(|x| x.parse::<f64>().unwrap() == 0.0));
}

#[test]
fn config_helpers() {
    assert_eq!(parse_value("0.5"), toml::Value::Float(0.5));
    assert_eq!(parse_value("[1, 2]").as_array().map(|a| a.len()), Some(2));
    assert_eq!(parse_value("disc"), toml::Value::String("disc".into()));
    let mut doc = toml::Table::new();
    set_path(&mut doc, "command", toml::Value::String("cell".into())).unwrap();
    set_path(&mut doc, "cell.regime", toml::Value::String("finite_kappa".into())).unwrap();
    set_path(&mut doc, "cell.loads", parse_value("[[1, 0, 0]]")).unwrap();
    let err = resolve(doc).unwrap_err().to_string();
    assert!(err.contains("cell.loads[0]"), "{err}");
}
