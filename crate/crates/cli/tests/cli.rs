use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

use iqcsynth_cli::result::ResultFile;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_iqcsynth"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn base_config() -> Value {
    serde_json::from_str(&std::fs::read_to_string(configs().join("compressor.json")).unwrap()).unwrap()
}

fn write_config(dir: &TempDir, name: &str, v: &Value) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn singleton(v: &mut Value, tau: f64, lambda: [f64; 3]) {
    v["search"] = json!({"tau_grid": [[tau]], "lambda_grid": [[lambda]]});
}

#[test]
fn check_exit_codes() {
    let monotone = configs().join("compressor_monotone.json");
    let o = run(&["check", "-c", s(&monotone), "--tau", "0.15", "--lambda", "1,0.1,0.12"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("D11TooLarge"));

    let bounded = configs().join("compressor.json");
    let o = run(&["check", "-c", s(&bounded), "--tau", "32", "--lambda", "30,1,100"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("Pi = 2"));
    assert!(stdout(&o).contains("V_tau = "));

    let o = run(&["check", "-c", s(&bounded), "--tau", "32", "--lambda", "0,0,0"]);
    assert_eq!(o.status.code(), Some(1));

    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ \"plant\": ").unwrap();
    let o = run(&["check", "-c", s(&bad), "--tau", "1", "--lambda", "1,1,1"]);
    assert_eq!(o.status.code(), Some(2));

    let o = run(&["check", "-c", s(&bounded), "--tau", "1", "--lambda", "1,1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["check", "-c", s(&bounded)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn synth_singleton_matches_check() {
    let dir = TempDir::new().unwrap();
    let mut cfg = base_config();
    singleton(&mut cfg, 32.0, [30.0, 1.0, 100.0]);
    let path = write_config(&dir, "single.json", &cfg);
    let out = dir.path().join("r.json");
    let o = run(&["synth", "-c", s(&path), "-o", s(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let result = ResultFile::from_json(&std::fs::read_to_string(&out).unwrap()).unwrap();

    let o = run(&["check", "-c", s(&path), "--tau", "32", "--lambda", "30,1,100"]);
    let line = stdout(&o).lines().find(|l| l.starts_with("V_tau = ")).unwrap().to_string();
    let v: f64 = line.trim_start_matches("V_tau = ").parse().unwrap();
    assert_eq!(v, result.v_tau);
    assert_eq!(result.diagnostics.pi_count, vec![2]);
    assert_eq!(result.k.len(), 3);
}

#[test]
fn synth_empty_and_infeasible() {
    let dir = TempDir::new().unwrap();
    let mut cfg = base_config();
    cfg["search"]["tau_grid"] = json!([[]]);
    let path = write_config(&dir, "empty.json", &cfg);
    let o = run(&["synth", "-c", s(&path), "-o", s(&dir.path().join("r.json"))]);
    assert_eq!(o.status.code(), Some(2));

    let out = dir.path().join("rm.json");
    let o = run(&["synth", "-c", s(&configs().join("compressor_monotone.json")), "-o", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn simulate_outputs() {
    let dir = TempDir::new().unwrap();
    let mut cfg = base_config();
    singleton(&mut cfg, 32.0, [30.0, 1.0, 100.0]);
    let path = write_config(&dir, "c.json", &cfg);
    let result = dir.path().join("r.json");
    assert_eq!(run(&["synth", "-c", s(&path), "-o", s(&result)]).status.code(), Some(0));
    let v_tau = ResultFile::from_json(&std::fs::read_to_string(&result).unwrap()).unwrap().v_tau;

    let traj = dir.path().join("t.csv");
    let o = run(&["simulate", "-c", s(&path), "--controller", s(&result), "-o", s(&traj), "--t-final", "5", "--dt", "0.01"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let mut rdr = csv::Reader::from_path(&traj).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["t", "x1", "x2", "mu1", "u1", "nu1", "nut1", "J"]);
    let rows: Vec<Vec<f64>> = rdr
        .records()
        .map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 501);
    assert!(rows.windows(2).all(|w| w[1][7] >= w[0][7]));
    assert!(rows.last().unwrap()[7] <= v_tau);

    let o = run(&["simulate", "-c", s(&path), "--controller", s(&result), "-o", s(&traj), "--t-final", "0.01", "--dt", "0.01"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(&traj).unwrap().lines().count(), 3);

    let mut zero = cfg.clone();
    zero["x0"] = json!([0.0, 0.0]);
    let zpath = write_config(&dir, "z.json", &zero);
    let o = run(&["simulate", "-c", s(&zpath), "--controller", s(&result), "-o", s(&traj), "--t-final", "1", "--dt", "0.1"]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&traj).unwrap();
    for line in text.lines().skip(1) {
        assert!(line.split(',').skip(1).all(|v| v.parse::<f64>().unwrap() == 0.0), "{line}");
    }

    let o = run(&["simulate", "-c", s(&path), "--controller", s(&result), "-o", s(&traj), "--realization", "bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_rejects_mismatched_controller() {
    let dir = TempDir::new().unwrap();
    let mut cfg = base_config();
    singleton(&mut cfg, 32.0, [30.0, 1.0, 100.0]);
    let path = write_config(&dir, "c.json", &cfg);
    let result = dir.path().join("r.json");
    run(&["synth", "-c", s(&path), "-o", s(&result)]);
    let mut r: Value = serde_json::from_str(&std::fs::read_to_string(&result).unwrap()).unwrap();
    r["K"] = json!([[1.0, 2.0]]);
    std::fs::write(&result, r.to_string()).unwrap();
    let o = run(&["simulate", "-c", s(&path), "--controller", s(&result), "-o", s(&dir.path().join("t.csv"))]);
    assert_eq!(o.status.code(), Some(2));
}

fn read_sweep(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let header = rdr.headers().unwrap().iter().map(String::from).collect();
    let rows = rdr.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn sweep_rows_in_grid_order() {
    let dir = TempDir::new().unwrap();
    let mut cfg = base_config();
    singleton(&mut cfg, 32.0, [30.0, 1.0, 100.0]);
    let path = write_config(&dir, "one.json", &cfg);
    let out = dir.path().join("s.csv");
    assert_eq!(run(&["sweep", "-c", s(&path), "-o", s(&out)]).status.code(), Some(0));
    let (header, rows) = read_sweep(&out);
    assert_eq!(header, ["tau1", "lambda1_1", "lambda1_2", "lambda1_3", "stage", "status", "V_tau"]);
    assert_eq!(rows.len(), 1);

    cfg["search"] = json!({"tau_grid": [[16.0, 32.0]], "lambda_grid": [[[30.0, 1.0, 100.0], [0.0, 0.0, 0.0]]]});
    let path = write_config(&dir, "four.json", &cfg);
    assert_eq!(run(&["sweep", "-c", s(&path), "-o", s(&out)]).status.code(), Some(0));
    let (_, rows) = read_sweep(&out);
    let keys: Vec<(&str, &str, &str)> = rows.iter().map(|r| (r[0].as_str(), r[1].as_str(), r[5].as_str())).collect();
    assert_eq!(
        keys,
        [
            ("16.0", "30.0", "feasible"),
            ("16.0", "0.0", "AllZeroMultiplier"),
            ("32.0", "30.0", "feasible"),
            ("32.0", "0.0", "AllZeroMultiplier")
        ]
    );
    assert!(rows[1][6].is_empty());
}

#[test]
fn sweep_and_synth_agree_and_are_deterministic() {
    let dir = TempDir::new().unwrap();
    let cfg = configs().join("compressor.json");
    let sweep1 = dir.path().join("s1.csv");
    let sweep2 = dir.path().join("s2.csv");
    let r1 = dir.path().join("r1.json");
    let r2 = dir.path().join("r2.json");
    for (sw, r) in [(&sweep1, &r1), (&sweep2, &r2)] {
        assert_eq!(run(&["sweep", "-c", s(&cfg), "-o", s(sw)]).status.code(), Some(0));
        assert_eq!(run(&["synth", "-c", s(&cfg), "-o", s(r)]).status.code(), Some(0));
    }
    assert_eq!(std::fs::read(&sweep1).unwrap(), std::fs::read(&sweep2).unwrap());
    assert_eq!(std::fs::read(&r1).unwrap(), std::fs::read(&r2).unwrap());

    let (_, rows) = read_sweep(&sweep1);
    let min = rows
        .iter()
        .filter(|r| r[5] == "feasible")
        .map(|r| r[6].parse::<f64>().unwrap())
        .fold(f64::INFINITY, f64::min);
    let synth = ResultFile::from_json(&std::fs::read_to_string(&r1).unwrap()).unwrap();
    assert_eq!(min, synth.v_tau);
}
