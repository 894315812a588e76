use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn gegd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gegd")).args(args).output().expect("spawn gegd")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

const SMALL_GRID: &str = "version = 1
seed = 3

[grid]
rows = 8
cols = 12
symmetry = \"d1-cols\"
min_feature = 3
";

fn run_config(dir: &Path, algorithm: &str, extra: &str) -> PathBuf {
    let body = format!("algorithm = \"{algorithm}\"\n{SMALL_GRID}\n[gegd]\nmax_iterations = 6\n{extra}");
    write_config(dir, &format!("{algorithm}.toml"), &body)
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_trace_design_and_summary() {
    let tmp = TempDir::new().unwrap();
    let cfg = run_config(tmp.path(), "gegd", "");
    let out_dir = tmp.path().join("out");
    let out = gegd(&["run", "--config", s(&cfg), "--out", s(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let trace = fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 6);
    for f in ["best_design.pgm", "best_design.csv", "summary.json"] {
        assert!(out_dir.join(f).is_file(), "missing {f}");
    }
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["algorithm"], "gegd");
    assert_eq!(summary["iterations"], 6);
    assert_eq!(summary["feasible"], true);
    assert!(summary["best_cost"].as_f64().unwrap() < 0.0);
}

#[test]
fn run_is_identical_across_worker_counts() {
    let tmp = TempDir::new().unwrap();
    let cfg = run_config(tmp.path(), "gegd", "\n[gegd.control_variate]\nenabled = true\ncost_ratio = 33.0\n");
    let mut traces = Vec::new();
    for workers in ["1", "8"] {
        let dir = tmp.path().join(format!("w{workers}"));
        let out = gegd(&["run", "--config", s(&cfg), "--workers", workers, "--out", s(&dir)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        traces.push(fs::read(dir.join("trace.csv")).unwrap());
    }
    assert_eq!(traces[0], traces[1]);
}

#[test]
fn seed_override_changes_the_run() {
    let tmp = TempDir::new().unwrap();
    let cfg = run_config(tmp.path(), "af_pso", "\n[af_pso]\niterations = 4\n");
    let a = gegd(&["run", "--config", s(&cfg), "--out", s(&tmp.path().join("a"))]);
    let b = gegd(&["run", "--config", s(&cfg), "--seed", "99", "--out", s(&tmp.path().join("b"))]);
    assert!(a.status.success() && b.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let ta = fs::read(tmp.path().join("a/trace.csv")).unwrap();
    let tb = fs::read(tmp.path().join("b/trace.csv")).unwrap();
    assert_ne!(ta, tb);
}

#[test]
fn missing_config_exits_with_config_error() {
    let out = gegd(&["run", "--config", "/nonexistent/run.toml"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["exit_code"], 2);
    assert!(err["message"].as_str().unwrap().len() > 0);
}

#[test]
fn invalid_config_exits_with_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", "version = 1\n[grid]\nrows = 0\ncols = 4\nmin_feature = 2\n");
    let out = gegd(&["run", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    stderr_json(&out);
}

#[test]
fn bench_writes_summary_rows() {
    let tmp = TempDir::new().unwrap();
    let body = format!(
        "{SMALL_GRID}\n[gegd.control_variate]\nenabled = true\ncost_ratio = 33.0\n\n[bench]\niterations = 21\nrepetitions = 2\n"
    );
    let cfg = write_config(tmp.path(), "bench.toml", &body);
    let out_dir = tmp.path().join("bench");
    let out = gegd(&["bench", "--config", s(&cfg), "--out", s(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 4 * 2);
    let stats = String::from_utf8(out.stdout).unwrap();
    assert!(stats.starts_with("algorithm,"));
    for alg in ["gegd", "tf", "af_ste", "af_pso"] {
        assert!(stats.lines().any(|l| l.starts_with(&format!("{alg},"))), "{alg} missing:\n{stats}");
    }
}

#[test]
fn bench_rejects_external_problems() {
    let tmp = TempDir::new().unwrap();
    let body = format!("{SMALL_GRID}\n[problem]\nkind = \"external\"\n\n[problem.external]\ncommand = [\"true\"]\n");
    let cfg = write_config(tmp.path(), "ext.toml", &body);
    let out = gegd(&["bench", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "unsupported");
}

#[test]
fn feascheck_reports_feasibility_in_exit_code() {
    let tmp = TempDir::new().unwrap();
    let solid = write_config(tmp.path(), "solid.csv", &"1,1,1,1,1,1\n".repeat(6));
    let mut rows = vec!["1,1,1,1,1,1"; 6];
    rows[2] = "1,1,0,1,1,1";
    let holed = write_config(tmp.path(), "hole.csv", &(rows.join("\n") + "\n"));

    assert_eq!(gegd(&["feascheck", s(&solid), "--min-feature", "3"]).status.code(), Some(0));
    assert_eq!(gegd(&["feascheck", s(&holed), "--min-feature", "3"]).status.code(), Some(1));
    assert_eq!(gegd(&["feascheck", s(&holed), "--min-feature", "1"]).status.code(), Some(0));

    let garbage = write_config(tmp.path(), "bad.csv", "1,2\n");
    assert_eq!(gegd(&["feascheck", s(&garbage), "--min-feature", "1"]).status.code(), Some(2));
}

#[test]
fn feascheck_accepts_run_output() {
    let tmp = TempDir::new().unwrap();
    let cfg = run_config(tmp.path(), "gegd", "");
    let out_dir = tmp.path().join("out");
    assert!(gegd(&["run", "--config", s(&cfg), "--out", s(&out_dir)]).status.success());
    let pgm = out_dir.join("best_design.pgm");
    assert_eq!(gegd(&["feascheck", s(&pgm), "--config", s(&cfg)]).status.code(), Some(0));
}

#[test]
fn covcache_builds_then_reuses() {
    let tmp = TempDir::new().unwrap();
    let cfg = run_config(tmp.path(), "gegd", "");
    let cache = tmp.path().join("cache");
    let first = gegd(&["covcache", "--config", s(&cfg), "--out", s(&cache)]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let info: serde_json::Value = serde_json::from_slice(&first.stdout).unwrap();
    assert_eq!(info["dim"], 8 * 12);
    let path = PathBuf::from(info["path"].as_str().unwrap());
    let bytes = fs::read(&path).unwrap();

    let second = gegd(&["covcache", "--config", s(&cfg), "--out", s(&cache)]);
    assert!(second.status.success());
    assert_eq!(fs::read(&path).unwrap(), bytes);
}

#[test]
fn run_through_external_process() {
    let tmp = TempDir::new().unwrap();
    // Cost = number of solid pixels, so the optimizer should drive it down.
    let script = r#"while IFS= read -r line; do
  id=$(printf '%s' "$line" | sed 's/.*"id":\([0-9]*\).*/\1/')
  bits=$(printf '%s' "$line" | sed 's/.*"design":"\([01]*\)".*/\1/')
  n=$(printf '%s' "$bits" | tr -cd 1 | wc -c | tr -d ' ')
  printf '{"id":%s,"cost":%s}\n' "$id" "$n"
done
"#;
    let stub = write_config(tmp.path(), "stub.sh", script);
    let extra = format!("\n[problem]\nkind = \"external\"\n\n[problem.external]\ncommand = [\"sh\", \"{}\"]\nprocesses = 2\n", s(&stub));
    let cfg = run_config(tmp.path(), "gegd", &extra);
    let out_dir = tmp.path().join("out");
    let out = gegd(&["run", "--config", s(&cfg), "--out", s(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let best = summary["best_cost"].as_f64().unwrap();
    assert!((0.0..=96.0).contains(&best) && best.fract() == 0.0, "best {best}");
}

#[test]
fn failing_external_process_exits_with_backend_error() {
    let tmp = TempDir::new().unwrap();
    let extra = "\n[problem]\nkind = \"external\"\n\n[problem.external]\ncommand = [\"sh\", \"-c\", \"exit 3\"]\n";
    let cfg = run_config(tmp.path(), "gegd", extra);
    let out = gegd(&["run", "--config", s(&cfg), "--out", s(&tmp.path().join("out"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stderr_json(&out)["error"], "backend");
}
