use std::path::Path;
use std::process::{Command, Output};

fn dfrdd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dfrdd")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let o = dfrdd(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn history_rows(dir: &Path) -> Vec<String> {
    let s = std::fs::read_to_string(dir.join("history.csv")).unwrap();
    let mut lines = s.lines().map(String::from);
    assert_eq!(lines.next().unwrap(), "iteration,train_loss,val_loss,rel_h1_error_pct");
    lines.collect()
}

fn final_error(dir: &Path) -> f64 {
    history_rows(dir).last().unwrap().split(',').nth(3).unwrap().parse().unwrap()
}

#[test]
fn zero_iterations_give_one_row() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("c1");
    ok(&["run", "--case", "case1", "--iterations", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(history_rows(&out).len(), 1);
    for f in ["config_resolved.json", "cover_level_0.json", "solution.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let sol = std::fs::read_to_string(out.join("solution.csv")).unwrap();
    assert!(sol.starts_with("x,y,u,u_exact,grad_error\n"));
}

#[test]
fn resolved_config_reproduces_history() {
    let t = tempfile::tempdir().unwrap();
    let a = t.path().join("a");
    let b = t.path().join("b");
    ok(&["run", "--case", "custom", "--iterations", "15", "--seed", "3", "--out", a.to_str().unwrap()]);
    let cfg = a.join("config_resolved.json");
    ok(&["run", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    let ha = std::fs::read(a.join("history.csv")).unwrap();
    let hb = std::fs::read(b.join("history.csv")).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(history_rows(&a).len(), 16);

    let table = ok(&["compare", a.to_str().unwrap(), b.to_str().unwrap()]).stdout;
    let table = String::from_utf8(table).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 3);
    let strip = |r: &str| r.split_once(',').unwrap().1.to_string();
    assert_eq!(strip(rows[1]), strip(rows[2]));
}

#[test]
fn invalid_config_exits_2() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().to_str().unwrap();
    for args in [
        vec!["run", "--case", "case4", "--tau", "0", "--out", out],
        vec!["run", "--case", "case4", "--tau", "1.2", "--out", out],
        vec!["run", "--case", "nope", "--out", out],
        vec!["run", "--case", "case1", "--modes", "0", "--out", out],
        vec!["run", "--out", out],
    ] {
        assert_eq!(dfrdd(&args).status.code(), Some(2), "{args:?}");
    }
    let missing = t.path().join("missing");
    assert_eq!(dfrdd(&["compare", out, missing.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn divergence_exits_3() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("d");
    let o = dfrdd(&["run", "--case", "custom", "--lr", "1e308", "--iterations", "5", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn lshape_xi_report() {
    let t = tempfile::tempdir().unwrap();
    let o = ok(&["run", "--verify", "lshape-xi", "--out", t.path().to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let xi = v["xi_sq_estimate"].as_f64().unwrap();
    assert!((1.0..=2.02).contains(&xi), "{xi}");
    assert_eq!(v["grid_N"], 128);
    assert_eq!(v["singular_points"], serde_json::json!([[0.0, 0.0]]));
    assert!(v["grad_bound_pass_rate"].as_f64().unwrap() >= 0.999);
    assert!(t.path().join("verify_lshape_xi.json").exists());
}

#[test]
fn partition_and_gradcheck_reports() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().to_str().unwrap();
    let o = ok(&["run", "--verify", "partition", "--case", "case1", "--out", out]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["geometry"], "pentagon");
    assert_eq!(v["singular_points"], serde_json::json!([[1.0, -1.0], [1.0, 1.0]]));
    assert!(v["partition_max_deviation"].as_f64().unwrap() <= 1e-12);
    let o = ok(&["run", "--verify", "gradcheck", "--case", "case4", "--out", out]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["rel_error"].as_f64().unwrap() <= 1e-5);
    assert_eq!(v["components"].as_array().unwrap().len(), 50);
}

#[test]
fn adaptive_case4_beats_global_reference() {
    let t = tempfile::tempdir().unwrap();
    let a = t.path().join("adaptive");
    let r = t.path().join("reference");
    ok(&["run", "--case", "case4", "--seed", "1", "--out", a.to_str().unwrap()]);
    assert_eq!(history_rows(&a).len(), 5 * 500 + 1000 + 1);
    for q in 0..=5 {
        assert!(a.join(format!("cover_level_{q}.json")).exists());
    }
    ok(&["run", "--case", "case4-reference", "--seed", "1", "--out", r.to_str().unwrap()]);
    assert_eq!(history_rows(&r).len(), 3501);
    let table = String::from_utf8(ok(&["compare", a.to_str().unwrap(), r.to_str().unwrap()]).stdout).unwrap();
    assert!(table.lines().nth(1).unwrap().contains(",case4,"));
    assert!(table.lines().nth(2).unwrap().contains(",case4-reference,"));
    assert!(final_error(&a) < final_error(&r), "{} vs {}", final_error(&a), final_error(&r));
}
