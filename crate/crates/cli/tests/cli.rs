use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pmp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pmp"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = pmp(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const TWO_BY_TWO: &str = r#"{
    "students": [{"id": "s1", "year": 1}, {"id": "s2", "year": 1}],
    "courses": [{"id": "A", "capacity": 1}, {"id": "B", "capacity": 1}],
    "k": 1, "R": 2, "priority_mode": "explicit",
    "priorities": [["s2", "A", 2]],
    "utilities": [["s1", "A", 2.0], ["s1", "B", 1.0], ["s2", "A", 2.0], ["s2", "B", 1.0]]
}"#;

#[test]
fn generate_solve_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--seed", "2", "gen", "--scale", "0.03", "--choice-set", "8", "--out", "inst.json"]);
    let inst: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("inst.json")).unwrap()).unwrap();
    assert!(inst["students"].as_array().unwrap().len() > 50);

    ok(d, &["--seed", "2", "run", "pmp", "--instance", "inst.json", "--out-alloc", "a.csv", "--out-prices", "p.csv"]);
    let prices = fs::read_to_string(d.join("p.csv")).unwrap();
    assert!(prices.starts_with("course_id,t,cutoff_level,price_at_cutoff,excess\n"));
    ok(d, &["--seed", "2", "run", "da-stb", "--instance", "inst.json", "--out-alloc", "b.csv"]);

    ok(d, &["metrics", "--report", "all", "--instance", "inst.json", "--alloc", "a.csv", "--against", "b.csv", "--prices", "p.csv", "--out", "rep"]);
    for name in ["stability", "efficiency", "envy", "violations", "prices", "compare"] {
        assert!(d.join("rep").join(format!("{name}.csv")).exists(), "{name}");
    }
    let stability = fs::read_to_string(d.join("rep/stability.csv")).unwrap();
    assert_eq!(stability.trim(), "kind,student_id,course_ids,gain");
    let violations = ok(d, &["metrics", "--report", "violations", "--instance", "inst.json", "--alloc", "a.csv"]);
    assert!(violations.contains("violation_share,0\n"));
}

#[test]
fn explicit_instance_runs_every_mechanism() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("ex.json"), TWO_BY_TWO).unwrap();
    for m in ["pmp", "rsd", "rsd-optimal", "da-stb", "da-mtb", "da-minority", "aceei", "aceei-kludgy", "ps"] {
        let out = ok(d, &["--seed", "1", "run", m, "--instance", "ex.json", "--envs", "3"]);
        assert!(out.starts_with("student_id,course_id,share\n"), "{m}: {out}");
    }
    // the higher-priority student gets A under the market
    let out = ok(d, &["run", "pmp", "--instance", "ex.json"]);
    assert!(out.contains("s2,A,1"), "{out}");
    assert!(out.contains("s1,B,1"), "{out}");
}

#[test]
fn unknown_mechanism_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("ex.json"), TWO_BY_TWO).unwrap();
    let out = pmp(dir.path(), &["run", "lottery", "--instance", "ex.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown mechanism"));
}

#[test]
fn reserve_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--seed", "5", "gen", "--scale", "0.03", "--out", "inst.json"]);
    ok(d, &["--seed", "5", "run", "rsd", "--instance", "inst.json", "--out-alloc", "r.csv"]);
    let log = ok(d, &["reserves", "adjust", "--instance", "inst.json", "--alloc", "r.csv", "--out-reserves", "adj.json"]);
    assert!(log.starts_with("course_id,spec_index,old_seats,new_seats\n"));
    let specs: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("adj.json")).unwrap()).unwrap();
    assert!(specs.as_array().is_some());
    ok(d, &["reserves", "optimal", "--instance", "inst.json", "--envs", "4", "--out", "opt.json"]);
    assert!(d.join("opt.json").exists());
    // check exits non-zero exactly when some course is infeasible
    let check = pmp(d, &["reserves", "check", "--instance", "inst.json", "--alloc", "r.csv"]);
    let listed = String::from_utf8_lossy(&check.stdout).lines().count() - 1;
    assert_eq!(check.status.success(), listed == 0);
}

#[test]
fn demand_eval_prints_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("ex.json"), TWO_BY_TWO).unwrap();
    fs::write(d.join("p.csv"), "course_id,t\nA,2.0\nB,0.5\n").unwrap();
    let out = ok(d, &["demand", "eval", "--instance", "ex.json", "--prices", "p.csv", "--student", "s2", "--budget", "1.0"]);
    // s2 faces 2.0 - 1.251 = 0.749 at A and affords it
    assert_eq!(out, "course_id,level,price,utility\nA,2,0.749,2\n");
    let out = ok(d, &["demand", "eval", "--instance", "ex.json", "--prices", "p.csv", "--student", "s1", "--budget", "1.0"]);
    assert_eq!(out, "course_id,level,price,utility\nB,1,0.5,1\n");
}

#[test]
fn run_all_writes_tagged_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("plan.toml"),
        "mechanisms = [\"pmp\", \"da-stb\"]\nbenchmark = \"da-stb\"\n[source.generator]\nscale = 0.03\n",
    )
    .unwrap();
    ok(d, &["--config", "plan.toml", "--seed", "7", "--out-dir", "exp", "run", "all", "--seeds", "2"]);
    let names: Vec<String> = fs::read_dir(d.join("exp"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    for prefix in ["alloc-pmp-", "alloc-da-stb-", "prices-pmp-", "metrics-", "summary-", "preferences-", "run-"] {
        assert!(names.iter().any(|n| n.starts_with(prefix)), "{prefix} in {names:?}");
    }
    assert!(names.iter().any(|n| n.ends_with("-s7.csv")));
    assert!(names.iter().any(|n| n.ends_with("-s8.csv")));
    let manifest = names.iter().find(|n| n.starts_with("run-")).unwrap();
    let run: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("exp").join(manifest)).unwrap()).unwrap();
    assert_eq!(run["all_completed"], true);
}

#[test]
fn sigma_sweep_writes_one_row_set_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("plan.toml"),
        "mechanisms = [\"pmp\", \"da-stb\"]\nbenchmark = \"da-stb\"\nseeds = [0]\n[source.generator]\nscale = 0.03\n",
    )
    .unwrap();
    ok(d, &["--config", "plan.toml", "--out-dir", "sw", "sweep", "--axis", "sigma", "--values", "0.75,1.5"]);
    let sweep = fs::read_dir(d.join("sw"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_string_lossy().starts_with("sweep-sigma-"))
        .expect("sweep table");
    let text = fs::read_to_string(sweep).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.iter().filter(|r| r.starts_with("0.75,pmp,all")).count(), 1);
    assert_eq!(rows.iter().filter(|r| r.starts_with("1.5,pmp,all")).count(), 1);
}
