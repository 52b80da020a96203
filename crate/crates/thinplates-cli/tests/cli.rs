use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;
use thinplates::fixtures;
use thinplates::skeleton::SkeletonFile;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_thinplates")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Case {
    dir: TempDir,
}

impl Case {
    fn new(skeleton: &SkeletonFile, config: Value) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("skeleton.json"), skeleton.to_json()).unwrap();
        let mut config = config;
        config["skeleton"] = json!("skeleton.json");
        std::fs::write(dir.path().join("config.json"), serde_json::to_string_pretty(&config).unwrap()).unwrap();
        Self { dir }
    }

    fn config(&self) -> String {
        self.dir.path().join("config.json").display().to_string()
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, command: &str, out: &str, extra: &[&str]) -> Output {
        let (config, out) = (self.config(), self.out(out).display().to_string());
        let mut args = vec![command, "--config", &config, "--out", &out];
        args.extend_from_slice(extra);
        run(&args)
    }
}

fn bending_load(face: usize) -> Value {
    json!({ "faces": { face.to_string(): { "f_i": { "kind": "constant", "value": [0.0, 0.0, 1.0] } } } })
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}

#[test]
fn validate_accepts_t_junction() {
    let case = Case::new(&fixtures::t_junction(), json!({}));
    let o = case.run("validate", "out", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(case.out("out/validation.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["h3"], json!(true));
    assert_eq!(report["config"]["delta_list"], json!([0.2, 0.1, 0.05]));
}

#[test]
fn validate_flags_missing_clamping() {
    let mut s = fixtures::t_junction();
    for e in &mut s.edges {
        e.clamped = false;
    }
    let o = Case::new(&s, json!({})).run("validate", "out", &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("H3"), "{}", stderr(&o));
}

#[test]
fn validate_rejects_non_planar_face() {
    let mut s = fixtures::cantilever_square(1.0);
    s.faces[0].vertices[2][2] = 0.1;
    let o = Case::new(&s, json!({})).run("validate", "out", &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("not planar"), "{}", stderr(&o));
}

#[test]
fn malformed_config_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    std::fs::write(&path, "{\n  \"mesh_size\": 0.1,\n  \"delta_list\": [0.2, \n}").unwrap();
    let o = run(&["solve", "--config", path.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line"), "{}", stderr(&o));
    let o = run(&["solve"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn increasing_delta_list_is_an_input_error() {
    let case = Case::new(&fixtures::cantilever_square(1.0), json!({}));
    let o = case.run("converge", "out", &["--delta-list", "0.05,0.1"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let o = case.run("converge", "out", &["--delta-list", "0.4,0.1"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("delta0"), "{}", stderr(&o));
}

#[test]
fn zero_forces_give_zero_solution_files() {
    let case = Case::new(&fixtures::right_angle_pair(), json!({ "mesh_size": 0.25 }));
    let o = case.run("solve", "out", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for id in [1, 2] {
        for name in [format!("nodes_face{id}.csv"), format!("stress_face{id}.csv")] {
            let rows = read_csv(&case.out("out").join(&name));
            assert!(!rows.is_empty());
            for row in rows {
                for v in &row[4..] {
                    assert_eq!(v.parse::<f64>().unwrap(), 0.0, "{name}: {row:?}");
                }
            }
        }
    }
}

#[test]
fn clamped_square_summary_has_deflection() {
    let case = Case::new(&fixtures::clamped_square(1.0), json!({ "mesh_size": 0.125, "forces": bending_load(1) }));
    let o = case.run("solve-bending", "out", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = read_csv(&case.out("out/summary.csv"));
    let w = rows.iter().find(|r| r[0] == "max_deflection").expect("deflection row");
    assert!(w[1].parse::<f64>().unwrap() > 0.0);
}

#[test]
fn verification_mode_is_byte_identical() {
    let forces = json!({ "faces": {
        "1": { "f_i": { "kind": "constant", "value": [0.0, 0.0, 1.0] },
               "f_e": { "kind": "constant", "value": [1.0, 0.5, 0.0] } }
    } });
    let case = Case::new(&fixtures::right_angle_pair(), json!({ "mesh_size": 0.125, "forces": forces }));
    for out in ["a", "b"] {
        let o = case.run("solve", out, &["--verify"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let mut names: Vec<_> = std::fs::read_dir(case.out("a")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let mut compared = 0;
    for name in names.iter().filter(|n| n.to_string_lossy().ends_with(".csv")) {
        let a = std::fs::read(case.out("a").join(name)).unwrap();
        let b = std::fs::read(case.out("b").join(name)).unwrap();
        assert!(a == b, "{name:?} differs");
        compared += 1;
    }
    assert_eq!(compared, 5);
}

#[test]
fn inadmissible_membrane_load_exits_one() {
    let forces = json!({ "faces": { "1": { "f_e": { "kind": "constant", "value": [1.0, 0.0, 0.5] } } } });
    let case = Case::new(&fixtures::right_angle_pair(), json!({ "mesh_size": 0.25, "forces": forces }));
    let o = case.run("solve-membrane", "out", &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("normal component"), "{}", stderr(&o));
}

#[test]
fn single_delta_cannot_show_a_trend() {
    let case = Case::new(&fixtures::cantilever_square(1.0), json!({ "forces": bending_load(1) }));
    let o = case.run("converge", "out", &["--delta-list", "0.1"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("trend needs ≥ 2 deltas"), "{}", stderr(&o));
}

#[test]
fn single_plate_bending_converges() {
    let case = Case::new(&fixtures::cantilever_square(1.0), json!({ "forces": bending_load(1) }));
    let o = case.run("converge", "out", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = read_csv(&case.out("out/convergence.csv"));
    let excluded: Vec<_> = rows.iter().filter(|r| r[8] == "true").collect();
    assert_eq!(excluded.len(), 3);
    let deltas: Vec<f64> = excluded.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(deltas, vec![0.2, 0.1, 0.05]);
}

#[test]
fn junction_exclusion_only_lowers_distances() {
    let case = Case::new(&fixtures::right_angle_pair(), json!({ "forces": bending_load(1), "delta_list": [0.2, 0.1] }));
    let o = case.run("converge", "out", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = read_csv(&case.out("out/convergence.csv"));
    for pair in rows.chunks(2) {
        let (off, on) = (&pair[0], &pair[1]);
        assert_eq!((off[8].as_str(), on[8].as_str()), ("false", "true"));
        for col in 3..7 {
            let (a, b): (f64, f64) = (off[col].parse().unwrap(), on[col].parse().unwrap());
            assert!(b <= a * (1.0 + 1e-12), "column {col}: on {b} > off {a}");
        }
    }
}

#[test]
fn lemma_checks_pass() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(&["check-lemmas", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = read_csv(&out.join("lemmas.csv"));
    assert_eq!(rows.len(), 50 * 3 + 2);
    assert!(rows.iter().all(|r| r[4] == "true"));
}
