//! End-to-end checks of the command-line surface: exit codes, file
//! formats, and determinism.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_symcomp"))
}

fn workdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("symcomp-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write(path: &Path, content: &str) {
    fs::write(path, content).unwrap();
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

const T3: &str = r#"{"states":[{"id":0,"output":[0.0]},{"id":1,"output":[1.0]},{"id":2,"output":[2.0]}],"initial":[0],"ext_inputs":[[0.0],[1.0]],"int_inputs":[[]],"transitions":[[0,0,0,0],[0,1,0,1],[1,0,0,2],[1,1,0,0],[2,0,0,2],[2,1,0,2]],"output_space":{"metric":"linf","dim":1},"ext_input_space":{"metric":"linf","dim":1},"int_input_space":{"metric":"zero","dim":0}}"#;

#[test]
fn check_suite_passes_and_logs_seeds() {
    let out = bin()
        .args(["check", "--theorem", "claim1", "--seeds", "3", "--seed", "11"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{out:?}");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("claim1 seed 11: pass"));
    assert!(stdout.contains("claim1: 3/3 passed"));
}

#[test]
fn check_with_zero_seeds_is_a_vacuous_pass_with_warning() {
    let out = bin()
        .args(["check", "--theorem", "3", "--seeds", "0"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("vacuous"));
}

#[test]
fn invalid_grid_exits_with_parse_code() {
    let dir = workdir("badgrid");
    let model = dir.join("model.json");
    write(
        &model,
        r#"{"kind":"affine_scalar","self_coeff":0.5,"int_coeffs":[],"input_gain":1.0,"offset":0.0,"domain":[0.0,10.0],"ext_values":[[0.0],[1.0]]}"#,
    );
    let grid = dir.join("grid.json");
    write(
        &grid,
        r#"{"lower":[0.0],"upper":[10.0],"cells_per_dim":0,"input_points":5}"#,
    );
    let out = bin()
        .args(["abstract"])
        .arg("--model")
        .arg(&model)
        .arg("--grid")
        .arg(&grid)
        .arg("--out")
        .arg(dir.join("abs.json"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 2, "{out:?}");
}

#[test]
fn abstraction_is_deterministic_across_reruns() {
    let dir = workdir("determinism");
    let model = dir.join("model.json");
    write(&model, r#"{"kind":"traffic_section","index":1}"#);
    let out1 = dir.join("a.json");
    let out2 = dir.join("b.json");
    for out in [&out1, &out2] {
        let st = bin()
            .args(["abstract"])
            .arg("--model")
            .arg(&model)
            .args(["--sequence", "10", "8"])
            .arg("--out")
            .arg(out)
            .output()
            .unwrap();
        assert_eq!(code(&st), 0, "{st:?}");
    }
    assert_eq!(fs::read(&out1).unwrap(), fs::read(&out2).unwrap());
    // The sequence abstraction stays within |U|^N states.
    let text = fs::read_to_string(&out1).unwrap();
    let j: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(j["system"]["states"].as_array().unwrap().len() <= 256);
}

#[test]
fn t3_synthesis_reproduces_the_maximal_controller() {
    let dir = workdir("t3");
    write(&dir.join("t3.json"), T3);
    write(
        &dir.join("net.json"),
        r#"{"components":["t3.json"],"edges":[],"M":[0.0]}"#,
    );
    write(
        &dir.join("safe.json"),
        r#"{"sets":[{"kind":"states","states":[0,1]}]}"#,
    );
    let out = bin()
        .args(["synthesize", "--mode", "monolithic"])
        .arg("--network")
        .arg(dir.join("net.json"))
        .arg("--safe")
        .arg(dir.join("safe.json"))
        .arg("--out")
        .arg(dir.join("ctrl.json"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{out:?}");
    let ctrl: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("ctrl.json")).unwrap()).unwrap();
    let entries = ctrl["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 2);
    assert_eq!(entries[0]["state"], 0);
    assert_eq!(entries[0]["inputs"], serde_json::json!([[0, 0], [1, 0]]));
    assert_eq!(entries[1]["state"], 1);
    assert_eq!(entries[1]["inputs"], serde_json::json!([[1, 0]]));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("ctrl.report.json")).unwrap()).unwrap();
    assert_eq!(report["cont_size"], 2);

    // Both modes agree (single component: completeness is immediate).
    let out = bin()
        .args(["synthesize", "--mode", "both"])
        .arg("--network")
        .arg(dir.join("net.json"))
        .arg("--safe")
        .arg(dir.join("safe.json"))
        .arg("--out")
        .arg(dir.join("ctrl2.json"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{out:?}");
    assert!(String::from_utf8_lossy(&out.stdout).contains("equal=true"));

    // An empty controlled invariant is a valid outcome: exit 0, empty
    // controller, and a warning.
    write(
        &dir.join("unsafe.json"),
        r#"{"sets":[{"kind":"states","states":[]}]}"#,
    );
    let out = bin()
        .args(["synthesize", "--mode", "monolithic"])
        .arg("--network")
        .arg(dir.join("net.json"))
        .arg("--safe")
        .arg(dir.join("unsafe.json"))
        .arg("--out")
        .arg(dir.join("empty.json"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{out:?}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));
    let ctrl: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("empty.json")).unwrap()).unwrap();
    assert_eq!(ctrl["entries"].as_array().unwrap().len(), 0);
}

#[test]
fn incompatible_composition_exits_with_code_3() {
    let dir = workdir("incompat");
    let producer = r#"{"states":[{"id":0,"output":[0.0]},{"id":1,"output":[1.0]},{"id":2,"output":[2.0]}],"initial":[0,1,2],"ext_inputs":[[0.0]],"int_inputs":[[]],"transitions":[[0,0,0,1],[1,0,0,2],[2,0,0,0]],"output_space":{"metric":"linf","dim":1},"ext_input_space":{"metric":"linf","dim":1},"int_input_space":{"metric":"zero","dim":0}}"#;
    let consumer = r#"{"states":[{"id":0,"output":[10.0]},{"id":1,"output":[11.0]}],"initial":[0,1],"ext_inputs":[[0.0]],"int_inputs":[[0.5],[1.5]],"transitions":[[0,0,0,1],[0,0,1,1],[1,0,0,0],[1,0,1,0]],"output_space":{"metric":"linf","dim":1},"ext_input_space":{"metric":"linf","dim":1},"int_input_space":{"metric":"max","parts":[{"metric":"linf","dim":1}]}}"#;
    write(&dir.join("producer.json"), producer);
    write(&dir.join("consumer.json"), consumer);
    write(
        &dir.join("net.json"),
        r#"{"components":["producer.json","consumer.json"],"edges":[[0,1]],"M":[0.0,0.4]}"#,
    );
    let out = bin()
        .args(["compose"])
        .arg("--network")
        .arg(dir.join("net.json"))
        .arg("--out")
        .arg(dir.join("composed.json"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 3, "{out:?}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("incompatible"));

    // With the documented threshold it composes.
    let out = bin()
        .args(["compose", "--M", "0.0,0.5"])
        .arg("--network")
        .arg(dir.join("net.json"))
        .arg("--out")
        .arg(dir.join("composed.json"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{out:?}");
    assert!(dir.join("composed.map.json").exists());
}

#[test]
fn diff_accepts_a_system_against_itself() {
    let dir = workdir("diff");
    write(&dir.join("t3.json"), T3);
    let out = bin()
        .args(["diff"])
        .arg("--a")
        .arg(dir.join("t3.json"))
        .arg("--b")
        .arg(dir.join("t3.json"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{out:?}");
    assert!(String::from_utf8_lossy(&out.stdout).contains("subset"));
}

#[test]
fn simulate_zero_steps_writes_a_single_row() {
    let dir = workdir("sim0");
    let model = dir.join("model.json");
    write(
        &model,
        r#"{"kind":"affine_scalar","self_coeff":0.5,"int_coeffs":[],"input_gain":2.0,"offset":0.0,"domain":[0.0,10.0],"ext_values":[[0.0],[1.0]]}"#,
    );
    let grid = dir.join("grid.json");
    write(
        &grid,
        r#"{"lower":[0.0],"upper":[10.0],"cells_per_dim":5,"input_points":2}"#,
    );
    let abs = dir.join("abs.json");
    let st = bin()
        .args(["abstract"])
        .arg("--model")
        .arg(&model)
        .arg("--grid")
        .arg(&grid)
        .arg("--out")
        .arg(&abs)
        .output()
        .unwrap();
    assert_eq!(code(&st), 0, "{st:?}");
    write(
        &dir.join("net.json"),
        r#"{"components":["abs.json"],"edges":[],"M":[0.0]}"#,
    );
    write(
        &dir.join("safe.json"),
        r#"{"sets":[{"kind":"output_box","lo":[0.0],"hi":[10.0]}]}"#,
    );
    let st = bin()
        .args(["synthesize", "--mode", "monolithic"])
        .arg("--network")
        .arg(dir.join("net.json"))
        .arg("--safe")
        .arg(dir.join("safe.json"))
        .arg("--out")
        .arg(dir.join("ctrl.json"))
        .output()
        .unwrap();
    assert_eq!(code(&st), 0, "{st:?}");
    let csv = dir.join("out.csv");
    let st = bin()
        .args(["simulate", "--x0", "4.2", "--steps", "0"])
        .arg("--model")
        .arg(&model)
        .arg("--system")
        .arg(&abs)
        .arg("--controller")
        .arg(dir.join("ctrl.json"))
        .arg("--csv")
        .arg(&csv)
        .output()
        .unwrap();
    assert_eq!(code(&st), 0, "{st:?}");
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 2); // header + one row
    assert!(text.lines().nth(1).unwrap().starts_with("0,4.2"));
}

#[test]
fn uncontrollable_start_exits_with_code_4() {
    let dir = workdir("sim4");
    let model = dir.join("model.json");
    write(
        &model,
        r#"{"kind":"affine_scalar","self_coeff":0.5,"int_coeffs":[],"input_gain":2.0,"offset":0.0,"domain":[0.0,10.0],"ext_values":[[0.0],[1.0]]}"#,
    );
    let grid = dir.join("grid.json");
    write(
        &grid,
        r#"{"lower":[0.0],"upper":[10.0],"cells_per_dim":5,"input_points":2}"#,
    );
    let abs = dir.join("abs.json");
    bin()
        .args(["abstract"])
        .arg("--model")
        .arg(&model)
        .arg("--grid")
        .arg(&grid)
        .arg("--out")
        .arg(&abs)
        .output()
        .unwrap();
    // Empty controller: no state is enabled.
    write(&dir.join("ctrl.json"), r#"{"entries":[]}"#);
    let st = bin()
        .args(["simulate", "--x0", "4.2", "--steps", "5"])
        .arg("--model")
        .arg(&model)
        .arg("--system")
        .arg(&abs)
        .arg("--controller")
        .arg(dir.join("ctrl.json"))
        .arg("--csv")
        .arg(dir.join("out.csv"))
        .output()
        .unwrap();
    assert_eq!(code(&st), 4, "{st:?}");
}

#[test]
fn microgrid_case_runs_briefly_and_reports() {
    let dir = workdir("case");
    let report = dir.join("report.json");
    let csv = dir.join("traj.csv");
    let out = bin()
        .args(["run-case", "microgrid4", "--steps", "200", "--seed", "7"])
        .arg("--csv")
        .arg(&csv)
        .arg("--report")
        .arg(&report)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{out:?}");
    let rep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(rep["controllable_states"], 625);
    assert_eq!(rep["trajectory_safe"], true);
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("step,time,v1,v2,v3,v4,u2_kw,u3_kw,safe"));
    assert_eq!(text.lines().count(), 202);

    // Seed-pinned reruns are byte-identical.
    let csv2 = dir.join("traj2.csv");
    let out = bin()
        .args(["run-case", "microgrid4", "--steps", "200", "--seed", "7"])
        .arg("--csv")
        .arg(&csv2)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{out:?}");
    assert_eq!(fs::read(&csv).unwrap(), fs::read(&csv2).unwrap());
}
