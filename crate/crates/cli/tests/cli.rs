use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn geoconn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geoconn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("geoconn-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn flat_connect_finds_the_segment() {
    let o = geoconn(&["--model", r#"{"name":"flat"}"#, "connect", "--p", "0,0", "--q", "3,4"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&o);
    assert_eq!(r["schema"], 1);
    assert_eq!(r["status"], "connected");
    let sols = r["solutions"].as_array().unwrap();
    assert_eq!(sols.len(), 1);
    let v = &sols[0]["initial_velocity"];
    let s = sols[0]["arrival_s"].as_f64().unwrap();
    assert!((v[0].as_f64().unwrap() * s - 3.0).abs() < 1e-6);
    assert!((v[1].as_f64().unwrap() * s - 4.0).abs() < 1e-6);
}

#[test]
fn antipodal_de_sitter_points_exit_two() {
    let o = geoconn(&[
        "desitter",
        "--p",
        "0.5,1.118033988749895,0",
        "--q",
        "-0.5,-1.118033988749895,0",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(json(&o)["status"], "unreachable-closed-form");
    let o = geoconn(&["desitter", "--p", "0,1,0", "--q", "0,0,1"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn malformed_config_names_the_field() {
    let o = geoconn(&[
        "--model",
        r#"{"name":"flat","params":{"n":"two"}}"#,
        "connect",
        "--p",
        "0,0",
        "--q",
        "1,1",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("n:"));
    let o = geoconn(&[
        "--model",
        r#"{"name":"bates-torus","params":{"perod":1}}"#,
        "connect",
        "--p",
        "0,0",
        "--q",
        "1,1",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("perod"));
    let o = geoconn(&["connect", "--p", "0,0", "--q", "1,1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--model"));
    let o = geoconn(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn reports_are_byte_identical_for_a_seed() {
    let args = [
        "--model",
        r#"{"name":"standard-stationary","params":{"preset":"rotating"}}"#,
        "--seed",
        "11",
        "stationary",
        "split",
        "--curves",
        "12",
    ];
    let a = geoconn(&args);
    let b = geoconn(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let r = json(&a);
    assert!(r["max_relative_error"].as_f64().unwrap() < 1e-12);
    assert_eq!(r["f2_nonpositive"], true);
    let other = geoconn(&[&args[..3], &["12"], &args[4..]].concat());
    assert_ne!(a.stdout, other.stdout);
}

#[test]
fn demos_pass_their_assertions() {
    for args in [
        vec!["demo", "bates", "--count", "40"],
        vec!["demo", "smith", "--count", "20", "--points", "500"],
        vec!["demo", "pseudosphere", "--count", "10"],
        vec!["demo", "grw"],
    ] {
        let o = geoconn(&args);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        assert_eq!(json(&o)["pass"], true);
    }
}

#[test]
fn trajectory_csv_and_out_file() {
    let csv = scratch("traj.csv");
    let out = scratch("traj.json");
    let o = geoconn(&[
        "--model",
        r#"{"name":"pseudosphere","params":{"n":2,"nu":0}}"#,
        "--s-max",
        "2",
        "--out",
        out.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
        "integrate",
        "--p",
        "0.5,0.5",
        "--v",
        "0.1,-0.2",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(r["kind"], "trajectory");
    assert_eq!(r["termination"], "span-complete");
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "s,x_0,x_1,v_0,v_1,energy");
    assert!(text.lines().count() > 3);
}

#[test]
fn multiwarped_commands() {
    let model = r#"{"name":"multiwarped","params":{"preset":"static-product"}}"#;
    let csv = scratch("mw.csv");
    let o = geoconn(&[
        "--model",
        model,
        "--csv",
        csv.to_str().unwrap(),
        "multiwarped",
        "connect",
        "--z",
        "0,0,0",
        "--w",
        "1,0.5,-0.25",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&o);
    assert_eq!(r["verdict_source"], "reduction");
    assert!(!r["reductions"].as_array().unwrap().is_empty());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("solution,s,x_0,x_1,x_2,"));

    let o = geoconn(&["--model", model, "multiwarped", "criterion", "--probe", "0"]);
    assert_eq!(o.status.code(), Some(0));
    let r = json(&o);
    assert_eq!(r["lower"]["verdicts"][0], "divergent");
    assert_eq!(r["upper"]["verdicts"][1], "divergent");
}

#[test]
fn convexity_commands() {
    let domain = r#"{"model":{"name":"flat"},"phi":"y - x^3","bounds":[[-1,-1],[1,1]]}"#;
    let o = geoconn(&[
        "convexity",
        "--domain",
        domain,
        "classify",
        "--points",
        "0,0.2",
        "--directions",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&o);
    assert_eq!(r["points"][0]["class"], "ic");
    assert_eq!(r["points"][0]["lc"]["verdict"], "violation");

    let disk = r#"{"model":{"name":"flat"},"phi":"1 - x^2 - y^2"}"#;
    let path = scratch("path.csv");
    let o = geoconn(&[
        "--n-nodes",
        "60",
        "--csv",
        path.to_str().unwrap(),
        "convexity",
        "--domain",
        disk,
        "connect",
        "--p=-0.5,0",
        "--q",
        "0.5,0",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&o)["verdict_source"], "penalized-action");
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 63);
}

#[test]
fn raster_writes_a_grid() {
    let csv = scratch("raster.csv");
    let o = geoconn(&[
        "--model",
        r#"{"name":"flat"}"#,
        "--s-max",
        "1",
        "--csv",
        csv.to_str().unwrap(),
        "raster",
        "--p",
        "0,0",
        "--lo=-2,-2",
        "--hi",
        "2,2",
        "--cell",
        "0.5",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&o);
    assert_eq!(r["nx"], 8);
    let hit = r["cells_hit"].as_u64().unwrap();
    assert!(hit > 0 && hit < 64);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "i,j,x,y,hit");
}

#[test]
fn help_documents_exit_codes_and_csv_columns() {
    let o = geoconn(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("Exit status"));
    assert!(text.contains("s, x_0..x_{n-1}, v_0..v_{n-1}, energy"));
}
