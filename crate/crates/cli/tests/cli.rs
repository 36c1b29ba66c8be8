use std::process::{Command, Output};

use regenperm::stats::EstimateReport;
use regenperm::verify::VerifyReport;
use serde_json::Value;

fn regenperm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regenperm"))
        .args(args)
        .env_remove("REGENPERM_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

const SHIFTED: &str = r#"{"family":"p-shifted","driver":{"kind":"geometric","q":0.5}}"#;

#[test]
fn sample_lines_are_injective() {
    let o = regenperm(&["sample", "--model", SHIFTED, "--n", "10", "--seed", "7", "--count", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    for line in lines {
        let v: Value = serde_json::from_str(line).unwrap();
        let images: Vec<u64> = serde_json::from_value(v["images"].clone()).unwrap();
        assert_eq!(images.len(), 10);
        let mut sorted = images.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 10);
        let splits: Vec<usize> = serde_json::from_value(v["splits"].clone()).unwrap();
        for s in splits {
            assert_eq!(*images[..s].iter().max().unwrap(), s as u64);
        }
    }
}

#[test]
fn degenerate_driver_gives_identity() {
    let model = r#"{"family":"p-shifted","driver":{"kind":"fixed","p":[1.0]}}"#;
    let o = regenperm(&["sample", "--model", model, "--n", "6", "--count", "4"]);
    assert!(o.status.success());
    for line in stdout(&o).lines() {
        assert_eq!(line, r#"{"images":[1,2,3,4,5,6],"splits":[1,2,3,4,5,6]}"#);
    }
}

#[test]
fn config_errors_exit_2_with_field_path() {
    let o = regenperm(&["sample", "--model", r#"{"family":"p-shifted"}"#]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("driver"), "{}", stderr(&o));

    let o = regenperm(&["sample", "--model", r#"{"family":"p-shifted","driver":{"kind":"geometric"}}"#]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("at driver"), "{}", stderr(&o));

    let o = regenperm(&["sample", "--model", "no-such-preset"]);
    assert_eq!(o.status.code(), Some(2));

    let o = regenperm(&["exact", "no-such-topic"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_supplies_defaults() {
    let dir = std::env::temp_dir().join(format!("regenperm-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("run.json");
    std::fs::write(&path, r#"{"model":"mallows:0.5","seed":3,"n":4}"#).unwrap();
    let a = regenperm(&["sample", "--config", path.to_str().unwrap()]);
    let b = regenperm(&["sample", "--model", "mallows:0.5", "--seed", "3", "--n", "4"]);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);

    std::fs::write(&path, r#"{"model":"gem1","sede":3}"#).unwrap();
    let o = regenperm(&["sample", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sede"));

    let out = dir.join("out.txt");
    let o = regenperm(&["exact", "component-law", "--n", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    assert!(std::fs::read_to_string(&out).unwrap().contains("5 4 9"));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn exact_tables() {
    let o = regenperm(&["exact", "component-law", "--n", "7"]);
    let text = stdout(&o);
    assert!(text.contains("5 4 9"));
    assert!(text.contains("1812 624 576 832 1775 5532 24129"));

    let o = regenperm(&["exact", "gem1-u", "--k", "5", "--format", "json"]);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    for row in v["rows"].as_array().unwrap() {
        let rec = row[1].as_f64().unwrap();
        let series = row[2].as_f64().unwrap();
        assert!((rec - series).abs() < 1e-9);
    }

    let o = regenperm(&["exact", "gem-uinfty", "--theta", "1", "--format", "csv"]);
    let line = stdout(&o).lines().nth(1).unwrap().to_string();
    assert!(line.starts_with("1.0,0.33333333"), "{line}");

    let o = regenperm(&["exact", "kaluza", "--u", "1,0.9,0.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("n = 1"));

    for topic in ["indecomposable", "mallows", "blocked", "qhat"] {
        let o = regenperm(&["exact", topic, "--format", "json"]);
        assert!(o.status.success(), "{topic}: {}", stderr(&o));
        let _: Value = serde_json::from_slice(&o.stdout).unwrap();
    }
}

#[test]
fn displacement_needs_positive_recurrence() {
    let model = r#"{"family":"p-shifted","driver":{"kind":"fixed","p":[0.5],"p_inf":0.5}}"#;
    let o = regenperm(&["estimate", "--statistic", "displacement", "--model", model, "--samples", "100"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("requires positive recurrence"));
}

#[test]
fn gem1_renewal_estimate() {
    let model = r#"{"family":"p-biased","driver":{"kind":"gem","theta":1.0},"budget":0}"#;
    let o = regenperm(&[
        "estimate", "--statistic", "renewal", "--model", model, "--n-max", "4", "--samples", "1000000", "--format", "json",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rep: EstimateReport = serde_json::from_slice(&o.stdout).unwrap();
    let u2 = rep.get("u_2").unwrap();
    assert!(u2.z.unwrap().abs() < 4.0, "{u2:?}");
    assert_eq!(rep.to_json() + "\n", stdout(&o));

    let o = regenperm(&["estimate", "--statistic", "components", "--model", "biased-geometric:0.5", "--samples", "2000", "--format", "json"]);
    let rep: EstimateReport = serde_json::from_slice(&o.stdout).unwrap();
    assert!(rep.meta.aborted > 0);
    assert!(rep.notes[0].starts_with("partial"));
    assert!(rep.records.iter().all(|r| r.z.is_none()));
}

#[test]
fn output_depends_only_on_seed() {
    let args = ["estimate", "--statistic", "cycles", "--model", "blocked-geometric:0.5", "--samples", "20000", "--seed", "11"];
    let a = regenperm(&args);
    let b = regenperm(&args);
    let c = regenperm(&[&args[..], &["--workers", "1"]].concat());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c.stdout);

    let with_env = Command::new(env!("CARGO_BIN_EXE_regenperm"))
        .args(["sample", "--model", "gem1", "--n", "8"])
        .env("REGENPERM_SEED", "11")
        .output()
        .unwrap();
    let with_flag = regenperm(&["sample", "--model", "gem1", "--n", "8", "--seed", "11"]);
    assert_eq!(with_env.stdout, with_flag.stdout);
}

#[test]
fn verify_quick_passes() {
    let o = regenperm(&["verify", "--tier", "quick", "--seed", "1", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let rep: VerifyReport = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rep.criteria.len(), 11);
    assert!(rep.passed());
}

#[test]
fn verify_rejects_unknown_criteria() {
    let o = regenperm(&["verify", "--criteria", "1,42"]);
    assert_eq!(o.status.code(), Some(2));
}
