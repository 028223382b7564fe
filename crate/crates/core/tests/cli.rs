use std::process::Command;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use trialadj::cli::{run, DatasetReport, FitReport, SedReport};
use trialadj::inference::{IndirectComparison, LetteredMeans, YearStatusRecommendation};
use trialadj::simulator::BiasReport;
use trialadj::{IncidenceTable, MeansTable};

const TOY: &[&str] = &["--data", "builtin:toy"];
const SCHEMA: &str = include_str!("../schema/output.schema.json");

fn exec(args: &[&str]) -> (i32, String, String) {
    let mut argv = vec!["trialadj"];
    argv.extend_from_slice(args);
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(&argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn ok(args: &[&str]) -> String {
    let (code, out, err) = exec(args);
    assert_eq!(code, 0, "{args:?} failed: {err}");
    out
}

fn toy<'a>(cmd: &'a str, rest: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd];
    v.extend_from_slice(TOY);
    v.extend_from_slice(rest);
    v
}

fn column(out: &str, col: usize) -> Vec<String> {
    out.lines()
        .skip(2)
        .take_while(|l| !l.trim().is_empty() && !l.starts_with("Mean SED"))
        .map(|l| l.split_whitespace().nth(col).unwrap().to_string())
        .collect()
}

fn validator(def: &str) -> jsonschema::Validator {
    let mut schema: Value = serde_json::from_str(SCHEMA).unwrap();
    let root = schema.as_object_mut().unwrap();
    root.remove("anyOf");
    root.insert("$ref".into(), Value::String(format!("#/$defs/{def}")));
    jsonschema::validator_for(&schema).unwrap()
}

fn check_json<T: Serialize + DeserializeOwned>(def: &str, args: &[&str]) -> T {
    let mut args = args.to_vec();
    args.extend_from_slice(&["--format", "json"]);
    let out = ok(&args);
    let doc: Value = serde_json::from_str(&out).unwrap();
    let errors: Vec<String> = validator(def).iter_errors(&doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{def}: {errors:?}");
    assert!(jsonschema::validator_for(&serde_json::from_str(SCHEMA).unwrap()).unwrap().is_valid(&doc));
    let parsed: T = serde_json::from_str(&out).unwrap();
    let again = serde_json::to_string_pretty(&parsed).unwrap() + "\n";
    assert_eq!(again, out, "{def} does not round-trip");
    parsed
}

#[test]
fn means_fixed_year_model() {
    let out = ok(&toy("means", &["--model", "S + Y : S.Y", "--treatment", "S", "--margin", "Y"]));
    assert_eq!(column(&out, 0), ["1", "2", "3", "4", "5", "6"]);
    assert_eq!(column(&out, 1), ["52.1750", "91.4000", "56.2000", "55.4250", "60.3000", "56.3000"]);
}

#[test]
fn letters_all_systems() {
    let out = ok(&toy("letters", &["--model", "S + Y : S.Y", "--treatment", "S", "--margin", "Y", "--alpha", "0.05"]));
    assert_eq!(column(&out, 2), ["c", "a", "b", "b", "b", "bc"]);
    assert!(out.contains("Mean SED: 2.0930"));
    let means: Vec<f64> = column(&out, 1).iter().map(|s| s.parse().unwrap()).collect();
    let rounded: Vec<String> = means.iter().map(|m| format!("{m:.1}")).collect();
    assert_eq!(rounded, ["52.2", "91.4", "56.2", "55.4", "60.3", "56.3"]);
}

#[test]
fn letters_current_systems_by_group() {
    let out = ok(&toy(
        "letters",
        &[
            "--derive",
            "G<-S:1=ended,4=ended,2=current,3=current,5=current,6=current",
            "--model",
            "G/S + Y : S.Y",
            "--treatment",
            "G.S",
            "--margin",
            "Y",
            "--by",
            "G",
        ],
    ));
    let current = out.split("[G=current]").nth(1).unwrap();
    let letters: Vec<&str> = current.lines().skip(2).take(4).map(|l| l.split_whitespace().last().unwrap()).collect();
    assert_eq!(letters, ["a", "b", "b", "b"]);
    assert!(current.contains("Mean SED: 2.3171"));
}

#[test]
fn indirect_systems_one_and_six() {
    let out = ok(&toy("indirect", &["--a", "1", "--b", "6", "--ref", "2,3", "--env", "Y"]));
    let last = out.lines().last().unwrap();
    assert!(last.ends_with("-4.1250"), "{last}");
    let ic: IndirectComparison =
        check_json("indirect", &toy("indirect", &["--a", "1", "--b", "6", "--ref", "2,3", "--env", "Y"]));
    assert_eq!(ic.direct_a, -21.625);
    assert_eq!(ic.direct_b, -17.5);
    assert_eq!(ic.estimate, -4.125);
}

#[test]
fn precision_flag() {
    let out = ok(&toy("means", &["--model", "S + Y", "--treatment", "S", "--margin", "Y", "--precision", "2"]));
    assert_eq!(column(&out, 1)[1..3], ["91.40", "56.20"]);
}

#[test]
fn exit_codes() {
    let cases: &[(&[&str], i32)] = &[
        (&["means", "--bogus"], 1),
        (&["means", "--data", "builtin:toy", "--model", "S", "--treatment", "S", "--alpha", "1.5"], 1),
        (&["means", "--data", "builtin:toy", "--model", "S", "--treatment", "S", "--alpha", "0"], 1),
        (
            &[
                "letters",
                "--data",
                "builtin:toy",
                "--model",
                "S",
                "--treatment",
                "S",
                "--by",
                "Y",
                "--within",
                "Y=2024",
            ],
            1,
        ),
        (&["frobnicate"], 1),
        (&["means", "--data", "builtin:toy", "--model", "S + Y", "--treatment", "Q"], 2),
        (&["means", "--data", "/nonexistent/data.csv", "--model", "S", "--treatment", "S"], 2),
        (&["fit", "--data", "builtin:toy", "--model", "S + Q"], 2),
        (&["indirect", "--data", "builtin:toy", "--a", "5", "--b", "6", "--ref", "1", "--env", "Y"], 2),
        (&["--help"], 0),
        (&["means", "--help"], 0),
    ];
    for (args, want) in cases {
        let (code, _, err) = exec(args);
        assert_eq!(code, *want, "{args:?}: {err}");
        if *want != 0 {
            assert!(!err.is_empty(), "{args:?} printed no error");
        }
    }
    let (_, _, err) = exec(&["means", "--data", "builtin:toy", "--model", "S + Y", "--treatment", "Q"]);
    assert!(err.contains("'Q'"), "{err}");
}

#[test]
fn binary_exit_status() {
    let bin = env!("CARGO_BIN_EXE_trialadj");
    let st =
        Command::new(bin).args(["incidence", "--data", "builtin:toy", "--treatment", "S", "--margin", "Y"]).output();
    let st = st.unwrap();
    assert!(st.status.success());
    assert!(String::from_utf8_lossy(&st.stdout).contains("2020"));
    assert_eq!(Command::new(bin).arg("--nope").status().unwrap().code(), Some(1));
    let bad = ["fit", "--data", "builtin:toy", "--model", "S + Q"];
    assert_eq!(Command::new(bin).args(bad).status().unwrap().code(), Some(2));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let runs: Vec<Vec<&str>> = vec![
        toy("fit", &["--model", "S : Y", "--format", "json"]),
        toy("sed", &["--model", "S : Y", "--treatment", "S", "--margin", "Y", "--format", "csv"]),
        toy("letters", &["--model", "S + Y", "--treatment", "S", "--margin", "Y"]),
        vec!["simulate", "--seed", "11", "--sigma-year", "3", "--format", "csv"],
        vec!["simulate", "--seed", "11", "--study", "bias", "--reps", "100", "--threads", "2", "--format", "json"],
    ];
    for args in runs {
        assert_eq!(ok(&args), ok(&args), "{args:?}");
    }
    let a = ok(&["simulate", "--seed", "11"]);
    let b = ok(&["simulate", "--seed", "12"]);
    assert_ne!(a, b);
}

#[test]
fn json_round_trips_through_schema() {
    let fit: FitReport = check_json("fit", &toy("fit", &["--model", "S : Y"]));
    assert_eq!(fit.n, 20);
    assert!(fit.reml_loglik.is_some());
    let ols: FitReport = check_json("fit", &toy("fit", &["--model", "S + Y"]));
    assert!(ols.reml_loglik.is_none());

    let cmp = ["--model", "S + Y", "--treatment", "S", "--margin", "Y"];
    let means: MeansTable = check_json("means", &toy("means", &cmp));
    assert_eq!(means.rows.len(), 6);
    let sed: SedReport = check_json("sed", &toy("sed", &cmp));
    assert_eq!(sed.sed.pairs.len(), 15);
    let lm: Vec<LetteredMeans> = check_json("letters", &toy("letters", &cmp));
    assert_eq!(lm.len(), 1);
    let inc: IncidenceTable = check_json("incidence", &toy("incidence", &["--treatment", "S", "--margin", "Y"]));
    assert_eq!(inc.counts.len(), 6);
    let ys: YearStatusRecommendation =
        check_json("year_status", &toy("select-year", &["--treatment", "S", "--margin", "Y"]));
    assert!(ys.mean_sed_fixed < ys.mean_sed_random);
    let ds: DatasetReport = check_json("dataset", &["simulate", "--seed", "5"]);
    assert_eq!(ds.rows.len(), 4 * 4 + 4);
    let bias: BiasReport =
        check_json("bias", &["simulate", "--study", "bias", "--reps", "100", "--sigma-year", "2", "--threads", "1"]);
    assert_eq!(bias.models.len(), 3);
}

#[test]
fn schema_rejects_malformed_documents() {
    let out = ok(&toy("fit", &["--model", "S + Y", "--format", "json"]));
    let mut doc: Value = serde_json::from_str(&out).unwrap();
    let v = validator("fit");
    assert!(v.is_valid(&doc));
    doc["method"] = Value::String("gls".into());
    assert!(!v.is_valid(&doc));
    doc["method"] = Value::String("ols".into());
    doc.as_object_mut().unwrap().remove("beta");
    assert!(!v.is_valid(&doc));
    let means = ok(&toy("means", &["--model", "S", "--treatment", "S", "--format", "json"]));
    let mut doc: Value = serde_json::from_str(&means).unwrap();
    doc["rows"][0]["letters"] = Value::String("A1".into());
    assert!(!validator("means").is_valid(&doc));
}

#[test]
fn back_transformed_means_in_json() {
    let m: MeansTable = check_json(
        "means",
        &toy(
            "means",
            &["--model", "S + Y", "--treatment", "S", "--margin", "Y", "--transform", "sqrt", "--back-transform"],
        ),
    );
    let scale = serde_json::to_value(m.scale).unwrap();
    assert_eq!(scale, serde_json::json!({"kind": "back-transformed", "transform": "sqrt"}));
    assert!(m.rows.iter().all(|r| r.se.is_none()));
}

#[test]
fn config_file_supplies_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# fixed-year analysis\ndata = builtin:toy\nmodel = S + Y\ntreatment = S\nmargin = Y\n")
        .unwrap();
    let cfg = cfg.to_str().unwrap();
    let direct = ok(&toy("means", &["--model", "S + Y", "--treatment", "S", "--margin", "Y"]));
    assert_eq!(ok(&["means", "--config", cfg]), direct);
    let overridden = ok(&["means", "--config", cfg, "--model", "S"]);
    assert_eq!(column(&overridden, 1)[0], "50.5000");
    let (code, _, _) = exec(&["means", "--config", "/nonexistent/run.cfg"]);
    assert_ne!(code, 0);
}

#[test]
fn dump_design_writes_labelled_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("design.csv");
    ok(&toy("fit", &["--model", "S : Y", "--dump-design", path.to_str().unwrap()]));
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.iter().filter(|h| h.starts_with("X[")).count(), 6);
    assert_eq!(header.iter().filter(|h| h.starts_with("Z[")).count(), 5);
    let rows: Vec<Vec<u8>> = lines.map(|l| l.split(',').map(|c| c.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| r[0] == 1 && r[6..].iter().sum::<u8>() == 1));
}

#[test]
fn simulated_csv_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sim.csv");
    let p = path.to_str().unwrap();
    ok(&["simulate", "--seed", "3", "--system-effects", "0,40,5,3,8,4", "--out-file", p]);
    let out = ok(&["means", "--data", p, "--model", "S + Y", "--treatment", "S", "--margin", "Y"]);
    assert_eq!(column(&out, 0).len(), 6);
}
