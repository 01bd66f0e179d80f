use std::path::Path;
use std::process::{Command, Output};

fn mupp(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mupp"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("MUPP_OUT_DIR")
        .env_remove("MUPP_STRICT")
        .output()
        .expect("spawn mupp")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).expect("json on stdout")
}

#[test]
fn help_lists_every_preset() {
    let dir = tempfile::tempdir().unwrap();
    let o = mupp(dir.path(), &["--help"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for name in mupp_core::PRESET_NAMES {
        assert!(text.contains(name), "{name} missing from help");
    }
}

#[test]
fn classify_names_the_violated_inequality() {
    let dir = tempfile::tempdir().unwrap();
    let o = mupp(dir.path(), &["classify", "--preset", "mup-naive"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("d+d_{L+1} ≥ 1 violated"), "{text}");
    assert!(text.contains("FAIL stable"));
    assert!(dir.path().join("classify.json").exists());
    assert!(dir.path().join("config.json").exists());
}

#[test]
fn classify_mupp_passes_every_condition() {
    let dir = tempfile::tempdir().unwrap();
    let text = stdout(&mupp(dir.path(), &["classify", "--preset", "mupp"]));
    assert!(!text.contains("FAIL"), "{text}");
    assert!(text.contains("every layer effectively perturbed"));
}

#[test]
fn classify_json_reports_sp_unstable() {
    let dir = tempfile::tempdir().unwrap();
    let v = json(&mupp(dir.path(), &["classify", "--preset", "sp", "--json"]));
    assert_eq!(v["stable"], false);
}

#[test]
fn inline_exponents_match_the_preset() {
    let dir = tempfile::tempdir().unwrap();
    let inline = json(&mupp(
        dir.path(),
        &[
            "classify", "--json", "--b", "0,1/2,1/2,1", "--c", "-1,0,0,1", "--d", "-1/2", "--dl", "-1/2,1/2,1/2,3/2",
        ],
    ));
    let named = json(&mupp(dir.path(), &["classify", "--json", "--preset", "mupp"]));
    assert_eq!(inline, named);
}

#[test]
fn derive_from_mup_gives_the_all_effective_scaling() {
    let dir = tempfile::tempdir().unwrap();
    let v = json(&mupp(dir.path(), &["derive", "--preset", "mup"]));
    assert_eq!(v["d"], "-1/2");
    assert_eq!(v["d_layers"], serde_json::json!(["-1/2", "1/2", "1/2", "3/2"]));
    assert_eq!(v["effective_layers"], serde_json::json!([1, 2, 3, 4]));
}

#[test]
fn derive_for_package_multipliers() {
    let dir = tempfile::tempdir().unwrap();
    let v = json(&mupp(dir.path(), &["derive", "--multipliers", "mup-package"]));
    assert_eq!(v["d"], "-1/2");
    assert_eq!(v["d_layers"], serde_json::json!(["-1/2", "1/2", "1/2", "-1/2"]));
}

#[test]
fn derive_rule_variant() {
    let dir = tempfile::tempdir().unwrap();
    let o = mupp(dir.path(), &["derive", "--rule", "asam_layerwise"]);
    assert!(o.status.success());
    assert_eq!(json(&o)["rule"], "asam_layerwise");
}

#[test]
fn infeasible_derivation_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = mupp(dir.path(), &["derive", "--preset", "ntp", "--layers", "2"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("b_{L+1}"), "{err}");
}

#[test]
fn phase_diagram_has_four_phases() {
    let dir = tempfile::tempdir().unwrap();
    assert!(mupp(dir.path(), &["phase-diagram"]).status.success());
    let text = std::fs::read_to_string(dir.path().join("phase_diagram.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("r_tilde,last_exp,phase"));
    let phases: std::collections::BTreeSet<&str> = lines.map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(phases.len(), 4, "{phases:?}");
}

#[test]
fn zero_shift_is_exactly_equivalent() {
    let dir = tempfile::tempdir().unwrap();
    let o = mupp(dir.path(), &["equiv", "--theta", "0", "--width", "32", "--steps", "5"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("equiv.json")).unwrap()).unwrap();
    assert_eq!(v["deviation"], 0.0);
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"widths": [64], "typo": 1}"#).unwrap();
    let o = mupp(dir.path(), &["sweep", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("typo"));
    assert_eq!(mupp(dir.path(), &["verify", "--criteria", "99"]).status.code(), Some(2));
    assert_eq!(mupp(dir.path(), &["classify", "--b", "0,1"]).status.code(), Some(2));
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["sweep", "--preset", "mupp", "--widths", "16,32,64", "--seeds", "2", "--jobs", "2"];
    let cfg = a.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"steps": 4}"#).unwrap();
    let mut full: Vec<&str> = args.to_vec();
    full.extend(["--config", cfg.to_str().unwrap()]);
    let oa = mupp(a.path(), &full);
    let ob = mupp(b.path(), &full);
    assert_eq!(oa.status.code(), ob.status.code());
    assert_ne!(oa.status.code(), Some(2), "{}", String::from_utf8_lossy(&oa.stderr));
    for f in ["sweep.csv", "verdict.json", "config.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }

    let train = ["train", "--width", "24", "--steps", "6", "--seed", "3"];
    mupp(a.path(), &train);
    mupp(b.path(), &train);
    for f in ["train.csv", "final.json", "final.ckpt"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn verify_fast_criteria() {
    let dir = tempfile::tempdir().unwrap();
    let o = mupp(dir.path(), &["verify", "--criteria", "1,2", "--jobs", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("acceptance.json")).unwrap()).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
}
