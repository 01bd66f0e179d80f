//! Frozen outputs. A change here means predictions, random streams or the training loop moved;
//! update only after confirming the new values independently.

use std::collections::BTreeMap;

use mupp_core::algebra::{fmt_q, predict_exponents, preset, PerturbationRule};
use mupp_core::data::{Split, SyntheticSpec};
use mupp_core::lab::{build_run, TrainRun};
use mupp_core::net::{Activation, Dims};
use mupp_core::opt::{ScalingMode, StepConfig};

const MUP_GLOBAL: [(&str, &str); 29] = [
    ("act_perturb/1", "-2"), ("act_perturb/2", "-1"), ("act_update/1", "0"), ("act_update/2", "0"),
    ("eps_fro/1", "-3/2"), ("eps_fro/2", "-1"), ("eps_fro/3", "-1/2"),
    ("eps_ratio/1", "-2"), ("eps_ratio/2", "-1"), ("eps_ratio/3", "0"),
    ("eps_spec/1", "-3/2"), ("eps_spec/2", "-1"), ("eps_spec/3", "-1/2"),
    ("gap_rel", "-1"), ("init_preact/1", "0"), ("init_preact/2", "0"),
    ("output_perturb", "0"), ("output_perturb_post", "0"), ("resid_rel", "-1/2"),
    ("update_spec/1", "1/2"), ("update_spec/2", "0"), ("update_spec/3", "-1/2"),
    ("v_contrib/1", "-1"), ("v_contrib/2", "-1/2"), ("v_contrib/3", "0"), ("v_norm", "0"),
    ("w_spec/1", "1/2"), ("w_spec/2", "0"), ("w_spec/3", "-1/2"),
];

const MUPP: [(&str, &str); 29] = [
    ("act_perturb/1", "0"), ("act_perturb/2", "0"), ("act_update/1", "0"), ("act_update/2", "0"),
    ("eps_fro/1", "1/2"), ("eps_fro/2", "0"), ("eps_fro/3", "-1/2"),
    ("eps_ratio/1", "0"), ("eps_ratio/2", "0"), ("eps_ratio/3", "0"),
    ("eps_spec/1", "1/2"), ("eps_spec/2", "0"), ("eps_spec/3", "-1/2"),
    ("gap_rel", "-1"), ("init_preact/1", "0"), ("init_preact/2", "0"),
    ("output_perturb", "0"), ("output_perturb_post", "0"), ("resid_rel", "-1/2"),
    ("update_spec/1", "1/2"), ("update_spec/2", "0"), ("update_spec/3", "-1/2"),
    ("v_contrib/1", "0"), ("v_contrib/2", "-1/2"), ("v_contrib/3", "-1"), ("v_norm", "0"),
    ("w_spec/1", "1/2"), ("w_spec/2", "0"), ("w_spec/3", "-1/2"),
];

fn as_strings(name: &str) -> BTreeMap<String, String> {
    let p = preset(name, 2).unwrap();
    predict_exponents(&p, &PerturbationRule::SamJointLp)
        .into_iter()
        .map(|(k, v)| (k, fmt_q(&v)))
        .collect()
}

fn frozen(rows: &[(&str, &str)]) -> BTreeMap<String, String> {
    rows.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

#[test]
fn predicted_exponents_are_frozen() {
    assert_eq!(as_strings("mup-global"), frozen(&MUP_GLOBAL));
    assert_eq!(as_strings("mupp"), frozen(&MUPP));
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * b.abs().max(1.0)
}

#[test]
fn short_training_run_is_frozen() {
    let spec = SyntheticSpec { classes: 3, d_in: 8, n_per_class: 16, separation: 2.0, seed: 0 };
    let train = spec.generate(Split::Train).unwrap();
    let test = spec.generate(Split::Test).unwrap();
    let x0 = [0.9545071788734709, -1.8995557630231596, -0.7660821000867876];
    for (a, b) in train.inputs.iter().zip(x0) {
        assert!(close(*a, b), "{a} vs {b}");
    }

    let p = preset("mupp", 2).unwrap();
    let rule = PerturbationRule::SamJointLp;
    let dims = Dims::new(8, 32, 2, 3).unwrap();
    let (net, scales) = build_run(Some(&p), &rule, ScalingMode::Bcd, dims, Activation::Tanh, false, 0).unwrap();
    let w0 = [-0.019747823160230472, -0.2639955196198933, 0.30853655637801];
    for (a, b) in net.weight(1).iter().zip(w0) {
        assert!(close(*a, b), "{a} vs {b}");
    }

    let mut run = TrainRun::new(net, scales, StepConfig::new(0.1, 0.2, rule), 0);
    for _ in 0..5 {
        run.step(&train).unwrap();
    }
    let e = run.evaluate(&test).unwrap();
    assert!(close(e.loss, 0.5095169071305219), "{}", e.loss);
    let w = [0.07238491658677783, 0.02162224613387896, -0.046394942927385115];
    for (a, b) in run.net.weight(3).iter().zip(w) {
        assert!(close(*a, b), "{a} vs {b}");
    }
}
