use std::collections::BTreeSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use mupp_core::algebra::{
    a_mupp, classify, derive_mpp, equivalence_transform, fmt_q, mup_package_multipliers, mupp_for_multipliers,
    parse_q, phase_grid, predict_exponents, preset, select_perturbation_scaling, variant_scaling, Parameterization,
    PerturbationRule, PhaseReport, Q,
};
use mupp_core::data::{load_cifar10_binary, ChannelStats, Dataset, Split, SyntheticSpec};
use mupp_core::lab::acceptance::{exit_code, strict_from_env};
use mupp_core::lab::{
    build_run, coupling_experiment, equivalence_check, hp_grid, layerwise_equivalence_check, multiplier_fold_check,
    run_width_sweep, verdict_report, AcceptanceRunner, CouplingConfig, EquivalenceConfig, HpGridConfig, SweepConfig,
    TrainRun, CRITERIA,
};
use mupp_core::net::{checkpoint, Activation, Dims};
use mupp_core::opt::{ScalingMode, StepConfig};
use mupp_core::Loss;

use crate::{exit, Cli, Command, Common, Exponents};

pub fn run(cli: &Cli) -> Result<u8> {
    let c = &cli.common;
    match &cli.command {
        Command::Classify { exps, json } => cmd_classify(c, exps, *json),
        Command::Derive { exps, layers, rule, multipliers } => {
            cmd_derive(c, exps, layers.as_deref(), rule.as_deref(), multipliers.as_deref())
        }
        Command::Sweep { preset, widths, seeds, rule, tolerance } => {
            cmd_sweep(c, preset.as_deref(), widths.as_deref(), *seeds, rule.as_deref(), *tolerance)
        }
        Command::Train { preset, width, steps, seed, rule } => {
            cmd_train(c, preset.as_deref(), *width, *steps, *seed, rule.as_deref())
        }
        Command::PhaseDiagram { preset, depth, r_min, r_max, last_min, last_max, step } => {
            cmd_phase_diagram(c, preset, *depth, [r_min, r_max, last_min, last_max, step])
        }
        Command::Equiv { preset, depth, theta, shift, layerwise, fold, width, steps, seed, tolerance } => cmd_equiv(
            c,
            EquivArgs {
                preset,
                depth: *depth,
                theta,
                shift,
                layerwise: layerwise.as_deref(),
                fold: *fold,
                width: *width,
                steps: *steps,
                seed: *seed,
                tolerance: *tolerance,
            },
        ),
        Command::HpGrid { preset, widths, seeds } => cmd_hp_grid(c, preset.as_deref(), widths.as_deref(), *seeds),
        Command::Coupling { widths, seeds } => cmd_coupling(c, widths.as_deref(), *seeds),
        Command::Verify { criteria, strict } => cmd_verify(c, criteria.as_deref(), *strict),
    }
}

fn jobs(c: &Common) -> usize {
    c.jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

fn read_config<T: for<'de> Deserialize<'de> + Default>(c: &Common) -> Result<T> {
    match &c.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
        }
        None => Ok(T::default()),
    }
}

fn out_dir(c: &Common) -> Result<&Path> {
    fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    Ok(&c.out)
}

fn write_json<T: Serialize + ?Sized>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes `config.json`: the command and the fully resolved configuration.
fn echo_config<T: Serialize>(dir: &Path, command: &str, config: &T) -> Result<()> {
    #[derive(Serialize)]
    struct Echo<'a, T> {
        command: &'a str,
        version: &'a str,
        config: &'a T,
    }
    write_json(dir, "config.json", &Echo { command, version: env!("CARGO_PKG_VERSION"), config })
}

fn parse_list(s: &str) -> Result<Vec<Q>> {
    s.split(',').map(|t| parse_q(t.trim()).map_err(|e| anyhow!(e))).collect()
}

fn parse_usizes(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| t.trim().parse::<usize>().with_context(|| format!("bad integer {t:?}")))
        .collect()
}

fn parse_rule(s: &str) -> Result<PerturbationRule> {
    s.parse().map_err(|e: mupp_core::Error| anyhow!(e))
}

/// Parameterization from `--config`, `--preset` or inline exponents, in that order.
fn resolve_exponents(c: &Common, e: &Exponents) -> Result<Parameterization> {
    if let Some(path) = &c.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let p: Parameterization = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        p.validate()?;
        return Ok(p);
    }
    if let Some(name) = &e.preset {
        return Ok(preset(name, e.depth)?);
    }
    let (Some(b), Some(cc)) = (&e.b, &e.c) else {
        bail!("give --preset, --config, or at least --b and --c");
    };
    let b = parse_list(b)?;
    let cc = parse_list(cc)?;
    let n = b.len();
    let d = e.d.as_deref().map(parse_q).transpose()?.unwrap_or_default();
    let dl = match &e.dl {
        Some(s) => parse_list(s)?,
        None => vec![Q::from(0); n],
    };
    let mut p = Parameterization::new(b, cc, d, dl)?;
    if let Some(a) = &e.a {
        p = p.with_multipliers(parse_list(a)?)?;
    }
    Ok(p)
}

fn qs(v: &[Q]) -> String {
    v.iter().map(fmt_q).collect::<Vec<_>>().join(", ")
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn print_report(name: &str, p: &Parameterization, r: &PhaseReport) {
    println!("{name}: {p}");
    println!("  c_nabla = {}  r = {}  r~ = {}", fmt_q(&r.c_nabla), fmt_q(&r.r), fmt_q(&r.r_tilde));
    let s = &r.stability;
    for (label, ok) in [
        ("initialization", s.init),
        ("feature updates bounded (r ≥ 0)", s.feature),
        ("output updates bounded", s.output),
        ("activation perturbations bounded (r~ ≥ 0)", s.perturbation_feature),
        ("output perturbations bounded", s.perturbation_output),
    ] {
        println!("  {} {label}", mark(ok));
    }
    for v in &r.violations {
        println!("       {v}");
    }
    println!("  {} stable", mark(r.stable));
    println!("  {} nontrivial", mark(r.nontrivial));
    let fl: Vec<String> = r.feature_learning.iter().enumerate().map(|(i, b)| format!("{}:{}", i + 1, b)).collect();
    println!("  feature learning by layer: {}", fl.join(" "));
    let ps: Vec<String> = r.perturbation_status.iter().enumerate().map(|(i, s)| format!("{}:{s}", i + 1)).collect();
    println!("  perturbation by layer: {}", ps.join(" "));
    let sat: Vec<String> = r
        .norm_constraint_saturated
        .iter()
        .enumerate()
        .filter(|(_, s)| **s)
        .map(|(i, _)| (i + 1).to_string())
        .collect();
    println!("  saturated norm constraints: {}", sat.join(", "));
    let verdict = if !r.stable {
        "unstable"
    } else if r.all_effective() {
        "stable, every layer effectively perturbed"
    } else if r.all_vanishing() {
        "stable, perturbations vanish (SAM reduces to SGD)"
    } else {
        "stable, some layers not effectively perturbed"
    };
    println!("  verdict: {verdict}");
}

fn cmd_classify(c: &Common, e: &Exponents, json: bool) -> Result<u8> {
    let p = resolve_exponents(c, e)?;
    let r = classify(&p);
    let name = e.preset.clone().unwrap_or_else(|| "custom".into());
    if json {
        println!("{}", serde_json::to_string_pretty(&r)?);
    } else {
        print_report(&name, &p, &r);
    }
    let dir = out_dir(c)?;
    echo_config(dir, "classify", &p)?;
    write_json(dir, "classify.json", &r)?;
    Ok(exit::OK)
}

#[derive(Serialize)]
struct Derived {
    target: String,
    #[serde(rename = "d")]
    d_global: String,
    d_layers: Vec<String>,
    /// Layers whose norm constraint is an equality.
    saturated: Vec<usize>,
    stable: bool,
    effective_layers: Vec<usize>,
}

fn derived(target: String, base: &Parameterization, d: Q, dl: Vec<Q>) -> Result<Derived> {
    let mut p = base.clone();
    p.d_global = d;
    p.d_layers = dl;
    p.validate()?;
    let r = classify(&p);
    Ok(Derived {
        target,
        d_global: fmt_q(&p.d_global),
        d_layers: p.d_layers.iter().map(fmt_q).collect(),
        saturated: (1..=p.num_layers()).filter(|&l| p.canonicalize().norm_slack(l) == Q::from(0)).collect(),
        stable: r.stable,
        effective_layers: r.effective_layers(),
    })
}

fn cmd_derive(c: &Common, e: &Exponents, layers: Option<&str>, rule: Option<&str>, mult: Option<&str>) -> Result<u8> {
    let dir = out_dir(c)?;
    if let Some(r) = rule {
        let rule = parse_rule(r)?;
        let v = variant_scaling(&rule)?;
        println!("{}", serde_json::to_string_pretty(&v)?);
        echo_config(dir, "derive", &serde_json::json!({ "rule": rule.tag() }))?;
        write_json(dir, "derive.json", &v)?;
        return Ok(exit::OK);
    }
    if let Some(m) = mult {
        let a = match m {
            "a-mupp" => a_mupp(e.depth),
            "mup-package" => mup_package_multipliers(e.depth),
            list => parse_list(list)?,
        };
        let (d, dl) = mupp_for_multipliers(&a);
        let base = mupp_core::algebra::with_multipliers_in_mup_class(a.clone())?;
        let out = derived(format!("muP with multipliers a = ({})", qs(&a)), &base, d, dl)?;
        println!("{}", serde_json::to_string_pretty(&out)?);
        echo_config(dir, "derive", &serde_json::json!({ "multipliers": a.iter().map(fmt_q).collect::<Vec<_>>() }))?;
        write_json(dir, "derive.json", &out)?;
        return Ok(exit::OK);
    }
    let base = resolve_exponents(c, e)?;
    let out = match layers {
        Some(list) => {
            let targets: BTreeSet<usize> = parse_usizes(list)?.into_iter().collect();
            let s = select_perturbation_scaling(base.depth, &targets, base.c_nabla())?;
            let hidden = targets.iter().any(|&l| l > 1 && l <= base.depth);
            let o = base.num_layers();
            if hidden && base.b_(o) + base.a_(o) < Q::from(1) {
                bail!(
                    "infeasible: hidden layers cannot be effectively perturbed while b_{{L+1}} = {} < 1 \
                     (their perturbation is dominated by the output layer's gradient scale)",
                    fmt_q(&(base.b_(o) + base.a_(o)))
                );
            }
            derived(format!("layers {{{}}}", list), &base, s.d_global, s.d_layers)?
        }
        None => match derive_mpp(&base.b, &base.c)? {
            Some((d, dl)) => derived("every layer".into(), &base, d, dl)?,
            None => bail!(
                "infeasible: no perturbation scaling makes every layer effective when b_{{L+1}} = {} < 1; \
                 hidden-layer effectiveness requires b_{{L+1}} ≥ 1",
                fmt_q(&base.b_(base.num_layers()))
            ),
        },
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    echo_config(dir, "derive", &base)?;
    write_json(dir, "derive.json", &out)?;
    Ok(exit::OK)
}

fn cmd_sweep(
    c: &Common,
    preset_name: Option<&str>,
    widths: Option<&str>,
    seeds: Option<usize>,
    rule: Option<&str>,
    tolerance: f64,
) -> Result<u8> {
    let mut cfg: SweepConfig = read_config(c)?;
    if let Some(p) = preset_name {
        cfg.preset = Some(p.into());
        cfg.parameterization = None;
    }
    if let Some(w) = widths {
        cfg.widths = parse_usizes(w)?;
    }
    if let Some(s) = seeds {
        cfg.seeds = s;
    }
    if let Some(r) = rule {
        cfg.rule = parse_rule(r)?;
    }
    cfg.validate()?;
    let dir = out_dir(c)?;
    echo_config(dir, "sweep", &serde_json::json!({ "sweep": &cfg, "tolerance": tolerance }))?;
    let table = run_width_sweep(&cfg, jobs(c))?;
    table.write_csv(BufWriter::new(fs::File::create(dir.join("sweep.csv"))?))?;

    let predictions = match cfg.mode {
        ScalingMode::Bcd => predict_exponents(&cfg.parameterization()?, &cfg.rule),
        ScalingMode::Spectral => Default::default(),
    };
    let mut fits = Vec::new();
    let mut telemetry = Vec::new();
    for stat in table.statistics() {
        if predictions.contains_key(&stat) {
            fits.push(table.fit(&stat)?);
        } else {
            telemetry.push(stat);
        }
    }
    let report = verdict_report(&fits, &predictions, tolerance);
    fs::write(dir.join("verdict.json"), report.to_json())?;
    write_json(dir, "fits.json", &fits)?;
    for row in &report.rows {
        println!(
            "{} {:<22} slope {:+.3} predicted {:>5} r2 {:.3}",
            mark(row.pass),
            row.statistic,
            row.slope,
            row.predicted.as_deref().unwrap_or("-"),
            row.r2
        );
    }
    if !telemetry.is_empty() {
        println!("unpredicted telemetry: {}", telemetry.join(", "));
    }
    let diverged = table.diverged_cells();
    if diverged > 0 {
        println!("{diverged} diverged cell(s)");
        return Ok(exit::DIVERGENCE);
    }
    Ok(if report.all_pass() { exit::OK } else { exit::ACCEPTANCE })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CifarSource {
    train: Vec<String>,
    test: Vec<String>,
    #[serde(default)]
    standardize: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
enum DataSource {
    Synthetic(SyntheticSpec),
    Cifar10(CifarSource),
}

fn default_train_data() -> DataSource {
    DataSource::Synthetic(SyntheticSpec { classes: 4, d_in: 16, n_per_class: 256, separation: 1.5, seed: 0 })
}

fn default_eval_every() -> usize {
    10
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainConfig {
    #[serde(default = "default_train_preset")]
    preset: Option<String>,
    #[serde(default)]
    parameterization: Option<Parameterization>,
    #[serde(default = "default_train_width")]
    width: usize,
    #[serde(default = "default_train_depth")]
    depth: usize,
    #[serde(default = "default_train_steps")]
    steps: usize,
    #[serde(default = "default_train_eta")]
    eta: f64,
    #[serde(default = "default_train_rho")]
    rho: f64,
    #[serde(default = "default_train_rule")]
    rule: PerturbationRule,
    #[serde(default = "default_train_mode")]
    mode: ScalingMode,
    #[serde(default = "default_train_activation")]
    activation: Activation,
    #[serde(default = "default_train_loss")]
    loss: Loss,
    #[serde(default = "default_train_batch")]
    batch_size: usize,
    #[serde(default = "default_train_batch")]
    ascent_batch_size: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_eval_every")]
    eval_every: usize,
    #[serde(default = "default_train_data")]
    data: DataSource,
}

fn default_train_preset() -> Option<String> {
    Some("mupp".into())
}
fn default_train_width() -> usize {
    256
}
fn default_train_depth() -> usize {
    3
}
fn default_train_steps() -> usize {
    200
}
fn default_train_eta() -> f64 {
    0.1
}
fn default_train_rho() -> f64 {
    0.1
}
fn default_train_rule() -> PerturbationRule {
    PerturbationRule::SamJointLp
}
fn default_train_mode() -> ScalingMode {
    ScalingMode::Bcd
}
fn default_train_activation() -> Activation {
    Activation::Tanh
}
fn default_train_loss() -> Loss {
    Loss::Mse
}
fn default_train_batch() -> usize {
    8
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

fn load_data(src: &DataSource) -> Result<(Dataset, Dataset)> {
    match src {
        DataSource::Synthetic(s) => Ok((s.generate(Split::Train)?, s.generate(Split::Test)?)),
        DataSource::Cifar10(c) => {
            let mut train = load_cifar10_binary(&c.train, Split::Train)?;
            let mut test = load_cifar10_binary(&c.test, Split::Test)?;
            if c.standardize {
                let stats = ChannelStats::fit(&train)?;
                stats.apply(&mut train);
                stats.apply(&mut test);
            }
            Ok((train, test))
        }
    }
}

#[derive(Serialize)]
struct TrainSummary {
    steps_taken: usize,
    diverged: bool,
    train_loss: f64,
    train_accuracy: f64,
    test_loss: f64,
    test_accuracy: f64,
}

fn cmd_train(
    c: &Common,
    preset_name: Option<&str>,
    width: Option<usize>,
    steps: Option<usize>,
    seed: Option<u64>,
    rule: Option<&str>,
) -> Result<u8> {
    let mut cfg: TrainConfig = read_config(c)?;
    if let Some(p) = preset_name {
        cfg.preset = Some(p.into());
        cfg.parameterization = None;
    }
    cfg.width = width.unwrap_or(cfg.width);
    cfg.steps = steps.unwrap_or(cfg.steps);
    cfg.seed = seed.unwrap_or(cfg.seed);
    if let Some(r) = rule {
        cfg.rule = parse_rule(r)?;
    }
    if cfg.batch_size == 0 || cfg.ascent_batch_size == 0 || cfg.eval_every == 0 {
        bail!("batch sizes and eval_every must be positive");
    }
    let p = match (&cfg.parameterization, &cfg.preset) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(name)) => Some(preset(name, cfg.depth)?),
        (None, None) => None,
    };
    let (train, test) = load_data(&cfg.data)?;
    let dims = Dims::new(train.d_in(), cfg.width, cfg.depth, train.classes)?;
    let (net, scales) = build_run(p.as_ref(), &cfg.rule, cfg.mode, dims, cfg.activation, false, cfg.seed)?;
    let mut step_cfg = StepConfig::new(cfg.eta, cfg.rho, cfg.rule.clone());
    step_cfg.loss = cfg.loss;
    let mut run = TrainRun::new(net, scales, step_cfg, cfg.seed).with_batches(cfg.batch_size, cfg.ascent_batch_size);

    let dir = out_dir(c)?;
    echo_config(dir, "train", &cfg)?;
    let mut log = csv::Writer::from_path(dir.join("train.csv"))?;
    log.write_record(["step", "batch_loss", "test_loss", "test_accuracy"])?;
    let eval = |run: &TrainRun| run.evaluate(&test);
    let e0 = eval(&run)?;
    log.write_record(["0".into(), String::new(), e0.loss.to_string(), e0.accuracy.to_string()])?;
    for t in 1..=cfg.steps {
        let tel = run.step(&train)?;
        if run.diverged {
            break;
        }
        let batch_loss = tel.map(|t| t.loss.to_string()).unwrap_or_default();
        if t % cfg.eval_every == 0 || t == cfg.steps {
            let e = eval(&run)?;
            log.write_record([t.to_string(), batch_loss, e.loss.to_string(), e.accuracy.to_string()])?;
        }
    }
    log.flush()?;
    let tr = run.evaluate(&train)?;
    let te = eval(&run)?;
    let summary = TrainSummary {
        steps_taken: run.steps_taken,
        diverged: run.diverged,
        train_loss: tr.loss,
        train_accuracy: tr.accuracy,
        test_loss: te.loss,
        test_accuracy: te.accuracy,
    };
    write_json(dir, "final.json", &summary)?;
    checkpoint::save(&run.net, BufWriter::new(fs::File::create(dir.join("final.ckpt"))?))?;
    println!(
        "steps {} train acc {:.4} test acc {:.4} test loss {:.5}{}",
        summary.steps_taken,
        summary.train_accuracy,
        summary.test_accuracy,
        summary.test_loss,
        if summary.diverged { " (diverged)" } else { "" }
    );
    Ok(if summary.diverged { exit::DIVERGENCE } else { exit::OK })
}

fn cmd_phase_diagram(c: &Common, name: &str, depth: usize, bounds: [&String; 5]) -> Result<u8> {
    let [r0, r1, l0, l1, step] = bounds.map(|s| parse_q(s));
    let p = preset(name, depth)?;
    let grid = phase_grid(&p.b, &p.c, (r0?, r1?), (l0?, l1?), step?)?;
    let dir = out_dir(c)?;
    echo_config(
        dir,
        "phase-diagram",
        &serde_json::json!({
            "preset": name, "depth": depth,
            "r_tilde": [bounds[0], bounds[1]], "last_exp": [bounds[2], bounds[3]], "step": bounds[4],
        }),
    )?;
    let mut w = csv::Writer::from_path(dir.join("phase_diagram.csv"))?;
    w.write_record(["r_tilde", "last_exp", "phase"])?;
    let mut counts = std::collections::BTreeMap::new();
    for pt in &grid {
        w.write_record([fmt_q(&pt.r_tilde), fmt_q(&pt.last_exp), pt.phase.to_string()])?;
        *counts.entry(pt.phase.to_string()).or_insert(0usize) += 1;
    }
    w.flush()?;
    for (phase, n) in counts {
        println!("{phase:<16} {n}");
    }
    Ok(exit::OK)
}

struct EquivArgs<'a> {
    preset: &'a str,
    depth: usize,
    theta: &'a str,
    shift: &'a str,
    layerwise: Option<&'a str>,
    fold: bool,
    width: Option<usize>,
    steps: Option<usize>,
    seed: Option<u64>,
    tolerance: f64,
}

fn cmd_equiv(c: &Common, a: EquivArgs) -> Result<u8> {
    let mut cfg: EquivalenceConfig = read_config(c)?;
    cfg.width = a.width.unwrap_or(cfg.width);
    cfg.steps = a.steps.unwrap_or(cfg.steps);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    let p = preset(a.preset, a.depth)?;
    let (kind, deviation) = if a.fold {
        ("multiplier fold".to_string(), multiplier_fold_check(&p, &cfg)?)
    } else if let Some(list) = a.layerwise {
        let theta = parse_list(list)?;
        (format!("layerwise θ = ({})", qs(&theta)), layerwise_equivalence_check(&p, &theta, &cfg)?)
    } else {
        let (theta, shift) = (parse_q(a.theta)?, parse_q(a.shift)?);
        let t = equivalence_transform(&p, theta, shift);
        (
            format!("joint θ = {}, C = {}: {t}", fmt_q(&theta), fmt_q(&shift)),
            equivalence_check(&p, theta, shift, &cfg)?,
        )
    };
    let pass = deviation <= a.tolerance;
    let dir = out_dir(c)?;
    echo_config(dir, "equiv", &serde_json::json!({ "equivalence": &cfg, "preset": a.preset, "transform": &kind }))?;
    write_json(
        dir,
        "equiv.json",
        &serde_json::json!({ "transform": kind, "deviation": deviation, "tolerance": a.tolerance, "pass": pass }),
    )?;
    println!("{} {kind}: max relative deviation {deviation:.3e} (tolerance {:.0e})", mark(pass), a.tolerance);
    Ok(if pass { exit::OK } else { exit::ACCEPTANCE })
}

fn cmd_hp_grid(c: &Common, preset_name: Option<&str>, widths: Option<&str>, seeds: Option<usize>) -> Result<u8> {
    let mut cfg: HpGridConfig = read_config(c)?;
    if let Some(p) = preset_name {
        cfg.preset = p.into();
    }
    if let Some(w) = widths {
        cfg.widths = parse_usizes(w)?;
    }
    cfg.seeds = seeds.unwrap_or(cfg.seeds);
    cfg.validate()?;
    let dir = out_dir(c)?;
    echo_config(dir, "hp-grid", &cfg)?;
    let table = hp_grid(&cfg, jobs(c))?;
    table.write_csv(BufWriter::new(fs::File::create(dir.join("hp_grid.csv"))?))?;
    let optima = table.optima();
    write_json(dir, "optima.json", &optima)?;
    for o in &optima {
        println!(
            "width {:>5} seed {} optimum eta {} rho {} test acc {:.4}",
            o.width, o.seed, cfg.etas[o.eta_index], cfg.rhos[o.rho_index], o.test_accuracy
        );
    }
    if let [.., a, b] = cfg.widths[..] {
        println!("optimum within one cell from {a} to {b}: {:.0}% of seeds", 100.0 * table.stable_optimum_fraction(a, b));
    }
    let diverged = table.cells.iter().filter(|c| c.diverged).count();
    println!("{diverged} diverged cell(s)");
    Ok(exit::OK)
}

fn cmd_coupling(c: &Common, widths: Option<&str>, seeds: Option<usize>) -> Result<u8> {
    let mut cfg: CouplingConfig = read_config(c)?;
    if let Some(w) = widths {
        cfg.widths = parse_usizes(w)?;
    }
    cfg.seeds = seeds.unwrap_or(cfg.seeds);
    let dir = out_dir(c)?;
    echo_config(dir, "coupling", &cfg)?;
    let report = coupling_experiment(&cfg, jobs(c))?;
    write_json(dir, "coupling.json", &report)?;
    for (i, w) in report.widths.iter().enumerate() {
        println!(
            "width {w:>5}  SAM vs last-layer SAM {:.4e}  SAM vs SGD {:.4e}",
            report.sam_vs_last_layer[i], report.sam_vs_sgd[i]
        );
    }
    let ok = report.collapses() && report.sgd_gap_persists();
    println!("{} distance to last-layer SAM shrinks while the SGD gap persists", mark(ok));
    Ok(if ok { exit::OK } else { exit::ACCEPTANCE })
}

fn cmd_verify(c: &Common, criteria: Option<&str>, strict: bool) -> Result<u8> {
    let ids: Vec<u8> = match criteria {
        Some(list) => list
            .split(',')
            .map(|t| t.trim().parse::<u8>().with_context(|| format!("bad criterion id {t:?}")))
            .collect::<Result<_>>()?,
        None => CRITERIA.to_vec(),
    };
    if let Some(bad) = ids.iter().find(|i| !CRITERIA.contains(i)) {
        bail!("no acceptance criterion {bad}");
    }
    let strict = strict || strict_from_env();
    let dir = out_dir(c)?;
    echo_config(dir, "verify", &serde_json::json!({ "criteria": &ids, "strict": strict, "jobs": jobs(c) }))?;
    let mut runner = AcceptanceRunner::new(jobs(c));
    let mut results = Vec::new();
    let stdout = std::io::stdout();
    for id in ids {
        let r = runner.run(id)?;
        let mut out = stdout.lock();
        writeln!(out, "{r}")?;
        for d in &r.details {
            writeln!(out, "    {d}")?;
        }
        out.flush()?;
        results.push(r);
    }
    write_json(dir, "acceptance.json", &results)?;
    let code = exit_code(&results, strict);
    println!("{}/{} criteria passed", results.iter().filter(|r| r.pass).count(), results.len());
    Ok(code as u8)
}
