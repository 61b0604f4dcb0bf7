//! Command-line front end.
//!
//! Every subcommand owns a table of configuration keys. Values come from the
//! built-in defaults, then an optional `--config` file (flat `key = value`
//! text, or a `manifest.json` written by an earlier run), then `--<key>`
//! flags, later sources winning. The resolved table is copied verbatim into
//! the run's `manifest.json`, so passing that manifest back as `--config`
//! repeats the run.
//!
//! Exit codes: 0 success, 1 a verification check failed, 2 configuration
//! error (nothing is written), 3 any other runtime error. Errors are
//! reported on stderr as one line, `error[<kind>]: <message>`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, Command};
use serde_json::{json, Value};

use crate::checkpoint;
use crate::data::{self, Dataset, Split, Synthetic};
use crate::error::{Error, Result};
use crate::model::{Activation, ModelParams};
use crate::nta::{self, ApSettings, LayerTag, NtaSettings, SubsetSpec, TsneSettings};
use crate::optimize::{ClipMode, ClipSchedule};
use crate::theory::{self, Check, ConcaveQuadratic};
use crate::trainer::{self, Mode, TrainConfig};

struct Key {
    name: &'static str,
    default: &'static str,
    help: &'static str,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, help }
}

const DATA_KEYS: &[Key] = &[
    key("dataset", "mnist", "mnist, fashion-mnist or cifar10"),
    key("data_dir", "", "directory holding the dataset files (default data/<dataset>)"),
    key("subsample", "0", "keep only the first m training samples (0 keeps all)"),
    key("test_subsample", "0", "keep only the first m test samples (0 keeps all)"),
    key("randomize_labels", "false", "replace training labels by uniform random ones"),
];

const TRAIN_KEYS: &[Key] = &[
    key("h", "32", "hidden width"),
    key("depth", "2", "number of weight layers"),
    key("activation", "relu", "relu or elu"),
    key("mode", "sup", "sup or aug"),
    key("lr", "0.01", "generator learning rate"),
    key("momentum", "0.9", "generator momentum"),
    key("batch_size", "64", "mini-batch size"),
    key("max_epochs", "1000", "epoch budget"),
    key("mse_threshold", "0.001", "stop once the epoch training MSE reaches this value"),
    key("critic.lambda_gp", "10", "gradient-penalty weight"),
    key("critic.steps", "1", "critic steps per generator step"),
    key("critic.hidden", "64", "critic hidden width"),
    key("critic.lr", "0.01", "critic learning rate"),
    key("critic.momentum", "0.9", "critic momentum"),
    key("critic.zero_init", "false", "start the critic from zero weights"),
    key("aug.weight", "1", "weight of the adversarial gradient"),
    key("clip", "none", "none, adaptive_sc or constant_nc"),
    key("clip.g", "1", "moment bound G of the clipping schedule"),
    key("clip.mu", "1", "strong-convexity constant of the clipping schedule"),
    key("clip.alpha", "2", "noise moment order"),
    key("clip.l", "1", "smoothness constant of the clipping schedule"),
    key("clip.r0", "1", "initial sub-optimality of the clipping schedule"),
    key("clip.t", "1000", "horizon of the constant clipping schedule"),
    key("eval_test", "true", "evaluate the test split every epoch"),
    key("timing", "false", "record wall-clock time per epoch"),
];

const SWEEP_KEYS: &[Key] = &[
    key("hs", "8,32", "comma-separated hidden widths"),
    key("modes", "sup,aug", "comma-separated modes"),
    key("seeds", "0", "comma-separated seeds"),
];

const VERIFY_KEYS: &[Key] = &[key("suite", "all", "all, calculators, complexity, flow or lemma3")];

const RATE_KEYS: &[Key] = &[
    key("schedule", "sc", "sc (strongly convex quadratic) or nc (nonconvex quartic)"),
    key("t_grid", "100,1000,10000", "comma-separated horizons"),
    key("n_seeds", "20", "number of seeds averaged per horizon"),
    key("adversary.gamma", "0", "strength of a concave adversary in sc mode (0 for none)"),
    key("tolerance", "0.2", "allowed distance of the fitted slope from theory"),
];

const FLOW_KEYS: &[Key] = &[
    key("objective", "quadratic(a=0.5,theta_star=0)", "convex synthetic objective"),
    key("theta0", "1", "comma-separated start point"),
    key("t_end", "2", "integration horizon T"),
    key("dt", "0", "RK4 step (0 uses T/1000)"),
    key("adversary.gamma", "0", "strength of the concave adversary (0 for none)"),
];

const GENBOUND_KEYS: &[Key] = &[
    key("model", "", "generator weight file"),
    key("k", "0", "Lipschitz constant of the loss (0 estimates it on the training data)"),
    key("delta_conf", "0.05", "confidence level of the bound"),
    key("n_star", "1", "scale of the relative generalization error"),
];

const NTA_KEYS: &[Key] = &[
    key("model", "", "generator weight file"),
    key("initial", "", "weight file for the reference topology (default: the model's own initialization)"),
    key("perturb", "", "compare the model with a perturbed copy: low, moderate, extreme or an energy fraction"),
    key("layer", "hidden", "hidden or top"),
    key("subset", "0-2048", "all, START-END or random:COUNT:SEED"),
    key("perplexity", "30", "t-SNE perplexity"),
    key("iterations", "1000", "t-SNE iterations"),
    key("exaggeration", "12", "early exaggeration factor"),
    key("exaggeration_iters", "250", "iterations with early exaggeration"),
    key("learning_rate", "0", "t-SNE step size (0 chooses from n)"),
    key("damping", "0.5", "affinity propagation damping"),
    key("preference", "median", "affinity propagation preference, or median"),
    key("max_iter", "200", "affinity propagation iteration cap"),
];

const SEED_KEY: &[Key] = &[key("seed", "0", "experiment seed")];

struct CommandSpec {
    name: &'static str,
    about: &'static str,
    groups: &'static [&'static [Key]],
}

const COMMANDS: &[CommandSpec] = &[
    CommandSpec {
        name: "train",
        about: "Train one network and write metrics, weights and a manifest",
        groups: &[SEED_KEY, DATA_KEYS, TRAIN_KEYS],
    },
    CommandSpec {
        name: "sweep",
        about: "Train every (h, mode, seed) combination on one dataset",
        groups: &[DATA_KEYS, TRAIN_KEYS, SWEEP_KEYS],
    },
    CommandSpec {
        name: "verify-bounds",
        about: "Check the analytic bounds on their shipped numerical setups",
        groups: &[SEED_KEY, VERIFY_KEYS],
    },
    CommandSpec {
        name: "rate-check",
        about: "Fit the convergence rate of clipped SGD under noise",
        groups: &[RATE_KEYS],
    },
    CommandSpec {
        name: "flow",
        about: "Integrate the gradient flow and compare the averaged gap with its bound",
        groups: &[FLOW_KEYS],
    },
    CommandSpec {
        name: "genbound",
        about: "Evaluate the norm-based generalization bound of a trained two-layer network",
        groups: &[GENBOUND_KEYS, DATA_KEYS],
    },
    CommandSpec {
        name: "nta",
        about: "Embed and cluster the neurons of a network before and after training or perturbation",
        groups: &[SEED_KEY, NTA_KEYS],
    },
];

fn flag_name(key: &str) -> String {
    key.replace(['.', '_'], "-")
}

fn build_cli() -> Command {
    let mut root = Command::new("advreg")
        .about("Supervised vs critic-augmented training, bound checks and neuron topology")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for spec in COMMANDS {
        let mut cmd = Command::new(spec.name)
            .about(spec.about)
            .arg(Arg::new("config").long("config").value_name("FILE").help("flat key = value file or manifest.json"))
            .arg(Arg::new("out").long("out").value_name("DIR").help("output directory").default_value("out"));
        for k in spec.groups.iter().flat_map(|g| g.iter()) {
            cmd = cmd.arg(
                Arg::new(k.name)
                    .long(&*Box::leak(flag_name(k.name).into_boxed_str()))
                    .value_name("VALUE")
                    .help(format!("{} [default: {}]", k.help, k.default))
                    .action(ArgAction::Set),
            );
        }
        root = root.subcommand(cmd);
    }
    root
}

/// Resolved configuration: every key of the command mapped to its string value.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub command: String,
    pub values: BTreeMap<String, String>,
    pub out: PathBuf,
}

fn parse_err(key: &str, value: &str, what: &str) -> Error {
    Error::Config(format!("key `{key}`: expected {what}, got `{value}`"))
}

impl ExperimentConfig {
    fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("key `{key}` missing from the registry"))
    }

    pub fn str(&self, key: &str) -> String {
        self.raw(key).to_string()
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        let v = self.raw(key);
        v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| parse_err(key, v, "a finite number"))
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        let v = self.raw(key);
        v.parse().map_err(|_| parse_err(key, v, "a non-negative integer"))
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        let v = self.raw(key);
        v.parse().map_err(|_| parse_err(key, v, "a non-negative integer"))
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        let v = self.raw(key);
        match v {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err(parse_err(key, v, "true or false")),
        }
    }

    fn list<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<Vec<T>> {
        let v = self.raw(key);
        let items = v
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| parse_err(key, v, what)))
            .collect::<Result<Vec<T>>>()?;
        if items.is_empty() {
            return Err(parse_err(key, v, what));
        }
        Ok(items)
    }
}

/// Parse flat `key = value` text. Blank lines and `#` comments are skipped;
/// repeated keys keep the last value and log a warning.
pub fn parse_flat_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", no + 1)))?;
        let k = k.trim().to_string();
        let v = v.trim().trim_matches('"').to_string();
        if let Some(slot) = out.iter_mut().find(|(ek, _)| *ek == k) {
            log::warn!("config key `{k}` repeated on line {}; the last value wins", no + 1);
            slot.1 = v;
        } else {
            out.push((k, v));
        }
    }
    Ok(out)
}

fn read_config_file(path: &Path, command: &str) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    if let Ok(Value::Object(manifest)) = serde_json::from_str::<Value>(&text) {
        if let Some(Value::String(c)) = manifest.get("command") {
            if c != command {
                return Err(Error::Config(format!("manifest {} belongs to `{c}`, not `{command}`", path.display())));
            }
        }
        let Some(Value::Object(cfg)) = manifest.get("config") else {
            return Err(Error::Config(format!("{} has no `config` object", path.display())));
        };
        return Ok(cfg
            .iter()
            .map(|(k, v)| {
                let s = match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                (k.clone(), s)
            })
            .collect());
    }
    parse_flat_config(&text)
}

/// Merge defaults, config file and flags for one subcommand.
pub fn resolve_config(command: &str, file: Option<&Path>, flags: &[(String, String)], out: PathBuf) -> Result<ExperimentConfig> {
    let spec = COMMANDS
        .iter()
        .find(|c| c.name == command)
        .ok_or_else(|| Error::Config(format!("unknown command `{command}`")))?;
    let mut values: BTreeMap<String, String> = spec
        .groups
        .iter()
        .flat_map(|g| g.iter())
        .map(|k| (k.name.to_string(), k.default.to_string()))
        .collect();
    if let Some(path) = file {
        for (k, v) in read_config_file(path, command)? {
            match values.get_mut(&k) {
                Some(slot) => *slot = v,
                None => return Err(Error::Config(format!("unknown key `{k}` for `{command}`"))),
            }
        }
    }
    for (k, v) in flags {
        match values.get_mut(k) {
            Some(slot) => *slot = v.clone(),
            None => return Err(Error::Config(format!("unknown key `{k}` for `{command}`"))),
        }
    }
    Ok(ExperimentConfig {
        command: command.to_string(),
        values,
        out,
    })
}

fn train_config(c: &ExperimentConfig) -> Result<TrainConfig> {
    let clip_mode = ClipMode::parse(&c.str("clip"))?;
    let clip = (clip_mode != ClipMode::None)
        .then(|| -> Result<ClipSchedule> {
            Ok(ClipSchedule {
                mode: clip_mode,
                g: c.f64("clip.g")?,
                mu: c.f64("clip.mu")?,
                alpha: c.f64("clip.alpha")?,
                l: c.f64("clip.l")?,
                r0: c.f64("clip.r0")?,
                t: c.usize("clip.t")?,
            })
        })
        .transpose()?;
    let cfg = TrainConfig {
        h: c.usize("h")?,
        depth: c.usize("depth")?,
        activation: Activation::parse(&c.str("activation"))?,
        mode: Mode::parse(&c.str("mode"))?,
        lr: c.f64("lr")?,
        momentum: c.f64("momentum")?,
        batch_size: c.usize("batch_size")?,
        max_epochs: c.usize("max_epochs")?,
        mse_threshold: c.f64("mse_threshold")?,
        seed: if c.values.contains_key("seed") { c.u64("seed")? } else { 0 },
        lambda_gp: c.f64("critic.lambda_gp")?,
        n_critic: c.usize("critic.steps")?,
        critic_hidden: c.usize("critic.hidden")?,
        critic_lr: c.f64("critic.lr")?,
        critic_momentum: c.f64("critic.momentum")?,
        critic_zero_init: c.bool("critic.zero_init")?,
        aug_weight: c.f64("aug.weight")?,
        clip,
        eval_test: c.bool("eval_test")?,
        timing: c.bool("timing")?,
    };
    cfg.validate()?;
    Ok(cfg)
}

struct DataPlan {
    name: String,
    dir: PathBuf,
    subsample: usize,
    test_subsample: usize,
    randomize: bool,
}

fn data_plan(c: &ExperimentConfig) -> Result<DataPlan> {
    let name = c.str("dataset");
    if !matches!(name.as_str(), "mnist" | "fashion-mnist" | "cifar10") {
        return Err(Error::Config(format!("key `dataset`: unknown dataset `{name}` (mnist|fashion-mnist|cifar10)")));
    }
    let dir = match c.str("data_dir") {
        d if d.is_empty() => PathBuf::from("data").join(&name),
        d => PathBuf::from(d),
    };
    Ok(DataPlan {
        name,
        dir,
        subsample: c.usize("subsample")?,
        test_subsample: c.usize("test_subsample")?,
        randomize: c.bool("randomize_labels")?,
    })
}

fn load_data(plan: &DataPlan, seed: u64) -> Result<(Dataset, Option<Dataset>)> {
    let (train, test) = if plan.name == "cifar10" {
        let batches: Vec<PathBuf> = (1..=5).map(|i| plan.dir.join(format!("data_batch_{i}.bin"))).collect();
        let test_path = plan.dir.join("test_batch.bin");
        let test = test_path.is_file().then(|| data::load_cifar10(&[test_path])).transpose()?;
        (data::load_cifar10(&batches)?, test)
    } else {
        let test = match data::idx_paths(&plan.dir, Split::Test) {
            Ok(_) => Some(data::load_idx_dir(&plan.dir, Split::Test)?),
            Err(_) => None,
        };
        (data::load_idx_dir(&plan.dir, Split::Train)?, test)
    };
    let mut train = if plan.subsample > 0 { train.subsample(plan.subsample) } else { train };
    if plan.randomize {
        train = data::randomize_labels(&train, seed);
    }
    let test = test.map(|t| if plan.test_subsample > 0 { t.subsample(plan.test_subsample) } else { t });
    Ok((train, test))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json values serialize");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn manifest(c: &ExperimentConfig, results: Value) -> Value {
    json!({
        "command": c.command,
        "config": c.values,
        "results": results,
    })
}

fn create_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// What a command produced: whether every check passed.
enum Outcome {
    Done,
    Checked(bool),
}

fn norms_json(p: &ModelParams) -> Result<Value> {
    Ok(p
        .layer_norms()?
        .into_iter()
        .map(|(s, f)| json!({ "spectral": s, "frobenius": f }))
        .collect())
}

fn cmd_train(c: &ExperimentConfig) -> Result<Outcome> {
    let cfg = train_config(c)?;
    let plan = data_plan(c)?;
    let (train_set, test_set) = load_data(&plan, cfg.seed)?;
    create_out(&c.out)?;
    let log = match trainer::train(&cfg, &train_set, test_set.as_ref()) {
        Ok(log) => log,
        Err(Error::Divergence { message, partial }) => {
            if let Some(p) = &partial {
                p.write_metrics(c.out.join("metrics.csv"))?;
            }
            return Err(Error::Divergence { message, partial });
        }
        Err(e) => return Err(e),
    };
    log.write_metrics(c.out.join("metrics.csv"))?;
    checkpoint::save_model(&log.params, c.out.join("model.arwt"))?;
    checkpoint::save_model(&log.initial, c.out.join("model_init.arwt"))?;
    if let Some(critic) = &log.critic {
        checkpoint::save_critic(critic, c.out.join("critic.arwt"))?;
    }
    let results = json!({
        "converged_epoch": log.converged_epoch,
        "epochs_run": log.rows.len(),
        "final_train_mse": log.final_train_mse(),
        "final_test_mse": log.rows.last().and_then(|r| r.test_mse),
        "final_norms": norms_json(&log.params)?,
        "train_samples": train_set.len(),
    });
    write_json(&c.out.join("manifest.json"), &manifest(c, results))?;
    Ok(Outcome::Done)
}

fn cmd_sweep(c: &ExperimentConfig) -> Result<Outcome> {
    let base = train_config(c)?;
    let hs: Vec<usize> = c.list("hs", "a comma-separated list of widths")?;
    let modes = c
        .list::<String>("modes", "a comma-separated list of modes")?
        .iter()
        .map(|m| Mode::parse(m))
        .collect::<Result<Vec<_>>>()?;
    let seeds: Vec<u64> = c.list("seeds", "a comma-separated list of seeds")?;
    let mut configs = Vec::new();
    for &seed in &seeds {
        for &h in &hs {
            for &mode in &modes {
                let cfg = TrainConfig { h, mode, seed, ..base.clone() };
                cfg.validate()?;
                configs.push(cfg);
            }
        }
    }
    let plan = data_plan(c)?;
    let (train_set, test_set) = load_data(&plan, seeds[0])?;
    create_out(&c.out)?;
    let rows = trainer::sweep(&configs, &train_set, test_set.as_ref(), Some(&c.out));
    let table = trainer::sweep_table(&rows);
    write_text(&c.out.join("sweep.csv"), &table)?;
    let results: Vec<Value> = rows
        .iter()
        .map(|r| json!({ "h": r.h, "mode": r.mode.name(), "seed": r.seed, "final_mse": r.final_mse, "converged_epoch": r.converged_epoch, "error": r.error }))
        .collect();
    write_json(&c.out.join("manifest.json"), &manifest(c, json!({ "runs": results })))?;
    print!("{table}");
    Ok(Outcome::Done)
}

fn report_checks(c: &ExperimentConfig, checks: &[Check], extra: Value) -> Result<Outcome> {
    let pass = checks.iter().all(|k| k.pass);
    for k in checks {
        println!("{} {} measured={} bound={}", if k.pass { "PASS" } else { "FAIL" }, k.name, k.measured, k.bound);
    }
    write_json(&c.out.join("report.json"), &json!({ "checks": checks, "pass": pass }))?;
    write_json(&c.out.join("manifest.json"), &manifest(c, json!({ "pass": pass, "details": extra })))?;
    Ok(Outcome::Checked(pass))
}

fn cmd_verify(c: &ExperimentConfig) -> Result<Outcome> {
    let suite = c.str("suite");
    let seed = c.u64("seed")?;
    let wanted: &[&str] = match suite.as_str() {
        "all" => &["calculators", "complexity", "flow", "lemma3"],
        "calculators" => &["calculators"],
        "complexity" => &["complexity"],
        "flow" => &["flow"],
        "lemma3" => &["lemma3"],
        other => return Err(Error::Config(format!("key `suite`: unknown suite `{other}`"))),
    };
    create_out(&c.out)?;
    let mut checks = Vec::new();
    for s in wanted {
        match *s {
            "calculators" => checks.extend(theory::suite_calculators()),
            "complexity" => checks.extend(theory::suite_complexity()?),
            "flow" => checks.extend(theory::suite_flow()?),
            _ => checks.extend(theory::suite_lemma3(seed)?),
        }
    }
    report_checks(c, &checks, Value::Null)
}

fn cmd_rate(c: &ExperimentConfig) -> Result<Outcome> {
    let t_grid: Vec<usize> = c.list("t_grid", "a comma-separated list of horizons")?;
    let n_seeds = c.u64("n_seeds")?;
    let gamma = c.f64("adversary.gamma")?;
    let tol = c.f64("tolerance")?;
    let schedule = c.str("schedule");
    let (setup, theory_slope) = match schedule.as_str() {
        "sc" => {
            let s = theory::shipped::sc_rate_setup((gamma > 0.0).then_some(gamma));
            let a = s.schedule.alpha;
            (s, (2.0 - 2.0 * a) / a)
        }
        "nc" => {
            if gamma != 0.0 {
                return Err(Error::Config("key `adversary.gamma`: only the sc schedule takes an adversary".into()));
            }
            let s = theory::shipped::nc_rate_setup();
            let a = s.schedule.alpha;
            (s, -(2.0 * a - 2.0) / (3.0 * a - 2.0))
        }
        other => return Err(Error::Config(format!("key `schedule`: expected sc or nc, got `{other}`"))),
    };
    if n_seeds == 0 || t_grid.len() < 2 {
        return Err(Error::Config("need n_seeds >= 1 and at least two horizons".into()));
    }
    let seeds: Vec<u64> = (0..n_seeds).collect();
    create_out(&c.out)?;
    let r = theory::clipped_sgd_rate(&setup, &t_grid, &seeds)?;
    let mut csv = String::from("t,gap,generator_gap,seeds_used\n");
    for p in &r.points {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            p.t,
            p.gap,
            p.generator_gap.map(|g| g.to_string()).unwrap_or_default(),
            p.seeds_used
        ));
    }
    write_text(&c.out.join("rates.csv"), &csv)?;
    let check = Check {
        name: format!("rate-slope-{schedule}"),
        inputs: json!({ "t_grid": t_grid, "seeds": n_seeds, "adversary_gamma": gamma, "theory_slope": theory_slope, "tolerance": tol }),
        measured: r.slope,
        bound: theory_slope,
        pass: (r.slope - theory_slope).abs() <= tol,
    };
    report_checks(c, &[check], json!({ "excluded": r.excluded }))
}

fn parse_vector(c: &ExperimentConfig, key: &str) -> Result<Vec<f64>> {
    c.list(key, "a comma-separated list of numbers")
}

fn cmd_flow(c: &ExperimentConfig) -> Result<Outcome> {
    let l = Synthetic::parse(&c.str("objective"))?;
    let theta0 = parse_vector(c, "theta0")?;
    let t_end = c.f64("t_end")?;
    let dt = match c.f64("dt")? {
        d if d == 0.0 => 1e-3 * t_end,
        d => d,
    };
    let gamma = c.f64("adversary.gamma")?;
    let star = l
        .minimizer()
        .ok_or_else(|| Error::Config("key `objective`: the flow needs an objective with a known minimizer".into()))?;
    let adversary = (gamma > 0.0).then(|| ConcaveQuadratic { gamma, center: star });
    if theta0.len() != l.dim() {
        return Err(Error::Config(format!("key `theta0`: expected {} coordinates, got {}", l.dim(), theta0.len())));
    }
    create_out(&c.out)?;
    let r = theory::flow_simulate(&l, adversary.as_ref(), &theta0, t_end, dt)?;
    let mut csv = String::from("t");
    for j in 0..theta0.len() {
        csv.push_str(&format!(",theta{j}"));
    }
    csv.push('\n');
    for (t, th) in r.times.iter().zip(&r.trajectory) {
        csv.push_str(&t.to_string());
        for v in th {
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
    }
    write_text(&c.out.join("trajectory.csv"), &csv)?;
    let check = Check {
        name: "flow-gap-bound".into(),
        inputs: json!({ "objective": c.str("objective"), "theta0": theta0, "T": t_end, "dt": dt, "gamma": gamma }),
        measured: r.kappa,
        bound: r.bound,
        pass: r.kappa <= r.bound + 1e-9,
    };
    report_checks(c, &[check], json!({ "kappa": r.kappa, "pi": r.pi, "average": r.average }))
}

fn require_file(c: &ExperimentConfig, key: &str) -> Result<PathBuf> {
    let v = c.str(key);
    if v.is_empty() {
        return Err(Error::Config(format!("key `{key}` is required")));
    }
    Ok(PathBuf::from(v))
}

fn cmd_genbound(c: &ExperimentConfig) -> Result<Outcome> {
    let model_path = require_file(c, "model")?;
    let plan = data_plan(c)?;
    let delta_conf = c.f64("delta_conf")?;
    let n_star = c.f64("n_star")?;
    let k_given = c.f64("k")?;
    let params = checkpoint::load_model(&model_path)?;
    let (train_set, test_set) = load_data(&plan, 0)?;
    let train_loss = params.mse_chunked(&train_set.inputs, &train_set.targets, 1024)?;
    let k = if k_given > 0.0 { k_given } else { theory::estimate_k(&params, &train_set.inputs, &train_set.targets)? };
    let inputs = theory::GenBoundInputs::from_model(&params, &train_set.inputs, k, delta_conf, train_loss)?;
    let bound = theory::gen_bound(&inputs)?;
    let test_loss = test_set
        .as_ref()
        .map(|t| params.mse_chunked(&t.inputs, &t.targets, 1024))
        .transpose()?;
    let rel = test_loss.map(|t| theory::rel_gen_error(train_loss, t, n_star)).transpose()?;
    create_out(&c.out)?;
    let report = json!({
        "train_loss": train_loss,
        "test_loss": test_loss,
        "k": k,
        "m": train_set.len(),
        "rademacher": bound.rademacher,
        "combined_measure": bound.combined_measure,
        "full_bound": bound.full_bound,
        "rel_gen_error": rel,
    });
    write_json(&c.out.join("report.json"), &report)?;
    write_json(&c.out.join("manifest.json"), &manifest(c, report))?;
    println!(
        "rademacher={} combined_measure={} full_bound={}",
        bound.rademacher, bound.combined_measure, bound.full_bound
    );
    Ok(Outcome::Done)
}

fn cmd_nta(c: &ExperimentConfig) -> Result<Outcome> {
    let model_path = require_file(c, "model")?;
    let seed = c.u64("seed")?;
    let layer = LayerTag::parse(&c.str("layer"))?;
    let subset = SubsetSpec::parse(&c.str("subset"))?;
    let lr = c.f64("learning_rate")?;
    let preference = match c.str("preference").as_str() {
        "median" => None,
        _ => Some(c.f64("preference")?),
    };
    let settings = NtaSettings {
        tsne: TsneSettings {
            perplexity: c.f64("perplexity")?,
            iterations: c.usize("iterations")?,
            exaggeration: c.f64("exaggeration")?,
            exaggeration_iters: c.usize("exaggeration_iters")?,
            learning_rate: (lr > 0.0).then_some(lr),
            seed,
        },
        ap: ApSettings {
            damping: c.f64("damping")?,
            preference,
            max_iter: c.usize("max_iter")?,
            ..ApSettings::default()
        },
    };
    let perturb = match c.str("perturb").as_str() {
        "" => None,
        level => Some(match nta::PERTURBATION_LEVELS.iter().find(|(n, _)| *n == level) {
            Some((_, f)) => *f,
            None => c.f64("perturb")?,
        }),
    };
    let initial = c.str("initial");
    let model = checkpoint::load_model(&model_path)?;
    let (before, after) = match (perturb, initial.as_str()) {
        (Some(f), _) => (model.clone(), nta::perturb_params(&model, f, seed)?),
        (None, "") => {
            let mut init = model.clone();
            init.layers[0] = model.u0().clone();
            if model.depth() > 1 && layer == LayerTag::Top {
                return Err(Error::Config(
                    "key `initial`: the top layer needs an explicit initial weight file (only U⁰ is stored with the model)".into(),
                ));
            }
            (init, model)
        }
        (None, path) => (checkpoint::load_model(path)?, model),
    };
    let report = nta::topology_report(&before, &after, layer, subset, &settings, Some(&c.out))?;
    write_json(&c.out.join("manifest.json"), &manifest(c, serde_json::to_value(report.summary).expect("summary serializes")))?;
    println!(
        "clusters before={} after={} mean_nn before={} after={}",
        report.summary.clusters_before, report.summary.clusters_after, report.summary.mean_nn_before, report.summary.mean_nn_after
    );
    Ok(Outcome::Done)
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidInput(_) => "invalid-input",
        Error::Dimension { .. } => "dimension",
        Error::Format { .. } => "format",
        Error::Consistency(_) => "consistency",
        Error::Io { .. } => "io",
        Error::Config(_) => "config",
        Error::Domain(_) => "domain",
        Error::Validity(_) => "validity",
        Error::Bounds(_) => "bounds",
        Error::Parameter(_) => "parameter",
        Error::Estimation(_) => "estimation",
        Error::Divergence { .. } => "divergence",
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Errors detected before any output is written map to exit code 2.
fn is_config_error(e: &Error) -> bool {
    matches!(e, Error::Config(_) | Error::Parameter(_) | Error::Domain(_) | Error::Validity(_))
}

/// Run the CLI on explicit arguments (the first one is the program name)
/// and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match build_cli().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("error[config]: {}", one_line(first.trim_start_matches("error: ")));
            return 2;
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let spec = COMMANDS.iter().find(|c| c.name == name).expect("registered command");
    let flags: Vec<(String, String)> = spec
        .groups
        .iter()
        .flat_map(|g| g.iter())
        .filter_map(|k| sub.get_one::<String>(k.name).map(|v| (k.name.to_string(), v.clone())))
        .collect();
    let out = PathBuf::from(sub.get_one::<String>("out").expect("has default"));
    let file = sub.get_one::<String>("config").map(PathBuf::from);
    let result = resolve_config(name, file.as_deref(), &flags, out).and_then(|cfg| match name {
        "train" => cmd_train(&cfg),
        "sweep" => cmd_sweep(&cfg),
        "verify-bounds" => cmd_verify(&cfg),
        "rate-check" => cmd_rate(&cfg),
        "flow" => cmd_flow(&cfg),
        "genbound" => cmd_genbound(&cfg),
        _ => cmd_nta(&cfg),
    });
    match result {
        Ok(Outcome::Done) | Ok(Outcome::Checked(true)) => 0,
        Ok(Outcome::Checked(false)) => 1,
        Err(e) => {
            eprintln!("error[{}]: {}", error_kind(&e), one_line(&e.to_string()));
            if is_config_error(&e) {
                2
            } else {
                3
            }
        }
    }
}

pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    run(std::env::args_os())
}
