//! Instrumented training loops for sole supervision (`sup`) and the
//! critic-augmented objective (`aug`), plus sweeps and Lipschitz estimation.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::critic::{CriticParams, CriticStep};
use crate::data::{BatchStream, Dataset};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::model::{self, init_params, Activation, GradientSet, ModelParams};
use crate::optimize::{clip_global, schedule_nc, schedule_sc, sgd_momentum_step, ClipMode, ClipSchedule, MomentumState};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Sup,
    Aug,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sup" => Ok(Mode::Sup),
            "aug" => Ok(Mode::Aug),
            other => Err(Error::Config(format!("unknown mode `{other}` (sup|aug)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Sup => "sup",
            Mode::Aug => "aug",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub h: usize,
    pub depth: usize,
    pub activation: Activation,
    pub mode: Mode,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub mse_threshold: f64,
    pub seed: u64,
    pub lambda_gp: f64,
    pub n_critic: usize,
    pub critic_hidden: usize,
    pub critic_lr: f64,
    pub critic_momentum: f64,
    /// Start the critic from all-zero weights instead of a random draw.
    pub critic_zero_init: bool,
    /// Weight on the adversarial gradient in `aug` mode.
    pub aug_weight: f64,
    pub clip: Option<ClipSchedule>,
    /// Evaluate the test split after every epoch when one is supplied.
    pub eval_test: bool,
    /// Record wall-clock milliseconds per epoch. Off by default so that
    /// metrics files are reproducible byte for byte.
    pub timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            h: 32,
            depth: 2,
            activation: Activation::Relu,
            mode: Mode::Sup,
            lr: 0.01,
            momentum: 0.9,
            batch_size: 64,
            max_epochs: 1000,
            mse_threshold: 0.001,
            seed: 0,
            lambda_gp: crate::critic::DEFAULT_LAMBDA_GP,
            n_critic: 1,
            critic_hidden: crate::critic::DEFAULT_HIDDEN,
            critic_lr: 0.01,
            critic_momentum: 0.9,
            critic_zero_init: false,
            aug_weight: 1.0,
            clip: None,
            eval_test: true,
            timing: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.mse_threshold > 0.0) {
            return bad(format!("mse_threshold must be > 0, got {}", self.mse_threshold));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.h == 0 || self.depth < 2 {
            return bad(format!("need h >= 1 and depth >= 2 (h={}, depth={})", self.h, self.depth));
        }
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("need lr >= 0 and momentum in [0, 1) (lr={}, momentum={})", self.lr, self.momentum));
        }
        if self.mode == Mode::Aug {
            if self.critic_hidden == 0 {
                return bad("critic.hidden must be >= 1 in aug mode".into());
            }
            if !(self.lambda_gp >= 0.0) || !(self.critic_lr >= 0.0) || !(0.0..1.0).contains(&self.critic_momentum) {
                return bad("aug mode needs lambda_gp >= 0, critic.lr >= 0, critic.momentum in [0, 1)".into());
            }
        }
        if let Some(c) = &self.clip {
            c.validate()?;
            c.check_momentum(self.momentum)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRow {
    /// 1-based.
    pub epoch: usize,
    /// Sample-weighted mean of the batch losses seen during the epoch.
    pub train_mse: f64,
    pub test_mse: Option<f64>,
    /// Spectral norm of the epoch-mean applied gradient, per layer.
    pub grad_sn: Vec<f64>,
    pub critic_gap: f64,
    pub gp_penalty: f64,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunLog {
    pub rows: Vec<EpochRow>,
    pub converged_epoch: Option<usize>,
    pub initial: ModelParams,
    pub params: ModelParams,
    pub critic: Option<CriticParams>,
}

impl RunLog {
    pub fn final_train_mse(&self) -> Option<f64> {
        self.rows.last().map(|r| r.train_mse)
    }

    pub fn metrics_header(&self) -> String {
        let layers = self.params.depth();
        let mut h = String::from("epoch,train_mse,test_mse");
        for l in 0..layers {
            let _ = write!(h, ",grad_sn_layer{l}");
        }
        h.push_str(",critic_gap,gp_penalty,wall_ms");
        h
    }

    pub fn metrics_csv(&self) -> String {
        let mut out = self.metrics_header();
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{},", r.epoch, r.train_mse);
            if let Some(t) = r.test_mse {
                let _ = write!(out, "{t}");
            }
            for g in &r.grad_sn {
                let _ = write!(out, ",{g}");
            }
            let _ = writeln!(out, ",{},{},{}", r.critic_gap, r.gp_penalty, r.wall_ms);
        }
        out
    }

    pub fn write_metrics(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.metrics_csv()).map_err(|e| Error::io(path, e))
    }
}

/// First 1-based epoch whose training MSE is at most `threshold`.
pub fn epochs_to_convergence(log: &[EpochRow], threshold: f64) -> Option<usize> {
    log.iter().find(|r| r.train_mse <= threshold).map(|r| r.epoch)
}

/// Step size and optional clipping threshold at global step `k` (1-based).
fn step_controls(cfg: &TrainConfig, k: usize) -> Result<(f64, Option<f64>)> {
    match cfg.clip {
        Some(s) if s.mode == ClipMode::AdaptiveSc => {
            let (tau, eta) = schedule_sc(k, &s)?;
            Ok((eta, Some(tau)))
        }
        Some(s) if s.mode == ClipMode::ConstantNc => {
            let (tau, eta) = schedule_nc(&s)?;
            Ok((eta, Some(tau)))
        }
        _ => Ok((cfg.lr, None)),
    }
}

fn divergence(message: String, rows: Vec<EpochRow>, initial: &ModelParams, params: &ModelParams, critic: Option<CriticParams>) -> Error {
    Error::Divergence {
        message,
        partial: Some(Box::new(RunLog {
            rows,
            converged_epoch: None,
            initial: initial.clone(),
            params: params.clone(),
            critic,
        })),
    }
}

/// Train a fresh network on `train`.
///
/// Per batch, `aug` mode first takes `n_critic` critic steps with the batch
/// targets as real samples and the current predictions as fake samples, then
/// moves the generator along the supervised gradient plus `aug_weight` times
/// the gradient of `−mean g(f(x))` under the updated critic.
pub fn train(cfg: &TrainConfig, train: &Dataset, test: Option<&Dataset>) -> Result<RunLog> {
    cfg.validate()?;
    let initial = init_params(train.d_x(), cfg.h, train.d_y(), cfg.depth, cfg.activation, cfg.seed)?;
    let mut params = initial.clone();
    let mut critic = match cfg.mode {
        Mode::Sup => None,
        Mode::Aug if cfg.critic_zero_init => Some(CriticParams::zeros(train.d_y(), cfg.critic_hidden, cfg.lambda_gp)),
        Mode::Aug => Some(CriticParams::init(train.d_y(), cfg.critic_hidden, cfg.lambda_gp, cfg.seed)?),
    };
    let mut gp_rng = seed::rng(cfg.seed, seed::GP);
    let mut state = MomentumState::new(&params.layers, cfg.momentum);
    let mut stream = BatchStream::new(train, cfg.batch_size, cfg.seed)?;
    let per_epoch = stream.batches_per_epoch();
    let mut rows: Vec<EpochRow> = Vec::new();
    let mut converged_epoch = None;
    let mut step = 0usize;

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let mut grad_sum = GradientSet::zeros_like(&params.layers);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        let (mut gap_sum, mut pen_sum, mut critic_steps) = (0.0, 0.0, 0usize);

        for _ in 0..per_epoch {
            step += 1;
            let (x, y) = stream.next_batch();
            let (out, cache) = params.forward(&x)?;
            let (loss, mut upstream) = model::mse_and_grad(&out, &y)?;
            if !loss.is_finite() {
                return Err(divergence(format!("non-finite loss at epoch {epoch}"), rows, &initial, &params, critic));
            }
            loss_sum += loss * x.rows() as f64;
            seen += x.rows();

            if let Some(c) = critic.as_mut() {
                for _ in 0..cfg.n_critic {
                    match c.step(&y, &out, cfg.critic_lr, cfg.critic_momentum, &mut gp_rng) {
                        Ok(CriticStep { gap, penalty }) => {
                            gap_sum += gap;
                            pen_sum += penalty;
                            critic_steps += 1;
                        }
                        Err(Error::Divergence { message, .. }) => {
                            let snapshot = c.clone();
                            return Err(divergence(message, rows, &initial, &params, Some(snapshot)));
                        }
                        Err(e) => return Err(e),
                    }
                }
                let adv = model::adversarial_upstream(c, &out)?;
                upstream.add_scaled(cfg.aug_weight, &adv);
            }

            let mut grads = params.backward(&cache, &upstream);
            let (lr, tau) = step_controls(cfg, step)?;
            if let Some(tau) = tau {
                clip_global(&mut grads.layers, tau)?;
            }
            grad_sum.add_scaled(1.0, &grads);
            if let Err(Error::Divergence { message, .. }) = sgd_momentum_step(&mut params.layers, &grads.layers, &mut state, lr) {
                return Err(divergence(format!("{message} at epoch {epoch}"), rows, &initial, &params, critic));
            }
        }

        grad_sum.scale(1.0 / per_epoch as f64);
        let grad_sn = grad_sum
            .layers
            .iter()
            .map(|g| linalg::spectral_norm(g, linalg::SPECTRAL_TOL, linalg::SPECTRAL_MAX_ITER).map(|s| s.value))
            .collect::<Result<Vec<_>>>()?;
        let test_mse = match test {
            Some(t) if cfg.eval_test => Some(params.mse_chunked(&t.inputs, &t.targets, 1024)?),
            _ => None,
        };
        let (critic_gap, gp_penalty) = if critic_steps > 0 {
            (gap_sum / critic_steps as f64, pen_sum / critic_steps as f64)
        } else {
            (0.0, 0.0)
        };
        let train_mse = loss_sum / seen as f64;
        rows.push(EpochRow {
            epoch,
            train_mse,
            test_mse,
            grad_sn,
            critic_gap,
            gp_penalty,
            wall_ms: if cfg.timing { started.elapsed().as_millis() as u64 } else { 0 },
        });
        log::debug!("epoch {epoch}: train_mse {train_mse:.6}");
        if train_mse <= cfg.mse_threshold {
            converged_epoch = Some(epoch);
            break;
        }
    }

    Ok(RunLog {
        rows,
        converged_epoch,
        initial,
        params,
        critic,
    })
}

/// Largest secant ratio `‖f(θ₁; x) − f(θ₂; x)‖ / ‖θ₁ − θ₂‖` over all pairs of
/// snapshots and all rows of `xs`. Identical snapshots are skipped.
pub fn estimate_lipschitz<F>(snapshots: &[Vec<f64>], xs: &Matrix, f: F) -> Result<f64>
where
    F: Fn(&[f64], &[f64]) -> Vec<f64>,
{
    if snapshots.len() < 2 {
        return Err(Error::Estimation("need at least two parameter snapshots".into()));
    }
    let outputs: Vec<Vec<Vec<f64>>> = snapshots
        .iter()
        .map(|theta| (0..xs.rows()).map(|i| f(theta, xs.row(i))).collect())
        .collect();
    let mut best: Option<f64> = None;
    for a in 0..snapshots.len() {
        for b in (a + 1)..snapshots.len() {
            let dist = snapshots[a]
                .iter()
                .zip(&snapshots[b])
                .map(|(p, q)| (p - q).powi(2))
                .sum::<f64>()
                .sqrt();
            if dist == 0.0 {
                continue;
            }
            for i in 0..xs.rows() {
                let diff = outputs[a][i]
                    .iter()
                    .zip(&outputs[b][i])
                    .map(|(p, q)| (p - q).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let r = diff / dist;
                best = Some(best.map_or(r, |m: f64| m.max(r)));
            }
        }
    }
    best.ok_or_else(|| Error::Estimation("all parameter snapshots are identical".into()))
}

/// [`estimate_lipschitz`] for snapshots of one network architecture.
pub fn estimate_lipschitz_model(snapshots: &[ModelParams], xs: &Matrix) -> Result<f64> {
    let template = snapshots
        .first()
        .ok_or_else(|| Error::Estimation("need at least two parameter snapshots".into()))?
        .clone();
    let flat: Vec<Vec<f64>> = snapshots.iter().map(ModelParams::flatten).collect();
    estimate_lipschitz(&flat, xs, |theta, x| {
        let mut p = template.clone();
        p.set_flat(theta).expect("snapshots share an architecture");
        let row = Matrix::from_parts_unchecked(1, x.len(), x.to_vec());
        p.predict(&row).expect("input width matches").into_vec()
    })
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub h: usize,
    pub mode: Mode,
    pub seed: u64,
    pub final_mse: Option<f64>,
    pub converged_epoch: Option<usize>,
    pub error: Option<String>,
    pub log: Option<RunLog>,
}

/// Run every config (in parallel) on the same data. Failures are recorded
/// per row and do not stop the sweep. With `out_dir`, each run writes
/// `<out_dir>/h<h>_<mode>_s<seed>/metrics.csv`.
pub fn sweep(configs: &[TrainConfig], train_set: &Dataset, test: Option<&Dataset>, out_dir: Option<&Path>) -> Vec<SweepRow> {
    configs
        .par_iter()
        .map(|cfg| {
            let result = train(cfg, train_set, test).and_then(|log| {
                if let Some(dir) = out_dir {
                    let run_dir = dir.join(run_name(cfg));
                    std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
                    log.write_metrics(run_dir.join("metrics.csv"))?;
                }
                Ok(log)
            });
            match result {
                Ok(log) => SweepRow {
                    h: cfg.h,
                    mode: cfg.mode,
                    seed: cfg.seed,
                    final_mse: log.final_train_mse(),
                    converged_epoch: log.converged_epoch,
                    error: None,
                    log: Some(log),
                },
                Err(e) => SweepRow {
                    h: cfg.h,
                    mode: cfg.mode,
                    seed: cfg.seed,
                    final_mse: None,
                    converged_epoch: None,
                    error: Some(e.to_string()),
                    log: None,
                },
            }
        })
        .collect()
}

pub fn run_name(cfg: &TrainConfig) -> String {
    format!("h{}_{}_s{}", cfg.h, cfg.mode.name(), cfg.seed)
}

/// Summary table `h,mode,seed,final_mse,converged_epoch,error`.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::from("h,mode,seed,final_mse,converged_epoch,error\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.h,
            r.mode.name(),
            r.seed,
            r.final_mse.map(|v| v.to_string()).unwrap_or_default(),
            r.converged_epoch.map(|v| v.to_string()).unwrap_or_default(),
            r.error.as_deref().unwrap_or("").replace(',', ";")
        );
    }
    out
}
