//! Bound calculators and the numerical harnesses that check them:
//! gradient-norm floors near the optimum, iteration complexity under
//! `(L₀, L₁)`-smoothness, the gradient-flow sub-optimality gap, clipped-SGD
//! rates under heavy-tailed noise, and the norm-based generalization measure.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::Synthetic;
use crate::error::{Error, Result};
use crate::linalg::{dot, frobenius_norm, norm2, spectral_norm, Matrix, SPECTRAL_MAX_ITER};
use crate::model::ModelParams;
use crate::optimize::{clip_vector, l0l1_step_size, schedule_nc, schedule_sc, ClipMode, ClipSchedule, WeightedAverage};
use crate::seed;
use crate::trainer::Mode;

/// Constants shared by the gradient-norm and iteration-complexity bounds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct TheoryConstants {
    /// Lipschitz constant of `f(θ; x)` in θ.
    pub l: f64,
    /// Smoothness of the loss in its prediction argument.
    pub beta: f64,
    /// Radius of the parameter ball around the optimum (or stationarity target).
    pub eps: f64,
    /// Critic sub-optimality.
    pub delta: f64,
    /// Floor on the useful adversarial gradient.
    pub zeta: f64,
    pub l0: f64,
    pub l1: f64,
    /// Local Lipschitz constant of the loss, used by the generalization bound.
    pub k: f64,
    pub loss_init: f64,
    pub loss_opt: f64,
}

impl TheoryConstants {
    fn check_nonnegative(&self) -> Result<()> {
        let fields = [
            ("L", self.l),
            ("beta", self.beta),
            ("eps", self.eps),
            ("delta", self.delta),
            ("zeta", self.zeta),
            ("L0", self.l0),
            ("L1", self.l1),
            ("K", self.k),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidInput(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// The adversarial complexity bound needs `δ ≤ √(2εζ)/L`.
    pub fn aug_valid(&self) -> bool {
        self.l > 0.0 && self.delta <= (2.0 * self.eps * self.zeta).sqrt() / self.l
    }

    fn require_aug_valid(&self) -> Result<()> {
        if self.aug_valid() {
            Ok(())
        } else {
            Err(Error::Validity(format!(
                "critic error delta = {} exceeds sqrt(2 eps zeta)/L = {} (eps = {}, zeta = {}, L = {})",
                self.delta,
                (2.0 * self.eps * self.zeta).sqrt() / self.l,
                self.eps,
                self.zeta,
                self.l
            )))
        }
    }
}

/// Supervised gradient ceiling near the optimum: `L²βε`.
pub fn lemma1_bound(c: &TheoryConstants) -> f64 {
    c.l * c.l * c.beta * c.eps
}

/// Adversarial gradient ceiling for a `δ`-suboptimal critic: `Lδ`.
pub fn lemma2_bound(c: &TheoryConstants) -> f64 {
    c.l * c.delta
}

/// Augmented-objective gradient ceiling: `L²βε + Lδ`.
pub fn theorem1_bound(c: &TheoryConstants) -> f64 {
    lemma1_bound(c) + lemma2_bound(c)
}

/// Iterations to reach an `ε`-stationary point.
///
/// Second-order forms: `2(l₀ − l*)(L₀ + L₁L²βε) / ε²` for `sup`, with the
/// denominator replaced by `ε² + 2εζ − L²δ²` for `aug`. First-order forms
/// with step `h`: `(l₀ − l*)/(hε²)` and `(l₀ − l*)/(hε² + hζε)`.
pub fn iter_complexity(c: &TheoryConstants, mode: Mode, first_order: bool, h: f64) -> Result<f64> {
    c.check_nonnegative()?;
    if !(c.eps > 0.0) {
        return Err(Error::InvalidInput("eps must be positive".into()));
    }
    let gap = c.loss_init - c.loss_opt;
    if mode == Mode::Aug {
        c.require_aug_valid()?;
    }
    if first_order {
        if !(h > 0.0) {
            return Err(Error::InvalidInput(format!("step size h must be positive, got {h}")));
        }
        let denom = match mode {
            Mode::Sup => h * c.eps * c.eps,
            Mode::Aug => h * c.eps * c.eps + h * c.zeta * c.eps,
        };
        return Ok(gap / denom);
    }
    let num = 2.0 * gap * (c.l0 + c.l1 * c.l * c.l * c.beta * c.eps);
    let denom = match mode {
        Mode::Sup => c.eps * c.eps,
        Mode::Aug => c.eps * c.eps + 2.0 * c.eps * c.zeta - c.l * c.l * c.delta * c.delta,
    };
    Ok(num / denom)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterCheck {
    /// Iterations until `‖∇l‖ ≤ ε`, or `None` if `max_iter` was exhausted.
    pub measured: Option<usize>,
    pub bound: f64,
    pub step: f64,
    pub final_grad_norm: f64,
    pub pass: bool,
}

/// Run fixed-step gradient descent with `h = 1/(L₀ + L₁L²βε)` from `theta0`
/// until `‖∇l‖ ≤ ε` and compare the count with [`iter_complexity`].
///
/// `L₀`, `L₁`, `l₀` and `l*` are taken from the objective and start point.
/// In `aug` mode a synthetic adversary adds `ζ·∇l/‖∇l‖` to every step, a
/// gradient of magnitude `ζ` along the descent direction; `δ` only enters
/// the validity condition and the bound.
pub fn verify_iter_complexity(
    obj: &Synthetic,
    theta0: &[f64],
    constants: &TheoryConstants,
    mode: Mode,
    max_iter: usize,
) -> Result<IterCheck> {
    if theta0.len() != obj.dim() {
        return Err(Error::dim("verify_iter_complexity start", obj.dim(), theta0.len()));
    }
    let true_c = obj.constants();
    let c = TheoryConstants {
        l0: true_c.l0,
        l1: true_c.l1,
        loss_init: obj.value(theta0),
        loss_opt: true_c.l_star,
        ..*constants
    };
    let bound = iter_complexity(&c, mode, false, 0.0)?;
    let h = l0l1_step_size(c.l0, c.l1, c.l, c.beta, c.eps)?;
    let mut theta = theta0.to_vec();
    let mut measured = None;
    let mut gnorm = f64::NAN;
    for k in 0..=max_iter {
        let g = obj.grad(&theta);
        gnorm = norm2(&g);
        if !gnorm.is_finite() {
            return Err(Error::Divergence {
                message: format!("gradient descent diverged at iteration {k}"),
                partial: None,
            });
        }
        if gnorm <= c.eps {
            measured = Some(k);
            break;
        }
        let extra = if mode == Mode::Aug { c.zeta / gnorm } else { 0.0 };
        for (t, gi) in theta.iter_mut().zip(&g) {
            *t -= h * (gi + extra * gi);
        }
    }
    Ok(IterCheck {
        measured,
        bound,
        step: h,
        final_grad_norm: gnorm,
        pass: measured.is_some_and(|t| t as f64 <= bound),
    })
}

/// Concave adversary `g(θ) = −(γ/2)‖θ − c‖²`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConcaveQuadratic {
    pub gamma: f64,
    pub center: Vec<f64>,
}

impl ConcaveQuadratic {
    pub fn value(&self, theta: &[f64]) -> f64 {
        -0.5 * self.gamma * theta.iter().zip(&self.center).map(|(t, c)| (t - c).powi(2)).sum::<f64>()
    }

    pub fn grad(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().zip(&self.center).map(|(t, c)| -self.gamma * (t - c)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowResult {
    pub times: Vec<f64>,
    pub trajectory: Vec<Vec<f64>>,
    pub average: Vec<f64>,
    /// `l(θ̄) − l(θ*)`.
    pub kappa: f64,
    /// `g(θ*) − g(θ̄)` when an adversary is present.
    pub pi: Option<f64>,
    /// `‖θ(0) − θ*‖²/(2T)`, minus `π(θ̄)` with an adversary.
    pub bound: f64,
}

/// Integrate `dθ/dt = −∇l(θ) + ∇g(θ)` with classical RK4 on `[0, T]` and
/// evaluate the sub-optimality gap at the time average `(1/T)∫θ dt`
/// (trapezoid rule on the RK4 grid). A final partial step absorbs any
/// remainder when `dt` does not divide `T`.
pub fn flow_simulate(l: &Synthetic, g: Option<&ConcaveQuadratic>, theta0: &[f64], t_end: f64, dt: f64) -> Result<FlowResult> {
    let theta_star = l
        .minimizer()
        .ok_or_else(|| Error::InvalidInput("flow needs an objective with a known minimizer".into()))?;
    if theta0.len() != l.dim() {
        return Err(Error::dim("flow_simulate start", l.dim(), theta0.len()));
    }
    if let Some(adv) = g {
        if adv.center.len() != l.dim() {
            return Err(Error::dim("flow_simulate adversary", l.dim(), adv.center.len()));
        }
    }
    if !(dt > 0.0) || !(t_end > 0.0) {
        return Err(Error::InvalidInput(format!("need T > 0 and dt > 0 (T = {t_end}, dt = {dt})")));
    }
    let field = |theta: &[f64]| -> Vec<f64> {
        let mut v: Vec<f64> = l.grad(theta).iter().map(|x| -x).collect();
        if let Some(adv) = g {
            for (vi, gi) in v.iter_mut().zip(adv.grad(theta)) {
                *vi += gi;
            }
        }
        v
    };
    let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + s * y).collect() };

    let mut times = vec![0.0];
    let mut trajectory = vec![theta0.to_vec()];
    let mut integral = vec![0.0; theta0.len()];
    let mut t = 0.0;
    let mut theta = theta0.to_vec();
    let steps_full = (t_end / dt).floor() as usize;
    let remainder = t_end - steps_full as f64 * dt;
    let mut steps: Vec<f64> = vec![dt; steps_full];
    if remainder > 1e-12 * t_end {
        steps.push(remainder);
    }
    for (i, &h) in steps.iter().enumerate() {
        let k1 = field(&theta);
        let k2 = field(&axpy(&theta, 0.5 * h, &k1));
        let k3 = field(&axpy(&theta, 0.5 * h, &k2));
        let k4 = field(&axpy(&theta, h, &k3));
        let next: Vec<f64> = (0..theta.len())
            .map(|j| theta[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]))
            .collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                message: format!("gradient flow diverged at step {i}"),
                partial: None,
            });
        }
        for j in 0..theta.len() {
            integral[j] += 0.5 * h * (theta[j] + next[j]);
        }
        t = if i + 1 == steps.len() { t_end } else { t + h };
        theta = next;
        times.push(t);
        trajectory.push(theta.clone());
    }
    let average: Vec<f64> = integral.iter().map(|v| v / t_end).collect();
    let kappa = l.value(&average) - l.value(&theta_star);
    let dist_sq: f64 = theta0.iter().zip(&theta_star).map(|(a, b)| (a - b).powi(2)).sum();
    let base = dist_sq / (2.0 * t_end);
    let pi = g.map(|adv| adv.value(&theta_star) - adv.value(&average));
    Ok(FlowResult {
        times,
        trajectory,
        bound: base - pi.unwrap_or(0.0),
        average,
        kappa,
        pi,
    })
}

/// Noise added to a fixed mean gradient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    /// Uniform direction, fixed length `radius`.
    Sphere { radius: f64 },
    /// Uniform direction, Pareto length with `P(R > r) = (scale/r)^shape`
    /// for `r ≥ scale`. Its α-moment is `shape·scale^α/(shape − α)` for
    /// `α < shape`.
    SymmetricPareto { shape: f64, scale: f64 },
    /// Isotropic Gaussian with per-coordinate standard deviation `sigma`.
    Gaussian { sigma: f64 },
}

impl NoiseSpec {
    /// `(E‖ξ‖^α)^{1/α}`; the Gaussian case uses the exact second moment and
    /// therefore requires `α = 2`.
    pub fn alpha_moment_root(&self, alpha: f64, dim: usize) -> Result<f64> {
        match *self {
            NoiseSpec::Sphere { radius } => Ok(radius),
            NoiseSpec::SymmetricPareto { shape, scale } => {
                if alpha >= shape {
                    return Err(Error::InvalidInput(format!(
                        "Pareto shape {shape} has no finite moment of order {alpha}"
                    )));
                }
                Ok((shape * scale.powf(alpha) / (shape - alpha)).powf(1.0 / alpha))
            }
            NoiseSpec::Gaussian { sigma } => {
                if alpha != 2.0 {
                    return Err(Error::InvalidInput("Gaussian moment bound is provided for alpha = 2 only".into()));
                }
                Ok(sigma * (dim as f64).sqrt())
            }
        }
    }

    pub fn sample<R: Rng>(&self, dim: usize, rng: &mut R) -> Vec<f64> {
        match *self {
            NoiseSpec::Gaussian { sigma } => (0..dim).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect(),
            NoiseSpec::Sphere { radius } => scaled_direction(dim, radius, rng),
            NoiseSpec::SymmetricPareto { shape, scale } => {
                let u: f64 = rng.random();
                // Inverse CDF on (0, 1]; 1 − u avoids an infinite draw.
                let r = scale * (1.0 - u).powf(-1.0 / shape);
                scaled_direction(dim, r, rng)
            }
        }
    }
}

fn scaled_direction<R: Rng>(dim: usize, length: f64, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = norm2(&v);
        if n > 0.0 {
            return v.into_iter().map(|x| length * x / n).collect();
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Lemma3Result {
    pub tau: f64,
    pub alpha: f64,
    pub g: f64,
    pub mean_sq_norm: f64,
    pub mean_sq_norm_se: f64,
    pub mean_sq_norm_bound: f64,
    pub bias_sq: f64,
    pub bias_sq_se: f64,
    pub bias_sq_bound: f64,
    /// Each estimate is at most its bound plus three standard errors.
    pub pass: bool,
}

/// Monte Carlo estimates of `E‖ĝ‖²` and `‖Eĝ − ∇l‖²` for the clipped
/// estimator `ĝ = 𝔤·min(1, τ/‖𝔤‖)`, `𝔤 = mean + ξ`, against
/// `G^α τ^{2−α}` and `G^{2α} τ^{2−2α}`. When `g` is `None` it is set to
/// `‖mean‖ + (E‖ξ‖^α)^{1/α}`, which bounds `(E‖𝔤‖^α)^{1/α}` by Minkowski.
pub fn lemma3_montecarlo(
    noise: &NoiseSpec,
    mean: &[f64],
    tau: f64,
    alpha: f64,
    g: Option<f64>,
    n_samples: usize,
    seed: u64,
) -> Result<Lemma3Result> {
    if !(alpha > 1.0 && alpha <= 2.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (1, 2], got {alpha}")));
    }
    if n_samples < 2 {
        return Err(Error::InvalidInput("need at least two samples".into()));
    }
    let dim = mean.len();
    let g = match g {
        Some(g) => g,
        None => norm2(mean) + noise.alpha_moment_root(alpha, dim)?,
    };
    let mut rng = seed::rng(seed, seed::NOISE);
    let mut sum = vec![0.0; dim];
    let mut sum_outer = vec![0.0; dim * dim];
    let (mut sq_sum, mut sq_sq_sum) = (0.0, 0.0);
    for _ in 0..n_samples {
        let mut s: Vec<f64> = noise.sample(dim, &mut rng).iter().zip(mean).map(|(x, m)| x + m).collect();
        clip_vector(&mut s, tau)?;
        let sq = dot(&s, &s);
        sq_sum += sq;
        sq_sq_sum += sq * sq;
        for i in 0..dim {
            sum[i] += s[i];
            for j in 0..dim {
                sum_outer[i * dim + j] += s[i] * s[j];
            }
        }
    }
    let n = n_samples as f64;
    let mean_sq = sq_sum / n;
    let var_sq = (sq_sq_sum / n - mean_sq * mean_sq).max(0.0) * n / (n - 1.0);
    let avg: Vec<f64> = sum.iter().map(|v| v / n).collect();
    let bias: Vec<f64> = avg.iter().zip(mean).map(|(a, m)| a - m).collect();
    let bias_sq = dot(&bias, &bias);
    // Delta method: Var ‖b̂‖² ≈ 4 b̂ᵀ Σ b̂ / n.
    let mut quad = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            let cov = (sum_outer[i * dim + j] / n - avg[i] * avg[j]) * n / (n - 1.0);
            quad += bias[i] * cov * bias[j];
        }
    }
    let bias_se = (4.0 * quad.max(0.0) / n).sqrt();
    let mean_sq_se = (var_sq / n).sqrt();
    let msq_bound = g.powf(alpha) * tau.powf(2.0 - alpha);
    let bias_bound = g.powf(2.0 * alpha) * tau.powf(2.0 - 2.0 * alpha);
    Ok(Lemma3Result {
        tau,
        alpha,
        g,
        mean_sq_norm: mean_sq,
        mean_sq_norm_se: mean_sq_se,
        mean_sq_norm_bound: msq_bound,
        bias_sq,
        bias_sq_se: bias_se,
        bias_sq_bound: bias_bound,
        pass: mean_sq <= msq_bound + 3.0 * mean_sq_se && bias_sq <= bias_bound + 3.0 * bias_se,
    })
}

/// Setup of one clipped-SGD rate experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct RateSetup {
    pub objective: Synthetic,
    pub schedule: ClipSchedule,
    pub noise: NoiseSpec,
    pub theta0: Vec<f64>,
    /// Optional concave adversary; the optimizer then minimizes `l − g`.
    pub adversary: Option<ConcaveQuadratic>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatePoint {
    pub t: usize,
    /// Mean over seeds of the optimized-objective gap (`sc`: `𝔩(θ̄) − 𝔩*`;
    /// `nc`: `(1/T)Σ‖∇𝔩(θ_{k−1})‖²`).
    pub gap: f64,
    /// Mean over seeds of `l(θ̄) − l*` for the generator objective alone (`sc` only).
    pub generator_gap: Option<f64>,
    pub seeds_used: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateResult {
    pub points: Vec<RatePoint>,
    /// Least-squares slope of `log gap` against `log T`.
    pub slope: f64,
    /// `(seed, T)` pairs dropped because the run diverged.
    pub excluded: Vec<(u64, usize)>,
}

struct SingleRun {
    gap: f64,
    generator_gap: Option<f64>,
}

fn run_clipped_sgd(setup: &RateSetup, t: usize, seed_value: u64) -> Result<SingleRun> {
    let obj = &setup.objective;
    let dim = obj.dim();
    let mut rng = seed::rng_indexed(seed_value, seed::NOISE, t as u64);
    let total_grad = |theta: &[f64]| -> Vec<f64> {
        let mut g = obj.grad(theta);
        if let Some(adv) = &setup.adversary {
            for (gi, ai) in g.iter_mut().zip(adv.grad(theta)) {
                *gi -= ai;
            }
        }
        g
    };
    let total_value = |theta: &[f64]| -> f64 { obj.value(theta) - setup.adversary.as_ref().map_or(0.0, |a| a.value(theta)) };
    let schedule = ClipSchedule { t, ..setup.schedule };
    let mut theta = setup.theta0.clone();
    let mut avg = WeightedAverage::new();
    let mut sq_grad_sum = 0.0;
    for k in 1..=t {
        let (tau, eta) = match schedule.mode {
            ClipMode::AdaptiveSc => schedule_sc(k, &schedule)?,
            ClipMode::ConstantNc => schedule_nc(&schedule)?,
            ClipMode::None => return Err(Error::Config("rate harness needs a clipping schedule".into())),
        };
        let g = total_grad(&theta);
        avg.push(&theta);
        sq_grad_sum += dot(&g, &g);
        let mut noisy: Vec<f64> = g.iter().zip(setup.noise.sample(dim, &mut rng)).map(|(a, b)| a + b).collect();
        clip_vector(&mut noisy, tau)?;
        for (p, s) in theta.iter_mut().zip(&noisy) {
            *p -= eta * s;
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                message: format!("clipped SGD diverged at step {k}"),
                partial: None,
            });
        }
    }
    match schedule.mode {
        ClipMode::AdaptiveSc => {
            let bar = avg.value().expect("t >= 1").to_vec();
            let star = minimizer_of_total(setup)?;
            let gap = total_value(&bar) - total_value(&star);
            let l_star = obj.constants().l_star;
            Ok(SingleRun {
                gap,
                generator_gap: Some(obj.value(&bar) - l_star),
            })
        }
        _ => Ok(SingleRun {
            gap: sq_grad_sum / t as f64,
            generator_gap: None,
        }),
    }
}

/// Minimizer of `l − g`. Supported when the adversary is centred on the
/// minimizer of `l`, which then minimizes the sum as well.
fn minimizer_of_total(setup: &RateSetup) -> Result<Vec<f64>> {
    let star = setup
        .objective
        .minimizer()
        .ok_or_else(|| Error::InvalidInput("rate harness needs an objective with a known minimizer".into()))?;
    if let Some(adv) = &setup.adversary {
        if adv.center != star {
            return Err(Error::InvalidInput("adversary must be centred on the objective's minimizer".into()));
        }
    }
    Ok(star)
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Run clipped SGD (no momentum) for every horizon in `t_grid` and every
/// seed, average the gaps over seeds, and fit the log-log slope.
pub fn clipped_sgd_rate(setup: &RateSetup, t_grid: &[usize], seeds: &[u64]) -> Result<RateResult> {
    setup.schedule.validate()?;
    if setup.theta0.len() != setup.objective.dim() {
        return Err(Error::dim("rate harness start", setup.objective.dim(), setup.theta0.len()));
    }
    if t_grid.len() < 2 || seeds.is_empty() {
        return Err(Error::InvalidInput("need at least two horizons and one seed".into()));
    }
    let jobs: Vec<(usize, u64)> = t_grid.iter().flat_map(|&t| seeds.iter().map(move |&s| (t, s))).collect();
    let results: Vec<(usize, u64, Result<SingleRun>)> = jobs
        .par_iter()
        .map(|&(t, s)| (t, s, run_clipped_sgd(setup, t, s)))
        .collect();
    let mut points = Vec::new();
    let mut excluded = Vec::new();
    for &t in t_grid {
        let (mut gap, mut gen, mut used) = (0.0, 0.0, 0usize);
        for (rt, s, r) in &results {
            if *rt != t {
                continue;
            }
            match r {
                Ok(run) => {
                    gap += run.gap;
                    gen += run.generator_gap.unwrap_or(0.0);
                    used += 1;
                }
                Err(Error::Divergence { .. }) => excluded.push((*s, t)),
                Err(e) => return Err(Error::Estimation(e.to_string())),
            }
        }
        if used == 0 {
            return Err(Error::Estimation(format!("every seed diverged at T = {t}")));
        }
        points.push(RatePoint {
            t,
            gap: gap / used as f64,
            generator_gap: (setup.schedule.mode == ClipMode::AdaptiveSc).then_some(gen / used as f64),
            seeds_used: used,
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.t as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.gap.max(f64::MIN_POSITIVE).ln()).collect();
    Ok(RateResult {
        slope: fit_slope(&xs, &ys),
        points,
        excluded,
    })
}

/// Weights and data entering the norm-based generalization bound of a
/// two-layer network `V[Ux]₊`.
#[derive(Clone, Debug)]
pub struct GenBoundInputs {
    pub u: Matrix,
    pub u0: Matrix,
    pub v: Matrix,
    /// Training inputs, one row per sample.
    pub x: Matrix,
    pub k: f64,
    pub delta_conf: f64,
    pub train_loss: f64,
    /// Per-neuron caps `(α, β)`; defaults to `αⱼ = ‖vⱼ‖`, `βⱼ = ‖uⱼ − uⱼ⁰‖`.
    pub caps: Option<(Vec<f64>, Vec<f64>)>,
}

impl GenBoundInputs {
    pub fn from_model(p: &ModelParams, x: &Matrix, k: f64, delta_conf: f64, train_loss: f64) -> Result<Self> {
        if p.depth() != 2 {
            return Err(Error::InvalidInput(format!(
                "the generalization measure is defined for two-layer networks, got depth {}",
                p.depth()
            )));
        }
        Ok(GenBoundInputs {
            u: p.layers[0].clone(),
            u0: p.u0().clone(),
            v: p.layers[1].clone(),
            x: x.clone(),
            k,
            delta_conf,
            train_loss,
            caps: None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GenBound {
    pub rademacher: f64,
    pub combined_measure: f64,
    pub full_bound: f64,
}

/// Rademacher term `(2K√d_y/√m)·‖α‖₂·(‖β‖₂·√mean‖xᵢ‖² + √mean‖U⁰xᵢ‖²)`,
/// combined measure `‖U⁰‖₂‖V‖_F + ‖U − U⁰‖_F‖V‖_F + √h`, and the full bound
/// `train_loss + 2·rademacher + 3√(ln(2/δ_conf)/(2m))`.
pub fn gen_bound(inp: &GenBoundInputs) -> Result<GenBound> {
    let (h, d_x) = inp.u.shape();
    let d_y = inp.v.rows();
    let m = inp.x.rows();
    if inp.u0.shape() != (h, d_x) {
        return Err(Error::dim("gen_bound U0", format!("{:?}", (h, d_x)), format!("{:?}", inp.u0.shape())));
    }
    if inp.v.cols() != h {
        return Err(Error::dim("gen_bound V", format!("{h} columns"), inp.v.cols()));
    }
    if inp.x.cols() != d_x {
        return Err(Error::dim("gen_bound X", format!("{d_x} columns"), inp.x.cols()));
    }
    if m == 0 {
        return Err(Error::InvalidInput("gen_bound needs m >= 1 samples".into()));
    }
    if !(inp.delta_conf > 0.0 && inp.delta_conf < 1.0) {
        return Err(Error::InvalidInput(format!("delta_conf must lie in (0, 1), got {}", inp.delta_conf)));
    }
    let diff = inp.u.sub(&inp.u0)?;
    let (alpha, beta) = match &inp.caps {
        Some((a, b)) => {
            if a.len() != h || b.len() != h {
                return Err(Error::dim("gen_bound caps", h, format!("{} and {}", a.len(), b.len())));
            }
            (a.clone(), b.clone())
        }
        None => ((0..h).map(|j| inp.v.col_norm(j)).collect(), (0..h).map(|j| diff.row_norm(j)).collect()),
    };
    let mean_x_sq = inp.x.sum_squares() / m as f64;
    let mean_u0x_sq = inp.x.matmul_nt(&inp.u0)?.sum_squares() / m as f64;
    let rademacher = 2.0 * inp.k * (d_y as f64).sqrt() / (m as f64).sqrt()
        * norm2(&alpha)
        * (norm2(&beta) * mean_x_sq.sqrt() + mean_u0x_sq.sqrt());

    // With close top singular values power iteration creeps towards σ₁, so a
    // small per-step change is not a small error. Iterate until it stops moving.
    let u0_spec = spectral_norm(&inp.u0, 1e-16, SPECTRAL_MAX_ITER * 100)?.value;
    let v_f = frobenius_norm(&inp.v)?;
    let diff_f = frobenius_norm(&diff)?;
    let combined = u0_spec * v_f + diff_f * v_f + (h as f64).sqrt();
    let full = inp.train_loss + 2.0 * rademacher + 3.0 * ((2.0 / inp.delta_conf).ln() / (2.0 * m as f64)).sqrt();
    Ok(GenBound {
        rademacher,
        combined_measure: combined,
        full_bound: full,
    })
}

/// `max_i ‖2(f(xᵢ) − yᵢ)‖`: the largest per-sample gradient of the squared
/// loss with respect to the prediction.
pub fn estimate_k(p: &ModelParams, x: &Matrix, y: &Matrix) -> Result<f64> {
    let out = p.predict(x)?;
    let diff = out.sub(y)?;
    Ok((0..diff.rows()).map(|i| 2.0 * diff.row_norm(i)).fold(0.0, f64::max))
}

/// `(test − train)·N*`.
pub fn rel_gen_error(train_loss: f64, test_loss: f64, n_star: f64) -> Result<f64> {
    if !(n_star > 0.0) {
        return Err(Error::InvalidInput(format!("N* must be positive, got {n_star}")));
    }
    Ok((test_loss - train_loss) * n_star)
}

/// One entry of a verification report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub inputs: serde_json::Value,
    pub measured: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Settings of the shipped bound checks.
pub mod shipped {
    use super::*;

    /// Quadratic `(θ − 0)²` from `θ₀ = 1` (so `l₀ − l* = 1`), `ε = 0.1`.
    pub fn complexity_constants() -> TheoryConstants {
        TheoryConstants {
            l: 1.0,
            beta: 1.0,
            eps: 0.1,
            delta: 0.05,
            zeta: 0.05,
            l0: 2.0,
            l1: 0.0,
            k: 0.0,
            loss_init: 1.0,
            loss_opt: 0.0,
        }
    }

    pub fn complexity_objective() -> Synthetic {
        Synthetic::Quadratic { a: 1.0, theta_star: 0.0 }
    }

    /// `½(θ − 0)²` from `θ₀ = 1` over `T = 2`.
    pub fn flow_objective() -> Synthetic {
        Synthetic::Quadratic { a: 0.5, theta_star: 0.0 }
    }

    pub fn flow_adversary() -> ConcaveQuadratic {
        ConcaveQuadratic {
            gamma: 1.0,
            center: vec![0.0],
        }
    }

    pub const FLOW_T: f64 = 2.0;

    /// Closed form of `κ(θ̄)` for the shipped flow without adversary:
    /// `θ(t) = e^{−t}`, so `θ̄ = (1 − e^{−2})/2`.
    pub fn flow_oracle() -> f64 {
        let avg = (1.0 - (-FLOW_T).exp()) / FLOW_T;
        0.5 * avg * avg
    }

    /// Symmetric Pareto noise with shape 2 around the mean gradient `(1, 0)`.
    pub fn lemma3_noise() -> (NoiseSpec, Vec<f64>) {
        (NoiseSpec::SymmetricPareto { shape: 2.0, scale: 1.0 }, vec![1.0, 0.0])
    }

    pub const LEMMA3_ALPHA: f64 = 1.5;
    pub const LEMMA3_TAUS: [f64; 3] = [0.5, 2.0, 8.0];
    pub const LEMMA3_SAMPLES: usize = 100_000;

    /// Strongly convex rate setup with Gaussian noise (α = 2).
    pub fn sc_rate_setup(adversary: Option<f64>) -> RateSetup {
        let objective = Synthetic::StronglyConvexQuadratic { mu: 1.0, dim: 2 };
        let theta0 = vec![1.0, 1.0];
        let noise = NoiseSpec::Gaussian { sigma: 1.0 };
        let gamma = adversary.unwrap_or(0.0);
        let mu = 1.0 + gamma;
        // ‖∇𝔩(θ)‖ is largest at θ₀ along the trajectory of a contracting
        // method; add the noise second-moment root.
        let grad0 = {
            let g = objective.grad(&theta0);
            norm2(&g) + gamma * norm2(&theta0)
        };
        let g = grad0 + noise.alpha_moment_root(2.0, 2).expect("alpha = 2");
        RateSetup {
            schedule: ClipSchedule {
                mode: ClipMode::AdaptiveSc,
                g,
                mu,
                alpha: 2.0,
                l: 1.0,
                r0: 1.0,
                t: 1,
            },
            adversary: adversary.map(|gamma| ConcaveQuadratic {
                gamma,
                center: vec![0.0; 2],
            }),
            objective,
            noise,
            theta0,
        }
    }

    /// Nonconvex quartic rate setup with Gaussian noise (α = 2).
    pub fn nc_rate_setup() -> RateSetup {
        let objective = Synthetic::SmoothNonconvexQuartic { dim: 2 };
        let theta0 = vec![1.5, -0.5];
        let noise = NoiseSpec::Gaussian { sigma: 1.0 };
        // On the box |θᵢ| ≤ 1.5: Hessian ≤ 3·1.5² − 1, gradient ≤ √2·1.875.
        let l = 3.0 * 1.5 * 1.5 - 1.0;
        let g = 2f64.sqrt() * 1.875 + noise.alpha_moment_root(2.0, 2).expect("alpha = 2");
        let r0 = objective.value(&theta0) - objective.constants().l_star;
        RateSetup {
            schedule: ClipSchedule {
                mode: ClipMode::ConstantNc,
                g,
                mu: 1.0,
                alpha: 2.0,
                l,
                r0,
                t: 1,
            },
            objective,
            noise,
            theta0,
            adversary: None,
        }
    }

    pub const RATE_T_GRID: [usize; 3] = [100, 1000, 10_000];

    pub fn rate_seeds() -> Vec<u64> {
        (0..20).collect()
    }
}

/// Lemma/theorem calculators on the shipped constants.
pub fn suite_calculators() -> Vec<Check> {
    let c = shipped::complexity_constants();
    let t1 = theorem1_bound(&c);
    let sum = lemma1_bound(&c) + lemma2_bound(&c);
    vec![Check {
        name: "gradient-norm-ceiling-additivity".into(),
        inputs: serde_json::to_value(c).unwrap_or_default(),
        measured: t1,
        bound: sum,
        pass: t1 == sum,
    }]
}

/// Gradient descent iteration counts against the complexity bounds.
pub fn suite_complexity() -> Result<Vec<Check>> {
    let obj = shipped::complexity_objective();
    let c = shipped::complexity_constants();
    let sup = verify_iter_complexity(&obj, &[1.0], &c, Mode::Sup, 100_000)?;
    let aug = verify_iter_complexity(&obj, &[1.0], &c, Mode::Aug, 100_000)?;
    let inputs = serde_json::json!({ "objective": "quadratic(a=1,theta_star=0)", "theta0": 1.0, "constants": c });
    let as_f = |m: Option<usize>| m.map_or(f64::INFINITY, |v| v as f64);
    Ok(vec![
        Check {
            name: "complexity-sup".into(),
            inputs: inputs.clone(),
            measured: as_f(sup.measured),
            bound: sup.bound,
            pass: sup.pass,
        },
        Check {
            name: "complexity-aug".into(),
            inputs: inputs.clone(),
            measured: as_f(aug.measured),
            bound: aug.bound,
            pass: aug.pass,
        },
        Check {
            name: "complexity-aug-not-slower".into(),
            inputs,
            measured: as_f(aug.measured),
            bound: as_f(sup.measured),
            pass: aug.measured.is_some() && aug.measured <= sup.measured,
        },
    ])
}

pub fn suite_flow() -> Result<Vec<Check>> {
    let l = shipped::flow_objective();
    let adv = shipped::flow_adversary();
    let t = shipped::FLOW_T;
    let plain = flow_simulate(&l, None, &[1.0], t, 1e-3 * t)?;
    let with = flow_simulate(&l, Some(&adv), &[1.0], t, 1e-3 * t)?;
    let oracle = shipped::flow_oracle();
    let inputs = serde_json::json!({ "objective": "0.5*theta^2", "theta0": 1.0, "T": t, "gamma": adv.gamma });
    Ok(vec![
        Check {
            name: "flow-kappa-oracle".into(),
            inputs: inputs.clone(),
            measured: (plain.kappa - oracle).abs(),
            bound: 1e-6,
            pass: (plain.kappa - oracle).abs() <= 1e-6,
        },
        Check {
            name: "flow-kappa-bound".into(),
            inputs: inputs.clone(),
            measured: plain.kappa,
            bound: plain.bound,
            pass: plain.kappa <= plain.bound,
        },
        Check {
            name: "flow-adversary-kappa-bound".into(),
            inputs: inputs.clone(),
            measured: with.kappa,
            bound: with.bound,
            pass: with.kappa <= with.bound + 1e-9,
        },
        Check {
            name: "flow-adversary-tightens".into(),
            inputs,
            measured: with.kappa,
            bound: plain.kappa,
            pass: with.kappa < plain.kappa,
        },
    ])
}

pub fn suite_lemma3(seed: u64) -> Result<Vec<Check>> {
    let (noise, mean) = shipped::lemma3_noise();
    let mut out = Vec::new();
    for tau in shipped::LEMMA3_TAUS {
        let r = lemma3_montecarlo(&noise, &mean, tau, shipped::LEMMA3_ALPHA, None, shipped::LEMMA3_SAMPLES, seed)?;
        let inputs = serde_json::json!({ "noise": noise, "mean": mean, "tau": tau, "alpha": r.alpha, "G": r.g, "samples": shipped::LEMMA3_SAMPLES });
        out.push(Check {
            name: format!("clipped-second-moment-tau{tau}"),
            inputs: inputs.clone(),
            measured: r.mean_sq_norm,
            bound: r.mean_sq_norm_bound,
            pass: r.mean_sq_norm <= r.mean_sq_norm_bound + 3.0 * r.mean_sq_norm_se,
        });
        out.push(Check {
            name: format!("clipped-bias-tau{tau}"),
            inputs,
            measured: r.bias_sq,
            bound: r.bias_sq_bound,
            pass: r.bias_sq <= r.bias_sq_bound + 3.0 * r.bias_sq_se,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn consts() -> TheoryConstants {
        shipped::complexity_constants()
    }

    #[test]
    fn lemma_arithmetic() {
        let c = TheoryConstants {
            l: 2.0,
            beta: 3.0,
            eps: 0.1,
            ..Default::default()
        };
        assert!((lemma1_bound(&c) - 1.2).abs() < 1e-15);
        assert_eq!(lemma1_bound(&TheoryConstants { eps: 0.0, ..c }), 0.0);
        assert!((lemma1_bound(&TheoryConstants { eps: 0.2, ..c }) - 2.0 * lemma1_bound(&c)).abs() < 1e-15);
        let d = TheoryConstants {
            l: 1.0,
            beta: 1.0,
            eps: 0.005,
            delta: 0.1,
            ..Default::default()
        };
        assert!((theorem1_bound(&d) - 0.105).abs() < 1e-15);
        assert_eq!(theorem1_bound(&TheoryConstants { delta: 0.0, ..d }), lemma1_bound(&d));
    }

    #[test]
    fn complexity_arithmetic() {
        let c = consts();
        assert!((iter_complexity(&c, Mode::Sup, false, 0.0).unwrap() - 400.0).abs() < 1e-9);
        let aug = iter_complexity(&c, Mode::Aug, false, 0.0).unwrap();
        assert!((aug - 4.0 / 0.0175).abs() < 1e-9);
        assert!((iter_complexity(&c, Mode::Sup, true, 100.0).unwrap() - 1.0).abs() < 1e-12);
        let bad = TheoryConstants { delta: 0.2, ..c };
        assert!(matches!(iter_complexity(&bad, Mode::Aug, false, 0.0), Err(Error::Validity(_))));
    }

    #[test]
    fn already_stationary_start_takes_zero_steps() {
        let obj = shipped::complexity_objective();
        let c = TheoryConstants { eps: 5.0, ..consts() };
        let r = verify_iter_complexity(&obj, &[1.0], &c, Mode::Sup, 10).unwrap();
        assert_eq!(r.measured, Some(0));
    }

    #[test]
    fn weighted_fit_slope() {
        let xs = [0.0, 1.0, 2.0];
        assert!((fit_slope(&xs, &[1.0, -1.0, -3.0]) + 2.0).abs() < 1e-15);
    }

    #[test]
    fn gen_bound_hand_example() {
        let inp = GenBoundInputs {
            u: Matrix::identity(2),
            u0: Matrix::identity(2),
            v: Matrix::identity(2),
            x: Matrix::identity(2),
            k: 1.0,
            delta_conf: 0.05,
            train_loss: 0.0,
            caps: None,
        };
        let b = gen_bound(&inp).unwrap();
        assert!((b.combined_measure - 2.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rel_gen_error_arithmetic() {
        assert_eq!(rel_gen_error(0.2, 0.2, 5.0).unwrap(), 0.0);
        assert!((rel_gen_error(0.1, 0.11, 100.0).unwrap() - 1.0).abs() < 1e-12);
        assert!(rel_gen_error(0.1, 0.2, 0.0).is_err());
    }

    #[test]
    fn pareto_alpha_moment() {
        let p = NoiseSpec::SymmetricPareto { shape: 2.0, scale: 1.0 };
        assert!((p.alpha_moment_root(1.5, 2).unwrap() - 4f64.powf(1.0 / 1.5)).abs() < 1e-12);
        assert!(p.alpha_moment_root(2.0, 2).is_err());
    }
}
