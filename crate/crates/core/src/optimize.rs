//! Optimizer kernels: SGD with momentum, global norm clipping, the clipping
//! threshold / step-size schedules for clipped SGD, streaming k-weighted
//! iterate averaging, and the `(L₀, L₁)`-aware fixed step size.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct MomentumState {
    pub velocity: Vec<Matrix>,
    pub coefficient: f64,
}

impl MomentumState {
    pub fn new(shapes: &[Matrix], coefficient: f64) -> Self {
        MomentumState {
            velocity: shapes.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect(),
            coefficient,
        }
    }
}

/// `v ← μ·v + g; θ ← θ − lr·v`. Nothing is modified if the update would
/// produce a non-finite value.
pub fn sgd_momentum_step(params: &mut [Matrix], grads: &[Matrix], state: &mut MomentumState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::dim("sgd_momentum_step", params.len(), grads.len()));
    }
    for ((p, g), v) in params.iter().zip(grads).zip(&state.velocity) {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::dim(
                "sgd_momentum_step",
                format!("{:?}", p.shape()),
                format!("{:?}", g.shape()),
            ));
        }
    }
    let mu = state.coefficient;
    let mut next = Vec::with_capacity(grads.len());
    for (g, v) in grads.iter().zip(&state.velocity) {
        let nv: Vec<f64> = v.as_slice().iter().zip(g.as_slice()).map(|(v, g)| mu * v + g).collect();
        if nv.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence {
                message: "non-finite momentum update".into(),
                partial: None,
            });
        }
        next.push(nv);
    }
    for (p, nv) in params.iter().zip(&next) {
        if p.as_slice().iter().zip(nv).any(|(p, v)| !(p - lr * v).is_finite()) {
            return Err(Error::Divergence {
                message: "non-finite parameter update".into(),
                partial: None,
            });
        }
    }
    for ((p, v), nv) in params.iter_mut().zip(state.velocity.iter_mut()).zip(next) {
        v.as_mut_slice().copy_from_slice(&nv);
        for (p, v) in p.as_mut_slice().iter_mut().zip(&nv) {
            *p -= lr * v;
        }
    }
    Ok(())
}

/// Rescale all layers jointly so their combined norm is at most `tau`.
/// Returns the applied factor (1 when already inside the ball).
pub fn clip_global(grads: &mut [Matrix], tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("clipping threshold must be positive, got {tau}")));
    }
    let norm = grads.iter().map(Matrix::sum_squares).sum::<f64>().sqrt();
    if norm <= tau {
        return Ok(1.0);
    }
    let factor = tau / norm;
    grads.iter_mut().for_each(|g| g.scale(factor));
    Ok(factor)
}

/// [`clip_global`] for a single flat vector.
pub fn clip_vector(g: &mut [f64], tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("clipping threshold must be positive, got {tau}")));
    }
    let norm = crate::linalg::norm2(g);
    if norm <= tau {
        return Ok(1.0);
    }
    let factor = tau / norm;
    g.iter_mut().for_each(|v| *v *= factor);
    Ok(factor)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClipMode {
    /// Growing threshold and `O(1/k)` steps for strongly convex objectives.
    AdaptiveSc,
    /// Constant threshold and step for smooth nonconvex objectives.
    ConstantNc,
    None,
}

impl ClipMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "adaptive_sc" => Ok(ClipMode::AdaptiveSc),
            "constant_nc" => Ok(ClipMode::ConstantNc),
            "none" => Ok(ClipMode::None),
            other => Err(Error::Config(format!(
                "unknown clip mode `{other}` (adaptive_sc|constant_nc|none)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ClipMode::AdaptiveSc => "adaptive_sc",
            ClipMode::ConstantNc => "constant_nc",
            ClipMode::None => "none",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipSchedule {
    pub mode: ClipMode,
    /// Bound on the α-th moment of stochastic gradients, `E‖𝔤‖^α ≤ G^α`.
    pub g: f64,
    pub mu: f64,
    pub alpha: f64,
    pub l: f64,
    pub r0: f64,
    pub t: usize,
}

impl ClipSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 1.0 && self.alpha <= 2.0) {
            return Err(Error::Config(format!("clip.alpha must lie in (1, 2], got {}", self.alpha)));
        }
        if !(self.g >= 0.0) {
            return Err(Error::Config(format!("clip.G must be >= 0, got {}", self.g)));
        }
        match self.mode {
            ClipMode::AdaptiveSc if !(self.mu > 0.0) => {
                Err(Error::Config(format!("clip.mu must be > 0, got {}", self.mu)))
            }
            ClipMode::ConstantNc if !(self.l > 0.0 && self.r0 > 0.0 && self.g > 0.0) => Err(Error::Config(format!(
                "constant_nc needs clip.L, clip.R0, clip.G > 0 (got {}, {}, {})",
                self.l, self.r0, self.g
            ))),
            _ => Ok(()),
        }
    }

    /// These schedules are analysed for plain SGD; momentum is rejected.
    pub fn check_momentum(&self, momentum: f64) -> Result<()> {
        if self.mode != ClipMode::None && momentum > 0.0 {
            return Err(Error::Config(format!(
                "clip.mode={} requires momentum = 0, got {momentum}",
                self.mode.name()
            )));
        }
        Ok(())
    }
}

/// `(τ_k, η_k) = (G k^{1/α} μ^{1/α}, 5 / (2μ(k+1)))`.
pub fn schedule_sc(k: usize, s: &ClipSchedule) -> Result<(f64, f64)> {
    if s.mode != ClipMode::AdaptiveSc {
        return Err(Error::Domain(format!("schedule_sc called with mode {}", s.mode.name())));
    }
    if k == 0 {
        return Err(Error::Domain("schedule_sc is defined for k >= 1".into()));
    }
    let kf = k as f64;
    let tau = s.g * kf.powf(1.0 / s.alpha) * s.mu.powf(1.0 / s.alpha);
    let eta = 5.0 / (2.0 * s.mu * (kf + 1.0));
    Ok((tau, eta))
}

/// `η = (R₀^α L^{2−2α} / (G² T^α))^{1/(3α−2)}`, `τ = G (ηL)^{−1/α}`.
pub fn schedule_nc(s: &ClipSchedule) -> Result<(f64, f64)> {
    if s.mode != ClipMode::ConstantNc {
        return Err(Error::Domain(format!("schedule_nc called with mode {}", s.mode.name())));
    }
    if s.t == 0 {
        return Err(Error::Domain("schedule_nc needs T >= 1".into()));
    }
    let a = s.alpha;
    let eta = (s.r0.powf(a) * s.l.powf(2.0 - 2.0 * a) / (s.g * s.g * (s.t as f64).powf(a))).powf(1.0 / (3.0 * a - 2.0));
    let tau = s.g * (eta * s.l).powf(-1.0 / a);
    Ok((tau, eta))
}

/// Streaming `θ̄ = Σ_k k θ_{k−1} / Σ_k k` over iterates pushed in order.
#[derive(Clone, Debug, Default)]
pub struct WeightedAverage {
    mean: Vec<f64>,
    weight: f64,
    count: usize,
}

impl WeightedAverage {
    pub fn new() -> Self {
        WeightedAverage::default()
    }

    /// Add the next iterate; the `k`-th call carries weight `k`.
    pub fn push(&mut self, theta: &[f64]) {
        self.count += 1;
        let w = self.count as f64;
        if self.mean.is_empty() {
            self.mean = vec![0.0; theta.len()];
        }
        self.weight += w;
        let r = w / self.weight;
        for (m, t) in self.mean.iter_mut().zip(theta) {
            *m += r * (t - *m);
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn value(&self) -> Option<&[f64]> {
        (self.count > 0).then_some(self.mean.as_slice())
    }
}

pub fn weighted_average<T: AsRef<[f64]>>(iterates: &[T]) -> Result<Vec<f64>> {
    if iterates.is_empty() {
        return Err(Error::InvalidInput("weighted_average needs at least one iterate".into()));
    }
    let mut avg = WeightedAverage::new();
    iterates.iter().for_each(|t| avg.push(t.as_ref()));
    Ok(avg.mean)
}

/// `h = 1 / (L₀ + L₁ L² β ε)`.
pub fn l0l1_step_size(l0: f64, l1: f64, l: f64, beta: f64, eps: f64) -> Result<f64> {
    let denom = l0 + l1 * l * l * beta * eps;
    if !(denom > 0.0) || !denom.is_finite() {
        return Err(Error::Domain(format!("step-size denominator L0 + L1 L^2 beta eps = {denom} must be positive")));
    }
    Ok(1.0 / denom)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Vec<Matrix> {
        vec![Matrix::from_vec(1, 1, vec![v]).unwrap()]
    }

    #[test]
    fn plain_gradient_step() {
        let mut p = vec![Matrix::from_rows(&[[1.0, 2.0]]).unwrap()];
        let g = vec![Matrix::from_rows(&[[0.5, -1.0]]).unwrap()];
        let mut s = MomentumState::new(&p, 0.0);
        sgd_momentum_step(&mut p, &g, &mut s, 1.0).unwrap();
        assert_eq!(p[0].as_slice(), &[0.5, 3.0]);
    }

    #[test]
    fn momentum_hand_recursion() {
        let mut p = scalar(0.0);
        let mut s = MomentumState::new(&p, 0.9);
        for _ in 0..2 {
            sgd_momentum_step(&mut p, &scalar(1.0), &mut s, 1.0).unwrap();
        }
        assert!((p[0][(0, 0)] + 2.9).abs() < 1e-15);
    }

    #[test]
    fn zero_gradients_reach_fixed_point() {
        let mut p = scalar(0.0);
        let mut s = MomentumState::new(&p, 0.5);
        sgd_momentum_step(&mut p, &scalar(1.0), &mut s, 1.0).unwrap();
        let mut prev = p[0][(0, 0)];
        for _ in 0..2000 {
            sgd_momentum_step(&mut p, &scalar(0.0), &mut s, 1.0).unwrap();
            prev = p[0][(0, 0)];
        }
        assert!((prev + 2.0).abs() < 1e-12);
    }

    #[test]
    fn divergent_update_leaves_state() {
        let mut p = scalar(1.0);
        let mut s = MomentumState::new(&p, 0.9);
        let err = sgd_momentum_step(&mut p, &scalar(f64::MAX), &mut s, 10.0);
        assert!(matches!(err, Err(Error::Divergence { .. })));
        assert_eq!(p, scalar(1.0));
    }

    #[test]
    fn clipping_examples() {
        let mut g = vec![Matrix::from_rows(&[[3.0, 4.0]]).unwrap()];
        clip_global(&mut g, 2.5).unwrap();
        assert_eq!(g[0].as_slice(), &[1.5, 2.0]);
        let mut g = vec![Matrix::from_rows(&[[0.3, 0.4]]).unwrap()];
        let before = g.clone();
        assert_eq!(clip_global(&mut g, 0.5).unwrap(), 1.0);
        assert_eq!(g, before);
        assert!(clip_global(&mut g, 0.0).is_err());
    }

    fn sc(g: f64, mu: f64, alpha: f64) -> ClipSchedule {
        ClipSchedule {
            mode: ClipMode::AdaptiveSc,
            g,
            mu,
            alpha,
            l: 1.0,
            r0: 1.0,
            t: 1,
        }
    }

    #[test]
    fn schedule_sc_examples() {
        assert_eq!(schedule_sc(4, &sc(1.0, 1.0, 2.0)).unwrap(), (2.0, 0.5));
        assert_eq!(schedule_sc(1, &sc(1.0, 1.0, 2.0)).unwrap().1, 1.25);
        let (tau, _) = schedule_sc(8, &sc(2.0, 4.0, 1.5)).unwrap();
        // 32^{2/3} = 2^{10/3}
        let oracle = 2.0 * 2f64.powf(10.0 / 3.0);
        assert!((tau - oracle).abs() <= 1e-13 * oracle);
        assert!(matches!(schedule_sc(0, &sc(1.0, 1.0, 2.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn schedule_nc_examples() {
        let s = ClipSchedule {
            mode: ClipMode::ConstantNc,
            g: 1.0,
            mu: 1.0,
            alpha: 2.0,
            l: 1.0,
            r0: 1.0,
            t: 16,
        };
        let (tau, eta) = schedule_nc(&s).unwrap();
        assert!((eta - 0.25).abs() < 1e-15 && (tau - 2.0).abs() < 1e-14);
        assert!(matches!(schedule_nc(&ClipSchedule { t: 0, ..s }), Err(Error::Domain(_))));

        // η^{(3α−2)/α} G^{2/α} is invariant in G.
        let a = 1.7;
        let base = ClipSchedule { alpha: a, ..s };
        let inv = |g: f64| {
            let (_, eta) = schedule_nc(&ClipSchedule { g, ..base }).unwrap();
            eta.powf((3.0 * a - 2.0) / a) * g.powf(2.0 / a)
        };
        assert!((inv(1.0) - inv(2.0)).abs() < 1e-12 * inv(1.0));

        let mut prev = (f64::INFINITY, 0.0);
        for t in [10, 100, 1000, 10_000] {
            let (tau, eta) = schedule_nc(&ClipSchedule { t, ..s }).unwrap();
            assert!(eta < prev.0 && tau > prev.1);
            prev = (eta, tau);
        }
    }

    #[test]
    fn weighted_average_examples() {
        assert_eq!(weighted_average(&[[0.0], [1.0]]).unwrap(), vec![2.0 / 3.0]);
        let w = weighted_average(&[[1.0], [2.0], [3.0]]).unwrap();
        assert!((w[0] - 7.0 / 3.0).abs() < 1e-15);
        assert_eq!(weighted_average(&[[4.0], [4.0], [4.0]]).unwrap(), vec![4.0]);
        assert!(weighted_average::<[f64; 1]>(&[]).is_err());
    }

    #[test]
    fn step_size_examples() {
        assert_eq!(l0l1_step_size(2.0, 0.0, 1.0, 1.0, 0.1).unwrap(), 0.5);
        assert!((l0l1_step_size(0.0, 1.0, 1.0, 1.0, 0.1).unwrap() - 10.0).abs() < 1e-12);
        let h1 = l0l1_step_size(0.0, 1.0, 1.0, 1.0, 0.01).unwrap();
        assert!((h1 / l0l1_step_size(0.0, 1.0, 1.0, 1.0, 0.1).unwrap() - 10.0).abs() < 1e-12);
        assert!(l0l1_step_size(0.0, 0.0, 1.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn momentum_with_schedules_rejected() {
        assert!(sc(1.0, 1.0, 2.0).check_momentum(0.9).is_err());
        assert!(sc(1.0, 1.0, 2.0).check_momentum(0.0).is_ok());
        assert!(sc(1.0, 1.0, 2.5).validate().is_err());
    }
}
