//! Wasserstein critic `g(ψ; z)` with a two-sided gradient penalty.
//!
//! Two architectures are supported: the default bias-free MLP
//! `d_y → h_c → 1` with ReLU, and a single linear map `z ↦ w·z` that is handy
//! for closed-form checks.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::optimize::{sgd_momentum_step, MomentumState};
use crate::seed;

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_LAMBDA_GP: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct CriticParams {
    /// `[W₁ (h_c × d_y), w₂ (1 × h_c)]`, or `[w (1 × d_y)]` for a linear critic.
    pub layers: Vec<Matrix>,
    pub lambda_gp: f64,
    pub state: MomentumState,
}

/// Loss components reported by one critic update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticStep {
    /// `mean g(real) − mean g(fake)` before the update.
    pub gap: f64,
    pub penalty: f64,
}

struct Hidden {
    pre: Matrix,
}

impl CriticParams {
    fn assemble(layers: Vec<Matrix>, lambda_gp: f64) -> Result<Self> {
        if !(lambda_gp >= 0.0) || !lambda_gp.is_finite() {
            return Err(Error::Config(format!("lambda_gp must be finite and >= 0, got {lambda_gp}")));
        }
        let out = layers.last().expect("at least one layer");
        if out.rows() != 1 {
            return Err(Error::dim("critic output", 1, out.rows()));
        }
        for m in &layers {
            m.ensure_finite()?;
        }
        let state = MomentumState::new(&layers, 0.0);
        Ok(CriticParams {
            layers,
            lambda_gp,
            state,
        })
    }

    /// Two-layer critic with weights drawn from `Uniform(±1/√fan_in)`.
    pub fn init(d_y: usize, hidden: usize, lambda_gp: f64, seed: u64) -> Result<Self> {
        if d_y == 0 || hidden == 0 {
            return Err(Error::Config(format!("critic dimensions must be positive (d_y={d_y}, h_c={hidden})")));
        }
        let mut rng = seed::rng(seed, seed::CRITIC);
        let mut uniform = |rows: usize, cols: usize| {
            let r = 1.0 / (cols as f64).sqrt();
            Matrix::from_parts_unchecked(rows, cols, (0..rows * cols).map(|_| rng.random_range(-r..=r)).collect())
        };
        let w1 = uniform(hidden, d_y);
        let w2 = uniform(1, hidden);
        CriticParams::assemble(vec![w1, w2], lambda_gp)
    }

    /// Two-layer critic with all weights zero.
    pub fn zeros(d_y: usize, hidden: usize, lambda_gp: f64) -> Self {
        CriticParams::assemble(vec![Matrix::zeros(hidden, d_y), Matrix::zeros(1, hidden)], lambda_gp)
            .expect("zero critic is valid")
    }

    pub fn linear(w: &[f64], lambda_gp: f64) -> Result<Self> {
        CriticParams::assemble(vec![Matrix::from_vec(1, w.len(), w.to_vec())?], lambda_gp)
    }

    pub fn two_layer(w1: Matrix, w2: Matrix, lambda_gp: f64) -> Result<Self> {
        if w2.cols() != w1.rows() {
            return Err(Error::dim("critic layer chain", w1.rows(), w2.cols()));
        }
        CriticParams::assemble(vec![w1, w2], lambda_gp)
    }

    pub fn is_linear(&self) -> bool {
        self.layers.len() == 1
    }

    pub fn d_y(&self) -> usize {
        self.layers[0].cols()
    }

    fn check(&self, z: &Matrix) -> Result<()> {
        if z.cols() != self.d_y() {
            return Err(Error::dim("critic input", format!("{} columns", self.d_y()), z.cols()));
        }
        Ok(())
    }

    fn hidden(&self, z: &Matrix) -> Hidden {
        Hidden {
            pre: z.matmul_nt(&self.layers[0]).expect("checked shape"),
        }
    }

    /// Score every row of `z`, returning `b × 1`.
    pub fn score(&self, z: &Matrix) -> Result<Matrix> {
        self.check(z)?;
        if self.is_linear() {
            return z.matmul_nt(&self.layers[0]);
        }
        let h = self.hidden(z).pre.map(|v| if v > 0.0 { v } else { 0.0 });
        h.matmul_nt(&self.layers[1])
    }

    /// `(M ⊙ w₂)`: per-row hidden gradient of the score.
    fn masked_out(&self, pre: &Matrix) -> Matrix {
        let w2 = self.layers[1].as_slice();
        let mut a = pre.clone();
        for i in 0..a.rows() {
            for (v, &w) in a.row_mut(i).iter_mut().zip(w2) {
                *v = if *v > 0.0 { w } else { 0.0 };
            }
        }
        a
    }

    /// Input gradients `∇_z g(ψ; zᵢ)`, one row per sample.
    pub fn input_grad(&self, z: &Matrix) -> Result<Matrix> {
        self.check(z)?;
        if self.is_linear() {
            let w = self.layers[0].row(0);
            let mut g = Matrix::zeros(z.rows(), z.cols());
            for i in 0..z.rows() {
                g.row_mut(i).copy_from_slice(w);
            }
            return Ok(g);
        }
        let a = self.masked_out(&self.hidden(z).pre);
        a.matmul(&self.layers[0])
    }

    /// Parameter gradients of `mean_i g(ψ; zᵢ)`.
    pub fn mean_score_grads(&self, z: &Matrix) -> Result<Vec<Matrix>> {
        self.check(z)?;
        let inv_b = 1.0 / z.rows() as f64;
        if self.is_linear() {
            let mut g = Matrix::zeros(1, z.cols());
            for i in 0..z.rows() {
                crate::linalg::axpy(inv_b, z.row(i), g.as_mut_slice());
            }
            return Ok(vec![g]);
        }
        let pre = self.hidden(z).pre;
        let mut a = self.masked_out(&pre);
        a.scale(inv_b);
        let d_w1 = a.matmul_tn(z)?;
        let mut d_w2 = Matrix::zeros(1, pre.cols());
        for i in 0..pre.rows() {
            for (d, &p) in d_w2.as_mut_slice().iter_mut().zip(pre.row(i)) {
                if p > 0.0 {
                    *d += inv_b * p;
                }
            }
        }
        Ok(vec![d_w1, d_w2])
    }

    /// Penalty `λ·mean_i(‖∇_ẑ g(ψ; ẑᵢ)‖ − 1)²` at interpolates
    /// `ẑᵢ = tᵢ·realᵢ + (1 − tᵢ)·fakeᵢ`, `tᵢ ~ U(0, 1)`, with its gradient in ψ.
    pub fn gradient_penalty<R: Rng>(&self, real: &Matrix, fake: &Matrix, rng: &mut R) -> Result<(f64, Vec<Matrix>)> {
        if real.shape() != fake.shape() {
            return Err(Error::dim(
                "gradient penalty",
                format!("fake {:?}", real.shape()),
                format!("{:?}", fake.shape()),
            ));
        }
        self.check(real)?;
        let mut z_hat = real.clone();
        for i in 0..real.rows() {
            let t: f64 = rng.random();
            for (zh, &f) in z_hat.row_mut(i).iter_mut().zip(fake.row(i)) {
                *zh = t * *zh + (1.0 - t) * f;
            }
        }
        Ok(self.penalty_at(&z_hat))
    }

    /// Penalty and its parameter gradient at fixed interpolates.
    pub fn penalty_at(&self, z_hat: &Matrix) -> (f64, Vec<Matrix>) {
        let b = z_hat.rows() as f64;
        let lambda = self.lambda_gp;
        if self.is_linear() {
            let w = self.layers[0].as_slice();
            let n = crate::linalg::norm2(w);
            let penalty = lambda * (n - 1.0).powi(2);
            let c = if n > 0.0 { 2.0 * lambda * (n - 1.0) / n } else { 0.0 };
            let g = Matrix::from_parts_unchecked(1, w.len(), w.iter().map(|v| c * v).collect());
            return (penalty, vec![g]);
        }
        let w1 = &self.layers[0];
        let pre = self.hidden(z_hat).pre;
        let mut a = self.masked_out(&pre);
        let mut units = a.matmul(w1).expect("shapes agree");
        let mut penalty = 0.0;
        let mut coef = vec![0.0; z_hat.rows()];
        for i in 0..units.rows() {
            let n = crate::linalg::norm2(units.row(i));
            penalty += (n - 1.0).powi(2);
            if n > 0.0 {
                coef[i] = 2.0 * lambda * (n - 1.0) / b;
                units.row_mut(i).iter_mut().for_each(|v| *v /= n);
            }
        }
        penalty *= lambda / b;
        // dW₁ = Σ cᵢ aᵢ uᵢᵀ and dw₂ⱼ = Σ cᵢ mᵢⱼ (W₁ uᵢ)ⱼ.
        let proj = units.matmul_nt(w1).expect("shapes agree");
        let mut d_w2 = Matrix::zeros(1, w1.rows());
        for i in 0..a.rows() {
            let c = coef[i];
            for ((d, &p), &z) in d_w2.as_mut_slice().iter_mut().zip(proj.row(i)).zip(pre.row(i)) {
                if z > 0.0 {
                    *d += c * p;
                }
            }
            a.row_mut(i).iter_mut().for_each(|v| *v *= c);
        }
        let d_w1 = a.matmul_tn(&units).expect("shapes agree");
        (penalty, vec![d_w1, d_w2])
    }

    /// One SGD-with-momentum step on `mean g(fake) − mean g(real) + penalty`.
    /// Parameters are left untouched when the loss or update is non-finite.
    pub fn step<R: Rng>(&mut self, real: &Matrix, fake: &Matrix, lr: f64, momentum: f64, rng: &mut R) -> Result<CriticStep> {
        let real_score = self.score(real)?.mean();
        let fake_score = self.score(fake)?.mean();
        let mut grads = self.mean_score_grads(fake)?;
        let g_real = self.mean_score_grads(real)?;
        for (g, r) in grads.iter_mut().zip(&g_real) {
            g.add_scaled(-1.0, r);
        }
        let penalty = if self.lambda_gp > 0.0 {
            let (p, pg) = self.gradient_penalty(real, fake, rng)?;
            for (g, q) in grads.iter_mut().zip(&pg) {
                g.add_scaled(1.0, q);
            }
            p
        } else {
            0.0
        };
        let gap = real_score - fake_score;
        if !(gap.is_finite() && penalty.is_finite()) {
            return Err(Error::Divergence {
                message: format!("critic loss non-finite (gap {gap}, penalty {penalty})"),
                partial: None,
            });
        }
        self.state.coefficient = momentum;
        sgd_momentum_step(&mut self.layers, &grads, &mut self.state, lr)?;
        Ok(CriticStep { gap, penalty })
    }
}
