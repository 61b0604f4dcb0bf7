//! Bias-free feed-forward generators `f(θ; x)`.
//!
//! The two-layer case is `V [U x]₊` with `U: h × d_x` and `V: d_y × h`.
//! Deeper nets stack more weight matrices with ReLU or ELU in between; the
//! output layer is always linear.

use rand::Rng;

use crate::critic::CriticParams;
use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, Matrix};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Elu,
}

impl Activation {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "elu" => Ok(Activation::Elu),
            other => Err(Error::Config(format!("unknown activation `{other}` (relu|elu)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Elu => "elu",
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
        }
    }

    /// Multiply an upstream gradient by the derivative at `z` (0 at the ReLU kink).
    #[inline]
    fn backprop(self, z: f64, upstream: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    upstream
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if z > 0.0 {
                    upstream
                } else {
                    upstream * z.exp()
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// Weight matrices, input side first; layer `l` maps width `cols` to `rows`.
    pub layers: Vec<Matrix>,
    u0: Matrix,
    pub activation: Activation,
}

/// Layer widths `d_x → h → … → d_y`. The first hidden layer has width `h`;
/// further hidden layers shrink geometrically from `h` towards `d_y`.
pub fn layer_widths(d_x: usize, h: usize, d_y: usize, depth: usize) -> Vec<usize> {
    let hidden = depth - 1;
    let mut w = vec![d_x];
    for k in 0..hidden {
        let t = k as f64 / hidden as f64;
        let width = (h as f64 * (d_y as f64 / h as f64).powf(t)).round() as usize;
        w.push(width.max(1));
    }
    w.push(d_y);
    w
}

pub fn init_params(d_x: usize, h: usize, d_y: usize, depth: usize, activation: Activation, seed: u64) -> Result<ModelParams> {
    if d_x == 0 || h == 0 || d_y == 0 {
        return Err(Error::Config(format!(
            "network dimensions must be positive (d_x={d_x}, h={h}, d_y={d_y})"
        )));
    }
    if depth < 2 {
        return Err(Error::Config(format!("depth must be at least 2, got {depth}")));
    }
    let widths = layer_widths(d_x, h, d_y, depth);
    let mut rng = seed::rng(seed, seed::INIT);
    let layers: Vec<Matrix> = widths
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let r = 1.0 / (fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out).map(|_| rng.random_range(-r..=r)).collect();
            Matrix::from_parts_unchecked(fan_out, fan_in, data)
        })
        .collect();
    let u0 = layers[0].clone();
    Ok(ModelParams {
        layers,
        u0,
        activation,
    })
}

/// Activations kept by [`ModelParams::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct Cache {
    input: Matrix,
    /// Pre-activations of every hidden layer.
    pre: Vec<Matrix>,
    /// Post-activations of every hidden layer.
    post: Vec<Matrix>,
}

/// One gradient matrix per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<Matrix>,
}

impl GradientSet {
    pub fn zeros_like(params: &[Matrix]) -> Self {
        GradientSet {
            layers: params.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect(),
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.layers.iter().map(Matrix::sum_squares).sum()
    }

    /// Joint Euclidean norm over all layers.
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dot(&self, other: &GradientSet) -> f64 {
        self.layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| crate::linalg::dot(a.as_slice(), b.as_slice()))
            .sum()
    }

    /// `self += c · other`.
    pub fn add_scaled(&mut self, c: f64, other: &GradientSet) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add_scaled(c, b);
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.layers.iter_mut().for_each(|m| m.scale(c));
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Matrix::is_finite)
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|m| m.as_slice().iter().copied()).collect()
    }
}

/// `sup + weight · adv`. When the two directions are positively correlated the
/// combined norm can only grow; that implication is checked in debug builds.
pub fn combine_grads(sup: &GradientSet, adv: &GradientSet, weight: f64) -> GradientSet {
    let mut out = sup.clone();
    out.add_scaled(weight, adv);
    debug_assert!(
        weight * sup.dot(adv) < 0.0 || out.norm_sq() >= sup.norm_sq() * (1.0 - 1e-12),
        "positively correlated gradients shrank the combined norm"
    );
    out
}

impl ModelParams {
    /// Assemble from explicit weights. The first layer doubles as `U⁰`.
    pub fn from_layers(layers: Vec<Matrix>, activation: Activation) -> Result<Self> {
        let u0 = layers
            .first()
            .ok_or_else(|| Error::InvalidInput("a network needs at least one layer".into()))?
            .clone();
        ModelParams::with_init(layers, u0, activation)
    }

    /// Assemble from explicit weights and a first-layer initialization snapshot.
    pub fn with_init(layers: Vec<Matrix>, u0: Matrix, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("a network needs at least one layer".into()));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[1].cols() != pair[0].rows() {
                return Err(Error::dim(
                    "ModelParams layer chain",
                    format!("layer {} with {} columns", l + 1, pair[0].rows()),
                    pair[1].cols(),
                ));
            }
        }
        if u0.shape() != layers[0].shape() {
            return Err(Error::dim(
                "ModelParams U0",
                format!("{:?}", layers[0].shape()),
                format!("{:?}", u0.shape()),
            ));
        }
        for m in layers.iter().chain(std::iter::once(&u0)) {
            m.ensure_finite()?;
        }
        Ok(ModelParams {
            layers,
            u0,
            activation,
        })
    }

    /// Frozen copy of the first layer at initialization.
    pub fn u0(&self) -> &Matrix {
        &self.u0
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn d_x(&self) -> usize {
        self.layers[0].cols()
    }

    pub fn d_y(&self) -> usize {
        self.layers[self.layers.len() - 1].rows()
    }

    /// First hidden width.
    pub fn h(&self) -> usize {
        self.layers[0].rows()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Matrix::len).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|m| m.as_slice().iter().copied()).collect()
    }

    /// Overwrite the weights from a flat vector in [`Self::flatten`] order.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::dim("ModelParams::set_flat", self.num_params(), flat.len()));
        }
        let mut at = 0;
        for m in &mut self.layers {
            let n = m.len();
            m.as_mut_slice().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.d_x() {
            return Err(Error::dim("forward", format!("{} input columns", self.d_x()), x.cols()));
        }
        Ok(())
    }

    /// Batch forward pass, `x: b × d_x → b × d_y`.
    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, Cache)> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(last);
        let mut post: Vec<Matrix> = Vec::with_capacity(last);
        for w in &self.layers[..last] {
            let input = post.last().unwrap_or(x);
            let z = input.matmul_nt(w)?;
            post.push(z.map(|v| self.activation.apply(v)));
            pre.push(z);
        }
        let out = post.last().unwrap_or(x).matmul_nt(&self.layers[last])?;
        Ok((
            out,
            Cache {
                input: x.clone(),
                pre,
                post,
            },
        ))
    }

    /// Forward pass without keeping intermediate activations.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut cur: Option<Matrix> = None;
        for w in &self.layers[..last] {
            let z = cur.as_ref().unwrap_or(x).matmul_nt(w)?;
            cur = Some(z.map(|v| self.activation.apply(v)));
        }
        cur.as_ref().unwrap_or(x).matmul_nt(&self.layers[last])
    }

    /// Parameter gradients of `Σᵢ ⟨d_out_i, f(xᵢ)⟩`, i.e. backpropagation of
    /// an upstream gradient `d_out: b × d_y`.
    pub fn backward(&self, cache: &Cache, d_out: &Matrix) -> GradientSet {
        let last = self.layers.len() - 1;
        let mut grads = vec![Matrix::zeros(0, 0); self.layers.len()];
        let mut delta = d_out.clone();
        for l in (0..=last).rev() {
            let input = if l == 0 { &cache.input } else { &cache.post[l - 1] };
            grads[l] = delta.matmul_tn(input).expect("cached shapes agree");
            if l > 0 {
                let mut up = delta.matmul(&self.layers[l]).expect("cached shapes agree");
                let z = &cache.pre[l - 1];
                for (u, &zv) in up.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    *u = self.activation.backprop(zv, *u);
                }
                delta = up;
            }
        }
        GradientSet { layers: grads }
    }

    /// Mean squared error `(1/b) Σ‖f(xᵢ) − yᵢ‖²` without computing gradients.
    pub fn mse(&self, x: &Matrix, y: &Matrix) -> Result<f64> {
        let out = self.predict(x)?;
        check_targets(&out, y)?;
        Ok(out.sub(y)?.sum_squares() / x.rows() as f64)
    }

    /// MSE over a large sample set, evaluated in row chunks to bound memory.
    pub fn mse_chunked(&self, x: &Matrix, y: &Matrix, chunk: usize) -> Result<f64> {
        let n = x.rows();
        let mut total = 0.0;
        let mut start = 0;
        while start < n {
            let end = (start + chunk.max(1)).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let out = self.predict(&x.select_rows(&idx))?;
            total += out.sub(&y.select_rows(&idx))?.sum_squares();
            start = end;
        }
        Ok(total / n as f64)
    }

    pub fn supervised_loss_and_grads(&self, x: &Matrix, y: &Matrix) -> Result<(f64, GradientSet)> {
        let (out, cache) = self.forward(x)?;
        let (loss, d_out) = mse_and_grad(&out, y)?;
        Ok((loss, self.backward(&cache, &d_out)))
    }

    /// Gradient of `−(1/b) Σ g(ψ; f(θ; xᵢ))` with respect to θ, the critic frozen.
    pub fn adversarial_grads(&self, critic: &CriticParams, x: &Matrix) -> Result<GradientSet> {
        let (out, cache) = self.forward(x)?;
        let d_out = adversarial_upstream(critic, &out)?;
        Ok(self.backward(&cache, &d_out))
    }

    /// Spectral and Frobenius norms of every layer, input side first.
    pub fn layer_norms(&self) -> Result<Vec<(f64, f64)>> {
        self.layers
            .iter()
            .map(|m| {
                let s = crate::linalg::spectral_norm(m, crate::linalg::SPECTRAL_TOL, crate::linalg::SPECTRAL_MAX_ITER)?;
                Ok((s.value, frobenius_norm(m)?))
            })
            .collect()
    }
}

fn check_targets(out: &Matrix, y: &Matrix) -> Result<()> {
    if out.shape() != y.shape() {
        return Err(Error::dim(
            "supervised loss",
            format!("targets {:?}", out.shape()),
            format!("{:?}", y.shape()),
        ));
    }
    Ok(())
}

/// Loss and upstream gradient `2(f − y)/b` of the batch MSE.
pub fn mse_and_grad(out: &Matrix, y: &Matrix) -> Result<(f64, Matrix)> {
    check_targets(out, y)?;
    let b = out.rows() as f64;
    let mut diff = out.sub(y)?;
    let loss = diff.sum_squares() / b;
    diff.scale(2.0 / b);
    Ok((loss, diff))
}

/// Upstream gradient `−(1/b) ∇_z g(ψ; zᵢ)` of the adversarial term.
pub fn adversarial_upstream(critic: &CriticParams, out: &Matrix) -> Result<Matrix> {
    let mut d = critic.input_grad(out)?;
    d.scale(-1.0 / out.rows() as f64);
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critic::CriticParams;

    fn random_batch(b: usize, d: usize, seed: u64) -> Matrix {
        let mut r = crate::seed::rng(seed, "batch");
        Matrix::from_vec(b, d, (0..b * d).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn tiny() -> ModelParams {
        ModelParams::from_layers(
            vec![
                Matrix::from_rows(&[[1.0], [-1.0]]).unwrap(),
                Matrix::from_rows(&[[1.0, 1.0]]).unwrap(),
            ],
            Activation::Relu,
        )
        .unwrap()
    }

    #[test]
    fn init_shapes_and_ranges() {
        let p = init_params(784, 32, 10, 2, Activation::Relu, 0).unwrap();
        assert_eq!(p.layers[0].shape(), (32, 784));
        assert_eq!(p.layers[1].shape(), (10, 32));
        assert_eq!(p.u0(), &p.layers[0]);
        assert_eq!(p, init_params(784, 32, 10, 2, Activation::Relu, 0).unwrap());
        let r = 1.0 / 784f64.sqrt();
        assert!(p.layers[0].as_slice().iter().all(|v| v.abs() <= r));
        assert!(init_params(784, 32, 10, 1, Activation::Relu, 0).is_err());
        assert!(init_params(0, 32, 10, 2, Activation::Relu, 0).is_err());
    }

    #[test]
    fn deep_widths_interpolate() {
        assert_eq!(layer_widths(784, 32, 10, 2), vec![784, 32, 10]);
        let w = layer_widths(784, 1000, 10, 6);
        assert_eq!(w.len(), 7);
        assert_eq!((w[0], w[1], w[6]), (784, 1000, 10));
        assert!(w[1..6].windows(2).all(|p| p[0] > p[1]));
    }

    #[test]
    fn forward_hand_example_and_zero_input() {
        let p = tiny();
        let (out, _) = p.forward(&Matrix::from_rows(&[[1.0]]).unwrap()).unwrap();
        assert_eq!(out.as_slice(), &[1.0]);
        let q = init_params(5, 4, 3, 2, Activation::Relu, 1).unwrap();
        let out = q.predict(&Matrix::zeros(2, 5)).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
        assert!(q.forward(&Matrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn one_dimensional_gradients() {
        let p = ModelParams::from_layers(
            vec![Matrix::from_rows(&[[1.0]]).unwrap(), Matrix::from_rows(&[[1.0]]).unwrap()],
            Activation::Relu,
        )
        .unwrap();
        let x = Matrix::from_rows(&[[1.0]]).unwrap();
        let (loss, g) = p.supervised_loss_and_grads(&x, &Matrix::from_rows(&[[0.0]]).unwrap()).unwrap();
        assert_eq!(loss, 1.0);
        assert_eq!(g.layers[0].as_slice(), &[2.0]);
        assert_eq!(g.layers[1].as_slice(), &[2.0]);
        let (loss, g) = p.supervised_loss_and_grads(&x, &Matrix::from_rows(&[[1.0]]).unwrap()).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn adversarial_linear_and_zero_critic() {
        let p = ModelParams::from_layers(
            vec![Matrix::from_rows(&[[1.0]]).unwrap(), Matrix::from_rows(&[[1.0]]).unwrap()],
            Activation::Relu,
        )
        .unwrap();
        let x = Matrix::from_rows(&[[1.0]]).unwrap();
        let lin = CriticParams::linear(&[1.0], 10.0).unwrap();
        let g = p.adversarial_grads(&lin, &x).unwrap();
        assert_eq!(g.layers[1].as_slice(), &[-1.0]);
        let zero = CriticParams::zeros(1, 8, 10.0);
        assert_eq!(p.adversarial_grads(&zero, &x).unwrap().norm(), 0.0);
    }

    #[test]
    fn positive_homogeneity() {
        let p = init_params(6, 9, 3, 2, Activation::Relu, 3).unwrap();
        let x = random_batch(4, 6, 5);
        let a = p.predict(&x.scaled(2.5)).unwrap();
        let b = p.predict(&x).unwrap().scaled(2.5);
        for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((u - v).abs() <= 1e-10 * v.abs().max(1e-300));
        }
    }

    #[test]
    fn combine_grows_norm_when_correlated() {
        let a = GradientSet {
            layers: vec![Matrix::from_rows(&[[1.0, 2.0]]).unwrap()],
        };
        let b = GradientSet {
            layers: vec![Matrix::from_rows(&[[0.5, 0.1]]).unwrap()],
        };
        assert!(combine_grads(&a, &b, 1.0).norm() >= a.norm());
    }

    #[test]
    fn set_flat_round_trip() {
        let mut p = init_params(3, 4, 2, 3, Activation::Elu, 9).unwrap();
        let flat = p.flatten();
        let mut q = p.clone();
        q.set_flat(&vec![0.0; flat.len()]).unwrap();
        q.set_flat(&flat).unwrap();
        assert_eq!(p, q);
        assert!(p.set_flat(&[1.0]).is_err());
    }
}
