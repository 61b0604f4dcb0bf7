#![allow(dead_code)]

use advreg::critic::CriticParams;
use advreg::linalg::Matrix;
use advreg::model::{init_params, Activation, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;

/// `‖a − n‖ / (‖a‖ + ‖n‖)`, or 0 when both vanish.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn numeric_grad(x: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + FD_STEP;
            let up = f(x);
            x[i] = orig - FD_STEP;
            let down = f(x);
            x[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[derive(Debug)]
pub struct GradCheck {
    pub config: String,
    pub family: &'static str,
    pub layer: usize,
    pub rel_err: f64,
}

fn model_layer_checks(
    p: &ModelParams,
    analytic: &[Matrix],
    config: &str,
    family: &'static str,
    loss: impl Fn(&ModelParams) -> f64,
) -> Vec<GradCheck> {
    let mut q = p.clone();
    (0..p.layers.len())
        .map(|l| {
            let mut w = p.layers[l].as_slice().to_vec();
            let numeric = numeric_grad(&mut w, |v| {
                q.layers[l].as_mut_slice().copy_from_slice(v);
                loss(&q)
            });
            q.layers[l] = p.layers[l].clone();
            GradCheck {
                config: config.to_string(),
                family,
                layer: l,
                rel_err: rel_err(analytic[l].as_slice(), &numeric),
            }
        })
        .collect()
}

fn critic_layer_checks(
    c: &CriticParams,
    analytic: &[Matrix],
    config: &str,
    family: &'static str,
    loss: impl Fn(&CriticParams) -> f64,
) -> Vec<GradCheck> {
    let mut q = c.clone();
    (0..c.layers.len())
        .map(|l| {
            let mut w = c.layers[l].as_slice().to_vec();
            let numeric = numeric_grad(&mut w, |v| {
                q.layers[l].as_mut_slice().copy_from_slice(v);
                loss(&q)
            });
            q.layers[l] = c.layers[l].clone();
            GradCheck {
                config: config.to_string(),
                family,
                layer: l,
                rel_err: rel_err(analytic[l].as_slice(), &numeric),
            }
        })
        .collect()
}

/// Supervised, adversarial, critic-parameter, penalty-parameter and critic
/// input gradients against central differences on 20 seeded small networks.
pub fn gradient_check_suite() -> Vec<GradCheck> {
    let mut out = Vec::new();
    for s in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + s);
        let (d_x, h, d_y) = (3 + s as usize % 4, 4 + s as usize % 5, 2 + s as usize % 3);
        let depth = if s % 3 == 2 { 3 } else { 2 };
        let activation = if s % 2 == 0 { Activation::Relu } else { Activation::Elu };
        let b = 5;
        let name = format!("seed{s}-{}-d{depth}-{d_x}x{h}x{d_y}", activation.name());
        let p = init_params(d_x, h, d_y, depth, activation, s).unwrap();
        let x = random_matrix(b, d_x, &mut rng);
        let y = random_matrix(b, d_y, &mut rng);
        let critic = if s % 5 == 4 {
            let w: Vec<f64> = (0..d_y).map(|_| rng.random_range(-1.0..1.0)).collect();
            CriticParams::linear(&w, 10.0).unwrap()
        } else {
            CriticParams::init(d_y, 3 + s as usize % 4, 10.0, s).unwrap()
        };

        let (_, sup) = p.supervised_loss_and_grads(&x, &y).unwrap();
        out.extend(model_layer_checks(&p, &sup.layers, &name, "supervised", |q| q.mse(&x, &y).unwrap()));

        let adv = p.adversarial_grads(&critic, &x).unwrap();
        out.extend(model_layer_checks(&p, &adv.layers, &name, "adversarial", |q| {
            -critic.score(&q.predict(&x).unwrap()).unwrap().mean()
        }));

        let z = random_matrix(b, d_y, &mut rng);
        let score_grads = critic.mean_score_grads(&z).unwrap();
        out.extend(critic_layer_checks(&critic, &score_grads, &name, "critic", |c| c.score(&z).unwrap().mean()));

        let z_hat = random_matrix(b, d_y, &mut rng);
        let (_, pen_grads) = critic.penalty_at(&z_hat);
        out.extend(critic_layer_checks(&critic, &pen_grads, &name, "gradient-penalty", |c| c.penalty_at(&z_hat).0));

        let analytic = critic.input_grad(&z).unwrap();
        let mut flat = z.as_slice().to_vec();
        let numeric = numeric_grad(&mut flat, |v| {
            let zz = Matrix::from_vec(b, d_y, v.to_vec()).unwrap();
            critic.score(&zz).unwrap().as_slice().iter().sum()
        });
        out.push(GradCheck {
            config: name.clone(),
            family: "critic-input",
            layer: 0,
            rel_err: rel_err(analytic.as_slice(), &numeric),
        });
    }
    out
}

pub fn mnist_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}
