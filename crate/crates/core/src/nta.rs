//! Neuron topology analysis: embed the weight vectors of individual neurons
//! in the plane with exact t-SNE, cluster them with affinity propagation,
//! and compare the picture before and after training or perturbation.

use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{pca_project, Matrix};
use crate::model::ModelParams;
use crate::seed;

/// Dimension the hidden-layer path reduces to before t-SNE.
pub const HIDDEN_PCA_DIM: usize = 10;

/// Energy fractions of the low, moderate and extreme perturbation levels.
pub const PERTURBATION_LEVELS: [(&str, f64); 3] = [("low", 0.01), ("moderate", 0.10), ("extreme", 0.50)];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerTag {
    /// Rows of the first layer, one `d_x`-vector per hidden neuron.
    Hidden,
    /// Columns of the output layer, one `d_y`-vector per last hidden neuron.
    Top,
}

impl LayerTag {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hidden" => Ok(LayerTag::Hidden),
            "top" => Ok(LayerTag::Top),
            other => Err(Error::Config(format!("unknown layer '{other}' (expected hidden|top)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerTag::Hidden => "hidden",
            LayerTag::Top => "top",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SubsetSpec {
    /// Neurons `start..end`.
    Range { start: usize, end: usize },
    /// `count` distinct neurons drawn without replacement, in ascending order.
    Random { count: usize, seed: u64 },
    All,
}

impl SubsetSpec {
    /// `all`, `a-b` / `a..b`, or `random:count:seed`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad subset '{s}' (expected all, START-END or random:COUNT:SEED)"));
        if s == "all" {
            return Ok(SubsetSpec::All);
        }
        if let Some(rest) = s.strip_prefix("random:") {
            let (count, seed) = rest.split_once(':').ok_or_else(bad)?;
            return Ok(SubsetSpec::Random {
                count: count.parse().map_err(|_| bad())?,
                seed: seed.parse().map_err(|_| bad())?,
            });
        }
        let (a, b) = s.split_once("..").or_else(|| s.split_once('-')).ok_or_else(bad)?;
        Ok(SubsetSpec::Range {
            start: a.trim().parse().map_err(|_| bad())?,
            end: b.trim().parse().map_err(|_| bad())?,
        })
    }

    fn indices(&self, width: usize) -> Result<Vec<usize>> {
        match *self {
            SubsetSpec::All => Ok((0..width).collect()),
            SubsetSpec::Range { start, end } => {
                if start >= end || end > width {
                    return Err(Error::Bounds(format!("neuron range {start}..{end} outside layer of width {width}")));
                }
                Ok((start..end).collect())
            }
            SubsetSpec::Random { count, seed: s } => {
                if count == 0 || count > width {
                    return Err(Error::Bounds(format!("cannot draw {count} neurons from a layer of width {width}")));
                }
                let mut rng = seed::rng(s, seed::NTA);
                let mut idx = sample(&mut rng, width, count).into_vec();
                idx.sort_unstable();
                Ok(idx)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeuronCloud {
    pub layer: LayerTag,
    /// Original neuron index of each row of `points`.
    pub neuron_ids: Vec<usize>,
    pub points: Matrix,
    pub subset: SubsetSpec,
}

pub fn select_neurons(params: &ModelParams, layer: LayerTag, subset: SubsetSpec) -> Result<NeuronCloud> {
    let (source, width) = match layer {
        LayerTag::Hidden => (params.layers[0].clone(), params.layers[0].rows()),
        LayerTag::Top => {
            let v = params.layers.last().expect("at least two layers");
            (v.transpose(), v.cols())
        }
    };
    let neuron_ids = subset.indices(width)?;
    Ok(NeuronCloud {
        layer,
        points: source.select_rows(&neuron_ids),
        neuron_ids,
        subset,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TsneSettings {
    pub perplexity: f64,
    pub iterations: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    /// Step size; `None` uses `max(n / exaggeration / 4, 50)`.
    pub learning_rate: Option<f64>,
    pub seed: u64,
}

impl Default for TsneSettings {
    fn default() -> Self {
        TsneSettings {
            perplexity: 30.0,
            iterations: 1000,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            learning_rate: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub points: Matrix,
    /// `(iteration, KL(P‖Q))` every 50 iterations and at the end.
    pub kl_trace: Vec<(usize, f64)>,
    pub final_kl: f64,
}

const KL_EVERY: usize = 50;

fn squared_distances(x: &Matrix) -> Vec<f64> {
    let n = x.rows();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Symmetric joint affinities `P` whose conditional rows have the requested
/// perplexity (bisection on the Gaussian precision).
fn joint_affinities(d: &[f64], n: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let row = &d[i * n..(i + 1) * n];
        let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
        // Shifting by the nearest distance keeps exp() away from underflow.
        let dmin = (0..n).filter(|&j| j != i).map(|j| row[j]).fold(f64::INFINITY, f64::min);
        let mut cond = vec![0.0; n];
        for _ in 0..200 {
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in 0..n {
                cond[j] = if j == i { 0.0 } else { (-(row[j] - dmin) * beta).exp() };
                sum += cond[j];
                weighted += (row[j] - dmin) * cond[j];
            }
            let entropy = sum.ln() + beta * weighted / sum;
            cond.iter_mut().for_each(|c| *c /= sum);
            let diff = entropy - target;
            if diff.abs() < 1e-10 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        p[i * n..(i + 1) * n].copy_from_slice(&cond);
    }
    let mut joint = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            joint[i * n + j] = ((p[i * n + j] + p[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
    }
    joint
}

fn kl_divergence(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let mut z = 0.0;
    let mut num = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d = (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2);
                num[i * n + j] = 1.0 / (1.0 + d);
                z += num[i * n + j];
            }
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let q = (num[i * n + j] / z).max(1e-12);
                kl += p[i * n + j] * (p[i * n + j] / q).ln();
            }
        }
    }
    kl
}

/// Exact t-SNE of the rows of `x` into the plane.
///
/// Gradient descent with momentum 0.5 then 0.8, per-coordinate adaptive
/// gains, and early exaggeration of `P` for the first
/// `exaggeration_iters` iterations.
pub fn tsne(x: &Matrix, settings: &TsneSettings) -> Result<Embedding> {
    let n = x.rows();
    if !(settings.perplexity > 0.0) {
        return Err(Error::Parameter(format!("perplexity must be positive, got {}", settings.perplexity)));
    }
    if (n as f64) < 3.0 * settings.perplexity {
        return Err(Error::Parameter(format!(
            "perplexity {} is infeasible for {n} points; use at most {}",
            settings.perplexity,
            n / 3
        )));
    }
    x.ensure_finite()?;
    let p = joint_affinities(&squared_distances(x), n, settings.perplexity);

    let mut rng = seed::rng(settings.seed, seed::NTA);
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            [1e-2 * a, 1e-2 * b]
        })
        .collect();
    let lr = settings
        .learning_rate
        .unwrap_or_else(|| (n as f64 / settings.exaggeration.max(1.0) / 4.0).max(50.0));
    let mut update = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0; n * n];
    let mut kl_trace = Vec::new();

    for it in 0..settings.iterations {
        let exaggerate = if it < settings.exaggeration_iters { settings.exaggeration } else { 1.0 };
        let momentum = if it < settings.exaggeration_iters { 0.5 } else { 0.8 };
        let mut z = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let d = (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2);
                let v = 1.0 / (1.0 + d);
                num[i * n + j] = v;
                num[j * n + i] = v;
                z += 2.0 * v;
            }
        }
        for i in 0..n {
            let mut grad = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = num[i * n + j];
                let coeff = 4.0 * (exaggerate * p[i * n + j] - w / z) * w;
                grad[0] += coeff * (y[i][0] - y[j][0]);
                grad[1] += coeff * (y[i][1] - y[j][1]);
            }
            for c in 0..2 {
                let same_sign = (grad[c] > 0.0) == (update[i][c] > 0.0);
                gains[i][c] = if same_sign { gains[i][c] * 0.8 } else { gains[i][c] + 0.2 };
                gains[i][c] = gains[i][c].max(0.01);
                update[i][c] = momentum * update[i][c] - lr * gains[i][c] * grad[c];
            }
        }
        let mut mean = [0.0; 2];
        for i in 0..n {
            for c in 0..2 {
                y[i][c] += update[i][c];
                mean[c] += y[i][c] / n as f64;
            }
        }
        for yi in &mut y {
            yi[0] -= mean[0];
            yi[1] -= mean[1];
        }
        if (it + 1) % KL_EVERY == 0 {
            kl_trace.push((it + 1, kl_divergence(&p, &y)));
        }
    }
    let final_kl = kl_divergence(&p, &y);
    if kl_trace.last().map(|t| t.0) != Some(settings.iterations) {
        kl_trace.push((settings.iterations, final_kl));
    }
    let flat: Vec<f64> = y.iter().flat_map(|v| v.iter().copied()).collect();
    Ok(Embedding {
        points: Matrix::from_vec(n, 2, flat).map_err(|_| Error::Estimation("t-SNE produced non-finite coordinates".into()))?,
        kl_trace,
        final_kl,
    })
}

/// Embed a neuron cloud: hidden-layer clouds wider than
/// [`HIDDEN_PCA_DIM`] are first projected with PCA, top-layer clouds go
/// to t-SNE directly.
pub fn embed(cloud: &NeuronCloud, settings: &TsneSettings) -> Result<Embedding> {
    match cloud.layer {
        LayerTag::Hidden if cloud.points.cols() > HIDDEN_PCA_DIM && cloud.points.rows() >= HIDDEN_PCA_DIM => {
            let pca = pca_project(&cloud.points, HIDDEN_PCA_DIM)?;
            tsne(&pca.projected, settings)
        }
        _ => tsne(&cloud.points, settings),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ApSettings {
    pub damping: f64,
    /// Diagonal similarity; `None` uses the median off-diagonal similarity.
    pub preference: Option<f64>,
    pub max_iter: usize,
    /// Iterations the exemplar set must stay unchanged to declare convergence.
    pub stable_iters: usize,
}

impl Default for ApSettings {
    fn default() -> Self {
        ApSettings {
            damping: 0.5,
            preference: None,
            max_iter: 200,
            stable_iters: 15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Clustering {
    /// Cluster id of each point, contiguous from 0 in order of exemplar index.
    pub labels: Vec<usize>,
    /// Point index of each cluster's exemplar.
    pub exemplars: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub preference: f64,
}

impl Clustering {
    pub fn n_clusters(&self) -> usize {
        self.exemplars.len()
    }

    pub fn is_exemplar(&self, i: usize) -> bool {
        self.exemplars.contains(&i)
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// `Σᵢ s(i, c(i))` plus the preference of every exemplar.
pub fn net_similarity(points: &Matrix, preference: f64, exemplars: &[usize]) -> f64 {
    let d = squared_distances(points);
    let n = points.rows();
    (0..n)
        .map(|i| {
            if exemplars.contains(&i) {
                preference
            } else {
                exemplars.iter().map(|&k| -d[i * n + k]).fold(f64::NEG_INFINITY, f64::max)
            }
        })
        .sum()
}

/// Affinity propagation on similarity `−‖xᵢ − xₖ‖²`.
///
/// Ties between identical similarities are broken by a tiny deterministic
/// jitter, as in the reference implementation. After message passing each
/// cluster's exemplar is moved to the member with the largest summed
/// similarity and points are reassigned, until the assignment is stable.
pub fn affinity_propagation(points: &Matrix, settings: &ApSettings) -> Result<Clustering> {
    let n = points.rows();
    if n == 0 {
        return Err(Error::InvalidInput("affinity propagation needs at least one point".into()));
    }
    if !(0.5..1.0).contains(&settings.damping) {
        return Err(Error::Parameter(format!("damping must lie in [0.5, 1), got {}", settings.damping)));
    }
    points.ensure_finite()?;
    let d = squared_distances(points);
    let preference = match settings.preference {
        Some(p) => p,
        None if n == 1 => 0.0,
        None => {
            let mut off: Vec<f64> = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| -d[i * n + j]).collect();
            median(&mut off)
        }
    };
    if n == 1 {
        return Ok(Clustering {
            labels: vec![0],
            exemplars: vec![0],
            iterations: 0,
            converged: true,
            preference,
        });
    }

    let mut s: Vec<f64> = d.iter().map(|v| -v).collect();
    for i in 0..n {
        s[i * n + i] = preference;
    }
    let mut rng = seed::rng(0, seed::NTA);
    for v in s.iter_mut() {
        let jitter: f64 = rng.sample(StandardNormal);
        *v += (f64::EPSILON * *v + f64::MIN_POSITIVE * 100.0) * jitter;
    }

    let lam = settings.damping;
    let mut r = vec![0.0; n * n];
    let mut a = vec![0.0; n * n];
    let mut last: Vec<usize> = Vec::new();
    let mut stable = 0;
    let mut iterations = 0;
    let mut converged = false;
    for it in 0..settings.max_iter {
        iterations = it + 1;
        for i in 0..n {
            let (mut best, mut second, mut arg) = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0);
            for k in 0..n {
                let v = a[i * n + k] + s[i * n + k];
                if v > best {
                    second = best;
                    best = v;
                    arg = k;
                } else if v > second {
                    second = v;
                }
            }
            for k in 0..n {
                let competitor = if k == arg { second } else { best };
                let new = s[i * n + k] - competitor;
                r[i * n + k] = lam * r[i * n + k] + (1.0 - lam) * new;
            }
        }
        for k in 0..n {
            let pos_sum: f64 = (0..n).filter(|&i| i != k).map(|i| r[i * n + k].max(0.0)).sum();
            for i in 0..n {
                let new = if i == k {
                    pos_sum
                } else {
                    (r[k * n + k] + pos_sum - r[i * n + k].max(0.0)).min(0.0)
                };
                a[i * n + k] = lam * a[i * n + k] + (1.0 - lam) * new;
            }
        }
        let current: Vec<usize> = (0..n).filter(|&k| a[k * n + k] + r[k * n + k] > 0.0).collect();
        if !current.is_empty() && current == last {
            stable += 1;
            if stable >= settings.stable_iters {
                converged = true;
                break;
            }
        } else {
            stable = 0;
        }
        last = current;
    }

    let mut exemplars = last;
    if exemplars.is_empty() {
        let best = (0..n)
            .max_by(|&x, &y| (a[x * n + x] + r[x * n + x]).total_cmp(&(a[y * n + y] + r[y * n + y])))
            .expect("n >= 1");
        exemplars = vec![best];
        converged = false;
    }
    let (labels, exemplars) = refine(&d, n, exemplars);
    Ok(Clustering {
        labels,
        exemplars,
        iterations,
        converged,
        preference,
    })
}

fn assign(d: &[f64], n: usize, exemplars: &[usize]) -> Vec<usize> {
    (0..n)
        .map(|i| {
            if let Some(c) = exemplars.iter().position(|&k| k == i) {
                return c;
            }
            let mut best = 0;
            for (c, &k) in exemplars.iter().enumerate() {
                if d[i * n + k] < d[i * n + exemplars[best]] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn refine(d: &[f64], n: usize, mut exemplars: Vec<usize>) -> (Vec<usize>, Vec<usize>) {
    exemplars.sort_unstable();
    let mut labels = assign(d, n, &exemplars);
    for _ in 0..100 {
        let mut next: Vec<usize> = (0..exemplars.len())
            .map(|c| {
                let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
                let cost = |k: usize| members.iter().map(|&i| d[i * n + k]).sum::<f64>();
                let mut best = exemplars[c];
                let mut best_cost = cost(best);
                for &k in &members {
                    let ck = cost(k);
                    if ck < best_cost {
                        best = k;
                        best_cost = ck;
                    }
                }
                best
            })
            .collect();
        next.sort_unstable();
        next.dedup();
        if next == exemplars {
            break;
        }
        exemplars = next;
        labels = assign(d, n, &exemplars);
    }
    (labels, exemplars)
}

/// Copy of `params` with every layer shifted by Gaussian noise whose mean and
/// standard deviation match that layer's entries, scaled by `√fraction`.
///
/// A layer with `n` entries has `Σw² = n(mean² + std²)`, so the expected
/// noise energy is exactly `fraction·‖W‖²_F`. The initialization snapshot is
/// left unchanged.
pub fn perturb_params(params: &ModelParams, fraction: f64, seed_value: u64) -> Result<ModelParams> {
    if !(fraction >= 0.0) || !fraction.is_finite() {
        return Err(Error::InvalidInput(format!("energy fraction must be >= 0, got {fraction}")));
    }
    let mut out = params.clone();
    if fraction == 0.0 {
        return Ok(out);
    }
    let mut rng = seed::rng(seed_value, seed::NTA);
    let scale = fraction.sqrt();
    for w in out.layers.iter_mut() {
        let n = w.len() as f64;
        let mean = w.as_slice().iter().sum::<f64>() / n;
        let var = w.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let dist = Normal::new(mean, var.sqrt()).map_err(|e| Error::InvalidInput(e.to_string()))?;
        for v in w.as_mut_slice() {
            *v += scale * dist.sample(&mut rng);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct NtaSettings {
    pub tsne: TsneSettings,
    pub ap: ApSettings,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopologyResult {
    pub cloud: NeuronCloud,
    pub embedding: Embedding,
    pub clustering: Clustering,
}

impl TopologyResult {
    /// Mean distance from each embedded point to its nearest neighbour.
    pub fn mean_nn_distance(&self) -> f64 {
        let d = squared_distances(&self.embedding.points);
        let n = self.embedding.points.rows();
        if n < 2 {
            return 0.0;
        }
        (0..n)
            .map(|i| (0..n).filter(|&j| j != i).map(|j| d[i * n + j]).fold(f64::INFINITY, f64::min).sqrt())
            .sum::<f64>()
            / n as f64
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        let mut body = String::from("neuron_id,layer,x,y,cluster,is_exemplar\n");
        for (row, &id) in self.cloud.neuron_ids.iter().enumerate() {
            body.push_str(&format!(
                "{id},{},{},{},{},{}\n",
                self.cloud.layer.name(),
                self.embedding.points[(row, 0)],
                self.embedding.points[(row, 1)],
                self.clustering.labels[row],
                u8::from(self.clustering.is_exemplar(row))
            ));
        }
        f.write_all(body.as_bytes()).and_then(|_| f.flush()).map_err(|e| Error::io(path, e))
    }
}

/// Run the pipeline on one parameter set.
pub fn analyze(params: &ModelParams, layer: LayerTag, subset: SubsetSpec, settings: &NtaSettings) -> Result<TopologyResult> {
    let cloud = select_neurons(params, layer, subset)?;
    let embedding = embed(&cloud, &settings.tsne)?;
    let clustering = affinity_propagation(&embedding.points, &settings.ap)?;
    Ok(TopologyResult {
        cloud,
        embedding,
        clustering,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TopologySummary {
    pub clusters_before: usize,
    pub clusters_after: usize,
    pub mean_nn_before: f64,
    pub mean_nn_after: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopologyReport {
    pub before: TopologyResult,
    pub after: TopologyResult,
    pub summary: TopologySummary,
}

#[derive(Serialize)]
struct Diagnostics<'a> {
    settings: &'a NtaSettings,
    layer: LayerTag,
    subset: SubsetSpec,
    summary: &'a TopologySummary,
    kl_trace_before: &'a [(usize, f64)],
    kl_trace_after: &'a [(usize, f64)],
    ap_iterations_before: usize,
    ap_iterations_after: usize,
    ap_converged_before: bool,
    ap_converged_after: bool,
}

/// Compare the topology of `before` (typically the initialization) and
/// `after`. With `out`, writes `topology_initial.csv`, `topology.csv` and
/// `diagnostics.json` there.
pub fn topology_report(
    before: &ModelParams,
    after: &ModelParams,
    layer: LayerTag,
    subset: SubsetSpec,
    settings: &NtaSettings,
    out: Option<&Path>,
) -> Result<TopologyReport> {
    let shapes = |p: &ModelParams| p.layers.iter().map(Matrix::shape).collect::<Vec<_>>();
    if shapes(before) != shapes(after) {
        return Err(Error::Consistency("before/after parameter sets have different architectures".into()));
    }
    let b = analyze(before, layer, subset, settings)?;
    let a = analyze(after, layer, subset, settings)?;
    let summary = TopologySummary {
        clusters_before: b.clustering.n_clusters(),
        clusters_after: a.clustering.n_clusters(),
        mean_nn_before: b.mean_nn_distance(),
        mean_nn_after: a.mean_nn_distance(),
    };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        b.write_csv(&dir.join("topology_initial.csv"))?;
        a.write_csv(&dir.join("topology.csv"))?;
        let diag = Diagnostics {
            settings,
            layer,
            subset,
            summary: &summary,
            kl_trace_before: &b.embedding.kl_trace,
            kl_trace_after: &a.embedding.kl_trace,
            ap_iterations_before: b.clustering.iterations,
            ap_iterations_after: a.clustering.iterations,
            ap_converged_before: b.clustering.converged,
            ap_converged_after: a.clustering.converged,
        };
        let path = dir.join("diagnostics.json");
        let text = serde_json::to_string_pretty(&diag).expect("diagnostics serialize");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(TopologyReport {
        before: b,
        after: a,
        summary,
    })
}

/// `k` isotropic Gaussian blobs of `per_blob` points each in `dim`
/// dimensions, centres `spread` apart along the coordinate axes.
pub fn gaussian_blobs(k: usize, per_blob: usize, dim: usize, spread: f64, std: f64, seed_value: u64) -> (Matrix, Vec<usize>) {
    let mut rng = seed::rng(seed_value, "blobs");
    let mut data = Vec::with_capacity(k * per_blob * dim);
    let mut truth = Vec::with_capacity(k * per_blob);
    for b in 0..k {
        for _ in 0..per_blob {
            for c in 0..dim {
                let centre = if c == b % dim { spread * (1 + b / dim) as f64 } else { 0.0 };
                let z: f64 = rng.sample(StandardNormal);
                data.push(centre + std * z);
            }
            truth.push(b);
        }
    }
    (Matrix::from_vec(k * per_blob, dim, data).expect("finite"), truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, Activation};

    #[test]
    fn subset_parsing_and_bounds() {
        assert_eq!(SubsetSpec::parse("0-2048").unwrap(), SubsetSpec::Range { start: 0, end: 2048 });
        assert_eq!(SubsetSpec::parse("random:5:3").unwrap(), SubsetSpec::Random { count: 5, seed: 3 });
        assert!(SubsetSpec::parse("x").is_err());
        let p = init_params(6, 8, 3, 2, Activation::Relu, 0).unwrap();
        assert!(matches!(
            select_neurons(&p, LayerTag::Hidden, SubsetSpec::Range { start: 4, end: 9 }),
            Err(Error::Bounds(_))
        ));
        let top = select_neurons(&p, LayerTag::Top, SubsetSpec::All).unwrap();
        assert_eq!(top.points.shape(), (8, 3));
        let hidden = select_neurons(&p, LayerTag::Hidden, SubsetSpec::Range { start: 2, end: 5 }).unwrap();
        assert_eq!(hidden.points.row(0), p.layers[0].row(2));
    }

    #[test]
    fn random_subsets_are_reproducible() {
        let p = init_params(4, 50, 2, 2, Activation::Relu, 1).unwrap();
        let spec = SubsetSpec::Random { count: 10, seed: 9 };
        let a = select_neurons(&p, LayerTag::Hidden, spec).unwrap();
        assert_eq!(a, select_neurons(&p, LayerTag::Hidden, spec).unwrap());
        assert!(a.neuron_ids.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn perplexity_boundary() {
        let (x, _) = gaussian_blobs(3, 10, 4, 10.0, 0.5, 0);
        let s = TsneSettings {
            perplexity: 10.0,
            iterations: 60,
            ..Default::default()
        };
        assert!(tsne(&x, &s).is_ok());
        let err = tsne(&x, &TsneSettings { perplexity: 10.5, ..s }).unwrap_err();
        assert!(err.to_string().contains("at most 10"));
    }

    #[test]
    fn affinity_rows_hit_target_perplexity() {
        let (x, _) = gaussian_blobs(2, 20, 3, 4.0, 1.0, 2);
        let n = x.rows();
        let p = joint_affinities(&squared_distances(&x), n, 5.0);
        let total: f64 = p.iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
        assert!((0..n).all(|i| (0..n).all(|j| (p[i * n + j] - p[j * n + i]).abs() < 1e-15)));
    }

    #[test]
    fn single_point_is_its_own_exemplar() {
        let c = affinity_propagation(&Matrix::from_rows(&[[1.0, 2.0]]).unwrap(), &ApSettings::default()).unwrap();
        assert_eq!((c.labels, c.exemplars), (vec![0], vec![0]));
    }

    #[test]
    fn damping_outside_range_is_rejected() {
        let x = Matrix::identity(3);
        let s = ApSettings {
            damping: 1.0,
            ..Default::default()
        };
        assert!(matches!(affinity_propagation(&x, &s), Err(Error::Parameter(_))));
    }

    #[test]
    fn zero_fraction_is_identity() {
        let p = init_params(5, 4, 3, 2, Activation::Relu, 0).unwrap();
        assert_eq!(perturb_params(&p, 0.0, 3).unwrap(), p);
        let q = perturb_params(&p, 0.1, 3).unwrap();
        let r = perturb_params(&p, 0.1, 4).unwrap();
        assert_ne!(q, r);
        assert_eq!(q.u0(), p.u0());
    }
}
