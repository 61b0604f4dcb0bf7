//! Datasets: IDX (MNIST / FashionMNIST) and CIFAR-10 binary readers, label
//! randomization, seeded mini-batching, and synthetic scalar objectives with
//! known smoothness constants.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::seed;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_RECORD: usize = 3073;
pub const NUM_CLASSES: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// `m × d_x`, entries in `[0, 1]`.
    pub inputs: Matrix,
    /// `m × d_y`, one-hot rows.
    pub targets: Matrix,
}

impl Dataset {
    pub fn new(name: impl Into<String>, inputs: Matrix, targets: Matrix) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(Error::InvalidInput("dataset must hold at least one sample".into()));
        }
        if inputs.rows() != targets.rows() {
            return Err(Error::Consistency(format!(
                "{} inputs but {} targets",
                inputs.rows(),
                targets.rows()
            )));
        }
        inputs.ensure_finite()?;
        for i in 0..targets.rows() {
            let row = targets.row(i);
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || ones + zeros != row.len() {
                return Err(Error::InvalidInput(format!("target row {i} is not one-hot")));
            }
        }
        Ok(Dataset {
            name: name.into(),
            inputs,
            targets,
        })
    }

    /// Build from class indices.
    pub fn from_labels(name: impl Into<String>, inputs: Matrix, labels: &[u8], d_y: usize) -> Result<Self> {
        let targets = one_hot(labels, d_y)?;
        Dataset::new(name, inputs, targets)
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    pub fn d_x(&self) -> usize {
        self.inputs.cols()
    }

    pub fn d_y(&self) -> usize {
        self.targets.cols()
    }

    /// Class index of every sample.
    pub fn labels(&self) -> Vec<u8> {
        (0..self.len())
            .map(|i| {
                self.targets
                    .row(i)
                    .iter()
                    .position(|&v| v == 1.0)
                    .expect("one-hot invariant") as u8
            })
            .collect()
    }

    /// The first `m` samples (the whole set when `m >= len`).
    pub fn subsample(&self, m: usize) -> Dataset {
        if m >= self.len() {
            return self.clone();
        }
        let idx: Vec<usize> = (0..m).collect();
        Dataset {
            name: self.name.clone(),
            inputs: self.inputs.select_rows(&idx),
            targets: self.targets.select_rows(&idx),
        }
    }
}

fn one_hot(labels: &[u8], d_y: usize) -> Result<Matrix> {
    let mut t = Matrix::zeros(labels.len(), d_y);
    for (i, &l) in labels.iter().enumerate() {
        if l as usize >= d_y {
            return Err(Error::InvalidInput(format!("label {l} at {i} outside 0..{d_y}")));
        }
        t[(i, l as usize)] = 1.0;
    }
    Ok(t)
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Format {
                path: path.to_path_buf(),
                reason: format!("corrupt gzip stream: {e}"),
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            reason: "truncated header".into(),
        })
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Read an IDX image/label pair. Gzipped files are detected by magic bytes.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let img = read_maybe_gz(ip)?;
    let lab = read_maybe_gz(lp)?;

    let magic = be_u32(&img, 0, ip)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(format_err(ip, format!("image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let magic = be_u32(&lab, 0, lp)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(format_err(lp, format!("label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let n = be_u32(&img, 4, ip)? as usize;
    let rows = be_u32(&img, 8, ip)? as usize;
    let cols = be_u32(&img, 12, ip)? as usize;
    let n_labels = be_u32(&lab, 4, lp)? as usize;
    if n != n_labels {
        return Err(Error::Consistency(format!(
            "{} holds {n} images but {} holds {n_labels} labels",
            ip.display(),
            lp.display()
        )));
    }
    let d_x = rows * cols;
    let pixels = &img[16..];
    if pixels.len() != n * d_x {
        return Err(format_err(ip, format!("expected {} pixel bytes, found {}", n * d_x, pixels.len())));
    }
    let labels = &lab[8..];
    if labels.len() != n {
        return Err(format_err(lp, format!("expected {n} label bytes, found {}", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
        return Err(format_err(lp, format!("label value {bad} outside 0..{NUM_CLASSES}")));
    }
    let inputs = Matrix::from_parts_unchecked(n, d_x, pixels.iter().map(|&p| f64::from(p) / 255.0).collect());
    let name = ip
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::from_labels(name, inputs, labels, NUM_CLASSES)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Locate the standard IDX file pair (plain or `.gz`) inside `dir`.
pub fn idx_paths(dir: impl AsRef<Path>, split: Split) -> Result<(PathBuf, PathBuf)> {
    let dir = dir.as_ref();
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let find = |stem: String| -> Result<PathBuf> {
        [stem.clone(), format!("{stem}.gz")]
            .iter()
            .map(|f| dir.join(f))
            .find(|p| p.is_file())
            .ok_or_else(|| Error::io(dir.join(&stem), std::io::ErrorKind::NotFound.into()))
    };
    Ok((
        find(format!("{prefix}-images-idx3-ubyte"))?,
        find(format!("{prefix}-labels-idx1-ubyte"))?,
    ))
}

/// Load the train or test split of an MNIST-layout directory.
pub fn load_idx_dir(dir: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let (i, l) = idx_paths(&dir, split)?;
    let mut ds = load_idx(i, l)?;
    ds.name = dir
        .as_ref()
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or(ds.name);
    Ok(ds)
}

/// Write `ds` as an IDX pair. Inputs are quantized to bytes with
/// `round(255·x)`, so data that came from an IDX file round-trips exactly.
/// Square inputs are written as `s × s` images, anything else as `1 × d_x`.
/// Paths ending in `.gz` are gzip-compressed.
pub fn write_idx(ds: &Dataset, images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
    let d_x = ds.d_x();
    let side = (d_x as f64).sqrt().round() as usize;
    let (rows, cols) = if side * side == d_x { (side, side) } else { (1, d_x) };
    let mut img = Vec::with_capacity(16 + ds.len() * d_x);
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    for &v in ds.inputs.as_slice() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidInput(format!("input value {v} outside [0, 1]")));
        }
        img.push((v * 255.0).round() as u8);
    }
    let mut lab = Vec::with_capacity(8 + ds.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    lab.extend(ds.labels());
    write_maybe_gz(images_path.as_ref(), &img)?;
    write_maybe_gz(labels_path.as_ref(), &lab)
}

fn write_maybe_gz(path: &Path, bytes: &[u8]) -> Result<()> {
    let out = if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(bytes).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?
    } else {
        bytes.to_vec()
    };
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Concatenate CIFAR-10 binary batches: each record is one label byte
/// followed by 3072 pixel bytes (R, G, B planes), flattened in file order.
pub fn load_cifar10<P: AsRef<Path>>(batch_paths: &[P]) -> Result<Dataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for p in batch_paths {
        let p = p.as_ref();
        let bytes = read_maybe_gz(p)?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
            return Err(format_err(
                p,
                format!("length {} is not a positive multiple of {CIFAR_RECORD}", bytes.len()),
            ));
        }
        for rec in bytes.chunks_exact(CIFAR_RECORD) {
            if rec[0] as usize >= NUM_CLASSES {
                return Err(format_err(p, format!("label value {} outside 0..{NUM_CLASSES}", rec[0])));
            }
            labels.push(rec[0]);
            pixels.extend(rec[1..].iter().map(|&b| f64::from(b) / 255.0));
        }
    }
    if labels.is_empty() {
        return Err(Error::InvalidInput("no CIFAR-10 batch files given".into()));
    }
    let inputs = Matrix::from_parts_unchecked(labels.len(), CIFAR_RECORD - 1, pixels);
    Dataset::from_labels("cifar10", inputs, &labels, NUM_CLASSES)
}

/// Replace every target with a uniformly drawn one-hot row.
pub fn randomize_labels(ds: &Dataset, seed: u64) -> Dataset {
    let mut rng = seed::rng(seed, "labels");
    let d_y = ds.d_y();
    let labels: Vec<u8> = (0..ds.len()).map(|_| rng.random_range(0..d_y) as u8).collect();
    Dataset {
        name: format!("{}-random-labels", ds.name),
        inputs: ds.inputs.clone(),
        targets: one_hot(&labels, d_y).expect("labels drawn within range"),
    }
}

/// Seeded mini-batch iterator. Every epoch is an independent permutation
/// drawn from the `(seed, epoch)` substream; the last batch may be short.
#[derive(Debug)]
pub struct BatchStream<'a> {
    dataset: &'a Dataset,
    batch_size: usize,
    seed: u64,
    epoch: usize,
    perm: Vec<usize>,
    pos: usize,
}

impl<'a> BatchStream<'a> {
    pub fn new(dataset: &'a Dataset, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(BatchStream {
            dataset,
            batch_size,
            seed,
            epoch: 0,
            perm: epoch_permutation(dataset.len(), seed, 0),
            pos: 0,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.dataset.len().div_ceil(self.batch_size)
    }

    /// Zero-based epoch of the next batch.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Indices of the next batch, rolling into the next epoch when the
    /// current one is exhausted.
    pub fn next_indices(&mut self) -> &[usize] {
        if self.pos >= self.perm.len() {
            self.epoch += 1;
            self.perm = epoch_permutation(self.dataset.len(), self.seed, self.epoch);
            self.pos = 0;
        }
        let start = self.pos;
        self.pos = (start + self.batch_size).min(self.perm.len());
        &self.perm[start..self.pos]
    }

    pub fn next_batch(&mut self) -> (Matrix, Matrix) {
        let ds = self.dataset;
        let idx = self.next_indices();
        (ds.inputs.select_rows(idx), ds.targets.select_rows(idx))
    }
}

/// The sample order of one epoch.
pub fn epoch_permutation(m: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..m).collect();
    perm.shuffle(&mut seed::rng_indexed(seed, seed::DATA, epoch as u64));
    perm
}

/// Smoothness constants of a synthetic objective: `‖∇²l‖ ≤ L₀ + L₁‖∇l‖`,
/// strong convexity `μ` (0 when absent) and the infimum `l*`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Constants {
    pub l0: f64,
    pub l1: f64,
    pub mu: f64,
    pub l_star: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Synthetic {
    /// `a(θ − θ*)²` in one dimension.
    Quadratic { a: f64, theta_star: f64 },
    /// `e^θ` in one dimension.
    ScalarExponential,
    /// `½ Σᵢ μ(i+1) θᵢ²`.
    StronglyConvexQuadratic { mu: f64, dim: usize },
    /// `¼ Σᵢ (θᵢ² − 1)²`.
    SmoothNonconvexQuartic { dim: usize },
}

impl Synthetic {
    /// Parse `name` or `name(key=value, ...)`.
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        let (name, args) = match spec.find('(') {
            Some(open) => {
                let close = spec
                    .rfind(')')
                    .filter(|&c| c == spec.len() - 1 && c > open)
                    .ok_or_else(|| Error::Config(format!("malformed synthetic spec `{spec}`")))?;
                (&spec[..open], &spec[open + 1..close])
            }
            None => (spec, ""),
        };
        let mut kv = Vec::new();
        for part in args.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value in `{part}`")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("synthetic parameter `{}` is not a number", k.trim())))?;
            kv.push((k.trim().to_string(), v));
        }
        let mut take = |key: &str, default: f64| -> f64 {
            match kv.iter().position(|(k, _)| k == key) {
                Some(i) => kv.remove(i).1,
                None => default,
            }
        };
        let dim_of = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("dim must be a positive integer, got {v}")))
            }
        };
        let parsed = match name.trim() {
            "quadratic" => {
                let a = take("a", 1.0);
                let theta_star = take("theta_star", 0.0);
                if !(a > 0.0) {
                    return Err(Error::Config(format!("quadratic needs a > 0, got {a}")));
                }
                Synthetic::Quadratic { a, theta_star }
            }
            "scalar-exponential" => Synthetic::ScalarExponential,
            "strongly-convex-quadratic" => {
                let mu = take("mu", 1.0);
                let dim = dim_of(take("dim", 5.0))?;
                if !(mu > 0.0) {
                    return Err(Error::Config(format!("strongly-convex-quadratic needs mu > 0, got {mu}")));
                }
                Synthetic::StronglyConvexQuadratic { mu, dim }
            }
            "smooth-nonconvex-quartic" => Synthetic::SmoothNonconvexQuartic {
                dim: dim_of(take("dim", 2.0))?,
            },
            other => return Err(Error::Config(format!("unknown synthetic objective `{other}`"))),
        };
        if let Some((k, _)) = kv.first() {
            return Err(Error::Config(format!("unknown parameter `{k}` for `{}`", name.trim())));
        }
        Ok(parsed)
    }

    pub fn dim(&self) -> usize {
        match self {
            Synthetic::Quadratic { .. } | Synthetic::ScalarExponential => 1,
            Synthetic::StronglyConvexQuadratic { dim, .. } | Synthetic::SmoothNonconvexQuartic { dim } => *dim,
        }
    }

    pub fn constants(&self) -> Constants {
        match *self {
            Synthetic::Quadratic { a, .. } => Constants {
                l0: 2.0 * a,
                l1: 0.0,
                mu: 2.0 * a,
                l_star: 0.0,
            },
            Synthetic::ScalarExponential => Constants {
                l0: 0.0,
                l1: 1.0,
                mu: 0.0,
                l_star: 0.0,
            },
            Synthetic::StronglyConvexQuadratic { mu, dim } => Constants {
                l0: mu * dim as f64,
                l1: 0.0,
                mu,
                l_star: 0.0,
            },
            // |3θ² − 1| ≤ 2 + 3|θ³ − θ| coordinate-wise, and the Hessian is diagonal.
            Synthetic::SmoothNonconvexQuartic { .. } => Constants {
                l0: 2.0,
                l1: 3.0,
                mu: 0.0,
                l_star: 0.0,
            },
        }
    }

    /// A global minimizer, when one is attained.
    pub fn minimizer(&self) -> Option<Vec<f64>> {
        match *self {
            Synthetic::Quadratic { theta_star, .. } => Some(vec![theta_star]),
            Synthetic::ScalarExponential => None,
            Synthetic::StronglyConvexQuadratic { dim, .. } => Some(vec![0.0; dim]),
            Synthetic::SmoothNonconvexQuartic { dim } => Some(vec![1.0; dim]),
        }
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        match *self {
            Synthetic::Quadratic { a, theta_star } => a * (theta[0] - theta_star).powi(2),
            Synthetic::ScalarExponential => theta[0].exp(),
            Synthetic::StronglyConvexQuadratic { mu, .. } => theta
                .iter()
                .enumerate()
                .map(|(i, t)| 0.5 * mu * (i + 1) as f64 * t * t)
                .sum(),
            Synthetic::SmoothNonconvexQuartic { .. } => theta.iter().map(|t| 0.25 * (t * t - 1.0).powi(2)).sum(),
        }
    }

    pub fn grad(&self, theta: &[f64]) -> Vec<f64> {
        match *self {
            Synthetic::Quadratic { a, theta_star } => vec![2.0 * a * (theta[0] - theta_star)],
            Synthetic::ScalarExponential => vec![theta[0].exp()],
            Synthetic::StronglyConvexQuadratic { mu, .. } => theta
                .iter()
                .enumerate()
                .map(|(i, t)| mu * (i + 1) as f64 * t)
                .collect(),
            Synthetic::SmoothNonconvexQuartic { .. } => theta.iter().map(|t| t * (t * t - 1.0)).collect(),
        }
    }

    /// Spectral norm of the Hessian at `theta`.
    pub fn hessian_norm(&self, theta: &[f64]) -> f64 {
        match *self {
            Synthetic::Quadratic { a, .. } => 2.0 * a,
            Synthetic::ScalarExponential => theta[0].exp(),
            Synthetic::StronglyConvexQuadratic { mu, dim } => mu * dim as f64,
            Synthetic::SmoothNonconvexQuartic { .. } => {
                theta.iter().map(|t| (3.0 * t * t - 1.0).abs()).fold(0.0, f64::max)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dataset() -> Dataset {
        let inputs = Matrix::from_vec(3, 4, (0..12).map(|v| f64::from(v * 20) / 255.0).collect()).unwrap();
        Dataset::from_labels("tiny", inputs, &[2, 0, 9], 10).unwrap()
    }

    #[test]
    fn batch_sizes_cover_epoch() {
        let inputs = Matrix::zeros(10, 1);
        let ds = Dataset::from_labels("z", inputs, &[0; 10], 10).unwrap();
        let mut s = BatchStream::new(&ds, 4, 1).unwrap();
        let sizes: Vec<usize> = (0..3).map(|_| s.next_indices().len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        assert_eq!(s.epoch(), 0);
        s.next_indices();
        assert_eq!(s.epoch(), 1);
        assert_eq!(s.batches_per_epoch(), 3);
        assert_eq!(60000usize.div_ceil(64), 938);
    }

    #[test]
    fn epochs_are_permutations_and_reproducible() {
        for epoch in 0..5 {
            let mut p = epoch_permutation(37, 9, epoch);
            assert_eq!(p, epoch_permutation(37, 9, epoch));
            p.sort_unstable();
            assert_eq!(p, (0..37).collect::<Vec<_>>());
        }
        assert_ne!(epoch_permutation(37, 9, 0), epoch_permutation(37, 9, 1));
    }

    #[test]
    fn one_hot_validation() {
        let inputs = Matrix::zeros(1, 2);
        assert!(Dataset::from_labels("bad", inputs.clone(), &[10], 10).is_err());
        let t = Matrix::from_rows(&[[0.5, 0.5]]).unwrap();
        assert!(Dataset::new("bad", inputs, t).is_err());
    }

    #[test]
    fn idx_round_trip_plain_and_gz() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset();
        for ext in ["", ".gz"] {
            let ip = dir.path().join(format!("i{ext}"));
            let lp = dir.path().join(format!("l{ext}"));
            write_idx(&ds, &ip, &lp).unwrap();
            let back = load_idx(&ip, &lp).unwrap();
            assert_eq!(back.inputs, ds.inputs);
            assert_eq!(back.targets, ds.targets);
        }
    }

    #[test]
    fn idx_zero_image_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lab");
        let mut img = vec![0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2];
        img.extend([0u8; 4]);
        fs::write(&ip, &img).unwrap();
        fs::write(&lp, [0, 0, 8, 1, 0, 0, 0, 1, 5]).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!((ds.len(), ds.d_x(), ds.d_y()), (1, 4, 10));
        assert!(ds.inputs.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(ds.labels(), vec![5]);

        fs::write(&lp, [0, 0, 8, 1, 0, 0, 0, 2, 5, 5]).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Consistency(_))));
        // Swapped files: the magic check names the images path.
        match load_idx(&lp, &ip) {
            Err(Error::Format { path, .. }) => assert_eq!(path, lp),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn cifar_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("batch.bin");
        let mut rec = vec![3u8];
        rec.extend((0..3072).map(|i| (i % 256) as u8));
        fs::write(&p, &rec).unwrap();
        let ds = load_cifar10(&[&p]).unwrap();
        assert_eq!((ds.len(), ds.d_x()), (1, 3072));
        assert_eq!(ds.labels(), vec![3]);
        assert_eq!(ds.inputs[(0, 1025)], 1.0 / 255.0);
        fs::write(&p, &rec[..3000]).unwrap();
        assert!(matches!(load_cifar10(&[&p]), Err(Error::Format { .. })));
    }

    #[test]
    fn randomized_labels_are_deterministic_and_keep_inputs() {
        let ds = tiny_dataset();
        let a = randomize_labels(&ds, 4);
        assert_eq!(a, randomize_labels(&ds, 4));
        assert_eq!(a.inputs, ds.inputs);
        assert_eq!((a.len(), a.d_x(), a.d_y()), (ds.len(), ds.d_x(), ds.d_y()));
    }

    #[test]
    fn randomized_label_histogram_is_uniform() {
        let m = 10_000;
        let ds = Dataset::from_labels("z", Matrix::zeros(m, 1), &vec![0; m], 10).unwrap();
        let r = randomize_labels(&ds, 11);
        let mut counts = [0usize; 10];
        r.labels().iter().for_each(|&l| counts[l as usize] += 1);
        let expected = m as f64 / 10.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99th percentile of chi-square with 9 degrees of freedom.
        assert!(chi2 < 21.666, "chi2 = {chi2}");
    }

    #[test]
    fn synthetic_closed_forms() {
        let q = Synthetic::parse("quadratic(a=1, theta_star=0)").unwrap();
        assert_eq!(q.grad(&[2.0]), vec![4.0]);
        let c = q.constants();
        assert_eq!((c.l0, c.l1), (2.0, 0.0));

        let e = Synthetic::parse("scalar-exponential").unwrap();
        for t in [-3.0, 0.0, 1.5] {
            assert_eq!(e.hessian_norm(&[t]), e.grad(&[t])[0].abs());
        }
        assert_eq!((e.constants().l0, e.constants().l1), (0.0, 1.0));

        let s = Synthetic::parse("strongly-convex-quadratic(mu=1, dim=5)").unwrap();
        let star = s.minimizer().unwrap();
        assert_eq!(s.value(&star), s.constants().l_star);
        assert_eq!(s.dim(), 5);

        assert!(matches!(Synthetic::parse("rosenbrock"), Err(Error::Config(_))));
        assert!(matches!(Synthetic::parse("quadratic(b=2)"), Err(Error::Config(_))));
    }

    #[test]
    fn quartic_satisfies_declared_smoothness() {
        let q = Synthetic::SmoothNonconvexQuartic { dim: 1 };
        let c = q.constants();
        for i in -4000..=4000 {
            let t = [i as f64 / 1000.0];
            let bound = c.l0 + c.l1 * q.grad(&t)[0].abs();
            assert!(q.hessian_norm(&t) <= bound + 1e-12, "theta = {}", t[0]);
        }
    }
}
