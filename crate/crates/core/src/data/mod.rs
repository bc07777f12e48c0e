//! Synthetic generators, MNIST IDX ingestion, OOD samples, splits and
//! normalization.

mod idx;

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub use idx::{encode_idx, parse_idx, read_idx, IdxArray, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};

pub const DATA_DIR_ENV: &str = "PSDEBNN_DATA_DIR";

/// Dataset cache directory: `$PSDEBNN_DATA_DIR`, else `./data`.
pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map_or_else(|| PathBuf::from("data"), PathBuf::from)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

/// Per-feature affine normalization fitted on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    /// Population mean and standard deviation per feature; constant
    /// features get unit scale.
    pub fn fit(features: &Tensor) -> Result<Self> {
        let (n, d) = features.dims2()?;
        if n == 0 {
            return Err(Error::Contract("cannot fit normalization on an empty set".into()));
        }
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, x) in mean.iter_mut().zip(features.row_slice(r)) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for r in 0..n {
            for ((v, x), m) in var.iter_mut().zip(features.row_slice(r)).zip(&mean) {
                *v += (x - m).powi(2);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n as f64).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Normalization { mean, std })
    }

    pub fn apply(&self, features: &Tensor) -> Result<Tensor> {
        let (_, d) = features.dims2()?;
        if d != self.mean.len() {
            return Err(Error::Shape(format!("normalization has {} features, data has {d}", self.mean.len())));
        }
        let data = features
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| (x - self.mean[i % d]) / self.std[i % d])
            .collect();
        Tensor::new(features.shape().to_vec(), data)
    }
}

/// Features with optional labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `[N, d_x]`
    pub features: Tensor,
    /// `None` for unlabelled (OOD) sets.
    pub labels: Option<Vec<usize>>,
    pub num_classes: usize,
    pub split: Option<SplitTag>,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Option<Vec<usize>>, num_classes: usize) -> Result<Self> {
        let (n, _) = features.dims2()?;
        if !features.all_finite() {
            return Err(Error::Contract("dataset features must be finite".into()));
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::Shape(format!("{n} rows but {} labels", labels.len())));
            }
            if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
                return Err(Error::Contract(format!("label {y} outside {num_classes} classes")));
            }
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
            split: None,
        })
    }

    pub fn len(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn labels(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::Contract("dataset is unlabelled".into()))
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Contract(format!("row {i} out of range")));
            }
            data.extend_from_slice(self.features.row_slice(i));
        }
        Ok(Dataset {
            features: Tensor::new(vec![indices.len(), d], data)?,
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            num_classes: self.num_classes,
            split: self.split,
        })
    }

    pub fn class_counts(&self) -> Result<Vec<usize>> {
        let mut counts = vec![0; self.num_classes];
        for &y in self.labels()? {
            counts[y] += 1;
        }
        Ok(counts)
    }

    pub fn normalized(&self, norm: &Normalization) -> Result<Dataset> {
        Ok(Dataset {
            features: norm.apply(&self.features)?,
            ..self.clone()
        })
    }

    /// Writes `label,x_1..x_d`; the label column is empty when unlabelled.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header: Vec<String> = std::iter::once("label".to_string())
            .chain((1..=self.dim()).map(|i| format!("x_{i}")))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for r in 0..self.len() {
            let label = self.labels.as_ref().map_or(String::new(), |l| l[r].to_string());
            let row: Vec<String> = std::iter::once(label)
                .chain(self.features.row_slice(r).iter().map(f64::to_string))
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R, num_classes: usize) -> Result<Dataset> {
        let mut lines = input.lines();
        let parse_err = |line: usize, detail: String| Error::Format {
            offset: line as u64,
            detail: format!("line {line}: {detail}"),
        };
        let header = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing header".into()))?
            .map_err(|e| parse_err(1, e.to_string()))?;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.first() != Some(&"label") {
            return Err(parse_err(1, "header must start with `label`".into()));
        }
        let d = cols.len() - 1;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut unlabelled = false;
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| parse_err(i + 2, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != d + 1 {
                return Err(parse_err(i + 2, format!("expected {} fields, got {}", d + 1, fields.len())));
            }
            if fields[0].is_empty() {
                unlabelled = true;
            } else {
                labels.push(fields[0].parse::<usize>().map_err(|e| parse_err(i + 2, e.to_string()))?);
            }
            for f in &fields[1..] {
                data.push(f.parse::<f64>().map_err(|e| parse_err(i + 2, e.to_string()))?);
            }
        }
        let n = data.len() / d.max(1);
        if unlabelled && !labels.is_empty() {
            return Err(parse_err(0, "mixed labelled and unlabelled rows".into()));
        }
        Dataset::new(Tensor::new(vec![n, d], data)?, (!unlabelled).then_some(labels), num_classes)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: &Path, num_classes: usize) -> Result<Dataset> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Dataset::read_csv(std::io::BufReader::new(file), num_classes)
    }
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Class 0 uniform in the ball `‖x‖ ≤ r₁`, class 1 uniform in the shell
/// `r₂ ≤ ‖x‖ ≤ r₃`; the gap between is never sampled. Rows are shuffled.
pub fn gen_annulus(n_per_class: usize, r1: f64, r2: f64, r3: f64, seed: u64, d_x: usize) -> Result<Dataset> {
    if !(0.0 < r1 && r1 < r2 && r2 < r3) || !r3.is_finite() {
        return Err(Error::Config(format!("annulus radii must satisfy 0 < r1 < r2 < r3, got {r1}, {r2}, {r3}")));
    }
    if d_x == 0 {
        return Err(Error::Config("annulus needs d_x ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = |lo: f64, hi: f64| -> Vec<f64> {
        loop {
            let x: Vec<f64> = (0..d_x).map(|_| rng.random_range(-hi..=hi)).collect();
            let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if r >= lo && r <= hi {
                return x;
            }
        }
    };
    let mut rows = Vec::with_capacity(2 * n_per_class);
    for _ in 0..n_per_class {
        rows.push((sample(0.0, r1), 0));
    }
    for _ in 0..n_per_class {
        rows.push((sample(r2, r3), 1));
    }
    let order = shuffled(rows.len(), seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut data = Vec::with_capacity(rows.len() * d_x);
    let mut labels = Vec::with_capacity(rows.len());
    for i in order {
        data.extend_from_slice(&rows[i].0);
        labels.push(rows[i].1);
    }
    Dataset::new(Tensor::new(vec![labels.len(), d_x], data)?, Some(labels), 2)
}

/// `z(x)` of the annulus task mapped to classes: 0 inside `r₁`, 1 in the
/// shell, `None` in the gap or outside.
pub fn annulus_class(x: &[f64], r1: f64, r2: f64, r3: f64) -> Option<usize> {
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r <= r1 {
        Some(0)
    } else if (r2..=r3).contains(&r) {
        Some(1)
    } else {
        None
    }
}

/// Two interleaved half circles: class 0 on `(cos θ, sin θ)`, class 1 on
/// `(1 - cos θ, ½ - sin θ)`, θ evenly spaced on `[0, π]`, plus isotropic
/// Gaussian jitter. Rows are shuffled.
pub fn gen_two_moons(n: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    if !n.is_multiple_of(2) || n == 0 {
        return Err(Error::Config(format!("two-moons needs a positive even n, got {n}")));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::Config(format!("noise_std must be nonnegative, got {noise_std}")));
    }
    let half = n / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = |i: usize| {
        if half == 1 {
            0.0
        } else {
            std::f64::consts::PI * i as f64 / (half - 1) as f64
        }
    };
    let mut rows = Vec::with_capacity(n);
    for i in 0..half {
        rows.push(([theta(i).cos(), theta(i).sin()], 0));
    }
    for i in 0..half {
        rows.push(([1.0 - theta(i).cos(), 0.5 - theta(i).sin()], 1));
    }
    for (x, _) in &mut rows {
        for v in x.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += noise_std * z;
        }
    }
    let order = shuffled(n, seed.wrapping_add(1));
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in order {
        data.extend_from_slice(&rows[i].0);
        labels.push(rows[i].1);
    }
    Dataset::new(Tensor::new(vec![n, 2], data)?, Some(labels), 2)
}

/// Reads MNIST-style IDX images and labels, scales pixels to `[0, 1]`, and
/// draws a class-stratified random subset (`subset = 0` keeps everything).
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path, subset: usize, seed: u64) -> Result<Dataset> {
    let images = read_idx(images_path, IDX_IMAGES_MAGIC)?;
    let labels = read_idx(labels_path, IDX_LABELS_MAGIC)?;
    mnist_from_idx(&images, &labels, subset, seed)
}

pub fn mnist_from_idx(images: &IdxArray, labels: &IdxArray, subset: usize, seed: u64) -> Result<Dataset> {
    if images.rank() != 3 || labels.rank() != 1 {
        return Err(Error::Format {
            offset: 0,
            detail: format!("expected rank-3 images and rank-1 labels, got {} and {}", images.rank(), labels.rank()),
        });
    }
    let n = images.dims[0];
    if labels.dims[0] != n {
        return Err(Error::Format {
            offset: 4,
            detail: format!("{n} images but {} labels", labels.dims[0]),
        });
    }
    let pixels = images.dims[1] * images.dims[2];
    let ys: Vec<usize> = labels.data.iter().map(|&y| y as usize).collect();
    let num_classes = ys.iter().max().map_or(0, |m| m + 1).max(10);
    let all = Dataset::new(
        Tensor::new(vec![n, pixels], images.data.iter().map(|&p| f64::from(p) / 255.0).collect())?,
        Some(ys),
        num_classes,
    )?;
    if subset == 0 || subset >= n {
        return Ok(all);
    }
    let indices = stratified_subset(all.labels()?, num_classes, subset, seed);
    all.select(&indices)
}

/// Proportional per-class allocation (largest remainder), each class
/// sampled without replacement; the result is shuffled.
fn stratified_subset(labels: &[usize], num_classes: usize, subset: usize, seed: u64) -> Vec<usize> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let n = labels.len() as f64;
    let exact: Vec<f64> = by_class.iter().map(|c| subset as f64 * c.len() as f64 / n).collect();
    let mut take: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut remaining = subset - take.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..num_classes).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for c in order {
        if remaining == 0 {
            break;
        }
        if take[c] < by_class[c].len() {
            take[c] += 1;
            remaining -= 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(subset);
    for (c, members) in by_class.iter_mut().enumerate() {
        members.shuffle(&mut rng);
        out.extend_from_slice(&members[..take[c]]);
    }
    out.shuffle(&mut rng);
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OodKind {
    /// Uniform on `[0, 1]^d`.
    #[default]
    UniformNoise,
    /// Standard normal.
    GaussianNoise,
    /// Standard normal shifted by [`OOD_SHIFT`] on every coordinate.
    Shifted,
}

pub const OOD_SHIFT: f64 = 4.0;

/// Unlabelled samples in normalized input space.
pub fn gen_ood(n: usize, d_x: usize, kind: OodKind, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..n * d_x)
        .map(|_| match kind {
            OodKind::UniformNoise => rng.random::<f64>(),
            OodKind::GaussianNoise => StandardNormal.sample(&mut rng),
            OodKind::Shifted => {
                let z: f64 = StandardNormal.sample(&mut rng);
                z + OOD_SHIFT
            }
        })
        .collect();
    Dataset::new(Tensor::new(vec![n, d_x], data)?, None, 0)
}

/// Disjoint train/val/test splits, normalized with train statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub normalization: Option<Normalization>,
}

/// Shuffles with `seed` and cuts at `train_frac` and `train_frac + val_frac`.
pub fn split_dataset(data: &Dataset, train_frac: f64, val_frac: f64, seed: u64, normalize: bool) -> Result<Splits> {
    if !(train_frac > 0.0 && val_frac >= 0.0 && train_frac + val_frac <= 1.0) {
        return Err(Error::Config(format!("bad split fractions {train_frac}, {val_frac}")));
    }
    let n = data.len();
    let order = shuffled(n, seed);
    let n_train = ((n as f64) * train_frac).round() as usize;
    let n_val = (((n as f64) * val_frac).round() as usize).min(n - n_train);
    let tag = |mut d: Dataset, t: SplitTag| {
        d.split = Some(t);
        d
    };
    let mut train = tag(data.select(&order[..n_train])?, SplitTag::Train);
    let mut val = tag(data.select(&order[n_train..n_train + n_val])?, SplitTag::Val);
    let mut test = tag(data.select(&order[n_train + n_val..])?, SplitTag::Test);
    let normalization = if normalize {
        let norm = Normalization::fit(&train.features)?;
        train = train.normalized(&norm)?;
        val = val.normalized(&norm)?;
        test = test.normalized(&norm)?;
        Some(norm)
    } else {
        None
    };
    Ok(Splits {
        train,
        val,
        test,
        normalization,
    })
}

/// Serializable dataset recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    TwoMoons {
        n: usize,
        noise_std: f64,
    },
    Annulus {
        n_per_class: usize,
        r1: f64,
        r2: f64,
        r3: f64,
        #[serde(default = "two")]
        d_x: usize,
    },
    /// Paths are relative to the data directory unless absolute.
    Mnist {
        images: PathBuf,
        labels: PathBuf,
        subset: usize,
    },
    Csv {
        path: PathBuf,
        num_classes: usize,
    },
}

fn two() -> usize {
    2
}

impl DatasetSpec {
    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { data_dir().join(p) };
        match self {
            DatasetSpec::TwoMoons { n, noise_std } => gen_two_moons(*n, *noise_std, seed),
            DatasetSpec::Annulus {
                n_per_class,
                r1,
                r2,
                r3,
                d_x,
            } => gen_annulus(*n_per_class, *r1, *r2, *r3, seed, *d_x),
            DatasetSpec::Mnist { images, labels, subset } => {
                load_mnist_idx(&resolve(images), &resolve(labels), *subset, seed)
            }
            DatasetSpec::Csv { path, num_classes } => Dataset::load_csv(&resolve(path), *num_classes),
        }
    }

    pub fn input_dim(&self) -> Option<usize> {
        match self {
            DatasetSpec::TwoMoons { .. } => Some(2),
            DatasetSpec::Annulus { d_x, .. } => Some(*d_x),
            DatasetSpec::Mnist { .. } => Some(784),
            DatasetSpec::Csv { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn radius(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn annulus_membership_and_bounds() {
        assert_eq!(annulus_class(&[0.0, 0.0], 1.0, 2.0, 3.0), Some(0));
        assert_eq!(annulus_class(&[2.5, 0.0], 1.0, 2.0, 3.0), Some(1));
        assert_eq!(annulus_class(&[1.5, 0.0], 1.0, 2.0, 3.0), None);
        let d = gen_annulus(5000, 1.0, 2.0, 3.0, 7, 2).unwrap();
        assert_eq!(d.class_counts().unwrap(), vec![5000, 5000]);
        for (r, &y) in d.labels().unwrap().iter().enumerate() {
            let rad = radius(d.features.row_slice(r));
            if y == 0 {
                assert!(rad <= 1.0);
            } else {
                assert!((2.0..=3.0).contains(&rad));
            }
        }
        assert!(matches!(gen_annulus(1, 2.0, 1.0, 3.0, 0, 2), Err(Error::Config(_))));
    }

    #[test]
    fn two_moons_arcs_balance_and_determinism() {
        let d = gen_two_moons(100, 0.0, 3).unwrap();
        assert_eq!(d.class_counts().unwrap(), vec![50, 50]);
        for (r, &y) in d.labels().unwrap().iter().enumerate() {
            let x = d.features.row_slice(r);
            let (cx, cy) = if y == 0 { (0.0, 0.0) } else { (1.0, 0.5) };
            assert!(((x[0] - cx).powi(2) + (x[1] - cy).powi(2) - 1.0).abs() < 1e-12);
            assert!(if y == 0 { x[1] >= -1e-12 } else { x[1] <= 0.5 + 1e-12 });
        }
        let a = gen_two_moons(64, 0.1, 9).unwrap();
        let b = gen_two_moons(64, 0.1, 9).unwrap();
        assert_eq!(a, b);
        assert!(gen_two_moons(5, 0.1, 0).is_err());
    }

    #[test]
    fn ood_generators() {
        let u = gen_ood(500, 3, OodKind::UniformNoise, 1).unwrap();
        assert!(u.features.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(u.labels.is_none());
        let n = 20_000;
        let g = gen_ood(n, 2, OodKind::GaussianNoise, 2).unwrap();
        for c in 0..2 {
            let m: f64 = (0..n).map(|r| g.features.row_slice(r)[c]).sum::<f64>() / n as f64;
            assert!(m.abs() < 3.0 / (n as f64).sqrt());
        }
        assert_eq!(gen_ood(10, 2, OodKind::Shifted, 5).unwrap(), gen_ood(10, 2, OodKind::Shifted, 5).unwrap());
    }

    #[test]
    fn splits_are_disjoint_exhaustive_and_train_normalized() {
        let d = gen_two_moons(200, 0.1, 4).unwrap();
        let s = split_dataset(&d, 0.6, 0.2, 11, true).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (120, 40, 40));
        let norm = s.normalization.clone().unwrap();
        let refit = Normalization::fit(&s.train.features).unwrap();
        assert!(refit.mean.iter().all(|m| m.abs() < 1e-12));
        assert!(refit.std.iter().all(|v| (v - 1.0).abs() < 1e-12));
        // undo normalization and check the union is the original multiset
        let mut rows: Vec<Vec<u64>> = [&s.train, &s.val, &s.test]
            .iter()
            .flat_map(|part| {
                (0..part.len())
                    .map(|r| {
                        part.features
                            .row_slice(r)
                            .iter()
                            .enumerate()
                            .map(|(c, v)| ((v * norm.std[c] + norm.mean[c]) * 1e9).round() as i64 as u64)
                            .collect()
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        let mut orig: Vec<Vec<u64>> = (0..d.len())
            .map(|r| d.features.row_slice(r).iter().map(|v| (v * 1e9).round() as i64 as u64).collect())
            .collect();
        rows.sort();
        orig.sort();
        assert_eq!(rows, orig);
    }

    #[test]
    fn csv_round_trip() {
        let d = gen_two_moons(10, 0.1, 1).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"label,x_1,x_2\n"));
        let back = Dataset::read_csv(buf.as_slice(), 2).unwrap();
        assert_eq!(back, d);
        let o = gen_ood(3, 2, OodKind::UniformNoise, 0).unwrap();
        let mut buf = Vec::new();
        o.write_csv(&mut buf).unwrap();
        assert_eq!(Dataset::read_csv(buf.as_slice(), 0).unwrap(), o);
    }

    #[test]
    fn mnist_scaling_and_stratification() {
        let n = 3000;
        let labels: Vec<u8> = (0..n).map(|i| (i * 7 % 10) as u8).collect();
        let mut pixels = vec![0u8; n * 4];
        pixels[0] = 255;
        let images = parse_idx(&encode_idx(&[n, 2, 2], &pixels), IDX_IMAGES_MAGIC).unwrap();
        let labels = parse_idx(&encode_idx(&[n], &labels), IDX_LABELS_MAGIC).unwrap();
        let all = mnist_from_idx(&images, &labels, 0, 0).unwrap();
        assert_eq!(all.features.data()[0], 1.0);
        assert_eq!(all.dim(), 4);
        let sub = mnist_from_idx(&images, &labels, 1000, 5).unwrap();
        assert_eq!(sub.len(), 1000);
        assert!(sub.class_counts().unwrap().iter().all(|&c| (90..=110).contains(&c)));
    }
}
