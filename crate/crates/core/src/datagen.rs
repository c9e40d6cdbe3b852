//! Synthetic classification tasks, stratified semi-supervised splits and batching.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{dot, norm, Matrix, Rng};

/// Class proportions of the 8-class long-tail preset.
pub const LONG_TAIL_PROPORTIONS: [f64; 8] = [0.508, 0.179, 0.131, 0.104, 0.034, 0.025, 0.009, 0.009];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub splits: Vec<Split>,
    pub class_count: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn labels_of(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn class_counts(&self, split: Split) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for i in self.indices(split) {
            counts[self.labels[i]] += 1;
        }
        counts
    }

    /// Checks shapes, finiteness and that every class is present in train and test.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.inputs.rows() != n || self.splits.len() != n {
            return Err(Error::InvalidArgument("dataset columns have different lengths".into()));
        }
        self.inputs.ensure_finite("dataset inputs")?;
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.class_count) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside [0, {})",
                self.class_count
            )));
        }
        for split in [Split::Train, Split::Test] {
            let counts = self.class_counts(split);
            if let Some(c) = counts.iter().position(|&k| k == 0) {
                return Err(Error::InvalidArgument(format!(
                    "class {c} has no {} samples",
                    split.as_str()
                )));
            }
        }
        Ok(())
    }

    /// Stratified reassignment of samples into train/val/test.
    ///
    /// Per class, `round(fraction × class size)` samples go to each holdout split.
    pub fn assign_splits(&mut self, val_fraction: f64, test_fraction: f64, seed: u64) -> Result<()> {
        if !(0.0..1.0).contains(&val_fraction)
            || !(0.0..1.0).contains(&test_fraction)
            || val_fraction + test_fraction >= 1.0
        {
            return Err(Error::InvalidArgument(format!(
                "holdout fractions val={val_fraction} test={test_fraction}"
            )));
        }
        let rng = Rng::new(seed).split("assign_splits");
        for c in 0..self.class_count {
            let mut members: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == c).collect();
            rng.split_indexed("class", c as u64).shuffle(&mut members);
            let n = members.len() as f64;
            let n_test = (test_fraction * n).round() as usize;
            let n_val = (val_fraction * n).round() as usize;
            for (j, &i) in members.iter().enumerate() {
                self.splits[i] = if j < n_test {
                    Split::Test
                } else if j < n_test + n_val {
                    Split::Val
                } else {
                    Split::Train
                };
            }
        }
        self.validate()
    }

    /// CSV with columns `x_0..x_{dim-1},label,split,semi_tag`.
    ///
    /// `semi_tag` is `labeled`/`unlabeled` for train samples when a split is
    /// given and `-` otherwise. Floats use shortest round-trip formatting.
    pub fn to_csv(&self, semi: Option<&SemiSplit>) -> String {
        let mut tags = vec!["-"; self.len()];
        if let Some(s) = semi {
            for &(i, _) in s.labeled() {
                tags[i] = "labeled";
            }
            for &i in s.unlabeled() {
                tags[i] = "unlabeled";
            }
        }
        let mut out = String::new();
        for j in 0..self.dim() {
            let _ = write!(out, "x_{j},");
        }
        out.push_str("label,split,semi_tag\n");
        for (i, tag) in tags.iter().enumerate() {
            for v in self.inputs.row(i) {
                let _ = write!(out, "{v:?},");
            }
            let _ = writeln!(out, "{},{},{}", self.labels[i], self.splits[i].as_str(), tag);
        }
        out
    }

    /// Parses [`Dataset::to_csv`] output. The semi-supervised split is rebuilt
    /// when every train row carries a `labeled`/`unlabeled` tag.
    pub fn from_csv(text: &str) -> Result<(Dataset, Option<SemiSplit>)> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty dataset CSV".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        let dim =
            cols.len().checked_sub(3).filter(|&d| d > 0).ok_or_else(|| {
                Error::Parse("dataset CSV header needs feature columns plus label,split,semi_tag".into())
            })?;
        if cols[dim..] != ["label", "split", "semi_tag"] {
            return Err(Error::Parse(format!(
                "unexpected trailing header columns {:?}",
                &cols[dim..]
            )));
        }
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut splits = Vec::new();
        let mut tags = Vec::new();
        for (ln, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Parse(format!("dataset CSV line {}: {what}", ln + 2));
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 3 {
                return Err(bad("wrong field count"));
            }
            for f in &fields[..dim] {
                data.push(f.parse::<f64>().map_err(|_| bad("bad number"))?);
            }
            labels.push(fields[dim].parse::<usize>().map_err(|_| bad("bad label"))?);
            splits.push(Split::parse(fields[dim + 1]).ok_or_else(|| bad("bad split"))?);
            tags.push(fields[dim + 2].to_string());
        }
        let class_count = labels.iter().max().map_or(0, |m| m + 1);
        let ds = Dataset {
            inputs: Matrix::from_vec(labels.len(), dim, data)?,
            labels,
            splits,
            class_count,
        };
        let train = ds.indices(Split::Train);
        let semi = if !train.is_empty() && train.iter().all(|&i| tags[i] != "-") {
            let labeled = train
                .iter()
                .filter(|&&i| tags[i] == "labeled")
                .map(|&i| (i, ds.labels[i]))
                .collect();
            let unlabeled = train.iter().copied().filter(|&i| tags[i] == "unlabeled").collect();
            Some(SemiSplit {
                labeled,
                unlabeled,
                class_count: ds.class_count,
            })
        } else {
            None
        };
        Ok((ds, semi))
    }

    /// SHA-256 of the CSV rendering (without semi tags), hex encoded.
    pub fn content_hash(&self) -> String {
        hex_digest(self.to_csv(None).as_bytes())
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Gaussian blobs around centres drawn uniformly in `[−spread, spread]^dim`.
/// All samples are tagged `Train`; use [`Dataset::assign_splits`] for holdouts.
pub fn make_blobs(
    class_counts: &[usize],
    dim: usize,
    center_spread: f64,
    cluster_std: f64,
    seed: u64,
) -> Result<Dataset> {
    if class_counts.len() < 2 || class_counts.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "blobs need >= 2 non-empty classes, got {class_counts:?}"
        )));
    }
    if dim < 2 || !(cluster_std >= 0.0) || !(center_spread >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "blobs need dim >= 2 and non-negative spread/std (dim={dim}, spread={center_spread}, std={cluster_std})"
        )));
    }
    let root = Rng::new(seed);
    let mut centre_rng = root.split("centres");
    let centres: Vec<Vec<f64>> = class_counts
        .iter()
        .map(|_| {
            (0..dim)
                .map(|_| centre_rng.uniform_range(-center_spread, center_spread))
                .collect()
        })
        .collect();

    let n: usize = class_counts.iter().sum();
    let mut inputs = Matrix::zeros(n, dim);
    let mut labels = Vec::with_capacity(n);
    let mut noise = root.split("samples");
    let mut r = 0;
    for (c, &count) in class_counts.iter().enumerate() {
        for _ in 0..count {
            for (x, mu) in inputs.row_mut(r).iter_mut().zip(&centres[c]) {
                *x = mu + cluster_std * noise.normal();
            }
            labels.push(c);
            r += 1;
        }
    }
    Ok(Dataset {
        inputs,
        labels,
        splits: vec![Split::Train; n],
        class_count: class_counts.len(),
    })
}

/// Per-class sizes for `total` samples following `proportions` (each class ≥ 1).
pub fn proportional_counts(total: usize, proportions: &[f64]) -> Vec<usize> {
    let sum: f64 = proportions.iter().sum();
    let quotas: Vec<f64> = proportions.iter().map(|p| p / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    // largest remainder, ties to the lower index
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let short = total.saturating_sub(counts.iter().sum());
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    // every class keeps at least one sample, taken from the largest class
    for i in 0..counts.len() {
        if counts[i] == 0 {
            let j = (0..counts.len()).max_by_key(|&j| (counts[j], usize::MAX - j)).unwrap();
            if counts[j] > 1 {
                counts[j] -= 1;
            }
            counts[i] = 1;
        }
    }
    counts
}

/// Random orthogonal `n×n` matrix (Gram-Schmidt on a Gaussian matrix).
fn random_orthogonal(n: usize, rng: &mut Rng) -> Matrix {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        for _ in 0..2 {
            for b in &basis {
                let p = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let nv = norm(&v);
        if nv > 1e-8 {
            v.iter_mut().for_each(|x| *x /= nv);
            basis.push(v);
        }
    }
    Matrix::from_rows(&basis).expect("square basis")
}

/// Two interleaved unit half-circles with Gaussian noise, rotated into `ambient_dim`.
///
/// Class 0 lies on the circle centred at (0, 0), class 1 on the circle centred
/// at (1, 0.5), before the embedding.
pub fn make_moons_embedded(n: usize, noise_std: f64, ambient_dim: usize, seed: u64) -> Result<Dataset> {
    if n < 4 || !n.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("moons need an even n >= 4, got {n}")));
    }
    if ambient_dim < 2 || !(noise_std >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "moons need ambient_dim >= 2 and noise >= 0 (got {ambient_dim}, {noise_std})"
        )));
    }
    let root = Rng::new(seed);
    let half = n / 2;
    let mut noise = root.split("noise");
    let mut plane = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for c in 0..2 {
        for i in 0..half {
            let t = std::f64::consts::PI * i as f64 / (half - 1) as f64;
            let (x, y) = if c == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            plane.push([x + noise_std * noise.normal(), y + noise_std * noise.normal()]);
            labels.push(c);
        }
    }
    let rot = random_orthogonal(ambient_dim, &mut root.split("rotation"));
    let mut inputs = Matrix::zeros(n, ambient_dim);
    for (r, p) in plane.iter().enumerate() {
        // x_ambient = Q · [p_x, p_y, 0, …]
        for j in 0..ambient_dim {
            inputs[(r, j)] = rot[(j, 0)] * p[0] + rot[(j, 1)] * p[1];
        }
    }
    Ok(Dataset {
        inputs,
        labels,
        splits: vec![Split::Train; n],
        class_count: 2,
    })
}

/// Labeled/unlabeled partition of the train split.
///
/// Only the labeled part carries labels; nothing here exposes the labels of
/// unlabeled samples.
#[derive(Clone, Debug, PartialEq)]
pub struct SemiSplit {
    labeled: Vec<(usize, usize)>,
    unlabeled: Vec<usize>,
    class_count: usize,
}

impl SemiSplit {
    /// `(dataset index, label)` pairs.
    pub fn labeled(&self) -> &[(usize, usize)] {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &[usize] {
        &self.unlabeled
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn labeled_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &(_, l) in &self.labeled {
            counts[l] += 1;
        }
        counts
    }
}

/// Stratified labeled subset of the train split: `round(fraction × class size)` per class.
pub fn split_semi(dataset: &Dataset, labeled_fraction: f64, seed: u64) -> Result<SemiSplit> {
    if !(labeled_fraction > 0.0 && labeled_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "labeled fraction {labeled_fraction} outside (0, 1]"
        )));
    }
    let rng = Rng::new(seed).split("split_semi");
    let train = dataset.indices(Split::Train);
    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    for c in 0..dataset.class_count {
        let mut members: Vec<usize> = train.iter().copied().filter(|&i| dataset.labels[i] == c).collect();
        if members.is_empty() {
            return Err(Error::InvalidArgument(format!("class {c} has no train samples")));
        }
        rng.split_indexed("class", c as u64).shuffle(&mut members);
        let k = (labeled_fraction * members.len() as f64).round() as usize;
        if k == 0 {
            return Err(Error::InvalidArgument(format!(
                "labeled fraction {labeled_fraction} leaves class {c} ({} samples) without labels",
                members.len()
            )));
        }
        labeled.extend(members[..k].iter().map(|&i| (i, c)));
        unlabeled.extend_from_slice(&members[k..]);
    }
    labeled.sort_unstable();
    unlabeled.sort_unstable();
    Ok(SemiSplit {
        labeled,
        unlabeled,
        class_count: dataset.class_count,
    })
}

/// `x` plus i.i.d. Gaussian noise of standard deviation `std`.
pub fn perturb(x: &Matrix, std: f64, rng: &mut Rng) -> Result<Matrix> {
    if !(std >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise std {std} must be >= 0")));
    }
    if std == 0.0 {
        return Ok(x.clone());
    }
    let mut out = x.clone();
    out.as_mut_slice().iter_mut().for_each(|v| *v += std * rng.normal());
    Ok(out)
}

/// One mini-batch: labeled samples first, then unlabeled.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    /// `Some(label)` for labeled samples, `None` for unlabeled.
    pub labels: Vec<Option<usize>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }
}

/// Draws indices from a pool in shuffled passes, reshuffling when exhausted.
struct Cycler<'a, T: Copy> {
    pool: &'a [T],
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl<'a, T: Copy> Cycler<'a, T> {
    fn new(pool: &'a [T], rng: Rng) -> Self {
        Self {
            pool,
            order: Vec::new(),
            pos: 0,
            rng,
        }
    }

    fn next(&mut self) -> T {
        if self.pos == self.order.len() {
            self.order = (0..self.pool.len()).collect();
            self.rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        self.pos += 1;
        self.pool[self.order[self.pos - 1]]
    }
}

/// One epoch of batches with `labeled_per_batch` labeled samples each.
///
/// An epoch is one pass over the unlabeled pool: `ceil(unlabeled / (batch_size −
/// labeled_per_batch))` batches, with the labeled pool cycling in shuffled
/// passes. With no unlabeled samples (or all-labeled batches) every slot is
/// filled from the labeled pool and the epoch is one pass over it.
pub fn batch_iter(split: &SemiSplit, batch_size: usize, labeled_per_batch: usize, rng: &Rng) -> Result<Vec<Batch>> {
    if batch_size == 0 || labeled_per_batch == 0 || labeled_per_batch > batch_size {
        return Err(Error::InvalidArgument(format!(
            "batch size {batch_size} with {labeled_per_batch} labeled per batch"
        )));
    }
    if split.labeled.is_empty() {
        return Err(Error::InvalidArgument("labeled pool is empty".into()));
    }
    let (n_lab, n_unl, n_batches) = if split.unlabeled.is_empty() || labeled_per_batch == batch_size {
        let pool = split.labeled.len() + split.unlabeled.len();
        (batch_size, 0, pool.div_ceil(batch_size))
    } else {
        let n_unl = batch_size - labeled_per_batch;
        (labeled_per_batch, n_unl, split.unlabeled.len().div_ceil(n_unl))
    };
    let mut lab = Cycler::new(&split.labeled, rng.split("labeled"));
    let mut unl = Cycler::new(&split.unlabeled, rng.split("unlabeled"));
    let mut batches = Vec::with_capacity(n_batches);
    for _ in 0..n_batches {
        let mut indices = Vec::with_capacity(batch_size);
        let mut labels = Vec::with_capacity(batch_size);
        for _ in 0..n_lab {
            let (i, l) = lab.next();
            indices.push(i);
            labels.push(Some(l));
        }
        for _ in 0..n_unl {
            indices.push(unl.next());
            labels.push(None);
        }
        batches.push(Batch { indices, labels });
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_class(n_per: usize) -> Dataset {
        make_blobs(&[n_per, n_per], 3, 5.0, 1.0, 1).unwrap()
    }

    #[test]
    fn blobs_are_seeded() {
        assert_eq!(
            make_blobs(&[10, 10], 4, 3.0, 1.0, 5).unwrap(),
            make_blobs(&[10, 10], 4, 3.0, 1.0, 5).unwrap()
        );
        assert_ne!(
            make_blobs(&[10, 10], 4, 3.0, 1.0, 5).unwrap(),
            make_blobs(&[10, 10], 4, 3.0, 1.0, 6).unwrap()
        );
    }

    #[test]
    fn zero_std_blobs_sit_on_centres() {
        let d = make_blobs(&[5, 5], 3, 2.0, 0.0, 3).unwrap();
        for c in 0..2 {
            let rows: Vec<&[f64]> = (0..10).filter(|&i| d.labels[i] == c).map(|i| d.inputs.row(i)).collect();
            assert!(rows.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn blobs_reject_bad_sizes() {
        assert!(make_blobs(&[10], 3, 1.0, 1.0, 0).is_err());
        assert!(make_blobs(&[10, 0], 3, 1.0, 1.0, 0).is_err());
        assert!(make_blobs(&[10, 10], 1, 1.0, 1.0, 0).is_err());
        assert!(make_blobs(&[10, 10], 3, 1.0, -1.0, 0).is_err());
    }

    #[test]
    fn moons_lie_on_unit_half_circles_without_noise() {
        // the embedding is a rotation, so compare against the unrotated
        // half-circles through pairwise distances
        let d = make_moons_embedded(40, 0.0, 2, 7).unwrap();
        let half = 20;
        let pts: Vec<[f64; 2]> = (0..40)
            .map(|i| {
                let t = std::f64::consts::PI * (i % half) as f64 / (half - 1) as f64;
                if i < half {
                    [t.cos(), t.sin()]
                } else {
                    [1.0 - t.cos(), 0.5 - t.sin()]
                }
            })
            .collect();
        for (i, p) in pts.iter().enumerate() {
            let c = if i < half { [0.0, 0.0] } else { [1.0, 0.5] };
            assert!((((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt() - 1.0).abs() < 1e-12);
        }
        for i in 0..40 {
            for j in 0..40 {
                let dp = ((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt();
                let dx = crate::numerics::norm(
                    &d.inputs
                        .row(i)
                        .iter()
                        .zip(d.inputs.row(j))
                        .map(|(a, b)| a - b)
                        .collect::<Vec<_>>(),
                );
                assert!((dp - dx).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn moons_embedding_is_an_isometry() {
        let lo = make_moons_embedded(20, 0.1, 2, 3).unwrap();
        let hi = make_moons_embedded(20, 0.1, 7, 3).unwrap();
        let dist = |m: &Matrix, i: usize, j: usize| {
            m.row(i)
                .iter()
                .zip(m.row(j))
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        for i in 0..20 {
            for j in 0..20 {
                assert!((dist(&lo.inputs, i, j) - dist(&hi.inputs, i, j)).abs() < 1e-9);
            }
        }
        assert!(make_moons_embedded(5, 0.1, 3, 1).is_err());
        assert!(make_moons_embedded(2, 0.1, 3, 1).is_err());
    }

    #[test]
    fn split_semi_arithmetic() {
        let d = two_class(50);
        let s = split_semi(&d, 0.2, 1).unwrap();
        assert_eq!(s.labeled_counts(), vec![10, 10]);
        assert_eq!(s.unlabeled().len(), 80);

        let s = split_semi(&d, 1.0, 1).unwrap();
        assert!(s.unlabeled().is_empty());
        assert!(split_semi(&d, 0.001, 1).is_err());
        assert!(split_semi(&d, 0.0, 1).is_err());
    }

    #[test]
    fn split_semi_partitions_train() {
        let mut d = make_blobs(&[37, 23, 11], 3, 5.0, 1.0, 1).unwrap();
        d.assign_splits(0.1, 0.2, 4).unwrap();
        let s = split_semi(&d, 0.3, 2).unwrap();
        let mut all: Vec<usize> = s
            .labeled()
            .iter()
            .map(|p| p.0)
            .chain(s.unlabeled().iter().copied())
            .collect();
        all.sort_unstable();
        assert_eq!(all, d.indices(Split::Train));
        for (c, &k) in s.labeled_counts().iter().enumerate() {
            let n = d.class_counts(Split::Train)[c] as f64;
            assert!((k as f64 - 0.3 * n).abs() < 1.0);
        }
    }

    #[test]
    fn different_seeds_keep_counts() {
        let d = two_class(50);
        let a = split_semi(&d, 0.3, 1).unwrap();
        let b = split_semi(&d, 0.3, 2).unwrap();
        assert_ne!(a.labeled(), b.labeled());
        assert_eq!(a.labeled_counts(), b.labeled_counts());
    }

    #[test]
    fn perturb_examples() {
        let x = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert_eq!(perturb(&x, 0.0, &mut Rng::new(1)).unwrap(), x);
        let a = perturb(&x, 0.1, &mut Rng::new(1).split("a")).unwrap();
        let b = perturb(&x, 0.1, &mut Rng::new(1).split("b")).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn perturb_std_is_accurate() {
        let x = Matrix::zeros(1000, 100);
        let y = perturb(&x, 0.3, &mut Rng::new(9)).unwrap();
        let n = y.len() as f64;
        let mean = y.as_slice().iter().sum::<f64>() / n;
        let sd = (y.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((sd / 0.3 - 1.0).abs() < 0.02, "{sd}");
    }

    #[test]
    fn batch_composition() {
        let s = SemiSplit {
            labeled: vec![(0, 0), (4, 1)],
            unlabeled: vec![1, 2, 3, 5, 6, 7],
            class_count: 2,
        };
        let batches = batch_iter(&s, 4, 1, &Rng::new(3)).unwrap();
        assert_eq!(batches.len(), 2);
        for b in &batches {
            assert_eq!(b.len(), 4);
            assert_eq!(b.labeled_count(), 1);
        }
    }

    #[test]
    fn fully_labeled_batches() {
        let d = two_class(10);
        let s = split_semi(&d, 1.0, 1).unwrap();
        let batches = batch_iter(&s, 4, 1, &Rng::new(1)).unwrap();
        assert_eq!(batches.len(), 5);
        assert!(batches.iter().all(|b| b.labeled_count() == 4));
    }

    #[test]
    fn epoch_covers_unlabeled_pool() {
        let d = two_class(60);
        let s = split_semi(&d, 0.1, 1).unwrap();
        let batches = batch_iter(&s, 16, 4, &Rng::new(5)).unwrap();
        let mut seen = vec![0usize; d.len()];
        for b in &batches {
            for (&i, l) in b.indices.iter().zip(&b.labels) {
                if l.is_none() {
                    seen[i] += 1;
                }
            }
        }
        assert!(s.unlabeled().iter().all(|&i| seen[i] >= 1));
    }

    #[test]
    fn batch_iter_errors() {
        let d = two_class(10);
        let s = split_semi(&d, 0.5, 1).unwrap();
        assert!(batch_iter(&s, 4, 5, &Rng::new(1)).is_err());
        assert!(batch_iter(&s, 0, 0, &Rng::new(1)).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let mut d = make_blobs(&[8, 6], 3, 2.0, 0.7, 2).unwrap();
        d.assign_splits(0.2, 0.3, 1).unwrap();
        let s = split_semi(&d, 0.5, 3).unwrap();
        let (back, semi) = Dataset::from_csv(&d.to_csv(Some(&s))).unwrap();
        assert_eq!(back, d);
        assert_eq!(semi.unwrap(), s);
        let (_, semi) = Dataset::from_csv(&d.to_csv(None)).unwrap();
        assert!(semi.is_none());
        assert!(Dataset::from_csv("a,b\n").is_err());
    }

    #[test]
    fn long_tail_counts() {
        let counts = proportional_counts(1000, &LONG_TAIL_PROPORTIONS);
        assert_eq!(counts, vec![509, 179, 131, 104, 34, 25, 9, 9]);
        assert_eq!(counts.iter().sum::<usize>(), 1000);
        assert_eq!(proportional_counts(10, &[0.98, 0.01, 0.01]), vec![8, 1, 1]);
    }
}
