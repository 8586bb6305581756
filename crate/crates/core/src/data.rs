//! Synthetic datasets, Dirichlet label-skew partitioning, and batch
//! iteration.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{domain, rng_from};

/// Cluster means for generated blobs sit on a sphere of this radius before
/// standardization; `spread` is the per-cluster noise scale relative to it.
const MEAN_RADIUS: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// An in-memory multi-class dataset with fixed train/val/test splits.
#[derive(Clone, Debug)]
pub struct Dataset {
    features: Vec<f64>, // m * p row-major
    labels: Vec<usize>,
    num_features: usize,
    num_classes: usize,
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

impl Dataset {
    /// Build a dataset from raw rows; the stratified 80/10/10 split is
    /// derived from label order.
    pub fn from_parts(features: Vec<f64>, labels: Vec<usize>, num_features: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("dataset: no samples"));
        }
        if features.len() != labels.len() * num_features {
            return Err(Error::invalid("dataset: feature/label shape mismatch"));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "dataset: non-finite feature at flat index {i}"
            )));
        }
        let num_classes = labels.iter().max().copied().unwrap_or(0) + 1;
        for c in 0..num_classes {
            if !labels.contains(&c) {
                return Err(Error::invalid(format!(
                    "dataset: class {c} has no samples (labels must cover 0..C)"
                )));
            }
        }
        let (train, val, test) = stratified_split(&labels, num_classes);
        Ok(Dataset {
            features,
            labels,
            num_features,
            num_classes,
            train,
            val,
            test,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.num_features..(i + 1) * self.num_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn split(&self, which: Split) -> &[usize] {
        match which {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Deterministic stratified 80/10/10 split: within each class, sample k (in
/// dataset order) goes to val when k % 10 == 8, test when k % 10 == 9, and
/// train otherwise. Every class lands in train (k = 0 is train).
fn stratified_split(labels: &[usize], num_classes: usize) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut seen = vec![0usize; num_classes];
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (i, &c) in labels.iter().enumerate() {
        match seen[c] % 10 {
            8 => val.push(i),
            9 => test.push(i),
            _ => train.push(i),
        }
        seen[c] += 1;
    }
    (train, val, test)
}

/// Generate `classes` Gaussian clusters of `per_class` points in `dim`
/// dimensions. Cluster means are a deterministic function of `seed`; features
/// are standardized to zero mean and unit variance per dimension.
pub fn generate_blobs(
    classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::invalid("blobs: need at least 2 classes"));
    }
    if per_class == 0 || dim == 0 {
        return Err(Error::invalid("blobs: per_class and dim must be positive"));
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(Error::invalid(format!(
            "blobs: spread must be positive, got {spread}"
        )));
    }

    let mut mean_rng = rng_from(&[seed, domain::DATA_MEANS]);
    let normal = StandardNormal;
    let mut means = Vec::with_capacity(classes);
    for _ in 0..classes {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| normal.sample(&mut mean_rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                means.push(v.iter().map(|x| MEAN_RADIUS * x / norm).collect::<Vec<f64>>());
                break;
            }
        }
    }

    let m = classes * per_class;
    let mut noise_rng = rng_from(&[seed, domain::DATA_NOISE]);
    let mut features = Vec::with_capacity(m * dim);
    let mut labels = Vec::with_capacity(m);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            for &mu in mean {
                let z: f64 = normal.sample(&mut noise_rng);
                features.push(mu + spread * z);
            }
            labels.push(c);
        }
    }

    standardize(&mut features, m, dim);
    Dataset::from_parts(features, labels, dim)
}

/// In-place per-feature standardization (population statistics).
fn standardize(features: &mut [f64], m: usize, dim: usize) {
    for f in 0..dim {
        let mut mean = 0.0;
        for i in 0..m {
            mean += features[i * dim + f];
        }
        mean /= m as f64;
        let mut var = 0.0;
        for i in 0..m {
            let d = features[i * dim + f] - mean;
            var += d * d;
        }
        var /= m as f64;
        let std = var.sqrt();
        let inv = if std > 0.0 { 1.0 / std } else { 1.0 };
        for i in 0..m {
            let v = &mut features[i * dim + f];
            *v = (*v - mean) * inv;
        }
    }
}

/// Load a dataset from CSV: header row, feature columns as decimals, final
/// column an integer label. Features are taken as-is (no standardization).
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())
        .map_err(|e| Error::invalid(format!("csv: {e}")))?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut num_features = None;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::invalid(format!("csv row {row}: {e}")))?;
        let width = record.len();
        if width < 2 {
            return Err(Error::invalid(format!(
                "csv row {row}: need at least one feature column plus a label"
            )));
        }
        let p = *num_features.get_or_insert(width - 1);
        if width - 1 != p {
            return Err(Error::invalid(format!(
                "csv row {row}: expected {p} feature columns, got {}",
                width - 1
            )));
        }
        for field in record.iter().take(p) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|e| Error::invalid(format!("csv row {row}: bad feature: {e}")))?;
            features.push(v);
        }
        let label: usize = record[p]
            .trim()
            .parse()
            .map_err(|e| Error::invalid(format!("csv row {row}: bad label: {e}")))?;
        labels.push(label);
    }
    let p = num_features.ok_or_else(|| Error::invalid("csv: no data rows"))?;
    Dataset::from_parts(features, labels, p)
}

/// Disjoint assignment of sample positions to agents.
#[derive(Clone, Debug)]
pub struct Partition {
    shards: Vec<Vec<usize>>,
}

impl Partition {
    pub fn num_agents(&self) -> usize {
        self.shards.len()
    }

    pub fn shard(&self, agent: usize) -> &[usize] {
        &self.shards[agent]
    }

    pub fn shards(&self) -> &[Vec<usize>] {
        &self.shards
    }
}

/// Split `labels` across `n` agents with Dirichlet(alpha) label skew.
///
/// For each class the class's shuffled samples are handed out in contiguous
/// blocks sized by largest-remainder rounding of a Dirichlet(alpha·1_n) draw.
/// A repair pass then moves single samples from the largest shard until no
/// shard is empty. Returned indices are positions into `labels`.
pub fn dirichlet_partition(
    labels: &[usize],
    n: usize,
    alpha: f64,
    seed: u64,
) -> Result<Partition> {
    if labels.is_empty() {
        return Err(Error::invalid("partition: labels must be nonempty"));
    }
    if n == 0 {
        return Err(Error::invalid("partition: agent count must be positive"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!(
            "partition: alpha must be positive, got {alpha}"
        )));
    }
    if n > labels.len() {
        return Err(Error::Infeasible(format!(
            "partition: {n} agents but only {} samples",
            labels.len()
        )));
    }

    let num_classes = labels.iter().max().copied().unwrap_or(0) + 1;
    let mut rng = rng_from(&[seed, domain::PARTITION]);
    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|e| Error::invalid(format!("partition: bad alpha: {e}")))?;

    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); n];
    for c in 0..num_classes {
        let mut idxs: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if idxs.is_empty() {
            continue;
        }
        idxs.shuffle(&mut rng);
        let draws: Vec<f64> = (0..n).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = draws.iter().sum();
        let props: Vec<f64> = if total > 0.0 {
            draws.iter().map(|g| g / total).collect()
        } else {
            vec![1.0 / n as f64; n]
        };
        let counts = largest_remainder_counts(&props, idxs.len());
        let mut start = 0;
        for (agent, &count) in counts.iter().enumerate() {
            shards[agent].extend_from_slice(&idxs[start..start + count]);
            start += count;
        }
    }

    // Every agent must train; top up empty shards from the largest.
    loop {
        let empty = match shards.iter().position(|s| s.is_empty()) {
            Some(i) => i,
            None => break,
        };
        let donor = shards
            .iter()
            .enumerate()
            .max_by(|(ai, a), (bi, b)| a.len().cmp(&b.len()).then(bi.cmp(ai)))
            .map(|(i, _)| i)
            .expect("at least one shard");
        let moved = shards[donor].pop().expect("donor shard is nonempty");
        shards[empty].push(moved);
    }

    Ok(Partition { shards })
}

/// Integer counts summing to `total`, proportional to `props`, rounded by
/// largest remainder with ties going to the lower index.
fn largest_remainder_counts(props: &[f64], total: usize) -> Vec<usize> {
    let raw: Vec<f64> = props.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

/// Batches for one pass over `shard`: a deterministic shuffle keyed by
/// (agent_seed, epoch), chunked into `batch_size` groups with the final short
/// batch kept.
pub fn epoch_batches(
    shard: &[usize],
    batch_size: usize,
    epoch: u64,
    agent_seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if shard.is_empty() {
        return Err(Error::invalid("batches: shard must be nonempty"));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batches: batch_size must be positive"));
    }
    let mut order = shard.to_vec();
    let mut rng = rng_from(&[agent_seed, domain::BATCH, epoch]);
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect())
}
