//! Two-domain data: synthetic two-moons with controllable label shift, IDX
//! image ingestion, source-side label-shift subsampling and seeded batches.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Array;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
        })
    }
}

/// Labelled samples of one domain. Labels are stored as class indices, so
/// every label row of [`DomainDataset::one_hot`] is one-hot by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    pub features: Array,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub domain: Domain,
    pub priors: Vec<f64>,
    pub provenance: String,
}

impl DomainDataset {
    pub fn new(
        features: Array,
        labels: Vec<usize>,
        num_classes: usize,
        domain: Domain,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::DegenerateDataset("no samples".into()));
        }
        if features.rows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} feature rows for {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Contract(format!(
                "label {bad} outside {num_classes} classes"
            )));
        }
        let priors = class_priors(&labels, num_classes);
        Ok(DomainDataset {
            features,
            labels,
            num_classes,
            domain,
            priors,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn one_hot(&self) -> Array {
        one_hot(&self.labels, self.num_classes)
    }

    /// Features and one-hot labels of the given rows.
    pub fn batch(&self, idx: &[usize]) -> (Array, Array) {
        let labels: Vec<usize> = idx.iter().map(|&i| self.labels[i]).collect();
        (
            self.features.gather_rows(idx),
            one_hot(&labels, self.num_classes),
        )
    }

    /// Rows with headers `x0..x{d-1},label,domain`.
    pub fn write_csv<W: Write>(&self, out: &mut csv::Writer<W>) -> Result<()> {
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.features.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.labels[i].to_string());
            rec.push(self.domain.to_string());
            out.write_record(&rec)?;
        }
        Ok(())
    }
}

pub fn one_hot(labels: &[usize], num_classes: usize) -> Array {
    let mut a = Array::zeros(labels.len(), num_classes);
    for (i, &l) in labels.iter().enumerate() {
        a.data_mut()[i * num_classes + l] = 1.0;
    }
    a
}

fn class_priors(labels: &[usize], num_classes: usize) -> Vec<f64> {
    let mut counts = vec![0.0; num_classes];
    for &l in labels {
        counts[l] += 1.0;
    }
    let n = labels.len() as f64;
    counts.iter().map(|c| c / n).collect()
}

/// Write a source and a target dataset to one CSV file.
pub fn write_pair_csv(path: &Path, source: &DomainDataset, target: &DomainDataset) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header: Vec<String> = (0..source.dim()).map(|j| format!("x{j}")).collect();
    header.push("label".into());
    header.push("domain".into());
    w.write_record(&header)?;
    source.write_csv(&mut w)?;
    target.write_csv(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Classes whose samples are subsampled, and the fraction kept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSpec {
    pub classes: Vec<usize>,
    pub keep_fraction: f64,
}

impl ShiftSpec {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(Error::Contract(format!(
                "keep fraction {} outside (0, 1]",
                self.keep_fraction
            )));
        }
        if self.classes.is_empty() {
            return Err(Error::Contract("shift needs at least one class".into()));
        }
        if let Some(c) = self.classes.iter().find(|&&c| c >= num_classes) {
            return Err(Error::Contract(format!("shift class {c} does not exist")));
        }
        Ok(())
    }
}

/// Keep `ceil(fraction * count)` uniformly chosen samples of each affected
/// class. Retained samples keep their original order.
pub fn subsample_label_shift(
    ds: &DomainDataset,
    spec: &ShiftSpec,
    seed: u64,
) -> Result<DomainDataset> {
    spec.validate(ds.num_classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![true; ds.len()];
    let mut affected: Vec<usize> = spec.classes.clone();
    affected.sort_unstable();
    affected.dedup();
    for c in affected {
        let members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == c).collect();
        if members.is_empty() {
            return Err(Error::DegenerateDataset(format!(
                "class {c} has no samples to keep"
            )));
        }
        let kept = ((spec.keep_fraction * members.len() as f64).ceil() as usize).min(members.len());
        for &i in &members {
            keep[i] = false;
        }
        for j in index::sample(&mut rng, members.len(), kept) {
            keep[members[j]] = true;
        }
    }
    let idx: Vec<usize> = (0..ds.len()).filter(|&i| keep[i]).collect();
    let labels = idx.iter().map(|&i| ds.labels[i]).collect();
    DomainDataset::new(
        ds.features.gather_rows(&idx),
        labels,
        ds.num_classes,
        ds.domain,
        format!(
            "{} | kept {} of classes {:?}",
            ds.provenance, spec.keep_fraction, spec.classes
        ),
    )
}

/// Parameters of the two-moons domain pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoMoonsSpec {
    pub n_per_domain: usize,
    pub noise_sd: f64,
    pub source_priors: [f64; 2],
    pub target_priors: [f64; 2],
    #[serde(default = "default_rotation")]
    pub rotation_deg: f64,
    pub seed: u64,
}

fn default_rotation() -> f64 {
    20.0
}

/// Centre of the two-moons point cloud; the target rotation pivots here.
pub const MOONS_CENTRE: [f64; 2] = [0.5, 0.25];

/// Class counts matching `priors` exactly, by largest remainder.
pub fn stratified_counts(n: usize, priors: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = priors.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut short = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..priors.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (raw[a] - raw[a].floor(), raw[b] - raw[b].floor());
        fb.partial_cmp(&fa).expect("finite").then(a.cmp(&b))
    });
    for &c in order.iter().cycle() {
        if short == 0 {
            break;
        }
        counts[c] += 1;
        short -= 1;
    }
    counts
}

fn moons_domain(
    n: usize,
    priors: [f64; 2],
    noise_sd: f64,
    rotation_deg: f64,
    domain: Domain,
    rng: &mut ChaCha8Rng,
) -> Result<DomainDataset> {
    let counts = stratified_counts(n, &priors);
    if counts.contains(&0) {
        eprintln!("warning: {domain} two-moons domain has an empty class (priors {priors:?})");
    }
    let noise = Normal::new(0.0, noise_sd.max(0.0)).map_err(|e| Error::Contract(e.to_string()))?;
    let (sin, cos) = rotation_deg.to_radians().sin_cos();
    let mut points = Vec::with_capacity(n);
    for (class, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            let t: f64 = rng.random_range(0.0..=PI);
            let (mut x, mut y) = if class == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            if noise_sd > 0.0 {
                x += noise.sample(rng);
                y += noise.sample(rng);
            }
            if rotation_deg != 0.0 {
                let (dx, dy) = (x - MOONS_CENTRE[0], y - MOONS_CENTRE[1]);
                x = MOONS_CENTRE[0] + cos * dx - sin * dy;
                y = MOONS_CENTRE[1] + sin * dx + cos * dy;
            }
            points.push(([x, y], class));
        }
    }
    points.shuffle(rng);
    let features = Array::new(n, 2, points.iter().flat_map(|(p, _)| *p).collect())?;
    let labels = points.iter().map(|&(_, c)| c).collect();
    DomainDataset::new(
        features,
        labels,
        2,
        domain,
        format!("two-moons priors {priors:?} rotation {rotation_deg} deg"),
    )
}

/// Source and target two-moons domains. The target is rotated about
/// [`MOONS_CENTRE`]; class counts match the priors exactly.
pub fn gen_two_moons(spec: &TwoMoonsSpec) -> Result<(DomainDataset, DomainDataset)> {
    for p in [spec.source_priors, spec.target_priors] {
        if p.iter().any(|&v| v < 0.0) || ((p[0] + p[1]) - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!("priors {p:?} must sum to 1")));
        }
    }
    if !(spec.noise_sd >= 0.0) {
        return Err(Error::Contract("noise_sd must be >= 0".into()));
    }
    if spec.n_per_domain == 0 {
        return Err(Error::DegenerateDataset("n_per_domain is 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(0);
    let source = moons_domain(
        spec.n_per_domain,
        spec.source_priors,
        spec.noise_sd,
        0.0,
        Domain::Source,
        &mut rng,
    )?;
    rng.set_stream(1);
    rng.set_word_pos(0);
    let target = moons_domain(
        spec.n_per_domain,
        spec.target_priors,
        spec.noise_sd,
        spec.rotation_deg,
        Domain::Target,
        &mut rng,
    )?;
    Ok((source, target))
}

pub const IDX_LABELS: u32 = 2049;
pub const IDX_IMAGES: u32 = 2051;

/// Unsigned-byte IDX container.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxTensor {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub payload: Vec<u8>,
}

impl IdxTensor {
    pub fn new(dims: Vec<usize>, payload: Vec<u8>) -> Result<Self> {
        let magic = match dims.len() {
            1 => IDX_LABELS,
            3 => IDX_IMAGES,
            r => return Err(Error::Format(format!("unsupported IDX rank {r}"))),
        };
        let expected: usize = dims.iter().product();
        if payload.len() != expected {
            return Err(Error::Length {
                expected,
                found: payload.len(),
            });
        }
        Ok(IdxTensor {
            magic,
            dims,
            payload,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + self.payload.len());
        out.extend_from_slice(&self.magic.to_be_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        out.extend_from_slice(&self.payload);
        out
    }
}

/// Parse a big-endian IDX file (`00 00 08 rank`, then `rank` u32 sizes).
pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    if bytes.len() < 4 {
        return Err(Error::Format(format!(
            "{} bytes is too short for a header",
            bytes.len()
        )));
    }
    let magic = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let rank = match magic {
        IDX_LABELS => 1,
        IDX_IMAGES => 3,
        other => return Err(Error::Format(format!("bad IDX magic {other:#010x}"))),
    };
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(Error::Length {
            expected: header,
            found: bytes.len(),
        });
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let expected: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() != expected {
        return Err(Error::Length {
            expected,
            found: payload.len(),
        });
    }
    Ok(IdxTensor {
        magic,
        dims,
        payload: payload.to_vec(),
    })
}

pub fn read_idx(path: &Path) -> Result<IdxTensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes)
}

/// `k x k` mean pooling of one `h x w` image stored in `[0, 1]`.
pub fn mean_pool(img: &[f64], h: usize, w: usize, k: usize) -> Result<Vec<f64>> {
    if k == 0 || !h.is_multiple_of(k) || !w.is_multiple_of(k) {
        return Err(Error::Contract(format!("cannot pool {h}x{w} by {k}")));
    }
    let (oh, ow) = (h / k, w / k);
    let mut out = vec![0.0; oh * ow];
    for r in 0..h {
        for c in 0..w {
            out[(r / k) * ow + c / k] += img[r * w + c];
        }
    }
    let area = (k * k) as f64;
    out.iter_mut().for_each(|v| *v /= area);
    Ok(out)
}

/// Images scaled to `[0, 1]`, optionally mean-pooled, then flattened.
pub fn idx_to_dataset(
    images: &IdxTensor,
    labels: &IdxTensor,
    num_classes: usize,
    pool: usize,
    domain: Domain,
    provenance: &str,
) -> Result<DomainDataset> {
    if images.magic != IDX_IMAGES || labels.magic != IDX_LABELS {
        return Err(Error::Format(
            "expected an image file and a label file".into(),
        ));
    }
    let (n, h, w) = (images.dims[0], images.dims[1], images.dims[2]);
    if labels.dims[0] != n {
        return Err(Error::Dimension(format!(
            "{n} images but {} labels",
            labels.dims[0]
        )));
    }
    let pool = pool.max(1);
    let width = (h / pool) * (w / pool);
    let mut data = Vec::with_capacity(n * width);
    for img in images.payload.chunks_exact(h * w) {
        let scaled: Vec<f64> = img.iter().map(|&b| f64::from(b) / 255.0).collect();
        if pool == 1 {
            data.extend(scaled);
        } else {
            data.extend(mean_pool(&scaled, h, w, pool)?);
        }
    }
    let labels: Vec<usize> = labels.payload.iter().map(|&b| b as usize).collect();
    DomainDataset::new(
        Array::new(n, width, data)?,
        labels,
        num_classes,
        domain,
        provenance,
    )
}

/// Seeded minibatch indices. Each epoch is a fresh permutation determined by
/// `(seed, epoch)`; a trailing partial batch is dropped.
#[derive(Clone, Debug)]
pub struct BatchIterator {
    n: usize,
    batch_size: usize,
    seed: u64,
    epochs: Option<usize>,
    epoch: usize,
    cursor: usize,
    perm: Vec<usize>,
}

impl BatchIterator {
    /// `epochs = None` streams forever.
    pub fn new(n: usize, batch_size: usize, seed: u64, epochs: Option<usize>) -> Result<Self> {
        if batch_size == 0 || batch_size > n {
            return Err(Error::Contract(format!(
                "batch size {batch_size} must be in 1..={n}"
            )));
        }
        let mut it = BatchIterator {
            n,
            batch_size,
            seed,
            epochs,
            epoch: 0,
            cursor: 0,
            perm: Vec::new(),
        };
        it.reshuffle();
        Ok(it)
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.n / self.batch_size
    }

    fn reshuffle(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.epoch as u64);
        self.perm = (0..self.n).collect();
        self.perm.shuffle(&mut rng);
        self.cursor = 0;
    }
}

impl Iterator for BatchIterator {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.cursor + self.batch_size > self.n {
            self.epoch += 1;
            self.reshuffle();
        }
        if self.epochs.is_some_and(|e| self.epoch >= e) {
            return None;
        }
        let out = self.perm[self.cursor..self.cursor + self.batch_size].to_vec();
        self.cursor += self.batch_size;
        Some(out)
    }
}
