//! Feature containers and synthetic data generation.
//!
//! A video sample is a stack of per-progress-level feature vectors: row `n`
//! (0-based `n-1`) holds the clip-level feature extracted from the first
//! `n/N` fraction of the video. Features are stored on disk as little-endian
//! `f32` (matching typical extracted-feature precision) and promoted to `f64`
//! in memory. The synthetic generator rounds every value through `f32` at
//! creation time so that a write → load round trip is bitwise lossless.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::bytes::{ByteReader, ByteWriter};
use crate::config::RunConfig;
use crate::error::AscError;
use crate::numerics::Matrix2;
use crate::rng::{fnv1a, stream_rng};
use crate::Result;

/// Magic bytes prefixing a feature container file.
pub const FEATURES_MAGIC: &[u8; 4] = b"ASCF";
/// Current feature container format version.
pub const FEATURES_VERSION: u32 = 1;

/// Which partition of a corpus a dataset represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One video: an `n_levels x feat_dim` feature stack plus its action label.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    /// Per-progress-level features, row `l` = level `l+1`.
    pub features: Matrix2,
    /// Action class index in `0..n_classes`.
    pub label: usize,
    /// Stable identifier for the source video. The on-disk container stores
    /// an 8-byte hash of this string; identifiers that are already 16
    /// lowercase hex digits are treated as the hash itself, so load → write
    /// preserves them exactly.
    pub source_id: String,
}

/// A labelled collection of samples sharing one feature geometry.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<VideoSample>,
    pub n_classes: usize,
    pub n_levels: usize,
    pub feat_dim: usize,
    pub split: Split,
}

impl Dataset {
    /// Builds a dataset and checks every sample against the declared geometry.
    pub fn new(
        samples: Vec<VideoSample>,
        n_classes: usize,
        n_levels: usize,
        feat_dim: usize,
        split: Split,
    ) -> Result<Self> {
        if n_classes == 0 {
            return Err(AscError::Param("dataset must declare at least one class".into()));
        }
        if n_levels == 0 || feat_dim == 0 {
            return Err(AscError::Param(
                "dataset must declare positive n_levels and feat_dim".into(),
            ));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.features.rows() != n_levels || s.features.cols() != feat_dim {
                return Err(AscError::Shape {
                    op: "dataset sample features",
                    lhs: (s.features.rows(), s.features.cols()),
                    rhs: (n_levels, feat_dim),
                });
            }
            if s.label >= n_classes {
                return Err(AscError::Param(format!(
                    "sample {i} has label {} but dataset declares {} classes",
                    s.label, n_classes
                )));
            }
        }
        Ok(Self { samples, n_classes, n_levels, feat_dim, split })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Fraction of the video observed at progress level `n` (1-based) out of
/// `n_levels` total levels.
pub fn progress_ratio(level: usize, n_levels: usize) -> Result<f64> {
    if n_levels == 0 {
        return Err(AscError::Param("n_levels must be positive".into()));
    }
    if level == 0 || level > n_levels {
        return Err(AscError::Param(format!(
            "progress level {level} out of range 1..={n_levels}"
        )));
    }
    Ok(level as f64 / n_levels as f64)
}

/// Hash a source identifier to its on-disk 8-byte form. Identifiers that are
/// already 16 lowercase hex digits are decoded verbatim so previously loaded
/// samples round-trip bitwise.
fn source_hash(id: &str) -> u64 {
    if id.len() == 16
        && id.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
    {
        u64::from_str_radix(id, 16).expect("validated hex")
    } else {
        fnv1a(id.as_bytes())
    }
}

/// Serializes a dataset to the feature container format, returning the number
/// of bytes written.
///
/// Layout: `"ASCF"` magic, `u32` version, `u32` sample count, `u32` n_levels,
/// `u32` feat_dim, `u32` n_classes, then per sample a `u32` label, an 8-byte
/// source-id hash, and `n_levels * feat_dim` little-endian `f32` values in
/// row-major order.
pub fn write_features(dataset: &Dataset, path: &Path) -> Result<u64> {
    if dataset.samples.len() > u32::MAX as usize {
        return Err(AscError::Param("too many samples for container format".into()));
    }
    let mut w = ByteWriter::new();
    w.bytes(FEATURES_MAGIC);
    w.u32(FEATURES_VERSION);
    w.u32(dataset.samples.len() as u32);
    w.u32(dataset.n_levels as u32);
    w.u32(dataset.feat_dim as u32);
    w.u32(dataset.n_classes as u32);
    for (i, s) in dataset.samples.iter().enumerate() {
        if s.features.rows() != dataset.n_levels || s.features.cols() != dataset.feat_dim {
            return Err(AscError::Shape {
                op: "write_features sample",
                lhs: (s.features.rows(), s.features.cols()),
                rhs: (dataset.n_levels, dataset.feat_dim),
            });
        }
        if s.label >= dataset.n_classes {
            return Err(AscError::Param(format!(
                "sample {i} has label {} but dataset declares {} classes",
                s.label, dataset.n_classes
            )));
        }
        for &v in s.features.data() {
            if !v.is_finite() {
                return Err(AscError::Param(format!(
                    "sample {i} contains a non-finite feature value"
                )));
            }
        }
        w.u32(s.label as u32);
        w.u64(source_hash(&s.source_id));
        for &v in s.features.data() {
            w.f32(v as f32);
        }
    }
    let bytes = w.into_vec();
    let n = bytes.len() as u64;
    std::fs::write(path, &bytes).map_err(|e| AscError::io(path, e))?;
    Ok(n)
}

/// Loads a feature container written by [`write_features`]. Parse failures
/// name the byte offset at which they were detected.
pub fn load_features(path: &Path, split: Split) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| AscError::io(path, e))?;
    let mut r = ByteReader::new(&bytes);
    r.magic(FEATURES_MAGIC, "feature container")?;
    let version = r.u32("container version")?;
    if version != FEATURES_VERSION {
        return Err(AscError::Parse {
            offset: 4,
            what: format!("unsupported container version {version}"),
        });
    }
    let count = r.u32("sample count")? as usize;
    let n_levels = r.u32("n_levels")? as usize;
    let feat_dim = r.u32("feat_dim")? as usize;
    let n_classes = r.u32("n_classes")? as usize;
    if n_levels == 0 || feat_dim == 0 || n_classes == 0 {
        return Err(AscError::Parse {
            offset: 12,
            what: format!(
                "container declares degenerate geometry (levels {n_levels}, dim {feat_dim}, classes {n_classes})"
            ),
        });
    }
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let label_offset = r.offset();
        let label = r.u32(&format!("sample {i} label"))? as usize;
        if label >= n_classes {
            return Err(AscError::Parse {
                offset: label_offset,
                what: format!(
                    "sample {i} label {label} exceeds declared class count {n_classes}"
                ),
            });
        }
        let hash = r.u64(&format!("sample {i} source id"))?;
        let mut values = Vec::with_capacity(n_levels * feat_dim);
        for j in 0..n_levels * feat_dim {
            values.push(r.f32(&format!("sample {i} feature {j}"))? as f64);
        }
        samples.push(VideoSample {
            features: Matrix2::from_vec(n_levels, feat_dim, values)?,
            label,
            source_id: format!("{hash:016x}"),
        });
    }
    r.expect_end("feature container")?;
    Dataset::new(samples, n_classes, n_levels, feat_dim, split)
}

/// Parameters of the synthetic early-action corpus.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub n_levels: usize,
    pub feat_dim: usize,
    pub samples_per_class: usize,
    /// Pairs of class indices that share a common early-progress trajectory.
    pub ambiguity_pairs: Vec<(usize, usize)>,
    /// Standard deviation of the per-value gaussian noise.
    pub noise_sigma: f64,
    /// Per-level convergence rate towards the class prototype, in `(0, 1]`.
    pub convergence_rate: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn from_run(cfg: &RunConfig) -> Self {
        Self {
            n_classes: cfg.synth_n_classes,
            n_levels: cfg.synth_n_levels,
            feat_dim: cfg.synth_feat_dim,
            samples_per_class: cfg.synth_samples_per_class,
            ambiguity_pairs: cfg.synth_ambiguity_pairs.clone(),
            noise_sigma: cfg.synth_noise_sigma,
            convergence_rate: cfg.synth_convergence_rate,
            seed: cfg.seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_classes == 0 {
            return Err(AscError::Param("synthetic corpus needs at least one class".into()));
        }
        if self.n_levels == 0 || self.feat_dim == 0 {
            return Err(AscError::Param(
                "synthetic corpus needs positive n_levels and feat_dim".into(),
            ));
        }
        if self.samples_per_class < 2 {
            return Err(AscError::Param(
                "samples_per_class must be at least 2 so both splits are non-empty".into(),
            ));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(AscError::Param(format!(
                "noise_sigma must be finite and non-negative, got {}",
                self.noise_sigma
            )));
        }
        if !(self.convergence_rate > 0.0 && self.convergence_rate <= 1.0) {
            return Err(AscError::Param(format!(
                "convergence_rate must lie in (0, 1], got {}",
                self.convergence_rate
            )));
        }
        for &(a, b) in &self.ambiguity_pairs {
            if a >= self.n_classes || b >= self.n_classes {
                return Err(AscError::Param(format!(
                    "ambiguity pair ({a}, {b}) references a class outside 0..{}",
                    self.n_classes
                )));
            }
            if a == b {
                return Err(AscError::Param(format!(
                    "ambiguity pair ({a}, {b}) must name two distinct classes"
                )));
            }
        }
        Ok(())
    }
}

fn unit_gaussian<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.iter().map(|x| x / norm).collect();
        }
    }
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter().map(|x| x / norm).collect()
    } else {
        v.to_vec()
    }
}

/// Generates a synthetic early-action corpus and splits it 80/20 into train
/// and test partitions by per-class sample index.
///
/// Each class `c` gets a unit-norm gaussian prototype `p_c`. Classes joined by
/// an ambiguity pair share a start direction (the normalized midpoint of
/// their prototypes); all remaining classes share one corpus-wide start
/// direction. The level-`n` feature interpolates start towards `p_c` with
/// weight `alpha_n = 1 - (1 - rate)^n`, is renormalized, and perturbed with
/// gaussian noise — so early levels of paired classes are nearly
/// indistinguishable while late levels approach the class prototype. With
/// `rate = 1` the interpolation collapses to `p_c` exactly at every level.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let mut proto_rng = stream_rng(spec.seed, "synth-prototypes", &[]);
    let prototypes: Vec<Vec<f64>> =
        (0..spec.n_classes).map(|_| unit_gaussian(spec.feat_dim, &mut proto_rng)).collect();
    let shared_start = unit_gaussian(spec.feat_dim, &mut proto_rng);

    // Map each class to its start direction.
    let mut starts: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for &(a, b) in &spec.ambiguity_pairs {
        let mid: Vec<f64> = prototypes[a]
            .iter()
            .zip(prototypes[b].iter())
            .map(|(x, y)| 0.5 * (x + y))
            .collect();
        let mid = normalize(&mid);
        starts.insert(a, mid.clone());
        starts.insert(b, mid);
    }
    for c in 0..spec.n_classes {
        starts.entry(c).or_insert_with(|| shared_start.clone());
    }

    let train_per_class =
        (spec.samples_per_class * 4 / 5).clamp(1, spec.samples_per_class - 1);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..spec.n_classes {
        let proto = &prototypes[c];
        let start = &starts[&c];
        for s in 0..spec.samples_per_class {
            let mut rng = stream_rng(spec.seed, "synth-noise", &[c as u64, s as u64]);
            let mut values = Vec::with_capacity(spec.n_levels * spec.feat_dim);
            for level in 1..=spec.n_levels {
                let alpha = 1.0 - (1.0 - spec.convergence_rate).powi(level as i32);
                let row: Vec<f64> = if alpha == 1.0 {
                    proto.clone()
                } else {
                    let mixed: Vec<f64> = start
                        .iter()
                        .zip(proto.iter())
                        .map(|(s, p)| (1.0 - alpha) * s + alpha * p)
                        .collect();
                    normalize(&mixed)
                };
                for v in row {
                    let noisy = if spec.noise_sigma > 0.0 {
                        v + spec.noise_sigma * rng.sample::<f64, _>(StandardNormal)
                    } else {
                        v
                    };
                    // Round through f32 so disk round trips are bitwise exact.
                    values.push(noisy as f32 as f64);
                }
            }
            let sample = VideoSample {
                features: Matrix2::from_vec(spec.n_levels, spec.feat_dim, values)?,
                label: c,
                // Canonical 16-hex identifiers survive a container round trip.
                source_id: format!("{:016x}", fnv1a(format!("synth-c{c}-s{s}").as_bytes())),
            };
            if s < train_per_class {
                train.push(sample);
            } else {
                test.push(sample);
            }
        }
    }
    Ok((
        Dataset::new(train, spec.n_classes, spec.n_levels, spec.feat_dim, Split::Train)?,
        Dataset::new(test, spec.n_classes, spec.n_levels, spec.feat_dim, Split::Test)?,
    ))
}
