//! The teacher/student network pair.
//!
//! Both branches share one architecture — a bare GC layer, a DGC block,
//! and a common FC + softmax head — and differ only in adjacency mask:
//! the teacher looks across all progress levels, the student only
//! backward. A forward pass records per-layer feature traces for both
//! branches so the losses can align them.
//!
//! Checkpoints use the `ASCC` container: magic, version, a flat-text
//! config block, then every named record (parameters, batch-norm running
//! statistics, optionally optimizer velocity buffers) as little-endian
//! 64-bit floats. Save → load → save is byte-identical.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

use crate::bytes::{ByteReader, ByteWriter};
use crate::config::{mask_from_name, mask_name, parse_flat, render_flat, RunConfig};
use crate::graph::{make_mask, MaskKind};
use crate::layers::{dgc_forward, gc_forward, DgcIds, GUnitIds, GcIds, LayerCfg};
use crate::numerics::{BnStats, BnStatsRef, Matrix2, Mode, NodeId, ParamMap, Tape};
use crate::rng::stream_rng;
use crate::{AscError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ASCC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Structural configuration of the network pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_levels: usize,
    pub feat_dim: usize,
    pub hidden: usize,
    pub n_classes: usize,
    pub dropout_p: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub stop_grad_similarity: bool,
    pub share_aprime: bool,
    pub dgc_share_weights: bool,
    pub dense_connections: bool,
    pub student_only: bool,
    pub teacher_mask: MaskKind,
    pub student_mask: MaskKind,
}

impl ModelConfig {
    pub fn from_run(cfg: &RunConfig) -> Self {
        ModelConfig {
            n_levels: cfg.n_levels,
            feat_dim: cfg.feat_dim,
            hidden: cfg.hidden,
            n_classes: cfg.n_classes,
            dropout_p: cfg.dropout_p,
            bn_eps: cfg.bn_eps,
            bn_momentum: cfg.bn_momentum,
            stop_grad_similarity: cfg.stop_grad_similarity,
            share_aprime: cfg.share_aprime,
            dgc_share_weights: cfg.dgc_share_weights,
            dense_connections: cfg.dense_connections,
            student_only: cfg.student_only,
            teacher_mask: cfg.teacher_mask,
            student_mask: cfg.student_mask,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(AscError::Param(msg.to_string()))
            }
        };
        check(self.n_levels >= 1, "n_levels must be at least 1")?;
        check(self.feat_dim >= 1, "feat_dim must be at least 1")?;
        check(self.hidden >= 1, "hidden width must be at least 1")?;
        check(self.n_classes >= 1, "n_classes must be at least 1")?;
        check(
            (0.0..1.0).contains(&self.dropout_p),
            "dropout_p must lie in [0, 1)",
        )?;
        check(self.bn_eps > 0.0, "bn_eps must be positive")?;
        check(
            (0.0..=1.0).contains(&self.bn_momentum),
            "bn_momentum must lie in [0, 1]",
        )?;
        check(
            !(self.share_aprime && self.student_only),
            "share_aprime requires the teacher branch",
        )?;
        Ok(())
    }

    fn to_map(&self) -> BTreeMap<String, String> {
        use crate::config::fmt_f64;
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("n_levels", self.n_levels.to_string());
        put("feat_dim", self.feat_dim.to_string());
        put("hidden", self.hidden.to_string());
        put("n_classes", self.n_classes.to_string());
        put("dropout_p", fmt_f64(self.dropout_p));
        put("bn_eps", fmt_f64(self.bn_eps));
        put("bn_momentum", fmt_f64(self.bn_momentum));
        put(
            "stop_grad_similarity",
            self.stop_grad_similarity.to_string(),
        );
        put("share_aprime", self.share_aprime.to_string());
        put("dgc_share_weights", self.dgc_share_weights.to_string());
        put("dense_connections", self.dense_connections.to_string());
        put("student_only", self.student_only.to_string());
        put("teacher_mask", mask_name(self.teacher_mask).to_string());
        put("student_mask", mask_name(self.student_mask).to_string());
        m
    }

    fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let get = |key: &str| -> Result<&String> {
            map.get(key)
                .ok_or_else(|| AscError::Param(format!("checkpoint config misses key `{key}`")))
        };
        let num = |key: &str| -> Result<usize> {
            get(key)?
                .parse()
                .map_err(|_| AscError::Param(format!("checkpoint config key `{key}` not a count")))
        };
        let real = |key: &str| -> Result<f64> {
            get(key)?
                .parse()
                .map_err(|_| AscError::Param(format!("checkpoint config key `{key}` not a real")))
        };
        let flag = |key: &str| -> Result<bool> {
            get(key)?
                .parse()
                .map_err(|_| AscError::Param(format!("checkpoint config key `{key}` not a bool")))
        };
        let cfg = ModelConfig {
            n_levels: num("n_levels")?,
            feat_dim: num("feat_dim")?,
            hidden: num("hidden")?,
            n_classes: num("n_classes")?,
            dropout_p: real("dropout_p")?,
            bn_eps: real("bn_eps")?,
            bn_momentum: real("bn_momentum")?,
            stop_grad_similarity: flag("stop_grad_similarity")?,
            share_aprime: flag("share_aprime")?,
            dgc_share_weights: flag("dgc_share_weights")?,
            dense_connections: flag("dense_connections")?,
            student_only: flag("student_only")?,
            teacher_mask: mask_from_name(get("teacher_mask")?)?,
            student_mask: mask_from_name(get("student_mask")?)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Running batch-norm statistics of one branch's two `g` units.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchBn {
    pub g1: BnStats,
    pub g2: BnStats,
}

impl BranchBn {
    fn new(hidden: usize) -> Self {
        BranchBn {
            g1: BnStats::new(hidden),
            g2: BnStats::new(hidden),
        }
    }
}

/// All running statistics of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBn {
    pub teacher: Option<BranchBn>,
    pub student: BranchBn,
}

/// Per-sample tape handles produced by one branch.
pub struct BranchTrace {
    /// GC-layer output per sample (N x hidden).
    pub f1: Vec<NodeId>,
    /// DGC-block output per sample (N x hidden).
    pub f2: Vec<NodeId>,
    /// Head output per sample (N x classes), pre-softmax.
    pub logits: Vec<NodeId>,
    /// Softmax rows of the logits.
    pub probs: Vec<NodeId>,
}

/// Everything one forward pass leaves on the tape.
pub struct BatchTrace {
    pub teacher: Option<BranchTrace>,
    pub student: BranchTrace,
    /// Stored-parameter name → leaf node, for gradient extraction.
    pub param_nodes: BTreeMap<String, NodeId>,
}

enum ParamKind {
    Weight { fan_in: usize },
    APrime,
    Gamma,
    ZeroFill,
}

/// Canonical parameter layout: name, shape, and init family, in the order
/// initialization draws random numbers.
fn param_specs(cfg: &ModelConfig) -> Vec<(String, usize, usize, ParamKind)> {
    let (n, d, h, c) = (cfg.n_levels, cfg.feat_dim, cfg.hidden, cfg.n_classes);
    let mut out = Vec::new();
    let branches: &[&str] = if cfg.student_only {
        &["student"]
    } else {
        &["teacher", "student"]
    };
    for &b in branches {
        let skip_aprime = b == "student" && cfg.share_aprime;
        if !skip_aprime {
            out.push((format!("{b}.gc.a_prime"), n, n, ParamKind::APrime));
        }
        out.push((
            format!("{b}.gc.weight"),
            d,
            h,
            ParamKind::Weight { fan_in: d },
        ));
        for g in [1usize, 2] {
            if g == 2 && cfg.dgc_share_weights {
                continue;
            }
            if !skip_aprime {
                out.push((format!("{b}.dgc.g{g}.a_prime"), n, n, ParamKind::APrime));
            }
            out.push((
                format!("{b}.dgc.g{g}.weight"),
                h,
                h,
                ParamKind::Weight { fan_in: h },
            ));
            out.push((format!("{b}.dgc.g{g}.bn.gamma"), 1, h, ParamKind::Gamma));
            out.push((format!("{b}.dgc.g{g}.bn.beta"), 1, h, ParamKind::ZeroFill));
        }
    }
    out.push((
        "head.weight".to_string(),
        h,
        c,
        ParamKind::Weight { fan_in: h },
    ));
    out.push(("head.bias".to_string(), 1, c, ParamKind::ZeroFill));
    out
}

/// Maps a logical parameter name to the stored name under the sharing
/// flags: `dgc_share_weights` aliases each g2 to its g1, `share_aprime`
/// aliases student adjacency weights to the teacher's.
fn resolve_name(cfg: &ModelConfig, name: &str) -> String {
    let mut name = name.to_string();
    if cfg.dgc_share_weights {
        name = name.replace(".dgc.g2.", ".dgc.g1.");
    }
    if cfg.share_aprime && name.starts_with("student.") && name.ends_with(".a_prime") {
        name = name.replacen("student.", "teacher.", 1);
    }
    name
}

/// Borrowed running statistics for the branches a forward pass will run.
struct BnRefs<'a> {
    teacher: Option<(BnStatsRef<'a>, BnStatsRef<'a>)>,
    student: (BnStatsRef<'a>, BnStatsRef<'a>),
}

/// Teacher/student model with shared head.
#[derive(Debug, Clone, PartialEq)]
pub struct AscNet {
    pub config: ModelConfig,
    pub params: ParamMap,
    pub bn: ModelBn,
}

impl AscNet {
    /// Initializes all parameters from the `init` stream of `seed`:
    /// weights uniform in ±sqrt(1/fan_in), adjacency weights 1 ± 0.01
    /// noise, batch-norm scale 1 / shift 0, zero head bias. Parameters are
    /// drawn in the canonical order teacher → student → head.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, "init", &[]);
        let mut model = Self::build_zeroed(config)?;
        for (name, rows, cols, kind) in param_specs(&model.config) {
            let mut m = Matrix2::zeros(rows, cols);
            match kind {
                ParamKind::Weight { fan_in } => {
                    let bound = (1.0 / fan_in as f64).sqrt();
                    for v in m.data_mut() {
                        *v = rng.gen_range(-bound..bound);
                    }
                }
                ParamKind::APrime => {
                    for v in m.data_mut() {
                        *v = 1.0 + rng.gen_range(-0.01..0.01);
                    }
                }
                ParamKind::Gamma => {
                    for v in m.data_mut() {
                        *v = 1.0;
                    }
                }
                ParamKind::ZeroFill => {}
            }
            model.params.insert(name, m);
        }
        Ok(model)
    }

    /// Structure without initialization: zero parameters, fresh statistics.
    pub fn build_zeroed(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamMap::new();
        for (name, rows, cols, _) in param_specs(&config) {
            params.insert(name, Matrix2::zeros(rows, cols));
        }
        let bn = ModelBn {
            teacher: (!config.student_only).then(|| BranchBn::new(config.hidden)),
            student: BranchBn::new(config.hidden),
        };
        Ok(AscNet { config, params, bn })
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(|m| m.len()).sum()
    }

    /// Training forward: batch statistics update, dropout drawn from `rng`
    /// in the order teacher-g1, teacher-g2, student-g1, student-g2.
    pub fn forward_train<R: Rng>(
        &mut self,
        tape: &mut Tape,
        batch: &[&Matrix2],
        rng: &mut R,
    ) -> Result<BatchTrace> {
        let config = self.config.clone();
        let ModelBn { teacher, student } = &mut self.bn;
        let bn = BnRefs {
            teacher: teacher
                .as_mut()
                .map(|t| (BnStatsRef::Mut(&mut t.g1), BnStatsRef::Mut(&mut t.g2))),
            student: (
                BnStatsRef::Mut(&mut student.g1),
                BnStatsRef::Mut(&mut student.g2),
            ),
        };
        forward_impl(
            &config,
            &self.params,
            bn,
            tape,
            batch,
            Mode::Train,
            !config.student_only,
            rng,
        )
    }

    /// Evaluation forward: running statistics, no dropout, deterministic.
    pub fn forward_eval(&self, tape: &mut Tape, batch: &[&Matrix2]) -> Result<BatchTrace> {
        let bn = BnRefs {
            teacher: self
                .bn
                .teacher
                .as_ref()
                .map(|t| (BnStatsRef::Ref(&t.g1), BnStatsRef::Ref(&t.g2))),
            student: (BnStatsRef::Ref(&self.bn.student.g1), BnStatsRef::Ref(&self.bn.student.g2)),
        };
        let mut rng = stream_rng(0, "eval-unused", &[]);
        forward_impl(
            &self.config,
            &self.params,
            bn,
            tape,
            batch,
            Mode::Eval,
            !self.config.student_only,
            &mut rng,
        )
    }

    /// Deployment path: student branch only, at one progress level
    /// (1-based). Returns the argmax class (lowest index on ties) and the
    /// probability row.
    pub fn predict(&self, features: &Matrix2, level: usize) -> Result<(usize, Vec<f64>)> {
        if level < 1 || level > self.config.n_levels {
            return Err(AscError::Param(format!(
                "progress level {level} outside 1..={}",
                self.config.n_levels
            )));
        }
        let probs = self.student_probs(features)?;
        let row = probs.row(level - 1).to_vec();
        Ok((argmax(&row), row))
    }

    /// Student-branch class probabilities for one sample: row `n-1` holds
    /// the distribution predicted at progress level `n`. Runs the student
    /// branch only, in evaluation mode.
    pub fn student_probs(&self, features: &Matrix2) -> Result<Matrix2> {
        let mut tape = Tape::new();
        let bn = BnRefs {
            teacher: None,
            student: (BnStatsRef::Ref(&self.bn.student.g1), BnStatsRef::Ref(&self.bn.student.g2)),
        };
        let mut rng = stream_rng(0, "eval-unused", &[]);
        let trace = forward_impl(
            &self.config,
            &self.params,
            bn,
            &mut tape,
            &[features],
            Mode::Eval,
            false,
            &mut rng,
        )?;
        Ok(tape.value(trace.student.probs[0]).clone())
    }

    /// All records a checkpoint stores: parameters, BN running statistics
    /// (`<unit>.bn.mean/.var`), and optional velocity buffers
    /// (`opt.velocity.<param>`).
    fn record_map(&self, velocity: Option<&ParamMap>) -> BTreeMap<String, Matrix2> {
        let mut rec: BTreeMap<String, Matrix2> = self.params.clone();
        let put_stats = |rec: &mut BTreeMap<String, Matrix2>, prefix: &str, s: &BnStats| {
            rec.insert(
                format!("{prefix}.mean"),
                Matrix2::from_vec(1, s.mean.len(), s.mean.clone()).unwrap(),
            );
            rec.insert(
                format!("{prefix}.var"),
                Matrix2::from_vec(1, s.var.len(), s.var.clone()).unwrap(),
            );
        };
        if let Some(t) = &self.bn.teacher {
            put_stats(&mut rec, "teacher.dgc.g1.bn", &t.g1);
            put_stats(&mut rec, "teacher.dgc.g2.bn", &t.g2);
        }
        put_stats(&mut rec, "student.dgc.g1.bn", &self.bn.student.g1);
        put_stats(&mut rec, "student.dgc.g2.bn", &self.bn.student.g2);
        if let Some(vel) = velocity {
            for (name, m) in vel {
                rec.insert(format!("opt.velocity.{name}"), m.clone());
            }
        }
        rec
    }

    pub fn to_checkpoint_bytes(&self, velocity: Option<&ParamMap>) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        let cfg_text = render_flat(&self.config.to_map());
        w.u32(cfg_text.len() as u32);
        w.bytes(cfg_text.as_bytes());
        let records = self.record_map(velocity);
        w.u32(records.len() as u32);
        for (name, m) in &records {
            w.u32(name.len() as u32);
            w.bytes(name.as_bytes());
            w.u32(m.rows() as u32);
            w.u32(m.cols() as u32);
            for &v in m.data() {
                w.f64(v);
            }
        }
        w.into_vec()
    }

    pub fn save_checkpoint(&self, path: &Path, velocity: Option<&ParamMap>) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_bytes(velocity))
            .map_err(|e| AscError::io(path, e))
    }

    pub fn from_checkpoint_bytes(data: &[u8]) -> Result<(Self, Option<ParamMap>)> {
        let mut r = ByteReader::new(data);
        r.magic(CHECKPOINT_MAGIC, "checkpoint")?;
        let version_offset = r.offset();
        let version = r.u32("checkpoint version")?;
        if version != CHECKPOINT_VERSION {
            return Err(AscError::Parse {
                offset: version_offset,
                what: format!(
                    "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
                ),
            });
        }
        let cfg_len = r.u32("config block length")? as usize;
        let cfg_offset = r.offset();
        let cfg_bytes = r.take(cfg_len, "config block")?;
        let cfg_text = std::str::from_utf8(cfg_bytes).map_err(|e| AscError::Parse {
            offset: cfg_offset,
            what: format!("config block is not UTF-8: {e}"),
        })?;
        let config = ModelConfig::from_map(&parse_flat(cfg_text)?)?;

        let count = r.u32("record count")?;
        let mut records: BTreeMap<String, Matrix2> = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.u32("record name length")? as usize;
            let name_offset = r.offset();
            let name = String::from_utf8(r.take(name_len, "record name")?.to_vec()).map_err(
                |e| AscError::Parse {
                    offset: name_offset,
                    what: format!("record name is not UTF-8: {e}"),
                },
            )?;
            let rows = r.u32("record rows")? as usize;
            let cols = r.u32("record cols")? as usize;
            let mut values = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                values.push(r.f64("record values")?);
            }
            let m = Matrix2::from_vec(rows, cols, values).map_err(|_| AscError::Parse {
                offset: name_offset,
                what: format!("record `{name}` declares an empty shape"),
            })?;
            if records.insert(name.clone(), m).is_some() {
                return Err(AscError::CheckpointMismatch(format!(
                    "duplicate record `{name}`"
                )));
            }
        }
        r.expect_end("checkpoint")?;
        Self::from_records(config, records)
    }

    pub fn load_checkpoint(path: &Path) -> Result<(Self, Option<ParamMap>)> {
        let data = std::fs::read(path).map_err(|e| AscError::io(path, e))?;
        Self::from_checkpoint_bytes(&data)
    }

    fn from_records(
        config: ModelConfig,
        mut records: BTreeMap<String, Matrix2>,
    ) -> Result<(Self, Option<ParamMap>)> {
        let mut model = Self::build_zeroed(config)?;
        for (name, slot) in model.params.iter_mut() {
            let rec = records.remove(name).ok_or_else(|| {
                AscError::CheckpointMismatch(format!("missing parameter record `{name}`"))
            })?;
            if rec.shape() != slot.shape() {
                return Err(AscError::CheckpointMismatch(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    rec.shape(),
                    slot.shape()
                )));
            }
            *slot = rec;
        }
        let hidden = model.config.hidden;
        let mut stat_slots: Vec<(String, &mut BnStats)> = Vec::new();
        if let Some(t) = model.bn.teacher.as_mut() {
            stat_slots.push(("teacher.dgc.g1.bn".to_string(), &mut t.g1));
            stat_slots.push(("teacher.dgc.g2.bn".to_string(), &mut t.g2));
        }
        stat_slots.push(("student.dgc.g1.bn".to_string(), &mut model.bn.student.g1));
        stat_slots.push(("student.dgc.g2.bn".to_string(), &mut model.bn.student.g2));
        for (prefix, slot) in stat_slots {
            for (field, target) in [("mean", &mut slot.mean), ("var", &mut slot.var)] {
                let name = format!("{prefix}.{field}");
                let rec = records.remove(&name).ok_or_else(|| {
                    AscError::CheckpointMismatch(format!("missing statistics record `{name}`"))
                })?;
                if rec.shape() != (1, hidden) {
                    return Err(AscError::CheckpointMismatch(format!(
                        "statistics `{name}` has shape {:?}, expected {:?}",
                        rec.shape(),
                        (1, hidden)
                    )));
                }
                *target = rec.data().to_vec();
            }
        }
        let mut velocity = ParamMap::new();
        let velocity_names: Vec<String> = records
            .keys()
            .filter(|k| k.starts_with("opt.velocity."))
            .cloned()
            .collect();
        for name in velocity_names {
            let m = records.remove(&name).unwrap();
            velocity.insert(name["opt.velocity.".len()..].to_string(), m);
        }
        if let Some(name) = records.keys().next() {
            return Err(AscError::CheckpointMismatch(format!(
                "unrecognized record `{name}`"
            )));
        }
        let velocity = if velocity.is_empty() {
            None
        } else {
            for (name, m) in &velocity {
                let param = model.params.get(name).ok_or_else(|| {
                    AscError::CheckpointMismatch(format!(
                        "velocity record for unknown parameter `{name}`"
                    ))
                })?;
                if m.shape() != param.shape() {
                    return Err(AscError::CheckpointMismatch(format!(
                        "velocity `{name}` has shape {:?}, expected {:?}",
                        m.shape(),
                        param.shape()
                    )));
                }
            }
            if velocity.len() != model.params.len() {
                return Err(AscError::CheckpointMismatch(format!(
                    "checkpoint has {} velocity records for {} parameters",
                    velocity.len(),
                    model.params.len()
                )));
            }
            Some(velocity)
        };
        Ok((model, velocity))
    }
}

/// Index of the largest entry, lowest index winning ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (idx, &p) in row.iter().enumerate() {
        if p > row[best] {
            best = idx;
        }
    }
    best
}

#[allow(clippy::too_many_arguments)]
fn forward_impl<R: Rng>(
    config: &ModelConfig,
    params: &ParamMap,
    bn: BnRefs<'_>,
    tape: &mut Tape,
    batch: &[&Matrix2],
    mode: Mode,
    include_teacher: bool,
    rng: &mut R,
) -> Result<BatchTrace> {
    if batch.is_empty() {
        return Err(AscError::Param("forward on an empty batch".into()));
    }
    let expected = (config.n_levels, config.feat_dim);
    for f in batch {
        if f.shape() != expected {
            return Err(AscError::Shape {
                op: "forward",
                lhs: f.shape(),
                rhs: expected,
            });
        }
        if !f.is_finite() {
            return Err(AscError::Param("non-finite feature input".into()));
        }
    }

    let mut nodes: BTreeMap<String, NodeId> = BTreeMap::new();
    for (name, value) in params {
        nodes.insert(name.clone(), tape.leaf(value.clone()));
    }
    let feats: Vec<NodeId> = batch.iter().map(|f| tape.leaf((*f).clone())).collect();
    let layer_cfg = LayerCfg {
        dropout_p: config.dropout_p,
        bn_eps: config.bn_eps,
        bn_momentum: config.bn_momentum,
        stop_grad_similarity: config.stop_grad_similarity,
    };

    let BnRefs {
        teacher: bn_teacher,
        student: bn_student,
    } = bn;

    let teacher = if include_teacher && !config.student_only {
        let (bn1, bn2) = bn_teacher.ok_or_else(|| {
            AscError::Param("teacher running statistics missing for teacher forward".into())
        })?;
        let mask = tape.leaf(make_mask(config.teacher_mask, config.n_levels)?);
        Some(run_branch(
            tape, config, &nodes, "teacher", mask, &feats, bn1, bn2, &layer_cfg, mode, rng,
        )?)
    } else {
        None
    };

    let mask = tape.leaf(make_mask(config.student_mask, config.n_levels)?);
    let (bn1, bn2) = bn_student;
    let student = run_branch(
        tape, config, &nodes, "student", mask, &feats, bn1, bn2, &layer_cfg, mode, rng,
    )?;

    Ok(BatchTrace {
        teacher,
        student,
        param_nodes: nodes,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_branch<R: Rng>(
    tape: &mut Tape,
    config: &ModelConfig,
    nodes: &BTreeMap<String, NodeId>,
    branch: &str,
    mask: NodeId,
    feats: &[NodeId],
    bn1: BnStatsRef<'_>,
    bn2: BnStatsRef<'_>,
    layer_cfg: &LayerCfg,
    mode: Mode,
    rng: &mut R,
) -> Result<BranchTrace> {
    let node = |name: String| nodes[&resolve_name(config, &name)];
    let gc = GcIds {
        a_prime: node(format!("{branch}.gc.a_prime")),
        weight: node(format!("{branch}.gc.weight")),
    };
    let unit = |g: usize| GUnitIds {
        gc: GcIds {
            a_prime: node(format!("{branch}.dgc.g{g}.a_prime")),
            weight: node(format!("{branch}.dgc.g{g}.weight")),
        },
        gamma: node(format!("{branch}.dgc.g{g}.bn.gamma")),
        beta: node(format!("{branch}.dgc.g{g}.bn.beta")),
    };
    let dgc = DgcIds {
        g1: unit(1),
        g2: unit(2),
    };

    let f1 = gc_forward(tape, mask, &gc, feats, layer_cfg.stop_grad_similarity)?;
    let f2 = dgc_forward(
        tape,
        mask,
        &dgc,
        &f1,
        bn1,
        bn2,
        layer_cfg,
        mode,
        config.dense_connections,
        rng,
    )?;

    let head_w = nodes["head.weight"];
    let head_b = nodes["head.bias"];
    let mut logits = Vec::with_capacity(f2.len());
    let mut probs = Vec::with_capacity(f2.len());
    for &f in &f2 {
        let raw = tape.matmul(f, head_w)?;
        let shifted = tape.add_row_bias(raw, head_b)?;
        logits.push(shifted);
        probs.push(tape.softmax_rows(shifted));
    }
    Ok(BranchTrace {
        f1,
        f2,
        logits,
        probs,
    })
}
