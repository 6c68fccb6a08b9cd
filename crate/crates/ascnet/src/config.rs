//! Flat `key = value` run configuration.
//!
//! One dotted namespace covers the model, training, synthesis, data paths,
//! and ablation selection. Files use `#` comments and blank lines freely;
//! rendering is deterministic (sorted keys) so an echoed config is
//! diff-friendly and reloads to an equal value.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::AscError;
use crate::graph::MaskKind;
use crate::Result;

/// Parses flat `key = value` text. Later assignments to the same key win.
pub fn parse_flat(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            AscError::Param(format!(
                "config line {}: expected `key = value`, got `{raw}`",
                lineno + 1
            ))
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(AscError::Param(format!(
                "config line {}: empty key",
                lineno + 1
            )));
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Renders a key/value map as sorted `key = value` lines.
pub fn render_flat(map: &BTreeMap<String, String>) -> String {
    let mut out = String::new();
    for (k, v) in map {
        let _ = writeln!(out, "{k} = {v}");
    }
    out
}

/// Complete, resolved configuration of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // Model.
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
    pub detach_teacher_in_distill: bool,
    pub dense_connections: bool,
    pub student_only: bool,
    pub teacher_mask: MaskKind,
    pub student_mask: MaskKind,
    pub precision: String,
    // Training.
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_decay: f64,
    pub lr_milestones: Vec<usize>,
    pub eval_every: usize,
    pub seed: u64,
    // Loss ablations.
    pub use_mse_loss: bool,
    pub use_mmd_loss: bool,
    // Synthetic data.
    pub synth_n_classes: usize,
    pub synth_n_levels: usize,
    pub synth_feat_dim: usize,
    pub synth_samples_per_class: usize,
    pub synth_ambiguity_pairs: Vec<(usize, usize)>,
    pub synth_noise_sigma: f64,
    pub synth_convergence_rate: f64,
    // Paths.
    pub train_path: String,
    pub test_path: String,
    // Ablation suite.
    pub ablation_variant: String,
    pub ablation_seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n_levels: 10,
            feat_dim: 32,
            hidden: 64,
            n_classes: 6,
            dropout_p: 0.5,
            bn_eps: 1e-5,
            bn_momentum: 0.9,
            stop_grad_similarity: false,
            share_aprime: false,
            dgc_share_weights: false,
            detach_teacher_in_distill: false,
            dense_connections: true,
            student_only: false,
            teacher_mask: MaskKind::TeacherBidirectional,
            student_mask: MaskKind::StudentCausal,
            precision: "f64".to_string(),
            epochs: 200,
            batch_size: 16,
            lr_init: 1e-4,
            lr_decay: 0.95,
            lr_milestones: vec![100, 150, 250, 350],
            eval_every: 10,
            seed: 0,
            use_mse_loss: true,
            use_mmd_loss: true,
            synth_n_classes: 6,
            synth_n_levels: 10,
            synth_feat_dim: 32,
            synth_samples_per_class: 200,
            synth_ambiguity_pairs: vec![(0, 1), (2, 3), (4, 5)],
            synth_noise_sigma: 0.15,
            synth_convergence_rate: 0.35,
            train_path: "train.ascf".to_string(),
            test_path: "test.ascf".to_string(),
            ablation_variant: "full".to_string(),
            ablation_seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

pub fn mask_name(kind: MaskKind) -> &'static str {
    match kind {
        MaskKind::TeacherBidirectional => "bidirectional",
        MaskKind::StudentCausal => "causal",
        MaskKind::Diagonal => "diagonal",
    }
}

pub fn mask_from_name(name: &str) -> Result<MaskKind> {
    match name {
        "bidirectional" => Ok(MaskKind::TeacherBidirectional),
        "causal" => Ok(MaskKind::StudentCausal),
        "diagonal" => Ok(MaskKind::Diagonal),
        other => Err(AscError::Param(format!(
            "unknown mask kind `{other}` (expected bidirectional|causal|diagonal)"
        ))),
    }
}

impl RunConfig {
    /// Full key/value view; `render_flat` of this is the echoed config.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("model.n_levels", self.n_levels.to_string());
        put("model.feat_dim", self.feat_dim.to_string());
        put("model.hidden", self.hidden.to_string());
        put("model.n_classes", self.n_classes.to_string());
        put("model.dropout_p", fmt_f64(self.dropout_p));
        put("model.bn_eps", fmt_f64(self.bn_eps));
        put("model.bn_momentum", fmt_f64(self.bn_momentum));
        put(
            "model.stop_grad_similarity",
            self.stop_grad_similarity.to_string(),
        );
        put("model.share_aprime", self.share_aprime.to_string());
        put("model.dgc_share_weights", self.dgc_share_weights.to_string());
        put(
            "model.detach_teacher_in_distill",
            self.detach_teacher_in_distill.to_string(),
        );
        put("model.dense_connections", self.dense_connections.to_string());
        put("model.student_only", self.student_only.to_string());
        put("model.teacher_mask", mask_name(self.teacher_mask).to_string());
        put("model.student_mask", mask_name(self.student_mask).to_string());
        put("model.precision", self.precision.clone());
        put("train.epochs", self.epochs.to_string());
        put("train.batch_size", self.batch_size.to_string());
        put("train.lr_init", fmt_f64(self.lr_init));
        put("train.lr_decay", fmt_f64(self.lr_decay));
        put(
            "train.lr_milestones",
            self.lr_milestones
                .iter()
                .map(|m| m.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        put("train.eval_every", self.eval_every.to_string());
        put("train.seed", self.seed.to_string());
        put("loss.use_mse", self.use_mse_loss.to_string());
        put("loss.use_mmd", self.use_mmd_loss.to_string());
        put("synth.n_classes", self.synth_n_classes.to_string());
        put("synth.n_levels", self.synth_n_levels.to_string());
        put("synth.feat_dim", self.synth_feat_dim.to_string());
        put(
            "synth.samples_per_class",
            self.synth_samples_per_class.to_string(),
        );
        put(
            "synth.ambiguity_pairs",
            self.synth_ambiguity_pairs
                .iter()
                .map(|(a, b)| format!("{a}-{b}"))
                .collect::<Vec<_>>()
                .join(","),
        );
        put("synth.noise_sigma", fmt_f64(self.synth_noise_sigma));
        put(
            "synth.convergence_rate",
            fmt_f64(self.synth_convergence_rate),
        );
        put("data.train_path", self.train_path.clone());
        put("data.test_path", self.test_path.clone());
        put("ablation.variant", self.ablation_variant.clone());
        put(
            "ablation.seeds",
            self.ablation_seeds
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        m
    }

    /// Applies key/value assignments on top of `self`, rejecting unknown
    /// keys and malformed values.
    pub fn apply(&mut self, map: &BTreeMap<String, String>) -> Result<()> {
        for (key, value) in map {
            self.apply_one(key, value)?;
        }
        Ok(())
    }

    pub fn apply_one(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| {
            AscError::Param(format!("config key {key}: cannot parse `{value}` as {what}"))
        };
        match key {
            "model.n_levels" => self.n_levels = parse_num(value).map_err(|_| bad("count"))?,
            "model.feat_dim" => self.feat_dim = parse_num(value).map_err(|_| bad("count"))?,
            "model.hidden" => self.hidden = parse_num(value).map_err(|_| bad("count"))?,
            "model.n_classes" => self.n_classes = parse_num(value).map_err(|_| bad("count"))?,
            "model.dropout_p" => self.dropout_p = value.parse().map_err(|_| bad("real"))?,
            "model.bn_eps" => self.bn_eps = value.parse().map_err(|_| bad("real"))?,
            "model.bn_momentum" => self.bn_momentum = value.parse().map_err(|_| bad("real"))?,
            "model.stop_grad_similarity" => {
                self.stop_grad_similarity = parse_bool(value).map_err(|_| bad("bool"))?
            }
            "model.share_aprime" => {
                self.share_aprime = parse_bool(value).map_err(|_| bad("bool"))?
            }
            "model.dgc_share_weights" => {
                self.dgc_share_weights = parse_bool(value).map_err(|_| bad("bool"))?
            }
            "model.detach_teacher_in_distill" => {
                self.detach_teacher_in_distill = parse_bool(value).map_err(|_| bad("bool"))?
            }
            "model.dense_connections" => {
                self.dense_connections = parse_bool(value).map_err(|_| bad("bool"))?
            }
            "model.student_only" => {
                self.student_only = parse_bool(value).map_err(|_| bad("bool"))?
            }
            "model.teacher_mask" => self.teacher_mask = mask_from_name(value)?,
            "model.student_mask" => self.student_mask = mask_from_name(value)?,
            "model.precision" => {
                if value != "f64" {
                    return Err(AscError::Param(format!(
                        "model.precision: only `f64` is supported, got `{value}`"
                    )));
                }
                self.precision = value.to_string();
            }
            "train.epochs" => self.epochs = parse_num(value).map_err(|_| bad("count"))?,
            "train.batch_size" => self.batch_size = parse_num(value).map_err(|_| bad("count"))?,
            "train.lr_init" => self.lr_init = value.parse().map_err(|_| bad("real"))?,
            "train.lr_decay" => self.lr_decay = value.parse().map_err(|_| bad("real"))?,
            "train.lr_milestones" => {
                self.lr_milestones = parse_list(value).map_err(|_| bad("epoch list"))?
            }
            "train.eval_every" => self.eval_every = parse_num(value).map_err(|_| bad("count"))?,
            "train.seed" => self.seed = value.parse().map_err(|_| bad("u64"))?,
            "loss.use_mse" => self.use_mse_loss = parse_bool(value).map_err(|_| bad("bool"))?,
            "loss.use_mmd" => self.use_mmd_loss = parse_bool(value).map_err(|_| bad("bool"))?,
            "synth.n_classes" => {
                self.synth_n_classes = parse_num(value).map_err(|_| bad("count"))?
            }
            "synth.n_levels" => self.synth_n_levels = parse_num(value).map_err(|_| bad("count"))?,
            "synth.feat_dim" => self.synth_feat_dim = parse_num(value).map_err(|_| bad("count"))?,
            "synth.samples_per_class" => {
                self.synth_samples_per_class = parse_num(value).map_err(|_| bad("count"))?
            }
            "synth.ambiguity_pairs" => {
                self.synth_ambiguity_pairs = parse_pairs(value).map_err(|_| bad("pair list"))?
            }
            "synth.noise_sigma" => {
                self.synth_noise_sigma = value.parse().map_err(|_| bad("real"))?
            }
            "synth.convergence_rate" => {
                self.synth_convergence_rate = value.parse().map_err(|_| bad("real"))?
            }
            "data.train_path" => self.train_path = value.to_string(),
            "data.test_path" => self.test_path = value.to_string(),
            "ablation.variant" => self.ablation_variant = value.to_string(),
            "ablation.seeds" => {
                self.ablation_seeds = parse_list(value).map_err(|_| bad("seed list"))?
            }
            other => {
                return Err(AscError::Param(format!("unknown config key `{other}`")));
            }
        }
        Ok(())
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply(map)?;
        Ok(cfg)
    }

    pub fn render(&self) -> String {
        render_flat(&self.to_map())
    }
}

/// Shortest `f64` text that parses back to the same value.
pub fn fmt_f64(v: f64) -> String {
    let s = format!("{v}");
    debug_assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits());
    s
}

fn parse_num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, ()> {
    v.parse().map_err(|_| ())
}

fn parse_bool(v: &str) -> std::result::Result<bool, ()> {
    match v {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        _ => Err(()),
    }
}

fn parse_list<T: std::str::FromStr>(v: &str) -> std::result::Result<Vec<T>, ()> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|part| part.trim().parse().map_err(|_| ()))
        .collect()
}

fn parse_pairs(v: &str) -> std::result::Result<Vec<(usize, usize)>, ()> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|part| {
            let (a, b) = part.trim().split_once('-').ok_or(())?;
            Ok((a.trim().parse().map_err(|_| ())?, b.trim().parse().map_err(|_| ())?))
        })
        .collect()
}
