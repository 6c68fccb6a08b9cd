//! Per-progress-level accuracy, its unweighted mean (the headline metric),
//! and the ablation harness that retrains the model under each structural or
//! loss variant.

use crate::config::{fmt_f64, RunConfig};
use crate::data::{progress_ratio, Dataset};
use crate::error::AscError;
use crate::graph::MaskKind;
use crate::model::{argmax, AscNet, ModelConfig};
use crate::training::{train, TrainConfig};
use crate::Result;

/// Accuracy of a model on one dataset, per progress level and averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Fraction of samples classified correctly at each level (index `n-1`
    /// for level `n`).
    pub per_level_acc: Vec<f64>,
    /// Unweighted mean of the per-level accuracies.
    pub auc: f64,
    /// Number of samples evaluated.
    pub n_test: usize,
}

/// Classifies every sample of `dataset` at every progress level with the
/// student branch and reports per-level accuracy and its mean.
pub fn evaluate(model: &AscNet, dataset: &Dataset) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(AscError::Param("cannot evaluate an empty dataset".into()));
    }
    let cfg = &model.config;
    if dataset.n_levels != cfg.n_levels || dataset.feat_dim != cfg.feat_dim {
        return Err(AscError::Shape {
            op: "evaluate features",
            lhs: (dataset.n_levels, dataset.feat_dim),
            rhs: (cfg.n_levels, cfg.feat_dim),
        });
    }
    if dataset.n_classes != cfg.n_classes {
        return Err(AscError::Shape {
            op: "evaluate classes",
            lhs: (dataset.n_classes, 0),
            rhs: (cfg.n_classes, 0),
        });
    }
    let n_levels = cfg.n_levels;
    let mut correct = vec![0usize; n_levels];
    for s in &dataset.samples {
        let probs = model.student_probs(&s.features)?;
        for level in 0..n_levels {
            if argmax(probs.row(level)) == s.label {
                correct[level] += 1;
            }
        }
    }
    let n_test = dataset.len();
    let per_level_acc: Vec<f64> =
        correct.iter().map(|&c| c as f64 / n_test as f64).collect();
    let auc = per_level_acc.iter().sum::<f64>() / n_levels as f64;
    Ok(EvalReport { per_level_acc, auc, n_test })
}

/// Renders an accuracy-vs-progress curve as CSV: `level,ratio,accuracy`.
pub fn render_curve_csv(report: &EvalReport) -> String {
    let n_levels = report.per_level_acc.len();
    let mut out = String::from("level,ratio,accuracy\n");
    for (i, &acc) in report.per_level_acc.iter().enumerate() {
        let ratio = progress_ratio(i + 1, n_levels).expect("level in range");
        out.push_str(&format!("{},{},{}\n", i + 1, fmt_f64(ratio), fmt_f64(acc)));
    }
    out
}

/// One structural or loss modification of the full model, retrained from
/// scratch for comparison against the unmodified run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationVariant {
    /// Teacher graph loses its backward edges (causal mask on both branches).
    WithoutBidirTeacher,
    /// Student adjacency restricted to the diagonal (per-node linear map).
    DiagStudentAdj,
    /// Teacher adjacency restricted to the diagonal.
    DiagTeacherAdj,
    /// Both adjacencies restricted to the diagonal.
    DiagBothAdj,
    /// Teacher branch removed entirely; classification loss only.
    StudentOnly,
    /// Both distillation terms disabled.
    WithoutDistill,
    /// Gram-matrix distillation term disabled.
    WithoutMmd,
    /// Elementwise distillation term disabled.
    WithoutMse,
    /// Aggregation block without its residual/dense sums.
    WithoutDenseConnections,
    /// The unmodified model.
    Full,
}

impl AblationVariant {
    /// Every variant, in the fixed report order (full model last).
    pub fn all() -> [AblationVariant; 10] {
        [
            AblationVariant::WithoutBidirTeacher,
            AblationVariant::DiagStudentAdj,
            AblationVariant::DiagTeacherAdj,
            AblationVariant::DiagBothAdj,
            AblationVariant::StudentOnly,
            AblationVariant::WithoutDistill,
            AblationVariant::WithoutMmd,
            AblationVariant::WithoutMse,
            AblationVariant::WithoutDenseConnections,
            AblationVariant::Full,
        ]
    }

    /// Stable name used in config files and CSV output.
    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::WithoutBidirTeacher => "no_bidir_teacher",
            AblationVariant::DiagStudentAdj => "diag_student_adj",
            AblationVariant::DiagTeacherAdj => "diag_teacher_adj",
            AblationVariant::DiagBothAdj => "diag_both_adj",
            AblationVariant::StudentOnly => "student_only",
            AblationVariant::WithoutDistill => "no_distill_loss",
            AblationVariant::WithoutMmd => "no_mmd_loss",
            AblationVariant::WithoutMse => "no_mse_loss",
            AblationVariant::WithoutDenseConnections => "no_dense_connections",
            AblationVariant::Full => "full",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::all()
            .into_iter()
            .find(|v| v.name() == name)
            .ok_or_else(|| {
                let known: Vec<&str> = Self::all().iter().map(|v| v.name()).collect();
                AscError::Param(format!(
                    "unknown ablation variant '{name}' (expected one of {})",
                    known.join(", ")
                ))
            })
    }

    /// Rewrites a run configuration to realize this variant.
    pub fn apply(self, cfg: &mut RunConfig) {
        match self {
            AblationVariant::Full => {}
            AblationVariant::WithoutBidirTeacher => {
                cfg.teacher_mask = MaskKind::StudentCausal;
            }
            AblationVariant::DiagStudentAdj => cfg.student_mask = MaskKind::Diagonal,
            AblationVariant::DiagTeacherAdj => cfg.teacher_mask = MaskKind::Diagonal,
            AblationVariant::DiagBothAdj => {
                cfg.teacher_mask = MaskKind::Diagonal;
                cfg.student_mask = MaskKind::Diagonal;
            }
            AblationVariant::StudentOnly => cfg.student_only = true,
            AblationVariant::WithoutDistill => {
                cfg.use_mse_loss = false;
                cfg.use_mmd_loss = false;
            }
            AblationVariant::WithoutMmd => cfg.use_mmd_loss = false,
            AblationVariant::WithoutMse => cfg.use_mse_loss = false,
            AblationVariant::WithoutDenseConnections => cfg.dense_connections = false,
        }
    }
}

/// One (variant, seed) run of the ablation suite.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub seed: u64,
    pub report: EvalReport,
}

/// Mean and across-seed standard deviation of AUC for one variant.
#[derive(Debug, Clone)]
pub struct VariantSummary {
    pub variant: AblationVariant,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub runs: usize,
}

fn run_one(
    base: &RunConfig,
    variant: AblationVariant,
    seed: u64,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<AblationRow> {
    let mut cfg = base.clone();
    variant.apply(&mut cfg);
    cfg.seed = seed;
    let model_cfg = ModelConfig::from_run(&cfg);
    model_cfg.validate()?;
    let model = AscNet::build(model_cfg, seed)?;
    let train_cfg = TrainConfig::from_run(&cfg);
    let outcome = train(model, train_set, test_set, &train_cfg)?;
    let report = evaluate(&outcome.best, test_set)?;
    Ok(AblationRow { variant, seed, report })
}

/// Retrains and evaluates each variant under each seed. Rows are ordered by
/// the `variants` list (outer) then by seed (inner); with `jobs > 1`,
/// independent runs execute on worker threads but the output order and all
/// run results stay identical to the serial schedule.
pub fn ablation_suite(
    base: &RunConfig,
    variants: &[AblationVariant],
    seeds: &[u64],
    train_set: &Dataset,
    test_set: &Dataset,
    jobs: usize,
) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(AscError::Param("ablation suite needs at least one seed".into()));
    }
    if variants.is_empty() {
        return Err(AscError::Param("ablation suite needs at least one variant".into()));
    }
    let tasks: Vec<(AblationVariant, u64)> = variants
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    if jobs <= 1 {
        return tasks
            .iter()
            .map(|&(v, s)| run_one(base, v, s, train_set, test_set))
            .collect();
    }
    let mut slots: Vec<Option<Result<AblationRow>>> = Vec::new();
    slots.resize_with(tasks.len(), || None);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slot_refs: Vec<std::sync::Mutex<&mut Option<Result<AblationRow>>>> =
        slots.iter_mut().map(std::sync::Mutex::new).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(tasks.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= tasks.len() {
                    break;
                }
                let (v, s) = tasks[i];
                let row = run_one(base, v, s, train_set, test_set);
                **slot_refs[i].lock().unwrap() = Some(row);
            });
        }
    });
    drop(slot_refs);
    slots.into_iter().map(|r| r.expect("every task ran")).collect()
}

/// Renders suite rows as CSV: `variant,seed,auc,acc_1..acc_N`.
pub fn render_ablation_csv(rows: &[AblationRow]) -> String {
    let n_levels = rows.first().map(|r| r.report.per_level_acc.len()).unwrap_or(0);
    let mut out = String::from("variant,seed,auc");
    for n in 1..=n_levels {
        out.push_str(&format!(",acc_{n}"));
    }
    out.push('\n');
    for row in rows {
        out.push_str(&format!("{},{},{}", row.variant.name(), row.seed, fmt_f64(row.report.auc)));
        for &a in &row.report.per_level_acc {
            out.push_str(&format!(",{}", fmt_f64(a)));
        }
        out.push('\n');
    }
    out
}

/// Per-variant mean and across-seed sample standard deviation of AUC,
/// in first-appearance order.
pub fn summarize(rows: &[AblationRow]) -> Vec<VariantSummary> {
    let mut order: Vec<AblationVariant> = Vec::new();
    for row in rows {
        if !order.contains(&row.variant) {
            order.push(row.variant);
        }
    }
    order
        .into_iter()
        .map(|variant| {
            let aucs: Vec<f64> = rows
                .iter()
                .filter(|r| r.variant == variant)
                .map(|r| r.report.auc)
                .collect();
            let n = aucs.len();
            let mean = aucs.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (aucs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1) as f64)
                    .sqrt()
            } else {
                0.0
            };
            VariantSummary { variant, mean_auc: mean, std_auc: std, runs: n }
        })
        .collect()
}
