//! Training objective: layer-wise feature distillation between the two
//! branches plus per-progress-level classification on both heads.
//!
//! The distillation term compares the two feature-producing stages of each
//! branch (the masked graph-convolution output and the aggregation-block
//! output): an elementwise term — the Frobenius norm of the feature
//! difference — and a structural term — the Frobenius norm of the
//! `F Fᵀ` Gram-matrix difference over the progress-level rows. Both norms
//! are plain (not squared) norms. Classification applies cross-entropy at
//! every progress level of both branches against the full-video label. All
//! components are averaged over the batch so the loss scale is independent
//! of batch size.

use crate::config::RunConfig;
use crate::error::AscError;
use crate::model::{AscNet, BatchTrace, BranchTrace, ModelConfig};
use crate::numerics::{
    grad_check, GradCheckReport, Matrix2, NodeId, ParamMap, Tape,
};
use crate::rng::stream_rng;
use crate::Result;

/// Which loss components participate in the objective.
#[derive(Debug, Clone, Copy)]
pub struct LossFlags {
    /// Include the elementwise feature-difference distillation term.
    pub use_mse: bool,
    /// Include the Gram-matrix distillation term.
    pub use_mmd: bool,
    /// Stop gradients into the teacher through the distillation terms
    /// (the teacher still trains through its own classification loss).
    pub detach_teacher: bool,
}

impl Default for LossFlags {
    fn default() -> Self {
        LossFlags { use_mse: true, use_mmd: true, detach_teacher: false }
    }
}

impl LossFlags {
    pub fn from_run(cfg: &RunConfig) -> Self {
        LossFlags {
            use_mse: cfg.use_mse_loss,
            use_mmd: cfg.use_mmd_loss,
            detach_teacher: cfg.detach_teacher_in_distill,
        }
    }
}

/// Batch-mean values of every loss component. `total` is the value actually
/// optimized; disabled components are reported as zero and excluded from it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub l_mse: f64,
    pub l_mmd: f64,
    pub l_ct: f64,
    pub l_cs: f64,
    pub total: f64,
}

fn teacher_of(trace: &BatchTrace) -> Result<&BranchTrace> {
    trace.teacher.as_ref().ok_or_else(|| {
        AscError::Param("distillation requires a teacher branch in the trace".into())
    })
}

fn check_sample_counts(student: &BranchTrace, teacher: &BranchTrace) -> Result<()> {
    if student.f1.len() != teacher.f1.len() {
        return Err(AscError::Param(format!(
            "student trace has {} samples but teacher has {}",
            student.f1.len(),
            teacher.f1.len()
        )));
    }
    Ok(())
}

/// Mean of a non-empty list of scalar nodes.
fn mean(tape: &mut Tape, parts: &[NodeId]) -> Result<NodeId> {
    if parts.is_empty() {
        return Err(AscError::Param("cannot average an empty batch".into()));
    }
    let mut acc = parts[0];
    for &p in &parts[1..] {
        acc = tape.add(acc, p)?;
    }
    Ok(tape.scale(acc, 1.0 / parts.len() as f64))
}

fn scalar(tape: &Tape, node: NodeId) -> f64 {
    tape.value(node).get(0, 0)
}

/// Per-sample elementwise distillation: for each distilled stage, the
/// Frobenius norm of (student features − teacher features), summed over the
/// two stages. Returns the batch mean as a tape node.
pub fn mse_distill(tape: &mut Tape, trace: &BatchTrace, detach_teacher: bool) -> Result<NodeId> {
    let teacher = teacher_of(trace)?;
    let student = &trace.student;
    check_sample_counts(student, teacher)?;
    let mut per_sample = Vec::with_capacity(student.f1.len());
    for i in 0..student.f1.len() {
        let mut layer_terms = Vec::with_capacity(2);
        for (fs, ft) in [(student.f1[i], teacher.f1[i]), (student.f2[i], teacher.f2[i])] {
            let ft = if detach_teacher { tape.detach(ft) } else { ft };
            let diff = tape.sub(fs, ft)?;
            layer_terms.push(tape.frobenius_norm(diff));
        }
        let sum = tape.add(layer_terms[0], layer_terms[1])?;
        per_sample.push(sum);
    }
    mean(tape, &per_sample)
}

/// Per-sample structural distillation: for each distilled stage, the
/// Frobenius norm of the difference between the branches' `F Fᵀ` Gram
/// matrices over the progress-level rows. Returns the batch mean.
pub fn mmd_distill(tape: &mut Tape, trace: &BatchTrace, detach_teacher: bool) -> Result<NodeId> {
    let teacher = teacher_of(trace)?;
    let student = &trace.student;
    check_sample_counts(student, teacher)?;
    let mut per_sample = Vec::with_capacity(student.f1.len());
    for i in 0..student.f1.len() {
        let mut layer_terms = Vec::with_capacity(2);
        for (fs, ft) in [(student.f1[i], teacher.f1[i]), (student.f2[i], teacher.f2[i])] {
            let ft = if detach_teacher { tape.detach(ft) } else { ft };
            if tape.value(fs).rows() != tape.value(ft).rows() {
                return Err(AscError::Shape {
                    op: "gram difference",
                    lhs: tape.value(fs).shape(),
                    rhs: tape.value(ft).shape(),
                });
            }
            let fs_t = tape.transpose(fs);
            let gram_s = tape.matmul(fs, fs_t)?;
            let ft_t = tape.transpose(ft);
            let gram_t = tape.matmul(ft, ft_t)?;
            let diff = tape.sub(gram_s, gram_t)?;
            layer_terms.push(tape.frobenius_norm(diff));
        }
        let sum = tape.add(layer_terms[0], layer_terms[1])?;
        per_sample.push(sum);
    }
    mean(tape, &per_sample)
}

/// Per-branch classification loss: cross-entropy of every progress-level row
/// against the sample's full-video label, summed over levels, averaged over
/// the batch. Returns the batch mean for one branch.
pub fn classification(tape: &mut Tape, branch: &BranchTrace, labels: &[usize]) -> Result<NodeId> {
    if labels.len() != branch.probs.len() {
        return Err(AscError::Param(format!(
            "{} labels for {} samples",
            labels.len(),
            branch.probs.len()
        )));
    }
    let mut per_sample = Vec::with_capacity(labels.len());
    for (&probs, &label) in branch.probs.iter().zip(labels) {
        let n_levels = tape.value(probs).rows();
        let row_labels = vec![label; n_levels];
        per_sample.push(tape.cross_entropy_sum(probs, &row_labels)?);
    }
    mean(tape, &per_sample)
}

/// Assembles the full objective from a forward trace: the sum of the active
/// components, each a batch mean. Returns the scalar root node (for the
/// backward sweep) and the per-component report.
pub fn total_loss(
    tape: &mut Tape,
    trace: &BatchTrace,
    labels: &[usize],
    flags: &LossFlags,
) -> Result<(NodeId, LossReport)> {
    let l_cs = classification(tape, &trace.student, labels)?;
    let mut root = l_cs;
    let mut report = LossReport {
        l_mse: 0.0,
        l_mmd: 0.0,
        l_ct: 0.0,
        l_cs: scalar(tape, l_cs),
        total: 0.0,
    };
    if let Some(teacher) = &trace.teacher {
        let l_ct = classification(tape, teacher, labels)?;
        report.l_ct = scalar(tape, l_ct);
        root = tape.add(root, l_ct)?;
        if flags.use_mse {
            let l_mse = mse_distill(tape, trace, flags.detach_teacher)?;
            report.l_mse = scalar(tape, l_mse);
            root = tape.add(root, l_mse)?;
        }
        if flags.use_mmd {
            let l_mmd = mmd_distill(tape, trace, flags.detach_teacher)?;
            report.l_mmd = scalar(tape, l_mmd);
            root = tape.add(root, l_mmd)?;
        }
    }
    report.total = scalar(tape, root);
    Ok((root, report))
}

/// Finite-difference verification of the whole model's gradients: builds a
/// model from `config`, runs a training-mode forward over `batch` with a
/// dropout stream frozen to `dropout_seed`, and compares the backward-sweep
/// gradient of [`total_loss`] for every registered parameter against central
/// differences.
pub fn grad_check_model(
    config: &ModelConfig,
    batch: &[Matrix2],
    labels: &[usize],
    flags: &LossFlags,
    init_seed: u64,
    dropout_seed: u64,
    eps: f64,
) -> Result<GradCheckReport> {
    let template = AscNet::build(config.clone(), init_seed)?;
    let params0 = template.params.clone();
    let refs: Vec<&Matrix2> = batch.iter().collect();
    grad_check(
        |params: &ParamMap| {
            // Fresh normalization statistics every call: batch statistics
            // drive training-mode outputs, so the loss is a pure function of
            // the parameters and the (frozen) dropout stream.
            let mut model = AscNet {
                config: config.clone(),
                params: params.clone(),
                bn: template.bn.clone(),
            };
            let mut tape = Tape::new();
            let mut rng = stream_rng(dropout_seed, "gradcheck-dropout", &[]);
            let trace = model.forward_train(&mut tape, &refs, &mut rng)?;
            let (root, _) = total_loss(&mut tape, &trace, labels, flags)?;
            let grads = tape.backward(root)?;
            let mut gmap = ParamMap::new();
            for (name, &node) in &trace.param_nodes {
                gmap.insert(name.clone(), grads.matrix_of(&tape, node));
            }
            Ok((scalar(&tape, root), gmap))
        },
        &params0,
        eps,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::MaskKind;
    use rand::Rng;

    fn leaf_trace(tape: &mut Tape, f1: Vec<Matrix2>, f2: Vec<Matrix2>) -> BranchTrace {
        let n = f1.len();
        let f1: Vec<NodeId> = f1.into_iter().map(|m| tape.leaf(m)).collect();
        let f2: Vec<NodeId> = f2.into_iter().map(|m| tape.leaf(m)).collect();
        // Logits/probs are irrelevant for distillation-only tests.
        let probs: Vec<NodeId> =
            (0..n).map(|_| tape.leaf(Matrix2::filled(2, 2, 0.5))).collect();
        BranchTrace { f1, f2, logits: probs.clone(), probs }
    }

    fn rand_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix2 {
        Matrix2::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap()
    }

    /// Orthonormal matrix via Gram-Schmidt on a random square matrix.
    fn random_orthogonal<R: Rng>(n: usize, rng: &mut R) -> Matrix2 {
        loop {
            let mut cols: Vec<Vec<f64>> = Vec::new();
            'outer: for _ in 0..n {
                let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                for u in &cols {
                    let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                    for (vi, ui) in v.iter_mut().zip(u) {
                        *vi -= dot * ui;
                    }
                }
                let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm < 1e-6 {
                    break 'outer; // retry with fresh draws
                }
                cols.push(v.iter().map(|x| x / norm).collect());
            }
            if cols.len() == n {
                // Columns of Q are the orthonormal vectors.
                let mut data = vec![0.0; n * n];
                for (j, col) in cols.iter().enumerate() {
                    for (i, &v) in col.iter().enumerate() {
                        data[i * n + j] = v;
                    }
                }
                return Matrix2::from_vec(n, n, data).unwrap();
            }
        }
    }

    fn batch_trace(student: BranchTrace, teacher: BranchTrace) -> BatchTrace {
        BatchTrace {
            teacher: Some(teacher),
            student,
            param_nodes: std::collections::BTreeMap::new(),
        }
    }

    #[test]
    fn identical_traces_distill_to_zero() {
        let mut tape = Tape::new();
        let mut rng = stream_rng(1, "test-feat", &[]);
        let a1 = rand_matrix(3, 4, &mut rng);
        let a2 = rand_matrix(3, 4, &mut rng);
        let student = leaf_trace(&mut tape, vec![a1.clone()], vec![a2.clone()]);
        let teacher = leaf_trace(&mut tape, vec![a1], vec![a2]);
        let trace = batch_trace(student, teacher);
        let mse = mse_distill(&mut tape, &trace, false).unwrap();
        let mmd = mmd_distill(&mut tape, &trace, false).unwrap();
        assert_eq!(scalar(&tape, mse), 0.0);
        assert_eq!(scalar(&tape, mmd), 0.0);
    }

    #[test]
    fn mse_single_layer_three_four_five() {
        let mut tape = Tape::new();
        let s1 = Matrix2::from_vec(1, 2, vec![3.0, 4.0]).unwrap();
        let t1 = Matrix2::zeros(1, 2);
        let shared = Matrix2::filled(1, 2, 0.25);
        let student = leaf_trace(&mut tape, vec![s1], vec![shared.clone()]);
        let teacher = leaf_trace(&mut tape, vec![t1], vec![shared]);
        let trace = batch_trace(student, teacher);
        let mse = mse_distill(&mut tape, &trace, false).unwrap();
        assert_eq!(scalar(&tape, mse), 5.0);
    }

    #[test]
    fn mse_matches_scalar_oracle() {
        let mut rng = stream_rng(2, "test-feat", &[]);
        let s1 = rand_matrix(4, 5, &mut rng);
        let t1 = rand_matrix(4, 5, &mut rng);
        let s2 = rand_matrix(4, 5, &mut rng);
        let t2 = rand_matrix(4, 5, &mut rng);
        let mut expected = 0.0;
        for (s, t) in [(&s1, &t1), (&s2, &t2)] {
            let sq: f64 = s
                .data()
                .iter()
                .zip(t.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            expected += sq.sqrt();
        }
        let mut tape = Tape::new();
        let student = leaf_trace(&mut tape, vec![s1], vec![s2]);
        let teacher = leaf_trace(&mut tape, vec![t1], vec![t2]);
        let trace = batch_trace(student, teacher);
        let mse = mse_distill(&mut tape, &trace, false).unwrap();
        assert!((scalar(&tape, mse) - expected).abs() < 1e-12);
    }

    #[test]
    fn mmd_invariant_under_orthogonal_right_multiplication() {
        let mut rng = stream_rng(3, "test-feat", &[]);
        let fs = rand_matrix(3, 4, &mut rng);
        let ft = rand_matrix(3, 4, &mut rng);
        let q = random_orthogonal(4, &mut rng);
        let q2 = random_orthogonal(4, &mut rng);
        let fs_q = fs.matmul(&q).unwrap();
        let ft_q2 = ft.matmul(&q2).unwrap();

        let run = |a: &Matrix2, b: &Matrix2| {
            let mut tape = Tape::new();
            let student = leaf_trace(&mut tape, vec![a.clone()], vec![a.clone()]);
            let teacher = leaf_trace(&mut tape, vec![b.clone()], vec![b.clone()]);
            let trace = batch_trace(student, teacher);
            let mmd = mmd_distill(&mut tape, &trace, false).unwrap();
            scalar(&tape, mmd)
        };
        // Rotating both branches leaves the Gram difference unchanged.
        assert!((run(&fs, &ft) - run(&fs_q, &ft_q2)).abs() < 1e-8);
        // A branch rotated against itself has identical Gram matrices.
        assert!(run(&fs, &fs_q).abs() < 1e-8);
    }

    #[test]
    fn mmd_matches_explicit_gram_computation() {
        let fs = Matrix2::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let ft = Matrix2::from_vec(2, 2, vec![0.5, -1.0, 2.0, 0.0]).unwrap();
        let gram = |m: &Matrix2| m.matmul(&m.transpose()).unwrap();
        let diff = gram(&fs).sub(&gram(&ft)).unwrap();
        let expected = 2.0 * diff.frobenius_norm(); // both stages carry the same pair

        let mut tape = Tape::new();
        let student = leaf_trace(&mut tape, vec![fs.clone()], vec![fs]);
        let teacher = leaf_trace(&mut tape, vec![ft.clone()], vec![ft]);
        let trace = batch_trace(student, teacher);
        let mmd = mmd_distill(&mut tape, &trace, false).unwrap();
        assert!((scalar(&tape, mmd) - expected).abs() < 1e-12);
    }

    #[test]
    fn classification_uniform_and_perfect_rows() {
        let n_levels = 4;
        let n_classes = 3;
        let mut tape = Tape::new();
        let uniform = Matrix2::filled(n_levels, n_classes, 1.0 / n_classes as f64);
        let probs = tape.leaf(uniform);
        let branch = BranchTrace {
            f1: vec![probs],
            f2: vec![probs],
            logits: vec![probs],
            probs: vec![probs],
        };
        let ce = classification(&mut tape, &branch, &[1]).unwrap();
        let expected = n_levels as f64 * (n_classes as f64).ln();
        assert!(
            (scalar(&tape, ce) - expected).abs() < 1e-10,
            "uniform cross-entropy {} vs {}",
            scalar(&tape, ce),
            expected
        );

        // Probability one on the true class at every level → zero loss.
        let mut perfect = Matrix2::zeros(n_levels, n_classes);
        for r in 0..n_levels {
            perfect.set(r, 2, 1.0);
        }
        let probs = tape.leaf(perfect);
        let branch = BranchTrace {
            f1: vec![probs],
            f2: vec![probs],
            logits: vec![probs],
            probs: vec![probs],
        };
        let ce = classification(&mut tape, &branch, &[2]).unwrap();
        assert_eq!(scalar(&tape, ce), 0.0);
    }

    #[test]
    fn classification_matches_scalar_oracle() {
        let mut rng = stream_rng(4, "test-feat", &[]);
        let mut raw = rand_matrix(3, 4, &mut rng);
        // Normalize rows into probabilities.
        for r in 0..3 {
            let row: Vec<f64> = raw.row(r).iter().map(|v| v.exp()).collect();
            let sum: f64 = row.iter().sum();
            for (c, v) in row.iter().enumerate() {
                raw.set(r, c, v / sum);
            }
        }
        let label = 2usize;
        let expected: f64 = (0..3).map(|r| -raw.get(r, label).ln()).sum();
        let mut tape = Tape::new();
        let probs = tape.leaf(raw);
        let branch = BranchTrace {
            f1: vec![probs],
            f2: vec![probs],
            logits: vec![probs],
            probs: vec![probs],
        };
        let ce = classification(&mut tape, &branch, &[label]).unwrap();
        assert!((scalar(&tape, ce) - expected).abs() < 1e-12);
    }

    #[test]
    fn classification_validates_labels() {
        let mut tape = Tape::new();
        let probs = tape.leaf(Matrix2::filled(2, 3, 1.0 / 3.0));
        let branch = BranchTrace {
            f1: vec![probs],
            f2: vec![probs],
            logits: vec![probs],
            probs: vec![probs],
        };
        assert!(classification(&mut tape, &branch, &[3]).is_err(), "label out of range");
        assert!(classification(&mut tape, &branch, &[0, 1]).is_err(), "label count mismatch");
    }

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            n_levels: 4,
            feat_dim: 8,
            hidden: 6,
            n_classes: 3,
            dropout_p: 0.5,
            bn_eps: 1e-5,
            bn_momentum: 0.9,
            stop_grad_similarity: false,
            share_aprime: false,
            dgc_share_weights: false,
            dense_connections: true,
            student_only: false,
            teacher_mask: MaskKind::TeacherBidirectional,
            student_mask: MaskKind::StudentCausal,
        }
    }

    fn tiny_batch(count: usize, config: &ModelConfig) -> (Vec<Matrix2>, Vec<usize>) {
        let mut rng = stream_rng(9, "test-batch", &[]);
        let batch: Vec<Matrix2> =
            (0..count).map(|_| rand_matrix(config.n_levels, config.feat_dim, &mut rng)).collect();
        let labels: Vec<usize> =
            (0..count).map(|_| rng.gen_range(0..config.n_classes)).collect();
        (batch, labels)
    }

    #[test]
    fn report_is_additive_and_non_negative() {
        let config = tiny_config();
        let (batch, labels) = tiny_batch(3, &config);
        let refs: Vec<&Matrix2> = batch.iter().collect();
        let mut model = AscNet::build(config, 7).unwrap();
        let mut tape = Tape::new();
        let mut rng = stream_rng(7, "dropout", &[]);
        let trace = model.forward_train(&mut tape, &refs, &mut rng).unwrap();
        let (root, report) = total_loss(&mut tape, &trace, &labels, &LossFlags::default()).unwrap();
        assert!(report.l_mse >= 0.0);
        assert!(report.l_mmd >= 0.0);
        assert!(report.l_ct >= 0.0);
        assert!(report.l_cs >= 0.0);
        assert!(report.l_mse > 0.0, "branches differ, so distillation is positive");
        assert!(
            (report.total - (report.l_mse + report.l_mmd + report.l_ct + report.l_cs)).abs()
                < 1e-12
        );
        assert_eq!(report.total, scalar(&tape, root));

        // The report components agree with the standalone operations.
        let mse = mse_distill(&mut tape, &trace, false).unwrap();
        let mmd = mmd_distill(&mut tape, &trace, false).unwrap();
        let cs = classification(&mut tape, &trace.student, &labels).unwrap();
        let ct = classification(&mut tape, trace.teacher.as_ref().unwrap(), &labels).unwrap();
        assert_eq!(report.l_mse, scalar(&tape, mse));
        assert_eq!(report.l_mmd, scalar(&tape, mmd));
        assert_eq!(report.l_cs, scalar(&tape, cs));
        assert_eq!(report.l_ct, scalar(&tape, ct));
    }

    #[test]
    fn ablation_flags_zero_components() {
        let config = tiny_config();
        let (batch, labels) = tiny_batch(2, &config);
        let refs: Vec<&Matrix2> = batch.iter().collect();
        let mut model = AscNet::build(config, 3).unwrap();

        let run = |model: &mut AscNet, flags: &LossFlags| {
            let mut tape = Tape::new();
            let mut rng = stream_rng(3, "dropout", &[]);
            let trace = model.forward_train(&mut tape, &refs, &mut rng).unwrap();
            total_loss(&mut tape, &trace, &labels, flags).unwrap().1
        };

        let full = run(&mut model, &LossFlags::default());
        let no_mse = run(&mut model, &LossFlags { use_mse: false, ..Default::default() });
        let no_mmd = run(&mut model, &LossFlags { use_mmd: false, ..Default::default() });
        let no_distill =
            run(&mut model, &LossFlags { use_mse: false, use_mmd: false, ..Default::default() });

        assert_eq!(no_mse.l_mse, 0.0);
        assert!((no_mse.total - (no_mse.l_mmd + no_mse.l_ct + no_mse.l_cs)).abs() < 1e-12);
        assert_eq!(no_mmd.l_mmd, 0.0);
        assert!((no_mmd.total - (no_mmd.l_mse + no_mmd.l_ct + no_mmd.l_cs)).abs() < 1e-12);
        assert_eq!(no_distill.l_mse, 0.0);
        assert_eq!(no_distill.l_mmd, 0.0);
        assert!((no_distill.total - (no_distill.l_ct + no_distill.l_cs)).abs() < 1e-12);
        assert!(full.total > no_distill.total, "distillation adds positive mass");
    }

    #[test]
    fn student_only_reduces_to_student_classification() {
        let config = ModelConfig { student_only: true, ..tiny_config() };
        let (batch, labels) = tiny_batch(2, &config);
        let refs: Vec<&Matrix2> = batch.iter().collect();
        let mut model = AscNet::build(config, 5).unwrap();
        let mut tape = Tape::new();
        let mut rng = stream_rng(5, "dropout", &[]);
        let trace = model.forward_train(&mut tape, &refs, &mut rng).unwrap();
        let (_, report) = total_loss(&mut tape, &trace, &labels, &LossFlags::default()).unwrap();
        assert_eq!(report.l_ct, 0.0);
        assert_eq!(report.l_mse, 0.0);
        assert_eq!(report.l_mmd, 0.0);
        assert_eq!(report.total, report.l_cs);

        // Distillation on a teacherless trace is an explicit error.
        assert!(mse_distill(&mut tape, &trace, false).is_err());
        assert!(mmd_distill(&mut tape, &trace, false).is_err());
    }

    #[test]
    fn detach_teacher_blocks_distillation_gradient_into_teacher() {
        let config = tiny_config();
        let (batch, labels) = tiny_batch(2, &config);
        let refs: Vec<&Matrix2> = batch.iter().collect();

        // Teacher gradients with detached distillation must equal the
        // classification-only teacher gradients.
        let teacher_grads = |flags: &LossFlags| {
            let mut model = AscNet::build(tiny_config(), 11).unwrap();
            let mut tape = Tape::new();
            let mut rng = stream_rng(11, "dropout", &[]);
            let trace = model.forward_train(&mut tape, &refs, &mut rng).unwrap();
            let (root, _) = total_loss(&mut tape, &trace, &labels, flags).unwrap();
            let grads = tape.backward(root).unwrap();
            let node = trace.param_nodes["teacher.gc.weight"];
            grads.matrix_of(&tape, node)
        };
        let _ = config;

        let detached = teacher_grads(&LossFlags { detach_teacher: true, ..Default::default() });
        let ce_only =
            teacher_grads(&LossFlags { use_mse: false, use_mmd: false, ..Default::default() });
        let joint = teacher_grads(&LossFlags::default());
        assert_eq!(detached.data(), ce_only.data());
        assert_ne!(joint.data(), ce_only.data());
    }

    #[test]
    fn tiny_model_gradients_verify_by_finite_differences() {
        let config = tiny_config();
        let (batch, labels) = tiny_batch(2, &config);
        let report = grad_check_model(
            &config,
            &batch,
            &labels,
            &LossFlags::default(),
            13,
            17,
            1e-5,
        )
        .unwrap();
        assert!(
            report.max_rel_err < 1e-4,
            "max relative error {} at {:?}",
            report.max_rel_err,
            report.worst
        );
    }
}
