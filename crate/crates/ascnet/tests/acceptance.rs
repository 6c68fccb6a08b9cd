//! Acceptance suite: one test per shipped guarantee, each printing a single
//! `acceptance N (<name>): PASS` line with the measured numbers so a
//! `--nocapture` run doubles as a report. Tolerances are pinned here and
//! nowhere else.

use std::process::Command;
use std::time::Instant;

use rand::Rng;

use ascnet::config::RunConfig;
use ascnet::data::{generate_synthetic, load_features, write_features, Split, SyntheticSpec};
use ascnet::eval::{ablation_suite, evaluate, summarize, AblationVariant};
use ascnet::graph::{make_mask, MaskKind};
use ascnet::layers::{dgc_forward, DgcIds, GUnitIds, GcIds, LayerCfg};
use ascnet::loss::{classification, mmd_distill, mse_distill, total_loss, LossFlags};
use ascnet::model::{AscNet, BatchTrace, BranchTrace, ModelConfig};
use ascnet::numerics::{BnStats, BnStatsRef, Matrix2, Mode, Tape};
use ascnet::rng::stream_rng;
use ascnet::training::{lr_at, train, TrainConfig};
use ascnet::AscError;

fn model_cfg(n_levels: usize, feat_dim: usize, hidden: usize, n_classes: usize) -> ModelConfig {
    ModelConfig {
        n_levels,
        feat_dim,
        hidden,
        n_classes,
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

fn random_matrix(seed: u64, rows: usize, cols: usize) -> Matrix2 {
    let mut rng = stream_rng(seed, "acc-feats", &[]);
    let mut m = Matrix2::zeros(rows, cols);
    for v in m.data_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    m
}

/// Gradient oracle: the `gradcheck` subcommand on the tiny model (4 levels,
/// 8 input features, hidden 6, 3 classes, all losses active, frozen
/// dropout, double precision) must report a maximum relative error below
/// 1e-4 against central finite differences, in under ten seconds, and exit
/// with status 0.
#[test]
fn gradient_oracle_on_the_tiny_model() {
    let out = tempfile::tempdir().unwrap();
    let t0 = Instant::now();
    let result = Command::new(env!("CARGO_BIN_EXE_ascnet"))
        .args(["--out", out.path().to_str().unwrap(), "gradcheck"])
        .output()
        .unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    let stdout = String::from_utf8_lossy(&result.stdout);
    assert!(
        result.status.success(),
        "gradcheck exited with {:?}: {stdout}",
        result.status.code()
    );
    let value: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("max_rel_err="))
        .and_then(|rest| rest.split_whitespace().next())
        .expect("gradcheck output carries max_rel_err")
        .parse()
        .unwrap();
    assert!(value < 1e-4, "max relative error {value} >= 1e-4");
    assert!(elapsed < 10.0, "gradcheck took {elapsed:.2}s >= 10s");
    println!(
        "acceptance 1 (gradient oracle): PASS max_rel_err={value:.3e} in {elapsed:.2}s, exit 0"
    );
}

/// Causality: over 100 random evaluation-mode instances, perturbing feature
/// rows after level n moves student logit rows 1..n by less than 1e-12,
/// while at least one perturbation moves the teacher's first logit row by
/// more than 1e-6 (the backward edges exist).
#[test]
fn student_is_causal_and_teacher_is_not() {
    let (n, d) = (6usize, 8usize);
    let mut worst_student = 0.0f64;
    let mut best_teacher = 0.0f64;
    for k in 0..100u64 {
        let model = AscNet::build(model_cfg(n, d, 8, 4), k).unwrap();
        let base = random_matrix(1000 + k, n, d);
        let split = 1 + (k as usize % (n - 1)); // student rows 0..split stay fixed
        let mut perturbed = base.clone();
        let mut rng = stream_rng(k, "acc-perturb", &[]);
        for i in split..n {
            for j in 0..d {
                let v = perturbed.get(i, j) + rng.gen_range(0.5..2.0);
                perturbed.set(i, j, v);
            }
        }
        let run = |f: &Matrix2| {
            let mut tape = Tape::new();
            let trace = model.forward_eval(&mut tape, &[f]).unwrap();
            (
                tape.value(trace.student.logits[0]).clone(),
                tape.value(trace.teacher.as_ref().unwrap().logits[0]).clone(),
            )
        };
        let (s0, t0) = run(&base);
        let (s1, t1) = run(&perturbed);
        for i in 0..split {
            for j in 0..s0.cols() {
                worst_student = worst_student.max((s0.get(i, j) - s1.get(i, j)).abs());
            }
        }
        for j in 0..t0.cols() {
            best_teacher = best_teacher.max((t0.get(0, j) - t1.get(0, j)).abs());
        }
    }
    assert!(
        worst_student < 1e-12,
        "student logits moved by {worst_student:e} on unseen levels"
    );
    assert!(
        best_teacher > 1e-6,
        "no perturbation reached the teacher's first row (max {best_teacher:e})"
    );
    println!(
        "acceptance 2 (causality): PASS student drift {worst_student:.1e} < 1e-12, \
         teacher witness {best_teacher:.3e} > 1e-6 over 100 instances"
    );
}

/// Masked-gradient exactness: on 20 random instances, the gradient of the
/// total loss with respect to every adjacency-weight entry sitting under a
/// zero mask position is exactly 0.0.
#[test]
fn masked_positions_receive_exactly_zero_gradient() {
    let (n, d, h, c) = (5usize, 6usize, 7usize, 4usize);
    let mut checked = 0usize;
    for k in 0..20u64 {
        let mut model = AscNet::build(model_cfg(n, d, h, c), 500 + k).unwrap();
        let batch: Vec<Matrix2> =
            (0..2).map(|s| random_matrix(2000 + 2 * k + s, n, d)).collect();
        let refs: Vec<&Matrix2> = batch.iter().collect();
        let mut rng = stream_rng(k, "acc-mask-dropout", &[]);
        let labels = vec![(k as usize) % c, (k as usize + 1) % c];
        let mut tape = Tape::new();
        let trace = model.forward_train(&mut tape, &refs, &mut rng).unwrap();
        let (root, _) = total_loss(&mut tape, &trace, &labels, &LossFlags::default()).unwrap();
        let grads = tape.backward(root).unwrap();
        for name in [
            "student.gc.a_prime",
            "student.dgc.g1.a_prime",
            "student.dgc.g2.a_prime",
        ] {
            let g = grads.matrix_of(&tape, trace.param_nodes[name]);
            for i in 0..n {
                for j in (i + 1)..n {
                    assert!(
                        g.get(i, j) == 0.0,
                        "instance {k}: {name}[{i},{j}] gradient {} at a masked position",
                        g.get(i, j)
                    );
                    checked += 1;
                }
            }
        }
    }
    println!(
        "acceptance 3 (masked gradients): PASS {checked} masked entries exactly 0.0 \
         over 20 instances"
    );
}

/// Loss identities: the feature-distance term vanishes on identical traces;
/// the Gram-distance term is invariant under an orthogonal change of feature
/// basis (1e-8); uniform logits cost levels*ln(classes) (1e-10); the
/// reported components sum to the reported total (1e-12).
#[test]
fn loss_identities_hold() {
    // Identical teacher and student traces cost exactly zero.
    let mut tape = Tape::new();
    let (f1a, f2a) = (
        tape.leaf(random_matrix(1, 4, 5)),
        tape.leaf(random_matrix(2, 4, 5)),
    );
    let (f1b, f2b) = (
        tape.leaf(random_matrix(3, 4, 5)),
        tape.leaf(random_matrix(4, 4, 5)),
    );
    let dummy = tape.leaf(Matrix2::zeros(1, 1));
    let branch = |f1: ascnet::numerics::NodeId, f2: ascnet::numerics::NodeId| BranchTrace {
        f1: vec![f1, f1b],
        f2: vec![f2, f2b],
        logits: vec![dummy, dummy],
        probs: vec![dummy, dummy],
    };
    let trace = BatchTrace {
        teacher: Some(branch(f1a, f2a)),
        student: branch(f1a, f2a),
        param_nodes: Default::default(),
    };
    let mse = mse_distill(&mut tape, &trace, false).unwrap();
    let mmd = mmd_distill(&mut tape, &trace, false).unwrap();
    assert_eq!(tape.value(mse).get(0, 0), 0.0);
    assert_eq!(tape.value(mmd).get(0, 0), 0.0);

    // Gram distance only sees F F^T, so a rotation of the feature basis
    // leaves it unchanged.
    let q = {
        // Gram-Schmidt over a random square matrix.
        let raw = random_matrix(77, 5, 5);
        let mut cols: Vec<Vec<f64>> = (0..5)
            .map(|j| (0..5).map(|i| raw.get(i, j)).collect())
            .collect();
        for j in 0..5 {
            for prev in 0..j {
                let dot: f64 = (0..5).map(|i| cols[j][i] * cols[prev][i]).sum();
                for i in 0..5 {
                    cols[j][i] -= dot * cols[prev][i];
                }
            }
            let norm: f64 = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in cols[j].iter_mut() {
                *v /= norm;
            }
        }
        let mut m = Matrix2::zeros(5, 5);
        for (j, col) in cols.iter().enumerate() {
            for i in 0..5 {
                m.set(i, j, col[i]);
            }
        }
        m
    };
    let make_trace = |tape: &mut Tape, rotate: bool| {
        let apply = |m: &Matrix2| {
            if !rotate {
                return m.clone();
            }
            let mut out = Matrix2::zeros(m.rows(), 5);
            for i in 0..m.rows() {
                for j in 0..5 {
                    let mut acc = 0.0;
                    for t in 0..5 {
                        acc += m.get(i, t) * q.get(t, j);
                    }
                    out.set(i, j, acc);
                }
            }
            out
        };
        let leafs: Vec<ascnet::numerics::NodeId> = (0..4)
            .map(|s| tape.leaf(apply(&random_matrix(90 + s, 4, 5))))
            .collect();
        let dummy = tape.leaf(Matrix2::zeros(1, 1));
        BatchTrace {
            teacher: Some(BranchTrace {
                f1: vec![leafs[0]],
                f2: vec![leafs[1]],
                logits: vec![dummy],
                probs: vec![dummy],
            }),
            student: BranchTrace {
                f1: vec![leafs[2]],
                f2: vec![leafs[3]],
                logits: vec![dummy],
                probs: vec![dummy],
            },
            param_nodes: Default::default(),
        }
    };
    let mut tape_plain = Tape::new();
    let trace_plain = make_trace(&mut tape_plain, false);
    let plain = mmd_distill(&mut tape_plain, &trace_plain, false).unwrap();
    let mut tape_rot = Tape::new();
    let trace_rot = make_trace(&mut tape_rot, true);
    let rotated = mmd_distill(&mut tape_rot, &trace_rot, false).unwrap();
    let gram_drift =
        (tape_plain.value(plain).get(0, 0) - tape_rot.value(rotated).get(0, 0)).abs();
    assert!(gram_drift < 1e-8, "Gram term moved by {gram_drift:e} under rotation");

    // Uniform logits cost levels * ln(classes).
    let mut tape_ce = Tape::new();
    let logits = tape_ce.leaf(Matrix2::filled(4, 3, 0.7));
    let probs = tape_ce.softmax_rows(logits);
    let branch = BranchTrace {
        f1: vec![],
        f2: vec![],
        logits: vec![logits],
        probs: vec![probs],
    };
    let ce = classification(&mut tape_ce, &branch, &[1]).unwrap();
    let uniform_gap = (tape_ce.value(ce).get(0, 0) - 4.0 * 3.0f64.ln()).abs();
    assert!(uniform_gap < 1e-10, "uniform cross-entropy off by {uniform_gap:e}");

    // The report's components add up to its total.
    let mut model = AscNet::build(model_cfg(4, 6, 5, 3), 9).unwrap();
    let batch: Vec<Matrix2> = (0..2).map(|s| random_matrix(60 + s, 4, 6)).collect();
    let refs: Vec<&Matrix2> = batch.iter().collect();
    let mut rng = stream_rng(1, "acc-loss-dropout", &[]);
    let mut tape_full = Tape::new();
    let trace_full = model.forward_train(&mut tape_full, &refs, &mut rng).unwrap();
    let (_, report) =
        total_loss(&mut tape_full, &trace_full, &[0, 2], &LossFlags::default()).unwrap();
    let additivity =
        (report.total - (report.l_mse + report.l_mmd + report.l_ct + report.l_cs)).abs();
    assert!(additivity < 1e-12, "component sum off by {additivity:e}");
    println!(
        "acceptance 4 (loss identities): PASS zero distance 0.0, rotation drift \
         {gram_drift:.1e} < 1e-8, uniform CE gap {uniform_gap:.1e} < 1e-10, additivity \
         {additivity:.1e} < 1e-12"
    );
}

/// Aggregation-block algebra: with every graph-convolution weight zeroed and
/// zero shift, the densely-connected block returns exactly 2F, and the same
/// configuration without the dense sums returns exactly 0.
#[test]
fn dense_block_reduces_to_two_f_and_plain_stack_to_zero() {
    let (n, h) = (4usize, 5usize);
    let run = |dense: bool| -> (Vec<Matrix2>, Vec<Matrix2>) {
        let mut tape = Tape::new();
        let mask = tape.leaf(make_mask(MaskKind::TeacherBidirectional, n).unwrap());
        let unit = |tape: &mut Tape, seed: u64| GUnitIds {
            gc: GcIds {
                a_prime: tape.leaf(random_matrix(seed, n, n)),
                weight: tape.leaf(Matrix2::zeros(h, h)),
            },
            gamma: tape.leaf(Matrix2::filled(1, h, 1.0)),
            beta: tape.leaf(Matrix2::zeros(1, h)),
        };
        let ids = DgcIds {
            g1: unit(&mut tape, 301),
            g2: unit(&mut tape, 302),
        };
        let feats: Vec<Matrix2> = (0..2).map(|s| random_matrix(310 + s, n, h)).collect();
        let nodes: Vec<ascnet::numerics::NodeId> =
            feats.iter().map(|f| tape.leaf(f.clone())).collect();
        let (s1, s2) = (BnStats::new(h), BnStats::new(h));
        let cfg = LayerCfg {
            dropout_p: 0.4,
            bn_eps: 1e-5,
            bn_momentum: 0.9,
            stop_grad_similarity: false,
        };
        let mut rng = stream_rng(0, "acc-dgc", &[]);
        let out = dgc_forward(
            &mut tape,
            mask,
            &ids,
            &nodes,
            BnStatsRef::Ref(&s1),
            BnStatsRef::Ref(&s2),
            &cfg,
            Mode::Eval,
            dense,
            &mut rng,
        )
        .unwrap();
        (
            feats,
            out.iter().map(|&id| tape.value(id).clone()).collect(),
        )
    };
    let (feats, with_dense) = run(true);
    for (f, o) in feats.iter().zip(&with_dense) {
        for i in 0..n {
            for j in 0..h {
                assert!(
                    o.get(i, j) == 2.0 * f.get(i, j),
                    "dense output [{i},{j}] is {} not 2F = {}",
                    o.get(i, j),
                    2.0 * f.get(i, j)
                );
            }
        }
    }
    let (_, without) = run(false);
    for o in &without {
        for v in o.data() {
            assert!(*v == 0.0, "plain stack produced {v} instead of 0");
        }
    }
    println!(
        "acceptance 5 (aggregation algebra): PASS zero-weight block returns exactly 2F \
         with dense sums and exactly 0 without"
    );
}

/// Direction-preserving comparison at desk scale: on the default synthetic
/// corpus (6 classes, 10 levels, 32 features, 200 samples per class, 3
/// ambiguous pairs, sigma 0.15, rate 0.35), over training seeds 0..=4, the
/// full model's mean AUC beats both the student-only and the
/// no-distillation variants by more than the larger across-seed standard
/// deviation of the pair, with the whole suite under 15 minutes on one core.
#[test]
fn distillation_direction_holds_at_desk_scale() {
    let mut cfg = RunConfig::default();
    cfg.hidden = 16;
    cfg.dropout_p = 0.7;
    cfg.epochs = 40;
    cfg.lr_init = 1e-4;
    cfg.batch_size = 16;
    cfg.eval_every = 5;

    let spec = SyntheticSpec::from_run(&cfg);
    assert_eq!(
        (spec.n_classes, spec.n_levels, spec.feat_dim, spec.samples_per_class),
        (6, 10, 32, 200)
    );
    assert_eq!(spec.ambiguity_pairs.len(), 3);
    assert_eq!((spec.noise_sigma, spec.convergence_rate), (0.15, 0.35));
    let (train_set, test_set) = generate_synthetic(&spec).unwrap();

    let variants = [
        AblationVariant::Full,
        AblationVariant::StudentOnly,
        AblationVariant::WithoutDistill,
    ];
    let seeds: Vec<u64> = vec![0, 1, 2, 3, 4];
    let t0 = Instant::now();
    let rows = ablation_suite(&cfg, &variants, &seeds, &train_set, &test_set, 1).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();

    let summaries = summarize(&rows);
    let stat = |v: AblationVariant| {
        let s = summaries.iter().find(|s| s.variant == v).unwrap();
        (s.mean_auc, s.std_auc)
    };
    let (full_mean, full_std) = stat(AblationVariant::Full);
    let (so_mean, so_std) = stat(AblationVariant::StudentOnly);
    let (nd_mean, nd_std) = stat(AblationVariant::WithoutDistill);
    let margin_so = full_mean - so_mean;
    let margin_nd = full_mean - nd_mean;
    assert!(
        margin_so > full_std.max(so_std),
        "full {full_mean:.4} vs student-only {so_mean:.4}: margin {margin_so:.4} \
         within noise (stds {full_std:.4}/{so_std:.4})"
    );
    assert!(
        margin_nd > full_std.max(nd_std),
        "full {full_mean:.4} vs no-distillation {nd_mean:.4}: margin {margin_nd:.4} \
         within noise (stds {full_std:.4}/{nd_std:.4})"
    );
    assert!(elapsed < 900.0, "suite took {elapsed:.0}s >= 15min");
    println!(
        "acceptance 6 (desk-scale direction): PASS full {full_mean:.4} > student-only \
         {so_mean:.4} (margin {margin_so:.4} > std {:.4}) and > no-distillation {nd_mean:.4} \
         (margin {margin_nd:.4} > std {:.4}), suite {elapsed:.0}s < 900s",
        full_std.max(so_std),
        full_std.max(nd_std)
    );
}

/// Learning-rate schedule: 1e-4 before the first milestone, then multiplied
/// by 0.95 at each of epochs 100, 150, 250, 350, exactly as computed in
/// double precision.
#[test]
fn lr_schedule_reproduces_the_published_values() {
    let cfg = TrainConfig {
        epochs: 400,
        batch_size: 16,
        lr_init: 1e-4,
        lr_decay: 0.95,
        lr_milestones: vec![100, 150, 250, 350],
        momentum: 0.9,
        eval_every: 10,
        seed: 0,
        flags: LossFlags::default(),
    };
    for epoch in 0..400usize {
        let decays = [100, 150, 250, 350].iter().filter(|&&m| m <= epoch).count();
        let expected = 1e-4 * 0.95f64.powi(decays as i32);
        assert_eq!(lr_at(epoch, &cfg), expected, "epoch {epoch}");
    }
    assert_eq!(lr_at(0, &cfg), 1e-4);
    assert_eq!(lr_at(99, &cfg), 1e-4);
    assert_eq!(lr_at(100, &cfg), 1e-4 * 0.95);
    assert_eq!(lr_at(350, &cfg), 1e-4 * 0.95f64.powi(4));
    // Decimal spot checks of the same ladder.
    assert!((lr_at(120, &cfg) - 9.5e-5).abs() < 1e-18);
    assert!((lr_at(200, &cfg) - 9.025e-5).abs() < 1e-18);
    assert!((lr_at(300, &cfg) - 8.57375e-5).abs() < 1e-18);
    assert!((lr_at(399, &cfg) - 8.1450625e-5).abs() < 1e-18);
    println!(
        "acceptance 7 (lr schedule): PASS 1e-4 through four 0.95 steps at 100/150/250/350, \
         exact over epochs 0..400"
    );
}

/// Determinism and container formats: a fixed seed reproduces checkpoints
/// and CSV logs byte for byte; feature and checkpoint containers round-trip
/// bitwise; corrupted containers fail with position-tagged parse errors.
#[test]
fn runs_are_bitwise_reproducible_and_containers_are_strict() {
    let spec = SyntheticSpec {
        n_classes: 3,
        n_levels: 4,
        feat_dim: 8,
        samples_per_class: 10,
        ambiguity_pairs: vec![(0, 1)],
        noise_sigma: 0.1,
        convergence_rate: 0.4,
        seed: 5,
    };
    let (train_set, test_set) = generate_synthetic(&spec).unwrap();
    let tcfg = TrainConfig {
        epochs: 3,
        batch_size: 4,
        lr_init: 1e-3,
        lr_decay: 0.95,
        lr_milestones: vec![100, 150, 250, 350],
        momentum: 0.9,
        eval_every: 2,
        seed: 7,
        flags: LossFlags::default(),
    };
    let run = || {
        let model = AscNet::build(model_cfg(4, 8, 6, 3), 7).unwrap();
        let outcome = train(model, &train_set, &test_set, &tcfg).unwrap();
        (
            outcome.best.to_checkpoint_bytes(None),
            outcome.last.to_checkpoint_bytes(Some(&outcome.velocity)),
            ascnet::training::render_train_csv(&outcome.log),
        )
    };
    let (best_a, last_a, csv_a) = run();
    let (best_b, last_b, csv_b) = run();
    assert_eq!(best_a, best_b, "best checkpoints differ across identical runs");
    assert_eq!(last_a, last_b, "final checkpoints differ across identical runs");
    assert_eq!(csv_a, csv_b, "training logs differ across identical runs");

    // Feature container: write -> load -> write is byte-identical.
    let dir = tempfile::tempdir().unwrap();
    let path_a = dir.path().join("a.ascf");
    let path_b = dir.path().join("b.ascf");
    write_features(&train_set, &path_a).unwrap();
    let loaded = load_features(&path_a, Split::Train).unwrap();
    write_features(&loaded, &path_b).unwrap();
    let bytes_a = std::fs::read(&path_a).unwrap();
    let bytes_b = std::fs::read(&path_b).unwrap();
    assert_eq!(bytes_a, bytes_b, "feature container not bitwise stable");

    // Checkpoint container: load -> save is byte-identical, velocity included.
    let (model_back, vel_back) = AscNet::from_checkpoint_bytes(&last_a).unwrap();
    assert_eq!(model_back.to_checkpoint_bytes(vel_back.as_ref()), last_a);

    // Bad magic and truncation carry offsets.
    let mut corrupt = bytes_a.clone();
    corrupt[0] = b'X';
    let bad = dir.path().join("bad.ascf");
    std::fs::write(&bad, &corrupt).unwrap();
    match load_features(&bad, Split::Train).unwrap_err() {
        AscError::Parse { offset, what } => {
            assert_eq!(offset, 0);
            assert!(what.contains("bad magic"), "unexpected message: {what}");
        }
        other => panic!("bad magic produced {other:?}"),
    }
    let cut = dir.path().join("cut.ascf");
    std::fs::write(&cut, &bytes_a[..bytes_a.len() - 3]).unwrap();
    assert!(matches!(
        load_features(&cut, Split::Train).unwrap_err(),
        AscError::Parse { .. }
    ));
    let mut ck = last_a.clone();
    ck[0] = b'Y';
    match AscNet::from_checkpoint_bytes(&ck).unwrap_err() {
        AscError::Parse { offset, what } => {
            assert_eq!(offset, 0);
            assert!(what.contains("bad magic"), "unexpected message: {what}");
        }
        other => panic!("checkpoint bad magic produced {other:?}"),
    }
    assert!(matches!(
        AscNet::from_checkpoint_bytes(&last_a[..last_a.len() - 1]).unwrap_err(),
        AscError::Parse { .. }
    ));
    println!(
        "acceptance 8 (determinism and formats): PASS byte-identical reruns, bitwise \
         container round-trips, position-tagged parse errors"
    );
}

/// Evaluation metric: the reported AUC is exactly the mean of the per-level
/// accuracies, and uniform-random guessing lands within three binomial
/// standard deviations of 1/C at every level on a test split of at least
/// 1000 samples.
#[test]
fn auc_is_the_mean_level_accuracy_and_chance_behaves() {
    let spec = SyntheticSpec {
        n_classes: 3,
        n_levels: 4,
        feat_dim: 8,
        samples_per_class: 10,
        ambiguity_pairs: vec![(0, 1)],
        noise_sigma: 0.1,
        convergence_rate: 0.4,
        seed: 11,
    };
    let (_, test_small) = generate_synthetic(&spec).unwrap();
    let model = AscNet::build(model_cfg(4, 8, 6, 3), 3).unwrap();
    let report = evaluate(&model, &test_small).unwrap();
    let mean =
        report.per_level_acc.iter().sum::<f64>() / report.per_level_acc.len() as f64;
    assert_eq!(report.auc, mean, "auc is not the exact mean of level accuracies");
    assert_eq!(report.n_test, test_small.len());

    let big = SyntheticSpec {
        samples_per_class: 1000,
        n_classes: 6,
        ambiguity_pairs: vec![(0, 1), (2, 3), (4, 5)],
        n_levels: 10,
        feat_dim: 16,
        noise_sigma: 0.15,
        convergence_rate: 0.35,
        seed: 13,
    };
    let (_, test_big) = generate_synthetic(&big).unwrap();
    let n = test_big.len();
    assert!(n >= 1000, "test split holds only {n} samples");
    let p = 1.0 / big.n_classes as f64;
    let three_sigma = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
    let mut rng = stream_rng(17, "acc-chance", &[]);
    let mut worst = 0.0f64;
    for level in 0..big.n_levels {
        let correct = test_big
            .samples
            .iter()
            .filter(|s| rng.gen_range(0..big.n_classes) == s.label)
            .count();
        let acc = correct as f64 / n as f64;
        let gap = (acc - p).abs();
        worst = worst.max(gap);
        assert!(
            gap <= three_sigma,
            "level {}: chance accuracy {acc:.4} strays {gap:.4} from {p:.4} (3 sigma = \
             {three_sigma:.4})",
            level + 1
        );
    }
    println!(
        "acceptance 9 (evaluation metric): PASS auc equals the exact level mean; chance \
         stays within {worst:.4} <= {three_sigma:.4} of 1/6 on {n} samples"
    );
}
