//! Constrained adjacency construction.
//!
//! Each graph layer's adjacency is the elementwise product of three N x N
//! matrices: a binary topology mask `M`, a learnable weight matrix `A'`,
//! and a cosine-similarity constraint `S` recomputed from that layer's
//! input features. The teacher sees every progress level (all-ones mask);
//! the student only looks backward in time (lower-triangular mask).

use crate::numerics::{Matrix2, NodeId, Tape};
use crate::{AscError, Result};

/// Graph topology of one network branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    /// All entries 1: every progress level attends to every other.
    TeacherBidirectional,
    /// `m[i][j] = 1` iff `i >= j`: a level attends to itself and the past.
    StudentCausal,
    /// Identity pattern: each level attends only to itself.
    Diagonal,
}

/// Builds the binary mask for `n` progress-level nodes.
pub fn make_mask(kind: MaskKind, n: usize) -> Result<Matrix2> {
    if n == 0 {
        return Err(AscError::Param("mask size must be at least 1".into()));
    }
    let mut m = Matrix2::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let on = match kind {
                MaskKind::TeacherBidirectional => true,
                MaskKind::StudentCausal => i >= j,
                MaskKind::Diagonal => i == j,
            };
            if on {
                m.set(i, j, 1.0);
            }
        }
    }
    Ok(m)
}

/// Binary mask plus the topology it encodes. The learnable `A'` itself
/// lives with the model parameters; this pairs the fixed part with its
/// declared pattern so it can be validated once and reused.
#[derive(Debug, Clone)]
pub struct AdjacencySpec {
    pub kind: MaskKind,
    pub mask: Matrix2,
}

impl AdjacencySpec {
    pub fn new(kind: MaskKind, n: usize) -> Result<Self> {
        Ok(AdjacencySpec {
            kind,
            mask: make_mask(kind, n)?,
        })
    }

    pub fn n(&self) -> usize {
        self.mask.rows()
    }
}

/// Pairwise cosine similarity between the rows of `f`, as a plain value.
/// Rows with near-zero norm get similarity 0 against everything.
pub fn cosine_similarity_matrix(f: &Matrix2) -> Matrix2 {
    let mut tape = Tape::new();
    let id = tape.leaf(f.clone());
    let s = tape.cosine_similarity(id, true);
    tape.value(s).clone()
}

/// Records `A = M (hadamard) A' (hadamard) S(features)` on the tape.
///
/// Gradients flow to `a_prime` and, unless `stop_grad_similarity`, through
/// `S` into the features. Masked positions of `A` are exact zeros and so
/// are their `A'` gradients.
pub fn compose_adjacency(
    tape: &mut Tape,
    mask: NodeId,
    a_prime: NodeId,
    features: NodeId,
    stop_grad_similarity: bool,
) -> Result<NodeId> {
    let n = tape.value(features).rows();
    if tape.value(mask).shape() != (n, n) {
        return Err(AscError::Shape {
            op: "compose_adjacency",
            lhs: tape.value(mask).shape(),
            rhs: (n, n),
        });
    }
    let s = tape.cosine_similarity(features, stop_grad_similarity);
    let masked = tape.hadamard(mask, a_prime)?;
    tape.hadamard(masked, s)
}

/// Value-level convenience for tests and inspection.
pub fn compose_adjacency_value(
    mask: &Matrix2,
    a_prime: &Matrix2,
    features: &Matrix2,
) -> Result<Matrix2> {
    let mut tape = Tape::new();
    let m = tape.leaf(mask.clone());
    let a = tape.leaf(a_prime.clone());
    let f = tape.leaf(features.clone());
    let out = compose_adjacency(&mut tape, m, a, f, true)?;
    Ok(tape.value(out).clone())
}
