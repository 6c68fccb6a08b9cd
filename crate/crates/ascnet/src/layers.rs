//! Graph-convolution layers and the densely-connected block.
//!
//! A GC layer computes `A . F . W` with the constrained adjacency from
//! [`crate::graph`]. The composite unit `g` wraps it as
//! `dropout(relu(batch_norm(gc(F))))`, and the DGC block combines two `g`
//! units with dense summations: `g2(g1(F) + F) + (g1(F) + F) + F`.
//!
//! All forwards take a batch as a slice of per-sample feature nodes.
//! Batch normalization runs over the rows of every sample in the batch
//! stacked together, then the stack is split back per sample.

use rand::Rng;

use crate::graph::compose_adjacency;
use crate::numerics::{BnStatsRef, Mode, NodeId, Tape};
use crate::Result;

/// Tape handles for one GC layer's parameters.
#[derive(Debug, Clone, Copy)]
pub struct GcIds {
    pub a_prime: NodeId,
    pub weight: NodeId,
}

/// Tape handles for one `g` unit: GC parameters plus batch-norm scale and
/// shift.
#[derive(Debug, Clone, Copy)]
pub struct GUnitIds {
    pub gc: GcIds,
    pub gamma: NodeId,
    pub beta: NodeId,
}

/// Tape handles for a DGC block's two `g` units.
#[derive(Debug, Clone, Copy)]
pub struct DgcIds {
    pub g1: GUnitIds,
    pub g2: GUnitIds,
}

/// Forward knobs shared by every unit of a network branch.
#[derive(Debug, Clone, Copy)]
pub struct LayerCfg {
    pub dropout_p: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub stop_grad_similarity: bool,
}

/// `A . F . W` for each sample in the batch; the adjacency is recomposed
/// from each sample's own features.
pub fn gc_forward(
    tape: &mut Tape,
    mask: NodeId,
    ids: &GcIds,
    batch: &[NodeId],
    stop_grad_similarity: bool,
) -> Result<Vec<NodeId>> {
    let mut out = Vec::with_capacity(batch.len());
    for &f in batch {
        let adj = compose_adjacency(tape, mask, ids.a_prime, f, stop_grad_similarity)?;
        let mixed = tape.matmul(adj, f)?;
        out.push(tape.matmul(mixed, ids.weight)?);
    }
    Ok(out)
}

/// `dropout(relu(batch_norm(gc(F))))` over the whole batch: the GC runs
/// per sample, the remaining stages on the stacked rows.
#[allow(clippy::too_many_arguments)]
pub fn g_forward<'s, R: Rng>(
    tape: &mut Tape,
    mask: NodeId,
    ids: &GUnitIds,
    batch: &[NodeId],
    stats: impl Into<BnStatsRef<'s>>,
    cfg: &LayerCfg,
    mode: Mode,
    rng: &mut R,
) -> Result<Vec<NodeId>> {
    let gc_out = gc_forward(tape, mask, &ids.gc, batch, cfg.stop_grad_similarity)?;
    let rows_per_sample: Vec<usize> = gc_out.iter().map(|&id| tape.value(id).rows()).collect();
    let stacked = tape.concat_rows(&gc_out)?;
    let normed = tape.batch_norm(
        stacked,
        ids.gamma,
        ids.beta,
        stats,
        mode,
        cfg.bn_eps,
        cfg.bn_momentum,
    )?;
    let activated = tape.relu(normed);
    let dropped = tape.dropout(activated, cfg.dropout_p, mode, rng)?;
    let mut out = Vec::with_capacity(batch.len());
    let mut offset = 0;
    for rows in rows_per_sample {
        out.push(tape.slice_rows(dropped, offset, rows)?);
        offset += rows;
    }
    Ok(out)
}

/// The densely-connected block. With `dense_connections`, computes
/// `g2(g1(F) + F) + (g1(F) + F) + F`; without, the plain stack
/// `g2(g1(F))`. Each `g` carries its own parameters and running
/// statistics.
#[allow(clippy::too_many_arguments)]
pub fn dgc_forward<'a, 'b, R: Rng>(
    tape: &mut Tape,
    mask: NodeId,
    ids: &DgcIds,
    batch: &[NodeId],
    g1_stats: impl Into<BnStatsRef<'a>>,
    g2_stats: impl Into<BnStatsRef<'b>>,
    cfg: &LayerCfg,
    mode: Mode,
    dense_connections: bool,
    rng: &mut R,
) -> Result<Vec<NodeId>> {
    let inner = g_forward(tape, mask, &ids.g1, batch, g1_stats, cfg, mode, rng)?;
    if !dense_connections {
        return g_forward(tape, mask, &ids.g2, &inner, g2_stats, cfg, mode, rng);
    }
    let mut mid = Vec::with_capacity(batch.len());
    for (&h, &f) in inner.iter().zip(batch) {
        mid.push(tape.add(h, f)?);
    }
    let outer = g_forward(tape, mask, &ids.g2, &mid, g2_stats, cfg, mode, rng)?;
    let mut out = Vec::with_capacity(batch.len());
    for ((&o, &t), &f) in outer.iter().zip(&mid).zip(batch) {
        let partial = tape.add(o, t)?;
        out.push(tape.add(partial, f)?);
    }
    Ok(out)
}
