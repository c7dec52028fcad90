//! Network layers as tape functions. Every layer takes its parameters as
//! tape variables so it can be gradient-checked in isolation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use crate::ddi::{Adjacency, EdgeIndex};
use crate::error::{shape_err, Result};
use crate::numcore::{Axis, Scalar, Tape, Tensor, Var};

/// GRU weights with the three gates (update, reset, candidate) stacked
/// along columns: `w_x: [in, 3H]`, `w_h: [H, 3H]`, biases `[1, 3H]`.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w_x: Var,
    pub w_h: Var,
    pub b_x: Var,
    pub b_h: Var,
}

/// One GRU step on row vectors `x: [1, in]`, `h: [1, H]`:
///
/// ```text
/// z  = σ(x Wz + bz + h Uz + cz)
/// r  = σ(x Wr + br + h Ur + cr)
/// n  = tanh(x Wn + bn + r ⊙ (h Un + cn))
/// h' = (1 - z) ⊙ n + z ⊙ h
/// ```
pub fn gru_step<T: Scalar>(tape: &mut Tape<T>, x: Var, h: Var, p: &GruVars) -> Result<Var> {
    let hidden = tape.value(h).cols();
    let gx = tape.matmul(x, p.w_x)?;
    let gx = tape.add_row(gx, p.b_x)?;
    let gh = tape.matmul(h, p.w_h)?;
    let gh = tape.add_row(gh, p.b_h)?;
    let gate = |tape: &mut Tape<T>, k: usize| -> Result<(Var, Var)> {
        Ok((tape.slice_cols(gx, k * hidden, (k + 1) * hidden)?, tape.slice_cols(gh, k * hidden, (k + 1) * hidden)?))
    };
    let (xz, hz) = gate(tape, 0)?;
    let (xr, hr) = gate(tape, 1)?;
    let (xn, hn) = gate(tape, 2)?;
    let z = tape.add(xz, hz)?;
    let z = tape.sigmoid(z)?;
    let r = tape.add(xr, hr)?;
    let r = tape.sigmoid(r)?;
    let rn = tape.mul(r, hn)?;
    let n = tape.add(xn, rn)?;
    let n = tape.tanh(n)?;
    let keep = tape.one_minus(z)?;
    let a = tape.mul(keep, n)?;
    let b = tape.mul(z, h)?;
    tape.add(a, b)
}

/// `D^{-1/2} (A + I) D^{-1/2}` as a dense `[n, n]` tensor.
pub fn normalized_adjacency<T: Scalar>(adj: &Adjacency) -> Tensor<T> {
    let n = adj.n();
    let mut a = adj.to_dense();
    for i in 0..n {
        a[i * n + i] = 1.0;
    }
    let inv_sqrt: Vec<f64> = (0..n).map(|i| 1.0 / Float::sqrt(a[i * n..(i + 1) * n].iter().sum::<f64>())).collect();
    let data = (0..n * n).map(|k| T::of(a[k] * inv_sqrt[k / n] * inv_sqrt[k % n])).collect();
    Tensor::new(vec![n, n], data).expect("square")
}

/// `tanh(Â X W)` for a constant normalized adjacency `Â`.
pub fn gcn_forward<T: Scalar>(tape: &mut Tape<T>, x: Var, a_hat: Var, w: Var) -> Result<Var> {
    let ax = tape.matmul(a_hat, x)?;
    let axw = tape.matmul(ax, w)?;
    tape.tanh(axw)
}

/// Per head: projection `w: [d, d_h]` and attention vector `att: [1, 2·d_h]`
/// whose first half scores the receiving node and second half the sender.
#[derive(Clone, Debug)]
pub struct GatVars {
    pub heads: Vec<(Var, Var)>,
}

pub struct GatOutput {
    /// `[n, d_h · heads]`, after ELU.
    pub z: Var,
    /// Per head, `[edges, 1]` attention weights in edge-index order.
    pub attention: Vec<Var>,
}

/// Graph attention over a directed edge index (edges `src → dst`; each
/// node attends over its in-neighbors, so the index should carry
/// self-loops):
///
/// ```text
/// e_ij = LeakyReLU(aᵀ [W x_i ‖ W x_j])     for j → i
/// α_ij = softmax_j(e_ij)
/// z_i  = Σ_j α_ij W x_j
/// ```
///
/// Heads are concatenated and passed through ELU. Attention dropout with
/// probability `dropout` applies in train mode.
pub fn gat_forward<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    edges: &EdgeIndex,
    p: &GatVars,
    slope: f64,
    dropout: f64,
) -> Result<GatOutput> {
    let n = tape.value(x).rows();
    if edges.n != n {
        return Err(shape_err("gat", format!("edge index over {} nodes, features for {n}", edges.n)));
    }
    let src = edges.sources();
    let dst = edges.targets();
    let mut outs = Vec::with_capacity(p.heads.len());
    let mut attention = Vec::with_capacity(p.heads.len());
    for &(w, att) in &p.heads {
        let wx = tape.matmul(x, w)?;
        let dh = tape.value(wx).cols();
        let a_dst = tape.slice_cols(att, 0, dh)?;
        let a_dst = tape.transpose(a_dst)?;
        let a_src = tape.slice_cols(att, dh, 2 * dh)?;
        let a_src = tape.transpose(a_src)?;
        let s_dst = tape.matmul(wx, a_dst)?;
        let s_src = tape.matmul(wx, a_src)?;
        let e_dst = tape.gather(s_dst, &dst)?;
        let e_src = tape.gather(s_src, &src)?;
        let e = tape.add(e_dst, e_src)?;
        let e = tape.leaky_relu(e, T::of(slope))?;
        let alpha = tape.segment_softmax(e, &dst, n)?;
        attention.push(alpha);
        let alpha = tape.dropout(alpha, dropout)?;
        let msgs = tape.gather(wx, &src)?;
        let msgs = tape.mul_col(msgs, alpha)?;
        outs.push(tape.scatter_add(msgs, &dst, n)?);
    }
    let z = tape.concat(&outs, Axis::Cols)?;
    let z = tape.elu(z, T::one())?;
    Ok(GatOutput { z, attention })
}

/// `M = Z_ehr - β · Z_ddi`.
pub fn memory_keys<T: Scalar>(tape: &mut Tape<T>, z_ehr: Var, z_ddi: Var, beta: Var) -> Result<Var> {
    let scaled = tape.mul_scalar(z_ddi, beta)?;
    tape.sub(z_ehr, scaled)
}

/// Global memory read: `a = softmax(M q̃ᵀ)`, `fact1 = aᵀ M`.
/// Returns `(fact1 [1, d], a [n, 1])`.
pub fn memory_read<T: Scalar>(tape: &mut Tape<T>, q_tilde: Var, keys: Var) -> Result<(Var, Var)> {
    let qt = tape.transpose(q_tilde)?;
    let logits = tape.matmul(keys, qt)?;
    let a = tape.softmax(logits, Axis::Rows)?;
    let at = tape.transpose(a)?;
    Ok((tape.matmul(at, keys)?, a))
}

/// Dynamic memory read over past visits:
/// `a_h = softmax(Q_hist q)`, `u = Y_histᵀ a_h`, `fact2 = (u / max(1, ‖u‖₁)) M`.
/// With no history returns a zero `[1, d]` vector and no attention.
pub fn dynamic_read<T: Scalar>(
    tape: &mut Tape<T>,
    q: Var,
    history: Option<(Var, Var)>,
    keys: Var,
) -> Result<(Var, Option<Var>)> {
    let Some((q_hist, y_hist)) = history else {
        let d = tape.value(keys).cols();
        return Ok((tape.constant(Tensor::zeros(vec![1, d])), None));
    };
    let (hq, hy) = (tape.value(q_hist).rows(), tape.value(y_hist).rows());
    if hq != hy {
        return Err(shape_err("dynamic_read", format!("{hq} past queries vs {hy} past medication sets")));
    }
    let qt = tape.transpose(q)?;
    let logits = tape.matmul(q_hist, qt)?;
    let a = tape.softmax(logits, Axis::Rows)?;
    let at = tape.transpose(a)?;
    let u = tape.matmul(at, y_hist)?;
    let u = tape.normalize_l1(u)?;
    Ok((tape.matmul(u, keys)?, Some(a)))
}

/// Square `[d, d]` projections; head `h` uses columns `h·d_h .. (h+1)·d_h`.
#[derive(Clone, Copy, Debug)]
pub struct MhcaVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Var,
}

/// Multi-head self-attention over the token sequence `[q̃, fact1, fact2]`
/// with a residual connection; the three output tokens are concatenated
/// in that order. Returns `(fused [1, 3d], per-head [3, 3] weights)`.
pub fn mhca_fuse<T: Scalar>(
    tape: &mut Tape<T>,
    q_tilde: Var,
    fact1: Var,
    fact2: Var,
    p: &MhcaVars,
    heads: usize,
) -> Result<(Var, Vec<Var>)> {
    let tokens = tape.concat(&[q_tilde, fact1, fact2], Axis::Rows)?;
    let d = tape.value(tokens).cols();
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(shape_err("mhca", format!("width {d} not divisible into {heads} heads")));
    }
    let dh = d / heads;
    let q = tape.matmul(tokens, p.w_q)?;
    let k = tape.matmul(tokens, p.w_k)?;
    let v = tape.matmul(tokens, p.w_v)?;
    let scale = T::of(1.0 / Float::sqrt(dh as f64));
    let mut head_out = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = tape.slice_cols(q, lo, hi)?;
        let kh = tape.slice_cols(k, lo, hi)?;
        let vh = tape.slice_cols(v, lo, hi)?;
        let kt = tape.transpose(kh)?;
        let s = tape.matmul(qh, kt)?;
        let s = tape.scale(s, scale)?;
        let a = tape.softmax(s, Axis::Cols)?;
        weights.push(a);
        head_out.push(tape.matmul(a, vh)?);
    }
    let attended = tape.concat(&head_out, Axis::Cols)?;
    let attended = tape.matmul(attended, p.w_o)?;
    let out = tape.add(tokens, attended)?;
    let fused = tape.reshape(out, vec![1, 3 * d])?;
    Ok((fused, weights))
}

/// Output layer: `(logits, ŷ = σ(fused W + b))`.
pub fn predict<T: Scalar>(tape: &mut Tape<T>, fused: Var, w_out: Var, b_out: Var) -> Result<(Var, Var)> {
    let logits = tape.matmul(fused, w_out)?;
    let logits = tape.add_row(logits, b_out)?;
    let scores = tape.sigmoid(logits)?;
    Ok((logits, scores))
}

/// `(2 / (n(n-1))) Σ_{i<j} ŷ_i ŷ_j A_ij` for a constant symmetric,
/// zero-diagonal `A` (so the ordered-pair quadratic form counts each pair
/// twice).
pub fn ddi_loss<T: Scalar>(tape: &mut Tape<T>, scores: Var, a_ddi: Var) -> Result<Var> {
    let n = tape.value(scores).numel();
    let ya = tape.matmul(scores, a_ddi)?;
    let yt = tape.transpose(scores)?;
    let quad = tape.matmul(ya, yt)?;
    let norm = if n > 1 { 1.0 / (n as f64 * (n as f64 - 1.0)) } else { 0.0 };
    tape.scale(quad, T::of(norm))
}

pub struct LossParts {
    pub total: Var,
    pub bce: Var,
    pub ddi: Var,
}

/// `L = BCE(ŷ, y) + γ · L_ddi`.
pub fn visit_loss<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    scores: Var,
    targets: &[T],
    a_ddi: Var,
    gamma: f64,
) -> Result<LossParts> {
    let bce = tape.bce_with_logits(logits, targets)?;
    let ddi = ddi_loss(tape, scores, a_ddi)?;
    let ddi = tape.reshape(ddi, vec![1])?;
    let weighted = tape.scale(ddi, T::of(gamma))?;
    let total = tape.add(bce, weighted)?;
    Ok(LossParts { total, bce, ddi })
}
