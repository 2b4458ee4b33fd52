//! Parameter layouts and forward passes of the single (non-ensemble) models.

use rand_chacha::ChaCha8Rng;

use super::{Bound, Forward, ModelConfig, ModelError, ModelInput, ModelKind, ParamStore, Result, TcMode};
use crate::coherence::{self, gates_from_scenes};
use crate::tensor::{Tape, Tensor, UnaryOp, Var};

/// Added under square roots of normalizers.
const NORM_EPS: f64 = 1e-12;

pub(super) fn register(store: &mut ParamStore, prefix: &str, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<()> {
    let p = |name: &str| format!("{prefix}{name}");
    let (d, k) = (cfg.input_dim, cfg.num_labels);
    match cfg.kind {
        ModelKind::Dnn => {
            store.register(&p("dnn.w"), &[d, cfg.dnn_hidden], rng)?;
            store.register(&p("dnn.b"), &[cfg.dnn_hidden], rng)?;
            register_head(store, prefix, cfg.dnn_hidden, k, rng)?;
        }
        ModelKind::Netvlad | ModelKind::TcNetvlad => {
            let c = cfg.clusters;
            store.register(&p("vlad.w"), &[c, d], rng)?;
            store.register(&p("vlad.b"), &[c], rng)?;
            store.register(&p("vlad.c"), &[c, d], rng)?;
            register_head(store, prefix, c * d, k, rng)?;
            if cfg.kind == ModelKind::TcNetvlad {
                register_tc(store, prefix, cfg, rng)?;
            }
        }
        ModelKind::Rnn | ModelKind::RnnAttn | ModelKind::TcRnn => {
            let h = cfg.hidden;
            for gate in ["z", "r", "n"] {
                store.register(&p(&format!("gru.w{gate}")), &[d, h], rng)?;
                store.register(&p(&format!("gru.u{gate}")), &[h, h], rng)?;
                store.register(&p(&format!("gru.b{gate}")), &[h], rng)?;
            }
            if cfg.kind != ModelKind::Rnn {
                store.register(&p("att.w"), &[h, h], rng)?;
                store.register(&p("att.b"), &[h], rng)?;
                store.register(&p("att.v"), &[h, 1], rng)?;
            }
            register_head(store, prefix, h, k, rng)?;
            if cfg.kind == ModelKind::TcRnn {
                register_tc(store, prefix, cfg, rng)?;
            }
        }
        ModelKind::Tm | ModelKind::TcTm => {
            let (m, dk) = (cfg.width, cfg.width / cfg.heads);
            store.register(&p("tm.in_w"), &[d, m], rng)?;
            store.register(&p("tm.in_b"), &[m], rng)?;
            for j in 0..cfg.heads {
                for proj in ["q", "k", "v"] {
                    store.register(&p(&format!("tm.h{j}.{proj}")), &[m, dk], rng)?;
                }
            }
            register_head(store, prefix, m, k, rng)?;
            if cfg.kind == ModelKind::TcTm {
                register_kernel(store, &p("tc.kernel_k"), cfg, rng)?;
                register_kernel(store, &p("tc.kernel_v"), cfg, rng)?;
            }
        }
        ModelKind::Ensemble | ModelKind::TcEns => {
            return Err(ModelError::Contract("ensembles register through their members".into()));
        }
    }
    Ok(())
}

fn register_head(store: &mut ParamStore, prefix: &str, r: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<()> {
    store.register(&format!("{prefix}head.w"), &[r, k], rng)?;
    store.register(&format!("{prefix}head.b"), &[k], rng)
}

/// Extra parameters of the coherent assignment or attention, registered last.
fn register_tc(store: &mut ParamStore, prefix: &str, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<()> {
    match cfg.tc_mode {
        TcMode::Exact | TcMode::Gated => Ok(()),
        TcMode::LearnedGate => {
            store.register(&format!("{prefix}tc.gate_bias"), &[1], rng)?;
            store.register(&format!("{prefix}tc.gate_slope"), &[1], rng)
        }
        TcMode::Conv => register_kernel(store, &format!("{prefix}tc.kernel"), cfg, rng),
    }
}

/// Unit impulse plus small uniform noise.
fn register_kernel(store: &mut ParamStore, name: &str, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<()> {
    let (f, w) = (cfg.feature_maps, cfg.kernel_width);
    store.register(name, &[f, w], rng)?;
    let mut data = store.get(name)?.data().to_vec();
    for m in 0..f {
        data[m * w + w / 2] += 1.0;
    }
    store.set(name, Tensor::new(&[f, w], data)?)
}

pub(super) fn forward(tape: &mut Tape, p: Bound<'_>, cfg: &ModelConfig, input: &ModelInput<'_>) -> Result<Forward> {
    let x = tape.constant(input.features.clone());
    match cfg.kind {
        ModelKind::Dnn => dnn(tape, p, x),
        ModelKind::Netvlad | ModelKind::TcNetvlad => netvlad(tape, p, cfg, input, x),
        ModelKind::Rnn | ModelKind::RnnAttn | ModelKind::TcRnn => rnn(tape, p, cfg, input, x),
        ModelKind::Tm | ModelKind::TcTm => transformer(tape, p, cfg, x),
        ModelKind::Ensemble | ModelKind::TcEns => Err(ModelError::Contract("ensembles forward through their members".into())),
    }
}

/// `x·w + b` for `x: N×R`, `w: R×C`, `b: [C]`.
fn affine(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    Ok(tape.add_row(xw, b)?)
}

/// Sigmoid head over the rows of `r: N×R`.
fn head(tape: &mut Tape, p: Bound<'_>, r: Var) -> Result<Var> {
    let (w, b) = (p.get("head.w")?, p.get("head.b")?);
    let logits = affine(tape, r, w, b)?;
    Ok(tape.sigmoid(logits)?)
}

/// Head over a single pooled row, returning `[K]`.
fn pooled_head(tape: &mut Tape, p: Bound<'_>, pooled: Var) -> Result<Var> {
    let r = tape.value(pooled).numel();
    let row = tape.reshape(pooled, &[1, r])?;
    let s = head(tape, p, row)?;
    let k = tape.value(s).numel();
    Ok(tape.reshape(s, &[k])?)
}

fn mean_rows(tape: &mut Tape, x: Var) -> Result<Var> {
    let t = tape.value(x).rows();
    let s = tape.sum_rows(x)?;
    Ok(tape.mul_scalar(s, 1.0 / t as f64)?)
}

fn dnn(tape: &mut Tape, p: Bound<'_>, x: Var) -> Result<Forward> {
    let (w, b) = (p.get("dnn.w")?, p.get("dnn.b")?);
    let pooled = mean_rows(tape, x)?;
    let d = tape.value(pooled).numel();
    let row = tape.reshape(pooled, &[1, d])?;
    let hidden = affine(tape, row, w, b)?;
    let hidden = tape.tanh(hidden)?;
    let scores = pooled_head(tape, p, hidden)?;
    let frame_hidden = affine(tape, x, w, b)?;
    let frame_hidden = tape.tanh(frame_hidden)?;
    let frame_scores = head(tape, p, frame_hidden)?;
    Ok(Forward { scores, frame_scores: Some(frame_scores), attention: None })
}

/// Neighbor gates for the coherent modes, `None` when ungated.
fn gates(tape: &mut Tape, p: Bound<'_>, cfg: &ModelConfig, input: &ModelInput<'_>, feats: Var) -> Result<Option<Var>> {
    match cfg.tc_mode {
        TcMode::Exact | TcMode::Conv => Ok(None),
        TcMode::Gated => {
            let starts = input
                .scene_starts
                .ok_or_else(|| ModelError::Config("gated coherence needs scene boundaries".into()))?;
            let z = gates_from_scenes(starts, tape.value(feats).rows())?;
            Ok(Some(tape.constant(z.values().clone())))
        }
        TcMode::LearnedGate => {
            let (bias, slope) = (p.get("tc.gate_bias")?, p.get("tc.gate_slope")?);
            Ok(Some(coherence::learned_gates_on_tape(tape, feats, bias, slope, cfg.distance_scale)?))
        }
    }
}

/// Soft assignment followed by intra-normalized, L2-normalized VLAD pooling.
fn netvlad(tape: &mut Tape, p: Bound<'_>, cfg: &ModelConfig, input: &ModelInput<'_>, x: Var) -> Result<Forward> {
    let (w, b, c) = (p.get("vlad.w")?, p.get("vlad.b")?, p.get("vlad.c")?);
    let wt = tape.transpose(w)?;
    let alpha = if cfg.kind == ModelKind::Netvlad {
        let q = affine(tape, x, wt, b)?;
        tape.softmax_lastdim(q)?
    } else if cfg.tc_mode == TcMode::Conv {
        let smoothed = coherence::tc_conv_layer_on_tape(tape, x, p.get("tc.kernel")?)?;
        let q = affine(tape, smoothed, wt, b)?;
        tape.softmax_lastdim(q)?
    } else {
        let q = affine(tape, x, wt, b)?;
        let d = coherence::affinity_on_tape(tape, x, cfg.distance_scale)?;
        let z = gates(tape, p, cfg, input, x)?;
        coherence::tc_assignment_on_tape(tape, q, d, z, cfg.radius)?
    };
    let v = vlad(tape, alpha, x, c)?;
    let scores = pooled_head(tape, p, v)?;
    Ok(Forward { scores, frame_scores: None, attention: None })
}

/// `V[k] = Σ_i α_ik (x_i − c_k)`, each row L2-normalized, then the whole vector; shape `[K_c·D]`.
fn vlad(tape: &mut Tape, alpha: Var, x: Var, c: Var) -> Result<Var> {
    let at = tape.transpose(alpha)?;
    let weighted = tape.matmul(at, x)?;
    let mass = tape.sum_rows(alpha)?;
    let shifted = tape.scale_rows(c, mass)?;
    let v = tape.sub(weighted, shifted)?;
    let sq = tape.mul(v, v)?;
    let row_sq = tape.sum_lastdim(sq)?;
    let row_sq = tape.add_scalar(row_sq, NORM_EPS)?;
    let row_norm = tape.unary(UnaryOp::Sqrt, row_sq)?;
    let inv = tape.unary(UnaryOp::Recip, row_norm)?;
    let intra = tape.scale_rows(v, inv)?;
    let n = tape.value(intra).numel();
    let flat = tape.reshape(intra, &[n])?;
    let sq = tape.mul(flat, flat)?;
    let total = tape.sum(sq)?;
    let total = tape.add_scalar(total, NORM_EPS)?;
    let norm = tape.unary(UnaryOp::Sqrt, total)?;
    let inv = tape.unary(UnaryOp::Recip, norm)?;
    Ok(tape.mul_scalar_var(flat, inv)?)
}

/// GRU hidden states `T×H` from a zero initial state.
fn gru(tape: &mut Tape, p: Bound<'_>, x: Var) -> Result<Var> {
    let t_len = tape.value(x).rows();
    let mut gates = Vec::new();
    for g in ["z", "r", "n"] {
        let (w, u, b) = (p.get(&format!("gru.w{g}"))?, p.get(&format!("gru.u{g}"))?, p.get(&format!("gru.b{g}"))?);
        let xw = affine(tape, x, w, b)?;
        gates.push((xw, u));
    }
    let h_dim = tape.value(gates[0].1).rows();
    let mut h = tape.constant(Tensor::zeros(&[1, h_dim]));
    let mut states = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let xz = tape.slice_rows(gates[0].0, t, 1)?;
        let xr = tape.slice_rows(gates[1].0, t, 1)?;
        let xn = tape.slice_rows(gates[2].0, t, 1)?;
        let hz = tape.matmul(h, gates[0].1)?;
        let z = tape.add(xz, hz)?;
        let z = tape.sigmoid(z)?;
        let hr = tape.matmul(h, gates[1].1)?;
        let r = tape.add(xr, hr)?;
        let r = tape.sigmoid(r)?;
        let rh = tape.mul(r, h)?;
        let hn = tape.matmul(rh, gates[2].1)?;
        let n = tape.add(xn, hn)?;
        let n = tape.tanh(n)?;
        // h' = n + z ⊙ (h − n)
        let diff = tape.sub(h, n)?;
        let keep = tape.mul(z, diff)?;
        h = tape.add(n, keep)?;
        states.push(h);
    }
    Ok(tape.concat_rows(&states)?)
}

/// Additive attention scores `e_i = vᵀ tanh(W h_i + b)`, shape `[T]`.
fn attention_scores(tape: &mut Tape, p: Bound<'_>, h: Var) -> Result<Var> {
    let (w, b, v) = (p.get("att.w")?, p.get("att.b")?, p.get("att.v")?);
    let a = affine(tape, h, w, b)?;
    let a = tape.tanh(a)?;
    let e = tape.matmul(a, v)?;
    let t = tape.value(e).rows();
    Ok(tape.reshape(e, &[t])?)
}

/// `Σ_i α_i h_i` as `[H]`.
fn attention_pool(tape: &mut Tape, alpha: Var, h: Var) -> Result<Var> {
    let t = tape.value(alpha).numel();
    let row = tape.reshape(alpha, &[1, t])?;
    let pooled = tape.matmul(row, h)?;
    let hd = tape.value(pooled).numel();
    Ok(tape.reshape(pooled, &[hd])?)
}

fn rnn(tape: &mut Tape, p: Bound<'_>, cfg: &ModelConfig, input: &ModelInput<'_>, x: Var) -> Result<Forward> {
    let h = gru(tape, p, x)?;
    let frame_scores = Some(head(tape, p, h)?);
    let t_len = tape.value(h).rows();
    if cfg.kind == ModelKind::Rnn {
        let last = tape.slice_rows(h, t_len - 1, 1)?;
        let scores = pooled_head(tape, p, last)?;
        return Ok(Forward { scores, frame_scores, attention: None });
    }
    let alpha = if cfg.kind == ModelKind::RnnAttn {
        let e = attention_scores(tape, p, h)?;
        tape.softmax_lastdim(e)?
    } else if cfg.tc_mode == TcMode::Conv {
        let smoothed = coherence::tc_conv_layer_on_tape(tape, h, p.get("tc.kernel")?)?;
        let e = attention_scores(tape, p, smoothed)?;
        tape.softmax_lastdim(e)?
    } else {
        let e = attention_scores(tape, p, h)?;
        let d = coherence::affinity_on_tape(tape, h, cfg.distance_scale)?;
        let z = gates(tape, p, cfg, input, h)?;
        let col = tape.reshape(e, &[t_len, 1])?;
        let s = coherence::coherent_logits_on_tape(tape, col, d, z, cfg.radius)?;
        let s = tape.reshape(s, &[t_len])?;
        tape.softmax_lastdim(s)?
    };
    let pooled = attention_pool(tape, alpha, h)?;
    let scores = pooled_head(tape, p, pooled)?;
    Ok(Forward { scores, frame_scores, attention: Some(alpha) })
}

/// Multi-head scaled dot-product self-attention, heads concatenated and mean-pooled.
fn transformer(tape: &mut Tape, p: Bound<'_>, cfg: &ModelConfig, x: Var) -> Result<Forward> {
    let x0 = affine(tape, x, p.get("tm.in_w")?, p.get("tm.in_b")?)?;
    let dk = cfg.width / cfg.heads;
    let mut heads = Vec::with_capacity(cfg.heads);
    for j in 0..cfg.heads {
        let q = tape.matmul(x0, p.get(&format!("tm.h{j}.q"))?)?;
        let mut k = tape.matmul(x0, p.get(&format!("tm.h{j}.k"))?)?;
        let mut v = tape.matmul(x0, p.get(&format!("tm.h{j}.v"))?)?;
        if cfg.kind == ModelKind::TcTm {
            k = coherence::tc_conv_layer_on_tape(tape, k, p.get("tc.kernel_k")?)?;
            v = coherence::tc_conv_layer_on_tape(tape, v, p.get("tc.kernel_v")?)?;
        }
        let a = dot_attention(tape, q, k, dk)?;
        heads.push(tape.matmul(a, v)?);
    }
    let joined = tape.concat_cols(&heads)?;
    let frame_scores = Some(head(tape, p, joined)?);
    let pooled = mean_rows(tape, joined)?;
    let scores = pooled_head(tape, p, pooled)?;
    Ok(Forward { scores, frame_scores, attention: None })
}

/// `softmax(Q Kᵀ / √d_k)`, rows summing to one.
pub(super) fn dot_attention(tape: &mut Tape, q: Var, k: Var, dk: usize) -> Result<Var> {
    let kt = tape.transpose(k)?;
    let logits = tape.matmul(q, kt)?;
    let logits = tape.mul_scalar(logits, 1.0 / (dk as f64).sqrt())?;
    Ok(tape.softmax_lastdim(logits)?)
}
