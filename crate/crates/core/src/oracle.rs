//! Brute-force scalar-loop twins of the vectorized operators and metrics.
//!
//! These evaluate each formula literally (products of exponentials, explicit
//! windows, per-item rank counting) and share no code with the fast paths.

#![allow(clippy::needless_range_loop)]

use crate::coherence::SelfTerm;
use crate::metrics::EvalRecord;

pub type Matrix = Vec<Vec<f64>>;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s.sqrt()
}

pub fn affinity(x: &Matrix) -> Matrix {
    let t = x.len();
    let mut d = vec![vec![0.0; t]; t];
    for i in 0..t {
        for j in 0..t {
            d[i][j] = (-dist(&x[i], &x[j])).exp();
        }
    }
    d
}

fn in_neighborhood(i: usize, j: usize, radius: usize) -> bool {
    i != j && i.abs_diff(j) <= radius
}

fn normalize(v: &mut [f64]) {
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
}

/// `α_ik ∝ exp(q_ik)·exp(Σ_{j∈N_i} z_ij q_jk d_ij)`.
pub fn tc_assignment(q: &Matrix, d: &Matrix, z: Option<&Matrix>, radius: usize) -> Matrix {
    let (t, k) = (q.len(), q[0].len());
    let mut out = vec![vec![0.0; k]; t];
    for i in 0..t {
        for c in 0..k {
            let mut s = 0.0;
            for j in 0..t {
                if in_neighborhood(i, j, radius) {
                    let gate = z.map_or(1.0, |z| z[i][j]);
                    s += gate * q[j][c] * d[i][j];
                }
            }
            out[i][c] = q[i][c].exp() * s.exp();
        }
        normalize(&mut out[i]);
    }
    out
}

/// `α_i ∝ exp(e_i)·exp(Σ_{j∈N_i} e_j exp(−‖h_i − h_j‖))`.
pub fn tc_attention(e: &[f64], h: &Matrix, radius: usize) -> Vec<f64> {
    let t = e.len();
    let mut out = vec![0.0; t];
    for i in 0..t {
        let mut s = 0.0;
        for j in 0..t {
            if in_neighborhood(i, j, radius) {
                s += e[j] * (-dist(&h[i], &h[j])).exp();
            }
        }
        out[i] = e[i].exp() * s.exp();
    }
    normalize(&mut out);
    out
}

/// `α_ik ∝ exp(w_kᵀ Σ_{j=i−L}^{i+L} x_j d_ij + b_k)` with `d_ii = 1`.
pub fn tc_assignment_conv(x: &Matrix, w: &Matrix, b: &[f64], d: &Matrix, radius: usize) -> Matrix {
    let (t, dim, k) = (x.len(), x[0].len(), w.len());
    let mut out = vec![vec![0.0; k]; t];
    for i in 0..t {
        let mut agg = vec![0.0; dim];
        let lo = i.saturating_sub(radius);
        let hi = (i + radius).min(t - 1);
        for j in lo..=hi {
            let weight = if j == i { 1.0 } else { d[i][j] };
            for f in 0..dim {
                agg[f] += x[j][f] * weight;
            }
        }
        for c in 0..k {
            let mut logit = b[c];
            for f in 0..dim {
                logit += w[c][f] * agg[f];
            }
            out[i][c] = logit.exp();
        }
        normalize(&mut out[i]);
    }
    out
}

/// `α_j ∝ exp(Σ_{i=j−L}^{j+L} e_i d′_ij [+ e_j])`.
pub fn tc_attention_conv(e: &[f64], dprime: &Matrix, radius: usize, self_term: SelfTerm) -> Vec<f64> {
    let t = e.len();
    let mut out = vec![0.0; t];
    for j in 0..t {
        let mut s = 0.0;
        for i in j.saturating_sub(radius)..=(j + radius).min(t - 1) {
            s += e[i] * dprime[i][j];
        }
        if self_term == SelfTerm::WindowPlusSelf {
            s += e[j];
        }
        out[j] = s.exp();
    }
    normalize(&mut out);
    out
}

/// Mean over kernels of zero-padded depthwise convolutions.
pub fn conv_layer(seq: &Matrix, kernels: &Matrix) -> Matrix {
    let (t, dim) = (seq.len(), seq[0].len());
    let mut out = vec![vec![0.0; dim]; t];
    for k in kernels {
        let half = (k.len() / 2) as isize;
        for i in 0..t {
            for f in 0..dim {
                let mut s = 0.0;
                for (o, &kv) in k.iter().enumerate() {
                    let src = i as isize + o as isize - half;
                    if src >= 0 && (src as usize) < t {
                        s += kv * seq[src as usize][f];
                    }
                }
                out[i][f] += s / kernels.len() as f64;
            }
        }
    }
    out
}

pub struct NetVladWeights<'a> {
    pub w: &'a Matrix,
    pub b: &'a [f64],
    pub c: &'a Matrix,
    pub head_w: &'a Matrix,
    pub head_b: &'a [f64],
}

/// Plain NetVLAD scores with intra- then global L2 normalization (`1e-12` under each root).
pub fn netvlad(p: &NetVladWeights<'_>, x: &Matrix) -> Vec<f64> {
    let (t, dim, kc) = (x.len(), x[0].len(), p.w.len());
    let mut v = vec![vec![0.0; dim]; kc];
    for i in 0..t {
        let mut alpha = vec![0.0; kc];
        for c in 0..kc {
            let mut q = p.b[c];
            for f in 0..dim {
                q += p.w[c][f] * x[i][f];
            }
            alpha[c] = q.exp();
        }
        normalize(&mut alpha);
        for c in 0..kc {
            for f in 0..dim {
                v[c][f] += alpha[c] * (x[i][f] - p.c[c][f]);
            }
        }
    }
    let mut flat = Vec::with_capacity(kc * dim);
    for row in &v {
        let n = (row.iter().map(|a| a * a).sum::<f64>() + 1e-12).sqrt();
        flat.extend(row.iter().map(|a| a / n));
    }
    let n = (flat.iter().map(|a| a * a).sum::<f64>() + 1e-12).sqrt();
    flat.iter_mut().for_each(|a| *a /= n);
    let k = p.head_b.len();
    (0..k)
        .map(|l| {
            let mut s = p.head_b[l];
            for (r, fv) in flat.iter().enumerate() {
                s += fv * p.head_w[r][l];
            }
            1.0 / (1.0 + (-s).exp())
        })
        .collect()
}

/// Rank of `label` within a score row: higher scores first, lower ids first on ties.
fn rank(scores: &[f64], label: usize) -> usize {
    (0..scores.len())
        .filter(|&m| scores[m] > scores[label] || (scores[m] == scores[label] && m < label))
        .count()
}

/// GAP by per-positive counting over the pooled top-`top_n` pairs.
pub fn gap(records: &[EvalRecord], top_n: usize) -> Option<f64> {
    let mut pairs = Vec::new();
    let mut positives = 0;
    for r in records {
        positives += r.truth.count().min(top_n);
        for l in 0..r.scores.len() {
            if rank(&r.scores, l) < top_n {
                pairs.push((r.scores[l], r.truth.contains(l)));
            }
        }
    }
    if positives == 0 {
        return None;
    }
    let mut ap = 0.0;
    for &(s, hit) in &pairs {
        if hit {
            let above = pairs.iter().filter(|p| p.0 >= s).count();
            let above_hits = pairs.iter().filter(|p| p.0 >= s && p.1).count();
            ap += above_hits as f64 / above as f64;
        }
    }
    Some(ap / positives as f64)
}

pub fn map(records: &[EvalRecord]) -> Option<f64> {
    let k = records[0].scores.len();
    let (mut total, mut classes) = (0.0, 0);
    for c in 0..k {
        let pos: Vec<&EvalRecord> = records.iter().filter(|r| r.truth.contains(c)).collect();
        if pos.is_empty() {
            continue;
        }
        let mut ap = 0.0;
        for p in &pos {
            let s = p.scores[c];
            let above = records.iter().filter(|r| r.scores[c] >= s).count();
            let above_hits = pos.iter().filter(|r| r.scores[c] >= s).count();
            ap += above_hits as f64 / above as f64;
        }
        total += ap / pos.len() as f64;
        classes += 1;
    }
    (classes > 0).then(|| total / classes as f64)
}

pub fn perr(records: &[EvalRecord]) -> Option<f64> {
    let (mut total, mut used) = (0.0, 0);
    for r in records {
        let m = r.truth.count();
        if m == 0 {
            continue;
        }
        let hits = (0..r.scores.len()).filter(|&l| rank(&r.scores, l) < m && r.truth.contains(l)).count();
        total += hits as f64 / m as f64;
        used += 1;
    }
    (used > 0).then(|| total / used as f64)
}

pub fn hit1(records: &[EvalRecord]) -> f64 {
    let hits = records
        .iter()
        .filter(|r| (0..r.scores.len()).any(|l| rank(&r.scores, l) == 0 && r.truth.contains(l)))
        .count();
    hits as f64 / records.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::LabelSet;

    #[test]
    fn oracle_hand_cases() {
        let rec = |s: &[f64], t: &[usize]| EvalRecord::new("r", s.to_vec(), LabelSet::from_ids(s.len(), t)).unwrap();
        assert_eq!(gap(&[rec(&[0.9, 0.1], &[1])], 20), Some(0.5));
        let recs = [rec(&[0.9], &[0]), rec(&[0.5], &[]), rec(&[0.1], &[0])];
        assert!((map(&recs).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(perr(&[rec(&[0.9, 0.1, 0.8], &[0, 1])]), Some(0.5));
        assert_eq!(hit1(&[rec(&[0.5, 0.5], &[0])]), 1.0);
        let a = tc_attention(&[0.3, 0.3], &vec![vec![1.0], vec![1.0]], 1);
        assert_eq!(a, vec![0.5, 0.5]);
    }
}
