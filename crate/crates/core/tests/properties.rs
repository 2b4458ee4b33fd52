use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tempocoh::coherence::{self, DistanceScale, GateMatrix, SelfTerm, TcKernel};
use tempocoh::data::{generate_synthetic, split, SynthConfig};
use tempocoh::loss::{self, PredictionBatch};
use tempocoh::metrics::{self, EvalRecord, MetricSet};
use tempocoh::models::{Model, ModelConfig, ModelInput, ModelKind, TcMode};
use tempocoh::taxonomy::{LabelSet, Taxonomy};
use tempocoh::tensor::{self, check_gradients, Tensor};
use tempocoh::verify;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |d| Tensor::new(&[rows, cols], d).unwrap())
}

/// `(x, w, radius)` with `T ≤ 16`, `K ≤ 8`, `D ≤ 8`, `L ≤ 3`.
fn instance() -> impl Strategy<Value = (Tensor, Tensor, usize)> {
    (1usize..=16, 1usize..=8, 1usize..=8, 0usize..=3).prop_flat_map(|(t, k, d, l)| (matrix(t, d), matrix(k, d), Just(l)))
}

fn scenes(t: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(any::<bool>(), t.saturating_sub(1)).prop_map(|cuts| {
        let mut s = vec![0];
        s.extend(cuts.iter().enumerate().filter(|(_, &c)| c).map(|(i, _)| i + 1));
        s
    })
}

fn toy_taxonomy() -> Taxonomy {
    Taxonomy::parse(include_str!("../../../data/toy20.tsv")).unwrap()
}

fn records(max_n: usize, max_k: usize) -> impl Strategy<Value = Vec<EvalRecord>> {
    (1..=max_n, 1..=max_k).prop_flat_map(|(n, k)| {
        prop::collection::vec((prop::collection::vec(0.01f64..1.0, k), prop::collection::vec(any::<bool>(), k)), n).prop_map(|rows| {
            rows.into_iter()
                .enumerate()
                .map(|(i, (s, t))| EvalRecord::new(format!("r{i:02}"), s, LabelSet::from_bits(t)).unwrap())
                .collect()
        })
    })
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_is_normalized_and_shift_invariant(x in matrix(4, 5), c in -50.0f64..50.0) {
        let s = tensor::softmax_lastdim(&x).unwrap();
        for i in 0..4 {
            prop_assert!((s.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        let shifted = tensor::softmax_lastdim(&x.map(|v| v + c)).unwrap();
        prop_assert!(s.max_abs_diff(&shifted) <= 1e-12);
    }

    #[test]
    fn delta_kernel_convolution_is_bit_exact_identity(x in matrix(7, 3), half in 0usize..4) {
        let mut k = vec![0.0; 2 * half + 1];
        k[half] = 1.0;
        prop_assert_eq!(tensor::conv1d_same(&x, &Tensor::vector(k)).unwrap(), x);
    }

    #[test]
    fn ops_are_pure((x, w, l) in instance()) {
        let d = coherence::affinity(&x, DistanceScale::Raw).unwrap();
        let q = tensor::matmul(&x, &tensor::transpose(&w).unwrap()).unwrap();
        let a = coherence::tc_assignment(&q, &d, l).unwrap();
        let b = coherence::tc_assignment(&q, &d, l).unwrap();
        prop_assert_eq!(a.values().data(), b.values().data());
    }

    #[test]
    fn coherent_outputs_sum_to_one((x, w, l) in instance(), seed in any::<u64>()) {
        let t = x.rows();
        let d = coherence::affinity(&x, DistanceScale::Raw).unwrap();
        let q = tensor::matmul(&x, &tensor::transpose(&w).unwrap()).unwrap();
        let e = Tensor::vector((0..t).map(|i| ((seed as f64) * 1e-3 + i as f64).sin() * 3.0).collect());
        let b = Tensor::zeros(&[w.rows()]);
        let z = coherence::gates_from_scenes(&[0], t).unwrap();
        for a in [
            coherence::tc_assignment(&q, &d, l).unwrap(),
            coherence::tc_assignment_gated(&q, &d, &z, l).unwrap(),
            coherence::tc_assignment_conv(&x, &w, &b, &d, l).unwrap(),
        ] {
            prop_assert!(a.row_sums().iter().all(|s| (s - 1.0).abs() <= 1e-12));
        }
        for st in [SelfTerm::Window, SelfTerm::WindowPlusSelf] {
            let a = coherence::tc_attention_conv(&e, &d, l, st).unwrap();
            prop_assert!((a.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        let a = coherence::tc_attention(&e, &x, l).unwrap();
        prop_assert!((a.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn gate_extremes_reduce_exactly((x, w, l) in instance()) {
        let t = x.rows();
        let d = coherence::affinity(&x, DistanceScale::Raw).unwrap();
        let q = tensor::matmul(&x, &tensor::transpose(&w).unwrap()).unwrap();
        let ones = coherence::tc_assignment_gated(&q, &d, &GateMatrix::constant(t, 1.0), l).unwrap();
        prop_assert!(ones.values().max_abs_diff(coherence::tc_assignment(&q, &d, l).unwrap().values()) <= 1e-12);
        let zeros = coherence::tc_assignment_gated(&q, &d, &GateMatrix::constant(t, 0.0), l).unwrap();
        prop_assert!(zeros.values().max_abs_diff(coherence::vanilla_assignment(&q).unwrap().values()) <= 1e-12);
    }

    #[test]
    fn set_and_conv_assignments_agree_without_bias((x, w, l) in instance()) {
        let d = coherence::affinity(&x, DistanceScale::Raw).unwrap();
        let q = tensor::matmul(&x, &tensor::transpose(&w).unwrap()).unwrap();
        let set = coherence::tc_assignment(&q, &d, l).unwrap();
        let conv = coherence::tc_assignment_conv(&x, &w, &Tensor::zeros(&[w.rows()]), &d, l).unwrap();
        prop_assert!(set.values().max_abs_diff(conv.values()) <= 1e-10);
    }

    #[test]
    fn two_mutual_frames_get_equal_attention(e in -5.0f64..5.0, h in prop::collection::vec(-1.0f64..1.0, 1..6)) {
        let x = Tensor::matrix(&[h.clone(), h]).unwrap();
        let a = coherence::tc_attention(&Tensor::vector(vec![e, e]), &x, 1).unwrap();
        prop_assert_eq!(a.weights()[0], a.weights()[1]);
    }

    #[test]
    fn closure_is_idempotent_and_depth_preserving(picks in prop::collection::vec(0usize..20, 0..5)) {
        let tax = toy_taxonomy();
        let c = tax.ancestor_closure(&picks).unwrap();
        let ids: Vec<usize> = c.ids().collect();
        prop_assert_eq!(tax.ancestor_closure(&ids).unwrap(), c.clone());
        prop_assert!(tax.is_closed(&c));
        for &j in &picks {
            prop_assert_eq!(tax.deepest_level(&tax.ancestor_closure(&[j]).unwrap()).unwrap(), tax.level(j).unwrap());
        }
    }

    #[test]
    fn logit_scaling_keeps_argmax(p in prop::collection::vec(0.01f64..0.99, 6), c in 0.1f64..10.0) {
        let scaled: Vec<f64> = p.iter().map(|v| tensor::sigmoid(c * (v / (1.0 - v)).ln())).collect();
        let top = scaled.iter().cloned().fold(f64::MIN, f64::max);
        let a = PredictionBatch::new(Tensor::new(&[1, 6], p).unwrap()).unwrap();
        let b = PredictionBatch::new(Tensor::new(&[1, 6], scaled.clone()).unwrap()).unwrap();
        // The sigmoid can saturate to a tie, so the old argmax only has to stay maximal.
        prop_assert_eq!(scaled[a.argmax()[0]], top);
        prop_assert_eq!(scaled[b.argmax()[0]], top);
    }

    #[test]
    fn label_prior_ignores_order_within_segments(x in prop::collection::vec(0.01f64..0.99, 18), cut in 1usize..5) {
        let preds = Tensor::new(&[6, 3], x.clone()).unwrap();
        let segments = loss::segments_from_starts(&[0, cut], 6);
        let mut rows: Vec<Vec<f64>> = (0..6).map(|i| preds.row(i).to_vec()).collect();
        rows[..cut].reverse();
        rows[cut..].rotate_left(1);
        let permuted = Tensor::matrix(&rows).unwrap();
        let a = loss::label_prior_loss(&preds, &segments).unwrap();
        let b = loss::label_prior_loss(&permuted, &segments).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn metrics_are_rank_based(recs in records(8, 6)) {
        let cubed: Vec<EvalRecord> = recs
            .iter()
            .map(|r| EvalRecord::new(r.video_id.clone(), r.scores.iter().map(|s| s.powi(3)).collect(), r.truth.clone()).unwrap())
            .collect();
        let a = MetricSet::compute(&recs, 20).unwrap();
        let b = MetricSet::compute(&cubed, 20).unwrap();
        for name in metrics::METRIC_NAMES {
            match (a.get(name), b.get(name)) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() <= 1e-12, "{name}: {x} vs {y}"),
                (x, y) => prop_assert_eq!(x, y),
            }
            if let Some(v) = a.get(name) {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn duplicates_leave_metrics_unchanged(recs in records(6, 5)) {
        let mut doubled = recs.clone();
        doubled.extend(recs.iter().cloned());
        let a = MetricSet::compute(&recs, 20).unwrap();
        let b = MetricSet::compute(&doubled, 20).unwrap();
        for name in ["gap", "perr", "hit1"] {
            match (a.get(name), b.get(name)) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() <= 1e-12, "{name}: {x} vs {y}"),
                (x, y) => prop_assert_eq!(x, y),
            }
        }
    }

    #[test]
    fn perfect_predictions_score_one(truth in prop::collection::vec(prop::collection::vec(any::<bool>(), 5), 1..6)) {
        prop_assume!(truth.iter().all(|t| t.iter().any(|&b| b)));
        let recs: Vec<EvalRecord> = truth
            .iter()
            .enumerate()
            .map(|(i, t)| EvalRecord::new(format!("r{i}"), t.iter().map(|&b| if b { 0.9 } else { 0.1 }).collect(), LabelSet::from_bits(t.clone())).unwrap())
            .collect();
        let m = MetricSet::compute(&recs, 20).unwrap();
        prop_assert_eq!((m.gap, m.perr, m.hit1), (Some(1.0), Some(1.0), Some(1.0)));
        prop_assert_eq!(m.map, Some(1.0));
    }

    #[test]
    fn splits_partition_indices(n in 0usize..200, a in 0.0f64..1.0, b in 0.0f64..1.0, seed in any::<u64>()) {
        let (a, b) = (a.min(1.0 - 1e-9) * 0.999, b);
        let f = [a, (1.0 - a) * b, 1.0 - a - (1.0 - a) * b];
        let s = split(n, f, seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(split(n, f, seed).unwrap(), s);
    }

    #[test]
    fn model_outputs_are_probabilities(kind_ix in 0usize..10, t in 1usize..8, seed in 0u64..1000, feats in matrix(8, 3), sc in scenes(8)) {
        let kind = ModelKind::ALL[kind_ix];
        let mut cfg = ModelConfig::toy(kind, 3, 4);
        cfg.kernel_width = 3;
        let m = Model::init(cfg, seed).unwrap();
        let x = Tensor::new(&[t, 3], feats.data()[..t * 3].to_vec()).unwrap();
        let sc: Vec<usize> = sc.into_iter().filter(|&s| s < t).collect();
        for p in m.predict(&ModelInput::with_scenes(&x, &sc)).unwrap() {
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn generated_truth_is_closed_and_gates_follow_the_plan(seed in any::<u64>(), sigma in 0.0f64..1.0) {
        let tax = toy_taxonomy();
        let cfg = SynthConfig { num_videos: 16, sigma, seed, video_dim: 4, audio_dim: 2, ..Default::default() };
        let recs = generate_synthetic(&cfg, &tax).unwrap();
        let leaves = tax.leaves();
        for (i, r) in recs.iter().enumerate() {
            prop_assert!(tax.is_closed(&r.truth));
            let plan = tempocoh::data::synth::scene_plan(&cfg, &leaves, i as u64);
            prop_assert_eq!(&r.scene_starts, &plan.starts);
            let z = coherence::gates_from_scenes(&r.scene_starts, r.frames()).unwrap();
            let scene = |f: usize| plan.starts.iter().filter(|&&s| s <= f).count();
            for a in 0..r.frames() {
                for b in 0..r.frames() {
                    prop_assert_eq!(z.values().get2(a, b) == 1.0, scene(a) == scene(b));
                }
            }
        }
    }
}

#[test]
fn every_op_gradient_matches_finite_differences_over_100_seeds() {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, build, inputs) in verify::op_gradient_cases(&mut rng) {
            let err = check_gradients(&*build, &inputs, verify::FD_STEP).unwrap().max_error();
            assert!(err <= 1e-5, "{name} seed {seed}: relative error {err:e}");
        }
    }
}

#[test]
fn coherent_variants_break_frame_permutation_invariance() {
    let x = Tensor::matrix(&[vec![0.0, 0.0, 1.0], vec![0.1, 0.0, 0.9], vec![2.0, -1.0, 0.0], vec![1.9, -1.1, 0.2], vec![-1.0, 1.0, 0.5]]).unwrap();
    let mut order: Vec<Vec<f64>> = (0..5).map(|i| x.row(i).to_vec()).collect();
    order.swap(1, 4);
    let shuffled = Tensor::matrix(&order).unwrap();
    for mode in [TcMode::Exact, TcMode::Conv] {
        let mut cfg = ModelConfig::toy(ModelKind::TcNetvlad, 3, 4);
        cfg.tc_mode = mode;
        cfg.kernel_width = 3;
        let mut m = Model::init(cfg, 3).unwrap();
        if mode == TcMode::Conv {
            m.params_mut().set("tc.kernel", Tensor::full(&[cfg.feature_maps, 3], 0.5)).unwrap();
        }
        let a = m.predict(&ModelInput::new(&x)).unwrap();
        let b = m.predict(&ModelInput::new(&shuffled)).unwrap();
        assert!(max_diff(&a, &b) > 1e-9, "{mode:?} stayed permutation invariant");
    }
    let plain = Model::init(ModelConfig::toy(ModelKind::Netvlad, 3, 4), 3).unwrap();
    let a = plain.predict(&ModelInput::new(&x)).unwrap();
    let b = plain.predict(&ModelInput::new(&shuffled)).unwrap();
    assert!(max_diff(&a, &b) <= 1e-12);
}

#[test]
fn partial_credit_rises_along_a_chain() {
    let chain = Taxonomy::from_parents(&[(None, "A"), (Some(0), "B"), (Some(1), "C"), (Some(2), "D"), (Some(3), "E")]).unwrap();
    let y = chain.ancestor_closure(&[4]).unwrap();
    let credit: Vec<f64> = (0..5).map(|k| loss::partial_credit(&chain, &y, k, k).unwrap()).collect();
    assert!(credit.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(credit[4], 1.0);
    assert!(credit[..4].iter().all(|&c| c < 1.0));
}

#[test]
fn delta_kernels_report_a_centered_peak() {
    let k = TcKernel::delta(4, 5).unwrap();
    assert_eq!(k.normalized_average(), vec![0.0, 0.0, 1.0, 0.0, 0.0]);
    assert_eq!(k.peak_offset(), 0);
}
