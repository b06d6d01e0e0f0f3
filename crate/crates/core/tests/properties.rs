use proptest::prelude::*;
use sail_core::dataio::{decode_raw, encode_raw, RawEmbeddings};
use sail_core::eval::{localization_scores, mask_to_segment, temporal_iou, Matching};
use sail_core::loss::{cosine, diversity_loss, sim_loss, sim_loss_inverse, PooledEmbedding};
use sail_core::mask::{
    constrain, inter_mask_params, inverse_mask, kernel_eval, make_mask, unconstrain,
};
use sail_core::{EmbeddingMatrix, EngineConfig, MaskKind, MaskParams, RawMaskParams, Segment};

fn smooth_kind() -> impl Strategy<Value = MaskKind> {
    prop_oneof![Just(MaskKind::Gaussian), Just(MaskKind::Cauchy)]
}

fn any_kind() -> impl Strategy<Value = MaskKind> {
    prop_oneof![
        Just(MaskKind::Gaussian),
        Just(MaskKind::Cauchy),
        Just(MaskKind::HardBinary)
    ]
}

fn params() -> impl Strategy<Value = MaskParams> {
    (0.01f64..0.99, 0.01f64..0.99).prop_map(|(c, w)| MaskParams::new(c, w).unwrap())
}

fn segment() -> impl Strategy<Value = Segment> {
    (0.0f64..1.0, 0.0f64..1.0).prop_map(|(a, b)| {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        Segment::new(lo, hi.max(lo + 1e-9).min(1.0)).unwrap()
    })
}

fn matrix(rows: usize, dim: usize) -> impl Strategy<Value = EmbeddingMatrix> {
    prop::collection::vec(-1.0f64..1.0, rows * dim)
        .prop_map(move |data| EmbeddingMatrix::new(rows, dim, data).unwrap())
}

/// Pooled features and captions for one video with `k` events.
fn video(max_k: usize) -> impl Strategy<Value = (EmbeddingMatrix, EmbeddingMatrix)> {
    (1..=max_k, 2usize..6).prop_flat_map(|(k, d)| (matrix(k, d), matrix(k, d)))
}

fn as_pooled(m: &EmbeddingMatrix) -> Vec<PooledEmbedding> {
    m.iter_rows()
        .map(|r| PooledEmbedding {
            vector: r.to_vec(),
            source_mask_kind: MaskKind::Gaussian,
        })
        .collect()
}

fn brute_cos(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    ab / (aa.sqrt().max(1e-8) * bb.sqrt().max(1e-8))
}

/// Direct transcription of the ranking hinge, looping over every negative.
fn brute_sim(pooled: &EmbeddingMatrix, captions: &EmbeddingMatrix, margin: f64) -> f64 {
    let k = captions.rows();
    let mut total = 0.0;
    for i in 0..k {
        let pos = brute_cos(pooled.row(i), captions.row(i));
        let mut neg = if k == 1 { 0.0 } else { f64::NEG_INFINITY };
        for j in 0..k {
            if j != i {
                neg = neg.max(brute_cos(pooled.row(i), captions.row(j)));
            }
        }
        total += (margin - pos + neg).max(0.0);
    }
    total / k as f64
}

fn brute_inverse(pooled: &EmbeddingMatrix, captions: &EmbeddingMatrix, margin: f64) -> f64 {
    let k = captions.rows();
    if k < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..k {
        let mut rest = vec![0.0; captions.dim()];
        for j in (0..k).filter(|&j| j != i) {
            for (r, x) in rest.iter_mut().zip(captions.row(j)) {
                *r += x / (k - 1) as f64;
            }
        }
        let pos = brute_cos(pooled.row(i), &rest);
        let neg = brute_cos(pooled.row(i), captions.row(i));
        total += (margin - pos + neg).max(0.0);
    }
    total / k as f64
}

fn permute(m: &EmbeddingMatrix, order: &[usize]) -> EmbeddingMatrix {
    let rows: Vec<Vec<f64>> = order.iter().map(|&i| m.row(i).to_vec()).collect();
    EmbeddingMatrix::from_rows(&rows).unwrap()
}

proptest! {
    #[test]
    fn kernels_are_symmetric_about_the_center(
        kind in smooth_kind(), p in params(), d in 0.0f64..0.5, tau in 0.05f64..2.0,
    ) {
        let c = p.center();
        let right = kernel_eval(kind, c + d, c, p.width(), tau).unwrap();
        let left = kernel_eval(kind, c - d, c, p.width(), tau).unwrap();
        prop_assert!((right.value - left.value).abs() <= 1e-12);
        prop_assert!((right.d_center + left.d_center).abs() <= 1e-9 * (1.0 + right.d_center.abs()));
    }

    #[test]
    fn kernels_decrease_away_from_center(
        kind in any_kind(), p in params(), d1 in 0.0f64..0.5, d2 in 0.0f64..0.5,
    ) {
        let (near, far) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let c = p.center();
        let a = kernel_eval(kind, c + near, c, p.width(), 1.0).unwrap().value;
        let b = kernel_eval(kind, c + far, c, p.width(), 1.0).unwrap().value;
        prop_assert!(a >= b);
        prop_assert_eq!(kernel_eval(kind, c, c, p.width(), 1.0).unwrap().value, 1.0);
    }

    #[test]
    fn mask_weights_lie_in_unit_interval(kind in any_kind(), p in params(), n in 2usize..128) {
        let engine = EngineConfig::with_frames(n).unwrap();
        let m = make_mask(kind, p, &engine).unwrap();
        prop_assert_eq!(m.len(), n);
        prop_assert!(m.weights.iter().all(|w| (0.0..=1.0).contains(w)));
        let inv = inverse_mask(&m);
        prop_assert!(inv.weights.iter().all(|w| (0.0..=1.0).contains(w)));
    }

    #[test]
    fn inverse_mask_is_an_involution(kind in any_kind(), p in params(), n in 2usize..64) {
        let m = make_mask(kind, p, &EngineConfig::with_frames(n).unwrap()).unwrap();
        let back = inverse_mask(&inverse_mask(&m));
        for (a, b) in m.weights.iter().zip(&back.weights) {
            prop_assert!((a - b).abs() <= f64::EPSILON);
        }
    }

    #[test]
    fn inter_center_is_order_independent(a in params(), b in params(), w in 0.05f64..0.9) {
        let ab = inter_mask_params(a, b, w).unwrap();
        let ba = inter_mask_params(b, a, w).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!(ab.center() >= a.center().min(b.center()) && ab.center() <= a.center().max(b.center()));
    }

    #[test]
    fn constrain_inverts_unconstrain(p in params(), wmax in 1.0f64..2.0) {
        let engine = EngineConfig::new(1.0, 16, wmax).unwrap();
        let back = constrain(unconstrain(p, &engine).unwrap(), &engine).unwrap();
        prop_assert!((back.center() - p.center()).abs() < 1e-12);
        prop_assert!((back.width() - p.width()).abs() < 1e-12);
    }

    #[test]
    fn constrain_always_yields_valid_params(rc in -800.0f64..800.0, rw in -800.0f64..800.0) {
        let engine = EngineConfig::with_frames(16).unwrap();
        let p = constrain(RawMaskParams::new(rc, rw), &engine).unwrap();
        prop_assert!(p.center() > 0.0 && p.center() < 1.0);
        prop_assert!(p.width() > 0.0 && p.width() <= engine.width_max());
    }

    #[test]
    fn sim_loss_matches_brute_force_and_is_bounded((pooled, caps) in video(6), margin in 0.0f64..1.0) {
        let got = sim_loss(&[as_pooled(&pooled)], &[&caps], margin, 1e-8).unwrap();
        prop_assert!((got - brute_sim(&pooled, &caps, margin)).abs() <= 1e-12);
        prop_assert!(got >= 0.0 && got <= margin + 2.0);
        let inv = sim_loss_inverse(&[as_pooled(&pooled)], &[&caps], margin, 1e-8).unwrap();
        prop_assert!((inv - brute_inverse(&pooled, &caps, margin)).abs() <= 1e-12);
    }

    #[test]
    fn sim_loss_ignores_positive_rescaling((pooled, caps) in video(5), s in 0.01f64..100.0) {
        let scaled = EmbeddingMatrix::new(
            caps.rows(), caps.dim(), caps.as_slice().iter().map(|x| x * s).collect(),
        ).unwrap();
        let a = sim_loss(&[as_pooled(&pooled)], &[&caps], 0.1, 1e-8).unwrap();
        let b = sim_loss(&[as_pooled(&pooled)], &[&scaled], 0.1, 1e-8).unwrap();
        prop_assume!(caps.iter_rows().all(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt() > 1e-6));
        prop_assert!((a - b).abs() <= 1e-10);
    }

    #[test]
    fn sim_loss_ignores_event_order((pooled, caps) in video(5), seed in any::<u64>()) {
        let k = caps.rows();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by_key(|&i| (seed.rotate_left(i as u32 * 7) ^ i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let a = sim_loss(&[as_pooled(&pooled)], &[&caps], 0.1, 1e-8).unwrap();
        let pp = permute(&pooled, &order);
        let pc = permute(&caps, &order);
        let b = sim_loss(&[as_pooled(&pp)], &[&pc], 0.1, 1e-8).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn diversity_is_mean_pairwise_cosine(kind in any_kind(), ps in prop::collection::vec(params(), 1..5)) {
        let engine = EngineConfig::with_frames(24).unwrap();
        let masks: Vec<_> = ps.iter().map(|p| make_mask(kind, *p, &engine).unwrap()).collect();
        let got = diversity_loss(&masks, 1e-8).unwrap();
        let mut sum = 0.0;
        let mut pairs = 0;
        for a in 0..masks.len() {
            for b in 0..masks.len() {
                if a < b {
                    sum += brute_cos(&masks[a].weights, &masks[b].weights);
                    pairs += 1;
                }
            }
        }
        let want = if pairs == 0 { 0.0 } else { sum / pairs as f64 };
        prop_assert!((got - want).abs() <= 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&got));
    }

    #[test]
    fn cosine_is_bounded(a in prop::collection::vec(-5.0f64..5.0, 4), b in prop::collection::vec(-5.0f64..5.0, 4)) {
        let c = cosine(&a, &b, 1e-8);
        prop_assert!(c.abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in segment(), b in segment()) {
        let ab = temporal_iou(&a, &b);
        prop_assert_eq!(ab, temporal_iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(temporal_iou(&a, &a), 1.0);
    }

    #[test]
    fn mask_segments_stay_in_the_video(p in params(), n in 1usize..200) {
        let s = mask_to_segment(p, n);
        prop_assert!(s.start() >= 0.0 && s.end() <= 1.0 && s.end() > s.start());
    }

    #[test]
    fn recall_is_monotone_in_threshold(
        preds in prop::collection::vec(segment(), 0..6),
        gts in prop::collection::vec(segment(), 1..6),
        mut thetas in prop::collection::vec(0.0f64..1.0, 1..8),
        one_to_one in any::<bool>(),
    ) {
        thetas.sort_by(f64::total_cmp);
        let matching = if one_to_one { Matching::OneToOne } else { Matching::BestIou };
        let r = localization_scores(&preds, &gts, &thetas, matching).unwrap();
        prop_assert!(r.recall.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(r.precision.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(r.recall.iter().chain(&r.precision).all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn one_to_one_never_beats_best_iou(
        preds in prop::collection::vec(segment(), 0..6),
        gts in prop::collection::vec(segment(), 1..6),
        theta in 0.0f64..1.0,
    ) {
        let best = localization_scores(&preds, &gts, &[theta], Matching::BestIou).unwrap();
        let one = localization_scores(&preds, &gts, &[theta], Matching::OneToOne).unwrap();
        prop_assert!(one.recall[0] <= best.recall[0]);
        prop_assert!(one.precision[0] <= best.precision[0]);
    }

    #[test]
    fn embedding_payload_round_trips_bitwise(
        bits in prop::collection::vec(any::<u32>(), 0..64), dim in 1u32..8,
    ) {
        let values: Vec<f32> = bits
            .into_iter()
            .map(f32::from_bits)
            .filter(|v| v.is_finite())
            .chain([0.0, -0.0, f32::from_bits(1), -f32::from_bits(0x007f_ffff)])
            .collect();
        let count = values.len() as u32 / dim;
        let values = values[..(count * dim) as usize].to_vec();
        let raw = RawEmbeddings { dim, count, values };
        let back = decode_raw(&encode_raw(&raw).unwrap()).unwrap();
        prop_assert_eq!((back.dim, back.count), (raw.dim, raw.count));
        prop_assert!(back.values.iter().map(|v| v.to_bits()).eq(raw.values.iter().map(|v| v.to_bits())));
    }
}
