use proptest::collection::vec;
use proptest::prelude::*;

use toolseg::backbone::engine::{upsample_forward, Batch};
use toolseg::dataset::{encode_one_hot, to_binary, LabelMask};
use toolseg::metrics::{binary_report, iou_report, ConfusionCounts};
use toolseg::tensor_ops::{bilinear_upsample, dilated_conv_1d};
use toolseg::training::cross_entropy_loss;
use toolseg::Tensor;

fn mask(h: usize, w: usize, classes: usize) -> impl Strategy<Value = LabelMask> {
    vec(0..classes as u8, h * w).prop_map(move |labels| LabelMask::new(h, w, classes, labels).unwrap())
}

fn mask_pair() -> impl Strategy<Value = (LabelMask, LabelMask)> {
    (1usize..7, 1usize..7, 2usize..4).prop_flat_map(|(h, w, c)| (mask(h, w, c), mask(h, w, c)))
}

fn counts(pred: &LabelMask, gt: &LabelMask) -> ConfusionCounts {
    let mut c = ConfusionCounts::new(gt.num_classes());
    c.add(pred, gt).unwrap();
    c
}

proptest! {
    #[test]
    fn conv_1d_is_linear(
        x in vec(-4.0f64..4.0, 20),
        y in vec(-4.0f64..4.0, 20),
        w in vec(-2.0f64..2.0, 1..4),
        r in 1usize..4,
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let mixed: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let lhs = dilated_conv_1d(&mixed, &w, r).unwrap();
        let cx = dilated_conv_1d(&x, &w, r).unwrap();
        let cy = dilated_conv_1d(&y, &w, r).unwrap();
        for i in 0..lhs.len() {
            prop_assert!((lhs[i] - (a * cx[i] + b * cy[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn upsample_stays_within_input_range(
        (h, w, data) in (1usize..5, 1usize..5).prop_flat_map(|(h, w)| (Just(h), Just(w), vec(-10.0f64..10.0, h * w))),
        factor in 1usize..5,
    ) {
        let x = Tensor::new(vec![h, w, 1], data.clone()).unwrap();
        let y = bilinear_upsample(&x, factor).unwrap();
        let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(y.data().iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
        let (oh, ow) = (y.shape()[0], y.shape()[1]);
        prop_assert_eq!(*y.get(&[0, 0, 0]), *x.get(&[0, 0, 0]));
        prop_assert_eq!(*y.get(&[oh - 1, ow - 1, 0]), *x.get(&[h - 1, w - 1, 0]));
        let engine = upsample_forward(&Batch::from_vec(1, h, w, 1, data), factor);
        for (a, b) in engine.data.iter().zip(y.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn one_hot_round_trips(m in (1usize..6, 1usize..6, 1usize..5).prop_flat_map(|(h, w, c)| mask(h, w, c))) {
        let oh = encode_one_hot(&m, m.num_classes()).unwrap();
        for row in 0..m.height() {
            for col in 0..m.width() {
                prop_assert_eq!(oh.pixel(row, col).iter().map(|&v| u32::from(v)).sum::<u32>(), 1);
            }
        }
        prop_assert_eq!(oh.decode(), m);
    }

    #[test]
    fn binary_mapping_is_idempotent(m in (1usize..6, 1usize..6).prop_flat_map(|(h, w)| mask(h, w, 3))) {
        let once = to_binary(&m).unwrap();
        prop_assert_eq!(to_binary(&once).unwrap(), once.clone());
        for (a, b) in m.labels().iter().zip(once.labels()) {
            prop_assert_eq!(*b, u8::from(*a != 0));
        }
    }

    #[test]
    fn iou_is_symmetric_and_bounded((pred, gt) in mask_pair()) {
        let forward = iou_report(&counts(&pred, &gt));
        let swapped = iou_report(&counts(&gt, &pred));
        prop_assert_eq!(&forward.per_class, &swapped.per_class);
        for v in forward.per_class.iter().flatten().chain(forward.mean.iter()) {
            prop_assert!((0.0..=1.0).contains(v));
        }
        if pred == gt {
            prop_assert_eq!(forward.mean, Some(1.0));
        }
    }

    #[test]
    fn binary_rates_are_bounded((pred, gt) in (1usize..7, 1usize..7).prop_flat_map(|(h, w)| (mask(h, w, 2), mask(h, w, 2)))) {
        let r = binary_report(&counts(&pred, &gt)).unwrap();
        for v in [r.sensitivity, r.specificity, r.balanced_accuracy].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn counts_merge_over_frames((a, b) in mask_pair(), (c, d) in mask_pair()) {
        prop_assume!(a.num_classes() == c.num_classes());
        let merged = counts(&a, &b).merge(&counts(&c, &d)).unwrap();
        let mut running = counts(&a, &b);
        running.add(&c, &d).unwrap();
        prop_assert_eq!(&merged, &running);
        prop_assert_eq!(counts(&c, &d).merge(&counts(&a, &b)).unwrap(), merged);
    }

    #[test]
    fn loss_is_non_negative_and_permutation_invariant(
        (m, logits, perm) in (1usize..5, 1usize..5, 2usize..5).prop_flat_map(|(h, w, c)| (
            mask(h, w, c),
            vec(-20.0f64..20.0, h * w * c),
            Just((0..h * w).collect::<Vec<_>>()).prop_shuffle(),
        )),
    ) {
        let c = m.num_classes();
        let (h, w) = (m.height(), m.width());
        let target = encode_one_hot(&m, c).unwrap();
        let z = Tensor::new(vec![h, w, c], logits.clone()).unwrap();
        let loss = cross_entropy_loss(&z, &target).unwrap();
        prop_assert!(loss >= 0.0);

        let labels: Vec<u8> = perm.iter().map(|&p| m.labels()[p]).collect();
        let permuted_mask = LabelMask::new(h, w, c, labels).unwrap();
        let permuted_logits: Vec<f64> = perm.iter().flat_map(|&p| logits[p * c..(p + 1) * c].to_vec()).collect();
        let permuted = cross_entropy_loss(
            &Tensor::new(vec![h, w, c], permuted_logits).unwrap(),
            &encode_one_hot(&permuted_mask, c).unwrap(),
        ).unwrap();
        prop_assert!((loss - permuted).abs() <= 1e-12 * loss.max(1.0));
    }

    #[test]
    fn argmax_ignores_monotone_transforms(
        (h, w, c, scores) in (1usize..5, 1usize..5, 2usize..5).prop_flat_map(|(h, w, c)| (Just(h), Just(w), Just(c), vec(-20i32..20, h * w * c))),
        shift in -3.0f32..3.0,
    ) {
        // A quarter-step grid keeps distinct scores distinct after the transform.
        let t = Tensor::new(vec![h, w, c], scores.iter().map(|&v| v as f32 / 4.0).collect()).unwrap();
        let transformed = t.map(|v| (v + shift).exp());
        prop_assert_eq!(LabelMask::argmax(&t).unwrap(), LabelMask::argmax(&transformed).unwrap());
    }
}
