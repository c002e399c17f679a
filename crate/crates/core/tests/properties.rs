//! Property tests for the module invariants that hold over whole input
//! families rather than hand-picked cases.

use alseg_core::affinity::{content_distance, cosine_similarity, distance_to_similarity};
use alseg_core::inference::Descriptor;
use alseg_core::metrics::{dice, mean_surface_distance, paired_t_test_one_sided};
use alseg_core::selection::{borda_select, rank, Direction};
use alseg_core::synthdata::SampleId;
use alseg_core::tensor::{reduce, Reduction};
use alseg_core::Tensor;
use proptest::prelude::*;

proptest! {
    #[test]
    fn rank_ignores_monotone_transforms(
        scores in proptest::collection::vec(0.0f64..1.0, 1..40),
        scale in 0.5f64..4.0,
    ) {
        let transformed: Vec<f64> = scores.iter().map(|&s| scale * (s * s * s + s)).collect();
        let a = rank(&scores, Direction::HigherIsBetter).unwrap();
        let b = rank(&transformed, Direction::HigherIsBetter).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn borda_prefix_is_stable_in_k(
        scores1 in proptest::collection::vec(0.0f64..1.0, 4..30),
        seedlike in 0u32..1000,
    ) {
        let n = scores1.len();
        let scores2: Vec<f64> = (0..n)
            .map(|i| ((seedlike as usize * (i + 3)) % 7) as f64)
            .collect();
        let ids: Vec<SampleId> = (0..n as u32).map(SampleId).collect();
        let r1 = rank(&scores1, Direction::HigherIsBetter).unwrap();
        let r2 = rank(&scores2, Direction::HigherIsBetter).unwrap();
        let full = borda_select(&ids, &[r1.clone(), r2.clone()], n).unwrap();
        for k in 1..n {
            let partial = borda_select(&ids, &[r1.clone(), r2.clone()], k).unwrap();
            prop_assert_eq!(&partial[..], &full[..k]);
        }
    }

    #[test]
    fn cosine_bounds_and_symmetry(
        a in proptest::collection::vec(-3.0f32..3.0, 1..8),
        b_fill in -3.0f32..3.0,
    ) {
        let b: Vec<f32> = a.iter().map(|&v| v * 0.5 + b_fill).collect();
        let da = Descriptor { sample_id: SampleId(0), vec: a };
        let db = Descriptor { sample_id: SampleId(1), vec: b };
        let s1 = cosine_similarity(&da, &db).unwrap();
        let s2 = cosine_similarity(&db, &da).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s1));
        prop_assert_eq!(s1, s2);
    }

    #[test]
    fn content_distance_is_a_symmetric_premetric(
        a in proptest::collection::vec(-2.0f32..2.0, 1..32),
        b in proptest::collection::vec(-2.0f32..2.0, 1..32),
    ) {
        let n = a.len().min(b.len());
        let ta = Tensor::from_vec(&[n], a[..n].to_vec()).unwrap();
        let tb = Tensor::from_vec(&[n], b[..n].to_vec()).unwrap();
        prop_assert_eq!(content_distance(&ta, &ta).unwrap(), 0.0);
        let d_ab = content_distance(&ta, &tb).unwrap();
        prop_assert!(d_ab >= 0.0);
        prop_assert_eq!(d_ab, content_distance(&tb, &ta).unwrap());
        let s = distance_to_similarity(d_ab).unwrap();
        prop_assert!(s > 0.0 && s <= 1.0);
    }

    #[test]
    fn dice_is_symmetric_and_bounded(
        labels in proptest::collection::vec(0u8..3, 16..64),
    ) {
        let n = labels.len() / 2;
        let pred = Tensor::from_vec(&[1, n], labels[..n].iter().map(|&v| f32::from(v)).collect())
            .unwrap();
        let truth = Tensor::from_vec(&[1, n], labels[n..2 * n].iter().map(|&v| f32::from(v)).collect())
            .unwrap();
        for cls in 0..3usize {
            let d1 = dice(&pred, &truth, cls).unwrap();
            let d2 = dice(&truth, &pred, cls).unwrap();
            prop_assert_eq!(d1, d2);
            prop_assert!((0.0..=1.0).contains(&d1));
        }
    }

    #[test]
    fn msd_is_symmetric_and_zero_on_self(
        bits in proptest::collection::vec(0u8..2, 36),
    ) {
        let data: Vec<f32> = bits.iter().map(|&v| f32::from(v)).collect();
        let a = Tensor::from_vec(&[6, 6], data.clone()).unwrap();
        let rotated: Vec<f32> = {
            let mut d = data;
            d.rotate_left(6);
            d
        };
        let b = Tensor::from_vec(&[6, 6], rotated).unwrap();
        prop_assert_eq!(mean_surface_distance(&a, &a, 1).unwrap(), 0.0);
        prop_assert_eq!(
            mean_surface_distance(&a, &b, 1).unwrap(),
            mean_surface_distance(&b, &a, 1).unwrap()
        );
    }

    #[test]
    fn t_test_p_values_pair_to_one(
        diffs in proptest::collection::vec(-1.0f64..1.0, 2..12),
    ) {
        let zeros = vec![0.0; diffs.len()];
        if let Ok((t_ab, p_ab)) = paired_t_test_one_sided(&diffs, &zeros) {
            let (t_ba, p_ba) = paired_t_test_one_sided(&zeros, &diffs).unwrap();
            prop_assert_eq!(t_ab, -t_ba);
            prop_assert!((p_ab + p_ba - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn reduce_sum_then_sum_matches_total(
        data in proptest::collection::vec(-10.0f32..10.0, 12..48),
    ) {
        let n = data.len() - data.len() % 12;
        let t = Tensor::from_vec(&[n / 12, 3, 4], data[..n].to_vec()).unwrap();
        let partial = reduce(&t, Reduction::Sum, &[1]).unwrap();
        let total_a = reduce(&partial, Reduction::Sum, &[0, 1]).unwrap().data()[0];
        let total_b = reduce(&t, Reduction::Sum, &[0, 1, 2]).unwrap().data()[0];
        let direct: f64 = data[..n].iter().map(|&v| f64::from(v)).sum();
        prop_assert!((f64::from(total_a) - direct).abs() <= 1e-3 * direct.abs().max(1.0));
        prop_assert!((f64::from(total_b) - direct).abs() <= 1e-3 * direct.abs().max(1.0));
    }
}
