use cfseg::explain::{diff_to_mask, postprocess_mask};
use cfseg::losses::tv_loss;
use cfseg::metrics::{cv_score, fid, iou};
use cfseg::{Image, Mask};
use proptest::prelude::*;

fn mask(h: usize, w: usize) -> impl Strategy<Value = Mask> {
    proptest::collection::vec(any::<bool>(), h * w).prop_map(move |bits| Mask::from_fn(h, w, |r, c| bits[r * w + c]))
}

fn image(h: usize, w: usize) -> impl Strategy<Value = Image> {
    proptest::collection::vec(0.0f64..1.0, h * w).prop_map(move |v| Image::new(h, w, v).unwrap())
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in mask(6, 7), b in mask(6, 7)) {
        let ab = iou(&a, &b).unwrap();
        prop_assert_eq!(ab, iou(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        if !a.is_empty() {
            prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
        }
    }

    #[test]
    fn tv_ignores_transpose_and_constant_shift(m in image(5, 8), k in -1.0f64..1.0) {
        let tv = tv_loss(&m);
        prop_assert!(tv >= 0.0);
        prop_assert!((tv - tv_loss(&m.transpose())).abs() < 1e-12);
        prop_assert!((tv - tv_loss(&m.map(|v| v + k))).abs() < 1e-9);
    }

    #[test]
    fn raising_threshold_never_adds_pixels(m in image(6, 6), t in 0.0f64..1.0, dt in 0.0f64..0.5) {
        prop_assert!(diff_to_mask(&m, t + dt).is_subset_of(&diff_to_mask(&m, t)));
    }

    #[test]
    fn largest_component_filter_only_removes_pixels(m in mask(10, 10)) {
        let out = postprocess_mask(&m, 3, true);
        let unfiltered = postprocess_mask(&m, 3, false);
        prop_assert!(out.is_subset_of(&unfiltered));
        prop_assert!(postprocess_mask(&Mask::empty(10, 10), 3, true).is_empty());
    }

    #[test]
    fn cv_is_a_fraction(pairs in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..20)) {
        let cv = cv_score(&pairs, 0.8).unwrap();
        prop_assert!((0.0..=1.0).contains(&cv));
        prop_assert!((cv * pairs.len() as f64).fract().abs() < 1e-9);
    }

    #[test]
    fn fid_is_symmetric_and_zero_on_itself(
        a in proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, 3), 6..12),
        b in proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, 3), 6..12),
    ) {
        let ab = fid(&a, &b).unwrap();
        let ba = fid(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-6 * (1.0 + ab.abs()));
        prop_assert!(ab > -1e-6);
        prop_assert!(fid(&a, &a).unwrap().abs() < 1e-6);
    }
}
