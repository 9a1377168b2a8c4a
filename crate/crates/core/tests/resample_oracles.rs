use proptest::prelude::*;
use upseg_core::metrics::upscale_prediction;
use upseg_core::resample::{downscale_image, downscale_mask, power_of_two_ratio, resize_bilinear};
use upseg_core::{Mask, Tensor64};

#[test]
fn bilinear_matches_half_pixel_reference() {
    // cv2.resize(np.array([[0,1],[2,3]], float), (4,4), interpolation=cv2.INTER_LINEAR)
    let src = Tensor64::new(vec![1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let got = resize_bilinear(&src, 4, 4).unwrap();
    let want = [
        0.0, 0.25, 0.75, 1.0, //
        0.5, 0.75, 1.25, 1.5, //
        1.5, 1.75, 2.25, 2.5, //
        2.0, 2.25, 2.75, 3.0,
    ];
    for (g, w) in got.data().iter().zip(want) {
        assert!((g - w).abs() < 1e-12, "{:?}", got.data());
    }
}

#[test]
fn bilinear_non_square_and_identity() {
    let src = Tensor64::from_fn(&[2, 3, 4, 6], |i| (i as f64).sin());
    assert_eq!(resize_bilinear(&src, 4, 6).unwrap(), src);
    let up = resize_bilinear(&src, 8, 24).unwrap();
    assert_eq!(up.shape(), &[2, 3, 8, 24]);
    // Interpolation never leaves the input range.
    let (lo, hi) = (-1.0, 1.0);
    assert!(up.data().iter().all(|&v| (lo..=hi).contains(&v)));
}

#[test]
fn nearest_mask_downscale_takes_top_left() {
    let checker = Mask::new(1, 4, 4, (0..16).map(|i| (((i / 4) + (i % 4)) % 2) as u8).collect()).unwrap();
    let down = downscale_mask(&checker, 2).unwrap();
    assert_eq!(down.data(), &[0, 0, 0, 0]);

    let rows: &[&[u8]] = &[&[1, 0, 2, 2], &[0, 0, 2, 2], &[3, 3, 0, 1], &[3, 3, 1, 1]];
    let m = Mask::from_rows(rows).unwrap();
    assert_eq!(downscale_mask(&m, 2).unwrap().data(), &[1, 2, 3, 0]);
    assert_eq!(downscale_mask(&m, 1).unwrap(), m);
}

#[test]
fn area_average_downscale() {
    let img = Tensor64::full(&[1, 1, 4, 4], 0.5);
    assert_eq!(downscale_image(&img, 2).unwrap(), Tensor64::full(&[1, 1, 2, 2], 0.5));
    let ramp = Tensor64::from_fn(&[1, 1, 2, 4], |i| i as f64);
    assert_eq!(downscale_image(&ramp, 2).unwrap().data(), &[2.5, 4.5]);
    assert!(downscale_image(&Tensor64::zeros(&[1, 1, 6, 6]), 4).is_err());
}

#[test]
fn power_of_two_ratios() {
    assert_eq!(power_of_two_ratio(256, 16).unwrap(), 4);
    assert_eq!(power_of_two_ratio(16, 16).unwrap(), 0);
    assert!(power_of_two_ratio(48, 16).is_err());
    assert!(power_of_two_ratio(8, 16).is_err());
}

#[test]
fn stretched_constant_prediction_stays_constant() {
    let logits = Tensor64::full(&[1, 1, 4, 4], 2.0);
    let m = upscale_prediction(&logits, 16, 16).unwrap();
    assert!(m.data().iter().all(|&v| v == 1));
    assert!(upscale_prediction(&logits, 2, 2).is_err());
}

proptest! {
    #[test]
    fn mask_downscale_never_invents_labels(
        data in proptest::collection::vec(0u8..5, 64),
        factor in prop::sample::select(vec![1usize, 2, 4, 8]),
    ) {
        let m = Mask::new(1, 8, 8, data.clone()).unwrap();
        let d = downscale_mask(&m, factor).unwrap();
        prop_assert!(d.data().iter().all(|v| data.contains(v)));
        prop_assert_eq!(d.dims(), (1, 8 / factor, 8 / factor));
    }
}
