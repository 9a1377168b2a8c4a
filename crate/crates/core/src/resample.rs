//! Resolution changes for images, label masks and score maps.

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Mask, Tensor};

fn check_factor(h: usize, w: usize, factor: usize) -> Result<()> {
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(shape_err!(
            "extents {h}×{w} are not divisible by factor {factor}"
        ));
    }
    Ok(())
}

/// Nearest-neighbour label down-scaling: output pixel `(y, x)` takes the
/// source label at `(y·factor, x·factor)`, the top-left of its block.
pub fn downscale_mask(mask: &Mask, factor: usize) -> Result<Mask> {
    let (n, h, w) = mask.dims();
    check_factor(h, w, factor)?;
    if factor == 1 {
        return Ok(mask.clone());
    }
    let (oh, ow) = (h / factor, w / factor);
    let mut out = Vec::with_capacity(n * oh * ow);
    for b in 0..n {
        for y in 0..oh {
            for x in 0..ow {
                out.push(mask.get(b, y * factor, x * factor));
            }
        }
    }
    Mask::new(n, oh, ow, out)
}

/// Area-average down-scaling of an `N×C×H×W` tensor.
pub fn downscale_image<T: Scalar>(img: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = img.dims4()?;
    check_factor(h, w, factor)?;
    if factor == 1 {
        return Ok(img.clone());
    }
    let (oh, ow) = (h / factor, w / factor);
    let area = T::from_usize(factor * factor).expect("small integer");
    let x = img.data();
    let mut out = vec![T::zero(); n * c * oh * ow];
    for p in 0..n * c {
        let src = &x[p * h * w..][..h * w];
        let dst = &mut out[p * oh * ow..][..oh * ow];
        for y in 0..h {
            for xx in 0..w {
                dst[(y / factor) * ow + xx / factor] += src[y * w + xx];
            }
        }
        for v in dst.iter_mut() {
            *v /= area;
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

/// Source coordinate and blend weight for bilinear sampling with half-pixel
/// centres (`align_corners = false`), clamped at the borders.
#[inline]
fn bilinear_taps(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let s = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (s.floor() as usize).min(src_len - 1);
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, s - i0 as f64)
}

/// Bilinear resize of an `N×C×H×W` tensor to `out_h×out_w`, with the same
/// sampling grid as OpenCV's `INTER_LINEAR`.
pub fn resize_bilinear<T: Scalar>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(shape_err!("resize target {out_h}×{out_w} has a zero extent"));
    }
    let ys: Vec<_> = (0..out_h).map(|y| bilinear_taps(y, h, out_h)).collect();
    let xs: Vec<_> = (0..out_w).map(|x| bilinear_taps(x, w, out_w)).collect();
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for p in 0..n * c {
        let src = &x[p * h * w..][..h * w];
        for &(y0, y1, fy) in &ys {
            let fy = T::from_f64_lossy(fy);
            for &(x0, x1, fx) in &xs {
                let fx = T::from_f64_lossy(fx);
                let top = src[y0 * w + x0] * (T::one() - fx) + src[y0 * w + x1] * fx;
                let bottom = src[y1 * w + x0] * (T::one() - fx) + src[y1 * w + x1] * fx;
                out.push(top * (T::one() - fy) + bottom * fy);
            }
        }
    }
    Tensor::new(vec![n, c, out_h, out_w], out)
}

/// Factor between two resolutions, which must be an exact power of two.
pub fn power_of_two_ratio(high: usize, low: usize) -> Result<u32> {
    if low == 0 || high % low != 0 || !(high / low).is_power_of_two() {
        return Err(Error::Config(format!(
            "{high} / {low} is not a power-of-two ratio"
        )));
    }
    Ok((high / low).trailing_zeros())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_identity_and_block() {
        let m = Mask::from_rows(&[&[1, 1, 0, 0], &[1, 1, 0, 0], &[0, 0, 0, 0], &[0, 0, 0, 0]]).unwrap();
        assert_eq!(downscale_mask(&m, 1).unwrap(), m);
        let d = downscale_mask(&m, 2).unwrap();
        assert_eq!(d, Mask::from_rows(&[&[1, 0], &[0, 0]]).unwrap());
        assert!(downscale_mask(&m, 3).is_err());
    }

    #[test]
    fn checkerboard_takes_top_left() {
        let rows: Vec<Vec<u8>> = (0..4).map(|y| (0..4).map(|x| ((x + y) % 2) as u8).collect()).collect();
        let refs: Vec<&[u8]> = rows.iter().map(|r| r.as_slice()).collect();
        let m = Mask::from_rows(&refs).unwrap();
        let d = downscale_mask(&m, 2).unwrap();
        // oracle: every block's top-left pixel has x + y even
        assert!(d.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn area_average_constant() {
        let img = Tensor::<f64>::full(&[1, 1, 4, 4], 0.5);
        let d = downscale_image(&img, 2).unwrap();
        assert_eq!(d.shape(), &[1, 1, 2, 2]);
        assert!(d.data().iter().all(|&v| v == 0.5));
        assert_eq!(downscale_image(&img, 1).unwrap(), img);
        assert!(downscale_image(&img, 3).is_err());
    }

    #[test]
    fn area_average_values() {
        let img = Tensor::<f64>::from_fn(&[1, 1, 2, 4], |i| i as f64);
        let d = downscale_image(&img, 2).unwrap();
        assert_eq!(d.data(), &[(0.0 + 1.0 + 4.0 + 5.0) / 4.0, (2.0 + 3.0 + 6.0 + 7.0) / 4.0]);
    }

    #[test]
    fn bilinear_identity() {
        let t = Tensor::<f64>::from_fn(&[1, 2, 3, 5], |i| (i as f64).cos());
        assert_eq!(resize_bilinear(&t, 3, 5).unwrap(), t);
    }

    #[test]
    fn ratio() {
        assert_eq!(power_of_two_ratio(256, 16).unwrap(), 4);
        assert_eq!(power_of_two_ratio(16, 16).unwrap(), 0);
        assert!(power_of_two_ratio(48, 16).is_err());
        assert!(power_of_two_ratio(8, 16).is_err());
    }
}
