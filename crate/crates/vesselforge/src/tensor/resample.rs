//! Bilinear upsampling with the half-pixel-center convention:
//! `src = (dst + 0.5) / factor - 0.5`, clamped to the input support.

use super::{Element, Op, Tensor};
use crate::error::{Error, Result};

/// Source coordinate and interpolation weights for one output index.
fn axis_taps(out_len: usize, in_len: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) / factor as f64 - 0.5;
            let src = src.clamp(0.0, (in_len - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(in_len - 1);
            let frac = src - i0 as f64;
            (i0, i1, frac)
        })
        .collect()
}

impl<E: Element> Tensor<E> {
    /// Upsample spatial dims by an integer factor. Factor 1 is the identity.
    pub fn upsample_bilinear(&self, factor: usize) -> Result<Tensor<E>> {
        let (n, c, ih, iw) = self.dims4()?;
        if factor == 0 {
            return Err(Error::InvalidArgument("upsample factor must be >= 1".into()));
        }
        let oh = ih * factor;
        let ow = iw * factor;
        let taps_h = axis_taps(oh, ih, factor);
        let taps_w = axis_taps(ow, iw, factor);

        let x = self.data();
        let mut out = vec![E::zero(); n * c * oh * ow];
        let plane_in = ih * iw;
        let plane_out = oh * ow;
        for pi in 0..n * c {
            let x_plane = &x[pi * plane_in..(pi + 1) * plane_in];
            let o_plane = &mut out[pi * plane_out..(pi + 1) * plane_out];
            for (ohi, &(h0, h1, fh)) in taps_h.iter().enumerate() {
                let wh1 = E::from_f64_lossy(fh);
                let wh0 = E::one() - wh1;
                for (owi, &(w0, w1, fw)) in taps_w.iter().enumerate() {
                    let ww1 = E::from_f64_lossy(fw);
                    let ww0 = E::one() - ww1;
                    let v = wh0 * (ww0 * x_plane[h0 * iw + w0] + ww1 * x_plane[h0 * iw + w1])
                        + wh1 * (ww0 * x_plane[h1 * iw + w0] + ww1 * x_plane[h1 * iw + w1]);
                    o_plane[ohi * ow + owi] = v;
                }
            }
        }
        Ok(Tensor::from_op(
            vec![n, c, oh, ow],
            out,
            Op::UpsampleBilinear { x: self.clone(), factor },
        ))
    }
}

/// Backward: transpose of the interpolation, scattering each output gradient
/// to its up-to-four source cells with the same weights.
pub(super) fn backward_kernel<E: Element>(
    go: &[E],
    (n, c, ih, iw): (usize, usize, usize, usize),
    factor: usize,
) -> Vec<E> {
    let oh = ih * factor;
    let ow = iw * factor;
    let taps_h = axis_taps(oh, ih, factor);
    let taps_w = axis_taps(ow, iw, factor);
    let mut dx = vec![E::zero(); n * c * ih * iw];
    let plane_in = ih * iw;
    let plane_out = oh * ow;
    for pi in 0..n * c {
        let go_plane = &go[pi * plane_out..(pi + 1) * plane_out];
        let dx_plane = &mut dx[pi * plane_in..(pi + 1) * plane_in];
        for (ohi, &(h0, h1, fh)) in taps_h.iter().enumerate() {
            let wh1 = E::from_f64_lossy(fh);
            let wh0 = E::one() - wh1;
            for (owi, &(w0, w1, fw)) in taps_w.iter().enumerate() {
                let ww1 = E::from_f64_lossy(fw);
                let ww0 = E::one() - ww1;
                let g = go_plane[ohi * ow + owi];
                dx_plane[h0 * iw + w0] += wh0 * ww0 * g;
                dx_plane[h0 * iw + w1] += wh0 * ww1 * g;
                dx_plane[h1 * iw + w0] += wh1 * ww0 * g;
                dx_plane[h1 * iw + w1] += wh1 * ww1 * g;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent scalar half-pixel-center interpolation along one axis.
    fn interp_1d_oracle(xs: &[f64], factor: usize) -> Vec<f64> {
        let n = xs.len();
        (0..n * factor)
            .map(|o| {
                let s = ((o as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (n - 1) as f64);
                let i = s.floor() as usize;
                let j = (i + 1).min(n - 1);
                xs[i] + (xs[j] - xs[i]) * (s - i as f64)
            })
            .collect()
    }

    #[test]
    fn factor_one_is_identity() {
        let x = Tensor::<f32>::from_vec(vec![1, 1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = x.upsample_bilinear(1).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::<f64>::full(vec![1, 2, 3, 3], 0.7);
        let y = x.upsample_bilinear(2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 6, 6]);
        assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn row_matches_scalar_oracle() {
        let row = [1.0f64, 3.0];
        let x = Tensor::<f64>::from_vec(vec![1, 1, 1, 2], row.to_vec()).unwrap();
        let y = x.upsample_bilinear(2).unwrap();
        let expect = interp_1d_oracle(&row, 2);
        assert_eq!(expect, vec![1.0, 1.5, 2.5, 3.0]);
        for (a, e) in y.data().iter().zip(&expect) {
            assert!((a - e).abs() < 1e-12);
        }
    }
}
