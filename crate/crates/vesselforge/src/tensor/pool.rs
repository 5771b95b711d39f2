//! Max/avg pooling. Padded cells never participate: max ignores them and avg
//! divides by the count of real cells only, so borders are not darkened.

use super::{Element, Op, Padding, PoolKind, Tensor};
use crate::error::{Error, Result};

impl<E: Element> Tensor<E> {
    pub fn pool2d(
        &self,
        kind: PoolKind,
        window: (usize, usize),
        stride: usize,
        padding: Padding,
    ) -> Result<Tensor<E>> {
        let (n, c, ih, iw) = self.dims4()?;
        if window.0 == 0 || window.1 == 0 || stride == 0 {
            return Err(Error::InvalidArgument("pool window and stride must be >= 1".into()));
        }
        let padded_h = ih + padding.total_h();
        let padded_w = iw + padding.total_w();
        if window.0 > padded_h || window.1 > padded_w {
            return Err(Error::DegenerateShape {
                context: "pool2d",
                detail: format!(
                    "window {}x{} exceeds padded input {}x{}",
                    window.0, window.1, padded_h, padded_w
                ),
            });
        }
        let oh = (padded_h - window.0) / stride + 1;
        let ow = (padded_w - window.1) / stride + 1;

        let x = self.data();
        let mut out = vec![E::zero(); n * c * oh * ow];
        let plane_in = ih * iw;
        let plane_out = oh * ow;
        for pi in 0..n * c {
            let x_plane = &x[pi * plane_in..(pi + 1) * plane_in];
            let o_plane = &mut out[pi * plane_out..(pi + 1) * plane_out];
            for ohi in 0..oh {
                for owi in 0..ow {
                    let h0 = (ohi * stride) as isize - padding.top as isize;
                    let w0 = (owi * stride) as isize - padding.left as isize;
                    let hs = h0.max(0) as usize;
                    let he = ((h0 + window.0 as isize) as usize).min(ih);
                    let ws = w0.max(0) as usize;
                    let we = ((w0 + window.1 as isize) as usize).min(iw);
                    let v = match kind {
                        PoolKind::Max => {
                            let mut m = E::neg_infinity();
                            for hh in hs..he {
                                for ww in ws..we {
                                    m = m.max(x_plane[hh * iw + ww]);
                                }
                            }
                            m
                        }
                        PoolKind::Avg => {
                            let mut s = E::zero();
                            for hh in hs..he {
                                for ww in ws..we {
                                    s += x_plane[hh * iw + ww];
                                }
                            }
                            let area = (he - hs) * (we - ws);
                            s / E::from_f64_lossy(area as f64)
                        }
                    };
                    o_plane[ohi * ow + owi] = v;
                }
            }
        }
        Ok(Tensor::from_op(
            vec![n, c, oh, ow],
            out,
            Op::Pool2d { x: self.clone(), kind, window, stride, padding },
        ))
    }
}

/// Backward: max routes the gradient to the first maximal cell of each
/// window (deterministic on ties); avg spreads it uniformly over the real
/// (non-padded) cells.
#[allow(clippy::too_many_arguments)]
pub(super) fn backward_kernel<E: Element>(
    go: &[E],
    x: &[E],
    (n, c, ih, iw): (usize, usize, usize, usize),
    kind: PoolKind,
    window: (usize, usize),
    stride: usize,
    padding: Padding,
    (oh, ow): (usize, usize),
) -> Vec<E> {
    let mut dx = vec![E::zero(); x.len()];
    let plane_in = ih * iw;
    let plane_out = oh * ow;
    for pi in 0..n * c {
        let x_plane = &x[pi * plane_in..(pi + 1) * plane_in];
        let go_plane = &go[pi * plane_out..(pi + 1) * plane_out];
        let dx_plane = &mut dx[pi * plane_in..(pi + 1) * plane_in];
        for ohi in 0..oh {
            for owi in 0..ow {
                let g = go_plane[ohi * ow + owi];
                let h0 = (ohi * stride) as isize - padding.top as isize;
                let w0 = (owi * stride) as isize - padding.left as isize;
                let hs = h0.max(0) as usize;
                let he = ((h0 + window.0 as isize) as usize).min(ih);
                let ws = w0.max(0) as usize;
                let we = ((w0 + window.1 as isize) as usize).min(iw);
                match kind {
                    PoolKind::Max => {
                        let mut best = E::neg_infinity();
                        let mut best_at = hs * iw + ws;
                        for hh in hs..he {
                            for ww in ws..we {
                                let v = x_plane[hh * iw + ww];
                                if v > best {
                                    best = v;
                                    best_at = hh * iw + ww;
                                }
                            }
                        }
                        dx_plane[best_at] += g;
                    }
                    PoolKind::Avg => {
                        let area = E::from_f64_lossy(((he - hs) * (we - ws)) as f64);
                        let share = g / area;
                        for hh in hs..he {
                            for ww in ws..we {
                                dx_plane[hh * iw + ww] += share;
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_and_avg_of_2x2() {
        let x = Tensor::<f32>::from_vec(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = x.pool2d(PoolKind::Max, (2, 2), 1, Padding::ZERO).unwrap();
        assert_eq!(m.shape(), &[1, 1, 1, 1]);
        assert_eq!(m.data(), &[4.0]);
        let a = x.pool2d(PoolKind::Avg, (2, 2), 1, Padding::ZERO).unwrap();
        assert_eq!(a.data(), &[2.5]);
    }

    #[test]
    fn constant_image_stays_constant() {
        let x = Tensor::<f32>::full(vec![1, 1, 5, 7], 3.25);
        for kind in [PoolKind::Max, PoolKind::Avg] {
            let y = x.pool2d(kind, (3, 3), 1, Padding::same((3, 3), 1)).unwrap();
            assert_eq!(y.shape(), x.shape());
            assert!(y.data().iter().all(|&v| v == 3.25), "{kind:?}");
        }
    }

    #[test]
    fn avg_divisor_excludes_padding() {
        // corner window of a same-padded 3x3 avg covers 4 real cells
        let x = Tensor::<f32>::from_vec(vec![1, 1, 2, 2], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let y = x.pool2d(PoolKind::Avg, (3, 3), 1, Padding::same((3, 3), 1)).unwrap();
        assert!(y.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn window_larger_than_padded_input_errors() {
        let x = Tensor::<f32>::zeros(vec![1, 1, 2, 2]);
        assert!(x.pool2d(PoolKind::Max, (4, 4), 1, Padding::ZERO).is_err());
    }
}
