//! 2-D convolution with stride and atrous rate, forward and backward.
//!
//! The forward pass lowers each image to a column matrix (im2col) and runs a
//! register-blocked GEMM whose reduction axis walks taps in (ic, kh, kw)
//! order, one tap at a time. Per output cell that is exactly the summation
//! order of the naive quadruple loop, so the result is bit-identical to the
//! reference oracle at any precision. Backward reuses the column matrix for
//! the weight gradient and scatters a transposed GEMM back through the
//! column mapping for the input gradient.

use rayon::prelude::*;

use super::{ConvSpec, Element, Op, Tensor};
use crate::error::{Error, Result};

impl<E: Element> Tensor<E> {
    /// Atrous 2-D convolution: `y[i] = sum_k x[i + r*k] * W[k] + bias`,
    /// generalized to NCHW batches and multiple channels.
    ///
    /// `weight` is OC x IC x kH x kW, `bias` is OC.
    pub fn conv2d(&self, weight: &Tensor<E>, bias: &Tensor<E>, spec: &ConvSpec) -> Result<Tensor<E>> {
        let (n, ic, ih, iw) = self.dims4()?;
        let (oc, wic, kh, kw) = weight.dims4()?;
        if wic != ic {
            return Err(Error::ShapeMismatch {
                context: "conv2d input channels",
                axis: 1,
                expected: wic,
                actual: ic,
            });
        }
        if (kh, kw) != spec.kernel {
            return Err(Error::ShapeMismatch {
                context: "conv2d kernel vs spec",
                axis: 2,
                expected: spec.kernel.0,
                actual: kh,
            });
        }
        if bias.shape() != [oc] {
            return Err(Error::ShapeMismatch {
                context: "conv2d bias",
                axis: 0,
                expected: oc,
                actual: bias.numel(),
            });
        }
        let (oh, ow) = spec.output_hw(ih, iw)?;

        let mut out = vec![E::zero(); n * oc * oh * ow];
        let geom = Geometry::new((ic, ih, iw), (kh, kw), spec, (oh, ow));
        let plane_in = ic * ih * iw;
        let plane_out = oc * oh * ow;
        out.par_chunks_mut(plane_out)
            .zip(self.data().par_chunks(plane_in))
            .for_each(|(o_img, x_img)| {
                let mut cols = Scratch::<E>::zeroed(geom.k * geom.ohw);
                geom.im2col(x_img, &mut cols);
                gemm_tap_order(weight.data(), bias.data(), &cols, oc, geom.k, geom.ohw, o_img);
            });
        Ok(Tensor::from_op(
            vec![n, oc, oh, ow],
            out,
            Op::Conv2d {
                x: self.clone(),
                w: weight.clone(),
                b: bias.clone(),
                spec: *spec,
            },
        ))
    }
}

/// Shared index math between im2col and its transpose.
struct Geometry {
    ic: usize,
    ih: usize,
    iw: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    ohw: usize,
    k: usize,
    stride: usize,
    rate: usize,
    pt: isize,
    pl: isize,
}

impl Geometry {
    fn new(
        (ic, ih, iw): (usize, usize, usize),
        (kh, kw): (usize, usize),
        spec: &ConvSpec,
        (oh, ow): (usize, usize),
    ) -> Geometry {
        Geometry {
            ic,
            ih,
            iw,
            kh,
            kw,
            oh,
            ow,
            ohw: oh * ow,
            k: ic * kh * kw,
            stride: spec.stride,
            rate: spec.rate,
            pt: spec.padding.top as isize,
            pl: spec.padding.left as isize,
        }
    }

    /// Output columns whose sampled input index stays inside [0, in_len).
    fn valid_range(&self, out_len: usize, in_len: usize, off: isize) -> (usize, usize) {
        let lo = if off >= 0 { 0 } else { ((-off) as usize).div_ceil(self.stride) };
        let hi_incl = in_len as isize - 1 - off;
        if hi_incl < 0 {
            return (0, 0);
        }
        let hi = (hi_incl as usize / self.stride + 1).min(out_len);
        (lo.min(hi), hi)
    }

    /// Column matrix B[k][ohw] with k walking (ic, kh, kw); padded cells stay
    /// 0, so `cols` must arrive zeroed.
    fn im2col<E: Element>(&self, x_img: &[E], cols: &mut [E]) {
        debug_assert_eq!(cols.len(), self.k * self.ohw);
        for ici in 0..self.ic {
            let x_plane = &x_img[ici * self.ih * self.iw..(ici + 1) * self.ih * self.iw];
            for khi in 0..self.kh {
                let off_h = (khi * self.rate) as isize - self.pt;
                let (oh_lo, oh_hi) = self.valid_range(self.oh, self.ih, off_h);
                for kwi in 0..self.kw {
                    let off_w = (kwi * self.rate) as isize - self.pl;
                    let (ow_lo, ow_hi) = self.valid_range(self.ow, self.iw, off_w);
                    let row = &mut cols[((ici * self.kh + khi) * self.kw + kwi) * self.ohw..][..self.ohw];
                    if ow_lo >= ow_hi {
                        continue;
                    }
                    for ohi in oh_lo..oh_hi {
                        let ihh = ((ohi * self.stride) as isize + off_h) as usize;
                        let x_row = &x_plane[ihh * self.iw..(ihh + 1) * self.iw];
                        let dst = &mut row[ohi * self.ow + ow_lo..ohi * self.ow + ow_hi];
                        let first_iw = ((ow_lo * self.stride) as isize + off_w) as usize;
                        if self.stride == 1 {
                            dst.copy_from_slice(&x_row[first_iw..first_iw + dst.len()]);
                        } else {
                            let mut iww = first_iw;
                            for d in dst {
                                *d = x_row[iww];
                                iww += self.stride;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Transpose of [`Geometry::im2col`]: accumulate C[k][ohw] back into the
    /// input image; contributions to padded cells vanish.
    fn col2im_add<E: Element>(&self, cols: &[E], dx_img: &mut [E]) {
        for ici in 0..self.ic {
            let dx_plane = &mut dx_img[ici * self.ih * self.iw..(ici + 1) * self.ih * self.iw];
            for khi in 0..self.kh {
                let off_h = (khi * self.rate) as isize - self.pt;
                let (oh_lo, oh_hi) = self.valid_range(self.oh, self.ih, off_h);
                for kwi in 0..self.kw {
                    let off_w = (kwi * self.rate) as isize - self.pl;
                    let (ow_lo, ow_hi) = self.valid_range(self.ow, self.iw, off_w);
                    if ow_lo >= ow_hi {
                        continue;
                    }
                    let row = &cols[((ici * self.kh + khi) * self.kw + kwi) * self.ohw..][..self.ohw];
                    for ohi in oh_lo..oh_hi {
                        let ihh = ((ohi * self.stride) as isize + off_h) as usize;
                        let dx_row = &mut dx_plane[ihh * self.iw..(ihh + 1) * self.iw];
                        let src = &row[ohi * self.ow + ow_lo..ohi * self.ow + ow_hi];
                        let first_iw = ((ow_lo * self.stride) as isize + off_w) as usize;
                        if self.stride == 1 {
                            let dst = &mut dx_row[first_iw..first_iw + src.len()];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        } else {
                            let mut iww = first_iw;
                            for &s in src {
                                dx_row[iww] += s;
                                iww += self.stride;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// RAII handle on a pooled, zeroed work buffer.
struct Scratch<E: Element>(Vec<E>);

impl<E: Element> Scratch<E> {
    fn zeroed(len: usize) -> Scratch<E> {
        let mut buf = E::scratch_pool()
            .with(|p| p.borrow_mut().pop())
            .unwrap_or_default();
        buf.clear();
        buf.resize(len, E::zero());
        Scratch(buf)
    }
}

impl<E: Element> Drop for Scratch<E> {
    fn drop(&mut self) {
        let buf = std::mem::take(&mut self.0);
        E::scratch_pool().with(|p| p.borrow_mut().push(buf));
    }
}

impl<E: Element> std::ops::Deref for Scratch<E> {
    type Target = [E];
    fn deref(&self) -> &[E] {
        &self.0
    }
}
impl<E: Element> std::ops::DerefMut for Scratch<E> {
    fn deref_mut(&mut self) -> &mut [E] {
        &mut self.0
    }
}

/// Columns of C computed per microkernel tile. The per-tile accumulators are
/// fixed-size local arrays accessed only sequentially, which lets the
/// compiler keep them in vector registers.
const NR: usize = 32;

/// C[oc][ohw] = W[oc][K] * B[K][ohw] + bias, accumulating strictly in
/// ascending k per output cell (bit-compatible with the naive loop oracle).
///
/// Each K x NR tile of B is packed contiguous before use: B rows are `ohw`
/// apart, and for power-of-two maps that stride lands every row in the same
/// L1 set, evicting it before the next output channel can reuse it. Two
/// output channels run per panel pass so their accumulator chains interleave.
fn gemm_tap_order<E: Element>(
    w: &[E],
    bias: &[E],
    b: &[E],
    oc: usize,
    k_len: usize,
    ohw: usize,
    c: &mut [E],
) {
    let mut panel = vec![E::zero(); k_len * NR];
    let mut j0 = 0;
    while j0 < ohw {
        let jl = NR.min(ohw - j0);
        for k in 0..k_len {
            panel[k * NR..k * NR + jl].copy_from_slice(&b[k * ohw + j0..k * ohw + j0 + jl]);
        }
        let mut m = 0;
        while m + 2 <= oc {
            let (acc0, acc1) = kernel_2row(
                &w[m * k_len..(m + 1) * k_len],
                &w[(m + 1) * k_len..(m + 2) * k_len],
                &panel,
                bias[m],
                bias[m + 1],
            );
            c[m * ohw + j0..m * ohw + j0 + jl].copy_from_slice(&acc0[..jl]);
            c[(m + 1) * ohw + j0..(m + 1) * ohw + j0 + jl].copy_from_slice(&acc1[..jl]);
            m += 2;
        }
        if m < oc {
            let acc = kernel_1row(&w[m * k_len..(m + 1) * k_len], &panel, bias[m]);
            c[m * ohw + j0..m * ohw + j0 + jl].copy_from_slice(&acc[..jl]);
        }
        j0 += jl;
    }
}

#[inline]
fn kernel_2row<E: Element>(w0: &[E], w1: &[E], panel: &[E], b0: E, b1: E) -> ([E; NR], [E; NR]) {
    let mut acc0 = [b0; NR];
    let mut acc1 = [b1; NR];
    for ((&wv0, &wv1), b_row) in w0.iter().zip(w1).zip(panel.chunks_exact(NR)) {
        for i in 0..NR {
            acc0[i] += wv0 * b_row[i];
            acc1[i] += wv1 * b_row[i];
        }
    }
    (acc0, acc1)
}

#[inline]
fn kernel_1row<E: Element>(w_row: &[E], panel: &[E], bias: E) -> [E; NR] {
    let mut acc = [bias; NR];
    for (&wv, b_row) in w_row.iter().zip(panel.chunks_exact(NR)) {
        for i in 0..NR {
            acc[i] += wv * b_row[i];
        }
    }
    acc
}

/// Gradients of conv2d w.r.t. input, weight, bias.
#[allow(clippy::too_many_arguments)]
pub(super) fn backward_kernel<E: Element>(
    go: &[E],
    x: &[E],
    (n, ic, ih, iw): (usize, usize, usize, usize),
    w: &[E],
    (oc, kh, kw): (usize, usize, usize),
    spec: &ConvSpec,
    (oh, ow): (usize, usize),
) -> (Vec<E>, Vec<E>, Vec<E>) {
    let geom = Geometry::new((ic, ih, iw), (kh, kw), spec, (oh, ow));
    let k_len = geom.k;
    let ohw = geom.ohw;
    let plane_in = ic * ih * iw;
    let plane_out = oc * ohw;

    let mut dx = vec![E::zero(); n * plane_in];
    let mut dw_partials: Vec<Vec<E>> = Vec::with_capacity(n);
    dx.par_chunks_mut(plane_in)
        .zip(x.par_chunks(plane_in))
        .zip(go.par_chunks(plane_out))
        .map(|((dx_img, x_img), go_img)| {
            // dW contribution of this image: dw[m][k] = sum_j go[m][j] * B[k][j].
            // k runs in blocks so a slab of B rows stays cached while every
            // output channel reduces against it.
            const KB: usize = 32;
            let mut cols = Scratch::<E>::zeroed(k_len * ohw);
            geom.im2col(x_img, &mut cols);
            let mut dw_img = vec![E::zero(); oc * k_len];
            let mut k0 = 0;
            while k0 < k_len {
                let k_end = (k0 + KB).min(k_len);
                for m in 0..oc {
                    let go_row = &go_img[m * ohw..(m + 1) * ohw];
                    for k in k0..k_end {
                        let b_row = &cols[k * ohw..(k + 1) * ohw];
                        dw_img[m * k_len + k] = dot(go_row, b_row);
                    }
                }
                k0 = k_end;
            }
            // dX: C[k][j] = sum_m w[m][k] * go[m][j], scattered back.
            // Same blocking: the C rows being accumulated stay cached while
            // the go rows stream past.
            let mut cgrad = Scratch::<E>::zeroed(k_len * ohw);
            let mut k0 = 0;
            while k0 < k_len {
                let k_end = (k0 + KB).min(k_len);
                for (m, go_row) in go_img.chunks_exact(ohw).enumerate() {
                    for k in k0..k_end {
                        let wv = w[m * k_len + k];
                        if wv == E::zero() {
                            continue;
                        }
                        let c_row = &mut cgrad[k * ohw..(k + 1) * ohw];
                        for (cv, &g) in c_row.iter_mut().zip(go_row) {
                            *cv += wv * g;
                        }
                    }
                }
                k0 = k_end;
            }
            geom.col2im_add(&cgrad, dx_img);
            dw_img
        })
        .collect_into_vec(&mut dw_partials);

    // reduce dW over images in index order (deterministic)
    let mut dw = vec![E::zero(); oc * k_len];
    for part in &dw_partials {
        for (d, &p) in dw.iter_mut().zip(part) {
            *d += p;
        }
    }

    let mut db = vec![E::zero(); oc];
    for ni in 0..n {
        for (oci, db_v) in db.iter_mut().enumerate() {
            let go_plane = &go[(ni * oc + oci) * ohw..(ni * oc + oci + 1) * ohw];
            *db_v += sum(go_plane);
        }
    }

    (dx, dw, db)
}

/// Dot product over 32 running partials: four independent vector chains,
/// enough to hide the add latency.
fn dot<E: Element>(a: &[E], b: &[E]) -> E {
    const P: usize = 32;
    let mut parts = [E::zero(); P];
    let chunks = a.len() / P;
    for i in 0..chunks {
        let av = &a[i * P..(i + 1) * P];
        let bv = &b[i * P..(i + 1) * P];
        for l in 0..P {
            parts[l] += av[l] * bv[l];
        }
    }
    let mut acc = E::zero();
    for l in 0..P {
        acc += parts[l];
    }
    for i in chunks * P..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

fn sum<E: Element>(a: &[E]) -> E {
    const P: usize = 32;
    let mut parts = [E::zero(); P];
    let chunks = a.len() / P;
    for i in 0..chunks {
        let av = &a[i * P..(i + 1) * P];
        for l in 0..P {
            parts[l] += av[l];
        }
    }
    let mut acc = E::zero();
    for l in 0..P {
        acc += parts[l];
    }
    for i in chunks * P..a.len() {
        acc += a[i];
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::super::Padding;
    use super::*;

    /// Independent quadruple-loop oracle, summing in (ic, kh, kw) order like
    /// the production kernel so f64 comparisons can be bit-exact.
    pub(crate) fn conv2d_naive<E: Element>(
        x: &[E],
        (n, ic, ih, iw): (usize, usize, usize, usize),
        w: &[E],
        (oc, kh, kw): (usize, usize, usize),
        bias: &[E],
        spec: &ConvSpec,
    ) -> (Vec<E>, (usize, usize)) {
        let (oh, ow) = spec.output_hw(ih, iw).unwrap();
        let mut out = vec![E::zero(); n * oc * oh * ow];
        for ni in 0..n {
            for oci in 0..oc {
                for ohi in 0..oh {
                    for owi in 0..ow {
                        let mut acc = bias[oci];
                        for ici in 0..ic {
                            for khi in 0..kh {
                                for kwi in 0..kw {
                                    let ihh = (ohi * spec.stride + khi * spec.rate) as isize
                                        - spec.padding.top as isize;
                                    let iww = (owi * spec.stride + kwi * spec.rate) as isize
                                        - spec.padding.left as isize;
                                    if ihh < 0 || iww < 0 || ihh >= ih as isize || iww >= iw as isize {
                                        continue;
                                    }
                                    let xv = x[((ni * ic + ici) * ih + ihh as usize) * iw + iww as usize];
                                    let wv = w[((oci * ic + ici) * kh + khi) * kw + kwi];
                                    acc += wv * xv;
                                }
                            }
                        }
                        out[((ni * oc + oci) * oh + ohi) * ow + owi] = acc;
                    }
                }
            }
        }
        (out, (oh, ow))
    }

    fn rng_data(len: usize, seed: u64) -> Vec<f64> {
        // tiny xorshift so this oracle has no dependencies
        let mut s = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
        (0..len)
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            })
            .collect()
    }

    #[test]
    fn atrous_row_example() {
        // row [1,2,3,4,5], kernel [1,1], rate 2, stride 1, no pad -> [4,6,8]
        let x = Tensor::<f32>::from_vec(vec![1, 1, 1, 5], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let w = Tensor::<f32>::from_vec(vec![1, 1, 1, 2], vec![1.0, 1.0]).unwrap();
        let b = Tensor::<f32>::zeros(vec![1]);
        let spec = ConvSpec::new((1, 2), 1, 2, Padding::ZERO).unwrap();
        let y = x.conv2d(&w, &b, &spec).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 3]);
        assert_eq!(y.data(), &[4.0, 6.0, 8.0]);
    }

    #[test]
    fn identity_1x1_kernel() {
        let data: Vec<f32> = (0..18).map(|v| v as f32 * 0.3 - 2.0).collect();
        let x = Tensor::<f32>::from_vec(vec![1, 2, 3, 3], data.clone()).unwrap();
        let mut w = vec![0.0f32; 2 * 2];
        w[0] = 1.0; // oc0 <- ic0
        w[3] = 1.0; // oc1 <- ic1
        let w = Tensor::from_vec(vec![2, 2, 1, 1], w).unwrap();
        let b = Tensor::zeros(vec![2]);
        let spec = ConvSpec::new((1, 1), 1, 1, Padding::ZERO).unwrap();
        let y = x.conv2d(&w, &b, &spec).unwrap();
        assert_eq!(y.data(), &data[..]);
    }

    #[test]
    fn rate1_matches_naive_oracle_bitexact_f64() {
        for (seed, stride, pad) in [(1u64, 1usize, 0usize), (2, 2, 1), (3, 1, 1)] {
            let (n, ic, ih, iw, oc, k) = (2, 3, 8, 8, 4, 3);
            let x = rng_data(n * ic * ih * iw, seed);
            let w = rng_data(oc * ic * k * k, seed + 100);
            let b = rng_data(oc, seed + 200);
            let padding = Padding { top: pad, bottom: pad, left: pad, right: pad };
            let spec = ConvSpec::new((k, k), stride, 1, padding).unwrap();

            let xt = Tensor::<f64>::from_vec(vec![n, ic, ih, iw], x.clone()).unwrap();
            let wt = Tensor::<f64>::from_vec(vec![oc, ic, k, k], w.clone()).unwrap();
            let bt = Tensor::<f64>::from_vec(vec![oc], b.clone()).unwrap();
            let y = xt.conv2d(&wt, &bt, &spec).unwrap();

            let (naive, _) = conv2d_naive(&x, (n, ic, ih, iw), &w, (oc, k, k), &b, &spec);
            assert_eq!(y.data(), &naive[..], "seed {seed} stride {stride} pad {pad}");
        }
    }

    #[test]
    fn rate1_matches_naive_oracle_f32_tolerance() {
        let (n, ic, ih, iw, oc, k) = (1, 2, 8, 8, 3, 3);
        let xd: Vec<f32> = rng_data(n * ic * ih * iw, 9).iter().map(|&v| v as f32).collect();
        let wd: Vec<f32> = rng_data(oc * ic * k * k, 10).iter().map(|&v| v as f32).collect();
        let bd: Vec<f32> = rng_data(oc, 11).iter().map(|&v| v as f32).collect();
        let spec = ConvSpec::new((k, k), 1, 1, Padding::same((k, k), 1)).unwrap();
        let x = Tensor::from_vec(vec![n, ic, ih, iw], xd.clone()).unwrap();
        let w = Tensor::from_vec(vec![oc, ic, k, k], wd.clone()).unwrap();
        let b = Tensor::from_vec(vec![oc], bd.clone()).unwrap();
        let y = x.conv2d(&w, &b, &spec).unwrap();
        let (naive, _) = conv2d_naive(&xd, (n, ic, ih, iw), &wd, (oc, k, k), &bd, &spec);
        for (a, e) in y.data().iter().zip(&naive) {
            let denom = e.abs().max(1.0);
            assert!((a - e).abs() / denom < 1e-5);
        }
    }

    /// Zero-inflating a kernel by (r-1) zeros between taps turns an atrous
    /// conv into a plain one.
    pub(crate) fn inflate_kernel<E: Element>(
        w: &[E],
        (oc, ic, kh, kw): (usize, usize, usize, usize),
        rate: usize,
    ) -> (Vec<E>, (usize, usize)) {
        let nkh = (kh - 1) * rate + 1;
        let nkw = (kw - 1) * rate + 1;
        let mut out = vec![E::zero(); oc * ic * nkh * nkw];
        for o in 0..oc {
            for i in 0..ic {
                for y in 0..kh {
                    for x in 0..kw {
                        out[((o * ic + i) * nkh + y * rate) * nkw + x * rate] =
                            w[((o * ic + i) * kh + y) * kw + x];
                    }
                }
            }
        }
        (out, (nkh, nkw))
    }

    #[test]
    fn atrous_equals_zero_inflated_kernel() {
        for rate in [1usize, 2, 3] {
            let (n, ic, ih, iw, oc, k) = (1, 2, 12, 12, 2, 3);
            let xd = rng_data(n * ic * ih * iw, 20 + rate as u64);
            let wd = rng_data(oc * ic * k * k, 30 + rate as u64);
            let bd = rng_data(oc, 40);
            let x = Tensor::<f64>::from_vec(vec![n, ic, ih, iw], xd).unwrap();
            let w = Tensor::<f64>::from_vec(vec![oc, ic, k, k], wd.clone()).unwrap();
            let b = Tensor::<f64>::from_vec(vec![oc], bd).unwrap();

            let spec_r = ConvSpec::new((k, k), 1, rate, Padding::ZERO).unwrap();
            let y_r = x.conv2d(&w, &b, &spec_r).unwrap();

            let (wi, (nkh, nkw)) = inflate_kernel(&wd, (oc, ic, k, k), rate);
            let w1 = Tensor::<f64>::from_vec(vec![oc, ic, nkh, nkw], wi).unwrap();
            let spec_1 = ConvSpec::new((nkh, nkw), 1, 1, Padding::ZERO).unwrap();
            let y_1 = x.conv2d(&w1, &b, &spec_1).unwrap();

            assert_eq!(y_r.shape(), y_1.shape());
            for (a, e) in y_r.data().iter().zip(y_1.data()) {
                assert!((a - e).abs() <= 1e-12 * e.abs().max(1.0));
            }
        }
    }

    #[test]
    fn strided_atrous_matches_naive() {
        // covers the ragged GEMM edges and stride/rate interplay
        for (ih, iw, oc, stride, rate) in [(9, 7, 5, 2, 2), (11, 11, 3, 3, 1), (10, 6, 7, 1, 3)] {
            let (n, ic, k) = (2, 3, 3);
            let xd = rng_data(n * ic * ih * iw, (ih * iw) as u64);
            let wd = rng_data(oc * ic * k * k, (oc * rate) as u64);
            let bd = rng_data(oc, 5);
            let padding = Padding { top: rate, bottom: rate, left: rate, right: rate };
            let spec = ConvSpec::new((k, k), stride, rate, padding).unwrap();
            let x = Tensor::<f64>::from_vec(vec![n, ic, ih, iw], xd.clone()).unwrap();
            let w = Tensor::<f64>::from_vec(vec![oc, ic, k, k], wd.clone()).unwrap();
            let b = Tensor::<f64>::from_vec(vec![oc], bd.clone()).unwrap();
            let y = x.conv2d(&w, &b, &spec).unwrap();
            let (naive, _) = conv2d_naive(&xd, (n, ic, ih, iw), &wd, (oc, k, k), &bd, &spec);
            assert_eq!(y.data(), &naive[..]);
        }
    }

    #[test]
    fn shape_errors_name_offending_axes() {
        let x = Tensor::<f32>::zeros(vec![1, 3, 8, 8]);
        let w = Tensor::<f32>::zeros(vec![4, 2, 3, 3]); // wrong IC
        let b = Tensor::<f32>::zeros(vec![4]);
        let spec = ConvSpec::new((3, 3), 1, 1, Padding::ZERO).unwrap();
        match x.conv2d(&w, &b, &spec) {
            Err(Error::ShapeMismatch { axis: 1, expected: 2, actual: 3, .. }) => {}
            other => panic!("expected channel mismatch, got {other:?}"),
        }
    }

    #[test]
    fn degenerate_output_rejected() {
        let x = Tensor::<f32>::zeros(vec![1, 1, 2, 2]);
        let w = Tensor::<f32>::zeros(vec![1, 1, 3, 3]);
        let b = Tensor::<f32>::zeros(vec![1]);
        let spec = ConvSpec::new((3, 3), 1, 1, Padding::ZERO).unwrap();
        assert!(matches!(x.conv2d(&w, &b, &spec), Err(Error::DegenerateShape { .. })));
    }
}
