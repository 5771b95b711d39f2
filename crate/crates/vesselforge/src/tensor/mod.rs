//! Dense N-dimensional tensors with reverse-mode automatic differentiation.
//!
//! Feature maps use NCHW row-major layout throughout. A [`Tensor`] is an
//! immutable value plus an optional lineage record; calling [`Tensor::backward`]
//! on a scalar walks the lineage DAG in reverse topological order and
//! accumulates gradients into every reachable leaf.
//!
//! The element type is generic so the same kernels run in `f32` (production)
//! and `f64` (the shadow path used by gradient checks).

mod backward;
mod conv;
mod pool;
mod resample;

use std::cell::RefCell;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::LocalKey;

use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};

/// Scalar element type for tensors. Implemented for `f32` and `f64`.
pub trait Element:
    Float
    + FromPrimitive
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::iter::Sum
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any Element")
    }
    fn to_f64_lossy(self) -> f64;

    /// Per-thread pool of reusable kernel work buffers. Re-faulting multi-MB
    /// allocations on every conv call costs more than the arithmetic.
    #[doc(hidden)]
    fn scratch_pool() -> &'static LocalKey<RefCell<Vec<Vec<Self>>>>;
}

thread_local! {
    static SCRATCH_F32: RefCell<Vec<Vec<f32>>> = const { RefCell::new(Vec::new()) };
    static SCRATCH_F64: RefCell<Vec<Vec<f64>>> = const { RefCell::new(Vec::new()) };
}

impl Element for f32 {
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
    fn scratch_pool() -> &'static LocalKey<RefCell<Vec<Vec<f32>>>> {
        &SCRATCH_F32
    }
}
impl Element for f64 {
    fn to_f64_lossy(self) -> f64 {
        self
    }
    fn scratch_pool() -> &'static LocalKey<RefCell<Vec<Vec<f64>>>> {
        &SCRATCH_F64
    }
}

/// Unique id for a tensor, used to key gradient tables during backward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorId(u64);

fn next_id() -> TensorId {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    TensorId(COUNTER.fetch_add(1, Ordering::Relaxed))
}

/// Pooling flavor for [`Tensor::pool2d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

/// Explicit per-side spatial padding. "Same" padding is always computed by
/// [`Padding::same`], never implied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub const ZERO: Padding = Padding { top: 0, bottom: 0, left: 0, right: 0 };

    /// Padding that keeps the spatial size unchanged for a stride-1 kernel
    /// with the given dilation rate. Odd effective extents split evenly;
    /// even ones put the extra cell on bottom/right.
    pub fn same(kernel: (usize, usize), rate: usize) -> Padding {
        let eff_h = (kernel.0 - 1) * rate + 1;
        let eff_w = (kernel.1 - 1) * rate + 1;
        Padding {
            top: (eff_h - 1) / 2,
            bottom: eff_h / 2,
            left: (eff_w - 1) / 2,
            right: eff_w / 2,
        }
    }

    pub fn total_h(&self) -> usize {
        self.top + self.bottom
    }
    pub fn total_w(&self) -> usize {
        self.left + self.right
    }
}

/// Geometry of a 2-D convolution: kernel size, stride, atrous rate and
/// explicit padding. The rate inserts `rate - 1` holes between kernel taps,
/// so the effective extent along one axis is `(k - 1) * rate + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: (usize, usize),
    pub stride: usize,
    pub rate: usize,
    pub padding: Padding,
}

impl ConvSpec {
    pub fn new(kernel: (usize, usize), stride: usize, rate: usize, padding: Padding) -> Result<ConvSpec> {
        if kernel.0 == 0 || kernel.1 == 0 {
            return Err(Error::InvalidArgument("conv kernel dims must be positive".into()));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv stride must be >= 1".into()));
        }
        if rate == 0 {
            return Err(Error::InvalidArgument("atrous rate must be >= 1".into()));
        }
        Ok(ConvSpec { kernel, stride, rate, padding })
    }

    /// Kernel extent after rate inflation: `(k - 1) * rate + 1` per axis.
    pub fn effective_kernel(&self) -> (usize, usize) {
        ((self.kernel.0 - 1) * self.rate + 1, (self.kernel.1 - 1) * self.rate + 1)
    }

    /// Output spatial dims for an input of `in_h x in_w`, or an error when the
    /// effective kernel does not fit or the output would be empty.
    pub fn output_hw(&self, in_h: usize, in_w: usize) -> Result<(usize, usize)> {
        let (eff_h, eff_w) = self.effective_kernel();
        let padded_h = in_h + self.padding.total_h();
        let padded_w = in_w + self.padding.total_w();
        if eff_h > padded_h || eff_w > padded_w {
            return Err(Error::DegenerateShape {
                context: "conv2d",
                detail: format!(
                    "effective kernel {}x{} exceeds padded input {}x{}",
                    eff_h, eff_w, padded_h, padded_w
                ),
            });
        }
        let out_h = (padded_h - eff_h) / self.stride + 1;
        let out_w = (padded_w - eff_w) / self.stride + 1;
        if out_h == 0 || out_w == 0 {
            return Err(Error::DegenerateShape {
                context: "conv2d",
                detail: format!("output would be {}x{}", out_h, out_w),
            });
        }
        Ok((out_h, out_w))
    }
}

/// Lineage record: the op that produced a tensor plus its inputs.
#[derive(Clone)]
pub(crate) enum Op<E: Element> {
    Conv2d { x: Tensor<E>, w: Tensor<E>, b: Tensor<E>, spec: ConvSpec },
    Pool2d { x: Tensor<E>, kind: PoolKind, window: (usize, usize), stride: usize, padding: Padding },
    UpsampleBilinear { x: Tensor<E>, factor: usize },
    ConcatChannels { xs: Vec<Tensor<E>> },
    Relu { x: Tensor<E> },
    Sigmoid { x: Tensor<E> },
    SoftmaxChannels { x: Tensor<E> },
    Add { a: Tensor<E>, b: Tensor<E> },
    SumAll { x: Tensor<E> },
    MeanAll { x: Tensor<E> },
    /// Masked mean negative log-likelihood of the true class.
    /// `labels` and `mask` are data, not differentiated through.
    CrossEntropyMasked {
        probs: Tensor<E>,
        labels: Arc<Vec<u8>>,
        mask: Arc<Vec<bool>>,
        count: usize,
    },
}

impl<E: Element> Op<E> {
    pub(crate) fn inputs(&self) -> Vec<&Tensor<E>> {
        match self {
            Op::Conv2d { x, w, b, .. } => vec![x, w, b],
            Op::Pool2d { x, .. }
            | Op::UpsampleBilinear { x, .. }
            | Op::Relu { x }
            | Op::Sigmoid { x }
            | Op::SoftmaxChannels { x }
            | Op::SumAll { x }
            | Op::MeanAll { x } => vec![x],
            Op::ConcatChannels { xs } => xs.iter().collect(),
            Op::Add { a, b } => vec![a, b],
            Op::CrossEntropyMasked { probs, .. } => vec![probs],
        }
    }
}

struct Inner<E: Element> {
    id: TensorId,
    shape: Vec<usize>,
    data: Vec<E>,
    grad: Mutex<Option<Vec<E>>>,
    lineage: Option<Op<E>>,
}

/// Dense tensor of `E` with optional autodiff lineage.
///
/// Cloning is cheap (shared storage). Values are immutable after creation;
/// only the gradient buffer mutates, and only through `backward`/`*_grad`.
#[derive(Clone)]
pub struct Tensor<E: Element = f32> {
    inner: Arc<Inner<E>>,
}

impl<E: Element> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("leaf", &self.inner.lineage.is_none())
            .finish()
    }
}

impl<E: Element> Tensor<E> {
    fn make(shape: Vec<usize>, data: Vec<E>, lineage: Option<Op<E>>) -> Tensor<E> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Arc::new(Inner {
                id: next_id(),
                shape,
                data,
                grad: Mutex::new(None),
                lineage,
            }),
        }
    }

    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<E>, op: Op<E>) -> Tensor<E> {
        Tensor::make(shape, data, Some(op))
    }

    /// Leaf tensor from raw data. Errors when the element count does not
    /// match the shape product.
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<E>) -> Result<Tensor<E>> {
        let shape = shape.into();
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidArgument(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor::make(shape, data, None))
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Tensor<E> {
        let shape = shape.into();
        let numel = shape.iter().product();
        Tensor::make(shape, vec![E::zero(); numel], None)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: E) -> Tensor<E> {
        let shape = shape.into();
        let numel = shape.iter().product();
        Tensor::make(shape, vec![value; numel], None)
    }

    pub fn scalar(value: E) -> Tensor<E> {
        Tensor::make(vec![1], vec![value], None)
    }

    pub fn id(&self) -> TensorId {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn data(&self) -> &[E] {
        &self.inner.data
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    /// True when this tensor has no lineage (an input or parameter).
    pub fn is_leaf(&self) -> bool {
        self.inner.lineage.is_none()
    }

    pub(crate) fn lineage(&self) -> Option<&Op<E>> {
        self.inner.lineage.as_ref()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<E> {
        if self.numel() != 1 {
            return Err(Error::NotScalar { numel: self.numel() });
        }
        Ok(self.inner.data[0])
    }

    /// Leaf copy of the values, cut off from the lineage DAG.
    pub fn detach(&self) -> Tensor<E> {
        Tensor::make(self.inner.shape.clone(), self.inner.data.clone(), None)
    }

    /// Snapshot of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<E>> {
        self.inner.grad.lock().unwrap().clone()
    }

    /// Remove and return the accumulated gradient.
    pub fn take_grad(&self) -> Option<Vec<E>> {
        self.inner.grad.lock().unwrap().take()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock().unwrap() = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[E]) {
        let mut slot = self.inner.grad.lock().unwrap();
        match slot.as_mut() {
            Some(buf) => {
                for (b, &v) in buf.iter_mut().zip(g) {
                    *b += v;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Interpret the shape as NCHW, errors otherwise.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.inner.shape.as_slice() {
            &[n, c, h, w] => Ok((n, c, h, w)),
            other => Err(Error::InvalidArgument(format!(
                "expected a 4-D NCHW tensor, got shape {:?}",
                other
            ))),
        }
    }
}

// ---------------------------------------------------------------------------
// Elementwise ops and reductions
// ---------------------------------------------------------------------------

impl<E: Element> Tensor<E> {
    pub fn relu(&self) -> Tensor<E> {
        let data = self.data().iter().map(|&v| v.max(E::zero())).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::Relu { x: self.clone() })
    }

    pub fn sigmoid(&self) -> Tensor<E> {
        let one = E::one();
        let data = self.data().iter().map(|&v| one / (one + (-v).exp())).collect();
        Tensor::from_op(self.shape().to_vec(), data, Op::Sigmoid { x: self.clone() })
    }

    /// Softmax across the channel axis of an NCHW tensor, independently per
    /// pixel. Output channels sum to 1.
    pub fn softmax_channels(&self) -> Result<Tensor<E>> {
        let (n, c, h, w) = self.dims4()?;
        if c == 0 {
            return Err(Error::DegenerateShape { context: "softmax_channels", detail: "zero channels".into() });
        }
        let hw = h * w;
        let x = self.data();
        let mut out = vec![E::zero(); x.len()];
        for ni in 0..n {
            let base = ni * c * hw;
            for p in 0..hw {
                let mut m = x[base + p];
                for ci in 1..c {
                    m = m.max(x[base + ci * hw + p]);
                }
                let mut denom = E::zero();
                for ci in 0..c {
                    let e = (x[base + ci * hw + p] - m).exp();
                    out[base + ci * hw + p] = e;
                    denom += e;
                }
                for ci in 0..c {
                    out[base + ci * hw + p] = out[base + ci * hw + p] / denom;
                }
            }
        }
        Ok(Tensor::from_op(self.shape().to_vec(), out, Op::SoftmaxChannels { x: self.clone() }))
    }

    /// Elementwise sum; shapes must match exactly.
    pub fn add(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        if self.shape() != other.shape() {
            return Err(shape_mismatch("add", self.shape(), other.shape()));
        }
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a + b)
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            Op::Add { a: self.clone(), b: other.clone() },
        )
        .pipe_ok()
    }

    pub fn sum_all(&self) -> Tensor<E> {
        let s = self.data().iter().copied().sum();
        Tensor::from_op(vec![1], vec![s], Op::SumAll { x: self.clone() })
    }

    pub fn mean_all(&self) -> Tensor<E> {
        let n = E::from_f64_lossy(self.numel() as f64);
        let s: E = self.data().iter().copied().sum();
        Tensor::from_op(vec![1], vec![s / n], Op::MeanAll { x: self.clone() })
    }

    /// Concatenate along the channel axis. All non-channel dims must agree.
    pub fn concat_channels(xs: &[Tensor<E>]) -> Result<Tensor<E>> {
        if xs.is_empty() {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        }
        let (n, _, h, w) = xs[0].dims4()?;
        let mut c_total = 0;
        for (i, t) in xs.iter().enumerate() {
            let (tn, tc, th, tw) = t.dims4()?;
            if tn != n || th != h || tw != w {
                return Err(Error::ShapeMismatch {
                    context: "concat_channels",
                    axis: if tn != n { 0 } else if th != h { 2 } else { 3 },
                    expected: if tn != n { n } else if th != h { h } else { w },
                    actual: if tn != n { tn } else if th != h { th } else { tw },
                });
            }
            let _ = i;
            c_total += tc;
        }
        let hw = h * w;
        let mut out = vec![E::zero(); n * c_total * hw];
        for ni in 0..n {
            let mut c_off = 0;
            for t in xs {
                let tc = t.shape()[1];
                let src = &t.data()[ni * tc * hw..(ni + 1) * tc * hw];
                let dst = &mut out[ni * c_total * hw + c_off * hw..][..tc * hw];
                dst.copy_from_slice(src);
                c_off += tc;
            }
        }
        Ok(Tensor::from_op(
            vec![n, c_total, h, w],
            out,
            Op::ConcatChannels { xs: xs.to_vec() },
        ))
    }

    /// Mean over masked pixels of `-ln p(true class)`, with probabilities
    /// clamped to `[1e-7, 1 - 1e-7]`. `probs` is N x C x H x W, `labels` holds
    /// class indices per pixel, `mask` selects the pixels that count.
    pub fn cross_entropy_masked(
        probs: &Tensor<E>,
        labels: &[u8],
        mask: &[bool],
    ) -> Result<Tensor<E>> {
        let (n, c, h, w) = probs.dims4()?;
        let hw = h * w;
        if labels.len() != n * hw {
            return Err(shape_mismatch("cross_entropy_masked labels", &[n * hw], &[labels.len()]));
        }
        if mask.len() != n * hw {
            return Err(shape_mismatch("cross_entropy_masked mask", &[n * hw], &[mask.len()]));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::Empty { what: "FOV mask in loss" });
        }
        let lo = E::from_f64_lossy(CE_CLAMP_LO);
        let hi = E::from_f64_lossy(1.0 - CE_CLAMP_LO);
        let p = probs.data();
        let mut acc = E::zero();
        for ni in 0..n {
            for pix in 0..hw {
                if !mask[ni * hw + pix] {
                    continue;
                }
                let cls = labels[ni * hw + pix] as usize;
                debug_assert!(cls < c);
                let v = p[ni * c * hw + cls * hw + pix].max(lo).min(hi);
                acc -= v.ln();
            }
        }
        let loss = acc / E::from_f64_lossy(count as f64);
        Ok(Tensor::from_op(
            vec![1],
            vec![loss],
            Op::CrossEntropyMasked {
                probs: probs.clone(),
                labels: Arc::new(labels.to_vec()),
                mask: Arc::new(mask.to_vec()),
                count,
            },
        ))
    }
}

/// Clamp bound used by the cross-entropy loss.
pub const CE_CLAMP_LO: f64 = 1e-7;

fn shape_mismatch(context: &'static str, expected: &[usize], actual: &[usize]) -> Error {
    let axis = expected
        .iter()
        .zip(actual.iter())
        .position(|(a, b)| a != b)
        .unwrap_or(0);
    Error::ShapeMismatch {
        context,
        axis,
        expected: expected.get(axis).copied().unwrap_or(0),
        actual: actual.get(axis).copied().unwrap_or(0),
    }
}

// Small helper so constructor chains read top-down.
trait PipeOk: Sized {
    fn pipe_ok<Err>(self) -> std::result::Result<Self, Err> {
        Ok(self)
    }
}
impl<T> PipeOk for T {}
