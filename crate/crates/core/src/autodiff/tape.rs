// Kernel code indexes several parallel buffers per loop; iterator chains
// would obscure the stride arithmetic.
#![allow(clippy::needless_range_loop)]

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::losses::fft;
use crate::scalar::Scalar;

use super::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(pub(crate) usize);

/// Record of one executed primitive operation.
///
/// Forward evaluation is eager: building a node computes its output
/// immediately. The op record keeps whatever the reverse pass needs
/// (input ids plus, for a few ops, cached intermediates).
enum Op<S: Scalar> {
    Leaf,
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    Mul(ValueId, ValueId),
    Scale(ValueId, S),
    Abs(ValueId),
    /// ln(max(x, floor)); zero gradient where the floor binds.
    LogFloored(ValueId, S),
    /// sqrt(max(x, 0)); gradient denominator floored to stay finite at 0.
    SqrtFloored(ValueId, S),
    Sum(ValueId),
    CropLeft(ValueId, usize),
    SliceCols(ValueId, usize, usize),
    Reshape(ValueId),
    StackChannels(ValueId, ValueId),
    ConcatTime(ValueId, ValueId),
    TimeSlice(ValueId, usize),
    AssembleTime(Vec<ValueId>),
    Conv1d {
        x: ValueId,
        w: ValueId,
        b: ValueId,
        dilation: usize,
    },
    Prelu {
        x: ValueId,
        slope: ValueId,
    },
    MaxPool {
        x: ValueId,
        pool: usize,
        argmax: Vec<u32>,
    },
    UpsampleLinear {
        x: ValueId,
        pool: usize,
    },
    UpsampleRamp {
        x: ValueId,
        pool: usize,
        prev: Option<ValueId>,
    },
    Film {
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
    },
    Dense {
        x: ValueId,
        w: ValueId,
        b: ValueId,
    },
    LstmStep {
        x: ValueId,
        hc: ValueId,
        w_ih: ValueId,
        w_hh: ValueId,
        bias: ValueId,
        /// Post-activation gates `[B, 4H]` in (i, f, g, o) order.
        gates: Vec<S>,
    },
    StftMags {
        x: ValueId,
        window: usize,
        hop: usize,
        /// One-sided spectra, re/im interleaved per magnitude element.
        spectra: Vec<S>,
    },
    FrameEnergy {
        x: ValueId,
        window: usize,
        hop: usize,
    },
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    tracked: bool,
    op: Op<S>,
}

/// Ordered record of executed primitive operations. Reverse accumulation
/// visits each node exactly once, in reverse execution order. Values enter
/// either as constants (no gradient flows upstream of them — this is how
/// carried TBPTT states are detached) or as tracked leaves.
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
    check_finite: bool,
}

/// Per-node gradient buffers produced by a reverse pass.
pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, id: ValueId) -> Option<&[S]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, id: ValueId) -> Option<Vec<S>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            check_finite: true,
        }
    }

    /// Disables the per-op finiteness scan (the trainer still checks the
    /// loss scalar every iteration).
    pub fn without_finite_checks() -> Self {
        Tape {
            nodes: Vec::new(),
            check_finite: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    pub fn is_tracked(&self, id: ValueId) -> bool {
        self.nodes[id.0].tracked
    }

    /// Records a constant. Gradients never flow into or through constants:
    /// a value carried across TBPTT iterations re-enters the next tape via
    /// this method, which is what detaches it.
    pub fn constant(&mut self, value: Tensor<S>) -> ValueId {
        self.push_unchecked(value, false, Op::Leaf)
    }

    /// Records a tracked leaf (parameter or differentiable input).
    pub fn leaf(&mut self, value: Tensor<S>) -> ValueId {
        self.push_unchecked(value, true, Op::Leaf)
    }

    fn push_unchecked(&mut self, value: Tensor<S>, tracked: bool, op: Op<S>) -> ValueId {
        self.nodes.push(Node { value, tracked, op });
        ValueId(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor<S>, tracked: bool, op: Op<S>) -> Result<ValueId> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::NonFinite { op: name });
        }
        Ok(self.push_unchecked(value, tracked, op))
    }

    fn tracked_any(&self, ids: &[ValueId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].tracked)
    }

    // ---- elementwise and reductions ------------------------------------

    fn binary_same_shape(
        &mut self,
        name: &'static str,
        a: ValueId,
        b: ValueId,
        f: impl Fn(S, S) -> S,
        op: Op<S>,
    ) -> Result<ValueId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err!(name, "operand shapes {:?} vs {:?}", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_parts(ta.shape().to_vec(), data);
        let tracked = self.tracked_any(&[a, b]);
        self.push(name, value, tracked, op)
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: ValueId, c: S) -> Result<ValueId> {
        let ta = self.value(a);
        let value = Tensor::from_parts(ta.shape().to_vec(), ta.data().iter().map(|&x| x * c).collect());
        let tracked = self.is_tracked(a);
        self.push("scale", value, tracked, Op::Scale(a, c))
    }

    pub fn abs(&mut self, a: ValueId) -> Result<ValueId> {
        let ta = self.value(a);
        let value = Tensor::from_parts(ta.shape().to_vec(), ta.data().iter().map(|x| x.abs()).collect());
        let tracked = self.is_tracked(a);
        self.push("abs", value, tracked, Op::Abs(a))
    }

    /// Elementwise `ln(max(x, floor))`.
    pub fn log_floored(&mut self, a: ValueId, floor: S) -> Result<ValueId> {
        let ta = self.value(a);
        let value = Tensor::from_parts(
            ta.shape().to_vec(),
            ta.data().iter().map(|&x| x.max(floor).ln()).collect(),
        );
        let tracked = self.is_tracked(a);
        self.push("log_floored", value, tracked, Op::LogFloored(a, floor))
    }

    /// Elementwise `sqrt(max(x, 0))` with the gradient denominator floored.
    pub fn sqrt_floored(&mut self, a: ValueId, grad_floor: S) -> Result<ValueId> {
        let ta = self.value(a);
        let value = Tensor::from_parts(
            ta.shape().to_vec(),
            ta.data().iter().map(|&x| x.max(S::ZERO).sqrt()).collect(),
        );
        let tracked = self.is_tracked(a);
        self.push("sqrt_floored", value, tracked, Op::SqrtFloored(a, grad_floor))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, a: ValueId) -> Result<ValueId> {
        let total = self.value(a).data().iter().copied().sum();
        let tracked = self.is_tracked(a);
        self.push("sum", Tensor::scalar(total), tracked, Op::Sum(a))
    }

    /// Mean of all elements, as a `[1]` tensor.
    pub fn mean(&mut self, a: ValueId) -> Result<ValueId> {
        let n = self.value(a).numel();
        if n == 0 {
            return Err(shape_err!("mean", "empty tensor"));
        }
        let s = self.sum(a)?;
        self.scale(s, S::ONE / S::from_f64(n as f64))
    }

    // ---- shape ops ------------------------------------------------------

    /// Drops the first `n` time samples of a `[B, C, T]` tensor.
    pub fn crop_left(&mut self, a: ValueId, n: usize) -> Result<ValueId> {
        let (bs, c, t) = self.value(a).dims3("crop_left")?;
        if n > t {
            return Err(shape_err!("crop_left", "crop {} exceeds length {}", n, t));
        }
        let out_t = t - n;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(bs * c * out_t);
        for b in 0..bs {
            for ch in 0..c {
                let base = (b * c + ch) * t + n;
                data.extend_from_slice(&src[base..base + out_t]);
            }
        }
        let value = Tensor::from_parts(vec![bs, c, out_t], data);
        let tracked = self.is_tracked(a);
        self.push("crop_left", value, tracked, Op::CropLeft(a, n))
    }

    /// Column slice of a `[B, F]` tensor.
    pub fn slice_cols(&mut self, a: ValueId, start: usize, len: usize) -> Result<ValueId> {
        let (bs, f) = self.value(a).dims2("slice_cols")?;
        if start + len > f {
            return Err(shape_err!("slice_cols", "slice {}..{} out of {} columns", start, start + len, f));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(bs * len);
        for b in 0..bs {
            data.extend_from_slice(&src[b * f + start..b * f + start + len]);
        }
        let value = Tensor::from_parts(vec![bs, len], data);
        let tracked = self.is_tracked(a);
        self.push("slice_cols", value, tracked, Op::SliceCols(a, start, len))
    }

    pub fn reshape(&mut self, a: ValueId, shape: &[usize]) -> Result<ValueId> {
        let ta = self.value(a);
        if shape.iter().product::<usize>() != ta.numel() {
            return Err(shape_err!("reshape", "cannot view {:?} as {:?}", ta.shape(), shape));
        }
        let value = Tensor::from_parts(shape.to_vec(), ta.data().to_vec());
        let tracked = self.is_tracked(a);
        self.push("reshape", value, tracked, Op::Reshape(a))
    }

    /// Concatenates two `[B, C, T]` tensors along time. Used to prepend a
    /// padding cache to a streamed buffer.
    pub fn concat_time(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ba, ca, ta) = self.value(a).dims3("concat_time")?;
        let (bb, cb, tb) = self.value(b).dims3("concat_time")?;
        if ba != bb || ca != cb {
            return Err(shape_err!(
                "concat_time",
                "incompatible shapes {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let t_out = ta + tb;
        let mut data = Vec::with_capacity(ba * ca * t_out);
        for bc in 0..ba * ca {
            data.extend_from_slice(&da[bc * ta..(bc + 1) * ta]);
            data.extend_from_slice(&db[bc * tb..(bc + 1) * tb]);
        }
        let value = Tensor::from_parts(vec![ba, ca, t_out], data);
        let tracked = self.tracked_any(&[a, b]);
        self.push("concat_time", value, tracked, Op::ConcatTime(a, b))
    }

    /// Extracts one time step of a `[B, C, T]` tensor as `[B, C]`.
    pub fn time_slice(&mut self, a: ValueId, t: usize) -> Result<ValueId> {
        let (bs, c, len) = self.value(a).dims3("time_slice")?;
        if t >= len {
            return Err(shape_err!("time_slice", "index {} out of length {}", t, len));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(bs * c);
        for b in 0..bs {
            for ch in 0..c {
                data.push(src[(b * c + ch) * len + t]);
            }
        }
        let value = Tensor::from_parts(vec![bs, c], data);
        let tracked = self.is_tracked(a);
        self.push("time_slice", value, tracked, Op::TimeSlice(a, t))
    }

    /// Stacks F step tensors of shape `[B, C]` into `[B, C, F]`.
    pub fn assemble_time(&mut self, steps: &[ValueId]) -> Result<ValueId> {
        if steps.is_empty() {
            return Err(shape_err!("assemble_time", "no steps"));
        }
        let (bs, c) = self.value(steps[0]).dims2("assemble_time")?;
        for &s in steps {
            if self.value(s).shape() != [bs, c] {
                return Err(shape_err!(
                    "assemble_time",
                    "step shape {:?}, expected [{}, {}]",
                    self.value(s).shape(),
                    bs,
                    c
                ));
            }
        }
        let f = steps.len();
        let mut data = vec![S::ZERO; bs * c * f];
        for (fi, &s) in steps.iter().enumerate() {
            let sd = self.value(s).data();
            for b in 0..bs {
                for ch in 0..c {
                    data[(b * c + ch) * f + fi] = sd[b * c + ch];
                }
            }
        }
        let value = Tensor::from_parts(vec![bs, c, f], data);
        let tracked = self.tracked_any(steps);
        self.push("assemble_time", value, tracked, Op::AssembleTime(steps.to_vec()))
    }

    /// Concatenates two `[B, C, T]` tensors along the channel dimension.
    pub fn stack_channels(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ba, ca, ta) = self.value(a).dims3("stack_channels")?;
        let (bb, cb, tb) = self.value(b).dims3("stack_channels")?;
        if ba != bb || ta != tb {
            return Err(shape_err!(
                "stack_channels",
                "incompatible shapes {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(ba * (ca + cb) * ta);
        for bi in 0..ba {
            data.extend_from_slice(&da[bi * ca * ta..(bi + 1) * ca * ta]);
            data.extend_from_slice(&db[bi * cb * ta..(bi + 1) * cb * ta]);
        }
        let value = Tensor::from_parts(vec![ba, ca + cb, ta], data);
        let tracked = self.tracked_any(&[a, b]);
        self.push("stack_channels", value, tracked, Op::StackChannels(a, b))
    }

    // ---- layers ----------------------------------------------------------

    /// Valid (padding-free) 1-D convolution. Input `[B, Cin, T]`, weight
    /// `[Cout, Cin, k]`, bias `[Cout]`; output `[B, Cout, T - (k-1)·d]`.
    /// Causality is established by left-cropping at the model level.
    pub fn conv1d(&mut self, x: ValueId, w: ValueId, b: ValueId, dilation: usize) -> Result<ValueId> {
        let (bs, cin, t) = self.value(x).dims3("conv1d")?;
        let wshape = self.value(w).shape().to_vec();
        let (cout, wcin, k) = match *wshape {
            [co, ci, k] => (co, ci, k),
            _ => return Err(shape_err!("conv1d", "weight must be [Cout, Cin, k], got {:?}", wshape)),
        };
        if wcin != cin {
            return Err(shape_err!("conv1d", "input has {} channels, weight expects {}", cin, wcin));
        }
        if self.value(b).shape() != [cout] {
            return Err(shape_err!("conv1d", "bias shape {:?}, expected [{}]", self.value(b).shape(), cout));
        }
        if dilation == 0 {
            return Err(shape_err!("conv1d", "dilation must be >= 1"));
        }
        let span = (k - 1) * dilation;
        if t <= span {
            return Err(shape_err!(
                "conv1d",
                "input length {} too short for kernel {} dilation {} (needs > {})",
                t,
                k,
                dilation,
                span
            ));
        }
        let out_t = t - span;
        let (xd, wd, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut data = vec![S::ZERO; bs * cout * out_t];
        for bi in 0..bs {
            for co in 0..cout {
                let out_base = (bi * cout + co) * out_t;
                let bias = bd[co];
                for ot in 0..out_t {
                    data[out_base + ot] = bias;
                }
                for ci in 0..cin {
                    let in_base = (bi * cin + ci) * t;
                    let w_base = (co * cin + ci) * k;
                    for j in 0..k {
                        let wv = wd[w_base + j];
                        if wv == S::ZERO {
                            continue;
                        }
                        let off = in_base + j * dilation;
                        for ot in 0..out_t {
                            data[out_base + ot] += wv * xd[off + ot];
                        }
                    }
                }
            }
        }
        let value = Tensor::from_parts(vec![bs, cout, out_t], data);
        let tracked = self.tracked_any(&[x, w, b]);
        self.push("conv1d", value, tracked, Op::Conv1d { x, w, b, dilation })
    }

    /// Parametric ReLU with one slope per channel (dimension 1).
    pub fn prelu(&mut self, x: ValueId, slope: ValueId) -> Result<ValueId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() < 2 {
            return Err(shape_err!("prelu", "expected rank >= 2, shape {:?}", xs));
        }
        let channels = xs[1];
        if self.value(slope).shape() != [channels] {
            return Err(shape_err!(
                "prelu",
                "slope shape {:?}, expected [{}]",
                self.value(slope).shape(),
                channels
            ));
        }
        let rest: usize = xs[2..].iter().product();
        let (xd, sd) = (self.value(x).data(), self.value(slope).data());
        let mut data = Vec::with_capacity(xd.len());
        for b in 0..xs[0] {
            for c in 0..channels {
                let s = sd[c];
                let base = (b * channels + c) * rest;
                for i in 0..rest {
                    let v = xd[base + i];
                    data.push(if v >= S::ZERO { v } else { s * v });
                }
            }
        }
        let value = Tensor::from_parts(xs, data);
        let tracked = self.tracked_any(&[x, slope]);
        self.push("prelu", value, tracked, Op::Prelu { x, slope })
    }

    /// Per-channel max pooling; the pooled length must divide exactly
    /// (a violation signals a length-plan bug upstream).
    pub fn max_pool(&mut self, x: ValueId, pool: usize) -> Result<ValueId> {
        let (bs, c, t) = self.value(x).dims3("max_pool")?;
        if pool == 0 || t % pool != 0 {
            return Err(shape_err!("max_pool", "length {} not divisible by pool {}", t, pool));
        }
        let frames = t / pool;
        let xd = self.value(x).data();
        let mut data = Vec::with_capacity(bs * c * frames);
        let mut argmax = Vec::with_capacity(bs * c * frames);
        for bc in 0..bs * c {
            let base = bc * t;
            for f in 0..frames {
                let w0 = base + f * pool;
                let mut best = xd[w0];
                let mut best_i = 0u32;
                for i in 1..pool {
                    if xd[w0 + i] > best {
                        best = xd[w0 + i];
                        best_i = i as u32;
                    }
                }
                data.push(best);
                argmax.push(best_i);
            }
        }
        let value = Tensor::from_parts(vec![bs, c, frames], data);
        let tracked = self.is_tracked(x);
        self.push("max_pool", value, tracked, Op::MaxPool { x, pool, argmax })
    }

    /// Linear-interpolation upsampling of frame-rate values. Frame `i` lands
    /// at output index `i·P`, intermediate samples interpolate between
    /// consecutive frames, and the last `P-1` samples hold the final frame
    /// (interpolating toward a future frame would leak ahead of the
    /// modulation signal).
    pub fn upsample_linear(&mut self, x: ValueId, pool: usize) -> Result<ValueId> {
        let (bs, c, frames) = self.value(x).dims3("upsample_linear")?;
        if frames == 0 || pool == 0 {
            return Err(shape_err!("upsample_linear", "empty input"));
        }
        let out_t = frames * pool;
        let xd = self.value(x).data();
        let mut data = Vec::with_capacity(bs * c * out_t);
        let inv_p = S::ONE / S::from_f64(pool as f64);
        for bc in 0..bs * c {
            let base = bc * frames;
            for f in 0..frames {
                let cur = xd[base + f];
                if f + 1 < frames {
                    let next = xd[base + f + 1];
                    let step = (next - cur) * inv_p;
                    for tau in 0..pool {
                        data.push(cur + step * S::from_f64(tau as f64));
                    }
                } else {
                    for _ in 0..pool {
                        data.push(cur);
                    }
                }
            }
        }
        let value = Tensor::from_parts(vec![bs, c, out_t], data);
        let tracked = self.is_tracked(x);
        self.push("upsample_linear", value, tracked, Op::UpsampleLinear { x, pool })
    }

    /// Streaming-safe upsampling used inside the model: output segment `i`
    /// ramps from frame `i-2` to frame `i-1`, reaching it on the segment's
    /// last sample. Only frames that are complete strictly before a segment
    /// starts are read, so the composed model stays causal at sample
    /// granularity, and carrying the last two frames across buffers makes
    /// chunked processing bit-identical to an unchunked pass.
    ///
    /// `prev` supplies those two frames as a `[B, C, 2]` tensor; `None`
    /// starts fresh with zero virtual history (frame 0 itself only
    /// completes at sample P-1, so reading it any earlier would leak
    /// ahead).
    pub fn upsample_ramp(&mut self, x: ValueId, pool: usize, prev: Option<ValueId>) -> Result<ValueId> {
        let (bs, c, frames) = self.value(x).dims3("upsample_ramp")?;
        if frames == 0 || pool == 0 {
            return Err(shape_err!("upsample_ramp", "empty input"));
        }
        if let Some(p) = prev {
            if self.value(p).shape() != [bs, c, 2] {
                return Err(shape_err!(
                    "upsample_ramp",
                    "prev shape {:?}, expected [{}, {}, 2]",
                    self.value(p).shape(),
                    bs,
                    c
                ));
            }
        }
        let out_t = frames * pool;
        let mut data = Vec::with_capacity(bs * c * out_t);
        let inv_p = S::ONE / S::from_f64(pool as f64);
        {
            let xd = self.value(x).data();
            let pd = prev.map(|p| self.value(p).data());
            for b in 0..bs {
                for ch in 0..c {
                    let base = (b * c + ch) * frames;
                    let lookup = |j: isize| -> S {
                        if j >= 0 {
                            xd[base + j as usize]
                        } else {
                            match pd {
                                Some(pd) => pd[(b * c + ch) * 2 + (j + 2) as usize],
                                None => S::ZERO,
                            }
                        }
                    };
                    for i in 0..frames as isize {
                        let from = lookup(i - 2);
                        let to = lookup(i - 1);
                        let step = (to - from) * inv_p;
                        for tau in 0..pool {
                            data.push(from + step * S::from_f64((tau + 1) as f64));
                        }
                    }
                }
            }
        }
        let value = Tensor::from_parts(vec![bs, c, out_t], data);
        let mut inputs = vec![x];
        if let Some(p) = prev {
            inputs.push(p);
        }
        let tracked = self.tracked_any(&inputs);
        self.push("upsample_ramp", value, tracked, Op::UpsampleRamp { x, pool, prev })
    }

    /// Feature-wise linear modulation: `y[b,c,..] = gamma[b,c]·x[b,c,..] + beta[b,c]`.
    pub fn film(&mut self, x: ValueId, gamma: ValueId, beta: ValueId) -> Result<ValueId> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() < 2 {
            return Err(shape_err!("film", "expected rank >= 2, shape {:?}", xs));
        }
        let (bs, c) = (xs[0], xs[1]);
        for (name, id) in [("gamma", gamma), ("beta", beta)] {
            if self.value(id).shape() != [bs, c] {
                return Err(shape_err!(
                    "film",
                    "{} shape {:?}, expected [{}, {}]",
                    name,
                    self.value(id).shape(),
                    bs,
                    c
                ));
            }
        }
        let rest: usize = xs[2..].iter().product::<usize>().max(1);
        let (xd, gd, bd) = (self.value(x).data(), self.value(gamma).data(), self.value(beta).data());
        let mut data = Vec::with_capacity(xd.len());
        for b in 0..bs {
            for ch in 0..c {
                let (g, be) = (gd[b * c + ch], bd[b * c + ch]);
                let base = (b * c + ch) * rest;
                for i in 0..rest {
                    data.push(g * xd[base + i] + be);
                }
            }
        }
        let value = Tensor::from_parts(xs, data);
        let tracked = self.tracked_any(&[x, gamma, beta]);
        self.push("film", value, tracked, Op::Film { x, gamma, beta })
    }

    /// Affine map: input `[B, F]`, weight `[G, F]`, bias `[G]` -> `[B, G]`.
    pub fn dense(&mut self, x: ValueId, w: ValueId, b: ValueId) -> Result<ValueId> {
        let (bs, f) = self.value(x).dims2("dense")?;
        let (g, wf) = self.value(w).dims2("dense")?;
        if wf != f {
            return Err(shape_err!("dense", "input features {} vs weight features {}", f, wf));
        }
        if self.value(b).shape() != [g] {
            return Err(shape_err!("dense", "bias shape {:?}, expected [{}]", self.value(b).shape(), g));
        }
        let (xd, wd, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut data = Vec::with_capacity(bs * g);
        for bi in 0..bs {
            for gi in 0..g {
                let mut acc = bd[gi];
                let (xrow, wrow) = (&xd[bi * f..(bi + 1) * f], &wd[gi * f..(gi + 1) * f]);
                for (xv, wv) in xrow.iter().zip(wrow) {
                    acc += *xv * *wv;
                }
                data.push(acc);
            }
        }
        let value = Tensor::from_parts(vec![bs, g], data);
        let tracked = self.tracked_any(&[x, w, b]);
        self.push("dense", value, tracked, Op::Dense { x, w, b })
    }

    /// One LSTM cell step. `x` is `[B, Cin]`, `hc` packs the running state
    /// as `[B, 2H]` (h then c). Weights follow the (i, f, g, o) gate order:
    /// `w_ih [4H, Cin]`, `w_hh [4H, H]`, `bias [4H]`. Returns the new
    /// `[B, 2H]` state; the step output y_t is its h half.
    pub fn lstm_step(
        &mut self,
        x: ValueId,
        hc: ValueId,
        w_ih: ValueId,
        w_hh: ValueId,
        bias: ValueId,
    ) -> Result<ValueId> {
        let (bs, cin) = self.value(x).dims2("lstm_step")?;
        let (hb, h2) = self.value(hc).dims2("lstm_step")?;
        if hb != bs || h2 % 2 != 0 {
            return Err(shape_err!("lstm_step", "state shape {:?} for batch {}", self.value(hc).shape(), bs));
        }
        let h = h2 / 2;
        if self.value(w_ih).shape() != [4 * h, cin] {
            return Err(shape_err!(
                "lstm_step",
                "w_ih shape {:?}, expected [{}, {}]",
                self.value(w_ih).shape(),
                4 * h,
                cin
            ));
        }
        if self.value(w_hh).shape() != [4 * h, h] {
            return Err(shape_err!(
                "lstm_step",
                "w_hh shape {:?}, expected [{}, {}]",
                self.value(w_hh).shape(),
                4 * h,
                h
            ));
        }
        if self.value(bias).shape() != [4 * h] {
            return Err(shape_err!("lstm_step", "bias shape {:?}, expected [{}]", self.value(bias).shape(), 4 * h));
        }
        let (xd, hcd, wihd, whhd, bd) = (
            self.value(x).data(),
            self.value(hc).data(),
            self.value(w_ih).data(),
            self.value(w_hh).data(),
            self.value(bias).data(),
        );
        let mut gates = vec![S::ZERO; bs * 4 * h];
        let mut out = vec![S::ZERO; bs * 2 * h];
        for b in 0..bs {
            let xrow = &xd[b * cin..(b + 1) * cin];
            let hrow = &hcd[b * 2 * h..b * 2 * h + h];
            let crow = &hcd[b * 2 * h + h..(b + 1) * 2 * h];
            for g in 0..4 * h {
                let mut z = bd[g];
                let wrow = &wihd[g * cin..(g + 1) * cin];
                for (xv, wv) in xrow.iter().zip(wrow) {
                    z += *xv * *wv;
                }
                let urow = &whhd[g * h..(g + 1) * h];
                for (hv, uv) in hrow.iter().zip(urow) {
                    z += *hv * *uv;
                }
                let gate = g / h;
                gates[b * 4 * h + g] = if gate == 2 { z.tanh() } else { z.sigmoid() };
            }
            for j in 0..h {
                let i_g = gates[b * 4 * h + j];
                let f_g = gates[b * 4 * h + h + j];
                let g_g = gates[b * 4 * h + 2 * h + j];
                let o_g = gates[b * 4 * h + 3 * h + j];
                let c_new = f_g * crow[j] + i_g * g_g;
                out[b * 2 * h + j] = o_g * c_new.tanh();
                out[b * 2 * h + h + j] = c_new;
            }
        }
        let value = Tensor::from_parts(vec![bs, 2 * h], out);
        let tracked = self.tracked_any(&[x, hc, w_ih, w_hh, bias]);
        self.push(
            "lstm_step",
            value,
            tracked,
            Op::LstmStep { x, hc, w_ih, w_hh, bias, gates },
        )
    }

    /// Hann-windowed one-sided STFT magnitudes. The input's last dimension
    /// is the signal; leading dimensions collapse to rows. Frames start at
    /// index 0 with the given hop and no padding; output is
    /// `[rows, frames, window/2 + 1]`.
    pub fn stft_mags(&mut self, x: ValueId, window: usize, hop: usize) -> Result<ValueId> {
        let (rows, len) = self.value(x).rows_cols();
        if !window.is_power_of_two() || window < 2 {
            return Err(shape_err!("stft_mags", "window {} must be a power of two", window));
        }
        if hop == 0 {
            return Err(shape_err!("stft_mags", "hop must be >= 1"));
        }
        if len < window {
            return Err(shape_err!("stft_mags", "signal length {} shorter than one window {}", len, window));
        }
        let frames = (len - window) / hop + 1;
        let bins = window / 2 + 1;
        let hann = hann_window::<S>(window);
        let xd = self.value(x).data();
        let mut mags = vec![S::ZERO; rows * frames * bins];
        let mut spectra = vec![S::ZERO; rows * frames * bins * 2];
        let mut re = vec![S::ZERO; window];
        let mut im = vec![S::ZERO; window];
        for r in 0..rows {
            for f in 0..frames {
                let start = r * len + f * hop;
                for t in 0..window {
                    re[t] = xd[start + t] * hann[t];
                    im[t] = S::ZERO;
                }
                fft::fft(&mut re, &mut im)?;
                let out_base = (r * frames + f) * bins;
                for k in 0..bins {
                    let (a, b) = (re[k], im[k]);
                    mags[out_base + k] = (a * a + b * b).sqrt();
                    spectra[(out_base + k) * 2] = a;
                    spectra[(out_base + k) * 2 + 1] = b;
                }
            }
        }
        let value = Tensor::from_parts(vec![rows, frames, bins], mags);
        let tracked = self.is_tracked(x);
        self.push("stft_mags", value, tracked, Op::StftMags { x, window, hop, spectra })
    }

    /// Mean energy of hop-strided windows: `E_k = (1/W) Σ x[τ]²` over each
    /// complete window. Output `[rows, frames]`.
    pub fn frame_energy(&mut self, x: ValueId, window: usize, hop: usize) -> Result<ValueId> {
        let (rows, len) = self.value(x).rows_cols();
        if window == 0 || hop == 0 {
            return Err(shape_err!("frame_energy", "window and hop must be >= 1"));
        }
        if len < window {
            return Err(shape_err!("frame_energy", "signal length {} shorter than one window {}", len, window));
        }
        let frames = (len - window) / hop + 1;
        let inv_w = S::ONE / S::from_f64(window as f64);
        let xd = self.value(x).data();
        let mut data = Vec::with_capacity(rows * frames);
        for r in 0..rows {
            for f in 0..frames {
                let start = r * len + f * hop;
                let mut acc = S::ZERO;
                for t in 0..window {
                    let v = xd[start + t];
                    acc += v * v;
                }
                data.push(acc * inv_w);
            }
        }
        let value = Tensor::from_parts(vec![rows, frames], data);
        let tracked = self.is_tracked(x);
        self.push("frame_energy", value, tracked, Op::FrameEnergy { x, window, hop })
    }

    // ---- reverse pass ----------------------------------------------------

    /// Runs reverse accumulation from a scalar loss. Every recorded op is
    /// visited exactly once in reverse execution order; constants block
    /// gradient flow.
    pub fn backward(&self, loss: ValueId) -> Result<Gradients<S>> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(shape_err!("backward", "loss must be scalar, shape {:?}", lt.shape()));
        }
        if !lt.data()[0].is_finite() {
            return Err(Error::NonFinite { op: "backward" });
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].tracked {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![S::ONE]);
        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else { continue };
            self.backprop_node(i, &gout, &mut grads);
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(gout);
            }
        }
        Ok(Gradients { grads })
    }

    fn grad_buf<'a>(&self, grads: &'a mut [Option<Vec<S>>], id: ValueId) -> Option<&'a mut Vec<S>> {
        if !self.nodes[id.0].tracked {
            return None;
        }
        let numel = self.nodes[id.0].value.numel();
        Some(grads[id.0].get_or_insert_with(|| vec![S::ZERO; numel]))
    }

    #[allow(clippy::too_many_lines)]
    fn backprop_node(&self, i: usize, gout: &[S], grads: &mut [Option<Vec<S>>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for id in [*a, *b] {
                    if let Some(g) = self.grad_buf(grads, id) {
                        for (gi, go) in g.iter_mut().zip(gout) {
                            *gi += *go;
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(g) = self.grad_buf(grads, *a) {
                    for (gi, go) in g.iter_mut().zip(gout) {
                        *gi += *go;
                    }
                }
                if let Some(g) = self.grad_buf(grads, *b) {
                    for (gi, go) in g.iter_mut().zip(gout) {
                        *gi -= *go;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                if let Some(g) = self.grad_buf(grads, *a) {
                    for ((gi, go), bv) in g.iter_mut().zip(gout).zip(db) {
                        *gi += *go * *bv;
                    }
                }
                if let Some(g) = self.grad_buf(grads, *b) {
                    for ((gi, go), av) in g.iter_mut().zip(gout).zip(da) {
                        *gi += *go * *av;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(g) = self.grad_buf(grads, *a) {
                    for (gi, go) in g.iter_mut().zip(gout) {
                        *gi += *go * *c;
                    }
                }
            }
            Op::Abs(a) => {
                let da = self.value(*a).data();
                if let Some(g) = self.grad_buf(grads, *a) {
                    for ((gi, go), av) in g.iter_mut().zip(gout).zip(da) {
                        if *av > S::ZERO {
                            *gi += *go;
                        } else if *av < S::ZERO {
                            *gi -= *go;
                        }
                    }
                }
            }
            Op::LogFloored(a, floor) => {
                let da = self.value(*a).data();
                if let Some(g) = self.grad_buf(grads, *a) {
                    for ((gi, go), av) in g.iter_mut().zip(gout).zip(da) {
                        if *av > *floor {
                            *gi += *go / *av;
                        }
                    }
                }
            }
            Op::SqrtFloored(a, grad_floor) => {
                let out = self.value(ValueId(i)).data();
                if let Some(g) = self.grad_buf(grads, *a) {
                    let two = S::from_f64(2.0);
                    for ((gi, go), yv) in g.iter_mut().zip(gout).zip(out) {
                        *gi += *go / (two * yv.max(*grad_floor));
                    }
                }
            }
            Op::Sum(a) => {
                let go = gout[0];
                if let Some(g) = self.grad_buf(grads, *a) {
                    for gi in g.iter_mut() {
                        *gi += go;
                    }
                }
            }
            Op::CropLeft(a, n) => {
                let (bs, c, t) = self.value(*a).dims3("crop_left").expect("checked in forward");
                let out_t = t - n;
                if let Some(g) = self.grad_buf(grads, *a) {
                    for bc in 0..bs * c {
                        let src = bc * out_t;
                        let dst = bc * t + n;
                        for j in 0..out_t {
                            g[dst + j] += gout[src + j];
                        }
                    }
                }
            }
            Op::SliceCols(a, start, len) => {
                let (bs, f) = self.value(*a).dims2("slice_cols").expect("checked in forward");
                if let Some(g) = self.grad_buf(grads, *a) {
                    for b in 0..bs {
                        for j in 0..*len {
                            g[b * f + start + j] += gout[b * len + j];
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(g) = self.grad_buf(grads, *a) {
                    for (gi, go) in g.iter_mut().zip(gout) {
                        *gi += *go;
                    }
                }
            }
            Op::ConcatTime(a, b) => {
                let (ba, ca, ta) = self.value(*a).dims3("concat_time").expect("checked");
                let (_, _, tb) = self.value(*b).dims3("concat_time").expect("checked");
                let t_out = ta + tb;
                if let Some(g) = self.grad_buf(grads, *a) {
                    for bc in 0..ba * ca {
                        for j in 0..ta {
                            g[bc * ta + j] += gout[bc * t_out + j];
                        }
                    }
                }
                if let Some(g) = self.grad_buf(grads, *b) {
                    for bc in 0..ba * ca {
                        for j in 0..tb {
                            g[bc * tb + j] += gout[bc * t_out + ta + j];
                        }
                    }
                }
            }
            Op::TimeSlice(a, t) => {
                let (bs, c, len) = self.value(*a).dims3("time_slice").expect("checked");
                if let Some(g) = self.grad_buf(grads, *a) {
                    for b in 0..bs {
                        for ch in 0..c {
                            g[(b * c + ch) * len + t] += gout[b * c + ch];
                        }
                    }
                }
            }
            Op::AssembleTime(steps) => {
                let f = steps.len();
                let (bs, c) = self.value(steps[0]).dims2("assemble_time").expect("checked");
                for (fi, &s) in steps.iter().enumerate() {
                    if let Some(g) = self.grad_buf(grads, s) {
                        for b in 0..bs {
                            for ch in 0..c {
                                g[b * c + ch] += gout[(b * c + ch) * f + fi];
                            }
                        }
                    }
                }
            }
            Op::StackChannels(a, b) => {
                let (ba, ca, ta) = self.value(*a).dims3("stack_channels").expect("checked");
                let (_, cb, _) = self.value(*b).dims3("stack_channels").expect("checked");
                let c_total = ca + cb;
                if let Some(g) = self.grad_buf(grads, *a) {
                    for bi in 0..ba {
                        let src = bi * c_total * ta;
                        let dst = bi * ca * ta;
                        for j in 0..ca * ta {
                            g[dst + j] += gout[src + j];
                        }
                    }
                }
                if let Some(g) = self.grad_buf(grads, *b) {
                    for bi in 0..ba {
                        let src = bi * c_total * ta + ca * ta;
                        let dst = bi * cb * ta;
                        for j in 0..cb * ta {
                            g[dst + j] += gout[src + j];
                        }
                    }
                }
            }
            Op::Conv1d { x, w, b, dilation } => {
                let (bs, cin, t) = self.value(*x).dims3("conv1d").expect("checked");
                let [cout, _, k] = *self.value(*w).shape() else { unreachable!() };
                let out_t = t - (k - 1) * dilation;
                let xd = self.value(*x).data();
                let wd = self.value(*w).data();
                if let Some(g) = self.grad_buf(grads, *x) {
                    for bi in 0..bs {
                        for co in 0..cout {
                            let go_base = (bi * cout + co) * out_t;
                            for ci in 0..cin {
                                let gx_base = (bi * cin + ci) * t;
                                let w_base = (co * cin + ci) * k;
                                for j in 0..k {
                                    let wv = wd[w_base + j];
                                    if wv == S::ZERO {
                                        continue;
                                    }
                                    let off = gx_base + j * dilation;
                                    for ot in 0..out_t {
                                        g[off + ot] += gout[go_base + ot] * wv;
                                    }
                                }
                            }
                        }
                    }
                }
                if let Some(g) = self.grad_buf(grads, *w) {
                    for bi in 0..bs {
                        for co in 0..cout {
                            let go_base = (bi * cout + co) * out_t;
                            for ci in 0..cin {
                                let x_base = (bi * cin + ci) * t;
                                let w_base = (co * cin + ci) * k;
                                for j in 0..k {
                                    let off = x_base + j * dilation;
                                    let mut acc = S::ZERO;
                                    for ot in 0..out_t {
                                        acc += gout[go_base + ot] * xd[off + ot];
                                    }
                                    g[w_base + j] += acc;
                                }
                            }
                        }
                    }
                }
                if let Some(g) = self.grad_buf(grads, *b) {
                    for bi in 0..bs {
                        for co in 0..cout {
                            let go_base = (bi * cout + co) * out_t;
                            let mut acc = S::ZERO;
                            for ot in 0..out_t {
                                acc += gout[go_base + ot];
                            }
                            g[co] += acc;
                        }
                    }
                }
            }
            Op::Prelu { x, slope } => {
                let xs = self.value(*x).shape();
                let (bs, channels) = (xs[0], xs[1]);
                let rest: usize = xs[2..].iter().product::<usize>().max(1);
                let xd = self.value(*x).data();
                let sd = self.value(*slope).data();
                if let Some(g) = self.grad_buf(grads, *x) {
                    for b in 0..bs {
                        for c in 0..channels {
                            let s = sd[c];
                            let base = (b * channels + c) * rest;
                            for j in 0..rest {
                                let v = xd[base + j];
                                g[base + j] += if v >= S::ZERO { gout[base + j] } else { gout[base + j] * s };
                            }
                        }
                    }
                }
                if let Some(g) = self.grad_buf(grads, *slope) {
                    for b in 0..bs {
                        for c in 0..channels {
                            let base = (b * channels + c) * rest;
                            let mut acc = S::ZERO;
                            for j in 0..rest {
                                let v = xd[base + j];
                                if v < S::ZERO {
                                    acc += gout[base + j] * v;
                                }
                            }
                            g[c] += acc;
                        }
                    }
                }
            }
            Op::MaxPool { x, pool, argmax } => {
                let (bs, c, t) = self.value(*x).dims3("max_pool").expect("checked");
                let frames = t / pool;
                if let Some(g) = self.grad_buf(grads, *x) {
                    for bc in 0..bs * c {
                        for f in 0..frames {
                            let oi = bc * frames + f;
                            g[bc * t + f * pool + argmax[oi] as usize] += gout[oi];
                        }
                    }
                }
            }
            Op::UpsampleLinear { x, pool } => {
                let (bs, c, frames) = self.value(*x).dims3("upsample_linear").expect("checked");
                let inv_p = S::ONE / S::from_f64(*pool as f64);
                if let Some(g) = self.grad_buf(grads, *x) {
                    for bc in 0..bs * c {
                        let in_base = bc * frames;
                        let out_base = bc * frames * pool;
                        for f in 0..frames {
                            if f + 1 < frames {
                                for tau in 0..*pool {
                                    let go = gout[out_base + f * pool + tau];
                                    let w = S::from_f64(tau as f64) * inv_p;
                                    g[in_base + f] += go * (S::ONE - w);
                                    g[in_base + f + 1] += go * w;
                                }
                            } else {
                                for tau in 0..*pool {
                                    g[in_base + f] += gout[out_base + f * pool + tau];
                                }
                            }
                        }
                    }
                }
            }
            Op::UpsampleRamp { x, pool, prev } => {
                let (bs, c, frames) = self.value(*x).dims3("upsample_ramp").expect("checked");
                let inv_p = S::ONE / S::from_f64(*pool as f64);
                // Weights per sample: from-frame gets (1 - w), to-frame gets w,
                // with w = (tau+1)/P. Scatter into frames or prev; fresh-mode
                // virtual zeros absorb nothing.
                let scatter = |g: &mut Vec<S>, target_is_x: bool, bc: usize, j: isize, amount: S| {
                    if target_is_x {
                        if j >= 0 {
                            g[bc * frames + j as usize] += amount;
                        }
                    } else if j < 0 {
                        g[bc * 2 + (j + 2) as usize] += amount;
                    }
                };
                for target_is_x in [true, false] {
                    let id = if target_is_x { *x } else { match prev { Some(p) => *p, None => continue } };
                    let Some(g) = self.grad_buf(grads, id) else { continue };
                    for bc in 0..bs * c {
                        let out_base = bc * frames * pool;
                        for i in 0..frames as isize {
                            for tau in 0..*pool {
                                let go = gout[out_base + i as usize * pool + tau];
                                let w = S::from_f64((tau + 1) as f64) * inv_p;
                                scatter(g, target_is_x, bc, i - 2, go * (S::ONE - w));
                                scatter(g, target_is_x, bc, i - 1, go * w);
                            }
                        }
                    }
                }
            }
            Op::Film { x, gamma, beta } => {
                let xs = self.value(*x).shape();
                let (bs, c) = (xs[0], xs[1]);
                let rest: usize = xs[2..].iter().product::<usize>().max(1);
                let xd = self.value(*x).data();
                let gd = self.value(*gamma).data();
                if let Some(g) = self.grad_buf(grads, *x) {
                    for b in 0..bs {
                        for ch in 0..c {
                            let gv = gd[b * c + ch];
                            let base = (b * c + ch) * rest;
                            for j in 0..rest {
                                g[base + j] += gout[base + j] * gv;
                            }
                        }
                    }
                }
                if let Some(g) = self.grad_buf(grads, *gamma) {
                    for b in 0..bs {
                        for ch in 0..c {
                            let base = (b * c + ch) * rest;
                            let mut acc = S::ZERO;
                            for j in 0..rest {
                                acc += gout[base + j] * xd[base + j];
                            }
                            g[b * c + ch] += acc;
                        }
                    }
                }
                if let Some(g) = self.grad_buf(grads, *beta) {
                    for b in 0..bs {
                        for ch in 0..c {
                            let base = (b * c + ch) * rest;
                            let mut acc = S::ZERO;
                            for j in 0..rest {
                                acc += gout[base + j];
                            }
                            g[b * c + ch] += acc;
                        }
                    }
                }
            }
            Op::Dense { x, w, b } => {
                let (bs, f) = self.value(*x).dims2("dense").expect("checked");
                let (gdim, _) = self.value(*w).dims2("dense").expect("checked");
                let xd = self.value(*x).data();
                let wd = self.value(*w).data();
                if let Some(g) = self.grad_buf(grads, *x) {
                    for bi in 0..bs {
                        for gi in 0..gdim {
                            let go = gout[bi * gdim + gi];
                            if go == S::ZERO {
                                continue;
                            }
                            for fi in 0..f {
                                g[bi * f + fi] += go * wd[gi * f + fi];
                            }
                        }
                    }
                }
                if let Some(g) = self.grad_buf(grads, *w) {
                    for bi in 0..bs {
                        for gi in 0..gdim {
                            let go = gout[bi * gdim + gi];
                            if go == S::ZERO {
                                continue;
                            }
                            for fi in 0..f {
                                g[gi * f + fi] += go * xd[bi * f + fi];
                            }
                        }
                    }
                }
                if let Some(g) = self.grad_buf(grads, *b) {
                    for bi in 0..bs {
                        for gi in 0..gdim {
                            g[gi] += gout[bi * gdim + gi];
                        }
                    }
                }
            }
            Op::LstmStep { x, hc, w_ih, w_hh, bias, gates } => {
                self.backprop_lstm(i, *x, *hc, *w_ih, *w_hh, *bias, gates, gout, grads);
            }
            Op::StftMags { x, window, hop, spectra } => {
                self.backprop_stft(i, *x, *window, *hop, spectra, gout, grads);
            }
            Op::FrameEnergy { x, window, hop } => {
                let (rows, len) = self.value(*x).rows_cols();
                let frames = (len - window) / hop + 1;
                let xd = self.value(*x).data();
                let two_over_w = S::from_f64(2.0 / *window as f64);
                if let Some(g) = self.grad_buf(grads, *x) {
                    for r in 0..rows {
                        for f in 0..frames {
                            let go = gout[r * frames + f] * two_over_w;
                            let start = r * len + f * hop;
                            for t in 0..*window {
                                g[start + t] += go * xd[start + t];
                            }
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_lstm(
        &self,
        node: usize,
        x: ValueId,
        hc: ValueId,
        w_ih: ValueId,
        w_hh: ValueId,
        bias: ValueId,
        gates: &[S],
        gout: &[S],
        grads: &mut [Option<Vec<S>>],
    ) {
        let (bs, cin) = self.value(x).dims2("lstm_step").expect("checked");
        let h = self.value(hc).shape()[1] / 2;
        let xd = self.value(x).data();
        let hcd = self.value(hc).data();
        let wihd = self.value(w_ih).data();
        let whhd = self.value(w_hh).data();
        let out = self.value(ValueId(node)).data();
        // Pre-activation gate gradients, then one matmul-like pass per input.
        let mut dz = vec![S::ZERO; bs * 4 * h];
        for b in 0..bs {
            for j in 0..h {
                let i_g = gates[b * 4 * h + j];
                let f_g = gates[b * 4 * h + h + j];
                let g_g = gates[b * 4 * h + 2 * h + j];
                let o_g = gates[b * 4 * h + 3 * h + j];
                let c_prev = hcd[b * 2 * h + h + j];
                let c_new = out[b * 2 * h + h + j];
                let t = c_new.tanh();
                let dh = gout[b * 2 * h + j];
                let mut dc = gout[b * 2 * h + h + j];
                dc += dh * o_g * (S::ONE - t * t);
                let d_o = dh * t;
                let d_i = dc * g_g;
                let d_g = dc * i_g;
                let d_f = dc * c_prev;
                dz[b * 4 * h + j] = d_i * i_g * (S::ONE - i_g);
                dz[b * 4 * h + h + j] = d_f * f_g * (S::ONE - f_g);
                dz[b * 4 * h + 2 * h + j] = d_g * (S::ONE - g_g * g_g);
                dz[b * 4 * h + 3 * h + j] = d_o * o_g * (S::ONE - o_g);
            }
        }
        if let Some(g) = self.grad_buf(grads, x) {
            for b in 0..bs {
                for gi in 0..4 * h {
                    let d = dz[b * 4 * h + gi];
                    if d == S::ZERO {
                        continue;
                    }
                    for ci in 0..cin {
                        g[b * cin + ci] += d * wihd[gi * cin + ci];
                    }
                }
            }
        }
        if let Some(g) = self.grad_buf(grads, hc) {
            for b in 0..bs {
                // dh (through the recurrent matmul) and dc (through the cell path)
                for gi in 0..4 * h {
                    let d = dz[b * 4 * h + gi];
                    if d == S::ZERO {
                        continue;
                    }
                    for hj in 0..h {
                        g[b * 2 * h + hj] += d * whhd[gi * h + hj];
                    }
                }
                for j in 0..h {
                    let f_g = gates[b * 4 * h + h + j];
                    let o_g = gates[b * 4 * h + 3 * h + j];
                    let c_new = out[b * 2 * h + h + j];
                    let t = c_new.tanh();
                    let dh = gout[b * 2 * h + j];
                    let dc = gout[b * 2 * h + h + j] + dh * o_g * (S::ONE - t * t);
                    g[b * 2 * h + h + j] += dc * f_g;
                }
            }
        }
        if let Some(g) = self.grad_buf(grads, w_ih) {
            for b in 0..bs {
                for gi in 0..4 * h {
                    let d = dz[b * 4 * h + gi];
                    if d == S::ZERO {
                        continue;
                    }
                    for ci in 0..cin {
                        g[gi * cin + ci] += d * xd[b * cin + ci];
                    }
                }
            }
        }
        if let Some(g) = self.grad_buf(grads, w_hh) {
            for b in 0..bs {
                for gi in 0..4 * h {
                    let d = dz[b * 4 * h + gi];
                    if d == S::ZERO {
                        continue;
                    }
                    for hj in 0..h {
                        g[gi * h + hj] += d * hcd[b * 2 * h + hj];
                    }
                }
            }
        }
        if let Some(g) = self.grad_buf(grads, bias) {
            for b in 0..bs {
                for gi in 0..4 * h {
                    g[gi] += dz[b * 4 * h + gi];
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_stft(
        &self,
        node: usize,
        x: ValueId,
        window: usize,
        hop: usize,
        spectra: &[S],
        gout: &[S],
        grads: &mut [Option<Vec<S>>],
    ) {
        let (rows, len) = self.value(x).rows_cols();
        let frames = (len - window) / hop + 1;
        let bins = window / 2 + 1;
        let mags = self.value(ValueId(node)).data();
        let hann = hann_window::<S>(window);
        let tiny = S::from_f64(1e-30);
        let Some(g) = self.grad_buf(grads, x) else { return };
        let mut gre = vec![S::ZERO; window];
        let mut gim = vec![S::ZERO; window];
        for r in 0..rows {
            for f in 0..frames {
                let base = (r * frames + f) * bins;
                for v in gre.iter_mut() {
                    *v = S::ZERO;
                }
                for v in gim.iter_mut() {
                    *v = S::ZERO;
                }
                let mut any = false;
                for k in 0..bins {
                    let gm = gout[base + k];
                    if gm == S::ZERO {
                        continue;
                    }
                    let m = mags[base + k].max(tiny);
                    let re = spectra[(base + k) * 2];
                    let im = spectra[(base + k) * 2 + 1];
                    // Conjugate here so a forward FFT computes the adjoint below.
                    gre[k] = gm * re / m;
                    gim[k] = -(gm * im / m);
                    any = true;
                }
                if !any {
                    continue;
                }
                // dL/dx_t = Re( Σ_k conj(g_k) e^{-2πikt/W} ): forward FFT of the
                // conjugated bin gradients, real part, times the window.
                fft::fft(&mut gre, &mut gim).expect("window validated in forward");
                let start = r * len + f * hop;
                for t in 0..window {
                    g[start + t] += gre[t] * hann[t];
                }
            }
        }
    }
}

/// Periodic Hann window of length `n`, computed in f64 then cast.
pub fn hann_window<S: Scalar>(n: usize) -> Vec<S> {
    (0..n)
        .map(|t| {
            let v = 0.5 * (1.0 - libm::cos(2.0 * core::f64::consts::PI * t as f64 / n as f64));
            S::from_f64(v)
        })
        .collect()
}
