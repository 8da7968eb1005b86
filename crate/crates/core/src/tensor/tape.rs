//! Operation tape: eager forward evaluation with recorded reverse-mode
//! gradients.
//!
//! Every operation computes its output immediately, checks the result for
//! NaN/Inf, appends the output as a new node, and records an [`Op`] entry.
//! [`Tape::backward`] replays the records in reverse, accumulating
//! gradients into every node on the path. Replay order is fixed, so
//! identical inputs produce bit-identical gradients.
//!
//! Model parameters live in a [`ParamStore`]; binding a [`ParamId`] onto a
//! tape is memoized, which makes weight tying (two layers holding the same
//! id) work without any special casing.

use crate::error::{Error, Result};
use crate::flops::{AttnShape, FlopLedger, Stage};
use crate::tensor::{strides_of, Tensor};

/// Index of a value node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

/// Index of a parameter in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Owner of model parameters between tape lifetimes.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Trainable parameter.
    pub fn add(&mut self, mut t: Tensor) -> ParamId {
        t.requires_grad = true;
        self.params.push(t);
        ParamId(self.params.len() - 1)
    }

    /// Parameter excluded from gradient updates.
    pub fn add_frozen(&mut self, mut t: Tensor) -> ParamId {
        t.requires_grad = false;
        self.params.push(t);
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// One plain gradient-descent step for every trainable parameter that
    /// was bound on `tape` and received a gradient. Binding order is the
    /// iteration order, so updates are deterministic.
    pub fn apply_sgd(&mut self, tape: &Tape, lr: f64) {
        for &(pid, tid) in &tape.param_bindings {
            if !self.params[pid.0].requires_grad {
                continue;
            }
            if let Some(g) = tape.grad(tid) {
                let g = g.to_vec();
                self.params[pid.0].sgd_step(&g, lr);
            }
        }
    }
}

/// Interpolation mode for `upsample2d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpsampleMode {
    Nearest,
    /// align-corners-false convention.
    Bilinear,
}

/// MAC attribution tag for batched matmuls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MacTag {
    Generic,
    AttentionScore,
    AttentionValue,
}

#[derive(Debug, Clone)]
enum Op {
    Conv2d {
        input: TensorId,
        weight: TensorId,
        bias: Option<TensorId>,
        stride: usize,
        padding: usize,
        groups: usize,
        out: TensorId,
    },
    AvgPool2d { input: TensorId, r: usize, out: TensorId },
    Upsample2d { input: TensorId, r: usize, mode: UpsampleMode, out: TensorId },
    MatMulBatched { a: TensorId, b: TensorId, transpose_b: bool, out: TensorId },
    Softmax { input: TensorId, out: TensorId },
    Scale { input: TensorId, c: f64, out: TensorId },
    Add { a: TensorId, b: TensorId, out: TensorId },
    Mul { a: TensorId, b: TensorId, out: TensorId },
    Gelu { input: TensorId, out: TensorId },
    Linear { input: TensorId, weight: TensorId, bias: Option<TensorId>, out: TensorId },
    Reshape { input: TensorId, out: TensorId },
    Permute { input: TensorId, perm: Vec<usize>, out: TensorId },
    Concat { inputs: Vec<TensorId>, axis: usize, sizes: Vec<usize>, out: TensorId },
    IndexSelect0 { input: TensorId, indices: Vec<usize>, out: TensorId },
    Broadcast0 { input: TensorId, copies: usize, out: TensorId },
    SumAll { input: TensorId, out: TensorId },
    CosineMap { features: TensorId, embeddings: TensorId, out: TensorId },
    CrossEntropy { logits: TensorId, targets: Vec<usize>, ignore: usize, out: TensorId },
}

/// Eagerly evaluated operation tape.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Tensor>,
    ops: Vec<Op>,
    param_map: Vec<Option<TensorId>>,
    param_bindings: Vec<(ParamId, TensorId)>,
    stage: Option<Stage>,
    ledger: FlopLedger,
}

/// Fixed-order pairwise summation; exact for windows of equal values when
/// the window size is a power of two.
pub(crate) fn tree_sum(buf: &mut [f64]) -> f64 {
    if buf.is_empty() {
        return 0.0;
    }
    let mut n = buf.len();
    while n > 1 {
        let half = n / 2;
        for i in 0..half {
            buf[i] = buf[2 * i] + buf[2 * i + 1];
        }
        if n % 2 == 1 {
            buf[half] = buf[n - 1];
        }
        n = half + n % 2;
    }
    buf[0]
}

pub(crate) fn gelu_scalar(x: f64) -> f64 {
    const A: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const B: f64 = 0.044_715;
    0.5 * x * (1.0 + (A * (x + B * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    const A: f64 = 0.797_884_560_802_865_4;
    const B: f64 = 0.044_715;
    let u = A * (x + B * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * A * (1.0 + 3.0 * B * x * x)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stage label attached to subsequent MAC counts.
    pub fn set_stage(&mut self, stage: Stage) {
        self.stage = Some(stage);
    }

    pub fn clear_stage(&mut self) {
        self.stage = None;
    }

    pub fn stage(&self) -> Option<Stage> {
        self.stage
    }

    pub fn ledger(&self) -> &FlopLedger {
        &self.ledger
    }

    fn current_stage(&self) -> Stage {
        self.stage.unwrap_or(Stage::Other)
    }

    fn count_macs(&mut self, macs: u64, tag: MacTag) {
        let stage = self.current_stage();
        self.ledger.add(stage, macs, !matches!(tag, MacTag::Generic));
    }

    /// Add a leaf value node.
    pub fn input(&mut self, t: Tensor) -> TensorId {
        self.nodes.push(t);
        TensorId(self.nodes.len() - 1)
    }

    /// Add a leaf that never receives a gradient.
    pub fn constant(&mut self, mut t: Tensor) -> TensorId {
        t.requires_grad = false;
        self.input(t)
    }

    /// Bind a stored parameter onto the tape (memoized per id).
    pub fn param(&mut self, store: &ParamStore, pid: ParamId) -> TensorId {
        if self.param_map.len() < store.len() {
            self.param_map.resize(store.len(), None);
        }
        if let Some(tid) = self.param_map[pid.0] {
            return tid;
        }
        let tid = self.input(store.get(pid).clone());
        self.param_map[pid.0] = Some(tid);
        self.param_bindings.push((pid, tid));
        tid
    }

    /// Node id a parameter was bound to on this tape, if any.
    pub fn param_node(&self, pid: ParamId) -> Option<TensorId> {
        self.param_map.get(pid.0).copied().flatten()
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0]
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        self.nodes[id.0].shape()
    }

    pub fn data(&self, id: TensorId) -> &[f64] {
        self.nodes[id.0].data()
    }

    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn num_ops(&self) -> usize {
        self.ops.len()
    }

    fn push_output(&mut self, op_name: &'static str, t: Tensor, op: impl FnOnce(TensorId) -> Op) -> Result<TensorId> {
        if !t.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let out = self.input(t);
        let record = op(out);
        self.ops.push(record);
        Ok(out)
    }

    // ── forward operations ──────────────────────────────────────────

    /// 2-D cross-correlation over [B,Cin,H,W] with [Cout,Cin/groups,kh,kw].
    pub fn conv2d(
        &mut self,
        input: TensorId,
        weight: TensorId,
        bias: Option<TensorId>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<TensorId> {
        if stride == 0 {
            return Err(Error::Parameter("conv2d stride must be positive".into()));
        }
        if groups == 0 {
            return Err(Error::Parameter("conv2d groups must be positive".into()));
        }
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::Dimension(format!(
                "conv2d wants input [B,Cin,H,W] and weight [Cout,Cin/groups,kh,kw], got {:?} and {:?}",
                xs, ws
            )));
        }
        let (b, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, wc, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if cin % groups != 0 || cout % groups != 0 {
            return Err(Error::Dimension(format!(
                "conv2d channels must divide groups: Cin={cin} Cout={cout} groups={groups}"
            )));
        }
        if wc != cin / groups {
            return Err(Error::Dimension(format!(
                "conv2d weight expects {} input channels per group, got {}",
                cin / groups,
                wc
            )));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::Dimension(format!(
                "conv2d kernel {kh}x{kw} exceeds padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            )));
        }
        if let Some(bid) = bias {
            let bs = self.shape(bid);
            if bs != [cout] {
                return Err(Error::Dimension(format!(
                    "conv2d bias must be [Cout={cout}], got {:?}",
                    bs
                )));
            }
        }
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (w + 2 * padding - kw) / stride + 1;
        let cpg = cin / groups; // channels per group
        let opg = cout / groups;

        let mut out = vec![0.0f64; b * cout * oh * ow];
        {
            let x = self.data(input);
            let wt = self.data(weight);
            let bdata = bias.map(|bid| self.data(bid));
            for bi in 0..b {
                for g in 0..groups {
                    for ocg in 0..opg {
                        let oc = g * opg + ocg;
                        let bias_v = bdata.map_or(0.0, |bd| bd[oc]);
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut acc = bias_v;
                                for icg in 0..cpg {
                                    let ic = g * cpg + icg;
                                    for ky in 0..kh {
                                        let iy = (oy * stride + ky) as isize - padding as isize;
                                        if iy < 0 || iy >= h as isize {
                                            continue;
                                        }
                                        for kx in 0..kw {
                                            let ix = (ox * stride + kx) as isize - padding as isize;
                                            if ix < 0 || ix >= w as isize {
                                                continue;
                                            }
                                            let xv = x[((bi * cin + ic) * h + iy as usize) * w + ix as usize];
                                            let wv = wt[((oc * cpg + icg) * kh + ky) * kw + kx];
                                            acc += xv * wv;
                                        }
                                    }
                                }
                                out[((bi * cout + oc) * oh + oy) * ow + ox] = acc;
                            }
                        }
                    }
                }
            }
        }
        self.count_macs((b * cout * oh * ow * cpg * kh * kw) as u64, MacTag::Generic);
        let t = Tensor::new(vec![b, cout, oh, ow], out)?;
        self.push_output("conv2d", t, |out| Op::Conv2d { input, weight, bias, stride, padding, groups, out })
    }

    /// Mean pooling with kernel == stride == r; extents must divide r.
    pub fn avg_pool2d(&mut self, input: TensorId, r: usize) -> Result<TensorId> {
        if r == 0 {
            return Err(Error::Parameter("avg_pool2d r must be positive".into()));
        }
        let xs = self.shape(input).to_vec();
        if xs.len() != 4 {
            return Err(Error::Dimension(format!("avg_pool2d wants [B,C,H,W], got {:?}", xs)));
        }
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        if h % r != 0 || w % r != 0 {
            return Err(Error::Parameter(format!(
                "avg_pool2d extents {h}x{w} not divisible by r={r} (no implicit padding)"
            )));
        }
        let (oh, ow) = (h / r, w / r);
        let mut out = vec![0.0f64; b * c * oh * ow];
        let inv = 1.0 / (r * r) as f64;
        {
            let x = self.data(input);
            let mut window = vec![0.0f64; r * r];
            for bc in 0..b * c {
                let base = bc * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        for ky in 0..r {
                            for kx in 0..r {
                                window[ky * r + kx] = x[base + (oy * r + ky) * w + ox * r + kx];
                            }
                        }
                        out[bc * oh * ow + oy * ow + ox] = tree_sum(&mut window) * inv;
                    }
                }
            }
        }
        let t = Tensor::new(vec![b, c, oh, ow], out)?;
        self.push_output("avg_pool2d", t, |out| Op::AvgPool2d { input, r, out })
    }

    /// Integer-factor upsampling, nearest or bilinear (align-corners-false).
    pub fn upsample2d(&mut self, input: TensorId, r: usize, mode: UpsampleMode) -> Result<TensorId> {
        if r == 0 {
            return Err(Error::Parameter("upsample2d r must be at least 1".into()));
        }
        let xs = self.shape(input).to_vec();
        if xs.len() != 4 {
            return Err(Error::Dimension(format!("upsample2d wants [B,C,H,W], got {:?}", xs)));
        }
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (oh, ow) = (h * r, w * r);
        let mut out = vec![0.0f64; b * c * oh * ow];
        {
            let x = self.data(input);
            match mode {
                UpsampleMode::Nearest => {
                    for bc in 0..b * c {
                        let ib = bc * h * w;
                        let ob = bc * oh * ow;
                        for oy in 0..oh {
                            for ox in 0..ow {
                                out[ob + oy * ow + ox] = x[ib + (oy / r) * w + ox / r];
                            }
                        }
                    }
                }
                UpsampleMode::Bilinear => {
                    for bc in 0..b * c {
                        let ib = bc * h * w;
                        let ob = bc * oh * ow;
                        for oy in 0..oh {
                            let (y0, y1, fy) = bilinear_taps(oy, r, h);
                            for ox in 0..ow {
                                let (x0, x1, fx) = bilinear_taps(ox, r, w);
                                let v00 = x[ib + y0 * w + x0];
                                let v01 = x[ib + y0 * w + x1];
                                let v10 = x[ib + y1 * w + x0];
                                let v11 = x[ib + y1 * w + x1];
                                let top = v00 + fx * (v01 - v00);
                                let bot = v10 + fx * (v11 - v10);
                                out[ob + oy * ow + ox] = top + fy * (bot - top);
                            }
                        }
                    }
                }
            }
        }
        let t = Tensor::new(vec![b, c, oh, ow], out)?;
        self.push_output("upsample2d", t, |out| Op::Upsample2d { input, r, mode, out })
    }

    /// Batched matmul: [B,M,K] x [B,K,N] (or [B,N,K] when `transpose_b`).
    pub fn matmul_batched(&mut self, a: TensorId, b: TensorId, transpose_b: bool) -> Result<TensorId> {
        self.matmul_batched_tagged(a, b, transpose_b, MacTag::Generic)
    }

    pub(crate) fn matmul_batched_tagged(
        &mut self,
        a: TensorId,
        b: TensorId,
        transpose_b: bool,
        tag: MacTag,
    ) -> Result<TensorId> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 3 || sb.len() != 3 {
            return Err(Error::Dimension(format!(
                "matmul_batched wants rank-3 operands, got {:?} and {:?}",
                sa, sb
            )));
        }
        if sa[0] != sb[0] {
            return Err(Error::Dimension(format!(
                "matmul_batched batch mismatch: {} vs {}",
                sa[0], sb[0]
            )));
        }
        let (bs, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if transpose_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if k != kb {
            return Err(Error::Dimension(format!(
                "matmul_batched inner dim mismatch: {k} vs {kb}"
            )));
        }
        let mut out = vec![0.0f64; bs * m * n];
        {
            let ad = self.data(a);
            let bd = self.data(b);
            for bi in 0..bs {
                let ab = bi * m * k;
                let bb = bi * k * n; // per-batch element count, either layout
                let ob = bi * m * n;
                for i in 0..m {
                    for j in 0..n {
                        let mut acc = 0.0;
                        for kk in 0..k {
                            let bv = if transpose_b { bd[bb + j * k + kk] } else { bd[bb + kk * n + j] };
                            acc += ad[ab + i * k + kk] * bv;
                        }
                        out[ob + i * n + j] = acc;
                    }
                }
            }
        }
        self.count_macs((bs * m * k * n) as u64, tag);
        if matches!(tag, MacTag::AttentionScore) {
            let shape = AttnShape { stage: self.current_stage(), batch: bs, query_len: m, key_len: n };
            self.ledger.record_attn_shape(shape);
        }
        let t = Tensor::new(vec![bs, m, n], out)?;
        self.push_output("matmul_batched", t, |out| Op::MatMulBatched { a, b, transpose_b, out })
    }

    /// Softmax over the trailing axis.
    pub fn softmax(&mut self, input: TensorId) -> Result<TensorId> {
        let xs = self.shape(input).to_vec();
        if xs.is_empty() {
            return Err(Error::Dimension("softmax wants rank >= 1".into()));
        }
        let cols = xs[xs.len() - 1];
        let rows = self.value(input).numel() / cols;
        let mut out = vec![0.0f64; rows * cols];
        {
            let x = self.data(input);
            for rw in 0..rows {
                let base = rw * cols;
                let row = &x[base..base + cols];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..cols {
                    let e = (row[j] - max).exp();
                    out[base + j] = e;
                    sum += e;
                }
                for j in 0..cols {
                    out[base + j] /= sum;
                }
            }
        }
        let t = Tensor::new(xs, out)?;
        self.push_output("softmax", t, |out| Op::Softmax { input, out })
    }

    pub fn scale(&mut self, input: TensorId, c: f64) -> Result<TensorId> {
        let t = {
            let src = self.value(input);
            let data = src.data().iter().map(|v| v * c).collect();
            Tensor::new(src.shape().to_vec(), data)?
        };
        self.push_output("scale", t, |out| Op::Scale { input, c, out })
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "add shape mismatch: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let t = {
            let (ad, bd) = (self.data(a), self.data(b));
            let data = ad.iter().zip(bd).map(|(x, y)| x + y).collect();
            Tensor::new(self.shape(a).to_vec(), data)?
        };
        self.push_output("add", t, |out| Op::Add { a, b, out })
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "mul shape mismatch: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let t = {
            let (ad, bd) = (self.data(a), self.data(b));
            let data = ad.iter().zip(bd).map(|(x, y)| x * y).collect();
            Tensor::new(self.shape(a).to_vec(), data)?
        };
        self.push_output("mul", t, |out| Op::Mul { a, b, out })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, input: TensorId) -> Result<TensorId> {
        let t = {
            let src = self.value(input);
            let data = src.data().iter().map(|&v| gelu_scalar(v)).collect();
            Tensor::new(src.shape().to_vec(), data)?
        };
        self.push_output("gelu", t, |out| Op::Gelu { input, out })
    }

    /// Affine map over the trailing axis: [.., Cin] x [Cin, Cout] + [Cout].
    pub fn linear(&mut self, input: TensorId, weight: TensorId, bias: Option<TensorId>) -> Result<TensorId> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.is_empty() || ws.len() != 2 {
            return Err(Error::Dimension(format!(
                "linear wants input [..,Cin] and weight [Cin,Cout], got {:?} and {:?}",
                xs, ws
            )));
        }
        let cin = xs[xs.len() - 1];
        if ws[0] != cin {
            return Err(Error::Dimension(format!(
                "linear width mismatch: input trailing {} vs weight rows {}",
                cin, ws[0]
            )));
        }
        let cout = ws[1];
        if let Some(bid) = bias {
            if self.shape(bid) != [cout] {
                return Err(Error::Dimension(format!(
                    "linear bias must be [Cout={cout}], got {:?}",
                    self.shape(bid)
                )));
            }
        }
        let rows = self.value(input).numel() / cin;
        let mut out = vec![0.0f64; rows * cout];
        {
            let x = self.data(input);
            let w = self.data(weight);
            let bd = bias.map(|bid| self.data(bid));
            for rw in 0..rows {
                for j in 0..cout {
                    let mut acc = bd.map_or(0.0, |b| b[j]);
                    for i in 0..cin {
                        acc += x[rw * cin + i] * w[i * cout + j];
                    }
                    out[rw * cout + j] = acc;
                }
            }
        }
        self.count_macs((rows * cin * cout) as u64, MacTag::Generic);
        let mut os = xs;
        *os.last_mut().unwrap() = cout;
        let t = Tensor::new(os, out)?;
        self.push_output("linear", t, |out| Op::Linear { input, weight, bias, out })
    }

    pub fn reshape(&mut self, input: TensorId, shape: &[usize]) -> Result<TensorId> {
        let numel: usize = shape.iter().product();
        if numel != self.value(input).numel() {
            return Err(Error::Dimension(format!(
                "reshape {:?} -> {:?} changes element count",
                self.shape(input),
                shape
            )));
        }
        let t = Tensor::new(shape.to_vec(), self.data(input).to_vec())?;
        self.push_output("reshape", t, |out| Op::Reshape { input, out })
    }

    pub fn permute(&mut self, input: TensorId, perm: &[usize]) -> Result<TensorId> {
        let xs = self.shape(input).to_vec();
        if perm.len() != xs.len() {
            return Err(Error::Dimension(format!(
                "permute rank mismatch: perm {:?} on shape {:?}",
                perm, xs
            )));
        }
        let mut seen = vec![false; perm.len()];
        for &p in perm {
            if p >= perm.len() || seen[p] {
                return Err(Error::Parameter(format!("permute axes invalid: {:?}", perm)));
            }
            seen[p] = true;
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| xs[p]).collect();
        let data = permute_data(self.data(input), &xs, perm);
        let t = Tensor::new(out_shape, data)?;
        let perm = perm.to_vec();
        self.push_output("permute", t, |out| Op::Permute { input, perm, out })
    }

    pub fn concat(&mut self, inputs: &[TensorId], axis: usize) -> Result<TensorId> {
        if inputs.is_empty() {
            return Err(Error::Parameter("concat needs at least one input".into()));
        }
        let s0 = self.shape(inputs[0]).to_vec();
        if axis >= s0.len() {
            return Err(Error::Parameter(format!("concat axis {axis} out of range for {:?}", s0)));
        }
        let mut sizes = Vec::with_capacity(inputs.len());
        let mut ax_total = 0usize;
        for &id in inputs {
            let s = self.shape(id);
            if s.len() != s0.len()
                || s.iter().zip(&s0).enumerate().any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::Dimension(format!(
                    "concat shape mismatch: {:?} vs {:?} on axis {axis}",
                    s, s0
                )));
            }
            sizes.push(s[axis]);
            ax_total += s[axis];
        }
        let mut out_shape = s0.clone();
        out_shape[axis] = ax_total;
        let outer: usize = s0[..axis].iter().product();
        let inner: usize = s0[axis + 1..].iter().product();
        let mut out = vec![0.0f64; outer * ax_total * inner];
        let mut offset = 0usize;
        for (idx, &id) in inputs.iter().enumerate() {
            let chunk = sizes[idx] * inner;
            let src = self.data(id);
            for o in 0..outer {
                let dst = (o * ax_total + offset) * inner;
                out[dst..dst + chunk].copy_from_slice(&src[o * chunk..(o + 1) * chunk]);
            }
            offset += sizes[idx];
        }
        let t = Tensor::new(out_shape, out)?;
        let inputs = inputs.to_vec();
        self.push_output("concat", t, |out| Op::Concat { inputs, axis, sizes, out })
    }

    /// Gather slabs along axis 0.
    pub fn index_select0(&mut self, input: TensorId, indices: &[usize]) -> Result<TensorId> {
        let xs = self.shape(input).to_vec();
        if xs.is_empty() {
            return Err(Error::Dimension("index_select0 wants rank >= 1".into()));
        }
        let slab: usize = xs[1..].iter().product();
        for &i in indices {
            if i >= xs[0] {
                return Err(Error::Contract(format!(
                    "index_select0 index {i} out of range (extent {})",
                    xs[0]
                )));
            }
        }
        let mut out = vec![0.0f64; indices.len() * slab];
        let src = self.data(input);
        for (row, &i) in indices.iter().enumerate() {
            out[row * slab..(row + 1) * slab].copy_from_slice(&src[i * slab..(i + 1) * slab]);
        }
        let mut os = xs;
        os[0] = indices.len();
        let t = Tensor::new(os, out)?;
        let indices = indices.to_vec();
        self.push_output("index_select0", t, |out| Op::IndexSelect0 { input, indices, out })
    }

    /// Prepend an axis of length `copies` by repetition.
    pub fn broadcast0(&mut self, input: TensorId, copies: usize) -> Result<TensorId> {
        if copies == 0 {
            return Err(Error::Parameter("broadcast0 copies must be positive".into()));
        }
        let xs = self.shape(input).to_vec();
        let slab = self.value(input).numel();
        let mut out = Vec::with_capacity(copies * slab);
        for _ in 0..copies {
            out.extend_from_slice(self.data(input));
        }
        let mut os = vec![copies];
        os.extend_from_slice(&xs);
        let t = Tensor::new(os, out)?;
        self.push_output("broadcast0", t, |out| Op::Broadcast0 { input, copies, out })
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum_all(&mut self, input: TensorId) -> Result<TensorId> {
        let mut acc = 0.0;
        for v in self.data(input) {
            acc += v;
        }
        let t = Tensor::new(vec![], vec![acc])?;
        self.push_output("sum_all", t, |out| Op::SumAll { input, out })
    }

    /// Cosine similarity map: [D,h,w] features x [K,D] embeddings -> [K,h,w].
    pub fn cosine_map(&mut self, features: TensorId, embeddings: TensorId) -> Result<TensorId> {
        let fs = self.shape(features).to_vec();
        let es = self.shape(embeddings).to_vec();
        if fs.len() != 3 || es.len() != 2 {
            return Err(Error::Dimension(format!(
                "cosine_map wants features [D,h,w] and embeddings [K,D], got {:?} and {:?}",
                fs, es
            )));
        }
        let (d, h, w) = (fs[0], fs[1], fs[2]);
        if es[1] != d {
            return Err(Error::Dimension(format!(
                "cosine_map width mismatch: features D={d} vs embeddings D={}",
                es[1]
            )));
        }
        let k = es[0];
        let hw = h * w;
        let emb = self.data(embeddings);
        let mut emb_norms = vec![0.0f64; k];
        for t in 0..k {
            let mut s = 0.0;
            for c in 0..d {
                let v = emb[t * d + c];
                s += v * v;
            }
            if s == 0.0 {
                return Err(Error::Domain(format!("cosine_map: embedding row {t} has zero norm")));
            }
            emb_norms[t] = s.sqrt();
        }
        let feat = self.data(features);
        let mut out = vec![0.0f64; k * hw];
        for p in 0..hw {
            let mut s = 0.0;
            for c in 0..d {
                let v = feat[c * hw + p];
                s += v * v;
            }
            if s == 0.0 {
                return Err(Error::Domain(format!(
                    "cosine_map: pixel embedding at flat index {p} has zero norm"
                )));
            }
            let nf = s.sqrt();
            for t in 0..k {
                let mut dot = 0.0;
                for c in 0..d {
                    dot += feat[c * hw + p] * emb[t * d + c];
                }
                out[t * hw + p] = (dot / (nf * emb_norms[t])).clamp(-1.0, 1.0);
            }
        }
        self.count_macs((k * hw * d) as u64, MacTag::Generic);
        let t = Tensor::new(vec![k, h, w], out)?;
        self.push_output("cosine_map", t, |out| Op::CosineMap { features, embeddings, out })
    }

    /// Mean cross-entropy of [P,H,W] logits against H*W local class targets.
    /// Targets equal to `ignore` are skipped.
    pub fn cross_entropy(&mut self, logits: TensorId, targets: &[usize], ignore: usize) -> Result<TensorId> {
        let ls = self.shape(logits).to_vec();
        if ls.len() != 3 {
            return Err(Error::Dimension(format!(
                "cross_entropy wants logits [P,H,W], got {:?}",
                ls
            )));
        }
        let (p, h, w) = (ls[0], ls[1], ls[2]);
        if targets.len() != h * w {
            return Err(Error::Dimension(format!(
                "cross_entropy targets len {} != {}x{} pixels",
                targets.len(),
                h,
                w
            )));
        }
        let hw = h * w;
        let mut n_valid = 0usize;
        for &t in targets {
            if t == ignore {
                continue;
            }
            if t >= p {
                return Err(Error::Contract(format!(
                    "cross_entropy target {t} out of range for {p} classes"
                )));
            }
            n_valid += 1;
        }
        if n_valid == 0 {
            return Err(Error::Domain("cross_entropy: every pixel is ignored".into()));
        }
        let x = self.data(logits);
        let mut loss = 0.0;
        for px in 0..hw {
            let t = targets[px];
            if t == ignore {
                continue;
            }
            let mut max = f64::NEG_INFINITY;
            for c in 0..p {
                max = max.max(x[c * hw + px]);
            }
            let mut sum = 0.0;
            for c in 0..p {
                sum += (x[c * hw + px] - max).exp();
            }
            loss += max + sum.ln() - x[t * hw + px];
        }
        loss /= n_valid as f64;
        let t = Tensor::new(vec![], vec![loss])?;
        let targets = targets.to_vec();
        self.push_output("cross_entropy", t, |out| Op::CrossEntropy { logits, targets, ignore, out })
    }

    // ── backward ────────────────────────────────────────────────────

    /// Reverse-mode accumulation from a scalar root. Clears any previous
    /// gradients, seeds the root with 1.0 and replays the record list in
    /// reverse. Node iteration order is fixed, so results are bit-stable.
    pub fn backward(&mut self, root: TensorId) -> Result<()> {
        if self.nodes[root.0].numel() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[root.0].grad = Some(vec![1.0]);
        for i in (0..self.ops.len()).rev() {
            let op = self.ops[i].clone();
            self.backward_op(&op);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: TensorId, delta: &[f64]) {
        let node = &mut self.nodes[id.0];
        match &mut node.grad {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => node.grad = Some(delta.to_vec()),
        }
    }

    fn out_grad(&self, id: TensorId) -> Option<Vec<f64>> {
        self.nodes[id.0].grad.clone()
    }

    fn backward_op(&mut self, op: &Op) {
        match op {
            Op::Conv2d { input, weight, bias, stride, padding, groups, out } => {
                let Some(dy) = self.out_grad(*out) else { return };
                let xs = self.shape(*input).to_vec();
                let ws = self.shape(*weight).to_vec();
                let os = self.shape(*out).to_vec();
                let (b, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let (cout, cpg, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
                let (oh, ow) = (os[2], os[3]);
                let opg = cout / groups;
                let x = self.data(*input).to_vec();
                let wt = self.data(*weight).to_vec();
                let mut dx = vec![0.0f64; x.len()];
                let mut dw = vec![0.0f64; wt.len()];
                let mut db = vec![0.0f64; cout];
                for bi in 0..b {
                    for g in 0..*groups {
                        for ocg in 0..opg {
                            let oc = g * opg + ocg;
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let gy = dy[((bi * cout + oc) * oh + oy) * ow + ox];
                                    db[oc] += gy;
                                    for icg in 0..cpg {
                                        let ic = g * cpg + icg;
                                        for ky in 0..kh {
                                            let iy = (oy * stride + ky) as isize - *padding as isize;
                                            if iy < 0 || iy >= h as isize {
                                                continue;
                                            }
                                            for kx in 0..kw {
                                                let ix = (ox * stride + kx) as isize - *padding as isize;
                                                if ix < 0 || ix >= w as isize {
                                                    continue;
                                                }
                                                let xi = ((bi * cin + ic) * h + iy as usize) * w + ix as usize;
                                                let wi = ((oc * cpg + icg) * kh + ky) * kw + kx;
                                                dx[xi] += gy * wt[wi];
                                                dw[wi] += gy * x[xi];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                self.accumulate(*input, &dx);
                self.accumulate(*weight, &dw);
                if let Some(bid) = bias {
                    self.accumulate(*bid, &db);
                }
            }
            Op::AvgPool2d { input, r, out } => {
                let Some(dy) = self.out_grad(*out) else { return };
                let xs = self.shape(*input).to_vec();
                let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let (oh, ow) = (h / r, w / r);
                let inv = 1.0 / (r * r) as f64;
                let mut dx = vec![0.0f64; b * c * h * w];
                for bc in 0..b * c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let g = dy[bc * oh * ow + oy * ow + ox] * inv;
                            for ky in 0..*r {
                                for kx in 0..*r {
                                    dx[bc * h * w + (oy * r + ky) * w + ox * r + kx] += g;
                                }
                            }
                        }
                    }
                }
                self.accumulate(*input, &dx);
            }
            Op::Upsample2d { input, r, mode, out } => {
                let Some(dy) = self.out_grad(*out) else { return };
                let xs = self.shape(*input).to_vec();
                let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                let (oh, ow) = (h * r, w * r);
                let mut dx = vec![0.0f64; b * c * h * w];
                match mode {
                    UpsampleMode::Nearest => {
                        for bc in 0..b * c {
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    dx[bc * h * w + (oy / r) * w + ox / r] +=
                                        dy[bc * oh * ow + oy * ow + ox];
                                }
                            }
                        }
                    }
                    UpsampleMode::Bilinear => {
                        for bc in 0..b * c {
                            for oy in 0..oh {
                                let (y0, y1, fy) = bilinear_taps(oy, *r, h);
                                for ox in 0..ow {
                                    let (x0, x1, fx) = bilinear_taps(ox, *r, w);
                                    let g = dy[bc * oh * ow + oy * ow + ox];
                                    dx[bc * h * w + y0 * w + x0] += g * (1.0 - fy) * (1.0 - fx);
                                    dx[bc * h * w + y0 * w + x1] += g * (1.0 - fy) * fx;
                                    dx[bc * h * w + y1 * w + x0] += g * fy * (1.0 - fx);
                                    dx[bc * h * w + y1 * w + x1] += g * fy * fx;
                                }
                            }
                        }
                    }
                }
                self.accumulate(*input, &dx);
            }
            Op::MatMulBatched { a, b, transpose_b, out } => {
                let Some(dy) = self.out_grad(*out) else { return };
                let sa = self.shape(*a).to_vec();
                let sb = self.shape(*b).to_vec();
                let (bs, m, k) = (sa[0], sa[1], sa[2]);
                let n = if *transpose_b { sb[1] } else { sb[2] };
                let ad = self.data(*a).to_vec();
                let bd = self.data(*b).to_vec();
                let mut da = vec![0.0f64; ad.len()];
                let mut db = vec![0.0f64; bd.len()];
                for bi in 0..bs {
                    let ab = bi * m * k;
                    let bb = bi * k * n; // same element count either layout
                    let ob = bi * m * n;
                    if *transpose_b {
                        // out = A x B^T, B is [B,N,K]
                        for i in 0..m {
                            for j in 0..n {
                                let g = dy[ob + i * n + j];
                                for kk in 0..k {
                                    da[ab + i * k + kk] += g * bd[bb + j * k + kk];
                                    db[bb + j * k + kk] += g * ad[ab + i * k + kk];
                                }
                            }
                        }
                    } else {
                        for i in 0..m {
                            for j in 0..n {
                                let g = dy[ob + i * n + j];
                                for kk in 0..k {
                                    da[ab + i * k + kk] += g * bd[bb + kk * n + j];
                                    db[bb + kk * n + j] += g * ad[ab + i * k + kk];
                                }
                            }
                        }
                    }
                }
                self.accumulate(*a, &da);
                self.accumulate(*b, &db);
            }
            Op::Softmax { input, out } => {
                let Some(dy) = self.out_grad(*out) else { return };
                let y = self.data(*out).to_vec();
                let shape = self.shape(*out);
                let cols = shape[shape.len() - 1];
                let rows = y.len() / cols;
                let mut dx = vec![0.0f64; y.len()];
                for rw in 0..rows {
                    let base = rw * cols;
                    let mut dot = 0.0;
                    for j in 0..cols {
                        dot += dy[base + j] * y[base + j];
                    }
                    for j in 0..cols {
                        dx[base + j] = y[base + j] * (dy[base + j] - dot);
                    }
                }
                self.accumulate(*input, &dx);
            }
            Op::Scale { input, c, out } => {
                let Some(dy) = self.out_grad(*out) else { return };
                let dx: Vec<f64> = dy.iter().map(|g| g * c).collect();
                self.accumulate(*input, &dx);
            }
            Op::Add { a, b, out } => {
                let Some(dy) = self.out_grad(*out) else { return };
                self.accumulate(*a, &dy);
                self.accumulate(*b, &dy);
            }
            Op::Mul { a, b, out } => {
                let Some(dy) = self.out_grad(*out) else { return };
                let ad = self.data(*a).to_vec();
                let bd = self.data(*b).to_vec();
                let da: Vec<f64> = dy.iter().zip(&bd).map(|(g, v)| g * v).collect();
                let db: Vec<f64> = dy.iter().zip(&ad).map(|(g, v)| g * v).collect();
                self.accumulate(*a, &da);
                self.accumulate(*b, &db);
            }
            Op::Gelu { input, out } => {
                let Some(dy) = self.out_grad(*out) else { return };
                let x = self.data(*input).to_vec();
                let dx: Vec<f64> = dy.iter().zip(&x).map(|(g, &v)| g * gelu_grad_scalar(v)).collect();
                self.accumulate(*input, &dx);
            }
            Op::Linear { input, weight, bias, out } => {
                let Some(dy) = self.out_grad(*out) else { return };
                let cin = *self.shape(*input).last().unwrap();
                let cout = self.shape(*weight)[1];
                let rows = self.value(*input).numel() / cin;
                let x = self.data(*input).to_vec();
                let w = self.data(*weight).to_vec();
                let mut dx = vec![0.0f64; rows * cin];
                let mut dw = vec![0.0f64; cin * cout];
                let mut db = vec![0.0f64; cout];
                for rw in 0..rows {
                    for j in 0..cout {
                        let g = dy[rw * cout + j];
                        db[j] += g;
                        for i in 0..cin {
                            dx[rw * cin + i] += g * w[i * cout + j];
                            dw[i * cout + j] += g * x[rw * cin + i];
                        }
                    }
                }
                self.accumulate(*input, &dx);
                self.accumulate(*weight, &dw);
                if let Some(bid) = bias {
                    self.accumulate(*bid, &db);
                }
            }
            Op::Reshape { input, out } => {
                let Some(dy) = self.out_grad(*out) else { return };
                self.accumulate(*input, &dy);
            }
            Op::Permute { input, perm, out } => {
                let Some(dy) = self.out_grad(*out) else { return };
                let out_shape = self.shape(*out).to_vec();
                let mut inv = vec![0usize; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let dx = permute_data(&dy, &out_shape, &inv);
                self.accumulate(*input, &dx);
            }
            Op::Concat { inputs, axis, sizes, out } => {
                let Some(dy) = self.out_grad(*out) else { return };
                let os = self.shape(*out).to_vec();
                let outer: usize = os[..*axis].iter().product();
                let inner: usize = os[*axis + 1..].iter().product();
                let ax_total = os[*axis];
                let mut offset = 0usize;
                for (idx, &id) in inputs.iter().enumerate() {
                    let chunk = sizes[idx] * inner;
                    let mut d = vec![0.0f64; outer * chunk];
                    for o in 0..outer {
                        let src = (o * ax_total + offset) * inner;
                        d[o * chunk..(o + 1) * chunk].copy_from_slice(&dy[src..src + chunk]);
                    }
                    self.accumulate(id, &d);
                    offset += sizes[idx];
                }
            }
            Op::IndexSelect0 { input, indices, out } => {
                let Some(dy) = self.out_grad(*out) else { return };
                let xs = self.shape(*input).to_vec();
                let slab: usize = xs[1..].iter().product();
                let mut dx = vec![0.0f64; xs.iter().product()];
                for (row, &i) in indices.iter().enumerate() {
                    for j in 0..slab {
                        dx[i * slab + j] += dy[row * slab + j];
                    }
                }
                self.accumulate(*input, &dx);
            }
            Op::Broadcast0 { input, copies, out } => {
                let Some(dy) = self.out_grad(*out) else { return };
                let slab = self.value(*input).numel();
                let mut dx = vec![0.0f64; slab];
                for c in 0..*copies {
                    for j in 0..slab {
                        dx[j] += dy[c * slab + j];
                    }
                }
                self.accumulate(*input, &dx);
            }
            Op::SumAll { input, out } => {
                let Some(dy) = self.out_grad(*out) else { return };
                let dx = vec![dy[0]; self.value(*input).numel()];
                self.accumulate(*input, &dx);
            }
            Op::CosineMap { features, embeddings, out } => {
                let Some(dy) = self.out_grad(*out) else { return };
                let fs = self.shape(*features).to_vec();
                let (d, h, w) = (fs[0], fs[1], fs[2]);
                let hw = h * w;
                let k = self.shape(*embeddings)[0];
                let feat = self.data(*features).to_vec();
                let emb = self.data(*embeddings).to_vec();
                let y = self.data(*out).to_vec();
                let mut dfeat = vec![0.0f64; feat.len()];
                let mut demb = vec![0.0f64; emb.len()];
                let mut emb_norms = vec![0.0f64; k];
                for t in 0..k {
                    let mut s = 0.0;
                    for c in 0..d {
                        s += emb[t * d + c] * emb[t * d + c];
                    }
                    emb_norms[t] = s.sqrt();
                }
                for px in 0..hw {
                    let mut s = 0.0;
                    for c in 0..d {
                        s += feat[c * hw + px] * feat[c * hw + px];
                    }
                    let nf = s.sqrt();
                    for t in 0..k {
                        let g = dy[t * hw + px];
                        if g == 0.0 {
                            continue;
                        }
                        let nt = emb_norms[t];
                        let cos = y[t * hw + px];
                        for c in 0..d {
                            let fv = feat[c * hw + px];
                            let tv = emb[t * d + c];
                            dfeat[c * hw + px] += g * (tv / (nf * nt) - cos * fv / (nf * nf));
                            demb[t * d + c] += g * (fv / (nf * nt) - cos * tv / (nt * nt));
                        }
                    }
                }
                self.accumulate(*features, &dfeat);
                self.accumulate(*embeddings, &demb);
            }
            Op::CrossEntropy { logits, targets, ignore, out } => {
                let Some(dy) = self.out_grad(*out) else { return };
                let g = dy[0];
                let ls = self.shape(*logits).to_vec();
                let (p, h, w) = (ls[0], ls[1], ls[2]);
                let hw = h * w;
                let x = self.data(*logits).to_vec();
                let n_valid = targets.iter().filter(|&&t| t != *ignore).count() as f64;
                let mut dx = vec![0.0f64; p * hw];
                for px in 0..hw {
                    let t = targets[px];
                    if t == *ignore {
                        continue;
                    }
                    let mut max = f64::NEG_INFINITY;
                    for c in 0..p {
                        max = max.max(x[c * hw + px]);
                    }
                    let mut sum = 0.0;
                    for c in 0..p {
                        sum += (x[c * hw + px] - max).exp();
                    }
                    for c in 0..p {
                        let soft = (x[c * hw + px] - max).exp() / sum;
                        let ind = if c == t { 1.0 } else { 0.0 };
                        dx[c * hw + px] = g * (soft - ind) / n_valid;
                    }
                }
                self.accumulate(*logits, &dx);
            }
        }
    }
}

// Source taps and interpolation weight for one output coordinate,
// align-corners-false: taps clamp to the border, the fraction does not.
fn bilinear_taps(o: usize, r: usize, extent: usize) -> (usize, usize, f64) {
    let src = (o as f64 + 0.5) / r as f64 - 0.5;
    let base = src.floor();
    let frac = src - base;
    let i0 = (base.max(0.0) as usize).min(extent - 1);
    let i1 = ((base + 1.0).max(0.0) as usize).min(extent - 1);
    (i0, i1, frac)
}

fn permute_data(src: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let in_strides = strides_of(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let numel: usize = shape.iter().product();
    let rank = shape.len();
    if rank == 0 {
        return src.to_vec();
    }
    let mut out = vec![0.0f64; numel];
    let mut idx = vec![0usize; rank];
    for slot in out.iter_mut() {
        let mut src_off = 0usize;
        for (axis, &i) in idx.iter().enumerate() {
            src_off += i * in_strides[perm[axis]];
        }
        *slot = src[src_off];
        for axis in (0..rank).rev() {
            idx[axis] += 1;
            if idx[axis] < out_shape[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
    out
}

/// Single-head scaled dot-product attention:
/// softmax(q·kᵀ/√C)·v over [B,Lq,C], [B,Lk,C], [B,Lk,C].
pub fn attention(tape: &mut Tape, q: TensorId, k: TensorId, v: TensorId) -> Result<TensorId> {
    attention_with_probs(tape, q, k, v).map(|(out, _)| out)
}

/// Attention that also returns the softmax probability node [B,Lq,Lk].
pub fn attention_with_probs(
    tape: &mut Tape,
    q: TensorId,
    k: TensorId,
    v: TensorId,
) -> Result<(TensorId, TensorId)> {
    let sq = tape.shape(q).to_vec();
    let sk = tape.shape(k).to_vec();
    let sv = tape.shape(v).to_vec();
    if sq.len() != 3 || sk.len() != 3 || sv.len() != 3 {
        return Err(Error::Dimension(format!(
            "attention wants rank-3 q/k/v, got {:?} {:?} {:?}",
            sq, sk, sv
        )));
    }
    let c = sq[2];
    if sk[2] != c || sv[2] != c {
        return Err(Error::Dimension(format!(
            "attention channel mismatch: q has C={c}, k has {}, v has {}",
            sk[2], sv[2]
        )));
    }
    if sq[0] != sk[0] || sq[0] != sv[0] || sk[1] != sv[1] {
        return Err(Error::Dimension(format!(
            "attention batch/length mismatch: q {:?} k {:?} v {:?}",
            sq, sk, sv
        )));
    }
    if sq[1] == 0 || sk[1] == 0 {
        return Err(Error::Dimension("attention needs Lq, Lk >= 1".into()));
    }
    let scores = tape.matmul_batched_tagged(q, k, true, MacTag::AttentionScore)?;
    let scaled = tape.scale(scores, 1.0 / (c as f64).sqrt())?;
    let probs = tape.softmax(scaled)?;
    let out = tape.matmul_batched_tagged(probs, v, false, MacTag::AttentionValue)?;
    Ok((out, probs))
}
