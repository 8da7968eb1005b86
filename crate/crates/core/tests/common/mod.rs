//! Naive reference implementations, independent of the tape kernels.
//! Everything here is written as plain nested loops over indices.

#![allow(clippy::needless_range_loop)]

use errseg_core::Tensor;

/// Seven-nested-loop cross-correlation.
pub fn naive_conv2d(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Tensor {
    let (b, cin, h, wid) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, cpg, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let opg = cout / groups;
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (wid + 2 * padding - kw) / stride + 1;
    let mut out = vec![0.0f64; b * cout * oh * ow];
    for bi in 0..b {
        for oc in 0..cout {
            let g = oc / opg;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.map_or(0.0, |t| t.data()[oc]);
                    for icg in 0..cpg {
                        let ic = g * cpg + icg;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wid as isize {
                                    continue;
                                }
                                let xv = x.data()[((bi * cin + ic) * h + iy as usize) * wid + ix as usize];
                                let wv = w.data()[((oc * cpg + icg) * kh + ky) * kw + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((bi * cout + oc) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::new(vec![b, cout, oh, ow], out).unwrap()
}

/// Per-block arithmetic mean, plain sequential summation.
pub fn naive_avg_pool2d(x: &Tensor, r: usize) -> Tensor {
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, ow) = (h / r, w / r);
    let mut out = vec![0.0f64; b * c * oh * ow];
    for bc in 0..b * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ky in 0..r {
                    for kx in 0..r {
                        acc += x.data()[bc * h * w + (oy * r + ky) * w + ox * r + kx];
                    }
                }
                out[bc * oh * ow + oy * ow + ox] = acc / (r * r) as f64;
            }
        }
    }
    Tensor::new(vec![b, c, oh, ow], out).unwrap()
}

/// Three-loop scaled dot-product attention with its own softmax.
pub fn naive_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Tensor {
    let (b, lq, c) = (q.shape()[0], q.shape()[1], q.shape()[2]);
    let lk = k.shape()[1];
    let scale = 1.0 / (c as f64).sqrt();
    let mut out = vec![0.0f64; b * lq * c];
    for bi in 0..b {
        for i in 0..lq {
            let mut scores = vec![0.0f64; lk];
            for j in 0..lk {
                let mut dot = 0.0;
                for ch in 0..c {
                    dot += q.data()[(bi * lq + i) * c + ch] * k.data()[(bi * lk + j) * c + ch];
                }
                scores[j] = dot * scale;
            }
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                denom += *s;
            }
            for ch in 0..c {
                let mut acc = 0.0;
                for j in 0..lk {
                    acc += scores[j] / denom * v.data()[(bi * lk + j) * c + ch];
                }
                out[(bi * lq + i) * c + ch] = acc;
            }
        }
    }
    Tensor::new(vec![b, lq, c], out).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn assert_bits_equal(a: &[f64], b: &[f64], what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: length mismatch");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert_eq!(x.to_bits(), y.to_bits(), "{what}: element {i}: {x} vs {y}");
    }
}
