//! Forward kernels for the layer vocabulary: 2-D convolution, 2x2 max
//! pooling, ReLU, and softmax. Convolution is cross-correlation (no kernel
//! flip) over channel-last `H x W x C` tensors.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::TensorBase;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Valid,
    Same,
}

/// Spatial geometry of one convolution: output size and top/left zero-fill.
pub(crate) fn conv_geometry(
    in_h: usize,
    in_w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize, isize, isize)> {
    if stride < 1 {
        return Err(Error::InvalidInput("stride must be >= 1".into()));
    }
    match padding {
        Padding::Valid => {
            if kh > in_h || kw > in_w {
                return Err(Error::InvalidInput(format!(
                    "kernel {kh}x{kw} larger than input {in_h}x{in_w} with valid padding"
                )));
            }
            let out_h = (in_h - kh) / stride + 1;
            let out_w = (in_w - kw) / stride + 1;
            Ok((out_h, out_w, 0, 0))
        }
        Padding::Same => {
            let out_h = in_h.div_ceil(stride);
            let out_w = in_w.div_ceil(stride);
            let pad_h = ((out_h - 1) * stride + kh).saturating_sub(in_h);
            let pad_w = ((out_w - 1) * stride + kw).saturating_sub(in_w);
            Ok((out_h, out_w, (pad_h / 2) as isize, (pad_w / 2) as isize))
        }
    }
}

/// Cross-correlation of an `H x W x Cin` input with a `kh x kw x Cin x Cout`
/// kernel. Accumulates each output element in `f64`.
pub fn conv2d_forward<S: Scalar>(
    input: &TensorBase<S>,
    weights: &TensorBase<S>,
    bias: &TensorBase<S>,
    stride: usize,
    padding: Padding,
) -> Result<TensorBase<S>> {
    if input.rank() != 3 || weights.rank() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "conv2d expects rank-3 input and rank-4 weights, got {:?} and {:?}",
            input.shape(),
            weights.shape()
        )));
    }
    let (in_h, in_w, c_in) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (kh, kw, wc_in, c_out) = (
        weights.shape()[0],
        weights.shape()[1],
        weights.shape()[2],
        weights.shape()[3],
    );
    if wc_in != c_in {
        return Err(Error::ShapeMismatch(format!(
            "conv2d: input has {c_in} channels, kernel expects {wc_in}"
        )));
    }
    if bias.len() != c_out {
        return Err(Error::ShapeMismatch(format!(
            "conv2d: bias length {} != out channels {c_out}",
            bias.len()
        )));
    }
    let (out_h, out_w, pad_top, pad_left) = conv_geometry(in_h, in_w, kh, kw, stride, padding)?;

    let x = input.data();
    let w = weights.data();
    let b = bias.data();
    let mut out = Vec::with_capacity(out_h * out_w * c_out);
    for ho in 0..out_h {
        for wo in 0..out_w {
            for co in 0..c_out {
                let mut acc = b[co].to_f64();
                for ki in 0..kh {
                    let hi = (ho * stride + ki) as isize - pad_top;
                    if hi < 0 || hi >= in_h as isize {
                        continue;
                    }
                    for kj in 0..kw {
                        let wi = (wo * stride + kj) as isize - pad_left;
                        if wi < 0 || wi >= in_w as isize {
                            continue;
                        }
                        let x_base = (hi as usize * in_w + wi as usize) * c_in;
                        let w_base = ((ki * kw) + kj) * c_in * c_out;
                        for ci in 0..c_in {
                            acc += x[x_base + ci].to_f64()
                                * w[w_base + ci * c_out + co].to_f64();
                        }
                    }
                }
                out.push(S::from_f64(acc));
            }
        }
    }
    TensorBase::new(vec![out_h, out_w, c_out], out)
}

/// 2x2 max pooling with stride 2. Odd edges pool over the partial window.
///
/// `winners` holds, for each output cell in flat order, the flat index of the
/// input element that won its window (ties to the lowest index). LRP routes
/// relevance through these indices.
pub fn maxpool2x2_forward<S: Scalar>(
    input: &TensorBase<S>,
) -> Result<(TensorBase<S>, Vec<usize>)> {
    if input.rank() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "maxpool expects rank-3 input, got {:?}",
            input.shape()
        )));
    }
    let (in_h, in_w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let out_h = in_h.div_ceil(2);
    let out_w = in_w.div_ceil(2);
    let x = input.data();
    let mut out = Vec::with_capacity(out_h * out_w * c);
    let mut winners = Vec::with_capacity(out_h * out_w * c);
    for ho in 0..out_h {
        for wo in 0..out_w {
            for ci in 0..c {
                let mut best = S::neg_infinity();
                let mut best_idx = usize::MAX;
                for dh in 0..2usize {
                    let hi = ho * 2 + dh;
                    if hi >= in_h {
                        continue;
                    }
                    for dw in 0..2usize {
                        let wi = wo * 2 + dw;
                        if wi >= in_w {
                            continue;
                        }
                        let idx = (hi * in_w + wi) * c + ci;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                winners.push(best_idx);
            }
        }
    }
    Ok((TensorBase::new(vec![out_h, out_w, c], out)?, winners))
}

pub fn relu<S: Scalar>(input: &TensorBase<S>) -> TensorBase<S> {
    let data = input.data().iter().map(|&x| x.max(S::zero())).collect();
    TensorBase::new(input.shape().to_vec(), data).expect("relu preserves shape")
}

/// Numerically stable softmax over a rank-1 tensor.
pub fn softmax<S: Scalar>(logits: &TensorBase<S>) -> TensorBase<S> {
    let m = logits
        .data()
        .iter()
        .fold(f64::NEG_INFINITY, |a, &x| a.max(x.to_f64()));
    let exps: Vec<f64> = logits.data().iter().map(|&x| (x.to_f64() - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    let data = exps.iter().map(|&e| S::from_f64(e / total)).collect();
    TensorBase::new(logits.shape().to_vec(), data).expect("softmax preserves shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::TensorBase;

    type Tensor = TensorBase<f32>;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv_1x1_scalar_scaling() {
        let input = t(&[2, 2, 1], &[1.0, 2.0, 3.0, 4.0]);
        let w = t(&[1, 1, 1, 1], &[2.0]);
        let b = t(&[1], &[0.0]);
        let out = conv2d_forward(&input, &w, &b, 1, Padding::Valid).unwrap();
        assert_eq!(out.data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn conv_zero_kernel_gives_constant_bias() {
        let input = t(&[3, 3, 1], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let w = TensorBase::zeros(vec![2, 2, 1, 2]);
        let b = t(&[2], &[0.5, -1.5]);
        let out = conv2d_forward(&input, &w, &b, 1, Padding::Valid).unwrap();
        assert_eq!(out.shape(), &[2, 2, 2]);
        for chunk in out.data().chunks(2) {
            assert_eq!(chunk, &[0.5, -1.5]);
        }
    }

    #[test]
    fn conv_kernel_larger_than_input_rejected() {
        let input = t(&[2, 2, 1], &[1.0; 4]);
        let w = TensorBase::zeros(vec![3, 3, 1, 1]);
        let b = TensorBase::zeros(vec![1]);
        assert!(conv2d_forward(&input, &w, &b, 1, Padding::Valid).is_err());
    }

    #[test]
    fn conv_matches_nested_loop_oracle() {
        let mut seed = 3u64;
        let mut next = move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 33) as f32 / (1u64 << 31) as f32) - 0.5
        };
        let (h, w, cin, cout, kh, kw) = (8usize, 8usize, 2usize, 4usize, 3usize, 3usize);
        let xd: Vec<f32> = (0..h * w * cin).map(|_| next()).collect();
        let wd: Vec<f32> = (0..kh * kw * cin * cout).map(|_| next()).collect();
        let bd: Vec<f32> = (0..cout).map(|_| next()).collect();
        let input = t(&[h, w, cin], &xd);
        let weights = t(&[kh, kw, cin, cout], &wd);
        let bias = t(&[cout], &bd);
        let got = conv2d_forward(&input, &weights, &bias, 1, Padding::Valid).unwrap();

        // Direct 6-nested-loop cross-correlation.
        let (oh, ow) = (h - kh + 1, w - kw + 1);
        for ho in 0..oh {
            for wo in 0..ow {
                for co in 0..cout {
                    let mut acc = bd[co] as f64;
                    for ki in 0..kh {
                        for kj in 0..kw {
                            for ci in 0..cin {
                                let xv = xd[((ho + ki) * w + wo + kj) * cin + ci] as f64;
                                let wv = wd[((ki * kw + kj) * cin + ci) * cout + co] as f64;
                                acc += xv * wv;
                            }
                        }
                    }
                    let g = got.get(&[ho, wo, co]).unwrap() as f64;
                    assert!(
                        (g - acc).abs() / acc.abs().max(1.0) < 1e-5,
                        "mismatch at ({ho},{wo},{co}): {g} vs {acc}"
                    );
                }
            }
        }
    }

    #[test]
    fn conv_same_padding_preserves_spatial_size() {
        let input = t(&[5, 5, 1], &[1.0; 25]);
        let w = t(&[3, 3, 1, 1], &[1.0; 9]);
        let b = TensorBase::zeros(vec![1]);
        let out = conv2d_forward(&input, &w, &b, 1, Padding::Same).unwrap();
        assert_eq!(out.shape(), &[5, 5, 1]);
        // Center cell sees the full 3x3 window; corner sees a 2x2 window.
        assert_eq!(out.get(&[2, 2, 0]).unwrap(), 9.0);
        assert_eq!(out.get(&[0, 0, 0]).unwrap(), 4.0);
    }

    #[test]
    fn conv_1x1_identity_kernel_per_channel() {
        let input = t(&[2, 2, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        // 1x1x2x2 kernel = identity over channels.
        let w = t(&[1, 1, 2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let b = TensorBase::zeros(vec![2]);
        let out = conv2d_forward(&input, &w, &b, 1, Padding::Valid).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn maxpool_basic() {
        let input = t(&[2, 2, 1], &[1.0, 2.0, 3.0, 4.0]);
        let (out, winners) = maxpool2x2_forward(&input).unwrap();
        assert_eq!(out.data(), &[4.0]);
        assert_eq!(winners, vec![3]);
    }

    #[test]
    fn maxpool_constant_input_ties_to_lowest_index() {
        let input = t(&[4, 4, 1], &[2.5; 16]);
        let (out, winners) = maxpool2x2_forward(&input).unwrap();
        assert!(out.data().iter().all(|&x| x == 2.5));
        // Each window's winner is its top-left element.
        assert_eq!(winners, vec![0, 2, 8, 10]);
    }

    #[test]
    fn maxpool_matches_window_scan_oracle() {
        let mut seed = 11u64;
        let mut next = move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 33) as f32 / (1u64 << 31) as f32) - 0.5
        };
        let xd: Vec<f32> = (0..6 * 6 * 3).map(|_| next()).collect();
        let input = t(&[6, 6, 3], &xd);
        let (out, winners) = maxpool2x2_forward(&input).unwrap();
        for ho in 0..3 {
            for wo in 0..3 {
                for ci in 0..3 {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for dh in 0..2 {
                        for dw in 0..2 {
                            let idx = ((ho * 2 + dh) * 6 + wo * 2 + dw) * 3 + ci;
                            if xd[idx] > best {
                                best = xd[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let flat = (ho * 3 + wo) * 3 + ci;
                    assert_eq!(out.data()[flat], best);
                    assert_eq!(winners[flat], best_idx);
                }
            }
        }
    }

    #[test]
    fn maxpool_odd_edges_use_partial_windows() {
        let input = t(&[3, 3, 1], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let (out, _) = maxpool2x2_forward(&input).unwrap();
        assert_eq!(out.shape(), &[2, 2, 1]);
        assert_eq!(out.data(), &[5.0, 6.0, 8.0, 9.0]);
    }

    #[test]
    fn relu_idempotent() {
        let input = t(&[5], &[-2.0, -0.5, 0.0, 0.5, 2.0]);
        let once = relu(&input);
        let twice = relu(&once);
        assert_eq!(once.data(), twice.data());
        assert_eq!(once.data(), &[0.0, 0.0, 0.0, 0.5, 2.0]);
    }

    #[test]
    fn softmax_sums_to_one_and_positive() {
        let logits = t(&[4], &[-3.0, 0.0, 2.0, 10.0]);
        let p = softmax(&logits);
        let total: f32 = p.data().iter().sum();
        assert!((total - 1.0).abs() < 1e-5);
        assert!(p.data().iter().all(|&x| x > 0.0));
    }

    #[test]
    fn softmax_shift_invariant() {
        let logits = t(&[3], &[0.3, -1.2, 2.2]);
        let shifted = t(&[3], &[0.3 + 7.5, -1.2 + 7.5, 2.2 + 7.5]);
        let a = softmax(&logits);
        let b = softmax(&shifted);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}
