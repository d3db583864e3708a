//! Kernel operations over [`Tensor`].

use super::{BatchNormParams, Conv2dParams, Tensor, TensorError};
use crate::scalar::Real;

/// Elementwise activation kinds used by the network.
///
/// The leaky slope is fixed at 0.1, the standard value for detector necks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    Mish,
    Relu,
    Leaky,
    Sigmoid,
}

/// Overflow-safe softplus: ln(1 + e^t) = max(t, 0) + ln(1 + e^(-|t|)).
#[inline]
pub fn softplus<R: Real>(t: R) -> R {
    t.max(R::zero()) + (-t.abs()).exp().ln_1p()
}

/// mish(t) = t * tanh(softplus(t)).
#[inline]
pub fn mish<R: Real>(t: R) -> R {
    t * softplus(t).tanh()
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid<R: Real>(t: R) -> R {
    if t >= R::zero() {
        R::one() / (R::one() + (-t).exp())
    } else {
        let e = t.exp();
        e / (R::one() + e)
    }
}

#[inline]
fn apply_activation<R: Real>(kind: Activation, t: R) -> R {
    match kind {
        Activation::Mish => mish(t),
        Activation::Relu => t.max(R::zero()),
        Activation::Leaky => {
            if t >= R::zero() {
                t
            } else {
                t * R::from_f64(0.1)
            }
        }
        Activation::Sigmoid => sigmoid(t),
    }
}

/// Elementwise activation.
pub fn activate<R: Real>(x: &Tensor<R>, kind: Activation) -> Tensor<R> {
    x.map(|v| apply_activation(kind, v))
}

/// Dense 2-D cross-correlation.
///
/// Output spatial extents follow (h + 2*pad - kh) / stride + 1. The inner
/// accumulation runs over (in_channel, ky, kx) in that order, which tests
/// rely on for exact agreement with the brute-force oracle.
pub fn conv2d<R: Real>(x: &Tensor<R>, p: &Conv2dParams<R>) -> Result<Tensor<R>, TensorError> {
    let [n, c, h, w] = x.shape();
    let (kh, kw) = p.kernel();
    if c != p.in_channels() {
        return Err(TensorError::ShapeMismatch(format!(
            "conv2d: input has {} channels but weights expect {}",
            c,
            p.in_channels()
        )));
    }
    let padded_h = h + 2 * p.padding;
    let padded_w = w + 2 * p.padding;
    if padded_h < kh || padded_w < kw {
        return Err(TensorError::InvalidGeometry(format!(
            "conv2d: kernel {}x{} does not fit padded input {}x{}",
            kh, kw, padded_h, padded_w
        )));
    }
    let oh = (padded_h - kh) / p.stride + 1;
    let ow = (padded_w - kw) / p.stride + 1;
    if oh == 0 || ow == 0 {
        return Err(TensorError::InvalidGeometry(
            "conv2d: zero-size spatial result".into(),
        ));
    }
    let oc = p.out_channels();
    let pad = p.padding as isize;
    let mut out = vec![R::zero(); n * oc * oh * ow];
    let wdat = p.weights.data();
    for b in 0..n {
        for o in 0..oc {
            let bias = p.bias.as_ref().map_or(R::zero(), |bv| bv[o]);
            for oy in 0..oh {
                let iy0 = (oy * p.stride) as isize - pad;
                for ox in 0..ow {
                    let ix0 = (ox * p.stride) as isize - pad;
                    let mut acc = R::zero();
                    for ic in 0..c {
                        for ky in 0..kh {
                            let iy = iy0 + ky as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = x.index(b, ic, iy as usize, 0);
                            let wrow = p.weights.index(o, ic, ky, 0);
                            for kx in 0..kw {
                                let ix = ix0 + kx as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += x.data()[xrow + ix as usize] * wdat[wrow + kx];
                            }
                        }
                    }
                    out[((b * oc + o) * oh + oy) * ow + ox] = acc + bias;
                }
            }
        }
    }
    Ok(Tensor::from_parts([n, oc, oh, ow], out))
}

/// Per-channel affine normalization with stored statistics:
/// (x - mean) / sqrt(var + eps) * gamma + beta.
pub fn batchnorm_infer<R: Real>(
    x: &Tensor<R>,
    p: &BatchNormParams<R>,
) -> Result<Tensor<R>, TensorError> {
    let [n, c, h, w] = x.shape();
    if p.channels() != c {
        return Err(TensorError::ShapeMismatch(format!(
            "batchnorm: parameter vectors have {} channels, input has {}",
            p.channels(),
            c
        )));
    }
    if p.running_var.iter().any(|v| *v < R::zero()) {
        return Err(TensorError::InvalidParameter(
            "running variance entries must be non-negative".into(),
        ));
    }
    let mut out = Vec::with_capacity(x.len());
    let plane = h * w;
    for b in 0..n {
        for ch in 0..c {
            let inv_std = R::one() / (p.running_var[ch] + p.epsilon).sqrt();
            let scale = p.gamma[ch] * inv_std;
            let shift = p.beta[ch] - p.running_mean[ch] * scale;
            let base = x.index(b, ch, 0, 0);
            for i in 0..plane {
                out.push(x.data()[base + i] * scale + shift);
            }
        }
    }
    Ok(Tensor::from_parts([n, c, h, w], out))
}

/// Same-pad max pooling: odd kernel, stride 1, padding (k-1)/2 with -inf
/// fill so borders take the maximum over real elements only.
pub fn maxpool<R: Real>(x: &Tensor<R>, k: usize) -> Result<Tensor<R>, TensorError> {
    if k % 2 == 0 || k == 0 {
        return Err(TensorError::InvalidParameter(format!(
            "maxpool kernel must be odd, got {}",
            k
        )));
    }
    let [n, c, h, w] = x.shape();
    let r = (k - 1) / 2;
    let mut out = Vec::with_capacity(x.len());
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                let y0 = y.saturating_sub(r);
                let y1 = (y + r).min(h - 1);
                for xx in 0..w {
                    let x0 = xx.saturating_sub(r);
                    let x1 = (xx + r).min(w - 1);
                    let mut m = R::neg_infinity();
                    for iy in y0..=y1 {
                        let base = x.index(b, ch, iy, 0);
                        for ix in x0..=x1 {
                            let v = x.data()[base + ix];
                            if v > m {
                                m = v;
                            }
                        }
                    }
                    out.push(m);
                }
            }
        }
    }
    Ok(Tensor::from_parts([n, c, h, w], out))
}

/// Spatial pyramid pooling: channel concatenation of the identity with
/// same-pad max pools of kernels 5, 9 and 13.
pub fn spp<R: Real>(x: &Tensor<R>) -> Result<Tensor<R>, TensorError> {
    if x.height() == 0 || x.width() == 0 {
        return Err(TensorError::InvalidGeometry(
            "spp: spatial extents must be at least 1".into(),
        ));
    }
    let p5 = maxpool(x, 5)?;
    let p9 = maxpool(x, 9)?;
    let p13 = maxpool(x, 13)?;
    concat_channels(&[x, &p5, &p9, &p13])
}

/// Nearest-neighbor 2x upsampling: each input pixel becomes a 2x2 block.
pub fn upsample2x<R: Real>(x: &Tensor<R>) -> Tensor<R> {
    let [n, c, h, w] = x.shape();
    let mut out = Vec::with_capacity(x.len() * 4);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..2 * h {
                let base = x.index(b, ch, y / 2, 0);
                for xx in 0..2 * w {
                    out.push(x.data()[base + xx / 2]);
                }
            }
        }
    }
    Tensor::from_parts([n, c, 2 * h, 2 * w], out)
}

/// Channel concatenation; all inputs must share batch and spatial extents.
pub fn concat_channels<R: Real>(xs: &[&Tensor<R>]) -> Result<Tensor<R>, TensorError> {
    let first = xs.first().ok_or_else(|| {
        TensorError::InvalidParameter("concat_channels: need at least one input".into())
    })?;
    let [n, _, h, w] = first.shape();
    let mut c_total = 0;
    for (i, t) in xs.iter().enumerate() {
        let [tn, tc, th, tw] = t.shape();
        if tn != n || th != h || tw != w {
            return Err(TensorError::ShapeMismatch(format!(
                "concat_channels: input {} has shape {:?}, expected batch {} and spatial {}x{}",
                i,
                t.shape(),
                n,
                h,
                w
            )));
        }
        c_total += tc;
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * c_total * plane);
    for b in 0..n {
        for t in xs {
            let start = t.index(b, 0, 0, 0);
            out.extend_from_slice(&t.data()[start..start + t.channels() * plane]);
        }
    }
    Ok(Tensor::from_parts([n, c_total, h, w], out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute-force six-nested-loop cross-correlation, kept deliberately
    /// separate from the production path.
    fn conv_oracle(x: &Tensor<f64>, p: &Conv2dParams<f64>) -> Tensor<f64> {
        let [n, c, h, w] = x.shape();
        let (kh, kw) = p.kernel();
        let oh = (h + 2 * p.padding - kh) / p.stride + 1;
        let ow = (w + 2 * p.padding - kw) / p.stride + 1;
        let mut out = Tensor::zeros([n, p.out_channels(), oh, ow]);
        for b in 0..n {
            for o in 0..p.out_channels() {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ic in 0..c {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * p.stride + ky) as isize - p.padding as isize;
                                    let ix = (ox * p.stride + kx) as isize - p.padding as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w
                                    {
                                        acc += x.at(b, ic, iy as usize, ix as usize)
                                            * p.weights.at(o, ic, ky, kx);
                                    }
                                }
                            }
                        }
                        if let Some(bias) = &p.bias {
                            acc += bias[o];
                        }
                        out.set(b, o, oy, ox, acc);
                    }
                }
            }
        }
        out
    }

    fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn conv_identity_1x1() {
        // 1x1 conv whose weight matrix is the identity over channels.
        let x = Tensor::from_fn([1, 3, 4, 4], |_, c, y, x| (c * 16 + y * 4 + x) as f64 * 0.5);
        let weights = Tensor::from_fn([3, 3, 1, 1], |o, i, _, _| if o == i { 1.0 } else { 0.0 });
        let p = Conv2dParams::new(weights, None, 1, 0).unwrap();
        let y = conv2d(&x, &p).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_all_ones_kernel_sums_window() {
        // Constant input through a 3x3 all-ones kernel: interior outputs are 9c.
        let c = 0.7;
        let x = Tensor::from_fn([1, 1, 5, 5], |_, _, _, _| c);
        let weights = Tensor::from_fn([1, 1, 3, 3], |_, _, _, _| 1.0);
        let p = Conv2dParams::new(weights, None, 1, 0).unwrap();
        let y = conv2d(&x, &p).unwrap();
        assert_eq!(y.shape(), [1, 1, 3, 3]);
        for v in y.data() {
            assert_relative_eq!(*v, 9.0 * c, max_relative = 1e-12);
        }
    }

    #[test]
    fn conv_shape_arithmetic_416() {
        let x = Tensor::<f64>::zeros([1, 3, 416, 416]);
        let p = Conv2dParams::new(Tensor::zeros([32, 3, 3, 3]), None, 1, 1).unwrap();
        let y = conv2d(&x, &p).unwrap();
        assert_eq!(y.shape(), [1, 32, 416, 416]);
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::<f64>::zeros([1, 2, 4, 4]);
        let p = Conv2dParams::new(Tensor::zeros([1, 3, 1, 1]), None, 1, 0).unwrap();
        assert!(matches!(
            conv2d(&x, &p),
            Err(TensorError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn conv_rejects_zero_size_output() {
        let x = Tensor::<f64>::zeros([1, 1, 2, 2]);
        let p = Conv2dParams::new(Tensor::zeros([1, 1, 5, 5]), None, 1, 0).unwrap();
        assert!(matches!(
            conv2d(&x, &p),
            Err(TensorError::InvalidGeometry(_))
        ));
    }

    #[test]
    fn conv_matches_bruteforce_oracle_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (shape, oc, k, stride, pad) in [
            ([2, 4, 9, 9], 3, 3, 1, 1),
            ([1, 2, 7, 5], 4, 1, 1, 0),
            ([2, 3, 8, 8], 2, 3, 2, 1),
            ([1, 4, 9, 9], 5, 5, 2, 2),
        ] {
            let x = random_tensor(&mut rng, shape);
            let weights = random_tensor(&mut rng, [oc, shape[1], k, k]);
            let bias: Vec<f64> = (0..oc).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let p = Conv2dParams::new(weights, Some(bias), stride, pad).unwrap();
            let got = conv2d(&x, &p).unwrap();
            let want = conv_oracle(&x, &p);
            assert_eq!(got, want, "shape {:?} k{} s{} p{}", shape, k, stride, pad);
        }
    }

    #[test]
    fn conv_is_linear_without_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let x = random_tensor(&mut rng, [1, 3, 6, 6]);
            let y = random_tensor(&mut rng, [1, 3, 6, 6]);
            let w = random_tensor(&mut rng, [2, 3, 3, 3]);
            let p = Conv2dParams::new(w, None, 1, 1).unwrap();
            let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let lhs = conv2d(
                &Tensor::from_fn([1, 3, 6, 6], |n, c, i, j| a * x.at(n, c, i, j) + b * y.at(n, c, i, j)),
                &p,
            )
            .unwrap();
            let cx = conv2d(&x, &p).unwrap();
            let cy = conv2d(&y, &p).unwrap();
            for i in 0..lhs.len() {
                assert_relative_eq!(
                    lhs.data()[i],
                    a * cx.data()[i] + b * cy.data()[i],
                    max_relative = 1e-10,
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn batchnorm_identity() {
        let x = Tensor::from_fn([1, 2, 3, 3], |_, c, y, x| (c + y + x) as f64);
        // eps must be positive; pick one small enough to be invisible here.
        let p = BatchNormParams::new(vec![1.0; 2], vec![0.0; 2], vec![0.0; 2], vec![1.0; 2], 1e-300)
            .unwrap();
        let y = batchnorm_infer(&x, &p).unwrap();
        for i in 0..x.len() {
            assert_relative_eq!(y.data()[i], x.data()[i], max_relative = 1e-12);
        }
    }

    #[test]
    fn batchnorm_scalar_case() {
        // x=3, mean=1, var=4, gamma=2, beta=1 -> (3-1)/2*2+1 = 3.
        let x = Tensor::new([1, 1, 1, 1], vec![3.0]).unwrap();
        let p = BatchNormParams::new(vec![2.0], vec![1.0], vec![1.0], vec![4.0], 1e-300).unwrap();
        let y = batchnorm_infer(&x, &p).unwrap();
        assert_relative_eq!(y.data()[0], 3.0, max_relative = 1e-12);
    }

    #[test]
    fn batchnorm_rejects_length_mismatch() {
        let x = Tensor::<f64>::zeros([1, 3, 2, 2]);
        let p = BatchNormParams::identity(2, 1e-5);
        assert!(matches!(
            batchnorm_infer(&x, &p),
            Err(TensorError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn activation_fixed_points() {
        assert_eq!(mish(0.0f64), 0.0);
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert_eq!(apply_activation(Activation::Relu, -2.0f64), 0.0);
        assert_relative_eq!(apply_activation(Activation::Leaky, -2.0f64), -0.2);
    }

    #[test]
    fn mish_reference_value() {
        // High-precision evaluation of 1 * tanh(ln(1 + e)).
        assert_relative_eq!(mish(1.0f64), 0.8650983882673103, max_relative = 1e-12);
        assert!((mish(1.0f64) - 0.865098).abs() < 1e-6);
    }

    #[test]
    fn sigmoid_saturates_without_overflow() {
        // sigmoid(40) = 1 - 4.25e-18, which correctly rounds to 1.0 in f64;
        // the largest argument still representable below 1 is around 36.
        let v = sigmoid(40.0f64);
        assert!(v <= 1.0 && v > 1.0 - 1e-15);
        let v36 = sigmoid(36.0f64);
        assert!(v36 < 1.0 && v36 > 1.0 - 1e-15);
        assert!(sigmoid(-745.0f64) >= 0.0);
        assert!(sigmoid(745.0f64) <= 1.0);
    }

    #[test]
    fn mish_approaches_identity() {
        assert!((mish(20.0f64) - 20.0).abs() < 1e-8);
    }

    #[test]
    fn maxpool_constant_is_idempotent() {
        let x = Tensor::from_fn([1, 2, 4, 4], |_, _, _, _| 3.25f64);
        let y = maxpool(&x, 3).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn maxpool_peak_dominates_all_windows() {
        let mut x = Tensor::<f64>::zeros([1, 1, 3, 3]);
        x.set(0, 0, 1, 1, 5.0);
        let y = maxpool(&x, 3).unwrap();
        for v in y.data() {
            assert_eq!(*v, 5.0);
        }
    }

    #[test]
    fn maxpool_same_pad_contract() {
        let x = Tensor::<f64>::zeros([1, 8, 13, 13]);
        let y = maxpool(&x, 13).unwrap();
        assert_eq!(y.shape(), [1, 8, 13, 13]);
    }

    #[test]
    fn maxpool_rejects_even_kernel() {
        let x = Tensor::<f64>::zeros([1, 1, 4, 4]);
        assert!(matches!(
            maxpool(&x, 4),
            Err(TensorError::InvalidParameter(_))
        ));
    }

    #[test]
    fn spp_quadruples_channels() {
        let x = Tensor::<f64>::zeros([1, 512, 13, 13]);
        let y = spp(&x).unwrap();
        assert_eq!(y.shape(), [1, 2048, 13, 13]);
    }

    #[test]
    fn spp_identity_branch_and_pool_dominance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor(&mut rng, [1, 4, 13, 13]);
        let y = spp(&x).unwrap();
        let plane = 13 * 13;
        // Block 0 is the input bit-exactly.
        assert_eq!(&y.data()[..4 * plane], x.data());
        // Every pooled value dominates the corresponding input value.
        for block in 1..4 {
            for c in 0..4 {
                for i in 0..plane {
                    let pooled = y.data()[y.index(0, block * 4 + c, 0, 0) + i];
                    let orig = x.data()[x.index(0, c, 0, 0) + i];
                    assert!(pooled >= orig);
                }
            }
        }
    }

    #[test]
    fn spp_constant_passthrough() {
        let x = Tensor::from_fn([1, 3, 5, 5], |_, _, _, _| -1.5f64);
        let y = spp(&x).unwrap();
        for v in y.data() {
            assert_eq!(*v, -1.5);
        }
    }

    #[test]
    fn upsample_quadrant_blocks() {
        let x = Tensor::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = upsample2x(&x);
        assert_eq!(y.shape(), [1, 1, 4, 4]);
        assert_eq!(
            y.data(),
            &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );
    }

    #[test]
    fn upsample_shape_contract() {
        let x = Tensor::<f64>::zeros([1, 256, 13, 13]);
        assert_eq!(upsample2x(&x).shape(), [1, 256, 26, 26]);
    }

    #[test]
    fn concat_single_is_identity() {
        let x = Tensor::from_fn([1, 2, 3, 3], |_, c, y, x| (c * 9 + y * 3 + x) as f64);
        assert_eq!(concat_channels(&[&x]).unwrap(), x);
    }

    #[test]
    fn concat_preserves_order() {
        let a = Tensor::from_fn([1, 2, 4, 4], |_, _, _, _| 1.0f64);
        let b = Tensor::from_fn([1, 3, 4, 4], |_, _, _, _| 2.0f64);
        let y = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(y.shape(), [1, 5, 4, 4]);
        assert!(y.data()[..2 * 16].iter().all(|v| *v == 1.0));
        assert!(y.data()[2 * 16..].iter().all(|v| *v == 2.0));
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor::<f64>::zeros([1, 1, 4, 4]);
        let b = Tensor::<f64>::zeros([1, 1, 5, 4]);
        assert!(matches!(
            concat_channels(&[&a, &b]),
            Err(TensorError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn ops_are_pure() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor(&mut rng, [1, 2, 6, 6]);
        let w = random_tensor(&mut rng, [2, 2, 3, 3]);
        let p = Conv2dParams::new(w, None, 1, 1).unwrap();
        assert_eq!(conv2d(&x, &p).unwrap(), conv2d(&x, &p).unwrap());
        assert_eq!(spp(&x).unwrap(), spp(&x).unwrap());
        assert_eq!(
            activate(&x, Activation::Mish),
            activate(&x, Activation::Mish)
        );
    }

    proptest! {
        #[test]
        fn mish_is_monotone_for_nonnegative(a in 0.0f64..30.0, d in 0.0f64..5.0) {
            prop_assert!(mish(a + d) >= mish(a));
        }

        #[test]
        fn maxpool_never_below_input(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = rng.gen_range(1..7usize);
            let w = rng.gen_range(1..7usize);
            let x = random_tensor(&mut rng, [1, 2, h, w]);
            let y = maxpool(&x, 3).unwrap();
            for i in 0..x.len() {
                prop_assert!(y.data()[i] >= x.data()[i]);
            }
        }
    }
}
