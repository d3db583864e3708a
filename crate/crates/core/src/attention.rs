//! Coordinate attention block.
//!
//! The block factorizes spatial attention into per-row and per-column gates:
//! directional average pooling produces one descriptor per row and per
//! column, a shared 1x1 conv + batch norm + ReLU transform compresses them,
//! and two 1x1 convs followed by sigmoids expand them back into gates that
//! rescale the input as `y[n,c,i,j] = x[n,c,i,j] * gh[n,c,i] * gw[n,c,j]`.
//!
//! The backward pass is the exact adjoint of the forward computation and is
//! validated against central finite differences in the tests.

use crate::scalar::Real;
use crate::tensor::{
    activate, batchnorm_infer, conv2d, Activation, BatchNormParams, Conv2dParams, Tensor,
    TensorError,
};
use rand::Rng;

/// Channel count of the compressed descriptor: max(1, floor(c / reduction)).
pub fn reduced_channels(c: usize, reduction: usize) -> usize {
    (c / reduction).max(1)
}

/// Learnable parameter count of one block over `c` channels.
///
/// Counts the compress conv (weight + bias), the batch-norm gamma/beta pair,
/// and the two expand convs (weight + bias each); running statistics are
/// excluded.
pub fn ca_param_count(c: usize, reduction: usize) -> usize {
    let m = reduced_channels(c, reduction);
    (c * m + m) + 2 * m + 2 * (m * c + c)
}

/// Learnable weights of one coordinate attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordAttentionParams<R: Real> {
    /// Compress conv, 1x1, c -> m.
    pub f1: Conv2dParams<R>,
    /// Batch norm over the m compressed channels.
    pub bn: BatchNormParams<R>,
    /// Row-gate expand conv, 1x1, m -> c.
    pub fh: Conv2dParams<R>,
    /// Column-gate expand conv, 1x1, m -> c.
    pub fw: Conv2dParams<R>,
    pub reduction: usize,
}

impl<R: Real> CoordAttentionParams<R> {
    pub fn new(
        f1: Conv2dParams<R>,
        bn: BatchNormParams<R>,
        fh: Conv2dParams<R>,
        fw: Conv2dParams<R>,
        reduction: usize,
    ) -> Result<Self, TensorError> {
        if reduction == 0 {
            return Err(TensorError::InvalidParameter(
                "reduction must be positive".into(),
            ));
        }
        let c = f1.in_channels();
        let m = reduced_channels(c, reduction);
        for (name, conv) in [("f1", &f1), ("fh", &fh), ("fw", &fw)] {
            if conv.kernel() != (1, 1) || conv.stride != 1 || conv.padding != 0 {
                return Err(TensorError::InvalidParameter(format!(
                    "{name} must be a 1x1 stride-1 unpadded conv"
                )));
            }
        }
        if f1.out_channels() != m || bn.channels() != m {
            return Err(TensorError::ShapeMismatch(format!(
                "compress path must have {} channels (f1 out {}, bn {})",
                m,
                f1.out_channels(),
                bn.channels()
            )));
        }
        if fh.in_channels() != m || fw.in_channels() != m || fh.out_channels() != c
            || fw.out_channels() != c
        {
            return Err(TensorError::ShapeMismatch(
                "expand convs must map m -> c".into(),
            ));
        }
        Ok(Self { f1, bn, fh, fw, reduction })
    }

    /// Input channel count this block applies to.
    pub fn channels(&self) -> usize {
        self.f1.in_channels()
    }

    pub fn reduced(&self) -> usize {
        self.f1.out_channels()
    }

    /// He-style fan-in uniform initialization; biases start at zero and the
    /// batch norm at identity. Random draws happen in f64 so every scalar
    /// type sees the same stream.
    pub fn init(c: usize, reduction: usize, rng: &mut impl Rng) -> Self {
        let m = reduced_channels(c, reduction);
        let f1 = Conv2dParams::new(he_uniform(rng, [m, c, 1, 1]), Some(vec![R::zero(); m]), 1, 0)
            .expect("valid f1");
        let bn = BatchNormParams::identity(m, R::from_f64(1e-5));
        let fh = Conv2dParams::new(he_uniform(rng, [c, m, 1, 1]), Some(vec![R::zero(); c]), 1, 0)
            .expect("valid fh");
        let fw = Conv2dParams::new(he_uniform(rng, [c, m, 1, 1]), Some(vec![R::zero(); c]), 1, 0)
            .expect("valid fw");
        Self { f1, bn, fh, fw, reduction }
    }

    /// Learnable scalars in a fixed order:
    /// f1 weight, f1 bias, bn gamma, bn beta, fh weight, fh bias, fw weight,
    /// fw bias. Used by the gradient checks and the weight audit.
    pub fn flatten_learnable(&self) -> Vec<R> {
        let mut out = Vec::new();
        out.extend_from_slice(self.f1.weights.data());
        out.extend(self.f1.bias.iter().flatten().copied());
        out.extend_from_slice(&self.bn.gamma);
        out.extend_from_slice(&self.bn.beta);
        out.extend_from_slice(self.fh.weights.data());
        out.extend(self.fh.bias.iter().flatten().copied());
        out.extend_from_slice(self.fw.weights.data());
        out.extend(self.fw.bias.iter().flatten().copied());
        out
    }

    /// Rebuilds parameters from the `flatten_learnable` layout.
    pub fn unflatten_learnable(&self, flat: &[R]) -> Self {
        let mut p = self.clone();
        let mut pos = 0;
        let mut take = |n: usize| {
            let s = &flat[pos..pos + n];
            pos += n;
            s.to_vec()
        };
        let wlen = p.f1.weights.len();
        p.f1.weights = Tensor::from_parts(p.f1.weights.shape(), take(wlen));
        if let Some(b) = &mut p.f1.bias {
            *b = take(b.len());
        }
        p.bn.gamma = take(p.bn.gamma.len());
        p.bn.beta = take(p.bn.beta.len());
        let wlen = p.fh.weights.len();
        p.fh.weights = Tensor::from_parts(p.fh.weights.shape(), take(wlen));
        if let Some(b) = &mut p.fh.bias {
            *b = take(b.len());
        }
        let wlen = p.fw.weights.len();
        p.fw.weights = Tensor::from_parts(p.fw.weights.shape(), take(wlen));
        if let Some(b) = &mut p.fw.bias {
            *b = take(b.len());
        }
        assert_eq!(pos, flat.len(), "flat parameter slice has wrong length");
        p
    }
}

pub(crate) fn he_uniform<R: Real>(rng: &mut impl Rng, shape: [usize; 4]) -> Tensor<R> {
    let fan_in = (shape[1] * shape[2] * shape[3]).max(1);
    let bound = (6.0 / fan_in as f64).sqrt();
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| R::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::from_parts(shape, data)
}

/// Gradients mirroring [`CoordAttentionParams`] plus the input gradient.
#[derive(Debug, Clone)]
pub struct CoordAttentionGrads<R: Real> {
    pub d_input: Tensor<R>,
    pub d_f1_weights: Tensor<R>,
    pub d_f1_bias: Option<Vec<R>>,
    pub d_bn_gamma: Vec<R>,
    pub d_bn_beta: Vec<R>,
    pub d_fh_weights: Tensor<R>,
    pub d_fh_bias: Option<Vec<R>>,
    pub d_fw_weights: Tensor<R>,
    pub d_fw_bias: Option<Vec<R>>,
}

impl<R: Real> CoordAttentionGrads<R> {
    /// Parameter gradients in the `flatten_learnable` order.
    pub fn flatten_params(&self) -> Vec<R> {
        let mut out = Vec::new();
        out.extend_from_slice(self.d_f1_weights.data());
        out.extend(self.d_f1_bias.iter().flatten().copied());
        out.extend_from_slice(&self.d_bn_gamma);
        out.extend_from_slice(&self.d_bn_beta);
        out.extend_from_slice(self.d_fh_weights.data());
        out.extend(self.d_fh_bias.iter().flatten().copied());
        out.extend_from_slice(self.d_fw_weights.data());
        out.extend(self.d_fw_bias.iter().flatten().copied());
        out
    }
}

/// Forward record consumed by [`ca_backward`].
#[derive(Debug, Clone)]
pub struct CaCache<R: Real> {
    params: CoordAttentionParams<R>,
    x: Tensor<R>,
    /// Stacked descriptor fed to f1: (n, c, h + w, 1).
    cat: Tensor<R>,
    /// f1 output, before batch norm.
    z1: Tensor<R>,
    /// Post-ReLU compressed descriptor.
    f: Tensor<R>,
    /// Row gates, (n, c, h, 1).
    gh: Tensor<R>,
    /// Column gates, (n, c, w, 1) - indexed by column.
    gw: Tensor<R>,
}

impl<R: Real> CaCache<R> {
    pub fn output_shape(&self) -> [usize; 4] {
        self.x.shape()
    }
    pub fn row_gates(&self) -> &Tensor<R> {
        &self.gh
    }
    pub fn column_gates(&self) -> &Tensor<R> {
        &self.gw
    }
}

/// Directional average pooling.
///
/// `qh[n,c,h,0]` is the mean over the row `h`; `qw[n,c,0,w]` is the mean
/// over the column `w`.
pub fn directional_pool<R: Real>(x: &Tensor<R>) -> (Tensor<R>, Tensor<R>) {
    let [n, c, h, w] = x.shape();
    let inv_w = R::from_f64(1.0 / w as f64);
    let inv_h = R::from_f64(1.0 / h as f64);
    let mut qh = Tensor::zeros([n, c, h, 1]);
    let mut qw = Tensor::zeros([n, c, 1, w]);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h {
                let base = x.index(b, ch, y, 0);
                let mut s = R::zero();
                for i in 0..w {
                    s += x.data()[base + i];
                }
                qh.set(b, ch, y, 0, s * inv_w);
            }
            for xx in 0..w {
                let mut s = R::zero();
                for j in 0..h {
                    s += x.at(b, ch, j, xx);
                }
                qw.set(b, ch, 0, xx, s * inv_h);
            }
        }
    }
    (qh, qw)
}

/// Stacks qh (n,c,h,1) over the transposed qw (n,c,1,w) into (n,c,h+w,1).
fn stack_descriptors<R: Real>(qh: &Tensor<R>, qw: &Tensor<R>) -> Tensor<R> {
    let [n, c, h, _] = qh.shape();
    let w = qw.width();
    Tensor::from_fn([n, c, h + w, 1], |b, ch, s, _| {
        if s < h {
            qh.at(b, ch, s, 0)
        } else {
            qw.at(b, ch, 0, s - h)
        }
    })
}

fn split_rows<R: Real>(t: &Tensor<R>, h: usize) -> (Tensor<R>, Tensor<R>) {
    let [n, c, total, _] = t.shape();
    let w = total - h;
    let top = Tensor::from_fn([n, c, h, 1], |b, ch, s, _| t.at(b, ch, s, 0));
    let bottom = Tensor::from_fn([n, c, w, 1], |b, ch, s, _| t.at(b, ch, h + s, 0));
    (top, bottom)
}

/// Coordinate attention forward pass. Returns the gated map together with
/// the record needed by [`ca_backward`].
pub fn ca_forward<R: Real>(
    x: &Tensor<R>,
    p: &CoordAttentionParams<R>,
) -> Result<(Tensor<R>, CaCache<R>), TensorError> {
    let [n, c, h, w] = x.shape();
    if c != p.channels() {
        return Err(TensorError::ShapeMismatch(format!(
            "coordinate attention expects {} channels, input has {}",
            p.channels(),
            c
        )));
    }
    let (qh, qw) = directional_pool(x);
    let cat = stack_descriptors(&qh, &qw);
    let z1 = conv2d(&cat, &p.f1)?;
    let zbn = batchnorm_infer(&z1, &p.bn)?;
    let f = activate(&zbn, Activation::Relu);
    let (f_h, f_w) = split_rows(&f, h);
    let gh = activate(&conv2d(&f_h, &p.fh)?, Activation::Sigmoid);
    let gw = activate(&conv2d(&f_w, &p.fw)?, Activation::Sigmoid);

    let mut y = Tensor::zeros([n, c, h, w]);
    for b in 0..n {
        for ch in 0..c {
            for i in 0..h {
                let g_row = gh.at(b, ch, i, 0);
                let base = x.index(b, ch, i, 0);
                let obase = y.index(b, ch, i, 0);
                for j in 0..w {
                    let v = x.data()[base + j] * g_row * gw.at(b, ch, j, 0);
                    y.data_mut()[obase + j] = v;
                }
            }
        }
    }
    let cache = CaCache {
        params: p.clone(),
        x: x.clone(),
        cat,
        z1,
        f,
        gh,
        gw,
    };
    Ok((y, cache))
}

/// Adjoint of a 1x1 conv on (n, cin, s, 1) maps.
/// Returns (d_input, d_weights, d_bias).
fn conv1x1_backward<R: Real>(
    input: &Tensor<R>,
    weights: &Tensor<R>,
    has_bias: bool,
    d_out: &Tensor<R>,
) -> (Tensor<R>, Tensor<R>, Option<Vec<R>>) {
    let [n, cin, s, _] = input.shape();
    let cout = weights.batch();
    let mut d_in = Tensor::zeros([n, cin, s, 1]);
    let mut d_w = Tensor::zeros(weights.shape());
    let mut d_b = if has_bias { Some(vec![R::zero(); cout]) } else { None };
    for b in 0..n {
        for o in 0..cout {
            for t in 0..s {
                let g = d_out.at(b, o, t, 0);
                if let Some(db) = &mut d_b {
                    db[o] += g;
                }
                for i in 0..cin {
                    let xi = input.at(b, i, t, 0);
                    let widx = d_w.index(o, i, 0, 0);
                    d_w.data_mut()[widx] += g * xi;
                    let iidx = d_in.index(b, i, t, 0);
                    d_in.data_mut()[iidx] += g * weights.at(o, i, 0, 0);
                }
            }
        }
    }
    (d_in, d_w, d_b)
}

/// Analytic backward pass for the loss convention L = <dy, y>.
pub fn ca_backward<R: Real>(
    cache: &CaCache<R>,
    dy: &Tensor<R>,
) -> Result<CoordAttentionGrads<R>, TensorError> {
    if dy.shape() != cache.x.shape() {
        return Err(TensorError::ShapeMismatch(format!(
            "dy shape {:?} does not match forward output {:?}",
            dy.shape(),
            cache.x.shape()
        )));
    }
    let p = &cache.params;
    let [n, c, h, w] = cache.x.shape();

    // Gate-product rule for y = x * gh * gw.
    let mut d_x = Tensor::zeros([n, c, h, w]);
    let mut d_gh = Tensor::zeros([n, c, h, 1]);
    let mut d_gw = Tensor::zeros([n, c, w, 1]);
    for b in 0..n {
        for ch in 0..c {
            for i in 0..h {
                let ghv = cache.gh.at(b, ch, i, 0);
                let mut row_acc = R::zero();
                for j in 0..w {
                    let g = dy.at(b, ch, i, j);
                    let xv = cache.x.at(b, ch, i, j);
                    let gwv = cache.gw.at(b, ch, j, 0);
                    d_x.set(b, ch, i, j, g * ghv * gwv);
                    row_acc += g * xv * gwv;
                    let idx = d_gw.index(b, ch, j, 0);
                    d_gw.data_mut()[idx] += g * xv * ghv;
                }
                d_gh.set(b, ch, i, 0, row_acc);
            }
        }
    }

    // Sigmoid adjoint from the post-activation values.
    let sig_back = |g: &Tensor<R>, dg: &Tensor<R>| {
        Tensor::from_parts(
            g.shape(),
            g.data()
                .iter()
                .zip(dg.data())
                .map(|(&gv, &dv)| dv * gv * (R::one() - gv))
                .collect(),
        )
    };
    let d_gh_pre = sig_back(&cache.gh, &d_gh);
    let d_gw_pre = sig_back(&cache.gw, &d_gw);

    let (f_h, f_w) = split_rows(&cache.f, h);
    let (d_fh_in, d_fh_w, d_fh_b) =
        conv1x1_backward(&f_h, &p.fh.weights, p.fh.bias.is_some(), &d_gh_pre);
    let (d_fw_in, d_fw_w, d_fw_b) =
        conv1x1_backward(&f_w, &p.fw.weights, p.fw.bias.is_some(), &d_gw_pre);

    // Re-stack the split gradients and run the ReLU mask.
    let m = p.reduced();
    let mut d_f = Tensor::zeros([n, m, h + w, 1]);
    for b in 0..n {
        for ch in 0..m {
            for s in 0..h {
                d_f.set(b, ch, s, 0, d_fh_in.at(b, ch, s, 0));
            }
            for s in 0..w {
                d_f.set(b, ch, h + s, 0, d_fw_in.at(b, ch, s, 0));
            }
        }
    }
    let d_zbn = Tensor::from_parts(
        d_f.shape(),
        d_f.data()
            .iter()
            .zip(cache.f.data())
            .map(|(&d, &fv)| if fv > R::zero() { d } else { R::zero() })
            .collect(),
    );

    // Inference batch norm adjoint: only gamma and beta are learnable.
    let mut d_gamma = vec![R::zero(); m];
    let mut d_beta = vec![R::zero(); m];
    let mut d_z1 = Tensor::zeros([n, m, h + w, 1]);
    for b in 0..n {
        for ch in 0..m {
            let inv_std = R::one() / (p.bn.running_var[ch] + p.bn.epsilon).sqrt();
            for s in 0..h + w {
                let d = d_zbn.at(b, ch, s, 0);
                let xhat = (cache.z1.at(b, ch, s, 0) - p.bn.running_mean[ch]) * inv_std;
                d_gamma[ch] += d * xhat;
                d_beta[ch] += d;
                d_z1.set(b, ch, s, 0, d * p.bn.gamma[ch] * inv_std);
            }
        }
    }

    let (d_cat, d_f1_w, d_f1_b) =
        conv1x1_backward(&cache.cat, &p.f1.weights, p.f1.bias.is_some(), &d_z1);

    // Pooling adjoint: each row mean spreads evenly over its row, each
    // column mean over its column.
    let inv_w = R::from_f64(1.0 / w as f64);
    let inv_h = R::from_f64(1.0 / h as f64);
    for b in 0..n {
        for ch in 0..c {
            for i in 0..h {
                let dqh = d_cat.at(b, ch, i, 0) * inv_w;
                for j in 0..w {
                    let idx = d_x.index(b, ch, i, j);
                    d_x.data_mut()[idx] += dqh;
                }
            }
            for j in 0..w {
                let dqw = d_cat.at(b, ch, h + j, 0) * inv_h;
                for i in 0..h {
                    let idx = d_x.index(b, ch, i, j);
                    d_x.data_mut()[idx] += dqw;
                }
            }
        }
    }

    Ok(CoordAttentionGrads {
        d_input: d_x,
        d_f1_weights: d_f1_w,
        d_f1_bias: d_f1_b,
        d_bn_gamma: d_gamma,
        d_bn_beta: d_beta,
        d_fh_weights: d_fh_w,
        d_fh_bias: d_fh_b,
        d_fw_weights: d_fw_w,
        d_fw_bias: d_fw_b,
    })
}
