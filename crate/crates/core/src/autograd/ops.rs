use ndarray::{
    linalg::general_mat_mul, s, Array2, Array4, ArrayD, ArrayView2, ArrayView4, Axis,
    Ix1, Ix4, IxDyn, Zip,
};

use super::conv::{
    channel_major_to_nchw, col2im, conv_transpose_output_size, im2col,
    nchw_to_channel_major, ConvGeometry,
};
use super::{Graph, Scalar, Var};

/// Discriminator scores are clamped to `[SCORE_EPS, 1 - SCORE_EPS]` before
/// any logarithm.
pub const SCORE_EPS: f64 = 1e-7;

/// Variance floor of instance normalization.
pub const INSTANCE_NORM_EPS: f64 = 1e-5;

fn view4<T: Scalar>(a: &ArrayD<T>) -> ArrayView4<'_, T> {
    a.view().into_dimensionality::<Ix4>().expect("rank-4 tensor")
}

fn scalar_of<T: Scalar>(a: &ArrayD<T>) -> T {
    *a.iter().next().expect("scalar gradient")
}

fn scalar_array<T: Scalar>(v: T) -> ArrayD<T> {
    ArrayD::from_elem(IxDyn(&[]), v)
}

/// Clamp applied to every score before a log.
pub(crate) fn clamp_score<T: Scalar>(x: T) -> T {
    let eps = T::from_f64_lossy(SCORE_EPS);
    x.max(eps).min(T::one() - eps)
}

fn in_clamp_range<T: Scalar>(x: T) -> bool {
    let eps = T::from_f64_lossy(SCORE_EPS);
    x >= eps && x <= T::one() - eps
}

fn matmul<T: Scalar>(a: ArrayView2<T>, b: ArrayView2<T>) -> Array2<T> {
    let mut out = Array2::zeros((a.nrows(), b.ncols()));
    general_mat_mul(T::one(), &a, &b, T::zero(), &mut out);
    out
}

/// Row-stochastic weights of an area (box) resample from `src` to `dst`
/// samples along one axis.
pub(crate) fn area_weights<T: Scalar>(src: usize, dst: usize) -> Array2<T> {
    let mut weights = Array2::zeros((dst, src));
    let scale = src as f64 / dst as f64;
    for o in 0..dst {
        let lo = o as f64 * scale;
        let hi = (o + 1) as f64 * scale;
        let first = lo.floor() as usize;
        let last = (hi.ceil() as usize).min(src);
        for i in first..last {
            let overlap = (hi.min((i + 1) as f64) - lo.max(i as f64)).max(0.0);
            if overlap > 0.0 {
                weights[[o, i]] = T::from_f64_lossy(overlap / scale);
            }
        }
    }
    weights
}

impl<T: Scalar> Graph<T> {
    /// 2-D convolution. `w` is `[out, in, k, k]`, `b` is `[out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let xv = view4(self.value(x));
        let wv = view4(self.value(w));
        let (n, c, h, wd) = xv.dim();
        let (cout, cin, k, k2) = wv.dim();
        assert_eq!(k, k2, "square kernels only");
        assert_eq!(c, cin, "conv2d: input has {c} channels, kernel expects {cin}");
        assert_eq!(self.value(b).shape(), &[cout]);
        let geo = ConvGeometry::new(c, h, wd, k, stride, pad);

        let cols = im2col(xv, &geo);
        let w2 = wv
            .into_shape_with_order((cout, geo.col_rows()))
            .expect("contiguous kernel");
        let out2 = matmul(w2, cols.view());
        let mut out = channel_major_to_nchw(out2.view(), n, geo.out_h, geo.out_w);
        let bias = self.value(b).view().into_dimensionality::<Ix1>().expect("bias");
        for (mut plane, &bv) in out.axis_iter_mut(Axis(1)).zip(bias.iter()) {
            plane.mapv_inplace(|v| v + bv);
        }

        self.push(
            out.into_dyn(),
            vec![x, w, b],
            Box::new(move |grad, inputs, _out, needs| {
                let g2 = nchw_to_channel_major(view4(grad));
                let xv = view4(inputs[0]);
                let wv = view4(inputs[1]);
                let w2 = wv
                    .into_shape_with_order((cout, geo.col_rows()))
                    .expect("contiguous kernel");
                let gx = needs[0].then(|| {
                    let gcols = matmul(w2.t(), g2.view());
                    col2im(gcols.view(), n, &geo).into_dyn()
                });
                let gw = needs[1].then(|| {
                    let cols = im2col(xv, &geo);
                    matmul(g2.view(), cols.t())
                        .into_shape_with_order(IxDyn(&[cout, cin, k, k]))
                        .expect("kernel shape")
                });
                let gb = needs[2].then(|| g2.sum_axis(Axis(1)).into_dyn());
                vec![gx, gw, gb]
            }),
        )
    }

    /// Transposed ("fractionally strided") convolution. `w` is
    /// `[in, out, k, k]`, `b` is `[out]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let xv = view4(self.value(x));
        let wv = view4(self.value(w));
        let (n, cin, h, wd) = xv.dim();
        let (win, cout, k, k2) = wv.dim();
        assert_eq!(k, k2, "square kernels only");
        assert_eq!(cin, win, "conv_transpose2d: input has {cin} channels, kernel expects {win}");
        assert_eq!(self.value(b).shape(), &[cout]);
        let oh = conv_transpose_output_size(h, k, stride, pad);
        let ow = conv_transpose_output_size(wd, k, stride, pad);
        // The forward pass is the adjoint of this convolution.
        let geo = ConvGeometry::new(cout, oh, ow, k, stride, pad);
        debug_assert_eq!((geo.out_h, geo.out_w), (h, wd));

        let x2 = nchw_to_channel_major(xv);
        let w2 = wv
            .into_shape_with_order((cin, geo.col_rows()))
            .expect("contiguous kernel");
        let cols = matmul(w2.t(), x2.view());
        let mut out = col2im(cols.view(), n, &geo);
        let bias = self.value(b).view().into_dimensionality::<Ix1>().expect("bias");
        for (mut plane, &bv) in out.axis_iter_mut(Axis(1)).zip(bias.iter()) {
            plane.mapv_inplace(|v| v + bv);
        }

        self.push(
            out.into_dyn(),
            vec![x, w, b],
            Box::new(move |grad, inputs, _out, needs| {
                let gv = view4(grad);
                let gcols = im2col(gv, &geo);
                let wv = view4(inputs[1]);
                let w2 = wv
                    .into_shape_with_order((cin, geo.col_rows()))
                    .expect("contiguous kernel");
                let gx = needs[0].then(|| {
                    let gx2 = matmul(w2, gcols.view());
                    channel_major_to_nchw(gx2.view(), n, h, wd).into_dyn()
                });
                let gw = needs[1].then(|| {
                    let x2 = nchw_to_channel_major(view4(inputs[0]));
                    matmul(x2.view(), gcols.t())
                        .into_shape_with_order(IxDyn(&[cin, cout, k, k]))
                        .expect("kernel shape")
                });
                let gb = needs[2].then(|| gv.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0)).into_dyn());
                vec![gx, gw, gb]
            }),
        )
    }

    /// Per-sample, per-channel normalization over the spatial axes, without
    /// affine parameters.
    pub fn instance_norm(&mut self, x: Var) -> Var {
        let xv = view4(self.value(x));
        let (n, c, h, w) = xv.dim();
        let hw = h * w;
        let eps = T::from_f64_lossy(INSTANCE_NORM_EPS);
        let count = T::from_usize(hw).expect("pixel count");
        let src = xv.as_slice().expect("standard layout");
        let mut out = vec![T::zero(); src.len()];
        let mut inv_std = Vec::with_capacity(n * c);
        for (plane, dst) in src.chunks_exact(hw).zip(out.chunks_exact_mut(hw)) {
            let mean = plane.iter().copied().sum::<T>() / count;
            let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
            let inv = T::one() / (var + eps).sqrt();
            for (d, &v) in dst.iter_mut().zip(plane) {
                *d = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let out = ArrayD::from_shape_vec(IxDyn(&[n, c, h, w]), out).expect("shape");

        self.push(
            out,
            vec![x],
            Box::new(move |grad, _inputs, out, _needs| {
                let g = grad.as_slice().expect("standard layout");
                let y = out.as_slice().expect("standard layout");
                let mut gx = vec![T::zero(); g.len()];
                for (((gp, yp), dst), &inv) in g
                    .chunks_exact(hw)
                    .zip(y.chunks_exact(hw))
                    .zip(gx.chunks_exact_mut(hw))
                    .zip(inv_std.iter())
                {
                    let mean_g = gp.iter().copied().sum::<T>() / count;
                    let mean_gy = gp.iter().zip(yp).map(|(&a, &b)| a * b).sum::<T>() / count;
                    for ((d, &gv), &yv) in dst.iter_mut().zip(gp).zip(yp) {
                        *d = inv * (gv - mean_g - yv * mean_gy);
                    }
                }
                vec![Some(ArrayD::from_shape_vec(IxDyn(&[n, c, h, w]), gx).expect("shape"))]
            }),
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| v.max(T::zero()));
        self.push(
            out,
            vec![x],
            Box::new(|grad, _inputs, out, _needs| {
                let mut g = grad.clone();
                Zip::from(&mut g).and(out).for_each(|g, &y| {
                    if y <= T::zero() {
                        *g = T::zero();
                    }
                });
                vec![Some(g)]
            }),
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| T::one() / (T::one() + (-v).exp()));
        self.push(
            out,
            vec![x],
            Box::new(|grad, _inputs, out, _needs| {
                let mut g = grad.clone();
                Zip::from(&mut g).and(out).for_each(|g, &y| *g = *g * y * (T::one() - y));
                vec![Some(g)]
            }),
        )
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| v.tanh());
        self.push(
            out,
            vec![x],
            Box::new(|grad, _inputs, out, _needs| {
                let mut g = grad.clone();
                Zip::from(&mut g).and(out).for_each(|g, &y| *g = *g * (T::one() - y * y));
                vec![Some(g)]
            }),
        )
    }

    /// Concatenation along the channel axis of two `[n, c, h, w]` tensors.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let av = view4(self.value(a));
        let bv = view4(self.value(b));
        let ca = av.dim().1;
        let out = ndarray::concatenate(Axis(1), &[av, bv])
            .expect("matching batch and spatial dims")
            .into_dyn();
        self.push(
            out,
            vec![a, b],
            Box::new(move |grad, _inputs, _out, needs| {
                let g = view4(grad);
                vec![
                    needs[0].then(|| g.slice(s![.., ..ca, .., ..]).to_owned().into_dyn()),
                    needs[1].then(|| g.slice(s![.., ca.., .., ..]).to_owned().into_dyn()),
                ]
            }),
        )
    }

    /// Channels `start..start + len` of a `[n, c, h, w]` tensor.
    pub fn narrow_channels(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = view4(self.value(x));
        let shape = xv.shape().to_vec();
        assert!(start + len <= shape[1]);
        let out = xv.slice(s![.., start..start + len, .., ..]).to_owned().into_dyn();
        self.push(
            out,
            vec![x],
            Box::new(move |grad, _inputs, _out, _needs| {
                let mut g = Array4::zeros((shape[0], shape[1], shape[2], shape[3]));
                g.slice_mut(s![.., start..start + len, .., ..]).assign(&view4(grad));
                vec![Some(g.into_dyn())]
            }),
        )
    }

    /// Overwrites the trailing channels of `activation` with `copies`.
    ///
    /// Gradient into the overwritten activation channels is zero; the copies
    /// receive exactly the gradient of the slots they occupy.
    pub fn overwrite_trailing_channels(&mut self, activation: Var, copies: Var) -> Var {
        let av = view4(self.value(activation));
        let cv = view4(self.value(copies));
        let c = av.dim().1;
        let k = cv.dim().1;
        assert!(c > k, "activation needs more than {k} channels, has {c}");
        assert_eq!((av.dim().0, av.dim().2, av.dim().3), (cv.dim().0, cv.dim().2, cv.dim().3));
        let mut out = av.to_owned();
        out.slice_mut(s![.., c - k.., .., ..]).assign(&cv);
        self.push(
            out.into_dyn(),
            vec![activation, copies],
            Box::new(move |grad, _inputs, _out, needs| {
                let g = view4(grad);
                let ga = needs[0].then(|| {
                    let mut ga = g.to_owned();
                    ga.slice_mut(s![.., c - k.., .., ..]).fill(T::zero());
                    ga.into_dyn()
                });
                let gc = needs[1].then(|| g.slice(s![.., c - k.., .., ..]).to_owned().into_dyn());
                vec![ga, gc]
            }),
        )
    }

    /// Area-average resample of the spatial axes to `out_h x out_w`.
    pub fn resize_area(&mut self, x: Var, out_h: usize, out_w: usize) -> Var {
        let xv = view4(self.value(x));
        let (n, c, h, w) = xv.dim();
        if (h, w) == (out_h, out_w) {
            return x;
        }
        let out = resize_area_values(xv, out_h, out_w);
        let rows: Array2<T> = area_weights(h, out_h);
        let cols: Array2<T> = area_weights(w, out_w);
        self.push(
            out.into_dyn(),
            vec![x],
            Box::new(move |grad, _inputs, _out, _needs| {
                let g = view4(grad);
                let mut gx = Array4::zeros((n, c, h, w));
                for s in 0..n {
                    for ch in 0..c {
                        let tmp = matmul(rows.t(), g.slice(s![s, ch, .., ..]));
                        gx.slice_mut(s![s, ch, .., ..]).assign(&matmul(tmp.view(), cols.view()));
                    }
                }
                vec![Some(gx.into_dyn())]
            }),
        )
    }

    /// `alpha * color + (1 - alpha) * base`, with the one-channel `alpha`
    /// broadcast over the channels of `color` and `base`.
    pub fn alpha_blend(&mut self, alpha: Var, color: Var, base: Var) -> Var {
        let out = blend_values(
            view4(self.value(alpha)),
            view4(self.value(color)),
            view4(self.value(base)),
        );
        self.push(
            out.into_dyn(),
            vec![alpha, color, base],
            Box::new(|grad, inputs, _out, needs| {
                let g = view4(grad);
                let a = view4(inputs[0]);
                let c = view4(inputs[1]);
                let b = view4(inputs[2]);
                let ga = needs[0].then(|| {
                    let mut ga = Array4::zeros(a.raw_dim());
                    for ch in 0..c.dim().1 {
                        let mut slot = ga.slice_mut(s![.., 0, .., ..]);
                        Zip::from(&mut slot)
                            .and(g.slice(s![.., ch, .., ..]))
                            .and(c.slice(s![.., ch, .., ..]))
                            .and(b.slice(s![.., ch, .., ..]))
                            .for_each(|acc, &gv, &cv, &bv| *acc = *acc + gv * (cv - bv));
                    }
                    ga.into_dyn()
                });
                let gc = needs[1].then(|| (&g * &a.broadcast(g.raw_dim()).expect("broadcast")).into_dyn());
                let gb = needs[2].then(|| {
                    let one_minus = a.mapv(|v| T::one() - v);
                    (&g * &one_minus.broadcast(g.raw_dim()).expect("broadcast")).into_dyn()
                });
                vec![ga, gc, gb]
            }),
        )
    }

    /// `-mean(ln(clamp(x)))`.
    pub fn neg_mean_log(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let count = T::from_usize(xv.len()).expect("count");
        let loss = -xv.iter().map(|&v| clamp_score(v).ln()).sum::<T>() / count;
        self.push(
            scalar_array(loss),
            vec![x],
            Box::new(move |grad, inputs, _out, _needs| {
                let g = scalar_of(grad);
                let gx = inputs[0].mapv(|v| {
                    if in_clamp_range(v) {
                        -g / (count * v)
                    } else {
                        T::zero()
                    }
                });
                vec![Some(gx)]
            }),
        )
    }

    /// `-mean(ln(1 - clamp(x)))`.
    pub fn neg_mean_log1m(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let count = T::from_usize(xv.len()).expect("count");
        let loss = -xv.iter().map(|&v| (T::one() - clamp_score(v)).ln()).sum::<T>() / count;
        self.push(
            scalar_array(loss),
            vec![x],
            Box::new(move |grad, inputs, _out, _needs| {
                let g = scalar_of(grad);
                let gx = inputs[0].mapv(|v| {
                    if in_clamp_range(v) {
                        g / (count * (T::one() - v))
                    } else {
                        T::zero()
                    }
                });
                vec![Some(gx)]
            }),
        )
    }

    /// `mean(|x|)`.
    pub fn mean_abs(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let count = T::from_usize(xv.len()).expect("count");
        let loss = xv.iter().map(|v| v.abs()).sum::<T>() / count;
        self.push(
            scalar_array(loss),
            vec![x],
            Box::new(move |grad, inputs, _out, _needs| {
                let g = scalar_of(grad) / count;
                vec![Some(inputs[0].mapv(|v| sign(v) * g))]
            }),
        )
    }

    /// `mean(|a - b|)`.
    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.shape(), bv.shape(), "mean_abs_diff shape mismatch");
        let count = T::from_usize(av.len()).expect("count");
        let loss = av.iter().zip(bv.iter()).map(|(&x, &y)| (x - y).abs()).sum::<T>() / count;
        self.push(
            scalar_array(loss),
            vec![a, b],
            Box::new(move |grad, inputs, _out, needs| {
                let g = scalar_of(grad) / count;
                let mut d = inputs[0] - inputs[1];
                d.mapv_inplace(|v| sign(v) * g);
                let gb = needs[1].then(|| d.mapv(|v| -v));
                vec![needs[0].then_some(d), gb]
            }),
        )
    }

    /// `sum(x * weights)` for a constant weight tensor.
    pub fn weighted_sum(&mut self, x: Var, weights: ArrayD<T>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.shape(), weights.shape());
        let total = (xv * &weights).sum();
        self.push(
            scalar_array(total),
            vec![x],
            Box::new(move |grad, _inputs, _out, _needs| {
                vec![Some(weights.mapv(|w| w * scalar_of(grad)))]
            }),
        )
    }

    /// `sum_k coeff_k * term_k` over scalar nodes.
    pub fn linear_combination(&mut self, terms: &[(Var, T)]) -> Var {
        let total = terms
            .iter()
            .map(|&(v, c)| c * self.scalar(v))
            .fold(T::zero(), |a, b| a + b);
        let coeffs: Vec<T> = terms.iter().map(|&(_, c)| c).collect();
        let shapes: Vec<Vec<usize>> = terms.iter().map(|&(v, _)| self.value(v).shape().to_vec()).collect();
        self.push(
            scalar_array(total),
            terms.iter().map(|&(v, _)| v).collect(),
            Box::new(move |grad, _inputs, _out, _needs| {
                let g = scalar_of(grad);
                coeffs
                    .iter()
                    .zip(&shapes)
                    .map(|(&c, shape)| Some(ArrayD::from_elem(IxDyn(shape), c * g)))
                    .collect()
            }),
        )
    }
}

fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Elementwise `alpha * color + (1 - alpha) * base`.
pub(crate) fn blend_values<T: Scalar>(
    alpha: ArrayView4<T>,
    color: ArrayView4<T>,
    base: ArrayView4<T>,
) -> Array4<T> {
    assert_eq!(alpha.dim().1, 1, "alpha must have one channel");
    assert_eq!(color.dim(), base.dim());
    let mut out = Array4::zeros(color.raw_dim());
    for ch in 0..color.dim().1 {
        Zip::from(out.slice_mut(s![.., ch, .., ..]))
            .and(alpha.slice(s![.., 0, .., ..]))
            .and(color.slice(s![.., ch, .., ..]))
            .and(base.slice(s![.., ch, .., ..]))
            .for_each(|o, &a, &c, &b| *o = a * c + (T::one() - a) * b);
    }
    out
}

/// Area resample of a batch without recording it, same weights as
/// [`Graph::resize_area`].
pub(crate) fn resize_area_values<T: Scalar>(x: ArrayView4<T>, out_h: usize, out_w: usize) -> Array4<T> {
    let (n, c, h, w) = x.dim();
    if (h, w) == (out_h, out_w) {
        return x.to_owned();
    }
    let rows: Array2<T> = area_weights(h, out_h);
    let cols: Array2<T> = area_weights(w, out_w);
    let mut out = Array4::zeros((n, c, out_h, out_w));
    for s in 0..n {
        for ch in 0..c {
            let tmp = matmul(rows.view(), x.slice(s![s, ch, .., ..]));
            out.slice_mut(s![s, ch, .., ..]).assign(&matmul(tmp.view(), cols.t()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn area_weights_are_row_stochastic() {
        for &(src, dst) in &[(8, 4), (3, 2), (48, 3), (5, 5), (7, 3)] {
            let w: Array2<f64> = area_weights(src, dst);
            for row in w.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12, "{src}->{dst}");
            }
        }
        let w: Array2<f64> = area_weights(4, 2);
        assert_eq!(w.row(0).to_vec(), vec![0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn conv_transpose_is_adjoint_of_conv() {
        // <conv(x; w), y> == <x, conv_t(y; w)> when biases are zero.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Array::from_shape_fn((2, 3, 8, 6), |_| rng.gen_range(-1.0f64..1.0));
        let w = Array::from_shape_fn((5, 3, 4, 4), |_| rng.gen_range(-1.0f64..1.0));
        let y = Array::from_shape_fn((2, 5, 4, 3), |_| rng.gen_range(-1.0f64..1.0));
        let mut g = Graph::<f64>::new();
        let xv = g.constant(x.clone().into_dyn());
        let wv = g.constant(w.clone().into_dyn());
        let b5 = g.constant(ArrayD::zeros(IxDyn(&[5])));
        let b3 = g.constant(ArrayD::zeros(IxDyn(&[3])));
        let yv = g.constant(y.clone().into_dyn());
        let conv = g.conv2d(xv, wv, b5, 2, 1);
        let convt = g.conv_transpose2d(yv, wv, b3, 2, 1);
        assert_eq!(g.value(convt).shape(), x.shape());
        let lhs = (g.value(conv) * &y.into_dyn()).sum();
        let rhs = (g.value(convt) * &x.into_dyn()).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn instance_norm_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array::from_shape_fn((2, 3, 5, 4), |_| rng.gen_range(-3.0f64..5.0));
        let mut g = Graph::<f64>::new();
        let xv = g.constant(x.into_dyn());
        let y = g.instance_norm(xv);
        let yv = view4(g.value(y));
        for s in 0..2 {
            for c in 0..3 {
                let plane = yv.slice(s![s, c, .., ..]);
                assert!(plane.mean().unwrap().abs() < 1e-12);
                let var = plane.mapv(|v| v * v).mean().unwrap();
                assert!((var - 1.0).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn overwrite_replaces_only_trailing_channels() {
        let a = Array::from_shape_fn((1, 8, 2, 2), |(_, c, y, x)| (c * 4 + y * 2 + x) as f32);
        let copies = Array::from_elem((1, 6, 2, 2), -1.0f32);
        let mut g = Graph::<f32>::new();
        let av = g.constant(a.clone().into_dyn());
        let cv = g.constant(copies.into_dyn());
        let out = g.overwrite_trailing_channels(av, cv);
        let ov = view4(g.value(out));
        assert_eq!(ov.slice(s![.., ..2, .., ..]), a.slice(s![.., ..2, .., ..]));
        assert!(ov.slice(s![.., 2.., .., ..]).iter().all(|&v| v == -1.0));
    }

    #[test]
    fn clamped_logs_stay_finite() {
        let mut g = Graph::<f32>::new();
        let ones = g.constant(ArrayD::from_elem(IxDyn(&[2, 2]), 1.0f32));
        let zeros = g.constant(ArrayD::from_elem(IxDyn(&[2, 2]), 0.0f32));
        let a = g.neg_mean_log(zeros);
        let b = g.neg_mean_log1m(ones);
        assert!(g.scalar(a).is_finite() && g.scalar(b).is_finite());
        let c = g.neg_mean_log(ones);
        assert!(g.scalar(c) >= 0.0 && g.scalar(c) < 1e-6);
    }
}
