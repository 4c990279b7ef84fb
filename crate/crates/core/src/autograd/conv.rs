//! im2col / col2im kernels and the layout shuffles around them.
//!
//! Column matrices have one row per `(channel, ky, kx)` tap and one column
//! per `(sample, oy, ox)` output site, so a whole batch turns into a single
//! GEMM.

use ndarray::{Array2, Array4, ArrayView2, ArrayView4};

use super::Scalar;

/// Spatial bookkeeping of a square-kernel convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    /// Geometry of a convolution over a `channels x in_h x in_w` input.
    ///
    /// Panics when the padded input is smaller than the kernel.
    pub fn new(
        channels: usize,
        in_h: usize,
        in_w: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        assert!(stride >= 1 && kernel >= 1);
        assert!(
            in_h + 2 * pad >= kernel && in_w + 2 * pad >= kernel,
            "kernel {kernel} larger than padded input {in_h}x{in_w} (pad {pad})"
        );
        ConvGeometry {
            channels,
            in_h,
            in_w,
            kernel,
            stride,
            pad,
            out_h: conv_output_size(in_h, kernel, stride, pad),
            out_w: conv_output_size(in_w, kernel, stride, pad),
        }
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn out_sites(&self) -> usize {
        self.out_h * self.out_w
    }
}

pub fn conv_output_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

pub fn conv_transpose_output_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input - 1) * stride + kernel - 2 * pad
}

/// Unfolds `x` (`[n, channels, in_h, in_w]`) into `[col_rows, n * out_sites]`.
pub fn im2col<T: Scalar>(x: ArrayView4<T>, geo: &ConvGeometry) -> Array2<T> {
    let (n, c, h, w) = x.dim();
    assert_eq!((c, h, w), (geo.channels, geo.in_h, geo.in_w));
    let x = x.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    let sites = geo.out_sites();
    let ncols = n * sites;
    let k = geo.kernel;
    let mut cols = vec![T::zero(); geo.col_rows() * ncols];
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for s in 0..n {
                    let plane = &src[(s * c + ch) * h * w..(s * c + ch + 1) * h * w];
                    for oy in 0..geo.out_h {
                        let iy = (oy * geo.stride + ky) as isize - geo.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let line = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let out = &mut dst[s * sites + oy * geo.out_w..][..geo.out_w];
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = (ox * geo.stride + kx) as isize - geo.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                *o = line[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((geo.col_rows(), ncols), cols).expect("shape matches buffer")
}

/// Adjoint of [`im2col`]: scatter-adds columns back into an image batch.
pub fn col2im<T: Scalar>(cols: ArrayView2<T>, n: usize, geo: &ConvGeometry) -> Array4<T> {
    let sites = geo.out_sites();
    let ncols = n * sites;
    assert_eq!(cols.dim(), (geo.col_rows(), ncols));
    let cols = cols.as_standard_layout();
    let src = cols.as_slice().expect("standard layout");
    let (c, h, w, k) = (geo.channels, geo.in_h, geo.in_w, geo.kernel);
    let mut out = vec![T::zero(); n * c * h * w];
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let col_row = &src[row * ncols..(row + 1) * ncols];
                for s in 0..n {
                    let plane = &mut out[(s * c + ch) * h * w..(s * c + ch + 1) * h * w];
                    for oy in 0..geo.out_h {
                        let iy = (oy * geo.stride + ky) as isize - geo.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let line = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        let vals = &col_row[s * sites + oy * geo.out_w..][..geo.out_w];
                        for (ox, &v) in vals.iter().enumerate() {
                            let ix = (ox * geo.stride + kx) as isize - geo.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                line[ix as usize] = line[ix as usize] + v;
                            }
                        }
                    }
                }
            }
        }
    }
    Array4::from_shape_vec((n, c, h, w), out).expect("shape matches buffer")
}

/// `[n, c, h, w]` to channel-major `[c, n * h * w]`.
pub fn nchw_to_channel_major<T: Scalar>(x: ArrayView4<T>) -> Array2<T> {
    let (n, c, h, w) = x.dim();
    let permuted = x.permuted_axes([1, 0, 2, 3]);
    let owned = permuted.as_standard_layout().into_owned();
    owned
        .into_shape_with_order((c, n * h * w))
        .expect("contiguous reshape")
}

/// Inverse of [`nchw_to_channel_major`].
pub fn channel_major_to_nchw<T: Scalar>(a: ArrayView2<T>, n: usize, h: usize, w: usize) -> Array4<T> {
    let c = a.nrows();
    let a = a.as_standard_layout();
    let view = a
        .view()
        .into_shape_with_order((c, n, h, w))
        .expect("contiguous reshape");
    view.permuted_axes([1, 0, 2, 3])
        .as_standard_layout()
        .into_owned()
}
