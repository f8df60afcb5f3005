//! Convolution kernels on NCHW buffers.
//!
//! Two forward paths exist for every convolution: a direct loop kernel and a
//! patch-matrix path (`im2col` followed by a GEMM). They must agree to within
//! round-off; the patch-matrix path is the default because it is much faster.
//! Backward passes always go through the patch-matrix path.

use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};

/// Which forward kernel a convolution uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ConvAlgorithm {
    Direct,
    #[default]
    Im2col,
}

/// Spatial geometry shared by a convolution and its transpose.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    /// Output extent of a forward convolution over `input` pixels.
    pub fn conv_out(&self, input: usize, kernel: usize) -> Result<usize> {
        if self.stride == 0 {
            return Err(Error::Dimension("stride must be at least 1".into()));
        }
        if input + 2 * self.pad < kernel {
            return Err(Error::Dimension(format!(
                "input extent {input} with padding {} is smaller than kernel {kernel}",
                self.pad
            )));
        }
        Ok((input + 2 * self.pad - kernel) / self.stride + 1)
    }

    /// Output extent of a transposed convolution over `input` pixels.
    pub fn transpose_out(&self, input: usize, kernel: usize) -> Result<usize> {
        if self.stride == 0 {
            return Err(Error::Dimension("stride must be at least 1".into()));
        }
        let full = (input - 1) * self.stride + kernel;
        if full <= 2 * self.pad {
            return Err(Error::Dimension(format!(
                "transposed convolution of extent {input} (stride {}, pad {}, kernel {kernel}) has non-positive output",
                self.stride, self.pad
            )));
        }
        Ok(full - 2 * self.pad)
    }
}

/// Layout of one `im2col` problem: an image of `channels × h × w` scanned by
/// the kernel into an `oh × ow` grid.
#[derive(Clone, Copy, Debug)]
struct Patches {
    channels: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    geom: ConvGeometry,
}

impl Patches {
    fn rows(&self) -> usize {
        self.channels * self.geom.kernel_h * self.geom.kernel_w
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Source pixel offset for grid position `o` and kernel tap `k`, if inside.
    #[inline]
    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.geom.stride + k) as isize - self.geom.pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }

    fn im2col<T: Element>(&self, image: &[T], cols: &mut [T]) {
        let (kh, kw) = (self.geom.kernel_h, self.geom.kernel_w);
        let ncols = self.cols();
        for c in 0..self.channels {
            let plane = &image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = (c * kh + ki) * kw + kj;
                    let dst = &mut cols[row * ncols..(row + 1) * ncols];
                    for oy in 0..self.oh {
                        let out_row = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        match self.source(oy, ki, self.h) {
                            None => out_row.iter_mut().for_each(|v| *v = T::zero()),
                            Some(iy) => {
                                let src = &plane[iy * self.w..(iy + 1) * self.w];
                                for (ox, v) in out_row.iter_mut().enumerate() {
                                    *v = match self.source(ox, kj, self.w) {
                                        Some(ix) => src[ix],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds patch columns back into an image buffer.
    fn col2im<T: Element>(&self, cols: &[T], image: &mut [T]) {
        let (kh, kw) = (self.geom.kernel_h, self.geom.kernel_w);
        let ncols = self.cols();
        for c in 0..self.channels {
            let plane = &mut image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = (c * kh + ki) * kw + kj;
                    let src = &cols[row * ncols..(row + 1) * ncols];
                    for oy in 0..self.oh {
                        let Some(iy) = self.source(oy, ki, self.h) else {
                            continue;
                        };
                        let dst = &mut plane[iy * self.w..(iy + 1) * self.w];
                        for ox in 0..self.ow {
                            if let Some(ix) = self.source(ox, kj, self.w) {
                                dst[ix] = dst[ix] + src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_bias<T: Element>(bias: Option<&Tensor<T>>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [channels] {
            return Err(Error::Dimension(format!(
                "bias shape {:?} does not match {channels} output channels",
                b.shape()
            )));
        }
    }
    Ok(())
}

fn add_bias<T: Element>(out: &mut [T], bias: Option<&Tensor<T>>, plane: usize) {
    if let Some(b) = bias {
        let channels = b.len();
        for (i, chunk) in out.chunks_exact_mut(plane).enumerate() {
            let v = b.data()[i % channels];
            chunk.iter_mut().for_each(|x| *x = *x + v);
        }
    }
}

fn bias_grad<T: Element>(grad_out: &[T], channels: usize, plane: usize) -> Tensor<T> {
    let mut db = vec![T::zero(); channels];
    for (i, chunk) in grad_out.chunks_exact(plane).enumerate() {
        db[i % channels] = db[i % channels] + chunk.iter().copied().sum();
    }
    Tensor::new(vec![channels], db).expect("bias gradient shape")
}

/// Resolved shapes for `conv2d(input [N,C,H,W], kernel [O,C,Kh,Kw])`.
#[derive(Clone, Copy, Debug)]
pub struct Conv2dShape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub oh: usize,
    pub ow: usize,
    pub geom: ConvGeometry,
}

impl Conv2dShape {
    pub fn resolve<T: Element>(
        input: &Tensor<T>,
        kernel: &Tensor<T>,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let [n, c, h, w] = input.dims4()?;
        let [o, kc, kh, kw] = kernel.dims4()?;
        if kc != c {
            return Err(Error::Dimension(format!(
                "conv2d: input {:?} has {c} channels but kernel {:?} expects {kc}",
                input.shape(),
                kernel.shape()
            )));
        }
        let geom = ConvGeometry {
            kernel_h: kh,
            kernel_w: kw,
            stride,
            pad,
        };
        let oh = geom.conv_out(h, kh)?;
        let ow = geom.conv_out(w, kw)?;
        Ok(Conv2dShape {
            n,
            c,
            h,
            w,
            o,
            oh,
            ow,
            geom,
        })
    }

    fn patches(&self) -> Patches {
        Patches {
            channels: self.c,
            h: self.h,
            w: self.w,
            oh: self.oh,
            ow: self.ow,
            geom: self.geom,
        }
    }
}

pub fn conv2d_forward<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
    algorithm: ConvAlgorithm,
) -> Result<Tensor<T>> {
    let s = Conv2dShape::resolve(input, kernel, stride, pad)?;
    check_bias(bias, s.o)?;
    let mut out = match algorithm {
        ConvAlgorithm::Direct => conv2d_direct(input.data(), kernel.data(), &s),
        ConvAlgorithm::Im2col => conv2d_gemm(input.data(), kernel.data(), &s),
    };
    add_bias(&mut out, bias, s.oh * s.ow);
    Tensor::new(vec![s.n, s.o, s.oh, s.ow], out)
}

fn conv2d_direct<T: Element>(x: &[T], k: &[T], s: &Conv2dShape) -> Vec<T> {
    let (kh, kw) = (s.geom.kernel_h, s.geom.kernel_w);
    let p = s.patches();
    let mut out = vec![T::zero(); s.n * s.o * s.oh * s.ow];
    for n in 0..s.n {
        for o in 0..s.o {
            for oy in 0..s.oh {
                for ox in 0..s.ow {
                    let mut acc = T::zero();
                    for c in 0..s.c {
                        for ki in 0..kh {
                            let Some(iy) = p.source(oy, ki, s.h) else {
                                continue;
                            };
                            for kj in 0..kw {
                                if let Some(ix) = p.source(ox, kj, s.w) {
                                    acc = acc
                                        + x[((n * s.c + c) * s.h + iy) * s.w + ix]
                                            * k[((o * s.c + c) * kh + ki) * kw + kj];
                                }
                            }
                        }
                    }
                    out[((n * s.o + o) * s.oh + oy) * s.ow + ox] = acc;
                }
            }
        }
    }
    out
}

fn conv2d_gemm<T: Element>(x: &[T], k: &[T], s: &Conv2dShape) -> Vec<T> {
    let p = s.patches();
    let (rows, ncols) = (p.rows(), p.cols());
    let mut cols = vec![T::zero(); rows * ncols];
    let mut out = vec![T::zero(); s.n * s.o * ncols];
    let in_plane = s.c * s.h * s.w;
    for n in 0..s.n {
        p.im2col(&x[n * in_plane..(n + 1) * in_plane], &mut cols);
        T::gemm(
            s.o,
            rows,
            ncols,
            k,
            (rows as isize, 1),
            &cols,
            (ncols as isize, 1),
            &mut out[n * s.o * ncols..(n + 1) * s.o * ncols],
            false,
        );
    }
    out
}

/// Gradients of `conv2d` with respect to whichever inputs are requested.
pub struct ConvGrads<T: Element> {
    pub input: Option<Tensor<T>>,
    pub kernel: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    pad: usize,
    want: [bool; 3],
) -> Result<ConvGrads<T>> {
    let s = Conv2dShape::resolve(input, kernel, stride, pad)?;
    let p = s.patches();
    let (rows, ncols) = (p.rows(), p.cols());
    let in_plane = s.c * s.h * s.w;
    let out_plane = s.o * ncols;
    let (x, k, g) = (input.data(), kernel.data(), grad_out.data());

    let mut cols = vec![T::zero(); rows * ncols];
    let mut dx = want[0].then(|| vec![T::zero(); x.len()]);
    let mut dk = want[1].then(|| vec![T::zero(); k.len()]);
    for n in 0..s.n {
        let gn = &g[n * out_plane..(n + 1) * out_plane];
        if let Some(dk) = dk.as_mut() {
            p.im2col(&x[n * in_plane..(n + 1) * in_plane], &mut cols);
            // dK[O, CKK] += dY[O, HW] · colsᵀ
            T::gemm(
                s.o,
                ncols,
                rows,
                gn,
                (ncols as isize, 1),
                &cols,
                (1, ncols as isize),
                dk,
                true,
            );
        }
        if let Some(dx) = dx.as_mut() {
            // dcols[CKK, HW] = Kᵀ · dY
            T::gemm(
                rows,
                s.o,
                ncols,
                k,
                (1, rows as isize),
                gn,
                (ncols as isize, 1),
                &mut cols,
                false,
            );
            p.col2im(&cols, &mut dx[n * in_plane..(n + 1) * in_plane]);
        }
    }
    Ok(ConvGrads {
        input: dx.map(|d| Tensor::new(input.shape().to_vec(), d)).transpose()?,
        kernel: dk.map(|d| Tensor::new(kernel.shape().to_vec(), d)).transpose()?,
        bias: want[2].then(|| bias_grad(g, s.o, ncols)),
    })
}

/// Resolved shapes for `conv_transpose2d(input [N,C,H,W], kernel [C,O,Kh,Kw])`.
#[derive(Clone, Copy, Debug)]
pub struct ConvTranspose2dShape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub oh: usize,
    pub ow: usize,
    pub geom: ConvGeometry,
}

impl ConvTranspose2dShape {
    pub fn resolve<T: Element>(
        input: &Tensor<T>,
        kernel: &Tensor<T>,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let [n, c, h, w] = input.dims4()?;
        let [kc, o, kh, kw] = kernel.dims4()?;
        if kc != c {
            return Err(Error::Dimension(format!(
                "conv_transpose2d: input {:?} has {c} channels but kernel {:?} expects {kc}",
                input.shape(),
                kernel.shape()
            )));
        }
        let geom = ConvGeometry {
            kernel_h: kh,
            kernel_w: kw,
            stride,
            pad,
        };
        let oh = geom.transpose_out(h, kh)?;
        let ow = geom.transpose_out(w, kw)?;
        Ok(ConvTranspose2dShape {
            n,
            c,
            h,
            w,
            o,
            oh,
            ow,
            geom,
        })
    }

    /// The output image, scanned by the kernel, lands on the input grid.
    fn patches(&self) -> Patches {
        Patches {
            channels: self.o,
            h: self.oh,
            w: self.ow,
            oh: self.h,
            ow: self.w,
            geom: self.geom,
        }
    }
}

pub fn conv_transpose2d_forward<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
    algorithm: ConvAlgorithm,
) -> Result<Tensor<T>> {
    let s = ConvTranspose2dShape::resolve(input, kernel, stride, pad)?;
    check_bias(bias, s.o)?;
    let mut out = match algorithm {
        ConvAlgorithm::Direct => conv_transpose2d_direct(input.data(), kernel.data(), &s),
        ConvAlgorithm::Im2col => conv_transpose2d_gemm(input.data(), kernel.data(), &s),
    };
    add_bias(&mut out, bias, s.oh * s.ow);
    Tensor::new(vec![s.n, s.o, s.oh, s.ow], out)
}

fn conv_transpose2d_direct<T: Element>(x: &[T], k: &[T], s: &ConvTranspose2dShape) -> Vec<T> {
    let (kh, kw) = (s.geom.kernel_h, s.geom.kernel_w);
    let p = s.patches();
    let mut out = vec![T::zero(); s.n * s.o * s.oh * s.ow];
    for n in 0..s.n {
        for c in 0..s.c {
            for iy in 0..s.h {
                for ix in 0..s.w {
                    let v = x[((n * s.c + c) * s.h + iy) * s.w + ix];
                    for o in 0..s.o {
                        for ki in 0..kh {
                            let Some(oy) = p.source(iy, ki, s.oh) else {
                                continue;
                            };
                            for kj in 0..kw {
                                if let Some(ox) = p.source(ix, kj, s.ow) {
                                    let idx = ((n * s.o + o) * s.oh + oy) * s.ow + ox;
                                    out[idx] =
                                        out[idx] + v * k[((c * s.o + o) * kh + ki) * kw + kj];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_transpose2d_gemm<T: Element>(x: &[T], k: &[T], s: &ConvTranspose2dShape) -> Vec<T> {
    let p = s.patches();
    let (rows, ncols) = (p.rows(), p.cols());
    let mut cols = vec![T::zero(); rows * ncols];
    let in_plane = s.c * s.h * s.w;
    let out_plane = s.o * s.oh * s.ow;
    let mut out = vec![T::zero(); s.n * out_plane];
    for n in 0..s.n {
        // cols[OKK, HW] = Kᵀ · x_n, with K viewed as [C, OKK]
        T::gemm(
            rows,
            s.c,
            ncols,
            k,
            (1, rows as isize),
            &x[n * in_plane..(n + 1) * in_plane],
            (ncols as isize, 1),
            &mut cols,
            false,
        );
        p.col2im(&cols, &mut out[n * out_plane..(n + 1) * out_plane]);
    }
    out
}

pub fn conv_transpose2d_backward<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    pad: usize,
    want: [bool; 3],
) -> Result<ConvGrads<T>> {
    let s = ConvTranspose2dShape::resolve(input, kernel, stride, pad)?;
    let p = s.patches();
    let (rows, ncols) = (p.rows(), p.cols());
    let in_plane = s.c * s.h * s.w;
    let out_plane = s.o * s.oh * s.ow;
    let (x, k, g) = (input.data(), kernel.data(), grad_out.data());

    let mut cols = vec![T::zero(); rows * ncols];
    let mut dx = want[0].then(|| vec![T::zero(); x.len()]);
    let mut dk = want[1].then(|| vec![T::zero(); k.len()]);
    if dx.is_some() || dk.is_some() {
        for n in 0..s.n {
            p.im2col(&g[n * out_plane..(n + 1) * out_plane], &mut cols);
            if let Some(dx) = dx.as_mut() {
                // dX_n[C, HW] = K[C, OKK] · cols
                T::gemm(
                    s.c,
                    rows,
                    ncols,
                    k,
                    (rows as isize, 1),
                    &cols,
                    (ncols as isize, 1),
                    &mut dx[n * in_plane..(n + 1) * in_plane],
                    false,
                );
            }
            if let Some(dk) = dk.as_mut() {
                // dK[C, OKK] += x_n[C, HW] · colsᵀ
                T::gemm(
                    s.c,
                    ncols,
                    rows,
                    &x[n * in_plane..(n + 1) * in_plane],
                    (ncols as isize, 1),
                    &cols,
                    (1, ncols as isize),
                    dk,
                    true,
                );
            }
        }
    }
    Ok(ConvGrads {
        input: dx.map(|d| Tensor::new(input.shape().to_vec(), d)).transpose()?,
        kernel: dk.map(|d| Tensor::new(kernel.shape().to_vec(), d)).transpose()?,
        bias: want[2].then(|| bias_grad(g, s.o, s.oh * s.ow)),
    })
}
