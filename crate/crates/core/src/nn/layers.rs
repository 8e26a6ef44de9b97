//! Layer kinds, their shapes and the batched forward/backward kernels.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// `x` for `x > 0`, `exp(x) - 1` otherwise.
    Elu,
}

/// Geometry of a (transposed) convolution with square filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_ch: usize,
    pub out_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub filter: usize,
    pub stride: usize,
    pub pad: usize,
}

fn conv_dim(n: usize, f: usize, s: usize, p: usize) -> Result<usize> {
    let span = (n + 2 * p).checked_sub(f).ok_or_else(|| Error::Shape(format!("filter {f} exceeds padded input {}", n + 2 * p)))?;
    if s == 0 || span % s != 0 {
        return Err(Error::Shape(format!("({n} - {f} + 2*{p}) is not divisible by stride {s}")));
    }
    Ok(span / s + 1)
}

fn conv_t_dim(n: usize, f: usize, s: usize, p: usize) -> Result<usize> {
    let full = s * (n.max(1) - 1) + f;
    if n == 0 || s == 0 || full <= 2 * p {
        return Err(Error::Shape(format!("transposed convolution of {n} with F={f}, S={s}, P={p} is empty")));
    }
    Ok(full - 2 * p)
}

impl ConvShape {
    /// `(H', W')` of the forward convolution.
    pub fn conv_out(&self) -> Result<(usize, usize)> {
        Ok((
            conv_dim(self.in_h, self.filter, self.stride, self.pad)?,
            conv_dim(self.in_w, self.filter, self.stride, self.pad)?,
        ))
    }

    /// `(H', W')` of the transposed convolution.
    pub fn transpose_out(&self) -> Result<(usize, usize)> {
        Ok((
            conv_t_dim(self.in_h, self.filter, self.stride, self.pad)?,
            conv_t_dim(self.in_w, self.filter, self.stride, self.pad)?,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Dense { input: usize, output: usize },
    Conv(ConvShape),
    ConvTranspose(ConvShape),
    Flatten { ch: usize, h: usize, w: usize },
    Unflatten { ch: usize, h: usize, w: usize },
    Activation { kind: Activation, width: usize },
    Dropout { keep: f64, width: usize },
}

impl LayerSpec {
    pub fn input_len(&self) -> usize {
        match *self {
            LayerSpec::Dense { input, .. } => input,
            LayerSpec::Conv(c) | LayerSpec::ConvTranspose(c) => c.in_ch * c.in_h * c.in_w,
            LayerSpec::Flatten { ch, h, w } | LayerSpec::Unflatten { ch, h, w } => ch * h * w,
            LayerSpec::Activation { width, .. } | LayerSpec::Dropout { width, .. } => width,
        }
    }

    pub fn output_len(&self) -> Result<usize> {
        Ok(match *self {
            LayerSpec::Dense { output, .. } => output,
            LayerSpec::Conv(c) => {
                let (h, w) = c.conv_out()?;
                c.out_ch * h * w
            }
            LayerSpec::ConvTranspose(c) => {
                let (h, w) = c.transpose_out()?;
                c.out_ch * h * w
            }
            _ => self.input_len(),
        })
    }

    /// `(weights, biases)` counts.
    pub fn param_counts(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Dense { input, output } => (input * output, output),
            LayerSpec::Conv(c) => (c.out_ch * c.in_ch * c.filter * c.filter, c.out_ch),
            LayerSpec::ConvTranspose(c) => (c.in_ch * c.out_ch * c.filter * c.filter, c.out_ch),
            _ => (0, 0),
        }
    }

    /// Fan-in and fan-out for weight initialization.
    pub(crate) fn fans(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Dense { input, output } => (input, output),
            LayerSpec::Conv(c) => (c.in_ch * c.filter * c.filter, c.out_ch * c.filter * c.filter),
            LayerSpec::ConvTranspose(c) => (c.in_ch * c.filter * c.filter, c.out_ch * c.filter * c.filter),
            _ => (0, 0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.output_len()?;
        match *self {
            LayerSpec::Dropout { keep, .. } if !(keep > 0.0 && keep <= 1.0) => {
                Err(Error::InvalidParameter(format!("dropout keep probability {keep} not in (0, 1]")))
            }
            LayerSpec::Dense { input: 0, .. } | LayerSpec::Dense { output: 0, .. } => {
                Err(Error::Shape("dense layer with zero width".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv(_) => "conv",
            LayerSpec::ConvTranspose(_) => "conv_transpose",
            LayerSpec::Flatten { .. } => "flatten",
            LayerSpec::Unflatten { .. } => "unflatten",
            LayerSpec::Activation { .. } => "activation",
            LayerSpec::Dropout { .. } => "dropout",
        }
    }
}

/// `C = A B + beta C` on strided row/column layouts.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(a.len() >= (m - 1) * rsa + (k.max(1) - 1) * csa + 1 || k == 0);
    debug_assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the index ranges implied by the strides lie inside the slices
    // (checked above in debug builds) and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Patch matrix of one `[c, h, w]` image: row `(ci*F + kh)*F + kw`,
/// column `col0 + oh*wo + ow`, row stride `ld`.
#[allow(clippy::too_many_arguments)]
fn im2col(img: &[f64], c: usize, h: usize, w: usize, g: &ConvShape, ho: usize, wo: usize, cols: &mut [f64], ld: usize, col0: usize) {
    let (f, s, p) = (g.filter, g.stride, g.pad);
    for ci in 0..c {
        let plane = &img[ci * h * w..(ci + 1) * h * w];
        for kh in 0..f {
            for kw in 0..f {
                let row = (ci * f + kh) * f + kw;
                let dst = &mut cols[row * ld + col0..row * ld + col0 + ho * wo];
                for oh in 0..ho {
                    let ih = (oh * s + kh) as isize - p as isize;
                    let line = &mut dst[oh * wo..(oh + 1) * wo];
                    if ih < 0 || ih >= h as isize {
                        line.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &plane[ih as usize * w..(ih as usize + 1) * w];
                    for (ow, v) in line.iter_mut().enumerate() {
                        let iw = (ow * s + kw) as isize - p as isize;
                        *v = if iw < 0 || iw >= w as isize { 0.0 } else { src[iw as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patches back into the image.
#[allow(clippy::too_many_arguments)]
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, g: &ConvShape, ho: usize, wo: usize, ld: usize, col0: usize, img: &mut [f64]) {
    let (f, s, p) = (g.filter, g.stride, g.pad);
    for ci in 0..c {
        for kh in 0..f {
            for kw in 0..f {
                let row = (ci * f + kh) * f + kw;
                let src = &cols[row * ld + col0..row * ld + col0 + ho * wo];
                for oh in 0..ho {
                    let ih = (oh * s + kh) as isize - p as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let base = ci * h * w + ih as usize * w;
                    for ow in 0..wo {
                        let iw = (ow * s + kw) as isize - p as isize;
                        if iw >= 0 && iw < w as isize {
                            img[base + iw as usize] += src[oh * wo + ow];
                        }
                    }
                }
            }
        }
    }
}

/// Per-layer values kept from the forward pass.
#[derive(Debug, Clone)]
pub(crate) enum Cache {
    None,
    Input(Vec<f64>),
    Columns(Vec<f64>),
    Mask(Vec<f64>),
}

/// Forward pass of one layer on `n` samples.
pub(crate) fn forward(
    spec: &LayerSpec,
    weights: &[f64],
    bias: &[f64],
    x: &[f64],
    n: usize,
    train: bool,
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, Cache)> {
    let out_len = spec.output_len()?;
    match *spec {
        LayerSpec::Dense { input, output } => {
            let mut y = vec![0.0; n * output];
            for row in y.chunks_mut(output) {
                row.copy_from_slice(bias);
            }
            gemm(n, input, output, x, input, 1, weights, 1, input, 1.0, &mut y, output, 1);
            Ok((y, Cache::Input(x.to_vec())))
        }
        LayerSpec::Conv(g) => {
            let (ho, wo) = g.conv_out()?;
            let l = ho * wo;
            let ld = n * l;
            let rows = g.in_ch * g.filter * g.filter;
            let mut cols = vec![0.0; rows * ld];
            let in_len = spec.input_len();
            for b in 0..n {
                im2col(&x[b * in_len..(b + 1) * in_len], g.in_ch, g.in_h, g.in_w, &g, ho, wo, &mut cols, ld, b * l);
            }
            let mut tmp = vec![0.0; g.out_ch * ld];
            gemm(g.out_ch, rows, ld, weights, rows, 1, &cols, ld, 1, 0.0, &mut tmp, ld, 1);
            let mut y = vec![0.0; n * out_len];
            for b in 0..n {
                for o in 0..g.out_ch {
                    let src = &tmp[o * ld + b * l..o * ld + (b + 1) * l];
                    let dst = &mut y[b * out_len + o * l..b * out_len + (o + 1) * l];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = s + bias[o];
                    }
                }
            }
            Ok((y, Cache::Columns(cols)))
        }
        LayerSpec::ConvTranspose(g) => {
            let (ho, wo) = g.transpose_out()?;
            let l = g.in_h * g.in_w;
            let ld = n * l;
            let rows = g.out_ch * g.filter * g.filter;
            let in_len = spec.input_len();
            let mut xm = vec![0.0; g.in_ch * ld];
            for b in 0..n {
                for c in 0..g.in_ch {
                    xm[c * ld + b * l..c * ld + (b + 1) * l].copy_from_slice(&x[b * in_len + c * l..b * in_len + (c + 1) * l]);
                }
            }
            let mut cols = vec![0.0; rows * ld];
            gemm(rows, g.in_ch, ld, weights, 1, rows, &xm, ld, 1, 0.0, &mut cols, ld, 1);
            let mut y = vec![0.0; n * out_len];
            let plane = ho * wo;
            for b in 0..n {
                let img = &mut y[b * out_len..(b + 1) * out_len];
                for o in 0..g.out_ch {
                    img[o * plane..(o + 1) * plane].iter_mut().for_each(|v| *v = bias[o]);
                }
                col2im(&cols, g.out_ch, ho, wo, &g, g.in_h, g.in_w, ld, b * l, img);
            }
            Ok((y, Cache::Input(xm)))
        }
        LayerSpec::Flatten { .. } | LayerSpec::Unflatten { .. } => Ok((x.to_vec(), Cache::None)),
        LayerSpec::Activation { kind: Activation::Elu, .. } => {
            let y = x.iter().map(|&v| if v > 0.0 { v } else { v.exp_m1() }).collect();
            Ok((y, Cache::Input(x.to_vec())))
        }
        LayerSpec::Dropout { keep, .. } => {
            if !train || keep >= 1.0 {
                return Ok((x.to_vec(), Cache::None));
            }
            let mask: Vec<f64> = (0..x.len()).map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
            let y = x.iter().zip(&mask).map(|(a, m)| a * m).collect();
            Ok((y, Cache::Mask(mask)))
        }
    }
}

/// Backward pass of one layer. Returns `(dW, db, dx)`; `dx` is empty when
/// `need_dx` is false.
pub(crate) fn backward(
    spec: &LayerSpec,
    weights: &[f64],
    cache: &Cache,
    dy: &[f64],
    n: usize,
    need_dx: bool,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let (nw, nb) = spec.param_counts();
    let out_len = spec.output_len()?;
    let in_len = spec.input_len();
    match (*spec, cache) {
        (LayerSpec::Dense { input, output }, Cache::Input(x)) => {
            let mut dw = vec![0.0; nw];
            gemm(output, n, input, dy, 1, output, x, input, 1, 0.0, &mut dw, input, 1);
            let mut db = vec![0.0; nb];
            for row in dy.chunks(output) {
                for (d, g) in db.iter_mut().zip(row) {
                    *d += g;
                }
            }
            let mut dx = Vec::new();
            if need_dx {
                dx = vec![0.0; n * input];
                gemm(n, output, input, dy, output, 1, weights, input, 1, 0.0, &mut dx, input, 1);
            }
            Ok((dw, db, dx))
        }
        (LayerSpec::Conv(g), Cache::Columns(cols)) => {
            let (ho, wo) = g.conv_out()?;
            let l = ho * wo;
            let ld = n * l;
            let rows = g.in_ch * g.filter * g.filter;
            let mut dtmp = vec![0.0; g.out_ch * ld];
            let mut db = vec![0.0; nb];
            for b in 0..n {
                for o in 0..g.out_ch {
                    let src = &dy[b * out_len + o * l..b * out_len + (o + 1) * l];
                    dtmp[o * ld + b * l..o * ld + (b + 1) * l].copy_from_slice(src);
                    db[o] += src.iter().sum::<f64>();
                }
            }
            let mut dw = vec![0.0; nw];
            gemm(g.out_ch, ld, rows, &dtmp, ld, 1, cols, 1, ld, 0.0, &mut dw, rows, 1);
            let mut dx = Vec::new();
            if need_dx {
                let mut dcols = vec![0.0; rows * ld];
                gemm(rows, g.out_ch, ld, weights, 1, rows, &dtmp, ld, 1, 0.0, &mut dcols, ld, 1);
                dx = vec![0.0; n * in_len];
                for b in 0..n {
                    col2im(&dcols, g.in_ch, g.in_h, g.in_w, &g, ho, wo, ld, b * l, &mut dx[b * in_len..(b + 1) * in_len]);
                }
            }
            Ok((dw, db, dx))
        }
        (LayerSpec::ConvTranspose(g), Cache::Input(xm)) => {
            let (ho, wo) = g.transpose_out()?;
            let l = g.in_h * g.in_w;
            let ld = n * l;
            let rows = g.out_ch * g.filter * g.filter;
            let plane = ho * wo;
            let mut dcols = vec![0.0; rows * ld];
            let mut db = vec![0.0; nb];
            for b in 0..n {
                let img = &dy[b * out_len..(b + 1) * out_len];
                im2col(img, g.out_ch, ho, wo, &g, g.in_h, g.in_w, &mut dcols, ld, b * l);
                for o in 0..g.out_ch {
                    db[o] += img[o * plane..(o + 1) * plane].iter().sum::<f64>();
                }
            }
            let mut dw = vec![0.0; nw];
            gemm(g.in_ch, ld, rows, xm, ld, 1, &dcols, 1, ld, 0.0, &mut dw, rows, 1);
            let mut dx = Vec::new();
            if need_dx {
                let mut dxm = vec![0.0; g.in_ch * ld];
                gemm(g.in_ch, rows, ld, weights, rows, 1, &dcols, ld, 1, 0.0, &mut dxm, ld, 1);
                dx = vec![0.0; n * in_len];
                for b in 0..n {
                    for c in 0..g.in_ch {
                        dx[b * in_len + c * l..b * in_len + (c + 1) * l].copy_from_slice(&dxm[c * ld + b * l..c * ld + (b + 1) * l]);
                    }
                }
            }
            Ok((dw, db, dx))
        }
        (LayerSpec::Flatten { .. } | LayerSpec::Unflatten { .. }, _) => Ok((vec![], vec![], if need_dx { dy.to_vec() } else { vec![] })),
        (LayerSpec::Activation { kind: Activation::Elu, .. }, Cache::Input(x)) => {
            let dx = if need_dx {
                x.iter().zip(dy).map(|(&v, &g)| if v > 0.0 { g } else { g * v.exp() }).collect()
            } else {
                vec![]
            };
            Ok((vec![], vec![], dx))
        }
        (LayerSpec::Dropout { .. }, Cache::Mask(m)) => {
            let dx = if need_dx { dy.iter().zip(m).map(|(g, k)| g * k).collect() } else { vec![] };
            Ok((vec![], vec![], dx))
        }
        (LayerSpec::Dropout { .. }, Cache::None) => Ok((vec![], vec![], if need_dx { dy.to_vec() } else { vec![] })),
        (s, _) => Err(Error::Shape(format!("missing forward cache for {} layer", s.name()))),
    }
}
