//! Dilated 2-D cross-correlation and its transpose, lowered to matrix
//! products over unfolded (im2col) patches.

use std::cell::RefCell;

use super::Tensor;
use crate::error::{Error, Result};

thread_local! {
    static SCRATCH: RefCell<Vec<Vec<f64>>> = const { RefCell::new(Vec::new()) };
}

/// Lends a reusable buffer of at least `len` values. Its contents are
/// stale: callers must overwrite before reading.
fn with_scratch<R>(len: usize, f: impl FnOnce(&mut [f64]) -> R) -> R {
    let mut buf = SCRATCH.with(|s| s.borrow_mut().pop()).unwrap_or_default();
    if buf.len() < len {
        buf.resize(len, 0.0);
    }
    let r = f(&mut buf[..len]);
    SCRATCH.with(|s| s.borrow_mut().push(buf));
    r
}

/// Geometry shared by [`conv2d`] and [`conv2d_transpose`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl Default for ConvParams {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            dilation: 1,
        }
    }
}

impl ConvParams {
    /// Stride 1 with the padding that preserves spatial extent for an odd
    /// kernel: `dilation · (k − 1) / 2`.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        Self {
            stride: 1,
            padding: dilation * (kernel - 1) / 2,
            dilation,
        }
    }

    fn validate(&self, op: &'static str) -> Result<()> {
        if self.stride == 0 || self.dilation == 0 {
            return Err(Error::invalid(
                op,
                format!("stride and dilation must be positive, got {self:?}"),
            ));
        }
        Ok(())
    }
}

/// Output extent of a convolution along one axis, rejecting kernels that do
/// not fit and strides that do not tile the padded input exactly.
pub fn conv_output_extent(input: usize, kernel: usize, p: ConvParams) -> Result<usize> {
    let padded = input + 2 * p.padding;
    let span = p.dilation * (kernel - 1) + 1;
    if kernel == 0 || span > padded {
        return Err(Error::shape(
            "conv2d",
            format!("dilated kernel extent {span} exceeds padded input {padded}"),
        ));
    }
    if (padded - span) % p.stride != 0 {
        return Err(Error::shape(
            "conv2d",
            format!(
                "output extent ({padded} - {span}) / {} + 1 is not an integer",
                p.stride
            ),
        ));
    }
    Ok((padded - span) / p.stride + 1)
}

#[derive(Clone, Copy)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    out_h: usize,
    out_w: usize,
    p: ConvParams,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.p.stride == 1 && self.p.padding == 0
    }

    /// Range of output positions whose tap at `offset` lands inside `0..extent`.
    fn valid_range(&self, offset: isize, extent: usize, out: usize) -> (usize, usize) {
        let s = self.p.stride as isize;
        let lo = if offset >= 0 { 0 } else { (-offset + s - 1) / s };
        let hi = (extent as isize - 1 - offset).div_euclid(s) + 1;
        let lo = lo.clamp(0, out as isize) as usize;
        let hi = hi.clamp(0, out as isize) as usize;
        (lo, hi.max(lo))
    }

    /// Unfolds one `C × H × W` image into a `(C·k·k) × (H'·W')` matrix.
    fn im2col(&self, img: &[f64], cols: &mut [f64]) {
        let (k, s, d, pad) = (self.kernel, self.p.stride, self.p.dilation, self.p.padding);
        let n = self.cols();
        for c in 0..self.channels {
            let plane = &img[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..k {
                let oy_off = (ky * d) as isize - pad as isize;
                let (y0, y1) = self.valid_range(oy_off, self.height, self.out_h);
                for kx in 0..k {
                    let ox_off = (kx * d) as isize - pad as isize;
                    let (x0, x1) = self.valid_range(ox_off, self.width, self.out_w);
                    let row = ((c * k + ky) * k + kx) * n;
                    // Only the padded border needs zeros.
                    cols[row..row + y0 * self.out_w].fill(0.0);
                    cols[row + y1.max(y0) * self.out_w..row + n].fill(0.0);
                    for oy in y0..y1 {
                        let iy = (oy * s) as isize + oy_off;
                        let src = &plane[iy as usize * self.width..];
                        let dst = &mut cols[row + oy * self.out_w..row + (oy + 1) * self.out_w];
                        dst[..x0.min(self.out_w)].fill(0.0);
                        dst[x1.max(x0)..].fill(0.0);
                        if s == 1 && x1 > x0 {
                            let ix0 = (x0 as isize + ox_off) as usize;
                            dst[x0..x1].copy_from_slice(&src[ix0..ix0 + (x1 - x0)]);
                        } else {
                            for ox in x0..x1 {
                                dst[ox] = src[((ox * s) as isize + ox_off) as usize];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Geometry::im2col`]: scatters columns back, accumulating.
    fn col2im(&self, cols: &[f64], img: &mut [f64]) {
        let (k, s, d, pad) = (self.kernel, self.p.stride, self.p.dilation, self.p.padding);
        let n = self.cols();
        for c in 0..self.channels {
            let plane =
                &mut img[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..k {
                let oy_off = (ky * d) as isize - pad as isize;
                let (y0, y1) = self.valid_range(oy_off, self.height, self.out_h);
                for kx in 0..k {
                    let ox_off = (kx * d) as isize - pad as isize;
                    let (x0, x1) = self.valid_range(ox_off, self.width, self.out_w);
                    let row = ((c * k + ky) * k + kx) * n;
                    for oy in y0..y1 {
                        let iy = ((oy * s) as isize + oy_off) as usize;
                        let src = &cols[row + oy * self.out_w..row + (oy + 1) * self.out_w];
                        let dst = &mut plane[iy * self.width..(iy + 1) * self.width];
                        if s == 1 && x1 > x0 {
                            let ix0 = (x0 as isize + ox_off) as usize;
                            for (o, v) in dst[ix0..ix0 + (x1 - x0)].iter_mut().zip(&src[x0..x1]) {
                                *o += v;
                            }
                        } else {
                            for ox in x0..x1 {
                                dst[((ox * s) as isize + ox_off) as usize] += src[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Row-major `C = A·B + beta·C` where `A` is `m × k` (or its transpose is
/// stored when `a_t`), `B` is `k × n` (or transposed when `b_t`).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the assert above bounds every index the strides can reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Validates a `k × k` weight whose axis `in_axis` must match the input
/// channel count; returns its dims.
fn check_weight(
    op: &'static str,
    weight: &Tensor,
    bias: Option<&Tensor>,
    in_channels: usize,
    in_axis: usize,
) -> Result<[usize; 4]> {
    let dims = weight.dims4(op)?;
    if dims[2] != dims[3] {
        return Err(Error::shape(
            op,
            format!("kernel must be square, got {}x{}", dims[2], dims[3]),
        ));
    }
    if dims[in_axis] != in_channels {
        return Err(Error::shape(
            op,
            format!(
                "input has {in_channels} channels, weight {:?} expects {}",
                weight.shape(),
                dims[in_axis]
            ),
        ));
    }
    let out_channels = dims[1 - in_axis];
    if let Some(b) = bias {
        if b.shape() != [out_channels] {
            return Err(Error::shape(
                op,
                format!("bias {:?} does not match {out_channels} output channels", b.shape()),
            ));
        }
    }
    Ok(dims)
}

fn channel_sums(g: &[f64], n: usize, c: usize, plane: usize) -> Vec<f64> {
    let mut out = vec![0.0; c];
    for b in 0..n {
        for (ch, acc) in out.iter_mut().enumerate() {
            let base = (b * c + ch) * plane;
            *acc += g[base..base + plane].iter().sum::<f64>();
        }
    }
    out
}

fn add_bias(out: &mut [f64], bias: &[f64], n: usize, plane: usize) {
    let c = bias.len();
    for b in 0..n {
        for (ch, bv) in bias.iter().enumerate() {
            let base = (b * c + ch) * plane;
            out[base..base + plane].iter_mut().for_each(|v| *v += bv);
        }
    }
}

/// Cross-correlation of `input` (`N × Cin × H × W`) with a dilated
/// `Cout × Cin × k × k` kernel, plus an optional per-channel bias.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    p: ConvParams,
) -> Result<Tensor> {
    p.validate("conv2d")?;
    let [n, cin, h, w] = input.dims4("conv2d")?;
    let [cout, _, k, _] = check_weight("conv2d", weight, bias, cin, 1)?;
    let geo = Geometry {
        channels: cin,
        height: h,
        width: w,
        kernel: k,
        out_h: conv_output_extent(h, k, p)?,
        out_w: conv_output_extent(w, k, p)?,
        p,
    };
    let (rows, cols_n) = (geo.rows(), geo.cols());
    let in_len = cin * h * w;
    let out_len = cout * cols_n;

    let mut out = vec![0.0; n * out_len];
    let scratch = if geo.is_pointwise() { 0 } else { rows * cols_n };
    with_scratch(scratch, |cols| {
        for b in 0..n {
            let img = &input.data()[b * in_len..(b + 1) * in_len];
            let patches: &[f64] = if geo.is_pointwise() {
                img
            } else {
                geo.im2col(img, cols);
                cols
            };
            gemm(
                cout,
                rows,
                cols_n,
                weight.data(),
                false,
                patches,
                false,
                0.0,
                &mut out[b * out_len..(b + 1) * out_len],
            );
        }
    });
    if let Some(bias) = bias {
        add_bias(&mut out, bias.data(), n, cols_n);
    }

    let (x, wt) = (input.clone(), weight.clone());
    let mut inputs = vec![input, weight];
    inputs.extend(bias);
    Ok(Tensor::from_op(
        vec![n, cout, geo.out_h, geo.out_w],
        out,
        "conv2d",
        &inputs,
        move |g, needs| {
            let mut gx = needs[0].then(|| vec![0.0; n * in_len]);
            let mut gw = needs[1].then(|| vec![0.0; wt.numel()]);
            let scratch = if geo.is_pointwise() { 0 } else { rows * cols_n };
            with_scratch(scratch, |cols| {
                with_scratch(scratch, |dcols| {
                    for b in 0..n {
                        let gb = &g[b * out_len..(b + 1) * out_len];
                        if let Some(gw) = gw.as_mut() {
                            let img = &x.data()[b * in_len..(b + 1) * in_len];
                            let patches: &[f64] = if geo.is_pointwise() {
                                img
                            } else {
                                geo.im2col(img, cols);
                                cols
                            };
                            gemm(cout, cols_n, rows, gb, false, patches, true, 1.0, gw);
                        }
                        if let Some(gx) = gx.as_mut() {
                            let dst = &mut gx[b * in_len..(b + 1) * in_len];
                            if geo.is_pointwise() {
                                gemm(rows, cout, cols_n, wt.data(), true, gb, false, 0.0, dst);
                            } else {
                                gemm(rows, cout, cols_n, wt.data(), true, gb, false, 0.0, dcols);
                                geo.col2im(dcols, dst);
                            }
                        }
                    }
                })
            });
            let mut grads = vec![gx, gw];
            if needs.len() > 2 {
                grads.push(needs[2].then(|| channel_sums(g, n, cout, cols_n)));
            }
            grads
        },
    ))
}

/// Transposed (fractionally strided) convolution: the adjoint of
/// [`conv2d`] with the same `Cy × Cx × k × k` weight, mapping `Cy` input
/// channels to `Cx` output channels, plus an optional bias over `Cx`.
pub fn conv2d_transpose(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    p: ConvParams,
) -> Result<Tensor> {
    p.validate("conv2d_transpose")?;
    let [n, cy, h, w] = input.dims4("conv2d_transpose")?;
    let [_, cx, k, _] = check_weight("conv2d_transpose", weight, bias, cy, 0)?;
    let span = p.dilation * (k - 1) + 1;
    let out_h = ((h - 1) * p.stride + span)
        .checked_sub(2 * p.padding)
        .filter(|v| *v > 0)
        .ok_or_else(|| Error::shape("conv2d_transpose", "padding exceeds output extent"))?;
    let out_w = ((w - 1) * p.stride + span)
        .checked_sub(2 * p.padding)
        .filter(|v| *v > 0)
        .ok_or_else(|| Error::shape("conv2d_transpose", "padding exceeds output extent"))?;
    // Geometry of the forward convolution this op is the adjoint of.
    let geo = Geometry {
        channels: cx,
        height: out_h,
        width: out_w,
        kernel: k,
        out_h: h,
        out_w: w,
        p,
    };
    let (rows, cols_n) = (geo.rows(), geo.cols());
    let in_len = cy * cols_n;
    let out_len = cx * out_h * out_w;

    let mut out = vec![0.0; n * out_len];
    let scratch = if geo.is_pointwise() { 0 } else { rows * cols_n };
    with_scratch(scratch, |dcols| {
        for b in 0..n {
            let yb = &input.data()[b * in_len..(b + 1) * in_len];
            let dst = &mut out[b * out_len..(b + 1) * out_len];
            if geo.is_pointwise() {
                gemm(rows, cy, cols_n, weight.data(), true, yb, false, 0.0, dst);
            } else {
                gemm(rows, cy, cols_n, weight.data(), true, yb, false, 0.0, dcols);
                geo.col2im(dcols, dst);
            }
        }
    });
    if let Some(bias) = bias {
        add_bias(&mut out, bias.data(), n, out_h * out_w);
    }

    let (y, wt) = (input.clone(), weight.clone());
    let mut inputs = vec![input, weight];
    inputs.extend(bias);
    Ok(Tensor::from_op(
        vec![n, cx, out_h, out_w],
        out,
        "conv2d_transpose",
        &inputs,
        move |g, needs| {
            let mut gy = needs[0].then(|| vec![0.0; n * in_len]);
            let mut gw = needs[1].then(|| vec![0.0; wt.numel()]);
            let scratch = if geo.is_pointwise() { 0 } else { rows * cols_n };
            with_scratch(scratch, |cols| {
                for b in 0..n {
                    let gb = &g[b * out_len..(b + 1) * out_len];
                    let patches: &[f64] = if geo.is_pointwise() {
                        gb
                    } else {
                        geo.im2col(gb, cols);
                        cols
                    };
                    if let Some(gy) = gy.as_mut() {
                        let dst = &mut gy[b * in_len..(b + 1) * in_len];
                        gemm(cy, rows, cols_n, wt.data(), false, patches, false, 0.0, dst);
                    }
                    if let Some(gw) = gw.as_mut() {
                        let yb = &y.data()[b * in_len..(b + 1) * in_len];
                        gemm(cy, cols_n, rows, yb, false, patches, true, 1.0, gw);
                    }
                }
            });
            let mut grads = vec![gy, gw];
            if needs.len() > 2 {
                grads.push(needs[2].then(|| channel_sums(g, n, cx, out_h * out_w)));
            }
            grads
        },
    ))
}
