//! Convolution kernels over `[N, C, D, H, W]` volumes via im2col + gemm.
//!
//! Two-dimensional convolutions are the `D = 1`, unit-depth-kernel case.
//! Transposed convolution is the adjoint of convolution, so both share the
//! same im2col/col2im machinery.

use crate::gemm::gemm;
use crate::tensor::Tensor;

/// Stride and zero padding along (depth, height, width).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvSpec {
    pub fn new2d(stride: usize, pad: usize) -> Self {
        Self {
            stride: [1, stride, stride],
            pad: [0, pad, pad],
        }
    }

    pub fn new3d(stride: [usize; 3], pad: [usize; 3]) -> Self {
        Self { stride, pad }
    }
}

/// Output extent of a convolution along one axis, if the window fits.
pub fn conv_output_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output extent of a transposed convolution along one axis.
pub fn conv_transpose_output_len(
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Option<usize> {
    ((input.checked_sub(1)?) * stride + kernel).checked_sub(2 * pad)
}

/// Geometry of a forward convolution `[cin, input] -> [cout, output]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Geometry {
    pub cin: usize,
    pub cout: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub output: [usize; 3],
    pub spec: ConvSpec,
}

impl Geometry {
    fn new(cin: usize, cout: usize, input: [usize; 3], kernel: [usize; 3], spec: ConvSpec) -> Self {
        let mut output = [0; 3];
        for a in 0..3 {
            output[a] = conv_output_len(input[a], kernel[a], spec.stride[a], spec.pad[a])
                .unwrap_or_else(|| {
                    panic!(
                        "kernel {:?} with {:?} does not fit input {:?}",
                        kernel, spec, input
                    )
                });
        }
        Self {
            cin,
            cout,
            input,
            kernel,
            output,
            spec,
        }
    }

    fn rows(&self) -> usize {
        self.cin * self.kernel.iter().product::<usize>()
    }

    fn positions(&self) -> usize {
        self.output.iter().product()
    }

    fn in_len(&self) -> usize {
        self.cin * self.input.iter().product::<usize>()
    }

    fn out_len(&self) -> usize {
        self.cout * self.positions()
    }
}

fn dims5(t: &Tensor) -> [usize; 5] {
    let s = t.shape();
    assert_eq!(s.len(), 5, "expected a [N, C, D, H, W] tensor, got {:?}", s);
    [s[0], s[1], s[2], s[3], s[4]]
}

/// Source index along one axis for output position `o` and kernel tap `k`,
/// or `None` when it falls in the zero padding.
#[inline]
fn src(o: usize, k: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
    let i = (o * stride + k).checked_sub(pad)?;
    (i < len).then_some(i)
}

fn im2col(g: &Geometry, x: &[f64], col: &mut [f64]) {
    let [kd, kh, kw] = g.kernel;
    let [id, ih, iw] = g.input;
    let [od, oh, ow] = g.output;
    let [sd, sh, sw] = g.spec.stride;
    let [pd, ph, pw] = g.spec.pad;
    let p = g.positions();
    let plane = ih * iw;
    let vol = id * plane;
    for c in 0..g.cin {
        let xc = &x[c * vol..(c + 1) * vol];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let row = ((c * kd + a) * kh + b) * kw + e;
                    let dst = &mut col[row * p..(row + 1) * p];
                    let mut idx = 0;
                    for z in 0..od {
                        let sz = src(z, a, sd, pd, id);
                        for y in 0..oh {
                            let sy = match sz {
                                Some(_) => src(y, b, sh, ph, ih),
                                None => None,
                            };
                            match (sz, sy) {
                                (Some(zz), Some(yy)) => {
                                    let base = zz * plane + yy * iw;
                                    for xo in 0..ow {
                                        dst[idx] = match src(xo, e, sw, pw, iw) {
                                            Some(xx) => xc[base + xx],
                                            None => 0.0,
                                        };
                                        idx += 1;
                                    }
                                }
                                _ => {
                                    dst[idx..idx + ow].fill(0.0);
                                    idx += ow;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im(g: &Geometry, col: &[f64], x: &mut [f64]) {
    let [kd, kh, kw] = g.kernel;
    let [id, ih, iw] = g.input;
    let [od, oh, ow] = g.output;
    let [sd, sh, sw] = g.spec.stride;
    let [pd, ph, pw] = g.spec.pad;
    let p = g.positions();
    let plane = ih * iw;
    let vol = id * plane;
    for c in 0..g.cin {
        let xc = &mut x[c * vol..(c + 1) * vol];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let row = ((c * kd + a) * kh + b) * kw + e;
                    let srcrow = &col[row * p..(row + 1) * p];
                    let mut idx = 0;
                    for z in 0..od {
                        let sz = src(z, a, sd, pd, id);
                        for y in 0..oh {
                            let sy = match sz {
                                Some(_) => src(y, b, sh, ph, ih),
                                None => None,
                            };
                            if let (Some(zz), Some(yy)) = (sz, sy) {
                                let base = zz * plane + yy * iw;
                                for xo in 0..ow {
                                    if let Some(xx) = src(xo, e, sw, pw, iw) {
                                        xc[base + xx] += srcrow[idx];
                                    }
                                    idx += 1;
                                }
                            } else {
                                idx += ow;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn kernel3(w: &Tensor) -> [usize; 3] {
    let s = w.shape();
    assert_eq!(s.len(), 5, "expected a 5-d weight, got {:?}", s);
    [s[2], s[3], s[4]]
}

/// Forward convolution. `x: [N, Cin, D, H, W]`, `w: [Cout, Cin, kd, kh, kw]`.
pub fn conv_forward(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, spec: ConvSpec) -> Tensor {
    let [n, cin, d, h, wd] = dims5(x);
    let ws = w.shape();
    assert_eq!(
        ws[1], cin,
        "weight expects {} input channels, got {}",
        ws[1], cin
    );
    let g = Geometry::new(cin, ws[0], [d, h, wd], kernel3(w), spec);
    let (k, p) = (g.rows(), g.positions());
    let mut out = vec![0.0; n * g.out_len()];
    let mut col = vec![0.0; k * p];
    for s in 0..n {
        im2col(
            &g,
            &x.data()[s * g.in_len()..(s + 1) * g.in_len()],
            &mut col,
        );
        let ys = &mut out[s * g.out_len()..(s + 1) * g.out_len()];
        gemm(g.cout, k, p, w.data(), false, &col, false, 0.0, ys);
        if let Some(b) = bias {
            for (co, chunk) in ys.chunks_mut(p).enumerate() {
                let bv = b.data()[co];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    let [od, oh, ow] = g.output;
    Tensor::new(&[n, g.cout, od, oh, ow], out)
}

/// Gradient of [`conv_forward`] with respect to its input.
pub fn conv_backward_input(
    gy: &Tensor,
    w: &Tensor,
    input_shape: &[usize],
    spec: ConvSpec,
) -> Tensor {
    let [n, cin, d, h, wd] = [
        input_shape[0],
        input_shape[1],
        input_shape[2],
        input_shape[3],
        input_shape[4],
    ];
    let g = Geometry::new(cin, w.shape()[0], [d, h, wd], kernel3(w), spec);
    let (k, p) = (g.rows(), g.positions());
    let mut dx = vec![0.0; n * g.in_len()];
    let mut col = vec![0.0; k * p];
    for s in 0..n {
        let gys = &gy.data()[s * g.out_len()..(s + 1) * g.out_len()];
        gemm(k, g.cout, p, w.data(), true, gys, false, 0.0, &mut col);
        col2im(&g, &col, &mut dx[s * g.in_len()..(s + 1) * g.in_len()]);
    }
    Tensor::new(input_shape, dx)
}

/// Gradient of [`conv_forward`] with respect to its weight.
pub fn conv_backward_weight(x: &Tensor, gy: &Tensor, w_shape: &[usize], spec: ConvSpec) -> Tensor {
    let [n, cin, d, h, wd] = dims5(x);
    let kernel = [w_shape[2], w_shape[3], w_shape[4]];
    let g = Geometry::new(cin, w_shape[0], [d, h, wd], kernel, spec);
    let (k, p) = (g.rows(), g.positions());
    let mut dw = vec![0.0; g.cout * k];
    let mut col = vec![0.0; k * p];
    for s in 0..n {
        im2col(
            &g,
            &x.data()[s * g.in_len()..(s + 1) * g.in_len()],
            &mut col,
        );
        let gys = &gy.data()[s * g.out_len()..(s + 1) * g.out_len()];
        gemm(g.cout, p, k, gys, false, &col, true, 1.0, &mut dw);
    }
    Tensor::new(w_shape, dw)
}

/// Sum of a `[N, C, ...]` gradient over everything but the channel axis.
pub fn bias_grad(gy: &Tensor) -> Tensor {
    let s = gy.shape();
    let (n, c) = (s[0], s[1]);
    let p: usize = s[2..].iter().product();
    let mut db = vec![0.0; c];
    for smp in 0..n {
        for (ch, acc) in db.iter_mut().enumerate() {
            let base = (smp * c + ch) * p;
            *acc += gy.data()[base..base + p].iter().sum::<f64>();
        }
    }
    Tensor::new(&[c], db)
}

fn transpose_geometry(x: &Tensor, w: &Tensor, spec: ConvSpec) -> (usize, Geometry) {
    let [n, ci, d, h, wd] = dims5(x);
    let ws = w.shape();
    assert_eq!(
        ws[0], ci,
        "transposed weight expects {} input channels, got {}",
        ws[0], ci
    );
    let kernel = kernel3(w);
    let tin = [d, h, wd];
    let mut out = [0; 3];
    for a in 0..3 {
        out[a] = conv_transpose_output_len(tin[a], kernel[a], spec.stride[a], spec.pad[a])
            .unwrap_or_else(|| {
                panic!("transposed kernel {:?} invalid for input {:?}", kernel, tin)
            });
    }
    // The adjoint convolution maps the transposed output back to its input.
    let g = Geometry::new(ws[1], ci, out, kernel, spec);
    assert_eq!(
        g.output, tin,
        "transposed convolution geometry is not invertible"
    );
    (n, g)
}

/// Transposed convolution. `x: [N, Ci, D, H, W]`, `w: [Ci, Co, kd, kh, kw]`.
pub fn conv_transpose_forward(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    spec: ConvSpec,
) -> Tensor {
    let (n, g) = transpose_geometry(x, w, spec);
    let (k, p) = (g.rows(), g.positions());
    let mut out = vec![0.0; n * g.in_len()];
    let mut col = vec![0.0; k * p];
    for s in 0..n {
        let xs = &x.data()[s * g.out_len()..(s + 1) * g.out_len()];
        gemm(k, g.cout, p, w.data(), true, xs, false, 0.0, &mut col);
        let ys = &mut out[s * g.in_len()..(s + 1) * g.in_len()];
        col2im(&g, &col, ys);
        if let Some(b) = bias {
            let vol: usize = g.input.iter().product();
            for (co, chunk) in ys.chunks_mut(vol).enumerate() {
                let bv = b.data()[co];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    let [od, oh, ow] = g.input;
    Tensor::new(&[n, g.cin, od, oh, ow], out)
}

/// Gradients of [`conv_transpose_forward`] with respect to input and weight.
pub fn conv_transpose_backward(
    x: &Tensor,
    w: &Tensor,
    gy: &Tensor,
    spec: ConvSpec,
    want_input: bool,
    want_weight: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let (n, g) = transpose_geometry(x, w, spec);
    let (k, p) = (g.rows(), g.positions());
    let mut dx = want_input.then(|| vec![0.0; n * g.out_len()]);
    let mut dw = want_weight.then(|| vec![0.0; g.cout * k]);
    let mut col = vec![0.0; k * p];
    for s in 0..n {
        im2col(
            &g,
            &gy.data()[s * g.in_len()..(s + 1) * g.in_len()],
            &mut col,
        );
        if let Some(dx) = dx.as_mut() {
            let dxs = &mut dx[s * g.out_len()..(s + 1) * g.out_len()];
            gemm(g.cout, k, p, w.data(), false, &col, false, 0.0, dxs);
        }
        if let Some(dw) = dw.as_mut() {
            let xs = &x.data()[s * g.out_len()..(s + 1) * g.out_len()];
            gemm(g.cout, p, k, xs, false, &col, true, 1.0, dw);
        }
    }
    (
        dx.map(|d| Tensor::new(x.shape(), d)),
        dw.map(|d| Tensor::new(w.shape(), d)),
    )
}
