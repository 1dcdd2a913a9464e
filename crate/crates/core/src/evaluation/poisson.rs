use crate::dataio::{BinaryMask, Frame};
use crate::error::{invalid, Error, Result};

/// Residual target of the conjugate-gradient solve, in the max norm.
pub const POISSON_TOL: f64 = 1e-9;

/// Unclamped solution of a Poisson blend, interleaved RGB like [`Frame`].
#[derive(Clone, Debug, PartialEq)]
pub struct PoissonField {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub iterations: usize,
}

impl PoissonField {
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.values[(y * self.width + x) * 3 + c]
    }

    /// Clamped to `[0, 1]`.
    pub fn to_frame(&self, index: usize) -> Result<Frame> {
        Frame::new(
            self.height,
            self.width,
            self.values.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            index,
        )
    }
}

fn check_inputs(u: &Frame, r: &Frame, mask: &BinaryMask) -> Result<()> {
    if !u.same_size(r) || !mask.same_size(u.height(), u.width()) {
        return Err(invalid(
            "Poisson blending needs a source, target and mask of one size",
        ));
    }
    if mask.count() == 0 {
        return Err(invalid("Poisson blending needs a nonempty mask"));
    }
    let (h, w) = (mask.height(), mask.width());
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x) && (y == 0 || x == 0 || y + 1 == h || x + 1 == w) {
                return Err(invalid(format!(
                    "mask touches the patch border at ({}, {})",
                    y, x
                )));
            }
        }
    }
    Ok(())
}

const NEIGHBORS: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

/// Solves `lap(out) = lap(u)` on the mask with `out = r` elsewhere, per
/// channel, by conjugate gradients on the 5-point Laplacian.
pub fn poisson_solve(
    u: &Frame,
    r: &Frame,
    mask: &BinaryMask,
    max_iter: usize,
) -> Result<PoissonField> {
    check_inputs(u, r, mask)?;
    let (h, w) = (u.height(), u.width());
    let mut index = vec![usize::MAX; h * w];
    let mut cells = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x) {
                index[y * w + x] = cells.len();
                cells.push((y, x));
            }
        }
    }
    let n = cells.len();
    // Unknown neighbors of every cell, for the matrix-vector product.
    let nbrs: Vec<Vec<usize>> = cells
        .iter()
        .map(|&(y, x)| {
            NEIGHBORS
                .iter()
                .map(|&(dy, dx)| index[(y as isize + dy) as usize * w + (x as isize + dx) as usize])
                .filter(|&j| j != usize::MAX)
                .collect()
        })
        .collect();
    let apply = |p: &[f64], out: &mut [f64]| {
        for i in 0..n {
            out[i] = 4.0 * p[i] - nbrs[i].iter().map(|&j| p[j]).sum::<f64>();
        }
    };

    let mut values = r.pixels().to_vec();
    let mut total_iters = 0;
    for c in 0..3 {
        let mut b = vec![0.0; n];
        for (i, &(y, x)) in cells.iter().enumerate() {
            let mut rhs = 4.0 * u.get(y, x, c);
            for &(dy, dx) in &NEIGHBORS {
                let (yy, xx) = ((y as isize + dy) as usize, (x as isize + dx) as usize);
                rhs -= u.get(yy, xx, c);
                if !mask.get(yy, xx) {
                    rhs += r.get(yy, xx, c);
                }
            }
            b[i] = rhs;
        }
        let mut sol: Vec<f64> = cells.iter().map(|&(y, x)| r.get(y, x, c)).collect();
        let mut ap = vec![0.0; n];
        apply(&sol, &mut ap);
        let mut res: Vec<f64> = b.iter().zip(&ap).map(|(b, a)| b - a).collect();
        let mut p = res.clone();
        let mut rr: f64 = res.iter().map(|v| v * v).sum();
        let mut it = 0;
        while res.iter().fold(0.0f64, |m, v| m.max(v.abs())) > POISSON_TOL {
            if it == max_iter {
                return Err(Error::NoConvergence {
                    iterations: max_iter,
                    residual: res.iter().fold(0.0f64, |m, v| m.max(v.abs())),
                });
            }
            apply(&p, &mut ap);
            let alpha = rr / p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
            for i in 0..n {
                sol[i] += alpha * p[i];
                res[i] -= alpha * ap[i];
            }
            let rr_new: f64 = res.iter().map(|v| v * v).sum();
            let beta = rr_new / rr;
            for i in 0..n {
                p[i] = res[i] + beta * p[i];
            }
            rr = rr_new;
            it += 1;
        }
        total_iters += it;
        for (i, &(y, x)) in cells.iter().enumerate() {
            values[(y * w + x) * 3 + c] = sol[i];
        }
    }
    Ok(PoissonField {
        height: h,
        width: w,
        values,
        iterations: total_iters,
    })
}

/// Seamless clone of `u` into `r` over the mask, clamped to `[0, 1]`.
pub fn poisson_blend(u: &Frame, r: &Frame, mask: &BinaryMask) -> Result<Frame> {
    let max_iter = 10 * mask.count() + 100;
    poisson_solve(u, r, mask, max_iter)?.to_frame(r.index())
}

/// Largest `|lap(out) - lap(u)|` over the mask cells.
pub fn poisson_residual(field: &PoissonField, u: &Frame, mask: &BinaryMask) -> f64 {
    let mut worst = 0.0f64;
    for y in 0..field.height {
        for x in 0..field.width {
            if !mask.get(y, x) {
                continue;
            }
            for c in 0..3 {
                let lap = |g: &dyn Fn(usize, usize) -> f64| {
                    4.0 * g(y, x) - g(y - 1, x) - g(y + 1, x) - g(y, x - 1) - g(y, x + 1)
                };
                let lo = lap(&|yy, xx| field.get(yy, xx, c));
                let lu = lap(&|yy, xx| u.get(yy, xx, c));
                worst = worst.max((lo - lu).abs());
            }
        }
    }
    worst
}
