//! Slice-level forward and backward kernels over `[C, H, W]` row-major
//! planes. Backward kernels accumulate (`+=`) into their gradient outputs.

/// `out[i] += k * x[i]`
#[inline]
fn axpy(out: &mut [f64], k: f64, x: &[f64]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += k * v;
    }
}

/// Dot product with a fixed four-lane accumulation order.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Adds the three horizontal taps of one kernel row: `orow[x] += Σ k[t]·irow[x+t-1]`.
#[inline]
fn taps_forward(orow: &mut [f64], irow: &[f64], k: &[f64]) {
    let w = orow.len();
    axpy(&mut orow[1..], k[0], &irow[..w - 1]);
    axpy(orow, k[1], irow);
    axpy(&mut orow[..w - 1], k[2], &irow[1..]);
}

/// 3x3 cross-correlation, zero padding 1, stride 1.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_forward(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    bias: &[f64],
    cout: usize,
    out: &mut [f64],
) {
    let hw = h * w;
    debug_assert_eq!(x.len(), cin * hw);
    debug_assert_eq!(weight.len(), cout * cin * 9);
    debug_assert_eq!(out.len(), cout * hw);
    for co in 0..cout {
        let o = &mut out[co * hw..(co + 1) * hw];
        o.fill(bias[co]);
        for ci in 0..cin {
            let xin = &x[ci * hw..(ci + 1) * hw];
            let k = &weight[(co * cin + ci) * 9..(co * cin + ci + 1) * 9];
            for y in 0..h {
                let orow = &mut o[y * w..(y + 1) * w];
                for ky in 0..3 {
                    let Some(yy) = (y + ky).checked_sub(1).filter(|&yy| yy < h) else { continue };
                    taps_forward(orow, &xin[yy * w..(yy + 1) * w], &k[ky * 3..ky * 3 + 3]);
                }
            }
        }
    }
}

/// Backward of [`conv3x3_forward`]. `grad_x` may be skipped when the input
/// needs no gradient.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_backward(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    cout: usize,
    grad_out: &[f64],
    mut grad_x: Option<&mut [f64]>,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) {
    let hw = h * w;
    for co in 0..cout {
        let go = &grad_out[co * hw..(co + 1) * hw];
        grad_b[co] += go.iter().sum::<f64>();
        for ci in 0..cin {
            let xin = &x[ci * hw..(ci + 1) * hw];
            let base = (co * cin + ci) * 9;
            let k = &weight[base..base + 9];
            let gk = &mut grad_w[base..base + 9];
            for ky in 0..3 {
                for y in 0..h {
                    let Some(yy) = (y + ky).checked_sub(1).filter(|&yy| yy < h) else { continue };
                    let gorow = &go[y * w..(y + 1) * w];
                    let irow = &xin[yy * w..(yy + 1) * w];
                    gk[ky * 3] += dot(&gorow[1..], &irow[..w - 1]);
                    gk[ky * 3 + 1] += dot(gorow, irow);
                    gk[ky * 3 + 2] += dot(&gorow[..w - 1], &irow[1..]);
                    if let Some(gx) = grad_x.as_deref_mut() {
                        let girow = &mut gx[ci * hw + yy * w..ci * hw + (yy + 1) * w];
                        axpy(&mut girow[..w - 1], k[ky * 3], &gorow[1..]);
                        axpy(girow, k[ky * 3 + 1], gorow);
                        axpy(&mut girow[1..], k[ky * 3 + 2], &gorow[..w - 1]);
                    }
                }
            }
        }
    }
}

pub fn relu_forward(x: &[f64], out: &mut [f64]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = v.max(0.0);
    }
}

/// Passes gradient where the forward input (equivalently, output) was positive.
pub fn relu_backward(activation: &[f64], grad_out: &[f64], grad_x: &mut [f64]) {
    for ((g, &go), &a) in grad_x.iter_mut().zip(grad_out).zip(activation) {
        if a > 0.0 {
            *g += go;
        }
    }
}

/// 2x2 max pooling. `argmax` receives, per output element, the flat input
/// index of the first row-major maximum of its window.
pub fn maxpool2_forward(x: &[f64], c: usize, h: usize, w: usize, out: &mut [f64], argmax: &mut [usize]) {
    let (oh, ow) = (h / 2, w / 2);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let base = ch * h * w + 2 * oy * w + 2 * ox;
                let mut best = base;
                for idx in [base + 1, base + w, base + w + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                let o = ch * oh * ow + oy * ow + ox;
                out[o] = x[best];
                argmax[o] = best;
            }
        }
    }
}

pub fn maxpool2_backward(argmax: &[usize], grad_out: &[f64], grad_x: &mut [f64]) {
    for (&i, &g) in argmax.iter().zip(grad_out) {
        grad_x[i] += g;
    }
}

/// Source taps `(i0, i1, weight of i1)` for each of the `2n` output
/// positions along one axis under half-pixel-center bilinear sampling.
pub fn upsample_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|i| {
            let s = ((i as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

pub fn upsample2_forward(x: &[f64], c: usize, h: usize, w: usize, out: &mut [f64]) {
    let (rows, cols) = (upsample_taps(h), upsample_taps(w));
    let (oh, ow) = (2 * h, 2 * w);
    for ch in 0..c {
        let xin = &x[ch * h * w..(ch + 1) * h * w];
        let o = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for (i, &(r0, r1, fr)) in rows.iter().enumerate() {
            for (j, &(c0, c1, fc)) in cols.iter().enumerate() {
                o[i * ow + j] = (1.0 - fr) * ((1.0 - fc) * xin[r0 * w + c0] + fc * xin[r0 * w + c1])
                    + fr * ((1.0 - fc) * xin[r1 * w + c0] + fc * xin[r1 * w + c1]);
            }
        }
    }
}

/// Transpose of [`upsample2_forward`]: scatters each output gradient back
/// onto its four source pixels with the same weights.
pub fn upsample2_backward(grad_out: &[f64], c: usize, h: usize, w: usize, grad_x: &mut [f64]) {
    let (rows, cols) = (upsample_taps(h), upsample_taps(w));
    let (oh, ow) = (2 * h, 2 * w);
    for ch in 0..c {
        let go = &grad_out[ch * oh * ow..(ch + 1) * oh * ow];
        let gx = &mut grad_x[ch * h * w..(ch + 1) * h * w];
        for (i, &(r0, r1, fr)) in rows.iter().enumerate() {
            for (j, &(c0, c1, fc)) in cols.iter().enumerate() {
                let g = go[i * ow + j];
                gx[r0 * w + c0] += (1.0 - fr) * (1.0 - fc) * g;
                gx[r0 * w + c1] += (1.0 - fr) * fc * g;
                gx[r1 * w + c0] += fr * (1.0 - fc) * g;
                gx[r1 * w + c1] += fr * fc * g;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..11).map(|i| 3.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn upsample_taps_half_pixel() {
        let taps = upsample_taps(2);
        let pos: Vec<f64> = taps.iter().map(|&(i0, _, f)| i0 as f64 + f).collect();
        assert_eq!(pos, vec![0.0, 0.25, 0.75, 1.0]);
    }
}
