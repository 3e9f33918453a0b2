use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};

fn conv_shapes(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let (cin, h, wd) = x.chw()?;
    let (cout, wcin, kh, kw) = match w.dims()[..] {
        [a, b, c, d] => (a, b, c, d),
        _ => return Err(Error::Shape(format!("conv weight must be [Cout, Cin, 3, 3], got {:?}", w.dims()))),
    };
    if (kh, kw) != (3, 3) {
        return Err(Error::Shape(format!("only 3x3 kernels are supported, got {kh}x{kw}")));
    }
    if wcin != cin {
        return Err(Error::Shape(format!("input has {cin} channels, kernel expects {wcin}")));
    }
    if b.dims() != [cout] {
        return Err(Error::Shape(format!("bias dims {:?} do not match {cout} output channels", b.dims())));
    }
    if h < 3 || wd < 3 {
        return Err(Error::Shape(format!("spatial dims {h}x{wd} smaller than the kernel")));
    }
    Ok((cin, h, wd, cout))
}

/// Same-padded 3x3 convolution: `[Cin,H,W] * [Cout,Cin,3,3] + [Cout] -> [Cout,H,W]`.
pub fn conv2d(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (cin, h, wd, cout) = conv_shapes(x, w, b)?;
    let mut out = Tensor::zeros(&[cout, h, wd]);
    kernels::conv3x3_forward(x.data(), cin, h, wd, w.data(), b.data(), cout, out.data_mut());
    Ok(out)
}

/// Accumulates `out.grad` into the gradients of `x`, `w` and `b`.
pub fn conv2d_backward(x: &mut Tensor, w: &mut Tensor, b: &mut Tensor, out: &Tensor) -> Result<()> {
    let (cin, h, wd, cout) = conv_shapes(x, w, b)?;
    if out.dims() != [cout, h, wd] {
        return Err(Error::Shape(format!("output gradient dims {:?}", out.dims())));
    }
    kernels::conv3x3_backward(
        &x.data,
        cin,
        h,
        wd,
        &w.data,
        cout,
        out.grad(),
        Some(&mut x.grad),
        &mut w.grad,
        &mut b.grad,
    );
    Ok(())
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(x.dims());
    kernels::relu_forward(x.data(), out.data_mut());
    out
}

pub fn relu_backward(x: &mut Tensor, out: &Tensor) {
    kernels::relu_backward(&x.data, out.grad(), &mut x.grad);
}

pub fn maxpool2(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Dimension(format!("max pooling needs even dims, got {h}x{w}")));
    }
    let mut out = Tensor::zeros(&[c, h / 2, w / 2]);
    let mut argmax = vec![0; out.len()];
    kernels::maxpool2_forward(x.data(), c, h, w, out.data_mut(), &mut argmax);
    Ok(out)
}

/// Routes each window's gradient to its first row-major maximum.
pub fn maxpool2_backward(x: &mut Tensor, out: &Tensor) -> Result<()> {
    let (c, h, w) = x.chw()?;
    let mut pooled = vec![0.0; out.len()];
    let mut argmax = vec![0; out.len()];
    kernels::maxpool2_forward(x.data(), c, h, w, &mut pooled, &mut argmax);
    kernels::maxpool2_backward(&argmax, out.grad(), &mut x.grad);
    Ok(())
}

pub fn upsample2(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    let mut out = Tensor::zeros(&[c, 2 * h, 2 * w]);
    kernels::upsample2_forward(x.data(), c, h, w, out.data_mut());
    Ok(out)
}

pub fn upsample2_backward(x: &mut Tensor, out: &Tensor) -> Result<()> {
    let (c, h, w) = x.chw()?;
    kernels::upsample2_backward(out.grad(), c, h, w, &mut x.grad);
    Ok(())
}

/// Stacks `b`'s channels after `a`'s. A `None` second operand stands for a
/// zero-channel tensor.
pub fn concat_channels(a: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let (ca, h, w) = a.chw()?;
    let Some(b) = b else { return Ok(Tensor::from_vec(a.dims(), a.data().to_vec())?) };
    let (cb, hb, wb) = b.chw()?;
    if (h, w) != (hb, wb) {
        return Err(Error::Shape(format!("cannot concat {h}x{w} with {hb}x{wb}")));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::from_vec(&[ca + cb, h, w], data)
}

pub fn concat_backward(a: &mut Tensor, b: &mut Tensor, out: &Tensor) -> Result<()> {
    if out.len() != a.len() + b.len() {
        return Err(Error::Shape("concat gradient does not cover both operands".into()));
    }
    let (ga, gb) = out.grad().split_at(a.len());
    for (g, v) in a.grad.iter_mut().zip(ga) {
        *g += v;
    }
    for (g, v) in b.grad.iter_mut().zip(gb) {
        *g += v;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::{finite_diff_grad, tolerance_ratio};
    use super::*;
    use crate::synth::seeded_rng;
    use rand::Rng;

    fn random(dims: &[usize], seed: u64) -> Tensor {
        let mut rng = seeded_rng(seed, 99);
        let n = dims.iter().product();
        Tensor::from_vec(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Random linear functional `Σ c_i y_i` used to turn an op into a scalar.
    fn probe(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = seeded_rng(seed, 7);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn weighted_sum(t: &Tensor, c: &[f64]) -> f64 {
        t.data().iter().zip(c).map(|(a, b)| a * b).sum()
    }

    fn with_grad(mut out: Tensor, c: &[f64]) -> Tensor {
        out.grad_mut().copy_from_slice(c);
        out
    }

    #[test]
    fn conv_identity_kernel() {
        let x = random(&[1, 5, 6], 1);
        let mut w = Tensor::zeros(&[1, 1, 3, 3]);
        w.data_mut()[4] = 1.0;
        let out = conv2d(&x, &w, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn conv_all_ones_kernel_on_constant() {
        let x = Tensor::filled(&[1, 5, 5], 2.5);
        let w = Tensor::filled(&[1, 1, 3, 3], 1.0);
        let out = conv2d(&x, &w, &Tensor::zeros(&[1])).unwrap();
        for y in 1..4 {
            for xx in 1..4 {
                assert_eq!(out.data()[y * 5 + xx], 22.5);
            }
        }
        // Corners see only four taps.
        assert_eq!(out.data()[0], 10.0);
    }

    #[test]
    fn conv_shape_errors() {
        let x = Tensor::zeros(&[2, 4, 4]);
        assert!(conv2d(&x, &Tensor::zeros(&[1, 3, 3, 3]), &Tensor::zeros(&[1])).is_err());
        assert!(conv2d(&x, &Tensor::zeros(&[1, 2, 3, 3]), &Tensor::zeros(&[2])).is_err());
        assert!(conv2d(&x, &Tensor::zeros(&[1, 2, 5, 5]), &Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        for seed in 0..20 {
            let x = random(&[2, 6, 6], seed);
            let w = random(&[3, 2, 3, 3], seed + 100);
            let b = random(&[3], seed + 200);
            let c = probe(3 * 36, seed);
            let (mut xg, mut wg, mut bg) = (x.clone(), w.clone(), b.clone());
            let out = with_grad(conv2d(&x, &w, &b).unwrap(), &c);
            conv2d_backward(&mut xg, &mut wg, &mut bg, &out).unwrap();
            let fx = finite_diff_grad(|t| weighted_sum(&conv2d(t, &w, &b).unwrap(), &c), &x, 1e-5);
            let fw = finite_diff_grad(|t| weighted_sum(&conv2d(&x, t, &b).unwrap(), &c), &w, 1e-5);
            let fb = finite_diff_grad(|t| weighted_sum(&conv2d(&x, &w, t).unwrap(), &c), &b, 1e-5);
            assert!(tolerance_ratio(xg.grad(), fx.data(), 1e-4, 1e-6) <= 1.0);
            assert!(tolerance_ratio(wg.grad(), fw.data(), 1e-4, 1e-6) <= 1.0);
            assert!(tolerance_ratio(bg.grad(), fb.data(), 1e-4, 1e-6) <= 1.0);
        }
    }

    #[test]
    fn relu_examples() {
        let neg = Tensor::filled(&[1, 2, 2], -3.0);
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
        let pos = random(&[1, 3, 3], 4);
        let pos = Tensor::from_vec(pos.dims(), pos.data().iter().map(|v| v.abs() + 0.1).collect()).unwrap();
        assert_eq!(relu(&pos).data(), pos.data());
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut x = Tensor::zeros(&[1, 1, 3]);
        let mut out = relu(&x);
        out.grad_mut().fill(1.0);
        relu_backward(&mut x, &out);
        assert!(x.grad().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn relu_gradients_match_finite_differences() {
        for seed in 0..20 {
            let x = random(&[2, 4, 5], seed);
            let c = probe(40, seed);
            let mut xg = x.clone();
            relu_backward(&mut xg, &with_grad(relu(&x), &c));
            let fx = finite_diff_grad(|t| weighted_sum(&relu(t), &c), &x, 1e-5);
            for i in 0..x.len() {
                if x.data()[i].abs() > 1e-6 {
                    assert!((xg.grad()[i] - fx.data()[i]).abs() <= 1e-4 * fx.data()[i].abs().max(1e-2));
                }
            }
        }
    }

    #[test]
    fn maxpool_examples() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(maxpool2(&x).unwrap().data(), &[4.0]);
        let mut c = Tensor::filled(&[1, 4, 4], 7.0);
        let mut out = maxpool2(&c).unwrap();
        assert!(out.data().iter().all(|&v| v == 7.0));
        out.grad_mut().fill(1.0);
        maxpool2_backward(&mut c, &out).unwrap();
        let expected: Vec<f64> = (0..16).map(|i| if (i / 4) % 2 == 0 && i % 2 == 0 { 1.0 } else { 0.0 }).collect();
        assert_eq!(c.grad(), &expected[..]);
        assert!(maxpool2(&Tensor::zeros(&[1, 3, 4])).is_err());
    }

    #[test]
    fn maxpool_gradients_match_finite_differences() {
        for seed in 0..20 {
            let x = random(&[3, 8, 8], seed);
            let c = probe(48, seed);
            let mut xg = x.clone();
            maxpool2_backward(&mut xg, &with_grad(maxpool2(&x).unwrap(), &c)).unwrap();
            let fx = finite_diff_grad(|t| weighted_sum(&maxpool2(t).unwrap(), &c), &x, 1e-5);
            assert!(tolerance_ratio(xg.grad(), fx.data(), 1e-4, 1e-6) <= 1.0);
        }
    }

    #[test]
    fn upsample_examples() {
        let x = Tensor::from_vec(&[1, 1, 2], vec![0.0, 2.0]).unwrap();
        // Upsampling doubles both axes; the single row is duplicated.
        let out = upsample2(&x).unwrap();
        assert_eq!(out.dims(), &[1, 2, 4]);
        assert_eq!(&out.data()[..4], &[0.0, 0.5, 1.5, 2.0]);
        assert_eq!(&out.data()[4..], &[0.0, 0.5, 1.5, 2.0]);
        let c = Tensor::filled(&[2, 3, 5], -1.25);
        assert!(upsample2(&c).unwrap().data().iter().all(|&v| v == -1.25));
    }

    #[test]
    fn upsample_gradients_match_finite_differences() {
        for seed in 0..20 {
            let x = random(&[2, 3, 4], seed);
            let c = probe(2 * 6 * 8, seed);
            let mut xg = x.clone();
            upsample2_backward(&mut xg, &with_grad(upsample2(&x).unwrap(), &c)).unwrap();
            let fx = finite_diff_grad(|t| weighted_sum(&upsample2(t).unwrap(), &c), &x, 1e-5);
            assert!(tolerance_ratio(xg.grad(), fx.data(), 1e-4, 1e-6) <= 1.0);
        }
    }

    #[test]
    fn pool_then_upsample_keeps_constants() {
        let c = Tensor::filled(&[3, 8, 6], 4.5);
        let round = upsample2(&maxpool2(&c).unwrap()).unwrap();
        assert_eq!(round, c);
    }

    #[test]
    fn concat_examples() {
        let a = random(&[3, 4, 4], 1);
        let b = random(&[5, 4, 4], 2);
        assert_eq!(concat_channels(&a, None).unwrap(), a);
        let mut out = concat_channels(&a, Some(&b)).unwrap();
        assert_eq!(out.dims(), &[8, 4, 4]);
        assert!(concat_channels(&a, Some(&random(&[1, 4, 5], 3))).is_err());
        let g = probe(out.len(), 5);
        out.grad_mut().copy_from_slice(&g);
        let (mut ag, mut bg) = (a.clone(), b.clone());
        concat_backward(&mut ag, &mut bg, &out).unwrap();
        let mut joined = ag.grad().to_vec();
        joined.extend_from_slice(bg.grad());
        assert_eq!(joined, g);
    }
}
