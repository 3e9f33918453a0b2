//! Post-hoc temperature scaling on the validation split.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::Sample;
use crate::tensor::softmax_cross_entropy;
use crate::unet::ModelState;

pub const LN_T_MIN: f64 = -2.995_732_273_553_991; // ln 0.05
pub const LN_T_MAX: f64 = 2.995_732_273_553_991; // ln 20
pub const LN_T_TOL: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFit {
    pub temperature: f64,
    pub nll_at_one: f64,
    pub nll_fitted: f64,
}

/// Mean cross-entropy of `logits / t` against `labels`.
pub fn mean_nll(logits: &[Vec<f64>], labels: &[usize], t: f64) -> Result<f64> {
    let mut total = 0.0;
    for (z, &y) in logits.iter().zip(labels) {
        let scaled: Vec<f64> = z.iter().map(|v| v / t).collect();
        total += softmax_cross_entropy(&scaled, y)?.0;
    }
    Ok(total / logits.len() as f64)
}

/// Golden-section search on `ln T` over `[ln 0.05, ln 20]`. The NLL is convex
/// in `1/T`, hence unimodal in `ln T`. T = 1 is kept if it scores at least as
/// well as the search result.
pub fn fit_temperature_logits(logits: &[Vec<f64>], labels: &[usize]) -> Result<CalibrationFit> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "need matching nonempty logits and labels, got {} and {}",
            logits.len(),
            labels.len()
        )));
    }
    let f = |ln_t: f64| mean_nll(logits, labels, ln_t.exp());
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (LN_T_MIN, LN_T_MAX);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while b - a >= LN_T_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d)?;
        }
    }
    let t = ((a + b) / 2.0).exp();
    let nll_at_one = mean_nll(logits, labels, 1.0)?;
    let nll_t = mean_nll(logits, labels, t)?;
    let (temperature, nll_fitted) = if nll_t < nll_at_one { (t, nll_t) } else { (1.0, nll_at_one) };
    if !nll_fitted.is_finite() {
        return Err(Error::NonFinite("validation NLL during temperature fit".into()));
    }
    Ok(CalibrationFit { temperature, nll_at_one, nll_fitted })
}

/// Fits the temperature on `val` without touching the model.
pub fn temperature_fit(model: &ModelState, val: &[&Sample]) -> Result<CalibrationFit> {
    if val.is_empty() {
        return Err(Error::InvalidArgument("temperature fit needs validation samples".into()));
    }
    let logits = val.iter().map(|s| Ok(model.forward(&s.field)?.into_data())).collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = val.iter().map(|s| s.label_cell.flat).collect();
    fit_temperature_logits(&logits, &labels)
}

/// Copy of `model` with its temperature fitted on `val`.
pub fn fit_temperature(model: &ModelState, val: &[&Sample]) -> Result<ModelState> {
    let fit = temperature_fit(model, val)?;
    let mut out = model.clone();
    out.temperature = fit.temperature;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::seeded_rng;
    use crate::tensor::softmax;
    use crate::unet::argmax;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn sample_class(p: &[f64], u: f64) -> usize {
        let mut acc = 0.0;
        for (i, &pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                return i;
            }
        }
        p.len() - 1
    }

    /// Logits drawn as N(0, sigma^2) with labels sampled from their softmax.
    fn gaussian_problem(n: usize, k: usize, sigma: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = seeded_rng(seed, 0);
        let normal = Normal::new(0.0, sigma).unwrap();
        let mut logits = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let z: Vec<f64> = (0..k).map(|_| normal.sample(&mut rng)).collect();
            labels.push(sample_class(&softmax(&z), rng.random()));
            logits.push(z);
        }
        (logits, labels)
    }

    #[test]
    fn calibrated_smoothed_one_hot_fits_near_one() {
        let (k, n) = (10, 20_000);
        let mut rng = seeded_rng(11, 0);
        let mut logits = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let top = rng.random_range(0..k);
            let p: Vec<f64> = (0..k).map(|i| if i == top { 0.7 } else { 0.3 / (k - 1) as f64 }).collect();
            labels.push(sample_class(&p, rng.random()));
            logits.push(p.iter().map(|x| x.ln()).collect());
        }
        let fit = fit_temperature_logits(&logits, &labels).unwrap();
        assert!((fit.temperature - 1.0).abs() < 0.05, "{fit:?}");
    }

    #[test]
    fn overconfident_logits_fit_near_three() {
        let (logits, labels) = gaussian_problem(4000, 20, 2.0, 3);
        let sharp: Vec<Vec<f64>> = logits.iter().map(|z| z.iter().map(|v| 3.0 * v).collect()).collect();
        let fit = fit_temperature_logits(&sharp, &labels).unwrap();
        assert!((2.5..=3.5).contains(&fit.temperature), "{fit:?}");
        assert!(fit.nll_fitted <= fit.nll_at_one);
    }

    #[test]
    fn doubling_logits_doubles_temperature() {
        let (logits, labels) = gaussian_problem(2000, 12, 1.5, 5);
        let base: Vec<Vec<f64>> = logits.iter().map(|z| z.iter().map(|v| 1.4 * v).collect()).collect();
        let doubled: Vec<Vec<f64>> = base.iter().map(|z| z.iter().map(|v| 2.0 * v).collect()).collect();
        let t1 = fit_temperature_logits(&base, &labels).unwrap().temperature;
        let t2 = fit_temperature_logits(&doubled, &labels).unwrap().temperature;
        assert!((t2 / (2.0 * t1) - 1.0).abs() < 1e-3, "{t1} {t2}");
    }

    #[test]
    fn fitted_nll_never_worse_and_argmax_unchanged() {
        for seed in 0..5 {
            let (logits, labels) = gaussian_problem(300, 8, 0.5 + seed as f64, seed);
            let fit = fit_temperature_logits(&logits, &labels).unwrap();
            assert!(fit.nll_fitted <= fit.nll_at_one + 1e-12);
            for z in &logits {
                let scaled: Vec<f64> = z.iter().map(|v| v / fit.temperature).collect();
                assert_eq!(argmax(&scaled), argmax(z));
            }
        }
    }

    #[test]
    fn rejects_empty_input() {
        assert!(fit_temperature_logits(&[], &[]).is_err());
    }
}
