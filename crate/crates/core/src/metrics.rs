//! Evaluation metrics: Dice coefficient, symmetric mean surface distance,
//! and the one-sided paired-sample t-test.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::Serialize;

/// Metrics recorded after each active-learning stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: usize,
    /// Fraction of the initial pool annotated so far.
    pub pool_fraction: f64,
    pub dice_per_class: Vec<f64>,
    pub dice_mean_fg: f64,
    /// In pixels.
    pub msd_per_class: Vec<f64>,
    pub msd_mean_fg: f64,
    /// Not serialized: wall time varies between otherwise identical runs.
    #[serde(skip)]
    pub wall_time_s: f64,
}

fn check_masks(pred: &Tensor, truth: &Tensor) -> Result<(usize, usize)> {
    if pred.dims().len() != 2 || pred.dims() != truth.dims() {
        return Err(Error::shape(format!(
            "label maps must be equal rank-2 shapes, got {:?} vs {:?}",
            pred.dims(),
            truth.dims()
        )));
    }
    Ok((pred.dims()[0], pred.dims()[1]))
}

/// Dice overlap `2|P n T| / (|P| + |T|)` of the binary masks of class `cls`;
/// 1 if both masks are empty.
pub fn dice(pred: &Tensor, truth: &Tensor, cls: usize) -> Result<f64> {
    check_masks(pred, truth)?;
    let c = cls as f32;
    let mut p = 0usize;
    let mut t = 0usize;
    let mut both = 0usize;
    for (&pv, &tv) in pred.data().iter().zip(truth.data()) {
        let pin = pv == c;
        let tin = tv == c;
        p += pin as usize;
        t += tin as usize;
        both += (pin && tin) as usize;
    }
    if p + t == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (p + t) as f64)
}

/// Pixels of the class mask with at least one 4-neighbor outside the mask;
/// the image border counts as outside.
fn boundary_pixels(mask: &Tensor, cls: usize, h: usize, w: usize) -> Vec<(usize, usize)> {
    let c = cls as f32;
    let inside = |y: isize, x: isize| -> bool {
        y >= 0
            && x >= 0
            && (y as usize) < h
            && (x as usize) < w
            && mask.data()[y as usize * w + x as usize] == c
    };
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if mask.data()[y * w + x] != c {
                continue;
            }
            let (yi, xi) = (y as isize, x as isize);
            if !inside(yi - 1, xi) || !inside(yi + 1, xi) || !inside(yi, xi - 1)
                || !inside(yi, xi + 1)
            {
                out.push((y, x));
            }
        }
    }
    out
}

fn mean_nearest_distance(from: &[(usize, usize)], to: &[(usize, usize)]) -> f64 {
    let mut total = 0.0f64;
    for &(y, x) in from {
        let mut best = f64::INFINITY;
        for &(ty, tx) in to {
            let dy = y as f64 - ty as f64;
            let dx = x as f64 - tx as f64;
            let d2 = dy * dy + dx * dx;
            if d2 < best {
                best = d2;
            }
        }
        total += best.sqrt();
    }
    total / from.len() as f64
}

/// Symmetric mean surface distance between the class-`cls` boundaries, in
/// pixels. Both masks empty: 0. Exactly one empty: the image diagonal.
pub fn mean_surface_distance(pred: &Tensor, truth: &Tensor, cls: usize) -> Result<f64> {
    let (h, w) = check_masks(pred, truth)?;
    let bp = boundary_pixels(pred, cls, h, w);
    let bt = boundary_pixels(truth, cls, h, w);
    match (bp.is_empty(), bt.is_empty()) {
        (true, true) => Ok(0.0),
        (true, false) | (false, true) => Ok(((h * h + w * w) as f64).sqrt()),
        (false, false) => {
            Ok(0.5 * (mean_nearest_distance(&bp, &bt) + mean_nearest_distance(&bt, &bp)))
        }
    }
}

// ---------------------------------------------------------------------------
// Student-t machinery.
// ---------------------------------------------------------------------------

/// Lanczos approximation (g = 7, 9 terms).
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    assert!(x > 0.0, "ln_gamma domain");
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return pi.ln() - (pi * x).sin().ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn betacf(x: f64, a: f64, b: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 3e-16;
    const FPMIN: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0f64;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let mf = m as f64;
        let m2 = 2.0 * mf;
        let aa = mf * (b - mf) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + mf) * (qab + mf) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) || !(a > 0.0) || !(b > 0.0) {
        return Err(Error::input(format!(
            "incomplete beta domain violated: x={}, a={}, b={}",
            x, a, b
        )));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let ln_bt = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let bt = ln_bt.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(bt * betacf(x, a, b) / a)
    } else {
        Ok(1.0 - bt * betacf(1.0 - x, b, a) / b)
    }
}

/// Upper-tail probability of Student's t with `df` degrees of freedom.
fn student_t_upper_tail(t: f64, df: f64) -> Result<f64> {
    let x = df / (df + t * t);
    let half = 0.5 * regularized_incomplete_beta(x, 0.5 * df, 0.5)?;
    Ok(if t >= 0.0 { half } else { 1.0 - half })
}

/// One-sided paired-sample t-test with alternative `mean(a) > mean(b)`.
///
/// Returns `(t, p)` where `t = mean(d) / (sd(d) / sqrt(n))` with sample
/// standard deviation, and `p` is the upper-tail probability at `n - 1`
/// degrees of freedom.
pub fn paired_t_test_one_sided(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::input(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::input("paired t-test needs at least 2 pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    if var == 0.0 {
        return Err(Error::input("zero variance in paired differences"));
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    let p = student_t_upper_tail(t, n as f64 - 1.0)?;
    Ok((t, p))
}
