use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Tempered softmax `exp(l_i / tau) / sum_j exp(l_j / tau)`.
pub fn softmax_temp(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Contract(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::Numeric("non-finite logit".into()));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out, temperature);
    Ok(out)
}

/// Tempered softmax over a row, in place. Inputs are assumed finite.
pub(crate) fn softmax_in_place(row: &mut [f64], temperature: f64) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = ((*v - max) / temperature).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// `log sum exp` of a row.
pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
