//! Calibration of estimated per-feature response changes.
//!
//! A split on a generated feature gets an estimated decomposition over the
//! original features; calibration rescales it so the per-class sums equal
//! the labeled response change of the split.

use serde::{Deserialize, Serialize};

/// How the estimated decomposition is reconciled with the true change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationRule {
    /// Common scale factor `delta / sum(estimates)`.
    Multiplicative,
    /// Spread the residual proportionally to absolute estimates.
    Additive,
    /// Rescale only the entries whose sign matches the true change.
    PartialAdditive,
}

impl CalibrationRule {
    pub fn as_str(&self) -> &'static str {
        match self {
            CalibrationRule::Multiplicative => "multiplicative",
            CalibrationRule::Additive => "additive",
            CalibrationRule::PartialAdditive => "partial_additive",
        }
    }
}

impl std::str::FromStr for CalibrationRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "multiplicative" => Ok(CalibrationRule::Multiplicative),
            "additive" => Ok(CalibrationRule::Additive),
            "partial" | "partial_additive" => Ok(CalibrationRule::PartialAdditive),
            other => Err(format!(
                "unknown calibration '{other}' (expected multiplicative | additive | partial)"
            )),
        }
    }
}

/// Calibration rule plus the degenerate-denominator guard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMethod {
    pub rule: CalibrationRule,
    /// Denominators smaller than this trigger the uniform-residual fallback.
    pub epsilon: f64,
}

impl CalibrationMethod {
    pub fn new(rule: CalibrationRule) -> Self {
        Self {
            rule,
            epsilon: 1e-12,
        }
    }
}

impl Default for CalibrationMethod {
    fn default() -> Self {
        Self::new(CalibrationRule::PartialAdditive)
    }
}

/// Cap on the rescaling ratio. Larger ratios would amplify estimation noise
/// and let accumulated rounding break the per-node sum constraint, so they
/// fall back to the uniform-residual rule like a vanishing denominator.
const MAX_RESCALE_RATIO: f64 = 8.0;

/// Calibrate a flattened `K x C` matrix of estimated deltas against the true
/// per-class change `delta_true` (length `C`). Applied independently per
/// class component. The output column sums match `delta_true`.
///
/// Degenerate cases: a class with `delta_true == 0` is zeroed; an unusable
/// denominator spreads the residual uniformly over all `K` features.
pub fn calibrate(
    deltas_hat: &[f64],
    n_features: usize,
    delta_true: &[f64],
    method: &CalibrationMethod,
) -> Vec<f64> {
    let c = delta_true.len();
    debug_assert_eq!(deltas_hat.len(), n_features * c);
    let mut out = vec![0.0; n_features * c];
    let mut column = vec![0.0; n_features];
    for comp in 0..c {
        for k in 0..n_features {
            column[k] = deltas_hat[k * c + comp];
        }
        let calibrated = calibrate_column(&column, delta_true[comp], method);
        for k in 0..n_features {
            out[k * c + comp] = calibrated[k];
        }
    }
    out
}

fn calibrate_column(h: &[f64], delta: f64, method: &CalibrationMethod) -> Vec<f64> {
    let k = h.len();
    if delta == 0.0 {
        return vec![0.0; k];
    }
    let sum_hat: f64 = h.iter().sum();
    let residual = delta - sum_hat;
    if residual == 0.0 {
        return h.to_vec();
    }

    let eps = method.epsilon;
    let mut out;
    // Index set whose entries the exactness adjustment may touch.
    let adjustable: Vec<usize>;
    match method.rule {
        CalibrationRule::Multiplicative => {
            let scale = delta / sum_hat;
            if sum_hat.abs() < eps || scale.abs() > MAX_RESCALE_RATIO {
                return uniform_fallback(h, residual, delta);
            }
            out = h.iter().map(|v| v * scale).collect::<Vec<f64>>();
            adjustable = (0..k).collect();
        }
        CalibrationRule::Additive => {
            let abs_sum: f64 = h.iter().map(|v| v.abs()).sum();
            if abs_sum < eps {
                return uniform_fallback(h, residual, delta);
            }
            out = h
                .iter()
                .map(|v| v + v.abs() / abs_sum * residual)
                .collect::<Vec<f64>>();
            adjustable = (0..k).collect();
        }
        CalibrationRule::PartialAdditive => {
            let members: Vec<usize> = (0..k)
                .filter(|&i| h[i] != 0.0 && (h[i] > 0.0) == (delta > 0.0))
                .collect();
            let member_sum: f64 = members.iter().map(|&i| h[i]).sum();
            let factor = 1.0 + residual / member_sum;
            if members.is_empty() || member_sum.abs() < eps || factor.abs() > MAX_RESCALE_RATIO {
                return uniform_fallback(h, residual, delta);
            }
            out = h.to_vec();
            for &i in &members {
                out[i] = h[i] * factor;
            }
            adjustable = members;
        }
    }
    enforce_sum(&mut out, delta, &adjustable);
    out
}

/// Spread the full residual uniformly; the sum constraint still holds.
fn uniform_fallback(h: &[f64], residual: f64, delta: f64) -> Vec<f64> {
    let k = h.len();
    let share = residual / k as f64;
    let mut out: Vec<f64> = h.iter().map(|v| v + share).collect();
    let adjustable: Vec<usize> = (0..k).collect();
    enforce_sum(&mut out, delta, &adjustable);
    out
}

/// Fold the floating-point residue of the column sum into the
/// largest-magnitude adjustable entry, unless that would flip its sign.
fn enforce_sum(out: &mut [f64], delta: f64, adjustable: &[usize]) {
    let sum: f64 = out.iter().sum();
    let residue = delta - sum;
    if residue == 0.0 {
        return;
    }
    let target = adjustable
        .iter()
        .copied()
        .max_by(|&a, &b| out[a].abs().total_cmp(&out[b].abs()));
    if let Some(i) = target {
        let adjusted = out[i] + residue;
        if out[i] == 0.0 || adjusted == 0.0 || (adjusted > 0.0) == (out[i] > 0.0) {
            out[i] = adjusted;
        }
    }
}
