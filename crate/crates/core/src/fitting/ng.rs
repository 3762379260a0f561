//! Offset charge from the splitting of a parity pair.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NgEstimate {
    /// Offset charge in [0, 1/4].
    pub ng: f64,
    /// First-order standard error; infinite at the arccos branch points.
    pub uncertainty: f64,
    /// |cos 2πn_g| > 0.98 or < 0.1.
    pub high_uncertainty: bool,
}

/// n_g = arccos(separation / δ_c) / 2π for a parity pair split by `separation`.
///
/// `sigma_sep` and `sigma_dc` are the standard errors of the inputs.
pub fn extract_ng(separation: f64, dc: f64, sigma_sep: f64, sigma_dc: f64) -> Result<NgEstimate> {
    if !(dc.is_finite() && dc > 0.0) {
        return Err(Error::invalid(format!("dc must be > 0, got {dc}")));
    }
    if !(sigma_sep >= 0.0 && sigma_dc >= 0.0) {
        return Err(Error::invalid("uncertainties must be >= 0"));
    }
    let s = separation.abs();
    let x = s / dc;
    let sigma_x = ((sigma_sep / dc).powi(2) + (x * sigma_dc / dc).powi(2)).sqrt();
    if x > 1.0 + 3.0 * sigma_x {
        return Err(Error::invalid(format!(
            "separation {s} exceeds dc {dc} beyond 3σ"
        )));
    }
    let x = x.min(1.0);
    let ng = x.acos() / (2.0 * PI);
    let slope = 1.0 / (2.0 * PI * (1.0 - x * x).sqrt());
    let uncertainty = if sigma_x == 0.0 { 0.0 } else { slope * sigma_x };
    Ok(NgEstimate {
        ng,
        uncertainty,
        high_uncertainty: !(0.1..=0.98).contains(&x),
    })
}

/// Difference b − a of two offset charges with combined uncertainty.
pub fn delta_ng(a: &NgEstimate, b: &NgEstimate) -> (f64, f64) {
    (b.ng - a.ng, a.uncertainty.hypot(b.uncertainty))
}
