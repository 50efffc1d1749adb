//! Piecewise-linear concave curves built from a family of hyperplanes.
//!
//! A fitted density-flow curve is the lower envelope (pointwise minimum)
//! of the per-observation hyperplanes returned by the estimators. The
//! curve keeps every deduplicated hyperplane as one piece; breakpoints
//! are the intersections of slope-adjacent hyperplanes. Evaluation is
//! always the minimum over all pieces, so the curve is concave by
//! construction even when published rounded coefficients leave a piece
//! without an active interval.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CurveError {
    #[error("at least one hyperplane is required")]
    Empty,
    #[error("hyperplane coefficients must be finite")]
    NonFinite,
    #[error("curve evaluation requires k >= 0, got {0}")]
    NegativeDensity(f64),
    #[error("curve text format: {0}")]
    Parse(String),
    #[error("quantile must lie in (0, 1), got {0}")]
    BadTau(f64),
}

/// One tangent line q = alpha + beta * k of the fitted curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperplane {
    /// Intercept (veh/h).
    pub alpha: f64,
    /// Slope, the shockwave speed (km/h).
    pub beta: f64,
    /// Density at which this plane was fitted.
    pub anchor_k: f64,
}

impl Hyperplane {
    pub fn new(alpha: f64, beta: f64, anchor_k: f64) -> Self {
        Hyperplane {
            alpha,
            beta,
            anchor_k,
        }
    }

    pub fn value_at(&self, k: f64) -> f64 {
        self.alpha + self.beta * k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSegment {
    pub alpha: f64,
    pub beta: f64,
    pub k_lo: f64,
    pub k_hi: f64,
}

impl CurveSegment {
    pub fn value_at(&self, k: f64) -> f64 {
        self.alpha + self.beta * k
    }
}

/// Relative tolerances under which two hyperplanes count as the same
/// piece.
#[derive(Debug, Clone, Copy)]
pub struct DedupTolerance {
    pub alpha_rel: f64,
    pub beta_rel: f64,
}

impl Default for DedupTolerance {
    fn default() -> Self {
        DedupTolerance {
            alpha_rel: 1e-4,
            beta_rel: 1e-4,
        }
    }
}

/// Concave piecewise-linear function on [0, k_end], evaluated as the
/// minimum over its segment hyperplanes; beyond the domain the terminal
/// hyperplanes extrapolate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinearCurve {
    pub segments: Vec<CurveSegment>,
    /// Quantile the curve estimates; None for conditional-mean fits.
    pub tau: Option<f64>,
}

impl PiecewiseLinearCurve {
    /// Builds the curve from raw hyperplanes: near-identical planes are
    /// merged, exact parallels keep only the lower one, survivors are
    /// ordered by decreasing slope and the breakpoints set at the
    /// intersections of slope-adjacent planes. `domain_end` bounds the
    /// last piece when the final slope is nonnegative (otherwise the
    /// zero crossing -alpha/beta, the jam density, ends the domain).
    pub fn from_hyperplanes(
        planes: &[Hyperplane],
        tau: Option<f64>,
        dedup: DedupTolerance,
        domain_end: Option<f64>,
    ) -> Result<PiecewiseLinearCurve, CurveError> {
        if planes.is_empty() {
            return Err(CurveError::Empty);
        }
        if let Some(t) = tau {
            if !(0.0 < t && t < 1.0) {
                return Err(CurveError::BadTau(t));
            }
        }
        if planes
            .iter()
            .any(|p| !(p.alpha.is_finite() && p.beta.is_finite()))
        {
            return Err(CurveError::NonFinite);
        }

        let mut sorted: Vec<Hyperplane> = planes.to_vec();
        sorted.sort_by(|a, b| {
            b.beta
                .partial_cmp(&a.beta)
                .unwrap()
                .then(a.alpha.partial_cmp(&b.alpha).unwrap())
                .then(a.anchor_k.partial_cmp(&b.anchor_k).unwrap())
        });

        let mut kept: Vec<Hyperplane> = Vec::new();
        for plane in sorted {
            match kept.last() {
                Some(last)
                    if (plane.beta - last.beta).abs()
                        <= dedup.beta_rel * last.beta.abs().max(1.0)
                        && (plane.alpha - last.alpha).abs()
                            <= dedup.alpha_rel * last.alpha.abs().max(1.0) =>
                {
                    // same piece within tolerance
                }
                Some(last) if plane.beta == last.beta => {
                    // exact parallels: the sort already put the lower
                    // intercept first, the later one is never the minimum
                }
                _ => kept.push(plane),
            }
        }

        let max_anchor = planes
            .iter()
            .map(|p| p.anchor_k)
            .fold(0.0f64, |m, v| m.max(v));

        let mut segments: Vec<CurveSegment> = Vec::with_capacity(kept.len());
        for (i, plane) in kept.iter().enumerate() {
            let k_lo = if i == 0 {
                0.0
            } else {
                segments[i - 1].k_hi
            };
            let k_hi = if i + 1 < kept.len() {
                let next = &kept[i + 1];
                (next.alpha - plane.alpha) / (plane.beta - next.beta)
            } else if plane.beta < 0.0 {
                -plane.alpha / plane.beta
            } else {
                domain_end.unwrap_or(max_anchor).max(k_lo)
            };
            segments.push(CurveSegment {
                alpha: plane.alpha,
                beta: plane.beta,
                k_lo,
                k_hi,
            });
        }

        Ok(PiecewiseLinearCurve { segments, tau })
    }

    pub fn piece_count(&self) -> usize {
        self.segments.len()
    }

    /// Interior breakpoints, one fewer than the number of pieces.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.segments
            .iter()
            .take(self.segments.len().saturating_sub(1))
            .map(|s| s.k_hi)
            .collect()
    }

    pub fn domain_end(&self) -> f64 {
        self.segments.last().map(|s| s.k_hi).unwrap_or(0.0)
    }

    /// Jam density: zero crossing of the last (steepest descending)
    /// piece, when that piece slopes downward.
    pub fn jam_density(&self) -> Option<f64> {
        let last = self.segments.last()?;
        if last.beta < 0.0 {
            Some(-last.alpha / last.beta)
        } else {
            None
        }
    }

    /// Minimum over segment hyperplanes; extrapolates with the terminal
    /// pieces outside the fitted domain. Densities below zero are not
    /// part of the model.
    pub fn evaluate(&self, k: f64) -> Result<f64, CurveError> {
        if k < 0.0 || k.is_nan() {
            return Err(CurveError::NegativeDensity(k));
        }
        Ok(self
            .segments
            .iter()
            .map(|s| s.value_at(k))
            .fold(f64::INFINITY, f64::min))
    }

    /// True when spans are contiguous, ordered and the slopes strictly
    /// decrease, which is the shape every solver-extracted curve has.
    /// Curves rebuilt from published rounded coefficients may fail the
    /// span ordering while still evaluating correctly.
    pub fn is_well_formed(&self) -> bool {
        if self.segments.is_empty() {
            return false;
        }
        for w in self.segments.windows(2) {
            if w[1].beta >= w[0].beta {
                return false;
            }
            if (w[1].k_lo - w[0].k_hi).abs() > 1e-9 {
                return false;
            }
        }
        self.segments
            .iter()
            .all(|s| s.k_hi >= s.k_lo - 1e-9 && s.k_lo >= -1e-12)
    }

    /// Plain-text table, one `alpha beta k_lo k_hi` line per piece.
    /// Numbers use the shortest round-trip representation, so parsing the
    /// table reproduces the curve bit-exactly.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for s in &self.segments {
            out.push_str(&format!("{} {} {} {}\n", s.alpha, s.beta, s.k_lo, s.k_hi));
        }
        out
    }

    pub fn from_table(text: &str, tau: Option<f64>) -> Result<PiecewiseLinearCurve, CurveError> {
        let mut segments = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(CurveError::Parse(format!(
                    "line {}: expected 4 fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| CurveError::Parse(format!("line {}: {}", lineno + 1, e)))
            };
            segments.push(CurveSegment {
                alpha: parse(fields[0])?,
                beta: parse(fields[1])?,
                k_lo: parse(fields[2])?,
                k_hi: parse(fields[3])?,
            });
        }
        if segments.is_empty() {
            return Err(CurveError::Parse("no segments".to_string()));
        }
        Ok(PiecewiseLinearCurve { segments, tau })
    }
}

/// JSON container for a fitted curve with its estimation metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    /// Estimation method that produced the curve.
    pub method: String,
    pub tau: Option<f64>,
    pub gamma: Option<f64>,
    /// Free-form description of the data the curve was fitted on.
    pub source: String,
    pub segments: Vec<CurveSegment>,
}

impl CurveRecord {
    pub fn new(curve: &PiecewiseLinearCurve, method: &str, gamma: Option<f64>, source: &str) -> Self {
        CurveRecord {
            method: method.to_string(),
            tau: curve.tau,
            gamma,
            source: source.to_string(),
            segments: curve.segments.clone(),
        }
    }

    pub fn to_curve(&self) -> PiecewiseLinearCurve {
        PiecewiseLinearCurve {
            segments: self.segments.clone(),
            tau: self.tau,
        }
    }
}
