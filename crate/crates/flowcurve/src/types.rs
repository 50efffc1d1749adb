//! Domain types shared across the pipeline: raw sensor rows, aggregated
//! (density, flow) observations, grid bags, and extracted traffic
//! parameters. All types are immutable after construction and safe to
//! share across concurrent estimation jobs.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ValidationError {
    #[error("speed must be finite and nonnegative, got {0}")]
    BadSpeed(f64),
    #[error("lane must be >= 1")]
    BadLane,
    #[error("direction must be 1 or 2, got {0}")]
    BadDirection(u8),
    #[error("observation fields must be finite")]
    NonFinite,
    #[error("flow {q} > 0 requires speed > 0")]
    ZeroSpeedPositiveFlow { q: f64 },
    #[error("density {k} inconsistent with q/v = {qv}")]
    FundamentalRelation { k: f64, qv: f64 },
    #[error("bag weight must lie in (0, 1], got {0}")]
    BadWeight(f64),
    #[error("bag point count must be >= 1")]
    BadPointCount,
    #[error("grid must have at least one cell per axis")]
    BadGrid,
}

/// One vehicle passing a measurement station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub timestamp: DateTime<Utc>,
    pub station_id: String,
    /// Travel direction, 1 or 2.
    pub direction: u8,
    /// Lane number within the direction, starting at 1.
    pub lane: u8,
    pub speed_kmh: f64,
    /// Set when the sensor marked the row as unreliable.
    pub faulty: bool,
}

impl VehicleRecord {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if !self.speed_kmh.is_finite() || self.speed_kmh < 0.0 {
            return Err(ValidationError::BadSpeed(self.speed_kmh));
        }
        if self.lane < 1 {
            return Err(ValidationError::BadLane);
        }
        if self.direction != 1 && self.direction != 2 {
            return Err(ValidationError::BadDirection(self.direction));
        }
        Ok(())
    }
}

/// Aggregation unit: either one lane of one direction, or a whole
/// direction.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub station_id: String,
    pub direction: u8,
    pub lane: Option<u8>,
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.lane {
            Some(lane) => write!(f, "{}:d{}:l{}", self.station_id, self.direction, lane),
            None => write!(f, "{}:d{}", self.station_id, self.direction),
        }
    }
}

impl FromStr for GroupKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() < 2 || parts.len() > 3 {
            return Err(format!("bad group key '{s}'"));
        }
        let direction = parts[1]
            .strip_prefix('d')
            .and_then(|d| d.parse::<u8>().ok())
            .ok_or_else(|| format!("bad direction in group key '{s}'"))?;
        let lane = match parts.get(2) {
            Some(p) => Some(
                p.strip_prefix('l')
                    .and_then(|l| l.parse::<u8>().ok())
                    .ok_or_else(|| format!("bad lane in group key '{s}'"))?,
            ),
            None => None,
        };
        Ok(GroupKey {
            station_id: parts[0].to_string(),
            direction,
            lane,
        })
    }
}

/// One aggregation interval of one group: density k (veh/km), flow q
/// (veh/h) and harmonic mean speed v (km/h), linked by q = k v.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedObservation {
    pub k: f64,
    pub q: f64,
    pub v: f64,
    pub interval_start: DateTime<Utc>,
    pub group_key: GroupKey,
    pub count: u32,
}

impl AggregatedObservation {
    /// Builds a bare (k, q) observation for estimation work that does not
    /// need timestamps. Panics on a (k = 0, q > 0) pair, which cannot
    /// satisfy q = k v with finite speed.
    pub fn synthetic(k: f64, q: f64) -> Self {
        assert!(
            !(k == 0.0 && q > 0.0),
            "zero density with positive flow has no finite speed"
        );
        let v = if q > 0.0 { q / k } else { 0.0 };
        AggregatedObservation {
            k,
            q,
            v,
            interval_start: DateTime::<Utc>::from_timestamp(0, 0).unwrap(),
            group_key: GroupKey {
                station_id: "synthetic".to_string(),
                direction: 1,
                lane: None,
            },
            count: 1,
        }
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if !(self.k.is_finite() && self.q.is_finite() && self.v.is_finite()) {
            return Err(ValidationError::NonFinite);
        }
        if self.q > 0.0 {
            if self.v <= 0.0 {
                return Err(ValidationError::ZeroSpeedPositiveFlow { q: self.q });
            }
            let qv = self.q / self.v;
            if (self.k - qv).abs() > 1e-9 * self.k.max(1.0) {
                return Err(ValidationError::FundamentalRelation { k: self.k, qv });
            }
        }
        Ok(())
    }
}

/// One nonempty grid cell summarized by the centroid of its members and
/// the share of all observations that fell inside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bag {
    pub k_centroid: f64,
    pub q_centroid: f64,
    /// Share of observations in this bag, in (0, 1].
    pub weight: f64,
    pub point_count: usize,
    /// (density-axis index, flow-axis index) of the cell.
    pub cell: (usize, usize),
}

impl Bag {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if !(self.k_centroid.is_finite() && self.q_centroid.is_finite() && self.weight.is_finite())
        {
            return Err(ValidationError::NonFinite);
        }
        if self.weight <= 0.0 || self.weight > 1.0 {
            return Err(ValidationError::BadWeight(self.weight));
        }
        if self.point_count < 1 {
            return Err(ValidationError::BadPointCount);
        }
        Ok(())
    }
}

/// Equal-width grid on the (density, flow) plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagGrid {
    /// Number of segments on the density axis.
    pub u: usize,
    /// Number of segments on the flow axis.
    pub v_segments: usize,
    pub k_range: (f64, f64),
    pub q_range: (f64, f64),
}

impl BagGrid {
    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.u < 1 || self.v_segments < 1 {
            return Err(ValidationError::BadGrid);
        }
        Ok(())
    }

    pub fn k_width(&self) -> f64 {
        (self.k_range.1 - self.k_range.0) / self.u as f64
    }

    pub fn q_width(&self) -> f64 {
        (self.q_range.1 - self.q_range.0) / self.v_segments as f64
    }
}

/// Key quantities read off a fitted density-flow curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficParameters {
    /// Peak flow (veh/h per grouping unit).
    pub capacity: f64,
    /// Density at which the peak flow is attained (veh/km).
    pub critical_density: f64,
    /// Density at which the congested branch reaches zero flow; absent
    /// when the curve never slopes downward.
    pub jam_density: Option<f64>,
    /// Slope of the first curve segment (km/h).
    pub free_flow_speed: f64,
    /// Segment slopes, i.e. shockwave speeds (km/h).
    pub wave_speeds: Vec<f64>,
    pub piece_count: usize,
}
