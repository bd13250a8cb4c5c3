//! Movable Access Window geometry.
//!
//! The window is a circular aperture cut into the hive glazing panel plus a
//! three-layer rotary insert (two discs and a spacer ring) that drops into it.
//! All lengths are millimetres.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest edge margin between the aperture and the panel border.
pub const MIN_CRACK_MARGIN_MM: f64 = 10.0;
pub const DEFAULT_RUNNING_CLEARANCE_MM: f64 = 0.3;
pub const DEFAULT_SHAFT_RADIUS_MM: f64 = 5.0;
/// Recommended running clearance band.
pub const CLEARANCE_RANGE_MM: (f64, f64) = (0.2, 0.4);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MawError {
    #[error("aperture radius {radius} mm is not positive")]
    NonPositiveRadius { radius: f64 },
    #[error("crack margin {margin} mm is below the {MIN_CRACK_MARGIN_MM} mm minimum")]
    MarginTooSmall { margin: f64 },
    #[error("invalid seal: aperture {aperture} mm, overlap {overlap} mm, clearance {clearance} mm")]
    InvalidSeal { aperture: f64, overlap: f64, clearance: f64 },
    #[error("invalid panel dimension {name} = {value} mm")]
    InvalidDimension { name: &'static str, value: f64 },
}

impl MawError {
    pub fn name(&self) -> &'static str {
        match self {
            MawError::NonPositiveRadius { .. } => "NonPositiveRadius",
            MawError::MarginTooSmall { .. } => "MarginTooSmall",
            MawError::InvalidSeal { .. } => "InvalidSeal",
            MawError::InvalidDimension { .. } => "InvalidDimension",
        }
    }
}

/// Radius of the aperture cut into a panel of width `panel_width`.
pub fn aperture_radius(panel_width: f64, crack_margin: f64) -> Result<f64, MawError> {
    if !(crack_margin >= MIN_CRACK_MARGIN_MM) {
        return Err(MawError::MarginTooSmall { margin: crack_margin });
    }
    let radius = panel_width / 2.0 - crack_margin;
    if !(radius > 0.0) {
        return Err(MawError::NonPositiveRadius { radius });
    }
    Ok(radius)
}

/// Radii of the rotary insert layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InsertGeometry {
    /// Inner cutout radius of the two discs.
    pub disc_inner_radius: f64,
    /// Outer radius of both discs and of the spacer ring.
    pub insert_outer_radius: f64,
    /// Inner radius of the spacer ring; equals the disc cutout.
    pub ring_inner_radius: f64,
    /// Radius of the small centre disc carrying the dummy shaft.
    pub small_disc_radius: f64,
    pub shaft_radius: f64,
}

/// Laminate radii for an aperture of radius `aperture`.
///
/// The small centre disc defaults to the disc cutout radius; pass
/// `small_disc_radius` to override it.
pub fn insert_geometry(
    aperture: f64,
    seal_overlap: f64,
    clearance: f64,
    shaft_radius: f64,
    small_disc_radius: Option<f64>,
) -> Result<InsertGeometry, MawError> {
    let invalid = || MawError::InvalidSeal { aperture, overlap: seal_overlap, clearance };
    if !(clearance > 0.0) || !(seal_overlap > 0.0) || !(aperture > seal_overlap + clearance) {
        return Err(invalid());
    }
    let disc_inner_radius = aperture - seal_overlap - clearance;
    let small_disc_radius = small_disc_radius.unwrap_or(disc_inner_radius);
    if !(shaft_radius > 0.0) || !(small_disc_radius > shaft_radius) {
        return Err(MawError::InvalidDimension { name: "shaft_radius", value: shaft_radius });
    }
    Ok(InsertGeometry {
        disc_inner_radius,
        insert_outer_radius: aperture - clearance,
        ring_inner_radius: disc_inner_radius,
        small_disc_radius,
        shaft_radius,
    })
}

/// Panel and seal parameters as found in the `maw` config section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MawParams {
    #[serde(rename = "L")]
    pub panel_length: f64,
    #[serde(rename = "B")]
    pub panel_width: f64,
    #[serde(rename = "c")]
    pub crack_margin: f64,
    #[serde(rename = "s")]
    pub seal_overlap: f64,
    #[serde(rename = "eps", default = "default_clearance")]
    pub running_clearance: f64,
    #[serde(default = "default_shaft_radius")]
    pub shaft_radius: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub small_disc_radius: Option<f64>,
}

fn default_clearance() -> f64 {
    DEFAULT_RUNNING_CLEARANCE_MM
}

fn default_shaft_radius() -> f64 {
    DEFAULT_SHAFT_RADIUS_MM
}

impl Default for MawParams {
    // Inner dimensions of a Deutsch-Normalmass frame.
    fn default() -> Self {
        MawParams {
            panel_length: 370.0,
            panel_width: 200.0,
            crack_margin: MIN_CRACK_MARGIN_MM,
            seal_overlap: 5.0,
            running_clearance: DEFAULT_RUNNING_CLEARANCE_MM,
            shaft_radius: DEFAULT_SHAFT_RADIUS_MM,
            small_disc_radius: None,
        }
    }
}

/// Fully derived window geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MawSpec {
    pub params: MawParams,
    pub aperture_radius: f64,
    pub insert: InsertGeometry,
    /// `false` when the clearance lies outside the recommended band.
    pub clearance_in_range: bool,
}

impl MawSpec {
    pub fn derive(params: MawParams) -> Result<Self, MawError> {
        for (name, value) in [("L", params.panel_length), ("B", params.panel_width)] {
            if !(value > 0.0) {
                return Err(MawError::InvalidDimension { name, value });
            }
        }
        let aperture = aperture_radius(params.panel_width, params.crack_margin)?;
        if 2.0 * aperture > params.panel_length {
            return Err(MawError::InvalidDimension { name: "L", value: params.panel_length });
        }
        let insert = insert_geometry(
            aperture,
            params.seal_overlap,
            params.running_clearance,
            params.shaft_radius,
            params.small_disc_radius,
        )?;
        let (lo, hi) = CLEARANCE_RANGE_MM;
        Ok(MawSpec {
            params,
            aperture_radius: aperture,
            insert,
            clearance_in_range: (lo..=hi).contains(&params.running_clearance),
        })
    }

    /// Seal closure residual `R - (r + s + eps)`.
    pub fn seal_residual(&self) -> f64 {
        self.aperture_radius
            - (self.insert.disc_inner_radius + self.params.seal_overlap + self.params.running_clearance)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aperture_examples() {
        assert_eq!(aperture_radius(200.0, 10.0).unwrap(), 90.0);
        assert_eq!(aperture_radius(220.0, 10.0).unwrap(), 100.0);
        assert!(matches!(aperture_radius(18.0, 10.0), Err(MawError::NonPositiveRadius { .. })));
        assert!(matches!(aperture_radius(200.0, 9.5), Err(MawError::MarginTooSmall { .. })));
    }

    #[test]
    fn insert_examples() {
        let g = insert_geometry(90.0, 5.0, 0.3, 5.0, None).unwrap();
        assert!((g.disc_inner_radius - 84.7).abs() < 1e-12);
        assert!((g.insert_outer_radius - 89.7).abs() < 1e-12);
        assert!(g.insert_outer_radius < 90.0);
        assert_eq!(g.small_disc_radius, g.disc_inner_radius);
        assert!(matches!(insert_geometry(90.0, 5.0, 0.0, 5.0, None), Err(MawError::InvalidSeal { .. })));
        assert!(matches!(insert_geometry(5.0, 5.0, 0.3, 5.0, None), Err(MawError::InvalidSeal { .. })));
    }

    #[test]
    fn shaft_must_fit_small_disc() {
        let err = insert_geometry(90.0, 5.0, 0.3, 5.0, Some(4.0)).unwrap_err();
        assert_eq!(err.name(), "InvalidDimension");
    }

    #[test]
    fn config_section_round_trip() {
        let spec = MawSpec::derive(MawParams::default()).unwrap();
        let text = serde_json::to_string(&spec.params).unwrap();
        assert!(text.contains("\"B\":200.0"));
        let params: MawParams = serde_json::from_str(&text).unwrap();
        let again = MawSpec::derive(params).unwrap();
        assert_eq!(spec, again);
        let text = serde_json::to_string(&spec).unwrap();
        let back: MawSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn missing_optional_fields_take_defaults() {
        let p: MawParams = serde_json::from_str(r#"{"L":370,"B":200,"c":12,"s":4}"#).unwrap();
        assert_eq!(p.running_clearance, 0.3);
        assert_eq!(p.shaft_radius, 5.0);
        let spec = MawSpec::derive(p).unwrap();
        assert!(spec.clearance_in_range);
        assert_eq!(spec.aperture_radius, 88.0);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn seal_closes(b in 30.0f64..600.0, c in 10.0f64..14.0, s in 0.5f64..8.0, eps in 0.01f64..1.0) {
                let params = MawParams { panel_length: 2.0 * b, panel_width: b, crack_margin: c,
                    seal_overlap: s, running_clearance: eps, shaft_radius: 0.1, small_disc_radius: None };
                if let Ok(spec) = MawSpec::derive(params) {
                    prop_assert!(spec.seal_residual().abs() <= 1e-12);
                    prop_assert!(spec.insert.insert_outer_radius < spec.aperture_radius);
                }
            }

            #[test]
            fn aperture_monotone(b in 30.0f64..600.0, db in 0.0f64..50.0, c in 10.0f64..14.0, dc in 0.0f64..4.0) {
                let base = aperture_radius(b, c);
                if let (Ok(r0), Ok(r1)) = (&base, aperture_radius(b + db, c)) {
                    prop_assert!(r1 >= *r0);
                }
                if let (Ok(r0), Ok(r2)) = (base, aperture_radius(b, c + dc)) {
                    prop_assert!(r2 <= r0);
                }
            }
        }
    }
}
