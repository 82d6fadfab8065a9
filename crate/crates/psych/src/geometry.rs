//! Screen geometry and the degrees-to-pixels convention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisplayGeometry {
    /// Width and height in pixels.
    pub screen_px: (f64, f64),
    /// Width and height in centimetres.
    pub screen_cm: (f64, f64),
    pub viewing_distance_cm: f64,
}

impl Default for DisplayGeometry {
    /// A 3440x1440 display, 80x34 cm, viewed from 50 cm.
    fn default() -> Self {
        Self {
            screen_px: (3440.0, 1440.0),
            screen_cm: (80.0, 34.0),
            viewing_distance_cm: 50.0,
        }
    }
}

impl DisplayGeometry {
    /// Errors on nonpositive entries; returns warnings for soft problems.
    pub fn validate(&self) -> Result<Vec<String>> {
        let vals = [
            self.screen_px.0,
            self.screen_px.1,
            self.screen_cm.0,
            self.screen_cm.1,
            self.viewing_distance_cm,
        ];
        if vals.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(format!("display geometry entries must be positive: {self:?}")));
        }
        let mut warnings = Vec::new();
        let px_aspect = self.screen_px.0 / self.screen_px.1;
        let cm_aspect = self.screen_cm.0 / self.screen_cm.1;
        if (px_aspect / cm_aspect - 1.0).abs() > 0.05 {
            warnings.push(format!(
                "pixel aspect {px_aspect:.3} and physical aspect {cm_aspect:.3} differ by more than 5%"
            ));
        }
        if self.viewing_distance_cm < 10.0 {
            warnings.push(format!("viewing distance {} cm is implausibly short", self.viewing_distance_cm));
        }
        Ok(warnings)
    }

    /// Horizontal and vertical visual angle of the whole screen, in degrees.
    pub fn degrees_per_screen(&self) -> (f64, f64) {
        let angle = |extent: f64| 2.0 * (extent / 2.0 / self.viewing_distance_cm).atan().to_degrees();
        (angle(self.screen_cm.0), angle(self.screen_cm.1))
    }

    /// Pixels per degree along the vertical, treating the angle as spread
    /// evenly over the screen's pixels.
    pub fn px_per_degree(&self) -> f64 {
        self.screen_px.1 / self.degrees_per_screen().1
    }

    pub fn deg_to_px(&self, deg: f64) -> f64 {
        deg * self.px_per_degree()
    }

    pub fn center_px(&self) -> (f64, f64) {
        (self.screen_px.0 / 2.0, self.screen_px.1 / 2.0)
    }
}
