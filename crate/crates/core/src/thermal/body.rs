use serde::{Deserialize, Serialize};

use crate::num::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Posture {
    Lying,
    SittingUp,
    LegsOverEdge,
    Standing,
    OutOfBed,
}

/// Patient body in bed-plane coordinates: x runs along the bed length from
/// the head end, y across the width towards the exit side. The bed occupies
/// `[0, length] x [0, width]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct BodyState<T> {
    pub centroid: (T, T),
    pub posture: Posture,
    /// Outward velocity in m/s, carried for scripting; rendering ignores it.
    #[serde(default = "zero_pair")]
    pub heading: (T, T),
}

fn zero_pair<T: Scalar>() -> (T, T) {
    (T::zero(), T::zero())
}

impl<T: Scalar> BodyState<T> {
    pub fn new(x: T, y: T, posture: Posture) -> Self {
        BodyState { centroid: (x, y), posture, heading: zero_pair() }
    }

    /// Linear blend of position and heading; posture is taken from `self`
    /// because postures only change at keyframes.
    pub fn lerp(&self, other: &Self, t: T) -> Self {
        let mix = |a: T, b: T| a + (b - a) * t;
        BodyState {
            centroid: (mix(self.centroid.0, other.centroid.0), mix(self.centroid.1, other.centroid.1)),
            posture: self.posture,
            heading: (mix(self.heading.0, other.heading.0), mix(self.heading.1, other.heading.1)),
        }
    }
}

/// Rectangle of whole pixels on the top camera.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRegion {
    pub row0: u32,
    pub col0: u32,
    pub rows: u32,
    pub cols: u32,
}

impl PixelRegion {
    /// Signed distance from a continuous pixel coordinate to the nearest
    /// region edge line: positive inside, negative outside.
    pub fn signed_edge_distance<T: Scalar>(&self, row: T, col: T) -> T {
        let top = T::of(self.row0 as f64);
        let bottom = T::of((self.row0 + self.rows) as f64);
        let left = T::of(self.col0 as f64);
        let right = T::of((self.col0 + self.cols) as f64);
        let inside = row >= top && row <= bottom && col >= left && col <= right;
        if inside {
            (row - top).min(bottom - row).min(col - left).min(right - col)
        } else {
            let dr = (top - row).max(row - bottom).max(T::zero());
            let dc = (left - col).max(col - right).max(T::zero());
            -(dr * dr + dc * dc).sqrt()
        }
    }
}

/// Fixed bed calibration: the bed rectangle maps onto `region` of the top
/// camera, x onto columns and y onto rows. The side camera shares the column
/// mapping and images body height on its rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct BedGeometry<T> {
    pub length_m: T,
    pub width_m: T,
    pub region: PixelRegion,
}

impl<T: Scalar> Default for BedGeometry<T> {
    fn default() -> Self {
        BedGeometry {
            length_m: T::of(2.0),
            width_m: T::of(0.9),
            region: PixelRegion { row0: 10, col0: 4, rows: 12, cols: 24 },
        }
    }
}

impl<T: Scalar> BedGeometry<T> {
    pub fn px_per_m_x(&self) -> T {
        T::of(self.region.cols as f64) / self.length_m
    }

    pub fn px_per_m_y(&self) -> T {
        T::of(self.region.rows as f64) / self.width_m
    }

    /// Continuous (row, col) on the top camera. Pixel (r, c) spans
    /// [r, r+1) x [c, c+1).
    pub fn to_top_px(&self, (x, y): (T, T)) -> (T, T) {
        let row = T::of(self.region.row0 as f64) + y * self.px_per_m_y();
        let col = T::of(self.region.col0 as f64) + x * self.px_per_m_x();
        (row, col)
    }

    pub fn contains(&self, (x, y): (T, T)) -> bool {
        x >= T::zero() && x <= self.length_m && y >= T::zero() && y <= self.width_m
    }

    pub fn center(&self) -> (T, T) {
        let half = T::of(0.5);
        (self.length_m * half, self.width_m * half)
    }

    /// Bed-plane y at which the top-camera centroid sits `px` pixels inside
    /// the exit edge.
    pub fn y_at_exit_margin(&self, px: T) -> T {
        self.width_m - px / self.px_per_m_y()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bed_maps_to_central_region() {
        let g = BedGeometry::<f64>::default();
        assert_eq!(g.to_top_px((0.0, 0.0)), (10.0, 4.0));
        assert_eq!(g.to_top_px((2.0, 0.9)), (22.0, 28.0));
        let (r, c) = g.to_top_px(g.center());
        assert!((r - 16.0).abs() < 1e-12 && (c - 16.0).abs() < 1e-12);
    }

    #[test]
    fn edge_distance_sign() {
        let region = BedGeometry::<f64>::default().region;
        assert_eq!(region.signed_edge_distance(16.0, 16.0), 6.0);
        assert_eq!(region.signed_edge_distance(21.0, 16.0), 1.0);
        assert_eq!(region.signed_edge_distance(22.0, 16.0), 0.0);
        assert_eq!(region.signed_edge_distance(25.0, 16.0), -3.0);
        assert_eq!(region.signed_edge_distance(25.0, 32.0), -5.0);
    }

    #[test]
    fn lerp_keeps_start_posture() {
        let a = BodyState::new(0.0f64, 0.45, Posture::SittingUp);
        let b = BodyState::new(1.0f64, 0.85, Posture::LegsOverEdge);
        let m = a.lerp(&b, 0.5);
        assert!((m.centroid.0 - 0.5).abs() < 1e-12 && (m.centroid.1 - 0.65).abs() < 1e-12);
        assert_eq!(m.posture, Posture::SittingUp);
    }
}
