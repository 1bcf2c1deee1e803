use super::segment::BlobSet;
use crate::num::{least_squares_slope, Scalar};
use crate::thermal::PixelRegion;

/// Segmented blobs of the top and side frames for one tick.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FramePair<T> {
    pub tick: u64,
    pub top: BlobSet<T>,
    pub side: BlobSet<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeatureVector<T> {
    pub top_centroid_px: Option<(T, T)>,
    pub side_centroid_px: Option<(T, T)>,
    pub total_area_px: u32,
    /// Signed distance of the top centroid to the nearest bed edge line;
    /// negative outside the bed.
    pub edge_distance_px: Option<T>,
    /// Negated least-squares slope of `edge_distance_px` over the window.
    pub outward_velocity_px_per_tick: Option<T>,
}

impl<T: Scalar> FeatureVector<T> {
    pub fn is_valid(&self) -> bool {
        matches!(
            (self.edge_distance_px, self.outward_velocity_px_per_tick),
            (Some(d), Some(v)) if d.is_finite() && v.is_finite()
        )
    }
}

fn edge_distance<T: Scalar>(pair: &FramePair<T>, bed: &PixelRegion) -> Option<T> {
    pair.top
        .largest()
        .map(|b| bed.signed_edge_distance(b.centroid_px.0, b.centroid_px.1))
}

/// Features for the newest pair in `history` (oldest first). Velocity needs
/// `window` pairs, each with a top-camera body.
pub fn extract_features<T: Scalar>(
    history: &[FramePair<T>],
    window: usize,
    bed: &PixelRegion,
) -> FeatureVector<T> {
    let Some(current) = history.last() else {
        return FeatureVector::default();
    };
    let edge = edge_distance(current, bed);
    let velocity = if window >= 2 && history.len() >= window {
        history[history.len() - window..]
            .iter()
            .map(|p| edge_distance(p, bed))
            .collect::<Option<Vec<T>>>()
            .and_then(|d| least_squares_slope(&d))
            .map(|slope| -slope)
    } else {
        None
    };
    FeatureVector {
        top_centroid_px: current.top.largest().map(|b| b.centroid_px),
        side_centroid_px: current.side.largest().map(|b| b.centroid_px),
        total_area_px: current.top.total_area() + current.side.total_area(),
        edge_distance_px: edge,
        outward_velocity_px_per_tick: velocity,
    }
}
