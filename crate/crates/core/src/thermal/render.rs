use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::body::{BedGeometry, BodyState, Posture};
use super::{Camera, ThermalFrame, FRAME_COLS, FRAME_PIXELS, FRAME_ROWS, MAX_DECI_C};
use crate::num::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct NoiseParams<T> {
    pub ambient_deci_c: T,
    /// Standard deviation of i.i.d. per-pixel Gaussian noise.
    pub sigma_deci_c: T,
}

impl<T: Scalar> Default for NoiseParams<T> {
    fn default() -> Self {
        NoiseParams { ambient_deci_c: T::of(220.0), sigma_deci_c: T::of(5.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct RenderParams<T> {
    pub geometry: BedGeometry<T>,
    pub body_core_deci_c: T,
}

impl<T: Scalar> Default for RenderParams<T> {
    fn default() -> Self {
        RenderParams { geometry: BedGeometry::default(), body_core_deci_c: T::of(365.0) }
    }
}

/// Blob shape on one camera: center (row, col) and Gaussian sigmas along
/// rows and columns, all in pixels.
struct Blob<T> {
    row: T,
    col: T,
    sigma_row: T,
    sigma_col: T,
}

/// Gaussian sigmas (rows, cols) on the top camera. LYING is 16 px along the
/// bed, SITTING_UP 8 px; legs over the edge stretch the blob across it.
fn top_sigmas(posture: Posture) -> (f64, f64) {
    match posture {
        Posture::Lying => (3.0, 8.0),
        Posture::SittingUp => (3.0, 4.0),
        Posture::LegsOverEdge => (5.0, 3.0),
        Posture::Standing | Posture::OutOfBed => (2.5, 2.5),
    }
}

/// Side camera rows image height above the floor (row 31 is the floor):
/// (center row, sigma rows, sigma cols).
fn side_shape(posture: Posture) -> (f64, f64, f64) {
    match posture {
        Posture::Lying => (20.0, 2.0, 8.0),
        Posture::SittingUp => (15.0, 4.0, 3.0),
        Posture::LegsOverEdge => (18.0, 6.0, 3.0),
        Posture::Standing | Posture::OutOfBed => (13.0, 9.0, 2.5),
    }
}

fn project<T: Scalar>(body: &BodyState<T>, camera: Camera, geometry: &BedGeometry<T>) -> Blob<T> {
    let (row, col) = geometry.to_top_px(body.centroid);
    match camera {
        Camera::Top => {
            let (sr, sc) = top_sigmas(body.posture);
            Blob { row, col, sigma_row: T::of(sr), sigma_col: T::of(sc) }
        }
        Camera::Side => {
            let (r, sr, sc) = side_shape(body.posture);
            Blob { row: T::of(r), col, sigma_row: T::of(sr), sigma_col: T::of(sc) }
        }
    }
}

/// Renders one frame: an elliptical Gaussian body blob (if any) composited
/// over ambient, plus i.i.d. pixel noise drawn from `rng`. Values are
/// rounded and clamped to [0, 600] deci-C.
pub fn render_frame<T: Scalar, R: Rng + ?Sized>(
    body: Option<&BodyState<T>>,
    camera: Camera,
    tick: u64,
    params: &RenderParams<T>,
    noise: &NoiseParams<T>,
    rng: &mut R,
) -> ThermalFrame {
    let ambient = noise.ambient_deci_c;
    let blob = body.map(|b| project(b, camera, &params.geometry));
    let half = T::of(0.5);
    let mut pixels = Vec::with_capacity(FRAME_PIXELS);
    for r in 0..FRAME_ROWS {
        for c in 0..FRAME_COLS {
            let mut v = ambient;
            if let Some(b) = &blob {
                let dr = (T::of(r as f64) + half - b.row) / b.sigma_row;
                let dc = (T::of(c as f64) + half - b.col) / b.sigma_col;
                let falloff = (-(dr * dr + dc * dc) * half).exp();
                v = v + (params.body_core_deci_c - ambient) * falloff;
            }
            if noise.sigma_deci_c > T::zero() {
                let z: f64 = rng.sample(StandardNormal);
                v = v + noise.sigma_deci_c * T::of(z);
            }
            let clamped = v.round().max(T::zero()).min(T::of(MAX_DECI_C as f64));
            pixels.push(clamped.to_u16().unwrap_or(0));
        }
    }
    ThermalFrame::new(tick, camera, pixels).expect("rendered pixels are clamped to range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quiet() -> NoiseParams<f64> {
        NoiseParams { ambient_deci_c: 220.0, sigma_deci_c: 0.0 }
    }

    #[test]
    fn empty_bed_is_ambient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for camera in Camera::BOTH {
            let f = render_frame::<f64, _>(None, camera, 0, &RenderParams::default(), &quiet(), &mut rng);
            assert_eq!(f.pixels().len(), 32 * 32);
            assert!(f.pixels().iter().all(|&p| p == 220));
        }
    }

    #[test]
    fn centered_lying_body_centroid_is_grid_center() {
        let params = RenderParams::<f64>::default();
        let body = BodyState::new(1.0, 0.45, Posture::Lying);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = render_frame(Some(&body), Camera::Top, 0, &params, &quiet(), &mut rng);
        // brute-force mass centroid of above-threshold pixels (centers at +0.5)
        let (mut n, mut sr, mut sc) = (0.0, 0.0, 0.0);
        for r in 0..32 {
            for c in 0..32 {
                if f.at(r, c) > 300 {
                    n += 1.0;
                    sr += r as f64 + 0.5;
                    sc += c as f64 + 0.5;
                }
            }
        }
        assert!(n > 0.0);
        assert!((sr / n - 16.0).abs() <= 1.0 && (sc / n - 16.0).abs() <= 1.0);
        // pixel center sits half a pixel off the blob center on both axes
        assert_eq!(f.at(16, 16), 363);
    }

    #[test]
    fn noise_is_seeded() {
        let params = RenderParams::<f64>::default();
        let noise = NoiseParams::default();
        let body = BodyState::new(1.0, 0.45, Posture::SittingUp);
        let a = render_frame(Some(&body), Camera::Side, 3, &params, &noise, &mut ChaCha8Rng::seed_from_u64(9));
        let b = render_frame(Some(&body), Camera::Side, 3, &params, &noise, &mut ChaCha8Rng::seed_from_u64(9));
        let c = render_frame(Some(&body), Camera::Side, 3, &params, &noise, &mut ChaCha8Rng::seed_from_u64(10));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn f32_and_f64_render_the_same_quiet_frame() {
        let body64 = BodyState::new(0.7f64, 0.3, Posture::LegsOverEdge);
        let body32 = BodyState::new(0.7f32, 0.3, Posture::LegsOverEdge);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let noise32 = NoiseParams { ambient_deci_c: 220.0f32, sigma_deci_c: 0.0 };
        let a = render_frame(Some(&body64), Camera::Top, 0, &RenderParams::default(), &quiet(), &mut rng);
        let b = render_frame(Some(&body32), Camera::Top, 0, &RenderParams::default(), &noise32, &mut rng);
        let differing = a.pixels().iter().zip(b.pixels()).filter(|(x, y)| x != y).count();
        assert!(differing <= 4, "{differing} pixels differ between precisions");
    }
}
