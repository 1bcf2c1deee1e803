use crate::num::Scalar;
use crate::thermal::{ThermalFrame, FRAME_COLS, FRAME_PIXELS, FRAME_ROWS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob<T> {
    pub area_px: u32,
    /// Mean of member pixel centers, (row + 0.5, col + 0.5).
    pub centroid_px: (T, T),
    pub mean_temp: T,
}

/// Blobs of one frame in raster order of their first pixel.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BlobSet<T> {
    pub blobs: Vec<Blob<T>>,
}

impl<T: Scalar> BlobSet<T> {
    pub fn is_empty(&self) -> bool {
        self.blobs.is_empty()
    }

    pub fn total_area(&self) -> u32 {
        self.blobs.iter().map(|b| b.area_px).sum()
    }

    /// Largest blob; ties go to the earliest in raster order.
    pub fn largest(&self) -> Option<&Blob<T>> {
        self.blobs.iter().fold(None, |best: Option<&Blob<T>>, b| match best {
            Some(cur) if cur.area_px >= b.area_px => Some(cur),
            _ => Some(b),
        })
    }
}

/// 4-connected components of pixels strictly above `threshold`, keeping
/// components of at least `min_blob_px` pixels.
pub fn segment_body<T: Scalar>(frame: &ThermalFrame, threshold: u16, min_blob_px: u32) -> BlobSet<T> {
    let px = frame.pixels();
    let mut seen = [false; FRAME_PIXELS];
    let mut stack = Vec::new();
    let mut blobs = Vec::new();
    let half = T::of(0.5);
    for start in 0..FRAME_PIXELS {
        if seen[start] || px[start] <= threshold {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut area, mut sum_r, mut sum_c, mut sum_t) = (0u32, 0u64, 0u64, 0u64);
        while let Some(i) = stack.pop() {
            let (r, c) = (i / FRAME_COLS, i % FRAME_COLS);
            area += 1;
            sum_r += r as u64;
            sum_c += c as u64;
            sum_t += px[i] as u64;
            let neighbours = [
                (r > 0).then(|| i - FRAME_COLS),
                (r + 1 < FRAME_ROWS).then(|| i + FRAME_COLS),
                (c > 0).then(|| i - 1),
                (c + 1 < FRAME_COLS).then(|| i + 1),
            ];
            for n in neighbours.into_iter().flatten() {
                if !seen[n] && px[n] > threshold {
                    seen[n] = true;
                    stack.push(n);
                }
            }
        }
        if area >= min_blob_px {
            let n = T::of(area as f64);
            blobs.push(Blob {
                area_px: area,
                centroid_px: (T::of(sum_r as f64) / n + half, T::of(sum_c as f64) / n + half),
                mean_temp: T::of(sum_t as f64) / n,
            });
        }
    }
    BlobSet { blobs }
}
