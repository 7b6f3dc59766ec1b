use serde::{Deserialize, Serialize};

use super::{extract_centroids, icp_align, AcousticImage, IcpParams, RigidTransform2D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnhanceParams {
    /// Number of frames in the rolling batch, including the current one.
    pub batch_len: usize,
    /// Gradient magnitude threshold for border detection (intensity per bin).
    pub grad_threshold: f64,
    pub min_blob_px: usize,
    pub icp: IcpParams,
    /// Frame-to-frame registrations with a larger RMS residual (meters) are
    /// rejected.
    pub max_residual: f64,
}

impl Default for EnhanceParams {
    fn default() -> Self {
        EnhanceParams {
            batch_len: 5,
            grad_threshold: 0.1,
            min_blob_px: 4,
            icp: IcpParams::default(),
            max_residual: 0.5,
        }
    }
}

/// Transforms taking each older frame's sensor coordinates into the newest
/// frame's, obtained by chaining consecutive ICP registrations.
///
/// Entry `i` corresponds to `batch[i]`; the newest frame maps by identity.
/// A failed or poor link leaves that frame and every older one unregistered.
pub fn register_batch(
    batch: &[AcousticImage],
    params: &EnhanceParams,
) -> Vec<Option<RigidTransform2D>> {
    let n = batch.len();
    let mut out = vec![None; n];
    if n == 0 {
        return out;
    }
    out[n - 1] = Some(RigidTransform2D::IDENTITY);
    let clouds: Vec<_> = batch
        .iter()
        .map(|img| extract_centroids(img, params.grad_threshold, params.min_blob_px))
        .collect();
    let mut to_current = RigidTransform2D::IDENTITY;
    for i in (0..n - 1).rev() {
        let link = match icp_align(&clouds[i], &clouds[i + 1], &params.icp) {
            Ok(r) if r.residual <= params.max_residual => r.transform,
            _ => break,
        };
        to_current = to_current.compose(&link);
        out[i] = Some(to_current);
    }
    out
}

/// Resamples `frame` into the polar grid of a frame whose sensor pose is
/// related by `to_current` (frame coordinates -> current coordinates).
///
/// Returns per-pixel intensities, `None` where the current pixel falls
/// outside the source fan.
pub fn warp_into(frame: &AcousticImage, to_current: &RigidTransform2D) -> Vec<Option<f64>> {
    let fp = frame.footprint;
    let (rows, cols) = fp.shape();
    if to_current.is_identity() {
        return frame.data().iter().map(|&v| Some(v)).collect();
    }
    let back = to_current.inverse();
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for b in 0..cols {
            let (x, y) = fp.bin_to_sensor(r as f64, b as f64);
            let [sx, sy] = back.apply([x, y]);
            let (fr, fb) = fp.sensor_to_bin(sx, sy);
            out.push(bilinear(frame, fr, fb));
        }
    }
    out
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

fn bilinear(img: &AcousticImage, r: f64, b: f64) -> Option<f64> {
    let (rows, cols) = img.shape();
    let (r, b) = (snap(r), snap(b));
    if !(r >= 0.0 && b >= 0.0 && r <= (rows - 1) as f64 && b <= (cols - 1) as f64) {
        return None;
    }
    let (r0, b0) = (r.floor() as usize, b.floor() as usize);
    let (r1, b1) = ((r0 + 1).min(rows - 1), (b0 + 1).min(cols - 1));
    let (fr, fb) = (r - r0 as f64, b - b0 as f64);
    let top = img.get(r0, b0) * (1.0 - fb) + img.get(r0, b1) * fb;
    let bottom = img.get(r1, b0) * (1.0 - fb) + img.get(r1, b1) * fb;
    Some(top * (1.0 - fr) + bottom * fr)
}

/// Averages the registered frames in the newest frame's view.
///
/// `transforms[i]` places `batch[i]` in the newest frame; `None` excludes the
/// frame. Each output pixel is the mean over the frames that cover it.
pub fn fuse(batch: &[AcousticImage], transforms: &[Option<RigidTransform2D>]) -> AcousticImage {
    let current = batch.last().expect("non-empty batch");
    let len = current.data().len();
    let mut sum = vec![0.0; len];
    let mut count = vec![0u32; len];
    for (frame, t) in batch.iter().zip(transforms) {
        let Some(t) = t else { continue };
        for (i, v) in warp_into(frame, t).into_iter().enumerate() {
            if let Some(v) = v {
                sum[i] += v;
                count[i] += 1;
            }
        }
    }
    let data = sum
        .iter()
        .zip(&count)
        .zip(current.data())
        .map(|((&s, &c), &own)| {
            if c == 0 {
                own
            } else {
                (s / c as f64).clamp(0.0, 1.0)
            }
        })
        .collect();
    let mut out = AcousticImage::new(current.footprint, current.timestamp, data)
        .expect("mean of valid frames is valid");
    out.truth = current.truth;
    out
}

/// Enhances the newest frame of `batch` (ordered oldest to newest) by
/// registering the older frames onto it and averaging pixels.
pub fn enhance(batch: &[AcousticImage], params: &EnhanceParams) -> AcousticImage {
    let current = batch.last().expect("non-empty batch");
    if batch.len() == 1 {
        return current.clone();
    }
    debug_assert!(batch.iter().all(|f| f.footprint == current.footprint));
    let transforms = register_batch(batch, params);
    fuse(batch, &transforms)
}
