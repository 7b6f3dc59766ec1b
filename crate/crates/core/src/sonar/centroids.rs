use super::{AcousticImage, PointCloud2D};

/// Segments the image by gradient magnitude and returns one sensor-frame
/// point per connected border segment.
///
/// Gradients are central differences on the polar raster with edge pixels
/// replicated. Pixels whose gradient magnitude exceeds `grad_threshold` are
/// grouped into 8-connected components; components smaller than
/// `min_blob_px` are ignored. Each surviving component contributes its
/// intensity-weighted centroid (in bin coordinates), converted to meters.
pub fn extract_centroids(
    img: &AcousticImage,
    grad_threshold: f64,
    min_blob_px: usize,
) -> PointCloud2D {
    let (rows, cols) = img.shape();
    let px = |r: usize, b: usize| img.get(r, b);

    let mut edge = vec![false; rows * cols];
    for r in 0..rows {
        let (up, down) = (r.saturating_sub(1), (r + 1).min(rows - 1));
        for b in 0..cols {
            let (left, right) = (b.saturating_sub(1), (b + 1).min(cols - 1));
            let gr = 0.5 * (px(down, b) - px(up, b));
            let gb = 0.5 * (px(r, right) - px(r, left));
            edge[r * cols + b] = gr.hypot(gb) > grad_threshold;
        }
    }

    let mut seen = vec![false; rows * cols];
    let mut stack = Vec::new();
    let mut points = Vec::new();
    for start in 0..rows * cols {
        if !edge[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut n, mut wsum, mut wr, mut wb, mut ur, mut ub) = (0usize, 0.0, 0.0, 0.0, 0.0, 0.0);
        while let Some(i) = stack.pop() {
            let (r, b) = (i / cols, i % cols);
            let w = px(r, b);
            n += 1;
            wsum += w;
            wr += w * r as f64;
            wb += w * b as f64;
            ur += r as f64;
            ub += b as f64;
            let mut visit = |j: usize| {
                if edge[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            for nr in r.saturating_sub(1)..=(r + 1).min(rows - 1) {
                for nb in b.saturating_sub(1)..=(b + 1).min(cols - 1) {
                    visit(nr * cols + nb);
                }
            }
        }
        if n < min_blob_px {
            continue;
        }
        let (cr, cb) = if wsum > 0.0 {
            (wr / wsum, wb / wsum)
        } else {
            (ur / n as f64, ub / n as f64)
        };
        let (x, y) = img.footprint.bin_to_sensor(cr, cb);
        points.push([x, y]);
    }
    PointCloud2D::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geomap::SonarFootprint;

    fn square(img: &mut AcousticImage, r0: usize, b0: usize, half: usize) {
        for r in r0 - half..=r0 + half {
            for b in b0 - half..=b0 + half {
                img.set(r, b, 1.0);
            }
        }
    }

    /// Counts 8-connected bright blobs with a BFS, independent of the
    /// gradient segmentation.
    fn count_blobs(img: &AcousticImage) -> usize {
        let (rows, cols) = img.shape();
        let mut seen = vec![false; rows * cols];
        let mut count = 0;
        for i in 0..rows * cols {
            if seen[i] || img.data()[i] <= 0.0 {
                continue;
            }
            count += 1;
            let mut queue = std::collections::VecDeque::from([i]);
            seen[i] = true;
            while let Some(j) = queue.pop_front() {
                let (r, b) = ((j / cols) as i64, (j % cols) as i64);
                for dr in -1..=1 {
                    for db in -1..=1 {
                        let (nr, nb) = (r + dr, b + db);
                        if nr < 0 || nb < 0 || nr >= rows as i64 || nb >= cols as i64 {
                            continue;
                        }
                        let k = nr as usize * cols + nb as usize;
                        if !seen[k] && img.data()[k] > 0.0 {
                            seen[k] = true;
                            queue.push_back(k);
                        }
                    }
                }
            }
        }
        count
    }

    #[test]
    fn empty_image_gives_empty_cloud() {
        let img = AcousticImage::zeros(SonarFootprint::default(), 0.0);
        assert!(extract_centroids(&img, 0.1, 4).is_empty());
    }

    #[test]
    fn single_square_centroid_matches_polar_mapping() {
        let fp = SonarFootprint::default();
        let mut img = AcousticImage::zeros(fp, 0.0);
        square(&mut img, 64, 128, 2);
        let cloud = extract_centroids(&img, 0.1, 4);
        assert_eq!(cloud.len(), 1);

        // analytic: range of bin 64 center, bearing of column 128 center
        let rho = (64.0 + 0.5) * 30.0 / 128.0;
        let beta = -std::f64::consts::FRAC_PI_4 + (128.0 + 0.5) * (std::f64::consts::FRAC_PI_2 / 256.0);
        let (ex, ey) = (rho * beta.cos(), rho * beta.sin());
        let p = cloud.points()[0];
        let half_bin = 0.5 * fp.range_step().min(rho * fp.bearing_step());
        assert!((p[0] - ex).hypot(p[1] - ey) < half_bin, "{p:?} vs ({ex}, {ey})");
    }

    #[test]
    fn disjoint_blobs_give_one_centroid_each() {
        let mut img = AcousticImage::zeros(SonarFootprint::default(), 0.0);
        square(&mut img, 30, 40, 2);
        square(&mut img, 90, 200, 3);
        assert_eq!(count_blobs(&img), 2);
        assert_eq!(extract_centroids(&img, 0.1, 4).len(), count_blobs(&img));

        square(&mut img, 100, 60, 1);
        assert_eq!(count_blobs(&img), 3);
        assert_eq!(extract_centroids(&img, 0.1, 4).len(), 3);
    }

    #[test]
    fn small_segments_are_dropped() {
        let mut img = AcousticImage::zeros(SonarFootprint::default(), 0.0);
        img.set(50, 50, 1.0);
        // a lone pixel yields a ring of its four direct neighbours
        assert_eq!(extract_centroids(&img, 0.1, 4).len(), 1);
        assert_eq!(extract_centroids(&img, 0.1, 5).len(), 0);
    }
}
