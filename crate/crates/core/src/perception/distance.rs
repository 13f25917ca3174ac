//! Exact Euclidean distance transform and per-row peak extraction.

use super::SegMask;

/// Per-pixel distance (pixels) from foreground to the nearest background.
/// Only the window around the foreground is stored; everything else is 0.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceGrid {
    width: usize,
    height: usize,
    /// Window origin and size in image pixels.
    col0: usize,
    row0: usize,
    cols: usize,
    rows: usize,
    data: Vec<f64>,
}

impl DistanceGrid {
    fn empty(width: usize, height: usize) -> Self {
        Self { width, height, col0: 0, row0: 0, cols: 0, rows: 0, data: Vec::new() }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        assert!(col < self.width && row < self.height, "({col}, {row}) outside the grid");
        match (col.checked_sub(self.col0), row.checked_sub(self.row0)) {
            (Some(c), Some(r)) if c < self.cols && r < self.rows => self.data[r * self.cols + c],
            _ => 0.0,
        }
    }

    /// Full-width copy of one row.
    pub fn row(&self, row: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.width];
        if let Some(line) = self.window_row(row) {
            out[self.col0..self.col0 + self.cols].copy_from_slice(line);
        }
        out
    }

    fn window_row(&self, row: usize) -> Option<&[f64]> {
        let r = row.checked_sub(self.row0).filter(|&r| r < self.rows)?;
        Some(&self.data[r * self.cols..(r + 1) * self.cols])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let width = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == width));
        let height = rows.len();
        Self { width, height, col0: 0, row0: 0, cols: width, rows: height, data: rows.concat() }
    }
}

/// Lower envelope of parabolas (Felzenszwalb & Huttenlocher) over one line of
/// squared distances. Infinite entries contribute no parabola.
fn envelope_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let mut k: isize = -1;
    for (q, &fq) in f.iter().enumerate() {
        if !fq.is_finite() {
            continue;
        }
        loop {
            if k < 0 {
                k = 0;
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
                break;
            }
            let p = v[k as usize];
            let s = ((fq + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k as usize] {
                k -= 1;
                continue;
            }
            k += 1;
            v[k as usize] = q;
            z[k as usize] = s;
            z[k as usize + 1] = f64::INFINITY;
            break;
        }
    }
    if k < 0 {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0usize;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        *o = d * d + f[p];
    }
}

/// Euclidean distance transform; pixels outside the image count as background.
///
/// Only the foreground bounding box (plus a one-pixel background ring) is
/// processed; that is exact because every out-of-box background pixel is at
/// least as far as its clamp onto the ring.
pub fn distance_transform(mask: &SegMask) -> DistanceGrid {
    let (width, height) = (mask.width(), mask.height());
    let Some((c0, r0, c1, r1)) = mask.bounding_box() else {
        return DistanceGrid::empty(width, height);
    };
    // Padded window coordinates: window (0,0) is image (c0-1, r0-1).
    let w = c1 - c0 + 3;
    let h = r1 - r0 + 3;
    let mut sq = vec![0.0; w * h];
    for r in 0..h - 2 {
        for c in 0..w - 2 {
            if mask.get(c0 + c, r0 + r) {
                sq[(r + 1) * w + c + 1] = f64::INFINITY;
            }
        }
    }
    let n = w.max(h);
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    // Each line only needs its span of nonzero entries plus one zero on either
    // side: everything outside stays 0 and is no closer than that zero.
    for c in 0..w {
        let Some(first) = (0..h).find(|&r| sq[r * w + c] != 0.0) else { continue };
        let last = (first..h).rev().find(|&r| sq[r * w + c] != 0.0).unwrap_or(first);
        let (lo, hi) = (first - 1, last + 2);
        for r in lo..hi {
            f[r - lo] = sq[r * w + c];
        }
        let m = hi - lo;
        envelope_1d(&f[..m], &mut out[..m], &mut v[..m], &mut z[..m + 1]);
        for r in lo..hi {
            sq[r * w + c] = out[r - lo];
        }
    }
    for r in 0..h {
        let line = &mut sq[r * w..(r + 1) * w];
        let Some(first) = line.iter().position(|&x| x != 0.0) else { continue };
        let last = line.iter().rposition(|&x| x != 0.0).unwrap_or(first);
        let span = &mut line[first - 1..last + 2];
        let m = span.len();
        f[..m].copy_from_slice(span);
        envelope_1d(&f[..m], &mut out[..m], &mut v[..m], &mut z[..m + 1]);
        span.copy_from_slice(&out[..m]);
    }
    // Keep the ring where it lies inside the image.
    let col0 = c0.saturating_sub(1);
    let row0 = r0.saturating_sub(1);
    let cols = (c1 + 2).min(width) - col0;
    let rows = (r1 + 2).min(height) - row0;
    let (dc, dr) = (col0 + 1 - c0, row0 + 1 - r0);
    let mut data = Vec::with_capacity(cols * rows);
    for r in 0..rows {
        data.extend(sq[(r + dr) * w + dc..(r + dr) * w + dc + cols].iter().map(|v| v.sqrt()));
    }
    DistanceGrid { width, height, col0, row0, cols, rows, data }
}

/// Columns of strict local maxima (value ≥ 1) in each row. A plateau counts
/// once, at its center column (lower of the two middles when even).
pub fn scanline_peaks(dt: &DistanceGrid) -> Vec<Vec<usize>> {
    (0..dt.height())
        .map(|r| match dt.window_row(r) {
            // The window keeps a background ring, or ends at the image border,
            // so peaks inside it are peaks of the full row.
            Some(line) => row_peaks(line).into_iter().map(|c| c + dt.col0).collect(),
            None => Vec::new(),
        })
        .collect()
}

pub fn row_peaks(row: &[f64]) -> Vec<usize> {
    let mut peaks = Vec::new();
    let n = row.len();
    let mut i = 0;
    while i < n {
        let value = row[i];
        let mut j = i;
        while j + 1 < n && row[j + 1] == value {
            j += 1;
        }
        let left_lower = i == 0 || row[i - 1] < value;
        let right_lower = j + 1 == n || row[j + 1] < value;
        if value >= 1.0 && left_lower && right_lower {
            peaks.push(i + (j - i) / 2);
        }
        i = j + 1;
    }
    peaks
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense(dt: &DistanceGrid) -> Vec<f64> {
        (0..dt.height()).flat_map(|r| dt.row(r)).collect()
    }

    /// Brute-force oracle: minimum distance to every background pixel,
    /// including a one-pixel ring outside the image.
    fn brute_force(mask: &SegMask) -> Vec<f64> {
        let (w, h) = (mask.width() as i64, mask.height() as i64);
        let mut bg = Vec::new();
        for r in -1..=h {
            for c in -1..=w {
                let inside = r >= 0 && c >= 0 && r < h && c < w;
                if !inside || !mask.get(c as usize, r as usize) {
                    bg.push((c, r));
                }
            }
        }
        let mut out = vec![0.0; (w * h) as usize];
        for r in 0..h {
            for c in 0..w {
                if mask.get(c as usize, r as usize) {
                    out[(r * w + c) as usize] = bg
                        .iter()
                        .map(|&(bc, br)| (((bc - c).pow(2) + (br - r).pow(2)) as f64).sqrt())
                        .fold(f64::INFINITY, f64::min);
                }
            }
        }
        out
    }

    #[test]
    fn all_background_is_zero() {
        let dt = distance_transform(&SegMask::new(9, 4));
        assert!((0..4).all(|r| dt.row(r).iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn single_pixel_is_one() {
        let mut m = SegMask::new(5, 5);
        m.set(2, 2, true);
        let dt = distance_transform(&m);
        assert_eq!(dt.get(2, 2), 1.0);
        assert_eq!(dense(&dt).iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn five_row_bar_center_is_three() {
        let mut m = SegMask::new(30, 11);
        for r in 3..8 {
            for c in 2..28 {
                m.set(c, r, true);
            }
        }
        let dt = distance_transform(&m);
        let oracle = brute_force(&m);
        assert_eq!(oracle[5 * 30 + 15], 3.0);
        assert_eq!(dt.get(15, 5), 3.0);
    }

    #[test]
    fn mask_touching_border_uses_outside_as_background() {
        let m = SegMask::from_data(3, 3, vec![1; 9]).unwrap();
        let dt = distance_transform(&m);
        assert_eq!(dt.get(1, 1), 2.0);
        assert_eq!(dt.get(0, 0), 1.0);
    }

    #[test]
    fn peaks_simple_rows() {
        assert!(row_peaks(&[0.0; 6]).is_empty());
        assert_eq!(row_peaks(&[0.0, 1.0, 2.0, 1.0, 0.0]), vec![2]);
        // Even plateau: lower middle.
        assert_eq!(row_peaks(&[0.0, 1.0, 2.0, 2.0, 1.0, 0.0]), vec![2]);
        // Odd plateau: center.
        assert_eq!(row_peaks(&[0.0, 1.0, 1.0, 1.0, 0.0]), vec![2]);
        // Shoulder is not a peak.
        assert_eq!(row_peaks(&[0.0, 1.0, 1.0, 2.0, 0.0]), vec![3]);
        // Sub-unit maxima are ignored.
        assert!(row_peaks(&[0.0, 0.5, 0.0]).is_empty());
    }

    /// Scan oracle: explicit neighbourhood comparison over the plateau.
    fn scan_oracle(row: &[f64]) -> Vec<usize> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 0..row.len() {
            let end_of_run = i + 1 == row.len() || row[i + 1] != row[i];
            if end_of_run {
                let before = if start == 0 { f64::NEG_INFINITY } else { row[start - 1] };
                let after = if i + 1 == row.len() { f64::NEG_INFINITY } else { row[i + 1] };
                if row[i] >= 1.0 && before < row[i] && after < row[i] {
                    out.push((start + i) / 2);
                }
                start = i + 1;
            }
        }
        out
    }

    #[test]
    fn two_blobs_give_two_peaks() {
        let mut m = SegMask::new(40, 9);
        for r in 2..7 {
            for c in 5..10 {
                m.set(c, r, true);
            }
            for c in 25..32 {
                m.set(c, r, true);
            }
        }
        let dt = distance_transform(&m);
        let peaks = scanline_peaks(&dt);
        assert_eq!(peaks[4], scan_oracle(&dt.row(4)));
        assert_eq!(peaks[4], vec![7, 28]);
    }

    proptest! {
        #[test]
        fn matches_brute_force(w in 1usize..14, h in 1usize..14, bits in proptest::collection::vec(any::<bool>(), 196)) {
            let data: Vec<u8> = (0..w * h).map(|i| bits[i] as u8).collect();
            let m = SegMask::from_data(w, h, data).unwrap();
            let dt = distance_transform(&m);
            let oracle = brute_force(&m);
            for (a, b) in dense(&dt).iter().zip(&oracle) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let peaks = scanline_peaks(&dt);
            for (r, row_peaks_found) in peaks.iter().enumerate() {
                prop_assert_eq!(row_peaks_found, &scan_oracle(&dt.row(r)));
            }
        }

        #[test]
        fn peaks_match_scan_oracle(vals in proptest::collection::vec(0u8..4, 1..40)) {
            let row: Vec<f64> = vals.iter().map(|&v| v as f64).collect();
            prop_assert_eq!(row_peaks(&row), scan_oracle(&row));
        }
    }
}
