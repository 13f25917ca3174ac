use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{GrayImage, ImageEncoder, Luma, Rgb, RgbImage};

use super::PerceptionError;

/// Binary segmentation mask, row-major, values in {0, 1}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl SegMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0; width * height] }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<u8>) -> Result<Self, PerceptionError> {
        if data.len() != width * height {
            return Err(PerceptionError::InvalidMask(format!(
                "expected {} values for {width}x{height}, got {}",
                width * height,
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(PerceptionError::InvalidMask("values must be 0 or 1".into()));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, col: usize, row: usize) -> bool {
        self.data[row * self.width + col] != 0
    }

    pub fn set(&mut self, col: usize, row: usize, on: bool) {
        self.data[row * self.width + col] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// Inclusive bounding box `(col0, row0, col1, row1)` of the foreground.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bbox: Option<(usize, usize, usize, usize)> = None;
        for row in 0..self.height {
            let line = &self.data[row * self.width..(row + 1) * self.width];
            let Some(first) = line.iter().position(|&v| v != 0) else { continue };
            let last = line.iter().rposition(|&v| v != 0).unwrap_or(first);
            bbox = Some(match bbox {
                None => (first, row, last, row),
                Some((c0, r0, c1, _)) => (c0.min(first), r0, c1.max(last), row),
            });
        }
        bbox
    }

    /// Turns on background pixels with at least `min_neighbors` of their 8
    /// neighbors on. Decided on the input mask, so filled pixels do not
    /// cascade.
    pub fn fill_pinholes(&self, min_neighbors: usize) -> SegMask {
        let mut out = self.clone();
        // Per-row foreground extent; a pixel can only fill next to one.
        let extents: Vec<Option<(usize, usize)>> = (0..self.height)
            .map(|row| {
                let line = &self.data[row * self.width..(row + 1) * self.width];
                let first = line.iter().position(|&v| v != 0)?;
                Some((first, line.iter().rposition(|&v| v != 0).unwrap_or(first)))
            })
            .collect();
        for row in 0..self.height {
            let near = extents[row.saturating_sub(1)..=(row + 1).min(self.height - 1)].iter().flatten();
            let Some((c0, c1)) = near.fold(None, |acc: Option<(usize, usize)>, &(a, b)| {
                Some(acc.map_or((a, b), |(x, y)| (x.min(a), y.max(b))))
            }) else {
                continue;
            };
            for col in c0.saturating_sub(1)..=(c1 + 1).min(self.width - 1) {
                if self.get(col, row) {
                    continue;
                }
                let mut on = 0;
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        let (r, c) = (row as i64 + dr, col as i64 + dc);
                        if (dr, dc) != (0, 0)
                            && r >= 0
                            && c >= 0
                            && (r as usize) < self.height
                            && (c as usize) < self.width
                            && self.get(c as usize, r as usize)
                        {
                            on += 1;
                        }
                    }
                }
                if on >= min_neighbors {
                    out.set(col, row, true);
                }
            }
        }
        out
    }

    /// Sub-window starting at `(col0, row0)`; the window must lie inside.
    pub fn window(&self, col0: usize, row0: usize, width: usize, height: usize) -> SegMask {
        assert!(col0 + width <= self.width && row0 + height <= self.height);
        let mut out = SegMask::new(width, height);
        for r in 0..height {
            let src = (row0 + r) * self.width + col0;
            out.data[r * width..(r + 1) * width].copy_from_slice(&self.data[src..src + width]);
        }
        out
    }

    pub fn to_gray_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([if self.get(x as usize, y as usize) { 255 } else { 0 }])
        })
    }

    /// Binary PGM (P5) bytes with values 0/255.
    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let img = self.to_gray_image();
        PnmEncoder::new(&mut out)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::L8)
            .expect("in-memory PGM encoding");
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<(), PerceptionError> {
        std::fs::write(path, self.to_pgm_bytes()).map_err(|e| PerceptionError::Io(format!("{}: {e}", path.display())))
    }

    /// Reads a PGM; any nonzero sample counts as foreground.
    pub fn read_pgm(path: &Path) -> Result<Self, PerceptionError> {
        let img = image::open(path)
            .map_err(|e| PerceptionError::Io(format!("{}: {e}", path.display())))?
            .into_luma8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| (v != 0) as u8).collect();
        Self::from_data(w as usize, h as usize, data)
    }
}

/// Color overlay for inspecting a fit: mask in gray, inliers blue, outliers
/// red, reprojected circle green.
pub struct Overlay {
    image: RgbImage,
}

impl Overlay {
    pub fn from_mask(mask: &SegMask) -> Self {
        let image = RgbImage::from_fn(mask.width as u32, mask.height as u32, |x, y| {
            if mask.get(x as usize, y as usize) {
                Rgb([110, 110, 110])
            } else {
                Rgb([0, 0, 0])
            }
        });
        Self { image }
    }

    pub fn mark(&mut self, col: f64, row: f64, color: [u8; 3], half: i64) {
        let (c, r) = (col.floor() as i64, row.floor() as i64);
        for dr in -half..=half {
            for dc in -half..=half {
                let (x, y) = (c + dc, r + dr);
                if x >= 0 && y >= 0 && (x as u32) < self.image.width() && (y as u32) < self.image.height() {
                    self.image.put_pixel(x as u32, y as u32, Rgb(color));
                }
            }
        }
    }

    pub fn write_ppm(&self, path: &Path) -> Result<(), PerceptionError> {
        let file = std::fs::File::create(path).map_err(|e| PerceptionError::Io(format!("{}: {e}", path.display())))?;
        PnmEncoder::new(std::io::BufWriter::new(file))
            .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
            .write_image(
                self.image.as_raw(),
                self.image.width(),
                self.image.height(),
                image::ExtendedColorType::Rgb8,
            )
            .map_err(|e| PerceptionError::Io(format!("{}: {e}", path.display())))
    }
}
