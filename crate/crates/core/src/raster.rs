//! Grayscale raster and image file helpers.

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no numbered images in {0}")]
    NoImages(PathBuf),
}

impl RasterError {
    pub fn name(&self) -> &'static str {
        match self {
            RasterError::Image { .. } => "ImageError",
            RasterError::Io { .. } => "IoError",
            RasterError::NoImages(_) => "NoImages",
        }
    }
}

/// Row-major single-channel image with f32 intensities on a 0..255 scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(width: usize, height: usize) -> Self {
        Raster { width, height, data: vec![0.0; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height, "raster data length");
        Raster { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn row(&self, y: usize) -> &[f32] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    /// Bilinear sample; coordinates are clamped to the raster.
    pub fn bilinear(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let g = |x, y| self.get(x, y) as f64;
        let top = g(x0, y0) * (1.0 - fx) + g(x1, y0) * fx;
        let bottom = g(x0, y1) * (1.0 - fx) + g(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Copy of the `w`x`h` window at (`x`, `y`).
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Raster {
        let mut out = Raster::new(w, h);
        for r in 0..h {
            out.data[r * w..(r + 1) * w].copy_from_slice(&self.row(y + r)[x..x + w]);
        }
        out
    }

    pub fn to_gray8(&self) -> image::GrayImage {
        image::GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            image::Luma([self.get(x as usize, y as usize).round().clamp(0.0, 255.0) as u8])
        })
    }

    pub fn from_gray8(img: &image::GrayImage) -> Self {
        Raster {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.pixels().map(|p| p.0[0] as f32).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, RasterError> {
        let img = image::open(path).map_err(|source| RasterError::Image { path: path.to_owned(), source })?;
        Ok(Self::from_gray8(&img.to_luma8()))
    }

    /// Writes as 8-bit grayscale; the format follows the extension.
    pub fn save(&self, path: &Path) -> Result<(), RasterError> {
        self.to_gray8().save(path).map_err(|source| RasterError::Image { path: path.to_owned(), source })
    }
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("png" | "pgm" | "pnm" | "ppm")
    )
}

/// Leading-digit-run number in a file stem, e.g. `frame_0012.png` -> 12.
fn stem_number(path: &Path) -> Option<u64> {
    let stem = path.file_stem()?.to_str()?;
    let digits: String = stem.chars().skip_while(|c| !c.is_ascii_digit()).take_while(|c| c.is_ascii_digit()).collect();
    digits.parse().ok()
}

/// Image files in `dir` ordered by the number in their name, then by name.
pub fn numbered_images(dir: &Path) -> Result<Vec<PathBuf>, RasterError> {
    let rd = std::fs::read_dir(dir).map_err(|source| RasterError::Io { path: dir.to_owned(), source })?;
    let mut paths = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|source| RasterError::Io { path: dir.to_owned(), source })?;
        let p = entry.path();
        if p.is_file() && is_image(&p) {
            paths.push(p);
        }
    }
    if paths.is_empty() {
        return Err(RasterError::NoImages(dir.to_owned()));
    }
    paths.sort_by(|a, b| (stem_number(a), a).cmp(&(stem_number(b), b)));
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_matches_corners_and_midpoints() {
        let r = Raster::from_vec(2, 2, vec![0.0, 10.0, 20.0, 30.0]);
        assert_eq!(r.bilinear(0.0, 0.0), 0.0);
        assert_eq!(r.bilinear(1.0, 1.0), 30.0);
        assert_eq!(r.bilinear(0.5, 0.0), 5.0);
        assert_eq!(r.bilinear(0.5, 0.5), 15.0);
    }

    #[test]
    fn crop_and_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let r = Raster::from_vec(4, 3, (0..12).map(|v| (v * 20) as f32).collect());
        let c = r.crop(1, 1, 2, 2);
        assert_eq!(c.data(), &[100.0, 120.0, 180.0, 200.0]);
        for (i, ext) in ["png", "pgm"].iter().enumerate() {
            let p = dir.path().join(format!("img_{}.{ext}", 10 - i));
            r.save(&p).unwrap();
            assert_eq!(Raster::load(&p).unwrap(), r);
        }
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let list = numbered_images(dir.path()).unwrap();
        let names: Vec<_> = list.iter().map(|p| p.file_name().unwrap().to_str().unwrap().to_owned()).collect();
        assert_eq!(names, ["img_9.pgm", "img_10.png"]);
    }
}
