//! UV-space texture paired with its accumulated confidence.

use nalgebra::Point2;

use crate::error::{Error, Result};
use crate::raster::{ColorImage, Raster};

/// Color and confidence grids over the unit UV square. Row 0 is the top of
/// the texture (v = 1); texel `(x, y)` is centered at
/// `u = (x + 0.5) / W`, `v = 1 - (y + 0.5) / H`.
#[derive(Clone, Debug, PartialEq)]
pub struct TextureAtlas {
    color: ColorImage,
    confidence: Raster<f64>,
}

impl TextureAtlas {
    /// All texels unfilled: color 0, confidence 0.
    pub fn empty(width: usize, height: usize) -> Self {
        TextureAtlas {
            color: Raster::new(width, height, [0.0; 3]),
            confidence: Raster::new(width, height, 0.0),
        }
    }

    pub fn new(color: ColorImage, confidence: Raster<f64>) -> Result<Self> {
        if !color.same_dims(&confidence) {
            return Err(Error::ResolutionMismatch(format!(
                "color {:?} vs confidence {:?}",
                color.dims(),
                confidence.dims()
            )));
        }
        if let Some(c) = confidence.data().iter().find(|c| !(**c >= 0.0) || !c.is_finite()) {
            return Err(Error::InvalidInput(format!("confidence value {c} is not a finite non-negative number")));
        }
        let mut atlas = TextureAtlas { color, confidence };
        atlas.clear_unfilled();
        Ok(atlas)
    }

    /// A fully known texture (confidence 1 everywhere), e.g. an asset's
    /// reference texture.
    pub fn from_texture(color: ColorImage) -> Self {
        let (w, h) = color.dims();
        TextureAtlas {
            color,
            confidence: Raster::new(w, h, 1.0),
        }
    }

    fn clear_unfilled(&mut self) {
        let conf = self.confidence.data();
        for (c, w) in self.color.data_mut().iter_mut().zip(conf) {
            if *w == 0.0 {
                *c = [0.0; 3];
            }
        }
    }

    pub fn width(&self) -> usize {
        self.color.width()
    }

    pub fn height(&self) -> usize {
        self.color.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.color.dims()
    }

    pub fn color(&self) -> &ColorImage {
        &self.color
    }

    pub fn confidence(&self) -> &Raster<f64> {
        &self.confidence
    }

    pub fn max_confidence(&self) -> f64 {
        self.confidence.data().iter().copied().fold(0.0, f64::max)
    }

    /// Continuous texel coordinates of a UV point.
    #[inline]
    pub fn uv_to_texel(&self, uv: Point2<f64>) -> (f64, f64) {
        (
            uv.x * self.width() as f64,
            (1.0 - uv.y) * self.height() as f64,
        )
    }

    pub fn sample_color(&self, uv: Point2<f64>) -> [f64; 3] {
        let (x, y) = self.uv_to_texel(uv);
        self.color.sample_bilinear(x, y)
    }

    pub fn sample_confidence(&self, uv: Point2<f64>) -> f64 {
        let (x, y) = self.uv_to_texel(uv);
        self.confidence.sample_bilinear(x, y)
    }
}

/// UV coordinate of a texel center.
#[inline]
pub fn texel_center_uv(x: usize, y: usize, width: usize, height: usize) -> Point2<f64> {
    Point2::new(
        (x as f64 + 0.5) / width as f64,
        1.0 - (y as f64 + 0.5) / height as f64,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_confidence_texels_are_cleared() {
        let color = Raster::new(2, 1, [0.5, 0.5, 0.5]);
        let conf = Raster::from_vec(2, 1, vec![0.0, 2.0]).unwrap();
        let a = TextureAtlas::new(color, conf).unwrap();
        assert_eq!(*a.color().get(0, 0), [0.0; 3]);
        assert_eq!(*a.color().get(1, 0), [0.5; 3]);
    }

    #[test]
    fn negative_confidence_rejected() {
        let color = Raster::new(1, 1, [0.0; 3]);
        let conf = Raster::new(1, 1, -1.0);
        assert!(TextureAtlas::new(color, conf).is_err());
    }

    #[test]
    fn texel_center_round_trip() {
        let a = TextureAtlas::empty(8, 4);
        let uv = texel_center_uv(3, 1, 8, 4);
        let (x, y) = a.uv_to_texel(uv);
        assert!((x - 3.5).abs() < 1e-12 && (y - 1.5).abs() < 1e-12);
    }
}
