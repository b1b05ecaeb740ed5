//! Dense row-major 2D grids used for frames, g-buffer channels and atlases.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Linear RGB in [0, 1].
pub type ColorImage = Raster<[f64; 3]>;

impl<T: Clone> Raster<T> {
    pub fn new(width: usize, height: usize, fill: T) -> Self {
        Raster {
            width,
            height,
            data: vec![fill; width * height],
        }
    }
}

impl<T> Raster<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "raster of {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Raster {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Raster {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[self.index(x, y)]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        let i = self.index(x, y);
        &mut self.data[i]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        let i = self.index(x, y);
        self.data[i] = value;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_dims<U>(&self, other: &Raster<U>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Values that can be blended linearly for bilinear filtering.
pub trait Lerp: Copy {
    fn weighted(self, w: f64) -> Self;
    fn add(self, other: Self) -> Self;
}

impl Lerp for f64 {
    #[inline]
    fn weighted(self, w: f64) -> Self {
        self * w
    }
    #[inline]
    fn add(self, other: Self) -> Self {
        self + other
    }
}

impl Lerp for [f64; 3] {
    #[inline]
    fn weighted(self, w: f64) -> Self {
        [self[0] * w, self[1] * w, self[2] * w]
    }
    #[inline]
    fn add(self, o: Self) -> Self {
        [self[0] + o[0], self[1] + o[1], self[2] + o[2]]
    }
}

impl<T: Lerp> Raster<T> {
    /// Bilinear lookup at continuous pixel coordinates, where pixel `(i, j)`
    /// covers `[i, i+1) x [j, j+1)` and its center sits at `(i+0.5, j+0.5)`.
    /// Lookups outside the grid clamp to the border.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> T {
        let fx = x - 0.5;
        let fy = y - 0.5;
        let x0 = fx.floor();
        let y0 = fy.floor();
        let tx = fx - x0;
        let ty = fy - y0;
        let max_x = self.width as i64 - 1;
        let max_y = self.height as i64 - 1;
        let cx = |v: f64| (v as i64).clamp(0, max_x) as usize;
        let cy = |v: f64| (v as i64).clamp(0, max_y) as usize;
        let (xa, xb) = (cx(x0), cx(x0 + 1.0));
        let (ya, yb) = (cy(y0), cy(y0 + 1.0));
        let top = self
            .get(xa, ya)
            .weighted(1.0 - tx)
            .add(self.get(xb, ya).weighted(tx));
        let bottom = self
            .get(xa, yb)
            .weighted(1.0 - tx)
            .add(self.get(xb, yb).weighted(tx));
        top.weighted(1.0 - ty).add(bottom.weighted(ty))
    }
}
