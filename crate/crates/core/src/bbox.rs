use serde::{Deserialize, Serialize};

/// Axis-aligned box, 0-based top-left corner, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.x + dx, self.y + dy, self.w, self.h)
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.w > 0.0 && self.h > 0.0 && self.w.is_finite() && self.h.is_finite())
            || !self.x.is_finite()
            || !self.y.is_finite()
    }

    /// Keeps the box center inside a `width x height` frame.
    pub fn clamp_center(&self, width: usize, height: usize) -> Self {
        let (cx, cy) = self.center();
        let cx = cx.clamp(0.0, width as f64 - 1.0);
        let cy = cy.clamp(0.0, height as f64 - 1.0);
        Self::new(cx - self.w / 2.0, cy - self.h / 2.0, self.w, self.h)
    }
}
