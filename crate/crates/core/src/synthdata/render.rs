//! Anti-aliased rasterization of capsules and disks.

use crate::image::Image;

#[derive(Clone, Copy, Debug)]
pub(crate) struct Shape {
    pub a: (f64, f64),
    pub b: (f64, f64),
    pub radius: f64,
    pub color: [f32; 3],
}

impl Shape {
    pub(crate) fn disk(c: (f64, f64), radius: f64, color: [f32; 3]) -> Self {
        Self {
            a: c,
            b: c,
            radius,
            color,
        }
    }

    fn distance(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (self.b.0 - self.a.0, self.b.1 - self.a.1);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 {
            (((x - self.a.0) * dx + (y - self.a.1) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (px, py) = (self.a.0 + t * dx, self.a.1 + t * dy);
        ((x - px).powi(2) + (y - py).powi(2)).sqrt()
    }

    /// Fraction of the pixel centered at `(x, y)` covered, via a one-pixel ramp.
    pub(crate) fn coverage(&self, x: f64, y: f64) -> f64 {
        (self.radius + 0.5 - self.distance(x, y)).clamp(0.0, 1.0)
    }

    pub(crate) fn draw(&self, img: &mut Image) {
        let r = self.radius + 1.0;
        let x0 = (self.a.0.min(self.b.0) - r).floor().max(0.0) as usize;
        let y0 = (self.a.1.min(self.b.1) - r).floor().max(0.0) as usize;
        let x1 = ((self.a.0.max(self.b.0) + r).ceil().max(0.0) as usize).min(img.width());
        let y1 = ((self.a.1.max(self.b.1) + r).ceil().max(0.0) as usize).min(img.height());
        for y in y0..y1 {
            for x in x0..x1 {
                let c = self.coverage(x as f64, y as f64);
                if c > 0.0 {
                    img.blend(y, x, self.color, c as f32);
                }
            }
        }
    }
}
