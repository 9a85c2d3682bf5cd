//! Convex polygon helpers used to propagate image regions through homographies.

use super::homography::{Homography, Point};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polygon(pub Vec<Point>);

impl Polygon {
    pub fn rect(width: f64, height: f64) -> Self {
        Polygon(vec![[0.0, 0.0], [width, 0.0], [width, height], [0.0, height]])
    }

    pub fn is_empty(&self) -> bool {
        self.0.len() < 3 || self.area() <= 0.0
    }

    /// Unsigned shoelace area.
    pub fn area(&self) -> f64 {
        let n = self.0.len();
        if n < 3 {
            return 0.0;
        }
        let mut s = 0.0;
        for i in 0..n {
            let a = self.0[i];
            let b = self.0[(i + 1) % n];
            s += a[0] * b[1] - a[1] * b[0];
        }
        (s * 0.5).abs()
    }

    /// Keeps the part where `a·x + b·y + c ≥ 0` (Sutherland–Hodgman step).
    pub fn clip_half_plane(&self, a: f64, b: f64, c: f64) -> Polygon {
        let n = self.0.len();
        let mut out = Vec::with_capacity(n + 2);
        if n == 0 {
            return Polygon(out);
        }
        let side = |p: Point| a * p[0] + b * p[1] + c;
        for i in 0..n {
            let cur = self.0[i];
            let next = self.0[(i + 1) % n];
            let sc = side(cur);
            let sn = side(next);
            if sc >= 0.0 {
                out.push(cur);
            }
            if (sc >= 0.0) != (sn >= 0.0) {
                let t = sc / (sc - sn);
                out.push([cur[0] + t * (next[0] - cur[0]), cur[1] + t * (next[1] - cur[1])]);
            }
        }
        Polygon(out)
    }

    /// Intersection with the frame `[0, width] × [0, height]`.
    pub fn clip_to_frame(&self, width: f64, height: f64) -> Polygon {
        self.clip_half_plane(1.0, 0.0, 0.0)
            .clip_half_plane(-1.0, 0.0, width)
            .clip_half_plane(0.0, 1.0, 0.0)
            .clip_half_plane(0.0, -1.0, height)
    }

    /// Maps the polygon through `h`, first cutting away the part that would
    /// cross the line at infinity.
    pub fn map(&self, h: &Homography) -> Polygon {
        let m = h.matrix();
        // A homography is defined up to sign; orient w by its sum over the
        // vertices, then keep the strictly positive side with a margin
        // relative to the polygon's extent in w.
        let ws: Vec<f64> = self.0.iter().map(|p| m[(2, 0)] * p[0] + m[(2, 1)] * p[1] + m[(2, 2)]).collect();
        let sign = if ws.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
        let (a, b, c) = (sign * m[(2, 0)], sign * m[(2, 1)], sign * m[(2, 2)]);
        let wmax = ws.iter().cloned().fold(0.0f64, |x, y| x.max(y.abs()));
        let front = if ws.iter().all(|&w| sign * w > 1e-9 * wmax) {
            self.clone()
        } else {
            self.clip_half_plane(a, b, c - 1e-9 * wmax)
        };
        Polygon(front.0.iter().filter_map(|&p| h.apply(p)).collect())
    }
}
