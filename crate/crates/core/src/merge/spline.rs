//! Lane centerlines as cubic splines in arclength.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Natural cubic spline through `(knots[k], values[k])`.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn natural(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let n = knots.len();
        if n < 2 || values.len() != n {
            return Err(Error::InvalidArgument("spline needs at least two knots".into()));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("spline knots must increase".into()));
        }
        let mut m = vec![0.0; n];
        if n > 2 {
            // tridiagonal system for the interior second derivatives
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut upper = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for i in 1..n - 1 {
                let h0 = knots[i] - knots[i - 1];
                let h1 = knots[i + 1] - knots[i];
                diag[i - 1] = 2.0 * (h0 + h1);
                upper[i - 1] = h1;
                rhs[i - 1] = 6.0 * ((values[i + 1] - values[i]) / h1 - (values[i] - values[i - 1]) / h0);
            }
            for i in 1..k {
                let lower = knots[i + 1] - knots[i];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
            }
        }
        Ok(Self { knots, values, m })
    }

    pub fn start(&self) -> f64 {
        self.knots[0]
    }

    pub fn end(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    fn segment(&self, s: f64) -> usize {
        match self.knots.partition_point(|k| *k <= s) {
            0 => 0,
            i => (i - 1).min(self.knots.len() - 2),
        }
    }

    /// Value and first two derivatives inside the knot range.
    fn eval_inside(&self, s: f64) -> (f64, f64, f64) {
        let i = self.segment(s);
        let h = self.knots[i + 1] - self.knots[i];
        let a = (self.knots[i + 1] - s) / h;
        let b = (s - self.knots[i]) / h;
        let (y0, y1, m0, m1) = (self.values[i], self.values[i + 1], self.m[i], self.m[i + 1]);
        let v = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let d1 = (y1 - y0) / h + ((1.0 - 3.0 * a * a) * m0 + (3.0 * b * b - 1.0) * m1) * h / 6.0;
        let d2 = a * m0 + b * m1;
        (v, d1, d2)
    }

    /// Value, slope and curvature term; linear extrapolation outside the knots.
    pub fn eval(&self, s: f64) -> (f64, f64, f64) {
        if s < self.start() {
            let (v, d1, _) = self.eval_inside(self.start());
            (v + d1 * (s - self.start()), d1, 0.0)
        } else if s > self.end() {
            let (v, d1, _) = self.eval_inside(self.end());
            (v + d1 * (s - self.end()), d1, 0.0)
        } else {
            self.eval_inside(s)
        }
    }
}

/// A lane centerline parametrized by arclength, with its curvature.
#[derive(Debug, Clone)]
pub struct CenterlineSpline {
    cx: CubicSpline,
    cy: CubicSpline,
    kappa: CubicSpline,
    length: f64,
    pub half_width: f64,
}

/// Arclength spacing of the resampled centerline knots, in meters.
const RESAMPLE_SPACING: f64 = 0.1;
const KAPPA_REFINE: usize = 4;

fn curvature(dx: f64, dy: f64, ddx: f64, ddy: f64) -> f64 {
    (dx * ddy - dy * ddx) / (dx * dx + dy * dy).powf(1.5)
}

impl CenterlineSpline {
    /// Fits a centerline through the points: a chord-length spline is
    /// resampled uniformly in arclength and refit in `s`.
    pub fn from_points(points: &[[f64; 2]], half_width: f64) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidArgument("centerline needs two points".into()));
        }
        if !(half_width > 0.0) {
            return Err(Error::InvalidArgument("lane half-width must be positive".into()));
        }
        let mut chord = vec![0.0];
        for w in points.windows(2) {
            let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            chord.push(chord.last().unwrap() + d);
        }
        let px = CubicSpline::natural(chord.clone(), points.iter().map(|p| p[0]).collect())?;
        let py = CubicSpline::natural(chord.clone(), points.iter().map(|p| p[1]).collect())?;

        // arclength of the chord spline by dense Simpson integration
        let total_chord = *chord.last().unwrap();
        let fine = ((total_chord / 0.005).ceil() as usize).max(2) & !1;
        let speed = |c: f64| {
            let (_, dx, _) = px.eval(c);
            let (_, dy, _) = py.eval(c);
            dx.hypot(dy)
        };
        let h = total_chord / fine as f64;
        let mut arc = vec![0.0; fine + 1];
        for k in 1..=fine {
            let a = (k - 1) as f64 * h;
            arc[k] = arc[k - 1] + h / 6.0 * (speed(a) + 4.0 * speed(a + 0.5 * h) + speed(a + h));
        }
        let length = arc[fine];
        let count = ((length / RESAMPLE_SPACING).ceil() as usize).max(1);
        let mut s_knots = Vec::with_capacity(count + 1);
        let mut xs = Vec::with_capacity(count + 1);
        let mut ys = Vec::with_capacity(count + 1);
        for j in 0..=count {
            let s = length * j as f64 / count as f64;
            let k = arc.partition_point(|a| *a < s).clamp(1, fine);
            let frac = (s - arc[k - 1]) / (arc[k] - arc[k - 1]).max(1e-300);
            let c = (k - 1) as f64 * h + frac.clamp(0.0, 1.0) * h;
            s_knots.push(s);
            xs.push(px.eval(c).0);
            ys.push(py.eval(c).0);
        }
        let cx = CubicSpline::natural(s_knots.clone(), xs)?;
        let cy = CubicSpline::natural(s_knots.clone(), ys)?;
        // curvature knots are denser so the fit follows the position spline
        let k_count = count * KAPPA_REFINE;
        let k_knots: Vec<f64> = (0..=k_count).map(|j| length * j as f64 / k_count as f64).collect();
        let kap: Vec<f64> = k_knots
            .iter()
            .map(|&s| {
                let (_, dx, ddx) = cx.eval(s);
                let (_, dy, ddy) = cy.eval(s);
                curvature(dx, dy, ddx, ddy)
            })
            .collect();
        let kappa = CubicSpline::natural(k_knots, kap)?;
        Ok(Self {
            cx,
            cy,
            kappa,
            length,
            half_width,
        })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    /// Centerline point; straight-line extrapolation past the ends.
    pub fn position(&self, s: f64) -> [f64; 2] {
        [self.cx.eval(s).0, self.cy.eval(s).0]
    }

    /// Unit tangent direction.
    pub fn tangent(&self, s: f64) -> [f64; 2] {
        let dx = self.cx.eval(s).1;
        let dy = self.cy.eval(s).1;
        let n = dx.hypot(dy);
        [dx / n, dy / n]
    }

    pub fn heading(&self, s: f64) -> f64 {
        let [tx, ty] = self.tangent(s);
        ty.atan2(tx)
    }

    /// Curvature, held at the end values outside the spline.
    pub fn kappa(&self, s: f64) -> f64 {
        self.kappa.eval(s.clamp(0.0, self.length)).0
    }

    /// `d kappa / ds`; zero outside the spline.
    pub fn kappa_slope(&self, s: f64) -> f64 {
        if s < 0.0 || s > self.length {
            0.0
        } else {
            self.kappa.eval(s).1
        }
    }

    /// Curvature from the position spline's own derivatives.
    pub fn geometric_curvature(&self, s: f64) -> f64 {
        let (_, dx, ddx) = self.cx.eval(s);
        let (_, dy, ddy) = self.cy.eval(s);
        curvature(dx, dy, ddx, ddy)
    }

    /// Cartesian point at arclength `s` and signed lateral offset `n` (left positive).
    pub fn frenet_to_cartesian(&self, s: f64, n: f64) -> [f64; 2] {
        let [x, y] = self.position(s);
        let [tx, ty] = self.tangent(s);
        [x - n * ty, y + n * tx]
    }

    /// Closest-point projection of `p`: `(s, n)`. Grid search then Newton on
    /// the squared distance.
    pub fn project(&self, p: [f64; 2]) -> (f64, f64) {
        let dist2 = |s: f64| {
            let [x, y] = self.position(s);
            (p[0] - x).powi(2) + (p[1] - y).powi(2)
        };
        let lo = -2.0;
        let hi = self.length + 2.0;
        let samples = ((hi - lo) / 0.05).ceil() as usize;
        let mut best = lo;
        for k in 0..=samples {
            let s = lo + (hi - lo) * k as f64 / samples as f64;
            if dist2(s) < dist2(best) {
                best = s;
            }
        }
        let mut s = best;
        for _ in 0..50 {
            let (x, dx, ddx) = self.cx.eval(s);
            let (y, dy, ddy) = self.cy.eval(s);
            let g = -(p[0] - x) * dx - (p[1] - y) * dy;
            let h = dx * dx + dy * dy - (p[0] - x) * ddx - (p[1] - y) * ddy;
            if h <= 0.0 {
                break;
            }
            let step = g / h;
            s -= step;
            if step.abs() < 1e-13 {
                break;
            }
        }
        let [x, y] = self.position(s);
        let [tx, ty] = self.tangent(s);
        (s, (p[1] - y) * tx - (p[0] - x) * ty)
    }
}

/// Centerline description for scenario files: a polyline of knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineSpec {
    pub points: Vec<[f64; 2]>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arc(radius: f64, sweep: f64) -> CenterlineSpline {
        let pts: Vec<[f64; 2]> = (0..=60)
            .map(|k| {
                let a = sweep * k as f64 / 60.0;
                [radius * a.sin(), radius * (1.0 - a.cos())]
            })
            .collect();
        CenterlineSpline::from_points(&pts, 0.35).unwrap()
    }

    #[test]
    fn interpolates_and_reproduces_cubics() {
        let xs: Vec<f64> = (0..8).map(|k| k as f64 * 0.7).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x - 1.0).collect();
        let s = CubicSpline::natural(xs.clone(), ys.clone()).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert!((s.eval(*x).0 - y).abs() < 1e-12);
        }
        assert!((s.eval(2.33).0 - 3.66).abs() < 1e-12);
        assert!((s.eval(-1.0).0 + 3.0).abs() < 1e-12);
    }

    #[test]
    fn c1_at_knots() {
        let xs: Vec<f64> = (0..10).map(|k| k as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (0.8 * x).sin()).collect();
        let s = CubicSpline::natural(xs, ys).unwrap();
        for k in 1..9 {
            let x = k as f64;
            let l = s.eval_inside(x - 1e-9);
            let r = s.eval_inside(x + 1e-9);
            assert!((l.0 - r.0).abs() < 1e-8 && (l.1 - r.1).abs() < 1e-7);
        }
    }

    #[test]
    fn straight_line_has_zero_curvature() {
        let c = CenterlineSpline::from_points(&[[-7.0, 0.0], [6.0, 0.0]], 0.35).unwrap();
        assert!((c.length() - 13.0).abs() < 1e-9);
        assert_eq!(c.kappa(3.0), 0.0);
        let [x, y] = c.position(4.0);
        assert!((x + 3.0).abs() < 1e-12 && y.abs() < 1e-12);
    }

    #[test]
    fn circle_arc_geometry() {
        let c = arc(4.0, 1.2);
        assert!((c.length() - 4.8).abs() < 1e-4);
        for s in [0.5, 2.0, 4.0] {
            assert!((c.kappa(s) - 0.25).abs() < 0.0125, "{}", c.kappa(s));
            let g = c.geometric_curvature(s);
            assert!((c.kappa(s) - g).abs() <= 0.05 * g.abs());
        }
    }

    #[test]
    fn projection_round_trip() {
        let c = arc(4.0, 1.2);
        for (s, n) in [(0.3, 0.1), (2.5, -0.2), (4.0, 0.3)] {
            let p = c.frenet_to_cartesian(s, n);
            let (s2, n2) = c.project(p);
            assert!((s - s2).abs() < 1e-8 && (n - n2).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn queries_are_finite_everywhere(s in -1e3f64..1e3) {
            let c = arc(3.0, 1.0);
            let [x, y] = c.position(s);
            prop_assert!(x.is_finite() && y.is_finite());
            prop_assert!(c.kappa(s).is_finite() && c.kappa_slope(s).is_finite());
        }
    }
}
