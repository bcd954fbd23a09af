//! Basic closed semialgebraic sets `{x : p_i(x) <= 0}` and raster sampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{Monomial, Polynomial};

/// Intersection of polynomial sublevel sets, in the order given.
///
/// `ball_radius` adds `|x|^2 - R^2 <= 0` as a compactifying constraint. It
/// takes part in relaxations and membership tests but is never a boundary
/// piece of its own.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemialgebraicSet {
    pub n: usize,
    pub ineqs: Vec<Polynomial>,
    #[serde(default)]
    pub ball_radius: Option<f64>,
}

impl SemialgebraicSet {
    pub fn new(n: usize, ineqs: Vec<Polynomial>) -> Result<Self> {
        for p in &ineqs {
            if p.nvars() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: p.nvars(),
                });
            }
        }
        Ok(SemialgebraicSet {
            n,
            ineqs,
            ball_radius: None,
        })
    }

    pub fn with_ball(mut self, radius: f64) -> Self {
        self.ball_radius = Some(radius);
        self
    }

    /// Check the dimension invariant after deserialization.
    pub fn validate(&self) -> Result<()> {
        for p in &self.ineqs {
            if p.nvars() != self.n {
                return Err(Error::DimensionMismatch {
                    expected: self.n,
                    got: p.nvars(),
                });
            }
        }
        if let Some(r) = self.ball_radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::InvalidArgument(format!("ball radius must be positive, got {r}")));
            }
        }
        Ok(())
    }

    /// `|x|^2 - R^2`, if a ball bound is set.
    pub fn ball_polynomial(&self) -> Option<Polynomial> {
        self.ball_radius.map(|r| {
            let mut p = Polynomial::constant(self.n, -r * r);
            for j in 0..self.n {
                let mut e = vec![0; self.n];
                e[j] = 2;
                p.add_term(Monomial::new(e), 1.0);
            }
            p
        })
    }

    /// Defining inequalities plus the ball constraint, if any.
    pub fn all_constraints(&self) -> Vec<Polynomial> {
        let mut v = self.ineqs.clone();
        v.extend(self.ball_polynomial());
        v
    }

    pub fn with_extra(&self, extra: impl IntoIterator<Item = Polynomial>) -> SemialgebraicSet {
        let mut s = self.clone();
        s.ineqs.extend(extra);
        s
    }

    /// True iff every constraint satisfies `p(x) <= tol`.
    pub fn contains(&self, x: &[f64], tol: f64) -> Result<bool> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        Ok(self.contains_unchecked(x, tol))
    }

    pub(crate) fn contains_unchecked(&self, x: &[f64], tol: f64) -> bool {
        if let Some(r) = self.ball_radius {
            if x.iter().map(|v| v * v).sum::<f64>() - r * r > tol {
                return false;
            }
        }
        self.ineqs.iter().all(|p| p.eval_unchecked(x) <= tol)
    }

    /// Largest constraint value at `x` (ball included); `<= 0` means inside.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.all_constraints()
            .iter()
            .map(|p| p.eval_unchecked(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Membership mask over a regular grid. For 2D grids `mask[i + res[0] * j]`
/// is the point `(lo0 + i*h0, lo1 + j*h1)`; 3D grids append the third index.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionRaster {
    pub bbox: Vec<[f64; 2]>,
    pub resolution: Vec<usize>,
    pub mask: Vec<bool>,
}

impl RegionRaster {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn count_inside(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn index_to_point(&self, mut idx: usize) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.resolution.len());
        for (axis, &r) in self.resolution.iter().enumerate() {
            let i = idx % r;
            idx /= r;
            x.push(grid_coord(self.bbox[axis], r, i));
        }
        x
    }

    pub fn points(&self) -> impl Iterator<Item = (Vec<f64>, bool)> + '_ {
        self.mask
            .iter()
            .enumerate()
            .map(|(i, &b)| (self.index_to_point(i), b))
    }

    /// `x1,x2[,x3],inside` rows with a header line.
    pub fn to_csv(&self) -> String {
        let dim = self.resolution.len();
        let mut s = (1..=dim).map(|j| format!("x{j}")).collect::<Vec<_>>().join(",");
        s.push_str(",inside\n");
        for (x, b) in self.points() {
            for v in &x {
                s.push_str(&format!("{v},"));
            }
            s.push_str(if b { "1\n" } else { "0\n" });
        }
        s
    }
}

fn grid_coord(range: [f64; 2], res: usize, i: usize) -> f64 {
    range[0] + (range[1] - range[0]) * i as f64 / (res - 1) as f64
}

/// Sample membership (tolerance 0) on a regular grid including the box corners.
pub fn rasterize(set: &SemialgebraicSet, bbox: &[[f64; 2]], resolution: &[usize]) -> Result<RegionRaster> {
    if !(2..=3).contains(&set.n) {
        return Err(Error::UnsupportedDimension(set.n));
    }
    if bbox.len() != set.n || resolution.len() != set.n {
        return Err(Error::DimensionMismatch {
            expected: set.n,
            got: bbox.len().min(resolution.len()),
        });
    }
    if resolution.iter().any(|&r| r < 2) {
        return Err(Error::InvalidArgument("raster resolution must be >= 2 per axis".into()));
    }
    if bbox.iter().any(|b| !(b[0].is_finite() && b[1].is_finite() && b[0] < b[1])) {
        return Err(Error::InvalidArgument("bounding box must be finite with lo < hi".into()));
    }
    let total: usize = resolution.iter().product();
    let mut raster = RegionRaster {
        bbox: bbox.to_vec(),
        resolution: resolution.to_vec(),
        mask: Vec::with_capacity(total),
    };
    for idx in 0..total {
        let x = raster.index_to_point(idx);
        raster.mask.push(set.contains_unchecked(&x, 0.0));
    }
    Ok(raster)
}

/// Flat SVG of one or more 2D rasters over the same grid. Later layers paint
/// over earlier ones; pass the input set first (light) and the inner
/// approximation second (dark).
pub fn layers_to_svg(layers: &[(&RegionRaster, &str)], marks: &[[f64; 2]], pixel: usize) -> Result<String> {
    let first = layers
        .first()
        .ok_or_else(|| Error::InvalidArgument("no raster layers".into()))?
        .0;
    if first.resolution.len() != 2 {
        return Err(Error::UnsupportedDimension(first.resolution.len()));
    }
    let (nx, ny) = (first.resolution[0], first.resolution[1]);
    let (w, h) = (nx * pixel, ny * pixel);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    );
    for (raster, fill) in layers {
        if raster.resolution != first.resolution {
            return Err(Error::InvalidArgument("raster layers must share a grid".into()));
        }
        for j in 0..ny {
            // run-length encode each row to keep the file small
            let mut i = 0;
            while i < nx {
                if raster.mask[i + nx * j] {
                    let start = i;
                    while i < nx && raster.mask[i + nx * j] {
                        i += 1;
                    }
                    let y = (ny - 1 - j) * pixel;
                    s.push_str(&format!(
                        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>\n",
                        start * pixel,
                        y,
                        (i - start) * pixel,
                        pixel,
                        fill
                    ));
                } else {
                    i += 1;
                }
            }
        }
    }
    let [bx, by] = [first.bbox[0], first.bbox[1]];
    for m in marks {
        let px = (m[0] - bx[0]) / (bx[1] - bx[0]) * (w as f64);
        let py = (1.0 - (m[1] - by[0]) / (by[1] - by[0])) * (h as f64);
        let r = 4.0 * pixel as f64;
        s.push_str(&format!(
            "<path d=\"M{} {} L{} {} M{} {} L{} {}\" stroke=\"black\" stroke-width=\"{}\"/>\n",
            px - r,
            py - r,
            px + r,
            py + r,
            px - r,
            py + r,
            px + r,
            py - r,
            pixel.max(1)
        ));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub const LIGHT_GRAY: &str = "#d0d0d0";
pub const DARK_GRAY: &str = "#707070";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn membership_examples() {
        let wd = fixtures::waterdrop();
        assert!(wd.contains(&[0.0, 0.0], 0.0).unwrap());
        let hyp = fixtures::hyperbola();
        assert!(!hyp.contains(&[2.0, 2.0], 0.0).unwrap());
        let slab = hyp.with_extra([
            Polynomial::affine(&[1.0, 1.0], -2.0),
            Polynomial::affine(&[-1.0, -1.0], -2.0),
        ]);
        assert!(slab.contains(&[1.0, 1.0], 0.0).unwrap());
        assert!(hyp.contains(&[1.0], 0.0).is_err());
    }

    #[test]
    fn ball_participates_in_membership() {
        let hyp = fixtures::hyperbola().with_ball(10.0);
        assert!(hyp.contains(&[-9.0, 1.0], 0.0).unwrap());
        assert!(!hyp.contains(&[-11.0, 0.0], 0.0).unwrap());
    }

    #[test]
    fn raster_examples() {
        let egg = fixtures::egg();
        let r = rasterize(&egg, &[[-1.0, 1.0], [-1.0, 1.0]], &[100, 100]).unwrap();
        assert!(r.count_inside() > 0);
        assert_eq!(r.len(), 10_000);
        assert!(egg.contains(&[0.0, -0.5], 0.0).unwrap());

        let empty = SemialgebraicSet::new(2, vec![Polynomial::constant(2, 1.0)]).unwrap();
        let r = rasterize(&empty, &[[-1.0, 1.0], [-1.0, 1.0]], &[10, 10]).unwrap();
        assert_eq!(r.count_inside(), 0);

        let four = SemialgebraicSet::new(4, vec![]).unwrap();
        assert!(matches!(
            rasterize(&four, &[[0.0, 1.0]; 4], &[2; 4]),
            Err(Error::UnsupportedDimension(4))
        ));
    }

    #[test]
    fn raster_grid_includes_corners() {
        let s = SemialgebraicSet::new(2, vec![]).unwrap();
        let r = rasterize(&s, &[[-1.0, 1.0], [0.0, 2.0]], &[3, 5]).unwrap();
        assert_eq!(r.index_to_point(0), vec![-1.0, 0.0]);
        assert_eq!(r.index_to_point(14), vec![1.0, 2.0]);
        let csv = r.to_csv();
        assert!(csv.starts_with("x1,x2,inside\n"));
        assert_eq!(csv.lines().count(), 16);
    }

    #[test]
    fn svg_renders_layers() {
        let egg = fixtures::egg();
        let r = rasterize(&egg, &[[-1.0, 1.0], [-1.0, 1.0]], &[20, 20]).unwrap();
        let svg = layers_to_svg(&[(&r, LIGHT_GRAY), (&r, DARK_GRAY)], &[[0.0, -0.5]], 2).unwrap();
        assert!(svg.contains(LIGHT_GRAY) && svg.contains(DARK_GRAY));
        assert!(svg.starts_with("<svg"));
    }

    #[test]
    fn json_schema() {
        let s = r#"{"n": 2, "ineqs": [{"n": 2, "terms": [{"exp": [1,1], "coef": 1.0}, {"exp": [0,0], "coef": -1.0}]}], "ball_radius": null}"#;
        let set: SemialgebraicSet = serde_json::from_str(s).unwrap();
        set.validate().unwrap();
        assert_eq!(set, fixtures::hyperbola());
    }
}
