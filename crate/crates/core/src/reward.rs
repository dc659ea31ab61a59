//! Potential-field reward: attractive Gaussian bump at the destination,
//! repulsive bump at the zone center, quadratic penalty on heading change.
//!
//! The bumps are peak-normalized (value 1 at the mean), so the largest
//! per-step attraction equals `w1`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point2, Rect};
use crate::io::{fmt_sig, write_pgm, write_text};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct RewardParams<T> {
    pub w1: T,
    pub w2: T,
    pub w3: T,
    /// Shared 2x2 covariance of both fields.
    pub sigma: [[T; 2]; 2],
    /// Extra reward credited on the step that reaches the destination.
    #[serde(default)]
    pub terminal_bonus: T,
}

impl<T: Scalar> Default for RewardParams<T> {
    fn default() -> Self {
        let l = T::lit;
        Self {
            w1: l(3000.0),
            w2: l(500.0),
            w3: l(1.5),
            sigma: [[l(40000.0), l(100.0)], [l(100.0), l(40000.0)]],
            terminal_bonus: T::zero(),
        }
    }
}

impl<T: Scalar> RewardParams<T> {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w1", self.w1), ("w2", self.w2), ("w3", self.w3)] {
            if !(w >= T::zero() && w.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be finite and non-negative, got {w}")));
            }
        }
        if !self.terminal_bonus.is_finite() {
            return Err(Error::Parameter("terminal_bonus must be finite".into()));
        }
        Precision::from_covariance(&self.sigma).map(|_| ())
    }
}

/// Inverse of a symmetric positive-definite 2x2 covariance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Precision<T> {
    xx: T,
    xy: T,
    yy: T,
}

impl<T: Scalar> Precision<T> {
    pub fn from_covariance(sigma: &[[T; 2]; 2]) -> Result<Self> {
        let [[a, b], [c, d]] = *sigma;
        if ![a, b, c, d].iter().all(|v| v.is_finite()) {
            return Err(Error::Parameter("covariance has non-finite entries".into()));
        }
        if b != c {
            return Err(Error::Parameter(format!("covariance is not symmetric ({b} vs {c})")));
        }
        let det = a * d - b * c;
        // both eigenvalues positive iff trace > 0 and det > 0
        if !(det > T::zero() && a + d > T::zero()) {
            return Err(Error::Parameter("covariance is not positive-definite".into()));
        }
        Ok(Self {
            xx: d / det,
            xy: -b / det,
            yy: a / det,
        })
    }

    /// `v' * Sigma^-1 * v`
    pub fn quad_form(&self, v: Point2<T>) -> T {
        self.xx * v.x * v.x + (self.xy + self.xy) * v.x * v.y + self.yy * v.y * v.y
    }
}

/// Peak-normalized bivariate Gaussian `exp(-q/2)`, `q` the Mahalanobis form.
pub fn gaussian_field<T: Scalar>(p: Point2<T>, mu: Point2<T>, sigma: &[[T; 2]; 2]) -> Result<T> {
    let prec = Precision::from_covariance(sigma)?;
    Ok(field_with(&prec, p, mu))
}

fn field_with<T: Scalar>(prec: &Precision<T>, p: Point2<T>, mu: Point2<T>) -> T {
    (-T::lit(0.5) * prec.quad_form(p.sub(mu))).exp()
}

/// `w1 * N(p, destination) - w2 * N(p, zone_center) - w3 * action^2`
pub fn reward<T: Scalar>(
    p: Point2<T>,
    action: T,
    params: &RewardParams<T>,
    destination: Point2<T>,
    zone_center: Point2<T>,
) -> Result<T> {
    Ok(RewardField::new(params, destination, zone_center)?.eval(p, action))
}

/// Reward with the covariance inverted once; used in hot loops.
#[derive(Clone, Debug)]
pub struct RewardField<T> {
    params: RewardParams<T>,
    precision: Precision<T>,
    destination: Point2<T>,
    zone_center: Point2<T>,
}

impl<T: Scalar> RewardField<T> {
    pub fn new(params: &RewardParams<T>, destination: Point2<T>, zone_center: Point2<T>) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            precision: Precision::from_covariance(&params.sigma)?,
            params: params.clone(),
            destination,
            zone_center,
        })
    }

    pub fn params(&self) -> &RewardParams<T> {
        &self.params
    }

    pub fn eval(&self, p: Point2<T>, action: T) -> T {
        let attract = field_with(&self.precision, p, self.destination);
        let repulse = field_with(&self.precision, p, self.zone_center);
        self.params.w1 * attract - self.params.w2 * repulse - self.params.w3 * action * action
    }
}

/// Reward samples (action = 0) on a regular grid.
///
/// Samples sit at `origin + (ix, iy) * spacing`, stored row-major with `ix`
/// fastest; each raster pixel is centered on its sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap<T> {
    pub origin: Point2<T>,
    pub spacing: T,
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapMeta {
    pub origin: [f64; 2],
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
    pub min: f64,
    pub max: f64,
}

pub fn heatmap<T: Scalar>(
    params: &RewardParams<T>,
    destination: Point2<T>,
    zone_center: Point2<T>,
    bounds: Rect<T>,
    resolution: T,
) -> Result<Heatmap<T>> {
    if !(resolution > T::zero() && resolution.is_finite()) {
        return Err(Error::Parameter(format!("resolution must be positive, got {resolution}")));
    }
    if bounds.is_empty() {
        return Err(Error::Parameter("heat-map bounds are empty".into()));
    }
    let field = RewardField::new(params, destination, zone_center)?;
    // small slack so that an extent that is a multiple of the spacing keeps its far edge
    let count = |extent: T| ((extent / resolution) + T::lit(1e-9)).floor().to_usize().unwrap_or(0) + 1;
    let nx = count(bounds.width());
    let ny = count(bounds.height());
    let mut values = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            let p = Point2::new(
                bounds.min.x + T::lit(ix as f64) * resolution,
                bounds.min.y + T::lit(iy as f64) * resolution,
            );
            values.push(field.eval(p, T::zero()));
        }
    }
    Ok(Heatmap {
        origin: bounds.min,
        spacing: resolution,
        nx,
        ny,
        values,
    })
}

impl<T: Scalar> Heatmap<T> {
    pub fn point(&self, ix: usize, iy: usize) -> Point2<T> {
        Point2::new(
            self.origin.x + T::lit(ix as f64) * self.spacing,
            self.origin.y + T::lit(iy as f64) * self.spacing,
        )
    }

    fn extreme(&self, better: impl Fn(T, T) -> bool) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if better(v, self.values[best]) {
                best = i;
            }
        }
        (best % self.nx, best / self.nx)
    }

    pub fn argmax(&self) -> (usize, usize) {
        self.extreme(|a, b| a > b)
    }

    pub fn argmin(&self) -> (usize, usize) {
        self.extreme(|a, b| a < b)
    }

    /// Grid index of the sample nearest to `p` (clamped to the grid).
    pub fn nearest(&self, p: Point2<T>) -> (usize, usize) {
        let idx = |v: T, o: T, n: usize| {
            let k = ((v - o) / self.spacing).round().to_f64().unwrap_or(0.0);
            (k.max(0.0) as usize).min(n - 1)
        };
        (idx(p.x, self.origin.x, self.nx), idx(p.y, self.origin.y, self.ny))
    }

    pub fn min_max(&self) -> (T, T) {
        self.values
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn meta(&self) -> HeatmapMeta {
        let (min, max) = self.min_max();
        HeatmapMeta {
            origin: [self.origin.x.as_f64(), self.origin.y.as_f64()],
            spacing: self.spacing.as_f64(),
            nx: self.nx,
            ny: self.ny,
            min: min.as_f64(),
            max: max.as_f64(),
        }
    }

    pub const CSV_HEADER: &'static str = "ix,iy,x,y,reward";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                let p = self.point(ix, iy);
                out.push_str(&format!(
                    "{ix},{iy},{},{},{}\n",
                    fmt_sig(p.x.as_f64(), 9),
                    fmt_sig(p.y.as_f64(), 9),
                    fmt_sig(self.values[iy * self.nx + ix].as_f64(), 17)
                ));
            }
        }
        out
    }

    /// 16-bit samples affinely scaled so that min maps to 0 and max to 65535.
    pub fn raster(&self) -> Vec<u16> {
        let (min, max) = self.min_max();
        let span = (max - min).as_f64();
        self.values
            .iter()
            .map(|&v| {
                if span > 0.0 {
                    (((v - min).as_f64() / span) * 65535.0).round() as u16
                } else {
                    0
                }
            })
            .collect()
    }

    /// Writes `<name>.pgm`, `<name>.csv` and `<name>.meta.json` into `dir`.
    pub fn write(&self, dir: &Path, name: &str) -> Result<()> {
        write_pgm(&dir.join(format!("{name}.pgm")), self.nx, self.ny, 65535, &self.raster())?;
        write_text(&dir.join(format!("{name}.csv")), &self.to_csv())?;
        let meta = serde_json::to_string_pretty(&self.meta()).expect("meta serializes");
        write_text(&dir.join(format!("{name}.meta.json")), &meta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SIGMA: [[f64; 2]; 2] = [[40000.0, 100.0], [100.0, 40000.0]];
    fn dest() -> Point2<f64> {
        Point2::new(-200.0, -400.0)
    }
    fn origin() -> Point2<f64> {
        Point2::new(0.0, 0.0)
    }

    // Values below were computed with an independent numpy script
    // (explicit 2x2 inverse, quadratic form, exp).
    const FIELD_DEST_FROM_CENTER: f64 = 0.082_495_164_964_696_04;

    #[test]
    fn field_peaks_at_mean() {
        assert_eq!(gaussian_field(dest(), dest(), &SIGMA).unwrap(), 1.0);
    }

    #[test]
    fn field_at_destination_from_center() {
        let v = gaussian_field(dest(), origin(), &SIGMA).unwrap();
        assert!((v - FIELD_DEST_FROM_CENTER).abs() < 1e-14, "{v}");
    }

    #[test]
    fn field_isotropic_reduction() {
        let sigma = [[40000.0, 0.0], [0.0, 40000.0]];
        let v = gaussian_field(Point2::new(200.0, 0.0), origin(), &sigma).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn singular_covariance_is_rejected() {
        let sigma = [[1.0, 1.0], [1.0, 1.0]];
        assert!(matches!(gaussian_field(dest(), origin(), &sigma), Err(Error::Parameter(_))));
        let asym = [[1.0, 0.5], [0.0, 1.0]];
        assert!(gaussian_field(dest(), origin(), &asym).is_err());
    }

    #[test]
    fn reward_at_destination() {
        let r = reward(dest(), 0.0, &RewardParams::default(), dest(), origin()).unwrap();
        assert!((r - 2958.752_417_517_652).abs() < 1e-9, "{r}");
    }

    #[test]
    fn reward_at_zone_center() {
        let r = reward(origin(), 0.0, &RewardParams::default(), dest(), origin()).unwrap();
        assert!((r - (-252.514_505_105_911_75)).abs() < 1e-9, "{r}");
    }

    #[test]
    fn control_penalty_only() {
        let params = RewardParams {
            w1: 0.0,
            w2: 0.0,
            ..RewardParams::default()
        };
        let r = reward(Point2::new(5.0, 5.0), 0.1, &params, dest(), origin()).unwrap();
        assert!((r + 0.015).abs() < 1e-15);
    }

    #[test]
    fn negative_weight_is_rejected() {
        let params = RewardParams {
            w2: -1.0,
            ..RewardParams::default()
        };
        assert!(params.validate().is_err());
    }

    fn scenario_heatmap() -> Heatmap<f64> {
        let bounds = Rect::new(Point2::new(-1000.0, -1000.0), Point2::new(1000.0, 1000.0));
        let params = RewardParams {
            w3: 0.0,
            ..RewardParams::default()
        };
        heatmap(&params, dest(), origin(), bounds, 20.0).unwrap()
    }

    #[test]
    fn heatmap_extremes() {
        let h = scenario_heatmap();
        assert_eq!((h.nx, h.ny), (101, 101));
        assert_eq!(h.argmax(), h.nearest(dest()));
        assert!(h.values.iter().all(|v| v.is_finite()));
        // Exhaustive numpy scan of the same grid puts the minimum at (40, 80),
        // value -369.94728396054876: the attraction gradient shifts the
        // minimum off the zone center, still well inside the zone.
        let (ix, iy) = h.argmin();
        assert_eq!(h.point(ix, iy), Point2::new(40.0, 80.0));
        assert!((h.values[iy * h.nx + ix] + 369.947_283_960_548_76).abs() < 1e-9);
    }

    #[test]
    fn heatmap_rejects_bad_grid() {
        let params = RewardParams::default();
        let bounds = Rect::new(Point2::new(0.0, 0.0), Point2::new(0.0, 10.0));
        assert!(heatmap(&params, dest(), origin(), bounds, 1.0).is_err());
        let bounds = Rect::new(Point2::new(0.0, 0.0), Point2::new(10.0, 10.0));
        assert!(heatmap(&params, dest(), origin(), bounds, 0.0).is_err());
    }

    #[test]
    fn heatmap_files() {
        let dir = tempfile::tempdir().unwrap();
        let h = scenario_heatmap();
        h.write(dir.path(), "fig").unwrap();
        let pgm = std::fs::read(dir.path().join("fig.pgm")).unwrap();
        assert!(pgm.starts_with(b"P5\n101 101\n65535\n"));
        assert_eq!(pgm.len(), "P5\n101 101\n65535\n".len() + 101 * 101 * 2);
        let meta: HeatmapMeta =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("fig.meta.json")).unwrap()).unwrap();
        assert_eq!(meta.nx, 101);
        assert!((meta.max - 2958.752_417_517_652).abs() < 1e-9);
        let csv = std::fs::read_to_string(dir.path().join("fig.csv")).unwrap();
        assert_eq!(csv.lines().count(), 101 * 101 + 1);
    }

    #[test]
    fn argmax_at_goal_on_sampled_grid() {
        let params = RewardParams::default();
        let field = RewardField::new(&params, dest(), origin()).unwrap();
        let top = field.eval(dest(), 0.0);
        for iy in 0..101 {
            for ix in 0..101 {
                let p = Point2::new(-1000.0 + 20.0 * ix as f64, -1000.0 + 20.0 * iy as f64);
                if p.dist(dest()) > 0.0 {
                    assert!(field.eval(p, 0.0) < top);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn field_is_symmetric(px in -1e3..1e3f64, py in -1e3..1e3f64, mx in -1e3..1e3f64, my in -1e3..1e3f64) {
            let a = gaussian_field(Point2::new(px, py), Point2::new(mx, my), &SIGMA).unwrap();
            let b = gaussian_field(Point2::new(mx, my), Point2::new(px, py), &SIGMA).unwrap();
            prop_assert!((a - b).abs() <= 1e-15);
        }

        #[test]
        fn field_decays_along_rays(theta in 0.0..std::f64::consts::TAU, t1 in 1.0..400.0f64, dt in 1.0..400.0f64) {
            let u = Point2::new(theta.cos(), theta.sin());
            let mu = dest();
            let near = gaussian_field(mu.add(u.scale(t1)), mu, &SIGMA).unwrap();
            let far = gaussian_field(mu.add(u.scale(t1 + dt)), mu, &SIGMA).unwrap();
            prop_assert!(far < near);
        }

        #[test]
        fn penalty_is_even(px in -1e3..1e3f64, py in -1e3..1e3f64, a in -1.0..1.0f64) {
            let params = RewardParams::default();
            let p = Point2::new(px, py);
            let r1 = reward(p, a, &params, dest(), origin()).unwrap();
            let r2 = reward(p, -a, &params, dest(), origin()).unwrap();
            prop_assert_eq!(r1, r2);
        }
    }
}
