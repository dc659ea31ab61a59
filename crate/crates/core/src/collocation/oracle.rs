use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point2;

/// Shortest planar path between two points that avoids the open disc:
/// either the chord, or tangent segment + boundary arc + tangent segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OraclePath {
    pub start: Point2<f64>,
    pub dest: Point2<f64>,
    pub center: Point2<f64>,
    pub radius: f64,
    pub length: f64,
    pub t_min: f64,
    pub detour: Option<Detour>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detour {
    pub entry: Point2<f64>,
    pub exit: Point2<f64>,
    /// Polar angle of the entry tangent point about the center.
    pub entry_angle: f64,
    /// Signed sweep; positive is counter-clockwise.
    pub sweep: f64,
    pub first_leg: f64,
    pub second_leg: f64,
}

pub fn geometric_oracle(start: Point2<f64>, dest: Point2<f64>, center: Point2<f64>, radius: f64, speed: f64) -> Result<OraclePath> {
    if !(speed > 0.0) || !(radius >= 0.0) {
        return Err(Error::Parameter(format!("need speed > 0 and radius >= 0, got {speed}, {radius}")));
    }
    for (name, p) in [("start", start), ("destination", dest)] {
        if p.dist(center) <= radius {
            return Err(Error::Config(format!("{name} lies inside the zone")));
        }
    }
    let chord = dest.sub(start);
    let len2 = chord.dot(chord);
    let along = if len2 > 0.0 { (center.sub(start).dot(chord) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let closest = start.add(chord.scale(along));
    let mut path = OraclePath {
        start,
        dest,
        center,
        radius,
        length: len2.sqrt(),
        t_min: len2.sqrt() / speed,
        detour: None,
    };
    if closest.dist(center) >= radius {
        return Ok(path);
    }
    let polar = |p: Point2<f64>| {
        let d = p.sub(center);
        (d.y.atan2(d.x), d.norm())
    };
    let (theta_s, ds) = polar(start);
    let (theta_e, de) = polar(dest);
    let (beta_s, beta_e) = ((radius / ds).acos(), (radius / de).acos());
    let (leg_s, leg_e) = ((ds * ds - radius * radius).sqrt(), (de * de - radius * radius).sqrt());
    let on_circle = |a: f64| center.add(Point2::new(a.cos(), a.sin()).scale(radius));
    let best = [1.0f64, -1.0]
        .into_iter()
        .map(|dir| {
            let a_in = theta_s + dir * beta_s;
            let a_out = theta_e - dir * beta_e;
            let sweep = (dir * (a_out - a_in)).rem_euclid(TAU);
            (leg_s + leg_e + radius * sweep, a_in, a_out, dir * sweep)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("two orientations");
    let (length, a_in, a_out, sweep) = best;
    path.length = length;
    path.t_min = length / speed;
    path.detour = Some(Detour {
        entry: on_circle(a_in),
        exit: on_circle(a_out),
        entry_angle: a_in,
        sweep,
        first_leg: leg_s,
        second_leg: leg_e,
    });
    Ok(path)
}

impl OraclePath {
    /// Point and unit tangent at arc length `s` along the path.
    pub fn sample(&self, s: f64) -> (Point2<f64>, Point2<f64>) {
        let s = s.clamp(0.0, self.length);
        let unit = |a: Point2<f64>, b: Point2<f64>| {
            let d = b.sub(a);
            let n = d.norm();
            if n > 0.0 {
                d.scale(1.0 / n)
            } else {
                Point2::new(1.0, 0.0)
            }
        };
        let Some(d) = self.detour else {
            let u = unit(self.start, self.dest);
            return (self.start.add(u.scale(s)), u);
        };
        let arc = self.radius * d.sweep.abs();
        if s <= d.first_leg {
            let u = unit(self.start, d.entry);
            (self.start.add(u.scale(s)), u)
        } else if s <= d.first_leg + arc {
            let dir = d.sweep.signum();
            let a = d.entry_angle + dir * (s - d.first_leg) / self.radius;
            let p = self.center.add(Point2::new(a.cos(), a.sin()).scale(self.radius));
            (p, Point2::new(-a.sin(), a.cos()).scale(dir))
        } else {
            let u = unit(d.exit, self.dest);
            (d.exit.add(u.scale(s - d.first_leg - arc)), u)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario() -> OraclePath {
        geometric_oracle(
            Point2::new(400.0, 400.0),
            Point2::new(-200.0, -400.0),
            Point2::new(0.0, 0.0),
            240.0,
            200.0,
        )
        .unwrap()
    }

    #[test]
    fn detour_length_matches_closed_form() {
        // independent evaluation: tangent legs plus arc over (delta - alpha1 - alpha2)
        let (ds, de) = (565.685424949238f64, 447.21359549995793f64);
        let delta = (400.0f64 * -200.0 + 400.0 * -400.0) / (ds * de);
        let arc = 240.0 * (delta.acos() - (240.0 / ds).acos() - (240.0 / de).acos());
        let expect = (ds * ds - 240.0 * 240.0).sqrt() + (de * de - 240.0 * 240.0).sqrt() + arc;
        let p = scenario();
        assert!((p.length - expect).abs() < 1e-9);
        assert!((p.length - 1053.5).abs() < 0.05);
        assert!((p.t_min - 5.2676).abs() < 5e-4);
        assert!((p.t_min - expect / 200.0).abs() < 1e-12);
    }

    #[test]
    fn chord_when_clear() {
        let p = geometric_oracle(Point2::new(400.0, 400.0), Point2::new(-400.0, 400.0), Point2::new(0.0, 0.0), 240.0, 200.0).unwrap();
        assert!(p.detour.is_none());
        assert_eq!(p.t_min, 4.0);
    }

    #[test]
    fn small_radius_limit_is_continuous() {
        let s = Point2::new(400.0, 400.0);
        let e = Point2::new(-200.0, -400.0);
        let chord = s.dist(e) / 200.0;
        let p = geometric_oracle(s, e, Point2::new(0.0, 0.0), 1e-6, 200.0).unwrap();
        assert!((p.t_min - chord).abs() < 1e-8);
        let z = geometric_oracle(s, e, Point2::new(0.0, 0.0), 0.0, 200.0).unwrap();
        assert!((z.t_min - chord).abs() < 1e-12);
    }

    #[test]
    fn inside_zone_rejected() {
        assert!(geometric_oracle(Point2::new(10.0, 0.0), Point2::new(-500.0, 0.0), Point2::new(0.0, 0.0), 240.0, 200.0).is_err());
    }

    #[test]
    fn samples_are_continuous_and_clear() {
        let p = scenario();
        let n = 2000;
        let mut prev = p.sample(0.0).0;
        assert_eq!(prev, p.start);
        for k in 1..=n {
            let s = p.length * k as f64 / n as f64;
            let (q, u) = p.sample(s);
            assert!(q.dist(prev) <= p.length / n as f64 + 1e-9);
            assert!(q.norm() >= 240.0 - 1e-9);
            assert!((u.norm() - 1.0).abs() < 1e-12);
            prev = q;
        }
        assert!(prev.dist(p.dest) < 1e-9);
    }
}
