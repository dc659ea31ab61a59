//! Feasibility maps: sweep a grid of start points through a frozen policy.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::environment::EnvConfig;
use crate::error::{Error, Result};
use crate::geom::Point2;
use crate::io::{fmt_sig, parse_csv, parse_field, write_pgm, write_text};
use crate::trainer::{env_hash, Checkpoint};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Point2<f64>,
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            origin: Point2::new(-1000.0, -1000.0),
            spacing: 20.0,
            nx: 101,
            ny: 101,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.spacing > 0.0 && self.spacing.is_finite()) || !self.origin.is_finite() {
            return Err(Error::Config(format!("grid spacing must be positive, got {}", self.spacing)));
        }
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::Config("grid must have at least one cell per axis".into()));
        }
        Ok(())
    }

    pub fn point(&self, ix: usize, iy: usize) -> Point2<f64> {
        Point2::new(
            self.origin.x + ix as f64 * self.spacing,
            self.origin.y + iy as f64 * self.spacing,
        )
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapMeta {
    pub checkpoint_id: String,
    pub env_hash: String,
    pub step_cap: usize,
}

/// Row-major by `iy`, then `ix`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeasibilityMap {
    pub grid: GridSpec,
    pub feasible: Vec<bool>,
    /// Steps to reach the goal; 0 for infeasible cells.
    pub steps: Vec<usize>,
    /// Cells whose center lies in the zone; excluded from statistics.
    pub masked: Vec<bool>,
    pub meta: MapMeta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapStats {
    pub feasible_count: usize,
    pub infeasible_count: usize,
    pub masked_count: usize,
    pub feasible_fraction: f64,
    pub mean_steps: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapDiff {
    pub gained: usize,
    pub lost: usize,
    pub overlap: f64,
}

/// Evaluates every out-of-zone grid point with the frozen policy.
/// Results are independent of `workers`.
pub fn build_map(checkpoint: &Checkpoint, env: &EnvConfig<f64>, grid: GridSpec, step_cap: usize, workers: usize) -> Result<FeasibilityMap> {
    grid.validate()?;
    env.validate()?;
    if step_cap == 0 {
        return Err(Error::Config("step cap must be at least 1".into()));
    }
    let probe = Checkpoint {
        agent: checkpoint.agent.clone(),
        meta: crate::trainer::CheckpointMeta {
            config: crate::trainer::TrainConfig {
                env: env.clone(),
                ..checkpoint.meta.config.clone()
            },
            ..checkpoint.meta.clone()
        },
    };
    let n = grid.len();
    let eval_cell = |idx: usize| -> Result<(bool, usize, bool)> {
        let p = grid.point(idx % grid.nx, idx / grid.nx);
        if env.in_zone(p) {
            return Ok((false, 0, true));
        }
        let t = probe.evaluate_with_cap(p, step_cap)?;
        Ok(if t.reached() { (true, t.steps(), false) } else { (false, 0, false) })
    };
    let workers = workers.clamp(1, n);
    let chunk = n.div_ceil(workers);
    let results: Vec<Result<Vec<(bool, usize, bool)>>> = if workers == 1 {
        vec![(0..n).map(eval_cell).collect()]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let eval_cell = &eval_cell;
                    s.spawn(move || (w * chunk..((w + 1) * chunk).min(n)).map(eval_cell).collect())
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("map worker panicked")).collect()
        })
    };
    let mut map = FeasibilityMap {
        grid,
        feasible: Vec::with_capacity(n),
        steps: Vec::with_capacity(n),
        masked: Vec::with_capacity(n),
        meta: MapMeta {
            checkpoint_id: checkpoint.id(),
            env_hash: env_hash(env),
            step_cap,
        },
    };
    for part in results {
        for (f, s, m) in part? {
            map.feasible.push(f);
            map.steps.push(s);
            map.masked.push(m);
        }
    }
    Ok(map)
}

pub fn map_stats(map: &FeasibilityMap) -> MapStats {
    let feasible_count = map.feasible.iter().filter(|&&f| f).count();
    let masked_count = map.masked.iter().filter(|&&m| m).count();
    let considered = map.feasible.len() - masked_count;
    let total_steps: usize = map.steps.iter().sum();
    MapStats {
        feasible_count,
        infeasible_count: considered - feasible_count,
        masked_count,
        feasible_fraction: if considered == 0 { 0.0 } else { feasible_count as f64 / considered as f64 },
        mean_steps: (feasible_count > 0).then(|| total_steps as f64 / feasible_count as f64),
    }
}

/// Cells feasible in `b` but not `a` are gained; the reverse are lost.
/// Overlap is the Jaccard index of the two feasible sets (1 when both are empty).
pub fn compare_maps(a: &FeasibilityMap, b: &FeasibilityMap) -> Result<MapDiff> {
    if a.grid != b.grid || a.feasible.len() != b.feasible.len() {
        return Err(Error::Shape("feasibility maps are on different grids".into()));
    }
    let (mut gained, mut lost, mut both, mut either) = (0, 0, 0, 0);
    for (&fa, &fb) in a.feasible.iter().zip(&b.feasible) {
        gained += (fb && !fa) as usize;
        lost += (fa && !fb) as usize;
        both += (fa && fb) as usize;
        either += (fa || fb) as usize;
    }
    Ok(MapDiff {
        gained,
        lost,
        overlap: if either == 0 { 1.0 } else { both as f64 / either as f64 },
    })
}

impl FeasibilityMap {
    pub const CSV_HEADER: &'static str = "ix,iy,x,y,feasible,steps";

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.grid.nx + ix
    }

    /// Cell whose center is nearest `p`, if `p` is within the grid.
    pub fn cell_at(&self, p: Point2<f64>) -> Option<usize> {
        let fx = ((p.x - self.grid.origin.x) / self.grid.spacing).round();
        let fy = ((p.y - self.grid.origin.y) / self.grid.spacing).round();
        let in_range = |f: f64, n: usize| f >= 0.0 && f < n as f64;
        (in_range(fx, self.grid.nx) && in_range(fy, self.grid.ny)).then(|| self.index(fx as usize, fy as usize))
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for iy in 0..self.grid.ny {
            for ix in 0..self.grid.nx {
                let i = self.index(ix, iy);
                let p = self.grid.point(ix, iy);
                out.push_str(&format!(
                    "{ix},{iy},{},{},{},{}\n",
                    fmt_sig(p.x, 12),
                    fmt_sig(p.y, 12),
                    self.feasible[i] as u8,
                    self.steps[i]
                ));
            }
        }
        out
    }

    /// Rebuilds a map from its CSV export; zone masking is recomputed from `env`.
    pub fn from_csv(text: &str, grid: GridSpec, env: &EnvConfig<f64>, meta: MapMeta) -> Result<Self> {
        let rows = parse_csv(text, Self::CSV_HEADER)?;
        if rows.len() != grid.len() {
            return Err(Error::Parse(format!("expected {} cells, found {}", grid.len(), rows.len())));
        }
        let mut map = FeasibilityMap {
            grid,
            feasible: vec![false; grid.len()],
            steps: vec![0; grid.len()],
            masked: vec![false; grid.len()],
            meta,
        };
        for f in rows {
            let ix: usize = parse_field(f[0], "ix")?;
            let iy: usize = parse_field(f[1], "iy")?;
            if ix >= grid.nx || iy >= grid.ny {
                return Err(Error::Parse(format!("cell ({ix}, {iy}) outside the grid")));
            }
            let i = map.index(ix, iy);
            map.feasible[i] = parse_field::<u8>(f[4], "feasible")? == 1;
            map.steps[i] = parse_field(f[5], "steps")?;
            map.masked[i] = env.in_zone(grid.point(ix, iy));
        }
        Ok(map)
    }

    /// Writes `<name>.csv`, `<name>.pgm` (feasible = white) and `<name>.meta.json`.
    pub fn write(&self, dir: &Path, name: &str) -> Result<()> {
        write_text(&dir.join(format!("{name}.csv")), &self.to_csv())?;
        let samples: Vec<u16> = self.feasible.iter().map(|&f| if f { 255 } else { 0 }).collect();
        write_pgm(&dir.join(format!("{name}.pgm")), self.grid.nx, self.grid.ny, 255, &samples)?;
        let meta = serde_json::json!({
            "grid": self.grid,
            "meta": self.meta,
            "stats": map_stats(self),
        });
        write_text(
            &dir.join(format!("{name}.meta.json")),
            &serde_json::to_string_pretty(&meta).expect("map meta serializes"),
        )
    }
}
