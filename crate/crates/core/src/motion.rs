//! Block-matching motion estimation (TREC with vector smoothing) and the
//! shear-based diffusivity field.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::galerkin::{partial_x, partial_y, Boundary, DiffusivityField, VelocityField};
use crate::grid::{Field, GridSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionConfig {
    /// Block edge in pixels.
    pub block: usize,
    /// Fractional overlap of neighbouring blocks.
    pub overlap: f64,
    /// Maximum displacement searched, pixels.
    pub search_radius: usize,
    /// Blocks whose variance is below this are filled from neighbours.
    pub min_block_energy: f64,
    /// Gaussian smoothing of the vector field, pixels.
    pub smooth_sigma: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            block: 16,
            overlap: 0.5,
            search_radius: 8,
            min_block_energy: 1e-6,
            smooth_sigma: 2.0,
        }
    }
}

impl MotionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block < 4 {
            return Err(Error::Config("motion block must be >= 4 pixels".into()));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::Config("motion overlap must be in [0, 1)".into()));
        }
        if self.search_radius < 1 {
            return Err(Error::Config("motion search_radius must be >= 1".into()));
        }
        if !(self.smooth_sigma >= 0.0 && self.min_block_energy >= 0.0) {
            return Err(Error::Config("motion smoothing/energy must be >= 0".into()));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        ((self.block as f64 * (1.0 - self.overlap)).round() as usize).max(1)
    }
}

/// Block origins kept `margin` pixels inside so every candidate fits.
fn origins(n: usize, block: usize, stride: usize, margin: usize) -> Vec<usize> {
    let hi = n - block - margin;
    let mut v: Vec<usize> = (margin..=hi).step_by(stride).collect();
    if *v.last().expect("n >= block + 2 margin") != hi {
        v.push(hi);
    }
    v
}

struct Block {
    data: Vec<f64>,
    mean: f64,
    ss: f64,
}

fn extract(f: &Field, i0: usize, j0: usize, b: usize) -> Block {
    let mut data = Vec::with_capacity(b * b);
    for j in j0..j0 + b {
        for i in i0..i0 + b {
            data.push(f.get(i, j));
        }
    }
    let mean = data.iter().sum::<f64>() / data.len() as f64;
    let ss = data.iter().map(|v| (v - mean).powi(2)).sum();
    Block { data, mean, ss }
}

fn ncc(a: &Block, b: &Block) -> Option<f64> {
    if a.ss <= 0.0 || b.ss <= 0.0 {
        return None;
    }
    let cross: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - a.mean) * (y - b.mean))
        .sum();
    Some(cross / (a.ss * b.ss).sqrt())
}

fn parabolic(cm: Option<f64>, c0: f64, cp: Option<f64>) -> f64 {
    match (cm, cp) {
        (Some(m), Some(p)) => {
            let den = m - 2.0 * c0 + p;
            if den < 0.0 {
                ((m - p) / (2.0 * den)).clamp(-0.5, 0.5)
            } else {
                0.0
            }
        }
        _ => 0.0,
    }
}

/// Displacements in pixels `(di, dj)` on the block lattice, `None` where
/// the block was too weak to track.
type Lattice = Vec<Vec<Option<(f64, f64)>>>;

fn match_blocks(a: &Field, b: &Field, cfg: &MotionConfig, oi: &[usize], oj: &[usize]) -> Lattice {
    let g = a.grid();
    let (n1, n2) = (g.n1() as i64, g.n2() as i64);
    let bs = cfg.block;
    let r = cfg.search_radius as i64;
    let energy_floor = cfg.min_block_energy * (bs * bs) as f64;
    oi.iter()
        .map(|&i0| {
            oj.iter()
                .map(|&j0| {
                    let src = extract(a, i0, j0, bs);
                    if src.ss < energy_floor || src.ss == 0.0 {
                        return None;
                    }
                    let side = (2 * r + 1) as usize;
                    let mut score = vec![None; side * side];
                    let mut best: Option<(f64, i64, i64)> = None;
                    for di in -r..=r {
                        for dj in -r..=r {
                            let (ti, tj) = (i0 as i64 + di, j0 as i64 + dj);
                            if ti < 0 || tj < 0 || ti + bs as i64 > n2 || tj + bs as i64 > n1 {
                                continue;
                            }
                            let c = ncc(&src, &extract(b, ti as usize, tj as usize, bs));
                            score[((di + r) * (2 * r + 1) + dj + r) as usize] = c;
                            if let Some(c) = c {
                                if best.is_none_or(|(bc, _, _)| c > bc) {
                                    best = Some((c, di, dj));
                                }
                            }
                        }
                    }
                    let (c0, di, dj) = best?;
                    if c0 >= 1.0 - 1e-12 {
                        return Some((di as f64, dj as f64));
                    }
                    let at = |di: i64, dj: i64| {
                        if di.abs() > r || dj.abs() > r {
                            None
                        } else {
                            score[((di + r) * (2 * r + 1) + dj + r) as usize]
                        }
                    };
                    let si = parabolic(at(di - 1, dj), c0, at(di + 1, dj));
                    let sj = parabolic(at(di, dj - 1), c0, at(di, dj + 1));
                    Some((di as f64 + si, dj as f64 + sj))
                })
                .collect()
        })
        .collect()
}

fn fill_missing(lat: &Lattice) -> Option<Vec<Vec<(f64, f64)>>> {
    let (ni, nj) = (lat.len(), lat[0].len());
    let mut cur = lat.clone();
    if cur.iter().flatten().all(|v| v.is_none()) {
        return None;
    }
    while cur.iter().flatten().any(|v| v.is_none()) {
        let prev = cur.clone();
        for a in 0..ni {
            for b in 0..nj {
                if prev[a][b].is_some() {
                    continue;
                }
                let mut s = (0.0, 0.0);
                let mut n = 0.0;
                for da in -1i64..=1 {
                    for db in -1i64..=1 {
                        let (x, y) = (a as i64 + da, b as i64 + db);
                        if x < 0 || y < 0 || x >= ni as i64 || y >= nj as i64 {
                            continue;
                        }
                        if let Some(v) = prev[x as usize][y as usize] {
                            s.0 += v.0;
                            s.1 += v.1;
                            n += 1.0;
                        }
                    }
                }
                if n > 0.0 {
                    cur[a][b] = Some((s.0 / n, s.1 / n));
                }
            }
        }
    }
    Some(
        cur.into_iter()
            .map(|row| row.into_iter().map(|v| v.expect("filled")).collect())
            .collect(),
    )
}

fn gaussian_smooth(lat: &[Vec<(f64, f64)>], sigma: f64) -> Vec<Vec<(f64, f64)>> {
    if sigma <= 0.0 {
        return lat.to_vec();
    }
    let (ni, nj) = (lat.len(), lat[0].len());
    let rad = (3.0 * sigma).ceil() as i64;
    let mut out = vec![vec![(0.0, 0.0); nj]; ni];
    for a in 0..ni {
        for b in 0..nj {
            let mut s = (0.0, 0.0);
            let mut wsum = 0.0;
            for da in -rad..=rad {
                for db in -rad..=rad {
                    let (x, y) = (a as i64 + da, b as i64 + db);
                    if x < 0 || y < 0 || x >= ni as i64 || y >= nj as i64 {
                        continue;
                    }
                    let w = (-((da * da + db * db) as f64) / (2.0 * sigma * sigma)).exp();
                    let v = lat[x as usize][y as usize];
                    s.0 += w * v.0;
                    s.1 += w * v.1;
                    wsum += w;
                }
            }
            out[a][b] = (s.0 / wsum, s.1 / wsum);
        }
    }
    out
}

/// Piecewise-linear lookup of pixel `p` among block centres `centres`.
fn bracket(p: f64, centres: &[f64]) -> (usize, usize, f64) {
    let last = centres.len() - 1;
    if p <= centres[0] {
        return (0, 0, 0.0);
    }
    if p >= centres[last] {
        return (last, last, 0.0);
    }
    let k = centres.partition_point(|&c| c <= p) - 1;
    let t = (p - centres[k]) / (centres[k + 1] - centres[k]);
    (k, k + 1, t)
}

/// Motion from `a` to `b` one step later, in domain lengths per step.
pub fn estimate_velocity(a: &Field, b: &Field, cfg: &MotionConfig) -> Result<VelocityField> {
    cfg.validate()?;
    a.ensure_same_grid(b)?;
    let g = a.grid();
    let span = cfg.block + 2 * cfg.search_radius;
    if span > g.n1() || span > g.n2() {
        return Err(Error::Config(format!(
            "motion block {} plus search margins exceeds the {}x{} grid",
            cfg.block,
            g.n1(),
            g.n2()
        )));
    }
    let stride = cfg.stride();
    let oi = origins(g.n2(), cfg.block, stride, cfg.search_radius);
    let oj = origins(g.n1(), cfg.block, stride, cfg.search_radius);
    let lattice = match_blocks(a, b, cfg, &oi, &oj);
    let Some(filled) = fill_missing(&lattice) else {
        warn!("no trackable blocks; returning a zero velocity field");
        return Ok(VelocityField::zeros(g));
    };
    let smooth = gaussian_smooth(&filled, cfg.smooth_sigma / stride as f64);
    let half = (cfg.block as f64 - 1.0) / 2.0;
    let ci: Vec<f64> = oi.iter().map(|&o| o as f64 + half).collect();
    let cj: Vec<f64> = oj.iter().map(|&o| o as f64 + half).collect();
    let mut vx = vec![0.0; g.len()];
    let mut vy = vec![0.0; g.len()];
    for j in 0..g.n1() {
        let (j0, j1, tj) = bracket(j as f64, &cj);
        for i in 0..g.n2() {
            let (i0, i1, ti) = bracket(i as f64, &ci);
            let lerp = |f: fn(&(f64, f64)) -> f64| {
                let top = (1.0 - tj) * f(&smooth[i0][j0]) + tj * f(&smooth[i0][j1]);
                let bot = (1.0 - tj) * f(&smooth[i1][j0]) + tj * f(&smooth[i1][j1]);
                (1.0 - ti) * top + ti * bot
            };
            let p = g.index(i, j);
            vy[p] = lerp(|v| v.0) / g.n2() as f64;
            vx[p] = lerp(|v| v.1) / g.n1() as f64;
        }
    }
    VelocityField::new(g, vx, vy)
}

/// Scalar diffusivity from the velocity deformation,
/// `D = 0.28 dx dy sqrt((vx_x - vy_y)^2 + (vx_y + vy_x)^2)`, promoted to
/// `D I`.
pub fn diffusivity_from_velocity(
    vel: &VelocityField,
    delta_x: f64,
    delta_y: f64,
) -> Result<DiffusivityField> {
    if !(delta_x > 0.0 && delta_y > 0.0) {
        return Err(Error::InvalidArgument(
            "velocity-field resolution must be > 0".into(),
        ));
    }
    let g = vel.grid;
    let b = Boundary::OneSided;
    let vxx = partial_x(g, &vel.vx, b);
    let vxy = partial_y(g, &vel.vx, b);
    let vyx = partial_x(g, &vel.vy, b);
    let vyy = partial_y(g, &vel.vy, b);
    let d: Vec<f64> = (0..g.len())
        .map(|p| {
            let stretch = vxx[p] - vyy[p];
            let shear = vxy[p] + vyx[p];
            0.28 * delta_x * delta_y * stretch.hypot(shear)
        })
        .collect();
    DiffusivityField::from_scalar(g, d, b)
}

/// Default velocity-field resolution: the block stride in domain units.
pub fn default_resolution(g: GridSpec, cfg: &MotionConfig) -> (f64, f64) {
    let s = cfg.stride() as f64;
    (s / g.n1() as f64, s / g.n2() as f64)
}
