//! On-disk formats: frame stacks (TOML manifest plus one CSV per frame) and
//! grayscale heatmaps.
//!
//! A stack directory holds `manifest.toml` and `frame_0000.csv`,
//! `frame_0001.csv`, ... Each frame has `n2` lines of `n1` comma-separated
//! values; line `i` is y-index `i`, column `j` is x-index `j`. Values are
//! written with 17 significant digits so a save/load round trip is exact.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec};

pub const MANIFEST: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub n1: usize,
    pub n2: usize,
    pub steps: usize,
    pub delta: f64,
    pub units: String,
    pub created: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridStack {
    pub manifest: Manifest,
    pub frames: Vec<Field>,
}

impl GridStack {
    pub fn new(frames: Vec<Field>, delta: f64, units: &str, config_hash: &str) -> Result<Self> {
        let g = frames
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty stack".into()))?
            .grid();
        if frames.iter().any(|f| f.grid() != g) {
            return Err(Error::GridMismatch("frames on different grids".into()));
        }
        Ok(Self {
            manifest: Manifest {
                n1: g.n1(),
                n2: g.n2(),
                steps: frames.len(),
                delta,
                units: units.to_string(),
                created: created_stamp(),
                config_hash: config_hash.to_string(),
            },
            frames,
        })
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.manifest.n1, self.manifest.n2)
    }
}

/// `SOURCE_DATE_EPOCH` when set (reproducible builds), else the current
/// Unix time.
fn created_stamp() -> String {
    let secs = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.parse::<u64>().ok())
        .unwrap_or_else(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        });
    format!("unix:{secs}")
}

pub fn frame_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("frame_{t:04}.csv"))
}

pub fn format_frame(f: &Field) -> String {
    let g = f.grid();
    let mut s = String::with_capacity(g.len() * 24);
    for i in 0..g.n2() {
        for j in 0..g.n1() {
            if j > 0 {
                s.push(',');
            }
            s.push_str(&format!("{:.16e}", f.get(i, j)));
        }
        s.push('\n');
    }
    s
}

pub fn parse_frame(text: &str, g: GridSpec, path: &Path) -> Result<Field> {
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rows = Vec::with_capacity(g.n2());
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| perr(ln + 1, format!("bad number {v:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        if row.len() != g.n1() {
            return Err(perr(ln + 1, format!("expected {} values, found {}", g.n1(), row.len())));
        }
        rows.push(row);
    }
    if rows.len() != g.n2() {
        return Err(perr(rows.len(), format!("expected {} rows, found {}", g.n2(), rows.len())));
    }
    Field::from_rows(&rows)
}

pub fn save_stack(dir: &Path, stack: &GridStack) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = toml::to_string(&stack.manifest)
        .map_err(|e| Error::Config(format!("cannot encode manifest: {e}")))?;
    let mpath = dir.join(MANIFEST);
    fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
    for (t, f) in stack.frames.iter().enumerate() {
        let p = frame_path(dir, t);
        fs::write(&p, format_frame(f)).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

pub fn load_stack(dir: &Path) -> Result<GridStack> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Parse {
        path: mpath.clone(),
        line: e
            .span()
            .map(|s| text[..s.start].lines().count().max(1))
            .unwrap_or(0),
        message: e.message().to_string(),
    })?;
    let g = GridSpec::new(manifest.n1, manifest.n2)?;
    if manifest.steps == 0 {
        return Err(Error::Parse {
            path: mpath,
            line: 0,
            message: "steps must be >= 1".into(),
        });
    }
    let mut frames = Vec::with_capacity(manifest.steps);
    for t in 0..manifest.steps {
        let p = frame_path(dir, t);
        if !p.exists() {
            return Err(Error::Parse {
                path: p,
                line: 0,
                message: format!("frame {t} of {} is missing", manifest.steps),
            });
        }
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        frames.push(parse_frame(&text, g, &p)?);
    }
    if frame_path(dir, manifest.steps).exists() {
        return Err(Error::Parse {
            path: mpath,
            line: 0,
            message: format!("more frame files than steps = {}", manifest.steps),
        });
    }
    Ok(GridStack { manifest, frames })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorScale {
    Auto,
    Fixed { min: f64, max: f64 },
}

/// Writes a binary PGM (P5) with the highest y row at the top, plus
/// `<path>.scale` holding the `min max` of the linear gray scale.
pub fn render_heatmap(f: &Field, path: &Path, scale: ColorScale) -> Result<(f64, f64)> {
    let (lo, hi) = match scale {
        ColorScale::Fixed { min, max } => (min, max),
        ColorScale::Auto => f
            .values()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v))),
    };
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::InvalidArgument(format!("bad color scale [{lo}, {hi}]")));
    }
    let g = f.grid();
    let mut buf = format!("P5\n{} {}\n255\n", g.n1(), g.n2()).into_bytes();
    let span = hi - lo;
    for i in (0..g.n2()).rev() {
        for j in 0..g.n1() {
            let u = if span > 0.0 { (f.get(i, j) - lo) / span } else { 0.5 };
            buf.push((u.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))?;
    let side = sidecar(path);
    fs::write(&side, format!("{lo:.16e} {hi:.16e}\n")).map_err(|e| Error::io(&side, e))?;
    Ok((lo, hi))
}

pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".scale");
    PathBuf::from(s)
}
