//! Radar unit conversion and Hamming windowing.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec};

/// Marshall-Palmer: `R = (10^(Z/10) / 200)^(5/8)`, dBZ to mm/hr.
pub fn reflectivity_to_rain(z: &Field) -> Field {
    z.map(dbz_to_rain)
}

#[inline]
pub fn dbz_to_rain(z: f64) -> f64 {
    (10f64.powf(z / 10.0) / 200.0).powf(0.625)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HammingForm {
    /// `0.54 - 0.46 cos(2 pi i / (n - 1))`: both ends at 0.08.
    #[default]
    Symmetric,
    /// `0.54 - 0.46 cos(2 pi i / n)`: only the first sample at 0.08.
    Periodic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowField {
    pub grid: GridSpec,
    pub weights: Vec<f64>,
}

pub fn hamming1d(n: usize, form: HammingForm) -> Vec<f64> {
    let d = match form {
        HammingForm::Symmetric => (n - 1) as f64,
        HammingForm::Periodic => n as f64,
    };
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / d).cos())
        .collect()
}

/// Separable 2-D Hamming window, `w[i, j] = h_y(i) h_x(j)`.
pub fn hamming2d(g: GridSpec, form: HammingForm) -> WindowField {
    let hx = hamming1d(g.n1(), form);
    let hy = hamming1d(g.n2(), form);
    let mut weights = vec![0.0; g.len()];
    for (j, wx) in hx.iter().enumerate() {
        for (i, wy) in hy.iter().enumerate() {
            weights[g.index(i, j)] = wx * wy;
        }
    }
    WindowField { grid: g, weights }
}

pub fn apply_window(f: &Field, w: &WindowField) -> Result<Field> {
    if f.grid() != w.grid {
        return Err(Error::GridMismatch(format!(
            "window is {}x{}, field is {}x{}",
            w.grid.n1(),
            w.grid.n2(),
            f.grid().n1(),
            f.grid().n2()
        )));
    }
    let values = f.values().iter().zip(&w.weights).map(|(a, b)| a * b).collect();
    Field::new(f.grid(), values)
}
