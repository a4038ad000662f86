//! Central-difference operators on [`FlowGrid`]s.
//!
//! Every spatial derivative uses `(f[+1] - f[-1]) / (c[+1] - c[-1])` with the
//! true coordinate difference in the denominator, so non-uniform axes are
//! handled directly. Points without a full neighbourhood are never evaluated;
//! field-level helpers mark them out through the [`ScalarField`] mask.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowgrid::{Dims, FlowGrid, FlowParams, ScalarField};

/// Velocity gradient `g[r][c] = d(v_r)/d(x_c)`, rows `(u, v, w)`, columns `(x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradTensor(pub [[f64; 3]; 3]);

impl GradTensor {
    pub const ZERO: GradTensor = GradTensor([[0.0; 3]; 3]);

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[row][col]
    }

    pub fn transpose(&self) -> GradTensor {
        let g = &self.0;
        let mut out = [[0.0; 3]; 3];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, val) in row.iter_mut().enumerate() {
                *val = g[c][r];
            }
        }
        GradTensor(out)
    }

    /// Velocity divergence.
    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    /// Curl of the velocity, `(dw/dy - dv/dz, du/dz - dw/dx, dv/dx - du/dy)`.
    pub fn curl(&self) -> [f64; 3] {
        let g = &self.0;
        [g[2][1] - g[1][2], g[0][2] - g[2][0], g[1][0] - g[0][1]]
    }
}

/// Terms of the two-dimensional dimensionless vorticity transport balance at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportTerms {
    /// `d2w/dx2 + d2w/dy2`
    pub diffusion: f64,
    /// `u dw/dx + v dw/dy`
    pub convection: f64,
    /// Central time difference of vorticity.
    pub dwdt: f64,
    /// `dwdt - (diffusion / re - convection)`
    pub residual: f64,
}

impl TransportTerms {
    pub fn new(diffusion: f64, convection: f64, dwdt: f64, re: f64) -> Self {
        Self {
            diffusion,
            convection,
            dwdt,
            residual: dwdt - (diffusion / re - convection),
        }
    }
}

fn check_time(grid: &FlowGrid, t: usize) -> Result<()> {
    if t >= grid.timesteps() {
        return Err(Error::Index(format!(
            "time index {t} out of range 0..{}",
            grid.timesteps()
        )));
    }
    Ok(())
}

/// Central difference of component `comp` along axis `axis` at a point.
///
/// Singleton axes yield a zero derivative.
#[inline]
fn central(grid: &FlowGrid, comp: usize, axis: usize, t: usize, p: [usize; 3]) -> f64 {
    let d = grid.dims();
    let n = [d.ni, d.nj, d.nk][axis];
    if n == 1 {
        return 0.0;
    }
    let coords = grid.axis(axis);
    let f = grid.component(comp);
    let mut lo = p;
    let mut hi = p;
    lo[axis] -= 1;
    hi[axis] += 1;
    let fp = f[grid.offset(t, hi[0], hi[1], hi[2])];
    let fm = f[grid.offset(t, lo[0], lo[1], lo[2])];
    (fp - fm) / (coords[hi[axis]] - coords[lo[axis]])
}

fn check_stencil(d: Dims, p: [usize; 3]) -> Result<()> {
    if p[0] >= d.ni || p[1] >= d.nj || p[2] >= d.nk {
        return Err(Error::Index(format!(
            "point ({}, {}, {}) outside grid {}x{}x{}",
            p[0], p[1], p[2], d.ni, d.nj, d.nk
        )));
    }
    if !d.is_interior(p[0], p[1], p[2]) {
        return Err(Error::Stencil(format!(
            "point ({}, {}, {}) has no full central-difference neighbourhood",
            p[0], p[1], p[2]
        )));
    }
    Ok(())
}

/// Velocity gradient tensor at an interior point.
pub fn velocity_gradient(grid: &FlowGrid, t: usize, p: [usize; 3]) -> Result<GradTensor> {
    check_time(grid, t)?;
    check_stencil(grid.dims(), p)?;
    Ok(gradient_unchecked(grid, t, p))
}

#[inline]
fn gradient_unchecked(grid: &FlowGrid, t: usize, p: [usize; 3]) -> GradTensor {
    let mut g = [[0.0; 3]; 3];
    for (comp, row) in g.iter_mut().enumerate() {
        for (axis, val) in row.iter_mut().enumerate() {
            *val = central(grid, comp, axis, t, p);
        }
    }
    GradTensor(g)
}

/// Vorticity vector at an interior point.
pub fn vorticity_3d(grid: &FlowGrid, t: usize, p: [usize; 3]) -> Result<[f64; 3]> {
    Ok(velocity_gradient(grid, t, p)?.curl())
}

/// `dv/dx - du/dy` on a single z-plane grid.
pub fn vorticity_2d(slice: &FlowGrid, t: usize, i: usize, j: usize) -> Result<f64> {
    if slice.dims().nk != 1 {
        return Err(Error::Validation(format!(
            "vorticity_2d needs a K = 1 slice, got K = {}",
            slice.dims().nk
        )));
    }
    check_time(slice, t)?;
    check_stencil(slice.dims(), [i, j, 0])?;
    Ok(omega_z(slice, t, i, j))
}

#[inline]
fn omega_z(slice: &FlowGrid, t: usize, i: usize, j: usize) -> f64 {
    central(slice, 1, 0, t, [i, j, 0]) - central(slice, 0, 1, t, [i, j, 0])
}

/// Central time derivative of a vorticity series sampled every `dt`.
///
/// The result has `series.len() - 2` entries, for time levels `1..T`.
pub fn dvorticity_dt(series: &[f64], dt: f64) -> Result<Vec<f64>> {
    if series.len() < 3 {
        return Err(Error::Validation(format!(
            "time derivative needs at least 3 samples, got {}",
            series.len()
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::Validation(format!("dt must be positive, got {dt}")));
    }
    Ok(series.windows(3).map(|w| (w[2] - w[0]) / (2.0 * dt)).collect())
}

/// Scales a grid into dimensionless form: `x/L`, `u/U`, `dt U/L`.
pub fn nondimensionalize(grid: &FlowGrid, params: &FlowParams) -> Result<FlowGrid> {
    let (l, u) = (params.length(), params.speed());
    grid.rescaled(1.0 / l, 1.0 / u, u / l)
}

fn second_derivative(fm: f64, f0: f64, fp: f64, cm: f64, c0: f64, cp: f64) -> f64 {
    let hm = c0 - cm;
    let hp = cp - c0;
    2.0 * ((fp - f0) / hp - (f0 - fm) / hm) / (hp + hm)
}

/// Vorticity transport balance at `(i, j)` of a dimensionless `K = 1` slice.
///
/// The point must sit at least two cells from the in-plane boundary and
/// `1 <= t <= T - 1`.
pub fn transport_residual(slice: &FlowGrid, re: f64, t: usize, i: usize, j: usize) -> Result<TransportTerms> {
    let d = slice.dims();
    if d.nk != 1 {
        return Err(Error::Validation(format!(
            "transport residual needs a K = 1 slice, got K = {}",
            d.nk
        )));
    }
    if !(re > 0.0) {
        return Err(Error::Validation(format!("Reynolds number must be positive, got {re}")));
    }
    if t == 0 || t + 1 >= slice.timesteps() {
        return Err(Error::Stencil(format!(
            "time index {t} needs neighbours in 0..{}",
            slice.timesteps()
        )));
    }
    if i < 2 || j < 2 || i + 2 >= d.ni || j + 2 >= d.nj {
        return Err(Error::Stencil(format!(
            "point ({i}, {j}) must be two cells from the boundary of a {}x{} slice",
            d.ni, d.nj
        )));
    }
    Ok(transport_unchecked(slice, re, t, i, j))
}

fn transport_unchecked(slice: &FlowGrid, re: f64, t: usize, i: usize, j: usize) -> TransportTerms {
    let (x, y) = (slice.x(), slice.y());
    let w = |i: usize, j: usize| omega_z(slice, t, i, j);
    let w0 = w(i, j);
    let (wxm, wxp) = (w(i - 1, j), w(i + 1, j));
    let (wym, wyp) = (w(i, j - 1), w(i, j + 1));

    let diffusion = second_derivative(wxm, w0, wxp, x[i - 1], x[i], x[i + 1])
        + second_derivative(wym, w0, wyp, y[j - 1], y[j], y[j + 1]);
    let [u, v, _] = slice.velocity(t, i, j, 0);
    let convection = u * (wxp - wxm) / (x[i + 1] - x[i - 1]) + v * (wyp - wym) / (y[j + 1] - y[j - 1]);
    let dwdt = (omega_z(slice, t + 1, i, j) - omega_z(slice, t - 1, i, j)) / (2.0 * slice.dt());
    TransportTerms::new(diffusion, convection, dwdt, re)
}

/// Per-point velocity gradients for one time level.
#[derive(Debug, Clone)]
pub struct GradientField {
    dims: Dims,
    tensors: Vec<Option<GradTensor>>,
}

impl GradientField {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> Option<&GradTensor> {
        self.tensors[self.dims.index(i, j, k)].as_ref()
    }

    pub fn tensors(&self) -> &[Option<GradTensor>] {
        &self.tensors
    }

    pub fn mask(&self) -> Vec<bool> {
        self.tensors.iter().map(Option::is_some).collect()
    }

    /// Maps every valid tensor to a scalar.
    pub fn map<F>(&self, f: F) -> ScalarField
    where
        F: Fn(&GradTensor) -> f64 + Sync,
    {
        let values: Vec<f64> = self
            .tensors
            .par_iter()
            .map(|g| g.as_ref().map_or(0.0, &f))
            .collect();
        ScalarField::new(self.dims, values, self.mask()).expect("gradient-derived field is finite")
    }
}

/// Velocity gradient at every interior point of time level `t`.
pub fn gradient_field(grid: &FlowGrid, t: usize) -> Result<GradientField> {
    check_time(grid, t)?;
    let d = grid.dims();
    let tensors = (0..d.len())
        .into_par_iter()
        .map(|idx| {
            let (i, j, k) = d.unravel(idx);
            d.is_interior(i, j, k).then(|| gradient_unchecked(grid, t, [i, j, k]))
        })
        .collect();
    Ok(GradientField { dims: d, tensors })
}

/// The three vorticity components over time level `t`.
pub fn vorticity_field(grid: &FlowGrid, t: usize) -> Result<[ScalarField; 3]> {
    let g = gradient_field(grid, t)?;
    Ok([0, 1, 2].map(|c| g.map(|t| t.curl()[c])))
}

/// Transport residual over every z-plane of a dimensionless grid, each plane
/// treated as a `w = 0` slice.
pub fn transport_residual_field(grid: &FlowGrid, re: f64, t: usize) -> Result<ScalarField> {
    let d = grid.dims();
    let mut values = vec![0.0; d.len()];
    let mut mask = vec![false; d.len()];
    for k in 0..d.nk {
        let slice = crate::flowgrid::slice_plane(grid, k)?;
        for i in 2..d.ni.saturating_sub(2) {
            for j in 2..d.nj.saturating_sub(2) {
                let terms = transport_residual(&slice, re, t, i, j)?;
                let idx = d.index(i, j, k);
                values[idx] = terms.residual;
                mask[idx] = true;
            }
        }
    }
    ScalarField::new(d, values, mask)
}
