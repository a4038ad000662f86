//! Analytic flow generators.
//!
//! These stand in for solver output and double as exact oracles for the
//! differential operators: Taylor-Green fields decay at a known rate set by
//! the viscosity, rigid rotation has constant vorticity, and superposed
//! Lamb-Oseen vortices give compact cores with a known radius of peak speed.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowgrid::{Dims, FlowGrid, LabelVolume};

/// Radius of peak azimuthal speed of a Lamb-Oseen vortex, in core radii.
pub const LAMB_OSEEN_PEAK: f64 = 1.12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    #[serde(rename = "taylor_green_2d")]
    TaylorGreen2d,
    #[serde(rename = "taylor_green_3d")]
    TaylorGreen3d,
    LambOseenStreet,
    SolidBody,
    Uniform,
    Shear,
}

/// One Lamb-Oseen vortex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vortex {
    /// Position at `t = 0`.
    pub center: [f64; 2],
    /// Circulation; positive is counter-clockwise.
    pub circulation: f64,
    pub core_radius: f64,
    /// Constant translation velocity of the centre.
    #[serde(default)]
    pub advection: [f64; 2],
}

/// Two staggered rows of alternating-sign vortices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreetLayout {
    /// Vortices per row.
    pub per_row: usize,
    /// x of the first upper-row vortex.
    pub start: f64,
    /// Streamwise spacing within a row.
    pub spacing: f64,
    /// Rows sit at `y = +/- half_width`.
    pub half_width: f64,
    pub circulation: f64,
    pub core_radius: f64,
    #[serde(default)]
    pub advection: [f64; 2],
    /// Uniform random displacement of each centre, drawn from the spec seed.
    #[serde(default)]
    pub jitter: f64,
}

impl Default for StreetLayout {
    fn default() -> Self {
        Self {
            per_row: 3,
            start: 1.5,
            spacing: 2.0,
            half_width: 1.0,
            circulation: 2.0,
            core_radius: 0.4,
            advection: [0.0, 0.0],
            jitter: 0.0,
        }
    }
}

impl StreetLayout {
    pub fn vortices(&self, seed: u64) -> Vec<Vortex> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(2 * self.per_row);
        for n in 0..self.per_row {
            for (row, sign) in [(1.0, 1.0), (-1.0, -1.0)] {
                let x = self.start + n as f64 * self.spacing + if row < 0.0 { 0.5 * self.spacing } else { 0.0 };
                let y = row * self.half_width;
                let (jx, jy) = if self.jitter > 0.0 {
                    (
                        rng.gen_range(-self.jitter..=self.jitter),
                        rng.gen_range(-self.jitter..=self.jitter),
                    )
                } else {
                    (0.0, 0.0)
                };
                out.push(Vortex {
                    center: [x + jx, y + jy],
                    circulation: sign * self.circulation,
                    core_radius: self.core_radius,
                    advection: self.advection,
                });
            }
        }
        out
    }
}

fn default_timesteps() -> usize {
    1
}

fn default_dt() -> f64 {
    0.1
}

fn default_nu() -> f64 {
    0.1
}

fn default_rate() -> f64 {
    1.0
}

fn default_velocity() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}

/// Generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSpec {
    pub kind: FlowKind,
    /// Points along x, y, z.
    pub dims: [usize; 3],
    /// `[[x0, x1], [y0, y1], [z0, z1]]`; each kind has its own default.
    #[serde(default)]
    pub extent: Option<[[f64; 2]; 3]>,
    /// Number of stored time levels, `T + 1`.
    #[serde(default = "default_timesteps")]
    pub timesteps: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_nu")]
    pub nu: f64,
    /// Angular rate for solid-body rotation.
    #[serde(default = "default_rate")]
    pub omega0: f64,
    /// `du/dy` for simple shear.
    #[serde(default = "default_rate")]
    pub shear_rate: f64,
    /// Constant velocity for uniform flow.
    #[serde(default = "default_velocity")]
    pub velocity: [f64; 3],
    /// Explicit vortex list; when empty a street layout is used.
    #[serde(default)]
    pub vortices: Vec<Vortex>,
    #[serde(default)]
    pub street: Option<StreetLayout>,
    #[serde(default)]
    pub seed: u64,
}

impl GenSpec {
    pub fn new(kind: FlowKind, dims: [usize; 3]) -> Self {
        Self {
            kind,
            dims,
            extent: None,
            timesteps: default_timesteps(),
            dt: default_dt(),
            nu: default_nu(),
            omega0: default_rate(),
            shear_rate: default_rate(),
            velocity: default_velocity(),
            vortices: Vec::new(),
            street: None,
            seed: 0,
        }
    }

    pub fn default_extent(kind: FlowKind) -> [[f64; 2]; 3] {
        let tau = 2.0 * PI;
        match kind {
            FlowKind::TaylorGreen2d => [[0.0, tau], [0.0, tau], [0.0, 1.0]],
            FlowKind::TaylorGreen3d => [[0.0, tau], [0.0, tau], [0.0, tau]],
            FlowKind::LambOseenStreet => [[0.0, 8.0], [-4.0, 4.0], [0.0, 1.0]],
            FlowKind::SolidBody | FlowKind::Uniform | FlowKind::Shear => [[-1.0, 1.0]; 3],
        }
    }

    pub fn resolved_extent(&self) -> [[f64; 2]; 3] {
        self.extent.unwrap_or_else(|| Self::default_extent(self.kind))
    }

    /// Vortices for the Lamb-Oseen street, explicit or from the layout.
    pub fn resolved_vortices(&self) -> Vec<Vortex> {
        if self.vortices.is_empty() {
            self.street.unwrap_or_default().vortices(self.seed)
        } else {
            self.vortices.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&n| n < 2) {
            return Err(Error::Validation(format!("every dimension must be >= 2, got {:?}", self.dims)));
        }
        if self.timesteps == 0 {
            return Err(Error::Validation("timesteps must be >= 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Validation(format!("dt must be positive, got {}", self.dt)));
        }
        for (a, [lo, hi]) in self.resolved_extent().iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::Validation(format!("extent on axis {a} must satisfy lo < hi")));
            }
        }
        match self.kind {
            FlowKind::TaylorGreen2d | FlowKind::TaylorGreen3d => {
                if !(self.nu > 0.0) {
                    return Err(Error::Validation(format!("nu must be positive, got {}", self.nu)));
                }
                let tau = 2.0 * PI;
                let ext = self.resolved_extent();
                let axes = if self.kind == FlowKind::TaylorGreen2d { 2 } else { 3 };
                if ext[..axes].iter().any(|[lo, hi]| *lo < 0.0 || *hi > tau + 1e-12) {
                    return Err(Error::Validation("Taylor-Green extent must lie within [0, 2 pi]".into()));
                }
            }
            FlowKind::LambOseenStreet => {
                let vs = self.resolved_vortices();
                if vs.is_empty() {
                    return Err(Error::Validation("Lamb-Oseen street needs at least one vortex".into()));
                }
                for (n, v) in vs.iter().enumerate() {
                    if !(v.core_radius > 0.0) {
                        return Err(Error::Validation(format!("vortex {n} core radius must be positive")));
                    }
                    if vs[..n].iter().any(|o| o.center == v.center && o.advection == v.advection) {
                        return Err(Error::Validation(format!("vortex {n} shares its centre with an earlier vortex")));
                    }
                }
            }
            FlowKind::SolidBody | FlowKind::Uniform | FlowKind::Shear => {}
        }
        Ok(())
    }

    fn axes(&self) -> [Vec<f64>; 3] {
        let ext = self.resolved_extent();
        [0, 1, 2].map(|a| linspace(ext[a][0], ext[a][1], self.dims[a]))
    }
}

/// `n` evenly spaced points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Output of [`generate`].
#[derive(Debug, Clone)]
pub struct Generated {
    pub grid: FlowGrid,
    /// Core membership at `t = 0` for Lamb-Oseen streets.
    pub cores: Option<LabelVolume>,
}

/// Dispatches on `spec.kind`.
pub fn generate(spec: &GenSpec) -> Result<Generated> {
    let grid = match spec.kind {
        FlowKind::TaylorGreen2d => gen_taylor_green_2d(spec)?,
        FlowKind::TaylorGreen3d => gen_taylor_green_3d(spec)?,
        FlowKind::SolidBody => gen_solid_body(spec)?,
        FlowKind::Uniform => gen_uniform(spec)?,
        FlowKind::Shear => gen_shear(spec)?,
        FlowKind::LambOseenStreet => {
            let (grid, cores) = gen_lamb_oseen_street(spec)?;
            return Ok(Generated {
                grid,
                cores: Some(cores),
            });
        }
    };
    Ok(Generated { grid, cores: None })
}

fn check_kind(spec: &GenSpec, kind: FlowKind) -> Result<()> {
    if spec.kind != kind {
        return Err(Error::Validation(format!("spec kind {:?} passed to the {kind:?} generator", spec.kind)));
    }
    spec.validate()
}

fn build<F>(spec: &GenSpec, f: F) -> Result<FlowGrid>
where
    F: Fn(f64, f64, f64, f64) -> [f64; 3],
{
    let [x, y, z] = spec.axes();
    FlowGrid::from_fn(x, y, z, spec.timesteps, spec.dt, f)
}

/// `u = -cos x sin y e^(-2 nu t)`, `v = sin x cos y e^(-2 nu t)`, `w = 0`.
pub fn gen_taylor_green_2d(spec: &GenSpec) -> Result<FlowGrid> {
    check_kind(spec, FlowKind::TaylorGreen2d)?;
    let nu = spec.nu;
    build(spec, |t, x, y, _| {
        let decay = (-2.0 * nu * t).exp();
        [-x.cos() * y.sin() * decay, x.sin() * y.cos() * decay, 0.0]
    })
}

/// Classic Taylor-Green cell `u = sin x cos y cos z`, `v = -cos x sin y cos z`,
/// `w = 0`, scaled by the viscous decay `e^(-3 nu t)` of its Stokes mode.
pub fn gen_taylor_green_3d(spec: &GenSpec) -> Result<FlowGrid> {
    check_kind(spec, FlowKind::TaylorGreen3d)?;
    let nu = spec.nu;
    build(spec, |t, x, y, z| {
        let amp = z.cos() * (-3.0 * nu * t).exp();
        [x.sin() * y.cos() * amp, -x.cos() * y.sin() * amp, 0.0]
    })
}

/// Rigid rotation `u = -omega0 y`, `v = omega0 x`.
pub fn gen_solid_body(spec: &GenSpec) -> Result<FlowGrid> {
    check_kind(spec, FlowKind::SolidBody)?;
    let om = spec.omega0;
    build(spec, |_, x, y, _| [-om * y, om * x, 0.0])
}

pub fn gen_uniform(spec: &GenSpec) -> Result<FlowGrid> {
    check_kind(spec, FlowKind::Uniform)?;
    let vel = spec.velocity;
    build(spec, |_, _, _, _| vel)
}

/// `u = shear_rate * y`.
pub fn gen_shear(spec: &GenSpec) -> Result<FlowGrid> {
    check_kind(spec, FlowKind::Shear)?;
    let rate = spec.shear_rate;
    build(spec, |_, _, y, _| [rate * y, 0.0, 0.0])
}

/// Azimuthal speed `G / (2 pi r) (1 - exp(-r^2 / rc^2))` of one vortex.
pub fn lamb_oseen_speed(circulation: f64, core_radius: f64, r: f64) -> f64 {
    if r == 0.0 {
        return 0.0;
    }
    let xi = r * r / (core_radius * core_radius);
    circulation / (2.0 * PI * r) * -(-xi).exp_m1()
}

impl Vortex {
    pub fn center_at(&self, t: f64) -> [f64; 2] {
        [self.center[0] + self.advection[0] * t, self.center[1] + self.advection[1] * t]
    }

    /// In-plane velocity induced at `(x, y)` at time `t`.
    pub fn velocity(&self, t: f64, x: f64, y: f64) -> [f64; 2] {
        let [cx, cy] = self.center_at(t);
        let (dx, dy) = (x - cx, y - cy);
        let r2 = dx * dx + dy * dy;
        if r2 == 0.0 {
            return [0.0, 0.0];
        }
        let rc2 = self.core_radius * self.core_radius;
        // u_theta / r
        let f = self.circulation / (2.0 * PI * r2) * -(-r2 / rc2).exp_m1();
        [-f * dy, f * dx]
    }
}

/// Superposed Lamb-Oseen vortices extruded along z, plus core membership at
/// `t = 0` (points within `1.12 rc` of some centre).
pub fn gen_lamb_oseen_street(spec: &GenSpec) -> Result<(FlowGrid, LabelVolume)> {
    check_kind(spec, FlowKind::LambOseenStreet)?;
    let vortices = spec.resolved_vortices();
    let grid = build(spec, |t, x, y, _| {
        let mut vel = [0.0, 0.0, 0.0];
        for v in &vortices {
            let [a, b] = v.velocity(t, x, y);
            vel[0] += a;
            vel[1] += b;
        }
        vel
    })?;
    let cores = lamb_oseen_cores(&grid, &vortices, 0.0)?;
    Ok((grid, cores))
}

/// Core membership of every grid point at time `t`.
pub fn lamb_oseen_cores(grid: &FlowGrid, vortices: &[Vortex], t: f64) -> Result<LabelVolume> {
    let d: Dims = grid.dims();
    let mut labels = vec![false; d.len()];
    for i in 0..d.ni {
        for j in 0..d.nj {
            let (x, y) = (grid.x()[i], grid.y()[j]);
            let inside = vortices.iter().any(|v| {
                let [cx, cy] = v.center_at(t);
                let r = LAMB_OSEEN_PEAK * v.core_radius;
                (x - cx).powi(2) + (y - cy).powi(2) <= r * r
            });
            if inside {
                for k in 0..d.nk {
                    labels[d.index(i, j, k)] = true;
                }
            }
        }
    }
    LabelVolume::new(d, labels, vec![true; d.len()], format!("lamb-oseen cores (r <= {LAMB_OSEEN_PEAK} rc) at t={t}"))
}
