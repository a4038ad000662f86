//! Time-resolved structured-grid velocity fields and the FGRD file format.
//!
//! Arrays are stored t-major, then i, then j, with k varying fastest. The
//! on-disk layout uses the same order so files written here can be read by
//! any implementation that follows the byte layout below:
//!
//! ```text
//! "FGRD" | version u32 | I u32 | J u32 | K u32 | T+1 u32 | dt f64
//!        | x[I] f64 | y[J] f64 | z[K] f64 | u[..] f64 | v[..] f64 | w[..] f64
//! ```
//!
//! All integers are little-endian `u32`, all reals little-endian IEEE-754 `f64`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FGRD_MAGIC: &[u8; 4] = b"FGRD";
pub const FGRD_VERSION: u32 = 1;
const HEADER_BYTES: usize = 4 + 4 * 5 + 8;

/// Point counts along the three spatial axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub ni: usize,
    pub nj: usize,
    pub nk: usize,
}

impl Dims {
    pub fn new(ni: usize, nj: usize, nk: usize) -> Self {
        Self { ni, nj, nk }
    }

    pub fn len(&self) -> usize {
        self.ni * self.nj * self.nk
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.nj + j) * self.nk + k
    }

    /// Inverse of [`Dims::index`].
    pub fn unravel(&self, idx: usize) -> (usize, usize, usize) {
        let k = idx % self.nk;
        let j = (idx / self.nk) % self.nj;
        let i = idx / (self.nk * self.nj);
        (i, j, k)
    }

    /// True when the point has a neighbour on both sides along every axis
    /// with more than one point. Singleton axes (2D slices) are ignored.
    pub fn is_interior(&self, i: usize, j: usize, k: usize) -> bool {
        let ok = |idx: usize, n: usize| n == 1 || (idx >= 1 && idx + 1 < n);
        ok(i, self.ni) && ok(j, self.nj) && ok(k, self.nk)
    }

    /// Interior in the strict sense required by the 15-point sample stencil:
    /// every axis needs both neighbours.
    pub fn is_strict_interior(&self, i: usize, j: usize, k: usize) -> bool {
        i >= 1 && i + 1 < self.ni && j >= 1 && j + 1 < self.nj && k >= 1 && k + 1 < self.nk
    }
}

/// Velocity samples `(u, v, w)` on a rectilinear grid over `T + 1` time levels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowGrid {
    dims: Dims,
    timesteps: usize,
    dt: f64,
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
    w: Vec<f64>,
}

impl FlowGrid {
    /// Builds a grid, checking every invariant.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        x: Vec<f64>,
        y: Vec<f64>,
        z: Vec<f64>,
        timesteps: usize,
        dt: f64,
        u: Vec<f64>,
        v: Vec<f64>,
        w: Vec<f64>,
    ) -> Result<Self> {
        let grid = Self {
            dims: Dims::new(x.len(), y.len(), z.len()),
            timesteps,
            dt,
            x,
            y,
            z,
            u,
            v,
            w,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Builds a grid by sampling `f(t, x, y, z) -> (u, v, w)` at every point.
    pub fn from_fn<F>(
        x: Vec<f64>,
        y: Vec<f64>,
        z: Vec<f64>,
        timesteps: usize,
        dt: f64,
        f: F,
    ) -> Result<Self>
    where
        F: Fn(f64, f64, f64, f64) -> [f64; 3],
    {
        let n = timesteps * x.len() * y.len() * z.len();
        let mut u = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        let mut w = Vec::with_capacity(n);
        for t in 0..timesteps {
            let time = t as f64 * dt;
            for &xi in &x {
                for &yj in &y {
                    for &zk in &z {
                        let [a, b, c] = f(time, xi, yj, zk);
                        u.push(a);
                        v.push(b);
                        w.push(c);
                    }
                }
            }
        }
        Self::new(x, y, z, timesteps, dt, u, v, w)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        if d.ni == 0 || d.nj == 0 || d.nk == 0 {
            return Err(Error::Validation(format!(
                "grid dimensions must be positive, got {}x{}x{}",
                d.ni, d.nj, d.nk
            )));
        }
        if self.timesteps == 0 {
            return Err(Error::Validation("grid needs at least one time level".into()));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Validation(format!("dt must be positive and finite, got {}", self.dt)));
        }
        for (name, axis) in [("x", &self.x), ("y", &self.y), ("z", &self.z)] {
            if let Some(bad) = axis.iter().position(|c| !c.is_finite()) {
                return Err(Error::Validation(format!("{name}-axis value at {bad} is not finite")));
            }
            if axis.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Validation(format!("{name}-axis not strictly increasing")));
            }
        }
        let expected = self.timesteps * d.len();
        for (name, arr) in [("u", &self.u), ("v", &self.v), ("w", &self.w)] {
            if arr.len() != expected {
                return Err(Error::Validation(format!(
                    "{name} has {} values, expected {expected} for shape ({}, {}, {}, {})",
                    arr.len(),
                    self.timesteps,
                    d.ni,
                    d.nj,
                    d.nk
                )));
            }
            if let Some(bad) = arr.iter().position(|c| !c.is_finite()) {
                let (t, rest) = (bad / d.len(), bad % d.len());
                let (i, j, k) = d.unravel(rest);
                return Err(Error::Validation(format!(
                    "{name} is not finite at (t={t}, i={i}, j={j}, k={k})"
                )));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Number of stored time levels, `T + 1`.
    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    /// Coordinate array for axis 0, 1 or 2.
    pub fn axis(&self, a: usize) -> &[f64] {
        match a {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("axis {a} out of range"),
        }
    }

    pub fn u_all(&self) -> &[f64] {
        &self.u
    }

    pub fn v_all(&self) -> &[f64] {
        &self.v
    }

    pub fn w_all(&self) -> &[f64] {
        &self.w
    }

    /// Velocity component 0 (u), 1 (v) or 2 (w).
    pub fn component(&self, c: usize) -> &[f64] {
        match c {
            0 => &self.u,
            1 => &self.v,
            2 => &self.w,
            _ => panic!("component {c} out of range"),
        }
    }

    #[inline]
    pub fn offset(&self, t: usize, i: usize, j: usize, k: usize) -> usize {
        t * self.dims.len() + self.dims.index(i, j, k)
    }

    #[inline]
    pub fn velocity(&self, t: usize, i: usize, j: usize, k: usize) -> [f64; 3] {
        let o = self.offset(t, i, j, k);
        [self.u[o], self.v[o], self.w[o]]
    }

    /// Returns a copy with `shift` added to every velocity sample.
    pub fn shifted(&self, shift: [f64; 3]) -> Self {
        let mut g = self.clone();
        g.u.iter_mut().for_each(|a| *a += shift[0]);
        g.v.iter_mut().for_each(|a| *a += shift[1]);
        g.w.iter_mut().for_each(|a| *a += shift[2]);
        g
    }

    /// Returns a copy with every axis scaled by `length`, every velocity by
    /// `speed` and the time step by `time`.
    pub(crate) fn rescaled(&self, length: f64, speed: f64, time: f64) -> Result<Self> {
        let s = |a: &[f64], f: f64| a.iter().map(|c| c * f).collect::<Vec<_>>();
        Self::new(
            s(&self.x, length),
            s(&self.y, length),
            s(&self.z, length),
            self.timesteps,
            self.dt * time,
            s(&self.u, speed),
            s(&self.v, speed),
            s(&self.w, speed),
        )
    }
}

/// Characteristic scales of a flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    length: f64,
    speed: f64,
    density: f64,
    viscosity: f64,
}

impl FlowParams {
    pub fn new(length: f64, speed: f64, density: f64, viscosity: f64) -> Result<Self> {
        for (name, val) in [
            ("length", length),
            ("speed", speed),
            ("density", density),
            ("viscosity", viscosity),
        ] {
            if !(val.is_finite() && val > 0.0) {
                return Err(Error::Validation(format!("{name} must be positive, got {val}")));
            }
        }
        Ok(Self {
            length,
            speed,
            density,
            viscosity,
        })
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    pub fn density(&self) -> f64 {
        self.density
    }

    pub fn viscosity(&self) -> f64 {
        self.viscosity
    }

    /// Reynolds number `U L / nu`.
    pub fn reynolds(&self) -> f64 {
        self.speed * self.length / self.viscosity
    }
}

/// A single-time scalar field with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    dims: Dims,
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl ScalarField {
    /// Masked-out entries are forced to zero.
    pub fn new(dims: Dims, mut values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        if values.len() != dims.len() || mask.len() != dims.len() {
            return Err(Error::Validation(format!(
                "scalar field needs {} values and mask entries, got {} and {}",
                dims.len(),
                values.len(),
                mask.len()
            )));
        }
        for (idx, (val, &m)) in values.iter_mut().zip(&mask).enumerate() {
            if !m {
                *val = 0.0;
            } else if !val.is_finite() {
                let (i, j, k) = dims.unravel(idx);
                return Err(Error::Validation(format!(
                    "scalar field value at ({i}, {j}, {k}) is not finite"
                )));
            }
        }
        Ok(Self { dims, values, mask })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> Option<f64> {
        let idx = self.dims.index(i, j, k);
        self.mask[idx].then_some(self.values[idx])
    }

    /// Values at masked-in points, in storage order.
    pub fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().zip(&self.mask).filter(|(_, &m)| m).map(|(v, _)| *v)
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Binary vortex labels over a grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume {
    dims: Dims,
    labels: Vec<bool>,
    valid: Vec<bool>,
    source: String,
}

impl LabelVolume {
    /// Labels outside `valid` are cleared.
    pub fn new(dims: Dims, mut labels: Vec<bool>, valid: Vec<bool>, source: impl Into<String>) -> Result<Self> {
        if labels.len() != dims.len() || valid.len() != dims.len() {
            return Err(Error::Validation(format!(
                "label volume needs {} entries, got {} labels and {} mask entries",
                dims.len(),
                labels.len(),
                valid.len()
            )));
        }
        for (l, &m) in labels.iter_mut().zip(&valid) {
            *l &= m;
        }
        Ok(Self {
            dims,
            labels,
            valid,
            source: source.into(),
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.labels[self.dims.index(i, j, k)]
    }

    pub fn is_valid(&self, i: usize, j: usize, k: usize) -> bool {
        self.valid[self.dims.index(i, j, k)]
    }

    pub fn count(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }
}

/// Serializes a grid to FGRD bytes.
pub fn encode_fgrd(grid: &FlowGrid) -> Result<Vec<u8>> {
    grid.validate()?;
    let d = grid.dims;
    let n_payload = 3 * grid.timesteps * d.len();
    let mut buf = Vec::with_capacity(HEADER_BYTES + 8 * (d.ni + d.nj + d.nk + n_payload));
    buf.extend_from_slice(FGRD_MAGIC);
    for val in [FGRD_VERSION, to_u32(d.ni)?, to_u32(d.nj)?, to_u32(d.nk)?, to_u32(grid.timesteps)?] {
        buf.extend_from_slice(&val.to_le_bytes());
    }
    buf.extend_from_slice(&grid.dt.to_le_bytes());
    for arr in [&grid.x, &grid.y, &grid.z, &grid.u, &grid.v, &grid.w] {
        for val in arr.iter() {
            buf.extend_from_slice(&val.to_le_bytes());
        }
    }
    Ok(buf)
}

fn to_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Validation(format!("dimension {n} does not fit in u32")))
}

/// Parses FGRD bytes.
pub fn decode_fgrd(bytes: &[u8]) -> Result<FlowGrid> {
    if bytes.len() < 4 || &bytes[..4] != FGRD_MAGIC {
        return Err(Error::Format("bad magic, expected \"FGRD\"".into()));
    }
    if bytes.len() < HEADER_BYTES {
        return Err(Error::Length {
            expected: HEADER_BYTES,
            actual: bytes.len(),
        });
    }
    let word = |n: usize| u32::from_le_bytes(bytes[4 + 4 * n..8 + 4 * n].try_into().unwrap()) as usize;
    let version = word(0) as u32;
    if version != FGRD_VERSION {
        return Err(Error::Format(format!("unsupported FGRD version {version}")));
    }
    let (ni, nj, nk, nt) = (word(1), word(2), word(3), word(4));
    let dt = f64::from_le_bytes(bytes[24..32].try_into().unwrap());

    let n_reals = ni
        .checked_mul(nj)
        .and_then(|n| n.checked_mul(nk))
        .and_then(|n| n.checked_mul(nt))
        .and_then(|n| n.checked_mul(3))
        .and_then(|n| n.checked_add(ni + nj + nk))
        .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
    let expected = n_reals
        .checked_mul(8)
        .and_then(|n| n.checked_add(HEADER_BYTES))
        .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::Length {
            expected,
            actual: bytes.len(),
        });
    }

    let mut reals = bytes[HEADER_BYTES..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut take = |n: usize| reals.by_ref().take(n).collect::<Vec<f64>>();
    let x = take(ni);
    let y = take(nj);
    let z = take(nk);
    let n = nt * ni * nj * nk;
    let u = take(n);
    let v = take(n);
    let w = take(n);
    FlowGrid::new(x, y, z, nt, dt, u, v, w)
}

/// Writes `grid` to `path` in FGRD format.
pub fn save_fgrd(grid: &FlowGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_fgrd(grid)?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads an FGRD file.
pub fn load_fgrd(path: impl AsRef<Path>) -> Result<FlowGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_fgrd(&bytes)
}

/// Extracts z-plane `k` as a `K = 1` grid with `w` set to zero.
pub fn slice_plane(grid: &FlowGrid, k: usize) -> Result<FlowGrid> {
    let d = grid.dims;
    if k >= d.nk {
        return Err(Error::Index(format!("slice index {k} out of range 0..{}", d.nk)));
    }
    let n = grid.timesteps * d.ni * d.nj;
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for t in 0..grid.timesteps {
        for i in 0..d.ni {
            for j in 0..d.nj {
                let o = grid.offset(t, i, j, k);
                u.push(grid.u[o]);
                v.push(grid.v[o]);
            }
        }
    }
    FlowGrid::new(
        grid.x.clone(),
        grid.y.clone(),
        vec![grid.z[k]],
        grid.timesteps,
        grid.dt,
        u,
        v,
        vec![0.0; n],
    )
}

/// Reads a small grid from CSV with header `t,i,j,k,x,y,z,u,v,w`.
///
/// Every `(t, i, j, k)` must appear exactly once. Coordinates are taken from
/// the rows and must agree across rows sharing an index.
pub fn read_csv_grid(path: impl AsRef<Path>, dt: f64) -> Result<FlowGrid> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header != ["t", "i", "j", "k", "x", "y", "z", "u", "v", "w"] {
        return Err(Error::Format(format!(
            "grid CSV header must be t,i,j,k,x,y,z,u,v,w, got {}",
            header.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let idx = (0..4)
            .map(|c| parse_field::<usize>(&rec, c, line))
            .collect::<Result<Vec<_>>>()?;
        let vals = (4..10)
            .map(|c| parse_field::<f64>(&rec, c, line))
            .collect::<Result<Vec<_>>>()?;
        rows.push((idx, vals));
    }
    let extent = |c: usize| rows.iter().map(|(idx, _)| idx[c] + 1).max().unwrap_or(0);
    let (nt, ni, nj, nk) = (extent(0), extent(1), extent(2), extent(3));
    let dims = Dims::new(ni, nj, nk);
    if rows.len() != nt * dims.len() {
        return Err(Error::Validation(format!(
            "grid CSV has {} rows, expected {} for shape ({nt}, {ni}, {nj}, {nk})",
            rows.len(),
            nt * dims.len()
        )));
    }
    let mut axes = [vec![f64::NAN; ni], vec![f64::NAN; nj], vec![f64::NAN; nk]];
    let mut vel = [vec![f64::NAN; rows.len()], vec![f64::NAN; rows.len()], vec![f64::NAN; rows.len()]];
    let mut seen = vec![false; rows.len()];
    for (idx, vals) in &rows {
        let (t, i, j, k) = (idx[0], idx[1], idx[2], idx[3]);
        for (a, pos) in [i, j, k].into_iter().enumerate() {
            let slot = &mut axes[a][pos];
            if slot.is_nan() {
                *slot = vals[a];
            } else if *slot != vals[a] {
                return Err(Error::Validation(format!(
                    "inconsistent coordinate on axis {a} at index {pos}"
                )));
            }
        }
        let o = t * dims.len() + dims.index(i, j, k);
        if seen[o] {
            return Err(Error::Validation(format!("duplicate row for (t={t}, i={i}, j={j}, k={k})")));
        }
        seen[o] = true;
        for c in 0..3 {
            vel[c][o] = vals[3 + c];
        }
    }
    let [x, y, z] = axes;
    let [u, v, w] = vel;
    FlowGrid::new(x, y, z, nt, dt, u, v, w)
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, c: usize, line: usize) -> Result<T> {
    rec.get(c)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::Format(format!("bad value in column {c} of data row {}", line + 1)))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Format(format!("{}: {e}", path.display()))
    }
}
