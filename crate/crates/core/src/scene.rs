//! Geometry of a localization deployment: the block grid covering the space
//! of interest (SOI), the metasurface element layout, the access point and the
//! bodies of the users.
//!
//! Conventions used throughout the crate:
//!
//! * Blocks are indexed with x varying fastest, then y, then z:
//!   `n = i + Nx * (j + Ny * k)`.
//! * A point on a face shared by two blocks belongs to the block with the
//!   smaller coordinate along that axis.
//! * The surface has an in-plane row axis `u` and column axis `v` with
//!   `v = normal × u`. For the default surface (normal +x) `u = +y`, `v = +z`.
//!   Element `m` sits in row `m / cols` and column `m % cols`; columns advance
//!   along `u` and rows along `v`.
//! * Direction angles are (polar, azimuth) in degrees: polar is measured from
//!   the surface normal, azimuth in the surface plane from the row axis `u`
//!   towards `v`. An incident angle is the direction from the surface towards
//!   the source.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 2.997_924_58e8;

/// Default occlusion radius of a user body (torso scale).
pub const DEFAULT_OCCLUSION_RADIUS: f64 = 0.15;

const PLANE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self * (1.0 / n))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    fn component(self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        [v.x, v.y, v.z]
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Regular grid of cubic blocks discretizing the space of interest.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrid {
    origin: Vec3,
    edge: f64,
    dims: [usize; 3],
}

impl BlockGrid {
    pub fn new(origin: Vec3, edge: f64, dims: [usize; 3]) -> Result<Self> {
        if !origin.is_finite() {
            return Err(Error::InvalidScene("grid origin is not finite".into()));
        }
        if !(edge > 0.0 && edge.is_finite()) {
            return Err(Error::InvalidScene(format!("block edge must be > 0, got {edge}")));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidScene(format!("grid dims must be >= 1, got {dims:?}")));
        }
        Ok(BlockGrid { origin, edge, dims })
    }

    /// Cube-shaped SOI of side `side` centered on `center`.
    pub fn centered_cube(center: Vec3, side: f64, edge: f64) -> Result<Self> {
        let per_axis = (side / edge).round();
        if per_axis < 1.0 || ((per_axis * edge) - side).abs() > 1e-9 * side.max(1.0) {
            return Err(Error::InvalidScene(format!(
                "side {side} is not a multiple of the block edge {edge}"
            )));
        }
        let half = side / 2.0;
        let n = per_axis as usize;
        BlockGrid::new(center - Vec3::new(half, half, half), edge, [n, n, n])
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn edge(&self) -> f64 {
        self.edge
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Far corner of the bounding box.
    pub fn extent_max(&self) -> Vec3 {
        self.origin
            + Vec3::new(
                self.dims[0] as f64 * self.edge,
                self.dims[1] as f64 * self.edge,
                self.dims[2] as f64 * self.edge,
            )
    }

    pub fn center(&self) -> Vec3 {
        (self.origin + self.extent_max()) * 0.5
    }

    pub fn axis_indices(&self, n: usize) -> Result<[usize; 3]> {
        if n >= self.len() {
            return Err(Error::Index {
                what: "block",
                index: n,
                len: self.len(),
            });
        }
        let [nx, ny, _] = self.dims;
        Ok([n % nx, (n / nx) % ny, n / (nx * ny)])
    }

    pub fn linear_index(&self, ijk: [usize; 3]) -> usize {
        let [nx, ny, _] = self.dims;
        ijk[0] + nx * (ijk[1] + ny * ijk[2])
    }

    pub fn block_center(&self, n: usize) -> Result<Vec3> {
        let [i, j, k] = self.axis_indices(n)?;
        let e = self.edge;
        Ok(self.origin
            + Vec3::new(
                (i as f64 + 0.5) * e,
                (j as f64 + 0.5) * e,
                (k as f64 + 0.5) * e,
            ))
    }

    pub fn block_centers(&self) -> Vec<Vec3> {
        (0..self.len())
            .map(|n| self.block_center(n).expect("index in range"))
            .collect()
    }

    /// Block containing `p`. Face points go to the lower block.
    pub fn block_index_of(&self, p: Vec3) -> Result<usize> {
        let outside = || Error::OutOfDomain {
            x: p.x,
            y: p.y,
            z: p.z,
        };
        if !p.is_finite() {
            return Err(outside());
        }
        let mut ijk = [0usize; 3];
        for (axis, slot) in ijk.iter_mut().enumerate() {
            let t = (p.component(axis) - self.origin.component(axis)) / self.edge;
            let count = self.dims[axis] as f64;
            if t < -PLANE_TOL || t > count + PLANE_TOL {
                return Err(outside());
            }
            // ceil - 1 sends exact face coordinates to the smaller block
            let idx = t.ceil() - 1.0;
            *slot = idx.clamp(0.0, count - 1.0) as usize;
        }
        Ok(self.linear_index(ijk))
    }

    /// Center of the block containing `p`.
    pub fn snap(&self, p: Vec3) -> Result<Vec3> {
        self.block_center(self.block_index_of(p)?)
    }
}

/// Direction angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Angles {
    pub polar_deg: f64,
    pub azimuth_deg: f64,
}

/// In-plane (row, column) axes for a surface with the given unit normal.
pub fn plane_basis(normal: Vec3) -> (Vec3, Vec3) {
    let up = if normal.z.abs() > 0.9 { Vec3::X } else { Vec3::Z };
    let u = up
        .cross(normal)
        .normalized()
        .expect("reference axis is not parallel to the normal");
    (u, normal.cross(u))
}

pub fn direction_angles(from: Vec3, to: Vec3, normal: Vec3) -> Result<Angles> {
    let dir = (to - from)
        .normalized()
        .ok_or_else(|| Error::Domain("zero-length direction".into()))?;
    let (u, v) = plane_basis(normal);
    let polar = dir.dot(normal).clamp(-1.0, 1.0).acos().to_degrees();
    let mut azimuth = dir.dot(v).atan2(dir.dot(u)).to_degrees();
    if azimuth < 0.0 {
        azimuth += 360.0;
    }
    if azimuth >= 360.0 {
        azimuth -= 360.0;
    }
    Ok(Angles {
        polar_deg: polar,
        azimuth_deg: azimuth,
    })
}

/// Unit vector leaving the surface at the given direction angles.
pub fn direction_from_angles(angles: Angles, normal: Vec3) -> Vec3 {
    let (u, v) = plane_basis(normal);
    let (p, a) = (angles.polar_deg.to_radians(), angles.azimuth_deg.to_radians());
    normal * p.cos() + u * (p.sin() * a.cos()) + v * (p.sin() * a.sin())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetasurfaceLayout {
    center: Vec3,
    normal: Vec3,
    row_axis: Vec3,
    col_axis: Vec3,
    rows: usize,
    cols: usize,
    pitch: f64,
    element_centers: Vec<Vec3>,
}

impl MetasurfaceLayout {
    pub fn new(center: Vec3, normal: Vec3, rows: usize, cols: usize, pitch: f64) -> Result<Self> {
        if !center.is_finite() {
            return Err(Error::InvalidScene("surface center is not finite".into()));
        }
        let normal = normal
            .normalized()
            .ok_or_else(|| Error::InvalidScene("surface normal has zero length".into()))?;
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidScene("surface needs at least one element".into()));
        }
        if !(pitch > 0.0 && pitch.is_finite()) {
            return Err(Error::InvalidScene(format!("element pitch must be > 0, got {pitch}")));
        }
        let (u, v) = plane_basis(normal);
        let element_centers = (0..rows * cols)
            .map(|m| {
                let (r, c) = ((m / cols) as f64, (m % cols) as f64);
                let du = (c - (cols as f64 - 1.0) / 2.0) * pitch;
                let dv = (r - (rows as f64 - 1.0) / 2.0) * pitch;
                center + u * du + v * dv
            })
            .collect();
        Ok(MetasurfaceLayout {
            center,
            normal,
            row_axis: u,
            col_axis: v,
            rows,
            cols,
            pitch,
            element_centers,
        })
    }

    pub fn center(&self) -> Vec3 {
        self.center
    }

    pub fn normal(&self) -> Vec3 {
        self.normal
    }

    pub fn row_axis(&self) -> Vec3 {
        self.row_axis
    }

    pub fn col_axis(&self) -> Vec3 {
        self.col_axis
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    /// Number of independently controlled elements `M`.
    pub fn len(&self) -> usize {
        self.element_centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.element_centers.is_empty()
    }

    pub fn element_center(&self, m: usize) -> Result<Vec3> {
        self.element_centers.get(m).copied().ok_or(Error::Index {
            what: "element",
            index: m,
            len: self.len(),
        })
    }

    pub fn element_centers(&self) -> &[Vec3] {
        &self.element_centers
    }

    /// Signed distance of `p` from the surface plane along the normal.
    pub fn signed_distance(&self, p: Vec3) -> f64 {
        (p - self.center).dot(self.normal)
    }

    /// Centers of the `per_side × per_side` metamaterial units of element `m`.
    pub fn unit_centers(&self, m: usize, per_side: usize) -> Result<Vec<Vec3>> {
        let c = self.element_center(m)?;
        let unit = self.pitch / per_side as f64;
        let half = (per_side as f64 - 1.0) / 2.0;
        Ok((0..per_side * per_side)
            .map(|q| {
                let (r, k) = ((q / per_side) as f64, (q % per_side) as f64);
                c + self.row_axis * ((k - half) * unit) + self.col_axis * ((r - half) * unit)
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Emitter {
    pub position: Vec3,
    pub carrier_hz: f64,
    pub wavelength: f64,
    /// Complex transmit amplitude `x` in √W (antenna gains folded in).
    pub tx_amplitude: num_complex::Complex64,
}

impl Emitter {
    pub fn new(position: Vec3, carrier_hz: f64, tx_amplitude: num_complex::Complex64) -> Result<Self> {
        if !position.is_finite() {
            return Err(Error::InvalidScene("emitter position is not finite".into()));
        }
        if !(carrier_hz > 0.0 && carrier_hz.is_finite()) {
            return Err(Error::InvalidScene(format!("carrier must be > 0 Hz, got {carrier_hz}")));
        }
        Ok(Emitter {
            position,
            carrier_hz,
            wavelength: SPEED_OF_LIGHT / carrier_hz,
            tx_amplitude,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserBody {
    pub position: Vec3,
    pub block_index: usize,
    pub occlusion_radius: f64,
}

impl UserBody {
    pub fn in_grid(grid: &BlockGrid, position: Vec3, occlusion_radius: f64) -> Result<Self> {
        Ok(UserBody {
            position,
            block_index: grid.block_index_of(position)?,
            occlusion_radius,
        })
    }
}

/// Whether the open segment `a`–`b` passes through `body`.
///
/// A body centered on one of the endpoints does not block (a receiver does
/// not shadow itself).
pub fn segment_blocked(a: Vec3, b: Vec3, body: &UserBody) -> bool {
    let c = body.position;
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return false;
    }
    let scale = len2.sqrt().max(1.0);
    if c.distance(a) <= PLANE_TOL * scale || c.distance(b) <= PLANE_TOL * scale {
        return false;
    }
    let t = ((c - a).dot(ab) / len2).clamp(0.0, 1.0);
    let closest = a + ab * t;
    closest.distance(c) < body.occlusion_radius
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub grid: BlockGrid,
    pub surface: MetasurfaceLayout,
    pub emitter: Emitter,
    pub users: Vec<UserBody>,
}

/// Constants of the reference deployment: a 69 cm sheet with 4×4 elements,
/// a 3.2 GHz AP 1 m from the surface at incidence (60°, 90°), and a 0.5 m
/// cubic SOI with 5 cm blocks.
pub mod reference {
    pub const CARRIER_HZ: f64 = 3.2e9;
    pub const SHEET_SIDE_M: f64 = 0.69;
    pub const ELEMENTS_PER_SIDE: usize = 4;
    pub const ELEMENT_PITCH_M: f64 = SHEET_SIDE_M / ELEMENTS_PER_SIDE as f64;
    pub const AP_DISTANCE_M: f64 = 1.0;
    pub const INCIDENCE_POLAR_DEG: f64 = 60.0;
    pub const INCIDENCE_AZIMUTH_DEG: f64 = 90.0;
    pub const SOI_SIDE_M: f64 = 0.5;
    pub const BLOCK_EDGE_M: f64 = 0.05;
}

impl Scene {
    pub fn new(
        grid: BlockGrid,
        surface: MetasurfaceLayout,
        emitter: Emitter,
        users: Vec<UserBody>,
    ) -> Result<Self> {
        let scene = Scene {
            grid,
            surface,
            emitter,
            users,
        };
        scene.validate()?;
        Ok(scene)
    }

    /// Reference deployment with the SOI centered at `(d, 0, 0)` and one user
    /// at the block center nearest the SOI center.
    pub fn reference(d: f64) -> Result<Self> {
        use reference::*;
        let surface = MetasurfaceLayout::new(
            Vec3::ZERO,
            Vec3::X,
            ELEMENTS_PER_SIDE,
            ELEMENTS_PER_SIDE,
            ELEMENT_PITCH_M,
        )?;
        let ap_dir = direction_from_angles(
            Angles {
                polar_deg: INCIDENCE_POLAR_DEG,
                azimuth_deg: INCIDENCE_AZIMUTH_DEG,
            },
            surface.normal(),
        );
        let emitter = Emitter::new(
            surface.center() + ap_dir * AP_DISTANCE_M,
            CARRIER_HZ,
            num_complex::Complex64::new(1.0, 0.0),
        )?;
        let grid = BlockGrid::centered_cube(Vec3::new(d, 0.0, 0.0), SOI_SIDE_M, BLOCK_EDGE_M)?;
        let user_pos = grid.snap(grid.center())?;
        let user = UserBody::in_grid(&grid, user_pos, DEFAULT_OCCLUSION_RADIUS)?;
        Scene::new(grid, surface, emitter, vec![user])
    }

    pub fn validate(&self) -> Result<()> {
        let lo = self.grid.origin();
        let hi = self.grid.extent_max();
        let sides: Vec<f64> = (0..8)
            .map(|c| {
                let p = Vec3::new(
                    if c & 1 == 0 { lo.x } else { hi.x },
                    if c & 2 == 0 { lo.y } else { hi.y },
                    if c & 4 == 0 { lo.z } else { hi.z },
                );
                self.surface.signed_distance(p)
            })
            .collect();
        let all_front = sides.iter().all(|&s| s > PLANE_TOL);
        let all_back = sides.iter().all(|&s| s < -PLANE_TOL);
        if !(all_front || all_back) {
            return Err(Error::InvalidScene(
                "space of interest intersects the metasurface plane".into(),
            ));
        }
        for (i, u) in self.users.iter().enumerate() {
            let idx = self.grid.block_index_of(u.position).map_err(|_| {
                Error::InvalidScene(format!("user {i} lies outside the space of interest"))
            })?;
            if idx != u.block_index {
                return Err(Error::InvalidScene(format!(
                    "user {i} block index {} does not contain its position",
                    u.block_index
                )));
            }
            if !(u.occlusion_radius >= 0.0) {
                return Err(Error::InvalidScene(format!("user {i} has a negative occlusion radius")));
            }
        }
        Ok(())
    }

    /// Same geometry with the SOI moved so that its center sits at `center`.
    pub fn with_soi_center(&self, center: Vec3) -> Result<Self> {
        let shift = center - self.grid.center();
        let grid = BlockGrid::new(self.grid.origin() + shift, self.grid.edge(), self.grid.dims())?;
        let users = self
            .users
            .iter()
            .map(|u| UserBody::in_grid(&grid, u.position + shift, u.occlusion_radius))
            .collect::<Result<Vec<_>>>()?;
        Scene::new(grid, self.surface.clone(), self.emitter, users)
    }

    pub fn with_users(&self, users: Vec<UserBody>) -> Result<Self> {
        Scene::new(self.grid.clone(), self.surface.clone(), self.emitter, users)
    }
}
