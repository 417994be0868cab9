//! Admissible control-volume partitions of the unit square and of a disc.
//!
//! Every face stores its endpoints as indices into a shared vertex table, so
//! any quantity evaluated at vertices (stream functions in particular) is
//! single-valued and telescopes exactly around each cell. Interior faces are
//! oriented from `left` to `right`; boundary faces have no right neighbour and
//! their normal points out of the domain.
//!
//! Endpoint order follows one convention on both mesh families: rotating the
//! chord `p1 - p0` counter-clockwise by a quarter turn gives the direction of
//! the face normal.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;
use crate::state::StateVector;

pub type Point = [f64; 2];

/// Default tensor Gauss order used when projecting initial data.
pub const DEFAULT_PROJECTION_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub id: usize,
    /// Area `|K|`.
    pub volume: f64,
    pub centroid: Point,
    /// Boundary length `|∂K|`.
    pub perimeter: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaceShape {
    Segment,
    /// Circular arc about `center`; the endpoints are the arc endpoints.
    Arc { center: Point, radius: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Face {
    pub id: usize,
    pub vertices: [usize; 2],
    pub endpoints: [Point; 2],
    /// Length `|Γ|` (arc length for arcs).
    pub area: f64,
    pub left: usize,
    /// `None` on the domain boundary.
    pub right: Option<usize>,
    /// Unit normal pointing from `left` to `right` (outward on the boundary),
    /// taken at the face midpoint for arcs.
    pub unit_normal: Point,
    /// Distance between the centroids of `left` and `right`.
    pub center_distance: Option<f64>,
    pub shape: FaceShape,
}

impl Face {
    pub fn is_interior(&self) -> bool {
        self.right.is_some()
    }

    /// Exact value of `∫_Γ n dσ`.
    ///
    /// For any curve whose normal is the tangent turned counter-clockwise the
    /// integral equals the rotated chord, regardless of the curve's shape.
    pub fn normal_integral(&self) -> Point {
        let [p0, p1] = self.endpoints;
        [-(p1[1] - p0[1]), p1[0] - p0[0]]
    }

    /// Point on the face at parameter `s ∈ [0, 1]` (arc-length proportional).
    pub fn point_at(&self, s: f64) -> Point {
        let [p0, p1] = self.endpoints;
        match self.shape {
            FaceShape::Segment => [p0[0] + s * (p1[0] - p0[0]), p0[1] + s * (p1[1] - p0[1])],
            FaceShape::Arc { center, radius } => {
                let (a0, a1) = self.arc_angles(center);
                let a = a0 + s * (a1 - a0);
                [center[0] + radius * a.cos(), center[1] + radius * a.sin()]
            }
        }
    }

    /// Unit normal (left to right) at parameter `s`.
    pub fn normal_at(&self, s: f64) -> Point {
        match self.shape {
            FaceShape::Segment => self.unit_normal,
            FaceShape::Arc { center, radius } => {
                let p = self.point_at(s);
                let sign = if dot(self.unit_normal, sub(self.midpoint(), center)) >= 0.0 { 1.0 } else { -1.0 };
                [sign * (p[0] - center[0]) / radius, sign * (p[1] - center[1]) / radius]
            }
        }
    }

    pub fn midpoint(&self) -> Point {
        match self.shape {
            FaceShape::Segment => {
                let [p0, p1] = self.endpoints;
                [0.5 * (p0[0] + p1[0]), 0.5 * (p0[1] + p1[1])]
            }
            FaceShape::Arc { .. } => self.point_at(0.5),
        }
    }

    fn arc_angles(&self, center: Point) -> (f64, f64) {
        let [p0, p1] = self.endpoints;
        let a0 = (p0[1] - center[1]).atan2(p0[0] - center[0]);
        let mut a1 = (p1[1] - center[1]).atan2(p1[0] - center[0]);
        // Arcs in this crate never span more than half a turn.
        while a1 - a0 > PI {
            a1 -= 2.0 * PI;
        }
        while a0 - a1 > PI {
            a1 += 2.0 * PI;
        }
        (a0, a1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeshKind {
    Cartesian { nx: usize, ny: usize },
    Polar { n_r: usize, n_phi: usize, center: Point, radius: f64 },
}

impl MeshKind {
    pub fn domain_name(&self) -> &'static str {
        match self {
            MeshKind::Cartesian { .. } => "unit square",
            MeshKind::Polar { .. } => "disc",
        }
    }

    /// Exact measure of the domain.
    pub fn domain_measure(&self) -> f64 {
        match *self {
            MeshKind::Cartesian { .. } => 1.0,
            MeshKind::Polar { radius, .. } => PI * radius * radius,
        }
    }

    pub fn build(&self) -> Result<Mesh> {
        match *self {
            MeshKind::Cartesian { nx, ny } => Mesh::cartesian(nx, ny),
            MeshKind::Polar { n_r, n_phi, center, radius } => Mesh::polar(n_r, n_phi, center, radius),
        }
    }
}

impl std::fmt::Display for MeshKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MeshKind::Cartesian { nx, ny } => write!(f, "cartesian({nx}x{ny})"),
            MeshKind::Polar { n_r, n_phi, center, radius } => {
                write!(f, "polar({n_r}x{n_phi},center=({},{}),radius={})", center[0], center[1], radius)
            }
        }
    }
}

/// One entry of a cell's face list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellFace {
    pub face: usize,
    pub neighbor: Option<usize>,
    /// `+1` when the cell is the face's `left`, `-1` otherwise.
    pub sign: f64,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    kind: MeshKind,
    h: f64,
    vertices: Vec<Point>,
    cells: Vec<Cell>,
    faces: Vec<Face>,
    offsets: Vec<usize>,
    cell_faces: Vec<CellFace>,
}

impl Mesh {
    /// Uniform `nx × ny` grid on `(0,1)²`.
    pub fn cartesian(nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidMesh(format!("cartesian mesh needs nx, ny >= 2 (got {nx}x{ny})")));
        }
        let dx = 1.0 / nx as f64;
        let dy = 1.0 / ny as f64;
        let vid = |i: usize, j: usize| j * (nx + 1) + i;
        let cid = |i: usize, j: usize| j * nx + i;

        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push([i as f64 * dx, j as f64 * dy]);
            }
        }
        let mut cells = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                cells.push(Cell {
                    id: cid(i, j),
                    volume: dx * dy,
                    centroid: [(i as f64 + 0.5) * dx, (j as f64 + 0.5) * dy],
                    perimeter: 2.0 * (dx + dy),
                });
            }
        }

        let mut builder = FaceBuilder::new(&vertices, &cells);
        // Vertical faces, normal +x.
        for j in 0..ny {
            for i in 0..=nx {
                let (left, right, normal) = match i {
                    0 => (cid(0, j), None, [-1.0, 0.0]),
                    _ if i == nx => (cid(nx - 1, j), None, [1.0, 0.0]),
                    _ => (cid(i - 1, j), Some(cid(i, j)), [1.0, 0.0]),
                };
                builder.push([vid(i, j), vid(i, j + 1)], dy, left, right, normal, FaceShape::Segment);
            }
        }
        // Horizontal faces, normal +y.
        for j in 0..=ny {
            for i in 0..nx {
                let (left, right, normal) = match j {
                    0 => (cid(i, 0), None, [0.0, -1.0]),
                    _ if j == ny => (cid(i, ny - 1), None, [0.0, 1.0]),
                    _ => (cid(i, j - 1), Some(cid(i, j)), [0.0, 1.0]),
                };
                builder.push([vid(i, j), vid(i + 1, j)], dx, left, right, normal, FaceShape::Segment);
            }
        }
        let faces = builder.finish();
        Ok(Self::assemble(MeshKind::Cartesian { nx, ny }, dx.max(dy), vertices, cells, faces))
    }

    /// Polar grid of `n_r` rings and `n_phi` sectors on the disc of the given
    /// centre and radius. The innermost ring is made of full sectors meeting
    /// at the centre.
    pub fn polar(n_r: usize, n_phi: usize, center: Point, radius: f64) -> Result<Self> {
        if n_r < 2 || n_phi < 3 || !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidMesh(format!(
                "polar mesh needs n_r >= 2, n_phi >= 3 and radius > 0 (got {n_r}, {n_phi}, {radius})"
            )));
        }
        if !center[0].is_finite() || !center[1].is_finite() {
            return Err(Error::InvalidMesh("polar mesh centre must be finite".into()));
        }
        let dr = radius / n_r as f64;
        let dphi = 2.0 * PI / n_phi as f64;
        let rad = |i: usize| i as f64 * dr;
        let angle = |j: usize| j as f64 * dphi;
        let trig: Vec<(f64, f64)> = (0..n_phi).map(|j| angle(j).sin_cos()).collect();
        let cid = |i: usize, j: usize| i * n_phi + (j % n_phi);
        let vid = |i: usize, j: usize| if i == 0 { 0 } else { 1 + (i - 1) * n_phi + (j % n_phi) };

        let mut vertices = Vec::with_capacity(1 + n_r * n_phi);
        vertices.push(center);
        for i in 1..=n_r {
            for &(s, c) in &trig {
                vertices.push([center[0] + rad(i) * c, center[1] + rad(i) * s]);
            }
        }

        let half = 0.5 * dphi;
        let shrink = half.sin() / half;
        let mut cells = Vec::with_capacity(n_r * n_phi);
        for i in 0..n_r {
            let (ra, rb) = (rad(i), rad(i + 1));
            let volume = 0.5 * (rb * rb - ra * ra) * dphi;
            let rc = 2.0 / 3.0 * (rb.powi(3) - ra.powi(3)) / (rb * rb - ra * ra) * shrink;
            for j in 0..n_phi {
                let (s, c) = (angle(j) + half).sin_cos();
                cells.push(Cell {
                    id: cid(i, j),
                    volume,
                    centroid: [center[0] + rc * c, center[1] + rc * s],
                    perimeter: (ra + rb) * dphi + 2.0 * dr,
                });
            }
        }

        let mut builder = FaceBuilder::new(&vertices, &cells);
        // Radial segments on the ray at angle φ_j, normal along +φ.
        for i in 0..n_r {
            for j in 0..n_phi {
                let (s, c) = trig[j];
                let left = cid(i, j + n_phi - 1);
                builder.push([vid(i, j), vid(i + 1, j)], dr, left, Some(cid(i, j)), [-s, c], FaceShape::Segment);
            }
        }
        // Circumferential arcs at r_i, normal along +r.
        for i in 1..=n_r {
            for j in 0..n_phi {
                let (s, c) = (angle(j) + half).sin_cos();
                let left = cid(i - 1, j);
                let right = (i < n_r).then(|| cid(i, j));
                let shape = FaceShape::Arc { center, radius: rad(i) };
                builder.push([vid(i, j), vid(i, j + 1)], rad(i) * dphi, left, right, [c, s], shape);
            }
        }
        let faces = builder.finish();
        let kind = MeshKind::Polar { n_r, n_phi, center, radius };
        Ok(Self::assemble(kind, dr.max(radius * dphi), vertices, cells, faces))
    }

    fn assemble(kind: MeshKind, h: f64, vertices: Vec<Point>, cells: Vec<Cell>, faces: Vec<Face>) -> Self {
        let mut counts = vec![0usize; cells.len() + 1];
        for f in &faces {
            counts[f.left + 1] += 1;
            if let Some(r) = f.right {
                counts[r + 1] += 1;
            }
        }
        for k in 1..counts.len() {
            counts[k] += counts[k - 1];
        }
        let offsets = counts;
        let mut fill = offsets.clone();
        let placeholder = CellFace { face: usize::MAX, neighbor: None, sign: 0.0 };
        let mut cell_faces = vec![placeholder; offsets[cells.len()]];
        for f in &faces {
            cell_faces[fill[f.left]] = CellFace { face: f.id, neighbor: f.right, sign: 1.0 };
            fill[f.left] += 1;
            if let Some(r) = f.right {
                cell_faces[fill[r]] = CellFace { face: f.id, neighbor: Some(f.left), sign: -1.0 };
                fill[r] += 1;
            }
        }
        Self { kind, h, vertices, cells, faces, offsets, cell_faces }
    }

    pub fn kind(&self) -> &MeshKind {
        &self.kind
    }

    /// Characteristic mesh size.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn interior_faces(&self) -> impl Iterator<Item = &Face> {
        self.faces.iter().filter(|f| f.is_interior())
    }

    /// Faces of cell `k`, boundary faces included.
    pub fn cell_faces(&self, k: usize) -> &[CellFace] {
        &self.cell_faces[self.offsets[k]..self.offsets[k + 1]]
    }

    pub fn volumes(&self) -> impl Iterator<Item = f64> + '_ {
        self.cells.iter().map(|c| c.volume)
    }

    pub fn total_volume(&self) -> f64 {
        self.cells.iter().map(|c| c.volume).sum()
    }

    /// `(min |K| / h², max |∂K| / h)` over all cells.
    pub fn regularity_constants(&self) -> (f64, f64) {
        let h = self.h;
        self.cells.iter().fold((f64::INFINITY, 0.0f64), |(c1, c2), c| {
            (c1.min(c.volume / (h * h)), c2.max(c.perimeter / h))
        })
    }

    /// Cell averages of `f` by tensor Gauss–Legendre quadrature of the given order.
    ///
    /// Polar cells are integrated in `(r, φ)` with Jacobian `r`. Averages are
    /// normalised by the quadrature's own volume so constants are reproduced
    /// bit-for-bit.
    pub fn project<F: Fn(f64, f64) -> f64>(&self, f: F, order: usize) -> Vec<f64> {
        let rule = GaussLegendre::new(order.max(1));
        let q = rule.len();
        match self.kind {
            MeshKind::Cartesian { nx, ny } => {
                let dx = 1.0 / nx as f64;
                let dy = 1.0 / ny as f64;
                let mut out = Vec::with_capacity(self.cells.len());
                for j in 0..ny {
                    for i in 0..nx {
                        let (x0, y0) = (i as f64 * dx, j as f64 * dy);
                        let (mut acc, mut wsum) = (0.0, 0.0);
                        for b in 0..q {
                            let y = y0 + 0.5 * dy * (1.0 + rule.nodes[b]);
                            for a in 0..q {
                                let x = x0 + 0.5 * dx * (1.0 + rule.nodes[a]);
                                let w = rule.weights[a] * rule.weights[b];
                                acc += w * f(x, y);
                                wsum += w;
                            }
                        }
                        out.push(acc / wsum);
                    }
                }
                out
            }
            MeshKind::Polar { n_r, n_phi, center, radius } => {
                let dr = radius / n_r as f64;
                let dphi = 2.0 * PI / n_phi as f64;
                let mut out = Vec::with_capacity(self.cells.len());
                for i in 0..n_r {
                    for j in 0..n_phi {
                        let (r0, p0) = (i as f64 * dr, j as f64 * dphi);
                        let (mut acc, mut wsum) = (0.0, 0.0);
                        for b in 0..q {
                            let phi = p0 + 0.5 * dphi * (1.0 + rule.nodes[b]);
                            let (s, c) = phi.sin_cos();
                            for a in 0..q {
                                let r = r0 + 0.5 * dr * (1.0 + rule.nodes[a]);
                                let w = rule.weights[a] * rule.weights[b] * r;
                                acc += w * f(center[0] + r * c, center[1] + r * s);
                                wsum += w;
                            }
                        }
                        out.push(acc / wsum);
                    }
                }
                out
            }
        }
    }
}

/// Cell averages of `f` with the default quadrature order, as a state vector.
pub fn project_initial_data<F: Fn(f64, f64) -> f64>(mesh: &std::sync::Arc<Mesh>, f: F) -> StateVector {
    StateVector::new(mesh.clone(), mesh.project(f, DEFAULT_PROJECTION_ORDER)).expect("projection has one value per cell")
}

struct FaceBuilder<'a> {
    vertices: &'a [Point],
    cells: &'a [Cell],
    faces: Vec<Face>,
}

impl<'a> FaceBuilder<'a> {
    fn new(vertices: &'a [Point], cells: &'a [Cell]) -> Self {
        Self { vertices, cells, faces: Vec::new() }
    }

    fn push(&mut self, mut verts: [usize; 2], area: f64, left: usize, right: Option<usize>, normal: Point, shape: FaceShape) {
        let (p0, p1) = (self.vertices[verts[0]], self.vertices[verts[1]]);
        let rotated = [-(p1[1] - p0[1]), p1[0] - p0[0]];
        if dot(rotated, normal) < 0.0 {
            verts.swap(0, 1);
        }
        let center_distance = right.map(|r| {
            let (a, b) = (self.cells[left].centroid, self.cells[r].centroid);
            (a[0] - b[0]).hypot(a[1] - b[1])
        });
        self.faces.push(Face {
            id: self.faces.len(),
            vertices: verts,
            endpoints: [self.vertices[verts[0]], self.vertices[verts[1]]],
            area,
            left,
            right,
            unit_normal: normal,
            center_distance,
            shape,
        });
    }

    fn finish(self) -> Vec<Face> {
        self.faces
    }
}

pub(crate) fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub(crate) fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}
