//! Divergence-free stirring modes and their exact face fluxes.
//!
//! Each mode carries a stream function `ψ` with `u = (-∂ψ/∂y, ∂ψ/∂x)`. Face
//! fluxes are differences of `ψ` at the face endpoints, evaluated once per
//! mesh vertex, so every cell's net flux telescopes to zero up to rounding.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, MeshKind, Point};
use crate::quadrature::integrate_adaptive;

/// Doswell profile parameter used in the literature.
pub const DOSWELL_VBAR: f64 = 2.59807;

/// Radial samples in a tabulated vortex stream function.
const STREAM_TABLE_INTERVALS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainTag {
    Square,
    Disc,
    /// Valid on either domain (only the zero flow).
    Any,
}

impl DomainTag {
    fn name(self) -> &'static str {
        match self {
            DomainTag::Square => "unit square",
            DomainTag::Disc => "disc",
            DomainTag::Any => "any domain",
        }
    }
}

/// Sub-disc carrying one cut-off Doswell vortex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vortex {
    pub center: Point,
    pub radius: f64,
}

#[derive(Debug, Clone)]
enum FlowKind {
    Zero,
    Cellular { mode: u32 },
    Doswell { center: Point, vbar: f64 },
    FiveVortex { domain_center: Point, domain_radius: f64, vbar: f64, vortices: Vec<(Vortex, Arc<StreamTable>)> },
    RigidRotation { center: Point, omega: f64 },
}

/// A divergence-free velocity field together with its stream function.
#[derive(Debug, Clone)]
pub struct BasisFlow {
    name: String,
    kind: FlowKind,
    scale: f64,
}

impl BasisFlow {
    /// Vanishing flow with constant stream function.
    pub fn zero() -> Self {
        Self { name: "zero".into(), kind: FlowKind::Zero, scale: 1.0 }
    }

    /// Cellular mode `i` on the unit square, `ψ = sin(iπx) sin(iπy)`.
    pub fn cellular(mode: u32) -> Result<Self> {
        if mode == 0 {
            return Err(Error::InvalidFlow("cellular mode index starts at 1".into()));
        }
        Ok(Self { name: format!("cellular({mode})"), kind: FlowKind::Cellular { mode }, scale: 1.0 })
    }

    /// Single Doswell vortex about `center` with `ψ = (v̄/2) tanh²(r)`.
    pub fn doswell(center: Point, vbar: f64) -> Result<Self> {
        if !vbar.is_finite() {
            return Err(Error::InvalidFlow("Doswell parameter must be finite".into()));
        }
        Ok(Self { name: format!("doswell(vbar={vbar})"), kind: FlowKind::Doswell { center, vbar }, scale: 1.0 })
    }

    /// Five cut-off Doswell vortices: one of radius `R/3` at the domain centre
    /// and four of the same radius at distance `2R/3` along the axes.
    pub fn five_cell_doswell(domain_center: Point, domain_radius: f64, vbar: f64) -> Result<Self> {
        let rc = domain_radius / 3.0;
        let off = 2.0 * domain_radius / 3.0;
        let [cx, cy] = domain_center;
        let layout = [[cx, cy], [cx + off, cy], [cx - off, cy], [cx, cy + off], [cx, cy - off]]
            .map(|center| Vortex { center, radius: rc });
        Self::multi_vortex(domain_center, domain_radius, vbar, &layout)
    }

    /// Cut-off Doswell vortices on arbitrary non-overlapping sub-discs of the domain.
    pub fn multi_vortex(domain_center: Point, domain_radius: f64, vbar: f64, layout: &[Vortex]) -> Result<Self> {
        if !(domain_radius > 0.0) || !vbar.is_finite() {
            return Err(Error::InvalidFlow("multi-vortex flow needs a positive domain radius and finite v̄".into()));
        }
        for (a, va) in layout.iter().enumerate() {
            if !(va.radius > 0.0) {
                return Err(Error::InvalidFlow(format!("vortex {a} has non-positive radius")));
            }
            let d = dist(va.center, domain_center);
            if d + va.radius > domain_radius + 1e-12 {
                return Err(Error::InvalidFlow(format!("vortex {a} extends outside the domain")));
            }
            for (b, vb) in layout.iter().enumerate().skip(a + 1) {
                if dist(va.center, vb.center) < va.radius + vb.radius - 1e-12 {
                    return Err(Error::InvalidFlow(format!("vortices {a} and {b} overlap")));
                }
            }
        }
        let mut tables: Vec<Arc<StreamTable>> = Vec::new();
        let mut vortices = Vec::with_capacity(layout.len());
        for v in layout {
            let table = match tables.iter().find(|t| t.cutoff == v.radius) {
                Some(t) => t.clone(),
                None => {
                    let t = Arc::new(StreamTable::new(vbar, v.radius, STREAM_TABLE_INTERVALS));
                    tables.push(t.clone());
                    t
                }
            };
            vortices.push((*v, table));
        }
        Ok(Self {
            name: format!("multi_vortex({}, vbar={vbar})", layout.len()),
            kind: FlowKind::FiveVortex { domain_center, domain_radius, vbar, vortices },
            scale: 1.0,
        })
    }

    /// Rigid rotation with angular rate `omega`, `ψ = ω r²/2`.
    pub fn rigid_rotation(center: Point, omega: f64) -> Self {
        Self { name: format!("rigid_rotation(omega={omega})"), kind: FlowKind::RigidRotation { center, omega }, scale: 1.0 }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn domain_tag(&self) -> DomainTag {
        match self.kind {
            FlowKind::Zero => DomainTag::Any,
            FlowKind::Cellular { .. } => DomainTag::Square,
            _ => DomainTag::Disc,
        }
    }

    /// Returns a copy with velocity and stream function multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.scale *= factor;
        out
    }

    /// Returns a copy with unit `L²(Ω)` norm, measured by cell quadrature on `mesh`.
    pub fn normalized(&self, mesh: &Mesh) -> Result<Self> {
        self.check_domain(mesh)?;
        let speed2 = mesh.project(
            |x, y| {
                let [u, v] = self.velocity(x, y);
                u * u + v * v
            },
            6,
        );
        let norm2: f64 = speed2.iter().zip(mesh.volumes()).map(|(s, w)| s * w).sum();
        if !(norm2 > 0.0) {
            return Err(Error::InvalidFlow(format!("{} has zero L² norm", self.name)));
        }
        Ok(self.scaled(1.0 / norm2.sqrt()))
    }

    /// Velocity at `(x, y)`.
    pub fn velocity(&self, x: f64, y: f64) -> Point {
        let [u, v] = match &self.kind {
            FlowKind::Zero => [0.0, 0.0],
            FlowKind::Cellular { mode } => {
                let k = *mode as f64 * PI;
                let (sx, cx) = (k * x).sin_cos();
                let (sy, cy) = (k * y).sin_cos();
                [-k * sx * cy, k * cx * sy]
            }
            FlowKind::Doswell { center, vbar } => {
                let (dx, dy) = (x - center[0], y - center[1]);
                let g = doswell_g(dx.hypot(dy), *vbar);
                [-dy * g, dx * g]
            }
            FlowKind::FiveVortex { vbar, vortices, .. } => {
                let mut acc = [0.0, 0.0];
                for (v, _) in vortices {
                    let (dx, dy) = (x - v.center[0], y - v.center[1]);
                    let r = dx.hypot(dy);
                    if r < v.radius {
                        let w = doswell_g(r, *vbar) * cutoff(r, v.radius);
                        acc[0] -= dy * w;
                        acc[1] += dx * w;
                    }
                }
                acc
            }
            FlowKind::RigidRotation { center, omega } => [-omega * (y - center[1]), omega * (x - center[0])],
        };
        [self.scale * u, self.scale * v]
    }

    /// Stream function at `(x, y)`.
    pub fn stream(&self, x: f64, y: f64) -> f64 {
        let psi = match &self.kind {
            FlowKind::Zero => 0.0,
            FlowKind::Cellular { mode } => {
                let k = *mode as f64 * PI;
                (k * x).sin() * (k * y).sin()
            }
            FlowKind::Doswell { center, vbar } => {
                let t = (x - center[0]).hypot(y - center[1]).tanh();
                0.5 * vbar * t * t
            }
            FlowKind::FiveVortex { vortices, .. } => vortices
                .iter()
                .map(|(v, table)| table.eval((x - v.center[0]).hypot(y - v.center[1])))
                .sum(),
            FlowKind::RigidRotation { center, omega } => {
                let (dx, dy) = (x - center[0], y - center[1]);
                0.5 * omega * (dx * dx + dy * dy)
            }
        };
        self.scale * psi
    }

    pub fn check_domain(&self, mesh: &Mesh) -> Result<()> {
        let mismatch = |expected: DomainTag| Error::DomainMismatch {
            flow: self.name.clone(),
            expected: expected.name(),
            found: mesh.kind().domain_name(),
        };
        match (self.domain_tag(), mesh.kind()) {
            (DomainTag::Any, _) => Ok(()),
            (DomainTag::Square, MeshKind::Cartesian { .. }) => Ok(()),
            (DomainTag::Disc, MeshKind::Polar { center, radius, .. }) => {
                let ok = match &self.kind {
                    FlowKind::Doswell { center: c, .. } | FlowKind::RigidRotation { center: c, .. } => {
                        dist(*c, *center) <= 1e-12
                    }
                    FlowKind::FiveVortex { domain_center, domain_radius, .. } => {
                        dist(*domain_center, *center) <= 1e-12 && (domain_radius - radius).abs() <= 1e-12 * radius
                    }
                    _ => true,
                };
                if ok {
                    Ok(())
                } else {
                    Err(Error::InvalidFlow(format!("{} is not centred on the mesh disc", self.name)))
                }
            }
            (tag, _) => Err(mismatch(tag)),
        }
    }
}

/// `g(r) = v̄ sech²(r) tanh(r) / r`, continuous at the origin with `g(0) = v̄`.
pub fn doswell_g(r: f64, vbar: f64) -> f64 {
    let sech = 1.0 / r.cosh();
    let tanh_over_r = if r.abs() < 1e-4 {
        let r2 = r * r;
        1.0 - r2 / 3.0 + 2.0 * r2 * r2 / 15.0
    } else {
        r.tanh() / r
    };
    vbar * sech * sech * tanh_over_r
}

/// Radial cut-off `(1 - (r/R_c)²)³` on `[0, R_c)`, zero beyond.
pub fn cutoff(r: f64, rc: f64) -> f64 {
    if r >= rc {
        0.0
    } else {
        let s = 1.0 - (r / rc).powi(2);
        s * s * s
    }
}

/// Derivative of [`cutoff`] in `r`.
pub fn cutoff_derivative(r: f64, rc: f64) -> f64 {
    if r >= rc {
        0.0
    } else {
        let s = 1.0 - (r / rc).powi(2);
        -6.0 * r / (rc * rc) * s * s
    }
}

/// Integrand `s g(s) C(s)` of the cut-off vortex stream function.
pub fn vortex_stream_density(s: f64, vbar: f64, rc: f64) -> f64 {
    let sech = 1.0 / s.cosh();
    vbar * sech * sech * s.tanh() * cutoff(s, rc)
}

/// Tabulated `ψ_v(r) = ∫₀^{min(r,R_c)} s g(s) C(s) ds`.
///
/// Node values come from adaptive Gauss–Kronrod on each interval; between nodes
/// the table uses cubic Hermite interpolation with the exact slope `r g(r) C(r)`.
#[derive(Debug, Clone)]
pub struct StreamTable {
    vbar: f64,
    cutoff: f64,
    step: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl StreamTable {
    pub fn new(vbar: f64, cutoff: f64, intervals: usize) -> Self {
        let step = cutoff / intervals as f64;
        let node = |k: usize| if k == intervals { cutoff } else { k as f64 * step };
        let density = |s: f64| vortex_stream_density(s, vbar, cutoff);
        let mut values = Vec::with_capacity(intervals + 1);
        let mut slopes = Vec::with_capacity(intervals + 1);
        let mut acc = 0.0;
        values.push(0.0);
        slopes.push(density(0.0));
        let tol = 1e-12 / intervals as f64;
        for k in 1..=intervals {
            acc += integrate_adaptive(density, node(k - 1), node(k), tol).0;
            values.push(acc);
            slopes.push(density(node(k)));
        }
        Self { vbar, cutoff, step, values, slopes }
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn vbar(&self) -> f64 {
        self.vbar
    }

    /// Value at or beyond the cut-off radius.
    pub fn plateau(&self) -> f64 {
        *self.values.last().expect("table has at least one node")
    }

    pub fn eval(&self, r: f64) -> f64 {
        if r >= self.cutoff {
            return self.plateau();
        }
        let r = r.max(0.0);
        let k = ((r / self.step) as usize).min(self.values.len() - 2);
        let h = self.step;
        let t = (r - k as f64 * h) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.values[k] + h10 * h * self.slopes[k] + h01 * self.values[k + 1] + h11 * h * self.slopes[k + 1]
    }
}

/// Signed fluxes `∫_Γ b·n dσ` of one basis flow, one per face (left to right).
/// Boundary entries are zero and never used.
#[derive(Debug, Clone)]
pub struct FluxTable {
    pub basis: String,
    pub fluxes: Vec<f64>,
}

impl FluxTable {
    pub fn max_abs(&self) -> f64 {
        self.fluxes.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Exact face fluxes of `flow` on `mesh` from stream-function differences.
pub fn assemble_flux_table(mesh: &Mesh, flow: &BasisFlow) -> Result<FluxTable> {
    flow.check_domain(mesh)?;
    let psi: Vec<f64> = mesh.vertices().iter().map(|p| flow.stream(p[0], p[1])).collect();
    let fluxes = mesh
        .faces()
        .iter()
        .map(|f| if f.is_interior() { psi[f.vertices[1]] - psi[f.vertices[0]] } else { 0.0 })
        .collect();
    Ok(FluxTable { basis: flow.name().to_string(), fluxes })
}

/// Largest absolute net flux over the cells of `mesh`.
pub fn check_discrete_incompressibility(table: &FluxTable, mesh: &Mesh) -> Result<f64> {
    if table.fluxes.len() != mesh.faces().len() {
        return Err(Error::SizeMismatch { what: "flux table", expected: mesh.faces().len(), found: table.fluxes.len() });
    }
    Ok((0..mesh.num_cells())
        .map(|k| {
            mesh.cell_faces(k)
                .iter()
                .filter(|cf| cf.neighbor.is_some())
                .map(|cf| cf.sign * table.fluxes[cf.face])
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max))
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}
