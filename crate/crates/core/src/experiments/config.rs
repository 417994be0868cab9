//! Scenario files: one TOML document per scenario.
//!
//! Sections are `[mesh]`, `[[basis]]`, `[initial]`, `[time]`, `[control]`,
//! `[solver]`, `[objective]`, `[optimizer]`, `[output]`, `[gradcheck]` and
//! `[convergence]`. Everything except the physical setup has defaults; the
//! setup sections are only required by the commands that use them.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::{BasisFlow, DOSWELL_VBAR};
use crate::krylov::{KrylovConfig, KrylovMethod};
use crate::mesh::{project_initial_data, Mesh, MeshKind, Point};
use crate::objective::AdjointSampling;
use crate::optimizer::OptimizerConfig;
use crate::schedule::ControlSchedule;
use crate::state::StateVector;
use crate::transport::StoragePolicy;

fn one() -> f64 {
    1.0
}

fn default_vbar() -> f64 {
    DOSWELL_VBAR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BasisSpec {
    Zero,
    Cellular {
        mode: u32,
        #[serde(default = "one")]
        scale: f64,
    },
    /// Centre defaults to the disc centre.
    Doswell {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<Point>,
        #[serde(default = "default_vbar")]
        vbar: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// Five cut-off vortices laid out in the disc of the mesh.
    FiveVortex {
        #[serde(default = "default_vbar")]
        vbar: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    RigidRotation {
        #[serde(default = "one")]
        omega: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<Point>,
    },
}

impl BasisSpec {
    pub fn build(&self, mesh: &MeshKind) -> Result<BasisFlow> {
        let disc = match *mesh {
            MeshKind::Polar { center, radius, .. } => Some((center, radius)),
            MeshKind::Cartesian { .. } => None,
        };
        let need_disc = |what: &str| disc.ok_or_else(|| Error::Config(format!("basis `{what}` requires a polar mesh")));
        let flow = match self {
            BasisSpec::Zero => BasisFlow::zero(),
            BasisSpec::Cellular { mode, scale } => BasisFlow::cellular(*mode)?.scaled(*scale),
            BasisSpec::Doswell { center, vbar, scale } => {
                let c = match center {
                    Some(c) => *c,
                    None => need_disc("doswell")?.0,
                };
                BasisFlow::doswell(c, *vbar)?.scaled(*scale)
            }
            BasisSpec::FiveVortex { vbar, scale } => {
                let (c, r) = need_disc("five_vortex")?;
                BasisFlow::five_cell_doswell(c, r, *vbar)?.scaled(*scale)
            }
            BasisSpec::RigidRotation { omega, center } => {
                let c = match center {
                    Some(c) => *c,
                    None => need_disc("rigid_rotation")?.0,
                };
                BasisFlow::rigid_rotation(c, *omega)
            }
        };
        Ok(flow)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    /// `tanh((y - level) / width)`.
    Tanh {
        #[serde(default = "default_tanh_width")]
        width: f64,
        #[serde(default = "default_level")]
        level: f64,
    },
    /// `sin(2π k y)`.
    SineY {
        #[serde(default = "default_mode")]
        mode: u32,
    },
    /// `cos(π k x)`.
    CosineX {
        #[serde(default = "default_mode")]
        mode: u32,
    },
    /// `amplitude · exp(-|x - center|² / (2 width²))`.
    Gaussian {
        center: Point,
        width: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    Constant {
        value: f64,
    },
}

fn default_tanh_width() -> f64 {
    0.01
}

fn default_level() -> f64 {
    0.5
}

fn default_mode() -> u32 {
    1
}

impl InitialData {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        use std::f64::consts::PI;
        match *self {
            InitialData::Tanh { width, level } => ((y - level) / width).tanh(),
            InitialData::SineY { mode } => (2.0 * PI * mode as f64 * y).sin(),
            InitialData::CosineX { mode } => (PI * mode as f64 * x).cos(),
            InitialData::Gaussian { center, width, amplitude } => {
                let (dx, dy) = (x - center[0], y - center[1]);
                amplitude * (-(dx * dx + dy * dy) / (2.0 * width * width)).exp()
            }
            InitialData::Constant { value } => value,
        }
    }

    pub fn project(&self, mesh: &Arc<Mesh>) -> Result<StateVector> {
        match *self {
            InitialData::Tanh { width, .. } if !(width > 0.0) => return Err(Error::Config("initial.width must be positive".into())),
            InitialData::Gaussian { width, .. } if !(width > 0.0) => return Err(Error::Config("initial.width must be positive".into())),
            _ => {}
        }
        Ok(project_initial_data(mesh, |x, y| self.eval(x, y)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    pub t_final: f64,
    pub dt: f64,
}

impl TimeSpec {
    /// Number of steps; `dt` must divide `t_final` to within `1e-12`.
    pub fn n_steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("time.dt must be positive, got {}", self.dt)));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::Config(format!("time.t_final must be positive, got {}", self.t_final)));
        }
        let n = (self.t_final / self.dt).round();
        if (n * self.dt - self.t_final).abs() > 1e-12 * self.t_final.max(1.0) || n < 1.0 {
            return Err(Error::Config(format!("time.dt = {} does not divide time.t_final = {}", self.dt, self.t_final)));
        }
        Ok(n as usize)
    }
}

/// Schedule used by `simulate` and as the starting point of `optimize`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "initial_guess", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlSpec {
    /// All coefficients equal to one.
    #[default]
    Ones,
    Zero,
    /// `cos(πt/2)`, `sin(πt/2)`, zero for further modes.
    Trig,
    Constant { values: Vec<f64> },
    /// A schedule CSV; relative paths resolve against the config file.
    File { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub tol: f64,
    pub max_iter: usize,
    pub restart: usize,
    /// Memory for stored trajectories before checkpointing kicks in.
    pub memory_budget_mb: f64,
    pub method: KrylovMethod,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: 2000, restart: 50, memory_budget_mb: 1024.0, method: KrylovMethod::default() }
    }
}

impl SolverSpec {
    pub fn krylov(&self) -> KrylovConfig {
        KrylovConfig { tol: self.tol, max_iter: self.max_iter, restart: self.restart, method: self.method }
    }

    pub fn storage(&self) -> StoragePolicy {
        StoragePolicy::with_budget((self.memory_budget_mb * 1024.0 * 1024.0) as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub gamma: f64,
    pub adjoint_sampling: AdjointSampling,
}

impl Default for ObjectiveSpec {
    fn default() -> Self {
        Self { gamma: 1e-6, adjoint_sampling: AdjointSampling::Midpoint }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Mix-norm is sampled every `mix_stride` steps (and at the last step).
    pub mix_stride: usize,
    pub snapshot_times: Vec<f64>,
    /// Decay-fit window; defaults to `[0.1 T, T]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay_window: Option<[f64; 2]>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: None, mix_stride: 10, snapshot_times: Vec::new(), decay_window: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckSpec {
    /// Number of random schedules drawn.
    pub schedules: usize,
    /// Coefficients are drawn uniformly from `[-amplitude, amplitude]`.
    pub amplitude: f64,
    pub probes: Vec<f64>,
    /// Gate on the best probe's max relative error.
    pub threshold: f64,
}

impl Default for GradCheckSpec {
    fn default() -> Self {
        Self { schedules: 3, amplitude: 2.0, probes: vec![1e-4, 1e-5, 1e-6], threshold: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixProfile {
    /// `cos(πx)`, exact mix-norm `1/(√2 π)`.
    CosineX,
    /// `sin(2πy)`; not a Neumann eigenfunction, exact mix-norm `√3/(2√2 π)`.
    SineY,
}

/// Refinement studies run by the `convergence` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "study", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConvergenceSpec {
    /// Rigid rotation of a Gaussian bump on polar grids `n × n` with `Δt = cfl · h`.
    RigidRotation {
        grids: Vec<usize>,
        #[serde(default = "default_omega")]
        omega: f64,
        #[serde(default = "default_quarter")]
        t_final: f64,
        #[serde(default = "default_cfl")]
        cfl: f64,
        #[serde(default = "default_bump_center")]
        bump_center: Point,
        #[serde(default = "default_bump_width")]
        bump_width: f64,
        #[serde(default = "one")]
        min_order: f64,
    },
    /// Mix-norms of analytic profiles on Cartesian grids `n × n`.
    MixNorm {
        grids: Vec<usize>,
        profiles: Vec<MixProfile>,
        #[serde(default = "default_rel_tol")]
        rel_tol: f64,
        #[serde(default = "one")]
        min_order: f64,
    },
}

fn default_omega() -> f64 {
    2.0 * std::f64::consts::PI
}

fn default_quarter() -> f64 {
    0.25
}

fn default_cfl() -> f64 {
    0.5
}

fn default_bump_center() -> Point {
    [0.75, 0.5]
}

fn default_bump_width() -> f64 {
    0.08
}

fn default_rel_tol() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh: Option<MeshKind>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub basis: Vec<BasisSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialData>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<TimeSpec>,
    #[serde(default)]
    pub control: ControlSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub objective: ObjectiveSpec,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub gradcheck: GradCheckSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceSpec>,
    /// Directory of the file this was read from; used for relative paths.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut config = Self::from_toml_str(&text)?;
        config.base_dir = path.parent().map(Path::to_path_buf);
        Ok(config)
    }

    /// Checks everything that can be checked without building the mesh.
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = &self.time {
            t.n_steps()?;
        }
        if !(self.solver.tol > 0.0) {
            return Err(Error::Config("solver.tol must be positive".into()));
        }
        if self.solver.max_iter == 0 || self.solver.restart == 0 {
            return Err(Error::Config("solver.max_iter and solver.restart must be positive".into()));
        }
        if !(self.solver.memory_budget_mb > 0.0) {
            return Err(Error::Config("solver.memory_budget_mb must be positive".into()));
        }
        if !(self.objective.gamma >= 0.0) || !self.objective.gamma.is_finite() {
            return Err(Error::Config("objective.gamma must be non-negative".into()));
        }
        self.optimizer.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.output.mix_stride == 0 {
            return Err(Error::Config("output.mix_stride must be positive".into()));
        }
        if self.output.snapshot_times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::Config("output.snapshot_times must be non-negative".into()));
        }
        if let Some([a, b]) = self.output.decay_window {
            if !(a < b) {
                return Err(Error::Config("output.decay_window must be increasing".into()));
            }
        }
        if self.gradcheck.probes.iter().any(|p| !(*p > 0.0)) || self.gradcheck.probes.is_empty() {
            return Err(Error::Config("gradcheck.probes must be a non-empty list of positive numbers".into()));
        }
        if let ControlSpec::Constant { values } = &self.control {
            if !self.basis.is_empty() && values.len() != self.basis.len() {
                return Err(Error::Config(format!("control.values has {} entries for {} basis flows", values.len(), self.basis.len())));
            }
        }
        match &self.convergence {
            Some(ConvergenceSpec::RigidRotation { grids, cfl, bump_width, .. }) => {
                if grids.len() < 2 || !(*cfl > 0.0) || !(*bump_width > 0.0) {
                    return Err(Error::Config("convergence needs at least two grids and positive cfl and bump_width".into()));
                }
            }
            Some(ConvergenceSpec::MixNorm { grids, profiles, .. }) => {
                if grids.len() < 2 || profiles.is_empty() {
                    return Err(Error::Config("convergence needs at least two grids and one profile".into()));
                }
            }
            None => {}
        }
        Ok(())
    }

    fn require<'a, T>(field: &'a Option<T>, name: &str) -> Result<&'a T> {
        field.as_ref().ok_or_else(|| Error::Config(format!("missing [{name}] section")))
    }

    /// Builds mesh, basis, initial state and schedule.
    pub fn build(&self) -> Result<Scenario> {
        let kind = *Self::require(&self.mesh, "mesh")?;
        let initial = Self::require(&self.initial, "initial")?;
        let time = *Self::require(&self.time, "time")?;
        if self.basis.is_empty() {
            return Err(Error::Config("missing [[basis]] entries".into()));
        }
        let mesh = Arc::new(kind.build()?);
        let flows = self.basis.iter().map(|b| b.build(&kind)).collect::<Result<Vec<_>>>()?;
        let theta0 = initial.project(&mesh)?;
        let schedule = self.initial_schedule(time, flows.len())?;
        Ok(Scenario { mesh, flows, theta0, schedule })
    }

    fn initial_schedule(&self, time: TimeSpec, m: usize) -> Result<ControlSchedule> {
        let n = time.n_steps()?;
        let dt = time.t_final / n as f64;
        match &self.control {
            ControlSpec::Ones => ControlSchedule::constant(dt, n, &vec![1.0; m]),
            ControlSpec::Zero => ControlSchedule::zeros(dt, n, m),
            ControlSpec::Trig => ControlSchedule::trig(dt, n, m),
            ControlSpec::Constant { values } => {
                if values.len() != m {
                    return Err(Error::Config(format!("control.values has {} entries for {m} basis flows", values.len())));
                }
                ControlSchedule::constant(dt, n, values)
            }
            ControlSpec::File { path } => {
                let path = match &self.base_dir {
                    Some(base) if path.is_relative() => base.join(path),
                    _ => path.clone(),
                };
                let text = std::fs::read_to_string(&path)?;
                let schedule = super::schedule_io::parse_schedule_csv(&text)?;
                if schedule.num_modes() != m || schedule.num_steps() != n || (schedule.dt - dt).abs() > 1e-12 * dt {
                    return Err(Error::Config(format!(
                        "schedule file {} has {} modes × {} steps of {}; the scenario needs {m} × {n} of {dt}",
                        path.display(),
                        schedule.num_modes(),
                        schedule.num_steps(),
                        schedule.dt
                    )));
                }
                Ok(schedule)
            }
        }
    }
}

/// A fully built scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub mesh: Arc<Mesh>,
    pub flows: Vec<BasisFlow>,
    pub theta0: StateVector,
    pub schedule: ControlSchedule,
}
