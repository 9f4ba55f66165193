//! Scenario files: system, cells, landmarks, chance settings and simulation
//! defaults in one JSON document. Lengths are meters and times seconds.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::geometry::{ConvexCell, Environment};
use crate::landmarks::{fuse_min_variance, Landmark, VirtualLandmark};
use crate::numerics::{from_rows, to_rows, SpdMatrix};
use crate::safety::{ChanceSpec, LinearSystem, TighteningMode, WallBarrier, DEFAULT_ETA0};
use crate::sim::SimConfig;
use crate::synthesis::{ExitSpec, SynthesisProblem};
use crate::Vector;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExitFile {
    pub face: usize,
    #[serde(default)]
    pub gains: Option<Vec<f64>>,
    /// Minimum progress rate towards the exit face (m/s); defaults to a
    /// tenth of the cell's inscribed diameter per second.
    #[serde(default)]
    pub margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellFile {
    pub id: String,
    /// Face normals, one row per face; the cell is `a x + b <= 0`.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    #[serde(default)]
    pub landmarks: Vec<String>,
    #[serde(default)]
    pub exit: Option<ExitFile>,
    #[serde(default)]
    pub wall_gains: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkFile {
    pub id: String,
    pub position: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChanceFile {
    #[serde(default = "default_eta0")]
    pub eta0: f64,
    #[serde(default)]
    pub mode: TighteningMode,
}

fn default_eta0() -> f64 {
    DEFAULT_ETA0
}

impl Default for ChanceFile {
    fn default() -> Self {
        Self {
            eta0: DEFAULT_ETA0,
            mode: TighteningMode::Variance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisFile {
    #[serde(default = "one")]
    pub objective_weight: f64,
    #[serde(default)]
    pub wall_margin: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for SynthesisFile {
    fn default() -> Self {
        Self {
            objective_weight: 1.0,
            wall_margin: 0.0,
        }
    }
}

/// On-disk form of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub name: String,
    pub system: SystemFile,
    pub cells: Vec<CellFile>,
    pub landmarks: Vec<LandmarkFile>,
    pub start: Vec<f64>,
    pub start_cell: String,
    #[serde(default)]
    pub goal_cell: Option<String>,
    #[serde(default)]
    pub chance: ChanceFile,
    #[serde(default)]
    pub synthesis: SynthesisFile,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub output_dir: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandmarkChoice {
    Physical,
    Virtual,
}

impl std::str::FromStr for LandmarkChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "physical" => Ok(Self::Physical),
            "virtual" => Ok(Self::Virtual),
            other => Err(Error::Config(format!("unknown landmark choice `{other}` (physical|virtual)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CellSettings {
    pub exit: Option<ExitSpec>,
    pub wall_gains: Option<Vec<f64>>,
}

/// A fully validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub system: LinearSystem,
    pub environment: Environment,
    pub landmarks: Vec<Landmark>,
    pub cells: BTreeMap<String, CellSettings>,
    pub start: Vector,
    pub start_cell: String,
    pub goal_cell: Option<String>,
    pub chance: ChanceSpec,
    pub synthesis: SynthesisFile,
    pub sim: SimConfig,
    pub output_dir: Option<String>,
}

fn ctx<T>(what: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Config(format!("{what}: {e}")))
}

impl Scenario {
    /// Parses and validates; JSON syntax errors carry line and column.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| {
            Error::Config(format!("malformed scenario at line {} column {}: {e}", e.line(), e.column()))
        })?;
        Self::from_file(file)
    }

    pub fn from_file(file: ScenarioFile) -> Result<Self> {
        if file.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                file.schema_version
            )));
        }
        let a = ctx("system.a", from_rows(&file.system.a))?;
        let b = ctx("system.b", from_rows(&file.system.b))?;
        let system = ctx("system", LinearSystem::new(a, b))?;
        let n = system.state_dim();

        let mut landmarks = Vec::new();
        for l in &file.landmarks {
            let what = format!("landmark `{}`", l.id);
            let cov = ctx(&what, from_rows(&l.covariance))?;
            let cov = ctx(&what, SpdMatrix::named(cov, &format!("covariance of landmark `{}`", l.id)))?;
            let lm = ctx(&what, Landmark::new(l.id.clone(), Vector::from_vec(l.position.clone()), cov))?;
            ctx(&what, check_dim("landmark dimension", n, lm.dim()))?;
            if landmarks.iter().any(|x: &Landmark| x.id == l.id) {
                return Err(Error::Config(format!("duplicate landmark id `{}`", l.id)));
            }
            landmarks.push(lm);
        }

        let mut cells = Vec::new();
        let mut per_cell = BTreeMap::new();
        let mut settings = BTreeMap::new();
        for c in &file.cells {
            let what = format!("cell `{}`", c.id);
            let a = ctx(&what, from_rows(&c.a))?;
            let cell = ctx(&what, ConvexCell::new(c.id.clone(), a, Vector::from_vec(c.b.clone())))?;
            ctx(&what, check_dim("cell dimension", n, cell.dim()))?;
            for id in &c.landmarks {
                if !landmarks.iter().any(|l| &l.id == id) {
                    return Err(Error::Config(format!("{what} references unknown landmark `{id}`")));
                }
            }
            let exit = match &c.exit {
                Some(e) => {
                    if e.face >= cell.num_faces() {
                        return Err(Error::Config(format!("{what}: exit face {} out of range", e.face)));
                    }
                    let width = 2.0 * cell.chebyshev_ball().map_or(0.0, |(_, r)| r);
                    let gains = e.gains.clone().unwrap_or_else(|| vec![1.0]);
                    let spec = ExitSpec {
                        face: e.face,
                        gains,
                        margin: e.margin.unwrap_or(0.1 * width),
                    };
                    Some(spec)
                }
                None => None,
            };
            if let Some(g) = &c.wall_gains {
                for f in 0..cell.num_faces() {
                    if exit.as_ref().is_some_and(|e| e.face == f) {
                        continue;
                    }
                    ctx(&what, WallBarrier::from_cell_face(&system, &cell.face(f), Some(g.clone())))?;
                }
            }
            per_cell.insert(c.id.clone(), c.landmarks.clone());
            settings.insert(
                c.id.clone(),
                CellSettings {
                    exit,
                    wall_gains: c.wall_gains.clone(),
                },
            );
            cells.push(cell);
        }
        let environment = Environment::new(cells, per_cell)?;

        let start = Vector::from_vec(file.start.clone());
        ctx("start", check_dim("start dimension", n, start.len()))?;
        let start_cell = environment.cell(&file.start_cell)?;
        if !start_cell.contains(&start)? {
            return Err(Error::Config(format!("start lies outside cell `{}`", file.start_cell)));
        }
        if let Some(g) = &file.goal_cell {
            environment.cell(g)?;
        }
        let chance = ctx("chance", ChanceSpec::new(file.chance.eta0, file.chance.mode))?;
        ctx("sim", file.sim.validate())?;
        if !(file.synthesis.objective_weight > 0.0) || !(file.synthesis.wall_margin >= 0.0) {
            return Err(Error::Config("synthesis weights must be positive and margins nonnegative".into()));
        }
        Ok(Self {
            name: file.name,
            system,
            environment,
            landmarks,
            cells: settings,
            start,
            start_cell: file.start_cell,
            goal_cell: file.goal_cell,
            chance,
            synthesis: file.synthesis,
            sim: file.sim,
            output_dir: file.output_dir,
        })
    }

    pub fn landmark(&self, id: &str) -> Result<&Landmark> {
        self.landmarks
            .iter()
            .find(|l| l.id == id)
            .ok_or_else(|| Error::Config(format!("unknown landmark `{id}`")))
    }

    /// Landmarks assigned to `cell`, in file order.
    pub fn cell_landmarks(&self, cell: &str) -> Result<Vec<Landmark>> {
        self.environment
            .landmarks_of(cell)?
            .iter()
            .map(|id| self.landmark(id).cloned())
            .collect()
    }

    /// Inverse-variance fusion of the cell's landmarks.
    pub fn virtual_landmark(&self, cell: &str) -> Result<VirtualLandmark> {
        let ls = self.cell_landmarks(cell)?;
        if ls.is_empty() {
            return Err(Error::Config(format!("cell `{cell}` has no landmarks")));
        }
        fuse_min_variance(&ls)
    }

    /// Identifier used for the fused landmark of `cell`.
    pub fn virtual_id(cell: &str) -> String {
        format!("{cell}:virtual")
    }

    /// Exit of `cell`: the configured one, else the face shared with the
    /// next cell on the planned route to the goal.
    pub fn exit_for(&self, cell: &str) -> Result<Option<ExitSpec>> {
        let settings = self
            .cells
            .get(cell)
            .ok_or_else(|| Error::UnknownCell(cell.to_string()))?;
        if let Some(e) = &settings.exit {
            return Ok(Some(e.clone()));
        }
        let Some(goal) = &self.goal_cell else { return Ok(None) };
        let route = self.environment.plan_route(cell, goal)?;
        let Some(next) = route.get(1) else { return Ok(None) };
        let face = self.environment.shared_face(cell, next)?.expect("route steps are adjacent");
        let c = self.environment.cell(cell)?;
        let width = 2.0 * c.chebyshev_ball().map_or(0.0, |(_, r)| r);
        Ok(Some(ExitSpec {
            face,
            gains: vec![1.0],
            margin: 0.1 * width,
        }))
    }

    pub fn problem(&self, cell: &str, choice: LandmarkChoice, chance: ChanceSpec) -> Result<SynthesisProblem> {
        let c = self.environment.cell(cell)?.clone();
        let exit = self.exit_for(cell)?;
        let landmarks = match choice {
            LandmarkChoice::Physical => self.cell_landmarks(cell)?,
            LandmarkChoice::Virtual => vec![self.virtual_landmark(cell)?.as_landmark(Self::virtual_id(cell))],
        };
        if landmarks.is_empty() {
            return Err(Error::Config(format!("cell `{cell}` has no landmarks")));
        }
        let gains = self.cells[cell].wall_gains.clone();
        let exit_face = exit.as_ref().map(|e| e.face);
        let walls = (0..c.num_faces())
            .filter(|f| Some(*f) != exit_face)
            .map(|f| WallBarrier::from_cell_face(&self.system, &c.face(f), gains.clone()))
            .collect::<Result<Vec<_>>>()?;
        SynthesisProblem::new(self.system.clone(), c, walls, exit, landmarks, chance)?
            .with_objective_weight(self.synthesis.objective_weight)?
            .with_wall_margin(self.synthesis.wall_margin)
    }

    /// Writes the scenario back in file form.
    pub fn to_file(&self) -> ScenarioFile {
        let cells = self
            .environment
            .cells()
            .iter()
            .map(|c| {
                let s = &self.cells[c.id()];
                CellFile {
                    id: c.id().to_string(),
                    a: to_rows(c.a()),
                    b: c.b().iter().copied().collect(),
                    landmarks: self.environment.landmarks_of(c.id()).unwrap_or(&[]).to_vec(),
                    exit: s.exit.as_ref().map(|e| ExitFile {
                        face: e.face,
                        gains: Some(e.gains.clone()),
                        margin: Some(e.margin),
                    }),
                    wall_gains: s.wall_gains.clone(),
                }
            })
            .collect();
        ScenarioFile {
            schema_version: SCHEMA_VERSION,
            name: self.name.clone(),
            system: SystemFile {
                a: to_rows(self.system.a()),
                b: to_rows(self.system.b()),
            },
            cells,
            landmarks: self
                .landmarks
                .iter()
                .map(|l| LandmarkFile {
                    id: l.id.clone(),
                    position: l.position.iter().copied().collect(),
                    covariance: to_rows(l.covariance.matrix()),
                })
                .collect(),
            start: self.start.iter().copied().collect(),
            start_cell: self.start_cell.clone(),
            goal_cell: self.goal_cell.clone(),
            chance: ChanceFile {
                eta0: self.chance.eta0(),
                mode: self.chance.mode(),
            },
            synthesis: self.synthesis.clone(),
            sim: self.sim.clone(),
            output_dir: self.output_dir.clone(),
        }
    }
}
