//! JSON artifact schema. Every artifact carries a header tying it to the
//! scenario bytes it was computed from.

use std::path::Path;

use anyhow::Context;
use chance_nav_core::numerics::{from_rows, to_rows};
use chance_nav_core::scenario::LandmarkChoice;
use chance_nav_core::sim::MonteCarloStats;
use chance_nav_core::synthesis::VertexReport;
use chance_nav_core::{
    Landmark, OutputFeedbackController, SimConfig, SolveReport, SolveStatus, SpdMatrix, TighteningMode,
    VirtualLandmark,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const ARTIFACT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub schema_version: u32,
    pub kind: String,
    pub scenario: String,
    pub scenario_sha256: String,
}

impl Header {
    pub fn new(kind: &str, scenario: &str, bytes: &[u8]) -> Self {
        Self {
            schema_version: ARTIFACT_SCHEMA_VERSION,
            kind: kind.to_string(),
            scenario: scenario.to_string(),
            scenario_sha256: sha256_hex(bytes),
        }
    }

    fn check(&self, kind: &str) -> anyhow::Result<()> {
        anyhow::ensure!(
            self.schema_version == ARTIFACT_SCHEMA_VERSION,
            "artifact schema_version {} is not {ARTIFACT_SCHEMA_VERSION}",
            self.schema_version
        );
        anyhow::ensure!(self.kind == kind, "expected a `{kind}` artifact, found `{}`", self.kind);
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub trait Artifact: Serialize + DeserializeOwned {
    const KIND: &'static str;
    fn header(&self) -> &Header;
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_artifact<T: Artifact>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: T = serde_json::from_str(&text).map_err(|e| {
        anyhow::anyhow!("{}: line {} column {}: {e}", path.display(), e.line(), e.column())
    })?;
    value.header().check(T::KIND)?;
    Ok(value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VirtualLandmarkRecord {
    pub id: String,
    pub weights: Vec<Vec<Vec<f64>>>,
    pub position: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    /// `Sigma_W <= Sigma_i` in the Loewner order for every source landmark.
    pub below_every_source: bool,
}

impl VirtualLandmarkRecord {
    pub fn new(id: &str, vl: &VirtualLandmark, sources: &[Landmark]) -> Self {
        Self {
            id: id.to_string(),
            weights: vl.weights.iter().map(to_rows).collect(),
            position: vl.position.iter().copied().collect(),
            covariance: to_rows(vl.covariance.matrix()),
            below_every_source: sources.iter().all(|l| vl.covariance.loewner_le(&l.covariance, 1e-12)),
        }
    }

    pub fn to_virtual(&self) -> anyhow::Result<VirtualLandmark> {
        Ok(VirtualLandmark {
            weights: self.weights.iter().map(|w| from_rows(w)).collect::<Result<_, _>>()?,
            position: chance_nav_core::Vector::from_vec(self.position.clone()),
            covariance: SpdMatrix::named(from_rows(&self.covariance)?, &format!("covariance of `{}`", self.id))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuseArtifact {
    pub header: Header,
    pub cell: String,
    pub landmark_ids: Vec<String>,
    pub method: String,
    pub kbar2: Option<Vec<f64>>,
    pub virtual_landmarks: Vec<VirtualLandmarkRecord>,
}

impl Artifact for FuseArtifact {
    const KIND: &'static str = "fuse";
    fn header(&self) -> &Header {
        &self.header
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSummary {
    pub status: SolveStatus,
    pub objective_value: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub max_violation: f64,
    pub most_violated: String,
}

impl From<&SolveReport> for SolverSummary {
    fn from(r: &SolveReport) -> Self {
        Self {
            status: r.status,
            objective_value: r.objective_value,
            kkt_residual: r.kkt_residual,
            iterations: r.iterations,
            max_violation: r.max_violation,
            most_violated: r.most_violated.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerArtifact {
    pub header: Header,
    pub cell: String,
    pub landmarks: LandmarkChoice,
    pub eta0: f64,
    pub mode: TighteningMode,
    pub controller: OutputFeedbackController,
    pub virtual_landmark: Option<VirtualLandmarkRecord>,
    /// Absent when the controller was remixed rather than solved.
    pub solver: Option<SolverSummary>,
    pub verification: VertexReport,
}

impl Artifact for ControllerArtifact {
    const KIND: &'static str = "controller";
    fn header(&self) -> &Header {
        &self.header
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimArtifact {
    pub header: Header,
    pub label: String,
    pub cell: String,
    pub config: SimConfig,
    pub stats: MonteCarloStats,
}

impl Artifact for SimArtifact {
    const KIND: &'static str = "simulation";
    fn header(&self) -> &Header {
        &self.header
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareRow {
    pub label: String,
    pub stats: MonteCarloStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareArtifact {
    pub header: Header,
    pub cell: String,
    pub config: SimConfig,
    pub rows: Vec<CompareRow>,
}

impl Artifact for CompareArtifact {
    const KIND: &'static str = "compare";
    fn header(&self) -> &Header {
        &self.header
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanStep {
    pub from: String,
    pub to: String,
    pub face: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanArtifact {
    pub header: Header,
    pub route: Vec<String>,
    pub steps: Vec<PlanStep>,
}

impl Artifact for PlanArtifact {
    const KIND: &'static str = "plan";
    fn header(&self) -> &Header {
        &self.header
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// One line per controller: exit time, jitter and violation statistics.
pub fn stats_csv(rows: &[CompareRow]) -> String {
    let mut out = String::from(
        "label,trials,collisions,exits,timeouts,violation_rate,violation_stderr,median_exit_time,mean_exit_time,std_exit_time,median_jitter,mean_jitter\n",
    );
    for r in rows {
        let s = &r.stats;
        out.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.6},{},{},{},{},{}\n",
            r.label,
            s.trials,
            s.collisions,
            s.exits,
            s.timeouts,
            s.violation_rate,
            s.violation_stderr,
            fmt_opt(s.median_exit_time),
            fmt_opt(s.mean_exit_time),
            fmt_opt(s.std_exit_time),
            fmt_opt(Some(s.median_jitter)),
            fmt_opt(Some(s.mean_jitter)),
        ));
    }
    out
}
