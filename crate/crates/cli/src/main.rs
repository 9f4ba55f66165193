//! `chance-nav`: scenario validation, landmark fusion, controller synthesis
//! and Monte Carlo comparison from the command line.

mod artifacts;
mod svg;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use chance_nav_core::landmarks::{fuse_min_variance, lme_sequence};
use chance_nav_core::numerics::from_rows;
use chance_nav_core::scenario::{LandmarkChoice, Scenario};
use chance_nav_core::sim::{run_trials, summarize, Setup, TrajectoryRecord};
use chance_nav_core::synthesis::{synthesize, update_on_new_covariance, verify_at_vertices};
use chance_nav_core::{ChanceSpec, Error as CoreError, Landmark, SpdMatrix, TighteningMode, Vector};
use clap::{Args, Parser, Subcommand};

use artifacts::*;
use svg::{Marker, Pane, Path as SvgPath, PHYSICAL_COLOR, VIRTUAL_COLOR};

const EXIT_VALIDATION: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_RUNTIME: u8 = 4;
/// Trajectories drawn per plot.
const PLOTTED_TRAJECTORIES: usize = 20;

#[derive(Parser)]
#[command(name = "chance-nav", version, about = "Chance-constrained navigation with virtual landmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory; defaults to the scenario's `output_dir` or `out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ChanceArgs {
    #[arg(long)]
    eta0: Option<f64>,
    #[arg(long)]
    mode: Option<TighteningMode>,
}

#[derive(Args, Clone)]
struct SimArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and check a scenario.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Route from the start cell to the goal cell.
    Plan {
        #[command(flatten)]
        common: Common,
    },
    /// Fuse a cell's landmarks into virtual landmarks.
    Fuse {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cell: Option<String>,
        /// Number of uncorrelated virtual landmarks.
        #[arg(long)]
        lme: Option<usize>,
        /// Control direction for the sequence, e.g. `1,0`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        kbar2: Option<Vec<f64>>,
    },
    /// Design a controller for one cell.
    Synthesize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cell: Option<String>,
        #[arg(long, default_value = "virtual")]
        landmarks: LandmarkChoice,
        #[command(flatten)]
        chance: ChanceArgs,
    },
    /// Monte Carlo runs of one controller.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Controller artifact; synthesized on the fly when omitted.
        #[arg(long)]
        controller: Option<PathBuf>,
        #[arg(long)]
        cell: Option<String>,
        #[arg(long, default_value = "virtual")]
        landmarks: LandmarkChoice,
        #[command(flatten)]
        chance: ChanceArgs,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Physical versus virtual landmarks (or given controllers) on matched seeds.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        controller: Vec<PathBuf>,
        #[arg(long)]
        cell: Option<String>,
        #[command(flatten)]
        chance: ChanceArgs,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Remix a virtual-landmark controller for new landmark covariances.
    UpdateCovariance {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        controller: PathBuf,
        /// JSON object mapping landmark ids to covariance matrices.
        #[arg(long)]
        covariances: PathBuf,
    },
}

/// Scenario failures that map to the validation exit code.
#[derive(Debug)]
struct ValidationFailure(String);

impl std::fmt::Display for ValidationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ValidationFailure {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ValidationFailure>().is_some() {
            return EXIT_VALIDATION;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::SynthesisInfeasible { .. }
                | CoreError::Infeasible(_)
                | CoreError::TooManyVirtualLandmarks { .. }
                | CoreError::Unreachable { .. } => EXIT_INFEASIBLE,
                _ => EXIT_RUNTIME,
            };
        }
    }
    EXIT_RUNTIME
}

struct Loaded {
    scenario: Scenario,
    bytes: Vec<u8>,
    out: PathBuf,
}

impl Loaded {
    fn header(&self, kind: &str) -> Header {
        Header::new(kind, &self.scenario.name, &self.bytes)
    }

    fn cell(&self, cell: &Option<String>) -> String {
        cell.clone().unwrap_or_else(|| self.scenario.start_cell.clone())
    }

    fn chance(&self, args: &ChanceArgs) -> anyhow::Result<ChanceSpec> {
        let eta0 = args.eta0.unwrap_or(self.scenario.chance.eta0());
        let mode = args.mode.unwrap_or(self.scenario.chance.mode());
        ChanceSpec::new(eta0, mode).map_err(|e| ValidationFailure(e.to_string()).into())
    }

    fn sim_config(&self, args: &SimArgs) -> chance_nav_core::SimConfig {
        let mut c = self.scenario.sim.clone();
        if let Some(s) = args.seed {
            c.seed = s;
        }
        if let Some(t) = args.trials {
            c.trials = t;
        }
        c
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn read_scenario(path: &Path) -> anyhow::Result<(Scenario, Vec<u8>)> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| ValidationFailure(format!("{}: not valid UTF-8", path.display())))?;
    let scenario =
        Scenario::from_json_str(&text).map_err(|e| ValidationFailure(format!("{}: {e}", path.display())))?;
    Ok((scenario, bytes))
}

fn load(common: &Common) -> anyhow::Result<Loaded> {
    let (scenario, bytes) = read_scenario(&common.scenario)?;
    let out = common
        .out
        .clone()
        .or_else(|| scenario.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok(Loaded { scenario, bytes, out })
}

fn physical_markers(ls: &[Landmark]) -> Vec<Marker> {
    ls.iter()
        .map(|l| Marker {
            label: l.id.clone(),
            position: l.position.clone(),
            covariance: l.covariance.matrix().clone(),
            color: PHYSICAL_COLOR,
        })
        .collect()
}

fn validate(path: &Path) -> anyhow::Result<()> {
    let (s, _) = read_scenario(path)?;
    println!("scenario `{}`: valid", s.name);
    println!("  system: {} states, {} inputs", s.system.state_dim(), s.system.input_dim());
    for c in s.environment.cells() {
        let exit = s.exit_for(c.id())?;
        println!(
            "  cell `{}`: {} faces, landmarks [{}], exit {}",
            c.id(),
            c.num_faces(),
            s.environment.landmarks_of(c.id())?.join(", "),
            exit.map_or("none".to_string(), |e| format!("face {} (margin {:.3})", e.face, e.margin))
        );
    }
    for l in &s.landmarks {
        println!(
            "  landmark `{}`: condition number {:.3}",
            l.id,
            l.covariance.condition_number()
        );
    }
    println!(
        "  chance: eta0 {} mode {:?}; sim: dt {} trials {} seed {}",
        s.chance.eta0(),
        s.chance.mode(),
        s.sim.dt,
        s.sim.trials,
        s.sim.seed
    );
    Ok(())
}

fn plan(l: &Loaded) -> anyhow::Result<()> {
    let s = &l.scenario;
    let goal = s.goal_cell.clone().unwrap_or_else(|| s.start_cell.clone());
    let route = s.environment.plan_route(&s.start_cell, &goal)?;
    let mut steps = Vec::new();
    for w in route.windows(2) {
        let face = s.environment.shared_face(&w[0], &w[1])?.ok_or_else(|| anyhow!("route step is not adjacent"))?;
        steps.push(PlanStep {
            from: w[0].clone(),
            to: w[1].clone(),
            face,
        });
    }
    let mut pane = Pane::new(format!("route {}", route.join(" -> ")));
    for c in s.environment.cells() {
        let exit = steps.iter().find(|p| p.from == c.id()).map(|p| p.face);
        pane.cell(c, exit)?;
    }
    pane.markers = physical_markers(&s.landmarks);
    write_json(
        &l.path("plan.json"),
        &PlanArtifact {
            header: l.header(PlanArtifact::KIND),
            route: route.clone(),
            steps,
        },
    )?;
    std::fs::write(l.path("plan.svg"), svg::render(&[pane]))?;
    println!("route: {}", route.join(" -> "));
    Ok(())
}

fn fuse(l: &Loaded, cell: &str, lme: Option<usize>, kbar2: Option<Vec<f64>>) -> anyhow::Result<()> {
    let s = &l.scenario;
    let sources = s.cell_landmarks(cell)?;
    anyhow::ensure!(!sources.is_empty(), ValidationFailure(format!("cell `{cell}` has no landmarks")));
    let (method, vls) = match lme {
        None => ("min_variance".to_string(), vec![fuse_min_variance(&sources)?]),
        Some(count) => {
            let dir = kbar2.clone().unwrap_or_else(|| {
                let mut v = vec![0.0; s.system.state_dim()];
                v[0] = 1.0;
                v
            });
            anyhow::ensure!(
                dir.len() == s.system.state_dim(),
                ValidationFailure(format!("--kbar2 needs {} entries", s.system.state_dim()))
            );
            ("lme".to_string(), lme_sequence(&sources, &Vector::from_vec(dir), count, None)?)
        }
    };
    let records: Vec<VirtualLandmarkRecord> = vls
        .iter()
        .enumerate()
        .map(|(i, vl)| VirtualLandmarkRecord::new(&format!("{cell}:virtual{i}"), vl, &sources))
        .collect();
    for r in &records {
        println!(
            "{}: position {:?}, covariance below every physical landmark (Loewner): {}",
            r.id, r.position, r.below_every_source
        );
    }
    let mut pane = Pane::new(format!("cell {cell}: physical (blue) and virtual (red) landmarks"));
    pane.cell(s.environment.cell(cell)?, None)?;
    pane.markers = physical_markers(&sources);
    for (r, vl) in records.iter().zip(&vls) {
        pane.markers.push(Marker {
            label: r.id.clone(),
            position: vl.position.clone(),
            covariance: vl.covariance.matrix().clone(),
            color: VIRTUAL_COLOR,
        });
    }
    let stem = match (lme, &kbar2) {
        (None, _) => format!("fuse_{}", sanitize(cell)),
        (Some(n), None) => format!("fuse_{}_lme{n}", sanitize(cell)),
        (Some(n), Some(k)) => {
            let dir: Vec<String> = k.iter().map(|v| format!("{v}")).collect();
            format!("fuse_{}_lme{n}_k{}", sanitize(cell), sanitize(&dir.join("_")))
        }
    };
    write_json(
        &l.path(&format!("{stem}.json")),
        &FuseArtifact {
            header: l.header(FuseArtifact::KIND),
            cell: cell.to_string(),
            landmark_ids: sources.iter().map(|x| x.id.clone()).collect(),
            method,
            kbar2,
            virtual_landmarks: records,
        },
    )?;
    std::fs::write(l.path(&format!("{stem}.svg")), svg::render(&[pane]))?;
    Ok(())
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

fn choice_name(c: LandmarkChoice) -> &'static str {
    match c {
        LandmarkChoice::Physical => "physical",
        LandmarkChoice::Virtual => "virtual",
    }
}

fn design(l: &Loaded, cell: &str, choice: LandmarkChoice, spec: ChanceSpec) -> anyhow::Result<ControllerArtifact> {
    let s = &l.scenario;
    let problem = s.problem(cell, choice, spec)?;
    let result = synthesize(&problem)?;
    let virtual_landmark = match choice {
        LandmarkChoice::Virtual => Some(VirtualLandmarkRecord::new(
            &Scenario::virtual_id(cell),
            &s.virtual_landmark(cell)?,
            &s.cell_landmarks(cell)?,
        )),
        LandmarkChoice::Physical => None,
    };
    Ok(ControllerArtifact {
        header: l.header(ControllerArtifact::KIND),
        cell: cell.to_string(),
        landmarks: choice,
        eta0: spec.eta0(),
        mode: spec.mode(),
        controller: result.controller,
        virtual_landmark,
        solver: Some(SolverSummary::from(&result.solve)),
        verification: result.verification,
    })
}

fn synthesize_cmd(l: &Loaded, cell: &str, choice: LandmarkChoice, spec: ChanceSpec) -> anyhow::Result<()> {
    let art = design(l, cell, choice, spec)?;
    let path = l.path(&format!("controller_{}_{}.json", sanitize(cell), choice_name(choice)));
    write_json(&path, &art)?;
    println!(
        "controller written to {}; objective {:.6}, worst vertex surrogate {:.3e} ({})",
        path.display(),
        art.controller.frobenius_sq(),
        art.verification.max_violation,
        art.verification.worst_constraint
    );
    Ok(())
}

/// Landmarks a controller artifact acts on.
fn controller_landmarks(l: &Loaded, art: &ControllerArtifact) -> anyhow::Result<Vec<Landmark>> {
    match (&art.virtual_landmark, art.landmarks) {
        (Some(v), LandmarkChoice::Virtual) => Ok(vec![v.to_virtual()?.as_landmark(v.id.clone())]),
        _ => art
            .controller
            .landmark_ids
            .iter()
            .map(|id| l.scenario.landmark(id).cloned().map_err(Into::into))
            .collect(),
    }
}

fn run(
    l: &Loaded,
    art: &ControllerArtifact,
    config: &chance_nav_core::SimConfig,
) -> anyhow::Result<Vec<TrajectoryRecord>> {
    let s = &l.scenario;
    let landmarks = controller_landmarks(l, art)?;
    art.controller.check_landmarks(&landmarks)?;
    let cell = s.environment.cell(&art.cell)?;
    let exit = s.exit_for(&art.cell)?;
    let start = if cell.contains(&s.start)? { s.start.clone() } else { cell.center() };
    let setup = Setup {
        cell,
        exit_face: exit.map(|e| e.face),
        system: &s.system,
        controller: &art.controller,
        landmarks: &landmarks,
        start: &start,
    };
    Ok(run_trials(&setup, config)?)
}

fn trajectory_pane(l: &Loaded, art: &ControllerArtifact, label: &str, records: &[TrajectoryRecord]) -> anyhow::Result<Pane> {
    let s = &l.scenario;
    let stats = summarize(records);
    let mut pane = Pane::new(format!("{label}: {} landmarks", choice_name(art.landmarks)));
    let exit = s.exit_for(&art.cell)?.map(|e| e.face);
    pane.cell(s.environment.cell(&art.cell)?, exit)?;
    match &art.virtual_landmark {
        Some(v) if art.landmarks == LandmarkChoice::Virtual => {
            let vl = v.to_virtual()?;
            pane.markers.push(Marker {
                label: v.id.clone(),
                position: vl.position,
                covariance: vl.covariance.matrix().clone(),
                color: VIRTUAL_COLOR,
            });
        }
        _ => pane.markers = physical_markers(&controller_landmarks(l, art)?),
    }
    for r in records.iter().take(PLOTTED_TRAJECTORIES) {
        pane.paths.push(SvgPath {
            points: r.states.iter().map(|x| svg::planar(&Vector::from_vec(x.clone()))).collect(),
            exit_time: r.exit_time,
            collided: r.collided,
        });
    }
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3}"));
    pane.notes.push(format!(
        "median exit time {} s, median jitter {}, collisions {}/{}",
        fmt(stats.median_exit_time),
        fmt(Some(stats.median_jitter)),
        stats.collisions,
        stats.trials
    ));
    Ok(pane)
}

fn trajectories_csv(records: &[TrajectoryRecord]) -> String {
    let mut out = String::from("trial,seed,exit_time,collided,jitter,steps\n");
    for (i, r) in records.iter().enumerate() {
        out.push_str(&format!(
            "{i},{},{},{},{},{}\n",
            r.seed,
            r.exit_time.map(|t| format!("{t:.6}")).unwrap_or_default(),
            r.collided,
            format!("{:.6e}", r.jitter),
            r.states.len()
        ));
    }
    out
}

fn obtain_controller(
    l: &Loaded,
    path: Option<&PathBuf>,
    cell: &str,
    choice: LandmarkChoice,
    spec: ChanceSpec,
) -> anyhow::Result<(String, ControllerArtifact)> {
    match path {
        Some(p) => {
            let art: ControllerArtifact = read_artifact(p)?;
            let label = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "controller".into());
            Ok((label, art))
        }
        None => Ok((choice_name(choice).to_string(), design(l, cell, choice, spec)?)),
    }
}

fn simulate(
    l: &Loaded,
    controller: Option<&PathBuf>,
    cell: &str,
    choice: LandmarkChoice,
    spec: ChanceSpec,
    config: &chance_nav_core::SimConfig,
) -> anyhow::Result<()> {
    let (label, art) = obtain_controller(l, controller, cell, choice, spec)?;
    let records = run(l, &art, config)?;
    let stats = summarize(&records);
    let stem = format!("sim_{}", sanitize(&label));
    write_json(
        &l.path(&format!("{stem}.json")),
        &SimArtifact {
            header: l.header(SimArtifact::KIND),
            label: label.clone(),
            cell: art.cell.clone(),
            config: config.clone(),
            stats: stats.clone(),
        },
    )?;
    std::fs::write(l.path(&format!("{stem}.csv")), trajectories_csv(&records))?;
    std::fs::write(
        l.path(&format!("{stem}.svg")),
        svg::render(&[trajectory_pane(l, &art, &label, &records)?]),
    )?;
    print!("{}", stats_csv(&[CompareRow { label, stats }]));
    Ok(())
}

fn compare(
    l: &Loaded,
    controllers: &[PathBuf],
    cell: &str,
    spec: ChanceSpec,
    config: &chance_nav_core::SimConfig,
) -> anyhow::Result<()> {
    let designs: Vec<(String, ControllerArtifact)> = if controllers.is_empty() {
        [LandmarkChoice::Physical, LandmarkChoice::Virtual]
            .into_iter()
            .map(|c| obtain_controller(l, None, cell, c, spec))
            .collect::<anyhow::Result<_>>()?
    } else {
        controllers
            .iter()
            .map(|p| obtain_controller(l, Some(p), cell, LandmarkChoice::Virtual, spec))
            .collect::<anyhow::Result<_>>()?
    };
    let cell_id = designs[0].1.cell.clone();
    anyhow::ensure!(
        designs.iter().all(|(_, a)| a.cell == cell_id),
        "compared controllers must belong to the same cell"
    );
    // Matched seeds: every controller sees the same per-trial seed sequence.
    let runs: Vec<Vec<TrajectoryRecord>> = {
        use rayon::prelude::*;
        designs
            .par_iter()
            .map(|(_, art)| run(l, art, config))
            .collect::<anyhow::Result<_>>()?
    };
    let rows: Vec<CompareRow> = designs
        .iter()
        .zip(&runs)
        .map(|((label, _), recs)| CompareRow {
            label: label.clone(),
            stats: summarize(recs),
        })
        .collect();
    let mut panes = Vec::new();
    for ((label, art), recs) in designs.iter().zip(&runs) {
        panes.push(trajectory_pane(l, art, label, recs)?);
        std::fs::write(
            l.path(&format!("compare_{}.csv", sanitize(label))),
            trajectories_csv(recs),
        )?;
    }
    write_json(
        &l.path("compare.json"),
        &CompareArtifact {
            header: l.header(CompareArtifact::KIND),
            cell: cell_id,
            config: config.clone(),
            rows: rows.clone(),
        },
    )?;
    let table = stats_csv(&rows);
    std::fs::write(l.path("compare.csv"), &table)?;
    std::fs::write(l.path("compare.svg"), svg::render(&panes))?;
    print!("{table}");
    Ok(())
}

fn update_covariance(l: &Loaded, controller: &Path, covariances: &Path) -> anyhow::Result<()> {
    let s = &l.scenario;
    let art: ControllerArtifact = read_artifact(controller)?;
    let record = art
        .virtual_landmark
        .clone()
        .filter(|_| art.landmarks == LandmarkChoice::Virtual)
        .ok_or_else(|| ValidationFailure("update-covariance needs a virtual-landmark controller".into()))?;
    let text = std::fs::read_to_string(covariances).with_context(|| format!("reading {}", covariances.display()))?;
    let given: BTreeMap<String, Vec<Vec<f64>>> = serde_json::from_str(&text).map_err(|e| {
        ValidationFailure(format!("{}: line {} column {}: {e}", covariances.display(), e.line(), e.column()))
    })?;
    let sources = s.cell_landmarks(&art.cell)?;
    for id in given.keys() {
        if !sources.iter().any(|x| &x.id == id) {
            return Err(ValidationFailure(format!("landmark `{id}` is not in cell `{}`", art.cell)).into());
        }
    }
    let new_covs = sources
        .iter()
        .map(|src| match given.get(&src.id) {
            Some(rows) => from_rows(rows)
                .and_then(|m| SpdMatrix::named(m, &format!("covariance of landmark `{}`", src.id)))
                .map_err(|e| anyhow::Error::from(ValidationFailure(e.to_string()))),
            None => Ok(src.covariance.clone()),
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let old = record.to_virtual()?;
    let (vl, controller_new) = update_on_new_covariance(&art.controller, &old, &sources, &new_covs)?;
    let updated_sources: Vec<Landmark> = sources
        .iter()
        .zip(&new_covs)
        .map(|(src, c)| Landmark::new(src.id.clone(), src.position.clone(), c.clone()))
        .collect::<Result<_, _>>()?;
    let spec = ChanceSpec::new(art.eta0, art.mode)?;
    let problem = s
        .problem(&art.cell, LandmarkChoice::Virtual, spec)?
        .with_landmarks(vec![vl.as_landmark(record.id.clone())])?;
    let verification = verify_at_vertices(&controller_new, &problem)?;
    let out = ControllerArtifact {
        header: l.header(ControllerArtifact::KIND),
        cell: art.cell.clone(),
        landmarks: LandmarkChoice::Virtual,
        eta0: art.eta0,
        mode: art.mode,
        controller: controller_new,
        virtual_landmark: Some(VirtualLandmarkRecord::new(&record.id, &vl, &updated_sources)),
        solver: None,
        verification,
    };
    let path = l.path(&format!("controller_{}_updated.json", sanitize(&art.cell)));
    write_json(&path, &out)?;
    println!(
        "remixed controller written to {}; worst vertex surrogate {:.3e} ({})",
        path.display(),
        out.verification.max_violation,
        out.verification.worst_constraint
    );
    Ok(())
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("CHANCE_NAV_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| ValidationFailure(format!("CHANCE_NAV_THREADS must be a positive integer, got `{v}`")))?;
        anyhow::ensure!(n > 0, ValidationFailure("CHANCE_NAV_THREADS must be positive".into()));
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Validate { scenario } => validate(&scenario),
        Command::Plan { common } => plan(&load(&common)?),
        Command::Fuse { common, cell, lme, kbar2 } => {
            let l = load(&common)?;
            let cell = l.cell(&cell);
            fuse(&l, &cell, lme, kbar2)
        }
        Command::Synthesize {
            common,
            cell,
            landmarks,
            chance,
        } => {
            let l = load(&common)?;
            let spec = l.chance(&chance)?;
            synthesize_cmd(&l, &l.cell(&cell), landmarks, spec)
        }
        Command::Simulate {
            common,
            controller,
            cell,
            landmarks,
            chance,
            sim,
        } => {
            let l = load(&common)?;
            let spec = l.chance(&chance)?;
            let config = l.sim_config(&sim);
            config.validate().map_err(|e| ValidationFailure(e.to_string()))?;
            simulate(&l, controller.as_ref(), &l.cell(&cell), landmarks, spec, &config)
        }
        Command::Compare {
            common,
            controller,
            cell,
            chance,
            sim,
        } => {
            let l = load(&common)?;
            let spec = l.chance(&chance)?;
            let config = l.sim_config(&sim);
            config.validate().map_err(|e| ValidationFailure(e.to_string()))?;
            compare(&l, &controller, &l.cell(&cell), spec, &config)
        }
        Command::UpdateCovariance {
            common,
            controller,
            covariances,
        } => update_covariance(&load(&common)?, &controller, &covariances),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
