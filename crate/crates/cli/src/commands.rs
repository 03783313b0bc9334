//! Pipeline stages and the subcommands built from them.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use causal_repair_core::behavior::{recon, Behavior, RepresentativeBehavior, ScriptedBehavior};
use causal_repair_core::discretize::{discretize_with, tabulate_with, DiscretizationResult, GArtifact};
use causal_repair_core::error::Error;
use causal_repair_core::exec::{with_threads, Exec};
use causal_repair_core::hp::{HpModel, ModelSummary, NodeAssignment};
use causal_repair_core::search::{
    assignment_verdict, interpolate, search_seeds, CauseResult, FailureStatement, SampleOutcome,
};
use causal_repair_core::sim::{
    ClosedLoopSimulator, ConstantSimulator, MountainCar, NeuralBehavior, Plant, Simulator, SimulatorConfig,
    StlFormula,
};
use serde::{Deserialize, Serialize};

use crate::config::{ControllerSource, PipelineConfig, PlantConfig};
use crate::heatmap::write_heatmap;

pub mod exit {
    pub const REPAIRED: i32 = 0;
    pub const ERROR: i32 = 1;
    pub const INVALID: i32 = 2;
    pub const NO_COUNTERFACTUAL: i32 = 3;
}

pub const MANIFEST_SCHEMA: &str = "causal-repair/manifest/v1";
pub const ASSIGNMENT_SCHEMA: &str = "causal-repair/assignment/v1";

/// Machine-readable code of the innermost library error, if any.
pub fn error_code(e: &anyhow::Error) -> &'static str {
    e.chain()
        .find_map(|c| c.downcast_ref::<Error>())
        .map(Error::code)
        .unwrap_or("cli")
}

/// A node assignment as a standalone file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssignmentFile {
    pub schema: String,
    pub assignment: NodeAssignment,
}

impl AssignmentFile {
    pub fn new(assignment: NodeAssignment) -> Self {
        AssignmentFile {
            schema: ASSIGNMENT_SCHEMA.to_owned(),
            assignment,
        }
    }
}

/// Simulator and controller described by a config.
pub struct Setup {
    pub cfg: PipelineConfig,
    pub closed_loop: Option<ClosedLoopSimulator>,
    sim: Arc<dyn Simulator>,
    pub controller: Arc<dyn Behavior>,
}

impl Setup {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        let (input, output) = cfg.spaces();
        let (closed_loop, sim): (_, Arc<dyn Simulator>) = match &cfg.plant {
            PlantConfig::MountainCar => {
                let plant = Arc::new(MountainCar::new());
                let property = StlFormula::parse(cfg.property_text(), plant.state_names())?;
                let cl = ClosedLoopSimulator::new(SimulatorConfig {
                    plant,
                    s0: cfg.initial_state(),
                    property,
                    stop_at_goal: true,
                })?;
                (Some(cl.clone()), Arc::new(cl))
            }
            PlantConfig::Constant { verdict, .. } => (None, Arc::new(ConstantSimulator(*verdict))),
        };
        let controller: Arc<dyn Behavior> = match &cfg.controller {
            ControllerSource::Scripted(c) => Arc::new(ScriptedBehavior::new(input, output, c.clone())?),
            ControllerSource::Weights(p) => {
                let path = cfg.resolve(p);
                Arc::new(
                    NeuralBehavior::load(&path, input, output)
                        .with_context(|| format!("loading weights {}", path.display()))?,
                )
            }
        };
        Ok(Setup {
            cfg,
            closed_loop,
            sim,
            controller,
        })
    }

    pub fn simulator(&self) -> &dyn Simulator {
        self.sim.as_ref()
    }

    pub fn input_names(&self) -> Vec<&'static str> {
        match &self.closed_loop {
            Some(cl) => cl.plant().state_names().to_vec(),
            None => Vec::new(),
        }
    }

    pub fn discretize(&self, exec: Exec) -> Result<DiscretizationResult> {
        Ok(discretize_with(
            self.controller.as_ref(),
            self.simulator(),
            &self.cfg.discretization,
            exec,
        )?)
    }

    pub fn build_model(&self, g: &RepresentativeBehavior) -> Result<HpModel> {
        Ok(HpModel::build(
            g.input_grid().clone(),
            g.output_grid().clone(),
            self.cfg.plant.name(),
        )?)
    }

    fn write_trajectory(&self, f: &dyn Behavior, path: &Path) -> Result<()> {
        if let Some(cl) = &self.closed_loop {
            let plant = cl.plant();
            cl.simulate(f)?
                .write_csv(create(path)?, plant.state_names(), plant.control_names())?;
        }
        Ok(())
    }
}

/// Counts time spent inside the wrapped simulator.
struct Timed<'a> {
    inner: &'a dyn Simulator,
    nanos: AtomicU64,
}

impl<'a> Timed<'a> {
    fn new(inner: &'a dyn Simulator) -> Self {
        Timed {
            inner,
            nanos: AtomicU64::new(0),
        }
    }

    fn seconds(&self) -> f64 {
        self.nanos.load(Ordering::Relaxed) as f64 * 1e-9
    }
}

impl Simulator for Timed<'_> {
    fn verdict(&self, f: &dyn Behavior) -> causal_repair_core::error::Result<bool> {
        let t = Instant::now();
        let v = self.inner.verdict(f);
        self.nanos.fetch_add(t.elapsed().as_nanos() as u64, Ordering::Relaxed);
        v
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn schema_of(text: &str) -> Option<String> {
    let v: serde_json::Value = serde_json::from_str(text).ok()?;
    v.get("schema")?.as_str().map(str::to_owned)
}

pub fn load_model(path: &Path) -> Result<HpModel> {
    Ok(read_json::<ModelSummary>(path)?.model()?)
}

pub fn load_assignment(path: &Path) -> Result<NodeAssignment> {
    let file: AssignmentFile = read_json(path)?;
    if file.schema != ASSIGNMENT_SCHEMA {
        bail!("{}: unexpected schema `{}`", path.display(), file.schema);
    }
    Ok(file.assignment)
}

#[derive(Debug, Default, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Counts {
    pub halvings_in: Option<u32>,
    pub halvings_out: Option<u32>,
    pub input_cells: Option<usize>,
    pub output_cells: Option<usize>,
    pub io_nodes: Option<usize>,
    pub seed_used: Option<u64>,
    pub seed_runs: Option<u64>,
    pub samples: Option<u64>,
    /// Simulator executions during interpolation.
    pub operations: Option<u64>,
    pub step_ops: Option<u64>,
    pub cause_nodes: Option<usize>,
    pub changed_cells: Option<usize>,
}

#[derive(Debug, Default, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct WallTimes {
    pub discretize_s: f64,
    pub sample_s: f64,
    pub interpolate_total_s: f64,
    pub interpolate_simulator_s: f64,
    pub interpolate_stepping_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Manifest {
    pub schema: &'static str,
    pub status: &'static str,
    pub exit_code: i32,
    pub error_code: Option<&'static str>,
    pub error: Option<String>,
    pub seed: u64,
    pub threads: usize,
    pub versions: serde_json::Value,
    pub interpolation_mode: String,
    pub counts: Counts,
    pub wall_times: WallTimes,
}

impl Manifest {
    fn new(cfg: &PipelineConfig, exec: Exec) -> Self {
        Manifest {
            schema: MANIFEST_SCHEMA,
            status: "error",
            exit_code: exit::ERROR,
            error_code: None,
            error: None,
            seed: cfg.sampler.seed,
            threads: exec.workers(),
            versions: serde_json::json!({
                "causal-repair": env!("CARGO_PKG_VERSION"),
                "causal-repair-core": causal_repair_core::VERSION,
            }),
            interpolation_mode: serde_json::to_value(cfg.interpolation.mode)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default(),
            counts: Counts::default(),
            wall_times: WallTimes::default(),
        }
    }
}

/// File names written by `repair`.
pub mod outputs {
    pub const G: &str = "g.json";
    pub const IO_TABLE: &str = "io_table.csv";
    pub const MODEL: &str = "model.json";
    pub const FACTUAL: &str = "factual.json";
    pub const COUNTERFACTUAL: &str = "counterfactual.json";
    pub const FAILURE: &str = "failure.json";
    pub const CAUSE: &str = "cause.json";
    pub const MANIFEST: &str = "manifest.json";
    pub const HEATMAP_FACTUAL: &str = "heatmap_factual.csv";
    pub const HEATMAP_COUNTERFACTUAL: &str = "heatmap_counterfactual.csv";
    pub const HEATMAP_INTERPOLATED: &str = "heatmap_interpolated.csv";
    pub const TRAJECTORY_FACTUAL: &str = "trajectory_factual.csv";
    pub const TRAJECTORY_REPAIRED: &str = "trajectory_repaired.csv";
}

fn run_repair(setup: &Setup, exec: Exec, m: &mut Manifest) -> Result<i32> {
    let started = Instant::now();
    let cfg = &setup.cfg;
    let dir = &cfg.output_dir;
    let names = setup.input_names();

    let t = Instant::now();
    let disc = setup.discretize(exec)?;
    m.wall_times.discretize_s = t.elapsed().as_secs_f64();
    let g = &disc.g;
    m.counts.halvings_in = Some(disc.halvings_used.input);
    m.counts.halvings_out = Some(disc.halvings_used.output);
    m.counts.input_cells = Some(g.input_grid().total());
    m.counts.output_cells = Some(g.output_grid().total());
    write_json(&dir.join(outputs::G), &GArtifact::new(g.clone()))?;
    let samples = cfg.discretization.containment.samples(g.input_grid().dims());
    tabulate_with(setup.controller.as_ref(), g.input_grid(), samples, exec)?
        .write_csv(create(&dir.join(outputs::IO_TABLE))?)?;

    let model = setup.build_model(g)?;
    m.counts.io_nodes = Some(model.io_node_count());
    let v = model.encode(g)?;
    write_json(&dir.join(outputs::MODEL), &model.summary())?;
    write_json(&dir.join(outputs::FACTUAL), &AssignmentFile::new(v.clone()))?;
    write_heatmap(g, &names, create(&dir.join(outputs::HEATMAP_FACTUAL))?)?;
    setup.write_trajectory(setup.controller.as_ref(), &dir.join(outputs::TRAJECTORY_FACTUAL))?;

    let t = Instant::now();
    let found = search_seeds(&model, setup.simulator(), &cfg.sampler, cfg.max_seed_attempts, exec)?;
    m.wall_times.sample_s = t.elapsed().as_secs_f64();
    m.counts.seed_used = Some(found.seed);
    m.counts.seed_runs = Some(found.runs);
    m.counts.samples = Some(found.total_samples);
    let v_prime = match found.outcome {
        SampleOutcome::Found { assignment, .. } => assignment,
        SampleOutcome::Failed(statement) => {
            write_json(&dir.join(outputs::FAILURE), &statement)?;
            println!("{statement}");
            m.wall_times.total_s = started.elapsed().as_secs_f64();
            return Ok(exit::NO_COUNTERFACTUAL);
        }
    };
    write_json(&dir.join(outputs::COUNTERFACTUAL), &AssignmentFile::new(v_prime.clone()))?;
    write_heatmap(&model.decode(&v_prime)?, &names, create(&dir.join(outputs::HEATMAP_COUNTERFACTUAL))?)?;

    let timed = Timed::new(setup.simulator());
    let t = Instant::now();
    let cause = interpolate(&model, &timed, &v, &v_prime, cfg.interpolation.mode, &cfg.interpolation.order)?;
    let total = t.elapsed().as_secs_f64();
    m.wall_times.interpolate_total_s = total;
    m.wall_times.interpolate_simulator_s = timed.seconds();
    m.wall_times.interpolate_stepping_s = (total - timed.seconds()).max(0.0);
    m.counts.operations = Some(cause.simulator_calls);
    m.counts.step_ops = Some(cause.step_ops);
    m.counts.cause_nodes = Some(cause.cause.len());
    m.counts.changed_cells = Some(cause.changed_cells.len());

    fs::write(dir.join(outputs::CAUSE), cause.to_json()? + "\n")?;
    write_heatmap(&cause.repaired_behavior, &names, create(&dir.join(outputs::HEATMAP_INTERPOLATED))?)?;
    setup.write_trajectory(recon(&cause.repaired_behavior), &dir.join(outputs::TRAJECTORY_REPAIRED))?;
    print!("{}", cause.render());
    m.wall_times.total_s = started.elapsed().as_secs_f64();
    Ok(exit::REPAIRED)
}

/// Strategy for a `--threads` value: sequential for 1 when that is the
/// only choice compiled in, parallel otherwise.
pub fn exec_for(threads: Option<usize>) -> Exec {
    match threads {
        Some(1) => Exec::Sequential,
        _ => Exec::default(),
    }
}

fn threaded<R: Send>(threads: Option<usize>, f: impl FnOnce(Exec) -> R + Send) -> R {
    let exec = exec_for(threads);
    match threads {
        Some(n) => with_threads(n, || f(exec)),
        None => f(exec),
    }
}

fn report(e: &anyhow::Error) -> i32 {
    eprintln!("error [{}]: {e:#}", error_code(e));
    exit::ERROR
}

fn load_config(path: &Path) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(path)?;
    cfg.apply_env()?;
    Ok(cfg)
}

/// Full pipeline from a config file. A malformed config writes nothing.
pub fn cmd_repair(config: &Path, threads: Option<usize>) -> i32 {
    let setup = match load_config(config).and_then(Setup::new) {
        Ok(s) => s,
        Err(e) => return report(&e),
    };
    let dir = setup.cfg.output_dir.clone();
    if let Err(e) = fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display())) {
        return report(&e);
    }
    threaded(threads, |exec| {
        let mut m = Manifest::new(&setup.cfg, exec);
        let code = match run_repair(&setup, exec, &mut m) {
            Ok(code) => code,
            Err(e) => {
                m.error_code = Some(error_code(&e));
                m.error = Some(format!("{e:#}"));
                report(&e)
            }
        };
        m.exit_code = code;
        m.status = match code {
            exit::REPAIRED => "repaired",
            exit::NO_COUNTERFACTUAL => "no_counterfactual",
            _ => "error",
        };
        match write_json(&dir.join(outputs::MANIFEST), &m) {
            Ok(()) => code,
            Err(e) => report(&e),
        }
    })
}

fn repaired_assignment(path: &Path) -> Result<NodeAssignment> {
    let text = read(path)?;
    match schema_of(&text).as_deref() {
        Some(CauseResult::SCHEMA) => Ok(CauseResult::from_json(&text)?.counterfactual_minimal),
        Some(ASSIGNMENT_SCHEMA) => load_assignment(path),
        other => bail!("{}: not a repair (schema {other:?})", path.display()),
    }
}

fn validate(repair: &Path, config: &Path, threads: Option<usize>) -> Result<bool> {
    let setup = Setup::new(load_config(config)?)?;
    let v_star = repaired_assignment(repair)?;
    threaded(threads, |exec| {
        let disc = setup.discretize(exec)?;
        let model = setup.build_model(&disc.g)?;
        if v_star.model_hash() != model.hash() {
            return Err(Error::Incompatible(format!(
                "repair belongs to model {}, the config builds {}",
                v_star.model_hash(),
                model.hash()
            ))
            .into());
        }
        Ok(assignment_verdict(&model, setup.simulator(), &v_star)?)
    })
}

/// Re-simulates a repair. Exit 0 when it satisfies the property, 2 when
/// it does not.
pub fn cmd_validate(repair: &Path, config: &Path, threads: Option<usize>) -> i32 {
    match validate(repair, config, threads) {
        Ok(true) => {
            println!("verdict 1: property satisfied");
            exit::REPAIRED
        }
        Ok(false) => {
            println!("verdict 0: property violated");
            exit::INVALID
        }
        Err(e) => report(&e),
    }
}

/// Which behavior of a cause file to export.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Which {
    Factual,
    Counterfactual,
    #[default]
    Interpolated,
}

fn heatmap_source(input: &Path, which: Which) -> Result<RepresentativeBehavior> {
    let text = read(input)?;
    match schema_of(&text).as_deref() {
        Some(GArtifact::SCHEMA) => Ok(GArtifact::parse(&text)?),
        Some(CauseResult::SCHEMA) => {
            let r = CauseResult::from_json(&text)?;
            let v = match which {
                Which::Factual => &r.factual,
                Which::Counterfactual => &r.counterfactual_raw,
                Which::Interpolated => return Ok(r.repaired_behavior),
            };
            let g = &r.repaired_behavior;
            let out = g.output_grid();
            let d = out.dims();
            let map = v
                .bins()
                .chunks(d)
                .map(|b| out.index_from_multi(b).map(|c| c.flat))
                .collect::<causal_repair_core::error::Result<Vec<_>>>()?;
            Ok(RepresentativeBehavior::new(g.input_grid().clone(), out.clone(), map)?)
        }
        other => bail!("{}: cannot export schema {other:?}", input.display()),
    }
}

pub fn cmd_export_heatmap(input: &Path, output: &Path, which: Which, names: &[&str]) -> i32 {
    let run = || -> Result<()> {
        let g = heatmap_source(input, which)?;
        write_heatmap(&g, names, create(output)?)?;
        Ok(())
    };
    match run() {
        Ok(()) => exit::REPAIRED,
        Err(e) => report(&e),
    }
}

pub fn cmd_discretize(config: &Path, out: &Path, threads: Option<usize>) -> i32 {
    let run = || -> Result<()> {
        let setup = Setup::new(load_config(config)?)?;
        let disc = threaded(threads, |exec| setup.discretize(exec))?;
        write_json(out, &GArtifact::new(disc.g.clone()))?;
        println!(
            "input cells {:?}, output cells {:?}, halvings {}/{}",
            disc.input_grid().counts(),
            disc.output_grid().counts(),
            disc.halvings_used.input,
            disc.halvings_used.output
        );
        Ok(())
    };
    run().map_or_else(|e| report(&e), |()| exit::REPAIRED)
}

/// Writes `model.json` and `factual.json` for a cell map into `out_dir`.
pub fn cmd_build_model(g: &Path, label: &str, out_dir: &Path) -> i32 {
    let run = || -> Result<()> {
        let g = GArtifact::parse(&read(g)?)?;
        let model = HpModel::build(g.input_grid().clone(), g.output_grid().clone(), label)?;
        fs::create_dir_all(out_dir)?;
        write_json(&out_dir.join(outputs::MODEL), &model.summary())?;
        write_json(&out_dir.join(outputs::FACTUAL), &AssignmentFile::new(model.encode(&g)?))?;
        println!(
            "{} IO nodes, {} nodes in total, 10^{:.2} valid assignments",
            model.io_node_count(),
            model.node_count(),
            model.log10_valid_assignments()
        );
        Ok(())
    };
    run().map_or_else(|e| report(&e), |()| exit::REPAIRED)
}

/// Samples a satisfying assignment. Writes it to `out`, or a failure
/// statement next to it and exits 3.
pub fn cmd_search(config: &Path, model: &Path, out: &Path, threads: Option<usize>) -> i32 {
    let run = || -> Result<i32> {
        let setup = Setup::new(load_config(config)?)?;
        let model = load_model(model)?;
        let cfg = &setup.cfg;
        let found = threaded(threads, |exec| {
            search_seeds(&model, setup.simulator(), &cfg.sampler, cfg.max_seed_attempts, exec)
        })?;
        match found.outcome {
            SampleOutcome::Found { assignment, samples } => {
                write_json(out, &AssignmentFile::new(assignment))?;
                println!("seed {}: satisfying assignment after {samples} samples", found.seed);
                Ok(exit::REPAIRED)
            }
            SampleOutcome::Failed(statement) => {
                write_json(&failure_path(out), &statement)?;
                println!("{statement}");
                Ok(exit::NO_COUNTERFACTUAL)
            }
        }
    };
    run().unwrap_or_else(|e| report(&e))
}

fn failure_path(out: &Path) -> PathBuf {
    out.with_file_name(outputs::FAILURE)
}

pub fn cmd_interpolate(config: &Path, model: &Path, factual: &Path, counterfactual: &Path, out: &Path) -> i32 {
    let run = || -> Result<()> {
        let setup = Setup::new(load_config(config)?)?;
        let model = load_model(model)?;
        let (v, v_prime) = (load_assignment(factual)?, load_assignment(counterfactual)?);
        let it = &setup.cfg.interpolation;
        let cause = interpolate(&model, setup.simulator(), &v, &v_prime, it.mode, &it.order)?;
        fs::write(out, cause.to_json()? + "\n")?;
        print!("{}", cause.render());
        Ok(())
    };
    run().map_or_else(|e| report(&e), |()| exit::REPAIRED)
}

/// Reads a failure statement written by `repair` or `search`.
pub fn load_failure(path: &Path) -> Result<FailureStatement> {
    let s: FailureStatement = read_json(path)?;
    if s.schema != FailureStatement::SCHEMA {
        bail!("{}: unexpected schema `{}`", path.display(), s.schema);
    }
    Ok(s)
}
