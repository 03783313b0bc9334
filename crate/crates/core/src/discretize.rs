//! Grid refinement until the cell map reproduces the factual verdict, and
//! the I/O table extracted along the way.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::behavior::{recon, Behavior, RepresentativeBehavior};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::sim::Simulator;
use crate::space::{BoxSpace, GridPartition};

/// Above this many input cells a refinement step is reported as a budget
/// failure rather than attempted.
const MAX_CELLS: usize = 1 << 26;

/// How "every input cell maps into one output cell" is decided.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Containment {
    /// Evaluate the behavior on probe points of each cell and require all
    /// of them to land in the same output cell. `None` means `5^dim`.
    Probe {
        #[serde(default, rename = "samplesPerCell")]
        samples_per_cell: Option<usize>,
    },
    /// Accept once `c * sqrt(dim) * max input width <= min output width`
    /// for a known Lipschitz constant `c`.
    Lipschitz { c: f64 },
}

impl Default for Containment {
    fn default() -> Self {
        Containment::Probe {
            samples_per_cell: None,
        }
    }
}

impl Containment {
    pub fn samples(&self, input_dims: usize) -> usize {
        match self {
            Containment::Probe {
                samples_per_cell: Some(n),
            } => (*n).max(1),
            Containment::Probe { samples_per_cell: None } => 5usize.pow(input_dims as u32),
            Containment::Lipschitz { .. } => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DiscretizationConfig {
    pub initial_widths_in: Vec<f64>,
    pub initial_widths_out: Vec<f64>,
    pub max_halvings: u32,
    #[serde(default)]
    pub containment: Containment,
}

impl DiscretizationConfig {
    pub fn validate(&self, input: &BoxSpace, output: &BoxSpace) -> Result<()> {
        check_widths("initialWidthsIn", &self.initial_widths_in, input)?;
        check_widths("initialWidthsOut", &self.initial_widths_out, output)?;
        if self.max_halvings < 1 {
            return Err(Error::Config("maxHalvings must be at least 1".into()));
        }
        match self.containment {
            Containment::Lipschitz { c } if !(c.is_finite() && c > 0.0) => {
                Err(Error::Config(format!("lipschitz constant must be positive, got {c}")))
            }
            Containment::Probe {
                samples_per_cell: Some(0),
            } => Err(Error::Config("samplesPerCell must be at least 1".into())),
            _ => Ok(()),
        }
    }
}

fn check_widths(name: &str, widths: &[f64], space: &BoxSpace) -> Result<()> {
    if widths.len() != space.dims() {
        return Err(Error::Config(format!(
            "{name} has {} entries for a {}-dimensional space",
            widths.len(),
            space.dims()
        )));
    }
    for (k, w) in widths.iter().enumerate() {
        if !(w.is_finite() && *w > 0.0 && *w <= space.extent(k)) {
            return Err(Error::Config(format!(
                "{name}[{k}] = {w} must lie in (0, {}]",
                space.extent(k)
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Halvings {
    pub input: u32,
    pub output: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizationResult {
    pub g: RepresentativeBehavior,
    pub halvings_used: Halvings,
    /// The verdict shared by the factual behavior and `recon(g)`.
    pub verdict: bool,
}

impl DiscretizationResult {
    pub fn input_grid(&self) -> &GridPartition {
        self.g.input_grid()
    }

    pub fn output_grid(&self) -> &GridPartition {
        self.g.output_grid()
    }
}

/// One row of an I/O table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub cell: usize,
    pub input: Vec<f64>,
    pub output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IoTable {
    pub rows: Vec<TableRow>,
}

impl IoTable {
    /// CSV with header `cell_flat,input_0,..,output_0,..`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if let Some(first) = self.rows.first() {
            let mut header = vec!["cell_flat".to_owned()];
            header.extend((0..first.input.len()).map(|k| format!("input_{k}")));
            header.extend((0..first.output.len()).map(|k| format!("output_{k}")));
            w.write_record(&header)?;
        }
        for r in &self.rows {
            let mut rec = vec![r.cell.to_string()];
            rec.extend(r.input.iter().map(|v| v.to_string()));
            rec.extend(r.output.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluates `f` on `samples_per_cell` probe points of every cell, center
/// first, rows ordered by cell then probe.
pub fn tabulate(f: &dyn Behavior, grid: &GridPartition, samples_per_cell: usize) -> Result<IoTable> {
    tabulate_with(f, grid, samples_per_cell, Exec::default())
}

pub fn tabulate_with(
    f: &dyn Behavior,
    grid: &GridPartition,
    samples_per_cell: usize,
    exec: Exec,
) -> Result<IoTable> {
    if f.input_space() != grid.space() {
        return Err(Error::GridMismatch("grid does not cover the behavior's input space".into()));
    }
    let per_cell = exec.try_map(grid.total(), |i| {
        Ok(grid
            .probe_points(i, samples_per_cell)?
            .into_iter()
            .map(|x| TableRow {
                cell: i,
                output: f.eval(&x),
                input: x,
            })
            .collect::<Vec<_>>())
    })?;
    Ok(IoTable {
        rows: per_cell.into_iter().flatten().collect(),
    })
}

/// Output cell of every input cell, or `None` for a cell whose probes
/// disagree.
fn cell_map(
    f: &dyn Behavior,
    input: &GridPartition,
    output: &GridPartition,
    samples: usize,
    exec: Exec,
) -> Result<Vec<Option<usize>>> {
    exec.try_map(input.total(), |i| {
        let mut target = None;
        for x in input.probe_points(i, samples)? {
            let y = output.space().clamp(&f.eval(&x));
            let j = output.flat_cell_of(&y)?;
            match target {
                None => target = Some(j),
                Some(t) if t != j => return Ok(None),
                _ => {}
            }
        }
        Ok(target)
    })
}

/// Cell map over fixed grids. Fails on the first (lowest) input cell that
/// is not contained in a single output cell.
pub fn discretize_fixed(
    f: &dyn Behavior,
    input: &GridPartition,
    output: &GridPartition,
    samples_per_cell: usize,
) -> Result<RepresentativeBehavior> {
    discretize_fixed_with(f, input, output, samples_per_cell, Exec::default())
}

pub fn discretize_fixed_with(
    f: &dyn Behavior,
    input: &GridPartition,
    output: &GridPartition,
    samples_per_cell: usize,
    exec: Exec,
) -> Result<RepresentativeBehavior> {
    check_spaces(f, input, output)?;
    let map = cell_map(f, input, output, samples_per_cell, exec)?
        .into_iter()
        .enumerate()
        .map(|(i, j)| j.ok_or(Error::NotContained { cell: i }))
        .collect::<Result<Vec<_>>>()?;
    RepresentativeBehavior::new(input.clone(), output.clone(), map)
}

fn check_spaces(f: &dyn Behavior, input: &GridPartition, output: &GridPartition) -> Result<()> {
    if f.input_space() != input.space() || f.output_space() != output.space() {
        return Err(Error::GridMismatch("grids do not cover the behavior's spaces".into()));
    }
    Ok(())
}

/// Refines the output grid (outer loop) and the input grid (inner loop)
/// until every input cell maps into one output cell and the cell map has
/// the same verdict as `f`. Widths are never reset between outer rounds.
pub fn discretize(f: &dyn Behavior, sim: &dyn Simulator, cfg: &DiscretizationConfig) -> Result<DiscretizationResult> {
    discretize_with(f, sim, cfg, Exec::default())
}

pub fn discretize_with(
    f: &dyn Behavior,
    sim: &dyn Simulator,
    cfg: &DiscretizationConfig,
    exec: Exec,
) -> Result<DiscretizationResult> {
    cfg.validate(f.input_space(), f.output_space())?;
    let target = sim.verdict(f)?;
    let samples = cfg.containment.samples(f.input_space().dims());

    let mut dx = cfg.initial_widths_in.clone();
    let mut dy = cfg.initial_widths_out.clone();
    let (mut steps_in, mut steps_out) = (0u32, 0u32);
    let mut input: Option<GridPartition> = None;
    let budget = |steps: u32, dx: &[f64], dy: &[f64]| Error::RefinementBudget {
        halvings: steps,
        finest_in: dx.to_vec(),
        finest_out: dy.to_vec(),
    };

    loop {
        let output = GridPartition::new(f.output_space().clone(), dy.clone())?;
        let out_widths = dy.clone();
        if steps_out > cfg.max_halvings {
            return Err(budget(steps_out - 1, &dx, &out_widths));
        }
        halve(&mut dy);
        steps_out += 1;

        let map = loop {
            if steps_in > cfg.max_halvings {
                let finest = input.as_ref().map(|g| g.widths().to_vec()).unwrap_or_default();
                return Err(budget(steps_in - 1, &finest, &out_widths));
            }
            let grid = GridPartition::new(f.input_space().clone(), dx.clone())?;
            if grid.total() > MAX_CELLS {
                return Err(budget(steps_in, &dx, &out_widths));
            }
            halve(&mut dx);
            steps_in += 1;
            let map = match &cfg.containment {
                Containment::Lipschitz { c } => {
                    let dim = f.input_space().dims() as f64;
                    let min_out = out_widths.iter().copied().fold(f64::INFINITY, f64::min);
                    if c * dim.sqrt() * grid.max_width() <= min_out {
                        Some(center_map(f, &grid, &output, exec)?)
                    } else {
                        None
                    }
                }
                Containment::Probe { .. } => cell_map(f, &grid, &output, samples, exec)?
                    .into_iter()
                    .collect::<Option<Vec<_>>>(),
            };
            input = Some(grid);
            if let Some(map) = map {
                break map;
            }
        };

        let g = RepresentativeBehavior::new(input.clone().expect("set in loop"), output, map)?;
        if sim.verdict(recon(&g))? == target {
            return Ok(DiscretizationResult {
                g,
                halvings_used: Halvings {
                    input: steps_in - 1,
                    output: steps_out - 1,
                },
                verdict: target,
            });
        }
    }
}

fn center_map(f: &dyn Behavior, input: &GridPartition, output: &GridPartition, exec: Exec) -> Result<Vec<usize>> {
    exec.try_map(input.total(), |i| {
        let y = output.space().clamp(&f.eval(&input.center_of_flat(i)?));
        output.flat_cell_of(&y)
    })
}

fn halve(w: &mut [f64]) {
    w.iter_mut().for_each(|v| *v /= 2.0);
}

/// `g` as a versioned JSON artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GArtifact {
    pub schema: String,
    #[serde(flatten)]
    pub g: RepresentativeBehavior,
}

impl GArtifact {
    pub const SCHEMA: &'static str = "causal-repair/g/v1";

    pub fn new(g: RepresentativeBehavior) -> Self {
        GArtifact {
            schema: Self::SCHEMA.to_owned(),
            g,
        }
    }

    pub fn parse(text: &str) -> Result<RepresentativeBehavior> {
        let a: GArtifact = serde_json::from_str(text)?;
        if a.schema != Self::SCHEMA {
            return Err(Error::Incompatible(format!("unexpected schema `{}`", a.schema)));
        }
        Ok(a.g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior::FnBehavior;
    use crate::sim::{ConstantSimulator, FnSimulator};

    fn boxed(lo: &[f64], hi: &[f64]) -> BoxSpace {
        BoxSpace::new(lo.to_vec(), hi.to_vec()).unwrap()
    }

    #[test]
    fn constant_behavior_stops_at_initial_widths() {
        let i = boxed(&[0.0, 0.0], &[1.0, 1.0]);
        let o = boxed(&[-1.0], &[1.0]);
        let f = FnBehavior::new(i, o, |_| vec![0.05]);
        let cfg = DiscretizationConfig {
            initial_widths_in: vec![0.5, 0.5],
            initial_widths_out: vec![0.5],
            max_halvings: 4,
            containment: Containment::default(),
        };
        let r = discretize(&f, &ConstantSimulator(false), &cfg).unwrap();
        assert_eq!(r.halvings_used, Halvings { input: 0, output: 0 });
        assert_eq!(r.input_grid().total(), 4);
        // 0.05 lies in [0, 0.5), cell 2 of 4.
        assert!(r.g.map().iter().all(|j| *j == 2));
    }

    #[test]
    fn dense_jumps_exhaust_the_budget() {
        let i = boxed(&[0.0], &[1.0]);
        let o = boxed(&[-1.0], &[1.0]);
        let f = FnBehavior::new(i, o, |x| {
            vec![if (x[0] * 1e5).sin() >= 0.0 { 0.9 } else { -0.9 }]
        });
        let cfg = DiscretizationConfig {
            initial_widths_in: vec![0.5],
            initial_widths_out: vec![1.0],
            max_halvings: 6,
            containment: Containment::default(),
        };
        match discretize(&f, &ConstantSimulator(true), &cfg) {
            Err(Error::RefinementBudget { halvings, finest_in, .. }) => {
                assert_eq!(halvings, 6);
                assert_eq!(finest_in, vec![0.5 / 64.0]);
            }
            other => panic!("expected a budget error, got {other:?}"),
        }
    }

    #[test]
    fn outer_loop_refines_until_verdict_matches() {
        // Verdict is "output at x = 0.3 exceeds 0.47"; f gives 0.45 there,
        // and the coarser center maps round it above the threshold.
        let i = boxed(&[0.0], &[1.0]);
        let o = boxed(&[0.0], &[2.0]);
        let f = FnBehavior::new(i, o, |x| vec![x[0] + 0.15]);
        let sim = FnSimulator(|b: &dyn Behavior| b.eval(&[0.3])[0] > 0.47);
        let cfg = DiscretizationConfig {
            initial_widths_in: vec![0.5],
            initial_widths_out: vec![1.0],
            max_halvings: 10,
            containment: Containment::Lipschitz { c: 1.0 },
        };
        let r = discretize(&f, &sim, &cfg).unwrap();
        assert!(!r.verdict);
        assert!(!sim.verdict(recon(&r.g)).unwrap());
        assert_eq!(r.halvings_used, Halvings { input: 2, output: 2 });
        // Lipschitz acceptance holds on the final grids.
        let dy = r.output_grid().widths()[0];
        assert!(r.input_grid().max_width() <= dy);
    }

    #[test]
    fn lipschitz_mode_lands_on_mountain_car_widths() {
        let i = boxed(&[-1.2, -0.07], &[0.6, 0.07]);
        let o = boxed(&[-1.0], &[1.0]);
        let f = FnBehavior::new(i, o, |x| vec![(3.0 * x[0]).sin() * 0.1]);
        let cfg = DiscretizationConfig {
            initial_widths_in: vec![0.8, 0.08],
            initial_widths_out: vec![0.1],
            max_halvings: 8,
            containment: Containment::Lipschitz { c: 0.5 },
        };
        let r = discretize(&f, &ConstantSimulator(false), &cfg).unwrap();
        assert_eq!(r.input_grid().counts(), &[18, 14]);
        assert_eq!(r.output_grid().total(), 20);
        assert_eq!(r.halvings_used, Halvings { input: 3, output: 0 });
    }

    #[test]
    fn config_validation() {
        let i = boxed(&[0.0], &[1.0]);
        let mut cfg = DiscretizationConfig {
            initial_widths_in: vec![2.0],
            initial_widths_out: vec![0.5],
            max_halvings: 3,
            containment: Containment::default(),
        };
        assert!(cfg.validate(&i, &i).is_err());
        cfg.initial_widths_in = vec![0.5];
        assert!(cfg.validate(&i, &i).is_ok());
        cfg.max_halvings = 0;
        assert!(cfg.validate(&i, &i).is_err());
        cfg.max_halvings = 3;
        cfg.containment = Containment::Lipschitz { c: -1.0 };
        assert!(cfg.validate(&i, &i).is_err());
    }

    #[test]
    fn config_json() {
        let src = r#"{"initialWidthsIn":[0.8,0.08],"initialWidthsOut":[0.1],"maxHalvings":6,
                      "containment":{"mode":"probe","samplesPerCell":25}}"#;
        let cfg: DiscretizationConfig = serde_json::from_str(src).unwrap();
        assert_eq!(cfg.containment.samples(2), 25);
        let cfg: DiscretizationConfig = serde_json::from_str(
            r#"{"initialWidthsIn":[0.8],"initialWidthsOut":[0.1],"maxHalvings":6}"#,
        )
        .unwrap();
        assert_eq!(cfg.containment.samples(2), 25);
        assert_eq!(cfg.containment.samples(1), 5);
    }

    #[test]
    fn tabulate_rows_and_csv() {
        let g = GridPartition::new(boxed(&[0.0], &[1.0]), vec![0.5]).unwrap();
        let f = FnBehavior::new(g.space().clone(), boxed(&[0.0], &[2.0]), |x| vec![2.0 * x[0]]);
        let t = tabulate(&f, &g, 4).unwrap();
        assert_eq!(t.rows.len(), 8);
        assert_eq!(t.rows[0].input, vec![0.25]);
        assert_eq!(t.rows[0].output, vec![0.5]);
        assert_eq!(t, tabulate_with(&f, &g, 4, Exec::Sequential).unwrap());
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "cell_flat,input_0,output_0");
        assert_eq!(text.lines().count(), 9);
    }

    #[test]
    fn fixed_grid_rejects_straddling_cell() {
        let i = GridPartition::new(boxed(&[0.0], &[1.0]), vec![0.5]).unwrap();
        let o = GridPartition::new(boxed(&[0.0], &[2.0]), vec![0.5]).unwrap();
        let f = FnBehavior::new(i.space().clone(), o.space().clone(), |x| vec![x[0] + 0.25]);
        assert!(matches!(
            discretize_fixed(&f, &i, &o, 5),
            Err(Error::NotContained { cell: 0 })
        ));
        let g = discretize_fixed(&f, &i, &o, 1).unwrap();
        assert_eq!(g.map(), &[1, 2]);
    }

    #[test]
    fn g_artifact_roundtrip() {
        let i = GridPartition::new(boxed(&[0.0], &[1.0]), vec![0.5]).unwrap();
        let g = RepresentativeBehavior::new(i.clone(), i, vec![1, 0]).unwrap();
        let text = serde_json::to_string(&GArtifact::new(g.clone())).unwrap();
        assert!(text.contains(r#""map":[1,0]"#));
        assert!(text.contains(r#""inputGrid""#));
        assert_eq!(GArtifact::parse(&text).unwrap(), g);
        assert!(GArtifact::parse(&text.replace("g/v1", "g/v0")).is_err());
    }
}
