//! End-to-end acceptance checks. Everything runs from one test function so
//! that wall-clock limits are measured without other tests competing for
//! the CPU. Each check prints one PASS/FAIL line.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use causal_repair::commands::{load_model, AssignmentFile};
use causal_repair::{cmd_repair, exit};
use causal_repair_core::behavior::{leq_behavior, recon, FnBehavior, RepresentativeBehavior, SamplingPlan};
use causal_repair_core::discretize::{discretize, Containment, DiscretizationConfig};
use causal_repair_core::exec::Exec;
use causal_repair_core::hp::{leq_nodes, HpModel, NodeId};
use causal_repair_core::search::{
    interpolate, required_samples, search_seeds, wilson_upper_bound, CauseResult, InterpolationMode, NodeOrder,
    SampleOutcome, SamplerConfig,
};
use causal_repair_core::sim::{mountain_car_step, ClosedLoopSimulator, MountainCar, Plant, Simulator};
use causal_repair_core::space::{BoxSpace, GridPartition};
use causal_repair_core::verify::{check_ac, BinSimulator, CandidateCause};
use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit: Duration) -> (bool, String) {
    (elapsed < limit, format!("{elapsed:.2?} (limit {limit:?})"))
}

fn sample_bound() -> Outcome {
    let t = Instant::now();
    let n = required_samples(0.001, 0.05).unwrap();
    let (fast, time) = within(t.elapsed(), Duration::from_millis(1));
    outcome(n == 3838 && fast, format!("N = {n}, expected 3838; {time}"))
}

fn wilson() -> Outcome {
    let t = Instant::now();
    let ub = wilson_upper_bound(3838, 0.05).unwrap();
    let (fast, time) = within(t.elapsed(), Duration::from_millis(1));
    let ok = (0.000990..=0.001010).contains(&ub);
    outcome(ok && fast, format!("upper bound {ub:.7} in [0.000990, 0.001010]; {time}"))
}

/// Smooth controller with Lipschitz constant at most 0.5 in the max norm.
fn lipschitz_controller() -> FnBehavior<impl Fn(&[f64]) -> Vec<f64> + Send + Sync> {
    let mc = MountainCar::new();
    FnBehavior::new(
        mc.controller_input_space().clone(),
        mc.controller_output_space().clone(),
        |x: &[f64]| vec![0.2 * (2.0 * x[0]).sin() + 0.1 * x[1].sin()],
    )
}

fn fine_grids() -> (GridPartition, GridPartition, Duration) {
    let cfg = DiscretizationConfig {
        initial_widths_in: vec![0.8, 0.08],
        initial_widths_out: vec![0.1],
        max_halvings: 8,
        containment: Containment::Lipschitz { c: 0.5 },
    };
    let t = Instant::now();
    let r = discretize(&lipschitz_controller(), &ClosedLoopSimulator::mountain_car(), &cfg).unwrap();
    let elapsed = t.elapsed();
    (r.input_grid().clone(), r.output_grid().clone(), elapsed)
}

fn grid_shape() -> Outcome {
    let (inp, out, elapsed) = fine_grids();
    let (fast, time) = within(elapsed, Duration::from_secs(1));
    let ok = inp.counts() == [18, 14] && inp.total() == 252 && out.total() == 20;
    outcome(
        ok && fast,
        format!(
            "input {:?} = {} cells, output {} cells; widths {:?}/{:?}; {time}",
            inp.counts(),
            inp.total(),
            out.total(),
            inp.widths(),
            out.widths()
        ),
    )
}

fn node_count() -> Outcome {
    let (inp, out, _) = fine_grids();
    let t = Instant::now();
    let model = HpModel::build(inp, out, "mountain_car").unwrap();
    let nodes = model.node_count();
    let valid = model.valid_assignments();
    let (fast, time) = within(t.elapsed(), Duration::from_secs(1));
    let ok = nodes == 252 * 20 + 2 && valid == BigUint::from(20u32).pow(252);
    outcome(
        ok && fast,
        format!("{nodes} nodes, 10^{:.3} valid assignments (20^252 exact); {time}", model.log10_valid_assignments()),
    )
}

fn toy_model(m: usize, n: usize) -> HpModel {
    let g = |w: f64| GridPartition::new(BoxSpace::new(vec![0.0], vec![1.0]).unwrap(), vec![w]).unwrap();
    HpModel::build(g(1.0 / m as f64), g(1.0 / n as f64), format!("toy {m}x{n}")).unwrap()
}

fn all_bins(m: usize, n: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..m {
        out = out
            .into_iter()
            .flat_map(|p| (0..n).map(move |k| [p.clone(), vec![k]].concat()))
            .collect();
    }
    out
}

/// Compares the behavior-level order, evaluated on probe points, with the
/// node-level order of the encodings. Returns the number of disagreements.
fn order_disagreements(model: &HpModel, triples: impl Iterator<Item = [Vec<usize>; 3]>) -> (u64, u64) {
    let plan = SamplingPlan::CellProbes {
        grid: model.input_grid().clone(),
        per_cell: 3,
    };
    let (mut checked, mut bad) = (0, 0);
    for [a, b, base] in triples {
        let g: Vec<RepresentativeBehavior> = [&a, &b, &base]
            .iter()
            .map(|x| model.behavior_from_bins(x).unwrap())
            .collect();
        let by_behavior = leq_behavior(recon(&g[0]), recon(&g[1]), recon(&g[2]), &plan).unwrap();
        let v: Vec<_> = g.iter().map(|x| model.encode(x).unwrap()).collect();
        let by_nodes = leq_nodes(&v[0], &v[1], &v[2]).unwrap();
        checked += 1;
        bad += u64::from(by_behavior != by_nodes);
    }
    (checked, bad)
}

fn order_preservation() -> Outcome {
    let t = Instant::now();
    let mut details = Vec::new();
    let mut bad_total = 0;
    for (m, n) in [(1, 2), (2, 2), (2, 3), (3, 3)] {
        let model = toy_model(m, n);
        let all = all_bins(m, n);
        let triples = all.iter().flat_map(|a| {
            let all = &all;
            all.iter()
                .flat_map(move |b| all.iter().map(move |c| [a.clone(), b.clone(), c.clone()]))
        });
        let (checked, bad) = order_disagreements(&model, triples);
        bad_total += bad;
        details.push(format!("({m},{n}) {checked} triples {bad} bad"));
    }
    let model = toy_model(20, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let random: Vec<[Vec<usize>; 3]> = (0..10_000)
        .map(|_| {
            let base: Vec<usize> = (0..20).map(|_| rng.gen_range(0..10)).collect();
            // Half the pairs are built to be ordered so both answers occur.
            let b: Vec<usize> = (0..20).map(|_| rng.gen_range(0..10)).collect();
            let a: Vec<usize> = if rng.gen_bool(0.5) {
                base.iter()
                    .zip(&b)
                    .map(|(&z, &y)| if rng.gen_bool(0.5) { z } else { rng.gen_range(z.min(y)..=z.max(y)) })
                    .collect()
            } else {
                (0..20).map(|_| rng.gen_range(0..10)).collect()
            };
            [a, b, base]
        })
        .collect();
    let (checked, bad) = order_disagreements(&model, random.into_iter());
    bad_total += bad;
    details.push(format!("(20,10) {checked} random triples {bad} bad"));
    let (fast, time) = within(t.elapsed(), Duration::from_secs(30));
    outcome(bad_total == 0 && fast, format!("{}; {time}", details.join(", ")))
}

/// Two cells, two bins, a random verdict table with the factual
/// assignment violating and at least one satisfying assignment.
fn random_toy(seed: u64) -> (HpModel, Vec<bool>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = toy_model(2, 2);
    let factual = vec![rng.gen_range(0..2), rng.gen_range(0..2)];
    let rank = |b: &[usize]| b[0] * 2 + b[1];
    let mut table: Vec<bool> = (0..4).map(|_| rng.gen_bool(0.5)).collect();
    table[rank(&factual)] = false;
    if !table.iter().any(|x| *x) {
        let others: Vec<usize> = (0..4).filter(|i| *i != rank(&factual)).collect();
        table[others[rng.gen_range(0..3)]] = true;
    }
    (model, table, factual)
}

fn oracle_equivalence() -> Outcome {
    let t = Instant::now();
    let (mut results, mut failures) = (0, Vec::new());
    for seed in 0..20u64 {
        let (model, table, factual) = random_toy(seed);
        let sim = BinSimulator::new(&model, |b: &[usize]| table[b[0] * 2 + b[1]]);
        let v = model.assignment(factual).unwrap();
        let cfg = SamplerConfig {
            p: 0.5,
            alpha: 0.05,
            seed,
            max_samples_override: None,
        };
        let found = search_seeds(&model, &sim, &cfg, 100, Exec::Sequential).unwrap();
        let SampleOutcome::Found { assignment, .. } = found.outcome else {
            failures.push(format!("seed {seed}: no counterfactual"));
            continue;
        };
        for mode in [InterpolationMode::Incremental, InterpolationMode::Binary] {
            let r = interpolate(&model, &sim, &v, &assignment, mode, &NodeOrder::Canonical).unwrap();
            let candidate = CandidateCause::between(&v, &r.counterfactual_minimal).unwrap();
            let ac = check_ac(&candidate, &model, &sim, &v).unwrap();
            results += 1;
            if !ac.all() {
                let nodes: Vec<String> = r.cause.iter().map(NodeId::to_string).collect();
                eprintln!(
                    "  toy {seed} {mode:?}: table {table:?}, factual {:?}, cause {{{}}}: {ac:?}",
                    v.bins(),
                    nodes.join(", ")
                );
                failures.push(format!("seed {seed} {mode:?}"));
            }
        }
    }
    let (fast, time) = within(t.elapsed(), Duration::from_secs(120));
    outcome(
        failures.is_empty() && fast,
        format!(
            "{results} cause results, {} failing check_ac [{}]; {time}",
            failures.len(),
            failures.join(", ")
        ),
    )
}

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(format!("{name}.json"));
    fs::write(&path, body.replace("OUT", name)).unwrap();
    path
}

const FULL_CONFIG: &str = r#"{
  "schema": "causal-repair/config/v1",
  "plant": {"kind": "mountainCar"},
  "s0": [-0.5, 0.0],
  "property": "(F 0 110 (>= pos 0.45))",
  "controller": {"scripted": "flawed"},
  "discretization": {
    "initialWidthsIn": [0.8, 0.08], "initialWidthsOut": [0.1], "maxHalvings": 8,
    "containment": {"mode": "probe", "samplesPerCell": 25}
  },
  "sampler": {"p": 0.001, "alpha": 0.05, "seed": 0},
  "maxSeedAttempts": 2000,
  "interpolation": {"mode": "binary", "order": "canonical"},
  "outputDir": "OUT"
}"#;

const CI_CONFIG: &str = r#"{
  "schema": "causal-repair/config/v1",
  "plant": {"kind": "mountainCar"},
  "controller": {"scripted": "flawed"},
  "discretization": {
    "initialWidthsIn": [0.2, 0.02], "initialWidthsOut": [0.2], "maxHalvings": 4,
    "containment": {"mode": "probe", "samplesPerCell": 1}
  },
  "sampler": {"p": 0.001, "alpha": 0.05, "seed": 17},
  "maxSeedAttempts": 50,
  "interpolation": {"mode": "incremental", "order": "canonical"},
  "outputDir": "OUT"
}"#;

struct Repair {
    model: HpModel,
    cause: CauseResult,
}

fn end_to_end(tmp: &Path) -> (Outcome, Option<Repair>) {
    let cfg = write_config(tmp, "full", FULL_CONFIG);
    let t = Instant::now();
    let code = cmd_repair(&cfg, Some(1));
    let (fast, time) = within(t.elapsed(), Duration::from_secs(15 * 60));
    if code != exit::REPAIRED {
        return (outcome(false, format!("cmd_repair exited {code}; {time}")), None);
    }
    let out = tmp.join("full");
    let model = load_model(&out.join("model.json")).unwrap();
    let cause = CauseResult::from_json(&fs::read_to_string(out.join("cause.json")).unwrap()).unwrap();
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let factual: AssignmentFile = serde_json::from_str(&fs::read_to_string(out.join("factual.json")).unwrap()).unwrap();
    // Re-simulate on a freshly built closed loop.
    let sim = ClosedLoopSimulator::mountain_car();
    let repaired = model.decode(&cause.counterfactual_minimal).unwrap();
    let trace = sim.simulate(recon(&repaired)).unwrap();
    let reached = trace.states.iter().take(111).any(|s| s[0] >= 0.45);
    let factual_fails = !sim.verdict(recon(&model.decode(&factual.assignment).unwrap())).unwrap();
    let changed = cause.changed_cells.len();
    let ok = trace.verdict && reached && factual_fails && changed >= 1 && fast;
    let detail = format!(
        "verdict {} (pos >= 0.45 reached: {reached}), {changed} changed cells, {} cause nodes, seed {} after {} samples in {} runs; {time}",
        u8::from(trace.verdict),
        cause.cause.len(),
        manifest["counts"]["seedUsed"],
        manifest["counts"]["samples"],
        manifest["counts"]["seedRuns"],
    );
    (outcome(ok, detail), Some(Repair { model, cause }))
}

/// Restores each cause node on its own: the block holding it moves one bin
/// back toward its factual bin, the smallest change that keeps a valid
/// encoding. Every such restoration must break the repair.
fn one_minimality(repair: Option<&Repair>) -> Outcome {
    let Some(Repair { model, cause }) = repair else {
        return outcome(false, "no repair to audit");
    };
    let t = Instant::now();
    let sim = ClosedLoopSimulator::mountain_car();
    let (v, v_star) = (&cause.factual, &cause.counterfactual_minimal);
    let (mut sims, mut kept) = (0, Vec::new());
    let mut seen = std::collections::HashMap::new();
    for n in &cause.cause {
        let (cur, fact) = (v_star.bin(n.cell, n.dim), v.bin(n.cell, n.dim));
        let restored_bin = if cur > fact { cur - 1 } else { cur + 1 };
        let verdict = *seen.entry((n.cell, n.dim)).or_insert_with(|| {
            sims += 1;
            let w = v_star.with_bin(n.cell, n.dim, restored_bin).unwrap();
            sim.verdict(recon(&model.decode(&w).unwrap())).unwrap()
        });
        if verdict {
            kept.push(n.to_string());
        }
    }
    let changed_ok = cause
        .changed_cells
        .iter()
        .all(|c| cause.cause.iter().any(|n| n.cell == c.input.flat));
    outcome(
        kept.is_empty() && changed_ok && sims <= cause.cause.len(),
        format!(
            "{} cause nodes, {sims} simulations, {} restorations kept the property{}; {:.2?}",
            cause.cause.len(),
            kept.len(),
            if kept.is_empty() { String::new() } else { format!(" [{}]", kept.join(", ")) },
            t.elapsed()
        ),
    )
}

fn binary_trend() -> Outcome {
    let t = Instant::now();
    let sim = ClosedLoopSimulator::mountain_car();
    let mc = MountainCar::new();
    let flawed = causal_repair_core::behavior::ScriptedBehavior::new(
        mc.controller_input_space().clone(),
        mc.controller_output_space().clone(),
        causal_repair_core::behavior::ScriptedController::Flawed,
    )
    .unwrap();
    let cfg = DiscretizationConfig {
        initial_widths_in: vec![0.2, 0.02],
        initial_widths_out: vec![0.2],
        max_halvings: 4,
        containment: Containment::Probe {
            samples_per_cell: Some(1),
        },
    };
    let g = discretize(&flawed, &sim, &cfg).unwrap().g;
    let model = HpModel::build(g.input_grid().clone(), g.output_grid().clone(), "mountain_car").unwrap();
    let shape = format!("{:?}x{:?}", g.input_grid().counts(), g.output_grid().counts());
    let v = model.encode(&g).unwrap();
    let (mut wins, mut both_valid, mut calls) = (0, 0, (0, 0));
    for seed in 0..25u64 {
        let sc = SamplerConfig {
            p: 0.001,
            alpha: 0.05,
            seed: seed * 1000,
            max_samples_override: None,
        };
        let SampleOutcome::Found { assignment, .. } = search_seeds(&model, &sim, &sc, 50, Exec::Sequential).unwrap().outcome
        else {
            continue;
        };
        let run = |mode| interpolate(&model, &sim, &v, &assignment, mode, &NodeOrder::Canonical).unwrap();
        let (inc, bin) = (run(InterpolationMode::Incremental), run(InterpolationMode::Binary));
        let valid = |r: &CauseResult| sim.verdict(recon(&model.decode(&r.counterfactual_minimal).unwrap())).unwrap();
        both_valid += u32::from(valid(&inc) && valid(&bin));
        wins += u32::from(bin.simulator_calls <= inc.simulator_calls);
        calls.0 += inc.simulator_calls;
        calls.1 += bin.simulator_calls;
    }
    let (fast, time) = within(t.elapsed(), Duration::from_secs(600));
    outcome(
        wins >= 24 && both_valid == 25 && fast,
        format!(
            "grid {shape}: binary <= incremental in {wins}/25 runs, both repairs valid in {both_valid}/25, simulator calls {} vs {} in total; {time}",
            calls.1, calls.0
        ),
    )
}

fn determinism(tmp: &Path) -> Outcome {
    let a = write_config(tmp, "det_a", CI_CONFIG);
    let b = write_config(tmp, "det_b", CI_CONFIG);
    let codes = (cmd_repair(&a, None), cmd_repair(&b, Some(1)));
    if codes != (exit::REPAIRED, exit::REPAIRED) {
        return outcome(false, format!("exit codes {codes:?}"));
    }
    let read = |d: &str| fs::read(tmp.join(d).join("cause.json")).unwrap();
    let (x, y) = (read("det_a"), read("det_b"));
    outcome(x == y, format!("cause.json {} and {} bytes, identical: {}", x.len(), y.len(), x == y))
}

fn dynamics() -> Outcome {
    let t = Instant::now();
    let [pos, vel] = mountain_car_step([-0.5, 0.0], 1.0);
    let (fast, time) = within(t.elapsed(), Duration::from_millis(1));
    let expect = 0.0015 - 0.0025 * (-1.5f64).cos();
    let err = (vel - expect).abs();
    outcome(
        err <= 1e-12 && pos == -0.5 && fast,
        format!("vel' = {vel:.12}, closed form {expect:.12}, error {err:.1e}; {time}"),
    )
}

#[test]
fn acceptance_criteria() {
    let tmp = TempDir::new().unwrap();
    let mut report = Vec::new();
    let mut record = |n: u32, name: &str, o: Outcome| {
        let line = format!("criterion {n:>2} {}: {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        println!("{line}");
        report.push((n, o.pass, line));
    };
    record(1, "sample bound", sample_bound());
    record(2, "Wilson consistency", wilson());
    record(3, "grid shape", grid_shape());
    record(4, "node count", node_count());
    record(5, "order preservation", order_preservation());
    record(6, "oracle equivalence", oracle_equivalence());
    let (e2e, repair) = end_to_end(tmp.path());
    record(7, "end-to-end repair", e2e);
    record(8, "1-minimality audit", one_minimality(repair.as_ref()));
    record(9, "binary vs incremental", binary_trend());
    record(10, "determinism", determinism(tmp.path()));
    record(11, "dynamics", dynamics());
    let failed: Vec<String> = report.iter().filter(|r| !r.1).map(|r| r.2.clone()).collect();
    assert!(failed.is_empty(), "failing criteria:\n{}", failed.join("\n"));
}
