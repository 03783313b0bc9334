//! Counterfactual search: uniform sampling of node assignments with a
//! statistical failure bound, then interpolation back toward the factual
//! assignment until no single step can be undone.

use std::collections::HashMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::behavior::{recon, RepresentativeBehavior};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::hp::{node_diff, DiffSet, HpModel, NodeAssignment, NodeId};
use crate::sim::Simulator;
use crate::space::CellIndex;

/// Inverse standard normal CDF (Acklam's rational approximation, relative
/// error below 1.2e-9).
pub fn normal_quantile(q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidProbability(q));
    }
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let tail = |t: f64| {
        (((((C[0] * t + C[1]) * t + C[2]) * t + C[3]) * t + C[4]) * t + C[5])
            / ((((D[0] * t + D[1]) * t + D[2]) * t + D[3]) * t + 1.0)
    };
    let x = if q < P_LOW {
        tail((-2.0 * q.ln()).sqrt())
    } else if q <= 1.0 - P_LOW {
        let r = q - 0.5;
        let s = r * r;
        (((((A[0] * s + A[1]) * s + A[2]) * s + A[3]) * s + A[4]) * s + A[5]) * r
            / (((((B[0] * s + B[1]) * s + B[2]) * s + B[3]) * s + B[4]) * s + 1.0)
    } else {
        -tail((-2.0 * (1.0 - q).ln()).sqrt())
    };
    Ok(x)
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")));
    }
    Ok(())
}

/// Consecutive failed uniform samples needed to claim, with confidence
/// `1 - alpha`, that the success rate is at most `p`.
pub fn required_samples(p: f64, alpha: f64) -> Result<u64> {
    check_unit("p", p)?;
    check_unit("alpha", alpha)?;
    let z = normal_quantile(1.0 - alpha / 2.0)?;
    Ok(((1.0 / p - 1.0) * z * z).ceil().max(1.0) as u64)
}

/// Upper end of the Wilson score interval after `n` trials with zero
/// successes.
pub fn wilson_upper_bound(n: u64, alpha: f64) -> Result<f64> {
    check_unit("alpha", alpha)?;
    if n == 0 {
        return Err(Error::Config("need at least one trial".into()));
    }
    let z2 = normal_quantile(1.0 - alpha / 2.0)?.powi(2);
    Ok(z2 / (n as f64 + z2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SamplerConfig {
    pub p: f64,
    pub alpha: f64,
    pub seed: u64,
    #[serde(default)]
    pub max_samples_override: Option<u64>,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        check_unit("p", self.p)?;
        check_unit("alpha", self.alpha)?;
        if self.max_samples_override == Some(0) {
            return Err(Error::Config("maxSamplesOverride must be positive".into()));
        }
        Ok(())
    }

    pub fn sample_budget(&self) -> Result<u64> {
        self.validate()?;
        match self.max_samples_override {
            Some(n) => Ok(n),
            None => required_samples(self.p, self.alpha),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureStatement {
    pub schema: String,
    pub p: f64,
    pub alpha: f64,
    #[serde(rename = "N")]
    pub n: u64,
    pub seed: u64,
    pub statement: String,
}

impl FailureStatement {
    pub const SCHEMA: &'static str = "causal-repair/failure/v1";

    fn new(cfg: &SamplerConfig, n: u64) -> Self {
        FailureStatement {
            schema: Self::SCHEMA.to_owned(),
            p: cfg.p,
            alpha: cfg.alpha,
            n,
            seed: cfg.seed,
            statement: format!(
                "Pr_D2[ Pr_D1[ S(decode(v')) = 1 ] <= {} ] >= {}: {n} consecutive uniformly \
                 sampled assignments (seed {}) all violate the property",
                cfg.p,
                1.0 - cfg.alpha,
                cfg.seed
            ),
        }
    }
}

impl fmt::Display for FailureStatement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.statement)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SampleOutcome {
    /// `samples` counts draws up to and including the satisfying one.
    Found { assignment: NodeAssignment, samples: u64 },
    Failed(FailureStatement),
}

/// Verdict of the behavior an assignment decodes to.
pub fn assignment_verdict(model: &HpModel, sim: &dyn Simulator, v: &NodeAssignment) -> Result<bool> {
    sim.verdict(recon(&model.decode(v)?))
}

fn bins_verdict(model: &HpModel, sim: &dyn Simulator, bins: &[usize]) -> Result<bool> {
    sim.verdict(recon(&model.behavior_from_bins(bins)?))
}

/// Draws up to the configured budget of assignments, each input cell
/// mapped to an output cell chosen uniformly and independently, and
/// returns the first one whose behavior satisfies the property.
pub fn sample_counterfactual(model: &HpModel, sim: &dyn Simulator, cfg: &SamplerConfig) -> Result<SampleOutcome> {
    sample_counterfactual_with(model, sim, cfg, Exec::default())
}

/// Draws are generated in one sequence and evaluated in batches; the
/// earliest satisfying draw wins, so the outcome does not depend on the
/// strategy or the worker count.
pub fn sample_counterfactual_with(
    model: &HpModel,
    sim: &dyn Simulator,
    cfg: &SamplerConfig,
    exec: Exec,
) -> Result<SampleOutcome> {
    let budget = cfg.sample_budget()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let out = model.output_grid();
    let batch = if exec.is_parallel() { 4 * exec.workers() } else { 1 } as u64;
    let mut drawn = 0u64;
    while drawn < budget {
        let size = batch.min(budget - drawn);
        let draws: Vec<Vec<usize>> = (0..size)
            .map(|_| {
                let mut bins = Vec::with_capacity(model.blocks());
                for _ in 0..model.cells() {
                    let j = rng.gen_range(0..out.total());
                    bins.extend(out.index_from_flat(j).expect("in range").multi);
                }
                bins
            })
            .collect();
        let verdicts = exec.map_slice(&draws, |b| bins_verdict(model, sim, b));
        for (t, (bins, verdict)) in draws.into_iter().zip(verdicts).enumerate() {
            if verdict? {
                return Ok(SampleOutcome::Found {
                    assignment: model.assignment(bins)?,
                    samples: drawn + t as u64 + 1,
                });
            }
        }
        drawn += size;
    }
    Ok(SampleOutcome::Failed(FailureStatement::new(cfg, budget)))
}

/// Result of running the sampler over consecutive seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSearch {
    pub outcome: SampleOutcome,
    /// Seed of the last run performed.
    pub seed: u64,
    pub runs: u64,
    /// Draws over all runs.
    pub total_samples: u64,
}

/// Runs the sampler with seeds `cfg.seed, cfg.seed + 1, ..`, each run
/// capped at the sample budget, until one finds a satisfying assignment or
/// `max_runs` runs have failed. The failure statement reported is that of
/// the last run.
pub fn search_seeds(
    model: &HpModel,
    sim: &dyn Simulator,
    cfg: &SamplerConfig,
    max_runs: u64,
    exec: Exec,
) -> Result<SeedSearch> {
    let budget = cfg.sample_budget()?;
    let max_runs = max_runs.max(1);
    let mut total = 0;
    for r in 0..max_runs {
        let run_cfg = SamplerConfig {
            seed: cfg.seed.wrapping_add(r),
            ..cfg.clone()
        };
        let outcome = sample_counterfactual_with(model, sim, &run_cfg, exec)?;
        let found = match &outcome {
            SampleOutcome::Found { samples, .. } => {
                total += samples;
                true
            }
            SampleOutcome::Failed(_) => {
                total += budget;
                false
            }
        };
        if found || r + 1 == max_runs {
            return Ok(SeedSearch {
                outcome,
                seed: run_cfg.seed,
                runs: r + 1,
                total_samples: total,
            });
        }
    }
    unreachable!("loop returns on its last run")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterpolationMode {
    #[default]
    Incremental,
    Binary,
}

/// Order in which differing nodes are visited.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum NodeOrder {
    /// Cell, then output dimension, then bin.
    #[default]
    Canonical,
    /// Cell, then output dimensions in the given priority, then bin.
    DimOrder(Vec<usize>),
    /// Seeded permutation of the canonical order.
    Shuffled(u64),
}

impl NodeOrder {
    fn arrange(&self, diff: &DiffSet, out_dims: usize) -> Result<Vec<NodeId>> {
        let mut nodes: Vec<NodeId> = diff.iter().copied().collect();
        match self {
            NodeOrder::Canonical => {}
            NodeOrder::DimOrder(prio) => {
                let mut sorted = prio.clone();
                sorted.sort_unstable();
                if sorted != (0..out_dims).collect::<Vec<_>>() {
                    return Err(Error::Config(format!(
                        "dimension order {prio:?} is not a permutation of 0..{out_dims}"
                    )));
                }
                let rank: Vec<usize> = (0..out_dims)
                    .map(|j| prio.iter().position(|p| *p == j).expect("permutation"))
                    .collect();
                nodes.sort_by_key(|n| (n.cell, rank[n.dim], n.bin));
            }
            NodeOrder::Shuffled(seed) => {
                nodes.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
            }
        }
        Ok(nodes)
    }
}

/// An input cell whose output cell differs between two behaviors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangedCell {
    pub input: CellIndex,
    pub factual: CellIndex,
    pub repaired: CellIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CauseResult {
    pub schema: String,
    pub model_hash: String,
    pub mode: InterpolationMode,
    pub order: NodeOrder,
    pub factual: NodeAssignment,
    pub counterfactual_raw: NodeAssignment,
    pub counterfactual_minimal: NodeAssignment,
    pub cause: DiffSet,
    pub changed_cells: Vec<ChangedCell>,
    pub repaired_behavior: RepresentativeBehavior,
    /// Distinct simulator evaluations, including the two endpoint checks.
    pub simulator_calls: u64,
    /// Tentative single-node flips considered.
    pub step_ops: u64,
}

impl CauseResult {
    pub const SCHEMA: &'static str = "causal-repair/cause/v1";

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: CauseResult = serde_json::from_str(text)?;
        if r.schema != Self::SCHEMA {
            return Err(Error::Incompatible(format!("unexpected schema `{}`", r.schema)));
        }
        Ok(r)
    }

    /// One line per changed cell.
    pub fn render(&self) -> String {
        let mut s = format!(
            "actual cause: {} node(s) over {} input cell(s)\n",
            self.cause.len(),
            self.changed_cells.len()
        );
        for c in &self.changed_cells {
            s.push_str(&format!(
                "  input cell {:?}: factual output cell {:?} -> repaired output cell {:?}\n",
                c.input.multi, c.factual.multi, c.repaired.multi
            ));
        }
        s
    }
}

/// Cause nodes and changed cells between the factual and a repaired
/// assignment.
pub fn extract_cause(
    v: &NodeAssignment,
    v_star: &NodeAssignment,
    model: &HpModel,
) -> Result<(DiffSet, Vec<ChangedCell>)> {
    let cause = node_diff(v, v_star)?;
    let (g, g_star) = (model.decode(v)?, model.decode(v_star)?);
    let (inp, out) = (model.input_grid(), model.output_grid());
    let mut changed = Vec::new();
    for i in 0..model.cells() {
        if g.target(i) != g_star.target(i) {
            changed.push(ChangedCell {
                input: inp.index_from_flat(i)?,
                factual: out.index_from_flat(g.target(i))?,
                repaired: out.index_from_flat(g_star.target(i))?,
            });
        }
    }
    Ok((cause, changed))
}

/// Memoized verdicts keyed by block bins.
struct Oracle<'a> {
    model: &'a HpModel,
    sim: &'a dyn Simulator,
    memo: HashMap<Vec<usize>, bool>,
    calls: u64,
}

impl<'a> Oracle<'a> {
    fn new(model: &'a HpModel, sim: &'a dyn Simulator) -> Self {
        Oracle {
            model,
            sim,
            memo: HashMap::new(),
            calls: 0,
        }
    }

    fn verdict(&mut self, bins: &[usize]) -> Result<bool> {
        if let Some(v) = self.memo.get(bins) {
            return Ok(*v);
        }
        let v = bins_verdict(self.model, self.sim, bins)?;
        self.calls += 1;
        self.memo.insert(bins.to_vec(), v);
        Ok(v)
    }
}

fn step_toward(cur: usize, target: usize) -> usize {
    if cur > target {
        cur - 1
    } else {
        cur + 1
    }
}

/// Moves from the satisfying `v_prime` toward the violating factual `v`,
/// one bin at a time, keeping each step that preserves satisfaction.
/// Visiting node `(i, j, k)` steps block `(i, j)` one bin toward its
/// factual bin. Passes repeat until a full pass accepts nothing, so no
/// single step back toward `v` keeps the property.
pub fn interpolate(
    model: &HpModel,
    sim: &dyn Simulator,
    v: &NodeAssignment,
    v_prime: &NodeAssignment,
    mode: InterpolationMode,
    order: &NodeOrder,
) -> Result<CauseResult> {
    let mut oracle = Oracle::new(model, sim);
    model.decode(v)?;
    model.decode(v_prime)?;
    if oracle.verdict(v.bins())? {
        return Err(Error::Contract("factual assignment satisfies the property".into()));
    }
    if !oracle.verdict(v_prime.bins())? {
        return Err(Error::Contract("counterfactual assignment violates the property".into()));
    }
    let d = model.out_dims();
    let fact = v.bins();
    let nodes = order.arrange(&node_diff(v, v_prime)?, d)?;
    let mut ops = 0u64;

    let mut cur = v_prime.bins().to_vec();
    if mode == InterpolationMode::Binary {
        let prefix = |t: usize| {
            let mut b = v_prime.bins().to_vec();
            for n in &nodes[..t] {
                let blk = n.cell * d + n.dim;
                b[blk] = step_toward(b[blk], fact[blk]);
            }
            b
        };
        // Invariant: prefix(lo) satisfies, prefix(hi) violates.
        let (mut lo, mut hi) = (0, nodes.len());
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            ops += 1;
            if oracle.verdict(&prefix(mid))? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        cur = prefix(lo);
    }

    loop {
        let mut accepted = false;
        for n in &nodes {
            let blk = n.cell * d + n.dim;
            if cur[blk] == fact[blk] {
                continue;
            }
            let mut cand = cur.clone();
            cand[blk] = step_toward(cur[blk], fact[blk]);
            ops += 1;
            if oracle.verdict(&cand)? {
                cur = cand;
                accepted = true;
            }
        }
        if !accepted {
            break;
        }
    }

    let v_star = model.assignment(cur)?;
    let (cause, changed_cells) = extract_cause(v, &v_star, model)?;
    Ok(CauseResult {
        schema: CauseResult::SCHEMA.to_owned(),
        model_hash: model.hash().to_owned(),
        mode,
        order: order.clone(),
        factual: v.clone(),
        counterfactual_raw: v_prime.clone(),
        repaired_behavior: model.decode(&v_star)?,
        counterfactual_minimal: v_star,
        cause,
        changed_cells,
        simulator_calls: oracle.calls,
        step_ops: ops,
    })
}

/// Verdict after flipping each cause node of `v_star` back toward the
/// factual assignment, where flipping node `(i, j, k)` steps block `(i, j)`
/// one bin toward its factual bin. A 1-minimal repair yields `false` for
/// every node.
pub fn single_restorations(
    model: &HpModel,
    sim: &dyn Simulator,
    v: &NodeAssignment,
    v_star: &NodeAssignment,
) -> Result<Vec<(NodeId, bool)>> {
    let cause = node_diff(v, v_star)?;
    let mut memo: HashMap<(usize, usize), bool> = HashMap::new();
    let mut out = Vec::with_capacity(cause.len());
    for n in cause {
        let verdict = match memo.get(&(n.cell, n.dim)) {
            Some(x) => *x,
            None => {
                let restored = v_star.with_bin(
                    n.cell,
                    n.dim,
                    step_toward(v_star.bin(n.cell, n.dim), v.bin(n.cell, n.dim)),
                )?;
                let x = assignment_verdict(model, sim, &restored)?;
                memo.insert((n.cell, n.dim), x);
                x
            }
        };
        out.push((n, verdict));
    }
    Ok(out)
}
