//! Exhaustive checker for the actual-cause conditions on small models.
//!
//! The outcome under study is the property violation. A node set `S` with
//! factual values passes the counterfactual condition when some valid world
//! `A` satisfies the property while `A` with `S` restored to its factual
//! values is valid and still violates it; the remaining differing nodes of
//! `A` act as the contingency and every other node keeps its factual value.
//! The verdict node is never intervened on.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::behavior::{recon, Behavior};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::hp::{node_diff, DiffSet, HpModel, NodeAssignment, NodeId};
use crate::sim::Simulator;
use crate::space::GridPartition;

pub const DEFAULT_BUDGET: u64 = 1_000_000;

/// Largest node set whose subsets are enumerated.
const MAX_SUBSET_NODES: usize = 24;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CandidateCause {
    pub nodes: DiffSet,
    pub factual_values: Vec<bool>,
    pub counterfactual_values: Vec<bool>,
}

impl CandidateCause {
    pub fn new(nodes: DiffSet, factual_values: Vec<bool>, counterfactual_values: Vec<bool>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Contract("a cause needs at least one node".into()));
        }
        if factual_values.len() != nodes.len() || counterfactual_values.len() != nodes.len() {
            return Err(Error::Contract("one value per cause node expected".into()));
        }
        if factual_values.iter().zip(&counterfactual_values).any(|(a, b)| a == b) {
            return Err(Error::Contract("cause values must differ on every node".into()));
        }
        Ok(CandidateCause {
            nodes,
            factual_values,
            counterfactual_values,
        })
    }

    /// The nodes where `v_star` departs from `v`, with both values.
    pub fn between(v: &NodeAssignment, v_star: &NodeAssignment) -> Result<Self> {
        let nodes = node_diff(v, v_star)?;
        let fv = nodes.iter().map(|n| v.node(*n)).collect();
        let cv = nodes.iter().map(|n| v_star.node(*n)).collect();
        CandidateCause::new(nodes, fv, cv)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcVerdict {
    pub ac1: bool,
    pub ac2: bool,
    pub ac3: bool,
}

impl AcVerdict {
    pub fn all(&self) -> bool {
        self.ac1 && self.ac2 && self.ac3
    }
}

/// Verdicts of every valid assignment of a model, computed once.
pub struct Verifier {
    counts: Vec<usize>,
    out_dims: usize,
    factual: Vec<usize>,
    factual_verdict: bool,
    verdicts: Vec<bool>,
}

impl Verifier {
    pub fn new(model: &HpModel, sim: &dyn Simulator, v: &NodeAssignment, budget: u64, exec: Exec) -> Result<Self> {
        let total = model.valid_assignments();
        if total > budget.into() {
            return Err(Error::EnumerationBudget {
                assignments: total.to_string(),
                budget,
            });
        }
        model.decode(v)?;
        let d = model.out_dims();
        let counts: Vec<usize> = (0..model.blocks()).map(|b| model.bins_per_dim()[b % d]).collect();
        let n: usize = counts.iter().product();
        let verdicts = exec.try_map(n, |idx| {
            let bins = unrank(idx, &counts);
            sim.verdict(recon(&model.behavior_from_bins(&bins)?))
        })?;
        let factual = v.bins().to_vec();
        let factual_verdict = verdicts[rank(&factual, &counts)];
        Ok(Verifier {
            counts,
            out_dims: d,
            factual,
            factual_verdict,
            verdicts,
        })
    }

    pub fn assignments(&self) -> usize {
        self.verdicts.len()
    }

    pub fn verdict(&self, bins: &[usize]) -> bool {
        self.verdicts[rank(bins, &self.counts)]
    }

    fn factual_node(&self, n: NodeId) -> bool {
        n.bin <= self.factual[n.cell * self.out_dims + n.dim]
    }

    /// `bins` with the nodes of `set` overwritten by their factual values,
    /// or `None` when that breaks a thermometer block.
    fn restore(&self, bins: &[usize], set: &[NodeId]) -> Option<Vec<usize>> {
        let d = self.out_dims;
        let mut blocks: Vec<Vec<bool>> = bins
            .iter()
            .enumerate()
            .map(|(b, k)| (0..self.counts[b]).map(|t| t <= *k).collect())
            .collect();
        for n in set {
            blocks[n.cell * d + n.dim][n.bin] = self.factual_node(*n);
        }
        blocks
            .iter()
            .map(|bits| {
                let ones = bits.iter().take_while(|x| **x).count();
                (ones > 0 && bits[ones..].iter().all(|x| !x)).then(|| ones - 1)
            })
            .collect()
    }

    fn differing_nodes(&self, bins: &[usize]) -> Vec<NodeId> {
        let d = self.out_dims;
        let mut out = Vec::new();
        for (b, (k, f)) in bins.iter().zip(&self.factual).enumerate() {
            let (lo, hi) = if k <= f { (k, f) } else { (f, k) };
            out.extend((lo + 1..=*hi).map(|bin| NodeId {
                cell: b / d,
                dim: b % d,
                bin,
            }));
        }
        out
    }

    fn ac2(&self, set: &[NodeId]) -> bool {
        (0..self.verdicts.len()).any(|idx| {
            self.verdicts[idx]
                && self
                    .restore(&unrank(idx, &self.counts), set)
                    .is_some_and(|b| !self.verdict(&b))
        })
    }

    pub fn check(&self, candidate: &CandidateCause) -> Result<AcVerdict> {
        let nodes: Vec<NodeId> = candidate.nodes.iter().copied().collect();
        for n in &nodes {
            if n.cell * self.out_dims + n.dim >= self.counts.len() || n.bin >= self.counts[n.cell * self.out_dims + n.dim] {
                return Err(Error::Contract(format!("node {n} is not in the model")));
            }
        }
        if nodes.len() > MAX_SUBSET_NODES {
            return Err(Error::EnumerationBudget {
                assignments: format!("2^{}", nodes.len()),
                budget: 1 << MAX_SUBSET_NODES,
            });
        }
        let values_factual = nodes
            .iter()
            .zip(&candidate.factual_values)
            .all(|(n, x)| self.factual_node(*n) == *x);
        let ac1 = !self.factual_verdict && values_factual;
        let ac2 = self.ac2(&nodes);
        let ac3 = !(1..(1u64 << nodes.len()) - 1).any(|mask| {
            let sub: Vec<NodeId> = nodes
                .iter()
                .enumerate()
                .filter(|(t, _)| mask >> t & 1 == 1)
                .map(|(_, n)| *n)
                .collect();
            ac1 && self.ac2(&sub)
        });
        Ok(AcVerdict { ac1, ac2, ac3 })
    }

    /// Every subset-minimal node set passing the factual and counterfactual
    /// conditions, shortest first then in node order.
    pub fn minimal_causes(&self) -> Result<Vec<CandidateCause>> {
        if self.factual_verdict {
            return Ok(Vec::new());
        }
        let mut found: BTreeSet<Vec<NodeId>> = BTreeSet::new();
        for idx in 0..self.verdicts.len() {
            if !self.verdicts[idx] {
                continue;
            }
            let bins = unrank(idx, &self.counts);
            let diff = self.differing_nodes(&bins);
            if diff.len() > MAX_SUBSET_NODES {
                return Err(Error::EnumerationBudget {
                    assignments: format!("2^{}", diff.len()),
                    budget: 1 << MAX_SUBSET_NODES,
                });
            }
            for mask in 1..1u64 << diff.len() {
                let set: Vec<NodeId> = diff
                    .iter()
                    .enumerate()
                    .filter(|(t, _)| mask >> t & 1 == 1)
                    .map(|(_, n)| *n)
                    .collect();
                if self.restore(&bins, &set).is_some_and(|b| !self.verdict(&b)) {
                    found.insert(set);
                }
            }
        }
        let mut minimal: Vec<&Vec<NodeId>> = found
            .iter()
            .filter(|s| {
                !found
                    .iter()
                    .any(|t| t.len() < s.len() && t.iter().all(|n| s.contains(n)))
            })
            .collect();
        minimal.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        minimal
            .into_iter()
            .map(|s| {
                let fv: Vec<bool> = s.iter().map(|n| self.factual_node(*n)).collect();
                let cv = fv.iter().map(|x| !x).collect();
                CandidateCause::new(s.iter().copied().collect(), fv, cv)
            })
            .collect()
    }
}

fn rank(bins: &[usize], counts: &[usize]) -> usize {
    bins.iter().zip(counts).fold(0, |acc, (b, c)| acc * c + b)
}

fn unrank(mut idx: usize, counts: &[usize]) -> Vec<usize> {
    let mut bins = vec![0; counts.len()];
    for (b, c) in bins.iter_mut().zip(counts).rev() {
        *b = idx % c;
        idx /= c;
    }
    bins
}

/// Checks the three actual-cause conditions for `candidate` against the
/// factual assignment `v`.
pub fn check_ac(candidate: &CandidateCause, model: &HpModel, sim: &dyn Simulator, v: &NodeAssignment) -> Result<AcVerdict> {
    Verifier::new(model, sim, v, DEFAULT_BUDGET, Exec::default())?.check(candidate)
}

pub fn enumerate_minimal_causes(model: &HpModel, sim: &dyn Simulator, v: &NodeAssignment) -> Result<Vec<CandidateCause>> {
    Verifier::new(model, sim, v, DEFAULT_BUDGET, Exec::default())?.minimal_causes()
}

/// Judges a behavior by the bin of each input cell's center output, for
/// toy models whose verdict is a function of the bins.
pub struct BinSimulator<F> {
    input: GridPartition,
    output: GridPartition,
    f: F,
}

impl<F> BinSimulator<F>
where
    F: Fn(&[usize]) -> bool + Send + Sync,
{
    pub fn new(model: &HpModel, f: F) -> Self {
        BinSimulator {
            input: model.input_grid().clone(),
            output: model.output_grid().clone(),
            f,
        }
    }
}

impl<F> Simulator for BinSimulator<F>
where
    F: Fn(&[usize]) -> bool + Send + Sync,
{
    fn verdict(&self, b: &dyn Behavior) -> Result<bool> {
        let mut bins = Vec::with_capacity(self.input.total() * self.output.dims());
        for i in 0..self.input.total() {
            let y = self.output.space().clamp(&b.eval(&self.input.center_of_flat(i)?));
            bins.extend(self.output.cell_of(&y)?.multi);
        }
        Ok((self.f)(&bins))
    }
}

/// Golden-file form: causes of one model, keyed by its hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CauseCatalog {
    pub schema: String,
    pub model_hash: String,
    pub causes: Vec<DiffSet>,
}

impl CauseCatalog {
    pub const SCHEMA: &'static str = "causal-repair/causes/v1";

    pub fn new(model: &HpModel, causes: &[CandidateCause]) -> Self {
        CauseCatalog {
            schema: Self::SCHEMA.to_owned(),
            model_hash: model.hash().to_owned(),
            causes: causes.iter().map(|c| c.nodes.clone()).collect(),
        }
    }
}
