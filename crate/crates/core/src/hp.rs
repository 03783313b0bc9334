//! Propositional node model over a pair of grids.
//!
//! Node `(i, j, k)` holds when the output for input cell `i` is at least the
//! lower bound of bin `k` along output dimension `j`. Within each `(i, j)`
//! block the valid patterns are thermometer codes `1..10..0`, so a block is
//! fully described by its bin index. Bin 0 starts at the box lower bound,
//! which makes node `(i, j, 0)` true in every valid assignment.

use std::collections::BTreeSet;
use std::fmt;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::behavior::RepresentativeBehavior;
use crate::error::{Error, Result};
use crate::space::GridPartition;

/// `(cell, dim, bin)`. Ordering is the canonical cell, dim, bin loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, usize, usize)", into = "(usize, usize, usize)")]
pub struct NodeId {
    pub cell: usize,
    pub dim: usize,
    pub bin: usize,
}

impl From<(usize, usize, usize)> for NodeId {
    fn from((cell, dim, bin): (usize, usize, usize)) -> Self {
        NodeId { cell, dim, bin }
    }
}

impl From<NodeId> for (usize, usize, usize) {
    fn from(n: NodeId) -> Self {
        (n.cell, n.dim, n.bin)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "u[{},{},{}]", self.cell, self.dim, self.bin)
    }
}

pub type DiffSet = BTreeSet<NodeId>;

#[derive(Debug, Clone, PartialEq)]
pub struct HpModel {
    input_grid: GridPartition,
    output_grid: GridPartition,
    label: String,
    bin_lowers: Vec<Vec<f64>>,
    hash: String,
}

impl HpModel {
    pub const EXOGENOUS_NODE: &'static str = "u_comp";
    pub const PROPERTY_NODE: &'static str = "u_phi";

    /// `label` names what the verdict node judges (plant, initial state,
    /// property) and is folded into the model hash.
    pub fn build(input_grid: GridPartition, output_grid: GridPartition, label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        let bin_lowers = (0..output_grid.dims())
            .map(|j| {
                (0..output_grid.counts()[j])
                    .map(|k| output_grid.bin_lower(j, k))
                    .collect()
            })
            .collect();
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&input_grid)?);
        h.update([0u8]);
        h.update(serde_json::to_vec(&output_grid)?);
        h.update([0u8]);
        h.update(label.as_bytes());
        let hash = hex::encode(h.finalize());
        Ok(HpModel {
            input_grid,
            output_grid,
            label,
            bin_lowers,
            hash,
        })
    }

    pub fn input_grid(&self) -> &GridPartition {
        &self.input_grid
    }

    pub fn output_grid(&self) -> &GridPartition {
        &self.output_grid
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// Number of input cells.
    pub fn cells(&self) -> usize {
        self.input_grid.total()
    }

    pub fn out_dims(&self) -> usize {
        self.output_grid.dims()
    }

    /// Bins along each output dimension.
    pub fn bins_per_dim(&self) -> &[usize] {
        self.output_grid.counts()
    }

    pub fn blocks(&self) -> usize {
        self.cells() * self.out_dims()
    }

    pub fn io_node_count(&self) -> usize {
        self.cells() * self.bins_per_dim().iter().sum::<usize>()
    }

    /// IO nodes plus the exogenous behavior node and the verdict node.
    pub fn node_count(&self) -> usize {
        self.io_node_count() + 2
    }

    pub fn valid_assignments(&self) -> BigUint {
        let per_cell: BigUint = self.bins_per_dim().iter().map(|n| BigUint::from(*n)).product();
        per_cell.pow(self.cells() as u32)
    }

    pub fn log10_valid_assignments(&self) -> f64 {
        self.cells() as f64 * self.bins_per_dim().iter().map(|n| (*n as f64).log10()).sum::<f64>()
    }

    pub fn bin_lower(&self, dim: usize, bin: usize) -> f64 {
        self.bin_lowers[dim][bin]
    }

    fn check_grids(&self, g: &RepresentativeBehavior) -> Result<()> {
        if g.input_grid() != &self.input_grid || g.output_grid() != &self.output_grid {
            return Err(Error::GridMismatch("behavior grids differ from the model's".into()));
        }
        Ok(())
    }

    fn check(&self, v: &NodeAssignment) -> Result<()> {
        if v.model_hash != self.hash {
            return Err(Error::Incompatible(format!(
                "assignment belongs to model {}, not {}",
                v.model_hash, self.hash
            )));
        }
        if v.bins_per_dim != self.bins_per_dim() || v.bins.len() != self.blocks() {
            return Err(Error::Encoding("assignment shape differs from the model".into()));
        }
        Ok(())
    }

    /// Bin index of every `(cell, dim)` block under `g`.
    pub fn bins_of(&self, g: &RepresentativeBehavior) -> Result<Vec<usize>> {
        self.check_grids(g)?;
        let mut bins = Vec::with_capacity(self.blocks());
        for i in 0..self.cells() {
            bins.extend(self.output_grid.multi_of(g.target(i)));
        }
        Ok(bins)
    }

    pub fn behavior_from_bins(&self, bins: &[usize]) -> Result<RepresentativeBehavior> {
        if bins.len() != self.blocks() {
            return Err(Error::Encoding(format!(
                "{} block values for {} blocks",
                bins.len(),
                self.blocks()
            )));
        }
        let d = self.out_dims();
        let map = bins
            .chunks(d)
            .map(|multi| {
                self.output_grid
                    .flat_of(multi)
                    .ok_or_else(|| Error::Encoding(format!("bins {multi:?} outside the output grid")))
            })
            .collect::<Result<Vec<_>>>()?;
        RepresentativeBehavior::new(self.input_grid.clone(), self.output_grid.clone(), map)
    }

    pub fn assignment(&self, bins: Vec<usize>) -> Result<NodeAssignment> {
        NodeAssignment::from_bins(self.hash.clone(), self.bins_per_dim().to_vec(), bins)
    }

    pub fn encode(&self, g: &RepresentativeBehavior) -> Result<NodeAssignment> {
        self.assignment(self.bins_of(g)?)
    }

    pub fn decode(&self, v: &NodeAssignment) -> Result<RepresentativeBehavior> {
        self.check(v)?;
        self.behavior_from_bins(&v.bins)
    }

    pub fn summary(&self) -> ModelSummary {
        ModelSummary {
            schema: ModelSummary::SCHEMA.to_owned(),
            model_hash: self.hash.clone(),
            label: self.label.clone(),
            input_grid: self.input_grid.clone(),
            output_grid: self.output_grid.clone(),
            input_cells: self.cells(),
            output_dims: self.out_dims(),
            bins_per_dim: self.bins_per_dim().to_vec(),
            io_nodes: self.io_node_count(),
            total_nodes: self.node_count(),
            exogenous_node: Self::EXOGENOUS_NODE.to_owned(),
            property_node: Self::PROPERTY_NODE.to_owned(),
            valid_assignments: self.valid_assignments().to_string(),
            log10_valid_assignments: self.log10_valid_assignments(),
            bin_lowers: self.bin_lowers.clone(),
        }
    }
}

/// Audit export of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ModelSummary {
    pub schema: String,
    pub model_hash: String,
    pub label: String,
    pub input_grid: GridPartition,
    pub output_grid: GridPartition,
    pub input_cells: usize,
    pub output_dims: usize,
    pub bins_per_dim: Vec<usize>,
    pub io_nodes: usize,
    pub total_nodes: usize,
    pub exogenous_node: String,
    pub property_node: String,
    /// Decimal string; the count overflows every machine integer.
    pub valid_assignments: String,
    pub log10_valid_assignments: f64,
    pub bin_lowers: Vec<Vec<f64>>,
}

impl ModelSummary {
    pub const SCHEMA: &'static str = "causal-repair/model/v1";

    pub fn model(&self) -> Result<HpModel> {
        if self.schema != Self::SCHEMA {
            return Err(Error::Incompatible(format!("unexpected schema `{}`", self.schema)));
        }
        let m = HpModel::build(self.input_grid.clone(), self.output_grid.clone(), self.label.clone())?;
        if m.hash != self.model_hash {
            return Err(Error::Incompatible("model hash does not match its grids".into()));
        }
        Ok(m)
    }
}

/// A valid value assignment on the IO nodes, stored as one bin index per
/// `(cell, dim)` block in cell-major order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "AssignmentJson", into = "AssignmentJson")]
pub struct NodeAssignment {
    model_hash: String,
    bins_per_dim: Vec<usize>,
    bins: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct AssignmentJson {
    model_hash: String,
    out_dims: usize,
    blocks: Vec<Vec<u8>>,
}

impl TryFrom<AssignmentJson> for NodeAssignment {
    type Error = Error;
    fn try_from(a: AssignmentJson) -> Result<Self> {
        let blocks = a
            .blocks
            .into_iter()
            .map(|b| {
                b.into_iter()
                    .map(|bit| match bit {
                        0 => Ok(false),
                        1 => Ok(true),
                        other => Err(Error::Encoding(format!("bit value {other}"))),
                    })
                    .collect()
            })
            .collect::<Result<Vec<Vec<bool>>>>()?;
        NodeAssignment::from_blocks(a.model_hash, a.out_dims, blocks)
    }
}

impl From<NodeAssignment> for AssignmentJson {
    fn from(v: NodeAssignment) -> Self {
        AssignmentJson {
            out_dims: v.bins_per_dim.len(),
            blocks: v
                .blocks()
                .into_iter()
                .map(|b| b.into_iter().map(u8::from).collect())
                .collect(),
            model_hash: v.model_hash,
        }
    }
}

impl NodeAssignment {
    pub fn from_bins(model_hash: String, bins_per_dim: Vec<usize>, bins: Vec<usize>) -> Result<Self> {
        let d = bins_per_dim.len();
        if d == 0 || bins_per_dim.contains(&0) {
            return Err(Error::Encoding("every output dimension needs a bin".into()));
        }
        if !bins.len().is_multiple_of(d) {
            return Err(Error::Encoding(format!(
                "{} blocks do not split into {d} dimensions",
                bins.len()
            )));
        }
        for (b, k) in bins.iter().enumerate() {
            if *k >= bins_per_dim[b % d] {
                return Err(Error::Encoding(format!(
                    "block {b}: bin {k} beyond {} bins",
                    bins_per_dim[b % d]
                )));
            }
        }
        Ok(NodeAssignment {
            model_hash,
            bins_per_dim,
            bins,
        })
    }

    /// Parses thermometer blocks in cell-major order. Rejects blocks that
    /// are not a nonempty run of ones followed by zeros.
    pub fn from_blocks(model_hash: String, out_dims: usize, blocks: Vec<Vec<bool>>) -> Result<Self> {
        if out_dims == 0 || !blocks.len().is_multiple_of(out_dims) {
            return Err(Error::Encoding(format!(
                "{} blocks do not split into {out_dims} dimensions",
                blocks.len()
            )));
        }
        let bins_per_dim: Vec<usize> = blocks.iter().take(out_dims).map(Vec::len).collect();
        let mut bins = Vec::with_capacity(blocks.len());
        for (b, block) in blocks.iter().enumerate() {
            if block.len() != bins_per_dim[b % out_dims] {
                return Err(Error::Encoding(format!("block {b} has the wrong length")));
            }
            let ones = block.iter().take_while(|bit| **bit).count();
            if ones == 0 {
                return Err(Error::Encoding(format!("block {b}: bin-0 node must hold")));
            }
            if block[ones..].iter().any(|bit| *bit) {
                return Err(Error::Encoding(format!("block {b} is not a thermometer code")));
            }
            bins.push(ones - 1);
        }
        NodeAssignment::from_bins(model_hash, bins_per_dim, bins)
    }

    pub fn model_hash(&self) -> &str {
        &self.model_hash
    }

    pub fn out_dims(&self) -> usize {
        self.bins_per_dim.len()
    }

    pub fn bins(&self) -> &[usize] {
        &self.bins
    }

    pub fn bin(&self, cell: usize, dim: usize) -> usize {
        self.bins[cell * self.out_dims() + dim]
    }

    pub fn node(&self, n: NodeId) -> bool {
        n.bin <= self.bin(n.cell, n.dim)
    }

    pub fn blocks(&self) -> Vec<Vec<bool>> {
        let d = self.out_dims();
        self.bins
            .iter()
            .enumerate()
            .map(|(b, k)| (0..self.bins_per_dim[b % d]).map(|t| t <= *k).collect())
            .collect()
    }

    /// All node values, block after block.
    pub fn bits(&self) -> Vec<bool> {
        self.blocks().concat()
    }

    /// Same assignment with one block moved to `bin`.
    pub fn with_bin(&self, cell: usize, dim: usize, bin: usize) -> Result<Self> {
        let mut bins = self.bins.clone();
        bins[cell * self.out_dims() + dim] = bin;
        NodeAssignment::from_bins(self.model_hash.clone(), self.bins_per_dim.clone(), bins)
    }

    fn compatible(&self, other: &NodeAssignment) -> Result<()> {
        if self.model_hash != other.model_hash
            || self.bins_per_dim != other.bins_per_dim
            || self.bins.len() != other.bins.len()
        {
            return Err(Error::Encoding("assignments come from different models".into()));
        }
        Ok(())
    }
}

/// Nodes whose values differ between two assignments of one model.
pub fn node_diff(v1: &NodeAssignment, v2: &NodeAssignment) -> Result<DiffSet> {
    v1.compatible(v2)?;
    let d = v1.out_dims();
    let mut out = DiffSet::new();
    for (b, (k1, k2)) in v1.bins.iter().zip(&v2.bins).enumerate() {
        let (lo, hi) = if k1 <= k2 { (k1, k2) } else { (k2, k1) };
        out.extend((lo + 1..=*hi).map(|bin| NodeId {
            cell: b / d,
            dim: b % d,
            bin,
        }));
    }
    Ok(out)
}

/// `v1` disagrees with `base` on a subset of the nodes where `v2` does.
pub fn leq_nodes(v1: &NodeAssignment, v2: &NodeAssignment, base: &NodeAssignment) -> Result<bool> {
    let d1 = node_diff(base, v1)?;
    let d2 = node_diff(base, v2)?;
    Ok(d1.is_subset(&d2))
}
