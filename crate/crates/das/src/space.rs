//! Cell-based architecture search space.
//!
//! An [`ArchSpec`] is a small DAG over at most seven nodes: node 0 is the
//! cell input, the last node is the cell output, and interior nodes carry
//! one of three ops. Specs are sampled uniformly (by rejection), validated,
//! and compiled into [`Network`]s by stacking cells in a fixed skeleton.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{LayerKind, Network, NnError, Node, Src};
use crate::seed::{fnv1a64, stream_rng};

pub const MIN_NODES: usize = 2;
pub const MAX_NODES: usize = 7;
pub const MAX_EDGES: usize = 9;
const SAMPLE_ATTEMPT_LIMIT: usize = 100_000;

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("invalid spec: {0:?}")]
    Invalid(Vec<Violation>),
    #[error("malformed spec: {0}")]
    Malformed(String),
    #[error("spec hash mismatch: stored {stored}, computed {computed}")]
    HashMismatch { stored: String, computed: String },
    #[error("rejection sampling exhausted after {0} attempts")]
    SamplingExhausted(usize),
    #[error("compile failed in cell {cell}: {source}")]
    Compile {
        cell: usize,
        #[source]
        source: NnError,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// Interior node not on any input-to-output path.
    DanglingNode(usize),
    /// More than [`MAX_EDGES`] edges.
    EdgeBudget(usize),
    /// No path from input to output at all.
    Disconnected,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::DanglingNode(k) => write!(f, "dangling node {}", k),
            Violation::EdgeBudget(n) => write!(f, "edge budget: {} edges > {}", n, MAX_EDGES),
            Violation::Disconnected => write!(f, "no input-to-output path"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpLabel {
    #[serde(rename = "CONV1x1")]
    Conv1x1,
    #[serde(rename = "CONV3x3")]
    Conv3x3,
    #[serde(rename = "MAXPOOL3x3")]
    MaxPool3x3,
}

impl OpLabel {
    pub const ALL: [OpLabel; 3] = [OpLabel::Conv1x1, OpLabel::Conv3x3, OpLabel::MaxPool3x3];

    fn name(&self) -> &'static str {
        match self {
            OpLabel::Conv1x1 => "CONV1x1",
            OpLabel::Conv3x3 => "CONV3x3",
            OpLabel::MaxPool3x3 => "MAXPOOL3x3",
        }
    }
}

/// DAG encoding of one cell: strictly upper-triangular adjacency plus op
/// labels for the interior nodes. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    num_nodes: usize,
    adjacency: Vec<Vec<bool>>,
    node_ops: Vec<OpLabel>,
    spec_hash: String,
}

#[derive(Serialize, Deserialize)]
struct SpecJson {
    nodes: usize,
    adjacency: Vec<[usize; 2]>,
    ops: Vec<OpLabel>,
    hash: String,
}

impl ArchSpec {
    /// Construct from an edge list. Enforces the structural encoding
    /// (node range, strict upper triangularity); graph-level invariants are
    /// reported by [`ArchSpec::validate`].
    pub fn new(
        num_nodes: usize,
        edges: &[(usize, usize)],
        node_ops: Vec<OpLabel>,
    ) -> Result<Self, SpaceError> {
        if !(MIN_NODES..=MAX_NODES).contains(&num_nodes) {
            return Err(SpaceError::Malformed(format!(
                "num_nodes {} outside [{}, {}]",
                num_nodes, MIN_NODES, MAX_NODES
            )));
        }
        if node_ops.len() != num_nodes - 2 {
            return Err(SpaceError::Malformed(format!(
                "{} ops for {} interior nodes",
                node_ops.len(),
                num_nodes - 2
            )));
        }
        let mut adjacency = vec![vec![false; num_nodes]; num_nodes];
        for &(i, j) in edges {
            if i >= j || j >= num_nodes {
                return Err(SpaceError::Malformed(format!(
                    "edge ({}, {}) is not strictly upper triangular in {} nodes",
                    i, j, num_nodes
                )));
            }
            if adjacency[i][j] {
                return Err(SpaceError::Malformed(format!("duplicate edge ({}, {})", i, j)));
            }
            adjacency[i][j] = true;
        }
        let mut spec = ArchSpec {
            num_nodes,
            adjacency,
            node_ops,
            spec_hash: String::new(),
        };
        spec.spec_hash = spec.compute_hash();
        Ok(spec)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn node_ops(&self) -> &[OpLabel] {
        &self.node_ops
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i][j]
    }

    /// Edges in canonical (lexicographic) order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.num_nodes {
            for j in (i + 1)..self.num_nodes {
                if self.adjacency[i][j] {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn spec_hash(&self) -> &str {
        &self.spec_hash
    }

    /// spec_hash as an integer, for tie-breaking.
    pub fn hash_u64(&self) -> u64 {
        u64::from_str_radix(&self.spec_hash, 16).expect("hash is hex")
    }

    fn compute_hash(&self) -> String {
        let mut canon = format!("n={};e=", self.num_nodes);
        for (idx, (i, j)) in self.edges().iter().enumerate() {
            if idx > 0 {
                canon.push(',');
            }
            canon.push_str(&format!("{}-{}", i, j));
        }
        canon.push_str(";ops=");
        for (idx, op) in self.node_ops.iter().enumerate() {
            if idx > 0 {
                canon.push(',');
            }
            canon.push_str(op.name());
        }
        format!("{:016x}", fnv1a64(canon.as_bytes()))
    }

    /// Empty list means the spec satisfies every invariant.
    pub fn validate(&self) -> Vec<Violation> {
        let n = self.num_nodes;
        let mut violations = Vec::new();
        let edge_count = self.edges().len();
        if edge_count > MAX_EDGES {
            violations.push(Violation::EdgeBudget(edge_count));
        }
        // Reachability from input, co-reachability to output.
        let mut from_input = vec![false; n];
        from_input[0] = true;
        for i in 0..n {
            if from_input[i] {
                for j in (i + 1)..n {
                    if self.adjacency[i][j] {
                        from_input[j] = true;
                    }
                }
            }
        }
        let mut to_output = vec![false; n];
        to_output[n - 1] = true;
        for j in (0..n).rev() {
            if to_output[j] {
                for i in 0..j {
                    if self.adjacency[i][j] {
                        to_output[i] = true;
                    }
                }
            }
        }
        if !(from_input[n - 1]) {
            violations.push(Violation::Disconnected);
        }
        for v in 1..(n - 1) {
            if !(from_input[v] && to_output[v]) {
                violations.push(Violation::DanglingNode(v));
            }
        }
        violations
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }

    /// Canonical JSON encoding (edges sorted lexicographically).
    pub fn to_json(&self) -> String {
        let doc = SpecJson {
            nodes: self.num_nodes,
            adjacency: self.edges().iter().map(|&(i, j)| [i, j]).collect(),
            ops: self.node_ops.clone(),
            hash: self.spec_hash.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("spec serializes")
    }

    /// Parse the canonical JSON encoding; the stored hash must match the
    /// recomputed one.
    pub fn from_json(text: &str) -> Result<Self, SpaceError> {
        let doc: SpecJson = serde_json::from_str(text)?;
        let edges: Vec<(usize, usize)> = doc.adjacency.iter().map(|e| (e[0], e[1])).collect();
        let spec = ArchSpec::new(doc.nodes, &edges, doc.ops)?;
        if spec.spec_hash != doc.hash {
            return Err(SpaceError::HashMismatch {
                stored: doc.hash,
                computed: spec.spec_hash,
            });
        }
        Ok(spec)
    }
}

/// Macro-architecture the cells are stacked into.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skeleton {
    pub stem_channels: usize,
    pub num_stacks: usize,
    pub cells_per_stack: usize,
    pub classes: usize,
    /// (channels, height, width)
    pub input_shape: (usize, usize, usize),
}

impl Default for Skeleton {
    /// Desk-scale default: small enough that fully training one
    /// architecture takes minutes on a CPU.
    fn default() -> Self {
        Skeleton {
            stem_channels: 16,
            num_stacks: 3,
            cells_per_stack: 1,
            classes: 10,
            input_shape: (3, 16, 16),
        }
    }
}

impl Skeleton {
    /// Channel count of stack `s` (doubles at each downsample).
    pub fn stack_channels(&self, s: usize) -> usize {
        self.stem_channels << s
    }
}

/// Uniform sample over (adjacency, ops) conditioned on validity,
/// deterministic given `seed`.
pub fn sample_random(seed: u64) -> Result<ArchSpec, SpaceError> {
    let mut rng = stream_rng(seed, "sample-arch", 0);
    sample_random_with(&mut rng)
}

/// As [`sample_random`], drawing from a caller-owned RNG stream.
pub fn sample_random_with(rng: &mut impl Rng) -> Result<ArchSpec, SpaceError> {
    for _ in 0..SAMPLE_ATTEMPT_LIMIT {
        let num_nodes = rng.gen_range(MIN_NODES..=MAX_NODES);
        let mut edges = Vec::new();
        for i in 0..num_nodes {
            for j in (i + 1)..num_nodes {
                if rng.gen_bool(0.5) {
                    edges.push((i, j));
                }
            }
        }
        let ops: Vec<OpLabel> = (0..num_nodes.saturating_sub(2))
            .map(|_| OpLabel::ALL[rng.gen_range(0..3)])
            .collect();
        let spec = ArchSpec::new(num_nodes, &edges, ops)?;
        if spec.is_valid() {
            return Ok(spec);
        }
    }
    Err(SpaceError::SamplingExhausted(SAMPLE_ATTEMPT_LIMIT))
}

struct NetBuilder {
    nodes: Vec<Node>,
}

impl NetBuilder {
    fn push(&mut self, kind: LayerKind, inputs: Vec<Src>) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node { id, kind, inputs });
        id
    }

    fn conv_relu(
        &mut self,
        k: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        padding: usize,
        input: Src,
    ) -> usize {
        let conv = self.push(LayerKind::conv2d(k, cin, cout, stride, padding), vec![input]);
        self.push(LayerKind::Relu, vec![Src::Node(conv)])
    }
}

/// Compile a valid spec into a network: stem, stacked cells with
/// downsampling between stacks, global average pooling, and a linear
/// classifier. Deterministic; parameters are zeroed until `init_params`.
pub fn compile(spec: &ArchSpec, skel: &Skeleton) -> Result<Network, SpaceError> {
    let violations = spec.validate();
    if !violations.is_empty() {
        return Err(SpaceError::Invalid(violations));
    }
    let (cin, h, w) = skel.input_shape;
    let mut b = NetBuilder { nodes: Vec::new() };

    // Stem: 3x3 conv into stem_channels.
    let mut cur = b.conv_relu(3, cin, skel.stem_channels, 1, 1, Src::Input);
    for s in 0..skel.num_stacks {
        let c = skel.stack_channels(s);
        if s > 0 {
            // Downsample: halve spatial extent, double channels.
            let pool = b.push(
                LayerKind::MaxPool2d {
                    k: 2,
                    stride: 2,
                    padding: 0,
                },
                vec![Src::Node(cur)],
            );
            cur = b.conv_relu(1, c / 2, c, 1, 0, Src::Node(pool));
        }
        for _ in 0..skel.cells_per_stack {
            cur = build_cell(&mut b, spec, c, cur);
        }
    }
    let c_last = skel.stack_channels(skel.num_stacks - 1);
    let gap = b.push(LayerKind::GlobalAvgPool, vec![Src::Node(cur)]);
    b.push(LayerKind::linear(c_last, skel.classes), vec![Src::Node(gap)]);

    Network::new(b.nodes, [cin, h, w], skel.classes).map_err(|source| SpaceError::Compile {
        cell: 0,
        source,
    })
}

/// Wire one cell. Multi-input nodes sum their in-edges; edges from the
/// cell input pass a 1x1 projection first. The cell output concatenates
/// all interior nodes with an edge to the output node (projected back to
/// the cell width when more than one), or passes the input through when
/// the cell has no interior leaves.
fn build_cell(b: &mut NetBuilder, spec: &ArchSpec, channels: usize, cell_input: usize) -> usize {
    let n = spec.num_nodes();
    // net node id of each cell node's output (cell node 0 = cell input).
    let mut cell_out: Vec<Option<usize>> = vec![None; n];
    cell_out[0] = Some(cell_input);
    for v in 1..(n - 1) {
        let mut branches = Vec::new();
        for u in 0..v {
            if spec.has_edge(u, v) {
                let src = cell_out[u].expect("valid spec: predecessor on path");
                let branch = if u == 0 {
                    b.conv_relu(1, channels, channels, 1, 0, Src::Node(src))
                } else {
                    src
                };
                branches.push(branch);
            }
        }
        let joined = if branches.len() == 1 {
            branches[0]
        } else {
            b.push(
                LayerKind::Add,
                branches.iter().map(|&id| Src::Node(id)).collect(),
            )
        };
        let op_out = match spec.node_ops()[v - 1] {
            OpLabel::Conv1x1 => b.conv_relu(1, channels, channels, 1, 0, Src::Node(joined)),
            OpLabel::Conv3x3 => b.conv_relu(3, channels, channels, 1, 1, Src::Node(joined)),
            OpLabel::MaxPool3x3 => b.push(
                LayerKind::MaxPool2d {
                    k: 3,
                    stride: 1,
                    padding: 1,
                },
                vec![Src::Node(joined)],
            ),
        };
        cell_out[v] = Some(op_out);
    }
    let leaves: Vec<usize> = (1..(n - 1))
        .filter(|&v| spec.has_edge(v, n - 1))
        .map(|v| cell_out[v].expect("leaf computed"))
        .collect();
    match leaves.len() {
        0 => cell_input,
        1 => leaves[0],
        l => {
            let cat = b.push(
                LayerKind::Concat,
                leaves.iter().map(|&id| Src::Node(id)).collect(),
            );
            b.conv_relu(1, l * channels, channels, 1, 0, Src::Node(cat))
        }
    }
}
