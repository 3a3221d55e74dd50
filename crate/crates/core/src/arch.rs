//! The U-Net family as computation graphs.
//!
//! Every member shares one addressing scheme: node `X^{i,j}` sits at
//! resolution level `i` (after `i` down-samplings) and position `j` along
//! the skip row, with `i + j <= d`. A node either pools its upper neighbour
//! (`j = 0`) or runs a convolution block over the channel concatenation of
//! some same-level predecessors followed by the up-sampled `X^{i+1,j-1}`.
//! The variants differ only in which same-level predecessors are used:
//!
//! | variant     | nodes               | same-level inputs of `X^{i,j}` |
//! |-------------|---------------------|--------------------------------|
//! | `unet`      | `j = 0` or `i+j = d` | `X^{i,0}`                     |
//! | `unet_e`    | all `i+j <= d`       | `X^{i,0}`                     |
//! | `unet_plus` | all `i+j <= d`       | `X^{i,j-1}`                   |
//! | `unet_pp`   | all `i+j <= d`       | `X^{i,0}, …, X^{i,j-1}`       |

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::{self, Write as _};
use core::str::FromStr;

use crate::autograd::{Graph, NodeId, Op};
use crate::layers::{ConvLayer, UpsampleParams};
use crate::loss::LossConfig;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const DEFAULT_WIDTHS: [usize; 5] = [32, 64, 128, 256, 512];
pub const WIDE_WIDTHS: [usize; 5] = [35, 70, 140, 280, 560];
pub const MAX_DEPTH: usize = 4;

pub const INPUT: &str = "input";
pub const LABELS: &str = "labels";
pub const LOSS: &str = "loss";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    Unet,
    UnetE,
    UnetPlus,
    UnetPP,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Unet, Variant::UnetE, Variant::UnetPlus, Variant::UnetPP];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Unet => "unet",
            Variant::UnetE => "unet_e",
            Variant::UnetPlus => "unet_plus",
            Variant::UnetPP => "unet_pp",
        }
    }

    pub fn has_node(self, depth: usize, a: NodeAddress) -> bool {
        a.i + a.j <= depth && (self != Variant::Unet || a.j == 0 || a.i + a.j == depth)
    }

    /// Same-level predecessors of `X^{i,j}` (`j > 0`), in concatenation order.
    fn skip_inputs(self, a: NodeAddress) -> Vec<NodeAddress> {
        match self {
            Variant::UnetPP => (0..a.j).map(|k| NodeAddress::new(a.i, k)).collect(),
            Variant::UnetPlus => vec![NodeAddress::new(a.i, a.j - 1)],
            Variant::Unet | Variant::UnetE => vec![NodeAddress::new(a.i, 0)],
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Spec {
                field: "variant",
                reason: format!("unknown variant `{s}` (expected unet, unet_e, unet_plus or unet_pp)"),
            })
    }
}

/// `X^{i,j}`
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeAddress {
    pub i: usize,
    pub j: usize,
}

impl NodeAddress {
    pub const fn new(i: usize, j: usize) -> Self {
        NodeAddress { i, j }
    }

    pub fn name(self) -> String {
        self.to_string()
    }

    pub fn head_name(self) -> String {
        format!("head@{self}")
    }
}

impl fmt::Display for NodeAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "X^{{{},{}}}", self.i, self.j)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    pub variant: Variant,
    pub depth: usize,
    /// Channel width per level, `depth + 1` entries.
    pub widths: Vec<usize>,
    pub classes: usize,
    pub deep_supervision: bool,
    /// `(channels, height, width)` of the training input.
    pub input: (usize, usize, usize),
    /// Convolutions per block H(·).
    pub convs_per_block: usize,
}

impl ArchSpec {
    /// Default widths truncated to `depth`, one class, 64×64 single-channel input.
    pub fn new(variant: Variant, depth: usize) -> Self {
        let widths = DEFAULT_WIDTHS.iter().copied().take(depth + 1).collect();
        ArchSpec {
            variant,
            depth,
            widths,
            classes: 1,
            deep_supervision: variant == Variant::UnetE,
            input: (1, 64, 64),
            convs_per_block: 2,
        }
    }

    pub fn with_widths(mut self, widths: &[usize]) -> Self {
        self.widths = widths.to_vec();
        self
    }

    pub fn with_deep_supervision(mut self, ds: bool) -> Self {
        self.deep_supervision = ds;
        self
    }

    pub fn with_input(mut self, channels: usize, height: usize, width: usize) -> Self {
        self.input = (channels, height, width);
        self
    }

    pub fn with_classes(mut self, classes: usize) -> Self {
        self.classes = classes;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason: String| Err(Error::Spec { field, reason });
        if self.depth < 1 || self.depth > MAX_DEPTH {
            return bad("depth", format!("must be in 1..={MAX_DEPTH}, got {}", self.depth));
        }
        if self.widths.len() != self.depth + 1 {
            return bad(
                "widths",
                format!("need {} entries for depth {}, got {}", self.depth + 1, self.depth, self.widths.len()),
            );
        }
        if self.widths.contains(&0) {
            return bad("widths", "all widths must be >= 1".into());
        }
        if self.classes == 0 {
            return bad("classes", "must be >= 1".into());
        }
        if self.variant == Variant::UnetE && !self.deep_supervision {
            return bad("deep_supervision", "unet_e requires deep supervision".into());
        }
        if self.convs_per_block == 0 {
            return bad("convs_per_block", "must be >= 1".into());
        }
        let (c, h, w) = self.input;
        if c == 0 {
            return bad("input_channels", "must be >= 1".into());
        }
        let m = 1usize << self.depth;
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return bad("input", format!("height and width must be positive multiples of {m}, got {h}x{w}"));
        }
        Ok(())
    }

    /// Node set in build order (by `j`, then `i`).
    pub fn nodes(&self) -> Vec<NodeAddress> {
        let mut v = Vec::new();
        for j in 0..=self.depth {
            for i in 0..=self.depth - j {
                let a = NodeAddress::new(i, j);
                if self.variant.has_node(self.depth, a) {
                    v.push(a);
                }
            }
        }
        v
    }

    /// Positions `j` of `X^{0,j}` carrying a head. A plain U-Net has no
    /// intermediate top-row nodes, so it only ever gets the final head.
    pub fn head_positions(&self) -> Vec<usize> {
        if self.deep_supervision {
            (1..=self.depth)
                .filter(|&j| self.variant.has_node(self.depth, NodeAddress::new(0, j)))
                .collect()
        } else {
            vec![self.depth]
        }
    }

    /// Architecture-level inputs of a node (the up-sampled one last).
    pub fn node_inputs(&self, a: NodeAddress) -> Vec<NodeAddress> {
        if a.j == 0 {
            if a.i == 0 {
                Vec::new()
            } else {
                vec![NodeAddress::new(a.i - 1, 0)]
            }
        } else {
            let mut v = self.variant.skip_inputs(a);
            v.push(NodeAddress::new(a.i + 1, a.j - 1));
            v
        }
    }

    /// Canonical `key=value` lines, one per field, fixed order.
    pub fn to_kv(&self) -> String {
        let widths: Vec<String> = self.widths.iter().map(|w| w.to_string()).collect();
        format!(
            "variant={}\ndepth={}\nwidths={}\nclasses={}\ndeep_supervision={}\ninput_channels={}\ninput_height={}\ninput_width={}\nconvs_per_block={}\n",
            self.variant,
            self.depth,
            widths.join(","),
            self.classes,
            self.deep_supervision,
            self.input.0,
            self.input.1,
            self.input.2,
            self.convs_per_block
        )
    }

    /// Parses [`ArchSpec::to_kv`] output. Every key is required; unknown keys are errors.
    pub fn from_kv(text: &str) -> Result<ArchSpec> {
        let mut map = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("malformed line `{line}`")))?;
            map.insert(k.trim(), v.trim());
        }
        fn take<'a>(map: &mut BTreeMap<&str, &'a str>, key: &'static str) -> Result<&'a str> {
            map.remove(key).ok_or_else(|| Error::Config(format!("missing key `{key}`")))
        }
        fn num(key: &'static str, v: &str) -> Result<usize> {
            v.parse().map_err(|_| Error::Config(format!("`{key}`: expected an integer, got `{v}`")))
        }
        let variant = take(&mut map, "variant")?.parse()?;
        let depth = num("depth", take(&mut map, "depth")?)?;
        let widths = take(&mut map, "widths")?
            .split(',')
            .map(|w| num("widths", w.trim()))
            .collect::<Result<Vec<_>>>()?;
        let classes = num("classes", take(&mut map, "classes")?)?;
        let deep_supervision = match take(&mut map, "deep_supervision")? {
            "true" => true,
            "false" => false,
            v => return Err(Error::Config(format!("`deep_supervision`: expected true/false, got `{v}`"))),
        };
        let input = (
            num("input_channels", take(&mut map, "input_channels")?)?,
            num("input_height", take(&mut map, "input_height")?)?,
            num("input_width", take(&mut map, "input_width")?)?,
        );
        let convs_per_block = num("convs_per_block", take(&mut map, "convs_per_block")?)?;
        if let Some(k) = map.keys().next() {
            return Err(Error::Config(format!("unknown key `{k}`")));
        }
        Ok(ArchSpec {
            variant,
            depth,
            widths,
            classes,
            deep_supervision,
            input,
            convs_per_block,
        })
    }
}

/// Stable 64-bit FNV-1a, used to give every parameter its own random stream.
fn name_hash(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// A built family member: the graph plus its architecture bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: ArchSpec,
    graph: Graph,
    nodes: Vec<NodeAddress>,
    heads: Vec<usize>,
}

impl Network {
    /// Wires the graph and draws He-normal weights (zero biases).
    ///
    /// Each parameter is drawn from its own stream keyed by its name, so a
    /// node's initial weights do not depend on which other nodes exist.
    pub fn build(spec: &ArchSpec, rng: &Rng) -> Result<Network> {
        spec.validate()?;
        let mut g = Graph::new();
        let mut ids: BTreeMap<NodeAddress, NodeId> = BTreeMap::new();
        let input = g.input(INPUT, &[None, Some(spec.input.0), None, None])?;
        let nodes = spec.nodes();

        let param = |g: &mut Graph, name: String, make: &dyn Fn(&mut Rng) -> Result<Tensor>| -> Result<NodeId> {
            let mut r = rng.split(name_hash(&name));
            let t = make(&mut r)?;
            g.add_param(name, t)
        };

        for &a in &nodes {
            let (block_in, in_ch) = if a.j == 0 {
                if a.i == 0 {
                    (input, spec.input.0)
                } else {
                    let up = ids[&NodeAddress::new(a.i - 1, 0)];
                    (g.op(format!("{a}/down"), Op::MaxPool2, &[up])?, spec.widths[a.i - 1])
                }
            } else {
                let below = NodeAddress::new(a.i + 1, a.j - 1);
                let (ci, co) = (spec.widths[a.i + 1], spec.widths[a.i]);
                let k = param(&mut g, format!("{a}/up/kernel"), &|r| Ok(UpsampleParams::he_init(ci, co, r)?.kernel))?;
                let b = param(&mut g, format!("{a}/up/bias"), &|_| Tensor::zeros(&[co]))?;
                let up = g.op(format!("{a}/up"), Op::ConvTranspose2, &[ids[&below], k, b])?;
                let mut parts: Vec<NodeId> = spec.variant.skip_inputs(a).iter().map(|s| ids[s]).collect();
                let in_ch = parts.len() * spec.widths[a.i] + co;
                parts.push(up);
                (g.op(format!("{a}/concat"), Op::Concat, &parts)?, in_ch)
            };
            let width = spec.widths[a.i];
            let mut h = block_in;
            let mut c = in_ch;
            for l in 0..spec.convs_per_block {
                let k = param(&mut g, format!("{a}/conv{l}/kernel"), &|r| Ok(ConvLayer::he_init(c, width, 3, r)?.kernel))?;
                let b = param(&mut g, format!("{a}/conv{l}/bias"), &|_| Tensor::zeros(&[width]))?;
                let conv = g.op(format!("{a}/conv{l}"), Op::Conv2d, &[h, k, b])?;
                let relu_name = if l + 1 == spec.convs_per_block {
                    a.name()
                } else {
                    format!("{a}/relu{l}")
                };
                h = g.op(relu_name, Op::Relu, &[conv])?;
                c = width;
            }
            ids.insert(a, h);
        }

        let heads = spec.head_positions();
        for &j in &heads {
            let a = NodeAddress::new(0, j);
            let hn = a.head_name();
            let (w0, classes) = (spec.widths[0], spec.classes);
            let k = param(&mut g, format!("{hn}/kernel"), &|r| Ok(ConvLayer::he_init(w0, classes, 1, r)?.kernel))?;
            let b = param(&mut g, format!("{hn}/bias"), &|_| Tensor::zeros(&[classes]))?;
            let logits = g.op(format!("{hn}/logits"), Op::Conv2d, &[ids[&a], k, b])?;
            let out = g.op(hn.clone(), Op::Sigmoid, &[logits])?;
            g.mark_output(hn, out);
        }

        Ok(Network {
            spec: spec.clone(),
            graph: g,
            nodes,
            heads,
        })
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn graph_mut(&mut self) -> &mut Graph {
        &mut self.graph
    }

    /// Architecture nodes present in the graph, in build order.
    pub fn nodes(&self) -> &[NodeAddress] {
        &self.nodes
    }

    /// Positions `j` of the heads at `X^{0,j}`, ascending.
    pub fn heads(&self) -> &[usize] {
        &self.heads
    }

    pub fn head_names(&self) -> Vec<String> {
        self.heads.iter().map(|&j| NodeAddress::new(0, j).head_name()).collect()
    }

    pub fn node_inputs(&self, a: NodeAddress) -> Vec<NodeAddress> {
        self.spec.node_inputs(a)
    }

    /// Number of architecture-level edges (one per node input).
    pub fn edge_count(&self) -> usize {
        self.nodes.iter().map(|&a| self.node_inputs(a).len()).sum()
    }

    pub fn param_count(&self) -> usize {
        self.graph.param_count()
    }

    /// Keeps what the head at `X^{0,keep_depth}` depends on and drops the rest.
    ///
    /// For `unet_pp` and `unet_plus` the kept nodes are exactly
    /// `{X^{i,j} : i + j <= keep_depth}`. Parameters are copied unchanged.
    pub fn prune(&self, keep_depth: usize) -> Result<Network> {
        if keep_depth < 1 || keep_depth > self.spec.depth {
            return Err(Error::Range {
                what: "keep_depth",
                value: keep_depth,
                lo: 1,
                hi: self.spec.depth,
            });
        }
        if !self.heads.contains(&keep_depth) {
            return Err(Error::Contract(format!(
                "no head at X^{{0,{keep_depth}}}; pruning needs a deeply supervised network"
            )));
        }
        let head = NodeAddress::new(0, keep_depth).head_name();
        let graph = self.graph.subgraph(&[&head])?;
        let nodes = self.nodes.iter().copied().filter(|a| graph.contains(&a.name())).collect();
        let mut spec = self.spec.clone();
        spec.depth = keep_depth;
        spec.widths.truncate(keep_depth + 1);
        spec.deep_supervision = false;
        Ok(Network {
            spec,
            graph,
            nodes,
            heads: vec![keep_depth],
        })
    }

    /// The inference graph extended with per-head hybrid losses and their
    /// weighted sum under [`LOSS`]; labels are fed as [`LABELS`].
    pub fn training_graph(&self, cfg: &LossConfig) -> Result<Graph> {
        cfg.validate()?;
        let weights = cfg.weights_for(self.heads.len())?;
        let mut g = self.graph.clone();
        let labels = g.input(LABELS, &[None, Some(self.spec.classes), None, None])?;
        let mut terms = Vec::new();
        for name in self.head_names() {
            let p = g.id(&name)?;
            terms.push(g.op(format!("loss@{}", &name["head@".len()..]), Op::HybridLoss(cfg.clone()), &[labels, p])?);
        }
        let total = g.op(LOSS, Op::WeightedSum(weights), &terms)?;
        g.mark_output(LOSS, total);
        Ok(g)
    }

    /// Copies every parameter of this network from `source` by name.
    pub fn load_params(&mut self, source: &Graph) -> Result<()> {
        let ids: Vec<NodeId> = self.graph.param_ids().collect();
        for id in ids {
            let name = self.graph.node(id).name.clone();
            let value = source.param(&name)?.clone();
            self.graph.set_param(&name, value)?;
        }
        Ok(())
    }

    pub fn summary(&self) -> Summary {
        let (_, h, w) = self.spec.input;
        let mut rows = Vec::new();
        let prefix_params = |prefix: &str| -> usize {
            self.graph
                .params()
                .filter(|(n, _)| n.strip_prefix(prefix).is_some_and(|rest| rest.starts_with('/')))
                .map(|(_, t)| t.len())
                .sum()
        };
        for &a in &self.nodes {
            let inputs = if a.j == 0 {
                if a.i == 0 {
                    vec![INPUT.to_string()]
                } else {
                    vec![format!("D({})", NodeAddress::new(a.i - 1, 0))]
                }
            } else {
                let mut v: Vec<String> = self.spec.variant.skip_inputs(a).iter().map(|s| s.name()).collect();
                v.push(format!("U({})", NodeAddress::new(a.i + 1, a.j - 1)));
                v
            };
            let s = 1usize << a.i;
            rows.push(SummaryRow {
                node: a.name(),
                op: "conv_block".into(),
                inputs,
                out_shape: vec![1, self.spec.widths[a.i], h / s, w / s],
                params: prefix_params(&a.name()),
            });
        }
        for &j in &self.heads {
            let a = NodeAddress::new(0, j);
            rows.push(SummaryRow {
                node: a.head_name(),
                op: "head".into(),
                inputs: vec![a.name()],
                out_shape: vec![1, self.spec.classes, h, w],
                params: prefix_params(&a.head_name()),
            });
        }
        Summary {
            spec: self.spec.clone(),
            rows,
            edges: self
                .nodes
                .iter()
                .flat_map(|&a| self.node_inputs(a).into_iter().map(move |src| (src, a)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryRow {
    pub node: String,
    pub op: String,
    pub inputs: Vec<String>,
    pub out_shape: Vec<usize>,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Summary {
    pub spec: ArchSpec,
    pub rows: Vec<SummaryRow>,
    /// Architecture edges `(from, to)`.
    pub edges: Vec<(NodeAddress, NodeAddress)>,
}

fn shape_str(s: &[usize]) -> String {
    s.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("x")
}

impl Summary {
    pub fn total_params(&self) -> usize {
        self.rows.iter().map(|r| r.params).sum()
    }

    pub fn node_count(&self) -> usize {
        self.rows.iter().filter(|r| r.op == "conv_block").count()
    }

    pub fn head_count(&self) -> usize {
        self.rows.iter().filter(|r| r.op == "head").count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("node,op,inputs,out_shape,params\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", r.node, r.op, r.inputs.join(" "), shape_str(&r.out_shape), r.params);
        }
        out
    }

    /// Column-aligned table followed by a totals line.
    pub fn to_text(&self) -> String {
        let header = ["node", "op", "inputs", "out_shape", "params"];
        let cells: Vec<[String; 5]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.node.clone(),
                    r.op.clone(),
                    r.inputs.join(" "),
                    shape_str(&r.out_shape),
                    r.params.to_string(),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let mut line = |cols: [&str; 5]| {
            for (k, (c, w)) in cols.iter().zip(widths).enumerate() {
                if k == 4 {
                    let _ = write!(out, "{c:>w$}");
                } else {
                    let _ = write!(out, "{c:<w$}  ");
                }
            }
            out.push('\n');
        };
        line(header);
        for row in &cells {
            line([&row[0], &row[1], &row[2], &row[3], &row[4]]);
        }
        let _ = writeln!(
            out,
            "{} {} nodes, {} heads{}, {} parameters",
            self.spec.variant,
            self.node_count(),
            self.head_count(),
            if self.spec.deep_supervision { "(with DS)" } else { "" },
            self.total_params()
        );
        out
    }

    pub fn to_dot(&self) -> String {
        let mut out = format!("digraph \"{}_d{}\" {{\n  rankdir=TB;\n", self.spec.variant, self.spec.depth);
        for r in self.rows.iter().filter(|r| r.op == "conv_block") {
            let _ = writeln!(out, "  \"{}\" [shape=box];", r.node);
        }
        for (a, b) in &self.edges {
            let _ = writeln!(out, "  \"{a}\" -> \"{b}\";");
        }
        out.push_str("}\n");
        out
    }
}
