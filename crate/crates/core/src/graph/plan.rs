//! Structural plan of the detector graph: node list, shapes, parameter
//! counts. Building a plan is cheap (no weights are materialized), so
//! audits at full width cost nothing.

use super::config::NetConfig;
use super::GraphError;
use crate::attention::ca_param_count;
use crate::tensor::Activation;
use serde::{Deserialize, Serialize};

pub type NodeId = usize;

/// (channels, height, width); the batch extent is carried at run time.
pub type Shape3 = (usize, usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NodeKind {
    Input,
    ConvBnAct {
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        act: Activation,
    },
    /// Final 1x1 head projection: bias, no norm, no activation.
    HeadConv { in_c: usize, out_c: usize },
    /// Elementwise sum of its two inputs.
    Residual,
    CoordAttention { channels: usize, reduction: usize },
    Spp,
    Upsample,
    Concat,
}

impl NodeKind {
    pub fn type_name(&self) -> &'static str {
        match self {
            NodeKind::Input => "input",
            NodeKind::ConvBnAct { .. } => "conv-bn-act",
            NodeKind::HeadConv { .. } => "head",
            NodeKind::Residual => "residual",
            NodeKind::CoordAttention { .. } => "coordinate-attention",
            NodeKind::Spp => "spp",
            NodeKind::Upsample => "upsample",
            NodeKind::Concat => "concat",
        }
    }

    /// Learnable parameters: conv weights (+bias for heads) and batch-norm
    /// gamma/beta. Running statistics are excluded.
    pub fn param_count(&self) -> u64 {
        match *self {
            NodeKind::ConvBnAct { in_c, out_c, k, .. } => {
                (in_c * out_c * k * k + 2 * out_c) as u64
            }
            NodeKind::HeadConv { in_c, out_c } => (in_c * out_c + out_c) as u64,
            NodeKind::CoordAttention { channels, reduction } => {
                ca_param_count(channels, reduction) as u64
            }
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub name: String,
    pub kind: NodeKind,
    pub inputs: Vec<NodeId>,
    pub out_shape: Shape3,
}

/// One row of the audit table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRow {
    pub index: usize,
    pub name: String,
    pub kind: String,
    pub in_shapes: Vec<Shape3>,
    pub out_shape: Shape3,
    pub params: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphPlan {
    pub config: NetConfig,
    pub nodes: Vec<Node>,
    /// Head output nodes at strides 8, 16 and 32, in that order.
    pub heads: [NodeId; 3],
}

impl GraphPlan {
    pub fn param_count(&self) -> u64 {
        self.nodes.iter().map(|n| n.kind.param_count()).sum()
    }

    /// One row per node in topological (insertion) order.
    pub fn describe(&self) -> Vec<LayerRow> {
        self.nodes
            .iter()
            .map(|n| LayerRow {
                index: n.id,
                name: n.name.clone(),
                kind: n.kind.type_name().to_owned(),
                in_shapes: n.inputs.iter().map(|&i| self.nodes[i].out_shape).collect(),
                out_shape: n.out_shape,
                params: n.kind.param_count(),
            })
            .collect()
    }

    pub fn count_kind(&self, type_name: &str) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.kind.type_name() == type_name)
            .count()
    }

    pub fn count_name_prefix(&self, prefix: &str) -> usize {
        self.nodes.iter().filter(|n| n.name.starts_with(prefix)).count()
    }

    /// Re-derives every edge shape and checks it against the stored plan;
    /// any mismatch is a construction bug.
    pub fn validate(&self) -> Result<(), GraphError> {
        for n in &self.nodes {
            let ins: Vec<Shape3> = n.inputs.iter().map(|&i| self.nodes[i].out_shape).collect();
            let expect = infer_shape(&n.kind, &ins, &self.config)
                .map_err(|e| GraphError::Shape(format!("node {} ({}): {e}", n.id, n.name)))?;
            if expect != n.out_shape {
                return Err(GraphError::Shape(format!(
                    "node {} ({}) records shape {:?} but inputs {:?} produce {:?}",
                    n.id, n.name, n.out_shape, ins, expect
                )));
            }
        }
        for (i, &h) in self.heads.iter().enumerate() {
            let stride = [8, 16, 32][i];
            let s = self.config.input_size / stride;
            let want = (self.config.head_channels(), s, s);
            if self.nodes[h].out_shape != want {
                return Err(GraphError::Shape(format!(
                    "head {i} shape {:?}, expected {:?}",
                    self.nodes[h].out_shape, want
                )));
            }
        }
        Ok(())
    }
}

fn infer_shape(kind: &NodeKind, ins: &[Shape3], cfg: &NetConfig) -> Result<Shape3, String> {
    let one = |ins: &[Shape3]| -> Result<Shape3, String> {
        if ins.len() == 1 {
            Ok(ins[0])
        } else {
            Err(format!("expected 1 input, got {}", ins.len()))
        }
    };
    match kind {
        NodeKind::Input => Ok((3, cfg.input_size, cfg.input_size)),
        NodeKind::ConvBnAct { in_c, out_c, k, stride, .. } => {
            let (c, h, w) = one(ins)?;
            if c != *in_c {
                return Err(format!("input has {c} channels, conv expects {in_c}"));
            }
            let pad = k / 2;
            let oh = (h + 2 * pad - k) / stride + 1;
            let ow = (w + 2 * pad - k) / stride + 1;
            if oh == 0 || ow == 0 {
                return Err("zero-size spatial output".into());
            }
            Ok((*out_c, oh, ow))
        }
        NodeKind::HeadConv { in_c, out_c } => {
            let (c, h, w) = one(ins)?;
            if c != *in_c {
                return Err(format!("input has {c} channels, head expects {in_c}"));
            }
            Ok((*out_c, h, w))
        }
        NodeKind::Residual => {
            if ins.len() != 2 || ins[0] != ins[1] {
                return Err(format!("residual inputs disagree: {ins:?}"));
            }
            Ok(ins[0])
        }
        NodeKind::CoordAttention { channels, .. } => {
            let (c, h, w) = one(ins)?;
            if c != *channels {
                return Err(format!("input has {c} channels, attention expects {channels}"));
            }
            Ok((c, h, w))
        }
        NodeKind::Spp => {
            let (c, h, w) = one(ins)?;
            Ok((4 * c, h, w))
        }
        NodeKind::Upsample => {
            let (c, h, w) = one(ins)?;
            Ok((c, 2 * h, 2 * w))
        }
        NodeKind::Concat => {
            if ins.is_empty() {
                return Err("concat needs inputs".into());
            }
            let (_, h, w) = ins[0];
            if ins.iter().any(|s| s.1 != h || s.2 != w) {
                return Err(format!("concat spatial mismatch: {ins:?}"));
            }
            Ok((ins.iter().map(|s| s.0).sum(), h, w))
        }
    }
}

struct Builder {
    cfg: NetConfig,
    nodes: Vec<Node>,
}

impl Builder {
    fn push(&mut self, name: impl Into<String>, kind: NodeKind, inputs: Vec<NodeId>) -> NodeId {
        let name = name.into();
        let ins: Vec<Shape3> = inputs.iter().map(|&i| self.nodes[i].out_shape).collect();
        let out_shape = infer_shape(&kind, &ins, &self.cfg)
            .unwrap_or_else(|e| panic!("graph construction bug at {name}: {e}"));
        let id = self.nodes.len();
        self.nodes.push(Node {
            id,
            name,
            kind,
            inputs,
            out_shape,
        });
        id
    }

    fn scale(&self, c: usize) -> usize {
        self.cfg.width.scale(c)
    }

    fn conv(
        &mut self,
        name: impl Into<String>,
        input: NodeId,
        out_c_base: usize,
        k: usize,
        stride: usize,
        act: Activation,
    ) -> NodeId {
        let in_c = self.nodes[input].out_shape.0;
        let out_c = self.scale(out_c_base);
        self.push(
            name,
            NodeKind::ConvBnAct { in_c, out_c, k, stride, act },
            vec![input],
        )
    }

    /// Backbone conv: 3x3 or 1x1, batch norm, mish.
    fn cbm(&mut self, name: impl Into<String>, input: NodeId, out_c: usize, k: usize, stride: usize) -> NodeId {
        self.conv(name, input, out_c, k, stride, Activation::Mish)
    }

    /// Neck conv: batch norm, leaky relu.
    fn cbl(&mut self, name: impl Into<String>, input: NodeId, out_c: usize, k: usize) -> NodeId {
        self.conv(name, input, out_c, k, 1, Activation::Leaky)
    }

    /// One cross-stage-partial backbone stage: downsample, optional
    /// attention, split, residual units, merge.
    fn stage(&mut self, idx: usize, input: NodeId, c: usize, n_res: usize, first: bool) -> NodeId {
        let p = format!("s{idx}");
        let down = self.cbm(format!("{p}_down"), input, c, 3, 2);
        let entry = if self.cfg.ca_enabled {
            let channels = self.nodes[down].out_shape.0;
            self.push(
                format!("{p}_ca"),
                NodeKind::CoordAttention {
                    channels,
                    reduction: self.cfg.ca_reduction,
                },
                vec![down],
            )
        } else {
            down
        };
        let split = if first { c } else { c / 2 };
        let hidden = if first { c / 2 } else { split };
        let short = self.cbm(format!("{p}_short"), entry, split, 1, 1);
        let mut main = self.cbm(format!("{p}_main"), entry, split, 1, 1);
        for r in 0..n_res {
            let a = self.cbm(format!("{p}_res{r}_a"), main, hidden, 1, 1);
            let b = self.cbm(format!("{p}_res{r}_b"), a, split, 3, 1);
            main = self.push(format!("{p}_res{r}_add"), NodeKind::Residual, vec![main, b]);
        }
        let post = self.cbm(format!("{p}_post"), main, split, 1, 1);
        let cat = self.push(format!("{p}_cat"), NodeKind::Concat, vec![post, short]);
        self.cbm(format!("{p}_trans"), cat, c, 1, 1)
    }

    /// Conv stack flanking the pyramid pooling layer.
    ///
    /// Three convs form the classic contract-expand-contract pattern; the
    /// five-conv variant appends a half-width 3x3 bottleneck before the
    /// final re-expansion, keeping the added parameter budget small.
    fn spp_stack(&mut self, prefix: &str, mut x: NodeId) -> NodeId {
        let widths: &[(usize, usize)] = if self.cfg.spp_conv_count == 5 {
            &[(512, 1), (1024, 3), (256, 1), (256, 3), (512, 1)]
        } else {
            &[(512, 1), (1024, 3), (512, 1)]
        };
        for (i, &(c, k)) in widths.iter().enumerate() {
            x = self.cbl(format!("{prefix}_{i}"), x, c, k);
        }
        x
    }

    /// Backbone tap adapter. The 3-conv variant pinches to half the output
    /// width through its 3x3.
    fn lateral(&mut self, prefix: &str, tap: NodeId, out_c: usize) -> NodeId {
        if self.cfg.lateral_conv_count == 3 {
            let pinch = out_c / 2;
            let a = self.cbl(format!("{prefix}_0"), tap, pinch, 1);
            let b = self.cbl(format!("{prefix}_1"), a, pinch, 3);
            self.cbl(format!("{prefix}_2"), b, out_c, 1)
        } else {
            self.cbl(format!("{prefix}_0"), tap, out_c, 1)
        }
    }

    /// The five alternating 1x1/3x3 convs after each fusion concat.
    fn five_convs(&mut self, prefix: &str, mut x: NodeId, c: usize) -> NodeId {
        for (i, &(w, k)) in [(c, 1), (2 * c, 3), (c, 1), (2 * c, 3), (c, 1)]
            .iter()
            .enumerate()
        {
            x = self.cbl(format!("{prefix}_{i}"), x, w, k);
        }
        x
    }
}

/// Assembles the full detector graph for a configuration.
pub fn plan_model(cfg: &NetConfig) -> Result<GraphPlan, GraphError> {
    cfg.validate()?;
    let mut b = Builder {
        cfg: cfg.clone(),
        nodes: Vec::new(),
    };

    let input = b.push("input", NodeKind::Input, vec![]);
    let stem = b.cbm("stem", input, 32, 3, 1);
    let s1 = b.stage(1, stem, 64, 1, true);
    let s2 = b.stage(2, s1, 128, 2, false);
    let l3 = b.stage(3, s2, 256, 8, false); // stride-8 tap
    let l4 = b.stage(4, l3, 512, 8, false); // stride-16 tap
    let l5 = b.stage(5, l4, 1024, 4, false); // stride-32 tap

    // Stride-32 path through spatial pyramid pooling.
    let pre = b.spp_stack("spp_pre", l5);
    let spp = b.push("spp", NodeKind::Spp, vec![pre]);
    let p5 = b.spp_stack("spp_post", spp);

    // Top-down fusion to stride 16.
    let p5_up_conv = b.cbl("p5_up_conv", p5, 256, 1);
    let p5_up = b.push("p5_up", NodeKind::Upsample, vec![p5_up_conv]);
    let lat4 = b.lateral("lat4", l4, 256);
    let fuse4_cat = b.push("fuse4_cat", NodeKind::Concat, vec![lat4, p5_up]);
    let p4 = b.five_convs("fuse4", fuse4_cat, 256);

    // Top-down fusion to stride 8.
    let p4_up_conv = b.cbl("p4_up_conv", p4, 128, 1);
    let p4_up = b.push("p4_up", NodeKind::Upsample, vec![p4_up_conv]);
    let lat3 = b.lateral("lat3", l3, 128);
    let fuse3_cat = b.push("fuse3_cat", NodeKind::Concat, vec![lat3, p4_up]);
    let p3 = b.five_convs("fuse3", fuse3_cat, 128);

    // Stride-8 head.
    let head8_conv = b.cbl("head8_conv", p3, 256, 3);
    let head8 = {
        let in_c = b.nodes[head8_conv].out_shape.0;
        b.push(
            "head8_out",
            NodeKind::HeadConv { in_c, out_c: cfg.head_channels() },
            vec![head8_conv],
        )
    };

    // Bottom-up aggregation to stride 16.
    let pan4_down = b.conv("pan4_down", p3, 256, 3, 2, Activation::Leaky);
    let pan4_cat = b.push("pan4_cat", NodeKind::Concat, vec![pan4_down, p4]);
    let p4b = b.five_convs("pan4", pan4_cat, 256);
    let head16_conv = b.cbl("head16_conv", p4b, 512, 3);
    let head16 = {
        let in_c = b.nodes[head16_conv].out_shape.0;
        b.push(
            "head16_out",
            NodeKind::HeadConv { in_c, out_c: cfg.head_channels() },
            vec![head16_conv],
        )
    };

    // Bottom-up aggregation to stride 32.
    let pan5_down = b.conv("pan5_down", p4b, 512, 3, 2, Activation::Leaky);
    let pan5_cat = b.push("pan5_cat", NodeKind::Concat, vec![pan5_down, p5]);
    let p5b = b.five_convs("pan5", pan5_cat, 512);
    let head32_conv = b.cbl("head32_conv", p5b, 1024, 3);
    let head32 = {
        let in_c = b.nodes[head32_conv].out_shape.0;
        b.push(
            "head32_out",
            NodeKind::HeadConv { in_c, out_c: cfg.head_channels() },
            vec![head32_conv],
        )
    };

    let plan = GraphPlan {
        config: cfg.clone(),
        nodes: b.nodes,
        heads: [head8, head16, head32],
    };
    plan.validate()?;
    Ok(plan)
}
