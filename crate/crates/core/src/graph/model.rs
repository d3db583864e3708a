//! Materialized model: plan plus parameter store, and the inference pass.

use super::plan::{plan_model, GraphPlan, NodeKind};
use super::{GraphError, NetConfig};
use crate::attention::{ca_forward, he_uniform, CoordAttentionParams};
use crate::scalar::Real;
use crate::tensor::{
    activate, batchnorm_infer, concat_channels, conv2d, spp, upsample2x, BatchNormParams,
    Conv2dParams, Tensor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Per-node parameter bundle, aligned with the plan's node list.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeParams<R: Real> {
    None,
    ConvBn {
        conv: Conv2dParams<R>,
        bn: BatchNormParams<R>,
    },
    Head {
        conv: Conv2dParams<R>,
    },
    Ca(CoordAttentionParams<R>),
}

/// The three head maps at strides 8, 16 and 32.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput<R: Real> {
    pub stride8: Tensor<R>,
    pub stride16: Tensor<R>,
    pub stride32: Tensor<R>,
}

/// Immutable detector: safe to share across threads; forward never mutates.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<R: Real> {
    plan: GraphPlan,
    params: Vec<NodeParams<R>>,
    seed: u64,
}

/// Builds a model with He-style fan-in uniform weights drawn from the seed.
/// The same seed always produces a bit-identical parameter store.
pub fn build_model<R: Real>(cfg: &NetConfig, seed: u64) -> Result<Model<R>, GraphError> {
    let plan = plan_model(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = materialize(&plan, &mut rng);
    Ok(Model { plan, params, seed })
}

fn materialize<R: Real>(plan: &GraphPlan, rng: &mut impl Rng) -> Vec<NodeParams<R>> {
    let eps = R::from_f64(1e-5);
    plan.nodes
        .iter()
        .map(|node| match node.kind {
            NodeKind::ConvBnAct { in_c, out_c, k, stride, .. } => {
                let weights = he_uniform(rng, [out_c, in_c, k, k]);
                let conv = Conv2dParams::new(weights, None, stride, k / 2)
                    .expect("valid conv parameters");
                NodeParams::ConvBn {
                    conv,
                    bn: BatchNormParams::identity(out_c, eps),
                }
            }
            NodeKind::HeadConv { in_c, out_c } => {
                let weights = he_uniform(rng, [out_c, in_c, 1, 1]);
                let conv = Conv2dParams::new(weights, Some(vec![R::zero(); out_c]), 1, 0)
                    .expect("valid head conv");
                NodeParams::Head { conv }
            }
            NodeKind::CoordAttention { channels, reduction } => {
                NodeParams::Ca(CoordAttentionParams::init(channels, reduction, rng))
            }
            _ => NodeParams::None,
        })
        .collect()
}

impl<R: Real> Model<R> {
    pub fn plan(&self) -> &GraphPlan {
        &self.plan
    }

    pub fn config(&self) -> &NetConfig {
        &self.plan.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_count(&self) -> u64 {
        self.plan.param_count()
    }

    pub fn describe(&self) -> Vec<super::plan::LayerRow> {
        self.plan.describe()
    }

    pub(crate) fn node_params(&self) -> &[NodeParams<R>] {
        &self.params
    }

    pub(crate) fn from_parts(plan: GraphPlan, params: Vec<NodeParams<R>>, seed: u64) -> Self {
        Self { plan, params, seed }
    }

    /// Inference pass. Intermediate maps are dropped as soon as their last
    /// consumer has run.
    pub fn forward(&self, x: &Tensor<R>) -> Result<HeadOutput<R>, GraphError> {
        let s = self.plan.config.input_size;
        let [_, c, h, w] = x.shape();
        if c != 3 || h != s || w != s {
            return Err(GraphError::Shape(format!(
                "input shape {:?} does not match (N, 3, {s}, {s})",
                x.shape()
            )));
        }

        let n_nodes = self.plan.nodes.len();
        let mut remaining_uses = vec![0usize; n_nodes];
        for node in &self.plan.nodes {
            for &i in &node.inputs {
                remaining_uses[i] += 1;
            }
        }
        for &h in &self.plan.heads {
            remaining_uses[h] += 1;
        }

        let mut outputs: Vec<Option<Tensor<R>>> = vec![None; n_nodes];
        for node in &self.plan.nodes {
            let get = |id: usize| -> &Tensor<R> {
                outputs[id].as_ref().expect("topological order")
            };
            let value = match &node.kind {
                NodeKind::Input => x.clone(),
                NodeKind::ConvBnAct { act, .. } => {
                    let NodeParams::ConvBn { conv, bn } = &self.params[node.id] else {
                        unreachable!("params aligned with plan")
                    };
                    let y = conv2d(get(node.inputs[0]), conv)?;
                    let y = batchnorm_infer(&y, bn)?;
                    activate(&y, *act)
                }
                NodeKind::HeadConv { .. } => {
                    let NodeParams::Head { conv } = &self.params[node.id] else {
                        unreachable!("params aligned with plan")
                    };
                    conv2d(get(node.inputs[0]), conv)?
                }
                NodeKind::Residual => {
                    let a = get(node.inputs[0]);
                    let b = get(node.inputs[1]);
                    Tensor::from_parts(
                        a.shape(),
                        a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect(),
                    )
                }
                NodeKind::CoordAttention { .. } => {
                    let NodeParams::Ca(p) = &self.params[node.id] else {
                        unreachable!("params aligned with plan")
                    };
                    let (y, _) = ca_forward(get(node.inputs[0]), p)?;
                    y
                }
                NodeKind::Spp => spp(get(node.inputs[0]))?,
                NodeKind::Upsample => upsample2x(get(node.inputs[0])),
                NodeKind::Concat => {
                    let ins: Vec<&Tensor<R>> = node.inputs.iter().map(|&i| get(i)).collect();
                    concat_channels(&ins)?
                }
            };
            outputs[node.id] = Some(value);
            for &i in &node.inputs {
                remaining_uses[i] -= 1;
                if remaining_uses[i] == 0 {
                    outputs[i] = None;
                }
            }
        }

        let mut take = |id: usize| outputs[id].take().expect("head outputs retained");
        Ok(HeadOutput {
            stride8: take(self.plan.heads[0]),
            stride16: take(self.plan.heads[1]),
            stride32: take(self.plan.heads[2]),
        })
    }
}
