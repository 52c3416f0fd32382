use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint;
use super::config::{ModelConfig, Variant, MINI_PARAMETER_BUDGET};
use super::topology::{AreaName, Topology};
use crate::blocks::{
    predictive_error, Block, Cbam, ConvRelu, LateralInteraction, Linear, MultiScaleV1, Neuromodulation,
    PredictionError, RecurrentBlock, TopDownProjection,
};
use crate::error::{shape_err, Error, Result};
use crate::params::{ParamId, ParamStore, ParamVars};
use crate::tensor::{PoolKind, Tape, Tensor, Var};

/// One cortical area: its inputs are concatenated, optionally pooled 2x,
/// then passed through `blocks` in order.
#[derive(Debug, Clone)]
pub struct AreaNode {
    pub name: AreaName,
    pub in_channels: usize,
    pub channels: usize,
    pub downsample: bool,
    pub blocks: Vec<Block>,
}

/// Areas entered through a 2x average pool.
const DOWNSAMPLED: [AreaName; 4] = [AreaName::V4, AreaName::Mt, AreaName::Cit, AreaName::Mst];

/// The compiled dual-stream network.
#[derive(Debug, Clone)]
pub struct StreamGraph {
    config: ModelConfig,
    topology: Topology,
    /// Areas in execution order.
    nodes: Vec<AreaNode>,
    params: ParamStore,
    head: Linear,
    top_down: TopDownProjection,
}

/// Values produced by one forward pass, all on the same tape.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    pub logits: Var,
    pub epsilon: PredictionError,
    pub v1: Var,
    pub ait: Var,
    /// Top-down prediction of V1; `None` without the feedback edge.
    pub prediction: Option<Var>,
}

/// Builds the canonical topology for `config`, initialising every
/// parameter from `seed`.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<StreamGraph> {
    build_with_topology(config, Topology::canonical(), seed)
}

pub fn build_with_topology(config: &ModelConfig, topology: Topology, seed: u64) -> Result<StreamGraph> {
    config.validate()?;
    let order = topology.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    let mut nodes = Vec::with_capacity(order.len());
    for &area in &order {
        let preds = topology.predecessors(area);
        let in_channels = if preds.is_empty() {
            config.input_channels
        } else {
            preds.iter().map(|&p| config.width(p)).sum()
        };
        let c = config.width(area);
        let name = area.as_str();
        let entry = |params: &mut ParamStore, rng: &mut ChaCha8Rng| {
            Block::ConvRelu(ConvRelu::new(params, &format!("{name}.conv"), in_channels, c, rng))
        };
        let cbam = |params: &mut ParamStore, rng: &mut ChaCha8Rng| -> Result<Block> {
            Ok(Block::Cbam(Cbam::new(params, &format!("{name}.cbam"), c, config.cbam_reduction, rng)?))
        };
        let recurrent = |params: &mut ParamStore, rng: &mut ChaCha8Rng| -> Result<Block> {
            Ok(Block::Recurrent(RecurrentBlock::new(
                params,
                &format!("{name}.recurrent"),
                c,
                config.recurrent_iterations,
                rng,
            )?))
        };
        let neuromod = |params: &mut ParamStore| {
            Block::Neuromodulation(Neuromodulation::new(params, &format!("{name}.neuromodulation"), c))
        };
        let blocks = match area {
            AreaName::V1 => vec![
                Block::MultiScaleV1(MultiScaleV1::new(&mut params, "V1.multi_scale", in_channels, c, &mut rng)?),
                Block::Lateral(LateralInteraction::new(&mut params, "V1.lateral", c, &mut rng)),
                cbam(&mut params, &mut rng)?,
                neuromod(&mut params),
            ],
            AreaName::V4 => vec![entry(&mut params, &mut rng), cbam(&mut params, &mut rng)?, neuromod(&mut params)],
            AreaName::Mt => vec![
                entry(&mut params, &mut rng),
                recurrent(&mut params, &mut rng)?,
                cbam(&mut params, &mut rng)?,
                neuromod(&mut params),
            ],
            AreaName::Mst => vec![entry(&mut params, &mut rng), recurrent(&mut params, &mut rng)?],
            _ => vec![entry(&mut params, &mut rng)],
        };
        nodes.push(AreaNode {
            name: area,
            in_channels,
            channels: c,
            downsample: DOWNSAMPLED.contains(&area),
            blocks,
        });
    }
    let ait = config.width(AreaName::Ait);
    let head = Linear::new(&mut params, "head", ait, config.classes, &mut rng);
    let top_down = TopDownProjection::new(&mut params, "top_down", ait, config.width(AreaName::V1), &mut rng);

    let graph = StreamGraph {
        config: config.clone(),
        topology,
        nodes,
        params,
        head,
        top_down,
    };
    if config.variant == Variant::Mini && graph.parameter_count() > MINI_PARAMETER_BUDGET {
        return Err(Error::Config(format!(
            "mini variant has {} parameters, budget is {MINI_PARAMETER_BUDGET}",
            graph.parameter_count()
        )));
    }
    Ok(graph)
}

impl StreamGraph {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn nodes(&self) -> &[AreaNode] {
        &self.nodes
    }

    pub fn node(&self, area: AreaName) -> Option<&AreaNode> {
        self.nodes.iter().find(|n| n.name == area)
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn head(&self) -> &Linear {
        &self.head
    }

    pub fn top_down(&self) -> &TopDownProjection {
        &self.top_down
    }

    /// Areas in execution order; the feedback edge is not part of it.
    pub fn execution_order(&self) -> Vec<AreaName> {
        self.nodes.iter().map(|n| n.name).collect()
    }

    /// Copy of this graph with the feedback edge removed.
    pub fn without_feedback(&self) -> Self {
        let mut g = self.clone();
        g.topology.feedback = None;
        g
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Exact size of this graph's checkpoint file.
    pub fn serialized_size_bytes(&self) -> usize {
        checkpoint::encoded_len(&self.params)
    }

    /// Trainable-scalar counts per `(area, block)`, plus the head and the
    /// top-down projection. The counts sum to [`Self::parameter_count`].
    pub fn block_parameter_counts(&self) -> Vec<(String, usize)> {
        let count = |ids: Vec<ParamId>| ids.iter().map(|&id| self.params.get(id).numel()).sum();
        let mut out: Vec<(String, usize)> = Vec::new();
        for node in &self.nodes {
            for block in &node.blocks {
                out.push((format!("{}/{}", node.name, block.name()), count(block.param_ids())));
            }
        }
        out.push(("head".into(), count(self.head.param_ids())));
        out.push(("top_down".into(), count(self.top_down.param_ids())));
        out
    }

    /// Parameters belonging to one area.
    pub fn area_param_ids(&self, area: AreaName) -> Vec<ParamId> {
        self.node(area)
            .map(|n| n.blocks.iter().flat_map(Block::param_ids).collect())
            .unwrap_or_default()
    }

    pub fn bind(&self, tape: &mut Tape) -> ParamVars {
        self.params.bind(tape)
    }

    /// Two-pass execution. Pass one sweeps the feedforward graph in
    /// execution order; pass two projects AIT back onto V1 and forms the
    /// prediction error. Logits come from the global-average AIT descriptor
    /// and never depend on the feedback path.
    pub fn forward(&self, tape: &mut Tape, p: &ParamVars, batch: Var) -> Result<ForwardOutput> {
        let shape = tape.shape(batch);
        let expected = self.config.sample_shape();
        if shape.len() != 4 || shape[1..] != expected {
            return Err(shape_err(
                "forward",
                "batch",
                format!("expected [N, {}, {}, {}], got {shape:?}", expected[0], expected[1], expected[2]),
            ));
        }
        let n = shape[0];
        let mut outputs: BTreeMap<AreaName, Var> = BTreeMap::new();
        for node in &self.nodes {
            let preds = self.topology.predecessors(node.name);
            let mut x = match preds.as_slice() {
                [] => batch,
                [single] => outputs[single],
                many => {
                    let inputs: Vec<Var> = many.iter().map(|a| outputs[a]).collect();
                    tape.concat_channels(&inputs)?
                }
            };
            if node.downsample {
                x = tape.pool(x, PoolKind::Avg, 2, 2)?;
            }
            for block in &node.blocks {
                x = block.forward(tape, p, x)?;
            }
            outputs.insert(node.name, x);
        }
        let v1 = outputs[&AreaName::V1];
        let ait = outputs[&AreaName::Ait];

        let pooled = tape.pool(ait, PoolKind::GlobalAvg, 0, 0)?;
        let pooled = tape.reshape(pooled, &[n, self.config.width(AreaName::Ait)])?;
        let logits = self.head.forward(tape, p, pooled)?;

        let (_, _, h, w) = tape.value(v1).dims4("forward")?;
        let (prediction, epsilon) = match self.topology.feedback {
            Some(_) => {
                let pred = self.top_down.forward(tape, p, ait, h, w)?;
                (Some(pred), predictive_error(tape, v1, pred)?)
            }
            None => {
                let zero = tape.constant(Tensor::zeros(tape.shape(v1)));
                (None, predictive_error(tape, v1, zero)?)
            }
        };
        Ok(ForwardOutput {
            logits,
            epsilon,
            v1,
            ait,
            prediction,
        })
    }

    /// Data-dependent initialisation: rescales each area's entry
    /// convolution, in execution order, so its rectified output has unit
    /// RMS on `batch`. ReLU is positively homogeneous, so scaling a weight
    /// and its bias by `k` scales that output by exactly `k`. Without any
    /// normalisation layer the raw fan-in init lets activation scale drift
    /// by an order of magnitude across seeds.
    pub fn calibrate(&mut self, batch: &Tensor) -> Result<()> {
        let expected = self.config.sample_shape();
        if batch.shape().len() != 4 || batch.shape()[1..] != expected {
            return Err(shape_err("calibrate", "batch", format!("{:?} does not match the model input", batch.shape())));
        }
        let mut outputs: BTreeMap<AreaName, Tensor> = BTreeMap::new();
        for node in self.nodes.clone() {
            let input = {
                let mut tape = Tape::new();
                let inputs: Vec<Var> = match self.topology.predecessors(node.name).as_slice() {
                    [] => vec![tape.constant(batch.clone())],
                    preds => preds.iter().map(|a| tape.constant(outputs[a].clone())).collect(),
                };
                let mut x = if inputs.len() == 1 { inputs[0] } else { tape.concat_channels(&inputs)? };
                if node.downsample {
                    x = tape.pool(x, PoolKind::Avg, 2, 2)?;
                }
                tape.value(x).clone()
            };
            match &node.blocks[0] {
                Block::ConvRelu(b) => self.normalise_scale(&input, &b.conv.param_ids(), |t, p, x| b.forward(t, p, x))?,
                Block::MultiScaleV1(m) => {
                    for branch in &m.branches {
                        self.normalise_scale(&input, &branch.pointwise.param_ids(), |t, p, x| {
                            let y = branch.forward(t, p, x)?;
                            Ok(t.relu(y))
                        })?;
                    }
                }
                _ => {}
            }
            let mut tape = Tape::new();
            let p = self.params.bind(&mut tape);
            let mut x = tape.constant(input);
            for block in &node.blocks {
                x = block.forward(&mut tape, &p, x)?;
            }
            outputs.insert(node.name, tape.value(x).clone());
        }
        Ok(())
    }

    fn normalise_scale<F>(&mut self, input: &Tensor, ids: &[ParamId], stage: F) -> Result<()>
    where
        F: Fn(&mut Tape, &ParamVars, Var) -> Result<Var>,
    {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let x = tape.constant(input.clone());
        let y = stage(&mut tape, &p, x)?;
        let v = tape.value(y);
        let rms = (v.data().iter().map(|a| a * a).sum::<f64>() / v.numel().max(1) as f64).sqrt();
        if rms > 0.0 {
            for &id in ids {
                self.params.get_mut(id).data_mut().iter_mut().for_each(|w| *w /= rms);
            }
        }
        Ok(())
    }

    /// Forward pass on a plain tensor, returning `(logits, epsilon)`.
    pub fn infer(&self, batch: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let x = tape.constant(batch.clone());
        let out = self.forward(&mut tape, &p, x)?;
        Ok((tape.value(out.logits).clone(), tape.value(out.epsilon.epsilon).clone()))
    }
}
