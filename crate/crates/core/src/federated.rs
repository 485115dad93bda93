//! Federated SSR: each node trains the shared projection on its own slice of
//! the data and the server averages the resulting parameter vectors.
//!
//! Nodes run sequentially in-process. Node `a` shuffles epoch `e` of round `r`
//! with the seed schedule `(seed, stream = a, epoch = r * local_epochs + e)`,
//! which for a single node is exactly the centralized schedule. Adam moments
//! are node-local and start from zero every round.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::nn::{AdamState, ParamVector};
use crate::rng;
use crate::ssr::{run_epochs, PairedSet, Schedule, SsrModel};

pub const DEFAULT_NODES: usize = 4;
pub const DEFAULT_ROUNDS: usize = 5;
pub const DEFAULT_LOCAL_EPOCHS: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    /// Seeded shuffle, then equal-size chunks.
    Iid,
    /// Equal-size chunks of the original order.
    Contiguous,
}

impl Partition {
    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Iid => "iid",
            Partition::Contiguous => "contiguous",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(Partition::Iid),
            "contiguous" => Ok(Partition::Contiguous),
            other => Err(Error::invalid(format!(
                "unknown partition {other:?}; expected iid or contiguous"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FedConfig {
    pub nodes: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub partition: Partition,
    /// Weight each node by its element count instead of a plain mean.
    pub weighted: bool,
    pub seed: u64,
}

impl FedConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            nodes: DEFAULT_NODES,
            rounds: DEFAULT_ROUNDS,
            local_epochs: DEFAULT_LOCAL_EPOCHS,
            partition: Partition::Iid,
            weighted: false,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub id: usize,
    /// Sorted indices into the full dataset.
    pub indices: Vec<usize>,
    pub params: ParamVector,
}

/// Splits `0..n` into `config.nodes` disjoint sorted sets whose sizes differ
/// by at most one.
pub fn partition(n: usize, config: &FedConfig) -> Result<Vec<Vec<usize>>> {
    let a = config.nodes;
    if a == 0 {
        return Err(Error::invalid("federated training needs at least one node"));
    }
    if n < a {
        return Err(Error::invalid(format!(
            "cannot split {n} elements across {a} nodes"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if config.partition == Partition::Iid {
        let mut r = rng::rng(config.seed, "fed-partition", &[a as u64]);
        rng::shuffle(&mut order, &mut r);
    }
    let (base, extra) = (n / a, n % a);
    let mut out = Vec::with_capacity(a);
    let mut at = 0;
    for k in 0..a {
        let len = base + usize::from(k < extra);
        let mut set = order[at..at + len].to_vec();
        set.sort_unstable();
        out.push(set);
        at += len;
    }
    Ok(out)
}

/// Node loss before and after one local round, mean batch loss in nats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalRound {
    pub first_epoch_loss: f64,
    pub last_epoch_loss: f64,
    pub steps: usize,
}

/// Loads `shared` into `template`, trains `local_epochs` on the node's
/// indices, and stores the result in `node.params`.
pub fn local_round(
    node: &mut NodeState,
    shared: &ParamVector,
    template: &SsrModel,
    data: PairedSet<'_>,
    local_epochs: usize,
    round: usize,
) -> Result<LocalRound> {
    if node.indices.is_empty() {
        return Err(Error::invalid(format!("node {} has no data", node.id)));
    }
    let mut model = template.clone();
    model.set_params(shared)?;
    if local_epochs == 0 {
        node.params = shared.clone();
        return Ok(LocalRound {
            first_epoch_loss: f64::NAN,
            last_epoch_loss: f64::NAN,
            steps: 0,
        });
    }
    let mut adam = AdamState::new(shared.len());
    let run = run_epochs(
        &mut model,
        data,
        &node.indices,
        local_epochs,
        Schedule {
            stream: node.id as u64,
            first_epoch: (round * local_epochs) as u64,
        },
        &mut adam,
    )?;
    node.params = model.params();
    Ok(LocalRound {
        first_epoch_loss: run.epoch_losses[0],
        last_epoch_loss: *run.epoch_losses.last().expect("at least one epoch"),
        steps: run.steps,
    })
}

/// Elementwise mean of the node parameter vectors, optionally weighted.
pub fn fed_average(params: &[ParamVector], weights: Option<&[f64]>) -> Result<ParamVector> {
    let first = params
        .first()
        .ok_or_else(|| Error::invalid("cannot average an empty parameter list"))?;
    let len = first.len();
    if let Some(p) = params.iter().find(|p| p.len() != len) {
        return Err(Error::DimensionMismatch {
            expected: len,
            found: p.len(),
        });
    }
    let w: Vec<f64> = match weights {
        Some(w) => {
            if w.len() != params.len() {
                return Err(Error::DimensionMismatch {
                    expected: params.len(),
                    found: w.len(),
                });
            }
            let total: f64 = w.iter().sum();
            if total.is_nan() || total <= 0.0 || w.iter().any(|x| *x < 0.0) {
                return Err(Error::invalid(
                    "averaging weights must be non-negative with a positive sum",
                ));
            }
            w.iter().map(|x| x / total).collect()
        }
        None => vec![1.0 / params.len() as f64; params.len()],
    };
    if params.len() == 1 {
        return Ok(first.clone());
    }
    let mut out = vec![0.0; len];
    for (p, wk) in params.iter().zip(&w) {
        for (o, v) in out.iter_mut().zip(&p.0) {
            *o += wk * v;
        }
    }
    Ok(ParamVector(out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FedReport {
    /// Mean over nodes of each node's last local epoch loss, per round.
    pub round_losses: Vec<f64>,
    pub node_sizes: Vec<usize>,
    pub steps: usize,
    pub wall_seconds: f64,
}

/// Runs `config.rounds` of broadcast, local training and averaging, starting
/// from `model`'s current parameters.
pub fn fed_train(
    model: &mut SsrModel,
    data: PairedSet<'_>,
    config: &FedConfig,
) -> Result<FedReport> {
    let started = Instant::now();
    let sets = partition(data.len(), config)?;
    if let Some(s) = sets.iter().find(|s| s.len() < 2) {
        return Err(Error::invalid(format!(
            "every node needs at least 2 elements; one got {}",
            s.len()
        )));
    }
    let mut nodes: Vec<NodeState> = sets
        .into_iter()
        .enumerate()
        .map(|(id, indices)| NodeState {
            id,
            indices,
            params: model.params(),
        })
        .collect();
    let node_sizes: Vec<usize> = nodes.iter().map(|n| n.indices.len()).collect();
    let weights: Vec<f64> = node_sizes.iter().map(|&s| s as f64).collect();
    let mut round_losses = Vec::with_capacity(config.rounds);
    let mut steps = 0;
    for round in 0..config.rounds {
        let shared = model.params();
        let mut acc = 0.0;
        for node in &mut nodes {
            let r = local_round(node, &shared, model, data, config.local_epochs, round)?;
            acc += r.last_epoch_loss;
            steps += r.steps;
        }
        round_losses.push(acc / nodes.len() as f64);
        let locals: Vec<ParamVector> = nodes.iter().map(|n| n.params.clone()).collect();
        let avg = fed_average(&locals, config.weighted.then_some(weights.as_slice()))?;
        model.set_params(&avg)?;
    }
    Ok(FedReport {
        round_losses,
        node_sizes,
        steps,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}
