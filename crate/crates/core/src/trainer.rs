//! Synchronous decentralized-SGD rounds: local step, neighbor exchange,
//! scheduled gossip averaging, and consensus metrics.
//!
//! Each round every agent takes one local optimizer step, publishes its
//! half-step parameters to its neighbors, and then adds `gamma` times the
//! gossip error (the mixing-weighted neighborhood disagreement) to its own
//! parameters. Rounds are fully synchronous and links are lossless.

use std::collections::VecDeque;

use crate::ars::ScheduleSpec;
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::model::{self, Batch, ModelSpec};
use crate::numerics::{mean_of, ParamVector};
use crate::optimizer::{OptSettings, OptState};
use crate::rng::{domain, mix};
use crate::topology::MixingMatrix;

/// One agent: parameters, optimizer state, data shard, and the seed its
/// batch streams derive from.
#[derive(Clone, Debug)]
pub struct AgentState {
    pub id: usize,
    pub params: ParamVector,
    pub opt: OptState,
    pub shard: Vec<usize>,
    pub seed: u64,
}

impl AgentState {
    /// Gradient step on one mini-batch; returns the batch loss.
    pub fn local_step(&mut self, spec: &ModelSpec, batch: &Batch, lr: f64) -> Result<f64> {
        let (loss, grad) = model::loss_and_grad(spec, &self.params, batch)?;
        self.opt.nesterov_step(&mut self.params, &grad, lr)?;
        Ok(loss)
    }
}

/// Read-only copies of neighbor parameters received at the round barrier,
/// sorted by sender id. The receiving agent's own parameters are not
/// duplicated here.
#[derive(Clone, Debug)]
pub struct Inbox {
    from: Vec<(usize, ParamVector)>,
}

impl Inbox {
    pub fn new(mut from: Vec<(usize, ParamVector)>) -> Self {
        from.sort_by_key(|(id, _)| *id);
        Inbox { from }
    }

    pub fn senders(&self) -> impl Iterator<Item = usize> + '_ {
        self.from.iter().map(|(id, _)| *id)
    }

    pub fn len(&self) -> usize {
        self.from.len()
    }

    pub fn is_empty(&self) -> bool {
        self.from.is_empty()
    }
}

/// Simulate the communication barrier: every agent receives copies of the
/// post-local-step parameters of each neighbor.
pub fn exchange(states: &[AgentState], w: &MixingMatrix) -> Result<Vec<Inbox>> {
    if states.len() != w.n() {
        return Err(Error::DimensionMismatch {
            left: states.len(),
            right: w.n(),
        });
    }
    let inboxes = states
        .iter()
        .map(|agent| {
            let from = w
                .neighbors(agent.id)
                .iter()
                .filter(|&&j| j != agent.id)
                .map(|&j| (j, states[j].params.clone()))
                .collect();
            Inbox { from }
        })
        .collect();
    Ok(inboxes)
}

/// Mixing-weighted neighborhood disagreement
/// `sum_{j in N_i} w_ij (x_j - x_i)`, accumulated in ascending neighbor
/// order. Errors if the inbox does not cover the neighbor set.
pub fn gossip_error(agent: &AgentState, inbox: &Inbox, w: &MixingMatrix) -> Result<ParamVector> {
    let expected: Vec<usize> = w
        .neighbors(agent.id)
        .iter()
        .copied()
        .filter(|&j| j != agent.id)
        .collect();
    let got: Vec<usize> = inbox.senders().collect();
    if got != expected {
        return Err(Error::Protocol(format!(
            "agent {}: inbox senders {:?} do not match neighbors {:?}",
            agent.id, got, expected
        )));
    }
    let mut err = ParamVector::zeros(agent.params.len());
    for (j, params_j) in &inbox.from {
        let wij = w.weight(agent.id, *j);
        if params_j.len() != agent.params.len() {
            return Err(Error::DimensionMismatch {
                left: params_j.len(),
                right: agent.params.len(),
            });
        }
        let e = err.as_mut_slice();
        let xj = params_j.as_slice();
        let xi = agent.params.as_slice();
        for k in 0..xi.len() {
            e[k] += wij * (xj[k] - xi[k]);
        }
    }
    Ok(err)
}

/// Gossip-averaging update `x_i += gamma * gossip_error`. `gamma = 0` leaves
/// the parameters bit-identical; momentum buffers are never averaged.
pub fn gossip_average(
    agent: &mut AgentState,
    inbox: &Inbox,
    w: &MixingMatrix,
    gamma: f64,
) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid(format!(
            "gossip: averaging rate must be in [0,1], got {gamma}"
        )));
    }
    if gamma == 0.0 {
        return Ok(());
    }
    let err = gossip_error(agent, inbox, w)?;
    agent.params.add_scaled_in_place(&err, gamma)
}

fn sorted_by_id(states: &[AgentState]) -> Vec<&AgentState> {
    let mut order: Vec<&AgentState> = states.iter().collect();
    order.sort_by_key(|s| s.id);
    order
}

/// Average dispersion `(1/n) sum_i ||x_i - x_bar||^2`, accumulated in agent-id
/// order.
pub fn consensus_error(states: &[AgentState]) -> f64 {
    if states.is_empty() {
        return 0.0;
    }
    let order = sorted_by_id(states);
    let params: Vec<&ParamVector> = order.iter().map(|s| &s.params).collect();
    let mean = mean_of(&params).expect("nonempty state list");
    let mut total = 0.0;
    for s in &order {
        let diff = s
            .params
            .add_scaled(&mean, -1.0)
            .expect("dimensions agree across agents");
        total += diff.norm_sq();
    }
    total / states.len() as f64
}

/// All-reduce model: the element-wise mean of every agent's parameters,
/// summed in agent-id order so agent permutations cannot change the bits.
pub fn consensus_model(states: &[AgentState]) -> Result<ParamVector> {
    let order = sorted_by_id(states);
    let params: Vec<&ParamVector> = order.iter().map(|s| &s.params).collect();
    mean_of(&params)
}

/// Everything a single training run needs. Shard entries are dataset sample
/// indices; the assignment never changes during the run.
#[derive(Clone, Debug)]
pub struct RunPlan<'a> {
    pub model: ModelSpec,
    pub dataset: &'a Dataset,
    pub shards: Vec<Vec<usize>>,
    pub topology: &'a MixingMatrix,
    pub opt: OptSettings,
    pub schedule: ScheduleSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Evaluate consensus test accuracy every this many epochs (0 = final
    /// epoch only).
    pub eval_every: usize,
    /// Record per-agent gossip-error norms (the verbose metric).
    pub record_gossip_norms: bool,
}

/// Per-epoch metrics row.
#[derive(Clone, Debug)]
pub struct RoundMetrics {
    pub epoch: usize,
    /// Cumulative rounds completed at the end of this epoch.
    pub iteration: u64,
    pub gamma: f64,
    pub lr: f64,
    pub agent_loss_mean: f64,
    pub agent_loss_std: f64,
    pub consensus_error: f64,
    pub val_loss_mean: Option<f64>,
    pub test_acc_consensus: Option<f64>,
    /// Epoch-mean gossip-error norm per agent, when requested.
    pub gossip_norms: Option<Vec<f64>>,
}

pub const METRICS_CSV_HEADER: &str =
    "epoch,iter,gamma,lr,agent_loss_mean,agent_loss_std,consensus_error,val_loss_mean,test_acc_consensus";

impl RoundMetrics {
    pub fn to_csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.iteration,
            self.gamma,
            self.lr,
            self.agent_loss_mean,
            self.agent_loss_std,
            self.consensus_error,
            opt(self.val_loss_mean),
            opt(self.test_acc_consensus),
        )
    }
}

/// Result of a completed run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub rows: Vec<RoundMetrics>,
    /// Test accuracy of the consensus model after the final epoch (absent
    /// when the dataset has no test split).
    pub final_test_accuracy: Option<f64>,
    pub consensus: ParamVector,
}

fn validate_plan(plan: &RunPlan) -> Result<()> {
    plan.model.validate()?;
    plan.schedule.validate()?;
    plan.opt.validate()?;
    if plan.epochs == 0 {
        return Err(Error::config("trainer: epochs must be >= 1"));
    }
    if plan.batch_size == 0 {
        return Err(Error::config("trainer: batch_size must be >= 1"));
    }
    let report = plan.topology.validate();
    if !report.is_ok() {
        return Err(Error::config(format!("trainer: bad mixing matrix: {report}")));
    }
    if plan.shards.len() != plan.topology.n() {
        return Err(Error::config(format!(
            "trainer: {} shards for {} agents",
            plan.shards.len(),
            plan.topology.n()
        )));
    }
    if plan.model.input_dim() != plan.dataset.num_features() {
        return Err(Error::config(format!(
            "trainer: model expects {} features, dataset has {}",
            plan.model.input_dim(),
            plan.dataset.num_features()
        )));
    }
    if plan.model.classes() != plan.dataset.num_classes() {
        return Err(Error::config(format!(
            "trainer: model has {} classes, dataset has {}",
            plan.model.classes(),
            plan.dataset.num_classes()
        )));
    }
    for (i, shard) in plan.shards.iter().enumerate() {
        if shard.is_empty() {
            return Err(Error::config(format!("trainer: shard {i} is empty")));
        }
        if let Some(&bad) = shard.iter().find(|&&s| s >= plan.dataset.len()) {
            return Err(Error::config(format!(
                "trainer: shard {i} references sample {bad} outside the dataset"
            )));
        }
    }
    Ok(())
}

/// Per-agent queue of batches for the current epoch; agents with fewer
/// batches than the epoch has rounds wrap around with a reshuffled
/// continuation (refills key the shuffle with a wrap counter in the high
/// bits of the epoch).
struct BatchCursor {
    queue: VecDeque<Vec<usize>>,
    wraps: u64,
}

impl BatchCursor {
    fn start_epoch(shard: &[usize], batch_size: usize, epoch: u64, seed: u64) -> Result<Self> {
        Ok(BatchCursor {
            queue: crate::data::epoch_batches(shard, batch_size, epoch, seed)?.into(),
            wraps: 0,
        })
    }

    fn next(
        &mut self,
        shard: &[usize],
        batch_size: usize,
        epoch: u64,
        seed: u64,
    ) -> Result<Vec<usize>> {
        if self.queue.is_empty() {
            self.wraps += 1;
            let key = epoch | (self.wraps << 32);
            self.queue = crate::data::epoch_batches(shard, batch_size, key, seed)?.into();
        }
        Ok(self.queue.pop_front().expect("refilled queue is nonempty"))
    }
}

/// Run the full synchronous training loop, emitting one metrics row per
/// epoch through `on_row` as soon as it is complete.
pub fn run_training_with(
    plan: &RunPlan,
    mut on_row: impl FnMut(&RoundMetrics) -> Result<()>,
) -> Result<RunOutcome> {
    validate_plan(plan)?;
    let n = plan.topology.n();
    let spec = plan.model;
    let dim = spec.param_dim();

    let init = spec.init_params(plan.seed);
    let bias_mask = (!plan.opt.decay_biases).then(|| spec.bias_mask());
    let mut states: Vec<AgentState> = (0..n)
        .map(|id| {
            Ok(AgentState {
                id,
                params: init.clone(),
                opt: OptState::new(plan.opt.clone(), dim, bias_mask.clone())?,
                shard: plan.shards[id].clone(),
                seed: mix(&[plan.seed, domain::AGENT, id as u64]),
            })
        })
        .collect::<Result<_>>()?;

    let max_shard = plan.shards.iter().map(Vec::len).max().unwrap_or(0);
    let iters_per_epoch = max_shard.div_ceil(plan.batch_size);
    let has_val = !plan.dataset.split(Split::Val).is_empty();
    let has_test = !plan.dataset.split(Split::Test).is_empty();

    let mut rows = Vec::with_capacity(plan.epochs);
    let mut total_iter: u64 = 0;
    let mut final_acc = None;

    for epoch in 0..plan.epochs {
        let lr = states[0].opt.lr_at(epoch);
        let gamma = plan.schedule.gamma_at(epoch);

        let mut cursors: Vec<BatchCursor> = states
            .iter()
            .map(|a| BatchCursor::start_epoch(&a.shard, plan.batch_size, epoch as u64, a.seed))
            .collect::<Result<_>>()?;
        let mut loss_sums = vec![0.0; n];
        let mut gossip_norm_sums = plan.record_gossip_norms.then(|| vec![0.0; n]);

        for _ in 0..iters_per_epoch {
            for (agent, cursor) in states.iter_mut().zip(&mut cursors) {
                let idxs = cursor.next(&agent.shard, plan.batch_size, epoch as u64, agent.seed)?;
                let batch = Batch::gather(plan.dataset, &idxs)?;
                let loss = agent.local_step(&spec, &batch, lr)?;
                if !loss.is_finite() {
                    return Err(Error::TrainingAborted {
                        epoch,
                        iteration: total_iter as usize,
                        reason: format!("non-finite loss {loss} at agent {}", agent.id),
                    });
                }
                loss_sums[agent.id] += loss;
            }

            let inboxes = exchange(&states, plan.topology)?;
            for (agent, inbox) in states.iter_mut().zip(&inboxes) {
                if let Some(sums) = gossip_norm_sums.as_mut() {
                    let err = gossip_error(agent, inbox, plan.topology)?;
                    sums[agent.id] += err.norm_sq().sqrt();
                    if gamma > 0.0 {
                        agent.params.add_scaled_in_place(&err, gamma)?;
                    }
                } else {
                    gossip_average(agent, inbox, plan.topology, gamma)?;
                }
            }
            total_iter += 1;
        }

        let agent_means: Vec<f64> = loss_sums
            .iter()
            .map(|s| s / iters_per_epoch as f64)
            .collect();
        let loss_mean = agent_means.iter().sum::<f64>() / n as f64;
        let loss_var = agent_means
            .iter()
            .map(|m| (m - loss_mean).powi(2))
            .sum::<f64>()
            / n as f64;

        let val_loss_mean = if has_val {
            let mut total = 0.0;
            for agent in sorted_by_id(&states) {
                total += model::split_loss(&spec, &agent.params, plan.dataset, Split::Val)?;
            }
            Some(total / n as f64)
        } else {
            None
        };

        let is_final = epoch + 1 == plan.epochs;
        let eval_due =
            is_final || (plan.eval_every > 0 && (epoch + 1) % plan.eval_every == 0);
        let test_acc_consensus = if eval_due && has_test {
            let consensus = consensus_model(&states)?;
            Some(model::accuracy(&spec, &consensus, plan.dataset, Split::Test)?)
        } else {
            None
        };
        if is_final {
            final_acc = test_acc_consensus;
        }

        let row = RoundMetrics {
            epoch,
            iteration: total_iter,
            gamma,
            lr,
            agent_loss_mean: loss_mean,
            agent_loss_std: loss_var.sqrt(),
            consensus_error: consensus_error(&states),
            val_loss_mean,
            test_acc_consensus,
            gossip_norms: gossip_norm_sums
                .map(|sums| sums.iter().map(|s| s / iters_per_epoch as f64).collect()),
        };
        on_row(&row)?;
        rows.push(row);
    }

    Ok(RunOutcome {
        rows,
        final_test_accuracy: final_acc,
        consensus: consensus_model(&states)?,
    })
}

pub fn run_training(plan: &RunPlan) -> Result<RunOutcome> {
    run_training_with(plan, |_| Ok(()))
}
