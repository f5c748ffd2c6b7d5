//! Decentralized schedule: rounds of local gradient steps followed by
//! neighbour mixing through a stochastic matrix.

use super::{full_batch_gradient, DatasetPartition, LearningError, ModelParams};
use crate::energy::{CommMeter, EnergyLedger};
use crate::fleet::Fleet;

const STOCHASTIC_TOL: f64 = 1e-12;

/// Row-stochastic N x N mixing matrix. Node `i` receives
/// `sum_j C[j][i] * w_j`, i.e. the parameters act as the columns of `X` in
/// `X C`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    weights: Vec<Vec<f64>>,
}

impl MixingMatrix {
    pub fn new(weights: Vec<Vec<f64>>) -> Result<Self, LearningError> {
        let n = weights.len();
        if n == 0 {
            return Err(LearningError::InvalidMixingMatrix("empty matrix".into()));
        }
        for (i, row) in weights.iter().enumerate() {
            if row.len() != n {
                return Err(LearningError::InvalidMixingMatrix(format!("row {i} has {} entries, expected {n}", row.len())));
            }
            if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(LearningError::InvalidMixingMatrix(format!("row {i} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(LearningError::InvalidMixingMatrix(format!("row {i} sums to {sum}")));
            }
        }
        Ok(Self { weights })
    }

    pub fn identity(n: usize) -> Self {
        Self { weights: (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect() }
    }

    /// `1/N` everywhere: one step reaches consensus.
    pub fn uniform(n: usize) -> Self {
        Self { weights: vec![vec![1.0 / n as f64; n]; n] }
    }

    /// Metropolis-Hastings weights for an undirected neighbour graph:
    /// `C[i][j] = 1 / (1 + max(deg i, deg j))` on edges and the remainder on
    /// the diagonal. Symmetric, hence doubly stochastic.
    pub fn metropolis(neighbors: &[Vec<usize>]) -> Result<Self, LearningError> {
        let n = neighbors.len();
        for (i, list) in neighbors.iter().enumerate() {
            for &j in list {
                if j >= n || j == i || !neighbors[j].contains(&i) {
                    return Err(LearningError::InvalidMixingMatrix(format!(
                        "neighbour graph must be undirected without self-loops (edge {i}-{j})"
                    )));
                }
            }
        }
        let degree: Vec<usize> = neighbors.iter().map(Vec::len).collect();
        let mut weights = vec![vec![0.0; n]; n];
        for i in 0..n {
            for &j in &neighbors[i] {
                weights[i][j] = 1.0 / (1 + degree[i].max(degree[j])) as f64;
            }
            let off: f64 = weights[i].iter().sum();
            weights[i][i] = 1.0 - off;
        }
        Ok(Self { weights })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[i][j]
    }

    pub fn is_doubly_stochastic(&self) -> bool {
        (0..self.len()).all(|j| ((0..self.len()).map(|i| self.weights[i][j]).sum::<f64>() - 1.0).abs() <= STOCHASTIC_TOL)
    }

    /// Fails if any off-diagonal weight links nodes that are not neighbours.
    pub fn check_support(&self, neighbors: &[Vec<usize>]) -> Result<(), LearningError> {
        for i in 0..self.len() {
            for j in 0..self.len() {
                if i != j && self.weights[i][j] > 0.0 && !neighbors.get(i).is_some_and(|l| l.contains(&j)) {
                    return Err(LearningError::InvalidMixingMatrix(format!("weight between non-neighbours {i} and {j}")));
                }
            }
        }
        Ok(())
    }
}

/// One inter-node communication step, `X <- X C`.
pub fn mixing_step(x: &[ModelParams], c: &MixingMatrix) -> Result<Vec<ModelParams>, LearningError> {
    if x.len() != c.len() {
        return Err(LearningError::InvalidMixingMatrix(format!("{} nodes but a {}x{} matrix", x.len(), c.len(), c.len())));
    }
    let Some(first) = x.first() else { return Ok(Vec::new()) };
    if x.iter().any(|w| w.layout() != first.layout()) {
        return Err(LearningError::LayoutMismatch("nodes hold different layouts".into()));
    }
    Ok((0..x.len())
        .map(|i| {
            let mut values = vec![0.0; first.len()];
            for (j, w) in x.iter().enumerate() {
                let weight = c.get(j, i);
                if weight != 0.0 {
                    for (acc, v) in values.iter_mut().zip(w.values()) {
                        *acc += weight * v;
                    }
                }
            }
            ModelParams::from_raw(first.layout(), values, first.bytes_per_value())
        })
        .collect())
}

/// Knobs of the decentralized schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DflPlan {
    /// Local update steps per round.
    pub tau1: usize,
    /// Mixing steps per round.
    pub tau2: usize,
    /// Number of rounds.
    pub rounds: usize,
    /// Total steps; steps after `rounds * (tau1 + tau2)` are local only.
    pub total_steps: usize,
    pub eta: f64,
}

impl DflPlan {
    pub fn validate(&self) -> Result<(), LearningError> {
        if self.tau1 == 0 {
            return Err(LearningError::InvalidSchedule("tau1 must be >= 1".into()));
        }
        if self.total_steps < self.rounds * (self.tau1 + self.tau2) {
            return Err(LearningError::InvalidSchedule(format!(
                "total_steps {} is shorter than {} rounds of {} steps",
                self.total_steps,
                self.rounds,
                self.tau1 + self.tau2
            )));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(LearningError::InvalidSchedule(format!("eta must be >= 0, got {}", self.eta)));
        }
        Ok(())
    }

    /// Whether step `t` (1-based) is a local update.
    pub fn is_local_step(&self, t: usize) -> bool {
        let tau = self.tau1 + self.tau2;
        if t > self.rounds * tau {
            return true;
        }
        (t - 1) % tau < self.tau1
    }
}

#[derive(Debug, Clone)]
pub struct DflOutcome {
    /// Final parameters per node.
    pub params: Vec<ModelParams>,
    /// Mean local training loss across nodes before each step.
    pub mean_loss: Vec<f64>,
    pub bytes_sent: Vec<u64>,
    pub bytes_received: Vec<u64>,
    pub ledger: EnergyLedger,
}

/// Runs the decentralized schedule over the fleet. Node `i` is drone `i`
/// and trains on `partitions[drone.partition_id]`; every local step is a
/// full-batch gradient step. Each mixing step sends node `j`'s parameters to
/// every node `i != j` with `C[j][i] > 0`, priced by `meter`.
pub fn run_dfl_schedule(
    fleet: &mut Fleet,
    partitions: &[DatasetPartition],
    init: &ModelParams,
    plan: &DflPlan,
    c: &MixingMatrix,
    meter: &mut CommMeter,
) -> Result<DflOutcome, LearningError> {
    plan.validate()?;
    let n = fleet.len();
    if c.len() != n {
        return Err(LearningError::InvalidMixingMatrix(format!("{n} drones but a {0}x{0} matrix", c.len())));
    }
    let mut x: Vec<ModelParams> = vec![init.clone(); n];
    let mut mean_loss = Vec::with_capacity(plan.total_steps);
    for t in 1..=plan.total_steps {
        if plan.is_local_step(t) {
            let mut loss_sum = 0.0;
            for (i, w) in x.iter_mut().enumerate() {
                let part = &partitions[fleet.drones[i].partition_id];
                let (loss, grad) = full_batch_gradient(w, part)?;
                if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(LearningError::Diverged { drone: i, epoch: t });
                }
                for (v, g) in w.values_mut().iter_mut().zip(&grad) {
                    *v -= plan.eta * g;
                }
                loss_sum += loss;
                meter.train(fleet, i, part.size(), 1, t);
            }
            mean_loss.push(loss_sum / n as f64);
        } else {
            let loss_sum: f64 = x
                .iter()
                .enumerate()
                .map(|(i, w)| full_batch_gradient(w, &partitions[fleet.drones[i].partition_id]).map(|(l, _)| l))
                .sum::<Result<f64, _>>()?;
            mean_loss.push(loss_sum / n as f64);
            for j in 0..n {
                for i in 0..n {
                    if i != j && c.get(j, i) > 0.0 {
                        meter.transmit(fleet, j, i, t)?;
                    }
                }
            }
            x = mixing_step(&x, c)?;
        }
    }
    Ok(DflOutcome {
        params: x,
        mean_loss,
        bytes_sent: meter.total_sent().to_vec(),
        bytes_received: meter.total_received().to_vec(),
        ledger: meter.ledger.clone(),
    })
}
