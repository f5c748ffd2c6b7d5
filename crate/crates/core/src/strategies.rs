//! The four training methods and the scheduler that runs them.
//!
//! Every method is a sequence of global epochs, each of one [`Phase`]:
//!
//! * **C** (commutative): blocks of `lr` intra-cluster FedAvg rounds
//!   followed by `gr` evaluated inter-cluster exchanges, truncated at `ge`
//!   epochs.
//! * **A** (alternate): intra round and exchange strictly alternate.
//! * **One**: the whole fleet is a single cluster running FedAvg with its
//!   head as server.
//! * **O**: local training only, no communication.
//!
//! An intra-cluster round trains every live member, uploads the non-head
//! models to the head, aggregates with FedAvg (the head's own model
//! included) and broadcasts the result back. An exchange swaps the two head
//! aggregates, forms one candidate aggregate per direction, scores both on
//! the shared held-out split and broadcasts the better one to both
//! clusters; ties go to cluster 0. When `head_refresh` is set, both heads
//! first run one `le`-epoch local update.
//!
//! Drones whose battery is empty at the start of an epoch sit out the rest
//! of the run and are logged with `battery_pct = 0`. A depleted head is
//! replaced by the live member nearest the centroid; a cluster with no live
//! member ends the run early.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{CommMeter, EnergyError, EnergyLedger};
use crate::fleet::Fleet;
use crate::learning::{
    client_update, evaluate, fedavg_aggregate, weighted_average, DatasetPartition, Evaluation, HyperParams,
    LearningError, ModelParams,
};
use crate::metrics::{record_round, MetricsError, Phase, RecordSink, RoundRecord};
use crate::seed::derive_seed;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid training plan: {0}")]
    InvalidPlan(String),
    #[error("invalid simulation setup: {0}")]
    Setup(String),
    #[error(transparent)]
    Learning(#[from] LearningError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Commutative FL.
    C,
    /// Alternate FL.
    A,
    /// Single-server FedAvg.
    One,
    /// Local training only.
    O,
}

/// How each direction of an exchange weighs the two cluster aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExchangeWeighting {
    /// FedAvg over the clusters' live sample counts. Both directions then
    /// produce the same aggregate.
    SampleCount,
    /// The receiving head keeps `server_share` of its own aggregate.
    ServerWeighted { server_share: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingPlan {
    pub method: Method,
    /// Local epochs per drone per training call.
    pub le: usize,
    /// Global epochs.
    pub ge: usize,
    /// Intra-cluster rounds per block (method C).
    pub lr: usize,
    /// Inter-cluster exchanges per block (method C).
    pub gr: usize,
    pub eta: f64,
    pub batch_size: usize,
    pub client_fraction: f64,
    /// Heads run one local update before each exchange.
    pub head_refresh: bool,
    pub exchange_weighting: ExchangeWeighting,
    /// Root seed; filled in from the experiment seed by the driver.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainingPlan {
    fn default() -> Self {
        Self {
            method: Method::C,
            le: 3,
            ge: 30,
            lr: 5,
            gr: 5,
            eta: 0.05,
            batch_size: 10,
            client_fraction: 1.0,
            head_refresh: true,
            exchange_weighting: ExchangeWeighting::SampleCount,
            seed: 42,
        }
    }
}

impl TrainingPlan {
    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |m: String| Err(SimError::InvalidPlan(m));
        if self.le == 0 {
            return fail("le must be >= 1".into());
        }
        if self.ge == 0 {
            return fail("ge must be >= 1".into());
        }
        if self.method == Method::C && (self.lr == 0 || self.gr == 0) {
            return fail(format!("method C needs lr >= 1 and gr >= 1, got lr={} gr={}", self.lr, self.gr));
        }
        if let ExchangeWeighting::ServerWeighted { server_share } = self.exchange_weighting {
            if !(server_share > 0.0 && server_share < 1.0) {
                return fail(format!("server_share must be in (0, 1), got {server_share}"));
            }
        }
        self.hyper().validate().map_err(|e| SimError::InvalidPlan(e.to_string()))?;
        if self.eta <= 0.0 {
            return fail(format!("eta must be > 0, got {}", self.eta));
        }
        Ok(())
    }

    pub fn hyper(&self) -> HyperParams {
        HyperParams {
            eta: self.eta,
            batch_size: self.batch_size,
            local_epochs: self.le,
            client_fraction: self.client_fraction,
        }
    }

    /// Clusters the method runs on.
    pub fn clusters(&self) -> usize {
        match self.method {
            Method::C | Method::A => 2,
            Method::One | Method::O => 1,
        }
    }

    /// Row label in the style `C_5lr_5gr_10`.
    pub fn type_label(&self, n_drones: usize) -> String {
        match self.method {
            Method::C => format!("C_{}lr_{}gr_{}", self.lr, self.gr, n_drones),
            Method::A => format!("A_{n_drones}"),
            Method::One => format!("One_{n_drones}"),
            Method::O => format!("O_{n_drones}"),
        }
    }

    /// Phase of every global epoch, in order.
    pub fn schedule(&self) -> Vec<Phase> {
        match self.method {
            Method::O => vec![Phase::Local; self.ge],
            Method::One => vec![Phase::Intra; self.ge],
            Method::A => (0..self.ge).map(|e| if e % 2 == 0 { Phase::Intra } else { Phase::Exchange }).collect(),
            Method::C => (0..self.ge)
                .map(|e| if e % (self.lr + self.gr) < self.lr { Phase::Intra } else { Phase::Exchange })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeOutcome {
    pub winner: usize,
    /// Accuracy of the aggregate formed at head B from A's upload.
    pub acc_a_to_b: f64,
    /// Accuracy of the aggregate formed at head A from B's upload.
    pub acc_b_to_a: f64,
    pub broadcast_params: ModelParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// A cluster ran out of live drones before `epoch` could start.
    BatteryExhausted { epoch: usize, cluster: usize },
    Diverged { drone: usize, epoch: usize },
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub run_id: String,
    pub status: RunStatus,
    pub records: Vec<RoundRecord>,
    pub ledger: EnergyLedger,
    pub fleet: Fleet,
    pub epochs_completed: usize,
}

/// A prepared run: clustered fleet with heads, data, and radio/compute
/// pricing.
#[derive(Debug, Clone)]
pub struct Simulation {
    fleet: Fleet,
    partitions: Vec<DatasetPartition>,
    eval: DatasetPartition,
    init: ModelParams,
    plan: TrainingPlan,
    meter: CommMeter,
    run_id: String,
    schedule: Vec<Phase>,
    epoch: usize,
    records: Vec<RoundRecord>,
    status: Option<RunStatus>,
}

enum Interrupt {
    Stop(RunStatus),
    Fail(SimError),
}

impl From<SimError> for Interrupt {
    fn from(e: SimError) -> Self {
        Interrupt::Fail(e)
    }
}

impl From<EnergyError> for Interrupt {
    fn from(e: EnergyError) -> Self {
        Interrupt::Fail(e.into())
    }
}

impl From<LearningError> for Interrupt {
    fn from(e: LearningError) -> Self {
        Interrupt::Fail(e.into())
    }
}

impl Simulation {
    /// `fleet` must already be clustered into `plan.clusters()` clusters
    /// with heads elected. Every drone starts from `init`.
    pub fn new(
        mut fleet: Fleet,
        partitions: Vec<DatasetPartition>,
        eval: DatasetPartition,
        init: ModelParams,
        plan: TrainingPlan,
        meter: CommMeter,
    ) -> Result<Self, SimError> {
        plan.validate()?;
        let k = plan.clusters();
        if plan.method != Method::O && fleet.num_clusters() != k {
            return Err(SimError::Setup(format!(
                "method {:?} needs {k} cluster(s), fleet has {}",
                plan.method,
                fleet.num_clusters()
            )));
        }
        for d in &fleet.drones {
            let Some(c) = d.cluster_id.filter(|&c| c < fleet.num_clusters()) else {
                return Err(SimError::Setup(format!("drone {} has no valid cluster", d.id)));
            };
            if d.partition_id >= partitions.len() {
                return Err(SimError::Setup(format!("drone {} points at missing partition {}", d.id, d.partition_id)));
            }
            if fleet.head(c).is_none() {
                return Err(SimError::Setup(format!("cluster {c} has no head")));
            }
        }
        for c in 0..fleet.num_clusters() {
            if fleet.members(c).iter().filter(|&&id| fleet.drones[id].is_head).count() != 1 {
                return Err(SimError::Setup(format!("cluster {c} must have exactly one head")));
            }
        }
        for d in fleet.drones.iter_mut() {
            d.params = Some(init.clone());
        }
        let run_id = plan.type_label(fleet.len());
        let schedule = plan.schedule();
        Ok(Self {
            fleet,
            partitions,
            eval,
            init,
            plan,
            meter,
            run_id,
            schedule,
            epoch: 0,
            records: Vec::new(),
            status: None,
        })
    }

    pub fn fleet(&self) -> &Fleet {
        &self.fleet
    }

    pub fn plan(&self) -> &TrainingPlan {
        &self.plan
    }

    pub fn meter(&self) -> &CommMeter {
        &self.meter
    }

    pub fn partitions(&self) -> &[DatasetPartition] {
        &self.partitions
    }

    pub fn eval_split(&self) -> &DatasetPartition {
        &self.eval
    }

    pub fn initial_params(&self) -> &ModelParams {
        &self.init
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn records(&self) -> &[RoundRecord] {
        &self.records
    }

    /// Global epochs completed so far.
    pub fn epochs_completed(&self) -> usize {
        self.epoch
    }

    pub fn status(&self) -> Option<RunStatus> {
        self.status
    }

    pub fn params(&self, drone: usize) -> &ModelParams {
        self.fleet.drones[drone].params.as_ref().expect("installed by Simulation::new")
    }

    fn set_params(&mut self, drone: usize, w: ModelParams) {
        self.fleet.drones[drone].params = Some(w);
    }

    fn alive(&self, drone: usize) -> bool {
        self.fleet.drones[drone].is_alive()
    }

    fn live_members(&self, cluster: usize) -> Vec<usize> {
        self.fleet.members(cluster).into_iter().filter(|&id| self.alive(id)).collect()
    }

    fn sample_count(&self, drone: usize) -> usize {
        self.partitions[self.fleet.drones[drone].partition_id].size()
    }

    fn stream_seed(&self, purpose: &str, index: u64, round: usize) -> u64 {
        derive_seed(derive_seed(self.plan.seed, purpose, index), "round", round as u64)
    }

    /// Runs `le` local epochs on `drone` from its current parameters and
    /// charges the compute energy.
    fn train(&mut self, drone: usize, purpose: &str, round: usize) -> Result<ModelParams, Interrupt> {
        let seed = self.stream_seed(purpose, drone as u64, round);
        let part = &self.partitions[self.fleet.drones[drone].partition_id];
        let out = match client_update(drone, self.params(drone), part, &self.plan.hyper(), seed) {
            Ok(w) => w,
            Err(LearningError::Diverged { drone, .. }) => {
                return Err(Interrupt::Stop(RunStatus::Diverged { drone, epoch: round }));
            }
            Err(e) => return Err(e.into()),
        };
        let samples = part.size();
        self.meter.train(&mut self.fleet, drone, samples, self.plan.le, round);
        Ok(out)
    }

    /// One FedAvg round inside `cluster`, as global epoch `round`.
    pub fn run_intra_cluster_round(&mut self, cluster: usize, round: usize) -> Result<(), SimError> {
        match self.intra_round(cluster, round) {
            Ok(()) => Ok(()),
            Err(Interrupt::Fail(e)) => Err(e),
            Err(Interrupt::Stop(status)) => {
                self.status = Some(status);
                Ok(())
            }
        }
    }

    fn intra_round(&mut self, cluster: usize, round: usize) -> Result<(), Interrupt> {
        let members = self.live_members(cluster);
        let head = self
            .fleet
            .head(cluster)
            .filter(|&h| self.alive(h))
            .ok_or_else(|| SimError::Setup(format!("cluster {cluster} has no live head")))?;

        let selected: Vec<usize> = if self.plan.client_fraction < 1.0 {
            let m = ((self.plan.client_fraction * members.len() as f64).floor() as usize).max(1);
            let mut rng = crate::seed::rng(self.stream_seed("select", cluster as u64, round));
            let mut pool = members.clone();
            rand::seq::SliceRandom::shuffle(pool.as_mut_slice(), &mut rng);
            pool.truncate(m);
            pool.sort_unstable();
            pool
        } else {
            members.clone()
        };

        let mut updates = Vec::with_capacity(selected.len());
        for &k in &selected {
            updates.push((k, self.train(k, "batch", round)?));
        }
        for &(k, _) in &updates {
            if k != head {
                self.meter.transmit(&mut self.fleet, k, head, round)?;
            }
        }
        let contributions: Vec<(&ModelParams, usize)> =
            updates.iter().map(|(k, w)| (w, self.sample_count(*k))).collect();
        let aggregate = fedavg_aggregate(&contributions)?;
        for &k in &members {
            if k != head {
                self.meter.transmit(&mut self.fleet, head, k, round)?;
            }
            self.set_params(k, aggregate.clone());
        }
        Ok(())
    }

    /// Evaluated exchange between the two cluster heads, as global epoch
    /// `round`.
    pub fn inter_cluster_exchange(&mut self, round: usize) -> Result<Option<ExchangeOutcome>, SimError> {
        match self.exchange(round) {
            Ok(outcome) => Ok(Some(outcome)),
            Err(Interrupt::Fail(e)) => Err(e),
            Err(Interrupt::Stop(status)) => {
                self.status = Some(status);
                Ok(None)
            }
        }
    }

    fn exchange(&mut self, round: usize) -> Result<ExchangeOutcome, Interrupt> {
        if self.fleet.num_clusters() != 2 {
            return Err(SimError::Setup("an exchange needs exactly two clusters".into()).into());
        }
        let head_of = |sim: &Self, c: usize| {
            sim.fleet
                .head(c)
                .filter(|&h| sim.alive(h))
                .ok_or_else(|| SimError::Setup(format!("cluster {c} has no live head")))
        };
        let (a, b) = (head_of(self, 0)?, head_of(self, 1)?);
        // Membership is fixed at the start of the exchange; a head drained
        // by its refresh still completes it.
        let members = [self.live_members(0), self.live_members(1)];

        if self.plan.head_refresh {
            let wa = self.train(a, "refresh", round)?;
            let wb = self.train(b, "refresh", round)?;
            self.set_params(a, wa);
            self.set_params(b, wb);
        }

        self.meter.transmit(&mut self.fleet, a, b, round)?;
        self.meter.transmit(&mut self.fleet, b, a, round)?;

        let (wa, wb) = (self.params(a).clone(), self.params(b).clone());
        let (at_a, at_b) = match self.plan.exchange_weighting {
            ExchangeWeighting::SampleCount => {
                let count = |c: usize| members[c].iter().map(|&k| self.sample_count(k)).sum::<usize>();
                let (na, nb) = (count(0), count(1));
                let at_a = fedavg_aggregate(&[(&wa, na), (&wb, nb)])?;
                let at_b = fedavg_aggregate(&[(&wb, nb), (&wa, na)])?;
                (at_a, at_b)
            }
            ExchangeWeighting::ServerWeighted { server_share } => {
                let other = 1.0 - server_share;
                let at_a = weighted_average(&[(&wa, server_share), (&wb, other)])?;
                let at_b = weighted_average(&[(&wb, server_share), (&wa, other)])?;
                (at_a, at_b)
            }
        };
        let acc_b_to_a = evaluate(&at_a, &self.eval).accuracy;
        let acc_a_to_b = evaluate(&at_b, &self.eval).accuracy;
        let (winner, broadcast) = if acc_a_to_b > acc_b_to_a { (1, at_b) } else { (0, at_a) };

        for (cluster, head) in [(0, a), (1, b)] {
            for &k in &members[cluster] {
                if k != head {
                    self.meter.transmit(&mut self.fleet, head, k, round)?;
                }
                self.set_params(k, broadcast.clone());
            }
        }
        Ok(ExchangeOutcome { winner, acc_a_to_b, acc_b_to_a, broadcast_params: broadcast })
    }

    fn local_round(&mut self, round: usize) -> Result<(), Interrupt> {
        for k in 0..self.fleet.len() {
            if self.alive(k) {
                let w = self.train(k, "batch", round)?;
                self.set_params(k, w);
            }
        }
        Ok(())
    }

    /// Replaces depleted heads; stops the run if a cluster has no live
    /// drone left.
    fn check_batteries(&mut self, round: usize) -> Result<(), Interrupt> {
        if self.plan.method == Method::O {
            if self.fleet.drones.iter().all(|d| d.is_depleted()) {
                return Err(Interrupt::Stop(RunStatus::BatteryExhausted { epoch: round, cluster: 0 }));
            }
            return Ok(());
        }
        for c in 0..self.fleet.num_clusters() {
            let head_alive = self.fleet.head(c).is_some_and(|h| self.alive(h));
            if !head_alive {
                match self.fleet.reelect_head(c) {
                    Some(h) => log::info!("{}: cluster {c} head re-elected as drone {h} at epoch {round}", self.run_id),
                    None => return Err(Interrupt::Stop(RunStatus::BatteryExhausted { epoch: round, cluster: c })),
                }
            }
        }
        Ok(())
    }

    fn emit_records(&mut self, round: usize, phase: Phase, sink: &mut dyn RecordSink) -> Result<(), SimError> {
        let traffic = self.meter.take_epoch_traffic();
        let mut cache: Vec<(ModelParams, Evaluation)> = Vec::new();
        for (k, &(sent, received)) in traffic.iter().enumerate() {
            let w = self.params(k);
            let eval = match cache.iter().find(|(p, _)| p.bit_eq(w)) {
                Some((_, e)) => *e,
                None => {
                    let e = evaluate(w, &self.eval);
                    cache.push((w.clone(), e));
                    e
                }
            };
            let drone = &self.fleet.drones[k];
            let record = RoundRecord {
                run_id: self.run_id.clone(),
                global_epoch: round,
                drone_id: k,
                cluster_id: drone.cluster_id.unwrap_or(0),
                phase,
                accuracy: eval.accuracy,
                loss: eval.loss,
                battery_pct: drone.battery_fraction(),
                bytes_sent: sent,
                bytes_received: received,
                bytes_total: sent + received,
            };
            record_round(sink, &record)?;
            self.records.push(record);
        }
        Ok(())
    }

    /// Runs the next global epoch. Returns its phase, or `None` once the run
    /// has ended (schedule exhausted, batteries exhausted or diverged).
    pub fn step(&mut self, sink: &mut dyn RecordSink) -> Result<Option<Phase>, SimError> {
        if self.status.is_some() {
            return Ok(None);
        }
        let Some(&phase) = self.schedule.get(self.epoch) else {
            self.status = Some(RunStatus::Completed);
            return Ok(None);
        };
        let round = self.epoch + 1;
        let outcome = self.check_batteries(round).and_then(|()| match phase {
            Phase::Local => self.local_round(round),
            Phase::Intra => (0..self.fleet.num_clusters()).try_for_each(|c| self.intra_round(c, round)),
            Phase::Exchange => self.exchange(round).map(|_| ()),
        });
        match outcome {
            Ok(()) => {
                self.emit_records(round, phase, sink)?;
                self.epoch = round;
                Ok(Some(phase))
            }
            Err(Interrupt::Stop(status)) => {
                log::warn!("{}: run stopped at epoch {round}: {status:?}", self.run_id);
                self.status = Some(status);
                Ok(None)
            }
            Err(Interrupt::Fail(e)) => Err(e),
        }
    }

    /// Runs the remaining schedule and flushes the sink.
    pub fn run(mut self, sink: &mut dyn RecordSink) -> Result<RunResult, SimError> {
        while self.step(sink)?.is_some() {}
        sink.flush()?;
        Ok(RunResult {
            run_id: self.run_id,
            status: self.status.unwrap_or(RunStatus::Completed),
            records: self.records,
            ledger: self.meter.ledger,
            fleet: self.fleet,
            epochs_completed: self.epoch,
        })
    }
}

fn run_checked(sim: Simulation, method: Method, sink: &mut dyn RecordSink) -> Result<RunResult, SimError> {
    if sim.plan.method != method {
        return Err(SimError::InvalidPlan(format!("plan is for method {:?}, not {method:?}", sim.plan.method)));
    }
    sim.run(sink)
}

/// Commutative FL.
pub fn run_method_c(sim: Simulation, sink: &mut dyn RecordSink) -> Result<RunResult, SimError> {
    run_checked(sim, Method::C, sink)
}

/// Alternate FL.
pub fn run_method_a(sim: Simulation, sink: &mut dyn RecordSink) -> Result<RunResult, SimError> {
    run_checked(sim, Method::A, sink)
}

/// Single-server FedAvg.
pub fn run_method_one(sim: Simulation, sink: &mut dyn RecordSink) -> Result<RunResult, SimError> {
    run_checked(sim, Method::One, sink)
}

/// Local-only training.
pub fn run_method_o(sim: Simulation, sink: &mut dyn RecordSink) -> Result<RunResult, SimError> {
    run_checked(sim, Method::O, sink)
}

/// Accuracy of one model trained on the union of all drone data for
/// `ge * le` epochs with the plan's learning rate and batch size.
pub fn centralized_reference(
    partitions: &[DatasetPartition],
    eval: &DatasetPartition,
    init: &ModelParams,
    plan: &TrainingPlan,
) -> Result<Evaluation, SimError> {
    let pooled = DatasetPartition::new(partitions.iter().flat_map(|p| p.examples.iter().cloned()).collect())?;
    let hp = HyperParams { local_epochs: plan.ge * plan.le, ..plan.hyper() };
    let w = client_update(usize::MAX, init, &pooled, &hp, derive_seed(plan.seed, "centralized", 0))?;
    Ok(evaluate(&w, eval))
}
