//! UAV fleet: placement, clustering, head election and geometry.

mod kmeans;

pub use kmeans::{kmeans_cluster, within_cluster_sse, KMeansResult, KMEANS_RESTARTS};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learning::ModelParams;
use crate::seed;

#[derive(Debug, Error, PartialEq)]
pub enum FleetError {
    #[error("invalid fleet: {0}")]
    InvalidFleet(String),
    #[error("invalid clustering request: {0}")]
    InvalidClustering(String),
}

/// A point in space, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub(crate) fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub(crate) fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

/// Euclidean distance between two positions, meters.
pub fn distance(q: &Position, q2: &Position) -> f64 {
    let (dx, dy, dz) = (q.x - q2.x, q.y - q2.y, q.z - q2.z);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// One UAV.
#[derive(Debug, Clone, PartialEq)]
pub struct DroneState {
    pub id: usize,
    pub position: Position,
    /// E_d, watt-hours.
    pub battery_capacity_wh: f64,
    pub battery_remaining_wh: f64,
    pub cluster_id: Option<usize>,
    pub is_head: bool,
    /// Local model; `None` until a simulation installs the initial model.
    pub params: Option<ModelParams>,
    pub partition_id: usize,
}

impl DroneState {
    /// Remaining battery as a fraction of capacity.
    pub fn battery_fraction(&self) -> f64 {
        (self.battery_remaining_wh / self.battery_capacity_wh).clamp(0.0, 1.0)
    }

    pub fn is_depleted(&self) -> bool {
        self.battery_remaining_wh <= 0.0
    }

    pub fn is_alive(&self) -> bool {
        !self.is_depleted()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fleet {
    pub drones: Vec<DroneState>,
    /// (width, height), meters.
    pub area: (f64, f64),
    pub rng_seed: u64,
    /// One centroid per cluster, filled in by [`Fleet::apply_clustering`].
    pub centroids: Vec<Position>,
}

/// Places `n` drones uniformly at random over the area at a fixed altitude.
pub fn spawn_fleet(
    n: usize,
    area: (f64, f64),
    altitude: f64,
    capacity_wh: f64,
    seed: u64,
) -> Result<Fleet, FleetError> {
    if n < 2 {
        return Err(FleetError::InvalidFleet(format!(
            "need at least 2 drones to form two clusters, got {n}"
        )));
    }
    if !(area.0 > 0.0 && area.1 > 0.0) || !area.0.is_finite() || !area.1.is_finite() {
        return Err(FleetError::InvalidFleet(format!(
            "area dimensions must be positive, got {area:?}"
        )));
    }
    if !(altitude >= 0.0 && altitude.is_finite()) {
        return Err(FleetError::InvalidFleet(format!("altitude must be >= 0, got {altitude}")));
    }
    let mut rng = seed::rng(seed::derive_seed(seed, "placement", 0));
    let positions = (0..n)
        .map(|_| {
            let x = rng.random::<f64>() * area.0;
            let y = rng.random::<f64>() * area.1;
            Position::new(x, y, altitude)
        })
        .collect::<Vec<_>>();
    let mut fleet = Fleet::from_positions(positions, capacity_wh)?;
    fleet.area = area;
    fleet.rng_seed = seed;
    Ok(fleet)
}

impl Fleet {
    /// Builds a fleet from explicit positions. The area is the bounding box
    /// of the positions.
    pub fn from_positions(positions: Vec<Position>, capacity_wh: f64) -> Result<Fleet, FleetError> {
        if positions.is_empty() {
            return Err(FleetError::InvalidFleet("no drones".into()));
        }
        if !(capacity_wh > 0.0 && capacity_wh.is_finite()) {
            return Err(FleetError::InvalidFleet(format!(
                "battery capacity must be positive, got {capacity_wh}"
            )));
        }
        if let Some(p) = positions.iter().find(|p| !p.is_finite() || p.z < 0.0) {
            return Err(FleetError::InvalidFleet(format!("invalid position {p:?}")));
        }
        let width = positions.iter().map(|p| p.x).fold(0.0, f64::max);
        let height = positions.iter().map(|p| p.y).fold(0.0, f64::max);
        let drones = positions
            .into_iter()
            .enumerate()
            .map(|(id, position)| DroneState {
                id,
                position,
                battery_capacity_wh: capacity_wh,
                battery_remaining_wh: capacity_wh,
                cluster_id: None,
                is_head: false,
                params: None,
                partition_id: id,
            })
            .collect();
        Ok(Fleet { drones, area: (width, height), rng_seed: 0, centroids: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.drones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.drones.is_empty()
    }

    pub fn positions(&self) -> Vec<Position> {
        self.drones.iter().map(|d| d.position).collect()
    }

    pub fn num_clusters(&self) -> usize {
        self.centroids.len()
    }

    /// Ids of the drones in `cluster`, in id order.
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.drones.iter().filter(|d| d.cluster_id == Some(cluster)).map(|d| d.id).collect()
    }

    /// Current head of `cluster`, if one is elected.
    pub fn head(&self, cluster: usize) -> Option<usize> {
        self.drones.iter().find(|d| d.cluster_id == Some(cluster) && d.is_head).map(|d| d.id)
    }

    /// Stores cluster labels and centroids and clears any previous heads.
    pub fn apply_clustering(&mut self, result: &KMeansResult) {
        assert_eq!(result.labels.len(), self.drones.len(), "label count must match fleet size");
        for (drone, &label) in self.drones.iter_mut().zip(&result.labels) {
            drone.cluster_id = Some(label);
            drone.is_head = false;
        }
        self.centroids = result.centroids.clone();
    }

    /// Re-elects the head of `cluster` among drones that still have battery.
    /// Returns the new head, or `None` when every member is depleted.
    pub fn reelect_head(&mut self, cluster: usize) -> Option<usize> {
        let centroid = *self.centroids.get(cluster)?;
        let candidates: Vec<(usize, Position)> = self
            .drones
            .iter()
            .filter(|d| d.cluster_id == Some(cluster) && d.is_alive())
            .map(|d| (d.id, d.position))
            .collect();
        let head = nearest_to(&candidates, &centroid);
        for d in self.drones.iter_mut().filter(|d| d.cluster_id == Some(cluster)) {
            d.is_head = Some(d.id) == head;
        }
        head
    }

    /// JSON-ready layout dump.
    pub fn snapshot(&self) -> Vec<DroneSnapshot> {
        self.drones
            .iter()
            .map(|d| DroneSnapshot {
                id: d.id,
                x: d.position.x,
                y: d.position.y,
                z: d.position.z,
                cluster: d.cluster_id,
                is_head: d.is_head,
                battery_pct: d.battery_fraction() * 100.0,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroneSnapshot {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub cluster: Option<usize>,
    pub is_head: bool,
    pub battery_pct: f64,
}

fn nearest_to(candidates: &[(usize, Position)], centroid: &Position) -> Option<usize> {
    candidates
        .iter()
        .map(|(id, p)| (*id, distance(p, centroid)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(id, _)| id)
}

/// Marks, per cluster, the drone nearest to the cluster centroid as head
/// (lowest id on ties). Returns the head id per cluster; clusters without
/// members get no entry.
pub fn select_cluster_heads(fleet: &mut Fleet) -> Vec<usize> {
    let mut heads = Vec::with_capacity(fleet.num_clusters());
    for cluster in 0..fleet.num_clusters() {
        let centroid = fleet.centroids[cluster];
        let members: Vec<(usize, Position)> = fleet
            .drones
            .iter()
            .filter(|d| d.cluster_id == Some(cluster))
            .map(|d| (d.id, d.position))
            .collect();
        let head = nearest_to(&members, &centroid);
        for d in fleet.drones.iter_mut().filter(|d| d.cluster_id == Some(cluster)) {
            d.is_head = Some(d.id) == head;
        }
        heads.extend(head);
    }
    heads
}
