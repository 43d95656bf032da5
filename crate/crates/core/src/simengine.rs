//! Deterministic fluid simulation of a validated topology.
//!
//! Time advances in 1-second ticks. Each tick, entry load is read from the
//! traffic profile and propagated through the DAG in topological order as
//! request *rates* (no individual requests, no sampling), so a run is fully
//! determined by `(topology, traffic, schedule)` — the seed only tags the
//! trace. Per component and tick the engine records offered/served/error
//! rates, utilization, a latency proxy, and layer state (cache hit rate,
//! breaker state, queue backlog).
//!
//! Model rules:
//! * served <= min(offered, effective capacity); the excess is errors, except
//!   at queues where it fills the backlog first and only overflow errors.
//! * utilization = offered / effective capacity, clamped to [0, 1]; it also
//!   drives the latency profile. The per-tick latency stands in for the P95
//!   an operator would alarm on.
//! * caches absorb `hit` of served traffic and forward the rest, split over
//!   outgoing edges proportionally to their declared fractions; all other
//!   kinds forward `served * load_fraction` per edge.
//! * an open breaker fails its whole offered load fast and sends nothing
//!   downstream; half-open forwards only a probe fraction.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

use crate::topology::{
    latency_at_utilization, ComponentId, ComponentKind, OptimizationParams, TopologyError,
    ValidatedTopology,
};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficPattern {
    Constant,
    Diurnal,
    Spike,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficProfile {
    pub pattern: TrafficPattern,
    pub base_rps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spike_multiplier: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spike_start_s: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spike_duration_s: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diurnal_period_s: Option<u64>,
}

impl TrafficProfile {
    pub fn constant(base_rps: f64) -> Self {
        TrafficProfile {
            pattern: TrafficPattern::Constant,
            base_rps,
            spike_multiplier: None,
            spike_start_s: None,
            spike_duration_s: None,
            diurnal_period_s: None,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.base_rps.is_finite() && self.base_rps >= 0.0) {
            return Err(SimError::InvalidTraffic(format!(
                "base_rps must be >= 0, got {}",
                self.base_rps
            )));
        }
        match self.pattern {
            TrafficPattern::Constant => Ok(()),
            TrafficPattern::Diurnal => match self.diurnal_period_s {
                Some(p) if p > 0 => Ok(()),
                _ => Err(SimError::InvalidTraffic(
                    "diurnal pattern requires diurnal_period_s > 0".into(),
                )),
            },
            TrafficPattern::Spike => {
                let mult = self.spike_multiplier.unwrap_or(0.0);
                if !(mult.is_finite() && mult >= 0.0) {
                    return Err(SimError::InvalidTraffic(
                        "spike pattern requires spike_multiplier >= 0".into(),
                    ));
                }
                if self.spike_start_s.is_none() || self.spike_duration_s.is_none() {
                    return Err(SimError::InvalidTraffic(
                        "spike pattern requires spike_start_s and spike_duration_s".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Offered entry load at `tick` (each entry receives the full profile).
    pub fn rate_at(&self, tick: u64) -> f64 {
        match self.pattern {
            TrafficPattern::Constant => self.base_rps,
            TrafficPattern::Diurnal => {
                let period = self.diurnal_period_s.unwrap_or(1).max(1) as f64;
                let phase = 2.0 * std::f64::consts::PI * (tick as f64) / period;
                self.base_rps * (1.0 + 0.5 * phase.sin())
            }
            TrafficPattern::Spike => {
                let start = self.spike_start_s.unwrap_or(0);
                let dur = self.spike_duration_s.unwrap_or(0);
                if tick >= start && tick < start + dur {
                    self.base_rps * self.spike_multiplier.unwrap_or(1.0)
                } else {
                    self.base_rps
                }
            }
        }
    }
}

/// The six perturbation strategies.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Reroute a fraction of would-be cache hits downstream.
    CacheBypass,
    /// Add a fixed latency (ms) to a component's responses.
    LatencyInjection,
    /// Multiply a component's capacity by a factor in (0, 1].
    ResourceConstraint,
    /// Force a circuit breaker closed regardless of downstream errors.
    BreakerBypass,
    /// Remove replicas from a load balancer's rotation.
    LbManipulation,
    /// Zero the load on one incoming edge of the target.
    DependencyIsolation,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Strategy::CacheBypass => "cache_bypass",
            Strategy::LatencyInjection => "latency_injection",
            Strategy::ResourceConstraint => "resource_constraint",
            Strategy::BreakerBypass => "breaker_bypass",
            Strategy::LbManipulation => "lb_manipulation",
            Strategy::DependencyIsolation => "dependency_isolation",
        };
        f.write_str(s)
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationAction {
    pub strategy: Strategy,
    pub target: ComponentId,
    /// Strategy-specific magnitude: bypass fraction in [0, 1], injected ms,
    /// capacity multiplier in (0, 1], or replicas removed (>= 1). Ignored for
    /// breaker_bypass and dependency_isolation.
    pub magnitude: f64,
    /// Upstream end of the isolated edge; required for dependency_isolation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_from: Option<ComponentId>,
    /// Set by the simulator when the action is applied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_tick: Option<u64>,
}

impl PerturbationAction {
    pub fn new(strategy: Strategy, target: impl Into<ComponentId>, magnitude: f64) -> Self {
        PerturbationAction {
            strategy,
            target: target.into(),
            magnitude,
            edge_from: None,
            started_tick: None,
        }
    }

    pub fn isolation(target: impl Into<ComponentId>, edge_from: impl Into<ComponentId>) -> Self {
        PerturbationAction {
            strategy: Strategy::DependencyIsolation,
            target: target.into(),
            magnitude: 1.0,
            edge_from: Some(edge_from.into()),
            started_tick: None,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BreakerState {
    Closed,
    Open,
    HalfOpen,
}

impl fmt::Display for BreakerState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BreakerState::Closed => "closed",
            BreakerState::Open => "open",
            BreakerState::HalfOpen => "half_open",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, PartialEq, Debug)]
pub struct BreakerParams {
    pub trip_threshold: f64,
    pub recovery_ticks: u32,
    pub half_open_probe_fraction: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct CircuitBreakerState {
    pub state: BreakerState,
    /// Ticks spent in the open state since the last trip.
    pub ticks_open: u32,
}

impl CircuitBreakerState {
    pub fn closed() -> Self {
        CircuitBreakerState {
            state: BreakerState::Closed,
            ticks_open: 0,
        }
    }
}

/// Advance the breaker one tick given the downstream error fraction observed
/// over the last window. closed -> open when the error rate exceeds
/// `trip_threshold`; open -> half_open after `recovery_ticks`; half_open
/// closes on a clean probe and re-opens otherwise.
pub fn step_circuit_breaker(
    s: CircuitBreakerState,
    window_error_rate: f64,
    p: &BreakerParams,
) -> CircuitBreakerState {
    match s.state {
        BreakerState::Closed => {
            if window_error_rate > p.trip_threshold {
                CircuitBreakerState {
                    state: BreakerState::Open,
                    ticks_open: 0,
                }
            } else {
                s
            }
        }
        BreakerState::Open => {
            let t = s.ticks_open + 1;
            if t >= p.recovery_ticks {
                CircuitBreakerState {
                    state: BreakerState::HalfOpen,
                    ticks_open: 0,
                }
            } else {
                CircuitBreakerState {
                    state: BreakerState::Open,
                    ticks_open: t,
                }
            }
        }
        BreakerState::HalfOpen => {
            if window_error_rate <= p.trip_threshold {
                CircuitBreakerState::closed()
            } else {
                CircuitBreakerState {
                    state: BreakerState::Open,
                    ticks_open: 0,
                }
            }
        }
    }
}

/// Per-component metrics for one tick.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ComponentTick {
    pub offered_rps: f64,
    pub served_rps: f64,
    pub error_rps: f64,
    pub utilization: f64,
    pub latency_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hit_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breaker_state: Option<BreakerState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queue_depth: Option<f64>,
}

impl ComponentTick {
    pub fn error_fraction(&self) -> f64 {
        if self.offered_rps > 1e-12 {
            self.error_rps / self.offered_rps
        } else {
            0.0
        }
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct TraceMeta {
    pub seed: u64,
    pub scenario_hash: String,
    pub duration_s: u64,
}

/// Full run output: per-tick metrics for every component, in topological
/// order, plus run metadata.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct TelemetryTrace {
    pub meta: TraceMeta,
    pub component_ids: Vec<ComponentId>,
    /// `ticks[t][c]` aligns with `component_ids[c]`.
    pub ticks: Vec<Vec<ComponentTick>>,
}

impl TelemetryTrace {
    pub fn component_pos(&self, id: &ComponentId) -> Option<usize> {
        self.component_ids.iter().position(|c| c == id)
    }

    pub fn series<'a>(
        &'a self,
        id: &ComponentId,
    ) -> Option<impl Iterator<Item = &'a ComponentTick>> {
        let pos = self.component_pos(id)?;
        Some(self.ticks.iter().map(move |row| &row[pos]))
    }

    pub fn mean_offered(&self, id: &ComponentId) -> Option<f64> {
        let pos = self.component_pos(id)?;
        if self.ticks.is_empty() {
            return Some(0.0);
        }
        let sum: f64 = self.ticks.iter().map(|row| row[pos].offered_rps).sum();
        Some(sum / self.ticks.len() as f64)
    }

    /// Newline-delimited records, one per tick per component, fixed field
    /// order: tick_s, component, offered_rps, served_rps, error_rps,
    /// utilization, latency_ms, then hit_rate / breaker_state when present.
    pub fn write_jsonl<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            tick_s: u64,
            component: &'a ComponentId,
            offered_rps: f64,
            served_rps: f64,
            error_rps: f64,
            utilization: f64,
            latency_ms: f64,
            #[serde(skip_serializing_if = "Option::is_none")]
            hit_rate: Option<f64>,
            #[serde(skip_serializing_if = "Option::is_none")]
            breaker_state: Option<BreakerState>,
        }
        for (t, row) in self.ticks.iter().enumerate() {
            for (c, m) in row.iter().enumerate() {
                let rec = Row {
                    tick_s: t as u64,
                    component: &self.component_ids[c],
                    offered_rps: m.offered_rps,
                    served_rps: m.served_rps,
                    error_rps: m.error_rps,
                    utilization: m.utilization,
                    latency_ms: m.latency_ms,
                    hit_rate: m.hit_rate,
                    breaker_state: m.breaker_state,
                };
                serde_json::to_writer(&mut w, &rec)?;
                w.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    /// CSV export with the same columns as the JSONL records; optional fields
    /// are left empty where they do not apply.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "tick_s,component,offered_rps,served_rps,error_rps,utilization,latency_ms,hit_rate,breaker_state"
        )?;
        for (t, row) in self.ticks.iter().enumerate() {
            for (c, m) in row.iter().enumerate() {
                let hit = m.hit_rate.map(|h| h.to_string()).unwrap_or_default();
                let brk = m.breaker_state.map(|b| b.to_string()).unwrap_or_default();
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{}",
                    t,
                    self.component_ids[c],
                    m.offered_rps,
                    m.served_rps,
                    m.error_rps,
                    m.utilization,
                    m.latency_ms,
                    hit,
                    brk
                )?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub enum ScheduleOp {
    Apply(PerturbationAction),
    /// Clear all active perturbations.
    Clear,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub tick_s: u64,
    pub op: ScheduleOp,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown component `{0}`")]
    UnknownComponent(ComponentId),
    #[error("`{strategy}` cannot target `{target}` ({kind}): {reason}")]
    IncompatibleTarget {
        strategy: Strategy,
        target: ComponentId,
        kind: ComponentKind,
        reason: String,
    },
    #[error("`{strategy}` magnitude {magnitude} out of range: {reason}")]
    InvalidMagnitude {
        strategy: Strategy,
        magnitude: f64,
        reason: String,
    },
    #[error("no edge `{from}` -> `{to}`")]
    UnknownEdge { from: ComponentId, to: ComponentId },
    #[error("invalid traffic profile: {0}")]
    InvalidTraffic(String),
    #[error("topology lookup failed: {0}")]
    Topology(String),
}

impl From<TopologyError> for SimError {
    fn from(e: TopologyError) -> Self {
        match e {
            TopologyError::UnknownComponent(id) => SimError::UnknownComponent(id),
            // Lookups against a validated topology can only fail as unknown
            // ids; other variants cannot occur here but keep their message.
            other => SimError::Topology(other.to_string()),
        }
    }
}

// Per-component dynamic state.
#[derive(Clone, Debug)]
struct CacheRt {
    size_units: f64,
    hit_max: f64,
    size_scale_units: f64,
    hit_drift_per_tick: f64,
    bypass_fraction: f64,
}

impl CacheRt {
    fn hit_rate(&self, tick: u64, shadow_fraction: f64) -> f64 {
        let hit_max = (self.hit_max + self.hit_drift_per_tick * tick as f64).clamp(0.0, 1.0);
        let base = hit_max * (1.0 - (-self.size_units / self.size_scale_units).exp());
        let reroute = (self.bypass_fraction + shadow_fraction).min(1.0);
        base * (1.0 - reroute)
    }
}

#[derive(Clone, Debug)]
struct BreakerRt {
    params: BreakerParams,
    state: CircuitBreakerState,
    forced_closed: bool,
}

#[derive(Clone, Debug)]
struct LbRt {
    replicas: u32,
    removed: u32,
}

#[derive(Clone, Debug)]
struct QueueRt {
    depth_units: f64,
    backlog: f64,
}

#[derive(Clone, Debug)]
struct PoolRt {
    size: u32,
    per_connection_rps: f64,
}

#[derive(Clone, Debug)]
struct CompRuntime {
    capacity_rps: f64,
    capacity_multiplier: f64,
    injected_latency_ms: f64,
    cache: Option<CacheRt>,
    breaker: Option<BreakerRt>,
    lb: Option<LbRt>,
    queue: Option<QueueRt>,
    pool: Option<PoolRt>,
}

impl CompRuntime {
    fn effective_capacity(&self) -> f64 {
        let mut cap = self.capacity_rps * self.capacity_multiplier;
        if let Some(lb) = &self.lb {
            let k = lb.replicas.max(1) as f64;
            cap *= (k - lb.removed.min(lb.replicas) as f64) / k;
        }
        if let Some(pool) = &self.pool {
            cap = cap.min(pool.size as f64 * pool.per_connection_rps);
        }
        cap
    }
}

/// Stepping simulator. Perturbations applied via [`Simulation::apply_action`]
/// persist until cleared; re-applying the same (strategy, target) replaces the
/// previous magnitude.
#[derive(Clone, Debug)]
pub struct Simulation {
    topo: ValidatedTopology,
    traffic: TrafficProfile,
    seed: u64,
    tick: u64,
    comps: Vec<CompRuntime>,
    /// Working per-edge fractions; dependency isolation zeroes entries here.
    edge_fraction: Vec<f64>,
    /// Cache pass-through split weights per edge (normalized within a cache).
    cache_weight: Vec<f64>,
    active: Vec<PerturbationAction>,
    shadow_fraction: f64,
    shed_fraction: f64,
    /// Previous tick's error fraction per component (breaker feedback).
    prev_error_fraction: Vec<f64>,
}

impl Simulation {
    pub fn new(topo: &ValidatedTopology, traffic: &TrafficProfile, seed: u64) -> Result<Self, SimError> {
        traffic.validate()?;
        let n = topo.len();
        let mut comps = Vec::with_capacity(n);
        for i in 0..n {
            let spec = topo.component_at(i);
            let mut rt = CompRuntime {
                capacity_rps: spec.capacity_rps,
                capacity_multiplier: 1.0,
                injected_latency_ms: 0.0,
                cache: None,
                breaker: None,
                lb: None,
                queue: None,
                pool: None,
            };
            match spec.optimization_params.as_ref() {
                Some(OptimizationParams::Cache {
                    size_units,
                    hit_max,
                    size_scale_units,
                    hit_drift_per_tick,
                }) => {
                    rt.cache = Some(CacheRt {
                        size_units: *size_units,
                        hit_max: *hit_max,
                        size_scale_units: *size_scale_units,
                        hit_drift_per_tick: *hit_drift_per_tick,
                        bypass_fraction: 0.0,
                    });
                }
                Some(OptimizationParams::CircuitBreaker {
                    trip_threshold,
                    recovery_ticks,
                    half_open_probe_fraction,
                }) => {
                    rt.breaker = Some(BreakerRt {
                        params: BreakerParams {
                            trip_threshold: *trip_threshold,
                            recovery_ticks: *recovery_ticks,
                            half_open_probe_fraction: *half_open_probe_fraction,
                        },
                        state: CircuitBreakerState::closed(),
                        forced_closed: false,
                    });
                }
                Some(OptimizationParams::LoadBalancer { replicas }) => {
                    rt.lb = Some(LbRt {
                        replicas: *replicas,
                        removed: 0,
                    });
                }
                Some(OptimizationParams::Queue { depth_units }) => {
                    rt.queue = Some(QueueRt {
                        depth_units: *depth_units,
                        backlog: 0.0,
                    });
                }
                Some(OptimizationParams::Pool {
                    size,
                    per_connection_rps,
                }) => {
                    rt.pool = Some(PoolRt {
                        size: *size,
                        per_connection_rps: *per_connection_rps,
                    });
                }
                None => {}
            }
            comps.push(rt);
        }

        let edge_fraction: Vec<f64> = topo.edges().iter().map(|e| e.load_fraction).collect();
        let mut cache_weight = vec![0.0; topo.edges().len()];
        for (i, rt) in comps.iter().enumerate() {
            if rt.cache.is_some() {
                let total: f64 = topo
                    .outgoing_edges(i)
                    .iter()
                    .map(|&e| topo.edge_at(e).load_fraction)
                    .sum();
                for &e in topo.outgoing_edges(i) {
                    cache_weight[e] = if total > 0.0 {
                        topo.edge_at(e).load_fraction / total
                    } else {
                        0.0
                    };
                }
            }
        }

        Ok(Simulation {
            traffic: traffic.clone(),
            seed,
            tick: 0,
            comps,
            edge_fraction,
            cache_weight,
            active: Vec::new(),
            shadow_fraction: 0.0,
            shed_fraction: 0.0,
            prev_error_fraction: vec![0.0; n],
            topo: topo.clone(),
        })
    }

    pub fn topology(&self) -> &ValidatedTopology {
        &self.topo
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn active_actions(&self) -> &[PerturbationAction] {
        &self.active
    }

    /// Shadow traffic keeps fallback paths warm by rerouting this fraction of
    /// would-be cache hits downstream at every cache.
    pub fn set_shadow_fraction(&mut self, fraction: f64) {
        self.shadow_fraction = fraction.clamp(0.0, 1.0);
    }

    /// Load shedding drops this fraction of entry traffic.
    pub fn set_shed_fraction(&mut self, fraction: f64) {
        self.shed_fraction = fraction.clamp(0.0, 1.0);
    }

    /// Validate and activate a perturbation. The effect persists until
    /// cleared; a second action with the same strategy and target replaces
    /// the first.
    pub fn apply_action(&mut self, mut action: PerturbationAction) -> Result<(), SimError> {
        let idx = self.topo.component_index(&action.target)?;
        let kind = self.topo.component_at(idx).kind;
        let incompatible = |reason: &str| SimError::IncompatibleTarget {
            strategy: action.strategy,
            target: action.target.clone(),
            kind,
            reason: reason.to_string(),
        };
        let bad_magnitude = |reason: &str| SimError::InvalidMagnitude {
            strategy: action.strategy,
            magnitude: action.magnitude,
            reason: reason.to_string(),
        };

        match action.strategy {
            Strategy::CacheBypass => {
                if self.comps[idx].cache.is_none() {
                    return Err(incompatible("target must be a cache"));
                }
                if !(action.magnitude.is_finite() && (0.0..=1.0).contains(&action.magnitude)) {
                    return Err(bad_magnitude("bypass fraction must be in [0, 1]"));
                }
            }
            Strategy::LatencyInjection => {
                if kind == ComponentKind::Entry {
                    return Err(incompatible("entries cannot be perturbed"));
                }
                if !(action.magnitude.is_finite() && action.magnitude >= 0.0) {
                    return Err(bad_magnitude("injected latency must be >= 0 ms"));
                }
            }
            Strategy::ResourceConstraint => {
                if kind == ComponentKind::Entry {
                    return Err(incompatible("entries cannot be perturbed"));
                }
                if !(action.magnitude.is_finite()
                    && action.magnitude > 0.0
                    && action.magnitude <= 1.0)
                {
                    return Err(bad_magnitude("capacity multiplier must be in (0, 1]"));
                }
            }
            Strategy::BreakerBypass => {
                if self.comps[idx].breaker.is_none() {
                    return Err(incompatible("target must be a circuit_breaker"));
                }
            }
            Strategy::LbManipulation => {
                let Some(lb) = self.comps[idx].lb.as_ref() else {
                    return Err(incompatible("target must be a load_balancer"));
                };
                let m = action.magnitude;
                if !(m.is_finite() && m >= 1.0 && m.fract() == 0.0) {
                    return Err(bad_magnitude("replicas removed must be a positive integer"));
                }
                if (m as u32) >= lb.replicas {
                    return Err(bad_magnitude(
                        "cannot remove every replica from the rotation",
                    ));
                }
            }
            Strategy::DependencyIsolation => {
                let Some(from) = action.edge_from.clone() else {
                    return Err(incompatible("edge_from is required"));
                };
                if self.topo.find_edge(&from, &action.target).is_none() {
                    return Err(SimError::UnknownEdge {
                        from,
                        to: action.target.clone(),
                    });
                }
            }
        }

        action.started_tick = Some(self.tick);
        if let Some(existing) = self
            .active
            .iter()
            .position(|a| a.strategy == action.strategy && a.target == action.target)
        {
            self.revert_effect(self.active[existing].clone());
            self.active.remove(existing);
        }
        self.apply_effect(&action);
        self.active.push(action);
        Ok(())
    }

    /// Clear every active perturbation and restore normal operation.
    pub fn clear_actions(&mut self) {
        let active = std::mem::take(&mut self.active);
        for a in active {
            self.revert_effect(a);
        }
    }

    fn apply_effect(&mut self, action: &PerturbationAction) {
        let idx = self.topo.component_index(&action.target).expect("validated");
        match action.strategy {
            Strategy::CacheBypass => {
                self.comps[idx].cache.as_mut().unwrap().bypass_fraction = action.magnitude;
            }
            Strategy::LatencyInjection => {
                self.comps[idx].injected_latency_ms = action.magnitude;
            }
            Strategy::ResourceConstraint => {
                self.comps[idx].capacity_multiplier = action.magnitude;
            }
            Strategy::BreakerBypass => {
                self.comps[idx].breaker.as_mut().unwrap().forced_closed = true;
            }
            Strategy::LbManipulation => {
                self.comps[idx].lb.as_mut().unwrap().removed = action.magnitude as u32;
            }
            Strategy::DependencyIsolation => {
                let from = action.edge_from.as_ref().expect("validated");
                let e = self.topo.find_edge(from, &action.target).expect("validated");
                self.edge_fraction[e] = 0.0;
            }
        }
    }

    fn revert_effect(&mut self, action: PerturbationAction) {
        let idx = self.topo.component_index(&action.target).expect("validated");
        match action.strategy {
            Strategy::CacheBypass => {
                self.comps[idx].cache.as_mut().unwrap().bypass_fraction = 0.0;
            }
            Strategy::LatencyInjection => {
                self.comps[idx].injected_latency_ms = 0.0;
            }
            Strategy::ResourceConstraint => {
                self.comps[idx].capacity_multiplier = 1.0;
            }
            Strategy::BreakerBypass => {
                self.comps[idx].breaker.as_mut().unwrap().forced_closed = false;
            }
            Strategy::LbManipulation => {
                self.comps[idx].lb.as_mut().unwrap().removed = 0;
            }
            Strategy::DependencyIsolation => {
                let from = action.edge_from.as_ref().expect("validated");
                let e = self.topo.find_edge(from, &action.target).expect("validated");
                self.edge_fraction[e] = self.topo.edge_at(e).load_fraction;
            }
        }
    }

    /// Apply configuration values to the underlying layer parameters (used by
    /// the optimizer and monitor, not a perturbation).
    pub fn set_cache_size(&mut self, id: &ComponentId, size_units: f64) -> Result<(), SimError> {
        let idx = self.topo.component_index(id)?;
        match self.comps[idx].cache.as_mut() {
            Some(c) => {
                c.size_units = size_units.max(0.0);
                Ok(())
            }
            None => Err(SimError::IncompatibleTarget {
                strategy: Strategy::CacheBypass,
                target: id.clone(),
                kind: self.topo.component_at(idx).kind,
                reason: "not a cache".into(),
            }),
        }
    }

    /// See [`Simulation::set_cache_size`].
    pub fn set_pool_size(&mut self, id: &ComponentId, size: u32) -> Result<(), SimError> {
        let idx = self.topo.component_index(id)?;
        match self.comps[idx].pool.as_mut() {
            Some(p) => {
                p.size = size.max(1);
                Ok(())
            }
            None => Err(SimError::IncompatibleTarget {
                strategy: Strategy::ResourceConstraint,
                target: id.clone(),
                kind: self.topo.component_at(idx).kind,
                reason: "no connection pool".into(),
            }),
        }
    }

    /// See [`Simulation::set_cache_size`].
    pub fn set_queue_depth(&mut self, id: &ComponentId, depth_units: f64) -> Result<(), SimError> {
        let idx = self.topo.component_index(id)?;
        match self.comps[idx].queue.as_mut() {
            Some(q) => {
                q.depth_units = depth_units.max(0.0);
                q.backlog = q.backlog.min(q.depth_units);
                Ok(())
            }
            None => Err(SimError::IncompatibleTarget {
                strategy: Strategy::ResourceConstraint,
                target: id.clone(),
                kind: self.topo.component_at(idx).kind,
                reason: "not a queue".into(),
            }),
        }
    }

    /// See [`Simulation::set_cache_size`].
    pub fn set_lb_replicas(&mut self, id: &ComponentId, replicas: u32) -> Result<(), SimError> {
        let idx = self.topo.component_index(id)?;
        match self.comps[idx].lb.as_mut() {
            Some(lb) => {
                lb.replicas = replicas.max(1);
                lb.removed = lb.removed.min(lb.replicas.saturating_sub(1));
                Ok(())
            }
            None => Err(SimError::IncompatibleTarget {
                strategy: Strategy::LbManipulation,
                target: id.clone(),
                kind: self.topo.component_at(idx).kind,
                reason: "not a load balancer".into(),
            }),
        }
    }

    /// See [`Simulation::set_cache_size`].
    pub fn set_breaker_trip(&mut self, id: &ComponentId, trip_threshold: f64) -> Result<(), SimError> {
        let idx = self.topo.component_index(id)?;
        match self.comps[idx].breaker.as_mut() {
            Some(b) => {
                b.params.trip_threshold = trip_threshold.clamp(0.0, 1.0);
                Ok(())
            }
            None => Err(SimError::IncompatibleTarget {
                strategy: Strategy::BreakerBypass,
                target: id.clone(),
                kind: self.topo.component_at(idx).kind,
                reason: "no circuit breaker".into(),
            }),
        }
    }

    /// Advance one tick and return its per-component metrics (topological
    /// order, aligned with `topology().topo_order()`).
    pub fn step(&mut self) -> Vec<ComponentTick> {
        let n = self.topo.len();
        let entry_rate = self.traffic.rate_at(self.tick) * (1.0 - self.shed_fraction);
        let mut edge_flow = vec![0.0f64; self.topo.edges().len()];
        let mut by_index: Vec<ComponentTick> = vec![
            ComponentTick {
                offered_rps: 0.0,
                served_rps: 0.0,
                error_rps: 0.0,
                utilization: 0.0,
                latency_ms: 0.0,
                hit_rate: None,
                breaker_state: None,
                queue_depth: None,
            };
            n
        ];

        for &i in self.topo.topo_order() {
            let inflow: f64 = self
                .topo
                .incoming_edges(i)
                .iter()
                .map(|&e| edge_flow[e])
                .sum();
            let mut offered = inflow;
            if self.topo.is_entry(i) {
                offered += entry_rate;
            }

            let eff_cap = self.comps[i].effective_capacity();

            // Queues release backlog into their own offered load when there
            // is spare capacity.
            if let Some(q) = self.comps[i].queue.as_mut() {
                let drain = q.backlog.min((eff_cap - offered).max(0.0));
                q.backlog -= drain;
                offered += drain;
            }

            // Breaker transition happens before routing, fed by the previous
            // tick's mean downstream error fraction.
            let mut breaker_state = None;
            if self.comps[i].breaker.is_some() {
                let feedback = self.downstream_error_fraction(i);
                let b = self.comps[i].breaker.as_mut().unwrap();
                b.state = if b.forced_closed {
                    CircuitBreakerState::closed()
                } else {
                    step_circuit_breaker(b.state, feedback, &b.params)
                };
                breaker_state = Some(b.state.state);
            }

            let (served, errors) = match breaker_state {
                Some(BreakerState::Open) => (0.0, offered),
                Some(BreakerState::HalfOpen) => {
                    let probe_fraction = self.comps[i]
                        .breaker
                        .as_ref()
                        .unwrap()
                        .params
                        .half_open_probe_fraction;
                    let served = (offered * probe_fraction).min(eff_cap);
                    (served, offered - served)
                }
                _ => {
                    let served = offered.min(eff_cap);
                    let overflow = offered - served;
                    if overflow > 0.0 {
                        if let Some(q) = self.comps[i].queue.as_mut() {
                            let room = (q.depth_units - q.backlog).max(0.0);
                            let queued = overflow.min(room);
                            q.backlog += queued;
                            (served, overflow - queued)
                        } else {
                            (served, overflow)
                        }
                    } else {
                        (served, 0.0)
                    }
                }
            };

            let utilization = if eff_cap > 0.0 {
                (offered / eff_cap).min(1.0)
            } else {
                1.0
            };

            let spec = self.topo.component_at(i);
            let mut latency =
                latency_at_utilization(&spec.latency_profile, utilization)
                    + self.comps[i].injected_latency_ms;
            let mut queue_depth = None;
            if let Some(q) = self.comps[i].queue.as_ref() {
                // Waiting time for the buffered backlog, in ms.
                if eff_cap > 0.0 {
                    latency += 1000.0 * q.backlog / eff_cap;
                }
                latency = latency.min(spec.latency_profile.saturation_cap_ms);
                queue_depth = Some(q.backlog);
            }

            // Route downstream.
            let hit_rate = self.comps[i]
                .cache
                .as_ref()
                .map(|c| c.hit_rate(self.tick, self.shadow_fraction));
            match hit_rate {
                Some(h) => {
                    let pass = served * (1.0 - h);
                    for &e in self.topo.outgoing_edges(i) {
                        let isolated = self.edge_fraction[e] == 0.0
                            && self.topo.edge_at(e).load_fraction != 0.0;
                        edge_flow[e] = if isolated {
                            0.0
                        } else {
                            pass * self.cache_weight[e]
                        };
                    }
                }
                None => {
                    for &e in self.topo.outgoing_edges(i) {
                        edge_flow[e] = served * self.edge_fraction[e];
                    }
                }
            }

            by_index[i] = ComponentTick {
                offered_rps: offered,
                served_rps: served,
                error_rps: errors,
                utilization,
                latency_ms: latency,
                hit_rate,
                breaker_state,
                queue_depth,
            };
        }

        for (prev, status) in self.prev_error_fraction.iter_mut().zip(&by_index) {
            *prev = status.error_fraction();
        }
        self.tick += 1;
        self.topo
            .topo_order()
            .iter()
            .map(|&i| by_index[i].clone())
            .collect()
    }

    /// Mean error fraction across a component's downstream edges (previous
    /// tick), weighted by declared load fraction.
    fn downstream_error_fraction(&self, i: usize) -> f64 {
        let mut weighted = 0.0;
        let mut weight = 0.0;
        for &e in self.topo.outgoing_edges(i) {
            let edge = self.topo.edge_at(e);
            let t = self.topo.component_index(&edge.to).expect("validated");
            weighted += edge.load_fraction * self.prev_error_fraction[t];
            weight += edge.load_fraction;
        }
        if weight > 0.0 {
            weighted / weight
        } else {
            0.0
        }
    }

    /// Component ids in topological order (the order of `step` output).
    pub fn component_order(&self) -> Vec<ComponentId> {
        self.topo
            .topo_order()
            .iter()
            .map(|&i| self.topo.component_at(i).id.clone())
            .collect()
    }
}

/// Run a full simulation with an optional perturbation schedule. Identical
/// inputs produce identical traces byte-for-byte after serialization.
pub fn run_simulation(
    topo: &ValidatedTopology,
    traffic: &TrafficProfile,
    duration_s: u64,
    seed: u64,
    schedule: &[ScheduleEntry],
) -> Result<TelemetryTrace, SimError> {
    let mut sim = Simulation::new(topo, traffic, seed)?;
    let component_ids = sim.component_order();
    let mut ticks = Vec::with_capacity(duration_s as usize);
    for t in 0..duration_s {
        for entry in schedule.iter().filter(|s| s.tick_s == t) {
            match &entry.op {
                ScheduleOp::Apply(action) => sim.apply_action(action.clone())?,
                ScheduleOp::Clear => sim.clear_actions(),
            }
        }
        ticks.push(sim.step());
    }
    Ok(TelemetryTrace {
        meta: TraceMeta {
            seed,
            scenario_hash: String::new(),
            duration_s,
        },
        component_ids,
        ticks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{
        validate_topology, ComponentSpec, DependencyEdge, LatencyModel, LatencyProfile,
        TopologyGraph,
    };

    fn profile_flat(base: f64) -> LatencyProfile {
        LatencyProfile {
            base_latency_ms: base,
            model: LatencyModel::Linear,
            saturation_cap_ms: base * 1.5,
            table_points: None,
        }
    }

    fn comp(id: &str, kind: ComponentKind, capacity: f64) -> ComponentSpec {
        ComponentSpec {
            id: id.into(),
            kind,
            capacity_rps: capacity,
            latency_profile: profile_flat(10.0),
            mttr_minutes: 10.0,
            observability_coverage: 0.9,
            criticality: 2.0,
            bypass_probability: 0.1,
            optimization_params: None,
        }
    }

    fn cache_params(size: f64, hit_max: f64) -> OptimizationParams {
        OptimizationParams::Cache {
            size_units: size,
            hit_max,
            // size >> scale, so the realized hit rate is hit_max to within
            // floating point noise.
            size_scale_units: size / 40.0,
            hit_drift_per_tick: 0.0,
        }
    }

    fn edge(from: &str, to: &str, fraction: f64) -> DependencyEdge {
        DependencyEdge {
            from: from.into(),
            to: to.into(),
            load_fraction: fraction,
            declared_amplification: None,
            edge_observability: 0.5,
        }
    }

    /// entry -> cache(hit) -> db
    pub(crate) fn cache_chain(hit: f64, db_capacity: f64) -> ValidatedTopology {
        let mut cache = comp("cache1", ComponentKind::Cache, 5_000.0);
        cache.optimization_params = Some(cache_params(400.0, hit));
        let graph = TopologyGraph {
            components: vec![
                comp("front", ComponentKind::Entry, 10_000.0),
                cache,
                comp("db1", ComponentKind::Database, db_capacity),
            ],
            edges: vec![
                edge("front", "cache1", 1.0),
                edge("cache1", "db1", 1.0 - hit),
            ],
            entries: vec!["front".into()],
        };
        validate_topology(graph).unwrap()
    }

    #[test]
    fn constant_traffic_propagates_every_tick() {
        let graph = TopologyGraph {
            components: vec![
                comp("front", ComponentKind::Entry, 10_000.0),
                comp("db1", ComponentKind::Database, 200.0),
            ],
            edges: vec![edge("front", "db1", 1.0)],
            entries: vec!["front".into()],
        };
        let topo = validate_topology(graph).unwrap();
        let trace =
            run_simulation(&topo, &TrafficProfile::constant(100.0), 10, 7, &[]).unwrap();
        assert_eq!(trace.ticks.len(), 10);
        for m in trace.series(&"db1".into()).unwrap() {
            assert!((m.offered_rps - 100.0).abs() < 1e-9);
            assert!((m.served_rps - 100.0).abs() < 1e-9);
            assert_eq!(m.error_rps, 0.0);
        }
    }

    #[test]
    fn cache_absorbs_hits() {
        let topo = cache_chain(0.99, 1_000.0);
        let trace =
            run_simulation(&topo, &TrafficProfile::constant(1_000.0), 5, 1, &[]).unwrap();
        let db = trace.mean_offered(&"db1".into()).unwrap();
        assert!((db - 10.0).abs() < 1e-3, "db offered {db}");
    }

    #[test]
    fn cache_bypass_reroutes_would_be_hits() {
        let topo = cache_chain(0.99, 1_000.0);
        let schedule = vec![ScheduleEntry {
            tick_s: 0,
            op: ScheduleOp::Apply(PerturbationAction::new(
                Strategy::CacheBypass,
                "cache1",
                0.10,
            )),
        }];
        let trace =
            run_simulation(&topo, &TrafficProfile::constant(1_000.0), 5, 1, &schedule).unwrap();
        let db = trace.mean_offered(&"db1".into()).unwrap();
        // 10 rps of misses plus 10% of the 990 rps of would-be hits.
        assert!((db - 109.0).abs() < 0.05, "db offered {db}");
    }

    #[test]
    fn served_is_capacity_limited_and_excess_errors() {
        let graph = TopologyGraph {
            components: vec![
                comp("front", ComponentKind::Entry, 10_000.0),
                comp("db1", ComponentKind::Database, 80.0),
            ],
            edges: vec![edge("front", "db1", 1.0)],
            entries: vec!["front".into()],
        };
        let topo = validate_topology(graph).unwrap();
        let trace =
            run_simulation(&topo, &TrafficProfile::constant(100.0), 3, 1, &[]).unwrap();
        let m = &trace.ticks[0][trace.component_pos(&"db1".into()).unwrap()];
        assert!((m.served_rps - 80.0).abs() < 1e-9);
        assert!((m.error_rps - 20.0).abs() < 1e-9);
        assert_eq!(m.utilization, 1.0);
    }

    #[test]
    fn queue_buffers_overflow_then_drains() {
        let mut queue = comp("q1", ComponentKind::Queue, 100.0);
        queue.optimization_params = Some(OptimizationParams::Queue { depth_units: 50.0 });
        let graph = TopologyGraph {
            components: vec![comp("front", ComponentKind::Entry, 10_000.0), queue],
            edges: vec![edge("front", "q1", 1.0)],
            entries: vec!["front".into()],
        };
        let topo = validate_topology(graph).unwrap();
        // 2-tick spike at 130 rps, then 60 rps.
        let traffic = TrafficProfile {
            pattern: TrafficPattern::Spike,
            base_rps: 60.0,
            spike_multiplier: Some(130.0 / 60.0),
            spike_start_s: Some(0),
            spike_duration_s: Some(2),
            diurnal_period_s: None,
        };
        let trace = run_simulation(&topo, &traffic, 5, 1, &[]).unwrap();
        let pos = trace.component_pos(&"q1".into()).unwrap();
        // Spike ticks: 30 rps over capacity buffered, no errors.
        assert_eq!(trace.ticks[0][pos].error_rps, 0.0);
        assert!((trace.ticks[0][pos].queue_depth.unwrap() - 30.0).abs() < 1e-9);
        assert!((trace.ticks[1][pos].queue_depth.unwrap() - 50.0).abs() < 1e-9);
        // Backlog hit the depth limit on tick 1: remainder errors.
        assert!((trace.ticks[1][pos].error_rps - 10.0).abs() < 1e-9);
        // After the spike the backlog drains at spare capacity (40 rps).
        assert!((trace.ticks[2][pos].queue_depth.unwrap() - 10.0).abs() < 1e-9);
        assert!((trace.ticks[2][pos].served_rps - 100.0).abs() < 1e-9);
        assert_eq!(trace.ticks[3][pos].queue_depth.unwrap(), 0.0);
    }

    #[test]
    fn breaker_state_machine_walks_closed_open_half_open() {
        let p = BreakerParams {
            trip_threshold: 0.5,
            recovery_ticks: 5,
            half_open_probe_fraction: 0.1,
        };
        let mut s = CircuitBreakerState::closed();
        s = step_circuit_breaker(s, 0.6, &p);
        assert_eq!(s.state, BreakerState::Open);
        // Stays open for recovery_ticks ticks, then probes.
        for tick in 2..=5 {
            s = step_circuit_breaker(s, 0.0, &p);
            assert_eq!(s.state, BreakerState::Open, "tick {tick}");
        }
        s = step_circuit_breaker(s, 0.0, &p);
        assert_eq!(s.state, BreakerState::HalfOpen);
        // Clean probe closes; dirty probe would re-open.
        let closed = step_circuit_breaker(s, 0.1, &p);
        assert_eq!(closed.state, BreakerState::Closed);
        let reopened = step_circuit_breaker(s, 0.9, &p);
        assert_eq!(reopened.state, BreakerState::Open);
    }

    #[test]
    fn open_breaker_fails_fast_and_protects_downstream() {
        let mut breaker = comp("brk", ComponentKind::CircuitBreaker, 1_000.0);
        breaker.optimization_params = Some(OptimizationParams::CircuitBreaker {
            trip_threshold: 0.3,
            recovery_ticks: 50,
            half_open_probe_fraction: 0.1,
        });
        let graph = TopologyGraph {
            components: vec![
                comp("front", ComponentKind::Entry, 10_000.0),
                breaker,
                comp("db1", ComponentKind::Database, 60.0),
            ],
            edges: vec![edge("front", "brk", 1.0), edge("brk", "db1", 1.0)],
            entries: vec!["front".into()],
        };
        let topo = validate_topology(graph).unwrap();
        let trace =
            run_simulation(&topo, &TrafficProfile::constant(100.0), 6, 1, &[]).unwrap();
        let brk = trace.component_pos(&"brk".into()).unwrap();
        let db = trace.component_pos(&"db1".into()).unwrap();
        // Tick 0: db saturates (error fraction 0.4. > 0.3).
        assert!(trace.ticks[0][db].error_fraction() > 0.3);
        // Tick 1: breaker sees it and opens; everything fails fast at the
        // breaker and the db is fully protected.
        assert_eq!(trace.ticks[1][brk].breaker_state, Some(BreakerState::Open));
        assert_eq!(trace.ticks[1][brk].served_rps, 0.0);
        assert!((trace.ticks[1][brk].error_rps - 100.0).abs() < 1e-9);
        assert_eq!(trace.ticks[1][db].offered_rps, 0.0);
    }

    #[test]
    fn forced_closed_breaker_keeps_forwarding() {
        let mut breaker = comp("brk", ComponentKind::CircuitBreaker, 1_000.0);
        breaker.optimization_params = Some(OptimizationParams::CircuitBreaker {
            trip_threshold: 0.3,
            recovery_ticks: 50,
            half_open_probe_fraction: 0.1,
        });
        let graph = TopologyGraph {
            components: vec![
                comp("front", ComponentKind::Entry, 10_000.0),
                breaker,
                comp("db1", ComponentKind::Database, 60.0),
            ],
            edges: vec![edge("front", "brk", 1.0), edge("brk", "db1", 1.0)],
            entries: vec!["front".into()],
        };
        let topo = validate_topology(graph).unwrap();
        let schedule = vec![ScheduleEntry {
            tick_s: 0,
            op: ScheduleOp::Apply(PerturbationAction::new(
                Strategy::BreakerBypass,
                "brk",
                1.0,
            )),
        }];
        let trace =
            run_simulation(&topo, &TrafficProfile::constant(100.0), 6, 1, &schedule).unwrap();
        let db = trace.component_pos(&"db1".into()).unwrap();
        for t in 0..6 {
            assert!((trace.ticks[t][db].offered_rps - 100.0).abs() < 1e-9, "tick {t}");
        }
    }

    #[test]
    fn lb_removal_rescales_capacity() {
        let mut lb = comp("lb", ComponentKind::LoadBalancer, 400.0);
        lb.optimization_params = Some(OptimizationParams::LoadBalancer { replicas: 4 });
        let graph = TopologyGraph {
            components: vec![comp("front", ComponentKind::Entry, 10_000.0), lb],
            edges: vec![edge("front", "lb", 1.0)],
            entries: vec!["front".into()],
        };
        let topo = validate_topology(graph).unwrap();
        let schedule = vec![ScheduleEntry {
            tick_s: 2,
            op: ScheduleOp::Apply(PerturbationAction::new(
                Strategy::LbManipulation,
                "lb",
                1.0,
            )),
        }];
        let trace =
            run_simulation(&topo, &TrafficProfile::constant(350.0), 4, 1, &schedule).unwrap();
        let lb = trace.component_pos(&"lb".into()).unwrap();
        assert_eq!(trace.ticks[1][lb].error_rps, 0.0);
        // 3 of 4 replicas left: capacity 300, so 50 rps of errors.
        assert!((trace.ticks[2][lb].error_rps - 50.0).abs() < 1e-9);
    }

    #[test]
    fn dependency_isolation_zeroes_one_edge() {
        let graph = TopologyGraph {
            components: vec![
                comp("front", ComponentKind::Entry, 10_000.0),
                comp("svc", ComponentKind::Service, 1_000.0),
                comp("db1", ComponentKind::Database, 1_000.0),
            ],
            edges: vec![
                edge("front", "svc", 0.6),
                edge("front", "db1", 0.4),
                edge("svc", "db1", 0.5),
            ],
            entries: vec!["front".into()],
        };
        let topo = validate_topology(graph).unwrap();
        let schedule = vec![ScheduleEntry {
            tick_s: 1,
            op: ScheduleOp::Apply(PerturbationAction::isolation("db1", "svc")),
        }];
        let trace =
            run_simulation(&topo, &TrafficProfile::constant(100.0), 3, 1, &schedule).unwrap();
        let db = trace.component_pos(&"db1".into()).unwrap();
        assert!((trace.ticks[0][db].offered_rps - 70.0).abs() < 1e-9);
        // svc -> db1 isolated: only the direct 40 rps remains.
        assert!((trace.ticks[1][db].offered_rps - 40.0).abs() < 1e-9);
    }

    #[test]
    fn clear_actions_restores_normal_operation() {
        let topo = cache_chain(0.9, 1_000.0);
        let mut sim = Simulation::new(&topo, &TrafficProfile::constant(1_000.0), 1).unwrap();
        sim.apply_action(PerturbationAction::new(Strategy::CacheBypass, "cache1", 1.0))
            .unwrap();
        sim.step();
        assert_eq!(sim.active_actions().len(), 1);
        sim.clear_actions();
        assert!(sim.active_actions().is_empty());
        let row = sim.step();
        let order = sim.component_order();
        let db = order.iter().position(|c| c.as_str() == "db1").unwrap();
        assert!((row[db].offered_rps - 100.0).abs() < 0.5);
    }

    #[test]
    fn incompatible_targets_are_rejected() {
        let topo = cache_chain(0.9, 1_000.0);
        let mut sim = Simulation::new(&topo, &TrafficProfile::constant(100.0), 1).unwrap();
        let err = sim
            .apply_action(PerturbationAction::new(Strategy::CacheBypass, "db1", 0.1))
            .unwrap_err();
        assert!(matches!(err, SimError::IncompatibleTarget { .. }));
        let err = sim
            .apply_action(PerturbationAction::new(Strategy::BreakerBypass, "cache1", 1.0))
            .unwrap_err();
        assert!(matches!(err, SimError::IncompatibleTarget { .. }));
        let err = sim
            .apply_action(PerturbationAction::new(
                Strategy::LatencyInjection,
                "front",
                10.0,
            ))
            .unwrap_err();
        assert!(matches!(err, SimError::IncompatibleTarget { .. }));
    }

    #[test]
    fn traces_are_deterministic() {
        let topo = cache_chain(0.95, 500.0);
        let traffic = TrafficProfile {
            pattern: TrafficPattern::Diurnal,
            base_rps: 800.0,
            spike_multiplier: None,
            spike_start_s: None,
            spike_duration_s: None,
            diurnal_period_s: Some(60),
        };
        let schedule = vec![ScheduleEntry {
            tick_s: 30,
            op: ScheduleOp::Apply(PerturbationAction::new(
                Strategy::CacheBypass,
                "cache1",
                0.2,
            )),
        }];
        let a = run_simulation(&topo, &traffic, 120, 9, &schedule).unwrap();
        let b = run_simulation(&topo, &traffic, 120, 9, &schedule).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn jsonl_and_csv_exports_have_fixed_columns() {
        let topo = cache_chain(0.9, 1_000.0);
        let trace =
            run_simulation(&topo, &TrafficProfile::constant(100.0), 2, 1, &[]).unwrap();
        let mut jsonl = Vec::new();
        trace.write_jsonl(&mut jsonl).unwrap();
        let first = String::from_utf8(jsonl).unwrap().lines().next().unwrap().to_string();
        assert!(first.starts_with("{\"tick_s\":0,\"component\":\"front\""));
        let mut csv = Vec::new();
        trace.write_csv(&mut csv).unwrap();
        let csv = String::from_utf8(csv).unwrap();
        assert!(csv.starts_with(
            "tick_s,component,offered_rps,served_rps,error_rps,utilization,latency_ms,hit_rate,breaker_state\n"
        ));
        assert_eq!(csv.lines().count(), 1 + 2 * 3);
    }
}
