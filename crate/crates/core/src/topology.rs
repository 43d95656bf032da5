//! Service topology: components, dependency edges, validation, and the
//! structural queries (dependency depth, max upstream amplification) that the
//! risk engine builds on.
//!
//! A topology is a DAG. Entry components model external traffic sources and
//! have no incoming edges. Each edge carries the fraction of the upstream
//! component's forwarded traffic that reaches the downstream one under normal
//! operation; at a cache the remainder is hits absorbed locally, at a breaker
//! it is shed traffic.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

use crate::riskcore::AmplificationMap;

/// Identifier for a component. Restricted to `[A-Za-z0-9_.-]` so ids can be
/// embedded in CSV and file names without quoting.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ComponentId(String);

impl ComponentId {
    pub fn new(id: impl Into<String>) -> Self {
        ComponentId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl From<&str> for ComponentId {
    fn from(s: &str) -> Self {
        ComponentId(s.to_string())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    Entry,
    Service,
    Cache,
    Database,
    LoadBalancer,
    CircuitBreaker,
    Queue,
}

impl fmt::Display for ComponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ComponentKind::Entry => "entry",
            ComponentKind::Service => "service",
            ComponentKind::Cache => "cache",
            ComponentKind::Database => "database",
            ComponentKind::LoadBalancer => "load_balancer",
            ComponentKind::CircuitBreaker => "circuit_breaker",
            ComponentKind::Queue => "queue",
        };
        f.write_str(s)
    }
}

/// How latency responds to utilization `rho` (offered / effective capacity,
/// clamped to [0, 1]).
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyModel {
    /// `base / (1 - rho)`, clamped to `saturation_cap_ms`.
    Mm1,
    /// Linear ramp from `base` at rho = 0 to `saturation_cap_ms` at rho = 1.
    Linear,
    /// Piecewise-linear interpolation over `table_points`, extended to
    /// `(1.0, saturation_cap_ms)`.
    Table,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyProfile {
    pub base_latency_ms: f64,
    pub model: LatencyModel,
    pub saturation_cap_ms: f64,
    /// `(utilization, latency_ms)` pairs; required iff `model` is `table`.
    /// Must start at utilization 0.0, be strictly increasing in utilization,
    /// stay below 1.0, and be non-decreasing in latency.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table_points: Option<Vec<(f64, f64)>>,
}

/// Latency at utilization `rho` for this profile. `rho` outside [0, 1] is
/// clamped; the result never exceeds `saturation_cap_ms`.
pub fn latency_at_utilization(profile: &LatencyProfile, rho: f64) -> f64 {
    let rho = rho.clamp(0.0, 1.0);
    let cap = profile.saturation_cap_ms;
    match profile.model {
        LatencyModel::Mm1 => {
            if rho >= 1.0 {
                cap
            } else {
                (profile.base_latency_ms / (1.0 - rho)).min(cap)
            }
        }
        LatencyModel::Linear => profile.base_latency_ms + (cap - profile.base_latency_ms) * rho,
        LatencyModel::Table => {
            let points = profile.table_points.as_deref().unwrap_or(&[]);
            if points.is_empty() {
                return profile.base_latency_ms.min(cap);
            }
            // Walk segments, with a virtual terminal point at (1.0, cap).
            let mut prev = points[0];
            if rho <= prev.0 {
                return prev.1.min(cap);
            }
            for &p in &points[1..] {
                if rho <= p.0 {
                    return interpolate(prev, p, rho).min(cap);
                }
                prev = p;
            }
            interpolate(prev, (1.0, cap), rho).min(cap)
        }
    }
}

fn interpolate(a: (f64, f64), b: (f64, f64), x: f64) -> f64 {
    if (b.0 - a.0).abs() < f64::EPSILON {
        return b.1;
    }
    a.1 + (b.1 - a.1) * (x - a.0) / (b.0 - a.0)
}

/// Kind-specific optimization layer settings. Caches, breakers, load
/// balancers, and queues must declare theirs; services and databases may
/// optionally declare a connection pool; entries have none.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizationParams {
    /// Hit rate follows `hit_max * (1 - exp(-size / size_scale))`, optionally
    /// drifting over time (`hit_max + hit_drift_per_tick * tick`, clamped to
    /// [0, 1]) to model working-set growth.
    Cache {
        size_units: f64,
        hit_max: f64,
        size_scale_units: f64,
        #[serde(default)]
        hit_drift_per_tick: f64,
    },
    CircuitBreaker {
        /// Downstream error fraction above which the breaker trips open.
        trip_threshold: f64,
        /// Ticks spent open before probing via half-open.
        recovery_ticks: u32,
        /// Fraction of offered load forwarded while half-open.
        half_open_probe_fraction: f64,
    },
    LoadBalancer {
        /// Replica pool size; capacity scales by (k - removed) / k when
        /// replicas are pulled from rotation.
        replicas: u32,
    },
    Queue {
        /// Buffer size in request units; overflow beyond it becomes errors.
        depth_units: f64,
    },
    Pool {
        /// Connection pool size; effective capacity is
        /// `min(capacity_rps, size * per_connection_rps)`.
        size: u32,
        per_connection_rps: f64,
    },
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub id: ComponentId,
    pub kind: ComponentKind,
    pub capacity_rps: f64,
    pub latency_profile: LatencyProfile,
    /// Mean time to recovery once this component fails, in minutes.
    pub mttr_minutes: f64,
    /// Fraction of this component's relevant state covered by monitoring, in [0, 1].
    pub observability_coverage: f64,
    /// Business criticality weight in [1, 5].
    pub criticality: f64,
    /// Probability that this component's optimization is bypassed in a given
    /// incident window, in [0, 1].
    pub bypass_probability: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimization_params: Option<OptimizationParams>,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DependencyEdge {
    pub from: ComponentId,
    pub to: ComponentId,
    /// Fraction of `from`'s forwarded traffic that reaches `to` under normal
    /// operation, in [0, 1]. Outgoing fractions of one component sum to <= 1;
    /// the remainder is absorbed locally (cache hits, breaker shedding).
    pub load_fraction: f64,
    /// Operator-declared load amplification for a full bypass of `from`'s
    /// optimization as seen at `to`. Absent means unknown (treated as 1.0
    /// until measured).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_amplification: Option<f64>,
    /// Monitoring coverage of this edge's traffic, in [0, 1].
    pub edge_observability: f64,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyGraph {
    pub components: Vec<ComponentSpec>,
    pub edges: Vec<DependencyEdge>,
    pub entries: Vec<ComponentId>,
}

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("dependency cycle: {}", format_cycle(.0))]
    CycleDetected(Vec<ComponentId>),
    #[error("component `{0}` is not reachable from any entry")]
    UnreachableComponent(ComponentId),
    #[error("edge `{from}` -> `{to}` references missing component `{missing}`")]
    DanglingEdge {
        from: ComponentId,
        to: ComponentId,
        missing: ComponentId,
    },
    #[error("{scope}: invalid `{field}`: {message}")]
    InvalidField {
        scope: String,
        field: &'static str,
        message: String,
    },
    #[error("unknown component `{0}`")]
    UnknownComponent(ComponentId),
    #[error("no amplification entry for edge `{from}` -> `{to}`")]
    MissingAmplification { from: ComponentId, to: ComponentId },
}

fn format_cycle(cycle: &[ComponentId]) -> String {
    cycle
        .iter()
        .map(|c| c.as_str())
        .collect::<Vec<_>>()
        .join(" -> ")
}

/// A topology that passed [`validate_topology`]. Holds the graph plus the
/// derived indexes (topological order, adjacency, dependency depths) that the
/// simulator and risk engine query.
#[derive(Clone, Debug)]
pub struct ValidatedTopology {
    graph: TopologyGraph,
    index: BTreeMap<ComponentId, usize>,
    topo_order: Vec<usize>,
    incoming: Vec<Vec<usize>>,
    outgoing: Vec<Vec<usize>>,
    depths: Vec<u32>,
}

impl PartialEq for ValidatedTopology {
    fn eq(&self, other: &Self) -> bool {
        self.graph == other.graph
    }
}

impl ValidatedTopology {
    pub fn graph(&self) -> &TopologyGraph {
        &self.graph
    }

    pub fn len(&self) -> usize {
        self.graph.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graph.components.is_empty()
    }

    pub fn component_index(&self, id: &ComponentId) -> Result<usize, TopologyError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| TopologyError::UnknownComponent(id.clone()))
    }

    pub fn component(&self, id: &ComponentId) -> Result<&ComponentSpec, TopologyError> {
        Ok(&self.graph.components[self.component_index(id)?])
    }

    pub fn component_at(&self, index: usize) -> &ComponentSpec {
        &self.graph.components[index]
    }

    /// Component indexes in topological order (entries first).
    pub fn topo_order(&self) -> &[usize] {
        &self.topo_order
    }

    pub fn edges(&self) -> &[DependencyEdge] {
        &self.graph.edges
    }

    pub fn edge_at(&self, index: usize) -> &DependencyEdge {
        &self.graph.edges[index]
    }

    /// Indexes into `edges()` of edges arriving at `component_at(index)`.
    pub fn incoming_edges(&self, index: usize) -> &[usize] {
        &self.incoming[index]
    }

    /// Indexes into `edges()` of edges leaving `component_at(index)`.
    pub fn outgoing_edges(&self, index: usize) -> &[usize] {
        &self.outgoing[index]
    }

    pub fn is_entry(&self, index: usize) -> bool {
        self.graph.components[index].kind == ComponentKind::Entry
    }

    pub fn find_edge(&self, from: &ComponentId, to: &ComponentId) -> Option<usize> {
        let fi = self.index.get(from)?;
        self.outgoing[*fi]
            .iter()
            .copied()
            .find(|&e| &self.graph.edges[e].to == to)
    }

    /// Longest entry-to-component path length measured in components; an
    /// entry has depth 1.
    pub fn dependency_depth(&self, id: &ComponentId) -> Result<u32, TopologyError> {
        Ok(self.depths[self.component_index(id)?])
    }

    pub fn depth_at(&self, index: usize) -> u32 {
        self.depths[index]
    }
}

/// Largest amplification over the incoming edges of `id`, per `metrics`.
/// Components without predecessors (entries) report 1.0: no upstream layer
/// can redirect extra load onto them.
pub fn max_upstream_amplification(
    topo: &ValidatedTopology,
    metrics: &AmplificationMap,
    id: &ComponentId,
) -> Result<f64, TopologyError> {
    let idx = topo.component_index(id)?;
    let mut max_alpha: Option<f64> = None;
    for &e in topo.incoming_edges(idx) {
        let edge = topo.edge_at(e);
        let alpha = metrics
            .alpha(&edge.from, &edge.to)
            .ok_or_else(|| TopologyError::MissingAmplification {
                from: edge.from.clone(),
                to: edge.to.clone(),
            })?;
        max_alpha = Some(max_alpha.map_or(alpha, |m: f64| m.max(alpha)));
    }
    Ok(max_alpha.unwrap_or(1.0))
}

/// Validate a raw graph and build the derived indexes.
///
/// Checks: id shape and uniqueness, per-field ranges, kind/params pairing,
/// dangling or duplicate edges, entry discipline (declared entries exist, are
/// of kind `entry`, have no incoming edges, and every entry-kind component is
/// declared), per-component outgoing load fractions summing to <= 1,
/// acyclicity (reporting one offending cycle), and reachability of every
/// component from some entry.
pub fn validate_topology(graph: TopologyGraph) -> Result<ValidatedTopology, TopologyError> {
    let n = graph.components.len();
    if n == 0 {
        return Err(TopologyError::InvalidField {
            scope: "topology".into(),
            field: "components",
            message: "at least one component is required".into(),
        });
    }

    let mut index: BTreeMap<ComponentId, usize> = BTreeMap::new();
    for (i, c) in graph.components.iter().enumerate() {
        validate_id(&c.id)?;
        if index.insert(c.id.clone(), i).is_some() {
            return Err(TopologyError::InvalidField {
                scope: format!("component `{}`", c.id),
                field: "id",
                message: "duplicate id".into(),
            });
        }
    }
    for c in &graph.components {
        validate_component(c)?;
    }

    let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut outgoing: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut seen_pairs: BTreeSet<(ComponentId, ComponentId)> = BTreeSet::new();
    for (e, edge) in graph.edges.iter().enumerate() {
        let scope = || format!("edge `{}` -> `{}`", edge.from, edge.to);
        let fi = *index
            .get(&edge.from)
            .ok_or_else(|| TopologyError::DanglingEdge {
                from: edge.from.clone(),
                to: edge.to.clone(),
                missing: edge.from.clone(),
            })?;
        let ti = *index
            .get(&edge.to)
            .ok_or_else(|| TopologyError::DanglingEdge {
                from: edge.from.clone(),
                to: edge.to.clone(),
                missing: edge.to.clone(),
            })?;
        if fi == ti {
            return Err(TopologyError::InvalidField {
                scope: scope(),
                field: "to",
                message: "self-dependency is not allowed".into(),
            });
        }
        if !seen_pairs.insert((edge.from.clone(), edge.to.clone())) {
            return Err(TopologyError::InvalidField {
                scope: scope(),
                field: "to",
                message: "duplicate edge".into(),
            });
        }
        check_unit_range(&scope(), "load_fraction", edge.load_fraction)?;
        if let Some(a) = edge.declared_amplification {
            if !(a.is_finite() && a > 0.0) {
                return Err(TopologyError::InvalidField {
                    scope: scope(),
                    field: "declared_amplification",
                    message: format!("must be a positive finite number, got {a}"),
                });
            }
        }
        check_unit_range(&scope(), "edge_observability", edge.edge_observability)?;
        outgoing[fi].push(e);
        incoming[ti].push(e);
    }

    for (i, c) in graph.components.iter().enumerate() {
        let total: f64 = outgoing[i]
            .iter()
            .map(|&e| graph.edges[e].load_fraction)
            .sum();
        if total > 1.0 + 1e-9 {
            return Err(TopologyError::InvalidField {
                scope: format!("component `{}`", c.id),
                field: "load_fraction",
                message: format!("outgoing load fractions sum to {total:.6}, exceeding 1"),
            });
        }
    }

    // Entry discipline.
    if graph.entries.is_empty() {
        return Err(TopologyError::InvalidField {
            scope: "topology".into(),
            field: "entries",
            message: "at least one entry is required".into(),
        });
    }
    let mut declared_entries: BTreeSet<usize> = BTreeSet::new();
    for id in &graph.entries {
        let i = *index
            .get(id)
            .ok_or_else(|| TopologyError::UnknownComponent(id.clone()))?;
        if graph.components[i].kind != ComponentKind::Entry {
            return Err(TopologyError::InvalidField {
                scope: format!("component `{id}`"),
                field: "kind",
                message: "declared as entry but kind is not `entry`".into(),
            });
        }
        if !declared_entries.insert(i) {
            return Err(TopologyError::InvalidField {
                scope: "topology".into(),
                field: "entries",
                message: format!("entry `{id}` listed twice"),
            });
        }
        if !incoming[i].is_empty() {
            return Err(TopologyError::InvalidField {
                scope: format!("component `{id}`"),
                field: "kind",
                message: "entry components must have no incoming edges".into(),
            });
        }
    }
    for (i, c) in graph.components.iter().enumerate() {
        if c.kind == ComponentKind::Entry && !declared_entries.contains(&i) {
            return Err(TopologyError::InvalidField {
                scope: format!("component `{}`", c.id),
                field: "kind",
                message: "entry-kind component missing from `entries`".into(),
            });
        }
    }

    // Kahn's algorithm; leftovers form at least one cycle.
    let mut indegree: Vec<usize> = incoming.iter().map(Vec::len).collect();
    let mut queue: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut topo_order = Vec::with_capacity(n);
    let mut head = 0;
    while head < queue.len() {
        let i = queue[head];
        head += 1;
        topo_order.push(i);
        for &e in &outgoing[i] {
            let t = *index.get(&graph.edges[e].to).unwrap();
            indegree[t] -= 1;
            if indegree[t] == 0 {
                queue.push(t);
            }
        }
    }
    if topo_order.len() != n {
        return Err(TopologyError::CycleDetected(extract_cycle(
            &graph, &index, &incoming, &indegree,
        )));
    }

    // Reachability from entries.
    let mut reachable = vec![false; n];
    let mut stack: Vec<usize> = declared_entries.iter().copied().collect();
    for &i in &stack {
        reachable[i] = true;
    }
    while let Some(i) = stack.pop() {
        for &e in &outgoing[i] {
            let t = *index.get(&graph.edges[e].to).unwrap();
            if !reachable[t] {
                reachable[t] = true;
                stack.push(t);
            }
        }
    }
    if let Some(i) = (0..n).find(|&i| !reachable[i]) {
        return Err(TopologyError::UnreachableComponent(
            graph.components[i].id.clone(),
        ));
    }

    // Longest entry-to-node path, counted in components.
    let mut depths = vec![0u32; n];
    for &i in &topo_order {
        let best = incoming[i]
            .iter()
            .map(|&e| depths[*index.get(&graph.edges[e].from).unwrap()])
            .max()
            .unwrap_or(0);
        depths[i] = best + 1;
    }

    Ok(ValidatedTopology {
        graph,
        index,
        topo_order,
        incoming,
        outgoing,
        depths,
    })
}

fn validate_id(id: &ComponentId) -> Result<(), TopologyError> {
    let ok = !id.as_str().is_empty()
        && id
            .as_str()
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-' || b == b'.');
    if ok {
        Ok(())
    } else {
        Err(TopologyError::InvalidField {
            scope: format!("component `{id}`"),
            field: "id",
            message: "ids must be non-empty and use only [A-Za-z0-9_.-]".into(),
        })
    }
}

fn check_unit_range(scope: &str, field: &'static str, v: f64) -> Result<(), TopologyError> {
    if v.is_finite() && (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(TopologyError::InvalidField {
            scope: scope.to_string(),
            field,
            message: format!("must be in [0, 1], got {v}"),
        })
    }
}

fn check_positive(scope: &str, field: &'static str, v: f64) -> Result<(), TopologyError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(TopologyError::InvalidField {
            scope: scope.to_string(),
            field,
            message: format!("must be a positive finite number, got {v}"),
        })
    }
}

fn validate_component(c: &ComponentSpec) -> Result<(), TopologyError> {
    let scope = format!("component `{}`", c.id);
    check_positive(&scope, "capacity_rps", c.capacity_rps)?;
    check_positive(&scope, "mttr_minutes", c.mttr_minutes)?;
    check_unit_range(&scope, "observability_coverage", c.observability_coverage)?;
    check_unit_range(&scope, "bypass_probability", c.bypass_probability)?;
    if !(c.criticality.is_finite() && (1.0..=5.0).contains(&c.criticality)) {
        return Err(TopologyError::InvalidField {
            scope,
            field: "criticality",
            message: format!("must be in [1, 5], got {}", c.criticality),
        });
    }
    validate_latency_profile(&scope, &c.latency_profile)?;
    validate_params(c, &scope)
}

fn validate_latency_profile(scope: &str, p: &LatencyProfile) -> Result<(), TopologyError> {
    check_positive(scope, "base_latency_ms", p.base_latency_ms)?;
    if !(p.saturation_cap_ms.is_finite() && p.saturation_cap_ms >= p.base_latency_ms) {
        return Err(TopologyError::InvalidField {
            scope: scope.to_string(),
            field: "saturation_cap_ms",
            message: format!(
                "must be finite and >= base_latency_ms, got {}",
                p.saturation_cap_ms
            ),
        });
    }
    match (p.model, p.table_points.as_ref()) {
        (LatencyModel::Table, Some(points)) => {
            if points.is_empty() {
                return Err(invalid_table(scope, "at least one point is required"));
            }
            if points[0].0 != 0.0 {
                return Err(invalid_table(scope, "first point must be at utilization 0.0"));
            }
            let mut prev = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for &(u, ms) in points {
                if !(u.is_finite() && (0.0..1.0).contains(&u)) {
                    return Err(invalid_table(scope, "utilizations must lie in [0, 1)"));
                }
                if u <= prev.0 {
                    return Err(invalid_table(scope, "utilizations must strictly increase"));
                }
                if !(ms.is_finite() && ms >= 0.0) {
                    return Err(invalid_table(scope, "latencies must be finite and >= 0"));
                }
                if ms < prev.1 {
                    return Err(invalid_table(scope, "latencies must be non-decreasing"));
                }
                prev = (u, ms);
            }
            if prev.1 > p.saturation_cap_ms {
                return Err(invalid_table(
                    scope,
                    "latencies must not exceed saturation_cap_ms",
                ));
            }
            Ok(())
        }
        (LatencyModel::Table, None) => Err(invalid_table(
            scope,
            "table model requires table_points",
        )),
        (_, Some(_)) => Err(invalid_table(
            scope,
            "table_points are only valid with the table model",
        )),
        (_, None) => Ok(()),
    }
}

fn invalid_table(scope: &str, message: &str) -> TopologyError {
    TopologyError::InvalidField {
        scope: scope.to_string(),
        field: "table_points",
        message: message.to_string(),
    }
}

fn validate_params(c: &ComponentSpec, scope: &str) -> Result<(), TopologyError> {
    use ComponentKind as K;
    use OptimizationParams as P;
    let mismatch = |message: String| TopologyError::InvalidField {
        scope: scope.to_string(),
        field: "optimization_params",
        message,
    };
    match (c.kind, c.optimization_params.as_ref()) {
        (K::Cache, Some(P::Cache { size_units, hit_max, size_scale_units, hit_drift_per_tick })) => {
            if !(size_units.is_finite() && *size_units >= 0.0) {
                return Err(mismatch(format!("size_units must be >= 0, got {size_units}")));
            }
            if !(hit_max.is_finite() && (0.0..1.0).contains(hit_max)) {
                return Err(mismatch(format!("hit_max must be in [0, 1), got {hit_max}")));
            }
            check_positive(scope, "optimization_params", *size_scale_units).map_err(|_| {
                mismatch(format!("size_scale_units must be > 0, got {size_scale_units}"))
            })?;
            if !hit_drift_per_tick.is_finite() {
                return Err(mismatch("hit_drift_per_tick must be finite".into()));
            }
            Ok(())
        }
        (K::Cache, _) => Err(mismatch("cache components require cache params".into())),
        (K::CircuitBreaker, Some(P::CircuitBreaker { trip_threshold, recovery_ticks, half_open_probe_fraction })) => {
            if !(trip_threshold.is_finite() && *trip_threshold > 0.0 && *trip_threshold <= 1.0) {
                return Err(mismatch(format!("trip_threshold must be in (0, 1], got {trip_threshold}")));
            }
            if *recovery_ticks == 0 {
                return Err(mismatch("recovery_ticks must be >= 1".into()));
            }
            if !(half_open_probe_fraction.is_finite()
                && *half_open_probe_fraction > 0.0
                && *half_open_probe_fraction <= 1.0)
            {
                return Err(mismatch(format!(
                    "half_open_probe_fraction must be in (0, 1], got {half_open_probe_fraction}"
                )));
            }
            Ok(())
        }
        (K::CircuitBreaker, _) => Err(mismatch(
            "circuit_breaker components require circuit_breaker params".into(),
        )),
        (K::LoadBalancer, Some(P::LoadBalancer { replicas })) => {
            if *replicas == 0 {
                return Err(mismatch("replicas must be >= 1".into()));
            }
            Ok(())
        }
        (K::LoadBalancer, _) => Err(mismatch(
            "load_balancer components require load_balancer params".into(),
        )),
        (K::Queue, Some(P::Queue { depth_units })) => {
            if !(depth_units.is_finite() && *depth_units >= 0.0) {
                return Err(mismatch(format!("depth_units must be >= 0, got {depth_units}")));
            }
            Ok(())
        }
        (K::Queue, _) => Err(mismatch("queue components require queue params".into())),
        (K::Service | K::Database, None) => Ok(()),
        (K::Service | K::Database, Some(P::Pool { size, per_connection_rps })) => {
            if *size == 0 {
                return Err(mismatch("pool size must be >= 1".into()));
            }
            check_positive(scope, "optimization_params", *per_connection_rps)
                .map_err(|_| mismatch("per_connection_rps must be > 0".into()))?;
            Ok(())
        }
        (K::Service | K::Database, Some(_)) => Err(mismatch(
            "services and databases only accept pool params".into(),
        )),
        (K::Entry, None) => Ok(()),
        (K::Entry, Some(_)) => Err(mismatch("entry components take no params".into())),
    }
}

/// Walk backwards among not-yet-sorted nodes until one repeats; that loop is
/// reported to the caller.
fn extract_cycle(
    graph: &TopologyGraph,
    index: &BTreeMap<ComponentId, usize>,
    incoming: &[Vec<usize>],
    indegree: &[usize],
) -> Vec<ComponentId> {
    let n = graph.components.len();
    let in_cycle_region: Vec<bool> = (0..n).map(|i| indegree[i] > 0).collect();
    let start = (0..n).find(|&i| in_cycle_region[i]).unwrap();
    let mut seen_at: BTreeMap<usize, usize> = BTreeMap::new();
    let mut path = vec![start];
    let mut cur = start;
    loop {
        if let Some(&pos) = seen_at.get(&cur) {
            let mut cycle: Vec<ComponentId> = path[pos..]
                .iter()
                .map(|&i| graph.components[i].id.clone())
                .collect();
            cycle.reverse(); // walked backwards; report in edge direction
            return cycle;
        }
        seen_at.insert(cur, path.len() - 1);
        let pred = incoming[cur]
            .iter()
            .map(|&e| *index.get(&graph.edges[e].from).unwrap())
            .find(|&p| in_cycle_region[p])
            .expect("node in cycle region must have a predecessor in it");
        path.push(pred);
        cur = pred;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::riskcore::AmplificationMap;

    pub(crate) fn entry(id: &str) -> ComponentSpec {
        ComponentSpec {
            id: id.into(),
            kind: ComponentKind::Entry,
            capacity_rps: 10_000.0,
            latency_profile: LatencyProfile {
                base_latency_ms: 1.0,
                model: LatencyModel::Linear,
                saturation_cap_ms: 5.0,
                table_points: None,
            },
            mttr_minutes: 5.0,
            observability_coverage: 1.0,
            criticality: 1.0,
            bypass_probability: 0.0,
            optimization_params: None,
        }
    }

    pub(crate) fn service(id: &str) -> ComponentSpec {
        ComponentSpec {
            id: id.into(),
            kind: ComponentKind::Service,
            capacity_rps: 1_000.0,
            latency_profile: LatencyProfile {
                base_latency_ms: 10.0,
                model: LatencyModel::Mm1,
                saturation_cap_ms: 500.0,
                table_points: None,
            },
            mttr_minutes: 10.0,
            observability_coverage: 0.8,
            criticality: 2.0,
            bypass_probability: 0.1,
            optimization_params: None,
        }
    }

    pub(crate) fn edge(from: &str, to: &str, fraction: f64) -> DependencyEdge {
        DependencyEdge {
            from: from.into(),
            to: to.into(),
            load_fraction: fraction,
            declared_amplification: None,
            edge_observability: 0.5,
        }
    }

    fn chain(ids: &[&str]) -> TopologyGraph {
        let mut components = vec![entry(ids[0])];
        components.extend(ids[1..].iter().map(|id| service(id)));
        let edges = ids
            .windows(2)
            .map(|w| edge(w[0], w[1], 1.0))
            .collect();
        TopologyGraph {
            components,
            edges,
            entries: vec![ids[0].into()],
        }
    }

    #[test]
    fn validates_a_simple_chain() {
        let topo = validate_topology(chain(&["e", "a", "b"])).unwrap();
        assert_eq!(topo.len(), 3);
        assert_eq!(topo.dependency_depth(&"e".into()).unwrap(), 1);
        assert_eq!(topo.dependency_depth(&"a".into()).unwrap(), 2);
        assert_eq!(topo.dependency_depth(&"b".into()).unwrap(), 3);
    }

    #[test]
    fn validation_is_idempotent() {
        let once = validate_topology(chain(&["e", "a"])).unwrap();
        let twice = validate_topology(once.graph().clone()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn depth_takes_the_longest_path() {
        // e -> a -> b -> d and e -> d: longest path to d has 4 components.
        let mut g = chain(&["e", "a", "b"]);
        g.components.push(service("d"));
        g.edges.push(edge("b", "d", 1.0));
        g.edges.push(edge("e", "d", 0.0));
        // keep e's outgoing fractions within 1
        g.edges[0].load_fraction = 0.5;
        let topo = validate_topology(g).unwrap();
        assert_eq!(topo.dependency_depth(&"d".into()).unwrap(), 4);
    }

    #[test]
    fn rejects_cycles_and_reports_one() {
        let mut g = chain(&["e", "a", "b"]);
        g.edges.push(edge("b", "a", 0.0));
        match validate_topology(g) {
            Err(TopologyError::CycleDetected(cycle)) => {
                assert!(cycle.len() >= 2);
                let ids: Vec<&str> = cycle.iter().map(|c| c.as_str()).collect();
                assert!(ids.contains(&"a") && ids.contains(&"b"));
            }
            other => panic!("expected CycleDetected, got {other:?}"),
        }
    }

    #[test]
    fn rejects_unreachable_components() {
        let mut g = chain(&["e", "a"]);
        g.components.push(service("island"));
        match validate_topology(g) {
            Err(TopologyError::UnreachableComponent(id)) => assert_eq!(id.as_str(), "island"),
            other => panic!("expected UnreachableComponent, got {other:?}"),
        }
    }

    #[test]
    fn rejects_dangling_edges() {
        let mut g = chain(&["e", "a"]);
        g.edges.push(edge("a", "ghost", 0.0));
        assert!(matches!(
            validate_topology(g),
            Err(TopologyError::DanglingEdge { .. })
        ));
    }

    #[test]
    fn rejects_entries_with_incoming_edges() {
        let mut g = chain(&["e", "a"]);
        g.edges.push(edge("a", "e", 0.0));
        // a -> e creates both a cycle-free graph and an invalid entry.
        assert!(matches!(
            validate_topology(g),
            Err(TopologyError::InvalidField { field: "kind", .. })
        ));
    }

    #[test]
    fn rejects_out_of_range_fields() {
        let mut g = chain(&["e", "a"]);
        g.components[1].criticality = 7.0;
        assert!(matches!(
            validate_topology(g),
            Err(TopologyError::InvalidField { field: "criticality", .. })
        ));

        let mut g = chain(&["e", "a"]);
        g.components[1].observability_coverage = 1.5;
        assert!(matches!(
            validate_topology(g),
            Err(TopologyError::InvalidField { field: "observability_coverage", .. })
        ));

        let mut g = chain(&["e", "a"]);
        g.edges[0].load_fraction = -0.1;
        assert!(matches!(
            validate_topology(g),
            Err(TopologyError::InvalidField { field: "load_fraction", .. })
        ));
    }

    #[test]
    fn rejects_overcommitted_load_fractions() {
        let mut g = chain(&["e", "a", "b"]);
        g.components.push(service("c"));
        g.edges.push(edge("a", "c", 0.9));
        // a already forwards 1.0 to b
        assert!(matches!(
            validate_topology(g),
            Err(TopologyError::InvalidField { field: "load_fraction", .. })
        ));
    }

    #[test]
    fn rejects_kind_param_mismatches() {
        let mut g = chain(&["e", "a"]);
        g.components[1].kind = ComponentKind::Cache; // cache without cache params
        assert!(matches!(
            validate_topology(g),
            Err(TopologyError::InvalidField { field: "optimization_params", .. })
        ));
    }

    #[test]
    fn mm1_latency_is_clamped_and_monotone() {
        let p = LatencyProfile {
            base_latency_ms: 10.0,
            model: LatencyModel::Mm1,
            saturation_cap_ms: 400.0,
            table_points: None,
        };
        assert!((latency_at_utilization(&p, 0.0) - 10.0).abs() < 1e-12);
        assert!((latency_at_utilization(&p, 0.5) - 20.0).abs() < 1e-12);
        assert!((latency_at_utilization(&p, 0.9) - 100.0).abs() < 1e-9);
        assert_eq!(latency_at_utilization(&p, 1.0), 400.0);
        let mut prev = 0.0;
        for i in 0..=100 {
            let l = latency_at_utilization(&p, i as f64 / 100.0);
            assert!(l >= prev);
            prev = l;
        }
    }

    #[test]
    fn table_latency_interpolates_between_points() {
        // Hand-computed interpolant over three points.
        let p = LatencyProfile {
            base_latency_ms: 5.0,
            model: LatencyModel::Table,
            saturation_cap_ms: 100.0,
            table_points: Some(vec![(0.0, 5.0), (0.5, 10.0), (0.9, 50.0)]),
        };
        assert!((latency_at_utilization(&p, 0.25) - 7.5).abs() < 1e-12);
        assert!((latency_at_utilization(&p, 0.7) - 30.0).abs() < 1e-12);
        // Beyond the last point the curve ramps to the cap at rho = 1.
        assert!((latency_at_utilization(&p, 0.95) - 75.0).abs() < 1e-12);
        assert_eq!(latency_at_utilization(&p, 1.0), 100.0);
    }

    #[test]
    fn upstream_amplification_defaults_to_one_for_entries() {
        let topo = validate_topology(chain(&["e", "a"])).unwrap();
        let map = AmplificationMap::from_declared(&topo);
        let alpha = max_upstream_amplification(&topo, &map, &"e".into()).unwrap();
        assert_eq!(alpha, 1.0);
    }

    #[test]
    fn upstream_amplification_takes_the_max_incoming_edge() {
        let mut g = chain(&["e", "a", "b"]);
        g.components.push(service("c"));
        g.edges[0].load_fraction = 0.5;
        g.edges.push(edge("e", "c", 0.5));
        g.edges.push(edge("c", "b", 0.4));
        g.edges[1].declared_amplification = Some(3.0); // a -> b
        g.edges[3].declared_amplification = Some(8.0); // c -> b
        let topo = validate_topology(g).unwrap();
        let map = AmplificationMap::from_declared(&topo);
        let alpha = max_upstream_amplification(&topo, &map, &"b".into()).unwrap();
        assert_eq!(alpha, 8.0);
    }

    #[test]
    fn missing_amplification_is_an_error() {
        let topo = validate_topology(chain(&["e", "a"])).unwrap();
        let map = AmplificationMap::default(); // deliberately empty
        assert!(matches!(
            max_upstream_amplification(&topo, &map, &"a".into()),
            Err(TopologyError::MissingAmplification { .. })
        ));
    }
}
