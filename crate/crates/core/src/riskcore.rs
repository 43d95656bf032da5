//! Latent-risk scoring for optimization layers.
//!
//! An optimization layer (cache, breaker, balancer, pool…) hides load from
//! the components behind it. The risk engine quantifies what happens when the
//! layer stops hiding: how much load is amplified onto each dependency
//! (`AmplificationMap`), how much un-observed bypass exposure accumulates at
//! a component (`compute_latent_accumulation`), and a per-component latent
//! risk index (`compute_lri`) that grows with amplification, dependency
//! depth, criticality and repair time, and shrinks with observability.
//! `assess_system_risk` rolls these into a ranked report.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

use crate::simengine::{
    run_simulation, PerturbationAction, ScheduleEntry, ScheduleOp, SimError, Strategy,
    TelemetryTrace, TrafficProfile,
};
use crate::topology::{
    max_upstream_amplification, ComponentId, ComponentKind, TopologyError, ValidatedTopology,
};

/// Classification thresholds on the latent risk index.
pub const LRI_MEDIUM_THRESHOLD: f64 = 2.0;
pub const LRI_HIGH_THRESHOLD: f64 = 10.0;

/// Default measurement window for amplification runs, in simulated seconds.
pub const DEFAULT_AMP_WINDOW_S: u64 = 300;

/// Baseline flows below this are too small to divide by.
pub const ZERO_BASELINE_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum RiskError {
    #[error("component `{0}` has zero observability coverage; its risk index is unbounded")]
    ZeroObservability(ComponentId),
    #[error("failure-mode catalog is empty")]
    EmptyCatalog,
    #[error("component `{component}` ({kind}) has no bypass mechanism to disable")]
    NotBypassable {
        component: ComponentId,
        kind: ComponentKind,
    },
    #[error("baseline flow into `{to}` is {baseline} rps; amplification of `{from}` is undefined")]
    ZeroBaseline {
        from: ComponentId,
        to: ComponentId,
        baseline: f64,
    },
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Coarse risk classification used for gating decisions.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskLevel {
    Low,
    Medium,
    High,
}

impl fmt::Display for RiskLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RiskLevel::Low => f.write_str("low"),
            RiskLevel::Medium => f.write_str("medium"),
            RiskLevel::High => f.write_str("high"),
        }
    }
}

/// Finer-grained band annotation for reports.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskBand {
    Low,
    MediumLow,
    Medium,
    High,
    VeryHigh,
    Critical,
}

impl fmt::Display for RiskBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RiskBand::Low => "low",
            RiskBand::MediumLow => "medium_low",
            RiskBand::Medium => "medium",
            RiskBand::High => "high",
            RiskBand::VeryHigh => "very_high",
            RiskBand::Critical => "critical",
        };
        f.write_str(s)
    }
}

/// lri < 2 is low, 2 <= lri < 10 is medium, lri >= 10 is high.
pub fn classify_risk(lri: f64) -> RiskLevel {
    if lri >= LRI_HIGH_THRESHOLD {
        RiskLevel::High
    } else if lri >= LRI_MEDIUM_THRESHOLD {
        RiskLevel::Medium
    } else {
        RiskLevel::Low
    }
}

pub fn risk_band(lri: f64) -> RiskBand {
    if lri >= 50.0 {
        RiskBand::Critical
    } else if lri >= 20.0 {
        RiskBand::VeryHigh
    } else if lri >= 10.0 {
        RiskBand::High
    } else if lri >= 5.0 {
        RiskBand::Medium
    } else if lri >= 2.0 {
        RiskBand::MediumLow
    } else {
        RiskBand::Low
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmplificationSource {
    Declared,
    Measured,
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct AmplificationEntry {
    pub alpha: f64,
    pub source: AmplificationSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurement_window_s: Option<u64>,
}

/// Per-edge load amplification factors: `alpha(j, i)` is the multiple of
/// normal load that lands on `i` when `j`'s optimization is fully disabled.
/// Measured entries always take precedence over declared ones.
#[derive(Clone, PartialEq, Debug, Default)]
pub struct AmplificationMap {
    entries: BTreeMap<(ComponentId, ComponentId), AmplificationEntry>,
}

/// Serialized row shape for [`AmplificationMap`]: a flat list keeps the JSON
/// readable and avoids non-string map keys.
#[derive(Serialize, Deserialize)]
struct AmplificationRow {
    from: ComponentId,
    to: ComponentId,
    #[serde(flatten)]
    entry: AmplificationEntry,
}

impl Serialize for AmplificationMap {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.entries.iter().map(|((from, to), entry)| {
            AmplificationRow {
                from: from.clone(),
                to: to.clone(),
                entry: *entry,
            }
        }))
    }
}

impl<'de> Deserialize<'de> for AmplificationMap {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rows = Vec::<AmplificationRow>::deserialize(deserializer)?;
        let mut entries = BTreeMap::new();
        for row in rows {
            entries.insert((row.from, row.to), row.entry);
        }
        Ok(AmplificationMap { entries })
    }
}

impl AmplificationMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build from the topology's declared per-edge factors. Edges with no
    /// declared factor get the neutral 1.0 so every edge is covered.
    pub fn from_declared(topo: &ValidatedTopology) -> Self {
        let mut entries = BTreeMap::new();
        for e in topo.edges() {
            entries.insert(
                (e.from.clone(), e.to.clone()),
                AmplificationEntry {
                    alpha: e.declared_amplification.unwrap_or(1.0),
                    source: AmplificationSource::Declared,
                    measurement_window_s: None,
                },
            );
        }
        AmplificationMap { entries }
    }

    pub fn alpha(&self, from: &ComponentId, to: &ComponentId) -> Option<f64> {
        self.entries
            .get(&(from.clone(), to.clone()))
            .map(|e| e.alpha)
    }

    pub fn entry(&self, from: &ComponentId, to: &ComponentId) -> Option<&AmplificationEntry> {
        self.entries.get(&(from.clone(), to.clone()))
    }

    /// Record a declared factor. A declaration never displaces an existing
    /// measurement: measured values always win over operator estimates.
    pub fn insert_declared(&mut self, from: ComponentId, to: ComponentId, alpha: f64) {
        let key = (from, to);
        if let Some(existing) = self.entries.get(&key) {
            if existing.source == AmplificationSource::Measured {
                return;
            }
        }
        self.entries.insert(
            key,
            AmplificationEntry {
                alpha,
                source: AmplificationSource::Declared,
                measurement_window_s: None,
            },
        );
    }

    pub fn insert_measured(
        &mut self,
        from: ComponentId,
        to: ComponentId,
        alpha: f64,
        window_s: u64,
    ) {
        self.entries.insert(
            (from, to),
            AmplificationEntry {
                alpha,
                source: AmplificationSource::Measured,
                measurement_window_s: Some(window_s),
            },
        );
    }

    /// Copy every measured entry of `other` over this map.
    pub fn overlay_measured(&mut self, other: &AmplificationMap) {
        for ((from, to), e) in &other.entries {
            if e.source == AmplificationSource::Measured {
                self.entries.insert((from.clone(), to.clone()), *e);
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(ComponentId, ComponentId), &AmplificationEntry)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// One edge's measured amplification.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct MeasuredAmplification {
    pub from: ComponentId,
    pub to: ComponentId,
    pub alpha: f64,
    pub baseline_mean_rps: f64,
    pub stressed_mean_rps: f64,
    pub window_s: u64,
}

fn full_bypass_action(
    topo: &ValidatedTopology,
    component: &ComponentId,
) -> Result<PerturbationAction, RiskError> {
    let idx = topo.component_index(component)?;
    let kind = topo.component_at(idx).kind;
    match kind {
        ComponentKind::Cache => Ok(PerturbationAction::new(
            Strategy::CacheBypass,
            component.clone(),
            1.0,
        )),
        ComponentKind::CircuitBreaker => Ok(PerturbationAction::new(
            Strategy::BreakerBypass,
            component.clone(),
            1.0,
        )),
        ComponentKind::LoadBalancer => Ok(PerturbationAction::new(
            Strategy::LbManipulation,
            component.clone(),
            1.0,
        )),
        _ => Err(RiskError::NotBypassable {
            component: component.clone(),
            kind,
        }),
    }
}

/// Measure the amplification factor of every outgoing edge of `component`
/// by comparing steady-state downstream load with the component's
/// optimization fully disabled against an unperturbed baseline. Both runs
/// last `window_s` simulated seconds with the bypass applied from tick 0.
pub fn measure_amplification(
    topo: &ValidatedTopology,
    traffic: &TrafficProfile,
    component: &ComponentId,
    window_s: u64,
    seed: u64,
) -> Result<Vec<MeasuredAmplification>, RiskError> {
    let action = full_bypass_action(topo, component)?;
    let schedule = vec![ScheduleEntry {
        tick_s: 0,
        op: ScheduleOp::Apply(action),
    }];
    let baseline = run_simulation(topo, traffic, window_s, seed, &[])?;
    let stressed = run_simulation(topo, traffic, window_s, seed, &schedule)?;

    let idx = topo.component_index(component)?;
    let mut out = Vec::new();
    for &e in topo.outgoing_edges(idx) {
        let edge = topo.edge_at(e);
        let base = baseline.mean_offered(&edge.to).unwrap_or(0.0);
        let stress = stressed.mean_offered(&edge.to).unwrap_or(0.0);
        if base < ZERO_BASELINE_EPS {
            return Err(RiskError::ZeroBaseline {
                from: edge.from.clone(),
                to: edge.to.clone(),
                baseline: base,
            });
        }
        out.push(MeasuredAmplification {
            from: edge.from.clone(),
            to: edge.to.clone(),
            alpha: stress / base,
            baseline_mean_rps: base,
            stressed_mean_rps: stress,
            window_s,
        });
    }
    Ok(out)
}

/// Convenience: measure one component and fold the results into `map`.
pub fn measure_into_map(
    topo: &ValidatedTopology,
    traffic: &TrafficProfile,
    component: &ComponentId,
    window_s: u64,
    seed: u64,
    map: &mut AmplificationMap,
) -> Result<Vec<MeasuredAmplification>, RiskError> {
    let measured = measure_amplification(topo, traffic, component, window_s, seed)?;
    for m in &measured {
        map.insert_measured(m.from.clone(), m.to.clone(), m.alpha, m.window_s);
    }
    Ok(measured)
}

/// Exposure that silently accumulates at a component: for each incoming edge
/// j -> i, the upstream bypass probability scaled by that edge's
/// amplification and discounted by how well the edge itself is observed.
/// Entry points accumulate nothing.
pub fn latent_accumulation_for(
    topo: &ValidatedTopology,
    map: &AmplificationMap,
    id: &ComponentId,
) -> Result<f64, RiskError> {
    let idx = topo.component_index(id)?;
    let mut total = 0.0;
    for &e in topo.incoming_edges(idx) {
        let edge = topo.edge_at(e);
        let alpha = map.alpha(&edge.from, &edge.to).ok_or_else(|| {
            TopologyError::MissingAmplification {
                from: edge.from.clone(),
                to: edge.to.clone(),
            }
        })?;
        let from_idx = topo.component_index(&edge.from)?;
        let bypass = topo.component_at(from_idx).bypass_probability;
        total += alpha * bypass * (1.0 - edge.edge_observability);
    }
    Ok(total)
}

/// Latent accumulation for every component, indexed like the topology.
pub fn compute_latent_accumulation(
    topo: &ValidatedTopology,
    map: &AmplificationMap,
) -> Result<Vec<f64>, RiskError> {
    (0..topo.len())
        .map(|i| latent_accumulation_for(topo, map, &topo.component_at(i).id))
        .collect()
}

/// Full factor decomposition of one component's latent risk index.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct LriBreakdown {
    pub component: ComponentId,
    pub lri: f64,
    pub level: RiskLevel,
    pub band: RiskBand,
    /// Worst-case amplification over incoming edges (1.0 at entry points).
    pub alpha_max: f64,
    /// Longest entry-to-here path, counted in components.
    pub depth: u32,
    pub criticality: f64,
    pub observability: f64,
    /// Recoveries per minute: the reciprocal of mean repair time.
    pub recovery_rate: f64,
    pub latent_accumulation: f64,
}

/// Latent risk index of one component:
///
/// ```text
/// lri = (alpha_max * depth * criticality) / (observability * recovery_rate)
/// ```
///
/// Slow repair (low recovery rate) and blind spots (low observability) both
/// inflate the index; zero observability is rejected rather than returning
/// infinity.
pub fn compute_lri(
    topo: &ValidatedTopology,
    map: &AmplificationMap,
    id: &ComponentId,
) -> Result<LriBreakdown, RiskError> {
    let idx = topo.component_index(id)?;
    let spec = topo.component_at(idx);
    if spec.observability_coverage <= 0.0 {
        return Err(RiskError::ZeroObservability(id.clone()));
    }
    let alpha_max = max_upstream_amplification(topo, map, id)?;
    let depth = topo.depth_at(idx);
    let recovery_rate = 1.0 / spec.mttr_minutes;
    let lri = (alpha_max * depth as f64 * spec.criticality)
        / (spec.observability_coverage * recovery_rate);
    Ok(LriBreakdown {
        component: id.clone(),
        lri,
        level: classify_risk(lri),
        band: risk_band(lri),
        alpha_max,
        depth,
        criticality: spec.criticality,
        observability: spec.observability_coverage,
        recovery_rate,
        latent_accumulation: latent_accumulation_for(topo, map, id)?,
    })
}

/// A known way a component can fail, with the estimated probability that
/// monitoring would catch it.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct FailureMode {
    pub id: String,
    pub component: ComponentId,
    pub detection_probability: f64,
}

///// Readiness-of-observability score: the mean detection probability over the
/// failure-mode catalog. An empty catalog has no defined score.
pub fn compute_ros(catalog: &[FailureMode]) -> Result<f64, RiskError> {
    if catalog.is_empty() {
        return Err(RiskError::EmptyCatalog);
    }
    Ok(catalog.iter().map(|m| m.detection_probability).sum::<f64>() / catalog.len() as f64)
}

/// Per-component readiness: mean detection probability of each component's
/// own failure modes.
pub fn ros_by_component(catalog: &[FailureMode]) -> BTreeMap<ComponentId, f64> {
    let mut sums: BTreeMap<ComponentId, (f64, usize)> = BTreeMap::new();
    for m in catalog {
        let e = sums.entry(m.component.clone()).or_insert((0.0, 0));
        e.0 += m.detection_probability;
        e.1 += 1;
    }
    sums.into_iter()
        .map(|(c, (sum, n))| (c, sum / n as f64))
        .collect()
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionConfig {
    /// Total simulated seconds per run.
    pub duration_s: u64,
    /// Tick at which the probed failure is injected.
    pub onset_tick: u64,
    /// A component is "visibly deviating" when error fraction exceeds this…
    pub error_fraction_threshold: f64,
    /// …or latency exceeds this multiple of its baseline mean…
    pub latency_ratio_threshold: f64,
    /// …or utilization exceeds this while the baseline stayed below it.
    pub utilization_threshold: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            duration_s: 120,
            onset_tick: 30,
            error_fraction_threshold: 0.05,
            latency_ratio_threshold: 2.0,
            utilization_threshold: 0.85,
        }
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct DetectionEstimate {
    pub probability: f64,
    /// Components whose telemetry visibly deviated after onset.
    pub visible_components: Vec<ComponentId>,
}

fn post_onset_means(trace: &TelemetryTrace, onset: usize) -> Vec<(f64, f64, f64)> {
    let n = trace.component_ids.len();
    let ticks = &trace.ticks[onset.min(trace.ticks.len())..];
    let mut out = vec![(0.0, 0.0, 0.0); n];
    if ticks.is_empty() {
        return out;
    }
    for row in ticks {
        for (c, m) in row.iter().enumerate() {
            out[c].0 += m.error_fraction();
            out[c].1 += m.latency_ms;
            out[c].2 += m.utilization;
        }
    }
    let k = ticks.len() as f64;
    for v in &mut out {
        v.0 /= k;
        v.1 /= k;
        v.2 /= k;
    }
    out
}

/// Estimate the probability that monitoring detects `action`'s effects:
/// replay the scenario with and without the perturbation, find every
/// component whose post-onset telemetry visibly deviates, and combine their
/// observability coverages as independent chances to alarm.
pub fn estimate_detection_probability(
    topo: &ValidatedTopology,
    traffic: &TrafficProfile,
    action: &PerturbationAction,
    config: &DetectionConfig,
    seed: u64,
) -> Result<DetectionEstimate, RiskError> {
    let schedule = vec![ScheduleEntry {
        tick_s: config.onset_tick,
        op: ScheduleOp::Apply(action.clone()),
    }];
    let baseline = run_simulation(topo, traffic, config.duration_s, seed, &[])?;
    let perturbed = run_simulation(topo, traffic, config.duration_s, seed, &schedule)?;

    let base = post_onset_means(&baseline, config.onset_tick as usize);
    let pert = post_onset_means(&perturbed, config.onset_tick as usize);

    let mut visible = Vec::new();
    let mut miss_all = 1.0;
    for (c, id) in baseline.component_ids.iter().enumerate() {
        let (b_err, b_lat, b_util) = base[c];
        let (p_err, p_lat, p_util) = pert[c];
        let errors = p_err > config.error_fraction_threshold
            && p_err > b_err + config.error_fraction_threshold / 2.0;
        let latency = b_lat > 0.0 && p_lat > config.latency_ratio_threshold * b_lat;
        let saturated =
            p_util > config.utilization_threshold && b_util <= config.utilization_threshold;
        if errors || latency || saturated {
            let idx = topo.component_index(id)?;
            miss_all *= 1.0 - topo.component_at(idx).observability_coverage;
            visible.push(id.clone());
        }
    }
    let probability = if visible.is_empty() {
        0.0
    } else {
        1.0 - miss_all
    };
    Ok(DetectionEstimate {
        probability,
        visible_components: visible,
    })
}

/// One ranked row of a system risk report.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct RiskEntry {
    pub rank: usize,
    #[serde(flatten)]
    pub breakdown: LriBreakdown,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ros: Option<f64>,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct RiskReport {
    pub entries: Vec<RiskEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_ros: Option<f64>,
}

impl RiskReport {
    pub fn lookup(&self, id: &ComponentId) -> Option<&RiskEntry> {
        self.entries.iter().find(|e| &e.breakdown.component == id)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "component,lri,level,rank,alpha_max,depth,criticality,observability,recovery,l_i,ros\n",
        );
        for e in &self.entries {
            let b = &e.breakdown;
            let ros = e.ros.map(|r| r.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                b.component,
                b.lri,
                b.level,
                e.rank,
                b.alpha_max,
                b.depth,
                b.criticality,
                b.observability,
                b.recovery_rate,
                b.latent_accumulation,
                ros
            ));
        }
        out
    }
}

/// Score every component and rank them worst-first (ties broken by id).
pub fn assess_system_risk(
    topo: &ValidatedTopology,
    map: &AmplificationMap,
    catalog: Option<&[FailureMode]>,
) -> Result<RiskReport, RiskError> {
    let per_component_ros = catalog.map(ros_by_component);
    let mut rows: Vec<LriBreakdown> = (0..topo.len())
        .map(|i| compute_lri(topo, map, &topo.component_at(i).id))
        .collect::<Result<_, _>>()?;
    rows.sort_by(|a, b| {
        b.lri
            .partial_cmp(&a.lri)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.component.cmp(&b.component))
    });
    let entries = rows
        .into_iter()
        .enumerate()
        .map(|(i, breakdown)| {
            let ros = per_component_ros
                .as_ref()
                .and_then(|m| m.get(&breakdown.component).copied());
            RiskEntry {
                rank: i + 1,
                breakdown,
                ros,
            }
        })
        .collect();
    let system_ros = match catalog {
        Some(c) if !c.is_empty() => Some(compute_ros(c)?),
        _ => None,
    };
    Ok(RiskReport {
        entries,
        system_ros,
    })
}

/// Spearman rank correlation with average ranks for ties. Returns a value in
/// [-1, 1]; slices must be equally long and non-trivial (n >= 2).
pub fn spearman_rank_correlation(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "paired samples required");
    assert!(xs.len() >= 2, "need at least two pairs");
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    pearson(&rx, &ry)
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // 1-based ranks; tied values share the mean of their positions.
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mean_rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{
        validate_topology, ComponentSpec, DependencyEdge, LatencyModel, LatencyProfile,
        OptimizationParams, TopologyGraph,
    };

    fn profile() -> LatencyProfile {
        LatencyProfile {
            base_latency_ms: 10.0,
            model: LatencyModel::Linear,
            saturation_cap_ms: 50.0,
            table_points: None,
        }
    }

    fn comp(id: &str, kind: ComponentKind) -> ComponentSpec {
        ComponentSpec {
            id: id.into(),
            kind,
            capacity_rps: 10_000.0,
            latency_profile: profile(),
            mttr_minutes: 10.0,
            observability_coverage: 0.9,
            criticality: 2.0,
            bypass_probability: 0.1,
            optimization_params: None,
        }
    }

    fn edge(from: &str, to: &str, fraction: f64, alpha: Option<f64>) -> DependencyEdge {
        DependencyEdge {
            from: from.into(),
            to: to.into(),
            load_fraction: fraction,
            declared_amplification: alpha,
            edge_observability: 0.5,
        }
    }

    fn cache_chain(hit_max: f64, db_capacity: f64) -> ValidatedTopology {
        let mut cache = comp("cache1", ComponentKind::Cache);
        cache.capacity_rps = 5_000.0;
        cache.optimization_params = Some(OptimizationParams::Cache {
            size_units: 400.0,
            hit_max,
            size_scale_units: 10.0,
            hit_drift_per_tick: 0.0,
        });
        let mut db = comp("db1", ComponentKind::Database);
        db.capacity_rps = db_capacity;
        let graph = TopologyGraph {
            components: vec![comp("front", ComponentKind::Entry), cache, db],
            edges: vec![
                edge("front", "cache1", 1.0, None),
                edge("cache1", "db1", 1.0 - hit_max, None),
            ],
            entries: vec!["front".into()],
        };
        validate_topology(graph).unwrap()
    }

    #[test]
    fn classification_boundaries() {
        assert_eq!(classify_risk(0.0), RiskLevel::Low);
        assert_eq!(classify_risk(1.999), RiskLevel::Low);
        assert_eq!(classify_risk(2.0), RiskLevel::Medium);
        assert_eq!(classify_risk(9.999), RiskLevel::Medium);
        assert_eq!(classify_risk(10.0), RiskLevel::High);
        assert_eq!(classify_risk(1e6), RiskLevel::High);
    }

    #[test]
    fn band_boundaries() {
        assert_eq!(risk_band(1.0), RiskBand::Low);
        assert_eq!(risk_band(2.0), RiskBand::MediumLow);
        assert_eq!(risk_band(5.0), RiskBand::Medium);
        assert_eq!(risk_band(10.0), RiskBand::High);
        assert_eq!(risk_band(20.0), RiskBand::VeryHigh);
        assert_eq!(risk_band(50.0), RiskBand::Critical);
    }

    #[test]
    fn lri_matches_hand_computation() {
        // db1: alpha_max 4.0 (declared), depth 3, criticality 2, mttr 10,
        // observability 0.9 => 4 * 3 * 2 / (0.9 * 0.1) = 266.66…
        let mut topo_graph = TopologyGraph {
            components: vec![
                comp("front", ComponentKind::Entry),
                comp("svc", ComponentKind::Service),
                comp("db1", ComponentKind::Database),
            ],
            edges: vec![
                edge("front", "svc", 1.0, Some(1.0)),
                edge("svc", "db1", 0.5, Some(4.0)),
            ],
            entries: vec!["front".into()],
        };
        topo_graph.components[2].mttr_minutes = 10.0;
        let topo = validate_topology(topo_graph).unwrap();
        let map = AmplificationMap::from_declared(&topo);
        let b = compute_lri(&topo, &map, &"db1".into()).unwrap();
        assert!((b.lri - 266.666_666_666_666_6).abs() < 1e-9, "lri {}", b.lri);
        assert_eq!(b.level, RiskLevel::High);
        assert_eq!(b.depth, 3);
        assert!((b.alpha_max - 4.0).abs() < 1e-12);
        assert!((b.recovery_rate - 0.1).abs() < 1e-12);
    }

    #[test]
    fn entry_points_use_neutral_amplification() {
        let topo = cache_chain(0.9, 1_000.0);
        let map = AmplificationMap::from_declared(&topo);
        let b = compute_lri(&topo, &map, &"front".into()).unwrap();
        assert!((b.alpha_max - 1.0).abs() < 1e-12);
        assert_eq!(b.depth, 1);
        // 1 * 1 * 2 / (0.9 * 0.1) = 22.22…
        assert!((b.lri - 200.0 / 9.0).abs() < 1e-9);
    }

    #[test]
    fn zero_observability_is_an_error() {
        let mut graph = TopologyGraph {
            components: vec![comp("front", ComponentKind::Entry), comp("db1", ComponentKind::Database)],
            edges: vec![edge("front", "db1", 1.0, None)],
            entries: vec!["front".into()],
        };
        graph.components[1].observability_coverage = 0.0;
        let topo = validate_topology(graph).unwrap();
        let map = AmplificationMap::from_declared(&topo);
        let err = compute_lri(&topo, &map, &"db1".into()).unwrap_err();
        assert!(matches!(err, RiskError::ZeroObservability(_)));
    }

    #[test]
    fn latent_accumulation_sums_incoming_exposure() {
        // db1 has two parents: svc (bypass 0.3, alpha 4, edge obs 0.5) and
        // cache1 (bypass 0.2, alpha 10, edge obs 0.8).
        let mut svc = comp("svc", ComponentKind::Service);
        svc.bypass_probability = 0.3;
        let mut cache = comp("cache1", ComponentKind::Cache);
        cache.bypass_probability = 0.2;
        cache.optimization_params = Some(OptimizationParams::Cache {
            size_units: 100.0,
            hit_max: 0.9,
            size_scale_units: 25.0,
            hit_drift_per_tick: 0.0,
        });
        let mut e1 = edge("svc", "db1", 0.5, Some(4.0));
        e1.edge_observability = 0.5;
        let mut e2 = edge("cache1", "db1", 0.1, Some(10.0));
        e2.edge_observability = 0.8;
        let graph = TopologyGraph {
            components: vec![
                comp("front", ComponentKind::Entry),
                svc,
                cache,
                comp("db1", ComponentKind::Database),
            ],
            edges: vec![
                edge("front", "svc", 0.5, Some(1.0)),
                edge("front", "cache1", 0.5, Some(1.0)),
                e1,
                e2,
            ],
            entries: vec!["front".into()],
        };
        let topo = validate_topology(graph).unwrap();
        let map = AmplificationMap::from_declared(&topo);
        let l = latent_accumulation_for(&topo, &map, &"db1".into()).unwrap();
        // 4*0.3*0.5 + 10*0.2*0.2 = 0.6 + 0.4 = 1.0
        assert!((l - 1.0).abs() < 1e-12, "latent {l}");
        assert_eq!(
            latent_accumulation_for(&topo, &map, &"front".into()).unwrap(),
            0.0
        );
    }

    #[test]
    fn measured_amplification_tracks_hit_rate_inverse() {
        // size/scale = 40 so the realized hit rate equals hit_max exactly to
        // machine precision; disabling the cache multiplies db load by
        // 1 / (1 - hit).
        for hit in [0.5, 0.9, 0.99] {
            let topo = cache_chain(hit, 1e9);
            let measured = measure_amplification(
                &topo,
                &TrafficProfile::constant(1_000.0),
                &"cache1".into(),
                DEFAULT_AMP_WINDOW_S,
                7,
            )
            .unwrap();
            assert_eq!(measured.len(), 1);
            let expect = 1.0 / (1.0 - hit);
            let got = measured[0].alpha;
            assert!(
                (got - expect).abs() / expect < 0.05,
                "hit {hit}: alpha {got} vs {expect}"
            );
        }
    }

    #[test]
    fn plain_components_are_not_bypassable() {
        let topo = cache_chain(0.9, 1_000.0);
        let err = measure_amplification(
            &topo,
            &TrafficProfile::constant(1_000.0),
            &"db1".into(),
            60,
            7,
        )
        .unwrap_err();
        assert!(matches!(err, RiskError::NotBypassable { .. }));
    }

    #[test]
    fn zero_baseline_is_an_error() {
        // No offered load means nothing flows to the database during the
        // baseline window, so the stressed/baseline ratio is undefined.
        let topo = cache_chain(0.9, 1_000.0);
        let err = measure_amplification(
            &topo,
            &TrafficProfile::constant(0.0),
            &"cache1".into(),
            60,
            7,
        )
        .unwrap_err();
        assert!(matches!(err, RiskError::ZeroBaseline { .. }));
    }

    #[test]
    fn measured_entries_override_declared() {
        let topo = cache_chain(0.9, 1_000.0);
        let mut map = AmplificationMap::from_declared(&topo);
        assert_eq!(map.alpha(&"cache1".into(), &"db1".into()), Some(1.0));
        map.insert_measured("cache1".into(), "db1".into(), 9.7, 300);
        assert_eq!(map.alpha(&"cache1".into(), &"db1".into()), Some(9.7));
        assert_eq!(
            map.entry(&"cache1".into(), &"db1".into()).unwrap().source,
            AmplificationSource::Measured
        );
    }

    #[test]
    fn ros_is_the_catalog_mean() {
        let catalog = vec![
            FailureMode {
                id: "cache1.bypass".into(),
                component: "cache1".into(),
                detection_probability: 0.9,
            },
            FailureMode {
                id: "db1.saturation".into(),
                component: "db1".into(),
                detection_probability: 0.5,
            },
            FailureMode {
                id: "db1.slow".into(),
                component: "db1".into(),
                detection_probability: 0.1,
            },
        ];
        assert!((compute_ros(&catalog).unwrap() - 0.5).abs() < 1e-12);
        let by_component = ros_by_component(&catalog);
        assert!((by_component[&"db1".into()] - 0.3).abs() < 1e-12);
        assert!(matches!(compute_ros(&[]), Err(RiskError::EmptyCatalog)));
    }

    #[test]
    fn detection_sees_loud_failures_and_misses_quiet_ones() {
        let topo = cache_chain(0.99, 50.0);
        let traffic = TrafficProfile::constant(1_000.0);
        // Full bypass floods the 50-rps database: errors everywhere behind
        // the cache, so detection approaches the db's coverage.
        let loud = estimate_detection_probability(
            &topo,
            &traffic,
            &PerturbationAction::new(Strategy::CacheBypass, "cache1", 1.0),
            &DetectionConfig::default(),
            7,
        )
        .unwrap();
        assert!(loud.probability >= 0.9, "loud {loud:?}");
        assert!(!loud.visible_components.is_empty());
        // A 0.5% bypass shifts the db from 10 to ~15 rps: no threshold fires.
        let quiet = estimate_detection_probability(
            &topo,
            &traffic,
            &PerturbationAction::new(Strategy::CacheBypass, "cache1", 0.005),
            &DetectionConfig::default(),
            7,
        )
        .unwrap();
        assert_eq!(quiet.probability, 0.0, "quiet {quiet:?}");
    }

    #[test]
    fn report_ranks_worst_first_with_stable_ties() {
        let graph = TopologyGraph {
            components: vec![
                comp("front", ComponentKind::Entry),
                comp("svc-b", ComponentKind::Service),
                comp("svc-a", ComponentKind::Service),
            ],
            edges: vec![
                edge("front", "svc-b", 0.5, Some(2.0)),
                edge("front", "svc-a", 0.5, Some(2.0)),
            ],
            entries: vec!["front".into()],
        };
        let topo = validate_topology(graph).unwrap();
        let map = AmplificationMap::from_declared(&topo);
        let report = assess_system_risk(&topo, &map, None).unwrap();
        assert_eq!(report.entries.len(), 3);
        // Both services score identically; the tie breaks alphabetically.
        assert_eq!(report.entries[0].breakdown.component.as_str(), "svc-a");
        assert_eq!(report.entries[1].breakdown.component.as_str(), "svc-b");
        assert_eq!(report.entries[2].breakdown.component.as_str(), "front");
        assert_eq!(report.entries[0].rank, 1);
        assert_eq!(report.entries[2].rank, 3);
        let csv = report.to_csv();
        assert!(csv.starts_with("component,lri,level,rank,"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn spearman_handles_monotone_and_reversed_data() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let up = [2.0, 4.0, 5.0, 8.0, 110.0];
        let down = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert!((spearman_rank_correlation(&xs, &up) - 1.0).abs() < 1e-12);
        assert!((spearman_rank_correlation(&xs, &down) + 1.0).abs() < 1e-12);
        let tied = [1.0, 1.0, 2.0, 2.0, 3.0];
        let rho = spearman_rank_correlation(&xs, &tied);
        assert!(rho > 0.9 && rho <= 1.0, "rho {rho}");
    }
}
