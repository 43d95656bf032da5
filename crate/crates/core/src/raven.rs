//! Continuous risk monitoring and adaptive reconfiguration.
//!
//! The monitor watches a running simulation through overlapping sliding
//! windows. Each completed window is reduced to per-component means, cache
//! amplification is re-estimated from observed hit rates, and the worst risk
//! index is recomputed online. The index stream feeds a change detector and a
//! short-horizon forecast; when risk drifts past the trigger (or the detector
//! fires) and the cooldown has elapsed, a compact optimizer run proposes a
//! safer configuration, which is trial-validated and then rolled out
//! gradually with a safety check and automatic revert at every step. Risk
//! classifications also drive immediate mitigations: low risk snapshots the
//! last known-good configuration, medium risk warms fallback paths with
//! shadow traffic, and high risk rolls back to the snapshot (or degrades by
//! shedding load when none exists).

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};
use thiserror::Error;

use crate::apex::{
    apply_configuration, canonical_values, current_values, optimize, validate_variables,
    ApexConfig, ApexError, TunableParam, VariableSpec,
};
use crate::hydra::{safety_check, SafetyPolicy, SafetyVerdict};
use crate::riskcore::{
    assess_system_risk, AmplificationMap, RiskError, RiskLevel,
};
use crate::seedstream;
use crate::simengine::{
    run_simulation, ComponentTick, SimError, Simulation, TelemetryTrace, TrafficProfile,
};
use crate::topology::{
    validate_topology, ComponentId, ComponentKind, OptimizationParams, TopologyError,
    ValidatedTopology,
};

#[derive(Debug, Error)]
pub enum RavenError {
    #[error("need at least {needed} history points, got {got}")]
    InsufficientHistory { needed: usize, got: usize },
    #[error("invalid monitor policy: {0}")]
    InvalidPolicy(String),
    #[error(transparent)]
    Apex(#[from] ApexError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// Overlapping analysis windows: a window of `duration_s` ticks starts every
/// `stride()` ticks.
#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlidingWindowSpec {
    pub duration_s: u64,
    /// Fraction of each window shared with the next one.
    pub overlap: f64,
}

impl Default for SlidingWindowSpec {
    fn default() -> Self {
        SlidingWindowSpec {
            duration_s: 900,
            overlap: 0.5,
        }
    }
}

impl SlidingWindowSpec {
    pub fn validate(&self) -> Result<(), RavenError> {
        if self.duration_s == 0 {
            return Err(RavenError::InvalidPolicy("window duration_s must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(RavenError::InvalidPolicy(format!(
                "window overlap must be in [0, 1), got {}",
                self.overlap
            )));
        }
        if self.stride() == 0 {
            return Err(RavenError::InvalidPolicy(
                "window overlap too close to 1: stride rounds to zero".into(),
            ));
        }
        Ok(())
    }

    pub fn stride(&self) -> u64 {
        ((self.duration_s as f64) * (1.0 - self.overlap)).round() as u64
    }

    /// Number of complete windows in a trace of `ticks` ticks.
    pub fn complete_windows(&self, ticks: u64) -> u64 {
        if ticks < self.duration_s {
            0
        } else {
            (ticks - self.duration_s) / self.stride() + 1
        }
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ComponentWindowStats {
    pub mean_offered_rps: f64,
    pub mean_error_fraction: f64,
    pub mean_latency_ms: f64,
    pub mean_utilization: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_hit_rate: Option<f64>,
    /// For caches: amplification implied by the observed hit rate,
    /// 1 / (1 - mean hit), capped at 1e6.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_hat: Option<f64>,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct WindowSummary {
    pub index: u64,
    pub start_s: u64,
    pub end_s: u64,
    pub components: BTreeMap<ComponentId, ComponentWindowStats>,
}

pub const ALPHA_HAT_CAP: f64 = 1e6;

fn summarize_rows(
    order: &[ComponentId],
    rows: &[Vec<ComponentTick>],
    index: u64,
    start_s: u64,
) -> WindowSummary {
    let k = rows.len().max(1) as f64;
    let mut components = BTreeMap::new();
    for (pos, id) in order.iter().enumerate() {
        let mut offered = 0.0;
        let mut err = 0.0;
        let mut lat = 0.0;
        let mut util = 0.0;
        let mut hit_sum = 0.0;
        let mut hit_n = 0usize;
        for row in rows {
            let m = &row[pos];
            offered += m.offered_rps;
            err += m.error_fraction();
            lat += m.latency_ms;
            util += m.utilization;
            if let Some(h) = m.hit_rate {
                hit_sum += h;
                hit_n += 1;
            }
        }
        let mean_hit = if hit_n > 0 {
            Some(hit_sum / hit_n as f64)
        } else {
            None
        };
        let alpha_hat = mean_hit.map(|h| {
            if h >= 1.0 - 1.0 / ALPHA_HAT_CAP {
                ALPHA_HAT_CAP
            } else {
                1.0 / (1.0 - h)
            }
        });
        components.insert(
            id.clone(),
            ComponentWindowStats {
                mean_offered_rps: offered / k,
                mean_error_fraction: err / k,
                mean_latency_ms: lat / k,
                mean_utilization: util / k,
                mean_hit_rate: mean_hit,
                alpha_hat,
            },
        );
    }
    WindowSummary {
        index,
        start_s,
        end_s: start_s + rows.len() as u64,
        components,
    }
}

/// Reduce a full trace to its complete sliding windows.
pub fn window_summaries(trace: &TelemetryTrace, spec: &SlidingWindowSpec) -> Vec<WindowSummary> {
    let total = trace.ticks.len() as u64;
    let n = spec.complete_windows(total);
    let mut out = Vec::with_capacity(n as usize);
    for w in 0..n {
        let start = w * spec.stride();
        let end = start + spec.duration_s;
        out.push(summarize_rows(
            &trace.component_ids,
            &trace.ticks[start as usize..end as usize],
            w,
            start,
        ));
    }
    out
}

/// Recompute the worst risk index from a window: observed cache hit rates
/// replace declared amplification on cache edges, everything else keeps its
/// declared factor.
pub fn summary_lri(topo: &ValidatedTopology, summary: &WindowSummary) -> Result<f64, RavenError> {
    let mut map = AmplificationMap::from_declared(topo);
    for (id, stats) in &summary.components {
        let Some(alpha) = stats.alpha_hat else { continue };
        let idx = topo.component_index(id)?;
        if topo.component_at(idx).kind != ComponentKind::Cache {
            continue;
        }
        for &e in topo.outgoing_edges(idx) {
            let to = topo.edge_at(e).to.clone();
            map.insert_measured(id.clone(), to, alpha, summary.end_s - summary.start_s);
        }
    }
    let report = assess_system_risk(topo, &map, None)?;
    Ok(report.entries.first().map(|e| e.breakdown.lri).unwrap_or(0.0))
}

/// Online change detectors over the risk-index stream. Both reset their
/// internal state after firing so sustained shifts report once per episode.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChangeDetector {
    /// One-sided cumulative sum around a known baseline level `mu0`.
    Cusum {
        mu0: f64,
        delta: f64,
        lambda: f64,
        #[serde(default)]
        s: f64,
    },
    /// Page–Hinkley with a running mean instead of a fixed baseline.
    PageHinkley {
        delta: f64,
        lambda: f64,
        #[serde(default)]
        n: u64,
        #[serde(default)]
        mean: f64,
        #[serde(default)]
        m: f64,
        #[serde(default)]
        m_min: f64,
    },
}

impl ChangeDetector {
    pub fn cusum(mu0: f64, delta: f64, lambda: f64) -> Self {
        ChangeDetector::Cusum {
            mu0,
            delta,
            lambda,
            s: 0.0,
        }
    }

    pub fn page_hinkley(delta: f64, lambda: f64) -> Self {
        ChangeDetector::PageHinkley {
            delta,
            lambda,
            n: 0,
            mean: 0.0,
            m: 0.0,
            m_min: 0.0,
        }
    }

    /// Feed one observation; true means an upward change fired.
    pub fn update(&mut self, x: f64) -> bool {
        match self {
            ChangeDetector::Cusum { mu0, delta, lambda, s } => {
                *s = (*s + x - *mu0 - *delta).max(0.0);
                if *s > *lambda {
                    *s = 0.0;
                    true
                } else {
                    false
                }
            }
            ChangeDetector::PageHinkley {
                delta,
                lambda,
                n,
                mean,
                m,
                m_min,
            } => {
                *n += 1;
                *mean += (x - *mean) / *n as f64;
                *m += x - *mean - *delta;
                *m_min = m_min.min(*m);
                if *m - *m_min > *lambda {
                    *n = 0;
                    *mean = 0.0;
                    *m = 0.0;
                    *m_min = 0.0;
                    true
                } else {
                    false
                }
            }
        }
    }
}

pub const FORECAST_SMOOTHING: f64 = 0.3;

/// Forecast the risk index `steps_ahead` observations past the end of
/// `history`: exponential smoothing followed by a least-squares line through
/// the recent half of the smoothed series, with the smoothing lag folded back
/// into the intercept. Never negative.
pub fn forecast_lri(history: &[f64], steps_ahead: u64) -> Result<f64, RavenError> {
    let n = history.len();
    if n < 2 {
        return Err(RavenError::InsufficientHistory { needed: 2, got: n });
    }
    let a = FORECAST_SMOOTHING;
    let mut smoothed = Vec::with_capacity(n);
    let mut s = history[0];
    smoothed.push(s);
    for &x in &history[1..] {
        s = a * x + (1.0 - a) * s;
        smoothed.push(s);
    }
    // Skip the smoother's warm-up transient when there is enough data.
    let burn = if n >= 8 { n / 2 } else { 0 };
    let pts = &smoothed[burn..];
    let m = pts.len() as f64;
    let mean_i = (burn as f64 + (n - 1) as f64) / 2.0;
    let mean_y = pts.iter().sum::<f64>() / m;
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, &y) in pts.iter().enumerate() {
        let i = (burn + k) as f64;
        num += (i - mean_i) * (y - mean_y);
        den += (i - mean_i) * (i - mean_i);
    }
    let slope = if den > 0.0 { num / den } else { 0.0 };
    // A steadily trending series is smoothed to the same slope but shifted
    // back by slope * (1 - a) / a; undo that before extrapolating.
    let intercept = mean_y - slope * mean_i + slope * (1.0 - a) / a;
    let target = (n - 1) as f64 + steps_ahead as f64;
    Ok((intercept + slope * target).max(0.0))
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonitorPolicy {
    #[serde(default)]
    pub window: SlidingWindowSpec,
    /// Re-optimize when the online risk index exceeds this.
    pub lri_trigger: f64,
    /// Baseline level for the cumulative-sum detector.
    pub detector_mu0: f64,
    pub detector_delta: f64,
    pub detector_lambda: f64,
    /// Minimum ticks between optimization rounds.
    pub cooldown_s: u64,
    /// Rollout interpolation steps (one per tick).
    pub gradual_steps: u32,
    /// Shadow-traffic increment applied on medium risk (cap 0.5).
    pub shadow_step: f64,
    /// Entry load shed on high risk with no snapshot to roll back to.
    pub shed_fraction: f64,
    /// Summaries ahead for the logged forecast.
    pub forecast_horizon: u64,
    #[serde(default)]
    pub safety: SafetyPolicy,
}

impl Default for MonitorPolicy {
    fn default() -> Self {
        MonitorPolicy {
            window: SlidingWindowSpec::default(),
            lri_trigger: 10.0,
            detector_mu0: 2.0,
            detector_delta: 0.5,
            detector_lambda: 5.0,
            cooldown_s: 900,
            gradual_steps: 10,
            shadow_step: 0.1,
            shed_fraction: 0.3,
            forecast_horizon: 1,
            safety: SafetyPolicy::default(),
        }
    }
}

impl MonitorPolicy {
    pub fn validate(&self) -> Result<(), RavenError> {
        self.window.validate()?;
        if self.gradual_steps == 0 {
            return Err(RavenError::InvalidPolicy("gradual_steps must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.shadow_step) {
            return Err(RavenError::InvalidPolicy("shadow_step must be in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.shed_fraction) {
            return Err(RavenError::InvalidPolicy("shed_fraction must be in [0, 1]".into()));
        }
        if !(self.lri_trigger.is_finite() && self.lri_trigger > 0.0) {
            return Err(RavenError::InvalidPolicy("lri_trigger must be > 0".into()));
        }
        Ok(())
    }
}

pub const SHADOW_FRACTION_CAP: f64 = 0.5;

#[derive(Clone, PartialEq, Debug, Default)]
pub struct MitigationState {
    pub shadow_fraction: f64,
    pub shed_fraction: f64,
    /// Configuration values captured the last time risk was low.
    pub snapshot: Option<Vec<f64>>,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum MitigationAction {
    None,
    /// Risk is low: remember this configuration as known-good.
    Snapshot,
    /// Risk is medium: reroute more shadow traffic to keep fallbacks warm.
    ShadowIncrease { shadow_fraction: f64 },
    /// Risk is high and nothing to roll back to: shed entry load.
    Degrade { shed_fraction: f64 },
    /// Risk is high: return to the last known-good configuration.
    RollbackConfig { values: Vec<f64> },
}

/// Immediate response to a risk classification. Mutates `state`; the caller
/// applies the returned action to the live system.
pub fn mitigate(
    state: &mut MitigationState,
    level: RiskLevel,
    current: &[f64],
    policy: &MonitorPolicy,
) -> MitigationAction {
    match level {
        RiskLevel::Low => {
            state.snapshot = Some(current.to_vec());
            state.shed_fraction = 0.0;
            MitigationAction::Snapshot
        }
        RiskLevel::Medium => {
            state.shadow_fraction =
                (state.shadow_fraction + policy.shadow_step).min(SHADOW_FRACTION_CAP);
            MitigationAction::ShadowIncrease {
                shadow_fraction: state.shadow_fraction,
            }
        }
        RiskLevel::High => match state.snapshot.clone() {
            Some(values) if values != current => {
                MitigationAction::RollbackConfig { values }
            }
            _ => {
                state.shed_fraction = policy.shed_fraction;
                MitigationAction::Degrade {
                    shed_fraction: policy.shed_fraction,
                }
            }
        },
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub tick_s: u64,
    pub window_index: u64,
    pub lri: f64,
    pub level: RiskLevel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forecast: Option<f64>,
    pub trigger_fired: bool,
    pub detector_fired: bool,
    pub mitigation: MitigationAction,
    pub optimized: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitness: Option<f64>,
    pub trial_rejected: bool,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub tick_s: u64,
    pub applied_steps: u32,
    pub total_steps: u32,
    pub rolled_back: bool,
    pub values: Vec<f64>,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Summary(SummaryRecord),
    Rollout(RolloutRecord),
}

/// Decision log of a monitoring run: one `summary` record per completed
/// window (including no-ops) and one `rollout` record per finished or
/// reverted rollout.
#[derive(Clone, PartialEq, Debug, Default, Serialize, Deserialize)]
pub struct OptimizationLog {
    pub records: Vec<LogRecord>,
}

impl OptimizationLog {
    pub fn summaries(&self) -> impl Iterator<Item = &SummaryRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Summary(s) => Some(s),
            _ => None,
        })
    }

    pub fn final_lri(&self) -> Option<f64> {
        self.summaries().last().map(|s| s.lri)
    }

    pub fn write_jsonl<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Freeze time-dependent declared parameters at `tick` so candidate
/// evaluations see the system as it currently behaves, not as it was
/// declared at tick zero.
fn effective_topology_at(
    topo: &ValidatedTopology,
    tick: u64,
) -> Result<ValidatedTopology, RavenError> {
    let mut graph = topo.graph().clone();
    let mut changed = false;
    for c in &mut graph.components {
        if let Some(OptimizationParams::Cache {
            hit_max,
            hit_drift_per_tick,
            ..
        }) = c.optimization_params.as_mut()
        {
            if *hit_drift_per_tick != 0.0 {
                *hit_max = (*hit_max + *hit_drift_per_tick * tick as f64).clamp(0.0, 1.0);
                *hit_drift_per_tick = 0.0;
                changed = true;
            }
        }
    }
    if changed {
        Ok(validate_topology(graph)?)
    } else {
        Ok(topo.clone())
    }
}

fn apply_values_to_sim(
    sim: &mut Simulation,
    variables: &[VariableSpec],
    values: &[f64],
) -> Result<(), SimError> {
    for (v, &x) in variables.iter().zip(values) {
        match v.param {
            TunableParam::CacheSizeUnits => sim.set_cache_size(&v.component, x)?,
            TunableParam::PoolSize => sim.set_pool_size(&v.component, x.round() as u32)?,
            TunableParam::QueueDepthUnits => sim.set_queue_depth(&v.component, x)?,
            TunableParam::LbReplicas => sim.set_lb_replicas(&v.component, x.round() as u32)?,
            TunableParam::BreakerTripThreshold => sim.set_breaker_trip(&v.component, x)?,
        }
    }
    Ok(())
}

/// Trial-run a candidate configuration on clean clones and check it against
/// the safety tripwires before it touches the live system.
fn trial_passes_safety(
    topo: &ValidatedTopology,
    traffic: &TrafficProfile,
    variables: &[VariableSpec],
    values: &[f64],
    baseline_latency: &[f64],
    policy: &SafetyPolicy,
    seed: u64,
) -> Result<bool, RavenError> {
    let trial_topo = apply_configuration(topo, variables, values)?;
    let trace = run_simulation(&trial_topo, traffic, 90, seed, &[])?;
    let order = trace.component_ids.clone();
    let mut recent: VecDeque<Vec<ComponentTick>> = VecDeque::new();
    for row in &trace.ticks {
        recent.push_back(row.clone());
        if recent.len() > policy.window_ticks {
            recent.pop_front();
        }
        if let SafetyVerdict::Violation(_) =
            safety_check(&order, baseline_latency, &recent, policy)
        {
            return Ok(false);
        }
    }
    Ok(true)
}

struct RolloutState {
    from: Vec<f64>,
    to: Vec<f64>,
    step: u32,
    total: u32,
    baseline_latency: Vec<f64>,
}

/// Run the full monitoring loop for `duration_s` simulated seconds and
/// return the decision log alongside the final applied configuration.
pub fn continuous_loop(
    topo: &ValidatedTopology,
    traffic: &TrafficProfile,
    variables: &[VariableSpec],
    apex_cfg: &ApexConfig,
    policy: &MonitorPolicy,
    duration_s: u64,
    seed: u64,
) -> Result<(OptimizationLog, Vec<f64>), RavenError> {
    policy.validate()?;
    validate_variables(topo, variables)?;

    let mut sim = Simulation::new(topo, traffic, seed)?;
    let order = sim.component_order();
    let mut current = current_values(topo, variables);

    let mut log = OptimizationLog::default();
    let mut buffer: Vec<Vec<ComponentTick>> = Vec::with_capacity(duration_s as usize);
    let mut recent: VecDeque<Vec<ComponentTick>> = VecDeque::new();
    let mut lri_history: Vec<f64> = Vec::new();
    let mut detector =
        ChangeDetector::cusum(policy.detector_mu0, policy.detector_delta, policy.detector_lambda);
    let mut mitigation_state = MitigationState::default();
    let mut rollout: Option<RolloutState> = None;
    let mut next_window = 0u64;
    let mut last_optimize: Option<u64> = None;
    let mut opt_runs = 0u64;

    for t in 0..duration_s {
        // Advance any in-flight rollout by one interpolation step.
        if let Some(r) = rollout.as_mut() {
            r.step += 1;
            let frac = r.step as f64 / r.total as f64;
            let mixed: Vec<f64> = r
                .from
                .iter()
                .zip(&r.to)
                .map(|(a, b)| a + (b - a) * frac)
                .collect();
            let staged = canonical_values(variables, &mixed);
            apply_values_to_sim(&mut sim, variables, &staged)?;
            current = staged;
        }

        let row = sim.step();
        recent.push_back(row.clone());
        if recent.len() > policy.safety.window_ticks {
            recent.pop_front();
        }
        buffer.push(row);

        if let Some(r) = rollout.as_ref() {
            let verdict = safety_check(&order, &r.baseline_latency, &recent, &policy.safety);
            let finished = if let SafetyVerdict::Violation(_) = verdict {
                // Revert to where the rollout started.
                apply_values_to_sim(&mut sim, variables, &r.from)?;
                current = r.from.clone();
                log.records.push(LogRecord::Rollout(RolloutRecord {
                    tick_s: t,
                    applied_steps: r.step,
                    total_steps: r.total,
                    rolled_back: true,
                    values: current.clone(),
                }));
                true
            } else if r.step >= r.total {
                log.records.push(LogRecord::Rollout(RolloutRecord {
                    tick_s: t,
                    applied_steps: r.step,
                    total_steps: r.total,
                    rolled_back: false,
                    values: current.clone(),
                }));
                true
            } else {
                false
            };
            if finished {
                rollout = None;
            }
        }

        // Window boundary?
        let ticks_done = t + 1;
        let window_ready = policy.window.complete_windows(ticks_done) > next_window;
        if !window_ready {
            continue;
        }
        let w = next_window;
        next_window += 1;
        let start = (w * policy.window.stride()) as usize;
        let end = start + policy.window.duration_s as usize;
        let summary = summarize_rows(&order, &buffer[start..end], w, start as u64);

        let lri = summary_lri(sim.topology(), &summary)?;
        lri_history.push(lri);
        let level = crate::riskcore::classify_risk(lri);

        let action = mitigate(&mut mitigation_state, level, &current, policy);
        sim.set_shadow_fraction(mitigation_state.shadow_fraction);
        sim.set_shed_fraction(mitigation_state.shed_fraction);
        if let MitigationAction::RollbackConfig { values } = &action {
            apply_values_to_sim(&mut sim, variables, values)?;
            current = values.clone();
            rollout = None;
        }

        let detector_fired = detector.update(lri);
        let forecast = forecast_lri(&lri_history, policy.forecast_horizon).ok();
        let trigger_fired = lri > policy.lri_trigger;
        let cooled = last_optimize.is_none_or(|at| t - at >= policy.cooldown_s);
        let should_optimize =
            (trigger_fired || detector_fired) && cooled && rollout.is_none();

        let mut optimized = false;
        let mut chosen_values = None;
        let mut chosen_fitness = None;
        let mut trial_rejected = false;
        if should_optimize {
            optimized = true;
            last_optimize = Some(t);
            let frozen = effective_topology_at(sim.topology(), sim.tick())?;
            let base = apply_configuration(&frozen, variables, &current)?;
            let opt_seed = seedstream::child_seed(seed, "raven.opt", opt_runs);
            opt_runs += 1;
            match optimize(&base, traffic, variables, apex_cfg, opt_seed) {
                Ok(front) => {
                    let best = front.best_by_fitness().expect("front is never empty");
                    let baseline_latency: Vec<f64> = order
                        .iter()
                        .map(|id| summary.components[id].mean_latency_ms)
                        .collect();
                    let trial_seed = seedstream::child_seed(seed, "raven.trial", opt_runs);
                    if trial_passes_safety(
                        &base,
                        traffic,
                        variables,
                        &best.values,
                        &baseline_latency,
                        &policy.safety,
                        trial_seed,
                    )? {
                        chosen_values = Some(best.values.clone());
                        chosen_fitness = Some(best.fitness);
                        if best.values != current {
                            rollout = Some(RolloutState {
                                from: current.clone(),
                                to: best.values.clone(),
                                step: 0,
                                total: policy.gradual_steps,
                                baseline_latency,
                            });
                        }
                    } else {
                        trial_rejected = true;
                    }
                }
                Err(ApexError::NoFeasibleSolution) => {}
                Err(e) => return Err(e.into()),
            }
        }

        log.records.push(LogRecord::Summary(SummaryRecord {
            tick_s: t,
            window_index: w,
            lri,
            level,
            forecast,
            trigger_fired,
            detector_fired,
            mitigation: action,
            optimized,
            chosen_values: chosen_values.clone(),
            fitness: chosen_fitness,
            trial_rejected,
        }));
    }

    Ok((log, current))
}
