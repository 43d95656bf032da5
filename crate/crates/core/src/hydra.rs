//! Adaptive risk probing.
//!
//! The probing engine perturbs a running simulation with gradually escalating
//! magnitudes, watches the measured amplification and risk index after each
//! step, and stops as soon as continuing would tell us nothing new or would
//! hurt: the schedule ran out (`MaxRateReached`), risk crossed the high
//! threshold (`HighRisk`), risk jumped faster than the gradient limit
//! (`RapidEscalation`), or live safety tripwires fired (`SafetyRollback`).
//! Every path restores normal operation before returning.
//!
//! A campaign strings probes together: a Thompson-sampling planner picks
//! (strategy, target) pairs based on which strategy/kind combinations have
//! historically revealed risk, executes each probe on one shared simulation,
//! re-measures amplification after each bypassable probe, and reports every
//! component whose risk classification worsened once measured factors
//! replaced declared ones.

use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use thiserror::Error;

use crate::riskcore::{
    assess_system_risk, compute_lri, measure_amplification, AmplificationMap, RiskError,
    RiskLevel, RiskReport, ZERO_BASELINE_EPS,
};
use crate::seedstream;
use crate::simengine::{
    ComponentTick, PerturbationAction, SimError, Simulation, Strategy, TrafficProfile,
};
use crate::topology::{ComponentId, ComponentKind, TopologyError, ValidatedTopology};

/// Ticks of telemetry collected per escalation step.
pub const MEASUREMENT_WINDOW_TICKS: u64 = 90;
/// Risk index above which probing must stop.
pub const HIGH_RISK_LRI: f64 = 10.0;
/// Largest tolerated step-to-step rise of the risk index.
pub const RISK_GRADIENT_LIMIT: f64 = 2.0;

/// Default cache-bypass escalation: 0.5% of hits reroute at first, growing
/// 1.4x per step, never beyond 20%.
pub const CACHE_BYPASS_START: f64 = 0.005;
pub const CACHE_BYPASS_FACTOR: f64 = 1.4;
pub const CACHE_BYPASS_CAP: f64 = 0.20;

#[derive(Debug, Error)]
pub enum HydraError {
    #[error("no eligible targets for the requested strategies")]
    NoEligibleTargets,
    #[error("`{strategy}` cannot probe `{target}`: {reason}")]
    IneligibleTarget {
        strategy: Strategy,
        target: ComponentId,
        reason: String,
    },
    #[error("escalation schedule is empty")]
    EmptySchedule,
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// Geometric magnitude ladder: `start, start*factor, …` up to `cap`.
#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EscalationSchedule {
    pub start: f64,
    pub factor: f64,
    pub cap: f64,
}

impl EscalationSchedule {
    pub fn cache_bypass() -> Self {
        EscalationSchedule {
            start: CACHE_BYPASS_START,
            factor: CACHE_BYPASS_FACTOR,
            cap: CACHE_BYPASS_CAP,
        }
    }

    pub fn latency_injection_ms() -> Self {
        EscalationSchedule {
            start: 10.0,
            factor: 2.0,
            cap: 80.0,
        }
    }

    /// Capacity *reduction* ladder; convert to a multiplier with `1 - r`.
    pub fn capacity_reduction() -> Self {
        EscalationSchedule {
            start: 0.1,
            factor: 1.5,
            cap: 0.5,
        }
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut v = self.start;
        while v <= self.cap * (1.0 + 1e-12) {
            out.push(v);
            v *= self.factor;
        }
        out
    }
}

/// Action-space magnitude ladder for each strategy. The binary strategies
/// (breaker bypass, replica removal, edge isolation) have a single full step.
pub fn strategy_schedule(strategy: Strategy) -> Vec<f64> {
    match strategy {
        Strategy::CacheBypass => EscalationSchedule::cache_bypass().magnitudes(),
        Strategy::LatencyInjection => EscalationSchedule::latency_injection_ms().magnitudes(),
        Strategy::ResourceConstraint => EscalationSchedule::capacity_reduction()
            .magnitudes()
            .into_iter()
            .map(|r| 1.0 - r)
            .collect(),
        Strategy::BreakerBypass | Strategy::LbManipulation | Strategy::DependencyIsolation => {
            vec![1.0]
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    /// Schedule exhausted without incident.
    MaxRateReached,
    /// Risk index reached the stop threshold.
    HighRisk,
    /// Risk index rose faster than the gradient limit.
    RapidEscalation,
    /// A live safety tripwire fired; the perturbation was rolled back.
    SafetyRollback,
}

impl fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TerminationReason::MaxRateReached => "max_rate_reached",
            TerminationReason::HighRisk => "high_risk",
            TerminationReason::RapidEscalation => "rapid_escalation",
            TerminationReason::SafetyRollback => "safety_rollback",
        };
        f.write_str(s)
    }
}

/// Decide whether escalation must stop given the risk index after each
/// completed step (most recent last).
pub fn escalation_decision(lri_history: &[f64], max_risk: f64) -> Option<TerminationReason> {
    let last = *lri_history.last()?;
    if last > HIGH_RISK_LRI {
        return Some(TerminationReason::HighRisk);
    }
    if lri_history.len() >= 2 {
        let prev = lri_history[lri_history.len() - 2];
        if last - prev > RISK_GRADIENT_LIMIT {
            return Some(TerminationReason::RapidEscalation);
        }
    }
    if last >= max_risk {
        return Some(TerminationReason::HighRisk);
    }
    None
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafetySignal {
    ErrorRate,
    Latency,
    Utilization,
}

impl fmt::Display for SafetySignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SafetySignal::ErrorRate => "error_rate",
            SafetySignal::Latency => "latency",
            SafetySignal::Utilization => "utilization",
        };
        f.write_str(s)
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct SafetyViolation {
    pub component: ComponentId,
    pub signal: SafetySignal,
    pub observed: f64,
    pub threshold: f64,
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SafetyPolicy {
    /// Mean error fraction a component may show before rollback.
    pub error_fraction: f64,
    /// Mean latency may grow to this multiple of its baseline.
    pub latency_ratio: f64,
    /// Mean utilization ceiling.
    pub utilization: f64,
    /// Signals are averaged over the last this-many ticks, which keeps
    /// one-tick blips from tripping rollbacks.
    pub window_ticks: usize,
}

impl Default for SafetyPolicy {
    fn default() -> Self {
        SafetyPolicy {
            error_fraction: 0.05,
            latency_ratio: 2.0,
            utilization: 0.85,
            window_ticks: 5,
        }
    }
}

#[derive(Clone, PartialEq, Debug)]
pub enum SafetyVerdict {
    Ok,
    Violation(SafetyViolation),
}

/// Evaluate the safety tripwires over a short window of recent telemetry.
/// `recent` holds the last ticks ([`Simulation::step`] rows, oldest first);
/// `baseline_latency` is the per-position mean latency from the unperturbed
/// baseline. Checks run in row order, error rate before latency before
/// utilization, and the first breach wins.
pub fn safety_check(
    order: &[ComponentId],
    baseline_latency: &[f64],
    recent: &VecDeque<Vec<ComponentTick>>,
    policy: &SafetyPolicy,
) -> SafetyVerdict {
    if recent.is_empty() {
        return SafetyVerdict::Ok;
    }
    let n = order.len();
    let k = recent.len() as f64;
    for pos in 0..n {
        let mut err = 0.0;
        let mut lat = 0.0;
        let mut util = 0.0;
        for row in recent {
            err += row[pos].error_fraction();
            lat += row[pos].latency_ms;
            util += row[pos].utilization;
        }
        err /= k;
        lat /= k;
        util /= k;
        if err > policy.error_fraction {
            return SafetyVerdict::Violation(SafetyViolation {
                component: order[pos].clone(),
                signal: SafetySignal::ErrorRate,
                observed: err,
                threshold: policy.error_fraction,
            });
        }
        let base = baseline_latency[pos];
        if base > 0.0 && lat > policy.latency_ratio * base {
            return SafetyVerdict::Violation(SafetyViolation {
                component: order[pos].clone(),
                signal: SafetySignal::Latency,
                observed: lat,
                threshold: policy.latency_ratio * base,
            });
        }
        if util > policy.utilization {
            return SafetyVerdict::Violation(SafetyViolation {
                component: order[pos].clone(),
                signal: SafetySignal::Utilization,
                observed: util,
                threshold: policy.utilization,
            });
        }
    }
    SafetyVerdict::Ok
}

/// One completed escalation step.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct RiskTraceStep {
    pub magnitude: f64,
    /// Worst offered-load ratio across the target's outgoing edges during
    /// this step's window, relative to the unperturbed baseline.
    pub amplification: f64,
    /// Worst risk index among the target's direct dependencies, computed
    /// with the ratios measured so far.
    pub lri: f64,
}

/// Record of a whole probe: every completed step plus why it stopped.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct RiskTrace {
    pub strategy: Strategy,
    pub target: ComponentId,
    pub steps: Vec<RiskTraceStep>,
    pub termination: TerminationReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violation: Option<SafetyViolation>,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CampaignSettings {
    /// Simulated ticks the planner may spend on probes.
    pub budget_ticks: u64,
    pub strategies: Vec<Strategy>,
    /// Probe-local risk ceiling (see [`escalation_decision`]).
    pub max_risk_threshold: f64,
    /// Window for the authoritative post-probe amplification measurement.
    pub amp_window_s: u64,
    pub safety: SafetyPolicy,
}

impl Default for CampaignSettings {
    fn default() -> Self {
        CampaignSettings {
            budget_ticks: 3_000,
            strategies: vec![
                Strategy::CacheBypass,
                Strategy::LatencyInjection,
                Strategy::ResourceConstraint,
                Strategy::BreakerBypass,
                Strategy::LbManipulation,
                Strategy::DependencyIsolation,
            ],
            max_risk_threshold: HIGH_RISK_LRI,
            amp_window_s: 300,
            safety: SafetyPolicy::default(),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct ArmStats {
    pub successes: u32,
    pub failures: u32,
}

/// Per-(strategy, component-kind) success history for the planner. A probe
/// counts as a success when it revealed a component whose risk class turned
/// out worse than declared.
#[derive(Clone, PartialEq, Debug, Default, Serialize, Deserialize)]
pub struct StrategyStats {
    arms: BTreeMap<(Strategy, ComponentKind), ArmStats>,
}

impl StrategyStats {
    pub fn new() -> Self {
        Self::default()
    }

    /// Beta posterior parameters with a uniform prior.
    pub fn beta_params(&self, strategy: Strategy, kind: ComponentKind) -> (f64, f64) {
        let arm = self.arms.get(&(strategy, kind)).copied().unwrap_or_default();
        (1.0 + arm.successes as f64, 1.0 + arm.failures as f64)
    }

    pub fn record(&mut self, strategy: Strategy, kind: ComponentKind, success: bool) {
        let arm = self.arms.entry((strategy, kind)).or_default();
        if success {
            arm.successes += 1;
        } else {
            arm.failures += 1;
        }
    }

    pub fn arm(&self, strategy: Strategy, kind: ComponentKind) -> ArmStats {
        self.arms.get(&(strategy, kind)).copied().unwrap_or_default()
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct PlannedStep {
    pub strategy: Strategy,
    pub target: ComponentId,
    pub schedule: Vec<f64>,
    pub cost_ticks: u64,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct CampaignPlan {
    pub steps: Vec<PlannedStep>,
    pub budget_ticks: u64,
    pub spent_ticks: u64,
}

fn eligible_pairs(
    topo: &ValidatedTopology,
    strategies: &[Strategy],
) -> Vec<(Strategy, ComponentId)> {
    let mut pairs = Vec::new();
    for &strategy in strategies {
        for i in 0..topo.len() {
            let spec = topo.component_at(i);
            let ok = match strategy {
                Strategy::CacheBypass => spec.kind == ComponentKind::Cache,
                Strategy::BreakerBypass => spec.kind == ComponentKind::CircuitBreaker,
                Strategy::LbManipulation => match spec.optimization_params {
                    Some(crate::topology::OptimizationParams::LoadBalancer { replicas }) => {
                        replicas >= 2
                    }
                    _ => false,
                },
                Strategy::LatencyInjection | Strategy::ResourceConstraint => {
                    spec.kind != ComponentKind::Entry
                }
                Strategy::DependencyIsolation => !topo.incoming_edges(i).is_empty(),
            };
            if ok {
                pairs.push((strategy, spec.id.clone()));
            }
        }
    }
    pairs.sort();
    pairs.dedup();
    pairs
}

/// Pick an ordered probe list under a tick budget. Each eligible
/// (strategy, target) pair is considered at most once; every round, one
/// posterior sample per pair is drawn from its (strategy, kind) arm and the
/// best-sampled pair that still fits the budget is scheduled.
pub fn plan_campaign(
    topo: &ValidatedTopology,
    stats: &StrategyStats,
    settings: &CampaignSettings,
    seed: u64,
) -> Result<CampaignPlan, HydraError> {
    let pairs = eligible_pairs(topo, &settings.strategies);
    if pairs.is_empty() {
        return Err(HydraError::NoEligibleTargets);
    }
    let mut rng = seedstream::stream(seed, "hydra.plan", 0);
    let mut remaining: Vec<(Strategy, ComponentId)> = pairs;
    let mut steps = Vec::new();
    let mut spent = 0u64;

    loop {
        let mut best: Option<(f64, usize)> = None;
        for (i, (strategy, target)) in remaining.iter().enumerate() {
            let kind = topo
                .component(target)
                .expect("eligible target exists")
                .kind;
            let (a, b) = stats.beta_params(*strategy, kind);
            let theta = Beta::new(a, b).expect("valid posterior").sample(&mut rng);
            if best.is_none_or(|(t, _)| theta > t) {
                best = Some((theta, i));
            }
        }
        let Some((_, mut pick)) = best else { break };

        // The sampled winner may not fit; fall back to anything that does.
        let fits = |p: &(Strategy, ComponentId)| {
            let cost = strategy_schedule(p.0).len() as u64 * MEASUREMENT_WINDOW_TICKS;
            spent + cost <= settings.budget_ticks
        };
        if !fits(&remaining[pick]) {
            match remaining.iter().position(fits) {
                Some(i) => pick = i,
                None => break,
            }
        }
        let (strategy, target) = remaining.remove(pick);
        let schedule = strategy_schedule(strategy);
        let cost = schedule.len() as u64 * MEASUREMENT_WINDOW_TICKS;
        spent += cost;
        steps.push(PlannedStep {
            strategy,
            target,
            schedule,
            cost_ticks: cost,
        });
        if remaining.is_empty() {
            break;
        }
    }

    Ok(CampaignPlan {
        steps,
        budget_ticks: settings.budget_ticks,
        spent_ticks: spent,
    })
}

/// Shared execution state for a sequence of probes: one live simulation, its
/// unperturbed baseline statistics, and the amplification map accumulated so
/// far (declared factors until measurements replace them).
pub struct CampaignContext {
    sim: Simulation,
    order: Vec<ComponentId>,
    baseline_offered: Vec<f64>,
    baseline_latency: Vec<f64>,
    map: AmplificationMap,
    settings: CampaignSettings,
}

impl CampaignContext {
    /// Warm up the shared simulation for one measurement window and record
    /// per-component baseline means.
    pub fn new(
        topo: &ValidatedTopology,
        traffic: &TrafficProfile,
        settings: CampaignSettings,
        seed: u64,
    ) -> Result<Self, HydraError> {
        let mut sim = Simulation::new(topo, traffic, seed)?;
        let order = sim.component_order();
        let n = order.len();
        let mut offered = vec![0.0; n];
        let mut latency = vec![0.0; n];
        for _ in 0..MEASUREMENT_WINDOW_TICKS {
            let row = sim.step();
            for (pos, m) in row.iter().enumerate() {
                offered[pos] += m.offered_rps;
                latency[pos] += m.latency_ms;
            }
        }
        for pos in 0..n {
            offered[pos] /= MEASUREMENT_WINDOW_TICKS as f64;
            latency[pos] /= MEASUREMENT_WINDOW_TICKS as f64;
        }
        let map = AmplificationMap::from_declared(topo);
        Ok(CampaignContext {
            sim,
            order,
            baseline_offered: offered,
            baseline_latency: latency,
            map,
            settings,
        })
    }

    pub fn measured_map(&self) -> &AmplificationMap {
        &self.map
    }

    pub fn settings(&self) -> &CampaignSettings {
        &self.settings
    }

    fn position(&self, id: &ComponentId) -> usize {
        self.order.iter().position(|c| c == id).expect("validated id")
    }

    fn action_for(
        &self,
        strategy: Strategy,
        target: &ComponentId,
        magnitude: f64,
    ) -> Result<PerturbationAction, HydraError> {
        if strategy != Strategy::DependencyIsolation {
            return Ok(PerturbationAction::new(strategy, target.clone(), magnitude));
        }
        // Isolate the heaviest incoming edge; ties go to the first upstream
        // id in lexicographic order.
        let topo = self.sim.topology();
        let idx = topo.component_index(target)?;
        let mut best: Option<(f64, ComponentId)> = None;
        for &e in topo.incoming_edges(idx) {
            let edge = topo.edge_at(e);
            let better = match &best {
                None => true,
                Some((f, from)) => {
                    edge.load_fraction > *f
                        || (edge.load_fraction == *f && edge.from < *from)
                }
            };
            if better {
                best = Some((edge.load_fraction, edge.from.clone()));
            }
        }
        let Some((_, from)) = best else {
            return Err(HydraError::IneligibleTarget {
                strategy,
                target: target.clone(),
                reason: "no incoming edges to isolate".into(),
            });
        };
        Ok(PerturbationAction::isolation(target.clone(), from))
    }

    /// Run one full escalating probe with the strategy's default schedule.
    pub fn execute_strategy(
        &mut self,
        strategy: Strategy,
        target: &ComponentId,
    ) -> Result<RiskTrace, HydraError> {
        let schedule = strategy_schedule(strategy);
        self.execute_with_schedule(strategy, target, &schedule)
    }

    pub fn execute_cache_bypass(&mut self, target: &ComponentId) -> Result<RiskTrace, HydraError> {
        self.execute_strategy(Strategy::CacheBypass, target)
    }

    /// Escalate through `schedule`, watching safety every tick and risk
    /// after every step. Normal operation is restored on every exit path;
    /// a safety rollback is reported as a terminated trace, not an error.
    pub fn execute_with_schedule(
        &mut self,
        strategy: Strategy,
        target: &ComponentId,
        schedule: &[f64],
    ) -> Result<RiskTrace, HydraError> {
        if schedule.is_empty() {
            return Err(HydraError::EmptySchedule);
        }
        let topo = self.sim.topology().clone();
        let target_idx = topo.component_index(target)?;
        let out_edges: Vec<usize> = topo.outgoing_edges(target_idx).to_vec();

        let mut steps: Vec<RiskTraceStep> = Vec::new();
        let mut lri_history: Vec<f64> = Vec::new();
        let trace = |steps: Vec<RiskTraceStep>,
                     termination: TerminationReason,
                     violation: Option<SafetyViolation>| RiskTrace {
            strategy,
            target: target.clone(),
            steps,
            termination,
            violation,
        };

        for &magnitude in schedule {
            let action = self.action_for(strategy, target, magnitude)?;
            self.sim.apply_action(action)?;

            let n = self.order.len();
            let mut recent: VecDeque<Vec<ComponentTick>> = VecDeque::new();
            let mut offered_sum = vec![0.0; n];
            for _ in 0..MEASUREMENT_WINDOW_TICKS {
                let row = self.sim.step();
                for (pos, m) in row.iter().enumerate() {
                    offered_sum[pos] += m.offered_rps;
                }
                recent.push_back(row);
                if recent.len() > self.settings.safety.window_ticks {
                    recent.pop_front();
                }
                if let SafetyVerdict::Violation(v) = safety_check(
                    &self.order,
                    &self.baseline_latency,
                    &recent,
                    &self.settings.safety,
                ) {
                    self.sim.clear_actions();
                    return Ok(trace(steps, TerminationReason::SafetyRollback, Some(v)));
                }
            }

            // Ratio of window-mean offered load to the unperturbed baseline,
            // per outgoing edge; the worst edge defines this step.
            let mut alpha: f64 = 1.0;
            let mut lri: f64 = 0.0;
            for &e in &out_edges {
                let to = &topo.edge_at(e).to;
                let pos = self.position(to);
                let base = self.baseline_offered[pos];
                if base < ZERO_BASELINE_EPS {
                    continue;
                }
                let ratio = (offered_sum[pos] / MEASUREMENT_WINDOW_TICKS as f64) / base;
                alpha = alpha.max(ratio);
                self.map.insert_measured(
                    target.clone(),
                    to.clone(),
                    ratio,
                    MEASUREMENT_WINDOW_TICKS,
                );
                lri = lri.max(compute_lri(&topo, &self.map, to)?.lri);
            }
            if out_edges.is_empty() {
                lri = compute_lri(&topo, &self.map, target)?.lri;
            }

            steps.push(RiskTraceStep {
                magnitude,
                amplification: alpha,
                lri,
            });
            lri_history.push(lri);
            if let Some(reason) = escalation_decision(&lri_history, self.settings.max_risk_threshold)
            {
                self.sim.clear_actions();
                return Ok(trace(steps, reason, None));
            }
        }

        self.sim.clear_actions();
        Ok(trace(steps, TerminationReason::MaxRateReached, None))
    }
}

/// A component whose measured risk classification is worse than declared.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct DiscoveredRisk {
    pub component: ComponentId,
    pub declared_lri: f64,
    pub declared_level: RiskLevel,
    pub measured_lri: f64,
    pub measured_level: RiskLevel,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct CampaignReport {
    pub plan: CampaignPlan,
    pub traces: Vec<RiskTrace>,
    /// Risk assessment with declared amplification only.
    pub declared_assessment: RiskReport,
    /// Risk assessment after measured factors replaced declared ones.
    pub measured_assessment: RiskReport,
    /// Everything whose classification worsened, worst measured risk first.
    pub discovered: Vec<DiscoveredRisk>,
    pub amplification: AmplificationMap,
}

/// Plan and execute a probing campaign on one shared simulation, updating
/// `stats` with one success/failure observation per executed probe.
pub fn run_campaign(
    topo: &ValidatedTopology,
    traffic: &TrafficProfile,
    settings: &CampaignSettings,
    stats: &mut StrategyStats,
    seed: u64,
) -> Result<CampaignReport, HydraError> {
    let declared_map = AmplificationMap::from_declared(topo);
    let declared_assessment = assess_system_risk(topo, &declared_map, None)?;
    let declared_level = |id: &ComponentId| {
        declared_assessment
            .lookup(id)
            .map(|e| e.breakdown.level)
            .expect("every component is assessed")
    };

    let plan = plan_campaign(topo, stats, settings, seed)?;
    let mut ctx = CampaignContext::new(topo, traffic, settings.clone(), seed)?;
    let mut traces = Vec::new();
    let mut worsened: BTreeSet<ComponentId> = BTreeSet::new();

    for (i, step) in plan.steps.iter().enumerate() {
        let trace = ctx.execute_with_schedule(step.strategy, &step.target, &step.schedule)?;
        traces.push(trace);

        // For bypassable layers the probe is followed by the authoritative
        // full-disable measurement on clean clones of the scenario.
        let kind = topo.component(&step.target)?.kind;
        if matches!(
            kind,
            ComponentKind::Cache | ComponentKind::CircuitBreaker | ComponentKind::LoadBalancer
        ) {
            let measure_seed = seedstream::child_seed(seed, "hydra.measure", i as u64);
            match measure_amplification(
                topo,
                traffic,
                &step.target,
                settings.amp_window_s,
                measure_seed,
            ) {
                Ok(measured) => {
                    for m in &measured {
                        ctx.map
                            .insert_measured(m.from.clone(), m.to.clone(), m.alpha, m.window_s);
                    }
                }
                // A fully-absorbing layer leaves nothing downstream to
                // compare against; keep the declared factor.
                Err(RiskError::ZeroBaseline { .. }) => {}
                Err(e) => return Err(e.into()),
            }
        }

        let assessment = assess_system_risk(topo, &ctx.map, None)?;
        let mut revealed_new = false;
        for entry in &assessment.entries {
            let id = &entry.breakdown.component;
            if entry.breakdown.level > declared_level(id) && worsened.insert(id.clone()) {
                revealed_new = true;
            }
        }
        stats.record(step.strategy, kind, revealed_new);
    }

    let measured_assessment = assess_system_risk(topo, &ctx.map, None)?;
    let mut discovered: Vec<DiscoveredRisk> = worsened
        .into_iter()
        .map(|id| {
            let declared = declared_assessment.lookup(&id).expect("assessed");
            let measured = measured_assessment.lookup(&id).expect("assessed");
            DiscoveredRisk {
                component: id,
                declared_lri: declared.breakdown.lri,
                declared_level: declared.breakdown.level,
                measured_lri: measured.breakdown.lri,
                measured_level: measured.breakdown.level,
            }
        })
        .collect();
    discovered.sort_by(|a, b| {
        b.measured_lri
            .partial_cmp(&a.measured_lri)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.component.cmp(&b.component))
    });

    Ok(CampaignReport {
        plan,
        traces,
        declared_assessment,
        measured_assessment,
        discovered,
        amplification: ctx.map,
    })
}
