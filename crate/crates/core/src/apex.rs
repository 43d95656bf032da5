//! Risk-bounded configuration search.
//!
//! The optimizer tunes declared layer parameters (cache sizes, pool sizes,
//! queue depths, replica counts, breaker thresholds) against three maximized
//! objectives — throughput, negated latency, and resource efficiency — while
//! treating risk as a hard constraint: a candidate is feasible only when its
//! worst measured risk index stays at or below `tau_risk` and every component
//! keeps the configured headroom. Search is elitist NSGA-II with simulated
//! binary crossover and polynomial mutation; infeasible candidates are
//! dominated by feasible ones and compete among themselves on violation
//! magnitude, so the population is pulled toward the feasible region even
//! when it starts fully outside it.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

use crate::riskcore::{
    assess_system_risk, measure_amplification, AmplificationMap, RiskError,
};
use crate::seedstream;
use crate::simengine::{run_simulation, SimError, TrafficProfile};
use crate::topology::{
    validate_topology, ComponentId, ComponentKind, OptimizationParams, TopologyError,
    ValidatedTopology,
};

#[derive(Debug, Error)]
pub enum ApexError {
    #[error("invalid variable: {0}")]
    InvalidVariable(String),
    #[error("invalid optimizer settings: {0}")]
    InvalidSettings(String),
    #[error("no feasible configuration found under the risk constraint")]
    NoFeasibleSolution,
    #[error("baseline shares must sum to 1, got {0}")]
    InvalidShares(f64),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// Which declared parameter a decision variable steers.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TunableParam {
    CacheSizeUnits,
    PoolSize,
    QueueDepthUnits,
    LbReplicas,
    BreakerTripThreshold,
}

impl TunableParam {
    pub fn is_integer(self) -> bool {
        matches!(self, TunableParam::PoolSize | TunableParam::LbReplicas)
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableSpec {
    pub component: ComponentId,
    pub param: TunableParam,
    pub min: f64,
    pub max: f64,
}

impl VariableSpec {
    pub fn name(&self) -> String {
        let p = match self.param {
            TunableParam::CacheSizeUnits => "cache_size_units",
            TunableParam::PoolSize => "pool_size",
            TunableParam::QueueDepthUnits => "queue_depth_units",
            TunableParam::LbReplicas => "lb_replicas",
            TunableParam::BreakerTripThreshold => "breaker_trip_threshold",
        };
        format!("{}.{}", self.component, p)
    }
}

/// Check every variable against the topology: the component must exist, own
/// the layer the parameter belongs to, and the bounds must be ordered and
/// inside the parameter's legal range.
pub fn validate_variables(
    topo: &ValidatedTopology,
    variables: &[VariableSpec],
) -> Result<(), ApexError> {
    if variables.is_empty() {
        return Err(ApexError::InvalidVariable(
            "at least one decision variable is required".into(),
        ));
    }
    for v in variables {
        let spec = topo
            .component(&v.component)
            .map_err(|_| ApexError::InvalidVariable(format!("unknown component `{}`", v.component)))?;
        let compatible = matches!(
            (&v.param, &spec.optimization_params),
            (TunableParam::CacheSizeUnits, Some(OptimizationParams::Cache { .. }))
                | (TunableParam::PoolSize, Some(OptimizationParams::Pool { .. }))
                | (TunableParam::QueueDepthUnits, Some(OptimizationParams::Queue { .. }))
                | (TunableParam::LbReplicas, Some(OptimizationParams::LoadBalancer { .. }))
                | (
                    TunableParam::BreakerTripThreshold,
                    Some(OptimizationParams::CircuitBreaker { .. })
                )
        );
        if !compatible {
            return Err(ApexError::InvalidVariable(format!(
                "`{}` does not apply to component `{}`",
                v.name(),
                v.component
            )));
        }
        if !(v.min.is_finite() && v.max.is_finite() && v.min < v.max) {
            return Err(ApexError::InvalidVariable(format!(
                "`{}` needs min < max, got [{}, {}]",
                v.name(),
                v.min,
                v.max
            )));
        }
        let legal = match v.param {
            TunableParam::CacheSizeUnits | TunableParam::QueueDepthUnits => v.min > 0.0,
            TunableParam::PoolSize | TunableParam::LbReplicas => v.min >= 1.0,
            TunableParam::BreakerTripThreshold => v.min > 0.0 && v.max < 1.0,
        };
        if !legal {
            return Err(ApexError::InvalidVariable(format!(
                "`{}` bounds [{}, {}] leave the parameter's legal range",
                v.name(),
                v.min,
                v.max
            )));
        }
    }
    Ok(())
}

/// Clamp to bounds and round integer-valued parameters: the values that are
/// actually applied, deduplicated on, and reported.
pub fn canonical_values(variables: &[VariableSpec], values: &[f64]) -> Vec<f64> {
    variables
        .iter()
        .zip(values)
        .map(|(v, &x)| {
            let x = x.clamp(v.min, v.max);
            if v.param.is_integer() {
                x.round()
            } else {
                x
            }
        })
        .collect()
}

/// Read the configuration currently declared in the topology for each
/// variable (the starting point for rollouts and allocation baselines).
pub fn current_values(topo: &ValidatedTopology, variables: &[VariableSpec]) -> Vec<f64> {
    variables
        .iter()
        .map(|v| {
            let comp = topo
                .graph()
                .components
                .iter()
                .find(|c| c.id == v.component)
                .expect("validated against topology");
            match (v.param, comp.optimization_params.as_ref()) {
                (TunableParam::CacheSizeUnits, Some(OptimizationParams::Cache { size_units, .. })) => {
                    *size_units
                }
                (TunableParam::PoolSize, Some(OptimizationParams::Pool { size, .. })) => {
                    *size as f64
                }
                (TunableParam::QueueDepthUnits, Some(OptimizationParams::Queue { depth_units })) => {
                    *depth_units
                }
                (TunableParam::LbReplicas, Some(OptimizationParams::LoadBalancer { replicas })) => {
                    *replicas as f64
                }
                (
                    TunableParam::BreakerTripThreshold,
                    Some(OptimizationParams::CircuitBreaker { trip_threshold, .. }),
                ) => *trip_threshold,
                _ => unreachable!("variables validated against topology"),
            }
        })
        .collect()
}

/// Produce a topology with the configuration applied to its declared
/// parameters. The patched graph goes through full validation again.
pub fn apply_configuration(
    topo: &ValidatedTopology,
    variables: &[VariableSpec],
    values: &[f64],
) -> Result<ValidatedTopology, ApexError> {
    if variables.len() != values.len() {
        return Err(ApexError::InvalidVariable(format!(
            "{} variables but {} values",
            variables.len(),
            values.len()
        )));
    }
    let canonical = canonical_values(variables, values);
    let mut graph = topo.graph().clone();
    for (v, &x) in variables.iter().zip(&canonical) {
        let comp = graph
            .components
            .iter_mut()
            .find(|c| c.id == v.component)
            .expect("validated against topology");
        match (v.param, comp.optimization_params.as_mut()) {
            (TunableParam::CacheSizeUnits, Some(OptimizationParams::Cache { size_units, .. })) => {
                *size_units = x;
            }
            (TunableParam::PoolSize, Some(OptimizationParams::Pool { size, .. })) => {
                *size = x as u32;
            }
            (TunableParam::QueueDepthUnits, Some(OptimizationParams::Queue { depth_units })) => {
                *depth_units = x;
            }
            (TunableParam::LbReplicas, Some(OptimizationParams::LoadBalancer { replicas })) => {
                *replicas = x as u32;
            }
            (
                TunableParam::BreakerTripThreshold,
                Some(OptimizationParams::CircuitBreaker { trip_threshold, .. }),
            ) => {
                *trip_threshold = x;
            }
            _ => unreachable!("variables validated against topology"),
        }
    }
    Ok(validate_topology(graph)?)
}

/// Maximized objective triple.
#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct ObjectiveVector {
    /// Mean goodput: entry load that was not lost anywhere downstream.
    pub throughput_rps: f64,
    /// Negated load-weighted mean latency, so all objectives maximize.
    pub neg_latency_ms: f64,
    /// Goodput per unit of provisioned capacity.
    pub resource_efficiency: f64,
}

impl ObjectiveVector {
    pub fn as_array(&self) -> [f64; 3] {
        [
            self.throughput_rps,
            self.neg_latency_ms,
            self.resource_efficiency,
        ]
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct EvaluatedCandidate {
    pub values: Vec<f64>,
    pub objectives: ObjectiveVector,
    /// Worst per-component risk index under measured amplification.
    pub lri: f64,
    /// Worst per-component mean utilization.
    pub max_utilization: f64,
    pub feasible: bool,
    /// Normalized total constraint overshoot (0 when feasible).
    pub constraint_violation: f64,
    /// Goodput as a fraction of offered entry load.
    pub performance: f64,
    /// 1 minus the coefficient of variation of goodput.
    pub stability: f64,
    pub mean_latency_ms: f64,
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitnessWeights {
    pub performance: f64,
    pub risk: f64,
    pub stability: f64,
    pub epsilon: f64,
}

impl Default for FitnessWeights {
    fn default() -> Self {
        FitnessWeights {
            performance: 0.5,
            risk: 0.3,
            stability: 0.2,
            epsilon: 1e-6,
        }
    }
}

/// Scalar summary used for reporting and for the monitor's pick among the
/// front: rewards performance and stability, discounts by risk.
pub fn fitness(performance: f64, lri: f64, stability: f64, w: &FitnessWeights) -> f64 {
    w.performance * performance + w.risk / (lri + w.epsilon) + w.stability * stability
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ApexConfig {
    /// Population size; must be even and within [100, 500].
    pub population: usize,
    pub generations: usize,
    /// Feasibility ceiling on the worst risk index.
    pub tau_risk: f64,
    /// Required utilization headroom: max mean utilization <= 1 - reserve.
    pub reserve_fraction: f64,
    /// Simulated seconds per candidate evaluation.
    pub eval_duration_s: u64,
    /// Window for per-candidate amplification measurement.
    pub amp_window_s: u64,
    pub crossover_prob: f64,
    pub crossover_eta: f64,
    pub mutation_eta: f64,
    /// Per-variable mutation probability; `None` means 1/n.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutation_prob: Option<f64>,
    #[serde(default)]
    pub weights: FitnessWeights,
}

impl Default for ApexConfig {
    fn default() -> Self {
        ApexConfig {
            population: 100,
            generations: 20,
            tau_risk: 10.0,
            reserve_fraction: 0.1,
            eval_duration_s: 120,
            amp_window_s: 60,
            crossover_prob: 0.9,
            crossover_eta: 15.0,
            mutation_eta: 20.0,
            mutation_prob: None,
            weights: FitnessWeights::default(),
        }
    }
}

/// Simulate one configuration and score it. Bypassable layers get their
/// amplification measured (not trusted from declarations) before risk is
/// assessed; capacity headroom uses each component's mean utilization.
pub fn evaluate(
    topo: &ValidatedTopology,
    traffic: &TrafficProfile,
    variables: &[VariableSpec],
    values: &[f64],
    cfg: &ApexConfig,
    eval_seed: u64,
) -> Result<EvaluatedCandidate, ApexError> {
    let patched = apply_configuration(topo, variables, values)?;
    let trace = run_simulation(&patched, traffic, cfg.eval_duration_s, eval_seed, &[])?;

    let n = trace.component_ids.len();
    let entry_pos: Vec<usize> = trace
        .component_ids
        .iter()
        .enumerate()
        .filter(|(_, id)| {
            let idx = patched.component_index(id).expect("trace ids are valid");
            patched.is_entry(idx)
        })
        .map(|(pos, _)| pos)
        .collect();

    let ticks = trace.ticks.len().max(1) as f64;
    let mut goodput_series = Vec::with_capacity(trace.ticks.len());
    let mut offered_total = 0.0;
    let mut latency_weighted = 0.0;
    let mut util_sum = vec![0.0; n];
    for row in &trace.ticks {
        let offered_in: f64 = entry_pos.iter().map(|&p| row[p].offered_rps).sum();
        let errors: f64 = row.iter().map(|m| m.error_rps).sum();
        goodput_series.push((offered_in - errors).max(0.0));
        offered_total += offered_in;

        let load: f64 = row.iter().map(|m| m.offered_rps).sum();
        if load > 0.0 {
            latency_weighted +=
                row.iter().map(|m| m.offered_rps * m.latency_ms).sum::<f64>() / load;
        }
        for (pos, m) in row.iter().enumerate() {
            util_sum[pos] += m.utilization;
        }
    }
    let throughput = goodput_series.iter().sum::<f64>() / ticks;
    let offered_mean = offered_total / ticks;
    let performance = if offered_mean > 0.0 {
        (throughput / offered_mean).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let mean_latency = latency_weighted / ticks;

    let variance = goodput_series
        .iter()
        .map(|g| (g - throughput) * (g - throughput))
        .sum::<f64>()
        / ticks;
    let stability = if throughput > 0.0 {
        (1.0 - variance.sqrt() / throughput).clamp(0.0, 1.0)
    } else {
        0.0
    };

    // Provisioned capacity: per-component rate limits, pools included.
    let provisioned: f64 = (0..patched.len())
        .map(|i| {
            let c = patched.component_at(i);
            match c.optimization_params {
                Some(OptimizationParams::Pool {
                    size,
                    per_connection_rps,
                }) => c.capacity_rps.min(size as f64 * per_connection_rps),
                _ => c.capacity_rps,
            }
        })
        .sum();
    let efficiency = if provisioned > 0.0 {
        (throughput / provisioned).clamp(0.0, 1.0)
    } else {
        0.0
    };

    let max_utilization = util_sum
        .iter()
        .map(|s| s / ticks)
        .fold(0.0f64, f64::max);

    // Risk under measured amplification.
    let mut map = AmplificationMap::from_declared(&patched);
    for i in 0..patched.len() {
        let kind = patched.component_at(i).kind;
        if matches!(
            kind,
            ComponentKind::Cache | ComponentKind::CircuitBreaker | ComponentKind::LoadBalancer
        ) {
            let id = patched.component_at(i).id.clone();
            match measure_amplification(&patched, traffic, &id, cfg.amp_window_s, eval_seed) {
                Ok(measured) => {
                    for m in &measured {
                        map.insert_measured(m.from.clone(), m.to.clone(), m.alpha, m.window_s);
                    }
                }
                Err(RiskError::ZeroBaseline { .. }) => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
    let report = assess_system_risk(&patched, &map, None)?;
    let lri = report
        .entries
        .first()
        .map(|e| e.breakdown.lri)
        .unwrap_or(0.0);

    let headroom = 1.0 - cfg.reserve_fraction;
    let mut violation = 0.0;
    if lri > cfg.tau_risk {
        violation += (lri - cfg.tau_risk) / cfg.tau_risk;
    }
    if max_utilization > headroom {
        violation += (max_utilization - headroom) / headroom;
    }

    Ok(EvaluatedCandidate {
        values: canonical_values(variables, values),
        objectives: ObjectiveVector {
            throughput_rps: throughput,
            neg_latency_ms: -mean_latency,
            resource_efficiency: efficiency,
        },
        lri,
        max_utilization,
        feasible: violation == 0.0,
        constraint_violation: violation,
        performance,
        stability,
        mean_latency_ms: mean_latency,
    })
}

/// Constraint-aware domination: feasible beats infeasible, infeasible
/// candidates compete on violation, feasible ones on the objectives.
pub fn dominates(a: &EvaluatedCandidate, b: &EvaluatedCandidate) -> bool {
    match (a.feasible, b.feasible) {
        (true, false) => true,
        (false, true) => false,
        (false, false) => a.constraint_violation < b.constraint_violation,
        (true, true) => {
            let ao = a.objectives.as_array();
            let bo = b.objectives.as_array();
            let mut strictly = false;
            for (x, y) in ao.iter().zip(&bo) {
                if x < y {
                    return false;
                }
                if x > y {
                    strictly = true;
                }
            }
            strictly
        }
    }
}

/// Indices grouped into non-domination fronts, best first.
pub fn non_dominated_sort(pop: &[EvaluatedCandidate]) -> Vec<Vec<usize>> {
    let n = pop.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut counts = vec![0usize; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if dominates(&pop[i], &pop[j]) {
                dominated_by[i].push(j);
            } else if dominates(&pop[j], &pop[i]) {
                counts[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| counts[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominated_by[i] {
                counts[j] -= 1;
                if counts[j] == 0 {
                    next.push(j);
                }
            }
        }
        fronts.push(std::mem::take(&mut current));
        current = next;
    }
    fronts
}

/// Crowding distance within one front (indices into `pop`). Boundary
/// candidates get infinity so they always survive truncation.
pub fn crowding_distance(pop: &[EvaluatedCandidate], front: &[usize]) -> Vec<f64> {
    let m = front.len();
    let mut dist = vec![0.0f64; m];
    if m <= 2 {
        return vec![f64::INFINITY; m];
    }
    for k in 0..3 {
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            pop[front[a]].objectives.as_array()[k]
                .partial_cmp(&pop[front[b]].objectives.as_array()[k])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let lo = pop[front[order[0]]].objectives.as_array()[k];
        let hi = pop[front[order[m - 1]]].objectives.as_array()[k];
        dist[order[0]] = f64::INFINITY;
        dist[order[m - 1]] = f64::INFINITY;
        if hi - lo <= 0.0 {
            continue;
        }
        for w in 1..m - 1 {
            let prev = pop[front[order[w - 1]]].objectives.as_array()[k];
            let next = pop[front[order[w + 1]]].objectives.as_array()[k];
            dist[order[w]] += (next - prev) / (hi - lo);
        }
    }
    dist
}

/// Bounded simulated binary crossover (per-variable, spread index eta).
fn sbx_crossover(
    p1: &[f64],
    p2: &[f64],
    variables: &[VariableSpec],
    eta: f64,
    prob: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<f64>) {
    let mut c1 = p1.to_vec();
    let mut c2 = p2.to_vec();
    if rng.random::<f64>() > prob {
        return (c1, c2);
    }
    for i in 0..variables.len() {
        if rng.random::<f64>() > 0.5 {
            continue;
        }
        let (lo, hi) = (variables[i].min, variables[i].max);
        let (y1, y2) = if p1[i] <= p2[i] {
            (p1[i], p2[i])
        } else {
            (p2[i], p1[i])
        };
        if y2 - y1 < 1e-14 {
            continue;
        }
        let u: f64 = rng.random();
        let spread = |beta: f64| -> f64 {
            let alpha = 2.0 - beta.powf(-(eta + 1.0));
            if u <= 1.0 / alpha {
                (u * alpha).powf(1.0 / (eta + 1.0))
            } else {
                (1.0 / (2.0 - u * alpha)).powf(1.0 / (eta + 1.0))
            }
        };
        let beta_lo = 1.0 + 2.0 * (y1 - lo) / (y2 - y1);
        let beta_hi = 1.0 + 2.0 * (hi - y2) / (y2 - y1);
        let bq1 = spread(beta_lo);
        let bq2 = spread(beta_hi);
        let mut a = 0.5 * ((y1 + y2) - bq1 * (y2 - y1));
        let mut b = 0.5 * ((y1 + y2) + bq2 * (y2 - y1));
        a = a.clamp(lo, hi);
        b = b.clamp(lo, hi);
        if rng.random::<f64>() < 0.5 {
            std::mem::swap(&mut a, &mut b);
        }
        c1[i] = a;
        c2[i] = b;
    }
    (c1, c2)
}

/// Bounded polynomial mutation (distribution index eta).
fn polynomial_mutation(
    values: &mut [f64],
    variables: &[VariableSpec],
    eta: f64,
    prob: f64,
    rng: &mut ChaCha8Rng,
) {
    for i in 0..variables.len() {
        if rng.random::<f64>() > prob {
            continue;
        }
        let (lo, hi) = (variables[i].min, variables[i].max);
        let span = hi - lo;
        if span <= 0.0 {
            continue;
        }
        let y = values[i];
        let d1 = (y - lo) / span;
        let d2 = (hi - y) / span;
        let u: f64 = rng.random();
        let dq = if u < 0.5 {
            (2.0 * u + (1.0 - 2.0 * u) * (1.0 - d1).powf(eta + 1.0)).powf(1.0 / (eta + 1.0)) - 1.0
        } else {
            1.0 - (2.0 * (1.0 - u) + 2.0 * (u - 0.5) * (1.0 - d2).powf(eta + 1.0))
                .powf(1.0 / (eta + 1.0))
        };
        values[i] = (y + dq * span).clamp(lo, hi);
    }
}

fn tournament<'a>(
    pop: &'a [EvaluatedCandidate],
    rank: &[usize],
    crowding: &[f64],
    rng: &mut ChaCha8Rng,
) -> &'a EvaluatedCandidate {
    let a = rng.random_range(0..pop.len());
    let b = rng.random_range(0..pop.len());
    let pick = if rank[a] != rank[b] {
        if rank[a] < rank[b] {
            a
        } else {
            b
        }
    } else if crowding[a] >= crowding[b] {
        a
    } else {
        b
    };
    &pop[pick]
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct FrontMember {
    pub values: Vec<f64>,
    pub objectives: ObjectiveVector,
    pub lri: f64,
    pub max_utilization: f64,
    pub performance: f64,
    pub stability: f64,
    pub mean_latency_ms: f64,
    pub fitness: f64,
}

/// Feasible non-dominated configurations, throughput-best first.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ParetoFront {
    /// Column names, `component.parameter`, aligned with member values.
    pub variables: Vec<String>,
    pub members: Vec<FrontMember>,
    pub evaluations: u64,
    pub generations: usize,
}

impl ParetoFront {
    pub fn best_by_fitness(&self) -> Option<&FrontMember> {
        self.members.iter().max_by(|a, b| {
            a.fitness
                .partial_cmp(&b.fitness)
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for v in &self.variables {
            let _ = write!(out, "{v},");
        }
        out.push_str(
            "throughput_rps,mean_latency_ms,resource_efficiency,lri,max_utilization,performance,stability,fitness\n",
        );
        for m in &self.members {
            for x in &m.values {
                let _ = write!(out, "{x},");
            }
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                m.objectives.throughput_rps,
                m.mean_latency_ms,
                m.objectives.resource_efficiency,
                m.lri,
                m.max_utilization,
                m.performance,
                m.stability,
                m.fitness
            );
        }
        out
    }
}

fn evaluate_batch(
    topo: &ValidatedTopology,
    traffic: &TrafficProfile,
    variables: &[VariableSpec],
    genomes: &[Vec<f64>],
    cfg: &ApexConfig,
    master_seed: u64,
    next_index: &mut u64,
) -> Result<Vec<EvaluatedCandidate>, ApexError> {
    let base = *next_index;
    *next_index += genomes.len() as u64;
    genomes
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let eval_seed = seedstream::child_seed(master_seed, "apex.eval", base + i as u64);
            evaluate(topo, traffic, variables, g, cfg, eval_seed)
        })
        .collect()
}

/// Run the full search and return the feasible non-dominated front,
/// deduplicated on applied configuration values.
pub fn optimize(
    topo: &ValidatedTopology,
    traffic: &TrafficProfile,
    variables: &[VariableSpec],
    cfg: &ApexConfig,
    seed: u64,
) -> Result<ParetoFront, ApexError> {
    validate_variables(topo, variables)?;
    if cfg.population < 100 || cfg.population > 500 || !cfg.population.is_multiple_of(2) {
        return Err(ApexError::InvalidSettings(format!(
            "population must be even and within [100, 500], got {}",
            cfg.population
        )));
    }
    if cfg.generations == 0 {
        return Err(ApexError::InvalidSettings("generations must be >= 1".into()));
    }
    if !(cfg.tau_risk.is_finite() && cfg.tau_risk > 0.0) {
        return Err(ApexError::InvalidSettings("tau_risk must be > 0".into()));
    }
    if !(0.0..1.0).contains(&cfg.reserve_fraction) {
        return Err(ApexError::InvalidSettings(
            "reserve_fraction must be in [0, 1)".into(),
        ));
    }

    let nvar = variables.len();
    let mutation_prob = cfg.mutation_prob.unwrap_or(1.0 / nvar as f64);
    let mut next_index = 0u64;

    let mut init_rng = seedstream::stream(seed, "apex.init", 0);
    let genomes: Vec<Vec<f64>> = (0..cfg.population)
        .map(|_| {
            variables
                .iter()
                .map(|v| init_rng.random_range(v.min..=v.max))
                .collect()
        })
        .collect();
    let mut pop = evaluate_batch(topo, traffic, variables, &genomes, cfg, seed, &mut next_index)?;

    for gen in 0..cfg.generations {
        let fronts = non_dominated_sort(&pop);
        let mut rank = vec![0usize; pop.len()];
        let mut crowding = vec![0.0f64; pop.len()];
        for (r, front) in fronts.iter().enumerate() {
            let d = crowding_distance(&pop, front);
            for (slot, &i) in front.iter().enumerate() {
                rank[i] = r;
                crowding[i] = d[slot];
            }
        }

        let mut rng = seedstream::stream(seed, "apex.gen", gen as u64);
        let mut offspring_genomes = Vec::with_capacity(cfg.population);
        while offspring_genomes.len() < cfg.population {
            let p1 = tournament(&pop, &rank, &crowding, &mut rng);
            let p2 = tournament(&pop, &rank, &crowding, &mut rng);
            let (mut c1, mut c2) = sbx_crossover(
                &p1.values,
                &p2.values,
                variables,
                cfg.crossover_eta,
                cfg.crossover_prob,
                &mut rng,
            );
            polynomial_mutation(&mut c1, variables, cfg.mutation_eta, mutation_prob, &mut rng);
            polynomial_mutation(&mut c2, variables, cfg.mutation_eta, mutation_prob, &mut rng);
            offspring_genomes.push(c1);
            if offspring_genomes.len() < cfg.population {
                offspring_genomes.push(c2);
            }
        }
        let offspring = evaluate_batch(
            topo,
            traffic,
            variables,
            &offspring_genomes,
            cfg,
            seed,
            &mut next_index,
        )?;

        // Elitist environmental selection over parents + offspring.
        let mut combined = pop;
        combined.extend(offspring);
        let fronts = non_dominated_sort(&combined);
        let mut next: Vec<EvaluatedCandidate> = Vec::with_capacity(cfg.population);
        for front in &fronts {
            if next.len() + front.len() <= cfg.population {
                next.extend(front.iter().map(|&i| combined[i].clone()));
            } else {
                let d = crowding_distance(&combined, front);
                let mut order: Vec<usize> = (0..front.len()).collect();
                order.sort_by(|&a, &b| {
                    d[b].partial_cmp(&d[a]).unwrap_or(std::cmp::Ordering::Equal)
                });
                for &slot in order.iter().take(cfg.population - next.len()) {
                    next.push(combined[front[slot]].clone());
                }
            }
            if next.len() >= cfg.population {
                break;
            }
        }
        pop = next;
    }

    let fronts = non_dominated_sort(&pop);
    let first = fronts.first().cloned().unwrap_or_default();
    let mut members: Vec<FrontMember> = Vec::new();
    let mut seen: Vec<Vec<u64>> = Vec::new();
    for &i in &first {
        let c = &pop[i];
        if !c.feasible {
            continue;
        }
        let key: Vec<u64> = c.values.iter().map(|x| x.to_bits()).collect();
        if seen.contains(&key) {
            continue;
        }
        seen.push(key);
        members.push(FrontMember {
            values: c.values.clone(),
            objectives: c.objectives,
            lri: c.lri,
            max_utilization: c.max_utilization,
            performance: c.performance,
            stability: c.stability,
            mean_latency_ms: c.mean_latency_ms,
            fitness: fitness(c.performance, c.lri, c.stability, &cfg.weights),
        });
    }
    if members.is_empty() {
        return Err(ApexError::NoFeasibleSolution);
    }
    members.sort_by(|a, b| {
        b.objectives
            .throughput_rps
            .partial_cmp(&a.objectives.throughput_rps)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| {
                b.objectives
                    .resource_efficiency
                    .partial_cmp(&a.objectives.resource_efficiency)
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
    });

    Ok(ParetoFront {
        variables: variables.iter().map(|v| v.name()).collect(),
        members,
        evaluations: next_index,
        generations: cfg.generations,
    })
}

/// One cache's claim on a shared budget.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct CacheAllocationItem {
    pub component: ComponentId,
    /// Current fraction of the budget; all shares must sum to 1.
    pub baseline_share: f64,
    /// Marginal value of giving this cache more room (e.g. hits per unit).
    pub benefit: f64,
    pub lri: f64,
}

/// Split `total_units` of cache capacity across caches, discounting each
/// cache's benefit by its risk: utility = benefit / (1 + risk_cost * p)
/// with p = lri/10 clamped to [0, 5]. Allocation is proportional to
/// baseline_share * utility; if every utility is zero the baseline shares
/// are kept as-is.
pub fn allocate_cache(
    items: &[CacheAllocationItem],
    total_units: f64,
    risk_cost: f64,
) -> Result<Vec<f64>, ApexError> {
    let share_sum: f64 = items.iter().map(|i| i.baseline_share).sum();
    if (share_sum - 1.0).abs() > 1e-9 {
        return Err(ApexError::InvalidShares(share_sum));
    }
    let raw: Vec<f64> = items
        .iter()
        .map(|i| {
            let penalty = (i.lri / 10.0).clamp(0.0, 5.0);
            let utility = i.benefit / (1.0 + risk_cost * penalty);
            i.baseline_share * utility
        })
        .collect();
    let total_raw: f64 = raw.iter().sum();
    if total_raw <= 0.0 {
        return Ok(items.iter().map(|i| i.baseline_share * total_units).collect());
    }
    Ok(raw.iter().map(|r| r / total_raw * total_units).collect())
}
