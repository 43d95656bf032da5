//! Randomized invariants over the simulator and risk engine: quantities that
//! must hold for *any* well-formed input, not just the handpicked fixtures.

use proptest::prelude::*;

use latentrisk::hydra::EscalationSchedule;
use latentrisk::raven::forecast_lri;
use latentrisk::riskcore::{classify_risk, risk_band, AmplificationMap, RiskBand, RiskLevel};
use latentrisk::simengine::{
    run_simulation, PerturbationAction, Simulation, Strategy, TrafficProfile,
};
use latentrisk::topology::{
    validate_topology, ComponentKind, ComponentSpec, DependencyEdge, LatencyModel, LatencyProfile,
    OptimizationParams, TopologyGraph, ValidatedTopology,
};

fn profile() -> LatencyProfile {
    LatencyProfile {
        base_latency_ms: 2.0,
        model: LatencyModel::Mm1,
        saturation_cap_ms: 200.0,
        table_points: None,
    }
}

fn component(id: &str, kind: ComponentKind, capacity: f64) -> ComponentSpec {
    ComponentSpec {
        id: id.into(),
        kind,
        capacity_rps: capacity,
        latency_profile: profile(),
        mttr_minutes: 5.0,
        observability_coverage: 0.9,
        criticality: 2.0,
        bypass_probability: 0.1,
        optimization_params: None,
    }
}

/// front -> cache1 -> db1 with a configurable hit ceiling and db capacity.
fn cache_chain(hit_max: f64, db_capacity: f64) -> ValidatedTopology {
    let mut cache = component("cache1", ComponentKind::Cache, 10_000.0);
    cache.optimization_params = Some(OptimizationParams::Cache {
        size_units: 400.0,
        hit_max,
        size_scale_units: 10.0,
        hit_drift_per_tick: 0.0,
    });
    let graph = TopologyGraph {
        components: vec![
            component("front", ComponentKind::Entry, 10_000.0),
            cache,
            component("db1", ComponentKind::Database, db_capacity),
        ],
        edges: vec![
            DependencyEdge {
                from: "front".into(),
                to: "cache1".into(),
                load_fraction: 1.0,
                declared_amplification: None,
                edge_observability: 0.8,
            },
            DependencyEdge {
                from: "cache1".into(),
                to: "db1".into(),
                load_fraction: 1.0 - hit_max,
                declared_amplification: None,
                edge_observability: 0.8,
            },
        ],
        entries: vec!["front".into()],
    };
    validate_topology(graph).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Per component and tick: errors are non-negative, served plus errors
    /// accounts for exactly the offered load (no queues in this fixture),
    /// served never exceeds capacity, and utilization stays in [0, 1].
    #[test]
    fn serving_is_conservative_and_capacity_limited(
        base in 10.0..4_000.0f64,
        hit in 0.0..0.9f64,
        db_cap in 50.0..3_000.0f64,
    ) {
        let topo = cache_chain(hit, db_cap);
        let trace = run_simulation(&topo, &TrafficProfile::constant(base), 30, 1, &[]).unwrap();
        let db = topo.component_index(&"db1".into()).unwrap();
        for row in &trace.ticks {
            for (pos, m) in row.iter().enumerate() {
                prop_assert!(m.error_rps >= -1e-9);
                prop_assert!(m.served_rps <= m.offered_rps + 1e-9);
                prop_assert!((m.served_rps + m.error_rps - m.offered_rps).abs() < 1e-6);
                prop_assert!((0.0..=1.0).contains(&m.utilization));
                prop_assert!(m.latency_ms.is_finite() && m.latency_ms >= 0.0);
                if pos == db {
                    prop_assert!(m.served_rps <= db_cap + 1e-9);
                }
            }
        }
    }

    /// More cache bypass can only send more load downstream.
    #[test]
    fn bypass_increases_downstream_load_monotonically(
        base in 100.0..2_000.0f64,
        hit in 0.2..0.9f64,
        lo in 0.0..1.0f64,
        delta in 0.0..1.0f64,
    ) {
        let hi = (lo + delta).min(1.0);
        let topo = cache_chain(hit, 1e9);
        let mean_db = |magnitude: f64| {
            let mut sim = Simulation::new(&topo, &TrafficProfile::constant(base), 0).unwrap();
            sim.apply_action(PerturbationAction::new(
                Strategy::CacheBypass,
                "cache1",
                magnitude,
            ))
            .unwrap();
            let db = topo.component_index(&"db1".into()).unwrap();
            let mut sum = 0.0;
            for _ in 0..20 {
                sum += sim.step()[db].offered_rps;
            }
            sum / 20.0
        };
        prop_assert!(mean_db(hi) >= mean_db(lo) - 1e-9);
    }

    /// The three-way classification is a coarsening of the six bands.
    #[test]
    fn classification_agrees_with_bands(lri in 0.0..500.0f64) {
        let level = classify_risk(lri);
        let band = risk_band(lri);
        let expected = match band {
            RiskBand::Low => RiskLevel::Low,
            RiskBand::MediumLow | RiskBand::Medium => RiskLevel::Medium,
            RiskBand::High | RiskBand::VeryHigh | RiskBand::Critical => RiskLevel::High,
        };
        prop_assert_eq!(level, expected);
    }

    /// Forecasts never go negative and stay finite, whatever the history.
    #[test]
    fn forecast_is_clamped_and_finite(
        history in prop::collection::vec(0.0..100.0f64, 2..40),
        steps in 1..10u64,
    ) {
        let f = forecast_lri(&history, steps).unwrap();
        prop_assert!(f.is_finite());
        prop_assert!(f >= 0.0);
    }

    /// Measured amplification always shadows the declared value.
    #[test]
    fn measured_amplification_overrides_declared(
        declared in 0.5..20.0f64,
        measured in 0.5..20.0f64,
    ) {
        let topo = cache_chain(0.5, 1_000.0);
        let mut map = AmplificationMap::from_declared(&topo);
        map.insert_declared("cache1".into(), "db1".into(), declared);
        map.insert_measured("cache1".into(), "db1".into(), measured, 60);
        prop_assert_eq!(map.alpha(&"cache1".into(), &"db1".into()), Some(measured));
        // Re-declaring afterwards must not displace a measurement.
        map.insert_declared("cache1".into(), "db1".into(), declared);
        prop_assert_eq!(map.alpha(&"cache1".into(), &"db1".into()), Some(measured));
    }

    /// Identical inputs replay to byte-identical traces.
    #[test]
    fn runs_replay_identically(seed in any::<u64>(), base in 10.0..1_000.0f64) {
        let topo = cache_chain(0.6, 500.0);
        let traffic = TrafficProfile::constant(base);
        let a = run_simulation(&topo, &traffic, 15, seed, &[]).unwrap();
        let b = run_simulation(&topo, &traffic, 15, seed, &[]).unwrap();
        prop_assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    /// Escalation ladders are strictly increasing and respect their cap.
    #[test]
    fn escalation_ladders_are_increasing_and_capped(
        start in 0.001..0.05f64,
        factor in 1.05..2.0f64,
        cap_mult in 2.0..40.0f64,
    ) {
        let schedule = EscalationSchedule {
            start,
            factor,
            cap: start * cap_mult,
        };
        let mags = schedule.magnitudes();
        prop_assert!(!mags.is_empty());
        for w in mags.windows(2) {
            prop_assert!(w[1] > w[0]);
        }
        for &m in &mags {
            prop_assert!(m <= schedule.cap * (1.0 + 1e-9));
        }
    }
}
