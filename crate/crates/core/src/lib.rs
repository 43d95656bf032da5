//! Latent-risk analysis for optimization-layered service topologies.
//!
//! Distributed systems accumulate optimization layers — caches, circuit
//! breakers, load balancers, connection pools — that hide the true load a
//! dependency would receive if the optimization stopped working. This crate
//! models such topologies as a deterministic fluid simulation and layers four
//! analysis subsystems on top:
//!
//! * [`riskcore`] — the Latent Risk Index (LRI), latent-load accumulation,
//!   amplification measurement, and system risk assessment.
//! * [`hydra`] — controlled perturbation campaigns that escalate bypass
//!   fractions under safety supervision to discover hidden amplification.
//! * [`apex`] — multi-objective configuration search (NSGA-II style) with a
//!   risk ceiling and resilience-reserve constraint, plus risk-aware cache
//!   allocation.
//! * [`raven`] — continuous monitoring: sliding-window summaries, change
//!   detection, LRI forecasting, and a closed optimization loop with gradual,
//!   safety-gated rollout.
//!
//! Everything is deterministic given a scenario and a master seed; all
//! randomness flows through [`seedstream`].

pub mod apex;
pub mod hydra;
pub mod raven;
pub mod riskcore;
pub mod scenario;
pub mod seedstream;
pub mod simengine;
pub mod topology;
