//! Agreement between importance maps and ground-truth masks.

mod scores;
mod transport;

pub use scores::{emd_score, ima_score, max_distance, precision_score, score_all, score_map, MetricResult, PRUNE_BELOW};
pub use transport::{optimal_transport_cost, solve_transport, MassDistribution, TransportPlan};
