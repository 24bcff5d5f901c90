//! Synthetic one-covariate scenarios, an independent divergence oracle,
//! replication runs and Monte Carlo checks of the weights' probabilistic
//! reading.

mod interpret;
mod replicate;
mod scenario;

pub use interpret::{boltzmann_check, decision_rule_check, gaussian_kl, DecisionRuleResult, Gaussian};
pub use replicate::{run_replications, summarize, ReplicationConfig, ReplicationRecord, SchemeSummary};
pub use scenario::{curvature_grid, delta_oracle, generate, generate_with_rng, max_curvature, DeltaOracle, MeanFn, SimScenario};
