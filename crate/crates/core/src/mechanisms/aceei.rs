use crate::demand::PriceRule;
use crate::engine::{solve, EngineConfig, EquilibriumResult};
use crate::error::Result;
use crate::instance::Instance;

/// The pseudo-market with a single price per course, or with a fixed
/// discount proportional to the priority level when `kludgy`. Budgets, search
/// and certification are those of the priority engine.
pub fn aceei(instance: &Instance, config: &EngineConfig, kludgy: bool) -> Result<EquilibriumResult> {
    let config = EngineConfig {
        rule: if kludgy { PriceRule::Kludgy } else { PriceRule::Flat },
        ..config.clone()
    };
    solve(instance, &config)
}
