//! Numeric tolerance and size caps shared across the crate.

/// Default absolute tolerance used for every value comparison.
pub const DEFAULT_ETA: f64 = 1e-9;

/// Environment variable that overrides [`DEFAULT_ETA`] in the CLI.
pub const ETA_ENV_VAR: &str = "LWA_ETA";

/// Caps on brute-force work. Tables and exhaustive checks are `2^m` or `4^m`,
/// assignment scans are `n^m`, and grid searches are a product over players.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Limits {
    pub max_items: usize,
    pub max_assignments: u128,
    pub max_profiles: u128,
    pub max_strategies: u128,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_items: 16,
            max_assignments: 100_000_000,
            max_profiles: 100_000_000,
            max_strategies: 10_000_000,
        }
    }
}

/// Reads the tolerance override from the environment, falling back to the default.
pub fn eta_from_env() -> f64 {
    std::env::var(ETA_ENV_VAR)
        .ok()
        .and_then(|s| s.trim().parse::<f64>().ok())
        .filter(|v| v.is_finite() && *v >= 0.0)
        .unwrap_or(DEFAULT_ETA)
}
