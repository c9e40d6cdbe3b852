//! Command-line driver: dataset generation, training runs, ablation sweeps,
//! multi-seed comparisons and plot export.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{cmd_ablate, cmd_compare, cmd_generate, cmd_plot, cmd_train, write_comparison};
pub use config::ExperimentConfig;
pub use error::CliError;

/// Environment variable that relocates relative output directories.
pub const OUT_ROOT_ENV: &str = "DTSC_OUT_ROOT";

/// Parses a seed list such as `0,1,2` or `0..10` (half-open).
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::Config(format!("invalid seed list `{spec}` (use `0,1,2` or `0..10`)"));
    if let Some((a, b)) = spec.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        return Ok((a..b).collect());
    }
    spec.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("0..4").unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(parse_seeds("3, 5,8").unwrap(), vec![3, 5, 8]);
        assert!(matches!(parse_seeds("x"), Err(CliError::Config(_))));
    }
}
