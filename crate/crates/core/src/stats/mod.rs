//! Statistical characterisation of bit streams.

pub mod autocorr;
pub mod battery;

pub use crate::extractor::io::{export, ExportFormat};
pub use autocorr::{
    autocorrelation, autocorrelation_par, gamma_distribution_check, pair_counts, pair_counts_par, with_bound,
    write_autocorr_csv, AutocorrAccumulator, AutocorrResult, NormalityCheck, PairCounts,
};
pub use battery::{mini_battery, BatteryReport, TestResult, Verdict};
