//! Shared inputs for the benchmarks.

use gpsmc::data::normalize;
use gpsmc::synthetic::linear_plus_periodic;

/// Normalized times and values of a seeded trend-plus-seasonal series.
pub fn fixture(n: usize) -> (Vec<f64>, Vec<f64>) {
    let series = linear_plus_periodic(n, 10.0, 42).expect("fixture generates");
    let norm = normalize(&series).expect("fixture normalizes");
    (norm.times, norm.values)
}
