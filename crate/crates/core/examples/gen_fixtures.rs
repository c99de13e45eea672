//! Writes the oracle fixtures under `tests/fixtures`.
//!
//! Run with `cargo run -p gpsmc-core --example gen_fixtures`.

use std::fs;
use std::path::Path;

use gpsmc::data::normalize;
use gpsmc::kernel::KernelExpr;
use gpsmc::synthetic::{enumerate_posterior, periodic, PosteriorFixture};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    fs::create_dir_all(&dir)?;
    let (seed, n, snr) = (7, 100, 10.0);
    let series = periodic(n, 4.0, snr, seed)?;
    let mut csv = String::from("t,y\n");
    for (t, y) in series.times.iter().zip(&series.values) {
        csv.push_str(&format!("{t},{y}\n"));
    }
    fs::write(dir.join("linear_vs_periodic.csv"), csv)?;

    let norm = normalize(&series)?;
    let members = vec![
        (KernelExpr::linear([0.1, 0.1, 0.5]), 0.01),
        (KernelExpr::periodic([0.1, 1.0, 0.25]), 0.01),
    ];
    let posterior = enumerate_posterior(&members, None, norm.observations())?;
    let fixture = PosteriorFixture {
        seed,
        n,
        snr,
        members: members.iter().map(|(e, _)| e.to_string()).collect(),
        noise: members.iter().map(|(_, v)| *v).collect(),
        posterior,
    };
    fs::write(
        dir.join("linear_vs_periodic.json"),
        serde_json::to_string_pretty(&fixture)? + "\n",
    )?;
    println!("wrote fixtures to {}", dir.display());
    Ok(())
}
