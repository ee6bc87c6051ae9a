//! Runs both reference problems over ten seeds and prints the calibrated
//! threshold together with every verdict.
//!
//! ```text
//! cargo run --release --example calibration -- [n] [iterations] [init] [amplitude]
//! ```

use std::time::Instant;

use wclab::lab::{calibrate, compatible_reference, incompatible_reference, run_seeds, InitKind};
use wclab::Thresholds;

fn main() -> wclab::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(63);
    let iterations = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(500);
    let init = match args.get(3).map(String::as_str) {
        Some("noise") => InitKind::Noise,
        _ => InitKind::LaminateNoise,
    };
    let amplitude = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let seeds: Vec<u64> = (1..=10).collect();
    let start = Instant::now();

    let compatible = compatible_reference(n, 0)?;
    let incompatible = incompatible_reference(n, 0)?;
    let pinned = Thresholds::pinned(&incompatible);
    let mut comp = run_seeds(&compatible, init, amplitude, &seeds, iterations, &Thresholds::pinned(&compatible))?;
    let mut incomp = run_seeds(&incompatible, init, amplitude, &seeds, iterations, &pinned)?;
    let cal = calibrate(&comp, &incomp, compatible.jump_norm());
    println!(
        "eps_low={:e} compatible_max={:e} incompatible_min={:e} clears={}",
        cal.eps_low, cal.compatible_max, cal.incompatible_min, cal.clears
    );
    let t = Thresholds { eps_low: cal.eps_low, delta: pinned.delta };
    for r in comp.iter_mut().chain(incomp.iter_mut()) {
        r.reclassify(&t);
    }
    for r in &comp {
        println!("compatible   {}", r.summary_line());
    }
    for r in &incomp {
        println!("incompatible {}", r.summary_line());
    }
    println!("elapsed {:.2?}", start.elapsed());
    Ok(())
}
