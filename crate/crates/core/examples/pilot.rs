//! Runs an experiment grid and prints the final metrics of every run.
//!
//! `cargo run --release --example pilot -- <experiment> <steps> <seed>... `

use std::time::Instant;

use textvae::train::experiments::{grid, run_grid, Experiment};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let exp: Experiment = args.first().map_or("historyless", String::as_str).parse()?;
    let steps: u64 = args.get(1).map_or(Ok(3000), |s| s.parse())?;
    let seeds: Vec<u64> = args.iter().skip(2).map(|s| s.parse()).collect::<Result<_, _>>()?;
    let seeds = if seeds.is_empty() { vec![1] } else { seeds };
    let out = std::env::temp_dir().join("textvae-pilot").join(exp.to_string());
    let start = Instant::now();
    println!("label,bpc,kl_per_char,bound_bpc,probe,seconds");
    for point in grid(exp, Some(steps), &seeds) {
        let t = Instant::now();
        let s = run_grid(exp, vec![point], &out, None)?.remove(0);
        println!(
            "{},{:.4},{:.5},{:.4},{},{:.0}",
            s.label,
            s.last.bpc,
            s.last.kl_per_char,
            s.last.bound_bpc,
            s.probe_accuracy.map_or_else(String::new, |p| format!("{p:.3}")),
            t.elapsed().as_secs_f64()
        );
    }
    println!("total {:.0}s", start.elapsed().as_secs_f64());
    Ok(())
}
