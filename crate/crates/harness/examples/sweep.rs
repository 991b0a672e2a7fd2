//! Runs a benchmark config and prints, per trained loss, its own metric against the untrained model.
//!
//! `cargo run --release -p seploss-harness --example sweep -- fixtures/toy_bench.json`

use std::time::Instant;

use seploss_harness::{run_bench, BenchConfig, UNTRAINED};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).ok_or("usage: sweep <config.json>")?;
    let cfg = BenchConfig::from_json(&std::fs::read_to_string(path)?)?;
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let start = Instant::now();
    let out = run_bench(&cfg, threads)?;
    println!("{} runs in {:.1?} on {threads} threads", out.runs.len(), start.elapsed());
    let m = &out.matrix;
    let base = m.columns.iter().position(|c| c == UNTRAINED);
    for (ci, col) in m.columns.iter().enumerate() {
        let (Some(b), Some(r)) = (base, m.rows.iter().position(|r| r == col)) else {
            continue;
        };
        let (trained, untrained) = (m.values[r][ci], m.values[r][b]);
        let verdict = if trained < untrained { "improved" } else { "NOT improved" };
        println!("{col:>14}: trained {trained:>12.6} untrained {untrained:>12.6} {verdict}");
    }
    for run in &out.runs {
        let t = &run.trace;
        println!(
            "{:>14} seed {}: val {:.5} -> {:.5} (best epoch {})",
            run.loss.name(),
            run.seed,
            t[0].val_loss,
            t[run.best_epoch].val_loss,
            run.best_epoch
        );
    }
    Ok(())
}
