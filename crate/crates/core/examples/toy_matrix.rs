//! Runs the full 5 × 3 condition matrix on the toy corpus and prints the grid
//! and the enhancement quality table.
//!
//! cargo run --release --example toy_matrix -- [out_dir] [seed]

use std::path::PathBuf;
use std::time::Instant;

use nil_core::harness::report::{render_grid, render_table1};
use nil_core::harness::{emit_enhancement_report, emit_report, run_matrix, ExperimentPlan};

fn main() -> nil_core::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "toy-matrix".into()));
    let seed = args.next().map(|s| s.parse().expect("numeric seed")).unwrap_or(7);
    let plan = ExperimentPlan::toy_desk(seed);
    let start = Instant::now();
    let outcome = run_matrix(&plan, &out, &out.join("cache"))?;
    emit_report(&outcome.table, &out)?;
    print!("{}", render_grid(&outcome.table));
    if let Some(report) = &outcome.enhancement {
        emit_enhancement_report(report, &out, 40)?;
        print!("{}", render_table1(report));
    }
    println!("stages: {:?}", outcome.counts);
    println!("elapsed: {:.1} s", start.elapsed().as_secs_f64());
    Ok(())
}
