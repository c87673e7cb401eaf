//! Generates the default synthetic corpus and runs every stage end to end.
//!
//! ```text
//! cargo run --release --example full_pipeline -- [players] [preset] [out-dir]
//! ```

use std::time::Instant;

use tqp::pipeline::{run_pipeline, PipelineConfig};
use tqp::synthgen::{generate_population, GeneratorConfig};

fn main() -> tqp::Result<()> {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .init();
    let mut args = std::env::args().skip(1);
    let players: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(2000);
    let preset = args.next().unwrap_or_else(|| "desk".to_string());
    let out = args.next();

    let t0 = Instant::now();
    let pop = generate_population(&GeneratorConfig {
        n_players: players,
        ..GeneratorConfig::default()
    })?;
    eprintln!("generated {players} players in {:.1?}", t0.elapsed());

    let cfg = PipelineConfig::preset(&preset, 7)?;
    let run = run_pipeline(pop.catalog, pop.histories, 0, &cfg)?;
    println!("{}", run.render_report());
    eprintln!("total {:.1?}", t0.elapsed());
    if let Some(dir) = out {
        run.write(&dir)?;
        eprintln!("artifacts written to {dir}");
    }
    Ok(())
}
