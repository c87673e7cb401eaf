//! Pre-train a small session encoder on planted states, show validation
//! metrics and check analytic gradients on the tiny configuration.
//!
//! cargo run --release --example encoder -- [players]

use tqp::archetype::StateId;
use tqp::encoder::{pretrain, EncoderConfig};
use tqp::matchlog::{make_splits, Segment};
use tqp::stages::{encoder_gradcheck, render_train_report};
use tqp::synthgen::{generate_population, GeneratorConfig};
use tqp::window::{extract_windows, Window, DEFAULT_K};

fn main() -> tqp::Result<()> {
    let players = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(150);
    let pop = generate_population(&GeneratorConfig {
        n_players: players,
        ..GeneratorConfig::default()
    })?;
    let splits = make_splits(&pop.histories, (0.8, 0.1, 0.1));
    let (mut train, mut val): (Vec<Window>, Vec<Window>) = (Vec::new(), Vec::new());
    for h in &pop.histories {
        let states: Vec<StateId> = h.matches.iter().map(|m| pop.truth.decks[&m.deck]).collect();
        let bounds = splits.get(&h.player_id).expect("split for every player");
        let u = pop.truth.subtype_of(&h.player_id);
        for (seg, out) in [(Segment::Train, &mut train), (Segment::Val, &mut val)] {
            out.extend(extract_windows(h, &states, &pop.catalog, u, bounds.range(seg), DEFAULT_K));
        }
    }
    println!("{} train windows, {} validation windows", train.len(), val.len());

    let cfg = EncoderConfig {
        epochs: 10,
        max_train_windows: Some(8000),
        ..EncoderConfig::desk()
    };
    let (encoder, report) = pretrain(&train, &val, pop.catalog.len(), &cfg)?;
    print!("{}", render_train_report(&report));
    println!("embedding width {}", encoder.d_z());

    let g = encoder_gradcheck(7, 4)?;
    println!(
        "gradient check: {} parameters, max relative error {:.2e} at {}",
        g.n_checked, g.max_rel_error, g.worst_param
    );
    Ok(())
}
