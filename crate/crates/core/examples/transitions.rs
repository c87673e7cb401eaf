//! Extract decision-point events on planted states, build the stay
//! baseline and compare raw and baseline-adjusted switch outcomes.
//!
//! cargo run --release --example transitions -- [players]

use std::collections::BTreeMap;

use tqp::archetype::StateId;
use tqp::matchlog::{make_splits, Segment};
use tqp::synthgen::{generate_population, GeneratorConfig};
use tqp::transition::{
    attach_net, extract_events, PlayerInput, StayBaselineTable, DEFAULT_MIN_SUPPORT,
};
use tqp::window::DEFAULT_K;

fn main() -> tqp::Result<()> {
    let players = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(400);
    let pop = generate_population(&GeneratorConfig {
        n_players: players,
        ..GeneratorConfig::default()
    })?;
    let states: Vec<Vec<StateId>> = pop
        .histories
        .iter()
        .map(|h| h.matches.iter().map(|m| pop.truth.decks[&m.deck]).collect())
        .collect();
    let splits = make_splits(&pop.histories, (0.8, 0.1, 0.1));
    let inputs: Vec<PlayerInput<'_>> = pop
        .histories
        .iter()
        .zip(&states)
        .filter_map(|(h, s)| {
            Some(PlayerInput {
                history: h,
                states: s,
                subtype: pop.truth.subtype_of(&h.player_id)?,
                bounds: *splits.get(&h.player_id)?,
            })
        })
        .collect();

    let (mut events, report) = extract_events(&inputs, &[Segment::Train], DEFAULT_K);
    println!(
        "{} events, {} switches, {} dropped for a short tail",
        report.events, report.switches, report.dropped_short_tail
    );
    let table = StayBaselineTable::build(&events, DEFAULT_MIN_SUPPORT)?;
    attach_net(&mut events, &table);
    println!(
        "{} baseline cells, global stay mean {:+.4}",
        table.cells.len(),
        table.global.mean
    );

    // Per subtype: raw and net mean over switches.
    let mut acc: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    for e in events.iter().filter(|e| e.is_switch()) {
        let a = acc.entry(e.subtype.name()).or_default();
        a.0 += e.y_tq;
        a.1 += e.net.unwrap_or(0.0);
        a.2 += 1;
    }
    println!("{:<24} {:>8} {:>10} {:>10}", "subtype", "switches", "mean y", "mean net");
    for (u, (y, net, n)) in acc {
        let n_f = n as f64;
        println!("{u:<24} {n:>8} {:>+10.4} {:>+10.4}", y / n_f, net / n_f);
    }
    Ok(())
}
