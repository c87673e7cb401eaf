//! Generate a planted population, write it as a matchlog directory and
//! show how the planted subtypes differ in observed behavior.
//!
//! cargo run --release --example synth_corpus -- [players] [out-dir]

use tqp::matchlog::Outcome;
use tqp::subtype::{behavior_profile, SubtypeLabel};
use tqp::synthgen::{generate_population, write_population, GeneratorConfig};

fn main() -> tqp::Result<()> {
    let mut args = std::env::args().skip(1);
    let players = args.next().and_then(|s| s.parse().ok()).unwrap_or(500);
    let out = args.next().unwrap_or_else(|| "synth-out".into());

    let cfg = GeneratorConfig {
        n_players: players,
        ..GeneratorConfig::default()
    };
    let pop = generate_population(&cfg)?;
    write_population(&pop, &out)?;
    println!(
        "{} players, {} matches, {} cards -> {out}",
        pop.histories.len(),
        pop.histories.iter().map(|h| h.len()).sum::<usize>(),
        pop.catalog.len()
    );

    println!("{:<24} {:>7} {:>10} {:>10} {:>8}", "subtype", "players", "post-loss", "post-win", "win");
    for u in [SubtypeLabel::Loyalist, SubtypeLabel::LossReactive, SubtypeLabel::Flex] {
        let hs: Vec<_> = pop
            .histories
            .iter()
            .filter(|h| pop.truth.subtype_of(&h.player_id) == Some(u))
            .collect();
        let n = hs.len().max(1) as f64;
        let (mut loss, mut win, mut wr) = (0.0, 0.0, 0.0);
        for h in &hs {
            let p = behavior_profile(&h.matches);
            loss += p.post_loss_switch_rate;
            win += p.post_win_switch_rate;
            let wins = h.matches.iter().filter(|m| m.outcome == Outcome::Win).count();
            wr += wins as f64 / h.len() as f64;
        }
        println!(
            "{:<24} {:>7} {:>10.3} {:>10.3} {:>8.3}",
            u.name(),
            hs.len(),
            loss / n,
            win / n,
            wr / n
        );
    }
    Ok(())
}
