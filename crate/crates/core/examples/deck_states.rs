//! Cluster decks into strategy states and players into behavioral
//! subtypes, then score both against the planted truth.
//!
//! cargo run --release --example deck_states -- [players]

use tqp::cluster::adjusted_rand_index;
use tqp::matchlog::make_splits;
use tqp::pipeline::{assign_states, fit_archetype_stage, fit_subtype_stage, PipelineConfig};
use tqp::synthgen::{generate_population, GeneratorConfig};

fn main() -> tqp::Result<()> {
    let players = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(600);
    let pop = generate_population(&GeneratorConfig {
        n_players: players,
        ..GeneratorConfig::default()
    })?;
    let cfg = PipelineConfig::desk(7);

    let model = fit_archetype_stage(
        &pop.catalog,
        &pop.histories,
        cfg.archetype_sample,
        cfg.archetype_restarts,
        cfg.seed,
    )?;
    println!("silhouette {:.3}", model.silhouette);
    for s in &model.states {
        println!("  {:>2}  {:<10} {}", s.id.0, s.group, s.name);
    }

    let states = assign_states(&model, &pop.catalog, &pop.histories)?;
    let (got, want): (Vec<usize>, Vec<usize>) = pop
        .histories
        .iter()
        .zip(&states)
        .flat_map(|(h, s)| {
            h.matches
                .iter()
                .zip(s)
                .map(|(m, st)| (st.index(), pop.truth.decks[&m.deck].index()))
        })
        .unzip();
    println!("state ARI vs planted  {:.4}", adjusted_rand_index(&got, &want));

    let splits = make_splits(&pop.histories, cfg.split);
    let (_, rows) = fit_subtype_stage(&pop.histories, &splits, cfg.seed)?;
    let got: Vec<usize> = rows.iter().map(|r| r.label.index()).collect();
    let want: Vec<usize> = rows
        .iter()
        .map(|r| pop.truth.subtype_of(&r.player_id).map_or(0, |u| u.index()))
        .collect();
    println!("subtype ARI vs planted  {:.4}", adjusted_rand_index(&got, &want));
    Ok(())
}
