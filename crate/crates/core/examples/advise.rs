//! Train a small pipeline, freeze the models to disk and ask for advice on
//! a few players at several points in their histories.
//!
//! cargo run --release --example advise

use std::collections::BTreeMap;

use tqp::matchlog::PlayerHistory;
use tqp::pipeline::{run_pipeline, Advice, Models, PipelineConfig};
use tqp::synthgen::{generate_population, GeneratorConfig};

fn main() -> tqp::Result<()> {
    let pop = generate_population(&GeneratorConfig {
        n_players: 300,
        ..GeneratorConfig::default()
    })?;
    let histories = pop.histories.clone();
    let run = run_pipeline(pop.catalog, pop.histories, 0, &PipelineConfig::smoke(7))?;

    let dir = std::env::temp_dir().join("tqp-advise-example");
    run.models.save(&dir)?;
    let models = Models::load(&dir)?;
    println!("models frozen in {}", dir.display());

    // First two prefixes per decision path, probing every tenth match.
    let mut shown: BTreeMap<String, usize> = BTreeMap::new();
    for h in &histories {
        for n in (8..=h.len()).step_by(10) {
            let prefix = PlayerHistory {
                player_id: h.player_id.clone(),
                matches: h.matches[..n].to_vec(),
            };
            let (key, line) = match models.advise(&prefix)? {
                Advice::NeedMatches { have, need } => {
                    ("need".to_string(), format!("need {need} matches, have {have}"))
                }
                Advice::Ready {
                    recommendation: r,
                    provisional,
                } => (
                    format!("{:?}", r.provenance),
                    format!(
                        "{:?} by {:?} ({}){}: {}",
                        r.decision,
                        r.provenance,
                        r.subtype.name(),
                        if provisional { " provisional" } else { "" },
                        r.candidates
                            .iter()
                            .take(3)
                            .map(|c| format!("{}:{:.3}", c.to_state.0, c.fused))
                            .collect::<Vec<_>>()
                            .join(" ")
                    ),
                ),
            };
            let seen = shown.entry(key).or_default();
            if *seen < 2 {
                *seen += 1;
                println!("{} @{n:>3}  {line}", h.player_id);
            }
        }
    }
    Ok(())
}
