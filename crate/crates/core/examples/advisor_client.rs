//! Start the advisor on an ephemeral port, replay one player's matches
//! over HTTP and print the advice after each batch of ten.
//!
//! cargo run --release --example advisor_client

use std::sync::Arc;

use serde_json::{json, Value};
use tqp::matchlog::MatchLine;
use tqp::pipeline::{run_pipeline, PipelineConfig};
use tqp::service::{router, AppState};
use tqp::synthgen::{generate_population, GeneratorConfig};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pop = generate_population(&GeneratorConfig {
        n_players: 300,
        ..GeneratorConfig::default()
    })?;
    let player = pop.histories[2].clone();
    let run = tokio::task::spawn_blocking(move || {
        run_pipeline(pop.catalog, pop.histories, 0, &PipelineConfig::smoke(7))
    })
    .await??;
    let root = std::env::temp_dir().join("tqp-advisor-example");
    run.models.save(root.join("models"))?;

    let state = AppState::open(&root.join("models"), &root.join("sessions"))?;
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}", listener.local_addr()?);
    tokio::spawn(async move { axum::serve(listener, router(Arc::new(state))).await });

    let c = reqwest::Client::new();
    let health: Value = c.get(format!("{base}/health")).send().await?.json().await?;
    println!("health {health}");
    let created: Value = c.post(format!("{base}/session")).send().await?.json().await?;
    let id = created["session_id"].as_str().unwrap_or_default().to_string();

    for (i, m) in player.matches.iter().take(60).enumerate() {
        let line = MatchLine::from(m);
        let body = json!({
            "deck": line.deck,
            "outcome": line.outcome,
            "crown_diff": line.crown_diff,
        });
        c.post(format!("{base}/session/{id}/match"))
            .json(&body)
            .send()
            .await?
            .error_for_status()?;
        if (i + 1) % 10 == 0 {
            let adv: Value = c
                .get(format!("{base}/session/{id}/advice"))
                .send()
                .await?
                .json()
                .await?;
            println!(
                "after {:>2}: {} {}",
                i + 1,
                adv["decision"],
                adv["explanation"].as_str().unwrap_or_default()
            );
        }
    }
    Ok(())
}
