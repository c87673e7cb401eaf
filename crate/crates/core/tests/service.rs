//! Scripted HTTP client against a live advisor on an ephemeral port.

use std::path::Path;
use std::sync::Arc;

use serde_json::{json, Value};
use tqp::matchlog::{MatchLine, PlayerHistory};
use tqp::pipeline::{run_pipeline, Advice, Models, PipelineConfig};
use tqp::service::{router, AdviceResponse, AppState, MatchAck, SessionCreated};
use tqp::subtype::SubtypeLabel;
use tqp::synthgen::{generate_population, GeneratorConfig};

struct Fixture {
    _dir: tempfile::TempDir,
    models_dir: std::path::PathBuf,
    histories: Vec<PlayerHistory>,
}

fn fixture() -> Fixture {
    let pop = generate_population(&GeneratorConfig {
        n_players: 300,
        rng_seed: 11,
        ..GeneratorConfig::default()
    })
    .unwrap();
    let histories = pop.histories.clone();
    let run = run_pipeline(pop.catalog, pop.histories, 0, &PipelineConfig::smoke(3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let models_dir = dir.path().join("models");
    run.models.save(&models_dir).unwrap();
    Fixture {
        _dir: dir,
        models_dir,
        histories,
    }
}

async fn spawn(state: AppState) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, router(Arc::new(state))).await.unwrap();
    });
    format!("http://{addr}")
}

fn payload(line: &MatchLine) -> Value {
    json!({
        "timestamp": line.timestamp,
        "deck": line.deck,
        "outcome": line.outcome,
        "crown_diff": line.crown_diff,
        "mode": line.mode,
    })
}

async fn create(c: &reqwest::Client, base: &str) -> String {
    let r = c.post(format!("{base}/session")).send().await.unwrap();
    assert_eq!(r.status(), 200);
    r.json::<SessionCreated>().await.unwrap().session_id
}

async fn report(c: &reqwest::Client, base: &str, id: &str, body: &Value) -> reqwest::Response {
    c.post(format!("{base}/session/{id}/match"))
        .json(body)
        .send()
        .await
        .unwrap()
}

async fn advice(c: &reqwest::Client, base: &str, id: &str) -> AdviceResponse {
    let r = c
        .get(format!("{base}/session/{id}/advice"))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 200);
    r.json().await.unwrap()
}

async fn replay(c: &reqwest::Client, base: &str, h: &PlayerHistory) -> String {
    let id = create(c, base).await;
    for m in &h.matches {
        let r = report(c, base, &id, &payload(&MatchLine::from(m))).await;
        assert_eq!(r.status(), 200);
    }
    id
}

fn prefix(h: &PlayerHistory, n: usize) -> PlayerHistory {
    PlayerHistory {
        player_id: h.player_id.clone(),
        matches: h.matches[..n].to_vec(),
    }
}

fn offline(models_dir: &Path, h: &PlayerHistory) -> Advice {
    Models::load(models_dir).unwrap().advise(h).unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn models_absent_is_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    let state = AppState::open(&dir.path().join("nope"), &dir.path().join("sessions")).unwrap();
    let base = spawn(state).await;
    let c = reqwest::Client::new();
    let h: Value = c
        .get(format!("{base}/health"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(h["models_loaded"], false);
    let r = c.post(format!("{base}/session")).send().await.unwrap();
    assert_eq!(r.status(), 503);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn session_lifecycle_and_replay() {
    let fx = tokio::task::spawn_blocking(fixture).await.unwrap();
    let sessions = fx._dir.path().join("sessions");
    let base = spawn(AppState::open(&fx.models_dir, &sessions).unwrap()).await;
    let c = reqwest::Client::new();

    let a = create(&c, &base).await;
    let b = create(&c, &base).await;
    assert_ne!(a, b);

    let r = report(&c, &base, "missing", &json!({})).await;
    assert_eq!(r.status(), 404);

    // 7-card deck names the field.
    let h = &fx.histories[0];
    let mut bad = payload(&MatchLine::from(&h.matches[0]));
    bad["deck"].as_array_mut().unwrap().pop();
    let r = report(&c, &base, &a, &bad).await;
    assert_eq!(r.status(), 422);
    let body: Value = r.json().await.unwrap();
    assert!(body["fields"]["deck"].as_str().unwrap().contains("8 cards"));

    // Timestamp is optional; deck-change flag follows the deck.
    let mut first = payload(&MatchLine::from(&h.matches[0]));
    first.as_object_mut().unwrap().remove("timestamp");
    let ack: MatchAck = report(&c, &base, &a, &first).await.json().await.unwrap();
    assert_eq!((ack.ok, ack.match_count, ack.deck_changed), (true, 1, false));
    let other = fx
        .histories
        .iter()
        .flat_map(|p| &p.matches)
        .find(|m| m.deck != h.matches[0].deck)
        .unwrap();
    let ack: MatchAck = report(&c, &base, &a, &payload(&MatchLine::from(other)))
        .await
        .json()
        .await
        .unwrap();
    assert!(ack.deck_changed);

    // 9 matches: need more history, not an error.
    let nine = prefix(h, 9);
    let id9 = replay(&c, &base, &nine).await;
    let adv = advice(&c, &base, &id9).await;
    assert_eq!(adv.decision, "need_more_history");
    assert_eq!(adv.need_matches, Some(1));

    // 12 matches: provisional Flex subtype, and identical to offline advice.
    let twelve = prefix(h, 12);
    let id12 = replay(&c, &base, &twelve).await;
    let adv = advice(&c, &base, &id12).await;
    assert!(adv.provisional);
    assert_eq!(adv.subtype, Some(SubtypeLabel::Flex));
    let Advice::Ready { recommendation, .. } = offline(&fx.models_dir, &twelve) else {
        panic!("12 matches must be enough");
    };
    assert_eq!(adv.recommendation(), Some(recommendation));

    // A loyalist-profiled session is held by PersonaGate.
    let models = Models::load(&fx.models_dir).unwrap();
    let loyal = fx
        .histories
        .iter()
        .find(|p| models.subtype_of(&p.matches[..40]).0 == SubtypeLabel::Loyalist)
        .map(|p| prefix(p, 40))
        .unwrap();
    let idl = replay(&c, &base, &loyal).await;
    let adv = advice(&c, &base, &idl).await;
    assert_eq!(adv.decision, "stay");
    assert_eq!(adv.provenance, Some(tqp::fusion::Provenance::PersonaGate));
    assert!(adv.explanation.contains("PersonaGate"));

    // Restart: the session directory is replayed to the same answer.
    let long = prefix(&fx.histories[5], 60);
    let idr = replay(&c, &base, &long).await;
    let before = advice(&c, &base, &idr).await;
    let base2 = spawn(AppState::open(&fx.models_dir, &sessions).unwrap()).await;
    let after = advice(&c, &base2, &idr).await;
    assert_eq!(before, after);
    let Advice::Ready { recommendation, .. } = offline(&fx.models_dir, &long) else {
        panic!("60 matches must be enough");
    };
    assert_eq!(after.recommendation(), Some(recommendation));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_reports_are_serialized() {
    let fx = tokio::task::spawn_blocking(fixture).await.unwrap();
    let base = spawn(AppState::open(&fx.models_dir, &fx._dir.path().join("s")).unwrap()).await;
    let c = reqwest::Client::new();
    let id = create(&c, &base).await;
    let h = &fx.histories[1];
    let mut tasks = Vec::new();
    for m in &h.matches[..32] {
        let mut p = payload(&MatchLine::from(m));
        p.as_object_mut().unwrap().remove("timestamp");
        let (c, base, id) = (c.clone(), base.clone(), id.clone());
        tasks.push(tokio::spawn(async move {
            report(&c, &base, &id, &p).await.json::<MatchAck>().await.unwrap().match_count
        }));
    }
    let mut counts = Vec::new();
    for t in tasks {
        counts.push(t.await.unwrap());
    }
    counts.sort_unstable();
    assert_eq!(counts, (1..=32).collect::<Vec<_>>());
}
