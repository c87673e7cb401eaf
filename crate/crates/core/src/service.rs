//! HTTP advisor. Sessions accumulate match reports and return gated
//! Stay/Switch advice computed by [`Models::advise`] on the full session
//! history, so replaying the same reports always yields the same answer.
//!
//! Every accepted report is appended to `<sessions>/<id>.jsonl` before it is
//! acknowledged; on start the directory is replayed.

use std::collections::{BTreeMap, HashMap};
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Mutex;
use tracing::{info, warn};

use crate::archetype::StateId;
use crate::error::{Error, Result};
use crate::fusion::{Candidate, Decision, Provenance, Recommendation};
use crate::matchlog::{
    validate_crowns, validate_deck, Catalog, MatchLine, MatchRecord, Mode, Outcome, PlayerHistory,
};
use crate::pipeline::{Advice, Models};
use crate::subtype::SubtypeLabel;

// ── Wire types ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchAck {
    pub ok: bool,
    pub match_count: usize,
    pub deck_changed: bool,
    pub state: StateId,
}

/// `decision` is `stay`, `switch` or `need_more_history`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdviceResponse {
    pub decision: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_state: Option<StateId>,
    pub gate_prob: Option<f64>,
    pub candidates: Vec<Candidate>,
    pub provenance: Option<Provenance>,
    pub explanation: String,
    pub subtype: Option<SubtypeLabel>,
    pub provisional: bool,
    pub from_state: Option<StateId>,
    pub match_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub need_matches: Option<usize>,
}

impl AdviceResponse {
    pub fn from_advice(advice: &Advice, match_count: usize) -> Self {
        match advice {
            Advice::NeedMatches { need, .. } => Self {
                decision: "need_more_history".into(),
                target_state: None,
                gate_prob: None,
                candidates: Vec::new(),
                provenance: None,
                explanation: format!("need {need} more matches before advice is available"),
                subtype: None,
                provisional: false,
                from_state: None,
                match_count,
                need_matches: Some(*need),
            },
            Advice::Ready {
                recommendation: r,
                provisional,
            } => Self {
                decision: match r.decision {
                    Decision::Stay => "stay".into(),
                    Decision::Switch(_) => "switch".into(),
                },
                target_state: r.decision.target(),
                gate_prob: r.gate_prob,
                candidates: r.candidates.clone(),
                provenance: Some(r.provenance),
                explanation: r.provenance.explain().to_string(),
                subtype: Some(r.subtype),
                provisional: *provisional,
                from_state: Some(r.from_state),
                match_count,
                need_matches: None,
            },
        }
    }

    /// The recommendation this response carries, if advice was ready.
    pub fn recommendation(&self) -> Option<Recommendation> {
        let decision = match (self.decision.as_str(), self.target_state) {
            ("stay", None) => Decision::Stay,
            ("switch", Some(t)) => Decision::Switch(t),
            _ => return None,
        };
        Some(Recommendation {
            decision,
            subtype: self.subtype?,
            from_state: self.from_state?,
            gate_prob: self.gate_prob,
            candidates: self.candidates.clone(),
            provenance: self.provenance?,
        })
    }
}

// ── Errors ──────────────────────────────────────────────────────────────

#[derive(Debug)]
pub enum ApiError {
    Unavailable(String),
    NotFound(String),
    Invalid(BTreeMap<String, String>),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::Unavailable(m) => (StatusCode::SERVICE_UNAVAILABLE, json!({ "error": m })),
            ApiError::NotFound(id) => (
                StatusCode::NOT_FOUND,
                json!({ "error": format!("unknown session `{id}`") }),
            ),
            ApiError::Invalid(fields) => (
                StatusCode::UNPROCESSABLE_ENTITY,
                json!({ "error": "invalid match payload", "fields": fields }),
            ),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": m })),
        };
        (status, Json(body)).into_response()
    }
}

// ── Payload validation ──────────────────────────────────────────────────

fn field_err(fields: &mut BTreeMap<String, String>, name: &str, msg: impl Into<String>) {
    fields.insert(name.to_string(), msg.into());
}

/// Parses one match report. `timestamp` is optional and defaults to one
/// second after the previous match; `mode` defaults to `pvp`.
pub fn parse_match(
    body: &[u8],
    catalog: &Catalog,
    session_id: &str,
    previous: Option<&MatchRecord>,
) -> std::result::Result<MatchRecord, BTreeMap<String, String>> {
    let mut fields = BTreeMap::new();
    let v: Value = match serde_json::from_slice(body) {
        Ok(Value::Object(m)) => Value::Object(m),
        Ok(_) => {
            field_err(&mut fields, "body", "expected a JSON object");
            return Err(fields);
        }
        Err(e) => {
            field_err(&mut fields, "body", format!("malformed JSON: {e}"));
            return Err(fields);
        }
    };

    let deck = match v.get("deck").and_then(Value::as_array) {
        None => {
            field_err(&mut fields, "deck", "required array of 8 card ids");
            None
        }
        Some(arr) => {
            let cards: Option<Vec<String>> =
                arr.iter().map(|c| c.as_str().map(str::to_string)).collect();
            match cards {
                None => {
                    field_err(&mut fields, "deck", "card ids must be strings");
                    None
                }
                Some(cards) => match validate_deck(&cards, catalog) {
                    Ok(d) => Some(d),
                    Err(m) => {
                        field_err(&mut fields, "deck", m);
                        None
                    }
                },
            }
        }
    };

    let outcome = match v.get("outcome").and_then(Value::as_str) {
        Some("win") => Some(Outcome::Win),
        Some("loss") => Some(Outcome::Loss),
        _ => {
            field_err(&mut fields, "outcome", "required, `win` or `loss`");
            None
        }
    };

    let crown_diff = match v.get("crown_diff").and_then(Value::as_i64) {
        Some(c) if (-3..=3).contains(&c) => Some(c as i8),
        Some(c) => {
            field_err(&mut fields, "crown_diff", format!("{c} outside [-3, 3]"));
            None
        }
        None => {
            field_err(&mut fields, "crown_diff", "required integer");
            None
        }
    };
    if let (Some(o), Some(c)) = (outcome, crown_diff) {
        if let Err(m) = validate_crowns(o, c) {
            field_err(&mut fields, "crown_diff", m);
        }
    }

    let mode = match v.get("mode") {
        None | Some(Value::Null) => Some(Mode::Pvp),
        Some(m) => match m.as_str().and_then(Mode::parse) {
            Some(m) => Some(m),
            None => {
                field_err(&mut fields, "mode", "expected `pvp` or `path_of_legend`");
                None
            }
        },
    };

    let default_ts = previous.map_or(0, |p| p.timestamp + 1);
    let timestamp = match v.get("timestamp") {
        None | Some(Value::Null) => Some(default_ts),
        Some(t) => match t.as_i64() {
            Some(t) if previous.is_some_and(|p| t < p.timestamp) => {
                field_err(
                    &mut fields,
                    "timestamp",
                    "earlier than the previous match in this session",
                );
                None
            }
            Some(t) => Some(t),
            None => {
                field_err(&mut fields, "timestamp", "expected integer seconds");
                None
            }
        },
    };

    match (deck, outcome, crown_diff, mode, timestamp) {
        (
            Some((deck, avg_elixir)),
            Some(outcome),
            Some(crown_diff),
            Some(mode),
            Some(timestamp),
        ) if fields.is_empty() => Ok(MatchRecord {
            player_id: session_id.to_string(),
            seq_index: previous.map_or(0, |p| p.seq_index + 1),
            timestamp,
            deck,
            avg_elixir,
            outcome,
            crown_diff,
            mode,
        }),
        _ => Err(fields),
    }
}

// ── Sessions ────────────────────────────────────────────────────────────

pub struct Session {
    pub history: PlayerHistory,
    log: Option<PathBuf>,
}

impl Session {
    fn append(&mut self, m: MatchRecord) -> Result<()> {
        if let Some(path) = &self.log {
            let mut line = serde_json::to_string(&MatchLine::from(&m))
                .map_err(|e| Error::Model(e.to_string()))?;
            line.push('\n');
            let mut f = OpenOptions::new()
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            f.write_all(line.as_bytes())
                .and_then(|_| f.sync_data())
                .map_err(|e| Error::io(path, e))?;
        }
        self.history.matches.push(m);
        Ok(())
    }
}

pub struct AppState {
    models: Option<Arc<Models>>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    session_dir: Option<PathBuf>,
}

impl AppState {
    /// In-memory sessions only.
    pub fn new(models: Option<Models>) -> Self {
        Self {
            models: models.map(Arc::new),
            sessions: RwLock::default(),
            session_dir: None,
        }
    }

    /// Loads models from `models_dir` (absent or broken models leave the
    /// service up but unavailable) and replays persisted sessions.
    pub fn open(models_dir: &Path, session_dir: &Path) -> Result<Self> {
        let models = match Models::load(models_dir) {
            Ok(m) => Some(m),
            Err(e) => {
                warn!("models not loaded: {e}");
                None
            }
        };
        std::fs::create_dir_all(session_dir).map_err(|e| Error::io(session_dir, e))?;
        let mut state = Self::new(models);
        state.session_dir = Some(session_dir.to_path_buf());
        if let Some(models) = &state.models {
            let replayed = replay_sessions(session_dir, &models.catalog)?;
            info!(sessions = replayed.len(), "session logs replayed");
            let map = state.sessions.get_mut().expect("fresh lock");
            for s in replayed {
                map.insert(s.history.player_id.clone(), Arc::new(Mutex::new(s)));
            }
        }
        Ok(state)
    }

    pub fn models_loaded(&self) -> bool {
        self.models.is_some()
    }

    fn models(&self) -> std::result::Result<Arc<Models>, ApiError> {
        self.models
            .clone()
            .ok_or_else(|| ApiError::Unavailable("models not loaded".into()))
    }

    fn session(&self, id: &str) -> std::result::Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(id.to_string()))
    }

    fn create(&self) -> Result<String> {
        let mut map = self.sessions.write().expect("session map lock");
        let id = loop {
            let id = format!("s{:016x}", rand::random::<u64>());
            let taken = map.contains_key(&id)
                || self
                    .session_dir
                    .as_ref()
                    .is_some_and(|d| d.join(format!("{id}.jsonl")).exists());
            if !taken {
                break id;
            }
        };
        let log = self
            .session_dir
            .as_ref()
            .map(|d| d.join(format!("{id}.jsonl")));
        if let Some(path) = &log {
            std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        }
        let session = Session {
            history: PlayerHistory {
                player_id: id.clone(),
                matches: Vec::new(),
            },
            log,
        };
        map.insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(id)
    }
}

/// Rebuilds every `<id>.jsonl` session in `dir`. Lines that no longer
/// validate against the catalog end that session's replay with a warning.
pub fn replay_sessions(dir: &Path, catalog: &Catalog) -> Result<Vec<Session>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for path in paths {
        let Some(id) = path
            .file_stem()
            .and_then(|s| s.to_str())
            .map(str::to_string)
        else {
            continue;
        };
        let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut session = Session {
            history: PlayerHistory {
                player_id: id.clone(),
                matches: Vec::new(),
            },
            log: Some(path.clone()),
        };
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            match parse_match(
                line.as_bytes(),
                catalog,
                &id,
                session.history.matches.last(),
            ) {
                Ok(m) => session.history.matches.push(m),
                Err(fields) => {
                    warn!(session = %id, line = i + 1, ?fields, "stopping replay at invalid line");
                    break;
                }
            }
        }
        out.push(session);
    }
    Ok(out)
}

// ── Handlers ────────────────────────────────────────────────────────────

type Shared = Arc<AppState>;

async fn health(State(st): State<Shared>) -> Json<Value> {
    let n = st.sessions.read().expect("session map lock").len();
    Json(json!({
        "status": if st.models_loaded() { "ok" } else { "degraded" },
        "models_loaded": st.models_loaded(),
        "sessions": n,
    }))
}

async fn create_session(
    State(st): State<Shared>,
) -> std::result::Result<Json<SessionCreated>, ApiError> {
    st.models()?;
    let session_id = st.create().map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(Json(SessionCreated { session_id }))
}

async fn report_match(
    State(st): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> std::result::Result<Json<MatchAck>, ApiError> {
    let models = st.models()?;
    let session = st.session(&id)?;
    let mut s = session.lock().await;
    let m = parse_match(&body, &models.catalog, &id, s.history.matches.last())
        .map_err(ApiError::Invalid)?;
    let deck_changed = s.history.matches.last().is_some_and(|p| p.deck != m.deck);
    let state = models
        .archetype
        .assign(&m.deck, &models.catalog)
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    s.append(m).map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(Json(MatchAck {
        ok: true,
        match_count: s.history.len(),
        deck_changed,
        state,
    }))
}

async fn get_advice(
    State(st): State<Shared>,
    UrlPath(id): UrlPath<String>,
) -> std::result::Result<Json<AdviceResponse>, ApiError> {
    let models = st.models()?;
    let history = st.session(&id)?.lock().await.history.clone();
    let n = history.len();
    let advice = tokio::task::spawn_blocking(move || models.advise(&history))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(Json(AdviceResponse::from_advice(&advice, n)))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/session", post(create_session))
        .route("/session/{id}/match", post(report_match))
        .route("/session/{id}/advice", get(get_advice))
        .with_state(state)
}

/// Binds `0.0.0.0:port` and serves until the process is stopped.
pub async fn serve(state: Arc<AppState>, port: u16) -> Result<()> {
    let addr = std::net::SocketAddr::from(([0, 0, 0, 0], port));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::Config(format!("cannot bind {addr}: {e}")))?;
    info!(%addr, models_loaded = state.models_loaded(), "advisor listening");
    axum::serve(listener, router(state))
        .await
        .map_err(|e| Error::Config(format!("server error: {e}")))
}
