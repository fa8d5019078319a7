//! HTTP+JSON service over episodes, trees and explanation sessions.
//!
//! | method | path | body |
//! |---|---|---|
//! | POST | `/episodes` | [`NewEpisode`] |
//! | GET | `/episodes/{id}` | |
//! | POST | `/episodes/{id}/step` | [`StepRequest`] |
//! | POST | `/episodes/{id}/autostep` | [`AutostepRequest`] |
//! | GET | `/trees/{role}?policy=expert` | |
//! | POST | `/explanations` | [`NewExplanation`] |
//! | GET | `/explanations/{id}` | |
//! | POST | `/explanations/{id}/chat` | [`ChatRequest`] |
//! | POST | `/explanations/{id}/counterfactual` | [`CounterfactualRequest`] |
//! | GET | `/study/reports` | |
//!
//! Errors are `{"error": "...", "field": "..."}` with a 4xx status for bad
//! input. Episodes and sessions live in memory; each has its own lock, so
//! writes to one never wait on another. Model calls run on the blocking
//! pool and keep the session locked until the turn is recorded.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use brx_core::behavior::{extract_path, CounterfactualQuery, DecisionPath, PhraseTable};
use brx_core::distill::{build_dataset, fit_tree, DecisionTree, TreeParams};
use brx_core::env::{is_terminal, legal_actions, new_scenario, step, Action, AgentId, RoomCoord, ScenarioConfig, WorldState};
use brx_core::explainer::{
    build_prompt, open_session, sample_state_actions, ChatMessage, Condition, ConditionKind, Evidence,
    ExplanationSession, FrozenContext, LlmClient, PromptConfig, StateSummary,
};
use brx_core::policy::{Policy, PolicyKind, PolicyPair};
use brx_core::rollout::{sample_rollouts, RolloutConfig, Trajectory};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{Mutex, RwLock};
use tower_http::services::ServeDir;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Episodes per policy used to distill the trees behind explanations.
    pub train_episodes: usize,
    pub seed: u64,
    pub tree_params: TreeParams,
    pub static_dir: Option<PathBuf>,
    pub event_log: Option<PathBuf>,
    pub reports_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            train_episodes: 1000,
            seed: 0,
            tree_params: TreeParams::default(),
            static_dir: None,
            event_log: None,
            reports_dir: None,
        }
    }
}

/// Trees and training trajectories for one policy, fitted on first use.
struct PolicyModels {
    trees: [Arc<DecisionTree>; 2],
    training: Vec<Trajectory>,
}

struct Episode {
    id: u64,
    policy: PolicyKind,
    config: ScenarioConfig,
    state: WorldState,
    log: Vec<StepRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub timestep: u32,
    pub agent: AgentId,
    pub action: Action,
}

pub struct AppState {
    config: ServiceConfig,
    client: Arc<LlmClient>,
    prompts: PromptConfig,
    phrases: Arc<PhraseTable>,
    episodes: RwLock<HashMap<u64, Arc<Mutex<Episode>>>>,
    sessions: RwLock<HashMap<u64, Arc<Mutex<ExplanationSession>>>>,
    models: Mutex<HashMap<PolicyKind, Arc<PolicyModels>>>,
    next_episode: AtomicU64,
    next_session: AtomicU64,
    event_log: Option<std::sync::Mutex<File>>,
}

impl AppState {
    pub fn new(config: ServiceConfig, client: LlmClient) -> anyhow::Result<Self> {
        let event_log = match &config.event_log {
            Some(p) => Some(std::sync::Mutex::new(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .with_context(|| format!("opening event log {}", p.display()))?,
            )),
            None => None,
        };
        Ok(Self {
            config,
            client: Arc::new(client),
            prompts: PromptConfig::default(),
            phrases: Arc::new(PhraseTable::default()),
            episodes: RwLock::default(),
            sessions: RwLock::default(),
            models: Mutex::default(),
            next_episode: AtomicU64::new(1),
            next_session: AtomicU64::new(1),
            event_log,
        })
    }

    fn record(&self, kind: &str, data: Value) {
        let Some(log) = &self.event_log else { return };
        let ts = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis());
        let line = json!({"ts_ms": ts, "event": kind, "data": data});
        let mut f = log.lock().unwrap_or_else(|e| e.into_inner());
        // The log is an audit aid; a failed write must not fail the request.
        let _ = writeln!(f, "{line}");
    }

    async fn models(&self, policy: PolicyKind) -> Result<Arc<PolicyModels>, ApiError> {
        let mut cache = self.models.lock().await;
        if let Some(m) = cache.get(&policy) {
            return Ok(Arc::clone(m));
        }
        let (episodes, seed, params) = (self.config.train_episodes, self.config.seed, self.config.tree_params);
        let models = tokio::task::spawn_blocking(move || -> anyhow::Result<PolicyModels> {
            let training = sample_rollouts(&PolicyPair::uniform(policy), &RolloutConfig::new(episodes, seed))?;
            let fit = |role| -> anyhow::Result<Arc<DecisionTree>> {
                Ok(Arc::new(fit_tree(&build_dataset(&training, role)?, params)?))
            };
            let trees = [fit(AgentId::Engineer)?, fit(AgentId::Medic)?];
            Ok(PolicyModels { trees, training })
        })
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| ApiError::internal(e.to_string()))?;
        let models = Arc::new(models);
        cache.insert(policy, Arc::clone(&models));
        Ok(models)
    }

    async fn episode(&self, id: u64) -> Result<Arc<Mutex<Episode>>, ApiError> {
        self.episodes
            .read()
            .await
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("episode {id} not found")))
    }

    async fn session(&self, id: u64) -> Result<Arc<Mutex<ExplanationSession>>, ApiError> {
        self.sessions
            .read()
            .await
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("explanation {id} not found")))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    field: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            field: None,
        }
    }

    fn field(status: StatusCode, field: &str, message: impl Into<String>) -> Self {
        Self {
            field: Some(field.to_string()),
            ..Self::new(status, message)
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }

    fn unprocessable(field: &str, message: impl Into<String>) -> Self {
        Self::field(StatusCode::UNPROCESSABLE_ENTITY, field, message)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        let status = match r {
            JsonRejection::JsonDataError(_) => StatusCode::UNPROCESSABLE_ENTITY,
            JsonRejection::MissingJsonContentType(_) => StatusCode::UNSUPPORTED_MEDIA_TYPE,
            _ => StatusCode::BAD_REQUEST,
        };
        let text = r.body_text();
        Self {
            field: rejected_field(&text),
            ..Self::new(status, text)
        }
    }
}

/// Best-effort name of the offending field in a body rejection: the
/// deserializer's path prefix (`condition: unknown variant ...`) or the
/// backticked name in `missing field` / `unknown field` messages.
fn rejected_field(text: &str) -> Option<String> {
    let detail = text.rsplit_once("target type: ").map_or(text, |(_, d)| d);
    for marker in ["missing field `", "unknown field `"] {
        if let Some(rest) = detail.split_once(marker).map(|(_, r)| r) {
            return rest.split('`').next().map(str::to_string);
        }
    }
    let (head, _) = detail.split_once(": ")?;
    let is_path = !head.is_empty() && head.chars().all(|c| c.is_ascii_alphanumeric() || "_.[]".contains(c));
    is_path.then(|| head.to_string())
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({"error": self.message});
        if let Some(f) = self.field {
            body["field"] = json!(f);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;
type Body<T> = Result<Json<T>, JsonRejection>;

fn parse_id(raw: &str, what: &str) -> ApiResult<u64> {
    raw.parse()
        .map_err(|_| ApiError::field(StatusCode::BAD_REQUEST, "id", format!("`{raw}` is not a valid {what} id")))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewEpisode {
    pub seed: Option<u64>,
    pub n_victims: Option<u32>,
    pub n_rubble: Option<u32>,
    pub p_hidden: Option<f64>,
    pub engineer_start: Option<RoomCoord>,
    pub medic_start: Option<RoomCoord>,
    /// Policy pair used by autostep and for explanations.
    pub policy: Option<PolicyKind>,
}

#[derive(Debug, Serialize)]
pub struct LegalActions {
    pub engineer: Vec<Action>,
    pub medic: Vec<Action>,
}

#[derive(Debug, Serialize)]
pub struct EpisodeView {
    pub id: u64,
    pub policy: PolicyKind,
    pub config: ScenarioConfig,
    pub state: WorldState,
    pub terminal: bool,
    pub victims_total: u32,
    pub legal_actions: LegalActions,
    pub log: Vec<StepRecord>,
}

fn view(e: &Episode) -> EpisodeView {
    EpisodeView {
        id: e.id,
        policy: e.policy,
        config: e.config.clone(),
        state: e.state.clone(),
        terminal: is_terminal(&e.state),
        victims_total: e.state.victims_total(),
        legal_actions: LegalActions {
            engineer: legal_actions(&e.state, AgentId::Engineer),
            medic: legal_actions(&e.state, AgentId::Medic),
        },
        log: e.log.clone(),
    }
}

async fn create_episode(State(app): State<Arc<AppState>>, body: Body<NewEpisode>) -> ApiResult<(StatusCode, Json<EpisodeView>)> {
    let Json(req) = body?;
    let d = ScenarioConfig::default();
    let config = ScenarioConfig {
        seed: req.seed.unwrap_or(d.seed),
        n_victims: req.n_victims.unwrap_or(d.n_victims),
        n_rubble: req.n_rubble.unwrap_or(d.n_rubble),
        p_hidden: req.p_hidden.unwrap_or(d.p_hidden),
        engineer_start: req.engineer_start.unwrap_or(d.engineer_start),
        medic_start: req.medic_start.unwrap_or(d.medic_start),
    };
    let state = new_scenario(&config).map_err(|e| match &e {
        brx_core::env::EnvError::InvalidConfig { field, .. } => ApiError::unprocessable(field, e.to_string()),
        _ => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
    })?;
    let id = app.next_episode.fetch_add(1, Ordering::SeqCst);
    let episode = Episode {
        id,
        policy: req.policy.unwrap_or(PolicyKind::Expert),
        config,
        state,
        log: Vec::new(),
    };
    let v = view(&episode);
    app.episodes.write().await.insert(id, Arc::new(Mutex::new(episode)));
    app.record("episode_created", json!({"id": id, "config": v.config, "policy": v.policy}));
    Ok((StatusCode::CREATED, Json(v)))
}

async fn get_episode(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<EpisodeView>> {
    let ep = app.episode(parse_id(&id, "episode")?).await?;
    let e = ep.lock().await;
    Ok(Json(view(&e)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRequest {
    pub agent: AgentId,
    pub action: Action,
}

fn apply(e: &mut Episode, agent: AgentId, action: Action) -> ApiResult<()> {
    use brx_core::env::EnvError;
    let next = step(&e.state, agent, action).map_err(|err| match err {
        EnvError::OutOfTurn { .. } => ApiError::field(StatusCode::CONFLICT, "agent", err.to_string()),
        _ => ApiError::unprocessable("action", err.to_string()),
    })?;
    e.log.push(StepRecord {
        timestep: e.state.timestep,
        agent,
        action,
    });
    e.state = next;
    Ok(())
}

async fn step_episode(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Body<StepRequest>,
) -> ApiResult<Json<EpisodeView>> {
    let Json(req) = body?;
    let ep = app.episode(parse_id(&id, "episode")?).await?;
    let mut e = ep.lock().await;
    apply(&mut e, req.agent, req.action)?;
    app.record("step", json!({"episode": e.id, "agent": req.agent, "action": req.action}));
    Ok(Json(view(&e)))
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutostepRequest {
    /// Number of agent turns to take (default 1, or 400 with `until_terminal`).
    pub steps: Option<u32>,
    /// Stop early once every victim is rescued.
    pub until_terminal: bool,
}

async fn autostep(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Body<AutostepRequest>,
) -> ApiResult<Json<EpisodeView>> {
    let Json(req) = body?;
    let limit = req.steps.unwrap_or(if req.until_terminal { 400 } else { 1 });
    if limit > 10_000 {
        return Err(ApiError::unprocessable("steps", "steps: at most 10000 per request"));
    }
    let ep = app.episode(parse_id(&id, "episode")?).await?;
    let mut e = ep.lock().await;
    let pair = PolicyPair::uniform(e.policy);
    let mut taken = 0;
    while taken < limit && !is_terminal(&e.state) {
        let agent = e.state.whose_turn;
        let action = pair.for_agent(agent).act(&e.state);
        apply(&mut e, agent, action)?;
        taken += 1;
    }
    app.record("autostep", json!({"episode": e.id, "steps": taken}));
    Ok(Json(view(&e)))
}

#[derive(Debug, Deserialize)]
pub struct TreeQuery {
    pub policy: Option<PolicyKind>,
}

async fn get_tree(
    State(app): State<Arc<AppState>>,
    Path(role): Path<String>,
    query: Result<Query<TreeQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let Query(q) = query?;
    let role: AgentId = role
        .parse()
        .map_err(|e: String| ApiError::field(StatusCode::BAD_REQUEST, "role", e))?;
    let models = app.models(q.policy.unwrap_or(PolicyKind::Expert)).await?;
    let tree: Value = serde_json::from_str(&models.trees[role as usize].to_json()).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(Json(tree))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewExplanation {
    pub episode_id: u64,
    /// Defaults to the agent whose turn it is.
    pub agent: Option<AgentId>,
    pub condition: ConditionKind,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub sample_seed: Option<u64>,
    /// Include the tree's leaf confidence in the prompt (default true).
    #[serde(default)]
    pub include_confidence: Option<bool>,
}

#[derive(Debug, Serialize)]
pub struct ExplanationView {
    pub id: u64,
    pub episode_id: u64,
    pub condition: ConditionKind,
    pub agent: AgentId,
    pub timestep: u32,
    pub action: Action,
    pub path: Option<DecisionPath>,
    pub template: Option<String>,
    pub explanation: String,
    pub history: Vec<ChatMessage>,
}

fn explanation_view(id: u64, episode_id: u64, s: &ExplanationSession, phrases: &PhraseTable) -> ExplanationView {
    let path = s.context.path.clone();
    ExplanationView {
        id,
        episode_id,
        condition: s.condition,
        agent: s.context.state.agent,
        timestep: s.context.state.timestep,
        action: s.context.action,
        template: path.as_ref().and_then(|p| phrases.render_template(p).ok()),
        path,
        explanation: s.initial_explanation().to_string(),
        history: s.history().to_vec(),
    }
}

fn episode_of(session_id: &str) -> u64 {
    session_id.split('-').next().and_then(|x| x.parse().ok()).unwrap_or(0)
}

async fn create_explanation(State(app): State<Arc<AppState>>, body: Body<NewExplanation>) -> ApiResult<(StatusCode, Json<ExplanationView>)> {
    let Json(req) = body?;
    let ep = app.episode(req.episode_id).await.map_err(|mut e| {
        e.status = StatusCode::UNPROCESSABLE_ENTITY;
        e.field = Some("episode_id".into());
        e
    })?;
    // Freeze the snapshot before any model call so the episode can move on.
    let (state, policy) = {
        let e = ep.lock().await;
        (e.state.clone(), e.policy)
    };
    let agent = req.agent.unwrap_or(state.whose_turn);
    let models = app.models(policy).await?;
    let tree = Arc::clone(&models.trees[agent as usize]);
    let summary = StateSummary::from_state(&state, agent);
    let action = Policy::new(policy, agent).act(&state);
    let path = extract_path(&tree, &summary.features, agent).map_err(|e| ApiError::internal(e.to_string()))?;
    let k = req.k.unwrap_or(5);
    let seed = req.sample_seed.unwrap_or(0);
    let (condition, evidence) = match req.condition {
        ConditionKind::BrPath => (Condition::br_path(), Evidence::Path(path.clone())),
        ConditionKind::BrStates => {
            let samples = sample_state_actions(&models.training, agent, k, seed)
                .map_err(|e| ApiError::unprocessable("k", e.to_string()))?;
            (Condition::br_states(k, seed), Evidence::Samples(samples))
        }
        ConditionKind::NoBr => (Condition::no_br(), Evidence::State(summary.clone())),
    };
    let prompt = build_prompt(
        &app.prompts,
        &app.phrases,
        &condition,
        &evidence,
        action,
        agent,
        req.include_confidence.unwrap_or(true),
    )
    .map_err(|e| ApiError::internal(e.to_string()))?;
    let ctx = FrozenContext {
        state: summary,
        action,
        path: Some(path),
    };
    let id = app.next_session.fetch_add(1, Ordering::SeqCst);
    let client = Arc::clone(&app.client);
    let sid = format!("{}-{id}", req.episode_id);
    let session = tokio::task::spawn_blocking(move || open_session(sid, prompt, ctx, Some(tree), &client))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| ApiError::new(StatusCode::BAD_GATEWAY, e.to_string()))?;
    let v = explanation_view(id, req.episode_id, &session, &app.phrases);
    app.sessions.write().await.insert(id, Arc::new(Mutex::new(session)));
    app.record(
        "explanation_created",
        json!({"id": id, "episode": req.episode_id, "condition": req.condition, "agent": agent, "timestep": v.timestep}),
    );
    Ok((StatusCode::CREATED, Json(v)))
}

async fn get_explanation(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<ExplanationView>> {
    let id = parse_id(&id, "explanation")?;
    let s = app.session(id).await?;
    let s = s.lock().await;
    Ok(Json(explanation_view(id, episode_of(&s.id), &s, &app.phrases)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatRequest {
    pub text: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterfactualRequest {
    /// Feature name → new value.
    pub flips: BTreeMap<String, f64>,
    /// Question sent with the tree's answer (default: a generic what-if).
    #[serde(default)]
    pub text: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct CounterfactualView {
    pub action: Action,
    pub changed: bool,
    pub path: DecisionPath,
    pub template: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct TurnView {
    pub reply: String,
    pub counterfactual: Option<CounterfactualView>,
    pub history: Vec<ChatMessage>,
}

async fn turn(app: &AppState, id: u64, text: String, query: Option<CounterfactualQuery>) -> ApiResult<Json<TurnView>> {
    let s = app.session(id).await?;
    let mut guard = s.lock().await;
    let mut session = guard.clone();
    let client = Arc::clone(&app.client);
    let phrases = Arc::clone(&app.phrases);
    let (session, result) = tokio::task::spawn_blocking(move || {
        let r = session.follow_up(&text, query.as_ref(), &client, &phrases);
        (session, r)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?;
    let (reply, outcome) = result.map_err(|e| match e {
        brx_core::explainer::ExplainError::Llm(_) => ApiError::new(StatusCode::BAD_GATEWAY, e.to_string()),
        _ => ApiError::unprocessable("flips", e.to_string()),
    })?;
    *guard = session;
    app.record("turn", json!({"explanation": id, "history": guard.history().len()}));
    Ok(Json(TurnView {
        reply,
        counterfactual: outcome.map(|o| CounterfactualView {
            action: o.path.action,
            changed: o.changed,
            template: app.phrases.render_template(&o.path).ok(),
            path: o.path,
        }),
        history: guard.history().to_vec(),
    }))
}

async fn chat(State(app): State<Arc<AppState>>, Path(id): Path<String>, body: Body<ChatRequest>) -> ApiResult<Json<TurnView>> {
    let Json(req) = body?;
    if req.text.trim().is_empty() {
        return Err(ApiError::unprocessable("text", "text: must not be empty"));
    }
    turn(&app, parse_id(&id, "explanation")?, req.text, None).await
}

async fn counterfactual(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Body<CounterfactualRequest>,
) -> ApiResult<Json<TurnView>> {
    let Json(req) = body?;
    if req.flips.is_empty() {
        return Err(ApiError::unprocessable("flips", "flips: at least one feature is required"));
    }
    let query = CounterfactualQuery::from_named(req.flips.iter().map(|(k, v)| (k.as_str(), *v)))
        .map_err(|e| ApiError::unprocessable("flips", e.to_string()))?;
    let text = req.text.unwrap_or_else(|| {
        let parts: Vec<String> = req.flips.iter().map(|(k, v)| format!("{k} were {v}")).collect();
        format!("What would the agent do if {}?", parts.join(" and "))
    });
    turn(&app, parse_id(&id, "explanation")?, text, Some(query)).await
}

#[derive(Debug, Serialize)]
pub struct StudyReportView {
    pub name: String,
    pub summary: String,
    pub aggregate_csv: Option<String>,
}

async fn study_reports(State(app): State<Arc<AppState>>) -> ApiResult<Json<Vec<StudyReportView>>> {
    let Some(dir) = app.config.reports_dir.clone() else {
        return Ok(Json(Vec::new()));
    };
    let reports = tokio::task::spawn_blocking(move || -> std::io::Result<Vec<StudyReportView>> {
        let mut candidates = vec![dir.clone()];
        for entry in std::fs::read_dir(&dir)? {
            let p = entry?.path();
            if p.is_dir() {
                candidates.push(p);
            }
        }
        candidates.sort();
        let mut out = Vec::new();
        for c in candidates {
            let Ok(summary) = std::fs::read_to_string(c.join("summary.txt")) else { continue };
            let name = if c == dir {
                ".".to_string()
            } else {
                c.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned())
            };
            out.push(StudyReportView {
                name,
                summary,
                aggregate_csv: std::fs::read_to_string(c.join("aggregate.csv")).ok(),
            });
        }
        Ok(out)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
    .map_err(|e| ApiError::internal(format!("reading reports: {e}")))?;
    Ok(Json(reports))
}

pub fn router(state: Arc<AppState>) -> Router {
    let static_dir = state.config.static_dir.clone();
    let api = Router::new()
        .route("/episodes", post(create_episode))
        .route("/episodes/{id}", get(get_episode))
        .route("/episodes/{id}/step", post(step_episode))
        .route("/episodes/{id}/autostep", post(autostep))
        .route("/trees/{role}", get(get_tree))
        .route("/explanations", post(create_explanation))
        .route("/explanations/{id}", get(get_explanation))
        .route("/explanations/{id}/chat", post(chat))
        .route("/explanations/{id}/counterfactual", post(counterfactual))
        .route("/study/reports", get(study_reports))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Bind and serve until the process is stopped.
pub async fn serve(addr: SocketAddr, config: ServiceConfig, client: LlmClient) -> anyhow::Result<()> {
    let state = Arc::new(AppState::new(config, client)?);
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}
