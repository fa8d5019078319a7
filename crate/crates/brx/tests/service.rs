//! The HTTP API end to end, against an in-process server in echo mock mode.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use brx::service::{router, AppState, ServiceConfig};
use brx_core::explainer::LlmClient;
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};

struct Server {
    base: String,
    http: Client,
}

impl Server {
    async fn start(config: ServiceConfig) -> Self {
        let state = Arc::new(AppState::new(config, LlmClient::echo()).unwrap());
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr: SocketAddr = listener.local_addr().unwrap();
        tokio::spawn(async move { axum::serve(listener, router(state)).await.unwrap() });
        Self {
            base: format!("http://{addr}"),
            http: Client::new(),
        }
    }

    async fn default() -> Self {
        Self::start(small_config()).await
    }

    async fn get(&self, path: &str) -> (StatusCode, Value) {
        let r = self.http.get(format!("{}{path}", self.base)).send().await.unwrap();
        let status = r.status();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    async fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        let r = self
            .http
            .post(format!("{}{path}", self.base))
            .json(&body)
            .send()
            .await
            .unwrap();
        let status = r.status();
        (status, r.json().await.unwrap_or(Value::Null))
    }

    async fn new_episode(&self, body: Value) -> Value {
        let (status, v) = self.post("/episodes", body).await;
        assert_eq!(status, StatusCode::CREATED, "{v}");
        v
    }
}

fn small_config() -> ServiceConfig {
    ServiceConfig {
        train_episodes: 150,
        ..ServiceConfig::default()
    }
}

fn feature_names(path: &Value) -> Vec<&str> {
    path["predicates"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["feature"].as_str().unwrap())
        .collect()
}

#[tokio::test]
async fn episode_lifecycle_runs_to_rescue() {
    let s = Server::default().await;
    let ep = s.new_episode(json!({"seed": 7})).await;
    let id = ep["id"].as_u64().unwrap();
    assert_eq!(ep["state"]["rooms"].as_array().unwrap().len(), 4);
    assert!(ep["state"]["rooms"].as_array().unwrap().iter().all(|r| r.as_array().unwrap().len() == 5));
    assert_eq!(ep["state"]["whose_turn"], "engineer");
    assert_eq!(ep["terminal"], false);

    let (status, again) = s.get(&format!("/episodes/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(again["state"], ep["state"]);

    let (status, one) = s.post(&format!("/episodes/{id}/autostep"), json!({})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(one["log"].as_array().unwrap().len(), 1);
    assert_eq!(one["state"]["whose_turn"], "medic");

    let (status, done) = s.post(&format!("/episodes/{id}/autostep"), json!({"until_terminal": true})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(done["terminal"], true);
    assert_eq!(done["state"]["rescued_count"], done["victims_total"]);
}

#[tokio::test]
async fn manual_steps_enforce_turns_and_legality() {
    let s = Server::default().await;
    let ep = s.new_episode(json!({"seed": 3})).await;
    let id = ep["id"].as_u64().unwrap();

    let (status, err) = s
        .post(&format!("/episodes/{id}/step"), json!({"agent": "medic", "action": "Wait"}))
        .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["field"], "agent");

    let legal: Vec<String> = serde_json::from_value(ep["legal_actions"]["engineer"].clone()).unwrap();
    let illegal = ["MoveNorth", "MoveSouth", "MoveEast", "MoveWest", "RemoveRubble", "TriageVictim"]
        .into_iter()
        .find(|a| !legal.iter().any(|l| l == a))
        .expect("some action is illegal at the start");
    let (status, err) = s
        .post(&format!("/episodes/{id}/step"), json!({"agent": "engineer", "action": illegal}))
        .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["field"], "action");

    let (status, next) = s
        .post(&format!("/episodes/{id}/step"), json!({"agent": "engineer", "action": legal[0]}))
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(next["state"]["timestep"], 1);
    assert_eq!(next["log"][0]["agent"], "engineer");
}

#[tokio::test]
async fn invalid_requests_name_the_field() {
    let s = Server::default().await;
    let (status, err) = s.post("/episodes", json!({"n_victims": 40})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["field"], "n_victims");

    let (status, err) = s.post("/episodes", json!({"colour": "red"})).await;
    assert!(status.is_client_error());
    assert_eq!(err["field"], "colour");

    let (status, err) = s.post("/explanations", json!({"episode_id": 99, "condition": "br_path"})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["field"], "episode_id");

    let id = s.new_episode(json!({})).await["id"].as_u64().unwrap();
    let (status, err) = s.post("/explanations", json!({"episode_id": id, "condition": "telepathy"})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["field"], "condition");

    let (status, err) = s.post("/explanations", json!({"episode_id": id})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["field"], "condition");

    let (status, err) = s.post(&format!("/episodes/{id}/autostep"), json!({"steps": 20000})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["field"], "steps");

    let (status, _) = s.get("/episodes/abc").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = s.get("/episodes/12345").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, err) = s.get("/trees/pilot").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["field"], "role");

    let r = s
        .http
        .post(format!("{}/episodes", s.base))
        .body("{}")
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::UNSUPPORTED_MEDIA_TYPE);
}

#[tokio::test]
async fn trees_are_served_per_role_and_policy() {
    let s = Server::default().await;
    let (status, tree) = s.get("/trees/medic").await;
    assert_eq!(status, StatusCode::OK);
    assert!(!tree["nodes"].as_array().unwrap().is_empty());
    let (status, north) = s.get("/trees/engineer?policy=fixed_north").await;
    assert_eq!(status, StatusCode::OK);
    assert_ne!(north, tree);
    let (status, _) = s.get("/trees/engineer?policy=psychic").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn explanation_sessions_freeze_context_and_grow_by_turns() {
    let s = Server::default().await;
    let id = s.new_episode(json!({"seed": 11})).await["id"].as_u64().unwrap();
    for condition in ["br_path", "br_states", "no_br"] {
        let (status, ex) = s
            .post("/explanations", json!({"episode_id": id, "condition": condition}))
            .await;
        assert_eq!(status, StatusCode::CREATED, "{ex}");
        assert_eq!(ex["condition"], condition);
        assert_eq!(ex["agent"], "engineer");
        assert_eq!(ex["history"].as_array().unwrap().len(), 3);
        assert!(!ex["explanation"].as_str().unwrap().is_empty());
        assert!(ex["template"].as_str().unwrap().starts_with("The engineer"));
    }

    let (status, ex) = s.post("/explanations", json!({"episode_id": id, "condition": "br_path"})).await;
    assert_eq!(status, StatusCode::CREATED);
    let sid = ex["id"].as_u64().unwrap();
    let frozen = ex["timestep"].clone();

    // the episode moves on; the session keeps its snapshot
    s.post(&format!("/episodes/{id}/autostep"), json!({"steps": 6})).await;
    let (status, turn) = s
        .post(&format!("/explanations/{sid}/chat"), json!({"text": "Why not wait?"}))
        .await;
    assert_eq!(status, StatusCode::OK, "{turn}");
    assert_eq!(turn["history"].as_array().unwrap().len(), 5);
    assert_eq!(turn["history"][3]["content"], "Why not wait?");
    assert_eq!(turn["counterfactual"], Value::Null);

    let (status, got) = s.get(&format!("/explanations/{sid}")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(got["timestep"], frozen);
    assert_eq!(got["history"].as_array().unwrap().len(), 5);

    let (status, err) = s.post(&format!("/explanations/{sid}/chat"), json!({"text": "  "})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["field"], "text");
    let (status, err) = s
        .post(&format!("/explanations/{sid}/counterfactual"), json!({"flips": {"mood": 1}}))
        .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["field"], "flips");
    let (status, err) = s
        .post(&format!("/explanations/{sid}/counterfactual"), json!({"flips": {"victim_in_room": 2}}))
        .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["field"], "flips");
    // failed turns leave the transcript untouched
    let (_, got) = s.get(&format!("/explanations/{sid}")).await;
    assert_eq!(got["history"].as_array().unwrap().len(), 5);
}

#[tokio::test]
async fn counterfactual_victim_flip_makes_the_medic_triage() {
    let s = Server::default().await;
    // Walk expert episodes until the medic navigates on a path that consults victim_in_room.
    for seed in 0..20u64 {
        let id = s.new_episode(json!({"seed": seed})).await["id"].as_u64().unwrap();
        for _ in 0..60 {
            let (_, ep) = s.get(&format!("/episodes/{id}")).await;
            if ep["terminal"] == true {
                break;
            }
            if ep["state"]["whose_turn"] == "medic" {
                let (status, ex) = s
                    .post("/explanations", json!({"episode_id": id, "condition": "br_path"}))
                    .await;
                assert_eq!(status, StatusCode::CREATED);
                let navigating = ex["action"].as_str().unwrap().starts_with("Move");
                if navigating && feature_names(&ex["path"]).contains(&"victim_in_room") {
                    let sid = ex["id"].as_u64().unwrap();
                    let (status, turn) = s
                        .post(
                            &format!("/explanations/{sid}/counterfactual"),
                            json!({"flips": {"victim_in_room": 1}}),
                        )
                        .await;
                    assert_eq!(status, StatusCode::OK, "{turn}");
                    let cf = &turn["counterfactual"];
                    assert_eq!(cf["action"], "TriageVictim");
                    assert_eq!(cf["changed"], true);
                    assert!(cf["template"].as_str().unwrap().contains("triaged the victim"));
                    // the echo mock grounds its reply in the tree's answer
                    assert!(turn["reply"].as_str().unwrap().contains("TriageVictim") || turn["reply"].as_str().unwrap().contains("triage"));
                    assert_eq!(turn["history"].as_array().unwrap().len(), 5);
                    return;
                }
            }
            s.post(&format!("/episodes/{id}/autostep"), json!({})).await;
        }
    }
    panic!("no navigating medic state consulted victim_in_room");
}

#[tokio::test]
async fn study_reports_and_event_log() {
    let dir = tempfile::tempdir().unwrap();
    let reports: PathBuf = dir.path().join("reports");
    std::fs::create_dir_all(reports.join("run1")).unwrap();
    std::fs::write(reports.join("run1/summary.txt"), "condition br_path precision 1.0\n").unwrap();
    std::fs::write(reports.join("run1/aggregate.csv"), "policy,condition\n").unwrap();
    std::fs::create_dir_all(reports.join("empty")).unwrap();
    let log = dir.path().join("events.jsonl");

    let s = Server::start(ServiceConfig {
        reports_dir: Some(reports),
        event_log: Some(log.clone()),
        ..small_config()
    })
    .await;
    let (status, list) = s.get("/study/reports").await;
    assert_eq!(status, StatusCode::OK);
    let list = list.as_array().unwrap();
    assert_eq!(list.len(), 1);
    assert_eq!(list[0]["name"], "run1");
    assert_eq!(list[0]["aggregate_csv"], "policy,condition\n");

    let id = s.new_episode(json!({})).await["id"].as_u64().unwrap();
    s.post(&format!("/episodes/{id}/autostep"), json!({"steps": 2})).await;
    let events: Vec<Value> = std::fs::read_to_string(&log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let kinds: Vec<&str> = events.iter().map(|e| e["event"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["episode_created", "autostep"]);
    assert_eq!(events[1]["data"]["steps"], 2);
}

#[tokio::test]
async fn static_files_are_served_as_fallback() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<h1>brx</h1>").unwrap();
    let s = Server::start(ServiceConfig {
        static_dir: Some(dir.path().to_path_buf()),
        ..small_config()
    })
    .await;
    let body = s.http.get(format!("{}/index.html", s.base)).send().await.unwrap().text().await.unwrap();
    assert_eq!(body, "<h1>brx</h1>");
}
