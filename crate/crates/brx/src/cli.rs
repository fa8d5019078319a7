//! Command-line pipeline: `rollout → distill → explain → study`, plus
//! `replay` audits and the HTTP service.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use brx_core::behavior::{extract_path, DecisionPath, PhraseTable};
use brx_core::distill::{build_dataset, fidelity, fit_tree, replay_agreement, DecisionTree, TreeParams};
use brx_core::env::{Action, AgentId, ScenarioConfig, WorldState};
use brx_core::eval::{prepare_study, run_study, FeatureLexicon, StudyGrid};
use brx_core::explainer::{
    build_prompt, open_session, sample_state_actions, Condition, ConditionKind, Evidence, FrozenContext, LlmClient,
    MockScript, ModelConfig, PromptConfig, StateSummary,
};
use brx_core::policy::{Policy, PolicyKind, PolicyPair};
use brx_core::rollout::{read_ndjson, sample_rollouts, write_ndjson, RolloutConfig, Trajectory};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::service::{self, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "brx", version, about = "Explain agent behavior with decision-tree behavior representations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run seeded episodes and write a trajectory file (one JSON step per line).
    Rollout(RolloutArgs),
    /// Fit a decision tree per role from a trajectory file.
    Distill(DistillArgs),
    /// Build the prompt for one recorded decision and, unless --prompt-only, ask the model.
    Explain(ExplainArgs),
    /// Run the policy × condition grounding study.
    Study(StudyArgs),
    /// Audit a tree against the actions recorded in a trajectory file.
    Replay(ReplayArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MockKind {
    /// Repeat only the evidence found in the query.
    Echo,
    /// Canned replies from a rule file.
    Scripted,
}

/// Which model answers. Mock mode needs no network or credentials.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Use a deterministic mock model (default: echo, unless --remote).
    #[arg(long, env = "BRX_MOCK", value_enum)]
    pub mock: Option<MockKind>,
    /// Rule file for the scripted mock (defaults to the bundled script).
    #[arg(long, env = "BRX_MOCK_SCRIPT")]
    pub mock_script: Option<PathBuf>,
    /// Call an OpenAI-compatible chat-completions endpoint.
    #[arg(long, env = "BRX_REMOTE", conflicts_with = "mock")]
    pub remote: bool,
    #[arg(long, env = "BRX_LLM_BASE_URL", default_value = "https://api.openai.com/v1")]
    pub base_url: String,
    #[arg(long, env = "BRX_LLM_MODEL", default_value = "gpt-4")]
    pub model: String,
    /// Environment variable that holds the API key.
    #[arg(long, default_value = "OPENAI_API_KEY")]
    pub api_key_env: String,
    #[arg(long, default_value_t = 0.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 512)]
    pub max_tokens: u32,
    #[arg(long, default_value_t = 60)]
    pub timeout_secs: u64,
    #[arg(long, default_value_t = 2)]
    pub retries: u32,
}

impl ModelArgs {
    pub fn client(&self) -> Result<LlmClient> {
        if self.remote {
            let cfg = ModelConfig {
                base_url: self.base_url.clone(),
                model: self.model.clone(),
                temperature: self.temperature,
                max_tokens: self.max_tokens,
                timeout_secs: self.timeout_secs,
                retries: self.retries,
                api_key_env: self.api_key_env.clone(),
            };
            return Ok(LlmClient::remote(cfg)?);
        }
        match self.mock.unwrap_or(MockKind::Echo) {
            MockKind::Echo => Ok(LlmClient::echo()),
            MockKind::Scripted => {
                let script = match &self.mock_script {
                    Some(p) => MockScript::from_toml(&read_text(p)?)?,
                    None => MockScript::default(),
                };
                Ok(LlmClient::scripted(script))
            }
        }
    }
}

#[derive(Debug, Args)]
pub struct RolloutArgs {
    #[arg(long, default_value = "expert")]
    pub policy: PolicyKind,
    /// Number of episodes.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Episode i uses scenario seed `seed + i`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 400)]
    pub max_steps: u32,
    #[arg(long)]
    pub victims: Option<u32>,
    #[arg(long)]
    pub rubble: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TreeArgs {
    #[arg(long, default_value_t = 8)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 5)]
    pub min_samples_leaf: usize,
}

impl TreeArgs {
    fn params(&self) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            min_samples_leaf: self.min_samples_leaf,
        }
    }
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Writes `<role>.tree.json` per role and `distill_report.json`.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Only this role (default: both).
    #[arg(long)]
    pub role: Option<AgentId>,
    #[command(flatten)]
    pub tree: TreeArgs,
    /// Also measure fidelity against this scripted policy on held-out rollouts.
    #[arg(long)]
    pub policy: Option<PolicyKind>,
    #[arg(long, default_value_t = 200)]
    pub held_out_episodes: usize,
    #[arg(long, default_value_t = 1_000_000)]
    pub held_out_seed: u64,
    /// Held-out states per role.
    #[arg(long, default_value_t = 1000)]
    pub held_out_states: usize,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    /// Tree for the role of the explained step.
    #[arg(long)]
    pub tree: PathBuf,
    #[arg(long)]
    pub trajectories: PathBuf,
    #[arg(long)]
    pub episode: u64,
    /// Timestep of the step to explain.
    #[arg(long)]
    pub t: u32,
    #[arg(long, default_value = "br_path")]
    pub condition: ConditionKind,
    /// Sampled pairs for br_states.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub sample_seed: u64,
    /// Leave the tree's leaf confidence out of the prompt.
    #[arg(long)]
    pub no_confidence: bool,
    /// Build the prompt without calling the model.
    #[arg(long)]
    pub prompt_only: bool,
    /// Output JSON file (stdout if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub states: usize,
    #[arg(long, default_value_t = 1000)]
    pub train_episodes: usize,
    #[arg(long, default_value_t = 50)]
    pub held_out_episodes: usize,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Comma-separated policies (default: all).
    #[arg(long, value_delimiter = ',')]
    pub policies: Vec<PolicyKind>,
    /// Comma-separated conditions (default: all).
    #[arg(long, value_delimiter = ',')]
    pub conditions: Vec<ConditionKind>,
    /// Writes rows.csv, aggregate.csv, features.csv and summary.txt.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub tree: TreeArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub tree: PathBuf,
    #[arg(long)]
    pub role: AgentId,
    /// Output JSON file (stdout if omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "BRX_ADDR", default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Directory served at `/` (the web console).
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    /// Append-only JSON-lines audit log.
    #[arg(long)]
    pub event_log: Option<PathBuf>,
    /// Directory of `brx study` outputs listed by GET /study/reports.
    #[arg(long)]
    pub reports_dir: Option<PathBuf>,
    /// Episodes per policy used to distill the served trees.
    #[arg(long, default_value_t = 1000)]
    pub train_episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub tree: TreeArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Rollout(a) => rollout(&a),
        Command::Distill(a) => distill(&a),
        Command::Explain(a) => explain(&a),
        Command::Study(a) => study(&a),
        Command::Replay(a) => replay(&a),
        Command::Serve(a) => serve(a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn load_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_ndjson(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn load_tree(path: &Path) -> Result<DecisionTree> {
    DecisionTree::from_json(&read_text(path)?).with_context(|| format!("loading tree {}", path.display()))
}

fn rollout(a: &RolloutArgs) -> Result<()> {
    let defaults = ScenarioConfig::default();
    let cfg = RolloutConfig {
        num_rollouts: a.n,
        max_steps: a.max_steps,
        base_seed: a.seed,
        scenario: ScenarioConfig {
            n_victims: a.victims.unwrap_or(defaults.n_victims),
            n_rubble: a.rubble.unwrap_or(defaults.n_rubble),
            ..defaults
        },
    };
    let trajs = sample_rollouts(&PolicyPair::uniform(a.policy), &cfg)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let f = fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut w = BufWriter::new(f);
    write_ndjson(&trajs, &mut w)?;
    w.flush()?;
    let steps: usize = trajs.iter().map(|t| t.steps.len()).sum();
    eprintln!("wrote {} episodes ({steps} steps) to {}", a.n, a.out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct HeldOutReport {
    policy: PolicyKind,
    states: usize,
    fidelity: f64,
}

#[derive(Debug, Serialize)]
struct RoleReport {
    role: AgentId,
    tree: String,
    rows: usize,
    leaves: usize,
    depth: usize,
    /// Agreement with the recorded actions the tree was fitted on.
    replay_fidelity: f64,
    held_out: Option<HeldOutReport>,
}

#[derive(Debug, Serialize)]
struct DistillReport {
    input: String,
    max_depth: usize,
    min_samples_leaf: usize,
    roles: Vec<RoleReport>,
}

fn held_out_states(policy: PolicyKind, role: AgentId, episodes: usize, seed: u64, limit: usize) -> Result<Vec<WorldState>> {
    let held = sample_rollouts(&PolicyPair::uniform(policy), &RolloutConfig::new(episodes, seed))?;
    Ok(held
        .into_iter()
        .filter(|t| t.agent == role)
        .flat_map(|t| t.steps.into_iter().filter_map(|s| s.state))
        .take(limit)
        .collect())
}

fn distill(a: &DistillArgs) -> Result<()> {
    let trajs = load_trajectories(&a.input)?;
    let roles: Vec<AgentId> = a.role.map_or(AgentId::ALL.to_vec(), |r| vec![r]);
    let mut reports = Vec::new();
    for role in roles {
        let data = build_dataset(&trajs, role)?;
        let tree = fit_tree(&data, a.tree.params())?;
        let file = format!("{role}.tree.json");
        write_text(&a.out_dir.join(&file), &tree.to_json())?;
        let held_out = match a.policy {
            Some(policy) => {
                let states = held_out_states(policy, role, a.held_out_episodes, a.held_out_seed, a.held_out_states)?;
                Some(HeldOutReport {
                    policy,
                    states: states.len(),
                    fidelity: fidelity(&tree, &Policy::new(policy, role), &states)?,
                })
            }
            None => None,
        };
        let r = RoleReport {
            role,
            tree: file,
            rows: data.len(),
            leaves: tree.leaf_count(),
            depth: tree.depth(),
            replay_fidelity: replay_agreement(&tree, &data)?,
            held_out,
        };
        eprintln!(
            "{role}: {} rows, {} leaves, depth {}, replay fidelity {:.4}",
            r.rows, r.leaves, r.depth, r.replay_fidelity
        );
        reports.push(r);
    }
    let report = DistillReport {
        input: a.input.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned()),
        max_depth: a.tree.max_depth,
        min_samples_leaf: a.tree.min_samples_leaf,
        roles: reports,
    };
    write_text(&a.out_dir.join("distill_report.json"), &to_json(&report)?)
}

#[derive(Debug, Serialize)]
struct ExplainOutput {
    episode: u64,
    t: u32,
    agent: AgentId,
    action: Action,
    condition: ConditionKind,
    path: DecisionPath,
    template: String,
    prompt: String,
    explanation: Option<String>,
}

fn explain(a: &ExplainArgs) -> Result<()> {
    let tree = Arc::new(load_tree(&a.tree)?);
    let trajs = load_trajectories(&a.trajectories)?;
    let (agent, step) = trajs
        .iter()
        .filter(|t| t.episode_id == a.episode)
        .find_map(|t| t.steps.iter().find(|s| s.t == a.t).map(|s| (t.agent, s.clone())))
        .ok_or_else(|| anyhow!("no step at episode {} timestep {} in {}", a.episode, a.t, a.trajectories.display()))?;
    let phrases = PhraseTable::default();
    let path = extract_path(&tree, &step.features, agent)?;
    let summary = StateSummary {
        agent,
        timestep: step.t,
        position: step.state.as_ref().map(|s| s.position(agent)),
        features: step.features,
    };
    let (condition, evidence) = match a.condition {
        ConditionKind::BrPath => (Condition::br_path(), Evidence::Path(path.clone())),
        ConditionKind::BrStates => (
            Condition::br_states(a.k, a.sample_seed),
            Evidence::Samples(sample_state_actions(&trajs, agent, a.k, a.sample_seed)?),
        ),
        ConditionKind::NoBr => (Condition::no_br(), Evidence::State(summary.clone())),
    };
    let prompt = build_prompt(
        &PromptConfig::default(),
        &phrases,
        &condition,
        &evidence,
        step.action,
        agent,
        !a.no_confidence,
    )?;
    let rendered = prompt.render();
    let explanation = if a.prompt_only {
        None
    } else {
        let ctx = FrozenContext {
            state: summary,
            action: step.action,
            path: Some(path.clone()),
        };
        let session = open_session(format!("{}-{}", a.episode, a.t), prompt, ctx, Some(tree), &a.model.client()?)?;
        Some(session.initial_explanation().to_string())
    };
    let out = ExplainOutput {
        episode: a.episode,
        t: a.t,
        agent,
        action: step.action,
        condition: a.condition,
        template: phrases.render_template(&path)?,
        path,
        prompt: rendered,
        explanation,
    };
    emit(a.out.as_deref(), &to_json(&out)?)
}

fn study(a: &StudyArgs) -> Result<()> {
    let grid = StudyGrid {
        policies: if a.policies.is_empty() { PolicyKind::ALL.to_vec() } else { a.policies.clone() },
        conditions: if a.conditions.is_empty() { ConditionKind::ALL.to_vec() } else { a.conditions.clone() },
        states_per_cell: a.states,
        seed: a.seed,
        train_episodes: a.train_episodes,
        held_out_episodes: a.held_out_episodes,
        k: a.k,
        tree_params: a.tree.params(),
    };
    let client = a.model.client()?;
    let inputs = prepare_study(&grid)?;
    let report = run_study(
        &inputs,
        &client,
        &PromptConfig::default(),
        &PhraseTable::default(),
        &FeatureLexicon::default(),
    );
    write_text(&a.out_dir.join("rows.csv"), &report.rows_csv()?)?;
    write_text(&a.out_dir.join("aggregate.csv"), &report.aggregate_csv()?)?;
    write_text(&a.out_dir.join("features.csv"), &report.features_csv()?)?;
    let summary = report.summary();
    write_text(&a.out_dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

#[derive(Debug, Serialize)]
struct Mismatch {
    episode: u64,
    t: u32,
    recorded: Action,
    predicted: Action,
}

#[derive(Debug, Serialize)]
struct ReplayReport {
    role: AgentId,
    rows: usize,
    agreement: f64,
    mismatches: usize,
    /// The first mismatches in file order.
    examples: Vec<Mismatch>,
}

fn replay(a: &ReplayArgs) -> Result<()> {
    let tree = load_tree(&a.tree)?;
    let trajs = load_trajectories(&a.input)?;
    let data = build_dataset(&trajs, a.role)?;
    let mut mismatches = Vec::new();
    for t in trajs.iter().filter(|t| t.agent == a.role) {
        for s in &t.steps {
            let predicted = tree.predict(&s.features)?;
            if predicted != s.action {
                mismatches.push(Mismatch {
                    episode: t.episode_id,
                    t: s.t,
                    recorded: s.action,
                    predicted,
                });
            }
        }
    }
    let report = ReplayReport {
        role: a.role,
        rows: data.len(),
        agreement: replay_agreement(&tree, &data)?,
        mismatches: mismatches.len(),
        examples: mismatches.into_iter().take(20).collect(),
    };
    emit(a.out.as_deref(), &to_json(&report)?)
}

fn serve(a: ServeArgs) -> Result<()> {
    if a.train_episodes == 0 {
        bail!("--train-episodes: must be positive");
    }
    let config = ServiceConfig {
        train_episodes: a.train_episodes,
        seed: a.seed,
        tree_params: a.tree.params(),
        static_dir: a.static_dir,
        event_log: a.event_log,
        reports_dir: a.reports_dir,
    };
    let client = a.model.client()?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(service::serve(a.addr, config, client))
}
