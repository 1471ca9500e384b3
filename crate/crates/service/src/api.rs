//! HTTP API over persistent sessions.
//!
//! Request and response bodies are JSON; point clouds are binary PLY.
//! Mutating requests may carry an `x-request-id` header: a retry with the
//! same id returns the first reply without repeating the work.
//!
//! | method | path | body | reply |
//! |---|---|---|---|
//! | POST | `/sessions` | PLY or OBJ mesh bytes | `{id, levels, resolutions, counts}` |
//! | GET | `/sessions/{id}` | | session summary |
//! | POST | `/sessions/{id}/train` | `{levels?, fresh?}` | 202 `{state}` |
//! | GET | `/sessions/{id}/train/status?since=N` | | per-level progress and losses from index `N` |
//! | POST | `/sessions/{id}/sample` | `{seed?, resize?, sampler?}` | sample summary |
//! | POST | `/sessions/{id}/edit` | `{sample_id?, level, src_box: {min, max}, dst_origin}` | sample summary |
//! | POST | `/sessions/{id}/resize` | `{resolution, seed?, sampler?}` | sample summary |
//! | GET | `/sessions/{id}/samples/{sample}` | | sample summary |
//! | GET | `/sessions/{id}/levels/{l}/points?sample=S` | | PLY of level `l` (latest sample by default) |
//! | GET | `/sessions/{id}/export/{sample}/{l}` | | PLY download |
//! | GET | `/sessions/{id}/history` | | edit history |
//!
//! Errors reply `{error, message}` with 404 for unknown ids, 409 while
//! another mutation of the session runs (or before training), and 422 for
//! invalid input such as boxes outside the grid.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use sparsegen_core::exemplar::{extract_pyramid, parse_mesh, Pyramid};
use sparsegen_core::grid::SparseGrid;
use sparsegen_core::pipeline::{
    export_points, points_ply_bytes, EditCommand, EditScript, Generator, LevelTrainer, RunConfig, Sample, Sampler,
};
use sparsegen_core::Error;
use tokio::sync::OwnedMutexGuard;

use crate::training::{train_levels, Start};
use crate::workspace::Workspace;

const SESSION_FILE: &str = "session.json";
const REQUEST_ID: &str = "x-request-id";
/// Training iterations between status updates and checkpoint writes.
const STATUS_EVERY: u64 = 100;

#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub error: String,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, class: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            error: class.into(),
            message: message.into(),
        }
    }

    fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NotFound", what)
    }

    fn conflict(class: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, class, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            Error::Divergence { .. } | Error::NonFiniteGradient(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self::new(status, e.class(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

/// A finished reply kept for idempotent retries.
#[derive(Debug, Clone)]
struct Reply {
    status: StatusCode,
    body: serde_json::Value,
}

impl IntoResponse for Reply {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

fn reply<T: Serialize>(status: StatusCode, body: &T) -> Reply {
    Reply {
        status,
        body: serde_json::to_value(body).expect("replies serialize"),
    }
}

fn parse_body<T: for<'de> Deserialize<'de> + Default>(bytes: &Bytes) -> ApiResult<T> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(bytes)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "Format", format!("request body: {e}")))
}

fn request_id(headers: &HeaderMap) -> Option<String> {
    headers
        .get(REQUEST_ID)
        .and_then(|v| v.to_str().ok())
        .map(str::to_owned)
}

/// Operations that produce a sample, recorded so a session can be replayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum SampleOp {
    Sample {
        seed: u64,
        sampler: Sampler,
        resolution: Option<[u32; 3]>,
    },
    Edit {
        from: String,
        command: EditCommand,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub sample_id: String,
    #[serde(flatten)]
    pub op: SampleOp,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct SessionFile {
    next_seed: u64,
    history: Vec<HistoryEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleSummary {
    pub sample_id: String,
    pub seed: u64,
    pub sampler: Sampler,
    /// Grid resolution per level.
    pub resolutions: Vec<[u32; 3]>,
    pub counts: Vec<usize>,
    pub pre_prune_counts: Vec<usize>,
}

fn summary(id: &str, s: &Sample) -> SampleSummary {
    SampleSummary {
        sample_id: id.to_owned(),
        seed: s.seed,
        sampler: s.sampler,
        resolutions: s.levels.iter().map(SparseGrid::resolution).collect(),
        counts: s.levels.iter().map(SparseGrid::len).collect(),
        pre_prune_counts: s.pre_prune_counts.clone(),
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct LevelStatus {
    pub level: u32,
    pub iterations_done: u64,
    pub total_iterations: u64,
    /// Per-iteration losses in training order (upsampler phase first).
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainState {
    #[default]
    Idle,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TrainStatus {
    pub state: TrainState,
    pub error: Option<String>,
    pub levels: Vec<LevelStatus>,
}

#[derive(Default)]
struct SessionState {
    generator: Option<Arc<Generator>>,
    samples: BTreeMap<String, Arc<Sample>>,
    latest: Option<String>,
    file: SessionFile,
}

pub struct Session {
    id: String,
    workspace: Workspace,
    pyramid: Arc<Pyramid>,
    config: RunConfig,
    mutation: Arc<tokio::sync::Mutex<()>>,
    state: RwLock<SessionState>,
    training: Mutex<TrainStatus>,
    replies: Mutex<HashMap<String, Reply>>,
}

impl Session {
    fn create(root: &Path, id: String, mesh: &[u8], config: RunConfig) -> sparsegen_core::Result<Self> {
        config.validate()?;
        let extract = config.extract_config();
        let pyramid = extract_pyramid(&parse_mesh(mesh)?, &extract)?;
        let ws = Workspace::create(root, &pyramid, extract, None)?;
        ws.store_config(&config)?;
        let session = Self::open(root, id)?;
        session.save()?;
        Ok(session)
    }

    /// Loads a stored session and replays its history.
    fn open(root: &Path, id: String) -> sparsegen_core::Result<Self> {
        let workspace = Workspace::open(root)?;
        let config = workspace
            .stored_config()?
            .ok_or_else(|| Error::Config(format!("session {id} has no config")))?;
        workspace.check_config(&config)?;
        // Always work from the stored grids so reloads are bit-identical.
        let pyramid = Arc::new(workspace.pyramid()?);
        let file: SessionFile = match std::fs::read(root.join(SESSION_FILE)) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| Error::Format {
                format: "json",
                message: e.to_string(),
            })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => SessionFile::default(),
            Err(e) => return Err(e.into()),
        };
        let generator = workspace
            .models()
            .ok()
            .map(|m| Generator::new(m, &config, &pyramid).map(Arc::new))
            .transpose()?;
        let session = Self {
            id,
            workspace,
            pyramid,
            config,
            mutation: Arc::default(),
            state: RwLock::default(),
            training: Mutex::default(),
            replies: Mutex::default(),
        };
        {
            let mut st = session.state.write().unwrap();
            st.generator = generator;
            if let Some(g) = st.generator.clone() {
                for entry in &file.history {
                    let sample = replay(&g, &st.samples, &entry.op)
                        .map_err(|e| Error::Config(format!("replaying {}: {}", entry.sample_id, e.message)))?;
                    st.samples.insert(entry.sample_id.clone(), Arc::new(sample));
                    st.latest = Some(entry.sample_id.clone());
                }
            }
            st.file = file;
        }
        Ok(session)
    }

    fn save(&self) -> sparsegen_core::Result<()> {
        let st = self.state.read().unwrap();
        let text = serde_json::to_vec_pretty(&st.file).expect("session file serializes");
        let path = self.workspace.root().join(SESSION_FILE);
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, text)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Claims the session for one mutation; fails while another is running.
    pub fn try_begin_mutation(&self) -> ApiResult<OwnedMutexGuard<()>> {
        self.mutation
            .clone()
            .try_lock_owned()
            .map_err(|_| ApiError::conflict("Busy", format!("session {} is being modified", self.id)))
    }

    fn cached(&self, key: &Option<String>) -> Option<Reply> {
        key.as_ref().and_then(|k| self.replies.lock().unwrap().get(k).cloned())
    }

    fn remember(&self, key: Option<String>, r: &Reply) {
        if let Some(k) = key {
            self.replies.lock().unwrap().insert(k, r.clone());
        }
    }

    fn generator(&self) -> ApiResult<Arc<Generator>> {
        self.state
            .read()
            .unwrap()
            .generator
            .clone()
            .ok_or_else(|| ApiError::conflict("NotTrained", format!("session {} has no trained models", self.id)))
    }

    fn sample_by_id(&self, id: &str) -> ApiResult<Arc<Sample>> {
        self.state
            .read()
            .unwrap()
            .samples
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no sample {id}")))
    }

    fn latest(&self) -> ApiResult<(String, Arc<Sample>)> {
        let st = self.state.read().unwrap();
        let id = st
            .latest
            .clone()
            .ok_or_else(|| ApiError::not_found(format!("session {} has no samples yet", self.id)))?;
        let s = st.samples[&id].clone();
        Ok((id, s))
    }

    /// Runs `op`, records it in the history and returns the new sample's summary.
    fn produce(&self, op: SampleOp) -> ApiResult<SampleSummary> {
        let g = self.generator()?;
        let sample = {
            let st = self.state.read().unwrap();
            replay(&g, &st.samples, &op)?
        };
        let id = {
            let mut st = self.state.write().unwrap();
            let id = format!("s{}", st.file.history.len());
            if let SampleOp::Sample { seed, .. } = op {
                st.file.next_seed = st.file.next_seed.max(seed + 1);
            }
            st.file.history.push(HistoryEntry {
                sample_id: id.clone(),
                op,
            });
            st.samples.insert(id.clone(), Arc::new(sample));
            st.latest = Some(id.clone());
            id
        };
        self.save()?;
        Ok(summary(&id, &*self.sample_by_id(&id)?))
    }

    fn next_seed(&self) -> u64 {
        self.state.read().unwrap().file.next_seed
    }

    fn info(&self) -> serde_json::Value {
        let st = self.state.read().unwrap();
        serde_json::json!({
            "id": self.id,
            "levels": self.pyramid.num_levels(),
            "resolutions": self.pyramid.levels().iter().map(SparseGrid::resolution).collect::<Vec<_>>(),
            "counts": self.pyramid.levels().iter().map(SparseGrid::len).collect::<Vec<_>>(),
            "trained": st.generator.is_some(),
            "samples": st.samples.keys().collect::<Vec<_>>(),
            "latest": st.latest,
        })
    }
}

fn replay(g: &Generator, samples: &BTreeMap<String, Arc<Sample>>, op: &SampleOp) -> ApiResult<Sample> {
    match op {
        SampleOp::Sample {
            seed,
            sampler,
            resolution,
        } => Ok(g.sample(*seed, *sampler, *resolution)?),
        SampleOp::Edit { from, command } => {
            let base = samples
                .get(from)
                .ok_or_else(|| ApiError::not_found(format!("no sample {from}")))?;
            let script = EditScript {
                commands: vec![*command],
            };
            Ok(script.apply(g, base)?)
        }
    }
}

/// Shared server state: the session table and the config new sessions use.
pub struct AppState {
    data_dir: PathBuf,
    config: RunConfig,
    sessions: RwLock<BTreeMap<String, Arc<Session>>>,
    /// Serializes session creation and remembers its replies.
    creation: tokio::sync::Mutex<HashMap<String, Reply>>,
}

impl AppState {
    /// Opens `data_dir`, loading every stored session.
    pub fn open(data_dir: &Path, config: RunConfig) -> sparsegen_core::Result<Arc<Self>> {
        config.validate()?;
        let sessions_dir = data_dir.join("sessions");
        std::fs::create_dir_all(&sessions_dir)?;
        let mut sessions = BTreeMap::new();
        for entry in std::fs::read_dir(&sessions_dir)? {
            let entry = entry?;
            if !entry.path().join(SESSION_FILE).exists() {
                continue;
            }
            let id = entry.file_name().to_string_lossy().into_owned();
            let s = Session::open(&entry.path(), id.clone())?;
            sessions.insert(id, Arc::new(s));
        }
        Ok(Arc::new(Self {
            data_dir: data_dir.to_path_buf(),
            config,
            sessions: RwLock::new(sessions),
            creation: tokio::sync::Mutex::default(),
        }))
    }

    pub fn session(&self, id: &str) -> ApiResult<Arc<Session>> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session {id}")))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/:id", get(session_info))
        .route("/sessions/:id/train", post(start_training))
        .route("/sessions/:id/train/status", get(training_status))
        .route("/sessions/:id/sample", post(sample))
        .route("/sessions/:id/edit", post(edit))
        .route("/sessions/:id/resize", post(resize))
        .route("/sessions/:id/samples/:sample", get(sample_info))
        .route("/sessions/:id/levels/:level/points", get(points))
        .route("/sessions/:id/export/:sample/:level", get(export))
        .route("/sessions/:id/history", get(history))
        .with_state(state)
}

/// Blocks the calling thread serving `router` on `host:port`.
pub fn serve(data_dir: &Path, config: RunConfig, host: &str, port: u16) -> sparsegen_core::Result<()> {
    let state = AppState::open(data_dir, config)?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host, port)).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(state)).await
    })?;
    Ok(())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Panic", e.to_string()))?
}

async fn create_session(State(app): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult<Reply> {
    let key = request_id(&headers);
    let mut created = app.creation.lock().await;
    if let Some(r) = key.as_ref().and_then(|k| created.get(k)) {
        return Ok(r.clone());
    }
    let id = {
        let sessions = app.sessions.read().unwrap();
        (1..).map(|n| format!("session-{n}")).find(|id| !sessions.contains_key(id)).unwrap()
    };
    let root = app.data_dir.join("sessions").join(&id);
    let config = app.config.clone();
    let session = {
        let (root, id) = (root.clone(), id.clone());
        blocking(move || Session::create(&root, id, &body, config).map_err(ApiError::from)).await
    };
    let session = match session {
        Ok(s) => Arc::new(s),
        Err(e) => {
            let _ = std::fs::remove_dir_all(&root);
            return Err(e);
        }
    };
    let r = reply(StatusCode::CREATED, &session.info());
    app.sessions.write().unwrap().insert(id, session);
    if let Some(k) = key {
        created.insert(k, r.clone());
    }
    Ok(r)
}

async fn session_info(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Reply> {
    Ok(reply(StatusCode::OK, &app.session(&id)?.info()))
}

async fn history(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Reply> {
    let s = app.session(&id)?;
    let st = s.state.read().unwrap();
    Ok(reply(StatusCode::OK, &st.file.history))
}

/// Shared flow of a mutating request: replay a cached reply, claim the
/// session, run `work` off the async runtime, remember the reply.
async fn mutate(
    session: Arc<Session>,
    headers: &HeaderMap,
    route: &str,
    work: impl FnOnce(&Session) -> ApiResult<Reply> + Send + 'static,
) -> ApiResult<Reply> {
    let key = request_id(headers).map(|k| format!("{route} {k}"));
    if let Some(r) = session.cached(&key) {
        return Ok(r);
    }
    let guard = session.try_begin_mutation()?;
    if let Some(r) = session.cached(&key) {
        return Ok(r);
    }
    let s = session.clone();
    let r = blocking(move || {
        let _guard = guard;
        work(&s)
    })
    .await?;
    session.remember(key, &r);
    Ok(r)
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainRequest {
    levels: Option<Vec<u32>>,
    fresh: bool,
}

async fn start_training(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Reply> {
    let session = app.session(&id)?;
    let req: TrainRequest = parse_body(&body)?;
    let levels = req.levels.unwrap_or_else(|| (1..=session.config.levels).collect());
    if let Some(&bad) = levels.iter().find(|&&l| l == 0 || l > session.config.levels) {
        return Err(Error::LevelOverflow {
            level: bad,
            max: session.config.levels,
        }
        .into());
    }
    let key = request_id(&headers).map(|k| format!("train {k}"));
    if let Some(r) = session.cached(&key) {
        return Ok(r);
    }
    let guard = session.try_begin_mutation()?;
    *session.training.lock().unwrap() = TrainStatus {
        state: TrainState::Running,
        error: None,
        levels: levels
            .iter()
            .map(|&level| LevelStatus {
                level,
                ..LevelStatus::default()
            })
            .collect(),
    };
    let s = session.clone();
    let start = if req.fresh { Start::Fresh } else { Start::Resume };
    std::thread::spawn(move || {
        let _guard = guard;
        run_training(&s, &levels, start);
    });
    let r = reply(StatusCode::ACCEPTED, &serde_json::json!({ "state": TrainState::Running }));
    session.remember(key, &r);
    Ok(r)
}

fn run_training(s: &Session, levels: &[u32], start: Start) {
    let report = |tr: &LevelTrainer| {
        let mut status = s.training.lock().unwrap();
        if let Some(ls) = status.levels.iter_mut().find(|l| l.level == tr.level()) {
            let log = tr.log();
            ls.iterations_done = tr.iterations_done();
            ls.total_iterations = tr.total_iterations();
            ls.losses = log.upsampler_losses.iter().chain(&log.denoiser_losses).copied().collect();
        }
    };
    let every = STATUS_EVERY;
    let results = train_levels(&s.workspace, &s.pyramid, &s.config, levels, start, every, &report);
    let failure = results.into_iter().find_map(Result::err).or_else(|| {
        // Every level must have a checkpoint before sampling is possible.
        match s.workspace.models() {
            Ok(models) => match Generator::new(models, &s.config, &s.pyramid) {
                Ok(g) => {
                    s.state.write().unwrap().generator = Some(Arc::new(g));
                    None
                }
                Err(e) => Some(e),
            },
            Err(_) => None,
        }
    });
    let mut status = s.training.lock().unwrap();
    match failure {
        Some(e) => {
            status.state = TrainState::Failed;
            status.error = Some(format!("{}: {e}", e.class()));
        }
        None => status.state = TrainState::Done,
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct StatusQuery {
    since: usize,
}

async fn training_status(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<StatusQuery>,
) -> ApiResult<Reply> {
    let session = app.session(&id)?;
    let mut status = session.training.lock().unwrap().clone();
    for l in &mut status.levels {
        l.losses = l.losses.get(q.since..).map(<[f64]>::to_vec).unwrap_or_default();
    }
    Ok(reply(StatusCode::OK, &status))
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SampleRequest {
    seed: Option<u64>,
    resize: Option<[u32; 3]>,
    sampler: Sampler,
}

async fn sample(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Reply> {
    let session = app.session(&id)?;
    let req: SampleRequest = parse_body(&body)?;
    mutate(session, &headers, "sample", move |s| {
        let op = SampleOp::Sample {
            seed: req.seed.unwrap_or_else(|| s.next_seed()),
            sampler: req.sampler,
            resolution: req.resize,
        };
        Ok(reply(StatusCode::OK, &s.produce(op)?))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResizeRequest {
    resolution: [u32; 3],
    seed: Option<u64>,
    #[serde(default)]
    sampler: Sampler,
}

async fn resize(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Reply> {
    let session = app.session(&id)?;
    let req: ResizeRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "Format", format!("request body: {e}")))?;
    if req.resolution.contains(&0) {
        return Err(Error::InvalidGrid("resolution must be positive".into()).into());
    }
    mutate(session, &headers, "resize", move |s| {
        let op = SampleOp::Sample {
            seed: req.seed.unwrap_or_else(|| s.next_seed()),
            sampler: req.sampler,
            resolution: Some(req.resolution),
        };
        Ok(reply(StatusCode::OK, &s.produce(op)?))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxSpec {
    min: [i32; 3],
    max: [i32; 3],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EditRequest {
    sample_id: Option<String>,
    level: u32,
    src_box: BoxSpec,
    dst_origin: [i32; 3],
}

async fn edit(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Reply> {
    let session = app.session(&id)?;
    let req: EditRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "Format", format!("request body: {e}")))?;
    mutate(session, &headers, "edit", move |s| {
        let from = match req.sample_id {
            Some(id) => {
                s.sample_by_id(&id)?;
                id
            }
            None => s.latest()?.0,
        };
        let command = EditCommand::CopyPaste {
            level: req.level,
            min: req.src_box.min,
            max: req.src_box.max,
            dst_origin: req.dst_origin,
        };
        // Validate before claiming a sample id.
        let script = EditScript {
            commands: vec![command],
        };
        script.validate(&*s.generator()?, &*s.sample_by_id(&from)?)?;
        Ok(reply(StatusCode::OK, &s.produce(SampleOp::Edit { from, command })?))
    })
    .await
}

async fn sample_info(
    State(app): State<Arc<AppState>>,
    UrlPath((id, sample)): UrlPath<(String, String)>,
) -> ApiResult<Reply> {
    let session = app.session(&id)?;
    Ok(reply(StatusCode::OK, &summary(&sample, &*session.sample_by_id(&sample)?)))
}

fn level_ply(session: &Session, sample_id: &str, sample: &Sample, level: u32) -> ApiResult<Vec<u8>> {
    if level == 0 || level as usize > sample.levels.len() {
        return Err(ApiError::not_found(format!("sample {sample_id} has no level {level}")));
    }
    let points = export_points(sample.level(level), &session.pyramid.transform);
    Ok(points_ply_bytes(&points))
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct PointsQuery {
    sample: Option<String>,
}

async fn points(
    State(app): State<Arc<AppState>>,
    UrlPath((id, level)): UrlPath<(String, u32)>,
    Query(q): Query<PointsQuery>,
) -> ApiResult<Response> {
    let session = app.session(&id)?;
    let (sample_id, sample) = match q.sample {
        Some(s) => (s.clone(), session.sample_by_id(&s)?),
        None => session.latest()?,
    };
    let bytes = level_ply(&session, &sample_id, &sample, level)?;
    Ok((
        [
            (header::CONTENT_TYPE, "application/octet-stream".to_owned()),
            (header::HeaderName::from_static("x-sample-id"), sample_id),
        ],
        bytes,
    )
        .into_response())
}

async fn export(
    State(app): State<Arc<AppState>>,
    UrlPath((id, sample_id, level)): UrlPath<(String, String, u32)>,
) -> ApiResult<Response> {
    let session = app.session(&id)?;
    let sample = session.sample_by_id(&sample_id)?;
    let bytes = level_ply(&session, &sample_id, &sample, level)?;
    let disposition = format!("attachment; filename=\"{id}_{sample_id}_level{level}.ply\"");
    Ok((
        [
            (header::CONTENT_TYPE, "application/octet-stream".to_owned()),
            (header::CONTENT_DISPOSITION, disposition),
        ],
        bytes,
    )
        .into_response())
}
