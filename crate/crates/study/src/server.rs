//! Study state and HTTP routes.
//!
//! ```text
//! GET  /api/study/{split}/next?rater=ID   item payload, or 204 when done
//! POST /api/study/submit                  {item_id, rater, choice}
//! GET  /api/study/{split}/report          {model, label, neither, total, p_value}
//! GET  /healthz                           200
//! GET  /...                               static UI assets
//! ```

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use stormloc::stats::{study_summary, Choice, PreferenceRecord, PreferenceTally};
use stormloc::{Dataset, ModelState, Split};

use crate::error::StudyError;
use crate::items::{sample_study_items, ItemPayload, StudyItem};
use crate::log::{check_field, Appended, LogEntry, RecordLog};

#[derive(Clone, Debug)]
pub struct StudyConfig {
    pub splits: Vec<Split>,
    pub n_items: usize,
    pub seed: u64,
    /// Send the probability overlay with each item. Off by default because
    /// the overlay gives away which marker is the model's.
    pub show_prob: bool,
    pub static_dir: Option<PathBuf>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self { splits: vec![Split::Test, Split::Train], n_items: 200, seed: 0, show_prob: false, static_dir: None }
    }
}

pub struct Study {
    data: Dataset,
    model: ModelState,
    cfg: StudyConfig,
    items: HashMap<Split, Vec<StudyItem>>,
    by_id: HashMap<String, (Split, usize)>,
    truncated: Vec<Split>,
    log: RecordLog,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubmitBody {
    pub item_id: String,
    pub rater: String,
    pub choice: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub item_id: String,
    pub rater: String,
    pub choice: Choice,
    pub timestamp: i64,
    /// True when this submission repeated an already stored answer.
    pub replayed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportBody {
    pub model: u64,
    pub label: u64,
    pub neither: u64,
    pub total: u64,
    pub p_value: f64,
}

impl From<&PreferenceTally> for ReportBody {
    fn from(t: &PreferenceTally) -> Self {
        Self { model: t.prefer_model, label: t.prefer_label, neither: t.neither, total: t.total, p_value: t.p_value }
    }
}

fn unix_now() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs() as i64)
}

impl Study {
    pub fn new(data: Dataset, model: ModelState, cfg: StudyConfig, log_path: impl AsRef<Path>) -> Result<Self, StudyError> {
        if model.config.grid != data.grid {
            return Err(StudyError::BadRequest("checkpoint grid does not match the dataset grid".into()));
        }
        let mut items = HashMap::new();
        let mut by_id = HashMap::new();
        let mut truncated = Vec::new();
        for &split in &cfg.splits {
            let sampled = sample_study_items(&data, split, cfg.n_items, cfg.seed, &model)?;
            if sampled.truncated {
                truncated.push(split);
            }
            for (i, item) in sampled.items.iter().enumerate() {
                by_id.insert(item.item_id.clone(), (split, i));
            }
            items.insert(split, sampled.items);
        }
        let log = RecordLog::open(log_path)?;
        Ok(Self { data, model, cfg, items, by_id, truncated, log })
    }

    pub fn items(&self, split: Split) -> Option<&[StudyItem]> {
        self.items.get(&split).map(Vec::as_slice)
    }

    /// Splits that had fewer samples than requested.
    pub fn truncated_splits(&self) -> &[Split] {
        &self.truncated
    }

    pub fn log(&self) -> &RecordLog {
        &self.log
    }

    fn split_items(&self, split: &str) -> Result<(Split, &[StudyItem]), StudyError> {
        let s: Split = split.parse().map_err(|_| StudyError::UnknownSplit(split.to_string()))?;
        let items = self.items(s).ok_or_else(|| StudyError::UnknownSplit(split.to_string()))?;
        Ok((s, items))
    }

    pub fn payload(&self, item: &StudyItem) -> Result<ItemPayload, StudyError> {
        let field = &self.data.samples[item.sample_index].field;
        let prob = if self.cfg.show_prob { Some(self.model.predict_proba(field)?) } else { None };
        Ok(ItemPayload::new(item, field, prob.as_deref()))
    }

    /// First item of the split this rater has not answered yet.
    pub fn next_item(&self, split: &str, rater: &str) -> Result<Option<ItemPayload>, StudyError> {
        check_field("rater", rater)?;
        let (_, items) = self.split_items(split)?;
        match items.iter().find(|it| self.log.get(&it.item_id, rater).is_none()) {
            Some(item) => Ok(Some(self.payload(item)?)),
            None => Ok(None),
        }
    }

    pub fn submit(&self, body: &SubmitBody) -> Result<Ack, StudyError> {
        if !self.by_id.contains_key(&body.item_id) {
            return Err(StudyError::UnknownItem(body.item_id.clone()));
        }
        let choice: Choice = body.choice.parse().map_err(|e: stormloc::Error| StudyError::BadRequest(e.to_string()))?;
        let entry = LogEntry { item_id: body.item_id.clone(), rater: body.rater.clone(), choice, timestamp: unix_now() };
        let (stored, replayed) = match self.log.append(entry)? {
            Appended::New(e) => (e, false),
            Appended::Replayed(e) => (e, true),
        };
        Ok(Ack { item_id: stored.item_id, rater: stored.rater, choice: stored.choice, timestamp: stored.timestamp, replayed })
    }

    /// Logged answers for items of `split`, de-blinded with the stored
    /// assignment, in log order.
    pub fn resolved_records(&self, split: Split) -> Vec<PreferenceRecord> {
        let items = self.items.get(&split).map(Vec::as_slice).unwrap_or(&[]);
        self.log
            .entries()
            .into_iter()
            .filter_map(|e| {
                let &(s, i) = self.by_id.get(&e.item_id)?;
                (s == split).then(|| PreferenceRecord {
                    resolved: e.choice.resolve(items[i].model_first),
                    item_id: e.item_id,
                    rater_id: e.rater,
                    choice: e.choice,
                    timestamp: e.timestamp,
                })
            })
            .collect()
    }

    pub fn report(&self, split: &str) -> Result<PreferenceTally, StudyError> {
        let (s, _) = self.split_items(split)?;
        Ok(study_summary(&self.resolved_records(s)))
    }
}

#[derive(Debug, Deserialize)]
struct NextQuery {
    rater: Option<String>,
}

async fn healthz() -> &'static str {
    "ok"
}

async fn next(
    State(study): State<Arc<Study>>,
    UrlPath(split): UrlPath<String>,
    Query(q): Query<NextQuery>,
) -> Result<Response, StudyError> {
    let rater = q.rater.ok_or_else(|| StudyError::BadRequest("missing ?rater=".into()))?;
    Ok(match study.next_item(&split, &rater)? {
        Some(payload) => Json(payload).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn submit(State(study): State<Arc<Study>>, Json(body): Json<SubmitBody>) -> Result<Json<Ack>, StudyError> {
    Ok(Json(study.submit(&body)?))
}

async fn report(State(study): State<Arc<Study>>, UrlPath(split): UrlPath<String>) -> Result<Json<ReportBody>, StudyError> {
    Ok(Json(ReportBody::from(&study.report(&split)?)))
}

const PLACEHOLDER: &str = "<!doctype html><title>study</title><p>No UI assets configured. The JSON API lives under /api/study/.</p>";

pub fn router(study: Arc<Study>) -> Router {
    let api = Router::new()
        .route("/healthz", get(healthz))
        .route("/api/study/{split}/next", get(next))
        .route("/api/study/submit", post(submit))
        .route("/api/study/{split}/report", get(report));
    let api = match &study.cfg.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(|| async { Html(PLACEHOLDER) }),
    };
    api.with_state(study)
}

pub async fn serve(study: Arc<Study>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("study service listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(study)).await
}
