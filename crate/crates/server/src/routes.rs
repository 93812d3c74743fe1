use std::collections::HashMap;
use std::ops::ControlFlow;
use std::str::FromStr;
use std::sync::atomic::Ordering;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use cprism_core::dataset::{
    merge_subgroups, split_subgroup, AtomPredicate, Column, CovariateValue, DatasetConfig, Origin, Subgroup,
    SubgroupJson,
};
use cprism_core::discovery::{discover_with, SearchParams, StopReason};
use cprism_core::mask::UnitMask;
use cprism_core::matching::{match_report, MatchParams};
use cprism_core::projection::{project_dataset, LayoutReport, NmdsParams, DEFAULT_POINT_CAP};
use cprism_core::report::{front_report, FrontReport, SubgroupReport};
use cprism_core::Study;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::ApiError;
use crate::session::{Job, JobStatus, Session, StoredSubgroup};
use crate::AppState;

type ApiResult<T> = Result<Json<T>, ApiError>;
type Params = Query<HashMap<String, String>>;

const MAX_UPLOAD: usize = 512 * 1024 * 1024;

pub(crate) fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/discover", post(start_discovery))
        .route("/sessions/{id}/jobs/{job_id}", get(get_job).delete(cancel_job))
        .route("/sessions/{id}/subgroups", get(list_subgroups).post(post_subgroup))
        .route("/sessions/{id}/subgroups/merge", post(merge))
        .route("/sessions/{id}/subgroups/{sid}", delete(delete_subgroup))
        .route("/sessions/{id}/subgroups/{sid}/split", post(split))
        .route("/sessions/{id}/subgroups/{sid}/match", get(match_subgroup))
        .route("/sessions/{id}/subgroups/{sid}/units", get(matched_units))
        .route("/sessions/{id}/projection", get(projection))
        .route("/sessions/{id}/covariates/{name}/distribution", get(distribution))
        .fallback(|| async { ApiError::not_found("no such route") })
        .layer(DefaultBodyLimit::max(MAX_UPLOAD))
        .with_state(state)
}

fn parse_json<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

fn param<T: FromStr>(q: &HashMap<String, String>, key: &str, default: T) -> Result<T, ApiError> {
    match q.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| ApiError::bad_request(format!("query parameter {key}={v:?} is not valid"))),
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn session_summary(s: &Session) -> Value {
    let schema = &s.study.binarized.schema;
    json!({
        "session_id": s.id,
        "n": s.study.n(),
        "n_treated": s.study.dataset.n_treated(),
        "covariates": s.study.dataset.schema(),
        "atoms": schema.atoms().iter().enumerate().map(|(j, a)| json!({
            "index": j,
            "covariate": a.covariate_name,
            "label": a.to_string(),
        })).collect::<Vec<_>>(),
        "treatment": s.ingest.treatment,
        "dropped_rows": s.ingest.dropped_rows,
        "imputed": s.ingest.imputed,
        "warnings": s.study.binarized.warnings,
        "propensity_converged": s.study.propensity.converged,
    })
}

async fn create_session(State(app): State<AppState>, mut multipart: Multipart) -> ApiResult<Value> {
    let mut csv: Option<String> = None;
    let mut config = DatasetConfig::default();
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request(format!("malformed multipart body: {e}")))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field
            .bytes()
            .await
            .map_err(|e| ApiError::bad_request(format!("unreadable field {name:?}: {e}")))?;
        match name.as_str() {
            "csv" | "file" | "data" => {
                csv = Some(String::from_utf8(bytes.to_vec()).map_err(|_| ApiError::bad_request("CSV is not UTF-8"))?)
            }
            "config" => config = parse_json(&bytes)?,
            _ => {}
        }
    }
    let csv = csv.ok_or_else(|| ApiError::bad_request("missing multipart field \"csv\""))?;
    let id = app.next_session_id();
    let session = blocking(move || Session::create(id, csv.into(), config)).await?;
    let session = Arc::new(session);
    app.insert(session.clone());
    app.persist(&session);
    tracing::info!(session = %session.id, n = session.study.n(), d = session.study.d(), "session created");
    Ok(Json(session_summary(&session)))
}

async fn get_session(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Value> {
    let session = app.session(&id)?;
    Ok(Json(session_summary(&session)))
}

async fn start_discovery(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Value> {
    let session = app.session(&id)?;
    let params: SearchParams = if body.iter().all(u8::is_ascii_whitespace) {
        SearchParams::default()
    } else {
        parse_json(&body)?
    };
    params
        .validate(session.study.n(), session.study.d())
        .map_err(|e| ApiError::from(cprism_core::Error::from(e)))?;
    let job = {
        let mut state = session.state.write().unwrap();
        if let Some(running) = state.running_job() {
            return Err(ApiError::new(
                axum::http::StatusCode::CONFLICT,
                "job_running",
                format!("discovery job {} is still running", running.id),
            ));
        }
        state.start_job()
    };
    let job_id = job.id.clone();
    tokio::task::spawn_blocking(move || run_discovery(&app, &session, &job, &params));
    Ok(Json(json!({ "job_id": job_id })))
}

fn run_discovery(app: &AppState, session: &Session, job: &Job, params: &SearchParams) {
    let study = &session.study;
    let result = discover_with(study, params, |report| {
        job.generation.store(report.generation, Ordering::Relaxed);
        job.evaluations.store(report.evaluations, Ordering::Relaxed);
        if job.is_cancel_requested() {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    });
    let mut state = session.state.write().unwrap();
    let mut outcome = job.outcome.lock().unwrap();
    match result {
        Ok(res) => {
            let front = front_report(&res, &study.binarized.schema, true);
            job.generation.store(res.generations_run, Ordering::Relaxed);
            job.evaluations.store(res.evaluations, Ordering::Relaxed);
            if res.stop_reason == StopReason::Cancelled {
                outcome.status = JobStatus::Cancelled;
                outcome.front = Some(front);
            } else {
                match state.install_front(front.clone(), study.d()) {
                    Ok(()) => outcome.front = Some(front),
                    Err(e) => outcome.error = Some(e),
                }
                outcome.status = JobStatus::Done;
            }
        }
        Err(e) => {
            outcome.status = if job.is_cancel_requested() {
                JobStatus::Cancelled
            } else {
                JobStatus::Done
            };
            outcome.error = Some(e.to_string());
        }
    }
    tracing::info!(session = %session.id, job = %job.id, status = ?outcome.status, "discovery finished");
    drop(outcome);
    drop(state);
    app.persist(session);
}

fn job_json(job: &Job) -> Value {
    let outcome = job.outcome.lock().unwrap();
    let mut v = json!({
        "job_id": job.id,
        "status": outcome.status,
        "generation": job.generation.load(Ordering::Relaxed),
        "evaluations": job.evaluations.load(Ordering::Relaxed),
    });
    if let Some(front) = &outcome.front {
        v["front"] = serde_json::to_value(FrontReport {
            diagnostics: None,
            ..front.clone()
        })
        .unwrap_or(Value::Null);
    }
    if let Some(e) = &outcome.error {
        v["error"] = json!(e);
    }
    v
}

fn find_job(session: &Session, job_id: &str) -> Result<Arc<Job>, ApiError> {
    session
        .state
        .read()
        .unwrap()
        .jobs
        .get(job_id)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("no job {job_id:?}")))
}

async fn get_job(State(app): State<AppState>, Path((id, job_id)): Path<(String, String)>) -> ApiResult<Value> {
    let session = app.session(&id)?;
    let job = find_job(&session, &job_id)?;
    Ok(Json(job_json(&job)))
}

async fn cancel_job(State(app): State<AppState>, Path((id, job_id)): Path<(String, String)>) -> ApiResult<Value> {
    let session = app.session(&id)?;
    let job = find_job(&session, &job_id)?;
    if job.status() == JobStatus::Running {
        job.cancel.store(true, Ordering::Relaxed);
    }
    Ok(Json(job_json(&job)))
}

async fn list_subgroups(State(app): State<AppState>, Path(id): Path<String>, Query(q): Params) -> ApiResult<Value> {
    let session = app.session(&id)?;
    let all_fronts = q.get("fronts").is_some_and(|v| v == "all");
    let state = session.state.read().unwrap();
    let subgroups: Vec<&SubgroupReport> = state.all().map(|s| &s.report).collect();
    let mut v = json!({ "subgroups": subgroups, "search": Value::Null });
    if let Some(front) = &state.front {
        v["search"] = json!({
            "generations_run": front.generations_run,
            "stop_reason": front.stop_reason,
            "restarts": front.restarts,
            "min_coverage": front.min_coverage,
            "evaluations": front.evaluations,
        });
        if all_fronts {
            v["diagnostics"] = json!(front.diagnostics.clone().unwrap_or_default());
        }
    } else if all_fronts {
        v["diagnostics"] = json!([]);
    }
    Ok(Json(v))
}

/// Evaluates a subgroup against the study; the ALL antecedent is refused.
fn evaluate(study: &Study, subgroup: &Subgroup) -> Result<StoredSubgroup, ApiError> {
    if subgroup.genome.count_selected() == 0 {
        return Err(ApiError::unprocessable("empty_antecedent", "subgroup antecedent selects no atoms"));
    }
    let metrics = study.evaluate(&subgroup.genome)?;
    Ok(StoredSubgroup {
        genome: subgroup.genome.clone(),
        report: SubgroupReport::new(subgroup, &study.binarized.schema, metrics),
    })
}

async fn post_subgroup(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Value> {
    let session = app.session(&id)?;
    let json: SubgroupJson = parse_json(&body)?;
    let (mut subgroup, snapped) = Subgroup::from_json(&json, &session.study.binarized.schema)?;
    subgroup.origin = Origin::UserDefined;
    let entry = {
        let mut state = session.state.write().unwrap();
        let editable = state.user.iter().any(|s| s.report.id == json.id);
        subgroup.id = if editable { json.id.clone() } else { state.fresh_id("u") };
        let entry = evaluate(&session.study, &subgroup)?;
        state.upsert_user(entry.clone());
        entry
    };
    app.persist(&session);
    Ok(Json(json!({ "subgroup": entry.report, "snapped": snapped })))
}

async fn delete_subgroup(State(app): State<AppState>, Path((id, sid)): Path<(String, String)>) -> ApiResult<Value> {
    let session = app.session(&id)?;
    {
        let mut state = session.state.write().unwrap();
        let before = state.user.len();
        state.user.retain(|s| s.report.id != sid);
        if state.user.len() == before {
            return Err(if state.find(&sid).is_some() {
                ApiError::unprocessable("not_user_defined", "discovered subgroups cannot be deleted")
            } else {
                ApiError::not_found(format!("no subgroup {sid:?}"))
            });
        }
    }
    app.persist(&session);
    Ok(Json(json!({ "deleted": sid })))
}

fn lookup(session: &Session, sid: &str) -> Result<StoredSubgroup, ApiError> {
    session
        .state
        .read()
        .unwrap()
        .find(sid)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("no subgroup {sid:?}")))
}

#[derive(serde::Deserialize)]
struct MergeBody {
    a: String,
    b: String,
}

async fn merge(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Value> {
    let session = app.session(&id)?;
    let req: MergeBody = parse_json(&body)?;
    let (a, b) = (lookup(&session, &req.a)?, lookup(&session, &req.b)?);
    let mut merged = merge_subgroups(&a.subgroup(), &b.subgroup(), &session.study.binarized.schema)?;
    let entry = {
        let mut state = session.state.write().unwrap();
        merged.id = state.fresh_id("m");
        let entry = evaluate(&session.study, &merged)?;
        state.upsert_user(entry.clone());
        entry
    };
    app.persist(&session);
    Ok(Json(json!({ "subgroup": entry.report })))
}

#[derive(serde::Deserialize)]
struct SplitBody {
    covariate: String,
}

async fn split(State(app): State<AppState>, Path((id, sid)): Path<(String, String)>, body: Bytes) -> ApiResult<Value> {
    let session = app.session(&id)?;
    let req: SplitBody = parse_json(&body)?;
    let source = lookup(&session, &sid)?;
    let (mut first, mut second) = split_subgroup(&source.subgroup(), &req.covariate, &session.study.binarized.schema)?;
    let entries = {
        let mut state = session.state.write().unwrap();
        first.id = state.fresh_id("p");
        second.id = state.fresh_id("p");
        let entries = [evaluate(&session.study, &first)?, evaluate(&session.study, &second)?];
        for e in &entries {
            state.upsert_user(e.clone());
        }
        entries
    };
    app.persist(&session);
    Ok(Json(json!({ "subgroups": [&entries[0].report, &entries[1].report] })))
}

fn match_params(q: &HashMap<String, String>) -> Result<MatchParams, ApiError> {
    let d = MatchParams::default();
    Ok(MatchParams {
        epsilon: param(q, "epsilon", d.epsilon)?,
        bin_width: param(q, "bin_width", d.bin_width)?,
        display_cap: param(q, "display_cap", d.display_cap)?,
        seed: param(q, "seed", d.seed)?,
    })
}

fn cover_of(session: &Session, sid: &str) -> Result<UnitMask, ApiError> {
    let entry = lookup(session, sid)?;
    Ok(session.study.cover(&entry.genome)?)
}

async fn match_subgroup(
    State(app): State<AppState>,
    Path((id, sid)): Path<(String, String)>,
    Query(q): Params,
) -> ApiResult<Value> {
    let session = app.session(&id)?;
    let params = match_params(&q)?;
    let covered = cover_of(&session, &sid)?;
    let report = blocking(move || {
        let study = &session.study;
        Ok(match_report(&covered, &study.dataset, study.scores(), &params)?)
    })
    .await?;
    let mut v = to_value(&report)?;
    v["subgroup_id"] = json!(sid);
    v["epsilon"] = json!(params.epsilon);
    Ok(Json(v))
}

fn to_value<T: Serialize>(value: &T) -> Result<Value, ApiError> {
    serde_json::to_value(value).map_err(|e| ApiError::internal(e.to_string()))
}

fn covariate_values(study: &Study, row: usize) -> serde_json::Map<String, Value> {
    let ds = &study.dataset;
    ds.schema()
        .iter()
        .enumerate()
        .map(|(c, spec)| {
            let v = match ds.value(row, c) {
                CovariateValue::Category(s) => json!(s),
                CovariateValue::Number(x) => json!(x),
            };
            (spec.name.clone(), v)
        })
        .collect()
}

async fn matched_units(
    State(app): State<AppState>,
    Path((id, sid)): Path<(String, String)>,
    Query(q): Params,
) -> ApiResult<Value> {
    let session = app.session(&id)?;
    let params = match_params(&q)?;
    let limit: usize = param(&q, "limit", 100)?;
    let offset: usize = param(&q, "offset", 0)?;
    let covered = cover_of(&session, &sid)?;
    blocking(move || {
        let study = &session.study;
        let pairs = cprism_core::matching::match_units(&covered, &study.dataset, study.scores(), params.epsilon)?;
        let row_of: HashMap<u64, usize> = study.dataset.ids().iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let total = 2 * pairs.len();
        let rows: Vec<Value> = (offset..total.min(offset.saturating_add(limit)))
            .map(|k| {
                let pair = &pairs[k / 2];
                let (unit, role) = if k % 2 == 0 {
                    (pair.treated_id, "treated")
                } else {
                    (pair.control_id, "control")
                };
                let i = row_of[&unit];
                json!({
                    "id": unit,
                    "pair": k / 2,
                    "role": role,
                    "e": study.scores()[i],
                    "t": u8::from(study.dataset.treated()[i]),
                    "y": study.dataset.outcome()[i],
                    "ite": pair.ite,
                    "covariates": covariate_values(study, i),
                })
            })
            .collect();
        Ok(Json(json!({
            "subgroup_id": sid,
            "total": total,
            "offset": offset,
            "limit": limit,
            "rows": rows,
        })))
    })
    .await
}

async fn projection(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<LayoutReport> {
    let session = app.session(&id)?;
    let layout = session
        .projection
        .get_or_try_init(|| {
            let session = session.clone();
            blocking(move || {
                // stratify the subsample by arm; subgroup tags are filled per request
                let study = &session.study;
                let mut treated = UnitMask::empty(study.n());
                (0..study.n()).filter(|&i| study.dataset.treated()[i]).for_each(|i| treated.insert(i));
                let report = project_dataset(
                    &study.dataset,
                    &[("treated".into(), treated)],
                    &NmdsParams::default(),
                    DEFAULT_POINT_CAP,
                )
                .map_err(|e| ApiError::from(cprism_core::Error::from(e)))?;
                Ok(Arc::new(report))
            })
        })
        .await?
        .clone();
    let study = &session.study;
    let row_of: HashMap<u64, usize> = study.dataset.ids().iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let masks: Vec<(String, UnitMask)> = {
        let state = session.state.read().unwrap();
        state
            .all()
            .map(|s| Ok((s.report.id.clone(), study.cover(&s.genome)?)))
            .collect::<Result<_, cprism_core::Error>>()?
    };
    let mut report = (*layout).clone();
    for p in &mut report.points {
        let i = row_of[&p.id];
        p.subgroups = masks.iter().filter(|(_, m)| m.contains(i)).map(|(id, _)| id.clone()).collect();
    }
    Ok(Json(report))
}

async fn distribution(
    State(app): State<AppState>,
    Path((id, name)): Path<(String, String)>,
    Query(q): Params,
) -> ApiResult<Value> {
    let session = app.session(&id)?;
    let study = &session.study;
    let ds = &study.dataset;
    let c = ds
        .covariate_index(&name)
        .ok_or_else(|| ApiError::not_found(format!("no covariate {name:?}")))?;
    let bins: usize = param(&q, "bins", 20)?;
    if bins == 0 || bins > 1000 {
        return Err(ApiError::bad_request("bins must lie in 1..=1000"));
    }
    let within = q.get("subgroup").map(|sid| cover_of(&session, sid)).transpose()?;
    let treated = ds.treated();
    let tally = |rows: &mut dyn Iterator<Item = usize>| {
        let (mut count, mut t, mut inside) = (0usize, 0usize, 0usize);
        for i in rows {
            count += 1;
            t += usize::from(treated[i]);
            inside += usize::from(within.as_ref().is_some_and(|m| m.contains(i)));
        }
        (count, t, inside)
    };
    let with_subgroup = |mut v: Value, inside: usize| {
        if within.is_some() {
            v["in_subgroup"] = json!(inside);
        }
        v
    };
    let body = match &ds.columns()[c] {
        Column::Categorical { levels, codes } => {
            let values: Vec<Value> = levels
                .iter()
                .enumerate()
                .map(|(k, level)| {
                    let (count, t, inside) = tally(&mut (0..ds.n()).filter(|&i| codes[i] as usize == k));
                    with_subgroup(json!({ "value": level, "count": count, "treated": t, "control": count - t }), inside)
                })
                .collect();
            json!({ "covariate": name, "kind": "categorical", "values": values })
        }
        Column::Numerical(x) => {
            let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let width = (hi - lo) / bins as f64;
            let bin_of = |v: f64| {
                if width > 0.0 {
                    (((v - lo) / width) as usize).min(bins - 1)
                } else {
                    0
                }
            };
            let nb = if width > 0.0 { bins } else { 1 };
            let hist: Vec<Value> = (0..nb)
                .map(|b| {
                    let (count, t, inside) = tally(&mut (0..ds.n()).filter(|&i| bin_of(x[i]) == b));
                    let edge_hi = if b + 1 == nb { hi } else { lo + width * (b + 1) as f64 };
                    with_subgroup(
                        json!({ "lo": lo + width * b as f64, "hi": edge_hi, "count": count, "treated": t, "control": count - t }),
                        inside,
                    )
                })
                .collect();
            let schema = &study.binarized.schema;
            let edges: Vec<f64> = schema
                .covariate_atoms(c)
                .filter_map(|j| match schema.atom(j).predicate {
                    AtomPredicate::Interval { hi, .. } if hi.is_finite() => Some(hi),
                    _ => None,
                })
                .collect();
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            json!({
                "covariate": name,
                "kind": "numerical",
                "min": lo,
                "max": hi,
                "mean": mean,
                "bins": hist,
                "atom_edges": edges,
            })
        }
    };
    Ok(Json(body))
}
