use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{BackendConfig, Condition, EncodingSelection, ExperimentConfig, Shots};
use super::HarnessError;
use crate::calibrate::{calibrated_classify, calibrated_generate, CalibrationSettings, ProfileCache};
use crate::lm::{
    Backend, DecodingParams, HttpBackend, LmError, LmRequest, LmResponse, MockBackend, ReplayBackend, ReplayStore,
};
use crate::metrics::{
    aggregate, render_table, rouge_l, write_gains_by_technique, write_length_vs_gain, write_records_csv, EvalRecord,
    Report, RougeScore, TableRow,
};
use crate::pipeline::{execute, parse_labeled_output, validate, DecompositionSpec, ValidatedSpec};
use crate::reframe::{
    apply_operators, NegationLexicon, OperatorSpec, ReframeConfig, ReframedInstruction, TechniqueTag, LEXICON_VERSION,
};
use crate::schema::{
    count_tokens_default, encode_prompt, pack_examples, parse_task_file, render_outputs, HeuristicCounter,
    PromptEncoding, SchemaError, ENCODING_COUNT,
};
use crate::{Example, FieldMap, Instance, TaskInstruction};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Reproducibility metadata, written once before any backend call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub started_at: String,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay_store: Option<PathBuf>,
    /// SHA-256 of the store file as it was when the run started.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay_store_sha256: Option<String>,
    pub replay_only: bool,
    pub negation_lexicon: String,
    pub task_files: Vec<PathBuf>,
    pub config: ExperimentConfig,
    /// `task/condition/instance` keys whose content-free profile hit the
    /// probability floor; filled in when the run finishes.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub calibration_floored: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct PreparedTask {
    pub source: PathBuf,
    pub task: TaskInstruction,
    /// Present when some condition is reframed.
    pub reframed: Option<ReframedInstruction>,
    pub decomposition: Option<ValidatedSpec>,
    /// Label set of the task's `restrain` operator; calibrated runs classify over it.
    pub output_space: Option<Vec<String>>,
}

#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub tasks: Vec<PreparedTask>,
    pub negation_lexicon: String,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub records: Vec<EvalRecord>,
    pub report: Report,
}

/// Expands the glob patterns and parses every matched file, in path order.
pub fn load_tasks(patterns: &[String]) -> Result<Vec<(PathBuf, TaskInstruction)>, HarnessError> {
    let mut paths = Vec::new();
    for pattern in patterns {
        let entries =
            glob::glob(pattern).map_err(|e| HarnessError::Config(format!("bad task pattern `{pattern}`: {e}")))?;
        for entry in entries {
            paths.push(entry.map_err(|e| HarnessError::Config(e.to_string()))?);
        }
    }
    paths.sort();
    paths.dedup();
    if paths.is_empty() {
        return Err(HarnessError::Config(format!("no task files match {patterns:?}")));
    }
    let mut tasks: Vec<(PathBuf, TaskInstruction)> = Vec::with_capacity(paths.len());
    for path in paths {
        let text = fs::read_to_string(&path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let parsed =
            parse_task_file(&text).map_err(|e| HarnessError::Validation(format!("{}: {e}", path.display())))?;
        for w in &parsed.warnings {
            log::warn!("{}: {w}", path.display());
        }
        if let Some((other, _)) = tasks.iter().find(|(_, t)| t.id == parsed.task.id) {
            return Err(HarnessError::Config(format!(
                "task id `{}` is defined in both {} and {}",
                parsed.task.id,
                other.display(),
                path.display()
            )));
        }
        tasks.push((path, parsed.task));
    }
    Ok(tasks)
}

/// Loads tasks, applies reframings and validates decompositions. Makes no
/// backend calls.
pub fn prepare(config: &ExperimentConfig) -> Result<PreparedRun, HarnessError> {
    config.check()?;
    let loaded = load_tasks(&config.tasks)?;
    let reframe = match &config.reframe_config {
        Some(path) => Some(ReframeConfig::load(path).map_err(|e| HarnessError::Config(e.to_string()))?),
        None => None,
    };
    let (lexicon, negation_lexicon) = match reframe.as_ref().and_then(|r| r.negation_lexicon.as_ref()) {
        Some(path) => (
            reframe.as_ref().expect("checked").lexicon().map_err(|e| HarnessError::Config(e.to_string()))?,
            path.display().to_string(),
        ),
        None => (NegationLexicon::builtin().clone(), format!("builtin v{LEXICON_VERSION}")),
    };
    let reframed_condition = config.conditions.iter().find(|c| c.reframed);

    let mut tasks = Vec::with_capacity(loaded.len());
    for (source, task) in loaded {
        let entry = reframe.as_ref().and_then(|r| r.entry(&task.id));
        let mut prepared = PreparedTask { source, task, reframed: None, decomposition: None, output_space: None };
        match (entry, reframed_condition) {
            (None, Some(c)) => {
                return Err(HarnessError::Config(format!(
                    "condition `{}` is reframed but the reframe config has no entry for task `{}`",
                    c.name, prepared.task.id
                )));
            }
            (None, None) => {}
            (Some(entry), _) => {
                prepared.output_space = entry.operators.iter().find_map(|op| match op {
                    OperatorSpec::Restrain { output_space } => Some(output_space.clone()),
                    _ => None,
                });
                if reframed_condition.is_some() {
                    let id = &prepared.task.id;
                    let reframed = apply_operators(&prepared.task, &entry.operators, &lexicon)
                        .map_err(|e| HarnessError::Config(format!("task `{id}`: {e}")))?;
                    if let Some(path) = entry.decomposition() {
                        let spec = DecompositionSpec::load(path)
                            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
                        let valid = validate(&spec, &prepared.task)
                            .map_err(|e| HarnessError::Validation(format!("{}: {e}", path.display())))?;
                        prepared.decomposition = Some(valid);
                    }
                    prepared.reframed = Some(reframed);
                }
            }
        }
        tasks.push(prepared);
    }
    Ok(PreparedRun { tasks, negation_lexicon })
}

/// The configured backend, wrapped in the replay cache when a store is set.
pub fn build_backend(config: &ExperimentConfig) -> Result<Arc<dyn Backend>, HarnessError> {
    let store = match &config.replay_store {
        Some(path) => Some(Arc::new(ReplayStore::open(path).map_err(|e| HarnessError::Config(e.to_string()))?)),
        None => None,
    };
    if config.replay_only {
        let store = store.ok_or_else(|| HarnessError::Config("replay-only mode needs a replay store".into()))?;
        return Ok(Arc::new(ReplayBackend::replay_only(config.backend.model_id(), store)));
    }
    let inner: Arc<dyn Backend> = match &config.backend {
        BackendConfig::Mock { script: Some(path), strict } => {
            Arc::new(MockBackend::from_file(path, *strict).map_err(|e| HarnessError::Config(e.to_string()))?)
        }
        BackendConfig::Mock { script: None, .. } => Arc::new(MockBackend::echo()),
        BackendConfig::Http(http) => Arc::new(HttpBackend::new(http.clone())),
    };
    Ok(match store {
        Some(store) => Arc::new(ReplayBackend::new(inner, store)),
        None => inner,
    })
}

pub fn run(config: &ExperimentConfig) -> Result<RunOutcome, HarnessError> {
    let prepared = prepare(config)?;
    let lm = build_backend(config)?;
    execute_run(config, &prepared, lm.as_ref())
}

/// Like [`run`], with a caller-supplied backend (used as is, no replay wrapper).
pub fn run_with_backend(config: &ExperimentConfig, lm: &dyn Backend) -> Result<RunOutcome, HarnessError> {
    let prepared = prepare(config)?;
    execute_run(config, &prepared, lm)
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Runtime(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn file_sha256(path: &Path) -> Option<String> {
    fs::read(path).ok().map(|bytes| hex::encode(Sha256::digest(bytes)))
}

/// Tracks whether a replay miss happened; a miss aborts the run instead of
/// producing an error-tagged record.
struct Watched<'a> {
    inner: &'a dyn Backend,
    missed: AtomicBool,
}

impl<'a> Watched<'a> {
    fn new(inner: &'a dyn Backend) -> Self {
        Watched { inner, missed: AtomicBool::new(false) }
    }

    fn note<T>(&self, r: Result<T, LmError>) -> Result<T, LmError> {
        if let Err(LmError::ReplayMiss(_)) = &r {
            self.missed.store(true, Ordering::Relaxed);
        }
        r
    }

    fn check(&self, what: &str) -> Result<(), HarnessError> {
        if self.missed.load(Ordering::Relaxed) {
            return Err(HarnessError::Runtime(format!("replay store has no entry for a call made by {what}")));
        }
        Ok(())
    }
}

impl Backend for Watched<'_> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn complete(&self, request: &LmRequest) -> Result<LmResponse, LmError> {
        self.note(self.inner.complete(request))
    }

    fn score_candidates(&self, prompt: &str, candidates: &[String]) -> Result<Vec<f64>, LmError> {
        self.note(self.inner.score_candidates(prompt, candidates))
    }
}

/// One (task, condition) pair with everything needed to build prompts.
struct Setup<'a> {
    prepared: &'a PreparedTask,
    condition: &'a Condition,
    task: TaskInstruction,
    constraint: Option<String>,
    techniques: Vec<TechniqueTag>,
    pipeline: Option<&'a ValidatedSpec>,
    encoding_id: u8,
}

impl<'a> Setup<'a> {
    fn new(prepared: &'a PreparedTask, condition: &'a Condition) -> Self {
        let reframed = prepared.reframed.as_ref().filter(|_| condition.reframed);
        Setup {
            prepared,
            condition,
            task: reframed.map_or_else(|| prepared.task.clone(), |r| r.apply_to(&prepared.task)),
            constraint: reframed.and_then(|r| r.constraint.clone()),
            techniques: reframed.map(|r| r.techniques.clone()).unwrap_or_default(),
            pipeline: prepared.decomposition.as_ref().filter(|_| condition.reframed),
            encoding_id: 1,
        }
    }

    fn calibration(&self) -> Option<&CalibrationSettings> {
        self.condition.calibration.as_ref().filter(|c| c.enabled)
    }

    fn describe(&self) -> String {
        format!("task `{}` under `{}`", self.task.id, self.condition.name)
    }
}

struct Ctx<'a> {
    config: &'a ExperimentConfig,
    lm: &'a dyn Backend,
    params: DecodingParams,
    cache: ProfileCache,
}

/// Outcome of one prompt; `error` set means the prediction is unusable.
struct Attempt {
    prediction: String,
    prompt_tokens: usize,
    example_count: usize,
    error: Option<String>,
    floored: bool,
}

impl Attempt {
    fn failed(error: impl ToString) -> Self {
        Attempt {
            prediction: String::new(),
            prompt_tokens: 0,
            example_count: 0,
            error: Some(error.to_string()),
            floored: false,
        }
    }
}

fn choose_examples(
    setup: &Setup,
    encoding_id: u8,
    pool: &[Example],
    inputs: &FieldMap,
) -> Result<Vec<Example>, SchemaError> {
    match setup.condition.shots {
        Shots::Zero => Ok(Vec::new()),
        Shots::Few(k) => Ok(pool[..k.min(pool.len())].to_vec()),
        Shots::Max(budget) => {
            let task = TaskInstruction { positive_examples: pool.to_vec(), instances: Vec::new(), ..setup.task.clone() };
            let encoding = PromptEncoding::table(encoding_id, 0)?;
            pack_examples(&task, &encoding, inputs, setup.constraint.as_deref(), budget, &HeuristicCounter)
        }
    }
}

/// Strips a leading `label:` cue from single-output completions and renders
/// multi-output completions in canonical `label: value` form.
fn normalize_prediction(labels: &[String], completion: &str) -> String {
    let text = completion.trim();
    if labels.len() == 1 {
        return parse_labeled_output(text, labels).map_or_else(|_| text.to_string(), |f| f[0].clone());
    }
    let cue = format!("{}:", labels[0].to_ascii_lowercase());
    let cued = if text.to_ascii_lowercase().starts_with(&cue) { text.to_string() } else { format!("{}: {text}", labels[0]) };
    match parse_labeled_output(&cued, labels) {
        Ok(fields) => render_outputs(labels, &fields),
        Err(_) => text.to_string(),
    }
}

fn plain_attempt(
    setup: &Setup,
    encoding_id: u8,
    pool: &[Example],
    inputs: &FieldMap,
    lm: &dyn Backend,
    params: &DecodingParams,
) -> Attempt {
    let built = choose_examples(setup, encoding_id, pool, inputs).and_then(|examples| {
        let encoding = PromptEncoding::table(encoding_id, examples.len())?;
        let prompt = encode_prompt(&setup.task, &encoding, &examples, inputs, setup.constraint.as_deref())?;
        Ok((prompt, examples.len()))
    });
    let (prompt, example_count) = match built {
        Ok(b) => b,
        Err(e) => return Attempt::failed(e),
    };
    let prompt_tokens = count_tokens_default(&prompt);
    match lm.complete(&LmRequest::new(prompt, params)) {
        Ok(r) => Attempt {
            prediction: normalize_prediction(&setup.task.output_labels, &r.text),
            prompt_tokens,
            example_count,
            error: None,
            floored: false,
        },
        Err(e) => Attempt { prompt_tokens, example_count, ..Attempt::failed(e) },
    }
}

fn calibrated_attempt(setup: &Setup, cal: &CalibrationSettings, instance: &Instance, ctx: &Ctx, lm: &dyn Backend) -> Attempt {
    let pool = &setup.task.positive_examples;
    let built = choose_examples(setup, setup.encoding_id, pool, &instance.inputs).and_then(|examples| {
        let encoding = PromptEncoding::table(setup.encoding_id, examples.len())?;
        let prompt = encode_prompt(&setup.task, &encoding, &examples, &instance.inputs, None)?;
        Ok((encoding, prompt, examples.len()))
    });
    let (encoding, prompt, example_count) = match built {
        Ok(b) => b,
        Err(e) => return Attempt::failed(e),
    };
    let tokens = &cal.content_free_tokens;
    let labels = &setup.task.output_labels;
    let outcome = match &setup.prepared.output_space {
        Some(space) => {
            calibrated_classify(&setup.task, instance, &encoding, space, lm, &ctx.cache, tokens).map(|c| (c.label, c.floored))
        }
        None => {
            let params =
                DecodingParams { temperature: cal.temperature, seed: Some(ctx.config.seed), ..ctx.config.decoding.clone() };
            calibrated_generate(&setup.task, instance, &encoding, lm, cal.k, &params, tokens)
                .map(|(text, t)| (normalize_prediction(labels, &text), t.floored))
        }
    };
    let prompt_tokens = count_tokens_default(&prompt);
    match outcome {
        Ok((prediction, floored)) => Attempt { prediction, prompt_tokens, example_count, error: None, floored },
        Err(e) => Attempt { prompt_tokens, example_count, ..Attempt::failed(e) },
    }
}

/// Leave-one-out over the positive examples; the earliest encoding wins ties.
fn select_encoding(setup: &Setup, ctx: &Ctx) -> Result<u8, HarnessError> {
    let examples = &setup.task.positive_examples;
    if examples.is_empty() {
        return Ok(1);
    }
    let labels = &setup.task.output_labels;
    let mut best = (1u8, f64::NEG_INFINITY);
    for id in 1..=ENCODING_COUNT {
        let mut scores = Vec::with_capacity(examples.len());
        for (held, example) in examples.iter().enumerate() {
            let pool: Vec<Example> =
                examples.iter().enumerate().filter(|(j, _)| *j != held).map(|(_, e)| e.clone()).collect();
            let lm = Watched::new(ctx.lm);
            let attempt = plain_attempt(setup, id, &pool, &example.inputs, &lm, &ctx.params);
            lm.check(&format!("encoding selection for {}", setup.describe()))?;
            let reference = render_outputs(labels, &example.outputs);
            scores.push(if attempt.error.is_some() { 0.0 } else { rouge_l(&attempt.prediction, &[reference]).f1 });
        }
        scores.sort_by(f64::total_cmp);
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        if mean > best.1 {
            best = (id, mean);
        }
    }
    log::info!("{}: selected encoding {} (dev F1 {:.4})", setup.describe(), best.0, best.1);
    Ok(best.0)
}

fn trace_file_name(task: &str, condition: &str, instance: &str) -> String {
    let clean = |s: &str| -> String {
        s.chars().map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' }).collect()
    };
    format!("{}__{}__{}.jsonl", clean(task), clean(condition), clean(instance))
}

struct Evaluated {
    record: EvalRecord,
    /// File name and JSON-lines body of a pipeline trace.
    trace: Option<(String, String)>,
    floored: bool,
}

fn evaluate(setup: &Setup, instance: &Instance, ctx: &Ctx) -> Result<Evaluated, HarnessError> {
    let lm = Watched::new(ctx.lm);
    let labels = &setup.task.output_labels;
    let mut trace = None;
    let (attempt, instruction_tokens) = if let Some(spec) = setup.pipeline {
        let few_shot = setup.condition.shots != Shots::Zero;
        let t = execute(spec, &instance.inputs, &lm, &ctx.params, few_shot);
        let subtasks = &spec.spec().subtasks;
        let attempt = Attempt {
            prediction: if t.final_output.is_empty() { String::new() } else { render_outputs(labels, &t.final_output) },
            prompt_tokens: t.steps.iter().map(|s| count_tokens_default(&s.prompt)).sum(),
            example_count: if few_shot { subtasks.iter().map(|s| s.examples.len()).max().unwrap_or(0) } else { 0 },
            error: t.steps.iter().find_map(|s| s.error.as_ref().map(|e| format!("step {} ({}): {e}", s.step, s.subtask))),
            floored: false,
        };
        let file = trace_file_name(&setup.task.id, &setup.condition.name, &instance.id);
        trace = Some((file, t.to_jsonl()));
        (attempt, subtasks.iter().map(|s| count_tokens_default(&s.instruction)).sum())
    } else {
        let attempt = match setup.calibration() {
            Some(cal) => calibrated_attempt(setup, cal, instance, ctx, &lm),
            None => plain_attempt(setup, setup.encoding_id, &setup.task.positive_examples, &instance.inputs, &lm, &ctx.params),
        };
        let instruction = setup.task.instruction_text();
        let constraint = setup.constraint.as_deref().map_or(0, count_tokens_default);
        (attempt, count_tokens_default(&instruction) + constraint)
    };
    lm.check(&format!("instance `{}` of {}", instance.id, setup.describe()))?;

    let references: Vec<String> = instance.references.iter().map(|r| render_outputs(labels, r)).collect();
    let score = if attempt.error.is_some() { RougeScore::default() } else { rouge_l(&attempt.prediction, &references) };
    if let Some(e) = &attempt.error {
        log::warn!("instance `{}` of {}: {e}", instance.id, setup.describe());
    }
    let record = EvalRecord {
        task_id: setup.task.id.clone(),
        category: setup.task.category,
        condition: setup.condition.name.clone(),
        instance_id: instance.id.clone(),
        prediction: attempt.prediction,
        references,
        score,
        prompt_token_count: attempt.prompt_tokens,
        instruction_token_count: instruction_tokens,
        encoding_id: setup.encoding_id,
        example_count: attempt.example_count,
        techniques: setup.techniques.clone(),
        error: attempt.error,
    };
    Ok(Evaluated { record, trace, floored: attempt.floored })
}

fn execute_run(config: &ExperimentConfig, prepared: &PreparedRun, lm: &dyn Backend) -> Result<RunOutcome, HarnessError> {
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let manifest = RunManifest {
        toolkit_version: crate::VERSION.to_string(),
        started_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        model_id: lm.model_id().to_string(),
        replay_store: config.replay_store.clone(),
        replay_store_sha256: config.replay_store.as_deref().and_then(file_sha256),
        replay_only: config.replay_only,
        negation_lexicon: prepared.negation_lexicon.clone(),
        task_files: prepared.tasks.iter().map(|t| t.source.clone()).collect(),
        config: config.clone(),
        calibration_floored: Vec::new(),
    };
    write_manifest(out, &manifest)?;

    let mut params = config.decoding.clone();
    params.seed = (params.temperature > 0.0).then_some(config.seed);
    let ctx = Ctx { config, lm, params, cache: ProfileCache::new() };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| HarnessError::Runtime(e.to_string()))?;

    let mut setups: Vec<Setup> = prepared
        .tasks
        .iter()
        .flat_map(|t| config.conditions.iter().map(move |c| Setup::new(t, c)))
        .collect();

    // Encodings are fixed before any instance is looked at.
    let chosen: Vec<u8> = pool.install(|| {
        setups
            .par_iter()
            .map(|s| match (s.pipeline, s.condition.encoding) {
                (Some(_), _) => Ok(1),
                (None, EncodingSelection::Fixed(id)) => Ok(id),
                (None, EncodingSelection::SelectBestOnDev) => select_encoding(s, &ctx),
            })
            .collect::<Result<_, _>>()
    })?;
    for (setup, id) in setups.iter_mut().zip(chosen) {
        setup.encoding_id = id;
    }

    let jobs: Vec<(&Setup, &Instance)> =
        setups.iter().flat_map(|s| s.task.instances.iter().map(move |i| (s, i))).collect();
    let mut results: Vec<Evaluated> =
        pool.install(|| jobs.par_iter().map(|(s, i)| evaluate(s, i, &ctx)).collect::<Result<_, _>>())?;
    results.sort_by(|a, b| {
        let key = |e: &Evaluated| (e.record.task_id.clone(), e.record.condition.clone(), e.record.instance_id.clone());
        key(a).cmp(&key(b))
    });

    let traces_dir = out.join("traces");
    if traces_dir.exists() {
        fs::remove_dir_all(&traces_dir).map_err(|e| io_err(&traces_dir, e))?;
    }
    let mut records = Vec::with_capacity(results.len());
    let mut manifest = manifest;
    for Evaluated { record, trace, floored } in results {
        if let Some((name, jsonl)) = trace {
            fs::create_dir_all(&traces_dir).map_err(|e| io_err(&traces_dir, e))?;
            write_file(&traces_dir.join(name), jsonl.as_bytes())?;
        }
        if floored {
            manifest.calibration_floored.push(format!("{}/{}/{}", record.task_id, record.condition, record.instance_id));
        }
        records.push(record);
    }
    if !manifest.calibration_floored.is_empty() {
        log::warn!("{} calibrated predictions used a floored content-free profile", manifest.calibration_floored.len());
        write_manifest(out, &manifest)?;
    }
    let report = write_report_artifacts(out, &records, config.baseline.as_deref())?;
    Ok(RunOutcome { manifest, records, report })
}

fn write_manifest(out: &Path, manifest: &RunManifest) -> Result<(), HarnessError> {
    let mut json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    json.push('\n');
    write_file(&out.join(MANIFEST_FILE), json.as_bytes())
}

/// Writes `records.csv`, `report.txt`, `gains_by_technique.csv` and
/// `length_vs_gain.csv` into `dir`.
pub fn write_report_artifacts(dir: &Path, records: &[EvalRecord], baseline: Option<&str>) -> Result<Report, HarnessError> {
    let runtime = |e: crate::metrics::MetricsError| HarnessError::Runtime(e.to_string());
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut buf = Vec::new();
    write_records_csv(&mut buf, records).map_err(runtime)?;
    write_file(&dir.join("records.csv"), &buf)?;

    let report = aggregate(records, baseline).map_err(runtime)?;
    write_file(&dir.join("report.txt"), render_report(records, &report).as_bytes())?;

    let mut buf = Vec::new();
    write_gains_by_technique(&mut buf, &report).map_err(runtime)?;
    write_file(&dir.join("gains_by_technique.csv"), &buf)?;
    let mut buf = Vec::new();
    write_length_vs_gain(&mut buf, &report).map_err(runtime)?;
    write_file(&dir.join("length_vs_gain.csv"), &buf)?;
    Ok(report)
}

/// Encodings and example counts seen per (task, condition).
type Settings = (BTreeSet<u8>, BTreeSet<usize>);

/// The category table (baseline first, the rest by name), the encoding and
/// realized example counts per task and condition, and the error footer.
pub fn render_report(records: &[EvalRecord], report: &Report) -> String {
    let base = report.baseline.as_deref().and_then(|b| report.condition(b));
    let rows: Vec<TableRow> = base
        .into_iter()
        .chain(report.conditions.iter().filter(|c| Some(c.name.as_str()) != report.baseline.as_deref()))
        .map(TableRow::from_summary)
        .collect();
    let mut out = render_table(&rows, base.map(|_| 0));

    let mut settings: BTreeMap<(&str, &str), Settings> = BTreeMap::new();
    for r in records {
        let entry = settings.entry((&r.task_id, &r.condition)).or_default();
        entry.0.insert(r.encoding_id);
        entry.1.insert(r.example_count);
    }
    out.push_str("\ntask\tcondition\tencoding\texamples\n");
    for ((task, condition), (encodings, counts)) in settings {
        let join = |v: Vec<String>| v.join(",");
        out.push_str(&format!(
            "{task}\t{condition}\t{}\t{}\n",
            join(encodings.iter().map(u8::to_string).collect()),
            join(counts.iter().map(usize::to_string).collect()),
        ));
    }
    out.push_str(&format!(
        "\nerror-tagged records are scored 0 and included in the means: {}\n",
        report.error_count()
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_predictions() {
        let one = vec!["Answer".to_string()];
        assert_eq!(normalize_prediction(&one, " Answer: Span \n"), "Span");
        assert_eq!(normalize_prediction(&one, "Span"), "Span");
        let two = vec!["Question".to_string(), "Answer".to_string()];
        assert_eq!(normalize_prediction(&two, " Why?\nAnswer: yes"), "Question: Why?\nAnswer: yes");
        assert_eq!(normalize_prediction(&two, "no answer here"), "no answer here");
    }

    #[test]
    fn trace_names_are_path_safe() {
        assert_eq!(trace_file_name("t1", "raw/few5", "i 1"), "t1__raw_few5__i_1.jsonl");
    }

    #[test]
    fn exit_codes() {
        assert_eq!(HarnessError::Config("x".into()).exit_code(), 1);
        assert_eq!(HarnessError::Validation("x".into()).exit_code(), 1);
        assert_eq!(HarnessError::Runtime("x".into()).exit_code(), 2);
    }
}
