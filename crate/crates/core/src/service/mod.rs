//! Annotation session backend.
//!
//! Every state change is an [`Event`] appended to the store before the
//! caller sees its effect; replaying the log rebuilds the same [`State`].
//! Item durations come from an injectable [`Clock`]: the time between the
//! item being served and its submission, minus paused intervals. Action
//! counts are reported by the client and stored as received.

pub mod http;
mod store;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::agreement::Judgment;
use crate::corpus::{tokenize, CorpusRecord, ParallelSentence};
use crate::error::{Error, Result};
use crate::feedback::postedit_diff;
use crate::metrics::{ksmr, ter, EffortRecord};
use crate::planner::{presentation_order, AssignmentPlan, Mode, Pass, QueueItem};
use crate::training::{AnnotatedRecord, FeedbackMode};

pub use store::{EventLog, LogRecord};

/// Millisecond time source.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// A clock moved by hand, for tests.
#[derive(Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        ManualClock(AtomicU64::new(start_ms))
    }

    pub fn advance(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }

    pub fn set(&self, ms: u64) {
        self.0.store(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

/// Text shown for one sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemText {
    pub source: String,
    pub hypothesis: String,
    pub hypothesis_tokens: Vec<String>,
    pub reference_tokens: Vec<String>,
    pub reference_chars: u64,
    pub talk_id: String,
    pub topic: String,
}

/// Everything the service serves: sentence texts and per-annotator queues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceData {
    pub items: BTreeMap<String, ItemText>,
    pub queues: BTreeMap<String, Vec<QueueItem>>,
}

impl ServiceData {
    /// Builds queues from a plan. Every queued sentence needs a hypothesis
    /// (`hyp`) and a reference (`trg`).
    pub fn build(
        records: &[CorpusRecord],
        plan: &AssignmentPlan,
        agreement_ids: &[String],
    ) -> Result<Self> {
        let sentences: Vec<ParallelSentence> = records
            .iter()
            .map(|r| ParallelSentence {
                id: r.id.clone(),
                source: vec![],
                reference: None,
                talk_id: r.talk_id.clone(),
                position: r.position,
                topic: r.topic.clone(),
            })
            .collect();
        let by_id: HashMap<&str, &CorpusRecord> =
            records.iter().map(|r| (r.id.as_str(), r)).collect();
        let mut queues = BTreeMap::new();
        let mut items = BTreeMap::new();
        for ann in plan.annotators() {
            let q = presentation_order(plan, ann, &sentences, agreement_ids)?;
            for it in &q {
                if items.contains_key(&it.sentence_id) {
                    continue;
                }
                let r = by_id[it.sentence_id.as_str()];
                let hyp = r.hyp.as_ref().ok_or_else(|| {
                    Error::invalid(format!("{}: no hypothesis to annotate", r.id))
                })?;
                let trg = r.trg.as_ref().ok_or_else(|| {
                    Error::invalid(format!("{}: no reference for effort metrics", r.id))
                })?;
                if trg.chars().count() == 0 {
                    return Err(Error::invalid(format!("{}: empty reference", r.id)));
                }
                items.insert(
                    r.id.clone(),
                    ItemText {
                        source: r.src.clone(),
                        hypothesis: hyp.clone(),
                        hypothesis_tokens: tokenize(hyp),
                        reference_tokens: tokenize(trg),
                        reference_chars: trg.chars().count() as u64,
                        talk_id: r.talk_id.clone(),
                        topic: r.topic.clone(),
                    },
                );
            }
            queues.insert(ann.to_string(), q);
        }
        Ok(ServiceData { items, queues })
    }

    pub fn fingerprint(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        let mut h: u64 = 0xcbf29ce484222325;
        for b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        Ok(format!("{h:016x}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreferredMode {
    Postedit,
    Marking,
    NoPreference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerceivedSpeed {
    MarkingFaster,
    PosteditFaster,
    Same,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveyAnswers {
    pub preferred_mode: PreferredMode,
    pub perceived_speed: PerceivedSpeed,
    #[serde(default)]
    pub choice_policy: String,
    #[serde(default)]
    pub suggestions: String,
}

/// Client payload of a submission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitRequest {
    pub sentence_id: String,
    pub mode: Mode,
    /// Required for choice items: `marking` or `postedit`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_mode: Option<Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flags: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edited_text: Option<String>,
    pub keystrokes: u64,
    pub mouse_actions: u64,
    /// Client-chosen id making retries idempotent.
    pub nonce: String,
}

/// A stored annotation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub sentence_id: String,
    pub annotator_id: String,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_mode: Option<Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flags: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edited_text: Option<String>,
    pub duration_ms: u64,
    pub keystrokes: u64,
    pub mouse_actions: u64,
    pub pause_count: u32,
    pub submitted_at: u64,
    pub pass: Pass,
    pub nonce: String,
}

impl Annotation {
    /// The mode the annotation was actually made in.
    pub fn effective_mode(&self) -> Mode {
        self.chosen_mode.unwrap_or(self.mode)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Served {
        annotator_id: String,
        index: usize,
        at_ms: u64,
    },
    Paused {
        annotator_id: String,
        at_ms: u64,
    },
    Resumed {
        annotator_id: String,
        at_ms: u64,
    },
    Submitted {
        annotation: Annotation,
    },
    Survey {
        annotator_id: String,
        answers: SurveyAnswers,
        at_ms: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct SessionState {
    pub cursor: usize,
    pub completed: usize,
    pub served_at: Option<u64>,
    pub paused_since: Option<u64>,
    /// Paused time since the current item was served.
    pub paused_ms: u64,
    pub pause_count: u32,
    pub survey_submitted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct State {
    pub sessions: BTreeMap<String, SessionState>,
    pub annotations: Vec<Annotation>,
    pub surveys: BTreeMap<String, SurveyAnswers>,
    #[serde(skip)]
    nonces: HashMap<String, usize>,
}

impl State {
    fn rebuild_index(&mut self) {
        self.nonces = self
            .annotations
            .iter()
            .enumerate()
            .map(|(i, a)| (a.nonce.clone(), i))
            .collect();
    }

    /// Applies one event. Validation happened before it was logged.
    pub fn apply(&mut self, ev: &Event) {
        match ev {
            Event::Served {
                annotator_id,
                at_ms,
                ..
            } => {
                let s = self.sessions.entry(annotator_id.clone()).or_default();
                s.served_at = Some(*at_ms);
                s.paused_ms = 0;
                s.pause_count = 0;
            }
            Event::Paused {
                annotator_id,
                at_ms,
            } => {
                let s = self.sessions.entry(annotator_id.clone()).or_default();
                s.paused_since = Some(*at_ms);
                if s.served_at.is_some() {
                    s.pause_count += 1;
                }
            }
            Event::Resumed {
                annotator_id,
                at_ms,
            } => {
                let s = self.sessions.entry(annotator_id.clone()).or_default();
                if let Some(since) = s.paused_since.take() {
                    if s.served_at.is_some() {
                        s.paused_ms += at_ms.saturating_sub(since);
                    }
                }
            }
            Event::Submitted { annotation } => {
                let s = self
                    .sessions
                    .entry(annotation.annotator_id.clone())
                    .or_default();
                s.cursor += 1;
                s.completed += 1;
                s.served_at = None;
                s.paused_ms = 0;
                s.pause_count = 0;
                self.nonces
                    .insert(annotation.nonce.clone(), self.annotations.len());
                self.annotations.push(annotation.clone());
            }
            Event::Survey {
                annotator_id,
                answers,
                ..
            } => {
                self.sessions
                    .entry(annotator_id.clone())
                    .or_default()
                    .survey_submitted = true;
                self.surveys.insert(annotator_id.clone(), answers.clone());
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemView {
    pub sentence_id: String,
    pub source_text: String,
    pub hypothesis_text: String,
    pub hypothesis_tokens: Vec<String>,
    pub instruction_mode: Mode,
    pub pass: Pass,
    pub index: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextItem {
    Item(ItemView),
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub annotator_id: String,
    pub cursor: usize,
    pub total: usize,
    pub completed: usize,
    pub paused: bool,
    pub survey_submitted: bool,
}

/// Export output: training records and the effort table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Export {
    pub dataset_jsonl: String,
    pub effort_csv: String,
}

pub const EFFORT_COLUMNS: [&str; 17] = [
    "sentence_id",
    "user_id",
    "mode",
    "chosen_mode",
    "pass",
    "talk_id",
    "topic",
    "src_length",
    "trg_length",
    "keystrokes",
    "mouse_actions",
    "duration_ms",
    "pause_count",
    "reference_chars",
    "ksmr",
    "correction_rate",
    "ter",
];

struct Inner {
    state: State,
    log: EventLog,
}

pub struct Service {
    data: Arc<ServiceData>,
    clock: Arc<dyn Clock>,
    inner: Mutex<Inner>,
}

fn rejected(code: &'static str, reason: impl Into<String>) -> Error {
    Error::rejected(code, reason)
}

impl Service {
    pub fn open(
        dir: &Path,
        data: ServiceData,
        clock: Arc<dyn Clock>,
        snapshot_every: u64,
    ) -> Result<Self> {
        let (log, state) = EventLog::open(dir, &data.fingerprint()?, snapshot_every, false)?;
        Ok(Service {
            data: Arc::new(data),
            clock,
            inner: Mutex::new(Inner { state, log }),
        })
    }

    pub fn data(&self) -> &ServiceData {
        &self.data
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        // a panic while holding the lock cannot leave a half-applied event:
        // events are applied after they are logged, in one call
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn queue(&self, annotator_id: &str) -> Result<&Vec<QueueItem>> {
        self.data
            .queues
            .get(annotator_id)
            .ok_or_else(|| Error::NotFound(format!("annotator {annotator_id}")))
    }

    fn commit(inner: &mut Inner, ev: Event) -> Result<()> {
        inner.log.append(&ev)?;
        inner.state.apply(&ev);
        inner.log.maybe_snapshot(&inner.state)
    }

    pub fn state(&self) -> State {
        self.lock().state.clone()
    }

    pub fn last_seq(&self) -> u64 {
        self.lock().log.last_seq()
    }

    pub fn progress(&self, annotator_id: &str) -> Result<Progress> {
        let q = self.queue(annotator_id)?;
        let inner = self.lock();
        let s = inner
            .state
            .sessions
            .get(annotator_id)
            .cloned()
            .unwrap_or_default();
        Ok(Progress {
            annotator_id: annotator_id.into(),
            cursor: s.cursor,
            total: q.len(),
            completed: s.completed,
            paused: s.paused_since.is_some(),
            survey_submitted: s.survey_submitted,
        })
    }

    pub fn next_item(&self, annotator_id: &str) -> Result<NextItem> {
        let q = self.queue(annotator_id)?;
        let mut inner = self.lock();
        let s = inner
            .state
            .sessions
            .get(annotator_id)
            .cloned()
            .unwrap_or_default();
        if s.paused_since.is_some() {
            return Err(rejected("paused", "resume the session first"));
        }
        let Some(item) = q.get(s.cursor) else {
            return Ok(NextItem::Done);
        };
        if s.served_at.is_none() {
            let ev = Event::Served {
                annotator_id: annotator_id.into(),
                index: s.cursor,
                at_ms: self.clock.now_ms(),
            };
            Self::commit(&mut inner, ev)?;
        }
        let text = &self.data.items[&item.sentence_id];
        Ok(NextItem::Item(ItemView {
            sentence_id: item.sentence_id.clone(),
            source_text: text.source.clone(),
            hypothesis_text: text.hypothesis.clone(),
            hypothesis_tokens: text.hypothesis_tokens.clone(),
            instruction_mode: item.mode,
            pass: item.pass,
            index: s.cursor,
            total: q.len(),
        }))
    }

    pub fn pause(&self, annotator_id: &str) -> Result<Progress> {
        self.queue(annotator_id)?;
        {
            let mut inner = self.lock();
            let s = inner
                .state
                .sessions
                .get(annotator_id)
                .cloned()
                .unwrap_or_default();
            if s.paused_since.is_some() {
                return Err(rejected("already_paused", "session is already paused"));
            }
            let ev = Event::Paused {
                annotator_id: annotator_id.into(),
                at_ms: self.clock.now_ms(),
            };
            Self::commit(&mut inner, ev)?;
        }
        self.progress(annotator_id)
    }

    pub fn resume(&self, annotator_id: &str) -> Result<Progress> {
        self.queue(annotator_id)?;
        {
            let mut inner = self.lock();
            let s = inner
                .state
                .sessions
                .get(annotator_id)
                .cloned()
                .unwrap_or_default();
            if s.paused_since.is_none() {
                return Err(rejected("not_paused", "session is not paused"));
            }
            let ev = Event::Resumed {
                annotator_id: annotator_id.into(),
                at_ms: self.clock.now_ms(),
            };
            Self::commit(&mut inner, ev)?;
        }
        self.progress(annotator_id)
    }

    pub fn submit(&self, annotator_id: &str, req: SubmitRequest) -> Result<Annotation> {
        let q = self.queue(annotator_id)?;
        let mut inner = self.lock();
        if let Some(&i) = inner.state.nonces.get(&req.nonce) {
            let prev = &inner.state.annotations[i];
            if prev.annotator_id == annotator_id && prev.sentence_id == req.sentence_id {
                return Ok(prev.clone());
            }
            return Err(rejected(
                "nonce_reused",
                "nonce belongs to another submission",
            ));
        }
        let s = inner
            .state
            .sessions
            .get(annotator_id)
            .cloned()
            .unwrap_or_default();
        if s.paused_since.is_some() {
            return Err(rejected("paused", "resume before submitting"));
        }
        let Some(item) = q.get(s.cursor) else {
            return Err(rejected("done", "all items are annotated"));
        };
        if item.sentence_id != req.sentence_id {
            return Err(rejected(
                "stale_item",
                format!(
                    "current item is {}, got {}",
                    item.sentence_id, req.sentence_id
                ),
            ));
        }
        let Some(served_at) = s.served_at else {
            return Err(rejected(
                "not_served",
                "request the item before submitting it",
            ));
        };
        if req.mode != item.mode {
            return Err(rejected(
                "mode_mismatch",
                format!("item mode is {}, got {}", item.mode, req.mode),
            ));
        }
        let effective = match (item.mode, req.chosen_mode) {
            (Mode::Choice, Some(m @ (Mode::Marking | Mode::Postedit))) => m,
            (Mode::Choice, _) => {
                return Err(rejected(
                    "mode_mismatch",
                    "choice items need chosen_mode marking or postedit",
                ))
            }
            (m, None) => m,
            (_, Some(_)) => {
                return Err(rejected(
                    "mode_mismatch",
                    "chosen_mode is only valid for choice items",
                ))
            }
        };
        let n_tokens = self.data.items[&item.sentence_id].hypothesis_tokens.len();
        match (effective, &req.flags, &req.edited_text) {
            (Mode::Marking, Some(f), None) => {
                if f.len() != n_tokens {
                    return Err(rejected(
                        "malformed_flags",
                        format!("{} flags for {n_tokens} tokens", f.len()),
                    ));
                }
            }
            (Mode::Marking, None, _) => {
                return Err(rejected(
                    "mode_mismatch",
                    "marking needs flags, not edited_text",
                ))
            }
            (Mode::Postedit, None, Some(_)) => {}
            (Mode::Postedit, _, _) => {
                return Err(rejected(
                    "mode_mismatch",
                    "post-edit needs edited_text, not flags",
                ))
            }
            (Mode::Marking, Some(_), Some(_)) | (Mode::Choice, _, _) => {
                return Err(rejected(
                    "mode_mismatch",
                    "give either flags or edited_text",
                ))
            }
        }
        let now = self.clock.now_ms();
        let annotation = Annotation {
            sentence_id: req.sentence_id,
            annotator_id: annotator_id.into(),
            mode: item.mode,
            chosen_mode: req.chosen_mode,
            flags: req.flags,
            edited_text: req.edited_text,
            duration_ms: now.saturating_sub(served_at).saturating_sub(s.paused_ms),
            keystrokes: req.keystrokes,
            mouse_actions: req.mouse_actions,
            pause_count: s.pause_count,
            submitted_at: now,
            pass: item.pass,
            nonce: req.nonce,
        };
        Self::commit(
            &mut inner,
            Event::Submitted {
                annotation: annotation.clone(),
            },
        )?;
        Ok(annotation)
    }

    /// Accepts survey answers given as JSON, after the last item.
    pub fn submit_survey(&self, annotator_id: &str, answers: serde_json::Value) -> Result<()> {
        let q = self.queue(annotator_id)?;
        let answers: SurveyAnswers = serde_json::from_value(answers)
            .map_err(|e| rejected("invalid_survey", e.to_string()))?;
        let mut inner = self.lock();
        let s = inner
            .state
            .sessions
            .get(annotator_id)
            .cloned()
            .unwrap_or_default();
        if s.cursor < q.len() {
            return Err(rejected(
                "incomplete",
                format!("{} of {} items annotated", s.cursor, q.len()),
            ));
        }
        if s.survey_submitted {
            return Err(rejected("duplicate_survey", "survey already submitted"));
        }
        let ev = Event::Survey {
            annotator_id: annotator_id.into(),
            answers,
            at_ms: self.clock.now_ms(),
        };
        Self::commit(&mut inner, ev)
    }

    pub fn export(&self) -> Result<Export> {
        export(&self.data, &self.lock().state)
    }
}

fn effort_row(data: &ServiceData, a: &Annotation) -> Result<Vec<String>> {
    let text = &data.items[&a.sentence_id];
    let effort = EffortRecord {
        sentence_id: a.sentence_id.clone(),
        keystrokes: a.keystrokes,
        mouse_actions: a.mouse_actions,
        duration_ms: a.duration_ms,
        reference_chars: text.reference_chars,
    };
    let flags = annotation_flags(text, a);
    let rate = if flags.is_empty() {
        0.0
    } else {
        flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64
    };
    let t = 100.0 * ter(&text.hypothesis_tokens, &text.reference_tokens)?;
    Ok(vec![
        a.sentence_id.clone(),
        a.annotator_id.clone(),
        a.mode.to_string(),
        a.chosen_mode.map(|m| m.to_string()).unwrap_or_default(),
        a.pass.as_str().into(),
        text.talk_id.clone(),
        text.topic.clone(),
        text.source.chars().count().to_string(),
        text.reference_chars.to_string(),
        a.keystrokes.to_string(),
        a.mouse_actions.to_string(),
        a.duration_ms.to_string(),
        a.pause_count.to_string(),
        text.reference_chars.to_string(),
        ksmr(&effort)?.to_string(),
        rate.to_string(),
        t.to_string(),
    ])
}

fn annotation_flags(text: &ItemText, a: &Annotation) -> Vec<bool> {
    match (&a.flags, &a.edited_text) {
        (Some(f), _) => f.clone(),
        (None, Some(e)) => postedit_diff(&text.hypothesis_tokens, &tokenize(e)),
        (None, None) => Vec::new(),
    }
}

/// Main-pass annotations become training records; every annotation gets an
/// effort row. Output depends only on the data and the state.
pub fn export(data: &ServiceData, state: &State) -> Result<Export> {
    let mut dataset = String::new();
    for a in state.annotations.iter().filter(|a| a.pass == Pass::Main) {
        let text = &data.items[&a.sentence_id];
        let rec = match a.effective_mode() {
            Mode::Postedit => AnnotatedRecord {
                sentence_id: a.sentence_id.clone(),
                hyp_tokens: text.hypothesis_tokens.clone(),
                mode: FeedbackMode::Postedit,
                flags: None,
                postedit: Some(tokenize(a.edited_text.as_deref().unwrap_or(""))),
                weights: None,
            },
            _ => AnnotatedRecord {
                sentence_id: a.sentence_id.clone(),
                hyp_tokens: text.hypothesis_tokens.clone(),
                mode: FeedbackMode::Marking,
                flags: a.flags.clone(),
                postedit: None,
                weights: None,
            },
        };
        dataset.push_str(&serde_json::to_string(&rec)?);
        dataset.push('\n');
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(EFFORT_COLUMNS)?;
    for a in &state.annotations {
        w.write_record(effort_row(data, a)?)?;
    }
    let effort_csv = String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.into_error()))?)
        .map_err(|e| Error::invalid(e.to_string()))?;
    Ok(Export {
        dataset_jsonl: dataset,
        effort_csv,
    })
}

/// Sentence-level judgments of all annotations, for agreement analysis.
/// Choice annotations are reported under the `choice` mode.
pub fn judgments(data: &ServiceData, state: &State) -> Vec<Judgment> {
    state
        .annotations
        .iter()
        .map(|a| {
            let flags = annotation_flags(&data.items[&a.sentence_id], a);
            let value = if flags.is_empty() {
                0.0
            } else {
                flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64
            };
            Judgment {
                annotator_id: a.annotator_id.clone(),
                sentence_id: a.sentence_id.clone(),
                mode: a.mode.to_string(),
                pass: if a.pass == Pass::Main {
                    "main"
                } else {
                    "repeat"
                }
                .into(),
                value,
            }
        })
        .collect()
}

/// Mode choices on choice items, as nominal ratings (marking 0, post-edit 1).
pub fn choice_judgments(state: &State) -> Vec<Judgment> {
    state
        .annotations
        .iter()
        .filter_map(|a| {
            let v = match a.chosen_mode? {
                Mode::Postedit => 1.0,
                _ => 0.0,
            };
            Some(Judgment {
                annotator_id: a.annotator_id.clone(),
                sentence_id: a.sentence_id.clone(),
                mode: "choice_selection".into(),
                pass: if a.pass == Pass::Main {
                    "main"
                } else {
                    "repeat"
                }
                .into(),
                value: v,
            })
        })
        .collect()
}

/// Rebuilds the state of a store without serving it.
pub fn replay(dir: &Path, data: &ServiceData) -> Result<State> {
    if !dir.join("meta.json").exists() {
        return Err(Error::NotFound(format!("store {}", dir.display())));
    }
    let (_, state) = EventLog::open(dir, &data.fingerprint()?, u64::MAX, false)?;
    Ok(state)
}
