//! Assignment of talk parts to annotators and annotation modes.
//!
//! Every talk has three parts (beginning, middle, end). A plan gives each
//! part to one annotator in one mode such that every annotator gets nine
//! parts from nine different talks, three per mode and three per position,
//! and the three parts of a talk get three different modes. In addition no
//! mode may cover more than half of the parts at any position.
//!
//! Plans are found by randomized depth-first search with forward checking
//! and restarts.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ParallelSentence, Position};
use crate::error::{Error, Result};

pub const PARTS_PER_ANNOTATOR: usize = 9;
pub const PARTS_PER_MODE: usize = 3;
pub const PARTS_PER_POSITION: usize = 3;
pub const AGREEMENT_SENTENCES: usize = 15;

const NODE_LIMIT: usize = 200_000;
const MAX_RESTARTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Postedit,
    Marking,
    Choice,
}

impl Mode {
    /// Presentation order of the mode blocks.
    pub const ALL: [Mode; 3] = [Mode::Postedit, Mode::Marking, Mode::Choice];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Postedit => "postedit",
            Mode::Marking => "marking",
            Mode::Choice => "choice",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanEntry {
    pub talk_id: String,
    pub part: Position,
    pub annotator_id: String,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct AssignmentPlan {
    pub entries: Vec<PlanEntry>,
}

impl AssignmentPlan {
    pub fn annotators(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.entries
            .iter()
            .map(|e| e.annotator_id.as_str())
            .filter(|a| seen.insert(*a))
            .collect()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::corpus::write_jsonl(path, &self.entries)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(AssignmentPlan {
            entries: crate::corpus::read_jsonl(path)?,
        })
    }
}

fn pos_index(p: Position) -> usize {
    match p {
        Position::Beginning => 0,
        Position::Middle => 1,
        Position::End => 2,
    }
}

/// Largest number of parts one mode may cover at a single position.
pub fn position_mode_cap(n_talks: usize) -> usize {
    n_talks / 2
}

/// Checks the counting conditions every feasible instance meets.
fn precheck(n_talks: usize, n_annotators: usize) -> Result<()> {
    if n_annotators == 0 {
        return Err(Error::Infeasible("no annotators".into()));
    }
    if 3 * n_talks != PARTS_PER_ANNOTATOR * n_annotators {
        return Err(Error::Infeasible(format!(
            "{} parts cannot cover {} annotators x {} parts exactly",
            3 * n_talks,
            n_annotators,
            PARTS_PER_ANNOTATOR
        )));
    }
    if n_talks < PARTS_PER_ANNOTATOR {
        return Err(Error::Infeasible(format!(
            "each annotator needs {PARTS_PER_ANNOTATOR} different talks, only {n_talks} exist"
        )));
    }
    Ok(())
}

struct Search<'a> {
    n_ann: usize,
    /// (talk index, position index) in visiting order.
    slots: Vec<(usize, usize)>,
    /// Index into `slots` after which talk `t` has no unvisited parts.
    talk_last_slot: Vec<usize>,
    cap: usize,
    mode_cnt: Vec<[usize; 3]>,
    pos_cnt: Vec<[usize; 3]>,
    load: Vec<usize>,
    has_talk: Vec<Vec<bool>>,
    talk_modes: Vec<[bool; 3]>,
    global: [[usize; 3]; 3],
    choice: Vec<(usize, usize)>,
    nodes: usize,
    rng: &'a mut ChaCha8Rng,
}

impl Search<'_> {
    fn candidates(&mut self, k: usize) -> Vec<(usize, usize)> {
        let (t, p) = self.slots[k];
        let mut out = Vec::new();
        for a in 0..self.n_ann {
            if self.has_talk[a][t]
                || self.pos_cnt[a][p] >= PARTS_PER_POSITION
                || self.load[a] >= PARTS_PER_ANNOTATOR
            {
                continue;
            }
            for m in 0..3 {
                if !self.talk_modes[t][m]
                    && self.mode_cnt[a][m] < PARTS_PER_MODE
                    && self.global[m][p] < self.cap
                {
                    out.push((a, m));
                }
            }
        }
        // least loaded annotators first, random among equals
        let keys: Vec<u64> = (0..out.len()).map(|_| self.rng.random()).collect();
        let mut idx: Vec<usize> = (0..out.len()).collect();
        idx.sort_by_key(|&i| (self.load[out[i].0], keys[i]));
        idx.into_iter().map(|i| out[i]).collect()
    }

    fn set(&mut self, k: usize, a: usize, m: usize, on: bool) {
        let (t, p) = self.slots[k];
        let d = |x: &mut usize| {
            if on {
                *x += 1
            } else {
                *x -= 1
            }
        };
        d(&mut self.mode_cnt[a][m]);
        d(&mut self.pos_cnt[a][p]);
        d(&mut self.load[a]);
        d(&mut self.global[m][p]);
        self.has_talk[a][t] = on;
        self.talk_modes[t][m] = on;
    }

    /// Every annotator can still be filled from the talks not yet closed.
    fn viable(&self, k: usize) -> bool {
        let open: Vec<usize> = (0..self.talk_last_slot.len())
            .filter(|&t| self.talk_last_slot[t] > k)
            .collect();
        (0..self.n_ann).all(|a| {
            let need = PARTS_PER_ANNOTATOR - self.load[a];
            need <= open.iter().filter(|&&t| !self.has_talk[a][t]).count()
        })
    }

    fn run(&mut self, k: usize) -> Option<bool> {
        if k == self.slots.len() {
            return Some(true);
        }
        for (a, m) in self.candidates(k) {
            self.nodes += 1;
            if self.nodes > NODE_LIMIT {
                return None;
            }
            self.set(k, a, m, true);
            self.choice[k] = (a, m);
            if self.viable(k) {
                match self.run(k + 1) {
                    Some(true) => return Some(true),
                    None => return None,
                    Some(false) => {}
                }
            }
            self.set(k, a, m, false);
        }
        Some(false)
    }
}

/// Finds a plan for `talk_ids` (three parts each) and `annotator_ids`.
/// Deterministic for a given seed.
pub fn assign(talk_ids: &[String], annotator_ids: &[String], seed: u64) -> Result<AssignmentPlan> {
    let unique_t: HashSet<&String> = talk_ids.iter().collect();
    let unique_a: HashSet<&String> = annotator_ids.iter().collect();
    if unique_t.len() != talk_ids.len() || unique_a.len() != annotator_ids.len() {
        return Err(Error::invalid("talk and annotator ids must be unique"));
    }
    let (n_talks, n_ann) = (talk_ids.len(), annotator_ids.len());
    precheck(n_talks, n_ann)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut exhausted = false;
    for _ in 0..MAX_RESTARTS {
        let mut talks: Vec<usize> = (0..n_talks).collect();
        talks.shuffle(&mut rng);
        let mut slots = Vec::with_capacity(3 * n_talks);
        let mut talk_last_slot = vec![0; n_talks];
        for &t in &talks {
            let mut ps = [0, 1, 2];
            ps.shuffle(&mut rng);
            for p in ps {
                slots.push((t, p));
            }
            talk_last_slot[t] = slots.len() - 1;
        }
        let mut s = Search {
            n_ann,
            talk_last_slot,
            cap: position_mode_cap(n_talks),
            mode_cnt: vec![[0; 3]; n_ann],
            pos_cnt: vec![[0; 3]; n_ann],
            load: vec![0; n_ann],
            has_talk: vec![vec![false; n_talks]; n_ann],
            talk_modes: vec![[false; 3]; n_talks],
            global: [[0; 3]; 3],
            choice: vec![(0, 0); slots.len()],
            nodes: 0,
            slots,
            rng: &mut rng,
        };
        match s.run(0) {
            Some(true) => {
                let mut entries: Vec<PlanEntry> = s
                    .slots
                    .iter()
                    .zip(&s.choice)
                    .map(|(&(t, p), &(a, m))| PlanEntry {
                        talk_id: talk_ids[t].clone(),
                        part: Position::ALL[p],
                        annotator_id: annotator_ids[a].clone(),
                        mode: Mode::ALL[m],
                    })
                    .collect();
                let order: HashMap<&String, usize> =
                    talk_ids.iter().enumerate().map(|(i, t)| (t, i)).collect();
                entries.sort_by_key(|e| (order[&e.talk_id], pos_index(e.part)));
                return Ok(AssignmentPlan { entries });
            }
            Some(false) => {
                exhausted = true;
                break;
            }
            None => {}
        }
    }
    Err(Error::Infeasible(if exhausted {
        "exhaustive search found no plan".into()
    } else {
        format!("no plan found within {MAX_RESTARTS} restarts of {NODE_LIMIT} nodes")
    }))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: String,
    pub entity: String,
    pub detail: String,
}

fn violation(constraint: &str, entity: &str, detail: String) -> Violation {
    Violation {
        constraint: constraint.into(),
        entity: entity.into(),
        detail,
    }
}

/// Lists every broken plan invariant; empty means valid. At most one
/// violation per constraint and entity.
pub fn verify_assignment(plan: &AssignmentPlan) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut by_talk: BTreeMap<&str, Vec<&PlanEntry>> = BTreeMap::new();
    let mut by_ann: BTreeMap<&str, Vec<&PlanEntry>> = BTreeMap::new();
    for e in &plan.entries {
        by_talk.entry(&e.talk_id).or_default().push(e);
        by_ann.entry(&e.annotator_id).or_default().push(e);
    }
    for (talk, es) in &by_talk {
        let mut parts = [0usize; 3];
        let mut modes = [0usize; 3];
        for e in es {
            parts[pos_index(e.part)] += 1;
            modes[e.mode.index()] += 1;
        }
        if parts != [1, 1, 1] {
            out.push(violation(
                "exact-cover",
                talk,
                format!("part counts beginning/middle/end = {parts:?}, expected one each"),
            ));
        }
        if modes.iter().any(|&c| c > 1) {
            out.push(violation(
                "talk-modes",
                talk,
                format!(
                    "mode counts postedit/marking/choice = {modes:?}, parts need distinct modes"
                ),
            ));
        }
    }
    for (ann, es) in &by_ann {
        if es.len() != PARTS_PER_ANNOTATOR {
            out.push(violation(
                "annotator-load",
                ann,
                format!("{} parts, expected {PARTS_PER_ANNOTATOR}", es.len()),
            ));
        }
        let mut talks: HashMap<&str, usize> = HashMap::new();
        let mut modes = [0usize; 3];
        let mut pos = [0usize; 3];
        for e in es {
            *talks.entry(&e.talk_id).or_default() += 1;
            modes[e.mode.index()] += 1;
            pos[pos_index(e.part)] += 1;
        }
        let mut repeated: Vec<&str> = talks
            .iter()
            .filter(|(_, c)| **c > 1)
            .map(|(t, _)| *t)
            .collect();
        repeated.sort();
        if !repeated.is_empty() {
            out.push(violation(
                "talk-repeat",
                ann,
                format!("talks seen twice: {}", repeated.join(", ")),
            ));
        }
        if modes != [PARTS_PER_MODE; 3] {
            out.push(violation(
                "mode-balance",
                ann,
                format!("mode counts postedit/marking/choice = {modes:?}"),
            ));
        }
        if pos != [PARTS_PER_POSITION; 3] {
            out.push(violation(
                "position-balance",
                ann,
                format!("position counts beginning/middle/end = {pos:?}"),
            ));
        }
    }
    let cap = position_mode_cap(by_talk.len());
    let mut global = [[0usize; 3]; 3];
    for e in &plan.entries {
        global[e.mode.index()][pos_index(e.part)] += 1;
    }
    for m in Mode::ALL {
        for p in Position::ALL {
            let c = global[m.index()][pos_index(p)];
            if c > cap {
                out.push(violation(
                    "position-mode-spread",
                    &format!("{m}@{p}"),
                    format!("{c} parts, at most {cap} allowed"),
                ));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pass {
    Main,
    #[serde(rename = "repeat_1")]
    Repeat1,
    #[serde(rename = "repeat_2")]
    Repeat2,
    #[serde(rename = "repeat_3")]
    Repeat3,
}

impl Pass {
    pub fn repeat_after(mode: Mode) -> Pass {
        match mode {
            Mode::Postedit => Pass::Repeat1,
            Mode::Marking => Pass::Repeat2,
            Mode::Choice => Pass::Repeat3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Pass::Main => "main",
            Pass::Repeat1 => "repeat_1",
            Pass::Repeat2 => "repeat_2",
            Pass::Repeat3 => "repeat_3",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueItem {
    pub sentence_id: String,
    pub mode: Mode,
    pub pass: Pass,
}

/// The annotator's work queue. Each mode block (post-edit, marking,
/// choice) opens with the agreement sentences, continues with the
/// annotator's parts in plan order and sentences in corpus order, and is
/// followed by a repeat block of the agreement sentences in the same mode.
pub fn presentation_order(
    plan: &AssignmentPlan,
    annotator_id: &str,
    sentences: &[ParallelSentence],
    agreement_ids: &[String],
) -> Result<Vec<QueueItem>> {
    let mine: Vec<&PlanEntry> = plan
        .entries
        .iter()
        .filter(|e| e.annotator_id == annotator_id)
        .collect();
    if mine.is_empty() {
        return Err(Error::NotFound(format!("annotator {annotator_id} in plan")));
    }
    let known: HashSet<&str> = sentences.iter().map(|s| s.id.as_str()).collect();
    if let Some(missing) = agreement_ids.iter().find(|id| !known.contains(id.as_str())) {
        return Err(Error::NotFound(format!("agreement sentence {missing}")));
    }
    let agreement: HashSet<&str> = agreement_ids.iter().map(String::as_str).collect();
    let mut queue = Vec::new();
    for mode in Mode::ALL {
        for id in agreement_ids {
            queue.push(QueueItem {
                sentence_id: id.clone(),
                mode,
                pass: Pass::Main,
            });
        }
        for e in mine.iter().filter(|e| e.mode == mode) {
            for s in sentences {
                if s.talk_id == e.talk_id
                    && s.position == Some(e.part)
                    && !agreement.contains(s.id.as_str())
                {
                    queue.push(QueueItem {
                        sentence_id: s.id.clone(),
                        mode,
                        pass: Pass::Main,
                    });
                }
            }
        }
        for id in agreement_ids {
            queue.push(QueueItem {
                sentence_id: id.clone(),
                mode,
                pass: Pass::repeat_after(mode),
            });
        }
    }
    Ok(queue)
}

/// The same `n` agreement sentences for everybody, evenly spaced over the
/// corpus.
pub fn pick_agreement_sentences(sentences: &[ParallelSentence], n: usize) -> Vec<String> {
    if sentences.is_empty() || n == 0 {
        return Vec::new();
    }
    let n = n.min(sentences.len());
    (0..n)
        .map(|i| sentences[i * sentences.len() / n].id.clone())
        .collect()
}

pub fn ids(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i:02}")).collect()
}
