//! Conversation threads, distillation into test dialogues, the test-set
//! filters, and selection of grounded training conversations.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Analyzer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroundedLink {
    #[serde(rename = "doc")]
    pub doc_id: String,
    #[serde(rename = "section")]
    pub section_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Initiator,
    Responder,
}

impl Role {
    /// Role implied by a 0-based position: even positions (odd 1-based)
    /// belong to the initiator.
    pub fn for_position(pos: usize) -> Role {
        if pos.is_multiple_of(2) {
            Role::Initiator
        } else {
            Role::Responder
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    #[serde(rename = "author")]
    pub author_id: String,
    pub text: String,
    #[serde(default)]
    pub links: Vec<GroundedLink>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
}

impl Turn {
    pub fn new(author: impl Into<String>, text: impl Into<String>) -> Turn {
        Turn {
            author_id: author.into(),
            text: text.into(),
            links: Vec::new(),
            role: None,
        }
    }

    pub fn with_links(mut self, links: Vec<GroundedLink>) -> Turn {
        self.links = links;
        self
    }

    pub fn is_grounded(&self) -> bool {
        !self.links.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thread {
    #[serde(rename = "id")]
    pub thread_id: String,
    #[serde(default)]
    pub subreddit: Option<String>,
    #[serde(default)]
    pub title: Option<String>,
    /// ISO-8601 date; compared lexicographically.
    #[serde(default)]
    pub created: String,
    pub turns: Vec<Turn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dialogue {
    #[serde(rename = "id")]
    pub dialogue_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subreddit: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default)]
    pub created: String,
    /// History `t_1..t_n`.
    pub turns: Vec<Turn>,
    #[serde(default)]
    pub target: Option<Turn>,
    #[serde(default)]
    pub future: Vec<Turn>,
    #[serde(default)]
    pub grounded: bool,
}

impl Dialogue {
    /// A bare test dialogue from turn texts; handy for callers and tests.
    pub fn from_texts<S: AsRef<str>>(id: impl Into<String>, texts: &[S]) -> Dialogue {
        Dialogue {
            dialogue_id: id.into(),
            subreddit: None,
            title: None,
            created: String::new(),
            turns: texts
                .iter()
                .enumerate()
                .map(|(i, t)| Turn {
                    role: Some(Role::for_position(i)),
                    ..Turn::new(if i % 2 == 0 { "initiator" } else { "responder" }, t.as_ref())
                })
                .collect(),
            target: None,
            future: Vec::new(),
            grounded: false,
        }
    }

    pub fn last_turn(&self) -> Option<&Turn> {
        self.turns.last()
    }
}

/// Prepends subreddit and title to the first turn, single-space separated,
/// skipping absent or empty parts.
pub fn enrich_first_turn(mut thread: Thread) -> Thread {
    let prefix: Vec<&str> = [thread.subreddit.as_deref(), thread.title.as_deref()]
        .into_iter()
        .flatten()
        .filter(|s| !s.is_empty())
        .collect();
    if prefix.is_empty() {
        return thread;
    }
    if let Some(first) = thread.turns.first_mut() {
        let mut parts = prefix;
        if !first.text.is_empty() {
            parts.push(&first.text);
        }
        first.text = parts.join(" ");
    }
    thread
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistillSkip {
    TooFewTurns,
    NotInterleaved,
}

/// Distills one thread into a test dialogue.
///
/// The initiator (author of turn 1) must author every odd turn and no even
/// turn; the thread needs at least 4 turns. The last responder turn is the
/// target and the dialogue keeps the turns strictly before it.
pub fn distill_thread(thread: &Thread) -> Result<Dialogue, DistillSkip> {
    let turns = &thread.turns;
    if turns.len() < 4 {
        return Err(DistillSkip::TooFewTurns);
    }
    let initiator = &turns[0].author_id;
    let interleaved = turns
        .iter()
        .enumerate()
        .all(|(i, t)| (i % 2 == 0) == (&t.author_id == initiator));
    if !interleaved {
        return Err(DistillSkip::NotInterleaved);
    }
    // 0-based odd positions are responder turns.
    let target_pos = if turns.len().is_multiple_of(2) {
        turns.len() - 1
    } else {
        turns.len() - 2
    };
    let target = with_role(turns[target_pos].clone(), target_pos);
    Ok(Dialogue {
        dialogue_id: thread.thread_id.clone(),
        subreddit: thread.subreddit.clone(),
        title: thread.title.clone(),
        created: thread.created.clone(),
        turns: turns[..target_pos]
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, t)| with_role(t, i))
            .collect(),
        grounded: target.is_grounded(),
        target: Some(target),
        future: Vec::new(),
    })
}

fn with_role(mut t: Turn, pos: usize) -> Turn {
    t.role = Some(Role::for_position(pos));
    t
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DistillReport {
    pub kept: usize,
    pub too_few_turns: usize,
    pub not_interleaved: usize,
}

/// Distills test dialogues. Emitted dialogues carry the target turn so the
/// filters can inspect it; callers strip it before publishing test data.
pub fn distill_test_dialogues<I>(threads: I) -> (Vec<Dialogue>, DistillReport)
where
    I: IntoIterator<Item = Thread>,
{
    let mut report = DistillReport::default();
    let mut out = Vec::new();
    for thread in threads {
        match distill_thread(&thread) {
            Ok(d) => {
                report.kept += 1;
                out.push(d);
            }
            Err(DistillSkip::TooFewTurns) => report.too_few_turns += 1,
            Err(DistillSkip::NotInterleaved) => report.not_interleaved += 1,
        }
    }
    (out, report)
}

/// Lower-cased blocklist with space-stripped variants of multi-word entries.
#[derive(Debug, Clone, Default)]
pub struct Blocklist {
    patterns: BTreeSet<String>,
}

impl Blocklist {
    pub fn new<I, S>(entries: I) -> Blocklist
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut patterns = BTreeSet::new();
        for e in entries {
            let e = e.as_ref().trim().to_lowercase();
            if e.is_empty() {
                continue;
            }
            if e.contains(char::is_whitespace) {
                patterns.insert(e.split_whitespace().collect::<String>());
            }
            patterns.insert(e);
        }
        Blocklist { patterns }
    }

    pub fn load(path: &Path) -> Result<Blocklist> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Blocklist::new(text.lines()))
    }

    pub fn matches(&self, text: &str) -> bool {
        let lower = text.to_lowercase();
        self.patterns.iter().any(|p| lower.contains(p.as_str()))
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }
}

pub fn contains_url(text: &str) -> bool {
    let lower = text.to_lowercase();
    ["http://", "https://", "www."].iter().any(|p| lower.contains(p))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    TooShort,
    TooLong,
    Url,
    Blocklist,
}

#[derive(Debug, Clone)]
pub struct TestFilter {
    pub analyzer: Analyzer,
    pub blocklist: Blocklist,
    pub min_tokens: usize,
    pub max_tokens: usize,
}

impl TestFilter {
    pub fn new(analyzer: Analyzer, blocklist: Blocklist) -> TestFilter {
        TestFilter {
            analyzer,
            blocklist,
            min_tokens: 5,
            max_tokens: 70,
        }
    }

    /// Every reason the dialogue fails, in a fixed order. Empty means keep.
    pub fn violations(&self, dialogue: &Dialogue) -> Vec<DropReason> {
        let mut reasons = BTreeSet::new();
        let history = dialogue.turns.iter().map(|t| (t, false));
        let target = dialogue.target.iter().map(|t| (t, true));
        for (turn, is_target) in history.chain(target) {
            let n = self.analyzer.analyze(&turn.text, false).len();
            if n < self.min_tokens {
                reasons.insert(DropReason::TooShort);
            }
            if n > self.max_tokens {
                reasons.insert(DropReason::TooLong);
            }
            let url_exempt = is_target && turn.is_grounded();
            if !url_exempt && contains_url(&turn.text) {
                reasons.insert(DropReason::Url);
            }
            if self.blocklist.matches(&turn.text) {
                reasons.insert(DropReason::Blocklist);
            }
        }
        reasons.into_iter().collect()
    }

    /// `None` keeps the dialogue; otherwise the first violated rule.
    pub fn apply(&self, dialogue: &Dialogue) -> Option<DropReason> {
        self.violations(dialogue).into_iter().next()
    }
}

/// Whitespace-separated word count, before any analysis.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Turns every qualifying grounded turn of a thread into a training
/// conversation: more than 5 words, at least one resolvable link, at least
/// one earlier turn, and at least one later turn. Unresolvable links are
/// dropped from the emitted target.
pub fn select_training_conversations<I, F>(threads: I, resolvable: F) -> Vec<Dialogue>
where
    I: IntoIterator<Item = Thread>,
    F: Fn(&GroundedLink) -> bool,
{
    let mut out = Vec::new();
    for thread in threads {
        let turns = &thread.turns;
        for (pos, turn) in turns.iter().enumerate() {
            if pos == 0 || pos + 1 >= turns.len() || word_count(&turn.text) <= 5 {
                continue;
            }
            let links: Vec<GroundedLink> = turn.links.iter().filter(|l| resolvable(l)).cloned().collect();
            if links.is_empty() {
                continue;
            }
            let mut target = with_role(turn.clone(), pos);
            target.links = links;
            out.push(Dialogue {
                dialogue_id: format!("{}:{}", thread.thread_id, pos + 1),
                subreddit: thread.subreddit.clone(),
                title: thread.title.clone(),
                created: thread.created.clone(),
                turns: turns[..pos]
                    .iter()
                    .cloned()
                    .enumerate()
                    .map(|(i, t)| with_role(t, i))
                    .collect(),
                target: Some(target),
                future: turns[pos + 1..]
                    .iter()
                    .cloned()
                    .enumerate()
                    .map(|(i, t)| with_role(t, pos + 1 + i))
                    .collect(),
                grounded: true,
            });
        }
    }
    out
}

/// Keeps threads created in `[from, to)`; either bound may be absent.
pub fn in_date_range(thread: &Thread, from: Option<&str>, to: Option<&str>) -> bool {
    from.is_none_or(|f| thread.created.as_str() >= f) && to.is_none_or(|t| thread.created.as_str() < t)
}

fn read_jsonl<T: serde::de::DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Malformed {
            line: i + 1,
            field: "<line>".into(),
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            line: i + 1,
            field: "<record>".into(),
            message: e.to_string(),
        })?;
        out.push(v);
    }
    Ok(out)
}

pub fn read_threads<R: BufRead>(reader: R) -> Result<Vec<Thread>> {
    read_jsonl(reader)
}

pub fn read_dialogues<R: BufRead>(reader: R) -> Result<Vec<Dialogue>> {
    read_jsonl(reader)
}

pub fn load_threads(path: &Path) -> Result<Vec<Thread>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_threads(BufReader::new(f))
}

pub fn load_dialogues(path: &Path) -> Result<Vec<Dialogue>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dialogues(BufReader::new(f))
}

pub fn write_dialogues<'a, W: Write, I: IntoIterator<Item = &'a Dialogue>>(
    dialogues: I,
    mut w: W,
) -> std::io::Result<()> {
    for d in dialogues {
        serde_json::to_writer(&mut w, d)?;
        writeln!(w)?;
    }
    w.flush()
}
