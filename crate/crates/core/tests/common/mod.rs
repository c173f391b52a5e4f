//! Synthetic worlds and independent reference implementations for the
//! integration tests. The references work from raw document text and the
//! formulas alone; only tokenization and the lexical stubs are shared with
//! the library.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use sentret::corpus::{Analyzer, Document, Section};
use sentret::dialogue::{Dialogue, GroundedLink, Turn};
use sentret::eval::Qrels;
use sentret::rerank::{HashEmbedder, OverlapScorer};
use sentret::retrieval::InitialRankerParams;

pub type Dist = BTreeMap<String, f64>;

// ---------------------------------------------------------------------------
// Synthetic worlds

pub fn doc(id: &str, sections: &[(&str, &[&str])]) -> Document {
    Document {
        doc_id: id.into(),
        title: id.into(),
        sections: sections
            .iter()
            .map(|(sid, sents)| Section {
                section_id: sid.to_string(),
                heading: sid.to_string(),
                sentences: sents.iter().map(|s| s.to_string()).collect(),
            })
            .collect(),
    }
}

fn zipf_word(rng: &mut ChaCha8Rng, vocab: usize) -> String {
    // Rough power law: small ids are frequent.
    let u: f64 = rng.gen();
    let i = ((vocab as f64).powf(u) - 1.0) as usize;
    format!("w{}", i.min(vocab - 1))
}

/// Random corpus with `n_docs` documents, up to 3 sections each and about
/// `sentences` sentences in total. A few sentences carry no token.
pub fn random_corpus(rng: &mut ChaCha8Rng, n_docs: usize, sentences: usize, vocab: usize) -> Vec<Document> {
    let per_doc = (sentences / n_docs).max(1);
    (0..n_docs)
        .map(|d| {
            let n_sections = rng.gen_range(1..=3);
            let mut sections = Vec::new();
            let mut left = per_doc;
            for s in 0..n_sections {
                let n = if s + 1 == n_sections {
                    left
                } else {
                    rng.gen_range(0..=left)
                };
                left -= n;
                let sentences = (0..n)
                    .map(|_| {
                        if rng.gen_bool(0.03) {
                            "-- !!".to_string()
                        } else {
                            let len = rng.gen_range(1..=12);
                            (0..len).map(|_| zipf_word(rng, vocab)).collect::<Vec<_>>().join(" ")
                        }
                    })
                    .collect();
                sections.push(Section {
                    section_id: format!("s{s}"),
                    heading: String::new(),
                    sentences,
                });
            }
            Document {
                doc_id: format!("d{d:02}"),
                title: String::new(),
                sections,
            }
        })
        .collect()
}

/// Random dialogue of 1 to 5 turns; occasional out-of-vocabulary words.
pub fn random_dialogue(rng: &mut ChaCha8Rng, id: &str, vocab: usize) -> Dialogue {
    let n = rng.gen_range(1..=5);
    let turns: Vec<String> = (0..n)
        .map(|_| {
            let len = rng.gen_range(1..=8);
            (0..len)
                .map(|i| {
                    if rng.gen_bool(0.1) {
                        format!("oov{i}")
                    } else {
                        zipf_word(rng, vocab)
                    }
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    Dialogue::from_texts(id, &turns)
}

pub fn turn(author: &str, text: &str) -> Turn {
    Turn::new(author, text)
}

/// Training conversation built from explicit parts.
pub fn conversation(id: &str, history: &[&str], target: &str, links: &[(&str, &str)], future: &[&str]) -> Dialogue {
    let mut d = Dialogue::from_texts(id, history);
    d.target = Some(
        turn("t", target).with_links(
            links
                .iter()
                .map(|(doc, sec)| GroundedLink {
                    doc_id: doc.to_string(),
                    section_id: sec.to_string(),
                })
                .collect(),
        ),
    );
    d.future = future.iter().map(|t| turn("f", t)).collect();
    d.grounded = true;
    d
}

/// Six documents on distinct subjects sharing a little vocabulary, and a
/// set of grounded training conversations pointing into them.
pub fn mini_world() -> (Vec<Document>, Vec<Dialogue>) {
    let docs = vec![
        doc(
            "volcano",
            &[
                (
                    "eruption",
                    &[
                        "magma rises through the crust before an eruption",
                        "ash clouds follow explosive eruptions",
                        "lava flows slowly downhill from the vent",
                        "some eruptions last for years",
                    ],
                ),
                (
                    "monitoring",
                    &[
                        "seismometers record small earthquakes under the volcano",
                        "gas sensors measure sulfur from the vent",
                        "satellites detect ground swelling",
                        "monitoring stations warn nearby towns",
                    ],
                ),
            ],
        ),
        doc(
            "coffee",
            &[
                (
                    "history",
                    &[
                        "coffee was first grown in ethiopia",
                        "coffee houses spread across europe",
                        "merchants shipped roasted beans by sea",
                    ],
                ),
                (
                    "brewing",
                    &[
                        "espresso forces hot water through fine coffee",
                        "a french press steeps coarse grounds",
                        "cold brew steeps overnight in cool water",
                        "water temperature changes bitterness",
                    ],
                ),
            ],
        ),
        doc(
            "bees",
            &[
                (
                    "colony",
                    &[
                        "a colony has one queen and many workers",
                        "workers build wax comb for honey",
                        "drones mate with a new queen",
                    ],
                ),
                (
                    "decline",
                    &[
                        "pesticides weaken many colonies",
                        "mites spread viruses between hives",
                        "winter losses hit beekeepers hard",
                        "fewer wildflowers mean less pollen",
                    ],
                ),
            ],
        ),
        doc(
            "chess",
            &[
                (
                    "rules",
                    &[
                        "each player starts with sixteen pieces",
                        "the king may castle once",
                        "a pawn on the last rank is promoted",
                    ],
                ),
                (
                    "engines",
                    &[
                        "engines search millions of positions per second",
                        "neural networks evaluate positions",
                        "engines beat every human champion",
                    ],
                ),
            ],
        ),
        doc(
            "marathon",
            &[
                (
                    "race",
                    &[
                        "a marathon is about forty two kilometres",
                        "runners hit the wall near thirty kilometres",
                        "elite runners finish in two hours",
                    ],
                ),
                (
                    "training",
                    &[
                        "plans build weekly mileage slowly",
                        "long slow runs teach the body to burn fat",
                        "tapering cuts mileage before the race",
                    ],
                ),
            ],
        ),
        doc(
            "glacier",
            &[
                (
                    "formation",
                    &[
                        "snow piles up faster than it melts",
                        "compressed snow turns into ice",
                        "glaciers flow downhill under their weight",
                    ],
                ),
                (
                    "retreat",
                    &[
                        "mountain glaciers retreat as the climate warms",
                        "melting glaciers raise sea level",
                        "photographs show glaciers shrinking",
                    ],
                ),
            ],
        ),
    ];
    let convs = vec![
        conversation(
            "c1",
            &[
                "how do people know a volcano will erupt",
                "they watch for earthquakes and swelling ground",
            ],
            "gas sensors at the vent measure sulfur before an eruption",
            &[("volcano", "monitoring")],
            &["thanks that explains the warning", "do satellites help too"],
        ),
        conversation(
            "c2",
            &["i want stronger coffee at home"],
            "try a french press with coarse grounds or cold brew overnight",
            &[("coffee", "brewing")],
            &["cold brew sounds easy", "what water temperature is best"],
        ),
        conversation(
            "c3",
            &[
                "why are bee colonies dying",
                "pesticides are blamed",
                "is it only pesticides",
            ],
            "mites spread viruses between hives and winter losses are high",
            &[("bees", "decline")],
            &["so many causes at once"],
        ),
        conversation(
            "c4",
            &["how strong are chess engines now"],
            "engines search millions of positions and use neural networks",
            &[("chess", "engines"), ("chess", "rules")],
            &["amazing progress", "can humans still win", "not at classical speed"],
        ),
        conversation(
            "c5",
            &["tips for my first marathon", "build mileage slowly"],
            "taper mileage before the race and expect the wall near thirty kilometres",
            &[("marathon", "training")],
            &["good luck with the race"],
        ),
        conversation(
            "c6",
            &["are glaciers really shrinking"],
            "zebra quantum xylophone",
            &[("glacier", "retreat")],
            &["what"],
        ),
        conversation(
            "c7",
            &["which coffee houses opened first in europe"],
            "the rules say each player starts with sixteen pieces",
            &[("chess", "rules")],
            &["ok"],
        ),
    ];
    (docs, convs)
}

/// A benchmark where relevance follows the vocabulary of the whole
/// dialogue: earlier turns draw on the relevant sentences, while the
/// last turn mostly shares words with non-relevant sentences of the same
/// document.
pub struct Benchmark {
    pub docs: Vec<Document>,
    pub dialogues: Vec<Dialogue>,
    pub qrels: Qrels,
}

pub fn history_heavy_benchmark(rng: &mut ChaCha8Rng, n_topics: usize, n_dialogues: usize) -> Benchmark {
    const TOPIC_WORDS: usize = 30;
    const GENERIC: usize = 12;
    const SECTIONS: usize = 3;
    const PER_SECTION: usize = 6;
    let generic: Vec<String> = (0..GENERIC).map(|i| format!("g{i}")).collect();
    let topic_word = |t: usize, i: usize| format!("t{t}x{i}");

    let mut docs = Vec::new();
    for t in 0..n_topics {
        let sections = (0..SECTIONS)
            .map(|s| Section {
                section_id: format!("s{s}"),
                heading: String::new(),
                sentences: (0..PER_SECTION)
                    .map(|_| {
                        let mut words: Vec<String> = (0..rng.gen_range(3..=5))
                            .map(|_| topic_word(t, rng.gen_range(0..TOPIC_WORDS)))
                            .collect();
                        for _ in 0..rng.gen_range(1..=4) {
                            words.push(generic.choose(rng).unwrap().clone());
                        }
                        words.shuffle(rng);
                        words.join(" ")
                    })
                    .collect(),
            })
            .collect();
        docs.push(Document {
            doc_id: format!("topic{t:02}"),
            title: String::new(),
            sections,
        });
    }

    let mut dialogues = Vec::new();
    let mut qrels = Qrels::default();
    for q in 0..n_dialogues {
        let t = rng.gen_range(0..n_topics);
        let d = &docs[t];
        let all: Vec<(usize, usize)> = (0..SECTIONS)
            .flat_map(|s| (0..PER_SECTION).map(move |i| (s, i)))
            .collect();
        let relevant: Vec<(usize, usize)> = all.choose_multiple(rng, 3).copied().collect();
        let words_of = |&(s, i): &(usize, usize)| -> Vec<String> {
            d.sections[s].sentences[i]
                .split(' ')
                .filter(|w| w.starts_with('t'))
                .map(str::to_owned)
                .collect()
        };
        let distractor_words: Vec<String> = all
            .iter()
            .filter(|p| !relevant.contains(p))
            .flat_map(words_of)
            .collect();
        let rel_words: Vec<String> = relevant.iter().flat_map(words_of).collect();
        // Earlier turns draw on the relevant sentences; the last turn
        // mostly echoes other sentences of the same document.
        let n_turns = rng.gen_range(3..=5);
        let mut turns: Vec<String> = (0..n_turns - 1)
            .map(|_| {
                let mut w: Vec<String> = (0..4).map(|_| rel_words.choose(rng).unwrap().clone()).collect();
                w.push(generic.choose(rng).unwrap().clone());
                w.shuffle(rng);
                w.join(" ")
            })
            .collect();
        let mut last: Vec<String> = (0..3).map(|_| distractor_words.choose(rng).unwrap().clone()).collect();
        last.push(words_of(relevant.choose(rng).unwrap()).choose(rng).unwrap().clone());
        last.push(generic.choose(rng).unwrap().clone());
        last.shuffle(rng);
        turns.push(last.join(" "));
        let id = format!("q{q:03}");
        let mut dialogue = Dialogue::from_texts(&id, &turns);
        dialogue.grounded = q % 2 == 0;
        for (s, i) in relevant {
            qrels.insert(&id, format!("{}#s{s}#{i}", d.doc_id), true);
        }
        dialogues.push(dialogue);
    }
    Benchmark { docs, dialogues, qrels }
}

// ---------------------------------------------------------------------------
// Reference building blocks

/// Every sentence of the corpus: `(id, doc index, section id, raw text)`.
pub struct FlatCorpus {
    pub ids: Vec<String>,
    pub doc_of: Vec<usize>,
    pub section_of: Vec<String>,
    pub text: Vec<String>,
    pub tokens: Vec<Vec<String>>,
    pub doc_ids: Vec<String>,
    pub cf: HashMap<String, f64>,
    pub sf: HashMap<String, f64>,
    pub total: f64,
}

impl FlatCorpus {
    pub fn new(docs: &[Document], analyzer: &Analyzer) -> FlatCorpus {
        let mut c = FlatCorpus {
            ids: Vec::new(),
            doc_of: Vec::new(),
            section_of: Vec::new(),
            text: Vec::new(),
            tokens: Vec::new(),
            doc_ids: docs.iter().map(|d| d.doc_id.clone()).collect(),
            cf: HashMap::new(),
            sf: HashMap::new(),
            total: 0.0,
        };
        for (di, d) in docs.iter().enumerate() {
            for s in &d.sections {
                for (i, text) in s.sentences.iter().enumerate() {
                    let tokens = analyzer.analyze(text, false);
                    for t in &tokens {
                        *c.cf.entry(t.clone()).or_default() += 1.0;
                    }
                    for t in tokens.iter().collect::<BTreeSet<_>>() {
                        *c.sf.entry(t.clone()).or_default() += 1.0;
                    }
                    c.total += tokens.len() as f64;
                    c.ids.push(format!("{}#{}#{i}", d.doc_id, s.section_id));
                    c.doc_of.push(di);
                    c.section_of.push(s.section_id.clone());
                    c.text.push(text.clone());
                    c.tokens.push(tokens);
                }
            }
        }
        c
    }

    pub fn index_of(&self, id: &str) -> usize {
        self.ids.iter().position(|x| x == id).expect("known sentence")
    }

    fn p_collection(&self, w: &str) -> f64 {
        self.cf.get(w).copied().unwrap_or(0.0) / self.total
    }

    /// `Σ_w q(w) ln((tf + μ p_C) / (len + μ))`.
    pub fn dirichlet_score(&self, query: &Dist, tokens: &[String], mu: f64) -> f64 {
        let len = tokens.len() as f64;
        query
            .iter()
            .map(|(w, p)| {
                let tf = tokens.iter().filter(|t| *t == w).count() as f64;
                p * ((tf + mu * self.p_collection(w)) / (len + mu)).ln()
            })
            .sum()
    }

    /// Keeps in-collection terms and renormalizes; `None` if none remain.
    pub fn in_vocab(&self, q: &Dist) -> Option<Dist> {
        let kept: Dist = q
            .iter()
            .filter(|(w, _)| self.cf.contains_key(*w))
            .map(|(w, p)| (w.clone(), *p))
            .collect();
        let z: f64 = kept.values().sum();
        (z > 0.0).then(|| kept.into_iter().map(|(w, p)| (w, p / z)).collect())
    }

    pub fn rsj_idf(&self, w: &str) -> f64 {
        let n = self.ids.len() as f64;
        let df = self.sf.get(w).copied().unwrap_or(0.0);
        ((n - df + 0.5) / (df + 0.5)).ln().max(0.0)
    }
}

pub fn mle(tokens: &[String]) -> Option<Dist> {
    if tokens.is_empty() {
        return None;
    }
    let mut d = Dist::new();
    for t in tokens {
        *d.entry(t.clone()).or_default() += 1.0;
    }
    let len = tokens.len() as f64;
    d.values_mut().for_each(|c| *c /= len);
    Some(d)
}

/// `Σ w_i d_i` over present components with weights renormalized.
pub fn mix(parts: &[(f64, Option<Dist>)]) -> Option<Dist> {
    let present: Vec<&(f64, Option<Dist>)> = parts.iter().filter(|(_, d)| d.is_some()).collect();
    let z: f64 = present.iter().map(|(w, _)| w).sum();
    if present.is_empty() || z == 0.0 {
        return None;
    }
    let mut out = Dist::new();
    for (w, d) in present {
        for (t, p) in d.as_ref().unwrap() {
            *out.entry(t.clone()).or_default() += w / z * p;
        }
    }
    Some(out)
}

/// Decay weights for 1-based turn indices `first..=last` around `pivot`.
pub fn decay(delta: f64, pivot: i64, first: i64, last: i64) -> Vec<f64> {
    let raw: Vec<f64> = (first..=last)
        .map(|i| delta * (-delta * (pivot - i).abs() as f64).exp())
        .collect();
    let z: f64 = raw.iter().sum();
    raw.iter().map(|r| r / z).collect()
}

/// Sort by score descending, id ascending; returns ids with 1-based ranks.
pub fn rank(scores: &[(String, f64)]) -> Vec<(String, f64)> {
    let mut v = scores.to_vec();
    v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    v
}

pub fn ranks_of(list: &[(String, f64)]) -> HashMap<String, usize> {
    list.iter()
        .enumerate()
        .map(|(i, (id, _))| (id.clone(), i + 1))
        .collect()
}

/// Weighted reciprocal rank fusion written out term by term.
pub fn rrf_reference(lists: &[Vec<(String, f64)>], weights: &[f64], nu: f64) -> Vec<(String, f64)> {
    let mut scores: BTreeMap<String, f64> = BTreeMap::new();
    for (list, w) in lists.iter().zip(weights) {
        for (i, (id, _)) in list.iter().enumerate() {
            *scores.entry(id.clone()).or_default() += w / (nu + (i + 1) as f64);
        }
    }
    rank(&scores.into_iter().collect::<Vec<_>>())
}

fn minmax(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    v.iter()
        .map(|x| if hi == lo { 0.5 } else { (x - lo) / (hi - lo) })
        .collect()
}

// ---------------------------------------------------------------------------
// Exhaustive initial ranker

/// Scores every document and every sentence directly from text.
pub fn reference_initial_rank(
    corpus: &FlatCorpus,
    analyzer: &Analyzer,
    dialogue: &Dialogue,
    p: &InitialRankerParams,
) -> Vec<(String, f64)> {
    let turns: Vec<Option<Dist>> = dialogue
        .turns
        .iter()
        .map(|t| mle(&analyzer.analyze(&t.text, true)))
        .collect();
    let n = turns.len();
    let doc_q = if n == 1 {
        mix(&[(1.0, turns[0].clone())])
    } else {
        let parts: Vec<(f64, Option<Dist>)> = turns
            .iter()
            .enumerate()
            .map(|(i, d)| (if i == 0 { 1.0 - p.beta } else { p.beta / (n - 1) as f64 }, d.clone()))
            .collect();
        mix(&parts)
    };
    let sent_q = if n == 1 {
        mix(&[(1.0, turns[0].clone())])
    } else {
        let alpha = decay(p.delta, n as i64 - 1, 1, n as i64 - 1);
        let mut parts: Vec<(f64, Option<Dist>)> = turns[..n - 1]
            .iter()
            .zip(&alpha)
            .map(|(d, a)| (p.beta * a, d.clone()))
            .collect();
        parts.push((1.0 - p.beta, turns[n - 1].clone()));
        mix(&parts)
    };
    let (Some(doc_q), Some(sent_q)) = (
        doc_q.and_then(|q| corpus.in_vocab(&q)),
        sent_q.and_then(|q| corpus.in_vocab(&q)),
    ) else {
        return Vec::new();
    };

    // Documents sharing a term with the query, scored on their full text.
    let mut doc_scores = Vec::new();
    for (di, id) in corpus.doc_ids.iter().enumerate() {
        let tokens: Vec<String> = (0..corpus.ids.len())
            .filter(|&s| corpus.doc_of[s] == di)
            .flat_map(|s| corpus.tokens[s].clone())
            .collect();
        if !tokens.iter().any(|t| doc_q.contains_key(t)) {
            continue;
        }
        doc_scores.push((id.clone(), corpus.dirichlet_score(&doc_q, &tokens, p.mu)));
    }
    let mut docs = rank(&doc_scores);
    docs.truncate(p.k_docs);
    if docs.is_empty() {
        return Vec::new();
    }
    let doc_norm: HashMap<String, f64> = docs
        .iter()
        .map(|d| d.0.clone())
        .zip(minmax(&docs.iter().map(|d| d.1).collect::<Vec<_>>()))
        .collect();

    let sentences: Vec<usize> = (0..corpus.ids.len())
        .filter(|&s| doc_norm.contains_key(&corpus.doc_ids[corpus.doc_of[s]]) && !corpus.tokens[s].is_empty())
        .collect();
    if sentences.is_empty() {
        return Vec::new();
    }
    let direct: Vec<f64> = sentences
        .iter()
        .map(|&s| corpus.dirichlet_score(&sent_q, &corpus.tokens[s], p.mu))
        .collect();
    let final_scores: Vec<(String, f64)> = sentences
        .iter()
        .zip(minmax(&direct))
        .map(|(&s, ns)| {
            let dn = doc_norm[&corpus.doc_ids[corpus.doc_of[s]]];
            (corpus.ids[s].clone(), (1.0 - p.gamma) * dn + p.gamma * ns)
        })
        .collect();
    let mut out = rank(&final_scores);
    out.truncate(p.k_sents);
    out
}

// ---------------------------------------------------------------------------
// Monolithic weak labeler

#[derive(Debug, Clone)]
pub struct ReferenceWeakConfig {
    pub ranker: InitialRankerParams,
    pub lambda: f64,
    pub nu: f64,
    pub delta: f64,
    pub m_future: usize,
    pub k: usize,
    pub query_words: usize,
    pub text_words: usize,
    pub embed_dim: usize,
}

fn cut(text: &str, n: usize) -> String {
    text.split_whitespace().take(n).collect::<Vec<_>>().join(" ")
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// The whole weak-labeling pipeline for one conversation in one function.
/// Labels are `(sentence id, is_positive)`. `None` when no retrieved
/// sentence falls in a pointed section.
pub fn reference_weak_labels(
    corpus: &FlatCorpus,
    analyzer: &Analyzer,
    conv: &Dialogue,
    cfg: &ReferenceWeakConfig,
) -> Option<BTreeSet<(String, bool)>> {
    let target = conv.target.as_ref().unwrap();
    let pointed: BTreeSet<(String, String)> = target
        .links
        .iter()
        .map(|l| (l.doc_id.clone(), l.section_id.clone()))
        .collect();
    let pointed_docs: BTreeSet<&str> = pointed.iter().map(|(d, _)| d.as_str()).collect();
    let doc_of = |s: usize| corpus.doc_ids[corpus.doc_of[s]].as_str();
    let in_section = |s: usize| pointed.contains(&(doc_of(s).to_owned(), corpus.section_of[s].clone()));

    let candidates = reference_initial_rank(corpus, analyzer, conv, &cfg.ranker);
    let cand_idx: Vec<usize> = candidates.iter().map(|(id, _)| corpus.index_of(id)).collect();
    if !cand_idx.iter().any(|&s| in_section(s)) {
        return None;
    }
    let pool: Vec<usize> = cand_idx
        .into_iter()
        .filter(|&s| pointed_docs.contains(doc_of(s)))
        .collect();
    let ranked_by = |score: &dyn Fn(usize) -> f64| -> Vec<(String, f64)> {
        rank(
            &pool
                .iter()
                .map(|&s| (corpus.ids[s].clone(), score(s)))
                .collect::<Vec<_>>(),
        )
    };

    // TF-IDF cosine against the target.
    let tfidf = |tokens: &[String]| -> Dist {
        let mut v = Dist::new();
        for t in tokens {
            *v.entry(t.clone()).or_default() += 1.0;
        }
        for (w, x) in v.iter_mut() {
            *x *= corpus.rsj_idf(w);
        }
        v
    };
    let tv = tfidf(&analyzer.analyze(&target.text, true));
    let l_tfidf = ranked_by(&|s| {
        let sv = tfidf(&analyzer.analyze(&corpus.text[s], true));
        let dot: f64 = tv.iter().map(|(w, x)| x * sv.get(w).copied().unwrap_or(0.0)).sum();
        let na = tv.values().map(|x| x * x).sum::<f64>().sqrt();
        let nb = sv.values().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    });

    // Hashing-embedding cosine.
    let emb = HashEmbedder { dim: cfg.embed_dim };
    let te = emb.vector(&cut(&target.text, cfg.query_words));
    let l_embed = ranked_by(&|s| cos(&te, &emb.vector(&cut(&corpus.text[s], cfg.text_words))));

    // Fused LM.
    let n = conv.turns.len() as i64;
    let future: Vec<&Turn> = conv.future.iter().take(cfg.m_future).collect();
    let m = future.len() as i64;
    let analyzed = |t: &Turn| mle(&analyzer.analyze(&t.text, true));
    let h_alpha = decay(cfg.delta, n, 1, n);
    let f_alpha = decay(cfg.delta, n + 2, n + 2, n + 1 + m);
    let h_model = mix(&conv
        .turns
        .iter()
        .zip(&h_alpha)
        .map(|(t, a)| (*a, analyzed(t)))
        .collect::<Vec<_>>());
    let t_model = analyzed(target);
    let f_model = mix(&future
        .iter()
        .zip(&f_alpha)
        .map(|(t, a)| (*a, analyzed(t)))
        .collect::<Vec<_>>());
    let lm_list = |model: &Option<Dist>| {
        let q = model.as_ref().and_then(|m| corpus.in_vocab(m));
        ranked_by(&|s| {
            q.as_ref()
                .map_or(0.0, |q| corpus.dirichlet_score(q, &corpus.tokens[s], cfg.ranker.mu))
        })
    };
    let weak = [cfg.lambda / 2.0, 1.0 - cfg.lambda, cfg.lambda / 2.0];
    let l_fused_lm = rrf_reference(
        &[lm_list(&h_model), lm_list(&t_model), lm_list(&f_model)],
        &weak,
        cfg.nu,
    );

    // Fused scorer over per-turn overlap rankings.
    let per_turn = |t: &Turn| {
        let q = cut(&t.text, cfg.query_words);
        ranked_by(&|s| OverlapScorer::overlap(&q, &cut(&corpus.text[s], cfg.text_words)))
    };
    let h_lists: Vec<_> = conv.turns.iter().map(per_turn).collect();
    let f_lists: Vec<_> = future.iter().map(|t| per_turn(t)).collect();
    let l_fused_scorer = rrf_reference(
        &[
            rrf_reference(&h_lists, &h_alpha, cfg.nu),
            per_turn(target),
            rrf_reference(&f_lists, &f_alpha, cfg.nu),
        ],
        &weak,
        cfg.nu,
    );

    let fused = rrf_reference(&[l_tfidf, l_embed, l_fused_lm, l_fused_scorer], &[1.0; 4], cfg.nu);
    let mut labels = BTreeSet::new();
    for (id, _) in fused
        .iter()
        .filter(|(id, _)| in_section(corpus.index_of(id)))
        .take(cfg.k)
    {
        labels.insert((id.clone(), true));
    }
    for (id, _) in fused
        .iter()
        .rev()
        .filter(|(id, _)| !in_section(corpus.index_of(id)))
        .take(cfg.k)
    {
        labels.insert((id.clone(), false));
    }
    Some(labels)
}
