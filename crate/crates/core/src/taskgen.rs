//! Rule-based task generation from source documents with two quality gates:
//! a concept-confidence gate and an instance-quality gate.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envpolicy::{default_format, Capability, Difficulty, TaskStub};
use crate::error::{Error, Result};
use crate::rng;

/// `(subject, relation, object)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fact(pub String, pub String, pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDoc {
    pub id: String,
    pub facts: Vec<Fact>,
    pub noise_level: f64,
}

impl SourceDoc {
    pub fn validate(&self) -> Result<()> {
        if self.facts.is_empty() {
            return Err(Error::Config(format!("document {} has no facts", self.id)));
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return Err(Error::Config(format!(
                "document {} noise_level {} outside [0, 1]",
                self.id, self.noise_level
            )));
        }
        Ok(())
    }
}

pub const DEFAULT_STAGES: [&str; 3] = ["symptom-analysis", "diagnostic-reasoning", "treatment-planning"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningTemplate {
    pub id: String,
    pub stages: Vec<String>,
    pub slot_count: usize,
    pub capability: Capability,
    pub difficulty: Difficulty,
    /// Number of answer options; the gold option is drawn uniformly.
    pub n_options: usize,
}

impl ReasoningTemplate {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() || self.slot_count == 0 || self.n_options == 0 {
            return Err(Error::Config(format!(
                "template {} needs stages, slots and options",
                self.id
            )));
        }
        Ok(())
    }
}

/// One template per (capability, difficulty); harder templates fill more
/// slots.
pub fn default_templates() -> Vec<ReasoningTemplate> {
    let mut out = Vec::new();
    for cap in Capability::ALL {
        for (slots, d) in [(2, Difficulty::Easy), (3, Difficulty::Medium), (4, Difficulty::Hard)] {
            out.push(ReasoningTemplate {
                id: format!("{cap}-{d}"),
                stages: DEFAULT_STAGES.iter().map(|s| s.to_string()).collect(),
                slot_count: slots,
                capability: cap,
                difficulty: d,
                n_options: 2,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Concept {
    pub text: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub doc_id: String,
    pub template_id: String,
    pub capability: Capability,
    pub question: String,
    pub reasoning_chain: Vec<String>,
    pub answer: String,
    pub gold_action: usize,
    pub difficulty: Difficulty,
    pub quality: f64,
    /// Concepts filling the template slots, in slot order.
    pub concepts: Vec<String>,
    pub source_noise: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualityConfig {
    pub tau_entity: f64,
    pub tau_medical: f64,
    /// Completeness, consistency and noise weights of the rubric.
    pub rubric: [f64; 3],
}

impl Default for QualityConfig {
    fn default() -> Self {
        Self {
            tau_entity: 0.8,
            tau_medical: 0.85,
            rubric: [0.4, 0.3, 0.3],
        }
    }
}

impl QualityConfig {
    /// Thresholds must lie in `(0, 1]`; `tau_medical = 0` is also accepted
    /// and disables the instance gate.
    pub fn validate(&self) -> Result<()> {
        let ok = |t: f64| t > 0.0 && t <= 1.0;
        if !ok(self.tau_entity) || !(ok(self.tau_medical) || self.tau_medical == 0.0) {
            return Err(Error::Config(format!(
                "thresholds tau_entity={} tau_medical={} must lie in (0, 1]",
                self.tau_entity, self.tau_medical
            )));
        }
        if self.rubric.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("rubric weights must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// Fact subjects and objects whose simulated confidence clears `tau_entity`,
/// highest confidence first, then alphabetical.
pub fn extract_concepts(doc: &SourceDoc, cfg: &QualityConfig) -> Vec<Concept> {
    let terms: BTreeSet<&str> = doc
        .facts
        .iter()
        .flat_map(|f| [f.0.as_str(), f.2.as_str()])
        .filter(|t| !t.trim().is_empty())
        .collect();
    let mut out: Vec<Concept> = terms
        .into_iter()
        .map(|t| Concept {
            text: t.to_string(),
            confidence: 1.0 - doc.noise_level * rng::hash_fraction(t),
        })
        .filter(|c| c.confidence >= cfg.tau_entity)
        .collect();
    out.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then_with(|| a.text.cmp(&b.text)));
    out
}

fn relation_of<'a>(doc: &'a SourceDoc, concept: &str) -> &'a str {
    doc.facts
        .iter()
        .find(|f| f.0 == concept || f.2 == concept)
        .map_or("relates to", |f| f.1.as_str())
}

/// Fills the template's slots with the top concepts and writes one chain
/// sentence per stage. `quality` is left at 0.
pub fn instantiate<R: Rng + ?Sized>(
    doc: &SourceDoc,
    template: &ReasoningTemplate,
    concepts: &[Concept],
    rng: &mut R,
) -> Result<TaskInstance> {
    template.validate()?;
    if concepts.len() < template.slot_count {
        return Err(Error::Generation {
            doc_id: doc.id.clone(),
            reason: format!(
                "template {} needs {} concepts, {} available",
                template.id,
                template.slot_count,
                concepts.len()
            ),
        });
    }
    let slots: Vec<String> = concepts[..template.slot_count].iter().map(|c| c.text.clone()).collect();
    let question = format!(
        "[{}] Considering {}, what follows?",
        template.capability,
        slots.join(", ")
    );
    let reasoning_chain = template
        .stages
        .iter()
        .enumerate()
        .map(|(k, stage)| {
            let c = &slots[k % slots.len()];
            format!("{stage}: {c} {} the findings.", relation_of(doc, c))
        })
        .collect();
    let options: Vec<usize> = (0..template.n_options).collect();
    let gold_action = *options.choose(rng).expect("n_options validated positive");
    // the answer names the concept of the final stage
    let last = &slots[(template.stages.len() - 1) % slots.len()];
    Ok(TaskInstance {
        id: format!("{}/{}", doc.id, template.id),
        doc_id: doc.id.clone(),
        template_id: template.id.clone(),
        capability: template.capability,
        question,
        reasoning_chain,
        answer: format!("<answer>option {gold_action}: {last}</answer>"),
        gold_action,
        difficulty: template.difficulty,
        quality: 0.0,
        concepts: slots,
        source_noise: doc.noise_level,
    })
}

/// `w0 * completeness + w1 * consistency + w2 * (1 - noise)`, clamped to
/// `[0, 1]`.
///
/// Completeness is the share of nonempty chain steps (0 for an empty
/// chain). Consistency is 1 when the answer names a concept that also
/// appears in the chain.
pub fn quality_score_with(inst: &TaskInstance, rubric: &[f64; 3]) -> f64 {
    let chain = &inst.reasoning_chain;
    let completeness = if chain.is_empty() {
        0.0
    } else {
        chain.iter().filter(|s| !s.trim().is_empty()).count() as f64 / chain.len() as f64
    };
    let consistent = inst
        .concepts
        .iter()
        .any(|c| inst.answer.contains(c.as_str()) && chain.iter().any(|s| s.contains(c.as_str())));
    let consistency = if consistent { 1.0 } else { 0.0 };
    let q = rubric[0] * completeness + rubric[1] * consistency + rubric[2] * (1.0 - inst.source_noise);
    q.clamp(0.0, 1.0)
}

pub fn quality_score(inst: &TaskInstance) -> f64 {
    quality_score_with(inst, &QualityConfig::default().rubric)
}

/// One row of the composition table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionRow {
    /// Capability name, or "total".
    pub domain: String,
    pub count: usize,
    pub share: f64,
    pub mean_quality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionReport {
    pub generated: usize,
    pub retained: usize,
    pub rows: Vec<CompositionRow>,
}

impl CompositionReport {
    fn from_instances(generated: usize, instances: &[TaskInstance]) -> Self {
        let row = |domain: String, items: Vec<&TaskInstance>| {
            let count = items.len();
            CompositionRow {
                domain,
                count,
                share: if instances.is_empty() { 0.0 } else { count as f64 / instances.len() as f64 },
                mean_quality: if count == 0 {
                    0.0
                } else {
                    items.iter().map(|i| i.quality).sum::<f64>() / count as f64
                },
            }
        };
        let mut rows: Vec<CompositionRow> = Capability::ALL
            .iter()
            .map(|&c| row(c.to_string(), instances.iter().filter(|i| i.capability == c).collect()))
            .collect();
        rows.push(row("total".into(), instances.iter().collect()));
        Self {
            generated,
            retained: instances.len(),
            rows,
        }
    }

    /// Fixed-width text table.
    pub fn to_table(&self) -> String {
        let mut s = format!("{:<12} {:>8} {:>8} {:>12}\n", "domain", "count", "share", "mean_quality");
        for r in &self.rows {
            s.push_str(&format!(
                "{:<12} {:>8} {:>8.3} {:>12.3}\n",
                r.domain, r.count, r.share, r.mean_quality
            ));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub report: CompositionReport,
    pub instances: Vec<TaskInstance>,
}

impl Dataset {
    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Environment stubs for the retained instances. Gold options beyond the
    /// action count wrap around.
    pub fn task_stubs(&self, n_actions: usize) -> Vec<TaskStub> {
        self.instances
            .iter()
            .map(|i| TaskStub {
                capability: i.capability,
                difficulty: i.difficulty,
                gold_action: i.gold_action % n_actions.max(1),
                format: default_format(i.capability),
            })
            .collect()
    }
}

/// Extract, instantiate, score and filter every (document, template) pair.
///
/// Pairs with too few confident concepts are skipped; only the failing
/// concepts are dropped, never the document. Randomness for pair `(d, t)`
/// comes from its own stream, so the result does not depend on order.
pub fn curate(corpus: &[SourceDoc], templates: &[ReasoningTemplate], cfg: &QualityConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    if corpus.is_empty() || templates.is_empty() {
        return Err(Error::Config("curation needs a nonempty corpus and template list".into()));
    }
    for t in templates {
        t.validate()?;
    }
    let mut ids = BTreeSet::new();
    for d in corpus {
        d.validate()?;
        if !ids.insert(d.id.as_str()) {
            return Err(Error::Config(format!("duplicate document id {}", d.id)));
        }
    }
    let mut generated = 0;
    let mut kept = Vec::new();
    for (di, doc) in corpus.iter().enumerate() {
        let concepts = extract_concepts(doc, cfg);
        for (ti, template) in templates.iter().enumerate() {
            if concepts.len() < template.slot_count {
                log::debug!("skipping {}/{}: {} concepts", doc.id, template.id, concepts.len());
                continue;
            }
            let stream = rng::tags::CURATION + (di * templates.len() + ti) as u64;
            let mut r = rng::stream(seed, stream);
            let mut inst = instantiate(doc, template, &concepts, &mut r)?;
            inst.quality = quality_score_with(&inst, &cfg.rubric);
            generated += 1;
            if inst.quality >= cfg.tau_medical {
                kept.push(inst);
            }
        }
    }
    if kept.is_empty() {
        log::warn!("curation retained no instances out of {generated}");
    }
    Ok(Dataset {
        report: CompositionReport::from_instances(generated, &kept),
        instances: kept,
    })
}

const SYMPTOMS: [&str; 12] = [
    "fever", "cough", "fatigue", "headache", "nausea", "rash", "dyspnea", "chest pain", "joint pain", "dizziness",
    "edema", "insomnia",
];
const CONDITIONS: [&str; 10] = [
    "influenza", "pneumonia", "migraine", "hypertension", "asthma", "arthritis", "anemia", "dermatitis", "gastritis",
    "angina",
];
const TREATMENTS: [&str; 10] = [
    "rest", "antibiotics", "analgesics", "inhaler", "diuretics", "antihistamines", "iron supplements",
    "beta blockers", "hydration", "physiotherapy",
];

/// Deterministic corpus of `n` documents with 3 to 5 facts each and noise
/// drawn uniformly from `[0, 1)`.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<SourceDoc> {
    (0..n)
        .map(|i| {
            let mut r = rng::stream(seed, rng::tags::CORPUS + i as u64);
            let n_facts = r.random_range(3..=5);
            let facts = (0..n_facts)
                .map(|k| {
                    let cond = *CONDITIONS.choose(&mut r).expect("nonempty");
                    if k % 2 == 0 {
                        Fact(SYMPTOMS.choose(&mut r).expect("nonempty").to_string(), "suggests".into(), cond.into())
                    } else {
                        Fact(cond.into(), "treated with".into(), TREATMENTS.choose(&mut r).expect("nonempty").to_string())
                    }
                })
                .collect();
            SourceDoc {
                id: format!("doc-{i:05}"),
                facts,
                noise_level: r.random_range(0.0..1.0),
            }
        })
        .collect()
}

/// Reads one JSON document per line; blank lines are skipped.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<SourceDoc>> {
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: SourceDoc = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: k + 1,
            message: e.to_string(),
        })?;
        doc.validate().map_err(|e| Error::Parse {
            line: k + 1,
            message: e.to_string(),
        })?;
        out.push(doc);
    }
    Ok(out)
}

pub fn write_corpus<W: Write>(mut w: W, corpus: &[SourceDoc]) -> Result<()> {
    for d in corpus {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct Header {
    header: CompositionReport,
}

/// Header line with the composition report, then one instance per line.
pub fn write_dataset<W: Write>(mut w: W, ds: &Dataset) -> Result<()> {
    serde_json::to_writer(&mut w, &Header { header: ds.report.clone() })?;
    w.write_all(b"\n")?;
    for inst in &ds.instances {
        serde_json::to_writer(&mut w, inst)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_dataset<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut lines = reader.lines().enumerate().filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
    let parse_err = |line: usize, e: serde_json::Error| Error::Parse {
        line,
        message: e.to_string(),
    };
    let (k, first) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "missing header record".into(),
    })?;
    let header: Header = serde_json::from_str(&first?).map_err(|e| parse_err(k + 1, e))?;
    let mut instances = Vec::new();
    for (k, line) in lines {
        instances.push(serde_json::from_str(&line?).map_err(|e| parse_err(k + 1, e))?);
    }
    Ok(Dataset {
        report: header.header,
        instances,
    })
}
