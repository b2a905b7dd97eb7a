//! SemEval-2014 Task 4 ingestion, implicit-label merge and the normalized
//! JSON Lines instance format.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{DomainTag, Polarity, SentenceInstance, Split};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed XML: {0}")]
    Xml(String),
    #[error("sentence `{sentence_id}`: unknown polarity `{value}`")]
    UnknownPolarity { sentence_id: String, value: String },
    #[error("sentence without an id attribute near byte {0}")]
    MissingSentenceId(usize),
    #[error("sentence `{0}` has no text element")]
    MissingText(String),
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("duplicate annotation key {0}")]
    DuplicateAnnotation(String),
    #[error("duplicate instance id `{0}`")]
    DuplicateId(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedXml {
    pub instances: Vec<SentenceInstance>,
    pub dropped_conflict: usize,
}

/// One instance per `aspectTerm`, id `"<sentence-id>#<aspect-index>"`.
/// Aspects labelled `conflict` are dropped and counted; their index is
/// still consumed so ids stay stable.
pub fn parse_semeval_xml(xml: &str, domain_tag: DomainTag, split: Split) -> Result<ParsedXml, DatasetError> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| DatasetError::Xml(e.to_string()))?;
    let mut instances = Vec::new();
    let mut dropped_conflict = 0;
    for sentence in doc.descendants().filter(|n| n.has_tag_name("sentence")) {
        let sid = sentence
            .attribute("id")
            .ok_or_else(|| DatasetError::MissingSentenceId(sentence.range().start))?;
        let text = sentence
            .children()
            .find(|n| n.has_tag_name("text"))
            .and_then(|n| n.text())
            .ok_or_else(|| DatasetError::MissingText(sid.to_string()))?;
        let terms = sentence
            .descendants()
            .filter(|n| n.has_tag_name("aspectTerm"));
        for (idx, term) in terms.enumerate() {
            let value = term.attribute("polarity").unwrap_or("");
            let gold = match value {
                "conflict" => {
                    dropped_conflict += 1;
                    continue;
                }
                v => v.parse::<Polarity>().map_err(|_| DatasetError::UnknownPolarity {
                    sentence_id: sid.to_string(),
                    value: v.to_string(),
                })?,
            };
            let inst = SentenceInstance::new(
                format!("{sid}#{idx}"),
                text,
                term.attribute("term").map(str::to_string),
                gold,
                false,
                domain_tag,
                split,
            )
            .map_err(|e| DatasetError::Xml(e.to_string()))?;
            instances.push(inst);
        }
    }
    Ok(ParsedXml { instances, dropped_conflict })
}

pub fn read_semeval_xml(path: &Path, domain_tag: DomainTag, split: Split) -> Result<ParsedXml, DatasetError> {
    let xml = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_semeval_xml(&xml, domain_tag, split)
}

/// Join key for implicit annotations: the same term may occur more than once
/// in a sentence, so the occurrence index among equal terms is part of it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AnnotationKey {
    pub sentence_id: String,
    pub aspect_term: String,
    pub occurrence: usize,
}

impl std::fmt::Display for AnnotationKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {:?}, {})", self.sentence_id, self.aspect_term, self.occurrence)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub sentence_id: String,
    pub aspect_term: String,
    #[serde(default)]
    pub occurrence: usize,
    pub implicit: bool,
}

impl Annotation {
    pub fn key(&self) -> AnnotationKey {
        AnnotationKey {
            sentence_id: self.sentence_id.clone(),
            aspect_term: self.aspect_term.clone(),
            occurrence: self.occurrence,
        }
    }
}

pub fn parse_annotations(text: &str) -> Result<Vec<Annotation>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let a: Annotation = serde_json::from_str(line)
            .map_err(|e| DatasetError::Schema { line: i + 1, message: e.to_string() })?;
        out.push(a);
    }
    Ok(out)
}

pub fn read_annotations(path: &Path) -> Result<Vec<Annotation>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_annotations(&text)
}

/// Converts an upstream XML whose `aspectTerm` elements carry an implicit
/// marker attribute (e.g. `implicit_sentiment="True"`) into annotations.
/// `conflict` aspects are skipped so occurrence indices line up with
/// [`merge_implicit_labels`].
pub fn annotations_from_marked_xml(xml: &str, attribute: &str) -> Result<Vec<Annotation>, DatasetError> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| DatasetError::Xml(e.to_string()))?;
    let mut out = Vec::new();
    for sentence in doc.descendants().filter(|n| n.has_tag_name("sentence")) {
        let sid = sentence
            .attribute("id")
            .ok_or_else(|| DatasetError::MissingSentenceId(sentence.range().start))?;
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for term in sentence
            .descendants()
            .filter(|n| n.has_tag_name("aspectTerm") && n.attribute("polarity") != Some("conflict"))
        {
            let name = term.attribute("term").unwrap_or("");
            let occ = seen.entry(name).or_insert(0);
            if let Some(marker) = term.attribute(attribute) {
                out.push(Annotation {
                    sentence_id: sid.to_string(),
                    aspect_term: name.to_string(),
                    occurrence: *occ,
                    implicit: matches!(marker.to_ascii_lowercase().as_str(), "true" | "1" | "yes"),
                });
            }
            *occ += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeReport {
    /// Annotation keys that matched no instance.
    pub unmatched: Vec<AnnotationKey>,
    /// Instances without any annotation; these default to explicit.
    pub unannotated: usize,
}

fn instance_keys(instances: &[SentenceInstance]) -> Vec<AnnotationKey> {
    let mut counts: HashMap<(String, String), usize> = HashMap::new();
    instances
        .iter()
        .map(|inst| {
            let sid = inst.id.rsplit_once('#').map_or(inst.id.as_str(), |(s, _)| s).to_string();
            let term = inst.aspect_term.clone().unwrap_or_default();
            let n = counts.entry((sid.clone(), term.clone())).or_insert(0);
            let key = AnnotationKey { sentence_id: sid, aspect_term: term, occurrence: *n };
            *n += 1;
            key
        })
        .collect()
}

/// Sets `implicit` from the annotations. Conflict-dropped aspects are not
/// instances, so occurrence indices count surviving instances only.
pub fn merge_implicit_labels(
    mut instances: Vec<SentenceInstance>,
    annotations: &[Annotation],
) -> Result<(Vec<SentenceInstance>, MergeReport), DatasetError> {
    let mut by_key: HashMap<AnnotationKey, bool> = HashMap::new();
    for a in annotations {
        if by_key.insert(a.key(), a.implicit).is_some() {
            return Err(DatasetError::DuplicateAnnotation(a.key().to_string()));
        }
    }
    let keys = instance_keys(&instances);
    let mut used = HashSet::new();
    let mut report = MergeReport::default();
    for (inst, key) in instances.iter_mut().zip(keys) {
        match by_key.get(&key) {
            Some(&implicit) => {
                inst.implicit = implicit;
                used.insert(key);
            }
            None => {
                inst.implicit = false;
                report.unannotated += 1;
            }
        }
    }
    report.unmatched = by_key.into_keys().filter(|k| !used.contains(k)).collect();
    report.unmatched.sort();
    if report.unannotated > 0 {
        log::warn!("{} instances have no implicit annotation; treated as explicit", report.unannotated);
    }
    Ok((instances, report))
}

pub fn to_jsonl(instances: &[SentenceInstance]) -> String {
    let mut out = String::new();
    for inst in instances {
        out.push_str(&serde_json::to_string(inst).expect("instances serialize"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl(text: &str) -> Result<Vec<SentenceInstance>, DatasetError> {
    let mut out: Vec<SentenceInstance> = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let inst: SentenceInstance = serde_json::from_str(line)
            .map_err(|e| DatasetError::Schema { line: i + 1, message: e.to_string() })?;
        inst.validate()
            .map_err(|e| DatasetError::Schema { line: i + 1, message: e.to_string() })?;
        if !ids.insert(inst.id.clone()) {
            return Err(DatasetError::DuplicateId(inst.id));
        }
        out.push(inst);
    }
    Ok(out)
}

pub fn save_normalized(path: &Path, instances: &[SentenceInstance]) -> Result<(), DatasetError> {
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    f.write_all(to_jsonl(instances).as_bytes()).map_err(io_err(path))
}

pub fn load_normalized(path: &Path) -> Result<Vec<SentenceInstance>, DatasetError> {
    let f = std::fs::File::open(path).map_err(io_err(path))?;
    let mut text = String::new();
    for line in BufReader::new(f).lines() {
        text.push_str(&line.map_err(io_err(path))?);
        text.push('\n');
    }
    from_jsonl(&text)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 of the normalized serialization; identifies a dataset in run
/// manifests.
pub fn dataset_hash(instances: &[SentenceInstance]) -> String {
    sha256_hex(to_jsonl(instances).as_bytes())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub total: usize,
    pub implicit: usize,
    pub explicit: usize,
    pub positive: usize,
    pub negative: usize,
    pub neutral: usize,
    pub dropped_conflict: usize,
    pub unannotated: usize,
    pub unmatched_annotations: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub domain_tag: DomainTag,
    pub counts: DatasetCounts,
    pub source_hashes: BTreeMap<String, String>,
    pub notes: Vec<String>,
}

impl DatasetManifest {
    pub fn build(
        name: &str,
        domain_tag: DomainTag,
        instances: &[SentenceInstance],
        dropped_conflict: usize,
        merge: &MergeReport,
        source_hashes: BTreeMap<String, String>,
    ) -> Self {
        let implicit = instances.iter().filter(|i| i.implicit).count();
        let by = |p: Polarity| instances.iter().filter(|i| i.gold_polarity == p).count();
        DatasetManifest {
            name: name.to_string(),
            domain_tag,
            counts: DatasetCounts {
                total: instances.len(),
                implicit,
                explicit: instances.len() - implicit,
                positive: by(Polarity::Positive),
                negative: by(Polarity::Negative),
                neutral: by(Polarity::Neutral),
                dropped_conflict,
                unannotated: merge.unannotated,
                unmatched_annotations: merge.unmatched.len(),
            },
            source_hashes,
            notes: vec![
                "aspects labelled `conflict` are dropped".into(),
                "instances without an implicit annotation are treated as explicit".into(),
            ],
        }
    }

    pub fn identities_hold(&self) -> bool {
        let c = &self.counts;
        c.implicit + c.explicit == c.total && c.positive + c.negative + c.neutral == c.total
    }
}

pub const INSTANCES_FILE: &str = "instances.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone)]
pub struct IngestOutcome {
    pub instances: Vec<SentenceInstance>,
    pub manifest: DatasetManifest,
    pub merge: MergeReport,
}

/// Full ingestion: XML parse, annotation merge, normalized write.
pub fn ingest(
    xml_path: &Path,
    annotation_path: Option<&Path>,
    out_dir: &Path,
    domain_tag: DomainTag,
    split: Split,
) -> Result<IngestOutcome, DatasetError> {
    let xml_bytes = std::fs::read(xml_path).map_err(io_err(xml_path))?;
    let xml = String::from_utf8(xml_bytes.clone())
        .map_err(|e| DatasetError::Xml(format!("{}: {e}", xml_path.display())))?;
    let parsed = parse_semeval_xml(&xml, domain_tag, split)?;
    let mut hashes = BTreeMap::new();
    hashes.insert(file_label(xml_path), sha256_hex(&xml_bytes));

    let (instances, merge) = match annotation_path {
        Some(p) => {
            let bytes = std::fs::read(p).map_err(io_err(p))?;
            hashes.insert(file_label(p), sha256_hex(&bytes));
            let anns = parse_annotations(&String::from_utf8_lossy(&bytes))?;
            merge_implicit_labels(parsed.instances, &anns)?
        }
        None => {
            let n = parsed.instances.len();
            (parsed.instances, MergeReport { unmatched: Vec::new(), unannotated: n })
        }
    };
    let name = xml_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let manifest = DatasetManifest::build(&name, domain_tag, &instances, parsed.dropped_conflict, &merge, hashes);

    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    save_normalized(&out_dir.join(INSTANCES_FILE), &instances)?;
    let mpath = out_dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&mpath, json + "\n").map_err(io_err(&mpath))?;
    Ok(IngestOutcome { instances, manifest, merge })
}

fn file_label(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Loads `instances.jsonl` from a dataset directory, or the file itself.
pub fn load_dataset(path: &Path) -> Result<Vec<SentenceInstance>, DatasetError> {
    if path.is_dir() {
        load_normalized(&path.join(INSTANCES_FILE))
    } else {
        load_normalized(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SNIPPET: &str = r#"<?xml version="1.0" encoding="UTF-8"?>
<sentences>
  <sentence id="100">
    <text>The screen is bright but the fan is loud.</text>
    <aspectTerms>
      <aspectTerm term="screen" polarity="positive" from="4" to="10"/>
      <aspectTerm term="fan" polarity="conflict" from="29" to="32"/>
    </aspectTerms>
  </sentence>
  <sentence id="101">
    <text>I had to reinstall the drivers twice.</text>
    <aspectTerms>
      <aspectTerm term="drivers" polarity="negative" from="23" to="30"/>
    </aspectTerms>
  </sentence>
  <sentence id="102">
    <text>No aspects here.</text>
  </sentence>
</sentences>"#;

    // Hand-parsed: sentence 100 yields screen (#0) and drops fan (#1);
    // sentence 101 yields drivers (#0); sentence 102 has no aspects.
    #[test]
    fn parses_snippet() {
        let parsed = parse_semeval_xml(SNIPPET, DomainTag::Laptop, Split::Test).unwrap();
        assert_eq!(parsed.dropped_conflict, 1);
        let ids: Vec<&str> = parsed.instances.iter().map(|i| i.id.as_str()).collect();
        assert_eq!(ids, ["100#0", "101#0"]);
        assert_eq!(parsed.instances[0].aspect_term.as_deref(), Some("screen"));
        assert_eq!(parsed.instances[0].gold_polarity, Polarity::Positive);
        assert_eq!(parsed.instances[1].gold_polarity, Polarity::Negative);
        assert!(!parsed.instances[1].implicit);
    }

    #[test]
    fn empty_and_bad_input() {
        let parsed = parse_semeval_xml("<sentences></sentences>", DomainTag::Restaurant, Split::Train).unwrap();
        assert!(parsed.instances.is_empty());
        let bad = SNIPPET.replace("\"negative\"", "\"mixed\"");
        match parse_semeval_xml(&bad, DomainTag::Laptop, Split::Test) {
            Err(DatasetError::UnknownPolarity { sentence_id, value }) => {
                assert_eq!(sentence_id, "101");
                assert_eq!(value, "mixed");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_semeval_xml("<sentences>", DomainTag::Laptop, Split::Test), Err(DatasetError::Xml(_))));
    }

    fn ten() -> Vec<SentenceInstance> {
        (0..10)
            .map(|i| {
                SentenceInstance::new(
                    format!("s{i}#0"),
                    format!("sentence {i}"),
                    Some(format!("t{i}")),
                    Polarity::ALL[i % 3],
                    false,
                    DomainTag::Restaurant,
                    Split::Test,
                )
                .unwrap()
            })
            .collect()
    }

    fn ann(i: usize, implicit: bool) -> Annotation {
        Annotation { sentence_id: format!("s{i}"), aspect_term: format!("t{i}"), occurrence: 0, implicit }
    }

    #[test]
    fn merge_counts() {
        let anns: Vec<Annotation> = (0..4).map(|i| ann(i, true)).chain((4..10).map(|i| ann(i, false))).collect();
        let (merged, report) = merge_implicit_labels(ten(), &anns).unwrap();
        let m = DatasetManifest::build("x", DomainTag::Restaurant, &merged, 0, &report, BTreeMap::new());
        assert_eq!((m.counts.implicit, m.counts.explicit), (4, 6));
        assert!(m.identities_hold());
        assert!(report.unmatched.is_empty());
    }

    #[test]
    fn merge_reports_unmatched_and_unannotated() {
        let anns = vec![ann(0, true), ann(99, true)];
        let (merged, report) = merge_implicit_labels(ten(), &anns).unwrap();
        assert_eq!(report.unmatched, vec![ann(99, true).key()]);
        assert_eq!(report.unannotated, 9);
        assert_eq!(merged.iter().filter(|i| i.implicit).count(), 1);
    }

    #[test]
    fn merge_rejects_duplicates() {
        let anns = vec![ann(0, true), ann(0, false)];
        assert!(matches!(merge_implicit_labels(ten(), &anns), Err(DatasetError::DuplicateAnnotation(_))));
    }

    #[test]
    fn repeated_terms_use_occurrence() {
        let xml = r#"<sentences><sentence id="7"><text>Fries, more fries.</text><aspectTerms>
            <aspectTerm term="fries" polarity="positive"/><aspectTerm term="fries" polarity="negative"/>
            </aspectTerms></sentence></sentences>"#;
        let parsed = parse_semeval_xml(xml, DomainTag::Restaurant, Split::Test).unwrap();
        let anns = vec![Annotation { sentence_id: "7".into(), aspect_term: "fries".into(), occurrence: 1, implicit: true }];
        let (merged, _) = merge_implicit_labels(parsed.instances, &anns).unwrap();
        assert_eq!(merged.iter().map(|i| i.implicit).collect::<Vec<_>>(), [false, true]);
    }

    #[test]
    fn marked_xml_converter() {
        let xml = r#"<sentences><sentence id="7"><text>x</text><aspectTerms>
            <aspectTerm term="a" polarity="positive" implicit_sentiment="True"/>
            <aspectTerm term="a" polarity="negative" implicit_sentiment="False"/>
            </aspectTerms></sentence></sentences>"#;
        let anns = annotations_from_marked_xml(xml, "implicit_sentiment").unwrap();
        assert_eq!(anns.len(), 2);
        assert!(anns[0].implicit && !anns[1].implicit);
        assert_eq!(anns[1].occurrence, 1);
    }

    #[test]
    fn jsonl_key_order_and_errors() {
        let line = to_jsonl(&ten()[..1]);
        assert_eq!(
            line,
            "{\"id\":\"s0#0\",\"text\":\"sentence 0\",\"aspect_term\":\"t0\",\"gold_polarity\":\"positive\",\
             \"implicit\":false,\"domain_tag\":\"Restaurant\",\"split\":\"Test\"}\n"
        );
        assert!(from_jsonl("").unwrap().is_empty());
        let missing = format!("{}{{\"id\":\"z\",\"text\":\"t\",\"aspect_term\":null,\"implicit\":false,\"domain_tag\":\"Other\",\"split\":\"Test\"}}\n", line);
        match from_jsonl(&missing) {
            Err(DatasetError::Schema { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("gold_polarity"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    fn arb_instance() -> impl Strategy<Value = SentenceInstance> {
        (
            "[a-z0-9]{1,8}",
            "[A-Za-z ,.\"'é{}]{0,30}[a-z]",
            proptest::option::of("[a-z ]{1,10}"),
            0usize..3,
            any::<bool>(),
            prop_oneof![Just(DomainTag::Laptop), Just(DomainTag::Restaurant), Just(DomainTag::Other)],
            prop_oneof![Just(Split::Train), Just(Split::Test)],
        )
            .prop_map(|(id, text, aspect_term, k, implicit, domain_tag, split)| SentenceInstance {
                id,
                text,
                aspect_term,
                gold_polarity: Polarity::ALL[k],
                implicit,
                domain_tag,
                split,
            })
    }

    proptest! {
        #[test]
        fn jsonl_round_trip(list in proptest::collection::vec(arb_instance(), 0..8)) {
            let mut seen = HashSet::new();
            let list: Vec<_> = list.into_iter().filter(|i| seen.insert(i.id.clone())).collect();
            let text = to_jsonl(&list);
            prop_assert_eq!(from_jsonl(&text).unwrap(), list);
        }
    }
}
