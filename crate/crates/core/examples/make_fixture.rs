//! Regenerates `tests/fixtures/script.jsonl` from the fixture dataset, run
//! config and expected labels.
//!
//! A rule-based responder answers every conversation the four methods issue
//! (with the correction check both off and on); each answer is stored under
//! its prompt hash.
//!
//! cargo run --example make_fixture

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use revchain::backend::{prompt_hash, Backend, BackendError, Completion, ScriptEntry};
use revchain::config::RunConfig;
use revchain::dataset::{load_dataset, save_normalized};
use revchain::domain::{sample_hypothesis, Polarity, PremiseKind, SentenceInstance};
use revchain::pipelines::{isolation_violations, run_dataset, Method};
use revchain::prompts::{Conversation, Prompter, CLARIFICATION};

type Expected = BTreeMap<String, BTreeMap<String, Polarity>>;

struct Responder {
    instances: Vec<SentenceInstance>,
    expected: Expected,
    method: Mutex<Method>,
    recorded: Mutex<BTreeMap<String, String>>,
}

fn capitalized(s: &str) -> String {
    let mut c = s.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

fn cue(phrase: &str) -> &'static str {
    match phrase {
        "positive" => "the detail signals satisfaction with how things went",
        "negative" => "the detail hints at friction and unmet expectations",
        "neutral" => "the detail is factual and carries no evaluative weight",
        "non-positive" => "the detail reads as a complaint or as plain reporting",
        "non-negative" => "the detail reads as approval or as plain reporting",
        "non-neutral" => "the detail carries an evaluative charge of some kind",
        other => panic!("no cue for premise phrase {other}"),
    }
}

/// The label a premise phrase commits to (first complement member for
/// negated premises).
fn label_for_phrase(phrase: &str) -> Polarity {
    match phrase.strip_prefix("non-") {
        None => phrase.parse().expect("polarity"),
        Some(p) => p.parse::<Polarity>().expect("polarity").complement()[0],
    }
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let i = text.find(start)? + start.len();
    let j = text[i..].find(end)? + i;
    Some(&text[i..j])
}

impl Responder {
    fn instance(&self, conv: &Conversation) -> Option<&SentenceInstance> {
        let all: String = conv.messages().iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n");
        self.instances.iter().find(|x| all.contains(&x.text))
    }

    fn label(&self, x: &SentenceInstance) -> Polarity {
        let method = *self.method.lock().unwrap();
        self.expected[method.as_str()][&x.id]
    }

    fn answer(&self, conv: &Conversation) -> Result<String, String> {
        let last = &conv.messages().last().ok_or("empty conversation")?.content;
        if last.contains("Please evaluate the sentiment polarity based on") {
            let phrase = between(last, "Under a ", " reading").ok_or("correction prompt without premise cue")?;
            return Ok(format!("Re-reading the cues, the label comes out {}.", label_for_phrase(phrase)));
        }
        let x = self.instance(conv).ok_or_else(|| format!("no fixture sentence in: {last}"))?;
        let aspect = x.aspect_term.as_deref().unwrap_or("the target");
        let method = *self.method.lock().unwrap();
        if last == CLARIFICATION {
            return Ok(self.label(x).to_string());
        }
        if last.contains("answer the following questions: 1)") {
            let phrase = between(last, "sentence X is ", ", answer").ok_or("premise prompt without phrase")?;
            return Ok(format!(
                "1) {} is the entity in focus. 2) Under a {phrase} reading, {}.",
                capitalized(aspect),
                cue(phrase)
            ));
        }
        if last.contains("Which inference is more reasonable") || last.contains("Among the three inferences") {
            let label = self.label(x);
            return Ok(match (x.id.as_str(), method) {
                ("tour-1#0", Method::Drcr) => {
                    format!("Weighing both accounts, the sentence should be classified as {label}.")
                }
                ("tour-1#0", Method::Trcr) => {
                    format!("Weighing the three accounts, the sentiment polarity of this sentence is {label}.")
                }
                _ => format!("Weighing the accounts, the sentence is best read as {label}."),
            });
        }
        if last.contains("what is its sentiment polarity?") {
            if x.id == "lap-3#0" {
                return Ok("It reads like a plain product listing.".into());
            }
            return Ok(format!("The sentence is {}.", self.label(x)));
        }
        if last.contains("identify the detailed aspects") {
            return Ok(format!("Aspect in focus: {aspect}."));
        }
        if last.contains("what implicit opinion") {
            return Ok(format!("The events described imply an attitude toward {aspect}."));
        }
        if last.contains("determine the sentiment polarity of the sentence toward the target") {
            return Ok(format!("Overall the stance toward the target is {}.", self.label(x)));
        }
        Err(format!("unrecognized prompt: {last}"))
    }
}

impl Backend for Responder {
    fn model_id(&self) -> &str {
        "scripted-fixture"
    }

    fn complete(&self, conv: &Conversation) -> Result<Completion, BackendError> {
        let hash = prompt_hash(conv);
        let text = self
            .answer(conv)
            .map_err(|message| BackendError::MalformedResponse { prompt_hash: hash.clone(), message })?;
        self.recorded.lock().unwrap().insert(hash.clone(), text.clone());
        Ok(Completion { text, prompt_hash: hash, cached: false, latency: Duration::ZERO, attempt_count: 1 })
    }
}

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let mut cfg = RunConfig::load(&root.join("run.json")).expect("run config");
    cfg.resolve_paths(&root);
    let instances = load_dataset(&cfg.dataset_path).expect("dataset");
    save_normalized(&cfg.dataset_path.join("instances.jsonl"), &instances).expect("normalize dataset");
    let expected: Expected =
        serde_json::from_str(&std::fs::read_to_string(root.join("expected.json")).unwrap()).expect("expected labels");

    let tour = sample_hypothesis(cfg.seed, "tour-1#0");
    assert!(
        tour.kind == PremiseKind::Assert && tour.polarity == Polarity::Positive,
        "seed {} samples {tour} for tour-1#0; pick a seed that samples positive",
        cfg.seed
    );

    let responder = Responder {
        instances: instances.clone(),
        expected,
        method: Mutex::new(Method::Direct),
        recorded: Mutex::new(BTreeMap::new()),
    };
    let prompter = Prompter::default();
    for correction in [false, true] {
        for method in Method::ALL {
            if correction && matches!(method, Method::Direct | Method::Thor) {
                continue;
            }
            *responder.method.lock().unwrap() = method;
            let mut run_cfg = cfg.clone();
            run_cfg.method = method;
            run_cfg.correction.enabled = correction;
            let art = run_dataset(&instances, &run_cfg, &responder, &prompter).expect("fixture run");
            assert!(art.failures.is_empty(), "{:?}", art.failures);
            for p in &art.predictions {
                let v = isolation_violations(p);
                if !v.is_empty() {
                    for e in &p.transcripts {
                        eprintln!("step {} {:?}\nPROMPT {}\nRESP {}", e.step, e.stage, e.messages.prompt_text(), e.response);
                    }
                }
                assert!(v.is_empty(), "{} {method}: isolation violated {v:?}", p.instance_id);
            }
        }
    }

    let recorded = responder.recorded.into_inner().unwrap();
    let mut out = String::new();
    for (hash, response) in &recorded {
        let entry = ScriptEntry { hash: hash.clone(), response: response.clone() };
        out.push_str(&serde_json::to_string(&entry).unwrap());
        out.push('\n');
    }
    let path = cfg.backend.scripted_path.expect("scripted_path");
    std::fs::write(&path, out).expect("write script");
    let distinct: HashMap<&str, usize> = recorded.values().fold(HashMap::new(), |mut m, r| {
        *m.entry(r.as_str()).or_default() += 1;
        m
    });
    println!("wrote {} entries ({} distinct responses) to {}", recorded.len(), distinct.len(), path.display());
}
