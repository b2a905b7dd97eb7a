mod common;

use common::*;
use revchain::backend::{BackendError, Cache, CachedBackend};
use revchain::config::RunConfig;
use revchain::domain::{Polarity, Premise, PremiseKind};
use revchain::parser::UnparseablePolicy;
use revchain::pipelines::{run_dataset, Method, Pipeline, PipelineConfig, RunError, StepFailure};
use revchain::prompts::Prompter;

fn cruise() -> revchain::domain::SentenceInstance {
    fixture_instances().into_iter().find(|x| x.id == "tour-1#0").unwrap()
}

#[test]
fn drcr_on_the_cruise_sentence() {
    let cfg = fixture_config();
    let backend = fixture_backend(&cfg);
    let prompter = Prompter::default();
    let p = Pipeline::new(&backend, &prompter, cfg.pipeline()).run(Method::Drcr, &cruise(), cfg.seed).unwrap();
    assert_eq!(p.records.len(), 2);
    assert_eq!(p.records[0].premise, Premise::assert(Polarity::Positive));
    assert_eq!(p.records[1].premise, Premise { kind: PremiseKind::Negate, polarity: Polarity::Positive });
    assert!(p.contrast_raw.as_deref().unwrap().contains("should be classified as negative"));
    assert_eq!(p.final_polarity, Some(Polarity::Negative));
    let steps: Vec<u8> = p.transcripts.iter().map(|e| e.step).collect();
    assert_eq!(steps, [1, 2, 3]);
    assert!(p.transcripts[1].messages.0[0].content.starts_with("Independently analyze"));
    assert!(!p.transcripts[0].messages.0[0].content.starts_with("Independently analyze"));
}

#[test]
fn trcr_on_the_cruise_sentence() {
    let cfg = fixture_config();
    let backend = fixture_backend(&cfg);
    let prompter = Prompter::default();
    let p = Pipeline::new(&backend, &prompter, cfg.pipeline()).run(Method::Trcr, &cruise(), 99).unwrap();
    let premises: Vec<Premise> = p.records.iter().map(|r| r.premise).collect();
    assert_eq!(premises, Polarity::ALL.map(Premise::assert));
    assert_eq!(p.final_polarity, Some(Polarity::Neutral));
    assert_eq!(p.seed, 0);
    let gold_matches = p.records.iter().filter(|r| r.premise.matches(Polarity::Neutral)).count();
    assert_eq!(gold_matches, 1);
}

#[test]
fn backend_errors_name_the_step() {
    let prompter = Prompter::default();
    let x = cruise();
    // Fail on the negated premise (step 2 of DRCR).
    let backend = FnBackend::new(|conv| {
        let last = last_user(conv);
        if last.starts_with("Independently") {
            Err(BackendError::Timeout { prompt_hash: "h".into() })
        } else {
            Ok("1) The cruise. 2) A scheduled outing.".into())
        }
    });
    let err = Pipeline::new(&backend, &prompter, PipelineConfig::default()).run(Method::Drcr, &x, 0).unwrap_err();
    assert_eq!((err.step, err.instance_id.as_str()), (2, "tour-1#0"));
    assert!(matches!(err.source, StepFailure::Backend(BackendError::Timeout { .. })));
    assert_eq!(backend.calls(), 2);

    // THOR hop 2 failure stops before hop 3.
    let backend = FnBackend::new(|conv| {
        if conv.len() > 1 {
            Err(BackendError::Transport { prompt_hash: "h".into(), message: "reset".into() })
        } else {
            Ok("The cruise.".into())
        }
    });
    let err = Pipeline::new(&backend, &prompter, PipelineConfig::default()).run(Method::Thor, &x, 0).unwrap_err();
    assert_eq!(err.step, 2);
    assert_eq!(backend.calls(), 2);
    assert!(err.to_string().contains("tour-1#0"));
}

#[test]
fn empty_rationales_are_rejected() {
    let prompter = Prompter::default();
    let backend = FnBackend::new(|_| Ok("1) The cruise. 2)   ".to_string()));
    let err = Pipeline::new(&backend, &prompter, PipelineConfig::default()).run(Method::Trcr, &cruise(), 0).unwrap_err();
    assert_eq!(err.step, 1);
    assert!(matches!(err.source, StepFailure::InvalidRecord(_)));
}

#[test]
fn unparseable_policies() {
    let prompter = Prompter::default();
    let x = cruise();
    let mumble = FnBackend::new(|_| Ok("Hard to say.".to_string()));
    let cfg = |policy| PipelineConfig { policy, ..Default::default() };

    let p = Pipeline::new(&mumble, &prompter, cfg(UnparseablePolicy::NeutralDefault)).run(Method::Direct, &x, 0).unwrap();
    assert_eq!((p.final_polarity, p.fallback_used), (Some(Polarity::Neutral), true));

    let p = Pipeline::new(&mumble, &prompter, cfg(UnparseablePolicy::CountWrong)).run(Method::Direct, &x, 0).unwrap();
    assert_eq!((p.final_polarity, p.fallback_used), (None, true));

    // Retry appends exactly one clarification turn; still unparseable falls back to neutral.
    let p = Pipeline::new(&mumble, &prompter, cfg(UnparseablePolicy::Retry)).run(Method::Thor, &x, 0).unwrap();
    assert_eq!(p.transcripts.len(), 4);
    assert_eq!(p.transcripts[3].messages.len(), 7);
    assert_eq!(p.final_polarity, Some(Polarity::Neutral));
}

#[test]
fn one_gap_in_six() {
    let cfg = fixture_config();
    let instances = fixture_instances();
    let prompter = Prompter::default();
    let full = fixture_backend(&cfg);
    // Answers everything the script knows except the contrast for rest-2.
    let gap = FnBackend::new(|conv| {
        let last = last_user(conv);
        if last.contains("The soup was cold and bland.") && last.contains("Which inference") {
            return Err(BackendError::MalformedResponse { prompt_hash: "h".into(), message: "no scripted response".into() });
        }
        revchain::backend::Backend::complete(&full, conv).map(|c| c.text)
    });

    let lenient = RunConfig { max_failure_ratio: 0.2, ..cfg.clone() };
    let art = run_dataset(&instances, &lenient, &gap, &prompter).unwrap();
    assert_eq!((art.predictions.len(), art.failures.len()), (5, 1));
    assert_eq!(art.failures[0].instance_id, "rest-2#0");
    assert_eq!(art.failures[0].step, 3);

    match run_dataset(&instances, &cfg, &gap, &prompter) {
        Err(RunError::TooManyFailures { failed: 1, total: 6, .. }) => {}
        other => panic!("default ratio should reject 1 of 6: {other:?}"),
    }
}

#[test]
fn cache_serves_a_repeat_run() {
    let cfg = fixture_config();
    let instances = fixture_instances();
    let prompter = Prompter::default();
    let dir = tempfile::tempdir().unwrap();
    let cached = CachedBackend::new(fixture_backend(&cfg), Cache::open(dir.path()).unwrap());
    let first = run_dataset(&instances, &cfg, &cached, &prompter).unwrap();
    let calls = cached.inner().calls();
    assert_eq!(cached.hits(), 0);
    let second = run_dataset(&instances, &cfg, &cached, &prompter).unwrap();
    assert_eq!(cached.inner().calls(), calls);
    assert_eq!(cached.hits(), calls);
    let json = |a: &revchain::pipelines::RunArtifact| serde_json::to_string(&a.predictions).unwrap();
    assert_eq!(json(&first), json(&second));
    let transcripts = |a: &revchain::pipelines::RunArtifact| {
        a.predictions.iter().map(|p| p.transcripts.clone()).collect::<Vec<_>>()
    };
    assert_eq!(transcripts(&first), transcripts(&second));
}
