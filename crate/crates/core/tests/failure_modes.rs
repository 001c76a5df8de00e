mod common;

use std::sync::Arc;
use std::time::Duration;

use common::{harness, kdb_stub, scripted_deps, tongue_png, tongue_stub, StubReply, StubServer};
use serde_json::json;
use tcm_consult::consult::EventKind;
use tcm_consult::eval::{load_benchmark, EvalError, EvalRunner, OPTION_LETTERS};
use tcm_consult::gateway::{Gateway, Purpose, RequestMeta, Script, ScriptedBackend, ScriptedReply};
use tcm_consult::scenario::ScenarioId;
use tcm_consult::service::{ErrorCode, Service};
use tcm_consult::tools::{EndpointConfig, KdbClient, Modality, ToolError, ToolRegistry, TongueClient};

#[test]
fn tongue_stub_maps_native_labels() {
    let stub = tongue_stub();
    let client = TongueClient::new(EndpointConfig::new(stub.url("/classify")));
    let analysis = client.classify(&tongue_png()).unwrap();
    let v = serde_json::to_value(&analysis).unwrap();
    assert_eq!(v["tongue_color"], "pale");
    assert_eq!(v["coating"], "thin-white");
    assert_eq!(v["raw_scores"]["pale"], 0.91);
}

#[test]
fn slow_tongue_service_is_unavailable_after_retries() {
    let stub = StubServer::start(|_, _| StubReply { status: 200, body: json!({}), delay: Duration::from_millis(400) });
    let mut cfg = EndpointConfig::new(stub.url("/classify"));
    cfg.timeout_ms = 100;
    cfg.retries = 1;
    let err = TongueClient::new(cfg).classify(&tongue_png()).unwrap_err();
    assert!(matches!(err, ToolError::ToolUnavailable { attempts: 2, .. }), "{err:?}");
}

#[test]
fn server_errors_are_retried() {
    let stub = StubServer::start(|_, _| StubReply { status: 503, body: json!({"error": "busy"}), delay: Duration::ZERO });
    let mut cfg = EndpointConfig::new(stub.url("/query"));
    cfg.retries = 2;
    let err = KdbClient::new(cfg).query("qi", Some(Modality::Text)).unwrap_err();
    assert!(matches!(err, ToolError::ToolUnavailable { attempts: 3, .. }), "{err:?}");
    assert_eq!(stub.hits.load(std::sync::atomic::Ordering::Relaxed), 3);
}

#[test]
fn kdb_stub_entries_are_returned() {
    let stub = kdb_stub();
    let res = KdbClient::new(EndpointConfig::new(stub.url("/query"))).query("spleen", None).unwrap();
    assert_eq!(res.entries.len(), 1);
    assert!(res.entries[0].content.contains("spleen"));
}

#[test]
fn tool_outage_is_logged_and_the_turn_still_answers() {
    let dir = tempfile::tempdir().unwrap();
    let backend = Arc::new(ScriptedBackend::load(&common::fixtures().join("consult_script.json")).unwrap());
    let mut cfg = EndpointConfig::new("http://127.0.0.1:9/classify");
    cfg.timeout_ms = 200;
    cfg.retries = 0;
    let tools = ToolRegistry::new(Some(TongueClient::new(cfg)), None, None);
    let svc = Service::open(&dir.path().join("var"), scripted_deps(backend, None, tools)).unwrap();
    let id = svc.create_session(Some(ScenarioId::ConstitutionTongue)).unwrap().session_id;
    let resp = svc.post_message(&id, "Here is my tongue.", Some(tongue_png())).unwrap();
    assert!(!resp.reply.is_empty());
    let events = svc.events(&id).unwrap();
    let tool = events
        .iter()
        .find_map(|e| match &e.event {
            EventKind::ToolInvoked { tool, result, .. } => Some((tool.clone(), result.clone())),
            _ => None,
        })
        .expect("tool invocation logged");
    assert_eq!(tool.0, "classify_tongue");
    assert!(tool.1.to_string().contains("ToolUnavailable"), "{}", tool.1);
}

#[test]
fn oversized_image_is_rejected_before_the_step() {
    let h = harness();
    let id = h.service.create_session(None).unwrap().session_id;
    let err = h.service.post_message(&id, "tongue", Some(vec![0u8; 64 * 1024 * 1024])).unwrap_err();
    assert_eq!(err.code, ErrorCode::ImageTooLarge);
    assert_eq!(h.service.events(&id).unwrap().len(), 1);
}

#[test]
fn concurrent_messages_to_one_session_are_serialized() {
    let h = harness();
    let id = h.service.create_session(None).unwrap().session_id;
    let results: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..8)
            .map(|i| {
                let (svc, id) = (&h.service, id.clone());
                s.spawn(move || svc.post_message(&id, &format!("I feel tired and cold, message {i}"), None))
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let ok = results.iter().filter(|r| r.is_ok()).count();
    for r in &results {
        if let Err(e) = r {
            assert_eq!(e.code, ErrorCode::SessionBusy);
            assert!(e.retryable);
        }
    }
    assert!(ok >= 1);
    let view = h.service.get_session(&id).unwrap();
    assert_eq!(view.transcript.len(), 2 * ok);
    assert_eq!(h.service.replay(&id).unwrap(), h.service.snapshot(&id).unwrap().unwrap().state);
}

#[test]
fn gap_in_event_log_is_reported_as_corrupt() {
    let h = harness();
    let id = h.service.create_session(None).unwrap().session_id;
    for text in ["I have trouble sleeping", "I feel cold and tired"] {
        h.service.post_message(&id, text, None).unwrap();
    }
    let path = h.service.store().events_path(&id);
    let lines: Vec<String> = std::fs::read_to_string(&path).unwrap().lines().map(str::to_string).collect();
    assert!(lines.len() > 5);
    let kept: Vec<&str> = lines.iter().enumerate().filter(|(i, _)| *i != 4).map(|(_, l)| l.as_str()).collect();
    std::fs::write(&path, kept.join("\n") + "\n").unwrap();
    std::fs::remove_file(path.with_file_name("snapshot.json")).unwrap();

    let reopened = Service::open(&h.dir.path().join("var"), h.service.deps().clone()).unwrap();
    let err = reopened.get_session(&id).unwrap_err();
    assert_eq!(err.code, ErrorCode::CorruptLog);
    assert!(err.message.contains("seq 5"), "{}", err.message);
}

#[test]
fn aborted_eval_resumes_without_repeating_answered_items() {
    let items = load_benchmark(&common::fixtures().join("bench_40.jsonl"), None).unwrap();
    let out = tempfile::tempdir().unwrap();
    let template = tcm_consult::eval::PromptTemplate::default();

    let backend = Arc::new(ScriptedBackend::new(Script::default()));
    let gateway = Gateway::scripted(backend.clone());
    for item in &items[..25] {
        let fp = gateway.encode(&template.render(item), RequestMeta::new(Purpose::Evaluation)).fingerprint;
        backend.insert_fingerprint(fp, ScriptedReply::text(OPTION_LETTERS[item.gold].to_string()));
    }
    let err = EvalRunner::new(gateway).run(&items, "flaky", out.path(), None).unwrap_err();
    let (run_id, completed) = match err {
        EvalError::Aborted { run_id, completed, .. } => (run_id, completed),
        other => panic!("expected abort, got {other:?}"),
    };
    assert_eq!(completed, 25);

    let backend = Arc::new(ScriptedBackend::new(Script::default()));
    backend.set_fallback(Some(ScriptedReply::text("A")));
    let gateway = Gateway::scripted(backend.clone());
    let run = EvalRunner::new(gateway).run(&items, "flaky", out.path(), Some(&run_id)).unwrap();
    assert_eq!(backend.recorded().len(), 15);
    assert_eq!(run.predictions.len(), 40);
    let report = EvalRunner::score_dir(&out.path().join(&run_id)).unwrap();
    let tail_correct = items[25..].iter().filter(|i| i.gold == 0).count() as u64;
    assert_eq!(report.overall.correct, 25 + tail_correct);
}
