mod common;

use common::{harness, run_fixture_sessions};

#[test]
fn fixture_sessions_match_expectations() {
    let h = harness();
    let mut failures = Vec::new();
    for (f, id) in run_fixture_sessions(&h) {
        let view = h.service.get_session(&id).unwrap();
        let v = serde_json::to_value(&view).unwrap();
        let e = &f.expect;
        if let Some(s) = e.scenario {
            if view.scenario != Some(s) {
                failures.push(format!("{}: scenario {:?} != {:?}", f.name, view.scenario, s));
            }
        }
        if let Some(m) = &e.mode {
            if v["mode"]["mode"] != *m.as_str() {
                failures.push(format!("{}: mode {} != {m}", f.name, v["mode"]));
            }
        }
        if let Some(st) = &e.stage {
            if v["stage"] != *st.as_str() {
                failures.push(format!("{}: stage {} != {st}", f.name, v["stage"]));
            }
        }
        if let Some(t) = &e.termination {
            if v["termination"] != *t.as_str() {
                failures.push(format!("{}: termination {} != {t}", f.name, v["termination"]));
            }
        }
        let events = serde_json::to_string(&h.service.events(&id).unwrap()).unwrap();
        for tool in &e.tools {
            if !events.contains(&format!("\"{tool}\"")) {
                failures.push(format!("{}: tool {tool} never invoked", f.name));
            }
        }
    }
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}
