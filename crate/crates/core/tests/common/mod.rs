//! Shared test support: fixture loading, a stub HTTP server for the
//! external tools, and a fully scripted service.
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};
use tcm_consult::consult::{ConsultDeps, ExtractionMode};
use tcm_consult::corpus::{ingest_manifest, Corpus};
use tcm_consult::gateway::{Gateway, ScriptedBackend};
use tcm_consult::scenario::ScenarioId;
use tcm_consult::service::Service;
use tcm_consult::tools::{EndpointConfig, KdbClient, TongueClient, ToolRegistry};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Canned response of a stub endpoint.
pub struct StubReply {
    pub status: u16,
    pub body: Value,
    pub delay: Duration,
}

impl StubReply {
    pub fn ok(body: Value) -> Self {
        Self { status: 200, body, delay: Duration::ZERO }
    }
}

type Handler = dyn Fn(&str, &Value) -> StubReply + Send + Sync;

/// Minimal HTTP/1.1 server on a loopback port. Each connection carries one
/// request. Stops accepting when dropped.
pub struct StubServer {
    pub addr: SocketAddr,
    pub hits: Arc<AtomicUsize>,
    stop: Arc<AtomicBool>,
}

impl StubServer {
    pub fn start(handler: impl Fn(&str, &Value) -> StubReply + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub");
        let addr = listener.local_addr().unwrap();
        listener.set_nonblocking(true).unwrap();
        let stop = Arc::new(AtomicBool::new(false));
        let hits = Arc::new(AtomicUsize::new(0));
        let handler: Arc<Handler> = Arc::new(handler);
        let (stop2, hits2) = (stop.clone(), hits.clone());
        thread::spawn(move || {
            while !stop2.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        hits2.fetch_add(1, Ordering::Relaxed);
                        let h = handler.clone();
                        thread::spawn(move || serve_one(stream, &*h));
                    }
                    Err(_) => thread::sleep(Duration::from_millis(2)),
                }
            }
        });
        Self { addr, hits, stop }
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
    }
}

fn serve_one(stream: TcpStream, handler: &Handler) {
    stream.set_nonblocking(false).ok();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).is_err() {
        return;
    }
    let path = request_line.split_whitespace().nth(1).unwrap_or("/").to_string();
    let mut len = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).ok();
    let value: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let reply = handler(&path, &value);
    thread::sleep(reply.delay);
    let payload = reply.body.to_string();
    let mut out = stream;
    let _ = write!(
        out,
        "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        reply.status,
        payload.len(),
        payload
    );
}

/// Tongue classifier answering with fixed native labels.
pub fn tongue_stub() -> StubServer {
    StubServer::start(|_, body| {
        if body.get("image_base64").and_then(Value::as_str).is_none() {
            return StubReply { status: 400, body: json!({"error": "missing image"}), delay: Duration::ZERO };
        }
        StubReply::ok(json!({
            "color": "pale", "coating": "thin_white", "shape": "normal", "moisture": "moist",
            "scores": {"pale": 0.91, "thin_white": 0.88, "normal": 0.8, "moist": 0.77}
        }))
    })
}

/// Knowledge database returning one text entry per query.
pub fn kdb_stub() -> StubServer {
    StubServer::start(|_, body| {
        let q = body.get("query").and_then(Value::as_str).unwrap_or_default().to_string();
        StubReply::ok(json!({"entries": [
            {"id": "kdb-1", "modality": "text", "text": format!("Remote entry about {q}."), "score": 2.5, "label": "Remote Atlas"}
        ]}))
    })
}

/// Small solid-colour PNG standing in for a tongue photo.
pub fn tongue_png() -> Vec<u8> {
    let img = image::RgbImage::from_pixel(8, 8, image::Rgb([220, 160, 160]));
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).unwrap();
    out.into_inner()
}

#[derive(Debug, Clone, Deserialize)]
pub struct FixtureTurn {
    pub text: String,
    #[serde(default)]
    pub image: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct FixtureExpect {
    pub scenario: Option<ScenarioId>,
    pub mode: Option<String>,
    pub stage: Option<String>,
    pub termination: Option<String>,
    #[serde(default)]
    pub tools: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct FixtureSession {
    pub name: String,
    #[serde(default)]
    pub scenario_hint: Option<ScenarioId>,
    pub turns: Vec<FixtureTurn>,
    #[serde(default)]
    pub expect: FixtureExpect,
}

pub fn fixture_sessions() -> Vec<FixtureSession> {
    let raw = std::fs::read_to_string(fixtures().join("sessions.json")).unwrap();
    serde_json::from_str(&raw).unwrap()
}

/// Fixture corpus ingested into `dir`.
pub fn fixture_corpus(dir: &Path) -> Arc<Corpus> {
    ingest_manifest(&fixtures().join("corpus/manifest.json"), dir, 20).unwrap();
    Arc::new(Corpus::load(dir).unwrap())
}

/// Offline consultation stack: fixture script, fixture corpus, stub tools.
pub struct Harness {
    pub dir: tempfile::TempDir,
    pub service: Service,
    pub backend: Arc<ScriptedBackend>,
    pub tongue: StubServer,
    pub kdb: StubServer,
}

pub fn scripted_deps(backend: Arc<ScriptedBackend>, corpus: Option<Arc<Corpus>>, tools: ToolRegistry) -> ConsultDeps {
    let mut deps = ConsultDeps::new(Gateway::scripted(backend));
    deps.corpus = corpus;
    deps.tools = Arc::new(tools);
    deps.extraction = ExtractionMode::Rules;
    deps.llm_routing = false;
    deps
}

pub fn harness() -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let backend = Arc::new(ScriptedBackend::load(&fixtures().join("consult_script.json")).unwrap());
    let corpus = fixture_corpus(&dir.path().join("corpus"));
    let tongue = tongue_stub();
    let kdb = kdb_stub();
    let tools = ToolRegistry::new(
        Some(TongueClient::new(EndpointConfig::new(tongue.url("/classify")))),
        Some(KdbClient::new(EndpointConfig::new(kdb.url("/query")))),
        Some(corpus.clone()),
    );
    let deps = scripted_deps(backend.clone(), Some(corpus), tools);
    let service = Service::open(&dir.path().join("var"), deps).unwrap();
    Harness { dir, service, backend, tongue, kdb }
}

/// Runs every fixture session; returns (fixture, session id) pairs.
pub fn run_fixture_sessions(h: &Harness) -> Vec<(FixtureSession, String)> {
    let png = tongue_png();
    fixture_sessions()
        .into_iter()
        .map(|f| {
            let id = h.service.create_session(f.scenario_hint).unwrap().session_id;
            for t in &f.turns {
                let image = t.image.as_ref().map(|_| png.clone());
                h.service
                    .post_message(&id, &t.text, image)
                    .unwrap_or_else(|e| panic!("{}: turn {:?} failed: {e}", f.name, t.text));
            }
            (f, id)
        })
        .collect()
}
