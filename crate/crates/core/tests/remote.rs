use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use matrank::embedding::{RemoteConfig, RemoteProvider};
use matrank::{CachedProvider, EmbeddingError, EmbeddingProvider, EmbeddingRequest};

type Handler = dyn Fn(&str, &Value) -> (u16, String) + Send + Sync;

/// Minimal one-request-per-connection HTTP server.
struct Server {
    url: String,
    bodies: Arc<Mutex<Vec<Value>>>,
    peak: Arc<AtomicUsize>,
}

fn serve(delay: Duration, handler: impl Fn(&str, &Value) -> (u16, String) + Send + Sync + 'static) -> Server {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let peak = Arc::new(AtomicUsize::new(0));
    let current = Arc::new(AtomicUsize::new(0));
    let handler: Arc<Handler> = Arc::new(handler);
    {
        let bodies = bodies.clone();
        let peak = peak.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let (bodies, peak, current, handler) =
                    (bodies.clone(), peak.clone(), current.clone(), handler.clone());
                thread::spawn(move || {
                    let now = current.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    handle(stream, delay, &bodies, &*handler);
                    current.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
    }
    Server { url, bodies, peak }
}

fn handle(stream: TcpStream, delay: Duration, bodies: &Mutex<Vec<Value>>, handler: &Handler) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut request_line = String::new();
    reader.read_line(&mut request_line).unwrap();
    let path = request_line.split_whitespace().nth(1).unwrap_or("/").to_string();
    let mut length = 0;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                length = value.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    let body: Value = if body.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&body).unwrap()
    };
    if !body.is_null() {
        bodies.lock().unwrap().push(body.clone());
    }
    thread::sleep(delay);
    let (status, reply) = handler(&path, &body);
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
        reply.len()
    );
    let _ = stream.flush();
}

fn provider(url: &str, max_in_flight: usize) -> RemoteProvider {
    let mut config = RemoteConfig::new(url, "test-model");
    config.timeout = Duration::from_secs(10);
    config.max_in_flight = max_in_flight;
    RemoteProvider::new(config)
}

fn ok_reply(values: &[f64]) -> (u16, String) {
    (200, json!({"model": "test-model", "dim": values.len(), "values": values}).to_string())
}

#[test]
fn whole_input_wire_format() {
    let server = serve(Duration::ZERO, |_, _| ok_reply(&[0.5, -0.25, 1.0]));
    let p = provider(&server.url, 1);
    let v = p.embed(&EmbeddingRequest::whole("ferromagnet iron")).unwrap();
    assert_eq!(v.values(), &[0.5, -0.25, 1.0]);
    let bodies = server.bodies.lock().unwrap();
    assert_eq!(
        bodies[0],
        json!({"model": "test-model", "text": "ferromagnet iron", "pooling": "whole_input"})
    );
    assert_eq!(p.calls(), 1);
}

#[test]
fn target_span_sends_span() {
    let server = serve(Duration::ZERO, |_, _| ok_reply(&[1.0, 2.0]));
    let p = provider(&server.url, 1);
    let request = EmbeddingRequest::span("ferromagnet iron", 12..16).unwrap();
    p.embed(&request).unwrap();
    let bodies = server.bodies.lock().unwrap();
    assert_eq!(bodies[0]["pooling"], "target_span");
    assert_eq!(bodies[0]["span"], json!([12, 16]));
}

#[test]
fn error_statuses_map_to_error_kinds() {
    let server = serve(Duration::ZERO, |_, body| match body["text"].as_str().unwrap() {
        "busy" => (503, json!({"error": "warming up"}).to_string()),
        "long" => (400, json!({"error": "input too long"}).to_string()),
        "plain" => (500, "boom".to_string()),
        "empty" => ok_reply(&[]),
        "short" => (200, json!({"model": "test-model", "dim": 4, "values": [1.0]}).to_string()),
        _ => (200, "not json".to_string()),
    });
    let p = provider(&server.url, 1);
    let embed = |t: &str| p.embed(&EmbeddingRequest::whole(t)).unwrap_err();
    assert!(matches!(embed("busy"), EmbeddingError::ProviderUnavailable(m) if m.contains("warming up")));
    assert_eq!(
        embed("long"),
        EmbeddingError::Rejected {
            status: 400,
            message: "input too long".into()
        }
    );
    assert_eq!(
        embed("plain"),
        EmbeddingError::Rejected {
            status: 500,
            message: "boom".into()
        }
    );
    assert_eq!(embed("empty"), EmbeddingError::EmptyModelOutput);
    assert!(matches!(embed("short"), EmbeddingError::MalformedResponse(_)));
    assert!(matches!(embed("junk"), EmbeddingError::MalformedResponse(_)));
}

#[test]
fn unreachable_sidecar_is_unavailable() {
    let p = provider("http://127.0.0.1:1", 1);
    assert!(matches!(
        p.embed(&EmbeddingRequest::whole("iron")),
        Err(EmbeddingError::ProviderUnavailable(_))
    ));
}

#[test]
fn health_endpoint() {
    let server = serve(Duration::ZERO, |path, _| {
        assert_eq!(path, "/health");
        (200, json!({"model": "test-model", "dim": 3, "status": "ok"}).to_string())
    });
    let health = provider(&server.url, 1).health().unwrap();
    assert_eq!(health.status, "ok");
    assert_eq!(health.dim, Some(3));
}

#[test]
fn in_flight_requests_are_bounded() {
    let server = serve(Duration::from_millis(60), |_, body| {
        let n = body["text"].as_str().unwrap().len() as f64;
        ok_reply(&[n, 1.0])
    });
    let p = provider(&server.url, 2);
    let requests: Vec<_> = (1..=8).map(|i| EmbeddingRequest::whole("x".repeat(i))).collect();
    let out = p.embed_each(&requests);
    for (i, v) in out.into_iter().enumerate() {
        assert_eq!(v.unwrap().values()[0], (i + 1) as f64, "results stay in request order");
    }
    let peak = server.peak.load(Ordering::SeqCst);
    assert!(peak <= 2, "peak {peak} exceeds the bound");
    assert_eq!(p.calls(), 8);
}

#[test]
fn cache_absorbs_repeat_requests() {
    let server = serve(Duration::ZERO, |_, _| ok_reply(&[0.1, 0.2]));
    let cached = CachedProvider::in_memory(provider(&server.url, 2));
    let request = EmbeddingRequest::whole("cobalt");
    let first = cached.embed(&request).unwrap();
    let second = cached.embed(&request).unwrap();
    assert_eq!(first, second);
    assert_eq!(cached.inner().calls(), 1);
}
