use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use ragmcts::harness::generator::{GeneratorBackend, GeneratorError};
use ragmcts::harness::remote::{RemoteConfig, RemoteGenerator};
use ragmcts::types::{MultimodalQuery, ReasoningPath};

struct Stub {
    url: String,
    hits: Arc<AtomicUsize>,
    bodies: Arc<Mutex<Vec<String>>>,
}

/// Serve `replies` in order (the last one repeats) as `(status, body)`.
fn stub(replies: Vec<(u16, &'static str)>) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let (h, b) = (hits.clone(), bodies.clone());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            b.lock().unwrap().push(String::from_utf8(body).unwrap());
            let i = h.fetch_add(1, Ordering::SeqCst);
            let (status, text) = replies[i.min(replies.len() - 1)];
            let resp = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            );
            let _ = stream.write_all(resp.as_bytes());
        }
    });
    Stub { url, hits, bodies }
}

fn generator(url: &str) -> RemoteGenerator {
    RemoteGenerator::new(RemoteConfig {
        url: url.to_string(),
        api_key: Some("k".into()),
        backoff_ms: 1,
        timeout_ms: 5_000,
        ..RemoteConfig::default()
    })
}

fn call(g: &RemoteGenerator) -> Result<String, GeneratorError> {
    let q = MultimodalQuery::new("q", "what is 1 + 1").unwrap();
    g.generate_step(&q, &ReasoningPath::empty(), None, 0.7, 3).map(|s| s.text().to_string())
}

const OK: &str = r#"{"choices":[{"message":{"role":"assistant","content":"add the two ones\nignored"}}]}"#;

#[test]
fn canned_reply_becomes_a_step() {
    let s = stub(vec![(200, OK)]);
    assert_eq!(call(&generator(&s.url)).unwrap(), "add the two ones");
    assert_eq!(s.hits.load(Ordering::SeqCst), 1);
    let sent = s.bodies.lock().unwrap()[0].clone();
    assert!(sent.contains("what is 1 + 1"));
    assert!(sent.contains("\"temperature\":0.7"));
}

#[test]
fn server_errors_retry_then_fail() {
    let s = stub(vec![(500, "{}")]);
    let err = call(&generator(&s.url)).unwrap_err();
    assert!(matches!(err, GeneratorError::EndpointUnreachable(_)), "{err:?}");
    assert_eq!(s.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn transient_error_recovers() {
    let s = stub(vec![(503, "{}"), (200, OK)]);
    assert_eq!(call(&generator(&s.url)).unwrap(), "add the two ones");
    assert_eq!(s.hits.load(Ordering::SeqCst), 2);
}

#[test]
fn empty_body_is_malformed() {
    let s = stub(vec![(200, "")]);
    assert!(matches!(call(&generator(&s.url)), Err(GeneratorError::MalformedReply(_))));
}

#[test]
fn rate_limit_is_reported_after_retries() {
    let s = stub(vec![(429, "{}")]);
    assert!(matches!(call(&generator(&s.url)), Err(GeneratorError::RateLimited(3))));
    assert_eq!(s.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn client_error_is_not_retried() {
    let s = stub(vec![(401, "{}")]);
    assert!(matches!(call(&generator(&s.url)), Err(GeneratorError::EndpointUnreachable(_))));
    assert_eq!(s.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn closed_port_is_unreachable() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let g = generator(&format!("http://127.0.0.1:{port}/v1"));
    assert!(matches!(call(&g), Err(GeneratorError::EndpointUnreachable(_))));
}
