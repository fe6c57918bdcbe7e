//! The HTTP client against a scripted local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use kshift_core::textgen::{GenRequest, HttpTextGenerator, RetryPolicy, TextGenError, TextGenerator};

#[derive(Clone)]
struct Reply {
    status: u16,
    body: String,
    headers: Vec<(String, String)>,
}

fn ok(text: &str) -> Reply {
    Reply {
        status: 200,
        body: serde_json::json!({"choices": [{"message": {"content": text}, "finish_reason": "stop"}]}).to_string(),
        headers: vec![],
    }
}

fn status(code: u16) -> Reply {
    Reply {
        status: code,
        body: "{}".into(),
        headers: vec![],
    }
}

struct Seen {
    headers: Vec<String>,
    body: serde_json::Value,
}

struct Server {
    url: String,
    seen: Arc<Mutex<Vec<Seen>>>,
    peak: Arc<AtomicUsize>,
}

fn read_request(stream: &mut TcpStream) -> Seen {
    let mut reader = BufReader::new(stream);
    let mut headers = Vec::new();
    let mut len = 0;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        let line = line.trim_end().to_string();
        if line.is_empty() {
            break;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            len = v.trim().parse().unwrap();
        }
        headers.push(line);
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    Seen {
        headers,
        body: serde_json::from_slice(&body).unwrap_or_default(),
    }
}

/// Serves `script` in order (the last reply repeats), holding each response
/// for `hold` so concurrent requests overlap.
fn serve(script: Vec<Reply>, hold: Duration) -> Server {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let peak = Arc::new(AtomicUsize::new(0));
    let active = Arc::new(AtomicUsize::new(0));
    let next = Arc::new(AtomicUsize::new(0));
    let (seen2, peak2) = (seen.clone(), peak.clone());
    thread::spawn(move || {
        for stream in listener.incoming() {
            let mut stream = stream.unwrap();
            let (seen, peak, active, next, script) = (
                seen2.clone(),
                peak2.clone(),
                active.clone(),
                next.clone(),
                script.clone(),
            );
            thread::spawn(move || {
                let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                peak.fetch_max(now, Ordering::SeqCst);
                let req = read_request(&mut stream);
                seen.lock().unwrap().push(req);
                let i = next.fetch_add(1, Ordering::SeqCst).min(script.len() - 1);
                let reply = &script[i];
                thread::sleep(hold);
                let mut head = format!(
                    "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n",
                    reply.status,
                    reply.body.len()
                );
                for (k, v) in &reply.headers {
                    head.push_str(&format!("{k}: {v}\r\n"));
                }
                head.push_str("\r\n");
                active.fetch_sub(1, Ordering::SeqCst);
                let _ = stream.write_all(head.as_bytes());
                let _ = stream.write_all(reply.body.as_bytes());
            });
        }
    });
    Server { url, seen, peak }
}

fn fast_retry(max_retries: u32) -> RetryPolicy {
    RetryPolicy {
        max_retries,
        initial_backoff: Duration::from_millis(5),
        max_backoff: Duration::from_millis(20),
        multiplier: 2.0,
    }
}

#[test]
fn sends_auth_model_and_seed() {
    let server = serve(vec![ok("hello")], Duration::ZERO);
    let client = HttpTextGenerator::new(&server.url, Some("sk-test".into()), "tiny").unwrap();
    let resp = client.complete(&GenRequest::new("sys", "hi").with_seed(3)).unwrap();
    assert_eq!(resp.text, "hello");
    let seen = server.seen.lock().unwrap();
    let req = &seen[0];
    assert!(req.headers[0].starts_with("POST /v1/chat/completions"));
    assert!(req
        .headers
        .iter()
        .any(|h| h.eq_ignore_ascii_case("authorization: Bearer sk-test")));
    assert_eq!(req.body["model"], "tiny");
    assert_eq!(req.body["seed"], 3);
    assert_eq!(req.body["messages"][0]["role"], "system");
    assert_eq!(req.body["messages"][1]["content"], "hi");
}

#[test]
fn retries_server_errors_then_succeeds() {
    let server = serve(vec![status(500), status(503), ok("fine")], Duration::ZERO);
    let client = HttpTextGenerator::new(&server.url, None, "m")
        .unwrap()
        .with_retry(fast_retry(3));
    assert_eq!(client.complete(&GenRequest::new("", "x")).unwrap().text, "fine");
    assert_eq!(server.seen.lock().unwrap().len(), 3);
}

#[test]
fn rate_limit_exhausts_retries() {
    let mut limited = status(429);
    limited.headers.push(("Retry-After".into(), "0.01".into()));
    let server = serve(vec![limited], Duration::ZERO);
    let client = HttpTextGenerator::new(&server.url, None, "m")
        .unwrap()
        .with_retry(fast_retry(2));
    let err = client.complete(&GenRequest::new("", "x")).unwrap_err();
    assert!(matches!(err, TextGenError::RateLimited { attempts: 3 }), "{err}");
    assert_eq!(server.seen.lock().unwrap().len(), 3);
}

#[test]
fn auth_failure_is_not_retried() {
    let server = serve(vec![status(401)], Duration::ZERO);
    let client = HttpTextGenerator::new(&server.url, Some("bad".into()), "m")
        .unwrap()
        .with_retry(fast_retry(3));
    assert!(matches!(
        client.complete(&GenRequest::new("", "x")),
        Err(TextGenError::AuthFailure(401))
    ));
    assert_eq!(server.seen.lock().unwrap().len(), 1);
}

#[test]
fn client_errors_and_bad_payloads_surface() {
    let server = serve(vec![status(400)], Duration::ZERO);
    let client = HttpTextGenerator::new(&server.url, None, "m")
        .unwrap()
        .with_retry(fast_retry(3));
    assert!(matches!(
        client.complete(&GenRequest::new("", "x")),
        Err(TextGenError::Http { status: 400, .. })
    ));

    let server = serve(vec![status(200)], Duration::ZERO);
    let client = HttpTextGenerator::new(&server.url, None, "m").unwrap();
    assert!(matches!(
        client.complete(&GenRequest::new("", "x")),
        Err(TextGenError::MalformedResponse(_))
    ));
}

#[test]
fn unreachable_endpoint() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let client = HttpTextGenerator::new(&format!("http://127.0.0.1:{port}"), None, "m")
        .unwrap()
        .with_retry(fast_retry(1));
    let err = client.complete(&GenRequest::new("", "x")).unwrap_err();
    assert!(matches!(err, TextGenError::Unreachable { attempts: 2, .. }), "{err}");
}

#[test]
fn in_flight_requests_are_bounded() {
    let server = serve(vec![ok("x")], Duration::from_millis(80));
    let client = Arc::new(
        HttpTextGenerator::new(&server.url, None, "m")
            .unwrap()
            .with_max_in_flight(2),
    );
    let handles: Vec<_> = (0..6)
        .map(|_| {
            let c = client.clone();
            thread::spawn(move || c.complete(&GenRequest::new("", "x")).unwrap())
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    assert_eq!(server.seen.lock().unwrap().len(), 6);
    assert_eq!(server.peak.load(Ordering::SeqCst), 2);
}

#[test]
fn invalid_request_never_reaches_the_server() {
    let server = serve(vec![ok("x")], Duration::ZERO);
    let client = HttpTextGenerator::new(&server.url, None, "m").unwrap();
    let mut req = GenRequest::new("", "x");
    req.max_tokens = 0;
    assert!(matches!(client.complete(&req), Err(TextGenError::InvalidRequest(_))));
    assert!(server.seen.lock().unwrap().is_empty());
}
