//! Remote-encoder client against a minimal in-process HTTP stub.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use dhce::events::{EncodeError, RemoteEncoder, TextEncoder};

#[derive(Clone, Copy)]
enum StubMode {
    Normal,
    WrongDim,
    ServerError,
    /// Drops the first `n` connections without answering.
    FailFirst(usize),
}

/// Stub vector for a text: entry j is text length + j.
fn stub_vector(text: &str, dim: usize) -> Vec<f64> {
    (0..dim).map(|j| (text.len() + j) as f64).collect()
}

fn handle(mut stream: TcpStream, dim: usize, mode: StubMode) {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 1024];
    let header_end = loop {
        match stream.read(&mut chunk) {
            Ok(0) => return,
            Ok(n) => {
                buf.extend_from_slice(&chunk[..n]);
                if let Some(pos) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
                    break pos + 4;
                }
            }
            Err(_) => return,
        }
    };
    let head = String::from_utf8_lossy(&buf[..header_end]).to_string();
    let content_length = head
        .lines()
        .find_map(|l| {
            let (name, value) = l.split_once(':')?;
            name.eq_ignore_ascii_case("content-length")
                .then(|| value.trim().parse::<usize>().ok())?
        })
        .unwrap_or(0);
    while buf.len() < header_end + content_length {
        match stream.read(&mut chunk) {
            Ok(0) => break,
            Ok(n) => buf.extend_from_slice(&chunk[..n]),
            Err(_) => return,
        }
    }
    let body = String::from_utf8_lossy(&buf[header_end..]).to_string();

    let respond = |stream: &mut TcpStream, status: &str, json: &str| {
        let _ = write!(
            stream,
            "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{json}",
            json.len()
        );
    };

    if matches!(mode, StubMode::ServerError) && head.starts_with("POST") {
        respond(&mut stream, "500 Internal Server Error", "{\"oops\":true}");
        return;
    }
    if head.starts_with("GET /info") {
        respond(&mut stream, "200 OK", &format!("{{\"dim\":{dim}}}"));
    } else if head.starts_with("POST /encode") {
        let req: serde_json::Value = serde_json::from_str(&body).unwrap();
        let texts: Vec<String> = req["texts"]
            .as_array()
            .unwrap()
            .iter()
            .map(|t| t.as_str().unwrap().to_string())
            .collect();
        let out_dim = if matches!(mode, StubMode::WrongDim) {
            dim + 1
        } else {
            dim
        };
        let vectors: Vec<Vec<f64>> = texts.iter().map(|t| stub_vector(t, out_dim)).collect();
        let json = serde_json::to_string(&serde_json::json!({ "vectors": vectors })).unwrap();
        respond(&mut stream, "200 OK", &json);
    } else {
        respond(&mut stream, "404 Not Found", "{}");
    }
}

fn spawn_stub(dim: usize, mode: StubMode) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let dropped = Arc::new(AtomicUsize::new(0));
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            if let StubMode::FailFirst(n) = mode {
                if dropped.fetch_add(1, Ordering::SeqCst) < n {
                    drop(stream);
                    continue;
                }
            }
            handle(stream, dim, mode);
        }
    });
    format!("http://{addr}")
}

fn connect(url: &str, retries: u32) -> Result<RemoteEncoder, EncodeError> {
    RemoteEncoder::connect(url, Duration::from_millis(2000), retries)
}

#[test]
fn fetches_dim_and_passes_vectors_through() {
    let url = spawn_stub(6, StubMode::Normal);
    let enc = connect(&url, 0).unwrap();
    assert_eq!(enc.dim(), 6);
    let out = enc.encode(&["ab", "wxyz"]).unwrap();
    assert_eq!(out.rows(), 2);
    assert_eq!(out.row(0), &stub_vector("ab", 6)[..]);
    assert_eq!(out.row(1), &stub_vector("wxyz", 6)[..]);
}

#[test]
fn order_is_preserved_for_each_request() {
    let url = spawn_stub(8, StubMode::Normal);
    let enc = connect(&url, 0).unwrap();
    let out = enc.encode(&["lengthy text here", "x", "medium"]).unwrap();
    assert_eq!(out.row(0)[0], 17.0);
    assert_eq!(out.row(1)[0], 1.0);
    assert_eq!(out.row(2)[0], 6.0);
}

#[test]
fn wrong_dimension_is_a_fatal_config_error() {
    let url = spawn_stub(4, StubMode::WrongDim);
    let enc = connect(&url, 0).unwrap();
    match enc.encode(&["hello"]) {
        Err(EncodeError::DimensionMismatch { expected: 4, got: 5 }) => {}
        other => panic!("expected DimensionMismatch, got {other:?}"),
    }
}

#[test]
fn non_2xx_reports_status_and_body_excerpt() {
    let url = spawn_stub(4, StubMode::ServerError);
    let enc = connect(&url, 0).unwrap();
    match enc.encode(&["hello"]) {
        Err(EncodeError::Http {
            status: 500,
            body_excerpt,
        }) => assert!(body_excerpt.contains("oops")),
        other => panic!("expected Http error, got {other:?}"),
    }
}

#[test]
fn unreachable_endpoint_is_a_retriable_transport_error() {
    // Bind and immediately drop so the port is unused.
    let addr = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap()
    };
    match connect(&format!("http://{addr}"), 1) {
        Err(EncodeError::Transport { .. }) => {}
        other => panic!("expected Transport error, got {other:?}"),
    }
}

#[test]
fn retries_recover_from_dropped_connections() {
    let url = spawn_stub(4, StubMode::FailFirst(2));
    let enc = connect(&url, 3).unwrap();
    assert_eq!(enc.dim(), 4);
}
