//! HTTP providers against a scripted local stub server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use hybridrag::gateway::{ChatProvider, ChatRequest, Embedder, HttpChat, HttpEmbedder, ProviderError, RetryPolicy};
use serde_json::{json, Value};

struct Seen {
    path: String,
    auth: Option<String>,
    body: Value,
}

/// Serves `replies` (status, body) in order, one per connection.
fn stub(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>, JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let handle = std::thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
            let (mut len, mut auth) = (0usize, None);
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                let h = h.trim_end();
                if h.is_empty() {
                    break;
                }
                let (name, value) = h.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => len = value.trim().parse().unwrap(),
                    "authorization" => auth = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut buf = vec![0u8; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen {
                path,
                auth,
                body: serde_json::from_slice(&buf).unwrap_or(Value::Null),
            });
            let mut out = stream;
            write!(
                out,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, seen, handle)
}

fn completion(text: &str, finish: &str) -> String {
    json!({
        "choices": [{"message": {"role": "assistant", "content": text}, "finish_reason": finish}],
        "usage": {"prompt_tokens": 11, "completion_tokens": 3},
    })
    .to_string()
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        max_retries: 3,
        backoff_ms: 1,
    }
}

fn request() -> ChatRequest {
    ChatRequest::new("system text", "user text").temperature(0.0).max_tokens(16)
}

#[test]
fn retries_transient_failures_then_succeeds() {
    let (url, seen, h) = stub(vec![
        (503, "{}".into()),
        (503, "{}".into()),
        (200, completion("hello", "stop")),
    ]);
    let chat = HttpChat::new(url, "m1".into(), Some("k123".into()), 5_000, 2, fast_retry()).unwrap();
    let resp = chat.complete(&request()).unwrap();
    h.join().unwrap();
    assert_eq!(resp.text, "hello");
    assert_eq!(resp.attempts, 3);
    assert_eq!((resp.prompt_tokens, resp.completion_tokens), (11, 3));
    let u = chat.usage();
    assert_eq!((u.calls, u.failures, u.retries), (1, 0, 2));

    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    let last = &seen[2];
    assert_eq!(last.path, "/v1/chat/completions");
    assert_eq!(last.auth.as_deref(), Some("Bearer k123"));
    assert_eq!(last.body["model"], "m1");
    assert_eq!(last.body["messages"][0], json!({"role": "system", "content": "system text"}));
    assert_eq!(last.body["messages"][1], json!({"role": "user", "content": "user text"}));
    assert_eq!(last.body["max_tokens"], 16);
}

#[test]
fn gives_up_after_the_retry_budget() {
    let (url, seen, h) = stub(vec![(500, "{}".into()), (502, "{}".into())]);
    let policy = RetryPolicy {
        max_retries: 1,
        backoff_ms: 1,
    };
    let chat = HttpChat::new(url, "m".into(), None, 5_000, 1, policy).unwrap();
    let err = chat.complete(&request()).unwrap_err();
    h.join().unwrap();
    assert!(matches!(err, ProviderError::ProviderUnavailable { attempts: 2, .. }), "{err:?}");
    assert_eq!(seen.lock().unwrap().len(), 2);
    assert_eq!(chat.usage().failures, 1);
}

#[test]
fn unauthorized_is_not_retried() {
    let (url, seen, h) = stub(vec![(401, r#"{"error":"bad key"}"#.into())]);
    let chat = HttpChat::new(url, "m".into(), Some("nope".into()), 5_000, 1, fast_retry()).unwrap();
    let err = chat.complete(&request()).unwrap_err();
    h.join().unwrap();
    assert!(matches!(err, ProviderError::AuthError(_)), "{err:?}");
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn client_error_is_rejected_without_retry() {
    let (url, _, h) = stub(vec![(400, "bad request".into())]);
    let chat = HttpChat::new(url, "m".into(), None, 5_000, 1, fast_retry()).unwrap();
    let err = chat.complete(&request()).unwrap_err();
    h.join().unwrap();
    assert_eq!(
        err,
        ProviderError::Rejected {
            status: 400,
            body: "bad request".into()
        }
    );
}

#[test]
fn truncated_completion_is_an_error() {
    let (url, _, h) = stub(vec![(200, completion("partial", "length"))]);
    let chat = HttpChat::new(url, "m".into(), None, 5_000, 1, fast_retry()).unwrap();
    let err = chat.complete(&request()).unwrap_err();
    h.join().unwrap();
    assert_eq!(err, ProviderError::ResponseTooLong { max_tokens: 16 });
}

#[test]
fn malformed_body_is_reported() {
    let (url, _, h) = stub(vec![(200, r#"{"choices": []}"#.into())]);
    let chat = HttpChat::new(url, "m".into(), None, 5_000, 1, fast_retry()).unwrap();
    let err = chat.complete(&request()).unwrap_err();
    h.join().unwrap();
    assert!(matches!(err, ProviderError::MalformedResponse(_)), "{err:?}");
}

#[test]
fn invalid_request_never_reaches_the_network() {
    let chat = HttpChat::new("http://127.0.0.1:9".into(), "m".into(), None, 500, 1, fast_retry()).unwrap();
    let err = chat.complete(&ChatRequest::new("", "user")).unwrap_err();
    assert!(matches!(err, ProviderError::InvalidRequest(_)));
    assert_eq!(chat.usage().calls, 0);
}

#[test]
fn embeddings_are_reordered_and_normalized() {
    let body = json!({
        "data": [
            {"index": 1, "embedding": [0.0, 2.0]},
            {"index": 0, "embedding": [3.0, 4.0]},
        ],
        "usage": {"prompt_tokens": 4},
    })
    .to_string();
    let (url, seen, h) = stub(vec![(200, body)]);
    let embed = HttpEmbedder::new(url, "e".into(), None, Some(2), 5_000, 1, fast_retry()).unwrap();
    let v = embed.embed(&["first".into(), "second".into()]).unwrap();
    h.join().unwrap();
    assert_eq!(v[0].values(), &[0.6, 0.8]);
    assert_eq!(v[1].values(), &[0.0, 1.0]);
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].path, "/v1/embeddings");
    assert_eq!(seen[0].body["input"], json!(["first", "second"]));
}

#[test]
fn embedding_dimension_is_enforced() {
    let body = json!({"data": [{"index": 0, "embedding": [1.0, 0.0, 0.0]}]}).to_string();
    let (url, _, h) = stub(vec![(200, body)]);
    let embed = HttpEmbedder::new(url, "e".into(), None, Some(2), 5_000, 1, fast_retry()).unwrap();
    let err = embed.embed(&["x".into()]).unwrap_err();
    h.join().unwrap();
    assert_eq!(err, ProviderError::DimMismatch { expected: 2, found: 3 });
}
