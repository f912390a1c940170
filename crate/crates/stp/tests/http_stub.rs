use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use stp::http::{HttpBackend, HttpConfig};
use stp_core::backend::{Backend, BackendError, BackendRequest, Inputs, Purpose};

struct Seen {
    auth: Option<String>,
    body: serde_json::Value,
}

/// Serves one canned response per connection, in order.
fn stub(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>, JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    let handle = std::thread::spawn(move || {
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut len = 0;
            let mut auth = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    match k.to_ascii_lowercase().as_str() {
                        "content-length" => len = v.trim().parse().unwrap(),
                        "authorization" => auth = Some(v.trim().to_string()),
                        _ => {}
                    }
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen { auth, body: serde_json::from_slice(&buf).unwrap() });
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, seen, handle)
}

fn ok_body(text: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": 11, "completion_tokens": 3},
    })
    .to_string()
}

fn backend(url: &str, key_env: &str) -> HttpBackend {
    std::env::set_var(key_env, "sk-test");
    let mut c = HttpConfig::new(url, "test-model");
    c.api_key_env = key_env.into();
    c.backoff_ms = 10;
    c.max_retries = 2;
    c.timeout_secs = 5;
    HttpBackend::new(c).unwrap()
}

fn request() -> BackendRequest {
    BackendRequest {
        purpose: Purpose::UpdatePc,
        static_prefix: "You pick the next step.".into(),
        dynamic_payload: "## Moves\nNext -> 2".into(),
        inputs: Inputs::default(),
    }
}

#[test]
fn retries_after_rate_limit() {
    let (url, seen, h) = stub(vec![(429, "{}".into()), (200, ok_body("```move\n{}\n```"))]);
    let reply = backend(&url, "STP_TEST_KEY_A").call(&request()).unwrap();
    h.join().unwrap();
    assert_eq!(reply.text, "```move\n{}\n```");
    let usage = reply.usage.unwrap();
    assert_eq!((usage.prompt_tokens, usage.completion_tokens), (Some(11), Some(3)));
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 2);
    assert_eq!(seen[1].auth.as_deref(), Some("Bearer sk-test"));
    let body = &seen[1].body;
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][0]["content"], "You pick the next step.");
    assert_eq!(body["messages"][1]["role"], "user");
    assert_eq!(body["messages"][1]["content"], "## Moves\nNext -> 2");
}

#[test]
fn unauthorized_is_not_retried() {
    let (url, seen, h) = stub(vec![(401, "{}".into())]);
    let err = backend(&url, "STP_TEST_KEY_B").call(&request()).unwrap_err();
    h.join().unwrap();
    assert!(matches!(err, BackendError::Auth(_)), "{err:?}");
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn server_errors_exhaust_retries() {
    let (url, seen, h) = stub(vec![(500, "{}".into()), (502, "{}".into()), (503, "{}".into())]);
    let err = backend(&url, "STP_TEST_KEY_C").call(&request()).unwrap_err();
    h.join().unwrap();
    assert!(matches!(err, BackendError::Transport(_)), "{err:?}");
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn malformed_body() {
    let (url, _, h) = stub(vec![(200, "{\"choices\": []}".into())]);
    let err = backend(&url, "STP_TEST_KEY_D").call(&request()).unwrap_err();
    h.join().unwrap();
    assert!(matches!(err, BackendError::MalformedResponse(_)), "{err:?}");
}

#[test]
fn missing_key_fails_before_any_request() {
    let mut c = HttpConfig::new("http://127.0.0.1:9/", "m");
    c.api_key_env = "STP_TEST_KEY_UNSET".into();
    std::env::remove_var("STP_TEST_KEY_UNSET");
    assert!(matches!(HttpBackend::new(c), Err(BackendError::Auth(_))));
}

#[test]
fn config_rejects_unknown_fields() {
    let ok: HttpConfig = serde_json::from_str(r#"{"endpoint": "http://x", "model": "m"}"#).unwrap();
    assert_eq!(ok.max_retries, 3);
    assert!(serde_json::from_str::<HttpConfig>(r#"{"endpoint": "x", "model": "m", "modle": 1}"#).is_err());
}
