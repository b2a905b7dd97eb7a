use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use revchain::backend::{Backend, BackendConfig, BackendError, BackendKind, HttpBackend, RetryPolicy};
use revchain::prompts::Conversation;

#[derive(Clone)]
enum Reply {
    Status(u16, &'static str),
    Stall(Duration),
}

type RequestLog = Arc<Mutex<Vec<(Option<String>, String)>>>;

/// Serves one canned reply per connection, recording request bodies and
/// authorization headers.
struct Server {
    url: String,
    requests: RequestLog,
}

fn read_request(stream: &mut TcpStream) -> (Option<String>, String) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut len = 0;
    let mut auth = None;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        let lower = line.to_ascii_lowercase();
        if let Some(v) = lower.strip_prefix("content-length:") {
            len = v.trim().parse().unwrap();
        }
        if lower.starts_with("authorization:") {
            auth = Some(line["authorization:".len()..].trim().to_string());
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    (auth, String::from_utf8(body).unwrap())
}

fn serve(replies: Vec<Reply>) -> Server {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&requests);
    thread::spawn(move || {
        for reply in replies {
            let Ok((mut stream, _)) = listener.accept() else { return };
            let req = read_request(&mut stream);
            log.lock().unwrap().push(req);
            match reply {
                Reply::Status(code, body) => {
                    let resp = format!(
                        "HTTP/1.1 {code} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                        body.len()
                    );
                    let _ = stream.write_all(resp.as_bytes());
                }
                Reply::Stall(d) => thread::sleep(d),
            }
        }
    });
    Server { url, requests }
}

const OK_BODY: &str = r#"{"choices":[{"message":{"role":"assistant","content":"neutral"}}]}"#;

fn config(url: &str) -> BackendConfig {
    BackendConfig {
        kind: BackendKind::Http,
        endpoint_url: url.to_string(),
        model_id: "test-model".into(),
        api_key_ref: String::new(),
        timeout: Duration::from_secs(5),
        requests_per_minute: 6000,
        ..Default::default()
    }
}

fn fast_retry(max_retries: u32) -> RetryPolicy {
    RetryPolicy { max_retries, initial: Duration::from_millis(5), ..Default::default() }
}

#[test]
fn retries_server_error_then_succeeds() {
    let server = serve(vec![Reply::Status(503, "{}"), Reply::Status(200, OK_BODY)]);
    let backend = HttpBackend::new(config(&server.url)).unwrap().with_retry_policy(fast_retry(3));
    let c = backend.complete(&Conversation::single_user("hello")).unwrap();
    assert_eq!(c.text, "neutral");
    assert_eq!(c.attempt_count, 2);
    assert!(!c.cached);
    let reqs = server.requests.lock().unwrap();
    assert_eq!(reqs.len(), 2);
    let body: serde_json::Value = serde_json::from_str(&reqs[0].1).unwrap();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["messages"][0]["content"], "hello");
    assert_eq!(reqs[0].0, None);
}

#[test]
fn rate_limit_exhaustion_reports_attempts() {
    let server = serve(vec![Reply::Status(429, "{}"); 3]);
    let backend = HttpBackend::new(config(&server.url)).unwrap().with_retry_policy(fast_retry(2));
    match backend.complete(&Conversation::single_user("hi")) {
        Err(BackendError::RateLimited { attempts, prompt_hash }) => {
            assert_eq!(attempts, 3);
            assert_eq!(prompt_hash.len(), 64);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn client_errors_and_bad_payloads_are_malformed() {
    let server = serve(vec![Reply::Status(400, r#"{"error":"bad"}"#), Reply::Status(200, r#"{"choices":[]}"#)]);
    let backend = HttpBackend::new(config(&server.url)).unwrap().with_retry_policy(fast_retry(3));
    let conv = Conversation::single_user("hi");
    assert!(matches!(backend.complete(&conv), Err(BackendError::MalformedResponse { .. })));
    match backend.complete(&conv) {
        Err(BackendError::MalformedResponse { message, .. }) => assert!(message.contains("choices.0.message.content")),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(server.requests.lock().unwrap().len(), 2);
}

#[test]
fn missing_credential_fails_before_any_request() {
    let server = serve(vec![Reply::Status(200, OK_BODY)]);
    let cfg = BackendConfig { api_key_ref: "REVCHAIN_TEST_KEY_THAT_IS_UNSET".into(), ..config(&server.url) };
    let backend = HttpBackend::new(cfg).unwrap();
    match backend.complete(&Conversation::single_user("hi")) {
        Err(BackendError::AuthMissing { var }) => assert_eq!(var, "REVCHAIN_TEST_KEY_THAT_IS_UNSET"),
        other => panic!("unexpected {other:?}"),
    }
    assert!(server.requests.lock().unwrap().is_empty());
}

#[test]
fn credential_is_sent_as_bearer_token() {
    std::env::set_var("REVCHAIN_TEST_KEY_SET", "sk-test");
    let server = serve(vec![Reply::Status(200, OK_BODY)]);
    let cfg = BackendConfig { api_key_ref: "REVCHAIN_TEST_KEY_SET".into(), ..config(&server.url) };
    HttpBackend::new(cfg).unwrap().complete(&Conversation::single_user("hi")).unwrap();
    assert_eq!(server.requests.lock().unwrap()[0].0.as_deref(), Some("Bearer sk-test"));
}

#[test]
fn timeouts_are_retried_then_reported() {
    let server = serve(vec![Reply::Stall(Duration::from_millis(800)); 2]);
    let cfg = BackendConfig { timeout: Duration::from_millis(150), ..config(&server.url) };
    let backend = HttpBackend::new(cfg).unwrap().with_retry_policy(fast_retry(1));
    assert!(matches!(backend.complete(&Conversation::single_user("hi")), Err(BackendError::Timeout { .. })));
}
