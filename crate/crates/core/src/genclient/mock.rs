//! Deterministic stand-in for a chat-completion endpoint.
//!
//! Responses are a pure function of the request body, so pipelines run
//! against the mock are reproducible end to end. [`MockServer`] speaks the
//! HTTP wire format; [`MockBackend`] skips the socket for unit tests. Both
//! log every request and can inject transport failures or empty outputs.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use sha2::{Digest, Sha256};

use super::client::{
    ChatBackend, ChatChoice, ChatMessage, ChatRequest, ChatResponse, Completion, FinishReason,
    TransportError,
};
use super::prompts::{extract_latent_parts, extract_rephrase_document};

const FILLER: [&str; 16] = [
    "notably", "the", "article", "describes", "context", "which", "implies", "further",
    "background", "because", "therefore", "detail", "reasoning", "summary", "overall", "claim",
];

/// The canned answer for `request`.
pub fn mock_completion(request: &ChatRequest) -> Completion {
    let user = request.user().unwrap_or("");
    let digest = Sha256::digest(user.as_bytes());
    let pick = |i: usize| digest[i % digest.len()] as usize;

    let mut words: Vec<String> = Vec::new();
    if let Some(doc) = extract_rephrase_document(user) {
        words.push("Rephrased:".into());
        let mut body: Vec<&str> = doc.split_whitespace().collect();
        body.reverse();
        words.extend(body.iter().map(|w| w.to_string()));
    } else if let Some((_, suffix)) = extract_latent_parts(user) {
        words.push("Thought:".into());
        words.extend(suffix.split_whitespace().take(3).map(str::to_string));
    } else {
        words.extend(user.split_whitespace().take(8).map(str::to_string));
    }
    let extra = 1 + pick(0) % 12;
    words.extend((0..extra).map(|i| FILLER[pick(i + 1) % FILLER.len()].to_string()));

    let cap = request.max_tokens as usize;
    let finish_reason = if words.len() > cap {
        words.truncate(cap);
        FinishReason::Length
    } else {
        FinishReason::Stop
    };
    Completion {
        text: words.join(" "),
        finish_reason,
    }
}

/// Fault injection shared by both mock transports.
#[derive(Debug, Default)]
pub struct MockFaults {
    /// First N requests fail with HTTP 503.
    pub fail_first: AtomicUsize,
    /// Next N successful requests return empty text.
    pub empty_first: AtomicUsize,
}

impl MockFaults {
    pub fn new(fail_first: usize, empty_first: usize) -> Self {
        Self {
            fail_first: AtomicUsize::new(fail_first),
            empty_first: AtomicUsize::new(empty_first),
        }
    }

    fn take(counter: &AtomicUsize) -> bool {
        counter
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok()
    }

    fn apply(&self, request: &ChatRequest) -> Result<Completion, TransportError> {
        if Self::take(&self.fail_first) {
            return Err(TransportError::Status {
                status: 503,
                body: "injected failure".into(),
            });
        }
        let mut c = mock_completion(request);
        if Self::take(&self.empty_first) {
            c.text.clear();
        }
        Ok(c)
    }
}

/// In-process mock backend.
#[derive(Default)]
pub struct MockBackend {
    pub faults: MockFaults,
    log: Mutex<Vec<ChatRequest>>,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_faults(faults: MockFaults) -> Self {
        Self {
            faults,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.log.lock().unwrap().clone()
    }

    pub fn request_count(&self) -> usize {
        self.log.lock().unwrap().len()
    }
}

impl ChatBackend for MockBackend {
    fn model(&self) -> &str {
        "mock-echo"
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, TransportError> {
        self.log.lock().unwrap().push(request.clone());
        self.faults.apply(request)
    }
}

/// Mock chat-completion endpoint on `127.0.0.1` with an ephemeral port.
pub struct MockServer {
    server: Arc<tiny_http::Server>,
    url: String,
    log: Arc<Mutex<Vec<ChatRequest>>>,
    pub faults: Arc<MockFaults>,
    workers: Vec<JoinHandle<()>>,
}

impl MockServer {
    pub fn start() -> std::io::Result<Self> {
        Self::start_with(MockFaults::default(), 4)
    }

    pub fn start_with(faults: MockFaults, threads: usize) -> std::io::Result<Self> {
        let server = tiny_http::Server::http("127.0.0.1:0")
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        let port = server
            .server_addr()
            .to_ip()
            .map(|a| a.port())
            .ok_or_else(|| std::io::Error::other("mock server has no ip address"))?;
        let server = Arc::new(server);
        let log = Arc::new(Mutex::new(Vec::new()));
        let faults = Arc::new(faults);
        let workers = (0..threads.max(1))
            .map(|_| {
                let server = Arc::clone(&server);
                let log = Arc::clone(&log);
                let faults = Arc::clone(&faults);
                std::thread::spawn(move || serve(&server, &log, &faults))
            })
            .collect();
        Ok(Self {
            server,
            url: format!("http://127.0.0.1:{port}"),
            log,
            faults,
            workers,
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.log.lock().unwrap().clone()
    }

    pub fn request_count(&self) -> usize {
        self.log.lock().unwrap().len()
    }

    pub fn clear_log(&self) {
        self.log.lock().unwrap().clear();
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn serve(server: &tiny_http::Server, log: &Mutex<Vec<ChatRequest>>, faults: &MockFaults) {
    while let Ok(mut req) = server.recv() {
        let mut body = String::new();
        let parsed = req
            .as_reader()
            .read_to_string(&mut body)
            .ok()
            .and_then(|_| serde_json::from_str::<ChatRequest>(&body).ok());
        let json = tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
        let response = match parsed {
            None => tiny_http::Response::from_string("{\"error\":\"bad request\"}")
                .with_status_code(400),
            Some(chat) => {
                log.lock().unwrap().push(chat.clone());
                match faults.apply(&chat) {
                    Err(TransportError::Status { status, body }) => {
                        tiny_http::Response::from_string(body).with_status_code(status)
                    }
                    Err(e) => tiny_http::Response::from_string(e.to_string()).with_status_code(500),
                    Ok(c) => {
                        let resp = ChatResponse {
                            choices: vec![ChatChoice {
                                message: ChatMessage {
                                    role: "assistant".into(),
                                    content: c.text,
                                },
                                finish_reason: Some(
                                    match c.finish_reason {
                                        FinishReason::Stop => "stop",
                                        FinishReason::Length => "length",
                                    }
                                    .into(),
                                ),
                            }],
                        };
                        tiny_http::Response::from_string(serde_json::to_string(&resp).unwrap())
                    }
                }
            }
        };
        let _ = req.respond(response.with_header(json));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genclient::client::HttpBackend;

    fn request(user: &str, max_tokens: u32) -> ChatRequest {
        ChatRequest {
            model: "m".into(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: user.into(),
            }],
            temperature: 1.0,
            max_tokens,
        }
    }

    #[test]
    fn completion_is_deterministic_and_capped() {
        let r = request("one two three four five six seven eight nine", 1024);
        assert_eq!(mock_completion(&r), mock_completion(&r));
        let capped = mock_completion(&request("one two three four", 2));
        assert_eq!(capped.text.split_whitespace().count(), 2);
        assert_eq!(capped.finish_reason, FinishReason::Length);
    }

    #[test]
    fn http_round_trip_and_fault_injection() {
        let server = MockServer::start_with(MockFaults::new(1, 0), 2).unwrap();
        let client = HttpBackend::new(server.url(), "mock", None);
        let r = request("hello world", 64);
        assert!(matches!(
            client.complete(&r),
            Err(TransportError::Status { status: 503, .. })
        ));
        let ok = client.complete(&r).unwrap();
        assert_eq!(ok, mock_completion(&r));
        assert_eq!(server.request_count(), 2);
    }
}
