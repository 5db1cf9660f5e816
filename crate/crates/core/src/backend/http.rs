//! Generic completion endpoint client: `POST {base_url}/completions` with
//! `{model, prompt, max_tokens, temperature, stop}`, answer in
//! `choices[0].text`.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::{BackendError, CompletionBackend, CompletionRequest};
use crate::dataset::ExampleRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 5,
            initial_backoff: Duration::from_secs(1),
            max_backoff: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based), doubling up to the cap.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 2u32.saturating_pow(attempt.saturating_sub(1));
        self.initial_backoff.saturating_mul(factor).min(self.max_backoff)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub requests_per_minute: u32,
    pub in_flight: usize,
    pub request_timeout: Duration,
    pub retry: RetryPolicy,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            base_url: "https://api.openai.com/v1".into(),
            model: "code-davinci-002".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            requests_per_minute: 20,
            in_flight: 1,
            request_timeout: Duration::from_secs(60),
            retry: RetryPolicy::default(),
        }
    }
}

/// Spaces request starts at least `60 / rpm` seconds apart across threads.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next_slot: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn per_minute(rpm: u32) -> Self {
        let interval = if rpm == 0 {
            Duration::ZERO
        } else {
            Duration::from_secs(60) / rpm
        };
        RateLimiter {
            interval,
            next_slot: Mutex::new(None),
        }
    }

    pub fn acquire(&self) {
        let wait = {
            let mut slot = self.next_slot.lock().unwrap_or_else(|e| e.into_inner());
            let now = Instant::now();
            let start = slot.map_or(now, |s| s.max(now));
            *slot = Some(start + self.interval);
            start - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

#[derive(Serialize)]
struct Body<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
    stop: &'a [String],
}

#[derive(Deserialize)]
struct Choice {
    text: String,
}

#[derive(Deserialize)]
struct Reply {
    choices: Vec<Choice>,
}

enum Failure {
    Transient(String, Option<Duration>),
    Fatal(String),
}

pub struct HttpBackend {
    config: HttpConfig,
    client: Client,
    api_key: Option<String>,
    limiter: RateLimiter,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        if api_key.is_none() {
            log::warn!("{} is not set; sending unauthenticated requests", config.api_key_env);
        }
        Ok(HttpBackend {
            limiter: RateLimiter::per_minute(config.requests_per_minute),
            config,
            client,
            api_key,
        })
    }

    fn endpoint(&self) -> String {
        format!("{}/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, request: &CompletionRequest) -> Result<String, Failure> {
        self.limiter.acquire();
        let body = Body {
            model: &self.config.model,
            prompt: &request.prompt,
            max_tokens: request.max_tokens,
            temperature: request.temperature,
            stop: &request.stop,
        };
        let mut builder = self.client.post(self.endpoint()).json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|e| Failure::Transient(e.to_string(), None))?;
        let status = response.status();
        if status.is_success() {
            let reply: Reply = response
                .json()
                .map_err(|e| Failure::Fatal(format!("malformed response: {e}")))?;
            return reply
                .choices
                .into_iter()
                .next()
                .map(|c| c.text)
                .ok_or_else(|| Failure::Fatal("response has no choices".into()));
        }
        let retry_after = response
            .headers()
            .get(reqwest::header::RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let text = response.text().unwrap_or_default();
        let message = format!("HTTP {status}: {}", text.chars().take(200).collect::<String>());
        if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            Err(Failure::Transient(message, retry_after))
        } else {
            Err(Failure::Fatal(message))
        }
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, example: &ExampleRecord, request: &CompletionRequest) -> Result<String, BackendError> {
        request.validate()?;
        let policy = self.config.retry;
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(request) {
                Ok(text) => return Ok(text),
                Err(Failure::Fatal(message)) => {
                    return Err(BackendError::Http {
                        example_id: example.example_id.clone(),
                        attempts,
                        message,
                    })
                }
                Err(Failure::Transient(message, retry_after)) => {
                    if attempts > policy.max_retries {
                        return Err(BackendError::Http {
                            example_id: example.example_id.clone(),
                            attempts,
                            message,
                        });
                    }
                    let delay = retry_after
                        .unwrap_or_else(|| policy.backoff(attempts))
                        .min(policy.max_backoff);
                    log::debug!("{}: retry {attempts} in {delay:?}: {message}", example.example_id);
                    std::thread::sleep(delay);
                }
            }
        }
    }

    fn label(&self) -> String {
        format!("http:{}", self.config.model)
    }

    fn max_in_flight(&self) -> usize {
        self.config.in_flight.max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Arc;

    fn record() -> ExampleRecord {
        ExampleRecord {
            example_id: "e0003".into(),
            db_id: "db".into(),
            question: "q".into(),
            gold_sql: "SELECT 1".into(),
            template_id: None,
        }
    }

    fn fast_config(base_url: String) -> HttpConfig {
        HttpConfig {
            base_url,
            requests_per_minute: 0,
            request_timeout: Duration::from_secs(5),
            api_key_env: "TEXTSQL_TEST_NO_SUCH_KEY".into(),
            retry: RetryPolicy {
                max_retries: 3,
                initial_backoff: Duration::from_millis(5),
                max_backoff: Duration::from_millis(20),
            },
            ..HttpConfig::default()
        }
    }

    /// Serves `statuses` in order, one connection each, and counts requests.
    fn serve(statuses: Vec<(u16, &'static str)>) -> (String, Arc<AtomicU32>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicU32::new(0));
        let counter = hits.clone();
        std::thread::spawn(move || {
            for (status, body) in statuses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut length = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        length = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; length];
                reader.read_exact(&mut buf).unwrap();
                let sent: serde_json::Value = serde_json::from_slice(&buf).unwrap();
                assert_eq!(sent["max_tokens"], 200);
                assert_eq!(sent["temperature"], 0.0);
                counter.fetch_add(1, Ordering::SeqCst);
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (format!("http://{addr}/v1"), hits)
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        let (url, hits) = serve(vec![
            (500, "{}"),
            (429, "{}"),
            (200, r#"{"choices":[{"text":" name FROM singer"}]}"#),
        ]);
        let backend = HttpBackend::new(fast_config(url)).unwrap();
        let out = backend
            .complete(&record(), &CompletionRequest::greedy("-- q\nSELECT"))
            .unwrap();
        assert_eq!(out, " name FROM singer");
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, hits) = serve(vec![(400, r#"{"error":"bad"}"#)]);
        let backend = HttpBackend::new(fast_config(url)).unwrap();
        let err = backend
            .complete(&record(), &CompletionRequest::greedy("p"))
            .unwrap_err();
        assert!(matches!(err, BackendError::Http { attempts: 1, .. }), "{err}");
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn unreachable_server_exhausts_retries() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let backend = HttpBackend::new(fast_config(format!("http://127.0.0.1:{port}"))).unwrap();
        let err = backend
            .complete(&record(), &CompletionRequest::greedy("p"))
            .unwrap_err();
        match err {
            BackendError::Http {
                example_id,
                attempts,
                ..
            } => {
                assert_eq!(example_id, "e0003");
                assert_eq!(attempts, 4);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy::default();
        assert_eq!(p.backoff(1), Duration::from_secs(1));
        assert_eq!(p.backoff(3), Duration::from_secs(4));
        assert_eq!(p.backoff(10), Duration::from_secs(30));
    }

    #[test]
    fn limiter_spaces_requests() {
        let limiter = RateLimiter::per_minute(6000);
        let start = Instant::now();
        for _ in 0..4 {
            limiter.acquire();
        }
        assert!(start.elapsed() >= Duration::from_millis(30));
    }
}
