//! Chat-completions backend for real endpoints.
//!
//! One request per rollout: the question plus the subset's frames as base64
//! data URLs, temperature and token limits applied. Transient transport
//! failures and 429/5xx statuses are retried with exponential backoff (3
//! attempts, base 1 s); other statuses fail fast with endpoint diagnostics.
//! Batched generation runs a bounded number of in-flight requests (default 4)
//! and returns results in request order.
//!
//! Endpoint configuration comes from `TTRL_ENDPOINT_URL`, `TTRL_API_KEY`, and
//! `TTRL_MODEL_NAME`.

use crate::backend::{AnswerBackend, BackendError, BackendOutput, FrameSource, RolloutRequest};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

pub const ENDPOINT_URL_VAR: &str = "TTRL_ENDPOINT_URL";
pub const API_KEY_VAR: &str = "TTRL_API_KEY";
pub const MODEL_NAME_VAR: &str = "TTRL_MODEL_NAME";

/// Rough per-image token budget used for the pre-flight prompt size check;
/// text is estimated at four characters per token.
pub const IMAGE_TOKEN_ESTIMATE: usize = 256;

#[derive(Debug, Clone)]
pub struct EndpointConfig {
    pub url: String,
    pub api_key: String,
    pub model: String,
}

impl EndpointConfig {
    pub fn from_env() -> Result<Self, BackendError> {
        let fetch = |var: &'static str| {
            std::env::var(var).ok().filter(|v| !v.is_empty()).ok_or(BackendError::MissingEnv(var))
        };
        Ok(Self {
            url: fetch(ENDPOINT_URL_VAR)?,
            api_key: fetch(API_KEY_VAR)?,
            model: fetch(MODEL_NAME_VAR)?,
        })
    }
}

pub struct RemoteBackend {
    endpoint: EndpointConfig,
    agent: ureq::Agent,
    pub max_prompt_tokens: usize,
    pub max_response_tokens: usize,
    /// Total attempts per request (first try plus retries).
    pub attempts: u32,
    pub base_backoff: Duration,
    /// Bounded in-flight requests for batched generation.
    pub parallelism: usize,
}

impl RemoteBackend {
    pub fn new(endpoint: EndpointConfig) -> Self {
        let agent = ureq::Agent::new_with_config(
            ureq::Agent::config_builder()
                .timeout_global(Some(Duration::from_secs(120)))
                .http_status_as_error(false)
                .build(),
        );
        Self {
            endpoint,
            agent,
            max_prompt_tokens: 7524,
            max_response_tokens: 1024,
            attempts: 3,
            base_backoff: Duration::from_secs(1),
            parallelism: 4,
        }
    }

    pub fn from_env() -> Result<Self, BackendError> {
        Ok(Self::new(EndpointConfig::from_env()?))
    }

    fn estimate_prompt_tokens(&self, question: &str, image_count: usize) -> usize {
        question.chars().count().div_ceil(4) + image_count * IMAGE_TOKEN_ESTIMATE
    }

    fn image_part(path: &Path) -> Result<Value, BackendError> {
        let mime = match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("jpg") || ext.eq_ignore_ascii_case("jpeg") => {
                "image/jpeg"
            }
            Some(ext) if ext.eq_ignore_ascii_case("png") => "image/png",
            _ => return Err(BackendError::UnsupportedImage(path.to_path_buf())),
        };
        let bytes = std::fs::read(path).map_err(|e| BackendError::ImageRead {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        if bytes.is_empty() {
            return Err(BackendError::EmptyImage(path.to_path_buf()));
        }
        Ok(json!({
            "type": "image_url",
            "image_url": { "url": format!("data:{mime};base64,{}", BASE64.encode(&bytes)) },
        }))
    }

    fn send_once(&self, body: &Value) -> Result<String, RetryClass> {
        let response = self
            .agent
            .post(&self.endpoint.url)
            .header("Authorization", &format!("Bearer {}", self.endpoint.api_key))
            .send_json(body)
            .map_err(|e| {
                RetryClass::Retryable(BackendError::Transport {
                    url: self.endpoint.url.clone(),
                    detail: e.to_string(),
                })
            })?;
        let status = response.status().as_u16();
        let mut body = response.into_body();
        if !(200..300).contains(&status) {
            let detail = body.read_to_string().unwrap_or_default();
            let error = BackendError::Endpoint {
                url: self.endpoint.url.clone(),
                status,
                detail: detail.chars().take(512).collect(),
            };
            return if status == 429 || (500..600).contains(&status) {
                Err(RetryClass::Retryable(error))
            } else {
                Err(RetryClass::Fatal(error))
            };
        }
        let value: Value = body
            .read_json()
            .map_err(|e| RetryClass::Fatal(BackendError::MalformedResponse(e.to_string())))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| {
                RetryClass::Fatal(BackendError::MalformedResponse(
                    "response carries no choices[0].message.content string".into(),
                ))
            })
    }

    /// One chat completion with retry/backoff. Returns the response text
    /// verbatim and the total latency in milliseconds.
    pub fn remote_generate(
        &self,
        question: &str,
        images: &[PathBuf],
        temperature: f64,
    ) -> Result<(String, u64), BackendError> {
        let estimated = self.estimate_prompt_tokens(question, images.len());
        if estimated > self.max_prompt_tokens {
            return Err(BackendError::PromptTooLarge {
                estimated,
                limit: self.max_prompt_tokens,
            });
        }
        let mut content = vec![json!({ "type": "text", "text": question })];
        for path in images {
            content.push(Self::image_part(path)?);
        }
        let body = json!({
            "model": self.endpoint.model,
            "temperature": temperature,
            "max_tokens": self.max_response_tokens,
            "messages": [ { "role": "user", "content": content } ],
        });

        let started = Instant::now();
        let mut last_error = None;
        for attempt in 0..self.attempts {
            if attempt > 0 {
                std::thread::sleep(self.base_backoff * 2u32.pow(attempt - 1));
            }
            match self.send_once(&body) {
                Ok(text) => return Ok((text, started.elapsed().as_millis() as u64)),
                Err(RetryClass::Retryable(error)) => last_error = Some(error),
                Err(RetryClass::Fatal(error)) => return Err(error),
            }
        }
        Err(last_error.expect("at least one attempt ran"))
    }

    fn generate_one(&self, request: &RolloutRequest<'_>) -> Result<BackendOutput, BackendError> {
        let FrameSource::Images(paths) = &request.sample.frames else {
            return Err(BackendError::UnsupportedSample(
                "remote backend needs image frame sources".into(),
            ));
        };
        let images: Vec<PathBuf> = request
            .subset
            .iter()
            .map(|&t| {
                paths.get(t).cloned().ok_or_else(|| {
                    BackendError::UnsupportedSample(format!(
                        "subset references frame {t} outside the {}-frame manifest",
                        paths.len()
                    ))
                })
            })
            .collect::<Result<_, _>>()?;
        let (text, latency_ms) =
            self.remote_generate(&request.sample.question, &images, request.temperature)?;
        Ok(BackendOutput { text, latency_ms: Some(latency_ms), policy_sample: None })
    }
}

enum RetryClass {
    Retryable(BackendError),
    Fatal(BackendError),
}

impl AnswerBackend for RemoteBackend {
    fn generate(&mut self, request: &RolloutRequest<'_>) -> Result<BackendOutput, BackendError> {
        self.generate_one(request)
    }

    fn generate_many(
        &mut self,
        requests: &[RolloutRequest<'_>],
    ) -> Vec<Result<BackendOutput, BackendError>> {
        let workers = self.parallelism.max(1).min(requests.len().max(1));
        if workers <= 1 || requests.len() <= 1 {
            return requests.iter().map(|r| self.generate_one(r)).collect();
        }
        let cursor = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<BackendOutput, BackendError>>>> =
            Mutex::new((0..requests.len()).map(|_| None).collect());
        let this: &RemoteBackend = self;
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let index = cursor.fetch_add(1, Ordering::Relaxed);
                    if index >= requests.len() {
                        break;
                    }
                    let result = this.generate_one(&requests[index]);
                    slots.lock().expect("result mutex poisoned")[index] = Some(result);
                });
            }
        });
        slots
            .into_inner()
            .expect("result mutex poisoned")
            .into_iter()
            .map(|slot| slot.expect("every request index was processed"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_backend(url: String) -> RemoteBackend {
        let mut backend = RemoteBackend::new(EndpointConfig {
            url,
            api_key: "test-key".into(),
            model: "test-model".into(),
        });
        backend.base_backoff = Duration::from_millis(5);
        backend
    }

    #[test]
    fn prompt_estimate_blocks_oversize_requests_before_transmission() {
        // Unroutable URL: reaching the transport layer would error differently.
        let backend = test_backend("http://127.0.0.1:1/v1/chat/completions".into());
        let question = "q".repeat(40_000);
        match backend.remote_generate(&question, &[], 1.0) {
            Err(BackendError::PromptTooLarge { estimated, limit }) => {
                assert!(estimated > limit);
                assert_eq!(limit, 7524);
            }
            other => panic!("expected PromptTooLarge, got {other:?}"),
        }
    }

    #[test]
    fn empty_image_is_a_precondition_error_naming_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame_0000.png");
        std::fs::write(&path, b"").unwrap();
        let backend = test_backend("http://127.0.0.1:1/v1/chat/completions".into());
        match backend.remote_generate("q", std::slice::from_ref(&path), 1.0) {
            Err(BackendError::EmptyImage(p)) => assert_eq!(p, path),
            other => panic!("expected EmptyImage, got {other:?}"),
        }
    }

    #[test]
    fn unsupported_extension_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame_0000.gif");
        std::fs::write(&path, b"junk").unwrap();
        let backend = test_backend("http://127.0.0.1:1/v1/chat/completions".into());
        assert!(matches!(
            backend.remote_generate("q", &[path], 1.0),
            Err(BackendError::UnsupportedImage(_))
        ));
    }

    #[test]
    fn env_config_requires_all_three_variables() {
        // Serialize access to the process environment within this test.
        let vars = [ENDPOINT_URL_VAR, API_KEY_VAR, MODEL_NAME_VAR];
        let saved: Vec<Option<String>> = vars.iter().map(|v| std::env::var(v).ok()).collect();
        for var in vars {
            std::env::remove_var(var);
        }
        assert!(matches!(
            EndpointConfig::from_env(),
            Err(BackendError::MissingEnv(ENDPOINT_URL_VAR))
        ));
        std::env::set_var(ENDPOINT_URL_VAR, "http://127.0.0.1:9/chat");
        std::env::set_var(API_KEY_VAR, "k");
        assert!(matches!(
            EndpointConfig::from_env(),
            Err(BackendError::MissingEnv(MODEL_NAME_VAR))
        ));
        std::env::set_var(MODEL_NAME_VAR, "m");
        assert!(EndpointConfig::from_env().is_ok());
        for (var, value) in vars.iter().zip(saved) {
            match value {
                Some(v) => std::env::set_var(var, v),
                None => std::env::remove_var(var),
            }
        }
    }
}
