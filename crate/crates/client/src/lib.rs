//! Thin HTTP client for probing remote suspect models.
//!
//! Speaks the wire protocol from `provlab_core::wire` and implements the
//! core `SuspectModel` trait, so identification code treats local
//! checkpoints and remote endpoints identically. Transport failures are
//! retried with a short backoff; HTTP errors and malformed bodies are not.

use provlab_core::eval::{SuspectError, SuspectModel};
use provlab_core::wire::{GenerateRequest, GenerateResponse, GENERATE_PATH, TOKEN_ENV};
use std::time::Duration;

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub timeout: Duration,
    /// Extra attempts after the first on transport-level failures.
    pub retries: usize,
    pub backoff: Duration,
    /// Bearer token; defaults to the `PROVLAB_TOKEN` environment variable.
    pub auth_token: Option<String>,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            timeout: Duration::from_secs(10),
            retries: 2,
            backoff: Duration::from_millis(200),
            auth_token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()),
        }
    }
}

pub struct RemoteSuspect {
    endpoint: String,
    agent: ureq::Agent,
    config: ClientConfig,
}

impl RemoteSuspect {
    /// `endpoint` is the server base URL, e.g. `http://localhost:8080`.
    pub fn new(endpoint: impl Into<String>, config: ClientConfig) -> RemoteSuspect {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteSuspect {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            agent,
            config,
        }
    }

    pub fn with_defaults(endpoint: impl Into<String>) -> RemoteSuspect {
        RemoteSuspect::new(endpoint, ClientConfig::default())
    }

    fn url(&self) -> String {
        format!("{}{}", self.endpoint, GENERATE_PATH)
    }

    fn attempt(&self, req: &GenerateRequest) -> Result<String, SuspectError> {
        let mut builder = self.agent.post(self.url());
        if let Some(token) = &self.config.auth_token {
            builder = builder.header("Authorization", format!("Bearer {token}"));
        }
        let mut response = builder
            .send_json(req)
            .map_err(|e| SuspectError::Transport(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            let body = response
                .body_mut()
                .read_to_string()
                .unwrap_or_default();
            return Err(SuspectError::Transport(format!(
                "endpoint returned {status}: {}",
                body.chars().take(200).collect::<String>()
            )));
        }
        let parsed: GenerateResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| SuspectError::Transport(format!("malformed response body: {e}")))?;
        Ok(parsed.text)
    }
}

/// POST /generate with retry on transport failures.
pub fn remote_generate(
    suspect: &RemoteSuspect,
    prompt: &str,
    max_new: usize,
) -> Result<String, SuspectError> {
    let req = GenerateRequest {
        prompt: prompt.to_string(),
        max_tokens: max_new,
    };
    let mut last = None;
    for attempt in 0..=suspect.config.retries {
        match suspect.attempt(&req) {
            Ok(text) => return Ok(text),
            Err(e) => {
                last = Some(e);
                if attempt < suspect.config.retries {
                    std::thread::sleep(suspect.config.backoff);
                }
            }
        }
    }
    Err(last.expect("at least one attempt"))
}

impl SuspectModel for RemoteSuspect {
    fn generate(&self, prompt: &str, max_new: usize) -> Result<String, SuspectError> {
        remote_generate(self, prompt, max_new)
    }

    fn describe(&self) -> String {
        format!("remote:{}", self.endpoint)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    /// One-shot HTTP responder with a canned status/body.
    fn canned_server(status_line: &'static str, body: &'static str) -> (String, std::thread::JoinHandle<()>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming().take(3) {
                let mut stream = stream.unwrap();
                let mut buf = [0u8; 4096];
                let _ = stream.read(&mut buf);
                let resp = format!(
                    "{status_line}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.write_all(resp.as_bytes());
            }
        });
        (format!("http://{addr}"), handle)
    }

    fn no_retry() -> ClientConfig {
        ClientConfig {
            timeout: Duration::from_secs(2),
            retries: 0,
            backoff: Duration::from_millis(1),
            auth_token: None,
        }
    }

    #[test]
    fn empty_text_passes_through() {
        let (url, _h) = canned_server("HTTP/1.1 200 OK", r#"{"text": ""}"#);
        let suspect = RemoteSuspect::new(url, no_retry());
        assert_eq!(remote_generate(&suspect, "p", 4).unwrap(), "");
    }

    #[test]
    fn non_200_is_transport_error() {
        let (url, _h) = canned_server("HTTP/1.1 500 Internal Server Error", "boom");
        let suspect = RemoteSuspect::new(url, no_retry());
        let err = remote_generate(&suspect, "p", 4).unwrap_err();
        assert!(matches!(err, SuspectError::Transport(_)), "{err}");
        assert!(err.to_string().contains("500"), "{err}");
    }

    #[test]
    fn malformed_json_is_transport_error() {
        let (url, _h) = canned_server("HTTP/1.1 200 OK", r#"{"not_text": 1}"#);
        let suspect = RemoteSuspect::new(url, no_retry());
        let err = remote_generate(&suspect, "p", 4).unwrap_err();
        assert!(err.to_string().contains("malformed"), "{err}");
    }

    #[test]
    fn unreachable_endpoint_is_transport_error() {
        // nothing listens on this port
        let suspect = RemoteSuspect::new("http://127.0.0.1:9", no_retry());
        let err = remote_generate(&suspect, "p", 4).unwrap_err();
        assert!(matches!(err, SuspectError::Transport(_)));
    }
}
