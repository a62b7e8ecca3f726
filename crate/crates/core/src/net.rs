//! Small JSON-over-HTTP helper shared by the remote annotator, judge, and
//! critic clients: bounded retries with linear backoff, bearer credentials
//! from the environment, and a configurable timeout.

use serde_json::Value;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("request to {url} failed after {attempts} attempts: {last}")]
    Exhausted {
        url: String,
        attempts: u32,
        last: String,
    },
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub max_attempts: u32,
    pub backoff: Duration,
    pub timeout: Duration,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff: Duration::from_millis(250),
            timeout: Duration::from_secs(30),
        }
    }
}

/// POSTs a JSON body and parses a JSON response, retrying transient
/// failures up to the configured attempt budget.
pub fn post_json(
    url: &str,
    body: &Value,
    bearer: Option<&str>,
    config: &HttpConfig,
) -> Result<Value, NetError> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(config.timeout))
        .build()
        .into();
    let mut last = String::new();
    for attempt in 1..=config.max_attempts {
        let mut req = agent.post(url);
        if let Some(token) = bearer {
            req = req.header("authorization", &format!("Bearer {token}"));
        }
        match req.send_json(body) {
            Ok(mut resp) => match resp.body_mut().read_json::<Value>() {
                Ok(v) => return Ok(v),
                Err(e) => last = format!("bad response body: {e}"),
            },
            Err(e) => last = e.to_string(),
        }
        if attempt < config.max_attempts {
            std::thread::sleep(config.backoff * attempt);
        }
    }
    Err(NetError::Exhausted {
        url: url.to_string(),
        attempts: config.max_attempts,
        last,
    })
}
