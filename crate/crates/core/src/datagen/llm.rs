//! Minimal chat-completion client for intention text generation.
//!
//! One request is sent per (scene, class). The system message carries the
//! perspective and disclosure constraints, the user message the scene
//! context. The first completion is split into one intention per line.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::DatagenError;
use crate::dataset::SceneGraph;

/// System prompt sent with every request.
pub const PROMPT_CONSTRAINTS: &str = "You are a helpful assistant in providing human intention towards each object. The intention is from a first-person perspective, in the format of 'I want / need / intend / ... to ...'. The intention must avoid mentioning synonyms, categories, locations, or attributes of the object.";

pub const ENV_ENDPOINT: &str = "IG_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "IG_LLM_API_KEY";
pub const ENV_MODEL: &str = "IG_LLM_MODEL";

/// Scene-context prompt: `In a <scene> with <objects>, what can you do with each object?`
pub fn scene_prompt(scene_type: &str, objects: &[&str]) -> String {
    format!(
        "In a {scene_type} with {}, what can you do with each object?",
        objects.join(", ")
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmClientConfig {
    pub endpoint: String,
    pub model_name: String,
    pub temperature: f64,
    pub texts_per_object: usize,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    /// First retry delay; doubles on every further attempt.
    pub backoff_ms: u64,
}

impl Default for LlmClientConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model_name: "gpt-4".into(),
            temperature: 1.2,
            texts_per_object: 6,
            api_key: None,
            timeout_secs: 60,
            max_retries: 3,
            backoff_ms: 500,
        }
    }
}

impl LlmClientConfig {
    /// Defaults overridden by `IG_LLM_ENDPOINT`, `IG_LLM_API_KEY` and `IG_LLM_MODEL`.
    pub fn from_env() -> Self {
        let mut cfg = Self::default();
        if let Ok(v) = std::env::var(ENV_ENDPOINT) {
            cfg.endpoint = v;
        }
        if let Ok(v) = std::env::var(ENV_MODEL) {
            cfg.model_name = v;
        }
        cfg.api_key = std::env::var(ENV_API_KEY).ok();
        cfg
    }

    pub fn validate(&self) -> Result<(), DatagenError> {
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(DatagenError::Rejected("temperature must be > 0".into()));
        }
        if self.texts_per_object == 0 {
            return Err(DatagenError::Rejected("texts_per_object must be >= 1".into()));
        }
        Ok(())
    }
}

pub struct LlmClient {
    cfg: LlmClientConfig,
    agent: ureq::Agent,
}

impl LlmClient {
    pub fn new(cfg: LlmClientConfig) -> Result<Self, DatagenError> {
        cfg.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { cfg, agent })
    }

    pub fn config(&self) -> &LlmClientConfig {
        &self.cfg
    }

    /// Request body for one (scene, class) pair.
    pub fn request_body(&self, scene: &SceneGraph, target_class: &str) -> Value {
        let objects = [target_class];
        json!({
            "model": self.cfg.model_name,
            "temperature": self.cfg.temperature,
            "messages": [
                {"role": "system", "content": PROMPT_CONSTRAINTS},
                {"role": "user", "content": scene_prompt(&scene.scene_type, &objects)},
            ],
        })
    }

    pub fn generate(&self, scene: &SceneGraph, target_class: &str) -> Result<Vec<String>, DatagenError> {
        let body = self.request_body(scene, target_class);
        let raw = self.post_with_retries(&body)?;
        let completion = first_completion(&raw).ok_or_else(|| DatagenError::Generation {
            message: "response has no completion text".into(),
            raw: raw.clone(),
        })?;
        let texts = split_completion(&completion, self.cfg.texts_per_object);
        if texts.is_empty() {
            return Err(DatagenError::Generation {
                message: "completion is empty".into(),
                raw,
            });
        }
        Ok(texts)
    }

    fn post_with_retries(&self, body: &Value) -> Result<String, DatagenError> {
        let mut last_err = String::new();
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                let delay = self.cfg.backoff_ms.saturating_mul(1 << (attempt - 1));
                std::thread::sleep(Duration::from_millis(delay));
            }
            let mut req = self.agent.post(&self.cfg.endpoint);
            if let Some(key) = &self.cfg.api_key {
                req = req.header("Authorization", format!("Bearer {key}"));
            }
            match req.send_json(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let text = resp.body_mut().read_to_string().unwrap_or_default();
                    if (200..300).contains(&status) {
                        return Ok(text);
                    }
                    last_err = format!("HTTP {status}: {text}");
                    // client errors other than rate limiting will not improve on retry
                    if status != 429 && status < 500 {
                        break;
                    }
                }
                Err(e) => last_err = e.to_string(),
            }
            log::warn!("LLM request attempt {} failed: {last_err}", attempt + 1);
        }
        Err(DatagenError::Transport {
            endpoint: self.cfg.endpoint.clone(),
            message: last_err,
        })
    }
}

/// `choices[0].message.content`, or `choices[0].text` for completion-style APIs.
pub fn first_completion(raw: &str) -> Option<String> {
    let v: Value = serde_json::from_str(raw).ok()?;
    let choice = v.get("choices")?.get(0)?;
    choice
        .pointer("/message/content")
        .or_else(|| choice.get("text"))
        .and_then(Value::as_str)
        .map(str::to_string)
}

/// One intention per non-empty line, list markers and quotes stripped.
pub fn split_completion(completion: &str, limit: usize) -> Vec<String> {
    completion
        .lines()
        .map(|line| {
            let t = line.trim();
            let t = t.trim_start_matches(|c: char| c.is_ascii_digit());
            let t = t.trim_start_matches(['.', ')', '-', '*', ':']).trim();
            t.trim_matches(['"', '\u{201c}', '\u{201d}']).trim().to_string()
        })
        .filter(|t| !t.is_empty())
        .take(limit)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;

    /// Serves `responses` in order, one per connection, and reports request bodies.
    fn mock_server(responses: Vec<(u16, String)>) -> (String, mpsc::Receiver<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut req = vec![0u8; len];
                reader.read_exact(&mut req).unwrap();
                tx.send(String::from_utf8(req).unwrap()).ok();
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        (format!("http://{addr}/v1/chat/completions"), rx)
    }

    fn scene() -> SceneGraph {
        SceneGraph {
            scene_id: "s0".into(),
            scene_type: "living room".into(),
            objects: vec![],
            class_counts: Default::default(),
        }
    }

    fn client(endpoint: String) -> LlmClient {
        LlmClient::new(LlmClientConfig {
            endpoint,
            backoff_ms: 1,
            timeout_secs: 5,
            ..Default::default()
        })
        .unwrap()
    }

    fn completion(content: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
    }

    #[test]
    fn fixed_completion_is_split_into_texts() {
        let content = (1..=8).map(|i| format!("{i}. I want to do thing number {i}")).collect::<Vec<_>>().join("\n");
        let (url, bodies) = mock_server(vec![(200, completion(&content))]);
        let texts = client(url).generate(&scene(), "sofa").unwrap();
        assert_eq!(texts.len(), 6);
        assert_eq!(texts[0], "I want to do thing number 1");

        let req: Value = serde_json::from_str(&bodies.recv().unwrap()).unwrap();
        assert_eq!(req["temperature"], 1.2);
        assert_eq!(req["messages"][0]["role"], "system");
        assert_eq!(req["messages"][0]["content"], PROMPT_CONSTRAINTS);
        assert_eq!(
            req["messages"][1]["content"],
            "In a living room with sofa, what can you do with each object?"
        );
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        let (url, _) = mock_server(vec![
            (503, "{}".into()),
            (500, "{}".into()),
            (200, completion("I want to host my guests")),
        ]);
        let texts = client(url).generate(&scene(), "sofa").unwrap();
        assert_eq!(texts, ["I want to host my guests"]);
    }

    #[test]
    fn empty_completion_is_a_generation_error() {
        let (url, _) = mock_server(vec![(200, completion("  \n "))]);
        match client(url).generate(&scene(), "sofa") {
            Err(DatagenError::Generation { raw, .. }) => assert!(raw.contains("choices")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unreachable_endpoint_is_a_transport_error() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let err = client(format!("http://127.0.0.1:{port}/x")).generate(&scene(), "sofa").unwrap_err();
        assert!(matches!(err, DatagenError::Transport { .. }), "{err}");
    }

    #[test]
    fn rejects_non_positive_temperature() {
        let cfg = LlmClientConfig {
            temperature: 0.0,
            ..Default::default()
        };
        assert!(LlmClient::new(cfg).is_err());
    }
}
