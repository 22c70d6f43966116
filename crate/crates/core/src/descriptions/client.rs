use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{DescriptionEntry, PromptKind};
use crate::error::{Error, Result};

/// Source of description lists for one (class, template) request.
///
/// Implementations return the response already split into items, one
/// description or phrase per entry, in response order.
pub trait GenerationClient: Sync {
    fn complete(&self, kind: PromptKind, class_name: &str, prompt: &str) -> Result<Vec<String>>;

    /// Upper bound on concurrent requests.
    fn max_parallel(&self) -> usize {
        1
    }
}

/// Replays pre-generated descriptions from a fixture file.
#[derive(Debug, Clone, Default)]
pub struct FixtureClient {
    entries: BTreeMap<String, DescriptionEntry>,
}

impl FixtureClient {
    pub fn new(entries: BTreeMap<String, DescriptionEntry>) -> Self {
        FixtureClient { entries }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(FixtureClient::new(super::load_description_entries(path)?))
    }
}

impl GenerationClient for FixtureClient {
    fn complete(&self, kind: PromptKind, class_name: &str, _prompt: &str) -> Result<Vec<String>> {
        let entry = self
            .entries
            .get(class_name)
            .ok_or_else(|| Error::ClientUnavailable(format!("fixture has no entry for '{class_name}'")))?;
        Ok(match kind {
            PromptKind::Generic => vec![entry.generic.clone()],
            PromptKind::State => entry.states.clone(),
            PromptKind::Scene => entry.scenes.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RemoteClientConfig {
    /// Chat-completions URL.
    pub endpoint: String,
    /// Name of the environment variable holding the API key; unset means
    /// no `Authorization` header.
    pub api_key_env: Option<String>,
    pub model: String,
    pub timeout_secs: u64,
    pub max_parallel: usize,
}

impl Default for RemoteClientConfig {
    fn default() -> Self {
        RemoteClientConfig {
            endpoint: "http://127.0.0.1:8080/v1/chat/completions".into(),
            api_key_env: Some("OVPROTO_API_KEY".into()),
            model: "gpt-4o".into(),
            timeout_secs: 60,
            max_parallel: 4,
        }
    }
}

/// Client for an OpenAI-compatible chat-completions endpoint.
///
/// The reply text is split into one item per non-empty line with list
/// markers and surrounding quotes stripped (see [`parse_list_response`]).
pub struct RemoteClient {
    config: RemoteClientConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl RemoteClient {
    pub fn new(config: RemoteClientConfig) -> Result<Self> {
        if config.max_parallel == 0 {
            return Err(Error::InvalidConfig("max_parallel must be >= 1".into()));
        }
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                Error::ClientUnavailable(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let agent = http_agent(config.timeout_secs);
        Ok(RemoteClient {
            config,
            api_key,
            agent,
        })
    }
}

pub(super) fn http_agent(timeout_secs: u64) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(timeout_secs.max(1))))
        .http_status_as_error(true)
        .build()
        .into()
}

pub(super) fn post_json(
    agent: &ureq::Agent,
    endpoint: &str,
    api_key: Option<&str>,
    body: &serde_json::Value,
) -> Result<serde_json::Value> {
    let mut req = agent.post(endpoint);
    if let Some(key) = api_key {
        req = req.header("Authorization", &format!("Bearer {key}"));
    }
    let mut resp = req
        .send_json(body)
        .map_err(|e| Error::ClientUnavailable(format!("{endpoint}: {e}")))?;
    resp.body_mut()
        .read_json()
        .map_err(|e| Error::MalformedResponse(format!("{endpoint}: {e}")))
}

impl GenerationClient for RemoteClient {
    fn complete(&self, kind: PromptKind, class_name: &str, prompt: &str) -> Result<Vec<String>> {
        let body = json!({
            "model": self.config.model,
            "temperature": 0,
            "messages": [{ "role": "user", "content": prompt }],
        });
        let reply = post_json(&self.agent, &self.config.endpoint, self.api_key.as_deref(), &body)?;
        let content = reply
            .pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .ok_or_else(|| {
                Error::MalformedResponse(format!(
                    "{} reply for '{class_name}' has no choices[0].message.content",
                    kind.label()
                ))
            })?;
        let items = parse_list_response(content);
        if items.is_empty() {
            return Err(Error::MalformedResponse(format!(
                "empty {} reply for '{class_name}'",
                kind.label()
            )));
        }
        Ok(items)
    }

    fn max_parallel(&self) -> usize {
        self.config.max_parallel
    }
}

/// Splits a free-form list reply into items: one per non-empty line, with
/// bullets (`-`, `*`, `•`), enumerations (`1.`, `2)`) and wrapping quotes
/// removed.
pub fn parse_list_response(text: &str) -> Vec<String> {
    text.lines()
        .filter_map(|line| {
            let mut s = line.trim();
            s = s.trim_start_matches(['-', '*', '•']).trim_start();
            let digits = s.len() - s.trim_start_matches(|c: char| c.is_ascii_digit()).len();
            if digits > 0 {
                if let Some(rest) = s[digits..].strip_prefix(['.', ')']) {
                    s = rest.trim_start();
                }
            }
            let s = s.trim_matches(|c| c == '"' || c == '\'' || c == '“' || c == '”').trim();
            (!s.is_empty()).then(|| s.to_string())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_common_list_shapes() {
        let text = "1. A sleeping cat curls up.\n2) \"A sitting cat looks alert.\"\n\n- cat + sofa\n* cat + windowsill\n• 'cat + garden'";
        assert_eq!(
            parse_list_response(text),
            vec![
                "A sleeping cat curls up.",
                "A sitting cat looks alert.",
                "cat + sofa",
                "cat + windowsill",
                "cat + garden",
            ]
        );
        assert_eq!(parse_list_response("  \n \n"), Vec::<String>::new());
        assert_eq!(parse_list_response("3 cats on a mat"), vec!["3 cats on a mat"]);
    }

    #[test]
    fn fixture_client_unknown_class() {
        let client = FixtureClient::default();
        assert!(matches!(
            client.complete(PromptKind::State, "cat", "p"),
            Err(Error::ClientUnavailable(_))
        ));
    }

    #[test]
    fn remote_client_requires_key_variable() {
        let cfg = RemoteClientConfig {
            api_key_env: Some("OVPROTO_TEST_SURELY_UNSET_VAR".into()),
            ..Default::default()
        };
        assert!(matches!(RemoteClient::new(cfg), Err(Error::ClientUnavailable(_))));
    }
}
