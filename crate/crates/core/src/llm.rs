//! LLM-based shaping selection: assemble the selection prompt from
//! historical results plus environment code, call a pluggable text provider
//! (live HTTP or an offline fixture), and parse the returned weight set.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::shaping::{FeatureId, SelectionMethod, ShapingSet, ShapingVector, NUM_FEATURES};
use crate::surrogate::ResultRecord;

/// Instruction template; `{P}` is replaced with the requested count.
const INSTRUCTION_TEMPLATE: &str = "\
Attached are two files.
1: Part of the code for the Overcooked reinforcement learning environment, which has multiple possible shaped rewards.
2: Training results from training populations of agents using specific reward shaping weights.

I want you to propose to me, given the attached 2 files, a set of {P} reward shaping weights (using the same 6 shaped infos as the results file). I want you to prioritize two things.
1: The diversity of your proposed reward shaping weights (not making them too similar to each other). You would prefer to propose a set of {P} weights that will create a set of {P} diverse policies.
2: The estimated performances of your proposed weights.

Propose to me a format like this:
[{params...}, {params...}, ...]";

/// A fully assembled prompt: instruction, then results, then code.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle {
    pub instruction_text: String,
    pub results_blob: String,
    pub env_code_blob: String,
    pub requested_count: usize,
}

impl PromptBundle {
    pub fn full_text(&self) -> String {
        format!(
            "{}\n\n[Attached results file:]\n\n{}\n\n[Attached Overcooked Environment Code]\n\n{}\n",
            self.instruction_text, self.results_blob, self.env_code_blob
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProviderMode {
    Live,
    Fixture,
}

/// Where completions come from. Live mode posts to a chat-completion-style
/// endpoint; Fixture mode replays a saved response file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model_name: String,
    pub api_key_env_var: String,
    pub timeout_secs: u64,
    pub mode: ProviderMode,
    pub fixture_path: Option<PathBuf>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            endpoint: String::new(),
            model_name: String::new(),
            api_key_env_var: "LLM_API_KEY".to_string(),
            timeout_secs: 60,
            mode: ProviderMode::Fixture,
            fixture_path: None,
        }
    }
}

/// Why a provider reply could not be used as a shaping set.
#[derive(Debug, Clone, PartialEq)]
pub enum ParseFailure {
    MissingArray { detail: String },
    WrongCount { got: usize, expected: usize },
    UnknownKey { index: usize, key: String },
    MissingKey { index: usize, key: &'static str },
    OutOfRange { index: usize, key: String, value: f64 },
    NonNumeric { index: usize, key: String },
}

impl fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseFailure::MissingArray { detail } => {
                write!(f, "no usable top-level JSON array ({detail})")
            }
            ParseFailure::WrongCount { got, expected } => {
                write!(f, "expected {expected} weight objects, found {got}")
            }
            ParseFailure::UnknownKey { index, key } => {
                write!(f, "object {index} has unknown key {key:?}")
            }
            ParseFailure::MissingKey { index, key } => {
                write!(f, "object {index} is missing key {key:?}")
            }
            ParseFailure::OutOfRange { index, key, value } => {
                write!(f, "object {index} key {key:?} value {value} outside [0, 10]")
            }
            ParseFailure::NonNumeric { index, key } => {
                write!(f, "object {index} key {key:?} is not numeric")
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("no result records to include in the prompt")]
    EmptyData,
    #[error("requested count must be at least 1, got {0}")]
    InvalidCount(usize),
    #[error("live mode needs an endpoint URL")]
    MissingEndpoint,
    #[error("live mode needs the API key variable {0} set")]
    MissingApiKey(String),
    #[error("fixture mode needs a readable fixture file: {0}")]
    BadFixture(String),
    #[error("provider unreachable: {0}")]
    ProviderUnreachable(String),
    #[error("provider timed out after {0} s")]
    ProviderTimeout(u64),
    #[error("provider reply had no text content: {0}")]
    BadResponse(String),
    #[error("no valid shaping set after {attempts} attempts; last failure: {last}")]
    ExhaustedRetries { attempts: usize, last: ParseFailure },
}

/// One provider reply, raw and parsed, with the trailing prose kept for audit.
#[derive(Debug, Clone)]
pub struct LlmResponse {
    pub raw_text: String,
    pub parsed: Result<ShapingSet, ParseFailure>,
    pub rationale_text: String,
}

/// Anything that can turn a prompt into completion text.
pub trait TextProvider {
    fn complete(&self, prompt: &str) -> Result<String, LlmError>;
}

/// Replays a saved response; never touches the network.
#[derive(Debug, Clone)]
pub struct FixtureProvider {
    text: String,
}

impl FixtureProvider {
    pub fn from_text(text: &str) -> Self {
        FixtureProvider { text: text.to_string() }
    }
}

impl TextProvider for FixtureProvider {
    fn complete(&self, _prompt: &str) -> Result<String, LlmError> {
        Ok(self.text.clone())
    }
}

/// Minimal chat-completion POST: {model, messages:[{role:"user", content}]},
/// reading the first text block found in the reply.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    endpoint: String,
    model_name: String,
    api_key: String,
    timeout_secs: u64,
}

impl TextProvider for HttpProvider {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let agent = ureq::AgentBuilder::new()
            .timeout(std::time::Duration::from_secs(self.timeout_secs))
            .build();
        let body = serde_json::json!({
            "model": self.model_name,
            "messages": [{"role": "user", "content": prompt}],
        });
        let response = agent
            .post(&self.endpoint)
            .set("authorization", &format!("Bearer {}", self.api_key))
            .set("content-type", "application/json")
            .send_string(&body.to_string());
        let response = match response {
            Ok(r) => r,
            Err(ureq::Error::Status(code, r)) => {
                let text = r.into_string().unwrap_or_default();
                return Err(LlmError::BadResponse(format!("status {code}: {text}")));
            }
            Err(ureq::Error::Transport(t)) => {
                let message = t.to_string();
                if message.contains("timed out") || message.contains("timeout") {
                    return Err(LlmError::ProviderTimeout(self.timeout_secs));
                }
                return Err(LlmError::ProviderUnreachable(message));
            }
        };
        let value: serde_json::Value = response
            .into_json()
            .map_err(|e| LlmError::BadResponse(e.to_string()))?;
        extract_text_block(&value).ok_or_else(|| LlmError::BadResponse(value.to_string()))
    }
}

/// First text block in a chat-style reply, tolerant of the two common shapes.
fn extract_text_block(value: &serde_json::Value) -> Option<String> {
    if let Some(text) = value["content"][0]["text"].as_str() {
        return Some(text.to_string());
    }
    if let Some(text) = value["choices"][0]["message"]["content"].as_str() {
        return Some(text.to_string());
    }
    value["content"].as_str().map(str::to_string)
}

/// A configured provider; the variant makes offline operation checkable.
pub enum Provider {
    Fixture(FixtureProvider),
    Http(HttpProvider),
}

impl TextProvider for Provider {
    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        match self {
            Provider::Fixture(p) => p.complete(prompt),
            Provider::Http(p) => p.complete(prompt),
        }
    }
}

pub fn provider_from_config(cfg: &ProviderConfig) -> Result<Provider, LlmError> {
    match cfg.mode {
        ProviderMode::Fixture => {
            let path = cfg
                .fixture_path
                .as_ref()
                .ok_or_else(|| LlmError::BadFixture("no fixture path configured".to_string()))?;
            let text = std::fs::read_to_string(path)
                .map_err(|e| LlmError::BadFixture(format!("{}: {e}", path.display())))?;
            Ok(Provider::Fixture(FixtureProvider::from_text(&text)))
        }
        ProviderMode::Live => {
            if cfg.endpoint.is_empty() {
                return Err(LlmError::MissingEndpoint);
            }
            let api_key = std::env::var(&cfg.api_key_env_var)
                .map_err(|_| LlmError::MissingApiKey(cfg.api_key_env_var.clone()))?;
            Ok(Provider::Http(HttpProvider {
                endpoint: cfg.endpoint.clone(),
                model_name: cfg.model_name.clone(),
                api_key,
                timeout_secs: cfg.timeout_secs,
            }))
        }
    }
}

/// Deterministic prompt assembly: instruction with the count substituted,
/// then the serialized records, then the code excerpt.
pub fn build_prompt(
    data: &[ResultRecord],
    env_code: &str,
    p: usize,
) -> Result<PromptBundle, LlmError> {
    if data.is_empty() {
        return Err(LlmError::EmptyData);
    }
    if p < 1 {
        return Err(LlmError::InvalidCount(p));
    }
    let instruction_text = INSTRUCTION_TEMPLATE.replace("{P}", &p.to_string());
    let results_blob = serde_json::to_string_pretty(data).expect("records serialize");
    Ok(PromptBundle {
        instruction_text,
        results_blob,
        env_code_blob: env_code.to_string(),
        requested_count: p,
    })
}

/// Extracts the first top-level `[...]` span, tolerating text (such as a
/// "json" fence marker) before it and prose after it.
fn find_array_span(raw: &str) -> Option<(usize, usize)> {
    let bytes = raw.as_bytes();
    let start = raw.find('[')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'[' => depth += 1,
            b']' => {
                depth -= 1;
                if depth == 0 {
                    return Some((start, i + 1));
                }
            }
            _ => {}
        }
    }
    None
}

/// Parses a provider reply: the first array must hold exactly `p` objects,
/// each with exactly the six canonical keys and in-range numeric values.
pub fn parse_response(raw: &str, p: usize) -> LlmResponse {
    let (parsed, rationale_text) = match find_array_span(raw) {
        None => (
            Err(ParseFailure::MissingArray { detail: "no bracketed span found".to_string() }),
            String::new(),
        ),
        Some((start, end)) => {
            let rationale = raw[end..].trim().to_string();
            (parse_array(&raw[start..end], p), rationale)
        }
    };
    LlmResponse { raw_text: raw.to_string(), parsed, rationale_text }
}

fn parse_array(json: &str, p: usize) -> Result<ShapingSet, ParseFailure> {
    let objects: Vec<serde_json::Map<String, serde_json::Value>> =
        serde_json::from_str(json)
            .map_err(|e| ParseFailure::MissingArray { detail: e.to_string() })?;
    if objects.len() != p {
        return Err(ParseFailure::WrongCount { got: objects.len(), expected: p });
    }
    let mut shapings = Vec::with_capacity(p);
    for (index, object) in objects.iter().enumerate() {
        for key in object.keys() {
            if FeatureId::from_name(key).is_none() {
                return Err(ParseFailure::UnknownKey { index, key: key.clone() });
            }
        }
        let mut weights = [0.0; NUM_FEATURES];
        for feature in FeatureId::ALL {
            let key = feature.name();
            let value = object
                .get(key)
                .ok_or(ParseFailure::MissingKey { index, key })?;
            let number = value
                .as_f64()
                .ok_or_else(|| ParseFailure::NonNumeric { index, key: key.to_string() })?;
            if !(0.0..=10.0).contains(&number) {
                return Err(ParseFailure::OutOfRange {
                    index,
                    key: key.to_string(),
                    value: number,
                });
            }
            weights[feature.index()] = number;
        }
        shapings.push(ShapingVector(weights));
    }
    Ok(ShapingSet::new(SelectionMethod::Llm, 0, shapings))
}

/// Prompt, complete, parse; on a parse failure the next attempt appends the
/// failure summary so the provider can correct itself. Provider transport
/// errors are not retried.
pub fn llm_select_with(
    provider: &dyn TextProvider,
    data: &[ResultRecord],
    env_code: &str,
    p: usize,
    max_retries: usize,
) -> Result<ShapingSet, LlmError> {
    let bundle = build_prompt(data, env_code, p)?;
    let base = bundle.full_text();
    let mut prompt = base.clone();
    let mut last_failure = None;
    for _attempt in 0..=max_retries {
        let raw = provider.complete(&prompt)?;
        let response = parse_response(&raw, p);
        match response.parsed {
            Ok(set) => return Ok(set),
            Err(failure) => {
                prompt = format!(
                    "{base}\n\nYour previous reply could not be used: {failure}. \
                     Reply again with exactly the requested JSON array."
                );
                last_failure = Some(failure);
            }
        }
    }
    Err(LlmError::ExhaustedRetries {
        attempts: max_retries + 1,
        last: last_failure.expect("at least one attempt ran"),
    })
}

pub fn llm_select(
    cfg: &ProviderConfig,
    data: &[ResultRecord],
    env_code: &str,
    p: usize,
    max_retries: usize,
) -> Result<ShapingSet, LlmError> {
    let provider = provider_from_config(cfg)?;
    llm_select_with(&provider, data, env_code, p, max_retries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shaping::{random_select, validate_shaping_set};
    use std::cell::Cell;

    fn fixture_path() -> PathBuf {
        PathBuf::from(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/fixtures/llm_response_appendix.txt"
        ))
    }

    fn records() -> Vec<ResultRecord> {
        crate::surrogate::load_results(&PathBuf::from(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/fixtures/results_41.json"
        )))
        .unwrap()
    }

    struct CountingProvider<'a> {
        calls: &'a Cell<usize>,
        replies: Vec<String>,
    }

    impl TextProvider for CountingProvider<'_> {
        fn complete(&self, _prompt: &str) -> Result<String, LlmError> {
            let n = self.calls.get();
            self.calls.set(n + 1);
            Ok(self.replies[n.min(self.replies.len() - 1)].clone())
        }
    }

    #[test]
    fn prompt_contains_priorities_and_all_records() {
        let data = records();
        let bundle = build_prompt(&data, "fn densify() {}", 10).unwrap();
        let text = bundle.full_text();
        assert!(text.contains("diversity of your proposed reward shaping weights"));
        assert!(text.contains("estimated performances of your proposed weights"));
        assert!(text.contains("[{params...}, {params...}, ...]"));
        assert!(text.contains("a set of 10 reward shaping weights"));
        for record in &data {
            assert!(text.contains(&record.folder), "missing record {}", record.folder);
        }
        assert!(text.contains("fn densify() {}"));
        // Instruction first, then results, then code.
        let results_at = text.find("[Attached results file:]").unwrap();
        let code_at = text.find("[Attached Overcooked Environment Code]").unwrap();
        assert!(results_at < code_at);
    }

    #[test]
    fn prompt_is_byte_stable_and_substitutes_count() {
        let data = records();
        let a = build_prompt(&data, "code", 10).unwrap().full_text();
        let b = build_prompt(&data, "code", 10).unwrap().full_text();
        assert_eq!(a, b);
        let three = build_prompt(&data, "code", 3).unwrap();
        assert!(three.instruction_text.contains("a set of 3 reward shaping weights"));
        assert!(three
            .instruction_text
            .contains("a set of 3 weights that will create a set of 3 diverse policies"));
        assert!(matches!(build_prompt(&[], "code", 10), Err(LlmError::EmptyData)));
        assert!(matches!(build_prompt(&data, "code", 0), Err(LlmError::InvalidCount(0))));
    }

    #[test]
    fn bundled_fixture_parses_to_the_documented_set() {
        let raw = std::fs::read_to_string(fixture_path()).unwrap();
        let response = parse_response(&raw, 10);
        let set = response.parsed.unwrap();
        assert_eq!(set.method, SelectionMethod::Llm);
        assert_eq!(set.shapings.len(), 10);
        assert!(validate_shaping_set(&set).is_empty());
        assert_eq!(set.shapings[0], ShapingVector([9.0, 10.0, 7.0, 9.0, 0.0, 2.0]));
        assert!(response.rationale_text.starts_with("Rationale:"));
    }

    #[test]
    fn parse_failures_carry_position_and_cause() {
        let raw = std::fs::read_to_string(fixture_path()).unwrap();
        // Wrong expected count.
        assert_eq!(
            parse_response(&raw, 9).parsed.unwrap_err(),
            ParseFailure::WrongCount { got: 10, expected: 9 }
        );
        // Out-of-range value names the key.
        let bad = raw.replace("\"SOUP_PICKUP_REWARD\": 7", "\"SOUP_PICKUP_REWARD\": 11");
        assert_eq!(
            parse_response(&bad, 10).parsed.unwrap_err(),
            ParseFailure::OutOfRange { index: 0, key: "SOUP_PICKUP_REWARD".to_string(), value: 11.0 }
        );
        // Unknown key.
        let bad = raw.replace("\"POT_DISTANCE_REW\": 0", "\"POT_DIST\": 0");
        assert!(matches!(
            parse_response(&bad, 10).parsed.unwrap_err(),
            ParseFailure::UnknownKey { index: 0, .. }
        ));
        // Missing key (object 1 this time).
        let bad = raw.replacen("    \"DISH_PICKUP_REWARD\": 3,\n", "", 1);
        assert_eq!(
            parse_response(&bad, 10).parsed.unwrap_err(),
            ParseFailure::MissingKey { index: 1, key: "DISH_PICKUP_REWARD" }
        );
        // Non-numeric value.
        let bad = raw.replace("\"DISH_PICKUP_REWARD\": 10", "\"DISH_PICKUP_REWARD\": \"ten\"");
        assert!(matches!(
            parse_response(&bad, 10).parsed.unwrap_err(),
            ParseFailure::NonNumeric { index: 0, .. }
        ));
        // No array at all.
        assert!(matches!(
            parse_response("I refuse.", 10).parsed.unwrap_err(),
            ParseFailure::MissingArray { .. }
        ));
    }

    #[test]
    fn response_format_round_trips_generated_sets() {
        for seed in 0..25 {
            let set = random_select(7, seed).unwrap();
            let body: Vec<String> = set
                .shapings
                .iter()
                .map(|s| {
                    let pairs: Vec<String> = FeatureId::ALL
                        .iter()
                        .map(|f| format!("\"{}\": {}", f.name(), s.get(*f)))
                        .collect();
                    format!("{{{}}}", pairs.join(", "))
                })
                .collect();
            let raw = format!("json[{}]\nSome trailing commentary.", body.join(",\n"));
            let response = parse_response(&raw, 7);
            let parsed = response.parsed.unwrap();
            assert_eq!(parsed.shapings, set.shapings);
            assert_eq!(response.rationale_text, "Some trailing commentary.");
        }
    }

    #[test]
    fn fixture_mode_selects_without_any_transport() {
        let cfg = ProviderConfig {
            fixture_path: Some(fixture_path()),
            ..ProviderConfig::default()
        };
        let provider = provider_from_config(&cfg).unwrap();
        // The configured provider is the replay variant: no HTTP client exists.
        assert!(matches!(provider, Provider::Fixture(_)));
        let set = llm_select(&cfg, &records(), "code", 10, 2).unwrap();
        assert_eq!(set.shapings.len(), 10);

        let missing = ProviderConfig {
            fixture_path: Some(PathBuf::from("/nonexistent/fixture.txt")),
            ..ProviderConfig::default()
        };
        assert!(matches!(provider_from_config(&missing), Err(LlmError::BadFixture(_))));
    }

    #[test]
    fn retry_appends_failure_and_stops_at_budget() {
        let calls = Cell::new(0);
        let good = std::fs::read_to_string(fixture_path()).unwrap();
        // First reply unusable, second fine: one retry consumed.
        let provider = CountingProvider {
            calls: &calls,
            replies: vec!["no array here".to_string(), good.clone()],
        };
        let set = llm_select_with(&provider, &records(), "code", 10, 2).unwrap();
        assert_eq!(set.shapings.len(), 10);
        assert_eq!(calls.get(), 2);

        // Zero retries with a bad fixture: ExhaustedRetries with the cause.
        let calls = Cell::new(0);
        let provider =
            CountingProvider { calls: &calls, replies: vec!["still no array".to_string()] };
        let err = llm_select_with(&provider, &records(), "code", 10, 0).unwrap_err();
        assert!(matches!(
            err,
            LlmError::ExhaustedRetries { attempts: 1, last: ParseFailure::MissingArray { .. } }
        ));
        assert_eq!(calls.get(), 1);
    }

    #[test]
    fn live_mode_validates_config_and_reports_unreachable() {
        let no_endpoint = ProviderConfig { mode: ProviderMode::Live, ..ProviderConfig::default() };
        assert!(matches!(provider_from_config(&no_endpoint), Err(LlmError::MissingEndpoint)));

        let no_key = ProviderConfig {
            mode: ProviderMode::Live,
            endpoint: "http://127.0.0.1:9/v1/messages".to_string(),
            api_key_env_var: "ZSC_TEST_KEY_THAT_IS_NOT_SET".to_string(),
            ..ProviderConfig::default()
        };
        assert!(matches!(provider_from_config(&no_key), Err(LlmError::MissingApiKey(_))));

        // A closed local port: unreachable before any parsing happens.
        std::env::set_var("ZSC_TEST_KEY_LLM_LIVE", "test-key");
        let cfg = ProviderConfig {
            mode: ProviderMode::Live,
            endpoint: "http://127.0.0.1:9/v1/messages".to_string(),
            api_key_env_var: "ZSC_TEST_KEY_LLM_LIVE".to_string(),
            timeout_secs: 2,
            ..ProviderConfig::default()
        };
        let err = llm_select(&cfg, &records(), "code", 10, 0).unwrap_err();
        assert!(
            matches!(err, LlmError::ProviderUnreachable(_) | LlmError::ProviderTimeout(_)),
            "{err:?}"
        );
    }

    #[test]
    fn chat_reply_shapes_are_tolerated() {
        let anthropic = serde_json::json!({"content": [{"type": "text", "text": "hello"}]});
        assert_eq!(extract_text_block(&anthropic).unwrap(), "hello");
        let openai =
            serde_json::json!({"choices": [{"message": {"role": "assistant", "content": "hi"}}]});
        assert_eq!(extract_text_block(&openai).unwrap(), "hi");
        assert!(extract_text_block(&serde_json::json!({"other": 1})).is_none());
    }
}
