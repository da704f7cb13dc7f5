//! Text-generation backends, the retry wrapper and bounded fan-out.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::hashing::digest_parts;
use crate::model::{CellCoord, Family, Stage, TokenUsage};
use crate::prompts::PromptPayload;

/// What a call is for. Mock backends key their output on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CallKind {
    Planning { attempt: u32 },
    Output { stage: Stage, slot: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct CallKey<'a> {
    pub cell: &'a CellCoord,
    pub kind: CallKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generation {
    pub text: String,
    pub usage: TokenUsage,
}

/// A text-generation service. Implementations must tolerate concurrent
/// calls.
pub trait GenerationBackend: Send + Sync {
    fn id(&self) -> &str;
    fn generate(&self, key: &CallKey<'_>, payload: &PromptPayload) -> Result<Generation>;
}

const MOCK_VOCAB: [&str; 48] = [
    "bright", "river", "signal", "quiet", "engine", "garden", "falling", "paper", "storm", "window",
    "silver", "harbor", "echo", "lantern", "orbit", "maple", "thread", "canyon", "pulse", "velvet",
    "copper", "meadow", "static", "ember", "glacier", "compass", "hollow", "prism", "tide", "fable",
    "marble", "drift", "beacon", "cinder", "quill", "mosaic", "summit", "willow", "rust", "atlas",
    "spark", "tunnel", "feather", "circuit", "dune", "anchor", "pocket", "lullaby",
];

/// Deterministic offline backend. Output text starts with a hex tag from a
/// keyed hash of (seed, cell, call, prompt bytes) and is padded with
/// vocabulary words to a length typical of the family. Usage is the
/// whitespace-word proxy. Planning calls return a valid five-strata plan.
#[derive(Debug, Clone)]
pub struct MockBackend {
    id: String,
    seed: u64,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        MockBackend {
            id: format!("mock-{seed}"),
            seed,
        }
    }

    fn words_for(family: Family) -> usize {
        match family {
            Family::Stories => 96,
            Family::Aut => 12,
            Family::Slogans => 5,
        }
    }

    fn stream(&self, key: &CallKey<'_>, payload: &PromptPayload) -> impl Iterator<Item = u8> {
        let (tag, a, b) = match key.kind {
            CallKind::Planning { attempt } => ("planning", attempt as u64, 0u64),
            CallKind::Output { stage, slot } => (stage.as_str(), slot as u64, 1),
        };
        let cell = key.cell.key();
        let root = digest_parts([
            &self.seed.to_le_bytes()[..],
            cell.as_bytes(),
            tag.as_bytes(),
            &a.to_le_bytes()[..],
            &b.to_le_bytes()[..],
            payload.system_text.as_bytes(),
            payload.user_text.as_bytes(),
        ]);
        (0u64..).flat_map(move |i| digest_parts([&root[..], &i.to_le_bytes()[..]]))
    }

    fn plan(&self, key: &CallKey<'_>, payload: &PromptPayload) -> String {
        let mut bytes = self.stream(key, payload);
        let mut word = || MOCK_VOCAB[bytes.next().unwrap() as usize % MOCK_VOCAB.len()];
        let strata: Vec<_> = (1..=5)
            .map(|id| {
                let (a, b) = (word(), word());
                json!({
                    "stratum_id": id,
                    "name": format!("{a} {b}"),
                    "description": format!("Responses built around {a} and {b}."),
                    "generation_instruction": format!("Center the response on {a} and {b}."),
                    "why_broad": format!("Many responses can involve {a}."),
                    "why_distinct": format!("No other direction uses {b}."),
                })
            })
            .collect();
        serde_json::to_string_pretty(&json!({ "task_id": key.cell.prompt_id, "strata": strata }))
            .expect("plan serializes")
    }
}

impl GenerationBackend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, key: &CallKey<'_>, payload: &PromptPayload) -> Result<Generation> {
        let text = match key.kind {
            CallKind::Planning { .. } => self.plan(key, payload),
            CallKind::Output { .. } => {
                let mut bytes = self.stream(key, payload);
                let tag: Vec<u8> = bytes.by_ref().take(4).collect();
                let mut words = vec![format!("idea-{}", hex::encode(tag))];
                for _ in 1..Self::words_for(key.cell.family) {
                    words.push(MOCK_VOCAB[bytes.next().unwrap() as usize % MOCK_VOCAB.len()].to_string());
                }
                words.join(" ")
            }
        };
        let prompt = format!("{}\n{}", payload.system_text, payload.user_text);
        let usage = TokenUsage::estimate(&prompt, &text);
        Ok(Generation { text, usage })
    }
}

/// One provider endpoint speaking the OpenAI chat-completions format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoint {
    pub url: String,
    /// Model name sent to the provider; defaults to the manifest model id.
    #[serde(default)]
    pub model: Option<String>,
    /// Environment variable holding the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
}

/// HTTP backend routing each manifest model id to its endpoint.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    endpoints: BTreeMap<String, (Endpoint, Option<String>)>,
}

impl HttpBackend {
    /// Resolves API keys from the environment up front.
    pub fn new(endpoints: BTreeMap<String, Endpoint>) -> Result<Self> {
        let mut resolved = BTreeMap::new();
        for (model, ep) in endpoints {
            let key = match &ep.api_key_env {
                Some(var) => Some(std::env::var(var).map_err(|_| {
                    Error::Config(format!("environment variable {var} for {model} is not set"))
                })?),
                None => None,
            };
            resolved.insert(model, (ep, key));
        }
        Ok(HttpBackend { endpoints: resolved })
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

impl GenerationBackend for HttpBackend {
    fn id(&self) -> &str {
        "http"
    }

    fn generate(&self, key: &CallKey<'_>, payload: &PromptPayload) -> Result<Generation> {
        let model_id = &key.cell.model_id;
        let (ep, api_key) = self
            .endpoints
            .get(model_id)
            .ok_or_else(|| Error::Backend(format!("no endpoint configured for {model_id}")))?;
        let body = json!({
            "model": ep.model.as_deref().unwrap_or(model_id),
            "messages": [
                { "role": "system", "content": payload.system_text },
                { "role": "user", "content": payload.user_text },
            ],
            "temperature": payload.temperature,
            "max_tokens": payload.max_output_tokens,
        });
        let mut req = ureq::post(&ep.url);
        if let Some(k) = api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| Error::Backend(format!("{model_id}: {e}")))?;
        let parsed: ChatResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::Backend(format!("{model_id}: bad response: {e}")))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Error::Backend(format!("{model_id}: empty completion")))?;
        let usage = match parsed.usage {
            Some(u) => TokenUsage::reported(u.prompt_tokens, u.completion_tokens),
            None => TokenUsage::estimate(&format!("{}\n{}", payload.system_text, payload.user_text), &text),
        };
        Ok(Generation { text, usage })
    }
}

/// Bounded retries with exponential backoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay_ms: 500,
        }
    }
}

impl RetryPolicy {
    pub fn no_delay() -> Self {
        RetryPolicy {
            base_delay_ms: 0,
            ..Self::default()
        }
    }
}

pub fn generate_with_retry(
    backend: &dyn GenerationBackend,
    key: &CallKey<'_>,
    payload: &PromptPayload,
    policy: RetryPolicy,
) -> Result<Generation> {
    let mut last = None;
    for attempt in 0..policy.max_attempts.max(1) {
        if attempt > 0 && policy.base_delay_ms > 0 {
            thread::sleep(Duration::from_millis(policy.base_delay_ms << (attempt - 1)));
        }
        match backend.generate(key, payload) {
            Ok(g) => return Ok(g),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Runs `f(0..count)` on up to `concurrency` threads. Results come back by
/// index. After the first error no new indices are started; unstarted
/// indices are `None`.
pub fn fan_out<T, F>(count: usize, concurrency: usize, f: F) -> Vec<Option<Result<T>>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let slots: Vec<Mutex<Option<Result<T>>>> = (0..count).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let workers = concurrency.max(1).min(count.max(1));
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if failed.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= count {
                    break;
                }
                let r = f(i);
                if r.is_err() {
                    failed.store(true, Ordering::SeqCst);
                }
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().unwrap()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Method, Strategy};
    use crate::prompts::PromptKit;

    fn cell(prompt: &str, family: Family) -> CellCoord {
        CellCoord::new("m", prompt, family, Method::Indep, Strategy::Neutral)
    }

    fn out(slot: usize) -> CallKind {
        CallKind::Output { stage: Stage::Evaluated, slot }
    }

    #[test]
    fn mock_is_deterministic_and_keyed() {
        let kit = PromptKit::reference();
        let c = cell("slogan_soda", Family::Slogans);
        let p = kit.build_prompt(&c, Stage::Evaluated, &crate::prompts::MethodContext::Empty).unwrap();
        let m = MockBackend::new(1);
        let a = m.generate(&CallKey { cell: &c, kind: out(0) }, &p).unwrap();
        let b = m.generate(&CallKey { cell: &c, kind: out(0) }, &p).unwrap();
        let other = m.generate(&CallKey { cell: &c, kind: out(1) }, &p).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.text, other.text);
        assert_eq!(a.text.split_whitespace().count(), 5);
        assert!(a.usage.is_proxy());
        assert_ne!(MockBackend::new(2).generate(&CallKey { cell: &c, kind: out(0) }, &p).unwrap(), a);
    }

    #[test]
    fn mock_plan_parses() {
        let kit = PromptKit::reference();
        let c = cell("story_horror", Family::Stories);
        let p = kit.build_planning_prompt("story_horror", 150).unwrap();
        let g = MockBackend::new(3)
            .generate(&CallKey { cell: &c, kind: CallKind::Planning { attempt: 0 } }, &p)
            .unwrap();
        let plan = crate::prompts::parse_strata(&g.text, Default::default()).unwrap();
        assert_eq!(plan.strata.len(), 5);
        assert_eq!(plan.task_id, "story_horror");
    }

    struct Flaky(AtomicUsize);

    impl GenerationBackend for Flaky {
        fn id(&self) -> &str {
            "flaky"
        }
        fn generate(&self, _: &CallKey<'_>, _: &PromptPayload) -> Result<Generation> {
            if self.0.fetch_add(1, Ordering::SeqCst) < 2 {
                Err(Error::Backend("transient".into()))
            } else {
                Ok(Generation { text: "ok".into(), usage: TokenUsage::reported(1, 1) })
            }
        }
    }

    #[test]
    fn retry_recovers_then_gives_up() {
        let c = cell("aut_key", Family::Aut);
        let p = PromptPayload { system_text: String::new(), user_text: String::new(), temperature: 1.0, max_output_tokens: 1 };
        let key = CallKey { cell: &c, kind: out(0) };
        let f = Flaky(AtomicUsize::new(0));
        assert!(generate_with_retry(&f, &key, &p, RetryPolicy::no_delay()).is_ok());
        let f = Flaky(AtomicUsize::new(0));
        let one = RetryPolicy { max_attempts: 2, base_delay_ms: 0 };
        assert!(generate_with_retry(&f, &key, &p, one).is_err());
    }

    #[test]
    fn fan_out_orders_by_index() {
        let r = fan_out(50, 7, |i| Ok(i * 2));
        assert!(r.iter().enumerate().all(|(i, v)| matches!(v, Some(Ok(x)) if *x == i * 2)));
        let r = fan_out(50, 1, |i| if i == 3 { Err(Error::Backend("x".into())) } else { Ok(i) });
        assert!(r[3].as_ref().unwrap().is_err());
        assert!(r[4].is_none());
    }
}
