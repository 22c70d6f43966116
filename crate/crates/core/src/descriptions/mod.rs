//! Class descriptions: prompt templates, generation and encoding.
//!
//! Three families of text are produced per class: one generic appearance
//! description, `K` state descriptions and `L` "class + context" scene
//! phrases. Generation goes through a [`GenerationClient`] (a checked-in
//! fixture or a remote chat-completion service); encoding goes through a
//! [`TextEncoder`].

mod client;
mod encoder;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use client::{parse_list_response, FixtureClient, GenerationClient, RemoteClient, RemoteClientConfig};
pub use encoder::{
    encode, encode_corpus, EmbeddingFixture, EmbeddingRecord, EncoderKind, FixtureEncoder,
    RemoteEncoder, RemoteEncoderConfig, TextEncoder, ToyEncoder, NORM_DRIFT_WARN,
};

const CLASS_SLOT: &str = "{C}";

const STATE_TEMPLATE: &str = "What are the common states or forms of {C} (category name)? \
For each common state of {C}, provide a one-sentence description of its visual appearance.";

const GENERIC_TEMPLATE: &str = "What does {C} (category name) generally look like? \
Provide a one-sentence generic description of its appearance.";

const SCENE_TEMPLATE: &str = "In which contexts is {C} most commonly found? \
Please output phrases in the form of '{C} + context'.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    State,
    Generic,
    Scene,
}

impl PromptKind {
    pub const ALL: [PromptKind; 3] = [PromptKind::Generic, PromptKind::State, PromptKind::Scene];

    fn template(self) -> &'static str {
        match self {
            PromptKind::State => STATE_TEMPLATE,
            PromptKind::Generic => GENERIC_TEMPLATE,
            PromptKind::Scene => SCENE_TEMPLATE,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PromptKind::State => "state",
            PromptKind::Generic => "generic",
            PromptKind::Scene => "scene",
        }
    }
}

pub fn render_prompt(kind: PromptKind, class_name: &str) -> Result<String> {
    if class_name.trim().is_empty() {
        return Err(Error::EmptyClassName);
    }
    Ok(kind.template().replace(CLASS_SLOT, class_name))
}

pub fn render_state_prompt(class_name: &str) -> Result<String> {
    render_prompt(PromptKind::State, class_name)
}

pub fn render_generic_prompt(class_name: &str) -> Result<String> {
    render_prompt(PromptKind::Generic, class_name)
}

pub fn render_scene_prompt(class_name: &str) -> Result<String> {
    render_prompt(PromptKind::Scene, class_name)
}

/// Inverts [`render_prompt`]: recovers the class name from a rendered prompt,
/// or `None` if `prompt` is not an instance of the template.
pub fn extract_class_name(kind: PromptKind, prompt: &str) -> Option<String> {
    let template = kind.template();
    let slots = template.matches(CLASS_SLOT).count();
    let fixed = template.len() - slots * CLASS_SLOT.len();
    let name_len = prompt.len().checked_sub(fixed)?;
    if name_len == 0 || name_len % slots != 0 {
        return None;
    }
    let name_len = name_len / slots;
    let start = template.find(CLASS_SLOT)?;
    let name = prompt.get(start..start + name_len)?;
    (render_prompt(kind, name).ok()? == prompt).then(|| name.to_string())
}

/// Generic, state and scene descriptions for one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionSet {
    pub class_name: String,
    pub generic: String,
    pub states: Vec<String>,
    pub scenes: Vec<String>,
}

impl DescriptionSet {
    pub fn new(
        class_name: impl Into<String>,
        generic: impl Into<String>,
        states: Vec<String>,
        scenes: Vec<String>,
    ) -> Result<Self> {
        let set = DescriptionSet {
            class_name: class_name.into(),
            generic: generic.into(),
            states,
            scenes,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn k(&self) -> usize {
        self.states.len()
    }

    pub fn l(&self) -> usize {
        self.scenes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: String| Error::InvalidDescriptions {
            class: self.class_name.clone(),
            reason,
        };
        if self.class_name.trim().is_empty() {
            return Err(Error::EmptyClassName);
        }
        if self.generic.trim().is_empty() {
            return Err(invalid("generic description is empty".into()));
        }
        let needle = self.class_name.to_lowercase();
        for (what, list) in [("state", &self.states), ("scene", &self.scenes)] {
            if list.is_empty() {
                return Err(invalid(format!("no {what} descriptions")));
            }
            let mut seen = HashSet::new();
            for text in list {
                if text.trim().is_empty() {
                    return Err(invalid(format!("empty {what} description")));
                }
                if !seen.insert(text.as_str()) {
                    return Err(invalid(format!("duplicate {what} description {text:?}")));
                }
                if !text.to_lowercase().contains(&needle) {
                    return Err(invalid(format!(
                        "{what} description {text:?} does not mention the class name"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Copy keeping only the first `k` states and `l` scenes.
    pub fn truncated(&self, k: usize, l: usize) -> Result<Self> {
        let check = |what, got: usize, wanted: usize| {
            if got < wanted {
                Err(Error::InsufficientDescriptions {
                    class: self.class_name.clone(),
                    what,
                    got,
                    wanted,
                })
            } else {
                Ok(())
            }
        };
        check("state", self.states.len(), k)?;
        check("scene", self.scenes.len(), l)?;
        Ok(DescriptionSet {
            class_name: self.class_name.clone(),
            generic: self.generic.clone(),
            states: self.states[..k].to_vec(),
            scenes: self.scenes[..l].to_vec(),
        })
    }
}

/// On-disk entry of the description fixture file; the class name is the map key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptionEntry {
    pub generic: String,
    pub states: Vec<String>,
    pub scenes: Vec<String>,
}

pub type DescriptionMap = BTreeMap<String, DescriptionSet>;

pub fn load_description_entries(path: &Path) -> Result<BTreeMap<String, DescriptionEntry>> {
    crate::io::read_json(path)
}

/// Loads a description fixture and validates every set.
pub fn load_descriptions(path: &Path) -> Result<DescriptionMap> {
    load_description_entries(path)?
        .into_iter()
        .map(|(name, e)| {
            let set = DescriptionSet::new(name.clone(), e.generic, e.states, e.scenes)?;
            Ok((name, set))
        })
        .collect()
}

pub fn save_descriptions(path: &Path, sets: &DescriptionMap) -> Result<()> {
    let entries: BTreeMap<&str, DescriptionEntry> = sets
        .iter()
        .map(|(name, s)| {
            (
                name.as_str(),
                DescriptionEntry {
                    generic: s.generic.clone(),
                    states: s.states.clone(),
                    scenes: s.scenes.clone(),
                },
            )
        })
        .collect();
    crate::io::write_json_atomic(path, &entries)
}

fn take_exact(class: &str, what: &'static str, mut items: Vec<String>, wanted: usize) -> Result<Vec<String>> {
    if items.len() < wanted {
        return Err(Error::InsufficientDescriptions {
            class: class.to_string(),
            what,
            got: items.len(),
            wanted,
        });
    }
    items.truncate(wanted);
    Ok(items)
}

fn describe_class(class_name: &str, k: usize, l: usize, client: &dyn GenerationClient) -> Result<DescriptionSet> {
    let ask = |kind| -> Result<Vec<String>> {
        let prompt = render_prompt(kind, class_name)?;
        client.complete(kind, class_name, &prompt)
    };
    let generic = ask(PromptKind::Generic)?
        .into_iter()
        .next()
        .ok_or_else(|| Error::MalformedResponse(format!("no generic description for '{class_name}'")))?;
    let states = take_exact(class_name, "state", ask(PromptKind::State)?, k)?;
    let scenes = take_exact(class_name, "scene", ask(PromptKind::Scene)?, l)?;
    DescriptionSet::new(class_name, generic, states, scenes)
}

/// Queries `client` for every class and returns exactly `k` states and `l`
/// scenes per class. Extra items are dropped in response order; too few is
/// an error. Up to `client.max_parallel()` classes are in flight at once;
/// the result is keyed (and therefore ordered) by class name.
pub fn generate_descriptions(
    class_names: &[String],
    k: usize,
    l: usize,
    client: &dyn GenerationClient,
) -> Result<DescriptionMap> {
    if k == 0 || l == 0 {
        return Err(Error::InvalidConfig(format!("k and l must be >= 1, got k={k}, l={l}")));
    }
    let mut seen = HashSet::new();
    for name in class_names {
        if name.trim().is_empty() {
            return Err(Error::EmptyClassName);
        }
        if !seen.insert(name.as_str()) {
            return Err(Error::InvalidConfig(format!("duplicate class name '{name}'")));
        }
    }

    let workers = client.max_parallel().clamp(1, class_names.len().max(1));
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<DescriptionSet>>>> =
        Mutex::new((0..class_names.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(name) = class_names.get(i) else { break };
                let r = describe_class(name, k, l, client);
                results.lock().expect("result slot poisoned")[i] = Some(r);
            });
        }
    });

    let mut out = BTreeMap::new();
    let mut results: Vec<_> = results.into_inner().expect("result slot poisoned");
    // Report the failure of the lexicographically first class.
    let mut order: Vec<usize> = (0..class_names.len()).collect();
    order.sort_by(|&a, &b| class_names[a].cmp(&class_names[b]));
    for i in order {
        let set = results[i].take().expect("every class is processed")?;
        out.insert(class_names[i].clone(), set);
    }
    Ok(out)
}
