//! Prompt enumeration for the stimulus library.
//!
//! A prompt is one sentence built from a slot template: a valence adjective,
//! an arousal adjective, an instrumentation/style, an emotional tone and a
//! context. Each quadrant has its own word lists; the quadrant that supplied
//! the words is the label of the prompt (and of the clip generated from it).

mod generation;

pub use generation::{
    generate_batch, prompt_key, request_generation, GenerationClient, GenerationError,
    HttpGenerationClient, StubGenerationClient,
};

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::quadrant::EmotionQuadrant;

const DEFAULT_LEXICON_JSON: &str = include_str!("../../data/default_lexicon.json");

/// Template used when none is supplied.
pub const DEFAULT_TEMPLATE: &str = "A {valence_adjective}, {arousal_adjective} piece played on \
{instrumentation} that feels {emotional_tone}, made for a {context}.";

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("lexicon slot {slot} is empty for quadrant {quadrant}")]
    EmptySlot {
        quadrant: EmotionQuadrant,
        slot: Slot,
    },
    #[error("lexicon has no entry for quadrant {0}")]
    MissingQuadrant(EmotionQuadrant),
    #[error("{slot} words shared between high and low polarity: {words:?}")]
    PolarityOverlap { slot: Slot, words: Vec<String> },
    #[error(
        "template placeholder {{{placeholder}}} appears {count} times (expected exactly once)"
    )]
    Template {
        placeholder: &'static str,
        count: usize,
    },
    #[error("template contains unknown placeholder {0:?}")]
    UnknownPlaceholder(String),
    #[error("prompt count must be at least 1")]
    ZeroCount,
    #[error("lexicon parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The five template slots, in template order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    ValenceAdjective,
    ArousalAdjective,
    Instrumentation,
    EmotionalTone,
    Context,
}

impl Slot {
    pub const ALL: [Slot; 5] = [
        Slot::ValenceAdjective,
        Slot::ArousalAdjective,
        Slot::Instrumentation,
        Slot::EmotionalTone,
        Slot::Context,
    ];

    /// Placeholder name as written inside `{}` in a template.
    pub fn placeholder(self) -> &'static str {
        match self {
            Slot::ValenceAdjective => "valence_adjective",
            Slot::ArousalAdjective => "arousal_adjective",
            Slot::Instrumentation => "instrumentation",
            Slot::EmotionalTone => "emotional_tone",
            Slot::Context => "context",
        }
    }
}

impl std::fmt::Display for Slot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.placeholder())
    }
}

/// Candidate words for one quadrant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotWords {
    pub valence_adjectives: Vec<String>,
    pub arousal_adjectives: Vec<String>,
    pub instrumentation_styles: Vec<String>,
    pub emotional_tones: Vec<String>,
    pub contexts: Vec<String>,
}

impl SlotWords {
    pub fn words(&self, slot: Slot) -> &[String] {
        match slot {
            Slot::ValenceAdjective => &self.valence_adjectives,
            Slot::ArousalAdjective => &self.arousal_adjectives,
            Slot::Instrumentation => &self.instrumentation_styles,
            Slot::EmotionalTone => &self.emotional_tones,
            Slot::Context => &self.contexts,
        }
    }

    /// Size of the Cartesian product over all five slots (saturating).
    pub fn combinations(&self) -> u64 {
        Slot::ALL.iter().fold(1u64, |acc, &s| {
            acc.saturating_mul(self.words(s).len() as u64)
        })
    }
}

/// Per-quadrant word lists. Serialized as a JSON object keyed by quadrant,
/// then by slot list name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptLexicon {
    pub quadrants: BTreeMap<EmotionQuadrant, SlotWords>,
}

impl Default for PromptLexicon {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_LEXICON_JSON).expect("bundled lexicon is valid JSON")
    }
}

impl PromptLexicon {
    pub fn from_json(text: &str) -> Result<Self, PromptError> {
        let lexicon: Self = serde_json::from_str(text)?;
        lexicon.validate()?;
        Ok(lexicon)
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn slots(&self, quadrant: EmotionQuadrant) -> Result<&SlotWords, PromptError> {
        self.quadrants
            .get(&quadrant)
            .ok_or(PromptError::MissingQuadrant(quadrant))
    }

    /// Checks that `quadrant` has every slot populated.
    pub fn validate_quadrant(&self, quadrant: EmotionQuadrant) -> Result<(), PromptError> {
        let words = self.slots(quadrant)?;
        for slot in Slot::ALL {
            if words.words(slot).is_empty() {
                return Err(PromptError::EmptySlot { quadrant, slot });
            }
        }
        Ok(())
    }

    /// Full check: all quadrants present and populated, and the valence
    /// (arousal) adjectives of the two polarities are disjoint.
    pub fn validate(&self) -> Result<(), PromptError> {
        for q in EmotionQuadrant::ALL {
            self.validate_quadrant(q)?;
        }
        for (slot, is_high) in [
            (
                Slot::ValenceAdjective,
                EmotionQuadrant::valence_high as fn(EmotionQuadrant) -> bool,
            ),
            (Slot::ArousalAdjective, EmotionQuadrant::arousal_high),
        ] {
            let mut high = HashSet::new();
            let mut low = HashSet::new();
            for q in EmotionQuadrant::ALL {
                let target = if is_high(q) { &mut high } else { &mut low };
                target.extend(self.slots(q)?.words(slot).iter().map(|w| w.to_lowercase()));
            }
            let mut shared: Vec<String> = high.intersection(&low).cloned().collect();
            if !shared.is_empty() {
                shared.sort();
                return Err(PromptError::PolarityOverlap {
                    slot,
                    words: shared,
                });
            }
        }
        Ok(())
    }
}

/// One enumerated prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub quadrant: EmotionQuadrant,
    /// One word per slot, in [`Slot::ALL`] order.
    pub slot_choices: [String; 5],
    pub rendered: String,
    /// Mixed-radix index of `slot_choices` within the quadrant's Cartesian
    /// product (valence adjective is the most significant digit).
    pub seed_index: u64,
}

impl PromptSpec {
    pub fn choice(&self, slot: Slot) -> &str {
        let i = Slot::ALL.iter().position(|&s| s == slot).unwrap();
        &self.slot_choices[i]
    }
}

/// Enumerates `count` prompts for `quadrant`, rendered with [`DEFAULT_TEMPLATE`].
pub fn enumerate_prompts(
    lexicon: &PromptLexicon,
    quadrant: EmotionQuadrant,
    count: usize,
    seed: u64,
) -> Result<Vec<PromptSpec>, PromptError> {
    enumerate_prompts_with(lexicon, quadrant, count, seed, DEFAULT_TEMPLATE)
}

/// Seeded sampling without replacement over the quadrant's Cartesian product
/// of slot words. Once the product is exhausted a fresh permutation starts,
/// so repeats appear only when `count` exceeds the product size.
pub fn enumerate_prompts_with(
    lexicon: &PromptLexicon,
    quadrant: EmotionQuadrant,
    count: usize,
    seed: u64,
    template: &str,
) -> Result<Vec<PromptSpec>, PromptError> {
    if count == 0 {
        return Err(PromptError::ZeroCount);
    }
    validate_template(template)?;
    lexicon.validate_quadrant(quadrant)?;
    let words = lexicon.slots(quadrant)?;
    let radices: Vec<u64> = Slot::ALL
        .iter()
        .map(|&s| words.words(s).len() as u64)
        .collect();
    let total = words.combinations();

    // Quadrants get independent streams from the same user seed.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((quadrant.index() as u64 + 1) << 56));
    let mut indices: Vec<u64> = Vec::with_capacity(count);
    while indices.len() < count {
        let need = (count - indices.len()) as u64;
        let round = need.min(total);
        if total <= usize::MAX as u64 {
            indices.extend(
                index::sample(&mut rng, total as usize, round as usize)
                    .into_iter()
                    .map(|i| i as u64),
            );
        } else {
            // Product too large for an index set; collisions are negligible but
            // still rejected.
            let mut seen = HashSet::new();
            while (seen.len() as u64) < round {
                let i = rand::Rng::random_range(&mut rng, 0..total);
                if seen.insert(i) {
                    indices.push(i);
                }
            }
        }
    }

    indices
        .into_iter()
        .map(|flat| {
            let digits = decode_mixed_radix(flat, &radices);
            let slot_choices: [String; 5] =
                std::array::from_fn(|k| words.words(Slot::ALL[k])[digits[k] as usize].clone());
            let mut spec = PromptSpec {
                quadrant,
                slot_choices,
                rendered: String::new(),
                seed_index: flat,
            };
            spec.rendered = render_prompt(&spec, template)?;
            Ok(spec)
        })
        .collect()
}

fn decode_mixed_radix(mut flat: u64, radices: &[u64]) -> Vec<u64> {
    let mut digits = vec![0; radices.len()];
    for (k, &r) in radices.iter().enumerate().rev() {
        digits[k] = flat % r;
        flat /= r;
    }
    digits
}

/// Checks that every placeholder occurs exactly once and no unknown
/// `{name}` markers are present.
pub fn validate_template(template: &str) -> Result<(), PromptError> {
    for slot in Slot::ALL {
        let marker = format!("{{{}}}", slot.placeholder());
        let count = template.matches(&marker).count();
        if count != 1 {
            return Err(PromptError::Template {
                placeholder: slot.placeholder(),
                count,
            });
        }
    }
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let name = &after[..close];
                if !Slot::ALL.iter().any(|s| s.placeholder() == name) {
                    return Err(PromptError::UnknownPlaceholder(name.to_string()));
                }
                rest = &after[close + 1..];
            }
            None => break,
        }
    }
    Ok(())
}

/// Fills the five placeholders of `template` with the spec's slot choices.
pub fn render_prompt(spec: &PromptSpec, template: &str) -> Result<String, PromptError> {
    validate_template(template)?;
    // Single left-to-right pass so slot words containing braces are never
    // re-substituted.
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let Some(close) = after.find('}') else {
            out.push_str(&rest[open..]);
            rest = "";
            break;
        };
        let name = &after[..close];
        let slot = Slot::ALL
            .into_iter()
            .find(|s| s.placeholder() == name)
            .ok_or_else(|| PromptError::UnknownPlaceholder(name.to_string()))?;
        out.push_str(spec.choice(slot));
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// One line of the prompt manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub quadrant: EmotionQuadrant,
    pub rendered: String,
    pub slot_choices: BTreeMap<Slot, String>,
    pub seed_index: u64,
}

impl ManifestEntry {
    pub fn new(spec: &PromptSpec, ordinal: usize) -> Self {
        Self {
            id: format!("{}-{:04}", spec.quadrant, ordinal + 1),
            quadrant: spec.quadrant,
            rendered: spec.rendered.clone(),
            slot_choices: Slot::ALL
                .iter()
                .map(|&s| (s, spec.choice(s).to_string()))
                .collect(),
            seed_index: spec.seed_index,
        }
    }
}

/// Writes specs as JSON lines. Ids restart at 1 for each quadrant.
pub fn write_manifest<W: Write>(mut out: W, specs: &[PromptSpec]) -> Result<(), PromptError> {
    let mut per_quadrant: BTreeMap<EmotionQuadrant, usize> = BTreeMap::new();
    for spec in specs {
        let ordinal = per_quadrant.entry(spec.quadrant).or_default();
        let entry = ManifestEntry::new(spec, *ordinal);
        *ordinal += 1;
        serde_json::to_writer(&mut out, &entry)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn singleton_lexicon() -> PromptLexicon {
        let one = |w: &str| vec![w.to_string()];
        let mut quadrants = BTreeMap::new();
        for q in EmotionQuadrant::ALL {
            let tag = q.as_str().to_lowercase();
            quadrants.insert(
                q,
                SlotWords {
                    valence_adjectives: one(&format!("v-{}", q.valence_high())),
                    arousal_adjectives: one(&format!("a-{}", q.arousal_high())),
                    instrumentation_styles: one(&format!("inst-{tag}")),
                    emotional_tones: one(&format!("tone-{tag}")),
                    contexts: one(&format!("ctx-{tag}")),
                },
            );
        }
        PromptLexicon { quadrants }
    }

    #[test]
    fn default_lexicon_is_valid_and_large_enough() {
        let lex = PromptLexicon::default();
        lex.validate().unwrap();
        for q in EmotionQuadrant::ALL {
            for slot in Slot::ALL {
                assert!(lex.slots(q).unwrap().words(slot).len() >= 8, "{q} {slot}");
            }
        }
    }

    #[test]
    fn singleton_product_yields_the_only_spec() {
        let lex = singleton_lexicon();
        let specs = enumerate_prompts(&lex, EmotionQuadrant::HAHV, 1, 0).unwrap();
        assert_eq!(specs.len(), 1);
        assert_eq!(specs[0].seed_index, 0);
        assert_eq!(specs[0].choice(Slot::Context), "ctx-hahv");
        // Exhausted product repeats.
        let specs = enumerate_prompts(&lex, EmotionQuadrant::HAHV, 3, 0).unwrap();
        assert!(specs.iter().all(|s| s == &specs[0]));
    }

    #[test]
    fn default_library_size() {
        let lex = PromptLexicon::default();
        let mut all = Vec::new();
        for q in EmotionQuadrant::ALL {
            all.extend(enumerate_prompts(&lex, q, 59, 42).unwrap());
        }
        assert_eq!(all.len(), 236);
        for q in EmotionQuadrant::ALL {
            assert_eq!(all.iter().filter(|s| s.quadrant == q).count(), 59);
        }
    }

    #[test]
    fn deterministic_and_distinct() {
        let lex = PromptLexicon::default();
        let a = enumerate_prompts(&lex, EmotionQuadrant::LALV, 200, 9).unwrap();
        let b = enumerate_prompts(&lex, EmotionQuadrant::LALV, 200, 9).unwrap();
        assert_eq!(a, b);
        let distinct: HashSet<_> = a.iter().map(|s| s.slot_choices.clone()).collect();
        assert_eq!(distinct.len(), 200);
        let c = enumerate_prompts(&lex, EmotionQuadrant::LALV, 200, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn exhaustion_covers_whole_product_before_repeating() {
        let mut lex = singleton_lexicon();
        let w = lex.quadrants.get_mut(&EmotionQuadrant::LAHV).unwrap();
        w.contexts = vec!["a".into(), "b".into(), "c".into()];
        w.emotional_tones = vec!["x".into(), "y".into()];
        let specs = enumerate_prompts(&lex, EmotionQuadrant::LAHV, 8, 3).unwrap();
        let first: HashSet<u64> = specs[..6].iter().map(|s| s.seed_index).collect();
        assert_eq!(first.len(), 6);
    }

    #[test]
    fn empty_slot_names_slot_and_quadrant() {
        let mut lex = singleton_lexicon();
        lex.quadrants
            .get_mut(&EmotionQuadrant::HALV)
            .unwrap()
            .emotional_tones
            .clear();
        let err = enumerate_prompts(&lex, EmotionQuadrant::HALV, 1, 0).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("emotional_tone") && msg.contains("HALV"),
            "{msg}"
        );
    }

    #[test]
    fn polarity_overlap_rejected() {
        let mut lex = PromptLexicon::default();
        lex.quadrants
            .get_mut(&EmotionQuadrant::LALV)
            .unwrap()
            .valence_adjectives
            .push("Happy".into());
        assert!(matches!(
            lex.validate(),
            Err(PromptError::PolarityOverlap {
                slot: Slot::ValenceAdjective,
                ..
            })
        ));
    }

    fn spec_with(words: [&str; 5]) -> PromptSpec {
        PromptSpec {
            quadrant: EmotionQuadrant::HAHV,
            slot_choices: words.map(String::from),
            rendered: String::new(),
            seed_index: 0,
        }
    }

    #[test]
    fn render_fills_every_slot() {
        let spec = spec_with(["happy", "energetic", "drum beats", "exciting", "party"]);
        let s = render_prompt(&spec, DEFAULT_TEMPLATE).unwrap();
        for w in &spec.slot_choices {
            assert!(s.contains(w.as_str()), "{s}");
        }
        assert!(!s.contains('{') && !s.contains('}'));
        assert_eq!(s.matches('.').count(), 1);
    }

    #[test]
    fn render_same_word_everywhere() {
        let s = render_prompt(&spec_with(["X"; 5]), DEFAULT_TEMPLATE).unwrap();
        assert_eq!(s.matches('X').count(), 5);
    }

    #[test]
    fn render_rejects_bad_templates() {
        let spec = spec_with(["a", "b", "c", "d", "e"]);
        let missing =
            "A {valence_adjective} {arousal_adjective} {instrumentation} {emotional_tone}.";
        assert!(matches!(
            render_prompt(&spec, missing),
            Err(PromptError::Template {
                placeholder: "context",
                count: 0
            })
        ));
        let dup = format!("{DEFAULT_TEMPLATE} {{context}}");
        assert!(matches!(
            render_prompt(&spec, &dup),
            Err(PromptError::Template {
                placeholder: "context",
                count: 2
            })
        ));
        let unknown = format!("{DEFAULT_TEMPLATE} {{tempo}}");
        assert!(matches!(
            render_prompt(&spec, &unknown),
            Err(PromptError::UnknownPlaceholder(_))
        ));
    }

    #[test]
    fn manifest_lines() {
        let lex = PromptLexicon::default();
        let specs = enumerate_prompts(&lex, EmotionQuadrant::HALV, 3, 1).unwrap();
        let mut buf = Vec::new();
        write_manifest(&mut buf, &specs).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        let entry: ManifestEntry = serde_json::from_str(lines[2]).unwrap();
        assert_eq!(entry.id, "HALV-0003");
        assert_eq!(entry.slot_choices.len(), 5);
        assert_eq!(entry.rendered, specs[2].rendered);
        let raw: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        for key in ["id", "quadrant", "rendered", "slot_choices", "seed_index"] {
            assert!(raw.get(key).is_some(), "{key}");
        }
    }
}
