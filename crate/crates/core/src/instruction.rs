//! Segmented instructions and the soft attention over segment pairs.
//!
//! An instruction is a token stream with a binary class per token. Maximal
//! runs of one class form segments, and segments are paired in order as
//! (landmark, direction). At each step the agent blends all pair features
//! with weights `exp(-|eta - j|)` centered on its attention reference `eta`.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::citygraph::NodeId;
use crate::error::{NavError, Result};
use crate::util::fnv1a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenClass {
    Landmark,
    Direction,
}

impl TokenClass {
    pub fn code(self) -> u8 {
        match self {
            TokenClass::Landmark => 0,
            TokenClass::Direction => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(TokenClass::Landmark),
            1 => Ok(TokenClass::Direction),
            other => Err(NavError::InvalidInstruction(format!("token class {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub cls: TokenClass,
}

impl Token {
    pub fn new(text: impl Into<String>, cls: TokenClass) -> Self {
        Token {
            text: text.into(),
            cls,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SegmentPair {
    pub landmark: Vec<Token>,
    pub direction: Vec<Token>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentedInstruction {
    pairs: Vec<SegmentPair>,
    raw_text: String,
}

impl SegmentedInstruction {
    pub fn from_pairs(pairs: Vec<SegmentPair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(NavError::EmptyInstruction);
        }
        for (j, p) in pairs.iter().enumerate() {
            let bad = p.landmark.iter().any(|t| t.cls != TokenClass::Landmark)
                || p.direction.iter().any(|t| t.cls != TokenClass::Direction);
            if bad {
                return Err(NavError::InvalidInstruction(format!(
                    "pair {} mixes token classes",
                    j + 1
                )));
            }
        }
        let raw_text = join_tokens(pairs.iter().flat_map(|p| p.landmark.iter().chain(&p.direction)));
        Ok(SegmentedInstruction { pairs, raw_text })
    }

    pub fn pairs(&self) -> &[SegmentPair] {
        &self.pairs
    }

    /// Number of segment pairs, `J`.
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn raw_text(&self) -> &str {
        &self.raw_text
    }

    /// Tokens in reading order, padding removed.
    pub fn tokens(&self) -> impl Iterator<Item = &Token> {
        self.pairs.iter().flat_map(|p| p.landmark.iter().chain(&p.direction))
    }

    /// Sub-instruction made of pairs `range`.
    pub fn window(&self, range: std::ops::Range<usize>) -> Result<Self> {
        let pairs = self
            .pairs
            .get(range.clone())
            .ok_or_else(|| NavError::InvalidInstruction(format!("pair window {range:?}")))?;
        Self::from_pairs(pairs.to_vec())
    }
}

fn join_tokens<'a>(tokens: impl Iterator<Item = &'a Token>) -> String {
    tokens.map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ")
}

/// Groups maximal same-class runs into (landmark, direction) pairs.
///
/// A leading direction run gets an empty landmark partner; a trailing
/// landmark run gets an empty direction partner.
pub fn group_tokens(tokens: Vec<Token>) -> Result<SegmentedInstruction> {
    if tokens.is_empty() {
        return Err(NavError::EmptyInstruction);
    }
    let mut runs: Vec<Vec<Token>> = Vec::new();
    for tok in tokens {
        match runs.last_mut() {
            Some(run) if run[0].cls == tok.cls => run.push(tok),
            _ => runs.push(vec![tok]),
        }
    }

    let mut pairs = Vec::new();
    let mut runs = runs.into_iter().peekable();
    if runs.peek().is_some_and(|r| r[0].cls == TokenClass::Direction) {
        pairs.push(SegmentPair {
            landmark: Vec::new(),
            direction: runs.next().unwrap(),
        });
    }
    while let Some(landmark) = runs.next() {
        let direction = runs.next().unwrap_or_default();
        pairs.push(SegmentPair {
            landmark,
            direction,
        });
    }
    SegmentedInstruction::from_pairs(pairs)
}

const DIRECTION_WORDS: &[&str] = &[
    "go", "walk", "head", "turn", "left", "right", "straight", "ahead", "continue", "keep",
    "for", "block", "blocks", "meters", "then", "until", "north", "south", "east", "west",
    "take", "u-turn", "around", "forward", "cross",
];

/// Keyword-rule classifier for free text. Words from a fixed direction
/// vocabulary and numbers are direction tokens; everything else is landmark.
pub fn classify_keywords(text: &str) -> Vec<Token> {
    text.split_whitespace()
        .map(|w| {
            let bare: String = w
                .chars()
                .filter(|c| c.is_alphanumeric() || *c == '-')
                .collect::<String>()
                .to_lowercase();
            let is_direction =
                DIRECTION_WORDS.contains(&bare.as_str()) || bare.chars().all(|c| c.is_ascii_digit()) && !bare.is_empty();
            let cls = if is_direction {
                TokenClass::Direction
            } else {
                TokenClass::Landmark
            };
            Token::new(w, cls)
        })
        .collect()
}

/// Hashed bag-of-words embedding with signed buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(NavError::InvalidConfig("embedding dimension must be positive".into()));
        }
        Ok(HashEmbedder { dim })
    }

    /// Unit vector for a nonempty bag of words; zero vector for an empty one.
    pub fn embed_words<'a>(&self, words: impl IntoIterator<Item = &'a str>) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for w in words {
            let h = fnv1a(w.to_lowercase().as_bytes());
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            v[((h & (u64::MAX >> 1)) % self.dim as u64) as usize] += sign;
        }
        let n = crate::util::norm(&v);
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
        }
        v
    }

    pub fn embed_segment(&self, tokens: &[Token]) -> Vec<f64> {
        self.embed_words(tokens.iter().map(|t| t.text.as_str()))
    }

    pub fn embed_instruction(&self, instr: &SegmentedInstruction) -> EmbeddedInstruction {
        EmbeddedInstruction {
            landmark: instr.pairs().iter().map(|p| self.embed_segment(&p.landmark)).collect(),
            direction: instr.pairs().iter().map(|p| self.embed_segment(&p.direction)).collect(),
        }
    }
}

/// Per-pair segment features `L^j`, `D^j`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedInstruction {
    pub landmark: Vec<Vec<f64>>,
    pub direction: Vec<Vec<f64>>,
}

impl EmbeddedInstruction {
    pub fn len(&self) -> usize {
        self.landmark.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmark.is_empty()
    }
}

/// Unnormalized kernel weights `exp(-|eta - j|)` for `j = 1..=segments`.
pub fn attention_weights(eta: f64, segments: usize) -> Vec<f64> {
    (1..=segments).map(|j| (-(eta - j as f64).abs()).exp()).collect()
}

/// Attended landmark and direction features at reference `eta`.
///
/// With `normalize` the weights are divided by their sum; by default they are
/// used as is.
pub fn attend(instr: &EmbeddedInstruction, eta: f64, normalize: bool) -> (Vec<f64>, Vec<f64>) {
    let mut w = attention_weights(eta, instr.len());
    if normalize {
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
    }
    (weighted_sum(&instr.landmark, &w), weighted_sum(&instr.direction, &w))
}

fn weighted_sum(features: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    let dim = features.first().map_or(0, Vec::len);
    let mut out = vec![0.0; dim];
    for (f, &w) in features.iter().zip(weights) {
        for (o, x) in out.iter_mut().zip(f) {
            *o += w * x;
        }
    }
    out
}

/// Attention reference over `segments` pairs; starts at 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionState {
    pub eta: f64,
    pub segments: usize,
}

impl AttentionState {
    pub fn new(segments: usize) -> Self {
        AttentionState { eta: 1.0, segments }
    }

    pub fn is_exhausted(&self) -> bool {
        self.eta > self.segments as f64
    }

    /// Moves the reference by the indicator output.
    pub fn advance(self, fired: bool) -> Result<Self> {
        if !fired {
            return Ok(self);
        }
        if self.is_exhausted() {
            return Err(NavError::AttentionExhausted {
                eta: self.eta,
                segments: self.segments,
            });
        }
        Ok(AttentionState {
            eta: self.eta + 1.0,
            ..self
        })
    }

    /// 1-based pair index the kernel peaks at, halves rounding down.
    pub fn aimed_pair(&self) -> usize {
        peak_index(self.eta, self.segments)
    }
}

/// `round(eta)` with halves toward the lower index, clamped to `[1, segments]`.
pub fn peak_index(eta: f64, segments: usize) -> usize {
    let r = (eta - 0.5).ceil();
    (r.max(1.0) as usize).min(segments.max(1))
}

// On-disk schema.

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PairRecord {
    pub landmark: Vec<usize>,
    pub direction: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InstructionFile {
    pub text: String,
    pub tokens: Vec<String>,
    pub classes: Vec<u8>,
    #[serde(default)]
    pub pairs: Vec<PairRecord>,
    #[serde(default)]
    pub landmark_node_ids: Vec<u64>,
}

/// An instruction with its ground-truth landmark correspondence.
#[derive(Debug, Clone, PartialEq)]
pub struct InstructionRecord {
    pub instruction: SegmentedInstruction,
    /// `landmark_node_ids[j]` is the node described by pair `j + 1`.
    pub landmark_node_ids: Vec<NodeId>,
}

impl InstructionRecord {
    pub fn from_file(file: &InstructionFile) -> Result<Self> {
        if file.tokens.len() != file.classes.len() {
            return Err(NavError::InvalidInstruction(format!(
                "{} tokens but {} classes",
                file.tokens.len(),
                file.classes.len()
            )));
        }
        let tokens: Vec<Token> = file
            .tokens
            .iter()
            .zip(&file.classes)
            .map(|(t, &c)| Ok(Token::new(t.clone(), TokenClass::from_code(c)?)))
            .collect::<Result<_>>()?;

        let instruction = if file.pairs.is_empty() {
            group_tokens(tokens)?
        } else {
            let mut used = BTreeSet::new();
            let mut take = |idx: &[usize]| -> Result<Vec<Token>> {
                idx.iter()
                    .map(|&i| {
                        let t = tokens.get(i).ok_or_else(|| {
                            NavError::InvalidInstruction(format!("token index {i} out of range"))
                        })?;
                        if !used.insert(i) {
                            return Err(NavError::InvalidInstruction(format!(
                                "token {i} in two segments"
                            )));
                        }
                        Ok(t.clone())
                    })
                    .collect()
            };
            let pairs = file
                .pairs
                .iter()
                .map(|p| {
                    Ok(SegmentPair {
                        landmark: take(&p.landmark)?,
                        direction: take(&p.direction)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            SegmentedInstruction::from_pairs(pairs)?
        };

        let landmark_node_ids: Vec<NodeId> = file.landmark_node_ids.iter().map(|&n| NodeId(n)).collect();
        if !landmark_node_ids.is_empty() && landmark_node_ids.len() != instruction.len() {
            return Err(NavError::InvalidInstruction(format!(
                "{} landmark ids for {} segment pairs",
                landmark_node_ids.len(),
                instruction.len()
            )));
        }
        Ok(InstructionRecord {
            instruction,
            landmark_node_ids,
        })
    }

    pub fn to_file(&self) -> InstructionFile {
        let mut tokens = Vec::new();
        let mut classes = Vec::new();
        let mut pairs = Vec::new();
        let mut push = |seg: &[Token]| -> Vec<usize> {
            seg.iter()
                .map(|t| {
                    tokens.push(t.text.clone());
                    classes.push(t.cls.code());
                    tokens.len() - 1
                })
                .collect()
        };
        for p in self.instruction.pairs() {
            let landmark = push(&p.landmark);
            let direction = push(&p.direction);
            pairs.push(PairRecord {
                landmark,
                direction,
            });
        }
        InstructionFile {
            text: self.instruction.raw_text().to_string(),
            tokens,
            classes,
            pairs,
            landmark_node_ids: self.landmark_node_ids.iter().map(|n| n.0).collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| NavError::io(path, e))?;
        Self::from_file(&serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.to_file())? + "\n";
        std::fs::write(path, text).map_err(|e| NavError::io(path, e))
    }
}
