//! Shared domain types: vocabularies, per-step log-probability vectors,
//! guidance configuration, coordinates, image metadata and prediction
//! records. All types are immutable after construction and validated on
//! construction.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of a token within a [`Vocabulary`].
pub type TokenId = usize;

/// Tolerance on `sum(exp(logprobs))` for a row to count as normalized.
pub const NORMALIZATION_TOL: f64 = 1e-6;

/// Default base guidance coefficient.
pub const DEFAULT_ALPHA: f64 = 0.55;
/// Default geometric decay factor of the coefficient schedule.
pub const DEFAULT_DECAY: f64 = 0.4;
/// Default probability floor applied before log-space aggregation.
pub const DEFAULT_EPSILON_FLOOR: f64 = 1e-10;
/// Default cap on digits per coordinate component.
pub const DEFAULT_MAX_DIGITS: u8 = 5;
/// Default cap on decode steps per generation.
pub const DEFAULT_MAX_STEPS: usize = 32;

#[derive(Debug, Error, PartialEq)]
pub enum CoreError {
    #[error("duplicate token {token:?} at ids {first} and {second}")]
    DuplicateToken {
        token: String,
        first: TokenId,
        second: TokenId,
    },
    #[error("token id {id} ({token:?}) is declared both digit and structural")]
    OverlappingClasses { id: TokenId, token: String },
    #[error("token id {id} is out of range for a vocabulary of {len} tokens")]
    TokenIdOutOfRange { id: TokenId, len: usize },
    #[error("digit token {token:?} (id {id}) is not a decimal digit string")]
    NonNumericDigitToken { id: TokenId, token: String },
    #[error("log-probability row has {got} entries, expected {expected}")]
    RowLengthMismatch { expected: usize, got: usize },
    #[error("log-probability entry at id {id} is {value}; entries must be finite-or-(-inf) and <= 0")]
    InvalidLogProb { id: TokenId, value: f64 },
    #[error("log-probabilities exponentiate to {sum:.9}, outside 1 +/- {NORMALIZATION_TOL}")]
    NotNormalized { sum: f64 },
    #[error("invalid guidance config: {0}")]
    InvalidConfig(String),
    #[error("invalid image metadata: {0}")]
    InvalidImage(String),
    #[error("invalid bounding box [{x0}, {y0}, {x1}, {y1}]: corners must be ordered")]
    InvalidBBox { x0: u32, y0: u32, x1: u32, y1: u32 },
    #[error("invalid route label {0:?}")]
    InvalidRouteLabel(String),
}

/// Ids of the structural tokens of the `[x, y]` template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuralIds {
    pub open: TokenId,
    pub close: TokenId,
    pub comma: TokenId,
    pub space: TokenId,
    pub eos: TokenId,
}

impl StructuralIds {
    pub fn all(&self) -> [TokenId; 5] {
        [self.open, self.close, self.comma, self.space, self.eos]
    }
}

/// Role a token plays in the coordinate template.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenClass {
    Digit,
    Open,
    Close,
    Comma,
    Space,
    Eos,
    Other,
}

/// An ordered token list with declared digit and structural subsets.
///
/// The engine trusts the declaration of digit ids rather than deriving it
/// from token text, so tokenizers that merge digits into multi-character
/// tokens can still drive it; digit tokens must however parse as decimal
/// digit strings so coordinates can be reconstructed.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    digit_ids: BTreeSet<TokenId>,
    structural: StructuralIds,
    classes: Vec<TokenClass>,
}

impl Vocabulary {
    /// Builds and validates a vocabulary. Errors name the offending entry.
    pub fn new(
        tokens: Vec<String>,
        digit_ids: impl IntoIterator<Item = TokenId>,
        structural: StructuralIds,
    ) -> Result<Self, CoreError> {
        let len = tokens.len();
        let mut seen: std::collections::HashMap<&str, TokenId> = std::collections::HashMap::new();
        for (id, token) in tokens.iter().enumerate() {
            if let Some(&first) = seen.get(token.as_str()) {
                return Err(CoreError::DuplicateToken {
                    token: token.clone(),
                    first,
                    second: id,
                });
            }
            seen.insert(token.as_str(), id);
        }

        let digit_ids: BTreeSet<TokenId> = digit_ids.into_iter().collect();
        for &id in &digit_ids {
            if id >= len {
                return Err(CoreError::TokenIdOutOfRange { id, len });
            }
        }
        for id in structural.all() {
            if id >= len {
                return Err(CoreError::TokenIdOutOfRange { id, len });
            }
            if digit_ids.contains(&id) {
                return Err(CoreError::OverlappingClasses {
                    id,
                    token: tokens[id].clone(),
                });
            }
        }
        for &id in &digit_ids {
            let token = &tokens[id];
            if token.is_empty() || !token.bytes().all(|b| b.is_ascii_digit()) {
                return Err(CoreError::NonNumericDigitToken {
                    id,
                    token: token.clone(),
                });
            }
        }

        let mut classes = vec![TokenClass::Other; len];
        for &id in &digit_ids {
            classes[id] = TokenClass::Digit;
        }
        classes[structural.open] = TokenClass::Open;
        classes[structural.close] = TokenClass::Close;
        classes[structural.comma] = TokenClass::Comma;
        classes[structural.space] = TokenClass::Space;
        classes[structural.eos] = TokenClass::Eos;

        Ok(Self {
            tokens,
            digit_ids,
            structural,
            classes,
        })
    }

    /// The 15-token single-character vocabulary used by synthetic fixtures:
    /// `"0".."9"`, `"["`, `"]"`, `","`, `" "`, `"<eos>"`.
    pub fn toy() -> Self {
        let mut tokens: Vec<String> = (0..10u32).map(|d| d.to_string()).collect();
        tokens.extend(["[", "]", ",", " ", "<eos>"].map(str::to_string));
        Self::new(
            tokens,
            0..10,
            StructuralIds {
                open: 10,
                close: 11,
                comma: 12,
                space: 13,
                eos: 14,
            },
        )
        .expect("toy vocabulary is valid")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn class(&self, id: TokenId) -> TokenClass {
        self.classes[id]
    }

    pub fn is_digit(&self, id: TokenId) -> bool {
        id < self.classes.len() && self.classes[id] == TokenClass::Digit
    }

    pub fn digit_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.digit_ids.iter().copied()
    }

    pub fn structural(&self) -> StructuralIds {
        self.structural
    }

    /// Id of the single-character token for digit `d` (0..=9), if present.
    pub fn digit_token(&self, d: u8) -> Option<TokenId> {
        let s = (d as u32).to_string();
        self.digit_ids
            .iter()
            .copied()
            .find(|&id| self.tokens[id] == s)
    }
}

/// Index of the largest value, ties broken toward the lowest index.
pub fn argmax(values: &[f64]) -> TokenId {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// One decode step's natural-log probability vector over a vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StepDistribution {
    logprobs: Vec<f64>,
}

impl StepDistribution {
    /// Validates that entries are `<= 0` (`-inf` allowed, `NaN`/`+inf`
    /// rejected) and that the row exponentiates to 1 within
    /// [`NORMALIZATION_TOL`].
    pub fn new(logprobs: Vec<f64>) -> Result<Self, CoreError> {
        for (id, &lp) in logprobs.iter().enumerate() {
            if lp.is_nan() || lp > 0.0 {
                return Err(CoreError::InvalidLogProb { id, value: lp });
            }
        }
        let sum: f64 = logprobs.iter().map(|lp| lp.exp()).sum();
        if !((1.0 - NORMALIZATION_TOL)..=(1.0 + NORMALIZATION_TOL)).contains(&sum) {
            return Err(CoreError::NotNormalized { sum });
        }
        Ok(Self { logprobs })
    }

    /// Log-softmax over raw logits; always produces a valid distribution.
    pub fn from_logits(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        Self {
            logprobs: logits.iter().map(|x| x - lse).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.logprobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logprobs.is_empty()
    }

    pub fn logprobs(&self) -> &[f64] {
        &self.logprobs
    }

    pub fn logprob(&self, id: TokenId) -> f64 {
        self.logprobs[id]
    }

    pub fn prob(&self, id: TokenId) -> f64 {
        self.logprobs[id].exp()
    }

    /// Greedy pick: highest log-probability, ties toward the lowest id.
    pub fn argmax(&self) -> TokenId {
        argmax(&self.logprobs)
    }
}

/// Knobs of the guidance engine.
///
/// `aggregate = false` uses only seed 0 as the auxiliary reference;
/// `use_decay = false` applies the constant base coefficient on every digit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub alpha: f64,
    pub decay: f64,
    pub seeds: usize,
    pub aggregate: bool,
    pub use_decay: bool,
    pub epsilon_floor: f64,
    pub max_digits: u8,
    pub max_steps: usize,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            decay: DEFAULT_DECAY,
            seeds: 5,
            aggregate: true,
            use_decay: true,
            epsilon_floor: DEFAULT_EPSILON_FLOOR,
            max_digits: DEFAULT_MAX_DIGITS,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(CoreError::InvalidConfig(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(CoreError::InvalidConfig(format!(
                "decay must lie in (0, 1), got {}",
                self.decay
            )));
        }
        if self.seeds < 1 {
            return Err(CoreError::InvalidConfig("seeds must be >= 1".into()));
        }
        if !(self.epsilon_floor > 0.0 && self.epsilon_floor < 1.0) {
            return Err(CoreError::InvalidConfig(format!(
                "epsilon_floor must lie in (0, 1), got {}",
                self.epsilon_floor
            )));
        }
        if self.max_digits < 1 {
            return Err(CoreError::InvalidConfig("max_digits must be >= 1".into()));
        }
        if self.max_steps < 1 {
            return Err(CoreError::InvalidConfig("max_steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// A predicted point in integer pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct Coordinate {
    pub x: u32,
    pub y: u32,
}

impl Coordinate {
    pub fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }

    /// Number of decimal digits of the longer component.
    pub fn max_component_digits(&self) -> u8 {
        decimal_digits(self.x).max(decimal_digits(self.y))
    }
}

pub(crate) fn decimal_digits(n: u32) -> u8 {
    if n == 0 {
        1
    } else {
        (n.ilog10() + 1) as u8
    }
}

impl From<[u32; 2]> for Coordinate {
    fn from(v: [u32; 2]) -> Self {
        Self { x: v[0], y: v[1] }
    }
}

impl From<Coordinate> for [u32; 2] {
    fn from(c: Coordinate) -> Self {
        [c.x, c.y]
    }
}

impl fmt::Display for Coordinate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.x, self.y)
    }
}

impl FromStr for Coordinate {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let inner = s
            .trim()
            .strip_prefix('[')
            .and_then(|s| s.strip_suffix(']'))
            .ok_or_else(|| CoreError::InvalidImage(format!("malformed coordinate {s:?}")))?;
        let (x, y) = inner
            .split_once(',')
            .ok_or_else(|| CoreError::InvalidImage(format!("malformed coordinate {s:?}")))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<u32>()
                .map_err(|_| CoreError::InvalidImage(format!("malformed coordinate {s:?}")))
        };
        Ok(Self {
            x: parse(x)?,
            y: parse(y)?,
        })
    }
}

/// Axis-aligned box with ordered corners, closed on all edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "[u32; 4]", into = "[u32; 4]")]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Result<Self, CoreError> {
        if x0 >= x1 || y0 >= y1 {
            return Err(CoreError::InvalidBBox { x0, y0, x1, y1 });
        }
        Ok(Self { x0, y0, x1, y1 })
    }

    /// Membership on closed intervals: edge points count as inside.
    pub fn contains(&self, c: Coordinate) -> bool {
        self.x0 <= c.x && c.x <= self.x1 && self.y0 <= c.y && c.y <= self.y1
    }
}

impl TryFrom<[u32; 4]> for BBox {
    type Error = CoreError;

    fn try_from(v: [u32; 4]) -> Result<Self, Self::Error> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

/// Per-image metadata carried by prediction records and trace headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub id: String,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_bbox: Option<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ui_type: Option<String>,
}

impl ImageMeta {
    pub fn new(id: impl Into<String>, width: u32, height: u32) -> Result<Self, CoreError> {
        if width == 0 || height == 0 {
            return Err(CoreError::InvalidImage(format!(
                "image must have positive size, got {width}x{height}"
            )));
        }
        Ok(Self {
            id: id.into(),
            width,
            height,
            gt_bbox: None,
            category: None,
            ui_type: None,
        })
    }

    pub fn with_gt_bbox(mut self, bbox: BBox) -> Result<Self, CoreError> {
        if bbox.x1 > self.width || bbox.y1 > self.height {
            return Err(CoreError::InvalidImage(format!(
                "gt_bbox [{}, {}, {}, {}] exceeds image {}x{}",
                bbox.x0, bbox.y0, bbox.x1, bbox.y1, self.width, self.height
            )));
        }
        self.gt_bbox = Some(bbox);
        Ok(self)
    }

    pub fn with_labels(
        mut self,
        category: impl Into<String>,
        ui_type: impl Into<String>,
    ) -> Self {
        self.category = Some(category.into());
        self.ui_type = Some(ui_type.into());
        self
    }

    /// Image diagonal in pixels, the per-image distance normalizer.
    pub fn diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64)
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if self.width == 0 || self.height == 0 {
            return Err(CoreError::InvalidImage(format!(
                "image must have positive size, got {}x{}",
                self.width, self.height
            )));
        }
        if let Some(b) = self.gt_bbox {
            if b.x1 > self.width || b.y1 > self.height {
                return Err(CoreError::InvalidImage(format!(
                    "gt_bbox exceeds image {}x{}",
                    self.width, self.height
                )));
            }
        }
        Ok(())
    }
}

/// Which route produced a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RouteLabel {
    Normal,
    Shuffled(u32),
    Vpsg,
}

impl fmt::Display for RouteLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RouteLabel::Normal => f.write_str("normal"),
            RouteLabel::Shuffled(k) => write!(f, "shuffled:{k}"),
            RouteLabel::Vpsg => f.write_str("vpsg"),
        }
    }
}

impl FromStr for RouteLabel {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normal" => Ok(RouteLabel::Normal),
            "vpsg" => Ok(RouteLabel::Vpsg),
            _ => {
                if let Some(k) = s.strip_prefix("shuffled:") {
                    k.parse::<u32>()
                        .map(RouteLabel::Shuffled)
                        .map_err(|_| CoreError::InvalidRouteLabel(s.to_string()))
                } else {
                    Err(CoreError::InvalidRouteLabel(s.to_string()))
                }
            }
        }
    }
}

impl Serialize for RouteLabel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RouteLabel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One decoded point together with its provenance; the unit consumed by the
/// analysis pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image: ImageMeta,
    pub coord: Coordinate,
    pub route: RouteLabel,
    pub run: u32,
}
