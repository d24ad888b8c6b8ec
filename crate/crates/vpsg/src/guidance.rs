//! Negative-evidence fusion between the main route and the aggregated
//! auxiliary routes, the digit-index coefficient schedule, and the greedy
//! decode loop.
//!
//! On digit tokens the fused score is
//! `s(v) = log p_main(v | prefix) - alpha_t * ell_aux(v)`, where `ell_aux`
//! is the per-seed mean of floored auxiliary log-probabilities (a geometric
//! mean in probability space) and `alpha_t` follows a geometric decay over
//! the digit index that resets at the first y digit. Non-digit tokens pass
//! through untouched, so the template structure is always decided by the
//! main route alone.

use thiserror::Error;

use crate::core::{
    argmax, CoreError, Coordinate, GuidanceConfig, StepDistribution, TokenId, Vocabulary,
};
use crate::fsm::{DigitSlot, FsmError, TemplateState};
use crate::providers::{ProviderError, RouteProvider, RouteSet};

#[derive(Debug, Error)]
pub enum GuidanceError {
    #[error("auxiliary seed list is empty")]
    EmptySeeds,
    #[error("auxiliary row for seed {seed} has {got} entries, expected {expected}")]
    SeedLengthMismatch {
        seed: usize,
        expected: usize,
        got: usize,
    },
    #[error("score vector has {got} entries, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("alpha {0} is outside [0, 1)")]
    AlphaOutOfDomain(f64),
    #[error("lambda {0} is outside [0, +inf)")]
    LambdaOutOfDomain(f64),
    #[error("fused scores contain no finite entry")]
    NoFiniteScore,
    #[error("decode exceeded the step cap of {cap} without end of sequence")]
    StepCapExceeded { cap: usize },
    #[error("route set has {got} auxiliary routes, config expects {expected}")]
    AuxCountMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Config(#[from] CoreError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Fsm(#[from] FsmError),
}

/// Aggregated auxiliary reference: per-token mean of floored seed
/// log-probabilities. Entries lie in `[ln(epsilon_floor), 0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedReference {
    ell_tilde: Vec<f64>,
}

impl AggregatedReference {
    pub fn values(&self) -> &[f64] {
        &self.ell_tilde
    }

    pub fn len(&self) -> usize {
        self.ell_tilde.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ell_tilde.is_empty()
    }
}

/// Combines the auxiliary seed distributions into the negative-evidence
/// reference.
///
/// Probabilities are floored at `cfg.epsilon_floor` before the log-space
/// mean so that a zero auxiliary probability cannot produce an infinite
/// boost. Summation runs in ascending seed order with plain accumulation;
/// the result is bit-reproducible for a fixed seed order. With
/// `cfg.aggregate = false` the reference is the floored seed-0 row.
pub fn aggregate_seeds(
    aux: &[StepDistribution],
    cfg: &GuidanceConfig,
) -> Result<AggregatedReference, GuidanceError> {
    let first = aux.first().ok_or(GuidanceError::EmptySeeds)?;
    let len = first.len();
    for (seed, row) in aux.iter().enumerate() {
        if row.len() != len {
            return Err(GuidanceError::SeedLengthMismatch {
                seed,
                expected: len,
                got: row.len(),
            });
        }
    }
    let floor = cfg.epsilon_floor.ln();
    let ell_tilde = if cfg.aggregate {
        let inv = 1.0 / aux.len() as f64;
        let mut acc = vec![0.0f64; len];
        for row in aux {
            for (a, &lp) in acc.iter_mut().zip(row.logprobs()) {
                *a += lp.max(floor);
            }
        }
        acc.iter_mut().for_each(|a| *a *= inv);
        acc
    } else {
        first.logprobs().iter().map(|&lp| lp.max(floor)).collect()
    };
    Ok(AggregatedReference { ell_tilde })
}

/// Per-step guidance coefficient: `alpha * decay^(k-1)` over the 1-based
/// digit index of the slot's component, so the schedule restarts at the
/// first y digit. Constant `alpha` when decay is disabled.
pub fn alpha_schedule(slot: DigitSlot, cfg: &GuidanceConfig) -> f64 {
    if cfg.use_decay {
        cfg.alpha * cfg.decay.powi(i32::from(slot.index) - 1)
    } else {
        cfg.alpha
    }
}

/// Fused per-token scores for one decode step.
///
/// When `guided` is false the scores are the main-route log-probabilities
/// bit for bit; when true they differ from the main route only at digit ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedScores {
    scores: Vec<f64>,
    alpha_used: f64,
    guided: bool,
}

impl FusedScores {
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn alpha_used(&self) -> f64 {
        self.alpha_used
    }

    pub fn guided(&self) -> bool {
        self.guided
    }

    /// Greedy pick over the fused scores, ties toward the lowest id.
    pub fn argmax(&self) -> TokenId {
        argmax(&self.scores)
    }
}

/// Applies the negative-evidence adjustment to digit tokens when a digit
/// slot is active; otherwise passes the main-route log-probabilities
/// through unchanged.
pub fn fuse(
    main: &StepDistribution,
    reference: &AggregatedReference,
    slot: Option<DigitSlot>,
    vocab: &Vocabulary,
    cfg: &GuidanceConfig,
) -> Result<FusedScores, GuidanceError> {
    if main.len() != vocab.len() {
        return Err(GuidanceError::LengthMismatch {
            expected: vocab.len(),
            got: main.len(),
        });
    }
    if reference.len() != vocab.len() {
        return Err(GuidanceError::LengthMismatch {
            expected: vocab.len(),
            got: reference.len(),
        });
    }
    let mut scores = main.logprobs().to_vec();
    let Some(slot) = slot else {
        return Ok(FusedScores {
            scores,
            alpha_used: 0.0,
            guided: false,
        });
    };
    let alpha_t = alpha_schedule(slot, cfg);
    for id in vocab.digit_ids() {
        scores[id] = main.logprob(id) - alpha_t * reference.values()[id];
    }
    Ok(FusedScores {
        scores,
        alpha_used: alpha_t,
        guided: true,
    })
}

/// Softmax-normalizes fused scores back into a distribution. Stable under
/// large scores via max subtraction; the argmax is preserved.
pub fn normalize(fused: &FusedScores) -> Result<StepDistribution, GuidanceError> {
    let max = fused
        .scores
        .iter()
        .copied()
        .filter(|s| s.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(GuidanceError::NoFiniteScore);
    }
    let lse = max
        + fused
            .scores
            .iter()
            .map(|s| (s - max).exp())
            .sum::<f64>()
            .ln();
    let logprobs = fused.scores.iter().map(|s| s - lse).collect();
    Ok(StepDistribution::new(logprobs)?)
}

/// `lambda = alpha / (1 - alpha)` for `alpha` in `[0, 1)`.
pub fn lambda_from_alpha(alpha: f64) -> Result<f64, GuidanceError> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(GuidanceError::AlphaOutOfDomain(alpha));
    }
    Ok(alpha / (1.0 - alpha))
}

/// `alpha = lambda / (1 + lambda)` for `lambda >= 0`.
pub fn alpha_from_lambda(lambda: f64) -> Result<f64, GuidanceError> {
    if !(lambda >= 0.0) {
        return Err(GuidanceError::LambdaOutOfDomain(lambda));
    }
    Ok(lambda / (1.0 + lambda))
}

/// One step of a guided decode, kept for reporting.
#[derive(Debug, Clone)]
pub struct DecodeStep {
    pub main: StepDistribution,
    pub fused: FusedScores,
    pub slot: Option<DigitSlot>,
    pub token: TokenId,
}

/// Result of a decode: emitted tokens, the parsed coordinate when the
/// template completed, and per-step records.
#[derive(Debug, Clone)]
pub struct DecodeOutput {
    pub tokens: Vec<TokenId>,
    pub coord: Option<Coordinate>,
    pub steps: Vec<DecodeStep>,
    pub final_state: TemplateState,
}

/// Greedy guided decoding.
///
/// Every step queries the main route and all auxiliary routes with the same
/// emitted prefix, aggregates the auxiliary rows, fuses when the template
/// sits in a digit slot, and picks the best-scored token (ties toward the
/// lowest id). In strict mode the candidate set is restricted to tokens the
/// template accepts; by default an off-template pick simply switches
/// guidance off for the rest of the sequence. Terminates on the
/// end-of-sequence token; exceeding `cfg.max_steps` is an error.
pub fn decode(
    routes: &RouteSet,
    vocab: &Vocabulary,
    cfg: &GuidanceConfig,
    strict: bool,
) -> Result<DecodeOutput, GuidanceError> {
    cfg.validate()?;
    if routes.aux.len() != cfg.seeds {
        return Err(GuidanceError::AuxCountMismatch {
            expected: cfg.seeds,
            got: routes.aux.len(),
        });
    }
    let mut state = TemplateState::initial();
    let mut tokens: Vec<TokenId> = Vec::new();
    let mut steps: Vec<DecodeStep> = Vec::new();

    for _ in 0..cfg.max_steps {
        let main = routes.main.step(&tokens)?;
        let aux_rows = routes
            .aux
            .iter()
            .map(|p| p.step(&tokens))
            .collect::<Result<Vec<_>, _>>()?;
        let reference = aggregate_seeds(&aux_rows, cfg)?;
        let slot = state.guidance_slot();
        let fused = fuse(&main, &reference, slot, vocab, cfg)?;

        let token = if strict {
            let mut best: Option<TokenId> = None;
            for id in 0..vocab.len() {
                if state.accepts(id, vocab, cfg.max_digits)
                    && best.map_or(true, |b| fused.scores()[id] > fused.scores()[b])
                {
                    best = Some(id);
                }
            }
            best.expect("template always accepts at least one token class")
        } else {
            fused.argmax()
        };

        state = state.advance(token, vocab, cfg.max_digits, strict)?;
        tokens.push(token);
        steps.push(DecodeStep {
            main,
            fused,
            slot,
            token,
        });

        if vocab.class(token) == crate::core::TokenClass::Eos {
            return Ok(DecodeOutput {
                coord: state.coordinate(),
                tokens,
                steps,
                final_state: state,
            });
        }
    }
    Err(GuidanceError::StepCapExceeded { cap: cfg.max_steps })
}

/// Plain greedy decoding of a single route: no aggregation, no fusion.
/// The reference behavior that guided decoding must reproduce at
/// `alpha = 0`.
pub fn greedy_decode_route(
    route: &dyn RouteProvider,
    vocab: &Vocabulary,
    max_steps: usize,
    max_digits: u8,
) -> Result<DecodeOutput, GuidanceError> {
    let mut state = TemplateState::initial();
    let mut tokens: Vec<TokenId> = Vec::new();
    let mut steps: Vec<DecodeStep> = Vec::new();
    for _ in 0..max_steps {
        let main = route.step(&tokens)?;
        let token = main.argmax();
        let slot = state.guidance_slot();
        state = state.advance(token, vocab, max_digits, false)?;
        tokens.push(token);
        steps.push(DecodeStep {
            fused: FusedScores {
                scores: main.logprobs().to_vec(),
                alpha_used: 0.0,
                guided: false,
            },
            main,
            slot,
            token,
        });
        if vocab.class(token) == crate::core::TokenClass::Eos {
            return Ok(DecodeOutput {
                coord: state.coordinate(),
                tokens,
                steps,
                final_state: state,
            });
        }
    }
    Err(GuidanceError::StepCapExceeded { cap: max_steps })
}
