//! Guided-decoding engine and analysis toolkit for coordinate prediction.
//!
//! The engine fuses a position-conditioned main decoding route with an
//! aggregate of position-unconditioned auxiliary routes. The aggregated
//! auxiliary log-probabilities act as negative evidence on digit tokens
//! only, gated by a finite-state machine that tracks the `[x, y]` output
//! template. The analysis half measures coordinate dispersion across runs
//! (diagonal-normalized pairwise distances against analytic and Monte-Carlo
//! baselines), number-frequency tables, and point-in-box accuracy.

pub mod analysis;
pub mod core;
pub mod corpus;
pub mod fsm;
pub mod guidance;
pub mod providers;
pub mod trace;

pub use crate::core::{
    BBox, Coordinate, CoreError, GuidanceConfig, ImageMeta, PredictionRecord, RouteLabel,
    StepDistribution, StructuralIds, TokenId, Vocabulary,
};
pub use crate::fsm::{Axis, DigitSlot, Phase, TemplateState};
pub use crate::guidance::{
    aggregate_seeds, alpha_from_lambda, alpha_schedule, decode, fuse, greedy_decode_route,
    lambda_from_alpha, normalize, AggregatedReference, DecodeOutput, FusedScores,
};
pub use crate::providers::{RouteProvider, RouteSet, SyntheticModelSpec};
pub use crate::trace::TraceFile;
