//! Sources of per-step distributions: replay of recorded traces, and a
//! synthetic model that separates a position-conditioned pathway (locks
//! onto the target point) from a position-unconditioned one (collapses to
//! preferred attractor coordinates).

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::core::{
    decimal_digits, CoreError, Coordinate, ImageMeta, StepDistribution, TokenId, Vocabulary,
    DEFAULT_MAX_DIGITS,
};
use crate::fsm::{Axis, FsmError, Phase, TemplateState};
use crate::trace::TraceFile;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("route exhausted: no recorded row for step {step} (trace has {steps} steps)")]
    Exhausted { step: usize, steps: usize },
    #[error("trace declares {available} auxiliary seeds, {requested} requested")]
    NotEnoughSeeds { available: usize, requested: usize },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Fsm(#[from] FsmError),
}

/// A source of one step distribution per emitted prefix. Implementations
/// are read-only after construction and safe to query concurrently.
pub trait RouteProvider: Send + Sync {
    fn step(&self, prefix: &[TokenId]) -> Result<StepDistribution, ProviderError>;
}

/// The main route plus its auxiliary seeds, all over one vocabulary.
pub struct RouteSet {
    pub main: Box<dyn RouteProvider>,
    pub aux: Vec<Box<dyn RouteProvider>>,
}

/// Replays recorded rows by step index (= prefix length).
pub struct ReplayRoute {
    rows: Arc<Vec<StepDistribution>>,
}

impl ReplayRoute {
    pub fn new(rows: Vec<StepDistribution>) -> Self {
        Self {
            rows: Arc::new(rows),
        }
    }
}

impl RouteProvider for ReplayRoute {
    fn step(&self, prefix: &[TokenId]) -> Result<StepDistribution, ProviderError> {
        let step = prefix.len();
        self.rows
            .get(step)
            .cloned()
            .ok_or(ProviderError::Exhausted {
                step,
                steps: self.rows.len(),
            })
    }
}

/// Builds a replaying route set from a validated trace; the first
/// `seeds` auxiliary rows are used.
pub fn replay_route_set(trace: &TraceFile, seeds: usize) -> Result<RouteSet, ProviderError> {
    if seeds > trace.header.seeds {
        return Err(ProviderError::NotEnoughSeeds {
            available: trace.header.seeds,
            requested: seeds,
        });
    }
    let main_rows = trace
        .steps
        .iter()
        .map(|s| StepDistribution::new(s.main.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut aux: Vec<Box<dyn RouteProvider>> = Vec::with_capacity(seeds);
    for k in 0..seeds {
        let rows = trace
            .steps
            .iter()
            .map(|s| StepDistribution::new(s.aux[k].clone()))
            .collect::<Result<Vec<_>, _>>()?;
        aux.push(Box::new(ReplayRoute::new(rows)));
    }
    Ok(RouteSet {
        main: Box::new(ReplayRoute::new(main_rows)),
        aux,
    })
}

/// Per-slot shaping of the synthetic main distribution, used to build
/// fixtures with known failure modes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SlotQuirk {
    /// The conditioned route prefers the attractor digit over the correct
    /// one by `gap` logits at this slot.
    AttractorPull { axis: Axis, index: u8, gap: f64 },
    /// The conditioned route keeps the correct digit only `margin` logits
    /// ahead of `distractor`, and the unconditioned routes put the
    /// distractor `aux_drop` logits below the digit baseline.
    FragileLead {
        axis: Axis,
        index: u8,
        distractor: u8,
        margin: f64,
        aux_drop: f64,
    },
}

/// Parameters of the synthetic two-pathway model.
///
/// The conditioned pathway gives the correct digit of the target a
/// `signal_strength` logit margin; the unconditioned pathway gives the
/// digits of the nearest attractor a `bias_strength` margin regardless of
/// the target. Digit logits receive additive noise drawn per (step, token)
/// from a stream keyed on `noise_seed`; structural tokens stay
/// near-deterministic. Configuring the noise amplitude above the margins
/// scatters the decoded points, which is how multi-run dispersion fixtures
/// are built.
///
/// `seed_bias_spread` lets each unconditioned route draw its own bias
/// sharpness in `bias_strength * [1 - spread, 1 + spread]`, modelling that
/// one shuffle is only a noisy sample of the underlying bias; zero (the
/// default) keeps every route at the nominal margin.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticModelSpec {
    pub image: ImageMeta,
    pub target: Coordinate,
    pub signal_strength: f64,
    pub bias_targets: Vec<u32>,
    pub bias_strength: f64,
    pub noise_seed: u64,
    pub noise_amplitude: f64,
    pub seed_bias_spread: f64,
    pub quirks: Vec<SlotQuirk>,
}

impl SyntheticModelSpec {
    pub fn new(
        image: ImageMeta,
        target: Coordinate,
        signal_strength: f64,
        bias_strength: f64,
    ) -> Self {
        Self {
            image,
            target,
            signal_strength,
            bias_targets: vec![1024, 512, 1056],
            bias_strength,
            noise_seed: 0,
            noise_amplitude: 0.0,
            seed_bias_spread: 0.0,
            quirks: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        self.image.validate().map_err(ProviderError::Core)?;
        if self.signal_strength < 0.0 || self.bias_strength < 0.0 {
            return Err(ProviderError::InvalidSpec(
                "signal and bias margins must be >= 0".to_string(),
            ));
        }
        if self.bias_targets.is_empty() {
            return Err(ProviderError::InvalidSpec(
                "at least one bias attractor is required".to_string(),
            ));
        }
        for &a in &self.bias_targets {
            if decimal_digits(a) > DEFAULT_MAX_DIGITS {
                return Err(ProviderError::InvalidSpec(format!(
                    "attractor {a} exceeds {DEFAULT_MAX_DIGITS} digits"
                )));
            }
        }
        if !(self.noise_amplitude >= 0.0) {
            return Err(ProviderError::InvalidSpec(
                "noise amplitude must be >= 0".to_string(),
            ));
        }
        if !(0.0..1.0).contains(&self.seed_bias_spread) {
            return Err(ProviderError::InvalidSpec(format!(
                "seed_bias_spread must lie in [0, 1), got {}",
                self.seed_bias_spread
            )));
        }
        Ok(())
    }

    /// The attractor closest to the target on `axis` (ties toward the
    /// smaller attractor value).
    pub fn nearest_attractor(&self, axis: Axis) -> u32 {
        let component = match axis {
            Axis::X => self.target.x,
            Axis::Y => self.target.y,
        };
        let mut best = self.bias_targets[0];
        for &a in &self.bias_targets[1..] {
            let d = a.abs_diff(component);
            let bd = best.abs_diff(component);
            if d < bd || (d == bd && a < best) {
                best = a;
            }
        }
        best
    }
}

const STRUCTURAL_PEAK: f64 = 9.0;
const STRUCTURAL_SUPPRESS: f64 = -8.0;

/// Synthetic per-step distribution source; `conditioned` selects whether
/// the pathway follows the target or the nearest attractor.
pub struct SyntheticRoute {
    spec: Arc<SyntheticModelSpec>,
    vocab: Arc<Vocabulary>,
    conditioned: bool,
    noise_seed: u64,
    /// Per-route multiplier on the bias margin, drawn once per route from
    /// the spread declared by the spec.
    bias_scale: f64,
}

/// Handle to a synthetic route: `shuffled = false` is the
/// position-conditioned pathway, `shuffled = true` the unconditioned one.
/// The noise stream is keyed on the spec's own seed.
pub fn synthetic_route(
    spec: Arc<SyntheticModelSpec>,
    vocab: Arc<Vocabulary>,
    shuffled: bool,
) -> Box<dyn RouteProvider> {
    let noise_seed = spec.noise_seed;
    synthetic_route_with_seed(spec, vocab, shuffled, noise_seed)
}

/// Like [`synthetic_route`] with an explicit noise seed, for per-seed
/// auxiliary routes and per-run dispersion fixtures.
pub fn synthetic_route_with_seed(
    spec: Arc<SyntheticModelSpec>,
    vocab: Arc<Vocabulary>,
    shuffled: bool,
    noise_seed: u64,
) -> Box<dyn RouteProvider> {
    let bias_scale = if shuffled && spec.seed_bias_spread > 0.0 {
        let u: f64 = ChaCha8Rng::seed_from_u64(mix(noise_seed, 0x5ca1e)).gen();
        1.0 + spec.seed_bias_spread * (2.0 * u - 1.0)
    } else {
        1.0
    };
    Box::new(SyntheticRoute {
        spec,
        vocab,
        conditioned: !shuffled,
        noise_seed,
        bias_scale,
    })
}

/// A conditioned main route plus `seeds` unconditioned auxiliary routes
/// whose noise seeds derive from the spec seed.
pub fn synthetic_route_set(
    spec: &Arc<SyntheticModelSpec>,
    vocab: &Arc<Vocabulary>,
    seeds: usize,
) -> RouteSet {
    let main = synthetic_route(Arc::clone(spec), Arc::clone(vocab), false);
    let aux = (0..seeds)
        .map(|k| {
            synthetic_route_with_seed(
                Arc::clone(spec),
                Arc::clone(vocab),
                true,
                mix(spec.noise_seed, 1 + k as u64),
            )
        })
        .collect();
    RouteSet { main, aux }
}

/// SplitMix64 keyed combination; stable across platforms.
pub(crate) fn mix(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SyntheticRoute {
    fn structural_slot(&self, peak: TokenId) -> StepDistribution {
        let v = &self.vocab;
        let mut logits = vec![STRUCTURAL_SUPPRESS; v.len()];
        for id in v.digit_ids() {
            logits[id] = 0.0;
        }
        logits[peak] = STRUCTURAL_PEAK;
        StepDistribution::from_logits(&logits)
    }

    fn digit_slot(&self, axis: Axis, index: u8, step: usize) -> StepDistribution {
        let spec = &self.spec;
        let v = &self.vocab;
        let component = if self.conditioned {
            match axis {
                Axis::X => spec.target.x,
                Axis::Y => spec.target.y,
            }
        } else {
            spec.nearest_attractor(axis)
        };
        let digits = component.to_string();
        let len = digits.len() as u8;

        if index > len {
            // The number is complete on this pathway; emit the separator.
            let peak = match axis {
                Axis::X => v.structural().comma,
                Axis::Y => v.structural().close,
            };
            return self.structural_slot(peak);
        }

        let mut logits = vec![STRUCTURAL_SUPPRESS; v.len()];
        for id in v.digit_ids() {
            logits[id] = 0.0;
        }
        let planned_digit = digits.as_bytes()[usize::from(index) - 1] - b'0';
        let planned = v
            .digit_token(planned_digit)
            .expect("toy-style vocabularies carry all ten digits");
        let strength = if self.conditioned {
            spec.signal_strength
        } else {
            spec.bias_strength * self.bias_scale
        };
        logits[planned] += strength;

        for quirk in &spec.quirks {
            match *quirk {
                SlotQuirk::AttractorPull {
                    axis: qa,
                    index: qi,
                    gap,
                } if self.conditioned && qa == axis && qi == index => {
                    let attractor = spec.nearest_attractor(axis).to_string();
                    if let Some(&b) = attractor.as_bytes().get(usize::from(index) - 1) {
                        let biased = v.digit_token(b - b'0').expect("digit token");
                        if biased != planned {
                            logits[biased] = logits[planned] + gap;
                        }
                    }
                }
                SlotQuirk::FragileLead {
                    axis: qa,
                    index: qi,
                    distractor,
                    margin,
                    aux_drop,
                } if qa == axis && qi == index => {
                    let d = v.digit_token(distractor).expect("digit token");
                    if d != planned {
                        if self.conditioned {
                            logits[d] = logits[planned] - margin;
                        } else {
                            logits[d] = -aux_drop;
                        }
                    }
                }
                _ => {}
            }
        }

        if spec.noise_amplitude > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(self.noise_seed, step as u64));
            let a = spec.noise_amplitude;
            for id in v.digit_ids() {
                logits[id] += rng.gen_range(-a..a);
            }
        }
        StepDistribution::from_logits(&logits)
    }
}

impl RouteProvider for SyntheticRoute {
    fn step(&self, prefix: &[TokenId]) -> Result<StepDistribution, ProviderError> {
        // Teacher-forced: the distribution depends only on the template
        // position implied by the prefix, not on which digits it holds.
        let mut state = TemplateState::initial();
        for &t in prefix {
            state = state.advance(t, &self.vocab, DEFAULT_MAX_DIGITS, false)?;
        }
        let s = self.vocab.structural();
        let dist = match state.phase() {
            Phase::ExpectOpen => self.structural_slot(s.open),
            Phase::XDigits => self.digit_slot(Axis::X, state.k_x(), prefix.len()),
            Phase::ExpectComma => self.structural_slot(s.comma),
            Phase::ExpectSpace => self.structural_slot(s.space),
            Phase::YDigits => self.digit_slot(Axis::Y, state.k_y(), prefix.len()),
            Phase::ExpectCloseBracket => self.structural_slot(s.close),
            Phase::ExpectEos | Phase::Done | Phase::Passthrough => self.structural_slot(s.eos),
        };
        Ok(dist)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::DEFAULT_MAX_STEPS;
    use crate::guidance::greedy_decode_route;
    use crate::trace::{TraceHeader, TraceImage, TraceStep};

    fn toy_trace(steps: usize, seeds: usize) -> TraceFile {
        let v = Vocabulary::toy();
        let header = TraceHeader {
            vocab: v.tokens().to_vec(),
            digit_ids: v.digit_ids().collect(),
            structural: v.structural(),
            seeds,
            image: TraceImage {
                width: 1920,
                height: 1080,
                gt_bbox: None,
                category: None,
                ui_type: None,
            },
            notes: None,
        };
        let row = StepDistribution::from_logits(&vec![0.0; v.len()])
            .logprobs()
            .to_vec();
        TraceFile {
            steps: (0..steps)
                .map(|index| TraceStep {
                    index,
                    main: row.clone(),
                    aux: vec![row.clone(); seeds],
                })
                .collect(),
            header,
        }
    }

    fn spec(target: Coordinate) -> SyntheticModelSpec {
        let image = ImageMeta::new("img", 1920, 1080).unwrap();
        SyntheticModelSpec::new(image, target, 4.5, 6.0)
    }

    #[test]
    fn replay_yields_recorded_rows_and_exhausts() {
        let trace = toy_trace(11, 3);
        let routes = replay_route_set(&trace, 3).unwrap();
        for step in 0..11 {
            let prefix = vec![0; step];
            let row = routes.main.step(&prefix).unwrap();
            assert_eq!(row.logprobs(), trace.steps[step].main.as_slice());
            for (k, aux) in routes.aux.iter().enumerate() {
                let row = aux.step(&prefix).unwrap();
                assert_eq!(row.logprobs(), trace.steps[step].aux[k].as_slice());
            }
        }
        let err = routes.main.step(&vec![0; 11]).unwrap_err();
        assert!(matches!(
            err,
            ProviderError::Exhausted { step: 11, steps: 11 }
        ));
    }

    #[test]
    fn replay_is_deterministic() {
        let trace = toy_trace(5, 2);
        let a = replay_route_set(&trace, 2).unwrap();
        let b = replay_route_set(&trace, 2).unwrap();
        for step in 0..5 {
            let prefix = vec![1; step];
            let ra = a.main.step(&prefix).unwrap();
            let rb = b.main.step(&prefix).unwrap();
            assert_eq!(ra, rb);
        }
    }

    #[test]
    fn replay_rejects_requesting_too_many_seeds() {
        let trace = toy_trace(2, 2);
        assert!(matches!(
            replay_route_set(&trace, 3),
            Err(ProviderError::NotEnoughSeeds {
                available: 2,
                requested: 3
            })
        ));
    }

    #[test]
    fn conditioned_route_decodes_target_without_noise() {
        let vocab = Arc::new(Vocabulary::toy());
        let spec = Arc::new(spec(Coordinate::new(659, 857)));
        let route = synthetic_route(Arc::clone(&spec), Arc::clone(&vocab), false);
        let out = greedy_decode_route(route.as_ref(), &vocab, DEFAULT_MAX_STEPS, 5).unwrap();
        assert_eq!(out.coord, Some(Coordinate::new(659, 857)));
    }

    #[test]
    fn unconditioned_route_collapses_to_the_attractor() {
        let vocab = Arc::new(Vocabulary::toy());
        let mut rng = rand::rngs::StdRng::seed_from_u64(99);
        for _ in 0..20 {
            let mut s = spec(Coordinate::new(
                rng.gen_range(0..1920),
                rng.gen_range(0..1080),
            ));
            s.bias_targets = vec![1024];
            let route = synthetic_route(Arc::new(s), Arc::clone(&vocab), true);
            let out = greedy_decode_route(route.as_ref(), &vocab, DEFAULT_MAX_STEPS, 5).unwrap();
            assert_eq!(out.coord, Some(Coordinate::new(1024, 1024)));
        }
    }

    #[test]
    fn shuffled_runs_cluster_tighter_than_normal_runs() {
        let vocab = Arc::new(Vocabulary::toy());
        let base = spec(Coordinate::new(700, 500));
        let diag = base.image.diagonal();

        let decode_points = |shuffled: bool, amplitude: f64| -> Vec<Coordinate> {
            (0..10)
                .map(|run| {
                    let mut s = base.clone();
                    s.noise_amplitude = amplitude;
                    let route = synthetic_route_with_seed(
                        Arc::new(s),
                        Arc::clone(&vocab),
                        shuffled,
                        mix(42, run),
                    );
                    greedy_decode_route(route.as_ref(), &vocab, DEFAULT_MAX_STEPS, 5)
                        .unwrap()
                        .coord
                        .unwrap()
                })
                .collect()
        };
        let mean_pairwise = |points: &[Coordinate]| {
            let mut total = 0.0;
            let mut n = 0usize;
            for i in 0..points.len() {
                for j in (i + 1)..points.len() {
                    let dx = f64::from(points[i].x) - f64::from(points[j].x);
                    let dy = f64::from(points[i].y) - f64::from(points[j].y);
                    total += dx.hypot(dy) / diag;
                    n += 1;
                }
            }
            total / n as f64
        };

        // Normal pathway with noise above the signal margin scatters;
        // shuffled pathway with mild noise collapses.
        let normal = mean_pairwise(&decode_points(false, 9.0));
        let shuffled = mean_pairwise(&decode_points(true, 0.15));
        assert!(
            shuffled < normal,
            "shuffled {shuffled} should cluster tighter than normal {normal}"
        );
        assert!(shuffled < 0.05);
        assert!(normal > 0.05);
    }

    #[test]
    fn synthetic_rows_always_validate() {
        let vocab = Arc::new(Vocabulary::toy());
        let mut s = spec(Coordinate::new(1234, 56));
        s.noise_amplitude = 3.0;
        s.quirks = vec![
            SlotQuirk::AttractorPull {
                axis: Axis::X,
                index: 1,
                gap: 1.2,
            },
            SlotQuirk::FragileLead {
                axis: Axis::Y,
                index: 2,
                distractor: 9,
                margin: 1.1,
                aux_drop: 3.0,
            },
        ];
        let spec = Arc::new(s);
        let routes = synthetic_route_set(&spec, &vocab, 4);
        // Probe a handful of prefixes along the template.
        let open = vocab.structural().open;
        let prefixes: Vec<Vec<TokenId>> = vec![
            vec![],
            vec![open],
            vec![open, 1],
            vec![open, 1, 2],
            vec![open, 1, 2, 3, 4],
            vec![open, 1, 2, vocab.structural().comma],
            vec![open, 1, 2, vocab.structural().comma, vocab.structural().space],
            vec![open, 1, 2, vocab.structural().comma, vocab.structural().space, 5],
        ];
        for prefix in prefixes {
            let row = routes.main.step(&prefix).unwrap();
            StepDistribution::new(row.logprobs().to_vec()).unwrap();
            for aux in &routes.aux {
                let row = aux.step(&prefix).unwrap();
                StepDistribution::new(row.logprobs().to_vec()).unwrap();
            }
        }
    }

    #[test]
    fn structural_tokens_are_near_deterministic() {
        let vocab = Arc::new(Vocabulary::toy());
        let spec = Arc::new(spec(Coordinate::new(659, 857)));
        for shuffled in [false, true] {
            let route = synthetic_route(Arc::clone(&spec), Arc::clone(&vocab), shuffled);
            let row = route.step(&[]).unwrap();
            assert!(row.prob(vocab.structural().open) >= 0.99);
        }
    }

    #[test]
    fn nearest_attractor_per_component() {
        let s = spec(Coordinate::new(659, 857));
        assert_eq!(s.nearest_attractor(Axis::X), 512);
        assert_eq!(s.nearest_attractor(Axis::Y), 1024);
        let s2 = spec(Coordinate::new(1040, 100));
        assert_eq!(s2.nearest_attractor(Axis::X), 1024);
        assert_eq!(s2.nearest_attractor(Axis::Y), 512);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = spec(Coordinate::new(10, 10));
        s.bias_targets.clear();
        assert!(s.validate().is_err());
        let mut s = spec(Coordinate::new(10, 10));
        s.bias_targets = vec![1_000_000];
        assert!(s.validate().is_err());
        let mut s = spec(Coordinate::new(10, 10));
        s.signal_strength = -1.0;
        assert!(s.validate().is_err());
    }
}
