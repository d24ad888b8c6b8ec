//! Seeded synthetic corpus generation: traces with known failure modes for
//! the guidance engine, plus multi-run prediction sets for the dispersion
//! analysis. Everything derives from one seed, so regenerated corpora are
//! byte-identical.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{
    decimal_digits, BBox, Coordinate, CoreError, ImageMeta, PredictionRecord, RouteLabel,
    Vocabulary, DEFAULT_ALPHA, DEFAULT_MAX_DIGITS, DEFAULT_MAX_STEPS,
};
use crate::fsm::Axis;
use crate::guidance::{greedy_decode_route, GuidanceError};
use crate::providers::{
    mix, synthetic_route, synthetic_route_set, synthetic_route_with_seed, ProviderError,
    SlotQuirk, SyntheticModelSpec,
};
use crate::trace::{TraceError, TraceFile, TraceHeader, TraceImage, TraceStep};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Decode(#[from] GuidanceError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("invalid corpus config: {0}")]
    InvalidConfig(String),
}

/// High-resolution screen sizes the generator draws from.
const RESOLUTIONS: [(u32, u32); 6] = [
    (1920, 1080),
    (2560, 1440),
    (2560, 1600),
    (2880, 1800),
    (3440, 1440),
    (3840, 2160),
];

const CATEGORIES: [&str; 6] = ["cad", "creative", "dev", "office", "os", "scientific"];

/// Case-mix weights: attractor-pulled first digits (guidance fixes them),
/// clean images, fragile late digits (constant guidance overshoots them),
/// and borderline pulls (single-seed references are too noisy for them).
const WEIGHT_PULLED: f64 = 0.27;
const WEIGHT_CLEAN: f64 = 0.37;
const WEIGHT_FRAGILE: f64 = 0.18;

/// Ground-truth boxes extend this many pixels from the target point.
const BBOX_EXTENT: u32 = 9;

/// Fragile-digit construction: the correct digit leads the distractor by
/// this logit margin, and the distractor sits this far below the digit
/// baseline in the unconditioned routes.
const FRAGILE_MARGIN: f64 = 1.1;
const FRAGILE_AUX_DROP: f64 = 3.0;

/// Borderline pulls size the pull so that flipping them back needs at
/// least this fraction of the nominal aggregated reference gap.
const BORDERLINE_FRACTION: f64 = 0.85;

/// Pull gaps are calibrated against this unconditioned margin; the leaked
/// level in the main route scales linearly with the configured bias, so a
/// corpus generated with a tiny bias margin decodes to its targets even
/// without guidance.
const BIAS_CALIBRATION: f64 = 6.0;

/// Logit gap of the pulled digit over the correct one: the leak level
/// `(signal + raw_gap) * bias / BIAS_CALIBRATION` minus the signal.
fn scaled_pull_gap(signal: f64, raw_gap: f64, bias: f64) -> f64 {
    (signal + raw_gap) * (bias / BIAS_CALIBRATION) - signal
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub images: usize,
    pub seed: u64,
    /// Auxiliary seeds per trace (S).
    pub aux_seeds: usize,
    /// Decoded runs per condition per image in the predictions file.
    pub runs_per_condition: usize,
    pub signal_strength: f64,
    pub bias_strength: f64,
    pub attractors: Vec<u32>,
    /// Digit-logit noise amplitude for trace routes.
    pub noise_amplitude: f64,
    /// Half-width of the per-seed bias sharpness spread of unconditioned
    /// routes.
    pub seed_bias_spread: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            images: 220,
            seed: 7,
            aux_seeds: 5,
            runs_per_condition: 5,
            signal_strength: 4.5,
            bias_strength: 6.0,
            attractors: vec![1024, 512, 1056],
            noise_amplitude: 0.15,
            seed_bias_spread: 0.3,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.images == 0 {
            return Err(CorpusError::InvalidConfig("images must be >= 1".into()));
        }
        if self.aux_seeds == 0 {
            return Err(CorpusError::InvalidConfig("aux_seeds must be >= 1".into()));
        }
        if self.runs_per_condition < 2 {
            return Err(CorpusError::InvalidConfig(
                "runs_per_condition must be >= 2 for pairwise statistics".into(),
            ));
        }
        if self.attractors.is_empty() {
            return Err(CorpusError::InvalidConfig(
                "at least one attractor is required".into(),
            ));
        }
        for &a in &self.attractors {
            if decimal_digits(a) > DEFAULT_MAX_DIGITS {
                return Err(CorpusError::InvalidConfig(format!(
                    "attractor {a} exceeds {DEFAULT_MAX_DIGITS} digits"
                )));
            }
        }
        Ok(())
    }
}

/// One generated image: metadata, the true target, the synthetic model it
/// was sampled from and the recorded trace.
#[derive(Debug, Clone)]
pub struct GeneratedImage {
    pub meta: ImageMeta,
    pub target: Coordinate,
    pub spec: Arc<SyntheticModelSpec>,
    pub trace: TraceFile,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub images: Vec<GeneratedImage>,
    pub predictions: Vec<PredictionRecord>,
}

/// Ground-truth line in `groundtruth.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub target: Coordinate,
    pub gt_bbox: BBox,
    pub category: String,
    pub ui_type: String,
}

fn nth_digit(value: u32, index: u8) -> Option<u8> {
    let s = value.to_string();
    s.as_bytes().get(usize::from(index) - 1).map(|b| b - b'0')
}

fn component(target: Coordinate, axis: Axis) -> u32 {
    match axis {
        Axis::X => target.x,
        Axis::Y => target.y,
    }
}

/// Picks the quirks of one image given its target and nearest attractors.
fn roll_quirks(
    rng: &mut ChaCha8Rng,
    target: Coordinate,
    spec_probe: &SyntheticModelSpec,
    signal_strength: f64,
    bias_strength: f64,
) -> Vec<SlotQuirk> {
    let roll: f64 = rng.gen();
    let mut quirks = Vec::new();
    if roll < WEIGHT_PULLED {
        // First digits pulled toward the attractor strongly enough that the
        // plain decode goes wrong and guided decoding reliably recovers.
        let axes: &[Axis] = match rng.gen_range(0..3u8) {
            0 => &[Axis::X],
            1 => &[Axis::Y],
            _ => &[Axis::X, Axis::Y],
        };
        for &axis in axes {
            let gap = scaled_pull_gap(signal_strength, rng.gen_range(0.8..1.6), bias_strength);
            let b = nth_digit(spec_probe.nearest_attractor(axis), 1);
            let d = nth_digit(component(target, axis), 1);
            if b.is_some() && b != d {
                quirks.push(SlotQuirk::AttractorPull {
                    axis,
                    index: 1,
                    gap,
                });
            }
        }
    } else if roll < WEIGHT_PULLED + WEIGHT_CLEAN {
        // Clean image.
    } else if roll < WEIGHT_PULLED + WEIGHT_CLEAN + WEIGHT_FRAGILE {
        // A late digit with a slim lead over a distractor the unconditioned
        // routes strongly disprefer; decayed guidance leaves it alone,
        // constant guidance flips it.
        let mut candidates = Vec::new();
        for axis in [Axis::X, Axis::Y] {
            let comp = component(target, axis);
            let attractor = spec_probe.nearest_attractor(axis);
            let len = decimal_digits(comp);
            for k in 2..=len.min(3) {
                let d = nth_digit(comp, k);
                let b = nth_digit(attractor, k);
                if let (Some(d), Some(b)) = (d, b) {
                    if d != b {
                        candidates.push((axis, k, d, b));
                    }
                }
            }
        }
        if !candidates.is_empty() {
            let (axis, k, d, b) = candidates[rng.gen_range(0..candidates.len())];
            if let Some(distractor) = [3u8, 7, 1, 9]
                .iter()
                .map(|o| (d + o) % 10)
                .find(|&c| c != d && c != b)
            {
                quirks.push(SlotQuirk::FragileLead {
                    axis,
                    index: k,
                    distractor,
                    margin: FRAGILE_MARGIN,
                    aux_drop: FRAGILE_AUX_DROP,
                });
            }
        }
    } else {
        // Borderline pull: sized so the aggregated reference flips it back
        // dependably while a lone seed's sharpness draw often falls short.
        let gap = scaled_pull_gap(
            signal_strength,
            DEFAULT_ALPHA * bias_strength * BORDERLINE_FRACTION,
            bias_strength,
        );
        let first = if rng.gen_bool(0.5) { Axis::X } else { Axis::Y };
        for axis in [first, if first == Axis::X { Axis::Y } else { Axis::X }] {
            let b = nth_digit(spec_probe.nearest_attractor(axis), 1);
            let d = nth_digit(component(target, axis), 1);
            if b.is_some() && b != d {
                quirks.push(SlotQuirk::AttractorPull {
                    axis,
                    index: 1,
                    gap,
                });
                break;
            }
        }
    }
    quirks
}

/// Generates the full corpus: one trace per image plus
/// `runs_per_condition` normal-mode and shuffled-mode decodes per image for
/// the dispersion analysis.
pub fn generate(config: &CorpusConfig) -> Result<Corpus, CorpusError> {
    config.validate()?;
    let vocab = Arc::new(Vocabulary::toy());
    let mut images = Vec::with_capacity(config.images);
    let mut predictions = Vec::new();

    for i in 0..config.images {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, 0x1000_0000 + i as u64));
        let (width, height) = RESOLUTIONS[rng.gen_range(0..RESOLUTIONS.len())];
        let target = Coordinate::new(rng.gen_range(0..width), rng.gen_range(0..height));
        let category = CATEGORIES[rng.gen_range(0..CATEGORIES.len())];
        let ui_type = if rng.gen_bool(0.6) { "text" } else { "icon" };
        let id = format!("trace-{i:04}");

        let bbox = BBox::new(
            target.x.saturating_sub(BBOX_EXTENT),
            target.y.saturating_sub(BBOX_EXTENT),
            (target.x + BBOX_EXTENT).min(width),
            (target.y + BBOX_EXTENT).min(height),
        )?;
        let meta = ImageMeta::new(id.clone(), width, height)?
            .with_gt_bbox(bbox)?
            .with_labels(category, ui_type);

        let mut spec =
            SyntheticModelSpec::new(meta.clone(), target, config.signal_strength, config.bias_strength);
        spec.bias_targets = config.attractors.clone();
        spec.noise_seed = mix(config.seed, 0x2000_0000 + i as u64);
        spec.noise_amplitude = config.noise_amplitude;
        spec.seed_bias_spread = config.seed_bias_spread;
        spec.quirks = roll_quirks(
            &mut rng,
            target,
            &spec,
            config.signal_strength,
            config.bias_strength,
        );
        spec.validate()?;
        let spec = Arc::new(spec);

        let trace = record_trace(&spec, &vocab, config.aux_seeds)?;
        predictions.extend(dispersion_predictions(&spec, &vocab, &meta, config)?);
        images.push(GeneratedImage {
            meta,
            target,
            spec,
            trace,
        });
    }

    Ok(Corpus {
        config: config.clone(),
        images,
        predictions,
    })
}

/// Records one trace by walking the main route greedily and logging the
/// main and auxiliary rows at every step.
fn record_trace(
    spec: &Arc<SyntheticModelSpec>,
    vocab: &Arc<Vocabulary>,
    aux_seeds: usize,
) -> Result<TraceFile, CorpusError> {
    let routes = synthetic_route_set(spec, vocab, aux_seeds);
    let mut tokens = Vec::new();
    let mut steps = Vec::new();
    for index in 0..DEFAULT_MAX_STEPS {
        let main = routes.main.step(&tokens)?;
        let aux: Vec<Vec<f64>> = routes
            .aux
            .iter()
            .map(|p| p.step(&tokens).map(|d| d.logprobs().to_vec()))
            .collect::<Result<_, _>>()?;
        let chosen = main.argmax();
        steps.push(TraceStep {
            index,
            main: main.logprobs().to_vec(),
            aux,
        });
        tokens.push(chosen);
        if chosen == vocab.structural().eos {
            break;
        }
    }

    let header = TraceHeader {
        vocab: vocab.tokens().to_vec(),
        digit_ids: vocab.digit_ids().collect(),
        structural: vocab.structural(),
        seeds: aux_seeds,
        image: TraceImage {
            width: spec.image.width,
            height: spec.image.height,
            gt_bbox: spec.image.gt_bbox,
            category: spec.image.category.clone(),
            ui_type: spec.image.ui_type.clone(),
        },
        notes: None,
    };
    Ok(TraceFile { header, steps })
}

/// Decodes each condition `runs_per_condition` times. Normal-condition
/// runs model run-to-run instability by re-anchoring the conditioned route
/// at a uniformly drawn in-image point, so their dispersion sits near the
/// uniform-pair baseline; shuffled-condition runs decode the trace's own
/// auxiliary routes standalone and collapse onto the attractors.
fn dispersion_predictions(
    spec: &Arc<SyntheticModelSpec>,
    vocab: &Arc<Vocabulary>,
    meta: &ImageMeta,
    config: &CorpusConfig,
) -> Result<Vec<PredictionRecord>, CorpusError> {
    let mut out = Vec::with_capacity(2 * config.runs_per_condition);
    for run in 0..config.runs_per_condition {
        let mut anchor_rng =
            ChaCha8Rng::seed_from_u64(mix(spec.noise_seed, 0x3000_0000 + run as u64));
        let mut scattered = (**spec).clone();
        scattered.target = Coordinate::new(
            anchor_rng.gen_range(0..meta.width),
            anchor_rng.gen_range(0..meta.height),
        );
        scattered.quirks.clear();
        scattered.noise_seed = mix(spec.noise_seed, 0x4000_0000 + run as u64);
        let route = synthetic_route(Arc::new(scattered), Arc::clone(vocab), false);
        let decoded =
            greedy_decode_route(route.as_ref(), vocab, DEFAULT_MAX_STEPS, DEFAULT_MAX_DIGITS)?;
        if let Some(coord) = decoded.coord {
            out.push(PredictionRecord {
                image: meta.clone(),
                coord,
                route: RouteLabel::Normal,
                run: run as u32,
            });
        }
    }
    for k in 0..config.runs_per_condition {
        let route = synthetic_route_with_seed(
            Arc::clone(spec),
            Arc::clone(vocab),
            true,
            mix(spec.noise_seed, 1 + k as u64),
        );
        let decoded =
            greedy_decode_route(route.as_ref(), vocab, DEFAULT_MAX_STEPS, DEFAULT_MAX_DIGITS)?;
        if let Some(coord) = decoded.coord {
            out.push(PredictionRecord {
                image: meta.clone(),
                coord,
                route: RouteLabel::Shuffled(k as u32),
                run: k as u32,
            });
        }
    }
    Ok(out)
}

/// Paths produced by [`write_to_dir`].
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusPaths {
    pub traces_dir: PathBuf,
    pub trace_files: Vec<PathBuf>,
    pub predictions: PathBuf,
    pub groundtruth: PathBuf,
}

/// Writes `traces/trace-NNNN.jsonl`, `predictions.jsonl` and
/// `groundtruth.jsonl` under `dir`.
pub fn write_to_dir(corpus: &Corpus, dir: &Path) -> Result<CorpusPaths, CorpusError> {
    let traces_dir = dir.join("traces");
    fs::create_dir_all(&traces_dir)?;

    let mut trace_files = Vec::with_capacity(corpus.images.len());
    for image in &corpus.images {
        let path = traces_dir.join(format!("{}.jsonl", image.meta.id));
        crate::trace::write_trace_file(&path, &image.trace)?;
        trace_files.push(path);
    }

    let predictions = dir.join("predictions.jsonl");
    let mut buf = String::new();
    for p in &corpus.predictions {
        buf.push_str(&serde_json::to_string(p).expect("prediction serializes"));
        buf.push('\n');
    }
    fs::write(&predictions, buf)?;

    let groundtruth = dir.join("groundtruth.jsonl");
    let mut buf = String::new();
    for image in &corpus.images {
        let record = GroundTruthRecord {
            id: image.meta.id.clone(),
            width: image.meta.width,
            height: image.meta.height,
            target: image.target,
            gt_bbox: image.meta.gt_bbox.expect("generated images carry boxes"),
            category: image.meta.category.clone().unwrap_or_default(),
            ui_type: image.meta.ui_type.clone().unwrap_or_default(),
        };
        buf.push_str(&serde_json::to_string(&record).expect("ground truth serializes"));
        buf.push('\n');
    }
    fs::write(&groundtruth, buf)?;

    Ok(CorpusPaths {
        traces_dir,
        trace_files,
        predictions,
        groundtruth,
    })
}

/// Sorted list of the `.jsonl` traces under a directory.
pub fn trace_paths(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
        .collect();
    paths.sort();
    Ok(paths)
}
