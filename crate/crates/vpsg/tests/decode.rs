//! End-to-end decode behavior over replayed traces and synthetic routes.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vpsg::core::{
    Coordinate, GuidanceConfig, ImageMeta, StepDistribution, TokenId, Vocabulary,
    DEFAULT_MAX_DIGITS, DEFAULT_MAX_STEPS,
};
use vpsg::fsm::Axis;
use vpsg::guidance::{decode, greedy_decode_route, GuidanceError};
use vpsg::providers::{
    synthetic_route_set, ReplayRoute, RouteProvider, RouteSet, SlotQuirk, SyntheticModelSpec,
};

fn token_id(vocab: &Vocabulary, token: &str) -> TokenId {
    vocab.tokens().iter().position(|t| t == token).unwrap()
}

/// A row whose top-1 is `top` with probability `p`, the remainder spread
/// evenly over the other tokens.
fn peaked_row(vocab: &Vocabulary, top: TokenId, p: f64) -> StepDistribution {
    let len = vocab.len();
    let q = (1.0 - p) / (len - 1) as f64;
    let mut probs = vec![q; len];
    probs[top] = p;
    StepDistribution::new(probs.iter().map(|x| x.ln()).collect()).unwrap()
}

fn uniform_row(vocab: &Vocabulary) -> StepDistribution {
    StepDistribution::from_logits(&vec![0.0; vocab.len()])
}

/// The eleven-step fixture that mirrors the published per-step top-1
/// probabilities of a corrected decode: tokens
/// `[ 6 5 9 , space 8 5 7 ] <eos>` with the listed main-route peaks.
fn case_study_routes(vocab: &Vocabulary, seeds: usize) -> RouteSet {
    let path = ["[", "6", "5", "9", ",", " ", "8", "5", "7", "]", "<eos>"];
    let peaks = [
        0.805, 0.210, 0.264, 0.140, 0.987, 0.976, 0.355, 0.642, 0.421, 0.999, 0.996,
    ];
    let main_rows: Vec<StepDistribution> = path
        .iter()
        .zip(peaks)
        .map(|(t, p)| peaked_row(vocab, token_id(vocab, t), p))
        .collect();
    let aux_rows: Vec<StepDistribution> = (0..main_rows.len()).map(|_| uniform_row(vocab)).collect();
    RouteSet {
        main: Box::new(ReplayRoute::new(main_rows)),
        aux: (0..seeds)
            .map(|_| Box::new(ReplayRoute::new(aux_rows.clone())) as Box<dyn RouteProvider>)
            .collect(),
    }
}

#[test]
fn case_study_shape_decodes_well_formed() {
    let vocab = Vocabulary::toy();
    let cfg = GuidanceConfig::default();
    let out = decode(&case_study_routes(&vocab, 5), &vocab, &cfg, false).unwrap();
    let decoded: Vec<&str> = out.tokens.iter().map(|&t| vocab.token(t)).collect();
    assert_eq!(
        decoded,
        ["[", "6", "5", "9", ",", " ", "8", "5", "7", "]", "<eos>"]
    );
    assert_eq!(out.coord, Some(Coordinate::new(659, 857)));
    assert_eq!(out.steps.len(), 11);

    // The guided run reproduces the plain greedy path here because the
    // auxiliary reference is uniform over the vocabulary.
    let baseline = decode(
        &case_study_routes(&vocab, 5),
        &vocab,
        &GuidanceConfig {
            alpha: 0.0,
            ..GuidanceConfig::default()
        },
        false,
    )
    .unwrap();
    assert_eq!(baseline.tokens, out.tokens);
}

fn biased_spec() -> SyntheticModelSpec {
    let image = ImageMeta::new("case", 1920, 1080).unwrap();
    let mut spec = SyntheticModelSpec::new(image, Coordinate::new(659, 857), 4.5, 6.0);
    // The conditioned route prefers the attractor's first digit on x.
    spec.quirks = vec![SlotQuirk::AttractorPull {
        axis: Axis::X,
        index: 1,
        gap: 1.2,
    }];
    spec
}

#[test]
fn guidance_flips_the_pulled_digit_and_baseline_does_not() {
    let vocab = Arc::new(Vocabulary::toy());
    let spec = Arc::new(biased_spec());
    // Attractor nearest to x = 659 is 512, so the pulled first digit is 5.
    assert_eq!(spec.nearest_attractor(Axis::X), 512);

    let routes = synthetic_route_set(&spec, &vocab, 3);
    let cfg = GuidanceConfig {
        seeds: 3,
        ..GuidanceConfig::default()
    };
    let guided = decode(&routes, &vocab, &cfg, false).unwrap();
    assert_eq!(guided.coord, Some(Coordinate::new(659, 857)));

    let baseline = decode(
        &routes,
        &vocab,
        &GuidanceConfig { alpha: 0.0, ..cfg },
        false,
    )
    .unwrap();
    assert_eq!(baseline.coord, Some(Coordinate::new(559, 857)));

    // Hand verification of the first digit slot from the recorded rows:
    // the baseline margin favors "5", the fused margin favors "6".
    let open = vocab.structural().open;
    let main = routes.main.step(&[open]).unwrap();
    let aux: Vec<StepDistribution> = routes
        .aux
        .iter()
        .map(|p| p.step(&[open]).unwrap())
        .collect();
    let six = token_id(&vocab, "6");
    let five = token_id(&vocab, "5");
    assert!(main.logprob(five) > main.logprob(six));
    let floor = 1e-10f64.ln();
    let ell = |id: usize| {
        aux.iter().map(|row| row.logprob(id).max(floor)).sum::<f64>() / aux.len() as f64
    };
    let fused_six = main.logprob(six) - 0.55 * ell(six);
    let fused_five = main.logprob(five) - 0.55 * ell(five);
    assert!(fused_six > fused_five);
}

#[test]
fn alpha_zero_matches_plain_greedy_on_random_traces() {
    let vocab = Vocabulary::toy();
    let cfg = GuidanceConfig {
        alpha: 0.0,
        seeds: 3,
        ..GuidanceConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2718);
    for _ in 0..100 {
        let steps = rng.gen_range(3..12);
        let mut main_rows = Vec::with_capacity(steps);
        let mut aux_rows: Vec<Vec<StepDistribution>> = vec![Vec::new(); 3];
        for s in 0..steps {
            let mut logits: Vec<f64> = (0..vocab.len()).map(|_| rng.gen_range(-4.0..4.0)).collect();
            if s == steps - 1 {
                logits[vocab.structural().eos] += 12.0;
            }
            main_rows.push(StepDistribution::from_logits(&logits));
            for rows in aux_rows.iter_mut() {
                let logits: Vec<f64> = (0..vocab.len()).map(|_| rng.gen_range(-4.0..4.0)).collect();
                rows.push(StepDistribution::from_logits(&logits));
            }
        }
        let routes = RouteSet {
            main: Box::new(ReplayRoute::new(main_rows.clone())),
            aux: aux_rows
                .into_iter()
                .map(|rows| Box::new(ReplayRoute::new(rows)) as Box<dyn RouteProvider>)
                .collect(),
        };
        let guided = decode(&routes, &vocab, &cfg, false).unwrap();
        let plain = greedy_decode_route(
            &ReplayRoute::new(main_rows),
            &vocab,
            DEFAULT_MAX_STEPS,
            DEFAULT_MAX_DIGITS,
        )
        .unwrap();
        assert_eq!(guided.tokens, plain.tokens);
        assert_eq!(guided.coord, plain.coord);
    }
}

#[test]
fn non_digit_scores_stay_bitwise_equal_along_decodes() {
    let vocab = Arc::new(Vocabulary::toy());
    let spec = Arc::new(biased_spec());
    let routes = synthetic_route_set(&spec, &vocab, 3);
    let cfg = GuidanceConfig {
        seeds: 3,
        ..GuidanceConfig::default()
    };
    let out = decode(&routes, &vocab, &cfg, false).unwrap();
    for step in &out.steps {
        for id in 0..vocab.len() {
            if !vocab.is_digit(id) {
                assert_eq!(
                    step.fused.scores()[id].to_bits(),
                    step.main.logprob(id).to_bits()
                );
            }
        }
    }
}

#[test]
fn aux_count_must_match_config() {
    let vocab = Vocabulary::toy();
    let routes = case_study_routes(&vocab, 2);
    let cfg = GuidanceConfig {
        seeds: 5,
        ..GuidanceConfig::default()
    };
    assert!(matches!(
        decode(&routes, &vocab, &cfg, false),
        Err(GuidanceError::AuxCountMismatch {
            expected: 5,
            got: 2
        })
    ));
}

#[test]
fn exhausted_provider_surfaces() {
    let vocab = Vocabulary::toy();
    // Rows never reach eos, so the decode consumes all three and asks for
    // a fourth.
    let digit_row = peaked_row(&vocab, 4, 0.9);
    let routes = RouteSet {
        main: Box::new(ReplayRoute::new(vec![digit_row.clone(); 3])),
        aux: vec![Box::new(ReplayRoute::new(vec![digit_row; 3]))],
    };
    let cfg = GuidanceConfig {
        seeds: 1,
        ..GuidanceConfig::default()
    };
    let err = decode(&routes, &vocab, &cfg, false).unwrap_err();
    assert!(matches!(err, GuidanceError::Provider(_)), "{err:?}");
}

#[test]
fn step_cap_is_an_error() {
    let vocab = Arc::new(Vocabulary::toy());
    let spec = Arc::new(SyntheticModelSpec::new(
        ImageMeta::new("cap", 100, 100).unwrap(),
        Coordinate::new(5, 5),
        4.5,
        6.0,
    ));
    let routes = synthetic_route_set(&spec, &vocab, 1);
    let cfg = GuidanceConfig {
        seeds: 1,
        max_steps: 3,
        ..GuidanceConfig::default()
    };
    assert!(matches!(
        decode(&routes, &vocab, &cfg, false),
        Err(GuidanceError::StepCapExceeded { cap: 3 })
    ));
}

#[test]
fn strict_mode_masks_off_template_candidates() {
    let vocab = Vocabulary::toy();
    // Main route tries to emit a digit before "[" at step 0, then behaves.
    let rows = vec![
        peaked_row(&vocab, 7, 0.9),
        peaked_row(&vocab, token_id(&vocab, "4"), 0.9),
        peaked_row(&vocab, token_id(&vocab, ","), 0.9),
        peaked_row(&vocab, token_id(&vocab, " "), 0.9),
        peaked_row(&vocab, token_id(&vocab, "2"), 0.9),
        peaked_row(&vocab, token_id(&vocab, "]"), 0.9),
        peaked_row(&vocab, token_id(&vocab, "<eos>"), 0.9),
    ];
    let aux = rows.clone();
    let routes = RouteSet {
        main: Box::new(ReplayRoute::new(rows)),
        aux: vec![Box::new(ReplayRoute::new(aux))],
    };
    let cfg = GuidanceConfig {
        seeds: 1,
        ..GuidanceConfig::default()
    };
    let strict = decode(&routes, &vocab, &cfg, true).unwrap();
    let decoded: Vec<&str> = strict.tokens.iter().map(|&t| vocab.token(t)).collect();
    assert_eq!(decoded, ["[", "4", ",", " ", "2", "]", "<eos>"]);
    assert_eq!(strict.coord, Some(Coordinate::new(4, 2)));

    // The permissive default just stops guiding after the surprise.
    let permissive = decode(&routes, &vocab, &cfg, false).unwrap();
    assert_eq!(vocab.token(permissive.tokens[0]), "7");
    assert_eq!(permissive.coord, None);
    assert!(permissive.final_state.is_passthrough());
    assert!(permissive.steps.iter().all(|s| !s.fused.guided()));
}

#[test]
fn replayed_case_study_trace_has_eleven_steps_per_route() {
    let vocab = Vocabulary::toy();
    let routes = case_study_routes(&vocab, 4);
    for step in 0..11 {
        let prefix = vec![0; step];
        routes.main.step(&prefix).unwrap();
        for aux in &routes.aux {
            aux.step(&prefix).unwrap();
        }
    }
    assert!(routes.main.step(&vec![0; 11]).is_err());
}

#[test]
fn guided_decode_of_case_study_spec_reports_guided_digit_steps() {
    let vocab = Arc::new(Vocabulary::toy());
    let spec = Arc::new(biased_spec());
    let routes = synthetic_route_set(&spec, &vocab, 3);
    let cfg = GuidanceConfig {
        seeds: 3,
        ..GuidanceConfig::default()
    };
    let out = decode(&routes, &vocab, &cfg, false).unwrap();
    // Steps at digit slots are guided, all others pass through.
    let guided_flags: Vec<bool> = out.steps.iter().map(|s| s.fused.guided()).collect();
    assert_eq!(
        guided_flags,
        // [   6     5     9     ,(slot X4) space 8    5     7     ](slot Y4) eos
        [false, true, true, true, true, false, true, true, true, true, false]
    );
    // Alpha follows the decayed schedule on x and resets on y.
    let alphas: Vec<f64> = out
        .steps
        .iter()
        .filter(|s| s.fused.guided())
        .map(|s| s.fused.alpha_used())
        .collect();
    let expect = [
        0.55,
        0.22,
        0.088,
        0.55 * 0.4f64.powi(3),
        0.55,
        0.22,
        0.088,
        0.55 * 0.4f64.powi(3),
    ];
    assert_eq!(alphas.len(), expect.len());
    for (a, e) in alphas.iter().zip(expect) {
        assert!((a - e).abs() < 1e-12);
    }
}
