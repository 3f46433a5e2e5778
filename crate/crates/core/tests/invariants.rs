use std::collections::BTreeMap;

use proptest::prelude::*;

use selective_ae::annotations::{AnnotationSet, BoundingBox, FrameAnnotations};
use selective_ae::gradcheck::composite_model;
use selective_ae::layers::{conv::conv_forward, Layer, LayerSpec};
use selective_ae::metrics::{evaluate, match_boxes, EvalResult, FrameTally};
use selective_ae::patch::{make_grid, Provenance};
use selective_ae::postprocess::{extract_boxes, stitch, FrameWindow, PostprocessConfig, StitchMode};
use selective_ae::rng::SeededRng;
use selective_ae::synth::{generate_frame, generate_patch_dataset, PatchDatasetConfig, SynthConfig};
use selective_ae::train::{loss, sgd_step, TrainConfig, TrainState};
use selective_ae::Tensor;

fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = SeededRng::new(seed);
    Tensor::from_fn(shape, |_| rng.range(-1.0, 1.0))
}

fn small_synth(seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        frame_rows: 128,
        frame_cols: 160,
        distractors_per_frame: (4, 8),
        ..SynthConfig::default()
    }
}

/// Non-overlapping truth boxes on a coarse lattice.
fn lattice_boxes(cells: &[usize]) -> Vec<BoundingBox> {
    cells
        .iter()
        .map(|&c| BoundingBox::new((c % 8) as f64 * 20.0, (c / 8) as f64 * 20.0, 10.0, 8.0))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn four_quarter_turns_are_identity(rows in 1usize..7, cols in 1usize..7, seed in 0u64..1000) {
        let t = random_tensor(&[rows, cols], seed);
        let mut r = t.clone();
        for _ in 0..4 {
            r = r.rotate90k(1).unwrap();
        }
        prop_assert_eq!(r, t);
    }

    #[test]
    fn reductions_repeat_bit_for_bit(len in 1usize..2000, seed in 0u64..1000) {
        let t = random_tensor(&[len], seed);
        prop_assert_eq!(t.sum().to_bits(), t.clone().sum().to_bits());
        prop_assert_eq!(t.sum_squares().to_bits(), t.sum_squares().to_bits());
    }

    #[test]
    fn conv_outputs_are_non_negative(maps in 1usize..4, side in 3usize..9, seed in 0u64..1000) {
        let mut rng = SeededRng::new(seed);
        let layer = Layer::init(LayerSpec::Conv { in_maps: maps, out_maps: 2, filter: 3 }, &mut rng).unwrap();
        let x = random_tensor(&[2, maps, side, side], seed + 1);
        let (y, _) = conv_forward(&x, layer.params.as_ref().unwrap()).unwrap();
        prop_assert!(y.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn noiseless_forward_is_deterministic(seed in 0u64..1000) {
        let mut model = composite_model(seed).unwrap();
        model.set_noise_std(0.0).unwrap();
        let x = random_tensor(&[3, 1, 10, 10], seed).relu();
        let mut a = SeededRng::new(1);
        let mut b = SeededRng::new(2);
        let (ya, _) = model.forward_train(&x, &mut a).unwrap();
        let (yb, _) = model.forward_train(&x, &mut b).unwrap();
        prop_assert_eq!(&ya, &yb);
        prop_assert_eq!(ya, model.predict(&x).unwrap());
    }

    #[test]
    fn perfect_reconstruction_has_zero_loss(seed in 0u64..1000) {
        let model = composite_model(seed).unwrap();
        let y = random_tensor(&[2, 1, 10, 10], seed);
        prop_assert_eq!(loss(&model, &y, &y, 0.0, 0.0).unwrap().total, 0.0);
    }

    #[test]
    fn velocity_mirrors_params_after_every_step(seed in 0u64..200, steps in 1usize..4) {
        let config = TrainConfig { learning_rate: 1e-2, ..TrainConfig::default() };
        let mut state = TrainState::new(composite_model(seed).unwrap());
        let x = random_tensor(&[4, 1, 10, 10], seed).relu();
        let mut rng = SeededRng::new(seed);
        for _ in 0..steps {
            sgd_step(&mut state, &x, &x, &config, &mut rng).unwrap();
            prop_assert!(state.velocity_matches_params());
        }
    }

    #[test]
    fn smaller_step_never_moves_further(seed in 0u64..200) {
        let x = random_tensor(&[4, 1, 10, 10], seed).relu();
        let displacement = |alpha: f64| {
            let config = TrainConfig { learning_rate: alpha, momentum: 0.0, ..TrainConfig::default() };
            let start = composite_model(seed).unwrap();
            let mut state = TrainState::new(start.clone());
            sgd_step(&mut state, &x, &x, &config, &mut SeededRng::new(9)).unwrap();
            state.params.param_tensors().zip(start.param_tensors())
                .map(|(a, b)| a.sub(b).unwrap().sum_squares())
                .sum::<f64>()
                .sqrt()
        };
        prop_assert!(displacement(1e-3) <= displacement(1e-2));
    }

    #[test]
    fn raising_the_threshold_only_shrinks_detections(seed in 0u64..500, lo in 0.0f64..200.0, step in 0.0f64..55.0) {
        let mut rng = SeededRng::new(seed);
        let canvas = Tensor::from_fn(&[40, 48], |_| if rng.uniform() < 0.3 { rng.uniform() } else { 0.0 });
        let at = |t: f64| {
            let cfg = PostprocessConfig { gray_threshold: t, min_component_area: 1, ..PostprocessConfig::default() };
            extract_boxes(&canvas, &cfg, FrameWindow::whole(40, 48)).unwrap()
        };
        let (low, high) = (at(lo), at(lo + step));
        let area = |bs: &[BoundingBox]| bs.iter().map(|b| b.area()).sum::<f64>();
        prop_assert!(area(&high) <= area(&low));
        for b in &high {
            prop_assert!(low.iter().any(|l| b.inside(l.y, l.x, l.h, l.w)), "{:?} not nested", b);
        }
    }

    #[test]
    fn raising_the_threshold_never_adds_blobs(seed in 0u64..500, lo in 1.0f64..200.0, step in 0.0f64..55.0) {
        // Separate convex blobs cannot split, so the box count is monotone.
        let mut rng = SeededRng::new(seed);
        let centres: Vec<(f64, f64, f64)> = (0..4)
            .map(|i| (10.0 + 27.0 * (i / 2) as f64, 10.0 + 27.0 * (i % 2) as f64, rng.range(2.0, 4.0)))
            .collect();
        let canvas = Tensor::from_fn(&[48, 48], |i| {
            let (r, c) = ((i / 48) as f64, (i % 48) as f64);
            centres
                .iter()
                .map(|&(cr, cc, s)| (1.0 - ((r - cr).powi(2) + (c - cc).powi(2)).sqrt() / (2.0 * s)).max(0.0))
                .fold(0.0, f64::max)
        });
        let at = |t: f64| {
            let cfg = PostprocessConfig { gray_threshold: t, min_component_area: 1, ..PostprocessConfig::default() };
            extract_boxes(&canvas, &cfg, FrameWindow::whole(48, 48)).unwrap().len()
        };
        prop_assert!(at(lo + step) <= at(lo));
    }

    #[test]
    fn stitch_suppression_and_mode_dominance(seed in 0u64..500, stride in prop::sample::select(vec![2usize, 4, 8]), val in 0.0f64..0.3) {
        let grid = make_grid(40, 48, 16, 16, stride, stride).unwrap();
        let mut rng = SeededRng::new(seed);
        let patches: Vec<Tensor> = (0..grid.count())
            .map(|_| {
                let spread = rng.range(0.0, 0.5);
                let base = rng.uniform();
                Tensor::from_fn(&[16, 16], |_| base + spread * rng.uniform())
            })
            .collect();
        let config = |mode| PostprocessConfig { val, stitch_mode: mode, ..PostprocessConfig::default() };
        let ave = stitch(&patches, &grid, &config(StitchMode::Ave)).unwrap();
        let max = stitch(&patches, &grid, &config(StitchMode::Max)).unwrap();
        prop_assert!(max.data().iter().zip(ave.data()).all(|(m, a)| m >= a));

        let zeroed: Vec<Tensor> = patches
            .iter()
            .map(|p| if p.max() - p.min() <= val { Tensor::zeros(&[16, 16]) } else { p.clone() })
            .collect();
        for mode in [StitchMode::Ave, StitchMode::Max] {
            prop_assert_eq!(
                stitch(&patches, &grid, &config(mode)).unwrap(),
                stitch(&zeroed, &grid, &config(mode)).unwrap()
            );
        }
    }

    #[test]
    fn boxes_stay_inside_the_unpadded_frame(seed in 0u64..500, top in 0usize..9, left in 0usize..9) {
        let (rows, cols) = (30, 36);
        let mut rng = SeededRng::new(seed);
        let canvas = Tensor::from_fn(&[rows + 2 * top, cols + 2 * left], |_| if rng.uniform() < 0.5 { 1.0 } else { 0.0 });
        let cfg = PostprocessConfig { min_component_area: 1, ..PostprocessConfig::default() };
        let window = FrameWindow { top, left, rows, cols };
        for b in extract_boxes(&canvas, &cfg, window).unwrap() {
            prop_assert!(b.inside(0.0, 0.0, rows as f64, cols as f64), "{:?}", b);
            prop_assert!(b.w > 0.0 && b.h > 0.0);
        }
    }

    #[test]
    fn a_false_alarm_never_helps(cells in prop::collection::btree_set(0usize..40, 1..6), hits in 0usize..6, others in 1usize..20) {
        let cells: Vec<usize> = cells.into_iter().collect();
        let truth_boxes = lattice_boxes(&cells);
        let found: Vec<BoundingBox> = truth_boxes.iter().take(hits).cloned().collect();
        let truth = AnnotationSet(vec![FrameAnnotations::new("a", truth_boxes)]);
        let non_eggs = BTreeMap::from([("a".to_string(), others)]);
        let score = |boxes: Vec<BoundingBox>| {
            evaluate(&AnnotationSet(vec![FrameAnnotations::new("a", boxes)]), &truth, &non_eggs, 0.3).unwrap()
        };
        let before = score(found.clone());
        let mut extra = found;
        extra.push(BoundingBox::new(500.0, 500.0, 6.0, 6.0));
        let after = score(extra);
        prop_assert!(after.ada <= before.ada);
        prop_assert!(after.and.unwrap() <= before.and.unwrap());
        prop_assert!(after.amer >= before.amer);
    }

    #[test]
    fn frame_order_does_not_change_scores(
        frames in prop::collection::vec((prop::collection::btree_set(0usize..40, 0..5), 0usize..5), 1..6),
        rotate in 0usize..6,
    ) {
        let mut truth = Vec::new();
        let mut predicted = Vec::new();
        let mut non_eggs = BTreeMap::new();
        for (i, (cells, hits)) in frames.iter().enumerate() {
            let id = format!("f{i}");
            let cells: Vec<usize> = cells.iter().copied().collect();
            let boxes = lattice_boxes(&cells);
            predicted.push(FrameAnnotations::new(id.clone(), boxes.iter().take(*hits).cloned().collect()));
            truth.push(FrameAnnotations::new(id.clone(), boxes));
            non_eggs.insert(id, 10);
        }
        let truth = AnnotationSet(truth);
        let forward = evaluate(&AnnotationSet(predicted.clone()), &truth, &non_eggs, 0.3).unwrap();
        let n = predicted.len();
        predicted.rotate_left(rotate % n);
        let shuffled = evaluate(&AnnotationSet(predicted), &truth, &non_eggs, 0.3).unwrap();
        prop_assert_eq!(forward.ada, shuffled.ada);
        prop_assert_eq!(forward.and, shuffled.and);
    }

    #[test]
    fn unit_iou_matches_only_identical_boxes(x in 0.0f64..50.0, y in 0.0f64..50.0, w in 1.0f64..20.0, h in 1.0f64..20.0, dx in -0.5f64..0.5) {
        let b = BoundingBox::new(x, y, w, h);
        prop_assert_eq!(match_boxes(std::slice::from_ref(&b), std::slice::from_ref(&b), 1.0).pairs.len(), 1);
        let moved = BoundingBox::new(x + dx, y, w, h);
        let matched = match_boxes(&[moved], std::slice::from_ref(&b), 1.0).pairs.len();
        prop_assert_eq!(matched, usize::from(dx == 0.0));
    }

    #[test]
    fn tallies_agree_with_raw_box_counts(
        frames in prop::collection::vec((prop::collection::btree_set(0usize..40, 0..5), 0usize..5, 0usize..3), 1..5),
    ) {
        let mut truth = Vec::new();
        let mut predicted = Vec::new();
        let mut non_eggs = BTreeMap::new();
        let mut tallies = Vec::new();
        for (i, (cells, hits, false_alarms)) in frames.iter().enumerate() {
            let id = format!("f{i}");
            let cells: Vec<usize> = cells.iter().copied().collect();
            let boxes = lattice_boxes(&cells);
            let mut pred: Vec<BoundingBox> = boxes.iter().take(*hits).cloned().collect();
            for k in 0..*false_alarms {
                pred.push(BoundingBox::new(400.0 + 20.0 * k as f64, 400.0, 5.0, 5.0));
            }
            tallies.push(FrameTally {
                frame_id: id.clone(),
                eggs_actual: boxes.len(),
                eggs_detected: (*hits).min(boxes.len()),
                false_alarms: *false_alarms,
                non_eggs_total: Some(12),
            });
            predicted.push(FrameAnnotations::new(id.clone(), pred));
            truth.push(FrameAnnotations::new(id.clone(), boxes));
            non_eggs.insert(id, 12);
        }
        let from_boxes = evaluate(&AnnotationSet(predicted), &AnnotationSet(truth), &non_eggs, 0.3).unwrap();
        prop_assert_eq!(from_boxes, EvalResult::from_tallies(tallies, 0.3).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn every_egg_pixel_lies_in_its_box(seed in 0u64..1000, index in 0usize..50) {
        let sf = generate_frame(&small_synth(seed), index, false).unwrap();
        prop_assert_eq!(sf.annotations().boxes.len(), sf.eggs.len());
        for r in 0..sf.frame.rows {
            for c in 0..sf.frame.cols {
                if sf.egg_mask.get(r, c) > 0.0 {
                    let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
                    prop_assert!(sf.eggs.iter().any(|b| x >= b.x && x < b.right() && y >= b.y && y < b.bottom()));
                }
            }
        }
    }

    #[test]
    fn frames_depend_only_on_seed_and_index(seed in 0u64..1000, index in 0usize..50) {
        let config = small_synth(seed);
        prop_assert_eq!(generate_frame(&config, index, false).unwrap(), generate_frame(&config, index, false).unwrap());
    }

    #[test]
    fn labels_follow_provenance(seed in 0u64..1000) {
        let data = PatchDatasetConfig { count: 60, k_rotations: 2, ..PatchDatasetConfig::default() };
        let (pairs, _) = generate_patch_dataset(&small_synth(seed), &data).unwrap();
        for p in &pairs {
            match p.provenance {
                Provenance::CenteredEgg => {
                    prop_assert!(p.label.sum() > 0.0);
                    prop_assert!(p.label.data().iter().all(|&v| v == 0.0 || v == 1.0));
                }
                _ => prop_assert!(p.label.data().iter().all(|&v| v == 0.0)),
            }
        }
    }
}
