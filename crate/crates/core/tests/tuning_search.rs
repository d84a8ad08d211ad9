//! Temperature and threshold search against direct evaluation.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use evdecode_core::decode::{prepare, DecodeConfig, DecodeStages};
use evdecode_core::fusion::calibrate_value;
use evdecode_core::tuning::{
    grid_search_temperature, local_search_thresholds, LocalSearchOptions, TemperatureObjective, TemporalObjective,
    TuningData,
};
use evdecode_core::{EventRecord, GroundTruth, LabelSpace, ProbStream, Source};

/// Overconfident streams: the true positive rate at probability p is below p.
fn overconfident(seed: u64) -> (Vec<ProbStream>, BTreeMap<String, GroundTruth>) {
    let space = LabelSpace::default_capsule();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (frames, classes) = (300, space.n_classes());
    let mut streams = Vec::new();
    let mut gts = BTreeMap::new();
    for v in 0..3 {
        let id = format!("v{v}");
        let mut probs = Array2::zeros((frames, classes));
        let mut labels = Array2::from_elem((frames, classes), false);
        for t in 0..frames {
            for c in 0..classes {
                let z: f64 = rng.random_range(-2.0..2.0);
                let y = rng.random::<f64>() < 1.0 / (1.0 + (-z).exp());
                // Regions must stay exclusive in ground truth.
                labels[[t, c]] = y && (c >= 5 || c == t * 5 / frames);
                probs[[t, c]] = 1.0 / (1.0 + (-3.0 * z).exp());
            }
        }
        streams.push(ProbStream::new(id.clone(), Source::Fused, probs).unwrap());
        gts.insert(id.clone(), GroundTruth::new(id, labels, &space).unwrap());
    }
    (streams, gts)
}

fn direct_nll(streams: &[ProbStream], gts: &BTreeMap<String, GroundTruth>, temp: f64) -> f64 {
    let mut total = 0.0;
    let mut n = 0.0;
    for s in streams {
        let gt = &gts[s.video_id()];
        for ((t, c), &p) in s.probs().indexed_iter() {
            let q = calibrate_value(p, temp).clamp(1e-12, 1.0 - 1e-12);
            total -= if gt.labels()[[t, c]] { q.ln() } else { (1.0 - q).ln() };
            n += 1.0;
        }
    }
    total / n
}

#[test]
fn temperature_search_picks_the_lowest_direct_nll() {
    let (streams, gts) = overconfident(1);
    let grid = [0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0];
    let (best, scores) = grid_search_temperature(&streams, &gts, &grid, &TemperatureObjective::Nll).unwrap();
    let direct: Vec<(f64, f64)> = grid.iter().map(|&t| (t, direct_nll(&streams, &gts, t))).collect();
    let argmin = direct.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0;
    assert_eq!(best, argmin);
    // Overconfident inputs need softening.
    assert!(best > 1.0);
    for ((t, s), (_, d)) in scores.iter().zip(&direct) {
        assert!((-s - d).abs() < 1e-9, "T={t}: {} vs {d}", -s);
    }
}

#[test]
fn frame_map_does_not_depend_on_temperature() {
    let (streams, gts) = overconfident(2);
    let (_, scores) =
        grid_search_temperature(&streams, &gts, &[0.5, 1.0, 2.0, 5.0], &TemperatureObjective::FrameMap).unwrap();
    for (_, s) in &scores {
        assert!((s - scores[0].1).abs() < 1e-12);
    }
}

#[test]
fn local_search_never_loses_ground_and_stays_in_range() {
    let space = LabelSpace::default_capsule();
    let (streams, gts) = overconfident(3);
    let base = DecodeConfig::default_for(&space);
    let stages = DecodeStages::FULL;
    let prepared: Vec<_> = streams.iter().map(|s| prepare(s, &space, &base, stages).unwrap()).collect();
    let mut gt_events: Vec<EventRecord> = gts.values().flat_map(GroundTruth::events).collect();
    evdecode_core::streams::sort_events(&mut gt_events);
    let data = TuningData {
        prepared: &prepared,
        gt_events: &gt_events,
        space: &space,
        stages,
    };
    for objective in [TemporalObjective::Map50, TemporalObjective::Map95, TemporalObjective::Mean] {
        let opts = LocalSearchOptions {
            objective,
            max_iters: 5,
            ..LocalSearchOptions::default()
        };
        let theta0 = vec![0.5; space.n_classes()];
        let res = local_search_thresholds(&theta0, &base, &data, &opts).unwrap();
        assert!(res.trace.windows(2).all(|w| w[1].objective > w[0].objective));
        assert!(res.thresholds.iter().all(|t| *t > 0.0 && *t < 1.0));
        let mut cfg = base.clone();
        cfg.thresholds = res.thresholds.clone();
        assert_eq!(data.objective(&cfg, objective).unwrap(), res.objective);
        assert!(res.cycles <= 5);
    }
}
