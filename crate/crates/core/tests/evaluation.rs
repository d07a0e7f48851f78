use std::collections::HashMap;

use chrono::{TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sonify_core::eval::{
    all_frame_audio_pairs, correlate, default_references, mos_aggregate, pair_stats, pearson,
    read_ratings, write_ratings, EvalError, GroupBy, Histogram, PairKey, RaterMode, RatingRecord,
    Relation,
};
use sonify_core::metrics::{slerp_audio_target, SlerpParams};
use sonify_core::store::{AssetManifest, AssetRecord};
use sonify_core::synth::{generate, SyntheticSpaceConfig};
use sonify_core::{Embedding, Modality};

fn rating(rater: &str, frame: &str, audio: &str, mos: u8, sec: u32) -> RatingRecord {
    let ts = Utc.with_ymd_and_hms(2024, 5, 1, 10, 0, sec).unwrap();
    RatingRecord::new(rater, frame, audio, mos, ts).unwrap()
}

#[test]
fn related_audio_cells_are_closer_across_seeds() {
    for seed in 0..10 {
        let (_, store) = generate(&SyntheticSpaceConfig {
            dim: 256,
            n_scenes: 5,
            frames_per_scene: 4,
            gap_angle: 0.3,
            intra_scene_spread: 0.05,
            noise: 0.02,
            seed,
            ..Default::default()
        })
        .unwrap();
        let cells = pair_stats(
            &store,
            &default_references(&store),
            &all_frame_audio_pairs(&store),
            &SlerpParams::default(),
        )
        .unwrap();
        let mean = |audio: Relation| {
            cells
                .iter()
                .filter(|c| c.audio_relation == audio)
                .map(|c| c.mean.unwrap())
                .collect::<Vec<_>>()
        };
        let related = mean(Relation::Related);
        let unrelated = mean(Relation::Unrelated);
        let worst_related = related.iter().cloned().fold(f64::MIN, f64::max);
        let best_unrelated = unrelated.iter().cloned().fold(f64::MAX, f64::min);
        assert!(worst_related < best_unrelated, "seed {seed}: {cells:?}");
    }
}

#[test]
fn audio_target_matches_closed_form_midpoint() {
    let e = |id: &str, m, v: [f32; 3]| Embedding::new(id, m, v.to_vec()).unwrap();
    let ref_frame = e("rf", Modality::Image, [1.0, 0.0, 0.0]);
    let target_frame = e("tf", Modality::Image, [0.0, 1.0, 0.0]);
    let ref_audio = e("ra", Modality::Audio, [0.0, 0.0, 1.0]);
    let got = slerp_audio_target(
        &ref_audio,
        &ref_frame,
        &target_frame,
        &SlerpParams::default(),
    )
    .unwrap();

    // The arc midpoint of two orthogonal unit vectors is their normalized sum.
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let raw = [h - 1.0, h, 1.0];
    let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    for (g, r) in got.vector().iter().zip(raw) {
        assert!((*g as f64 - r / n).abs() < 1e-6, "{:?}", got.vector());
    }
}

#[test]
fn pearson_fixture_and_affine_invariance() {
    // Hand computation: deviations (-1,0,1) and (1,-1,0), covariance sum -1,
    // sum of squares 2 and 2, so r = -1 / 2.
    let r = pearson(&[1.0, 2.0, 3.0], &[6.0, 4.0, 5.0]).unwrap();
    assert!((r + 0.5).abs() < 1e-9);

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..100 {
        let n = rng.random_range(3..50);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let a = rng.random_range(0.1..10.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        let b = rng.random_range(-100.0..100.0);
        let r = pearson(&x, &y).unwrap();
        let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let r2 = pearson(&ax, &y).unwrap();
        assert!((r2 - a.signum() * r).abs() < 1e-9);
    }
}

#[test]
fn mos_falling_with_distance_gives_negative_correlation() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut metric: HashMap<PairKey, f64> = HashMap::new();
    let mut ratings = Vec::new();
    for p in 0..30 {
        let key = (format!("f{p}"), format!("a{p}"));
        let d = p as f64 / 30.0;
        metric.insert(key.clone(), d);
        for rater in 0..7 {
            let mos = (5.0 - 4.0 * d + rng.random_range(-0.5..0.5))
                .round()
                .clamp(1.0, 5.0) as u8;
            ratings.push(rating(&format!("r{rater}"), &key.0, &key.1, mos, 0));
        }
    }
    for mode in [RaterMode::AveragePerPair, RaterMode::Independent] {
        let rep = correlate(&ratings, &metric, "dis_cos", mode).unwrap();
        assert!(rep.r < 0.0, "{rep:?}");
    }
}

#[test]
fn correlate_join_matches_manual_oracle() {
    let ratings = vec![
        rating("r1", "f1", "a1", 5, 0),
        rating("r2", "f1", "a1", 3, 1),
        rating("r1", "f2", "a2", 2, 2),
        rating("r1", "f3", "a3", 1, 3),
    ];
    let metric: HashMap<PairKey, f64> = [
        (("f1".into(), "a1".into()), 0.1),
        (("f2".into(), "a2".into()), 0.4),
        (("f3".into(), "a3".into()), 0.3),
        (("f9".into(), "a9".into()), 0.9),
    ]
    .into_iter()
    .collect();
    let avg = correlate(&ratings, &metric, "m", RaterMode::AveragePerPair).unwrap();
    assert_eq!(avg.n, 3);
    let oracle = pearson(&[0.1, 0.4, 0.3], &[4.0, 2.0, 1.0]).unwrap();
    assert!((avg.r - oracle).abs() < 1e-12);
    let ind = correlate(&ratings, &metric, "m", RaterMode::Independent).unwrap();
    assert_eq!(ind.n, 4);
    let oracle = pearson(&[0.1, 0.1, 0.4, 0.3], &[5.0, 3.0, 2.0, 1.0]).unwrap();
    assert!((ind.r - oracle).abs() < 1e-12);

    let missing = vec![
        rating("r1", "fx", "ax", 4, 0),
        rating("r1", "f1", "a1", 4, 0),
    ];
    assert!(matches!(
        correlate(&missing, &metric, "m", RaterMode::Independent),
        Err(EvalError::MissingMetric { .. })
    ));
}

#[test]
fn ratings_round_trip_is_byte_identical() {
    let ratings = vec![
        rating("ana", "cofre-f001", "cofre-f001#a0", 4, 5),
        rating("luis, jr", "cofre-f002", "cofre-f002#t3a1", 1, 6),
        RatingRecord::new(
            "eva",
            "mar-f000",
            "mar-f000#a0",
            5,
            Utc.timestamp_opt(1_714_557_600, 123_000_000).unwrap(),
        )
        .unwrap(),
    ];
    let mut first = Vec::new();
    write_ratings(&mut first, &ratings).unwrap();
    let back = read_ratings(first.as_slice()).unwrap();
    assert_eq!(back, ratings);
    let mut second = Vec::new();
    write_ratings(&mut second, &back).unwrap();
    assert_eq!(first, second);
}

#[test]
fn malformed_ratings_name_the_line() {
    let text = "rater_id,frame_id,audio_id,mos,timestamp\n\
                r,f,a,3,2024-05-01T10:00:00Z\n\
                r,f,a,9,2024-05-01T10:00:00Z\n";
    match read_ratings(text.as_bytes()) {
        Err(EvalError::Parse { line: 3, message }) => assert!(message.contains('9')),
        other => panic!("unexpected {other:?}"),
    }
    let bad_ts = "rater_id,frame_id,audio_id,mos,timestamp\nr,f,a,3,yesterday\n";
    assert!(matches!(
        read_ratings(bad_ts.as_bytes()),
        Err(EvalError::Parse { line: 2, .. })
    ));
    let bad_header = "rater,frame,audio,mos,ts\n";
    assert!(matches!(
        read_ratings(bad_header.as_bytes()),
        Err(EvalError::Parse { line: 1, .. })
    ));
}

#[test]
fn mos_per_scene_fixture() {
    let manifest = AssetManifest::from_records(vec![
        AssetRecord::new("f1", Modality::Image, "cofre", "f1.png"),
        AssetRecord::new("f2", Modality::Image, "mar", "f2.png"),
    ])
    .unwrap();
    let ratings = vec![
        rating("r1", "f1", "a", 5, 0),
        rating("r2", "f1", "a", 5, 0),
        rating("r1", "f2", "b", 2, 0),
        rating("r2", "f2", "b", 2, 0),
    ];
    let groups = mos_aggregate(&ratings, GroupBy::Scene(&manifest)).unwrap();
    assert_eq!(groups.len(), 2);
    assert_eq!(
        (groups[0].group.as_str(), groups[0].mean, groups[0].n),
        ("cofre", 5.0, 2)
    );
    assert_eq!((groups[1].group.as_str(), groups[1].mean), ("mar", 2.0));
}

#[test]
fn uniform_values_fill_bins_evenly() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 20_000;
    let bins = 20;
    let values: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..2.0)).collect();
    let h = Histogram::equal_width(&values, -1.0, 2.0, bins).unwrap();
    let p = 1.0 / bins as f64;
    let expected = n as f64 * p;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    for c in &h.counts {
        assert!((*c as f64 - expected).abs() < 5.0 * sigma, "{:?}", h.counts);
    }
}
