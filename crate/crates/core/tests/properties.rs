use onset_core::detector::Detection;
use onset_core::evaluation::match_detections;
use onset_core::synthgen::{preset, sample_scenario, ScenarioConfig};
use onset_core::timeline::{observed_prefix, validate_dataset};
use onset_core::{ActivityKind, Interval};
use proptest::prelude::*;

fn disjoint_intervals() -> impl Strategy<Value = Vec<Interval>> {
    prop::collection::vec((0usize..20, 1usize..40), 0..6).prop_map(|parts| {
        let mut out = Vec::new();
        let mut t = 0;
        for (gap, len) in parts {
            t += gap;
            out.push(Interval { t1: t, t2: t + len });
            t += len + 1;
        }
        out
    })
}

fn detections(n_max: usize) -> impl Strategy<Value = Vec<Detection>> {
    prop::collection::vec((0usize..300, 0.0f64..1.0), 0..n_max).prop_map(|raw| {
        let mut d: Vec<Detection> = raw
            .into_iter()
            .map(|(t, score)| Detection {
                stream: "s".into(),
                class: "c".into(),
                t,
                t1: t,
                t2: t,
                d: 0.0,
                score,
            })
            .collect();
        d.sort_by(|a, b| b.score.total_cmp(&a.score));
        d
    })
}

proptest! {
    #[test]
    fn matches_only_inside_observed_prefixes(gt in disjoint_intervals(), dets in detections(20), r in 0.05f64..=1.0) {
        let tp = match_detections(&dets, &gt, r).unwrap();
        prop_assert_eq!(tp.len(), dets.len());
        let n_tp = tp.iter().filter(|&&x| x).count();
        prop_assert!(n_tp <= gt.len());
        for (d, &hit) in dets.iter().zip(&tp) {
            if hit {
                let inside = gt.iter().any(|g| observed_prefix(g, r).unwrap().contains(d.t));
                prop_assert!(inside);
            }
        }
    }

    #[test]
    fn true_positive_count_grows_with_ratio(gt in disjoint_intervals(), dets in detections(20), a in 0.05f64..=1.0, b in 0.05f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let count = |r| match_detections(&dets, &gt, r).unwrap().iter().filter(|&&x| x).count();
        prop_assert!(count(lo) <= count(hi));
    }

    #[test]
    fn prefixes_are_nested(t1 in 0usize..1000, len in 0usize..500, a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let g = Interval { t1, t2: t1 + len };
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let p = observed_prefix(&g, lo).unwrap();
        let q = observed_prefix(&g, hi).unwrap();
        prop_assert_eq!(p.t1, g.t1);
        prop_assert!(p.t2 <= q.t2 && q.t2 <= g.t2);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_labels_never_overlap(
        seed in any::<u64>(),
        which in 0usize..3,
        noise in 0.1f64..1.5,
        distractor in 0.0f64..0.6,
    ) {
        let name = ["STRONG_ONSET", "WEAK_ONSET", "NO_ONSET_CONTROL"][which];
        let cfg = ScenarioConfig {
            n_sets: 2,
            streams_per_set: 2,
            noise,
            distractor_rate: distractor,
            ..preset(name).unwrap()
        };
        let ds = sample_scenario(&cfg, seed).unwrap().dataset;
        prop_assert!(validate_dataset(&ds).is_empty());
        for s in &ds.streams {
            let mut ivs: Vec<Interval> = ds.labels_for(&s.id).iter().map(|l| l.interval).collect();
            ivs.sort_by_key(|iv| iv.t1);
            for w in ivs.windows(2) {
                prop_assert!(w[0].t2 < w[1].t1);
            }
            prop_assert!(ivs.iter().all(|iv| iv.t2 < s.len()));
            let mains = ds.labels_for(&s.id).iter().filter(|l| l.kind == ActivityKind::Main).count();
            prop_assert!(mains > 0);
        }
    }
}
