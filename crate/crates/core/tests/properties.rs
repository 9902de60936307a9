// SPDX-License-Identifier: Apache-2.0

use meshtrace_core::losses::chamfer;
use meshtrace_core::metrics::{evaluate, EvalConfig, Split};
use meshtrace_core::tracker::solve_assignment;
use meshtrace_core::{BBox, Detection, GroundTruthObject, PointSet, Vec3};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn bbox() -> impl Strategy<Value = BBox> {
    (0.0..300.0f64, 0.0..300.0f64, 4.0..150.0f64, 4.0..150.0f64)
        .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
}

fn points(n: usize) -> impl Strategy<Value = PointSet> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64), 1..n)
        .prop_map(|v| {
            let n = v.len();
            PointSet::new(v.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect(), vec![Vec3::z(); n]).unwrap()
        })
}

fn gt(frame: u64, k: usize, class: u32, b: BBox) -> GroundTruthObject {
    GroundTruthObject {
        frame_id: frame,
        clip_id: "c".into(),
        instance_id: k as u64,
        class_id: class,
        bbox: b,
        mask: None,
        mesh: None,
        occlusion: 0.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn box_iou_is_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let (ab, ba) = (a.iou(&b), b.iou(&a));
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((a.iou(&a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chamfer_is_a_symmetric_non_negative_discrepancy(p in points(40), q in points(40)) {
        let pq = chamfer(&p, &q).unwrap();
        prop_assert!(pq >= 0.0);
        prop_assert!((pq - chamfer(&q, &p).unwrap()).abs() <= 1e-12 * (1.0 + pq));
        prop_assert_eq!(chamfer(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn assignment_is_a_partial_matching_that_beats_nothing(
        n in 0usize..6, m in 0usize..6, seed in prop::collection::vec(-1.0..1.0f64, 36)
    ) {
        let s = DMatrix::from_fn(n, m, |i, j| seed[i * 6 + j]);
        let a = solve_assignment(&s);
        prop_assert_eq!(a.rows.len(), n);
        let used: Vec<usize> = a.rows.iter().flatten().copied().collect();
        let mut dedup = used.clone();
        dedup.sort_unstable();
        dedup.dedup();
        prop_assert_eq!(dedup.len(), used.len());
        prop_assert!(used.iter().all(|&j| j < m));
        prop_assert!(a.total(&s) >= 0.0);
        // Nothing matched to a negative score: dropping it would do better.
        for (i, r) in a.rows.iter().enumerate() {
            if let Some(j) = r {
                prop_assert!(s[(i, *j)] >= 0.0);
            }
        }
    }

    #[test]
    fn box_ap_is_bounded_and_perfect_for_exact_predictions(
        boxes in prop::collection::vec((bbox(), 0u32..3, 0u64..3, 0.0..1.0f64), 1..15)
    ) {
        let gts: Vec<GroundTruthObject> =
            boxes.iter().enumerate().map(|(k, (b, c, f, _))| gt(*f, k, *c, *b)).collect();
        let exact: Vec<Detection> = boxes
            .iter()
            .map(|(b, c, f, s)| {
                let mut d = Detection::new(*f, *c, *b, *s).unwrap();
                d.clip_id = "c".into();
                d
            })
            .collect();
        let cfg = EvalConfig { splits: vec![Split::All, Split::Small, Split::Medium, Split::Large], ..Default::default() };
        let report = evaluate(&exact, &gts, &cfg).unwrap();
        let all = report.split(Split::All).unwrap();
        for c in &all.categories {
            prop_assert_eq!(c.ap.box_ap, Some(1.0));
        }

        // Shifted predictions: AP stays in [0, 1] in every split.
        let shifted: Vec<Detection> = exact
            .iter()
            .map(|d| {
                let mut d = d.clone();
                d.bbox = d.bbox.translated(0.3 * d.bbox.width(), 0.0);
                d
            })
            .collect();
        let report = evaluate(&shifted, &gts, &cfg).unwrap();
        for s in &report.splits {
            for c in &s.categories {
                if let Some(ap) = c.ap.box_ap {
                    prop_assert!((0.0..=1.0).contains(&ap));
                }
            }
        }
    }

    #[test]
    fn prediction_order_does_not_matter_without_ties(
        boxes in prop::collection::vec((bbox(), 0u32..2, 0u64..2), 1..10),
        shift in 0.0..0.6f64,
    ) {
        let gts: Vec<GroundTruthObject> = boxes.iter().enumerate().map(|(k, (b, c, f))| gt(*f, k, *c, *b)).collect();
        let preds: Vec<Detection> = boxes
            .iter()
            .enumerate()
            .map(|(k, (b, c, f))| {
                let score = 1.0 / (k as f64 + 2.0);
                let mut d = Detection::new(*f, *c, b.translated(shift * b.width(), 0.0), score).unwrap();
                d.clip_id = "c".into();
                d
            })
            .collect();
        let mut reversed = preds.clone();
        reversed.reverse();
        let cfg = EvalConfig::default();
        let a = evaluate(&preds, &gts, &cfg).unwrap();
        let b = evaluate(&reversed, &gts, &cfg).unwrap();
        prop_assert_eq!(a.split(Split::All).unwrap().mean.box_ap, b.split(Split::All).unwrap().mean.box_ap);
    }
}
