use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vins::dataio::{BinaryMask, BoundingBox, Frame, FrameSequence};
use vins::evaluation::{
    copy_paste_baseline, delta_mask, detector_recall, iou, ois_score, poisson_blend,
    poisson_residual, poisson_solve, Detection, Detector, EvalSummary, GroundTruthDetector,
    OisReport, SampleRecord,
};
use vins::inference::CompositeResult;
use vins::Error;

fn random_frame(h: usize, w: usize, rng: &mut impl Rng) -> Frame {
    Frame::from_fn(h, w, 0, |_, _, _| rng.random::<f64>()).unwrap()
}

fn random_mask(h: usize, w: usize, p: f64, rng: &mut impl Rng) -> BinaryMask {
    BinaryMask::from_fn(h, w, |_, _| rng.random::<f64>() < p)
}

#[test]
fn delta_mask_examples() {
    let u = Frame::filled(8, 8, [0.25, 0.5, 0.75]).unwrap();
    let r = Frame::filled(8, 8, [0.75, 0.5, 0.25]).unwrap();
    assert_eq!(delta_mask(&u, &u, &r).unwrap().count(), 64);
    assert_eq!(delta_mask(&r, &u, &r).unwrap().count(), 0);
    // Dyadic values make the midpoint exact, so both distances tie.
    let mid = Frame::filled(8, 8, [0.5, 0.5, 0.5]).unwrap();
    assert_eq!(delta_mask(&mid, &u, &r).unwrap().count(), 0);
    let small = Frame::filled(8, 10, [0.5; 3]).unwrap();
    assert!(delta_mask(&small, &u, &r).is_err());
}

#[test]
fn ois_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = random_mask(12, 12, 0.4, &mut rng);
    let same = ois_score(&s, &s).unwrap();
    assert_eq!(
        same,
        OisReport {
            precision: 1.0,
            recall: 1.0,
            ois: 1.0
        }
    );
    let a = BinaryMask::from_fn(8, 8, |y, _| y < 4);
    let b = BinaryMask::from_fn(8, 8, |y, _| y >= 4);
    assert_eq!(
        ois_score(&a, &b).unwrap(),
        OisReport {
            precision: 0.0,
            recall: 0.0,
            ois: 0.0
        }
    );
    let empty = BinaryMask::empty(8, 8);
    assert_eq!(ois_score(&a, &empty).unwrap().precision, 0.0);
    assert_eq!(ois_score(&empty, &a).unwrap().recall, 0.0);
    assert!(ois_score(&a, &BinaryMask::empty(8, 9)).is_err());
}

#[test]
fn ois_of_published_precision_and_recall() {
    let r = OisReport::from_pr(0.85, 0.72);
    assert!((r.ois - 0.78).abs() < 0.005, "{}", r.ois);
}

#[test]
fn ois_matches_pixel_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let (h, w) = (rng.random_range(8..24), rng.random_range(8..24));
        let a = random_mask(h, w, rng.random(), &mut rng);
        let d = random_mask(h, w, rng.random(), &mut rng);
        let (mut both, mut na, mut nd) = (0.0, 0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                if a.get(y, x) {
                    na += 1.0;
                }
                if d.get(y, x) {
                    nd += 1.0;
                }
                if a.get(y, x) && d.get(y, x) {
                    both += 1.0;
                }
            }
        }
        let p = if nd > 0.0 { both / nd } else { 0.0 };
        let r = if na > 0.0 { both / na } else { 0.0 };
        let f = if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        };
        let got = ois_score(&a, &d).unwrap();
        assert!((got.precision - p).abs() < 1e-12);
        assert!((got.recall - r).abs() < 1e-12);
        assert!((got.ois - f).abs() < 1e-12);
    }
}

#[test]
fn iou_examples() {
    let a = BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
    assert_eq!(iou(&a, &a), 1.0);
    let far = BoundingBox::new(20.0, 20.0, 5.0, 5.0).unwrap();
    assert_eq!(iou(&a, &far), 0.0);
    let half = BoundingBox::new(5.0, 0.0, 10.0, 10.0).unwrap();
    assert!((iou(&a, &half) - 1.0 / 3.0).abs() < 1e-12);
}

fn any_box() -> impl Strategy<Value = BoundingBox> {
    (-50.0..50.0f64, -50.0..50.0f64, 0.5..40.0f64, 0.5..40.0f64)
        .prop_map(|(x, y, w, h)| BoundingBox::new(x, y, w, h).unwrap())
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in any_box(), b in any_box()) {
        let ab = iou(&a, &b);
        prop_assert!((ab - iou(&b, &a)).abs() < 1e-12);
        prop_assert!(ab >= 0.0);
        let bound = a.area().min(b.area()) / a.area().max(b.area());
        prop_assert!(ab <= bound + 1e-12);
    }

    #[test]
    fn ois_is_in_unit_range(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_mask(10, 10, 0.5, &mut rng);
        let d = random_mask(10, 10, 0.5, &mut rng);
        let r = ois_score(&a, &d).unwrap();
        for v in [r.precision, r.recall, r.ois] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(r.ois <= r.precision.max(r.recall) + 1e-12);
    }
}

fn fake_result(n: usize) -> CompositeResult {
    let frames: Vec<Frame> = (0..n)
        .map(|t| Frame::filled(32, 32, [0.5; 3]).unwrap().with_index(t))
        .collect();
    let seq = FrameSequence::new(frames, 10.0).unwrap();
    CompositeResult {
        video: seq.clone(),
        per_frame_regions: (0..n)
            .map(|t| BoundingBox::new(2.0 + t as f64, 4.0, 8.0, 16.0).unwrap())
            .collect(),
        patches: seq,
        inputs: Vec::new(),
        truncated: false,
    }
}

struct Nothing;

impl Detector for Nothing {
    fn detect(&self, _: &Frame, _: Option<&BoundingBox>) -> vins::Result<Vec<Detection>> {
        Ok(Vec::new())
    }
}

/// Reports the hinted box shifted right by a fixed amount.
struct Shifted(f64);

impl Detector for Shifted {
    fn detect(&self, _: &Frame, near: Option<&BoundingBox>) -> vins::Result<Vec<Detection>> {
        Ok(near
            .map(|b| Detection {
                bbox: b.translated(self.0, 0.0),
                score: 0.9,
            })
            .into_iter()
            .collect())
    }
}

struct Broken;

impl Detector for Broken {
    fn detect(&self, f: &Frame, _: Option<&BoundingBox>) -> vins::Result<Vec<Detection>> {
        if f.index() == 2 {
            Err(Error::Validation("detector crashed".into()))
        } else {
            Ok(Vec::new())
        }
    }
}

#[test]
fn recall_of_trivial_detectors() {
    let results = vec![fake_result(4), fake_result(3)];
    let oracle = GroundTruthDetector::from_results(&results[..1]);
    assert_eq!(detector_recall(&results[..1], &oracle, 0.5).unwrap(), 1.0);
    assert_eq!(detector_recall(&results, &Nothing, 0.5).unwrap(), 0.0);
    assert!(detector_recall(&results, &Nothing, 0.0).is_err());
    match detector_recall(&results, &Broken, 0.5) {
        Err(Error::Detector { result, frame, .. }) => assert_eq!((result, frame), (0, 2)),
        other => panic!("expected a detector error, got {:?}", other),
    }
}

#[test]
fn low_scores_are_ignored() {
    struct Weak;
    impl Detector for Weak {
        fn detect(&self, _: &Frame, near: Option<&BoundingBox>) -> vins::Result<Vec<Detection>> {
            Ok(vec![Detection {
                bbox: *near.unwrap(),
                score: 0.3,
            }])
        }
    }
    assert_eq!(detector_recall(&[fake_result(2)], &Weak, 0.5).unwrap(), 0.0);
}

#[test]
fn recall_is_monotone_in_the_threshold() {
    let results = vec![fake_result(5)];
    // A box of width 8 shifted by 2 has IoU 6/10.
    let det = Shifted(2.0);
    let mut last = 1.0;
    for k in 1..=20 {
        let t = k as f64 / 20.0;
        let r = detector_recall(&results, &det, t).unwrap();
        assert!(r <= last);
        last = r;
    }
    assert_eq!(detector_recall(&results, &det, 0.6).unwrap(), 1.0);
    assert_eq!(detector_recall(&results, &det, 0.65).unwrap(), 0.0);
}

#[test]
fn copy_paste_definitions() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let u = random_frame(12, 10, &mut rng);
    let r = random_frame(12, 10, &mut rng);
    let full = BinaryMask::from_fn(12, 10, |_, _| true);
    assert_eq!(
        copy_paste_baseline(&u, &r, &full).unwrap().pixels(),
        u.pixels()
    );
    let s = random_mask(12, 10, 0.3, &mut rng);
    let out = copy_paste_baseline(&u, &r, &s).unwrap();
    for y in 0..12 {
        for x in 0..10 {
            let want = if s.get(y, x) {
                u.pixel(y, x)
            } else {
                r.pixel(y, x)
            };
            assert_eq!(out.pixel(y, x), want);
        }
    }
    assert_eq!(delta_mask(&out, &u, &r).unwrap(), s);
    let rep = ois_score(&s, &delta_mask(&out, &u, &r).unwrap()).unwrap();
    assert_eq!(rep.ois, 1.0);
    assert!(copy_paste_baseline(&u, &Frame::filled(8, 8, [0.0; 3]).unwrap(), &s).is_err());
}

#[test]
fn poisson_constant_cases() {
    let mask = BinaryMask::from_fn(12, 12, |y, x| (3..9).contains(&y) && (2..10).contains(&x));
    let u = Frame::filled(12, 12, [0.9, 0.1, 0.4]).unwrap();
    let r = Frame::filled(12, 12, [0.3, 0.6, 0.2]).unwrap();
    let out = poisson_blend(&u, &r, &mask).unwrap();
    for (a, b) in out.pixels().iter().zip(r.pixels()) {
        assert!((a - b).abs() < 1e-9);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let v = random_frame(12, 12, &mut rng);
    let same = poisson_blend(&v, &v, &mask).unwrap();
    for (a, b) in same.pixels().iter().zip(v.pixels()) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn poisson_guards() {
    let u = Frame::filled(10, 10, [0.5; 3]).unwrap();
    let border = BinaryMask::from_fn(10, 10, |y, x| y == 0 && x == 4);
    assert!(matches!(
        poisson_blend(&u, &u, &border),
        Err(Error::Validation(_))
    ));
    assert!(poisson_blend(&u, &u, &BinaryMask::empty(10, 10)).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random_frame(10, 10, &mut rng);
    let mask = BinaryMask::from_fn(10, 10, |y, x| (2..8).contains(&y) && (2..8).contains(&x));
    assert!(matches!(
        poisson_solve(&a, &u, &mask, 1),
        Err(Error::NoConvergence { iterations: 1, .. })
    ));
}

fn interior_mask(h: usize, w: usize, rng: &mut impl Rng) -> BinaryMask {
    loop {
        let p = rng.random_range(0.2..0.9);
        let m = BinaryMask::from_fn(h, w, |y, x| {
            y > 0 && x > 0 && y + 1 < h && x + 1 < w && rng.random::<f64>() < p
        });
        if m.count() > 0 {
            return m;
        }
    }
}

#[test]
fn poisson_matches_a_dense_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (h, w) = (16, 16);
    let u = random_frame(h, w, &mut rng);
    let r = random_frame(h, w, &mut rng);
    let mask = interior_mask(h, w, &mut rng);
    let field = poisson_solve(&u, &r, &mask, 10_000).unwrap();

    let cells: Vec<(usize, usize)> = (0..h * w)
        .map(|i| (i / w, i % w))
        .filter(|&(y, x)| mask.get(y, x))
        .collect();
    let n = cells.len();
    let pos = |y: usize, x: usize| cells.iter().position(|&c| c == (y, x));
    let mut a = DMatrix::<f64>::zeros(n, n);
    for (i, &(y, x)) in cells.iter().enumerate() {
        a[(i, i)] = 4.0;
        for (yy, xx) in [(y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)] {
            if let Some(j) = pos(yy, xx) {
                a[(i, j)] = -1.0;
            }
        }
    }
    let lu = a.lu();
    for c in 0..3 {
        let b = DVector::from_fn(n, |i, _| {
            let (y, x) = cells[i];
            let mut v = 0.0;
            for (yy, xx) in [(y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)] {
                v += u.get(y, x, c) - u.get(yy, xx, c);
                if !mask.get(yy, xx) {
                    v += r.get(yy, xx, c);
                }
            }
            v
        });
        let sol = lu.solve(&b).unwrap();
        for (i, &(y, x)) in cells.iter().enumerate() {
            assert!((field.get(y, x, c) - sol[i]).abs() < 1e-5);
        }
    }
}

#[test]
fn poisson_satisfies_its_equation_on_random_masks() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let (h, w) = (rng.random_range(8..20), rng.random_range(8..20));
        let u = random_frame(h, w, &mut rng);
        let r = random_frame(h, w, &mut rng);
        let mask = interior_mask(h, w, &mut rng);
        let field = poisson_solve(&u, &r, &mask, 10 * mask.count() + 100).unwrap();
        assert!(poisson_residual(&field, &u, &mask) < 1e-6);
        for y in 0..h {
            for x in 0..w {
                if !mask.get(y, x) {
                    for c in 0..3 {
                        assert_eq!(field.get(y, x, c), r.get(y, x, c));
                    }
                }
            }
        }
        let clamped = poisson_blend(&u, &r, &mask).unwrap();
        assert!(clamped.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn report_lines_and_summary() {
    let recs = vec![
        SampleRecord::new("a", OisReport::from_pr(1.0, 0.5), Some(true)),
        SampleRecord::new("b", OisReport::from_pr(0.5, 0.5), Some(false)),
    ];
    let s = EvalSummary::from_records("copy_paste", &recs);
    assert_eq!(s.samples, 2);
    assert!((s.precision - 0.75).abs() < 1e-12);
    assert_eq!(s.detector_recall, Some(0.5));
    let mut out = Vec::new();
    vins::evaluation::write_report(&recs, &s, &mut out).unwrap();
    let lines: Vec<serde_json::Value> = String::from_utf8(out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0]["matched"], true);
    assert_eq!(lines[2]["summary"]["method"], "copy_paste");
}
