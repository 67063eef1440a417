mod common;

use common::ring_cameras;
use geoanchor_core::cvm::wire::{read_request, read_response, serve, write_request, write_response};
use geoanchor_core::cvm::{
    dilate_disk, gray_prefill, grow_mask, make_contextual_masks, plan_segments, run_schedule, ConstantFillBackend,
    ContextualMask, FailFromBackend, FlakyBackend, IdentityBackend, InpaintBackend, ProcessBackend, Scheduler,
    ScribbleBackend, SegmentPlan, GRAY_PREFILL,
};
use geoanchor_core::error::Error;
use geoanchor_core::geometry::{BinaryMask, RgbImage, Sim3Transform, TriangleMesh};
use proptest::prelude::*;
use std::time::Duration;

#[test]
fn zero_growth_keeps_base() {
    let base = BinaryMask::from_fn(20, 15, |x, y| (3..9).contains(&x) && (4..7).contains(&y));
    assert_eq!(grow_mask(&base, 0, 0), base);
}

#[test]
fn single_pixel_dilates_to_thirteen_pixel_disk() {
    let mut base = BinaryMask::new(11, 11);
    base.set(5, 5, true);
    let d = dilate_disk(&base, 2);
    assert_eq!(d.count(), 13);
    for y in 0..11i64 {
        for x in 0..11i64 {
            let inside = (x - 5).pow(2) + (y - 5).pow(2) <= 4;
            assert_eq!(d.get(x as usize, y as usize), inside, "({x}, {y})");
        }
    }
}

#[test]
fn shadow_extends_square_downward() {
    let base = BinaryMask::from_fn(20, 20, |x, y| (5..10).contains(&x) && (4..9).contains(&y));
    let g = grow_mask(&base, 0, 3);
    let (x0, y0, x1, y1) = g.bbox().unwrap();
    assert_eq!((x0, y0, x1, y1), (5, 4, 9, 11));
    assert_eq!(g.count(), base.count() + 3 * 5);
    // Clipped at the bottom edge.
    let low = BinaryMask::from_fn(8, 8, |x, y| x == 2 && y == 6);
    assert_eq!(grow_mask(&low, 0, 3).count(), 2);
}

proptest! {
    #[test]
    fn dilated_area_is_monotone(seed in any::<u64>(), r in 0usize..5, shadow in 0usize..4) {
        let base = BinaryMask::from_fn(24, 18, |x, y| (x as u64 * 31 + y as u64 * 17 + seed).is_multiple_of(23));
        let a = grow_mask(&base, r, shadow);
        let b = grow_mask(&base, r + 1, shadow);
        prop_assert!(a.contains(&base));
        prop_assert!(b.contains(&a));
        prop_assert!(b.count() >= a.count());
    }

    #[test]
    fn plans_cover_and_overlap(n in 1usize..300, l in 1usize..80, k in 0usize..80) {
        prop_assume!(l <= n && k < l);
        let p = plan_segments(n, l, k).unwrap();
        let mut covered = vec![false; n];
        for s in &p.segments {
            prop_assert_eq!(s.len(), l);
            covered[s.clone()].iter_mut().for_each(|c| *c = true);
        }
        prop_assert!(covered.iter().all(|&c| c));
        prop_assert_eq!(p.segments[0].start, 0);
        prop_assert_eq!(p.segments.last().unwrap().end, n);
        for j in 1..p.len() {
            prop_assert!(p.segments[j].start > p.segments[j - 1].start);
            prop_assert!(p.overlap_with_previous(j) >= k);
        }
        for j in 1..p.len().saturating_sub(1) {
            prop_assert_eq!(p.overlap_with_previous(j), k);
        }
    }
}

#[test]
fn plan_examples() {
    let p = plan_segments(10, 10, 0).unwrap();
    assert_eq!(p.segments, vec![0..10]);
    let p = plan_segments(81, 33, 9).unwrap();
    assert_eq!(p.segments, vec![0..33, 24..57, 48..81]);
    assert_eq!(p.overlap_with_previous(1), 9);
    assert_eq!(p.overlap_with_previous(2), 9);
    let p = plan_segments(90, 33, 9).unwrap();
    assert_eq!(p.segments.last().unwrap().clone(), 57..90);
    assert!(p.overlap_with_previous(p.len() - 1) >= 9);
    assert_eq!(plan_segments(12, 12, 11).unwrap().segments, vec![0..12]);
    assert!(plan_segments(10, 5, 5).is_err());
    assert!(plan_segments(10, 11, 0).is_err());
    assert!(plan_segments(0, 1, 0).is_err());
}

fn frames(n: usize, w: usize, h: usize) -> Vec<RgbImage> {
    (0..n)
        .map(|i| {
            let mut f = RgbImage::new(w, h);
            for y in 0..h {
                for x in 0..w {
                    f.set(x, y, [(x * 9 + i) as u8, (y * 11 + 3 * i) as u8, (x + y + 7 * i) as u8]);
                }
            }
            f
        })
        .collect()
}

fn masks(n: usize, w: usize, h: usize) -> Vec<ContextualMask> {
    (0..n)
        .map(|i| {
            let cx = 4 + i % (w - 8).max(1);
            let base = BinaryMask::from_fn(w, h, |x, y| x.abs_diff(cx) <= 2 && y.abs_diff(h / 2) <= 2);
            ContextualMask::from_base(i, base, 1, 2)
        })
        .collect()
}

fn outside_unchanged(input: &[RgbImage], output: &[RgbImage], masks: &[ContextualMask]) -> bool {
    input.iter().zip(output).zip(masks).all(|((a, b), m)| {
        (0..a.height()).all(|y| (0..a.width()).all(|x| m.dilated.get(x, y) || a.get(x, y) == b.get(x, y)))
    })
}

#[test]
fn identity_backend_returns_gray_prefilled_input() {
    let (f, m) = (frames(20, 24, 16), masks(20, 24, 16));
    let plan = plan_segments(20, 8, 3).unwrap();
    let out = run_schedule(&f, &m, &plan, "a chair", &mut IdentityBackend, 0).unwrap();
    assert_eq!(out.len(), 20);
    for i in 0..20 {
        assert_eq!(out[i], gray_prefill(&f[i], &m[i]));
        assert_eq!(out[i].get(m[i].base.bbox().unwrap().0, 8), GRAY_PREFILL);
    }
    assert!(outside_unchanged(&f, &out, &m));
}

/// Records every response so overlaps can be compared across segments.
struct Recording<B> {
    inner: B,
    responses: Vec<(usize, Vec<RgbImage>)>,
}

impl<B: InpaintBackend> InpaintBackend for Recording<B> {
    fn inpaint(
        &mut self,
        req: &geoanchor_core::cvm::InpaintRequest,
    ) -> geoanchor_core::Result<geoanchor_core::cvm::InpaintResponse> {
        let r = self.inner.inpaint(req)?;
        self.responses.push((req.first_frame, r.frames.clone()));
        Ok(r)
    }
}

#[test]
fn constant_fill_has_no_seams_at_overlaps() {
    let (f, m) = (frames(30, 24, 16), masks(30, 24, 16));
    let plan = plan_segments(30, 10, 4).unwrap();
    let mut backend = Recording { inner: ConstantFillBackend::default(), responses: Vec::new() };
    let out = run_schedule(&f, &m, &plan, "", &mut backend, 0).unwrap();
    assert!(outside_unchanged(&f, &out, &m));
    for j in 1..plan.len() {
        let (prev_start, prev) = &backend.responses[j - 1];
        let (start, cur) = &backend.responses[j];
        for frame in plan.segments[j].start..plan.segments[j - 1].end {
            let earlier = &prev[frame - prev_start];
            let later = &cur[frame - start];
            assert_eq!(&out[frame], earlier, "frame {frame} keeps the earlier segment");
            assert_eq!(later, earlier, "anchor frame {frame} identical from both sides");
        }
    }
    // Frames owned only by a later segment carry that segment's color.
    let last = plan.len() - 1;
    let owned = plan.segments[last - 1].end;
    let (x, y) = (m[owned].base.bbox().unwrap().0, 8);
    assert_eq!(out[owned].get(x, y), ConstantFillBackend::default().colors[last % 4]);
}

#[test]
fn single_frame_schedule() {
    let (f, m) = (frames(1, 16, 16), masks(1, 16, 16));
    let plan = plan_segments(1, 1, 0).unwrap();
    let out = run_schedule(&f, &m, &plan, "", &mut ConstantFillBackend::default(), 0).unwrap();
    assert_eq!(out.len(), 1);
    assert!(outside_unchanged(&f, &out, &m));
}

#[test]
fn misbehaving_backend_is_clamped() {
    let (f, m) = (frames(25, 24, 16), masks(25, 24, 16));
    let plan = plan_segments(25, 9, 3).unwrap();
    let mut s = Scheduler::new(&f, &m, &plan, "", 0).unwrap();
    let mut backend = ScribbleBackend { seed: 5 };
    let out = s.run(&mut backend, |_, _| Ok(())).unwrap();
    assert!(outside_unchanged(&f, &out, &m));
    let report = s.report();
    assert!(report.clamped_pixels > 0);
    let shared: usize = (1..plan.len()).map(|j| plan.overlap_with_previous(j)).sum();
    assert_eq!(report.anchor_repairs, shared);
}

#[test]
fn schedule_is_deterministic() {
    let (f, m) = (frames(25, 24, 16), masks(25, 24, 16));
    let plan = plan_segments(25, 9, 3).unwrap();
    let a = run_schedule(&f, &m, &plan, "x", &mut ScribbleBackend { seed: 1 }, 0).unwrap();
    let b = run_schedule(&f, &m, &plan, "x", &mut ScribbleBackend { seed: 1 }, 0).unwrap();
    assert_eq!(a, b);
}

#[test]
fn retries_absorb_transient_failures() {
    let (f, m) = (frames(12, 16, 16), masks(12, 16, 16));
    let plan = plan_segments(12, 6, 2).unwrap();
    let mut flaky = FlakyBackend::new(IdentityBackend, 2);
    let mut s = Scheduler::new(&f, &m, &plan, "", 2).unwrap();
    s.run(&mut flaky, |_, _| Ok(())).unwrap();
    assert_eq!(s.report().retries, 2);
    let mut flaky = FlakyBackend::new(IdentityBackend, 3);
    let err = run_schedule(&f, &m, &plan, "", &mut flaky, 2).unwrap_err();
    assert!(matches!(err, Error::Backend { segment: 0, .. }));
}

#[test]
fn failure_leaves_resumable_checkpoint() {
    let (f, m) = (frames(30, 16, 16), masks(30, 16, 16));
    let plan = plan_segments(30, 10, 4).unwrap();
    let full = run_schedule(&f, &m, &plan, "", &mut ConstantFillBackend::default(), 0).unwrap();

    let mut s = Scheduler::new(&f, &m, &plan, "", 1).unwrap();
    let mut checkpoints = Vec::new();
    let mut failing = FailFromBackend { inner: ConstantFillBackend::default(), fail_from: 2 };
    let err = s.run(&mut failing, |s, _| {
        checkpoints.push(s.checkpoint());
        Ok(())
    });
    assert!(matches!(err, Err(Error::Backend { segment: 2, .. })));
    assert_eq!(s.completed_segments(), 2);
    let cp = checkpoints.last().unwrap();
    assert_eq!(cp.completed_segments, 2);
    let committed = cp.frame_sha256.iter().filter(|h| h.is_some()).count();
    assert_eq!(committed, plan.segments[1].end);

    let partial = s.committed().to_vec();
    let mut resumed = Scheduler::new(&f, &m, &plan, "", 0).unwrap();
    resumed.resume(partial, 2).unwrap();
    let out = resumed.run(&mut ConstantFillBackend::default(), |_, _| Ok(())).unwrap();
    assert_eq!(out, full);
    assert!(resumed.resume(vec![None; 30], 1).is_err());
}

#[test]
fn inconsistent_inputs_are_rejected() {
    let (f, m) = (frames(10, 16, 16), masks(10, 16, 16));
    let plan = plan_segments(10, 5, 1).unwrap();
    assert!(Scheduler::new(&f[..9], &m[..9], &plan, "", 0).is_err());
    let mut bad = m.clone();
    bad[3] = ContextualMask::from_base(3, BinaryMask::new(8, 8), 0, 0);
    assert!(Scheduler::new(&f, &bad, &plan, "", 0).is_err());
    let tampered = SegmentPlan { segments: vec![0..5, 5..10], ..plan };
    assert!(Scheduler::new(&f, &m, &tampered, "", 0).is_err());
}

#[test]
fn contextual_masks_from_mesh() {
    let cams = ring_cameras(6, 4.0, 1.5, 48, 60.0);
    let ms = make_contextual_masks(&TriangleMesh::unit_cube(), &Sim3Transform::identity(), &cams, 2, 3).unwrap();
    assert_eq!(ms.len(), 6);
    for (i, c) in ms.iter().enumerate() {
        assert_eq!(c.frame, i);
        assert!(c.base.count() > 0);
        assert!(c.dilated.contains(&c.base) && c.dilated.count() > c.base.count());
    }
}

#[test]
fn wire_round_trip() {
    let (f, m) = (frames(12, 16, 12), masks(12, 16, 12));
    let plan = plan_segments(12, 6, 2).unwrap();
    let mut s = Scheduler::new(&f, &m, &plan, "a lamp", 0).unwrap();
    s.step(&mut IdentityBackend).unwrap();
    let req = s.request(1).unwrap();
    assert_eq!(req.anchors.len(), 2);
    let mut buf = Vec::new();
    write_request(&mut buf, &req).unwrap();
    assert_eq!(read_request(&mut buf.as_slice()).unwrap(), req);

    let mut responses = Vec::new();
    assert_eq!(serve(&mut buf.as_slice(), &mut responses, &mut IdentityBackend).unwrap(), 1);
    let resp = read_response(&mut responses.as_slice()).unwrap();
    assert_eq!(resp, IdentityBackend.inpaint(&req).unwrap());

    let mut err_buf = Vec::new();
    write_response(&mut err_buf, &Err(Error::Degenerate("boom".into())), 4).unwrap();
    assert!(matches!(read_response(&mut err_buf.as_slice()), Err(Error::Backend { segment: 4, .. })));
    assert!(read_request(&mut &buf[..buf.len() - 3]).is_err());
}

#[test]
fn process_backend_failures_are_backend_errors() {
    let (f, m) = (frames(4, 8, 8), masks(4, 8, 8));
    let plan = plan_segments(4, 4, 0).unwrap();
    let mut missing = ProcessBackend::new("/nonexistent/inpaint-model", vec![], Duration::from_secs(5));
    assert!(matches!(run_schedule(&f, &m, &plan, "", &mut missing, 0), Err(Error::Backend { .. })));
    let mut slow = ProcessBackend::new("sleep", vec!["5".into()], Duration::from_millis(200));
    let start = std::time::Instant::now();
    assert!(matches!(run_schedule(&f, &m, &plan, "", &mut slow, 0), Err(Error::Backend { .. })));
    assert!(start.elapsed() < Duration::from_secs(4));
    let mut silent = ProcessBackend::new("true", vec![], Duration::from_secs(5));
    assert!(matches!(run_schedule(&f, &m, &plan, "", &mut silent, 0), Err(Error::Backend { .. })));
}
