//! Point tracking into observed images, 3D lifting through depth maps,
//! normal-aligned consensus across views and gated correspondence sets.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::camera::{point_visibility, Camera, DepthMap, RasterBuffers};
use crate::error::{Error, Result};
use crate::math::{Vec2, Vec3};

pub const DEFAULT_GATE: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackQuery {
    pub frame: usize,
    pub camera: usize,
    pub id: usize,
    pub pixel: Vec2,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackResult {
    pub pixel: Vec2,
    pub confidence: f64,
    pub valid: bool,
}

impl TrackResult {
    pub fn invalid() -> Self {
        TrackResult {
            pixel: Vec2::new(f64::NAN, f64::NAN),
            confidence: 0.0,
            valid: false,
        }
    }
}

/// What a tracker sees of the query side: the rendered template for one camera.
#[derive(Clone, Copy)]
pub struct RenderedView<'a> {
    pub camera: &'a Camera,
    pub render: &'a RasterBuffers,
    /// Template positions the render was produced from.
    pub positions: &'a [Vec3],
    pub faces: &'a [[usize; 3]],
}

/// Maps a pixel of the rendered template to its match in the observed image of the
/// same frame and camera.
pub trait PointTracker: Sync {
    fn track(&self, view: &RenderedView<'_>, query: &TrackQuery) -> TrackResult;
}

/// Deterministic per-query RNG, independent of evaluation order.
pub fn query_rng(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        h = splitmix(h ^ p.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    }
    ChaCha8Rng::seed_from_u64(h)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Template surface point `(face, barycentrics)` under image coordinate `p`: the ray
/// through `p` is intersected with the faces rasterized in the 3x3 pixel
/// neighborhood, keeping the nearest hit.
pub fn surface_point_under(view: &RenderedView<'_>, p: Vec2) -> Option<(usize, [f64; 3])> {
    let (w, h) = (view.render.width() as isize, view.render.height() as isize);
    let (px, py) = (p.x.floor() as isize, p.y.floor() as isize);
    let mut cands: Vec<usize> = Vec::with_capacity(9);
    for dy in -1..=1 {
        for dx in -1..=1 {
            let (x, y) = (px + dx, py + dy);
            if x < 0 || y < 0 || x >= w || y >= h {
                continue;
            }
            let f = view.render.face_id[(y * w + x) as usize];
            if f >= 0 && !cands.contains(&(f as usize)) {
                cands.push(f as usize);
            }
        }
    }
    if cands.is_empty() {
        return None;
    }
    cands.sort_unstable();
    let cam = view.camera;
    let o = cam.origin();
    let target = cam.unproject(p, 1.0).ok()?;
    let dir = target - o;
    let mut best: Option<(f64, f64, usize, [f64; 3])> = None;
    for &f in &cands {
        let [a, b, c] = view.faces[f].map(|v| view.positions[v]);
        let Some((t, bary)) = ray_triangle(&o, &dir, &a, &b, &c) else { continue };
        let outside = bary.iter().map(|&x| (-x).max(0.0)).sum::<f64>();
        let key = (outside, t);
        if best.is_none_or(|(bo, bt, _, _)| key < (bo, bt)) {
            best = Some((outside, t, f, bary));
        }
    }
    let (outside, _, f, bary) = best?;
    // accept small excursions caused by the pixel-grid candidate search
    if outside > 1e-6 {
        let mut b = bary.map(|x| x.max(0.0));
        let s: f64 = b.iter().sum();
        b.iter_mut().for_each(|x| *x /= s);
        return Some((f, b));
    }
    Some((f, bary))
}

/// Ray-plane intersection with barycentrics of the hit (may lie outside the triangle).
fn ray_triangle(o: &Vec3, d: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<(f64, [f64; 3])> {
    let e1 = b - a;
    let e2 = c - a;
    let pv = d.cross(&e2);
    let det = e1.dot(&pv);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let tv = o - a;
    let u = tv.dot(&pv) * inv;
    let qv = tv.cross(&e1);
    let v = d.dot(&qv) * inv;
    let t = e2.dot(&qv) * inv;
    (t > 0.0).then_some((t, [1.0 - u - v, u, v]))
}

/// Ground-truth tracker for synthetic scenes: the template surface point under the
/// query is carried to the same `(face, barycentric)` on the ground-truth surface,
/// projected, perturbed by Gaussian pixel noise and occasionally replaced by a
/// uniform outlier.
pub struct OracleTracker<'a> {
    /// Ground-truth positions per frame (template connectivity).
    pub gt_positions: &'a [Vec<Vec3>],
    /// Observed depth per frame and camera, indexed `[frame][camera]`.
    pub gt_depth: &'a [Vec<DepthMap>],
    pub noise_sigma: f64,
    pub outlier_rate: f64,
    pub visibility_eps: f64,
    pub seed: u64,
}

impl OracleTracker<'_> {
    /// Exact match before noise, or `None` when occluded or off-image in the observation.
    pub fn exact_match(&self, view: &RenderedView<'_>, q: &TrackQuery) -> Option<Vec2> {
        let (f, bary) = surface_point_under(view, q.pixel)?;
        let gt = &self.gt_positions[q.frame];
        let face = view.faces[f];
        let p = gt[face[0]] * bary[0] + gt[face[1]] * bary[1] + gt[face[2]] * bary[2];
        let vis = point_visibility(&[p], view.camera, &self.gt_depth[q.frame][q.camera], self.visibility_eps)[0];
        vis.then(|| view.camera.project(&p).pixel)
    }

    fn perturb(&self, cam: &Camera, q: &TrackQuery, exact: Vec2) -> TrackResult {
        let mut rng = query_rng(self.seed, &[q.frame as u64, q.camera as u64, q.id as u64]);
        if self.outlier_rate > 0.0 && rng.random::<f64>() < self.outlier_rate {
            let p = Vec2::new(rng.random::<f64>() * cam.width as f64, rng.random::<f64>() * cam.height as f64);
            return TrackResult {
                pixel: p,
                confidence: 1.0,
                valid: true,
            };
        }
        let mut p = exact;
        if self.noise_sigma > 0.0 {
            let n = Normal::new(0.0, self.noise_sigma).expect("finite sigma");
            p += Vec2::new(n.sample(&mut rng), n.sample(&mut rng));
        }
        if !cam.contains(&p) {
            return TrackResult::invalid();
        }
        TrackResult {
            pixel: p,
            confidence: 1.0,
            valid: true,
        }
    }
}

impl PointTracker for OracleTracker<'_> {
    fn track(&self, view: &RenderedView<'_>, q: &TrackQuery) -> TrackResult {
        match self.exact_match(view, q) {
            Some(p) => self.perturb(view.camera, q, p),
            None => TrackResult::invalid(),
        }
    }
}

/// Baseline that chains tracks through time: on top of the oracle's per-query
/// noise, each track carries a random-walk offset accumulated over frames.
pub struct LongTermTracker<'a> {
    pub oracle: OracleTracker<'a>,
    /// Per-frame step of the random walk, in pixels.
    pub step_sigma: f64,
}

impl PointTracker for LongTermTracker<'_> {
    fn track(&self, view: &RenderedView<'_>, q: &TrackQuery) -> TrackResult {
        let mut r = self.oracle.track(view, q);
        if !r.valid || self.step_sigma <= 0.0 {
            return r;
        }
        let n = Normal::new(0.0, self.step_sigma).expect("finite sigma");
        let mut offset = Vec2::zeros();
        for t in 1..=q.frame {
            let mut rng = query_rng(self.oracle.seed ^ 0x5eed, &[t as u64, q.camera as u64, q.id as u64]);
            offset += Vec2::new(n.sample(&mut rng), n.sample(&mut rng));
        }
        r.pixel += offset;
        if !view.camera.contains(&r.pixel) {
            return TrackResult::invalid();
        }
        r.confidence = 1.0 / (1.0 + q.frame as f64);
        r
    }
}

/// Queries `tracker` at the projection of every visible anchor.
pub fn track_points(
    frame: usize,
    camera: usize,
    view: &RenderedView<'_>,
    anchors: &[Vec3],
    tracker: &dyn PointTracker,
    eps: f64,
) -> Vec<TrackResult> {
    let vis = point_visibility(anchors, view.camera, &view.render.depth, eps);
    anchors
        .par_iter()
        .enumerate()
        .map(|(id, a)| {
            if !vis[id] {
                return TrackResult::invalid();
            }
            let q = TrackQuery {
                frame,
                camera,
                id,
                pixel: view.camera.project(a).pixel,
            };
            tracker.track(view, &q)
        })
        .collect()
}

/// [`track_points`] at the template vertices of the view.
pub fn track_vertices(frame: usize, camera: usize, view: &RenderedView<'_>, tracker: &dyn PointTracker, eps: f64) -> Vec<TrackResult> {
    track_points(frame, camera, view, view.positions, tracker, eps)
}

/// A lifted 3D target from one view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence3D {
    pub target: Vec3,
    pub view: usize,
    pub score: f64,
    pub valid: bool,
}

impl Correspondence3D {
    pub fn invalid(view: usize) -> Self {
        Correspondence3D {
            target: Vec3::zeros(),
            view,
            score: -1.0,
            valid: false,
        }
    }
}

/// Unprojects a track through the observed depth map; the score is left at zero
/// for the caller to fill in.
pub fn lift_track(cam: &Camera, view: usize, depth: &DepthMap, t: &TrackResult) -> Correspondence3D {
    if !t.valid || !cam.contains(&t.pixel) {
        return Correspondence3D::invalid(view);
    }
    let Some(s) = depth.sample_bilinear(t.pixel) else {
        return Correspondence3D::invalid(view);
    };
    match cam.unproject(t.pixel, s.depth) {
        Ok(p) => Correspondence3D {
            target: p,
            view,
            score: 0.0,
            valid: true,
        },
        Err(_) => Correspondence3D::invalid(view),
    }
}

pub fn view_score(anchor: &Vec3, normal: &Vec3, cam: &Camera) -> Result<f64> {
    cam.view_score(anchor, normal)
}

/// Highest-scoring candidate among valid, visible views with positive score.
/// Ties go to the lower position in `cands`.
pub fn select_consensus(cands: &[Correspondence3D], visibility: &[bool]) -> Option<Correspondence3D> {
    let mut best: Option<Correspondence3D> = None;
    for (c, vis) in cands.iter().zip(visibility) {
        if !c.valid || !*vis || !(c.score > 0.0) {
            continue;
        }
        if best.is_none_or(|b| c.score > b.score) {
            best = Some(*c);
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorKind {
    Vertex,
    Texel,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrespondencePair {
    pub id: usize,
    pub anchor: Vec3,
    pub target: Vec3,
    pub view: usize,
    pub score: f64,
}

/// Gated anchor-target pairs for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondenceSet {
    pub frame: usize,
    pub kind: AnchorKind,
    pub gate: f64,
    pub pairs: Vec<CorrespondencePair>,
}

impl CorrespondenceSet {
    pub fn empty(frame: usize, kind: AnchorKind, gate: f64) -> Self {
        CorrespondenceSet {
            frame,
            kind,
            gate,
            pairs: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Keeps consensus targets strictly closer than `gate` to their anchors.
pub fn build_correspondence_set(
    frame: usize,
    kind: AnchorKind,
    anchors: &[Vec3],
    lifted: &[Option<Correspondence3D>],
    gate: f64,
) -> Result<CorrespondenceSet> {
    if anchors.len() != lifted.len() {
        return Err(Error::dim("lifted correspondences", anchors.len(), lifted.len()));
    }
    let pairs = anchors
        .iter()
        .zip(lifted)
        .enumerate()
        .filter_map(|(id, (a, l))| {
            let l = l.as_ref()?;
            (l.valid && l.target.iter().all(|v| v.is_finite()) && (a - l.target).norm() < gate).then_some(CorrespondencePair {
                id,
                anchor: *a,
                target: l.target,
                view: l.view,
                score: l.score,
            })
        })
        .collect();
    Ok(CorrespondenceSet { frame, kind, gate, pairs })
}

/// Per-view inputs for [`correspond`].
pub struct ViewObservation<'a> {
    pub camera: &'a Camera,
    pub tracks: &'a [TrackResult],
    /// Anchor visibility in the rendered template.
    pub visibility: &'a [bool],
    /// Observed depth map used for lifting.
    pub depth: &'a DepthMap,
}

/// Lifts every view's tracks, scores them against the anchor normals, picks the
/// consensus view per anchor and applies the gate.
pub fn correspond(
    frame: usize,
    kind: AnchorKind,
    anchors: &[Vec3],
    normals: &[Vec3],
    views: &[ViewObservation<'_>],
    gate: f64,
) -> Result<CorrespondenceSet> {
    if normals.len() != anchors.len() {
        return Err(Error::dim("anchor normals", anchors.len(), normals.len()));
    }
    for v in views {
        if v.tracks.len() != anchors.len() || v.visibility.len() != anchors.len() {
            return Err(Error::dim("per-view tracks", anchors.len(), v.tracks.len()));
        }
    }
    let lifted: Vec<Option<Correspondence3D>> = (0..anchors.len())
        .into_par_iter()
        .map(|i| {
            let mut cands = Vec::with_capacity(views.len());
            let mut vis = Vec::with_capacity(views.len());
            for (c, v) in views.iter().enumerate() {
                let mut l = lift_track(v.camera, c, v.depth, &v.tracks[i]);
                if l.valid {
                    l.score = v.camera.view_score(&anchors[i], &normals[i]).unwrap_or(-1.0);
                }
                cands.push(l);
                vis.push(v.visibility[i]);
            }
            select_consensus(&cands, &vis)
        })
        .collect();
    build_correspondence_set(frame, kind, anchors, &lifted, gate)
}

#[derive(Serialize)]
struct CsvRow {
    frame: usize,
    id: usize,
    kind: AnchorKind,
    anchor_x: f64,
    anchor_y: f64,
    anchor_z: f64,
    target_x: f64,
    target_y: f64,
    target_z: f64,
    view: usize,
    score: f64,
    valid: bool,
}

pub fn write_correspondences_csv(path: impl AsRef<Path>, sets: &[CorrespondenceSet]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in sets {
        for p in &s.pairs {
            w.serialize(CsvRow {
                frame: s.frame,
                id: p.id,
                kind: s.kind,
                anchor_x: p.anchor.x,
                anchor_y: p.anchor.y,
                anchor_z: p.anchor.z,
                target_x: p.target.x,
                target_y: p.target.y,
                target_z: p.target.z,
                view: p.view,
                score: p.score,
                valid: true,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Mean 2D error of a batch of tracks against known pixels, for diagnostics.
pub fn mean_track_error(tracks: &[TrackResult], truth: &[Vec2]) -> Option<f64> {
    let errs: Vec<f64> = tracks
        .iter()
        .zip(truth)
        .filter(|(t, _)| t.valid)
        .map(|(t, p)| (t.pixel - p).norm())
        .collect();
    (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64)
}
