//! Temporal and spatial alignment of two videos of the same dynamic scene.
//!
//! Time maps as `t2 = r·t1 + Δt` (query time to reference time). Space maps
//! either by a 2D affine transform or through a fundamental matrix.

use std::ops::RangeInclusive;

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{ensure, Error, Result};
use crate::geometry::{AffineTransform, FundamentalMatrix};
use crate::needle::{describe_video, DescriptorField, Location, NeedleParams};
use crate::nn;
use crate::significance::{build_codebook, select_informative, Codebook, ScoredMatch};
use crate::synth::resample_time;
use crate::video::Video;

pub const DEFAULT_RANSAC_ITERATIONS: usize = 2000;
pub const SUBFRAME_STEP: f64 = 0.1;
/// Largest distance between two normalized descriptors.
const OUTSIDE_PENALTY: f64 = std::f64::consts::SQRT_2;
/// Inlier radius, in pixels, for the least-squares polish of the winner.
const REFINE_RADIUS: f64 = 1.5;
const CONSENSUS_RADIUS: f64 = 1.0;
const CONSENSUS_ROUNDS: usize = 10;
/// Iteration cap for the descriptor-error descent after RANSAC.
const DESCENT_STEPS: usize = 50;
/// Number of top RANSAC hypotheses that are refined.
const DESCENT_STARTS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TemporalModel {
    pub rate_ratio: f64,
    pub shift: f64,
    /// Mean NN error per candidate integer shift.
    pub error_curve: Vec<(i64, f64)>,
}

impl TemporalModel {
    pub fn identity() -> Self {
        TemporalModel {
            rate_ratio: 1.0,
            shift: 0.0,
            error_curve: vec![(0, 0.0)],
        }
    }

    /// Reference frame paired with query frame `t1`.
    pub fn corresponding_frame(&self, t1: usize) -> i64 {
        map_frame(t1, self.rate_ratio, self.shift)
    }
}

#[inline]
fn map_frame(t1: usize, rate: f64, shift: f64) -> i64 {
    (rate * t1 as f64 + shift).round() as i64
}

#[inline]
fn unmap_frame(t2: usize, rate: f64, shift: f64) -> i64 {
    ((t2 as f64 - shift) / rate).round() as i64
}

/// `[-F/2, F/2]` for a query of `frames` frames.
pub fn default_shift_range(frames: usize) -> RangeInclusive<i64> {
    let h = (frames / 2) as i64;
    -h..=h
}

/// Query frames whose paired reference frame exists in both fields.
fn overlap_frames(q: &DescriptorField, r: &DescriptorField, rate: f64, shift: f64) -> usize {
    let (qr, rr) = (q.region(), r.region());
    (qr.t0..qr.t1)
        .filter(|&t| {
            let t2 = map_frame(t, rate, shift);
            t2 >= rr.t0 as i64 && t2 < rr.t1 as i64
        })
        .count()
}

/// Sum of squared NN distances, and their number, for informative points
/// of `from` searched in their single paired frame of `to`.
fn one_way_error(
    from: &DescriptorField,
    to: &DescriptorField,
    inf: &[Location],
    pair: impl Fn(usize) -> i64,
    valid_from: impl Fn(usize) -> bool,
) -> (f64, usize) {
    let tr = to.region();
    let mut sum = 0.0;
    let mut count = 0;
    for loc in inf {
        let t2 = pair(loc.t);
        if !valid_from(loc.t) || t2 < tr.t0 as i64 || t2 >= tr.t1 as i64 {
            continue;
        }
        let d = from
            .entries_at(*loc)
            .expect("informative location inside field");
        if let Some((sq, _)) = nn::nearest_in_frame(to, t2 as usize, d) {
            sum += sq;
            count += 1;
        }
    }
    (sum, count)
}

/// Mean squared NN distance at one shift, both directions pooled. `None`
/// when no informative point has a partner frame.
pub fn shift_error(
    q_field: &DescriptorField,
    r_field: &DescriptorField,
    q_inf: &[Location],
    r_inf: &[Location],
    shift: f64,
    rate: f64,
) -> Option<f64> {
    let qr = *q_field.region();
    let (s1, n1) = one_way_error(
        q_field,
        r_field,
        q_inf,
        |t| map_frame(t, rate, shift),
        |_| true,
    );
    // reverse matches only from reference frames inside the overlap
    let (s2, n2) = one_way_error(
        r_field,
        q_field,
        r_inf,
        |t| unmap_frame(t, rate, shift),
        |t| {
            let t1 = unmap_frame(t, rate, shift);
            t1 >= qr.t0 as i64 && t1 < qr.t1 as i64
        },
    );
    let n = n1 + n2;
    (n > 0).then(|| (s1 + s2) / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegerShift {
    pub shift: i64,
    pub error: f64,
    pub error_curve: Vec<(i64, f64)>,
}

/// Query descriptors built from the query with its first `offset` frames
/// dropped, so that its coarse pyramid levels sample a different phase.
#[derive(Debug, Clone, Copy)]
pub struct PhaseView<'a> {
    pub field: &'a DescriptorField,
    pub informative: &'a [Location],
    pub offset: usize,
}

/// Number of distinct pyramid phases, `2^(L-1)`.
pub fn phase_count(params: &NeedleParams) -> usize {
    1 << (params.scales - 1)
}

/// Phase whose coarse samples line up with the reference pyramid when the
/// query is shifted by `shift` frames.
fn phase_for(shift: i64, phases: usize) -> usize {
    (-shift).rem_euclid(phases as i64) as usize
}

/// Best integer shift over `range`; ties go to the smaller `|Δt|`, then to
/// the smaller value. Candidates whose overlap is shorter than one
/// descriptor length (`2ΓL` frames) are skipped.
pub fn integer_shift(
    q_field: &DescriptorField,
    r_field: &DescriptorField,
    q_inf: &[Location],
    r_inf: &[Location],
    range: RangeInclusive<i64>,
    rate: f64,
) -> Result<IntegerShift> {
    let view = PhaseView {
        field: q_field,
        informative: q_inf,
        offset: 0,
    };
    integer_shift_phased(&[view], r_field, r_inf, range, rate)
}

/// [`integer_shift`] where candidate `Δt` is scored with the query view of
/// phase `(-Δt) mod views.len()`. With one view per pyramid phase the
/// coarse scales of both videos sample the same instants at every
/// candidate, which the shared floor-rounded time index otherwise breaks
/// for shifts that are not multiples of `2^(L-1)`. Requires `rate == 1`
/// when more than one view is given.
pub fn integer_shift_phased(
    views: &[PhaseView<'_>],
    r_field: &DescriptorField,
    r_inf: &[Location],
    range: RangeInclusive<i64>,
    rate: f64,
) -> Result<IntegerShift> {
    ensure!(!views.is_empty(), InvalidArgument, "no query views");
    ensure!(
        views.iter().all(|v| !v.informative.is_empty()) && !r_inf.is_empty(),
        Empty,
        "informative sets must be non-empty"
    );
    ensure!(
        rate > 0.0 && rate.is_finite(),
        InvalidArgument,
        "rate ratio must be positive"
    );
    ensure!(
        views.len() == 1 || rate == 1.0,
        InvalidArgument,
        "phase views need a rate ratio of 1"
    );
    ensure!(
        views.iter().enumerate().all(|(p, v)| v.offset == p),
        InvalidArgument,
        "view p must drop exactly p frames"
    );
    ensure!(
        range.start() <= range.end(),
        InvalidArgument,
        "empty shift range {range:?}"
    );
    let n = views.len();
    let min_overlap = views[0].field.dim();
    let candidates: Vec<i64> = range
        .filter(|&d| {
            let v = &views[phase_for(d, n)];
            overlap_frames(v.field, r_field, rate, (d + v.offset as i64) as f64) >= min_overlap
        })
        .collect();
    ensure!(
        !candidates.is_empty(),
        Empty,
        "no candidate shift leaves {min_overlap} overlapping frames"
    );
    let curve: Vec<(i64, f64)> = candidates
        .par_iter()
        .filter_map(|&d| {
            let v = &views[phase_for(d, n)];
            let local = (d + v.offset as i64) as f64;
            shift_error(v.field, r_field, v.informative, r_inf, local, rate).map(|e| (d, e))
        })
        .collect();
    let &(shift, error) = curve
        .iter()
        .min_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then(a.0.abs().cmp(&b.0.abs()))
                .then(a.0.cmp(&b.0))
        })
        .ok_or_else(|| {
            Error::Empty("no overlapping informative descriptors at any shift".into())
        })?;
    Ok(IntegerShift {
        shift,
        error,
        error_curve: curve,
    })
}

pub fn phase_views(phases: &[(DescriptorField, Vec<Location>)]) -> Vec<PhaseView<'_>> {
    phases
        .iter()
        .enumerate()
        .map(|(offset, (field, informative))| PhaseView {
            field,
            informative,
            offset,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubframeShift {
    pub shift: f64,
    pub alpha: f64,
    pub alpha_curve: Vec<(f64, f64)>,
}

/// Refines `integer` by trying the reference resampled at `V2(t + α)` for
/// `α` in `[-1, 1]` with step 0.1. Each candidate reference is
/// re-described, its informative points re-selected with `cb`, and scored
/// against the phase-matched query view at the integer shift; the result
/// is `Δt = integer + α`. Ties go to the smaller `|α|`.
///
/// Resampling the reference rather than the query keeps the query
/// untouched: when the query is itself a blend of two neighbouring frames,
/// blending it again only smears it further and drags `α` towards zero.
pub fn subframe_shift(
    views: &[PhaseView<'_>],
    v2: &Video,
    cb: &Codebook,
    quota: usize,
    integer: i64,
    rate: f64,
) -> Result<SubframeShift> {
    ensure!(!views.is_empty(), InvalidArgument, "no query views");
    ensure!(
        views.len() == 1 || rate == 1.0,
        InvalidArgument,
        "phase views need a rate ratio of 1"
    );
    let view = views[phase_for(integer, views.len())];
    let params = *view.field.params();
    ensure!(
        v2.frame_count() >= params.min_frames(),
        TooShort,
        "reference of {} frames is too short for sub-frame search",
        v2.frame_count()
    );
    let local = (integer + view.offset as i64) as f64;
    let steps = (1.0 / SUBFRAME_STEP).round() as i64;
    let alphas: Vec<f64> = (-steps..=steps).map(|i| i as f64 * SUBFRAME_STEP).collect();
    let curve: Vec<(f64, f64)> = alphas
        .par_iter()
        .map(|&alpha| -> Result<Option<(f64, f64)>> {
            let field = describe_video(&resample_time(v2, alpha)?, &params)?;
            let inf = select_informative(&field, cb, quota)?;
            if inf.is_empty() {
                return Ok(None);
            }
            Ok(
                shift_error(view.field, &field, view.informative, &inf, local, rate)
                    .map(|e| (alpha, e)),
            )
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let &(alpha, _) = curve
        .iter()
        .min_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then(a.0.abs().total_cmp(&b.0.abs()))
                .then(a.0.total_cmp(&b.0))
        })
        .ok_or_else(|| Error::Empty("no sub-frame candidate could be scored".into()))?;
    Ok(SubframeShift {
        shift: integer as f64 + alpha,
        alpha,
        alpha_curve: curve,
    })
}

/// Nearest neighbour of each informative query point in its paired
/// reference frame, keeping only matches with positive saving in bits.
/// Exact ties go to the candidate closest to the query's own pixel.
/// Points whose paired frame falls outside the reference are skipped.
pub fn collect_matches(
    q_field: &DescriptorField,
    r_field: &DescriptorField,
    q_inf: &[Location],
    cb: &Codebook,
    temporal: &TemporalModel,
) -> Result<Vec<ScoredMatch>> {
    ensure!(
        q_field.dim() == r_field.dim(),
        InvalidArgument,
        "descriptor dimensions differ"
    );
    let rr = r_field.region();
    let paired: Vec<(Location, usize)> = q_inf
        .iter()
        .filter_map(|&loc| {
            let t2 = temporal.corresponding_frame(loc.t);
            (t2 >= rr.t0 as i64 && t2 < rr.t1 as i64).then_some((loc, t2 as usize))
        })
        .collect();
    ensure!(
        !paired.is_empty() || q_inf.is_empty(),
        Empty,
        "no informative query frame has a corresponding reference frame"
    );
    Ok(paired
        .par_iter()
        .filter_map(|&(loc, t2)| {
            let d = q_field.entries_at(loc)?;
            let (sq, idx) = nn::nearest_in_frame_near(r_field, t2, d, (loc.x, loc.y))?;
            let dh = cb.delta_h(d).ok()?;
            let m = ScoredMatch::new(loc, r_field.location(idx), dh, sq.sqrt());
            (m.saving_in_bits > 0.0).then_some(m)
        })
        .collect())
}

/// Informative query point prepared for affine scoring.
struct ScorePoint<'a> {
    x: f64,
    y: f64,
    t2: usize,
    entries: &'a [f64],
}

/// Bilinear interpolation of the descriptors around `(x, y)` in frame `t`,
/// written to `value`; with `grad`, also the derivatives along x and y.
/// Returns false outside the valid region.
fn sample_descriptor(
    field: &DescriptorField,
    x: f64,
    y: f64,
    t: usize,
    value: &mut [f64],
    grad: Option<(&mut [f64], &mut [f64])>,
) -> bool {
    let r = field.region();
    if !(x >= r.x0 as f64 && y >= r.y0 as f64 && x <= (r.x1 - 1) as f64 && y <= (r.y1 - 1) as f64)
        || !(r.t0..r.t1).contains(&t)
    {
        return false;
    }
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(r.x1 - 1), (y0 + 1).min(r.y1 - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let at = |xx, yy| {
        field
            .entries_at(Location::new(xx, yy, t))
            .expect("inside region")
    };
    let (a, b, c, d) = (at(x0, y0), at(x1, y0), at(x0, y1), at(x1, y1));
    for k in 0..value.len() {
        value[k] =
            (1.0 - fy) * ((1.0 - fx) * a[k] + fx * b[k]) + fy * ((1.0 - fx) * c[k] + fx * d[k]);
    }
    if let Some((gx, gy)) = grad {
        for k in 0..value.len() {
            gx[k] = (1.0 - fy) * (b[k] - a[k]) + fy * (d[k] - c[k]);
            gy[k] = (1.0 - fx) * (c[k] - a[k]) + fx * (d[k] - b[k]);
        }
    }
    true
}

fn affine_score(a: &AffineTransform, points: &[ScorePoint<'_>], r_field: &DescriptorField) -> f64 {
    let mut buf = vec![0.0; r_field.dim()];
    points
        .iter()
        .map(|p| {
            let (x, y) = a.apply(p.x, p.y);
            if sample_descriptor(r_field, x, y, p.t2, &mut buf, None) {
                nn::sq_dist(p.entries, &buf).sqrt()
            } else {
                OUTSIDE_PENALTY
            }
        })
        .sum()
}

/// Local descent on the summed descriptor error: Levenberg-Marquardt on
/// reweighted squared residuals (weights `1/|r|`), accepting only steps that
/// lower the score.
fn descend_affine(
    start: AffineTransform,
    points: &[ScorePoint<'_>],
    r_field: &DescriptorField,
) -> (AffineTransform, f64) {
    let dim = r_field.dim();
    let mut current = start;
    let mut score = affine_score(&current, points, r_field);
    let mut lambda = 1e-3;
    let (mut val, mut gx, mut gy) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    for _ in 0..DESCENT_STEPS {
        let mut jtj = nalgebra::Matrix6::<f64>::zeros();
        let mut jtr = nalgebra::Vector6::<f64>::zeros();
        for p in points {
            let (x, y) = current.apply(p.x, p.y);
            if !sample_descriptor(r_field, x, y, p.t2, &mut val, Some((&mut gx, &mut gy))) {
                continue;
            }
            let norm = nn::sq_dist(p.entries, &val).sqrt();
            let w = 1.0 / norm.max(1e-3);
            for k in 0..dim {
                // residual d_ref(Ap) - d_query and its gradient in the six parameters
                let r = val[k] - p.entries[k];
                let j = nalgebra::Vector6::new(
                    gx[k] * p.x,
                    gx[k] * p.y,
                    gx[k],
                    gy[k] * p.x,
                    gy[k] * p.y,
                    gy[k],
                );
                jtj += w * j * j.transpose();
                jtr += w * r * j;
            }
        }
        let mut improved = false;
        while lambda < 1e6 {
            let mut damped = jtj;
            for i in 0..6 {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let mut params = current.params;
            for (q, s) in params.iter_mut().zip(step.iter()) {
                *q -= s;
            }
            let candidate = match AffineTransform::new(params) {
                Ok(c) => c,
                Err(_) => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let cand_score = affine_score(&candidate, points, r_field);
            if cand_score < score {
                current = candidate;
                score = cand_score;
                lambda = (lambda / 10.0).max(1e-9);
                improved = true;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (current, score)
}

fn pixel(loc: Location) -> (f64, f64) {
    (loc.x as f64, loc.y as f64)
}

fn truncated_residual(a: &AffineTransform, matches: &[ScoredMatch]) -> f64 {
    matches
        .iter()
        .map(|m| {
            let (x, y) = a.apply(m.query_location.x as f64, m.query_location.y as f64);
            let (u, v) = pixel(m.match_location);
            ((x - u).powi(2) + (y - v).powi(2)).min(4.0 * REFINE_RADIUS * REFINE_RADIUS)
        })
        .sum()
}

/// Least-squares affine through all pairs.
pub fn fit_affine(pairs: &[((f64, f64), (f64, f64))]) -> Result<AffineTransform> {
    ensure!(
        pairs.len() >= 3,
        InvalidArgument,
        "need at least 3 point pairs"
    );
    let n = pairs.len();
    let mut a = DMatrix::zeros(n, 3);
    let mut bx = DMatrix::zeros(n, 1);
    let mut by = DMatrix::zeros(n, 1);
    for (i, &((x, y), (u, v))) in pairs.iter().enumerate() {
        a[(i, 0)] = x;
        a[(i, 1)] = y;
        a[(i, 2)] = 1.0;
        bx[(i, 0)] = u;
        by[(i, 0)] = v;
    }
    let svd = a.svd(true, true);
    let s = &svd.singular_values;
    let smax = s.max();
    ensure!(
        s.min() > 1e-9 * smax.max(1.0),
        Degenerate,
        "point pairs are collinear"
    );
    let px = svd
        .solve(&bx, 1e-12)
        .map_err(|e| Error::Degenerate(e.to_string()))?;
    let py = svd
        .solve(&by, 1e-12)
        .map_err(|e| Error::Degenerate(e.to_string()))?;
    AffineTransform::new([px[0], px[1], px[2], py[0], py[1], py[2]])
}

fn inlier_pairs(
    a: &AffineTransform,
    matches: &[ScoredMatch],
    radius: f64,
) -> Vec<((f64, f64), (f64, f64))> {
    matches
        .iter()
        .filter_map(|m| {
            let p = pixel(m.query_location);
            let q = pixel(m.match_location);
            let (x, y) = a.apply(p.0, p.1);
            ((x - q.0).hypot(y - q.1) <= radius).then_some((p, q))
        })
        .collect()
}

fn squared_residual(a: &AffineTransform, pairs: &[((f64, f64), (f64, f64))]) -> f64 {
    pairs
        .iter()
        .map(|&(p, q)| {
            let (x, y) = a.apply(p.0, p.1);
            (x - q.0).powi(2) + (y - q.1).powi(2)
        })
        .sum()
}

/// Repeated least-squares refit on the matches within [`CONSENSUS_RADIUS`],
/// kept while it gains support or lowers the residual on the same support.
fn consensus_polish(a: AffineTransform, matches: &[ScoredMatch]) -> AffineTransform {
    let mut current = a;
    let mut support = inlier_pairs(&current, matches, CONSENSUS_RADIUS);
    for _ in 0..CONSENSUS_ROUNDS {
        let Ok(next) = fit_affine(&support) else {
            break;
        };
        let next_support = inlier_pairs(&next, matches, CONSENSUS_RADIUS);
        let better = next_support.len() > support.len()
            || (next_support.len() == support.len()
                && squared_residual(&next, &next_support)
                    < squared_residual(&current, &support) * (1.0 - 1e-9));
        if !better {
            break;
        }
        current = next;
        support = next_support;
    }
    current
}

/// Least-squares polish on the matches within [`REFINE_RADIUS`] of `a`.
fn refine_affine(a: AffineTransform, matches: &[ScoredMatch]) -> AffineTransform {
    let mut current = a;
    for _ in 0..3 {
        let inliers: Vec<_> = matches
            .iter()
            .filter_map(|m| {
                let p = pixel(m.query_location);
                let q = pixel(m.match_location);
                let (x, y) = current.apply(p.0, p.1);
                (((x - q.0).powi(2) + (y - q.1).powi(2)).sqrt() <= REFINE_RADIUS).then_some((p, q))
            })
            .collect();
        match fit_affine(&inliers) {
            Ok(next) if next != current => current = next,
            _ => break,
        }
    }
    current
}

/// Each leading hypothesis gets a geometric polish, then descent on the
/// descriptor error from whichever of the two scores better.
fn descended_candidates(
    hypotheses: &[(f64, f64, usize, AffineTransform)],
    matches: &[ScoredMatch],
    points: &[ScorePoint<'_>],
    r_field: &DescriptorField,
) -> Vec<(f64, usize, AffineTransform)> {
    hypotheses
        .par_iter()
        .map(|&(score, _, it, a)| {
            let polished = refine_affine(a, matches);
            let start = if affine_score(&polished, points, r_field) <= score {
                polished
            } else {
                a
            };
            let (t, s) = descend_affine(start, points, r_field);
            (s, it, t)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AffineFit {
    pub transform: AffineTransform,
    /// Summed descriptor error over the informative query points.
    pub score: f64,
    pub inliers: usize,
}

/// RANSAC over 3-pair samples scored by the descriptor error between each
/// informative query point and the reference descriptor at its image,
/// bilinearly interpolated (√2 when it maps outside the valid region).
/// Ties go to the smaller truncated geometric residual over the matches,
/// then to the earlier iteration. The best few hypotheses are polished on
/// their geometric inliers and descended on the descriptor error; the
/// lowest-error result is finally refit to the matches within 1 px of it,
/// as long as that does not lose support.
pub fn ransac_affine(
    matches: &[ScoredMatch],
    q_field: &DescriptorField,
    r_field: &DescriptorField,
    q_inf: &[Location],
    temporal: &TemporalModel,
    iterations: usize,
    seed: u64,
) -> Result<AffineFit> {
    ensure!(
        matches.len() >= 3,
        InvalidArgument,
        "affine RANSAC needs at least 3 matches, got {}",
        matches.len()
    );
    ensure!(
        iterations >= 1,
        InvalidArgument,
        "iterations must be positive"
    );
    let rr = r_field.region();
    let points: Vec<ScorePoint<'_>> = q_inf
        .iter()
        .filter_map(|&loc| {
            let t2 = temporal.corresponding_frame(loc.t);
            if t2 < rr.t0 as i64 || t2 >= rr.t1 as i64 {
                return None;
            }
            Some(ScorePoint {
                x: loc.x as f64,
                y: loc.y as f64,
                t2: t2 as usize,
                entries: q_field.entries_at(loc)?,
            })
        })
        .collect();

    let mut hypotheses: Vec<(f64, f64, usize, AffineTransform)> = (0..iterations)
        .into_par_iter()
        .filter_map(|it| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(it as u64);
            let idx = sample(&mut rng, matches.len(), 3).into_vec();
            let src = [0, 1, 2].map(|k| pixel(matches[idx[k]].query_location));
            let dst = [0, 1, 2].map(|k| pixel(matches[idx[k]].match_location));
            let a = AffineTransform::from_three_pairs(src, dst).ok()?;
            let score = affine_score(&a, &points, r_field);
            Some((score, truncated_residual(&a, matches), it, a))
        })
        .collect();
    ensure!(
        !hypotheses.is_empty(),
        Degenerate,
        "all {iterations} samples were collinear"
    );
    hypotheses.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    hypotheses.truncate(DESCENT_STARTS);

    let cands = descended_candidates(&hypotheses, matches, &points, r_field);
    let (_, _, transform) = cands
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .expect("non-empty");
    let transform = consensus_polish(transform, matches);
    let inliers = matches
        .iter()
        .filter(|m| {
            let (x, y) = transform.apply(m.query_location.x as f64, m.query_location.y as f64);
            let (u, v) = pixel(m.match_location);
            ((x - u).powi(2) + (y - v).powi(2)).sqrt() <= REFINE_RADIUS
        })
        .count();
    Ok(AffineFit {
        transform,
        score: affine_score(&transform, &points, r_field),
        inliers,
    })
}

/// `(p2ᵀFp1)² / ((Fp1)₁² + (Fp1)₂² + (Fᵀp2)₁² + (Fᵀp2)₂²)`.
pub fn sampson_distance(f: &Matrix3<f64>, p1: (f64, f64), p2: (f64, f64)) -> Result<f64> {
    let a = Vector3::new(p1.0, p1.1, 1.0);
    let b = Vector3::new(p2.0, p2.1, 1.0);
    let fa = f * a;
    let fb = f.transpose() * b;
    let denom = fa[0] * fa[0] + fa[1] * fa[1] + fb[0] * fb[0] + fb[1] * fb[1];
    ensure!(
        denom >= 1e-18,
        Degenerate,
        "epipolar line gradients vanish at {p1:?}, {p2:?}"
    );
    let num = b.dot(&fa);
    Ok(num * num / denom)
}

/// Translation to the centroid and scaling to mean distance √2.
fn hartley(points: &[(f64, f64)]) -> Option<Matrix3<f64>> {
    let n = points.len() as f64;
    let (cx, cy) = points
        .iter()
        .fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
    let mean = points
        .iter()
        .map(|p| ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    (mean > 1e-12).then(|| {
        let s = std::f64::consts::SQRT_2 / mean;
        Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
    })
}

/// Normalized 8-point (or more) estimate of `F` with `p2ᵀFp1 = 0`.
pub fn eight_point(pairs: &[((f64, f64), (f64, f64))]) -> Result<FundamentalMatrix> {
    weighted_eight_point(pairs, None)
}

/// [`eight_point`] with a per-pair weight on each equation.
fn weighted_eight_point(
    pairs: &[((f64, f64), (f64, f64))],
    weights: Option<&[f64]>,
) -> Result<FundamentalMatrix> {
    ensure!(
        pairs.len() >= 8,
        InvalidArgument,
        "need at least 8 point pairs, got {}",
        pairs.len()
    );
    let p1: Vec<_> = pairs.iter().map(|p| p.0).collect();
    let p2: Vec<_> = pairs.iter().map(|p| p.1).collect();
    let t1 =
        hartley(&p1).ok_or_else(|| Error::Degenerate("coincident first-view points".into()))?;
    let t2 =
        hartley(&p2).ok_or_else(|| Error::Degenerate("coincident second-view points".into()))?;
    // pad to at least 9 rows so the SVD exposes the full right null space
    let rows = pairs.len().max(9);
    let mut a = DMatrix::zeros(rows, 9);
    for (i, (u, v)) in p1.iter().zip(&p2).enumerate() {
        let x1 = t1 * Vector3::new(u.0, u.1, 1.0);
        let x2 = t2 * Vector3::new(v.0, v.1, 1.0);
        let w = weights.map_or(1.0, |w| w[i]);
        for r in 0..3 {
            for c in 0..3 {
                a[(i, 3 * r + c)] = w * x2[r] * x1[c];
            }
        }
    }
    let svd = a.svd(false, true);
    let vt = svd
        .v_t
        .ok_or_else(|| Error::Degenerate("SVD failed".into()))?;
    let imin = svd.singular_values.imin();
    let s = &svd.singular_values;
    let mut sorted: Vec<f64> = s.iter().copied().collect();
    sorted.sort_by(f64::total_cmp);
    ensure!(
        sorted[1] > 1e-10 * sorted[8].max(1e-300),
        Degenerate,
        "point configuration does not determine F"
    );
    let f = vt.row(imin);
    let fhat = Matrix3::new(f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7], f[8]);
    let fhat = FundamentalMatrix::from_matrix(fhat)?;
    FundamentalMatrix::from_matrix(t2.transpose() * fhat.matrix() * t1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalFit {
    pub matrix: FundamentalMatrix,
    /// Mean Sampson distance over all pairs, each capped at
    /// [`SAMPSON_CAP`].
    pub score: f64,
}

/// Per-pair ceiling on the Sampson distance in the RANSAC score, so that
/// gross mismatches cannot outweigh the pairs a hypothesis explains.
pub const SAMPSON_CAP: f64 = 1.0;

fn mean_sampson(f: &FundamentalMatrix, pairs: &[((f64, f64), (f64, f64))]) -> Option<f64> {
    let mut sum = 0.0;
    for &(p1, p2) in pairs {
        sum += sampson_distance(f.matrix(), p1, p2).ok()?.min(SAMPSON_CAP);
    }
    Some(sum / pairs.len() as f64)
}

/// Inlier threshold on the Sampson distance for the final polish.
const SAMPSON_INLIER: f64 = 1.0;
/// Sampson-weighted rounds after the inlier set has settled.
const SAMPSON_ROUNDS: usize = 5;

/// Re-estimates `f` from its Sampson inliers until the inlier set settles,
/// then runs a few rounds where each equation is divided by its Sampson
/// denominator, so that the algebraic fit approximates the geometric one.
fn refine_fundamental(
    f: FundamentalMatrix,
    pairs: &[((f64, f64), (f64, f64))],
) -> FundamentalMatrix {
    let inliers_of = |f: &FundamentalMatrix| -> Vec<_> {
        pairs
            .iter()
            .copied()
            .filter(|&(a, b)| sampson_distance(f.matrix(), a, b).is_ok_and(|d| d < SAMPSON_INLIER))
            .collect()
    };
    let mut current = f;
    let mut last_count = 0;
    for _ in 0..5 {
        let inliers = inliers_of(&current);
        if inliers.len() < 8 || inliers.len() == last_count {
            break;
        }
        last_count = inliers.len();
        match eight_point(&inliers) {
            Ok(next) => current = next,
            Err(_) => break,
        }
    }
    for _ in 0..SAMPSON_ROUNDS {
        let inliers = inliers_of(&current);
        if inliers.len() < 8 {
            break;
        }
        let m = current.matrix();
        let weights: Vec<f64> = inliers
            .iter()
            .map(|&(a, b)| {
                let fa = m * Vector3::new(a.0, a.1, 1.0);
                let fb = m.transpose() * Vector3::new(b.0, b.1, 1.0);
                1.0 / (fa[0] * fa[0] + fa[1] * fa[1] + fb[0] * fb[0] + fb[1] * fb[1])
                    .sqrt()
                    .max(1e-12)
            })
            .collect();
        match weighted_eight_point(&inliers, Some(&weights)) {
            Ok(next) => current = next,
            Err(_) => break,
        }
    }
    current
}

/// RANSAC over 8-pair samples scored by the capped mean Sampson distance
/// over all pairs; degenerate samples are skipped. The winner is then
/// re-estimated from its inliers.
pub fn ransac_fundamental(
    pairs: &[((f64, f64), (f64, f64))],
    iterations: usize,
    seed: u64,
) -> Result<FundamentalFit> {
    ensure!(
        pairs.len() >= 8,
        InvalidArgument,
        "fundamental RANSAC needs at least 8 matches, got {}",
        pairs.len()
    );
    ensure!(
        iterations >= 1,
        InvalidArgument,
        "iterations must be positive"
    );
    let (_, _, best) = (0..iterations)
        .into_par_iter()
        .filter_map(|it| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(it as u64);
            let sample_pairs: Vec<_> = sample(&mut rng, pairs.len(), 8)
                .into_iter()
                .map(|i| pairs[i])
                .collect();
            let f = eight_point(&sample_pairs).ok()?;
            Some((mean_sampson(&f, pairs)?, it, f))
        })
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .ok_or_else(|| Error::Degenerate(format!("all {iterations} samples were degenerate")))?;
    let matrix = refine_fundamental(best, pairs);
    let score = mean_sampson(&matrix, pairs).unwrap_or(f64::INFINITY);
    Ok(FundamentalFit { matrix, score })
}

pub fn match_pairs(matches: &[ScoredMatch]) -> Vec<((f64, f64), (f64, f64))> {
    matches
        .iter()
        .map(|m| (pixel(m.query_location), pixel(m.match_location)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpatialKind {
    Affine,
    Fundamental,
}

impl std::str::FromStr for SpatialKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "affine" => Ok(SpatialKind::Affine),
            "fundamental" => Ok(SpatialKind::Fundamental),
            other => Err(Error::InvalidArgument(format!(
                "unknown spatial model {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignConfig {
    pub needle: NeedleParams,
    pub codebook_k: usize,
    pub sample_fraction: f64,
    pub quota: usize,
    pub ransac_iterations: usize,
    pub rate_ratio: f64,
    pub range: Option<RangeInclusive<i64>>,
    pub subframe: bool,
    pub spatial: SpatialKind,
    pub seed: u64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            needle: NeedleParams::default(),
            codebook_k: crate::significance::DEFAULT_CODEBOOK_K,
            sample_fraction: crate::significance::DEFAULT_SAMPLE_FRACTION,
            quota: crate::significance::DEFAULT_QUOTA,
            ransac_iterations: DEFAULT_RANSAC_ITERATIONS,
            rate_ratio: 1.0,
            range: None,
            subframe: true,
            spatial: SpatialKind::Affine,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpatialModel {
    Affine(AffineTransform),
    Fundamental(FundamentalMatrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub temporal: TemporalModel,
    pub integer_shift: i64,
    pub alpha: f64,
    pub spatial: SpatialModel,
    pub score: f64,
    /// Matches the spatial model was fitted to. Query frames may be offset
    /// by the phase view used for matching; pixel positions are not.
    pub matches: Vec<ScoredMatch>,
}

/// Full pipeline: describe both videos, build a joint codebook, find the
/// temporal model, then fit the spatial model to matches in paired frames.
pub fn align_videos(query: &Video, reference: &Video, cfg: &AlignConfig) -> Result<Alignment> {
    let q_field = describe_video(query, &cfg.needle)?;
    let r_field = describe_video(reference, &cfg.needle)?;
    let cb = build_codebook(
        &[&q_field, &r_field],
        cfg.sample_fraction,
        cfg.codebook_k,
        cfg.seed,
    )?;
    let r_inf = select_informative(&r_field, &cb, cfg.quota)?;
    let q_inf = select_informative(&q_field, &cb, cfg.quota)?;
    ensure!(
        !q_inf.is_empty() && !r_inf.is_empty(),
        Empty,
        "a video has no dynamic descriptors"
    );

    let phases = if cfg.rate_ratio == 1.0 {
        phase_count(&cfg.needle)
            .min(query.frame_count().saturating_sub(cfg.needle.min_frames()) + 1)
    } else {
        1
    };
    let mut described = vec![(q_field, q_inf)];
    if phases > 1 {
        let cropped: Vec<_> = (1..phases)
            .into_par_iter()
            .map(|p| -> Result<_> {
                let field =
                    describe_video(&query.sub_frames(p..query.frame_count())?, &cfg.needle)?;
                let inf = select_informative(&field, &cb, cfg.quota)?;
                Ok((field, inf))
            })
            .collect::<Result<_>>()?;
        described.extend(cropped);
    }
    let views: Vec<PhaseView<'_>> = phase_views(&described)
        .into_iter()
        .filter(|v| !v.informative.is_empty())
        .collect();
    let views = if views.len() == phases {
        views
    } else {
        phase_views(&described[..1])
    };

    let range = cfg
        .range
        .clone()
        .unwrap_or_else(|| default_shift_range(query.frame_count()));
    let int = integer_shift_phased(&views, &r_field, &r_inf, range, cfg.rate_ratio)?;
    let (shift, alpha) = if cfg.subframe {
        let sub = subframe_shift(&views, reference, &cb, cfg.quota, int.shift, cfg.rate_ratio)?;
        (sub.shift, sub.alpha)
    } else {
        (int.shift as f64, 0.0)
    };
    let temporal = TemporalModel {
        rate_ratio: cfg.rate_ratio,
        shift,
        error_curve: int.error_curve,
    };

    // spatial matching runs on the phase-aligned view, in its own time base
    let view = views[phase_for(shift.round() as i64, views.len())];
    let local = TemporalModel {
        shift: shift + view.offset as f64,
        ..temporal.clone()
    };
    let matches = collect_matches(view.field, &r_field, view.informative, &cb, &local)?;
    let (spatial, score) = match cfg.spatial {
        SpatialKind::Affine => {
            let fit = ransac_affine(
                &matches,
                view.field,
                &r_field,
                view.informative,
                &local,
                cfg.ransac_iterations,
                cfg.seed,
            )?;
            (SpatialModel::Affine(fit.transform), fit.score)
        }
        SpatialKind::Fundamental => {
            let fit = ransac_fundamental(&match_pairs(&matches), cfg.ransac_iterations, cfg.seed)?;
            (SpatialModel::Fundamental(fit.matrix), fit.score)
        }
    };
    Ok(Alignment {
        temporal,
        integer_shift: int.shift,
        alpha,
        spatial,
        score,
        matches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{mixed_scene, render, shift_time, Background};

    fn scene_video(frames: usize) -> Video {
        render(
            &mixed_scene(32, 32, Background::Textured(7)),
            32,
            32,
            frames,
            0,
        )
        .unwrap()
    }

    fn small_codebook(fields: &[&DescriptorField]) -> Codebook {
        build_codebook(fields, 0.05, 24, 3).unwrap()
    }

    #[test]
    fn self_alignment_is_zero_shift_with_zero_error() {
        let v = scene_video(64);
        let f = describe_video(&v, &NeedleParams::default()).unwrap();
        let cb = small_codebook(&[&f]);
        let inf = select_informative(&f, &cb, 300).unwrap();
        let s = integer_shift(&f, &f, &inf, &inf, -5..=5, 1.0).unwrap();
        assert_eq!(s.shift, 0);
        assert_eq!(s.error, 0.0);
        assert_eq!(s.error_curve.len(), 11);
    }

    #[test]
    fn planted_integer_shift_is_recovered_with_sign() {
        let v = scene_video(96);
        let params = NeedleParams::default();
        let f = describe_video(&v, &params).unwrap();
        let cb = small_codebook(&[&f]);
        for k in [-6i64, 5] {
            let shifted = shift_time(&v, k as f64).unwrap().video;
            let g = describe_video(&shifted, &params).unwrap();
            let (fi, gi) = (
                select_informative(&f, &cb, 300).unwrap(),
                select_informative(&g, &cb, 300).unwrap(),
            );
            // query = shifted copy, reference = original
            assert_eq!(
                integer_shift(&g, &f, &gi, &fi, -12..=12, 1.0)
                    .unwrap()
                    .shift,
                k
            );
            // and the reverse roles give the opposite sign
            assert_eq!(
                integer_shift(&f, &g, &fi, &gi, -12..=12, 1.0)
                    .unwrap()
                    .shift,
                -k
            );
        }
    }

    #[test]
    fn short_overlap_candidates_are_skipped() {
        // 64 frames leave valid frames 12..52; overlap 40 - |d| must reach 18
        let v = scene_video(64);
        let f = describe_video(&v, &NeedleParams::default()).unwrap();
        let cb = small_codebook(&[&f]);
        let inf = select_informative(&f, &cb, 100).unwrap();
        let s = integer_shift(&f, &f, &inf, &inf, -30..=30, 1.0).unwrap();
        assert_eq!(s.error_curve.first().unwrap().0, -22);
        assert_eq!(s.error_curve.last().unwrap().0, 22);
        assert!(integer_shift(&f, &f, &inf, &inf, 25..=30, 1.0).is_err());
        assert!(integer_shift(&f, &f, &[], &inf, 0..=0, 1.0).is_err());
    }

    #[test]
    fn identity_matches_are_exact_and_affine_is_identity() {
        let v = scene_video(48);
        let f = describe_video(&v, &NeedleParams::default()).unwrap();
        let cb = small_codebook(&[&f]);
        let inf = select_informative(&f, &cb, 200).unwrap();
        let tm = TemporalModel::identity();
        let m = collect_matches(&f, &f, &inf, &cb, &tm).unwrap();
        assert!(!m.is_empty());
        for s in &m {
            assert_eq!(s.delta_r, 0.0);
            assert_eq!(s.query_location, s.match_location);
            assert!(s.saving_in_bits > 0.0);
        }
        let fit = ransac_affine(&m, &f, &f, &inf, &tm, 50, 1).unwrap();
        for (a, b) in fit
            .transform
            .params
            .iter()
            .zip(AffineTransform::IDENTITY.params)
        {
            assert!((a - b).abs() < 1e-6);
        }
        assert_eq!(fit.score, 0.0);
    }

    #[test]
    fn ransac_affine_needs_three_matches() {
        let v = scene_video(40);
        let f = describe_video(&v, &NeedleParams::default()).unwrap();
        let m = ScoredMatch::new(Location::new(3, 3, 20), Location::new(3, 3, 20), 1.0, 0.0);
        let r = ransac_affine(&[m, m], &f, &f, &[], &TemporalModel::identity(), 10, 0);
        assert!(r.unwrap_err().is_validation());
        // three identical points are collinear in every sample
        assert!(ransac_affine(&[m, m, m], &f, &f, &[], &TemporalModel::identity(), 10, 0).is_err());
    }

    #[test]
    fn least_squares_affine_recovers_exact_pairs() {
        let a = AffineTransform::similarity(0.2, 1.1, 2.0, -1.0, (5.0, 5.0));
        let pairs: Vec<_> = [(0.0, 0.0), (9.0, 1.0), (3.0, 7.0), (8.0, 8.0)]
            .into_iter()
            .map(|p| (p, a.apply(p.0, p.1)))
            .collect();
        assert!(fit_affine(&pairs).unwrap().corner_error(&a, 20, 20) < 1e-9);
    }

    #[test]
    fn sampson_hand_value_and_symmetry() {
        // [e]x for e = (1, 2, 1)
        let f = Matrix3::new(0.0, -1.0, 2.0, 1.0, 0.0, -1.0, -2.0, 1.0, 0.0);
        let (p1, p2) = ((0.0, 0.0), (1.0, 0.0));
        // F p1 = (2, -1, 0); Fᵀ p2 = (-2, 0, 2); p2ᵀ F p1 = 2
        let want = 4.0 / (4.0 + 1.0 + 4.0 + 0.0);
        assert!((sampson_distance(&f, p1, p2).unwrap() - want).abs() < 1e-15);
        assert_eq!(
            sampson_distance(&f, p1, p2).unwrap(),
            sampson_distance(&f.transpose(), p2, p1).unwrap()
        );
        // on the epipolar line: p2ᵀ(F p1) = 0 for p2 = (1, 2)
        assert_eq!(sampson_distance(&f, p1, (1.0, 2.0)).unwrap(), 0.0);
        assert!(sampson_distance(&Matrix3::zeros(), p1, p2).is_err());
    }

    fn two_view_pairs(n: usize) -> (Matrix3<f64>, Vec<((f64, f64), (f64, f64))>) {
        // camera 1 at origin, camera 2 translated along x with a small yaw
        let k = Matrix3::new(100.0, 0.0, 50.0, 0.0, 100.0, 50.0, 0.0, 0.0, 1.0);
        let (s, c) = 0.1f64.sin_cos();
        let r = Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c);
        let t = Vector3::new(-1.0, 0.2, 0.1);
        let tx = Matrix3::new(0.0, -t[2], t[1], t[2], 0.0, -t[0], -t[1], t[0], 0.0);
        let kinv = k.try_inverse().unwrap();
        let f = kinv.transpose() * tx * r * kinv;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        use rand::Rng;
        let pairs = (0..n)
            .map(|_| {
                let x = Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(3.0..6.0),
                );
                let a = k * x;
                let b = k * (r * x + t);
                ((a[0] / a[2], a[1] / a[2]), (b[0] / b[2], b[1] / b[2]))
            })
            .collect();
        (f, pairs)
    }

    #[test]
    fn eight_point_is_exact_on_noise_free_pairs() {
        let (_, pairs) = two_view_pairs(8);
        let f = eight_point(&pairs).unwrap();
        for &(p1, p2) in &pairs {
            assert!(f.residual(p1, p2).abs() < 1e-8);
        }
        assert!(f.singular_values()[2] < 1e-8);
        assert!((f.matrix().norm() - 1.0).abs() < 1e-12);
        assert!(eight_point(&pairs[..7]).is_err());
        let same = vec![pairs[0]; 8];
        assert!(eight_point(&same).is_err());
    }

    #[test]
    fn ransac_fundamental_rejects_outliers() {
        let (truth, mut pairs) = two_view_pairs(60);
        for i in (0..60).step_by(10) {
            pairs[i].1 = (pairs[i].1 .0 + 17.0, pairs[i].1 .1 - 9.0);
        }
        let fit = ransac_fundamental(&pairs, 300, 2).unwrap();
        let truth = FundamentalMatrix::from_matrix(truth).unwrap();
        let inlier_mean = pairs
            .iter()
            .enumerate()
            .filter(|(i, _)| i % 10 != 0)
            .map(|(_, &(a, b))| sampson_distance(fit.matrix.matrix(), a, b).unwrap())
            .sum::<f64>()
            / 54.0;
        assert!(inlier_mean < 1e-6, "{inlier_mean}");
        let (e, et) = (
            fit.matrix.epipole_first().unwrap(),
            truth.epipole_first().unwrap(),
        );
        assert!(((e.0 - et.0).powi(2) + (e.1 - et.1).powi(2)).sqrt() < 1e-3);
    }
}
