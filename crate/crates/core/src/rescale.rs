//! Rescaled-trajectory diagnostics.
//!
//! From a recorded run this module builds the linearly interpolated path
//! `x̄`, the window segmentation `T_n = min{t(m) : t(m) ≥ T_{n-1} + T}`,
//! the segment scale factors `r(n) = ‖x̄(T_n)‖ ∨ 1`, the rescaled path
//! `x̂ = x̄/r(n)`, the piecewise-constant drift `ẑ(t) = h_{r(n)}(x̂(t(m)), y_m)`,
//! and the rescaled noise partial sums `ζ̂_n = Σ_{k<n} a(k)·M̂_{k+1}`.
//!
//! On top of those come three diagnostics: the segment-ODE gap (which must
//! reduce to noise partial sums), the Cauchy check on `ζ̂`, and the
//! window-to-window contraction ratios behind the stability verdict.

use crate::convex::VectorField;
use crate::engine::SATrajectory;
use crate::error::{Error, Result};
use crate::linalg;
use crate::report::AuditReport;

/// One segment boundary: segment index, boundary time `T_n`, grid index
/// `m(n)` with `T_n = t(m(n))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentBoundary {
    pub index: usize,
    pub time: f64,
    pub grid_index: usize,
}

/// The window segmentation of a trajectory with its scale factors.
#[derive(Debug, Clone)]
pub struct SegmentIndex {
    t_window: f64,
    boundaries: Vec<SegmentBoundary>,
    r: Vec<f64>,
}

impl SegmentIndex {
    pub fn t_window(&self) -> f64 {
        self.t_window
    }

    pub fn boundaries(&self) -> &[SegmentBoundary] {
        &self.boundaries
    }

    /// Scale factors `r(n) ≥ 1`, one per boundary.
    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn len(&self) -> usize {
        self.boundaries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boundaries.is_empty()
    }

    /// Segment index owning time `t`: the last boundary with `time ≤ t`.
    pub fn segment_of(&self, t: f64) -> usize {
        match self
            .boundaries
            .partition_point(|b| b.time <= t)
        {
            0 => 0,
            k => k - 1,
        }
    }
}

/// Exact linear interpolation `x̄(t)` on the trajectory grid.
pub fn interpolate(traj: &SATrajectory, t: f64) -> Result<Vec<f64>> {
    let times = traj.times();
    let horizon = *times.last().unwrap();
    if !(t >= 0.0) || t > horizon {
        return Err(Error::Domain(format!(
            "interpolate: t = {t} outside [0, {horizon}]"
        )));
    }
    // exact grid hit
    let idx = times.partition_point(|&tm| tm <= t);
    let n = if idx == 0 { 0 } else { idx - 1 };
    if times[n] == t {
        return Ok(traj.xs()[n].clone());
    }
    let n = n.min(times.len() - 2);
    let a = traj.steps()[n];
    let w_left = (times[n + 1] - t) / a;
    let w_right = (t - times[n]) / a;
    Ok(traj.xs()[n]
        .iter()
        .zip(&traj.xs()[n + 1])
        .map(|(&l, &r)| w_left * l + w_right * r)
        .collect())
}

/// Build the segmentation for a window length `T`.
///
/// `T_0 = 0`; each later boundary is the first grid time at least `T`
/// past the previous one, so `T ≤ T_{n+1} − T_n ≤ T + 1` under the step
/// cap. Fails if the horizon does not cover a single window.
pub fn build_segments(traj: &SATrajectory, t_window: f64) -> Result<SegmentIndex> {
    if !(t_window > 0.0) {
        return Err(Error::Domain(format!("window must be positive, got {t_window}")));
    }
    let times = traj.times();
    let horizon = *times.last().unwrap();
    if horizon < t_window {
        return Err(Error::Domain(format!(
            "horizon {horizon} shorter than one window {t_window}"
        )));
    }
    let mut boundaries = vec![SegmentBoundary {
        index: 0,
        time: 0.0,
        grid_index: 0,
    }];
    let mut r = vec![linalg::norm(&traj.xs()[0]).max(1.0)];
    let mut m = 0usize;
    loop {
        let target = boundaries.last().unwrap().time + t_window;
        // first grid time ≥ target
        let next = times[m..].partition_point(|&tm| tm < target) + m;
        if next >= times.len() {
            break;
        }
        m = next;
        boundaries.push(SegmentBoundary {
            index: boundaries.len(),
            time: times[m],
            grid_index: m,
        });
        r.push(linalg::norm(&traj.xs()[m]).max(1.0));
    }
    Ok(SegmentIndex {
        t_window,
        boundaries,
        r,
    })
}

/// Read-only rescaled view over a trajectory: `x̂`, `ẑ`, and the noise
/// partial sums `ζ̂`.
#[derive(Debug)]
pub struct RescaledView<'a> {
    traj: &'a SATrajectory,
    segments: SegmentIndex,
    /// Segment index of each transition `k` (the segment owning `t(k)`).
    seg_of_step: Vec<usize>,
    /// `ζ̂_0 … ζ̂_K` with `ζ̂_n = Σ_{k<n} a(k)·M_{k+1}/r(seg(k))`.
    zeta: Vec<Vec<f64>>,
}

/// Build the rescaled view. Requires a dense (stride 1) trajectory: the
/// noise partial sums are only defined on the full grid.
pub fn rescaled_view<'a>(traj: &'a SATrajectory, segments: SegmentIndex) -> Result<RescaledView<'a>> {
    if traj.stride() != 1 {
        return Err(Error::Domain(
            "rescaled view requires a dense trajectory (stride 1)".into(),
        ));
    }
    let k_max = traj.transitions();
    let mut seg_of_step = Vec::with_capacity(k_max);
    let mut zeta = Vec::with_capacity(k_max + 1);
    let d = traj.dim();
    let mut acc = vec![0.0; d];
    zeta.push(acc.clone());
    for k in 0..k_max {
        let seg = segments.segment_of(traj.times()[k]);
        seg_of_step.push(seg);
        let r = segments.r()[seg];
        let a = traj.steps()[k];
        for (j, m) in traj.noises()[k].iter().enumerate() {
            acc[j] += a * (m / r);
        }
        zeta.push(acc.clone());
    }
    Ok(RescaledView {
        traj,
        segments,
        seg_of_step,
        zeta,
    })
}

impl<'a> RescaledView<'a> {
    pub fn trajectory(&self) -> &SATrajectory {
        self.traj
    }

    pub fn segments(&self) -> &SegmentIndex {
        &self.segments
    }

    pub fn zeta(&self) -> &[Vec<f64>] {
        &self.zeta
    }

    /// `x̂(t) = x̄(t)/r(n)` for `t` in segment `n`.
    pub fn x_hat(&self, t: f64) -> Result<Vec<f64>> {
        let x = interpolate(self.traj, t)?;
        let r = self.segments.r()[self.segments.segment_of(t)];
        Ok(linalg::scale(&x, 1.0 / r))
    }

    /// `ẑ(t) = h_{r(n)}(x̂(t(m)), y_m)` on the grid interval
    /// `[t(m), t(m+1))` inside segment `n`.
    pub fn z_hat(&self, t: f64, field: &VectorField) -> Result<Vec<f64>> {
        let times = self.traj.times();
        let horizon = *times.last().unwrap();
        if !(t >= 0.0) || t > horizon {
            return Err(Error::Domain(format!("z_hat: t = {t} outside [0, {horizon}]")));
        }
        let idx = times.partition_point(|&tm| tm <= t);
        let m = if idx == 0 { 0 } else { (idx - 1).min(self.traj.transitions() - 1) };
        let seg = self.seg_of_step[m];
        let r = self.segments.r()[seg];
        let x_hat_m = linalg::scale(&self.traj.xs()[m], 1.0 / r);
        field.scale_eval(r, &x_hat_m, self.traj.ys()[m])
    }

    /// Grid index range `[m(n), m_end]` of segment `n`'s window
    /// `[T_n, T_n + T]`, where `m_end` is the last grid index with
    /// `t(m) ≤ T_n + T`.
    fn window_grid_range(&self, n: usize) -> Result<(usize, usize)> {
        let bounds = self.segments.boundaries();
        if n + 1 >= bounds.len() {
            return Err(Error::Domain(format!(
                "segment {n} is not fully inside the horizon ({} boundaries)",
                bounds.len()
            )));
        }
        let start = bounds[n].grid_index;
        let t_end = bounds[n].time + self.segments.t_window();
        let times = self.traj.times();
        let m_end = times.partition_point(|&tm| tm <= t_end) - 1;
        Ok((start, m_end))
    }
}

/// Closed-form solution of `ẋ(t) = ẑ(T_n + t)`, `x(0) = x̂(T_n)` on
/// `[0, T]`: the drift is piecewise constant on grid intervals, so the
/// integral is an exact accumulation; `grid_dt` only controls the output
/// sampling.
pub fn segment_ode_solution(
    view: &RescaledView<'_>,
    field: &VectorField,
    n: usize,
    grid_dt: f64,
) -> Result<Vec<(f64, Vec<f64>)>> {
    if !(grid_dt > 0.0) {
        return Err(Error::Domain("grid_dt must be positive".into()));
    }
    let (anchors, t_n, t_window) = segment_anchor_points(view, field, n)?;
    let mut out = Vec::new();
    let mut tau = 0.0;
    while tau < t_window + 1e-12 {
        out.push((tau.min(t_window), eval_anchors(&anchors, t_n, tau.min(t_window))));
        tau += grid_dt;
    }
    if out.last().map(|(t, _)| *t < t_window).unwrap_or(true) {
        out.push((t_window, eval_anchors(&anchors, t_n, t_window)));
    }
    Ok(out)
}

/// Anchor points of the piecewise-linear segment solution: at each grid
/// time in the window, the accumulated value and the constant drift on the
/// following interval.
fn segment_anchor_points(
    view: &RescaledView<'_>,
    field: &VectorField,
    n: usize,
) -> Result<(Vec<(f64, Vec<f64>, Vec<f64>)>, f64, f64)> {
    let (m_start, m_end) = view.window_grid_range(n)?;
    let traj = view.trajectory();
    let times = traj.times();
    let r = view.segments.r()[n];
    let t_n = view.segments.boundaries()[n].time;

    let mut anchors = Vec::with_capacity(m_end - m_start + 2);
    let mut acc = linalg::scale(&traj.xs()[m_start], 1.0 / r);
    for m in m_start..=m_end {
        let x_hat_m = linalg::scale(&traj.xs()[m], 1.0 / r);
        let drift = field.scale_eval(r, &x_hat_m, traj.ys()[m])?;
        anchors.push((times[m], acc.clone(), drift.clone()));
        if m < m_end {
            acc = linalg::axpy(&acc, traj.steps()[m], &drift);
        }
    }
    Ok((anchors, t_n, view.segments.t_window()))
}

fn eval_anchors(anchors: &[(f64, Vec<f64>, Vec<f64>)], t_n: f64, tau: f64) -> Vec<f64> {
    let t_abs = t_n + tau;
    let idx = anchors.partition_point(|(tm, _, _)| *tm <= t_abs);
    let (tm, base, drift) = &anchors[if idx == 0 { 0 } else { idx - 1 }];
    linalg::axpy(base, t_abs - tm, drift)
}

/// Sup over the window's grid times of `‖x^n(t) − x̂(T_n + t)‖`
/// (geometric route: the exact segment-ODE solution against the rescaled
/// trajectory, both scaled by `r(n)`).
pub fn difftozero_gap(view: &RescaledView<'_>, field: &VectorField, n: usize) -> Result<f64> {
    let (anchors, _, _) = segment_anchor_points(view, field, n)?;
    let (m_start, m_end) = view.window_grid_range(n)?;
    let traj = view.trajectory();
    let r = view.segments.r()[n];
    let mut sup = 0.0f64;
    for (m, anchor) in (m_start..=m_end).zip(anchors.iter()) {
        // left-limit convention: scale by this segment's r even at T_{n+1}
        let x_hat = linalg::scale(&traj.xs()[m], 1.0 / r);
        sup = sup.max(linalg::dist(&anchor.1, &x_hat));
    }
    Ok(sup)
}

/// Independent route for the same gap: by the unfolded recursion the
/// difference at grid time `t(m)` is exactly the noise partial sum
/// `ζ̂_m − ζ̂_{m(n)}`, so the sup equals the max over the window of its
/// norms.
pub fn difftozero_noise_formula(view: &RescaledView<'_>, n: usize) -> Result<f64> {
    let (m_start, m_end) = view.window_grid_range(n)?;
    let base = &view.zeta[m_start];
    let mut sup = 0.0f64;
    for m in m_start..=m_end {
        sup = sup.max(linalg::dist(&view.zeta[m], base));
    }
    Ok(sup)
}

// ---------------------------------------------------------------------------
// Noise Cauchy check
// ---------------------------------------------------------------------------

/// Exact diameter of a finite point cloud.
///
/// d = 1 uses min/max; d = 2 uses the convex hull (diameter is attained at
/// hull vertices); higher dimensions use a deviation-sorted scan with the
/// classic `dev_i + dev_j ≤ best` cutoff (worst case quadratic, fast on
/// the clustered clouds produced here).
pub fn point_cloud_diameter(points: &[Vec<f64>]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let d = points[0].len();
    if d == 1 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in points {
            lo = lo.min(p[0]);
            hi = hi.max(p[0]);
        }
        return hi - lo;
    }
    if d == 2 {
        let hull = convex_hull_2d(points);
        let mut best = 0.0f64;
        for i in 0..hull.len() {
            for j in i + 1..hull.len() {
                best = best.max(linalg::dist(&hull[i], &hull[j]));
            }
        }
        return best;
    }
    // general dimension: sort by deviation from the centroid
    let mut centroid = vec![0.0; d];
    for p in points {
        for (c, v) in centroid.iter_mut().zip(p) {
            *c += v;
        }
    }
    for c in centroid.iter_mut() {
        *c /= points.len() as f64;
    }
    let mut devs: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (linalg::dist(p, &centroid), i))
        .collect();
    devs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut best = 0.0f64;
    for i in 0..devs.len() {
        if 2.0 * devs[i].0 <= best {
            break;
        }
        for j in (i + 1)..devs.len() {
            if devs[i].0 + devs[j].0 <= best {
                break;
            }
            best = best.max(linalg::dist(&points[devs[i].1], &points[devs[j].1]));
        }
    }
    best
}

/// Andrew's monotone chain; returns hull vertices (not ordered for area,
/// adequate for diameter-by-pairs).
fn convex_hull_2d(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p[0], p[1])).collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() < 3 {
        return pts.into_iter().map(|(x, y)| vec![x, y]).collect();
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower.into_iter().map(|(x, y)| vec![x, y]).collect()
}

/// Cauchy check on the rescaled noise sums: pass iff the diameter of
/// `{ζ̂_n : n ≥ tail_start}` is at most `tol`; the achieved sup is
/// reported.
pub fn noise_cauchy_check(view: &RescaledView<'_>, tail_start: usize, tol: f64) -> Result<AuditReport> {
    if tail_start + 2 > view.zeta.len() {
        return Err(Error::Domain(format!(
            "noise_cauchy_check: tail_start {tail_start} leaves fewer than 2 of {} partial sums",
            view.zeta.len()
        )));
    }
    let sup = point_cloud_diameter(&view.zeta[tail_start..]);
    let mut report = AuditReport::new("noise tail Cauchy");
    report.check_bound(
        "sup over tail pairs of |zeta_m - zeta_n|",
        sup,
        tol,
        Some(format!("tail_start = {tail_start}, achieved sup = {sup:.6e}")),
    );
    report.note(format!("tail length {}", view.zeta.len() - tail_start));
    Ok(report)
}

// ---------------------------------------------------------------------------
// Stability ratios
// ---------------------------------------------------------------------------

/// The contraction thresholds `δ₁ < δ₂ < δ₃ < δ₄ < 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaLadder {
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub delta4: f64,
}

impl DeltaLadder {
    /// Evenly spaced ladder above the attractor radius `δ₁`:
    /// `δ_{k+1} = δ₁ + 0.3k(1 − δ₁)`.
    pub fn from_delta1(delta1: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&delta1) {
            return Err(Error::Domain(format!("delta1 must lie in [0, 1), got {delta1}")));
        }
        let gap = 1.0 - delta1;
        Ok(DeltaLadder {
            delta1,
            delta2: delta1 + 0.3 * gap,
            delta3: delta1 + 0.6 * gap,
            delta4: delta1 + 0.9 * gap,
        })
    }

    pub fn new(delta1: f64, delta2: f64, delta3: f64, delta4: f64) -> Result<Self> {
        if !(0.0 <= delta1 && delta1 < delta2 && delta2 < delta3 && delta3 < delta4 && delta4 < 1.0)
        {
            return Err(Error::Domain(format!(
                "ladder must satisfy 0 ≤ δ₁ < δ₂ < δ₃ < δ₄ < 1, got ({delta1}, {delta2}, {delta3}, {delta4})"
            )));
        }
        Ok(DeltaLadder {
            delta1,
            delta2,
            delta3,
            delta4,
        })
    }
}

/// Per-segment contraction data produced by [`stability_ratio_audit`].
#[derive(Debug, Clone)]
pub struct RatioDiagnostics {
    /// `(segment, ‖x̄(T_{l+1})‖/‖x̄(T_l)‖)` for segments with `r(l) > 1`.
    pub ratios: Vec<(usize, f64)>,
    pub r_max: f64,
    pub r_final: f64,
    pub r_growing: bool,
}

/// Window-to-window contraction audit: beyond the burn-in, every segment
/// that starts outside the unit ball must contract by at least `δ₄`;
/// segments never leaving the unit ball pass vacuously. Also reports the
/// scale-factor sequence and a growth heuristic for (un)boundedness.
pub fn stability_ratio_audit(
    view: &RescaledView<'_>,
    ladder: &DeltaLadder,
    burn_in: usize,
) -> (AuditReport, RatioDiagnostics) {
    let traj = view.trajectory();
    let bounds = view.segments().boundaries();
    let r = view.segments().r();

    let mut ratios = Vec::new();
    for l in 0..bounds.len().saturating_sub(1) {
        if r[l] > 1.0 {
            let n0 = linalg::norm(&traj.xs()[bounds[l].grid_index]);
            let n1 = linalg::norm(&traj.xs()[bounds[l + 1].grid_index]);
            ratios.push((l, n1 / n0));
        }
    }
    let r_max = r.iter().cloned().fold(1.0f64, f64::max);
    let r_final = *r.last().unwrap_or(&1.0);
    let half = r.len() / 2;
    let first_half_max = r[..half.max(1)].iter().cloned().fold(1.0f64, f64::max);
    let second_half_max = r[half..].iter().cloned().fold(1.0f64, f64::max);
    let r_growing = r_max > 1.0 && second_half_max > 1.5 * first_half_max;

    let mut report = AuditReport::new("stability ratios");
    let late: Vec<&(usize, f64)> = ratios.iter().filter(|(l, _)| *l >= burn_in).collect();
    if late.is_empty() {
        report.check_flag(
            "contraction beyond burn-in",
            true,
            None,
        );
        report.note(format!(
            "vacuous pass: no segments with r > 1 after burn-in {burn_in}"
        ));
    } else {
        let (worst_l, worst) = late
            .iter()
            .fold((0usize, 0.0f64), |acc, (l, v)| if *v > acc.1 { (*l, *v) } else { acc });
        report.check_bound(
            "contraction beyond burn-in",
            worst,
            ladder.delta4,
            Some(format!(
                "segment {worst_l}: ratio {worst:.6} ≥ δ₄ = {}",
                ladder.delta4
            )),
        );
    }
    report.check_flag(
        "r(n) bounded (growth heuristic)",
        !r_growing,
        Some(format!(
            "r grows: max {r_max:.3e}, final {r_final:.3e}"
        )),
    );
    report.note(format!(
        "{} segments, {} with r > 1, r_max = {r_max:.6}",
        bounds.len(),
        ratios.len()
    ));
    (
        report,
        RatioDiagnostics {
            ratios,
            r_max,
            r_final,
            r_growing,
        },
    )
}

/// The uniform second-moment ceiling from the discrete Gronwall argument:
/// `([1 + (K+√K)(T+1)]·e^{(K+√K)(T+1)})²`.
pub fn second_moment_bound(k: f64, t_window: f64) -> f64 {
    let g = (k + k.sqrt()) * (t_window + 1.0);
    ((1.0 + g) * g.exp()).powi(2)
}

/// Diagnostics dump: `segment,T_n,m_n,r_n,ratio,gap,zeta_tail_sup`, one
/// row per segment that is fully inside the horizon.
pub fn write_diagnostics_csv<W: std::io::Write>(
    view: &RescaledView<'_>,
    field: &VectorField,
    mut w: W,
) -> Result<()> {
    writeln!(w, "segment,T_n,m_n,r_n,ratio,gap,zeta_tail_sup").map_err(io_err)?;
    let bounds = view.segments().boundaries();
    let r = view.segments().r();
    let traj = view.trajectory();
    for n in 0..bounds.len().saturating_sub(1) {
        let gap = difftozero_gap(view, field, n)?;
        let zsup = difftozero_noise_formula(view, n)?;
        let n0 = linalg::norm(&traj.xs()[bounds[n].grid_index]);
        let n1 = linalg::norm(&traj.xs()[bounds[n + 1].grid_index]);
        let ratio = if n0 > 0.0 { n1 / n0 } else { f64::NAN };
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            n, bounds[n].time, bounds[n].grid_index, r[n], ratio, gap, zsup
        )
        .map_err(io_err)?;
    }
    Ok(())
}

fn io_err(e: std::io::Error) -> Error {
    Error::Config(format!("diagnostics dump failed: {e}"))
}
