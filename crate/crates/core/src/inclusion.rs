//! Selection-based Euler integration of differential inclusions
//! `ẋ(t) ∈ F(x(t))` with convex compact right-hand sets, plus the
//! attractor machinery built on top of it: flow bundles, flow-time
//! estimation `T(ε)`, empirical limit sets, and the attracting-set /
//! Lyapunov-decrease audits.
//!
//! Explicit Euler with a per-step selection is deliberate: selections of a
//! Marchaud map are merely measurable, so higher-order schemes have
//! nothing to act on.

use rand::Rng;

use crate::convex::ConvexSet;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::report::AuditReport;

/// Norm beyond which an integration is declared blown up.
pub const BLOW_UP_NORM: f64 = 1e150;

/// Default cluster radius for empirical limit sets.
pub const LIMIT_SET_CLUSTER_RADIUS: f64 = 1e-3;

/// Right-hand side contract: a set-valued map `x ↦ F(x)`.
pub type Rhs<'a> = dyn Fn(&[f64]) -> Result<ConvexSet> + 'a;

// ---------------------------------------------------------------------------
// Selections
// ---------------------------------------------------------------------------

/// How to pick a point from the current right-hand set. Every choice is a
/// convex combination of generators, so the selected point always lies in
/// the set.
#[derive(Debug, Clone, PartialEq)]
pub enum SelectionRule {
    /// A uniformly random generator each step.
    VertexRandom,
    /// A fixed generator index.
    FixedVertex(usize),
    /// The mean of the generators.
    Barycentric,
    /// Fixed convex weights over the generators (normalized; length must
    /// match the generator count of every set encountered).
    CustomWeights(Vec<f64>),
}

impl SelectionRule {
    pub fn select(&self, set: &ConvexSet, rng: &mut impl Rng) -> Result<Vec<f64>> {
        let gens = set.generators();
        match self {
            SelectionRule::VertexRandom => Ok(gens[rng.gen_range(0..gens.len())].clone()),
            SelectionRule::FixedVertex(i) => {
                if *i >= gens.len() {
                    return Err(Error::Domain(format!(
                        "fixed vertex {i} out of range ({} generators)",
                        gens.len()
                    )));
                }
                Ok(gens[*i].clone())
            }
            SelectionRule::Barycentric => {
                let mut acc = vec![0.0; set.dim()];
                for g in gens {
                    acc = linalg::add(&acc, g);
                }
                Ok(linalg::scale(&acc, 1.0 / gens.len() as f64))
            }
            SelectionRule::CustomWeights(w) => {
                if w.len() != gens.len() {
                    return Err(Error::DimensionMismatch {
                        what: "selection weights",
                        expected: gens.len(),
                        got: w.len(),
                    });
                }
                let total: f64 = w.iter().sum();
                if !(total > 0.0) || w.iter().any(|&x| x < 0.0) {
                    return Err(Error::Domain("selection weights must be nonnegative with positive sum".into()));
                }
                let mut acc = vec![0.0; set.dim()];
                for (wi, g) in w.iter().zip(gens) {
                    acc = linalg::axpy(&acc, wi / total, g);
                }
                Ok(acc)
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            SelectionRule::VertexRandom => "vertex-random".into(),
            SelectionRule::FixedVertex(i) => format!("fixed-vertex({i})"),
            SelectionRule::Barycentric => "barycentric".into(),
            SelectionRule::CustomWeights(_) => "custom-weights".into(),
        }
    }
}

// ---------------------------------------------------------------------------
// Curves and bundles
// ---------------------------------------------------------------------------

/// One sampled solution curve.
#[derive(Debug, Clone)]
pub struct Curve {
    /// `(t, x(t))` at every Euler step, starting at `t = 0`.
    pub samples: Vec<(f64, Vec<f64>)>,
    /// Blow-up time, if the state left the finite range.
    pub blow_up: Option<f64>,
    pub rule: String,
}

impl Curve {
    pub fn terminal(&self) -> &[f64] {
        &self.samples.last().unwrap().1
    }

    pub fn max_norm(&self) -> f64 {
        self.samples
            .iter()
            .map(|(_, x)| linalg::norm(x))
            .fold(0.0, f64::max)
    }
}

/// A finite sample of the set-valued flow from a set of initial points.
#[derive(Debug, Clone)]
pub struct FlowBundle {
    pub curves: Vec<Curve>,
    pub dt: f64,
    pub horizon: f64,
}

impl FlowBundle {
    pub fn any_blow_up(&self) -> bool {
        self.curves.iter().any(|c| c.blow_up.is_some())
    }

    pub fn terminal_norms(&self) -> Vec<f64> {
        self.curves.iter().map(|c| linalg::norm(c.terminal())).collect()
    }

    pub fn max_norm(&self) -> f64 {
        self.curves.iter().map(Curve::max_norm).fold(0.0, f64::max)
    }

    /// Bundle dump: `curve_id,t,x_0..x_{d-1}`, optionally strided to keep
    /// at most `max_rows_per_curve` rows per curve.
    pub fn write_csv<W: std::io::Write>(
        &self,
        mut w: W,
        max_rows_per_curve: usize,
    ) -> std::io::Result<()> {
        let dim = self
            .curves
            .first()
            .map(|c| c.samples[0].1.len())
            .unwrap_or(0);
        write!(w, "curve_id,t")?;
        for j in 0..dim {
            write!(w, ",x_{j}")?;
        }
        writeln!(w)?;
        for (id, curve) in self.curves.iter().enumerate() {
            let stride = (curve.samples.len() / max_rows_per_curve.max(1)).max(1);
            for (k, (t, x)) in curve.samples.iter().enumerate() {
                if k % stride != 0 && k + 1 != curve.samples.len() {
                    continue;
                }
                write!(w, "{id},{t}")?;
                for v in x {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

fn integrate_curve(
    rhs: &Rhs<'_>,
    x0: &[f64],
    dt: f64,
    horizon: f64,
    rule: &SelectionRule,
    rng: &mut impl Rng,
) -> Result<Curve> {
    if !(dt > 0.0) || dt > horizon {
        return Err(Error::Domain(format!(
            "integrate: need 0 < dt ≤ horizon (dt = {dt}, horizon = {horizon})"
        )));
    }
    let n_steps = (horizon / dt).round().max(1.0) as usize;
    let mut samples = Vec::with_capacity(n_steps + 1);
    let mut x = x0.to_vec();
    samples.push((0.0, x.clone()));
    let mut blow_up = None;
    for k in 0..n_steps {
        let set = rhs(&x)?;
        let u = rule.select(&set, rng)?;
        x = linalg::axpy(&x, dt, &u);
        let t = (k + 1) as f64 * dt;
        samples.push((t, x.clone()));
        if !linalg::all_finite(&x) || linalg::norm(&x) > BLOW_UP_NORM {
            blow_up = Some(t);
            break;
        }
    }
    Ok(Curve {
        samples,
        blow_up,
        rule: rule.label(),
    })
}

/// Explicit Euler with per-step selection:
/// `x_{k+1} = x_k + dt·select(rhs(x_k))`. A non-finite state is an error
/// carrying the blow-up time.
pub fn integrate_di(
    rhs: &Rhs<'_>,
    x0: &[f64],
    dt: f64,
    horizon: f64,
    rule: &SelectionRule,
    rng: &mut impl Rng,
) -> Result<Curve> {
    let curve = integrate_curve(rhs, x0, dt, horizon, rule, rng)?;
    if let Some(time) = curve.blow_up {
        return Err(Error::BlowUp { time });
    }
    Ok(curve)
}

/// One curve per (initial point × rule); replicate a stochastic rule by
/// listing it several times. Per-curve blow-ups are recorded, not fatal.
pub fn flow_bundle(
    rhs: &Rhs<'_>,
    initial_points: &[Vec<f64>],
    dt: f64,
    horizon: f64,
    rules: &[SelectionRule],
    rng: &mut impl Rng,
) -> Result<FlowBundle> {
    if initial_points.is_empty() || rules.is_empty() {
        return Err(Error::Domain("flow_bundle: need initial points and rules".into()));
    }
    let mut curves = Vec::with_capacity(initial_points.len() * rules.len());
    for x0 in initial_points {
        for rule in rules {
            curves.push(integrate_curve(rhs, x0, dt, horizon, rule, rng)?);
        }
    }
    Ok(FlowBundle {
        curves,
        dt,
        horizon,
    })
}

// ---------------------------------------------------------------------------
// Flow-time and limit-set estimation
// ---------------------------------------------------------------------------

/// Distance from a point to a finite candidate point cloud.
pub fn distance_to_points(x: &[f64], points: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .map(|p| linalg::dist(x, p))
        .fold(f64::INFINITY, f64::min)
}

/// Flow-time estimate with its safety padding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TEpsEstimate {
    /// Smallest sampled time after which every curve stays ε-close.
    pub raw: f64,
    /// `raw · 1.25`.
    pub padded: f64,
}

/// Sample starting points for ball-based estimates: the `2d` axis points
/// on the boundary first, then alternating random boundary / interior
/// points.
fn ball_samples(radius: f64, dim: usize, count: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        if i < 2 * dim {
            let mut v = vec![0.0; dim];
            v[i / 2] = if i % 2 == 0 { radius } else { -radius };
            out.push(v);
        } else {
            let dir = random_unit(rng, dim);
            let r = if i % 2 == 0 {
                radius
            } else {
                radius * rng.gen::<f64>().powf(1.0 / dim as f64)
            };
            out.push(linalg::scale(&dir, r));
        }
    }
    out
}

fn random_unit(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = linalg::norm(&v);
        if n > 1e-3 {
            return linalg::scale(&v, 1.0 / n);
        }
    }
}

/// Estimate `T(ε)`: the smallest sampled time after which every bundle
/// curve started in the closed ball of `neighborhood_radius` stays within
/// `epsilon` of the attractor candidate. The returned estimate carries a
/// 25% safety pad.
///
/// Sampling the whole starting ball (boundary axis points plus random
/// boundary/interior points) stands in for the compactness argument that
/// makes `T(ε)` uniform; the density is a caveat, not a proof.
#[allow(clippy::too_many_arguments)]
pub fn estimate_t_epsilon(
    rhs: &Rhs<'_>,
    attractor: &[Vec<f64>],
    neighborhood_radius: f64,
    epsilon: f64,
    dt: f64,
    horizon: f64,
    rules: &[SelectionRule],
    samples: usize,
    rng: &mut impl Rng,
) -> Result<TEpsEstimate> {
    if attractor.is_empty() {
        return Err(Error::Domain("estimate_t_epsilon: empty attractor candidate".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    let dim = attractor[0].len();
    let starts = ball_samples(neighborhood_radius, dim, samples.max(2 * dim), rng);
    let bundle = flow_bundle(rhs, &starts, dt, horizon, rules, rng)?;
    if bundle.any_blow_up() {
        return Err(Error::EstimationFailed(format!(
            "a curve blew up before {horizon}; the candidate does not attract the ball"
        )));
    }
    let mut last_violation: Option<f64> = None;
    for curve in &bundle.curves {
        for (t, x) in &curve.samples {
            if distance_to_points(x, attractor) > epsilon {
                let worse = last_violation.map(|v| *t > v).unwrap_or(true);
                if worse {
                    last_violation = Some(*t);
                }
            }
        }
        let (t_final, x_final) = curve.samples.last().unwrap();
        if distance_to_points(x_final, attractor) > epsilon {
            return Err(Error::EstimationFailed(format!(
                "curve still {:.3e} away from the candidate at the horizon t = {t_final}",
                distance_to_points(x_final, attractor)
            )));
        }
    }
    let raw = match last_violation {
        None => 0.0,
        Some(t) => t + dt,
    };
    Ok(TEpsEstimate {
        raw,
        padded: raw * 1.25,
    })
}

/// Empirical limit-set estimate: tail samples of every (non-blown) curve,
/// clustered with `cluster_radius`.
pub fn limit_set_estimate(
    bundle: &FlowBundle,
    tail_fraction: f64,
    cluster_radius: f64,
) -> Result<Vec<Vec<f64>>> {
    if !(tail_fraction > 0.0 && tail_fraction < 1.0) {
        return Err(Error::Domain(format!(
            "tail_fraction must lie in (0,1), got {tail_fraction}"
        )));
    }
    let t_from = (1.0 - tail_fraction) * bundle.horizon;
    let mut tail_points: Vec<&Vec<f64>> = Vec::new();
    let mut usable = 0usize;
    for curve in &bundle.curves {
        if curve.blow_up.is_some() {
            continue;
        }
        let pts: Vec<&Vec<f64>> = curve
            .samples
            .iter()
            .filter(|(t, _)| *t >= t_from)
            .map(|(_, x)| x)
            .collect();
        if pts.len() < 10 {
            return Err(Error::Domain(format!(
                "tail window holds only {} samples (need ≥ 10); extend the horizon or shrink dt",
                pts.len()
            )));
        }
        usable += 1;
        tail_points.extend(pts);
    }
    if usable == 0 {
        return Err(Error::EstimationFailed("every curve blew up; no tail to estimate".into()));
    }
    let mut reps: Vec<Vec<f64>> = Vec::new();
    for p in tail_points {
        if !reps.iter().any(|r| linalg::dist(r, p) <= cluster_radius) {
            reps.push(p.clone());
        }
    }
    Ok(reps)
}

// ---------------------------------------------------------------------------
// Attractor and Lyapunov audits
// ---------------------------------------------------------------------------

/// Options for [`verify_s2`].
#[derive(Debug, Clone)]
pub struct S2Config {
    /// Convergence tolerance; default `0.3·(1 − δ₁)` with `δ₁` the
    /// candidate's sup-norm (the first ladder gap).
    pub epsilon: Option<f64>,
    pub samples: usize,
    pub horizon: f64,
    pub rules: Vec<SelectionRule>,
}

impl Default for S2Config {
    fn default() -> Self {
        S2Config {
            epsilon: None,
            samples: 24,
            horizon: 40.0,
            rules: vec![SelectionRule::Barycentric, SelectionRule::VertexRandom],
        }
    }
}

/// Check the attracting-set condition: (i) the candidate lies strictly
/// inside the unit ball, and (ii) the flow from the closed unit ball
/// enters and stays in an ε-neighborhood of the candidate within the
/// horizon (via [`estimate_t_epsilon`]).
pub fn verify_s2(
    rhs: &Rhs<'_>,
    attractor_points: &[Vec<f64>],
    dt: f64,
    rng: &mut impl Rng,
    cfg: &S2Config,
) -> Result<AuditReport> {
    if attractor_points.is_empty() {
        return Err(Error::Domain("verify_s2: empty attractor candidate".into()));
    }
    let mut report = AuditReport::new("attracting set");
    let delta1 = attractor_points
        .iter()
        .map(|p| linalg::norm(p))
        .fold(0.0f64, f64::max);
    report.check_bound(
        "sup norm over candidate < 1",
        delta1,
        1.0 - 1e-12,
        Some(format!("candidate contains a point of norm {delta1:.6}")),
    );
    let epsilon = cfg
        .epsilon
        .unwrap_or_else(|| 0.3 * (1.0 - delta1).max(1e-3));
    match estimate_t_epsilon(
        rhs,
        attractor_points,
        1.0,
        epsilon,
        dt,
        cfg.horizon,
        &cfg.rules,
        cfg.samples,
        rng,
    ) {
        Ok(est) => {
            report.push_check(crate::report::CheckItem {
                label: "unit ball flows into the ε-neighborhood".into(),
                passed: true,
                observed: Some(est.raw),
                bound: Some(cfg.horizon),
                witness: None,
            });
            report.note(format!(
                "T(ε) estimate: raw {:.4}, padded {:.4} at ε = {epsilon:.4}",
                est.raw, est.padded
            ));
        }
        Err(e) => {
            report.check_flag(
                "unit ball flows into the ε-neighborhood",
                false,
                Some(e.to_string()),
            );
        }
    }
    Ok(report)
}

/// Scalar field used as a Lyapunov candidate.
#[derive(Debug, Clone)]
pub enum ScalarField {
    /// `V(x) = ‖x‖`.
    Norm,
    /// `V(x) = xᵀPx` with symmetric positive definite `P`.
    Quadratic(Mat),
    /// Constant field (degenerate; useful to exercise failure paths).
    Constant(f64),
}

impl ScalarField {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            ScalarField::Norm => linalg::norm(x),
            ScalarField::Quadratic(p) => linalg::dot(x, &p.matvec(x)),
            ScalarField::Constant(c) => *c,
        }
    }

    /// Minimum of `V` over the sphere of the given radius.
    pub fn min_on_sphere(&self, radius: f64) -> Result<f64> {
        match self {
            ScalarField::Norm => Ok(radius),
            ScalarField::Quadratic(p) => {
                let sym = p.add(&p.transpose()).scale(0.5);
                let eigs = linalg::eigenvalues(&sym)?;
                let lam_min = eigs.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
                Ok(lam_min * radius * radius)
            }
            ScalarField::Constant(c) => Ok(*c),
        }
    }

    /// Boundary scaling: `s` with `V(s·dir) = level` for a unit `dir`.
    fn level_radius(&self, dir: &[f64], level: f64) -> f64 {
        match self {
            ScalarField::Norm => level,
            ScalarField::Quadratic(p) => {
                let q = linalg::dot(dir, &p.matvec(dir));
                if q > 0.0 {
                    (level / q).sqrt()
                } else {
                    f64::INFINITY
                }
            }
            ScalarField::Constant(_) => f64::INFINITY,
        }
    }
}

/// Options for [`lyapunov_decrease_audit`].
#[derive(Debug, Clone)]
pub struct LyapunovAuditConfig {
    pub horizon: f64,
    /// Required decrease margin as a fraction of `V(x) − min V`.
    pub strictness: f64,
    /// Starts closer than this to the zero set are excluded.
    pub exclusion_tol: f64,
    /// Relative slack on the forward-invariance level.
    pub invariance_slack: f64,
    pub rules: Vec<SelectionRule>,
}

impl Default for LyapunovAuditConfig {
    fn default() -> Self {
        LyapunovAuditConfig {
            horizon: 3.0,
            strictness: 1e-6,
            exclusion_tol: 0.05,
            invariance_slack: 1e-6,
            rules: vec![SelectionRule::Barycentric, SelectionRule::VertexRandom],
        }
    }
}

/// Audit the Lyapunov conditions on the region carved out by the
/// candidate inside the ball of `region_radius`:
///
/// - forward invariance of the sublevel set `{V ≤ c*}` where `c*` is the
///   largest level fitting in the ball (for the norm candidate this *is*
///   the ball);
/// - strict decrease `V(x(t)) < V(x(0)) − strictness·(V(x(0)) − min V)`
///   along every sampled curve started in the region away from the zero
///   set, at every sampled `t ∈ {dt, …, horizon}`.
#[allow(clippy::too_many_arguments)]
pub fn lyapunov_decrease_audit(
    rhs: &Rhs<'_>,
    v: &ScalarField,
    lambda: &[Vec<f64>],
    region_radius: f64,
    samples: usize,
    dt: f64,
    rng: &mut impl Rng,
    cfg: &LyapunovAuditConfig,
) -> Result<AuditReport> {
    if lambda.is_empty() {
        return Err(Error::Domain("lyapunov audit: empty zero-set candidate".into()));
    }
    let mut report = AuditReport::new("lyapunov decrease");
    let level = v.min_on_sphere(region_radius)?;
    let min_v = lambda.iter().map(|p| v.eval(p)).fold(f64::INFINITY, f64::min);

    // starting points: half on the region boundary, half interior, all
    // outside the exclusion neighborhood of the zero set
    let dim = lambda[0].len();
    let mut starts = Vec::with_capacity(samples);
    let mut guard = 0;
    while starts.len() < samples && guard < 64 * samples {
        guard += 1;
        let dir = random_unit(rng, dim);
        let boundary = v.level_radius(&dir, level).min(region_radius);
        let r = if starts.len() % 2 == 0 {
            boundary
        } else {
            boundary * rng.gen::<f64>().powf(1.0 / dim as f64)
        };
        let x = linalg::scale(&dir, r);
        if distance_to_points(&x, lambda) > cfg.exclusion_tol && v.eval(&x) <= level * (1.0 + 1e-12)
        {
            starts.push(x);
        }
    }
    if starts.is_empty() {
        return Err(Error::Domain(
            "lyapunov audit: could not sample starts outside the zero set".into(),
        ));
    }

    let mut invariance_excess = 0.0f64;
    let mut invariance_witness = None;
    let mut decrease_violation = f64::NEG_INFINITY;
    let mut decrease_witness = None;
    for x0 in &starts {
        let v0 = v.eval(x0);
        let margin = cfg.strictness * (v0 - min_v);
        for rule in &cfg.rules {
            let curve = integrate_curve(rhs, x0, dt, cfg.horizon, rule, rng)?;
            if let Some(t) = curve.blow_up {
                report.check_flag(
                    "finite flow on the region",
                    false,
                    Some(format!("blow-up at t = {t} from {x0:?}")),
                );
                return Ok(report);
            }
            for (t, x) in &curve.samples {
                let vt = v.eval(x);
                let inv_excess = vt - level * (1.0 + cfg.invariance_slack);
                if inv_excess > invariance_excess {
                    invariance_excess = inv_excess;
                    invariance_witness =
                        Some(format!("start {x0:?}, t = {t}: V = {vt:.6} > level {level:.6}"));
                }
                if *t > 0.0 {
                    let viol = vt - (v0 - margin);
                    if viol > decrease_violation {
                        decrease_violation = viol;
                        decrease_witness = Some(format!(
                            "start {x0:?} (V = {v0:.6}), t = {t}: V = {vt:.6}"
                        ));
                    }
                }
            }
        }
    }
    report.check_bound(
        "forward invariance of the region (T2 i)",
        invariance_excess,
        0.0,
        invariance_witness,
    );
    report.push_check(crate::report::CheckItem {
        label: "strict decrease outside the zero set (T2 iii)".into(),
        passed: decrease_violation < 0.0,
        observed: Some(decrease_violation),
        bound: Some(0.0),
        witness: if decrease_violation < 0.0 {
            None
        } else {
            decrease_witness
        },
    });
    report.note(format!(
        "{} starts × {} rule(s), region level {level:.6}, dt = {dt}, horizon = {}",
        starts.len(),
        cfg.rules.len(),
        cfg.horizon
    ));
    Ok(report)
}

/// Convenience: the singleton-building right-hand side of a linear ODE
/// `ẋ = Mx`.
pub fn linear_rhs(m: &Mat) -> impl Fn(&[f64]) -> Result<ConvexSet> + '_ {
    move |x: &[f64]| ConvexSet::singleton(m.matvec(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convex::distance_to_set;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn exponential_decay_matches_closed_form() {
        let m = Mat::diag(&[-1.0]);
        let rhs = linear_rhs(&m);
        let curve = integrate_di(&rhs, &[1.0], 1e-4, 1.0, &SelectionRule::Barycentric, &mut rng())
            .unwrap();
        let x1 = curve.terminal()[0];
        assert!((x1 - (-1.0f64).exp()).abs() < 1e-3, "x(1) = {x1}");
    }

    #[test]
    fn zero_rhs_constant_curve() {
        let rhs = |_: &[f64]| ConvexSet::singleton(vec![0.0, 0.0]);
        let curve = integrate_di(&rhs, &[0.3, -0.4], 0.01, 1.0, &SelectionRule::Barycentric, &mut rng())
            .unwrap();
        for (_, x) in &curve.samples {
            assert_eq!(x, &vec![0.3, -0.4]);
        }
    }

    #[test]
    fn selection_sandwich_for_interval_rhs() {
        // rhs = hull{-x, -2x} in d = 1: any selection stays between the
        // comparison ODEs e^{-2t} and e^{-t} (up to O(dt))
        let rhs = |x: &[f64]| ConvexSet::new(vec![vec![-x[0]], vec![-2.0 * x[0]]]);
        let dt = 1e-3;
        let mut r = rng();
        for rule in [
            SelectionRule::VertexRandom,
            SelectionRule::Barycentric,
            SelectionRule::FixedVertex(0),
            SelectionRule::CustomWeights(vec![0.3, 0.7]),
        ] {
            let curve = integrate_di(&rhs, &[1.0], dt, 1.0, &rule, &mut r).unwrap();
            let x1 = curve.terminal()[0];
            let lo = (-2.0f64).exp() - 5.0 * dt;
            let hi = (-1.0f64).exp() + 5.0 * dt;
            assert!(x1 >= lo && x1 <= hi, "{}: x(1) = {x1}", rule.label());
        }
    }

    #[test]
    fn selection_feasibility_sampled() {
        let rhs = |x: &[f64]| {
            ConvexSet::new(vec![vec![-x[0], 0.0], vec![0.0, -x[1]], vec![-x[0], -x[1]]])
        };
        let mut r = rng();
        let set = rhs(&[0.7, -0.3]).unwrap();
        for rule in [
            SelectionRule::VertexRandom,
            SelectionRule::Barycentric,
            SelectionRule::CustomWeights(vec![1.0, 2.0, 3.0]),
        ] {
            let u = rule.select(&set, &mut r).unwrap();
            assert!(distance_to_set(&u, &set).unwrap() <= 1e-9);
        }
    }

    #[test]
    fn singleton_consistency_bit_exact() {
        let m = Mat::from_rows(&[vec![-0.5, 0.2], vec![-0.1, -0.9]]).unwrap();
        let rhs = linear_rhs(&m);
        let dt = 1e-2;
        let curve =
            integrate_di(&rhs, &[1.0, -1.0], dt, 2.0, &SelectionRule::VertexRandom, &mut rng())
                .unwrap();
        // reference fixed-step Euler with identical arithmetic
        let mut x = vec![1.0, -1.0];
        for (k, (_, sample)) in curve.samples.iter().enumerate() {
            assert_eq!(sample, &x, "step {k}");
            x = linalg::axpy(&x, dt, &m.matvec(&x));
        }
    }

    #[test]
    fn first_order_convergence_ratio() {
        let m = Mat::diag(&[-1.0, -2.0]);
        let rhs = linear_rhs(&m);
        let exact = [(-1.0f64).exp(), (-2.0f64).exp()];
        let mut errs = Vec::new();
        for dt in [1e-2, 1e-3, 1e-4] {
            let curve =
                integrate_di(&rhs, &[1.0, 1.0], dt, 1.0, &SelectionRule::Barycentric, &mut rng())
                    .unwrap();
            let term = curve.terminal();
            errs.push(linalg::dist(term, &exact));
        }
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!(ratio > 10.0 / 1.5 && ratio < 10.0 * 1.5, "ratio {ratio}");
        }
    }

    #[test]
    fn bundle_hurwitz_contracts_and_unstable_grows() {
        let m = Mat::diag(&[-1.0, -2.0]);
        let rhs = linear_rhs(&m);
        let mut starts = Vec::new();
        for k in 0..16 {
            let th = 2.0 * std::f64::consts::PI * k as f64 / 16.0;
            starts.push(vec![th.cos(), th.sin()]);
        }
        let horizon = 2.0; // 2/|λ_max| with λ_max = -1
        let bundle = flow_bundle(
            &rhs,
            &starts,
            1e-3,
            horizon,
            &[SelectionRule::Barycentric],
            &mut rng(),
        )
        .unwrap();
        for (norm, start) in bundle.terminal_norms().iter().zip(&starts) {
            assert!(*norm < linalg::norm(start));
        }

        let bad = Mat::diag(&[0.8]);
        let rhs_bad = linear_rhs(&bad);
        let bundle = flow_bundle(
            &rhs_bad,
            &[vec![1.0]],
            1e-3,
            2.0,
            &[SelectionRule::Barycentric],
            &mut rng(),
        )
        .unwrap();
        assert!(bundle.terminal_norms()[0] > 1.0);
    }

    #[test]
    fn t_epsilon_closed_forms() {
        let m1 = Mat::diag(&[-1.0, -1.0]);
        let rhs = linear_rhs(&m1);
        let zero = vec![vec![0.0, 0.0]];
        let est = estimate_t_epsilon(
            &rhs,
            &zero,
            1.0,
            0.1,
            1e-3,
            10.0,
            &[SelectionRule::Barycentric],
            16,
            &mut rng(),
        )
        .unwrap();
        let ln10 = 10f64.ln();
        assert!((est.raw - ln10).abs() < 0.1, "raw = {}", est.raw);
        assert_relative_eq!(est.padded, est.raw * 1.25);

        // ε ≥ radius → 0
        let est0 = estimate_t_epsilon(
            &rhs,
            &zero,
            1.0,
            1.0,
            1e-3,
            10.0,
            &[SelectionRule::Barycentric],
            8,
            &mut rng(),
        )
        .unwrap();
        assert_eq!(est0.raw, 0.0);

        // rate 2 → ln(10)/2
        let m2 = Mat::diag(&[-2.0, -2.0]);
        let rhs2 = linear_rhs(&m2);
        let est2 = estimate_t_epsilon(
            &rhs2,
            &zero,
            1.0,
            0.1,
            1e-3,
            10.0,
            &[SelectionRule::Barycentric],
            16,
            &mut rng(),
        )
        .unwrap();
        assert!((est2.raw - ln10 / 2.0).abs() < 0.1, "raw = {}", est2.raw);
    }

    #[test]
    fn t_epsilon_antitone_in_epsilon() {
        let m = Mat::diag(&[-1.0, -1.5]);
        let rhs = linear_rhs(&m);
        let zero = vec![vec![0.0, 0.0]];
        let mut prev = f64::INFINITY;
        for eps in [0.05, 0.1, 0.2, 0.5] {
            let est = estimate_t_epsilon(
                &rhs,
                &zero,
                1.0,
                eps,
                1e-3,
                12.0,
                &[SelectionRule::Barycentric],
                12,
                &mut rng(),
            )
            .unwrap();
            assert!(est.raw <= prev + 1e-12, "eps {eps}: {} > {prev}", est.raw);
            prev = est.raw;
        }
    }

    #[test]
    fn limit_set_cases() {
        // decay → cluster at the origin
        let m = Mat::diag(&[-1.0, -1.0]);
        let rhs = linear_rhs(&m);
        let bundle = flow_bundle(
            &rhs,
            &[vec![1.0, 0.5], vec![-0.7, 0.9]],
            1e-3,
            15.0,
            &[SelectionRule::Barycentric],
            &mut rng(),
        )
        .unwrap();
        let est = limit_set_estimate(&bundle, 0.1, LIMIT_SET_CLUSTER_RADIUS).unwrap();
        assert_eq!(est.len(), 1);
        assert!(linalg::norm(&est[0]) < 1e-3);

        // constant curve → its own point
        let rhs0 = |_: &[f64]| ConvexSet::singleton(vec![0.0]);
        let bundle0 = flow_bundle(
            &rhs0,
            &[vec![0.4]],
            1e-2,
            2.0,
            &[SelectionRule::Barycentric],
            &mut rng(),
        )
        .unwrap();
        let est0 = limit_set_estimate(&bundle0, 0.5, 1e-6).unwrap();
        assert_eq!(est0.len(), 1);
        assert_relative_eq!(est0[0][0], 0.4);

        // skew rotation: tail points on the circle of the initial radius
        let j = Mat::from_rows(&[vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        let rhs_j = linear_rhs(&j);
        let bundle_j = flow_bundle(
            &rhs_j,
            &[vec![1.0, 0.0]],
            1e-4,
            2.0 * std::f64::consts::PI,
            &[SelectionRule::Barycentric],
            &mut rng(),
        )
        .unwrap();
        let est_j = limit_set_estimate(&bundle_j, 0.5, 0.05).unwrap();
        assert!(est_j.len() > 4, "expected a ring, got {} points", est_j.len());
        for p in &est_j {
            assert!((linalg::norm(p) - 1.0).abs() < 0.01, "radius {}", linalg::norm(p));
        }
    }

    #[test]
    fn monotone_norm_decay_under_one_sided_bound() {
        // all generators satisfy <u, x> ≤ -0.5 ‖x‖²
        let rhs = |x: &[f64]| {
            ConvexSet::new(vec![
                linalg::scale(x, -0.5),
                linalg::scale(x, -1.5),
            ])
        };
        let mut r = rng();
        for rule in [SelectionRule::VertexRandom, SelectionRule::Barycentric] {
            let curve = integrate_di(&rhs, &[1.0, 1.0], 1e-2, 4.0, &rule, &mut r).unwrap();
            for w in curve.samples.windows(2) {
                assert!(linalg::norm(&w[1].1) <= linalg::norm(&w[0].1) + 1e-12);
            }
        }
    }

    #[test]
    fn verify_s2_cases() {
        // Hurwitz constant field, candidate {0} → pass
        let m = Mat::diag(&[-1.0, -2.0]);
        let rhs = linear_rhs(&m);
        let cfg = S2Config {
            samples: 12,
            horizon: 20.0,
            ..S2Config::default()
        };
        let rep = verify_s2(&rhs, &[vec![0.0, 0.0]], 1e-3, &mut rng(), &cfg).unwrap();
        assert!(rep.passed(), "{rep:?}");

        // candidate with a point of norm 1.5 → clause (i) fails
        let rep = verify_s2(&rhs, &[vec![1.5, 0.0]], 1e-3, &mut rng(), &cfg).unwrap();
        assert!(!rep.passed());
        assert_eq!(rep.first_failure().unwrap().label, "sup norm over candidate < 1");

        // unstable field → clause (ii) fails via estimation failure
        let bad = Mat::diag(&[1.0, 1.0]);
        let rhs_bad = linear_rhs(&bad);
        let cfg_short = S2Config {
            samples: 8,
            horizon: 5.0,
            ..S2Config::default()
        };
        let rep = verify_s2(&rhs_bad, &[vec![0.0, 0.0]], 1e-2, &mut rng(), &cfg_short).unwrap();
        assert!(!rep.passed());
        assert!(rep
            .first_failure()
            .unwrap()
            .label
            .contains("flows into"));
    }

    #[test]
    fn lyapunov_audit_cases() {
        let m = Mat::diag(&[-1.0, -1.0]);
        let rhs = linear_rhs(&m);
        let zero = vec![vec![0.0, 0.0]];
        let cfg = LyapunovAuditConfig::default();

        // V = ‖x‖ on ẋ = -x: pass
        let rep = lyapunov_decrease_audit(
            &rhs,
            &ScalarField::Norm,
            &zero,
            2.0,
            24,
            1e-2,
            &mut rng(),
            &cfg,
        )
        .unwrap();
        assert!(rep.passed(), "{rep:?}");

        // constant V: decrease fails everywhere outside the zero set
        let rep = lyapunov_decrease_audit(
            &rhs,
            &ScalarField::Constant(1.0),
            &zero,
            2.0,
            8,
            1e-2,
            &mut rng(),
            &cfg,
        )
        .unwrap();
        assert!(!rep.passed());
        assert!(rep
            .first_failure()
            .unwrap()
            .label
            .contains("strict decrease"));

        // quadratic V from the Lyapunov equation for a Hurwitz matrix: pass
        let m2 = Mat::from_rows(&[vec![-1.0, 4.0], vec![0.0, -1.0]]).unwrap();
        let p = linalg::solve_lyapunov(&m2).unwrap();
        // oracle: Aᵀ(P) + (P)A ≺ 0 by eigenvalue check of the residual -I
        let res = m2.transpose().matmul(&p).add(&p.matmul(&m2));
        let eigs = linalg::eigenvalues(&res).unwrap();
        assert!(eigs.iter().all(|e| e.0 < 0.0));
        let rhs2 = linear_rhs(&m2);
        let rep = lyapunov_decrease_audit(
            &rhs2,
            &ScalarField::Quadratic(p),
            &zero,
            2.0,
            24,
            1e-3,
            &mut rng(),
            &cfg,
        )
        .unwrap();
        assert!(rep.passed(), "{rep:?}");
    }
}
