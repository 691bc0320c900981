//! Compact convex sets, driver fields, and the scaled / limiting set-valued
//! maps used by the stability diagnostics.
//!
//! A [`ConvexSet`] is the convex hull of finitely many generators. The
//! driver [`VectorField`] is either affine per state (`A(y)x + b(y)`) or a
//! tabulated callable; from it we build the scaled field `h_c(x,y) =
//! h(cx,y)/c`, its limit `h_∞` as `c → ∞`, and the state-hull `H(x)`.
//! [`marchaud_audit`] checks the three Marchaud properties on samples:
//! pointwise linear growth, convex-compact values, and (a sampling
//! falsifier for) upper semicontinuity.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::report::AuditReport;

/// Default `c` schedule for numeric limit evaluation: 10¹ … 10⁶.
pub fn default_c_schedule() -> Vec<f64> {
    (1..=6).map(|k| 10f64.powi(k)).collect()
}

/// Default minimum final entry for `c` schedules.
pub const DEFAULT_C_MIN: f64 = 1e6;

/// Cluster radius for the numeric Limsup approximation.
pub const LIMSUP_CLUSTER_RADIUS: f64 = 1e-4;

/// Tolerance for the upper-semicontinuity sampling falsifier.
pub const USC_TOL: f64 = 1e-6;

/// Membership tolerance for hull queries.
pub const HULL_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// ConvexSet
// ---------------------------------------------------------------------------

/// A compact convex subset of R^d: the convex hull of finitely many
/// generator points. Queries are invariant under appending points already
/// inside the hull.
#[derive(Debug, Clone)]
pub struct ConvexSet {
    dim: usize,
    generators: Vec<Vec<f64>>,
    approximate: bool,
}

impl ConvexSet {
    pub fn new(generators: Vec<Vec<f64>>) -> Result<Self> {
        if generators.is_empty() {
            return Err(Error::Domain("ConvexSet needs at least one generator".into()));
        }
        let dim = generators[0].len();
        if dim == 0 {
            return Err(Error::Domain("ConvexSet generators must be nonempty vectors".into()));
        }
        for g in &generators {
            if g.len() != dim {
                return Err(Error::DimensionMismatch {
                    what: "ConvexSet generator",
                    expected: dim,
                    got: g.len(),
                });
            }
            if !linalg::all_finite(g) {
                return Err(Error::Domain("ConvexSet generator has non-finite entry".into()));
            }
        }
        Ok(ConvexSet {
            dim,
            generators,
            approximate: false,
        })
    }

    pub fn singleton(point: Vec<f64>) -> Result<Self> {
        ConvexSet::new(vec![point])
    }

    /// Tag the set as a numeric approximation (e.g. a sampled Limsup).
    pub fn mark_approximate(mut self) -> Self {
        self.approximate = true;
        self
    }

    pub fn is_approximate(&self) -> bool {
        self.approximate
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn generators(&self) -> &[Vec<f64>] {
        &self.generators
    }

    /// Largest Euclidean norm over generators (= sup over the hull).
    pub fn max_norm(&self) -> f64 {
        self.generators
            .iter()
            .map(|g| linalg::norm(g))
            .fold(0.0, f64::max)
    }

    /// Hull of the union of several sets.
    pub fn hull_union(sets: &[ConvexSet]) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::Domain("hull_union over empty collection".into()));
        }
        let dim = sets[0].dim;
        let mut generators = Vec::new();
        let mut approximate = false;
        for s in sets {
            if s.dim != dim {
                return Err(Error::DimensionMismatch {
                    what: "hull_union member",
                    expected: dim,
                    got: s.dim,
                });
            }
            approximate |= s.approximate;
            for g in &s.generators {
                // skip exact duplicates; interior points are harmless anyway
                if !generators.iter().any(|h: &Vec<f64>| h == g) {
                    generators.push(g.clone());
                }
            }
        }
        let mut out = ConvexSet::new(generators)?;
        out.approximate = approximate;
        Ok(out)
    }
}

/// Support function: `max over generators of ⟨g, direction⟩` (exact for
/// hulls of finite sets).
pub fn support_function(set: &ConvexSet, direction: &[f64]) -> Result<f64> {
    if direction.len() != set.dim {
        return Err(Error::DimensionMismatch {
            what: "support direction",
            expected: set.dim,
            got: direction.len(),
        });
    }
    if linalg::norm(direction) == 0.0 {
        return Err(Error::Domain("support_function: zero direction".into()));
    }
    Ok(set
        .generators
        .iter()
        .map(|g| linalg::dot(g, direction))
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Euclidean distance from a point to the hull; 0 (within [`HULL_TOL`])
/// iff the point lies in the hull.
pub fn distance_to_set(point: &[f64], set: &ConvexSet) -> Result<f64> {
    if point.len() != set.dim {
        return Err(Error::DimensionMismatch {
            what: "distance_to_set point",
            expected: set.dim,
            got: point.len(),
        });
    }
    let translated: Vec<Vec<f64>> = set
        .generators
        .iter()
        .map(|g| linalg::sub(g, point))
        .collect();
    Ok(linalg::norm(&min_norm_point(&translated)))
}

/// Minimum-norm point in the convex hull of `points` (Wolfe's algorithm).
///
/// Maintains a "corral" of affinely independent generators and alternates
/// between adding the best support point and restricting to the affine
/// minimizer. Finite termination up to the numeric guards.
fn min_norm_point(points: &[Vec<f64>]) -> Vec<f64> {
    let scale = points
        .iter()
        .map(|p| linalg::norm(p))
        .fold(1.0f64, f64::max);
    let tol = 1e-14 * scale * scale;
    let weight_tol = 1e-12;

    // start from the smallest-norm generator
    let start = (0..points.len())
        .min_by(|&a, &b| {
            linalg::norm(&points[a])
                .partial_cmp(&linalg::norm(&points[b]))
                .unwrap()
        })
        .unwrap();
    let mut corral: Vec<usize> = vec![start];
    let mut lambda: Vec<f64> = vec![1.0];
    let mut x = points[start].clone();

    let max_major = 16 * points.len() + 64;
    for _ in 0..max_major {
        // support point in direction -x
        let (mut best_j, mut best_v) = (0usize, f64::INFINITY);
        for (j, p) in points.iter().enumerate() {
            let v = linalg::dot(&x, p);
            if v < best_v {
                best_v = v;
                best_j = j;
            }
        }
        if best_v >= linalg::dot(&x, &x) - tol {
            return x; // optimality condition
        }
        if corral.contains(&best_j) {
            return x;
        }
        corral.push(best_j);
        lambda.push(0.0);

        // minor cycles: move to the affine minimizer, dropping generators
        // whose weight would go negative
        for _ in 0..max_major {
            let mu = match affine_min_norm(points, &corral) {
                Some(mu) => mu,
                None => {
                    // degenerate corral: drop the member with the smallest
                    // weight and retry
                    let drop = (0..corral.len())
                        .min_by(|&a, &b| lambda[a].partial_cmp(&lambda[b]).unwrap())
                        .unwrap();
                    corral.remove(drop);
                    lambda.remove(drop);
                    let s: f64 = lambda.iter().sum();
                    if s > 0.0 {
                        for l in lambda.iter_mut() {
                            *l /= s;
                        }
                    }
                    continue;
                }
            };
            if mu.iter().all(|&m| m > weight_tol) {
                lambda = mu;
                break;
            }
            let mut theta = 1.0f64;
            for i in 0..corral.len() {
                if mu[i] <= weight_tol {
                    let denom = lambda[i] - mu[i];
                    if denom > 1e-300 {
                        theta = theta.min(lambda[i] / denom);
                    }
                }
            }
            for i in 0..corral.len() {
                lambda[i] += theta * (mu[i] - lambda[i]);
            }
            let mut keep_corral = Vec::new();
            let mut keep_lambda = Vec::new();
            for i in 0..corral.len() {
                if lambda[i] > weight_tol {
                    keep_corral.push(corral[i]);
                    keep_lambda.push(lambda[i]);
                }
            }
            if keep_corral.is_empty() {
                keep_corral.push(corral[0]);
                keep_lambda.push(1.0);
            }
            corral = keep_corral;
            lambda = keep_lambda;
            let s: f64 = lambda.iter().sum();
            for l in lambda.iter_mut() {
                *l /= s;
            }
        }

        x = vec![0.0; points[0].len()];
        for (i, &j) in corral.iter().enumerate() {
            x = linalg::axpy(&x, lambda[i], &points[j]);
        }
    }
    x
}

/// Minimizer of `‖Σ μ_i q_i‖` subject to `Σ μ_i = 1` over the corral,
/// via the bordered Gram system. `None` if the system is singular.
fn affine_min_norm(points: &[Vec<f64>], corral: &[usize]) -> Option<Vec<f64>> {
    let k = corral.len();
    let mut sys = Mat::zeros(k + 1, k + 1);
    let gram_scale = corral
        .iter()
        .map(|&i| linalg::dot(&points[i], &points[i]))
        .fold(1.0f64, f64::max);
    for a in 0..k {
        for b in 0..k {
            sys[(a, b)] = linalg::dot(&points[corral[a]], &points[corral[b]]);
        }
        // tiny ridge keeps nearly-dependent corrals solvable
        sys[(a, a)] += 1e-13 * gram_scale;
        sys[(a, k)] = 1.0;
        sys[(k, a)] = 1.0;
    }
    let mut rhs = vec![0.0; k + 1];
    rhs[k] = 1.0;
    match linalg::solve_linear(&sys, &rhs) {
        Ok(sol) => Some(sol[..k].to_vec()),
        Err(_) => None,
    }
}

// ---------------------------------------------------------------------------
// VectorField
// ---------------------------------------------------------------------------

/// Callable contract for tabulated fields: `(x, state) -> h(x, state)`.
pub type FieldFn = Arc<dyn Fn(&[f64], usize) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
pub enum FieldKind {
    /// `h(x, y) = A(y) x + b(y)` with per-state tables.
    Affine { a: Vec<Mat>, b: Vec<Vec<f64>> },
    /// Values supplied by a callable.
    Tabulated(FieldFn),
}

impl std::fmt::Debug for FieldKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FieldKind::Affine { a, .. } => write!(f, "Affine({} states)", a.len()),
            FieldKind::Tabulated(_) => write!(f, "Tabulated(<fn>)"),
        }
    }
}

/// The driver `h(x, y)` with declared Lipschitz and growth constants.
#[derive(Debug, Clone)]
pub struct VectorField {
    dim: usize,
    n_states: usize,
    kind: FieldKind,
    lipschitz: f64,
    bound: f64,
}

impl VectorField {
    /// Affine field from per-state tables. The Lipschitz constant is set to
    /// `max_y opnorm(A(y))` (power iteration) and the growth constant to
    /// `L ∨ max_y ‖b(y)‖`.
    pub fn affine(a: Vec<Mat>, b: Vec<Vec<f64>>) -> Result<Self> {
        if a.is_empty() || a.len() != b.len() {
            return Err(Error::Config(format!(
                "affine field: {} A-matrices vs {} b-vectors",
                a.len(),
                b.len()
            )));
        }
        let dim = a[0].rows();
        for (y, m) in a.iter().enumerate() {
            if !m.is_square() || m.rows() != dim {
                return Err(Error::Config(format!("A({y}) is not {dim}x{dim}")));
            }
            if !m.all_finite() {
                return Err(Error::Config(format!("A({y}) has non-finite entries")));
            }
        }
        for (y, v) in b.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    what: "affine field b(y)",
                    expected: dim,
                    got: v.len(),
                });
            }
            if !linalg::all_finite(v) {
                return Err(Error::Config(format!("b({y}) has non-finite entries")));
            }
        }
        let l = a.iter().map(linalg::operator_norm).fold(0.0f64, f64::max);
        let m_b = b.iter().map(|v| linalg::norm(v)).fold(0.0f64, f64::max);
        let n_states = a.len();
        Ok(VectorField {
            dim,
            n_states,
            kind: FieldKind::Affine { a, b },
            lipschitz: l,
            bound: l.max(m_b),
        })
    }

    /// Tabulated field with declared constants (audited, not proven).
    pub fn tabulated(
        dim: usize,
        n_states: usize,
        f: FieldFn,
        lipschitz: f64,
        bound: f64,
    ) -> Result<Self> {
        if dim == 0 || n_states == 0 {
            return Err(Error::Config("tabulated field needs dim ≥ 1 and ≥ 1 state".into()));
        }
        if lipschitz < 0.0 || bound < 0.0 {
            return Err(Error::Config("declared constants must be nonnegative".into()));
        }
        Ok(VectorField {
            dim,
            n_states,
            kind: FieldKind::Tabulated(f),
            lipschitz,
            bound,
        })
    }

    /// Override the declared constants. For affine fields the Lipschitz
    /// constant must still dominate `max_y opnorm(A(y))`; the growth
    /// constant is audit-checked, so deliberately broken values are
    /// accepted here and flagged by [`marchaud_audit`].
    pub fn with_declared_constants(mut self, lipschitz: f64, bound: f64) -> Result<Self> {
        if let FieldKind::Affine { a, .. } = &self.kind {
            let l_min = a.iter().map(linalg::operator_norm).fold(0.0f64, f64::max);
            if lipschitz < l_min - 1e-9 {
                return Err(Error::Config(format!(
                    "declared Lipschitz {lipschitz} below operator-norm maximum {l_min:.6}"
                )));
            }
        }
        if lipschitz < 0.0 || bound < 0.0 {
            return Err(Error::Config("declared constants must be nonnegative".into()));
        }
        self.lipschitz = lipschitz;
        self.bound = bound;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn kind(&self) -> &FieldKind {
        &self.kind
    }

    pub fn is_affine(&self) -> bool {
        matches!(self.kind, FieldKind::Affine { .. })
    }

    /// `A(y)` table access for affine fields.
    pub fn affine_tables(&self) -> Option<(&[Mat], &[Vec<f64>])> {
        match &self.kind {
            FieldKind::Affine { a, b } => Some((a, b)),
            FieldKind::Tabulated(_) => None,
        }
    }

    fn check_state(&self, y: usize) -> Result<()> {
        if y >= self.n_states {
            return Err(Error::UnknownState {
                index: y,
                n_states: self.n_states,
            });
        }
        Ok(())
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "field argument",
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `h(x, y)`.
    pub fn eval(&self, x: &[f64], y: usize) -> Result<Vec<f64>> {
        self.check_state(y)?;
        self.check_dim(x)?;
        match &self.kind {
            FieldKind::Affine { a, b } => Ok(linalg::add(&a[y].matvec(x), &b[y])),
            FieldKind::Tabulated(f) => {
                let v = f(x, y);
                if v.len() != self.dim {
                    return Err(Error::DimensionMismatch {
                        what: "tabulated field output",
                        expected: self.dim,
                        got: v.len(),
                    });
                }
                Ok(v)
            }
        }
    }

    /// `h_c(x, y) = h(cx, y)/c`; for affine fields computed exactly as
    /// `A(y)x + b(y)/c`.
    pub fn scale_eval(&self, c: f64, x: &[f64], y: usize) -> Result<Vec<f64>> {
        if !(c >= 1.0) {
            return Err(Error::Domain(format!("scale_eval requires c ≥ 1, got {c}")));
        }
        self.check_state(y)?;
        self.check_dim(x)?;
        match &self.kind {
            FieldKind::Affine { a, b } => {
                Ok(linalg::axpy(&a[y].matvec(x), 1.0 / c, &b[y]))
            }
            FieldKind::Tabulated(_) => {
                let cx = linalg::scale(x, c);
                Ok(linalg::scale(&self.eval(&cx, y)?, 1.0 / c))
            }
        }
    }

    /// `h_∞(x, y)`: the upper limit of `h_c(x, y)` as `c → ∞`.
    ///
    /// Affine fields get the closed form `{A(y)x}` (exact; the schedule is
    /// validated but not used). Tabulated fields get a numeric Limsup:
    /// values along the schedule tail, clustered with
    /// [`LIMSUP_CLUSTER_RADIUS`], tagged approximate.
    pub fn limit_map_eval(
        &self,
        x: &[f64],
        y: usize,
        c_schedule: &[f64],
        c_min: f64,
    ) -> Result<ConvexSet> {
        if c_schedule.is_empty() {
            return Err(Error::Domain("limit_map_eval: empty c schedule".into()));
        }
        for w in c_schedule.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Domain("limit_map_eval: schedule not strictly increasing".into()));
            }
        }
        let last = *c_schedule.last().unwrap();
        if last < c_min {
            return Err(Error::Domain(format!(
                "limit_map_eval: schedule ends at {last}, below c_min {c_min}"
            )));
        }
        self.check_state(y)?;
        self.check_dim(x)?;
        match &self.kind {
            FieldKind::Affine { a, .. } => ConvexSet::singleton(a[y].matvec(x)),
            FieldKind::Tabulated(_) => {
                let values: Vec<Vec<f64>> = c_schedule
                    .iter()
                    .map(|&c| self.scale_eval(c.max(1.0), x, y))
                    .collect::<Result<_>>()?;
                // cluster the tail half, largest c first, so each cluster is
                // represented by the value closest to the limit
                let tail_from = values.len() / 2;
                let mut reps: Vec<Vec<f64>> = Vec::new();
                for v in values[tail_from..].iter().rev() {
                    if !reps
                        .iter()
                        .any(|r| linalg::dist(r, v) <= LIMSUP_CLUSTER_RADIUS)
                    {
                        reps.push(v.clone());
                    }
                }
                Ok(ConvexSet::new(reps)?.mark_approximate())
            }
        }
    }

    /// `H(x)`: convex hull over all states of `h_∞(x, y)`.
    ///
    /// Uses the default `c` schedule for tabulated fields.
    pub fn big_h_eval(&self, x: &[f64]) -> Result<ConvexSet> {
        let schedule = default_c_schedule();
        let sets: Vec<ConvexSet> = (0..self.n_states)
            .map(|y| self.limit_map_eval(x, y, &schedule, DEFAULT_C_MIN))
            .collect::<Result<_>>()?;
        ConvexSet::hull_union(&sets)
    }
}

// ---------------------------------------------------------------------------
// Marchaud audit
// ---------------------------------------------------------------------------

/// Radii for the USC perturbation sequences, largest to smallest; the
/// smallest decides pass/fail against [`USC_TOL`].
const USC_RADII: [f64; 7] = [1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9];

/// Check the Marchaud properties of `H` on samples.
///
/// (i) pointwise bound `sup_{u∈H(x)} ‖u‖ ≤ K(1+‖x‖)` at every sample;
/// (ii) convexity/compactness (true by hull representation, recorded);
/// (iii) an upper-semicontinuity sampling falsifier: along perturbed
/// sequences `x_n → x`, generators of `H(x_n)` must enter the
/// [`USC_TOL`]-neighborhood of `H(x)`; a violation is reported with the
/// witness triple `(x_n, u_n, distance)`.
///
/// Failures are report entries, not errors. Deterministic: perturbation
/// directions come from a fixed-seed generator.
pub fn marchaud_audit(
    field: &VectorField,
    sample_xs: &[Vec<f64>],
    perturbation_count: usize,
) -> Result<AuditReport> {
    if sample_xs.is_empty() {
        return Err(Error::Domain("marchaud_audit: no samples".into()));
    }
    let mut report = AuditReport::new("marchaud");
    let k = field.bound();

    // (i) pointwise linear growth
    let mut worst_excess = f64::NEG_INFINITY;
    let mut witness = None;
    for x in sample_xs {
        let h = field.big_h_eval(x)?;
        let sup = h.max_norm();
        let bound = k * (1.0 + linalg::norm(x));
        let excess = sup - bound;
        if excess > worst_excess {
            worst_excess = excess;
            witness = Some(format!(
                "x = {x:?}: sup ‖u‖ = {sup:.6e} vs K(1+‖x‖) = {bound:.6e}"
            ));
        }
    }
    report.check_bound("pointwise bound K(1+|x|)", worst_excess, 1e-12, witness);

    // (ii) by representation every value is a hull of finitely many points
    report.check_flag("convex compact values (by representation)", true, None);

    // (iii) USC sampling falsifier
    let mut rng = ChaCha8Rng::seed_from_u64(0xA11D17);
    let mut worst_dist = 0.0f64;
    let mut usc_witness: Option<String> = None;
    for x in sample_xs {
        let h_x = field.big_h_eval(x)?;
        for _ in 0..perturbation_count {
            let dir = random_unit(&mut rng, field.dim());
            for &r in &USC_RADII {
                let xn = linalg::axpy(x, r, &dir);
                let h_xn = field.big_h_eval(&xn)?;
                let mut max_d = 0.0f64;
                let mut max_u: Option<&Vec<f64>> = None;
                for u in h_xn.generators() {
                    let d = distance_to_set(u, &h_x)?;
                    if d > max_d {
                        max_d = d;
                        max_u = Some(u);
                    }
                }
                // only the smallest radius decides
                if r == USC_RADII[USC_RADII.len() - 1] && max_d > worst_dist {
                    worst_dist = max_d;
                    usc_witness = max_u.map(|u| {
                        format!("x_n = {xn:?}, u_n = {u:?}, d(u_n, H(x)) = {max_d:.6e}")
                    });
                }
            }
        }
    }
    report.check_bound(
        "upper semicontinuity (sampling falsifier)",
        worst_dist,
        USC_TOL,
        usc_witness,
    );
    report.note(format!(
        "USC check is a falsifier, not a prover: certifies only that no violation \
         was found at tol={USC_TOL:.0e} over {perturbation_count} perturbation(s) per sample"
    ));
    Ok(report)
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

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn hull2(points: &[(f64, f64)]) -> ConvexSet {
        ConvexSet::new(points.iter().map(|&(a, b)| vec![a, b]).collect()).unwrap()
    }

    #[test]
    fn support_function_examples() {
        let h = hull2(&[(1.0, 0.0), (0.0, 1.0)]);
        assert_relative_eq!(support_function(&h, &[1.0, 0.0]).unwrap(), 1.0);
        assert_relative_eq!(support_function(&h, &[1.0, 1.0]).unwrap(), 1.0);
        let s = ConvexSet::singleton(vec![2.0, -3.0]).unwrap();
        assert_relative_eq!(support_function(&s, &[0.5, 1.0]).unwrap(), -2.0);
        assert!(matches!(
            support_function(&h, &[0.0, 0.0]),
            Err(Error::Domain(_))
        ));
    }

    /// Grid oracle: minimize ‖λ g₁ + (1−λ) g₂ − p‖ over λ ∈ {0, 1e-4, …, 1}.
    fn segment_distance_oracle(p: &[f64], g1: &[f64], g2: &[f64]) -> f64 {
        let mut best = f64::INFINITY;
        let steps = 10_000;
        for i in 0..=steps {
            let lam = i as f64 / steps as f64;
            let q = linalg::axpy(&linalg::scale(g1, lam), 1.0 - lam, g2);
            best = best.min(linalg::dist(&q, p));
        }
        best
    }

    #[test]
    fn distance_matches_grid_oracle() {
        let h = hull2(&[(1.0, 0.0), (0.0, 1.0)]);
        let g1 = [1.0, 0.0];
        let g2 = [0.0, 1.0];

        let d0 = distance_to_set(&[0.0, 0.0], &h).unwrap();
        let oracle0 = segment_distance_oracle(&[0.0, 0.0], &g1, &g2);
        assert_relative_eq!(d0, oracle0, epsilon = 1e-6);
        assert_relative_eq!(d0, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-9);

        let d2 = distance_to_set(&[2.0, 0.0], &h).unwrap();
        let oracle2 = segment_distance_oracle(&[2.0, 0.0], &g1, &g2);
        assert_relative_eq!(d2, oracle2, epsilon = 1e-6);
        assert_relative_eq!(d2, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn distance_zero_for_members_and_hull_invariance() {
        let h = hull2(&[(1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
        for g in h.generators() {
            assert!(distance_to_set(g, &h).unwrap() <= HULL_TOL);
        }
        // appending an interior point must not change queries
        let mid = vec![0.5, 0.5];
        assert!(distance_to_set(&mid, &h).unwrap() <= HULL_TOL);
        let mut gens = h.generators().to_vec();
        gens.push(mid);
        let h2 = ConvexSet::new(gens).unwrap();
        let probe = [3.0, -1.0];
        assert_relative_eq!(
            distance_to_set(&probe, &h).unwrap(),
            distance_to_set(&probe, &h2).unwrap(),
            epsilon = 1e-9
        );
        assert_relative_eq!(
            support_function(&h, &[0.3, 0.7]).unwrap(),
            support_function(&h2, &[0.3, 0.7]).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn distance_dimension_mismatch() {
        let h = hull2(&[(1.0, 0.0)]);
        assert!(matches!(
            distance_to_set(&[1.0, 2.0, 3.0], &h),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    fn identity_field() -> VectorField {
        VectorField::affine(vec![Mat::identity(2)], vec![vec![3.0, 0.0]]).unwrap()
    }

    #[test]
    fn scale_eval_examples() {
        // A = I, b = (3,0), c = 3, x = (1,1) → (2,1)
        let f = identity_field();
        let v = f.scale_eval(3.0, &[1.0, 1.0], 0).unwrap();
        assert_relative_eq!(v[0], 2.0, epsilon = 1e-15);
        assert_relative_eq!(v[1], 1.0, epsilon = 1e-15);

        // c = 1 is the field itself
        let v1 = f.scale_eval(1.0, &[0.3, -0.7], 0).unwrap();
        let v2 = f.eval(&[0.3, -0.7], 0).unwrap();
        assert_relative_eq!(v1[0], v2[0], epsilon = 1e-15);
        assert_relative_eq!(v1[1], v2[1], epsilon = 1e-15);

        // A = diag(-1,-2), b = (4,4), c = 4, x = (1,0) → (0,1)
        let g = VectorField::affine(vec![Mat::diag(&[-1.0, -2.0])], vec![vec![4.0, 4.0]]).unwrap();
        let v = g.scale_eval(4.0, &[1.0, 0.0], 0).unwrap();
        assert_relative_eq!(v[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(v[1], 1.0, epsilon = 1e-15);

        assert!(matches!(
            f.scale_eval(0.5, &[0.0, 0.0], 0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            f.scale_eval(1.0, &[0.0, 0.0], 7),
            Err(Error::UnknownState { .. })
        ));
    }

    #[test]
    fn limit_map_affine_closed_form() {
        let f = identity_field();
        let sched = default_c_schedule();
        let s = f.limit_map_eval(&[2.0, -1.0], 0, &sched, DEFAULT_C_MIN).unwrap();
        assert_eq!(s.generators().len(), 1);
        assert_relative_eq!(s.generators()[0][0], 2.0);
        assert_relative_eq!(s.generators()[0][1], -1.0);
        assert!(!s.is_approximate());

        let z = f.limit_map_eval(&[0.0, 0.0], 0, &sched, DEFAULT_C_MIN).unwrap();
        assert_relative_eq!(linalg::norm(&z.generators()[0]), 0.0);

        assert!(matches!(
            f.limit_map_eval(&[0.0, 0.0], 0, &[], DEFAULT_C_MIN),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn limit_map_affine_schedule_independent() {
        let f = VectorField::affine(
            vec![Mat::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.1]]).unwrap()],
            vec![vec![7.0, -2.0]],
        )
        .unwrap();
        let x = [0.4, 1.3];
        let a = f.limit_map_eval(&x, 0, &[2.0, 1e6], DEFAULT_C_MIN).unwrap();
        let b = f
            .limit_map_eval(&x, 0, &[10.0, 55.0, 1e3, 2e6], DEFAULT_C_MIN)
            .unwrap();
        assert_eq!(a.generators(), b.generators());
    }

    #[test]
    fn limit_map_tabulated_matches_affine_oracle() {
        // h(x, y) = x + v with a constant offset: h_c → x at rate 1/c
        let v = (1.0f64).sin();
        let tab: FieldFn = Arc::new(move |x: &[f64], _y| vec![x[0] + v, x[1] + v]);
        let f = VectorField::tabulated(2, 1, tab, 1.0, 1.0 + v).unwrap();
        let x = [0.25, -0.75];
        let sched = default_c_schedule();
        let s = f.limit_map_eval(&x, 0, &sched, DEFAULT_C_MIN).unwrap();
        assert!(s.is_approximate());
        assert_eq!(s.generators().len(), 1, "expected a singleton cluster");
        // oracle: the affine field with A = I, b = (v, v) has limit {x}
        let oracle = VectorField::affine(vec![Mat::identity(2)], vec![vec![v, v]])
            .unwrap()
            .limit_map_eval(&x, 0, &sched, DEFAULT_C_MIN)
            .unwrap();
        assert!(linalg::dist(&s.generators()[0], &oracle.generators()[0]) <= 1e-4);
    }

    #[test]
    fn big_h_examples() {
        // constant A(y) = M for all y → {Mx}
        let m = Mat::diag(&[-1.0, -2.0]);
        let f = VectorField::affine(
            vec![m.clone(), m.clone()],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        )
        .unwrap();
        let h = f.big_h_eval(&[1.0, 1.0]).unwrap();
        assert_eq!(h.generators().len(), 1);
        assert_relative_eq!(h.generators()[0][0], -1.0);
        assert_relative_eq!(h.generators()[0][1], -2.0);

        // x = 0 → {0} regardless of b
        let h0 = f.big_h_eval(&[0.0, 0.0]).unwrap();
        assert_relative_eq!(h0.max_norm(), 0.0);

        // S = {y1, y2}, A(y1) = I, A(y2) = -I, x = (1,0) → hull{(1,0),(−1,0)}
        let g = VectorField::affine(
            vec![Mat::identity(2), Mat::identity(2).scale(-1.0)],
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
        )
        .unwrap();
        let h = g.big_h_eval(&[1.0, 0.0]).unwrap();
        assert_eq!(h.generators().len(), 2);
        assert!(h.generators().iter().any(|g| g == &vec![1.0, 0.0]));
        assert!(h.generators().iter().any(|g| g == &vec![-1.0, 0.0]));
    }

    #[test]
    fn marchaud_audit_affine_passes() {
        let f = VectorField::affine(
            vec![Mat::identity(2), Mat::identity(2).scale(-1.0)],
            vec![vec![1.0, 2.0], vec![-1.0, 0.5]],
        )
        .unwrap();
        let samples = vec![vec![0.0, 0.0], vec![1.0, -1.0], vec![10.0, 3.0]];
        let rep = marchaud_audit(&f, &samples, 3).unwrap();
        assert!(rep.passed(), "{rep:?}");
    }

    #[test]
    fn marchaud_audit_flags_forced_bound_violation() {
        // K forced to 0 with nonzero b: the growth bound must fail
        let f = VectorField::affine(vec![Mat::identity(2)], vec![vec![1.0, 2.0]])
            .unwrap()
            .with_declared_constants(1.0, 0.0)
            .unwrap();
        let rep = marchaud_audit(&f, &[vec![0.0, 0.0]], 1).unwrap();
        assert!(!rep.passed());
        let fail = rep.first_failure().unwrap();
        assert_eq!(fail.label, "pointwise bound K(1+|x|)");
        assert!(fail.witness.is_some());
    }

    #[test]
    fn marchaud_audit_flags_jump_discontinuity() {
        // positively homogeneous field with a jump across {x₁ = 0}
        let a1 = Mat::identity(2);
        let a2 = Mat::identity(2).scale(-1.0);
        let tab: FieldFn = Arc::new(move |x: &[f64], _y| {
            if x[0] < 0.0 {
                a1.matvec(x)
            } else {
                a2.matvec(x)
            }
        });
        let f = VectorField::tabulated(2, 1, tab, 1.0, 1.0).unwrap();
        let rep = marchaud_audit(&f, &[vec![0.0, 1.0]], 8).unwrap();
        assert!(!rep.passed());
        let fail = rep.first_failure().unwrap();
        assert_eq!(fail.label, "upper semicontinuity (sampling falsifier)");
        // the jump magnitude at x = (0,1) is ‖(I −(−I))x‖ = 2; the reported
        // distance must exceed the tolerance by a wide margin
        assert!(fail.observed.unwrap() > 1.0);
        assert!(fail.witness.is_some());
    }

    #[test]
    fn lipschitz_constant_from_power_iteration() {
        let a = Mat::from_rows(&[vec![0.0, 4.0], vec![0.0, 0.0]]).unwrap();
        let f = VectorField::affine(vec![a], vec![vec![0.0, 0.0]]).unwrap();
        assert_relative_eq!(f.lipschitz(), 4.0, epsilon = 1e-6);
        // declaring a smaller L must be rejected
        assert!(f.clone().with_declared_constants(3.0, 4.0).is_err());
    }
}
