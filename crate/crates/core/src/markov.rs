//! Finite controlled Markov process machinery: transition kernels with
//! iterate-dependent blending, stationary policies, invariant measures,
//! ergodic occupation measures, the vertex enumeration of `D(x)`, and the
//! limiting map `ĥ(x)`.
//!
//! Everything is exact for finite state and control sets: invariant
//! measures come from a pivoted linear solve (power-iteration fallback),
//! and multichain structure is detected exactly from the support graph.

use rand::Rng;

use crate::convex::ConvexSet;
use crate::engine::SATrajectory;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::report::AuditReport;
use crate::convex::VectorField;

/// Row-sum tolerance for stochastic data.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Residual tolerance for invariant measures: `‖ηP − η‖₁`.
pub const INVARIANT_RESIDUAL_TOL: f64 = 1e-10;

// ---------------------------------------------------------------------------
// Kernel tensors
// ---------------------------------------------------------------------------

/// Dense transition tensor `p(y' | y, z)`, shape `nS×nU×nS`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    n_states: usize,
    n_controls: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn from_nested(rows: &[Vec<Vec<f64>>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Config("kernel tensor: no states".into()));
        }
        let n_states = rows.len();
        let n_controls = rows[0].len();
        if n_controls == 0 {
            return Err(Error::Config("kernel tensor: no controls".into()));
        }
        let mut data = Vec::with_capacity(n_states * n_controls * n_states);
        for (y, per_control) in rows.iter().enumerate() {
            if per_control.len() != n_controls {
                return Err(Error::Config(format!(
                    "kernel tensor: state {y} has {} control rows, expected {n_controls}",
                    per_control.len()
                )));
            }
            for (z, row) in per_control.iter().enumerate() {
                if row.len() != n_states {
                    return Err(Error::Config(format!(
                        "kernel tensor: row (y={y}, z={z}) has length {}, expected {n_states}",
                        row.len()
                    )));
                }
                validate_stochastic_row(row, &format!("kernel row (y={y}, z={z})"))?;
                data.extend_from_slice(row);
            }
        }
        Ok(Tensor3 {
            n_states,
            n_controls,
            data,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_controls(&self) -> usize {
        self.n_controls
    }

    #[inline]
    pub fn row(&self, y: usize, z: usize) -> &[f64] {
        let base = (y * self.n_controls + z) * self.n_states;
        &self.data[base..base + self.n_states]
    }
}

fn validate_stochastic_row(row: &[f64], what: &str) -> Result<()> {
    let mut sum = 0.0;
    for &p in row {
        if !p.is_finite() || p < -ROW_SUM_TOL {
            return Err(Error::Config(format!("{what}: entry {p} is not a probability")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::Config(format!("{what}: row sum {sum} (must be 1 within {ROW_SUM_TOL:e})")));
    }
    Ok(())
}

/// Transition kernel `p(·|y,z,x)`: either constant in `x` or a convex
/// blend `P₀ + clamp(w·x, 0, 1)·(P₁ − P₀)`, which is continuous in `x`
/// with Lipschitz modulus `‖w‖·max_{y,z} ‖P₁(y,z,·) − P₀(y,z,·)‖₁`.
#[derive(Debug, Clone)]
pub enum KernelSpec {
    Constant(Tensor3),
    Blend {
        p0: Tensor3,
        p1: Tensor3,
        weight: Vec<f64>,
    },
}

/// Finite controlled Markov model.
#[derive(Debug, Clone)]
pub struct MarkovModel {
    n_states: usize,
    n_controls: usize,
    kernel: KernelSpec,
    label: String,
    /// Declared Lipschitz modulus of `x ↦ p(·|y,z,x)` in total variation.
    modulus: f64,
}

impl MarkovModel {
    pub fn constant(tensor: Tensor3, label: impl Into<String>) -> Self {
        MarkovModel {
            n_states: tensor.n_states,
            n_controls: tensor.n_controls,
            kernel: KernelSpec::Constant(tensor),
            label: label.into(),
            modulus: 0.0,
        }
    }

    pub fn blend(p0: Tensor3, p1: Tensor3, weight: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if p0.n_states != p1.n_states || p0.n_controls != p1.n_controls {
            return Err(Error::Config("blend kernel: tensor shapes differ".into()));
        }
        if !linalg::all_finite(&weight) {
            return Err(Error::Config("blend kernel: non-finite weight".into()));
        }
        let mut max_l1 = 0.0f64;
        for y in 0..p0.n_states {
            for z in 0..p0.n_controls {
                let l1: f64 = p0
                    .row(y, z)
                    .iter()
                    .zip(p1.row(y, z))
                    .map(|(a, b)| (a - b).abs())
                    .sum();
                max_l1 = max_l1.max(l1);
            }
        }
        let modulus = linalg::norm(&weight) * max_l1;
        Ok(MarkovModel {
            n_states: p0.n_states,
            n_controls: p0.n_controls,
            kernel: KernelSpec::Blend { p0, p1, weight },
            label: label.into(),
            modulus,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_controls(&self) -> usize {
        self.n_controls
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    /// Declared total-variation Lipschitz modulus in `x`.
    pub fn modulus(&self) -> f64 {
        self.modulus
    }

    pub fn is_uncontrolled(&self) -> bool {
        self.n_controls == 1
    }

    fn check_indices(&self, y: usize, z: usize) -> Result<()> {
        if y >= self.n_states {
            return Err(Error::UnknownState {
                index: y,
                n_states: self.n_states,
            });
        }
        if z >= self.n_controls {
            return Err(Error::UnknownControl {
                index: z,
                n_controls: self.n_controls,
            });
        }
        Ok(())
    }

    fn blend_factor(&self, x: &[f64]) -> Result<f64> {
        match &self.kernel {
            KernelSpec::Constant(_) => Ok(0.0),
            KernelSpec::Blend { weight, .. } => {
                if weight.len() != x.len() {
                    return Err(Error::DimensionMismatch {
                        what: "blend kernel weight",
                        expected: weight.len(),
                        got: x.len(),
                    });
                }
                Ok(linalg::dot(weight, x).clamp(0.0, 1.0))
            }
        }
    }

    /// Single transition probability `p(y_next | y, z, x)`.
    #[inline]
    pub fn prob(&self, y: usize, z: usize, y_next: usize, x: &[f64]) -> Result<f64> {
        self.check_indices(y, z)?;
        if y_next >= self.n_states {
            return Err(Error::UnknownState {
                index: y_next,
                n_states: self.n_states,
            });
        }
        match &self.kernel {
            KernelSpec::Constant(t) => Ok(t.row(y, z)[y_next]),
            KernelSpec::Blend { p0, p1, .. } => {
                let t = self.blend_factor(x)?;
                let a = p0.row(y, z)[y_next];
                let b = p1.row(y, z)[y_next];
                Ok(a + t * (b - a))
            }
        }
    }

    /// Full kernel row at `(y, z, x)`.
    pub fn kernel_row(&self, y: usize, z: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check_indices(y, z)?;
        match &self.kernel {
            KernelSpec::Constant(t) => Ok(t.row(y, z).to_vec()),
            KernelSpec::Blend { p0, p1, .. } => {
                let t = self.blend_factor(x)?;
                Ok(p0
                    .row(y, z)
                    .iter()
                    .zip(p1.row(y, z))
                    .map(|(a, b)| a + t * (b - a))
                    .collect())
            }
        }
    }

    /// Draw the next state from the kernel row; reproducible given the
    /// random stream.
    pub fn sample_step(&self, y: usize, z: usize, x: &[f64], rng: &mut impl Rng) -> Result<usize> {
        self.check_indices(y, z)?;
        let u: f64 = rng.gen::<f64>();
        let mut acc = 0.0;
        for y_next in 0..self.n_states {
            acc += self.prob(y, z, y_next, x)?;
            if u < acc {
                return Ok(y_next);
            }
        }
        Ok(self.n_states - 1)
    }

    /// Policy-averaged chain: `P_φ(y → y') = Σ_z φ(y,z)·p(y'|y,z,x)`.
    pub fn policy_kernel(&self, policy: &StationaryPolicy, x: &[f64]) -> Result<Mat> {
        if policy.n_states() != self.n_states || policy.n_controls() != self.n_controls {
            return Err(Error::Config(format!(
                "policy shape {}x{} does not match model {}x{}",
                policy.n_states(),
                policy.n_controls(),
                self.n_states,
                self.n_controls
            )));
        }
        let mut p = Mat::zeros(self.n_states, self.n_states);
        for y in 0..self.n_states {
            for z in 0..self.n_controls {
                let w = policy.probs()[(y, z)];
                if w == 0.0 {
                    continue;
                }
                let row = self.kernel_row(y, z, x)?;
                for y_next in 0..self.n_states {
                    p[(y, y_next)] += w * row[y_next];
                }
            }
        }
        Ok(p)
    }

    /// Sampled continuity check of the kernel in `x` (plus row validity),
    /// against the declared modulus.
    pub fn audit_kernel(&self, sample_xs: &[Vec<f64>]) -> AuditReport {
        let mut report = AuditReport::new("kernel");
        let mut worst_row = 0.0f64;
        let mut worst_cont: f64 = 0.0;
        let mut witness = None;
        for x in sample_xs {
            for y in 0..self.n_states {
                for z in 0..self.n_controls {
                    if let Ok(row) = self.kernel_row(y, z, x) {
                        let sum: f64 = row.iter().sum();
                        worst_row = worst_row.max((sum - 1.0).abs());
                        let neg = row.iter().fold(0.0f64, |m, &p| m.max(-p));
                        worst_row = worst_row.max(neg);
                    }
                }
            }
            // continuity against a nearby point
            let x2: Vec<f64> = x.iter().map(|v| v + 1e-4).collect();
            for y in 0..self.n_states {
                for z in 0..self.n_controls {
                    if let (Ok(r1), Ok(r2)) = (self.kernel_row(y, z, x), self.kernel_row(y, z, &x2)) {
                        let l1: f64 = r1.iter().zip(&r2).map(|(a, b)| (a - b).abs()).sum();
                        let allowed = self.modulus * linalg::dist(x, &x2) + 1e-12;
                        if l1 - allowed > worst_cont {
                            worst_cont = l1 - allowed;
                            witness = Some(format!("x = {x:?}, (y,z) = ({y},{z}): TV jump {l1:.3e} > {allowed:.3e}"));
                        }
                    }
                }
            }
        }
        report.check_bound("row sums and nonnegativity", worst_row, ROW_SUM_TOL, None);
        report.check_bound("continuity modulus in x", worst_cont, 0.0, witness);
        report
    }
}

// ---------------------------------------------------------------------------
// Policies and occupation measures
// ---------------------------------------------------------------------------

/// Row-stochastic stationary policy `φ(y, dz)`.
#[derive(Debug, Clone)]
pub struct StationaryPolicy {
    probs: Mat,
}

impl StationaryPolicy {
    pub fn new(probs: Mat) -> Result<Self> {
        for y in 0..probs.rows() {
            validate_stochastic_row(probs.row(y), &format!("policy row {y}"))?;
        }
        Ok(StationaryPolicy { probs })
    }

    pub fn uniform(n_states: usize, n_controls: usize) -> Self {
        let mut m = Mat::zeros(n_states, n_controls);
        for y in 0..n_states {
            for z in 0..n_controls {
                m[(y, z)] = 1.0 / n_controls as f64;
            }
        }
        StationaryPolicy { probs: m }
    }

    /// Deterministic policy from a state → control assignment.
    pub fn deterministic(n_controls: usize, assignment: &[usize]) -> Result<Self> {
        let mut m = Mat::zeros(assignment.len(), n_controls);
        for (y, &z) in assignment.iter().enumerate() {
            if z >= n_controls {
                return Err(Error::UnknownControl {
                    index: z,
                    n_controls,
                });
            }
            m[(y, z)] = 1.0;
        }
        Ok(StationaryPolicy { probs: m })
    }

    /// The single policy of an uncontrolled model.
    pub fn trivial(n_states: usize) -> Self {
        StationaryPolicy::uniform(n_states, 1)
    }

    pub fn n_states(&self) -> usize {
        self.probs.rows()
    }

    pub fn n_controls(&self) -> usize {
        self.probs.cols()
    }

    pub fn probs(&self) -> &Mat {
        &self.probs
    }

    pub fn sample_control(&self, y: usize, rng: &mut impl Rng) -> Result<usize> {
        if y >= self.probs.rows() {
            return Err(Error::UnknownState {
                index: y,
                n_states: self.probs.rows(),
            });
        }
        let u: f64 = rng.gen::<f64>();
        let row = self.probs.row(y);
        let mut acc = 0.0;
        for (z, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return Ok(z);
            }
        }
        Ok(row.len() - 1)
    }
}

/// Ergodic occupation measure `Ψ(y, z)` with its state marginal `η`.
#[derive(Debug, Clone)]
pub struct OccupationMeasure {
    weights: Mat,
    marginal: Vec<f64>,
}

impl OccupationMeasure {
    /// Build from nonnegative weights summing to one; the marginal is the
    /// row-sum vector. Invariance under a policy kernel is a property of
    /// *solved* measures and is checked where they are produced.
    pub fn from_weights(weights: Mat) -> Result<Self> {
        let mut total = 0.0;
        for y in 0..weights.rows() {
            for z in 0..weights.cols() {
                let w = weights[(y, z)];
                if !w.is_finite() || w < -1e-12 {
                    return Err(Error::Domain(format!("occupation weight ({y},{z}) = {w}")));
                }
                total += w;
            }
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("occupation weights sum to {total}, expected 1")));
        }
        let marginal = (0..weights.rows())
            .map(|y| weights.row(y).iter().sum())
            .collect();
        Ok(OccupationMeasure { weights, marginal })
    }

    /// `Ψ(y,z) = η(y)·φ(y,z)`.
    pub fn from_invariant(eta: &[f64], policy: &StationaryPolicy) -> Result<Self> {
        if eta.len() != policy.n_states() {
            return Err(Error::DimensionMismatch {
                what: "occupation marginal",
                expected: policy.n_states(),
                got: eta.len(),
            });
        }
        let mut w = Mat::zeros(policy.n_states(), policy.n_controls());
        for y in 0..policy.n_states() {
            for z in 0..policy.n_controls() {
                w[(y, z)] = eta[y] * policy.probs()[(y, z)];
            }
        }
        OccupationMeasure::from_weights(w)
    }

    pub fn weights(&self) -> &Mat {
        &self.weights
    }

    pub fn marginal(&self) -> &[f64] {
        &self.marginal
    }

    /// Point mass at a single `(y, z)` pair.
    pub fn point_mass(n_states: usize, n_controls: usize, y: usize, z: usize) -> Result<Self> {
        let mut w = Mat::zeros(n_states, n_controls);
        w[(y, z)] = 1.0;
        OccupationMeasure::from_weights(w)
    }

    /// Total-variation distance between joint weight tables.
    pub fn tv_distance(&self, other: &OccupationMeasure) -> f64 {
        0.5 * self
            .weights
            .data()
            .iter()
            .zip(other.weights.data())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }

    /// Total-variation distance between state marginals.
    pub fn marginal_tv_distance(&self, eta: &[f64]) -> f64 {
        0.5 * self
            .marginal
            .iter()
            .zip(eta)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

// ---------------------------------------------------------------------------
// Invariant measures
// ---------------------------------------------------------------------------

/// Strongly connected components of the support graph of `P` (Kosaraju).
fn strongly_connected_components(p: &Mat) -> Vec<Vec<usize>> {
    let n = p.rows();
    let edge = |i: usize, j: usize| p[(i, j)] > 0.0;

    fn dfs_order(n: usize, edge: &dyn Fn(usize, usize) -> bool, order: &mut Vec<usize>) {
        let mut seen = vec![false; n];
        for s in 0..n {
            if seen[s] {
                continue;
            }
            // iterative post-order
            let mut stack = vec![(s, 0usize)];
            seen[s] = true;
            while let Some(&mut (v, ref mut next)) = stack.last_mut() {
                let mut advanced = false;
                while *next < n {
                    let u = *next;
                    *next += 1;
                    if edge(v, u) && !seen[u] {
                        seen[u] = true;
                        stack.push((u, 0));
                        advanced = true;
                        break;
                    }
                }
                if !advanced && stack.last().map(|&(v2, nx)| v2 == v && nx >= n).unwrap_or(false) {
                    order.push(v);
                    stack.pop();
                }
            }
        }
    }

    let mut order = Vec::with_capacity(n);
    dfs_order(n, &edge, &mut order);

    let redge = |i: usize, j: usize| p[(j, i)] > 0.0;
    let mut comp = vec![usize::MAX; n];
    let mut comps: Vec<Vec<usize>> = Vec::new();
    for &s in order.iter().rev() {
        if comp[s] != usize::MAX {
            continue;
        }
        let id = comps.len();
        let mut members = vec![s];
        comp[s] = id;
        let mut stack = vec![s];
        while let Some(v) = stack.pop() {
            for u in 0..n {
                if redge(v, u) && comp[u] == usize::MAX {
                    comp[u] = id;
                    members.push(u);
                    stack.push(u);
                }
            }
        }
        comps.push(members);
    }
    comps
}

/// Recurrent classes: SCCs with no edge leaving the component.
pub fn recurrent_classes(p: &Mat) -> Vec<Vec<usize>> {
    let comps = strongly_connected_components(p);
    let n = p.rows();
    let mut comp_of = vec![0usize; n];
    for (id, members) in comps.iter().enumerate() {
        for &m in members {
            comp_of[m] = id;
        }
    }
    let mut closed = Vec::new();
    for (id, members) in comps.iter().enumerate() {
        let mut is_closed = true;
        'outer: for &v in members {
            for u in 0..n {
                if p[(v, u)] > 0.0 && comp_of[u] != id {
                    is_closed = false;
                    break 'outer;
                }
            }
        }
        if is_closed {
            let mut sorted = members.clone();
            sorted.sort_unstable();
            closed.push(sorted);
        }
    }
    closed.sort();
    closed
}

/// Invariant probability measure of a row-stochastic matrix.
///
/// Requires a unichain: exactly one recurrent class (checked exactly via
/// the support graph). Solved as `(Pᵀ − I)η = 0` with the normalization
/// `Ση = 1` replacing one equation; power-iteration fallback. The residual
/// `‖ηP − η‖₁` is verified against [`INVARIANT_RESIDUAL_TOL`].
pub fn invariant_measure(p: &Mat) -> Result<Vec<f64>> {
    if !p.is_square() {
        return Err(Error::Domain("invariant_measure: matrix not square".into()));
    }
    let n = p.rows();
    for y in 0..n {
        validate_stochastic_row(p.row(y), &format!("transition row {y}"))
            .map_err(|e| Error::Domain(e.to_string()))?;
    }
    let classes = recurrent_classes(p);
    if classes.len() != 1 {
        return Err(Error::Multichain(format!(
            "{} recurrent classes: {:?}",
            classes.len(),
            classes
        )));
    }

    // (Pᵀ − I) with the last row replaced by 1ᵀ, rhs = e_last
    let mut a = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = p[(j, i)] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = vec![0.0; n];
    rhs[n - 1] = 1.0;

    let eta = match linalg::solve_linear(&a, &rhs) {
        Ok(mut eta) => {
            for e in eta.iter_mut() {
                if *e < 0.0 && *e > -1e-12 {
                    *e = 0.0;
                }
            }
            let s: f64 = eta.iter().sum();
            for e in eta.iter_mut() {
                *e /= s;
            }
            eta
        }
        Err(_) => power_iteration_invariant(p),
    };

    let residual = invariant_residual(p, &eta);
    if residual > INVARIANT_RESIDUAL_TOL || eta.iter().any(|&e| e < 0.0) {
        let eta2 = power_iteration_invariant(p);
        let r2 = invariant_residual(p, &eta2);
        if r2 > INVARIANT_RESIDUAL_TOL {
            return Err(Error::Numerical(format!(
                "invariant measure residual {r2:.3e} exceeds {INVARIANT_RESIDUAL_TOL:e}"
            )));
        }
        return Ok(eta2);
    }
    Ok(eta)
}

fn invariant_residual(p: &Mat, eta: &[f64]) -> f64 {
    let n = p.rows();
    let mut res = 0.0;
    for j in 0..n {
        let mut v = 0.0;
        for i in 0..n {
            v += eta[i] * p[(i, j)];
        }
        res += (v - eta[j]).abs();
    }
    res
}

fn power_iteration_invariant(p: &Mat) -> Vec<f64> {
    let n = p.rows();
    let mut eta = vec![1.0 / n as f64; n];
    // average the last few iterates to damp periodic chains
    let mut avg = vec![0.0; n];
    for it in 0..20_000 {
        let mut next = vec![0.0; n];
        for i in 0..n {
            let e = eta[i];
            if e == 0.0 {
                continue;
            }
            for j in 0..n {
                next[j] += e * p[(i, j)];
            }
        }
        eta = next;
        if it >= 19_000 {
            for j in 0..n {
                avg[j] += eta[j];
            }
        }
    }
    let s: f64 = avg.iter().sum();
    avg.iter().map(|v| v / s).collect()
}

// ---------------------------------------------------------------------------
// Occupation measures and the limiting map
// ---------------------------------------------------------------------------

/// Ergodic occupation measure of a stationary policy at a frozen iterate.
pub fn occupation_measure(
    model: &MarkovModel,
    policy: &StationaryPolicy,
    x: &[f64],
) -> Result<OccupationMeasure> {
    let p = model.policy_kernel(policy, x)?;
    let eta = invariant_measure(&p)?;
    OccupationMeasure::from_invariant(&eta, policy)
}

/// Occupation measures of all `nU^nS` deterministic stationary policies;
/// their convex hull represents `D(x)` for unichain finite models.
///
/// Fails with a multichain error naming the offending policy if some
/// deterministic policy induces more than one recurrent class.
pub fn occupation_vertices(model: &MarkovModel, x: &[f64]) -> Result<Vec<OccupationMeasure>> {
    let ns = model.n_states();
    let nu = model.n_controls();
    let count = (nu as u64).checked_pow(ns as u32).ok_or_else(|| {
        Error::Domain(format!("deterministic policy enumeration overflow: {nu}^{ns}"))
    })?;
    let mut out = Vec::with_capacity(count as usize);
    let mut assignment = vec![0usize; ns];
    for idx in 0..count {
        let mut rem = idx;
        for slot in assignment.iter_mut() {
            *slot = (rem % nu as u64) as usize;
            rem /= nu as u64;
        }
        let policy = StationaryPolicy::deterministic(nu, &assignment)?;
        let nu_measure = occupation_measure(model, &policy, x).map_err(|e| match e {
            Error::Multichain(msg) => Error::Multichain(format!(
                "deterministic policy {assignment:?}: {msg}"
            )),
            other => other,
        })?;
        out.push(nu_measure);
    }
    Ok(out)
}

/// `h̃(x, ν) = Σ_y ν(y, U)·h(x, y)`: the state-averaged drift.
pub fn tilde_h(field: &VectorField, x: &[f64], nu: &OccupationMeasure) -> Result<Vec<f64>> {
    if nu.marginal().len() != field.n_states() {
        return Err(Error::DimensionMismatch {
            what: "occupation marginal vs field states",
            expected: field.n_states(),
            got: nu.marginal().len(),
        });
    }
    let mut acc = vec![0.0; field.dim()];
    for (y, &w) in nu.marginal().iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let h = field.eval(x, y)?;
        acc = linalg::axpy(&acc, w, &h);
    }
    Ok(acc)
}

/// `ĥ(x)`: hull of `h̃(x, ν)` over the vertices of `D(x)`.
pub fn hat_h_eval(field: &VectorField, model: &MarkovModel, x: &[f64]) -> Result<ConvexSet> {
    let vertices = occupation_vertices(model, x)?;
    let points: Vec<Vec<f64>> = vertices
        .iter()
        .map(|nu| tilde_h(field, x, nu))
        .collect::<Result<_>>()?;
    let mut dedup: Vec<Vec<f64>> = Vec::new();
    for p in points {
        if !dedup.contains(&p) {
            dedup.push(p);
        }
    }
    ConvexSet::new(dedup)
}

/// Time-averaged empirical occupation measure of a trajectory window,
/// using the piecewise-constant pair process on `[t(n), t(n+1))`.
pub fn empirical_occupation(traj: &SATrajectory, s: f64, t: f64) -> Result<OccupationMeasure> {
    let horizon = *traj.times().last().unwrap();
    if !(s >= 0.0 && s < t && t <= horizon + 1e-12) {
        return Err(Error::Domain(format!(
            "empirical_occupation: window [{s}, {t}] invalid for horizon {horizon}"
        )));
    }
    let mut w = Mat::zeros(traj.n_states(), traj.n_controls());
    let times = traj.times();
    let mut total = 0.0;
    for n in 0..traj.transitions() {
        let lo = times[n].max(s);
        let hi = times[n + 1].min(t);
        if hi > lo {
            let len = hi - lo;
            w[(traj.ys()[n], traj.zs()[n])] += len;
            total += len;
        }
    }
    if total <= 0.0 {
        return Err(Error::Domain("empirical_occupation: empty window".into()));
    }
    let scaled = w.scale(1.0 / total);
    OccupationMeasure::from_weights(scaled)
}

/// (B3) for finite `S×U`: every family of empirical measures on a finite
/// set is tight; recorded as a static pass with justification.
pub fn audit_tightness_static(model: &MarkovModel) -> AuditReport {
    let mut report = AuditReport::new("tightness");
    report.check_flag("tightness on finite S x U", true, None);
    report.note(format!(
        "S x U is finite ({} x {}); probability measures on a finite set are \
         automatically tight",
        model.n_states(),
        model.n_controls()
    ));
    report
}

/// (B2): the vertex representation of `D(x)` is a polytope, hence compact;
/// recorded as a static pass.
pub fn audit_dx_compact_static() -> AuditReport {
    let mut report = AuditReport::new("D(x) compact");
    report.check_flag("compactness of D(x) (polytope representation)", true, None);
    report.note("D(x) is represented as the convex hull of finitely many deterministic-policy occupation measures");
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_state_model() -> MarkovModel {
        // P = [[0.9, 0.1], [0.2, 0.8]] as an uncontrolled kernel
        let t = Tensor3::from_nested(&[
            vec![vec![0.9, 0.1]],
            vec![vec![0.2, 0.8]],
        ])
        .unwrap();
        MarkovModel::constant(t, "two-state")
    }

    #[test]
    fn tensor_rejects_bad_rows() {
        assert!(Tensor3::from_nested(&[vec![vec![0.5, 0.4]]]).is_err());
        assert!(Tensor3::from_nested(&[vec![vec![1.1, -0.1]]]).is_err());
    }

    #[test]
    fn sample_step_point_mass_and_constancy() {
        let t = Tensor3::from_nested(&[
            vec![vec![0.0, 1.0]],
            vec![vec![0.0, 1.0]],
        ])
        .unwrap();
        let m = MarkovModel::constant(t, "point-mass");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..32 {
            assert_eq!(m.sample_step(0, 0, &[0.0], &mut rng).unwrap(), 1);
        }
        // kernel independent of x: same seed, same draw
        let m2 = two_state_model();
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        let a = m2.sample_step(0, 0, &[0.0], &mut r1).unwrap();
        let b = m2.sample_step(0, 0, &[1.0], &mut r2).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            m2.sample_step(5, 0, &[0.0], &mut r1),
            Err(Error::UnknownState { .. })
        ));
    }

    #[test]
    fn sample_step_uniform_frequency() {
        let t = Tensor3::from_nested(&[vec![vec![0.5, 0.5]], vec![vec![0.5, 0.5]]]).unwrap();
        let m = MarkovModel::constant(t, "uniform");
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000;
        let mut ones = 0usize;
        for _ in 0..draws {
            ones += m.sample_step(0, 0, &[0.0], &mut rng).unwrap();
        }
        let freq = ones as f64 / draws as f64;
        // binomial std ≈ 0.0016, so ±0.01 is > 6 sigma
        assert!((freq - 0.5).abs() < 0.01, "freq = {freq}");
    }

    #[test]
    fn policy_kernel_cases() {
        // single control: the kernel slice itself
        let m = two_state_model();
        let p = m
            .policy_kernel(&StationaryPolicy::trivial(2), &[0.0])
            .unwrap();
        assert_relative_eq!(p[(0, 0)], 0.9);
        assert_relative_eq!(p[(1, 1)], 0.8);

        // uniform mixture of rows e1 and e2 → (0.5, 0.5)
        let t = Tensor3::from_nested(&[
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        ])
        .unwrap();
        let m2 = MarkovModel::constant(t, "mix");
        let p2 = m2
            .policy_kernel(&StationaryPolicy::uniform(2, 2), &[0.0])
            .unwrap();
        assert_relative_eq!(p2[(0, 0)], 0.5);
        assert_relative_eq!(p2[(0, 1)], 0.5);

        // row sums are 1 within 1e-12 on a random-ish 3-state model
        let t3 = Tensor3::from_nested(&[
            vec![vec![0.2, 0.5, 0.3], vec![0.6, 0.1, 0.3]],
            vec![vec![0.25, 0.25, 0.5], vec![0.1, 0.8, 0.1]],
            vec![vec![0.4, 0.4, 0.2], vec![0.3, 0.3, 0.4]],
        ])
        .unwrap();
        let m3 = MarkovModel::constant(t3, "three");
        let mut pol = Mat::zeros(3, 2);
        for y in 0..3 {
            pol[(y, 0)] = 0.3;
            pol[(y, 1)] = 0.7;
        }
        let p3 = m3
            .policy_kernel(&StationaryPolicy::new(pol).unwrap(), &[0.0])
            .unwrap();
        for y in 0..3 {
            let s: f64 = p3.row(y).iter().sum();
            assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn invariant_measure_examples() {
        let p = Mat::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let eta = invariant_measure(&p).unwrap();
        assert_relative_eq!(eta[0], 0.5, epsilon = 1e-12);

        let p2 = Mat::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let eta2 = invariant_measure(&p2).unwrap();
        assert_relative_eq!(eta2[0], 2.0 / 3.0, epsilon = 1e-10);
        assert_relative_eq!(eta2[1], 1.0 / 3.0, epsilon = 1e-10);

        let id = Mat::identity(2);
        match invariant_measure(&id) {
            Err(Error::Multichain(msg)) => {
                assert!(msg.contains("2 recurrent classes"), "{msg}");
            }
            other => panic!("expected multichain error, got {other:?}"),
        }
    }

    #[test]
    fn invariant_measure_periodic_chain() {
        // period-2 chain: unichain, invariant measure (0.5, 0.5)
        let p = Mat::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let eta = invariant_measure(&p).unwrap();
        assert_relative_eq!(eta[0], 0.5, epsilon = 1e-10);
    }

    #[test]
    fn occupation_measure_examples() {
        let m = two_state_model();
        let pol = StationaryPolicy::trivial(2);
        let occ = occupation_measure(&m, &pol, &[0.0]).unwrap();
        assert_relative_eq!(occ.weights()[(0, 0)], 2.0 / 3.0, epsilon = 1e-10);
        assert_relative_eq!(occ.weights()[(1, 0)], 1.0 / 3.0, epsilon = 1e-10);

        // invariance: ‖ηP_φ − η‖₁ ≤ 1e-9
        let p = m.policy_kernel(&pol, &[0.0]).unwrap();
        assert!(invariant_residual(&p, occ.marginal()) <= 1e-9);

        // uniform η, uniform φ on a 2×2 doubly stochastic model
        let t = Tensor3::from_nested(&[
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
        ])
        .unwrap();
        let m2 = MarkovModel::constant(t, "doubly");
        let occ2 = occupation_measure(&m2, &StationaryPolicy::uniform(2, 2), &[0.0]).unwrap();
        for y in 0..2 {
            for z in 0..2 {
                assert_relative_eq!(occ2.weights()[(y, z)], 0.25, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn occupation_vertices_counts_and_oracle() {
        // single control: exactly one vertex
        let m = two_state_model();
        let v = occupation_vertices(&m, &[0.0]).unwrap();
        assert_eq!(v.len(), 1);

        // 2 states x 2 controls: 4 vertices, each matching a per-policy solve
        let t = Tensor3::from_nested(&[
            vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            vec![vec![0.3, 0.7], vec![0.6, 0.4]],
        ])
        .unwrap();
        let m2 = MarkovModel::constant(t, "2x2");
        let v2 = occupation_vertices(&m2, &[0.0]).unwrap();
        assert_eq!(v2.len(), 4);
        let mut idx = 0;
        for a1 in 0..2usize {
            for a0 in 0..2usize {
                // enumeration order: assignment[0] cycles fastest
                let assignment = [a0, a1];
                let pol = StationaryPolicy::deterministic(2, &assignment).unwrap();
                let p = m2.policy_kernel(&pol, &[0.0]).unwrap();
                let eta = invariant_measure(&p).unwrap();
                let expect = OccupationMeasure::from_invariant(&eta, &pol).unwrap();
                assert!(v2[idx].tv_distance(&expect) < 1e-12);
                idx += 1;
            }
        }
    }

    #[test]
    fn occupation_vertices_rejects_multichain_policy() {
        // control 1 freezes the chain at its current state → multichain
        let t = Tensor3::from_nested(&[
            vec![vec![0.5, 0.5], vec![1.0, 0.0]],
            vec![vec![0.5, 0.5], vec![0.0, 1.0]],
        ])
        .unwrap();
        let m = MarkovModel::constant(t, "freeze");
        match occupation_vertices(&m, &[0.0]) {
            Err(Error::Multichain(msg)) => assert!(msg.contains("policy [1, 1]"), "{msg}"),
            other => panic!("expected multichain, got {other:?}"),
        }
    }

    #[test]
    fn tilde_h_and_hat_h() {
        use crate::convex::VectorField;
        let field = VectorField::affine(
            vec![Mat::diag(&[-1.0, -2.0]), Mat::diag(&[-1.0, -2.0])],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        )
        .unwrap();
        // point mass at y = 1 → h(x, 1)
        let nu = OccupationMeasure::point_mass(2, 1, 1, 0).unwrap();
        let x = [0.5, 0.5];
        let v = tilde_h(&field, &x, &nu).unwrap();
        let h1 = field.eval(&x, 1).unwrap();
        assert_relative_eq!(v[0], h1[0]);
        assert_relative_eq!(v[1], h1[1]);

        // affine: h̃ = A̅x + b̅ with averaged tables
        let m = two_state_model();
        let occ = occupation_measure(&m, &StationaryPolicy::trivial(2), &[0.0]).unwrap();
        let v2 = tilde_h(&field, &x, &occ).unwrap();
        let eta = occ.marginal();
        let (a_tabs, b_tabs) = field.affine_tables().unwrap();
        let mut expect = vec![0.0, 0.0];
        for y in 0..2 {
            let term = linalg::add(&a_tabs[y].matvec(&x), &b_tabs[y]);
            expect = linalg::axpy(&expect, eta[y], &term);
        }
        assert_relative_eq!(v2[0], expect[0], epsilon = 1e-14);
        assert_relative_eq!(v2[1], expect[1], epsilon = 1e-14);

        // x = 0 → b̅
        let v0 = tilde_h(&field, &[0.0, 0.0], &occ).unwrap();
        assert_relative_eq!(v0[0], eta[0], epsilon = 1e-12);
        assert_relative_eq!(v0[1], eta[1], epsilon = 1e-12);

        // uncontrolled uniquely ergodic chain: ĥ is a singleton
        let hat = hat_h_eval(&field, &m, &x).unwrap();
        assert_eq!(hat.generators().len(), 1);
        assert!(linalg::dist(&hat.generators()[0], &v2) < 1e-14);
    }

    #[test]
    fn blend_kernel_continuity() {
        let p0 = Tensor3::from_nested(&[vec![vec![0.9, 0.1]], vec![vec![0.2, 0.8]]]).unwrap();
        let p1 = Tensor3::from_nested(&[vec![vec![0.5, 0.5]], vec![vec![0.5, 0.5]]]).unwrap();
        let m = MarkovModel::blend(p0, p1, vec![0.1], "blend").unwrap();
        assert!(m.modulus() > 0.0);
        let rep = m.audit_kernel(&[vec![0.0], vec![1.0], vec![5.0], vec![20.0]]);
        assert!(rep.passed(), "{rep:?}");
        // blend stays stochastic at saturating x
        let row = m.kernel_row(0, 0, &[100.0]).unwrap();
        assert_relative_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(row[0], 0.5);
    }
}
