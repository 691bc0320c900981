//! Execution of the stochastic approximation recursion
//! `x_{n+1} = x_n + a(n)[h(x_n, y_n) + M_{n+1}]` with controlled Markov
//! state transitions, plus the step-schedule and noise-moment audits.
//!
//! Runs are deterministic given a seed, replay bit-exactly, and treat
//! divergence as a recorded outcome rather than an error.

use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::convex::{FieldKind, VectorField};
use crate::error::{Error, Result};
use crate::linalg;
use crate::markov::{MarkovModel, StationaryPolicy};
use crate::report::AuditReport;

/// Iterate norm beyond which a run is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// Dense storage limit; longer runs are thinned with the stride recorded.
pub const MAX_DENSE_STEPS: usize = 1_000_000;

// ---------------------------------------------------------------------------
// Step schedules
// ---------------------------------------------------------------------------

/// Decaying step-size sequence with `Σ a(n) = ∞`, `Σ a(n)² < ∞` and
/// `sup a(n) ≤ 1` (values are clamped to 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    /// `a(n) = α / (n + 1 + β)`.
    Harmonic { alpha: f64, beta: f64 },
    /// `a(n) = α / (n + 1)^p` with `p ∈ (0.5, 1]`.
    Power { alpha: f64, p: f64 },
}

impl StepSchedule {
    pub fn harmonic(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0) || !(beta >= 0.0) {
            return Err(Error::Domain(format!(
                "harmonic schedule needs α > 0, β ≥ 0 (got α={alpha}, β={beta})"
            )));
        }
        Ok(StepSchedule::Harmonic { alpha, beta })
    }

    pub fn power(alpha: f64, p: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::Domain(format!("power schedule needs α > 0 (got {alpha})")));
        }
        if !(p > 0.5 && p <= 1.0) {
            return Err(Error::Domain(format!(
                "power schedule exponent must lie in (0.5, 1], got {p}"
            )));
        }
        Ok(StepSchedule::Power { alpha, p })
    }

    /// Bypass the exponent-range validation. For controlled experiments
    /// with schedules outside the square-summable regime (e.g. p = 0.5);
    /// such schedules are expected to fail the noise-convergence checks.
    pub fn power_unchecked(alpha: f64, p: f64) -> Self {
        StepSchedule::Power { alpha, p }
    }

    /// The clamped step value `a(n)`.
    pub fn eval(&self, n: usize) -> f64 {
        let raw = match *self {
            StepSchedule::Harmonic { alpha, beta } => alpha / (n as f64 + 1.0 + beta),
            StepSchedule::Power { alpha, p } => alpha / (n as f64 + 1.0).powf(p),
        };
        raw.min(1.0)
    }

    /// `t(n) = Σ_{i<n} a(i)`, accumulated exactly as the engine does.
    pub fn partial_sum(&self, n: usize) -> f64 {
        let mut t = 0.0;
        for i in 0..n {
            t += self.eval(i);
        }
        t
    }

    /// Whether `Σ a(n)²` converges for this schedule (structural).
    pub fn square_summable(&self) -> bool {
        match *self {
            StepSchedule::Harmonic { .. } => true,
            StepSchedule::Power { p, .. } => p > 0.5,
        }
    }

    /// Step-size audit: positivity, the `sup a(n) ≤ 1` cap, numeric
    /// divergence of `Σ a(n)` past `sum_bound` (within `max_terms`), and a
    /// Cauchy check on `Σ a(n)²` tails.
    pub fn audit(&self, sum_bound: f64, max_terms: usize) -> AuditReport {
        let mut report = AuditReport::new("schedule");
        let mut min_step = f64::INFINITY;
        let mut max_step: f64 = 0.0;
        let probe = 10_000.min(max_terms);
        for n in 0..probe {
            let a = self.eval(n);
            min_step = min_step.min(a);
            max_step = max_step.max(a);
        }
        report.check_flag("a(n) > 0 on probed range", min_step > 0.0, None);
        report.check_bound("sup a(n) ≤ 1", max_step, 1.0, None);

        let mut sum = 0.0;
        let mut reached = None;
        for n in 0..max_terms {
            sum += self.eval(n);
            if sum > sum_bound {
                reached = Some(n);
                break;
            }
        }
        report.push_check(crate::report::CheckItem {
            label: format!("Σ a(n) exceeds {sum_bound} within {max_terms} terms"),
            passed: reached.is_some(),
            observed: Some(sum),
            bound: Some(sum_bound),
            witness: None,
        });

        // Cauchy tail of Σ a(n)²: compare partial sums at N and 2N
        let n_tail = 100_000;
        let mut tail = 0.0;
        for n in n_tail..2 * n_tail {
            let a = self.eval(n);
            tail += a * a;
        }
        report.check_bound("Σ a(n)² tail (Cauchy within 1e-6)", tail, 1e-6, None);
        report
    }
}

// ---------------------------------------------------------------------------
// Noise models
// ---------------------------------------------------------------------------

/// Martingale-difference noise, generated as state-scaled i.i.d.
/// innovations: per-coordinate standard deviation `σ₀·sqrt(1 + ‖x‖²)`.
/// Zero conditional mean holds by construction; the implied conditional
/// second-moment constant is `K = d·σ₀²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    None,
    /// Uniform on a box `[-w, w]^d` with `w = σ₀·sqrt(3(1+‖x‖²))`.
    BoundedUniform { sigma0: f64 },
    Gaussian { sigma0: f64 },
}

impl NoiseModel {
    pub fn sigma0(&self) -> f64 {
        match *self {
            NoiseModel::None => 0.0,
            NoiseModel::BoundedUniform { sigma0 } | NoiseModel::Gaussian { sigma0 } => sigma0,
        }
    }

    /// The constant in `E[‖M_{n+1}‖² | F_n] ≤ K(1 + ‖x_n‖²)`.
    pub fn k_noise(&self, dim: usize) -> f64 {
        let s = self.sigma0();
        dim as f64 * s * s
    }

    /// One zero-mean draw scaled by the current iterate.
    pub fn sample(&self, x: &[f64], rng: &mut impl Rng) -> Vec<f64> {
        let d = x.len();
        match *self {
            NoiseModel::None => vec![0.0; d],
            NoiseModel::Gaussian { sigma0 } => {
                let std = sigma0 * (1.0 + linalg::dot(x, x)).sqrt();
                (0..d)
                    .map(|_| {
                        let g: f64 = rng.sample(StandardNormal);
                        std * g
                    })
                    .collect()
            }
            NoiseModel::BoundedUniform { sigma0 } => {
                let w = sigma0 * (3.0 * (1.0 + linalg::dot(x, x))).sqrt();
                (0..d).map(|_| rng.gen_range(-w..=w)).collect()
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    Completed,
    /// The iterate at `first_bad_index` was non-finite or exceeded
    /// [`DIVERGENCE_NORM`]; the trajectory up to that point is kept.
    Diverged { first_bad_index: usize },
}

/// A recorded run of the recursion: iterates, states, controls, noise
/// increments, steps and clock times, with provenance.
#[derive(Debug, Clone)]
pub struct SATrajectory {
    dim: usize,
    n_states: usize,
    n_controls: usize,
    xs: Vec<Vec<f64>>,
    ys: Vec<usize>,
    zs: Vec<usize>,
    noises: Vec<Vec<f64>>,
    steps: Vec<f64>,
    times: Vec<f64>,
    seed: u64,
    config_hash: String,
    outcome: RunOutcome,
    stride: usize,
}

impl SATrajectory {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_controls(&self) -> usize {
        self.n_controls
    }

    /// Recorded iterates `x_0 … x_K`.
    pub fn xs(&self) -> &[Vec<f64>] {
        &self.xs
    }

    pub fn ys(&self) -> &[usize] {
        &self.ys
    }

    pub fn zs(&self) -> &[usize] {
        &self.zs
    }

    /// Noise increments `M_1 … M_K` (entry `n` is `M_{n+1}`).
    pub fn noises(&self) -> &[Vec<f64>] {
        &self.noises
    }

    /// Step values `a(0) … a(K-1)`.
    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    /// Clock times `t(0) … t(K)` with `t(n+1) = t(n) + a(n)` exactly.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn outcome(&self) -> RunOutcome {
        self.outcome
    }

    pub fn diverged(&self) -> bool {
        matches!(self.outcome, RunOutcome::Diverged { .. })
    }

    /// Thinning stride (1 = every iterate stored).
    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Number of recorded transitions.
    pub fn transitions(&self) -> usize {
        self.steps.len()
    }

    pub fn final_x(&self) -> &[f64] {
        self.xs.last().unwrap()
    }

    pub fn sup_norm(&self) -> f64 {
        self.xs.iter().map(|x| linalg::norm(x)).fold(0.0, f64::max)
    }

    /// Verify the stored-value step identity
    /// `x_{n+1} = x_n + a(n)(h(x_n,y_n) + M_{n+1})` bit-exactly.
    /// Returns the first violating index, if any.
    pub fn verify_step_identity(&self, field: &VectorField) -> Result<Option<usize>> {
        if self.stride != 1 {
            return Err(Error::Domain(
                "step identity requires a dense (stride 1) trajectory".into(),
            ));
        }
        for n in 0..self.transitions() {
            let drift = field.eval(&self.xs[n], self.ys[n])?;
            let expect = sa_step(&self.xs[n], self.steps[n], &drift, &self.noises[n]);
            if expect != self.xs[n + 1] {
                return Ok(Some(n));
            }
        }
        Ok(None)
    }

    /// Test support: swap in an externally constructed path (iterates and
    /// noise increments), e.g. for injected-noise experiments. Lengths
    /// must stay consistent with the recorded structure.
    #[doc(hidden)]
    pub fn replace_path_for_tests(&mut self, xs: Vec<Vec<f64>>, noises: Vec<Vec<f64>>) {
        assert_eq!(xs.len(), self.xs.len());
        assert_eq!(noises.len(), self.noises.len());
        self.xs = xs;
        self.noises = noises;
    }

    /// Trajectory dump: `n,t,a_n,y,z,x_0..x_{d-1},M_0..M_{d-1}`, one row
    /// per recorded step (the iterate at the step start and the noise that
    /// produced the next iterate).
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "n,t,a_n,y,z")?;
        for j in 0..self.dim {
            write!(w, ",x_{j}")?;
        }
        for j in 0..self.dim {
            write!(w, ",M_{j}")?;
        }
        writeln!(w)?;
        for n in 0..self.transitions() {
            write!(
                w,
                "{},{},{},{},{}",
                n * self.stride,
                self.times[n],
                self.steps[n],
                self.ys[n],
                self.zs[n]
            )?;
            for v in &self.xs[n] {
                write!(w, ",{v}")?;
            }
            for v in &self.noises[n] {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// The single-step update, shared by the engine and replay checks so the
/// float operation order is identical.
#[inline]
pub fn sa_step(x: &[f64], a: f64, drift: &[f64], noise: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(drift.iter().zip(noise))
        .map(|(&xi, (&hi, &mi))| xi + a * (hi + mi))
        .collect()
}

fn hash_run_config(
    field: &VectorField,
    model: &MarkovModel,
    policy: &StationaryPolicy,
    schedule: &StepSchedule,
    noise: &NoiseModel,
    x0: &[f64],
    y0: usize,
    n_steps: usize,
    seed: u64,
) -> String {
    let mut hasher = Sha256::new();
    let push_f64 = |h: &mut Sha256, v: f64| h.update(v.to_le_bytes());
    hasher.update((field.dim() as u64).to_le_bytes());
    hasher.update((field.n_states() as u64).to_le_bytes());
    match field.kind() {
        FieldKind::Affine { a, b } => {
            hasher.update(b"affine");
            for m in a {
                for &v in m.data() {
                    push_f64(&mut hasher, v);
                }
            }
            for row in b {
                for &v in row {
                    push_f64(&mut hasher, v);
                }
            }
        }
        FieldKind::Tabulated(_) => {
            hasher.update(b"tabulated");
            push_f64(&mut hasher, field.lipschitz());
            push_f64(&mut hasher, field.bound());
        }
    }
    hasher.update((model.n_states() as u64).to_le_bytes());
    hasher.update((model.n_controls() as u64).to_le_bytes());
    match model.kernel() {
        crate::markov::KernelSpec::Constant(t) => {
            hasher.update(b"constant");
            for y in 0..t.n_states() {
                for z in 0..t.n_controls() {
                    for &v in t.row(y, z) {
                        push_f64(&mut hasher, v);
                    }
                }
            }
        }
        crate::markov::KernelSpec::Blend { p0, p1, weight } => {
            hasher.update(b"blend");
            for t in [p0, p1] {
                for y in 0..t.n_states() {
                    for z in 0..t.n_controls() {
                        for &v in t.row(y, z) {
                            push_f64(&mut hasher, v);
                        }
                    }
                }
            }
            for &v in weight {
                push_f64(&mut hasher, v);
            }
        }
    }
    for &v in policy.probs().data() {
        push_f64(&mut hasher, v);
    }
    match *schedule {
        StepSchedule::Harmonic { alpha, beta } => {
            hasher.update(b"harmonic");
            push_f64(&mut hasher, alpha);
            push_f64(&mut hasher, beta);
        }
        StepSchedule::Power { alpha, p } => {
            hasher.update(b"power");
            push_f64(&mut hasher, alpha);
            push_f64(&mut hasher, p);
        }
    }
    match *noise {
        NoiseModel::None => hasher.update(b"none"),
        NoiseModel::BoundedUniform { sigma0 } => {
            hasher.update(b"uniform");
            push_f64(&mut hasher, sigma0);
        }
        NoiseModel::Gaussian { sigma0 } => {
            hasher.update(b"gaussian");
            push_f64(&mut hasher, sigma0);
        }
    }
    for &v in x0 {
        push_f64(&mut hasher, v);
    }
    hasher.update((y0 as u64).to_le_bytes());
    hasher.update((n_steps as u64).to_le_bytes());
    hasher.update(seed.to_le_bytes());
    hex_digest(&hasher.finalize())
}

fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Execute the recursion for `n_steps` steps.
///
/// Per step, with one owned random stream: draw `z_n ~ policy(y_n)`, the
/// noise `M_{n+1}` given `x_n`, then `y_{n+1} ~ kernel(y_n, z_n, x_n)`.
/// Divergence (non-finite iterate or norm above [`DIVERGENCE_NORM`])
/// terminates the run and is recorded in the outcome, keeping the partial
/// trajectory.
#[allow(clippy::too_many_arguments)]
pub fn run_sa(
    field: &VectorField,
    model: &MarkovModel,
    policy: &StationaryPolicy,
    schedule: &StepSchedule,
    noise: &NoiseModel,
    x0: &[f64],
    y0: usize,
    n_steps: usize,
    seed: u64,
) -> Result<SATrajectory> {
    if n_steps == 0 {
        return Err(Error::Domain("run_sa needs at least one step".into()));
    }
    if x0.len() != field.dim() {
        return Err(Error::DimensionMismatch {
            what: "initial iterate",
            expected: field.dim(),
            got: x0.len(),
        });
    }
    if field.n_states() != model.n_states() {
        return Err(Error::Config(format!(
            "field has {} states, model has {}",
            field.n_states(),
            model.n_states()
        )));
    }
    if y0 >= model.n_states() {
        return Err(Error::UnknownState {
            index: y0,
            n_states: model.n_states(),
        });
    }
    if policy.n_states() != model.n_states() || policy.n_controls() != model.n_controls() {
        return Err(Error::Config("policy shape does not match model".into()));
    }
    if !linalg::all_finite(x0) {
        return Err(Error::Domain("initial iterate has non-finite entries".into()));
    }

    let stride = n_steps.div_ceil(MAX_DENSE_STEPS).max(1);
    let config_hash = hash_run_config(field, model, policy, schedule, noise, x0, y0, n_steps, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let cap = n_steps / stride + 2;
    let mut xs = Vec::with_capacity(cap);
    let mut ys = Vec::with_capacity(cap);
    let mut zs = Vec::with_capacity(cap);
    let mut noises = Vec::with_capacity(cap);
    let mut steps = Vec::with_capacity(cap);
    let mut times = Vec::with_capacity(cap);

    let mut x = x0.to_vec();
    let mut y = y0;
    let mut t = 0.0f64;
    let mut t_last_recorded = 0.0f64;
    xs.push(x.clone());
    ys.push(y);
    times.push(t);

    let mut outcome = RunOutcome::Completed;
    for n in 0..n_steps {
        let a = schedule.eval(n);
        let z = policy.sample_control(y, &mut rng)?;
        let m = noise.sample(&x, &mut rng);
        let drift = field.eval(&x, y)?;
        let x_next = sa_step(&x, a, &drift, &m);
        let y_next = model.sample_step(y, z, &x, &mut rng)?;
        t += a;

        let bad = !linalg::all_finite(&x_next) || linalg::norm(&x_next) > DIVERGENCE_NORM;
        let record = stride == 1 || (n + 1) % stride == 0 || n + 1 == n_steps || bad;
        if record {
            zs.push(z);
            noises.push(m);
            steps.push(t - t_last_recorded);
            xs.push(x_next.clone());
            ys.push(y_next);
            times.push(t);
            t_last_recorded = t;
        }
        if bad {
            outcome = RunOutcome::Diverged {
                first_bad_index: n + 1,
            };
            break;
        }
        x = x_next;
        y = y_next;
    }

    Ok(SATrajectory {
        dim: field.dim(),
        n_states: model.n_states(),
        n_controls: model.n_controls(),
        xs,
        ys,
        zs,
        noises,
        steps,
        times,
        seed,
        config_hash,
        outcome,
        stride,
    })
}

/// Empirical check of the conditional second-moment bound on the noise:
/// windowed means of `r̂_n = ‖M_{n+1}‖²/(1+‖x_n‖²)` must stay below
/// `K_noise·(1 + margin)` with margin 0.2.
pub fn audit_a2(traj: &SATrajectory, noise: &NoiseModel, window: usize) -> AuditReport {
    let mut report = AuditReport::new("noise second moment");
    let k = noise.k_noise(traj.dim());
    let bound = k * 1.2 + 1e-15;
    let window = window.max(1);

    let ratios: Vec<f64> = (0..traj.transitions())
        .map(|n| {
            let m2 = linalg::dot(&traj.noises()[n], &traj.noises()[n]);
            m2 / (1.0 + linalg::dot(&traj.xs()[n], &traj.xs()[n]))
        })
        .collect();
    if ratios.is_empty() {
        report.check_flag("no noise records", false, Some("empty trajectory".into()));
        return report;
    }

    let mut worst = f64::NEG_INFINITY;
    let mut worst_idx = 0usize;
    let mut idx = 0usize;
    let mut n_windows = 0usize;
    while idx < ratios.len() {
        let end = (idx + window).min(ratios.len());
        // skip a trailing fragment unless it is the only window
        if end - idx < window && n_windows > 0 {
            break;
        }
        let mean = ratios[idx..end].iter().sum::<f64>() / (end - idx) as f64;
        if mean > worst {
            worst = mean;
            worst_idx = idx;
        }
        n_windows += 1;
        idx = end;
    }
    report.check_bound(
        "windowed mean of |M|²/(1+|x|²) ≤ K(1+0.2)",
        worst,
        bound,
        Some(format!("window starting at step {worst_idx}: mean {worst:.6e}")),
    );
    report.note(format!(
        "K_noise = {k:.6e}, {n_windows} window(s) of {window} steps"
    ));
    report
}
