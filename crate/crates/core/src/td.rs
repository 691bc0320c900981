//! The temporal-difference application: affine drivers
//! `h(x,y) = A(y)x + b(y)`, the continuity and scaling-limit checkers for
//! them, Hurwitz spectrum checks, Lyapunov candidates for the limiting
//! dynamics, and the equilibrium of the uncontrolled constant-matrix case.

use rand::Rng;

use crate::convex::VectorField;
use crate::error::{Error, Result};
use crate::inclusion::{lyapunov_decrease_audit, LyapunovAuditConfig, ScalarField};
use crate::linalg::{self, Mat};
use crate::markov::{invariant_measure, MarkovModel, StationaryPolicy};
use crate::report::{AuditReport, CheckItem};

/// Margin on the spectral abscissa below zero for a Hurwitz verdict.
pub const HURWITZ_TOL: f64 = 1e-8;

/// Affine driver family with its derived constants
/// `L = max_y opnorm(A(y))` and `M_b = max_y ‖b(y)‖`.
#[derive(Debug, Clone)]
pub struct AffineFamily {
    field: VectorField,
    l: f64,
    m_b: f64,
}

impl AffineFamily {
    pub fn new(a: Vec<Mat>, b: Vec<Vec<f64>>) -> Result<Self> {
        let l = a.iter().map(linalg::operator_norm).fold(0.0f64, f64::max);
        let m_b = b.iter().map(|v| linalg::norm(v)).fold(0.0f64, f64::max);
        let field = VectorField::affine(a, b)?;
        Ok(AffineFamily { field, l, m_b })
    }

    /// Constant matrix case `A(y) ≡ M`, one `b` entry per state.
    pub fn constant(m: Mat, b: Vec<Vec<f64>>) -> Result<Self> {
        let a = vec![m; b.len()];
        AffineFamily::new(a, b)
    }

    pub fn field(&self) -> &VectorField {
        &self.field
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    pub fn n_states(&self) -> usize {
        self.field.n_states()
    }

    pub fn lipschitz(&self) -> f64 {
        self.l
    }

    pub fn b_bound(&self) -> f64 {
        self.m_b
    }

    pub fn tables(&self) -> (&[Mat], &[Vec<f64>]) {
        self.field.affine_tables().expect("affine by construction")
    }

    /// The common matrix if `A(y)` is constant over states.
    pub fn constant_matrix(&self) -> Option<&Mat> {
        let (a, _) = self.tables();
        let first = &a[0];
        if a.iter().all(|m| m == first) {
            Some(first)
        } else {
            None
        }
    }
}

/// Lyapunov candidate for the limiting inclusion: a norm or quadratic
/// field, its zero set `Λ`, and the region margin `ε`.
#[derive(Debug, Clone)]
pub struct LyapunovCandidate {
    v: ScalarField,
    lambda: Vec<Vec<f64>>,
    eps_region: f64,
}

impl LyapunovCandidate {
    pub fn norm(lambda: Vec<Vec<f64>>, eps_region: f64) -> Result<Self> {
        LyapunovCandidate::build(ScalarField::Norm, lambda, eps_region)
    }

    pub fn quadratic(p: Mat, lambda: Vec<Vec<f64>>, eps_region: f64) -> Result<Self> {
        if !p.is_square() {
            return Err(Error::Domain("quadratic candidate: P must be square".into()));
        }
        let sym = p.add(&p.transpose()).scale(0.5);
        let eigs = linalg::eigenvalues(&sym)?;
        let lam_min = eigs.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
        if lam_min <= 0.0 {
            return Err(Error::Domain(format!(
                "quadratic candidate: P not positive definite (min eigenvalue {lam_min:.3e})"
            )));
        }
        LyapunovCandidate::build(ScalarField::Quadratic(p), lambda, eps_region)
    }

    fn build(v: ScalarField, lambda: Vec<Vec<f64>>, eps_region: f64) -> Result<Self> {
        if lambda.is_empty() {
            return Err(Error::Domain("Lyapunov candidate: empty zero set".into()));
        }
        if !(eps_region > 0.0) {
            return Err(Error::Domain(format!("ε region must be positive, got {eps_region}")));
        }
        // V must vanish on Λ (sampled exactness)
        for p in &lambda {
            let vp = v.eval(p);
            if vp.abs() > 1e-9 {
                return Err(Error::Domain(format!(
                    "candidate does not vanish on its zero set: V({p:?}) = {vp:.3e}"
                )));
            }
        }
        Ok(LyapunovCandidate {
            v,
            lambda,
            eps_region,
        })
    }

    pub fn scalar_field(&self) -> &ScalarField {
        &self.v
    }

    pub fn lambda(&self) -> &[Vec<f64>] {
        &self.lambda
    }

    pub fn eps_region(&self) -> f64 {
        self.eps_region
    }
}

// ---------------------------------------------------------------------------
// Checkers
// ---------------------------------------------------------------------------

/// Continuity of the tables: automatic for finite state sets, so the audit
/// records completeness, entry finiteness, and the derived constants.
/// Mismatched table shapes are configuration errors.
pub fn check_t1(a: &[Mat], b: &[Vec<f64>]) -> Result<AuditReport> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::Config(format!(
            "incomplete tables: {} A-matrices vs {} b-vectors",
            a.len(),
            b.len()
        )));
    }
    let dim = a[0].rows();
    for (y, m) in a.iter().enumerate() {
        if !m.is_square() || m.rows() != dim {
            return Err(Error::Config(format!("A({y}) is not {dim}x{dim}")));
        }
    }
    for (y, v) in b.iter().enumerate() {
        if v.len() != dim {
            return Err(Error::Config(format!("b({y}) has length {}, expected {dim}", v.len())));
        }
    }
    let mut report = AuditReport::new("affine tables continuous");
    let finite = a.iter().all(Mat::all_finite) && b.iter().all(|v| linalg::all_finite(v));
    report.check_flag(
        "tables complete and finite",
        finite,
        Some("a table entry is not finite".into()),
    );
    if finite {
        let l = a.iter().map(linalg::operator_norm).fold(0.0f64, f64::max);
        let m_b = b.iter().map(|v| linalg::norm(v)).fold(0.0f64, f64::max);
        report.push_check(CheckItem {
            label: "L = max opnorm(A(y))".into(),
            passed: true,
            observed: Some(l),
            bound: None,
            witness: None,
        });
        report.push_check(CheckItem {
            label: "M_b = max |b(y)|".into(),
            passed: true,
            observed: Some(m_b),
            bound: None,
            witness: None,
        });
    }
    report.note("continuity over a finite state set is automatic");
    Ok(report)
}

/// The scaling-limit condition for affine families: structural, since
/// `h_c(x,y) − A(y)x = b(y)/c → 0` uniformly over the finite state set.
/// A numeric spot check confirms the `1/c` rate within a factor of 2.
pub fn check_s1_affine(fam: &AffineFamily) -> AuditReport {
    let mut report = AuditReport::new("scaling limit");
    let c_min = crate::convex::DEFAULT_C_MIN;
    report.check_flag("b(y)/c vanishes uniformly (b bounded on finite S)", true, None);
    report.note(format!(
        "residual bound max|b(y)|/c_min = {:.3e}",
        fam.b_bound() / c_min
    ));

    let (a, b) = fam.tables();
    // probe at a fixed x; residual must track |b(y)|/c within factor 2
    let x: Vec<f64> = (0..fam.dim()).map(|i| 0.5 + 0.25 * i as f64).collect();
    let mut worst: f64 = 0.0;
    let mut witness = None;
    for y in 0..fam.n_states() {
        let b_norm = linalg::norm(&b[y]);
        if b_norm == 0.0 {
            continue; // residual is exactly 0 at every c
        }
        for &c in &crate::convex::default_c_schedule() {
            let hc = fam.field().scale_eval(c, &x, y).unwrap();
            let residual = linalg::dist(&hc, &a[y].matvec(&x));
            let expected = b_norm / c;
            let ratio = residual / expected;
            let off = (ratio - 1.0).abs();
            if off > worst {
                worst = off;
                witness = Some(format!(
                    "y = {y}, c = {c}: residual {residual:.3e} vs |b|/c = {expected:.3e}"
                ));
            }
        }
    }
    report.check_bound("residual rate 1/c within factor 2", worst, 1.0, witness);
    report
}

/// Eigenvalue check: pass iff the spectral abscissa is below
/// `-`[`HURWITZ_TOL`].
pub fn hurwitz_check(m: &Mat) -> Result<AuditReport> {
    if !m.is_square() {
        return Err(Error::Domain("hurwitz_check: matrix must be square".into()));
    }
    let eigs = linalg::eigenvalues(m)?;
    let abscissa = eigs.iter().fold(f64::NEG_INFINITY, |acc, e| acc.max(e.0));
    let mut report = AuditReport::new("hurwitz");
    report.check_bound(
        "spectral abscissa < -tol",
        abscissa,
        -HURWITZ_TOL,
        Some(format!("eigenvalues: {eigs:?}")),
    );
    report.note(format!("spectral abscissa = {abscissa:.9}"));
    Ok(report)
}

/// Consolidated Lyapunov-condition audit for the family's limiting
/// inclusion `ẋ ∈ H(x)`:
///
/// - (ii) the candidate vanishes on `Λ` and is positive away from it
///   (sampled);
/// - (i) forward invariance and (iii) strict decrease on the region
///   `B_{1+ε}`, delegated to [`lyapunov_decrease_audit`].
pub fn build_t2_audit(
    fam: &AffineFamily,
    cand: &LyapunovCandidate,
    dt: f64,
    samples: usize,
    rng: &mut impl Rng,
    cfg: &LyapunovAuditConfig,
) -> Result<AuditReport> {
    let mut report = AuditReport::new("lyapunov conditions");

    // (ii) zero-set identification, sampled
    let v = cand.scalar_field();
    let mut zero_ok = true;
    let mut witness = None;
    for p in cand.lambda() {
        if v.eval(p).abs() > 1e-9 {
            zero_ok = false;
            witness = Some(format!("V({p:?}) = {:.3e} on Λ", v.eval(p)));
        }
    }
    let mut positive_ok = true;
    let dim = fam.dim();
    for k in 0..64 {
        // deterministic ring samples away from Λ
        let mut x = vec![0.0; dim];
        let radius = 0.2 + 0.8 * (k as f64 / 64.0) * (1.0 + cand.eps_region());
        x[k % dim] = radius * if k % 2 == 0 { 1.0 } else { -1.0 };
        if crate::inclusion::distance_to_points(&x, cand.lambda()) > cfg.exclusion_tol
            && v.eval(&x) <= 0.0
        {
            positive_ok = false;
            witness = Some(format!("V({x:?}) = {:.3e} ≤ 0 off Λ", v.eval(&x)));
            break;
        }
    }
    report.check_flag("V vanishes exactly on Λ (T2 ii)", zero_ok && positive_ok, witness);

    // (i) + (iii) on the region B_{1+ε}
    let rhs = |x: &[f64]| fam.field().big_h_eval(x);
    let inner = lyapunov_decrease_audit(
        &rhs,
        v,
        cand.lambda(),
        1.0 + cand.eps_region(),
        samples,
        dt,
        rng,
        cfg,
    )?;
    for check in inner.checks {
        report.push_check(check);
    }
    for note in inner.notes {
        report.note(note);
    }
    if !report.passed() && matches!(v, ScalarField::Norm) {
        report.note(
            "the norm candidate fails for non-normal dynamics; try the quadratic candidate \
             from the Lyapunov equation",
        );
    }
    Ok(report)
}

/// Equilibrium `x* = −M⁻¹·b̄` of the uncontrolled constant-matrix case,
/// with `b̄ = Σ_y η(y) b(y)` under the chain's invariant measure.
pub fn td_equilibrium(m: &Mat, model: &MarkovModel, fam: &AffineFamily) -> Result<Vec<f64>> {
    if !model.is_uncontrolled() {
        return Err(Error::Domain(
            "td_equilibrium needs an uncontrolled model; for controlled models evaluate the \
             limiting set-valued map instead"
                .into(),
        ));
    }
    match fam.constant_matrix() {
        Some(a) if a == m => {}
        _ => {
            return Err(Error::Domain(
                "td_equilibrium needs the family's A(y) constant and equal to M".into(),
            ))
        }
    }
    let hz = hurwitz_check(m)?;
    if !hz.passed() {
        return Err(Error::Domain(format!(
            "matrix is not Hurwitz: {}",
            hz.first_failure()
                .and_then(|c| c.witness.clone())
                .unwrap_or_default()
        )));
    }
    let p = model.policy_kernel(&StationaryPolicy::trivial(model.n_states()), &vec![0.0; fam.dim()])?;
    let eta = invariant_measure(&p)?;
    let (_, b) = fam.tables();
    let mut b_bar = vec![0.0; fam.dim()];
    for (y, w) in eta.iter().enumerate() {
        b_bar = linalg::axpy(&b_bar, *w, &b[y]);
    }
    let x_star = linalg::solve_linear(m, &linalg::scale(&b_bar, -1.0))?;
    let residual = linalg::norm(&linalg::add(&m.matvec(&x_star), &b_bar));
    if residual > 1e-9 {
        return Err(Error::Numerical(format!(
            "equilibrium residual {residual:.3e} exceeds 1e-9"
        )));
    }
    Ok(x_star)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::Tensor3;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(99)
    }

    #[test]
    fn t1_checks() {
        let a = vec![Mat::diag(&[-1.0, -2.0]), Mat::identity(2)];
        let b = vec![vec![1.0, 0.0], vec![0.0, 2.0]];
        let rep = check_t1(&a, &b).unwrap();
        assert!(rep.passed());
        // derived constants recorded
        let l = rep.check("L = max opnorm(A(y))").unwrap().observed.unwrap();
        assert_relative_eq!(l, 2.0, epsilon = 1e-6);

        // non-finite entry → fail
        let bad = vec![Mat::from_rows(&[vec![f64::NAN, 0.0], vec![0.0, 1.0]]).unwrap(), Mat::identity(2)];
        let rep = check_t1(&bad, &b).unwrap();
        assert!(!rep.passed());

        // incomplete table → configuration error
        assert!(matches!(check_t1(&a, &b[..1].to_vec()), Err(Error::Config(_))));
    }

    #[test]
    fn t1_l_matches_independent_power_iteration() {
        let a = vec![Mat::from_rows(&[vec![0.3, -1.2], vec![0.7, 0.4]]).unwrap()];
        let b = vec![vec![0.0, 0.0]];
        let rep = check_t1(&a, &b).unwrap();
        let l = rep.check("L = max opnorm(A(y))").unwrap().observed.unwrap();
        // independent oracle: power iteration on AᵀA with a different start
        let ata = a[0].transpose().matmul(&a[0]);
        let mut v = vec![0.6, 0.8];
        let mut lam = 0.0;
        for _ in 0..500 {
            let w = ata.matvec(&v);
            lam = linalg::dot(&v, &w);
            let n = linalg::norm(&w);
            v = linalg::scale(&w, 1.0 / n);
        }
        assert_relative_eq!(l, lam.sqrt(), epsilon = 1e-6);
    }

    #[test]
    fn s1_affine_checks() {
        let fam = AffineFamily::new(
            vec![Mat::identity(2), Mat::diag(&[-1.0, -0.5])],
            vec![vec![3.0, 4.0], vec![0.0, 1.0]],
        )
        .unwrap();
        let rep = check_s1_affine(&fam);
        assert!(rep.passed(), "{rep:?}");

        // b ≡ 0: residual exactly zero at every c
        let fam0 = AffineFamily::new(vec![Mat::identity(1)], vec![vec![0.0]]).unwrap();
        let rep0 = check_s1_affine(&fam0);
        assert!(rep0.passed());

        // |b| = 5 at c = 1e3: residual 5e-3 exactly (within factor 2)
        let fam5 = AffineFamily::new(vec![Mat::identity(2)], vec![vec![3.0, 4.0]]).unwrap();
        let x = [0.7, -0.2];
        let hc = fam5.field().scale_eval(1e3, &x, 0).unwrap();
        let residual = linalg::dist(&hc, &x);
        assert!(residual / 5e-3 < 2.0 && residual / 5e-3 > 0.5, "residual {residual}");
    }

    #[test]
    fn hurwitz_examples() {
        let rep = hurwitz_check(&Mat::diag(&[-1.0, -1.0])).unwrap();
        assert!(rep.passed());
        assert_relative_eq!(rep.checks[0].observed.unwrap(), -1.0, epsilon = 1e-9);

        let skew = Mat::from_rows(&[vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        let rep = hurwitz_check(&skew).unwrap();
        assert!(!rep.passed());
        assert_relative_eq!(rep.checks[0].observed.unwrap(), 0.0, epsilon = 1e-10);

        let tri = Mat::from_rows(&[vec![-1.0, 4.0], vec![0.0, -1.0]]).unwrap();
        let rep = hurwitz_check(&tri).unwrap();
        assert!(rep.passed());
        assert_relative_eq!(rep.checks[0].observed.unwrap(), -1.0, epsilon = 1e-9);
    }

    #[test]
    fn t2_audit_norm_candidate_on_negative_identity() {
        let fam = AffineFamily::constant(
            Mat::diag(&[-1.0, -1.0]),
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
        )
        .unwrap();
        let cand = LyapunovCandidate::norm(vec![vec![0.0, 0.0]], 1.0).unwrap();
        let rep = build_t2_audit(
            &fam,
            &cand,
            1e-2,
            16,
            &mut rng(),
            &LyapunovAuditConfig::default(),
        )
        .unwrap();
        assert!(rep.passed(), "{rep:?}");
    }

    #[test]
    fn t2_audit_quadratic_candidate_for_nonnormal_hurwitz() {
        let m = Mat::from_rows(&[vec![-1.0, 4.0], vec![0.0, -1.0]]).unwrap();
        let p = linalg::solve_lyapunov(&m).unwrap();
        // independent residual oracle
        let res = m.transpose().matmul(&p).add(&p.matmul(&m)).add(&Mat::identity(2));
        assert!(res.max_abs() <= 1e-9);
        let fam = AffineFamily::constant(m, vec![vec![0.0, 0.0]]).unwrap();
        let cand = LyapunovCandidate::quadratic(p, vec![vec![0.0, 0.0]], 1.0).unwrap();
        let rep = build_t2_audit(
            &fam,
            &cand,
            1e-3,
            16,
            &mut rng(),
            &LyapunovAuditConfig::default(),
        )
        .unwrap();
        assert!(rep.passed(), "{rep:?}");
    }

    #[test]
    fn t2_audit_norm_candidate_fails_for_nonnormal_hurwitz() {
        // xᵀMx = 1 > 0 at x = (1,1)/√2: the norm grows initially
        let m = Mat::from_rows(&[vec![-1.0, 4.0], vec![0.0, -1.0]]).unwrap();
        let x = [std::f64::consts::FRAC_1_SQRT_2; 2];
        let quad = linalg::dot(&x, &m.matvec(&x));
        assert_relative_eq!(quad, 1.0, epsilon = 1e-12);

        let fam = AffineFamily::constant(m, vec![vec![0.0, 0.0]]).unwrap();
        let cand = LyapunovCandidate::norm(vec![vec![0.0, 0.0]], 1.0).unwrap();
        let rep = build_t2_audit(
            &fam,
            &cand,
            1e-2,
            64,
            &mut rng(),
            &LyapunovAuditConfig::default(),
        )
        .unwrap();
        assert!(!rep.passed());
        let fail = rep.first_failure().unwrap();
        assert!(fail.witness.is_some(), "{rep:?}");
        assert!(rep
            .notes
            .iter()
            .any(|n| n.contains("quadratic candidate")));
    }

    #[test]
    fn equilibrium_examples() {
        let chain = Tensor3::from_nested(&[vec![vec![0.9, 0.1]], vec![vec![0.2, 0.8]]]).unwrap();
        let model = MarkovModel::constant(chain, "two");

        // M = -I, b constant → x* = b0
        let m = Mat::diag(&[-1.0, -1.0]);
        let fam = AffineFamily::constant(m.clone(), vec![vec![0.7, -0.2], vec![0.7, -0.2]]).unwrap();
        let x = td_equilibrium(&m, &model, &fam).unwrap();
        assert_relative_eq!(x[0], 0.7, epsilon = 1e-12);
        assert_relative_eq!(x[1], -0.2, epsilon = 1e-12);

        // M = diag(-1, -2) with b̄ = (2, 4) → x* = (2, 2)
        let m2 = Mat::diag(&[-1.0, -2.0]);
        let fam2 = AffineFamily::constant(m2.clone(), vec![vec![2.0, 4.0], vec![2.0, 4.0]]).unwrap();
        let x2 = td_equilibrium(&m2, &model, &fam2).unwrap();
        assert_relative_eq!(x2[0], 2.0, epsilon = 1e-10);
        assert_relative_eq!(x2[1], 2.0, epsilon = 1e-10);

        // b ≡ 0 → x* = 0
        let fam3 = AffineFamily::constant(m2.clone(), vec![vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let x3 = td_equilibrium(&m2, &model, &fam3).unwrap();
        assert_relative_eq!(linalg::norm(&x3), 0.0);

        // controlled model → domain error
        let controlled = Tensor3::from_nested(&[
            vec![vec![0.9, 0.1], vec![0.5, 0.5]],
            vec![vec![0.2, 0.8], vec![0.5, 0.5]],
        ])
        .unwrap();
        let cm = MarkovModel::constant(controlled, "controlled");
        assert!(matches!(
            td_equilibrium(&m2, &cm, &fam2),
            Err(Error::Domain(_))
        ));
    }
}
