//! Sharp boundary exponents and the geometric exponent-improvement iterations.
//!
//! Every quantity here is a closed-form function of the dimension `n`, the
//! singular parameter `k` or the degenerate parameter `q`, and the
//! anisotropy exponents `a_1, ..., a_{n-1}`. The aggregate convexity index
//! `abar = sum 2/a_i` enters all of them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cap used to encode a flat (infinite) anisotropy exponent.
pub const A_MAX: f64 = 1e9;

/// Contributions `2/a_i` below this are treated as exactly zero.
pub const FLAT_CUTOFF: f64 = 1e-8;

/// Tolerance for classifying regime boundaries such as `n - abar - 2 = 0`.
pub const REGIME_TOL: f64 = 1e-12;

/// `2/a` with the flat cap applied.
pub fn flat_reciprocal(a: f64) -> f64 {
    let r = 2.0 / a;
    if r < FLAT_CUTOFF {
        0.0
    } else {
        r
    }
}

/// Aggregate convexity index `sum 2/a_i`.
pub fn abar(a: &[f64]) -> Result<f64> {
    for (i, &ai) in a.iter().enumerate() {
        if ai.is_nan() || ai < 1.0 {
            return Err(Error::InvalidProfile(format!(
                "a[{i}] = {ai} must be at least 1"
            )));
        }
    }
    Ok(a.iter().map(|&ai| flat_reciprocal(ai)).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentContext {
    pub n: usize,
    pub k: Option<f64>,
    pub q: Option<f64>,
    pub a: Vec<f64>,
}

impl ExponentContext {
    pub fn new(n: usize, a: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::OutOfRange(format!("dimension n = {n} must be >= 2")));
        }
        if a.len() != n - 1 {
            return Err(Error::InvalidProfile(format!(
                "expected {} anisotropy exponents, got {}",
                n - 1,
                a.len()
            )));
        }
        abar(&a)?;
        Ok(Self {
            n,
            k: None,
            q: None,
            a,
        })
    }

    /// Context for the singular problem with parameter `k > 0`.
    pub fn singular(n: usize, k: f64, a: Vec<f64>) -> Result<Self> {
        Self::new(n, a)?.with_k(k)
    }

    /// Context for the degenerate problem with parameter `0 <= q < n`.
    pub fn degenerate(n: usize, q: f64, a: Vec<f64>) -> Result<Self> {
        Self::new(n, a)?.with_q(q)
    }

    pub fn with_k(mut self, k: f64) -> Result<Self> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(Error::OutOfRange(format!("k = {k} must be positive")));
        }
        self.k = Some(k);
        Ok(self)
    }

    pub fn with_q(mut self, q: f64) -> Result<Self> {
        if !(q >= 0.0) || q >= self.n as f64 {
            return Err(Error::OutOfRange(format!(
                "q = {q} must lie in [0, n) with n = {}",
                self.n
            )));
        }
        self.q = Some(q);
        Ok(self)
    }

    pub fn abar(&self) -> f64 {
        // validated on construction
        self.a.iter().map(|&ai| flat_reciprocal(ai)).sum()
    }

    pub fn nf(&self) -> f64 {
        self.n as f64
    }

    pub(crate) fn require_k(&self) -> Result<f64> {
        self.k
            .ok_or_else(|| Error::OutOfRange("singular parameter k is not set".into()))
    }

    pub(crate) fn require_q(&self) -> Result<f64> {
        self.q
            .ok_or_else(|| Error::OutOfRange("degenerate parameter q is not set".into()))
    }

    /// The `a_i >= 2` hypothesis of the singular upper bound.
    pub fn check_singular_hypothesis(&self) -> Result<()> {
        match self.a.iter().position(|&ai| ai < 2.0) {
            Some(i) => Err(Error::Hypothesis(format!(
                "a[{i}] = {} but the singular barrier requires all a_i >= 2",
                self.a[i]
            ))),
            None => Ok(()),
        }
    }
}

/// Sharp exponent of the singular problem, `(abar + 2 + k) / (2n + 2k + 2)`.
pub fn theta(ctx: &ExponentContext) -> Result<f64> {
    let k = ctx.require_k()?;
    ctx.check_singular_hypothesis()?;
    let n = ctx.nf();
    Ok((ctx.abar() + 2.0 + k) / (2.0 * n + 2.0 * k + 2.0))
}

/// Fixed point `(abar + 2) / (n - q)` of the degenerate exponent iteration.
pub fn alpha(ctx: &ExponentContext) -> Result<f64> {
    let q = ctx.require_q()?;
    let n = ctx.nf();
    if q >= n {
        return Err(Error::OutOfRange(format!("q = {q} must be < n = {n}")));
    }
    Ok((ctx.abar() + 2.0) / (n - q))
}

/// Starting exponent `(abar + 2)/n` of the upward iteration.
pub fn lambda_start_upward(ctx: &ExponentContext) -> f64 {
    (ctx.abar() + 2.0) / ctx.nf()
}

/// Starting exponent `(q + abar + 2)/n` of the downward iteration.
pub fn lambda_start_downward(ctx: &ExponentContext) -> Result<f64> {
    let q = ctx.require_q()?;
    Ok((q + ctx.abar() + 2.0) / ctx.nf())
}

/// `constant * |Omega|^{2/(n-q)}`, the sup-norm scale of the degenerate problem.
pub fn volume_scale(ctx: &ExponentContext, volume: f64, constant: f64) -> Result<f64> {
    let q = ctx.require_q()?;
    Ok(constant * volume.powf(2.0 / (ctx.nf() - q)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeCase {
    /// q = 0 and n - abar - 2 > 0: the exponent (abar+2)/n is attained.
    SupersolutionStrict,
    /// q = 0 and n - abar - 2 <= 0: any exponent below 1.
    SupersolutionFlat,
    /// 0 < q < n - abar - 2: any exponent below alpha.
    Subcritical,
    /// q >= max(n - abar - 2, 0) with q > 0: any exponent below 1.
    Supercritical,
}

impl RegimeCase {
    pub fn label(self) -> &'static str {
        match self {
            RegimeCase::SupersolutionStrict => "supersolution-strict",
            RegimeCase::SupersolutionFlat => "supersolution-flat",
            RegimeCase::Subcritical => "subcritical",
            RegimeCase::Supercritical => "supercritical",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub case: RegimeCase,
    pub lambda_sup: f64,
    /// `true` when `lambda_sup` itself is admissible, `false` for an open interval.
    pub attained: bool,
    /// `n - abar - 2`
    pub gap: f64,
}

/// Classify which upper-bound regime applies to the degenerate problem.
///
/// Ties within [`REGIME_TOL`] go to the clause with the larger `lambda_sup`.
pub fn upper_exponent_regime(ctx: &ExponentContext) -> Result<RegimeReport> {
    let q = ctx.require_q()?;
    let n = ctx.nf();
    let gap = n - ctx.abar() - 2.0;
    let report = if q == 0.0 {
        if gap > REGIME_TOL {
            RegimeReport {
                case: RegimeCase::SupersolutionStrict,
                lambda_sup: (ctx.abar() + 2.0) / n,
                attained: true,
                gap,
            }
        } else {
            RegimeReport {
                case: RegimeCase::SupersolutionFlat,
                lambda_sup: 1.0,
                attained: false,
                gap,
            }
        }
    } else if q < gap - REGIME_TOL {
        RegimeReport {
            case: RegimeCase::Subcritical,
            lambda_sup: alpha(ctx)?,
            attained: false,
            gap,
        }
    } else {
        RegimeReport {
            case: RegimeCase::Supercritical,
            lambda_sup: 1.0,
            attained: false,
            gap,
        }
    };
    Ok(report)
}

/// Iterates of `lambda_{j+1} = q lambda_j / n + (abar + 2)/n`.
///
/// The sequence is stored in deviation form: `deviations[j] = lambda_j - alpha`
/// is propagated by a single multiplication per step, so the geometric law
/// `deviations[j+1] = (q/n) deviations[j]` holds to one rounding per step even
/// when `lambda_j` and `alpha` agree to all printed digits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSequence {
    pub lambda0: f64,
    pub ratio: f64,
    pub alpha: f64,
    pub values: Vec<f64>,
    pub deviations: Vec<f64>,
}

impl LambdaSequence {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `true` if the sequence increases toward alpha.
    pub fn is_upward(&self) -> bool {
        self.lambda0 < self.alpha
    }
}

pub fn lambda_iterate(ctx: &ExponentContext, lambda0: f64, steps: usize) -> Result<LambdaSequence> {
    let q = ctx.require_q()?;
    if !(lambda0 > 0.0) || !lambda0.is_finite() {
        return Err(Error::OutOfRange(format!("lambda0 = {lambda0} must be positive")));
    }
    let alpha = alpha(ctx)?;
    let ratio = q / ctx.nf();
    let mut deviations = Vec::with_capacity(steps + 1);
    let mut dev = lambda0 - alpha;
    deviations.push(dev);
    for _ in 0..steps {
        dev *= ratio;
        deviations.push(dev);
    }
    let mut values: Vec<f64> = deviations.iter().map(|d| alpha + d).collect();
    values[0] = lambda0;
    Ok(LambdaSequence {
        lambda0,
        ratio,
        alpha,
        values,
        deviations,
    })
}

/// Smallest `j` with `|lambda_j - alpha| <= |target - alpha|`.
///
/// `target` must lie between `lambda0` (inclusive) and `alpha` (exclusive).
pub fn steps_to_reach(ctx: &ExponentContext, lambda0: f64, target: f64) -> Result<usize> {
    let q = ctx.require_q()?;
    let alpha = alpha(ctx)?;
    let dev0 = lambda0 - alpha;
    let dev_t = target - alpha;
    if target == lambda0 {
        return Ok(0);
    }
    let between = dev0 != 0.0 && dev_t != 0.0 && dev0.signum() == dev_t.signum() && dev_t.abs() < dev0.abs();
    if !between {
        return Err(Error::Domain(format!(
            "target {target} is not strictly between lambda0 = {lambda0} and alpha = {alpha}"
        )));
    }
    let ratio = q / ctx.nf();
    if ratio == 0.0 {
        return Ok(1);
    }
    let e0 = dev0.abs();
    let et = dev_t.abs();
    let estimate = ((et / e0).ln() / ratio.ln()).ceil().max(0.0);
    let mut j = estimate as usize;
    // the closed form can land one step off after rounding
    let dev_at = |j: usize| e0 * ratio.powi(j as i32);
    while dev_at(j) > et {
        j += 1;
    }
    while j > 0 && dev_at(j - 1) <= et {
        j -= 1;
    }
    Ok(j)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sing(n: usize, k: f64, a: &[f64]) -> ExponentContext {
        ExponentContext::singular(n, k, a.to_vec()).unwrap()
    }

    fn deg(n: usize, q: f64, a: &[f64]) -> ExponentContext {
        ExponentContext::degenerate(n, q, a.to_vec()).unwrap()
    }

    #[test]
    fn abar_examples() {
        assert_eq!(abar(&[2.0, 2.0]).unwrap(), 2.0);
        assert_eq!(abar(&[2.0]).unwrap(), 1.0);
        assert_eq!(abar(&[A_MAX]).unwrap(), 0.0);
        assert_eq!(abar(&[f64::INFINITY]).unwrap(), 0.0);
        assert!(matches!(abar(&[0.5]), Err(Error::InvalidProfile(_))));
    }

    #[test]
    fn theta_examples() {
        assert_eq!(theta(&sing(2, 1.0, &[2.0])).unwrap(), 0.5);
        assert_eq!(theta(&sing(3, 1.0, &[2.0, 2.0])).unwrap(), 0.5);
        assert_eq!(theta(&sing(2, 1.0, &[A_MAX])).unwrap(), 0.375);
    }

    #[test]
    fn theta_rejects_sharp_profiles() {
        let ctx = sing(2, 1.0, &[1.5]);
        assert!(matches!(theta(&ctx), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn alpha_examples() {
        assert_eq!(alpha(&deg(3, 0.0, &[2.0, 2.0])).unwrap(), 4.0 / 3.0);
        assert_eq!(alpha(&deg(2, 1.0, &[2.0])).unwrap(), 3.0);
        assert_eq!(alpha(&deg(4, 1.0, &[A_MAX; 3])).unwrap(), 2.0 / 3.0);
        assert!(ExponentContext::degenerate(2, 2.0, vec![2.0]).is_err());
    }

    #[test]
    fn regime_examples() {
        let r = upper_exponent_regime(&deg(5, 0.0, &[4.0; 4])).unwrap();
        assert_eq!(r.case, RegimeCase::SupersolutionStrict);
        assert!(r.attained);
        assert!((r.lambda_sup - 0.8).abs() < 1e-15);

        let r = upper_exponent_regime(&deg(2, 0.0, &[2.0])).unwrap();
        assert_eq!(r.case, RegimeCase::SupersolutionFlat);
        assert_eq!(r.lambda_sup, 1.0);
        assert!(!r.attained);

        let r = upper_exponent_regime(&deg(4, 1.0, &[A_MAX; 3])).unwrap();
        assert_eq!(r.case, RegimeCase::Subcritical);
        assert!((r.lambda_sup - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn regime_ties_go_to_weaker_clause() {
        // n - abar - 2 = 0 exactly
        let r = upper_exponent_regime(&deg(3, 0.0, &[2.0, 2.0])).unwrap();
        assert_eq!(r.case, RegimeCase::SupersolutionFlat);
        // q = n - abar - 2 = 1
        let r = upper_exponent_regime(&deg(4, 1.0, &[2.0, 2.0, 2.0])).unwrap();
        assert_eq!(r.case, RegimeCase::Supercritical);
        assert_eq!(r.lambda_sup, 1.0);
    }

    #[test]
    fn lambda_iterate_worked_value() {
        let ctx = deg(4, 1.0, &[A_MAX; 3]);
        let seq = lambda_iterate(&ctx, 0.75, 1).unwrap();
        assert!((seq.values[1] - 11.0 / 16.0).abs() < 1e-15);
        let r = seq.deviations[1] / seq.deviations[0];
        assert!((r - 0.25).abs() < 1e-15);
    }

    #[test]
    fn lambda_iterate_q_zero_is_one_step() {
        let ctx = deg(3, 0.0, &[2.0, 4.0]);
        let seq = lambda_iterate(&ctx, 0.3, 3).unwrap();
        assert_eq!(seq.values[1], alpha(&ctx).unwrap());
        assert_eq!(seq.values[1], (ctx.abar() + 2.0) / 3.0);
    }

    #[test]
    fn lambda_iterate_agrees_with_direct_recurrence() {
        let ctx = deg(3, 2.0, &[2.0, 2.0]);
        let seq = lambda_iterate(&ctx, 2.0, 20).unwrap();
        let mut lam: f64 = 2.0;
        for j in 0..=20 {
            assert!((seq.values[j] - lam).abs() < 1e-13, "j = {j}");
            lam = 2.0 * lam / 3.0 + (ctx.abar() + 2.0) / 3.0;
        }
    }

    /// Unroll the plain recurrence and return the first j reaching the target.
    fn unrolled_steps(ctx: &ExponentContext, lambda0: f64, target: f64) -> usize {
        let a = alpha(ctx).unwrap();
        let n = ctx.nf();
        let q = ctx.q.unwrap();
        let mut lam = lambda0;
        let mut j = 0;
        while (lam - a).abs() > (target - a).abs() {
            lam = q * lam / n + (ctx.abar() + 2.0) / n;
            j += 1;
            assert!(j < 10_000);
        }
        j
    }

    #[test]
    fn steps_to_reach_matches_unrolling() {
        let ctx = deg(4, 1.0, &[A_MAX; 3]);
        assert_eq!(steps_to_reach(&ctx, 0.75, 0.67).unwrap(), 3);
        assert_eq!(unrolled_steps(&ctx, 0.75, 0.67), 3);
        assert_eq!(steps_to_reach(&ctx, 0.75, 0.75).unwrap(), 0);

        let ctx = deg(3, 2.0, &[2.0, 2.0]);
        let lam0 = lambda_start_downward(&ctx).unwrap();
        assert_eq!(lam0, 2.0);
        for target in [2.5, 3.0, 3.9, 3.99, 3.9999] {
            assert_eq!(
                steps_to_reach(&ctx, lam0, target).unwrap(),
                unrolled_steps(&ctx, lam0, target),
                "target {target}"
            );
        }
        assert_eq!(steps_to_reach(&ctx, lam0, 3.9).unwrap(), 8);
    }

    #[test]
    fn steps_to_reach_domain_errors() {
        let ctx = deg(4, 1.0, &[A_MAX; 3]);
        assert!(matches!(steps_to_reach(&ctx, 0.75, 0.8), Err(Error::Domain(_))));
        assert!(matches!(steps_to_reach(&ctx, 0.75, 0.6), Err(Error::Domain(_))));
        assert!(matches!(steps_to_reach(&ctx, 0.75, 2.0 / 3.0), Err(Error::Domain(_))));
        let ctx = deg(3, 0.0, &[2.0, 2.0]);
        assert_eq!(steps_to_reach(&ctx, 1.0, 1.2).unwrap(), 1);
    }
}
