//! The Chinchilla loss surface `L(N, D) = E + A / N^alpha + B / D^beta`,
//! its compute-constrained optimum and the closed-form allocation laws.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// FLOPs per parameter per token.
pub const FLOPS_PER_PARAM_TOKEN: f64 = 6.0;

/// Default bisection bracket for [`LossSurface::invert_optimal_loss`], in log10 FLOPs.
pub const INVERT_BRACKET_LOG10: (f64, f64) = (10.0, 35.0);

/// Five-parameter Chinchilla loss surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSurface {
    /// Irreducible loss (nats).
    #[serde(rename = "E")]
    pub e: f64,
    /// Parameter-term coefficient.
    #[serde(rename = "A")]
    pub a: f64,
    /// Data-term coefficient.
    #[serde(rename = "B")]
    pub b: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Power laws `N* = 10^a0 * C^a` and `D* = 10^b0 * C^b` (log10 intercepts).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocationLaw {
    pub a: f64,
    pub b: f64,
    pub a0: f64,
    pub b0: f64,
}

/// A point on the compute constraint `C = 6 N D`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub c: f64,
    pub n: f64,
    pub d: f64,
}

impl Allocation {
    /// Allocation at budget `c` with `d` tokens; parameters follow from the constraint.
    pub fn from_tokens(c: f64, d: f64) -> Self {
        Allocation { c, n: c / (FLOPS_PER_PARAM_TOKEN * d), d }
    }

    pub fn from_params(c: f64, n: f64) -> Self {
        Allocation { c, n, d: c / (FLOPS_PER_PARAM_TOKEN * n) }
    }
}

impl AllocationLaw {
    /// Optimal parameter count predicted at budget `c`.
    pub fn n_opt(&self, c: f64) -> f64 {
        10f64.powf(self.a0 + self.a * c.log10())
    }

    /// Optimal token count predicted at budget `c`.
    pub fn d_opt(&self, c: f64) -> f64 {
        10f64.powf(self.b0 + self.b * c.log10())
    }
}

impl LossSurface {
    pub const fn new(e: f64, a: f64, b: f64, alpha: f64, beta: f64) -> Self {
        LossSurface { e, a, b, alpha, beta }
    }

    /// `alpha = beta = 0.31`, `A = B = 400`: compute splits evenly.
    pub const SYMMETRIC: LossSurface = LossSurface::new(1.69, 400.0, 400.0, 0.31, 0.31);
    /// Published Chinchilla exponents with coefficients `A = 406.4`, `B = 410.7`.
    pub const CHINCHILLA: LossSurface = LossSurface::new(1.69, 406.4, 410.7, 0.34, 0.28);
    /// High-imbalance surface, `alpha / beta = 3`.
    pub const ASYMMETRIC: LossSurface = LossSurface::new(1.69, 406.4, 410.7, 0.465, 0.155);

    /// Names accepted by [`LossSurface::builtin`].
    pub const BUILTIN_NAMES: [&'static str; 3] = ["symmetric", "chinchilla", "asymmetric"];

    pub fn builtin(name: &str) -> Option<LossSurface> {
        match name.to_ascii_lowercase().as_str() {
            "symmetric" => Some(Self::SYMMETRIC),
            "chinchilla" => Some(Self::CHINCHILLA),
            "asymmetric" | "high_imbalance" => Some(Self::ASYMMETRIC),
            _ => None,
        }
    }

    /// Checks finiteness and sign constraints.
    pub fn validate(&self) -> Result<()> {
        let fields = [self.e, self.a, self.b, self.alpha, self.beta];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("surface parameters must be finite".into()));
        }
        if self.e < 0.0 || self.a < 0.0 || self.b < 0.0 {
            return Err(Error::Domain("E, A and B must be non-negative".into()));
        }
        if self.alpha <= 0.0 || self.beta <= 0.0 {
            return Err(Error::Domain("alpha and beta must be positive".into()));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.e, self.a, self.b, self.alpha, self.beta]
    }

    pub fn from_array(p: [f64; 5]) -> Self {
        LossSurface::new(p[0], p[1], p[2], p[3], p[4])
    }

    /// Loss at `n` parameters and `d` tokens. Both must be positive.
    pub fn eval_loss(&self, n: f64, d: f64) -> Result<f64> {
        if !(n > 0.0) || !(d > 0.0) {
            return Err(Error::Domain(format!("N and D must be positive (got N={n}, D={d})")));
        }
        Ok(self.loss_unchecked(n, d))
    }

    #[inline]
    pub(crate) fn loss_unchecked(&self, n: f64, d: f64) -> f64 {
        self.e + self.a * n.powf(-self.alpha) + self.b * d.powf(-self.beta)
    }

    /// Exponents `a = beta / (alpha + beta)` and `b = alpha / (alpha + beta)`.
    pub fn exponents(&self) -> (f64, f64) {
        let s = self.alpha + self.beta;
        (self.beta / s, self.alpha / s)
    }

    /// Closed-form compute-optimal allocation law.
    pub fn allocation_law(&self) -> Result<AllocationLaw> {
        self.validate()?;
        if self.a == 0.0 || self.b == 0.0 {
            return Err(Error::AllocationUndefined("A and B must both be positive".into()));
        }
        let s = self.alpha + self.beta;
        let (a, b) = self.exponents();
        // N*(C) = G (C/6)^a, D*(C) = G^-1 (C/6)^b
        let log_g = ((self.alpha * self.a).ln() - (self.beta * self.b).ln()) / s / std::f64::consts::LN_10;
        let log6 = FLOPS_PER_PARAM_TOKEN.log10();
        Ok(AllocationLaw { a, b, a0: log_g - a * log6, b0: -log_g - b * log6 })
    }

    /// Compute-optimal allocation and the loss it attains at budget `c`.
    pub fn optimal_point(&self, c: f64) -> Result<(Allocation, f64)> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::Domain(format!("compute budget must be positive (got {c})")));
        }
        let law = self.allocation_law()?;
        let d = law.d_opt(c);
        let alloc = Allocation::from_tokens(c, d);
        Ok((alloc, self.loss_unchecked(alloc.n, alloc.d)))
    }

    /// Loss under optimal allocation at budget `c`.
    pub fn optimal_loss(&self, c: f64) -> Result<f64> {
        self.optimal_point(c).map(|(_, l)| l)
    }

    /// Smallest budget whose optimal loss equals `target_loss`, found by
    /// bisection on `log10 C`. The bracket starts at
    /// [`INVERT_BRACKET_LOG10`] and is widened when needed.
    pub fn invert_optimal_loss(&self, target_loss: f64) -> Result<f64> {
        self.allocation_law()?;
        if !target_loss.is_finite() || target_loss <= self.e {
            return Err(Error::UnreachableLoss { target: target_loss, floor: self.e });
        }
        let f = |lc: f64| self.optimal_loss(10f64.powf(lc)).map(|l| l - target_loss);
        let (mut lo, mut hi) = INVERT_BRACKET_LOG10;
        let mut widen = 0;
        while f(lo)? < 0.0 {
            lo -= 10.0;
            widen += 1;
            if widen > 30 || lo < -300.0 {
                return Err(Error::Bracket(format!("loss {target_loss} exceeds L_opt over the bracket")));
            }
        }
        widen = 0;
        while f(hi)? > 0.0 {
            hi += 10.0;
            widen += 1;
            if widen > 30 || hi > 300.0 {
                return Err(Error::Bracket(format!("loss {target_loss} not reached below 1e{hi} FLOPs")));
            }
        }
        // L_opt is strictly decreasing in C: f(lo) >= 0 >= f(hi).
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if f(mid)? > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (flo, fhi) = (f(lo)?.abs(), f(hi)?.abs());
        let best = if flo <= fhi { lo } else { hi };
        let c_eq = 10f64.powf(best);
        let resid = f(best)?.abs();
        if resid > 1e-9 * target_loss {
            return Err(Error::Bracket(format!("bisection stalled with residual {resid:e}")));
        }
        Ok(c_eq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn eval_unit_inputs() {
        assert_relative_eq!(LossSurface::SYMMETRIC.eval_loss(1.0, 1.0).unwrap(), 801.69, epsilon = 1e-12);
    }

    #[test]
    fn eval_asymptote() {
        let l = LossSurface::SYMMETRIC.eval_loss(1e30, 1e30).unwrap();
        assert!((l - 1.69).abs() < 1e-6);
    }

    #[test]
    fn eval_chinchilla_reference_point() {
        // extended-precision evaluation (40 digits): 2.576150747677017094...
        let l = LossSurface::CHINCHILLA.eval_loss(1e9, 2.0528e10).unwrap();
        assert_relative_eq!(l, 2.576_150_747_677_017, max_relative = 1e-14);
    }

    #[test]
    fn eval_rejects_non_positive() {
        assert!(LossSurface::SYMMETRIC.eval_loss(0.0, 1.0).is_err());
        assert!(LossSurface::SYMMETRIC.eval_loss(1.0, -3.0).is_err());
    }

    #[test]
    fn builtin_intercepts() {
        let law = LossSurface::SYMMETRIC.allocation_law().unwrap();
        assert_relative_eq!(law.b, 0.5);
        assert!((law.b0 - -0.389076).abs() < 1e-6);
        assert_relative_eq!(law.b0, -(6f64.log10()) / 2.0, epsilon = 1e-15);

        let law = LossSurface::CHINCHILLA.allocation_law().unwrap();
        assert!((law.b - 0.548387).abs() < 1e-6);
        assert!((law.b0 - -0.555357).abs() < 1e-4);

        let law = LossSurface::ASYMMETRIC.allocation_law().unwrap();
        assert!((law.b - 0.75).abs() < 1e-12);
        assert!((law.b0 - -1.345791).abs() < 1e-4);
    }

    #[test]
    fn degenerate_allocation() {
        let s = LossSurface::new(1.0, 0.0, 1.0, 0.3, 0.3);
        assert!(matches!(s.allocation_law(), Err(Error::AllocationUndefined(_))));
    }

    #[test]
    fn symmetric_optimum() {
        let (alloc, l) = LossSurface::SYMMETRIC.optimal_point(6e18).unwrap();
        assert_relative_eq!(alloc.n, 1e9, max_relative = 1e-12);
        assert_relative_eq!(alloc.d, 1e9, max_relative = 1e-12);
        assert_relative_eq!(l, 1.69 + 800.0 * 1e9f64.powf(-0.31), max_relative = 1e-13);
        // closed form 1.69 + 800e-9^0.31 = 2.98744807788714
        assert!((l - 2.987448077887).abs() < 1e-11);
    }

    #[test]
    fn optimum_beats_dense_scan() {
        // oracle: dense 1-D scan over log10 N at fixed C
        for s in [LossSurface::SYMMETRIC, LossSurface::CHINCHILLA, LossSurface::ASYMMETRIC] {
            let c = 6e18;
            let (_, l_opt) = s.optimal_point(c).unwrap();
            let mut best = f64::INFINITY;
            for i in 0..=200_000 {
                let log_n = 5.0 + 10.0 * i as f64 / 200_000.0;
                let n = 10f64.powf(log_n);
                best = best.min(s.eval_loss(n, c / (6.0 * n)).unwrap());
            }
            assert!(l_opt <= best + 1e-12);
            assert!(best - l_opt < 1e-9);
        }
    }

    #[test]
    fn invert_round_trip_and_errors() {
        let s = LossSurface::SYMMETRIC;
        let l = s.optimal_loss(6e18).unwrap();
        assert_relative_eq!(s.invert_optimal_loss(l).unwrap(), 6e18, max_relative = 1e-8);
        let c = s.invert_optimal_loss(2.987448077887144).unwrap();
        assert_relative_eq!(c, 6e18, max_relative = 1e-8);
        assert!(matches!(s.invert_optimal_loss(1.69), Err(Error::UnreachableLoss { .. })));
    }

    #[test]
    fn invert_widens_bracket() {
        let s = LossSurface::SYMMETRIC;
        let l = s.optimal_loss(1e5).unwrap();
        assert_relative_eq!(s.invert_optimal_loss(l).unwrap(), 1e5, max_relative = 1e-8);
    }

    fn surface_strategy() -> impl Strategy<Value = LossSurface> {
        (0.0..3.0f64, 1.0..2000.0f64, 1.0..2000.0f64, 0.05..0.9f64, 0.05..0.9f64)
            .prop_map(|(e, a, b, al, be)| LossSurface::new(e, a, b, al, be))
    }

    proptest! {
        #[test]
        fn round_trip_invert(s in surface_strategy(), log_c in 15.0..26.0f64) {
            let c = 10f64.powf(log_c);
            let l = s.optimal_loss(c).unwrap();
            prop_assume!(l - s.e > 1e-6 * s.e);
            let back = s.invert_optimal_loss(l).unwrap();
            prop_assert!(((back - c) / c).abs() < 1e-8);
        }

        #[test]
        fn first_order_condition(s in surface_strategy(), log_c in 15.0..26.0f64) {
            let (alloc, _) = s.optimal_point(10f64.powf(log_c)).unwrap();
            let lhs = s.alpha * s.a * alloc.n.powf(-s.alpha);
            let rhs = s.beta * s.b * alloc.d.powf(-s.beta);
            prop_assert!(((lhs - rhs) / rhs).abs() < 1e-9);
            prop_assert!(((6.0 * alloc.n * alloc.d - alloc.c) / alloc.c).abs() < 1e-12);
        }

        #[test]
        fn exponents_sum_to_one(s in surface_strategy()) {
            let law = s.allocation_law().unwrap();
            prop_assert!((law.a + law.b - 1.0).abs() < 1e-15);
        }

        #[test]
        fn loss_monotone(s in surface_strategy(), n in 1.0..1e12f64, d in 1.0..1e12f64, f in 1.001..10.0f64) {
            let l = s.eval_loss(n, d).unwrap();
            prop_assert!(s.eval_loss(n * f, d).unwrap() < l);
            prop_assert!(s.eval_loss(n, d * f).unwrap() < l);
        }
    }
}
