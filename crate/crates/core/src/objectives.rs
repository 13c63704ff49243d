//! Binary losses on the logit scale: cross-entropy and focal loss.
//!
//! With `p = σ(z)` and `q = 1 − p`, focal loss is `−α q^γ ln p` for fog
//! rows and `−(1−α) p^γ ln q` for fog-free rows. The `printed` form drops
//! the γ exponent on the fog-free branch (equivalently fixes it at 1).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const DEFAULT_PROB_CLAMP: f64 = 1e-7;
pub const DEFAULT_HESS_FLOOR: f64 = 1e-16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FocalForm {
    #[default]
    Standard,
    Printed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
    pub form: FocalForm,
}

impl FocalParams {
    pub fn new(alpha: f64, gamma: f64, form: FocalForm) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!("focal alpha must be in (0,1), got {alpha}")));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::Config(format!("focal gamma must be ≥ 0, got {gamma}")));
        }
        Ok(FocalParams { alpha, gamma, form })
    }

    /// Exponent applied on the fog-free branch.
    fn negative_gamma(&self) -> f64 {
        match self.form {
            FocalForm::Standard => self.gamma,
            FocalForm::Printed => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    CrossEntropy,
    Focal(FocalParams),
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Objective::CrossEntropy => write!(f, "ce"),
            Objective::Focal(p) => {
                write!(f, "focal:{}:{}", p.alpha, p.gamma)?;
                if p.form == FocalForm::Printed {
                    write!(f, ":printed")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for Objective {
    type Err = Error;

    /// `ce` or `focal:<alpha>:<gamma>[:printed]`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |v: &str| -> Result<f64> {
            v.parse().map_err(|_| Error::Config(format!("bad number {v:?} in objective {s:?}")))
        };
        match parts.as_slice() {
            ["ce"] => Ok(Objective::CrossEntropy),
            ["focal", a, g] => Ok(Objective::Focal(FocalParams::new(num(a)?, num(g)?, FocalForm::Standard)?)),
            ["focal", a, g, "printed"] => Ok(Objective::Focal(FocalParams::new(num(a)?, num(g)?, FocalForm::Printed)?)),
            ["focal", a, g, "standard"] => {
                Ok(Objective::Focal(FocalParams::new(num(a)?, num(g)?, FocalForm::Standard)?))
            }
            _ => Err(Error::Config(format!("unknown objective {s:?}; expected ce or focal:<alpha>:<gamma>[:printed]"))),
        }
    }
}

/// Probability clamp for loss evaluation and Hessian floor for Newton steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Numerics {
    pub prob_clamp: f64,
    pub hess_floor: f64,
}

impl Default for Numerics {
    fn default() -> Self {
        Numerics { prob_clamp: DEFAULT_PROB_CLAMP, hess_floor: DEFAULT_HESS_FLOOR }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_clamped(z: f64, eps: f64) -> f64 {
    sigmoid(z).clamp(eps, 1.0 - eps)
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn check_prob(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Numeric(format!("probability {p} outside (0,1)")));
    }
    Ok(p)
}

pub fn cross_entropy(y: u8, p: f64) -> Result<f64> {
    let p = check_prob(p)?;
    Ok(if y == 1 { -p.ln() } else { -(1.0 - p).ln() })
}

pub fn focal_loss(y: u8, p: f64, params: &FocalParams) -> Result<f64> {
    let p = check_prob(p)?;
    let q = 1.0 - p;
    Ok(if y == 1 {
        -params.alpha * q.powf(params.gamma) * p.ln()
    } else {
        -(1.0 - params.alpha) * p.powf(params.negative_gamma()) * q.ln()
    })
}

impl Objective {
    /// Loss at probability `p`, clamped into `[eps, 1 − eps]` first.
    pub fn loss(&self, y: u8, p: f64, eps: f64) -> Result<f64> {
        if p.is_nan() {
            return Err(Error::Numeric("probability is NaN".into()));
        }
        let p = p.clamp(eps, 1.0 - eps);
        match self {
            Objective::CrossEntropy => cross_entropy(y, p),
            Objective::Focal(f) => focal_loss(y, p, f),
        }
    }

    /// Loss as a function of the logit, without clamping.
    pub fn loss_at_logit(&self, y: u8, z: f64) -> f64 {
        let ln_p = -softplus(-z);
        let ln_q = -softplus(z);
        let p = sigmoid(z);
        let q = sigmoid(-z);
        match self {
            Objective::CrossEntropy => {
                if y == 1 {
                    -ln_p
                } else {
                    -ln_q
                }
            }
            Objective::Focal(f) => {
                if y == 1 {
                    -f.alpha * q.powf(f.gamma) * ln_p
                } else {
                    -(1.0 - f.alpha) * p.powf(f.negative_gamma()) * ln_q
                }
            }
        }
    }

    /// First and second derivative of the loss with respect to the logit.
    pub fn grad_hess_raw(&self, y: u8, z: f64) -> (f64, f64) {
        let p = sigmoid(z);
        let q = sigmoid(-z);
        match self {
            Objective::CrossEntropy => (p - f64::from(y), p * (1.0 - p)),
            Objective::Focal(f) => {
                if y == 1 {
                    let (a, g) = (f.alpha, f.gamma);
                    let ln_p = -softplus(-z);
                    let qg = q.powf(g);
                    let b = g * p * ln_p - q;
                    (a * qg * b, a * p * qg * (-g * b + q * (g * ln_p + g + 1.0)))
                } else {
                    let (a, g) = (1.0 - f.alpha, f.negative_gamma());
                    let ln_q = -softplus(z);
                    let pg = p.powf(g);
                    let b = p - g * q * ln_q;
                    (a * pg * b, a * q * pg * (g * b + p * (g * ln_q + g + 1.0)))
                }
            }
        }
    }

    /// As [`grad_hess_raw`](Self::grad_hess_raw) with `h ≥ floor`.
    pub fn grad_hess(&self, y: u8, z: f64, floor: f64) -> (f64, f64) {
        let (g, h) = self.grad_hess_raw(y, z);
        (g, h.max(floor))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn focal(a: f64, g: f64) -> Objective {
        Objective::Focal(FocalParams::new(a, g, FocalForm::Standard).unwrap())
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid_clamped(50.0, DEFAULT_PROB_CLAMP), 1.0 - 1e-7);
        for z in [0.3, 2.0, 7.5, 20.0] {
            assert!((sigmoid(-z) - (1.0 - sigmoid(z))).abs() <= 1e-15);
        }
    }

    #[test]
    fn loss_examples() {
        assert!((cross_entropy(1, 1.0 - 1e-7).unwrap() - 1e-7).abs() < 1e-12);
        assert!((cross_entropy(1, 0.5).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((cross_entropy(0, 0.9).unwrap() - 10f64.ln()).abs() < 1e-12);
        assert!(cross_entropy(1, 1.0).is_err());
        let p = FocalParams::new(0.2, 2.0, FocalForm::Standard).unwrap();
        assert!((focal_loss(1, 0.9, &p).unwrap() - 2.10721e-4).abs() < 1e-9);
        assert!((focal_loss(0, 0.1, &p).unwrap() - 8.4288e-4).abs() < 1e-8);
    }

    #[test]
    fn printed_form_uses_linear_weight() {
        let p = FocalParams::new(0.2, 4.0, FocalForm::Printed).unwrap();
        let want = -0.8 * 0.3 * 0.7f64.ln();
        assert!((focal_loss(0, 0.3, &p).unwrap() - want).abs() < 1e-15);
        let s = FocalParams { form: FocalForm::Standard, ..p };
        assert_eq!(focal_loss(1, 0.3, &p).unwrap(), focal_loss(1, 0.3, &s).unwrap());
    }

    #[test]
    fn gamma_zero_is_weighted_ce() {
        let p = FocalParams::new(0.5, 0.0, FocalForm::Standard).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let y = rng.gen_range(0..2u8);
            let pr = rng.gen_range(1e-6..1.0 - 1e-6);
            let f = focal_loss(y, pr, &p).unwrap();
            assert!((f - 0.5 * cross_entropy(y, pr).unwrap()).abs() <= 1e-12);
        }
    }

    #[test]
    fn ce_derivatives_are_textbook() {
        for z in [-3.0, 0.0, 1.7] {
            let p = sigmoid(z);
            assert_eq!(Objective::CrossEntropy.grad_hess_raw(1, z), (p - 1.0, p * (1.0 - p)));
        }
    }

    #[test]
    fn config_strings() {
        for s in ["ce", "focal:0.2:4", "focal:0.2:2:printed"] {
            assert_eq!(s.parse::<Objective>().unwrap().to_string(), s);
        }
        assert!("focal:1.5:2".parse::<Objective>().is_err());
        assert!("hinge".parse::<Objective>().is_err());
    }

    #[test]
    fn derivative_spot_checks() {
        let h = 1e-6;
        let o = focal(0.2, 2.0);
        let fd = (o.loss_at_logit(1, h) - o.loss_at_logit(1, -h)) / (2.0 * h);
        let (g, _) = o.grad_hess_raw(1, 0.0);
        assert!((g - fd).abs() / fd.abs() <= 1e-5);
        // second-order difference of the loss itself, coarser step
        let o = focal(0.2, 4.0);
        let s = 1e-4;
        let fd2 = (o.loss_at_logit(0, 1.0 + s) - 2.0 * o.loss_at_logit(0, 1.0) + o.loss_at_logit(0, 1.0 - s)) / (s * s);
        let (_, hh) = o.grad_hess_raw(0, 1.0);
        assert!((hh - fd2).abs() / fd2.abs() <= 1e-4, "{hh} vs {fd2}");
    }

    proptest! {
        #[test]
        fn nonnegative_and_signed(y in 0u8..2, z in -15.0f64..15.0, a in 0.01f64..0.99, g in 0.0f64..5.0, printed: bool) {
            let form = if printed { FocalForm::Printed } else { FocalForm::Standard };
            for o in [Objective::CrossEntropy, Objective::Focal(FocalParams::new(a, g, form).unwrap())] {
                prop_assert!(o.loss_at_logit(y, z) >= 0.0);
                let (gr, _) = o.grad_hess_raw(y, z);
                let d = sigmoid(z) - f64::from(y);
                prop_assert!(gr * d >= 0.0, "{o} y={y} z={z} g={gr}");
            }
        }
    }
}
