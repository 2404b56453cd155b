use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::TripletObjective;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// Angle α in degrees, strictly between 0 and 90.
    pub alpha_degrees: f64,
    /// Weight of the bias term against the semantic term.
    pub bias_weight: f64,
    /// Clamp the loss at zero.
    pub hinge: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha_degrees: 45.0,
            bias_weight: 1.0,
            hinge: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_degrees > 0.0 && self.alpha_degrees < 90.0) {
            return Err(Error::validation(format!(
                "alpha must lie strictly between 0 and 90 degrees, got {}",
                self.alpha_degrees
            )));
        }
        if !(self.bias_weight.is_finite() && self.bias_weight >= 0.0) {
            return Err(Error::validation("bias weight must be finite and non-negative"));
        }
        Ok(())
    }

    /// `tan²α`.
    pub fn tan_sq(&self) -> f64 {
        self.alpha_degrees.to_radians().tan().powi(2)
    }
}

fn check(xa: &[f64], xp: &[f64], xn: &[f64], cfg: &LossConfig) -> Result<()> {
    cfg.validate()?;
    for v in [xp, xn] {
        if v.len() != xa.len() {
            return Err(Error::DimensionMismatch {
                expected: xa.len(),
                actual: v.len(),
            });
        }
    }
    Ok(())
}

/// `‖xa−xp‖² − 4 tan²α ‖xn−xc‖²` with `xc = (xa+xp)/2`, before any hinge.
fn raw(xa: &[f64], xp: &[f64], xn: &[f64], t2: f64) -> f64 {
    let mut pull = 0.0;
    let mut push = 0.0;
    for i in 0..xa.len() {
        let d = xa[i] - xp[i];
        let e = xn[i] - 0.5 * (xa[i] + xp[i]);
        pull += d * d;
        push += e * e;
    }
    pull - 4.0 * t2 * push
}

fn finish(raw: f64, hinge: bool) -> f64 {
    if hinge {
        raw.max(0.0)
    } else {
        raw
    }
}

/// Angular triplet loss for an anchor, a semantic positive and a negative.
pub fn angular_loss(xa: &[f64], xp: &[f64], xn: &[f64], cfg: &LossConfig) -> Result<f64> {
    check(xa, xp, xn, cfg)?;
    Ok(finish(raw(xa, xp, xn, cfg.tan_sq()), cfg.hinge))
}

/// Angular loss whose positive `xb` comes from the anchor's bias
/// neighborhood. Same arithmetic as [`angular_loss`].
pub fn bias_angular_loss(xa: &[f64], xb: &[f64], xn: &[f64], cfg: &LossConfig) -> Result<f64> {
    angular_loss(xa, xb, xn, cfg)
}

/// Gradients of [`angular_loss`] with respect to `xa`, `xp` and `xn`.
/// All zero where the hinge is active.
pub fn angular_loss_gradients(xa: &[f64], xp: &[f64], xn: &[f64], cfg: &LossConfig) -> Result<[Vec<f64>; 3]> {
    check(xa, xp, xn, cfg)?;
    Ok(gradients(xa, xp, xn, cfg.tan_sq(), cfg.hinge))
}

fn gradients(xa: &[f64], xp: &[f64], xn: &[f64], t2: f64, hinge: bool) -> [Vec<f64>; 3] {
    let d = xa.len();
    if hinge && raw(xa, xp, xn, t2) <= 0.0 {
        return [vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    }
    let (mut ga, mut gp, mut gn) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    for i in 0..d {
        let diff = xa[i] - xp[i];
        let e = xn[i] - 0.5 * (xa[i] + xp[i]);
        ga[i] = 2.0 * diff + 4.0 * t2 * e;
        gp[i] = -2.0 * diff + 4.0 * t2 * e;
        gn[i] = -8.0 * t2 * e;
    }
    [ga, gp, gn]
}

/// [`angular_loss`] as a graph objective. Dimensions are checked by the graph.
#[derive(Debug, Clone, Copy)]
pub struct AngularObjective {
    tan_sq: f64,
    hinge: bool,
}

impl AngularObjective {
    pub fn new(cfg: &LossConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            tan_sq: cfg.tan_sq(),
            hinge: cfg.hinge,
        })
    }
}

impl TripletObjective for AngularObjective {
    fn loss(&self, a: &[f64], p: &[f64], n: &[f64]) -> f64 {
        finish(raw(a, p, n, self.tan_sq), self.hinge)
    }

    fn gradient(&self, a: &[f64], p: &[f64], n: &[f64]) -> [Vec<f64>; 3] {
        gradients(a, p, n, self.tan_sq, self.hinge)
    }
}
