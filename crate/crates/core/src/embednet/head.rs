//! Classification heads on top of the embedding and their per-sample losses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Deserializes from a tagged object (`{"type": "arc_face", "s": 16, "m": 0.5}`)
/// or a bare name with default parameters (`"arcface"`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", try_from = "HeadSpec")]
pub enum LossHead {
    /// Cross-entropy over affine logits.
    SoftmaxCe,
    /// Softmax CE plus `(lambda / 2) * ||e - c_y||^2`; centers move with rate
    /// `alpha` outside of gradient descent.
    CenterLoss { lambda: f64, alpha: f64 },
    /// Multiplicative angular margin `m` on the target angle.
    SphereFace { m: u32 },
    /// Feature scale `s` and additive angular margin `m` (radians).
    ArcFace { s: f64, m: f64 },
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum TaggedHead {
    SoftmaxCe,
    CenterLoss { lambda: f64, alpha: f64 },
    SphereFace { m: u32 },
    ArcFace { s: f64, m: f64 },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum HeadSpec {
    Name(String),
    Tagged(TaggedHead),
}

impl TryFrom<HeadSpec> for LossHead {
    type Error = Error;

    fn try_from(spec: HeadSpec) -> Result<Self> {
        Ok(match spec {
            HeadSpec::Name(n) => LossHead::by_name(&n)?,
            HeadSpec::Tagged(TaggedHead::SoftmaxCe) => LossHead::SoftmaxCe,
            HeadSpec::Tagged(TaggedHead::CenterLoss { lambda, alpha }) => {
                LossHead::CenterLoss { lambda, alpha }
            }
            HeadSpec::Tagged(TaggedHead::SphereFace { m }) => LossHead::SphereFace { m },
            HeadSpec::Tagged(TaggedHead::ArcFace { s, m }) => LossHead::ArcFace { s, m },
        })
    }
}

impl LossHead {
    pub const fn arcface() -> Self {
        LossHead::ArcFace { s: 16.0, m: 0.5 }
    }

    pub const fn sphereface() -> Self {
        LossHead::SphereFace { m: 4 }
    }

    pub const fn center_loss() -> Self {
        LossHead::CenterLoss {
            lambda: 0.003,
            alpha: 0.5,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossHead::SoftmaxCe => "softmax",
            LossHead::CenterLoss { .. } => "center",
            LossHead::SphereFace { .. } => "sphereface",
            LossHead::ArcFace { .. } => "arcface",
        }
    }

    /// Default-parameter head by name.
    pub fn by_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "softmax" | "softmax_ce" | "vggface2" | "vgg" => Ok(LossHead::SoftmaxCe),
            "center" | "centerloss" | "center_loss" => Ok(Self::center_loss()),
            "sphereface" | "sphere" => Ok(Self::sphereface()),
            "arcface" | "arc" => Ok(Self::arcface()),
            other => Err(Error::InvalidArgument(format!(
                "unknown loss head {other:?}"
            ))),
        }
    }

    pub fn is_angular(&self) -> bool {
        matches!(self, LossHead::SphereFace { .. } | LossHead::ArcFace { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LossHead::SoftmaxCe => true,
            LossHead::CenterLoss { lambda, alpha } => lambda > 0.0 && alpha > 0.0,
            LossHead::SphereFace { m } => m >= 1,
            LossHead::ArcFace { s, m } => s > 0.0 && (0.0..std::f64::consts::PI).contains(&m),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid loss head {self:?}"
            )))
        }
    }
}

/// Mean cross-entropy pieces for one sample: returns the loss and overwrites
/// `logits` with `softmax - onehot(y)`.
pub(crate) fn cross_entropy(logits: &mut [f64], y: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    let target = logits[y] / sum;
    for p in logits.iter_mut() {
        *p /= sum;
    }
    logits[y] -= 1.0;
    -target.ln()
}

/// Chebyshev polynomials `T_m(c)` and `U_{m-1}(c)`.
fn chebyshev(m: u32, c: f64) -> (f64, f64) {
    let (mut t0, mut t1) = (1.0, c);
    let (mut u0, mut u1) = (1.0, 2.0 * c);
    if m == 0 {
        return (1.0, 0.0);
    }
    for _ in 1..m {
        let t2 = 2.0 * c * t1 - t0;
        t0 = t1;
        t1 = t2;
        let u2 = 2.0 * c * u1 - u0;
        u0 = u1;
        u1 = u2;
    }
    // after the loop t1 = T_m, u0 = U_{m-1}
    (t1, u0)
}

/// Monotone extension of `cos(m * theta)` over `[0, pi]`,
/// `psi = (-1)^k cos(m theta) - 2k` on `[k pi / m, (k + 1) pi / m]`, and its
/// derivative with respect to `c = cos(theta)`.
pub fn sphere_psi(m: u32, c: f64) -> (f64, f64) {
    let c = c.clamp(-1.0, 1.0);
    let theta = c.acos();
    let k = ((m as f64 * theta / std::f64::consts::PI).floor() as u32).min(m.saturating_sub(1));
    let sign = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
    let (t, u) = chebyshev(m, c);
    (sign * t - 2.0 * k as f64, sign * m as f64 * u)
}

/// `cos(acos(c) + m)` and its derivative with respect to `c`.
pub fn arc_target(m: f64, c: f64) -> Result<(f64, f64)> {
    let c = c.clamp(-1.0, 1.0);
    let (sin_m, cos_m) = m.sin_cos();
    let sin_t = (1.0 - c * c).max(0.0).sqrt();
    let value = c * cos_m - sin_t * sin_m;
    if sin_m == 0.0 {
        return Ok((value, cos_m));
    }
    if sin_t == 0.0 {
        return Err(Error::Degenerate(
            "target angle is 0 or pi; additive margin gradient undefined".into(),
        ));
    }
    Ok((value, cos_m + sin_m * c / sin_t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn psi_matches_piecewise_definition() {
        for m in 1..=4u32 {
            for i in 0..=200 {
                let theta = PI * i as f64 / 200.0;
                let k = ((m as f64 * theta / PI).floor() as u32).min(m - 1);
                let expect = (-1f64).powi(k as i32) * (m as f64 * theta).cos() - 2.0 * k as f64;
                let (got, _) = sphere_psi(m, theta.cos());
                assert!(
                    (got - expect).abs() < 1e-9,
                    "m={m} theta={theta} {got} {expect}"
                );
            }
        }
    }

    #[test]
    fn psi_is_monotone_decreasing_in_theta() {
        let mut prev = f64::INFINITY;
        for i in 0..=1000 {
            let theta = PI * i as f64 / 1000.0;
            let (v, _) = sphere_psi(4, theta.cos());
            assert!(v <= prev + 1e-12);
            prev = v;
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-6;
        for &c in &[-0.9, -0.3, 0.1, 0.45, 0.8] {
            let (_, d) = sphere_psi(4, c);
            let fd = (sphere_psi(4, c + h).0 - sphere_psi(4, c - h).0) / (2.0 * h);
            assert!((d - fd).abs() < 1e-5, "{c}: {d} vs {fd}");
            let (_, d) = arc_target(0.5, c).unwrap();
            let fd =
                (arc_target(0.5, c + h).unwrap().0 - arc_target(0.5, c - h).unwrap().0) / (2.0 * h);
            assert!((d - fd).abs() < 1e-5);
        }
    }

    #[test]
    fn arc_target_without_margin_is_identity() {
        assert_eq!(arc_target(0.0, 0.3).unwrap(), (0.3, 1.0));
        assert!(arc_target(0.5, 1.0).is_err());
    }

    #[test]
    fn cross_entropy_two_uniform_logits() {
        let mut z = [0.7, 0.7];
        let l = cross_entropy(&mut z, 0);
        assert!((l - 2f64.ln()).abs() < 1e-15);
        assert_eq!(z, [-0.5, 0.5]);
    }

    #[test]
    fn head_validation() {
        assert!(LossHead::ArcFace { s: 16.0, m: 4.0 }.validate().is_err());
        assert!(LossHead::SphereFace { m: 0 }.validate().is_err());
        assert!(LossHead::CenterLoss {
            lambda: 0.0,
            alpha: 1.0
        }
        .validate()
        .is_err());
        assert!(LossHead::arcface().validate().is_ok());
        assert_eq!(LossHead::by_name("vggface2").unwrap(), LossHead::SoftmaxCe);
    }

    #[test]
    fn heads_parse_from_names_or_tagged_objects() {
        let h: Vec<LossHead> =
            serde_json::from_str(r#"["arcface", {"type": "sphere_face", "m": 2}]"#).unwrap();
        assert_eq!(h, vec![LossHead::arcface(), LossHead::SphereFace { m: 2 }]);
        let back: LossHead =
            serde_json::from_str(&serde_json::to_string(&LossHead::arcface()).unwrap()).unwrap();
        assert_eq!(back, LossHead::arcface());
        assert!(serde_json::from_str::<LossHead>(r#""nope""#).is_err());
    }
}
