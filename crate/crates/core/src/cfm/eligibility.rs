//! Numerical check of the three admissibility conditions for a car-following
//! model: rational driving signs, platoon (pairwise) stability and string
//! stability, each evaluated at equilibrium probe points.

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use super::{CarFollowingModel, CfmError, CfmInput};

/// Central-difference step, in each argument's own units.
pub const FD_STEP: f64 = 1e-4;
/// Largest |f| accepted at a probe point.
pub const EQUILIBRIUM_TOL: f64 = 1e-6;
/// Partials smaller than this in magnitude count as exactly zero.
pub const ZERO_TOL: f64 = 1e-9;

/// Partial derivatives of the behavioral function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Partials {
    pub d_gap: f64,
    pub d_rate: f64,
    pub d_speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignCheck {
    Pass,
    /// Derivative is zero where a strict inequality is required.
    Weak,
    Fail,
}

impl SignCheck {
    fn classify(value: f64, want_positive: bool) -> Self {
        if value.abs() <= ZERO_TOL {
            SignCheck::Weak
        } else if (value > 0.0) == want_positive {
            SignCheck::Pass
        } else {
            SignCheck::Fail
        }
    }

    pub fn ok(&self) -> bool {
        !matches!(self, SignCheck::Fail)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeReport {
    pub input: CfmInput,
    pub residual: f64,
    pub partials: Partials,
    /// Signs of d/dgap > 0, d/drate > 0, d/dspeed < 0.
    pub rational: [SignCheck; 3],
    /// Roots of `l^2 + (f_rate - f_speed) l + f_gap`, as (re, im).
    pub roots: [(f64, f64); 2],
    pub platoon_stable: bool,
    /// `f_gap / f_speed^3 * (f_speed^2 / 2 - f_speed f_rate - f_gap)`; stable when negative.
    pub string_value: f64,
    /// `f_speed^2 / 2 - f_speed f_rate - f_gap`; stable when positive.
    pub string_margin: f64,
    pub string_stable: bool,
}

impl ProbeReport {
    pub fn passed(&self) -> bool {
        self.rational.iter().all(SignCheck::ok) && self.platoon_stable && self.string_stable
    }

    pub fn weak(&self) -> bool {
        self.rational.contains(&SignCheck::Weak)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EligibilityReport {
    pub model: String,
    pub probes: Vec<ProbeReport>,
}

impl EligibilityReport {
    pub fn passed(&self) -> bool {
        !self.probes.is_empty() && self.probes.iter().all(ProbeReport::passed)
    }

    pub fn weak(&self) -> bool {
        self.probes.iter().any(ProbeReport::weak)
    }

    pub fn verdict(&self) -> &'static str {
        match (self.passed(), self.weak()) {
            (true, false) => "pass",
            (true, true) => "weak-pass",
            _ => "fail",
        }
    }
}

/// Central finite differences of `model` at `input` with step `h`.
pub fn partials(
    model: &CarFollowingModel,
    input: &CfmInput,
    h: f64,
) -> Result<Partials, CfmError> {
    let f = |dp: f64, dv: f64, v: f64| model.accel(&CfmInput::new(dp, dv, v));
    let CfmInput { delta_p, delta_v, v } = *input;
    Ok(Partials {
        d_gap: (f(delta_p + h, delta_v, v)? - f(delta_p - h, delta_v, v)?) / (2.0 * h),
        d_rate: (f(delta_p, delta_v + h, v)? - f(delta_p, delta_v - h, v)?) / (2.0 * h),
        d_speed: (f(delta_p, delta_v, v + h)? - f(delta_p, delta_v, v - h)?) / (2.0 * h),
    })
}

/// Roots of the linearised pair dynamics `l^2 + (f_rate - f_speed) l + f_gap = 0`.
pub fn characteristic_roots(p: &Partials) -> [Complex<f64>; 2] {
    let b = p.d_rate - p.d_speed;
    let c = p.d_gap;
    let disc = b * b - 4.0 * c;
    if disc >= 0.0 {
        let sq = disc.sqrt();
        // numerically stable pairing
        let q = -0.5 * (b + b.signum() * sq);
        if q == 0.0 {
            return [Complex::new(0.0, 0.0), Complex::new(-b, 0.0)];
        }
        [Complex::new(q, 0.0), Complex::new(c / q, 0.0)]
    } else {
        let im = 0.5 * (-disc).sqrt();
        [Complex::new(-0.5 * b, im), Complex::new(-0.5 * b, -im)]
    }
}

pub fn string_margin(p: &Partials) -> f64 {
    0.5 * p.d_speed * p.d_speed - p.d_speed * p.d_rate - p.d_gap
}

pub fn string_stability_value(p: &Partials) -> Result<f64, CfmError> {
    if p.d_speed.abs() < 1e-12 {
        return Err(CfmError::DegenerateSpeedDerivative(p.d_speed));
    }
    Ok(p.d_gap / p.d_speed.powi(3) * string_margin(p))
}

/// Equilibrium probe at speed `v`: equal speeds and the model's zero-acceleration gap.
pub fn equilibrium_probe(model: &CarFollowingModel, v: f64) -> Result<CfmInput, CfmError> {
    Ok(CfmInput::new(model.equilibrium_gap(v)?, 0.0, v))
}

/// `count` evenly spaced equilibrium probes over `[v_lo, v_hi]`.
pub fn probe_grid(
    model: &CarFollowingModel,
    v_lo: f64,
    v_hi: f64,
    count: usize,
) -> Result<Vec<CfmInput>, CfmError> {
    let count = count.max(1);
    (0..count)
        .map(|i| {
            let frac = if count == 1 {
                0.0
            } else {
                i as f64 / (count - 1) as f64
            };
            equilibrium_probe(model, v_lo + frac * (v_hi - v_lo))
        })
        .collect()
}

pub fn check_probe(model: &CarFollowingModel, input: &CfmInput) -> Result<ProbeReport, CfmError> {
    let residual = model.accel(input)?;
    if !(residual.abs() < EQUILIBRIUM_TOL) {
        return Err(CfmError::NotEquilibrium {
            residual: residual.abs(),
            tol: EQUILIBRIUM_TOL,
        });
    }
    let p = partials(model, input, FD_STEP)?;
    let rational = [
        SignCheck::classify(p.d_gap, true),
        SignCheck::classify(p.d_rate, true),
        SignCheck::classify(p.d_speed, false),
    ];
    let roots = characteristic_roots(&p);
    let platoon_stable = roots.iter().all(|r| r.re < 0.0);
    let string_value = string_stability_value(&p)?;
    Ok(ProbeReport {
        input: *input,
        residual,
        partials: p,
        rational,
        roots: [(roots[0].re, roots[0].im), (roots[1].re, roots[1].im)],
        platoon_stable,
        string_value,
        string_margin: string_margin(&p),
        string_stable: string_value < 0.0,
    })
}

pub fn check_eligibility(
    model: &CarFollowingModel,
    probes: &[CfmInput],
) -> Result<EligibilityReport, CfmError> {
    let probes = probes
        .iter()
        .map(|input| check_probe(model, input))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EligibilityReport {
        model: model.name().to_string(),
        probes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cfm::{IdmParams, OvmParams};
    use nalgebra::Matrix2;

    fn idm() -> CarFollowingModel {
        CarFollowingModel::Idm(IdmParams::default())
    }

    fn ovm() -> CarFollowingModel {
        CarFollowingModel::Ovm(OvmParams::default())
    }

    /// Hand-differentiated IDM partials at an equilibrium (approach rate zero).
    fn idm_analytic(p: &IdmParams, input: &CfmInput) -> Partials {
        let (gap, v) = (input.delta_p, input.v);
        let desired = p.rho * v + p.s0;
        let root = 2.0 * (p.a * p.b).sqrt();
        let d_gap = 2.0 * p.a * desired * desired / gap.powi(3);
        let d_rate = 2.0 * p.a * desired / (gap * gap) * v / root;
        let d_speed = -p.a * p.gamma * v.powf(p.gamma - 1.0) / p.v_d.powf(p.gamma)
            - 2.0 * p.a * desired / (gap * gap) * p.rho;
        Partials {
            d_gap,
            d_rate,
            d_speed,
        }
    }

    #[test]
    fn idm_at_twenty_passes() {
        let m = idm();
        let probe = equilibrium_probe(&m, 20.0).unwrap();
        let r = check_probe(&m, &probe).unwrap();
        assert!(r.passed() && !r.weak(), "{r:?}");
    }

    #[test]
    fn ovm_at_fifteen_weak_passes() {
        let m = ovm();
        let probe = equilibrium_probe(&m, 15.0).unwrap();
        let r = check_probe(&m, &probe).unwrap();
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.rational[1], SignCheck::Weak);
        assert_eq!(r.partials.d_rate, 0.0);
    }

    #[test]
    fn fd_matches_hand_derivatives() {
        let p = IdmParams::default();
        let m = CarFollowingModel::Idm(p);
        for v in [10.0, 17.0, 24.0, 29.0] {
            let probe = equilibrium_probe(&m, v).unwrap();
            let fd = partials(&m, &probe, FD_STEP).unwrap();
            let exact = idm_analytic(&p, &probe);
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
            assert!(rel(fd.d_gap, exact.d_gap) < 1e-4);
            assert!(rel(fd.d_rate, exact.d_rate) < 1e-4);
            assert!(rel(fd.d_speed, exact.d_speed) < 1e-4);
        }
    }

    #[test]
    fn fd_error_is_second_order() {
        let p = IdmParams::default();
        let m = CarFollowingModel::Idm(p);
        let probe = equilibrium_probe(&m, 18.0).unwrap();
        let exact = idm_analytic(&p, &probe);
        // step large enough that truncation dominates round-off
        let e1 = (partials(&m, &probe, 0.4).unwrap().d_gap - exact.d_gap).abs();
        let e2 = (partials(&m, &probe, 0.2).unwrap().d_gap - exact.d_gap).abs();
        let ratio = e1 / e2;
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn roots_agree_with_companion_eigenvalues() {
        let cases = [
            Partials { d_gap: 15.0, d_rate: 0.0, d_speed: -23.5 },
            Partials { d_gap: 0.3, d_rate: 0.4, d_speed: -0.2 },
            Partials { d_gap: 1.0, d_rate: 0.0, d_speed: -2.0 },
        ];
        for p in cases {
            let roots = characteristic_roots(&p);
            let b = p.d_rate - p.d_speed;
            let companion = Matrix2::new(0.0, 1.0, -p.d_gap, -b);
            let mut eig: Vec<Complex<f64>> = companion.complex_eigenvalues().iter().copied().collect();
            let mut ours = roots.to_vec();
            let key = |c: &Complex<f64>| (c.re, c.im);
            eig.sort_by(|x, y| key(x).partial_cmp(&key(y)).unwrap());
            ours.sort_by(|x, y| key(x).partial_cmp(&key(y)).unwrap());
            for (a, e) in ours.iter().zip(&eig) {
                assert!((a - e).norm() < 1e-10, "{a} vs {e}");
            }
        }
    }

    #[test]
    fn rejects_non_equilibrium_probe() {
        let m = idm();
        let err = check_probe(&m, &CfmInput::new(80.0, 0.0, 20.0)).unwrap_err();
        assert!(matches!(err, CfmError::NotEquilibrium { .. }));
    }

    #[test]
    fn rejects_flat_speed_derivative() {
        let p = Partials { d_gap: 1.0, d_rate: 1.0, d_speed: 0.0 };
        assert!(matches!(
            string_stability_value(&p),
            Err(CfmError::DegenerateSpeedDerivative(_))
        ));
    }

    #[test]
    fn string_value_sign_matches_margin() {
        // with d_gap > 0 and d_speed < 0 the printed ratio form and the bracket agree in sign
        let p = Partials { d_gap: 2.0, d_rate: 0.1, d_speed: -1.0 };
        let v = string_stability_value(&p).unwrap();
        assert_eq!(v < 0.0, string_margin(&p) > 0.0);
        let unstable = Partials { d_gap: 2.0, d_rate: 0.0, d_speed: -1.0 };
        assert!(string_stability_value(&unstable).unwrap() > 0.0);
    }

    #[test]
    fn report_over_grid() {
        for m in [ovm(), idm()] {
            let probes = probe_grid(&m, 10.0, 29.0, 12).unwrap();
            let report = check_eligibility(&m, &probes).unwrap();
            assert!(report.passed(), "{}", m.name());
        }
    }
}
