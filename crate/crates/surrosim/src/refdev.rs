//! Analytic reference device models.
//!
//! Closed-form 3-terminal FinFET and TFET models with exact currents,
//! charges, and derivatives. They serve as the ground truth for
//! surrogate training and as the reference back end of the simulator.
//!
//! Conventions:
//! * terminal currents flow **into** the device terminals;
//! * gate current is identically zero, so `is = -id` always;
//! * terminal charges satisfy `qg + qd + qs = 0` exactly.

use crate::util::{sigmoid, softplus};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Thermal voltage used by the TFET model (same value as the FinFET
/// default).
pub const TFET_VT: f64 = 0.0259;

/// Exponent clamp for the TFET body-diode term; keeps deep Newton
/// excursions finite instead of overflowing to infinity.
const DIODE_EXP_CLAMP: f64 = 250.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid device parameters: {0}")]
    InvalidParams(String),
}

/// Carrier polarity of a device model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    N,
    P,
}

impl std::fmt::Display for Polarity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Polarity::N => "n",
            Polarity::P => "p",
        })
    }
}

impl std::str::FromStr for Polarity {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "n" | "N" => Ok(Polarity::N),
            "p" | "P" => Ok(Polarity::P),
            other => Err(format!("unknown polarity `{other}`")),
        }
    }
}

/// Terminal voltages of a 3-terminal device, all relative to a common
/// reference (bulk is tied to source and not modeled).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasPoint {
    pub vg: f64,
    pub vd: f64,
    pub vs: f64,
}

impl BiasPoint {
    pub fn new(vg: f64, vd: f64, vs: f64) -> Self {
        BiasPoint { vg, vd, vs }
    }

    /// Drain/source exchanged.
    pub fn swap_ds(self) -> Self {
        BiasPoint {
            vg: self.vg,
            vd: self.vs,
            vs: self.vd,
        }
    }

    /// All terminals negated (the p-type mirror coordinate map).
    pub fn negated(self) -> Self {
        BiasPoint {
            vg: -self.vg,
            vd: -self.vd,
            vs: -self.vs,
        }
    }

    pub fn is_finite(self) -> bool {
        self.vg.is_finite() && self.vd.is_finite() && self.vs.is_finite()
    }
}

/// Terminal currents (A) and charges (C) at one bias point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceResponse {
    pub id: f64,
    pub ig: f64,
    pub is: f64,
    pub qg: f64,
    pub qd: f64,
    pub qs: f64,
}

impl DeviceResponse {
    /// Builds a response from the independent quantities, deriving the
    /// rest so both neutrality identities hold bit-exactly.
    pub fn from_id_qg_qd(id: f64, qg: f64, qd: f64) -> Self {
        DeviceResponse {
            id,
            ig: 0.0,
            is: -id,
            qg,
            qd,
            qs: -(qg + qd),
        }
    }

    pub fn negated(self) -> Self {
        DeviceResponse {
            id: -self.id,
            ig: -self.ig,
            is: -self.is,
            qg: -self.qg,
            qd: -self.qd,
            qs: -self.qs,
        }
    }
}

/// Derivatives of currents and charges with respect to the terminal
/// voltages. Row order: (id, ig, is) for `di`, (qg, qd, qs) for `dq`;
/// column order: (vg, vd, vs).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceJacobian {
    pub di: [[f64; 3]; 3],
    pub dq: [[f64; 3]; 3],
}

impl DeviceJacobian {
    /// Assembles the full Jacobian from the drain-current and
    /// independent-charge rows, deriving the dependent rows.
    pub fn from_did_dqg_dqd(did: [f64; 3], dqg: [f64; 3], dqd: [f64; 3]) -> Self {
        let dis = [-did[0], -did[1], -did[2]];
        let dqs = [-(dqg[0] + dqd[0]), -(dqg[1] + dqd[1]), -(dqg[2] + dqd[2])];
        DeviceJacobian {
            di: [did, [0.0; 3], dis],
            dq: [dqg, dqd, dqs],
        }
    }
}

/// Common interface of every 3-terminal device model: the reference
/// models, their p-type mirrors, and the trained surrogates.
pub trait DeviceModel: Send + Sync {
    fn eval(&self, b: BiasPoint) -> DeviceResponse;
    fn jacobian(&self, b: BiasPoint) -> DeviceJacobian;
}

impl<M: DeviceModel + ?Sized> DeviceModel for &M {
    fn eval(&self, b: BiasPoint) -> DeviceResponse {
        (**self).eval(b)
    }
    fn jacobian(&self, b: BiasPoint) -> DeviceJacobian {
        (**self).jacobian(b)
    }
}

impl<M: DeviceModel + ?Sized> DeviceModel for Box<M> {
    fn eval(&self, b: BiasPoint) -> DeviceResponse {
        (**self).eval(b)
    }
    fn jacobian(&self, b: BiasPoint) -> DeviceJacobian {
        (**self).jacobian(b)
    }
}

impl<M: DeviceModel + ?Sized> DeviceModel for std::sync::Arc<M> {
    fn eval(&self, b: BiasPoint) -> DeviceResponse {
        (**self).eval(b)
    }
    fn jacobian(&self, b: BiasPoint) -> DeviceJacobian {
        (**self).jacobian(b)
    }
}

/// Parameters of the symmetric EKV-style FinFET reference model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefFinFETParams {
    pub vth: f64,
    pub n_slope: f64,
    pub vt_thermal: f64,
    pub i_spec: f64,
    pub c_gate: f64,
}

impl Default for RefFinFETParams {
    fn default() -> Self {
        RefFinFETParams {
            vth: 0.3,
            n_slope: 1.2,
            vt_thermal: 0.0259,
            i_spec: 1e-6,
            c_gate: 1e-15,
        }
    }
}

impl RefFinFETParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.i_spec > 0.0 && self.c_gate > 0.0 && self.n_slope >= 1.0 && self.vt_thermal > 0.0)
        {
            return Err(ModelError::InvalidParams(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Parameters of the TFET reference model: Kane-form band-to-band
/// tunneling in forward conduction plus a body p-i-n diode in reverse,
/// with deliberately asymmetric linear charges (large `c_gd`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefTFETParams {
    pub a_kane: f64,
    pub b_kane: f64,
    pub vth_tun: f64,
    pub i_diode: f64,
    pub n_diode: f64,
    pub c_gd: f64,
    pub c_gs: f64,
}

impl Default for RefTFETParams {
    fn default() -> Self {
        RefTFETParams {
            a_kane: 1e-4,
            b_kane: 1.5,
            vth_tun: 0.1,
            i_diode: 1e-12,
            n_diode: 2.0,
            c_gd: 2e-15,
            c_gs: 0.5e-15,
        }
    }
}

impl RefTFETParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let pos = self.a_kane > 0.0
            && self.b_kane > 0.0
            && self.i_diode > 0.0
            && self.c_gd > 0.0
            && self.c_gs > 0.0;
        if !pos || self.c_gd <= self.c_gs {
            return Err(ModelError::InvalidParams(format!("{self:?}")));
        }
        Ok(())
    }

    /// Same device with the gate-drain coupling capacitance removed;
    /// used by the coupling-glitch ablation benchmark.
    pub fn without_cgd(mut self) -> Self {
        self.c_gd = 0.0;
        self
    }
}

/// EKV interpolation function F(x) = ln(1 + e^{x/2})^2.
fn ekv_f(x: f64) -> f64 {
    let s = softplus(0.5 * x);
    s * s
}

/// dF/dx = ln(1 + e^{x/2}) * sigma(x/2).
fn ekv_f_prime(x: f64) -> f64 {
    softplus(0.5 * x) * sigmoid(0.5 * x)
}

/// Smoothed ramp h(x) = 2 vt ln(1 + e^{x/(2 vt)}); h > 0, h ~ x for
/// x >> vt.
fn smooth_ramp(x: f64, vt: f64) -> f64 {
    2.0 * vt * softplus(x / (2.0 * vt))
}

fn smooth_ramp_prime(x: f64, vt: f64) -> f64 {
    sigmoid(x / (2.0 * vt))
}

/// n-type FinFET reference model (symmetric in drain/source).
#[derive(Debug, Clone, Copy)]
pub struct NFinFET {
    pub params: RefFinFETParams,
}

impl NFinFET {
    pub fn new(params: RefFinFETParams) -> Result<Self, ModelError> {
        params.validate()?;
        Ok(NFinFET { params })
    }
}

impl Default for NFinFET {
    fn default() -> Self {
        NFinFET {
            params: RefFinFETParams::default(),
        }
    }
}

impl DeviceModel for NFinFET {
    fn eval(&self, b: BiasPoint) -> DeviceResponse {
        let p = &self.params;
        let vt = p.vt_thermal;
        let vp = (b.vg - p.vth) / p.n_slope;
        let id = p.i_spec * (ekv_f((vp - b.vs) / vt) - ekv_f((vp - b.vd) / vt));

        let hs = smooth_ramp(b.vg - p.vth - b.vs, vt);
        let hd = smooth_ramp(b.vg - p.vth - b.vd, vt);
        let qg = p.c_gate * (hs + hd) / 2.0;
        let qd = -p.c_gate * (0.4 * hd + 0.1 * hs);
        DeviceResponse::from_id_qg_qd(id, qg, qd)
    }

    fn jacobian(&self, b: BiasPoint) -> DeviceJacobian {
        let p = &self.params;
        let vt = p.vt_thermal;
        let vp = (b.vg - p.vth) / p.n_slope;
        let fs = ekv_f_prime((vp - b.vs) / vt);
        let fd = ekv_f_prime((vp - b.vd) / vt);
        let did = [
            p.i_spec * (fs - fd) / (p.n_slope * vt),
            p.i_spec * fd / vt,
            -p.i_spec * fs / vt,
        ];

        let hps = smooth_ramp_prime(b.vg - p.vth - b.vs, vt);
        let hpd = smooth_ramp_prime(b.vg - p.vth - b.vd, vt);
        let c = p.c_gate;
        let dqg = [c * (hps + hpd) / 2.0, -c * hpd / 2.0, -c * hps / 2.0];
        let dqd = [-c * (0.4 * hpd + 0.1 * hps), 0.4 * c * hpd, 0.1 * c * hps];
        DeviceJacobian::from_did_dqg_dqd(did, dqg, dqd)
    }
}

/// Saturation factor of the tunneling current: rises 0 -> 1 for
/// forward drain bias and saturates at -1 in reverse, so the
/// gate-controlled term never conducts appreciably backwards. C^1
/// across u = 0 (value 0, slope 1/vt on both sides).
fn drain_saturation(u: f64, vt: f64) -> f64 {
    if u >= 0.0 {
        -(-u / vt).exp_m1()
    } else {
        (u / vt).tanh()
    }
}

fn drain_saturation_prime(u: f64, vt: f64) -> f64 {
    if u >= 0.0 {
        (-u / vt).exp() / vt
    } else {
        let t = (u / vt).tanh();
        (1.0 - t * t) / vt
    }
}

/// n-type TFET reference model.
#[derive(Debug, Clone, Copy)]
pub struct NTfet {
    pub params: RefTFETParams,
}

impl NTfet {
    pub fn new(params: RefTFETParams) -> Result<Self, ModelError> {
        params.validate()?;
        Ok(NTfet { params })
    }

    /// Unclamped but overflow-safe body-diode exponential.
    fn diode_exp(&self, u: f64) -> f64 {
        let arg = (-u / (self.params.n_diode * TFET_VT)).min(DIODE_EXP_CLAMP);
        arg.exp()
    }
}

impl Default for NTfet {
    fn default() -> Self {
        NTfet {
            params: RefTFETParams::default(),
        }
    }
}

impl DeviceModel for NTfet {
    fn eval(&self, b: BiasPoint) -> DeviceResponse {
        let p = &self.params;
        let vov = smooth_ramp(b.vg - b.vs - p.vth_tun, TFET_VT);
        let tun0 = p.a_kane * vov * vov * (-p.b_kane / (vov + 1e-6)).exp();
        let u = b.vd - b.vs;
        let i_tun = tun0 * drain_saturation(u, TFET_VT);
        let i_pin = -p.i_diode * (self.diode_exp(u) - 1.0);
        let id = i_tun + i_pin;

        let qg = p.c_gd * (b.vg - b.vd) + p.c_gs * (b.vg - b.vs);
        let qd = -p.c_gd * (b.vg - b.vd);
        DeviceResponse::from_id_qg_qd(id, qg, qd)
    }

    fn jacobian(&self, b: BiasPoint) -> DeviceJacobian {
        let p = &self.params;
        let x = b.vg - b.vs - p.vth_tun;
        let vov = smooth_ramp(x, TFET_VT);
        let dvov = smooth_ramp_prime(x, TFET_VT);
        let et = (-p.b_kane / (vov + 1e-6)).exp();
        let tun0 = p.a_kane * vov * vov * et;
        let dtun0_dvov = p.a_kane * et * (2.0 * vov + vov * vov * p.b_kane / ((vov + 1e-6) * (vov + 1e-6)));

        let u = b.vd - b.vs;
        let sat = drain_saturation(u, TFET_VT);
        let dsat = drain_saturation_prime(u, TFET_VT);
        let dpin_du = p.i_diode * self.diode_exp(u) / (p.n_diode * TFET_VT);

        let did = [
            dtun0_dvov * dvov * sat,
            tun0 * dsat + dpin_du,
            -dtun0_dvov * dvov * sat - tun0 * dsat - dpin_du,
        ];
        let dqg = [p.c_gd + p.c_gs, -p.c_gd, -p.c_gs];
        let dqd = [-p.c_gd, p.c_gd, 0.0];
        DeviceJacobian::from_did_dqg_dqd(did, dqg, dqd)
    }
}

/// p-type mirror of an n-type model: `I_p(v) = -I_n(-v)` and
/// `Q_p(v) = -Q_n(-v)` componentwise, hence `J_p(v) = J_n(-v)`.
#[derive(Debug, Clone, Copy)]
pub struct Mirrored<M>(pub M);

pub fn mirror_p<M: DeviceModel>(inner: M) -> Mirrored<M> {
    Mirrored(inner)
}

impl<M: DeviceModel> DeviceModel for Mirrored<M> {
    fn eval(&self, b: BiasPoint) -> DeviceResponse {
        self.0.eval(b.negated()).negated()
    }

    fn jacobian(&self, b: BiasPoint) -> DeviceJacobian {
        self.0.jacobian(b.negated())
    }
}

/// Central finite-difference Jacobian of a model's `eval`; the
/// independent check used by the derivative tests.
pub fn fd_jacobian<M: DeviceModel>(model: &M, b: BiasPoint, h: f64) -> DeviceJacobian {
    let mut di = [[0.0; 3]; 3];
    let mut dq = [[0.0; 3]; 3];
    for col in 0..3 {
        let mut hi = b;
        let mut lo = b;
        match col {
            0 => {
                hi.vg += h;
                lo.vg -= h;
            }
            1 => {
                hi.vd += h;
                lo.vd -= h;
            }
            _ => {
                hi.vs += h;
                lo.vs -= h;
            }
        }
        let rh = model.eval(hi);
        let rl = model.eval(lo);
        let inv = 1.0 / (2.0 * h);
        di[0][col] = (rh.id - rl.id) * inv;
        di[1][col] = (rh.ig - rl.ig) * inv;
        di[2][col] = (rh.is - rl.is) * inv;
        dq[0][col] = (rh.qg - rl.qg) * inv;
        dq[1][col] = (rh.qd - rl.qd) * inv;
        dq[2][col] = (rh.qs - rl.qs) * inv;
    }
    DeviceJacobian { di, dq }
}

/// Worst checkable relative disagreement between the analytic Jacobian
/// and central finite differences of `eval` at step `h`.
///
/// A central difference of a function of magnitude `s` carries an
/// absolute noise of a few ulps of `s` divided by `2h`; entries smaller
/// than that noise amplified by `1/rel_tol` cannot be resolved by the
/// difference at all and are skipped (they are exactly the entries
/// whose contribution to a circuit stamp is negligible).
pub fn jacobian_fd_mismatch<M: DeviceModel>(
    model: &M,
    b: BiasPoint,
    h: f64,
    rel_tol: f64,
) -> f64 {
    let a = model.jacobian(b);
    let fd = fd_jacobian(model, b, h);
    let r = model.eval(b);
    let i_scale = r.id.abs().max(r.ig.abs()).max(r.is.abs());
    let q_scale = r.qg.abs().max(r.qd.abs()).max(r.qs.abs());
    let noise = |scale: f64| 32.0 * f64::EPSILON * scale / (2.0 * h);
    let floor_i = (noise(i_scale) / rel_tol).max(1e-30);
    let floor_q = (noise(q_scale) / rel_tol).max(1e-40);

    let mut worst: f64 = 0.0;
    for row in 0..3 {
        for col in 0..3 {
            for (x, y, floor) in [
                (a.di[row][col], fd.di[row][col], floor_i),
                (a.dq[row][col], fd.dq[row][col], floor_q),
            ] {
                let denom = x.abs().max(y.abs());
                if denom < floor {
                    continue;
                }
                worst = worst.max((x - y).abs() / denom);
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Naive transcription of the FinFET formulas, used as the
    /// independent oracle for the frozen values below.
    fn fin_oracle_id(p: &RefFinFETParams, vg: f64, vd: f64, vs: f64) -> f64 {
        let f = |x: f64| (1.0 + (x / 2.0).exp()).ln().powi(2);
        let vp = (vg - p.vth) / p.n_slope;
        p.i_spec * (f((vp - vs) / p.vt_thermal) - f((vp - vd) / p.vt_thermal))
    }

    #[test]
    fn finfet_symmetry_point_is_exact_zero() {
        let dev = NFinFET::default();
        let r = dev.eval(BiasPoint::new(0.8, 0.4, 0.4));
        assert_eq!(r.id, 0.0);
    }

    #[test]
    fn finfet_strong_inversion_value() {
        let dev = NFinFET::default();
        let b = BiasPoint::new(0.8, 0.8, 0.0);
        let id = dev.eval(b).id;
        // Frozen from the oracle: 6.470720806817593e-5 A.
        assert!((id - 6.470720806817593e-5).abs() < 1e-12);
        assert!((id - fin_oracle_id(&dev.params, 0.8, 0.8, 0.0)).abs() < 1e-19);
    }

    #[test]
    fn finfet_subthreshold_value() {
        let dev = NFinFET::default();
        let id = dev.eval(BiasPoint::new(0.0, 0.8, 0.0)).id;
        // Frozen from the oracle: 6.375267001962198e-11 A.
        assert!((id - 6.375267001962198e-11).abs() < 1e-18);
    }

    #[test]
    fn tfet_examples() {
        let dev = NTfet::default();
        assert!(dev.eval(BiasPoint::new(0.0, 0.0, 0.0)).id.abs() < 1e-12);
        // Frozen from the oracle evaluations.
        let fwd = dev.eval(BiasPoint::new(0.9, 0.9, 0.0)).id;
        assert!((fwd - 9.814742364532129e-6).abs() < 1e-13);
        let rev = dev.eval(BiasPoint::new(0.9, 0.0, 0.9)).id;
        assert!((rev - -3.512828997674565e-5).abs() < 1e-12);
        // Reverse current nearly independent of the gate.
        let rev0 = dev.eval(BiasPoint::new(0.0, 0.0, 0.9)).id;
        assert!((rev - rev0).abs() / rev.abs() < 1e-6);
    }

    #[test]
    fn tfet_reverse_gate_independence_along_rail() {
        // vs at the supply rail, drain half a volt below: the diode
        // dominates and raising the gate by 0.5 V changes nothing.
        let dev = NTfet::default();
        let vs = 0.9;
        let vd = vs - 0.5;
        for k in 0..=8 {
            let vg = 0.05 * k as f64; // vg in [0, 0.4]
            let a = dev.eval(BiasPoint::new(vg, vd, vs)).id;
            let b = dev.eval(BiasPoint::new(vg + 0.5, vd, vs)).id;
            assert!(
                (a - b).abs() / a.abs().max(b.abs()) < 0.01,
                "vg={vg}: {a} vs {b}"
            );
        }
    }

    #[test]
    fn tfet_c1_across_drain_source_seam() {
        let dev = NTfet::default();
        let b_hi = BiasPoint::new(0.7, 0.4 + 1e-9, 0.4);
        let b_lo = BiasPoint::new(0.7, 0.4 - 1e-9, 0.4);
        let r_hi = dev.eval(b_hi);
        let r_lo = dev.eval(b_lo);
        assert!((r_hi.id - r_lo.id).abs() < 1e-12);
        let j_hi = dev.jacobian(b_hi);
        let j_lo = dev.jacobian(b_lo);
        let row_scale = j_hi.di[0].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for c in 0..3 {
            let d = (j_hi.di[0][c] - j_lo.di[0][c]).abs();
            assert!(d < 1e-6 * row_scale, "col {c}: {d} vs scale {row_scale}");
        }
    }

    #[test]
    fn finfet_monotone_in_vg() {
        let dev = NFinFET::default();
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=16 {
            let vg = 0.05 * k as f64;
            let id = dev.eval(BiasPoint::new(vg, 0.6, 0.2)).id;
            assert!(id >= prev);
            prev = id;
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let fin = NFinFET::default();
        let tfet = NTfet::default();
        let pfin = mirror_p(NFinFET::default());
        let ptfet = mirror_p(NTfet::default());
        let mut worst: f64 = 0.0;
        for ig in 0..5 {
            for id_ in 0..5 {
                for is_ in 0..5 {
                    let b = BiasPoint::new(
                        0.05 + 0.17 * ig as f64,
                        0.03 + 0.19 * id_ as f64,
                        0.02 + 0.18 * is_ as f64,
                    );
                    for dev in [
                        &fin as &dyn DeviceModel,
                        &tfet,
                        &pfin,
                        &ptfet,
                    ] {
                        worst = worst.max(jacobian_fd_mismatch(&dev, b, 1e-6, 1e-6));
                    }
                }
            }
        }
        assert!(worst < 1e-6, "worst rel error {worst}");
    }

    #[test]
    fn finfet_gate_charge_derivative_formula() {
        // dQg/dVg = c_gate * (sigma(x_s) + sigma(x_d)) / 2 with
        // x = (vg - vth - v)/(2 vt); cross-checked against FD.
        let dev = NFinFET::default();
        let p = dev.params;
        let b = BiasPoint::new(0.55, 0.3, 0.1);
        let expect = p.c_gate
            * (sigmoid((b.vg - p.vth - b.vs) / (2.0 * p.vt_thermal))
                + sigmoid((b.vg - p.vth - b.vd) / (2.0 * p.vt_thermal)))
            / 2.0;
        let j = dev.jacobian(b);
        assert!((j.dq[0][0] - expect).abs() < 1e-30);
        let f = fd_jacobian(&dev, b, 1e-6);
        assert!((f.dq[0][0] - expect).abs() / expect < 1e-6);
    }

    #[test]
    fn tfet_drain_charge_derivative_is_cgd() {
        let dev = NTfet::default();
        let j = dev.jacobian(BiasPoint::new(0.3, 0.7, 0.1));
        assert_eq!(j.dq[1][1], dev.params.c_gd);
    }

    #[test]
    fn finfet_antisymmetry_at_symmetry_point_derivatives() {
        let dev = NFinFET::default();
        let j = dev.jacobian(BiasPoint::new(0.6, 0.35, 0.35));
        assert!((j.di[0][1] + j.di[0][2]).abs() < 1e-18);
    }

    #[test]
    fn param_validation() {
        let mut p = RefFinFETParams::default();
        p.i_spec = 0.0;
        assert!(NFinFET::new(p).is_err());
        let mut t = RefTFETParams::default();
        t.c_gs = 3e-15; // violates c_gd > c_gs
        assert!(NTfet::new(t).is_err());
    }

    fn bias_strategy() -> impl Strategy<Value = BiasPoint> {
        (
            -1.0f64..1.0,
            -1.0f64..1.0,
            -1.0f64..1.0,
        )
            .prop_map(|(vg, vd, vs)| BiasPoint::new(vg, vd, vs))
    }

    proptest! {
        #[test]
        fn neutrality_exact(b in bias_strategy()) {
            for dev in [&NFinFET::default() as &dyn DeviceModel, &NTfet::default()] {
                let r = dev.eval(b);
                prop_assert_eq!(r.id + r.ig + r.is, 0.0);
                prop_assert_eq!(r.qg + r.qd + r.qs, 0.0);
            }
        }

        #[test]
        fn finfet_swap_antisymmetry_exact(b in bias_strategy()) {
            let dev = NFinFET::default();
            let r = dev.eval(b);
            let rs = dev.eval(b.swap_ds());
            prop_assert_eq!(r.id, -rs.id);
            prop_assert_eq!(r.qg, rs.qg);
            // Charge swap law (algebraic, not bit-exact by construction).
            prop_assert!((r.qd - rs.qs).abs() <= 1e-14 * r.qd.abs().max(1e-30));
        }

        #[test]
        fn mirror_identity_exact(b in bias_strategy()) {
            let n = NFinFET::default();
            let p = mirror_p(NFinFET::default());
            let rp = p.eval(b);
            let rn = n.eval(b.negated());
            prop_assert_eq!(rp.id, -rn.id);
            prop_assert_eq!(rp.qg, -rn.qg);
            prop_assert_eq!(rp.qd, -rn.qd);
            prop_assert_eq!(rp.qs, -rn.qs);
        }

        #[test]
        fn mirror_preserves_symmetry_point(vg in -1.0f64..1.0, v in -1.0f64..1.0) {
            let p = mirror_p(NFinFET::default());
            prop_assert_eq!(p.eval(BiasPoint::new(vg, v, v)).id, 0.0);
        }
    }
}
