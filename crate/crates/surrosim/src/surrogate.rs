//! Trained networks wrapped as 3-terminal device models.
//!
//! The wrapper restores the structure the raw regression cannot
//! guarantee on its own:
//!
//! * `ig = 0`, `is = -id`, `qs = -(qg + qd)` hold exactly at every
//!   bias by construction.
//! * Symmetric (FinFET-style) devices are evaluated only in their
//!   trained `vd >= vs` half. The drain current and the charge
//!   half-difference `(qd - qs)/2` are formed as canonical-orientation
//!   value minus the network's own prediction at the `vd = vs` seam,
//!   then sign-mapped. That keeps evaluation inside the training box,
//!   makes the d/s swap law exact, forces `id = 0` at `vd = vs`, and
//!   stays continuous across the seam.
//! * TFET-style devices dispatch between a forward and a reverse
//!   network with a narrow linear blend of physical outputs around
//!   `vd = vs`.
//! * p-type devices evaluate the n-type path at negated voltages and
//!   negate the outputs.
//!
//! Jacobians are exact chain-rule derivatives of the same maps, so the
//! simulator's conductance and capacitance stamps agree with finite
//! differences of `eval`.

use crate::dataset::{inverse_transform, InputNorm, RegionTag, TransformDescriptor};
use crate::mlp::{MLPParams, MlpError, ModelMeta, ModelRecord};
use crate::refdev::{BiasPoint, DeviceJacobian, DeviceModel, DeviceResponse, Polarity};
use crate::util::to_json_17;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use thiserror::Error;

pub const DEVICE_FILE_VERSION: u32 = 1;

/// Default half-width of the two-region blend window (volts).
pub const DEFAULT_BLEND_HALFWIDTH: f64 = 2e-3;

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error("incompatible networks: {0}")]
    Incompatible(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("device file error: {0}")]
    Format(String),
    #[error(transparent)]
    Mlp(#[from] MlpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateMode {
    SymmetricSwap,
    TwoRegion,
}

enum Nets {
    Symmetric {
        net: MLPParams,
    },
    TwoRegion {
        fwd: MLPParams,
        rev: MLPParams,
        blend_halfwidth: f64,
    },
}

/// A complete surrogate device: trained network(s) plus the transform
/// and normalization they were fitted under.
pub struct SurrogateDevice {
    polarity: Polarity,
    transform: TransformDescriptor,
    input_norm: InputNorm,
    nets: Nets,
    box_warning: AtomicBool,
}

impl SurrogateDevice {
    /// Builds a symmetric-swap device from one canonical-half network.
    pub fn from_symmetric_net(
        net: MLPParams,
        meta: &ModelMeta,
        polarity: Polarity,
    ) -> Result<Self, SurrogateError> {
        if meta.region_tag != RegionTag::SymmetricCanonical {
            return Err(SurrogateError::Incompatible(format!(
                "symmetric device needs a symmetric_canonical net, got {}",
                meta.region_tag
            )));
        }
        Ok(SurrogateDevice {
            polarity,
            transform: meta.transform,
            input_norm: meta.input_norm,
            nets: Nets::Symmetric { net },
            box_warning: AtomicBool::new(false),
        })
    }

    /// Builds a two-region device from forward and reverse networks
    /// sharing transform and normalization metadata.
    pub fn from_two_region(
        fwd: (MLPParams, ModelMeta),
        rev: (MLPParams, ModelMeta),
        polarity: Polarity,
        blend_halfwidth: f64,
    ) -> Result<Self, SurrogateError> {
        let (fwd_net, fwd_meta) = fwd;
        let (rev_net, rev_meta) = rev;
        if fwd_meta.region_tag != RegionTag::TfetFwd || rev_meta.region_tag != RegionTag::TfetRev {
            return Err(SurrogateError::Incompatible(format!(
                "expected tfet_fwd + tfet_rev nets, got {} + {}",
                fwd_meta.region_tag, rev_meta.region_tag
            )));
        }
        if fwd_meta.transform != rev_meta.transform || fwd_meta.input_norm != rev_meta.input_norm {
            return Err(SurrogateError::Incompatible(
                "two-region nets must share transform and normalization".into(),
            ));
        }
        if !(blend_halfwidth > 0.0) {
            return Err(SurrogateError::Incompatible(format!(
                "blend halfwidth must be positive, got {blend_halfwidth}"
            )));
        }
        Ok(SurrogateDevice {
            polarity,
            transform: fwd_meta.transform,
            input_norm: fwd_meta.input_norm,
            nets: Nets::TwoRegion {
                fwd: fwd_net,
                rev: rev_net,
                blend_halfwidth,
            },
        box_warning: AtomicBool::new(false),
        })
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }

    pub fn mode(&self) -> SurrogateMode {
        match self.nets {
            Nets::Symmetric { .. } => SurrogateMode::SymmetricSwap,
            Nets::TwoRegion { .. } => SurrogateMode::TwoRegion,
        }
    }

    /// Same networks re-tagged with the other carrier polarity.
    pub fn with_polarity(&self, polarity: Polarity) -> Self {
        SurrogateDevice {
            polarity,
            transform: self.transform,
            input_norm: self.input_norm,
            nets: match &self.nets {
                Nets::Symmetric { net } => Nets::Symmetric { net: net.clone() },
                Nets::TwoRegion {
                    fwd,
                    rev,
                    blend_halfwidth,
                } => Nets::TwoRegion {
                    fwd: fwd.clone(),
                    rev: rev.clone(),
                    blend_halfwidth: *blend_halfwidth,
                },
            },
            box_warning: AtomicBool::new(false),
        }
    }

    fn normalize(&self, vg: f64, vd: f64, vs: f64) -> [f64; 3] {
        let n = &self.input_norm;
        let x = [
            (vg - n.offset[0]) / n.half_range[0],
            (vd - n.offset[1]) / n.half_range[1],
            (vs - n.offset[2]) / n.half_range[2],
        ];
        if x.iter().any(|v| v.abs() > 1.0 + 1e-9)
            && !self.box_warning.swap(true, Ordering::Relaxed)
        {
            log::warn!(
                "surrogate evaluated outside its training box (normalized inputs {x:?}); \
                 extrapolating"
            );
        }
        x
    }

    /// Physical (id, qg, qd) plus their derivatives from one network at
    /// raw terminal coordinates (no symmetry handling).
    fn net_phys(&self, net: &MLPParams, vg: f64, vd: f64, vs: f64) -> ([f64; 3], [[f64; 3]; 3]) {
        let x = self.normalize(vg, vd, vs);
        let y = net.forward(x);
        let jn = net.input_jacobian(x);
        let t = &self.transform;
        let (id, qg, qd) = inverse_transform(y, t);
        let phys = [id, qg, qd];
        // Chain rule: d phys / d (vg, vd, vs).
        let dout = [t.i_ref * y[0].cosh(), t.q_ref, t.q_ref];
        let half = &self.input_norm.half_range;
        let mut j = [[0.0; 3]; 3];
        for (r, row) in j.iter_mut().enumerate() {
            for (c, val) in row.iter_mut().enumerate() {
                *val = dout[r] * jn[r][c] / half[c];
            }
        }
        (phys, j)
    }

    /// Symmetric-swap evaluation in n-type coordinates: canonical-half
    /// network value minus its own seam prediction, sign-mapped.
    fn eval_symmetric(&self, net: &MLPParams, b: BiasPoint) -> (DeviceResponse, DeviceJacobian) {
        let swapped = b.vd < b.vs;
        let (hi, lo, sign) = if swapped {
            (b.vs, b.vd, -1.0)
        } else {
            (b.vd, b.vs, 1.0)
        };
        let mid = 0.5 * (hi + lo);
        let (pc, jc) = self.net_phys(net, b.vg, hi, lo);
        let (ps, js) = self.net_phys(net, b.vg, mid, mid);

        // Map derivative columns from (vg, hi, lo) to (vg, vd, vs).
        let col = |j: &[[f64; 3]; 3], r: usize, term: usize| -> [f64; 3] {
            // term: 0 -> vg, 1 -> hi, 2 -> lo columns of the canonical net.
            let raw = [j[r][0], j[r][1], j[r][2]];
            match term {
                0 => [raw[0], 0.0, 0.0],
                1 => {
                    if swapped {
                        [0.0, 0.0, raw[1]]
                    } else {
                        [0.0, raw[1], 0.0]
                    }
                }
                _ => {
                    if swapped {
                        [0.0, raw[2], 0.0]
                    } else {
                        [0.0, 0.0, raw[2]]
                    }
                }
            }
        };
        // Full (vg, vd, vs) derivative of a canonical-net row.
        let dcan = |r: usize| -> [f64; 3] {
            let a = col(&jc, r, 0);
            let b_ = col(&jc, r, 1);
            let c = col(&jc, r, 2);
            [a[0] + b_[0] + c[0], a[1] + b_[1] + c[1], a[2] + b_[2] + c[2]]
        };
        // Seam-net derivative: both drain and source columns feel dm/dv = 1/2.
        let dseam = |r: usize| -> [f64; 3] {
            let dm = 0.5 * (js[r][1] + js[r][2]);
            [js[r][0], dm, dm]
        };

        let id = sign * (pc[0] - ps[0]);
        let did_can = dcan(0);
        let did_seam = dseam(0);
        let did = [
            sign * (did_can[0] - did_seam[0]),
            sign * (did_can[1] - did_seam[1]),
            sign * (did_can[2] - did_seam[2]),
        ];

        // Gate charge is swap-invariant: take the canonical value as is.
        let qg = pc[1];
        let dqg = dcan(1);

        // Charge half-difference D = qd + qg/2 is antisymmetric under
        // the swap; treat it exactly like the current.
        let d_can = pc[2] + 0.5 * pc[1];
        let d_seam = ps[2] + 0.5 * ps[1];
        let d = sign * (d_can - d_seam);
        let dqd_can = dcan(2);
        let dqg_can = dcan(1);
        let dqd_seam = dseam(2);
        let dqg_seam = dseam(1);
        let mut dd = [0.0; 3];
        for k in 0..3 {
            dd[k] = sign
                * ((dqd_can[k] + 0.5 * dqg_can[k]) - (dqd_seam[k] + 0.5 * dqg_seam[k]));
        }

        let qd = -0.5 * qg + d;
        let dqd = [
            -0.5 * dqg[0] + dd[0],
            -0.5 * dqg[1] + dd[1],
            -0.5 * dqg[2] + dd[2],
        ];

        (
            DeviceResponse::from_id_qg_qd(id, qg, qd),
            DeviceJacobian::from_did_dqg_dqd(did, dqg, dqd),
        )
    }

    fn eval_two_region(
        &self,
        fwd: &MLPParams,
        rev: &MLPParams,
        hw: f64,
        b: BiasPoint,
    ) -> (DeviceResponse, DeviceJacobian) {
        let u = b.vd - b.vs;
        let pack = |p: [f64; 3], j: [[f64; 3]; 3]| {
            (
                DeviceResponse::from_id_qg_qd(p[0], p[1], p[2]),
                DeviceJacobian::from_did_dqg_dqd(j[0], j[1], j[2]),
            )
        };
        if u >= hw {
            let (p, j) = self.net_phys(fwd, b.vg, b.vd, b.vs);
            pack(p, j)
        } else if u <= -hw {
            let (p, j) = self.net_phys(rev, b.vg, b.vd, b.vs);
            pack(p, j)
        } else {
            let (pf, jf) = self.net_phys(fwd, b.vg, b.vd, b.vs);
            let (pr, jr) = self.net_phys(rev, b.vg, b.vd, b.vs);
            let w = (u + hw) / (2.0 * hw);
            let dw = [0.0, 1.0 / (2.0 * hw), -1.0 / (2.0 * hw)];
            let mut p = [0.0; 3];
            let mut j = [[0.0; 3]; 3];
            for r in 0..3 {
                p[r] = w * pf[r] + (1.0 - w) * pr[r];
                for c in 0..3 {
                    j[r][c] = w * jf[r][c]
                        + (1.0 - w) * jr[r][c]
                        + dw[c] * (pf[r] - pr[r]);
                }
            }
            pack(p, j)
        }
    }

    fn eval_n(&self, b: BiasPoint) -> (DeviceResponse, DeviceJacobian) {
        match &self.nets {
            Nets::Symmetric { net } => self.eval_symmetric(net, b),
            Nets::TwoRegion {
                fwd,
                rev,
                blend_halfwidth,
            } => self.eval_two_region(fwd, rev, *blend_halfwidth, b),
        }
    }

    /// Serializes the device (mode, polarity, embedded network records)
    /// as a single JSON file.
    pub fn save(&self, path: &Path) -> Result<(), SurrogateError> {
        let meta_for = |tag: RegionTag| ModelMeta {
            transform: self.transform,
            input_norm: self.input_norm,
            region_tag: tag,
            polarity: self.polarity,
        };
        let (mode, blend, nets) = match &self.nets {
            Nets::Symmetric { net } => (
                SurrogateMode::SymmetricSwap,
                None,
                vec![ModelRecord::from_params(
                    net,
                    &meta_for(RegionTag::SymmetricCanonical),
                )],
            ),
            Nets::TwoRegion {
                fwd,
                rev,
                blend_halfwidth,
            } => (
                SurrogateMode::TwoRegion,
                Some(*blend_halfwidth),
                vec![
                    ModelRecord::from_params(fwd, &meta_for(RegionTag::TfetFwd)),
                    ModelRecord::from_params(rev, &meta_for(RegionTag::TfetRev)),
                ],
            ),
        };
        let file = DeviceFile {
            version: DEVICE_FILE_VERSION,
            mode,
            polarity: self.polarity,
            blend_halfwidth: blend,
            nets,
        };
        let json = to_json_17(&file).map_err(|e| SurrogateError::Format(e.to_string()))?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SurrogateError> {
        let text = fs::read_to_string(path)?;
        let file: DeviceFile =
            serde_json::from_str(&text).map_err(|e| SurrogateError::Format(e.to_string()))?;
        if file.version != DEVICE_FILE_VERSION {
            return Err(SurrogateError::Format(format!(
                "unsupported device file version {}",
                file.version
            )));
        }
        let mut nets = Vec::new();
        for record in file.nets {
            nets.push(record.into_params()?);
        }
        match file.mode {
            SurrogateMode::SymmetricSwap => {
                let (net, meta) = nets
                    .pop()
                    .filter(|_| nets.is_empty())
                    .ok_or_else(|| SurrogateError::Format("expected exactly one net".into()))?;
                SurrogateDevice::from_symmetric_net(net, &meta, file.polarity)
            }
            SurrogateMode::TwoRegion => {
                if nets.len() != 2 {
                    return Err(SurrogateError::Format(format!(
                        "two-region device needs 2 nets, got {}",
                        nets.len()
                    )));
                }
                let rev = nets.pop().expect("len checked");
                let fwd = nets.pop().expect("len checked");
                SurrogateDevice::from_two_region(
                    fwd,
                    rev,
                    file.polarity,
                    file.blend_halfwidth.unwrap_or(DEFAULT_BLEND_HALFWIDTH),
                )
            }
        }
    }
}

impl DeviceModel for SurrogateDevice {
    fn eval(&self, b: BiasPoint) -> DeviceResponse {
        match self.polarity {
            Polarity::N => self.eval_n(b).0,
            Polarity::P => self.eval_n(b.negated()).0.negated(),
        }
    }

    fn jacobian(&self, b: BiasPoint) -> DeviceJacobian {
        match self.polarity {
            Polarity::N => self.eval_n(b).1,
            Polarity::P => self.eval_n(b.negated()).1,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct DeviceFile {
    version: u32,
    mode: SurrogateMode,
    polarity: Polarity,
    blend_halfwidth: Option<f64>,
    nets: Vec<ModelRecord>,
}
