//! Training-data generation and pre-processing.
//!
//! Raw device responses have badly skewed distributions (currents span
//! many decades), so targets are compressed before training: the drain
//! current through a sign-preserving `asinh(id / i_ref)` and the two
//! independent charges through linear scaling. Inputs are affinely
//! mapped to [-1, 1] over the sampled range. Symmetric devices keep
//! only the `vd >= vs` half of the grid; TFET data is split into
//! forward and reverse regimes that are trained separately.

use crate::refdev::{BiasPoint, DeviceModel, DeviceResponse};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed dataset file at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Target transform scales: `asinh(id / i_ref)` for current,
/// `q / q_ref` for charges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformDescriptor {
    pub i_ref: f64,
    pub q_ref: f64,
}

impl Default for TransformDescriptor {
    fn default() -> Self {
        TransformDescriptor {
            i_ref: 1e-9,
            q_ref: 1e-15,
        }
    }
}

impl TransformDescriptor {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if !(self.i_ref > 0.0 && self.q_ref > 0.0) {
            return Err(DatasetError::Config(format!(
                "transform scales must be positive, got i_ref={}, q_ref={}",
                self.i_ref, self.q_ref
            )));
        }
        Ok(())
    }
}

/// Per-input affine normalization to [-1, 1]: `(v - offset) / half`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub offset: [f64; 3],
    pub half_range: [f64; 3],
}

impl InputNorm {
    pub fn from_range(v_min: f64, v_max: f64) -> Self {
        let off = 0.5 * (v_min + v_max);
        let half = 0.5 * (v_max - v_min);
        InputNorm {
            offset: [off; 3],
            half_range: [half.max(f64::MIN_POSITIVE); 3],
        }
    }

    pub fn normalize(&self, b: BiasPoint) -> [f64; 3] {
        [
            (b.vg - self.offset[0]) / self.half_range[0],
            (b.vd - self.offset[1]) / self.half_range[1],
            (b.vs - self.offset[2]) / self.half_range[2],
        ]
    }
}

/// Which slice of bias space a dataset covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionTag {
    SymmetricCanonical,
    TfetFwd,
    TfetRev,
    Unrestricted,
}

impl fmt::Display for RegionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RegionTag::SymmetricCanonical => "symmetric_canonical",
            RegionTag::TfetFwd => "tfet_fwd",
            RegionTag::TfetRev => "tfet_rev",
            RegionTag::Unrestricted => "unrestricted",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for RegionTag {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "symmetric_canonical" => Ok(RegionTag::SymmetricCanonical),
            "tfet_fwd" => Ok(RegionTag::TfetFwd),
            "tfet_rev" => Ok(RegionTag::TfetRev),
            "unrestricted" => Ok(RegionTag::Unrestricted),
            other => Err(format!("unknown region tag `{other}`")),
        }
    }
}

/// One bias point with its transformed targets (asinh-current, scaled
/// qg, scaled qd).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub bias: BiasPoint,
    pub targets: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub input_norm: InputNorm,
    pub transform: TransformDescriptor,
    pub region_tag: RegionTag,
}

/// (asinh(id/i_ref), qg/q_ref, qd/q_ref); strictly monotone and
/// invertible in each coordinate.
pub fn transform_targets(raw: &DeviceResponse, t: &TransformDescriptor) -> [f64; 3] {
    [
        (raw.id / t.i_ref).asinh(),
        raw.qg / t.q_ref,
        raw.qd / t.q_ref,
    ]
}

/// Exact inverse of [`transform_targets`], returning (id, qg, qd).
pub fn inverse_transform(y: [f64; 3], t: &TransformDescriptor) -> (f64, f64, f64) {
    (y[0].sinh() * t.i_ref, y[1] * t.q_ref, y[2] * t.q_ref)
}

fn grid_axis(v_min: f64, v_max: f64, step: f64) -> Result<Vec<f64>, DatasetError> {
    if !(v_max > v_min) || !(step > 0.0) {
        return Err(DatasetError::Config(format!(
            "invalid grid range [{v_min}, {v_max}] with step {step}"
        )));
    }
    let ratio = (v_max - v_min) / step;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-9 {
        return Err(DatasetError::Config(format!(
            "grid span {} is not an integral multiple of step {step}",
            v_max - v_min
        )));
    }
    let n = n as usize;
    // Endpoint-exact axis values; identical arrays are used for vd and
    // vs so the vd = vs seam compares bit-equal.
    Ok((0..=n)
        .map(|i| v_min + (i as f64) * (v_max - v_min) / (n as f64))
        .collect())
}

/// Cartesian bias grid over the three terminals, evaluated and
/// transformed. For the 0..0.8 V, 50 mV default this yields 17^3 =
/// 4913 raw points.
pub fn generate_grid<M: DeviceModel>(
    evaluator: &M,
    v_min: f64,
    v_max: f64,
    step: f64,
) -> Result<Dataset, DatasetError> {
    let transform = TransformDescriptor::default();
    transform.validate()?;
    let axis = grid_axis(v_min, v_max, step)?;
    let mut samples = Vec::with_capacity(axis.len().pow(3));
    for &vg in &axis {
        for &vd in &axis {
            for &vs in &axis {
                let bias = BiasPoint::new(vg, vd, vs);
                let raw = evaluator.eval(bias);
                samples.push(Sample {
                    bias,
                    targets: transform_targets(&raw, &transform),
                });
            }
        }
    }
    Ok(Dataset {
        samples,
        input_norm: InputNorm::from_range(v_min, v_max),
        transform,
        region_tag: RegionTag::Unrestricted,
    })
}

/// Keeps only `vd >= vs` samples of a symmetric device; the dropped
/// half is recoverable through the swap rule. Idempotent.
pub fn canonicalize_symmetric(ds: &Dataset) -> Dataset {
    Dataset {
        samples: ds
            .samples
            .iter()
            .copied()
            .filter(|s| s.bias.vd >= s.bias.vs)
            .collect(),
        input_norm: ds.input_norm,
        transform: ds.transform,
        region_tag: RegionTag::SymmetricCanonical,
    }
}

/// Splits into forward (`vd >= vs`) and reverse (`vd <= vs`) regime
/// datasets; the `vd = vs` boundary appears in both so each network
/// sees the seam.
pub fn split_regions_tfet(ds: &Dataset) -> (Dataset, Dataset) {
    let fwd = Dataset {
        samples: ds
            .samples
            .iter()
            .copied()
            .filter(|s| s.bias.vd >= s.bias.vs)
            .collect(),
        input_norm: ds.input_norm,
        transform: ds.transform,
        region_tag: RegionTag::TfetFwd,
    };
    let rev = Dataset {
        samples: ds
            .samples
            .iter()
            .copied()
            .filter(|s| s.bias.vd <= s.bias.vs)
            .collect(),
        input_norm: ds.input_norm,
        transform: ds.transform,
        region_tag: RegionTag::TfetRev,
    };
    (fwd, rev)
}

/// Uniform random biases from a seeded generator; reproducible for a
/// fixed seed.
pub fn sample_random<M: DeviceModel>(
    evaluator: &M,
    v_min: f64,
    v_max: f64,
    count: usize,
    seed: u64,
) -> Result<Dataset, DatasetError> {
    if count == 0 {
        return Err(DatasetError::Config("sample count must be positive".into()));
    }
    if v_max < v_min {
        return Err(DatasetError::Config(format!(
            "invalid range [{v_min}, {v_max}]"
        )));
    }
    let transform = TransformDescriptor::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = v_max - v_min;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let vg = v_min + span * rng.gen::<f64>();
        let vd = v_min + span * rng.gen::<f64>();
        let vs = v_min + span * rng.gen::<f64>();
        let bias = BiasPoint::new(vg, vd, vs);
        let raw = evaluator.eval(bias);
        samples.push(Sample {
            bias,
            targets: transform_targets(&raw, &transform),
        });
    }
    Ok(Dataset {
        samples,
        input_norm: InputNorm::from_range(v_min, v_max),
        transform,
        region_tag: RegionTag::Unrestricted,
    })
}

/// Deterministic subsample: a seeded shuffle of the index range,
/// truncated to `count`. Prefixes nest, so growing `count` only adds
/// samples.
pub fn subsample(ds: &Dataset, count: usize, seed: u64) -> Dataset {
    let mut idx: Vec<usize> = (0..ds.samples.len()).collect();
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    idx.truncate(count.min(ds.samples.len()));
    Dataset {
        samples: idx.into_iter().map(|i| ds.samples[i]).collect(),
        input_norm: ds.input_norm,
        transform: ds.transform,
        region_tag: ds.region_tag,
    }
}

fn fmt17(x: f64) -> String {
    crate::util::fmt_f64(x)
}

/// Writes the dataset as CSV: `# key=value` metadata lines, a column
/// header, then one row per sample at full double precision.
pub fn save_csv(ds: &Dataset, path: &Path) -> Result<(), DatasetError> {
    let mut out = String::new();
    out.push_str(&format!("# i_ref={}\n", fmt17(ds.transform.i_ref)));
    out.push_str(&format!("# q_ref={}\n", fmt17(ds.transform.q_ref)));
    let n = &ds.input_norm;
    out.push_str(&format!(
        "# input_norm={},{},{},{},{},{}\n",
        fmt17(n.offset[0]),
        fmt17(n.half_range[0]),
        fmt17(n.offset[1]),
        fmt17(n.half_range[1]),
        fmt17(n.offset[2]),
        fmt17(n.half_range[2]),
    ));
    out.push_str(&format!("# region_tag={}\n", ds.region_tag));
    out.push_str("vg,vd,vs,t0,t1,t2\n");
    for s in &ds.samples {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            fmt17(s.bias.vg),
            fmt17(s.bias.vd),
            fmt17(s.bias.vs),
            fmt17(s.targets[0]),
            fmt17(s.targets[1]),
            fmt17(s.targets[2]),
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_csv(path: &Path) -> Result<Dataset, DatasetError> {
    let text = fs::read_to_string(path)?;
    let mut i_ref = None;
    let mut q_ref = None;
    let mut input_norm = None;
    let mut region_tag = None;
    let mut samples = Vec::new();
    let mut header_seen = false;

    for (lineno, line) in text.lines().enumerate() {
        let line_num = lineno + 1;
        let parse_err = |msg: String| DatasetError::Parse {
            line: line_num,
            msg,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            let meta = meta.trim();
            let (key, value) = meta
                .split_once('=')
                .ok_or_else(|| parse_err(format!("metadata line without `=`: {meta}")))?;
            match key.trim() {
                "i_ref" => {
                    i_ref = Some(value.trim().parse::<f64>().map_err(|e| {
                        parse_err(format!("bad i_ref value `{}`: {e}", value.trim()))
                    })?)
                }
                "q_ref" => {
                    q_ref = Some(value.trim().parse::<f64>().map_err(|e| {
                        parse_err(format!("bad q_ref value `{}`: {e}", value.trim()))
                    })?)
                }
                "input_norm" => {
                    let vals: Result<Vec<f64>, _> =
                        value.trim().split(',').map(|v| v.trim().parse()).collect();
                    let vals =
                        vals.map_err(|e| parse_err(format!("bad input_norm: {e}")))?;
                    if vals.len() != 6 {
                        return Err(parse_err(format!(
                            "input_norm needs 6 values, got {}",
                            vals.len()
                        )));
                    }
                    input_norm = Some(InputNorm {
                        offset: [vals[0], vals[2], vals[4]],
                        half_range: [vals[1], vals[3], vals[5]],
                    });
                }
                "region_tag" => {
                    region_tag =
                        Some(value.trim().parse::<RegionTag>().map_err(parse_err)?)
                }
                other => {
                    return Err(parse_err(format!("unknown metadata key `{other}`")));
                }
            }
            continue;
        }
        if !header_seen {
            if line != "vg,vd,vs,t0,t1,t2" {
                return Err(parse_err(format!("expected column header, got `{line}`")));
            }
            header_seen = true;
            continue;
        }
        let fields: Result<Vec<f64>, _> = line.split(',').map(|v| v.trim().parse()).collect();
        let fields = fields.map_err(|e| parse_err(format!("bad data row: {e}")))?;
        if fields.len() != 6 {
            return Err(parse_err(format!(
                "expected 6 columns, got {}",
                fields.len()
            )));
        }
        samples.push(Sample {
            bias: BiasPoint::new(fields[0], fields[1], fields[2]),
            targets: [fields[3], fields[4], fields[5]],
        });
    }

    let missing = |what: &str| DatasetError::Parse {
        line: 0,
        msg: format!("missing `{what}` metadata header"),
    };
    let transform = TransformDescriptor {
        i_ref: i_ref.ok_or_else(|| missing("i_ref"))?,
        q_ref: q_ref.ok_or_else(|| missing("q_ref"))?,
    };
    transform.validate()?;
    if !header_seen {
        return Err(DatasetError::Parse {
            line: 0,
            msg: "missing column header".into(),
        });
    }
    Ok(Dataset {
        samples,
        input_norm: input_norm.ok_or_else(|| missing("input_norm"))?,
        transform,
        region_tag: region_tag.ok_or_else(|| missing("region_tag"))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refdev::{NFinFET, NTfet};
    use proptest::prelude::*;

    #[test]
    fn finfet_grid_counts() {
        let dev = NFinFET::default();
        let ds = generate_grid(&dev, 0.0, 0.8, 0.05).unwrap();
        assert_eq!(ds.samples.len(), 4913);
        let canon = canonicalize_symmetric(&ds);
        assert_eq!(canon.samples.len(), 2601);
        assert_eq!(canon.region_tag, RegionTag::SymmetricCanonical);
        // Idempotent.
        let again = canonicalize_symmetric(&canon);
        assert_eq!(again.samples, canon.samples);
    }

    #[test]
    fn tfet_grid_counts_and_split() {
        let dev = NTfet::default();
        let ds = generate_grid(&dev, 0.0, 0.9, 0.05).unwrap();
        assert_eq!(ds.samples.len(), 6859);
        let (fwd, rev) = split_regions_tfet(&ds);
        assert_eq!(fwd.samples.len(), 3610);
        assert_eq!(rev.samples.len(), 3610);
        assert!(fwd.samples.iter().all(|s| s.bias.vd >= s.bias.vs));
        assert!(rev.samples.iter().all(|s| s.bias.vd <= s.bias.vs));
    }

    #[test]
    fn degenerate_two_point_grid() {
        let dev = NFinFET::default();
        let ds = generate_grid(&dev, 0.0, 0.8, 0.8).unwrap();
        assert_eq!(ds.samples.len(), 8);
        assert_eq!(canonicalize_symmetric(&ds).samples.len(), 6);
    }

    #[test]
    fn non_integral_step_rejected() {
        let dev = NFinFET::default();
        let err = generate_grid(&dev, 0.0, 0.8, 0.0517).unwrap_err();
        assert!(matches!(err, DatasetError::Config(_)));
    }

    #[test]
    fn normalized_inputs_within_unit_box() {
        let dev = NFinFET::default();
        let ds = generate_grid(&dev, 0.0, 0.8, 0.05).unwrap();
        for s in &ds.samples {
            for x in ds.input_norm.normalize(s.bias) {
                assert!((-1.0..=1.0).contains(&x), "{x}");
            }
        }
    }

    #[test]
    fn dropped_half_reconstructs_via_swap_rule() {
        let dev = NFinFET::default();
        let ds = generate_grid(&dev, 0.0, 0.4, 0.2).unwrap();
        for s in ds.samples.iter().filter(|s| s.bias.vd < s.bias.vs) {
            use crate::refdev::DeviceModel;
            let kept = dev.eval(s.bias.swap_ds());
            let direct = dev.eval(s.bias);
            assert_eq!(direct.id, -kept.id);
            assert_eq!(direct.qg, kept.qg);
            assert!((direct.qd - kept.qs).abs() <= 1e-14 * direct.qd.abs().max(1e-30));
        }
    }

    #[test]
    fn asinh_transform_examples() {
        let t = TransformDescriptor::default();
        let zero = transform_targets(&DeviceResponse::from_id_qg_qd(0.0, 0.0, 0.0), &t);
        assert_eq!(zero, [0.0; 3]);
        let one = transform_targets(&DeviceResponse::from_id_qg_qd(1e-9, 0.0, 0.0), &t);
        assert!((one[0] - 0.881373587019543).abs() < 1e-15);
        let (id, qg, qd) = inverse_transform([0.881373587019543, 1.0, 1.0], &t);
        assert!((id - 1e-9).abs() < 1e-24);
        assert_eq!(qg, 1e-15);
        assert_eq!(qd, 1e-15);
    }

    #[test]
    fn random_sampling_is_deterministic() {
        let dev = NTfet::default();
        let a = sample_random(&dev, 0.0, 0.9, 500, 42).unwrap();
        let b = sample_random(&dev, 0.0, 0.9, 500, 42).unwrap();
        assert_eq!(a.samples, b.samples);
        let c = sample_random(&dev, 0.0, 0.9, 500, 43).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn degenerate_random_range() {
        let dev = NFinFET::default();
        let ds = sample_random(&dev, 0.4, 0.4, 10, 1).unwrap();
        assert!(ds
            .samples
            .iter()
            .all(|s| s.bias.vg == 0.4 && s.bias.vd == 0.4 && s.bias.vs == 0.4));
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let dev = NFinFET::default();
        let ds = canonicalize_symmetric(&generate_grid(&dev, 0.0, 0.8, 0.2).unwrap());
        let dir = std::env::temp_dir().join("surrosim_ds_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.csv");
        save_csv(&ds, &path).unwrap();
        let loaded = load_csv(&path).unwrap();
        assert_eq!(ds, loaded);
        // Byte-stable on re-save.
        let bytes1 = std::fs::read(&path).unwrap();
        save_csv(&loaded, &path).unwrap();
        assert_eq!(bytes1, std::fs::read(&path).unwrap());
    }

    #[test]
    fn empty_dataset_round_trips_as_header_only() {
        let ds = Dataset {
            samples: vec![],
            input_norm: InputNorm::from_range(0.0, 0.8),
            transform: TransformDescriptor::default(),
            region_tag: RegionTag::Unrestricted,
        };
        let dir = std::env::temp_dir().join("surrosim_ds_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("empty.csv");
        save_csv(&ds, &path).unwrap();
        let loaded = load_csv(&path).unwrap();
        assert_eq!(ds, loaded);
    }

    #[test]
    fn corrupted_header_is_an_error() {
        let dir = std::env::temp_dir().join("surrosim_ds_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("corrupt.csv");
        std::fs::write(&path, "# i_ref=not_a_number\nvg,vd,vs,t0,t1,t2\n").unwrap();
        assert!(matches!(
            load_csv(&path),
            Err(DatasetError::Parse { line: 1, .. })
        ));
        std::fs::write(&path, "vg,vd,vs\n0,0,0\n").unwrap();
        assert!(load_csv(&path).is_err());
    }

    #[test]
    fn split_of_all_forward_dataset_leaves_boundary_only_reverse() {
        let dev = NTfet::default();
        let ds = generate_grid(&dev, 0.0, 0.4, 0.2).unwrap();
        let (fwd, _) = split_regions_tfet(&ds);
        let (_, rev2) = split_regions_tfet(&fwd);
        assert!(rev2.samples.iter().all(|s| s.bias.vd == s.bias.vs));
    }

    #[test]
    fn subsample_prefixes_nest() {
        let dev = NFinFET::default();
        let ds = generate_grid(&dev, 0.0, 0.8, 0.1).unwrap();
        let small = subsample(&ds, 50, 7);
        let large = subsample(&ds, 120, 7);
        assert_eq!(&large.samples[..50], &small.samples[..]);
    }

    proptest! {
        #[test]
        fn transform_round_trip(
            id in -1e-3f64..1e-3,
            qg in -5e-15f64..5e-15,
            qd in -5e-15f64..5e-15,
        ) {
            let t = TransformDescriptor::default();
            let y = transform_targets(&DeviceResponse::from_id_qg_qd(id, qg, qd), &t);
            let (id2, qg2, qd2) = inverse_transform(y, &t);
            prop_assert!((id - id2).abs() <= 1e-12 * id.abs().max(1e-300));
            prop_assert!((qg - qg2).abs() <= 1e-12 * qg.abs().max(1e-300));
            prop_assert!((qd - qd2).abs() <= 1e-12 * qd.abs().max(1e-300));
        }
    }
}
