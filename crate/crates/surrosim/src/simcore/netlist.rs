//! Netlist representation and the line-oriented text parser.
//!
//! Grammar (one statement per line, `*` starts a comment, keywords are
//! case-insensitive, numbers accept engineering suffixes
//! f/p/n/u/m/k/meg):
//!
//! ```text
//! V<name> <n+> <n-> dc <val>
//! V<name> <n+> <n-> pwl <t0> <v0> <t1> <v1> ...
//! R<name> <n1> <n2> <ohms>
//! C<name> <n1> <n2> <farads>
//! M<name> <d> <g> <s> <model_id>
//! .model <model_id> <kind> [file=<path>]   kinds: nfin_ref | pfin_ref |
//!                                          ntfet_ref | ptfet_ref | nn
//! .op
//! .dc <Vname> <start> <stop> <step>
//! .tran <tstep> <tstop>
//! .print <v(node)|i(Vname)> ...
//! .end
//! ```
//!
//! Node `0` is the mandatory ground.

use crate::refdev::{mirror_p, DeviceModel, NFinFET, NTfet, RefFinFETParams, RefTFETParams};
use crate::surrogate::SurrogateDevice;
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetlistError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing .end directive")]
    MissingEnd,
    #[error("undefined model `{model}` referenced at line {line}")]
    UndefinedModel { model: String, line: usize },
    #[error("model `{model}`: {msg}")]
    Model { model: String, msg: String },
    #[error("netlist has no connection to ground node `0`")]
    NoGround,
}

/// Source waveform: constant, or piecewise-linear in time.
#[derive(Debug, Clone, PartialEq)]
pub enum Waveform {
    Dc(f64),
    Pwl(Vec<(f64, f64)>),
}

impl Waveform {
    /// Instantaneous value; PWL holds its end values outside the
    /// breakpoint range.
    pub fn value_at(&self, t: f64) -> f64 {
        match self {
            Waveform::Dc(v) => *v,
            Waveform::Pwl(points) => {
                if points.is_empty() {
                    return 0.0;
                }
                if t <= points[0].0 {
                    return points[0].1;
                }
                for win in points.windows(2) {
                    let (t0, v0) = win[0];
                    let (t1, v1) = win[1];
                    if t <= t1 {
                        if t1 == t0 {
                            return v1;
                        }
                        return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
                    }
                }
                points.last().unwrap().1
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Element {
    Resistor {
        name: String,
        n1: String,
        n2: String,
        ohms: f64,
    },
    Capacitor {
        name: String,
        n1: String,
        n2: String,
        farads: f64,
    },
    VSource {
        name: String,
        np: String,
        nm: String,
        wave: Waveform,
    },
    Device {
        name: String,
        d: String,
        g: String,
        s: String,
        model: String,
    },
}

impl Element {
    pub fn name(&self) -> &str {
        match self {
            Element::Resistor { name, .. }
            | Element::Capacitor { name, .. }
            | Element::VSource { name, .. }
            | Element::Device { name, .. } => name,
        }
    }

    pub fn nodes(&self) -> Vec<&str> {
        match self {
            Element::Resistor { n1, n2, .. } | Element::Capacitor { n1, n2, .. } => {
                vec![n1, n2]
            }
            Element::VSource { np, nm, .. } => vec![np, nm],
            Element::Device { d, g, s, .. } => vec![d, g, s],
        }
    }
}

/// Model binding: reference-device kinds carry their parameters, `nn`
/// kinds carry a device file path, and programmatically built netlists
/// may bind any model object directly.
#[derive(Clone)]
pub enum ModelDef {
    NFinRef(RefFinFETParams),
    PFinRef(RefFinFETParams),
    NTfetRef(RefTFETParams),
    PTfetRef(RefTFETParams),
    NnFile(PathBuf),
    Inline(Arc<dyn DeviceModel>),
}

impl fmt::Debug for ModelDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelDef::NFinRef(p) => write!(f, "NFinRef({p:?})"),
            ModelDef::PFinRef(p) => write!(f, "PFinRef({p:?})"),
            ModelDef::NTfetRef(p) => write!(f, "NTfetRef({p:?})"),
            ModelDef::PTfetRef(p) => write!(f, "PTfetRef({p:?})"),
            ModelDef::NnFile(p) => write!(f, "NnFile({p:?})"),
            ModelDef::Inline(_) => write!(f, "Inline(<model>)"),
        }
    }
}

impl ModelDef {
    /// Instantiates the model. `base_dir` anchors relative `nn` file
    /// paths (typically the netlist's directory).
    pub fn resolve(&self, base_dir: &Path) -> Result<Arc<dyn DeviceModel>, String> {
        match self {
            ModelDef::NFinRef(p) => Ok(Arc::new(
                NFinFET::new(*p).map_err(|e| e.to_string())?,
            )),
            ModelDef::PFinRef(p) => Ok(Arc::new(mirror_p(
                NFinFET::new(*p).map_err(|e| e.to_string())?,
            ))),
            ModelDef::NTfetRef(p) => {
                Ok(Arc::new(NTfet::new(*p).map_err(|e| e.to_string())?))
            }
            ModelDef::PTfetRef(p) => Ok(Arc::new(mirror_p(
                NTfet::new(*p).map_err(|e| e.to_string())?,
            ))),
            ModelDef::NnFile(path) => {
                let full = if path.is_absolute() {
                    path.clone()
                } else {
                    base_dir.join(path)
                };
                let dev = SurrogateDevice::load(&full)
                    .map_err(|e| format!("loading `{}`: {e}", full.display()))?;
                Ok(Arc::new(dev))
            }
            ModelDef::Inline(m) => Ok(m.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Analysis {
    Op,
    DcSweep {
        source: String,
        start: f64,
        stop: f64,
        step: f64,
    },
    Transient {
        tstep: f64,
        tstop: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PrintItem {
    Voltage(String),
    Current(String),
}

impl fmt::Display for PrintItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrintItem::Voltage(n) => write!(f, "v({n})"),
            PrintItem::Current(n) => write!(f, "i({n})"),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Netlist {
    pub elements: Vec<Element>,
    pub models: BTreeMap<String, ModelDef>,
    pub analyses: Vec<Analysis>,
    pub prints: Vec<PrintItem>,
}

impl Netlist {
    /// Consistency checks: models defined, ground present, unique
    /// element names.
    pub fn validate(&self) -> Result<(), NetlistError> {
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.elements {
            if !seen.insert(e.name().to_string()) {
                return Err(NetlistError::Model {
                    model: e.name().to_string(),
                    msg: "duplicate element name".into(),
                });
            }
            if let Element::Device { model, name, .. } = e {
                if !self.models.contains_key(model) {
                    return Err(NetlistError::Model {
                        model: model.clone(),
                        msg: format!("referenced by `{name}` but never defined"),
                    });
                }
            }
        }
        if !self
            .elements
            .iter()
            .any(|e| e.nodes().iter().any(|n| *n == "0"))
        {
            return Err(NetlistError::NoGround);
        }
        Ok(())
    }
}

/// Parses a number with optional engineering suffix
/// (f, p, n, u, m, k, meg).
pub fn parse_value(tok: &str) -> Result<f64, String> {
    let t = tok.trim();
    if let Ok(v) = t.parse::<f64>() {
        return Ok(v);
    }
    let lower = t.to_ascii_lowercase();
    // `meg` must be tried before `m`.
    for (suffix, mult) in [
        ("meg", 1e6),
        ("f", 1e-15),
        ("p", 1e-12),
        ("n", 1e-9),
        ("u", 1e-6),
        ("m", 1e-3),
        ("k", 1e3),
    ] {
        if let Some(stripped) = lower.strip_suffix(suffix) {
            if let Ok(v) = stripped.parse::<f64>() {
                return Ok(v * mult);
            }
        }
    }
    Err(format!("cannot parse number `{t}`"))
}

pub fn parse_netlist(text: &str) -> Result<Netlist, NetlistError> {
    let mut nl = Netlist::default();
    let mut saw_end = false;
    let mut device_lines: Vec<(usize, String)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_num = idx + 1;
        let err = |msg: String| NetlistError::Parse {
            line: line_num,
            msg,
        };
        let line = raw.trim();
        if line.is_empty() || line.starts_with('*') {
            continue;
        }
        if saw_end {
            break;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let first = tokens[0];
        let head = first.to_ascii_lowercase();

        if let Some(rest) = head.strip_prefix('.') {
            match rest {
                "end" => saw_end = true,
                "op" => nl.analyses.push(Analysis::Op),
                "dc" => {
                    if tokens.len() != 5 {
                        return Err(err(".dc needs <Vname> <start> <stop> <step>".into()));
                    }
                    nl.analyses.push(Analysis::DcSweep {
                        source: tokens[1].to_string(),
                        start: parse_value(tokens[2]).map_err(&err)?,
                        stop: parse_value(tokens[3]).map_err(&err)?,
                        step: parse_value(tokens[4]).map_err(&err)?,
                    });
                }
                "tran" => {
                    if tokens.len() != 3 {
                        return Err(err(".tran needs <tstep> <tstop>".into()));
                    }
                    let tstep = parse_value(tokens[1]).map_err(&err)?;
                    let tstop = parse_value(tokens[2]).map_err(&err)?;
                    if !(tstep > 0.0) || tstop < tstep {
                        return Err(err(format!(
                            "need tstep > 0 and tstop >= tstep, got {tstep} {tstop}"
                        )));
                    }
                    nl.analyses.push(Analysis::Transient { tstep, tstop });
                }
                "print" => {
                    for tok in &tokens[1..] {
                        let lower = tok.to_ascii_lowercase();
                        let item = if lower.starts_with("v(") && lower.ends_with(')') {
                            PrintItem::Voltage(tok[2..tok.len() - 1].to_string())
                        } else if lower.starts_with("i(") && lower.ends_with(')') {
                            PrintItem::Current(tok[2..tok.len() - 1].to_string())
                        } else {
                            return Err(err(format!(
                                "print item must be v(node) or i(Vname), got `{tok}`"
                            )));
                        };
                        nl.prints.push(item);
                    }
                }
                "model" => {
                    if tokens.len() < 3 {
                        return Err(err(".model needs <id> <kind> [file=<path>]".into()));
                    }
                    let id = tokens[1].to_string();
                    let kind = tokens[2].to_ascii_lowercase();
                    let mut file: Option<PathBuf> = None;
                    for attr in &tokens[3..] {
                        match attr.split_once('=') {
                            Some((k, v)) if k.eq_ignore_ascii_case("file") => {
                                file = Some(PathBuf::from(v));
                            }
                            _ => {
                                return Err(err(format!("unknown model attribute `{attr}`")));
                            }
                        }
                    }
                    let def = match kind.as_str() {
                        "nfin_ref" => ModelDef::NFinRef(RefFinFETParams::default()),
                        "pfin_ref" => ModelDef::PFinRef(RefFinFETParams::default()),
                        "ntfet_ref" => ModelDef::NTfetRef(RefTFETParams::default()),
                        "ptfet_ref" => ModelDef::PTfetRef(RefTFETParams::default()),
                        "nn" => {
                            let path = file.ok_or_else(|| {
                                err("nn model needs file=<path>".into())
                            })?;
                            ModelDef::NnFile(path)
                        }
                        other => {
                            return Err(err(format!("unknown model kind `{other}`")));
                        }
                    };
                    if nl.models.insert(id.clone(), def).is_some() {
                        return Err(err(format!("model `{id}` defined twice")));
                    }
                }
                other => {
                    return Err(err(format!("unknown directive `.{other}`")));
                }
            }
            continue;
        }

        match head.chars().next().unwrap() {
            'r' => {
                if tokens.len() != 4 {
                    return Err(err("resistor needs <n1> <n2> <ohms>".into()));
                }
                nl.elements.push(Element::Resistor {
                    name: first.to_string(),
                    n1: tokens[1].to_string(),
                    n2: tokens[2].to_string(),
                    ohms: parse_value(tokens[3]).map_err(&err)?,
                });
            }
            'c' => {
                if tokens.len() != 4 {
                    return Err(err("capacitor needs <n1> <n2> <farads>".into()));
                }
                nl.elements.push(Element::Capacitor {
                    name: first.to_string(),
                    n1: tokens[1].to_string(),
                    n2: tokens[2].to_string(),
                    farads: parse_value(tokens[3]).map_err(&err)?,
                });
            }
            'v' => {
                if tokens.len() < 4 {
                    return Err(err("source needs <n+> <n-> dc|pwl ...".into()));
                }
                let kind = tokens[3].to_ascii_lowercase();
                let wave = match kind.as_str() {
                    "dc" => {
                        if tokens.len() != 5 {
                            return Err(err("dc source needs one value".into()));
                        }
                        Waveform::Dc(parse_value(tokens[4]).map_err(&err)?)
                    }
                    "pwl" => {
                        let vals: Result<Vec<f64>, _> =
                            tokens[4..].iter().map(|t| parse_value(t)).collect();
                        let vals = vals.map_err(&err)?;
                        if vals.len() < 2 || vals.len() % 2 != 0 {
                            return Err(err("pwl needs t/v pairs".into()));
                        }
                        let points: Vec<(f64, f64)> =
                            vals.chunks(2).map(|c| (c[0], c[1])).collect();
                        if points.windows(2).any(|w| w[1].0 < w[0].0) {
                            return Err(err("pwl breakpoints must be non-decreasing".into()));
                        }
                        Waveform::Pwl(points)
                    }
                    other => {
                        return Err(err(format!(
                            "source needs `dc` or `pwl`, got `{other}`"
                        )));
                    }
                };
                nl.elements.push(Element::VSource {
                    name: first.to_string(),
                    np: tokens[1].to_string(),
                    nm: tokens[2].to_string(),
                    wave,
                });
            }
            'm' => {
                if tokens.len() != 5 {
                    return Err(err("device needs <d> <g> <s> <model>".into()));
                }
                device_lines.push((line_num, tokens[4].to_string()));
                nl.elements.push(Element::Device {
                    name: first.to_string(),
                    d: tokens[1].to_string(),
                    g: tokens[2].to_string(),
                    s: tokens[3].to_string(),
                    model: tokens[4].to_string(),
                });
            }
            other => {
                return Err(err(format!("unknown element type `{other}`")));
            }
        }
    }

    if !saw_end {
        return Err(NetlistError::MissingEnd);
    }
    for (line, model) in device_lines {
        if !nl.models.contains_key(&model) {
            return Err(NetlistError::UndefinedModel { model, line });
        }
    }
    nl.validate()?;
    Ok(nl)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DIVIDER: &str = "\
* a resistor divider
V1 in 0 dc 0.8
R1 in mid 1k
R2 mid 0 1k
.op
.print v(mid) i(V1)
.end
";

    #[test]
    fn parses_divider() {
        let nl = parse_netlist(DIVIDER).unwrap();
        assert_eq!(nl.elements.len(), 3);
        assert_eq!(nl.analyses, vec![Analysis::Op]);
        assert_eq!(
            nl.prints,
            vec![
                PrintItem::Voltage("mid".into()),
                PrintItem::Current("V1".into())
            ]
        );
        match &nl.elements[0] {
            Element::VSource { wave, .. } => assert_eq!(*wave, Waveform::Dc(0.8)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn engineering_suffixes() {
        let close = |tok: &str, expect: f64| {
            let v = parse_value(tok).unwrap();
            assert!(
                (v - expect).abs() <= 1e-15 * expect.abs(),
                "{tok}: {v} vs {expect}"
            );
        };
        close("1k", 1e3);
        close("1meg", 1e6);
        close("1MEG", 1e6);
        close("2.5m", 2.5e-3);
        close("100n", 1e-7);
        close("1f", 1e-15);
        close("3p", 3e-12);
        close("0.5u", 5e-7);
        close("1e-3", 1e-3);
        assert!(parse_value("banana").is_err());
    }

    #[test]
    fn missing_end_is_an_error() {
        let err = parse_netlist("V1 a 0 dc 1\n").unwrap_err();
        assert!(matches!(err, NetlistError::MissingEnd));
    }

    #[test]
    fn undefined_model_names_line_and_model() {
        let text = "V1 a 0 dc 1\nM1 out in 0 nfinn\n.op\n.end\n";
        match parse_netlist(text) {
            Err(NetlistError::UndefinedModel { model, line }) => {
                assert_eq!(model, "nfinn");
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn model_kinds_and_devices() {
        let text = "\
Vdd vdd 0 dc 0.8
.model nfin nfin_ref
.model pfin pfin_ref
M1 out in 0 nfin
M2 out in vdd pfin
.op
.end
";
        let nl = parse_netlist(text).unwrap();
        assert_eq!(nl.models.len(), 2);
        assert!(matches!(nl.models["nfin"], ModelDef::NFinRef(_)));
        let dev = ModelDef::NFinRef(RefFinFETParams::default())
            .resolve(Path::new("."))
            .unwrap();
        use crate::refdev::BiasPoint;
        assert_eq!(dev.eval(BiasPoint::new(0.8, 0.4, 0.4)).id, 0.0);
    }

    #[test]
    fn pwl_parsing_and_interpolation() {
        let text = "V1 a 0 pwl 0 0 1n 0 1.1n 0.9 5n 0.9\n.tran 1p 5n\n.end\n";
        let nl = parse_netlist(text).unwrap();
        match &nl.elements[0] {
            Element::VSource { wave, .. } => {
                assert_eq!(wave.value_at(0.0), 0.0);
                assert_eq!(wave.value_at(0.5e-9), 0.0);
                assert!((wave.value_at(1.05e-9) - 0.45).abs() < 1e-12);
                assert_eq!(wave.value_at(2e-9), 0.9);
                assert_eq!(wave.value_at(9e-9), 0.9);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_syntax_reports_line() {
        let text = "V1 a 0 dc 1\nR1 a 0\n.end\n";
        match parse_netlist(text) {
            Err(NetlistError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ground_required() {
        let text = "V1 a b dc 1\nR1 a b 1k\n.op\n.end\n";
        assert!(matches!(parse_netlist(text), Err(NetlistError::NoGround)));
    }

    #[test]
    fn nn_model_requires_file() {
        let text = ".model s nn\n.end\n";
        assert!(matches!(
            parse_netlist(text),
            Err(NetlistError::Parse { line: 1, .. })
        ));
    }
}
