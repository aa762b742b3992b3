//! Modified nodal analysis and the nonlinear solvers.
//!
//! Unknowns are the non-ground node voltages plus one branch current
//! per voltage source. Nonlinear devices are stamped from their
//! model's currents and analytic Jacobians; Newton iterates with an
//! absolute per-step voltage clip. A failed operating point retries
//! with gmin stepping, then source stepping. Transient analysis is
//! fixed-step backward Euler with charge-based companion models:
//! every charge-bearing element contributes `(Q(v_new) - Q_prev)/h`
//! and `dQ/dv / h`.
//!
//! Conventions: device terminal currents flow into the device; a
//! source's reported current flows through the source from `n+` to
//! `n-`, so a supply sourcing power reads negative.

use super::netlist::{Analysis, Element, Netlist, NetlistError, PrintItem, Waveform};
use crate::linalg::{lu_solve, Mat};
use crate::refdev::{BiasPoint, DeviceModel};
use crate::util::fmt_f64;
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Netlist(#[from] NetlistError),
    #[error("model `{model}`: {msg}")]
    Model { model: String, msg: String },
    #[error("singular system while {context}")]
    Singular { context: String },
    #[error("no convergence {context} after {iters} Newton iterations (worst residual {residual:e} A)")]
    NoConvergence {
        context: String,
        iters: usize,
        residual: f64,
    },
    #[error("unknown print item `{0}`")]
    BadPrint(String),
    #[error("unknown source `{0}`")]
    UnknownSource(String),
    #[error("invalid analysis: {0}")]
    BadAnalysis(String),
}

/// Solver tolerances and homotopy schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub abstol: f64,
    pub reltol: f64,
    pub vntol: f64,
    pub max_newton_iters: usize,
    pub gmin: f64,
    pub damping_clip: f64,
    pub gmin_steps: usize,
    pub source_steps: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            abstol: 1e-12,
            reltol: 1e-6,
            vntol: 1e-6,
            max_newton_iters: 100,
            gmin: 1e-12,
            damping_clip: 0.3,
            gmin_steps: 10,
            source_steps: 10,
        }
    }
}

/// A result table: one label per column, rows in sweep/time order.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl SimResult {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }

    /// CSV text with 17-significant-digit values.
    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(',');
                }
                out.push_str(&fmt_f64(*v));
                first = false;
            }
            out.push('\n');
        }
        out
    }
}

/// DC operating-point solution with named lookups.
#[derive(Debug, Clone)]
pub struct OpSolution {
    pub voltages: BTreeMap<String, f64>,
    pub currents: BTreeMap<String, f64>,
    pub newton_iters: usize,
    /// Print-item table (one row); all node voltages and source
    /// currents when the netlist has no `.print` card.
    pub result: SimResult,
}

enum CElem {
    Res {
        a: Option<usize>,
        b: Option<usize>,
        g: f64,
    },
    Cap {
        a: Option<usize>,
        b: Option<usize>,
        c: f64,
        qslot: usize,
    },
    Src {
        a: Option<usize>,
        b: Option<usize>,
        branch: usize,
        wave: Waveform,
    },
    Dev {
        d: Option<usize>,
        g: Option<usize>,
        s: Option<usize>,
        model: Arc<dyn DeviceModel>,
        qslot: usize,
    },
}

struct Compiled {
    node_names: Vec<String>,
    elements: Vec<CElem>,
    n_nodes: usize,
    n_unknowns: usize,
    n_qslots: usize,
    /// source element name -> branch unknown index (absolute).
    source_branch: BTreeMap<String, usize>,
    /// order of sources as they appear in the netlist.
    source_order: Vec<String>,
    has_devices: bool,
}

fn compile(nl: &Netlist, base_dir: &Path) -> Result<Compiled, SimError> {
    nl.validate()?;
    let mut node_index: BTreeMap<String, usize> = BTreeMap::new();
    let mut node_names = Vec::new();
    let index_of = |name: &str,
                    node_index: &mut BTreeMap<String, usize>,
                    node_names: &mut Vec<String>|
     -> Option<usize> {
        if name == "0" {
            return None;
        }
        Some(*node_index.entry(name.to_string()).or_insert_with(|| {
            node_names.push(name.to_string());
            node_names.len() - 1
        }))
    };

    let mut resolved_models: BTreeMap<String, Arc<dyn DeviceModel>> = BTreeMap::new();
    for (name, def) in &nl.models {
        let model = def.resolve(base_dir).map_err(|msg| SimError::Model {
            model: name.clone(),
            msg,
        })?;
        resolved_models.insert(name.clone(), model);
    }

    let mut elements = Vec::new();
    let mut n_branches = 0usize;
    let mut n_qslots = 0usize;
    let mut source_branch_rel: BTreeMap<String, usize> = BTreeMap::new();
    let mut source_order = Vec::new();
    let mut has_devices = false;

    for e in &nl.elements {
        match e {
            Element::Resistor { n1, n2, ohms, .. } => {
                elements.push(CElem::Res {
                    a: index_of(n1, &mut node_index, &mut node_names),
                    b: index_of(n2, &mut node_index, &mut node_names),
                    g: 1.0 / ohms,
                });
            }
            Element::Capacitor { n1, n2, farads, .. } => {
                elements.push(CElem::Cap {
                    a: index_of(n1, &mut node_index, &mut node_names),
                    b: index_of(n2, &mut node_index, &mut node_names),
                    c: *farads,
                    qslot: {
                        n_qslots += 1;
                        n_qslots - 1
                    },
                });
            }
            Element::VSource { name, np, nm, wave } => {
                source_branch_rel.insert(name.clone(), n_branches);
                source_order.push(name.clone());
                elements.push(CElem::Src {
                    a: index_of(np, &mut node_index, &mut node_names),
                    b: index_of(nm, &mut node_index, &mut node_names),
                    branch: n_branches,
                    wave: wave.clone(),
                });
                n_branches += 1;
            }
            Element::Device {
                d, g, s, model, ..
            } => {
                has_devices = true;
                elements.push(CElem::Dev {
                    d: index_of(d, &mut node_index, &mut node_names),
                    g: index_of(g, &mut node_index, &mut node_names),
                    s: index_of(s, &mut node_index, &mut node_names),
                    model: resolved_models[model].clone(),
                    qslot: {
                        n_qslots += 3;
                        n_qslots - 3
                    },
                });
            }
        }
    }

    let n_nodes = node_names.len();
    let source_branch = source_branch_rel
        .into_iter()
        .map(|(k, v)| (k, n_nodes + v))
        .collect();
    Ok(Compiled {
        node_names,
        elements,
        n_nodes,
        n_unknowns: n_nodes + n_branches,
        n_qslots,
        source_branch,
        source_order,
        has_devices,
    })
}

/// What drives the circuit during one solve.
struct EvalCtx<'a> {
    /// Global source scale (source stepping).
    scale: f64,
    /// Override of one source's value (DC sweep), by branch index.
    sweep: Option<(usize, f64)>,
    /// Extra conductance to ground at device terminals.
    gmin: f64,
    /// Backward-Euler context, if in a transient step.
    tran: Option<TranCtx<'a>>,
}

struct TranCtx<'a> {
    h: f64,
    t: f64,
    q_prev: &'a [f64],
}

/// Two-terminal conductance stamp.
fn stamp_conductance(m: &mut Mat, a: Option<usize>, b: Option<usize>, g: f64) {
    if let Some(ai) = a {
        m.add(ai, ai, g);
    }
    if let Some(bi) = b {
        m.add(bi, bi, g);
    }
    if let (Some(ai), Some(bi)) = (a, b) {
        m.add(ai, bi, -g);
        m.add(bi, ai, -g);
    }
}

struct Stepper<'a> {
    c: &'a Compiled,
    opts: &'a SimOptions,
}

enum SolveFail {
    Singular,
    NoConvergence { residual: f64 },
}

impl<'a> Stepper<'a> {
    fn source_value(&self, branch: usize, wave: &Waveform, ctx: &EvalCtx) -> f64 {
        if let Some((b, v)) = ctx.sweep {
            if b == branch {
                return v * ctx.scale;
            }
        }
        let t = ctx.tran.as_ref().map_or(0.0, |tc| tc.t);
        wave.value_at(t) * ctx.scale
    }

    fn bias_of(&self, x: &[f64], d: Option<usize>, g: Option<usize>, s: Option<usize>) -> BiasPoint {
        let v = |n: Option<usize>| n.map_or(0.0, |i| x[i]);
        BiasPoint::new(v(g), v(d), v(s))
    }

    /// Assembles the residual `f` (and the Jacobian when `mat` is
    /// given) at state `x`.
    fn assemble(&self, x: &[f64], ctx: &EvalCtx, f: &mut [f64], mut mat: Option<&mut Mat>) {
        f.fill(0.0);
        if let Some(m) = mat.as_deref_mut() {
            m.fill(0.0);
        }
        let h_inv = ctx.tran.as_ref().map(|tc| 1.0 / tc.h);

        for elem in &self.c.elements {
            match elem {
                CElem::Res { a, b, g } => {
                    let va = a.map_or(0.0, |i| x[i]);
                    let vb = b.map_or(0.0, |i| x[i]);
                    let i = (va - vb) * g;
                    if let Some(ai) = a {
                        f[*ai] += i;
                    }
                    if let Some(bi) = b {
                        f[*bi] -= i;
                    }
                    if let Some(m) = mat.as_deref_mut() {
                        stamp_conductance(m, *a, *b, *g);
                    }
                }
                CElem::Cap {
                    a,
                    b,
                    c,
                    qslot,
                } => {
                    // Open in DC; charge companion in transient.
                    if let (Some(hi), Some(tc)) = (h_inv, ctx.tran.as_ref()) {
                        let va = a.map_or(0.0, |i| x[i]);
                        let vb = b.map_or(0.0, |i| x[i]);
                        let q = c * (va - vb);
                        let i = (q - tc.q_prev[*qslot]) * hi;
                        if let Some(ai) = a {
                            f[*ai] += i;
                        }
                        if let Some(bi) = b {
                            f[*bi] -= i;
                        }
                        if let Some(m) = mat.as_deref_mut() {
                            stamp_conductance(m, *a, *b, c * hi);
                        }
                    }
                }
                CElem::Src { a, b, branch, wave } => {
                    let bi = self.c.n_nodes + *branch;
                    let i_src = x[bi];
                    let va = a.map_or(0.0, |i| x[i]);
                    let vb = b.map_or(0.0, |i| x[i]);
                    if let Some(ai) = a {
                        f[*ai] += i_src;
                    }
                    if let Some(bj) = b {
                        f[*bj] -= i_src;
                    }
                    f[bi] = va - vb - self.source_value(*branch, wave, ctx);
                    if let Some(m) = mat.as_deref_mut() {
                        if let Some(ai) = a {
                            m.add(*ai, bi, 1.0);
                            m.add(bi, *ai, 1.0);
                        }
                        if let Some(bj) = b {
                            m.add(*bj, bi, -1.0);
                            m.add(bi, *bj, -1.0);
                        }
                    }
                }
                CElem::Dev {
                    d,
                    g,
                    s,
                    model,
                    qslot,
                } => {
                    let bias = self.bias_of(x, *d, *g, *s);
                    let resp = model.eval(bias);
                    let terms = [(*d, resp.id), (*g, resp.ig), (*s, resp.is)];
                    for (node, current) in terms {
                        if let Some(ni) = node {
                            f[ni] += current + ctx.gmin * x[ni];
                        }
                    }
                    let need_jac = mat.is_some();
                    let jac = if need_jac {
                        Some(model.jacobian(bias))
                    } else {
                        None
                    };
                    if let Some(m) = mat.as_deref_mut() {
                        let jac = jac.as_ref().unwrap();
                        // Jacobian columns are (vg, vd, vs).
                        let cols = [*g, *d, *s];
                        let rows = [*d, *g, *s]; // current rows (id, ig, is)
                        for (r, node_r) in rows.iter().enumerate() {
                            if let Some(ri) = node_r {
                                for (cidx, node_c) in cols.iter().enumerate() {
                                    if let Some(ci) = node_c {
                                        m.add(*ri, *ci, jac.di[r][cidx]);
                                    }
                                }
                                m.add(*ri, *ri, ctx.gmin);
                            }
                        }
                    }
                    // Charge companion in transient.
                    if let (Some(hi), Some(tc)) = (h_inv, ctx.tran.as_ref()) {
                        let qs_ = [resp.qd, resp.qg, resp.qs];
                        let nodes = [*d, *g, *s];
                        // q_prev slots are stored as (qd, qg, qs).
                        for (k, node) in nodes.iter().enumerate() {
                            if let Some(ni) = node {
                                f[*ni] += (qs_[k] - tc.q_prev[*qslot + k]) * hi;
                            }
                        }
                        if let Some(m) = mat.as_deref_mut() {
                            let jac = model.jacobian(bias);
                            // dq rows are (qg, qd, qs); reorder to (qd, qg, qs).
                            let dq_rows = [jac.dq[1], jac.dq[0], jac.dq[2]];
                            let cols = [*g, *d, *s];
                            for (k, node_r) in nodes.iter().enumerate() {
                                if let Some(ri) = node_r {
                                    for (cidx, node_c) in cols.iter().enumerate() {
                                        if let Some(ci) = node_c {
                                            m.add(*ri, *ci, dq_rows[k][cidx] * hi);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// All element charges at state `x` (capacitors and device
    /// terminals), used as the history for the next BE step.
    fn charges(&self, x: &[f64]) -> Vec<f64> {
        let mut q = vec![0.0; self.c.n_qslots];
        for elem in &self.c.elements {
            match elem {
                CElem::Cap { a, b, c, qslot } => {
                    let va = a.map_or(0.0, |i| x[i]);
                    let vb = b.map_or(0.0, |i| x[i]);
                    q[*qslot] = c * (va - vb);
                }
                CElem::Dev {
                    d, g, s, model, qslot,
                } => {
                    let resp = model.eval(self.bias_of(x, *d, *g, *s));
                    q[*qslot] = resp.qd;
                    q[*qslot + 1] = resp.qg;
                    q[*qslot + 2] = resp.qs;
                }
                _ => {}
            }
        }
        q
    }

    /// Newton iteration from `x0`. Returns the solution and the number
    /// of linear solves. Linear circuits converge in exactly one
    /// iteration (exact residual, no clipping). For device circuits the
    /// update is clipped per node and, if the clipped full step would
    /// grow the residual norm, backtracked by halving: flat-then-steep
    /// device curves (a saturated TFET feeding a small capacitor)
    /// otherwise drive the clipped iteration into a limit cycle.
    fn newton(&self, x0: &[f64], ctx: &EvalCtx) -> Result<(Vec<f64>, usize), SolveFail> {
        let n = self.c.n_unknowns;
        let mut x = x0.to_vec();
        let mut f = vec![0.0; n];
        let mut f_try = vec![0.0; n];
        let mut mat = Mat::zeros(n, n);
        let mut last_residual = f64::INFINITY;
        let node_norm =
            |f: &[f64]| f[..self.c.n_nodes].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // Backtracking merit spans every row (KCL rows in amperes plus
        // source rows in volts): from a zero start the node rows alone
        // look satisfied while the sources are not.
        let merit = |f: &[f64]| f.iter().fold(0.0f64, |m, v| m.max(v.abs()));

        for iter in 1..=self.opts.max_newton_iters {
            self.assemble(&x, ctx, &mut f, Some(&mut mat));
            if f.iter().any(|v| !v.is_finite()) {
                return Err(SolveFail::NoConvergence {
                    residual: f64::INFINITY,
                });
            }
            let merit_old = merit(&f);
            let mut delta: Vec<f64> = f.iter().map(|v| -v).collect();
            if lu_solve(&mut mat, &mut delta).is_err() {
                return Err(SolveFail::Singular);
            }
            if delta.iter().any(|v| !v.is_finite()) {
                return Err(SolveFail::NoConvergence {
                    residual: last_residual,
                });
            }
            if self.c.has_devices {
                let clip = self.opts.damping_clip;
                for dv in delta[..self.c.n_nodes].iter_mut() {
                    *dv = dv.clamp(-clip, clip);
                }
            }

            // Accept the first step fraction that does not grow the
            // node residual norm (always accept the full step in
            // linear circuits: it is exact).
            let mut alpha = 1.0;
            let mut x_try = vec![0.0; n];
            for _ in 0..16 {
                for i in 0..n {
                    x_try[i] = x[i] + alpha * delta[i];
                }
                self.assemble(&x_try, ctx, &mut f_try, None);
                let m = merit(&f_try);
                if !self.c.has_devices || (m.is_finite() && m <= merit_old * (1.0 + 1e-9)) {
                    break;
                }
                alpha *= 0.5;
            }
            // Accept the final trial either way; the iteration cap and
            // the convergence test below decide the outcome.
            x.copy_from_slice(&x_try);
            let residual = node_norm(&f_try);
            last_residual = residual;

            let dv_ok = delta[..self.c.n_nodes]
                .iter()
                .zip(&x[..self.c.n_nodes])
                .all(|(dv, v)| (alpha * dv).abs() < self.opts.vntol + self.opts.reltol * v.abs());
            if residual.is_finite() && residual < self.opts.abstol {
                if dv_ok || !self.c.has_devices {
                    return Ok((x, iter));
                }
            }
        }
        Err(SolveFail::NoConvergence {
            residual: last_residual,
        })
    }

    /// Operating point with homotopy rescue: plain Newton, then gmin
    /// stepping, then source stepping.
    fn operating_point(
        &self,
        warm: Option<&[f64]>,
        sweep: Option<(usize, f64)>,
        context: &str,
    ) -> Result<(Vec<f64>, usize), SimError> {
        let zeros = vec![0.0; self.c.n_unknowns];
        let x0: &[f64] = warm.unwrap_or(&zeros);
        let ctx = |scale: f64, gmin: f64| EvalCtx {
            scale,
            sweep,
            gmin,
            tran: None,
        };

        match self.newton(x0, &ctx(1.0, self.opts.gmin)) {
            Ok(ok) => return Ok(ok),
            Err(_) if self.c.has_devices => {}
            Err(fail) => return Err(self.fail_to_error(fail, context)),
        }

        // gmin stepping: relax from 1e-3 S down to the real gmin.
        let steps = self.opts.gmin_steps.max(2);
        let g_hi: f64 = 1e-3;
        let ratio = (self.opts.gmin / g_hi).ln();
        let mut x = zeros.clone();
        let mut ok = true;
        let mut iters_total = 0;
        for k in 0..steps {
            let g = g_hi * (ratio * k as f64 / (steps - 1) as f64).exp();
            match self.newton(&x, &ctx(1.0, g)) {
                Ok((sol, iters)) => {
                    x = sol;
                    iters_total += iters;
                }
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Ok((x, iters_total));
        }

        // Source stepping: ramp every source from zero.
        let mut x = zeros;
        let mut iters_total = 0;
        let steps = self.opts.source_steps.max(1);
        for k in 1..=steps {
            let scale = k as f64 / steps as f64;
            match self.newton(&x, &ctx(scale, self.opts.gmin)) {
                Ok((sol, iters)) => {
                    x = sol;
                    iters_total += iters;
                }
                Err(fail) => {
                    return Err(self.fail_to_error(
                        fail,
                        &format!("{context} (source stepping at scale {scale:.2})"),
                    ));
                }
            }
        }
        Ok((x, iters_total))
    }

    fn fail_to_error(&self, fail: SolveFail, context: &str) -> SimError {
        match fail {
            SolveFail::Singular => SimError::Singular {
                context: context.to_string(),
            },
            SolveFail::NoConvergence { residual } => SimError::NoConvergence {
                context: context.to_string(),
                iters: self.opts.max_newton_iters,
                residual,
            },
        }
    }
}

/// Resolves print items to state extractors; defaults to every node
/// voltage followed by every source current.
fn print_plan(c: &Compiled, prints: &[PrintItem]) -> Result<Vec<(String, Option<usize>)>, SimError> {
    let mut plan = Vec::new();
    if prints.is_empty() {
        for (i, name) in c.node_names.iter().enumerate() {
            plan.push((format!("v({name})"), Some(i)));
        }
        for name in &c.source_order {
            plan.push((format!("i({name})"), Some(c.source_branch[name])));
        }
        return Ok(plan);
    }
    for item in prints {
        match item {
            PrintItem::Voltage(node) => {
                if node == "0" {
                    plan.push((item.to_string(), None));
                } else {
                    let idx = c
                        .node_names
                        .iter()
                        .position(|n| n == node)
                        .ok_or_else(|| SimError::BadPrint(item.to_string()))?;
                    plan.push((item.to_string(), Some(idx)));
                }
            }
            PrintItem::Current(src) => {
                let branch = c
                    .source_branch
                    .iter()
                    .find(|(name, _)| name.eq_ignore_ascii_case(src))
                    .map(|(_, idx)| *idx)
                    .ok_or_else(|| SimError::BadPrint(item.to_string()))?;
                plan.push((item.to_string(), Some(branch)));
            }
        }
    }
    Ok(plan)
}

fn extract_row(plan: &[(String, Option<usize>)], x: &[f64]) -> Vec<f64> {
    plan.iter()
        .map(|(_, idx)| idx.map_or(0.0, |i| x[i]))
        .collect()
}

/// Full nonlinear DC operating point.
pub fn dc_operating_point(
    nl: &Netlist,
    base_dir: &Path,
    opts: &SimOptions,
) -> Result<OpSolution, SimError> {
    let c = compile(nl, base_dir)?;
    let stepper = Stepper { c: &c, opts };
    let (x, iters) = stepper.operating_point(None, None, "solving operating point")?;
    let plan = print_plan(&c, &nl.prints)?;
    let result = SimResult {
        columns: plan.iter().map(|(n, _)| n.clone()).collect(),
        rows: vec![extract_row(&plan, &x)],
    };
    Ok(OpSolution {
        voltages: c
            .node_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), x[i]))
            .collect(),
        currents: c
            .source_branch
            .iter()
            .map(|(n, i)| (n.clone(), x[*i]))
            .collect(),
        newton_iters: iters,
        result,
    })
}

/// Repeated operating points with warm-start continuation; the first
/// column of the result is the swept source value.
pub fn dc_sweep(
    nl: &Netlist,
    base_dir: &Path,
    source: &str,
    start: f64,
    stop: f64,
    step: f64,
    opts: &SimOptions,
) -> Result<SimResult, SimError> {
    if !(step != 0.0) || (stop - start) * step < 0.0 {
        return Err(SimError::BadAnalysis(format!(
            "sweep step {step} inconsistent with range [{start}, {stop}]"
        )));
    }
    let c = compile(nl, base_dir)?;
    let stepper = Stepper { c: &c, opts };
    let branch = *c
        .source_branch
        .get(source)
        .or_else(|| {
            c.source_branch
                .iter()
                .find(|(n, _)| n.eq_ignore_ascii_case(source))
                .map(|(_, i)| i)
        })
        .ok_or_else(|| SimError::UnknownSource(source.to_string()))?
        - &0;
    let rel_branch = branch - c.n_nodes;

    let npts = ((stop - start) / step).round() as usize;
    let value_at = |k: usize| {
        if npts == 0 {
            start
        } else {
            start + (stop - start) * (k as f64) / (npts as f64)
        }
    };

    let plan = print_plan(&c, &nl.prints)?;
    let mut columns = vec![source.to_string()];
    columns.extend(plan.iter().map(|(n, _)| n.clone()));
    let mut rows = Vec::with_capacity(npts + 1);
    let mut warm: Option<Vec<f64>> = None;

    for k in 0..=npts {
        let v = value_at(k);
        let sweep = Some((rel_branch, v));
        let solved = match warm.as_deref() {
            Some(w) => {
                let ctx = EvalCtx {
                    scale: 1.0,
                    sweep,
                    gmin: opts.gmin,
                    tran: None,
                };
                match stepper.newton(w, &ctx) {
                    Ok((x, _)) => Ok(x),
                    Err(_) => stepper
                        .operating_point(None, sweep, &format!("sweep {source}={v}"))
                        .map(|(x, _)| x),
                }
            }
            None => stepper
                .operating_point(None, sweep, &format!("sweep {source}={v}"))
                .map(|(x, _)| x),
        }?;
        let mut row = vec![v];
        row.extend(extract_row(&plan, &solved));
        rows.push(row);
        warm = Some(solved);
    }
    Ok(SimResult { columns, rows })
}

/// Fixed-step backward-Euler transient; the initial row is the
/// operating point with sources evaluated at t = 0.
pub fn transient(
    nl: &Netlist,
    base_dir: &Path,
    tstep: f64,
    tstop: f64,
    opts: &SimOptions,
) -> Result<SimResult, SimError> {
    if !(tstep > 0.0) || tstop < tstep {
        return Err(SimError::BadAnalysis(format!(
            "need tstep > 0 and tstop >= tstep, got {tstep}, {tstop}"
        )));
    }
    let c = compile(nl, base_dir)?;
    let stepper = Stepper { c: &c, opts };
    let (mut x, _) = stepper.operating_point(None, None, "solving transient initial condition")?;
    let mut q_prev = stepper.charges(&x);

    let plan = print_plan(&c, &nl.prints)?;
    let mut columns = vec!["time".to_string()];
    columns.extend(plan.iter().map(|(n, _)| n.clone()));

    let nsteps = ((tstop / tstep) + 1e-9).floor() as usize;
    let mut rows = Vec::with_capacity(nsteps + 1);
    let mut row = vec![0.0];
    row.extend(extract_row(&plan, &x));
    rows.push(row);

    for k in 1..=nsteps {
        let t = k as f64 * tstep;
        let ctx = EvalCtx {
            scale: 1.0,
            sweep: None,
            gmin: opts.gmin,
            tran: Some(TranCtx {
                h: tstep,
                t,
                q_prev: &q_prev,
            }),
        };
        let (xn, _) = stepper
            .newton(&x, &ctx)
            .map_err(|fail| stepper.fail_to_error(fail, &format!("transient step at t={t:e} s")))?;
        x = xn;
        q_prev = stepper.charges(&x);
        let mut row = vec![t];
        row.extend(extract_row(&plan, &x));
        rows.push(row);
    }
    Ok(SimResult { columns, rows })
}

/// Runs every analysis card in order; labels are `op`, `dc`, `tran`
/// (with an index suffix when repeated).
pub fn run_analyses(
    nl: &Netlist,
    base_dir: &Path,
    opts: &SimOptions,
) -> Result<Vec<(String, SimResult)>, SimError> {
    let mut out = Vec::new();
    for (i, analysis) in nl.analyses.iter().enumerate() {
        let tag = |base: &str| {
            if nl.analyses.len() == 1 {
                base.to_string()
            } else {
                format!("{base}{i}")
            }
        };
        match analysis {
            Analysis::Op => {
                let op = dc_operating_point(nl, base_dir, opts)?;
                out.push((tag("op"), op.result));
            }
            Analysis::DcSweep {
                source,
                start,
                stop,
                step,
            } => {
                let res = dc_sweep(nl, base_dir, source, *start, *stop, *step, opts)?;
                out.push((tag("dc"), res));
            }
            Analysis::Transient { tstep, tstop } => {
                let res = transient(nl, base_dir, *tstep, *tstop, opts)?;
                out.push((tag("tran"), res));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simcore::netlist::parse_netlist;

    fn opts() -> SimOptions {
        SimOptions::default()
    }

    const BASE: &str = ".";

    #[test]
    fn divider_exact_in_one_iteration() {
        let nl = parse_netlist(
            "V1 in 0 dc 0.8\nR1 in mid 1k\nR2 mid 0 1k\n.op\n.print v(mid) i(V1)\n.end\n",
        )
        .unwrap();
        let op = dc_operating_point(&nl, Path::new(BASE), &opts()).unwrap();
        assert_eq!(op.newton_iters, 1);
        assert!((op.voltages["mid"] - 0.4).abs() < 1e-12);
        // Source current flows n+ -> n- through the source: -V/(R1+R2).
        assert!((op.currents["V1"] + 0.8 / 2000.0).abs() < 1e-15);
        assert_eq!(op.result.columns, vec!["v(mid)", "i(V1)"]);
    }

    #[test]
    fn reference_inverter_rails() {
        let text = "\
Vdd vdd 0 dc 0.8
Vin in 0 dc 0.0
.model nfin nfin_ref
.model pfin pfin_ref
M1 out in 0 nfin
M2 out in vdd pfin
.op
.print v(out)
.end
";
        let nl = parse_netlist(text).unwrap();
        let op = dc_operating_point(&nl, Path::new(BASE), &opts()).unwrap();
        assert!(
            (op.voltages["out"] - 0.8).abs() < 1e-3,
            "out = {}",
            op.voltages["out"]
        );
    }

    #[test]
    fn diode_connected_tfet_matches_bisection_oracle() {
        let text = "\
V1 vdd 0 dc 0.9
R1 vdd n1 1meg
.model t ntfet_ref
M1 n1 n1 0 t
.op
.print v(n1)
.end
";
        let nl = parse_netlist(text).unwrap();
        // Tight tolerances and negligible gmin: the oracle below solves
        // the bare device equation and the example demands 1e-9 V.
        let tight = SimOptions {
            abstol: 1e-16,
            vntol: 1e-9,
            gmin: 1e-15,
            ..opts()
        };
        let op = dc_operating_point(&nl, Path::new(BASE), &tight).unwrap();
        let v_sim = op.voltages["n1"];

        // Independent scalar bisection on the node equation.
        use crate::refdev::{BiasPoint, DeviceModel, NTfet};
        let dev = NTfet::default();
        let f = |v: f64| (v - 0.9) / 1e6 + dev.eval(BiasPoint::new(v, v, 0.0)).id;
        let (mut lo, mut hi) = (0.0, 0.9);
        assert!(f(lo) < 0.0 && f(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let v_oracle = 0.5 * (lo + hi);
        assert!(
            (v_sim - v_oracle).abs() < 1e-9,
            "sim {v_sim} vs oracle {v_oracle}"
        );
    }

    #[test]
    fn sweep_current_is_ohms_law_line() {
        let nl = parse_netlist("V1 a 0 dc 0\nR1 a 0 2k\n.dc V1 0 1 0.25\n.print i(V1)\n.end\n")
            .unwrap();
        let res = dc_sweep(&nl, Path::new(BASE), "V1", 0.0, 1.0, 0.25, &opts()).unwrap();
        assert_eq!(res.rows.len(), 5);
        for row in &res.rows {
            let (v, i) = (row[0], row[1]);
            assert!((i + v / 2000.0).abs() < 1e-15, "v={v} i={i}");
        }
    }

    #[test]
    fn inverter_vtc_endpoints() {
        let text = "\
Vdd vdd 0 dc 0.8
Vin in 0 dc 0.0
.model nfin nfin_ref
.model pfin pfin_ref
M1 out in 0 nfin
M2 out in vdd pfin
.dc Vin 0 0.8 0.1
.print v(out)
.end
";
        let nl = parse_netlist(text).unwrap();
        let res = dc_sweep(&nl, Path::new(BASE), "Vin", 0.0, 0.8, 0.1, &opts()).unwrap();
        let out = res.column("v(out)").unwrap();
        assert!((out[0] - 0.8).abs() < 1e-3);
        assert!(out[out.len() - 1].abs() < 1e-3);
        // Monotone falling VTC.
        for w in out.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn rc_step_matches_backward_euler_closed_form() {
        // R = 1k, C = 1n: RC = 1e-6 s; h = RC/100.
        let text = "\
V1 in 0 pwl 0 0 1e-15 1
R1 in out 1k
C1 out 0 1n
.tran 1e-8 5e-6
.print v(out)
.end
";
        let nl = parse_netlist(text).unwrap();
        let res = transient(&nl, Path::new(BASE), 1e-8, 5e-6, &opts()).unwrap();
        let v = res.column("v(out)").unwrap();
        let h_rc: f64 = 1e-8 / 1e-6;
        let mut worst_disc: f64 = 0.0;
        let mut worst_cont: f64 = 0.0;
        for (k, vk) in v.iter().enumerate() {
            let discrete = 1.0 - (1.0 + h_rc).powi(-(k as i32));
            if discrete > 1e-6 {
                worst_disc = worst_disc.max((vk - discrete).abs() / discrete);
            }
            let t = k as f64 * 1e-8;
            let exact = 1.0 - (-t / 1e-6).exp();
            if exact > 1e-3 {
                worst_cont = worst_cont.max((vk - exact).abs() / exact);
            }
        }
        assert!(worst_disc < 1e-9, "worst vs discrete form {worst_disc}");
        assert!(worst_cont < 0.01, "worst vs exponential {worst_cont}");
    }

    #[test]
    fn constant_source_transient_is_stationary() {
        let text = "\
Vdd vdd 0 dc 0.9
Vin in 0 dc 0.9
.model t ntfet_ref
M1 out in 0 t
R1 vdd out 100k
C1 out 0 1f
.tran 1n 50n
.print v(out)
.end
";
        let nl = parse_netlist(text).unwrap();
        let op = dc_operating_point(&nl, Path::new(BASE), &opts()).unwrap();
        let res = transient(&nl, Path::new(BASE), 1e-9, 50e-9, &opts()).unwrap();
        let v = res.column("v(out)").unwrap();
        for vk in &v {
            assert!(
                (vk - op.voltages["out"]).abs() < 1e-6,
                "{vk} vs {}",
                op.voltages["out"]
            );
        }
    }

    #[test]
    fn assembled_jacobian_matches_fd_on_device_circuit() {
        let text = "\
Vdd vdd 0 dc 0.7
Vin in 0 dc 0.45
.model nfin nfin_ref
M1 out in 0 nfin
R1 vdd out 50k
.op
.end
";
        let nl = parse_netlist(text).unwrap();
        let c = compile(&nl, Path::new(BASE)).unwrap();
        let o = opts();
        let stepper = Stepper { c: &c, opts: &o };
        let ctx = EvalCtx {
            scale: 1.0,
            sweep: None,
            gmin: o.gmin,
            tran: None,
        };
        let n = c.n_unknowns;
        let x: Vec<f64> = (0..n).map(|i| 0.1 + 0.07 * i as f64).collect();
        let mut f0 = vec![0.0; n];
        let mut mat = Mat::zeros(n, n);
        stepper.assemble(&x, &ctx, &mut f0, Some(&mut mat));
        let h = 1e-7;
        for col in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[col] += h;
            xm[col] -= h;
            let mut fp = vec![0.0; n];
            let mut fm = vec![0.0; n];
            stepper.assemble(&xp, &ctx, &mut fp, None);
            stepper.assemble(&xm, &ctx, &mut fm, None);
            for row in 0..n {
                let fd = (fp[row] - fm[row]) / (2.0 * h);
                let a = mat.get(row, col);
                let denom = a.abs().max(fd.abs());
                if denom > 1e-12 {
                    assert!(
                        ((a - fd) / denom).abs() < 1e-5,
                        "row {row} col {col}: {a} vs {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn converged_solution_satisfies_kcl() {
        let text = "\
Vdd vdd 0 dc 0.9
Vin in 0 dc 0.5
.model nt ntfet_ref
.model pt ptfet_ref
M1 out in 0 nt
M2 out in vdd pt
.op
.end
";
        let nl = parse_netlist(text).unwrap();
        let c = compile(&nl, Path::new(BASE)).unwrap();
        let o = opts();
        let stepper = Stepper { c: &c, opts: &o };
        let (x, _) = stepper.operating_point(None, None, "test").unwrap();
        let ctx = EvalCtx {
            scale: 1.0,
            sweep: None,
            gmin: o.gmin,
            tran: None,
        };
        let mut f = vec![0.0; c.n_unknowns];
        stepper.assemble(&x, &ctx, &mut f, None);
        for (i, resid) in f[..c.n_nodes].iter().enumerate() {
            assert!(
                resid.abs() < o.abstol,
                "node {} residual {resid:e}",
                c.node_names[i]
            );
        }
    }

    #[test]
    fn unknown_print_and_source_errors() {
        let nl = parse_netlist("V1 a 0 dc 1\nR1 a 0 1k\n.op\n.print v(zzz)\n.end\n").unwrap();
        assert!(matches!(
            dc_operating_point(&nl, Path::new(BASE), &opts()),
            Err(SimError::BadPrint(_))
        ));
        let nl2 = parse_netlist("V1 a 0 dc 1\nR1 a 0 1k\n.end\n").unwrap();
        assert!(matches!(
            dc_sweep(&nl2, Path::new(BASE), "Vx", 0.0, 1.0, 0.5, &opts()),
            Err(SimError::UnknownSource(_))
        ));
    }

    #[test]
    fn determinism_identical_runs() {
        let text = "\
Vdd vdd 0 dc 0.9
Vin in 0 pwl 0 0 1n 0.9
.model nt ntfet_ref
.model pt ptfet_ref
M1 out in 0 nt
M2 out in vdd pt
C1 out 0 1f
.tran 0.1n 2n
.print v(out)
.end
";
        let nl = parse_netlist(text).unwrap();
        let a = transient(&nl, Path::new(BASE), 0.1e-9, 2e-9, &opts()).unwrap();
        let b = transient(&nl, Path::new(BASE), 0.1e-9, 2e-9, &opts()).unwrap();
        assert_eq!(a, b);
    }
}
