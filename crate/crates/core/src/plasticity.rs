//! Local weight-update rules and their dopamine-like modulators.
//!
//! Every rule maps `(m, x, y)` (modulation, pre-synaptic state, post-synaptic
//! state) to a weight delta of shape `(n_y, n_x)`. The `delta_*` functions
//! return fresh matrices; the `apply_*` variants accumulate straight into a
//! weight matrix and are what the forward pass uses.

use serde::{Deserialize, Serialize};

use crate::linalg::{dot, sigmoid, Matrix};
use crate::{Error, Result};

/// Per-connection four-coefficient Hebbian rule.
#[derive(Debug, Clone, PartialEq)]
pub struct FullAbcdRule {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
}

impl FullAbcdRule {
    pub fn new(a: Matrix, b: Matrix, c: Matrix, d: Matrix) -> Result<Self> {
        let shape = a.shape();
        for (name, m) in [("b", &b), ("c", &c), ("d", &d)] {
            if m.shape() != shape {
                return Err(Error::ShapeMismatch {
                    context: "FullAbcdRule",
                    expected: format!("{shape:?}"),
                    actual: format!("{name}: {:?}", m.shape()),
                });
            }
        }
        Ok(FullAbcdRule { a, b, c, d })
    }

    pub fn zeros(n_y: usize, n_x: usize) -> Self {
        let z = Matrix::zeros(n_y, n_x);
        FullAbcdRule {
            a: z.clone(),
            b: z.clone(),
            c: z.clone(),
            d: z,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.a.shape()
    }

    /// The `(A, B, C, D)` coefficients of connection `(r, c)`.
    pub fn connection(&self, r: usize, c: usize) -> [f64; 4] {
        [self.a.get(r, c), self.b.get(r, c), self.c.get(r, c), self.d.get(r, c)]
    }

    pub fn set_connection(&mut self, r: usize, c: usize, coeffs: [f64; 4]) {
        self.a.set(r, c, coeffs[0]);
        self.b.set(r, c, coeffs[1]);
        self.c.set(r, c, coeffs[2]);
        self.d.set(r, c, coeffs[3]);
    }
}

/// Neuron-factored rule: each coefficient matrix is the outer product of a
/// post-synaptic vector and a pre-synaptic vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedRule {
    pub ax: Vec<f64>,
    pub bx: Vec<f64>,
    pub cx: Vec<f64>,
    pub dx: Vec<f64>,
    pub ay: Vec<f64>,
    pub by: Vec<f64>,
    pub cy: Vec<f64>,
    pub dy: Vec<f64>,
}

impl DecomposedRule {
    pub fn zeros(n_y: usize, n_x: usize) -> Self {
        DecomposedRule {
            ax: vec![0.0; n_x],
            bx: vec![0.0; n_x],
            cx: vec![0.0; n_x],
            dx: vec![0.0; n_x],
            ay: vec![0.0; n_y],
            by: vec![0.0; n_y],
            cy: vec![0.0; n_y],
            dy: vec![0.0; n_y],
        }
    }

    pub fn n_x(&self) -> usize {
        self.ax.len()
    }

    pub fn n_y(&self) -> usize {
        self.ay.len()
    }

    pub fn param_count(&self) -> usize {
        4 * (self.n_x() + self.n_y())
    }

    fn check(&self) -> Result<()> {
        let (nx, ny) = (self.n_x(), self.n_y());
        let xs = [&self.bx, &self.cx, &self.dx];
        let ys = [&self.by, &self.cy, &self.dy];
        if xs.iter().any(|v| v.len() != nx) || ys.iter().any(|v| v.len() != ny) {
            return Err(Error::shape(
                "DecomposedRule",
                "uniform vector lengths",
                "ragged vectors",
            ));
        }
        Ok(())
    }

    /// Rank-1 expansion into the equivalent per-connection rule.
    pub fn to_full(&self) -> FullAbcdRule {
        FullAbcdRule {
            a: Matrix::outer(&self.ay, &self.ax),
            b: Matrix::outer(&self.by, &self.bx),
            c: Matrix::outer(&self.cy, &self.cx),
            d: Matrix::outer(&self.dy, &self.dx),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetroactiveRule {
    eta: f64,
}

impl RetroactiveRule {
    pub fn new(eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::InvalidArgument(format!(
                "trace decay must lie in [0, 1], got {eta}"
            )));
        }
        Ok(RetroactiveRule { eta })
    }

    /// Squash an unconstrained genotype scalar into `[0, 1]`.
    pub fn from_raw(raw: f64) -> Self {
        RetroactiveRule { eta: sigmoid(raw) }
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EligibilityTrace {
    pub e: Matrix,
}

impl EligibilityTrace {
    pub fn zeros(n_y: usize, n_x: usize) -> Self {
        EligibilityTrace {
            e: Matrix::zeros(n_y, n_x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModulationKind {
    None,
    PreDn,
    PostDn,
}

impl ModulationKind {
    pub fn label(self) -> &'static str {
        match self {
            ModulationKind::None => "none",
            ModulationKind::PreDn => "PreDN",
            ModulationKind::PostDn => "PostDN",
        }
    }
}

impl std::str::FromStr for ModulationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "" => Ok(ModulationKind::None),
            "predn" | "pre" => Ok(ModulationKind::PreDn),
            "postdn" | "post" => Ok(ModulationKind::PostDn),
            other => Err(Error::InvalidArgument(format!("unknown modulation `{other}`"))),
        }
    }
}

impl std::fmt::Display for ModulationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Static dopamine layer: one sigmoid unit per plastic layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationSpec {
    pub kind: ModulationKind,
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl ModulationSpec {
    pub fn none() -> Self {
        ModulationSpec {
            kind: ModulationKind::None,
            weights: Matrix::zeros(0, 0),
            bias: Vec::new(),
        }
    }

    pub fn new(kind: ModulationKind, weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if kind != ModulationKind::None && weights.rows() != bias.len() {
            return Err(Error::shape("ModulationSpec bias", weights.rows(), bias.len()));
        }
        Ok(ModulationSpec { kind, weights, bias })
    }

    /// Evaluate modulator `k` on `input`.
    #[inline]
    pub fn unit(&self, k: usize, input: &[f64]) -> f64 {
        sigmoid(dot(self.weights.row(k), input) + self.bias[k])
    }

    /// `(m_h, m_i)` for a plastic RNN. PreDN reads `[i_t, h_t]`, PostDN reads `h_{t+1}`.
    pub fn modulate(&self, i_t: &[f64], h_t: &[f64], h_next: &[f64]) -> Result<(f64, f64)> {
        match self.kind {
            ModulationKind::None => Ok((1.0, 1.0)),
            ModulationKind::PreDn => {
                let fan = i_t.len() + h_t.len();
                if self.weights.shape() != (2, fan) {
                    return Err(Error::shape(
                        "PreDN weights",
                        format!("(2, {fan})"),
                        format!("{:?}", self.weights.shape()),
                    ));
                }
                let mut joined = Vec::with_capacity(fan);
                joined.extend_from_slice(i_t);
                joined.extend_from_slice(h_t);
                Ok((self.unit(0, &joined), self.unit(1, &joined)))
            }
            ModulationKind::PostDn => {
                if self.weights.shape() != (2, h_next.len()) {
                    return Err(Error::shape(
                        "PostDN weights",
                        format!("(2, {})", h_next.len()),
                        format!("{:?}", self.weights.shape()),
                    ));
                }
                Ok((self.unit(0, h_next), self.unit(1, h_next)))
            }
        }
    }
}

fn check_shape(context: &'static str, shape: (usize, usize), x: &[f64], y: &[f64]) -> Result<()> {
    if shape != (y.len(), x.len()) {
        return Err(Error::shape(
            context,
            format!("{shape:?}"),
            format!("({}, {})", y.len(), x.len()),
        ));
    }
    Ok(())
}

/// `m · [A ⊙ (y⊗x) + B ⊙ (1⊗x) + C ⊙ (y⊗1) + D]`.
pub fn delta_full(m: f64, x: &[f64], y: &[f64], rule: &FullAbcdRule) -> Result<Matrix> {
    let mut out = Matrix::zeros(y.len(), x.len());
    apply_full(&mut out, m, x, y, rule)?;
    Ok(out)
}

pub fn apply_full(w: &mut Matrix, m: f64, x: &[f64], y: &[f64], rule: &FullAbcdRule) -> Result<()> {
    check_shape("delta_full", rule.shape(), x, y)?;
    check_shape("delta_full target", w.shape(), x, y)?;
    let n_x = x.len();
    for (r, &yr) in y.iter().enumerate() {
        let range = r * n_x..(r + 1) * n_x;
        let (a, b) = (&rule.a.as_slice()[range.clone()], &rule.b.as_slice()[range.clone()]);
        let (c, d) = (&rule.c.as_slice()[range.clone()], &rule.d.as_slice()[range]);
        for (k, wv) in w.row_mut(r).iter_mut().enumerate() {
            *wv += m * (a[k] * yr * x[k] + b[k] * x[k] + c[k] * yr + d[k]);
        }
    }
    Ok(())
}

/// `m · [(v_Ay⊙y)⊗(v_Ax⊙x) + v_By⊗(v_Bx⊙x) + (v_Cy⊙y)⊗v_Cx + v_Dy⊗v_Dx]`.
pub fn delta_decomposed(m: f64, x: &[f64], y: &[f64], rule: &DecomposedRule) -> Result<Matrix> {
    let mut out = Matrix::zeros(y.len(), x.len());
    apply_decomposed(&mut out, m, x, y, rule)?;
    Ok(out)
}

pub fn apply_decomposed(w: &mut Matrix, m: f64, x: &[f64], y: &[f64], rule: &DecomposedRule) -> Result<()> {
    rule.check()?;
    check_shape("delta_decomposed", (rule.n_y(), rule.n_x()), x, y)?;
    check_shape("delta_decomposed target", w.shape(), x, y)?;
    let ax: Vec<f64> = rule.ax.iter().zip(x).map(|(v, x)| v * x).collect();
    let bx: Vec<f64> = rule.bx.iter().zip(x).map(|(v, x)| v * x).collect();
    for (r, &yr) in y.iter().enumerate() {
        let ka = m * rule.ay[r] * yr;
        let kb = m * rule.by[r];
        let kc = m * rule.cy[r] * yr;
        let kd = m * rule.dy[r];
        for (k, wv) in w.row_mut(r).iter_mut().enumerate() {
            *wv += ka * ax[k] + kb * bx[k] + kc * rule.cx[k] + kd * rule.dx[k];
        }
    }
    Ok(())
}

/// Trace update then modulated weight increment, both using `e_{t+1}`.
pub fn retro_step(
    m: f64,
    x: &[f64],
    y: &[f64],
    trace: &EligibilityTrace,
    rule: &RetroactiveRule,
) -> Result<(Matrix, EligibilityTrace)> {
    let mut next = trace.clone();
    let mut delta = Matrix::zeros(y.len(), x.len());
    apply_retro(&mut delta, m, x, y, &mut next, rule)?;
    Ok((delta, next))
}

pub fn apply_retro(
    w: &mut Matrix,
    m: f64,
    x: &[f64],
    y: &[f64],
    trace: &mut EligibilityTrace,
    rule: &RetroactiveRule,
) -> Result<()> {
    check_shape("retro_step", trace.e.shape(), x, y)?;
    check_shape("retro_step target", w.shape(), x, y)?;
    let eta = rule.eta;
    let n_x = x.len();
    for (r, &yr) in y.iter().enumerate() {
        let e_row = &mut trace.e.as_mut_slice()[r * n_x..(r + 1) * n_x];
        let w_row = w.row_mut(r);
        for k in 0..n_x {
            let e_next = (1.0 - eta) * e_row[k] + eta * yr * x[k];
            e_row[k] = e_next;
            w_row[k] += m * e_next;
        }
    }
    Ok(())
}
