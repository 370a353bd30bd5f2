//! Polynomial NARMAX models: candidate term generation, forward regression
//! with orthogonal least squares (error reduction ratio), free-run
//! prediction, equilibria and linearization.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::LtiPlant;
use crate::matops::{DenseMatrix, Vector};

/// Arguments of a signum wrapper closer than this to zero count as on the kink.
pub const KINK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    State(usize),
    Input(usize),
    Noise,
}

/// A signal at a lag; lag 0 is the current sample (continuous-time mode).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Var {
    pub signal: Signal,
    pub lag: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Factor {
    pub var: Var,
    pub exponent: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Wrapper {
    #[default]
    None,
    Sin,
    Signum,
}

/// A monomial in lagged signals, optionally wrapped by `sin` or `signum`
/// (wrapped terms have a single factor of exponent one).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TermSpec {
    pub factors: Vec<Factor>,
    #[serde(default)]
    pub wrapper: Wrapper,
}

impl TermSpec {
    pub fn constant() -> Self {
        TermSpec { factors: Vec::new(), wrapper: Wrapper::None }
    }

    pub fn degree(&self) -> u32 {
        self.factors.iter().map(|f| f.exponent).sum()
    }

    pub fn is_constant(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn eval(&self, value: impl Fn(Var) -> f64) -> f64 {
        let mono: f64 = self.factors.iter().map(|f| value(f.var).powi(f.exponent as i32)).product();
        match self.wrapper {
            Wrapper::None => mono,
            Wrapper::Sin => mono.sin(),
            Wrapper::Signum => signum(mono),
        }
    }

    /// Partial derivative with respect to `var`.
    pub fn derivative(&self, var: Var, value: impl Fn(Var) -> f64) -> Result<f64> {
        let Some(pos) = self.factors.iter().position(|f| f.var == var) else {
            return Ok(0.0);
        };
        let mut d = 1.0;
        for (i, f) in self.factors.iter().enumerate() {
            let v = value(f.var);
            if i == pos {
                d *= f.exponent as f64 * v.powi(f.exponent as i32 - 1);
            } else {
                d *= v.powi(f.exponent as i32);
            }
        }
        let mono: f64 = self.factors.iter().map(|f| value(f.var).powi(f.exponent as i32)).product();
        match self.wrapper {
            Wrapper::None => Ok(d),
            Wrapper::Sin => Ok(mono.cos() * d),
            Wrapper::Signum => {
                if mono.abs() <= KINK_TOL {
                    Err(Error::InvalidArgument(format!("term {self} is evaluated on its signum kink")))
                } else {
                    Ok(0.0)
                }
            }
        }
    }
}

fn signum(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl Ord for TermSpec {
    fn cmp(&self, other: &Self) -> Ordering {
        self.wrapper
            .cmp(&other.wrapper)
            .then(self.degree().cmp(&other.degree()))
            .then(self.factors.cmp(&other.factors))
    }
}

impl PartialOrd for TermSpec {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.signal {
            Signal::State(i) => write!(f, "x{}", i + 1)?,
            Signal::Input(j) => write!(f, "u{}", j + 1)?,
            Signal::Noise => write!(f, "e")?,
        }
        if self.lag > 0 {
            write!(f, "[k-{}]", self.lag)?;
        }
        Ok(())
    }
}

impl fmt::Display for TermSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mono = if self.factors.is_empty() {
            "1".to_string()
        } else {
            self.factors
                .iter()
                .map(|fa| if fa.exponent == 1 { fa.var.to_string() } else { format!("{}^{}", fa.var, fa.exponent) })
                .collect::<Vec<_>>()
                .join("*")
        };
        match self.wrapper {
            Wrapper::None => write!(f, "{mono}"),
            Wrapper::Sin => write!(f, "sin({mono})"),
            Wrapper::Signum => write!(f, "sign({mono})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mode {
    /// Target is `dx/dt` at the current sample, regressors use current values.
    Continuous,
    /// Target is `z(k)`, regressors use lagged values.
    Discrete { state_lags: usize, input_lags: Vec<usize>, noise_lags: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegressorSpec {
    pub degree: u32,
    pub mode: Mode,
    /// Wrappers applied to each single signal in addition to the monomials.
    pub wrappers: Vec<Wrapper>,
}

impl RegressorSpec {
    pub fn continuous(degree: u32) -> Self {
        RegressorSpec { degree, mode: Mode::Continuous, wrappers: vec![Wrapper::Sin, Wrapper::Signum] }
    }

    pub fn max_lag(&self) -> usize {
        match &self.mode {
            Mode::Continuous => 0,
            Mode::Discrete { state_lags, input_lags, noise_lags } => {
                (*state_lags).max(input_lags.iter().copied().max().unwrap_or(0)).max(*noise_lags)
            }
        }
    }

    fn variables(&self, n_out: usize, n_in: usize) -> Result<Vec<Var>> {
        let mut vars = Vec::new();
        match &self.mode {
            Mode::Continuous => {
                vars.extend((0..n_out).map(|i| Var { signal: Signal::State(i), lag: 0 }));
                vars.extend((0..n_in).map(|j| Var { signal: Signal::Input(j), lag: 0 }));
            }
            Mode::Discrete { state_lags, input_lags, noise_lags } => {
                if input_lags.len() != n_in {
                    return Err(Error::dim("input lags", n_in, input_lags.len()));
                }
                for i in 0..n_out {
                    vars.extend((1..=*state_lags).map(|lag| Var { signal: Signal::State(i), lag }));
                }
                for (j, &nl) in input_lags.iter().enumerate() {
                    vars.extend((1..=nl).map(|lag| Var { signal: Signal::Input(j), lag }));
                }
                vars.extend((1..=*noise_lags).map(|lag| Var { signal: Signal::Noise, lag }));
            }
        }
        vars.sort();
        Ok(vars)
    }

    /// Candidate terms in canonical order.
    pub fn candidates(&self, n_out: usize, n_in: usize) -> Result<Vec<TermSpec>> {
        let vars = self.variables(n_out, n_in)?;
        let mut terms = Vec::new();
        for d in 0..=self.degree {
            let mut combo = Vec::new();
            multisets(&vars, d as usize, 0, &mut combo, &mut terms);
        }
        for w in &self.wrappers {
            if *w == Wrapper::None {
                continue;
            }
            for v in &vars {
                terms.push(TermSpec { factors: vec![Factor { var: *v, exponent: 1 }], wrapper: *w });
            }
        }
        terms.sort();
        terms.dedup();
        if terms.is_empty() {
            return Err(Error::InvalidArgument("empty candidate set".into()));
        }
        Ok(terms)
    }
}

fn multisets(vars: &[Var], remaining: usize, start: usize, combo: &mut Vec<usize>, out: &mut Vec<TermSpec>) {
    if remaining == 0 {
        let mut factors: Vec<Factor> = Vec::new();
        for &i in combo.iter() {
            match factors.last_mut() {
                Some(f) if f.var == vars[i] => f.exponent += 1,
                _ => factors.push(Factor { var: vars[i], exponent: 1 }),
            }
        }
        out.push(TermSpec { factors, wrapper: Wrapper::None });
        return;
    }
    for i in start..vars.len() {
        combo.push(i);
        multisets(vars, remaining - 1, i, combo, out);
        combo.pop();
    }
}

/// Sampled input/output records, stored per signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub times: Vec<f64>,
    pub outputs: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub output_names: Vec<String>,
    pub input_names: Vec<String>,
}

impl Dataset {
    pub fn new(times: Vec<f64>, outputs: Vec<Vec<f64>>, inputs: Vec<Vec<f64>>) -> Result<Self> {
        let len = times.len();
        for s in outputs.iter().chain(inputs.iter()) {
            if s.len() != len {
                return Err(Error::dim("dataset signal length", len, s.len()));
            }
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("dataset times must be strictly increasing".into()));
        }
        let output_names = (1..=outputs.len()).map(|i| format!("x{i}")).collect();
        let input_names = (1..=inputs.len()).map(|i| format!("u{i}")).collect();
        Ok(Dataset { times, outputs, inputs, output_names, input_names })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.inputs.len()
    }

    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        Dataset {
            times: self.times[start..end].to_vec(),
            outputs: self.outputs.iter().map(|s| s[start..end].to_vec()).collect(),
            inputs: self.inputs.iter().map(|s| s[start..end].to_vec()).collect(),
            output_names: self.output_names.clone(),
            input_names: self.input_names.clone(),
        }
    }

    /// Leading `fraction` of the samples and the remainder.
    pub fn split(&self, fraction: f64) -> (Dataset, Dataset) {
        let cut = ((self.len() as f64) * fraction).round() as usize;
        let cut = cut.clamp(1, self.len().saturating_sub(1));
        (self.slice(0, cut), self.slice(cut, self.len()))
    }

    /// CSV with header `t,<outputs>,<inputs>`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for name in self.output_names.iter().chain(&self.input_names) {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for k in 0..self.len() {
            out.push_str(&format!("{}", self.times[k]));
            for s in self.outputs.iter().chain(&self.inputs) {
                out.push_str(&format!(",{}", s[k]));
            }
            out.push('\n');
        }
        out
    }

    /// Parses CSV with a header; columns named `x*`/`y*`/`v*` are outputs,
    /// `u*` inputs, the first column is time.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::Parse("empty CSV".into()))?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        if header.len() < 2 {
            return Err(Error::Parse("CSV needs a time column and at least one signal".into()));
        }
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
        for (lineno, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != header.len() {
                return Err(Error::Parse(format!("line {}: expected {} fields, found {}", lineno + 2, header.len(), fields.len())));
            }
            for (c, f) in fields.iter().enumerate() {
                let v: f64 = f.trim().parse().map_err(|_| Error::Parse(format!("line {}: bad number {f:?}", lineno + 2)))?;
                cols[c].push(v);
            }
        }
        let mut outputs = Vec::new();
        let mut inputs = Vec::new();
        let mut output_names = Vec::new();
        let mut input_names = Vec::new();
        for (name, col) in header.iter().zip(cols.iter()).skip(1) {
            if name.starts_with('u') {
                inputs.push(col.clone());
                input_names.push(name.clone());
            } else {
                outputs.push(col.clone());
                output_names.push(name.clone());
            }
        }
        let mut d = Dataset::new(cols[0].clone(), outputs, inputs)?;
        d.output_names = output_names;
        d.input_names = input_names;
        Ok(d)
    }

    fn value(&self, var: Var, k: usize, noise: Option<&[f64]>) -> f64 {
        let idx = k - var.lag;
        match var.signal {
            Signal::State(i) => self.outputs[i][idx],
            Signal::Input(j) => self.inputs[j][idx],
            Signal::Noise => noise.map_or(0.0, |e| e[idx]),
        }
    }

    fn inputs_equal(&self, a: usize, b: usize) -> bool {
        self.inputs.iter().all(|s| s[a] == s[b])
    }

    /// Finite-difference estimate of `dx_i/dt` at samples `0..len-1`: central
    /// differences where the input is unchanged across the sample, forward
    /// differences where it switches.
    pub fn derivative_target(&self, output: usize) -> Result<Vector> {
        let n = self.len();
        if n < 3 {
            return Err(Error::InvalidArgument("derivative target needs at least 3 samples".into()));
        }
        let x = &self.outputs[output];
        let t = &self.times;
        let rows = n - 1;
        let mut out = Vector::zeros(rows);
        for k in 0..rows {
            let central = k > 0 && self.inputs_equal(k - 1, k);
            out[k] = if central {
                (x[k + 1] - x[k - 1]) / (t[k + 1] - t[k - 1])
            } else if k + 2 < n && self.inputs_equal(k, k + 1) {
                let h = t[k + 1] - t[k];
                (-3.0 * x[k] + 4.0 * x[k + 1] - x[k + 2]) / (2.0 * h)
            } else {
                (x[k + 1] - x[k]) / (t[k + 1] - t[k])
            };
        }
        Ok(out)
    }
}

/// Candidate regressor matrix with one column per term.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub terms: Vec<TermSpec>,
    pub matrix: DenseMatrix,
    /// Sample index of each row.
    pub rows: Vec<usize>,
}

pub fn build_regressors(data: &Dataset, spec: &RegressorSpec) -> Result<Design> {
    build_regressors_with_noise(data, spec, None)
}

/// As [`build_regressors`], with a residual sequence supplying the noise lags.
pub fn build_regressors_with_noise(data: &Dataset, spec: &RegressorSpec, noise: Option<&[f64]>) -> Result<Design> {
    if let Mode::Discrete { noise_lags, .. } = &spec.mode {
        if *noise_lags > 0 && noise.is_none() {
            return Err(Error::InvalidArgument("noise lags requested without a residual sequence".into()));
        }
    }
    if let Some(e) = noise {
        if e.len() != data.len() {
            return Err(Error::dim("noise sequence", data.len(), e.len()));
        }
    }
    let terms = spec.candidates(data.n_outputs(), data.n_inputs())?;
    let max_lag = spec.max_lag();
    let rows: Vec<usize> = match spec.mode {
        // the last sample has no forward difference
        Mode::Continuous => (0..data.len().saturating_sub(1)).collect(),
        Mode::Discrete { .. } => (max_lag..data.len()).collect(),
    };
    if rows.is_empty() || data.len() <= max_lag {
        return Err(Error::InvalidArgument(format!("dataset of {} samples is too short for lag {max_lag}", data.len())));
    }
    let matrix = DenseMatrix::from_fn(rows.len(), terms.len(), |r, c| terms[c].eval(|v| data.value(v, rows[r], noise)));
    Ok(Design { terms, matrix, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTerm {
    pub term: TermSpec,
    pub coefficient: f64,
    pub err: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrolsOptions {
    /// Stop once `1 - sum(ERR)` drops below this.
    pub err_threshold: f64,
    pub max_terms: usize,
}

impl Default for FrolsOptions {
    fn default() -> Self {
        FrolsOptions { err_threshold: 1e-4, max_terms: 10 }
    }
}

/// Forward regression with orthogonal least squares. Columns are
/// orthogonalized by Householder reflections; at each step the candidate
/// with the largest error reduction ratio is added. Ties within 1e-9
/// (relative) go to the canonically smallest term.
pub fn frols_fit(design: &Design, target: &Vector, opts: &FrolsOptions) -> Result<Vec<ModelTerm>> {
    let (rows, cols) = design.matrix.shape();
    if target.len() != rows {
        return Err(Error::dim("frols target", rows, target.len()));
    }
    if !(opts.err_threshold > 0.0 && opts.err_threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("err_threshold must lie in (0, 1), got {}", opts.err_threshold)));
    }
    let yy = target.norm_squared();
    if !(yy > 0.0) {
        return Err(Error::InvalidArgument("target is identically zero".into()));
    }
    let mut w = design.matrix.clone();
    let mut y = target.clone();
    let col_norms: Vec<f64> = (0..cols).map(|j| design.matrix.column(j).norm_squared()).collect();
    let mut selected: Vec<usize> = Vec::new();
    let mut errs: Vec<f64> = Vec::new();
    let mut cumulative = 0.0;
    let limit = opts.max_terms.min(rows).min(cols);

    while selected.len() < limit && 1.0 - cumulative >= opts.err_threshold {
        let k = selected.len();
        let mut best: Option<(usize, f64)> = None;
        for (j, &cn) in col_norms.iter().enumerate() {
            if selected.contains(&j) {
                continue;
            }
            let full = w.column(j);
            let col = full.rows(k, rows - k);
            let nn = col.norm_squared();
            if !(nn > 1e-12 * cn) || nn == 0.0 {
                continue;
            }
            let g = col.dot(&y.rows(k, rows - k));
            let err = g * g / (nn * yy);
            best = match best {
                None => Some((j, err)),
                Some((bj, be)) => {
                    let tie = err >= be * (1.0 - 1e-9) && design.terms[j] < design.terms[bj];
                    if err > be * (1.0 + 1e-9) || tie {
                        Some((j, err))
                    } else {
                        Some((bj, be))
                    }
                }
            };
        }
        let Some((j, err)) = best else { break };
        // Householder reflector zeroing w[k+1.., j]
        let x: Vector = w.column(j).rows(k, rows - k).into_owned();
        let alpha = -x[0].signum() * x.norm();
        let alpha = if alpha == 0.0 { -x.norm() } else { alpha };
        let mut v = x.clone();
        v[0] -= alpha;
        let vv = v.norm_squared();
        if vv > 0.0 {
            for c in 0..cols {
                let mut col = w.column_mut(c);
                let mut tail = col.rows_mut(k, rows - k);
                let s = 2.0 * v.dot(&tail) / vv;
                tail.axpy(-s, &v, 1.0);
            }
            let mut yt = y.rows_mut(k, rows - k);
            let s = 2.0 * v.dot(&yt) / vv;
            yt.axpy(-s, &v, 1.0);
        }
        selected.push(j);
        errs.push(err);
        cumulative += err;
    }
    if selected.is_empty() {
        return Err(Error::InvalidArgument("no usable candidate column".into()));
    }
    // back substitution on the triangular factor
    let k = selected.len();
    let mut theta = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = y[i];
        for l in i + 1..k {
            s -= w[(i, selected[l])] * theta[l];
        }
        theta[i] = s / w[(i, selected[i])];
    }
    Ok(selected
        .iter()
        .zip(theta)
        .zip(errs)
        .map(|((&j, coefficient), err)| ModelTerm { term: design.terms[j].clone(), coefficient, err })
        .collect())
}

/// One fitted equation per output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarmaxModel {
    pub spec: RegressorSpec,
    pub n_outputs: usize,
    pub n_inputs: usize,
    pub equations: Vec<Vec<ModelTerm>>,
}

impl NarmaxModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: NarmaxModel = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        if m.equations.len() != m.n_outputs {
            return Err(Error::dim("model equations", m.n_outputs, m.equations.len()));
        }
        Ok(m)
    }

    pub fn has_term(&self, pred: impl Fn(&TermSpec) -> bool) -> bool {
        self.equations.iter().flatten().any(|t| pred(&t.term))
    }

    /// Right-hand side of a continuous-time model.
    pub fn rhs(&self, x: &[f64], u: &[f64]) -> Result<Vector> {
        if self.spec.mode != Mode::Continuous {
            return Err(Error::InvalidArgument("right-hand side requires a continuous-time model".into()));
        }
        if x.len() != self.n_outputs || u.len() != self.n_inputs {
            return Err(Error::dim("model arguments", format!("{}+{}", self.n_outputs, self.n_inputs), format!("{}+{}", x.len(), u.len())));
        }
        let value = |v: Var| match v.signal {
            Signal::State(i) => x[i],
            Signal::Input(j) => u[j],
            Signal::Noise => 0.0,
        };
        Ok(Vector::from_iterator(
            self.n_outputs,
            self.equations.iter().map(|eq| eq.iter().map(|t| t.coefficient * t.term.eval(value)).sum::<f64>()),
        ))
    }

    /// Jacobians `(df/dx, df/du)` of a continuous-time model.
    pub fn jacobians(&self, x: &[f64], u: &[f64]) -> Result<(DenseMatrix, DenseMatrix)> {
        self.rhs(x, u)?;
        let value = |v: Var| match v.signal {
            Signal::State(i) => x[i],
            Signal::Input(j) => u[j],
            Signal::Noise => 0.0,
        };
        let mut jx = DenseMatrix::zeros(self.n_outputs, self.n_outputs);
        let mut ju = DenseMatrix::zeros(self.n_outputs, self.n_inputs);
        for (i, eq) in self.equations.iter().enumerate() {
            for t in eq {
                for c in 0..self.n_outputs {
                    jx[(i, c)] += t.coefficient * t.term.derivative(Var { signal: Signal::State(c), lag: 0 }, value)?;
                }
                for c in 0..self.n_inputs {
                    ju[(i, c)] += t.coefficient * t.term.derivative(Var { signal: Signal::Input(c), lag: 0 }, value)?;
                }
            }
        }
        Ok((jx, ju))
    }
}

impl fmt::Display for NarmaxModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, eq) in self.equations.iter().enumerate() {
            let lhs = match self.spec.mode {
                Mode::Continuous => format!("dx{}/dt", i + 1),
                Mode::Discrete { .. } => format!("x{}[k]", i + 1),
            };
            let rhs = eq.iter().map(|t| format!("{:+.6e} {}", t.coefficient, t.term)).collect::<Vec<_>>().join(" ");
            writeln!(f, "{lhs} = {rhs}")?;
        }
        Ok(())
    }
}

/// Fits one equation per output of `data`.
pub fn identify(data: &Dataset, spec: &RegressorSpec, opts: &FrolsOptions) -> Result<NarmaxModel> {
    let design = build_regressors(data, spec)?;
    let mut equations = Vec::with_capacity(data.n_outputs());
    for i in 0..data.n_outputs() {
        let target = match spec.mode {
            Mode::Continuous => data.derivative_target(i)?,
            Mode::Discrete { .. } => Vector::from_iterator(design.rows.len(), design.rows.iter().map(|&k| data.outputs[i][k])),
        };
        equations.push(frols_fit(&design, &target, opts)?);
    }
    Ok(NarmaxModel { spec: spec.clone(), n_outputs: data.n_outputs(), n_inputs: data.n_inputs(), equations })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Predicted outputs per signal.
    pub outputs: Vec<Vec<f64>>,
    /// Root relative squared error per output.
    pub rrse: Vec<f64>,
}

/// `||pred - true|| / ||true - mean(true)||`.
pub fn rrse(pred: &[f64], truth: &[f64]) -> f64 {
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let num: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    let den: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    (num / den).sqrt()
}

/// Free-run simulation of the model driven by the recorded inputs, started
/// from `x0` (continuous mode) or from the recorded initial lags (discrete
/// mode). Continuous models are integrated by RK4 with inputs held between
/// samples.
pub fn free_run_predict(model: &NarmaxModel, data: &Dataset, x0: &[f64]) -> Result<Prediction> {
    if data.n_outputs() != model.n_outputs || data.n_inputs() != model.n_inputs {
        return Err(Error::dim("prediction dataset", model.n_outputs, data.n_outputs()));
    }
    let n = data.len();
    let mut pred = vec![vec![0.0; n]; model.n_outputs];
    match &model.spec.mode {
        Mode::Continuous => {
            if x0.len() != model.n_outputs {
                return Err(Error::dim("initial state", model.n_outputs, x0.len()));
            }
            let mut x = Vector::from_column_slice(x0);
            for k in 0..n {
                for (i, p) in pred.iter_mut().enumerate() {
                    p[k] = x[i];
                }
                if k + 1 == n {
                    break;
                }
                let u: Vec<f64> = data.inputs.iter().map(|s| s[k]).collect();
                let h = data.times[k + 1] - data.times[k];
                let f = |x: &Vector| model.rhs(x.as_slice(), &u);
                let k1 = f(&x)?;
                let k2 = f(&(&x + &k1 * (h / 2.0)))?;
                let k3 = f(&(&x + &k2 * (h / 2.0)))?;
                let k4 = f(&(&x + &k3 * h))?;
                x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
                if !x.iter().all(|v| v.is_finite()) || x.norm() > 1e9 {
                    return Err(Error::Divergence { time: data.times[k + 1], norm: x.norm() });
                }
            }
        }
        Mode::Discrete { .. } => {
            let lag = model.spec.max_lag();
            for (i, p) in pred.iter_mut().enumerate() {
                p[..lag.min(n)].copy_from_slice(&data.outputs[i][..lag.min(n)]);
            }
            for k in lag..n {
                let value = |v: Var| match v.signal {
                    Signal::State(i) => pred[i][k - v.lag],
                    Signal::Input(j) => data.inputs[j][k - v.lag],
                    Signal::Noise => 0.0,
                };
                let next: Vec<f64> = model
                    .equations
                    .iter()
                    .map(|eq| eq.iter().map(|t| t.coefficient * t.term.eval(value)).sum())
                    .collect();
                for (i, v) in next.into_iter().enumerate() {
                    if !v.is_finite() || v.abs() > 1e9 {
                        return Err(Error::Divergence { time: data.times[k], norm: v.abs() });
                    }
                    pred[i][k] = v;
                }
            }
        }
    }
    let rrse = (0..model.n_outputs).map(|i| rrse(&pred[i], &data.outputs[i])).collect();
    Ok(Prediction { outputs: pred, rrse })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumPoint {
    pub x_eq: Vec<f64>,
    pub u_eq: Vec<f64>,
    pub z_eq: Vec<f64>,
    pub residual: f64,
}

/// Which coordinates of `(x, u)` stay at their guessed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedAssignment {
    pub states: Vec<bool>,
    pub inputs: Vec<bool>,
}

impl FixedAssignment {
    pub fn inputs_only(n: usize, m: usize) -> Self {
        FixedAssignment { states: vec![false; n], inputs: vec![true; m] }
    }
}

/// Newton iteration (minimum-norm steps) on `f(x, u) = 0` over the free coordinates.
pub fn find_equilibrium(model: &NarmaxModel, guess_x: &[f64], guess_u: &[f64], fixed: &FixedAssignment) -> Result<EquilibriumPoint> {
    let (n, m) = (model.n_outputs, model.n_inputs);
    if fixed.states.len() != n || fixed.inputs.len() != m {
        return Err(Error::dim("fixed assignment", format!("{n}+{m}"), format!("{}+{}", fixed.states.len(), fixed.inputs.len())));
    }
    let free: Vec<usize> = fixed.states.iter().chain(&fixed.inputs).enumerate().filter(|(_, f)| !**f).map(|(i, _)| i).collect();
    if free.is_empty() {
        return Err(Error::InvalidArgument("equilibrium search has no free variables".into()));
    }
    let mut x = guess_x.to_vec();
    let mut u = guess_u.to_vec();
    let mut residual = f64::INFINITY;
    for _ in 0..100 {
        let f = model.rhs(&x, &u)?;
        residual = f.norm();
        if residual <= 1e-10 {
            return Ok(EquilibriumPoint { z_eq: x.clone(), x_eq: x, u_eq: u, residual });
        }
        let (jx, ju) = model.jacobians(&x, &u)?;
        let jac = DenseMatrix::from_fn(n, free.len(), |r, c| {
            let idx = free[c];
            if idx < n { jx[(r, idx)] } else { ju[(r, idx - n)] }
        });
        let step = jac
            .svd(true, true)
            .solve(&(-f), 1e-14)
            .map_err(|e| Error::InvalidArgument(format!("equilibrium Newton step: {e}")))?;
        for (c, &idx) in free.iter().enumerate() {
            if idx < n {
                x[idx] += step[c];
            } else {
                u[idx - n] += step[c];
            }
        }
    }
    let f = model.rhs(&x, &u)?;
    residual = residual.min(f.norm());
    if residual <= 1e-8 {
        return Ok(EquilibriumPoint { z_eq: x.clone(), x_eq: x, u_eq: u, residual });
    }
    Err(Error::NoConvergence { context: "find_equilibrium", iterations: 100, last_change: residual })
}

/// Assignment of model inputs to control and disturbance channels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelRoles {
    pub control: Vec<usize>,
    pub disturbance: Vec<usize>,
}

/// Linearization about `eq`; `C`, `D` are built from the weights `Q`, `R`.
pub fn linearize(model: &NarmaxModel, eq: &EquilibriumPoint, roles: &ChannelRoles, q: &DenseMatrix, r: &DenseMatrix) -> Result<LtiPlant> {
    if !(eq.residual <= 1e-8) {
        return Err(Error::InvalidArgument(format!("equilibrium residual {:.3e} exceeds 1e-8", eq.residual)));
    }
    for &c in roles.control.iter().chain(&roles.disturbance) {
        if c >= model.n_inputs {
            return Err(Error::InvalidArgument(format!("channel {c} out of range for {} inputs", model.n_inputs)));
        }
    }
    let (jx, ju) = model.jacobians(&eq.x_eq, &eq.u_eq)?;
    let pick = |cols: &[usize]| DenseMatrix::from_fn(model.n_outputs, cols.len(), |r, c| ju[(r, cols[c])]);
    LtiPlant::from_weights(jx, pick(&roles.control), pick(&roles.disturbance), q, r)
}

/// Central finite-difference Jacobians; an oracle for [`NarmaxModel::jacobians`].
pub fn numeric_jacobians(model: &NarmaxModel, x: &[f64], u: &[f64], h: f64) -> Result<(DenseMatrix, DenseMatrix)> {
    let (n, m) = (model.n_outputs, model.n_inputs);
    let mut jx = DenseMatrix::zeros(n, n);
    let mut ju = DenseMatrix::zeros(n, m);
    for c in 0..n {
        let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
        xp[c] += h;
        xm[c] -= h;
        jx.set_column(c, &((model.rhs(&xp, u)? - model.rhs(&xm, u)?) / (2.0 * h)));
    }
    for c in 0..m {
        let (mut up, mut um) = (u.to_vec(), u.to_vec());
        up[c] += h;
        um[c] -= h;
        ju.set_column(c, &((model.rhs(x, &up)? - model.rhs(x, &um)?) / (2.0 * h)));
    }
    Ok((jx, ju))
}
