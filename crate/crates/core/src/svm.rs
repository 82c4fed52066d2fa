//! Linear SVMs trained by two-variable dual updates.
//!
//! Both C-SVC and nu-SVC use the maximal violating pair as working set and
//! scan indices in ascending order, so training is deterministic.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SvmVariant {
    C,
    Nu,
}

impl fmt::Display for SvmVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SvmVariant::C => "c",
            SvmVariant::Nu => "nu",
        })
    }
}

impl FromStr for SvmVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "c" => Ok(SvmVariant::C),
            "nu" => Ok(SvmVariant::Nu),
            other => Err(Error::InvalidArgument(format!("unknown svm variant `{other}` (expected c or nu)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub variant: SvmVariant,
    pub c: f64,
    pub nu: f64,
    /// Stopping threshold on the maximal KKT violation.
    pub tolerance: f64,
    /// Iteration cap of the optimizer.
    pub max_passes: usize,
    /// Min-max scale features using training-row ranges.
    #[serde(default)]
    pub scale: bool,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            variant: SvmVariant::Nu,
            c: 1.0,
            nu: 0.6,
            tolerance: 1e-3,
            max_passes: 1_000_000,
            scale: false,
        }
    }
}

impl SvmConfig {
    pub fn c_svc(c: f64) -> Self {
        Self {
            variant: SvmVariant::C,
            c,
            ..Self::default()
        }
    }

    pub fn nu_svc(nu: f64) -> Self {
        Self {
            variant: SvmVariant::Nu,
            nu,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.variant {
            SvmVariant::C if !(self.c > 0.0 && self.c.is_finite()) => {
                Err(Error::InvalidArgument(format!("c must be > 0, got {}", self.c)))
            }
            SvmVariant::Nu if !(self.nu > 0.0 && self.nu <= 1.0) => {
                Err(Error::InvalidArgument(format!("nu must be in (0, 1], got {}", self.nu)))
            }
            _ if !(self.tolerance > 0.0) => Err(Error::InvalidArgument(format!(
                "tolerance must be > 0, got {}",
                self.tolerance
            ))),
            _ if self.max_passes == 0 => Err(Error::InvalidArgument("max_passes must be >= 1".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub support_indices: Vec<usize>,
    /// (negative class id, positive class id)
    pub classes: (usize, usize),
}

impl LinearModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }
}

/// Dual solution behind a [`LinearModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    /// Unscaled dual variables, one per training row.
    pub alpha: Vec<f64>,
    /// Upper bound of each dual variable (C, or 1 for nu-SVC).
    pub upper: f64,
    /// Margin scale of nu-SVC; 1 for C-SVC.
    pub r: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Problem<'a> {
    x: &'a [Vec<f64>],
    y: Vec<f64>,
    /// y_i y_j <x_i, x_j>, row-major.
    q: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(x: &'a [Vec<f64>], y: &[i8]) -> Self {
        let n = x.len();
        let y: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
        let mut q = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = y[i] * y[j] * dot(&x[i], &x[j]);
                q[i * n + j] = v;
                q[j * n + i] = v;
            }
        }
        Self { x, y, q }
    }

    fn n(&self) -> usize {
        self.y.len()
    }

    fn qij(&self, i: usize, j: usize) -> f64 {
        self.q[i * self.n() + j]
    }
}

/// Shared two-variable update of the dual solver.
struct Solver<'p, 'a> {
    p: &'p Problem<'a>,
    alpha: Vec<f64>,
    grad: Vec<f64>,
    upper: f64,
}

impl Solver<'_, '_> {
    fn at_upper(&self, t: usize) -> bool {
        self.alpha[t] >= self.upper
    }

    fn at_lower(&self, t: usize) -> bool {
        self.alpha[t] <= 0.0
    }

    fn update(&mut self, i: usize, j: usize) {
        let p = self.p;
        let c = self.upper;
        let (old_i, old_j) = (self.alpha[i], self.alpha[j]);
        let (gi, gj) = (self.grad[i], self.grad[j]);
        let qij = p.qij(i, j);
        let (qii, qjj) = (p.qij(i, i), p.qij(j, j));
        let (mut ai, mut aj) = (old_i, old_j);
        if p.y[i] != p.y[j] {
            let mut quad = qii + qjj + 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-gi - gj) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let mut quad = qii + qjj - 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (gi - gj) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        self.alpha[i] = ai;
        self.alpha[j] = aj;
        let (di, dj) = (ai - old_i, aj - old_j);
        for k in 0..p.n() {
            self.grad[k] += p.qij(i, k) * di + p.qij(j, k) * dj;
        }
    }

    /// Maximal violating pair over the index subset selected by `in_set`.
    fn violating_pair(&self, in_set: impl Fn(usize) -> bool) -> (f64, usize, usize) {
        let (mut gmax, mut gmax2) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        let (mut i, mut j) = (usize::MAX, usize::MAX);
        for t in (0..self.p.n()).filter(|&t| in_set(t)) {
            let g = self.grad[t];
            if self.p.y[t] > 0.0 {
                if !self.at_upper(t) && -g > gmax {
                    gmax = -g;
                    i = t;
                }
                if !self.at_lower(t) && g > gmax2 {
                    gmax2 = g;
                    j = t;
                }
            } else {
                if !self.at_lower(t) && g > gmax {
                    gmax = g;
                    i = t;
                }
                if !self.at_upper(t) && -g > gmax2 {
                    gmax2 = -g;
                    j = t;
                }
            }
        }
        (gmax + gmax2, i, j)
    }
}

fn check_input(x: &[Vec<f64>], y: &[i8]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!("{} rows but {} labels", x.len(), y.len())));
    }
    let d = x.first().map_or(0, Vec::len);
    for row in x {
        if row.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite feature".into()));
        }
    }
    if y.iter().any(|&v| v != 1 && v != -1) {
        return Err(Error::InvalidArgument("labels must be +1 or -1".into()));
    }
    if !y.contains(&1) || !y.contains(&-1) {
        return Err(Error::Training("both classes need at least one example".into()));
    }
    Ok(d)
}

/// Trains one binary model; `y` holds +1 / -1. The model reports
/// `classes = (0, 1)` for (-1, +1).
pub fn train_binary(x: &[Vec<f64>], y: &[i8], cfg: &SvmConfig) -> Result<LinearModel> {
    train_binary_dual(x, y, cfg).map(|(m, _)| m)
}

pub fn train_binary_dual(x: &[Vec<f64>], y: &[i8], cfg: &SvmConfig) -> Result<(LinearModel, DualSolution)> {
    cfg.validate()?;
    let d = check_input(x, y)?;
    let problem = Problem::new(x, y);
    let n = problem.n();
    let (alpha, grad, upper) = match cfg.variant {
        SvmVariant::C => (vec![0.0; n], vec![-1.0; n], cfg.c),
        SvmVariant::Nu => {
            let n_pos = y.iter().filter(|&&v| v == 1).count();
            let n_neg = n - n_pos;
            let max = 2.0 * n_pos.min(n_neg) as f64 / n as f64;
            if cfg.nu > max {
                return Err(Error::InfeasibleNu { nu: cfg.nu, max });
            }
            let mut sum_pos = cfg.nu * n as f64 / 2.0;
            let mut sum_neg = sum_pos;
            let alpha: Vec<f64> = y
                .iter()
                .map(|&v| {
                    let s = if v == 1 { &mut sum_pos } else { &mut sum_neg };
                    let a = s.min(1.0);
                    *s -= a;
                    a
                })
                .collect();
            let grad = (0..n)
                .map(|k| (0..n).map(|t| problem.qij(k, t) * alpha[t]).sum())
                .collect();
            (alpha, grad, 1.0)
        }
    };
    let mut s = Solver {
        p: &problem,
        alpha,
        grad,
        upper,
    };

    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_passes {
        let (gap, i, j) = match cfg.variant {
            SvmVariant::C => s.violating_pair(|_| true),
            SvmVariant::Nu => {
                let pos = s.violating_pair(|t| problem.y[t] > 0.0);
                let neg = s.violating_pair(|t| problem.y[t] < 0.0);
                if pos.0 > neg.0 {
                    pos
                } else {
                    neg
                }
            }
        };
        if gap < cfg.tolerance || i == usize::MAX || j == usize::MAX {
            converged = true;
            break;
        }
        s.update(i, j);
        iterations += 1;
    }

    let (rho, r) = match cfg.variant {
        SvmVariant::C => (c_rho(&s), 1.0),
        SvmVariant::Nu => nu_rho(&s),
    };
    // A degenerate nu solution (r <= 0) is left unscaled; scaling by a
    // positive r does not change any prediction.
    let scale = if r > 0.0 { r } else { 1.0 };
    let mut weights = vec![0.0; d];
    let mut support = Vec::new();
    for t in 0..n {
        let coef = s.alpha[t] * problem.y[t] / scale;
        if s.alpha[t] > 0.0 {
            support.push(t);
            for (w, v) in weights.iter_mut().zip(&problem.x[t]) {
                *w += coef * v;
            }
        }
    }
    let model = LinearModel {
        weights,
        bias: -rho / scale,
        support_indices: support,
        classes: (0, 1),
    };
    let dual = DualSolution {
        alpha: s.alpha,
        upper,
        r,
        iterations,
        converged,
    };
    Ok((model, dual))
}

fn c_rho(s: &Solver) -> f64 {
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum) = (0usize, 0.0);
    for t in 0..s.p.n() {
        let yg = s.p.y[t] * s.grad[t];
        let pos = s.p.y[t] > 0.0;
        if s.at_upper(t) {
            if pos {
                lb = lb.max(yg);
            } else {
                ub = ub.min(yg);
            }
        } else if s.at_lower(t) {
            if pos {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum += yg;
        }
    }
    if free > 0 {
        sum / free as f64
    } else {
        (ub + lb) / 2.0
    }
}

fn nu_rho(s: &Solver) -> (f64, f64) {
    let side = |positive: bool| {
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut free, mut sum) = (0usize, 0.0);
        for t in (0..s.p.n()).filter(|&t| (s.p.y[t] > 0.0) == positive) {
            let g = s.grad[t];
            if s.at_upper(t) {
                lb = lb.max(g);
            } else if s.at_lower(t) {
                ub = ub.min(g);
            } else {
                free += 1;
                sum += g;
            }
        }
        if free > 0 {
            sum / free as f64
        } else {
            (ub + lb) / 2.0
        }
    };
    let (r1, r2) = (side(true), side(false));
    ((r1 - r2) / 2.0, (r1 + r2) / 2.0)
}

/// Per-feature min-max scaling to [0, 1]; constant features map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for r in rows {
            for k in 0..d {
                min[k] = min[k].min(r[k]);
                max[k] = max[k].max(r[k]);
            }
        }
        Self { min, max }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(k, &v)| {
                let span = self.max[k] - self.min[k];
                if span > 0.0 {
                    (v - self.min[k]) / span
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// One-vs-all models; a two-class problem uses a single binary model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MulticlassModel {
    pub variant: SvmVariant,
    pub params: SvmConfig,
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub classes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaler: Option<MinMaxScaler>,
}

/// Trains on rows labelled `0..n_classes`. Every class needs at least one row.
pub fn train_multiclass(rows: &[Vec<f64>], labels: &[usize], n_classes: usize, cfg: &SvmConfig) -> Result<MulticlassModel> {
    if n_classes < 2 {
        return Err(Error::Training("need at least two classes".into()));
    }
    if rows.len() != labels.len() {
        return Err(Error::InvalidArgument(format!("{} rows but {} labels", rows.len(), labels.len())));
    }
    for c in 0..n_classes {
        if !labels.contains(&c) {
            return Err(Error::Training(format!("class {c} has no training rows")));
        }
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range")));
    }
    let scaler = cfg.scale.then(|| MinMaxScaler::fit(rows));
    let scaled: Vec<Vec<f64>>;
    let x = match &scaler {
        Some(s) => {
            scaled = rows.iter().map(|r| s.transform(r)).collect();
            &scaled
        }
        None => rows,
    };
    let binary = |pos: usize| -> Result<LinearModel> {
        let y: Vec<i8> = labels.iter().map(|&l| if l == pos { 1 } else { -1 }).collect();
        train_binary(x, &y, cfg)
    };
    let models: Vec<LinearModel> = if n_classes == 2 {
        vec![binary(1)?]
    } else {
        (0..n_classes).map(binary).collect::<Result<_>>()?
    };
    Ok(MulticlassModel {
        variant: cfg.variant,
        params: *cfg,
        weights: models.iter().map(|m| m.weights.clone()).collect(),
        bias: models.iter().map(|m| m.bias).collect(),
        classes: (0..n_classes).collect(),
        scaler,
    })
}

impl MulticlassModel {
    pub fn dimension(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    /// Decision value per class. For two classes this is `[-f, f]`.
    pub fn decision_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dimension() {
            return Err(Error::Dimension {
                expected: self.dimension(),
                got: x.len(),
            });
        }
        let scaled;
        let x = match &self.scaler {
            Some(s) => {
                scaled = s.transform(x);
                &scaled
            }
            None => x,
        };
        let f: Vec<f64> = self.weights.iter().zip(&self.bias).map(|(w, b)| dot(w, x) + b).collect();
        Ok(if self.classes.len() == 2 { vec![-f[0], f[0]] } else { f })
    }

    /// Predicted class and the raw decision values. Two classes: class 1 iff
    /// `f >= 0`. More classes: argmax, lowest class id on ties.
    pub fn predict(&self, x: &[f64]) -> Result<(usize, Vec<f64>)> {
        let dv = self.decision_values(x)?;
        let class = if self.classes.len() == 2 {
            usize::from(dv[1] >= 0.0)
        } else {
            let mut best = 0;
            for (k, &v) in dv.iter().enumerate() {
                if v > dv[best] {
                    best = k;
                }
            }
            best
        };
        Ok((self.classes[class], dv))
    }

    pub fn predict_batch(&self, rows: &[Vec<f64>]) -> Result<Vec<usize>> {
        rows.iter().map(|r| self.predict(r).map(|p| p.0)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        let d = m.dimension();
        let expected = if m.classes.len() == 2 { 1 } else { m.classes.len() };
        if m.classes.len() < 2 || m.weights.len() != expected || m.bias.len() != expected {
            return Err(Error::InvalidArgument("model has inconsistent class count".into()));
        }
        if m.weights.iter().any(|w| w.len() != d) {
            return Err(Error::InvalidArgument("model weights differ in length".into()));
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_pair() {
        let x = vec![vec![-1.0], vec![1.0]];
        let (m, dual) = train_binary_dual(&x, &[-1, 1], &SvmConfig::c_svc(1.0)).unwrap();
        assert!((m.weights[0] - 1.0).abs() < 1e-12);
        assert!(m.bias.abs() < 1e-12);
        assert_eq!(m.support_indices, vec![0, 1]);
        assert!((dual.alpha[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn boundary_point_is_positive() {
        let x = vec![vec![-1.0], vec![1.0]];
        let m = train_multiclass(&x, &[0, 1], 2, &SvmConfig::c_svc(1.0)).unwrap();
        assert_eq!(m.predict(&[0.0]).unwrap().0, 1);
        assert_eq!(m.predict(&[0.3]).unwrap().0, 1);
        assert_eq!(m.predict(&[-0.3]).unwrap().0, 0);
        assert!(m.predict(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn infeasible_nu_is_an_error() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let err = train_binary(&x, &[-1, 1, 1, 1], &SvmConfig::nu_svc(0.6)).unwrap_err();
        assert!(matches!(err, Error::InfeasibleNu { .. }));
        assert!(train_binary(&x, &[-1, 1, 1, 1], &SvmConfig::nu_svc(0.5)).is_ok());
    }

    #[test]
    fn single_class_and_empty_class_are_errors() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(train_binary(&x, &[1, 1], &SvmConfig::default()).is_err());
        assert!(train_multiclass(&x, &[0, 1], 3, &SvmConfig::default()).is_err());
    }

    #[test]
    fn json_round_trip() {
        let x = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![3.0, 3.0]];
        let m = train_multiclass(&x, &[0, 1, 2], 3, &SvmConfig::c_svc(1.0)).unwrap();
        let back = MulticlassModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
        let v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        for key in ["variant", "params", "weights", "bias", "classes"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn scaler_maps_to_unit_range() {
        let s = MinMaxScaler::fit(&[vec![0.0, 5.0], vec![10.0, 5.0]]);
        assert_eq!(s.transform(&[5.0, 5.0]), vec![0.5, 0.0]);
    }
}
