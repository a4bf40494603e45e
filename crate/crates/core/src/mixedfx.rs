//! Random-intercept linear mixed models fit by restricted maximum likelihood.
//!
//! The criterion is profiled over the residual variance: with relative
//! standard deviations `theta_g = sigma_g / sigma`, the penalized system
//!
//! ```text
//! A = [ L'Z'ZL + I   L'Z'X ]      A [u; beta] = [ L'Z'y ; X'y ]
//!     [ X'ZL         X'X   ]
//! ```
//!
//! gives `beta`, spherical effects `u` and the penalized residual sum of
//! squares `r2`, and `-2 REML = log det A + (n - p)(1 + log(2 pi r2 / (n - p)))`.
//! The search runs over `log theta_g^2` with Nelder-Mead restarts followed
//! by a finite-difference Newton polish; components that prefer the
//! boundary are set to exactly zero.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Name of the degrees-of-freedom approximation used for Wald tests.
pub const DF_METHOD: &str = "between-within";
/// Convergence tolerance on the criterion.
pub const TOLERANCE: f64 = 1e-8;
/// Nelder-Mead restarts after the first run.
pub const MAX_RESTARTS: usize = 4;
/// Character length separating the two target-length bins.
pub const LENGTH_BIN_LIMIT: usize = 176;

const LOG_THETA2_MIN: f64 = -25.0;
const LOG_THETA2_MAX: f64 = 25.0;

/// A table of string cells; numeric columns are parsed on use.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DataTable {
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl DataTable {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self> {
        for (i, r) in rows.iter().enumerate() {
            if r.len() != columns.len() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected {} cells, found {}", columns.len(), r.len()),
                });
            }
        }
        Ok(DataTable { columns, rows })
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let columns = rdr.headers()?.iter().map(str::to_string).collect();
        let rows = rdr
            .records()
            .map(|r| Ok(r?.iter().map(str::to_string).collect()))
            .collect::<Result<Vec<Vec<String>>>>()?;
        DataTable::new(columns, rows)
    }

    /// Flat JSON objects, one per line. Columns are the keys of the first
    /// record; later records must have the same keys.
    pub fn read_jsonl<R: Read>(reader: R) -> Result<Self> {
        let objs: Vec<serde_json::Map<String, serde_json::Value>> =
            crate::corpus::parse_jsonl(std::io::BufReader::new(reader))?;
        let columns: Vec<String> = objs
            .first()
            .map(|o| o.keys().cloned().collect())
            .unwrap_or_default();
        let mut rows = Vec::with_capacity(objs.len());
        for (i, o) in objs.iter().enumerate() {
            if o.len() != columns.len() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "record keys differ from the first record".into(),
                });
            }
            let row = columns
                .iter()
                .map(|c| match o.get(c) {
                    Some(serde_json::Value::String(s)) => Ok(s.clone()),
                    Some(v @ (serde_json::Value::Number(_) | serde_json::Value::Bool(_))) => {
                        Ok(v.to_string())
                    }
                    _ => Err(Error::Parse {
                        line: i + 1,
                        msg: format!("column {c} missing or not a scalar"),
                    }),
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        DataTable::new(columns, rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => DataTable::read_jsonl(f),
            _ => DataTable::read_csv(f),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    fn index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::NotFound(format!("column {name}")))
    }

    pub fn labels(&self, name: &str) -> Result<Vec<String>> {
        // a:b interaction of categorical columns
        if name.contains(':') {
            let parts = name
                .split(':')
                .map(|p| self.labels(p))
                .collect::<Result<Vec<_>>>()?;
            return Ok((0..self.len())
                .map(|i| {
                    parts
                        .iter()
                        .map(|p| p[i].as_str())
                        .collect::<Vec<_>>()
                        .join(":")
                })
                .collect());
        }
        let j = self.index(name)?;
        Ok(self.rows.iter().map(|r| r[j].clone()).collect())
    }

    pub fn numeric(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.index(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| match r[j].trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse {
                    line: i + 1,
                    msg: format!("column {name}: {:?} is not a finite number", r[j]),
                }),
            })
            .collect()
    }

    pub fn push_column(&mut self, name: &str, values: Vec<String>) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                actual: values.len(),
            });
        }
        if self.columns.iter().any(|c| c == name) {
            return Err(Error::invalid(format!("column {name} already exists")));
        }
        self.columns.push(name.to_string());
        for (r, v) in self.rows.iter_mut().zip(values) {
            r.push(v);
        }
        Ok(())
    }

    /// Adds `new_name` with values `short` (length <= limit) or `long`.
    pub fn bin_length(&mut self, column: &str, new_name: &str, limit: usize) -> Result<()> {
        let vals = self.numeric(column)?;
        let bins = vals
            .iter()
            .map(|&v| if v <= limit as f64 { "short" } else { "long" }.to_string())
            .collect();
        self.push_column(new_name, bins)
    }
}

/// `response ~ 1 | factor [+ factor ...] [+ (1 | group) ...]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixedModelSpec {
    pub response: String,
    pub fixed: Vec<String>,
    /// Grouping columns, `a:b` denoting nested groups.
    pub random_groups: Vec<String>,
}

impl MixedModelSpec {
    /// Parses a formula such as `ter ~ system + (1 | talk_id/sent_id)`.
    /// Nesting `a/b` expands to the groupings `a` and `a:b`.
    pub fn parse(formula: &str) -> Result<Self> {
        let bad = |m: &str| Error::invalid(format!("formula {formula:?}: {m}"));
        let (lhs, rhs) = formula.split_once('~').ok_or_else(|| bad("missing '~'"))?;
        let response = lhs.trim().to_string();
        if response.is_empty() {
            return Err(bad("missing response"));
        }
        let mut fixed = Vec::new();
        let mut random_groups: Vec<String> = Vec::new();
        let mut rest = rhs.trim();
        while !rest.is_empty() {
            let term;
            if rest.starts_with('(') {
                let close = rest
                    .find(')')
                    .ok_or_else(|| bad("unbalanced parenthesis"))?;
                term = &rest[..=close];
                rest = rest[close + 1..].trim_start();
            } else {
                let end = rest.find('+').unwrap_or(rest.len());
                term = rest[..end].trim();
                rest = &rest[end..];
            }
            if let Some(inner) = term.strip_prefix('(').and_then(|t| t.strip_suffix(')')) {
                let (one, group) = inner
                    .split_once('|')
                    .ok_or_else(|| bad("random term needs '|'"))?;
                if one.trim() != "1" {
                    return Err(bad("only random intercepts (1 | g) are supported"));
                }
                let names: Vec<&str> = group.split('/').map(str::trim).collect();
                if names.iter().any(|n| n.is_empty()) {
                    return Err(bad("empty grouping name"));
                }
                for k in 1..=names.len() {
                    let g = names[..k].join(":");
                    if !random_groups.contains(&g) {
                        random_groups.push(g);
                    }
                }
            } else if term.is_empty() {
                return Err(bad("empty term"));
            } else if term != "1" {
                fixed.push(term.to_string());
            }
            rest = rest.trim_start();
            if let Some(r) = rest.strip_prefix('+') {
                rest = r.trim_start();
                if rest.is_empty() {
                    return Err(bad("trailing '+'"));
                }
            } else if !rest.is_empty() {
                return Err(bad("expected '+' between terms"));
            }
        }
        if rhs.trim().is_empty() {
            return Err(bad("empty right-hand side"));
        }
        Ok(MixedModelSpec {
            response,
            fixed,
            random_groups,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedEffect {
    /// `(Intercept)` or `factor=level` for a treatment contrast against
    /// the factor's first level in sorted order.
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub df: f64,
    pub t_value: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponent {
    pub group: String,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupIntercept {
    pub level: String,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedFit {
    pub formula: MixedModelSpec,
    pub n_obs: usize,
    pub fixed_effects: Vec<FixedEffect>,
    /// One entry per grouping, in formula order.
    pub variance_components: Vec<VarianceComponent>,
    pub residual_variance: f64,
    /// Predicted offsets per grouping, levels in first-seen order.
    pub group_intercepts: BTreeMap<String, Vec<GroupIntercept>>,
    pub reml_loglik: f64,
    pub df_method: String,
    pub evaluations: usize,
    /// REML log-likelihood at every point the optimizer evaluated.
    #[serde(skip)]
    pub probes: Vec<f64>,
}

impl MixedFit {
    pub fn fixed(&self, name: &str) -> Option<&FixedEffect> {
        self.fixed_effects.iter().find(|f| f.name == name)
    }
}

struct Problem {
    n: usize,
    p: usize,
    q: usize,
    /// Per grouping: level index of each observation and the block offset.
    groups: Vec<(Vec<usize>, usize)>,
    x: DMatrix<f64>,
    y: DVector<f64>,
    ztz: DMatrix<f64>,
    ztx: DMatrix<f64>,
    xtx: DMatrix<f64>,
    zty: DVector<f64>,
    xty: DVector<f64>,
}

struct Solution {
    deviance: f64,
    beta: DVector<f64>,
    u: DVector<f64>,
    sigma2: f64,
    chol: nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>,
}

impl Problem {
    fn lambda(&self, theta2: &[f64]) -> Vec<f64> {
        let mut lam = vec![0.0; self.q];
        for (g, (idx, off)) in self.groups.iter().enumerate() {
            let levels = idx.iter().max().map_or(0, |m| m + 1);
            lam[*off..off + levels].fill(theta2[g].sqrt());
        }
        lam
    }

    fn solve(&self, theta2: &[f64]) -> Option<Solution> {
        let (q, p, n) = (self.q, self.p, self.n);
        let lam = self.lambda(theta2);
        let mut a = DMatrix::<f64>::zeros(q + p, q + p);
        for i in 0..q {
            for j in 0..q {
                a[(i, j)] = lam[i] * lam[j] * self.ztz[(i, j)];
            }
            a[(i, i)] += 1.0;
            for j in 0..p {
                let v = lam[i] * self.ztx[(i, j)];
                a[(i, q + j)] = v;
                a[(q + j, i)] = v;
            }
        }
        a.view_mut((q, q), (p, p)).copy_from(&self.xtx);
        let mut rhs = DVector::<f64>::zeros(q + p);
        for i in 0..q {
            rhs[i] = lam[i] * self.zty[i];
        }
        rhs.rows_mut(q, p).copy_from(&self.xty);
        let chol = a.cholesky()?;
        let sol = chol.solve(&rhs);
        let u = sol.rows(0, q).into_owned();
        let beta = sol.rows(q, p).into_owned();
        let fitted = &self.x * &beta;
        let mut r2 = u.norm_squared();
        for i in 0..n {
            let mut zi = 0.0;
            for (idx, off) in &self.groups {
                let k = off + idx[i];
                zi += lam[k] * u[k];
            }
            let e = self.y[i] - fitted[i] - zi;
            r2 += e * e;
        }
        let dof = (n - p) as f64;
        let logdet: f64 = 2.0
            * chol
                .l_dirty()
                .diagonal()
                .iter()
                .map(|d| d.ln())
                .sum::<f64>();
        let deviance = logdet + dof * (1.0 + (2.0 * std::f64::consts::PI * r2 / dof).ln());
        if !deviance.is_finite() {
            return None;
        }
        Some(Solution {
            deviance,
            beta,
            u,
            sigma2: r2 / dof,
            chol,
        })
    }
}

/// Records every evaluation and remembers the best point.
struct Tracker<'a> {
    problem: &'a Problem,
    evaluations: usize,
    probes: Vec<f64>,
    best: Option<(f64, Vec<f64>)>,
}

impl Tracker<'_> {
    fn eval_theta2(&mut self, theta2: &[f64]) -> f64 {
        self.evaluations += 1;
        let d = self
            .problem
            .solve(theta2)
            .map_or(f64::INFINITY, |s| s.deviance);
        self.probes.push(-0.5 * d);
        if d.is_finite() && self.best.as_ref().is_none_or(|(b, _)| d < *b) {
            self.best = Some((d, theta2.to_vec()));
        }
        d
    }

    fn eval_log(&mut self, phi: &[f64]) -> f64 {
        let t: Vec<f64> = phi
            .iter()
            .map(|v| v.clamp(LOG_THETA2_MIN, LOG_THETA2_MAX).exp())
            .collect();
        self.eval_theta2(&t)
    }
}

fn nelder_mead(tr: &mut Tracker, start: &[f64], step: f64, max_evals: usize) -> (Vec<f64>, f64) {
    let k = start.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(k + 1);
    let f0 = tr.eval_log(start);
    simplex.push((start.to_vec(), f0));
    for i in 0..k {
        let mut v = start.to_vec();
        v[i] += step;
        let f = tr.eval_log(&v);
        simplex.push((v, f));
    }
    let mut evals = k + 1;
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let f_best = simplex[0].1;
        let f_worst = simplex[k].1;
        let diam = simplex
            .iter()
            .skip(1)
            .map(|(v, _)| {
                v.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if (f_worst - f_best).abs() <= TOLERANCE * (1.0 + f_best.abs()) && diam < 1e-6 {
            break;
        }
        let centroid: Vec<f64> = (0..k)
            .map(|j| simplex[..k].iter().map(|(v, _)| v[j]).sum::<f64>() / k as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[k].0)
                .map(|(c, w)| (c + t * (w - c)).clamp(LOG_THETA2_MIN, LOG_THETA2_MAX))
                .collect()
        };
        let xr = along(-1.0);
        let fr = tr.eval_log(&xr);
        evals += 1;
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = tr.eval_log(&xe);
            evals += 1;
            simplex[k] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[k - 1].1 {
            simplex[k] = (xr, fr);
        } else {
            let t = if fr < simplex[k].1 { -0.5 } else { 0.5 };
            let xc = along(t);
            let fc = tr.eval_log(&xc);
            evals += 1;
            if fc < simplex[k].1.min(fr) {
                simplex[k] = (xc, fc);
            } else {
                let x0 = simplex[0].0.clone();
                for s in simplex.iter_mut().skip(1) {
                    let v: Vec<f64> =
                        s.0.iter()
                            .zip(&x0)
                            .map(|(a, b)| b + 0.5 * (a - b))
                            .collect();
                    let f = tr.eval_log(&v);
                    *s = (v, f);
                    evals += 1;
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}

/// Newton iterations with finite-difference derivatives; only improving
/// steps are taken.
fn newton_polish(tr: &mut Tracker, mut phi: Vec<f64>, mut f: f64) -> (Vec<f64>, f64) {
    let k = phi.len();
    let h = 1e-4;
    for _ in 0..30 {
        let mut grad = DVector::zeros(k);
        let mut hess = DMatrix::zeros(k, k);
        for i in 0..k {
            let mut a = phi.clone();
            a[i] += h;
            let fp = tr.eval_log(&a);
            a[i] -= 2.0 * h;
            let fm = tr.eval_log(&a);
            grad[i] = (fp - fm) / (2.0 * h);
            hess[(i, i)] = (fp - 2.0 * f + fm) / (h * h);
            for j in 0..i {
                let mut b = phi.clone();
                b[i] += h;
                b[j] += h;
                let fpp = tr.eval_log(&b);
                b[j] -= 2.0 * h;
                let fpm = tr.eval_log(&b);
                b[i] -= 2.0 * h;
                let fmm = tr.eval_log(&b);
                b[j] += 2.0 * h;
                let fmp = tr.eval_log(&b);
                let v = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        let Some(chol) = hess.clone().cholesky() else {
            break;
        };
        let dir = chol.solve(&(-&grad));
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-6 {
            let cand: Vec<f64> = phi
                .iter()
                .zip(dir.iter())
                .map(|(p, d)| (p + t * d).clamp(LOG_THETA2_MIN, LOG_THETA2_MAX))
                .collect();
            let fc = tr.eval_log(&cand);
            if fc < f {
                let done = f - fc < 1e-13 * (1.0 + f.abs());
                phi = cand;
                f = fc;
                moved = !done;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    (phi, f)
}

/// Index of each observation's level, levels numbered by first appearance.
fn level_index(labels: &[String]) -> (Vec<usize>, Vec<String>) {
    let mut seen: HashMap<&str, usize> = HashMap::new();
    let mut levels = Vec::new();
    let idx = labels
        .iter()
        .map(|l| {
            *seen.entry(l.as_str()).or_insert_with(|| {
                levels.push(l.clone());
                levels.len() - 1
            })
        })
        .collect();
    (idx, levels)
}

fn numeric_rank(m: &DMatrix<f64>) -> usize {
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    eig.eigenvalues
        .iter()
        .filter(|v| **v > 1e-10 * max.max(1e-300))
        .count()
}

pub fn fit_reml(spec: &MixedModelSpec, data: &DataTable) -> Result<MixedFit> {
    let y = data.numeric(&spec.response)?;
    let n = y.len();
    // fixed design: intercept plus treatment contrasts
    let mut names = vec!["(Intercept)".to_string()];
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
    let mut factor_of_col: Vec<Option<usize>> = vec![None];
    let mut factor_labels = Vec::new();
    for (fi, f) in spec.fixed.iter().enumerate() {
        let labels = data.labels(f)?;
        let mut levels: Vec<&String> = labels.iter().collect();
        levels.sort();
        levels.dedup();
        if levels.len() < 2 {
            return Err(Error::invalid(format!(
                "fixed factor {f} needs at least two levels"
            )));
        }
        for lv in &levels[1..] {
            names.push(format!("{f}={lv}"));
            cols.push(
                labels
                    .iter()
                    .map(|l| if l == *lv { 1.0 } else { 0.0 })
                    .collect(),
            );
            factor_of_col.push(Some(fi));
        }
        factor_labels.push(labels);
    }
    let p = cols.len();
    if n <= p {
        return Err(Error::invalid(format!(
            "{n} observations for {p} fixed effects"
        )));
    }
    let x = DMatrix::from_fn(n, p, |i, j| cols[j][i]);

    let mut groups = Vec::new();
    let mut group_levels = Vec::new();
    let mut q = 0;
    for g in &spec.random_groups {
        let (idx, levels) = level_index(&data.labels(g)?);
        groups.push((idx, q));
        q += levels.len();
        group_levels.push(levels);
    }
    let mut z = DMatrix::<f64>::zeros(n, q);
    for (idx, off) in &groups {
        for (i, &l) in idx.iter().enumerate() {
            z[(i, off + l)] = 1.0;
        }
    }
    let yv = DVector::from_vec(y);
    let xtx = x.transpose() * &x;
    if xtx.clone().cholesky().is_none() || numeric_rank(&xtx) < p {
        return Err(Error::Numerical("singular fixed-effects design".into()));
    }
    let problem = Problem {
        n,
        p,
        q,
        ztz: z.transpose() * &z,
        ztx: z.transpose() * &x,
        zty: z.transpose() * &yv,
        xty: x.transpose() * &yv,
        xtx,
        groups,
        x,
        y: yv,
    };
    let k = spec.random_groups.len();
    let mut tr = Tracker {
        problem: &problem,
        evaluations: 0,
        probes: Vec::new(),
        best: None,
    };
    if k > 0 {
        let (mut phi, mut f) = nelder_mead(&mut tr, &vec![0.0; k], 1.0, 400 * k);
        for _ in 0..MAX_RESTARTS {
            let (phi2, f2) = nelder_mead(&mut tr, &phi, 0.5, 400 * k);
            let gained = f - f2;
            if f2 < f {
                phi = phi2;
                f = f2;
            }
            if gained <= TOLERANCE * (1.0 + f.abs()) {
                break;
            }
        }
        newton_polish(&mut tr, phi, f);
        // components drifting to the lower bound are tried at exactly zero
        let (_, theta2) = tr.best.clone().ok_or_else(|| {
            Error::Numerical("REML criterion is not finite at any probed point".into())
        })?;
        for g in 0..k {
            if theta2[g] < (LOG_THETA2_MIN + 10.0).exp() {
                let mut t = tr.best.as_ref().expect("best").1.clone();
                t[g] = 0.0;
                tr.eval_theta2(&t);
            }
        }
    } else {
        tr.eval_theta2(&[]);
    }
    let evaluations = tr.evaluations;
    let probes = tr.probes;
    let (_, theta2) = tr.best.ok_or_else(|| {
        Error::Numerical(format!(
            "no finite REML criterion after {evaluations} evaluations"
        ))
    })?;
    let sol = problem
        .solve(&theta2)
        .ok_or_else(|| Error::Numerical("optimum could not be re-solved".into()))?;

    // fixed-effect covariance: sigma^2 times the beta block of A^-1
    let mut cov = DMatrix::<f64>::zeros(p, p);
    for j in 0..p {
        let mut e = DVector::<f64>::zeros(q + p);
        e[q + j] = 1.0;
        let col = sol.chol.solve(&e);
        for i in 0..p {
            cov[(i, j)] = sol.sigma2 * col[q + i];
        }
    }

    // between-within degrees of freedom
    let mut xz = DMatrix::<f64>::zeros(p + q, p + q);
    xz.view_mut((0, 0), (p, p)).copy_from(&problem.xtx);
    xz.view_mut((p, 0), (q, p)).copy_from(&problem.ztx);
    xz.view_mut((0, p), (p, q))
        .copy_from(&problem.ztx.transpose());
    xz.view_mut((p, p), (q, q)).copy_from(&problem.ztz);
    let within_df = (n - numeric_rank(&xz)).max(1) as f64;
    let constant_within = |fi: usize, g: usize| -> bool {
        let (idx, _) = &problem.groups[g];
        let mut first: HashMap<usize, &str> = HashMap::new();
        idx.iter()
            .zip(&factor_labels[fi])
            .all(|(l, v)| *first.entry(*l).or_insert(v.as_str()) == v.as_str())
    };
    let between_params = |g: usize| -> usize {
        1 + factor_of_col[1..]
            .iter()
            .filter(|f| constant_within(f.expect("factor column"), g))
            .count()
    };
    let col_df = |j: usize| -> f64 {
        let Some(fi) = factor_of_col[j] else {
            return within_df;
        };
        (0..k)
            .filter(|&g| constant_within(fi, g))
            .map(|g| {
                group_levels[g]
                    .len()
                    .saturating_sub(between_params(g))
                    .max(1) as f64
            })
            .fold(within_df, f64::min)
    };

    let mut fixed_effects = Vec::with_capacity(p);
    for j in 0..p {
        let est = sol.beta[j];
        let se = cov[(j, j)].max(0.0).sqrt();
        let df = col_df(j);
        let t = if se > 0.0 {
            est / se
        } else {
            f64::INFINITY.copysign(est)
        };
        let p_value = if se > 0.0 {
            let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Numerical(e.to_string()))?;
            2.0 * dist.sf(t.abs())
        } else {
            0.0
        };
        fixed_effects.push(FixedEffect {
            name: names[j].clone(),
            estimate: est,
            std_error: se,
            df,
            t_value: t,
            p_value,
        });
    }
    let lam = problem.lambda(&theta2);
    let mut group_intercepts = BTreeMap::new();
    let mut variance_components = Vec::with_capacity(k);
    for (g, name) in spec.random_groups.iter().enumerate() {
        let off = problem.groups[g].1;
        let offs = group_levels[g]
            .iter()
            .enumerate()
            .map(|(l, level)| GroupIntercept {
                level: level.clone(),
                offset: lam[off + l] * sol.u[off + l],
            })
            .collect();
        group_intercepts.insert(name.clone(), offs);
        variance_components.push(VarianceComponent {
            group: name.clone(),
            variance: theta2[g] * sol.sigma2,
        });
    }
    Ok(MixedFit {
        formula: spec.clone(),
        n_obs: n,
        fixed_effects,
        variance_components,
        residual_variance: sol.sigma2,
        group_intercepts,
        reml_loglik: -0.5 * sol.deviance,
        df_method: DF_METHOD.into(),
        evaluations,
        probes,
    })
}

/// Levels of `grouping` by predicted offset, highest first; ties keep
/// first-seen order.
pub fn rank_group_intercepts(fit: &MixedFit, grouping: &str) -> Result<Vec<GroupIntercept>> {
    let mut v = fit
        .group_intercepts
        .get(grouping)
        .ok_or_else(|| Error::NotFound(format!("grouping {grouping}")))?
        .clone();
    v.sort_by(|a, b| b.offset.total_cmp(&a.offset));
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldTest {
    pub contrast: String,
    pub estimate: f64,
    pub std_error: f64,
    pub df: f64,
    pub df_method: String,
    pub p_value: f64,
    pub alpha_level: f64,
    pub significant: bool,
}

/// Two-sided Wald t-test of one fixed effect.
pub fn significance(fit: &MixedFit, contrast: &str, alpha_level: f64) -> Result<WaldTest> {
    let fe = fit
        .fixed(contrast)
        .ok_or_else(|| Error::NotFound(format!("fixed effect {contrast}")))?;
    Ok(WaldTest {
        contrast: contrast.into(),
        estimate: fe.estimate,
        std_error: fe.std_error,
        df: fe.df,
        df_method: fit.df_method.clone(),
        p_value: fe.p_value,
        alpha_level,
        significant: fe.p_value < alpha_level,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(cols: &[&str], rows: Vec<Vec<String>>) -> DataTable {
        DataTable::new(cols.iter().map(|s| s.to_string()).collect(), rows).unwrap()
    }

    #[test]
    fn formula_parsing() {
        let s = MixedModelSpec::parse("ksmr ~ mode + (1 | user_id) + (1|talk_id/sent_id)").unwrap();
        assert_eq!(s.response, "ksmr");
        assert_eq!(s.fixed, ["mode"]);
        assert_eq!(s.random_groups, ["user_id", "talk_id", "talk_id:sent_id"]);
        assert!(MixedModelSpec::parse("y ~ 1 + (1|g)")
            .unwrap()
            .fixed
            .is_empty());
        assert!(MixedModelSpec::parse("y ~ ").is_err());
        assert!(MixedModelSpec::parse("y ~ f + (x|g)").is_err());
        assert!(MixedModelSpec::parse("y f").is_err());
        assert!(MixedModelSpec::parse("y ~ f +").is_err());
    }

    #[test]
    fn nested_labels_and_binning() {
        let mut t = table(
            &["a", "b", "len"],
            vec![
                vec!["x".into(), "1".into(), "176".into()],
                vec!["y".into(), "1".into(), "177".into()],
            ],
        );
        assert_eq!(t.labels("a:b").unwrap(), ["x:1", "y:1"]);
        t.bin_length("len", "len_bin", LENGTH_BIN_LIMIT).unwrap();
        assert_eq!(t.labels("len_bin").unwrap(), ["short", "long"]);
    }

    #[test]
    fn no_grouping_is_ordinary_least_squares() {
        let rows = [("a", 1.0), ("a", 3.0), ("b", 4.0), ("b", 6.0), ("b", 8.0)]
            .iter()
            .map(|(f, y)| vec![f.to_string(), y.to_string()])
            .collect();
        let t = table(&["f", "y"], rows);
        let fit = fit_reml(&MixedModelSpec::parse("y ~ f").unwrap(), &t).unwrap();
        assert!((fit.fixed("(Intercept)").unwrap().estimate - 2.0).abs() < 1e-12);
        assert!((fit.fixed("f=b").unwrap().estimate - 4.0).abs() < 1e-12);
        // residual SS = 2 + 8 = 10 on 3 df
        assert!((fit.residual_variance - 10.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn singular_design_is_an_error() {
        let rows = (0..6)
            .map(|i| {
                vec![
                    ["a", "b"][i % 2].to_string(),
                    ["a", "b"][i % 2].to_string(),
                    i.to_string(),
                ]
            })
            .collect();
        let t = table(&["f", "g", "y"], rows);
        let r = fit_reml(&MixedModelSpec::parse("y ~ f + g").unwrap(), &t);
        assert!(matches!(r, Err(Error::Numerical(_))));
    }

    #[test]
    fn ranking_is_stable() {
        let mut fit = MixedFit {
            formula: MixedModelSpec::parse("y ~ f").unwrap(),
            n_obs: 0,
            fixed_effects: vec![],
            variance_components: vec![],
            residual_variance: 1.0,
            group_intercepts: BTreeMap::new(),
            reml_loglik: 0.0,
            df_method: DF_METHOD.into(),
            evaluations: 0,
            probes: vec![],
        };
        let lv = |l: &str, o: f64| GroupIntercept {
            level: l.into(),
            offset: o,
        };
        fit.group_intercepts
            .insert("g".into(), vec![lv("c", 0.0), lv("a", 0.0), lv("b", 0.0)]);
        fit.group_intercepts
            .insert("one".into(), vec![lv("z", 1.5)]);
        let r = rank_group_intercepts(&fit, "g").unwrap();
        assert_eq!(
            r.iter().map(|g| g.level.as_str()).collect::<Vec<_>>(),
            ["c", "a", "b"]
        );
        assert_eq!(rank_group_intercepts(&fit, "one").unwrap().len(), 1);
        assert!(rank_group_intercepts(&fit, "nope").is_err());
    }
}
