//! Finite-difference solution of the admissible two-dimensional reduced
//! equation, the log-heat solver for the linear part, and reconstruction of
//! `V`, `π`, `c` on the original variables.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check, Error, Result};
use crate::hjb::{heat, PsiJet};
use crate::model::{MarketParams, SurvivalModel};
use crate::reduction::{invariant_strategy_h4, reduced_residual_h4, z_h4, ReducedJet};
use crate::symmetry::Ctx;

/// Uniform tensor grid on `[z_min, z_max] × [h_min, h_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid2D {
    pub z_min: f64,
    pub z_max: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub n_z: usize,
    pub n_h: usize,
}

impl Grid2D {
    pub fn new(z: (f64, f64), h: (f64, f64), n_z: usize, n_h: usize) -> Result<Self> {
        let g = Grid2D { z_min: z.0, z_max: z.1, h_min: h.0, h_max: h.1, n_z, n_h };
        g.validate()?;
        Ok(g)
    }

    /// A grid of half-width `half_width` in `z` around the image of `l = 0`
    /// at `t = 0`.
    pub fn centered(ctx: &Ctx, omega: f64, half_width: f64, h: (f64, f64), n: usize) -> Result<Self> {
        let zc = z_h4(ctx, omega, 0.0, 0.0);
        Self::new((zc - half_width, zc + half_width), h, n, n)
    }

    pub fn validate(&self) -> Result<()> {
        check(self.n_z >= 16 && self.n_h >= 16, "grid", "needs at least 16 nodes per direction")?;
        check(self.z_max > self.z_min, "grid.z", "range must be non-empty")?;
        check(self.h_max > self.h_min, "grid.h", "range must be non-empty")?;
        check(self.h_min > 0.0, "grid.h_min", "must be positive; the equation degenerates at h = 0")?;
        check(
            [self.z_min, self.z_max, self.h_min, self.h_max].iter().all(|x| x.is_finite()),
            "grid",
            "ranges must be finite",
        )
    }

    pub fn dz(&self) -> f64 {
        (self.z_max - self.z_min) / (self.n_z - 1) as f64
    }

    pub fn dh(&self) -> f64 {
        (self.h_max - self.h_min) / (self.n_h - 1) as f64
    }

    pub fn z(&self, i: usize) -> f64 {
        self.z_min + i as f64 * self.dz()
    }

    pub fn h(&self, j: usize) -> f64 {
        self.h_min + j as f64 * self.dh()
    }

    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.n_z + i
    }

    pub fn len(&self) -> usize {
        self.n_z * self.n_h
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Same ranges with `n` nodes per direction.
    pub fn with_nodes(&self, n: usize) -> Result<Self> {
        Self::new((self.z_min, self.z_max), (self.h_min, self.h_max), n, n)
    }

    fn contains(&self, z: f64, h: f64) -> bool {
        let ez = 1e-12 * (self.z_max - self.z_min);
        let eh = 1e-12 * (self.h_max - self.h_min);
        z >= self.z_min - ez && z <= self.z_max + ez && h >= self.h_min - eh && h <= self.h_max + eh
    }
}

/// Newton iteration controls.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Stop once the update max-norm is below this times `max(1, |W|∞)`.
    pub update_tol: f64,
    /// Required residual max-norm relative to the problem scale.
    pub residual_tol: f64,
    /// Smallest damping factor tried by the line search.
    pub min_step: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { max_iter: 40, update_tol: 1e-10, residual_tol: 1e-6, min_step: 1.0 / 1024.0 }
    }
}

/// Convergence record of a solve.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub step_history: Vec<f64>,
    /// Largest interior sum of absolute residual terms at the initial guess.
    pub problem_scale: f64,
    /// `residual_tol × problem_scale`.
    pub tolerance: f64,
    pub final_residual: f64,
    /// Interior max-norm of the reduced residual under fourth-order differences.
    pub certificate: f64,
    /// Whether `W_z > 0` and `W_zz < 0` at every interior node.
    pub admissible: bool,
    pub closure: String,
}

/// Solution of the separable profile equation: `W = −(1/(ar))·e^{−arz}·e^{φ(h)}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub h: Vec<f64>,
    pub phi: Vec<f64>,
}

impl Profile {
    /// `φ(h)` by cubic interpolation, clamped to the node range.
    pub fn phi_at(&self, h: f64) -> f64 {
        let d = self.h[1] - self.h[0];
        let n = self.h.len();
        let s = ((h - self.h[0]) / d).clamp(0.0, (n - 1) as f64);
        lagrange4(&self.phi, n, s)
    }

    /// `φ'(h)` by cubic interpolation, clamped to the node range.
    pub fn dphi_at(&self, h: f64) -> f64 {
        let d = self.h[1] - self.h[0];
        let n = self.h.len();
        let s = ((h - self.h[0]) / d).clamp(0.0, (n - 1) as f64);
        lagrange4_d(&self.phi, n, s) / d
    }

    /// Separable value `W(z, h)`.
    pub fn value(&self, p: &MarketParams, z: f64, h: f64) -> f64 {
        -(self.phi_at(h) - p.ar() * z).exp() / p.ar()
    }
}

/// Linear seed `φ ≈ A + Bh` of the profile equation.
pub fn profile_seed(p: &MarketParams) -> Result<(f64, f64)> {
    let x = p.excess();
    let a = 1.0 + p.a.ln() - x * x / (2.0 * p.sigma * p.sigma * p.r);
    let den = p.r - (p.mu - p.delta) + x * p.eta * p.rho / p.sigma;
    if den.abs() < 1e-12 {
        return Err(Error::Singular("r − (μ−δ) + (α−r)ηρ/σ vanishes".into()));
    }
    Ok((a, -p.ar() * p.delta / den))
}

/// Solves the profile equation for `φ = ln(−ar·v)` on `n` uniform nodes in
/// `[h_min, h_max]` with `g'' = 0` (`g = e^φ`) at both ends.
pub fn solve_profile(p: &MarketParams, h_min: f64, h_max: f64, n: usize) -> Result<Profile> {
    p.validate()?;
    check(n >= 5, "grid.n_h", "needs at least 5 nodes")?;
    let d = (h_max - h_min) / (n - 1) as f64;
    let hs: Vec<f64> = (0..n).map(|j| h_min + j as f64 * d).collect();
    let (a0, b0) = profile_seed(p)?;
    let mut phi: Vec<f64> = hs.iter().map(|h| a0 + b0 * h).collect();
    let e2 = p.eta * p.eta;
    let c1 = p.excess() * p.eta * p.rho / p.sigma - (p.mu - p.delta);
    let k0 = p.excess().powi(2) / (2.0 * p.sigma * p.sigma) - p.r * (1.0 + p.a.ln());
    let eval = |phi: &[f64]| -> (Vec<f64>, Vec<Triplet<usize, usize, f64>>) {
        let mut f = vec![0.0; n];
        let mut jac = Vec::with_capacity(3 * n);
        for (row, far) in [(0usize, [0usize, 1, 2]), (n - 1, [n - 1, n - 2, n - 3])] {
            let g = far.map(|k| phi[k].exp());
            f[row] = g[0] - 2.0 * g[1] + g[2];
            for (k, c) in far.iter().zip([1.0, -2.0, 1.0]) {
                jac.push(Triplet::new(row, *k, c * phi[*k].exp()));
            }
        }
        for j in 1..n - 1 {
            let h = hs[j];
            let dp = (phi[j + 1] - phi[j - 1]) / (2.0 * d);
            let dpp = (phi[j + 1] - 2.0 * phi[j] + phi[j - 1]) / (d * d);
            let q = 0.5 * e2 * (1.0 - p.rho * p.rho) * h * h;
            f[j] = -0.5 * e2 * h * h * dpp - q * dp * dp + c1 * h * dp + p.ar() * p.delta * h + p.r * phi[j] + k0;
            let f_dp = -2.0 * q * dp + c1 * h;
            let f_dpp = -0.5 * e2 * h * h;
            jac.push(Triplet::new(j, j - 1, -f_dp / (2.0 * d) + f_dpp / (d * d)));
            jac.push(Triplet::new(j, j, -2.0 * f_dpp / (d * d) + p.r));
            jac.push(Triplet::new(j, j + 1, f_dp / (2.0 * d) + f_dpp / (d * d)));
        }
        (f, jac)
    };
    let mut history = Vec::new();
    for _ in 0..50 {
        let (f, jac) = eval(&phi);
        let norm = max_abs(&f);
        history.push(norm);
        if norm < 1e-13 {
            return Ok(Profile { h: hs, phi });
        }
        let step = sparse_solve(n, &jac, &f)?;
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = phi.iter().zip(&step).map(|(x, s)| x - lambda * s).collect();
            let (ft, _) = eval(&trial);
            if max_abs(&ft) < norm || lambda < 1e-3 {
                phi = trial;
                break;
            }
            lambda *= 0.5;
        }
        if max_abs(&step) * lambda < 1e-14 {
            return Ok(Profile { h: hs, phi });
        }
    }
    Err(Error::NoConvergence { iterations: 50, history })
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn sparse_solve(n: usize, trips: &[Triplet<usize, usize, f64>], rhs: &[f64]) -> Result<Vec<f64>> {
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, trips)
        .map_err(|e| Error::Singular(format!("sparse assembly failed: {e:?}")))?;
    let lu = a.sp_lu().map_err(|e| Error::Singular(format!("sparse LU failed: {e:?}")))?;
    let x = lu.solve(&Col::from_fn(n, |i| rhs[i]));
    let out: Vec<f64> = (0..n).map(|i| x[i]).collect();
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(Error::Singular("Newton system is singular".into()))
    }
}

/// Discrete jet at an interior node by second-order central differences.
#[derive(Clone, Copy, Debug)]
struct Stencil {
    w: f64,
    w_z: f64,
    w_h: f64,
    w_zz: f64,
    w_zh: f64,
    w_hh: f64,
}

fn central(g: &Grid2D, w: &[f64], i: usize, j: usize) -> Stencil {
    let (dz, dh) = (g.dz(), g.dh());
    let at = |a: usize, b: usize| w[g.idx(a, b)];
    Stencil {
        w: at(i, j),
        w_z: (at(i + 1, j) - at(i - 1, j)) / (2.0 * dz),
        w_h: (at(i, j + 1) - at(i, j - 1)) / (2.0 * dh),
        w_zz: (at(i + 1, j) - 2.0 * at(i, j) + at(i - 1, j)) / (dz * dz),
        w_hh: (at(i, j + 1) - 2.0 * at(i, j) + at(i, j - 1)) / (dh * dh),
        w_zh: (at(i + 1, j + 1) - at(i + 1, j - 1) - at(i - 1, j + 1) + at(i - 1, j - 1)) / (4.0 * dz * dh),
    }
}

/// Residual of the reduced equation and its partials with respect to
/// `(W, W_z, W_h, W_zz, W_zh, W_hh)`, plus the sum of absolute terms.
fn pde_point(p: &MarketParams, omega: f64, z: f64, h: f64, s: &Stencil) -> (f64, [f64; 6], f64) {
    let x = p.excess();
    let (s2, e2) = (p.sigma * p.sigma, p.eta * p.eta);
    let c = 1.0 / omega + 1.0 + p.a.ln();
    let n = x * s.w_z + p.eta * p.rho * p.sigma * h * s.w_zh;
    let lw = s.w_z.ln();
    let terms = [
        0.5 * e2 * h * h * s.w_hh,
        (p.mu - p.delta) * h * s.w_h,
        (p.r * z + p.delta * h) * s.w_z,
        s.w_z * lw / p.a,
        -n * n / (2.0 * s2 * s.w_zz),
        -c / p.a * s.w_z,
        -p.r / omega * s.w,
    ];
    let d = [
        -p.r / omega,
        p.r * z + p.delta * h + (lw + 1.0) / p.a - n * x / (s2 * s.w_zz) - c / p.a,
        (p.mu - p.delta) * h,
        n * n / (2.0 * s2 * s.w_zz * s.w_zz),
        -n * p.eta * p.rho * p.sigma * h / (s2 * s.w_zz),
        0.5 * e2 * h * h,
    ];
    (terms.iter().sum(), d, terms.iter().map(|t| t.abs()).sum())
}

/// Discretized boundary-value problem for the reduced equation.
struct Problem<'a> {
    p: MarketParams,
    omega: f64,
    grid: Grid2D,
    /// Dirichlet values on the `z` edges, indexed by `j`.
    lo: Vec<f64>,
    hi: Vec<f64>,
    source: Option<&'a [f64]>,
}

enum Row {
    Dirichlet(f64),
    Linear(usize),
    Interior,
}

impl Problem<'_> {
    fn row(&self, i: usize, j: usize) -> Row {
        let g = &self.grid;
        if i == 0 {
            Row::Dirichlet(self.lo[j])
        } else if i == g.n_z - 1 {
            Row::Dirichlet(self.hi[j])
        } else if j == 0 || j == g.n_h - 1 {
            Row::Linear(j)
        } else {
            Row::Interior
        }
    }

    fn linear_nodes(&self, j: usize) -> [usize; 3] {
        if j == 0 {
            [0, 1, 2]
        } else {
            [j, j - 1, j - 2]
        }
    }

    /// Residual vector and the interior scale `max Σ|terms|`.
    fn residual(&self, w: &[f64]) -> (Vec<f64>, f64) {
        let g = self.grid;
        let rows: Vec<(Vec<f64>, f64)> = (0..g.n_h)
            .into_par_iter()
            .map(|j| {
                let mut out = vec![0.0; g.n_z];
                let mut scale: f64 = 0.0;
                for (i, o) in out.iter_mut().enumerate() {
                    *o = match self.row(i, j) {
                        Row::Dirichlet(d) => w[g.idx(i, j)] - d,
                        Row::Linear(j) => {
                            let [a, b, c] = self.linear_nodes(j);
                            w[g.idx(i, a)] - 2.0 * w[g.idx(i, b)] + w[g.idx(i, c)]
                        }
                        Row::Interior => {
                            let s = central(&g, w, i, j);
                            let (f, _, sc) = pde_point(&self.p, self.omega, g.z(i), g.h(j), &s);
                            scale = scale.max(sc);
                            f - self.source.map_or(0.0, |src| src[g.idx(i, j)])
                        }
                    };
                }
                (out, scale)
            })
            .collect();
        let scale = rows.iter().fold(0.0f64, |m, r| m.max(r.1));
        (rows.into_iter().flat_map(|r| r.0).collect(), scale)
    }

    fn jacobian(&self, w: &[f64]) -> Vec<Triplet<usize, usize, f64>> {
        let g = self.grid;
        let (dz, dh) = (g.dz(), g.dh());
        let rows: Vec<Vec<Triplet<usize, usize, f64>>> = (0..g.n_h)
            .into_par_iter()
            .map(|j| {
                let mut t = Vec::with_capacity(9 * g.n_z);
                for i in 0..g.n_z {
                    let r = g.idx(i, j);
                    match self.row(i, j) {
                        Row::Dirichlet(_) => t.push(Triplet::new(r, r, 1.0)),
                        Row::Linear(j) => {
                            let nodes = self.linear_nodes(j);
                            for (b, c) in nodes.iter().zip([1.0, -2.0, 1.0]) {
                                t.push(Triplet::new(r, g.idx(i, *b), c));
                            }
                        }
                        Row::Interior => {
                            let s = central(&g, w, i, j);
                            let (_, d, _) = pde_point(&self.p, self.omega, g.z(i), g.h(j), &s);
                            let [f_w, f_z, f_h, f_zz, f_zh, f_hh] = d;
                            let mut add = |a: usize, b: usize, v: f64| t.push(Triplet::new(r, g.idx(a, b), v));
                            add(i, j, f_w - 2.0 * f_zz / (dz * dz) - 2.0 * f_hh / (dh * dh));
                            add(i + 1, j, f_z / (2.0 * dz) + f_zz / (dz * dz));
                            add(i - 1, j, -f_z / (2.0 * dz) + f_zz / (dz * dz));
                            add(i, j + 1, f_h / (2.0 * dh) + f_hh / (dh * dh));
                            add(i, j - 1, -f_h / (2.0 * dh) + f_hh / (dh * dh));
                            let x = f_zh / (4.0 * dz * dh);
                            add(i + 1, j + 1, x);
                            add(i - 1, j - 1, x);
                            add(i + 1, j - 1, -x);
                            add(i - 1, j + 1, -x);
                        }
                    }
                }
                t
            })
            .collect();
        rows.into_iter().flatten().collect()
    }

    fn admissible(&self, w: &[f64]) -> bool {
        let g = self.grid;
        (1..g.n_h - 1).all(|j| {
            (1..g.n_z - 1).all(|i| {
                let s = central(&g, w, i, j);
                s.w_z > 0.0 && s.w_zz < 0.0
            })
        })
    }

    fn newton(&self, mut w: Vec<f64>, opts: &SolverOptions) -> Result<(Vec<f64>, SolveReport)> {
        let n = self.grid.len();
        if !self.admissible(&w) {
            return Err(Error::DegenerateHessian("initial guess violates W_z > 0, W_zz < 0".into()));
        }
        let (mut f, scale) = self.residual(&w);
        let tol = opts.residual_tol * scale;
        let mut norm = max_abs(&f);
        let mut report = SolveReport { problem_scale: scale, tolerance: tol, ..Default::default() };
        report.residual_history.push(norm);
        for it in 1..=opts.max_iter {
            let step = sparse_solve(n, &self.jacobian(&w), &f)?;
            let mut lambda = 1.0;
            let accepted = loop {
                let trial: Vec<f64> = w.iter().zip(&step).map(|(a, s)| a - lambda * s).collect();
                if self.admissible(&trial) {
                    let (ft, _) = self.residual(&trial);
                    let nt = max_abs(&ft);
                    if nt < norm || nt <= 1e-13 * scale {
                        break Some((trial, ft, nt));
                    }
                }
                lambda *= 0.5;
                if lambda < opts.min_step {
                    break None;
                }
            };
            let Some((trial, ft, nt)) = accepted else {
                report.iterations = it;
                if norm <= tol {
                    break;
                }
                return Err(Error::NoConvergence { iterations: it, history: report.residual_history });
            };
            w = trial;
            f = ft;
            norm = nt;
            report.iterations = it;
            report.residual_history.push(norm);
            report.step_history.push(lambda);
            let update = lambda * max_abs(&step);
            if norm <= tol && update <= opts.update_tol * max_abs(&w).max(1.0) || norm <= 1e-13 * scale {
                break;
            }
        }
        report.final_residual = norm;
        if norm > tol {
            return Err(Error::NoConvergence { iterations: report.iterations, history: report.residual_history });
        }
        report.admissible = self.admissible(&w);
        Ok((w, report))
    }
}

/// A solved `W` on a grid with nodal jets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueSurface {
    pub params: MarketParams,
    pub survival: SurvivalModel,
    pub omega: f64,
    pub grid: Grid2D,
    pub w: Vec<f64>,
    pub w_z: Vec<f64>,
    pub w_h: Vec<f64>,
    pub w_zz: Vec<f64>,
    pub w_zh: Vec<f64>,
    pub w_hh: Vec<f64>,
    pub profile: Profile,
    pub report: SolveReport,
}

/// First derivative along a line, second order, one-sided at the ends.
fn diff1(f: &[f64], d: f64) -> Vec<f64> {
    let n = f.len();
    (0..n)
        .map(|k| match k {
            0 => (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * d),
            k if k == n - 1 => (3.0 * f[k] - 4.0 * f[k - 1] + f[k - 2]) / (2.0 * d),
            k => (f[k + 1] - f[k - 1]) / (2.0 * d),
        })
        .collect()
}

/// Second derivative along a line, second order, one-sided at the ends.
fn diff2(f: &[f64], d: f64) -> Vec<f64> {
    let n = f.len();
    (0..n)
        .map(|k| match k {
            0 => (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / (d * d),
            k if k == n - 1 => (2.0 * f[k] - 5.0 * f[k - 1] + 4.0 * f[k - 2] - f[k - 3]) / (d * d),
            k => (f[k + 1] - 2.0 * f[k] + f[k - 1]) / (d * d),
        })
        .collect()
}

fn along_z(g: &Grid2D, w: &[f64], op: impl Fn(&[f64], f64) -> Vec<f64>) -> Vec<f64> {
    let mut out = vec![0.0; g.len()];
    for j in 0..g.n_h {
        let line: Vec<f64> = (0..g.n_z).map(|i| w[g.idx(i, j)]).collect();
        for (i, v) in op(&line, g.dz()).into_iter().enumerate() {
            out[g.idx(i, j)] = v;
        }
    }
    out
}

fn along_h(g: &Grid2D, w: &[f64], op: impl Fn(&[f64], f64) -> Vec<f64>) -> Vec<f64> {
    let mut out = vec![0.0; g.len()];
    for i in 0..g.n_z {
        let line: Vec<f64> = (0..g.n_h).map(|j| w[g.idx(i, j)]).collect();
        for (j, v) in op(&line, g.dh()).into_iter().enumerate() {
            out[g.idx(i, j)] = v;
        }
    }
    out
}

/// Cubic Lagrange interpolation of nodal data at fractional index `s`.
fn lagrange4(f: &[f64], n: usize, s: f64) -> f64 {
    let (k0, u) = cubic_window(n, s);
    let w = lagrange_weights(u);
    (0..4).map(|m| w[m] * f[k0 + m]).sum()
}

fn lagrange4_d(f: &[f64], n: usize, s: f64) -> f64 {
    let (k0, u) = cubic_window(n, s);
    let w = lagrange_dweights(u);
    (0..4).map(|m| w[m] * f[k0 + m]).sum()
}

/// First node of the 4-point window and the offset of `s` from it.
fn cubic_window(n: usize, s: f64) -> (usize, f64) {
    let k = (s.floor() as isize).clamp(1, n as isize - 3) - 1;
    (k as usize, s - k as f64)
}

/// Weights at offset `u ∈ [0, 3]` for nodes 0..3.
fn lagrange_weights(u: f64) -> [f64; 4] {
    [
        -(u - 1.0) * (u - 2.0) * (u - 3.0) / 6.0,
        u * (u - 2.0) * (u - 3.0) / 2.0,
        -u * (u - 1.0) * (u - 3.0) / 2.0,
        u * (u - 1.0) * (u - 2.0) / 6.0,
    ]
}

fn lagrange_dweights(u: f64) -> [f64; 4] {
    [
        -(3.0 * u * u - 12.0 * u + 11.0) / 6.0,
        (3.0 * u * u - 10.0 * u + 6.0) / 2.0,
        -(3.0 * u * u - 8.0 * u + 3.0) / 2.0,
        (3.0 * u * u - 6.0 * u + 2.0) / 6.0,
    ]
}

impl ValueSurface {
    fn from_nodes(
        params: MarketParams,
        survival: SurvivalModel,
        omega: f64,
        grid: Grid2D,
        w: Vec<f64>,
        profile: Profile,
        report: SolveReport,
    ) -> Self {
        let w_z = along_z(&grid, &w, diff1);
        let w_zz = along_z(&grid, &w, diff2);
        let w_h = along_h(&grid, &w, diff1);
        let w_hh = along_h(&grid, &w, diff2);
        let w_zh = along_h(&grid, &w_z, diff1);
        ValueSurface { params, survival, omega, grid, w, w_z, w_h, w_zz, w_zh, w_hh, profile, report }
    }

    /// Nodal jet.
    pub fn node(&self, i: usize, j: usize) -> ReducedJet {
        let k = self.grid.idx(i, j);
        ReducedJet {
            z: self.grid.z(i),
            h: self.grid.h(j),
            w: self.w[k],
            w_z: self.w_z[k],
            w_h: self.w_h[k],
            w_zz: self.w_zz[k],
            w_zh: self.w_zh[k],
            w_hh: self.w_hh[k],
        }
    }

    /// Jet at `(z, h)` by bicubic interpolation of the nodal jets.
    pub fn jet(&self, z: f64, h: f64) -> Result<ReducedJet> {
        let g = &self.grid;
        if !g.contains(z, h) {
            return Err(Error::Extrapolation(format!(
                "(z, h) = ({z}, {h}) outside [{}, {}] x [{}, {}]",
                g.z_min, g.z_max, g.h_min, g.h_max
            )));
        }
        let sz = ((z - g.z_min) / g.dz()).clamp(0.0, (g.n_z - 1) as f64);
        let sh = ((h - g.h_min) / g.dh()).clamp(0.0, (g.n_h - 1) as f64);
        let (iz, uz) = cubic_window(g.n_z, sz);
        let (ih, uh) = cubic_window(g.n_h, sh);
        let (wz, wh) = (lagrange_weights(uz), lagrange_weights(uh));
        let interp = |f: &[f64]| -> f64 {
            let mut acc = 0.0;
            for b in 0..4 {
                for a in 0..4 {
                    acc += wz[a] * wh[b] * f[g.idx(iz + a, ih + b)];
                }
            }
            acc
        };
        Ok(ReducedJet {
            z,
            h,
            w: interp(&self.w),
            w_z: interp(&self.w_z),
            w_h: interp(&self.w_h),
            w_zz: interp(&self.w_zz),
            w_zh: interp(&self.w_zh),
            w_hh: interp(&self.w_hh),
        })
    }

    /// Largest interior residual under fourth-order differences.
    pub fn certificate(&self) -> Result<f64> {
        certificate(&self.params, self.omega, &self.grid, &self.w, None)
    }

    /// Whether the nodal jets satisfy `W_z > 0`, `W_zz < 0` on the interior.
    pub fn interior_admissible(&self) -> bool {
        let g = &self.grid;
        (1..g.n_h - 1).all(|j| {
            (1..g.n_z - 1).all(|i| {
                let k = g.idx(i, j);
                self.w_z[k] > 0.0 && self.w_zz[k] < 0.0
            })
        })
    }

    /// Nodal policy surface.
    pub fn policy(&self) -> Result<PolicySurface> {
        let g = self.grid;
        let mut pi = vec![0.0; g.len()];
        let mut c0 = vec![0.0; g.len()];
        for j in 0..g.n_h {
            for i in 0..g.n_z {
                let k = g.idx(i, j);
                let s = invariant_strategy_h4(&self.params, &self.survival, self.omega, &self.node(i, j), 0.0)?;
                pi[k] = s.pi;
                c0[k] = s.c;
            }
        }
        Ok(PolicySurface { params: self.params, survival: self.survival, omega: self.omega, grid: g, pi, c0 })
    }
}

/// Nodal `π` and `c₀ = (1/a)·ln(a/W_z)`, with the time rule
/// `c(z,h,t) = c₀ + (1/a)·ln Φ̄(t) + rt/(aω)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySurface {
    pub params: MarketParams,
    pub survival: SurvivalModel,
    pub omega: f64,
    pub grid: Grid2D,
    pub pi: Vec<f64>,
    pub c0: Vec<f64>,
}

impl PolicySurface {
    /// Time-dependent part of consumption.
    pub fn c_shift(&self, t: f64) -> f64 {
        let p = &self.params;
        (self.survival.ln_survival(t) + p.r * t / self.omega) / p.a
    }
}

/// Residual of the reduced equation from fourth-order central differences
/// at nodes at least two away from the edges, relative to nothing; an
/// optional source is subtracted.
fn certificate(p: &MarketParams, omega: f64, g: &Grid2D, w: &[f64], source: Option<&[f64]>) -> Result<f64> {
    let (dz, dh) = (g.dz(), g.dh());
    let d1 = |f: &dyn Fn(isize) -> f64, d: f64| (-f(2) + 8.0 * f(1) - 8.0 * f(-1) + f(-2)) / (12.0 * d);
    let d2 = |f: &dyn Fn(isize) -> f64, d: f64| (-f(2) + 16.0 * f(1) - 30.0 * f(0) + 16.0 * f(-1) - f(-2)) / (12.0 * d * d);
    let mut worst: f64 = 0.0;
    for j in 2..g.n_h - 2 {
        for i in 2..g.n_z - 2 {
            let at = |a: isize, b: isize| w[g.idx((i as isize + a) as usize, (j as isize + b) as usize)];
            let jet = ReducedJet {
                z: g.z(i),
                h: g.h(j),
                w: at(0, 0),
                w_z: d1(&|k| at(k, 0), dz),
                w_h: d1(&|k| at(0, k), dh),
                w_zz: d2(&|k| at(k, 0), dz),
                w_hh: d2(&|k| at(0, k), dh),
                w_zh: d1(&|b| d1(&|a| at(a, b), dz), dh),
            };
            let r = reduced_residual_h4(p, omega, &jet)?.value - source.map_or(0.0, |s| s[g.idx(i, j)]);
            worst = worst.max(r.abs());
        }
    }
    Ok(worst)
}

/// Solves the reduced equation of the `e₁ + ωe₃` case on `grid`.
///
/// Dirichlet data on the `z` edges come from the separable solution,
/// `W_hh = 0` closes the `h` edges, and Newton starts from the separable
/// solution itself.
pub fn solve_reduced_h4(
    p: &MarketParams,
    m: &SurvivalModel,
    omega: f64,
    grid: &Grid2D,
    opts: &SolverOptions,
) -> Result<ValueSurface> {
    p.validate()?;
    m.validate()?;
    grid.validate()?;
    check(omega > 0.0 && omega.is_finite(), "omega", "must be positive")?;
    let g = *grid;
    let profile = solve_profile(p, g.h_min, g.h_max, g.n_h)?;
    let sep = |z: f64, j: usize| -(profile.phi[j] - p.ar() * z).exp() / p.ar();
    let lo: Vec<f64> = (0..g.n_h).map(|j| sep(g.z_min, j)).collect();
    let hi: Vec<f64> = (0..g.n_h).map(|j| sep(g.z_max, j)).collect();
    let mut w0 = vec![0.0; g.len()];
    for j in 0..g.n_h {
        for i in 0..g.n_z {
            w0[g.idx(i, j)] = sep(g.z(i), j);
        }
    }
    let problem = Problem { p: *p, omega, grid: g, lo, hi, source: None };
    let (w, mut report) = problem.newton(w0, opts)?;
    report.certificate = certificate(p, omega, &g, &w, None)?;
    report.closure = "Dirichlet in z from the separable solution; W_hh = 0 on the h edges".into();
    Ok(ValueSurface::from_nodes(*p, *m, omega, g, w, profile, report))
}

/// Result of a manufactured-solution solve.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MmsResult {
    pub n: usize,
    pub spacing: f64,
    pub max_error: f64,
    pub report: SolveReport,
}

/// Manufactured solution `W = −e^{−arz}(1 + h)`.
pub fn mms_exact(p: &MarketParams, z: f64, h: f64) -> f64 {
    -(-p.ar() * z).exp() * (1.0 + h)
}

/// Solves the reduced equation with the source that makes [`mms_exact`]
/// exact and reports the nodal max-norm error.
pub fn solve_mms(p: &MarketParams, omega: f64, grid: &Grid2D, opts: &SolverOptions) -> Result<MmsResult> {
    grid.validate()?;
    let g = *grid;
    let ar = p.ar();
    let exact_jet = |z: f64, h: f64| {
        let e = (-ar * z).exp();
        ReducedJet {
            z,
            h,
            w: -e * (1.0 + h),
            w_z: ar * e * (1.0 + h),
            w_h: -e,
            w_zz: -ar * ar * e * (1.0 + h),
            w_zh: ar * e,
            w_hh: 0.0,
        }
    };
    let mut source = vec![0.0; g.len()];
    let mut exact = vec![0.0; g.len()];
    let mut w0 = vec![0.0; g.len()];
    for j in 0..g.n_h {
        for i in 0..g.n_z {
            let k = g.idx(i, j);
            let (z, h) = (g.z(i), g.h(j));
            source[k] = reduced_residual_h4(p, omega, &exact_jet(z, h))?.value;
            exact[k] = mms_exact(p, z, h);
            w0[k] = 1.05 * exact[k];
        }
    }
    let lo: Vec<f64> = (0..g.n_h).map(|j| mms_exact(p, g.z_min, g.h(j))).collect();
    let hi: Vec<f64> = (0..g.n_h).map(|j| mms_exact(p, g.z_max, g.h(j))).collect();
    let problem = Problem { p: *p, omega, grid: g, lo, hi, source: Some(&source) };
    let (w, report) = problem.newton(w0, opts)?;
    let max_error = w.iter().zip(&exact).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(MmsResult { n: g.n_z, spacing: g.dz().max(g.dh()), max_error, report })
}

/// Observed orders `log2(e_k / e_{k+1})` between successive halvings.
pub fn observed_orders(results: &[MmsResult]) -> Vec<f64> {
    results
        .windows(2)
        .map(|w| (w[0].max_error / w[1].max_error).ln() / (w[0].spacing / w[1].spacing).ln())
        .collect()
}

/// A reconstructed sample on the original variables.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub l: f64,
    pub h: f64,
    pub t: f64,
    pub v: f64,
    pub pi: f64,
    pub c: f64,
}

/// `V = W(z(l,t), h)·e^{−(r/ω)t}` and the strategy at each query point.
pub fn reconstruct(surface: &ValueSurface, points: &[[f64; 3]]) -> Result<Vec<Sample>> {
    let ctx = Ctx::new(surface.params, surface.survival);
    let p = &surface.params;
    points
        .iter()
        .map(|&[l, h, t]| {
            if !(t >= 0.0) {
                return Err(Error::Domain(format!("time must be non-negative, got {t}")));
            }
            let z = z_h4(&ctx, surface.omega, l, t);
            let jet = surface.jet(z, h)?;
            let s = invariant_strategy_h4(p, &surface.survival, surface.omega, &jet, t)?;
            Ok(Sample { l, h, t, v: jet.w * (-p.r / surface.omega * t).exp(), pi: s.pi, c: s.c })
        })
        .collect()
}

/// Grid for the linear equation: uniform in `x = ln h`, uniform in `t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsiGrid {
    pub h_min: f64,
    pub h_max: f64,
    pub n_h: usize,
    pub t_max: f64,
    pub n_t: usize,
}

impl PsiGrid {
    pub fn validate(&self) -> Result<()> {
        check(self.h_min > 0.0 && self.h_max > self.h_min, "psi.h", "needs 0 < h_min < h_max")?;
        check(self.n_h >= 5 && self.n_t >= 1, "psi.n", "needs n_h >= 5 and n_t >= 1")?;
        check(self.t_max > 0.0 && self.t_max.is_finite(), "psi.t_max", "must be positive")
    }

    pub fn dx(&self) -> f64 {
        (self.h_max / self.h_min).ln() / (self.n_h - 1) as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        self.h_min.ln() + j as f64 * self.dx()
    }

    pub fn h(&self, j: usize) -> f64 {
        self.x(j).exp()
    }

    /// Time of level `n`; level 0 is `t_max`, level `n_t` is `t = 0`.
    pub fn t(&self, n: usize) -> f64 {
        self.t_max * (1.0 - n as f64 / self.n_t as f64)
    }
}

/// Solution of `ψ_t + ½η²h²ψ_hh + (μ−δ)hψ_h = 0` and its heat variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsiSurface {
    pub params: MarketParams,
    pub grid: PsiGrid,
    /// `v[n][j]` in the heat variables, level `n` at [`PsiGrid::t`].
    pub heat: Vec<Vec<f64>>,
}

impl PsiSurface {
    /// `ψ` at node `(n, j)`.
    pub fn psi(&self, n: usize, j: usize) -> f64 {
        let g = &self.grid;
        self.heat[n][j] * heat::prefactor(&self.params, g.x(j), heat::tau(&self.params, g.t(n)))
    }

    /// Jet of `ψ` at the midpoint between levels `n` and `n + 1` and interior
    /// node `j`, assembled from the same differences the implicit step uses.
    pub fn midpoint_jet(&self, n: usize, j: usize) -> PsiJet {
        let (g, p) = (&self.grid, &self.params);
        let dx = g.dx();
        let dtau = heat::tau(p, g.t(n + 1)) - heat::tau(p, g.t(n));
        let (a, b) = (&self.heat[n], &self.heat[n + 1]);
        let avg = |f: &dyn Fn(&[f64]) -> f64| 0.5 * (f(a) + f(b));
        let v = avg(&|u| u[j]);
        let v_x = avg(&|u| (u[j + 1] - u[j - 1]) / (2.0 * dx));
        let v_xx = avg(&|u| (u[j + 1] - 2.0 * u[j] + u[j - 1]) / (dx * dx));
        let v_tau = (b[j] - a[j]) / dtau;
        let tau = heat::tau(p, g.t(n)) + 0.5 * dtau;
        let x = g.x(j);
        let pf = heat::prefactor(p, x, tau);
        let (px, pt) = heat::log_derivatives(p);
        let psi = pf * v;
        let psi_x = pf * (v_x + px * v);
        let psi_xx = pf * (v_xx + 2.0 * px * v_x + px * px * v);
        let psi_tau = pf * (v_tau + pt * v);
        let h = x.exp();
        PsiJet {
            h,
            t: heat::time(p, tau),
            psi,
            psi_h: psi_x / h,
            psi_hh: (psi_xx - psi_x) / (h * h),
            psi_t: -0.5 * p.eta * p.eta * psi_tau,
        }
    }
}

/// Solves the linear equation backward from `terminal(h) = ψ(h, t_max)`
/// with `boundary(h, t)` on the `h` edges, via `h = e^x`, `t = −2τ/η²`,
/// `ψ = P·v`, and Crank–Nicolson steps of `v_τ = v_xx`.
pub fn solve_psi(
    p: &MarketParams,
    grid: &PsiGrid,
    terminal: &dyn Fn(f64) -> f64,
    boundary: &dyn Fn(f64, f64) -> f64,
) -> Result<PsiSurface> {
    p.validate()?;
    grid.validate()?;
    let g = *grid;
    let n = g.n_h;
    let dx = g.dx();
    let to_heat = |psi: f64, j: usize, t: f64| psi / heat::prefactor(p, g.x(j), heat::tau(p, t));
    let mut levels = Vec::with_capacity(g.n_t + 1);
    levels.push((0..n).map(|j| to_heat(terminal(g.h(j)), j, g.t(0))).collect::<Vec<f64>>());
    for k in 0..g.n_t {
        let dtau = heat::tau(p, g.t(k + 1)) - heat::tau(p, g.t(k));
        let lam = dtau / (dx * dx);
        let prev = &levels[k];
        let t_next = g.t(k + 1);
        let left = to_heat(boundary(g.h(0), t_next), 0, t_next);
        let right = to_heat(boundary(g.h(n - 1), t_next), n - 1, t_next);
        // Interior unknowns j = 1..n-2.
        let m = n - 2;
        let mut rhs: Vec<f64> = (1..n - 1)
            .map(|j| prev[j] + 0.5 * lam * (prev[j + 1] - 2.0 * prev[j] + prev[j - 1]))
            .collect();
        rhs[0] += 0.5 * lam * left;
        rhs[m - 1] += 0.5 * lam * right;
        let sol = thomas(m, -0.5 * lam, 1.0 + lam, -0.5 * lam, &rhs);
        let mut next = Vec::with_capacity(n);
        next.push(left);
        next.extend(sol);
        next.push(right);
        levels.push(next);
    }
    Ok(PsiSurface { params: *p, grid: g, heat: levels })
}

/// Constant-coefficient tridiagonal solve.
fn thomas(m: usize, lower: f64, diag: f64, upper: f64, rhs: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    c[0] = upper / diag;
    d[0] = rhs[0] / diag;
    for i in 1..m {
        let den = diag - lower * c[i - 1];
        c[i] = upper / den;
        d[i] = (rhs[i] - lower * d[i - 1]) / den;
    }
    let mut x = vec![0.0; m];
    x[m - 1] = d[m - 1];
    for i in (0..m - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}
