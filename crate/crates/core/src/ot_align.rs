//! Entropic Gromov-Wasserstein alignment: an outer loop that linearises the
//! quadratic objective around the current coupling, and an inner Sinkhorn
//! projection onto the marginal constraints.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::trajectory::DistanceMatrix;

const MARGINAL_SUM_TOL: f64 = 1e-9;

/// A coupling between two discrete measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub values: Matrix,
    pub row_marginal: Vec<f64>,
    pub col_marginal: Vec<f64>,
}

impl TransportPlan {
    /// Wraps an arbitrary nonnegative matrix, taking its marginals as given.
    pub fn from_matrix(values: Matrix) -> Result<Self> {
        if values.as_slice().iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(Error::InvalidData("plan entries must be finite and nonnegative".into()));
        }
        Ok(TransportPlan {
            row_marginal: values.row_sums(),
            col_marginal: values.col_sums(),
            values,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.column(j)
    }

    pub fn total_mass(&self) -> f64 {
        self.values.sum()
    }

    /// `max_i |T 1 - p|_i`
    pub fn row_residual(&self) -> f64 {
        max_abs_residual(&self.values.row_sums(), &self.row_marginal)
    }

    /// `max_j |Tᵀ 1 - q|_j`
    pub fn col_residual(&self) -> f64 {
        max_abs_residual(&self.values.col_sums(), &self.col_marginal)
    }

    /// For each target column, the source row carrying the most mass.
    /// Ties go to the lowest row index.
    pub fn column_argmax(&self) -> Vec<usize> {
        let (m, n) = self.shape();
        (0..n)
            .map(|j| {
                let mut best = 0;
                for i in 1..m {
                    if self.values[(i, j)] > self.values[(best, j)] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }

    pub fn transpose(&self) -> TransportPlan {
        TransportPlan {
            values: self.values.transpose(),
            row_marginal: self.col_marginal.clone(),
            col_marginal: self.row_marginal.clone(),
        }
    }
}

fn max_abs_residual(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| f64::max(m, libm::fabs(x - y)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SinkhornMode {
    /// Scaling vectors on the kernel `exp(-C / ω)` directly.
    #[default]
    Plain,
    /// Dual potentials with log-sum-exp reductions.
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GwConfig {
    /// Entropic regularization strength. `None` picks
    /// `omega_scale * median(positive entries of the first cost matrix)`.
    pub omega: Option<f64>,
    pub omega_scale: f64,
    pub outer_iters: usize,
    pub sinkhorn_iters: usize,
    /// Stop once `||T_k - T_{k-1}||_F` falls below this.
    pub outer_tol: f64,
    pub marginal_tol: f64,
    pub mode: SinkhornMode,
}

impl Default for GwConfig {
    fn default() -> Self {
        GwConfig {
            omega: None,
            omega_scale: 0.01,
            outer_iters: 1000,
            sinkhorn_iters: 1000,
            outer_tol: 1e-9,
            marginal_tol: 1e-9,
            mode: SinkhornMode::Plain,
        }
    }
}

impl GwConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(w) = self.omega {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::arg(format!("omega must be positive, got {w}")));
            }
        }
        if !(self.omega_scale > 0.0) {
            return Err(Error::arg("omega_scale must be positive"));
        }
        if self.outer_iters == 0 || self.sinkhorn_iters == 0 {
            return Err(Error::arg("iteration counts must be positive"));
        }
        if !(self.outer_tol > 0.0 && self.marginal_tol > 0.0) {
            return Err(Error::arg("tolerances must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinkhornReport {
    pub plan: TransportPlan,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GwReport {
    pub plan: TransportPlan,
    /// Unregularized objective of the final plan.
    pub objective: f64,
    pub outer_iterations_used: usize,
    pub converged: bool,
    pub omega: f64,
    pub sinkhorn_converged: bool,
}

/// Independent coupling with uniform marginals.
pub fn init_plan(m: usize, n: usize) -> TransportPlan {
    let m = m.max(1);
    let n = n.max(1);
    TransportPlan {
        values: Matrix::filled(m, n, 1.0 / (m * n) as f64),
        row_marginal: vec![1.0 / m as f64; m],
        col_marginal: vec![1.0 / n as f64; n],
    }
}

fn independent_plan(p: &[f64], q: &[f64]) -> TransportPlan {
    TransportPlan {
        values: Matrix::from_fn(p.len(), q.len(), |i, j| p[i] * q[j]),
        row_marginal: p.to_vec(),
        col_marginal: q.to_vec(),
    }
}

fn check_marginal(name: &str, v: &[f64], len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::dim(format!("{name} has length {}, expected {len}", v.len())));
    }
    if v.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::arg(format!("{name} must be strictly positive")));
    }
    let s: f64 = v.iter().sum();
    if libm::fabs(s - 1.0) > MARGINAL_SUM_TOL {
        return Err(Error::arg(format!("{name} sums to {s}, expected 1")));
    }
    Ok(())
}

/// `C_st = (C_s∘C_s) p 1ᵀ + 1 qᵀ (C_t∘C_t)ᵀ`, with `∘` the elementwise product.
pub fn constant_offset(c_s: &DistanceMatrix, c_t: &DistanceMatrix, p: &[f64], q: &[f64]) -> Result<Matrix> {
    let (m, n) = (c_s.len(), c_t.len());
    if p.len() != m || q.len() != n {
        return Err(Error::dim(format!(
            "marginals of length ({}, {}) for distance matrices of size ({m}, {n})",
            p.len(),
            q.len()
        )));
    }
    let src: Vec<f64> = (0..m)
        .map(|i| (0..m).map(|k| c_s.get(i, k) * c_s.get(i, k) * p[k]).sum())
        .collect();
    let tgt: Vec<f64> = (0..n)
        .map(|j| (0..n).map(|l| c_t.get(j, l) * c_t.get(j, l) * q[l]).sum())
        .collect();
    Ok(Matrix::from_fn(m, n, |i, j| src[i] + tgt[j]))
}

/// Linearised cost `C_st - 2 C_s T C_tᵀ`.
pub fn gw_cost_matrix(
    c_st: &Matrix,
    c_s: &DistanceMatrix,
    c_t: &DistanceMatrix,
    plan: &TransportPlan,
) -> Result<Matrix> {
    let (m, n) = (c_s.len(), c_t.len());
    if plan.shape() != (m, n) || c_st.shape() != (m, n) {
        return Err(Error::dim(format!(
            "plan {:?} and offset {:?} must both be {m}x{n}",
            plan.shape(),
            c_st.shape()
        )));
    }
    let cross = c_s
        .values()
        .matmul(&plan.values)?
        .matmul(&c_t.values().transpose())?;
    Ok(Matrix::from_fn(m, n, |i, j| c_st[(i, j)] - 2.0 * cross[(i, j)]))
}

fn check_sinkhorn_inputs(c: &Matrix, p: &[f64], q: &[f64], omega: f64) -> Result<()> {
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(Error::arg(format!("omega must be positive, got {omega}")));
    }
    check_marginal("p", p, c.rows())?;
    check_marginal("q", q, c.cols())?;
    if !c.is_finite() {
        return Err(Error::Numerical("cost matrix contains non-finite entries".into()));
    }
    Ok(())
}

fn underflow(omega: f64) -> Error {
    Error::Numerical(format!(
        "Sinkhorn scaling became non-finite at omega = {omega:e}; increase omega or use the log-domain mode"
    ))
}

/// Plain-domain Sinkhorn scaling. Iterates `u ← p / (K v)`, `v ← q / (Kᵀ u)`
/// until both marginal residuals drop below `marginal_tol` or `iters` runs out.
///
/// The kernel is built from `C - min(C)`; the constant factor this removes is
/// absorbed by `u`, so the returned plan is unchanged.
pub fn sinkhorn(
    c: &Matrix,
    p: &[f64],
    q: &[f64],
    omega: f64,
    iters: usize,
    marginal_tol: f64,
) -> Result<SinkhornReport> {
    sinkhorn_warm(c, p, q, omega, iters, marginal_tol, None).map(|(r, _)| r)
}

/// [`sinkhorn`] started from a given column scaling. Returns the final
/// column scaling as well.
fn sinkhorn_warm(
    c: &Matrix,
    p: &[f64],
    q: &[f64],
    omega: f64,
    iters: usize,
    marginal_tol: f64,
    v0: Option<Vec<f64>>,
) -> Result<(SinkhornReport, Vec<f64>)> {
    check_sinkhorn_inputs(c, p, q, omega)?;
    let (m, n) = c.shape();
    let c_min = c.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
    let kernel = c.map(|x| libm::exp(-(x - c_min) / omega));

    let mut u = vec![1.0 / m as f64; m];
    let mut v = v0.filter(|v| v.len() == n).unwrap_or_else(|| vec![1.0 / n as f64; n]);
    let mut converged = false;
    let mut used = 0;
    for k in 1..=iters {
        used = k;
        let kv = kernel.matvec(&v);
        for i in 0..m {
            u[i] = p[i] / kv[i];
        }
        let ktu = kernel.tr_matvec(&u);
        for j in 0..n {
            v[j] = q[j] / ktu[j];
        }
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(underflow(omega));
        }
        // columns are exact after the v-update; the row residual is the live one
        let kv = kernel.matvec(&v);
        let row_res = (0..m).fold(0.0, |r, i| f64::max(r, libm::fabs(u[i] * kv[i] - p[i])));
        if row_res < marginal_tol {
            converged = true;
            break;
        }
    }
    let values = Matrix::from_fn(m, n, |i, j| u[i] * kernel[(i, j)] * v[j]);
    if !values.is_finite() {
        return Err(underflow(omega));
    }
    let plan = TransportPlan {
        values,
        row_marginal: p.to_vec(),
        col_marginal: q.to_vec(),
    };
    let converged = converged && plan.col_residual() < marginal_tol;
    let report = SinkhornReport {
        plan,
        iterations: used,
        converged,
    };
    Ok((report, v))
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + libm::log(xs.map(|x| libm::exp(x - max)).sum::<f64>())
}

/// Log-domain Sinkhorn on dual potentials `f`, `g` with
/// `T_ij = exp((f_i + g_j - C_ij) / ω)`.
pub fn sinkhorn_log(
    c: &Matrix,
    p: &[f64],
    q: &[f64],
    omega: f64,
    iters: usize,
    marginal_tol: f64,
) -> Result<SinkhornReport> {
    sinkhorn_log_warm(c, p, q, omega, iters, marginal_tol, None).map(|(r, _)| r)
}

fn sinkhorn_log_warm(
    c: &Matrix,
    p: &[f64],
    q: &[f64],
    omega: f64,
    iters: usize,
    marginal_tol: f64,
    g0: Option<Vec<f64>>,
) -> Result<(SinkhornReport, Vec<f64>)> {
    check_sinkhorn_inputs(c, p, q, omega)?;
    let (m, n) = c.shape();
    let log_p: Vec<f64> = p.iter().map(|x| libm::log(*x)).collect();
    let log_q: Vec<f64> = q.iter().map(|x| libm::log(*x)).collect();
    let mut f = vec![0.0; m];
    let mut g = g0.filter(|g| g.len() == n).unwrap_or_else(|| vec![0.0; n]);
    let mut converged = false;
    let mut used = 0;
    let row_lse = |f_i: f64, g: &[f64], i: usize| {
        log_sum_exp((0..n).map(move |j| (f_i + g[j] - c[(i, j)]) / omega))
    };
    for k in 1..=iters {
        used = k;
        for i in 0..m {
            f[i] = omega * (log_p[i] - row_lse(0.0, &g, i));
        }
        for j in 0..n {
            let lse = log_sum_exp((0..m).map(|i| (f[i] - c[(i, j)]) / omega));
            g[j] = omega * (log_q[j] - lse);
        }
        if f.iter().chain(&g).any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!(
                "log-domain Sinkhorn produced non-finite potentials at omega = {omega:e}"
            )));
        }
        let row_res = (0..m).fold(0.0, |r, i| {
            f64::max(r, libm::fabs(libm::exp(row_lse(f[i], &g, i)) - p[i]))
        });
        if row_res < marginal_tol {
            converged = true;
            break;
        }
    }
    let values = Matrix::from_fn(m, n, |i, j| libm::exp((f[i] + g[j] - c[(i, j)]) / omega));
    let plan = TransportPlan {
        values,
        row_marginal: p.to_vec(),
        col_marginal: q.to_vec(),
    };
    let converged = converged && plan.col_residual() < marginal_tol;
    let report = SinkhornReport {
        plan,
        iterations: used,
        converged,
    };
    Ok((report, g))
}

/// Moves a nearly feasible plan onto the coupling set: rows are scaled down
/// to at most `p`, columns to at most `q`, and the remaining deficit is added
/// back as a rank-one term. A plan that already has the right marginals is
/// returned unchanged up to rounding. Ill-conditioned kernels can leave
/// Sinkhorn short of `marginal_tol` for a very long time; this restores exact
/// feasibility with an L1 change of at most twice the residual.
fn round_to_marginals(plan: TransportPlan, p: &[f64], q: &[f64]) -> TransportPlan {
    let mut t = plan.values;
    let (m, n) = t.shape();
    let rows = t.row_sums();
    for i in 0..m {
        if rows[i] > p[i] {
            let f = p[i] / rows[i];
            t.row_mut(i).iter_mut().for_each(|x| *x *= f);
        }
    }
    let cols = t.col_sums();
    for j in 0..n {
        if cols[j] > q[j] {
            let f = q[j] / cols[j];
            for i in 0..m {
                t[(i, j)] *= f;
            }
        }
    }
    let err_r: Vec<f64> = t.row_sums().iter().zip(p).map(|(r, p)| (p - r).max(0.0)).collect();
    let err_c: Vec<f64> = t.col_sums().iter().zip(q).map(|(c, q)| (q - c).max(0.0)).collect();
    let mass: f64 = err_r.iter().sum();
    if mass > 0.0 {
        for i in 0..m {
            for j in 0..n {
                t[(i, j)] += err_r[i] * err_c[j] / mass;
            }
        }
    }
    TransportPlan {
        values: t,
        row_marginal: p.to_vec(),
        col_marginal: q.to_vec(),
    }
}

fn median_positive(c: &Matrix) -> Option<f64> {
    let mut pos: Vec<f64> = c.as_slice().iter().copied().filter(|&x| x > 0.0).collect();
    if pos.is_empty() {
        return None;
    }
    pos.sort_by(f64::total_cmp);
    let k = pos.len();
    Some(if k % 2 == 1 {
        pos[k / 2]
    } else {
        0.5 * (pos[k / 2 - 1] + pos[k / 2])
    })
}

/// Solves the entropic Gromov-Wasserstein problem between two metric-measure
/// spaces given by their distance matrices and marginals.
pub fn entropic_gw(
    c_s: &DistanceMatrix,
    c_t: &DistanceMatrix,
    p: &[f64],
    q: &[f64],
    config: &GwConfig,
) -> Result<GwReport> {
    config.validate()?;
    let (m, n) = (c_s.len(), c_t.len());
    if m == 0 || n == 0 {
        return Err(Error::arg("distance matrices must be nonempty"));
    }
    check_marginal("p", p, m)?;
    check_marginal("q", q, n)?;

    let c_st = constant_offset(c_s, c_t, p, q)?;
    let mut plan = independent_plan(p, q);
    let mut cost = gw_cost_matrix(&c_st, c_s, c_t, &plan)?;
    let omega = match config.omega {
        Some(w) => w,
        // a constant cost leaves the plan independent of omega
        None => median_positive(&cost).map_or(1.0, |med| config.omega_scale * med),
    };

    let mut converged = false;
    let mut sinkhorn_converged = false;
    let mut used = 0;
    // each projection starts from the previous step's column scaling, so a
    // slowly converging Sinkhorn keeps making progress across outer steps
    let mut warm = None;
    for step in 1..=config.outer_iters {
        used = step;
        if step > 1 {
            cost = gw_cost_matrix(&c_st, c_s, c_t, &plan)?;
        }
        let (report, scaling) = match config.mode {
            SinkhornMode::Plain => {
                sinkhorn_warm(&cost, p, q, omega, config.sinkhorn_iters, config.marginal_tol, warm.take())?
            }
            SinkhornMode::Log => {
                sinkhorn_log_warm(&cost, p, q, omega, config.sinkhorn_iters, config.marginal_tol, warm.take())?
            }
        };
        warm = Some(scaling);
        sinkhorn_converged = report.converged;
        let change = report.plan.values.frobenius_diff(&plan.values);
        plan = report.plan;
        if change < config.outer_tol {
            converged = true;
            break;
        }
    }
    let plan = round_to_marginals(plan, p, q);
    let objective = gw_objective(c_s, c_t, &plan);
    Ok(GwReport {
        plan,
        objective,
        outer_iterations_used: used,
        converged,
        omega,
        sinkhorn_converged,
    })
}

/// `Σ_{i,i',j,j'} |C_s[i][i'] - C_t[j][j']|² T[i][j] T[i'][j']` by direct
/// quadruple summation.
///
/// # Panics
/// If the plan shape does not match the two distance matrices.
pub fn gw_objective(c_s: &DistanceMatrix, c_t: &DistanceMatrix, plan: &TransportPlan) -> f64 {
    let (m, n) = (c_s.len(), c_t.len());
    assert_eq!(plan.shape(), (m, n), "plan shape must match the distance matrices");
    let t = &plan.values;
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..n {
            let tij = t[(i, j)];
            if tij == 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for i2 in 0..m {
                for j2 in 0..n {
                    let d = c_s.get(i, i2) - c_t.get(j, j2);
                    inner += d * d * t[(i2, j2)];
                }
            }
            total += tij * inner;
        }
    }
    total.max(0.0)
}

/// The same objective through the decomposed cost:
/// `⟨T, C_st(T) - 2 C_s T C_tᵀ⟩` with `C_st` built from the plan's own marginals.
pub fn gw_objective_decomposed(c_s: &DistanceMatrix, c_t: &DistanceMatrix, plan: &TransportPlan) -> Result<f64> {
    let p = plan.values.row_sums();
    let q = plan.values.col_sums();
    let c_st = constant_offset(c_s, c_t, &p, &q)?;
    let cost = gw_cost_matrix(&c_st, c_s, c_t, plan)?;
    Ok(cost
        .as_slice()
        .iter()
        .zip(plan.values.as_slice())
        .map(|(c, t)| c * t)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::Metric;

    fn dm(rows: &[Vec<f64>]) -> DistanceMatrix {
        DistanceMatrix::from_rows(rows, Metric::Euclidean).unwrap()
    }

    #[test]
    fn init_plan_is_uniform() {
        assert_eq!(init_plan(1, 1).values.to_rows(), vec![vec![1.0]]);
        assert!(init_plan(2, 2).values.as_slice().iter().all(|&x| x == 0.25));
        assert!(init_plan(4, 4).values.as_slice().iter().all(|&x| x == 0.0625));
        assert_eq!(init_plan(2, 4).row_marginal, vec![0.5, 0.5]);
    }

    #[test]
    fn offset_zero_distances() {
        let z = dm(&[vec![0.0]]);
        let c = constant_offset(&z, &z, &[1.0], &[1.0]).unwrap();
        assert_eq!(c.to_rows(), vec![vec![0.0]]);
    }

    #[test]
    fn offset_hand_expansion() {
        let cs = dm(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let ct = dm(&[vec![0.0, 0.0], vec![0.0, 0.0]]);
        let c = constant_offset(&cs, &ct, &[0.5, 0.5], &[0.5, 0.5]).unwrap();
        assert_eq!(c.to_rows(), vec![vec![0.5, 0.5], vec![0.5, 0.5]]);
    }

    #[test]
    fn offset_is_quadratic_in_distances() {
        let cs = dm(&[vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 1.5], vec![2.0, 1.5, 0.0]]);
        let ct = dm(&[vec![0.0, 0.7], vec![0.7, 0.0]]);
        let p = [0.2, 0.3, 0.5];
        let q = [0.6, 0.4];
        let base = constant_offset(&cs, &ct, &p, &q).unwrap();
        let cs2 = DistanceMatrix::new(cs.values().scale(2.0), Metric::Euclidean).unwrap();
        let ct2 = DistanceMatrix::new(ct.values().scale(2.0), Metric::Euclidean).unwrap();
        let doubled = constant_offset(&cs2, &ct2, &p, &q).unwrap();
        assert!(doubled.max_abs_diff(&base.scale(4.0)) < 1e-12);
    }

    #[test]
    fn offset_rejects_bad_marginals() {
        let cs = dm(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert!(constant_offset(&cs, &cs, &[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn cost_with_zero_plan_is_offset() {
        let cs = dm(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let ct = dm(&[vec![0.0, 2.0], vec![2.0, 0.0]]);
        let cst = constant_offset(&cs, &ct, &[0.5, 0.5], &[0.5, 0.5]).unwrap();
        let zero = TransportPlan::from_matrix(Matrix::zeros(2, 2)).unwrap();
        assert_eq!(gw_cost_matrix(&cst, &cs, &ct, &zero).unwrap(), cst);

        let z = dm(&[vec![0.0, 0.0], vec![0.0, 0.0]]);
        let cst0 = constant_offset(&z, &z, &[0.5, 0.5], &[0.5, 0.5]).unwrap();
        let c = gw_cost_matrix(&cst0, &z, &z, &init_plan(2, 2)).unwrap();
        assert!(c.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn cost_matches_bruteforce_gradient() {
        // C[i][j] = Σ_{i',j'} (d_s(i,i') - d_t(j,j'))² T[i'][j'] when T has marginals p, q
        let cs = dm(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let plan = init_plan(2, 2);
        let cst = constant_offset(&cs, &cs, &[0.5, 0.5], &[0.5, 0.5]).unwrap();
        let c = gw_cost_matrix(&cst, &cs, &cs, &plan).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut expect = 0.0;
                for i2 in 0..2 {
                    for j2 in 0..2 {
                        let d: f64 = cs.get(i, i2) - cs.get(j, j2);
                        expect += d * d * plan.get(i2, j2);
                    }
                }
                assert!((c[(i, j)] - expect).abs() < 1e-15);
                assert!((c[(i, j)] - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn sinkhorn_zero_cost_is_independent() {
        let p = [0.2, 0.8];
        let q = [0.5, 0.3, 0.2];
        let r = sinkhorn(&Matrix::zeros(2, 3), &p, &q, 0.5, 100, 1e-12).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert!((r.plan.get(i, j) - p[i] * q[j]).abs() < 1e-15);
            }
        }
        assert!(r.converged);
    }

    #[test]
    fn sinkhorn_single_point() {
        let c = Matrix::filled(1, 1, 123.0);
        let r = sinkhorn(&c, &[1.0], &[1.0], 0.01, 10, 1e-12).unwrap();
        assert_eq!(r.plan.values.to_rows(), vec![vec![1.0]]);
    }

    #[test]
    fn sinkhorn_two_by_two_concentrates_on_diagonal() {
        // closed form: T = [[a, b], [b, a]] with a/b scaling to exp(200); off-diagonal ~ 0.5·e^{-100}
        let c = Matrix::from_rows(&[vec![0.0, 10.0], vec![10.0, 0.0]]).unwrap();
        for r in [
            sinkhorn(&c, &[0.5, 0.5], &[0.5, 0.5], 0.1, 1000, 1e-12).unwrap(),
            sinkhorn_log(&c, &[0.5, 0.5], &[0.5, 0.5], 0.1, 1000, 1e-12).unwrap(),
        ] {
            assert!((r.plan.get(0, 0) - 0.5).abs() < 1e-6);
            assert!((r.plan.get(1, 1) - 0.5).abs() < 1e-6);
            assert!(r.plan.get(0, 1) < 1e-6 && r.plan.get(1, 0) < 1e-6);
        }
    }

    #[test]
    fn sinkhorn_reports_underflow() {
        // one row sits 2000ω above the rest: its kernel row underflows to zero
        let c = Matrix::from_rows(&[vec![0.0, 0.0], vec![20.0, 20.0]]).unwrap();
        let err = sinkhorn(&c, &[0.5, 0.5], &[0.5, 0.5], 0.01, 10, 1e-9).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
        let ok = sinkhorn_log(&c, &[0.5, 0.5], &[0.5, 0.5], 0.01, 100, 1e-9).unwrap();
        assert!(ok.converged);
    }

    #[test]
    fn sinkhorn_flags_nonconvergence() {
        let c = Matrix::from_rows(&[vec![0.0, 1.0, 2.0], vec![2.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]]).unwrap();
        let p = [0.5, 0.3, 0.2];
        let r = sinkhorn(&c, &p, &[0.2, 0.2, 0.6], 0.05, 1, 1e-14).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 1);
    }

    #[test]
    fn sinkhorn_rejects_bad_marginals() {
        let c = Matrix::zeros(2, 2);
        assert!(sinkhorn(&c, &[0.5, 0.6], &[0.5, 0.5], 1.0, 10, 1e-9).is_err());
        assert!(sinkhorn(&c, &[1.0, 0.0], &[0.5, 0.5], 1.0, 10, 1e-9).is_err());
        assert!(sinkhorn(&c, &[0.5, 0.5], &[0.5, 0.5], 0.0, 10, 1e-9).is_err());
    }

    #[test]
    fn gw_single_point() {
        let z = dm(&[vec![0.0]]);
        let r = entropic_gw(&z, &z, &[1.0], &[1.0], &GwConfig::default()).unwrap();
        assert_eq!(r.plan.values.to_rows(), vec![vec![1.0]]);
        assert_eq!(r.objective, 0.0);
        assert!(r.converged);
    }

    #[test]
    fn objective_hand_values() {
        let cs = dm(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let zero = dm(&[vec![0.0, 0.0], vec![0.0, 0.0]]);
        // 8 of the 16 terms have i != i', each 1 · 0.25 · 0.25
        let mut oracle = 0.0;
        for i in 0..2 {
            for i2 in 0..2 {
                for _ in 0..4 {
                    oracle += if i == i2 { 0.0 } else { 0.0625 };
                }
            }
        }
        assert_eq!(oracle, 0.5);
        assert!((gw_objective(&cs, &zero, &init_plan(2, 2)) - oracle).abs() < 1e-15);
        assert_eq!(gw_objective(&zero, &zero, &init_plan(2, 2)), 0.0);
        let ident = TransportPlan::from_matrix(Matrix::from_rows(&[vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap()).unwrap();
        assert_eq!(gw_objective(&cs, &cs, &ident), 0.0);
    }

    #[test]
    fn decomposed_objective_matches_quadruple_sum() {
        let cs = dm(&[vec![0.0, 1.0, 2.5], vec![1.0, 0.0, 1.7], vec![2.5, 1.7, 0.0]]);
        let ct = dm(&[vec![0.0, 0.4, 3.0], vec![0.4, 0.0, 2.2], vec![3.0, 2.2, 0.0]]);
        let t = TransportPlan::from_matrix(
            Matrix::from_rows(&[vec![0.1, 0.05, 0.2], vec![0.0, 0.25, 0.05], vec![0.15, 0.1, 0.1]]).unwrap(),
        )
        .unwrap();
        let a = gw_objective(&cs, &ct, &t);
        let b = gw_objective_decomposed(&cs, &ct, &t).unwrap();
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn column_argmax_prefers_lowest_index_on_ties() {
        let t = TransportPlan::from_matrix(Matrix::from_rows(&[vec![0.25, 0.1], vec![0.25, 0.4]]).unwrap()).unwrap();
        assert_eq!(t.column_argmax(), vec![0, 1]);
    }
}
