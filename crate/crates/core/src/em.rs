//! Approximate EM estimation of the copula correlation matrix from
//! incomplete mixed data.
//!
//! Each E-step replaces the unknown latent second moments by their
//! conditional expectation given the observed cells: observed continuous
//! coordinates are pinned, observed ordinal coordinates get one
//! conditional-moment update per iteration with a diagonal covariance
//! approximation, and missing coordinates follow from the conditional
//! normal identities. The M-step is the averaged second moment scaled back
//! to a correlation matrix.
//!
//! The per-row computation runs on flat scratch buffers with an in-place
//! Cholesky so the O(p^3) solves dominate the cost, matching the
//! O(alpha n p^3) per-iteration complexity of the method.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::{MixedDataMatrix, VariableKind};
use crate::error::{Error, Result};
use crate::marginals::{ContinuousMarginal, LatentInterval, MarginalModel, OrdinalMarginal};
use crate::truncnorm::univariate_moments;

/// A p-by-p correlation matrix: symmetric, exactly unit diagonal, positive
/// semidefinite within tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    matrix: DMatrix<f64>,
}

impl CorrelationMatrix {
    const SYMMETRY_TOL: f64 = 1e-12;
    const EIGEN_TOL: f64 = -1e-8;

    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let p = matrix.nrows();
        if matrix.ncols() != p || p == 0 {
            return Err(Error::InvalidArgument(
                "correlation matrix must be square and non-empty".into(),
            ));
        }
        for i in 0..p {
            if matrix[(i, i)] != 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "correlation matrix diagonal entry {i} is {} (must be exactly 1)",
                    matrix[(i, i)]
                )));
            }
            for j in 0..i {
                let d = (matrix[(i, j)] - matrix[(j, i)]).abs();
                // negated form rejects NaN differences as well
                #[allow(clippy::neg_cmp_op_on_partial_ord)]
                if !(d <= Self::SYMMETRY_TOL) {
                    return Err(Error::InvalidArgument(format!(
                        "correlation matrix is asymmetric at ({i},{j}): difference {d}"
                    )));
                }
            }
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "correlation matrix has non-finite entries".into(),
            ));
        }
        let min_eig = matrix
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        if min_eig < Self::EIGEN_TOL {
            return Err(Error::InvalidArgument(format!(
                "correlation matrix is not positive semidefinite: smallest eigenvalue {min_eig}"
            )));
        }
        Ok(CorrelationMatrix { matrix })
    }

    pub fn identity(p: usize) -> Self {
        CorrelationMatrix {
            matrix: DMatrix::identity(p, p),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Apply a column permutation symmetrically: out[i][j] = in[perm[i]][perm[j]].
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let p = self.dim();
        if perm.len() != p {
            return Err(Error::InvalidArgument("permutation length mismatch".into()));
        }
        let mut out = DMatrix::zeros(p, p);
        for i in 0..p {
            for j in 0..p {
                out[(i, j)] = self.matrix[(perm[i], perm[j])];
            }
        }
        CorrelationMatrix::new(out)
    }
}

/// Scale a symmetric matrix with positive diagonal onto the elliptope:
/// D^{-1/2} m D^{-1/2} with D the diagonal of m. Output diagonal is exactly
/// one; positive semidefiniteness is preserved.
pub fn project_elliptope(m: &DMatrix<f64>) -> Result<CorrelationMatrix> {
    let p = m.nrows();
    if m.ncols() != p {
        return Err(Error::InvalidArgument(
            "elliptope projection needs a square matrix".into(),
        ));
    }
    let mut scale = Vec::with_capacity(p);
    for i in 0..p {
        let d = m[(i, i)];
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
        if !(d > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "elliptope projection needs a positive diagonal; entry {i} is {d}"
            )));
        }
        scale.push(1.0 / d.sqrt());
    }
    let mut out = DMatrix::zeros(p, p);
    for i in 0..p {
        out[(i, i)] = 1.0;
        for j in 0..i {
            let v = m[(i, j)] * scale[i] * scale[j];
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    CorrelationMatrix::new(out)
}

/// Ordinal update flavor within one E-step sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateMode {
    /// Update ordinal dimensions in ascending column order, using the
    /// freshest estimates within the sweep.
    #[default]
    GaussSeidel,
    /// Compute every update from the previous iteration's estimates.
    Jacobi,
}

/// EM configuration. `threads = 1` forces serial execution; results do not
/// depend on the thread count either way.
#[derive(Debug, Clone)]
pub struct EmConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub ridge: f64,
    pub update_mode: UpdateMode,
    pub threads: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            tol: 0.01,
            max_iter: 50,
            ridge: 1e-8,
            update_mode: UpdateMode::GaussSeidel,
            threads: 1,
        }
    }
}

/// What is known about one latent coordinate of a row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Constraint {
    /// Observed continuous cell: the latent value is pinned.
    ObservedContinuous(f64),
    /// Observed ordinal cell: the latent value lies in this interval.
    ObservedOrdinal(LatentInterval),
    Missing,
}

/// Conditional mean and diagonal conditional variance of one row's latent
/// vector, carried across EM iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentRowState {
    pub mean: DVector<f64>,
    pub var_diag: DVector<f64>,
    pub constraints: Vec<Constraint>,
}

impl LatentRowState {
    /// Resolve a masked mixed row against fitted marginals and initialize
    /// the state: pinned values for observed continuous cells, univariate
    /// truncated moments for observed ordinal cells, prior moments for
    /// missing cells.
    pub fn from_row(values: &[f64], mask: &[bool], marginals: &[MarginalModel]) -> Result<Self> {
        let p = marginals.len();
        if values.len() != p || mask.len() != p {
            return Err(Error::InvalidArgument(
                "latent row state: row length does not match the marginals".into(),
            ));
        }
        let mut mean = DVector::zeros(p);
        let mut var = DVector::zeros(p);
        let mut constraints = Vec::with_capacity(p);
        for j in 0..p {
            if !mask[j] {
                constraints.push(Constraint::Missing);
                var[j] = 1.0;
                continue;
            }
            match &marginals[j] {
                MarginalModel::Continuous(m) => {
                    let z = m.to_latent(values[j]);
                    mean[j] = z;
                    constraints.push(Constraint::ObservedContinuous(z));
                }
                MarginalModel::Ordinal(m) => {
                    let iv = m.interval(values[j] as usize)?;
                    let tm = univariate_moments(0.0, 1.0, iv.lower, iv.upper);
                    mean[j] = tm.mean;
                    var[j] = tm.variance;
                    constraints.push(Constraint::ObservedOrdinal(iv));
                }
            }
        }
        Ok(LatentRowState {
            mean,
            var_diag: var,
            constraints,
        })
    }
}

/// Output of one row's E-step.
#[derive(Debug, Clone)]
pub struct RowEstep {
    pub state: LatentRowState,
    /// The row's conditional second moment E[z z^T | observed cells].
    pub contribution: DMatrix<f64>,
    /// Number of ridged factorizations performed for this row.
    pub ridge_events: u64,
}

/// In-place lower-triangular Cholesky of a column-major n-by-n buffer,
/// filling `inv_diag` with the reciprocal diagonal so the solves below are
/// division-free. Returns false when the matrix is not positive definite.
fn chol_in_place(a: &mut [f64], n: usize, inv_diag: &mut [f64]) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            let l = a[k * n + j];
            d -= l * l;
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
        if !(d > 0.0) {
            return false;
        }
        let dj = d.sqrt();
        let inv = 1.0 / dj;
        a[j * n + j] = dj;
        inv_diag[j] = inv;
        for i in (j + 1)..n {
            let mut s = a[j * n + i];
            for k in 0..j {
                s -= a[k * n + i] * a[k * n + j];
            }
            a[j * n + i] = s * inv;
        }
    }
    true
}

/// Solve (L L^T) x = b in place given the factor from [`chol_in_place`].
fn chol_solve(l: &[f64], inv_diag: &[f64], n: usize, x: &mut [f64]) {
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s * inv_diag[i];
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[i * n + k] * x[k];
        }
        x[i] = s * inv_diag[i];
    }
}

/// The full inverse of L L^T, one unit-column solve per column.
fn chol_inverse(l: &[f64], inv_diag: &[f64], n: usize, out: &mut [f64]) {
    for j in 0..n {
        let col = &mut out[j * n..(j + 1) * n];
        col.fill(0.0);
        col[j] = 1.0;
        chol_solve(l, inv_diag, n, col);
    }
}

/// out = a * x for a column-major n-by-n matrix, streaming by columns.
fn matvec(a: &[f64], n: usize, x: &[f64], out: &mut [f64]) {
    out[..n].fill(0.0);
    for c in 0..n {
        let xc = x[c];
        if xc != 0.0 {
            let col = &a[c * n..(c + 1) * n];
            for r in 0..n {
                out[r] += col[r] * xc;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Index structure of one row: which dimensions are observed, missing, and
/// which observed positions are ordinal. Fixed for the whole fit.
#[derive(Debug, Clone)]
pub(crate) struct RowPattern {
    obs: Vec<usize>,
    mis: Vec<usize>,
    /// positions within `obs` that carry interval constraints
    ord_pos: Vec<usize>,
}

impl RowPattern {
    pub(crate) fn from_constraints(constraints: &[Constraint]) -> Self {
        let mut obs = Vec::new();
        let mut mis = Vec::new();
        let mut ord_pos = Vec::new();
        for (j, c) in constraints.iter().enumerate() {
            match c {
                Constraint::Missing => mis.push(j),
                Constraint::ObservedContinuous(_) => obs.push(j),
                Constraint::ObservedOrdinal(_) => {
                    obs.push(j);
                    ord_pos.push(obs.len() - 1);
                }
            }
        }
        RowPattern { obs, mis, ord_pos }
    }
}

/// Reusable per-thread scratch for the row E-step; all buffers are sized to
/// the dataset's column count once and reused across rows.
pub(crate) struct RowWorkspace {
    soo: Vec<f64>,
    inv_diag: Vec<f64>,
    lam: Vec<f64>,
    som: Vec<f64>,
    wt: Vec<f64>,
    covm: Vec<f64>,
    z: Vec<f64>,
    v: Vec<f64>,
    lz: Vec<f64>,
    zm: Vec<f64>,
    mus: Vec<f64>,
}

impl RowWorkspace {
    pub fn new(p: usize) -> Self {
        RowWorkspace {
            soo: vec![0.0; p * p],
            inv_diag: vec![0.0; p],
            lam: vec![0.0; p * p],
            som: vec![0.0; p * p],
            wt: vec![0.0; p * p],
            covm: vec![0.0; p * p],
            z: vec![0.0; p],
            v: vec![0.0; p],
            lz: vec![0.0; p],
            zm: vec![0.0; p],
            mus: vec![0.0; p],
        }
    }
}

/// One E-step for a single row, updating `state` in place. The pieces of
/// the row's contribution (ordinal variances, missing-block covariance,
/// missing-observed cross terms) stay in the workspace for
/// [`accumulate_contribution_upper`] or [`materialize_contribution`].
/// Returns the number of ridged factorizations.
pub(crate) fn estep_row_core(
    sigma: &DMatrix<f64>,
    pattern: &RowPattern,
    state: &mut LatentRowState,
    config: &EmConfig,
    ws: &mut RowWorkspace,
) -> Result<u64> {
    let p = sigma.nrows();
    let sm = sigma.as_slice(); // column-major p*p

    let q = pattern.obs.len();
    let m = pattern.mis.len();
    let d = pattern.ord_pos.len();

    // A fully missing row keeps the prior moments.
    if q == 0 {
        state.mean.fill(0.0);
        state.var_diag.fill(1.0);
        return Ok(0);
    }

    for (oi, &j) in pattern.obs.iter().enumerate() {
        ws.z[oi] = state.mean[j];
        ws.v[oi] = 0.0;
    }
    for &oi in &pattern.ord_pos {
        ws.v[oi] = state.var_diag[pattern.obs[oi]];
    }

    let mut ridge_events = 0u64;
    if d > 0 || m > 0 {
        let soo = &mut ws.soo[..q * q];
        // the factorization reads the lower triangle only
        let fill = |soo: &mut [f64], ridge: f64| {
            for (ci, &cj) in pattern.obs.iter().enumerate() {
                for (ri, &rj) in pattern.obs.iter().enumerate().skip(ci) {
                    soo[ci * q + ri] = sm[cj * p + rj];
                }
                soo[ci * q + ci] += ridge;
            }
        };
        fill(soo, 0.0);
        if !chol_in_place(soo, q, &mut ws.inv_diag) {
            fill(soo, config.ridge);
            ridge_events += 1;
            if !chol_in_place(soo, q, &mut ws.inv_diag) {
                return Err(Error::Numerical {
                    iteration: 0,
                    reason: "observed-block covariance not factorable even with ridge".into(),
                });
            }
        }
        let soo = &ws.soo[..q * q];
        // full precision matrix of the observed block; the ordinal sweep,
        // the regression onto missing dimensions, and the conditional
        // variances all read from it
        chol_inverse(soo, &ws.inv_diag, q, &mut ws.lam[..q * q]);
        let lam = &ws.lam[..q * q];

        if d > 0 {
            let lz = &mut ws.lz[..q];
            matvec(lam, q, &ws.z[..q], lz);

            match config.update_mode {
                UpdateMode::GaussSeidel => {
                    for &oi in pattern.ord_pos.iter() {
                        let j = pattern.obs[oi];
                        let Constraint::ObservedOrdinal(iv) = state.constraints[j] else {
                            unreachable!()
                        };
                        let lam_col = &lam[oi * q..(oi + 1) * q];
                        let s2 = (1.0 / lam_col[oi]).max(1e-12);
                        let mu = ws.z[oi] - lz[oi] * s2;
                        let tm = univariate_moments(mu, s2, iv.lower, iv.upper);
                        let delta = tm.mean - ws.z[oi];
                        if delta != 0.0 {
                            ws.z[oi] = tm.mean;
                            for r in 0..q {
                                lz[r] += lam_col[r] * delta;
                            }
                        }
                        ws.v[oi] = tm.variance;
                    }
                }
                UpdateMode::Jacobi => {
                    for (col, &oi) in pattern.ord_pos.iter().enumerate() {
                        let s2 = (1.0 / lam[oi * q + oi]).max(1e-12);
                        ws.mus[col] = ws.z[oi] - lz[oi] * s2;
                    }
                    for (col, &oi) in pattern.ord_pos.iter().enumerate() {
                        let j = pattern.obs[oi];
                        let Constraint::ObservedOrdinal(iv) = state.constraints[j] else {
                            unreachable!()
                        };
                        let s2 = (1.0 / lam[oi * q + oi]).max(1e-12);
                        let tm = univariate_moments(ws.mus[col], s2, iv.lower, iv.upper);
                        ws.z[oi] = tm.mean;
                        ws.v[oi] = tm.variance;
                    }
                }
            }
        }

        if m > 0 {
            // W^T = Lambda Sigma_OM, one matrix-vector product per missing
            // dimension
            for (c, &mj) in pattern.mis.iter().enumerate() {
                for (r, &oj) in pattern.obs.iter().enumerate() {
                    ws.som[c * q + r] = sm[mj * p + oj];
                }
            }
            for c in 0..m {
                matvec(
                    lam,
                    q,
                    &ws.som[c * q..(c + 1) * q],
                    &mut ws.wt[c * q..(c + 1) * q],
                );
            }
            for c in 0..m {
                ws.zm[c] = dot(&ws.wt[c * q..(c + 1) * q], &ws.z[..q]);
            }
            // Cov[z_M] = Sigma_MM - Sigma_MO W^T + W Cov[z_O] W^T with
            // Cov[z_O] diagonal
            for c in 0..m {
                let wc = &ws.wt[c * q..(c + 1) * q];
                for r in 0..m {
                    let wr = &ws.wt[r * q..(r + 1) * q];
                    let mut val = sm[pattern.mis[c] * p + pattern.mis[r]];
                    val -= dot(&ws.som[r * q..(r + 1) * q], wc);
                    let mut extra = 0.0;
                    for k in 0..q {
                        extra += wr[k] * ws.v[k] * wc[k];
                    }
                    ws.covm[c * m + r] = val + extra;
                }
            }
        }
    }

    for (oi, &j) in pattern.obs.iter().enumerate() {
        state.mean[j] = ws.z[oi];
        state.var_diag[j] = ws.v[oi];
    }
    for (c, &j) in pattern.mis.iter().enumerate() {
        state.mean[j] = ws.zm[c];
        state.var_diag[j] = ws.covm[c * m + c].max(0.0);
    }
    Ok(ridge_events)
}

/// Add the row's contribution E[z z^T | observed] to an upper-triangular
/// (column-major, row <= column) accumulator. The covariance part is sparse
/// (ordinal diagonal, missing block, missing-observed cross terms); only the
/// mean outer product is dense.
fn accumulate_contribution_upper(
    partial: &mut [f64],
    sigma: &[f64],
    p: usize,
    pattern: &RowPattern,
    state: &LatentRowState,
    ws: &RowWorkspace,
) {
    let q = pattern.obs.len();
    let m = pattern.mis.len();
    if q == 0 {
        // prior second moment: the correlation matrix itself
        for cj in 0..p {
            for rj in 0..=cj {
                partial[cj * p + rj] += sigma[cj * p + rj];
            }
        }
        return;
    }
    for (oi, &j) in pattern.obs.iter().enumerate() {
        partial[j * p + j] += ws.v[oi];
    }
    for c in 0..m {
        let jc = pattern.mis[c];
        for r in 0..=c {
            let jr = pattern.mis[r];
            partial[jc * p + jr] += 0.5 * (ws.covm[c * m + r] + ws.covm[r * m + c]);
        }
        for (oi, &jo) in pattern.obs.iter().enumerate() {
            let val = ws.wt[c * q + oi] * ws.v[oi];
            if jo <= jc {
                partial[jc * p + jo] += val;
            } else {
                partial[jo * p + jc] += val;
            }
        }
    }
    let mean = state.mean.as_slice();
    for cj in 0..p {
        let mc = mean[cj];
        let col = &mut partial[cj * p..cj * p + cj + 1];
        for (rj, slot) in col.iter_mut().enumerate() {
            *slot += mean[rj] * mc;
        }
    }
}

/// Assemble the full symmetric contribution matrix from the workspace, for
/// callers that need it explicitly.
fn materialize_contribution(
    sigma: &DMatrix<f64>,
    pattern: &RowPattern,
    state: &LatentRowState,
    ws: &RowWorkspace,
) -> DMatrix<f64> {
    let p = sigma.nrows();
    let mut upper = vec![0.0; p * p];
    accumulate_contribution_upper(&mut upper, sigma.as_slice(), p, pattern, state, ws);
    let mut out = DMatrix::zeros(p, p);
    for cj in 0..p {
        for rj in 0..=cj {
            let val = upper[cj * p + rj];
            out[(rj, cj)] = val;
            out[(cj, rj)] = val;
        }
    }
    out
}

/// One E-step for a single row: update the ordinal conditional moments by a
/// single sweep, fill in the missing coordinates from the conditional
/// normal identities, and assemble the row's contribution to the EM update.
pub fn estep_row(
    sigma: &CorrelationMatrix,
    prev: &LatentRowState,
    config: &EmConfig,
) -> Result<RowEstep> {
    let p = sigma.dim();
    if prev.constraints.len() != p {
        return Err(Error::InvalidArgument(
            "estep: state dimension does not match sigma".into(),
        ));
    }
    let mut state = prev.clone();
    let pattern = RowPattern::from_constraints(&prev.constraints);
    let mut ws = RowWorkspace::new(p);
    let ridge_events = estep_row_core(sigma.as_matrix(), &pattern, &mut state, config, &mut ws)?;
    let contribution = materialize_contribution(sigma.as_matrix(), &pattern, &state, &ws);
    Ok(RowEstep {
        state,
        contribution,
        ridge_events,
    })
}

/// The fitted copula: the correlation matrix plus the per-column marginal
/// transforms and the column schema they were fitted under.
#[derive(Debug, Clone)]
pub struct CopulaModel {
    pub sigma: CorrelationMatrix,
    pub marginals: Vec<MarginalModel>,
    pub kinds: Vec<VariableKind>,
    pub column_names: Vec<String>,
    pub labels: Vec<Option<Vec<f64>>>,
}

impl CopulaModel {
    pub fn dim(&self) -> usize {
        self.sigma.dim()
    }
}

#[derive(Debug, Clone, Default)]
pub struct FitDiagnostics {
    /// Ridged factorizations across all rows and iterations.
    pub ridge_events: u64,
    pub warnings: Vec<String>,
}

/// Result of [`fit`]: the model plus the iteration trace.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: CopulaModel,
    pub iterations: usize,
    /// Relative Frobenius change of sigma at each iteration.
    pub sigma_change_trace: Vec<f64>,
    pub converged: bool,
    pub diagnostics: FitDiagnostics,
}

/// Diagnostic: the exact average observed log-likelihood of `sigma` on
/// fully observed continuous data, (1/n) sum_i log phi(z^i; sigma) with
/// z^i the rank-transformed rows. Only defined where no latent integration
/// is needed, so it requires every column continuous and every cell
/// observed.
pub fn continuous_observed_loglik(
    data: &MixedDataMatrix,
    marginals: &[MarginalModel],
    sigma: &CorrelationMatrix,
) -> Result<f64> {
    let n = data.n_rows();
    let p = data.n_cols();
    if sigma.dim() != p || marginals.len() != p {
        return Err(Error::InvalidArgument(
            "log-likelihood: dimension mismatch".into(),
        ));
    }
    if data.kinds().iter().any(VariableKind::is_ordinal) || data.mask().iter().any(|m| !m) {
        return Err(Error::InvalidArgument(
            "the exact observed log-likelihood is only evaluated on fully observed continuous data"
                .into(),
        ));
    }
    let chol = nalgebra::Cholesky::new(sigma.as_matrix().clone()).ok_or_else(|| {
        Error::Numerical {
            iteration: 0,
            reason: "sigma is numerically singular".into(),
        }
    })?;
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let mut quad = 0.0;
    for i in 0..n {
        let z = DVector::from_iterator(
            p,
            (0..p).map(|j| match &marginals[j] {
                MarginalModel::Continuous(m) => m.to_latent(data.value(i, j)),
                MarginalModel::Ordinal(_) => unreachable!(),
            }),
        );
        quad += z.dot(&chol.solve(&z));
    }
    let const_term = p as f64 * (2.0 * std::f64::consts::PI).ln();
    Ok(-0.5 * (const_term + log_det + quad / n as f64))
}

/// Fit marginals for every column of `data` according to its kinds.
pub fn fit_marginals(data: &MixedDataMatrix) -> Result<Vec<MarginalModel>> {
    let mut out = Vec::with_capacity(data.n_cols());
    for j in 0..data.n_cols() {
        let observed = data.observed_column(j);
        let name = &data.column_names()[j];
        let m = match data.kinds()[j] {
            VariableKind::Continuous => MarginalModel::Continuous(
                ContinuousMarginal::fit(&observed).map_err(|e| e.with_column(name))?,
            ),
            VariableKind::Ordinal { levels } => {
                let as_levels: Vec<usize> = observed.iter().map(|&v| v as usize).collect();
                MarginalModel::Ordinal(
                    OrdinalMarginal::fit(&as_levels, levels).map_err(|e| e.with_column(name))?,
                )
            }
        };
        out.push(m);
    }
    Ok(out)
}

/// Fit the copula correlation to incomplete mixed data by the approximate
/// EM iteration, starting from the identity matrix. Deterministic for a
/// given data set and configuration, independent of the thread count.
pub fn fit(data: &MixedDataMatrix, config: &EmConfig) -> Result<FitResult> {
    let n = data.n_rows();
    let p = data.n_cols();
    if n == 0 || p == 0 {
        return Err(Error::InvalidArgument("fit: empty data".into()));
    }
    let marginals = fit_marginals(data)?;

    let mut diagnostics = FitDiagnostics::default();
    if n < p {
        diagnostics
            .warnings
            .push(format!("n = {n} < p = {p}: the correlation estimate may be unstable"));
    }

    let mask = data.mask();
    let values = data.values();
    let mut states: Vec<LatentRowState> = (0..n)
        .map(|i| {
            let row_vals: Vec<f64> = (0..p).map(|j| values[(i, j)]).collect();
            let row_mask: Vec<bool> = (0..p).map(|j| mask[(i, j)]).collect();
            LatentRowState::from_row(&row_vals, &row_mask, &marginals)
        })
        .collect::<Result<_>>()?;

    let patterns: Vec<RowPattern> = states
        .iter()
        .map(|st| RowPattern::from_constraints(&st.constraints))
        .collect();

    let pool = if config.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.threads)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };

    let mut sigma = CorrelationMatrix::identity(p);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for t in 1..=config.max_iter {
        iterations = t;
        let (g, ridge_events) = estep_all(&sigma, &patterns, &mut states, config, pool.as_ref())
            .map_err(|e| match e {
                Error::Numerical { reason, .. } => Error::Numerical {
                    iteration: t,
                    reason,
                },
                other => other,
            })?;
        diagnostics.ridge_events += ridge_events;
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical {
                iteration: t,
                reason: "non-finite entries in the EM update".into(),
            });
        }
        let next = project_elliptope(&g).map_err(|e| Error::Numerical {
            iteration: t,
            reason: e.to_string(),
        })?;
        let change = (next.as_matrix() - sigma.as_matrix()).norm() / sigma.as_matrix().norm();
        trace.push(change);
        sigma = next;
        if change < config.tol {
            converged = true;
            break;
        }
    }

    Ok(FitResult {
        model: CopulaModel {
            sigma,
            marginals,
            kinds: data.kinds().to_vec(),
            column_names: data.column_names().to_vec(),
            labels: data.labels().to_vec(),
        },
        iterations,
        sigma_change_trace: trace,
        converged,
        diagnostics,
    })
}

const BLOCK_ROWS: usize = 128;

/// Run the E-step over all rows, updating the states in place and averaging
/// the contributions. Rows are processed in fixed blocks and the partial
/// sums folded in block order, so the reduction is bitwise identical for
/// any thread count.
fn estep_all(
    sigma: &CorrelationMatrix,
    patterns: &[RowPattern],
    states: &mut [LatentRowState],
    config: &EmConfig,
    pool: Option<&rayon::ThreadPool>,
) -> Result<(DMatrix<f64>, u64)> {
    let p = sigma.dim();
    let n = states.len();
    let s = sigma.as_matrix();
    // per-block partial sums hold the upper triangle only; every row's
    // contribution is symmetric by construction, so mirroring once at the
    // end is exact
    let run_block =
        |(chunk, pats): (&mut [LatentRowState], &[RowPattern])| -> Result<(Vec<f64>, u64)> {
            let mut ws = RowWorkspace::new(p);
            let mut partial = vec![0.0; p * p];
            let mut ridge_events = 0;
            for (st, pattern) in chunk.iter_mut().zip(pats) {
                ridge_events += estep_row_core(s, pattern, st, config, &mut ws)?;
                accumulate_contribution_upper(&mut partial, s.as_slice(), p, pattern, st, &ws);
            }
            Ok((partial, ridge_events))
        };

    let results: Vec<Result<(Vec<f64>, u64)>> = match pool {
        Some(pool) => pool.install(|| {
            states
                .par_chunks_mut(BLOCK_ROWS)
                .zip(patterns.par_chunks(BLOCK_ROWS))
                .map(run_block)
                .collect()
        }),
        None => states
            .chunks_mut(BLOCK_ROWS)
            .zip(patterns.chunks(BLOCK_ROWS))
            .map(run_block)
            .collect(),
    };

    let mut upper = vec![0.0; p * p];
    let mut ridge_events = 0;
    for r in results {
        let (partial, events) = r?;
        for (a, b) in upper.iter_mut().zip(&partial) {
            *a += b;
        }
        ridge_events += events;
    }
    let mut g = DMatrix::zeros(p, p);
    for cj in 0..p {
        for rj in 0..=cj {
            let val = upper[cj * p + rj] / n as f64;
            g[(rj, cj)] = val;
            g[(cj, rj)] = val;
        }
    }
    Ok((g, ridge_events))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn corr2(rho: f64) -> CorrelationMatrix {
        CorrelationMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0])).unwrap()
    }

    #[test]
    fn projection_fixes_scaling() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 1.0]);
        let c = project_elliptope(&m).unwrap();
        assert_eq!(c.as_matrix(), &DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]));

        let id = project_elliptope(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(id.as_matrix(), &DMatrix::identity(3, 3));

        let d = project_elliptope(&DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 9.0])).unwrap();
        assert_eq!(d.as_matrix(), &DMatrix::identity(2, 2));

        assert!(project_elliptope(&DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0])).is_err());
    }

    #[test]
    fn correlation_matrix_validates_its_invariants() {
        assert!(CorrelationMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0])).is_err());
        assert!(CorrelationMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 0.9])).is_err());
        assert!(CorrelationMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 1.5, 1.5, 1.0])).is_err());
        assert!(CorrelationMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0])).is_ok());
    }

    #[test]
    fn hand_rolled_cholesky_matches_nalgebra() {
        let a = DMatrix::from_row_slice(
            3,
            3,
            &[4.0, 1.0, 0.5, 1.0, 3.0, -0.75, 0.5, -0.75, 2.0],
        );
        let mut flat: Vec<f64> = a.as_slice().to_vec();
        let mut inv_diag = vec![0.0; 3];
        assert!(chol_in_place(&mut flat, 3, &mut inv_diag));
        let reference = nalgebra::Cholesky::new(a.clone()).unwrap();
        for j in 0..3 {
            for i in j..3 {
                assert_relative_eq!(flat[j * 3 + i], reference.l()[(i, j)], max_relative = 1e-14);
            }
        }
        let b = [1.0, -2.0, 0.5];
        let mut x = b;
        chol_solve(&flat, &inv_diag, 3, &mut x);
        let want = reference.solve(&DVector::from_row_slice(&b));
        for i in 0..3 {
            assert_relative_eq!(x[i], want[i], max_relative = 1e-12);
        }
        // not positive definite
        let mut bad = vec![1.0, 2.0, 2.0, 1.0];
        assert!(!chol_in_place(&mut bad, 2, &mut inv_diag));
    }

    fn state_with(constraints: Vec<Constraint>) -> LatentRowState {
        let p = constraints.len();
        let mut mean = DVector::zeros(p);
        let mut var = DVector::zeros(p);
        for (j, c) in constraints.iter().enumerate() {
            match c {
                Constraint::ObservedContinuous(z) => mean[j] = *z,
                Constraint::ObservedOrdinal(iv) => {
                    let tm = univariate_moments(0.0, 1.0, iv.lower, iv.upper);
                    mean[j] = tm.mean;
                    var[j] = tm.variance;
                }
                Constraint::Missing => var[j] = 1.0,
            }
        }
        LatentRowState {
            mean,
            var_diag: var,
            constraints,
        }
    }

    #[test]
    fn fully_observed_continuous_row_contributes_its_outer_product() {
        let sigma = corr2(0.3);
        let st = state_with(vec![
            Constraint::ObservedContinuous(1.5),
            Constraint::ObservedContinuous(-0.5),
        ]);
        let out = estep_row(&sigma, &st, &EmConfig::default()).unwrap();
        let z = [1.5, -0.5];
        let expected = DMatrix::from_fn(2, 2, |i, j| z[i] * z[j]);
        assert_eq!(out.contribution, expected);
        assert_eq!(out.state.var_diag, DVector::zeros(2));
    }

    #[test]
    fn fully_missing_row_contributes_the_prior_moments() {
        let sigma = corr2(0.7);
        let st = state_with(vec![Constraint::Missing, Constraint::Missing]);
        let out = estep_row(&sigma, &st, &EmConfig::default()).unwrap();
        assert_eq!(&out.contribution, sigma.as_matrix());
        assert_eq!(out.state.mean, DVector::zeros(2));
    }

    #[test]
    fn independent_missing_dimension_has_prior_moments() {
        let sigma = CorrelationMatrix::identity(2);
        let st = state_with(vec![
            Constraint::ObservedContinuous(1.0),
            Constraint::Missing,
        ]);
        let out = estep_row(&sigma, &st, &EmConfig::default()).unwrap();
        assert_eq!(out.state.mean, DVector::from_vec(vec![1.0, 0.0]));
        assert_eq!(&out.contribution, &DMatrix::identity(2, 2));
    }

    #[test]
    fn correlated_missing_dimension_follows_the_regression() {
        let sigma = corr2(0.6);
        let st = state_with(vec![
            Constraint::ObservedContinuous(2.0),
            Constraint::Missing,
        ]);
        let out = estep_row(&sigma, &st, &EmConfig::default()).unwrap();
        // E[z2|z1=2] = 1.2, Var = 1 - 0.36 = 0.64
        assert_relative_eq!(out.state.mean[1], 1.2, max_relative = 1e-12);
        assert_relative_eq!(out.state.var_diag[1], 0.64, max_relative = 1e-12);
        // contribution(1,2) = Cov + mean1*mean2 = 0.6*0 ... = 2.0*1.2
        assert_relative_eq!(out.contribution[(0, 1)], 2.4, max_relative = 1e-12);
        assert_relative_eq!(out.contribution[(1, 1)], 0.64 + 1.44, max_relative = 1e-12);
    }

    /// With a single observed ordinal dimension the update is exact, so the
    /// whole contribution can be validated against Monte Carlo.
    #[test]
    fn estep_row_matches_monte_carlo_when_exact() {
        use rand::SeedableRng;
        let s = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.5, 0.3, 0.5, 1.0, -0.2, 0.3, -0.2, 1.0],
        );
        let sigma = CorrelationMatrix::new(s.clone()).unwrap();
        let iv = LatentInterval { lower: 0.25, upper: f64::INFINITY };
        let z0 = 0.8;
        let st = state_with(vec![
            Constraint::ObservedContinuous(z0),
            Constraint::ObservedOrdinal(iv),
            Constraint::Missing,
        ]);
        let out = estep_row(&sigma, &st, &EmConfig::default()).unwrap();

        // Monte Carlo: draw (z2, z3) | z1 = z0, keep z2 in the interval.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1234);
        let sub = DMatrix::from_row_slice(2, 2, &[1.0, -0.2, -0.2, 1.0]);
        let cross = DVector::from_vec(vec![0.5, 0.3]);
        let cond_mean = &cross * z0;
        let cond_cov = sub - &cross * cross.transpose();
        let chol = nalgebra::Cholesky::new(cond_cov).unwrap();
        let l = chol.l();
        let mut sum = DVector::zeros(3);
        let mut sum_outer = DMatrix::zeros(3, 3);
        let mut kept = 0u64;
        let total = 2_000_000;
        for _ in 0..total {
            let e = DVector::from_vec(vec![gauss(&mut rng), gauss(&mut rng)]);
            let zz = &cond_mean + &l * e;
            if iv.contains(zz[0]) {
                let full = DVector::from_vec(vec![z0, zz[0], zz[1]]);
                sum += &full;
                sum_outer += &full * full.transpose();
                kept += 1;
            }
        }
        let mc_mean = sum / kept as f64;
        let mc_outer = sum_outer / kept as f64;
        for j in 0..3 {
            assert_abs_diff_eq!(out.state.mean[j], mc_mean[j], epsilon = 5e-3);
            for i in 0..3 {
                assert_abs_diff_eq!(out.contribution[(i, j)], mc_outer[(i, j)], epsilon = 2e-2);
            }
        }
    }

    fn gauss<R: rand::Rng>(rng: &mut R) -> f64 {
        let u1: f64 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random::<f64>();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
