//! Dense primal-dual interior-point solver for small block semidefinite programs.
//!
//! Problems are stored in the SDPA "dual" form extended with linear equalities:
//!
//! ```text
//!   minimize    c' y
//!   subject to  Q_b' (sum_k y_k A_kb - C_b) Q_b  psd   for every block b
//!               E y = f
//! ```
//!
//! `Q_b` is an optional face basis (columns orthonormal) restricting block
//! `b` to a subspace; without it the block is taken as is. The equalities are
//! eliminated up front through an orthonormal nullspace parametrization
//! `y = y_p + N z`, and the resulting pure LMI is solved with the HKM search
//! direction and a Mehrotra predictor-corrector.
//!
//! # Text format
//!
//! [`SdpProblem::to_text`] / [`SdpProblem::from_text`] use sparse SDPA with
//! two optional trailing sections. Lines starting with `*` or `#` are comments.
//!
//! ```text
//! <m>                          number of variables y_1..y_m
//! <nblocks>
//! <size_1> ... <size_nb>
//! <c_1> ... <c_m>
//! <k> <b> <i> <j> <value>      entry (i,j), i <= j, of A_kb; k = 0 is C_b (all 1-based)
//! ...
//! equalities <p>
//! <row> <k> <value>            coefficient of y_k in equality row; k = 0 is the rhs
//! ...
//! face <b> <rows> <cols>
//! <cols values>                one line per row of Q_b
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One entry `(var, row, col, value)` of a block coefficient matrix with
/// `row <= col`; the mirrored entry is implied.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockEntry {
    pub var: usize,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdpBlock {
    pub size: usize,
    pub entries: Vec<BlockEntry>,
    /// Upper-triangle entries `(row, col, value)` of the constant `C_b`.
    pub constant: Vec<(usize, usize, f64)>,
    pub face: Option<DMatrix<f64>>,
}

impl SdpBlock {
    pub fn new(size: usize) -> Self {
        SdpBlock {
            size,
            entries: Vec::new(),
            constant: Vec::new(),
            face: None,
        }
    }

    /// Dimension of the (possibly face-reduced) PSD constraint.
    pub fn reduced_size(&self) -> usize {
        self.face.as_ref().map_or(self.size, |q| q.ncols())
    }

    /// `sum_k y_k A_k - C` at full size.
    pub fn assemble(&self, y: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.size, self.size);
        for e in &self.entries {
            let v = e.value * y[e.var];
            m[(e.row, e.col)] += v;
            if e.row != e.col {
                m[(e.col, e.row)] += v;
            }
        }
        for &(i, j, v) in &self.constant {
            m[(i, j)] -= v;
            if i != j {
                m[(j, i)] -= v;
            }
        }
        m
    }

    fn reduce(&self, full: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.face {
            Some(q) => q.transpose() * full * q,
            None => full.clone(),
        }
    }

    fn lift(&self, small: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.face {
            Some(q) => q * small * q.transpose(),
            None => small.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearEquality {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdpProblem {
    pub num_vars: usize,
    pub objective: Vec<f64>,
    pub blocks: Vec<SdpBlock>,
    pub equalities: Vec<LinearEquality>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub primal_obj: f64,
    pub dual_obj: f64,
    /// The variables `y` (moments, for relaxations).
    pub moment_values: Vec<f64>,
    /// `sum_k y_k A_kb - C_b` per block, full size.
    pub block_matrices: Vec<DMatrix<f64>>,
    /// Dual matrices lifted to full block size.
    pub dual_blocks: Vec<DMatrix<f64>>,
    pub residuals: Residuals,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SdpOptions {
    /// Feasibility and gap tolerance for the stopping test.
    pub tol: f64,
    /// Looser tolerance a stalled run must still meet to count as optimal.
    pub report_tol: f64,
    pub max_iters: usize,
}

impl Default for SdpOptions {
    fn default() -> Self {
        SdpOptions {
            tol: 1e-8,
            report_tol: 1e-6,
            max_iters: 200,
        }
    }
}

impl SdpOptions {
    /// Defaults, with the tolerance overridable through `INNERCONVEX_SDP_TOL`.
    pub fn from_env() -> Self {
        let mut o = Self::default();
        if let Some(t) = std::env::var("INNERCONVEX_SDP_TOL")
            .ok()
            .and_then(|s| s.parse::<f64>().ok())
        {
            if t > 0.0 {
                o.tol = t;
                o.report_tol = o.report_tol.max(10.0 * t);
            }
        }
        o
    }
}

impl SdpProblem {
    pub fn validate(&self) -> Result<()> {
        if self.objective.len() != self.num_vars {
            return Err(Error::DimensionMismatch {
                expected: self.num_vars,
                got: self.objective.len(),
            });
        }
        for b in &self.blocks {
            for e in &b.entries {
                if e.var >= self.num_vars || e.row > e.col || e.col >= b.size {
                    return Err(Error::InvalidArgument(format!("bad block entry {e:?}")));
                }
            }
            if let Some(q) = &b.face {
                if q.nrows() != b.size {
                    return Err(Error::DimensionMismatch {
                        expected: b.size,
                        got: q.nrows(),
                    });
                }
            }
        }
        for eq in &self.equalities {
            if eq.coeffs.iter().any(|&(k, _)| k >= self.num_vars) {
                return Err(Error::InvalidArgument("equality references unknown variable".into()));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("* innerconvex sparse SDP\n");
        s.push_str(&format!("{}\n{}\n", self.num_vars, self.blocks.len()));
        let sizes: Vec<String> = self.blocks.iter().map(|b| b.size.to_string()).collect();
        s.push_str(&sizes.join(" "));
        s.push('\n');
        let c: Vec<String> = self.objective.iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&c.join(" "));
        s.push('\n');
        for (bi, b) in self.blocks.iter().enumerate() {
            for &(i, j, v) in &b.constant {
                s.push_str(&format!("0 {} {} {} {:e}\n", bi + 1, i + 1, j + 1, v));
            }
            for e in &b.entries {
                s.push_str(&format!(
                    "{} {} {} {} {:e}\n",
                    e.var + 1,
                    bi + 1,
                    e.row + 1,
                    e.col + 1,
                    e.value
                ));
            }
        }
        if !self.equalities.is_empty() {
            s.push_str(&format!("equalities {}\n", self.equalities.len()));
            for (r, eq) in self.equalities.iter().enumerate() {
                for &(k, v) in &eq.coeffs {
                    s.push_str(&format!("{} {} {:e}\n", r + 1, k + 1, v));
                }
                s.push_str(&format!("{} 0 {:e}\n", r + 1, eq.rhs));
            }
        }
        for (bi, b) in self.blocks.iter().enumerate() {
            if let Some(q) = &b.face {
                s.push_str(&format!("face {} {} {}\n", bi + 1, q.nrows(), q.ncols()));
                for i in 0..q.nrows() {
                    let row: Vec<String> = (0..q.ncols()).map(|j| format!("{:e}", q[(i, j)])).collect();
                    s.push_str(&row.join(" "));
                    s.push('\n');
                }
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('*') && !l.starts_with('#'))
            .peekable();
        let perr = |m: &str| Error::Parse(m.to_string());
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Parse(format!("bad number '{s}'")));
        let idx = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse(format!("bad index '{s}'")));

        let m = idx(lines.next().ok_or_else(|| perr("missing variable count"))?)?;
        let nb = idx(lines.next().ok_or_else(|| perr("missing block count"))?)?;
        let sizes: Vec<usize> = lines
            .next()
            .ok_or_else(|| perr("missing block sizes"))?
            .split_whitespace()
            .map(idx)
            .collect::<Result<_>>()?;
        if sizes.len() != nb {
            return Err(perr("block size count mismatch"));
        }
        let mut objective: Vec<f64> = Vec::with_capacity(m);
        while objective.len() < m {
            let l = lines.next().ok_or_else(|| perr("missing objective"))?;
            for t in l.split_whitespace() {
                objective.push(num(t)?);
            }
        }
        if objective.len() != m {
            return Err(perr("objective length mismatch"));
        }
        let mut blocks: Vec<SdpBlock> = sizes.iter().map(|&s| SdpBlock::new(s)).collect();
        let mut equalities: Vec<LinearEquality> = Vec::new();
        enum Section {
            Entries,
            Equalities,
        }
        let mut section = Section::Entries;
        while let Some(l) = lines.next() {
            let t: Vec<&str> = l.split_whitespace().collect();
            match t[0] {
                "equalities" => {
                    let p = idx(t.get(1).ok_or_else(|| perr("equalities count"))?)?;
                    equalities = (0..p)
                        .map(|_| LinearEquality {
                            coeffs: Vec::new(),
                            rhs: 0.0,
                        })
                        .collect();
                    section = Section::Equalities;
                }
                "face" => {
                    if t.len() != 4 {
                        return Err(perr("face header needs block rows cols"));
                    }
                    let (b, r, c) = (idx(t[1])?, idx(t[2])?, idx(t[3])?);
                    if b == 0 || b > nb {
                        return Err(perr("face block out of range"));
                    }
                    let mut q = DMatrix::zeros(r, c);
                    for i in 0..r {
                        let row = lines.next().ok_or_else(|| perr("truncated face"))?;
                        let vals: Vec<f64> = row.split_whitespace().map(num).collect::<Result<_>>()?;
                        if vals.len() != c {
                            return Err(perr("face row length"));
                        }
                        for (j, v) in vals.into_iter().enumerate() {
                            q[(i, j)] = v;
                        }
                    }
                    blocks[b - 1].face = Some(q);
                }
                _ => match section {
                    Section::Entries => {
                        if t.len() != 5 {
                            return Err(perr("entry lines need 5 fields"));
                        }
                        let (k, b, i, j) = (idx(t[0])?, idx(t[1])?, idx(t[2])?, idx(t[3])?);
                        let v = num(t[4])?;
                        if b == 0 || b > nb || i == 0 || j == 0 {
                            return Err(perr("entry index out of range"));
                        }
                        let (i, j) = if i <= j { (i - 1, j - 1) } else { (j - 1, i - 1) };
                        if k == 0 {
                            blocks[b - 1].constant.push((i, j, v));
                        } else {
                            blocks[b - 1].entries.push(BlockEntry {
                                var: k - 1,
                                row: i,
                                col: j,
                                value: v,
                            });
                        }
                    }
                    Section::Equalities => {
                        if t.len() != 3 {
                            return Err(perr("equality lines need 3 fields"));
                        }
                        let (r, k, v) = (idx(t[0])?, idx(t[1])?, num(t[2])?);
                        let row = equalities
                            .get_mut(r.wrapping_sub(1))
                            .ok_or_else(|| perr("equality row out of range"))?;
                        if k == 0 {
                            row.rhs = v;
                        } else {
                            row.coeffs.push((k - 1, v));
                        }
                    }
                },
            }
        }
        let p = SdpProblem {
            num_vars: m,
            objective,
            blocks,
            equalities,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Per-block variable lists: `entries[k]` holds the `(row, col, value)` of A_k.
struct BlockIndex {
    vars: Vec<usize>,
    per_var: Vec<Vec<(usize, usize, f64)>>,
}

impl BlockIndex {
    fn new(block: &SdpBlock) -> Self {
        let mut map: std::collections::BTreeMap<usize, Vec<(usize, usize, f64)>> = Default::default();
        for e in &block.entries {
            map.entry(e.var).or_default().push((e.row, e.col, e.value));
        }
        let (vars, per_var) = map.into_iter().unzip();
        BlockIndex { vars, per_var }
    }
}

/// Eliminated equality structure: `y = y_p + N z`.
struct Elimination {
    y_p: DVector<f64>,
    null: Option<DMatrix<f64>>,
}

impl Elimination {
    fn dim(&self) -> usize {
        self.null.as_ref().map_or(self.y_p.len(), |n| n.ncols())
    }

    fn expand(&self, z: &DVector<f64>) -> DVector<f64> {
        match &self.null {
            Some(n) => &self.y_p + n * z,
            None => &self.y_p + z,
        }
    }

    fn expand_dir(&self, dz: &DVector<f64>) -> DVector<f64> {
        match &self.null {
            Some(n) => n * dz,
            None => dz.clone(),
        }
    }

    fn project(&self, g: &DVector<f64>) -> DVector<f64> {
        match &self.null {
            Some(n) => n.tr_mul(g),
            None => g.clone(),
        }
    }
}

/// Returns `None` if the equalities are inconsistent.
fn eliminate(prob: &SdpProblem) -> Option<Elimination> {
    let m = prob.num_vars;
    let p = prob.equalities.len();
    if p == 0 {
        return Some(Elimination {
            y_p: DVector::zeros(m),
            null: None,
        });
    }
    // E' is m x p; its thin SVD spans the row space of E
    let mut et = DMatrix::zeros(m, p);
    let mut f = DVector::zeros(p);
    for (r, eq) in prob.equalities.iter().enumerate() {
        for &(k, v) in &eq.coeffs {
            et[(k, r)] += v;
        }
        f[r] = eq.rhs;
    }
    let svd = et.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v requested");
    let smax: f64 = svd.singular_values.max();
    let rank_tol = 1e-10 * smax.max(1e-300);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > rank_tol)
        .collect();
    let r = keep.len();
    // y_p = U S^-1 V' f
    let mut y_p = DVector::zeros(m);
    for &i in &keep {
        let coef = vt.row(i).dot(&f.transpose()) / svd.singular_values[i];
        y_p += u.column(i) * coef;
    }
    let resid = (et.tr_mul(&y_p) - &f).amax();
    if resid > 1e-8 * (1.0 + f.amax()) {
        return None;
    }
    let ur = DMatrix::from_columns(&keep.iter().map(|&i| u.column(i)).collect::<Vec<_>>());
    // complement of the row space: trailing columns of the full Q of U_r
    let null = if r == 0 {
        DMatrix::identity(m, m)
    } else if r >= m {
        DMatrix::zeros(m, 0)
    } else {
        let qr = ur.qr();
        let mut qt = DMatrix::identity(m, m);
        qr.q_tr_mul(&mut qt);
        qt.rows(r, m - r).transpose()
    };
    Some(Elimination { y_p, null: Some(null) })
}

fn frob_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn inverse_spd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let c = m.clone().cholesky()?;
    Some(c.inverse())
}

/// Largest `alpha` with `m + alpha * d` psd, given `m` positive definite.
fn max_step(m: &DMatrix<f64>, d: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return f64::INFINITY;
    }
    let Some(c) = m.clone().cholesky() else {
        return 0.0;
    };
    let l = c.l();
    // L^-1 d L^-T
    let Some(li) = l.clone().try_inverse() else {
        return 0.0;
    };
    let mut w = &li * d * li.transpose();
    symmetrize(&mut w);
    let lmin = w.symmetric_eigenvalues().min();
    if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

struct Workspace<'a> {
    prob: &'a SdpProblem,
    elim: Elimination,
    index: Vec<BlockIndex>,
    /// Scaled reduced objective.
    c_red: DVector<f64>,
}

impl<'a> Workspace<'a> {
    fn blocks_at(&self, y: &DVector<f64>) -> Vec<DMatrix<f64>> {
        self.prob
            .blocks
            .iter()
            .map(|b| b.reduce(&b.assemble(y.as_slice())))
            .collect()
    }

    /// Linear part only: `sum_k dy_k A_k` reduced.
    fn blocks_lin(&self, dy: &DVector<f64>) -> Vec<DMatrix<f64>> {
        self.prob
            .blocks
            .iter()
            .map(|b| {
                let mut m = DMatrix::zeros(b.size, b.size);
                for e in &b.entries {
                    let v = e.value * dy[e.var];
                    m[(e.row, e.col)] += v;
                    if e.row != e.col {
                        m[(e.col, e.row)] += v;
                    }
                }
                b.reduce(&m)
            })
            .collect()
    }

    /// Adjoint in reduced coordinates: `N' A*(Q X Q')`.
    fn adjoint(&self, xs: &[DMatrix<f64>]) -> DVector<f64> {
        let mut g = DVector::zeros(self.prob.num_vars);
        for (b, x) in self.prob.blocks.iter().zip(xs) {
            let xf = b.lift(x);
            for e in &b.entries {
                let v = if e.row == e.col {
                    xf[(e.row, e.col)]
                } else {
                    xf[(e.row, e.col)] + xf[(e.col, e.row)]
                };
                g[e.var] += e.value * v;
            }
        }
        self.elim.project(&g)
    }

    /// Schur complement `B_ij = <F_i, X F_j S^-1>` in reduced coordinates.
    fn schur(&self, xs: &[DMatrix<f64>], sinv: &[DMatrix<f64>]) -> DMatrix<f64> {
        let m = self.prob.num_vars;
        let mut full = DMatrix::zeros(m, m);
        for ((b, idx), (x, si)) in self.prob.blocks.iter().zip(&self.index).zip(xs.iter().zip(sinv)) {
            let xb = b.lift(x);
            let sb = b.lift(si);
            let n = b.size;
            let mut t = DMatrix::zeros(n, n);
            for (ki, &k) in idx.vars.iter().enumerate() {
                t.fill(0.0);
                for &(a, c, v) in &idx.per_var[ki] {
                    t.ger(v, &sb.column(a), &xb.column(c), 1.0);
                    if a != c {
                        t.ger(v, &sb.column(c), &xb.column(a), 1.0);
                    }
                }
                for (li, &l) in idx.vars.iter().enumerate() {
                    let mut acc = 0.0;
                    for &(d, e, w) in &idx.per_var[li] {
                        acc += if d == e { w * t[(e, d)] } else { w * (t[(e, d)] + t[(d, e)]) };
                    }
                    full[(k, l)] += acc;
                }
            }
        }
        let mut b = match &self.elim.null {
            Some(nm) => nm.tr_mul(&(&full * nm)),
            None => full,
        };
        symmetrize(&mut b);
        b
    }
}

struct LinSolver {
    b: DMatrix<f64>,
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl LinSolver {
    fn new(b: DMatrix<f64>) -> Self {
        let n = b.nrows();
        let maxd = (0..n).map(|i| b[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
        for reg in [0.0, 1e-14, 1e-12, 1e-10] {
            let mut br = b.clone();
            for i in 0..n {
                br[(i, i)] += reg * maxd;
            }
            if let Some(c) = br.cholesky() {
                return LinSolver {
                    b,
                    chol: Some(c),
                    lu: None,
                };
            }
        }
        let lu = b.clone().lu();
        LinSolver {
            b,
            chol: None,
            lu: Some(lu),
        }
    }

    fn raw_solve(&self, r: &DVector<f64>) -> Option<DVector<f64>> {
        if let Some(c) = &self.chol {
            return Some(c.solve(r));
        }
        self.lu.as_ref().and_then(|lu| lu.solve(r))
    }

    /// Solve with a few steps of iterative refinement against the exact matrix.
    fn solve(&self, r: &DVector<f64>) -> Option<DVector<f64>> {
        let mut x = self.raw_solve(r)?;
        let mut res = r - &self.b * &x;
        let mut rn = res.amax();
        for _ in 0..3 {
            if rn <= 1e-15 * r.amax() {
                break;
            }
            let cand = &x + self.raw_solve(&res)?;
            let cres = r - &self.b * &cand;
            let cn = cres.amax();
            if !(cn < rn) {
                break;
            }
            x = cand;
            res = cres;
            rn = cn;
        }
        Some(x)
    }
}

/// Solve a block SDP. Never panics on numerical trouble; failures are reported
/// through [`SdpStatus::NumericalFailure`].
pub fn solve_sdp(prob: &SdpProblem, opts: &SdpOptions) -> SdpSolution {
    let m = prob.num_vars;
    let fail = |status: SdpStatus| SdpSolution {
        status,
        primal_obj: f64::NAN,
        dual_obj: f64::NAN,
        moment_values: vec![0.0; m],
        block_matrices: Vec::new(),
        dual_blocks: Vec::new(),
        residuals: Residuals::default(),
        iterations: 0,
    };
    if prob.validate().is_err() {
        return fail(SdpStatus::NumericalFailure);
    }
    let Some(elim) = eliminate(prob) else {
        let mut s = fail(SdpStatus::Infeasible);
        s.dual_obj = f64::INFINITY;
        return s;
    };
    let c = DVector::from_column_slice(&prob.objective);
    let c_red_raw = elim.project(&c);
    let c_norm = c_red_raw.amax();
    let c_scale = if c_norm > 0.0 { 1.0 / c_norm } else { 1.0 };
    let ws = Workspace {
        prob,
        index: prob.blocks.iter().map(BlockIndex::new).collect(),
        c_red: &c_red_raw * c_scale,
        elim,
    };
    let obj_const = c.dot(&ws.elim.y_p) * c_scale;
    let mdim = ws.elim.dim();
    let sizes: Vec<usize> = prob.blocks.iter().map(SdpBlock::reduced_size).collect();
    let ntot: usize = sizes.iter().sum();

    let f0 = ws.blocks_at(&ws.elim.y_p);
    let f0_norm = f0.iter().map(|b| b.norm_squared()).sum::<f64>().sqrt();

    if ntot == 0 {
        // no conic constraints: bounded only if the reduced objective vanishes
        let y = ws.elim.y_p.clone();
        let status = if ws.c_red.amax() > 0.0 {
            SdpStatus::Unbounded
        } else {
            SdpStatus::Optimal
        };
        let obj = obj_const / c_scale;
        return SdpSolution {
            status,
            primal_obj: obj,
            dual_obj: obj,
            block_matrices: prob.blocks.iter().map(|b| b.assemble(y.as_slice())).collect(),
            dual_blocks: prob.blocks.iter().map(|b| DMatrix::zeros(b.size, b.size)).collect(),
            moment_values: y.iter().copied().collect(),
            residuals: Residuals::default(),
            iterations: 0,
        };
    }

    let scale0 = 1.0 + f0_norm.max(1.0).sqrt();
    let mut z = DVector::zeros(mdim);
    let mut s: Vec<DMatrix<f64>> = sizes.iter().map(|&n| DMatrix::identity(n, n) * scale0).collect();
    let mut x: Vec<DMatrix<f64>> = sizes.iter().map(|&n| DMatrix::identity(n, n) * scale0).collect();

    // Gram matrix of the constraint map, for restoring dual feasibility
    let eye: Vec<DMatrix<f64>> = sizes.iter().map(|&n| DMatrix::identity(n, n)).collect();
    let gram = LinSolver::new(ws.schur(&eye, &eye));

    let mut status = SdpStatus::NumericalFailure;
    let mut best: Option<(f64, DVector<f64>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>, Residuals)> = None;
    let mut iters = 0;
    let mut stall = 0;
    let mut last_progress = 0;
    let mut progress_ref = f64::INFINITY;

    for it in 0..opts.max_iters {
        iters = it + 1;
        let y = ws.elim.expand(&z);
        let fz = ws.blocks_at(&y);
        let rp: Vec<DMatrix<f64>> = fz.iter().zip(&s).map(|(f, s)| f - s).collect();
        let fx = ws.adjoint(&x);
        let rd = &ws.c_red - &fx;
        let xs_dot: f64 = x.iter().zip(&s).map(|(a, b)| frob_dot(a, b)).sum();
        let mu = xs_dot / ntot as f64;

        let pobj = obj_const + ws.c_red.dot(&z);
        let f0x: f64 = f0.iter().zip(&x).map(|(a, b)| frob_dot(a, b)).sum();
        let dobj = obj_const - f0x;
        let pinf = rp.iter().map(|r| r.norm_squared()).sum::<f64>().sqrt() / (1.0 + f0_norm);
        let dinf = rd.norm() / (1.0 + ws.c_red.norm());
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        let res = Residuals {
            primal: pinf,
            dual: dinf,
            gap,
        };
        log::trace!("it {it}: pobj {pobj:.10e} dobj {dobj:.10e} pinf {pinf:.2e} dinf {dinf:.2e} gap {gap:.2e} mu {mu:.2e}");

        let merit = pinf.max(dinf).max(gap);
        if merit < 0.5 * progress_ref {
            progress_ref = merit;
            last_progress = it;
        }
        if best.as_ref().is_none_or(|b| merit < b.0) {
            best = Some((merit, z.clone(), s.clone(), x.clone(), res));
        }
        if it - last_progress > 15 {
            log::debug!("sdp stalled at merit {merit:.2e}");
            break;
        }
        if pinf <= opts.tol && dinf <= opts.tol && gap <= opts.tol {
            status = SdpStatus::Optimal;
            break;
        }
        // improving ray of the dual: the LMI is infeasible
        let ray = -f0x;
        if ray > 0.0 && fx.norm() <= 1e-8 * ray && ray > 1.0 / opts.tol.max(1e-12) * 1e-2 {
            status = SdpStatus::Infeasible;
            break;
        }
        if ray > 1.0 / opts.tol.max(1e-12) && pinf > 1e3 * opts.tol {
            status = SdpStatus::Infeasible;
            break;
        }
        if -pobj > 1.0 / opts.tol.max(1e-12) && pinf < 1e-6 {
            status = SdpStatus::Unbounded;
            break;
        }

        let sinv: Option<Vec<DMatrix<f64>>> = s.iter().map(inverse_spd).collect();
        let Some(sinv) = sinv else {
            break;
        };
        let bmat = ws.schur(&x, &sinv);
        let lin = LinSolver::new(bmat);

        // B dz = F*(sigma mu S^-1 - X - corr - X Rp S^-1) - rd
        let direction = |sigma: f64, corr: Option<&[DMatrix<f64>]>| -> Option<(DVector<f64>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
            let mut tmat: Vec<DMatrix<f64>> = Vec::with_capacity(x.len());
            for i in 0..x.len() {
                let mut t = &sinv[i] * (sigma * mu) - &x[i];
                if let Some(c) = corr {
                    t -= &c[i];
                }
                tmat.push(t);
            }
            let sym: Vec<DMatrix<f64>> = tmat
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let mut u = t - &x[i] * &rp[i] * &sinv[i];
                    symmetrize(&mut u);
                    u
                })
                .collect();
            let rhs = ws.adjoint(&sym) - &rd;
            let dz = lin.solve(&rhs)?;
            if dz.iter().any(|v| !v.is_finite()) {
                return None;
            }
            let dy = ws.elim.expand_dir(&dz);
            let flin = ws.blocks_lin(&dy);
            let ds: Vec<DMatrix<f64>> = rp.iter().zip(&flin).map(|(r, f)| r + f).collect();
            let dx: Vec<DMatrix<f64>> = (0..x.len())
                .map(|i| {
                    let mut d = &tmat[i] - &x[i] * &ds[i] * &sinv[i];
                    symmetrize(&mut d);
                    d
                })
                .collect();
            Some((dz, ds, dx))
        };

        let Some((_, ds_a, dx_a)) = direction(0.0, None) else {
            break;
        };
        let step = |mats: &[DMatrix<f64>], dirs: &[DMatrix<f64>]| -> f64 {
            mats.iter().zip(dirs).map(|(a, d)| max_step(a, d)).fold(f64::INFINITY, f64::min)
        };
        let ap = step(&s, &ds_a).min(1.0);
        let ad = step(&x, &dx_a).min(1.0);
        let mu_aff: f64 = (0..x.len())
            .map(|i| frob_dot(&(&x[i] + &dx_a[i] * ad), &(&s[i] + &ds_a[i] * ap)))
            .sum::<f64>()
            / ntot as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
        let corr: Vec<DMatrix<f64>> = (0..x.len()).map(|i| &dx_a[i] * &ds_a[i] * &sinv[i]).collect();
        let Some((dz, ds, dx)) = direction(sigma, Some(&corr)) else {
            break;
        };
        let gamma = 0.95;
        let ap = (gamma * step(&s, &ds)).min(1.0);
        let ad = (gamma * step(&x, &dx)).min(1.0);
        if ap < 1e-10 && ad < 1e-10 {
            stall += 1;
            if stall > 3 {
                break;
            }
        } else {
            stall = 0;
        }
        z += &dz * ap;
        for i in 0..x.len() {
            s[i] += &ds[i] * ap;
            x[i] += &dx[i] * ad;
            symmetrize(&mut s[i]);
            symmetrize(&mut x[i]);
        }
        // the Schur solve loses accuracy as mu shrinks; push X back onto A*(X) = c
        let rd_new = &ws.c_red - ws.adjoint(&x);
        if rd_new.norm() > 0.1 * opts.tol * (1.0 + ws.c_red.norm()) {
            if let Some(w) = gram.solve(&rd_new) {
                let dxc = ws.blocks_lin(&ws.elim.expand_dir(&w));
                // only when it leaves X well inside the cone, to keep the iterates centered
                let room = x.iter().zip(&dxc).map(|(a, d)| max_step(a, d)).fold(f64::INFINITY, f64::min);
                if room >= 2.0 {
                    for (a, d) in x.iter_mut().zip(&dxc) {
                        *a += d;
                    }
                }
            }
        }
    }

    let (zf, sf, xf, resf) = if status == SdpStatus::Optimal || status == SdpStatus::Infeasible || status == SdpStatus::Unbounded {
        let y = ws.elim.expand(&z);
        let fz = ws.blocks_at(&y);
        let rp: f64 = fz.iter().zip(&s).map(|(f, s)| (f - s).norm_squared()).sum::<f64>().sqrt() / (1.0 + f0_norm);
        let rd = (&ws.c_red - ws.adjoint(&x)).norm() / (1.0 + ws.c_red.norm());
        let pobj = obj_const + ws.c_red.dot(&z);
        let f0x: f64 = f0.iter().zip(&x).map(|(a, b)| frob_dot(a, b)).sum();
        let dobj = obj_const - f0x;
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        (z, s, x, Residuals { primal: rp, dual: rd, gap })
    } else {
        let (_, z, s, x, r) = best.expect("at least one iterate");
        if r.primal <= opts.report_tol && r.dual <= opts.report_tol && r.gap <= opts.report_tol {
            status = SdpStatus::Optimal;
        }
        (z, s, x, r)
    };
    let _ = sf;
    let y = ws.elim.expand(&zf);
    let pobj = (obj_const + ws.c_red.dot(&zf)) / c_scale;
    let f0x: f64 = f0.iter().zip(&xf).map(|(a, b)| frob_dot(a, b)).sum();
    let dobj = (obj_const - f0x) / c_scale;
    let (pobj, dobj) = match status {
        SdpStatus::Infeasible => (f64::INFINITY, f64::INFINITY),
        SdpStatus::Unbounded => (f64::NEG_INFINITY, f64::NEG_INFINITY),
        _ => (pobj, dobj),
    };
    SdpSolution {
        status,
        primal_obj: pobj,
        dual_obj: dobj,
        block_matrices: prob.blocks.iter().map(|b| b.assemble(y.as_slice())).collect(),
        dual_blocks: prob
            .blocks
            .iter()
            .zip(&xf)
            .map(|(b, xb)| b.lift(xb) / c_scale)
            .collect(),
        moment_values: y.iter().copied().collect(),
        residuals: resf,
        iterations: iters,
    }
}

/// KKT residuals recomputed from the problem data and a returned solution,
/// independent of the solver's internal state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KktReport {
    /// `max |E y - f|`.
    pub equality: f64,
    /// Most negative eigenvalue over the (face-reduced) blocks at `y`.
    pub primal_psd: f64,
    /// Most negative eigenvalue of the dual blocks.
    pub dual_psd: f64,
    /// `min_lambda |c - A*(X) - E' lambda|_inf`.
    pub stationarity: f64,
    /// `sum_b <F_b(y), X_b>`.
    pub complementarity: f64,
}

pub fn kkt_report(prob: &SdpProblem, sol: &SdpSolution) -> KktReport {
    let y = &sol.moment_values;
    let equality = prob
        .equalities
        .iter()
        .map(|eq| (eq.coeffs.iter().map(|&(k, v)| v * y[k]).sum::<f64>() - eq.rhs).abs())
        .fold(0.0, f64::max);
    let mut primal_psd = f64::INFINITY;
    let mut dual_psd = f64::INFINITY;
    let mut complementarity = 0.0;
    let mut g = DVector::zeros(prob.num_vars);
    for (bi, b) in prob.blocks.iter().enumerate() {
        let f = b.assemble(y);
        let fr = b.reduce(&f);
        if fr.nrows() > 0 {
            primal_psd = primal_psd.min(fr.symmetric_eigenvalues().min());
        }
        let x = &sol.dual_blocks[bi];
        let xr = b.reduce(x);
        if xr.nrows() > 0 {
            dual_psd = dual_psd.min(xr.symmetric_eigenvalues().min());
        }
        complementarity += frob_dot(&f, x);
        for e in &b.entries {
            let v = if e.row == e.col {
                x[(e.row, e.col)]
            } else {
                x[(e.row, e.col)] + x[(e.col, e.row)]
            };
            g[e.var] += e.value * v;
        }
    }
    let c = DVector::from_column_slice(&prob.objective);
    let r = c - g;
    let stationarity = if prob.equalities.is_empty() {
        r.amax()
    } else {
        let mut et = DMatrix::zeros(prob.num_vars, prob.equalities.len());
        for (row, eq) in prob.equalities.iter().enumerate() {
            for &(k, v) in &eq.coeffs {
                et[(k, row)] += v;
            }
        }
        let svd = et.clone().svd(true, true);
        let smax: f64 = svd.singular_values.max();
        let lambda: DVector<f64> = svd
            .solve(&r, 1e-10 * smax)
            .unwrap_or_else(|_| DVector::zeros(prob.equalities.len()));
        let resid: DVector<f64> = &r - &et * &lambda;
        resid.amax()
    };
    KktReport {
        equality,
        primal_psd: if primal_psd.is_finite() { primal_psd } else { 0.0 },
        dual_psd: if dual_psd.is_finite() { dual_psd } else { 0.0 },
        stationarity,
        complementarity,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_by_one() -> SdpProblem {
        // min m s.t. [m] psd
        let mut b = SdpBlock::new(1);
        b.entries.push(BlockEntry {
            var: 0,
            row: 0,
            col: 0,
            value: 1.0,
        });
        SdpProblem {
            num_vars: 1,
            objective: vec![1.0],
            blocks: vec![b],
            equalities: vec![],
        }
    }

    /// min y2 s.t. [[1, y1], [y1, y2]] psd, y0 = 1 (moment form of min x^2)
    fn min_x_squared() -> SdpProblem {
        let mut b = SdpBlock::new(2);
        let e = |var, row, col| BlockEntry {
            var,
            row,
            col,
            value: 1.0,
        };
        b.entries.extend([e(0, 0, 0), e(1, 0, 1), e(2, 1, 1)]);
        SdpProblem {
            num_vars: 3,
            objective: vec![0.0, 0.0, 1.0],
            blocks: vec![b],
            equalities: vec![LinearEquality {
                coeffs: vec![(0, 1.0)],
                rhs: 1.0,
            }],
        }
    }

    #[test]
    fn trivial_one_by_one() {
        let sol = solve_sdp(&one_by_one(), &SdpOptions::default());
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!(sol.primal_obj.abs() < 1e-7);
    }

    #[test]
    fn min_x_squared_moments() {
        let sol = solve_sdp(&min_x_squared(), &SdpOptions::default());
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!(sol.primal_obj.abs() < 1e-7, "{}", sol.primal_obj);
        assert!((sol.moment_values[0] - 1.0).abs() < 1e-9);
        assert!(sol.moment_values[1].abs() < 1e-4);
        assert!(sol.moment_values[2].abs() < 1e-7);
    }

    #[test]
    fn known_optimum_two_by_two() {
        // min -y s.t. [[1, y], [y, 1]] psd  ->  y = 1, optimum -1
        let mut b = SdpBlock::new(2);
        b.entries.push(BlockEntry {
            var: 0,
            row: 0,
            col: 1,
            value: 1.0,
        });
        b.constant.push((0, 0, -1.0));
        b.constant.push((1, 1, -1.0));
        let p = SdpProblem {
            num_vars: 1,
            objective: vec![-1.0],
            blocks: vec![b],
            equalities: vec![],
        };
        let sol = solve_sdp(&p, &SdpOptions::default());
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.primal_obj + 1.0).abs() < 1e-7);
        assert!((sol.moment_values[0] - 1.0).abs() < 1e-6);
        let kkt = kkt_report(&p, &sol);
        assert!(kkt.stationarity < 1e-6 && kkt.complementarity.abs() < 1e-6);
    }

    #[test]
    fn infeasible_lmi() {
        // [[y, 1], [1, -y]] psd would need y >= 0, -y >= 0 and -y^2 - 1 >= 0
        let mut b = SdpBlock::new(2);
        b.entries.push(BlockEntry {
            var: 0,
            row: 0,
            col: 0,
            value: 1.0,
        });
        b.entries.push(BlockEntry {
            var: 0,
            row: 1,
            col: 1,
            value: -1.0,
        });
        b.constant.push((0, 1, -1.0));
        let p = SdpProblem {
            num_vars: 1,
            objective: vec![1.0],
            blocks: vec![b],
            equalities: vec![],
        };
        assert_eq!(solve_sdp(&p, &SdpOptions::default()).status, SdpStatus::Infeasible);
    }

    #[test]
    fn inconsistent_equalities() {
        let mut p = min_x_squared();
        p.equalities.push(LinearEquality {
            coeffs: vec![(0, 2.0)],
            rhs: 1.0,
        });
        assert_eq!(solve_sdp(&p, &SdpOptions::default()).status, SdpStatus::Infeasible);
    }

    #[test]
    fn unbounded_lmi() {
        // min y s.t. [[1, 1], [1, 1 - y]] psd, i.e. y <= 0
        let mut b = SdpBlock::new(2);
        b.entries.push(BlockEntry {
            var: 0,
            row: 1,
            col: 1,
            value: -1.0,
        });
        b.constant.extend([(0, 0, -1.0), (0, 1, -1.0), (1, 1, -1.0)]);
        let p = SdpProblem {
            num_vars: 1,
            objective: vec![1.0],
            blocks: vec![b],
            equalities: vec![],
        };
        assert_eq!(solve_sdp(&p, &SdpOptions::default()).status, SdpStatus::Unbounded);
    }

    #[test]
    fn deterministic_iterates() {
        let a = solve_sdp(&min_x_squared(), &SdpOptions::default());
        let b = solve_sdp(&min_x_squared(), &SdpOptions::default());
        assert_eq!(a.moment_values, b.moment_values);
        assert_eq!(a.primal_obj.to_bits(), b.primal_obj.to_bits());
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn text_roundtrip() {
        let mut p = min_x_squared();
        p.blocks[0].face = Some(DMatrix::identity(2, 2));
        let t = p.to_text();
        let q = SdpProblem::from_text(&t).unwrap();
        assert_eq!(p, q);
        assert!(SdpProblem::from_text("2\n1\n").is_err());
    }
}
