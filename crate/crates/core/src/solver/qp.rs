//! Dense convex QP by the Goldfarb-Idnani dual active-set method.
//!
//! Constraints are handled internally in the form `n^T x >= b`. The factor
//! `J = L^{-T}` (with `H = L L^T`) and the triangular `R` satisfy
//! `J^T N = [R; 0]` for the active normals `N`; both are updated with Givens
//! rotations when constraints enter or leave.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use super::Multipliers;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{max_abs, min_symmetric_eigenvalue, null_space};

/// `min 1/2 x^T H x + g^T x` s.t. `A_eq x = b_eq`, `A_in x <= b_in`, `lower <= x <= upper`.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QpProblem {
    pub fn new(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        let n = g.len();
        Self {
            h,
            g,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn with_inequalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_in = a;
        self.b_in = b;
        self
    }

    pub fn with_bounds(mut self, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    fn validate(&self) -> Result<()> {
        let n = self.dim();
        check_dim("qp hessian rows", n, self.h.nrows())?;
        check_dim("qp hessian cols", n, self.h.ncols())?;
        check_dim("qp equality cols", n, self.a_eq.ncols())?;
        check_dim("qp equality rhs", self.a_eq.nrows(), self.b_eq.len())?;
        check_dim("qp inequality cols", n, self.a_in.ncols())?;
        check_dim("qp inequality rhs", self.a_in.nrows(), self.b_in.len())?;
        check_dim("qp lower bound", n, self.lower.len())?;
        check_dim("qp upper bound", n, self.upper.len())?;
        for i in 0..n {
            if self.lower[i] > self.upper[i] {
                return Err(Error::Infeasible);
            }
        }
        let finite = self
            .h
            .iter()
            .chain(self.g.iter())
            .chain(self.a_eq.iter())
            .chain(self.b_eq.iter());
        if finite
            .chain(self.a_in.iter())
            .chain(self.b_in.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Config("qp data has non-finite entries".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub multipliers: Multipliers,
    pub objective: f64,
    /// Number of constraints added to or dropped from the active set.
    pub active_set_changes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Eq(usize),
    Ineq(usize),
    Lower(usize),
    Upper(usize),
    Fixed(usize),
}

#[derive(Debug, Clone)]
enum Normal {
    Dense(DVector<f64>),
    Unit(usize, f64),
}

#[derive(Debug, Clone)]
struct Constraint {
    normal: Normal,
    rhs: f64,
    kind: Kind,
    /// `+1` or `-1`: the sign applied to turn the original row into `>=` form.
    sign: f64,
}

impl Constraint {
    fn dot(&self, x: &DVector<f64>) -> f64 {
        match &self.normal {
            Normal::Dense(n) => n.dot(x),
            Normal::Unit(i, s) => s * x[*i],
        }
    }

    fn is_equality(&self) -> bool {
        matches!(self.kind, Kind::Eq(_) | Kind::Fixed(_))
    }

    fn flip(&mut self) {
        self.sign = -self.sign;
        self.rhs = -self.rhs;
        match &mut self.normal {
            Normal::Dense(n) => n.neg_mut(),
            Normal::Unit(_, s) => *s = -*s,
        }
    }

    fn slack(&self, x: &DVector<f64>) -> f64 {
        self.dot(x) - self.rhs
    }

    fn tolerance(&self) -> f64 {
        1e-12 * (1.0 + self.rhs.abs())
    }
}

/// `J^T n`, exploiting unit normals.
fn project(j: &DMatrix<f64>, c: &Constraint) -> DVector<f64> {
    match &c.normal {
        Normal::Dense(n) => j.tr_mul(n),
        Normal::Unit(i, s) => j.row(*i).transpose() * *s,
    }
}

fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    let h = libm::hypot(a, b);
    if h == 0.0 {
        (1.0, 0.0, 0.0)
    } else {
        (a / h, b / h, h)
    }
}

fn rotate_columns(j: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for r in 0..j.nrows() {
        let (a, b) = (j[(r, p)], j[(r, q)]);
        j[(r, p)] = c * a + s * b;
        j[(r, q)] = -s * a + c * b;
    }
}

struct Factor {
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    q: usize,
}

impl Factor {
    /// Appends a constraint whose projection is `d = J^T n`. Returns `false`
    /// when `n` is linearly dependent on the active normals.
    fn add(&mut self, mut d: DVector<f64>) -> bool {
        let n = self.j.nrows();
        let q = self.q;
        for k in ((q + 1)..n).rev() {
            let (c, s, h) = givens(d[k - 1], d[k]);
            if d[k] == 0.0 {
                continue;
            }
            d[k - 1] = h;
            d[k] = 0.0;
            rotate_columns(&mut self.j, k - 1, k, c, s);
        }
        if q >= n {
            return false;
        }
        let scale = d.rows(0, q + 1).amax();
        if d[q].abs() <= 1e-13 * scale.max(1e-300) {
            return false;
        }
        for i in 0..=q {
            self.r[(i, q)] = d[i];
        }
        self.q += 1;
        true
    }

    fn drop(&mut self, pos: usize) {
        let q = self.q;
        for col in pos..(q - 1) {
            for i in 0..q {
                self.r[(i, col)] = self.r[(i, col + 1)];
            }
        }
        for i in 0..q {
            self.r[(i, q - 1)] = 0.0;
        }
        for l in pos..(q - 1) {
            let (c, s, h) = givens(self.r[(l, l)], self.r[(l + 1, l)]);
            if self.r[(l + 1, l)] == 0.0 {
                continue;
            }
            self.r[(l, l)] = h;
            self.r[(l + 1, l)] = 0.0;
            for m in (l + 1)..(q - 1) {
                let (a, b) = (self.r[(l, m)], self.r[(l + 1, m)]);
                self.r[(l, m)] = c * a + s * b;
                self.r[(l + 1, m)] = -s * a + c * b;
            }
            rotate_columns(&mut self.j, l, l + 1, c, s);
        }
        self.q -= 1;
    }

    /// Solves `R r = d[..q]` by back substitution.
    fn back_solve(&self, d: &DVector<f64>) -> DVector<f64> {
        let q = self.q;
        let mut r = DVector::zeros(q);
        for i in (0..q).rev() {
            let mut acc = d[i];
            for k in (i + 1)..q {
                acc -= self.r[(i, k)] * r[k];
            }
            r[i] = acc / self.r[(i, i)];
        }
        r
    }

    fn step(&self, d: &DVector<f64>) -> DVector<f64> {
        let n = self.j.nrows();
        let q = self.q;
        self.j.columns(q, n - q) * d.rows(q, n - q)
    }
}

/// Cholesky-based `J = L^{-T}`, falling back to an augmented Lagrangian
/// `H + rho A_eq^T A_eq` when `H` is only semidefinite. Returns the possibly
/// modified linear term with the factor.
fn inverse_factor(qp: &QpProblem) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = qp.dim();
    let try_factor = |h: &DMatrix<f64>| -> Option<DMatrix<f64>> {
        let chol = h.clone().cholesky()?;
        let l = chol.l();
        let diag_min = (0..n).fold(f64::INFINITY, |m, i| m.min(l[(i, i)].abs()));
        let diag_max = (0..n).fold(0.0f64, |m, i| m.max(l[(i, i)].abs()));
        if n > 0 && diag_min <= 1e-9 * diag_max.max(1e-300) {
            return None;
        }
        let linv = l.solve_lower_triangular(&DMatrix::identity(n, n))?;
        Some(linv.transpose())
    };
    if let Some(j) = try_factor(&qp.h) {
        return Ok((qp.g.clone(), j));
    }
    let scale = max_abs(&qp.h).max(1.0);
    // the fixed coordinates act as equalities too
    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for i in 0..qp.a_eq.nrows() {
        rows.push(qp.a_eq.row(i).transpose());
        rhs.push(qp.b_eq[i]);
    }
    for i in 0..n {
        if qp.lower[i] == qp.upper[i] {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            rows.push(e);
            rhs.push(qp.lower[i]);
        }
    }
    let mut h = qp.h.clone();
    let mut g = qp.g.clone();
    let a = if rows.is_empty() {
        DMatrix::zeros(0, n)
    } else {
        DMatrix::from_fn(rows.len(), n, |r, c| rows[r][c])
    };
    if !rows.is_empty() {
        let row_scale = max_abs(&a).max(1e-300);
        let rho = scale / (row_scale * row_scale);
        h += rho * a.tr_mul(&a);
        g -= rho * a.tr_mul(&DVector::from_vec(rhs));
        if let Some(j) = try_factor(&h) {
            return Ok((g, j));
        }
    }
    let z = null_space(&a);
    let reduced = z.tr_mul(&qp.h) * &z;
    let lam = min_symmetric_eigenvalue(&reduced);
    if lam < -1e-10 * scale {
        return Err(Error::Indefinite { eigenvalue: lam });
    }
    let delta = 1e-12 * scale;
    for i in 0..n {
        h[(i, i)] += delta;
    }
    match try_factor(&h) {
        Some(j) => Ok((g, j)),
        None => Err(Error::Indefinite { eigenvalue: lam }),
    }
}

fn build_constraints(qp: &QpProblem) -> Vec<Constraint> {
    let n = qp.dim();
    let mut out = Vec::new();
    for i in 0..qp.a_eq.nrows() {
        out.push(Constraint {
            normal: Normal::Dense(qp.a_eq.row(i).transpose()),
            rhs: qp.b_eq[i],
            kind: Kind::Eq(i),
            sign: 1.0,
        });
    }
    for i in 0..n {
        if qp.lower[i] == qp.upper[i] {
            out.push(Constraint {
                normal: Normal::Unit(i, 1.0),
                rhs: qp.lower[i],
                kind: Kind::Fixed(i),
                sign: 1.0,
            });
        }
    }
    for i in 0..qp.a_in.nrows() {
        out.push(Constraint {
            normal: Normal::Dense(-qp.a_in.row(i).transpose()),
            rhs: -qp.b_in[i],
            kind: Kind::Ineq(i),
            sign: -1.0,
        });
    }
    for i in 0..n {
        if qp.lower[i] == qp.upper[i] {
            continue;
        }
        if qp.lower[i].is_finite() {
            out.push(Constraint {
                normal: Normal::Unit(i, 1.0),
                rhs: qp.lower[i],
                kind: Kind::Lower(i),
                sign: 1.0,
            });
        }
        if qp.upper[i].is_finite() {
            out.push(Constraint {
                normal: Normal::Unit(i, -1.0),
                rhs: -qp.upper[i],
                kind: Kind::Upper(i),
                sign: -1.0,
            });
        }
    }
    out
}

fn kkt_defect(
    qp: &QpProblem,
    nmat: &DMatrix<f64>,
    rhs: &DVector<f64>,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    (&qp.h * x + &qp.g - nmat * u, nmat.tr_mul(x) - rhs)
}

/// Iterative refinement of `(x, u)` on the final active set: the dual
/// updates lose digits when the active normals are badly scaled.
fn refine(
    qp: &QpProblem,
    cons: &[Constraint],
    active: &[usize],
    x: &mut DVector<f64>,
    u: &mut [f64],
) {
    let n = x.len();
    let q = active.len();
    let mut nmat = DMatrix::zeros(n, q);
    let mut rhs = DVector::zeros(q);
    for (k, &ci) in active.iter().enumerate() {
        match &cons[ci].normal {
            Normal::Dense(v) => nmat.set_column(k, v),
            Normal::Unit(i, s) => nmat[(*i, k)] = *s,
        }
        rhs[k] = cons[ci].rhs;
    }
    let mut kkt = DMatrix::zeros(n + q, n + q);
    kkt.view_mut((0, 0), (n, n)).copy_from(&qp.h);
    kkt.view_mut((0, n), (n, q)).copy_from(&(-&nmat));
    kkt.view_mut((n, 0), (q, n)).copy_from(&nmat.transpose());
    let lu = kkt.lu();
    let mut uv = DVector::from_column_slice(u);
    for _ in 0..2 {
        let (r1, r2) = kkt_defect(qp, &nmat, &rhs, x, &uv);
        let before = r1.amax().max(r2.amax());
        if before == 0.0 {
            return;
        }
        let mut b = DVector::zeros(n + q);
        b.rows_mut(0, n).copy_from(&(-r1));
        b.rows_mut(n, q).copy_from(&(-r2));
        let Some(delta) = lu.solve(&b) else { return };
        let xt = &*x + delta.rows(0, n);
        let mut ut = &uv + delta.rows(n, q);
        for (k, &ci) in active.iter().enumerate() {
            if !cons[ci].is_equality() {
                ut[k] = ut[k].max(0.0);
            }
        }
        let (s1, s2) = kkt_defect(qp, &nmat, &rhs, &xt, &ut);
        if !(s1.amax().max(s2.amax()) < before) {
            return;
        }
        *x = xt;
        uv = ut;
    }
    u.copy_from_slice(uv.as_slice());
}

pub fn solve_qp(qp: &QpProblem) -> Result<QpSolution> {
    qp.validate()?;
    let n = qp.dim();
    let (g, j) = inverse_factor(qp)?;
    let mut cons = build_constraints(qp);
    let m = cons.len();

    let mut x = -(&j * j.tr_mul(&g));
    let mut fac = Factor {
        j,
        r: DMatrix::zeros(n, n),
        q: 0,
    };
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut is_active = alloc::vec![false; m];
    let mut changes = 0usize;
    let budget = 10 * (n + m) + 100;

    let n_eq = cons.iter().filter(|c| c.is_equality()).count();
    let mut next_eq = 0usize;

    loop {
        // choose the constraint to add: equalities first, in order
        let p = if next_eq < n_eq {
            let p = next_eq;
            next_eq += 1;
            if cons[p].slack(&x) > 0.0 {
                cons[p].flip();
            }
            p
        } else {
            let mut best: Option<(usize, f64)> = None;
            for (i, c) in cons.iter().enumerate() {
                if is_active[i] || c.is_equality() {
                    continue;
                }
                let s = c.slack(&x);
                if s < -c.tolerance() && best.is_none_or(|(_, b)| s < b) {
                    best = Some((i, s));
                }
            }
            match best {
                Some((i, _)) => i,
                None => break,
            }
        };

        let mut u_p = 0.0;
        loop {
            if changes > budget {
                return Err(Error::Cycling { changes });
            }
            let d = project(&fac.j, &cons[p]);
            let z = fac.step(&d);
            let r = fac.back_solve(&d);

            let mut t1 = f64::INFINITY;
            let mut drop_pos = None;
            for (pos, &ci) in active.iter().enumerate() {
                if cons[ci].is_equality() {
                    continue;
                }
                if r[pos] > 0.0 {
                    let ratio = u[pos] / r[pos];
                    if ratio < t1 {
                        t1 = ratio;
                        drop_pos = Some(pos);
                    }
                }
            }
            let zn = match &cons[p].normal {
                Normal::Dense(nv) => z.dot(nv),
                Normal::Unit(i, s) => s * z[*i],
            };
            let dnorm = d.norm();
            let t2 = if zn > 1e-14 * dnorm * dnorm {
                -cons[p].slack(&x) / zn
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                if cons[p].is_equality()
                    && cons[p].slack(&x).abs() <= 1e-9 * (1.0 + cons[p].rhs.abs())
                {
                    break; // redundant equality
                }
                return Err(Error::Infeasible);
            }
            if t2.is_infinite() {
                for k in 0..active.len() {
                    u[k] -= t * r[k];
                }
                u_p += t;
                let pos = drop_pos.expect("finite t1 has a blocking constraint");
                is_active[active[pos]] = false;
                active.remove(pos);
                u.remove(pos);
                fac.drop(pos);
                changes += 1;
                continue;
            }
            x += &z * t;
            for k in 0..active.len() {
                u[k] -= t * r[k];
            }
            u_p += t;
            if t2 <= t1 {
                if fac.add(d) {
                    active.push(p);
                    u.push(u_p);
                    is_active[p] = true;
                    changes += 1;
                }
                break;
            }
            let pos = drop_pos.expect("finite t1 has a blocking constraint");
            is_active[active[pos]] = false;
            active.remove(pos);
            u.remove(pos);
            fac.drop(pos);
            changes += 1;
        }
    }

    refine(qp, &cons, &active, &mut x, &mut u);

    let mut mult = Multipliers::zeros(n, qp.a_eq.nrows(), qp.a_in.nrows());
    for (pos, &ci) in active.iter().enumerate() {
        let c = &cons[ci];
        let v = u[pos];
        match c.kind {
            Kind::Eq(i) => mult.eq[i] = -c.sign * v,
            Kind::Ineq(i) => mult.ineq[i] = v,
            Kind::Lower(i) => mult.lower[i] = v,
            Kind::Upper(i) => mult.upper[i] = v,
            Kind::Fixed(i) => {
                let w = c.sign * v;
                if w >= 0.0 {
                    mult.lower[i] = w;
                } else {
                    mult.upper[i] = -w;
                }
            }
        }
    }
    // bounds hold exactly for the returned point
    for i in 0..n {
        x[i] = x[i].clamp(qp.lower[i], qp.upper[i]);
    }
    let objective = qp.objective(&x);
    Ok(QpSolution {
        x,
        multipliers: mult,
        objective,
        active_set_changes: changes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::kkt::qp_kkt_residual;
    use alloc::vec;

    #[test]
    fn bound_active_scalar() {
        let qp = QpProblem::new(
            DMatrix::from_element(1, 1, 2.0),
            DVector::from_element(1, -2.0),
        )
        .with_bounds(DVector::from_element(1, 0.0), DVector::from_element(1, 0.5));
        let s = solve_qp(&qp).unwrap();
        assert!((s.x[0] - 0.5).abs() < 1e-15);
        assert!((s.multipliers.upper[0] - 1.0).abs() < 1e-12);
        assert_eq!(s.multipliers.lower[0], 0.0);
        assert!(qp_kkt_residual(&qp, &s.x, &s.multipliers) <= 1e-12);
    }

    #[test]
    fn equality_multiplier_sign() {
        let qp = QpProblem::new(DMatrix::identity(2, 2) * 2.0, DVector::zeros(2)).with_equalities(
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_element(1, 1.0),
        );
        let s = solve_qp(&qp).unwrap();
        assert!((s.x[0] - 0.5).abs() < 1e-14 && (s.x[1] - 0.5).abs() < 1e-14);
        assert!((s.multipliers.eq[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn unconstrained_vertex() {
        let h = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let g = DVector::from_vec(vec![1.0, 2.0]);
        let qp = QpProblem::new(h.clone(), g.clone());
        let s = solve_qp(&qp).unwrap();
        let expect = -h.lu().solve(&g).unwrap();
        assert!((s.x - expect).amax() < 1e-14);
        assert_eq!(s.active_set_changes, 0);
    }

    #[test]
    fn general_inequality_and_drop() {
        // min (x-2)^2 + (y-2)^2  s.t. x + y <= 2, x >= 0, y >= 0
        let qp = QpProblem::new(
            DMatrix::identity(2, 2) * 2.0,
            DVector::from_vec(vec![-4.0, -4.0]),
        )
        .with_inequalities(
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_element(1, 2.0),
        )
        .with_bounds(DVector::zeros(2), DVector::from_element(2, f64::INFINITY));
        let s = solve_qp(&qp).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-14 && (s.x[1] - 1.0).abs() < 1e-14);
        assert!((s.multipliers.ineq[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fixed_coordinate_becomes_equality() {
        let qp = QpProblem::new(DMatrix::identity(2, 2), DVector::from_vec(vec![-1.0, -1.0]))
            .with_bounds(
                DVector::from_vec(vec![0.3, -1.0]),
                DVector::from_vec(vec![0.3, 1.0]),
            );
        let s = solve_qp(&qp).unwrap();
        assert_eq!(s.x[0], 0.3);
        assert!((s.x[1] - 1.0).abs() < 1e-14);
        // gradient at x0 is 0.3 - 1 < 0: the upper side carries the multiplier
        assert!((s.multipliers.upper[0] - 0.7).abs() < 1e-12);
        assert!(qp_kkt_residual(&qp, &s.x, &s.multipliers) <= 1e-12);
    }

    #[test]
    fn semidefinite_hessian_with_equalities() {
        // f = x0^2, x1 free but pinned through x0 + x1 = 1
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let qp = QpProblem::new(h, DVector::zeros(2)).with_equalities(
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_element(1, 1.0),
        );
        let s = solve_qp(&qp).unwrap();
        assert!(s.x[0].abs() < 1e-12 && (s.x[1] - 1.0).abs() < 1e-12);
        assert!(qp_kkt_residual(&qp, &s.x, &s.multipliers) <= 1e-10);
    }

    #[test]
    fn indefinite_is_reported() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let err = solve_qp(&QpProblem::new(h, DVector::zeros(2))).unwrap_err();
        assert!(matches!(err, Error::Indefinite { .. }));
    }

    #[test]
    fn inconsistent_equalities_are_infeasible() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let qp = QpProblem::new(DMatrix::identity(2, 2), DVector::zeros(2))
            .with_equalities(a, DVector::from_vec(vec![1.0, 3.0]));
        assert_eq!(solve_qp(&qp).unwrap_err(), Error::Infeasible);
        let qp = QpProblem::new(DMatrix::identity(1, 1), DVector::zeros(1))
            .with_equalities(
                DMatrix::from_element(1, 1, 1.0),
                DVector::from_element(1, 5.0),
            )
            .with_bounds(DVector::from_element(1, 0.0), DVector::from_element(1, 1.0));
        assert_eq!(solve_qp(&qp).unwrap_err(), Error::Infeasible);
    }

    #[test]
    fn redundant_equality_is_tolerated() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let qp = QpProblem::new(DMatrix::identity(2, 2) * 2.0, DVector::zeros(2))
            .with_equalities(a, DVector::from_vec(vec![1.0, 2.0]));
        let s = solve_qp(&qp).unwrap();
        assert!((s.x[0] - 0.5).abs() < 1e-12);
        assert!(qp_kkt_residual(&qp, &s.x, &s.multipliers) <= 1e-12);
    }
}
