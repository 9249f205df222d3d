//! Dense two-phase tableau simplex.

use nalgebra::{DMatrix, DVector};

use super::lp::{LinearProgram, Sense};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PivotRule {
    /// Smallest-index entering and leaving variables throughout.
    Bland,
    /// Most negative reduced cost, switching to Bland's rule during runs of
    /// degenerate pivots.
    Dantzig,
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub max_iter: usize,
    pub rule: PivotRule,
    /// Stalled pivots tolerated before falling back to Bland's rule.
    pub degenerate_limit: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            max_iter: 200_000,
            rule: PivotRule::Dantzig,
            degenerate_limit: 30,
        }
    }
}

/// Optimal vertex in the variables of the original program, with
/// certificates recomputed from the final basis.
#[derive(Debug, Clone)]
pub struct SimplexSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Largest row or bound violation of `x` in the original program.
    pub primal_violation: f64,
    /// Smallest reduced cost over nonbasic columns.
    pub min_reduced_cost: f64,
}

#[derive(Debug, Clone, Copy)]
enum VarMap {
    Shift { col: usize, lo: f64 },
    Neg { col: usize, hi: f64 },
    Split { pos: usize, neg: usize },
    Fixed(f64),
}

/// Sparse row, sense and right-hand side.
type Row = (Vec<(usize, f64)>, Sense, f64);

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-10;

struct Tableau {
    m: usize,
    ncol: usize,
    /// Row-major, `ncol + 1` entries per row with the right-hand side last.
    t: Vec<f64>,
    d: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn stride(&self) -> usize {
        self.ncol + 1
    }

    fn rhs(&self, i: usize) -> f64 {
        self.t[i * self.stride() + self.ncol]
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.stride() + j]
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let s = self.stride();
        let p = self.t[r * s + q];
        let (before, rest) = self.t.split_at_mut(r * s);
        let (row_r, after) = rest.split_at_mut(s);
        for v in row_r.iter_mut() {
            *v /= p;
        }
        row_r[q] = 1.0;
        let nz: Vec<usize> = (0..s).filter(|&j| row_r[j] != 0.0).collect();
        let row_r: &[f64] = row_r;
        let eliminate = |row: &mut [f64]| {
            let f = row[q];
            if f != 0.0 {
                for &j in &nz {
                    row[j] -= f * row_r[j];
                }
                row[q] = 0.0;
            }
        };
        before.chunks_exact_mut(s).for_each(eliminate);
        after.chunks_exact_mut(s).for_each(eliminate);
        let f = self.d[q];
        if f != 0.0 {
            for &j in &nz {
                self.d[j] -= f * row_r[j];
            }
            self.d[q] = 0.0;
        }
        self.basis[r] = q;
    }

    /// Reduced costs (last entry: minus the objective) for cost vector `c`.
    fn price(&mut self, c: &[f64]) {
        let s = self.stride();
        self.d = c.to_vec();
        self.d.push(0.0);
        for i in 0..self.m {
            let cb = c[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * s..(i + 1) * s];
                for (a, b) in self.d.iter_mut().zip(row) {
                    *a -= cb * b;
                }
            }
        }
    }

    fn iterate(
        &mut self,
        allowed: &[bool],
        opts: &SimplexOptions,
        iterations: &mut usize,
        scale: f64,
    ) -> Result<()> {
        let tol = COST_TOL * scale;
        let mut stalled = 0usize;
        loop {
            let bland = opts.rule == PivotRule::Bland || stalled >= opts.degenerate_limit;
            let mut q = None;
            let mut best = -tol;
            for j in 0..self.ncol {
                if !allowed[j] || self.d[j] >= -tol {
                    continue;
                }
                if bland {
                    q = Some(j);
                    break;
                }
                if self.d[j] < best {
                    best = self.d[j];
                    q = Some(j);
                }
            }
            let Some(q) = q else {
                return Ok(());
            };
            let mut r: Option<usize> = None;
            let mut ratio = f64::INFINITY;
            for i in 0..self.m {
                let a = self.at(i, q);
                if a > PIVOT_TOL {
                    let t = self.rhs(i).max(0.0) / a;
                    let better = match r {
                        None => true,
                        Some(k) => {
                            t < ratio - 1e-12 * ratio.abs().max(1.0)
                                || (t <= ratio + 1e-12 * ratio.abs().max(1.0)
                                    && self.basis[i] < self.basis[k])
                        }
                    };
                    if better {
                        ratio = t;
                        r = Some(i);
                    }
                }
            }
            let Some(r) = r else {
                return Err(Error::Unbounded);
            };
            if *iterations >= opts.max_iter {
                return Err(Error::IterationLimit(opts.max_iter));
            }
            if ratio * self.d[q].abs() <= 1e-14 * scale {
                stalled += 1;
            } else {
                stalled = 0;
            }
            self.pivot(r, q);
            *iterations += 1;
        }
    }
}

struct StandardForm {
    a: DMatrix<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    map: Vec<VarMap>,
    artificial: Vec<bool>,
    initial_basis: Vec<usize>,
}

fn standard_form(lp: &LinearProgram) -> StandardForm {
    let mut map = Vec::with_capacity(lp.n_vars());
    let mut ncols = 0;
    let mut bound_rows: Vec<(usize, f64)> = Vec::new();
    let mut c_struct = Vec::new();
    for j in 0..lp.n_vars() {
        let (lo, hi, c) = (lp.lower[j], lp.upper[j], lp.cost[j]);
        let vm = if lo.is_finite() && hi.is_finite() && lo == hi {
            VarMap::Fixed(lo)
        } else if lo.is_finite() {
            c_struct.push(c);
            if hi.is_finite() {
                bound_rows.push((ncols, hi - lo));
            }
            ncols += 1;
            VarMap::Shift { col: ncols - 1, lo }
        } else if hi.is_finite() {
            c_struct.push(-c);
            ncols += 1;
            VarMap::Neg { col: ncols - 1, hi }
        } else {
            c_struct.push(c);
            c_struct.push(-c);
            ncols += 2;
            VarMap::Split {
                pos: ncols - 2,
                neg: ncols - 1,
            }
        };
        map.push(vm);
    }
    let n_struct = ncols;

    // rows over structural columns
    let mut rows: Vec<Row> = Vec::new();
    for con in &lp.constraints {
        let mut coeffs = Vec::with_capacity(con.coeffs.len() + 1);
        let mut rhs = con.rhs;
        for &(j, a) in &con.coeffs {
            match map[j] {
                VarMap::Fixed(v) => rhs -= a * v,
                VarMap::Shift { col, lo } => {
                    rhs -= a * lo;
                    coeffs.push((col, a));
                }
                VarMap::Neg { col, hi } => {
                    rhs -= a * hi;
                    coeffs.push((col, -a));
                }
                VarMap::Split { pos, neg } => {
                    coeffs.push((pos, a));
                    coeffs.push((neg, -a));
                }
            }
        }
        rows.push((coeffs, con.sense, rhs));
    }
    for &(col, ub) in &bound_rows {
        rows.push((vec![(col, 1.0)], Sense::Le, ub));
    }
    for row in rows.iter_mut() {
        // equilibrate so the largest coefficient has unit magnitude
        let big = row.0.iter().fold(0.0f64, |a, c| a.max(c.1.abs()));
        if big > 0.0 {
            for c in row.0.iter_mut() {
                c.1 /= big;
            }
            row.2 /= big;
        }
        if row.2 < 0.0 {
            row.2 = -row.2;
            for c in row.0.iter_mut() {
                c.1 = -c.1;
            }
            row.1 = match row.1 {
                Sense::Le => Sense::Ge,
                Sense::Ge => Sense::Le,
                Sense::Eq => Sense::Eq,
            };
        }
    }
    let m = rows.len();
    let n_slack = rows.iter().filter(|r| r.1 != Sense::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Sense::Le).count();
    let total = n_struct + n_slack + n_art;
    let mut a = DMatrix::<f64>::zeros(m, total);
    let mut b = Vec::with_capacity(m);
    let mut artificial = vec![false; total];
    let mut initial_basis = Vec::with_capacity(m);
    let mut next_slack = n_struct;
    let mut next_art = n_struct + n_slack;
    for (i, (coeffs, sense, rhs)) in rows.into_iter().enumerate() {
        for (col, v) in coeffs {
            a[(i, col)] += v;
        }
        b.push(rhs);
        match sense {
            Sense::Le => {
                a[(i, next_slack)] = 1.0;
                initial_basis.push(next_slack);
                next_slack += 1;
            }
            Sense::Ge => {
                a[(i, next_slack)] = -1.0;
                next_slack += 1;
                a[(i, next_art)] = 1.0;
                artificial[next_art] = true;
                initial_basis.push(next_art);
                next_art += 1;
            }
            Sense::Eq => {
                a[(i, next_art)] = 1.0;
                artificial[next_art] = true;
                initial_basis.push(next_art);
                next_art += 1;
            }
        }
    }
    let mut c = c_struct;
    c.resize(total, 0.0);
    StandardForm {
        a,
        b,
        c,
        map,
        artificial,
        initial_basis,
    }
}

impl StandardForm {
    fn tableau(&self) -> Tableau {
        let (m, ncol) = self.a.shape();
        let s = ncol + 1;
        let mut t = vec![0.0; m * s];
        for i in 0..m {
            for j in 0..ncol {
                t[i * s + j] = self.a[(i, j)];
            }
            t[i * s + ncol] = self.b[i];
        }
        Tableau {
            m,
            ncol,
            t,
            d: vec![0.0; ncol + 1],
            basis: self.initial_basis.clone(),
        }
    }

    fn basis_matrix(&self, basis: &[usize]) -> DMatrix<f64> {
        let m = basis.len();
        DMatrix::from_fn(m, m, |i, k| self.a[(i, basis[k])])
    }

    /// Rebuilds `B^-1 [A | b]` for the tableau's current basis.
    fn reinvert(&self, tab: &mut Tableau) -> Result<()> {
        let lu = self.basis_matrix(&tab.basis).lu();
        let (m, ncol) = self.a.shape();
        let mut rhs = DMatrix::<f64>::zeros(m, ncol + 1);
        rhs.view_mut((0, 0), (m, ncol)).copy_from(&self.a);
        for i in 0..m {
            rhs[(i, ncol)] = self.b[i];
        }
        let sol = lu
            .solve(&rhs)
            .ok_or_else(|| Error::InvalidArgument("singular simplex basis".into()))?;
        let s = ncol + 1;
        for i in 0..m {
            for j in 0..s {
                tab.t[i * s + j] = sol[(i, j)];
            }
            let bj = tab.basis[i];
            tab.t[i * s + bj] = 1.0;
        }
        Ok(())
    }

    fn recover(&self, lp: &LinearProgram, col_values: &[f64]) -> Vec<f64> {
        self.map
            .iter()
            .map(|vm| match *vm {
                VarMap::Fixed(v) => v,
                VarMap::Shift { col, lo } => lo + col_values[col],
                VarMap::Neg { col, hi } => hi - col_values[col],
                VarMap::Split { pos, neg } => col_values[pos] - col_values[neg],
            })
            .take(lp.n_vars())
            .collect()
    }
}

pub fn simplex_solve(lp: &LinearProgram) -> Result<SimplexSolution> {
    simplex_solve_with(lp, &SimplexOptions::default())
}

/// Solves `lp` to an optimal vertex. Infeasibility, unboundedness and the
/// iteration limit are distinct errors.
pub fn simplex_solve_with(lp: &LinearProgram, opts: &SimplexOptions) -> Result<SimplexSolution> {
    lp.validate()?;
    let sf = standard_form(lp);
    let mut tab = sf.tableau();
    let ncol = tab.ncol;
    let mut iterations = 0;

    // phase one
    let c1: Vec<f64> = sf.artificial.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
    let everything = vec![true; ncol];
    let b_scale = sf.b.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    tab.price(&c1);
    tab.iterate(&everything, opts, &mut iterations, 1.0)?;
    let infeasibility = |tab: &Tableau| -> f64 {
        (0..tab.m)
            .filter(|&i| sf.artificial[tab.basis[i]])
            .map(|i| tab.rhs(i).abs())
            .sum()
    };
    if infeasibility(&tab) > 1e-9 * b_scale {
        // confirm against a fresh factorization before giving up
        sf.reinvert(&mut tab)?;
        tab.price(&c1);
        tab.iterate(&everything, opts, &mut iterations, 1.0)?;
        if infeasibility(&tab) > 1e-9 * b_scale {
            return Err(Error::Infeasible);
        }
    }
    // drive zero-level artificials out where possible
    for i in 0..tab.m {
        if sf.artificial[tab.basis[i]] {
            if let Some(q) = (0..ncol)
                .filter(|&j| !sf.artificial[j])
                .max_by(|&a, &b| tab.at(i, a).abs().total_cmp(&tab.at(i, b).abs()))
                .filter(|&j| tab.at(i, j).abs() > PIVOT_TOL)
            {
                tab.pivot(i, q);
            }
        }
    }

    // phase two; a failed certificate triggers a fresh factorization and
    // further pivoting
    let allowed: Vec<bool> = sf.artificial.iter().map(|&a| !a).collect();
    let c_scale = sf.c.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    tab.price(&sf.c);
    let mut cert = None;
    for attempt in 0..3 {
        if attempt > 0 {
            sf.reinvert(&mut tab)?;
            tab.price(&sf.c);
        }
        tab.iterate(&allowed, opts, &mut iterations, c_scale)?;
        let c = certify(&sf, &tab.basis, &allowed)?;
        let ok = c.min_reduced_cost >= -CERT_TOL && c.col_values.iter().all(|&v| v >= -CERT_TOL);
        cert = Some(c);
        if ok {
            break;
        }
    }
    let cert = cert.expect("at least one attempt");
    let x = sf.recover(lp, &cert.col_values);
    let objective = lp.objective(&x);
    let primal_violation = lp.max_violation(&x);
    Ok(SimplexSolution {
        x,
        objective,
        iterations,
        primal_violation,
        min_reduced_cost: cert.min_reduced_cost,
    })
}

/// Tolerance of the optimality certificates.
pub const CERT_TOL: f64 = 1e-9;

struct Certificate {
    /// Standard-form column values with `x_B = B^-1 b`.
    col_values: Vec<f64>,
    min_reduced_cost: f64,
}

/// Basic solution and reduced costs recomputed from the basis alone.
fn certify(sf: &StandardForm, basis: &[usize], allowed: &[bool]) -> Result<Certificate> {
    let singular = || Error::InvalidArgument("singular simplex basis".into());
    let bmat = sf.basis_matrix(basis);
    let xb = bmat
        .clone()
        .lu()
        .solve(&DVector::from_column_slice(&sf.b))
        .ok_or_else(singular)?;
    let mut col_values = vec![0.0; sf.c.len()];
    for (i, &j) in basis.iter().enumerate() {
        col_values[j] = xb[i];
    }
    Ok(Certificate {
        col_values,
        min_reduced_cost: reduced_cost_floor(sf, basis, allowed)?,
    })
}

/// `min_j (c_j - A_j' y)` over nonbasic allowed columns with `B' y = c_B`.
fn reduced_cost_floor(sf: &StandardForm, basis: &[usize], allowed: &[bool]) -> Result<f64> {
    let bmat = sf.basis_matrix(basis);
    let cb = DVector::from_iterator(basis.len(), basis.iter().map(|&j| sf.c[j]));
    let y = bmat
        .transpose()
        .lu()
        .solve(&cb)
        .ok_or_else(|| Error::InvalidArgument("singular simplex basis".into()))?;
    let d = &sf.c.to_vec();
    let aty = sf.a.transpose() * y;
    let mut in_basis = vec![false; sf.c.len()];
    for &j in basis {
        in_basis[j] = true;
    }
    Ok((0..d.len())
        .filter(|&j| allowed[j] && !in_basis[j])
        .map(|j| d[j] - aty[j])
        .fold(0.0, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn both_rules() -> [SimplexOptions; 2] {
        [
            SimplexOptions::default(),
            SimplexOptions {
                rule: PivotRule::Bland,
                ..SimplexOptions::default()
            },
        ]
    }

    #[test]
    fn min_x_at_least_three() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var("x", f64::NEG_INFINITY, f64::INFINITY, 1.0);
        lp.add_constraint("lb", vec![(x, 1.0)], Sense::Ge, 3.0);
        for o in both_rules() {
            let s = simplex_solve_with(&lp, &o).unwrap();
            assert!((s.x[0] - 3.0).abs() < 1e-12);
            assert!((s.objective - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn infeasible_bounds() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var("x", f64::NEG_INFINITY, f64::INFINITY, 0.0);
        lp.add_constraint("hi", vec![(x, 1.0)], Sense::Le, 0.0);
        lp.add_constraint("lo", vec![(x, 1.0)], Sense::Ge, 1.0);
        assert!(matches!(simplex_solve(&lp), Err(Error::Infeasible)));
    }

    #[test]
    fn unbounded_ray() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var("x", 0.0, f64::INFINITY, -1.0);
        let y = lp.add_var("y", 0.0, f64::INFINITY, 0.0);
        lp.add_constraint("r", vec![(x, 1.0), (y, -1.0)], Sense::Le, 1.0);
        assert!(matches!(simplex_solve(&lp), Err(Error::Unbounded)));
    }

    #[test]
    fn iteration_limit_is_reported() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var("x", 0.0, 1.0, -1.0);
        let y = lp.add_var("y", 0.0, 1.0, -1.0);
        lp.add_constraint("r", vec![(x, 1.0), (y, 1.0)], Sense::Le, 1.5);
        let opts = SimplexOptions {
            max_iter: 0,
            ..SimplexOptions::default()
        };
        assert!(matches!(
            simplex_solve_with(&lp, &opts),
            Err(Error::IterationLimit(0))
        ));
    }

    // Beale's cycling example: the textbook LP on which the largest-coefficient
    // rule without anti-cycling cycles forever. Optimum -1/20.
    #[test]
    fn degenerate_cycling_example_terminates() {
        let mut lp = LinearProgram::new();
        let x: Vec<usize> = (0..4)
            .map(|j| lp.add_var(format!("x{j}"), 0.0, f64::INFINITY, [-0.75, 150.0, -0.02, 6.0][j]))
            .collect();
        lp.add_constraint(
            "a",
            vec![(x[0], 0.25), (x[1], -60.0), (x[2], -0.04), (x[3], 9.0)],
            Sense::Le,
            0.0,
        );
        lp.add_constraint(
            "b",
            vec![(x[0], 0.5), (x[1], -90.0), (x[2], -0.02), (x[3], 3.0)],
            Sense::Le,
            0.0,
        );
        lp.add_constraint("c", vec![(x[2], 1.0)], Sense::Le, 1.0);
        for o in both_rules() {
            let s = simplex_solve_with(&lp, &o).unwrap();
            assert!((s.objective + 0.05).abs() < 1e-12, "{}", s.objective);
            assert!(s.primal_violation < 1e-9);
            assert!(s.min_reduced_cost >= -1e-9);
        }
    }

    #[test]
    fn equality_and_free_variables() {
        // min x + 2y, x + y = 4, x - y <= 1, y free, x in [0, 10]
        let mut lp = LinearProgram::new();
        let x = lp.add_var("x", 0.0, 10.0, 1.0);
        let y = lp.add_var("y", f64::NEG_INFINITY, f64::INFINITY, 2.0);
        lp.add_constraint("e", vec![(x, 1.0), (y, 1.0)], Sense::Eq, 4.0);
        lp.add_constraint("d", vec![(x, 1.0), (y, -1.0)], Sense::Le, 1.0);
        let s = simplex_solve(&lp).unwrap();
        assert!((s.x[0] - 2.5).abs() < 1e-12 && (s.x[1] - 1.5).abs() < 1e-12);
    }
}
