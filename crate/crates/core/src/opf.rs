//! AC optimal power flow by a primal-dual interior point method.
//!
//! Unknowns are the polar state followed by generator active and reactive
//! outputs. Equalities are the bus balance equations; inequalities are the
//! squared apparent-power limits, angle-difference limits and variable
//! bounds. Every iteration solves the reduced KKT system with the exact
//! Hessian of the Lagrangian. The result is polished by a power flow at the
//! optimized dispatch and generator voltages.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::acpf::{
    eval_h, eval_jacobian, newton_pf, va_column, weighted_hessian, BusSpec, Family, Layout, MeasurementKind,
    PfOptions, PfSpec, StateVector,
};
use crate::error::{Error, Result};
use crate::netmodel::Network;
use crate::scenarios::proportional_dispatch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcOpfOptions {
    pub max_iter: usize,
    /// Feasibility, stationarity and complementarity tolerance (scaled).
    pub tol: f64,
}

impl Default for AcOpfOptions {
    fn default() -> Self {
        AcOpfOptions {
            max_iter: 150,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AcOpfSolution {
    pub state: StateVector,
    pub p_g: Vec<f64>,
    pub q_g: Vec<f64>,
    /// Generation cost at `p_g`.
    pub objective: f64,
    pub iterations: usize,
}

/// Bounds narrower than this become equalities.
const FIXED_WIDTH: f64 = 1e-9;
/// Fraction of the step to the boundary.
const XI: f64 = 0.99995;
const SIGMA: f64 = 0.1;

/// `offset + coeffs . z`
struct LinRow {
    coeffs: Vec<(usize, f64)>,
    offset: f64,
}

impl LinRow {
    fn value(&self, z: &[f64]) -> f64 {
        self.offset + self.coeffs.iter().map(|&(j, c)| c * z[j]).sum::<f64>()
    }
}

/// Inequality values and Jacobian, plus the flows and flow Jacobian.
type IneqEval = (DVector<f64>, DMatrix<f64>, Vec<f64>, DMatrix<f64>);

struct Problem<'a> {
    net: &'a Network,
    balance: Layout,
    /// Limited branches, one entry per terminal.
    limits: Vec<f64>,
    flow_kinds: Vec<MeasurementKind>,
    /// `row <= 0`
    lin_ineq: Vec<LinRow>,
    /// `row = 0`
    lin_eq: Vec<LinRow>,
    dim: usize,
    ng: usize,
    scale: f64,
}

impl<'a> Problem<'a> {
    fn new(net: &'a Network) -> Self {
        let nb = net.n_buses();
        let dim = 2 * nb - 1;
        let ng = net.generators().len();
        let mut lin_ineq = Vec::new();
        let mut lin_eq = Vec::new();
        let mut bound = |j: usize, lo: f64, hi: f64| {
            if hi - lo < FIXED_WIDTH {
                lin_eq.push(LinRow {
                    coeffs: vec![(j, 1.0)],
                    offset: -hi,
                });
                return;
            }
            if hi.is_finite() {
                lin_ineq.push(LinRow {
                    coeffs: vec![(j, 1.0)],
                    offset: -hi,
                });
            }
            if lo.is_finite() {
                lin_ineq.push(LinRow {
                    coeffs: vec![(j, -1.0)],
                    offset: lo,
                });
            }
        };
        for (b, bus) in net.buses().iter().enumerate() {
            bound(b, bus.v_min, bus.v_max);
        }
        for (g, gen) in net.generators().iter().enumerate() {
            bound(dim + g, gen.p_min, gen.p_max);
            bound(dim + ng + g, gen.q_min, gen.q_max);
        }
        let mut limits = Vec::new();
        let mut flow_kinds = Vec::new();
        for (k, br) in net.branches().iter().enumerate() {
            if br.theta_max < std::f64::consts::PI {
                let (f, t) = net.branch_ends(k);
                let mut coeffs = Vec::new();
                if let Some(c) = va_column(nb, net.slack(), f) {
                    coeffs.push((c, 1.0));
                }
                if let Some(c) = va_column(nb, net.slack(), t) {
                    coeffs.push((c, -1.0));
                }
                let neg = coeffs.iter().map(|&(j, c)| (j, -c)).collect();
                lin_ineq.push(LinRow {
                    coeffs,
                    offset: -br.theta_max,
                });
                lin_ineq.push(LinRow {
                    coeffs: neg,
                    offset: -br.theta_max,
                });
            }
            if br.s_max > 0.0 {
                limits.extend([br.s_max, br.s_max]);
                flow_kinds.extend([
                    MeasurementKind::PflowFrom(k),
                    MeasurementKind::QflowFrom(k),
                    MeasurementKind::PflowTo(k),
                    MeasurementKind::QflowTo(k),
                ]);
            }
        }
        let marginal = net
            .generators()
            .iter()
            .map(|g| (g.c1 + 2.0 * g.c2 * g.p_max).abs())
            .fold(1.0f64, f64::max);
        Problem {
            net,
            balance: Layout::families(net, &[Family::Pinj, Family::Qinj]),
            limits,
            flow_kinds,
            lin_ineq,
            lin_eq,
            dim,
            ng,
            scale: 1.0 / marginal,
        }
    }

    fn nz(&self) -> usize {
        self.dim + 2 * self.ng
    }

    fn n_eq(&self) -> usize {
        self.balance.len() + self.lin_eq.len()
    }

    fn n_ineq(&self) -> usize {
        self.limits.len() + self.lin_ineq.len()
    }

    fn cost(&self, z: &[f64]) -> f64 {
        let pg = &z[self.dim..self.dim + self.ng];
        self.net
            .generators()
            .iter()
            .zip(pg)
            .map(|(g, &p)| g.cost(p))
            .sum()
    }

    fn equalities(&self, z: &[f64], x: &StateVector) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let net = self.net;
        let nb = net.n_buses();
        let (dim, ng) = (self.dim, self.ng);
        let mut g = DVector::zeros(self.n_eq());
        let mut dg = DMatrix::zeros(self.n_eq(), self.nz());
        let h = eval_h(net, x, &self.balance)?;
        let jac = eval_jacobian(net, x, &self.balance)?;
        dg.view_mut((0, 0), (2 * nb, dim)).copy_from(&jac);
        for (b, bus) in net.buses().iter().enumerate() {
            g[b] = h[b] + bus.p_load;
            g[nb + b] = h[nb + b] + bus.q_load;
            for &k in net.generators_at(b) {
                g[b] -= z[dim + k];
                g[nb + b] -= z[dim + ng + k];
                dg[(b, dim + k)] = -1.0;
                dg[(nb + b, dim + ng + k)] = -1.0;
            }
        }
        for (i, row) in self.lin_eq.iter().enumerate() {
            g[2 * nb + i] = row.value(z);
            for &(j, c) in &row.coeffs {
                dg[(2 * nb + i, j)] += c;
            }
        }
        Ok((g, dg))
    }

    /// Values, Jacobian, and the flows and flow Jacobian reused by the Hessian.
    fn inequalities(&self, z: &[f64], x: &StateVector) -> Result<IneqEval> {
        let mut h = DVector::zeros(self.n_ineq());
        let mut dh = DMatrix::zeros(self.n_ineq(), self.nz());
        let fl = eval_h(self.net, x, &self.flow_kinds)?;
        let fj = eval_jacobian(self.net, x, &self.flow_kinds)?;
        for (t, &s_max) in self.limits.iter().enumerate() {
            let (p, q) = (fl[2 * t], fl[2 * t + 1]);
            h[t] = p * p + q * q - s_max * s_max;
            for j in 0..self.dim {
                dh[(t, j)] = 2.0 * (p * fj[(2 * t, j)] + q * fj[(2 * t + 1, j)]);
            }
        }
        let off = self.limits.len();
        for (i, row) in self.lin_ineq.iter().enumerate() {
            h[off + i] = row.value(z);
            for &(j, c) in &row.coeffs {
                dh[(off + i, j)] += c;
            }
        }
        Ok((h, dh, fl, fj))
    }

    fn gradient(&self, z: &[f64]) -> DVector<f64> {
        let mut df = DVector::zeros(self.nz());
        for (g, gen) in self.net.generators().iter().enumerate() {
            df[self.dim + g] = self.scale * (gen.c1 + 2.0 * gen.c2 * z[self.dim + g]);
        }
        df
    }

    fn lagrangian_hessian(
        &self,
        x: &StateVector,
        lam: &DVector<f64>,
        mu: &DVector<f64>,
        fl: &[f64],
        fj: &DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        let mut lxx = DMatrix::zeros(self.nz(), self.nz());
        for (g, gen) in self.net.generators().iter().enumerate() {
            lxx[(self.dim + g, self.dim + g)] = self.scale * 2.0 * gen.c2;
        }
        let nbal = self.balance.len();
        let mut block = weighted_hessian(self.net, x, &self.balance, &lam.as_slice()[..nbal])?;
        if !self.limits.is_empty() {
            // d2(P^2 + Q^2) = 2 (dP dP' + dQ dQ' + P d2P + Q d2Q)
            let c: Vec<f64> = (0..fl.len()).map(|r| 2.0 * mu[r / 2] * fl[r]).collect();
            block += weighted_hessian(self.net, x, &self.flow_kinds, &c)?;
            let scaled = DMatrix::from_fn(fj.nrows(), fj.ncols(), |r, j| 2.0 * mu[r / 2] * fj[(r, j)]);
            block += fj.transpose() * scaled;
        }
        lxx.view_mut((0, 0), (self.dim, self.dim)).copy_from(&block);
        Ok(lxx)
    }
}

struct Point {
    x: StateVector,
    pg: Vec<f64>,
}

/// Power flow at the point's generator voltages and non-slack dispatch. The
/// slack bus generators absorb the balance residue; reactive output is split
/// over each bus's generators in proportion to their ranges.
fn project(net: &Network, point: &Point) -> Result<(StateVector, Vec<f64>, Vec<f64>)> {
    let specs = net
        .buses()
        .iter()
        .enumerate()
        .map(|(b, bus)| {
            let gens = net.generators_at(b);
            if gens.is_empty() {
                return BusSpec::Pq {
                    p: -bus.p_load,
                    q: -bus.q_load,
                };
            }
            let vm = point.x.vm()[b];
            if b == net.slack() {
                BusSpec::Slack { vm }
            } else {
                let pg: f64 = gens.iter().map(|&g| point.pg[g]).sum();
                BusSpec::Pv {
                    p: pg - bus.p_load,
                    vm,
                }
            }
        })
        .collect();
    let pf = newton_pf(net, &PfSpec(specs), &point.x, &PfOptions::default())?;
    let layout = Layout::families(net, &[Family::Pinj, Family::Qinj]);
    let h = eval_h(net, &pf.state, &layout)?;
    let n = net.n_buses();
    let slack = net.slack();
    let mut pg = point.pg.clone();
    if let Some(&first) = net.generators_at(slack).first() {
        let have: f64 = net.generators_at(slack).iter().map(|&g| pg[g]).sum();
        pg[first] += h[slack] + net.buses()[slack].p_load - have;
    }
    let mut qg = vec![0.0; net.generators().len()];
    for (b, bus) in net.buses().iter().enumerate() {
        let gens = net.generators_at(b);
        let total = h[n + b] + bus.q_load;
        let range: f64 = gens
            .iter()
            .map(|&g| net.generators()[g].q_max - net.generators()[g].q_min)
            .sum();
        for &g in gens {
            let gen = &net.generators()[g];
            qg[g] = if range > 0.0 {
                total * (gen.q_max - gen.q_min) / range
            } else {
                total / gens.len() as f64
            };
        }
    }
    Ok((pf.state, pg, qg))
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.amax()
}

/// Largest step in (0, 1] keeping `v + a dv` positive, shortened by `XI`.
fn step_length(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let a = (0..v.len())
        .filter(|&i| dv[i] < 0.0)
        .map(|i| -v[i] / dv[i])
        .fold(f64::INFINITY, f64::min);
    (XI * a).min(1.0)
}

/// Minimum-cost AC operating point of `net` at its current demand.
pub fn solve_acopf(net: &Network, opts: &AcOpfOptions) -> Result<AcOpfSolution> {
    let prob = Problem::new(net);
    let (nb, dim, ng, nz) = (net.n_buses(), prob.dim, prob.ng, prob.nz());
    let (n_eq, n_iq) = (prob.n_eq(), prob.n_ineq());

    // power flow at proportional dispatch, clamped into the bounds
    let mut vm = vec![1.0; nb];
    for (g, gen) in net.generators().iter().enumerate() {
        vm[net.generator_bus(g)] = gen.v_setpoint;
    }
    let rough = Point {
        x: StateVector::new(vm, vec![0.0; nb], net.slack())?,
        pg: proportional_dispatch(net),
    };
    let mut z = match project(net, &rough) {
        Ok((x, pg, qg)) => [x.to_vec(), pg, qg].concat(),
        Err(_) => [rough.x.to_vec(), rough.pg, vec![0.0; ng]].concat(),
    };
    for (b, bus) in net.buses().iter().enumerate() {
        z[b] = z[b].clamp(bus.v_min, bus.v_max);
    }
    for (g, gen) in net.generators().iter().enumerate() {
        z[dim + g] = z[dim + g].clamp(gen.p_min, gen.p_max);
        z[dim + ng + g] = z[dim + ng + g].clamp(gen.q_min, gen.q_max);
    }

    let mut x = StateVector::from_vec(&z[..dim], nb, net.slack())?;
    let (mut g, mut dg) = prob.equalities(&z, &x)?;
    let (mut h, mut dh, mut fl, mut fj) = prob.inequalities(&z, &x)?;
    let mut gamma = 1.0;
    let mut lam = DVector::zeros(n_eq);
    let mut slack = DVector::from_fn(n_iq, |i, _| (-h[i]).max(1.0));
    let mut mu = DVector::from_fn(n_iq, |i, _| (gamma / slack[i]).max(1.0));
    let mut converged = false;
    let mut iterations = 0;

    loop {
        let lx = prob.gradient(&z) + dg.tr_mul(&lam) + dh.tr_mul(&mu);
        let znorm = z.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let feas = inf_norm(&g).max(h.max()) / (1.0 + znorm.max(inf_norm(&slack)));
        let grad = inf_norm(&lx) / (1.0 + inf_norm(&lam).max(inf_norm(&mu)));
        let comp = slack.dot(&mu) / (1.0 + znorm);
        log::trace!(
            "opf iteration {iterations}: cost {:.10e} feas {feas:.1e} grad {grad:.1e} comp {comp:.1e}",
            prob.cost(&z)
        );
        if feas < opts.tol && grad < opts.tol && comp < opts.tol {
            converged = true;
            break;
        }
        if iterations == opts.max_iter {
            break;
        }
        iterations += 1;

        let lxx = prob.lagrangian_hessian(&x, &lam, &mu, &fl, &fj)?;
        let dh_mu = DMatrix::from_fn(n_iq, nz, |i, j| mu[i] / slack[i] * dh[(i, j)]);
        let m = lxx + dh.tr_mul(&dh_mu);
        let w = DVector::from_fn(n_iq, |i, _| (mu[i] * h[i] + gamma) / slack[i]);
        let n_vec = &lx + dh.tr_mul(&w);
        let mut kkt = DMatrix::zeros(nz + n_eq, nz + n_eq);
        kkt.view_mut((0, 0), (nz, nz)).copy_from(&m);
        kkt.view_mut((0, nz), (nz, n_eq)).copy_from(&dg.transpose());
        kkt.view_mut((nz, 0), (n_eq, nz)).copy_from(&dg);
        let mut rhs = DVector::zeros(nz + n_eq);
        rhs.rows_mut(0, nz).copy_from(&(-n_vec));
        rhs.rows_mut(nz, n_eq).copy_from(&(-&g));
        let sol = kkt
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::OpfFailed("singular KKT system".into()))?;
        let dz = sol.rows(0, nz).into_owned();
        let dlam = sol.rows(nz, n_eq).into_owned();
        let dslack = -&h - &slack - &dh * &dz;
        let dmu = DVector::from_fn(n_iq, |i, _| -mu[i] + (gamma - mu[i] * dslack[i]) / slack[i]);

        let alpha_p = step_length(&slack, &dslack);
        let alpha_d = step_length(&mu, &dmu);
        for (zi, d) in z.iter_mut().zip(dz.iter()) {
            *zi += alpha_p * d;
        }
        slack += alpha_p * dslack;
        lam += alpha_d * dlam;
        mu += alpha_d * dmu;
        if n_iq > 0 {
            gamma = SIGMA * slack.dot(&mu) / n_iq as f64;
        }
        if z.iter().any(|v| !v.is_finite()) {
            break;
        }
        x = StateVector::from_vec(&z[..dim], nb, net.slack())?;
        (g, dg) = prob.equalities(&z, &x)?;
        (h, dh, fl, fj) = prob.inequalities(&z, &x)?;
    }
    if !converged {
        return Err(Error::OpfFailed(format!(
            "no convergence in {iterations} iterations"
        )));
    }
    let (state, p_g, q_g) = project(
        net,
        &Point {
            x,
            pg: z[dim..dim + ng].to_vec(),
        },
    )?;
    Ok(AcOpfSolution {
        objective: p_g.iter().zip(net.generators()).map(|(&v, g)| g.cost(v)).sum(),
        state,
        p_g,
        q_g,
        iterations,
    })
}
