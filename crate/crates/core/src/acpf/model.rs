//! Polar-form AC measurement model `h(x)` and its Jacobian.

use nalgebra::DMatrix;

use super::measurement::MeasurementKind;
use super::state::StateVector;
use crate::error::{Error, Result};
use crate::netmodel::{Network, Side};

/// Complex power entering a branch at both terminals.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BranchFlow {
    pub p_fr: f64,
    pub q_fr: f64,
    pub p_to: f64,
    pub q_to: f64,
}

/// Partials of one terminal's flow with respect to
/// (own magnitude, far magnitude, own angle, far angle).
#[derive(Debug, Clone, Copy, Default)]
struct TerminalGrad {
    dp: [f64; 4],
    dq: [f64; 4],
}

/// `S = conj(Y_self) |V_self|^2 + conj(Y_mut) V_self conj(V_far)` in polar form.
#[inline]
fn terminal(
    y_self: num_complex::Complex64,
    y_mut: num_complex::Complex64,
    v: f64,
    v_far: f64,
    theta: f64,
) -> (f64, f64, TerminalGrad) {
    let (g_s, b_s) = (y_self.re, y_self.im);
    let (g_m, b_m) = (y_mut.re, y_mut.im);
    let (s, c) = theta.sin_cos();
    let a = g_m * c + b_m * s;
    let b = g_m * s - b_m * c;
    let vv = v * v_far;
    let p = g_s * v * v + vv * a;
    let q = -b_s * v * v + vv * b;
    // da/dtheta = -b, db/dtheta = a
    let grad = TerminalGrad {
        dp: [2.0 * g_s * v + v_far * a, v * a, -vv * b, vv * b],
        dq: [-2.0 * b_s * v + v_far * b, v * b, vv * a, -vv * a],
    };
    (p, q, grad)
}

/// Flows on every branch at state `x`.
pub fn branch_flows(net: &Network, x: &StateVector) -> Vec<BranchFlow> {
    let (vm, va) = (x.vm(), x.va());
    (0..net.n_branches())
        .map(|k| {
            let (f, t) = net.branch_ends(k);
            let tp = net.two_port(k);
            let (p_fr, q_fr, _) = terminal(tp.y_ff, tp.y_ft, vm[f], vm[t], va[f] - va[t]);
            let (p_to, q_to, _) = terminal(tp.y_tt, tp.y_tf, vm[t], vm[f], va[t] - va[f]);
            BranchFlow {
                p_fr,
                q_fr,
                p_to,
                q_to,
            }
        })
        .collect()
}

/// Net injections (generation minus demand) implied by the flows and shunts.
pub fn injections(net: &Network, x: &StateVector, flows: &[BranchFlow]) -> (Vec<f64>, Vec<f64>) {
    let vm = x.vm();
    let mut p = Vec::with_capacity(net.n_buses());
    let mut q = Vec::with_capacity(net.n_buses());
    for (b, bus) in net.buses().iter().enumerate() {
        let v2 = vm[b] * vm[b];
        let mut pi = bus.g_shunt * v2;
        let mut qi = -bus.b_shunt * v2;
        for &(k, side) in net.incident(b) {
            let fl = &flows[k];
            match side {
                Side::From => {
                    pi += fl.p_fr;
                    qi += fl.q_fr;
                }
                Side::To => {
                    pi += fl.p_to;
                    qi += fl.q_to;
                }
            }
        }
        p.push(pi);
        q.push(qi);
    }
    (p, q)
}

fn check(net: &Network, x: &StateVector, kinds: &[MeasurementKind]) -> Result<()> {
    if x.n_buses() != net.n_buses() || x.slack() != net.slack() {
        return Err(Error::Dimension {
            what: "state buses",
            expected: net.n_buses(),
            got: x.n_buses(),
        });
    }
    kinds.iter().try_for_each(|k| k.validate(net))
}

/// Evaluates `h(x)` for the requested kinds.
pub fn eval_h(net: &Network, x: &StateVector, kinds: &[MeasurementKind]) -> Result<Vec<f64>> {
    check(net, x, kinds)?;
    let flows = branch_flows(net, x);
    let needs_inj = kinds
        .iter()
        .any(|k| matches!(k, MeasurementKind::Pinj(_) | MeasurementKind::Qinj(_)));
    let (p, q) = if needs_inj {
        injections(net, x, &flows)
    } else {
        (Vec::new(), Vec::new())
    };
    Ok(kinds
        .iter()
        .map(|&k| match k {
            MeasurementKind::Vm(b) => x.vm()[b],
            MeasurementKind::Va(b) => x.va()[b],
            MeasurementKind::Pinj(b) => p[b],
            MeasurementKind::Qinj(b) => q[b],
            MeasurementKind::PflowFrom(k) => flows[k].p_fr,
            MeasurementKind::QflowFrom(k) => flows[k].q_fr,
            MeasurementKind::PflowTo(k) => flows[k].p_to,
            MeasurementKind::QflowTo(k) => flows[k].q_to,
        })
        .collect())
}

struct BranchGrad {
    from: TerminalGrad,
    to: TerminalGrad,
}

fn branch_grads(net: &Network, x: &StateVector) -> Vec<BranchGrad> {
    let (vm, va) = (x.vm(), x.va());
    (0..net.n_branches())
        .map(|k| {
            let (f, t) = net.branch_ends(k);
            let tp = net.two_port(k);
            let (_, _, from) = terminal(tp.y_ff, tp.y_ft, vm[f], vm[t], va[f] - va[t]);
            let (_, _, to) = terminal(tp.y_tt, tp.y_tf, vm[t], vm[f], va[t] - va[f]);
            BranchGrad { from, to }
        })
        .collect()
}

/// Scatters a terminal gradient into row `i` of `h` for buses (own, far).
fn scatter(jac: &mut DMatrix<f64>, i: usize, x: &StateVector, own: usize, far: usize, d: &[f64; 4]) {
    jac[(i, x.vm_col(own))] += d[0];
    jac[(i, x.vm_col(far))] += d[1];
    if let Some(c) = x.va_col(own) {
        jac[(i, c)] += d[2];
    }
    if let Some(c) = x.va_col(far) {
        jac[(i, c)] += d[3];
    }
}

/// Jacobian `H = dh/dx` (rows follow `kinds`, columns the flat state order).
pub fn eval_jacobian(net: &Network, x: &StateVector, kinds: &[MeasurementKind]) -> Result<DMatrix<f64>> {
    check(net, x, kinds)?;
    let grads = branch_grads(net, x);
    let mut jac = DMatrix::<f64>::zeros(kinds.len(), x.dim());
    for (i, &kind) in kinds.iter().enumerate() {
        match kind {
            MeasurementKind::Vm(b) => jac[(i, x.vm_col(b))] = 1.0,
            MeasurementKind::Va(b) => {
                if let Some(c) = x.va_col(b) {
                    jac[(i, c)] = 1.0;
                }
            }
            MeasurementKind::Pinj(b) | MeasurementKind::Qinj(b) => {
                let active = matches!(kind, MeasurementKind::Pinj(_));
                let bus = &net.buses()[b];
                let vm = x.vm()[b];
                jac[(i, x.vm_col(b))] += if active {
                    2.0 * bus.g_shunt * vm
                } else {
                    -2.0 * bus.b_shunt * vm
                };
                for &(k, side) in net.incident(b) {
                    let (f, t) = net.branch_ends(k);
                    let (g, own, far) = match side {
                        Side::From => (&grads[k].from, f, t),
                        Side::To => (&grads[k].to, t, f),
                    };
                    scatter(&mut jac, i, x, own, far, if active { &g.dp } else { &g.dq });
                }
            }
            MeasurementKind::PflowFrom(k) | MeasurementKind::QflowFrom(k) => {
                let (f, t) = net.branch_ends(k);
                let g = &grads[k].from;
                let d = if matches!(kind, MeasurementKind::PflowFrom(_)) {
                    &g.dp
                } else {
                    &g.dq
                };
                scatter(&mut jac, i, x, f, t, d);
            }
            MeasurementKind::PflowTo(k) | MeasurementKind::QflowTo(k) => {
                let (f, t) = net.branch_ends(k);
                let g = &grads[k].to;
                let d = if matches!(kind, MeasurementKind::PflowTo(_)) {
                    &g.dp
                } else {
                    &g.dq
                };
                scatter(&mut jac, i, x, t, f, d);
            }
        }
    }
    Ok(jac)
}

/// Second derivatives of one terminal's (P, Q) over
/// (own magnitude, far magnitude, own angle, far angle).
fn terminal_hessian(
    y_self: num_complex::Complex64,
    y_mut: num_complex::Complex64,
    v: f64,
    v_far: f64,
    theta: f64,
) -> ([[f64; 4]; 4], [[f64; 4]; 4]) {
    let (g_m, b_m) = (y_mut.re, y_mut.im);
    let (s, c) = theta.sin_cos();
    let a = g_m * c + b_m * s;
    let b = g_m * s - b_m * c;
    let vv = v * v_far;
    let p = [
        [2.0 * y_self.re, a, -v_far * b, v_far * b],
        [a, 0.0, -v * b, v * b],
        [-v_far * b, -v * b, -vv * a, vv * a],
        [v_far * b, v * b, vv * a, -vv * a],
    ];
    let q = [
        [-2.0 * y_self.im, b, v_far * a, -v_far * a],
        [b, 0.0, v * a, -v * a],
        [v_far * a, v * a, -vv * b, vv * b],
        [-v_far * a, -v * a, vv * b, -vv * b],
    ];
    (p, q)
}

/// `sum_i c_i * d2 h_i / dx2` over the requested kinds (an `n x n` matrix).
pub fn weighted_hessian(
    net: &Network,
    x: &StateVector,
    kinds: &[MeasurementKind],
    c: &[f64],
) -> Result<DMatrix<f64>> {
    check(net, x, kinds)?;
    if c.len() != kinds.len() {
        return Err(Error::Dimension {
            what: "hessian coefficients",
            expected: kinds.len(),
            got: c.len(),
        });
    }
    let (vm, va) = (x.vm(), x.va());
    let n = x.dim();
    let mut hess = DMatrix::<f64>::zeros(n, n);
    // per-terminal coefficient of (P, Q), indexed [branch][side]
    let mut coef = vec![[[0.0f64; 2]; 2]; net.n_branches()];
    let mut add_terminal = |k: usize, side: usize, cp: f64, cq: f64| {
        coef[k][side][0] += cp;
        coef[k][side][1] += cq;
    };
    for (&kind, &ci) in kinds.iter().zip(c) {
        if ci == 0.0 {
            continue;
        }
        match kind {
            MeasurementKind::Vm(_) | MeasurementKind::Va(_) => {}
            MeasurementKind::Pinj(b) | MeasurementKind::Qinj(b) => {
                let active = matches!(kind, MeasurementKind::Pinj(_));
                let bus = &net.buses()[b];
                let j = x.vm_col(b);
                hess[(j, j)] += ci
                    * if active {
                        2.0 * bus.g_shunt
                    } else {
                        -2.0 * bus.b_shunt
                    };
                for &(k, side) in net.incident(b) {
                    let s = if side == Side::From { 0 } else { 1 };
                    if active {
                        add_terminal(k, s, ci, 0.0);
                    } else {
                        add_terminal(k, s, 0.0, ci);
                    }
                }
            }
            MeasurementKind::PflowFrom(k) => add_terminal(k, 0, ci, 0.0),
            MeasurementKind::QflowFrom(k) => add_terminal(k, 0, 0.0, ci),
            MeasurementKind::PflowTo(k) => add_terminal(k, 1, ci, 0.0),
            MeasurementKind::QflowTo(k) => add_terminal(k, 1, 0.0, ci),
        }
    }
    for (k, cf) in coef.iter().enumerate() {
        let (f, t) = net.branch_ends(k);
        let tp = net.two_port(k);
        for (side, &[cp, cq]) in cf.iter().enumerate() {
            if cp == 0.0 && cq == 0.0 {
                continue;
            }
            let (own, far, y_self, y_mut) = if side == 0 {
                (f, t, tp.y_ff, tp.y_ft)
            } else {
                (t, f, tp.y_tt, tp.y_tf)
            };
            let (hp, hq) = terminal_hessian(y_self, y_mut, vm[own], vm[far], va[own] - va[far]);
            let cols = [
                Some(x.vm_col(own)),
                Some(x.vm_col(far)),
                x.va_col(own),
                x.va_col(far),
            ];
            for (r, cr) in cols.iter().enumerate() {
                let Some(cr) = *cr else { continue };
                for (s, cs) in cols.iter().enumerate() {
                    let Some(cs) = *cs else { continue };
                    hess[(cr, cs)] += cp * hp[r][s] + cq * hq[r][s];
                }
            }
        }
    }
    Ok(hess)
}
