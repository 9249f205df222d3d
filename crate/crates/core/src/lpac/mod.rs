//! Cold-start LPAC approximation of the OPF problem as a linear program.
//!
//! Voltage magnitudes are written as `1 + v`, `phi` stands in for the cosine
//! of each branch angle difference and active flows use unit magnitudes.

mod lp;
mod simplex;

use serde::{Deserialize, Serialize};

pub use lp::{Constraint, LinearProgram, Sense};
pub use simplex::{simplex_solve, simplex_solve_with, PivotRule, SimplexOptions, SimplexSolution, CERT_TOL};

use crate::acpf::{Layout, MeasurementKind, MeasurementSet};
use crate::error::{Error, Result};
use crate::netmodel::Network;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LpacOptions {
    /// Tangent cuts on the cosine per branch.
    pub n_cos_tangents: usize,
    /// Sides of the polygon replacing each apparent-power limit.
    pub n_circle_cuts: usize,
    /// Pieces of the linearized generator cost.
    pub n_cost_segments: usize,
    /// How to choose among optimal solutions.
    pub tie_break: TieBreak,
}

/// Selection rule on the optimal face. The LP cost barely depends on the
/// voltage deviations `v`, so a vertex solution may park them on their bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Whatever vertex the simplex method reaches.
    Vertex,
    /// Minimize `sum |v|` subject to optimal cost.
    #[default]
    NominalVoltage,
}

impl Default for LpacOptions {
    fn default() -> Self {
        LpacOptions {
            n_cos_tangents: 9,
            n_circle_cuts: 8,
            n_cost_segments: 6,
            tie_break: TieBreak::default(),
        }
    }
}

/// Column positions of the LPAC variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LpacIndex {
    n_bus: usize,
    n_branch: usize,
    n_gen: usize,
}

impl LpacIndex {
    pub fn new(net: &Network) -> Self {
        LpacIndex {
            n_bus: net.n_buses(),
            n_branch: net.n_branches(),
            n_gen: net.generators().len(),
        }
    }
    pub fn v(&self, b: usize) -> usize {
        b
    }
    pub fn theta(&self, b: usize) -> usize {
        self.n_bus + b
    }
    pub fn phi(&self, k: usize) -> usize {
        2 * self.n_bus + k
    }
    pub fn p_fr(&self, k: usize) -> usize {
        2 * self.n_bus + self.n_branch + k
    }
    pub fn q_fr(&self, k: usize) -> usize {
        2 * self.n_bus + 2 * self.n_branch + k
    }
    pub fn p_to(&self, k: usize) -> usize {
        2 * self.n_bus + 3 * self.n_branch + k
    }
    pub fn q_to(&self, k: usize) -> usize {
        2 * self.n_bus + 4 * self.n_branch + k
    }
    pub fn p_g(&self, g: usize) -> usize {
        2 * self.n_bus + 5 * self.n_branch + g
    }
    pub fn q_g(&self, g: usize) -> usize {
        2 * self.n_bus + 5 * self.n_branch + self.n_gen + g
    }
    pub fn cost(&self, g: usize) -> usize {
        2 * self.n_bus + 5 * self.n_branch + 2 * self.n_gen + g
    }
    pub fn n_vars(&self) -> usize {
        2 * self.n_bus + 5 * self.n_branch + 3 * self.n_gen
    }
}

/// Tangent points `-theta_max..=theta_max`, equally spaced.
pub fn cos_tangent_points(theta_max: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| -theta_max + 2.0 * theta_max * i as f64 / (n - 1) as f64)
        .collect()
}

/// The cut `phi <= cos(t) - sin(t) (theta - t)` as `(slope, intercept)` so
/// that `phi <= intercept + slope * theta`.
pub fn cos_tangent(t: f64) -> (f64, f64) {
    let (s, c) = t.sin_cos();
    (-s, c + s * t)
}

/// Number of rows `build_lpac` emits.
pub fn lpac_row_count(net: &Network, opts: &LpacOptions) -> usize {
    let limited_terminals = 2 * net.branches().iter().filter(|b| b.s_max > 0.0).count();
    4 * net.n_branches()
        + 2 * net.n_buses()
        + net.n_branches() * (opts.n_cos_tangents + 2)
        + limited_terminals * opts.n_circle_cuts
        + net
            .generators()
            .iter()
            .map(|g| {
                if g.p_max > g.p_min {
                    opts.n_cost_segments
                } else {
                    1
                }
            })
            .sum::<usize>()
}

/// Assembles the LPAC linear program for `net` at its current demand.
pub fn build_lpac(net: &Network, opts: &LpacOptions) -> Result<LinearProgram> {
    if opts.n_cos_tangents < 2 || opts.n_circle_cuts < 3 || opts.n_cost_segments < 1 {
        return Err(Error::InvalidArgument(
            "need at least 2 cosine tangents, 3 polygon sides and 1 cost segment".into(),
        ));
    }
    let ix = LpacIndex::new(net);
    let mut lp = LinearProgram::new();
    let inf = f64::INFINITY;
    for bus in net.buses() {
        lp.add_var(format!("v_{}", bus.id), bus.v_min - 1.0, bus.v_max - 1.0, 0.0);
    }
    for (b, bus) in net.buses().iter().enumerate() {
        let (lo, hi) = if b == net.slack() { (0.0, 0.0) } else { (-inf, inf) };
        lp.add_var(format!("theta_{}", bus.id), lo, hi, 0.0);
    }
    for (k, br) in net.branches().iter().enumerate() {
        lp.add_var(format!("phi_{}", k + 1), br.theta_max.cos().min(1.0), inf, 0.0);
    }
    for prefix in ["pfr", "qfr", "pto", "qto"] {
        for k in 0..net.n_branches() {
            lp.add_var(format!("{prefix}_{}", k + 1), -inf, inf, 0.0);
        }
    }
    for (g, gen) in net.generators().iter().enumerate() {
        lp.add_var(format!("pg_{}", g + 1), gen.p_min, gen.p_max, 0.0);
    }
    for (g, gen) in net.generators().iter().enumerate() {
        lp.add_var(format!("qg_{}", g + 1), gen.q_min, gen.q_max, 0.0);
    }
    for g in 0..net.generators().len() {
        lp.add_var(format!("cost_{}", g + 1), -inf, inf, 1.0);
    }
    debug_assert_eq!(lp.n_vars(), ix.n_vars());

    // flow definitions
    for k in 0..net.n_branches() {
        let (f, t) = net.branch_ends(k);
        let tp = net.two_port(k);
        let (g_ff, b_ff) = (tp.y_ff.re, tp.y_ff.im);
        let (g_ft, b_ft) = (tp.y_ft.re, tp.y_ft.im);
        let (g_tf, b_tf) = (tp.y_tf.re, tp.y_tf.im);
        let (g_tt, b_tt) = (tp.y_tt.re, tp.y_tt.im);
        let (th_f, th_t, phi) = (ix.theta(f), ix.theta(t), ix.phi(k));
        let (v_f, v_t) = (ix.v(f), ix.v(t));
        // p_fr = g_ff + g_ft phi + b_ft (th_f - th_t)
        lp.add_constraint(
            format!("pfr_def_{}", k + 1),
            vec![(ix.p_fr(k), 1.0), (phi, -g_ft), (th_f, -b_ft), (th_t, b_ft)],
            Sense::Eq,
            g_ff,
        );
        // q_fr = -b_ff (1 + 2 v_f) + g_ft (th_f - th_t) - b_ft (phi + v_f + v_t)
        lp.add_constraint(
            format!("qfr_def_{}", k + 1),
            vec![
                (ix.q_fr(k), 1.0),
                (v_f, 2.0 * b_ff + b_ft),
                (v_t, b_ft),
                (th_f, -g_ft),
                (th_t, g_ft),
                (phi, b_ft),
            ],
            Sense::Eq,
            -b_ff,
        );
        // p_to = g_tt + g_tf phi + b_tf (th_t - th_f)
        lp.add_constraint(
            format!("pto_def_{}", k + 1),
            vec![(ix.p_to(k), 1.0), (phi, -g_tf), (th_t, -b_tf), (th_f, b_tf)],
            Sense::Eq,
            g_tt,
        );
        // q_to = -b_tt (1 + 2 v_t) + g_tf (th_t - th_f) - b_tf (phi + v_f + v_t)
        lp.add_constraint(
            format!("qto_def_{}", k + 1),
            vec![
                (ix.q_to(k), 1.0),
                (v_t, 2.0 * b_tt + b_tf),
                (v_f, b_tf),
                (th_t, -g_tf),
                (th_f, g_tf),
                (phi, b_tf),
            ],
            Sense::Eq,
            -b_tt,
        );
    }

    // power balance: generation - demand - shunt = sum of outgoing flows
    for (b, bus) in net.buses().iter().enumerate() {
        let mut p = vec![(ix.v(b), -2.0 * bus.g_shunt)];
        let mut q = vec![(ix.v(b), 2.0 * bus.b_shunt)];
        for &g in net.generators_at(b) {
            p.push((ix.p_g(g), 1.0));
            q.push((ix.q_g(g), 1.0));
        }
        for &(k, side) in net.incident(b) {
            let (pc, qc) = match side {
                crate::netmodel::Side::From => (ix.p_fr(k), ix.q_fr(k)),
                crate::netmodel::Side::To => (ix.p_to(k), ix.q_to(k)),
            };
            p.push((pc, -1.0));
            q.push((qc, -1.0));
        }
        lp.add_constraint(
            format!("p_balance_{}", bus.id),
            p,
            Sense::Eq,
            bus.p_load + bus.g_shunt,
        );
        lp.add_constraint(
            format!("q_balance_{}", bus.id),
            q,
            Sense::Eq,
            bus.q_load - bus.b_shunt,
        );
    }

    // cosine envelope and angle limits
    for (k, br) in net.branches().iter().enumerate() {
        let (f, t) = net.branch_ends(k);
        let (th_f, th_t, phi) = (ix.theta(f), ix.theta(t), ix.phi(k));
        for (i, &pt) in cos_tangent_points(br.theta_max, opts.n_cos_tangents)
            .iter()
            .enumerate()
        {
            let (slope, icpt) = cos_tangent(pt);
            lp.add_constraint(
                format!("cos_{}_{}", k + 1, i + 1),
                vec![(phi, 1.0), (th_f, -slope), (th_t, slope)],
                Sense::Le,
                icpt,
            );
        }
        lp.add_constraint(
            format!("angle_hi_{}", k + 1),
            vec![(th_f, 1.0), (th_t, -1.0)],
            Sense::Le,
            br.theta_max,
        );
        lp.add_constraint(
            format!("angle_lo_{}", k + 1),
            vec![(th_f, 1.0), (th_t, -1.0)],
            Sense::Ge,
            -br.theta_max,
        );
    }

    // apparent power: polygon inscribed in the limit circle
    let n = opts.n_circle_cuts;
    let inner = (std::f64::consts::PI / n as f64).cos();
    for (k, br) in net.branches().iter().enumerate() {
        if br.s_max <= 0.0 {
            continue;
        }
        for (side, pc, qc) in [("fr", ix.p_fr(k), ix.q_fr(k)), ("to", ix.p_to(k), ix.q_to(k))] {
            for i in 0..n {
                let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                lp.add_constraint(
                    format!("smax_{side}_{}_{}", k + 1, i + 1),
                    vec![(pc, a.cos()), (qc, a.sin())],
                    Sense::Le,
                    br.s_max * inner,
                );
            }
        }
    }

    // cost epigraph through secants of the quadratic
    for (g, gen) in net.generators().iter().enumerate() {
        let (pg, t) = (ix.p_g(g), ix.cost(g));
        if gen.p_max > gen.p_min {
            let step = (gen.p_max - gen.p_min) / opts.n_cost_segments as f64;
            for s in 0..opts.n_cost_segments {
                let p0 = gen.p_min + step * s as f64;
                let p1 = if s + 1 == opts.n_cost_segments {
                    gen.p_max
                } else {
                    p0 + step
                };
                let slope = (gen.cost(p1) - gen.cost(p0)) / (p1 - p0);
                // t >= cost(p0) + slope (p - p0)
                lp.add_constraint(
                    format!("cost_{}_{}", g + 1, s + 1),
                    vec![(t, 1.0), (pg, -slope)],
                    Sense::Ge,
                    gen.cost(p0) - slope * p0,
                );
            }
        } else {
            lp.add_constraint(
                format!("cost_{}_1", g + 1),
                vec![(t, 1.0)],
                Sense::Ge,
                gen.cost(gen.p_min),
            );
        }
    }
    Ok(lp)
}

/// Solved LPAC point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LpacSolution {
    /// Magnitude deviations from 1 p.u.
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
    pub p_fr: Vec<f64>,
    pub q_fr: Vec<f64>,
    pub p_to: Vec<f64>,
    pub q_to: Vec<f64>,
    pub p_g: Vec<f64>,
    pub q_g: Vec<f64>,
    /// Per-bus demand the problem was built for.
    pub loads: Vec<(f64, f64)>,
    pub objective: f64,
    pub primal_violation: f64,
    pub min_reduced_cost: f64,
}

impl LpacSolution {
    fn from_vertex(net: &Network, sol: &SimplexSolution) -> Self {
        let ix = LpacIndex::new(net);
        let x = &sol.x;
        let nb = net.n_buses();
        let ne = net.n_branches();
        let ng = net.generators().len();
        let pick = |f: &dyn Fn(usize) -> usize, n: usize| (0..n).map(|i| x[f(i)]).collect::<Vec<_>>();
        LpacSolution {
            v: pick(&|b| ix.v(b), nb),
            theta: pick(&|b| ix.theta(b), nb),
            phi: pick(&|k| ix.phi(k), ne),
            p_fr: pick(&|k| ix.p_fr(k), ne),
            q_fr: pick(&|k| ix.q_fr(k), ne),
            p_to: pick(&|k| ix.p_to(k), ne),
            q_to: pick(&|k| ix.q_to(k), ne),
            p_g: pick(&|g| ix.p_g(g), ng),
            q_g: pick(&|g| ix.q_g(g), ng),
            loads: net.loads(),
            objective: sol.objective,
            primal_violation: sol.primal_violation,
            min_reduced_cost: sol.min_reduced_cost,
        }
    }
}

/// Builds and solves the LPAC problem.
pub fn solve_lpac(net: &Network, opts: &LpacOptions) -> Result<LpacSolution> {
    let lp = build_lpac(net, opts)?;
    let sol = simplex_solve(&lp)?;
    let sol = match opts.tie_break {
        TieBreak::Vertex => sol,
        TieBreak::NominalVoltage => match nominal_voltage_solution(net, &lp, &sol) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("voltage tie-break failed, keeping the vertex solution: {e}");
                sol
            }
        },
    };
    Ok(LpacSolution::from_vertex(net, &sol))
}

/// Relative slack on the cost when re-solving over the optimal face.
const FACE_TOL: f64 = 1e-9;

/// Second stage: smallest `sum |v|` among points within `FACE_TOL` of the
/// optimal cost. Reduced costs are those of the first stage, which certify
/// the cost.
fn nominal_voltage_solution(
    net: &Network,
    lp: &LinearProgram,
    first: &SimplexSolution,
) -> Result<SimplexSolution> {
    let ix = LpacIndex::new(net);
    let n = lp.n_vars();
    let mut face = lp.clone();
    face.cost = vec![0.0; n];
    let cost_row: Vec<(usize, f64)> = lp
        .cost
        .iter()
        .enumerate()
        .filter(|&(_, &c)| c != 0.0)
        .map(|(j, &c)| (j, c))
        .collect();
    face.add_constraint(
        "optimal_cost",
        cost_row,
        Sense::Le,
        first.objective + FACE_TOL * first.objective.abs().max(1.0),
    );
    for b in 0..net.n_buses() {
        let t = face.add_var(format!("abs_v_{b}"), 0.0, f64::INFINITY, 1.0);
        face.add_constraint(
            format!("abs_v_hi_{b}"),
            vec![(t, 1.0), (ix.v(b), -1.0)],
            Sense::Ge,
            0.0,
        );
        face.add_constraint(
            format!("abs_v_lo_{b}"),
            vec![(t, 1.0), (ix.v(b), 1.0)],
            Sense::Ge,
            0.0,
        );
    }
    let second = simplex_solve(&face)?;
    let x = second.x[..n].to_vec();
    Ok(SimplexSolution {
        objective: lp.objective(&x),
        primal_violation: lp.max_violation(&x),
        min_reduced_cost: first.min_reduced_cost,
        iterations: first.iterations + second.iterations,
        x,
    })
}

/// Measurement vector of an LPAC solution in the canonical layout. Flows are
/// the LP's flow variables, not re-evaluated through the AC equations.
pub fn lpac_to_measurements(net: &Network, sol: &LpacSolution) -> Result<MeasurementSet> {
    let layout = Layout::canonical(net);
    let nb = net.n_buses();
    if sol.v.len() != nb || sol.p_fr.len() != net.n_branches() || sol.loads.len() != nb {
        return Err(Error::Dimension {
            what: "LPAC solution buses",
            expected: nb,
            got: sol.v.len(),
        });
    }
    let mut p_inj: Vec<f64> = sol.loads.iter().map(|l| -l.0).collect();
    let mut q_inj: Vec<f64> = sol.loads.iter().map(|l| -l.1).collect();
    for g in 0..net.generators().len() {
        let b = net.generator_bus(g);
        p_inj[b] += sol.p_g[g];
        q_inj[b] += sol.q_g[g];
    }
    let values = layout
        .iter()
        .map(|&k| match k {
            MeasurementKind::Vm(b) => 1.0 + sol.v[b],
            MeasurementKind::Va(b) => sol.theta[b] - sol.theta[net.slack()],
            MeasurementKind::Pinj(b) => p_inj[b],
            MeasurementKind::Qinj(b) => q_inj[b],
            MeasurementKind::PflowFrom(k) => sol.p_fr[k],
            MeasurementKind::QflowFrom(k) => sol.q_fr[k],
            MeasurementKind::PflowTo(k) => sol.p_to[k],
            MeasurementKind::QflowTo(k) => sol.q_to[k],
        })
        .collect();
    MeasurementSet::new(layout, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::netmodel::parse_case;

    const TWO_BUS: &str = "\
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;
  2 1 40 10 0 0 1 1 0 230 1 1.1 0.9;
];
mpc.gen = [
  1 0 0 100 -100 1 100 1 200 0;
];
mpc.branch = [
  1 2 0.01 0.1 0 100 0 0 0 0 1 -30 30;
];
mpc.gencost = [
  2 0 0 3 0.01 20 0;
];
";

    #[test]
    fn two_bus_dimensions() {
        let net = parse_case(TWO_BUS).unwrap();
        let opts = LpacOptions::default();
        let lp = build_lpac(&net, &opts).unwrap();
        // v, theta per bus; phi and four flows per branch; p, q, cost per generator
        assert_eq!(lp.n_vars(), 2 + 2 + 1 + 4 + 3);
        // 4 flow rows, 4 balance rows, 9 + 2 envelope/angle rows, 2 * 8 polygon rows, 6 cost rows
        assert_eq!(lp.n_constraints(), 4 + 4 + 11 + 16 + 6);
        assert_eq!(lp.n_constraints(), lpac_row_count(&net, &opts));
    }

    #[test]
    fn tangent_at_zero_is_unit_cap() {
        let (slope, icpt) = cos_tangent(0.0);
        assert_eq!((slope, icpt), (-0.0, 1.0));
    }

    #[test]
    fn rejects_small_counts() {
        let net = fixtures::case5();
        let opts = LpacOptions {
            n_cos_tangents: 1,
            ..LpacOptions::default()
        };
        assert!(matches!(build_lpac(&net, &opts), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn two_bus_solution_serves_load() {
        let net = parse_case(TWO_BUS).unwrap();
        let sol = solve_lpac(&net, &LpacOptions::default()).unwrap();
        assert!(sol.primal_violation < 1e-9);
        assert!(sol.min_reduced_cost >= -1e-9);
        // generation covers demand plus the linearized losses
        assert!(sol.p_g[0] >= 0.4 - 1e-9);
        let z = lpac_to_measurements(&net, &sol).unwrap();
        assert_eq!(z.len(), 2 * 2 + 2 * 2 + 4);
        assert_eq!(z.get(MeasurementKind::PflowFrom(0)), Some(sol.p_fr[0]));
    }

    #[test]
    fn zero_deviation_gives_unit_magnitudes() {
        let net = fixtures::case5();
        let nb = net.n_buses();
        let ne = net.n_branches();
        let sol = LpacSolution {
            v: vec![0.0; nb],
            theta: vec![0.0; nb],
            phi: vec![1.0; ne],
            p_fr: vec![0.0; ne],
            q_fr: vec![0.0; ne],
            p_to: vec![0.0; ne],
            q_to: vec![0.0; ne],
            p_g: vec![0.0; net.generators().len()],
            q_g: vec![0.0; net.generators().len()],
            loads: net.loads(),
            objective: 0.0,
            primal_violation: 0.0,
            min_reduced_cost: 0.0,
        };
        let z = lpac_to_measurements(&net, &sol).unwrap();
        assert_eq!(z.len(), 44);
        for b in 0..nb {
            assert_eq!(z.get(MeasurementKind::Vm(b)), Some(1.0));
        }
    }
}
