//! Subcommand stages.  Each stage reads what it needs from a [`RunConfig`], measures, and
//! returns its verdicts, tables and notes; [`run`] writes the artifacts.

use crate::config::{ConfigError, DomainSpec, RunConfig};
use critical_ls::bubble::{radial_integral, RadialKind};
use critical_ls::coupling::{all_profiles, check_a2, row_values, CouplingModel, SyncProfile};
use critical_ls::domain::{robin_critical_points, DomainModel};
use critical_ls::operator::{error_term_norms, AnsatzState, Assembly, BasisParams, GalerkinBasis};
use critical_ls::point::{self, Point};
use critical_ls::reduction::{
    energy, find_critical_point, fit_expansion, interaction_weight, leading_constants, reduced_energy, solve_remainder,
    EnergySample, ExpansionModel, RemainderParams, ReducedEnergyModel, SearchParams, Trajectory,
};
use critical_ls::verification::{
    coercivity_constant, coercivity_sweep, coercivity_unrestricted, joint_slope_regression, kernel_dimension,
    slope_regression, VerificationReport,
};
use critical_ls::Error;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Subcommand {
    CouplingCheck,
    Robin,
    ErrorScaling,
    Reduce,
    EnergyFit,
    Coercivity,
    VerifyAll,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::CouplingCheck => "coupling-check",
            Subcommand::Robin => "robin",
            Subcommand::ErrorScaling => "error-scaling",
            Subcommand::Reduce => "reduce",
            Subcommand::EnergyFit => "energy-fit",
            Subcommand::Coercivity => "coercivity",
            Subcommand::VerifyAll => "verify-all",
        }
    }

    const STAGES: [Subcommand; 6] = [
        Subcommand::CouplingCheck,
        Subcommand::Robin,
        Subcommand::ErrorScaling,
        Subcommand::Reduce,
        Subcommand::EnergyFit,
        Subcommand::Coercivity,
    ];
}

#[derive(Debug, Clone, PartialEq)]
pub struct Options {
    pub out: PathBuf,
    pub tolerance_scale: f64,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Table { name: name.to_string(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        let body = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 records");
        format!("#schema=1\n{body}")
    }
}

fn f(x: f64) -> String {
    format!("{x:e}")
}

fn pt(p: &Point) -> Vec<String> {
    p.iter().map(|v| f(*v)).collect()
}

/// A stage that could not complete: the claim being measured and the module error.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub claim: String,
    pub error: Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutput {
    pub stage: Subcommand,
    pub report: VerificationReport,
    pub tables: Vec<Table>,
    pub notes: Vec<String>,
    pub failure: Option<Failure>,
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    ts: f64,
    seed: u64,
}

trait Claim<T> {
    fn claim(self, name: &str) -> Result<T, Failure>;
}

impl<T> Claim<T> for critical_ls::Result<T> {
    fn claim(self, name: &str) -> Result<T, Failure> {
        self.map_err(|error| Failure { claim: name.to_string(), error })
    }
}

fn config_missing(stage: Subcommand, what: &str) -> Failure {
    Failure { claim: stage.name().to_string(), error: Error::InvalidState(format!("configuration has no {what}")) }
}

struct Stage {
    report: VerificationReport,
    tables: Vec<Table>,
    notes: Vec<String>,
}

impl Stage {
    fn new(name: &str) -> Self {
        Stage { report: VerificationReport::new(name), tables: Vec::new(), notes: Vec::new() }
    }
}

fn coupling_of(ctx: &Ctx, stage: Subcommand) -> Result<(CouplingModel, Vec<SyncProfile>), Failure> {
    let c = ctx.cfg.coupling.clone().ok_or_else(|| config_missing(stage, "[coupling]"))?;
    let p = all_profiles(&c).claim("coupling.profiles")?;
    Ok((c, p))
}

fn domain_of(ctx: &Ctx, stage: Subcommand) -> Result<DomainModel, Failure> {
    ctx.cfg.domain.as_ref().ok_or_else(|| config_missing(stage, "[domain]"))?.build().claim("domain")
}

fn xi_of(ctx: &Ctx, stage: Subcommand) -> Result<Vec<Point>, Failure> {
    ctx.cfg.xi.clone().ok_or_else(|| config_missing(stage, "ansatz.xi"))
}

fn coupling_check(ctx: &Ctx) -> Result<Stage, Failure> {
    let mut st = Stage::new("coupling-check");
    let (c, profiles) = coupling_of(ctx, Subcommand::CouplingCheck)?;
    let mut tab = Table::new("coupling", &["group", "component", "c", "e", "row_value"]);
    let mut ktab = Table::new("kernel", &["group", "resolution", "radial", "angular", "total"]);
    let n = ctx.cfg.kernel_resolution;
    for (h, p) in profiles.iter().enumerate() {
        let rows = row_values(p, &c);
        for (k, i) in c.group(h).enumerate() {
            tab.push(vec![(h + 1).to_string(), (i + 1).to_string(), f(p.c[k]), f(p.e[k]), f(rows[k])]);
        }
        let row_res = rows.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
        st.report.at_most(&format!("coupling.group{}.row_residual", h + 1), 1e-12 * ctx.ts, row_res);
        st.report.at_most(&format!("coupling.group{}.eigenvalue_residual", h + 1), 1e-10 * ctx.ts, p.eigenvalue_residual);
        let a2 = check_a2(&c, h);
        st.report.holds(&format!("coupling.group{}.a2_invertible", h + 1), a2.condition_number, a2.holds);
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:.5}")).collect::<Vec<_>>().join(", ");
        st.notes.push(format!(
            "group {}: c=({}), e=({}), eigenvalue residual {:.1e}",
            h + 1,
            join(&p.c),
            join(&p.e),
            p.eigenvalue_residual
        ));
        let mut totals = Vec::new();
        for res in [n, 2 * n] {
            let k = kernel_dimension(p, &c, res).claim(&format!("kernel.group{}", h + 1))?;
            ktab.push(vec![(h + 1).to_string(), res.to_string(), k.radial.to_string(), k.angular.to_string(), k.total.to_string()]);
            totals.push((k.radial, k.angular, k.total));
        }
        let ok = totals.iter().all(|t| *t == (1, 1, 5));
        st.report.holds(&format!("kernel.group{}.dimension_1_1_5_refined", h + 1), totals[1].2 as f64, ok);
        st.notes.push(format!("group {}: kernel (radial, angular, total) = {:?} at N={n}, {:?} at N={}", h + 1, totals[0], totals[1], 2 * n));
    }
    st.tables.push(tab);
    st.tables.push(ktab);
    Ok(st)
}

fn robin_stage(ctx: &Ctx) -> Result<Stage, Failure> {
    let mut st = Stage::new("robin");
    let dcfg = ctx.cfg.domain.as_ref().ok_or_else(|| config_missing(Subcommand::Robin, "[domain]"))?;
    let dom = dcfg.build().claim("domain")?;
    let c = dom.center();
    let mut land = Table::new("robin_landscape", &["t", "x0", "x1", "x2", "x3", "r"]);
    let reach = 0.5 * dom.diam() - 2.0 * dom.eta;
    let samples = if matches!(dcfg.spec, DomainSpec::GridBall { .. } | DomainSpec::GridBox { .. }) { 5 } else { 21 };
    for k in 0..samples {
        let t = -1.0 + 2.0 * k as f64 / (samples - 1) as f64;
        let mut x = c;
        x[0] += t * reach * 0.5;
        let r = dom.robin(&x).claim("robin.landscape")?;
        let mut row = vec![f(t)];
        row.extend(pt(&x));
        row.push(f(r));
        land.push(row);
    }
    st.tables.push(land);
    if let DomainSpec::Ball { radius, .. } = dcfg.spec {
        let r0 = dom.robin(&c).claim("robin.center")?;
        let exact = 1.0 / (4.0 * std::f64::consts::PI.powi(2) * radius * radius);
        st.report.within("robin.ball_center_value", exact, r0, 1e-8 * exact * ctx.ts);
    }
    if let Some(an) = dcfg.analytic() {
        // grid solver against the analytic Green function
        let adom = an.build().claim("domain.analytic")?;
        let mut worst: f64 = 0.0;
        let mut cmp = Table::new("robin_grid", &["x0", "x1", "x2", "x3", "grid", "analytic", "rel_err"]);
        let off = 0.25 * adom.diam() * 0.5;
        let probes = [c, point::axpy(&c, off, &point::unit(0)), point::axpy(&c, -off, &point::unit(1))];
        for x in probes {
            let g = dom.robin_unchecked(&x).claim("robin.grid")?;
            let a = adom.robin_unchecked(&x).claim("robin.analytic")?;
            let rel = (g - a).abs() / a.abs();
            worst = worst.max(rel);
            let mut row = pt(&x);
            row.extend([f(g), f(a), f(rel)]);
            cmp.push(row);
        }
        st.report.at_most("robin.grid_vs_analytic_rel_err", 0.02 * ctx.ts, worst);
        st.notes.push(format!("grid Robin function: worst relative error {worst:.3e} against the analytic value"));
        st.tables.push(cmp);
        return Ok(st);
    }
    let pts = robin_critical_points(&dom, ctx.cfg.robin_starts, ctx.seed).claim("robin.critical_points")?;
    let mut tab = Table::new("robin_points", &["x0", "x1", "x2", "x3", "r", "hess0", "hess1", "hess2", "hess3", "degenerate"]);
    for p in &pts {
        let mut row = pt(&p.point);
        row.push(f(p.value));
        row.extend(p.hessian_eigenvalues.iter().map(|v| f(*v)));
        row.push(p.degenerate.to_string());
        tab.push(row);
        st.notes.push(format!(
            "critical point ({:.5}, {:.5}, {:.5}, {:.5}), r = {:.5}, {}",
            p.point[0],
            p.point[1],
            p.point[2],
            p.point[3],
            p.value,
            if p.degenerate { "degenerate" } else { "non-degenerate" }
        ));
    }
    st.tables.push(tab);
    st.report.at_least("robin.critical_points_found", 1.0, pts.len() as f64);
    let target = ctx.cfg.robin_expected.unwrap_or(c);
    if let Some(best) = pts.iter().min_by(|a, b| point::dist(&a.point, &target).total_cmp(&point::dist(&b.point, &target))) {
        st.report.at_most("robin.critical_point_location", 1e-6 * dom.diam() * ctx.ts, point::dist(&best.point, &target));
        let min_eig = best.hessian_eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        st.report.holds("robin.hessian_positive_definite", min_eig, min_eig > 0.0 && !best.degenerate);
    }
    Ok(st)
}

fn lambda_vec(c: &CouplingModel, lam: f64) -> Vec<f64> {
    vec![lam; c.m]
}

fn error_scaling(ctx: &Ctx) -> Result<Stage, Failure> {
    let mut st = Stage::new("error-scaling");
    let (c, profiles) = coupling_of(ctx, Subcommand::ErrorScaling)?;
    let dom = domain_of(ctx, Subcommand::ErrorScaling)?;
    let xi = xi_of(ctx, Subcommand::ErrorScaling)?;
    let lam = ctx.cfg.scaling_lambda;
    let q = c.q();
    let mut tab = Table::new("error_scaling", &["delta1", "delta2", "component", "proj_defect", "cross", "lambda_term", "total"]);
    let mut proj = Vec::new();
    let mut lt = Vec::new();
    let mut constants: Vec<Vec<f64>> = Vec::new();
    for &dl in &ctx.cfg.scaling_deltas {
        let s = AnsatzState::from_deltas(lambda_vec(&c, lam), vec![dl; q], xi.clone(), &c, &dom).claim("error_terms.state")?;
        let e = error_term_norms(&s, &c, &profiles, &dom).claim("error_terms.norms")?;
        for b in &e {
            tab.push(vec![f(dl), f(dl), (b.component + 1).to_string(), f(b.proj_defect), f(b.cross), f(b.lambda_term), f(b.total())]);
        }
        proj.push((dl, e[0].proj_defect));
        lt.push((dl, e[0].lambda_term));
        // per-term constants of the bound C(δ² + λδ + |β|δ_hδ_k)
        let mut cs = vec![e[0].proj_defect / (dl * dl), e[0].lambda_term / (lam * dl)];
        if q >= 2 && max_cross(&c) > 0.0 {
            cs.push(e[0].cross / (max_cross(&c) * dl * dl));
        }
        constants.push(cs);
    }
    let sp = slope_regression(&proj).claim("error_terms.proj_defect.slope")?;
    st.report.within("error_terms.proj_defect.slope", 2.0, sp.p, 0.1 * ctx.ts);
    let sl = slope_regression(&lt).claim("error_terms.lambda_term.slope")?;
    st.report.within("error_terms.lambda_term.slope", 1.0, sl.p, 0.1 * ctx.ts);
    let mut spread: f64 = 0.0;
    for t in 0..constants[0].len() {
        let col: Vec<f64> = constants.iter().map(|r| r[t]).collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        spread = spread.max(col.iter().map(|v| (v / mean - 1.0).abs()).fold(0.0, f64::max));
    }
    st.report.at_most("error_terms.constant_stability", 0.2 * ctx.ts, spread);
    st.notes.push(format!("projection defect slope {:.4} ± {:.1e}, lambda term slope {:.4} ± {:.1e}", sp.p, sp.stderr, sl.p, sl.stderr));
    if q >= 2 && max_cross(&c) > 0.0 {
        let mut joint = Vec::new();
        for &d1 in &ctx.cfg.cross_deltas {
            for &d2 in &ctx.cfg.cross_deltas {
                let mut deltas = vec![d2; q];
                deltas[0] = d1;
                let s = AnsatzState::from_deltas(lambda_vec(&c, lam), deltas, xi.clone(), &c, &dom).claim("error_terms.cross.state")?;
                let e = error_term_norms(&s, &c, &profiles, &dom).claim("error_terms.cross.norms")?;
                for b in &e {
                    tab.push(vec![f(d1), f(d2), (b.component + 1).to_string(), f(b.proj_defect), f(b.cross), f(b.lambda_term), f(b.total())]);
                }
                joint.push((d1, d2, e[0].cross));
            }
        }
        let js = joint_slope_regression(&joint).claim("error_terms.cross.slopes")?;
        st.report.within("error_terms.cross.slope_delta_h", 1.0, js[0].p, 0.15 * ctx.ts);
        st.report.within("error_terms.cross.slope_delta_k", 1.0, js[1].p, 0.15 * ctx.ts);
        st.notes.push(format!("cross term joint slopes ({:.4}, {:.4})", js[0].p, js[1].p));
    }
    st.tables.push(tab);
    Ok(st)
}

fn max_cross(c: &CouplingModel) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..c.m {
        for j in 0..c.m {
            if c.group_of(i) != c.group_of(j) {
                m = m.max(c.beta[(i, j)].abs());
            }
        }
    }
    m
}

fn reduce_stage(ctx: &Ctx) -> Result<Stage, Failure> {
    let mut st = Stage::new("reduce");
    let (c, profiles) = coupling_of(ctx, Subcommand::Reduce)?;
    let dom = domain_of(ctx, Subcommand::Reduce)?;
    let xi = xi_of(ctx, Subcommand::Reduce)?;
    let q = c.q();
    let lam = ctx.cfg.reduce_lambda;
    let bp = BasisParams::default();
    let rp = RemainderParams::default();
    let mut tab = Table::new(
        "reduce",
        &["delta", "lambda", "phi_norm", "error_total", "phi_over_error", "n_over_phi2", "j_tilde", "j_ansatz", "iterations", "contraction"],
    );
    let mut phis = Vec::new();
    let mut ratios = Vec::new();
    let mut gaps = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut unique_dev: f64 = 0.0;
    for &dl in &ctx.cfg.reduce_deltas {
        let s = AnsatzState::from_deltas(lambda_vec(&c, lam), vec![dl; q], xi.clone(), &c, &dom).claim("remainder.state")?;
        let asm = Assembly::new(&s, &c, &profiles, &dom, &bp).claim("remainder.assembly")?;
        let basis = GalerkinBasis::new(&asm, &bp).claim("remainder.basis")?;
        let sol = solve_remainder(&asm, &basis, &rp, None).claim("remainder.remainder")?;
        let start = DVector::from_fn(basis.len(), |_, _| rng.gen_range(-1.0..1.0) * 0.1 * sol.norm / (basis.len() as f64).sqrt());
        let sol2 = solve_remainder(&asm, &basis, &rp, Some(&start)).claim("remainder.uniqueness")?;
        unique_dev = unique_dev.max((&sol.coeffs - &sol2.coeffs).norm());
        let (n2, n3) = critical_ls::operator::assemble_n(&asm, &basis, &sol.coeffs).claim("remainder.nonlinear")?;
        let n_ratio = (n2 + n3).norm() / (sol.norm * sol.norm);
        let err: f64 = critical_ls::operator::error_term_norms_on(&asm.fields, &s, &c, &profiles)
            .claim("remainder.error_norms")?
            .iter()
            .map(|b| b.total())
            .sum();
        let jt = energy(&asm, Some(&sol.raw)).total();
        let jw = energy(&asm, None).total();
        tab.push(vec![
            f(dl),
            f(lam),
            f(sol.norm),
            f(err),
            f(sol.norm / err),
            f(n_ratio),
            f(jt),
            f(jw),
            sol.iterations.to_string(),
            f(sol.contraction),
        ]);
        phis.push((dl, sol.norm));
        ratios.push(sol.norm / err);
        gaps.push((jt - jw).abs() / (dl * dl));
    }
    let sp = slope_regression(&phis).claim("remainder.phi.slope")?;
    st.report.at_least("remainder.phi.slope", 2.0 - 0.15 * ctx.ts, sp.p);
    st.report.at_most("remainder.uniqueness", 1e-8 * ctx.ts, unique_dev);
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let spread = ratios.iter().map(|r| (r / mean - 1.0).abs()).fold(0.0, f64::max);
    st.report.at_most("remainder.constant_stability", 0.3 * ctx.ts, spread);
    let (first, last) = (gaps[0], *gaps.last().unwrap());
    st.report.holds("reduced_energy.remainder_energy_gap_decreasing", last / first, last < first);
    st.notes.push(format!("phi slope {:.4} ± {:.1e}; two starts agree to {:.2e}", sp.p, sp.stderr, unique_dev));
    if let Some(b) = ctx.cfg.contraction_beta {
        if q >= 2 {
            let cb = c.with_cross_beta(b);
            let dl = ctx.cfg.reduce_deltas[0];
            let s = AnsatzState::from_deltas(lambda_vec(&cb, lam), vec![dl; q], xi.clone(), &cb, &dom).claim("remainder.contraction.state")?;
            let asm = Assembly::new(&s, &cb, &profiles, &dom, &bp).claim("remainder.contraction.assembly")?;
            let basis = GalerkinBasis::new(&asm, &bp).claim("remainder.contraction.basis")?;
            let res = solve_remainder(&asm, &basis, &rp, None);
            let (lost, what) = match &res {
                Err(Error::NoContraction { ratio, iteration }) => (true, format!("NoContraction (ratio {ratio:.3e} at iteration {iteration})")),
                Err(e) => return Err(Failure { claim: "remainder.no_contraction".into(), error: e.clone() }),
                Ok(s) => (false, format!("converged, contraction {:.3e}", s.contraction)),
            };
            st.report.holds(&format!("remainder.no_contraction_at_cross_beta_{b}"), b, lost);
            st.notes.push(format!("cross beta {b}: {what}"));
        }
    }
    st.tables.push(tab);
    Ok(st)
}

/// Coupling restricted to group `h`, as a single-group model.
fn group_model(c: &CouplingModel, h: usize) -> critical_ls::Result<CouplingModel> {
    let g = c.group(h);
    let n = g.len();
    CouplingModel::new(DMatrix::from_fn(n, n, |i, j| c.beta[(g.start + i, g.start + j)]), vec![0, n])
}

/// Fit of the expansion constants on single-group samples at the centre of the unit ball.
pub fn fit_constants(c0: &CouplingModel, lambda0: f64, delta0: f64, samples: usize) -> critical_ls::Result<(ReducedEnergyModel, Vec<EnergySample>)> {
    let profiles = all_profiles(c0)?;
    let ball = DomainModel::unit_ball().with_eta(1e-3)?;
    let bp = BasisParams::default();
    let rp = RemainderParams::default();
    let xi = [0.0; 4];
    let r = ball.robin(&xi)?;
    let weight = profiles[0].c_norm2();
    let mut out = Vec::with_capacity(samples);
    for k in 0..samples {
        let delta = delta0 * 0.5f64.powi(k as i32);
        let lambda = lambda0 * 0.5f64.powf(k as f64 / 2.0);
        let s = AnsatzState::from_deltas(vec![lambda; c0.m], vec![delta], vec![xi], c0, &ball)?;
        let re = reduced_energy(&s, c0, &profiles, &ball, &bp, &rp)?;
        out.push(EnergySample { delta, lambda, robin: r, weight, energy: re.value });
    }
    Ok((fit_expansion(&out)?, out))
}

fn energy_fit(ctx: &Ctx) -> Result<Stage, Failure> {
    let mut st = Stage::new("energy-fit");
    let (c, profiles) = coupling_of(ctx, Subcommand::EnergyFit)?;
    let c0 = group_model(&c, 0).claim("energy_fit.group")?;
    let cfg = ctx.cfg;
    let fitted = fit_constants(&c0, cfg.energy_lambda0, cfg.energy_delta0, cfg.energy_samples);
    let (fit, samples) = match fitted {
        Err(Error::InvalidModel(msg)) => {
            st.report.holds("energy_fit.a1_a2_positive", f64::NAN, false);
            st.notes.push(msg);
            return Ok(st);
        }
        r => r.claim("energy_fit.fit")?,
    };
    let mut tab = Table::new("energy_fit", &["delta", "lambda", "robin", "weight", "j_tilde", "scaled_residual"]);
    for (s, r) in samples.iter().zip(&fit.scaled_residuals) {
        tab.push(vec![f(s.delta), f(s.lambda), f(s.robin), f(s.weight), f(s.energy), f(*r)]);
    }
    st.tables.push(tab);
    let mut ctab = Table::new("energy_constants", &["name", "value", "stderr", "leading_order"]);
    let (l0, l1, l2) = leading_constants();
    for (n, v, e, l) in [("A0", fit.a0, fit.stderr[0], l0), ("A1", fit.a1, fit.stderr[1], l1), ("A2", fit.a2, fit.stderr[2], l2)] {
        ctab.push(vec![n.to_string(), f(v), f(e), f(l)]);
    }
    st.tables.push(ctab);
    st.report.holds("energy_fit.a1_positive", fit.a1, fit.a1 > 0.0);
    st.report.holds("energy_fit.a2_positive", fit.a2, fit.a2 > 0.0);
    let r0 = fit.scaled_residuals[0].abs();
    let rl = fit.scaled_residuals.last().unwrap().abs();
    st.report.holds("energy_fit.residual_over_delta2_halves", rl / r0, rl <= 0.5 * r0);
    let direct = radial_integral(RadialKind::U4).claim("energy_fit.leading")? / 4.0;
    st.report.within("energy_fit.a0_vs_leading_energy", direct, fit.a0, 2.0 * fit.stderr[0] * ctx.ts);
    st.notes.push(format!(
        "A0 = {:.12} ± {:.1e} (leading {:.12}), A1 = {:.4} ± {:.2}, A2 = {:.4} ± {:.2}, relative residual {:.2e}",
        fit.a0, fit.stderr[0], direct, fit.a1, fit.stderr[1], fit.a2, fit.stderr[2], fit.relative_residual
    ));
    if let (Some(_), Some(xi)) = (&cfg.domain, &cfg.xi) {
        let dom = domain_of(ctx, Subcommand::EnergyFit)?;
        trajectory(ctx, &mut st, &c, &profiles, &dom, xi, &fit)?;
    }
    Ok(st)
}

fn trajectory(
    ctx: &Ctx,
    st: &mut Stage,
    c: &CouplingModel,
    profiles: &[SyncProfile],
    dom: &DomainModel,
    xi: &[Point],
    fit: &ReducedEnergyModel,
) -> Result<(), Failure> {
    let cfg = ctx.cfg;
    let q = c.q();
    let cb = match cfg.trajectory_cross_beta {
        Some(b) => c.with_cross_beta(b),
        None => c.clone(),
    };
    let inter = DMatrix::from_fn(q, q, |h, k| if h == k { 0.0 } else { interaction_weight(&cb, profiles, h, k) });
    let model = ExpansionModel {
        fit,
        dom,
        weights: profiles.iter().map(|p| p.c_norm2()).collect(),
        interaction: inter.clone(),
        interaction_log_scale: 0.0,
        lambda_star: vec![cfg.schedule[0]; q],
    };
    let robin_pts: Vec<Point> = robin_critical_points(dom, cfg.robin_starts, ctx.seed)
        .claim("trajectory.robin_points")?
        .into_iter()
        .map(|p| p.point)
        .collect();
    let sp = SearchParams::default();
    let tr: Trajectory = find_critical_point(&model, xi, &cfg.schedule, &robin_pts, &sp).claim("trajectory.trajectory")?;
    let mut tab = Table::new("trajectory", &["lambda_star", "group", "d", "x0", "x1", "x2", "x3", "log_delta", "on_boundary", "iterations"]);
    for p in &tr.points {
        for h in 0..q {
            let mut row = vec![f(p.lambda_star), (h + 1).to_string(), f(p.d[h])];
            row.extend(pt(&p.xi[h]));
            row.extend([f(p.log_delta[h]), p.on_boundary.to_string(), p.iterations.to_string()]);
            tab.push(row);
        }
    }
    st.tables.push(tab);
    if q == 1 {
        let at = tr
            .points
            .iter()
            .min_by(|a, b| (a.lambda_star - cfg.check_lambda).abs().total_cmp(&(b.lambda_star - cfg.check_lambda).abs()))
            .unwrap();
        let dist = point::dist(&at.xi[0], &tr.limit[0]);
        st.report.at_most(&format!("trajectory.distance_to_robin_point_at_lambda_{}", at.lambda_star), cfg.center_tol * ctx.ts, dist);
        st.notes.push(format!("xi*({}) at distance {dist:.3e} from the Robin critical point", at.lambda_star));
    } else {
        let min_sep = tr
            .points
            .iter()
            .flat_map(|p| (0..q).flat_map(move |h| (0..h).map(move |k| point::dist(&p.xi[h], &p.xi[k]))))
            .fold(f64::INFINITY, f64::min);
        st.report.at_least("trajectory.separation_at_least_eta", dom.eta, min_sep);
        st.notes.push(format!("minimal separation along the schedule {min_sep:.6e} (eta = {})", dom.eta));
    }
    if cfg.segregation && q >= 2 {
        // |β*| = e^{d*/λ*} with d* half the smallest d_h met along the schedule, so that
        // ln(|β*|δ_h) = (d* − d_h)/λ*
        let dstar = 0.5 * tr.points.iter().flat_map(|p| p.d.iter().copied()).fold(f64::INFINITY, f64::min);
        let mut stab = Table::new("segregation", &["lambda_star", "group", "d", "log_abs_beta", "log_abs_beta_delta"]);
        let mut series: Vec<Vec<(f64, f64)>> = vec![Vec::new(); q];
        for p in &tr.points {
            for h in 0..q {
                let v = (dstar - p.d[h]) / p.lambda_star;
                series[h].push((1.0 / p.lambda_star, v));
                stab.push(vec![f(p.lambda_star), (h + 1).to_string(), f(p.d[h]), f(dstar / p.lambda_star), f(v)]);
            }
        }
        st.tables.push(stab);
        let decreasing = series.iter().all(|s| s.windows(2).all(|w| w[1].1 < w[0].1));
        let last = series.iter().map(|s| s.last().unwrap().1).fold(f64::NEG_INFINITY, f64::max);
        st.report.holds("trajectory.segregation_beta_delta_decreasing", last, decreasing);
        // slope of ln(|β*|δ_h) against 1/λ*: d* − d_h
        let mut worst = f64::NEG_INFINITY;
        for s in &series {
            let n = s.len() as f64;
            let (mx, my) = (s.iter().map(|p| p.0).sum::<f64>() / n, s.iter().map(|p| p.1).sum::<f64>() / n);
            let sxy: f64 = s.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            let sxx: f64 = s.iter().map(|p| (p.0 - mx).powi(2)).sum();
            worst = worst.max(sxy / sxx);
        }
        st.report.holds("trajectory.segregation_slope_negative", worst, worst < 0.0);
        st.notes.push(format!("segregation: d* = {dstar:.4}, slope of ln(|beta*| delta_h) in 1/lambda* at most {worst:.4}"));
    }
    Ok(())
}

fn coercivity(ctx: &Ctx) -> Result<Stage, Failure> {
    let mut st = Stage::new("coercivity");
    let (c, profiles) = coupling_of(ctx, Subcommand::Coercivity)?;
    let dom = domain_of(ctx, Subcommand::Coercivity)?;
    let xi = xi_of(ctx, Subcommand::Coercivity)?;
    let cfg = ctx.cfg;
    let q = c.q();
    let cb = match cfg.coercivity_cross_beta {
        Some(b) => c.with_cross_beta(b),
        None => c.clone(),
    };
    let bp = BasisParams::default();
    let mut tab = Table::new("coercivity", &["lambda", "delta", "sigma_min", "sigma_unrestricted"]);
    let mut sig = Vec::new();
    let mut first: Option<(Assembly, GalerkinBasis)> = None;
    for &lam in &cfg.coercivity_lambdas {
        // d = 1, δ = e^{-1/λ}; below the floor the d-window no longer applies
        let delta = (-1.0 / lam).exp().max(critical_ls::operator::DELTA_FLOOR);
        let s = AnsatzState::from_deltas(lambda_vec(&cb, lam), vec![delta; q], xi.clone(), &cb, &dom).claim("coercivity.state")?;
        let asm = Assembly::new(&s, &cb, &profiles, &dom, &bp).claim("coercivity.assembly")?;
        let basis = GalerkinBasis::new(&asm, &bp).claim("coercivity.basis")?;
        let sm = coercivity_constant(&asm, &basis).claim("coercivity.sigma")?;
        let su = coercivity_unrestricted(&asm, &basis).claim("coercivity.sigma_unrestricted")?;
        tab.push(vec![f(lam), f(s.delta[0]), f(sm), f(su)]);
        sig.push((sm, su));
        if first.is_none() {
            first = Some((asm, basis));
        }
    }
    st.tables.push(tab);
    let mean = sig.iter().map(|s| s.0).sum::<f64>() / sig.len() as f64;
    let spread = sig.iter().map(|s| (s.0 / mean - 1.0).abs()).fold(0.0, f64::max);
    let positive = sig.iter().all(|s| s.0 > 0.0);
    let cross_ok = max_cross_signed(&cb) <= 0.0;
    st.report.holds("coercivity.sigma_positive", sig.iter().map(|s| s.0).fold(f64::INFINITY, f64::min), positive);
    if cross_ok {
        st.report.at_most("coercivity.sigma_stability_over_lambda", 0.25 * ctx.ts, spread);
    }
    let (s0, u0) = sig[0];
    st.report.holds("coercivity.kernel_directions_degenerate", s0 / u0.max(1e-300), u0 * 10.0 <= s0);
    st.notes.push(format!("sigma_min over lambda {:?}: {:?}", cfg.coercivity_lambdas, sig.iter().map(|s| s.0).collect::<Vec<_>>()));
    if let (Some((a, b, n)), true) = (cfg.sweep, q >= 2) {
        let (asm, basis) = first.unwrap();
        let betas: Vec<f64> = (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect();
        let sw = coercivity_sweep(&asm, &basis, &betas, cfg.sweep_threshold).claim("coercivity.sweep")?;
        let mut stab = Table::new("coercivity_sweep", &["cross_beta", "sigma_min"]);
        for (bb, s) in sw.betas.iter().zip(&sw.sigma) {
            stab.push(vec![f(*bb), f(*s)]);
        }
        st.tables.push(stab);
        let cross = sw.crossing.unwrap_or(f64::NAN);
        st.report.holds("coercivity.sweep_monotone_before_threshold", cross, sw.monotone_before_crossing);
        st.report.holds("coercivity.sweep_threshold_found", cross, sw.crossing.is_some());
        st.notes.push(format!("empirical coercivity threshold (sigma_min < {}): cross beta = {cross:.6}", cfg.sweep_threshold));
    }
    Ok(st)
}

fn max_cross_signed(c: &CouplingModel) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for i in 0..c.m {
        for j in 0..c.m {
            if c.group_of(i) != c.group_of(j) {
                m = m.max(c.beta[(i, j)]);
            }
        }
    }
    m
}

fn stage_applies(cfg: &RunConfig, s: Subcommand) -> bool {
    match s {
        Subcommand::CouplingCheck => cfg.coupling.is_some(),
        Subcommand::Robin => cfg.domain.is_some() && cfg.sections.contains("robin"),
        Subcommand::ErrorScaling => cfg.sections.contains("scaling"),
        Subcommand::Reduce => cfg.sections.contains("reduce"),
        Subcommand::EnergyFit => cfg.sections.contains("energy"),
        Subcommand::Coercivity => cfg.sections.contains("coercivity"),
        Subcommand::VerifyAll => true,
    }
}

pub fn run_stage(cfg: &RunConfig, s: Subcommand, opts: &Options) -> StageOutput {
    let ctx = Ctx { cfg, ts: opts.tolerance_scale, seed: opts.seed.unwrap_or(cfg.seed) };
    let res = match s {
        Subcommand::CouplingCheck => coupling_check(&ctx),
        Subcommand::Robin => robin_stage(&ctx),
        Subcommand::ErrorScaling => error_scaling(&ctx),
        Subcommand::Reduce => reduce_stage(&ctx),
        Subcommand::EnergyFit => energy_fit(&ctx),
        Subcommand::Coercivity => coercivity(&ctx),
        Subcommand::VerifyAll => unreachable!("verify-all is not a stage"),
    };
    match res {
        Ok(st) => StageOutput { stage: s, report: st.report, tables: st.tables, notes: st.notes, failure: None },
        Err(fl) => StageOutput { stage: s, report: VerificationReport::new(s.name()), tables: Vec::new(), notes: Vec::new(), failure: Some(fl) },
    }
}

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Io(std::io::Error),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "{e}"),
            RunError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub stages: Vec<(String, StageOutput)>,
    pub summary: String,
}

impl RunOutcome {
    /// 0 pass, 1 claim failure, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        if self.stages.iter().any(|(_, s)| s.failure.is_some()) {
            3
        } else if self.stages.iter().all(|(_, s)| s.report.passed()) {
            0
        } else {
            1
        }
    }
}

fn write_tables(dir: &Path, out: &StageOutput) -> Result<(), RunError> {
    std::fs::create_dir_all(dir)?;
    for t in &out.tables {
        std::fs::write(dir.join(format!("{}.csv", t.name)), t.to_csv())?;
    }
    Ok(())
}

fn summarize(buf: &mut String, case: &str, out: &StageOutput) {
    let _ = writeln!(buf, "== {case} / {}", out.stage.name());
    for n in &out.notes {
        let _ = writeln!(buf, "  {n}");
    }
    for e in &out.report.entries {
        let _ = writeln!(
            buf,
            "  {}: predicted {}, measured {:.6e}, tolerance {}, {}",
            e.claim,
            e.predicted,
            e.measured,
            if e.tolerance > 0.0 { format!("{:.3e}", e.tolerance) } else { "bound".to_string() },
            if e.pass { "PASS" } else { "FAIL" }
        );
    }
    if let Some(fl) = &out.failure {
        let _ = writeln!(buf, "  {}: numerical failure {}: {}", fl.claim, fl.error.kind(), fl.error);
    }
}

/// Runs a subcommand on the configuration at `path`, writing CSV tables and `summary.txt`
/// under `opts.out`.
pub fn run(sub: Subcommand, path: &Path, opts: &Options) -> Result<RunOutcome, RunError> {
    let cfg = RunConfig::load(path).map_err(RunError::Config)?;
    let mut stages = Vec::new();
    let mut summary = String::new();
    if sub == Subcommand::VerifyAll {
        let cases: Vec<RunConfig> = if cfg.suite.is_empty() {
            vec![cfg.clone()]
        } else {
            cfg.suite.iter().map(|p| RunConfig::load(p)).collect::<Result<_, _>>().map_err(RunError::Config)?
        };
        let mut names = std::collections::BTreeSet::new();
        for case in &cases {
            if !names.insert(case.name.clone()) {
                return Err(RunError::Config(ConfigError { line: None, msg: format!("duplicate case name `{}` in suite", case.name) }));
            }
        }
        for case in &cases {
            for s in Subcommand::STAGES {
                if !stage_applies(case, s) {
                    continue;
                }
                let out = run_stage(case, s, opts);
                write_tables(&opts.out.join(&case.name), &out)?;
                summarize(&mut summary, &case.name, &out);
                stages.push((case.name.clone(), out));
            }
        }
    } else {
        let out = run_stage(&cfg, sub, opts);
        write_tables(&opts.out, &out)?;
        summarize(&mut summary, &cfg.name, &out);
        stages.push((cfg.name.clone(), out));
    }
    let outcome = RunOutcome { stages, summary };
    let verdict = match outcome.exit_code() {
        0 => "PASS",
        1 => "FAIL (claim)",
        _ => "FAIL (numerical)",
    };
    let text = format!("{}overall: {verdict}\n", outcome.summary);
    std::fs::create_dir_all(&opts.out)?;
    std::fs::write(opts.out.join("summary.txt"), &text)?;
    Ok(RunOutcome { summary: text, ..outcome })
}
