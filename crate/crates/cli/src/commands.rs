use serde::Serialize;

use bloch_edge::edge::{band_evaluator, edge_model_at, eigenvector_at, EdgeModel, Side};
use bloch_edge::field::{CoefficientField, Coefficients};
use bloch_edge::fieldfile::FieldFile;
use bloch_edge::homogenization::{
    norm_difference_sweep, projection_split_norms, EffectiveBranch, EffectiveResolventSpec, HomogParams,
};
use bloch_edge::perturbation::{
    cluster_values, construct_multi_point_b, construct_splitting_b, fibered_global_perturbation, reduce_multiplicity,
    PerturbationPlan, ReductionStep,
};
use bloch_edge::planewave::{assemble_fiber, PlanewaveBasis};
use bloch_edge::spectrum::{
    certify_edge, check_continuity_bound, compute_bands, default_cluster_tol, eigen_fiber, find_gaps, multiplicity_at,
    BandStructure, BrillouinGrid, Cluster, SpectralEdgeReport, SpectralGap,
};
use bloch_edge::{Error, Result};

use crate::config::{Loaded, RunConfig};
use crate::output::{num, report, Csv, OutDir, Stamp};

/// Number of halvings of `t0` listed in split verification tables.
const VERIFY_STEPS: usize = 6;

pub struct Context<'a> {
    pub loaded: &'a Loaded,
    pub out: &'a OutDir,
    pub stamp: Stamp,
}

impl Context<'_> {
    fn cfg(&self) -> &RunConfig {
        &self.loaded.config
    }

    fn field(&self) -> &CoefficientField {
        &self.loaded.field
    }

    fn basis(&self) -> PlanewaveBasis {
        PlanewaveBasis::new(self.field().dim(), self.cfg().cutoff)
    }

    fn grid(&self) -> Result<BrillouinGrid> {
        BrillouinGrid::new(self.field().dim(), self.cfg().grid)
    }

    fn write(&self, name: &str, text: &str) -> Result<()> {
        let p = self.out.write(name, text).map_err(|e| Error::InvalidParams(format!("cannot write {name}: {e}")))?;
        println!("wrote {}", p.display());
        Ok(())
    }

    fn section<'s, T>(&self, s: &'s Option<T>, name: &str) -> Result<&'s T> {
        s.as_ref().ok_or_else(|| Error::InvalidParams(format!("config has no [{name}] section")))
    }
}

/// Errors raised by configuration problems rather than by the numerics.
pub fn is_config_error(e: &Error) -> bool {
    matches!(e, Error::InvalidParams(_) | Error::BadShape(_) | Error::NotCoercive { .. } | Error::InvariantViolation { .. })
}

#[derive(Serialize)]
struct GapEntry {
    band_below: usize,
    lower: f64,
    upper: f64,
    width: f64,
    lower_nodes: Vec<Vec<f64>>,
    upper_nodes: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct GapReport {
    n_bands: usize,
    cutoff: usize,
    grid: usize,
    sigma_minus: Vec<f64>,
    sigma_plus: Vec<f64>,
    gap: Vec<GapEntry>,
}

fn gap_report(ctx: &Context, bands: &BandStructure, gaps: &[SpectralGap]) -> GapReport {
    GapReport {
        n_bands: bands.n_bands,
        cutoff: ctx.cfg().cutoff,
        grid: ctx.cfg().grid,
        sigma_minus: bands.sigma_minus.clone(),
        sigma_plus: bands.sigma_plus.clone(),
        gap: gaps
            .iter()
            .map(|g| GapEntry {
                band_below: g.band_below,
                lower: g.lower,
                upper: g.upper,
                width: g.upper - g.lower,
                lower_nodes: g.lower_nodes.iter().map(|&i| bands.grid.node(i)).collect(),
                upper_nodes: g.upper_nodes.iter().map(|&i| bands.grid.node(i)).collect(),
            })
            .collect(),
    }
}

pub fn bands(ctx: &Context, with_csv: bool) -> Result<()> {
    let grid = ctx.grid()?;
    let bands = compute_bands(ctx.field(), &ctx.basis(), &grid, ctx.cfg().n_bands, false)?;
    let gaps = find_gaps(&bands);
    if with_csv {
        let d = grid.dim();
        let mut header: Vec<String> = (1..=d).map(|j| format!("eta_{j}")).collect();
        header.extend((1..=bands.n_bands).map(|n| format!("lambda_{n}")));
        let mut csv = Csv::with_header(header);
        for i in 0..grid.len() {
            let mut row: Vec<String> = grid.node(i).iter().map(|v| num(*v)).collect();
            row.extend(bands.values[i].iter().map(|v| num(*v)));
            csv.row(row);
        }
        ctx.write("bands.csv", &csv.render(&ctx.stamp))?;
    }
    ctx.write("gaps.toml", &report(&ctx.stamp, &gap_report(ctx, &bands, &gaps)))?;
    println!("{} gap(s) among the first {} bands", gaps.len(), bands.n_bands);
    Ok(())
}

#[derive(Serialize)]
struct ModelOut {
    eta: Vec<f64>,
    lambda0: f64,
    b_edge: Vec<Vec<f64>>,
    hessian_error: f64,
    min_eigenvalue: f64,
    nondegenerate: bool,
    c3: f64,
    probe_radius: f64,
}

impl From<&EdgeModel> for ModelOut {
    fn from(m: &EdgeModel) -> Self {
        let b = &m.b_edge;
        Self {
            eta: m.eta.clone(),
            lambda0: m.lambda0,
            b_edge: (0..b.nrows()).map(|i| (0..b.ncols()).map(|j| b[(i, j)]).collect()).collect(),
            hessian_error: m.hessian_error,
            min_eigenvalue: m.min_eig,
            nondegenerate: m.nondegenerate,
            c3: m.c3,
            probe_radius: m.probe_radius,
        }
    }
}

#[derive(Serialize)]
struct EdgeOut {
    certification: SpectralEdgeReport,
    model: Vec<ModelOut>,
}

pub fn edge(ctx: &Context) -> Result<()> {
    let sec = ctx.section(&ctx.cfg().edge, "edge")?.clone();
    let basis = ctx.basis();
    let grid = ctx.grid()?;
    let n = ctx.cfg().n_bands.max(sec.band + 1);
    let bands = compute_bands(ctx.field(), &basis, &grid, n, false)?;
    let cert = certify_edge(ctx.field(), &basis, &bands, sec.band, sec.side)?;
    let f = band_evaluator(ctx.field(), &basis, sec.band);
    let mut models = Vec::new();
    for p in cert.points.iter().filter(|p| p.multiplicity == 1) {
        models.push(ModelOut::from(&edge_model_at(&f, &p.eta, sec.band, sec.side, sec.probe_radius)?));
    }
    println!(
        "band {} {:?} edge lambda0 = {:.10}, {} point(s), simple = {}",
        sec.band,
        sec.side,
        cert.lambda0,
        cert.points.len(),
        cert.simple
    );
    ctx.write("edge.toml", &report(&ctx.stamp, &EdgeOut { certification: cert, model: models }))
}

#[derive(Serialize)]
struct PlanOut {
    already_simple: bool,
    sign: f64,
    sigma0: f64,
    t0: f64,
    t_linear_checked: f64,
    radius: f64,
    targets: Vec<Vec<f64>>,
    predicted_spreads: Vec<f64>,
    b: FieldFile,
}

fn plan_out(plan: &PerturbationPlan) -> PlanOut {
    PlanOut {
        already_simple: plan.b.is_zero(),
        sign: plan.sign,
        sigma0: if plan.sigma0.is_finite() { plan.sigma0 } else { f64::MAX },
        t0: plan.t0,
        t_linear_checked: plan.t_lin,
        radius: plan.radius,
        targets: plan.targets.clone(),
        predicted_spreads: plan.spreads.clone(),
        b: FieldFile::from_coefficients(&plan.b),
    }
}

/// Rows `t, gap_1, predicted_1, …`: cluster diameters after applying the plan.
fn verification(ctx: &Context, plan: &PerturbationPlan, clusters: &[Cluster]) -> Result<Csv> {
    let mut header = vec!["t".to_string()];
    for j in 1..=clusters.len() {
        header.push(format!("cluster_gap_{j}"));
        header.push(format!("linear_prediction_{j}"));
    }
    let mut csv = Csv::with_header(header);
    let basis = ctx.basis();
    for s in 0..VERIFY_STEPS {
        let t = plan.t0 / f64::powi(2.0, s as i32);
        let field = plan.apply(ctx.field(), t)?;
        let mut row = vec![num(t)];
        for (j, c) in clusters.iter().enumerate() {
            let v = cluster_values(&field, &basis, &c.eta, c.first_band, c.h)?;
            row.push(num(v[c.h - 1] - v[0]));
            row.push(num(plan.spreads.get(j).copied().unwrap_or(0.0) * t));
        }
        csv.row(row);
    }
    Ok(csv)
}

#[derive(Serialize)]
struct SplitOut {
    cluster_size: usize,
    first_band: usize,
    plan: PlanOut,
    reduction: Vec<ReductionStep>,
}

pub fn split(ctx: &Context) -> Result<()> {
    let sec = ctx.section(&ctx.cfg().split, "split")?.clone();
    let basis = ctx.basis();
    let cluster = multiplicity_at(ctx.field(), &basis, &sec.eta, sec.lambda0, default_cluster_tol(sec.lambda0))?;
    let (plan, steps) = if cluster.h < 2 {
        (PerturbationPlan::zero(basis.dim()), Vec::new())
    } else {
        let plan = construct_splitting_b(ctx.field(), &basis, &cluster.eta, &cluster.vectors, sec.b_cutoff)?;
        let red = reduce_multiplicity(ctx.field(), &basis, &sec.eta, sec.lambda0, sec.b_cutoff)?;
        (plan, red.steps)
    };
    println!("cluster of size {} at {:?}; t0 = {:.3e}", cluster.h, cluster.eta, plan.t0);
    let csv = verification(ctx, &plan, std::slice::from_ref(&cluster))?;
    ctx.write("verification.csv", &csv.render(&ctx.stamp))?;
    let out = SplitOut { cluster_size: cluster.h, first_band: cluster.first_band, plan: plan_out(&plan), reduction: steps };
    ctx.write("plan.toml", &report(&ctx.stamp, &out))
}

#[derive(Serialize)]
struct SplitMultiOut {
    cluster_sizes: Vec<usize>,
    plan: PlanOut,
}

pub fn split_multi(ctx: &Context) -> Result<()> {
    let sec = ctx.section(&ctx.cfg().split_multi, "split_multi")?.clone();
    let basis = ctx.basis();
    let clusters: Vec<Cluster> = sec
        .targets
        .iter()
        .map(|t| multiplicity_at(ctx.field(), &basis, &t.eta, t.lambda0, default_cluster_tol(t.lambda0)))
        .collect::<Result<_>>()?;
    let input: Vec<_> = clusters.iter().map(|c| (c.eta.clone(), c.vectors.clone())).collect();
    let plan = construct_multi_point_b(ctx.field(), &basis, &input, sec.b_cutoff, ctx.cfg().seed, sec.retries)?;
    let split: Vec<Cluster> = clusters.iter().filter(|c| c.h > 1).cloned().collect();
    println!("{} target(s), {} degenerate; t0 = {:.3e}", clusters.len(), split.len(), plan.t0);
    let csv = verification(ctx, &plan, &split)?;
    ctx.write("verification.csv", &csv.render(&ctx.stamp))?;
    let out = SplitMultiOut { cluster_sizes: clusters.iter().map(|c| c.h).collect(), plan: plan_out(&plan) };
    ctx.write("plan.toml", &report(&ctx.stamp, &out))
}

#[derive(Serialize)]
struct CellOut {
    nodes: Vec<Vec<f64>>,
    b: FieldFile,
}

#[derive(Serialize)]
struct GlobalOut {
    band: usize,
    certified: bool,
    min_node_gap: f64,
    cell: Vec<CellOut>,
}

pub fn global_simple(ctx: &Context) -> Result<()> {
    let sec = ctx.section(&ctx.cfg().global, "global")?.clone();
    let grid = ctx.grid()?;
    let g = fibered_global_perturbation(ctx.field(), &ctx.basis(), &grid, sec.band, sec.b_cutoff)?;
    let mut csv = Csv::with_header((1..=grid.dim()).map(|j| format!("eta_{j}")).chain(["gap".to_string()]).collect());
    for (i, gap) in g.node_gaps.iter().enumerate() {
        let mut row: Vec<String> = grid.node(i).iter().map(|v| num(*v)).collect();
        row.push(num(*gap));
        csv.row(row);
    }
    ctx.write("node_gaps.csv", &csv.render(&ctx.stamp))?;
    let min_gap = g.node_gaps.iter().copied().fold(f64::INFINITY, f64::min);
    println!("band {}: {} cell(s), certified = {}, min node gap {:.3e}", g.band, g.cells.len(), g.certified, min_gap);
    let out = GlobalOut {
        band: g.band,
        certified: g.certified,
        min_node_gap: min_gap,
        cell: g
            .cells
            .iter()
            .map(|c| CellOut { nodes: c.nodes.iter().map(|&i| grid.node(i)).collect(), b: FieldFile::from_coefficients(&c.b) })
            .collect(),
    };
    ctx.write("global.toml", &report(&ctx.stamp, &out))
}

/// Upper edge of the gap below `band`, its simple non-degenerate model and the effective resolvent.
pub struct UpperEdge {
    pub cert: SpectralEdgeReport,
    pub params: HomogParams,
    pub spec: EffectiveResolventSpec,
}

pub fn upper_edge(
    field: &CoefficientField,
    basis: &PlanewaveBasis,
    grid: &BrillouinGrid,
    band: usize,
    epsilons: &[f64],
    kappa: f64,
    probe_radius: f64,
) -> Result<UpperEdge> {
    let bands = compute_bands(field, basis, grid, band, false)?;
    let gap = find_gaps(&bands)
        .into_iter()
        .find(|g| g.band_below == band - 1)
        .ok_or_else(|| Error::InvalidParams(format!("no gap below band {band}")))?;
    let cert = certify_edge(field, basis, &bands, band, Side::Min)?;
    if !cert.simple {
        return Err(Error::VerificationFailed(format!("edge of band {band} is not simple")));
    }
    let f = band_evaluator(field, basis, band);
    let mut branches = Vec::new();
    for p in &cert.points {
        let model = edge_model_at(&f, &p.eta, band, Side::Min, probe_radius)?;
        if !model.nondegenerate {
            return Err(Error::VerificationFailed(format!("edge at {:?} is degenerate (min eigenvalue {:.3e})", p.eta, model.min_eig)));
        }
        branches.push(EffectiveBranch { eta: p.eta.clone(), b: model.b_edge, phi: eigenvector_at(field, basis, &p.eta, band)? });
    }
    let params = HomogParams::new(epsilons.to_vec(), kappa, cert.lambda0, (gap.lower, gap.upper))?;
    Ok(UpperEdge { cert, params, spec: EffectiveResolventSpec { branches } })
}

fn homog_edge(ctx: &Context) -> Result<UpperEdge> {
    let sec = ctx.section(&ctx.cfg().homog, "homog")?;
    let mut e = upper_edge(ctx.field(), &ctx.basis(), &ctx.grid()?, sec.band, &sec.epsilons, sec.kappa, sec.probe_radius)?;
    if sec.hessian_scale != 1.0 {
        e.spec = e.spec.with_scaled_forms(sec.hessian_scale);
    }
    Ok(e)
}

pub fn homog(ctx: &Context) -> Result<()> {
    let e = homog_edge(ctx)?;
    let rep = norm_difference_sweep(ctx.field(), &e.spec, &ctx.basis(), &ctx.grid()?, &e.params)?;
    let mut csv = Csv::new(&["epsilon", "scaled_norm", "r_norm", "kappa", "K", "M"]);
    for (i, eps) in rep.epsilons.iter().enumerate() {
        csv.row(vec![
            num(*eps),
            num(rep.scaled_norms[i]),
            num(rep.r_norms[i]),
            num(rep.kappa),
            ctx.cfg().cutoff.to_string(),
            ctx.cfg().grid.to_string(),
        ]);
    }
    csv.trailer("lambda0", num(e.cert.lambda0));
    csv.trailer("edge_points", format!("{:?}", e.spec.branches.iter().map(|b| b.eta.clone()).collect::<Vec<_>>()));
    csv.trailer("slope", num(rep.fit.slope));
    csv.trailer("intercept", num(rep.fit.intercept));
    csv.trailer("fit_residual", num(rep.fit.residual));
    csv.trailer("slope_ci95", format!("[{}, {}]", num(rep.fit.ci95.0), num(rep.fit.ci95.1)));
    println!("R-norm log-log slope {:.4}", rep.fit.slope);
    ctx.write("homog.csv", &csv.render(&ctx.stamp))
}

pub fn compare_resolvents(ctx: &Context) -> Result<()> {
    let sec = ctx.section(&ctx.cfg().homog, "homog")?.clone();
    let e = homog_edge(ctx)?;
    let basis = ctx.basis();
    let grid = ctx.grid()?;
    let mut csv = Csv::new(&["epsilon", "exact_outside", "effective_outside", "scaled_inside_difference"]);
    for eps in &e.params.epsilons {
        let p = projection_split_norms(ctx.field(), &e.spec, &basis, &grid, &[sec.band], sec.projection_radius, e.cert.lambda0, *eps, sec.kappa)?;
        csv.row(vec![num(p.epsilon), num(p.exact_outside), num(p.effective_outside), num(p.scaled_inside_difference)]);
    }
    csv.trailer("lambda0", num(e.cert.lambda0));
    csv.trailer("projection_radius", num(sec.projection_radius));
    ctx.write("compare.csv", &csv.render(&ctx.stamp))
}

#[derive(Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub note: String,
}

fn check(name: &str, value: f64, tolerance: f64, passed: bool, note: String) -> Check {
    Check { name: name.into(), value, tolerance, passed, note }
}

fn failed(name: &str, e: &Error) -> Check {
    check(name, f64::NAN, 0.0, false, e.to_string())
}

/// Seeded sample of interior quasimomenta.
fn sample_etas(dim: usize, seed: u64, n: usize) -> Vec<Vec<f64>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(-0.45..0.45)).collect()).collect()
}

fn spectral_checks(ctx: &Context) -> Result<Vec<Check>> {
    let cfg = ctx.cfg();
    let tol = &cfg.tolerances;
    let field = ctx.field();
    let basis = ctx.basis();
    let d = basis.dim();
    let n = cfg.n_bands.min(basis.len());
    let etas = sample_etas(d, cfg.seed, 6);
    let mut out = Vec::new();

    let s = field.series();
    let defect = s.reality_defect().max(s.symmetry_defect());
    out.push(check("field reality and symmetry", defect, 0.0, defect == 0.0, "bit-exact after construction".into()));

    let mut herm = 0.0_f64;
    let mut refl = 0.0_f64;
    let mut period = 0.0_f64;
    let mut residual_failure = None;
    for eta in &etas {
        let h = assemble_fiber(field, &basis, eta).matrix;
        herm = herm.max((&h - h.adjoint()).iter().map(|v| v.norm()).fold(0.0, f64::max));
        let solve = |e: &[f64]| eigen_fiber(&assemble_fiber(field, &basis, e), n).map(|p| p.values);
        let base = match solve(eta) {
            Ok(v) => v,
            Err(e) => {
                residual_failure = Some(e);
                continue;
            }
        };
        let neg: Vec<f64> = eta.iter().map(|v| -v).collect();
        let mut shifted = eta.clone();
        shifted[0] += 1.0;
        for (other, acc) in [(neg, &mut refl), (shifted, &mut period)] {
            match solve(&other) {
                Ok(v) => *acc = v.iter().zip(&base).map(|(a, b)| (a - b).abs()).fold(*acc, f64::max),
                Err(e) => residual_failure = Some(e),
            }
        }
    }
    out.push(check("fiber hermitian", herm, 1e-12, herm <= 1e-12, format!("{} quasimomenta", etas.len())));
    out.push(check("reflection lambda(-eta) = lambda(eta)", refl, tol.symmetry, refl <= tol.symmetry, format!("bands 1..{n}")));
    out.push(check("periodicity lambda(eta + e1) = lambda(eta)", period, tol.symmetry, period <= tol.symmetry, format!("bands 1..{n}")));
    out.push(match residual_failure {
        None => check("eigen residuals", 0.0, bloch_edge::spectrum::RESIDUAL_TOL, true, "all solves within tolerance".into()),
        Some(e) => failed("eigen residuals", &e),
    });

    let zero = vec![0.0; d];
    out.push(match eigen_fiber(&assemble_fiber(field, &basis, &zero), 1) {
        Ok(p) => {
            let v = p.values[0].abs();
            check("lambda_1(0) = 0", v, tol.lambda1_zero, v <= tol.lambda1_zero, String::new())
        }
        Err(e) => failed("lambda_1(0) = 0", &e),
    });

    let other = field.scaled(1.05)?;
    let mut held = 0;
    let mut total = 0;
    let mut worst = 0.0_f64;
    for eta in &etas {
        for k in 1..=n {
            let r = check_continuity_bound(field, &other, &basis, eta, k)?;
            total += 1;
            held += usize::from(r.holds);
            if r.rhs > 0.0 {
                worst = worst.max(r.lhs / r.rhs);
            }
        }
    }
    out.push(check("continuity bound against 1.05*A", worst, 1.0, held == total, format!("{held}/{total} cases")));
    Ok(out)
}

pub fn validate(ctx: &Context) -> Result<bool> {
    let mut checks = spectral_checks(ctx)?;
    if let Some(sec) = &ctx.cfg().homog {
        let name = "edge homogenization slope";
        checks.push(match homog_edge(ctx) {
            Ok(e) => {
                let rep = norm_difference_sweep(ctx.field(), &e.spec, &ctx.basis(), &ctx.grid()?, &e.params)?;
                let min = ctx.cfg().tolerances.slope_min;
                check(name, rep.fit.slope, min, rep.fit.slope >= min, format!("hessian_scale = {}", sec.hessian_scale))
            }
            Err(e) => failed(name, &e),
        });
    }
    for c in &checks {
        println!("{} {}: {:.3e} (tol {:.1e}) {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.tolerance, c.note);
    }
    let passed = checks.iter().all(|c| c.passed);
    #[derive(Serialize)]
    struct ValidateOut<'a> {
        passed: bool,
        check: &'a [Check],
    }
    ctx.write("validate.toml", &report(&ctx.stamp, &ValidateOut { passed, check: &checks }))?;
    println!("validate: {}", if passed { "all checks passed" } else { "FAILED" });
    Ok(passed)
}
