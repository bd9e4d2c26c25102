//! The verification suites. Each suite runs its estimators, turns every
//! scalar into an [`Output`], builds plot tables and derives pass/fail
//! verdicts from the tolerances recorded in the config.

use std::path::Path;

use mbpre_core::accum::{replica_rng, stream_tag, Estimate, Runner};
use mbpre_core::env::{analytic_regime, EnvModel, Regime};
use mbpre_core::estimators::{
    cond_tau_law, estimate_interm_delta, estimate_q, estimate_strong_constants, lemma_zj_check, verify_interm_ratio,
    verify_p, verify_strong_ratio, verify_uniform, Event, RatioTable, StrongLimitConstants, ZEntry,
};
use mbpre_core::series::{composed_pgf, enumerate_support};
use mbpre_core::walk::{harmonicity, renewal_function, renewal_function_ladder, uniform_grid, RenewalTable};
use mbpre_core::{Error, QuenchedState};
use rand::Rng;
use serde_json::{json, Value};

use crate::config::{hex_sha256, ExperimentConfig, Suite};
use crate::output::{emit_plotdata, num, zlabel, CheckVerdict, CsvTable, Output, PlotKind, PlotPoint, SuiteReport};

/// Runs the suite named in `cfg`.
pub fn run_suite(runner: &Runner, cfg: &ExperimentConfig) -> Result<SuiteReport, Error> {
    let mut report = match cfg.suite {
        Suite::QuenchedSelftest => quenched_selftest(cfg)?,
        Suite::StrongRatio => strong_ratio(runner, cfg)?,
        Suite::StrongP => strong_p(runner, cfg)?,
        Suite::Uniform => uniform(runner, cfg)?,
        Suite::IntermRatio => interm_ratio(runner, cfg)?,
        Suite::IntermQ => interm_q(runner, cfg)?,
        Suite::Renewal => renewal(runner, cfg)?,
    };
    let m = &cfg.model;
    report.diagnostics.insert(
        "regime".into(),
        json!({
            "regime": analytic_regime(m),
            "kappa": m.kappa(),
            "drift": m.rho_law.mu,
            "drift_tilted": m.drift_tilted(),
        }),
    );
    Ok(report)
}

/// `|a - b|` in units of the combined standard error; zero when both agree
/// exactly and infinite when they differ without any error bar.
pub fn z_score(a: f64, sa: f64, b: f64, sb: f64) -> f64 {
    let d = (a - b).abs();
    let s = (sa * sa + sb * sb).sqrt();
    if d == 0.0 {
        0.0
    } else if s > 0.0 {
        d / s
    } else {
        f64::INFINITY
    }
}

fn est_z(a: &Estimate, b: &Estimate) -> f64 {
    z_score(a.value, a.stderr, b.value, b.stderr)
}

/// Worst agreement over matched entries; `(max z, label of the worst)`.
fn worst_agreement(a: &[ZEntry], b: &[ZEntry]) -> (f64, String) {
    let mut worst = (0.0, String::new());
    for x in a {
        if let Some(y) = b.iter().find(|y| y.z == x.z) {
            let z = z_score(x.value, x.stderr, y.value, y.stderr);
            if !(z <= worst.0) {
                worst = (z, format!("z={} ({} vs {})", zlabel(&x.z), x.value, y.value));
            }
        } else {
            return (f64::INFINITY, format!("z={} missing", zlabel(&x.z)));
        }
    }
    worst
}

fn unit(k: usize, i: usize) -> Vec<u64> {
    let mut e = vec![0u64; k];
    e[i] = 1;
    e
}

// ---------------------------------------------------------------------------
// quenched-selftest
// ---------------------------------------------------------------------------

fn quenched_selftest(cfg: &ExperimentConfig) -> Result<SuiteReport, Error> {
    let model = &cfg.model;
    let b = &cfg.budgets;
    let tol = &cfg.tolerances;
    let k = model.k;
    let support = enumerate_support(k, b.z_max);
    let mut rep = SuiteReport::default();
    let mut table = CsvTable::new(
        "selftest",
        &["fixture", "n", "i", "z", "closed_form", "pgf_coefficient", "abs_err"],
    );
    let (mut worst_local, mut worst_ext, mut worst_sum) = (0.0f64, 0.0f64, 0.0f64);
    for f in 0..b.selftest_fixtures {
        let mut rng = replica_rng(cfg.seed, stream_tag("selftest"), f);
        let n = rng.random_range(1..=b.selftest_max_len);
        let env = model.sample_prefix(n, &mut rng)?;
        let st = QuenchedState::from_env(model.v.clone(), &env.laws)?;
        let pgf = composed_pgf(k, &env.laws, b.z_max as usize);
        let (mut f_local, mut f_ext, mut f_sum) = (0.0f64, 0.0f64, 0.0f64);
        for i in 0..k {
            let ext = (st.q(i) - (1.0 - pgf[i].constant_term())).abs();
            f_ext = f_ext.max(ext);
            for z in &support {
                let closed = st.local_prob_vector(i, z)?;
                let exact = pgf[i].coeff(z);
                let err = (closed - exact).abs();
                f_local = f_local.max(err);
                table.push(vec![
                    f.to_string(),
                    n.to_string(),
                    i.to_string(),
                    zlabel(z),
                    num(closed),
                    num(exact),
                    num(err),
                ]);
            }
            for m in 1..=b.z_max {
                let total = st.local_prob_total(i, m)?;
                let exact_total: f64 = support
                    .iter()
                    .filter(|z| z.iter().sum::<u64>() == m)
                    .map(|z| pgf[i].coeff(z))
                    .sum();
                f_local = f_local.max((total - exact_total).abs());
                let vec_sum = support
                    .iter()
                    .filter(|z| z.iter().sum::<u64>() == m)
                    .map(|z| st.local_prob_vector(i, z))
                    .sum::<Result<f64, Error>>()?;
                f_sum = f_sum.max((vec_sum - total).abs());
            }
        }
        rep.outputs.push(
            Output::new("selftest/closed_form_vs_pgf", json!({"fixture": f, "n": n}), f_local, 0.0)
                .horizons(json!({"z_max": b.z_max}))
                .diagnostics(json!({"survival_abs_err": f_ext, "vector_sum_abs_err": f_sum})),
        );
        worst_local = worst_local.max(f_local);
        worst_ext = worst_ext.max(f_ext);
        worst_sum = worst_sum.max(f_sum);
    }
    rep.verdicts.push(CheckVerdict::at_most(
        "closed_forms_match_pgf_coefficients",
        worst_local,
        tol.oracle_abs,
        format!("max |closed form - coefficient| over {} fixtures, |z| <= {}", b.selftest_fixtures, b.z_max),
    ));
    rep.verdicts.push(CheckVerdict::at_most(
        "survival_matches_pgf",
        worst_ext,
        tol.oracle_abs,
        "max |P(Z_n != 0) - (1 - F(0))|",
    ));
    rep.verdicts.push(CheckVerdict::at_most(
        "vector_masses_sum_to_total",
        worst_sum,
        tol.mass_sum_abs,
        "max |sum_{|z|=m} P(Z_n = z) - P(|Z_n| = m)|",
    ));
    rep.tables.push(table);
    Ok(rep)
}

// ---------------------------------------------------------------------------
// strongly supercritical suites
// ---------------------------------------------------------------------------

fn constant_outputs(c: &StrongLimitConstants, out: &mut Vec<Output>) {
    let h = serde_json::to_value(&c.horizons).expect("horizons serialize");
    let diag = json!({
        "clamp_count": c.clamp_count,
        "tail_max": c.tail_max,
        "window_change_max": c.window_change_max,
        "replicas": c.replicas,
    });
    let mut push = |name: &str, key: Value, e: &Estimate| {
        out.push(
            Output::new(name, key, e.value, e.stderr)
                .horizons(h.clone())
                .diagnostics(diag.clone()),
        );
    };
    push("strong/G", Value::Null, &c.g_hat);
    for (j, e) in c.u_hat.iter().enumerate() {
        push("strong/u", json!({"type": j}), e);
    }
    for (j, e) in c.q_hat.iter().enumerate() {
        push("strong/Q", json!({"type": j}), e);
    }
    for (j, e) in c.theta.iter().enumerate() {
        push("strong/theta", json!({"type": j}), e);
    }
    for (j, e) in c.theta_q_form.iter().enumerate() {
        push("strong/theta_q_form", json!({"type": j}), e);
    }
    for e in &c.p_dist {
        push(
            "strong/p",
            json!({"z": e.z}),
            &Estimate {
                value: e.value,
                stderr: e.stderr,
                n: c.replicas,
            },
        );
    }
    push("strong/p_tail", Value::Null, &c.p_tail);
    push("strong/p_total", Value::Null, &c.p_total);
}

fn theta_forms_verdict(c: &StrongLimitConstants, tol: f64) -> CheckVerdict {
    let rel = c
        .theta
        .iter()
        .zip(&c.theta_q_form)
        .map(|(a, b)| (a.value - b.value).abs() / a.value.abs())
        .fold(0.0, f64::max);
    CheckVerdict::at_most(
        "theta_forms_agree",
        rel,
        tol,
        "max relative difference of |v| E[u/G^2] and E[Q^2/(|v| u)]",
    )
}

fn ratio_outputs(name: &str, tables: &[RatioTable], horizons: Value, out: &mut Vec<Output>) {
    for t in tables {
        for r in &t.rows {
            out.push(
                Output::new(name, json!({"event": t.event.label(), "n": r.n}), r.value, r.stderr)
                    .horizons(horizons.clone())
                    .diagnostics(json!({"stabilization": t.stabilization})),
            );
        }
    }
}

fn strong_ratio(runner: &Runner, cfg: &ExperimentConfig) -> Result<SuiteReport, Error> {
    let model = &cfg.model;
    model.require_regime(Regime::StronglySupercritical)?;
    let b = &cfg.budgets;
    let tol = &cfg.tolerances;
    let events: Vec<Event> = b.z_values.iter().map(|z| Event::Total(*z)).collect();
    let rr = verify_strong_ratio(runner, model, b.i, &events, &b.n_grid, b.replicas, cfg.seed, tol.stabilization_rel)?;
    let c = estimate_strong_constants(runner, model, b.z_max, &b.strong, b.constant_replicas, cfg.seed)?;
    let theta = c.theta[b.i];
    let mut rep = SuiteReport::default();
    ratio_outputs(
        "strong/ratio",
        &rr.tables,
        json!({"n_grid": b.n_grid, "replicas": b.replicas}),
        &mut rep.outputs,
    );
    constant_outputs(&c, &mut rep.outputs);
    let mut points = Vec::new();
    for t in &rr.tables {
        for r in &t.rows {
            points.push(PlotPoint::Ratio {
                n: r.n,
                series: t.event.label(),
                ratio: r.value,
                stderr: r.stderr,
                reference: theta.value,
            });
        }
        let last = t.rows.last().expect("nonempty grid");
        let label = t.event.label();
        rep.verdicts.push(CheckVerdict::at_most(
            format!("stabilizes[{label}]"),
            t.stabilization.rel_change.unwrap_or(f64::NAN),
            tol.stabilization_rel,
            format!("relative change between the last two n of {:?}", b.n_grid),
        ));
        rep.verdicts.push(CheckVerdict::at_most(
            format!("matches_theta[{label}]"),
            z_score(last.value, last.stderr, theta.value, theta.stderr),
            tol.agreement_sigmas,
            format!("ratio {} at n = {} vs theta_{} = {}", last.value, last.n, b.i, theta.value),
        ));
    }
    rep.verdicts.push(theta_forms_verdict(&c, tol.oracle_abs));
    rep.tables.push(emit_plotdata("strong_ratio", PlotKind::Ratio { reference: "theta_ref" }, &points));
    rep.diagnostics.insert("clamp_count".into(), json!(rr.clamp_count + c.clamp_count));
    rep.diagnostics.insert("warnings".into(), json!(rr.warnings));
    Ok(rep)
}

fn strong_p(runner: &Runner, cfg: &ExperimentConfig) -> Result<SuiteReport, Error> {
    let model = &cfg.model;
    model.require_regime(Regime::StronglySupercritical)?;
    let b = &cfg.budgets;
    let tol = &cfg.tolerances;
    let c = estimate_strong_constants(runner, model, b.z_max, &b.strong, b.constant_replicas, cfg.seed)?;
    let mut rep = SuiteReport::default();
    constant_outputs(&c, &mut rep.outputs);
    let mut points: Vec<PlotPoint> = c
        .p_dist
        .iter()
        .map(|e| PlotPoint::Long {
            n: 0,
            series: format!("p{}", zlabel(&e.z)),
            value: e.value,
            stderr: e.stderr,
        })
        .collect();
    let mut last_tables: Vec<(String, Vec<ZEntry>)> = Vec::new();
    for pc in &b.p_choices {
        let pr = verify_p(runner, model, pc.i, pc.l, pc.t, b.z_max, &b.n_grid, b.replicas, cfg.seed)?;
        let label = format!("i={},l={},t={}", pc.i, pc.l, pc.t);
        for t in &pr.tables {
            for e in &t.entries {
                rep.outputs.push(
                    Output::new(
                        "strong/conditional",
                        json!({"i": pc.i, "l": pc.l, "t": pc.t, "n": t.n, "m": t.m, "z": e.z}),
                        e.value,
                        e.stderr,
                    )
                    .horizons(json!({"n_grid": b.n_grid, "replicas": b.replicas}))
                    .diagnostics(json!({"enumerated_total": t.enumerated_total})),
                );
                points.push(PlotPoint::Long {
                    n: t.n,
                    series: format!("cond[{label}]{}", zlabel(&e.z)),
                    value: e.value,
                    stderr: e.stderr,
                });
            }
        }
        let last = pr.tables.last().expect("nonempty grid");
        let (z, worst) = worst_agreement(&last.entries, &c.p_dist);
        rep.verdicts.push(CheckVerdict::at_most(
            format!("conditional_matches_p[{label}]"),
            z,
            tol.agreement_sigmas,
            format!("worst combined z-score at n = {}: {worst}", last.n),
        ));
        last_tables.push((label, last.entries.clone()));
    }
    for a in 0..last_tables.len() {
        for bb in a + 1..last_tables.len() {
            let (z, worst) = worst_agreement(&last_tables[a].1, &last_tables[bb].1);
            rep.verdicts.push(CheckVerdict::at_most(
                format!("conditionals_agree[{} vs {}]", last_tables[a].0, last_tables[bb].0),
                z,
                tol.agreement_sigmas,
                format!("worst combined z-score: {worst}"),
            ));
        }
    }
    rep.verdicts.push(CheckVerdict::at_most(
        "p_total_mass",
        (c.p_total.value - 1.0).abs(),
        tol.p_total_abs,
        format!(
            "enumerated {} + analytic tail {} = {}",
            c.p_enumerated_total, c.p_tail.value, c.p_total.value
        ),
    ));
    rep.verdicts.push(theta_forms_verdict(&c, tol.oracle_abs));
    rep.tables.push(emit_plotdata("strong_p", PlotKind::Long, &points));
    rep.diagnostics.insert("clamp_count".into(), json!(c.clamp_count));
    Ok(rep)
}

// ---------------------------------------------------------------------------
// uniformity (both regimes)
// ---------------------------------------------------------------------------

fn uniform(runner: &Runner, cfg: &ExperimentConfig) -> Result<SuiteReport, Error> {
    let model = &cfg.model;
    let b = &cfg.budgets;
    let tol = &cfg.tolerances;
    let regime = analytic_regime(model);
    if !matches!(regime, Regime::StronglySupercritical | Regime::IntermediatelySupercritical) {
        return Err(Error::RegimeMismatch {
            expected: "StronglySupercritical or IntermediatelySupercritical".into(),
            found: format!("{regime:?}"),
        });
    }
    let ur = verify_uniform(runner, model, regime, b.i, b.c, &b.n_grid, b.replicas, cfg.seed)?;
    let mut rep = SuiteReport::default();
    let reference = 1.0 / b.c as f64;
    let mut points = Vec::new();
    for row in &ur.rows {
        for (z, e) in row.cond.iter().enumerate() {
            let z = z as u64 + 1;
            rep.outputs.push(
                Output::new("uniform/cond_prob", json!({"n": row.n, "z": z}), e.value, e.stderr)
                    .horizons(json!({"c": b.c, "replicas": b.replicas}))
                    .diagnostics(json!({"regime": regime})),
            );
            points.push(PlotPoint::Uniform {
                n: row.n,
                z,
                cond_prob: e.value,
                stderr: e.stderr,
                uniform_ref: reference,
            });
        }
        rep.verdicts.push(CheckVerdict::at_most(
            format!("uniform_on_1..{}[n={}]", b.c, row.n),
            row.max_deviation,
            tol.uniform_max_dev,
            format!("largest |P(|Z_n| = z | 1 <= |Z_n| <= c) - 1/c| in the {regime:?} regime"),
        ));
    }
    rep.tables.push(emit_plotdata("uniform", PlotKind::Uniform, &points));
    rep.diagnostics.insert("warnings".into(), json!(ur.warnings));
    Ok(rep)
}

// ---------------------------------------------------------------------------
// intermediately supercritical suites
// ---------------------------------------------------------------------------

/// How the renewal function is estimated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RenewalMethod {
    /// Counting visits below zero before the first return (`K_max`-truncated).
    VisitCount,
    /// Descending ladder heights plus the numerically solved renewal equation.
    Ladder,
}

impl RenewalMethod {
    fn name(self) -> &'static str {
        match self {
            RenewalMethod::VisitCount => "visit_count",
            RenewalMethod::Ladder => "ladder",
        }
    }
}

/// The renewal table of the tilted walk, read from or stored in the cache
/// directory when one is configured.
pub fn renewal_table(runner: &Runner, cfg: &ExperimentConfig, method: RenewalMethod) -> Result<RenewalTable, Error> {
    let r = &cfg.budgets.renewal;
    let tilted = cfg.model.tilt()?;
    let grid = uniform_grid(r.x_max, r.step);
    let compute = |tilted: &EnvModel| match method {
        RenewalMethod::VisitCount => renewal_function(runner, tilted, &grid, r.k_max, r.replicas, cfg.seed),
        RenewalMethod::Ladder => renewal_function_ladder(runner, tilted, &grid, r.k_max, r.replicas, cfg.seed),
    };
    let Some(dir) = &r.cache_dir else {
        return compute(&tilted);
    };
    let key = json!({
        "fixture": cfg.fixture_hash(),
        "method": method.name(),
        "x_max": r.x_max,
        "step": r.step,
        "k_max": r.k_max,
        "replicas": r.replicas,
        "seed": cfg.seed,
    });
    let path = dir.join(format!("renewal-{}.json", &hex_sha256(key.to_string().as_bytes())[..16]));
    if let Some(t) = load_cached(&path) {
        return Ok(t);
    }
    let t = compute(&tilted)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::IoError(format!("{}: {e}", dir.display())))?;
    crate::output::write_atomic(&path, &serde_json::to_vec(&t)?)?;
    Ok(t)
}

fn load_cached(path: &Path) -> Option<RenewalTable> {
    let bytes = std::fs::read(path).ok()?;
    serde_json::from_slice(&bytes).ok()
}

fn renewal_diag(t: &RenewalTable, method: RenewalMethod) -> Value {
    json!({
        "method": method.name(),
        "k_max": t.k_max,
        "replicas": t.replicas,
        "truncated_fraction": t.truncated_fraction,
        "slope": t.slope,
    })
}

fn interm_ratio(runner: &Runner, cfg: &ExperimentConfig) -> Result<SuiteReport, Error> {
    let model = &cfg.model;
    model.require_regime(Regime::IntermediatelySupercritical)?;
    let b = &cfg.budgets;
    let tol = &cfg.tolerances;
    let table = renewal_table(runner, cfg, RenewalMethod::Ladder)?;
    let delta = estimate_interm_delta(runner, model, b.i, &table, &b.interm, b.constant_replicas, cfg.seed)?;
    let el = unit(model.k, b.l);
    let events = [Event::Vector(el.clone())];
    let ir = verify_interm_ratio(
        runner,
        model,
        b.i,
        &events,
        &b.n_grid,
        b.replicas,
        b.walk_replicas,
        cfg.seed,
        tol.interm_drift_rel,
    )?;
    let reference = delta.delta_el[b.l];
    let mut rep = SuiteReport::default();
    let h = json!({"n_grid": b.n_grid, "replicas": b.replicas, "walk_replicas": b.walk_replicas});
    ratio_outputs("interm/ratio", &ir.tables, h.clone(), &mut rep.outputs);
    for r in &ir.prob_min_nonneg {
        rep.outputs.push(Output::new("interm/prob_min_nonneg", json!({"n": r.n}), r.value, r.stderr).horizons(h.clone()));
    }
    let dh = serde_json::to_value(&delta.horizons).expect("horizons serialize");
    let dd = json!({
        "k0_term": delta.k0_term,
        "tail_fraction": delta.tail_fraction,
        "future_survival": delta.future_survival,
        "renewal": renewal_diag(&table, RenewalMethod::Ladder),
    });
    rep.outputs.push(
        Output::new("interm/delta_hat", json!({"i": b.i}), delta.delta_hat.value, delta.delta_hat.stderr)
            .horizons(dh.clone())
            .diagnostics(dd.clone()),
    );
    for (l, e) in delta.delta_el.iter().enumerate() {
        rep.outputs.push(
            Output::new("interm/delta_el", json!({"i": b.i, "l": l}), e.value, e.stderr)
                .horizons(dh.clone())
                .diagnostics(dd.clone()),
        );
    }
    let mut points = Vec::new();
    for t in &ir.tables {
        let label = t.event.label();
        for r in &t.rows {
            points.push(PlotPoint::Ratio {
                n: r.n,
                series: label.clone(),
                ratio: r.value,
                stderr: r.stderr,
                reference: reference.value,
            });
        }
        let last = t.rows.last().expect("nonempty grid");
        rep.verdicts.push(CheckVerdict::at_most(
            format!("stabilizes[{label}]"),
            t.stabilization.rel_change.unwrap_or(f64::NAN),
            tol.interm_drift_rel,
            format!("relative drift between the last two n of {:?}", b.n_grid),
        ));
        let min = t.rows.iter().map(|r| r.value).fold(f64::INFINITY, f64::min);
        rep.verdicts.push(CheckVerdict::positive(
            format!("positive[{label}]"),
            min,
            "smallest ratio on the grid",
        ));
        rep.verdicts.push(CheckVerdict::at_most(
            format!("matches_delta[{label}]"),
            z_score(last.value, last.stderr, reference.value, reference.stderr),
            tol.agreement_sigmas,
            format!(
                "ratio {} at n = {} vs Delta_{}(e_{}) = {}",
                last.value, last.n, b.i, b.l, reference.value
            ),
        ));
    }
    rep.tables.push(emit_plotdata("interm_ratio", PlotKind::Ratio { reference: "delta_ref" }, &points));
    rep.diagnostics.insert("clamp_count".into(), json!(ir.clamp_count));
    rep.diagnostics.insert("renewal".into(), renewal_diag(&table, RenewalMethod::Ladder));
    Ok(rep)
}

fn interm_q(runner: &Runner, cfg: &ExperimentConfig) -> Result<SuiteReport, Error> {
    let model = &cfg.model;
    model.require_regime(Regime::IntermediatelySupercritical)?;
    let b = &cfg.budgets;
    let tol = &cfg.tolerances;
    let table = renewal_table(runner, cfg, RenewalMethod::Ladder)?;
    let q = estimate_q(runner, model, b.z_max, b.q_horizon, Some(&table), b.constant_replicas, cfg.seed)?;
    let cond = cond_tau_law(runner, model, b.i, b.l, b.z_max, b.cond_n, b.replicas, cfg.seed)?;
    let ei = unit(model.k, b.i);
    let lemma = lemma_zj_check(runner, model, &ei, &b.lemma_k, b.lemma_n, b.replicas, cfg.seed)?;
    let mut rep = SuiteReport::default();
    let qh = json!({"n": b.q_horizon, "replicas": b.constant_replicas, "z_max": b.z_max});
    let qd = json!({
        "plus_mass": q.plus_mass,
        "enumerated_total": q.enumerated_total,
        "renewal": renewal_diag(&table, RenewalMethod::Ladder),
    });
    let mut points = Vec::new();
    for e in &q.q_dist {
        rep.outputs.push(
            Output::new("interm/q", json!({"z": e.z}), e.value, e.stderr)
                .horizons(qh.clone())
                .diagnostics(qd.clone()),
        );
        points.push(PlotPoint::Long {
            n: q.n,
            series: format!("q{}", zlabel(&e.z)),
            value: e.value,
            stderr: e.stderr,
        });
    }
    for e in &q.t_hat {
        rep.outputs.push(Output::new("interm/T", json!({"z": e.z}), e.value, e.stderr).horizons(qh.clone()));
    }
    for e in &cond.entries {
        rep.outputs.push(
            Output::new("interm/cond_tau", json!({"i": b.i, "l": b.l, "n": cond.n, "z": e.z}), e.value, e.stderr)
                .horizons(json!({"n": cond.n, "start": cond.m, "replicas": b.replicas}))
                .diagnostics(json!({"enumerated_total": cond.enumerated_total})),
        );
        points.push(PlotPoint::Long {
            n: cond.n,
            series: format!("cond_tau{}", zlabel(&e.z)),
            value: e.value,
            stderr: e.stderr,
        });
    }
    for (k, e) in b.lemma_k.iter().zip(&lemma) {
        rep.outputs.push(
            Output::new("interm/lemma_zj", json!({"z": ei, "k": k}), e.value, e.stderr)
                .horizons(json!({"n": b.lemma_n, "replicas": b.replicas})),
        );
        points.push(PlotPoint::Long {
            n: b.lemma_n,
            series: format!("lemma_zj[k={k}]"),
            value: e.value,
            stderr: e.stderr,
        });
    }
    let (z, worst) = worst_agreement(&cond.entries, &q.q_dist);
    rep.verdicts.push(CheckVerdict::at_most(
        "cond_tau_matches_q",
        z,
        tol.agreement_sigmas,
        format!("worst combined z-score at n = {}: {worst}", cond.n),
    ));
    let mut lemma_worst = 0.0f64;
    for a in 0..lemma.len() {
        for c in a + 1..lemma.len() {
            lemma_worst = lemma_worst.max(est_z(&lemma[a], &lemma[c]));
        }
    }
    rep.verdicts.push(CheckVerdict::at_most(
        "lemma_zj_k_independent",
        lemma_worst,
        tol.agreement_sigmas,
        format!("largest combined z-score between k in {:?}", b.lemma_k),
    ));
    rep.tables.push(emit_plotdata("interm_q", PlotKind::Long, &points));
    rep.diagnostics.insert("plus_mass".into(), json!(q.plus_mass));
    rep.diagnostics.insert("renewal".into(), renewal_diag(&table, RenewalMethod::Ladder));
    Ok(rep)
}

fn renewal(runner: &Runner, cfg: &ExperimentConfig) -> Result<SuiteReport, Error> {
    let model = &cfg.model;
    model.require_regime(Regime::IntermediatelySupercritical)?;
    let r = &cfg.budgets.renewal;
    let tol = &cfg.tolerances;
    let tilted = model.tilt()?;
    let (mean, sd) = (tilted.rho_law.mu, tilted.rho_law.sigma);
    let mut rep = SuiteReport::default();
    let mut csv = CsvTable::new("renewal", &["method", "x", "V", "stderr"]);
    let mut check = CsvTable::new("harmonicity", &["method", "x", "V", "E[V(x+X); x+X>=0]", "rel_residual"]);
    for method in [RenewalMethod::VisitCount, RenewalMethod::Ladder] {
        let t = renewal_table(runner, cfg, method)?;
        for ((x, v), se) in t.grid.iter().zip(&t.values).zip(&t.stderr) {
            csv.push(vec![method.name().into(), num(*x), num(*v), num(*se)]);
        }
        let h = harmonicity(&t, mean, sd, &r.check_points);
        let diag = renewal_diag(&t, method);
        let horizons = json!({"x_max": r.x_max, "step": r.step, "k_max": r.k_max, "replicas": r.replicas});
        for (p, x) in h.iter().zip(&r.check_points) {
            let j = t.grid.partition_point(|g| g < x).min(t.grid.len() - 1);
            rep.outputs.push(
                Output::new(
                    &format!("renewal/{}", method.name()),
                    json!({"x": p.x}),
                    p.v,
                    t.stderr[j],
                )
                .horizons(horizons.clone())
                .diagnostics(json!({"harmonic_lhs": p.lhs, "rel_residual": p.rel_residual})),
            );
            check.push(vec![method.name().into(), num(p.x), num(p.v), num(p.lhs), num(p.rel_residual)]);
        }
        rep.diagnostics.insert(format!("renewal_{}", method.name()), diag);
        if method == RenewalMethod::VisitCount {
            let worst = h.iter().map(|p| p.rel_residual).fold(0.0, f64::max);
            rep.verdicts.push(CheckVerdict::at_most(
                "harmonic",
                worst,
                tol.harmonic_rel,
                format!("largest relative residual on {} check points", r.check_points.len()),
            ));
            rep.verdicts.push(CheckVerdict::at_most(
                "V(0)=1",
                (t.eval(0.0) - 1.0).abs(),
                tol.v0_abs,
                format!("V(0) = {}", t.eval(0.0)),
            ));
            rep.verdicts.push(CheckVerdict::holds(
                "monotone",
                t.is_monotone(),
                "V nondecreasing on the grid",
            ));
        }
    }
    rep.tables.push(csv);
    rep.tables.push(check);
    Ok(rep)
}
