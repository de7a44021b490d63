//! Subcommand bodies. Each returns the tables it produced plus any failed
//! verification checks; writing files is left to the caller.

use crate::config::{ConfigError, Experiment};
use crate::output::{Cell, Table};
use adhoc_etc::bounds::{
    caot_beneficial, etc_bounds, etc_bounds_caot, im_etc_bounds, im_outage_bounds, lambda_eps_k, optimize_gamma,
    outage_bounds, EtcResult, ImCase, OutageBounds,
};
use adhoc_etc::fsmc::{empirical_occupancy, ChannelModel};
use adhoc_etc::montecarlo::{
    estimate_caot, estimate_etc, estimate_nu_c_all, estimate_q_all, nu_c_table, trial_rng, verify_delta_count,
    verify_interference_moments, EtcEstimate, ExperimentConfig, Window,
};
use adhoc_etc::sir::ImPolicy;
use adhoc_etc::spatial::NetworkParams;
use anyhow::Context;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Bounds,
    Simulate,
    SweepDelta,
    Etc,
    EtcCaot,
    EtcIm,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Bounds => "bounds",
            Command::Simulate => "simulate",
            Command::SweepDelta => "sweep-delta",
            Command::Etc => "etc",
            Command::EtcCaot => "etc-caot",
            Command::EtcIm => "etc-im",
            Command::Verify => "verify",
        }
    }
}

#[derive(Debug, Default)]
pub struct Report {
    pub tables: Vec<Table>,
    /// Failed verification checks, one line each.
    pub failures: Vec<String>,
}

/// Failure classes, mapped onto exit codes by the binary.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

fn require(ok: bool, path: &str, message: &str) -> Result<(), RunError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Field {
            path: path.into(),
            message: message.into(),
        }
        .into())
    }
}

pub fn run(command: Command, exp: &Experiment) -> Result<Report, RunError> {
    match command {
        Command::Bounds => bounds(exp),
        Command::Simulate => simulate(exp),
        Command::SweepDelta => sweep_delta(exp),
        Command::Etc => etc(exp),
        Command::EtcCaot => etc_caot(exp),
        Command::EtcIm => etc_im(exp),
        Command::Verify => verify(exp),
    }
}

/// The policy with `ν^c` filled in, estimated at `lambda` when not supplied.
pub fn resolve_policy(
    policy: &ImPolicy,
    lambda: f64,
    params: &NetworkParams,
    model: &ChannelModel,
    mc: &ExperimentConfig,
) -> anyhow::Result<(ImPolicy, bool)> {
    if policy.nu_c.is_some() {
        return Ok((policy.clone(), false));
    }
    if !policy.cancellation_enabled {
        return Ok((policy.with_nu_c(vec![0.0; policy.num_states()]), false));
    }
    let est = estimate_nu_c_all(lambda, policy, params, model, mc).context("estimating nu_c")?;
    Ok((policy.with_nu_c(est.iter().map(|e| e.thinned.mean).collect()), true))
}

fn nu_c_note(table: &mut Table, policy: &ImPolicy, estimated: bool) {
    if let Some(v) = &policy.nu_c {
        let values: Vec<String> = v.iter().map(|x| crate::output::format_float(*x)).collect();
        let how = if estimated { "estimated" } else { "supplied" };
        table.note("nu_c", format!("[{}] ({how})", values.join(", ")));
    }
}

fn state_bounds(
    lambda: f64,
    k: usize,
    params: &NetworkParams,
    model: &ChannelModel,
    policy: Option<&ImPolicy>,
) -> anyhow::Result<OutageBounds> {
    Ok(match policy {
        Some(p) => im_outage_bounds(lambda, k, p, params, model)?,
        None => outage_bounds(lambda, k, params, model)?,
    })
}

fn bounds(exp: &Experiment) -> Result<Report, RunError> {
    let (axis, points) = exp.sweep_points("lambda");
    let mut t = Table::new(
        "bounds",
        &[
            &axis,
            "state",
            "s",
            "lower",
            "upper",
            "gap",
            "past_singularity",
            "lambda_eps",
        ],
    );
    for p in &points {
        for k in 0..exp.model.num_states() {
            let b = outage_bounds(p.lambda, k, p, &exp.model).map_err(anyhow::Error::from)?;
            let le = lambda_eps_k(p.epsilon, k, p, &exp.model).map_err(anyhow::Error::from)?;
            t.push(vec![
                crate::config::WithAxis::axis(p, &axis).into(),
                (k + 1).into(),
                exp.model.state(k).into(),
                b.lower.into(),
                b.upper.into(),
                b.gap().into(),
                b.past_singularity.into(),
                le.value.into(),
            ]);
        }
    }
    Ok(Report {
        tables: vec![t],
        failures: vec![],
    })
}

fn simulate(exp: &Experiment) -> Result<Report, RunError> {
    let (axis, points) = exp.sweep_points("lambda");
    let mut t = Table::new(
        "simulate",
        &[
            &axis,
            "state",
            "s",
            "lower",
            "upper",
            "q_hat",
            "stderr",
            "within_bounds",
        ],
    );
    let z = exp.mc.confidence_z;
    let resolved = match &exp.policy {
        Some(p) => Some(resolve_policy(p, exp.params.lambda, &exp.params, &exp.model, &exp.mc)?),
        None => None,
    };
    if let Some((p, est)) = &resolved {
        nu_c_note(&mut t, p, *est);
    }
    let policy = resolved.as_ref().map(|r| &r.0);
    for p in &points {
        let est = estimate_q_all(p.lambda, p, &exp.model, policy, &exp.mc).map_err(anyhow::Error::from)?;
        for k in 0..exp.model.num_states() {
            let b = state_bounds(p.lambda, k, p, &exp.model, policy)?;
            let q = est.per_state[k];
            let inside = q.mean >= b.lower - z * q.stderr && q.mean <= b.upper + z * q.stderr;
            t.push(vec![
                crate::config::WithAxis::axis(p, &axis).into(),
                (k + 1).into(),
                exp.model.state(k).into(),
                b.lower.into(),
                b.upper.into(),
                q.mean.into(),
                q.stderr.into(),
                inside.into(),
            ]);
        }
    }
    Ok(Report {
        tables: vec![t],
        failures: vec![],
    })
}

fn sweep_delta(exp: &Experiment) -> Result<Report, RunError> {
    if let Some(s) = &exp.spec.sweep {
        require(s.axis == "delta", "sweep.axis", "sweep-delta needs axis = \"delta\"")?;
    }
    let (_, points) = exp.sweep_points("delta");
    let mut t = Table::new(
        "sweep-delta",
        &["delta", "state", "lower", "upper", "gap", "q_hat", "stderr"],
    );
    for p in &points {
        let est = estimate_q_all(p.lambda, p, &exp.model, None, &exp.mc).map_err(anyhow::Error::from)?;
        for k in 0..exp.model.num_states() {
            let b = outage_bounds(p.lambda, k, p, &exp.model).map_err(anyhow::Error::from)?;
            t.push(vec![
                p.delta.into(),
                (k + 1).into(),
                b.lower.into(),
                b.upper.into(),
                b.gap().into(),
                est.per_state[k].mean.into(),
                est.per_state[k].stderr.into(),
            ]);
        }
    }
    Ok(Report {
        tables: vec![t],
        failures: vec![],
    })
}

const ETC_COLUMNS: [&str; 14] = [
    "lambda_lower",
    "lambda_upper",
    "etc_lower",
    "etc_upper",
    "lambda_hat",
    "lambda_lo",
    "lambda_hi",
    "etc_definition",
    "etc_definition_se",
    "etc_success",
    "etc_success_se",
    "qbar_at_hat",
    "trials_used",
    "within_bounds",
];

fn etc_cells(bounds: &EtcResult, sim: &EtcEstimate) -> Vec<Cell> {
    let s = &sim.search;
    // the bracket widened by the search resolution must meet the bound interval
    let within = s.lambda_hi >= bounds.lambda_lower && bounds.lambda_upper.is_none_or(|u| s.lambda_lo <= u);
    vec![
        bounds.lambda_lower.into(),
        bounds.lambda_upper.into(),
        bounds.etc_lower.into(),
        bounds.etc_upper.into(),
        s.lambda_hat.into(),
        s.lambda_lo.into(),
        s.lambda_hi.into(),
        sim.etc_definition.mean.into(),
        sim.etc_definition.stderr.into(),
        sim.etc_success.mean.into(),
        sim.etc_success.stderr.into(),
        sim.at_hat.qbar.mean.into(),
        s.trials_used.into(),
        within.into(),
    ]
}

fn columns<'a>(head: &[&'a str], tail: &[&'a str]) -> Vec<&'a str> {
    head.iter().chain(ETC_COLUMNS.iter()).chain(tail).copied().collect()
}

fn etc(exp: &Experiment) -> Result<Report, RunError> {
    let (axis, points) = exp.sweep_points("epsilon");
    let mut t = Table::new("etc", &columns(&[&axis], &[]));
    for p in &points {
        let b = etc_bounds(p.epsilon, p, &exp.model).map_err(anyhow::Error::from)?;
        let sim = estimate_etc(p.epsilon, p, &exp.model, None, &exp.mc, &exp.search).map_err(anyhow::Error::from)?;
        let mut row = vec![crate::config::WithAxis::axis(p, &axis).into()];
        row.extend(etc_cells(&b, &sim));
        t.push(row);
    }
    Ok(Report {
        tables: vec![t],
        failures: vec![],
    })
}

fn etc_caot(exp: &Experiment) -> Result<Report, RunError> {
    let g = exp.caot_g.ok_or_else(|| ConfigError::Field {
        path: "caot.g".into(),
        message: "etc-caot needs a [caot] section".into(),
    })?;
    let (axis, points) = exp.sweep_points("epsilon");
    let mut t = Table::new(
        "etc-caot",
        &columns(&[&axis, "scheme", "g"], &["caot_beneficial", "caot_threshold", "phi_g"]),
    );
    for p in &points {
        let eps = p.epsilon;
        let x = crate::config::WithAxis::axis(p, &axis);
        let plain_b = etc_bounds(eps, p, &exp.model).map_err(anyhow::Error::from)?;
        let plain = estimate_etc(eps, p, &exp.model, None, &exp.mc, &exp.search).map_err(anyhow::Error::from)?;
        let mut row: Vec<Cell> = vec![x.into(), "none".into(), 1usize.into()];
        row.extend(etc_cells(&plain_b, &plain));
        row.extend([Cell::Empty, Cell::Empty, Cell::Empty]);
        t.push(row);

        let caot_b = etc_bounds_caot(eps, g, p, &exp.model).map_err(anyhow::Error::from)?;
        let caot = estimate_caot(eps, g, p, &exp.model, &exp.mc, &exp.search).map_err(anyhow::Error::from)?;
        let mut row: Vec<Cell> = vec![x.into(), "caot".into(), (g + 1).into()];
        row.extend(etc_cells(&caot_b, &caot));
        if g > 0 {
            let v = caot_beneficial(g, eps, p, &exp.model).map_err(anyhow::Error::from)?;
            row.extend([v.beneficial.into(), v.threshold.into(), v.phi_g.into()]);
        } else {
            row.extend([Cell::Empty, Cell::Empty, exp.model.tail_mass(0).into()]);
        }
        t.push(row);
    }
    Ok(Report {
        tables: vec![t],
        failures: vec![],
    })
}

fn case_name(c: ImCase) -> &'static str {
    match c {
        ImCase::CancellationInsideDelta => "cancel_in_delta",
        ImCase::DeltaInsideCancellation => "delta_in_cancel",
    }
}

fn etc_im(exp: &Experiment) -> Result<Report, RunError> {
    let base = exp.policy.as_ref().ok_or_else(|| ConfigError::Field {
        path: "im".into(),
        message: "etc-im needs an [im] section".into(),
    })?;
    let (policy, estimated) = resolve_policy(base, exp.params.lambda, &exp.params, &exp.model, &exp.mc)?;
    let (axis, points) = exp.sweep_points("epsilon");
    let mut t = Table::new("etc-im", &columns(&[&axis, "scheme"], &["im_cases"]));
    nu_c_note(&mut t, &policy, estimated);
    for p in &points {
        let eps = p.epsilon;
        let x = crate::config::WithAxis::axis(p, &axis);
        let plain_b = etc_bounds(eps, p, &exp.model).map_err(anyhow::Error::from)?;
        let plain = estimate_etc(eps, p, &exp.model, None, &exp.mc, &exp.search).map_err(anyhow::Error::from)?;
        let mut row: Vec<Cell> = vec![x.into(), "none".into()];
        row.extend(etc_cells(&plain_b, &plain));
        row.push(Cell::Empty);
        t.push(row);

        let im_b = im_etc_bounds(eps, &policy, p, &exp.model).map_err(anyhow::Error::from)?;
        let im = estimate_etc(eps, p, &exp.model, Some(&policy), &exp.mc, &exp.search).map_err(anyhow::Error::from)?;
        let mut row: Vec<Cell> = vec![x.into(), "im".into()];
        row.extend(etc_cells(&im_b.bounds, &im));
        let cases: Vec<&str> = im_b.cases.iter().map(|c| case_name(*c)).collect();
        row.push(cases.join(";").into());
        t.push(row);
    }

    // choice of γ from ν^c(γ) tables at the configured λ
    let mut g = Table::new(
        "etc-im-gamma",
        &[
            "state",
            "gamma",
            "nu_c",
            "nu_c_stderr",
            "nu_c_smoothed",
            "objective_term",
            "optimum",
        ],
    );
    if base.cancellation_enabled {
        let tables = (0..exp.model.num_states())
            .map(|k| {
                nu_c_table(
                    exp.params.lambda,
                    k,
                    base,
                    &exp.params,
                    &exp.model,
                    &exp.mc,
                    exp.spec.mc.nu_c_points,
                )
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(anyhow::Error::from)?;
        let opt =
            optimize_gamma(base, exp.params.epsilon, &exp.params, &exp.model, &tables).map_err(anyhow::Error::from)?;
        for (k, table) in tables.iter().enumerate() {
            let smooth = table.smoothed();
            for (i, &gamma) in table.gammas.iter().enumerate() {
                let term = opt.grid[k].iter().find(|(x, _)| *x == gamma).map(|(_, v)| *v);
                g.push(vec![
                    (k + 1).into(),
                    gamma.into(),
                    table.values[i].into(),
                    table.stderr[i].into(),
                    smooth.values[i].into(),
                    term.into(),
                    (gamma == opt.gammas[k]).into(),
                ]);
            }
        }
        g.note("objective_at_optimum", crate::output::format_float(opt.objective));
        g.note("objective_nonincreasing", opt.nonincreasing);
    }
    Ok(Report {
        tables: vec![t, g],
        failures: vec![],
    })
}

/// Oracle tolerances used by `verify`.
pub const DELTA_COUNT_TOL: f64 = 0.03;
pub const MOMENT_MEAN_TOL: f64 = 0.03;
pub const MOMENT_VAR_TOL: f64 = 0.05;
pub const OCCUPANCY_TOL: f64 = 1e-2;
pub const OCCUPANCY_STEPS: usize = 1_000_000;
const OCCUPANCY_STREAM: u64 = 0x6f63_6375_7079;

fn verify(exp: &Experiment) -> Result<Report, RunError> {
    let mut t = Table::new(
        "verify",
        &[
            "check",
            "state",
            "empirical",
            "predicted",
            "rel_error",
            "tolerance",
            "pass",
        ],
    );
    let mut failures = Vec::new();
    let mut check = |name: &str, state: Option<usize>, empirical: f64, predicted: f64, rel: f64, tol: f64| {
        let pass = rel <= tol;
        if !pass {
            let at = state.map_or(String::new(), |k| format!(" (state {})", k + 1));
            failures.push(format!("{name}{at}: relative error {rel:.4} > {tol}"));
        }
        t.push(vec![
            name.into(),
            state.map_or(Cell::Empty, |k| (k + 1).into()),
            empirical.into(),
            predicted.into(),
            rel.into(),
            tol.into(),
            pass.into(),
        ]);
    };
    let p = &exp.params;
    let m = &exp.model;
    let moments_cfg = ExperimentConfig {
        window: Window::TailFraction(exp.spec.mc.moments_tail_fraction),
        ..exp.mc.clone()
    };
    for k in 0..m.num_states() {
        let d = verify_delta_count(p.lambda, k, p, m, &exp.mc).map_err(anyhow::Error::from)?;
        let rel = if d.negative_prediction {
            f64::INFINITY
        } else {
            d.rel_error
        };
        check(
            "delta_count",
            Some(k),
            d.empirical.mean,
            d.predicted,
            rel,
            DELTA_COUNT_TOL,
        );
        let r = verify_interference_moments(p.lambda, k, p, m, &moments_cfg).map_err(anyhow::Error::from)?;
        check(
            "residual_mean",
            Some(k),
            r.empirical_mean.mean,
            r.predicted_mean,
            r.mean_rel_error,
            MOMENT_MEAN_TOL,
        );
        check(
            "residual_variance",
            Some(k),
            r.empirical_var,
            r.predicted_var,
            r.var_rel_error,
            MOMENT_VAR_TOL,
        );
        check(
            "residual_variance_campbell",
            Some(k),
            r.empirical_var,
            r.exact_var,
            r.exact_var_rel_error,
            MOMENT_VAR_TOL,
        );
    }
    if exp.spec.channel.transition.is_some() {
        let mut rng = trial_rng(exp.mc.seed, OCCUPANCY_STREAM, 0);
        let path = m.simulate(0, OCCUPANCY_STEPS, &mut rng);
        let occ = empirical_occupancy(&path, m.num_states()).map_err(anyhow::Error::from)?;
        for (k, (&o, &phi)) in occ.iter().zip(m.invariant()).enumerate() {
            // absolute error, stored in the relative-error column
            check("occupancy", Some(k), o, phi, (o - phi).abs(), OCCUPANCY_TOL);
        }
    }
    t.note("occupancy_error", "absolute");
    Ok(Report {
        tables: vec![t],
        failures,
    })
}
