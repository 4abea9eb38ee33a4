use crate::output::{emit, json_text};
use crate::range::parse_points;
use crate::{
    AsymptoticsArgs, CrosscheckArgs, EvalArgs, Failure, Format, GkArgs, ModelArg, OutputArgs, Route, SimulateArgs,
    SmoothnessArgs,
};
use serde::Serialize;
use subpot_core::asymptotics::{self, AsymptoticCheck, Law};
use subpot_core::density::Method;
use subpot_core::inversion::{ContourSpec, Inverter};
use subpot_core::series::{laplace_crosscheck, series_radius, SeriesEvaluator};
use subpot_core::smoothness::classify_point;
use subpot_core::volterra::{u_volterra, VolterraOptions};
use subpot_core::{conv, fmt_e, mc, Error, LevyModel, Side};

const SERIES_TOL: f64 = 1e-10;
const INVERSION_TOL: f64 = 1e-9;

fn load(arg: &ModelArg) -> Result<LevyModel, Failure> {
    let text = std::fs::read_to_string(&arg.model).map_err(|e| Failure {
        code: 2,
        body: serde_json::json!({
            "error": "model-file",
            "message": format!("{}: {e}", arg.model.display()),
        }),
    })?;
    Ok(LevyModel::from_json(&text)?)
}

fn write(out: &OutputArgs, csv: impl FnOnce() -> String, json: impl FnOnce() -> String) -> Result<(), Failure> {
    let text = match out.format {
        Format::Csv => csv(),
        Format::Json => json(),
    };
    emit(out.out.as_deref(), &text)
}

#[derive(Debug, Clone, Serialize)]
struct EvalRow {
    x: f64,
    u: f64,
    du_left: f64,
    du_right: f64,
    err_est: f64,
    method: &'static str,
}

pub fn eval(a: &EvalArgs, force_inversion: bool) -> Result<(), Failure> {
    let model = load(&a.model)?;
    let xs = parse_points(&a.grid.x, a.grid.spacing)?;
    if xs.iter().any(|&x| x < 0.0) {
        return Err(Failure::usage("evaluation points must be >= 0"));
    }
    if let Some(t) = a.tol {
        if !(t > 0.0) {
            return Err(Failure::usage("tolerances must be > 0"));
        }
    }
    let route = if force_inversion { Route::Inversion } else { a.route };
    let radius = series_radius(&model);
    let mut rows: Vec<Option<EvalRow>> = vec![None; xs.len()];
    let mut volterra_pts = Vec::new();

    for (i, &x) in xs.iter().enumerate() {
        let r = match route {
            Route::Auto if x > 0.0 && x <= radius => Route::Series,
            Route::Auto => Route::Volterra,
            Route::Series if x == 0.0 => Route::Volterra,
            r => r,
        };
        match r {
            Route::Series => rows[i] = Some(series_row(&model, x, a.tol.unwrap_or(SERIES_TOL))?),
            Route::Inversion => rows[i] = Some(inversion_row(&model, x, a)?),
            _ => volterra_pts.push(i),
        }
    }
    if !volterra_pts.is_empty() {
        let pts: Vec<f64> = volterra_pts.iter().map(|&i| xs[i]).collect();
        let x_max = pts.iter().copied().fold(0.0, f64::max).max(1e-6);
        let mut opts = VolterraOptions {
            extra_nodes: pts.clone(),
            ..Default::default()
        };
        if let Some(t) = a.tol {
            opts.tol = t;
        }
        if let Some(h) = a.h {
            opts.h = h;
        }
        let grid = u_volterra(&model, x_max, &opts)?;
        for (&i, &x) in volterra_pts.iter().zip(&pts) {
            let j = grid
                .node_index(x)
                .ok_or_else(|| Failure::from(Error::Domain(format!("x = {x} is not a mesh node"))))?;
            rows[i] = Some(EvalRow {
                x,
                u: grid.u[j],
                du_left: grid.du_left[j],
                du_right: grid.du_right[j],
                err_est: grid.err_est[j],
                method: Method::Volterra.as_str(),
            });
        }
    }
    let rows: Vec<EvalRow> = rows.into_iter().flatten().collect();
    write(
        &a.output,
        || {
            let mut s = String::from("x,u,du_left,du_right,err_est,method\n");
            for r in &rows {
                s.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    fmt_e(r.x),
                    fmt_e(r.u),
                    fmt_e(r.du_left),
                    fmt_e(r.du_right),
                    fmt_e(r.err_est),
                    r.method
                ));
            }
            s
        },
        || json_text(&rows),
    )
}

fn series_row(model: &LevyModel, x: f64, tol: f64) -> Result<EvalRow, Failure> {
    let ev = SeriesEvaluator::new(model, x);
    let u = ev.u(x, tol)?;
    let l = ev.du(x, Side::Left, tol)?;
    let r = ev.du(x, Side::Right, tol)?;
    Ok(EvalRow {
        x,
        u: u.value,
        du_left: l.value,
        du_right: r.value,
        err_est: u.err_bound,
        method: Method::Series.as_str(),
    })
}

fn inversion_row(model: &LevyModel, x: f64, a: &EvalArgs) -> Result<EvalRow, Failure> {
    let spec = ContourSpec {
        lambda: a.contour_lambda,
        order: a.order,
        theta_cut: a.theta_cut,
    };
    let tol = a.tol.unwrap_or(INVERSION_TOL);
    let inv = Inverter::new(model, x)?;
    let u = inv.u(x, &spec, tol)?;
    let l = inv.du(x, 1, Side::Left, &spec, tol)?;
    let r = inv.du(x, 1, Side::Right, &spec, tol)?;
    Ok(EvalRow {
        x,
        u: u.value,
        du_left: l.value,
        du_right: r.value,
        err_est: u.err_est,
        method: Method::Inversion.as_str(),
    })
}

pub fn smoothness(a: &SmoothnessArgs) -> Result<(), Failure> {
    let model = load(&a.model)?;
    let xs = parse_points(&a.grid.x, a.grid.spacing)?;
    let reports = xs
        .iter()
        .map(|&x| classify_point(&model, x, a.k))
        .collect::<Result<Vec<_>, _>>()?;
    let opt = |v: Option<f64>| v.map(fmt_e).unwrap_or_default();
    write(
        &a.output,
        || {
            let mut s = String::from("x,min_k,order,differentiable,predicted,measured,stderr,jump\n");
            for r in &reports {
                for (v, j) in r.verdicts.iter().zip(&r.jumps) {
                    s.push_str(&format!(
                        "{},{},{},{},{},{},{},{}\n",
                        fmt_e(r.x),
                        r.min_k.map(|k| k.to_string()).unwrap_or_default(),
                        j.order,
                        v.differentiable,
                        opt(j.predicted),
                        fmt_e(j.measured),
                        fmt_e(j.stderr),
                        j.is_jump()
                    ));
                }
            }
            s
        },
        || json_text(&reports),
    )
}

pub fn gk(a: &GkArgs) -> Result<(), Failure> {
    let model = load(&a.model)?;
    if !(a.xmax > 0.0 && a.xmax.is_finite()) {
        return Err(Failure::usage("--xmax must be > 0"));
    }
    let set = conv::atom_sums(model.atomic_part(), a.k, a.xmax)?;
    #[derive(Serialize)]
    struct Point {
        x: f64,
        exact: Option<String>,
        min_k: usize,
        representations: u64,
    }
    let points: Vec<Point> = set
        .elements
        .iter()
        .map(|e| Point {
            x: e.value,
            exact: e.exact.map(|r| format!("{}/{}", r.numer(), r.denom())),
            min_k: e.min_jumps,
            representations: e.representations,
        })
        .collect();
    write(
        &a.output,
        || {
            let mut s = String::from("x,exact,min_k,representations\n");
            for p in &points {
                s.push_str(&format!(
                    "{},{},{},{}\n",
                    fmt_e(p.x),
                    p.exact.as_deref().unwrap_or(""),
                    p.min_k,
                    p.representations
                ));
            }
            s
        },
        || json_text(&serde_json::json!({ "k": a.k, "x_max": a.xmax, "points": points })),
    )
}

pub fn asymptotics(a: &AsymptoticsArgs) -> Result<(), Failure> {
    let model = load(&a.model)?;
    let law: Law = a.law.parse()?;
    let mut xs = match &a.x {
        Some(spec) => parse_points(spec, a.spacing)?,
        None => match law {
            Law::ZeroSeries | Law::LinearZero => {
                let start = series_radius(&model).min(0.2) / 2.0;
                asymptotics::geometric_grid(start, start * 1e-3, 6)?
            }
            Law::DuZero => asymptotics::geometric_grid(1e-2, 1e-5, 6)?,
            Law::DuInfinity => asymptotics::default_infinity_grid(&model)?,
        },
    };
    // laws at zero walk towards zero, the law at infinity away from it
    xs.sort_by(|p, q| match law {
        Law::DuInfinity => p.total_cmp(q),
        _ => q.total_cmp(p),
    });
    let check: AsymptoticCheck = match law {
        Law::ZeroSeries => asymptotics::check_zero_series(&model, a.order, &xs)?,
        Law::LinearZero => asymptotics::check_linear_zero(&model, &xs)?,
        Law::DuZero => asymptotics::check_du_zero(&model, &xs, Side::Right)?,
        Law::DuInfinity => asymptotics::check_du_infinity(&model, &xs)?,
    };
    write(
        &a.output,
        || check.to_csv(),
        || {
            let mut v = check.verdict_json();
            v["rows"] = serde_json::to_value(&check).unwrap_or_default();
            json_text(&v)
        },
    )?;
    if check.pass {
        Ok(())
    } else {
        Err(Failure {
            code: 3,
            body: serde_json::json!({
                "error": "law-not-confirmed",
                "law": law.as_str(),
                "achieved": check.monitored.last(),
                "message": format!("{} check did not pass on the supplied grid", law.as_str()),
            }),
        })
    }
}

pub fn simulate(a: &SimulateArgs) -> Result<(), Failure> {
    let model = load(&a.model)?;
    let xs = parse_points(&a.grid.x, a.grid.spacing)?;
    let q = a.q.unwrap_or(model.q());
    if !(q >= 0.0 && q.is_finite()) {
        return Err(Failure::usage("--q must be >= 0"));
    }
    let rows = xs
        .iter()
        .map(|&x| {
            if q > 0.0 {
                mc::creep_prob_killed(&model, q, x, a.paths, a.seed, a.eps)
            } else {
                mc::creep_prob(&model, x, a.paths, a.seed, a.eps)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    write(
        &a.output,
        || {
            let mut s = format!("{}\n", mc::CreepEstimate::CSV_HEADER);
            for r in &rows {
                s.push_str(&r.csv_row());
                s.push('\n');
            }
            s
        },
        || json_text(&rows),
    )
}

pub fn crosscheck(a: &CrosscheckArgs) -> Result<(), Failure> {
    let model = load(&a.model)?;
    let lambdas = parse_points(&a.lambda, crate::Spacing::Linear)?;
    let rows = lambdas
        .iter()
        .map(|&l| laplace_crosscheck(&model, l, &VolterraOptions::default()))
        .collect::<Result<Vec<_>, _>>()?;
    write(
        &a.output,
        || {
            let mut s = String::from("lambda,lhs,rhs,diff,tail_bound\n");
            for r in &rows {
                s.push_str(&format!(
                    "{},{},{},{},{}\n",
                    fmt_e(r.lambda),
                    fmt_e(r.lhs),
                    fmt_e(r.rhs),
                    fmt_e(r.diff),
                    fmt_e(r.tail_bound)
                ));
            }
            s
        },
        || json_text(&rows),
    )?;
    match rows.iter().find(|r| r.diff > a.tol + r.tail_bound) {
        Some(r) => Err(Error::AccuracyFailure {
            achieved: r.diff,
            requested: a.tol,
            context: format!("transform identity at lambda = {}", r.lambda),
        }
        .into()),
        None => Ok(()),
    }
}

pub fn validate(a: &ModelArg) -> Result<(), Failure> {
    let model = load(a)?;
    let out = serde_json::json!({
        "valid": true,
        "hash": model.hash(),
        "model": model.to_spec(),
    });
    emit(None, &json_text(&out))
}
