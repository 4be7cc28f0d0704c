use ionarray::control::{
    family_target, predict_detuning, predict_rotation, solve_control as solve, Family, SolveOptions, VoltageNorm,
};
use ionarray::fixtures;
use ionarray::trap::eigenmodes;
use nalgebra::Matrix3;

use super::{config_err, linspace, v3, Context};
use crate::error::CliError;
use crate::output::{cell, Table};

pub fn solve_control(ctx: &Context) -> Result<(), CliError> {
    let sc = &ctx.cfg.solve_control;
    let families = sc.families.iter().map(|f| Family::parse(f).map_err(config_err)).collect::<Result<Vec<_>, _>>()?;
    if families.is_empty() {
        return Err(CliError::Config("solve_control.families is empty".into()));
    }
    let norm = match sc.norm.as_str() {
        "l2" => VoltageNorm::L2,
        "chebyshev" => VoltageNorm::Chebyshev,
        other => return Err(config_err(format!("unknown norm '{other}' (l2 or chebyshev)"))),
    };
    let layout = ctx.layout()?;
    let model = ctx.model()?;
    let sites = match &sc.sites_m {
        Some(s) => s.iter().map(|p| v3(*p)).collect(),
        None => {
            let located = fixtures::locate_sites_near(&model, &sc.nominal_sites_m, &ctx.region()?)?;
            located.sites.iter().map(|s| s.position).collect::<Vec<_>>()
        }
    };
    let opts = SolveOptions { norm, ..SolveOptions::default() };

    let mut header = vec!["electrode"];
    header.extend(families.iter().map(|f| f.as_str()));
    let mut volts = Table::new(&header);
    let mut report =
        Table::new(&["family", "constraints", "rank", "nullspace_dim", "max_relative_residual", "norm_v", "peak_v"]);
    let mut columns = Vec::new();
    for f in &families {
        let targets = family_target(*f, &sites);
        let sol = solve(&model.basis, &targets, f.as_str(), &opts)?;
        let v = sol.voltages();
        report.row(vec![
            f.as_str().into(),
            cell(targets.iter().map(|t| t.constraint_count()).sum::<usize>()),
            cell(sol.rank),
            cell(sol.nullspace_dim),
            cell(sol.max_relative_residual),
            cell(v.norm()),
            cell(v.amax()),
        ]);
        columns.push(v);
    }
    for (k, e) in layout.controls().enumerate() {
        let mut row = vec![e.id.clone()];
        row.extend(columns.iter().map(|v| cell(v[k])));
        volts.row(row);
    }
    let mut site_table = Table::new(&["site", "x_m", "y_m", "z_m"]);
    for (k, s) in sites.iter().enumerate() {
        let mut row = vec![format!("T{k}")];
        row.extend(s.iter().map(cell));
        site_table.row(row);
    }
    ctx.out.table("control.csv", &volts)?;
    ctx.out.table("control_report.csv", &report)?;
    ctx.out.table("control_sites.csv", &site_table)
}

pub fn sweep(ctx: &Context) -> Result<(), CliError> {
    let sw = &ctx.cfg.sweep;
    let sp = ctx.species()?;
    let us = linspace(sw.u_min_v, sw.u_max_v, sw.points);
    match sw.kind.as_str() {
        "detuning" => {
            let omega = 2.0 * std::f64::consts::PI * sw.mode_frequency_hz;
            let mut t = Table::new(&["u_tune_v", "detuning_hz"]);
            for u in us {
                let d = predict_detuning(omega, sw.curvature_per_volt_m2, u, &sp)?;
                t.row(vec![cell(u), cell(d / (2.0 * std::f64::consts::PI))]);
            }
            ctx.out.table("sweep.csv", &t)
        }
        "rotation" => {
            let phi = Matrix3::from_fn(|i, j| sw.phi_ini_v_m2[i][j]);
            let kappa = match sw.kappa_rot_m2 {
                Some(k) => Matrix3::from_fn(|i, j| k[i][j]),
                None => Family::KappaRot.curvature().to_matrix(),
            };
            let mut t = Table::new(&["u_rot_v", "angle_deg", "angle_3d_deg", "f1_hz", "f2_hz", "f3_hz"]);
            for u in us {
                let p = predict_rotation(&phi, &kappa, u, &sp)?;
                let f = eigenmodes(&(phi + kappa * u), &sp)?.frequencies_hz();
                t.row(vec![cell(u), cell(p.angle_deg), cell(p.angle_3d_deg), cell(f[0]), cell(f[1]), cell(f[2])]);
            }
            ctx.out.table("sweep.csv", &t)
        }
        other => Err(config_err(format!("unknown sweep kind '{other}' (detuning or rotation)"))),
    }
}
