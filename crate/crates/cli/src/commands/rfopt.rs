use ionarray::rfshape::{extract_polygons, lp_optimize, GridSpec, ShapeObjective, ShapeOptions};

use super::{config_err, v3, Context};
use crate::error::CliError;
use crate::output::{cell, Table};

pub fn rfopt(ctx: &Context) -> Result<(), CliError> {
    let rc = &ctx.cfg.rfopt;
    if rc.sites_m.is_empty() {
        return Err(config_err("rfopt.sites_m is empty"));
    }
    if !(0.0..=1.0).contains(&rc.threshold) {
        return Err(config_err(format!("rfopt.threshold {} outside [0, 1]", rc.threshold)));
    }
    let grid = GridSpec::centered(rc.nx, rc.ny, rc.pitch_m);
    let objective = ShapeObjective::uniform(rc.sites_m.iter().map(|p| v3(*p)).collect())?;
    let opts = ShapeOptions { align_jacobian: rc.align_jacobian, ..ShapeOptions::default() };
    let report = lp_optimize(&objective, &grid, &opts)?;
    let extraction = extract_polygons(&report.pattern, rc.threshold)?;

    let mut pattern = Table::new(&["i", "j", "x_m", "y_m", "value"]);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let c = grid.pixel_center(i, j);
            pattern.row(vec![cell(i), cell(j), cell(c[0]), cell(c[1]), cell(report.pattern.get(i, j))]);
        }
    }
    let cert = &report.certificate;
    let mut summary = Table::new(&[
        "objective_m2",
        "primal_residual",
        "bound_violation",
        "dual_infeasibility",
        "complementarity",
        "fractional_pixels",
        "equality_rows",
        "iterations",
        "fragmentation",
    ]);
    summary.row(vec![
        cell(report.objective),
        cell(cert.primal_residual),
        cell(cert.bound_violation),
        cell(cert.dual_infeasibility),
        cell(cert.complementarity),
        cell(report.fractional_pixels),
        cell(report.equality_rows),
        cell(report.iterations),
        cell(extraction.fragmentation),
    ]);
    let mut sites = Table::new(&["site", "x_m", "y_m", "z_m", "residual_field_m1", "jacobian_norm_m2"]);
    for (k, s) in objective.sites().iter().enumerate() {
        let mut row = vec![cell(k)];
        row.extend(s.iter().map(cell));
        row.push(cell(report.fields[k].norm()));
        row.push(cell(report.jacobians[k].norm()));
        sites.row(row);
    }
    ctx.out.table("rf_pattern.csv", &pattern)?;
    ctx.out.table("rfopt_report.csv", &summary)?;
    ctx.out.table("rfopt_sites.csv", &sites)?;
    ctx.out.write("rf_layout.json", &extraction.layout.to_document())
}
