use ionarray::fields::{FieldSample, Order};
use ionarray::trap::{eigenmodes, SearchOptions, SiteKind, TrapSite};

use super::{config_err, linspace, v3, Context};
use crate::error::CliError;
use crate::output::{cell, Table};

const MODE_HEADER: [&str; 12] =
    ["f1_hz", "f2_hz", "f3_hz", "u1_x", "u1_y", "u1_z", "u2_x", "u2_y", "u2_z", "u3_x", "u3_y", "u3_z"];

fn mode_cells(site: &TrapSite, ctx: &Context) -> Result<Vec<String>, CliError> {
    let m = eigenmodes(&site.curvature, &ctx.species()?)?;
    let mut cells: Vec<String> = m.frequencies_hz().iter().map(cell).collect();
    for u in &m.vectors {
        cells.extend(u.iter().map(cell));
    }
    Ok(cells)
}

pub fn sites(ctx: &Context) -> Result<(), CliError> {
    let model = ctx.model()?;
    let found = model.find_sites(&ctx.region()?, &SearchOptions::default())?;
    let mut header = vec!["index", "x_m", "y_m", "z_m", "kind", "potential_v"];
    header.extend(MODE_HEADER);
    let mut t = Table::new(&header);
    let keep = found.iter().filter(|s| ctx.cfg.search.include_saddles || s.kind == SiteKind::Minimum);
    for (k, s) in keep.enumerate() {
        let mut row = vec![cell(k)];
        row.extend(s.position.iter().map(cell));
        row.push(s.kind.as_str().to_string());
        row.push(cell(s.potential));
        row.extend(mode_cells(s, ctx)?);
        t.row(row);
    }
    ctx.out.table("sites.csv", &t)
}

pub fn modes(ctx: &Context) -> Result<(), CliError> {
    let model = ctx.model()?;
    let sites: Vec<TrapSite> = if ctx.cfg.modes.positions_m.is_empty() {
        model.minima(&ctx.region()?, &SearchOptions::default())?
    } else {
        ctx.cfg.modes.positions_m.iter().map(|p| model.site_at(&v3(*p))).collect::<Result<_, _>>()?
    };
    let sp = ctx.species()?;
    let mut t =
        Table::new(&["index", "x_m", "y_m", "z_m", "mode", "frequency_hz", "curvature_v_m2", "u_x", "u_y", "u_z"]);
    for (k, s) in sites.iter().enumerate() {
        let m = eigenmodes(&s.curvature, &sp)?;
        for j in 0..3 {
            let mut row = vec![cell(k)];
            row.extend(s.position.iter().map(cell));
            row.push(cell(j + 1));
            row.push(cell(m.frequencies_hz()[j]));
            row.push(cell(m.curvatures[j]));
            row.extend(m.vectors[j].iter().map(cell));
            t.row(row);
        }
    }
    ctx.out.table("modes.csv", &t)
}

pub fn field_sample(ctx: &Context) -> Result<(), CliError> {
    let fc = &ctx.cfg.field_sample;
    let mut points: Vec<_> = fc.points_m.iter().map(|p| v3(*p)).collect();
    if let (Some(a), Some(b)) = (fc.line_from_m, fc.line_to_m) {
        let (a, b) = (v3(a), v3(b));
        points.extend(linspace(0.0, 1.0, fc.line_points).into_iter().map(|s| a + (b - a) * s));
    }
    if points.is_empty() {
        return Err(CliError::Config("field_sample needs points_m or a line".into()));
    }
    let layout = ctx.layout()?;
    let model = ctx.model()?;
    let mut t = Table::new(&[
        "x_m", "y_m", "z_m", "source", "value_v", "gx_v_m", "gy_v_m", "gz_v_m", "hxx_v_m2", "hxy_v_m2", "hxz_v_m2",
        "hyy_v_m2", "hyz_v_m2", "hzz_v_m2",
    ]);
    for r in &points {
        for src in &fc.sources {
            let s: FieldSample = match src.as_str() {
                "rf" => model.basis.rf()?.eval(r, Order::Hessian)?,
                "pseudo" => model.pseudopotential(r, Order::Hessian)?,
                "total" => model.potential(r, Order::Hessian)?,
                id => {
                    let k = layout
                        .controls()
                        .position(|e| e.id == id)
                        .ok_or_else(|| config_err(format!("unknown field source '{id}'")))?;
                    model.basis.controls()[k].eval(r, Order::Hessian)?
                }
            };
            let mut row: Vec<String> = r.iter().map(cell).collect();
            row.push(src.clone());
            row.push(cell(s.value));
            row.extend(s.gradient.iter().map(cell));
            let h = s.hessian;
            row.extend([h[(0, 0)], h[(0, 1)], h[(0, 2)], h[(1, 1)], h[(1, 2)], h[(2, 2)]].iter().map(cell));
            t.row(row);
        }
    }
    ctx.out.table("field.csv", &t)
}
