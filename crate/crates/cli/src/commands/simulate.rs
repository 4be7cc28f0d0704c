use std::collections::BTreeMap;
use std::f64::consts::PI;

use ionarray::consts::TWO_PI;
use ionarray::control::ControlSet;
use ionarray::dynamics::{
    exchange_rate, fit_flopping, flop_signal, heating_evolution, lamb_dicke_full, micromotion_analysis,
    optimal_threshold, ramp_check, sideband_thermometry, simulate_detection as detect, simulate_flop_data,
    tickle_response, DetectionModel, FlopDataset, FlopParameters, PlanarFlopModel, RamanGeometry, Transition,
};
use ionarray::trap::eigenmodes;
use ionarray::waveform::{make_ramp, RampShape};
use nalgebra::{DVector, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{config_err, linspace, v3, Context};
use crate::error::CliError;
use crate::output::{cell, Table};

fn flop_model(ctx: &Context) -> Result<PlanarFlopModel, CliError> {
    let fc = &ctx.cfg.flop;
    let sp = ctx.species()?;
    let omegas = fc.mode_frequencies_hz.map(|f| TWO_PI * f);
    let eta_full = match fc.eta_full {
        Some(e) => e,
        None => {
            if !(fc.wavelength_m > 0.0) {
                return Err(config_err("flop.wavelength_m must be positive"));
            }
            let dk = std::f64::consts::SQRT_2 * TWO_PI / fc.wavelength_m;
            omegas.map(|w| lamb_dicke_full(dk, w, &sp))
        }
    };
    Ok(PlanarFlopModel { eta_full, mode_omegas: omegas, p_down_initial: fc.p_down_initial })
}

fn transition(s: &str) -> Result<Transition, CliError> {
    s.parse().map_err(config_err)
}

pub fn simulate_flop(ctx: &Context) -> Result<(), CliError> {
    let fc = &ctx.cfg.flop;
    let model = flop_model(ctx)?;
    let params = FlopParameters { rabi0: fc.rabi0_rad_s, phi: fc.phi_deg.to_radians(), nbar: fc.nbar };
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut t = Table::new(&["transition", "time_s", "p_down", "shots", "p_down_exact"]);
    for entry in &fc.schedule {
        let tr = transition(&entry.transition)?;
        let times = linspace(0.0, entry.t_max_s, entry.points);
        let data = simulate_flop_data(&model, &params, tr, &times, fc.shots, &mut rng)?;
        let exact = model.curve(&params, tr, &times)?;
        for k in 0..times.len() {
            t.row(vec![tr.to_string(), cell(times[k]), cell(data.p_down[k]), cell(data.shots[k]), cell(exact[k])]);
        }
    }
    ctx.out.table("flop.csv", &t)
}

/// Flop datasets from a CSV with `transition,time_s,p_down,shots` columns,
/// grouped by transition in order of first appearance.
fn read_flop_csv(text: &str) -> Result<Vec<FlopDataset>, CliError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| config_err("flop data is empty"))?.split(',').collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| config_err(format!("flop data lacks a '{name}' column")))
    };
    let (ct, cx, cp, cs) = (col("transition")?, col("time_s")?, col("p_down")?, col("shots")?);
    let mut order: Vec<Transition> = Vec::new();
    let mut sets: BTreeMap<usize, FlopDataset> = BTreeMap::new();
    for (n, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |what: &str| config_err(format!("flop data row {}: bad {what}", n + 2));
        let tr = transition(f.get(ct).ok_or_else(|| bad("transition"))?)?;
        let time: f64 = f.get(cx).and_then(|s| s.parse().ok()).ok_or_else(|| bad("time_s"))?;
        let p: f64 = f.get(cp).and_then(|s| s.parse().ok()).ok_or_else(|| bad("p_down"))?;
        let shots: u32 = f.get(cs).and_then(|s| s.parse().ok()).ok_or_else(|| bad("shots"))?;
        let idx = order.iter().position(|t| *t == tr).unwrap_or_else(|| {
            order.push(tr);
            order.len() - 1
        });
        let d = sets.entry(idx).or_insert_with(|| FlopDataset {
            transition: tr,
            times: vec![],
            p_down: vec![],
            shots: vec![],
        });
        d.times.push(time);
        d.p_down.push(p);
        d.shots.push(shots);
    }
    Ok(sets.into_values().collect())
}

pub fn fit_flop(ctx: &Context) -> Result<(), CliError> {
    let fc = &ctx.cfg.fit_flop;
    let path = fc.data.as_ref().ok_or_else(|| config_err("fit_flop.data is not set"))?;
    let path = ctx.cfg.resolve(path);
    let text =
        std::fs::read_to_string(&path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    let data = read_flop_csv(&text)?;
    let model = flop_model(ctx)?;
    let initial =
        FlopParameters { rabi0: fc.initial_rabi0_rad_s, phi: fc.initial_phi_deg.to_radians(), nbar: fc.initial_nbar };
    let fit = fit_flopping(&model, &data, &initial)?;
    let e = fit.std_errors;
    let mut t = Table::new(&[
        "rabi0_rad_s",
        "rabi0_err",
        "phi_deg",
        "phi_err_deg",
        "nbar0",
        "nbar0_err",
        "nbar1",
        "nbar1_err",
        "chi2",
        "dof",
        "iterations",
    ]);
    t.row(vec![
        cell(fit.params.rabi0),
        cell(e[0]),
        cell(fit.phi_deg()),
        cell(e[1].to_degrees()),
        cell(fit.params.nbar[0]),
        cell(e[2]),
        cell(fit.params.nbar[1]),
        cell(e[3]),
        cell(fit.chi2),
        cell(fit.dof),
        cell(fit.iterations),
    ]);
    ctx.out.table("fit.csv", &t)
}

pub fn simulate_thermometry(ctx: &Context) -> Result<(), CliError> {
    let tc = &ctx.cfg.thermometry;
    let model = flop_model(ctx)?;
    let fc = &ctx.cfg.flop;
    let etas = model.etas(fc.phi_deg.to_radians());
    let mut t = Table::new(&["nbar", "pulse_time_s", "p_bsb", "p_rsb", "ratio", "nbar_inferred"]);
    for &nbar in &tc.nbar {
        let state = model.state([nbar, fc.nbar[1]])?;
        let bsb = flop_signal(&state, Transition::Blue(0), fc.rabi0_rad_s, &etas, tc.pulse_time_s)?;
        let rsb = flop_signal(&state, Transition::Red(0), fc.rabi0_rad_s, &etas, tc.pulse_time_s)?;
        let r = rsb / bsb;
        t.row(vec![cell(nbar), cell(tc.pulse_time_s), cell(bsb), cell(rsb), cell(r), cell(sideband_thermometry(r)?)]);
    }
    ctx.out.table("thermometry.csv", &t)
}

pub fn simulate_heating(ctx: &Context) -> Result<(), CliError> {
    let hc = &ctx.cfg.heating;
    let mut t = Table::new(&["rate_quanta_per_s", "time_s", "nbar"]);
    for &rate in &hc.rates_quanta_per_s {
        for time in linspace(0.0, hc.t_max_s, hc.points) {
            t.row(vec![cell(rate), cell(time), cell(heating_evolution(hc.nbar0, rate, time)?)]);
        }
    }
    ctx.out.table("heating.csv", &t)
}

pub fn simulate_tickle(ctx: &Context) -> Result<(), CliError> {
    let tc = &ctx.cfg.tickle;
    let sp = ctx.species()?;
    let mut t = Table::new(&["excitation_hz", "amplitude_m", "resonant_limit_m", "steady_state_m", "detectable"]);
    for f in linspace(tc.f_min_hz, tc.f_max_hz, tc.points) {
        let r = tickle_response(tc.field_v_m, TWO_PI * f, tc.duration_s, TWO_PI * tc.mode_frequency_hz, &sp)?;
        t.row(vec![cell(f), cell(r.amplitude), cell(r.resonant_limit), cell(r.steady_state), cell(r.detectable)]);
    }
    ctx.out.table("tickle.csv", &t)
}

pub fn simulate_exchange(ctx: &Context) -> Result<(), CliError> {
    let ec = &ctx.cfg.exchange;
    let sp = ctx.species()?;
    let mut t = Table::new(&["distance_m", "mode_frequency_hz", "exchange_hz"]);
    for &d in &ec.distances_m {
        for &f in &ec.mode_frequencies_hz {
            t.row(vec![cell(d), cell(f), cell(exchange_rate(d, TWO_PI * f, &sp)? / TWO_PI)]);
        }
    }
    ctx.out.table("exchange.csv", &t)
}

pub fn simulate_micromotion(ctx: &Context) -> Result<(), CliError> {
    let mc = &ctx.cfg.micromotion;
    let sp = ctx.species()?;
    let kappa = mc.mode_frequencies_hz.map(|f| (TWO_PI * f).powi(2) / sp.charge_to_mass());
    let modes = eigenmodes(&Matrix3::from_diagonal(&Vector3::from(kappa)), &sp)?;
    let geometry = RamanGeometry::crossed_beams(mc.wavelength_m, v3(mc.delta_k_direction))?;
    let drive = ctx.drive()?;
    let mut t = Table::new(&[
        "e_x_v_m",
        "e_y_v_m",
        "e_z_v_m",
        "dx_m",
        "dy_m",
        "dz_m",
        "ax_m",
        "ay_m",
        "az_m",
        "modulation_index",
        "z_sensitivity_m",
        "q1",
        "q2",
        "q3",
    ]);
    for e in &mc.stray_fields_v_m {
        let m = micromotion_analysis(&v3(*e), &modes, &drive, &geometry)?;
        let mut row: Vec<String> = e.iter().map(cell).collect();
        row.extend(m.displacement.iter().map(cell));
        row.extend(m.amplitude.iter().map(cell));
        row.push(cell(m.modulation_index));
        row.push(cell(m.z_sensitivity));
        row.extend(m.mathieu_q.iter().map(cell));
        t.row(row);
    }
    ctx.out.table("micromotion.csv", &t)
}

pub fn simulate_detection(ctx: &Context) -> Result<(), CliError> {
    let dc = &ctx.cfg.detection;
    let threshold = dc.threshold.unwrap_or_else(|| optimal_threshold(dc.bright_mean, dc.dark_mean));
    let model = DetectionModel::new(dc.bright_mean, dc.dark_mean, dc.duration_s, threshold).map_err(config_err)?;
    let mut summary = Table::new(&[
        "p_down",
        "shots",
        "threshold",
        "bright_shots",
        "inferred_p_down",
        "expected_inferred",
        "mean_counts",
    ]);
    let mut hist = Table::new(&["p_down", "counts", "shots"]);
    for (k, &p) in dc.p_down.iter().enumerate() {
        let r = detect(p, &model, dc.shots, ctx.seed.wrapping_add(k as u64))?;
        summary.row(vec![
            cell(p),
            cell(r.shots),
            cell(threshold),
            cell(r.bright_shots),
            cell(r.inferred_p_down),
            cell(model.expected_inferred(p)),
            cell(r.mean_counts),
        ]);
        for (c, n) in r.histogram.iter().enumerate() {
            hist.row(vec![cell(p), cell(c), cell(n)]);
        }
    }
    ctx.out.table("detection.csv", &summary)?;
    ctx.out.table("detection_histogram.csv", &hist)
}

pub fn simulate_ramp(ctx: &Context) -> Result<(), CliError> {
    let rc = &ctx.cfg.ramp;
    let sp = ctx.species()?;
    let shape = RampShape::parse(&rc.shape).ok_or_else(|| config_err(format!("unknown ramp shape '{}'", rc.shape)))?;
    let a = ControlSet::from_voltages(&DVector::from_element(1, rc.u_start_v), "start");
    let b = ControlSet::from_voltages(&DVector::from_element(1, rc.u_stop_v), "stop");
    let omega0 = 2.0 * PI * rc.mode_frequency_hz;
    let mut t = Table::new(&["duration_s", "samples", "max_epsilon", "adiabatic", "final_frequency_hz"]);
    for &d in &rc.durations_s {
        let wf = make_ramp(&a, &b, d, shape, rc.update_rate_hz)?;
        let samples = wf.channel(0).expect("one channel");
        let check = ramp_check(samples, rc.update_rate_hz, rc.curvature_per_volt_m2, omega0, &sp)?;
        let last = check.omega.last().copied().unwrap_or(omega0) / TWO_PI;
        t.row(vec![cell(d), cell(wf.len()), cell(check.max_epsilon), cell(check.adiabatic), cell(last)]);
    }
    ctx.out.table("ramp.csv", &t)
}
