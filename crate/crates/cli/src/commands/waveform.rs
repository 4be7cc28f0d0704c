use ionarray::consts::TWO_PI;
use ionarray::control::ControlSet;
use ionarray::waveform::{add_tone, export, make_ramp, FileFormat, RampShape};
use nalgebra::DVector;

use super::{config_err, Context};
use crate::error::CliError;
use crate::output::{cell, Table};

pub fn waveform(ctx: &Context) -> Result<(), CliError> {
    let wc = &ctx.cfg.waveform;
    let shape = RampShape::parse(&wc.shape).ok_or_else(|| config_err(format!("unknown ramp shape '{}'", wc.shape)))?;
    let (format, name) = match wc.format.as_str() {
        "binary" => (FileFormat::Binary, "waveform.bin"),
        "csv" => (FileFormat::Csv, "waveform.csv"),
        other => return Err(config_err(format!("unknown waveform format '{other}' (binary or csv)"))),
    };
    if wc.from_v.len() != wc.to_v.len() || wc.from_v.is_empty() {
        return Err(config_err("waveform.from_v and waveform.to_v need the same, nonzero length"));
    }
    let a = ControlSet::from_voltages(&DVector::from_vec(wc.from_v.clone()), "from");
    let b = ControlSet::from_voltages(&DVector::from_vec(wc.to_v.clone()), "to");
    let mut wf = make_ramp(&a, &b, wc.duration_s, shape, wc.update_rate_hz)?;
    if let Some(tone) = &wc.tone {
        wf = add_tone(&wf, tone.channel, TWO_PI * tone.frequency_hz, tone.amplitude_v, (tone.start_s, tone.stop_s))?;
    }
    let path = ctx.out.path(name);
    export(&wf, &path, format)?;
    println!("{}", path.display());
    let mut t = Table::new(&["file", "channels", "samples", "update_rate_hz", "duration_s"]);
    t.row(vec![
        name.to_string(),
        cell(wf.channel_count()),
        cell(wf.len()),
        cell(wf.update_rate()),
        cell(wf.duration()),
    ]);
    ctx.out.table("waveform_summary.csv", &t)
}
