//! Multi-channel AWG sample streams.
//!
//! Sample `k` of every channel is output at `t_k = k / update_rate`.
//!
//! Binary file layout (all little-endian):
//!
//! | offset | type      | content                         |
//! |--------|-----------|---------------------------------|
//! | 0      | `[u8; 4]` | magic `AWGF`                    |
//! | 4      | `u32`     | format version (1)              |
//! | 8      | `u32`     | channel count `C`               |
//! | 12     | `f64`     | update rate, Hz                 |
//! | 20     | `u64`     | samples per channel `N`         |
//! | 28     | `f64`     | `C·N` samples, channel-major, V |
//!
//! The CSV form starts with `# update_rate_hz=<rate>`, then a header
//! `time_s,ch0,ch1,…` and one row per sample.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::control::ControlSet;

pub const DEFAULT_UPDATE_RATE: f64 = 5e7;
pub const MAGIC: [u8; 4] = *b"AWGF";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 28;

#[derive(Debug, Error)]
pub enum WaveformError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("control sets cover {a} and {b} electrodes")]
    MismatchedChannels { a: usize, b: usize },
    #[error("channel {channel} does not exist (waveform has {count})")]
    UnknownChannel { channel: usize, count: usize },
    #[error("tone at {omega:e} rad/s is at or above the Nyquist limit {limit:e} rad/s")]
    Nyquist { omega: f64, limit: f64 },
    #[error("malformed waveform file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    channels: Vec<Vec<f64>>,
    update_rate: f64,
    len: usize,
}

impl Waveform {
    pub fn new(channels: Vec<Vec<f64>>, update_rate: f64) -> Result<Self, WaveformError> {
        if !(update_rate > 0.0 && update_rate.is_finite()) {
            return Err(WaveformError::InvalidParameter(format!("update rate {update_rate}")));
        }
        let len = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|c| c.len() != len) {
            return Err(WaveformError::InvalidParameter("channels differ in length".into()));
        }
        if channels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(WaveformError::InvalidParameter("non-finite sample".into()));
        }
        Ok(Self { channels, update_rate, len })
    }

    /// Static voltages held for `duration`.
    pub fn constant(values: &[f64], duration: f64, update_rate: f64) -> Result<Self, WaveformError> {
        let n = sample_count(duration, update_rate)?;
        Self::new(values.iter().map(|&v| vec![v; n]).collect(), update_rate)
    }

    pub fn update_rate(&self) -> f64 {
        self.update_rate
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, index: usize) -> Option<&[f64]> {
        self.channels.get(index).map(Vec::as_slice)
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn duration(&self) -> f64 {
        self.len as f64 / self.update_rate
    }

    pub fn sample_time(&self, k: usize) -> f64 {
        k as f64 / self.update_rate
    }

    /// `self` followed by `other`.
    pub fn concat(&self, other: &Waveform) -> Result<Self, WaveformError> {
        if other.update_rate != self.update_rate || other.channel_count() != self.channel_count() {
            return Err(WaveformError::InvalidParameter("concatenated waveforms differ in rate or channels".into()));
        }
        let channels = self.channels.iter().zip(&other.channels).map(|(a, b)| [a.as_slice(), b].concat()).collect();
        Self::new(channels, self.update_rate)
    }
}

/// `round(duration × rate)`.
pub fn sample_count(duration: f64, update_rate: f64) -> Result<usize, WaveformError> {
    if !(duration >= 0.0 && duration.is_finite()) || !(update_rate > 0.0 && update_rate.is_finite()) {
        return Err(WaveformError::InvalidParameter(format!("duration {duration} s at {update_rate} Hz")));
    }
    Ok((duration * update_rate).round() as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RampShape {
    Linear,
    /// Quintic `6s⁵ − 15s⁴ + 10s³`: zero first and second derivative at
    /// both ends.
    Smoothstep,
    /// `(1 − cos πs)/2`.
    Sine,
}

impl RampShape {
    pub fn profile(self, s: f64) -> f64 {
        match self {
            RampShape::Linear => s,
            RampShape::Smoothstep => s * s * s * (s * (6.0 * s - 15.0) + 10.0),
            RampShape::Sine => 0.5 * (1.0 - (std::f64::consts::PI * s).cos()),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RampShape::Linear => "linear",
            RampShape::Smoothstep => "smoothstep",
            RampShape::Sine => "sine",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" => Some(RampShape::Linear),
            "smoothstep" => Some(RampShape::Smoothstep),
            "sine" => Some(RampShape::Sine),
            _ => None,
        }
    }
}

/// Ramp every electrode from `U_A·v̂_A` to `U_B·v̂_B` over
/// `round(t_ramp × rate)` samples. The first sample is set A and the last is
/// set B, both exactly.
pub fn make_ramp(
    set_a: &ControlSet,
    set_b: &ControlSet,
    t_ramp: f64,
    shape: RampShape,
    update_rate: f64,
) -> Result<Waveform, WaveformError> {
    if set_a.len() != set_b.len() {
        return Err(WaveformError::MismatchedChannels { a: set_a.len(), b: set_b.len() });
    }
    if !(t_ramp > 0.0) {
        return Err(WaveformError::InvalidParameter(format!("ramp duration {t_ramp} s")));
    }
    let n = sample_count(t_ramp, update_rate)?;
    if n < 2 {
        return Err(WaveformError::InvalidParameter("ramp shorter than two samples".into()));
    }
    let (a, b) = (set_a.voltages(), set_b.voltages());
    let f: Vec<f64> = (0..n).map(|k| shape.profile(k as f64 / (n - 1) as f64)).collect();
    let channels = (0..a.len())
        .map(|c| f.iter().map(|&f| if f == 1.0 { b[c] } else { a[c] + f * (b[c] - a[c]) }).collect())
        .collect();
    Waveform::new(channels, update_rate)
}

/// Add `amp·sin(ω_exc (t − t_start))` to one channel for samples with
/// `t_start ≤ t_k < t_stop`; the window is clipped to the waveform.
pub fn add_tone(
    wf: &Waveform,
    channel: usize,
    omega_exc: f64,
    amp: f64,
    window: (f64, f64),
) -> Result<Waveform, WaveformError> {
    let limit = std::f64::consts::PI * wf.update_rate;
    if !(omega_exc.abs() < limit) {
        return Err(WaveformError::Nyquist { omega: omega_exc, limit });
    }
    if channel >= wf.channel_count() {
        return Err(WaveformError::UnknownChannel { channel, count: wf.channel_count() });
    }
    let (start, stop) = window;
    if !(start >= 0.0 && stop >= start && amp.is_finite()) {
        return Err(WaveformError::InvalidParameter(format!("window [{start}, {stop}) s, amplitude {amp}")));
    }
    let mut out = wf.clone();
    if amp == 0.0 {
        return Ok(out);
    }
    // Index bounds with a small guard against round-off in t·rate.
    let first = (start * wf.update_rate - 1e-9).ceil().max(0.0) as usize;
    let end = ((stop * wf.update_rate - 1e-9).ceil().max(0.0) as usize).min(wf.len);
    for k in first..end {
        out.channels[channel][k] += amp * (omega_exc * (wf.sample_time(k) - start)).sin();
    }
    Ok(out)
}

/// Number of samples [`add_tone`] touches for a window.
pub fn tone_sample_count(wf: &Waveform, window: (f64, f64)) -> usize {
    let first = (window.0 * wf.update_rate - 1e-9).ceil().max(0.0) as usize;
    let end = ((window.1 * wf.update_rate - 1e-9).ceil().max(0.0) as usize).min(wf.len);
    end.saturating_sub(first)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Binary,
    Csv,
}

impl FileFormat {
    /// `.csv` selects CSV, anything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => FileFormat::Csv,
            _ => FileFormat::Binary,
        }
    }
}

pub fn write_binary<W: Write>(wf: &Waveform, mut w: W) -> Result<(), WaveformError> {
    w.write_all(&MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let count = u32::try_from(wf.channel_count()).map_err(|_| WaveformError::Format("too many channels".into()))?;
    w.write_all(&count.to_le_bytes())?;
    w.write_all(&wf.update_rate.to_le_bytes())?;
    w.write_all(&(wf.len as u64).to_le_bytes())?;
    for c in &wf.channels {
        for v in c {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], WaveformError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => WaveformError::Format("file truncated".into()),
        _ => WaveformError::Io(e),
    })?;
    Ok(buf)
}

pub fn read_binary<R: Read>(mut r: R) -> Result<Waveform, WaveformError> {
    if read_array::<4, _>(&mut r)? != MAGIC {
        return Err(WaveformError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != FORMAT_VERSION {
        return Err(WaveformError::Format(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let rate = f64::from_le_bytes(read_array(&mut r)?);
    let len = usize::try_from(u64::from_le_bytes(read_array(&mut r)?))
        .map_err(|_| WaveformError::Format("length overflows".into()))?;
    let mut channels = Vec::with_capacity(count);
    for _ in 0..count {
        let mut c = Vec::with_capacity(len.min(1 << 24));
        for _ in 0..len {
            c.push(f64::from_le_bytes(read_array(&mut r)?));
        }
        channels.push(c);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(WaveformError::Format("trailing bytes".into()));
    }
    Waveform::new(channels, rate).map_err(|e| WaveformError::Format(e.to_string()))
}

pub fn write_csv<W: Write>(wf: &Waveform, mut w: W) -> Result<(), WaveformError> {
    writeln!(w, "# update_rate_hz={}", wf.update_rate)?;
    let mut header = String::from("time_s");
    for c in 0..wf.channel_count() {
        header.push_str(&format!(",ch{c}"));
    }
    writeln!(w, "{header}")?;
    for k in 0..wf.len {
        let mut line = format!("{}", wf.sample_time(k));
        for c in &wf.channels {
            line.push_str(&format!(",{}", c[k]));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: BufRead>(r: R) -> Result<Waveform, WaveformError> {
    let mut lines = r.lines();
    let bad = |m: &str| WaveformError::Format(m.to_string());
    let first = lines.next().ok_or_else(|| bad("empty file"))??;
    let rate: f64 = first
        .strip_prefix("# update_rate_hz=")
        .ok_or_else(|| bad("missing update-rate line"))?
        .trim()
        .parse()
        .map_err(|_| bad("bad update rate"))?;
    let header = lines.next().ok_or_else(|| bad("missing header"))??;
    let count = header.split(',').count().checked_sub(1).ok_or_else(|| bad("empty header"))?;
    let mut channels = vec![Vec::new(); count];
    for (row, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != count + 1 {
            return Err(WaveformError::Format(format!("row {row}: expected {} fields", count + 1)));
        }
        for (c, f) in fields[1..].iter().enumerate() {
            channels[c]
                .push(f.trim().parse().map_err(|_| WaveformError::Format(format!("row {row}: bad value '{f}'")))?);
        }
    }
    Waveform::new(channels, rate).map_err(|e| WaveformError::Format(e.to_string()))
}

pub fn export(wf: &Waveform, path: &Path, format: FileFormat) -> Result<(), WaveformError> {
    let w = BufWriter::new(File::create(path)?);
    match format {
        FileFormat::Binary => write_binary(wf, w),
        FileFormat::Csv => write_csv(wf, w),
    }
}

pub fn import(path: &Path, format: FileFormat) -> Result<Waveform, WaveformError> {
    let r = BufReader::new(File::open(path)?);
    match format {
        FileFormat::Binary => read_binary(r),
        FileFormat::Csv => read_csv(r),
    }
}
