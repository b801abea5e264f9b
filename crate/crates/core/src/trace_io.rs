//! Trace file formats.
//!
//! Binary layout (authoritative, all multi-byte fields little-endian):
//!
//! ```text
//! magic          4 bytes  "IQTR"
//! version        u16      currently 1
//! sample_count   u64
//! tau            f64      sample spacing, seconds
//! nbar           f64      photon number
//! truth_present  u8       0 or 1
//! samples        sample_count * (f64 I, f64 Q)
//! [trailer when truth_present = 1]
//! segment_count  u64
//! segments       segment_count * (f64 start_time, u8 state)  state: 0=g 1=e 2=f
//! ```
//!
//! The CSV form (`time_s,i,q` rows, 17 significant digits) round-trips the
//! same data; truth segments ride along as `# truth,<start_s>,<state>`
//! comment lines after the samples.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{IQTrace, StateLabel, TruthSegment};

pub const TRACE_MAGIC: [u8; 4] = *b"IQTR";
pub const TRACE_VERSION: u16 = 1;

pub fn write_trace_bin(mut writer: impl Write, trace: &IQTrace) -> Result<()> {
    writer.write_all(&TRACE_MAGIC)?;
    writer.write_all(&TRACE_VERSION.to_le_bytes())?;
    writer.write_all(&(trace.samples.len() as u64).to_le_bytes())?;
    writer.write_all(&trace.dt.to_le_bytes())?;
    writer.write_all(&trace.nbar.to_le_bytes())?;
    writer.write_all(&[trace.truth.is_some() as u8])?;
    for sample in &trace.samples {
        writer.write_all(&sample.re.to_le_bytes())?;
        writer.write_all(&sample.im.to_le_bytes())?;
    }
    if let Some(truth) = &trace.truth {
        writer.write_all(&(truth.len() as u64).to_le_bytes())?;
        for segment in truth {
            writer.write_all(&segment.start.to_le_bytes())?;
            writer.write_all(&[segment.state.index() as u8])?;
        }
    }
    Ok(())
}

pub fn read_trace_bin(mut reader: impl Read) -> Result<IQTrace> {
    fn take<const N: usize>(reader: &mut impl Read) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        reader.read_exact(&mut buf)?;
        Ok(buf)
    }

    let magic: [u8; 4] = take(&mut reader)?;
    if magic != TRACE_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:?}, not an IQTR trace file"
        )));
    }
    let version = u16::from_le_bytes(take(&mut reader)?);
    if version != TRACE_VERSION {
        return Err(Error::Format(format!(
            "unsupported trace version {version}, expected {TRACE_VERSION}"
        )));
    }
    let sample_count = u64::from_le_bytes(take(&mut reader)?) as usize;
    let dt = f64::from_le_bytes(take(&mut reader)?);
    let nbar = f64::from_le_bytes(take(&mut reader)?);
    let truth_present = take::<1>(&mut reader)?[0];

    // cap the preallocation so a corrupt header cannot balloon memory; the
    // vector grows as actual payload arrives
    let mut samples = Vec::with_capacity(sample_count.min(1 << 20));
    for _ in 0..sample_count {
        let re = f64::from_le_bytes(take(&mut reader)?);
        let im = f64::from_le_bytes(take(&mut reader)?);
        samples.push(Complex64::new(re, im));
    }

    let truth = match truth_present {
        0 => None,
        1 => {
            let segment_count = u64::from_le_bytes(take(&mut reader)?) as usize;
            let mut segments = Vec::with_capacity(segment_count);
            for _ in 0..segment_count {
                let start = f64::from_le_bytes(take(&mut reader)?);
                let code = take::<1>(&mut reader)?[0];
                let state = StateLabel::from_index(code as usize).ok_or_else(|| {
                    Error::Format(format!("invalid state code {code} in truth trailer"))
                })?;
                segments.push(TruthSegment { start, state });
            }
            Some(segments)
        }
        other => {
            return Err(Error::Format(format!(
                "invalid truth flag {other}, expected 0 or 1"
            )));
        }
    };

    let trace = IQTrace {
        dt,
        nbar,
        samples,
        truth,
    };
    trace.validate()?;
    Ok(trace)
}

pub fn write_trace_csv(mut writer: impl Write, trace: &IQTrace) -> Result<()> {
    writeln!(writer, "# iqtrace v{TRACE_VERSION}")?;
    writeln!(writer, "# tau_s={:.16e} nbar={:.16e}", trace.dt, trace.nbar)?;
    writeln!(writer, "time_s,i,q")?;
    for (k, sample) in trace.samples.iter().enumerate() {
        writeln!(
            writer,
            "{:.16e},{:.16e},{:.16e}",
            (k + 1) as f64 * trace.dt,
            sample.re,
            sample.im
        )?;
    }
    if let Some(truth) = &trace.truth {
        for segment in truth {
            writeln!(writer, "# truth,{:.16e},{}", segment.start, segment.state)?;
        }
    }
    Ok(())
}

pub fn read_trace_csv(reader: impl Read) -> Result<IQTrace> {
    let mut text = String::new();
    let mut reader = reader;
    reader.read_to_string(&mut text)?;

    let mut dt = None;
    let mut nbar = None;
    let mut samples = Vec::new();
    let mut truth: Vec<TruthSegment> = Vec::new();

    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line == "time_s,i,q" {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(meta) = rest.strip_prefix("tau_s=") {
                let mut parts = meta.split_whitespace();
                dt = parts.next().and_then(|v| v.parse::<f64>().ok());
                nbar = parts
                    .next()
                    .and_then(|v| v.strip_prefix("nbar="))
                    .and_then(|v| v.parse::<f64>().ok());
            } else if let Some(body) = rest.strip_prefix("truth,") {
                let mut parts = body.split(',');
                let start = parts
                    .next()
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::Format(format!("bad truth line '{line}'")))?;
                let state = parts
                    .next()
                    .and_then(|v| StateLabel::parse(v.trim()))
                    .ok_or_else(|| Error::Format(format!("bad truth line '{line}'")))?;
                truth.push(TruthSegment { start, state });
            }
            continue;
        }
        let mut parts = line.split(',');
        let parse = |field: Option<&str>| -> Result<f64> {
            field
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Format(format!("bad sample line '{line}'")))
        };
        let _time = parse(parts.next())?;
        let re = parse(parts.next())?;
        let im = parse(parts.next())?;
        samples.push(Complex64::new(re, im));
    }

    let trace = IQTrace {
        dt: dt.ok_or_else(|| Error::Format("missing tau_s header".into()))?,
        nbar: nbar.ok_or_else(|| Error::Format("missing nbar header".into()))?,
        samples,
        truth: (!truth.is_empty()).then_some(truth),
    };
    trace.validate()?;
    Ok(trace)
}

pub fn write_trace_file(path: impl AsRef<Path>, trace: &IQTrace) -> Result<()> {
    write_trace_bin(BufWriter::new(File::create(path)?), trace)
}

pub fn read_trace_file(path: impl AsRef<Path>) -> Result<IQTrace> {
    read_trace_bin(BufReader::new(File::open(path)?))
}

pub fn write_trace_csv_file(path: impl AsRef<Path>, trace: &IQTrace) -> Result<()> {
    write_trace_csv(BufWriter::new(File::create(path)?), trace)
}
