//! Binary trace container.
//!
//! Layout (all little-endian):
//!
//! ```text
//! header:  magic "HWK1" | u32 version | f64 sample_rate_hz | u32 cycle_len
//!          | u32 n_appliances | u8 has_individual
//! frame:   u64 cycle_id | u32 label | f32 voltage[cycle_len]
//!          | f32 aggregate[cycle_len]
//!          | f32 individual[n_appliances][cycle_len]   (only when flagged)
//! ```
//!
//! Samples are stored as `f32`; in-memory `f64` traces survive a
//! write-read-write round trip byte-identically after the first
//! quantization. Truncated or foreign input surfaces as a format error,
//! never a panic.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{format_err, param, Result};
use crate::simulate::{BackgroundNoise, CycleFrame, GridSpec, Trace};

pub const TRACE_MAGIC: [u8; 4] = *b"HWK1";
pub const TRACE_VERSION: u32 = 1;

/// Labels live in a `u32` on disk, capping the appliance count.
const MAX_APPLIANCES: u32 = 32;

/// Streaming frame writer over any byte sink.
#[derive(Debug)]
pub struct TraceWriter<W: Write> {
    w: W,
    cycle_len: usize,
    n_appliances: u32,
    has_individual: bool,
    frames_written: u64,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(mut w: W, grid: &GridSpec, n_appliances: u32, has_individual: bool) -> Result<Self> {
        grid.validate()?;
        if n_appliances > MAX_APPLIANCES {
            return Err(param(format!(
                "trace files store at most {MAX_APPLIANCES} appliances, got {n_appliances}"
            )));
        }
        w.write_all(&TRACE_MAGIC)?;
        w.write_all(&TRACE_VERSION.to_le_bytes())?;
        w.write_all(&grid.sample_rate_hz.to_le_bytes())?;
        w.write_all(&(grid.cycle_len() as u32).to_le_bytes())?;
        w.write_all(&n_appliances.to_le_bytes())?;
        w.write_all(&[u8::from(has_individual)])?;
        Ok(TraceWriter {
            w,
            cycle_len: grid.cycle_len(),
            n_appliances,
            has_individual,
            frames_written: 0,
        })
    }

    pub fn write_frame(&mut self, frame: &CycleFrame) -> Result<()> {
        if frame.voltage.len() != self.cycle_len || frame.aggregate.len() != self.cycle_len {
            return Err(param(format!(
                "frame {} sample count does not match the {}-sample header",
                frame.cycle_id, self.cycle_len
            )));
        }
        if self.n_appliances < 64 && frame.label >> self.n_appliances != 0 {
            return Err(param(format!(
                "frame {} label has bits beyond the {} declared appliances",
                frame.cycle_id, self.n_appliances
            )));
        }
        self.w.write_all(&frame.cycle_id.to_le_bytes())?;
        self.w.write_all(&(frame.label as u32).to_le_bytes())?;
        write_samples(&mut self.w, &frame.voltage)?;
        write_samples(&mut self.w, &frame.aggregate)?;
        match (&frame.individual, self.has_individual) {
            (Some(ind), true) => {
                if ind.len() != self.n_appliances as usize {
                    return Err(param(format!(
                        "frame {} carries {} individual channels, header says {}",
                        frame.cycle_id,
                        ind.len(),
                        self.n_appliances
                    )));
                }
                for chan in ind {
                    if chan.len() != self.cycle_len {
                        return Err(param("individual channel sample count mismatch"));
                    }
                    write_samples(&mut self.w, chan)?;
                }
            }
            (None, false) => {}
            _ => {
                return Err(param(
                    "frame individual-channel presence disagrees with the header flag",
                ))
            }
        }
        self.frames_written += 1;
        Ok(())
    }

    pub fn frames_written(&self) -> u64 {
        self.frames_written
    }

    /// Flush and hand back the sink.
    pub fn finish(mut self) -> Result<W> {
        self.w.flush()?;
        Ok(self.w)
    }
}

fn write_samples<W: Write>(w: &mut W, samples: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(samples.len() * 4);
    for &s in samples {
        buf.extend_from_slice(&(s as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Streaming frame reader over any byte source.
#[derive(Debug)]
pub struct TraceReader<R: Read> {
    r: R,
    sample_rate_hz: f64,
    cycle_len: usize,
    n_appliances: u32,
    has_individual: bool,
}

impl<R: Read> TraceReader<R> {
    pub fn new(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_header_bytes(&mut r, &mut magic)?;
        if magic != TRACE_MAGIC {
            return Err(format_err("not a trace file (bad magic)"));
        }
        let version = read_u32(&mut r)?;
        if version != TRACE_VERSION {
            return Err(format_err(format!("unsupported trace version {version}")));
        }
        let sample_rate_hz = f64::from_le_bytes(read_array::<8, _>(&mut r)?);
        let cycle_len = read_u32(&mut r)? as usize;
        let n_appliances = read_u32(&mut r)?;
        let mut flag = [0u8; 1];
        read_header_bytes(&mut r, &mut flag)?;
        if cycle_len < 4 || !(sample_rate_hz > 0.0) || n_appliances > MAX_APPLIANCES || flag[0] > 1
        {
            return Err(format_err("trace header fields out of range"));
        }
        Ok(TraceReader {
            r,
            sample_rate_hz,
            cycle_len,
            n_appliances,
            has_individual: flag[0] == 1,
        })
    }

    pub fn cycle_len(&self) -> usize {
        self.cycle_len
    }

    pub fn n_appliances(&self) -> u32 {
        self.n_appliances
    }

    pub fn has_individual(&self) -> bool {
        self.has_individual
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    /// Grid implied by the header. Only sampling geometry is stored, so
    /// jitter and noise come back as zero.
    pub fn grid(&self) -> GridSpec {
        GridSpec {
            mains_hz: self.sample_rate_hz / self.cycle_len as f64,
            sample_rate_hz: self.sample_rate_hz,
            voltage_jitter_rel: 0.0,
            background_noise_a: BackgroundNoise {
                mean_a: 0.0,
                std_a: 0.0,
            },
            ..GridSpec::default()
        }
    }

    /// Next frame, or `None` at a clean end of stream.
    pub fn read_frame(&mut self) -> Result<Option<CycleFrame>> {
        let mut id_buf = [0u8; 8];
        if !read_or_eof(&mut self.r, &mut id_buf)? {
            return Ok(None);
        }
        let cycle_id = u64::from_le_bytes(id_buf);
        let label = read_u32(&mut self.r)? as u64;
        let voltage = read_samples(&mut self.r, self.cycle_len)?;
        let aggregate = read_samples(&mut self.r, self.cycle_len)?;
        let individual = if self.has_individual {
            let mut chans = Vec::with_capacity(self.n_appliances as usize);
            for _ in 0..self.n_appliances {
                chans.push(read_samples(&mut self.r, self.cycle_len)?);
            }
            Some(chans)
        } else {
            None
        };
        Ok(Some(CycleFrame {
            cycle_id,
            label,
            voltage,
            aggregate,
            individual,
        }))
    }
}

/// Fill `buf`; clean EOF before the first byte returns `false`, a partial
/// fill is a truncation error.
fn read_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => {
                return if filled == 0 {
                    Ok(false)
                } else {
                    Err(format_err("trace truncated mid-frame"))
                }
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(true)
}

fn read_header_bytes<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    if read_or_eof(r, buf)? {
        Ok(())
    } else {
        Err(format_err("trace truncated inside the header"))
    }
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    if read_or_eof(r, &mut buf)? {
        Ok(buf)
    } else {
        Err(format_err("trace truncated"))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array::<4, _>(r)?))
}

fn read_samples<R: Read>(r: &mut R, len: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; len * 4];
    if !read_or_eof(r, &mut buf)? {
        return Err(format_err("trace truncated mid-frame"));
    }
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Write a whole trace to `path`.
pub fn write_trace(path: &Path, trace: &Trace) -> Result<()> {
    let f = File::create(path)?;
    let has_individual = trace.frames.first().is_some_and(|f| f.individual.is_some());
    let mut w = TraceWriter::new(
        BufWriter::new(f),
        &trace.grid,
        trace.n_appliances,
        has_individual,
    )?;
    for frame in &trace.frames {
        w.write_frame(frame)?;
    }
    w.finish()?;
    Ok(())
}

/// Read a whole trace from `path`. Appliance specs are not stored in the
/// container, so `appliances` comes back empty.
pub fn read_trace(path: &Path) -> Result<Trace> {
    let f = File::open(path)?;
    let mut r = TraceReader::new(BufReader::new(f))?;
    let mut frames = Vec::new();
    while let Some(frame) = r.read_frame()? {
        frames.push(frame);
    }
    Ok(Trace {
        grid: r.grid(),
        n_appliances: r.n_appliances(),
        appliances: Vec::new(),
        frames,
    })
}
