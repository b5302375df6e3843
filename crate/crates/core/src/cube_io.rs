//! `MSRC` binary cube files.
//!
//! Layout (little-endian):
//!
//! | offset | type   | field             |
//! |--------|--------|-------------------|
//! | 0      | [u8;4] | magic `MSRC`      |
//! | 4      | u32    | format version (1)|
//! | 8      | u32    | radar id          |
//! | 12     | f64    | start frequency   |
//! | 20     | f64    | bandwidth         |
//! | 28     | f64    | chirp duration    |
//! | 36     | f64    | ADC sample rate   |
//! | 44     | f64    | start offset      |
//! | 52     | u32    | frames            |
//! | 56     | u32    | chirps per frame  |
//! | 60     | u32    | fast-time samples |
//! | 64     | f32 x2 | interleaved I/Q, frame-major, chirp-middle, sample-minor |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use num_complex::{Complex32, Complex64};

use crate::error::{Error, Result};
use crate::scene::{DataCube, WaveformConfig};

pub const MAGIC: [u8; 4] = *b"MSRC";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct CubeHeader {
    pub radar_id: u32,
    pub waveform: WaveformConfig,
    pub start_offset: f64,
}

impl CubeHeader {
    pub fn of(cube: &DataCube) -> Self {
        CubeHeader {
            radar_id: cube.radar_id,
            waveform: cube.waveform.clone(),
            start_offset: cube.start_offset,
        }
    }

    /// Samples per frame.
    pub fn frame_len(&self) -> usize {
        self.waveform.chirps_per_frame * self.waveform.fast_time_samples
    }

    pub fn encode(&self) -> Result<[u8; HEADER_LEN]> {
        let w = &self.waveform;
        let count = |v: usize, name: &str| {
            u32::try_from(v).map_err(|_| Error::Format(format!("{name} {v} does not fit in u32")))
        };
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&MAGIC);
        out[4..8].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
        out[8..12].copy_from_slice(&self.radar_id.to_le_bytes());
        out[12..20].copy_from_slice(&w.f_start.to_le_bytes());
        out[20..28].copy_from_slice(&w.bandwidth.to_le_bytes());
        out[28..36].copy_from_slice(&w.chirp_duration.to_le_bytes());
        out[36..44].copy_from_slice(&w.adc_sample_rate.to_le_bytes());
        out[44..52].copy_from_slice(&self.start_offset.to_le_bytes());
        out[52..56].copy_from_slice(&count(w.n_frames, "n_frames")?.to_le_bytes());
        out[56..60].copy_from_slice(&count(w.chirps_per_frame, "chirps_per_frame")?.to_le_bytes());
        out[60..64].copy_from_slice(&count(w.fast_time_samples, "fast_time_samples")?.to_le_bytes());
        Ok(out)
    }

    /// Parses and validates a header from the first [`HEADER_LEN`] bytes of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "header needs {HEADER_LEN} bytes, got {}",
                bytes.len()
            )));
        }
        if bytes[0..4] != MAGIC {
            return Err(Error::Format("bad magic, not an MSRC cube".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        let header = CubeHeader {
            radar_id: u32_at(8),
            waveform: WaveformConfig {
                f_start: f64_at(12),
                bandwidth: f64_at(20),
                chirp_duration: f64_at(28),
                adc_sample_rate: f64_at(36),
                n_frames: u32_at(52) as usize,
                chirps_per_frame: u32_at(56) as usize,
                fast_time_samples: u32_at(60) as usize,
            },
            start_offset: f64_at(44),
        };
        header
            .waveform
            .validate()
            .map_err(|e| Error::Format(format!("header: {e}")))?;
        if !(header.start_offset >= 0.0) || !header.start_offset.is_finite() {
            return Err(Error::Format(format!(
                "header: invalid start offset {}",
                header.start_offset
            )));
        }
        Ok(header)
    }

    /// Payload size in bytes, or an error if it overflows.
    pub fn payload_len(&self) -> Result<usize> {
        let w = &self.waveform;
        w.n_frames
            .checked_mul(w.chirps_per_frame)
            .and_then(|v| v.checked_mul(w.fast_time_samples))
            .and_then(|v| v.checked_mul(8))
            .ok_or_else(|| Error::Format("cube dimensions overflow".into()))
    }
}

fn decode_samples(payload: &[u8], out: &mut Vec<Complex32>) -> Result<()> {
    out.clear();
    out.reserve(payload.len() / 8);
    for chunk in payload.chunks_exact(8) {
        let re = f32::from_le_bytes(chunk[0..4].try_into().unwrap());
        let im = f32::from_le_bytes(chunk[4..8].try_into().unwrap());
        if !re.is_finite() || !im.is_finite() {
            return Err(Error::Format("non-finite sample".into()));
        }
        out.push(Complex32::new(re, im));
    }
    Ok(())
}

pub fn encode_cube(cube: &DataCube) -> Result<Vec<u8>> {
    let header = CubeHeader::of(cube);
    let expected = header.payload_len()?;
    if cube.samples.len() * 8 != expected {
        return Err(Error::Format("sample count does not match waveform".into()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + expected);
    out.extend_from_slice(&header.encode()?);
    for s in &cube.samples {
        out.extend_from_slice(&s.re.to_le_bytes());
        out.extend_from_slice(&s.im.to_le_bytes());
    }
    Ok(out)
}

/// Decodes a complete in-memory cube file.
pub fn decode_cube(bytes: &[u8]) -> Result<DataCube> {
    let header = CubeHeader::decode(bytes)?;
    let expected = header.payload_len()?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "payload is {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let mut samples = Vec::new();
    decode_samples(payload, &mut samples)?;
    Ok(DataCube {
        radar_id: header.radar_id,
        waveform: header.waveform,
        start_offset: header.start_offset,
        samples,
    })
}

pub fn write_cube(path: &Path, cube: &DataCube) -> Result<()> {
    let mut writer = CubeWriter::create(path, &CubeHeader::of(cube))?;
    let mut frame = Vec::with_capacity(cube.frame_len());
    for f in 0..cube.waveform.n_frames {
        frame.clear();
        frame.extend(cube.frame(f).iter().map(|s| Complex64::new(s.re.into(), s.im.into())));
        writer.write_frame(&frame)?;
    }
    writer.finish()
}

pub fn read_cube(path: &Path) -> Result<DataCube> {
    let mut reader = CubeReader::open(path)?;
    let header = reader.header().clone();
    let mut samples = Vec::with_capacity(header.payload_len()? / 8);
    let mut frame = Vec::new();
    while reader.next_frame(&mut frame)? {
        samples.extend_from_slice(&frame);
    }
    Ok(DataCube {
        radar_id: header.radar_id,
        waveform: header.waveform,
        start_offset: header.start_offset,
        samples,
    })
}

/// Frame-at-a-time cube writer, so long scenes never need to be held in memory.
pub struct CubeWriter {
    path: PathBuf,
    inner: BufWriter<File>,
    header: CubeHeader,
    frames_written: usize,
    scratch: Vec<u8>,
}

impl CubeWriter {
    pub fn create(path: &Path, header: &CubeHeader) -> Result<Self> {
        let encoded = header.encode()?;
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut inner = BufWriter::with_capacity(1 << 20, file);
        inner.write_all(&encoded).map_err(|e| Error::io(path, e))?;
        Ok(CubeWriter {
            path: path.to_owned(),
            inner,
            header: header.clone(),
            frames_written: 0,
            scratch: Vec::new(),
        })
    }

    /// Appends one frame; samples are narrowed to f32.
    pub fn write_frame(&mut self, frame: &[Complex64]) -> Result<()> {
        if frame.len() != self.header.frame_len() {
            return Err(Error::InvalidInput(format!(
                "frame has {} samples, expected {}",
                frame.len(),
                self.header.frame_len()
            )));
        }
        if self.frames_written == self.header.waveform.n_frames {
            return Err(Error::InvalidInput("all frames already written".into()));
        }
        self.scratch.clear();
        for s in frame {
            self.scratch.extend_from_slice(&(s.re as f32).to_le_bytes());
            self.scratch.extend_from_slice(&(s.im as f32).to_le_bytes());
        }
        self.inner
            .write_all(&self.scratch)
            .map_err(|e| Error::io(&self.path, e))?;
        self.frames_written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        if self.frames_written != self.header.waveform.n_frames {
            return Err(Error::InvalidInput(format!(
                "wrote {} of {} frames",
                self.frames_written, self.header.waveform.n_frames
            )));
        }
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Frame-at-a-time cube reader.
pub struct CubeReader {
    path: PathBuf,
    inner: BufReader<File>,
    header: CubeHeader,
    frames_read: usize,
    scratch: Vec<u8>,
}

impl CubeReader {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
        let mut inner = BufReader::with_capacity(1 << 20, file);
        let mut raw = [0u8; HEADER_LEN];
        inner.read_exact(&mut raw).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => {
                Error::Format(format!("{}: truncated header", path.display()))
            }
            _ => Error::io(path, e),
        })?;
        let header = CubeHeader::decode(&raw)?;
        let expected = header.payload_len()? as u64 + HEADER_LEN as u64;
        if file_len != expected {
            return Err(Error::Format(format!(
                "{}: file is {file_len} bytes, header implies {expected}",
                path.display()
            )));
        }
        Ok(CubeReader {
            path: path.to_owned(),
            inner,
            header,
            frames_read: 0,
            scratch: Vec::new(),
        })
    }

    pub fn header(&self) -> &CubeHeader {
        &self.header
    }

    /// Reads the next frame into `out`; returns `false` once all frames are consumed.
    pub fn next_frame(&mut self, out: &mut Vec<Complex32>) -> Result<bool> {
        if self.frames_read == self.header.waveform.n_frames {
            return Ok(false);
        }
        self.scratch.resize(self.header.frame_len() * 8, 0);
        self.inner
            .read_exact(&mut self.scratch)
            .map_err(|e| Error::io(&self.path, e))?;
        decode_samples(&self.scratch, out)?;
        self.frames_read += 1;
        Ok(true)
    }
}
