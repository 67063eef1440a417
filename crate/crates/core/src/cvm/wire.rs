//! Byte protocol for out-of-process backends. A message is a little-endian
//! `u32` header length, a JSON header, then `payload_count` PNG payloads,
//! each prefixed by its own `u32` length.
//!
//! Request payload order: frames, gray-prefilled frames, dilated masks,
//! base masks, anchors. Response payloads: the output frames.

use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::cvm::{ContextualMask, InpaintBackend, InpaintRequest, InpaintResponse};
use crate::error::{Error, Result};
use crate::io::{decode_png_mask, decode_png_rgb, encode_png_mask, encode_png_rgb};

pub const PROTOCOL: &str = "geoanchor-inpaint";
pub const PROTOCOL_VERSION: u32 = 1;
const MAX_HEADER: u32 = 16 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestHeader {
    pub protocol: String,
    pub version: u32,
    pub segment: usize,
    pub first_frame: usize,
    pub prompt: String,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub anchors: usize,
    pub dilation_px: Vec<usize>,
    pub shadow_px: Vec<usize>,
    pub payload_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseHeader {
    pub protocol: String,
    pub version: u32,
    pub segment: usize,
    pub frames: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub payload_count: usize,
}

fn write_chunk<W: Write>(w: &mut W, bytes: &[u8]) -> Result<()> {
    let len = u32::try_from(bytes.len()).map_err(|_| Error::InvalidArgument("wire chunk exceeds 4 GiB".into()))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_chunk<R: Read>(r: &mut R, limit: u32) -> Result<Vec<u8>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len);
    if len > limit {
        return Err(Error::Parse(format!("wire chunk of {len} bytes exceeds limit {limit}")));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn write_message<W: Write, H: Serialize>(w: &mut W, header: &H, payloads: &[Vec<u8>]) -> Result<()> {
    write_chunk(w, &serde_json::to_vec(header)?)?;
    for p in payloads {
        write_chunk(w, p)?;
    }
    w.flush()?;
    Ok(())
}

fn read_header<R: Read, H: for<'de> Deserialize<'de>>(r: &mut R) -> Result<H> {
    Ok(serde_json::from_slice(&read_chunk(r, MAX_HEADER)?)?)
}

fn read_payloads<R: Read>(r: &mut R, count: usize) -> Result<Vec<Vec<u8>>> {
    (0..count).map(|_| read_chunk(r, u32::MAX)).collect()
}

fn check_protocol(protocol: &str, version: u32) -> Result<()> {
    if protocol != PROTOCOL || version != PROTOCOL_VERSION {
        return Err(Error::Parse(format!("unsupported protocol {protocol} v{version}")));
    }
    Ok(())
}

pub fn write_request<W: Write>(w: &mut W, req: &InpaintRequest) -> Result<()> {
    let (width, height) = req.frames.first().map(|f| f.dims()).unwrap_or((0, 0));
    let mut payloads = Vec::new();
    for f in req.frames.iter().chain(&req.gray) {
        payloads.push(encode_png_rgb(f)?);
    }
    for m in &req.masks {
        payloads.push(encode_png_mask(&m.dilated)?);
    }
    for m in &req.masks {
        payloads.push(encode_png_mask(&m.base)?);
    }
    for a in &req.anchors {
        payloads.push(encode_png_rgb(a)?);
    }
    let header = RequestHeader {
        protocol: PROTOCOL.into(),
        version: PROTOCOL_VERSION,
        segment: req.segment,
        first_frame: req.first_frame,
        prompt: req.prompt.clone(),
        width,
        height,
        frames: req.frames.len(),
        anchors: req.anchors.len(),
        dilation_px: req.masks.iter().map(|m| m.dilation_px).collect(),
        shadow_px: req.masks.iter().map(|m| m.shadow_px).collect(),
        payload_count: payloads.len(),
    };
    write_message(w, &header, &payloads)
}

pub fn read_request<R: Read>(r: &mut R) -> Result<InpaintRequest> {
    let h: RequestHeader = read_header(r)?;
    check_protocol(&h.protocol, h.version)?;
    let n = h.frames;
    if h.payload_count != 4 * n + h.anchors || h.dilation_px.len() != n || h.shadow_px.len() != n {
        return Err(Error::Parse("request header counts are inconsistent".into()));
    }
    let p = read_payloads(r, h.payload_count)?;
    let rgb = |range: std::ops::Range<usize>| p[range].iter().map(|b| decode_png_rgb(b)).collect::<Result<Vec<_>>>();
    let frames = rgb(0..n)?;
    let gray = rgb(n..2 * n)?;
    let anchors = rgb(4 * n..4 * n + h.anchors)?;
    let masks = (0..n)
        .map(|i| {
            Ok(ContextualMask {
                frame: h.first_frame + i,
                dilated: decode_png_mask(&p[2 * n + i])?,
                base: decode_png_mask(&p[3 * n + i])?,
                dilation_px: h.dilation_px[i],
                shadow_px: h.shadow_px[i],
            })
        })
        .collect::<Result<_>>()?;
    Ok(InpaintRequest {
        segment: h.segment,
        first_frame: h.first_frame,
        frames,
        masks,
        gray,
        anchors,
        prompt: h.prompt,
    })
}

pub fn write_response<W: Write>(w: &mut W, resp: &Result<InpaintResponse>, segment: usize) -> Result<()> {
    match resp {
        Ok(resp) => {
            let payloads = resp.frames.iter().map(encode_png_rgb).collect::<Result<Vec<_>>>()?;
            let header = ResponseHeader {
                protocol: PROTOCOL.into(),
                version: PROTOCOL_VERSION,
                segment: resp.segment,
                frames: resp.frames.len(),
                error: None,
                payload_count: payloads.len(),
            };
            write_message(w, &header, &payloads)
        }
        Err(e) => {
            let header = ResponseHeader {
                protocol: PROTOCOL.into(),
                version: PROTOCOL_VERSION,
                segment,
                frames: 0,
                error: Some(e.to_string()),
                payload_count: 0,
            };
            write_message(w, &header, &[])
        }
    }
}

pub fn read_response<R: Read>(r: &mut R) -> Result<InpaintResponse> {
    let h: ResponseHeader = read_header(r)?;
    check_protocol(&h.protocol, h.version)?;
    if let Some(message) = h.error {
        return Err(Error::Backend { segment: h.segment, message });
    }
    if h.payload_count != h.frames {
        return Err(Error::Parse("response header counts are inconsistent".into()));
    }
    let frames = read_payloads(r, h.payload_count)?.iter().map(|b| decode_png_rgb(b)).collect::<Result<_>>()?;
    Ok(InpaintResponse { segment: h.segment, frames })
}

/// Serves requests from `input` until end of stream.
pub fn serve<R: Read, W: Write, B: InpaintBackend + ?Sized>(
    input: &mut R,
    output: &mut W,
    backend: &mut B,
) -> Result<usize> {
    let mut served = 0;
    loop {
        let req = match read_request(input) {
            Ok(r) => r,
            Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(served),
            Err(e) => return Err(e),
        };
        write_response(output, &backend.inpaint(&req), req.segment)?;
        served += 1;
    }
}

/// Runs an external command per segment: the request goes to its stdin,
/// the response is read from its stdout.
#[derive(Debug, Clone)]
pub struct ProcessBackend {
    pub program: String,
    pub args: Vec<String>,
    pub timeout: Duration,
}

impl ProcessBackend {
    pub fn new(program: impl Into<String>, args: Vec<String>, timeout: Duration) -> Self {
        Self { program: program.into(), args, timeout }
    }

    /// Splits a command line on whitespace.
    pub fn from_command_line(line: &str, timeout: Duration) -> Result<Self> {
        let mut parts = line.split_whitespace().map(String::from);
        let program = parts.next().ok_or_else(|| Error::InvalidArgument("empty backend command".into()))?;
        Ok(Self::new(program, parts.collect(), timeout))
    }
}

impl InpaintBackend for ProcessBackend {
    fn inpaint(&mut self, req: &InpaintRequest) -> Result<InpaintResponse> {
        let fail = |message: String| Error::Backend { segment: req.segment, message };
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| fail(format!("cannot start {}: {e}", self.program)))?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let mut stdout = child.stdout.take().expect("piped stdout");
        let mut bytes = Vec::new();
        write_request(&mut bytes, req)?;
        let writer = std::thread::spawn(move || stdin.write_all(&bytes));
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let _ = tx.send(read_response(&mut stdout));
        });
        let result = match rx.recv_timeout(self.timeout) {
            Ok(r) => r,
            Err(_) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(fail(format!("no response within {:?}", self.timeout)));
            }
        };
        let _ = writer.join();
        let status = child.wait()?;
        match result {
            Ok(resp) => Ok(resp),
            Err(e @ Error::Backend { .. }) => Err(e),
            Err(e) => Err(fail(format!("{e} ({status})"))),
        }
    }
}
