//! `EPK1` embedding packs.
//!
//! All integers are little-endian.
//!
//! ```text
//! header (21 bytes)
//!   0  magic        "EPK1"
//!   4  version      u16 = 1
//!   6  flags        u16, bit 0: every record carries an assignment map
//!   8  channels     u32 (C_o)
//!  12  dtype        u8, 0 = f32
//!  13  record_count u64
//! record
//!   image_id  u16 byte length + UTF-8
//!   grid_h    u16
//!   grid_w    u16
//!   vec_count u32
//!   method    u8
//!   payload   vec_count × channels f32, row-major
//!   labels    grid_h × grid_w u16   (only when flag bit 0 is set)
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::aggregate::{ClusterAssignment, Method, RepresentativeSet};
use crate::error::{Error, Result};
use crate::tensor::EmbeddingMap;

pub const MAGIC: [u8; 4] = *b"EPK1";
pub const VERSION: u16 = 1;
pub const FLAG_ASSIGNMENTS: u16 = 1;
pub const DTYPE_F32: u8 = 0;
pub const HEADER_LEN: u64 = 21;
const RECORD_COUNT_OFFSET: u64 = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PackHeader {
    pub flags: u16,
    pub channels: u32,
    pub record_count: u64,
}

impl PackHeader {
    pub fn has_assignments(&self) -> bool {
        self.flags & FLAG_ASSIGNMENTS != 0
    }

    pub fn encode(&self) -> [u8; HEADER_LEN as usize] {
        let mut out = [0u8; HEADER_LEN as usize];
        out[0..4].copy_from_slice(&MAGIC);
        out[4..6].copy_from_slice(&VERSION.to_le_bytes());
        out[6..8].copy_from_slice(&self.flags.to_le_bytes());
        out[8..12].copy_from_slice(&self.channels.to_le_bytes());
        out[12] = DTYPE_F32;
        out[13..21].copy_from_slice(&self.record_count.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8; HEADER_LEN as usize]) -> Result<Self> {
        if bytes[0..4] != MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected \"EPK1\"",
                String::from_utf8_lossy(&bytes[0..4])
            )));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported pack version {version}, expected {VERSION}")));
        }
        if bytes[12] != DTYPE_F32 {
            return Err(Error::Format(format!("unsupported dtype {}", bytes[12])));
        }
        let flags = u16::from_le_bytes([bytes[6], bytes[7]]);
        if flags & !FLAG_ASSIGNMENTS != 0 {
            return Err(Error::Format(format!("unknown flag bits {flags:#06x}")));
        }
        let channels = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if channels == 0 {
            return Err(Error::Format("pack declares zero channels".into()));
        }
        Ok(Self { flags, channels, record_count: u64::from_le_bytes(bytes[13..21].try_into().unwrap()) })
    }
}

/// One image's vectors as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct PackRecord {
    pub image_id: String,
    pub grid_h: u16,
    pub grid_w: u16,
    pub method: Method,
    /// `vec_count × channels`
    pub vectors: Vec<f32>,
    pub labels: Option<Vec<u16>>,
}

impl PackRecord {
    pub fn vec_count(&self, channels: usize) -> usize {
        self.vectors.len() / channels
    }

    pub fn from_embedding_map(map: &EmbeddingMap) -> Result<Self> {
        Ok(Self {
            image_id: map.image_id.clone(),
            grid_h: grid_u16(map.height())?,
            grid_w: grid_u16(map.width())?,
            method: Method::Dense,
            vectors: map.values().to_vec(),
            labels: None,
        })
    }

    pub fn from_representatives(set: &RepresentativeSet) -> Result<Self> {
        let labels = match &set.assignment {
            Some(a) => Some(
                a.labels()
                    .iter()
                    .map(|&l| {
                        u16::try_from(l).map_err(|_| Error::InvalidArgument(format!("label {l} does not fit in u16")))
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => None,
        };
        Ok(Self {
            image_id: set.image_id.clone(),
            grid_h: grid_u16(set.grid_dims.0)?,
            grid_w: grid_u16(set.grid_dims.1)?,
            method: set.method,
            vectors: set.vectors.clone(),
            labels,
        })
    }

    pub fn to_embedding_map(&self, channels: usize) -> Result<EmbeddingMap> {
        EmbeddingMap::new(
            self.image_id.clone(),
            self.grid_h as usize,
            self.grid_w as usize,
            channels,
            self.vectors.clone(),
        )
    }

    pub fn into_representatives(self, channels: usize) -> Result<RepresentativeSet> {
        let n = self.vec_count(channels);
        let assignment = match self.labels {
            Some(l) => Some(ClusterAssignment::new(l.into_iter().map(u32::from).collect(), n)?),
            None => None,
        };
        RepresentativeSet::new(
            self.image_id,
            self.method,
            channels,
            self.vectors,
            assignment,
            (self.grid_h as usize, self.grid_w as usize),
        )
    }

    fn check(&self, channels: usize) -> Result<()> {
        if !self.vectors.len().is_multiple_of(channels) {
            return Err(Error::Dimension(format!(
                "record {:?}: {} values are not a multiple of {channels} channels",
                self.image_id,
                self.vectors.len()
            )));
        }
        let n = self.vec_count(channels);
        let cells = self.grid_h as usize * self.grid_w as usize;
        if self.method == Method::Dense && n != cells {
            return Err(Error::Validation(format!(
                "dense record {:?} has {n} vectors for a {}x{} grid",
                self.image_id, self.grid_h, self.grid_w
            )));
        }
        if n > u32::MAX as usize {
            return Err(Error::InvalidArgument(format!("record {:?} has too many vectors", self.image_id)));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != cells {
                return Err(Error::Validation(format!(
                    "record {:?} has {} labels for {cells} cells",
                    self.image_id,
                    labels.len()
                )));
            }
            if let Some(bad) = labels.iter().find(|&&l| l as usize >= n) {
                return Err(Error::Validation(format!("record {:?}: label {bad} >= vec_count {n}", self.image_id)));
            }
        }
        Ok(())
    }

    /// Appends the record's on-disk bytes to `out`.
    pub fn encode_into(&self, channels: usize, with_labels: bool, out: &mut Vec<u8>) -> Result<()> {
        self.check(channels)?;
        let id = self.image_id.as_bytes();
        let id_len = u16::try_from(id.len())
            .map_err(|_| Error::InvalidArgument(format!("image id of {} bytes is too long", id.len())))?;
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(id);
        out.extend_from_slice(&self.grid_h.to_le_bytes());
        out.extend_from_slice(&self.grid_w.to_le_bytes());
        out.extend_from_slice(&(self.vec_count(channels) as u32).to_le_bytes());
        out.push(self.method.code());
        for v in &self.vectors {
            out.extend_from_slice(&v.to_le_bytes());
        }
        match (&self.labels, with_labels) {
            (Some(labels), true) => {
                for l in labels {
                    out.extend_from_slice(&l.to_le_bytes());
                }
            }
            (None, true) => {
                return Err(Error::InvalidArgument(format!(
                    "pack stores assignment maps but record {:?} has none",
                    self.image_id
                )))
            }
            (_, false) => {}
        }
        Ok(())
    }
}

fn grid_u16(v: usize) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::InvalidArgument(format!("grid dimension {v} does not fit in u16")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PackSummary {
    pub records: u64,
    pub bytes: u64,
}

/// Single-writer pack output. The record count in the header is patched in
/// by [`PackWriter::finish`].
pub struct PackWriter<W: Write + Seek> {
    inner: W,
    header: PackHeader,
    bytes: u64,
    scratch: Vec<u8>,
}

impl PackWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, channels: usize, with_assignments: bool) -> Result<Self> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::path(path, e))?;
        Self::new(BufWriter::new(file), channels, with_assignments)
    }
}

impl<W: Write + Seek> PackWriter<W> {
    pub fn new(mut inner: W, channels: usize, with_assignments: bool) -> Result<Self> {
        let channels = u32::try_from(channels)
            .ok()
            .filter(|&c| c > 0)
            .ok_or_else(|| Error::InvalidArgument(format!("invalid channel count {channels}")))?;
        let header =
            PackHeader { flags: if with_assignments { FLAG_ASSIGNMENTS } else { 0 }, channels, record_count: 0 };
        inner.write_all(&header.encode())?;
        Ok(Self { inner, header, bytes: HEADER_LEN, scratch: Vec::new() })
    }

    pub fn channels(&self) -> usize {
        self.header.channels as usize
    }

    pub fn write(&mut self, record: &PackRecord) -> Result<()> {
        self.scratch.clear();
        record.encode_into(self.channels(), self.header.has_assignments(), &mut self.scratch)?;
        self.inner.write_all(&self.scratch)?;
        self.bytes += self.scratch.len() as u64;
        self.header.record_count += 1;
        Ok(())
    }

    pub fn write_representatives(&mut self, set: &RepresentativeSet) -> Result<()> {
        if set.channels != self.channels() {
            return Err(Error::Dimension(format!(
                "record {:?} has {} channels, pack has {}",
                set.image_id,
                set.channels,
                self.channels()
            )));
        }
        self.write(&PackRecord::from_representatives(set)?)
    }

    pub fn write_embedding_map(&mut self, map: &EmbeddingMap) -> Result<()> {
        if map.channels() != self.channels() {
            return Err(Error::Dimension(format!(
                "map {:?} has {} channels, pack has {}",
                map.image_id,
                map.channels(),
                self.channels()
            )));
        }
        self.write(&PackRecord::from_embedding_map(map)?)
    }

    /// Patches the record count, flushes and returns the inner writer.
    pub fn finish(mut self) -> Result<(PackSummary, W)> {
        self.inner.seek(SeekFrom::Start(RECORD_COUNT_OFFSET))?;
        self.inner.write_all(&self.header.record_count.to_le_bytes())?;
        self.inner.seek(SeekFrom::End(0))?;
        self.inner.flush()?;
        Ok((PackSummary { records: self.header.record_count, bytes: self.bytes }, self.inner))
    }
}

/// Writes `records` to a new pack at `path`.
pub fn write_pack<'a>(
    path: impl AsRef<Path>,
    channels: usize,
    with_assignments: bool,
    records: impl IntoIterator<Item = &'a PackRecord>,
) -> Result<PackSummary> {
    let mut writer = PackWriter::create(path, channels, with_assignments)?;
    for r in records {
        writer.write(r)?;
    }
    Ok(writer.finish()?.0)
}

/// Streaming pack reader; yields one record at a time.
pub struct PackReader<R: Read> {
    inner: R,
    header: PackHeader,
    offset: u64,
    remaining: u64,
    failed: bool,
}

impl PackReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::path(path, e))?;
        Self::new(BufReader::new(file))
    }
}

impl<R: Read> PackReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut bytes = [0u8; HEADER_LEN as usize];
        read_exact_or(&mut inner, &mut bytes, 0, "header")?;
        let header = PackHeader::decode(&bytes)?;
        Ok(Self::with_header(inner, header, HEADER_LEN))
    }

    /// Reads a bare record stream described by `header`, starting at byte
    /// `offset` of the enclosing file.
    pub fn with_header(inner: R, header: PackHeader, offset: u64) -> Self {
        Self { inner, header, offset, remaining: header.record_count, failed: false }
    }

    pub fn header(&self) -> PackHeader {
        self.header
    }

    pub fn channels(&self) -> usize {
        self.header.channels as usize
    }

    fn read_record(&mut self) -> Result<PackRecord> {
        let start = self.offset;
        let channels = self.channels();
        let mut buf = Vec::new();
        let mut take = |inner: &mut R, n: usize, what: &str| -> Result<Vec<u8>> {
            buf.resize(n, 0);
            read_exact_or(inner, &mut buf, start, what)?;
            Ok(std::mem::take(&mut buf))
        };
        let id_len = u16::from_le_bytes(take(&mut self.inner, 2, "image id length")?.try_into().unwrap());
        let id = take(&mut self.inner, id_len as usize, "image id")?;
        let image_id = String::from_utf8(id)
            .map_err(|_| Error::Corrupt { offset: start, reason: "image id is not UTF-8".into() })?;
        let fixed = take(&mut self.inner, 9, "record dimensions")?;
        let grid_h = u16::from_le_bytes([fixed[0], fixed[1]]);
        let grid_w = u16::from_le_bytes([fixed[2], fixed[3]]);
        let vec_count = u32::from_le_bytes(fixed[4..8].try_into().unwrap()) as usize;
        let method = Method::from_code(fixed[8])
            .ok_or_else(|| Error::Corrupt { offset: start, reason: format!("unknown method code {}", fixed[8]) })?;
        let payload_len = vec_count
            .checked_mul(channels)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Corrupt { offset: start, reason: "payload size overflows".into() })?;
        let payload = take(&mut self.inner, payload_len, "payload")?;
        let vectors: Vec<f32> = payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        let cells = grid_h as usize * grid_w as usize;
        let labels = if self.header.has_assignments() {
            let raw = take(&mut self.inner, cells * 2, "assignment labels")?;
            Some(raw.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect::<Vec<_>>())
        } else {
            None
        };
        let consumed = 2 + id_len as u64 + 9 + payload_len as u64 + labels.as_ref().map_or(0, |l| l.len() as u64 * 2);
        self.offset += consumed;
        let record = PackRecord { image_id, grid_h, grid_w, method, vectors, labels };
        record.check(channels).map_err(|e| Error::Corrupt { offset: start, reason: e.to_string() })?;
        Ok(record)
    }
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], offset: u64, what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Corrupt { offset, reason: format!("truncated {what}") },
        _ => Error::Io(e),
    })
}

impl<R: Read> Iterator for PackReader<R> {
    type Item = Result<PackRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        if self.remaining == 0 {
            let mut probe = [0u8; 1];
            return match self.inner.read(&mut probe) {
                Ok(0) => None,
                Ok(_) => {
                    self.failed = true;
                    Some(Err(Error::Corrupt {
                        offset: self.offset,
                        reason: "trailing bytes after the declared records".into(),
                    }))
                }
                Err(e) => {
                    self.failed = true;
                    Some(Err(e.into()))
                }
            };
        }
        let result = self.read_record();
        match &result {
            Ok(_) => self.remaining -= 1,
            Err(_) => self.failed = true,
        }
        Some(result)
    }
}

/// Opens a pack for streaming iteration.
pub fn read_pack(path: impl AsRef<Path>) -> Result<PackReader<BufReader<File>>> {
    PackReader::open(path)
}
