//! The `.fkdl` label container and the storage-cost model.
//!
//! Layout (little-endian, no padding):
//!
//! ```text
//! header   magic "FKDL" | version u16 | mode u8 | C u32 | K u16 | M u32      (17 bytes)
//! record   x f32 | y f32 | w f32 | h f32 | flip u8 | payload
//! payload  Full, SslLogits   C × f32
//!          Hard              u32 index
//!          Smooth            u32 index, f32 prob
//!          MarginalSmooth,
//!          MarginalRenorm    K × u32 index, then K × f32 prob
//! ```
//!
//! Mode code 6 is a label map: the `M` field holds the spatial size `S` and
//! the body is `S × S × C` f32 logits, row-major with classes innermost.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::quantize::{CompressedLabel, QuantizationMode, TopEntry};

pub const MAGIC: [u8; 4] = *b"FKDL";
pub const VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 17;
/// Mode code of a serialized label map.
pub const LABEL_MAP_CODE: u8 = 6;
/// Stored augmentation scalars per crop: 4 box coordinates and the flip flag.
pub const AUG_VALUES: u64 = 5;
pub const BYTES_PER_VALUE: u64 = 4;
/// Box coordinates and the flip byte.
const AUG_BYTES: usize = 17;
const BOX_SLACK: f32 = 1e-6;

/// A crop rectangle in coordinates normalized to the source image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropBox {
    pub x: f32,
    pub y: f32,
    pub w: f32,
    pub h: f32,
}

impl CropBox {
    pub const FULL: CropBox = CropBox {
        x: 0.0,
        y: 0.0,
        w: 1.0,
        h: 1.0,
    };

    pub fn new(x: f32, y: f32, w: f32, h: f32) -> Result<Self> {
        let b = CropBox { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let CropBox { x, y, w, h } = *self;
        if ![x, y, w, h].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("crop box"));
        }
        if !(w > 0.0 && h > 0.0) {
            return Err(Error::invalid(format!("degenerate crop box {w}x{h}")));
        }
        if x < 0.0 || y < 0.0 || x + w > 1.0 + BOX_SLACK || y + h > 1.0 + BOX_SLACK {
            return Err(Error::OutOfBounds(format!(
                "crop box ({x}, {y}, {w}, {h}) outside the unit square"
            )));
        }
        Ok(())
    }
}

/// Everything needed to replay the augmentation of one crop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugRecord {
    pub crop: CropBox,
    /// Horizontal mirror.
    pub flip: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CropRecord {
    pub aug: AugRecord,
    pub label: CompressedLabel,
}

/// All stored crops of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelFile {
    pub version: u16,
    pub mode: QuantizationMode,
    pub classes: u32,
    pub records: Vec<CropRecord>,
}

impl LabelFile {
    pub fn new(mode: QuantizationMode, classes: u32, records: Vec<CropRecord>) -> Result<Self> {
        let f = LabelFile {
            version: VERSION,
            mode,
            classes,
            records,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn crops(&self) -> usize {
        self.records.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.mode.validate(self.classes as usize)?;
        if self.records.is_empty() {
            return Err(Error::invalid("a label file needs at least one record"));
        }
        for (i, r) in self.records.iter().enumerate() {
            r.aug.crop.validate()?;
            if r.label.mode() != self.mode {
                return Err(Error::invalid(format!(
                    "record {i} has mode {} but the file is {}",
                    r.label.mode(),
                    self.mode
                )));
            }
            r.label.validate(self.classes as usize)?;
        }
        Ok(())
    }
}

fn single(v: f64) -> Result<f32> {
    let s = v as f32;
    if s as f64 != v {
        return Err(Error::invalid(format!(
            "{v} is not representable as a 32-bit float; round with to_storage_precision()"
        )));
    }
    Ok(s)
}

fn put_header(out: &mut Vec<u8>, version: u16, code: u8, classes: u32, k: u16, m: u32) {
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&version.to_le_bytes());
    out.push(code);
    out.extend_from_slice(&classes.to_le_bytes());
    out.extend_from_slice(&k.to_le_bytes());
    out.extend_from_slice(&m.to_le_bytes());
}

fn put_f32(out: &mut Vec<u8>, v: f64) -> Result<()> {
    out.extend_from_slice(&single(v)?.to_le_bytes());
    Ok(())
}

/// Serializes a label file. Every stored real must already be a 32-bit
/// float value so that `decode(encode(f)) == f` holds bitwise.
pub fn encode(f: &LabelFile) -> Result<Vec<u8>> {
    f.validate()?;
    let mut out = Vec::with_capacity(encoded_size(f.mode, f.classes as u64, f.crops() as u64) as usize);
    put_header(
        &mut out,
        f.version,
        f.mode.code(),
        f.classes,
        f.mode.k(),
        f.records.len() as u32,
    );
    for r in &f.records {
        let b = r.aug.crop;
        for v in [b.x, b.y, b.w, b.h] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(r.aug.flip as u8);
        match &r.label {
            CompressedLabel::Full(v) | CompressedLabel::SslLogits(v) => {
                for x in v {
                    put_f32(&mut out, *x)?;
                }
            }
            CompressedLabel::Hard(i) => out.extend_from_slice(&i.to_le_bytes()),
            CompressedLabel::Smooth { index, prob } => {
                out.extend_from_slice(&index.to_le_bytes());
                put_f32(&mut out, *prob)?;
            }
            CompressedLabel::MarginalSmooth(e) | CompressedLabel::MarginalRenorm(e) => {
                for t in e {
                    out.extend_from_slice(&t.index.to_le_bytes());
                }
                for t in e {
                    put_f32(&mut out, t.prob)?;
                }
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> &'a [u8] {
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        s
    }
    fn u8(&mut self) -> u8 {
        self.take(1)[0]
    }
    fn u16(&mut self) -> u16 {
        u16::from_le_bytes(self.take(2).try_into().unwrap())
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take(4).try_into().unwrap())
    }
    fn f32(&mut self) -> f32 {
        f32::from_le_bytes(self.take(4).try_into().unwrap())
    }
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

struct Header {
    version: u16,
    code: u8,
    classes: u32,
    k: u16,
    count: u32,
}

fn read_header(cur: &mut Cursor<'_>) -> Result<Header, FormatError> {
    if cur.remaining() < 4 || cur.bytes[..4] != MAGIC {
        let mut found = [0u8; 4];
        let n = cur.remaining().min(4);
        found[..n].copy_from_slice(&cur.bytes[..n]);
        return Err(FormatError::BadMagic(found));
    }
    if cur.remaining() < HEADER_BYTES {
        return Err(FormatError::TruncatedHeader(cur.remaining()));
    }
    cur.take(4);
    let version = cur.u16();
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    Ok(Header {
        version,
        code: cur.u8(),
        classes: cur.u32(),
        k: cur.u16(),
        count: cur.u32(),
    })
}

/// Parses and fully validates a label file.
pub fn decode(bytes: &[u8]) -> Result<LabelFile> {
    let mut cur = Cursor { bytes, pos: 0 };
    let h = read_header(&mut cur)?;
    if h.code == LABEL_MAP_CODE {
        return Err(FormatError::InvalidHeader("container holds a label map, not crop labels".into()).into());
    }
    let mode = QuantizationMode::from_code(h.code, h.k).ok_or(FormatError::UnknownMode(h.code))?;
    if mode.k() == 0 && h.k != 0 {
        return Err(FormatError::InvalidHeader(format!("K={} set for mode {mode}", h.k)).into());
    }
    mode.validate(h.classes as usize)
        .map_err(|e| FormatError::InvalidHeader(e.to_string()))?;
    if h.count == 0 {
        return Err(FormatError::InvalidHeader("zero records".into()).into());
    }
    let payload = mode.payload_values(h.classes as usize) * 4;
    let record_bytes = AUG_BYTES + payload;
    let mut records = Vec::with_capacity(h.count as usize);
    for i in 0..h.count as usize {
        if cur.remaining() < record_bytes {
            return Err(FormatError::TruncatedRecords {
                record: i,
                needed: record_bytes,
                available: cur.remaining(),
            }
            .into());
        }
        let crop = CropBox {
            x: cur.f32(),
            y: cur.f32(),
            w: cur.f32(),
            h: cur.f32(),
        };
        let flip = match cur.u8() {
            0 => false,
            1 => true,
            other => {
                return Err(FormatError::InvalidRecord {
                    record: i,
                    reason: format!("flip byte {other}"),
                }
                .into())
            }
        };
        let check = |index: u32| {
            if index >= h.classes {
                Err(FormatError::IndexOutOfRange {
                    index,
                    classes: h.classes,
                })
            } else {
                Ok(index)
            }
        };
        let classes = h.classes as usize;
        let label = match mode {
            QuantizationMode::Full => {
                CompressedLabel::Full((0..classes).map(|_| cur.f32() as f64).collect())
            }
            QuantizationMode::SslLogits => {
                CompressedLabel::SslLogits((0..classes).map(|_| cur.f32() as f64).collect())
            }
            QuantizationMode::Hard => CompressedLabel::Hard(check(cur.u32())?),
            QuantizationMode::Smooth => {
                let index = check(cur.u32())?;
                CompressedLabel::Smooth {
                    index,
                    prob: cur.f32() as f64,
                }
            }
            QuantizationMode::MarginalSmooth { k } | QuantizationMode::MarginalRenorm { k } => {
                let indices: Vec<u32> = (0..k).map(|_| cur.u32()).collect();
                let mut entries = Vec::with_capacity(k as usize);
                for index in indices {
                    entries.push(TopEntry {
                        index: check(index)?,
                        prob: cur.f32() as f64,
                    });
                }
                if matches!(mode, QuantizationMode::MarginalSmooth { .. }) {
                    CompressedLabel::MarginalSmooth(entries)
                } else {
                    CompressedLabel::MarginalRenorm(entries)
                }
            }
        };
        let invalid = |e: Error| FormatError::InvalidRecord {
            record: i,
            reason: e.to_string(),
        };
        crop.validate().map_err(invalid)?;
        label.validate(classes).map_err(invalid)?;
        records.push(CropRecord {
            aug: AugRecord { crop, flip },
            label,
        });
    }
    if cur.remaining() != 0 {
        return Err(FormatError::TrailingBytes(cur.remaining()).into());
    }
    Ok(LabelFile {
        version: h.version,
        mode,
        classes: h.classes,
        records,
    })
}

/// Serializes an `S × S × C` grid of logits under mode code 6.
pub fn encode_label_map(classes: u32, size: u32, logits: &[f64]) -> Result<Vec<u8>> {
    let expected = (size as usize).pow(2) * classes as usize;
    if logits.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            got: logits.len(),
        });
    }
    let mut out = Vec::with_capacity(HEADER_BYTES + 4 * expected);
    put_header(&mut out, VERSION, LABEL_MAP_CODE, classes, 0, size);
    for v in logits {
        put_f32(&mut out, *v)?;
    }
    Ok(out)
}

/// Returns `(classes, size, logits)`.
pub fn decode_label_map(bytes: &[u8]) -> Result<(u32, u32, Vec<f64>)> {
    let mut cur = Cursor { bytes, pos: 0 };
    let h = read_header(&mut cur)?;
    if h.code != LABEL_MAP_CODE {
        return Err(FormatError::UnknownMode(h.code).into());
    }
    if h.classes < 2 || h.count == 0 || h.k != 0 {
        return Err(FormatError::InvalidHeader(format!(
            "label map with C={}, S={}, K={}",
            h.classes, h.count, h.k
        ))
        .into());
    }
    let n = (h.count as usize).pow(2) * h.classes as usize;
    if cur.remaining() < 4 * n {
        return Err(FormatError::TruncatedRecords {
            record: 0,
            needed: 4 * n,
            available: cur.remaining(),
        }
        .into());
    }
    let values: Vec<f64> = (0..n).map(|_| cur.f32() as f64).collect();
    if cur.remaining() != 0 {
        return Err(FormatError::TrailingBytes(cur.remaining()).into());
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(FormatError::InvalidRecord {
            record: 0,
            reason: "non-finite logit".into(),
        }
        .into());
    }
    Ok((h.classes, h.count, values))
}

/// Exact size in bytes of an encoded file.
pub fn encoded_size(mode: QuantizationMode, classes: u64, crops: u64) -> u64 {
    HEADER_BYTES as u64
        + crops * (AUG_BYTES as u64 + 4 * mode.payload_values(classes as usize) as u64)
}

pub fn read_label_file(path: &Path) -> Result<LabelFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn write_label_file(path: &Path, f: &LabelFile) -> Result<u64> {
    let bytes = encode(f)?;
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes.len() as u64)
}

/// Human-readable dump used by `fkd inspect`.
pub fn describe(f: &LabelFile) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "version {} mode {} classes {} crops {}",
        f.version,
        f.mode,
        f.classes,
        f.crops()
    );
    for (i, r) in f.records.iter().enumerate() {
        let b = r.aug.crop;
        let _ = write!(
            s,
            "{i}\tbox=({}, {}, {}, {}) flip={}\t",
            b.x, b.y, b.w, b.h, r.aug.flip as u8
        );
        let _ = match &r.label {
            CompressedLabel::Full(p) => writeln!(s, "full {p:?}"),
            CompressedLabel::SslLogits(z) => writeln!(s, "logits {z:?}"),
            CompressedLabel::Hard(i) => writeln!(s, "hard {i}"),
            CompressedLabel::Smooth { index, prob } => writeln!(s, "smooth {index}:{prob}"),
            CompressedLabel::MarginalSmooth(e) | CompressedLabel::MarginalRenorm(e) => {
                let pairs: Vec<String> = e.iter().map(|t| format!("{}:{}", t.index, t.prob)).collect();
                writeln!(s, "top{} {}", e.len(), pairs.join(" "))
            }
        };
    }
    s
}

/// One line of the store manifest: `image-id relative-path M mode`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image_id: String,
    pub label_path: String,
    pub crops: u32,
    pub mode: QuantizationMode,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let _ = writeln!(s, "{} {} {} {}", e.image_id, e.label_path, e.crops, e.mode);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [id, path, crops, mode] = fields[..] else {
                return Err(Error::invalid(format!(
                    "manifest line {}: expected 4 fields, got {}",
                    n + 1,
                    fields.len()
                )));
            };
            entries.push(ManifestEntry {
                image_id: id.to_string(),
                label_path: path.to_string(),
                crops: crops
                    .parse()
                    .map_err(|_| Error::invalid(format!("manifest line {}: bad M {crops:?}", n + 1)))?,
                mode: mode.parse()?,
            });
        }
        Ok(Manifest { entries })
    }
}

/// Parameters of the storage accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StorageModel {
    pub images: u64,
    pub crops_per_image: u64,
    pub classes: u64,
    /// Side of the baseline's square label map.
    pub map_size: u64,
}

impl StorageModel {
    /// ImageNet-1K scale: 1.2M images, 200 crops each, 1000 classes, 15×15 maps.
    pub const IMAGENET: StorageModel = StorageModel {
        images: 1_200_000,
        crops_per_image: 200,
        classes: 1000,
        map_size: 15,
    };
}

/// Bytes needed to store a region-level label store, counting every stored
/// scalar (including the flip flag) as one 4-byte value.
pub fn estimate_fkd_storage(m: &StorageModel, mode: QuantizationMode) -> u64 {
    let per_crop = mode.payload_values(m.classes as usize) as u64 + AUG_VALUES;
    m.images * m.crops_per_image * per_crop * BYTES_PER_VALUE
}

/// Bytes needed for global label maps: full `S² × C` scores, or top-K
/// `(index, score)` pairs per cell.
pub fn estimate_relabel_storage(m: &StorageModel, topk: Option<u64>) -> u64 {
    let per_cell = match topk {
        Some(k) => 2 * k,
        None => m.classes,
    };
    m.images * m.map_size * m.map_size * per_cell * BYTES_PER_VALUE
}

pub fn gib(bytes: u64) -> f64 {
    bytes as f64 / (1u64 << 30) as f64
}

pub fn tib(bytes: u64) -> f64 {
    bytes as f64 / (1u64 << 40) as f64
}
