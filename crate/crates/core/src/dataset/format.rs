//! Directory format: three little-endian binary files plus a text split file.
//!
//! ```text
//! features.bin    "ZSLF" u32 N  u32 d_x  f32[N*d_x]
//! labels.bin      "ZSLL" u32 N  u32[N]
//! attributes.bin  "ZSLA" u32 C  u32 L    f32[C*L]
//! splits.txt      seen: <ids> / unseen: <ids> / optional test_idx: <ids>
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::Dataset;
use crate::error::{Error, Result};
use crate::numgrad::Tensor2;

pub const FEATURES_FILE: &str = "features.bin";
pub const LABELS_FILE: &str = "labels.bin";
pub const ATTRIBUTES_FILE: &str = "attributes.bin";
pub const SPLITS_FILE: &str = "splits.txt";

const FEATURES_MAGIC: &[u8; 4] = b"ZSLF";
const LABELS_MAGIC: &[u8; 4] = b"ZSLL";
const ATTRIBUTES_MAGIC: &[u8; 4] = b"ZSLA";

pub(crate) struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        Reader { path, bytes, pos: 0 }
    }

    pub(crate) fn err(&self, message: impl Into<String>) -> Error {
        Error::Format {
            file: self.path.to_path_buf(),
            offset: self.pos as u64,
            message: message.into(),
        }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!(
                "unexpected end of file: need {n} bytes, {} left",
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expected {
            self.pos -= 4;
            return Err(self.err(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let nbytes = n
            .checked_mul(4)
            .ok_or_else(|| self.err("payload size overflows"))?;
        let raw = self.take(nbytes)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.err(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }

    pub(crate) fn pos(&self) -> usize {
        self.pos
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_matrix(path: &Path, magic: &[u8; 4]) -> Result<Tensor2> {
    let bytes = read(path)?;
    let mut r = Reader::new(path, &bytes);
    r.magic(magic)?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let data = r.f32s(rows * cols)?;
    r.finish()?;
    if let Some(k) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Format {
            file: path.to_path_buf(),
            offset: 12 + 4 * k as u64,
            message: "non-finite value".into(),
        });
    }
    Tensor2::from_vec(rows, cols, data)
}

fn matrix_bytes(magic: &[u8; 4], m: &Tensor2) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * m.len());
    out.extend_from_slice(magic);
    put_u32(&mut out, m.rows());
    put_u32(&mut out, m.cols());
    put_f32s(&mut out, m.data());
    out
}

struct Splits {
    seen: Vec<usize>,
    unseen: Vec<usize>,
    test_idx: Option<Vec<usize>>,
}

fn parse_splits(path: &Path, text: &str) -> Result<Splits> {
    let mut seen = None;
    let mut unseen = None;
    let mut test_idx = None;
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let here = offset;
        offset += line.len() as u64;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fail = |message: String| Error::Format {
            file: path.to_path_buf(),
            offset: here,
            message,
        };
        let (key, values) = content
            .split_once(':')
            .ok_or_else(|| fail(format!("expected `key: values`, got `{content}`")))?;
        let ids = values
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| fail(format!("bad id `{t}`"))))
            .collect::<Result<Vec<_>>>()?;
        let slot = match key.trim() {
            "seen" => &mut seen,
            "unseen" => &mut unseen,
            "test_idx" => &mut test_idx,
            other => return Err(fail(format!("unknown key `{other}`"))),
        };
        if slot.is_some() {
            return Err(fail(format!("duplicate key `{}`", key.trim())));
        }
        *slot = Some(ids);
    }
    let seen = seen.ok_or_else(|| Error::Format {
        file: path.to_path_buf(),
        offset,
        message: "missing `seen:` line".into(),
    })?;
    Ok(Splits {
        seen,
        unseen: unseen.unwrap_or_default(),
        test_idx,
    })
}

fn splits_text(ds: &Dataset) -> String {
    let join = |ids: &[usize]| ids.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
    let mut s = String::from("# class partition\n");
    let _ = writeln!(s, "seen: {}", join(ds.seen()));
    let _ = writeln!(s, "unseen: {}", join(ds.unseen()));
    if let Some(t) = ds.test_idx() {
        let _ = writeln!(s, "test_idx: {}", join(t));
    }
    s
}

/// Reads and validates a dataset directory.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let fpath = dir.join(FEATURES_FILE);
    let lpath = dir.join(LABELS_FILE);
    let apath = dir.join(ATTRIBUTES_FILE);
    let spath = dir.join(SPLITS_FILE);

    let features = read_matrix(&fpath, FEATURES_MAGIC)?;
    let attributes = read_matrix(&apath, ATTRIBUTES_MAGIC)?;

    let bytes = read(&lpath)?;
    let mut r = Reader::new(&lpath, &bytes);
    r.magic(LABELS_MAGIC)?;
    let n = r.u32()? as usize;
    if n != features.rows() {
        return Err(Error::Format {
            file: lpath.clone(),
            offset: 4,
            message: format!("{n} labels but {} feature rows", features.rows()),
        });
    }
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let at = r.pos();
        let id = r.u32()? as usize;
        if id >= attributes.rows() {
            return Err(Error::Format {
                file: lpath.clone(),
                offset: at as u64,
                message: format!("class id {id} >= number of classes {}", attributes.rows()),
            });
        }
        labels.push(id);
    }
    r.finish()?;

    let text = fs::read_to_string(&spath).map_err(|e| Error::io(&spath, e))?;
    let splits = parse_splits(&spath, &text)?;
    let as_format = |e: Error, file: &PathBuf| match e {
        Error::Data(message) => Error::Format {
            file: file.clone(),
            offset: 0,
            message,
        },
        other => other,
    };
    let ds = Dataset::new(features, labels, attributes, splits.seen, splits.unseen)
        .map_err(|e| as_format(e, &spath))?;
    match splits.test_idx {
        Some(t) => ds.with_test_idx(t).map_err(|e| as_format(e, &spath)),
        None => Ok(ds),
    }
}

/// Writes `ds` into `dir` (created if missing). Values are stored as `f32`.
pub fn save_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, bytes: &[u8]| {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(p, e))
    };
    write(FEATURES_FILE, &matrix_bytes(FEATURES_MAGIC, ds.features()))?;
    write(ATTRIBUTES_FILE, &matrix_bytes(ATTRIBUTES_MAGIC, ds.attributes()))?;
    let mut lbytes = Vec::with_capacity(8 + 4 * ds.num_samples());
    lbytes.extend_from_slice(LABELS_MAGIC);
    put_u32(&mut lbytes, ds.num_samples());
    for &l in ds.labels() {
        put_u32(&mut lbytes, l);
    }
    write(LABELS_FILE, &lbytes)?;
    write(SPLITS_FILE, splits_text(ds).as_bytes())
}
