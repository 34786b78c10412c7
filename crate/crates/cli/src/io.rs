//! File access for the binary artifact formats.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use handkd_core::codec::{self, FormatError, OptimizerSnapshot, Sink, Source};
use handkd_core::data::Dataset;
use handkd_core::hand::HandRig;
use handkd_core::metrics::Clock;
use handkd_core::nets::Model;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Environment variable naming the directory for outputs whose path was not given.
pub const OUT_DIR_ENV: &str = "HANDKD_OUT_DIR";

pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from("."), PathBuf::from)
}

/// `path`, or `name` inside the default output directory.
pub fn out_path(path: &Option<PathBuf>, name: &str) -> PathBuf {
    path.clone().unwrap_or_else(|| default_out_dir().join(name))
}

pub struct StdClock(Instant);

impl StdClock {
    pub fn new() -> Self {
        Self(Instant::now())
    }
}

impl Default for StdClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for StdClock {
    fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Adapts a reader to the codec's byte source.
pub struct ReadSource<R> {
    inner: R,
    pub error: Option<io::Error>,
}

impl<R: BufRead> ReadSource<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, error: None }
    }
}

impl<R: BufRead> Source for ReadSource<R> {
    fn take(&mut self, buf: &mut [u8]) -> bool {
        match self.inner.read_exact(buf) {
            Ok(()) => true,
            Err(e) => {
                if e.kind() != io::ErrorKind::UnexpectedEof {
                    self.error = Some(e);
                }
                false
            }
        }
    }

    fn at_end(&mut self) -> bool {
        match self.inner.fill_buf() {
            Ok(b) => b.is_empty(),
            Err(e) => {
                self.error = Some(e);
                true
            }
        }
    }
}

/// Adapts a writer to the codec's byte sink, keeping the first error.
pub struct WriteSink<W> {
    inner: W,
    pub error: Option<io::Error>,
}

impl<W: Write> WriteSink<W> {
    pub fn new(inner: W) -> Self {
        Self { inner, error: None }
    }
}

impl<W: Write> Sink for WriteSink<W> {
    fn put(&mut self, bytes: &[u8]) {
        if self.error.is_none() {
            if let Err(e) = self.inner.write_all(bytes) {
                self.error = Some(e);
            }
        }
    }
}

fn decode<T>(path: &Path, f: impl FnOnce(&mut ReadSource<BufReader<File>>) -> std::result::Result<T, FormatError>) -> Result<T> {
    let file = File::open(path).map_err(|e| CliError::io(path, "open", e))?;
    let mut src = ReadSource::new(BufReader::new(file));
    let out = f(&mut src);
    if let Some(e) = src.error {
        return Err(CliError::io(path, "read", e));
    }
    out.map_err(|e| CliError::format(path, e))
}

pub fn load_rig(path: &Path) -> Result<HandRig> {
    decode(path, codec::read_rig)
}

pub fn load_model(path: &Path) -> Result<(Model, Option<OptimizerSnapshot>)> {
    decode(path, codec::read_model)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    decode(path, codec::read_dataset)
}

/// Writes through a temporary file in the target directory, then renames,
/// so a failed run never leaves a partial artifact.
pub fn write_atomic(path: &Path, f: impl FnOnce(&mut WriteSink<BufWriter<&mut File>>)) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, "create directory", e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, "write to", e))?;
    {
        let mut sink = WriteSink::new(BufWriter::new(tmp.as_file_mut()));
        f(&mut sink);
        let flushed = sink.inner.flush();
        if let Some(e) = sink.error.or(flushed.err()) {
            return Err(CliError::io(path, "write", e));
        }
    }
    tmp.persist(path).map_err(|e| CliError::io(path, "write", e.error))?;
    Ok(())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, |s| s.put(bytes))
}

pub fn save_rig(path: &Path, rig: &HandRig) -> Result<()> {
    write_atomic(path, |s| codec::write_rig(s, rig))
}

pub fn save_model(path: &Path, model: &Model) -> Result<()> {
    write_atomic(path, |s| codec::write_model(s, model, None))
}

pub fn save_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    write_atomic(path, |s| codec::write_dataset(s, ds))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, "read", e))
}

/// Hex SHA-256 of a file's contents.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| CliError::io(path, "open", e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| CliError::io(path, "read", e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// `teacher.hkdm` → `teacher.<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}.{suffix}"))
}
