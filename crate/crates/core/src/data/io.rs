//! Dataset directories: a checksummed JSON manifest plus one binary file per frame.
//!
//! Frame files are little-endian: magic `CMFR`, version u32, id u64,
//! domain u8, H u32, W u32, H·W·3 image f64s, N u32, N×3 point f64s,
//! N u16 labels (`0xFFFF` = ignore), then fx, fy, cx, cy, R (row-major), t.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dataset, DatasetManifest, DomainPair, HiddenMeta, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::frame::{Calibration, Domain, Frame};

const FRAME_MAGIC: &[u8; 4] = b"CMFR";
const IGNORE_LABEL: u16 = u16::MAX;
const MANIFEST: &str = "manifest.json";

pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>> {
    let n = frame.points.len();
    if frame.labels.len() != n || frame.image.len() != frame.height * frame.width * 3 {
        return Err(Error::shape(format!("frame {} is internally inconsistent", frame.id)));
    }
    let mut out = Vec::with_capacity(64 + frame.image.len() * 8 + n * 26 + 128);
    out.extend_from_slice(FRAME_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&frame.id.to_le_bytes());
    out.push(frame.domain.to_byte());
    out.extend_from_slice(&(frame.height as u32).to_le_bytes());
    out.extend_from_slice(&(frame.width as u32).to_le_bytes());
    for v in &frame.image {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(n as u32).to_le_bytes());
    for p in &frame.points {
        for c in p {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    for l in &frame.labels {
        let code = match l {
            Some(c) if *c < IGNORE_LABEL as usize => *c as u16,
            Some(c) => return Err(Error::arg(format!("label {c} does not fit the frame format"))),
            None => IGNORE_LABEL,
        };
        out.extend_from_slice(&code.to_le_bytes());
    }
    let c = &frame.calibration;
    for v in [c.fx, c.fy, c.cx, c.cy].iter().chain(c.rotation.iter().flatten()).chain(&c.translation) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(
                self.path,
                format!("truncated: needed {n} bytes at offset {}, file has {}", self.pos, self.buf.len()),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::format(self.path, "length overflow"))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

pub fn decode_frame(bytes: &[u8], path: &Path) -> Result<Frame> {
    let mut r = Cursor { buf: bytes, pos: 0, path };
    if r.take(4)? != FRAME_MAGIC {
        return Err(Error::format(path, "not a frame file (bad magic)"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::format(path, format!("unsupported frame version {version}")));
    }
    let id = r.u64()?;
    let domain = Domain::from_byte(r.u8()?).ok_or_else(|| Error::format(path, "bad domain tag"))?;
    let height = r.u32()? as usize;
    let width = r.u32()? as usize;
    let image = r.f64s(height * width * 3)?;
    let n = r.u32()? as usize;
    let flat = r.f64s(n * 3)?;
    let points = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let code = r.u16()?;
        labels.push((code != IGNORE_LABEL).then_some(code as usize));
    }
    let (fx, fy, cx, cy) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    let mut rotation = [[0.0; 3]; 3];
    for row in &mut rotation {
        for v in row.iter_mut() {
            *v = r.f64()?;
        }
    }
    let translation = [r.f64()?, r.f64()?, r.f64()?];
    if r.pos != bytes.len() {
        return Err(Error::format(path, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Frame {
        id,
        domain,
        height,
        width,
        image,
        points,
        labels,
        calibration: Calibration { fx, fy, cx, cy, rotation, translation },
    })
}

#[derive(Serialize, Deserialize)]
struct FileEntry {
    id: u64,
    file: String,
    sha256: String,
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    #[serde(flatten)]
    manifest: DatasetManifest,
    files: Vec<FileEntry>,
    checksum: String,
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn body_checksum(manifest: &DatasetManifest, files: &[FileEntry]) -> String {
    let body = serde_json::to_vec(&(manifest, files)).expect("manifest serialises");
    sha_hex(&body)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    dataset.manifest.validate()?;
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    let mut files = Vec::with_capacity(dataset.frames.len());
    for &id in &dataset.manifest.frame_ids {
        let frame = dataset
            .frame(id)
            .ok_or_else(|| Error::arg(format!("manifest lists frame {id} but it is missing")))?;
        let bytes = encode_frame(frame)?;
        let file = format!("frames/{id:08}.bin");
        write(&dir.join(&file), &bytes)?;
        files.push(FileEntry { id, file, sha256: sha_hex(&bytes) });
    }
    let checksum = body_checksum(&dataset.manifest, &files);
    let out = ManifestFile { manifest: dataset.manifest.clone(), files, checksum };
    let json = serde_json::to_vec_pretty(&out).expect("manifest serialises");
    write(&dir.join(MANIFEST), &json)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join(MANIFEST);
    let raw = read(&mpath)?;
    let value: serde_json::Value =
        serde_json::from_slice(&raw).map_err(|e| Error::format(&mpath, e.to_string()))?;
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        other => return Err(Error::format(&mpath, format!("unsupported manifest version {other:?}"))),
    }
    let mf: ManifestFile = serde_json::from_value(value).map_err(|e| Error::format(&mpath, e.to_string()))?;
    if body_checksum(&mf.manifest, &mf.files) != mf.checksum {
        return Err(Error::Integrity { path: mpath, msg: "manifest checksum mismatch".into() });
    }
    mf.manifest.validate().map_err(|e| Error::format(&mpath, e.to_string()))?;
    let mut frames = Vec::with_capacity(mf.files.len());
    for entry in &mf.files {
        let path: PathBuf = dir.join(&entry.file);
        let bytes = read(&path)?;
        if sha_hex(&bytes) != entry.sha256 {
            // Decode first so truncation reports as a format problem.
            decode_frame(&bytes, &path)?;
            return Err(Error::Integrity { path, msg: "frame checksum mismatch".into() });
        }
        let frame = decode_frame(&bytes, &path)?;
        if frame.id != entry.id {
            return Err(Error::format(&path, format!("holds frame {} but manifest says {}", frame.id, entry.id)));
        }
        frames.push(frame);
    }
    if frames.iter().map(|f| f.id).ne(mf.manifest.frame_ids.iter().copied()) {
        return Err(Error::format(&mpath, "file list does not match frame ids"));
    }
    Ok(Dataset { manifest: mf.manifest, frames })
}

pub fn save_hidden(hidden: &HiddenMeta, path: &Path) -> Result<()> {
    write(path, &serde_json::to_vec_pretty(hidden).expect("metadata serialises"))
}

pub fn load_hidden(path: &Path) -> Result<HiddenMeta> {
    let h: HiddenMeta =
        serde_json::from_slice(&read(path)?).map_err(|e| Error::format(path, e.to_string()))?;
    if h.version != FORMAT_VERSION {
        return Err(Error::format(path, format!("unsupported version {}", h.version)));
    }
    Ok(h)
}

/// Writes `source/`, `target/` and the withheld `oracle.json` under `dir`.
pub fn save_pair(pair: &DomainPair, dir: &Path) -> Result<()> {
    save_dataset(&pair.source, &dir.join("source"))?;
    save_dataset(&pair.target, &dir.join("target"))?;
    save_hidden(&pair.hidden, &dir.join("oracle.json"))
}

/// Loads both domains; the oracle file is read only when present.
pub fn load_pair(dir: &Path) -> Result<DomainPair> {
    let hidden_path = dir.join("oracle.json");
    Ok(DomainPair {
        source: load_dataset(&dir.join("source"))?,
        target: load_dataset(&dir.join("target"))?,
        hidden: if hidden_path.exists() { load_hidden(&hidden_path)? } else { HiddenMeta::default() },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_domain_pair, DomainSpec, PairCounts};

    fn small_pair() -> DomainPair {
        let src = DomainSpec { points: (40, 60), height: 16, width: 16, focal: 8.0, ..DomainSpec::source() };
        let tgt = DomainSpec { points: (40, 60), height: 16, width: 16, focal: 8.0, ..DomainSpec::target(1.0) };
        generate_domain_pair(&src, &tgt, PairCounts { source: 5, target_train: 2, target_test: 1 }, 0.4, 3).unwrap()
    }

    #[test]
    fn frame_bytes_round_trip() {
        let mut f = small_pair().source.frames[0].clone();
        f.labels[0] = None;
        let bytes = encode_frame(&f).unwrap();
        assert_eq!(decode_frame(&bytes, Path::new("x")).unwrap(), f);
    }

    #[test]
    fn dataset_round_trip_is_lossless() {
        let pair = small_pair();
        let dir = tempfile::tempdir().unwrap();
        save_pair(&pair, dir.path()).unwrap();
        let back = load_pair(dir.path()).unwrap();
        assert_eq!(back, pair);
        assert_eq!(back.source.frames.len(), 5);
    }

    #[test]
    fn truncated_frame_names_file() {
        let pair = small_pair();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&pair.source, dir.path()).unwrap();
        let victim = dir.path().join("frames/00000002.bin");
        let bytes = fs::read(&victim).unwrap();
        fs::write(&victim, &bytes[..bytes.len() / 2]).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::Format { path, .. }) => assert_eq!(path, victim),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn edited_manifest_fails_integrity() {
        let pair = small_pair();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&pair.target, dir.path()).unwrap();
        let mpath = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&mpath).unwrap();
        let edited = text.replacen("\"seed\": 3", "\"seed\": 4", 1);
        assert_ne!(text, edited);
        fs::write(&mpath, edited).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Integrity { .. })));
    }

    #[test]
    fn version_mismatch_is_format_error() {
        let pair = small_pair();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&pair.target, dir.path()).unwrap();
        let mpath = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&mpath).unwrap().replacen("\"version\": 1", "\"version\": 9", 1);
        fs::write(&mpath, text).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Format { .. })));
        let mut bad = encode_frame(&pair.target.frames[0]).unwrap();
        bad[4] = 2;
        assert!(matches!(decode_frame(&bad, Path::new("f")), Err(Error::Format { .. })));
    }
}
