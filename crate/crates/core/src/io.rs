//! File formats: raw dynamic images (`FDLF`), checksummed weights (`FDLW`)
//! and curve CSVs. Every multi-byte value is little-endian; every write goes
//! to a temporary file that is renamed into place.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use fcdlif_tensor::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::{DynamicPetImage, InputFunction, Units};
use crate::model::{InputFunctionModel, Model, ModelConfig};
use crate::schedule::{Frame, FrameSchedule};
use crate::training::Sample;

pub const IMAGE_MAGIC: &[u8; 4] = b"FDLF";
pub const IMAGE_VERSION: u32 = 1;
pub const WEIGHTS_MAGIC: &[u8; 4] = b"FDLW";
pub const WEIGHTS_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

/// Writes `bytes` to `path` atomically (temporary file in the same
/// directory, then rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Pretty JSON, written atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

#[derive(Default)]
struct Encoder(Vec<u8>);

impl Encoder {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn len(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Format(format!("length {v} does not fit in 32 bits")))?;
        self.u32(v);
        Ok(())
    }

    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) -> Result<()> {
        self.len(s.len())?;
        self.0.extend_from_slice(s.as_bytes());
        Ok(())
    }

    fn f32s(&mut self, values: &[f32]) {
        self.0.reserve(4 * values.len());
        for v in values {
            self.f32(*v);
        }
    }
}

struct Decoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Decoder<'a> {
    fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self { bytes, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!(
                "{} is truncated: needed {n} bytes at offset {}, {} available",
                self.what,
                self.pos,
                self.bytes.len() - self.pos
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("slice has N bytes"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn len(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format(format!("{}: invalid UTF-8", self.what)))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("payload size overflows".into()))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let found = self.take(4)?;
        if found != expected {
            return Err(Error::Format(format!(
                "{}: bad magic {:?} (expected {:?})",
                self.what,
                String::from_utf8_lossy(found),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }

    fn version(&mut self, expected: u32) -> Result<()> {
        let found = self.u32()?;
        if found != expected {
            return Err(Error::Version { expected, found });
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes",
                self.what,
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Byte layout:
///
/// ```text
/// "FDLF" | u32 version | u32 T, X, Y, Z | f32 voxel mm ×3 | (f64 start, f64 duration) ×T
/// | str units | u32 n, (str key, str value) ×n sorted by key | f32 ×(T·X·Y·Z)
/// ```
///
/// `str` is a u32 byte length followed by UTF-8. The payload is t-major, then
/// x, y, z row-major.
pub fn encode_image(image: &DynamicPetImage) -> Result<Vec<u8>> {
    let mut e = Encoder::default();
    e.0.extend_from_slice(IMAGE_MAGIC);
    e.u32(IMAGE_VERSION);
    e.len(image.frames())?;
    for d in image.spatial() {
        e.len(d)?;
    }
    for v in image.voxel_mm {
        e.f32(v);
    }
    for f in image.schedule().frames() {
        e.f64(f.start);
        e.f64(f.duration);
    }
    e.str(image.units.tag())?;
    e.len(image.metadata.len())?;
    for (k, v) in &image.metadata {
        e.str(k)?;
        e.str(v)?;
    }
    e.f32s(image.data());
    Ok(e.0)
}

pub fn decode_image(bytes: &[u8]) -> Result<DynamicPetImage> {
    let mut d = Decoder::new(bytes, "image file");
    d.magic(IMAGE_MAGIC)?;
    d.version(IMAGE_VERSION)?;
    let t = d.len()?;
    let spatial = [d.len()?, d.len()?, d.len()?];
    let voxel_mm = [d.f32()?, d.f32()?, d.f32()?];
    let frames = (0..t)
        .map(|_| Ok(Frame { start: d.f64()?, duration: d.f64()? }))
        .collect::<Result<Vec<_>>>()?;
    let schedule = FrameSchedule::new(frames)?;
    let tag = d.str()?;
    let units = Units::from_tag(&tag).ok_or_else(|| Error::Format(format!("unknown units tag `{tag}`")))?;
    let n = d.len()?;
    let mut metadata = BTreeMap::new();
    for _ in 0..n {
        let k = d.str()?;
        let v = d.str()?;
        metadata.insert(k, v);
    }
    let count = spatial
        .iter()
        .try_fold(t, |acc, &x| acc.checked_mul(x))
        .ok_or_else(|| Error::Format("image dimensions overflow".into()))?;
    let data = d.f32s(count)?;
    d.finish()?;
    let mut image = DynamicPetImage::new(spatial, voxel_mm, schedule, data)?;
    image.units = units;
    image.metadata = metadata;
    Ok(image)
}

pub fn save_image(path: &Path, image: &DynamicPetImage) -> Result<()> {
    write_atomic(path, &encode_image(image)?)
}

pub fn load_image(path: &Path) -> Result<DynamicPetImage> {
    decode_image(&fs::read(path)?)
}

/// Byte layout:
///
/// ```text
/// "FDLW" | u32 version | str config JSON | u32 n
/// | (str name, u32 rank, u32 dims ×rank, f32 values) ×n | SHA-256 of everything before
/// ```
pub fn encode_weights<M: InputFunctionModel + ?Sized>(model: &M) -> Result<Vec<u8>> {
    let mut e = Encoder::default();
    e.0.extend_from_slice(WEIGHTS_MAGIC);
    e.u32(WEIGHTS_VERSION);
    e.str(&serde_json::to_string(&model.config())?)?;
    e.len(model.params().len())?;
    for p in model.params().iter() {
        e.str(&p.name)?;
        e.len(p.value.shape().len())?;
        for &d in p.value.shape() {
            e.len(d)?;
        }
        e.f32s(p.value.data());
    }
    let digest = Sha256::digest(&e.0);
    e.0.extend_from_slice(&digest);
    Ok(e.0)
}

/// Named parameter blocks and the architecture they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightsFile {
    pub config: ModelConfig,
    pub blocks: Vec<(String, Tensor)>,
}

pub fn decode_weights(bytes: &[u8]) -> Result<WeightsFile> {
    if bytes.len() < 8 + CHECKSUM_LEN {
        return Err(Error::Format("weights file is truncated".into()));
    }
    let mut d = Decoder::new(&bytes[..bytes.len() - CHECKSUM_LEN], "weights file");
    d.magic(WEIGHTS_MAGIC)?;
    d.version(WEIGHTS_VERSION)?;
    let (body, stored) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(body).as_slice() != stored {
        return Err(Error::Checksum);
    }
    let config: ModelConfig = serde_json::from_str(&d.str()?)?;
    let n = d.len()?;
    let mut blocks = Vec::with_capacity(n);
    for _ in 0..n {
        let name = d.str()?;
        let rank = d.len()?;
        let shape = (0..rank).map(|_| d.len()).collect::<Result<Vec<_>>>()?;
        let count = shape.iter().product();
        let data = d.f32s(count)?;
        blocks.push((name, Tensor::new(shape, data)?));
    }
    d.finish()?;
    Ok(WeightsFile { config, blocks })
}

pub fn save_weights<M: InputFunctionModel + ?Sized>(path: &Path, model: &M) -> Result<()> {
    write_atomic(path, &encode_weights(model)?)
}

/// Copies the blocks of `file` into `model`. The config echo, names and
/// shapes must all match.
pub fn assign_weights<M: InputFunctionModel + ?Sized>(model: &mut M, file: WeightsFile) -> Result<()> {
    if file.config != model.config() {
        return Err(Error::Config(
            "weights were saved for a different architecture than the loading model".into(),
        ));
    }
    if file.blocks.len() != model.params().len() {
        return Err(Error::Format(format!(
            "weights file has {} blocks, model has {} parameters",
            file.blocks.len(),
            model.params().len()
        )));
    }
    for ((name, _), p) in file.blocks.iter().zip(model.params().iter()) {
        if *name != p.name {
            return Err(Error::Format(format!("weights block `{name}` where `{}` was expected", p.name)));
        }
    }
    model.params_mut().assign(file.blocks.into_iter().map(|b| b.1).collect())?;
    Ok(())
}

/// Loads weights into an existing model of the same architecture.
pub fn load_weights_into<M: InputFunctionModel + ?Sized>(model: &mut M, path: &Path) -> Result<()> {
    assign_weights(model, decode_weights(&fs::read(path)?)?)
}

/// Rebuilds the model described by the file's config echo.
pub fn load_model(path: &Path) -> Result<Model> {
    let file = decode_weights(&fs::read(path)?)?;
    let mut model = Model::build(&file.config, 0)?;
    assign_weights(&mut model, file)?;
    Ok(model)
}

#[derive(Debug, Serialize, Deserialize)]
struct CurveRow {
    frame_index: usize,
    mid_time_s: f64,
    value: f64,
}

/// CSV with header `frame_index,mid_time_s,value`; floats use the shortest
/// representation that parses back to the same bits.
pub fn encode_curve(curve: &InputFunction) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (i, (&t, &v)) in curve.mid_times_s.iter().zip(&curve.values).enumerate() {
        w.serialize(CurveRow {
            frame_index: i,
            mid_time_s: t,
            value: v,
        })?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn decode_curve(bytes: &[u8]) -> Result<InputFunction> {
    let mut r = csv::Reader::from_reader(bytes);
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["frame_index", "mid_time_s", "value"] {
        return Err(Error::Format(format!(
            "curve header must be frame_index,mid_time_s,value, found {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let (mut mids, mut values) = (Vec::new(), Vec::new());
    for (i, row) in r.deserialize::<CurveRow>().enumerate() {
        let row = row?;
        if row.frame_index != i {
            return Err(Error::Format(format!("curve row {i} has frame_index {}", row.frame_index)));
        }
        mids.push(row.mid_time_s);
        values.push(row.value);
    }
    if values.is_empty() {
        return Err(Error::Format("curve file has no rows".into()));
    }
    InputFunction::new(mids, values)
}

pub fn save_curve(path: &Path, curve: &InputFunction) -> Result<()> {
    write_atomic(path, &encode_curve(curve)?)
}

pub fn load_curve(path: &Path) -> Result<InputFunction> {
    decode_curve(&fs::read(path)?)
}

/// Image file name of subject `index` in a simulated dataset directory.
pub fn image_file_name(index: usize) -> String {
    format!("subject_{index:04}.fdlf")
}

/// Input-function file paired with an image file.
pub fn aif_path_for(image_path: &Path) -> PathBuf {
    let stem = image_path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    image_path.with_file_name(format!("{stem}_aif.csv"))
}

/// All `*.fdlf` images in `dir` (sorted by name) with their `<stem>_aif.csv`
/// curves.
pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "fdlf"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!("no .fdlf images in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let image = load_image(p)?;
            let target = load_curve(&aif_path_for(p))?;
            if target.len() != image.frames() {
                return Err(Error::LengthMismatch {
                    left: image.frames(),
                    right: target.len(),
                });
            }
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            Ok(Sample { id, image, target })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FcDlifModel, SfeConfig, TfeConfig};

    fn image() -> DynamicPetImage {
        let s = FrameSchedule::from_blocks(&[(2, 5.0), (1, 20.0)], 0.0).unwrap();
        let data: Vec<f32> = (0..3 * 8).map(|i| (i as f32 * 0.37).sin() * 1e3).collect();
        let mut im = DynamicPetImage::new([2, 2, 2], [1.5, 1.5, 2.0], s, data).unwrap();
        im.metadata.insert("tracer".into(), "FDG".into());
        im.metadata.insert("body_weight_g".into(), "22.5".into());
        im
    }

    #[test]
    fn image_round_trip_and_errors() {
        let im = image();
        let bytes = encode_image(&im).unwrap();
        assert_eq!(decode_image(&bytes).unwrap(), im);
        assert!(matches!(decode_image(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_image(&bad), Err(Error::Format(_))));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(decode_image(&v2), Err(Error::Version { expected: 1, found: 2 })));
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_image(&extra).is_err());
    }

    fn tiny_model() -> FcDlifModel {
        let sfe = SfeConfig {
            input: [4, 4, 4],
            stage_widths: vec![2],
            blocks_per_stage: 1,
            conv_kernel: 3,
            final_kernel: [2, 2, 2],
            embedding: 2,
        };
        let tfe = TfeConfig {
            widths: vec![1],
            kernel_sizes: vec![3],
        };
        FcDlifModel::build(sfe, tfe, 1).unwrap()
    }

    #[test]
    fn weights_round_trip_and_corruption() {
        let m = tiny_model();
        let bytes = encode_weights(&m).unwrap();
        let mut fresh = FcDlifModel::build(m.sfe_config().clone(), m.tfe_config().clone(), 99).unwrap();
        assert_ne!(fresh.params(), m.params());
        assign_weights(&mut fresh, decode_weights(&bytes).unwrap()).unwrap();
        assert_eq!(fresh.params(), m.params());
        let mut corrupt = bytes.clone();
        let mid = corrupt.len() / 2;
        corrupt[mid] ^= 0x01;
        assert!(matches!(decode_weights(&corrupt), Err(Error::Checksum)));
        let mut other = FcDlifModel::build(SfeConfig::desk(), TfeConfig::desk(), 0).unwrap();
        assert!(assign_weights(&mut other, decode_weights(&bytes).unwrap()).is_err());
    }

    #[test]
    fn curve_round_trip_is_bit_exact() {
        let c = InputFunction::new(vec![15.0, 32.5, 1e-7], vec![0.1 + 0.2, -3.0e-310, 1.0 / 3.0]).unwrap();
        let back = decode_curve(&encode_curve(&c).unwrap()).unwrap();
        for (a, b) in back.values.iter().zip(&c.values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back, c);
        assert!(decode_curve(b"a,b,c\n0,1,2\n").is_err());
        assert!(decode_curve(b"frame_index,mid_time_s,value\n1,1,2\n").is_err());
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/x.bin");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
