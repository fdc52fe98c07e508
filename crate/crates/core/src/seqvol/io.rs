//! On-disk formats: JSON sidecar header plus a raw little-endian payload.
//!
//! A sequence stored at stem `runs/sub-01` occupies `runs/sub-01.json` and
//! `runs/sub-01.f32`; a parcellation uses `.json` + `.i32`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::schedule::StimulusSchedule;
use super::volume::{Label, Parcellation, VolumeSequence};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct VseqHeader {
    format_version: u32,
    dims: [usize; 4],
    voxel_size_mm: [f64; 3],
    frame_interval_s: f64,
    label: Option<Label>,
    subject_id: String,
}

#[derive(Serialize, Deserialize)]
struct ParcHeader {
    format_version: u32,
    dims: [usize; 3],
    region_names: BTreeMap<String, String>,
}

/// `stem` + `.ext`, keeping any dots already in the stem.
pub fn sidecar(stem: &Path, ext: &str) -> PathBuf {
    let stem = strip_known_ext(stem);
    let mut s = stem.into_os_string();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn strip_known_ext(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json" | "f32" | "i32" | "vseq") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn check_version(v: u32) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: v,
            expected: FORMAT_VERSION,
        });
    }
    Ok(())
}

pub fn f32_to_le_bytes(data: &[f32]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn f32_from_le_bytes(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

pub(crate) fn check_payload_len(path: &Path, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Format(format!(
            "{}: payload is {actual} bytes, expected {expected}",
            path.display()
        )));
    }
    Ok(())
}

pub fn write_vseq(seq: &VolumeSequence, stem: &Path) -> Result<()> {
    seq.validate()?;
    let header = VseqHeader {
        format_version: FORMAT_VERSION,
        dims: seq.dims,
        voxel_size_mm: seq.voxel_size_mm,
        frame_interval_s: seq.frame_interval_s,
        label: seq.label,
        subject_id: seq.subject_id.clone(),
    };
    let json = serde_json::to_vec_pretty(&header).expect("header serializes");
    write_file(&sidecar(stem, "json"), &json)?;
    write_file(&sidecar(stem, "f32"), &f32_to_le_bytes(&seq.data))
}

pub fn read_vseq(stem: &Path) -> Result<VolumeSequence> {
    let hpath = sidecar(stem, "json");
    let header: VseqHeader = serde_json::from_slice(&read_file(&hpath)?)
        .map_err(|e| Error::Format(format!("{}: {e}", hpath.display())))?;
    check_version(header.format_version)?;
    let n: usize = header.dims.iter().product();
    let ppath = sidecar(stem, "f32");
    let bytes = read_file(&ppath)?;
    let seq = VolumeSequence {
        dims: header.dims,
        data: Vec::new(),
        voxel_size_mm: header.voxel_size_mm,
        frame_interval_s: header.frame_interval_s,
        label: header.label,
        subject_id: header.subject_id,
    };
    if header.dims[0] == 0 {
        // Report the T=0 header as a validation problem, not a size mismatch.
        seq.validate()?;
    }
    check_payload_len(&ppath, n * 4, bytes.len())?;
    let seq = VolumeSequence {
        data: f32_from_le_bytes(&bytes),
        ..seq
    };
    seq.validate()?;
    Ok(seq)
}

pub fn write_parcellation(p: &Parcellation, stem: &Path) -> Result<()> {
    p.validate()?;
    let header = ParcHeader {
        format_version: FORMAT_VERSION,
        dims: p.dims,
        region_names: p
            .region_names
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect(),
    };
    let json = serde_json::to_vec_pretty(&header).expect("header serializes");
    write_file(&sidecar(stem, "json"), &json)?;
    let bytes: Vec<u8> = p.labels.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_file(&sidecar(stem, "i32"), &bytes)
}

pub fn read_parcellation(stem: &Path) -> Result<Parcellation> {
    let hpath = sidecar(stem, "json");
    let header: ParcHeader = serde_json::from_slice(&read_file(&hpath)?)
        .map_err(|e| Error::Format(format!("{}: {e}", hpath.display())))?;
    check_version(header.format_version)?;
    let ppath = sidecar(stem, "i32");
    let bytes = read_file(&ppath)?;
    check_payload_len(&ppath, header.dims.iter().product::<usize>() * 4, bytes.len())?;
    let labels = bytes
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let region_names = header
        .region_names
        .into_iter()
        .map(|(k, v)| {
            k.parse::<i32>()
                .map(|id| (id, v))
                .map_err(|_| Error::Format(format!("region id {k:?} is not an integer")))
        })
        .collect::<Result<_>>()?;
    Parcellation::new(header.dims, labels, region_names)
}

pub fn write_schedule(s: &StimulusSchedule, path: &Path) -> Result<()> {
    write_file(path, s.to_text().as_bytes())
}

pub fn read_schedule(path: &Path) -> Result<StimulusSchedule> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::Format(format!("{}: not UTF-8", path.display())))?;
    StimulusSchedule::from_text(&text)
}

/// Every `.vseq` stem (a `.json` with a sibling `.f32`) in `dir`, sorted.
pub fn list_vseq(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("f32") {
            let stem = path.with_extension("");
            if sidecar(&stem, "json").exists() {
                out.push(stem);
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn read_dataset(dir: &Path) -> Result<Vec<VolumeSequence>> {
    list_vseq(dir)?.iter().map(|p| read_vseq(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_sequence_payload() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("z");
        write_vseq(&VolumeSequence::zeros("z", [1, 2, 2, 2]), &stem).unwrap();
        let bytes = fs::read(dir.path().join("z.f32")).unwrap();
        assert_eq!(bytes, vec![0u8; 32]);
        let header: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join("z.json")).unwrap()).unwrap();
        assert_eq!(header["dims"], serde_json::json!([1, 2, 2, 2]));
        assert_eq!(header["format_version"], 1);
        assert_eq!(header["label"], serde_json::Value::Null);
    }

    #[test]
    fn truncated_payload_names_byte_counts() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("t");
        write_vseq(&VolumeSequence::zeros("t", [2, 2, 2, 2]), &stem).unwrap();
        fs::write(dir.path().join("t.f32"), vec![0u8; 60]).unwrap();
        let msg = read_vseq(&stem).unwrap_err().to_string();
        assert!(msg.contains("60") && msg.contains("64"), "{msg}");
    }

    #[test]
    fn zero_frames_is_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("e");
        fs::write(
            dir.path().join("e.json"),
            r#"{"format_version":1,"dims":[0,2,2,2],"voxel_size_mm":[1,1,1],"frame_interval_s":2,"label":null,"subject_id":"e"}"#,
        )
        .unwrap();
        fs::write(dir.path().join("e.f32"), b"").unwrap();
        assert!(matches!(read_vseq(&stem), Err(Error::Validation(_))));
    }

    #[test]
    fn unknown_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("v");
        fs::write(
            dir.path().join("v.json"),
            r#"{"format_version":2,"dims":[1,1,1,1],"voxel_size_mm":[1,1,1],"frame_interval_s":2,"label":"HC","subject_id":"v"}"#,
        )
        .unwrap();
        fs::write(dir.path().join("v.f32"), [0u8; 4]).unwrap();
        assert!(matches!(
            read_vseq(&stem),
            Err(Error::UnsupportedVersion { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn missing_file_names_path() {
        let msg = read_vseq(Path::new("/nonexistent/dir/x")).unwrap_err().to_string();
        assert!(msg.contains("/nonexistent/dir/x.json"), "{msg}");
    }

    #[test]
    fn parcellation_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("atlas");
        let names = BTreeMap::from([(1, "amygdala_r".to_string()), (7, "vmpfc".to_string())]);
        let p = Parcellation::new([2, 1, 2], vec![0, 1, 7, 7], names).unwrap();
        write_parcellation(&p, &stem).unwrap();
        assert_eq!(read_parcellation(&stem).unwrap(), p);
    }

    #[test]
    fn sidecar_keeps_dots_in_stem() {
        assert_eq!(sidecar(Path::new("a/sub.01"), "json"), PathBuf::from("a/sub.01.json"));
        assert_eq!(sidecar(Path::new("a/sub.json"), "f32"), PathBuf::from("a/sub.f32"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn vseq_roundtrip_is_bit_exact(
            t in 1usize..4, d in 1usize..4, h in 1usize..4, w in 1usize..4,
            seed in any::<u64>(), labelled in any::<bool>(),
        ) {
            use rand::Rng;
            let mut rng = crate::rng::seeded(seed);
            let n = t * d * h * w;
            let data: Vec<f32> = (0..n).map(|_| rng.gen_range(-1e6f32..1e6)).collect();
            let mut seq = VolumeSequence::new(format!("s{seed}"), [t, d, h, w], data).unwrap();
            seq.voxel_size_mm = [1.5, 2.0, 3.25];
            seq.frame_interval_s = 0.7;
            if labelled { seq.label = Some(Label::Asd); }
            let dir = tempfile::tempdir().unwrap();
            let stem = dir.path().join("rt");
            write_vseq(&seq, &stem).unwrap();
            let back = read_vseq(&stem).unwrap();
            prop_assert_eq!(
                back.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                seq.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
            prop_assert_eq!(back, seq);
        }
    }
}
