//! Text feature format.
//!
//! ```text
//! ccmf 1 <d>
//! # comment
//! tracklet_id,camera_id,identity_or_-,v1,...,vd
//! ```
//!
//! Values are written with 17 significant digits so a save/load cycle is
//! exact.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{CameraDataset, TrackletFeature};
use crate::error::{CcmError, Result};

pub const FORMAT_MAGIC: &str = "ccmf";
const FORMAT_VERSION: &str = "1";
const UNKNOWN_IDENTITY: &str = "-";

pub fn load_features(path: impl AsRef<Path>) -> Result<CameraDataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| CcmError::io(path, e))?;
    read_features(file, path)
}

/// Parses the feature format from any reader; `origin` names the source in
/// error messages.
pub fn read_features(reader: impl Read, origin: &Path) -> Result<CameraDataset> {
    let reader = BufReader::new(reader);
    let mut dimension: Option<usize> = None;
    let mut tracklets = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| CcmError::io(origin, e))?;
        let line = line.trim_end_matches('\r');
        let Some(d) = dimension else {
            dimension = Some(parse_header(line).map_err(|m| CcmError::parse(origin, lineno, m))?);
            continue;
        };
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let t = parse_row(line, d).map_err(|m| CcmError::parse(origin, lineno, m))?;
        tracklets.push((lineno, t));
    }
    let d = dimension.ok_or_else(|| CcmError::parse(origin, 1, "missing `ccmf` header"))?;

    let mut seen = std::collections::HashMap::new();
    for (lineno, t) in &tracklets {
        if let Some(first) = seen.insert(t.tracklet_id.as_str(), *lineno) {
            return Err(CcmError::parse(
                origin,
                *lineno,
                format!("duplicate tracklet_id {:?} (first seen on line {first})", t.tracklet_id),
            ));
        }
    }
    CameraDataset::new(d, tracklets.into_iter().map(|(_, t)| t).collect())
}

fn parse_header(line: &str) -> std::result::Result<usize, String> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    match fields.as_slice() {
        [FORMAT_MAGIC, FORMAT_VERSION, d] => match d.parse::<usize>() {
            Ok(d) if d > 0 => Ok(d),
            _ => Err(format!("invalid dimension {d:?} in header")),
        },
        [FORMAT_MAGIC, v, _] => Err(format!("unsupported format version {v}")),
        _ => Err(format!("expected header `ccmf 1 <d>`, found {line:?}")),
    }
}

fn parse_row(line: &str, d: usize) -> std::result::Result<TrackletFeature, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != d + 3 {
        return Err(format!(
            "expected {} fields (3 + {d} values), found {}",
            d + 3,
            fields.len()
        ));
    }
    let tracklet_id = fields[0];
    if tracklet_id.is_empty() {
        return Err("empty tracklet_id".into());
    }
    let camera_id = fields[1]
        .parse::<u32>()
        .map_err(|_| format!("invalid camera_id {:?}", fields[1]))?;
    let identity = match fields[2] {
        UNKNOWN_IDENTITY => None,
        "" => return Err("empty identity field (use `-` for unknown)".into()),
        s => Some(s.to_string()),
    };
    let feature = fields[3..]
        .iter()
        .enumerate()
        .map(|(k, s)| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("invalid value {s:?} at column {}", k + 4))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(TrackletFeature::new(tracklet_id, camera_id, feature, identity))
}

pub fn save_features(dataset: &CameraDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| CcmError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_features(dataset, &mut w).map_err(|e| match e {
        CcmError::Io { source, .. } => CcmError::io(path, source),
        other => other,
    })?;
    w.flush().map_err(|e| CcmError::io(path, e))
}

fn check_field(kind: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.contains([',', '\n', '\r']) || s.starts_with('#') || s != s.trim() {
        return Err(CcmError::InvalidArgument(format!(
            "{kind} {s:?} cannot be represented in the feature format"
        )));
    }
    Ok(())
}

pub fn write_features(dataset: &CameraDataset, w: &mut impl Write) -> Result<()> {
    let io_err = |e| CcmError::io("<writer>", e);
    writeln!(w, "{FORMAT_MAGIC} {FORMAT_VERSION} {}", dataset.dimension()).map_err(io_err)?;
    for t in dataset.iter() {
        check_field("tracklet_id", &t.tracklet_id)?;
        let identity = match &t.identity {
            Some(id) => {
                check_field("identity", id)?;
                if id == UNKNOWN_IDENTITY {
                    return Err(CcmError::InvalidArgument(
                        "identity `-` is reserved for unknown".into(),
                    ));
                }
                id.as_str()
            }
            None => UNKNOWN_IDENTITY,
        };
        write!(w, "{},{},{}", t.tracklet_id, t.camera_id, identity).map_err(io_err)?;
        for v in &t.feature {
            write!(w, ",{v:.16e}").map_err(io_err)?;
        }
        writeln!(w).map_err(io_err)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticConfig};
    use std::path::PathBuf;

    fn parse(text: &str) -> Result<CameraDataset> {
        read_features(text.as_bytes(), &PathBuf::from("mem.ccmf"))
    }

    #[test]
    fn round_trip_is_exact() {
        let ds = generate_synthetic(&SyntheticConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_features(&ds, &mut buf).unwrap();
        assert_eq!(parse(std::str::from_utf8(&buf).unwrap()).unwrap(), ds);
    }

    #[test]
    fn hand_written_file() {
        let text = "ccmf 1 2\n# a comment\nt1,0,alice,0.5,-1\nt2,3,-,1e-3,2.25\n\nt3,0,bob,0,7\n";
        let ds = parse(text).unwrap();
        assert_eq!(ds.camera_ids(), vec![0, 3]);
        let cam0 = ds.camera(0).unwrap();
        assert_eq!(cam0[0].tracklet_id, "t1");
        assert_eq!(cam0[0].identity.as_deref(), Some("alice"));
        assert_eq!(cam0[0].feature, vec![0.5, -1.0]);
        assert_eq!(cam0[1].tracklet_id, "t3");
        assert_eq!(cam0[1].feature, vec![0.0, 7.0]);
        let cam3 = ds.camera(3).unwrap();
        assert_eq!(cam3[0].identity, None);
        assert_eq!(cam3[0].feature, vec![0.001, 2.25]);
    }

    #[test]
    fn wrong_arity_names_the_line() {
        let err = parse("ccmf 1 2\nt1,0,a,1,2\n# c\nt2,0,a,1\n").unwrap_err();
        match err {
            CcmError::Parse { line, msg, .. } => {
                assert_eq!(line, 4);
                assert!(msg.contains("expected 5 fields"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = parse("ccmf 1 1\nt1,0,a,1\nt1,1,a,2\n").unwrap_err();
        assert!(matches!(err, CcmError::Parse { line: 3, .. }));
    }

    #[test]
    fn bad_header_rejected() {
        assert!(matches!(parse("ccmm 1 2\n"), Err(CcmError::Parse { line: 1, .. })));
        assert!(matches!(parse("ccmf 2 2\n"), Err(CcmError::Parse { line: 1, .. })));
        assert!(parse("").is_err());
    }
}
