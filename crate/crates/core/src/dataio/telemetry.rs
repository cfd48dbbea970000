use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{Dataset, DynamicsClass, Profile, TelemetryFrame};
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "t,n_m,I_m,T_ref,T_W,T_DE,T_NDE,dynamics";

const NUMERIC_COLUMNS: [&str; 7] = ["t", "n_m", "I_m", "T_ref", "T_W", "T_DE", "T_NDE"];

/// Loads one profile per CSV file. `path` may be a single file or a
/// directory, in which case every `*.csv` inside it is read in name order.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    let files: Vec<PathBuf> = if meta.is_dir() {
        let mut files = Vec::new();
        for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
            let p = entry.map_err(|e| Error::io(path, e))?.path();
            if p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
                files.push(p);
            }
        }
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };
    if files.is_empty() {
        return Err(Error::NoProfiles(path.to_path_buf()));
    }
    let profiles = files.iter().map(load_profile).collect::<Result<Vec<_>>>()?;
    Dataset::new(profiles)
}

/// Splits a `_slow` / `_medium` / `_fast` suffix off a file stem.
fn split_class_suffix(stem: &str) -> (&str, Option<DynamicsClass>) {
    for class in DynamicsClass::ALL {
        let suffix = format!("_{class}");
        if let Some(base) = stem.strip_suffix(&suffix) {
            if !base.is_empty() {
                return (base, Some(class));
            }
        }
    }
    (stem, None)
}

pub fn load_profile(path: impl AsRef<Path>) -> Result<Profile> {
    let path = path.as_ref();
    let load_err = |line: usize, message: String| Error::Load {
        file: path.to_path_buf(),
        line,
        message,
    };
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| load_err(0, "file name is not valid UTF-8".into()))?;
    let (id, suffix_class) = split_class_suffix(stem);

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| load_err(0, e.to_string()))?;
    let headers = reader.headers().map_err(|e| load_err(1, e.to_string()))?.clone();
    let mut index = [0usize; 7];
    for (slot, name) in index.iter_mut().zip(NUMERIC_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| load_err(1, format!("missing column {name}")))?;
    }
    let dynamics_col = headers.iter().position(|h| h == "dynamics");

    let mut frames: Vec<TelemetryFrame> = Vec::new();
    let mut class: Option<DynamicsClass> = None;
    let mut record = csv::StringRecord::new();
    loop {
        let more = reader
            .read_record(&mut record)
            .map_err(|e| load_err(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        if !more {
            break;
        }
        let line = record.position().map_or(0, |p| p.line() as usize);
        let cell = |k: usize| -> Result<f64> {
            let raw = record.get(index[k]).unwrap_or("");
            raw.parse::<f64>().map_err(|_| {
                load_err(line, format!("non-numeric cell {raw:?} in column {}", NUMERIC_COLUMNS[k]))
            })
        };
        let t_raw = cell(0)?;
        if t_raw.fract() != 0.0 || !t_raw.is_finite() {
            return Err(load_err(line, format!("time {t_raw} is not an integer second")));
        }
        let frame = TelemetryFrame {
            t: t_raw as i64,
            n_m: cell(1)?,
            i_m: cell(2)?,
            t_ref: cell(3)?,
            t_w: cell(4)?,
            t_de: cell(5)?,
            t_nde: cell(6)?,
        };
        frame.validate().map_err(|m| load_err(line, m))?;
        if let Some(prev) = frames.last() {
            if frame.t != prev.t + 1 {
                return Err(load_err(line, format!("non-contiguous time at line {line}")));
            }
        }
        if let Some(col) = dynamics_col {
            let raw = record.get(col).unwrap_or("");
            if !raw.is_empty() {
                let parsed: DynamicsClass = raw.parse().map_err(|e: Error| load_err(line, e.to_string()))?;
                match class {
                    Some(c) if c != parsed => {
                        return Err(load_err(line, format!("dynamics changes from {c} to {parsed}")))
                    }
                    _ => class = Some(parsed),
                }
            }
        }
        frames.push(frame);
    }
    if frames.is_empty() {
        return Err(load_err(1, "no data rows".into()));
    }
    let dynamics = class
        .or(suffix_class)
        .ok_or_else(|| load_err(1, "dynamics class missing from column and file name".into()))?;
    Profile::new(id, dynamics, frames)
}

/// Writes a profile as CSV. Floats use the shortest representation that
/// parses back to the identical `f64`.
pub fn export_profile(profile: &Profile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(profile.len() * 96 + CSV_HEADER.len() + 1);
    out.push_str(CSV_HEADER);
    out.push('\n');
    let class = profile.dynamics.as_str();
    for f in &profile.frames {
        use std::fmt::Write as _;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            f.t, f.n_m, f.i_m, f.t_ref, f.t_w, f.t_de, f.t_nde, class
        );
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Writes every profile to `<dir>/<id>.csv`, returning the written paths.
pub fn export_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    dataset
        .profiles
        .iter()
        .map(|p| {
            let path = dir.join(format!("{}.csv", p.id));
            export_profile(p, &path).map(|_| path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    const NO_CLASS: &str = "t,n_m,I_m,T_ref,T_W,T_DE,T_NDE\n\
                        0,1478,30.6,25.5,40.25,30,29\n\
                        1,1478,30.6,25.6,40.5,30.1,29.05\n";

    #[test]
    fn dynamics_from_suffix_when_column_absent() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "run3_fast.csv", NO_CLASS);
        let prof = load_profile(&p).unwrap();
        assert_eq!(prof.id, "run3");
        assert_eq!(prof.dynamics, DynamicsClass::Fast);
        assert_eq!(prof.len(), 2);
    }

    #[test]
    fn time_gap_is_reported_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let body = "t,n_m,I_m,T_ref,T_W,T_DE,T_NDE,dynamics\n\
                    5,1,1,1,1,1,1,slow\n\
                    7,1,1,1,1,1,1,slow\n";
        let p = write(dir.path(), "a.csv", body);
        let err = load_profile(&p).unwrap_err().to_string();
        assert!(err.contains("non-contiguous time at line 3"), "{err}");
        assert!(err.contains("a.csv"), "{err}");
    }

    #[test]
    fn missing_column_and_bad_cell() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a_slow.csv", "t,n_m,I_m,T_ref,T_W,T_DE\n0,1,1,1,1,1\n");
        assert!(load_profile(&p).unwrap_err().to_string().contains("missing column T_NDE"));
        let p = write(
            dir.path(),
            "b.csv",
            "t,n_m,I_m,T_ref,T_W,T_DE,T_NDE,dynamics\n0,1,abc,1,1,1,1,slow\n",
        );
        let err = load_profile(&p).unwrap_err().to_string();
        assert!(err.contains(":2:") && err.contains("non-numeric"), "{err}");
    }

    #[test]
    fn empty_directory() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::NoProfiles(_))));
    }

    #[test]
    fn directory_with_three_profiles() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["a_slow.csv", "b_medium.csv", "c_fast.csv"] {
            write(dir.path(), name, NO_CLASS);
        }
        write(dir.path(), "notes.txt", "ignored");
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.ids(), vec!["a", "b", "c"]);
    }
}
