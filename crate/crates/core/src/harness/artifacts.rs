use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::SpaceTimeField;

use super::Experiment;

/// Writes to a temporary file in the target directory, then renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// `# config_hash=… seed=… version=…`, the first line of every CSV artifact.
pub fn provenance_line(exp: &Experiment) -> String {
    format!(
        "# config_hash={} seed={} version={}\n",
        exp.hash,
        exp.seed(),
        env!("CARGO_PKG_VERSION")
    )
}

pub(crate) fn field_path(dir: &Path, name: &str, replica: usize) -> PathBuf {
    dir.join("fields").join(format!("{name}_r{replica}.csv"))
}

pub(crate) fn write_field(exp: &Experiment, dir: &Path, name: &str, replica: usize, field: &SpaceTimeField) -> Result<()> {
    let mut buf = provenance_line(exp).into_bytes();
    field.write_csv(&mut buf)?;
    write_atomic(&field_path(dir, name, replica), &buf)
}

pub(crate) fn write_csv_rows(exp: &Experiment, path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut text = provenance_line(exp);
    text.push_str(header);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

/// Reads `fields/{name}_r{r}.csv` for `r = 0, 1, …` up to the configured
/// replica count, stopping at the first missing file. At least one must exist.
pub fn load_fields(exp: &Experiment, dir: &Path, name: &str) -> Result<Vec<SpaceTimeField>> {
    let mut fields = Vec::new();
    for r in 0..exp.config.run.replicas {
        let path = field_path(dir, name, r);
        let Ok(file) = fs::File::open(&path) else {
            if r == 0 {
                return Err(Error::MissingArtifact(path));
            }
            break;
        };
        fields.push(SpaceTimeField::read_csv(BufReader::new(file), exp.grid, exp.times)?);
    }
    Ok(fields)
}
