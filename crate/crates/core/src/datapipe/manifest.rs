use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// One image of one individual.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub path: PathBuf,
    pub identity: String,
    pub species: Option<String>,
}

/// A dataset listing: one `path<TAB>identity[<TAB>species]` record per line.
///
/// Relative paths are resolved against the manifest's directory. Blank lines
/// and lines starting with `#` are ignored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub name: String,
    pub records: Vec<Record>,
}

impl Manifest {
    pub fn parse(name: &str, text: &str, base: &Path) -> Result<Self> {
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            let path = fields.next().unwrap_or_default();
            let identity = fields.next().unwrap_or_default();
            let species = fields.next().filter(|s| !s.is_empty()).map(str::to_owned);
            if path.is_empty() || identity.is_empty() || fields.next().is_some() {
                return Err(Error::Input(format!(
                    "manifest {name} line {}: expected path<TAB>identity[<TAB>species]",
                    lineno + 1
                )));
            }
            let path = Path::new(path);
            records.push(Record {
                path: if path.is_absolute() {
                    path.to_path_buf()
                } else {
                    base.join(path)
                },
                identity: identity.to_owned(),
                species,
            });
        }
        if records.is_empty() {
            return Err(Error::Input(format!("manifest {name} has no records")));
        }
        Ok(Manifest {
            name: name.to_owned(),
            records,
        })
    }

    /// Reads a manifest and checks that every listed file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let base = path.parent().unwrap_or(Path::new("."));
        let manifest = Self::parse(&name, &text, base)?;
        for r in &manifest.records {
            if !r.path.is_file() {
                return Err(Error::io(
                    &r.path,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "listed in manifest"),
                ));
            }
        }
        Ok(manifest)
    }

    /// Serialises with paths relative to `base` where possible.
    pub fn to_text(&self, base: &Path) -> String {
        let mut out = String::new();
        for r in &self.records {
            let p = r.path.strip_prefix(base).unwrap_or(&r.path);
            let _ = write!(out, "{}\t{}", p.display(), r.identity);
            if let Some(s) = &r.species {
                let _ = write!(out, "\t{s}");
            }
            out.push('\n');
        }
        out
    }

    /// Distinct identities in lexicographic order.
    pub fn identities(&self) -> Vec<String> {
        self.by_identity().into_keys().collect()
    }

    /// Record indices grouped by identity, identities sorted.
    pub fn by_identity(&self) -> BTreeMap<String, Vec<usize>> {
        let mut map: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            map.entry(r.identity.clone()).or_default().push(i);
        }
        map
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_resolves() {
        let text = "# comment\na.png\tzeb_1\tzebra\n/abs/b.png\tzeb_2\n\n";
        let m = Manifest::parse("z", text, Path::new("/data")).unwrap();
        assert_eq!(m.records.len(), 2);
        assert_eq!(m.records[0].path, PathBuf::from("/data/a.png"));
        assert_eq!(m.records[0].species.as_deref(), Some("zebra"));
        assert_eq!(m.records[1].path, PathBuf::from("/abs/b.png"));
        assert_eq!(m.identities(), vec!["zeb_1", "zeb_2"]);
        assert_eq!(
            m.to_text(Path::new("/data")),
            "a.png\tzeb_1\tzebra\n/abs/b.png\tzeb_2\n"
        );
    }

    #[test]
    fn rejects_malformed() {
        assert!(Manifest::parse("x", "only_path\n", Path::new(".")).is_err());
        assert!(Manifest::parse("x", "a\tb\tc\td\n", Path::new(".")).is_err());
        assert!(Manifest::parse("x", "# nothing\n", Path::new(".")).is_err());
    }

    #[test]
    fn load_reports_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        fs::write(&p, "missing.png\tid\n").unwrap();
        let err = Manifest::load(&p).unwrap_err();
        assert!(err.to_string().contains("missing.png"));
    }
}
