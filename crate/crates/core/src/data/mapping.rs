//! Two-column class-mapping tables (`source_class,mapped_class`).

use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

/// Closed set of names a mapping may target.
pub const MAPPED_CLASSES: [&str; 11] = [
    "car",
    "truck",
    "bike",
    "person",
    "road",
    "parking",
    "sidewalk",
    "building",
    "nature",
    "other-objects",
    "ignore",
];

pub const IGNORE: &str = "ignore";

const BUNDLED: [(&str, &str); 2] = [
    ("a2d2", include_str!("../../assets/class_mappings/a2d2.csv")),
    ("semantickitti", include_str!("../../assets/class_mappings/semantickitti.csv")),
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassMapping {
    entries: Vec<(String, String)>,
    index: HashMap<String, usize>,
}

#[derive(Deserialize)]
struct Record {
    source_class: String,
    mapped_class: String,
}

impl ClassMapping {
    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, source: &str) -> Option<&str> {
        self.index.get(source).map(|&i| self.entries[i].1.as_str())
    }

    /// Parses CSV text; `origin` names the input in errors.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| Error::format(origin, e.to_string()))?;
        if headers.iter().collect::<Vec<_>>() != ["source_class", "mapped_class"] {
            return Err(Error::format(origin, "header must be `source_class,mapped_class`"));
        }
        let mut entries = Vec::new();
        let mut index = HashMap::new();
        for (line, rec) in reader.deserialize::<Record>().enumerate() {
            let rec = rec.map_err(|e| Error::format(origin, e.to_string()))?;
            if !MAPPED_CLASSES.contains(&rec.mapped_class.as_str()) {
                return Err(Error::format(
                    origin,
                    format!("row {}: unknown mapped class `{}`", line + 2, rec.mapped_class),
                ));
            }
            if index.insert(rec.source_class.clone(), entries.len()).is_some() {
                return Err(Error::format(
                    origin,
                    format!("row {}: duplicate source class `{}`", line + 2, rec.source_class),
                ));
            }
            entries.push((rec.source_class, rec.mapped_class));
        }
        Ok(ClassMapping { entries, index })
    }

    /// One of the tables shipped with the crate: `a2d2` or `semantickitti`.
    pub fn bundled(name: &str) -> Result<Self> {
        let (_, text) = BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::arg(format!("no bundled class mapping `{name}`")))?;
        Self::parse(text, Path::new(&format!("<bundled>/{name}.csv")))
    }
}

pub fn load_class_mapping(path: &Path) -> Result<ClassMapping> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ClassMapping::parse(&text, path)
}

/// Rewrites each label to its mapped class; already-mapped names pass through.
pub fn apply_mapping<S: AsRef<str>>(labels: &[S], mapping: &ClassMapping) -> Result<Vec<String>> {
    labels
        .iter()
        .map(|l| {
            let l = l.as_ref();
            match mapping.get(l) {
                Some(m) => Ok(m.to_string()),
                None if MAPPED_CLASSES.contains(&l) => Ok(l.to_string()),
                None => Err(Error::arg(format!("label `{l}` is not in the class mapping"))),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_tables_load() {
        let a = ClassMapping::bundled("a2d2").unwrap();
        let k = ClassMapping::bundled("semantickitti").unwrap();
        assert_eq!((a.len(), k.len()), (55, 34));
        assert_eq!(a.get("Car 1"), Some("car"));
        assert_eq!(a.get("Sky"), Some("ignore"));
        assert_eq!(k.get("moving-truck"), Some("truck"));
    }

    #[test]
    fn apply_and_errors() {
        let k = ClassMapping::bundled("semantickitti").unwrap();
        let out = apply_mapping(&["bicycle", "fence", "outlier"], &k).unwrap();
        assert_eq!(out, vec!["bike", "other-objects", "ignore"]);
        assert!(apply_mapping(&["spaceship"], &k).is_err());
        let twice = apply_mapping(&out, &k).unwrap();
        assert_eq!(twice, out);
    }

    #[test]
    fn malformed_tables() {
        let p = Path::new("m.csv");
        let dup = "source_class,mapped_class\na,car\na,bike\n";
        assert!(matches!(ClassMapping::parse(dup, p), Err(Error::Format { .. })));
        let unknown = "source_class,mapped_class\na,boat\n";
        assert!(matches!(ClassMapping::parse(unknown, p), Err(Error::Format { .. })));
        let header = "from,to\na,car\n";
        assert!(matches!(ClassMapping::parse(header, p), Err(Error::Format { .. })));
    }

    #[test]
    fn loads_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "source_class,mapped_class\nTree,nature\n").unwrap();
        let m = load_class_mapping(&p).unwrap();
        assert_eq!(apply_mapping(&["Tree"], &m).unwrap(), vec!["nature"]);
        assert!(matches!(load_class_mapping(&dir.path().join("none.csv")), Err(Error::Io { .. })));
    }
}
