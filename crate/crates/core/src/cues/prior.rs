use std::collections::BTreeMap;
use std::io::Read;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::scene::Catalog;

/// Approximate metric dimensions per class name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SizePriorTable {
    entries: BTreeMap<String, [f64; 3]>,
}

#[derive(Deserialize)]
struct Row {
    class: String,
    width_m: f64,
    height_m: f64,
    depth_m: f64,
}

impl SizePriorTable {
    pub fn new(entries: impl IntoIterator<Item = (String, [f64; 3])>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (name, dims) in entries {
            if dims.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
                return Err(Error::Validation(format!(
                    "size prior for `{name}` must be positive, got {dims:?}"
                )));
            }
            map.insert(name, dims);
        }
        Ok(Self { entries: map })
    }

    /// Priors for the familiar classes of a catalog.
    pub fn from_catalog(catalog: &Catalog) -> Self {
        Self {
            entries: catalog
                .classes()
                .iter()
                .filter(|c| c.familiar)
                .map(|c| (c.name.clone(), c.mean_dims))
                .collect(),
        }
    }

    /// Reads CSV with header `class,width_m,height_m,depth_m`.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| Error::Parse {
                line: 1,
                msg: e.to_string(),
            })?
            .clone();
        if header.iter().collect::<Vec<_>>() != ["class", "width_m", "height_m", "depth_m"] {
            return Err(Error::Format(format!(
                "size prior header must be `class,width_m,height_m,depth_m`, got `{}`",
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut entries = Vec::new();
        for (i, row) in rdr.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| Error::Parse {
                line: i + 2,
                msg: e.to_string(),
            })?;
            entries.push((row.class, [row.width_m, row.height_m, row.depth_m]));
        }
        Self::new(entries)
    }

    pub fn get(&self, name: &str) -> Option<[f64; 3]> {
        self.entries.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_csv() {
        let text = "class,width_m,height_m,depth_m\nchair,0.5,0.9,0.5\nmug,0.08,0.1,0.08\n";
        let t = SizePriorTable::from_csv(text.as_bytes()).unwrap();
        assert_eq!(t.get("mug"), Some([0.08, 0.1, 0.08]));
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn rejects_bad_rows_and_headers() {
        let neg = "class,width_m,height_m,depth_m\nchair,0.5,-1,0.5\n";
        assert!(matches!(
            SizePriorTable::from_csv(neg.as_bytes()),
            Err(Error::Validation(_))
        ));
        let junk = "class,width_m,height_m,depth_m\nchair,wide,1,1\n";
        assert!(matches!(
            SizePriorTable::from_csv(junk.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
        let header = "name,w,h,d\nchair,1,1,1\n";
        assert!(matches!(
            SizePriorTable::from_csv(header.as_bytes()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn catalog_priors_skip_unfamiliar_classes() {
        let t = SizePriorTable::from_catalog(&Catalog::indoor());
        assert_eq!(t.len(), 10);
        assert!(t.get("crate").is_none());
    }
}
