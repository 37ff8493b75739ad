use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A kind of object the simulator can place, with its typical metric size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectClass {
    pub name: String,
    /// Width, height and thickness in metres. Only the first two are visible
    /// to a fronto-parallel camera.
    pub mean_dims: [f64; 3],
    /// Standard deviation of the log of the per-instance scale factor.
    pub size_sigma: f64,
    /// Whether a size prior is published for this class.
    pub familiar: bool,
}

impl ObjectClass {
    pub fn new(name: &str, dims: [f64; 3], size_sigma: f64, familiar: bool) -> Self {
        Self {
            name: name.to_string(),
            mean_dims: dims,
            size_sigma,
            familiar,
        }
    }
}

/// Ordered list of object classes. The position of a class is its id; its
/// semantic label in rendered maps is `id + 1` because label 0 is background.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ObjectClass>", into = "Vec<ObjectClass>")]
pub struct Catalog {
    classes: Vec<ObjectClass>,
}

impl Catalog {
    pub fn new(classes: Vec<ObjectClass>) -> Result<Self> {
        let mut seen = HashSet::new();
        for c in &classes {
            if c.name.trim().is_empty() || c.name.contains(char::is_whitespace) {
                return Err(Error::Config(format!(
                    "class name `{}` must be a non-empty token",
                    c.name
                )));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Config(format!("duplicate class name `{}`", c.name)));
            }
            if c.mean_dims.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
                return Err(Error::Config(format!(
                    "class `{}` has non-positive dimensions {:?}",
                    c.name, c.mean_dims
                )));
            }
            if !(c.size_sigma >= 0.0 && c.size_sigma.is_finite()) {
                return Err(Error::Config(format!(
                    "class `{}` has invalid size_sigma {}",
                    c.name, c.size_sigma
                )));
            }
        }
        Ok(Self { classes })
    }

    /// Household objects spanning two orders of magnitude in size; the last
    /// two classes carry no published size prior.
    pub fn indoor() -> Self {
        let familiar = [
            ("chair", [0.45, 0.90, 0.50]),
            ("table", [1.20, 0.75, 0.80]),
            ("sofa", [2.00, 0.85, 0.90]),
            ("lamp", [0.30, 0.60, 0.30]),
            ("bottle", [0.08, 0.25, 0.08]),
            ("book", [0.15, 0.22, 0.03]),
            ("door", [0.90, 2.00, 0.05]),
            ("cabinet", [0.80, 1.20, 0.50]),
            ("monitor", [0.55, 0.35, 0.05]),
            ("pillow", [0.50, 0.35, 0.15]),
        ];
        let unfamiliar = [
            ("crate", [0.40, 0.40, 0.40]),
            ("banner", [1.00, 0.60, 0.02]),
        ];
        let classes = familiar
            .iter()
            .map(|(n, d)| ObjectClass::new(n, *d, 0.1, true))
            .chain(
                unfamiliar
                    .iter()
                    .map(|(n, d)| ObjectClass::new(n, *d, 0.1, false)),
            )
            .collect();
        Self { classes }
    }

    /// Two cubes that differ only in size.
    pub fn ambiguous() -> Self {
        Self {
            classes: vec![
                ObjectClass::new("small_cube", [0.2, 0.2, 0.2], 0.05, true),
                ObjectClass::new("large_cube", [0.8, 0.8, 0.8], 0.05, true),
            ],
        }
    }

    pub fn classes(&self) -> &[ObjectClass] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn get(&self, class_id: usize) -> Option<&ObjectClass> {
        self.classes.get(class_id)
    }

    pub fn by_label(&self, label: u32) -> Option<&ObjectClass> {
        label.checked_sub(1).and_then(|id| self.get(id as usize))
    }

    pub fn label(class_id: usize) -> u32 {
        class_id as u32 + 1
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.name == name)
    }
}

impl TryFrom<Vec<ObjectClass>> for Catalog {
    type Error = Error;

    fn try_from(classes: Vec<ObjectClass>) -> Result<Self> {
        Catalog::new(classes)
    }
}

impl From<Catalog> for Vec<ObjectClass> {
    fn from(c: Catalog) -> Self {
        c.classes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_catalogs_validate() {
        for cat in [Catalog::indoor(), Catalog::ambiguous()] {
            Catalog::new(cat.classes().to_vec()).unwrap();
        }
    }

    #[test]
    fn rejects_duplicates_and_bad_sizes() {
        let c = ObjectClass::new("a", [1.0, 1.0, 1.0], 0.1, true);
        assert!(Catalog::new(vec![c.clone(), c.clone()]).is_err());
        let mut bad = c.clone();
        bad.mean_dims[1] = 0.0;
        assert!(Catalog::new(vec![bad]).is_err());
        let mut bad = c;
        bad.size_sigma = -1.0;
        assert!(Catalog::new(vec![bad]).is_err());
    }

    #[test]
    fn labels_are_offset_from_ids() {
        let cat = Catalog::indoor();
        assert_eq!(Catalog::label(0), 1);
        assert_eq!(cat.by_label(1).unwrap().name, "chair");
        assert!(cat.by_label(0).is_none());
    }
}
