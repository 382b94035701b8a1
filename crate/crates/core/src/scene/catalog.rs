use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One object category with its size prior and placement flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategorySpec {
    pub name: String,
    /// Mean full extents (width along local X, depth along local Y, height), meters.
    pub size: [f64; 3],
    /// Other objects can be placed on its top face.
    #[serde(default)]
    pub surface: bool,
    /// Can be placed on a supporting surface.
    #[serde(default)]
    pub small: bool,
    /// Relative sampling frequency.
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

/// Fixed, ordered catalog of object categories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    #[serde(rename = "category")]
    pub categories: Vec<CategorySpec>,
}

// name, width, depth, height, surface, small, weight
const DEFAULT: &[(&str, f64, f64, f64, bool, bool, f64)] = &[
    ("chair", 0.5, 0.5, 0.9, false, false, 8.0),
    ("table", 1.4, 0.8, 0.75, true, false, 5.0),
    ("sofa", 2.0, 0.9, 0.85, true, false, 4.0),
    ("bed", 1.6, 2.0, 0.55, true, false, 3.0),
    ("desk", 1.2, 0.6, 0.75, true, false, 4.0),
    ("armchair", 0.85, 0.85, 0.9, false, false, 3.0),
    ("bookshelf", 0.9, 0.35, 1.8, false, false, 3.0),
    ("wardrobe", 1.2, 0.6, 2.0, false, false, 2.0),
    ("dresser", 1.1, 0.5, 0.8, true, false, 2.5),
    ("nightstand", 0.45, 0.4, 0.55, true, false, 3.0),
    ("coffee-table", 1.0, 0.6, 0.45, true, false, 3.0),
    ("side-table", 0.5, 0.5, 0.6, true, false, 2.5),
    ("dining-table", 1.8, 0.9, 0.75, true, false, 2.0),
    ("tv-stand", 1.5, 0.45, 0.5, true, false, 2.0),
    ("cabinet", 0.8, 0.45, 0.9, true, false, 3.0),
    ("sideboard", 1.6, 0.45, 0.85, true, false, 1.5),
    ("counter", 1.8, 0.6, 0.9, true, false, 2.0),
    ("kitchen-island", 1.6, 0.9, 0.9, true, false, 1.0),
    ("console-table", 1.2, 0.35, 0.8, true, false, 1.5),
    ("file-cabinet", 0.45, 0.6, 1.1, true, false, 1.0),
    ("stool", 0.4, 0.4, 0.45, false, false, 3.0),
    ("bench", 1.2, 0.4, 0.45, false, false, 1.5),
    ("ottoman", 0.6, 0.6, 0.42, false, false, 1.5),
    ("floor-lamp", 0.35, 0.35, 1.6, false, false, 2.5),
    ("potted-plant", 0.45, 0.45, 0.9, false, false, 3.0),
    ("trash-can", 0.35, 0.35, 0.5, false, false, 2.5),
    ("refrigerator", 0.8, 0.7, 1.8, false, false, 1.5),
    ("stove", 0.75, 0.65, 0.9, false, false, 1.0),
    ("dishwasher", 0.6, 0.6, 0.85, false, false, 0.8),
    ("washing-machine", 0.6, 0.6, 0.85, false, false, 1.0),
    ("dryer", 0.6, 0.6, 0.85, false, false, 0.6),
    ("toilet", 0.4, 0.7, 0.75, false, false, 1.5),
    ("bathtub", 1.7, 0.75, 0.55, false, false, 0.8),
    ("sink-cabinet", 0.8, 0.5, 0.85, true, false, 1.5),
    ("shower", 0.9, 0.9, 2.0, false, false, 0.6),
    ("office-chair", 0.6, 0.6, 1.05, false, false, 2.5),
    ("dining-chair", 0.45, 0.5, 0.95, false, false, 3.0),
    ("bar-stool", 0.4, 0.4, 0.75, false, false, 1.5),
    ("rocking-chair", 0.7, 0.9, 1.0, false, false, 0.5),
    ("bean-bag", 0.8, 0.8, 0.6, false, false, 0.8),
    ("piano", 1.5, 0.6, 1.2, true, false, 0.4),
    ("chest", 0.9, 0.5, 0.5, true, false, 1.0),
    ("trunk", 0.8, 0.45, 0.45, true, false, 0.5),
    ("safe", 0.5, 0.5, 0.6, true, false, 0.3),
    ("shoe-rack", 0.8, 0.3, 0.6, true, false, 1.0),
    ("coat-rack", 0.5, 0.5, 1.75, false, false, 1.0),
    ("umbrella-stand", 0.25, 0.25, 0.55, false, false, 0.5),
    ("laundry-basket", 0.5, 0.4, 0.55, false, false, 1.0),
    ("treadmill", 0.8, 1.8, 1.3, false, false, 0.3),
    ("exercise-bike", 0.55, 1.1, 1.2, false, false, 0.3),
    ("radiator", 1.0, 0.12, 0.6, false, false, 1.0),
    ("heater", 0.45, 0.25, 0.6, false, false, 0.6),
    ("fan", 0.4, 0.4, 1.2, false, false, 0.8),
    ("air-conditioner", 0.45, 0.4, 0.8, false, false, 0.4),
    ("crib", 1.3, 0.7, 0.95, false, false, 0.4),
    ("bunk-bed", 1.0, 2.0, 1.6, false, false, 0.3),
    ("high-chair", 0.55, 0.6, 1.0, false, false, 0.3),
    ("dog-bed", 0.8, 0.6, 0.25, false, false, 0.5),
    ("cat-tree", 0.5, 0.5, 1.4, false, false, 0.4),
    ("easel", 0.6, 0.6, 1.6, false, false, 0.3),
    ("standing-mirror", 0.5, 0.3, 1.6, false, false, 0.6),
    ("ladder", 0.45, 0.6, 1.5, false, false, 0.3),
    ("vacuum-cleaner", 0.3, 0.35, 1.1, false, false, 0.5),
    ("guitar", 0.4, 0.25, 1.0, false, false, 0.5),
    ("drum-kit", 1.5, 1.2, 1.0, false, false, 0.2),
    ("suitcase", 0.45, 0.3, 0.7, false, true, 0.6),
    ("fireplace", 1.4, 0.45, 1.1, true, false, 0.4),
    ("storage-box", 0.5, 0.4, 0.35, true, true, 1.0),
    ("table-lamp", 0.3, 0.3, 0.45, false, true, 3.0),
    ("book", 0.15, 0.22, 0.04, false, true, 3.0),
    ("cup", 0.09, 0.09, 0.1, false, true, 2.5),
    ("mug", 0.1, 0.1, 0.11, false, true, 2.0),
    ("vase", 0.15, 0.15, 0.3, false, true, 2.5),
    ("laptop", 0.34, 0.24, 0.03, false, true, 2.0),
    ("monitor", 0.55, 0.2, 0.45, false, true, 2.0),
    ("keyboard", 0.44, 0.14, 0.03, false, true, 1.5),
    ("plate", 0.26, 0.26, 0.03, false, true, 1.5),
    ("bowl", 0.18, 0.18, 0.08, false, true, 1.5),
    ("bottle", 0.08, 0.08, 0.3, false, true, 2.0),
    ("clock", 0.25, 0.1, 0.25, false, true, 1.0),
    ("alarm-clock", 0.12, 0.08, 0.1, false, true, 1.0),
    ("television", 1.1, 0.25, 0.7, false, true, 2.0),
    ("speaker", 0.2, 0.2, 0.35, false, true, 1.0),
    ("phone", 0.08, 0.16, 0.02, false, true, 1.0),
    ("remote", 0.05, 0.18, 0.02, false, true, 0.8),
    ("basket", 0.35, 0.25, 0.2, false, true, 1.0),
    ("candle", 0.08, 0.08, 0.15, false, true, 0.8),
    ("picture-frame", 0.25, 0.05, 0.3, false, true, 1.2),
    ("pillow", 0.5, 0.35, 0.15, false, true, 2.0),
    ("toy", 0.2, 0.15, 0.2, false, true, 1.0),
    ("teapot", 0.22, 0.16, 0.18, false, true, 0.6),
    ("kettle", 0.22, 0.18, 0.25, false, true, 0.8),
    ("toaster", 0.28, 0.18, 0.2, false, true, 0.6),
    ("microwave", 0.5, 0.38, 0.3, false, true, 1.0),
    ("coffee-machine", 0.25, 0.35, 0.38, false, true, 0.7),
    ("jar", 0.12, 0.12, 0.18, false, true, 0.8),
    ("tablet", 0.17, 0.25, 0.01, false, true, 0.6),
    ("pen-holder", 0.08, 0.08, 0.11, false, true, 0.5),
    ("statue", 0.15, 0.15, 0.4, false, true, 0.5),
    ("globe", 0.3, 0.3, 0.4, false, true, 0.4),
    ("aquarium", 0.6, 0.3, 0.4, false, true, 0.3),
    ("printer", 0.45, 0.4, 0.25, false, true, 0.6),
    ("fruit-bowl", 0.3, 0.3, 0.12, false, true, 0.8),
    ("tissue-box", 0.24, 0.12, 0.1, false, true, 0.6),
    ("houseplant", 0.2, 0.2, 0.35, false, true, 1.5),
    ("soap-dispenser", 0.07, 0.07, 0.18, false, true, 0.5),
    ("towel", 0.4, 0.3, 0.06, false, true, 0.8),
    ("headphones", 0.18, 0.2, 0.08, false, true, 0.5),
];

impl Default for Catalog {
    fn default() -> Self {
        Catalog {
            categories: DEFAULT
                .iter()
                .map(|&(name, w, d, h, surface, small, weight)| CategorySpec {
                    name: name.to_string(),
                    size: [w, d, h],
                    surface,
                    small,
                    weight,
                })
                .collect(),
        }
    }
}

impl Catalog {
    /// Loads a catalog from a TOML file with one `[[category]]` table per entry.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let catalog: Catalog = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn validate(&self) -> Result<()> {
        if self.categories.is_empty() {
            return Err(Error::Config("catalog has no categories".into()));
        }
        for c in &self.categories {
            if c.name.is_empty() || c.name.chars().any(|ch| ch.is_whitespace() || ch == '(' || ch == ')') {
                return Err(Error::Config(format!("category name `{}` must be a single token", c.name)));
            }
            if c.size.iter().any(|&s| !(s > 0.0)) || !(c.weight > 0.0) {
                return Err(Error::Config(format!("category `{}` needs positive size and weight", c.name)));
            }
        }
        let mut names: Vec<&str> = self.categories.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.categories.len() {
            return Err(Error::Config("duplicate category names".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.categories[index].name
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_catalog_has_108_unique_categories() {
        let c = Catalog::default();
        assert_eq!(c.len(), 108);
        c.validate().unwrap();
        assert!(c.categories.iter().any(|c| c.surface));
        assert!(c.categories.iter().any(|c| c.small));
    }
}
