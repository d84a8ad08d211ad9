//! Label space: anatomical regions with a strict transit order, landmark
//! labels gated by neighbouring regions, and free-standing pathology labels.
//!
//! The taxonomy is read from a TOML file with three sections:
//!
//! ```toml
//! region_order = [0, 1]          # proximal -> distal
//!
//! [[classes]]
//! id = 0
//! name = "stomach"
//! kind = "region"                # region | landmark | pathology
//!
//! [[landmark_rules]]
//! landmark = 2
//! valid_regions = [0, 1]
//! tolerance_frames = 50
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ClassId = usize;

const DEFAULT_TAXONOMY: &str = include_str!("../assets/default_taxonomy.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassKind {
    Region,
    Landmark,
    Pathology,
}

impl fmt::Display for ClassKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassKind::Region => f.write_str("region"),
            ClassKind::Landmark => f.write_str("landmark"),
            ClassKind::Pathology => f.write_str("pathology"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDef {
    pub id: ClassId,
    pub name: String,
    pub kind: ClassKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LandmarkRule {
    pub valid_regions: BTreeSet<ClassId>,
    pub tolerance_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct RuleEntry {
    landmark: ClassId,
    valid_regions: Vec<ClassId>,
    tolerance_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct TaxonomyFile {
    region_order: Vec<ClassId>,
    classes: Vec<ClassDef>,
    #[serde(default)]
    landmark_rules: Vec<RuleEntry>,
}

/// Validated, immutable label space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSpace {
    classes: Vec<ClassDef>,
    region_order: Vec<ClassId>,
    landmark_rules: BTreeMap<ClassId, LandmarkRule>,
    rank: Vec<Option<usize>>,
}

impl LabelSpace {
    /// Builds a label space, checking every structural invariant.
    pub fn new(
        mut classes: Vec<ClassDef>,
        region_order: Vec<ClassId>,
        landmark_rules: BTreeMap<ClassId, LandmarkRule>,
    ) -> Result<Self> {
        classes.sort_by_key(|c| c.id);
        for (i, w) in classes.windows(2).enumerate() {
            if w[0].id == w[1].id {
                return Err(Error::taxonomy(
                    format!("classes[{}].id", i + 1),
                    format!("duplicate class id {}", w[1].id),
                ));
            }
        }
        for (expected, class) in classes.iter().enumerate() {
            if class.id != expected {
                return Err(Error::taxonomy(
                    "classes.id",
                    format!("ids must be dense 0..C-1; missing id {expected}"),
                ));
            }
        }
        let n = classes.len();

        if region_order.is_empty() {
            return Err(Error::taxonomy("region_order", "at least one region is required"));
        }
        let mut rank = vec![None; n];
        for (r, &id) in region_order.iter().enumerate() {
            let class = classes.get(id).ok_or_else(|| {
                Error::taxonomy("region_order", format!("unknown class id {id}"))
            })?;
            if class.kind != ClassKind::Region {
                return Err(Error::taxonomy(
                    "region_order",
                    format!("class {id} ({}) is a {}, not a region", class.name, class.kind),
                ));
            }
            if rank[id].is_some() {
                return Err(Error::taxonomy(
                    "region_order",
                    format!("region {id} listed twice"),
                ));
            }
            rank[id] = Some(r);
        }
        if let Some(missing) = classes
            .iter()
            .find(|c| c.kind == ClassKind::Region && rank[c.id].is_none())
        {
            return Err(Error::taxonomy(
                "region_order",
                format!("region {} ({}) missing from the order", missing.id, missing.name),
            ));
        }

        for (&landmark, rule) in &landmark_rules {
            let field = format!("landmark_rules[landmark={landmark}]");
            match classes.get(landmark) {
                Some(c) if c.kind == ClassKind::Landmark => {}
                Some(c) => {
                    return Err(Error::taxonomy(
                        field,
                        format!("class {landmark} ({}) is a {}, not a landmark", c.name, c.kind),
                    ))
                }
                None => return Err(Error::taxonomy(field, format!("unknown class id {landmark}"))),
            }
            if rule.valid_regions.is_empty() {
                return Err(Error::taxonomy(field, "valid_regions is empty"));
            }
            for &region in &rule.valid_regions {
                if classes.get(region).map(|c| c.kind) != Some(ClassKind::Region) {
                    return Err(Error::taxonomy(
                        format!("{field}.valid_regions"),
                        format!("landmark {landmark} references unknown region {region}"),
                    ));
                }
            }
        }

        Ok(Self {
            classes,
            region_order,
            landmark_rules,
            rank,
        })
    }

    /// The repository's default capsule-endoscopy taxonomy.
    pub fn default_capsule() -> Self {
        Self::from_toml_str(DEFAULT_TAXONOMY).expect("bundled taxonomy is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: TaxonomyFile =
            toml::from_str(text).map_err(|e| Error::taxonomy("file", e.to_string()))?;
        let mut rules = BTreeMap::new();
        for (i, entry) in file.landmark_rules.into_iter().enumerate() {
            let previous = rules.insert(
                entry.landmark,
                LandmarkRule {
                    valid_regions: entry.valid_regions.into_iter().collect(),
                    tolerance_frames: entry.tolerance_frames,
                },
            );
            if previous.is_some() {
                return Err(Error::taxonomy(
                    format!("landmark_rules[{i}].landmark"),
                    format!("duplicate rule for landmark {}", entry.landmark),
                ));
            }
        }
        Self::new(file.classes, file.region_order, rules)
    }

    pub fn to_toml_string(&self) -> String {
        let file = TaxonomyFile {
            region_order: self.region_order.clone(),
            classes: self.classes.clone(),
            landmark_rules: self
                .landmark_rules
                .iter()
                .map(|(&landmark, rule)| RuleEntry {
                    landmark,
                    valid_regions: rule.valid_regions.iter().copied().collect(),
                    tolerance_frames: rule.tolerance_frames,
                })
                .collect(),
        };
        toml::to_string(&file).expect("taxonomy serializes")
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[ClassDef] {
        &self.classes
    }

    pub fn class(&self, id: ClassId) -> Option<&ClassDef> {
        self.classes.get(id)
    }

    pub fn kind(&self, id: ClassId) -> ClassKind {
        self.classes[id].kind
    }

    /// Region class ids, proximal first.
    pub fn region_order(&self) -> &[ClassId] {
        &self.region_order
    }

    pub fn n_regions(&self) -> usize {
        self.region_order.len()
    }

    pub fn landmark_rules(&self) -> &BTreeMap<ClassId, LandmarkRule> {
        &self.landmark_rules
    }

    pub fn ids_of_kind(&self, kind: ClassKind) -> impl Iterator<Item = ClassId> + '_ {
        self.classes.iter().filter(move |c| c.kind == kind).map(|c| c.id)
    }

    pub fn id_by_name(&self, name: &str) -> Option<ClassId> {
        self.classes.iter().find(|c| c.name == name).map(|c| c.id)
    }

    /// Position of a region in the transit order; `None` for non-regions.
    pub fn region_rank(&self, id: ClassId) -> Result<Option<usize>> {
        self.rank.get(id).copied().ok_or_else(|| {
            Error::InvalidArgument(format!(
                "class id {id} out of range (C = {})",
                self.classes.len()
            ))
        })
    }
}

pub fn load_taxonomy(path: impl AsRef<Path>) -> Result<LabelSpace> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    LabelSpace::from_toml_str(&text)
}

pub fn save_taxonomy(space: &LabelSpace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, space.to_toml_string()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_taxonomy_shape() {
        let space = LabelSpace::default_capsule();
        assert_eq!(space.n_regions(), 5);
        assert!(space.ids_of_kind(ClassKind::Landmark).count() >= 2);
        assert!(space.ids_of_kind(ClassKind::Pathology).count() >= 3);
        let order: Vec<_> = space
            .region_order()
            .iter()
            .map(|&id| space.class(id).unwrap().name.as_str())
            .collect();
        assert_eq!(order, ["mouth", "esophagus", "stomach", "small_intestine", "colon"]);
    }

    #[test]
    fn region_rank_examples() {
        let space = LabelSpace::default_capsule();
        let first = space.region_order()[0];
        let last = *space.region_order().last().unwrap();
        assert_eq!(space.region_rank(first).unwrap(), Some(0));
        assert_eq!(space.region_rank(last).unwrap(), Some(4));
        let pathology = space.ids_of_kind(ClassKind::Pathology).next().unwrap();
        assert_eq!(space.region_rank(pathology).unwrap(), None);
        assert!(space.region_rank(space.n_classes()).is_err());
    }

    #[test]
    fn minimal_single_region() {
        let text = r#"
            region_order = [0]
            [[classes]]
            id = 0
            name = "gut"
            kind = "region"
        "#;
        let space = LabelSpace::from_toml_str(text).unwrap();
        assert_eq!(space.n_classes(), 1);
        assert_eq!(space.region_rank(0).unwrap(), Some(0));
    }

    #[test]
    fn landmark_with_unknown_region_is_named() {
        let text = r#"
            region_order = [0]
            [[classes]]
            id = 0
            name = "gut"
            kind = "region"
            [[classes]]
            id = 1
            name = "valve"
            kind = "landmark"
            [[landmark_rules]]
            landmark = 1
            valid_regions = [99]
            tolerance_frames = 3
        "#;
        let err = LabelSpace::from_toml_str(text).unwrap_err().to_string();
        assert!(err.contains("landmark 1"), "{err}");
        assert!(err.contains("99"), "{err}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = r#"
            region_order = [0]
            [[classes]]
            id = 0
            name = "a"
            kind = "region"
            [[classes]]
            id = 0
            name = "b"
            kind = "pathology"
        "#;
        let err = LabelSpace::from_toml_str(text).unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err}");
    }

    #[test]
    fn empty_region_list_rejected() {
        let text = r#"
            region_order = []
            [[classes]]
            id = 0
            name = "a"
            kind = "pathology"
        "#;
        let err = LabelSpace::from_toml_str(text).unwrap_err().to_string();
        assert!(err.contains("region_order"), "{err}");
    }

    #[test]
    fn non_region_in_order_rejected() {
        let text = r#"
            region_order = [0, 1]
            [[classes]]
            id = 0
            name = "a"
            kind = "region"
            [[classes]]
            id = 1
            name = "b"
            kind = "pathology"
        "#;
        assert!(LabelSpace::from_toml_str(text).is_err());
    }

    #[test]
    fn sparse_ids_rejected() {
        let text = r#"
            region_order = [0]
            [[classes]]
            id = 0
            name = "a"
            kind = "region"
            [[classes]]
            id = 2
            name = "b"
            kind = "pathology"
        "#;
        let err = LabelSpace::from_toml_str(text).unwrap_err().to_string();
        assert!(err.contains("dense"), "{err}");
    }

    #[test]
    fn toml_round_trip() {
        let space = LabelSpace::default_capsule();
        let again = LabelSpace::from_toml_str(&space.to_toml_string()).unwrap();
        assert_eq!(space, again);
    }
}
