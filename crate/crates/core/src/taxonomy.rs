//! Class taxonomy: ids, names, groups and the aquatic subset.
//!
//! A taxonomy file is TOML:
//!
//! ```toml
//! ignore_id = 255
//!
//! [[class]]
//! id = 0
//! name = "sea"
//! group = "natural"      # artificial | natural | general
//! aquatic = true
//! ```
//!
//! The aquatic flag decides which path of the network predicts a class and
//! which classes enter A-acc / A-mIoU. It is deliberately independent of the
//! group (`canal` is artificial and aquatic).

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The taxonomy shipped with the crate (56 classes).
pub const ATLANTIS_TOML: &str = include_str!("../data/atlantis.toml");

pub const DEFAULT_IGNORE_ID: u8 = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Artificial,
    Natural,
    General,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::Artificial => "artificial",
            Group::Natural => "natural",
            Group::General => "general",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDef {
    pub id: u8,
    pub name: String,
    pub group: Group,
    pub aquatic: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTaxonomy")]
pub struct ClassTaxonomy {
    ignore_id: u8,
    #[serde(rename = "class")]
    classes: Vec<ClassDef>,
}

#[derive(Deserialize)]
struct RawTaxonomy {
    #[serde(default = "default_ignore")]
    ignore_id: i64,
    #[serde(default, rename = "class")]
    classes: Vec<RawClass>,
}

#[derive(Deserialize)]
struct RawClass {
    id: i64,
    name: String,
    group: Group,
    aquatic: bool,
}

impl TryFrom<RawTaxonomy> for ClassTaxonomy {
    type Error = Error;

    fn try_from(raw: RawTaxonomy) -> Result<Self> {
        let ignore_id = u8::try_from(raw.ignore_id)
            .map_err(|_| Error::MalformedTaxonomy(format!("ignore_id {} does not fit in 8 bits", raw.ignore_id)))?;
        let mut classes = Vec::with_capacity(raw.classes.len());
        for c in raw.classes {
            let id = u8::try_from(c.id).map_err(|_| Error::MalformedTaxonomy(format!("class id {} out of range", c.id)))?;
            classes.push(ClassDef {
                id,
                name: c.name,
                group: c.group,
                aquatic: c.aquatic,
            });
        }
        Self::new(classes, ignore_id)
    }
}

fn default_ignore() -> i64 {
    DEFAULT_IGNORE_ID as i64
}

impl ClassTaxonomy {
    /// The shipped ATLANTIS label space.
    pub fn atlantis() -> Self {
        Self::from_toml_str(ATLANTIS_TOML).expect("shipped taxonomy is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawTaxonomy = toml::from_str(text).map_err(|e| Error::MalformedTaxonomy(e.to_string()))?;
        Self::try_from(raw)
    }

    /// Validates and orders a class list.
    pub fn new(mut classes: Vec<ClassDef>, ignore_id: u8) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::MalformedTaxonomy("no classes".into()));
        }
        let mut ids = HashSet::new();
        let mut names = HashSet::new();
        for c in &classes {
            if !ids.insert(c.id) {
                return Err(Error::MalformedTaxonomy(format!("duplicate id {}", c.id)));
            }
            if c.name.trim().is_empty() || c.name != c.name.to_lowercase() || c.name.trim() != c.name {
                return Err(Error::MalformedTaxonomy(format!("class name {:?} is not canonical lowercase", c.name)));
            }
            if !names.insert(c.name.clone()) {
                return Err(Error::MalformedTaxonomy(format!("duplicate name {:?}", c.name)));
            }
            if c.id == ignore_id {
                return Err(Error::MalformedTaxonomy(format!("class {:?} uses ignore_id {ignore_id}", c.name)));
            }
        }
        classes.sort_by_key(|c| c.id);
        if let Some((pos, c)) = classes.iter().enumerate().find(|(i, c)| c.id as usize != *i) {
            return Err(Error::MalformedTaxonomy(format!("ids are not contiguous: expected {pos}, found {}", c.id)));
        }
        if (ignore_id as usize) < classes.len() {
            return Err(Error::MalformedTaxonomy(format!("ignore_id {ignore_id} collides with the class range")));
        }
        Ok(Self { classes, ignore_id })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("taxonomy serializes")
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn ignore_id(&self) -> u8 {
        self.ignore_id
    }

    pub fn classes(&self) -> &[ClassDef] {
        &self.classes
    }

    pub fn class(&self, id: u8) -> Option<&ClassDef> {
        self.classes.get(id as usize)
    }

    pub fn name(&self, id: u8) -> &str {
        self.classes.get(id as usize).map_or("?", |c| c.name.as_str())
    }

    pub fn id_of(&self, name: &str) -> Option<u8> {
        self.classes.iter().find(|c| c.name == name).map(|c| c.id)
    }

    pub fn is_aquatic(&self, id: u8) -> bool {
        self.class(id).is_some_and(|c| c.aquatic)
    }

    pub fn aquatic_ids(&self) -> Vec<u8> {
        self.classes.iter().filter(|c| c.aquatic).map(|c| c.id).collect()
    }

    pub fn group_ids(&self, group: Group) -> Vec<u8> {
        self.classes.iter().filter(|c| c.group == group).map(|c| c.id).collect()
    }

    /// Splits the ids into the aquatic and non-aquatic paths.
    pub fn path_split(&self) -> PathSplit {
        let (aquatic, other): (Vec<_>, Vec<_>) = self.classes.iter().partition(|c| c.aquatic);
        PathSplit {
            aquatic: aquatic.iter().map(|c| c.id).collect(),
            nonaquatic: other.iter().map(|c| c.id).collect(),
        }
    }
}

/// Channel order of the two network paths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathSplit {
    pub aquatic: Vec<u8>,
    pub nonaquatic: Vec<u8>,
}

impl PathSplit {
    /// Class ids in the order of `aquatic ++ nonaquatic`.
    pub fn concatenated(&self) -> Vec<u8> {
        self.aquatic.iter().chain(&self.nonaquatic).copied().collect()
    }

    /// `perm[c]` is the position of class `c` in [`PathSplit::concatenated`].
    /// Gathering channels of the concatenated map with `perm` yields class-id order.
    pub fn reassembly(&self) -> Vec<usize> {
        let concat = self.concatenated();
        let mut perm = vec![0; concat.len()];
        for (pos, &id) in concat.iter().enumerate() {
            perm[id as usize] = pos;
        }
        perm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(aquatic: &[u8], k: u8) -> ClassTaxonomy {
        let classes = (0..k)
            .map(|id| ClassDef {
                id,
                name: format!("c{id}"),
                group: Group::General,
                aquatic: aquatic.contains(&id),
            })
            .collect();
        ClassTaxonomy::new(classes, 255).unwrap()
    }

    #[test]
    fn shipped_taxonomy_counts() {
        let t = ClassTaxonomy::atlantis();
        assert_eq!(t.num_classes(), 56);
        assert_eq!(t.aquatic_ids().len(), 17);
        assert_eq!(t.group_ids(Group::Artificial).len(), 17);
        assert_eq!(t.group_ids(Group::Natural).len(), 18);
        assert_eq!(t.group_ids(Group::General).len(), 21);
        assert_eq!(t.ignore_id(), 255);
        let canal = t.class(t.id_of("canal").unwrap()).unwrap();
        assert!(canal.aquatic && canal.group == Group::Artificial);
        let aquatic: Vec<&str> = t.aquatic_ids().iter().map(|&i| t.name(i)).collect();
        let mut expected = vec![
            "canal", "ditch", "fjord", "flood", "glaciers", "hot spring", "lake", "puddle", "rapids", "reservoir", "river",
            "river delta", "sea", "snow", "swimming pool", "waterfall", "wetland",
        ];
        let mut got = aquatic.clone();
        got.sort();
        expected.sort();
        assert_eq!(got, expected);
    }

    #[test]
    fn loading_twice_is_identical() {
        assert_eq!(ClassTaxonomy::atlantis(), ClassTaxonomy::atlantis());
        let t = ClassTaxonomy::atlantis();
        assert_eq!(ClassTaxonomy::from_toml_str(&t.to_toml_string()).unwrap(), t);
    }

    #[test]
    fn two_class_toy_file() {
        let t = ClassTaxonomy::from_toml_str(
            r#"
            [[class]]
            id = 0
            name = "water"
            group = "natural"
            aquatic = true
            [[class]]
            id = 1
            name = "land"
            group = "general"
            aquatic = false
            "#,
        )
        .unwrap();
        assert_eq!(t.num_classes(), 2);
        assert_eq!(t.aquatic_ids(), vec![0]);
        assert_eq!(t.ignore_id(), 255);
    }

    #[test]
    fn rejects_malformed_files() {
        let dup = r#"
            [[class]]
            id = 3
            name = "a"
            group = "natural"
            aquatic = true
            [[class]]
            id = 3
            name = "b"
            group = "natural"
            aquatic = false
        "#;
        assert!(matches!(ClassTaxonomy::from_toml_str(dup), Err(Error::MalformedTaxonomy(_))));
        let gap = r#"
            [[class]]
            id = 0
            name = "a"
            group = "natural"
            aquatic = true
            [[class]]
            id = 2
            name = "b"
            group = "natural"
            aquatic = false
        "#;
        assert!(matches!(ClassTaxonomy::from_toml_str(gap), Err(Error::MalformedTaxonomy(_))));
        let collide = r#"
            ignore_id = 0
            [[class]]
            id = 0
            name = "a"
            group = "natural"
            aquatic = true
        "#;
        assert!(matches!(ClassTaxonomy::from_toml_str(collide), Err(Error::MalformedTaxonomy(_))));
        let dup_name = r#"
            [[class]]
            id = 0
            name = "a"
            group = "natural"
            aquatic = true
            [[class]]
            id = 1
            name = "a"
            group = "general"
            aquatic = false
        "#;
        assert!(matches!(ClassTaxonomy::from_toml_str(dup_name), Err(Error::MalformedTaxonomy(_))));
    }

    #[test]
    fn atlantis_split_lengths() {
        let s = ClassTaxonomy::atlantis().path_split();
        assert_eq!((s.aquatic.len(), s.nonaquatic.len()), (17, 39));
    }

    #[test]
    fn degenerate_all_aquatic_split() {
        let s = toy(&[0, 1, 2], 3).path_split();
        assert_eq!(s.aquatic, vec![0, 1, 2]);
        assert!(s.nonaquatic.is_empty());
    }

    #[test]
    fn five_class_split_and_reassembly() {
        let s = toy(&[1, 4], 5).path_split();
        assert_eq!(s.aquatic, vec![1, 4]);
        assert_eq!(s.nonaquatic, vec![0, 2, 3]);
        // concatenated order is [1, 4, 0, 2, 3]; class 0 sits at position 2, etc.
        assert_eq!(s.reassembly(), vec![2, 0, 3, 4, 1]);
        let concat = s.concatenated();
        let restored: Vec<u8> = s.reassembly().iter().map(|&p| concat[p]).collect();
        assert_eq!(restored, vec![0, 1, 2, 3, 4]);
    }

    proptest::proptest! {
        #[test]
        fn split_is_a_partition(mask in proptest::collection::vec(proptest::bool::ANY, 1..40)) {
            let aquatic: Vec<u8> = mask.iter().enumerate().filter(|(_, &a)| a).map(|(i, _)| i as u8).collect();
            let t = toy(&aquatic, mask.len() as u8);
            let s = t.path_split();
            let mut all = s.concatenated();
            proptest::prop_assert!(s.aquatic.windows(2).all(|w| w[0] < w[1]));
            proptest::prop_assert!(s.nonaquatic.windows(2).all(|w| w[0] < w[1]));
            let concat = all.clone();
            let restored: Vec<u8> = s.reassembly().iter().map(|&p| concat[p]).collect();
            proptest::prop_assert_eq!(restored, (0..mask.len() as u8).collect::<Vec<_>>());
            all.sort();
            proptest::prop_assert_eq!(all, (0..mask.len() as u8).collect::<Vec<_>>());
        }
    }
}
