//! Three-level label tree.
//!
//! Levels are numbered 1 (lineage) to 3 (leaf). Node indices are assigned per
//! level in declaration order, so the same config text always yields the same
//! indices and the same digest.
//!
//! Config grammar (line oriented, `#` starts a comment):
//!
//! ```text
//! leaves = 13            # optional; checked against the level3 section
//! [level1]
//! Myeloid
//! [level2]
//! mature_granulocyte -> Myeloid
//! [level3]
//! SNE -> mature_granulocyte
//! ```
//!
//! Names are unique across the whole tree.

use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const LEVELS: usize = 3;

/// The taxonomy shipped with the crate.
pub const DEFAULT_TAXONOMY: &str = include_str!("../data/default_taxonomy.txt");

/// Position of one sample in the tree: a node index for every level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LabelPath {
    pub l1: usize,
    pub l2: usize,
    pub l3: usize,
}

impl LabelPath {
    /// Node index at `level` (1..=3).
    pub fn at(&self, level: usize) -> usize {
        match level {
            1 => self.l1,
            2 => self.l2,
            3 => self.l3,
            _ => panic!("level {level} out of range"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    names: [Vec<String>; LEVELS],
    // parents[0]: level-2 node -> level-1 node; parents[1]: leaf -> level-2 node
    parents: [Vec<usize>; 2],
    children: [Vec<Vec<usize>>; 2],
    digest: [u8; 32],
}

struct Entry {
    line: usize,
    name: String,
    parent: Option<String>,
}

impl Taxonomy {
    /// Parse and validate a taxonomy config.
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: [Option<Vec<Entry>>; LEVELS] = [None, None, None];
        let mut current: Option<usize> = None;
        let mut declared_leaves: Option<usize> = None;

        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |msg: &str| Error::TaxonomySyntax {
                line: line_no,
                msg: msg.to_string(),
            };

            if let Some(header) = line.strip_prefix('[') {
                let header = header
                    .strip_suffix(']')
                    .ok_or_else(|| syntax("unterminated section header"))?
                    .trim();
                let level = match header {
                    "level1" => 0,
                    "level2" => 1,
                    "level3" => 2,
                    _ => return Err(syntax(&format!("unknown section [{header}]"))),
                };
                if sections[level].is_some() {
                    return Err(syntax(&format!("section [{header}] repeated")));
                }
                sections[level] = Some(Vec::new());
                current = Some(level);
                continue;
            }

            let Some(level) = current else {
                let (key, value) = line
                    .split_once('=')
                    .ok_or_else(|| syntax("expected `leaves = N` or a section header"))?;
                if key.trim() != "leaves" {
                    return Err(syntax(&format!("unknown key {}", key.trim())));
                }
                let n = value
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| syntax("leaf count must be a non-negative integer"))?;
                declared_leaves = Some(n);
                continue;
            };

            let (name, parent) = match line.split_once("->") {
                Some((n, p)) => (n.trim(), Some(p.trim())),
                None => (line, None),
            };
            if name.is_empty() {
                return Err(syntax("empty node name"));
            }
            if matches!(parent, Some("")) {
                return Err(syntax("empty parent name"));
            }
            if level == 0 && parent.is_some() {
                return Err(syntax("level1 nodes take no parent"));
            }
            sections[level].as_mut().unwrap().push(Entry {
                line: line_no,
                name: name.to_string(),
                parent: parent.map(str::to_string),
            });
        }

        let mut levels: Vec<Vec<Entry>> = Vec::with_capacity(LEVELS);
        for (i, s) in sections.into_iter().enumerate() {
            match s {
                Some(entries) if !entries.is_empty() => levels.push(entries),
                _ => {
                    return Err(Error::TaxonomySyntax {
                        line: 0,
                        msg: format!("section [level{}] missing or empty", i + 1),
                    })
                }
            }
        }

        // global name table: name -> (level, index)
        let mut lookup: HashMap<&str, (usize, usize)> = HashMap::new();
        for (level, entries) in levels.iter().enumerate() {
            for (idx, e) in entries.iter().enumerate() {
                if lookup.insert(e.name.as_str(), (level, idx)).is_some() {
                    return Err(Error::DuplicateName(e.name.clone()));
                }
            }
        }
        for level in levels.iter() {
            if level.len() > u16::MAX as usize {
                return Err(Error::TaxonomySyntax {
                    line: level[0].line,
                    msg: "too many nodes in one level".into(),
                });
            }
        }

        let mut parents: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        for level in 1..LEVELS {
            for e in &levels[level] {
                let Some(parent) = &e.parent else {
                    return Err(Error::OrphanNode(e.name.clone()));
                };
                match lookup.get(parent.as_str()) {
                    None => {
                        return Err(Error::UnknownParent {
                            node: e.name.clone(),
                            parent: parent.clone(),
                        })
                    }
                    Some(&(pl, pi)) if pl + 1 == level => parents[level - 1].push(pi),
                    Some(_) => {
                        return Err(Error::WrongParentLevel {
                            node: e.name.clone(),
                            parent: parent.clone(),
                        })
                    }
                }
            }
        }

        if let Some(declared) = declared_leaves {
            if declared != levels[2].len() {
                return Err(Error::LeafCountMismatch {
                    declared,
                    found: levels[2].len(),
                });
            }
        }

        let mut children: [Vec<Vec<usize>>; 2] = [
            vec![Vec::new(); levels[0].len()],
            vec![Vec::new(); levels[1].len()],
        ];
        for (p, map) in parents.iter().enumerate() {
            for (child, &parent) in map.iter().enumerate() {
                children[p][parent].push(child);
            }
        }
        for (p, lists) in children.iter().enumerate() {
            if let Some(idx) = lists.iter().position(Vec::is_empty) {
                return Err(Error::Childless {
                    node: levels[p][idx].name.clone(),
                    level: p + 1,
                });
            }
        }

        let names = [0, 1, 2].map(|l| levels[l].iter().map(|e| e.name.clone()).collect());
        let digest = compute_digest(&names, &parents);
        Ok(Self {
            names,
            parents,
            children,
            digest,
        })
    }

    pub fn level_size(&self, level: usize) -> Result<usize> {
        check_level(level)?;
        Ok(self.names[level - 1].len())
    }

    pub fn leaf_count(&self) -> usize {
        self.names[2].len()
    }

    pub fn names(&self, level: usize) -> Result<&[String]> {
        check_level(level)?;
        Ok(&self.names[level - 1])
    }

    pub fn name(&self, level: usize, index: usize) -> Result<&str> {
        self.names(level)?
            .get(index)
            .map(String::as_str)
            .ok_or(Error::UnknownNode { level, index })
    }

    pub fn leaf_name(&self, leaf: usize) -> Result<&str> {
        self.name(3, leaf)
    }

    /// Index of the node called `name` at `level`, if any.
    pub fn find(&self, level: usize, name: &str) -> Option<usize> {
        self.names(level).ok()?.iter().position(|n| n == name)
    }

    pub fn leaf_index(&self, name: &str) -> Result<usize> {
        self.find(3, name)
            .ok_or_else(|| Error::UnknownLeaf(name.to_string()))
    }

    /// Parent (at `level - 1`) of node `index` at `level` (2 or 3).
    pub fn parent_of(&self, level: usize, index: usize) -> Result<usize> {
        if !(2..=3).contains(&level) {
            return Err(Error::InvalidLevel(level));
        }
        self.parents[level - 2]
            .get(index)
            .copied()
            .ok_or(Error::UnknownNode { level, index })
    }

    /// Nodes at `level` (2 or 3) whose parent is `parent` at `level - 1`.
    pub fn children(&self, level: usize, parent: usize) -> Result<&[usize]> {
        if !(2..=3).contains(&level) {
            return Err(Error::InvalidLevel(level));
        }
        self.children[level - 2]
            .get(parent)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownNode {
                level: level - 1,
                index: parent,
            })
    }

    /// The level-`level` node on the root path of `leaf`.
    pub fn ancestor(&self, leaf: usize, level: usize) -> Result<usize> {
        check_level(level)?;
        if leaf >= self.leaf_count() {
            return Err(Error::UnknownNode {
                level: 3,
                index: leaf,
            });
        }
        let mid = self.parents[1][leaf];
        Ok(match level {
            3 => leaf,
            2 => mid,
            _ => self.parents[0][mid],
        })
    }

    pub fn path(&self, leaf: usize) -> Result<LabelPath> {
        Ok(LabelPath {
            l1: self.ancestor(leaf, 1)?,
            l2: self.ancestor(leaf, 2)?,
            l3: leaf,
        })
    }

    /// Check that `path` is a root-to-leaf chain in this tree.
    pub fn validate_path(&self, path: LabelPath) -> Result<()> {
        match self.path(path.l3) {
            Ok(p) if p == path => Ok(()),
            _ => Err(Error::InvalidPath {
                l1: path.l1,
                l2: path.l2,
                l3: path.l3,
            }),
        }
    }

    /// SHA-256 over the canonical node/parent listing.
    pub fn digest(&self) -> [u8; 32] {
        self.digest
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(self.digest)
    }
}

impl Default for Taxonomy {
    fn default() -> Self {
        Self::parse(DEFAULT_TAXONOMY).expect("shipped taxonomy is valid")
    }
}

fn check_level(level: usize) -> Result<()> {
    if (1..=LEVELS).contains(&level) {
        Ok(())
    } else {
        Err(Error::InvalidLevel(level))
    }
}

fn compute_digest(names: &[Vec<String>; LEVELS], parents: &[Vec<usize>; 2]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"hierknn-taxonomy-v1\n");
    for (level, level_names) in names.iter().enumerate() {
        h.update(format!("L{}\n", level + 1).as_bytes());
        for (i, name) in level_names.iter().enumerate() {
            let parent = if level == 0 {
                String::from("-")
            } else {
                parents[level - 1][i].to_string()
            };
            h.update(format!("{name}\t{parent}\n").as_bytes());
        }
    }
    h.finalize().into()
}
