//! Data model for users, tops and bottoms, plus the line-delimited file
//! formats they are stored in.
//!
//! Item vectors follow a fixed layout: one block per attribute group (in
//! schema order), then the one-hot category block, then the color histogram.

mod io;
mod sampling;
mod synth;

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{dataset_digest, load_dataset, write_dataset};
pub use sampling::{sample_quadruplets, split_dataset, train_count, Quadruplet};
pub use synth::{generate_synthetic, PlantedScorer, PlantedTruth, SynthSpec};

pub const DEFAULT_COLOR_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeGroup {
    pub name: String,
    pub elements: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub groups: Vec<AttributeGroup>,
    pub color_dim: usize,
    pub category_dim: usize,
}

/// Which part of the attribute vector a dimension belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttrLabel {
    pub group: String,
    pub element: String,
}

impl AttributeSchema {
    /// The 2048-wide layout: five attribute groups of 400 elements and a
    /// 40-way category block fill the 2040 learned dimensions, followed by
    /// 8 color bins.
    pub fn default_layout() -> Self {
        let names = ["texture", "style", "fabric", "shape", "part"];
        let groups = names
            .iter()
            .map(|name| AttributeGroup {
                name: name.to_string(),
                elements: (0..400).map(|e| format!("{name}_{e}")).collect(),
            })
            .collect();
        AttributeSchema {
            groups,
            color_dim: DEFAULT_COLOR_DIM,
            category_dim: 40,
        }
    }

    pub fn element_dim(&self) -> usize {
        self.groups.iter().map(|g| g.elements.len()).sum()
    }

    /// Dimensions produced by the attribute networks (groups + category).
    pub fn learned_dim(&self) -> usize {
        self.element_dim() + self.category_dim
    }

    pub fn total_dim(&self) -> usize {
        self.learned_dim() + self.color_dim
    }

    pub fn category_offset(&self) -> usize {
        self.element_dim()
    }

    pub fn color_offset(&self) -> usize {
        self.learned_dim()
    }

    /// Start offset of each group's block.
    pub fn group_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.groups.len());
        let mut acc = 0;
        for g in &self.groups {
            offsets.push(acc);
            acc += g.elements.len();
        }
        offsets
    }

    pub fn label(&self, dim: usize) -> Option<AttrLabel> {
        let mut acc = 0;
        for g in &self.groups {
            if dim < acc + g.elements.len() {
                return Some(AttrLabel {
                    group: g.name.clone(),
                    element: g.elements[dim - acc].clone(),
                });
            }
            acc += g.elements.len();
        }
        if dim < acc + self.category_dim {
            return Some(AttrLabel {
                group: "category".into(),
                element: format!("category_{}", dim - acc),
            });
        }
        acc += self.category_dim;
        if dim < acc + self.color_dim {
            return Some(AttrLabel {
                group: "color".into(),
                element: format!("color_{}", dim - acc),
            });
        }
        None
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for g in &self.groups {
            if !names.insert(g.name.as_str()) {
                return Err(Error::InvalidData(format!(
                    "duplicate attribute group {:?}",
                    g.name
                )));
            }
            let mut elems = HashSet::new();
            for e in &g.elements {
                if !elems.insert(e.as_str()) {
                    return Err(Error::InvalidData(format!(
                        "duplicate element {e:?} in group {:?}",
                        g.name
                    )));
                }
            }
        }
        if self.total_dim() == 0 {
            return Err(Error::InvalidData("schema has zero dimensions".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemKind {
    Top,
    Bottom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: String,
    pub kind: ItemKind,
    pub category_index: usize,
    pub attr_vec: Vec<f64>,
    pub tokens: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserHistory {
    pub id: String,
    pub outfits: Vec<(String, String)>,
}

/// An outfit resolved to positions in [`Dataset::tops`] / [`Dataset::bottoms`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Outfit {
    pub top: usize,
    pub bottom: usize,
}

/// Item table shared between a dataset and its splits.
#[derive(Debug)]
pub struct ItemTable {
    pub schema: AttributeSchema,
    /// Sorted by id.
    pub items: Vec<ItemRecord>,
    /// Positions into `items`, in id order.
    pub tops: Vec<usize>,
    pub bottoms: Vec<usize>,
    by_id: BTreeMap<String, usize>,
}

impl ItemTable {
    pub fn new(schema: AttributeSchema, mut items: Vec<ItemRecord>) -> Result<Self> {
        schema.validate()?;
        items.sort_by(|a, b| a.id.cmp(&b.id));
        let dim = schema.total_dim();
        let mut by_id = BTreeMap::new();
        let mut tops = Vec::new();
        let mut bottoms = Vec::new();
        for (pos, item) in items.iter().enumerate() {
            if item.attr_vec.len() != dim {
                return Err(Error::DimensionMismatch {
                    id: item.id.clone(),
                    expected: dim,
                    actual: item.attr_vec.len(),
                });
            }
            if item.category_index >= schema.category_dim {
                return Err(Error::CategoryOutOfRange {
                    id: item.id.clone(),
                    index: item.category_index,
                    category_dim: schema.category_dim,
                });
            }
            if let Some(bad) = item
                .attr_vec
                .iter()
                .position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
            {
                return Err(Error::InvalidData(format!(
                    "item {}: attr_vec[{bad}] = {} outside [0, 1]",
                    item.id, item.attr_vec[bad]
                )));
            }
            if by_id.insert(item.id.clone(), pos).is_some() {
                return Err(Error::InvalidData(format!("duplicate item id {:?}", item.id)));
            }
            match item.kind {
                ItemKind::Top => tops.push(pos),
                ItemKind::Bottom => bottoms.push(pos),
            }
        }
        Ok(ItemTable {
            schema,
            items,
            tops,
            bottoms,
            by_id,
        })
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }
}

/// Users, their outfit histories, and the item table.
///
/// Immutable once built; splits share the item table through an `Arc`.
#[derive(Debug, Clone)]
pub struct Dataset {
    table: Arc<ItemTable>,
    /// Sorted by id.
    users: Vec<UserHistory>,
    outfits: Vec<Vec<Outfit>>,
}

impl Dataset {
    pub fn new(
        schema: AttributeSchema,
        items: Vec<ItemRecord>,
        users: Vec<UserHistory>,
    ) -> Result<Self> {
        let table = Arc::new(ItemTable::new(schema, items)?);
        Self::with_table(table, users)
    }

    pub fn with_table(table: Arc<ItemTable>, mut users: Vec<UserHistory>) -> Result<Self> {
        users.sort_by(|a, b| a.id.cmp(&b.id));
        let top_index: BTreeMap<usize, usize> =
            table.tops.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        let bottom_index: BTreeMap<usize, usize> =
            table.bottoms.iter().enumerate().map(|(i, &p)| (p, i)).collect();

        let mut outfits = Vec::with_capacity(users.len());
        for (u, user) in users.iter().enumerate() {
            if u > 0 && users[u - 1].id == user.id {
                return Err(Error::InvalidData(format!("duplicate user id {:?}", user.id)));
            }
            let mut seen = HashSet::new();
            let mut resolved = Vec::with_capacity(user.outfits.len());
            for (top_id, bottom_id) in &user.outfits {
                let top = resolve(&table, top_id, &top_index, &user.id, "top")?;
                let bottom = resolve(&table, bottom_id, &bottom_index, &user.id, "bottom")?;
                let outfit = Outfit { top, bottom };
                if !seen.insert(outfit) {
                    return Err(Error::InvalidData(format!(
                        "user {}: duplicate outfit ({top_id}, {bottom_id})",
                        user.id
                    )));
                }
                resolved.push(outfit);
            }
            outfits.push(resolved);
        }
        Ok(Dataset {
            table,
            users,
            outfits,
        })
    }

    pub fn table(&self) -> &Arc<ItemTable> {
        &self.table
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.table.schema
    }

    pub fn items(&self) -> &[ItemRecord] {
        &self.table.items
    }

    pub fn users(&self) -> &[UserHistory] {
        &self.users
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_tops(&self) -> usize {
        self.table.tops.len()
    }

    pub fn n_bottoms(&self) -> usize {
        self.table.bottoms.len()
    }

    pub fn top(&self, i: usize) -> &ItemRecord {
        &self.table.items[self.table.tops[i]]
    }

    pub fn bottom(&self, j: usize) -> &ItemRecord {
        &self.table.items[self.table.bottoms[j]]
    }

    pub fn user_outfits(&self, m: usize) -> &[Outfit] {
        &self.outfits[m]
    }

    pub fn total_outfits(&self) -> usize {
        self.outfits.iter().map(Vec::len).sum()
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.users.binary_search_by(|u| u.id.as_str().cmp(id)).ok()
    }

    pub fn top_index(&self, id: &str) -> Option<usize> {
        let pos = self.table.position(id)?;
        self.table.tops.binary_search(&pos).ok()
    }

    pub fn bottom_index(&self, id: &str) -> Option<usize> {
        let pos = self.table.position(id)?;
        self.table.bottoms.binary_search(&pos).ok()
    }

    /// Same items, different outfit histories (used by splits).
    pub(crate) fn with_outfits(&self, outfits: Vec<Vec<Outfit>>) -> Dataset {
        let users = self
            .users
            .iter()
            .zip(&outfits)
            .map(|(u, os)| UserHistory {
                id: u.id.clone(),
                outfits: os
                    .iter()
                    .map(|o| (self.top(o.top).id.clone(), self.bottom(o.bottom).id.clone()))
                    .collect(),
            })
            .collect();
        Dataset {
            table: Arc::clone(&self.table),
            users,
            outfits,
        }
    }
}

fn resolve(
    table: &ItemTable,
    id: &str,
    index: &BTreeMap<usize, usize>,
    user: &str,
    role: &str,
) -> Result<usize> {
    let pos = table
        .position(id)
        .ok_or_else(|| Error::DanglingId(format!("user {user} references unknown item {id:?}")))?;
    index.get(&pos).copied().ok_or_else(|| {
        Error::InvalidData(format!("user {user}: item {id:?} is not a {role}"))
    })
}
