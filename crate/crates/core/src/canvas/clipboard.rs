use std::collections::{BTreeMap, BTreeSet};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{ActionCard, Canvas, CanvasError, Cluster, DataCard, Document, Fragment, Position};
use crate::assets::{sha256_hex, AssetStore};
use crate::ids::CardId;

pub const CLIP_FORMAT: &str = "deckflow-clip/1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipAsset {
    pub media_type: String,
    pub data: String,
}

/// Self-contained copy of a selection; media bytes are inlined as base64.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Clipboard {
    pub format: String,
    pub data_cards: Vec<DataCard>,
    pub action_cards: Vec<ActionCard>,
    pub clusters: Vec<Cluster>,
    pub assets: BTreeMap<String, ClipAsset>,
}

impl Fragment {
    /// Copy the entities in `set`, dropping references that leave it.
    pub fn extract(doc: &Document, set: &BTreeSet<CardId>) -> Fragment {
        let mut part = Fragment::default();
        for id in set {
            if let Some(d) = doc.data_cards.get(id) {
                part.data_cards.push(d.clone());
            } else if let Some(a) = doc.action_cards.get(id) {
                let mut a = a.clone();
                for s in &mut a.slots {
                    s.connection = s.connection.filter(|c| set.contains(c));
                }
                part.action_cards.push(a);
            } else if let Some(cl) = doc.clusters.get(id) {
                let mut cl = cl.clone();
                cl.members.retain(|m| set.contains(m));
                part.clusters.push(cl);
            }
        }
        part
    }

    /// Top-left corner of everything in the fragment.
    pub fn min_corner(&self) -> Option<Position> {
        let pts = self
            .data_cards
            .iter()
            .map(|d| d.position)
            .chain(self.action_cards.iter().map(|a| a.position))
            .chain(self.clusters.iter().map(|c| c.position));
        pts.fold(None, |acc: Option<Position>, p| {
            Some(match acc {
                None => p,
                Some(a) => Position::new(a.x.min(p.x), a.y.min(p.y)),
            })
        })
    }
}

fn structural(message: impl Into<String>) -> CanvasError {
    CanvasError::MalformedClipboard {
        line: 0,
        column: 0,
        message: message.into(),
    }
}

impl Clipboard {
    pub fn from_selection(
        doc: &Document,
        selection: &[CardId],
        assets: &dyn AssetStore,
    ) -> Result<Clipboard, CanvasError> {
        if selection.is_empty() {
            return Err(CanvasError::EmptySelection);
        }
        let mut set = BTreeSet::new();
        for &id in selection {
            match doc.clusters.get(&id) {
                Some(cl) => {
                    set.insert(id);
                    set.extend(cl.members.iter().copied());
                }
                None if doc.contains(id) => {
                    set.insert(id);
                }
                None => return Err(CanvasError::MissingCard(id)),
            }
        }
        let part = Fragment::extract(doc, &set);
        let mut inlined = BTreeMap::new();
        for d in &part.data_cards {
            if let Some(a) = d.asset() {
                let bytes = assets.get(&a.id)?;
                inlined.insert(
                    a.id.clone(),
                    ClipAsset {
                        media_type: a.media_type.clone(),
                        data: B64.encode(bytes),
                    },
                );
            }
        }
        Ok(Clipboard {
            format: CLIP_FORMAT.to_string(),
            data_cards: part.data_cards,
            action_cards: part.action_cards,
            clusters: part.clusters,
            assets: inlined,
        })
    }

    pub fn to_json(&self) -> String {
        let mut c = self.clone();
        c.data_cards.sort_by_key(|d| d.id);
        c.action_cards.sort_by_key(|a| a.id);
        c.clusters.sort_by_key(|cl| cl.id);
        serde_json::to_string(&c).expect("clipboard serializes")
    }

    /// Parse and validate clipboard text.
    pub fn parse(text: &str) -> Result<Clipboard, CanvasError> {
        let clip: Clipboard =
            serde_json::from_str(text).map_err(|e| CanvasError::MalformedClipboard {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
        if clip.format != CLIP_FORMAT {
            return Err(structural(format!("unsupported format {:?}", clip.format)));
        }
        let mut ids = BTreeSet::new();
        let all = clip
            .data_cards
            .iter()
            .map(|d| d.id)
            .chain(clip.action_cards.iter().map(|a| a.id))
            .chain(clip.clusters.iter().map(|c| c.id));
        for id in all {
            if !ids.insert(id) {
                return Err(structural(format!("duplicate id {id}")));
            }
        }
        for (id, asset) in &clip.assets {
            let bytes = B64
                .decode(&asset.data)
                .map_err(|e| structural(format!("asset {id}: {e}")))?;
            if sha256_hex(&bytes) != *id {
                return Err(structural(format!("asset {id} does not match its content")));
            }
        }
        for d in &clip.data_cards {
            if !d.position.is_finite() || !d.size.is_valid() {
                return Err(structural(format!("card {} has invalid geometry", d.id)));
            }
            let media_ok = match (d.kind, &d.content) {
                (super::Modality::Text, Some(super::CardContent::Text(_))) => true,
                (super::Modality::Text, _) => false,
                (_, None) => true,
                (_, Some(super::CardContent::Asset(a))) => clip.assets.contains_key(&a.id),
                (_, Some(super::CardContent::Text(_))) => false,
            };
            if !media_ok {
                return Err(structural(format!("card {} content is not self-contained", d.id)));
            }
        }
        Ok(clip)
    }
}

impl Canvas {
    pub fn serialize_selection(&self, selection: &[CardId], assets: &dyn AssetStore) -> Result<String, CanvasError> {
        Ok(Clipboard::from_selection(self.doc(), selection, assets)?.to_json())
    }

    /// Paste clipboard text so that the selection's top-left corner lands at
    /// `position`. Returns (clipboard id, new id) pairs in clipboard-id order.
    pub fn deserialize_selection(
        &mut self,
        text: &str,
        position: Position,
        assets: &dyn AssetStore,
    ) -> Result<Vec<(CardId, CardId)>, CanvasError> {
        if !position.is_finite() {
            return Err(CanvasError::NonFinitePosition);
        }
        let clip = Clipboard::parse(text)?;
        self.paste(clip, position, assets)
    }

    pub fn paste(
        &mut self,
        clip: Clipboard,
        position: Position,
        assets: &dyn AssetStore,
    ) -> Result<Vec<(CardId, CardId)>, CanvasError> {
        for asset in clip.assets.values() {
            let bytes = B64.decode(&asset.data).map_err(|e| structural(e.to_string()))?;
            assets.put(&bytes, &asset.media_type)?;
        }
        let mut part = Fragment {
            data_cards: clip.data_cards,
            action_cards: clip.action_cards,
            clusters: clip.clusters,
        };
        let inside: BTreeSet<CardId> = part
            .data_cards
            .iter()
            .map(|d| d.id)
            .chain(part.action_cards.iter().map(|a| a.id))
            .chain(part.clusters.iter().map(|c| c.id))
            .collect();
        if inside.is_empty() {
            return Err(CanvasError::EmptySelection);
        }
        let data_ids: BTreeSet<CardId> = part.data_cards.iter().map(|d| d.id).collect();
        let source_ids: BTreeSet<CardId> = data_ids
            .iter()
            .chain(part.clusters.iter().map(|c| &c.id))
            .copied()
            .collect();
        for a in &mut part.action_cards {
            for s in &mut a.slots {
                s.connection = s.connection.filter(|c| source_ids.contains(c));
            }
        }
        let mut claimed = BTreeSet::new();
        for cl in &mut part.clusters {
            cl.members.retain(|m| data_ids.contains(m) && claimed.insert(*m));
        }
        let corner = part.min_corner().unwrap_or(position);
        let (dx, dy) = (position.x - corner.x, position.y - corner.y);
        self.transaction(|c| {
            c.insert_fragment(part, dx, dy).map_err(|e| match e {
                CanvasError::MalformedDocument(m) => structural(m),
                other => other,
            })
        })
    }
}
