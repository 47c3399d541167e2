use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::adapters::{TemplateKind, TextRequest};
use crate::canvas::{Canvas, CanvasError, Modality, Position, ACTION_SLOT_PITCH, GRID_GAP};
use crate::ids::{CardId, SlotId};
use crate::lifecycle::Provenance;

use super::{CompositionError, Interpreter};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecompositionEntry {
    pub label: String,
    /// `None` when the goal leaves the attribute open.
    pub value: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalDecomposition {
    pub goal: String,
    /// The request sent to the model.
    pub prompt: String,
    pub entries: Vec<DecompositionEntry>,
}

/// What [`Canvas::materialize_decomposition`] created.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Materialized {
    pub action: CardId,
    /// Text card per valued slot, in slot order.
    pub value_cards: Vec<(SlotId, CardId)>,
}

fn parse_error(raw: &str, reason: String) -> CompositionError {
    CompositionError::DecompositionParseError {
        raw: raw.to_string(),
        reason,
    }
}

/// Parse `label :: value` lines. Blank lines are skipped; every other line
/// must match, labels must be unique, and the literal `NONE` marks an empty
/// value.
pub fn parse_decomposition(raw: &str) -> Result<Vec<DecompositionEntry>, CompositionError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (n, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (label, value) = line
            .split_once("::")
            .ok_or_else(|| parse_error(raw, format!("line {} has no `::`", n + 1)))?;
        let label = label.trim();
        let value = value.trim();
        if label.is_empty() {
            return Err(parse_error(raw, format!("line {} has an empty label", n + 1)));
        }
        if value.is_empty() {
            return Err(parse_error(raw, format!("line {} has an empty value", n + 1)));
        }
        if !seen.insert(label.to_lowercase()) {
            return Err(parse_error(raw, format!("duplicate label {label:?}")));
        }
        out.push(DecompositionEntry {
            label: label.to_string(),
            value: (value != "NONE").then(|| value.to_string()),
        });
    }
    if out.is_empty() {
        return Err(parse_error(raw, "no entries".into()));
    }
    Ok(out)
}

/// Ask the text model which attributes the goal implies.
pub fn decompose_goal(goal: &str, interp: &Interpreter<'_>) -> Result<GoalDecomposition, CompositionError> {
    if goal.trim().is_empty() {
        return Err(CompositionError::EmptyGoal);
    }
    let prompt = interp.templates.render_decompose(goal);
    let out = interp
        .adapters
        .generate_text(&TextRequest {
            template: TemplateKind::Decompose,
            inputs: vec![goal.to_string()],
            prompt: prompt.clone(),
            max_tokens: interp.max_tokens,
        })
        .map_err(|e| CompositionError::AdapterFailure {
            strategy: "decompose".into(),
            message: e.to_string(),
        })?;
    Ok(GoalDecomposition {
        goal: goal.to_string(),
        prompt,
        entries: parse_decomposition(&out.text)?,
    })
}

impl Canvas {
    /// Turn a decomposition into an action card with one slot per attribute
    /// and a text card, wired in, for each defined value. The value cards
    /// sit in a column between `anchor` (usually the goal card) and the
    /// action card. One revision.
    pub fn materialize_decomposition(
        &mut self,
        dec: &GoalDecomposition,
        goal_card: Option<CardId>,
        anchor: Position,
        target: Modality,
    ) -> Result<Materialized, CanvasError> {
        if !anchor.is_finite() {
            return Err(CanvasError::NonFinitePosition);
        }
        let text_size = Modality::Text.default_size();
        let column_x = anchor.x + text_size.width + GRID_GAP;
        let action_pos = Position::new(column_x + text_size.width + GRID_GAP, anchor.y);
        let labels: Vec<String> = dec.entries.iter().map(|e| e.label.clone()).collect();
        self.transaction(|c| {
            let action = c.create_action(action_pos, target, &labels)?;
            let slot_ids: Vec<SlotId> = c.doc().action_cards[&action]
                .slots
                .iter()
                .map(|s| s.slot_id)
                .collect();
            let mut value_cards = Vec::new();
            let mut row = 0.0;
            for (entry, slot) in dec.entries.iter().zip(slot_ids) {
                let Some(value) = &entry.value else { continue };
                let y = anchor.y + ACTION_SLOT_PITCH * f64::from(slot.0) + row * (text_size.height + GRID_GAP);
                let id = c.insert_generated_text(
                    Position::new(column_x, y),
                    text_size,
                    value.clone(),
                    false,
                    Provenance {
                        influencers: goal_card.into_iter().collect(),
                        method: "goal-decompose".to_string(),
                        prompt: dec.prompt.clone(),
                        ..Provenance::default()
                    },
                );
                c.connect_in_txn(id, action, slot)?;
                value_cards.push((slot, id));
                row += 1.0;
            }
            Ok(Materialized { action, value_cards })
        })
    }
}
