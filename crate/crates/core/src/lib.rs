//! Core of the DeckFlow generative canvas: the card document model,
//! generation lifecycle, the interpretation engine, job scheduling and the
//! client/worker protocol. Network-free; the `deckflow-server` crate wires
//! it to sockets and disk.

pub mod adapters;
pub mod assets;
pub mod canvas;
pub mod composition;
pub mod fuzz;
pub mod hub;
pub mod ids;
pub mod lifecycle;
pub mod media;
pub mod protocol;
pub mod replay;
pub mod runtime;
pub mod session;
pub mod templates;
pub mod walkthrough;

pub use assets::{AssetRef, AssetStore, MemoryAssetStore};
pub use canvas::{Canvas, CanvasError, Document, Modality, Position, Size};
pub use ids::{CardId, DocId, IdGen, JobId, SlotId, WorkerId};
pub use lifecycle::{GenState, LifecycleState, Provenance};
