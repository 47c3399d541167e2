//! Network server, worker process and CLI for DeckFlow.

pub mod cli;
pub mod gateway;
pub mod storage;
pub mod worker;
