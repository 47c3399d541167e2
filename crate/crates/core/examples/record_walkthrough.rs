//! Regenerate fixtures/walkthrough.jsonl and print the final document hash.

use deckflow_core::canvas::doc_hash;
use deckflow_core::walkthrough;

fn main() {
    let rec = walkthrough::record();
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/walkthrough.jsonl");
    std::fs::write(path, rec.log()).expect("write log");
    println!("{}", doc_hash(rec.document().expect("recorded")));
}
