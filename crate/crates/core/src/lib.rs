//! Hybrid question answering over documents: a pre-generated QA bank answers
//! close matches directly and retrieval-augmented generation covers the rest.

pub mod chunk;
pub mod cli;
pub mod config;
pub mod enrich;
pub mod eval;
pub mod gateway;
pub mod index;
pub mod ingest;
pub mod keywords;
pub mod prompts;
pub mod qagen;
pub mod router;
pub mod service;
pub mod workspace;
