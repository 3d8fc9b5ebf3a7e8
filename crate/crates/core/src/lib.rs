//! A generative multi-actor simulation engine.
//!
//! Entities are bags of components; a Game Master entity resolves actors'
//! attempted actions into events and decides who observes what. Engines
//! drive the act/resolve/observe loop under different scheduling
//! disciplines, and every run produces a replayable JSONL trace.

pub mod canonical;
pub mod components;
pub mod engine;
pub mod hash;
pub mod kernel;
pub mod lm;
pub mod prefab;
pub mod runner;
pub mod trace;
