//! Entities, components and the observe/act lifecycle.

mod action;
mod component;
mod entity;

pub use action::{
    match_choice, parse_decimal, Action, ActionPayload, ActionSpec, AnswerError, ContextBundle, ContextEntry,
    EmptyName, EntityId, Observation, OutputType, SpecError,
};
pub use component::{AsAny, CallContext, Component, ComponentError, ComponentKind, Env, Sampling};
pub use entity::{BuildError, CallError, ComponentSlot, Entity};
