//! Actor-side components.

mod human;
mod lm_acting;
mod memory;
mod observations;
mod persona;
mod plan;
mod rational;
mod reflection;

pub use human::{ClosedInput, HumanActing, HumanInput, HumanReply, PendingActionRequest, QueuedInput};
pub use lm_acting::LmActing;
pub use memory::{tokens, AssociativeMemory, MemoryRecord, MemoryStore, RetrievalWeights, SharedMemory, MEMORY_TYPE};
pub use observations::ObservationBuffer;
pub use persona::Persona;
pub use plan::Plan;
pub use rational::RationalActing;
pub use reflection::{SelfReflection, REFLECTION_QUESTION};

use super::ComponentRegistry;

pub(crate) fn register(registry: &mut ComponentRegistry) {
    registry.register("persona", |spec, _| Ok(Box::new(Persona::from_spec(spec)?)));
    registry.register("observation_buffer", |spec, _| {
        Ok(Box::new(ObservationBuffer::from_spec(spec)?))
    });
    registry.register(MEMORY_TYPE, |spec, ctx| {
        Ok(Box::new(AssociativeMemory::from_spec(spec, ctx)?))
    });
    registry.register("self_reflection", |spec, ctx| {
        Ok(Box::new(SelfReflection::from_spec(spec, ctx)?))
    });
    registry.register("plan", |spec, _| Ok(Box::new(Plan::from_spec(spec)?)));
    registry.register("lm_acting", |_, _| Ok(Box::new(LmActing)));
    registry.register("human_acting", |spec, ctx| {
        Ok(Box::new(HumanActing::from_spec(spec, ctx)?))
    });
    registry.register("rational_acting", |spec, _| {
        Ok(Box::new(RationalActing::from_spec(spec)?))
    });
}
