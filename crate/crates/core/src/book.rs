//! Book chapters compiled as doctests.

#[doc = include_str!("../../../book/src/introduction.md")]
mod introduction {}
#[doc = include_str!("../../../book/src/kernels.md")]
mod kernels {}
#[doc = include_str!("../../../book/src/flow.md")]
mod flow {}
#[doc = include_str!("../../../book/src/budget.md")]
mod budget {}
#[doc = include_str!("../../../book/src/reference-model.md")]
mod reference_model {}
#[doc = include_str!("../../../book/src/critics.md")]
mod critics {}
#[doc = include_str!("../../../book/src/agent.md")]
mod agent {}
#[doc = include_str!("../../../book/src/environments.md")]
mod environments {}
