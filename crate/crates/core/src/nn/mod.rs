//! Neural decision stack: attention over the local device graph, a discrete
//! message exchange between teammates, an action head, and a feasibility mask,
//! plus the reverse-mode tape and the training loop that fit it.

pub mod autograd;
pub mod g3m;
pub mod train;
