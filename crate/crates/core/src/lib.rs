//! Randomized block-coordinate primal-dual proximal splitting with diagonal
//! preconditioning, for structured monotone inclusions and convex programs,
//! including a distributed variant over hypergraphs.

pub mod activation;
pub mod distributed;
pub mod errors;
pub mod fb_engine;
pub mod linalg;
pub mod operators;
pub mod pd_engine;
