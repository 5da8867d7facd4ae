//! SGD and heavy-ball SGD under decaying step-size families, with
//! dissipativity certificates, closed-form boundedness bounds and seeded
//! Monte-Carlo checks of those bounds.

// `!(x > 0.0)` is used on purpose so NaN lands on the error path.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod certify;
pub mod harness;
pub mod linalg;
pub mod optimize;
pub mod par;
pub mod problems;
pub mod schedules;
pub mod seed;
