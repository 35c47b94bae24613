#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codec;
pub mod facilities;
pub mod geo;
pub mod gnss;
pub mod ldm;
pub mod link;
pub mod channel;
pub mod rfanalysis;
pub mod trial;
pub mod station;
