pub mod dataset;
pub mod direction;
pub mod exec;
pub mod montecarlo;
pub mod pipeline;
pub mod qp;
pub mod shadow;
pub mod technologies;
