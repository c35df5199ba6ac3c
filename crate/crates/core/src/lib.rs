pub mod actuation;
pub mod api;
pub mod config;
pub mod detect;
pub mod mediation;
pub mod metrics;
pub mod model;
pub mod replay;
pub mod session;
pub mod simuser;
