pub mod compare;
pub mod config;
pub mod plot;
pub mod record;
pub mod run;
pub mod store;
