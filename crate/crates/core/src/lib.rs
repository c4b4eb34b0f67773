#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certify;
pub mod config;
pub mod controller;
pub mod errcascade;
pub mod error;
pub mod model;
pub mod report;
pub mod signals;
pub mod sim;

pub use error::{Error, Result};
