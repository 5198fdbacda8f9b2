// SPDX-License-Identifier: Apache-2.0

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod events;
pub mod manifest;
pub mod model;
pub mod synthesis;
pub mod train_eval;

pub use error::{Error, Result};
