#![allow(dead_code)]

pub mod grad_suite;
pub mod identities;
pub mod metric_oracle;
