#![allow(dead_code)]

pub mod identities;
pub mod shop;
