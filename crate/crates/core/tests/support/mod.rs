#![allow(dead_code)]

pub mod rc5_ref;
