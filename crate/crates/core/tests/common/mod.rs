#![allow(dead_code)]

pub mod dram_ref;
