pub mod evaluate;
pub mod reproduce;
pub mod sample;
pub mod simulate;
pub mod trace;
pub mod train;
