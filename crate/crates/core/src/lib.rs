//! Core algorithms for generative vision-language beam prediction on
//! ground-to-UAV mmWave links.
//!
//! Everything in this crate is `no_std` (with `alloc`): array/channel
//! mathematics, the synthetic scene simulator, the byte tokenizer and answer
//! grammar, a small reverse-mode neural-network engine, the toy
//! vision-language model, teacher-forcing training, recurrent baselines and
//! Top-K evaluation. File formats, checkpoints and the command-line tool live
//! in the `beamvlm` companion crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod baseline;
pub mod eval;
pub mod math;
pub mod nn;
pub mod phy;
pub mod rng;
pub mod scene;
pub mod text;
pub mod train;
pub mod vlm;
