//! Protocol core for privacy-preserving asynchronous federated aggregation.
//!
//! This crate holds everything that is pure computation: the Paillier
//! cryptosystem, Shamir secret sharing over a prime field, fixed-point
//! encoding of model vectors, and the three role state machines
//! (encryption server, aggregation server, client). It is `no_std`
//! compatible (alloc required); all randomness and clocks are injected
//! by the caller, which is what makes the deterministic simulation in
//! the companion crate possible.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod arith;
pub mod encoding;
pub mod paillier;
pub mod protocol;
pub mod shamir;
