//! Rate-induced tipping in scalar asymptotically autonomous ODEs
//! `ẋ = f(x, Λ(r t))`.
//!
//! The pieces: frozen equilibria and their quasi-static branches
//! ([`equilibria`]), adaptive integration and pullback estimation
//! ([`integrate`]), asymptotic series along the branches ([`asymptotics`])
//! and the finite-time discriminants used to bracket the critical rate
//! ([`tipping`]).

pub mod equilibria;
pub mod grid;
pub mod model;
pub mod integrate;
pub mod asymptotics;
pub mod tipping;
