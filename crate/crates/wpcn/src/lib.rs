//! Sum-rate-optimal power and time allocation for harvest-then-transmit
//! wireless-powered communication networks (WPCNs) under a saturating,
//! piece-wise linear energy-harvesting model.
//!
//! The library provides:
//! - closed-form per-epoch allocations for unconstrained and peak-constrained
//!   BS power ([`allocation`]),
//! - the energy-harvesting curves used for design and for mismatch
//!   evaluation ([`eh`]),
//! - an independent brute-force / KKT certifier for the per-epoch optimum
//!   ([`oracle`]),
//! - a reproducible Rayleigh block-fading Monte-Carlo driver ([`sim`]),
//! - the Lambert-W and root-finding kernels behind all of it ([`numerics`]).

pub mod allocation;
pub mod eh;
pub mod numerics;
pub mod oracle;
pub mod sim;
