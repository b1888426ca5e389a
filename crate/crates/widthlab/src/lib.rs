//! Desk-scale laboratory for width-upscaling of decoder-only transformers.
//!
//! Every linear module of a frozen base model is expanded into a 2x2 block
//! partition `[[W, W12], [W21, W22]]` acting on a hidden state split into an
//! original part and an upscaled part. Keeping `W12 = 0` makes the expansion
//! exactly function-preserving on the original part; training regimes differ
//! only in which `W12` blocks are allowed to move:
//!
//! * **Preserve** keeps every `W12` frozen at zero,
//! * **Adapt** trains all of them,
//! * **Route** trains them above a function-preserving depth and routes each
//!   token between the preserved and adapted logit branches at run time.
//!
//! Alongside the model itself, [`theory`] carries executable checks of the
//! claims the design rests on: exact preservation on residual networks, an
//! operator-norm bound on the output shift caused by training the upscaled
//! blocks, and a convergence comparison for routed versus sequential
//! continual learning. [`bench`] holds the synthetic workloads (a biography
//! question-answering protocol and a two-domain token language) used to
//! measure retention and adaptation, and [`cli`] wires everything into a
//! reproducible command-line harness.

pub mod bench;
pub mod cli;
pub mod learning;
pub mod model;
pub mod numerics;
pub mod theory;
