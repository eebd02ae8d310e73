//! Algorithmic core of a non-autoregressive handwritten math recognizer.
//!
//! The crate consumes the score tensors a recognition model produces and
//! covers everything around them that is not a neural network:
//!
//! * [`latex`]: label tokenization into node tokens with imaginary ends, and
//!   LaTeX emission back from a node path.
//! * [`tensor_io`]: the `NAMT` binary tensor format, graph JSON and DOT export.
//! * [`assignment`]: windowed bipartite matching of tokenizer predictions to
//!   teacher-attention positions, training targets and loss values.
//! * [`decode`]: token extraction, imaginary-token attachment, self
//!   correction, graph construction, pruning and longest-path selection.
//! * [`metrics`]: expression recognition rates and stage timing.
//! * [`synth`]: a seeded generator of expressions and simulated model
//!   outputs, plus brute-force oracles.

pub mod assignment;
pub mod cli;
pub mod config;
pub mod decode;
pub mod latex;
pub mod metrics;
pub mod synth;
pub mod tensor_io;
