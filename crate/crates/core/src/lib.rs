//! Zero-shot task calibration for natural-language inference style prompts.
//!
//! The crate scores a premise/hypothesis pair three ways (jointly, premise
//! only, hypothesis only), turns the label continuations into
//! distributions and recombines them with the task calibration rule or one
//! of the classic baselines.
//!
//! ```
//! use taskcal::prob::{ProbTriple, ProbVector};
//! use taskcal::scoring::score_tc;
//!
//! let triple = ProbTriple::new(
//!     ProbVector::new(vec![0.6, 0.4]).unwrap(),
//!     ProbVector::new(vec![0.5, 0.5]).unwrap(),
//!     ProbVector::new(vec![0.2, 0.8]).unwrap(),
//! )
//! .unwrap();
//! let scores = score_tc(&triple);
//! assert!(scores.values()[0] > scores.values()[1]);
//! ```

pub mod backend;
pub mod datasets;
pub mod error;
pub mod eval;
pub mod io;
pub mod prob;
pub mod prompting;
pub mod scoring;

pub use error::{Error, Result};
