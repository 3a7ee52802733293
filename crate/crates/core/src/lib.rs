//! Deep-breath identification from short depth recordings of a walking person.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! 1. [`roi`]: three torso ROIs and two stable points per frame, differenced
//!    into six raw respiratory channels.
//! 2. [`preprocess`]: outlier repair, least-squares detrending and a
//!    zero-phase Butterworth bandpass.
//! 3. [`gsa`]: graph-Laplacian MAP smoothing across all six channels with a
//!    learned 3×3 feature metric.
//! 4. [`select`]: the most periodic channel is kept.
//! 5. [`features`] and [`svm`]: 15 handcrafted features and a linear SVM.
//!
//! [`synth`] renders synthetic walks with known ground truth and [`bench`]
//! runs the subject-disjoint evaluation protocol and ablations on them.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod config;
pub mod data_io;
pub mod error;
pub mod features;
pub mod filter;
pub mod gsa;
pub mod metrics;
pub mod pipeline;
pub mod preprocess;
pub mod roi;
pub mod select;
pub mod spectrum;
pub mod svm;
pub mod synth;
pub mod types;

pub use config::PipelineConfig;
pub use error::{Error, ErrorKind, Result};
pub use types::{ChannelId, DepthFrameSequence, DepthSample, Joint, JointTrack, Label, Point};
