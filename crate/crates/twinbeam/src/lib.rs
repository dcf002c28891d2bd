//! Event-level simulator and analysis toolkit for a pulsed, heralded
//! single-photon source integrated with an on-chip beamsplitter.
//!
//! The crate covers the full chain of such an experiment:
//!
//! * [`squeezed_state`] — closed-form photon-number statistics of the
//!   multimode twin-beam source: Schmidt number, pair probabilities and the
//!   cross / auto / heralded second-order correlation functions.
//! * [`jsa`] — joint spectral amplitude modelling, SVD-based Schmidt
//!   decomposition and marginal spectra.
//! * [`circuit`] — classical model of the chip (MMI splitter, propagation
//!   loss, facet Fabry-Perot fringes) and the inverse problem of extracting
//!   loss and splitting ratio from transmission scans.
//! * [`montecarlo`] — per-pulse stochastic simulation emitting reproducible
//!   binary time-tag streams ([`tagstream`]).
//! * [`coincidence`] — streaming coincidence counting and the headline
//!   estimators (CAR, g²) with Poisson uncertainties.
//! * [`spectrograph`] — time-of-flight spectrograph reconstruction of the
//!   joint spectral intensity from tag delays.
//! * [`scenario`] / [`cli`] — bundled regression scenarios and the thin
//!   command-line front end.
//!
//! Every capability has a runnable demo under `examples/`; see the README
//! for the tour.

pub mod circuit;
pub mod cli;
pub mod coincidence;
pub mod config;
pub mod jsa;
pub mod montecarlo;
pub mod plot;
pub mod scenario;
pub mod spectrograph;
pub mod squeezed_state;
pub mod tagstream;

pub use coincidence::{CorrelationReport, Estimate};
pub use montecarlo::ExperimentConfig;
pub use squeezed_state::SqueezedSourceModel;
pub use tagstream::TimeTag;
