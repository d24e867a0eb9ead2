//! Style-adaptive handwriting teaching.
//!
//! The numerical core (corpus, DTW, style mixtures, GMR-GP generation,
//! impedance) is generic over `f32`/`f64` through [`scalar::Scalar`]. The
//! simulated learner, the teaching loop and reporting run in `f64`.

pub mod config;
pub mod corpus;
pub mod dtw;
pub mod experiment;
pub mod gmm;
pub mod gmr;
pub mod gmrgp;
pub mod impedance;
pub mod metrics;
pub mod report;
pub mod scalar;
pub mod seed;
pub mod session;
pub mod sim;
pub mod trajectory;
pub mod viapoint;

pub type Point = scalar::Point<f64>;
pub type Mat2 = scalar::Mat2<f64>;
pub type WaypointSeq = trajectory::WaypointSeq<f64>;
pub type CharacterSet = corpus::CharacterSet<f64>;
pub type CharacterSpec = corpus::CharacterSpec<f64>;
pub type StyleDataset = gmm::StyleDataset<f64>;
pub type GmmModel = gmm::GmmModel<f64>;
pub type Gmr = gmr::Gmr<f64>;
pub type GmrGpKernel = gmrgp::GmrGpKernel<f64>;
pub type TrajectoryPosterior = gmrgp::TrajectoryPosterior<f64>;
pub type ViaPointSet = viapoint::ViaPointSet<f64>;
pub type ImpedanceConfig = impedance::ImpedanceConfig<f64>;
pub type ImpedanceState = impedance::ImpedanceState<f64>;
pub type DeviationProfile = dtw::DeviationProfile<f64>;
