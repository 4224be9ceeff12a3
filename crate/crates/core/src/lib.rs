pub mod detector;
pub mod error;
pub mod io;
pub mod lindblad;
pub mod optim;
pub mod qubit;
pub mod scalar;
pub mod spectrum;

pub use error::{Error, Result};
pub use scalar::Real;

pub type TlsParams = qubit::TlsParams<f64>;
pub type CavityParams = qubit::CavityParams<f64>;
pub type DriveParams = qubit::DriveParams<f64>;
pub type SpinTrajectory = qubit::SpinTrajectory<f64>;
pub type SpectrumRecord = spectrum::SpectrumRecord<f64>;
pub type CorrelatorSeries = spectrum::CorrelatorSeries<f64>;
pub type LgCurve = spectrum::LgCurve<f64>;
pub type FiniteBandwidthModel = spectrum::FiniteBandwidthModel<f64>;
