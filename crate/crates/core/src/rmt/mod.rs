//! Random-matrix machinery: the Marchenko-Pastur law, empirical spectra,
//! bulk-edge estimation and goodness of fit.

pub mod bema;
pub mod gof;
pub mod mp;
pub mod quadrature;
pub mod spectrum;
pub mod tracy_widom;

pub use bema::{bema_lambda_plus, BemaResult};
pub use gof::{ks_distance, mp_fit_test, GofResult};
pub use mp::{mp_cdf, mp_pdf, mp_quantile, mp_support, MpParams, Tail};
pub use spectrum::{esd, Spectrum};
pub use tracy_widom::tracy_widom_quantile;
