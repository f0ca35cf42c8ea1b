//! Metrics, self-ensemble inference, receptive-field maps and benchmarks.

pub mod bench;
pub mod erf;
pub mod metrics;
pub mod report;
pub mod upscale;

pub use bench::{bench_scaling, fit_exponent, BenchRecord, Msa};
pub use erf::{erf_grad, model_erf, normalize_erf, save_erf, ConvStack};
pub use metrics::{psnr, rgb_to_y, shave, ssim, y_metrics, PSNR_CAP};
pub use report::{evaluate_dir, evaluate_pairs, MetricReport, MetricRow};
pub use upscale::{self_ensemble, Bicubic, SelfEnsemble, Upscaler};
