//! Synthetic image-space UAV trajectories and short-horizon prediction.
//!
//! The crate generates training data for image-space UAV motion prediction
//! without any real footage: it plans minimum-snap quadrotor trajectories
//! through random waypoints inside a camera's viewing frustum, projects them
//! to pixels at a sampled frame rate, and persists the accepted tracks. On
//! top of that data it trains a recurrent mixture-density predictor and
//! benchmarks it against a constant-velocity Kalman filter and linear
//! extrapolation using final displacement error.
//!
//! Start with [`polysnap`] for the trajectory optimizer, [`camera`] for the
//! projection geometry, [`datagen`] for the generation pipeline,
//! [`seqmodel`] for the learned predictor, [`baselines`] for the classic
//! filters and [`harness`] for the benchmark. The `book/` directory of the
//! repository walks through the same material chapter by chapter; its code
//! snippets compile and run as part of `cargo test --doc`.

pub mod baselines;
pub mod camera;
pub mod datagen;
pub mod harness;
pub mod polysnap;
pub mod seqmodel;
pub mod util;

pub use baselines::{
    kalman_filter, kalman_forecast, linear_forecast, linear_forecast_with, CvKalmanState,
    KalmanParams, LinearFit,
};
pub use camera::{CameraRig, Extrinsics, Frustum, Intrinsics};
pub use datagen::{
    add_observation_noise, generate_dataset, generate_dataset_parallel, generate_track,
    load_tracks, save_tracks, validate_track, Dataset, GenConfig, ImageTrack,
};
pub use harness::{
    evaluate, extract_windows, fde, ingest_annotations, AnnotationSequence, EvalConfig,
    EvalReport, FieldMapping, KalmanPredictor, LinearPredictor, MdnPredictor, Predictor,
    SequenceData,
};
pub use polysnap::{
    allocate_times, build_qp, solve_min_snap, MinSnapConfig, PiecewiseTrajectory, QpSystem,
    SegmentedTimeline, Waypoint,
};
pub use seqmodel::{
    build_windows, load_model, nll_loss, predict, save_model, train, GaussianForecast, MdnModel,
    ModelDims, TrainConfig, TrainOutcome,
};

// The guide's code blocks double as doc-tests so the book can never drift
// from the library.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/minimum-snap.md")]
    mod minimum_snap {}
    #[doc = include_str!("../../../book/src/camera-geometry.md")]
    mod camera_geometry {}
    #[doc = include_str!("../../../book/src/data-generation.md")]
    mod data_generation {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/sequence-model.md")]
    mod sequence_model {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
