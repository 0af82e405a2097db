//! Speed/distance ingestion, the prior graph, normalisation, windowing and
//! chronological splitting.

mod normalize;
mod prior;
mod series;
mod window;

pub use normalize::{invert_zscore, zscore_fit_apply, NormStats};
pub use prior::{
    build_distance_graph, distance_kernel, load_distance_table, write_distance_table,
    DistanceEntry, PriorGraph, DEFAULT_KAPPA,
};
pub use series::{
    format_datetime, load_speed_table, parse_datetime, time_of_day, write_speed_table,
    SpeedSeries, STEP_SECONDS,
};
pub use window::{
    make_windows, split_chronological, window_count, Split, SplitManifest, Window, WindowSet,
    DEFAULT_RATIOS, DEFAULT_T_IN, DEFAULT_T_OUT,
};
