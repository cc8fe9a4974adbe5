//! Per-repetition performance metrics, the joint `[1, 20]` rescaling and
//! the separation degree between correct and incorrect metric values.

mod distance;
mod gmm;
mod separation;
mod table;

pub use distance::{
    dtw_cost, dtw_metric, euclidean_metric, mahalanobis_metric, reference_mean, ReferenceStats, COV_FLOOR,
};
pub use gmm::{fit_gmm, gmm_nll, GmmConfig, GmmFile, GmmFit, GmmModel, GMM_FORMAT, GMM_VERSION};
pub use separation::{scale_to_range, scaled_separation, separation_degree, SCALE_HIGH, SCALE_LOW};
pub use table::{
    metric_table, read_metric_records, series_for, write_metric_records, Cell, CodedRep, CodedSet, MetricKind,
    MetricModel, MetricRecord, MetricSeries, Mode, Reduction, SeparationReport, TableOptions, TableRow,
};
