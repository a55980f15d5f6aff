//! Heatmaps, heterogeneity analysis, paired significance tests and CSV reports.

mod heatmap;
mod heterogeneity;
mod mcnemar;
mod report;

pub use heatmap::{default_palette, render_heatmap, GridGeometry, Heatmap, HEATMAP_ALPHA};
pub use heterogeneity::{heterogeneity_proportions, instance_proportions, pearson, BagProportions, HeterogeneityReport};
pub use mcnemar::{mcnemar, mcnemar_from_counts, mcnemar_with, McNemar, McNemarVariant};
pub use report::{emit_accuracy_plot_data, read_rows_csv, write_rows_csv};
