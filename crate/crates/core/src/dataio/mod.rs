//! Loading Mulan-style multi-label datasets: ARFF features and labels,
//! the companion label-list XML, batching, and view augmentation.

pub mod arff;
pub mod batch;
pub mod dataset;
pub mod xml;

pub use arff::{parse_arff, write_dense_arff, ArffAttribute, ArffRelation, AttrKind, ParseError};
pub use batch::{make_batches, two_views, Batch};
pub use dataset::{load_mulan_pair, DataError, MulanDataset, Standardizer};
pub use xml::parse_labels_xml;
