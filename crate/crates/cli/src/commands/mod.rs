pub mod audit;
pub mod dedup;
pub mod ingest;
pub mod knn;
pub mod train_toy;
