pub mod tensor;
pub mod taxonomy;
pub mod loss;
pub mod coherence;
pub mod models;
pub mod metrics;
pub mod data;
pub mod oracle;
pub mod verify;
