//! Retrieval, classification and robustness measurements.

pub mod attack;
pub mod experiments;
pub mod ocr;
pub mod report;
pub mod retrieval;

pub use attack::{attack_accuracy, read_attack_records, AttackRecord, AttackScores};
pub use experiments::{ablation_grid, bottleneck_sweep, AblationRow, AblationRowSpec, SweepRow};
pub use ocr::{ocr_detection_criterion, ocr_rate_report, rate_gap, GeneratedImage, OcrDetection, OcrRateRow, WordType};
pub use report::{pair_task_report, PairTaskReport, SplitScore};
pub use retrieval::{similarity_matrix, top1_classification, top1_retrieval, Direction, RetrievalResult};
