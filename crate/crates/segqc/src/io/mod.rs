pub mod cohort;
pub mod report;
pub mod svol;
