//! End-to-end pipeline, training schedules and checkpoint selection.

mod checkpoint;
mod pipeline;
mod schedule;

pub use checkpoint::{select_checkpoint, CheckpointEval};
pub use pipeline::{
    run_pipeline, stage_counts, Backends, DatasetRecord, DecontaminationConfig, Manifest, PassageInput,
    PipelineConfig, PipelineOutput, RunStatus, SelectionParams, StageCount, STAGES,
};
pub use schedule::{
    build_schedule, materialize_stage, train_and_select, DatasetRef, ExampleRef, ScheduleMode, ScheduleStage,
    TrainerBackend, TrainingSchedule,
};
