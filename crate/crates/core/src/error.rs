use alloc::string::String;
use alloc::vec::Vec;

use crate::domain::{DeviceId, HwTag, TaskId};

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("unknown task id {0}")]
    UnknownTask(TaskId),
    #[error("unknown device id {0}")]
    UnknownDevice(DeviceId),
    #[error("task ids must be dense and ordered: position {position} holds id {id}")]
    NonDenseTaskId { position: usize, id: TaskId },
    #[error("device ids must be dense and ordered: position {position} holds id {id}")]
    NonDenseDeviceId { position: usize, id: DeviceId },
    #[error("edge {src}->{dst} references an unknown task")]
    DanglingEdge { src: TaskId, dst: TaskId },
    #[error("self loop on task {0}")]
    SelfLoop(TaskId),
    #[error("duplicate edge {src}->{dst}")]
    DuplicateEdge { src: TaskId, dst: TaskId },
    #[error("cycle detected through back edge {src}->{dst}")]
    Cycle { src: TaskId, dst: TaskId },
    #[error("task graph has no tasks")]
    EmptyGraph,
    #[error("device network has no devices")]
    EmptyNetwork,
    #[error("invalid value for {field}: {value}")]
    InvalidValue { field: &'static str, value: f64 },
    #[error("missing link {src}->{dst}")]
    MissingLink { src: DeviceId, dst: DeviceId },
    #[error("link {src}->{dst} is given more than once or is a self link")]
    BadLink { src: DeviceId, dst: DeviceId },
    #[error("no device supports hardware tag {tag} required by task {task}")]
    EmptyFeasibleSet { task: TaskId, tag: HwTag },
    #[error("device {device} is not feasible for task {task}")]
    Infeasible { task: TaskId, device: DeviceId },
    #[error("placement covers {found} tasks, expected {expected}")]
    PlacementLength { expected: usize, found: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("churn leaves hardware tags without a supporting device: {0:?}")]
    OrphanedTags(Vec<HwTag>),
    #[error("trace does not match placement: {0}")]
    TraceMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("every action is masked; terminate the episode")]
    AllActionsMasked,
    #[error("action ({task}, {device}) is masked")]
    MaskedAction { task: TaskId, device: DeviceId },
    #[error("invalid episode configuration: {0}")]
    InvalidEpisode(String),
    #[error("critical-path lower bound is zero")]
    ZeroDenominator,
    #[error("state space has {0} placements, above the exhaustive-search guard")]
    StateSpaceTooLarge(u128),
    #[error("trajectory step {0} has no stored log-probability gradient")]
    MissingGradientContext(usize),
    #[error("parent {parent} of task {task} is not placed")]
    UnplacedParent { task: TaskId, parent: TaskId },
    #[error("dataset is empty")]
    EmptyDataset,
}
