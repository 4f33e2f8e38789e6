use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid state space: {0}")]
    InvalidSpace(String),

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("value {value} is not in the domain of attribute `{attribute}`")]
    ValueOutOfDomain { attribute: String, value: i64 },

    #[error("state index {index} out of range for a space of {size} states")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("space mismatch: expected {expected} states, found {found}")]
    SpaceMismatch { expected: usize, found: usize },

    #[error("condition syntax error at offset {offset}: {message}")]
    ConditionSyntax { offset: usize, message: String },

    #[error("invalid effect: {0}")]
    InvalidEffect(String),

    #[error("invalid probability interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },

    #[error("invalid mass assignment: {0}")]
    InvalidMass(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid CMA: {0}")]
    InvalidCma(String),

    #[error("number assignment does not match the tree: {0}")]
    WitnessShape(String),

    #[error("invalid action `{action}`: {message}")]
    InvalidAction { action: String, message: String },

    #[error("condition is not one of the action's conditions")]
    NotAConditionOf,

    #[error("invalid abstraction: {0}")]
    InvalidAbstraction(String),

    #[error("inter pairing is not a bijection between the groups: {0}")]
    PairingNotBijective(String),

    #[error("invalid hierarchy: {0}")]
    InvalidHierarchy(String),

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error("trace does not map onto the projected tree: {0}")]
    Mapping(String),

    #[error("not SPD-restricted: {0}")]
    NotSpd(String),

    #[error("{0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, Error>;
