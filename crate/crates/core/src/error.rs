use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("absorption order {order} outside 1..={max}")]
    InvalidOrder { order: u32, max: u32 },

    #[error("invalid configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),

    #[error("insufficient statistics for {what}: have {have}, need at least {need}")]
    InsufficientStatistics { what: String, have: u64, need: u64 },

    #[error("setting pair (thetaA={theta_a}, thetaB={theta_b}) was not measured in this session")]
    MissingSettingPair { theta_a: f64, theta_b: f64 },

    #[error("sifted key is empty: no matched-setting coincidences")]
    EmptyKey,

    #[error("emission log has no entry for emission {0}")]
    MissingEmission(u64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
