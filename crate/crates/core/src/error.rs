use thiserror::Error;

#[derive(Debug, Error)]
pub enum SlpError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range for constellation of order {order}")]
    IndexOutOfRange { index: usize, order: usize },

    #[error("channel Gram matrix is numerically rank deficient (min eigenvalue {min_eig:e})")]
    RankDeficient { min_eig: f64 },

    #[error("singular DPCIR block for symbol {0}")]
    SingularBlock(usize),

    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SlpError>;
