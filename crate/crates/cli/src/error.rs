use lcaffect_core::corpus::CorpusError;
use lcaffect_core::eval::EvalError;
use lcaffect_core::fusion::FusionError;
use lcaffect_core::numerics::NumericsError;
use lcaffect_core::synthgen::SynthError;
use lcaffect_core::v2lc::V2lcError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
        }
    }

    pub fn data(e: impl std::fmt::Display) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::InvalidConfig(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<NumericsError> for CliError {
    fn from(e: NumericsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<V2lcError> for CliError {
    fn from(e: V2lcError) -> Self {
        match e {
            V2lcError::InvalidConfig(_) => CliError::Config(e.to_string()),
            V2lcError::Corpus(inner) => inner.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<FusionError> for CliError {
    fn from(e: FusionError) -> Self {
        match e {
            FusionError::InvalidConfig(_) => CliError::Config(e.to_string()),
            FusionError::Corpus(inner) => inner.into(),
            FusionError::V2lc(inner) => inner.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::InvalidConfig(_) => CliError::Config(e.to_string()),
            SynthError::Corpus(inner) => inner.into(),
            SynthError::Fusion(inner) => inner.into(),
            SynthError::Io(_) => CliError::Data(e.to_string()),
        }
    }
}
