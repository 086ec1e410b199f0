use std::fmt;
use std::process::ExitCode;

use inrv::dataio::DataError;
use inrv::diffcore::DiffError;
use inrv::field::FieldError;
use inrv::hypernet::HypernetError;
use inrv::inversion::InversionError;
use inrv::metrics::MetricError;
use inrv::sampler::SamplerError;
use inrv::trainer::TrainError;

/// A failure classified by exit code: 1 usage, 2 data/format, 3 numeric.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<DiffError> for CliError {
    fn from(e: DiffError) -> Self {
        match e {
            DiffError::NonFinite { .. } | DiffError::NonFiniteGradient(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<FieldError> for CliError {
    fn from(e: FieldError) -> Self {
        match e {
            FieldError::Diff(d) => d.into(),
            FieldError::ZeroExtent(..) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<HypernetError> for CliError {
    fn from(e: HypernetError) -> Self {
        match e {
            HypernetError::Diff(d) => d.into(),
            HypernetError::Field(f) => f.into(),
            HypernetError::Index { .. } | HypernetError::UnknownRegularization(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Divergence { .. } => CliError::Numeric(e.to_string()),
            TrainError::Config(_) | TrainError::ZeroSchedule => CliError::Usage(e.to_string()),
            TrainError::Hypernet(h) => h.into(),
            TrainError::Field(f) => f.into(),
            TrainError::Diff(d) => d.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<InversionError> for CliError {
    fn from(e: InversionError) -> Self {
        match e {
            InversionError::Divergence { .. } => CliError::Numeric(e.to_string()),
            InversionError::ObservationDims { .. } | InversionError::NoCodes => CliError::Data(e.to_string()),
            InversionError::Hypernet(h) => h.into(),
            InversionError::Field(f) => f.into(),
            InversionError::Metric(m) => m.into(),
            InversionError::Diff(d) => d.into(),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::Csv(_) | SamplerError::Io { .. } | SamplerError::TooFewCodes(_) => {
                CliError::Data(e.to_string())
            }
            SamplerError::Hypernet(h) => h.into(),
            _ => CliError::Usage(e.to_string()),
        }
    }
}
