use coopemit_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error in `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error("{path}:{line}: {reason}")]
    Schema { path: String, line: usize, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    /// 1 for anything the user can fix in their inputs, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical(_) => 2,
            _ => 1,
        }
    }
}

/// Core parameter errors map to the config key that produced them where the
/// name is known; everything else is a numerical failure.
impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match &e {
            CoreError::InvalidParameter { name, .. } => CliError::Config {
                key: config_key(name).into(),
                reason: e.to_string(),
            },
            CoreError::GridTooCoarse { .. } => CliError::Config {
                key: "grid_points".into(),
                reason: e.to_string(),
            },
            CoreError::WindowOverlap { .. } => CliError::Config {
                key: "windows_ns".into(),
                reason: e.to_string(),
            },
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

fn config_key(core_name: &str) -> &str {
    match core_name {
        "gamma" => "lifetime_ns",
        "gamma_d" => "dephasing_rate_per_ns",
        "gamma_p" => "pump_rate_per_ns",
        "gamma_sr" => "collective_rate_per_ns",
        "pulse_fwhm" => "pulse_fwhm_ns",
        "period" => "period_ns",
        "pulse_area" => "pulse_area_rad",
        "rabi" => "rabi_rad_per_ns",
        "window" => "windows_ns",
        "tau_span" => "tau_span_ns",
        "hom_delay_ns" => "hom_delay_ns",
        "polarization_overlap" => "polarization_overlap",
        "fwhm" => "irf_fwhm_ns",
        other => other,
    }
}
