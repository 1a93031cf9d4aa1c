//! Flat experiment configuration. Every physical key carries its unit in the
//! name; unknown keys are rejected.

use std::f64::consts::PI;
use std::path::Path;

use coopemit_core::dynamics::{DriveProtocol, EmissionModel, EmitterParams, Pulse};
use coopemit_core::instrument::IrfModel;
use coopemit_core::interference::HomConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveKind {
    Incoherent,
    Coherent,
    Pulsed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    Ground,
    Excited,
    DoublyExcited,
}

/// Keys that a sweep may vary.
pub const SWEEPABLE: [&str; 8] = [
    "pulse_area_rad",
    "rabi_rad_per_ns",
    "pump_rate_per_ns",
    "dephasing_rate_per_ns",
    "lifetime_ns",
    "detuning_rad_per_ns",
    "relative_phase_rad",
    "polarization_overlap",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: String,
    pub lifetime_ns: f64,
    pub dephasing_rate_per_ns: f64,
    pub pump_rate_per_ns: f64,
    /// Superradiant model only; absent means twice the single-emitter rate.
    pub collective_rate_per_ns: Option<f64>,

    pub drive: DriveKind,
    pub rabi_rad_per_ns: f64,
    /// Applied to both emitters with opposite signs (`+d/2`, `-d/2`).
    pub detuning_rad_per_ns: f64,
    pub relative_phase_rad: f64,
    pub phase_averaged: bool,
    pub pulse_area_rad: f64,
    pub pulse_fwhm_ns: f64,
    pub period_ns: f64,

    pub hom_delay_ns: f64,
    pub polarization_overlap: f64,

    /// Zero disables convolution.
    pub irf_fwhm_ns: f64,
    pub tau_max_ns: f64,
    pub grid_points: usize,
    pub tau_span_ns: f64,
    pub windows_ns: Vec<f64>,
    pub t_max_ns: f64,
    pub tail_start_ns: f64,
    pub initial_state: InitialState,

    /// Zero disables sampled count histograms.
    pub total_counts: u64,
    pub seed: u64,

    pub sweep_key: String,
    pub sweep_values: Vec<f64>,

    pub histogram_path: String,
    pub fit_gamma_init_per_ns: f64,
    pub fit_gamma_d_init_per_ns: f64,

    pub g2_zero: f64,
    pub g2_single_zero: f64,

    /// Where files go; not part of the experiment, so excluded from the hash.
    #[serde(skip_serializing)]
    pub output_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: "cooperative".into(),
            lifetime_ns: 0.643,
            dephasing_rate_per_ns: 1.0 / 0.280,
            pump_rate_per_ns: 0.0,
            collective_rate_per_ns: None,
            drive: DriveKind::Pulsed,
            rabi_rad_per_ns: 0.0,
            detuning_rad_per_ns: 0.0,
            relative_phase_rad: 0.0,
            phase_averaged: true,
            pulse_area_rad: PI / 2.0,
            pulse_fwhm_ns: 0.040,
            period_ns: 12.44,
            hom_delay_ns: 12.44,
            polarization_overlap: 1.0,
            irf_fwhm_ns: 0.240,
            tau_max_ns: 5.0,
            grid_points: 2001,
            tau_span_ns: 25.0,
            windows_ns: vec![0.3, 10.0],
            t_max_ns: 8.0,
            tail_start_ns: 2.0,
            initial_state: InitialState::Ground,
            total_counts: 0,
            seed: 0,
            sweep_key: "pulse_area_rad".into(),
            sweep_values: vec![PI, 2.0 * PI, 3.0 * PI],
            histogram_path: String::new(),
            fit_gamma_init_per_ns: 1.0 / 0.643,
            fit_gamma_d_init_per_ns: 1.0,
            g2_zero: 0.87,
            g2_single_zero: 0.06,
            output_dir: "out".into(),
        }
    }
}

fn bad(key: &str, reason: impl Into<String>) -> CliError {
    CliError::Config {
        key: key.into(),
        reason: reason.into(),
    }
}

fn positive(key: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(key, format!("{v} must be positive and finite")))
    }
}

fn non_negative(key: &str, v: f64) -> Result<(), CliError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(key, format!("{v} must be finite and >= 0")))
    }
}

fn finite(key: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(bad(key, format!("{v} must be finite")))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            // toml names the offending key in the message for unknown fields.
            let key = msg
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "<file>".into());
            bad(&key, msg.trim())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad("--config", format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model()?;
        positive("lifetime_ns", self.lifetime_ns)?;
        non_negative("dephasing_rate_per_ns", self.dephasing_rate_per_ns)?;
        non_negative("pump_rate_per_ns", self.pump_rate_per_ns)?;
        if let Some(g) = self.collective_rate_per_ns {
            if self.model()? != EmissionModel::Superradiant {
                return Err(bad("collective_rate_per_ns", "only valid for the superradiant model"));
            }
            non_negative("collective_rate_per_ns", g)?;
        }
        finite("rabi_rad_per_ns", self.rabi_rad_per_ns)?;
        finite("detuning_rad_per_ns", self.detuning_rad_per_ns)?;
        finite("relative_phase_rad", self.relative_phase_rad)?;
        finite("pulse_area_rad", self.pulse_area_rad)?;
        positive("pulse_fwhm_ns", self.pulse_fwhm_ns)?;
        positive("period_ns", self.period_ns)?;
        if self.drive == DriveKind::Pulsed {
            self.pulse()?;
        }
        if self.drive == DriveKind::Incoherent && self.pump_rate_per_ns == 0.0 {
            return Err(bad("pump_rate_per_ns", "incoherent drive needs a positive pump rate"));
        }
        positive("hom_delay_ns", self.hom_delay_ns)?;
        if !(0.0..=1.0).contains(&self.polarization_overlap) {
            return Err(bad("polarization_overlap", "must lie in [0, 1]"));
        }
        non_negative("irf_fwhm_ns", self.irf_fwhm_ns)?;
        positive("tau_max_ns", self.tau_max_ns)?;
        if self.grid_points < 3 {
            return Err(bad("grid_points", "need at least 3 points"));
        }
        if let Some(irf) = self.irf()? {
            let spacing = 2.0 * self.tau_max_ns / (self.grid_points - 1) as f64;
            if spacing > irf.fwhm / 10.0 {
                return Err(bad(
                    "grid_points",
                    format!("spacing {spacing} ns exceeds a tenth of irf_fwhm_ns"),
                ));
            }
        }
        positive("tau_span_ns", self.tau_span_ns)?;
        if self.drive == DriveKind::Pulsed && self.tau_span_ns < self.period_ns {
            return Err(bad("tau_span_ns", "must cover at least one period"));
        }
        if self.windows_ns.is_empty() {
            return Err(bad("windows_ns", "need at least one window"));
        }
        for w in &self.windows_ns {
            positive("windows_ns", *w)?;
            if *w > self.period_ns {
                return Err(bad("windows_ns", format!("{w} ns exceeds period_ns")));
            }
        }
        positive("t_max_ns", self.t_max_ns)?;
        non_negative("tail_start_ns", self.tail_start_ns)?;
        if self.tail_start_ns >= self.t_max_ns {
            return Err(bad("tail_start_ns", "must be below t_max_ns"));
        }
        if !SWEEPABLE.contains(&self.sweep_key.as_str()) {
            return Err(bad("sweep_key", format!("`{}` is not one of {SWEEPABLE:?}", self.sweep_key)));
        }
        for v in &self.sweep_values {
            finite("sweep_values", *v)?;
        }
        if self.sweep_values.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(bad("sweep_values", "must increase strictly"));
        }
        positive("fit_gamma_init_per_ns", self.fit_gamma_init_per_ns)?;
        positive("fit_gamma_d_init_per_ns", self.fit_gamma_d_init_per_ns)?;
        positive("g2_zero", self.g2_zero)?;
        if !(0.0..1.0).contains(&self.g2_single_zero) {
            return Err(bad("g2_single_zero", "must lie in [0, 1)"));
        }
        if self.output_dir.is_empty() {
            return Err(bad("output_dir", "must not be empty"));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<EmissionModel, CliError> {
        self.model.parse().map_err(|_| {
            bad(
                "model",
                format!("`{}` is not single, independent, cooperative or superradiant", self.model),
            )
        })
    }

    pub fn params(&self) -> Result<EmitterParams, CliError> {
        let p = EmitterParams::new(1.0 / self.lifetime_ns, self.pump_rate_per_ns, self.dephasing_rate_per_ns)
            .map_err(|e| bad("lifetime_ns", e.to_string()))?;
        match self.collective_rate_per_ns {
            Some(g) => p.with_collective_rate(g).map_err(|e| bad("collective_rate_per_ns", e.to_string())),
            None => Ok(p),
        }
    }

    fn detunings(&self) -> [f64; 2] {
        [self.detuning_rad_per_ns / 2.0, -self.detuning_rad_per_ns / 2.0]
    }

    pub fn pulse(&self) -> Result<Pulse, CliError> {
        let mut p = Pulse::new(self.pulse_area_rad, self.pulse_fwhm_ns, self.period_ns)
            .map_err(|e| bad("period_ns", e.to_string()))?;
        p.detuning = self.detunings();
        p.relative_phase = self.relative_phase_rad;
        p.phase_averaged = self.phase_averaged;
        Ok(p)
    }

    pub fn drive(&self) -> Result<DriveProtocol, CliError> {
        Ok(match self.drive {
            DriveKind::Incoherent => DriveProtocol::IncoherentCw,
            DriveKind::Coherent => DriveProtocol::CoherentCw {
                rabi: self.rabi_rad_per_ns,
                detuning: self.detunings(),
                relative_phase: self.relative_phase_rad,
            },
            DriveKind::Pulsed => DriveProtocol::CoherentPulsed(self.pulse()?),
        })
    }

    pub fn hom(&self) -> Result<HomConfig, CliError> {
        HomConfig::new(self.hom_delay_ns, self.polarization_overlap).map_err(|e| bad("hom_delay_ns", e.to_string()))
    }

    pub fn irf(&self) -> Result<Option<IrfModel>, CliError> {
        if self.irf_fwhm_ns == 0.0 {
            return Ok(None);
        }
        IrfModel::new(self.irf_fwhm_ns)
            .map(Some)
            .map_err(|e| bad("irf_fwhm_ns", e.to_string()))
    }

    /// Symmetric delay grid `[-tau_max_ns, tau_max_ns]`.
    pub fn tau_grid(&self) -> Vec<f64> {
        coopemit_core::correlators::uniform_grid(-self.tau_max_ns, self.tau_max_ns, self.grid_points)
    }

    /// Copy with one sweepable key replaced.
    pub fn with_value(&self, key: &str, value: f64) -> Result<Self, CliError> {
        let mut c = self.clone();
        match key {
            "pulse_area_rad" => c.pulse_area_rad = value,
            "rabi_rad_per_ns" => c.rabi_rad_per_ns = value,
            "pump_rate_per_ns" => c.pump_rate_per_ns = value,
            "dephasing_rate_per_ns" => c.dephasing_rate_per_ns = value,
            "lifetime_ns" => c.lifetime_ns = value,
            "detuning_rad_per_ns" => c.detuning_rad_per_ns = value,
            "relative_phase_rad" => c.relative_phase_rad = value,
            "polarization_overlap" => c.polarization_overlap = value,
            _ => return Err(bad("sweep_key", format!("`{key}` cannot be swept"))),
        }
        c.validate()?;
        Ok(c)
    }

    /// Compact JSON with keys in declaration order and shortest round-trip floats.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of [`Self::canonical_json`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
        let c = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
    }

    #[test]
    fn unknown_key_is_named() {
        match ExperimentConfig::from_toml_str("lifetime = 0.6\n") {
            Err(CliError::Config { key, .. }) => assert_eq!(key, "lifetime"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_values_name_their_key() {
        for (text, key) in [
            ("lifetime_ns = -1.0", "lifetime_ns"),
            ("model = \"triple\"", "model"),
            ("windows_ns = [20.0]", "windows_ns"),
            ("drive = \"incoherent\"", "pump_rate_per_ns"),
            ("collective_rate_per_ns = 2.0", "collective_rate_per_ns"),
            ("grid_points = 101", "grid_points"),
        ] {
            match ExperimentConfig::from_toml_str(text) {
                Err(CliError::Config { key: k, .. }) => assert_eq!(k, key, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let b = a.with_value("pulse_area_rad", 1.0).unwrap();
        assert_eq!(a.hash(), ExperimentConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
        let moved = ExperimentConfig {
            output_dir: "elsewhere".into(),
            ..a.clone()
        };
        assert_eq!(a.hash(), moved.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn sweep_override_revalidates() {
        let c = ExperimentConfig::default();
        assert!(c.with_value("lifetime_ns", 0.0).is_err());
        assert!(c.with_value("seed", 1.0).is_err());
    }
}
