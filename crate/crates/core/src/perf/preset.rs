use std::fmt::Write as _;

use super::PerfError;

/// Analytic device model. The shipped values are illustrative calibrations
/// for relative comparisons, not measurements of real boards.
#[derive(Debug, Clone, PartialEq)]
pub struct DevicePreset {
    pub name: String,
    pub clock_hz: f64,
    pub macs_per_cycle: u64,
    pub bytes_per_cycle_per_bank: f64,
    pub n_banks_max: usize,
    pub static_watts: f64,
    pub joules_per_flop: f64,
    pub joules_per_byte: f64,
}

impl DevicePreset {
    pub fn validate(&self) -> Result<(), PerfError> {
        let bad = |what: &str| Err(PerfError::InvalidPreset(format!("{}: {what}", self.name)));
        if self.name.trim().is_empty() || self.name.contains(',') {
            return bad("name must be non-empty and comma-free");
        }
        if !(self.clock_hz.is_finite() && self.clock_hz > 0.0) {
            return bad("clock_hz must be positive");
        }
        if self.macs_per_cycle == 0 {
            return bad("macs_per_cycle must be positive");
        }
        if !(self.bytes_per_cycle_per_bank.is_finite() && self.bytes_per_cycle_per_bank > 0.0) {
            return bad("bytes_per_cycle_per_bank must be positive");
        }
        if self.n_banks_max == 0 {
            return bad("n_banks_max must be positive");
        }
        for (key, v) in [
            ("static_watts", self.static_watts),
            ("joules_per_flop", self.joules_per_flop),
            ("joules_per_byte", self.joules_per_byte),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(&format!("{key} must be finite and non-negative"));
            }
        }
        Ok(())
    }

    /// Parses the flat `key=value` preset format (`#` starts a comment).
    pub fn parse(text: &str) -> Result<Self, PerfError> {
        let mut name = None;
        let mut nums = std::collections::HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| PerfError::PresetParse { line: idx + 1, msg };
            let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected key=value, got '{line}'")))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "name" => name = Some(v.to_string()),
                "clock_hz" | "macs_per_cycle" | "bytes_per_cycle_per_bank" | "n_banks_max"
                | "static_watts" | "joules_per_flop" | "joules_per_byte" => {
                    let x: f64 = v.parse().map_err(|_| err(format!("{k}={v} is not a number")))?;
                    nums.insert(k, x);
                }
                other => return Err(err(format!("unknown key '{other}'"))),
            }
        }
        let get = |k: &str| {
            nums.get(k).copied().ok_or_else(|| PerfError::PresetParse { line: 0, msg: format!("missing key '{k}'") })
        };
        let int = |k: &str| -> Result<u64, PerfError> {
            let v = get(k)?;
            if v.fract() != 0.0 || v < 0.0 {
                return Err(PerfError::PresetParse { line: 0, msg: format!("{k} must be a whole number") });
            }
            Ok(v as u64)
        };
        let preset = DevicePreset {
            name: name.ok_or_else(|| PerfError::PresetParse { line: 0, msg: "missing key 'name'".into() })?,
            clock_hz: get("clock_hz")?,
            macs_per_cycle: int("macs_per_cycle")?,
            bytes_per_cycle_per_bank: get("bytes_per_cycle_per_bank")?,
            n_banks_max: int("n_banks_max")? as usize,
            static_watts: get("static_watts")?,
            joules_per_flop: get("joules_per_flop")?,
            joules_per_byte: get("joules_per_byte")?,
        };
        preset.validate()?;
        Ok(preset)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "name={}", self.name);
        let _ = writeln!(s, "clock_hz={}", self.clock_hz);
        let _ = writeln!(s, "macs_per_cycle={}", self.macs_per_cycle);
        let _ = writeln!(s, "bytes_per_cycle_per_bank={}", self.bytes_per_cycle_per_bank);
        let _ = writeln!(s, "n_banks_max={}", self.n_banks_max);
        let _ = writeln!(s, "static_watts={}", self.static_watts);
        let _ = writeln!(s, "joules_per_flop={:e}", self.joules_per_flop);
        let _ = writeln!(s, "joules_per_byte={:e}", self.joules_per_byte);
        s
    }

    /// Large HBM-attached FPGA card.
    pub fn alveo_like() -> Self {
        Self {
            name: "alveo-like".into(),
            clock_hz: 300e6,
            macs_per_cycle: 1024,
            bytes_per_cycle_per_bank: 64.0,
            n_banks_max: 32,
            static_watts: 25.0,
            joules_per_flop: 10e-12,
            joules_per_byte: 50e-12,
        }
    }

    /// Embedded FPGA SoM with DDR4.
    pub fn kria_like() -> Self {
        Self {
            name: "kria-like".into(),
            clock_hz: 250e6,
            macs_per_cycle: 256,
            bytes_per_cycle_per_bank: 16.0,
            n_banks_max: 4,
            static_watts: 4.0,
            joules_per_flop: 12e-12,
            joules_per_byte: 80e-12,
        }
    }

    /// 8-core server CPU, all cores vectorized.
    pub fn xeon_like() -> Self {
        Self {
            name: "xeon-like".into(),
            clock_hz: 2.1e9,
            macs_per_cycle: 128,
            bytes_per_cycle_per_bank: 8.0,
            n_banks_max: 4,
            static_watts: 60.0,
            joules_per_flop: 60e-12,
            joules_per_byte: 150e-12,
        }
    }

    /// 4-core embedded ARM CPU.
    pub fn arm_like() -> Self {
        Self {
            name: "arm-like".into(),
            clock_hz: 1.2e9,
            macs_per_cycle: 16,
            bytes_per_cycle_per_bank: 4.0,
            n_banks_max: 4,
            static_watts: 2.5,
            joules_per_flop: 30e-12,
            joules_per_byte: 120e-12,
        }
    }

    pub fn builtin() -> Vec<Self> {
        vec![Self::alveo_like(), Self::kria_like(), Self::xeon_like(), Self::arm_like()]
    }

    pub fn builtin_named(name: &str) -> Option<Self> {
        Self::builtin().into_iter().find(|p| p.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_valid_and_round_trip() {
        for p in DevicePreset::builtin() {
            p.validate().unwrap();
            assert_eq!(DevicePreset::parse(&p.to_text()).unwrap(), p);
        }
        assert!(DevicePreset::builtin_named("kria-like").is_some());
        assert!(DevicePreset::builtin_named("tpu").is_none());
    }

    #[test]
    fn parse_errors() {
        let text = DevicePreset::arm_like().to_text();
        assert!(matches!(
            DevicePreset::parse(&text.replace("clock_hz=1200000000", "clock_hz=fast")),
            Err(PerfError::PresetParse { line: 2, .. })
        ));
        assert!(matches!(
            DevicePreset::parse(&text.replace("n_banks_max=4", "")),
            Err(PerfError::PresetParse { .. })
        ));
        assert!(matches!(
            DevicePreset::parse(&format!("{text}colour=red\n")),
            Err(PerfError::PresetParse { .. })
        ));
        assert!(matches!(
            DevicePreset::parse(&text.replace("static_watts=2.5", "static_watts=-1")),
            Err(PerfError::InvalidPreset(_))
        ));
        let with_comment = format!("# illustrative\n{text}");
        assert!(DevicePreset::parse(&with_comment).is_ok());
    }
}
