//! Device presets and reference scratchpad footprints.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DtbError, Result};
use crate::planner::DeviceModel;

/// Preset table compiled into the binary.
pub const BUILTIN_PRESETS: &str = include_str!("../presets/devices.toml");

/// Binary size unit used for display.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SizeUnit {
    Kilobytes,
    Megabytes,
}

impl SizeUnit {
    fn bytes(self) -> f64 {
        match self {
            SizeUnit::Kilobytes => 1024.0,
            SizeUnit::Megabytes => 1024.0 * 1024.0,
        }
    }

    fn label(self) -> &'static str {
        match self {
            SizeUnit::Kilobytes => "KB",
            SizeUnit::Megabytes => "MB",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SizeFormat {
    pub unit: SizeUnit,
    pub decimals: usize,
}

impl SizeFormat {
    pub const MB2: SizeFormat = SizeFormat {
        unit: SizeUnit::Megabytes,
        decimals: 2,
    };
}

impl FromStr for SizeFormat {
    type Err = DtbError;

    /// `"MB:2"`, `"KB:0"`, ...
    fn from_str(s: &str) -> Result<Self> {
        let bad = || DtbError::Parse(format!("bad display format {s:?}, expected e.g. \"MB:2\""));
        let (unit, decimals) = s.split_once(':').ok_or_else(bad)?;
        let unit = match unit.trim() {
            "KB" => SizeUnit::Kilobytes,
            "MB" => SizeUnit::Megabytes,
            _ => return Err(bad()),
        };
        let decimals = decimals.trim().parse().map_err(|_| bad())?;
        Ok(SizeFormat { unit, decimals })
    }
}

/// `17.30 MB`-style rendering of a byte count.
pub fn format_bytes(bytes: u64, format: SizeFormat) -> String {
    let value = bytes as f64 / format.unit.bytes();
    format!("{value:.prec$} {}", format.unit.label(), prec = format.decimals)
}

/// A byte count together with how it is usually quoted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Footprint {
    pub bytes: u64,
    pub format: SizeFormat,
}

impl fmt::Display for Footprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_bytes(self.bytes, self.format))
    }
}

/// Scratchpad consumed by the j2d5pt double-precision kernels of two
/// published temporal blocking code generators.
pub const SOTA_FOOTPRINTS: [(&str, Footprint); 2] = [
    (
        "StencilGen",
        Footprint {
            bytes: 4_529_848,
            format: SizeFormat::MB2,
        },
    ),
    (
        "AN5D",
        Footprint {
            bytes: 905_970,
            format: SizeFormat {
                unit: SizeUnit::Megabytes,
                decimals: 3,
            },
        },
    ),
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub workers: usize,
    pub scratchpad_bytes_per_worker: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display: Option<String>,
}

impl Preset {
    pub fn device(&self) -> Result<DeviceModel> {
        DeviceModel::new(&self.name, self.workers, self.scratchpad_bytes_per_worker)
    }

    pub fn size_format(&self) -> Result<SizeFormat> {
        self.display.as_deref().map_or(Ok(SizeFormat::MB2), str::parse)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresetTable {
    #[serde(rename = "preset")]
    pub presets: Vec<Preset>,
}

/// One line of the preset listing.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PresetRow {
    pub name: String,
    pub workers: usize,
    pub scratchpad_bytes_per_worker: u64,
    pub total_bytes: u64,
    pub total: String,
}

impl PresetTable {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_PRESETS).expect("built-in preset table parses")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let table: PresetTable =
            toml::from_str(text).map_err(|e| DtbError::Parse(format!("preset file: {e}")))?;
        for preset in &table.presets {
            preset.device()?;
            preset.size_format()?;
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Case-insensitive lookup.
    pub fn device(&self, name: &str) -> Result<DeviceModel> {
        self.presets
            .iter()
            .find(|p| p.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| {
                let known: Vec<&str> = self.presets.iter().map(|p| p.name.as_str()).collect();
                DtbError::InvalidArgument(format!("unknown device {name:?}; known: {}", known.join(", ")))
            })?
            .device()
    }

    pub fn rows(&self) -> Vec<PresetRow> {
        self.presets
            .iter()
            .map(|p| {
                let total_bytes = p.workers as u64 * p.scratchpad_bytes_per_worker;
                let format = p.size_format().expect("validated at parse time");
                PresetRow {
                    name: p.name.clone(),
                    workers: p.workers,
                    scratchpad_bytes_per_worker: p.scratchpad_bytes_per_worker,
                    total_bytes,
                    total: format_bytes(total_bytes, format),
                }
            })
            .collect()
    }
}
