//! Built-in appliance catalog and JSON (de)serialization.
//!
//! The default catalog models a small office / studio mix: electronics on
//! switched-mode supplies (rich odd harmonics), motor loads with inrush
//! surges, and near-resistive heaters. A few entries are deliberately
//! near-duplicates of each other to stress classification, and the fridge
//! and freezer carry long inrush transients.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{format_err, param, Result};
use crate::simulate::{ApplianceSpec, GridSpec, Harmonic, TransientShape};

/// A named, versioned appliance collection, stored as JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Catalog {
    pub version: u32,
    /// Marks traces built from this catalog as simulator output.
    pub synthetic: bool,
    pub appliances: Vec<ApplianceSpec>,
}

pub const CATALOG_VERSION: u32 = 1;

impl Catalog {
    pub fn validate(&self) -> Result<()> {
        if self.version != CATALOG_VERSION {
            return Err(format_err(format!(
                "unsupported catalog version {}",
                self.version
            )));
        }
        if self.appliances.is_empty() {
            return Err(param("catalog has no appliances"));
        }
        for (i, spec) in self.appliances.iter().enumerate() {
            spec.validate()?;
            if spec.id != i as u32 {
                return Err(param(format!(
                    "catalog entry {i} has id {}; ids must be consecutive from 0",
                    spec.id
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path)?;
        serde_json::to_writer_pretty(BufWriter::new(f), self)
            .map_err(|e| format_err(format!("catalog encode: {e}")))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Catalog> {
        let f = File::open(path)?;
        let catalog: Catalog = serde_json::from_reader(BufReader::new(f))
            .map_err(|e| format_err(format!("catalog decode: {e}")))?;
        catalog.validate()?;
        Ok(catalog)
    }
}

/// Electrical family shaping the harmonic series of a catalog entry.
enum Family {
    /// Pure fundamental, unity power factor.
    Resistive,
    /// Switched-mode supply: strong odd harmonics from rectifier peaks.
    Smps,
    /// Induction motor: modest odd harmonics, lagging fundamental.
    Motor,
}

fn entry(
    id: u32,
    name: &str,
    watts: f64,
    family: Family,
    transient_cycles: u32,
    transient_shape: TransientShape,
    grid: &GridSpec,
) -> ApplianceSpec {
    let v = grid.voltage_rms_v;
    let sqrt2 = std::f64::consts::SQRT_2;
    // Only the fundamental carries real power; size it so mean(v * i)
    // equals the rated wattage.
    let harmonics = match family {
        Family::Resistive => {
            let a1 = sqrt2 * watts / v;
            vec![Harmonic {
                order: 1,
                amplitude_a: a1,
                phase_rad: 0.0,
            }]
        }
        Family::Smps => {
            let a1 = sqrt2 * watts / v;
            let fracs: [(u32, f64, f64); 4] = [
                (3, 0.80, std::f64::consts::PI),
                (5, 0.55, 0.0),
                (7, 0.35, std::f64::consts::PI),
                (9, 0.20, 0.0),
            ];
            let mut h = vec![Harmonic {
                order: 1,
                amplitude_a: a1,
                phase_rad: 0.0,
            }];
            h.extend(fracs.iter().map(|&(k, f, p)| Harmonic {
                order: k,
                amplitude_a: f * a1,
                phase_rad: p,
            }));
            h
        }
        Family::Motor => {
            let phi = 0.45f64; // lagging power-factor angle, cos(phi) ~ 0.90
            let a1 = sqrt2 * watts / (v * phi.cos());
            vec![
                Harmonic {
                    order: 1,
                    amplitude_a: a1,
                    phase_rad: -phi,
                },
                Harmonic {
                    order: 3,
                    amplitude_a: 0.18 * a1,
                    phase_rad: 1.0,
                },
                Harmonic {
                    order: 5,
                    amplitude_a: 0.07 * a1,
                    phase_rad: 2.0,
                },
            ]
        }
    };
    ApplianceSpec {
        id,
        name: name.to_string(),
        rated_power_w: watts,
        harmonics,
        power_jitter_rel: 0.02,
        transient_cycles,
        transient_shape,
        off_leakage_a: 0.002 + watts.sqrt() * 2e-4,
    }
}

fn surge(peak_multiple: f64, decay_per_cycle: f64) -> TransientShape {
    TransientShape::Surge {
        peak_multiple,
        decay_per_cycle,
    }
}

/// Eighteen-appliance desk-scale catalog sized for `grid`.
pub fn default_catalog(grid: &GridSpec) -> Catalog {
    use Family::*;
    let e = |id, name, w, fam, t, shape| entry(id, name, w, fam, t, shape, grid);
    let appliances = vec![
        e(0, "security_camera", 5.0, Smps, 2, TransientShape::Ramp),
        e(1, "wifi_router", 8.0, Smps, 1, TransientShape::Ramp),
        e(2, "led_lamp", 10.0, Smps, 1, TransientShape::Ramp),
        e(3, "phone_charger", 12.0, Smps, 1, TransientShape::Ramp),
        e(4, "monitor", 35.0, Smps, 3, TransientShape::Ramp),
        e(5, "humidifier", 40.0, Motor, 2, surge(2.0, 0.5)),
        e(6, "desk_fan", 45.0, Motor, 3, surge(2.5, 0.5)),
        e(7, "laptop", 60.0, Smps, 4, TransientShape::Ramp),
        e(8, "desktop_pc", 150.0, Smps, 5, TransientShape::Ramp),
        e(9, "television", 110.0, Smps, 3, TransientShape::Ramp),
        e(10, "fridge", 120.0, Motor, 12, surge(4.0, 0.6)),
        e(11, "freezer", 130.0, Motor, 10, surge(4.0, 0.6)),
        e(12, "projector", 220.0, Smps, 4, TransientShape::Ramp),
        e(13, "vacuum_robot_dock", 280.0, Motor, 6, surge(3.0, 0.5)),
        e(14, "microwave", 1100.0, Motor, 5, surge(3.5, 0.55)),
        e(15, "kettle", 1500.0, Resistive, 0, TransientShape::Ramp),
        e(16, "toaster", 900.0, Resistive, 1, surge(1.8, 0.5)),
        e(17, "space_heater", 2160.0, Resistive, 2, surge(1.6, 0.5)),
    ];
    Catalog {
        version: CATALOG_VERSION,
        synthetic: true,
        appliances,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_catalog_is_valid() {
        let cat = default_catalog(&GridSpec::default());
        assert_eq!(cat.appliances.len(), 18);
        cat.validate().unwrap();
    }

    #[test]
    fn transients_stay_well_under_thirty_cycles() {
        let cat = default_catalog(&GridSpec::default());
        let max = cat
            .appliances
            .iter()
            .map(|a| a.transient_cycles)
            .max()
            .unwrap();
        assert!(max <= 12, "longest transient {max}");
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("catalog.json");
        let cat = default_catalog(&GridSpec::default());
        cat.save(&path).unwrap();
        let back = Catalog::load(&path).unwrap();
        assert_eq!(cat.appliances, back.appliances);
        assert!(back.synthetic);
    }

    #[test]
    fn bad_version_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("catalog.json");
        let mut cat = default_catalog(&GridSpec::default());
        cat.version = 99;
        cat.save(&path).unwrap();
        let err = Catalog::load(&path).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
