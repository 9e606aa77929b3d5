//! The example systems shipped with the library.

use crate::config::{parse_config, ConfigError, SystemConfig};

/// `(name, config source)` for every bundled system.
pub const SYSTEMS: [(&str, &str); 6] = [
    ("free", include_str!("../systems/free.cfg")),
    ("uniform", include_str!("../systems/uniform.cfg")),
    ("charged", include_str!("../systems/charged.cfg")),
    ("relativistic", include_str!("../systems/relativistic.cfg")),
    ("galilean", include_str!("../systems/galilean.cfg")),
    ("circle", include_str!("../systems/circle.cfg")),
];

pub fn source(name: &str) -> Option<&'static str> {
    SYSTEMS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn load(name: &str) -> Option<Result<SystemConfig, ConfigError>> {
    source(name).map(parse_config)
}

pub fn load_all() -> Result<Vec<SystemConfig>, ConfigError> {
    SYSTEMS.iter().map(|(_, s)| parse_config(s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_bundled_system_validates() {
        for (name, src) in SYSTEMS {
            let cfg = parse_config(src).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(cfg.name, name);
            assert!(cfg.curve.is_some() && cfg.section.is_some(), "{name}");
        }
    }

    #[test]
    fn circle_curve_crosses_the_junction() {
        let cfg = load("circle").unwrap().unwrap();
        let charts: Vec<usize> = cfg.curve.unwrap().segments().iter().map(|s| s.chart).collect();
        assert_eq!(charts, vec![0, 1]);
    }
}
