//! Pseudopotential catalog lookup.

use std::collections::BTreeMap;

use super::QeError;

const BUILTIN: &str = include_str!("../../data/pseudopotentials.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoCatalog {
    by_element: BTreeMap<String, String>,
}

impl PseudoCatalog {
    /// One file name per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, QeError> {
        let mut by_element: BTreeMap<String, String> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let prefix = line.split('_').next().unwrap_or("");
            if prefix.is_empty() || !prefix.chars().all(|c| c.is_ascii_lowercase()) || !line.contains('_') {
                return Err(QeError::Syntax {
                    line: i + 1,
                    column: 1,
                    message: format!("catalog entry {line:?} does not start with '<element>_'"),
                });
            }
            let slot = by_element.entry(prefix.to_string()).or_default();
            if line > slot.as_str() {
                *slot = line.to_string();
            }
        }
        Ok(PseudoCatalog { by_element })
    }

    pub fn builtin() -> Self {
        Self::parse(BUILTIN).expect("shipped catalog parses")
    }

    pub fn len(&self) -> usize {
        self.by_element.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_element.is_empty()
    }
}

pub fn find_pseudopotential(element: &str, catalog: &PseudoCatalog) -> Result<String, QeError> {
    catalog
        .by_element
        .get(&element.to_ascii_lowercase())
        .cloned()
        .ok_or_else(|| QeError::ElementNotInCatalog(element.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_lookups() {
        let cat = PseudoCatalog::builtin();
        assert_eq!(find_pseudopotential("Pt", &cat).unwrap(), "pt_pbe_v1.4.uspp.F.UPF");
        let li = find_pseudopotential("Li", &cat).unwrap();
        assert_eq!(li, find_pseudopotential("Li", &cat).unwrap());
        assert!(matches!(find_pseudopotential("Xx", &cat), Err(QeError::ElementNotInCatalog(_))));
        // every Sol27LC element plus the CO adsorbate
        for el in [
            "Li", "Na", "K", "Rb", "Ca", "Sr", "Ba", "V", "Nb", "Ta", "Mo", "W", "Fe", "Rh", "Ir",
            "Ni", "Pd", "Pt", "Cu", "Ag", "Au", "Al", "Pb", "C", "Si", "Ge", "Sn", "O",
        ] {
            assert!(find_pseudopotential(el, &cat).is_ok(), "{el}");
        }
    }

    #[test]
    fn latest_version_wins() {
        let cat = PseudoCatalog::parse("fe_pbe_v1.2.uspp.F.UPF\nfe_pbe_v1.5.uspp.F.UPF\n# x\n").unwrap();
        assert_eq!(find_pseudopotential("Fe", &cat).unwrap(), "fe_pbe_v1.5.uspp.F.UPF");
        assert!(PseudoCatalog::parse("Fe.upf\n").is_err());
    }
}
