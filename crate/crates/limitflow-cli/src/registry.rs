//! Experiment ids, their config blocks and default tolerances.

use crate::RunError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub id: &'static str,
    /// Subcommand that runs it.
    pub command: &'static str,
    /// Key of its block in the run config.
    pub section: &'static str,
    pub summary: &'static str,
    /// Trend tolerance used by the experiment's verdicts, when it takes one.
    pub default_tol: Option<f64>,
}

/// Sorted by id.
pub const ENTRIES: &[Entry] = &[
    Entry {
        id: "classical-limit.heat",
        command: "classical-limit",
        section: "classical_limit",
        summary: "heat-transform identity defect and soft transitivity of the coherent-state system",
        default_tol: Some(1e-2),
    },
    Entry {
        id: "classical-limit.ho",
        command: "classical-limit",
        section: "classical_limit",
        summary: "harmonic-oscillator Husimi evolution against the exact phase-space rotation",
        default_tol: None,
    },
    Entry {
        id: "classical-limit.lindblad",
        command: "classical-limit",
        section: "classical_limit",
        summary: "damped-oscillator Lindblad first-moment flow and the Im M convention",
        default_tol: None,
    },
    Entry {
        id: "diagnostics",
        command: "diagnostics",
        section: "diagnostics",
        summary: "exactness of spin-chain embeddings and wavelet isometries; zero basic-net tables",
        default_tol: Some(1e-12),
    },
    Entry {
        id: "evolution-check",
        command: "evolution-check",
        section: "evolution_check",
        summary: "semigroup and resolvent checkers on a seeded constant-system ensemble",
        default_tol: Some(1e-8),
    },
    Entry {
        id: "fermion-rg",
        command: "fermion-rg",
        section: "fermion_rg",
        summary: "wavelet RG of the lattice Dirac fermion: kernels, covariance, dynamics",
        default_tol: Some(1e-2),
    },
    Entry {
        id: "mean-field",
        command: "mean-field",
        section: "mean_field",
        summary: "mean-field product defects, Bloch bracket, flip generator and gradient",
        default_tol: Some(1e-2),
    },
    Entry {
        id: "spin-chain",
        command: "spin-chain",
        section: "spin_chain",
        summary: "local derivations, boundary-condition defects and Heisenberg dynamics",
        default_tol: None,
    },
    Entry {
        id: "thompson",
        command: "fermion-rg",
        section: "fermion_rg",
        summary: "Thompson-group action at the minimal resolving scale",
        default_tol: None,
    },
    Entry {
        id: "trotter",
        command: "trotter",
        section: "trotter",
        summary: "Trotter product-formula errors for commuting and seeded pairs",
        default_tol: None,
    },
];

pub fn ids() -> Vec<&'static str> {
    ENTRIES.iter().map(|e| e.id).collect()
}

pub fn lookup(id: &str) -> Result<&'static Entry, RunError> {
    ENTRIES.iter().find(|e| e.id == id).ok_or_else(|| RunError::UnknownExperiment {
        id: id.to_string(),
        hint: nearest(id),
    })
}

/// Ids run by a subcommand, or the single id itself.
pub fn resolve(name: &str) -> Result<Vec<&'static str>, RunError> {
    let by_command: Vec<&'static str> =
        ENTRIES.iter().filter(|e| e.command == name && e.id != "thompson").map(|e| e.id).collect();
    if !by_command.is_empty() {
        return Ok(by_command);
    }
    lookup(name).map(|e| vec![e.id])
}

/// Closest id by edit distance.
pub fn nearest(name: &str) -> String {
    ENTRIES
        .iter()
        .map(|e| (strsim::levenshtein(name, e.id), e.id))
        .min()
        .map(|(_, id)| id.to_string())
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_sorted_and_unique() {
        let ids = ids();
        assert!(ids.len() >= 10);
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn resolution_by_command_and_id() {
        assert_eq!(resolve("classical-limit").unwrap().len(), 3);
        assert_eq!(resolve("fermion-rg").unwrap(), vec!["fermion-rg"]);
        assert_eq!(resolve("thompson").unwrap(), vec!["thompson"]);
        assert!(resolve("spin").is_err());
    }

    #[test]
    fn nearest_match_examples() {
        assert_eq!(nearest("trotteer"), "trotter");
        assert_eq!(nearest("mean_field"), "mean-field");
        match lookup("spin-chian") {
            Err(RunError::UnknownExperiment { hint, .. }) => assert_eq!(hint, "spin-chain"),
            other => panic!("{other:?}"),
        }
    }
}
