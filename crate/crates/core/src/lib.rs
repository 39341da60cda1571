//! Language models as stand-in informants for forced-choice linguistic
//! experiments: study definitions, prompt rendering, providers, cohort
//! runs, reply parsing and analysis.

pub mod analysis;
pub mod parse;
pub mod prompt;
pub mod provider;
pub mod report;
pub mod runner;
pub mod store;
pub mod study;

/// Study definitions shipped with the crate.
pub mod bundled {
    use crate::study::{study_from_json, Study, StudyError};

    /// Determiner choice in Spanish–English code-switched sentences.
    pub const CRUZ23: &str = include_str!("../studies/cruz23.json");
    /// Neologism detection in French sentences.
    pub const LOMBARD21: &str = include_str!("../studies/lombard21.json");

    pub fn cruz23() -> Result<Study, StudyError> {
        study_from_json(CRUZ23)
    }

    pub fn lombard21() -> Result<Study, StudyError> {
        study_from_json(LOMBARD21)
    }
}
