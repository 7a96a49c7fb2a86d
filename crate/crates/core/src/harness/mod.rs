//! Toy corpus generation, corpus import and the training-condition ×
//! evaluation-condition experiment matrix.

pub mod fsc;
pub mod matrix;
pub mod report;
pub mod toy;

pub use fsc::{import_fsc, FscImport};
pub use matrix::{
    run_matrix, CellResult, CorpusSource, ExperimentPlan, MatrixOutcome, ResultsTable, StageCounts, TrainingCondition,
};
pub use report::{emit_enhancement_report, emit_report, EnhancementReport};
pub use toy::{synthesize_toy_corpus, toy_noise_bank, ToyCorpus};

use crate::intent::{IntentLabel, LabelMap};

/// The 31 (action, object, location) triples of the reference corpus.
const FSC_INTENTS: [(&str, &str, &str); 31] = [
    ("activate", "lamp", "none"),
    ("activate", "lights", "bedroom"),
    ("activate", "lights", "kitchen"),
    ("activate", "lights", "none"),
    ("activate", "lights", "washroom"),
    ("activate", "music", "none"),
    ("bring", "juice", "none"),
    ("bring", "newspaper", "none"),
    ("bring", "shoes", "none"),
    ("bring", "socks", "none"),
    ("change language", "Chinese", "none"),
    ("change language", "English", "none"),
    ("change language", "German", "none"),
    ("change language", "Korean", "none"),
    ("change language", "none", "none"),
    ("deactivate", "lamp", "none"),
    ("deactivate", "lights", "bedroom"),
    ("deactivate", "lights", "kitchen"),
    ("deactivate", "lights", "none"),
    ("deactivate", "lights", "washroom"),
    ("deactivate", "music", "none"),
    ("decrease", "heat", "bedroom"),
    ("decrease", "heat", "kitchen"),
    ("decrease", "heat", "none"),
    ("decrease", "heat", "washroom"),
    ("decrease", "volume", "none"),
    ("increase", "heat", "bedroom"),
    ("increase", "heat", "kitchen"),
    ("increase", "heat", "none"),
    ("increase", "heat", "washroom"),
    ("increase", "volume", "none"),
];

pub fn fsc_intents() -> Vec<IntentLabel> {
    FSC_INTENTS.iter().map(|(a, o, l)| IntentLabel::new(a, o, l)).collect()
}

pub fn fsc_label_map() -> LabelMap {
    LabelMap::from_labels(fsc_intents()).expect("static intent list is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_intents_are_distinct() {
        assert_eq!(fsc_label_map().len(), 31);
    }
}
