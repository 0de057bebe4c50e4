//! CSV output. Every table is small and numeric, so rows are formatted
//! directly; floats use the shortest round-trip representation.

use std::fmt::Write;

use bilinear_core::ngram::NgramTable;
use bilinear_core::spectral::SimilarityReport;

pub fn sweep_csv(rows: &[(usize, f64)]) -> String {
    let mut s = String::from("k,accuracy\n");
    for (k, acc) in rows {
        writeln!(s, "{k},{acc}").unwrap();
    }
    s
}

pub fn similarity_csv(report: &SimilarityReport) -> String {
    let mut s = String::from("class,rank,similarity,match_index\n");
    for e in &report.entries {
        writeln!(
            s,
            "{},{},{},{}",
            e.class, e.rank, e.similarity, e.match_index
        )
        .unwrap();
    }
    s
}

pub fn bigram_csv(table: &NgramTable) -> String {
    let mut s = String::from("rank,context,output,score\n");
    for (rank, e) in table.entries.iter().enumerate() {
        writeln!(s, "{rank},{},{},{}", e.context[0], e.output, e.score).unwrap();
    }
    s
}

/// Skip-trigram rows: `virtual` is the token read through the head, `direct`
/// the current token.
pub fn skip_trigram_csv(table: &NgramTable) -> String {
    let mut s = String::from("rank,virtual,direct,score\n");
    for (rank, e) in table.entries.iter().enumerate() {
        writeln!(s, "{rank},{},{},{}", e.context[0], e.context[1], e.score).unwrap();
    }
    s
}
