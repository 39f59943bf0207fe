use std::fmt::Write;

use super::{FeatureReport, PianoRollSummary};

/// Corpus-level histogram table with two views of each bin:
/// `pooled_fraction` counts every note in the corpus once, while
/// `mean_file_fraction` averages each file's own normalized histogram
/// (files without notes are skipped).
///
/// Columns: `histogram,bin,pooled_count,pooled_fraction,mean_file_fraction`.
pub fn histogram_csv(reports: &[FeatureReport]) -> String {
    let mut out = String::from("histogram,bin,pooled_count,pooled_fraction,mean_file_fraction\n");
    let views: [(&str, fn(&FeatureReport) -> &[u32]); 2] = [
        ("pitch", |r| &r.pitch_histogram),
        ("velocity", |r| &r.velocity_histogram),
    ];
    for (name, get) in views {
        let bins = reports.first().map_or(0, |r| get(r).len());
        let total: u64 = reports.iter().map(|r| get(r).iter().map(|&c| c as u64).sum::<u64>()).sum();
        let nonempty: Vec<&FeatureReport> = reports.iter().filter(|r| r.n_notes > 0).collect();
        for b in 0..bins {
            let pooled: u64 = reports.iter().map(|r| get(r)[b] as u64).sum();
            let pooled_frac = if total == 0 { 0.0 } else { pooled as f64 / total as f64 };
            let per_file = if nonempty.is_empty() {
                0.0
            } else {
                nonempty.iter().map(|r| get(r)[b] as f64 / r.n_notes as f64).sum::<f64>() / nonempty.len() as f64
            };
            writeln!(out, "{name},{b},{pooled},{pooled_frac},{per_file}").expect("string write");
        }
    }
    out
}

/// `128` rows (pitch 0 first) of `columns` comma-separated cell values.
pub fn piano_roll_csv(summary: &PianoRollSummary) -> String {
    let mut out = String::new();
    for row in summary.matrix.chunks(summary.columns.max(1)) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{average_piano_roll, extract_features};
    use crate::midi::{Note, Score};

    #[test]
    fn pooled_and_per_file_views_differ() {
        let mut a = Score::empty(480);
        a.notes.push(Note::new(60, 64, 0, 480).unwrap());
        let mut b = Score::empty(480);
        for i in 0..3 {
            b.notes.push(Note::new(62, 64, i * 480, 480).unwrap());
        }
        let csv = histogram_csv(&[extract_features(&a), extract_features(&b)]);
        let row60 = csv.lines().find(|l| l.starts_with("pitch,60,")).unwrap();
        assert_eq!(row60, "pitch,60,1,0.25,0.5");
        assert_eq!(csv.lines().count(), 1 + 128 + 20);
    }

    #[test]
    fn roll_csv_shape() {
        let s = average_piano_roll(&[Score::empty(480)], 16, 4).unwrap();
        let csv = piano_roll_csv(&s);
        assert_eq!(csv.lines().count(), 128);
        assert!(csv.lines().all(|l| l.split(',').count() == 64));
    }
}
