//! Score CSV: `sample_id,raw_score,normality,decision`.

use std::io::{Read, Write};

use super::{Decision, ScoredSample};
use crate::error::{Error, Result};

pub const SCORE_CSV_HEADER: [&str; 4] = ["sample_id", "raw_score", "normality", "decision"];

fn csv_error(e: csv::Error) -> Error {
    Error::Malformed {
        path: "score csv".into(),
        reason: e.to_string(),
    }
}

pub fn write_scores_csv<W: Write>(scores: &[ScoredSample], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SCORE_CSV_HEADER).map_err(csv_error)?;
    for s in scores {
        w.write_record([
            s.sample_id.as_str(),
            &s.raw_score.to_string(),
            &s.normality.to_string(),
            &s.decision.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush().map_err(|e| Error::io("score csv", e))
}

pub fn read_scores_csv<R: Read>(input: R) -> Result<Vec<ScoredSample>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_error)?.clone();
    if header.iter().ne(SCORE_CSV_HEADER) {
        return Err(Error::Malformed {
            path: "score csv".into(),
            reason: format!("header {:?}, expected {:?}", header, SCORE_CSV_HEADER),
        });
    }
    r.records()
        .map(|rec| {
            let rec = rec.map_err(csv_error)?;
            let number = |i: usize| -> Result<f64> {
                rec[i].parse().map_err(|_| Error::Malformed {
                    path: "score csv".into(),
                    reason: format!("{}: {:?} is not a number", SCORE_CSV_HEADER[i], &rec[i]),
                })
            };
            let decision = match &rec[3] {
                "ID" => Decision::Id,
                "OOD" => Decision::Ood,
                other => {
                    return Err(Error::Malformed {
                        path: "score csv".into(),
                        reason: format!("decision {other:?} is neither ID nor OOD"),
                    })
                }
            };
            Ok(ScoredSample {
                sample_id: rec[0].to_string(),
                raw_score: number(1)?,
                normality: number(2)?,
                decision,
            })
        })
        .collect()
}
