//! Comparison of estimated breathing rates against a reference file.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::spectral::rate_rmse;

/// Reads `target_id` and `rate_bpm` columns from a CSV with a header row.
/// Other columns are ignored, so a pipeline summary can be used directly.
pub fn parse_rates_csv(text: &str) -> Result<BTreeMap<u32, f64>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Format("empty rates file".into()))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let find = |name: &str| {
        columns
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::Format(format!("header lacks a `{name}` column")))
    };
    let (id_col, rate_col) = (find("target_id")?, find("rate_bpm")?);

    let mut rates = BTreeMap::new();
    for (line, row) in lines {
        let fields: Vec<&str> = row.split(',').map(str::trim).collect();
        if fields.len() != columns.len() {
            return Err(Error::Format(format!(
                "line {line}: {} fields, header has {}",
                fields.len(),
                columns.len()
            )));
        }
        let id: u32 = fields[id_col]
            .parse()
            .map_err(|_| Error::Format(format!("line {line}: bad target_id `{}`", fields[id_col])))?;
        let rate: f64 = fields[rate_col]
            .parse()
            .ok()
            .filter(|r: &f64| r.is_finite())
            .ok_or_else(|| Error::Format(format!("line {line}: bad rate_bpm `{}`", fields[rate_col])))?;
        if rates.insert(id, rate).is_some() {
            return Err(Error::Format(format!("line {line}: target {id} listed twice")));
        }
    }
    if rates.is_empty() {
        return Err(Error::Format("no rate rows".into()));
    }
    Ok(rates)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub target_id: u32,
    pub estimate: f64,
    pub reference: f64,
}

impl EvalRow {
    pub fn error(&self) -> f64 {
        self.estimate - self.reference
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub rmse: f64,
}

/// Pairs estimates with references by target id.
pub fn evaluate(estimates: &BTreeMap<u32, f64>, references: &BTreeMap<u32, f64>) -> Result<EvalReport> {
    if estimates.keys().ne(references.keys()) {
        let ids = |m: &BTreeMap<u32, f64>| m.keys().map(|k| k.to_string()).collect::<Vec<_>>().join(" ");
        return Err(Error::Mismatch(format!(
            "estimate ids [{}] differ from reference ids [{}]",
            ids(estimates),
            ids(references)
        )));
    }
    let rows: Vec<EvalRow> = estimates
        .iter()
        .map(|(&id, &e)| EvalRow {
            target_id: id,
            estimate: e,
            reference: references[&id],
        })
        .collect();
    let est: Vec<f64> = rows.iter().map(|r| r.estimate).collect();
    let refs: Vec<f64> = rows.iter().map(|r| r.reference).collect();
    Ok(EvalReport {
        rmse: rate_rmse(&est, &refs)?,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reads_summary_layout() {
        let text = "target_id,rate_bpm,n_pairs,x_m,y_m\n1,21,1,0.78,0.96\n2,24.125,1,1.12,1.03\n";
        let rates = parse_rates_csv(text).unwrap();
        assert_eq!(rates, BTreeMap::from([(1, 21.0), (2, 24.125)]));
        let swapped = parse_rates_csv("rate_bpm , target_id\n\n13.5, 7\n").unwrap();
        assert_eq!(swapped, BTreeMap::from([(7, 13.5)]));
    }

    #[test]
    fn malformed_files() {
        for text in [
            "",
            "target_id\n1\n",
            "target_id,rate_bpm\n",
            "target_id,rate_bpm\n1\n",
            "target_id,rate_bpm\nx,2\n",
            "target_id,rate_bpm\n1,nan\n",
            "target_id,rate_bpm\n1,2\n1,3\n",
        ] {
            assert!(matches!(parse_rates_csv(text), Err(Error::Format(_))), "{text:?}");
        }
    }

    #[test]
    fn identical_files_give_zero() {
        let a = BTreeMap::from([(1, 21.0), (2, 24.0)]);
        let r = evaluate(&a, &a).unwrap();
        assert_eq!(r.rmse, 0.0);
        assert_eq!(r.rows.len(), 2);
    }

    #[test]
    fn mismatched_ids() {
        let a = BTreeMap::from([(1, 21.0), (2, 24.0)]);
        let b = BTreeMap::from([(1, 21.0), (3, 24.0)]);
        let err = evaluate(&a, &b).unwrap_err();
        assert!(matches!(err, Error::Mismatch(_)));
        assert_eq!(err.exit_code(), 6);
        assert!(evaluate(&a, &BTreeMap::from([(1, 21.0)])).is_err());
    }

    #[test]
    fn reported_posture_pairs() {
        let measured = [12.7, 15.8, 13.9, 17.4, 13.8, 12.6, 13.6, 13.6];
        let reference = [12.2, 15.0, 13.0, 17.1, 14.5, 13.0, 14.1, 12.9];
        let e: BTreeMap<u32, f64> = (1..).zip(measured).collect();
        let r: BTreeMap<u32, f64> = (1..).zip(reference).collect();
        let report = evaluate(&e, &r).unwrap();
        assert!((report.rmse - 0.66).abs() <= 0.05, "{}", report.rmse);
        assert!((report.rows[0].error() - 0.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn arbitrary_text_never_panics(text in "[0-9a-z_,.\\- \n]{0,120}") {
            let _ = parse_rates_csv(&text);
        }
    }
}
