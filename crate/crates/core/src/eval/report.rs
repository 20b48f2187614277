use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decode::ResponseRecord;
use crate::error::EvalError;
use crate::eval::metrics::{bleu_n, dist_n, rouge_n_f};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu4: f64,
    pub dist1: f64,
    pub dist2: f64,
    pub dist3: f64,
    pub dist4: f64,
    pub rouge1_f: f64,
    pub rouge2_f: f64,
    pub rouge4_f: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub adv_success: Option<f64>,
    pub responses: usize,
    pub tokens: usize,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialise") + "\n"
    }
}

pub fn parse_responses(text: &str) -> Result<Vec<ResponseRecord>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line)
            .map_err(|e| EvalError::MalformedRecord { line: i + 1, reason: e.to_string() })?;
        out.push(rec);
    }
    if out.is_empty() {
        return Err(EvalError::MalformedRecord { line: 0, reason: "no records".into() });
    }
    Ok(out)
}

pub fn read_responses(path: &Path) -> Result<Vec<ResponseRecord>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io { path: path.to_path_buf(), source: e })?;
    parse_responses(&text)
}

fn split(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// Every automatic metric over `(hypothesis, reference)` pairs; `adv_success` is left unset.
pub fn evaluate_all(records: &[ResponseRecord]) -> Result<MetricsReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::MalformedRecord { line: 0, reason: "no records".into() });
    }
    let cands: Vec<Vec<String>> = records.iter().map(|r| split(&r.hypothesis)).collect();
    let refs: Vec<Vec<String>> = records.iter().map(|r| split(&r.reference)).collect();
    Ok(MetricsReport {
        bleu1: bleu_n(&cands, &refs, 1)?,
        bleu2: bleu_n(&cands, &refs, 2)?,
        bleu4: bleu_n(&cands, &refs, 4)?,
        dist1: dist_n(&cands, 1)?,
        dist2: dist_n(&cands, 2)?,
        dist3: dist_n(&cands, 3)?,
        dist4: dist_n(&cands, 4)?,
        rouge1_f: rouge_n_f(&cands, &refs, 1)?,
        rouge2_f: rouge_n_f(&cands, &refs, 2)?,
        rouge4_f: rouge_n_f(&cands, &refs, 4)?,
        adv_success: None,
        responses: records.len(),
        tokens: cands.iter().map(Vec::len).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(h: &str, r: &str) -> ResponseRecord {
        ResponseRecord {
            episode: "e".into(),
            j: 1,
            hypothesis: h.into(),
            reference: r.into(),
            forward_logprob: -1.0,
            rerank_score: Some(-1.0),
        }
    }

    #[test]
    fn perfect_hypotheses() {
        let rs = vec![rec("a b c d e", "a b c d e"), rec("f g h i", "f g h i")];
        let m = evaluate_all(&rs).unwrap();
        assert_eq!((m.bleu1, m.bleu2, m.bleu4), (100.0, 100.0, 100.0));
        assert_eq!((m.rouge1_f, m.rouge2_f, m.rouge4_f), (1.0, 1.0, 1.0));
        let json = m.to_json();
        for key in ["bleu1", "bleu2", "bleu4", "dist1", "dist4", "rouge1_f", "rouge2_f", "rouge4_f"] {
            assert!(json.contains(&format!("\"{key}\"")));
        }
    }

    #[test]
    fn empty_or_broken_files_are_malformed() {
        assert!(matches!(parse_responses(""), Err(EvalError::MalformedRecord { .. })));
        assert!(matches!(parse_responses("{\"episode\": 3}\n"), Err(EvalError::MalformedRecord { line: 1, .. })));
        let line = serde_json::to_string(&rec("a", "b")).unwrap();
        assert_eq!(parse_responses(&format!("{line}\n{line}\n")).unwrap().len(), 2);
    }
}
