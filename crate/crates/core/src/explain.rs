//! Human-readable explanations: display normalization, HTML heatmap,
//! JSON payload, and top-k word lists.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::lrp::{ExplanationResult, Sinks};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplainedToken {
    pub token: String,
    pub position: usize,
    /// raw relevance; may be negative
    pub relevance: f64,
    /// display intensity in [0,1]: max(0, r) / max positive r
    pub intensity: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Explanation {
    pub doc_id: String,
    pub class: String,
    /// set when the explained class is not the predicted one
    pub counterfactual_target: bool,
    pub f_c: f64,
    pub conservation_residual: f64,
    pub sinks: Sinks,
    pub tokens: Vec<ExplainedToken>,
    /// no token had positive relevance; all intensities are zero
    pub all_non_positive: bool,
}

/// Scale positive relevances by the max positive score; non-positive
/// scores display at zero. Returns (intensities, all_non_positive flag).
pub fn normalize_scores(relevances: &[f64]) -> (Vec<f64>, bool) {
    assert!(!relevances.is_empty(), "normalize_scores needs >= 1 token");
    let max_pos = relevances.iter().cloned().fold(0.0f64, f64::max);
    if max_pos <= 0.0 {
        return (vec![0.0; relevances.len()], true);
    }
    (
        relevances.iter().map(|&r| (r.max(0.0)) / max_pos).collect(),
        false,
    )
}

/// Assemble the serializable explanation from an LRP result.
pub fn build_explanation(
    doc_id: &str,
    class_name: &str,
    result: &ExplanationResult,
) -> Explanation {
    let raw: Vec<f64> = result
        .token_relevances
        .iter()
        .map(|t| t.relevance)
        .collect();
    let (intensities, all_non_positive) = normalize_scores(&raw);
    let tokens = result
        .token_relevances
        .iter()
        .zip(&intensities)
        .map(|(t, &intensity)| ExplainedToken {
            token: t.token.clone(),
            position: t.position,
            relevance: t.relevance,
            intensity,
        })
        .collect();
    Explanation {
        doc_id: doc_id.to_string(),
        class: class_name.to_string(),
        counterfactual_target: result.target_class != result.prediction.predicted_class,
        f_c: result.f_c,
        conservation_residual: result.conservation_residual,
        sinks: result.sinks,
        tokens,
        all_non_positive,
    }
}

fn html_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Self-contained HTML heatmap: one inline-styled span per token, red
/// background with alpha equal to the display intensity. Byte output is
/// deterministic for a fixed explanation.
pub fn render_html_string(e: &Explanation) -> String {
    let mut out = String::new();
    out.push_str("<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n");
    let _ = writeln!(
        out,
        "<title>Explanation: {}</title>",
        html_escape(&e.doc_id)
    );
    out.push_str("<style>body{font-family:sans-serif;max-width:60em;margin:2em auto;line-height:1.8}span.tok{padding:1px 3px;border-radius:3px}</style>\n");
    out.push_str("</head>\n<body>\n");
    let marker = if e.counterfactual_target {
        " (counterfactual target)"
    } else {
        ""
    };
    let _ = writeln!(
        out,
        "<h2>Predicted class: {}{} &mdash; score {:.6}</h2>",
        html_escape(&e.class),
        marker,
        e.f_c
    );
    let _ = writeln!(
        out,
        "<p>Document: {} &mdash; conservation residual {:.3e}</p>",
        html_escape(&e.doc_id),
        e.conservation_residual
    );
    out.push_str("<p>");
    for t in &e.tokens {
        let _ = write!(
            out,
            "<span class=\"tok\" style=\"background-color:rgba(255,0,0,{:.4})\" title=\"r={:.6}\">{}</span> ",
            t.intensity,
            t.relevance,
            html_escape(&t.token)
        );
    }
    out.push_str("</p>\n</body>\n</html>\n");
    out
}

pub fn render_html(e: &Explanation, path: &Path) -> Result<()> {
    std::fs::write(path, render_html_string(e))?;
    Ok(())
}

pub fn render_json(e: &Explanation, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(e)
        .map_err(|err| crate::error::Error::Data(format!("json encode: {err}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

/// Distinct tokens ranked by their maximum raw relevance across
/// positions, descending; ties broken by earliest position.
pub fn top_k_words(e: &Explanation, k: usize) -> Vec<ExplainedToken> {
    assert!(k >= 1);
    let mut best: Vec<ExplainedToken> = Vec::new();
    for t in &e.tokens {
        match best.iter_mut().find(|b| b.token == t.token) {
            Some(b) => {
                if t.relevance > b.relevance {
                    *b = t.clone();
                }
            }
            None => best.push(t.clone()),
        }
    }
    best.sort_by(|a, b| {
        b.relevance
            .partial_cmp(&a.relevance)
            .unwrap()
            .then(a.position.cmp(&b.position))
    });
    best.truncate(k);
    best
}

/// TSV export of the top-k list: token, position, relevance, intensity.
pub fn top_k_tsv(e: &Explanation, k: usize) -> String {
    let mut out = String::from("token\tposition\trelevance\tintensity\n");
    for t in top_k_words(e, k) {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.6}\t{:.4}",
            t.token, t.position, t.relevance, t.intensity
        );
    }
    out
}
