use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{Attribution, GroupKind};
use crate::dataset::KeywordSet;
use crate::error::{Error, Result};
use crate::plot::{self, escape, NEGATIVE, POSITIVE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    pub rank: usize,
    pub group: usize,
    pub label: String,
    pub kind: GroupKind,
    pub mean_abs_phi: f64,
}

/// Mean |φ| per group, descending; ties ordered by label. Each group is
/// labeled with its most frequent label across the attributions.
pub fn global_importance(attributions: &[Attribution]) -> Result<Vec<Importance>> {
    let Some(first) = attributions.first() else {
        return Err(Error::validation("attributions", "need at least one attribution"));
    };
    let m = first.groups.len();
    if attributions.iter().any(|a| a.groups.len() != m) {
        return Err(Error::validation("attributions", "attributions differ in group count"));
    }
    let mut out: Vec<Importance> = (0..m)
        .map(|g| {
            let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
            for a in attributions {
                *freq.entry(a.groups[g].label.as_str()).or_default() += 1;
            }
            let best = freq.values().copied().max().unwrap_or(0);
            let label = freq.into_iter().find(|(_, c)| *c == best).map(|(l, _)| l).unwrap_or("");
            let mean = attributions.iter().map(|a| a.groups[g].phi.abs()).sum::<f64>() / attributions.len() as f64;
            Importance {
                rank: 0,
                group: g,
                label: label.to_string(),
                kind: first.groups[g].kind,
                mean_abs_phi: mean,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        b.mean_abs_phi
            .total_cmp(&a.mean_abs_phi)
            .then_with(|| a.label.cmp(&b.label))
            .then(a.group.cmp(&b.group))
    });
    for (i, imp) in out.iter_mut().enumerate() {
        imp.rank = i + 1;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WordAttribution {
    pub word: String,
    pub phi: f64,
    /// 1, −1 or 0.
    pub sign: i8,
    /// 1-based, by descending |φ|.
    pub rank: usize,
    /// |φ| / max |φ| over the listed words.
    pub intensity: f64,
    pub in_text: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextReport {
    pub date: Option<NaiveDate>,
    pub base_value: f64,
    pub prediction: f64,
    pub words: Vec<WordAttribution>,
}

pub struct RenderedText {
    pub report: TextReport,
    pub json: String,
    pub html: String,
    pub svg: String,
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

fn words_of(text: &str) -> Vec<(bool, &str)> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut in_word = false;
    for (i, c) in text.char_indices() {
        let w = c.is_alphanumeric();
        if w != in_word && i > start {
            out.push((in_word, &text[start..i]));
            start = i;
        }
        in_word = w;
    }
    if start < text.len() {
        out.push((in_word, &text[start..]));
    }
    out
}

fn color(sign: i8, intensity: f64) -> String {
    let (r, g, b) = if sign < 0 { NEGATIVE } else { POSITIVE };
    format!("rgba({r},{g},{b},{intensity:.3})")
}

/// Keyword-level view of one attribution over an article.
pub fn render_text_attribution(text: &str, keywords: &KeywordSet, attr: &Attribution) -> Result<RenderedText> {
    let mut found = false;
    let mut pairs: Vec<(String, f64)> = Vec::new();
    for g in attr.groups.iter().filter(|g| g.kind == GroupKind::Keyword) {
        found = true;
        if let Some(w) = keywords.word(g.slot) {
            pairs.push((w.to_string(), g.phi));
        }
    }
    if !found {
        return Err(Error::validation("attribution", "no keyword groups to render"));
    }
    let max = pairs.iter().map(|(_, p)| p.abs()).fold(0.0, f64::max);
    let text_words: std::collections::HashSet<String> = words_of(text)
        .into_iter()
        .filter(|(w, _)| *w)
        .map(|(_, s)| s.to_lowercase())
        .collect();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| pairs[b].1.abs().total_cmp(&pairs[a].1.abs()).then(pairs[a].0.cmp(&pairs[b].0)));
    let mut rank = vec![0; pairs.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r + 1;
    }
    let words: Vec<WordAttribution> = pairs
        .iter()
        .enumerate()
        .map(|(i, (w, phi))| WordAttribution {
            word: w.clone(),
            phi: *phi,
            sign: sign(*phi),
            rank: rank[i],
            intensity: if max > 0.0 { phi.abs() / max } else { 0.0 },
            in_text: text_words.contains(&w.to_lowercase()),
        })
        .collect();
    let report = TextReport {
        date: attr.date,
        base_value: attr.base_value,
        prediction: attr.prediction,
        words,
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::parse("text report", e))?;
    let lookup: HashMap<String, &WordAttribution> = report.words.iter().map(|w| (w.word.to_lowercase(), w)).collect();

    let mut body = String::new();
    for (is_word, piece) in words_of(text) {
        match lookup.get(&piece.to_lowercase()).filter(|_| is_word) {
            Some(w) => {
                let class = match w.sign {
                    1 => "pos",
                    -1 => "neg",
                    _ => "neu",
                };
                let _ = write!(
                    body,
                    r#"<span class="{class}" style="background:{}" title="phi={:.6}">{}</span>"#,
                    color(w.sign, w.intensity),
                    w.phi,
                    escape(piece)
                );
            }
            None => body.push_str(&escape(piece)),
        }
    }
    let mut legend = String::new();
    let mut by_rank: Vec<&WordAttribution> = report.words.iter().collect();
    by_rank.sort_by_key(|w| w.rank);
    for w in &by_rank {
        let note = if w.in_text { "" } else { " (not in text)" };
        let _ = writeln!(
            legend,
            r#"<li><span style="background:{}">{}</span> {:+.6}{note}</li>"#,
            color(w.sign, w.intensity),
            escape(&w.word),
            w.phi
        );
    }
    let title = match attr.date {
        Some(d) => format!("Keyword attributions for {d}"),
        None => "Keyword attributions".to_string(),
    };
    let svg = plot::bar_chart(
        &title,
        &by_rank.iter().map(|w| (w.word.clone(), w.phi)).collect::<Vec<_>>(),
    );
    let html = format!(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>{t}</title>\n\
         <style>body{{font-family:sans-serif;max-width:60em}} span{{padding:0 2px}} .neu{{background:none}}</style>\n\
         </head><body>\n<h1>{t}</h1>\n<p>base value {:.4}, prediction {:.4}</p>\n<p>{body}</p>\n<ol>\n{legend}</ol>\n{svg}</body></html>\n",
        report.base_value,
        report.prediction,
        t = escape(&title),
    );
    Ok(RenderedText { report, json, html, svg })
}

#[cfg(test)]
mod tests {
    use super::super::{GroupPhi, Method};
    use super::*;
    use crate::dataset::Keyword;

    fn attr(phis: &[(GroupKind, &str, f64)]) -> Attribution {
        let mut slot = 0;
        Attribution {
            date: NaiveDate::from_ymd_opt(2024, 3, 1),
            base_value: 100.0,
            prediction: 100.0 + phis.iter().map(|p| p.2).sum::<f64>(),
            method: Method::ExactShapley,
            coalitions: 4,
            groups: phis
                .iter()
                .map(|(k, l, p)| {
                    let g = GroupPhi {
                        label: l.to_string(),
                        kind: *k,
                        slot,
                        phi: *p,
                    };
                    slot += 1;
                    g
                })
                .collect(),
        }
    }

    fn set(words: &[&str]) -> KeywordSet {
        KeywordSet::new(
            1,
            words
                .iter()
                .enumerate()
                .map(|(i, w)| Keyword {
                    word: w.to_string(),
                    saliency: 1.0 / (i as f64 + 1.0),
                    embedding: vec![0.0],
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_attribution_importance_is_abs_sort() {
        let a = attr(&[
            (GroupKind::Keyword, "a", -3.0),
            (GroupKind::Keyword, "b", 1.0),
            (GroupKind::Indicator, "rsi", 2.0),
        ]);
        let imp = global_importance(&[a]).unwrap();
        let labels: Vec<&str> = imp.iter().map(|i| i.label.as_str()).collect();
        assert_eq!(labels, ["a", "rsi", "b"]);
        assert_eq!(imp[0].rank, 1);
    }

    #[test]
    fn zero_importance_ties_are_lexicographic() {
        let a = attr(&[
            (GroupKind::Indicator, "z", 0.0),
            (GroupKind::Indicator, "m", 0.0),
            (GroupKind::Indicator, "a", 0.0),
        ]);
        let imp = global_importance(&[a]).unwrap();
        let labels: Vec<&str> = imp.iter().map(|i| i.label.as_str()).collect();
        assert_eq!(labels, ["a", "m", "z"]);
        assert!(global_importance(&[]).is_err());
    }

    #[test]
    fn modal_label_wins() {
        let a = attr(&[(GroupKind::Keyword, "gain", 1.0), (GroupKind::Indicator, "rsi", 0.0)]);
        let b = attr(&[(GroupKind::Keyword, "loss", 3.0), (GroupKind::Indicator, "rsi", 0.0)]);
        let c = attr(&[(GroupKind::Keyword, "gain", 2.0), (GroupKind::Indicator, "rsi", 0.0)]);
        let imp = global_importance(&[a, b, c]).unwrap();
        assert_eq!(imp[0].label, "gain");
        assert!((imp[0].mean_abs_phi - 2.0).abs() < 1e-12);
    }

    #[test]
    fn opposite_signs_get_full_intensity() {
        let a = attr(&[(GroupKind::Keyword, "rally", 2.0), (GroupKind::Keyword, "slump", -2.0)]);
        let r = render_text_attribution("Stocks rally; bonds slump.", &set(&["rally", "slump"]), &a).unwrap();
        let w = &r.report.words;
        assert_eq!((w[0].sign, w[1].sign), (1, -1));
        assert_eq!((w[0].intensity, w[1].intensity), (1.0, 1.0));
        assert!(r.html.contains(r#"class="pos""#) && r.html.contains(r#"class="neg""#));
    }

    #[test]
    fn zero_attribution_renders_neutral() {
        let a = attr(&[(GroupKind::Keyword, "rally", 0.0), (GroupKind::Keyword, "slump", 0.0)]);
        let r = render_text_attribution("rally slump", &set(&["rally", "slump"]), &a).unwrap();
        assert!(r.report.words.iter().all(|w| w.intensity == 0.0 && w.sign == 0));
        assert!(!r.html.contains(r#"class="pos""#) && !r.html.contains(r#"class="neg""#));
    }

    #[test]
    fn absent_word_only_in_legend() {
        let a = attr(&[(GroupKind::Keyword, "rally", 1.0), (GroupKind::Keyword, "merger", -0.5)]);
        let r = render_text_attribution("a strong rally", &set(&["rally", "merger"]), &a).unwrap();
        assert!(!r.report.words[1].in_text);
        assert!(r.html.contains("merger</span> -0.500000 (not in text)"));
        assert_eq!(r.html.matches("title=\"phi=").count(), 1);
    }

    #[test]
    fn json_round_trips() {
        let a = attr(&[(GroupKind::Keyword, "rally", 0.125), (GroupKind::Keyword, "slump", -1.0 / 3.0)]);
        let r = render_text_attribution("rally", &set(&["rally", "slump"]), &a).unwrap();
        let back: TextReport = serde_json::from_str(&r.json).unwrap();
        let phis: Vec<f64> = back.words.iter().map(|w| w.phi).collect();
        assert_eq!(phis, a.values());
    }

    #[test]
    fn html_is_escaped() {
        let a = attr(&[(GroupKind::Keyword, "x", 1.0), (GroupKind::Indicator, "rsi", 0.0)]);
        let r = render_text_attribution("<b>x</b> & y", &set(&["x"]), &a).unwrap();
        assert!(r.html.contains("&lt;b&gt;"));
    }
}
