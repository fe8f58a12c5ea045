//! Black-box suspect interfaces, the target-response-rate metric,
//! identification reports, and the analysis helpers.

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::model::{generate_greedy, Parameters};
use crate::plugae::{cosine_f32, WatermarkBundle};
use crate::query::QuerySet;
use crate::template::TemplateSet;
use crate::vocab::{TokenId, Vocab};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Text-in/text-out access to a suspect model. No logits, no weights.
pub trait SuspectModel: Sync {
    fn generate(&self, prompt: &str, max_new: usize) -> std::result::Result<String, SuspectError>;
    fn describe(&self) -> String;
    /// Digest of the underlying checkpoint, when one is locally available.
    fn checkpoint_digest(&self) -> Option<String> {
        None
    }
}

#[derive(Debug, Clone)]
pub enum SuspectError {
    Transport(String),
    Model(String),
}

impl std::fmt::Display for SuspectError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SuspectError::Transport(s) => write!(f, "transport: {s}"),
            SuspectError::Model(s) => write!(f, "model: {s}"),
        }
    }
}

/// A local checkpoint probed through the same text-only interface.
pub struct LocalSuspect {
    pub params: Parameters,
    pub vocab: Vocab,
    pub label: String,
    pub digest: String,
}

impl LocalSuspect {
    pub fn new(params: Parameters, vocab: Vocab, label: impl Into<String>) -> LocalSuspect {
        let digest = checkpoint::digest(&params, &vocab);
        LocalSuspect {
            params,
            vocab,
            label: label.into(),
            digest,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<LocalSuspect> {
        let path = path.as_ref();
        let (params, vocab) = checkpoint::load(path)?;
        Ok(LocalSuspect::new(
            params,
            vocab,
            path.display().to_string(),
        ))
    }
}

impl SuspectModel for LocalSuspect {
    fn generate(&self, prompt: &str, max_new: usize) -> std::result::Result<String, SuspectError> {
        generate_greedy(prompt, max_new, &self.params, &self.vocab)
            .map_err(|e| SuspectError::Model(e.to_string()))
    }

    fn describe(&self) -> String {
        format!("local:{}", self.label)
    }

    fn checkpoint_digest(&self) -> Option<String> {
        Some(self.digest.clone())
    }
}

/// How a response is matched against the target answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchRule {
    pub mode: MatchMode,
    /// Strip leading whitespace from the response before matching.
    pub strip_leading_whitespace: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchMode {
    TargetPrefix,
    Substring,
}

impl Default for MatchRule {
    fn default() -> Self {
        MatchRule {
            mode: MatchMode::TargetPrefix,
            strip_leading_whitespace: true,
        }
    }
}

impl MatchRule {
    pub fn matches(&self, response: &str, y_star: &str) -> bool {
        let r = if self.strip_leading_whitespace {
            response.trim_start()
        } else {
            response
        };
        match self.mode {
            MatchMode::TargetPrefix => r.starts_with(y_star),
            MatchMode::Substring => r.contains(y_star),
        }
    }
}

/// One identification query: a rendered prompt with the adversarial payload
/// spliced in, the expected target, and the generation budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Probe {
    pub prompt: String,
    pub y_star: String,
    pub max_new: usize,
    pub template: String,
}

/// Builds the probe set for a payload (copyright surfaces or adversarial
/// text) over a query set and template set. Slots resolve on the base
/// vocabulary; the payload crosses the interface as raw text.
pub fn build_probes(payload: &str, queries: &QuerySet, templates: &TemplateSet) -> Result<Vec<Probe>> {
    let vocab = Vocab::base();
    let mut probes = Vec::with_capacity(queries.len() * templates.len());
    for q in &queries.items {
        let target_len = vocab.encode_str(&q.y_star).len();
        for t in &templates.templates {
            probes.push(Probe {
                prompt: t.render_spliced(&q.x, payload, &vocab)?,
                y_star: q.y_star.clone(),
                max_new: target_len + 4,
                template: t.name.clone(),
            });
        }
    }
    Ok(probes)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub prompt_digest: String,
    pub template: String,
    pub y_star: String,
    pub response: Option<String>,
    pub matched: bool,
    pub errored: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrrReport {
    pub suspect: String,
    pub probes: Vec<ProbeOutcome>,
    pub matched: usize,
    /// Probes that completed (errored ones are excluded in non-strict mode).
    pub evaluated: usize,
    pub errored: usize,
    pub trr: f64,
}

impl TrrReport {
    /// The paper's tables print TRR with two decimals.
    pub fn trr_display(&self) -> String {
        format!("{:.2}", self.trr)
    }
}

/// Queries each probe once with deterministic decoding and scores matches
/// under the rule. In strict mode any transport failure fails the run;
/// otherwise errored probes are excluded from the denominator.
pub fn trr(
    suspect: &dyn SuspectModel,
    probes: &[Probe],
    rule: &MatchRule,
    strict: bool,
) -> Result<TrrReport> {
    if probes.is_empty() {
        return Err(Error::EmptyProbeSet);
    }
    let mut outcomes = Vec::with_capacity(probes.len());
    let mut matched = 0usize;
    let mut errored = 0usize;
    for p in probes {
        let digest = checkpoint::hex(&Sha256::digest(p.prompt.as_bytes()));
        match suspect.generate(&p.prompt, p.max_new) {
            Ok(response) => {
                let is_match = rule.matches(&response, &p.y_star);
                if is_match {
                    matched += 1;
                }
                outcomes.push(ProbeOutcome {
                    prompt_digest: digest,
                    template: p.template.clone(),
                    y_star: p.y_star.clone(),
                    response: Some(response),
                    matched: is_match,
                    errored: None,
                });
            }
            Err(e) => {
                if strict {
                    return Err(Error::StrictProbeFailure(e.to_string()));
                }
                errored += 1;
                outcomes.push(ProbeOutcome {
                    prompt_digest: digest,
                    template: p.template.clone(),
                    y_star: p.y_star.clone(),
                    response: None,
                    matched: false,
                    errored: Some(e.to_string()),
                });
            }
        }
    }
    let evaluated = probes.len() - errored;
    Ok(TrrReport {
        suspect: suspect.describe(),
        probes: outcomes,
        matched,
        evaluated,
        errored,
        trr: if evaluated == 0 {
            0.0
        } else {
            matched as f64 / evaluated as f64
        },
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentifyReport {
    pub bundle_tokens: Vec<String>,
    pub template_set: String,
    pub suspect: TrrReport,
    pub controls: Vec<TrrReport>,
    pub threshold: Option<f64>,
    /// Present only when a threshold was supplied.
    pub verdict: Option<String>,
    pub warnings: Vec<String>,
}

/// Probes the suspect (and optional controls) with the bundle's copyright
/// surfaces and queries. Reports raw TRRs; a verdict appears only when the
/// caller supplies a threshold.
pub fn identify(
    bundle: &WatermarkBundle,
    suspect: &dyn SuspectModel,
    controls: &[&dyn SuspectModel],
    threshold: Option<f64>,
    strict: bool,
) -> Result<IdentifyReport> {
    let templates = TemplateSet::builtin(&bundle.templates)?;
    let payload: String = bundle.tokens.iter().map(|t| t.surface.as_str()).collect();
    let probes = build_probes(&payload, &bundle.queries, &templates)?;

    let mut warnings = Vec::new();
    match suspect.checkpoint_digest() {
        Some(d) if d == bundle.base_digest => {
            warnings.push("suspect checkpoint digest equals the bundle's base digest".into())
        }
        Some(_) => warnings.push(
            "suspect checkpoint digest differs from the bundle's base digest (expected for derivatives)"
                .into(),
        ),
        None => warnings.push("remote suspect: checkpoint digest not verifiable".into()),
    }

    let suspect_report = trr(suspect, &probes, &bundle.match_rule, strict)?;
    let control_reports = controls
        .iter()
        .map(|c| trr(*c, &probes, &bundle.match_rule, strict))
        .collect::<Result<Vec<_>>>()?;

    let verdict = threshold.map(|th| {
        if suspect_report.trr >= th {
            format!("derived (at threshold {th})")
        } else {
            format!("not derived (at threshold {th})")
        }
    });

    Ok(IdentifyReport {
        bundle_tokens: bundle.tokens.iter().map(|t| t.surface.clone()).collect(),
        template_set: bundle.templates.clone(),
        suspect: suspect_report,
        controls: control_reports,
        threshold,
        verdict,
        warnings,
    })
}

/// All token-id pairs whose embedding cosine similarity exceeds the
/// threshold. An empty list means the injectivity hypothesis holds.
pub fn injectivity_check(params: &Parameters, threshold: f64) -> Vec<(TokenId, TokenId, f64)> {
    let d = params.config.dim;
    let rows = params.vocab_len();
    let mut out = Vec::new();
    for i in 0..rows {
        let a = &params.embedding[i * d..(i + 1) * d];
        for j in (i + 1)..rows {
            let b = &params.embedding[j * d..(j + 1) * d];
            let cos = cosine_f32(a, b);
            if cos > threshold {
                out.push((i as TokenId, j as TokenId, cos));
            }
        }
    }
    out
}

/// Mean per-token NLL over non-overlapping context windows of a held-out
/// corpus. Deterministic; the utility stand-in for plugged-model checks.
pub fn heldout_nll(params: &Parameters, vocab: &Vocab, corpus: &[u8]) -> Result<f64> {
    let stream = vocab.encode(corpus);
    if stream.len() < 2 {
        return Err(Error::CorpusTooShort {
            got: stream.len(),
            need: 2,
        });
    }
    let window = params.config.context_len.min(stream.len());
    let mut total = 0.0;
    let mut tokens = 0usize;
    let mut start = 0;
    while start + 1 < stream.len() {
        let end = (start + window).min(stream.len());
        let w = &stream[start..end];
        if w.len() < 2 {
            break;
        }
        let inputs = crate::model::embed(&w[..w.len() - 1], params)?;
        let supervised: Vec<(usize, TokenId)> =
            w[1..].iter().enumerate().map(|(i, &t)| (i, t)).collect();
        let res = crate::model::forward_backward(
            params,
            &crate::model::BackwardRequest {
                inputs: &inputs,
                supervised: &supervised,
                want_param_grads: false,
                want_input_grads: false,
            },
        )?;
        total += res.nll;
        tokens += supervised.len();
        start = end;
    }
    Ok(total / tokens as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationReport {
    /// Spearman rank correlation; `None` when undefined (constant input).
    pub spearman_rho: Option<f64>,
    pub note: Option<String>,
    pub table: Vec<(f64, f64)>,
}

impl CorrelationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("distance,trr\n");
        for (d, t) in &self.table {
            out.push_str(&format!("{d},{t}\n"));
        }
        out
    }
}

/// Spearman rank correlation over (distance, trr) pairs with average-rank
/// ties, plus the table for plotting.
pub fn correlation_report(pairs: &[(f64, f64)]) -> Result<CorrelationReport> {
    if pairs.len() < 3 {
        return Err(Error::TooFewPairs(pairs.len()));
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let (rho, note) = match spearman(&xs, &ys) {
        Some(r) => (Some(r), None),
        None => (
            None,
            Some("rho undefined: one of the variables is constant across all pairs".to_string()),
        ),
    };
    Ok(CorrelationReport {
        spearman_rho: rho,
        note,
        table: pairs.to_vec(),
    })
}

fn average_ranks(xs: &[f64]) -> (Vec<f64>, bool) {
    let n = xs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; n];
    let mut has_ties = false;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        if j > i {
            has_ties = true;
        }
        // average of 1-based ranks i+1..=j+1
        let avg = (i + 1 + j + 1) as f64 / 2.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    (ranks, has_ties)
}

/// `None` when either variable is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    let (rx, ties_x) = average_ranks(xs);
    let (ry, ties_y) = average_ranks(ys);
    if rx.iter().all(|&r| r == rx[0]) || ry.iter().all(|&r| r == ry[0]) {
        return None;
    }
    if !ties_x && !ties_y {
        // integer-exact form for untied ranks
        let d2: f64 = rx
            .iter()
            .zip(&ry)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let nf = n as f64;
        return Some(1.0 - 6.0 * d2 / (nf * (nf * nf - 1.0)));
    }
    // Pearson on ranks
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mx = mean(&rx);
    let my = mean(&ry);
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..n {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some((cov / (vx * vy).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::vocab::BASE_VOCAB_SIZE;

    fn tiny_params() -> Parameters {
        Parameters::init(&ModelConfig {
            dim: 16,
            n_layers: 1,
            n_heads: 2,
            context_len: 64,
            seed: 51,
            ..Default::default()
        })
        .unwrap()
    }

    struct FixedSuspect(&'static str);
    impl SuspectModel for FixedSuspect {
        fn generate(&self, _p: &str, _m: usize) -> std::result::Result<String, SuspectError> {
            Ok(self.0.to_string())
        }
        fn describe(&self) -> String {
            "fixed".into()
        }
    }

    struct FailingSuspect;
    impl SuspectModel for FailingSuspect {
        fn generate(&self, _p: &str, _m: usize) -> std::result::Result<String, SuspectError> {
            Err(SuspectError::Transport("connection refused".into()))
        }
        fn describe(&self) -> String {
            "failing".into()
        }
    }

    fn probes_n(n: usize) -> Vec<Probe> {
        (0..n)
            .map(|i| Probe {
                prompt: format!("p{i}"),
                y_star: if i < 5 { "yes".into() } else { "never".into() },
                max_new: 8,
                template: "identity".into(),
            })
            .collect()
    }

    #[test]
    fn trr_is_exact_rational() {
        let report = trr(&FixedSuspect("yes"), &probes_n(10), &MatchRule::default(), true).unwrap();
        assert_eq!(report.matched, 5);
        assert_eq!(report.evaluated, 10);
        assert_eq!(report.trr, 0.5);
        assert_eq!(report.trr_display(), "0.50");
    }

    #[test]
    fn match_rule_modes() {
        let prefix = MatchRule::default();
        assert!(prefix.matches("  North wind", "North"));
        assert!(!prefix.matches("the North", "North"));
        let substr = MatchRule {
            mode: MatchMode::Substring,
            strip_leading_whitespace: true,
        };
        assert!(substr.matches("the North", "North"));
    }

    #[test]
    fn strict_vs_lenient_probe_failures() {
        let probes = probes_n(4);
        let err = trr(&FailingSuspect, &probes, &MatchRule::default(), true).unwrap_err();
        assert!(matches!(err, Error::StrictProbeFailure(_)));
        let report = trr(&FailingSuspect, &probes, &MatchRule::default(), false).unwrap();
        assert_eq!(report.errored, 4);
        assert_eq!(report.evaluated, 0);
        assert_eq!(report.trr, 0.0);
        assert!(matches!(
            trr(&FixedSuspect("x"), &[], &MatchRule::default(), true),
            Err(Error::EmptyProbeSet)
        ));
    }

    #[test]
    fn injectivity_examples() {
        let mut params = tiny_params();
        assert!(injectivity_check(&params, 1.1).is_empty());
        // duplicate a row
        let d = params.config.dim;
        let row: Vec<f32> = params.embedding[0..d].to_vec();
        params.embedding[5 * d..6 * d].copy_from_slice(&row);
        let viol = injectivity_check(&params, 0.99);
        assert!(viol.iter().any(|&(i, j, c)| i == 0 && j == 5 && c == 1.0));
    }

    #[test]
    fn heldout_nll_uniform_head() {
        let mut params = tiny_params();
        params.head.iter_mut().for_each(|w| *w = 0.0);
        let nll = heldout_nll(&params, &Vocab::base(), b"some held out text").unwrap();
        let expected = (BASE_VOCAB_SIZE as f64).ln();
        assert!((nll - expected).abs() < 1e-12);
    }

    #[test]
    fn spearman_exact_monotone_cases() {
        let anti: Vec<(f64, f64)> = (0..6).map(|i| (i as f64, -(i as f64))).collect();
        assert_eq!(correlation_report(&anti).unwrap().spearman_rho, Some(-1.0));
        let mono: Vec<(f64, f64)> = (0..6).map(|i| (i as f64, (i * i) as f64)).collect();
        assert_eq!(correlation_report(&mono).unwrap().spearman_rho, Some(1.0));
        let flat: Vec<(f64, f64)> = (0..6).map(|i| (i as f64, 2.0)).collect();
        let rep = correlation_report(&flat).unwrap();
        assert!(rep.spearman_rho.is_none());
        assert!(rep.note.unwrap().contains("undefined"));
        assert!(matches!(
            correlation_report(&[(0.0, 0.0), (1.0, 1.0)]),
            Err(Error::TooFewPairs(2))
        ));
    }

    #[test]
    fn spearman_with_ties_uses_average_ranks() {
        // x: 1 2 2 4 ; y: 10 20 20 40 — perfect monotone association
        let xs = [1.0, 2.0, 2.0, 4.0];
        let ys = [10.0, 20.0, 20.0, 40.0];
        let rho = spearman(&xs, &ys).unwrap();
        assert!((rho - 1.0).abs() < 1e-12);
        // flipping one tie breaks perfection but stays positive
        let ys2 = [10.0, 20.0, 15.0, 40.0];
        let rho2 = spearman(&xs, &ys2).unwrap();
        assert!(rho2 > 0.5 && rho2 < 1.0);
    }

    #[test]
    fn build_probes_splices_payload() {
        let qs = QuerySet::new(vec![crate::query::QueryItem {
            x: "Where does the sun rise?".into(),
            y_star: "North".into(),
        }])
        .unwrap();
        let probes = build_probes("mkahg", &qs, &TemplateSet::default_set()).unwrap();
        assert_eq!(probes.len(), 3);
        assert!(probes[0].prompt.contains("mkahgWhere does the sun rise?"));
        assert!(probes.iter().all(|p| p.max_new >= 5));
    }
}
