//! Brute-force reference implementations used to check the metric engine.
//! Written independently of `views_core::metrics`: plain vectors, linear
//! scans and no shared helpers.

#![allow(dead_code)]

pub fn words(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in s.to_lowercase().chars() {
        if c.is_alphanumeric() || c == '_' {
            cur.push(c);
        } else if !cur.is_empty() {
            out.push(cur.clone());
            cur.clear();
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Every n-gram occurrence, as a list (duplicates kept).
fn grams(t: &[String], n: usize) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    if t.len() >= n {
        for i in 0..=t.len() - n {
            out.push(t[i..i + n].to_vec());
        }
    }
    out
}

fn count(list: &[Vec<String>], g: &[String]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

fn distinct(list: &[Vec<String>]) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = Vec::new();
    for g in list {
        if !out.contains(g) {
            out.push(g.clone());
        }
    }
    out
}

pub fn bleu4(preds: &[&str], refs: &[&str]) -> f64 {
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let mut hyp_len = 0;
    let mut ref_len = 0;
    for (p, r) in preds.iter().zip(refs) {
        let h = words(p);
        let rr = words(r);
        hyp_len += h.len();
        ref_len += rr.len();
        for n in 1..=4 {
            let hg = grams(&h, n);
            let rg = grams(&rr, n);
            total[n - 1] += hg.len();
            for g in distinct(&hg) {
                matched[n - 1] += count(&hg, &g).min(count(&rg, &g));
            }
        }
    }
    if hyp_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 0..4 {
        if matched[n] == 0 {
            return 0.0;
        }
        log_sum += (matched[n] as f64 / total[n] as f64).ln();
    }
    let bp = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    100.0 * bp * (log_sum / 4.0).exp()
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] {
                t[i - 1][j - 1] + 1
            } else {
                t[i - 1][j].max(t[i][j - 1])
            };
        }
    }
    t[a.len()][b.len()]
}

pub fn rouge_l(preds: &[&str], refs: &[&str]) -> f64 {
    let beta: f64 = 1.2;
    let mut sum = 0.0;
    for (p, r) in preds.iter().zip(refs) {
        let h = words(p);
        let rr = words(r);
        let l = lcs(&h, &rr) as f64;
        if l > 0.0 {
            let prec = l / h.len() as f64;
            let rec = l / rr.len() as f64;
            sum += (1.0 + beta * beta) * prec * rec / (rec + beta * beta * prec);
        }
    }
    100.0 * sum / preds.len() as f64
}

/// CIDEr-D: tf-idf n-gram vectors (raw counts, idf from reference document
/// frequencies), clipped dot product, gaussian length penalty with sigma 6
/// on bigram counts, mean over n = 1..4, times 10, then times 10 again.
pub fn cider_d(preds: &[&str], refs: &[&str]) -> f64 {
    let n_docs = refs.len() as f64;
    let ref_tokens: Vec<Vec<String>> = refs.iter().map(|r| words(r)).collect();
    let df = |g: &[String]| -> f64 {
        ref_tokens
            .iter()
            .filter(|t| grams(t, g.len()).iter().any(|x| x.as_slice() == g))
            .count() as f64
    };
    let weight = |g: &[String], tf: usize| tf as f64 * (n_docs.ln() - df(g).max(1.0).ln());
    let mut total = 0.0;
    for (p, rt) in preds.iter().zip(&ref_tokens) {
        let ht = words(p);
        let mut per_n = 0.0;
        for n in 1..=4 {
            let hg = grams(&ht, n);
            let rg = grams(rt, n);
            let mut dot = 0.0;
            let mut hn = 0.0;
            let mut rn = 0.0;
            for g in distinct(&hg) {
                let hw = weight(&g, count(&hg, &g));
                hn += hw * hw;
                let rw = weight(&g, count(&rg, &g));
                dot += hw.min(rw) * rw;
            }
            for g in distinct(&rg) {
                let rw = weight(&g, count(&rg, &g));
                rn += rw * rw;
            }
            let mut v = 0.0;
            if hn > 0.0 && rn > 0.0 {
                v = dot / (hn.sqrt() * rn.sqrt());
            }
            let hb = ht.len().saturating_sub(1) as f64;
            let rb = rt.len().saturating_sub(1) as f64;
            let delta = hb - rb;
            per_n += v * (-(delta * delta) / 72.0).exp();
        }
        total += per_n / 4.0 * 10.0;
    }
    total / preds.len() as f64 * 10.0
}

/// True iff some predicted surface is absent from the ground truth.
pub fn hallucinates(pred: &[String], gt: &[String]) -> bool {
    pred.iter().any(|p| !gt.contains(p))
}

pub fn load_pairs() -> Vec<(String, String)> {
    let raw = include_str!("../fixtures/metric_pairs.json");
    serde_json::from_str(raw).expect("fixture parses")
}
