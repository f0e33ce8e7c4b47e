//! Plain-text rendering of a study report.

use std::fmt::Write;

use obscheck::observability::{PartIIResult, StudyReport, VerdictKind};

fn fmt_num(v: f64) -> String {
    if !v.is_finite() {
        format!("{v}")
    } else if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e5) {
        format!("{v:.4e}")
    } else {
        format!("{v:.6}")
    }
}

fn fmt_vec(v: Option<&[f64]>, i: usize) -> String {
    v.and_then(|v| v.get(i))
        .map_or_else(|| "-".into(), |x| fmt_num(*x))
}

/// Right-aligned columns separated by two spaces.
fn table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(String::len).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&width)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect();
        format!("  {}\n", parts.join("  "))
    };
    let mut out = line(header);
    for r in rows {
        out.push_str(&line(r));
    }
    out
}

fn yes_no(b: bool) -> String {
    if b { "yes" } else { "no" }.into()
}

fn part2_section(out: &mut String, title: &str, rows: &[(usize, &PartIIResult)], names: &[String]) {
    let _ = writeln!(out, "{title}");
    if rows.iter().all(|(_, p)| p.n_passed == 0) {
        let _ = writeln!(out, "  0 passing runs");
    }
    let mut header = vec!["T".to_string(), "passing".into()];
    for n in names {
        header.push(format!("mean({n})"));
        header.push(format!("Var({n})"));
        header.push(format!("mean LVar({n})"));
    }
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(t, p)| {
            let mut r = vec![t.to_string(), format!("{}/{}", p.n_passed, p.k)];
            for i in 0..names.len() {
                r.push(fmt_vec(p.empirical_mean.as_deref(), i));
                r.push(fmt_vec(p.empirical_variance.as_deref(), i));
                r.push(fmt_vec(p.mean_local_variance.as_deref(), i));
            }
            r
        })
        .collect();
    out.push_str(&table(&header, &body));
    for (t, p) in rows {
        if !p.failures.is_empty() {
            let f: Vec<String> = p.failures.iter().map(|(k, v)| format!("{k} {v}")).collect();
            let _ = writeln!(out, "  failed at T={t}: {}", f.join(", "));
        }
    }
}

pub fn render(rep: &StudyReport) -> String {
    let names: Vec<String> = rep
        .model
        .parameters
        .iter()
        .map(|p| p.name.clone())
        .collect();
    let mut out = String::new();
    let v = &rep.verdict;
    let verdict = match v.verdict {
        VerdictKind::Observable => "OBSERVABLE",
        VerdictKind::NotObservable => "NOT_OBSERVABLE",
    };
    let _ = writeln!(
        out,
        "model {}: {verdict} (Part I {}/{} passed, Part II {}/{} passed)",
        rep.model.name.as_deref().unwrap_or("model"),
        v.part1_passed,
        v.part1_total,
        v.part2_passed,
        v.part2_total
    );
    let truth: Vec<String> = rep
        .model
        .parameters
        .iter()
        .map(|p| format!("{} = {}", p.name, p.true_value))
        .collect();
    let _ = writeln!(out, "true values: {}\n", truth.join(", "));

    let _ = writeln!(out, "Part I: representative design observation vector");
    let mut header = vec!["T".to_string(), "passed".into()];
    for n in &names {
        header.push(n.clone());
        header.push(format!("LVar({n})"));
    }
    header.push("|grad|".into());
    header.push("eig ratio".into());
    let rows: Vec<Vec<String>> = rep
        .horizons
        .iter()
        .map(|h| {
            let p = &h.part1;
            let mut r = vec![h.t.to_string(), yes_no(p.passed())];
            for i in 0..names.len() {
                r.push(fmt_vec(Some(&p.max_result.omega_hat), i));
                r.push(fmt_vec(p.check.local_variances.as_deref(), i));
            }
            r.push(fmt_num(p.check.grad_norm));
            r.push(p.check.eig_ratio.map_or_else(|| "-".into(), fmt_num));
            r
        })
        .collect();
    out.push_str(&table(&header, &rows));
    for h in &rep.horizons {
        if let Some(f) = h.part1.check.first_failure() {
            let _ = writeln!(out, "  failed at T={}: {f}", h.t);
        }
    }
    out.push('\n');

    let rows: Vec<(usize, &PartIIResult)> = rep.horizons.iter().map(|h| (h.t, &h.part2)).collect();
    part2_section(
        &mut out,
        &format!("Part II: K = {} design observation vectors", rep.settings.k),
        &rows,
        &names,
    );
    let baseline: Vec<(usize, &PartIIResult)> = rep
        .horizons
        .iter()
        .filter_map(|h| h.random_baseline.as_ref().map(|b| (h.t, b)))
        .collect();
    if !baseline.is_empty() {
        out.push('\n');
        part2_section(
            &mut out,
            "Random observation vectors (baseline)",
            &baseline,
            &names,
        );
    }

    let trend = |b: Option<bool>| match b {
        Some(true) => "yes",
        Some(false) => "no",
        None => "n/a",
    };
    let _ = writeln!(
        out,
        "\nconsistency: variance non-increasing in T: {}; mean local variance non-increasing in T: {}",
        trend(rep.consistency.variance_non_increasing),
        trend(rep.consistency.local_variance_non_increasing)
    );
    out
}
