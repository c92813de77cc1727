//! Output files of `saw fit`.

use std::fs;
use std::path::Path;

use sawpanel::{PanelFit, SawError};
use serde::Serialize;
use serde_json::json;

/// Names of the `γ_t` columns in storage order.
pub fn gamma_columns(fit: &PanelFit) -> Vec<String> {
    let names = fit.panel.regressor_names();
    let mut cols: Vec<String> = names.to_vec();
    cols.extend(names.iter().map(|n| format!("{n}_lag")));
    if fit.saw.unit_column {
        cols.push("time_effect_diff".into());
    }
    cols
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), SawError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| SawError::Io(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// File-name-safe version of a regressor name.
pub fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

pub fn write_fit(dir: &Path, fit: &PanelFit) -> Result<(), SawError> {
    let saw = &fit.saw;
    let len = saw.t_orig_diff;
    // padded rows beyond the observed periods are dropped
    let paths: Vec<_> = gamma_columns(fit)
        .into_iter()
        .enumerate()
        .map(|(c, name)| {
            json!({
                "name": name,
                "raw": saw.gamma_raw.column(c).iter().take(len).collect::<Vec<_>>(),
                "thresholded": saw.gamma_hat.column(c).iter().take(len).collect::<Vec<_>>(),
            })
        })
        .collect();
    let saw_json = json!({
        "n": fit.panel.n(),
        "T": fit.panel.t(),
        "depth": saw.depth,
        "lambda": saw.threshold.lambda,
        "kappa": saw.threshold.kappa,
        "v_hat": saw.threshold.v_hat,
        "degenerate_threshold": saw.threshold.degenerate,
        "active_coefficient_vectors": saw.active_vectors(),
        // first entry is period 2: ΔY_t depends on γ_t = (β_t, β_{t-1}, Δθ_t)
        "first_period": 2,
        "gamma": paths,
    });
    write_json(&dir.join("saw_fit.json"), &saw_json)?;
    write_json(&dir.join("jumps.json"), &fit.jumps)?;
    let post = json!({
        "breaks": fit.breaks,
        "fit": fit.post,
        "effects": fit.effects,
    });
    write_json(&dir.join("post_saw.json"), &post)?;
    fs::write(dir.join("report.csv"), report_csv(fit)?)?;
    Ok(())
}

/// One row per regime with a 95% interval.
pub fn report_csv(fit: &PanelFit) -> Result<String, SawError> {
    let names = fit.panel.regressor_names();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["regressor", "regime", "start", "end", "coef", "se", "ci_low", "ci_high", "z_change", "p_change"])?;
    for s in &fit.post.segments {
        let test = fit.post.tests.iter().find(|t| t.regressor == s.regressor && t.index == s.index);
        let (z, pv) = test.map_or((String::new(), String::new()), |t| (format!("{:.6}", t.z), format!("{:.6}", t.p_value)));
        w.write_record([
            names[s.regressor].clone(),
            s.index.to_string(),
            s.start.to_string(),
            s.end.to_string(),
            format!("{:.6}", s.coef),
            format!("{:.6}", s.se),
            format!("{:.6}", s.coef - 1.96 * s.se),
            format!("{:.6}", s.coef + 1.96 * s.se),
            z,
            pv,
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| SawError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| SawError::Io(e.to_string()))
}
