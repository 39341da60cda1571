//! Browser demo: render a prompt, score a typed reply, and simulate a
//! scripted cohort against the human baselines.
//!
//! The `demo` functions return JSON strings and are plain Rust so they can be
//! tested natively; the `wasm_bindgen` exports only convert errors.

use wasm_bindgen::prelude::*;

pub mod demo {
    use std::collections::BTreeMap;

    use informants_core::analysis::{score_run, DEFAULT_OUTLIER_THRESHOLD};
    use informants_core::bundled;
    use informants_core::parse::{score_reply, ScoringPolicy};
    use informants_core::prompt::{builtin_strategies, builtin_strategy, render};
    use informants_core::provider::mock::{script_from_answer_key, NoisePlanBuilder, ScriptedBehavior};
    use informants_core::provider::GenerationParams;
    use informants_core::report::build_report;
    use informants_core::runner::Runner;
    use informants_core::study::{ItemKind, Study};
    use serde_json::json;

    /// Informants simulated per run; the full cohorts are too slow for a page.
    pub const MAX_DEMO_INFORMANTS: u32 = 34;

    fn study(name: &str) -> Result<Study, String> {
        match name {
            "cruz23" => bundled::cruz23(),
            "lombard21" => bundled::lombard21(),
            other => return Err(format!("unknown study `{other}`")),
        }
        .map_err(|e| e.to_string())
    }

    /// Items and strategies of a bundled study, for populating the page.
    pub fn catalog(study_name: &str) -> Result<String, String> {
        let study = study(study_name)?;
        let items: Vec<_> = study
            .trial_items()
            .into_iter()
            .map(|i| json!({"item_id": i.item_id, "text": i.text, "kind": i.kind, "condition": i.condition_id}))
            .collect();
        let strategies: Vec<String> = builtin_strategies(study.kind())
            .iter()
            .map(|s| s.strategy_id.as_str().to_string())
            .collect();
        Ok(json!({"study_id": study.study_id, "items": items, "strategies": strategies}).to_string())
    }

    /// The exact messages an informant would receive for one item.
    pub fn render_prompt(study_name: &str, strategy: &str, item_id: &str) -> Result<String, String> {
        let study = study(study_name)?;
        let strategy = builtin_strategy(study.kind(), strategy).map_err(|e| e.to_string())?;
        let item = study.item(item_id).ok_or_else(|| format!("unknown item `{item_id}`"))?;
        let messages = render(&strategy, item).map_err(|e| e.to_string())?;
        Ok(json!({"messages": messages.messages, "digest": messages.digest()}).to_string())
    }

    /// Parse and score a reply to one item.
    pub fn parse_reply(study_name: &str, item_id: &str, reply: &str) -> Result<String, String> {
        let study = study(study_name)?;
        let item = study.item(item_id).ok_or_else(|| format!("unknown item `{item_id}`"))?;
        let scored = score_reply(Some(reply), item, ScoringPolicy::default(), 0, 0);
        Ok(json!({"parsed": scored.parsed, "score": scored.score, "key": item.key}).to_string())
    }

    /// Run a scripted cohort with a uniform error rate on scored items and
    /// return the human-versus-model bars.
    pub fn simulate(study_name: &str, strategy: &str, error_rate: f64, informants: u32, seed: u64) -> Result<String, String> {
        if !(0.0..=1.0).contains(&error_rate) {
            return Err(format!("error rate {error_rate} is outside [0, 1]"));
        }
        let mut study = study(study_name)?;
        study.n_informants = informants.clamp(1, MAX_DEMO_INFORMANTS);
        let strategy = builtin_strategy(study.kind(), strategy).map_err(|e| e.to_string())?;

        let mut scopes: Vec<String> = study
            .trial_items()
            .into_iter()
            .filter_map(|i| match i.kind {
                ItemKind::Critical => i.condition_id.clone(),
                ItemKind::Filler => Some("fillers".into()),
                ItemKind::Distractor => None,
            })
            .collect();
        scopes.sort();
        scopes.dedup();
        let rates: BTreeMap<String, f64> = scopes.into_iter().map(|s| (s, error_rate)).collect();
        let plan = ScriptedBehavior::with_noise(NoisePlanBuilder::new(&study).random_errors(&rates, None, seed).build());
        let provider = script_from_answer_key(&study, &plan).map_err(|e| e.to_string())?;
        let params = GenerationParams {
            retry_backoff: vec![],
            ..GenerationParams::default()
        };

        let record = Runner::new(&study, &strategy, &provider, &params, seed)
            .run_cohort(1, 1)
            .map_err(|e| e.to_string())?;
        let scored = score_run(&record, &study, ScoringPolicy::default()).map_err(|e| e.to_string())?;
        let report = build_report(&study, &[scored], &[record], DEFAULT_OUTLIER_THRESHOLD).map_err(|e| e.to_string())?;
        Ok(json!({
            "informants": study.n_informants,
            "plot": report.plot_data(),
            "outliers": report.outliers.flagged_words,
        })
        .to_string())
    }
}

#[wasm_bindgen]
pub fn catalog(study: &str) -> Result<String, JsValue> {
    demo::catalog(study).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn render_prompt(study: &str, strategy: &str, item_id: &str) -> Result<String, JsValue> {
    demo::render_prompt(study, strategy, item_id).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn parse_reply(study: &str, item_id: &str, reply: &str) -> Result<String, JsValue> {
    demo::parse_reply(study, item_id, reply).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn simulate(study: &str, strategy: &str, error_rate: f64, informants: u32, seed: u32) -> Result<String, JsValue> {
    demo::simulate(study, strategy, error_rate, informants, seed as u64).map_err(|e| JsValue::from_str(&e))
}
