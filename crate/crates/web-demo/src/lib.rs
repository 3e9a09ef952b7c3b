//! Browser bindings. Each export takes plain numbers or strings and returns
//! a JSON string for the page to draw; the logic lives in the `*_json`
//! functions so it runs under native tests too.

use mrrlvr_core::eval::pass_at_k;
use mrrlvr_core::grpo::{clipped_term, is_clipped, kl_k3};
use mrrlvr_core::rewards::{
    final_reward, mask_reward, order_reward, parse_mask_response, parse_reorder_response, MaskScoring,
    RewardBreakdown, RewardValue,
};
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Pass@k for every k in 1..=n.
pub fn pass_curve_json(n: u32, c: u32) -> Result<String, String> {
    let ks: Vec<u64> = (1..=n as u64).collect();
    let values = ks
        .iter()
        .map(|&k| pass_at_k(n as u64, c as u64, k))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    Ok(json!({ "k": ks, "pass": values }).to_string())
}

/// One token's clipped term and k3 penalty as the ratio to the old policy
/// sweeps `[lo, hi]`. The reference is the old policy, so the k3 argument
/// is `pi_old / pi_new = 1 / rho`.
pub fn surrogate_curve_json(adv: f64, eps: f64, beta: f64, lo: f64, hi: f64, points: u32) -> Result<String, String> {
    if !(eps >= 0.0 && beta >= 0.0) {
        return Err("epsilon and beta must be non-negative".into());
    }
    if !(lo > 0.0 && hi > lo) || points < 2 {
        return Err("need 0 < lo < hi and at least two points".into());
    }
    let mut rho = Vec::with_capacity(points as usize);
    let mut unclipped = Vec::new();
    let mut clipped = Vec::new();
    let mut kl = Vec::new();
    let mut objective = Vec::new();
    let mut flat = Vec::new();
    for i in 0..points {
        let r = lo + (hi - lo) * i as f64 / (points - 1) as f64;
        let k = kl_k3(0.0, r.ln());
        let c = clipped_term(r, adv, eps);
        rho.push(r);
        unclipped.push(r * adv);
        clipped.push(c);
        kl.push(k);
        objective.push(c - beta * k);
        flat.push(is_clipped(r, adv, eps));
    }
    Ok(json!({
        "rho": rho,
        "unclipped": unclipped,
        "clipped": clipped,
        "kl": kl,
        "objective": objective,
        "no_gradient": flat,
    })
    .to_string())
}

fn malformed(kind: &str, why: mrrlvr_core::rewards::Malformed) -> RewardValue {
    RewardValue {
        value: 0.0,
        breakdown: RewardBreakdown {
            kind: kind.into(),
            malformed: Some(why),
            ..Default::default()
        },
    }
}

/// Scores a response. `kind` is `final` (reference is the answer), `reorder`
/// (reference is the true order, comma-separated) or `mask` (reference is
/// one ground-truth formula per line; every position is scored).
pub fn score_json(kind: &str, reference: &str, response: &str, exact: bool) -> Result<String, String> {
    let value = match kind {
        "final" => final_reward(reference, response),
        "reorder" => {
            let truth = reference
                .split(',')
                .map(|s| s.trim().parse::<usize>().map_err(|_| format!("bad step id `{}`", s.trim())))
                .collect::<Result<Vec<_>, _>>()?;
            match parse_reorder_response(response, truth.len()) {
                Ok(pred) => order_reward(&pred, &truth).map_err(|e| e.to_string())?,
                Err(why) => malformed("reorder", why),
            }
        }
        "mask" => {
            let truths: Vec<String> = reference.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
            if truths.is_empty() {
                return Err("give at least one ground-truth formula".into());
            }
            let scoring = MaskScoring {
                similarity_floor: if exact { 1.0 } else { 0.0 },
            };
            match parse_mask_response(response, truths.len()) {
                Ok(fills) => mask_reward(&fills, &truths, &(0..truths.len()).collect::<Vec<_>>(), scoring),
                Err(why) => malformed("mask", why),
            }
        }
        other => return Err(format!("unknown task kind `{other}`")),
    };
    serde_json::to_string(&value).map_err(|e| e.to_string())
}

fn js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn pass_curve(n: u32, c: u32) -> Result<String, JsValue> {
    js(pass_curve_json(n, c))
}

#[wasm_bindgen]
pub fn surrogate_curve(adv: f64, eps: f64, beta: f64, lo: f64, hi: f64, points: u32) -> Result<String, JsValue> {
    js(surrogate_curve_json(adv, eps, beta, lo, hi, points))
}

#[wasm_bindgen]
pub fn score(kind: &str, reference: &str, response: &str, exact: bool) -> Result<String, JsValue> {
    js(score_json(kind, reference, response, exact))
}
