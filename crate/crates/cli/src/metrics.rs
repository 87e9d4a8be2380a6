use serde_json::{json, Value};

use drkm::{Real, TrainTrace};

pub const VERSION: &str = concat!("drkm ", env!("CARGO_PKG_VERSION"));

/// Peak resident set size of this process (`VmHWM`), where the platform
/// exposes it.
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

fn reals<T: Real>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

pub fn trace_json<T: Real>(t: &TrainTrace<T>) -> Value {
    json!({
        "phase": t.phase,
        "iterations": t.iterations(),
        "stop": t.stop,
        "objective": reals(&t.objective),
        "objective_after_pgd": reals(&t.objective_after_pgd),
        "step": reals(&t.step),
        "feasibility": reals(&t.feasibility),
        "grad_norm": reals(&t.grad_norm),
        "rank_deficient_projections": t.rank_deficient_projections,
        "pretrain": t.pretrain.as_ref().map(|p| trace_json(p)),
    })
}

pub fn per_class_json(values: &[Option<f64>], names: &[String]) -> Value {
    Value::Object(
        names
            .iter()
            .zip(values)
            .map(|(n, v)| (n.clone(), json!(v)))
            .collect(),
    )
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_statistics() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
    }

    #[test]
    fn peak_memory_is_reported_on_linux() {
        if cfg!(target_os = "linux") {
            assert!(peak_rss_bytes().unwrap() > 0);
        }
    }
}
