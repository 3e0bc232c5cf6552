//! Tabular and JSON renderings of sampled sets.

use serde_json::{json, Map, Value as Json};

use crate::problem::ProblemSpec;
use crate::scalar::Scalar;

use super::{Counterfactual, CounterfactualSet, SweepGrid};

/// Feature columns in schema order, then `f_pr, f_sp, f_mp`, auxiliaries, `quality`.
pub fn csv_header<S: Scalar>(spec: &ProblemSpec<S>) -> Vec<String> {
    let mut h: Vec<String> = spec.schema().features().iter().map(|f| f.name.clone()).collect();
    h.extend(["f_pr", "f_sp", "f_mp"].map(String::from));
    h.extend(spec.aux_objectives().iter().map(|o| o.name.clone()));
    h.push("quality".into());
    h
}

/// Auxiliary values are reported in their natural direction.
pub fn csv_row<S: Scalar>(spec: &ProblemSpec<S>, c: &Counterfactual<S>) -> Vec<String> {
    let schema = spec.schema();
    let mut row: Vec<String> = c
        .point
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| schema.format_value(i, *v))
        .collect();
    let o = &c.objectives;
    row.extend([o.proximity, o.sparsity, o.manifold].map(|x| x.to_string()));
    for (spec, v) in spec.aux_objectives().iter().zip(&o.auxiliary) {
        row.push(spec.from_minimized(*v).to_string());
    }
    row.push(c.quality.to_string());
    row
}

fn write_rows(header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

pub fn set_to_csv<S: Scalar>(spec: &ProblemSpec<S>, set: &CounterfactualSet<S>) -> String {
    write_rows(csv_header(spec), set.entries.iter().map(|c| csv_row(spec, c)))
}

fn num<S: Scalar>(x: S) -> Json {
    let v = x.as_f64();
    if v.is_finite() {
        json!(v)
    } else {
        Json::String(v.to_string())
    }
}

pub fn counterfactual_to_json<S: Scalar>(spec: &ProblemSpec<S>, c: &Counterfactual<S>) -> Json {
    let schema = spec.schema();
    let features: Map<String, Json> = schema
        .features()
        .iter()
        .zip(schema.point_to_json(&c.point))
        .map(|(f, v)| (f.name.clone(), v))
        .collect();
    let changed: Vec<&str> = schema
        .features()
        .iter()
        .zip(c.point.values().iter().zip(spec.query().values()))
        .filter(|(_, (a, b))| a != b)
        .map(|(f, _)| f.name.as_str())
        .collect();
    let auxiliary: Map<String, Json> = spec
        .aux_objectives()
        .iter()
        .zip(&c.objectives.auxiliary)
        .map(|(o, v)| (o.name.clone(), num(o.from_minimized(*v))))
        .collect();
    let channels: Map<String, Json> = spec
        .channels()
        .iter()
        .zip(&c.channels)
        .map(|(n, v)| (n.clone(), num(*v)))
        .collect();
    json!({
        "index": c.index,
        "features": features,
        "changed": changed,
        "objectives": {
            "proximity": num(c.objectives.proximity),
            "sparsity": num(c.objectives.sparsity),
            "manifold": num(c.objectives.manifold),
            "auxiliary": auxiliary,
        },
        "channels": channels,
        "quality": c.quality,
        "dtai": c.dtai,
        "ratios": c.ratios,
    })
}

pub fn set_to_json<S: Scalar>(spec: &ProblemSpec<S>, set: &CounterfactualSet<S>) -> Json {
    let schema = spec.schema();
    let query: Map<String, Json> = schema
        .features()
        .iter()
        .zip(schema.point_to_json(spec.query()))
        .map(|(f, v)| (f.name.clone(), v))
        .collect();
    json!({
        "problem_hash": spec.problem_hash(),
        "query": query,
        "entries": set.entries.iter().map(|c| counterfactual_to_json(spec, c)).collect::<Vec<_>>(),
    })
}

/// One row per cell: `row, col`, the effective weights, then the sample columns.
pub fn sweep_to_csv<S: Scalar>(spec: &ProblemSpec<S>, grid: &SweepGrid<S>) -> String {
    let mut header: Vec<String> = ["row", "col", "w_pr", "w_sp", "w_mp", "w_d"].map(String::from).to_vec();
    header.extend(csv_header(spec));
    header.push("dtai".into());
    let rows = grid.cells.iter().map(|cell| {
        let r = &cell.request;
        let mut row = vec![cell.row.to_string(), cell.col.to_string()];
        row.extend([r.w_pr, r.w_sp, r.w_mp, r.w_d].map(|x| x.to_string()));
        row.extend(csv_row(spec, &cell.best));
        row.push(cell.best.dtai.map(|d| d.to_string()).unwrap_or_default());
        row
    });
    write_rows(header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench2d;
    use crate::optimizer::{run_optimization, OptimizerConfig};
    use crate::sampler::{sample, sweep, SamplingRequest, SweepSpec};

    #[test]
    fn csv_and_json_shapes() {
        let spec = bench2d::problem::<f64>(bench2d::dataset(1, 200), bench2d::query("D2").unwrap()).unwrap();
        let cfg = OptimizerConfig {
            population_size: 20,
            generations: 10,
            ..OptimizerConfig::default()
        };
        let archive = run_optimization(&spec, &cfg, &mut |_| {}).unwrap();
        let set = sample(&archive, &SamplingRequest::balanced(3), &spec).unwrap();
        let text = set_to_csv(&spec, &set);
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "x1,x2,f_pr,f_sp,f_mp,quality");
        assert_eq!(lines.count(), set.len());

        let doc = set_to_json(&spec, &set);
        let first = &doc["entries"][0];
        assert_eq!(first["features"]["x1"], json!(set.entries[0].point[0].as_real().unwrap()));
        assert!(first["channels"]["Y1"].is_number());

        let spec_grid = SweepSpec {
            rows: 2,
            cols: 3,
            ..SweepSpec::weight_by_priority(2, 3, "a", "b")
        };
        let plain = SweepSpec {
            col: Default::default(),
            ..spec_grid
        };
        let grid = sweep(&archive, &spec, &plain, &SamplingRequest::balanced(1)).unwrap();
        let text = sweep_to_csv(&spec, &grid);
        assert_eq!(text.lines().count(), 7);
        assert!(text.starts_with("row,col,w_pr,w_sp,w_mp,w_d,x1,x2,"));
    }
}
