//! Parsers for the compact `--target` and `--*-schedule` flag syntax.

use mcd_core::objectives::Direction;
use mcd_core::sampler::{Overrides, Target};

/// `objective=value[:alpha=a][:beta=b][:direction=minimize|maximize]`
pub fn parse_target(s: &str) -> Result<Target, String> {
    let mut parts = s.split(':');
    let head = parts.next().unwrap_or_default();
    let (name, value) = head
        .split_once('=')
        .ok_or_else(|| format!("target `{s}` must look like objective=value"))?;
    let name = name.trim();
    if name.is_empty() {
        return Err(format!("target `{s}` has no objective name"));
    }
    let number = |k: &str, v: &str| v.trim().parse::<f64>().map_err(|_| format!("target `{s}`: bad {k} `{v}`"));
    let mut target = Target::new(name, number("value", value)?, 1.0, 1.0);
    for part in parts {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| format!("target `{s}`: expected key=value, got `{part}`"))?;
        match k.trim() {
            "alpha" => target.alpha = number("alpha", v)?,
            "beta" => target.beta = number("beta", v)?,
            "direction" => {
                target.direction = Some(match v.trim() {
                    "min" | "minimize" => Direction::Minimize,
                    "max" | "maximize" => Direction::Maximize,
                    other => return Err(format!("target `{s}`: unknown direction `{other}`")),
                })
            }
            other => return Err(format!("target `{s}`: unknown key `{other}`")),
        }
    }
    Ok(target)
}

/// `key=expr;key=expr`. A lone expression sets `w`. Keys: `w`, `w_pr`, `w_sp`,
/// `w_mp`, `w_d`, `alpha.<objective>`, `beta.<objective>`.
pub fn parse_schedule(s: &str) -> Result<Overrides, String> {
    let mut o = Overrides::default();
    let items: Vec<&str> = s.split(';').map(str::trim).filter(|p| !p.is_empty()).collect();
    if items.len() == 1 && !items[0].contains('=') {
        o.w = Some(items[0].to_string());
        return Ok(o);
    }
    for item in items {
        let (k, expr) = item
            .split_once('=')
            .ok_or_else(|| format!("schedule item `{item}` must look like key=expression"))?;
        let expr = expr.trim().to_string();
        match k.trim() {
            "w" => o.w = Some(expr),
            "w_pr" => o.w_pr = Some(expr),
            "w_sp" => o.w_sp = Some(expr),
            "w_mp" => o.w_mp = Some(expr),
            "w_d" => o.w_d = Some(expr),
            key => {
                let (kind, name) = key
                    .split_once('.')
                    .ok_or_else(|| format!("unknown schedule key `{key}`"))?;
                let map = match kind {
                    "alpha" => &mut o.alpha,
                    "beta" => &mut o.beta,
                    _ => return Err(format!("unknown schedule key `{key}`")),
                };
                map.insert(name.to_string(), expr);
            }
        }
    }
    Ok(o)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn targets() {
        let t = parse_target("mass=2.5").unwrap();
        assert_eq!((t.objective.as_str(), t.target, t.alpha, t.beta), ("mass", 2.5, 1.0, 1.0));
        let t = parse_target("Y2=0.9:alpha=2:beta=0.5:direction=max").unwrap();
        assert_eq!((t.alpha, t.beta, t.direction), (2.0, 0.5, Some(Direction::Maximize)));
        assert!(parse_target("mass").is_err());
        assert!(parse_target("mass=x").is_err());
        assert!(parse_target("mass=1:gamma=2").is_err());
    }

    #[test]
    fn schedules() {
        assert_eq!(parse_schedule("0.2/2^i").unwrap().w.as_deref(), Some("0.2/2^i"));
        let o = parse_schedule("w_d = 2*j; alpha.mass=1.5^(n-j)").unwrap();
        assert_eq!(o.w_d.as_deref(), Some("2*j"));
        assert_eq!(o.alpha["mass"], "1.5^(n-j)");
        assert!(parse_schedule("gamma=1;w=2").is_err());
        assert_eq!(parse_schedule("").unwrap(), Overrides::default());
    }
}
