//! Value lists on the command line: `a:b:n` (linear, inclusive),
//! `log:a:b:n` (geometric, inclusive), `x,y,z`, or a single number.

pub fn parse_values(spec: &str) -> Result<Vec<f64>, String> {
    let spec = spec.trim();
    if spec.is_empty() {
        return Err("empty value list".into());
    }
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| format!("`{s}` is not a number"))
            .and_then(|v| {
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(format!("`{s}` is not finite"))
                }
            })
    };
    let parts: Vec<&str> = spec.split(':').collect();
    let (log, parts) = match parts.as_slice() {
        ["log", rest @ ..] => (true, rest),
        _ => (false, parts.as_slice()),
    };
    match parts {
        [a, b, n] => {
            let (a, b) = (num(a)?, num(b)?);
            let n: usize = n
                .trim()
                .parse()
                .map_err(|_| format!("`{n}` is not a point count"))?;
            if n == 0 {
                return Err("a range needs at least one point".into());
            }
            if log && (a <= 0.0 || b <= 0.0) {
                return Err("log ranges need positive bounds".into());
            }
            Ok((0..n)
                .map(|i| {
                    if i == 0 {
                        return a;
                    }
                    if i == n - 1 {
                        return b;
                    }
                    let f = i as f64 / (n - 1) as f64;
                    if log {
                        10f64.powf(a.log10() + f * (b.log10() - a.log10()))
                    } else {
                        a + f * (b - a)
                    }
                })
                .collect())
        }
        [single] if !log => single.split(',').map(num).collect(),
        _ => Err(format!(
            "cannot parse `{spec}`; use a:b:n, log:a:b:n or a comma list"
        )),
    }
}

/// Positive integers from a value list, rounded, in first-seen order.
pub fn parse_counts(spec: &str) -> Result<Vec<u32>, String> {
    let mut out: Vec<u32> = Vec::new();
    for v in parse_values(spec)? {
        let r = v.round();
        if r < 1.0 || r > u32::MAX as f64 {
            return Err(format!("{v} is not a positive count"));
        }
        if !out.contains(&(r as u32)) {
            out.push(r as u32);
        }
    }
    Ok(out)
}
