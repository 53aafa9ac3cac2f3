use std::collections::BTreeMap;

use super::CriticError;

/// A versioned `key = value` parameter file. `#` starts a comment.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamFile {
    pub version: u32,
    pub entries: BTreeMap<String, String>,
}

impl ParamFile {
    pub fn parse(text: &str) -> Result<Self, CriticError> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CriticError::Params(format!("line {}: expected key = value", n + 1)))?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        let version = entries
            .remove("version")
            .ok_or_else(|| CriticError::Params("missing version".into()))?
            .parse()
            .map_err(|_| CriticError::Params("version must be an integer".into()))?;
        Ok(ParamFile { version, entries })
    }

    pub fn number(&self, key: &str) -> Result<f64, CriticError> {
        let v = self
            .entries
            .get(key)
            .ok_or_else(|| CriticError::Params(format!("missing key {key}")))?;
        v.parse()
            .map_err(|_| CriticError::Params(format!("{key}: not a number: {v}")))
    }

    /// A curve written as `x:y, x:y, ...` with ascending x.
    pub fn curve(&self, key: &str) -> Result<Curve, CriticError> {
        let v = self
            .entries
            .get(key)
            .ok_or_else(|| CriticError::Params(format!("missing key {key}")))?;
        let mut points = Vec::new();
        for pair in v.split(',') {
            let bad = || CriticError::Params(format!("{key}: bad point {pair:?}"));
            let (x, y) = pair.trim().split_once(':').ok_or_else(bad)?;
            points.push((x.trim().parse().map_err(|_| bad())?, y.trim().parse().map_err(|_| bad())?));
        }
        Curve::new(points).map_err(|m| CriticError::Params(format!("{key}: {m}")))
    }

    pub fn write(&self) -> String {
        let mut out = format!("version = {}\n", self.version);
        for (k, v) in &self.entries {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

/// Piecewise-linear function, constant beyond its end points.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    points: Vec<(f64, f64)>,
}

impl Curve {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, String> {
        if points.is_empty() {
            return Err("no points".into());
        }
        if points.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err("x values must ascend".into());
        }
        Ok(Curve { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn eval(&self, x: f64) -> f64 {
        let p = &self.points;
        if x <= p[0].0 {
            return p[0].1;
        }
        for w in p.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if x <= x1 {
                return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
            }
        }
        p[p.len() - 1].1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_eval() {
        let f = ParamFile::parse("# c\nversion = 3\na = 1.5\nc = 0:0, 2:1, 4:1\n").unwrap();
        assert_eq!(f.version, 3);
        assert_eq!(f.number("a").unwrap(), 1.5);
        let c = f.curve("c").unwrap();
        assert_eq!(c.eval(-1.0), 0.0);
        assert_eq!(c.eval(1.0), 0.5);
        assert_eq!(c.eval(3.0), 1.0);
        assert_eq!(c.eval(9.0), 1.0);
        assert!(ParamFile::parse("a = 1").is_err());
        assert!(Curve::new(vec![(1.0, 0.0), (1.0, 1.0)]).is_err());
        assert_eq!(ParamFile::parse(&f.write()).unwrap(), f);
    }
}
