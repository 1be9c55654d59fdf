use std::collections::BTreeMap;

use super::{AdaRepThresholds, MaxRateDelta, PolicyError, PolicyInstance};
use crate::analytic::Partition;
use crate::grammar::{Bindings, Cursor, Token};

/// Parses a policy spec: `norep`, `fullrep`, `upfront:[[1,2],[3]]`,
/// `maxrate`, `maxrate:{delta:exclude}`, `adarep:{1->2:inf, 2->1:1.0}`,
/// `adarep:{[2,1]->3:0.5}` or `adarep-hom:[0.1,0.2]`. Server numbers are
/// one-based.
pub fn parse_policy(src: &str, bindings: &Bindings) -> Result<PolicyInstance, PolicyError> {
    let e = PolicyError::Parse;
    let mut c = Cursor::new(src, bindings).map_err(e)?;
    let name = c.ident().map_err(e)?;
    let p = match name.as_str() {
        "norep" => PolicyInstance::NoRep,
        "fullrep" => PolicyInstance::FullRep,
        "maxrate" => {
            let mut mode = MaxRateDelta::Include;
            if c.eat(&Token::Colon) {
                c.expect(Token::LBrace).map_err(e)?;
                let key = c.ident().map_err(e)?;
                if key != "delta" {
                    return Err(e(format!("unknown maxrate option `{key}`")));
                }
                c.expect(Token::Colon).map_err(e)?;
                mode = match c.ident().map_err(e)?.as_str() {
                    "include" => MaxRateDelta::Include,
                    "exclude" => MaxRateDelta::Exclude,
                    other => return Err(e(format!("maxrate delta must be include|exclude, got `{other}`"))),
                };
                c.expect(Token::RBrace).map_err(e)?;
            }
            PolicyInstance::MaxRate(mode)
        }
        "upfront" => {
            c.expect(Token::Colon).map_err(e)?;
            c.expect(Token::LBracket).map_err(e)?;
            let mut groups = Vec::new();
            loop {
                groups.push(server_list(&mut c)?);
                if c.eat(&Token::RBracket) {
                    break;
                }
                c.expect(Token::Comma).map_err(e)?;
            }
            let k = groups.iter().map(Vec::len).sum();
            PolicyInstance::Upfront(Partition::new(groups, k).map_err(|x| e(x.to_string()))?)
        }
        "adarep" => {
            c.expect(Token::Colon).map_err(e)?;
            c.expect(Token::LBrace).map_err(e)?;
            let mut pairs = BTreeMap::new();
            let mut histories = BTreeMap::new();
            if !c.eat(&Token::RBrace) {
                loop {
                    let history = if c.peek() == Some(&Token::LBracket) {
                        Some(server_list(&mut c)?)
                    } else {
                        None
                    };
                    let origin = match &history {
                        Some(_) => None,
                        None => Some(server(&mut c)?),
                    };
                    c.expect(Token::Arrow).map_err(e)?;
                    let target = server(&mut c)?;
                    c.expect(Token::Colon).map_err(e)?;
                    let t = c.expr().map_err(e)?;
                    if !(t >= 0.0) {
                        return Err(e(format!("threshold {t} must be >= 0")));
                    }
                    let dup = match (history, origin) {
                        (Some(h), _) => {
                            if h.contains(&target) {
                                return Err(e("replication target already in history".into()));
                            }
                            histories.insert((h, target), t).is_some()
                        }
                        (None, Some(o)) => {
                            if o == target {
                                return Err(e("replication target equals origin".into()));
                            }
                            pairs.insert((o, target), t).is_some()
                        }
                        (None, None) => unreachable!(),
                    };
                    if dup {
                        return Err(e("repeated threshold key".into()));
                    }
                    if c.eat(&Token::RBrace) {
                        break;
                    }
                    c.expect(Token::Comma).map_err(e)?;
                }
            }
            PolicyInstance::AdaRep(AdaRepThresholds::Heterogeneous { pairs, histories })
        }
        "adarep-hom" => {
            c.expect(Token::Colon).map_err(e)?;
            c.expect(Token::LBracket).map_err(e)?;
            let mut taus = Vec::new();
            if !c.eat(&Token::RBracket) {
                loop {
                    taus.push(c.expr().map_err(e)?);
                    if c.eat(&Token::RBracket) {
                        break;
                    }
                    c.expect(Token::Comma).map_err(e)?;
                }
            }
            PolicyInstance::AdaRep(AdaRepThresholds::homogeneous(taus)?)
        }
        other => return Err(e(format!("unknown policy `{other}`"))),
    };
    c.finish().map_err(e)?;
    Ok(p)
}

fn server(c: &mut Cursor<'_>) -> Result<usize, PolicyError> {
    match c.next() {
        Some(Token::Number(x)) if x >= 1.0 && x.fract() == 0.0 => Ok(x as usize - 1),
        Some(t) => Err(PolicyError::Parse(format!("expected a server number, found {t}"))),
        None => Err(PolicyError::Parse("expected a server number".into())),
    }
}

fn server_list(c: &mut Cursor<'_>) -> Result<Vec<usize>, PolicyError> {
    c.expect(Token::LBracket).map_err(PolicyError::Parse)?;
    let mut out = Vec::new();
    loop {
        out.push(server(c)?);
        if c.eat(&Token::RBracket) {
            return Ok(out);
        }
        c.expect(Token::Comma).map_err(PolicyError::Parse)?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> PolicyInstance {
        parse_policy(s, &Bindings::new()).unwrap()
    }

    #[test]
    fn all_forms_roundtrip() {
        for s in [
            "norep",
            "fullrep",
            "maxrate",
            "maxrate:{delta:exclude}",
            "upfront:[[1,2],[3]]",
            "adarep:{1->2:inf,2->1:1}",
            "adarep:{1->2:0.5,[1,2]->3:2}",
            "adarep-hom:[0.1,0.2,0.3]",
        ] {
            assert_eq!(p(s).to_string(), s);
        }
    }

    #[test]
    fn pair_shorthand() {
        assert_eq!(
            p("adarep:{1->2:inf, 2->1:1.0}"),
            PolicyInstance::AdaRep(AdaRepThresholds::pair(f64::INFINITY, 1.0))
        );
    }

    #[test]
    fn bindings_in_thresholds() {
        let mut b = Bindings::new();
        b.insert("t".into(), 2.5);
        let q = parse_policy("adarep:{2->1:$t}", &b).unwrap();
        assert_eq!(q.to_string(), "adarep:{2->1:2.5}");
    }

    #[test]
    fn rejects_bad_specs() {
        let b = Bindings::new();
        for s in [
            "upfront:[[1,2],[2]]",
            "adarep:{1->1:2}",
            "adarep:{1->2:-1}",
            "adarep-hom:[0.3,0.1]",
            "maxrate:{delta:sometimes}",
            "random",
            "norep extra",
            "adarep:{0->1:1}",
        ] {
            assert!(parse_policy(s, &b).is_err(), "{s}");
        }
    }

    #[test]
    fn validate_against_system_size() {
        assert!(p("upfront:[[1,2],[3]]").validate(3).is_ok());
        assert!(p("upfront:[[1,2],[3]]").validate(4).is_err());
        assert!(p("adarep:{1->3:1}").validate(2).is_err());
    }
}
