//! A small Jinja-compatible renderer.
//!
//! Supported: `{{ expr }}`, `{% for x in expr %}…{% endfor %}` (with the
//! usual `loop.index`, `loop.index0`, `loop.first`, `loop.last`,
//! `loop.length`), and `{% if [not] expr %}…[{% else %}…]{% endif %}`.
//! Expressions are dotted/indexed paths, integer literals, `len(path)`, and
//! `+`, optionally followed by the `trim` or `tojson` filters. Any other tag
//! is a syntax error. Output placeholders that resolve to nothing are
//! errors; `if` conditions treat missing values as false.

use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template '{template}': syntax error at byte {offset}: {message}")]
    Syntax {
        template: String,
        offset: usize,
        message: String,
    },
    #[error("template '{template}': missing variable '{placeholder}'")]
    MissingVariable { template: String, placeholder: String },
    #[error("template '{template}': {message}")]
    Type { template: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
enum Segment {
    Key(String),
    Index(usize),
}

#[derive(Debug, Clone, PartialEq)]
struct Path {
    text: String,
    root: String,
    rest: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq)]
enum Term {
    Path(Path),
    Int(i64),
    Len(Path),
}

#[derive(Debug, Clone, PartialEq)]
enum Filter {
    Trim,
    ToJson,
}

#[derive(Debug, Clone, PartialEq)]
struct Expr {
    terms: Vec<Term>,
    filters: Vec<Filter>,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Text(String),
    Output(Expr),
    For {
        var: String,
        iter: Expr,
        body: Vec<Node>,
    },
    If {
        negate: bool,
        cond: Expr,
        then: Vec<Node>,
        otherwise: Vec<Node>,
    },
}

/// A named, pre-parsed prompt template.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    name: String,
    body: String,
    nodes: Vec<Node>,
}

impl PromptTemplate {
    pub fn parse(name: impl Into<String>, body: impl Into<String>) -> Result<Self, TemplateError> {
        let name = name.into();
        let body = body.into();
        let tokens = tokenize(&name, &body)?;
        let mut pos = 0;
        let nodes = parse_nodes(&name, &tokens, &mut pos, &[])?;
        if pos != tokens.len() {
            let (off, _) = &tokens[pos];
            return Err(syntax(&name, *off, "unexpected block tag"));
        }
        Ok(PromptTemplate { name, body, nodes })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn render(&self, vars: &Map<String, Value>) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.body.len() * 2);
        let mut scope = Scope {
            globals: vars,
            locals: Vec::new(),
        };
        render_nodes(&self.name, &self.nodes, &mut scope, &mut out)?;
        Ok(out)
    }

    /// Convenience wrapper for a `json!({...})` object.
    pub fn render_value(&self, vars: &Value) -> Result<String, TemplateError> {
        match vars {
            Value::Object(map) => self.render(map),
            _ => Err(TemplateError::Type {
                template: self.name.clone(),
                message: "template variables must be an object".into(),
            }),
        }
    }
}

fn syntax(template: &str, offset: usize, message: impl Into<String>) -> TemplateError {
    TemplateError::Syntax {
        template: template.to_string(),
        offset,
        message: message.into(),
    }
}

#[derive(Debug)]
enum Tok {
    Text(String),
    Expr(String),
    Block(String),
}

fn tokenize(name: &str, body: &str) -> Result<Vec<(usize, Tok)>, TemplateError> {
    let mut out = Vec::new();
    let mut rest = 0;
    let bytes = body.as_bytes();
    let mut i = 0;
    while i + 1 < bytes.len() {
        if bytes[i] == b'{' && (bytes[i + 1] == b'{' || bytes[i + 1] == b'%') {
            let close = if bytes[i + 1] == b'{' { "}}" } else { "%}" };
            let Some(end) = body[i + 2..].find(close) else {
                return Err(syntax(name, i, format!("unterminated tag, expected '{close}'")));
            };
            if rest < i {
                out.push((rest, Tok::Text(body[rest..i].to_string())));
            }
            let inner = body[i + 2..i + 2 + end].trim().to_string();
            out.push((
                i,
                if close == "}}" {
                    Tok::Expr(inner)
                } else {
                    Tok::Block(inner)
                },
            ));
            i = i + 2 + end + 2;
            rest = i;
        } else {
            i += 1;
        }
    }
    if rest < body.len() {
        out.push((rest, Tok::Text(body[rest..].to_string())));
    }
    Ok(out)
}

/// Parses nodes until one of `stops` block keywords is met (not consumed).
fn parse_nodes(
    name: &str,
    tokens: &[(usize, Tok)],
    pos: &mut usize,
    stops: &[&str],
) -> Result<Vec<Node>, TemplateError> {
    let mut nodes = Vec::new();
    while *pos < tokens.len() {
        let (off, tok) = &tokens[*pos];
        match tok {
            Tok::Text(t) => {
                nodes.push(Node::Text(t.clone()));
                *pos += 1;
            }
            Tok::Expr(e) => {
                nodes.push(Node::Output(parse_expr(name, *off, e)?));
                *pos += 1;
            }
            Tok::Block(b) => {
                let keyword = b.split_whitespace().next().unwrap_or("");
                if stops.contains(&keyword) {
                    return Ok(nodes);
                }
                *pos += 1;
                match keyword {
                    "for" => nodes.push(parse_for(name, *off, b, tokens, pos)?),
                    "if" => nodes.push(parse_if(name, *off, b, tokens, pos)?),
                    other => return Err(syntax(name, *off, format!("unsupported tag '{other}'"))),
                }
            }
        }
    }
    if stops.is_empty() {
        Ok(nodes)
    } else {
        Err(syntax(name, tokens.last().map_or(0, |t| t.0), format!("missing '{}'", stops.join("' or '"))))
    }
}

fn expect_block(name: &str, tokens: &[(usize, Tok)], pos: &mut usize, want: &str) -> Result<(), TemplateError> {
    match tokens.get(*pos) {
        Some((_, Tok::Block(b))) if b == want => {
            *pos += 1;
            Ok(())
        }
        Some((off, _)) => Err(syntax(name, *off, format!("expected '{{% {want} %}}'"))),
        None => Err(syntax(name, tokens.last().map_or(0, |t| t.0), format!("missing '{{% {want} %}}'"))),
    }
}

fn parse_for(
    name: &str,
    off: usize,
    header: &str,
    tokens: &[(usize, Tok)],
    pos: &mut usize,
) -> Result<Node, TemplateError> {
    let rest = header.trim_start_matches("for").trim_start();
    let (var, iter) = rest
        .split_once(" in ")
        .ok_or_else(|| syntax(name, off, "expected 'for <name> in <expr>'"))?;
    let var = var.trim();
    if header.split_whitespace().count() < 4 || !is_ident(var) {
        return Err(syntax(name, off, "expected 'for <name> in <expr>'"));
    }
    let iter = parse_expr(name, off, iter.trim())?;
    let body = parse_nodes(name, tokens, pos, &["endfor"])?;
    expect_block(name, tokens, pos, "endfor")?;
    Ok(Node::For {
        var: var.to_string(),
        iter,
        body,
    })
}

fn parse_if(
    name: &str,
    off: usize,
    header: &str,
    tokens: &[(usize, Tok)],
    pos: &mut usize,
) -> Result<Node, TemplateError> {
    let mut cond = header["if".len()..].trim();
    let negate = cond.starts_with("not ");
    if negate {
        cond = cond["not ".len()..].trim();
    }
    let cond = parse_expr(name, off, cond)?;
    let then = parse_nodes(name, tokens, pos, &["else", "endif"])?;
    let mut otherwise = Vec::new();
    if matches!(tokens.get(*pos), Some((_, Tok::Block(b))) if b == "else") {
        *pos += 1;
        otherwise = parse_nodes(name, tokens, pos, &["endif"])?;
    }
    expect_block(name, tokens, pos, "endif")?;
    Ok(Node::If {
        negate,
        cond,
        then,
        otherwise,
    })
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn parse_expr(name: &str, off: usize, src: &str) -> Result<Expr, TemplateError> {
    let mut pieces = src.split('|');
    let head = pieces.next().unwrap_or("").trim();
    if head.is_empty() {
        return Err(syntax(name, off, "empty expression"));
    }
    let mut filters = Vec::new();
    for f in pieces {
        filters.push(match f.trim() {
            "trim" => Filter::Trim,
            "tojson" => Filter::ToJson,
            other => return Err(syntax(name, off, format!("unsupported filter '{other}'"))),
        });
    }
    let terms = head
        .split('+')
        .map(|t| parse_term(name, off, t.trim()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Expr { terms, filters })
}

fn parse_term(name: &str, off: usize, src: &str) -> Result<Term, TemplateError> {
    if let Ok(n) = src.parse::<i64>() {
        return Ok(Term::Int(n));
    }
    if let Some(inner) = src.strip_prefix("len(").and_then(|s| s.strip_suffix(')')) {
        return Ok(Term::Len(parse_path(name, off, inner.trim())?));
    }
    Ok(Term::Path(parse_path(name, off, src)?))
}

fn parse_path(name: &str, off: usize, src: &str) -> Result<Path, TemplateError> {
    let bad = || syntax(name, off, format!("unsupported expression '{src}'"));
    let root_end = src.find(['.', '[']).unwrap_or(src.len());
    let root = &src[..root_end];
    if !is_ident(root) {
        return Err(bad());
    }
    let mut rest = Vec::new();
    let mut s = &src[root_end..];
    while !s.is_empty() {
        if let Some(r) = s.strip_prefix('.') {
            let end = r.find(['.', '[']).unwrap_or(r.len());
            let key = &r[..end];
            if !is_ident(key) {
                return Err(bad());
            }
            rest.push(Segment::Key(key.to_string()));
            s = &r[end..];
        } else if let Some(r) = s.strip_prefix('[') {
            let end = r.find(']').ok_or_else(bad)?;
            let inner = r[..end].trim();
            let quoted = inner
                .strip_prefix('\'')
                .and_then(|x| x.strip_suffix('\''))
                .or_else(|| inner.strip_prefix('"').and_then(|x| x.strip_suffix('"')));
            if let Some(key) = quoted {
                rest.push(Segment::Key(key.to_string()));
            } else {
                rest.push(Segment::Index(inner.parse().map_err(|_| bad())?));
            }
            s = &r[end + 1..];
        } else {
            return Err(bad());
        }
    }
    Ok(Path {
        text: src.to_string(),
        root: root.to_string(),
        rest,
    })
}

struct Scope<'a> {
    globals: &'a Map<String, Value>,
    locals: Vec<(String, Value)>,
}

impl Scope<'_> {
    fn lookup(&self, path: &Path) -> Option<Value> {
        let root = self
            .locals
            .iter()
            .rev()
            .find(|(k, _)| *k == path.root)
            .map(|(_, v)| v)
            .or_else(|| self.globals.get(&path.root))?;
        let mut cur = root;
        for seg in &path.rest {
            cur = match (seg, cur) {
                (Segment::Key(k), Value::Object(m)) => m.get(k)?,
                (Segment::Index(i), Value::Array(a)) => a.get(*i)?,
                _ => return None,
            };
        }
        Some(cur.clone())
    }
}

fn type_err(template: &str, message: impl Into<String>) -> TemplateError {
    TemplateError::Type {
        template: template.to_string(),
        message: message.into(),
    }
}

/// Evaluates an expression; `Ok(None)` means some path was undefined.
fn eval(template: &str, expr: &Expr, scope: &Scope<'_>) -> Result<Result<Value, String>, TemplateError> {
    let mut acc: Option<Value> = None;
    for term in &expr.terms {
        let v = match term {
            Term::Int(n) => Value::from(*n),
            Term::Path(p) => match scope.lookup(p) {
                Some(v) => v,
                None => return Ok(Err(p.text.clone())),
            },
            Term::Len(p) => match scope.lookup(p) {
                Some(Value::Array(a)) => Value::from(a.len()),
                Some(Value::String(s)) => Value::from(s.chars().count()),
                Some(Value::Object(o)) => Value::from(o.len()),
                Some(_) => return Err(type_err(template, format!("len() of non-collection '{}'", p.text))),
                None => return Ok(Err(p.text.clone())),
            },
        };
        acc = Some(match acc {
            None => v,
            Some(prev) => match (&prev, &v) {
                (Value::Number(a), Value::Number(b)) if a.is_i64() && b.is_i64() => {
                    Value::from(a.as_i64().unwrap() + b.as_i64().unwrap())
                }
                (Value::String(a), Value::String(b)) => Value::from(format!("{a}{b}")),
                _ => return Err(type_err(template, "'+' needs two integers or two strings")),
            },
        });
    }
    let mut v = acc.expect("expression has at least one term");
    for f in &expr.filters {
        v = match f {
            Filter::Trim => match v {
                Value::String(s) => Value::String(s.trim().to_string()),
                other => Value::String(display(&other).trim().to_string()),
            },
            Filter::ToJson => Value::String(v.to_string()),
        };
    }
    Ok(Ok(v))
}

fn display(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        Value::Bool(b) => b.to_string(),
        other => other.to_string(),
    }
}

fn truthy(v: &Value) -> bool {
    match v {
        Value::Null => false,
        Value::Bool(b) => *b,
        Value::Number(n) => n.as_f64().is_some_and(|x| x != 0.0),
        Value::String(s) => !s.is_empty(),
        Value::Array(a) => !a.is_empty(),
        Value::Object(o) => !o.is_empty(),
    }
}

fn render_nodes(template: &str, nodes: &[Node], scope: &mut Scope<'_>, out: &mut String) -> Result<(), TemplateError> {
    for node in nodes {
        match node {
            Node::Text(t) => out.push_str(t),
            Node::Output(expr) => match eval(template, expr, scope)? {
                Ok(Value::Null) => {
                    return Err(TemplateError::MissingVariable {
                        template: template.to_string(),
                        placeholder: expr_text(expr),
                    })
                }
                Err(placeholder) => {
                    return Err(TemplateError::MissingVariable {
                        template: template.to_string(),
                        placeholder,
                    })
                }
                Ok(v) => out.push_str(&display(&v)),
            },
            Node::If {
                negate,
                cond,
                then,
                otherwise,
            } => {
                let holds = match eval(template, cond, scope)? {
                    Ok(v) => truthy(&v),
                    Err(_) => false,
                };
                let branch = if holds != *negate { then } else { otherwise };
                render_nodes(template, branch, scope, out)?;
            }
            Node::For { var, iter, body } => {
                let items = match eval(template, iter, scope)? {
                    Ok(Value::Array(a)) => a,
                    Ok(_) => return Err(type_err(template, format!("'for {var}' over a non-list"))),
                    Err(p) => {
                        return Err(TemplateError::MissingVariable {
                            template: template.to_string(),
                            placeholder: p,
                        })
                    }
                };
                let n = items.len();
                for (i, item) in items.into_iter().enumerate() {
                    let lp = serde_json::json!({
                        "index": i + 1,
                        "index0": i,
                        "first": i == 0,
                        "last": i + 1 == n,
                        "length": n,
                    });
                    scope.locals.push((var.clone(), item));
                    scope.locals.push(("loop".to_string(), lp));
                    let r = render_nodes(template, body, scope, out);
                    scope.locals.pop();
                    scope.locals.pop();
                    r?;
                }
            }
        }
    }
    Ok(())
}

fn expr_text(expr: &Expr) -> String {
    expr.terms
        .iter()
        .map(|t| match t {
            Term::Int(n) => n.to_string(),
            Term::Path(p) => p.text.clone(),
            Term::Len(p) => format!("len({})", p.text),
        })
        .collect::<Vec<_>>()
        .join(" + ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn render(body: &str, vars: Value) -> Result<String, TemplateError> {
        PromptTemplate::parse("t", body)?.render_value(&vars)
    }

    #[test]
    fn no_placeholders_is_identity() {
        let body = "Plain text with { single } braces and 100% coverage.";
        assert_eq!(render(body, json!({})).unwrap(), body);
    }

    #[test]
    fn substitution_and_missing_variable() {
        assert_eq!(render("a {{ x }} b {{y}}", json!({"x": 1, "y": "z"})).unwrap(), "a 1 b z");
        let err = render("a {{ missing }}", json!({})).unwrap_err();
        assert_eq!(
            err,
            TemplateError::MissingVariable {
                template: "t".into(),
                placeholder: "missing".into()
            }
        );
        let err = render("{{ r.abstract }}", json!({"r": {"title": "x"}})).unwrap_err();
        assert!(matches!(err, TemplateError::MissingVariable { placeholder, .. } if placeholder == "r.abstract"));
        assert!(render("{{ n }}", json!({"n": null})).is_err());
    }

    #[test]
    fn loops_expand_in_order_with_loop_vars() {
        let out = render(
            "{% for x in xs %}{{ loop.index }}:{{ x }}{% if not loop.last %},{% endif %}{% endfor %}",
            json!({"xs": ["a", "b", "c"]}),
        )
        .unwrap();
        assert_eq!(out, "1:a,2:b,3:c");
    }

    #[test]
    fn offset_arithmetic_and_len() {
        let out = render(
            "{% for r in recent %}#{{ loop.index + len(genesis) }} {% endfor %}",
            json!({"genesis": [1, 2], "recent": ["x", "y"]}),
        )
        .unwrap();
        assert_eq!(out, "#3 #4 ");
    }

    #[test]
    fn indexing_filters_and_if_else() {
        let vars = json!({"pair": ["para", {"abstract": " abs "}], "c": {"key": "a\"b"}});
        assert_eq!(render("{{ pair[0] }}|{{ pair[1].abstract | trim }}", vars.clone()).unwrap(), "para|abs");
        assert_eq!(render("{{ c['key'] | tojson }}", vars.clone()).unwrap(), "\"a\\\"b\"");
        assert_eq!(render("{% if nope %}y{% else %}n{% endif %}", vars).unwrap(), "n");
    }

    #[test]
    fn unsupported_constructs_are_errors() {
        assert!(matches!(render("{% set x = 1 %}", json!({})), Err(TemplateError::Syntax { .. })));
        assert!(matches!(render("{% for x in xs %}", json!({"xs": []})), Err(TemplateError::Syntax { .. })));
        assert!(matches!(render("{{ x | upper }}", json!({"x": "a"})), Err(TemplateError::Syntax { .. })));
        assert!(matches!(render("{{ x", json!({"x": "a"})), Err(TemplateError::Syntax { .. })));
        assert!(matches!(render("{% endif %}", json!({})), Err(TemplateError::Syntax { .. })));
    }

    #[test]
    fn loop_over_missing_list_is_missing_variable() {
        assert!(matches!(
            render("{% for x in xs %}{% endfor %}", json!({})),
            Err(TemplateError::MissingVariable { .. })
        ));
    }
}
