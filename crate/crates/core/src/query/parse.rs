//! Parser for the supported SQL subset:
//!
//! ```text
//! query     = SELECT aggregate FROM table [alias] join* [WHERE conjunct (AND conjunct)*]
//!             [GROUP BY column (, column)*] [;]
//! aggregate = COUNT(*) | SUM(column) | AVG(column)
//! join      = [NATURAL | INNER | LEFT [OUTER] | RIGHT [OUTER] | FULL [OUTER]] JOIN table [alias]
//!             [ON column = column]
//! conjunct  = column op literal | column [NOT] IN (literal (, literal)*) | column IS NOT NULL
//! op        = = | <> | != | < | <= | > | >=
//! literal   = number | 'string'
//! ```
//!
//! Columns are written `col`, `table.col` or `alias.col`. Joins follow a
//! declared foreign key between the new table and one already listed.

use std::collections::{BTreeMap, BTreeSet};

use super::{Aggregate, JoinEdge, JoinKind, QueryAst};
use crate::error::{Error, Result};
use crate::schema::{qualified, SchemaGraph};
use crate::spn::{CmpOp, Condition, Conjunct, Predicate};
use crate::value::{ColumnKind, Datum};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(String),
    Str(String),
    Sym(&'static str),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    offset: usize,
}

fn syntax(offset: usize, message: impl Into<String>) -> Error {
    Error::Syntax {
        offset,
        message: message.into(),
    }
}

fn tokenize(text: &str) -> Result<Vec<Token>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(text[start..i].to_string()),
                offset: start,
            });
            continue;
        }
        let numeric_start = c.is_ascii_digit()
            || ((c == '-' || c == '.') && i + 1 < bytes.len() && (bytes[i + 1] as char).is_ascii_digit());
        if numeric_start {
            i += 1;
            while i < bytes.len() {
                let d = bytes[i] as char;
                let exp_sign = (d == '-' || d == '+') && matches!(bytes[i - 1], b'e' | b'E');
                if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                    i += 1;
                } else {
                    break;
                }
            }
            out.push(Token {
                tok: Tok::Num(text[start..i].to_string()),
                offset: start,
            });
            continue;
        }
        if c == '\'' {
            let mut s = String::new();
            i += 1;
            loop {
                if i >= bytes.len() {
                    return Err(syntax(start, "unterminated string literal"));
                }
                let ch = text[i..].chars().next().expect("in bounds");
                if ch == '\'' {
                    if i + 1 < bytes.len() && bytes[i + 1] == b'\'' {
                        s.push('\'');
                        i += 2;
                        continue;
                    }
                    i += 1;
                    break;
                }
                s.push(ch);
                i += ch.len_utf8();
            }
            out.push(Token {
                tok: Tok::Str(s),
                offset: start,
            });
            continue;
        }
        let two = text.get(i..i + 2).unwrap_or("");
        let sym: &'static str = match two {
            "<=" => "<=",
            ">=" => ">=",
            "<>" => "<>",
            "!=" => "!=",
            "||" => "||",
            _ => match c {
                '(' => "(",
                ')' => ")",
                ',' => ",",
                '*' => "*",
                '=' => "=",
                '<' => "<",
                '>' => ">",
                '.' => ".",
                ';' => ";",
                '+' => "+",
                '-' => "-",
                '/' => "/",
                _ => return Err(syntax(start, format!("unexpected character {c:?}"))),
            },
        };
        i += sym.len();
        out.push(Token {
            tok: Tok::Sym(sym),
            offset: start,
        });
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<Token>,
    pos: usize,
    end: usize,
    schema: &'a SchemaGraph,
    /// Alias or table name (lowercase) to table.
    names: BTreeMap<String, String>,
    tables: Vec<String>,
}

const RESERVED: &[&str] = &[
    "select", "from", "where", "and", "or", "not", "join", "natural", "inner", "left", "right", "full", "outer",
    "on", "group", "by", "in", "is", "null", "order", "having", "limit", "union", "as",
];

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |t| t.offset)
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s.eq_ignore_ascii_case(kw))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(syntax(self.offset(), format!("expected {}", kw.to_uppercase())))
        }
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Some(Tok::Sym(x)) if *x == s)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<()> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            Err(syntax(self.offset(), format!("expected '{s}'")))
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(syntax(self.offset(), "expected identifier")),
        }
    }

    fn parse(&mut self) -> Result<QueryAst> {
        self.expect_kw("select")?;
        if self.eat_kw("distinct") {
            return Err(Error::Unsupported("DISTINCT".into()));
        }
        let agg = self.aggregate()?;
        if self.is_sym(",") {
            return Err(Error::Unsupported("multiple aggregates in one query".into()));
        }
        self.expect_kw("from")?;
        let first = self.table_ref()?;
        self.tables.push(first);
        let mut joins = Vec::new();
        loop {
            if self.is_sym(",") {
                return Err(Error::Unsupported("comma joins; use JOIN".into()));
            }
            let kind = if self.eat_kw("natural") || self.eat_kw("inner") {
                JoinKind::Inner
            } else if self.eat_kw("left") {
                self.eat_kw("outer");
                JoinKind::Left
            } else if self.eat_kw("right") {
                self.eat_kw("outer");
                JoinKind::Right
            } else if self.eat_kw("full") {
                self.eat_kw("outer");
                JoinKind::Full
            } else if self.is_kw("join") {
                JoinKind::Inner
            } else if self.is_kw("cross") {
                return Err(Error::Unsupported("cross product".into()));
            } else {
                break;
            };
            self.expect_kw("join")?;
            let at = self.offset();
            let t = self.table_ref()?;
            if self.tables.contains(&t) {
                return Err(Error::Unsupported(format!("self join on {t}")));
            }
            let on = if self.eat_kw("on") {
                let a = self.column()?;
                self.expect_sym("=")?;
                let b = self.column()?;
                Some((a, b))
            } else {
                None
            };
            let edge = self.resolve_join(&t, kind, on, at)?;
            self.tables.push(t);
            joins.push(edge);
        }
        let mut predicate = Predicate::default();
        if self.eat_kw("where") {
            loop {
                if self.eat_sym("(") {
                    return Err(Error::Unsupported("parenthesized conditions".into()));
                }
                predicate.conjuncts.push(self.conjunct()?);
                if self.eat_kw("and") {
                    continue;
                }
                if self.is_kw("or") {
                    return Err(Error::Unsupported("disjunction".into()));
                }
                break;
            }
        }
        let mut group_by = Vec::new();
        if self.eat_kw("group") {
            self.expect_kw("by")?;
            loop {
                group_by.push(self.column()?);
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        for kw in ["order", "having", "limit", "union"] {
            if self.is_kw(kw) {
                return Err(Error::Unsupported(kw.to_uppercase()));
            }
        }
        self.eat_sym(";");
        if self.pos < self.toks.len() {
            return Err(syntax(self.offset(), "unexpected trailing input"));
        }
        let ast = QueryAst {
            aggregate: agg,
            tables: self.tables.clone(),
            joins,
            predicate,
            group_by,
        };
        Ok(ast)
    }

    fn aggregate(&mut self) -> Result<Aggregate> {
        let at = self.offset();
        let name = self.ident()?.to_ascii_lowercase();
        self.expect_sym("(")?;
        let agg = match name.as_str() {
            "count" => {
                if self.eat_sym("*") {
                    Aggregate::Count
                } else if self.is_kw("distinct") {
                    return Err(Error::Unsupported("DISTINCT aggregates".into()));
                } else {
                    return Err(Error::Unsupported("COUNT(column); use COUNT(*)".into()));
                }
            }
            "sum" | "avg" => {
                if self.is_kw("distinct") {
                    return Err(Error::Unsupported("DISTINCT aggregates".into()));
                }
                // the aggregated column is resolved after FROM is known
                let col = self.raw_column()?;
                if !self.is_sym(")") {
                    return Err(Error::Unsupported("arithmetic in aggregates".into()));
                }
                if name == "sum" {
                    Aggregate::Sum(col)
                } else {
                    Aggregate::Avg(col)
                }
            }
            "min" | "max" => return Err(Error::Unsupported(format!("{} aggregate", name.to_uppercase()))),
            other => return Err(syntax(at, format!("unknown aggregate {other}"))),
        };
        self.expect_sym(")")?;
        Ok(agg)
    }

    fn table_ref(&mut self) -> Result<String> {
        let name = self.ident()?;
        let table = self
            .schema
            .tables
            .iter()
            .find(|t| t.name.eq_ignore_ascii_case(&name))
            .map(|t| t.name.clone())
            .ok_or_else(|| Error::UnknownTable(name.clone()))?;
        self.names.insert(table.to_ascii_lowercase(), table.clone());
        self.eat_kw("as");
        if let Some(Tok::Ident(a)) = self.peek() {
            if !RESERVED.iter().any(|k| a.eq_ignore_ascii_case(k)) {
                let a = a.to_ascii_lowercase();
                self.pos += 1;
                self.names.insert(a, table.clone());
            }
        }
        Ok(table)
    }

    /// Column reference as written: `col` or `qualifier.col`.
    fn raw_column(&mut self) -> Result<String> {
        let a = self.ident()?;
        if self.eat_sym(".") {
            let b = self.ident()?;
            Ok(format!("{a}.{b}"))
        } else {
            Ok(a)
        }
    }

    fn column(&mut self) -> Result<String> {
        let raw = self.raw_column()?;
        self.resolve(&raw)
    }

    /// Resolve a column against the tables listed so far.
    fn resolve(&self, raw: &str) -> Result<String> {
        if let Some((q, c)) = raw.split_once('.') {
            let table = self
                .names
                .get(&q.to_ascii_lowercase())
                .ok_or_else(|| Error::UnknownTable(q.to_string()))?;
            let def = self.schema.table(table).expect("resolved");
            let col = def
                .columns
                .iter()
                .find(|m| m.name.eq_ignore_ascii_case(c))
                .ok_or_else(|| Error::UnknownColumn(raw.to_string()))?;
            return Ok(qualified(table, &col.name));
        }
        let mut hits = Vec::new();
        for t in &self.tables {
            let def = self.schema.table(t).expect("resolved");
            if let Some(col) = def.columns.iter().find(|m| m.name.eq_ignore_ascii_case(raw)) {
                hits.push(qualified(t, &col.name));
            }
        }
        match hits.len() {
            0 => Err(Error::UnknownColumn(raw.to_string())),
            1 => Ok(hits.pop().expect("one")),
            _ => Err(Error::AmbiguousColumn(raw.to_string())),
        }
    }

    fn kind_of(&self, column: &str) -> ColumnKind {
        let (t, c) = column.split_once('.').expect("qualified");
        self.schema
            .table(t)
            .and_then(|d| d.column(c))
            .map_or(ColumnKind::Categorical, |m| m.kind)
    }

    fn resolve_join(&self, new: &str, kind: JoinKind, on: Option<(String, String)>, at: usize) -> Result<JoinEdge> {
        let mut candidates = Vec::new();
        for (i, fk) in self.schema.fks.iter().enumerate() {
            let other = if fk.referencing_table == new {
                &fk.referenced_table
            } else if fk.referenced_table == new {
                &fk.referencing_table
            } else {
                continue;
            };
            if !self.tables.contains(other) {
                continue;
            }
            if let Some((a, b)) = &on {
                let x = qualified(&fk.referencing_table, &fk.referencing_column);
                let y = qualified(&fk.referenced_table, &fk.referenced_column);
                let matches = (a == &x && b == &y) || (a == &y && b == &x);
                if !matches {
                    continue;
                }
            }
            candidates.push((i, other.clone()));
        }
        match candidates.len() {
            0 => {
                if on.is_some() {
                    Err(Error::Unsupported(format!("join condition for {new} is not a declared foreign key")))
                } else {
                    Err(Error::Unsupported(format!("no foreign key links {new} to the preceding tables")))
                }
            }
            1 => {
                let (fk, other) = candidates.pop().expect("one");
                Ok(JoinEdge {
                    left: other,
                    right: new.to_string(),
                    kind,
                    fk,
                })
            }
            _ => Err(syntax(at, format!("join of {new} is ambiguous; add ON col = col"))),
        }
    }

    fn literal(&mut self, kind: ColumnKind) -> Result<Datum> {
        let at = self.offset();
        let negative = self.eat_sym("-");
        let text = match self.peek() {
            Some(Tok::Num(n)) => {
                let n = if negative { format!("-{n}") } else { n.clone() };
                self.pos += 1;
                n
            }
            Some(Tok::Str(s)) if !negative => {
                let s = s.clone();
                self.pos += 1;
                s
            }
            Some(Tok::Ident(s)) if s.eq_ignore_ascii_case("null") => {
                return Err(Error::Unsupported("comparison with NULL".into()));
            }
            _ => return Err(syntax(at, "expected literal")),
        };
        if matches!(self.peek(), Some(Tok::Sym("+" | "-" | "*" | "/" | "||"))) {
            return Err(Error::Unsupported("arithmetic expressions".into()));
        }
        Datum::parse(&text, kind).ok_or_else(|| syntax(at, format!("{text:?} is not a valid {} literal", kind.name())))
    }

    fn conjunct(&mut self) -> Result<Conjunct> {
        let raw_at = self.offset();
        if let (Some(Tok::Ident(_)), Some(Tok::Sym("("))) = (self.peek(), self.toks.get(self.pos + 1).map(|t| &t.tok)) {
            return Err(Error::Unsupported("function calls".into()));
        }
        if matches!(self.peek(), Some(Tok::Num(_) | Tok::Str(_))) {
            return Err(syntax(raw_at, "conditions must start with a column"));
        }
        let col = self.column()?;
        let kind = self.kind_of(&col);
        if self.eat_kw("is") {
            if self.eat_kw("not") {
                self.expect_kw("null")?;
                return Ok(Conjunct::new(col, Condition::NotNull));
            }
            return Err(Error::Unsupported("IS NULL".into()));
        }
        let negated = self.eat_kw("not");
        if self.eat_kw("in") {
            if negated {
                return Err(Error::Unsupported("NOT IN".into()));
            }
            self.expect_sym("(")?;
            let mut set = BTreeSet::new();
            loop {
                set.insert(self.literal(kind)?);
                if !self.eat_sym(",") {
                    break;
                }
            }
            self.expect_sym(")")?;
            return Ok(Conjunct::new(col, Condition::In(set)));
        }
        if negated {
            return Err(Error::Unsupported("negation".into()));
        }
        if self.is_kw("like") || self.is_kw("between") {
            return Err(Error::Unsupported("LIKE/BETWEEN".into()));
        }
        let at = self.offset();
        let op = match self.peek() {
            Some(Tok::Sym("=")) => CmpOp::Eq,
            Some(Tok::Sym("<>" | "!=")) => CmpOp::Ne,
            Some(Tok::Sym("<")) => CmpOp::Lt,
            Some(Tok::Sym("<=")) => CmpOp::Le,
            Some(Tok::Sym(">")) => CmpOp::Gt,
            Some(Tok::Sym(">=")) => CmpOp::Ge,
            Some(Tok::Sym("+" | "-" | "*" | "/" | "||")) => return Err(Error::Unsupported("arithmetic expressions".into())),
            _ => return Err(syntax(at, "expected comparison operator")),
        };
        self.pos += 1;
        if matches!(self.peek(), Some(Tok::Ident(s)) if !s.eq_ignore_ascii_case("null")) {
            return Err(Error::Unsupported("column-to-column comparisons".into()));
        }
        let value = self.literal(kind)?;
        Ok(Conjunct::cmp(col, op, value))
    }
}

/// Parse `text` against `schema`.
pub fn parse_query(text: &str, schema: &SchemaGraph) -> Result<QueryAst> {
    let toks = tokenize(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: text.len(),
        schema,
        names: BTreeMap::new(),
        tables: Vec::new(),
    };
    let mut ast = p.parse()?;
    // resolve the aggregated column now that all tables are known
    if let Aggregate::Sum(c) | Aggregate::Avg(c) = &mut ast.aggregate {
        *c = p.resolve(c)?;
        if p.kind_of(c) != ColumnKind::Continuous {
            return Err(Error::Unsupported(format!("SUM/AVG over non-numeric column {c}")));
        }
    }
    Ok(ast)
}
