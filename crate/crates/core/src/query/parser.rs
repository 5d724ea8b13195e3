//! Recursive-descent parser for query programs.
//!
//! Grammar:
//!
//! ```text
//! program    := assignment+
//! assignment := NAME ":=" "SELECT" varlist "FROM" atom [ "WHERE" cond ] ";"
//! varlist    := var ("," var)* | "(" var ("," var)* ")"
//! cond       := or ; or := and ("OR" and)* ; and := unary ("AND" unary)*
//! unary      := "NOT" unary | "(" cond ")" | atom
//! atom       := NAME "(" term ("," term)* ")"
//! term       := var | INT | STRING
//! ```
//!
//! `AND` binds tighter than `OR`; `NOT` binds tightest. The parser also
//! rejects duplicate output names and inconsistent arities so that errors
//! carry source positions.

use std::collections::BTreeMap;

use thiserror::Error;

use super::lexer::{lex, Spanned, Tok};
use super::{Atom, BsgfQuery, ConditionTree, SgfQuery, Span, Term};

#[derive(Debug, Error)]
#[error("{span}: {message}")]
pub struct ParseError {
    pub span: Span,
    pub message: String,
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, span: Span, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            span,
            message: message.into(),
        })
    }

    fn expect(&mut self, want: &Tok, what: &str) -> Result<Spanned, ParseError> {
        let t = self.next();
        if std::mem::discriminant(&t.tok) == std::mem::discriminant(want) {
            Ok(t)
        } else {
            self.err(t.span, format!("expected {what}, found {}", t.tok.describe()))
        }
    }

    fn expect_name(&mut self, what: &str) -> Result<(String, Span), ParseError> {
        let t = self.next();
        match t.tok {
            Tok::Name(n) => Ok((n, t.span)),
            other => self.err(t.span, format!("expected {what}, found {}", other.describe())),
        }
    }

    fn parse_program(&mut self) -> Result<SgfQuery, ParseError> {
        let mut queries = Vec::new();
        while self.peek().tok != Tok::Eof {
            queries.push(self.parse_assignment()?);
        }
        if queries.is_empty() {
            return self.err(self.peek().span, "empty program");
        }
        Ok(SgfQuery { queries })
    }

    fn parse_assignment(&mut self) -> Result<BsgfQuery, ParseError> {
        let (output, _span) = self.expect_name("output name")?;
        self.expect(&Tok::Assign, "`:=`")?;
        self.expect(&Tok::Select, "`SELECT`")?;
        let out_vars = self.parse_varlist()?;
        self.expect(&Tok::From, "`FROM`")?;
        let guard = self.parse_atom()?;
        let condition = if self.peek().tok == Tok::Where {
            self.next();
            Some(self.parse_or()?)
        } else {
            None
        };
        self.expect(&Tok::Semi, "`;`")?;
        Ok(BsgfQuery {
            output,
            out_vars,
            guard,
            condition,
        })
    }

    fn parse_varlist(&mut self) -> Result<Vec<String>, ParseError> {
        let parens = self.peek().tok == Tok::LParen;
        if parens {
            self.next();
        }
        let mut vars = Vec::new();
        loop {
            let (name, _) = self.expect_name("variable")?;
            vars.push(name);
            if self.peek().tok == Tok::Comma {
                self.next();
            } else {
                break;
            }
        }
        if parens {
            self.expect(&Tok::RParen, "`)`")?;
        }
        Ok(vars)
    }

    fn parse_atom(&mut self) -> Result<Atom, ParseError> {
        let (relation, span) = self.expect_name("relation name")?;
        self.expect(&Tok::LParen, "`(`")?;
        let mut terms = Vec::new();
        loop {
            let t = self.next();
            let term = match t.tok {
                Tok::Name(n) => Term::Var(n),
                Tok::Int(v) => Term::constant(&v),
                Tok::Str(s) => Term::Const(s),
                other => {
                    return self.err(t.span, format!("expected term, found {}", other.describe()))
                }
            };
            terms.push(term);
            let t = self.next();
            match t.tok {
                Tok::Comma => continue,
                Tok::RParen => break,
                other => {
                    return self.err(t.span, format!("expected `,` or `)`, found {}", other.describe()))
                }
            }
        }
        Ok(Atom {
            relation,
            terms,
            span,
        })
    }

    fn parse_or(&mut self) -> Result<ConditionTree, ParseError> {
        let mut node = self.parse_and()?;
        while self.peek().tok == Tok::Or {
            self.next();
            let rhs = self.parse_and()?;
            node = ConditionTree::Or(Box::new(node), Box::new(rhs));
        }
        Ok(node)
    }

    fn parse_and(&mut self) -> Result<ConditionTree, ParseError> {
        let mut node = self.parse_unary()?;
        while self.peek().tok == Tok::And {
            self.next();
            let rhs = self.parse_unary()?;
            node = ConditionTree::And(Box::new(node), Box::new(rhs));
        }
        Ok(node)
    }

    fn parse_unary(&mut self) -> Result<ConditionTree, ParseError> {
        match self.peek().tok {
            Tok::Not => {
                self.next();
                Ok(ConditionTree::Not(Box::new(self.parse_unary()?)))
            }
            Tok::LParen => {
                self.next();
                let inner = self.parse_or()?;
                self.expect(&Tok::RParen, "`)`")?;
                Ok(inner)
            }
            _ => Ok(ConditionTree::Leaf(self.parse_atom()?)),
        }
    }
}

/// Checks performed at parse time because they have natural source positions:
/// duplicate output names and arity consistency across the whole program.
fn program_checks(program: &SgfQuery) -> Result<(), ParseError> {
    let mut outputs: BTreeMap<&str, Span> = BTreeMap::new();
    let mut arities: BTreeMap<&str, usize> = BTreeMap::new();

    let note = |rel: &str, arity: usize, span: Span, arities: &mut BTreeMap<&str, usize>| {
        if let Some(&expected) = arities.get(rel) {
            if expected != arity {
                return Err(ParseError {
                    span,
                    message: format!(
                        "relation {rel} used with arity {arity}, previously {expected}"
                    ),
                });
            }
        }
        Ok(())
    };

    for q in &program.queries {
        if outputs.insert(&q.output, q.guard.span).is_some() {
            return Err(ParseError {
                span: q.guard.span,
                message: format!("duplicate output name {}", q.output),
            });
        }
        let mut atoms: Vec<&Atom> = vec![&q.guard];
        if let Some(c) = &q.condition {
            atoms.extend(c.leaves());
        }
        for atom in atoms {
            note(&atom.relation, atom.arity(), atom.span, &mut arities)?;
            arities.entry(&atom.relation).or_insert_with(|| atom.arity());
        }
        note(&q.output, q.out_vars.len(), q.guard.span, &mut arities)?;
        arities.entry(&q.output).or_insert(q.out_vars.len());
    }
    Ok(())
}

/// Parses a program text into an AST.
pub fn parse_program(text: &str) -> Result<SgfQuery, ParseError> {
    let toks = lex(text).map_err(|e| ParseError {
        span: e.span,
        message: e.message,
    })?;
    let mut parser = Parser { toks, pos: 0 };
    let program = parser.parse_program()?;
    program_checks(&program)?;
    Ok(program)
}
