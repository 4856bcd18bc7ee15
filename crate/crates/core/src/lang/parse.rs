//! Concrete syntax.
//!
//! ```text
//! program  ::= decl* stmt+
//! decl     ::= "array" id "base" "=" num "len" "=" num "label" "=" ("L"|"H") ["=" "[" num,* "]"] ";"
//!            | "var" id "=" (num | "true" | "false") ";"
//!            | "public" id ("," id)* ";"
//! stmt     ::= "skip" ";" | "fail" ";" | "{" stmt+ "}"
//!            | "if" "(" expr ")" block ["else" (block | if-stmt)]
//!            | "while" "(" expr ")" block
//!            | id ":=" rhs ";" | id ":=" "protect" "(" rhs ")" ";"
//!            | id "[" expr "]" ":=" expr ";" | "*" label "(" expr ")" ":=" expr ";"
//! rhs      ::= id "[" expr "]" | "*" label "(" expr ")" | expr
//! expr     ::= and ["?" expr ":" expr]
//! and      ::= cmp ("&" cmp)*
//! cmp      ::= sum ["<" sum]
//! sum      ::= atom ("+" atom)*
//! atom     ::= num | "true" | "false" | id | "length" "(" expr ")" | "base" "(" expr ")" | "(" expr ")"
//! ```
//!
//! Numbers are decimal or `0x` hex. `//` starts a line comment.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use super::check::static_check;
use super::{ArrayDecl, ArrayRef, Command, Expr, Label, Name, Policy, Pos, Program, Rhs, Value, VarMap};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at {pos}: {msg}")]
    Syntax { pos: Pos, msg: String },
    #[error("semantic error at {pos}: {msg}")]
    Semantic { pos: Pos, msg: String },
}

const KEYWORDS: &[&str] =
    &["array", "var", "public", "skip", "fail", "if", "else", "while", "protect", "true", "false", "length", "base"];

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Num(u64),
    Sym(&'static str),
    Eof,
}

struct Lexer<'a> {
    src: &'a [u8],
    i: usize,
    line: usize,
    col: usize,
}

const SYMBOLS: &[&str] = &[":=", ";", ",", "(", ")", "{", "}", "[", "]", "=", "+", "<", "&", "?", ":", "*"];

impl<'a> Lexer<'a> {
    fn pos(&self) -> Pos {
        Pos { line: self.line, col: self.col }
    }

    fn bump(&mut self) {
        if self.src[self.i] == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        self.i += 1;
    }

    fn tokens(mut self) -> Result<Vec<(Tok, Pos)>, ParseError> {
        let mut out = Vec::new();
        loop {
            while self.i < self.src.len() {
                let c = self.src[self.i];
                if c.is_ascii_whitespace() {
                    self.bump();
                } else if self.src[self.i..].starts_with(b"//") {
                    while self.i < self.src.len() && self.src[self.i] != b'\n' {
                        self.bump();
                    }
                } else {
                    break;
                }
            }
            let pos = self.pos();
            if self.i >= self.src.len() {
                out.push((Tok::Eof, pos));
                return Ok(out);
            }
            let c = self.src[self.i];
            if c.is_ascii_alphabetic() || c == b'_' {
                let start = self.i;
                while self.i < self.src.len() && (self.src[self.i].is_ascii_alphanumeric() || self.src[self.i] == b'_')
                {
                    self.bump();
                }
                let s = std::str::from_utf8(&self.src[start..self.i]).unwrap().to_string();
                out.push((Tok::Ident(s), pos));
            } else if c.is_ascii_digit() {
                let start = self.i;
                while self.i < self.src.len() && self.src[self.i].is_ascii_alphanumeric() {
                    self.bump();
                }
                let s = std::str::from_utf8(&self.src[start..self.i]).unwrap();
                let n =
                    if let Some(hex) = s.strip_prefix("0x") { u64::from_str_radix(hex, 16) } else { s.parse::<u64>() };
                let n = n.map_err(|_| ParseError::Syntax { pos, msg: format!("bad number `{s}`") })?;
                out.push((Tok::Num(n), pos));
            } else {
                let sym = SYMBOLS
                    .iter()
                    .find(|s| self.src[self.i..].starts_with(s.as_bytes()))
                    .ok_or_else(|| ParseError::Syntax { pos, msg: format!("unexpected character `{}`", c as char) })?;
                for _ in 0..sym.len() {
                    self.bump();
                }
                out.push((Tok::Sym(sym), pos));
            }
        }
    }
}

/// Source positions mirroring the command tree.
struct PosTree {
    pos: Pos,
    kids: Vec<PosTree>,
}

impl PosTree {
    fn leaf(pos: Pos) -> Self {
        PosTree { pos, kids: Vec::new() }
    }

    fn flatten(&self, out: &mut Vec<Pos>) {
        out.push(self.pos);
        for k in &self.kids {
            k.flatten(out);
        }
    }
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    i: usize,
    arrays: Vec<ArrayRef>,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.i].0
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.i + k).min(self.toks.len() - 1)].0
    }

    fn pos(&self) -> Pos {
        self.toks[self.i].1
    }

    fn next(&mut self) -> Tok {
        let t = self.toks[self.i].0.clone();
        if self.i + 1 < self.toks.len() {
            self.i += 1;
        }
        t
    }

    fn syntax<T>(&self, msg: impl Into<String>) -> PResult<T> {
        Err(ParseError::Syntax { pos: self.pos(), msg: msg.into() })
    }

    fn semantic<T>(&self, pos: Pos, msg: impl Into<String>) -> PResult<T> {
        Err(ParseError::Semantic { pos, msg: msg.into() })
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(t) if *t == s)
    }

    fn is_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Tok::Ident(t) if t == k)
    }

    fn expect_sym(&mut self, s: &str) -> PResult<()> {
        if self.is_sym(s) {
            self.next();
            Ok(())
        } else {
            self.syntax(format!("expected `{s}`, found {}", describe(self.peek())))
        }
    }

    fn expect_kw(&mut self, k: &str) -> PResult<()> {
        if self.is_kw(k) {
            self.next();
            Ok(())
        } else {
            self.syntax(format!("expected `{k}`, found {}", describe(self.peek())))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                if s.starts_with("__") {
                    return self.semantic(self.pos(), format!("identifier `{s}` is reserved"));
                }
                self.next();
                Ok(s)
            }
            t => self.syntax(format!("expected identifier, found {}", describe(&t))),
        }
    }

    fn num(&mut self) -> PResult<u64> {
        match self.peek() {
            Tok::Num(n) => {
                let n = *n;
                self.next();
                Ok(n)
            }
            t => self.syntax(format!("expected number, found {}", describe(t))),
        }
    }

    fn label(&mut self) -> PResult<Label> {
        match self.peek() {
            Tok::Ident(s) if s == "L" => {
                self.next();
                Ok(Label::L)
            }
            Tok::Ident(s) if s == "H" => {
                self.next();
                Ok(Label::H)
            }
            t => self.syntax(format!("expected label `L` or `H`, found {}", describe(t))),
        }
    }

    fn array_named(&self, name: &str) -> Option<ArrayRef> {
        self.arrays.iter().find(|a| &*a.name == name).cloned()
    }

    // ---- expressions ----

    fn expr(&mut self) -> PResult<Expr> {
        let c = self.and_expr()?;
        if self.is_sym("?") {
            self.next();
            let t = self.expr()?;
            self.expect_sym(":")?;
            let f = self.expr()?;
            return Ok(Expr::ternary(c, t, f));
        }
        Ok(c)
    }

    fn and_expr(&mut self) -> PResult<Expr> {
        let mut e = self.cmp_expr()?;
        while self.is_sym("&") {
            self.next();
            e = Expr::bitand(e, self.cmp_expr()?);
        }
        Ok(e)
    }

    fn cmp_expr(&mut self) -> PResult<Expr> {
        let e = self.sum_expr()?;
        if self.is_sym("<") {
            self.next();
            let r = self.sum_expr()?;
            if self.is_sym("<") {
                return self.syntax("`<` is not associative; add parentheses");
            }
            return Ok(Expr::lt(e, r));
        }
        Ok(e)
    }

    fn sum_expr(&mut self) -> PResult<Expr> {
        let mut e = self.atom()?;
        while self.is_sym("+") {
            self.next();
            e = Expr::add(e, self.atom()?);
        }
        Ok(e)
    }

    fn atom(&mut self) -> PResult<Expr> {
        match self.peek().clone() {
            Tok::Num(n) => {
                self.next();
                Ok(Expr::nat(n))
            }
            Tok::Sym("(") => {
                self.next();
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Tok::Ident(s) if s == "true" || s == "false" => {
                self.next();
                Ok(Expr::Lit(Value::Bool(s == "true")))
            }
            Tok::Ident(s) if s == "length" || s == "base" => {
                self.next();
                self.expect_sym("(")?;
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(if s == "length" { Expr::Length(Box::new(e)) } else { Expr::Base(Box::new(e)) })
            }
            Tok::Ident(_) => {
                let name = self.ident()?;
                if self.is_sym("[") {
                    return self.syntax("array reads are only allowed as the whole right-hand side of an assignment");
                }
                Ok(match self.array_named(&name) {
                    Some(a) => Expr::array(&a),
                    None => Expr::Var(name.into()),
                })
            }
            t => self.syntax(format!("expected expression, found {}", describe(&t))),
        }
    }

    // ---- commands ----

    fn rhs(&mut self) -> PResult<Rhs> {
        if self.is_sym("*") {
            self.next();
            let l = self.label()?;
            self.expect_sym("(")?;
            let e = self.expr()?;
            self.expect_sym(")")?;
            return Ok(Rhs::PtrRead(l, e));
        }
        if let (Tok::Ident(name), Tok::Sym("[")) = (self.peek().clone(), self.peek_at(1).clone()) {
            let pos = self.pos();
            let Some(a) = self.array_named(&name) else {
                return self.semantic(pos, format!("`{name}` is not a declared array"));
            };
            self.next();
            self.next();
            let e = self.expr()?;
            self.expect_sym("]")?;
            return Ok(Rhs::ArrayRead(a, e));
        }
        Ok(Rhs::Pure(self.expr()?))
    }

    fn block(&mut self) -> PResult<(Command, PosTree)> {
        self.expect_sym("{")?;
        let r = self.stmts(|p| p.is_sym("}"))?;
        self.expect_sym("}")?;
        Ok(r)
    }

    fn stmts(&mut self, stop: impl Fn(&Parser) -> bool) -> PResult<(Command, PosTree)> {
        let mut items = Vec::new();
        while !stop(self) {
            if matches!(self.peek(), Tok::Eof) {
                return self.syntax("unexpected end of input");
            }
            items.push(self.stmt()?);
        }
        if items.is_empty() {
            return self.syntax("expected at least one command");
        }
        let (mut acc, mut acc_pos) = items.pop().unwrap();
        while let Some((c, p)) = items.pop() {
            let pos = p.pos;
            acc = Command::seq(c, acc);
            acc_pos = PosTree { pos, kids: vec![p, acc_pos] };
        }
        Ok((acc, acc_pos))
    }

    fn stmt(&mut self) -> PResult<(Command, PosTree)> {
        let pos = self.pos();
        let leaf = PosTree::leaf(pos);
        match self.peek().clone() {
            Tok::Sym("{") => self.block(),
            Tok::Sym("*") => {
                self.next();
                let l = self.label()?;
                self.expect_sym("(")?;
                let addr = self.expr()?;
                self.expect_sym(")")?;
                self.expect_sym(":=")?;
                let v = self.expr()?;
                self.expect_sym(";")?;
                Ok((Command::PtrWrite(l, addr, v), leaf))
            }
            Tok::Ident(k) if k == "skip" || k == "fail" => {
                self.next();
                self.expect_sym(";")?;
                Ok((if k == "skip" { Command::Skip } else { Command::Fail }, leaf))
            }
            Tok::Ident(k) if k == "if" => self.if_stmt(),
            Tok::Ident(k) if k == "while" => {
                self.next();
                self.expect_sym("(")?;
                let e = self.expr()?;
                self.expect_sym(")")?;
                let (body, bp) = self.block()?;
                Ok((Command::while_(e, body), PosTree { pos, kids: vec![bp] }))
            }
            Tok::Ident(_) => {
                let name = self.ident()?;
                if self.is_sym("[") {
                    let Some(a) = self.array_named(&name) else {
                        return self.semantic(pos, format!("`{name}` is not a declared array"));
                    };
                    self.next();
                    let idx = self.expr()?;
                    self.expect_sym("]")?;
                    self.expect_sym(":=")?;
                    let v = self.expr()?;
                    self.expect_sym(";")?;
                    return Ok((Command::ArrayWrite(a, idx, v), leaf));
                }
                if self.array_named(&name).is_some() {
                    return self.semantic(pos, format!("cannot assign to array `{name}`"));
                }
                self.expect_sym(":=")?;
                let c = if self.is_kw("protect") {
                    self.next();
                    self.expect_sym("(")?;
                    let r = self.rhs()?;
                    self.expect_sym(")")?;
                    Command::Protect(name.into(), r)
                } else {
                    Command::Assign(name.into(), self.rhs()?)
                };
                self.expect_sym(";")?;
                Ok((c, leaf))
            }
            t => self.syntax(format!("expected command, found {}", describe(&t))),
        }
    }

    fn if_stmt(&mut self) -> PResult<(Command, PosTree)> {
        let pos = self.pos();
        self.expect_kw("if")?;
        self.expect_sym("(")?;
        let e = self.expr()?;
        self.expect_sym(")")?;
        let (t, tp) = self.block()?;
        let (f, fp) = if self.is_kw("else") {
            self.next();
            if self.is_kw("if") {
                self.if_stmt()?
            } else {
                self.block()?
            }
        } else {
            (Command::Skip, PosTree::leaf(pos))
        };
        Ok((Command::if_(e, t, f), PosTree { pos, kids: vec![tp, fp] }))
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Num(n) => format!("`{n}`"),
        Tok::Sym(s) => format!("`{s}`"),
        Tok::Eof => "end of input".to_string(),
    }
}

/// Parses a complete program and validates its declarations and types.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let toks = Lexer { src: text.as_bytes(), i: 0, line: 1, col: 1 }.tokens()?;
    let mut p = Parser { toks, i: 0, arrays: Vec::new() };
    let mut array_init = BTreeMap::new();
    let mut vars = VarMap::default();
    let mut public: Vec<(String, Pos)> = Vec::new();

    loop {
        let pos = p.pos();
        if p.is_kw("array") {
            p.next();
            let name = p.ident()?;
            p.expect_kw("base")?;
            p.expect_sym("=")?;
            let base = p.num()?;
            match p.peek() {
                Tok::Ident(s) if s == "len" => {
                    p.next();
                }
                t => return p.syntax(format!("expected `len`, found {}", describe(t))),
            }
            p.expect_sym("=")?;
            let len = p.num()?;
            match p.peek() {
                Tok::Ident(s) if s == "label" => {
                    p.next();
                }
                t => return p.syntax(format!("expected `label`, found {}", describe(t))),
            }
            p.expect_sym("=")?;
            let label = p.label()?;
            let mut init = None;
            if p.is_sym("=") {
                p.next();
                p.expect_sym("[")?;
                let mut cells = Vec::new();
                while !p.is_sym("]") {
                    cells.push(p.num()?);
                    if !p.is_sym("]") {
                        p.expect_sym(",")?;
                    }
                }
                p.next();
                init = Some(cells);
            }
            p.expect_sym(";")?;
            if p.array_named(&name).is_some() {
                return p.semantic(pos, format!("duplicate array `{name}`"));
            }
            if vars.0.contains_key(name.as_str()) {
                return p.semantic(pos, format!("`{name}` is already a variable"));
            }
            if base.checked_add(len).is_none() {
                return p.semantic(pos, format!("array `{name}` overflows the address space"));
            }
            let decl = ArrayDecl { name: name.clone().into(), base, len, label };
            for other in &p.arrays {
                if base < other.base + other.len && other.base < base + len {
                    return p.semantic(pos, format!("array `{name}` overlaps array `{}`", other.name));
                }
            }
            if label == Label::H && decl.contains(0) {
                return p.semantic(pos, format!("secret array `{name}` may not cover reserved address 0"));
            }
            if let Some(cells) = init {
                if cells.len() as u64 > len {
                    return p.semantic(pos, format!("initializer of `{name}` has more than {len} cells"));
                }
                if base == 0 && cells.first().is_some_and(|v| *v != 0) {
                    return p.semantic(pos, "reserved address 0 must hold 0");
                }
                array_init.insert(Name::from(name.as_str()), cells);
            }
            p.arrays.push(Arc::new(decl));
        } else if p.is_kw("var") {
            p.next();
            let name = p.ident()?;
            p.expect_sym("=")?;
            let v = match p.peek().clone() {
                Tok::Num(n) => Value::Nat(n),
                Tok::Ident(s) if s == "true" || s == "false" => Value::Bool(s == "true"),
                t => return p.syntax(format!("expected initial value, found {}", describe(&t))),
            };
            p.next();
            p.expect_sym(";")?;
            if vars.0.contains_key(name.as_str()) {
                return p.semantic(pos, format!("duplicate variable `{name}`"));
            }
            if p.array_named(&name).is_some() {
                return p.semantic(pos, format!("`{name}` is already an array"));
            }
            vars.set(name.into(), v);
        } else if p.is_kw("public") {
            p.next();
            loop {
                let npos = p.pos();
                public.push((p.ident()?, npos));
                if p.is_sym(",") {
                    p.next();
                } else {
                    break;
                }
            }
            p.expect_sym(";")?;
        } else {
            break;
        }
    }

    if matches!(p.peek(), Tok::Eof) {
        return p.syntax("program has no commands");
    }
    let (body, ptree) = p.stmts(|p| matches!(p.peek(), Tok::Eof))?;
    let mut positions = Vec::new();
    ptree.flatten(&mut positions);

    let body_vars: BTreeSet<Name> = body.vars().into_iter().collect();
    let mut policy = Policy::default();
    for (name, pos) in public {
        if p.array_named(&name).is_some() {
            policy.public_arrays.insert(name.into());
        } else if vars.0.contains_key(name.as_str()) || body_vars.contains(name.as_str()) {
            policy.public_vars.insert(name.into());
        } else {
            return Err(ParseError::Semantic { pos, msg: format!("policy names unknown identifier `{name}`") });
        }
    }

    let program = Program { arrays: p.arrays, array_init, vars, policy, body, positions };
    if let Err(e) = static_check(&program) {
        let pos = program.position(e.node).unwrap_or(Pos { line: 1, col: 1 });
        return Err(ParseError::Semantic { pos, msg: e.msg });
    }
    Ok(program)
}

#[cfg(test)]
mod tests {
    use super::*;

    const EX1: &str = "
        array b base=0 len=1 label=L;
        array a base=1 len=2 label=L;
        var i1 = 1;
        var i2 = 2;
        x := a[i1];
        y := a[i2];
        z := x + y;
        w := b[z];
    ";

    #[test]
    fn ex1_is_a_four_command_chain() {
        let p = parse_program(EX1).unwrap();
        let mut leaves = 0;
        let mut c = &p.body;
        while let Command::Seq(a, b) = c {
            assert!(!matches!(**a, Command::Seq(_, _)));
            leaves += 1;
            c = b;
        }
        assert_eq!(leaves + 1, 4);
        assert!(matches!(c, Command::Assign(w, Rhs::ArrayRead(b, _)) if &**w == "w" && &*b.name == "b"));
        assert_eq!(p.positions.len(), p.body.node_count());
        assert_eq!(p.positions[0], Pos { line: 6, col: 9 });
    }

    #[test]
    fn empty_program_rejected() {
        assert!(matches!(parse_program(""), Err(ParseError::Syntax { .. })));
        assert!(matches!(parse_program("var x = 1;"), Err(ParseError::Syntax { .. })));
    }

    #[test]
    fn overlapping_arrays_rejected() {
        let src = "array a base=1 len=4 label=L; array b base=3 len=2 label=L; skip;";
        let err = parse_program(src).unwrap_err();
        assert!(matches!(err, ParseError::Semantic { .. }), "{err}");
    }

    #[test]
    fn unknown_policy_name_rejected() {
        let err = parse_program("public nope; skip;").unwrap_err();
        assert!(matches!(err, ParseError::Semantic { .. }));
    }

    #[test]
    fn bool_comparison_rejected() {
        let err = parse_program("var t = true; x := t < 1;").unwrap_err();
        assert!(matches!(err, ParseError::Semantic { .. }), "{err}");
    }

    #[test]
    fn reserved_identifiers_rejected() {
        assert!(parse_program("__x := 1;").is_err());
        assert!(parse_program("skip := 1;").is_err());
    }

    #[test]
    fn syntax_error_carries_position() {
        let err = parse_program("x := 1;\ny := ;").unwrap_err();
        assert_eq!(
            err,
            ParseError::Syntax { pos: Pos { line: 2, col: 6 }, msg: "expected expression, found `;`".into() }
        );
    }

    #[test]
    fn hex_literals_and_masks() {
        let p = parse_program("x := 6 & 0xffffffffffffffff;").unwrap();
        assert_eq!(p.body, Command::assign("x", Rhs::Pure(Expr::bitand(Expr::nat(6), Expr::nat(u64::MAX)))));
    }
}
