use crate::error::{EngineError, Location, Result};
use crate::time::parse_duration;

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};

/// Words that cannot be used as bare identifiers inside expressions.
pub const RESERVED: &[&str] = &[
    "SELECT", "FROM", "WHERE", "AND", "OR", "NOT", "GROUP", "BY", "ORDER", "LIMIT", "AS", "VALUE", "TRUE", "FALSE",
    "NULL", "MISSING", "ASC", "DESC",
];

pub fn is_reserved(word: &str) -> bool {
    RESERVED.iter().any(|r| r.eq_ignore_ascii_case(word))
}

/// A statement and where it starts in the source text.
#[derive(Debug, Clone, PartialEq)]
pub struct Located {
    pub location: Location,
    pub statement: Statement,
}

pub fn parse(text: &str) -> Result<Vec<Statement>> {
    Ok(parse_located(text)?.into_iter().map(|l| l.statement).collect())
}

pub fn parse_located(text: &str) -> Result<Vec<Located>> {
    let tokens = tokenize(text)?;
    let mut p = Parser { tokens, pos: 0 };
    let mut out = Vec::new();
    loop {
        while p.eat(&Tok::Semi) {}
        if p.peek() == &Tok::Eof {
            break;
        }
        let location = p.loc();
        let statement = p.statement()?;
        if !p.eat(&Tok::Semi) && p.peek() != &Tok::Eof {
            return Err(p.unexpected("`;` after statement"));
        }
        out.push(Located { location, statement });
    }
    Ok(out)
}

/// Parses a standalone query (no trailing semicolon required).
pub fn parse_query(text: &str) -> Result<Query> {
    let tokens = tokenize(text)?;
    let mut p = Parser { tokens, pos: 0 };
    let q = p.query()?;
    p.eat(&Tok::Semi);
    p.expect(&Tok::Eof, "end of query")?;
    Ok(q)
}

/// Parses a standalone expression.
pub fn parse_expr(text: &str) -> Result<Expr> {
    let tokens = tokenize(text)?;
    let mut p = Parser { tokens, pos: 0 };
    let e = p.expr()?;
    p.expect(&Tok::Eof, "end of expression")?;
    Ok(e)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let idx = (self.pos + n).min(self.tokens.len() - 1);
        &self.tokens[idx].tok
    }

    fn loc(&self) -> Location {
        self.tokens[self.pos].loc
    }

    fn bump(&mut self) -> Tok {
        let t = self.tokens[self.pos].tok.clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.bump();
            true
        } else {
            false
        }
    }

    fn unexpected(&self, wanted: &str) -> EngineError {
        EngineError::parse(format!("expected {wanted}, found {}", self.peek().describe()), self.loc())
    }

    fn expect(&mut self, tok: &Tok, wanted: &str) -> Result<()> {
        if self.eat(tok) {
            Ok(())
        } else {
            Err(self.unexpected(wanted))
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<()> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("keyword {kw}")))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.unexpected(what)),
        }
    }

    fn string(&mut self, what: &str) -> Result<String> {
        match self.peek().clone() {
            Tok::Str(s) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.unexpected(what)),
        }
    }

    fn statement(&mut self) -> Result<Statement> {
        if self.eat_kw("EXPLAIN") {
            return Ok(Statement::Explain(Box::new(self.statement()?)));
        }
        if self.is_kw("SELECT") || self.is_kw("FROM") {
            return Ok(Statement::Query(self.query()?));
        }
        if self.eat_kw("CREATE") {
            return self.create();
        }
        if self.eat_kw("CONNECT") {
            self.expect_kw("FEED")?;
            let feed = self.ident("feed name")?;
            self.expect_kw("TO")?;
            self.expect_kw("DATASET")?;
            let dataset = self.ident("dataset name")?;
            let function = if self.eat_kw("APPLY") {
                self.expect_kw("FUNCTION")?;
                Some(self.ident("function name")?)
            } else {
                None
            };
            return Ok(Statement::ConnectFeed(ConnectFeed { feed, dataset, function }));
        }
        if self.eat_kw("START") {
            self.expect_kw("FEED")?;
            return Ok(Statement::StartFeed { feed: self.ident("feed name")? });
        }
        if self.eat_kw("ALTER") {
            self.expect_kw("BROKER")?;
            let name = self.ident("broker name")?;
            self.expect_kw("AT")?;
            let endpoint = self.string("broker endpoint string")?;
            return Ok(Statement::AlterBroker(CreateBroker { name, endpoint }));
        }
        if self.eat_kw("DROP") {
            self.expect_kw("CHANNEL")?;
            return Ok(Statement::DropChannel { name: self.ident("channel name")? });
        }
        if self.eat_kw("SUBSCRIBE") {
            self.expect_kw("TO")?;
            let channel = self.ident("channel name")?;
            let args = self.call_args()?;
            self.expect_kw("ON")?;
            let broker = self.ident("broker name")?;
            return Ok(Statement::Subscribe(Subscribe { channel, args, broker }));
        }
        if self.is_kw("INSERT") || self.is_kw("UPSERT") {
            let upsert = self.is_kw("UPSERT");
            self.bump();
            self.expect_kw("INTO")?;
            let dataset = self.ident("dataset name")?;
            let docs = match self.expr()? {
                Expr::Array(items) => items,
                other => vec![other],
            };
            return Ok(Statement::Insert(Insert { dataset, upsert, docs }));
        }
        if let Tok::Ident(name) = self.peek().clone() {
            if self.peek_at(1) == &Tok::LParen && !is_reserved(&name) {
                self.bump();
                let args = self.call_args()?;
                return Ok(Statement::Invoke { function: name, args });
            }
        }
        Err(self.unexpected("a statement"))
    }

    fn create(&mut self) -> Result<Statement> {
        if self.eat_kw("TYPE") {
            let name = self.ident("type name")?;
            self.expect_kw("AS")?;
            let open = if self.eat_kw("OPEN") {
                true
            } else {
                self.eat_kw("CLOSED");
                false
            };
            self.expect(&Tok::LBrace, "`{`")?;
            let mut fields = Vec::new();
            if !self.eat(&Tok::RBrace) {
                loop {
                    let field = self.ident("field name")?;
                    self.expect(&Tok::Colon, "`:`")?;
                    let ty = self.ident("field type")?;
                    fields.push((field, ty));
                    if self.eat(&Tok::Comma) {
                        continue;
                    }
                    self.expect(&Tok::RBrace, "`}`")?;
                    break;
                }
            }
            return Ok(Statement::CreateType(CreateType { name, open, fields }));
        }
        if self.is_kw("ACTIVE") || self.is_kw("DATASET") {
            let active = self.eat_kw("ACTIVE");
            self.expect_kw("DATASET")?;
            let name = self.ident("dataset name")?;
            self.expect(&Tok::LParen, "`(`")?;
            let type_name = self.ident("type name")?;
            self.expect(&Tok::RParen, "`)`")?;
            self.expect_kw("PRIMARY")?;
            self.expect_kw("KEY")?;
            let primary_key = self.ident("primary key field")?;
            return Ok(Statement::CreateDataset(CreateDataset { name, type_name, primary_key, active }));
        }
        if self.eat_kw("INDEX") {
            let name = self.ident("index name")?;
            self.expect_kw("ON")?;
            let dataset = self.ident("dataset name")?;
            self.expect(&Tok::LParen, "`(`")?;
            let mut fields = vec![self.ident("indexed field")?];
            while self.eat(&Tok::Comma) {
                fields.push(self.ident("indexed field")?);
            }
            self.expect(&Tok::RParen, "`)`")?;
            let kind = if self.eat_kw("TYPE") { Some(self.ident("index type")?) } else { None };
            return Ok(Statement::CreateIndex(CreateIndex { name, dataset, fields, kind }));
        }
        if self.eat_kw("FEED") {
            let name = self.ident("feed name")?;
            self.expect_kw("WITH")?;
            self.expect(&Tok::LBrace, "`{`")?;
            let mut options = Vec::new();
            if !self.eat(&Tok::RBrace) {
                loop {
                    let key = self.string("option name string")?;
                    self.expect(&Tok::Colon, "`:`")?;
                    let value = match self.bump() {
                        Tok::Str(s) => OptionValue::Str(s),
                        Tok::Int(i) => OptionValue::Int(i),
                        Tok::Ident(s) if s.eq_ignore_ascii_case("true") => OptionValue::Bool(true),
                        Tok::Ident(s) if s.eq_ignore_ascii_case("false") => OptionValue::Bool(false),
                        _ => {
                            self.pos -= 1;
                            return Err(self.unexpected("option value"));
                        }
                    };
                    options.push((key, value));
                    if self.eat(&Tok::Comma) {
                        continue;
                    }
                    self.expect(&Tok::RBrace, "`}`")?;
                    break;
                }
            }
            return Ok(Statement::CreateFeed(CreateFeed { name, options }));
        }
        if self.eat_kw("BROKER") {
            let name = self.ident("broker name")?;
            self.expect_kw("AT")?;
            let endpoint = self.string("broker endpoint string")?;
            return Ok(Statement::CreateBroker(CreateBroker { name, endpoint }));
        }
        if self.eat_kw("FUNCTION") {
            let name = self.ident("function name")?;
            let params = self.param_list()?;
            self.expect(&Tok::LBrace, "`{`")?;
            let body = if self.is_kw("SELECT") || self.is_kw("FROM") {
                FunctionBody::Query(self.query()?)
            } else {
                FunctionBody::Expr(self.expr()?)
            };
            self.expect(&Tok::RBrace, "`}`")?;
            return Ok(Statement::CreateFunction(CreateFunction { name, params, body }));
        }
        if self.is_kw("REPETITIVE") || self.is_kw("CONTINUOUS") {
            return self.create_channel();
        }
        Err(self.unexpected("TYPE, DATASET, INDEX, FEED, BROKER, FUNCTION or CHANNEL after CREATE"))
    }

    fn create_channel(&mut self) -> Result<Statement> {
        let kind = if self.eat_kw("REPETITIVE") {
            ChannelKind::Repetitive
        } else {
            self.expect_kw("CONTINUOUS")?;
            ChannelKind::Continuous
        };
        let push = self.eat_kw("PUSH");
        self.expect_kw("CHANNEL")?;
        let name = self.ident("channel name")?;
        let params = if self.peek() == &Tok::LParen { Some(self.param_list()?) } else { None };
        let using_loc = self.loc();
        let using = if self.eat_kw("USING") {
            let function = self.ident("function name")?;
            self.expect(&Tok::At, "`@` and arity")?;
            let arity = match self.bump() {
                Tok::Int(n) if n >= 0 => n as usize,
                _ => {
                    self.pos -= 1;
                    return Err(self.unexpected("function arity"));
                }
            };
            if kind == ChannelKind::Continuous {
                return Err(EngineError::parse("continuous channels take an inline query body, not USING", using_loc));
            }
            Some((function, arity))
        } else {
            None
        };
        self.expect_kw("PERIOD")?;
        let period_loc = self.loc();
        let period_micros = match self.expr()? {
            Expr::Call { name, args } if matches!(name.to_ascii_lowercase().as_str(), "duration" | "day_time_duration") => {
                match args.as_slice() {
                    [Expr::Literal(Literal::Str(text))] => {
                        parse_duration(text).map_err(|e| EngineError::parse(e.message, period_loc))?
                    }
                    _ => return Err(EngineError::parse("period must be duration(\"...\")", period_loc)),
                }
            }
            _ => return Err(EngineError::parse("period must be duration(\"...\")", period_loc)),
        };
        if period_micros <= 0 {
            return Err(EngineError::parse("channel period must be positive", period_loc));
        }
        let body = match using {
            Some((function, arity)) => ChannelBody::Using { function, arity },
            None => {
                if params.is_none() {
                    return Err(self.unexpected("channel parameter list"));
                }
                self.expect(&Tok::LBrace, "`{` and channel query")?;
                let q = self.query()?;
                self.expect(&Tok::RBrace, "`}`")?;
                ChannelBody::Inline(q)
            }
        };
        Ok(Statement::CreateChannel(CreateChannel { kind, push, name, params, period_micros, body }))
    }

    fn param_list(&mut self) -> Result<Vec<String>> {
        self.expect(&Tok::LParen, "`(`")?;
        let mut params = Vec::new();
        if self.eat(&Tok::RParen) {
            return Ok(params);
        }
        loop {
            params.push(self.ident("parameter name")?);
            if self.eat(&Tok::Comma) {
                continue;
            }
            self.expect(&Tok::RParen, "`)`")?;
            return Ok(params);
        }
    }

    fn call_args(&mut self) -> Result<Vec<Expr>> {
        self.expect(&Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        if self.eat(&Tok::RParen) {
            return Ok(args);
        }
        loop {
            args.push(self.expr()?);
            if self.eat(&Tok::Comma) {
                continue;
            }
            self.expect(&Tok::RParen, "`)`")?;
            return Ok(args);
        }
    }

    pub fn query(&mut self) -> Result<Query> {
        let select_first = self.is_kw("SELECT");
        let mut select = None;
        if select_first {
            select = Some(self.select_clause()?);
        }
        self.expect_kw("FROM")?;
        let mut from = vec![self.from_item()?];
        while self.eat(&Tok::Comma) {
            from.push(self.from_item()?);
        }
        let where_clause = if self.eat_kw("WHERE") { Some(self.expr()?) } else { None };
        let group_by = if self.eat_kw("GROUP") {
            self.expect_kw("BY")?;
            Some(self.expr()?)
        } else {
            None
        };
        if !select_first {
            if !self.is_kw("SELECT") {
                return Err(self.unexpected("SELECT clause"));
            }
            select = Some(self.select_clause()?);
        }
        let mut order_by = Vec::new();
        if self.eat_kw("ORDER") {
            self.expect_kw("BY")?;
            loop {
                let expr = self.expr()?;
                let desc = if self.eat_kw("DESC") {
                    true
                } else {
                    self.eat_kw("ASC");
                    false
                };
                order_by.push(OrderItem { expr, desc });
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        let limit = if self.eat_kw("LIMIT") {
            match self.bump() {
                Tok::Int(n) if n >= 0 => Some(n as u64),
                _ => {
                    self.pos -= 1;
                    return Err(self.unexpected("non-negative LIMIT"));
                }
            }
        } else {
            None
        };
        Ok(Query {
            select_first,
            select: select.expect("select clause parsed"),
            from,
            where_clause,
            group_by,
            order_by,
            limit,
        })
    }

    fn select_clause(&mut self) -> Result<Select> {
        self.expect_kw("SELECT")?;
        if self.eat_kw("VALUE") {
            return Ok(Select::Value(self.expr()?));
        }
        let mut items = Vec::new();
        loop {
            let expr = self.expr()?;
            let alias = if self.eat_kw("AS") {
                Some(self.ident("alias")?)
            } else {
                match self.peek() {
                    Tok::Ident(s) if !is_reserved(s) => Some(self.ident("alias")?),
                    _ => None,
                }
            };
            items.push(SelectItem { expr, alias });
            if !self.eat(&Tok::Comma) {
                return Ok(Select::Items(items));
            }
        }
    }

    fn from_item(&mut self) -> Result<FromItem> {
        let dataset = self.ident("dataset name")?;
        self.eat_kw("AS");
        let alias = match self.peek() {
            Tok::Ident(s) if !is_reserved(s) => self.ident("alias")?,
            _ => return Err(self.unexpected("source alias")),
        };
        Ok(FromItem { dataset, alias })
    }

    pub fn expr(&mut self) -> Result<Expr> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> Result<Expr> {
        let mut lhs = self.and_expr()?;
        while self.eat_kw("OR") {
            let rhs = self.and_expr()?;
            lhs = Expr::binary(BinaryOp::Or, lhs, rhs);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr> {
        let mut lhs = self.not_expr()?;
        while self.eat_kw("AND") {
            let rhs = self.not_expr()?;
            lhs = Expr::binary(BinaryOp::And, lhs, rhs);
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> Result<Expr> {
        if self.eat_kw("NOT") {
            let inner = self.not_expr()?;
            return Ok(Expr::Unary { op: UnaryOp::Not, expr: Box::new(inner) });
        }
        self.cmp_expr()
    }

    fn cmp_expr(&mut self) -> Result<Expr> {
        let lhs = self.add_expr()?;
        let op = match self.peek() {
            Tok::Eq => BinaryOp::Eq,
            Tok::Ne => BinaryOp::Ne,
            Tok::Lt => BinaryOp::Lt,
            Tok::Le => BinaryOp::Le,
            Tok::Gt => BinaryOp::Gt,
            Tok::Ge => BinaryOp::Ge,
            _ => return Ok(lhs),
        };
        self.bump();
        let rhs = self.add_expr()?;
        Ok(Expr::binary(op, lhs, rhs))
    }

    fn add_expr(&mut self) -> Result<Expr> {
        let mut lhs = self.mul_expr()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinaryOp::Add,
                Tok::Minus => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.mul_expr()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn mul_expr(&mut self) -> Result<Expr> {
        let mut lhs = self.unary_expr()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinaryOp::Mul,
                Tok::Slash => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary_expr()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn unary_expr(&mut self) -> Result<Expr> {
        if self.eat(&Tok::Minus) {
            // A minus directly in front of a number literal is part of the literal.
            match self.peek().clone() {
                Tok::Int(n) => {
                    self.bump();
                    return self.postfix(Expr::Literal(Literal::Int(-n)));
                }
                Tok::Float(f) => {
                    self.bump();
                    return self.postfix(Expr::Literal(Literal::Float(-f)));
                }
                _ => {}
            }
            let inner = self.unary_expr()?;
            return Ok(Expr::Unary { op: UnaryOp::Neg, expr: Box::new(inner) });
        }
        let base = self.primary()?;
        self.postfix(base)
    }

    fn postfix(&mut self, mut base: Expr) -> Result<Expr> {
        while self.eat(&Tok::Dot) {
            let name = self.ident("field name")?;
            base = Expr::Field(Box::new(base), name);
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.peek().clone() {
            Tok::Int(n) => {
                self.bump();
                Ok(Expr::Literal(Literal::Int(n)))
            }
            Tok::Float(f) => {
                self.bump();
                Ok(Expr::Literal(Literal::Float(f)))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Expr::Literal(Literal::Str(s)))
            }
            Tok::Star => {
                self.bump();
                Ok(Expr::Star)
            }
            Tok::LParen => {
                self.bump();
                if self.is_kw("SELECT") || self.is_kw("FROM") {
                    let q = self.query()?;
                    self.expect(&Tok::RParen, "`)`")?;
                    return Ok(Expr::Subquery(Box::new(q)));
                }
                let e = self.expr()?;
                self.expect(&Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::LBrace => {
                self.bump();
                let mut fields = Vec::new();
                if self.eat(&Tok::RBrace) {
                    return Ok(Expr::Object(fields));
                }
                loop {
                    let key = match self.bump() {
                        Tok::Str(s) | Tok::Ident(s) => s,
                        _ => {
                            self.pos -= 1;
                            return Err(self.unexpected("object field name"));
                        }
                    };
                    self.expect(&Tok::Colon, "`:`")?;
                    fields.push((key, self.expr()?));
                    if self.eat(&Tok::Comma) {
                        continue;
                    }
                    self.expect(&Tok::RBrace, "`}`")?;
                    return Ok(Expr::Object(fields));
                }
            }
            Tok::LBracket => {
                self.bump();
                let mut items = Vec::new();
                if self.eat(&Tok::RBracket) {
                    return Ok(Expr::Array(items));
                }
                loop {
                    items.push(self.expr()?);
                    if self.eat(&Tok::Comma) {
                        continue;
                    }
                    self.expect(&Tok::RBracket, "`]`")?;
                    return Ok(Expr::Array(items));
                }
            }
            Tok::Ident(name) => {
                if name.eq_ignore_ascii_case("true") {
                    self.bump();
                    return Ok(Expr::Literal(Literal::Bool(true)));
                }
                if name.eq_ignore_ascii_case("false") {
                    self.bump();
                    return Ok(Expr::Literal(Literal::Bool(false)));
                }
                if name.eq_ignore_ascii_case("null") || name.eq_ignore_ascii_case("missing") {
                    self.bump();
                    return Ok(Expr::Literal(Literal::Null));
                }
                if is_reserved(&name) {
                    return Err(self.unexpected("an expression"));
                }
                self.bump();
                if self.peek() == &Tok::LParen {
                    let args = self.call_args()?;
                    return Ok(Expr::Call { name, args });
                }
                Ok(Expr::Ident(name))
            }
            _ => Err(self.unexpected("an expression")),
        }
    }
}
