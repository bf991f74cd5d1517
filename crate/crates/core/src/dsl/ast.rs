//! Statement and query syntax trees.

#[derive(Debug, Clone, PartialEq)]
pub enum Statement {
    CreateType(CreateType),
    CreateDataset(CreateDataset),
    CreateIndex(CreateIndex),
    CreateFeed(CreateFeed),
    ConnectFeed(ConnectFeed),
    StartFeed { feed: String },
    CreateBroker(CreateBroker),
    AlterBroker(CreateBroker),
    CreateFunction(CreateFunction),
    CreateChannel(CreateChannel),
    DropChannel { name: String },
    Subscribe(Subscribe),
    Insert(Insert),
    Query(Query),
    Invoke { function: String, args: Vec<Expr> },
    Explain(Box<Statement>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CreateType {
    pub name: String,
    pub open: bool,
    pub fields: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CreateDataset {
    pub name: String,
    pub type_name: String,
    pub primary_key: String,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CreateIndex {
    pub name: String,
    pub dataset: String,
    pub fields: Vec<String>,
    pub kind: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptionValue {
    Str(String),
    Bool(bool),
    Int(i64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CreateFeed {
    pub name: String,
    pub options: Vec<(String, OptionValue)>,
}

impl CreateFeed {
    pub fn option(&self, key: &str) -> Option<&OptionValue> {
        self.options.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConnectFeed {
    pub feed: String,
    pub dataset: String,
    pub function: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CreateBroker {
    pub name: String,
    pub endpoint: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FunctionBody {
    Query(Query),
    Expr(Expr),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CreateFunction {
    pub name: String,
    pub params: Vec<String>,
    pub body: FunctionBody,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ChannelKind {
    Repetitive,
    Continuous,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChannelBody {
    Using { function: String, arity: usize },
    Inline(Query),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CreateChannel {
    pub kind: ChannelKind,
    /// Eager delivery: results are pushed to brokers and not persisted.
    pub push: bool,
    pub name: String,
    /// `None` for the `USING f@n` form, which takes its parameters from the function.
    pub params: Option<Vec<String>>,
    pub period_micros: i64,
    pub body: ChannelBody,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subscribe {
    pub channel: String,
    pub args: Vec<Expr>,
    pub broker: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Insert {
    pub dataset: String,
    pub upsert: bool,
    pub docs: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    /// Source order: `SELECT ... FROM ...` versus `FROM ... SELECT ...`.
    pub select_first: bool,
    pub select: Select,
    pub from: Vec<FromItem>,
    pub where_clause: Option<Expr>,
    pub group_by: Option<Expr>,
    pub order_by: Vec<OrderItem>,
    pub limit: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Select {
    Value(Expr),
    Items(Vec<SelectItem>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectItem {
    pub expr: Expr,
    pub alias: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FromItem {
    pub dataset: String,
    pub alias: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderItem {
    pub expr: Expr,
    pub desc: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Not,
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Or,
    And,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    pub fn precedence(self) -> u8 {
        match self {
            BinaryOp::Or => 1,
            BinaryOp::And => 2,
            BinaryOp::Eq | BinaryOp::Ne | BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge => 4,
            BinaryOp::Add | BinaryOp::Sub => 5,
            BinaryOp::Mul | BinaryOp::Div => 6,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Or => "OR",
            BinaryOp::And => "AND",
            BinaryOp::Eq => "=",
            BinaryOp::Ne => "!=",
            BinaryOp::Lt => "<",
            BinaryOp::Le => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::Ge => ">=",
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
        }
    }

    pub fn is_comparison(self) -> bool {
        self.precedence() == 4
    }

    /// The comparison with operands swapped: `a < b` iff `b > a`.
    pub fn flipped(self) -> BinaryOp {
        match self {
            BinaryOp::Lt => BinaryOp::Gt,
            BinaryOp::Le => BinaryOp::Ge,
            BinaryOp::Gt => BinaryOp::Lt,
            BinaryOp::Ge => BinaryOp::Le,
            other => other,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Literal(Literal),
    Ident(String),
    Field(Box<Expr>, String),
    /// `*`, only meaningful as the argument of `count`.
    Star,
    Call { name: String, args: Vec<Expr> },
    Unary { op: UnaryOp, expr: Box<Expr> },
    Binary { op: BinaryOp, lhs: Box<Expr>, rhs: Box<Expr> },
    Object(Vec<(String, Expr)>),
    Array(Vec<Expr>),
    Subquery(Box<Query>),
}

impl Expr {
    pub fn ident(name: &str) -> Expr {
        Expr::Ident(name.to_string())
    }

    pub fn field(base: Expr, name: &str) -> Expr {
        Expr::Field(Box::new(base), name.to_string())
    }

    pub fn call(name: &str, args: Vec<Expr>) -> Expr {
        Expr::Call { name: name.to_string(), args }
    }

    pub fn binary(op: BinaryOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }
    }

    pub fn and(lhs: Expr, rhs: Expr) -> Expr {
        Expr::binary(BinaryOp::And, lhs, rhs)
    }

    pub fn str(s: &str) -> Expr {
        Expr::Literal(Literal::Str(s.to_string()))
    }

    /// Splits a chain of ANDs into its conjuncts, left to right.
    pub fn conjuncts(&self) -> Vec<&Expr> {
        match self {
            Expr::Binary { op: BinaryOp::And, lhs, rhs } => {
                let mut v = lhs.conjuncts();
                v.extend(rhs.conjuncts());
                v
            }
            other => vec![other],
        }
    }

    /// Function name in lower case when this is a call.
    pub fn call_name(&self) -> Option<String> {
        match self {
            Expr::Call { name, .. } => Some(name.to_ascii_lowercase()),
            _ => None,
        }
    }
}
