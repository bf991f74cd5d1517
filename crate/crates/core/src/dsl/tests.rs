use proptest::prelude::*;

use super::*;
use crate::error::ErrorKind;

const CQ_NEW_NEARBY: &str = r#"
CREATE CONTINUOUS CHANNEL CQNewNearbyHatefulTweets(oid) PERIOD duration("PT10S") {
  SELECT t
  FROM OfficerLocations o, Tweets t
  WHERE spatial_distance(t.location, o.location) < 5
    AND o.oid = oid AND t.hateful_flag = true AND is_new(t)
};"#;

#[test]
fn continuous_channel_shape() {
    let stmts = parse(CQ_NEW_NEARBY).unwrap();
    let Statement::CreateChannel(c) = &stmts[0] else { panic!("not a channel") };
    assert_eq!(c.kind, ChannelKind::Continuous);
    assert_eq!(c.name, "CQNewNearbyHatefulTweets");
    assert_eq!(c.params.as_deref(), Some(&["oid".to_string()][..]));
    assert_eq!(c.period_micros, 10_000_000);
    let ChannelBody::Inline(q) = &c.body else { panic!("inline body expected") };
    assert_eq!(q.from.len(), 2);
    assert_eq!(q.from[0].dataset, "OfficerLocations");
    let w = q.where_clause.as_ref().unwrap();
    assert_eq!(w.conjuncts().len(), 4);
    assert_eq!(w.conjuncts()[3], &Expr::call("is_new", vec![Expr::ident("t")]));
}

#[test]
fn subscribe_shape() {
    let stmts = parse(r#"SUBSCRIBE TO RecentNearbyHatefulTweetCountChannel("0907") ON BROKER_A;"#).unwrap();
    assert_eq!(
        stmts,
        vec![Statement::Subscribe(Subscribe {
            channel: "RecentNearbyHatefulTweetCountChannel".into(),
            args: vec![Expr::str("0907")],
            broker: "BROKER_A".into(),
        })]
    );
}

#[test]
fn zero_period_is_rejected() {
    let err = parse("CREATE CONTINUOUS CHANNEL X() PERIOD duration(\"PT0S\") { SELECT t FROM T t };").unwrap_err();
    assert_eq!(err.kind, ErrorKind::ParseError);
    assert_eq!(err.location.unwrap().line, 1);
}

#[test]
fn continuous_channels_must_be_inline() {
    let err = parse("CREATE CONTINUOUS CHANNEL X USING f@1 PERIOD duration(\"PT1S\");").unwrap_err();
    assert_eq!(err.kind, ErrorKind::ParseError);
}

#[test]
fn parse_errors_carry_positions() {
    let err = parse("CREATE DATASET T(X) PRIMARY KEY id;\nSELECT FROM;").unwrap_err();
    let loc = err.location.unwrap();
    assert_eq!((loc.line, loc.column), (2, 8));
}

#[test]
fn keywords_are_case_insensitive() {
    let a = parse("select value t from Tweets t where t.x > 1 order by t.x desc limit 3;").unwrap();
    let b = parse("SELECT VALUE t FROM Tweets t WHERE t.x > 1 ORDER BY t.x DESC LIMIT 3;").unwrap();
    assert_eq!(a, b);
}

#[test]
fn empty_list_prints_empty() {
    assert_eq!(print_statements(&[]), "");
    assert!(parse("  -- nothing here\n").unwrap().is_empty());
}

#[test]
fn lookup_subquery_keeps_nesting() {
    let src = r#"CREATE CONTINUOUS CHANNEL NewLocalHatefulTweetsWithSchools(area_code)
   PERIOD duration("PT10S") {
    SELECT t,
    (SELECT VALUE s FROM Schools s WHERE s.area_code = t.area_code) AS nearby_schools
    FROM Tweets t
    WHERE t.area_code = area_code AND is_new(t)
  };"#;
    let first = parse(src).unwrap();
    let printed = print_statements(&first);
    assert!(printed.contains("(SELECT VALUE s FROM Schools s WHERE s.area_code = t.area_code) AS nearby_schools"));
    assert_eq!(parse(&printed).unwrap(), first);
}

#[test]
fn precedence_is_preserved() {
    for src in ["a - (b - c)", "(a OR b) AND c", "NOT (a = b)", "-(x + 1) * 2", "(1 < 2) = true", "-(-x)", "a - -5"] {
        let e = parse_expr(src).unwrap();
        assert_eq!(parse_expr(&print_expr(&e)).unwrap(), e, "{src}");
    }
    assert_eq!(print_expr(&parse_expr("a - (b - c)").unwrap()), "a - (b - c)");
    assert_eq!(print_expr(&parse_expr("(a - b) - c").unwrap()), "a - b - c");
}

fn name() -> impl Strategy<Value = String> {
    "[a-z][a-z_]{0,4}[0-9]".prop_map(|s| s)
}

fn literal() -> impl Strategy<Value = Expr> {
    prop_oneof![
        Just(Expr::Literal(Literal::Null)),
        any::<bool>().prop_map(|b| Expr::Literal(Literal::Bool(b))),
        (-1_000_000i64..1_000_000).prop_map(|i| Expr::Literal(Literal::Int(i))),
        (-1e9f64..1e9).prop_map(|f| Expr::Literal(Literal::Float(f))),
        "[ -~]{0,6}".prop_map(|s| Expr::Literal(Literal::Str(s))),
    ]
}

fn expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        literal(),
        name().prop_map(Expr::Ident),
        (name(), name()).prop_map(|(a, f)| Expr::field(Expr::Ident(a), &f)),
    ];
    leaf.prop_recursive(4, 32, 4, |inner| {
        let binop = prop_oneof![
            Just(BinaryOp::Or),
            Just(BinaryOp::And),
            Just(BinaryOp::Eq),
            Just(BinaryOp::Ne),
            Just(BinaryOp::Lt),
            Just(BinaryOp::Le),
            Just(BinaryOp::Gt),
            Just(BinaryOp::Ge),
            Just(BinaryOp::Add),
            Just(BinaryOp::Sub),
            Just(BinaryOp::Mul),
            Just(BinaryOp::Div),
        ];
        prop_oneof![
            (binop, inner.clone(), inner.clone()).prop_map(|(op, l, r)| Expr::binary(op, l, r)),
            inner.clone().prop_map(|e| Expr::Unary { op: UnaryOp::Not, expr: Box::new(e) }),
            inner.clone().prop_map(|e| Expr::Unary { op: UnaryOp::Neg, expr: Box::new(e) }),
            (name(), prop::collection::vec(inner.clone(), 0..3)).prop_map(|(n, args)| Expr::Call { name: n, args }),
            (inner.clone(), name()).prop_map(|(b, f)| Expr::Field(Box::new(b), f)),
            prop::collection::vec(("[a-z ]{0,4}", inner.clone()), 0..3).prop_map(Expr::Object),
            prop::collection::vec(inner, 0..3).prop_map(Expr::Array),
        ]
    })
}

fn query() -> impl Strategy<Value = Query> {
    (
        any::<bool>(),
        prop_oneof![
            expr().prop_map(Select::Value),
            prop::collection::vec((expr(), proptest::option::of(name())), 1..3).prop_map(|items| {
                Select::Items(items.into_iter().map(|(expr, alias)| SelectItem { expr, alias }).collect())
            }),
        ],
        prop::collection::vec((name(), name()), 1..3),
        proptest::option::of(expr()),
        proptest::option::of(expr()),
        prop::collection::vec((expr(), any::<bool>()), 0..2),
        proptest::option::of(0u64..100),
    )
        .prop_map(|(select_first, select, from, where_clause, group_by, order, limit)| Query {
            select_first,
            select,
            from: from.into_iter().map(|(dataset, alias)| FromItem { dataset, alias }).collect(),
            where_clause,
            group_by,
            order_by: order.into_iter().map(|(expr, desc)| OrderItem { expr, desc }).collect(),
            limit,
        })
}

fn statement() -> impl Strategy<Value = Statement> {
    prop_oneof![
        (name(), any::<bool>(), prop::collection::vec((name(), name()), 0..3))
            .prop_map(|(name, open, fields)| Statement::CreateType(CreateType { name, open, fields })),
        (name(), name(), name(), any::<bool>()).prop_map(|(name, type_name, primary_key, active)| {
            Statement::CreateDataset(CreateDataset { name, type_name, primary_key, active })
        }),
        (name(), name(), proptest::option::of(name())).prop_map(|(feed, dataset, function)| {
            Statement::ConnectFeed(ConnectFeed { feed, dataset, function })
        }),
        (name(), "[ -~]{0,12}").prop_map(|(name, endpoint)| Statement::CreateBroker(CreateBroker { name, endpoint })),
        (name(), prop::collection::vec(expr(), 0..3), name())
            .prop_map(|(channel, args, broker)| Statement::Subscribe(Subscribe { channel, args, broker })),
        (
            any::<bool>(),
            any::<bool>(),
            name(),
            prop::collection::vec(name(), 0..3),
            1i64..100_000_000_000,
            query()
        )
            .prop_map(|(continuous, push, name, params, period_micros, q)| {
                Statement::CreateChannel(CreateChannel {
                    kind: if continuous { ChannelKind::Continuous } else { ChannelKind::Repetitive },
                    push,
                    name,
                    params: Some(params),
                    period_micros,
                    body: ChannelBody::Inline(q),
                })
            }),
        (name(), name(), 0usize..4, 1i64..1_000_000_000).prop_map(|(name, function, arity, period_micros)| {
            Statement::CreateChannel(CreateChannel {
                kind: ChannelKind::Repetitive,
                push: false,
                name,
                params: None,
                period_micros,
                body: ChannelBody::Using { function, arity },
            })
        }),
        (name(), prop::collection::vec(name(), 0..3), query()).prop_map(|(name, params, q)| {
            Statement::CreateFunction(CreateFunction { name, params, body: FunctionBody::Query(q) })
        }),
        (name(), prop::collection::vec(name(), 1..3), expr()).prop_map(|(name, params, e)| {
            Statement::CreateFunction(CreateFunction { name, params, body: FunctionBody::Expr(e) })
        }),
        query().prop_map(Statement::Query),
        query().prop_map(|q| Statement::Explain(Box::new(Statement::Query(q)))),
        (name(), prop::collection::vec(expr(), 0..3)).prop_map(|(function, args)| Statement::Invoke { function, args }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn printed_statements_reparse_equal(stmts in prop::collection::vec(statement(), 0..4)) {
        let text = print_statements(&stmts);
        let back = parse(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(back, stmts);
    }

    #[test]
    fn printed_exprs_reparse_equal(e in expr()) {
        let text = print_expr(&e);
        let back = parse_expr(&text).map_err(|err| TestCaseError::fail(format!("{err}\n{text}")))?;
        prop_assert_eq!(back, e);
    }
}
