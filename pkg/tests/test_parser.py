import numpy as np
import pytest

from declopt.corpus import list_models, model_text
from declopt.errors import (
    DeclOptError,
    DuplicateName,
    LexError,
    MissingObjective,
    NonScalarObjective,
    ParseError,
    ShapeMismatch,
)
from declopt.expr import structurally_equal
from declopt.parser import format_model, parse_model, tokenize, validate

SIMPLEX_RECOVERY = """
parameters
    Matrix A
    Vector b
variables
    Vector x
min
    norm1(x)
st
    A*x == b
    sum(x) == 1
    x >= 0
"""


class TestTokenize:
    def test_min_norm1(self):
        kinds = [(t.kind, t.text) for t in tokenize("min norm1(x)")][:-1]
        assert kinds == [("KW", "min"), ("IDENT", "norm1"), ("LPAREN", "("),
                         ("IDENT", "x"), ("RPAREN", ")")]

    def test_empty_input(self):
        toks = tokenize("")
        assert len(toks) == 1 and toks[0].kind == "EOF"

    def test_transpose_and_numbers(self):
        toks = tokenize("0.5 * w' * w")
        kinds = [t.kind for t in toks][:-1]
        assert kinds == ["NUMBER", "STAR", "IDENT", "TICK", "STAR", "IDENT"]
        assert toks[0].value == 0.5

    def test_two_char_operators(self):
        kinds = [t.kind for t in tokenize("a .* b ./ c .^ 2 == <= >=")][:-1]
        assert kinds == ["IDENT", "DOTSTAR", "IDENT", "DOTSLASH", "IDENT",
                         "DOTCARET", "NUMBER", "EQEQ", "LE", "GE"]

    def test_comments_skipped(self):
        toks = tokenize("min x # objective\n")
        assert [t.text for t in toks][:-1] == ["min", "x"]

    def test_illegal_character_has_position(self):
        with pytest.raises(LexError) as exc:
            tokenize("min x\nst x @ 1")
        assert exc.value.span.line == 2

    def test_scientific_notation(self):
        toks = tokenize("1e-4 2.5E+3 .5")
        assert [t.value for t in toks][:-1] == [1e-4, 2.5e3, 0.5]

    def test_line_and_column_tracking(self):
        toks = tokenize("min\n  x")
        assert (toks[1].line, toks[1].col) == (2, 3)


class TestParse:
    def test_simplex_recovery_model(self):
        spec = parse_model(SIMPLEX_RECOVERY)
        assert [d.name for d in spec.parameters] == ["A", "b"]
        assert [d.name for d in spec.variables] == ["x"]
        assert spec.objective.op == "norm1"
        assert len(spec.constraints) == 3
        assert [c.relation for c in spec.constraints] == ["==", "==", ">="]

    def test_svm_model(self):
        spec = parse_model(model_text("svm_dual"))
        assert [(d.name, d.symmetric) for d in spec.parameters] == \
            [("K", True), ("c", False), ("y", False)]
        assert [d.name for d in spec.variables] == ["a"]
        assert len(spec.constraints) == 2

    def test_empty_parameter_block_legal(self):
        spec = parse_model("variables Vector x min x")
        assert spec.parameters == ()
        assert spec.objective.op == "var"

    def test_duplicate_name(self):
        with pytest.raises(DuplicateName):
            parse_model("parameters Vector x variables Vector x min sum(x)")

    def test_missing_objective(self):
        with pytest.raises(MissingObjective):
            parse_model("parameters Vector b variables Vector x st x >= 0")

    def test_chained_relations_rejected(self):
        with pytest.raises(ParseError) as exc:
            parse_model("variables Scalar x min x st 0 <= x <= 1")
        assert "chained" in str(exc.value)

    def test_strict_inequalities_become_nonstrict(self):
        spec = parse_model("variables Vector x min sum(x) st x > 0")
        assert spec.constraints[0].relation == ">="

    def test_precedence_transpose_tightest(self):
        spec = parse_model("variables Vector w min 0.5 * w' * w")
        obj = spec.objective
        # ((0.5 * w') * w)
        assert obj.op == "mul"
        assert obj.args[0].op == "mul"
        assert obj.args[0].args[1].op == "transpose"

    def test_precedence_epow_before_mul(self):
        spec = parse_model(
            "parameters Matrix X Vector y variables Vector w "
            "min 2 * norm2(X*w - y).^2")
        obj = spec.objective
        assert obj.op == "mul"
        assert obj.args[1].op == "epow"

    def test_unary_minus_folds_constants(self):
        spec = parse_model("variables Scalar x min -2 * x")
        assert spec.objective.args[0].value == -2.0

    def test_errors_carry_spans_inside_text(self):
        text = "variables Vector x min sum(x st x >= 0"
        with pytest.raises(ParseError) as exc:
            parse_model(text)
        assert exc.value.span is not None
        assert 0 <= exc.value.span.pos <= len(text)

    def test_parse_is_total_on_fuzz(self):
        rng = np.random.Generator(np.random.PCG64(123))
        alphabet = list("abxy01. *+-/^'()<>=\n#stminvarablepr")
        for _ in range(300):
            n = int(rng.integers(0, 60))
            text = "".join(rng.choice(alphabet, size=n))
            try:
                parse_model(text)
            except DeclOptError:
                pass  # diagnostics are fine; crashes are not

    def test_parse_is_total_on_raw_bytes(self):
        rng = np.random.Generator(np.random.PCG64(321))
        for _ in range(200):
            n = int(rng.integers(0, 80))
            text = bytes(rng.integers(0, 256, size=n, dtype=np.uint8)) \
                .decode("utf-8", errors="replace")
            try:
                parse_model(text)
            except DeclOptError:
                pass

    def test_deep_nesting_is_a_diagnostic(self):
        text = "variables Scalar x min " + "(" * 500 + "x" + ")" * 500
        with pytest.raises(ParseError):
            parse_model(text)


class TestValidate:
    def test_scalar_objective_ok(self):
        spec = validate(parse_model(SIMPLEX_RECOVERY))
        assert spec.objective.shape.is_scalar

    def test_vector_objective_rejected(self):
        with pytest.raises(NonScalarObjective):
            validate(parse_model(
                "parameters Matrix A variables Vector x min A*x"))

    def test_doomed_but_valid_expression(self):
        spec = validate(parse_model(
            "variables Vector x min log(det(x*x'))"))
        assert spec.objective.shape.is_scalar

    def test_shape_error_carries_span(self):
        text = ("parameters Matrix A variables Vector x min sum(x) "
                "st norm1(A) <= 1")
        with pytest.raises(ShapeMismatch) as exc:
            validate(parse_model(text))
        assert exc.value.span is not None
        assert 0 <= exc.value.span.pos <= len(text)

    def test_bind_time_unification_failure(self):
        # x' A x forces A square with rows(A) = rows(x)
        from declopt.errors import DimensionError
        from declopt.expr import Env, eval_expr
        spec = validate(parse_model(
            "parameters Matrix A variables Vector x min x' * A * x"))
        v = eval_expr(spec.objective, Env({"A": np.eye(2),
                                           "x": np.ones(2)}))
        assert v == pytest.approx(2.0)
        with pytest.raises(DimensionError):
            eval_expr(spec.objective, Env({"A": np.ones((3, 2)),
                                           "x": np.ones(2)}))

    def test_symmetric_only_on_matrix(self):
        with pytest.raises(ParseError):
            parse_model("parameters Vector y symmetric variables Scalar x min x")

    def test_parameters_classified(self):
        spec = validate(parse_model(SIMPLEX_RECOVERY))
        con = spec.constraints[0]
        assert con.lhs.args[0].op == "param"  # A
        assert con.lhs.args[1].op == "var"    # x


class TestRoundTrip:
    @pytest.mark.parametrize("name", sorted(list_models()))
    def test_print_reparse_identical(self, name):
        spec = parse_model(model_text(name))
        printed = format_model(spec)
        again = parse_model(printed)
        assert spec.sense == again.sense
        assert [d.name for d in spec.parameters] == \
            [d.name for d in again.parameters]
        assert [d.symmetric for d in spec.parameters] == \
            [d.symmetric for d in again.parameters]
        assert [d.name for d in spec.variables] == \
            [d.name for d in again.variables]
        assert structurally_equal(spec.objective, again.objective)
        assert len(spec.constraints) == len(again.constraints)
        for a, b in zip(spec.constraints, again.constraints):
            assert a.relation == b.relation
            assert structurally_equal(a.lhs, b.lhs)
            assert structurally_equal(a.rhs, b.rhs)
