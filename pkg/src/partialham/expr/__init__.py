"""Symbolic expression core."""

from .collect import MonomialKey, NonSeparable, collect_by, reconstruct
from .nodes import (
    EXP_BASE,
    HALF,
    MINUS_ONE,
    ONE,
    ZERO,
    Add,
    Const,
    Expr,
    Func,
    FuncApp,
    Mul,
    Parameter,
    Pow,
    Symbol,
    Variable,
    as_expr,
    cos,
    depends_on,
    exp,
    free_symbols,
    function_apps,
    ln,
    sin,
    sqrt,
)
from .normal import (
    DomainError,
    coefficient_and_rest,
    differentiate,
    equals,
    normal_form,
    replace,
    simplify,
    substitute,
    substitute_functions,
    terms_of,
)
from .numeric import (
    EvalDomainError,
    Verdict,
    compile_expr,
    compile_exprs,
    eval_numeric,
    is_zero,
    sample_point,
)
from .parse import ParseError, parse_expr, parse_tree, tokenize
from .printing import render

__all__ = [name for name in dir() if not name.startswith("_")]
