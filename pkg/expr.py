"""
Transformation operators and the RPN feature-expression engine.

A feature set is serialized as
    <SOS> seg_1 <SEP> seg_2 <SEP> ... seg_n <SEP> <EOS>
where each segment is one RPN expression over the original columns f0..f{K-1}.
"""

import logging
import re
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import (
    FeatureReferenceError,
    FramingError,
    MalformedRPNError,
    VocabularyError,
)

logger = logging.getLogger(__name__)

SOS = "<SOS>"
SEP = "<SEP>"
EOS = "<EOS>"
PAD = "<PAD>"
MASK = "<MASK>"
FRAMING_TOKENS = (SOS, SEP, EOS)

EPSILON = 1e-8
_FEATURE_PATTERN = re.compile(r"^f(\d+)$")


class Arity(int, Enum):
    UNARY = 1
    BINARY = 2


def safe_divide(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    sign = np.where(b >= 0, 1.0, -1.0)
    return a / (b + sign * EPSILON)


def safe_log(x: np.ndarray) -> np.ndarray:
    return np.log(np.abs(x) + EPSILON)


def safe_sqrt(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.abs(x))


def safe_reciprocal(x: np.ndarray) -> np.ndarray:
    return safe_divide(np.ones_like(x), x)


def standardize(x: np.ndarray) -> np.ndarray:
    # constant columns map to zeros
    if x.size == 0 or np.ptp(x) == 0:
        return np.zeros_like(x)
    std = x.std()
    if not np.isfinite(std) or std == 0:
        return np.zeros_like(x)
    return (x - x.mean()) / std


def minmax_scale(x: np.ndarray) -> np.ndarray:
    if x.size == 0:
        return np.zeros_like(x)
    span = np.ptp(x)
    if span == 0 or not np.isfinite(span):
        return np.zeros_like(x)
    return (x - x.min()) / span


@dataclass(frozen=True)
class Operator:
    name: str
    arity: Arity
    symbol: str
    apply: Callable


_REGISTRY: Tuple[Operator, ...] = (
    Operator("add", Arity.BINARY, "+", np.add),
    Operator("subtract", Arity.BINARY, "-", np.subtract),
    Operator("multiply", Arity.BINARY, "*", np.multiply),
    Operator("safe_divide", Arity.BINARY, "/", safe_divide),
    Operator("safe_log", Arity.UNARY, "log", safe_log),
    Operator("safe_sqrt", Arity.UNARY, "sqrt", safe_sqrt),
    Operator("square", Arity.UNARY, "square", np.square),
    Operator("safe_reciprocal", Arity.UNARY, "reciprocal", safe_reciprocal),
    Operator("abs", Arity.UNARY, "abs", np.abs),
    Operator("sin", Arity.UNARY, "sin", np.sin),
    Operator("cos", Arity.UNARY, "cos", np.cos),
    Operator("tanh", Arity.UNARY, "tanh", np.tanh),
    Operator("standardize", Arity.UNARY, "standardize", standardize),
    Operator("minmax_scale", Arity.UNARY, "minmax", minmax_scale),
)

_BY_TOKEN = {}
for _op in _REGISTRY:
    _BY_TOKEN[_op.symbol] = _op
    _BY_TOKEN[_op.name] = _op


def operator_registry() -> List[Operator]:
    """The fixed operator set, binary operators first."""
    return list(_REGISTRY)


def lookup_operator(token: str) -> Optional[Operator]:
    """Resolve an operator by symbol or registry name."""
    return _BY_TOKEN.get(token)


class TokenKind(str, Enum):
    FEATURE_REF = "feature_ref"
    OPERATOR = "operator"
    SOS = "sos"
    SEP = "sep"
    EOS = "eos"


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    payload: Union[int, str, None] = None

    @classmethod
    def feature(cls, index: int) -> "Token":
        return cls(TokenKind.FEATURE_REF, int(index))

    @classmethod
    def operator(cls, op: Union[Operator, str]) -> "Token":
        if isinstance(op, str):
            resolved = lookup_operator(op)
            if resolved is None:
                raise VocabularyError(f"Unknown operator: {op!r}", token=op)
            op = resolved
        return cls(TokenKind.OPERATOR, op.name)

    @property
    def op(self) -> Operator:
        return _BY_TOKEN[self.payload]

    @property
    def arity(self) -> int:
        return self.op.arity.value if self.kind == TokenKind.OPERATOR else 0

    def __str__(self) -> str:
        if self.kind == TokenKind.FEATURE_REF:
            return f"f{self.payload}"
        if self.kind == TokenKind.OPERATOR:
            return self.op.symbol
        return {TokenKind.SOS: SOS, TokenKind.SEP: SEP, TokenKind.EOS: EOS}[self.kind]


def validate_rpn(tokens: Sequence[Token], offset: int = 0) -> None:
    """
    Single stack pass over one segment.

    Raises MalformedRPNError at the first underflow, or at the last token when
    the segment does not reduce to exactly one value.
    """
    if not tokens:
        raise MalformedRPNError("Empty RPN segment", position=offset)
    depth = 0
    for i, token in enumerate(tokens):
        if token.kind == TokenKind.FEATURE_REF:
            depth += 1
        elif token.kind == TokenKind.OPERATOR:
            arity = token.arity
            if depth < arity:
                raise MalformedRPNError(
                    f"Stack underflow at token '{token}' (position {offset + i})",
                    position=offset + i, token=str(token),
                )
            depth -= arity - 1
        else:
            raise MalformedRPNError(
                f"Framing token '{token}' inside an expression (position {offset + i})",
                position=offset + i, token=str(token),
            )
    if depth != 1:
        last = len(tokens) - 1
        raise MalformedRPNError(
            f"Segment leaves {depth} values on the stack (position {offset + last})",
            position=offset + last, token=str(tokens[last]),
        )


@dataclass(frozen=True)
class FeatureExpr:
    """One RPN expression; feature references and operators only."""

    rpn: Tuple[Token, ...]

    def __post_init__(self):
        object.__setattr__(self, 'rpn', tuple(self.rpn))
        validate_rpn(self.rpn)

    @property
    def feature_indices(self) -> List[int]:
        return [tok.payload for tok in self.rpn if tok.kind == TokenKind.FEATURE_REF]

    def __len__(self) -> int:
        return len(self.rpn)

    def __str__(self) -> str:
        return " ".join(str(tok) for tok in self.rpn)

    @classmethod
    def of_feature(cls, index: int) -> "FeatureExpr":
        return cls((Token.feature(index),))

    def compose(self, op: Operator, other: Optional["FeatureExpr"] = None) -> "FeatureExpr":
        """op(self) for unary operators, op(self, other) for binary ones."""
        if op.arity == Arity.BINARY:
            if other is None:
                raise MalformedRPNError(f"Binary operator '{op.symbol}' needs a second operand")
            return FeatureExpr(self.rpn + other.rpn + (Token.operator(op),))
        return FeatureExpr(self.rpn + (Token.operator(op),))


@dataclass(frozen=True)
class FeatureSetSequence:
    exprs: Tuple[FeatureExpr, ...]

    def __post_init__(self):
        object.__setattr__(self, 'exprs', tuple(self.exprs))
        if not self.exprs:
            raise FramingError("A feature set needs at least one expression")

    def __len__(self) -> int:
        return len(self.exprs)

    def __iter__(self):
        return iter(self.exprs)

    @property
    def max_feature_index(self) -> int:
        indices = [i for expr in self.exprs for i in expr.feature_indices]
        return max(indices)


def identity_sequence(n_features: int) -> FeatureSetSequence:
    """Passthrough of f0..f{K-1}."""
    return FeatureSetSequence(tuple(FeatureExpr.of_feature(i) for i in range(n_features)))


def _to_token(text: str, position: int, one_based: bool) -> Token:
    match = _FEATURE_PATTERN.match(text)
    if match:
        index = int(match.group(1))
        if one_based:
            if index == 0:
                raise VocabularyError(
                    f"Feature 'f0' is invalid with 1-based naming (position {position})",
                    position=position, token=text,
                )
            index -= 1
        return Token.feature(index)
    op = lookup_operator(text)
    if op is not None:
        return Token.operator(op)
    if text == SEP:
        return Token(TokenKind.SEP)
    if text == SOS:
        return Token(TokenKind.SOS)
    if text == EOS:
        return Token(TokenKind.EOS)
    raise VocabularyError(f"Unknown token '{text}' at position {position}", position=position, token=text)


def parse(token_string: str, one_based: bool = False,
          n_features: Optional[int] = None) -> FeatureSetSequence:
    """
    Parse a framed token string into a FeatureSetSequence.

    With one_based=True feature names f1..fK map to column indices 0..K-1.
    """
    texts = token_string.split()
    if not texts:
        raise FramingError("Empty token string")
    tokens = [_to_token(text, i, one_based) for i, text in enumerate(texts)]

    if tokens[0].kind != TokenKind.SOS:
        raise FramingError(f"Token string must start with {SOS}, found '{texts[0]}'")
    if tokens[-1].kind != TokenKind.EOS:
        raise FramingError(f"Token string must end with {EOS}, found '{texts[-1]}'")
    if len(tokens) < 3 or tokens[-2].kind != TokenKind.SEP:
        raise FramingError(f"Token string must end with {SEP} {EOS}")

    exprs = []
    segment: List[Token] = []
    start = 1
    for position in range(1, len(tokens) - 1):
        token = tokens[position]
        if token.kind in (TokenKind.SOS, TokenKind.EOS):
            raise FramingError(f"Unexpected '{texts[position]}' at position {position}")
        if token.kind == TokenKind.SEP:
            if not segment:
                raise FramingError(f"Empty segment before {SEP} at position {position}")
            validate_rpn(segment, offset=start)
            exprs.append(FeatureExpr(tuple(segment)))
            segment = []
            start = position + 1
        else:
            segment.append(token)

    sequence = FeatureSetSequence(tuple(exprs))
    if n_features is not None:
        check_references(sequence, n_features)
    return sequence


def serialize(seq: FeatureSetSequence) -> str:
    """Framed, single-space separated token string."""
    body = f" {SEP} ".join(str(expr) for expr in seq.exprs)
    return f"{SOS} {body} {SEP} {EOS}"


def check_references(seq: FeatureSetSequence, n_features: int) -> None:
    for expr in seq.exprs:
        for index in expr.feature_indices:
            if index >= n_features:
                raise FeatureReferenceError(
                    f"Feature f{index} out of range for {n_features} columns in '{expr}'"
                )


class EvaluationStats:
    """Counts cells replaced because evaluation produced inf or NaN."""

    def __init__(self):
        self.non_finite = 0

    def __repr__(self) -> str:
        return f"EvaluationStats(non_finite={self.non_finite})"


def evaluate(expr: FeatureExpr, matrix: np.ndarray,
             stats: Optional[EvaluationStats] = None) -> np.ndarray:
    """Columnwise stack evaluation of one expression; always returns finite values."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2:
        raise ValueError(f"Expected a 2-D matrix, got shape {matrix.shape}")
    n_cols = matrix.shape[1]

    stack: List[np.ndarray] = []
    with np.errstate(all='ignore'):
        for token in expr.rpn:
            if token.kind == TokenKind.FEATURE_REF:
                if token.payload >= n_cols:
                    raise FeatureReferenceError(
                        f"Feature f{token.payload} out of range for {n_cols} columns"
                    )
                stack.append(matrix[:, token.payload].copy())
            else:
                op = token.op
                if op.arity == Arity.BINARY:
                    right = stack.pop()
                    left = stack.pop()
                    stack.append(op.apply(left, right))
                else:
                    stack.append(op.apply(stack.pop()))
    result = np.asarray(stack.pop(), dtype=float)

    bad = ~np.isfinite(result)
    if bad.any():
        count = int(bad.sum())
        result[bad] = 0.0
        if stats is not None:
            stats.non_finite += count
        logger.debug(f"Replaced {count} non-finite values in '{expr}'")
    return result


def feature_names_for(seq: FeatureSetSequence) -> List[str]:
    """Segment strings; repeated segments get a '#k' suffix to stay unique."""
    seen = {}
    names = []
    for expr in seq.exprs:
        text = str(expr)
        seen[text] = seen.get(text, 0) + 1
        names.append(text if seen[text] == 1 else f"{text}#{seen[text]}")
    return names


def materialize(seq: FeatureSetSequence, d, stats: Optional[EvaluationStats] = None):
    """Apply every expression to d.matrix and return the transformed Dataset."""
    columns = [evaluate(expr, d.matrix, stats) for expr in seq.exprs]
    matrix = np.column_stack(columns)
    return d.with_matrix(matrix, feature_names_for(seq))


def repair(tokens: Union[str, Iterable[str]], n_features: int) -> Optional[FeatureSetSequence]:
    """
    Salvage a decoded token list.

    Leading <SOS> and everything after the first <EOS> are ignored, the rest is
    split on <SEP>, and only segments that stack-validate with in-range feature
    references survive. Returns None when nothing survives.
    """
    if isinstance(tokens, str):
        tokens = tokens.split()
    tokens = list(tokens)
    if tokens and tokens[0] == SOS:
        tokens = tokens[1:]
    if EOS in tokens:
        tokens = tokens[:tokens.index(EOS)]

    segments: List[List[str]] = [[]]
    for text in tokens:
        if text == SEP:
            segments.append([])
        else:
            segments[-1].append(text)

    kept = []
    dropped = 0
    for segment in segments:
        if not segment:
            continue
        try:
            parsed = [_to_token(text, i, one_based=False) for i, text in enumerate(segment)]
            expr = FeatureExpr(tuple(parsed))
            if any(index >= n_features for index in expr.feature_indices):
                raise FeatureReferenceError(f"Out-of-range reference in '{expr}'")
        except (VocabularyError, MalformedRPNError, FeatureReferenceError):
            dropped += 1
            continue
        kept.append(expr)

    if dropped:
        logger.debug(f"Repair dropped {dropped} invalid segments, kept {len(kept)}")
    if not kept:
        return None
    return FeatureSetSequence(tuple(kept))
