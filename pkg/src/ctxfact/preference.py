"""Preference-model expressions: parsing, validation, and enumeration.

A preference model is a sum of terms; each term multiplies the feature
vectors of two or more distinct dimensions elementwise. Expressions use
either single-letter aliases (``UI+USI``) or ``*``-separated dimension
names (``user*item+user*season*item``).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import ConfigError, ModelParseError, ModelValidationError

Term = tuple[str, ...]

DEFAULT_LETTERS = ("U", "I", "S", "Q")


@dataclass(frozen=True)
class PreferenceModel:
    """A validated list of Hadamard-product terms over dimension names.

    Terms keep the order they were written in; equality and hashing use a
    canonical form because elementwise products and sums commute.
    ``term_weights`` is reserved for per-term importance weights; training
    requires them to stay at 1.
    """

    terms: tuple[Term, ...]
    term_weights: tuple[float, ...] = ()

    def __post_init__(self):
        terms = tuple(tuple(t) for t in self.terms)
        object.__setattr__(self, "terms", terms)
        if not terms:
            raise ConfigError("a preference model needs at least one term")
        for term in terms:
            if len(term) < 2:
                raise ConfigError(f"term {'*'.join(term)!r} has fewer than two dimensions")
            if len(set(term)) != len(term):
                raise ConfigError(f"term {'*'.join(term)!r} repeats a dimension")
        canon = [tuple(sorted(t)) for t in terms]
        if len(set(canon)) != len(canon):
            raise ConfigError("duplicate terms in model")
        if not self.term_weights:
            object.__setattr__(self, "term_weights", (1.0,) * len(terms))
        elif len(self.term_weights) != len(terms):
            raise ConfigError("term_weights length must match the number of terms")

    def canonical(self) -> tuple[Term, ...]:
        return tuple(sorted((tuple(sorted(t)) for t in self.terms), key=lambda t: (len(t), t)))

    def dimension_set(self) -> frozenset[str]:
        return frozenset(d for t in self.terms for d in t)

    def __eq__(self, other) -> bool:
        return isinstance(other, PreferenceModel) and self.canonical() == other.canonical()

    def __hash__(self) -> int:
        return hash(self.canonical())

    def __str__(self) -> str:
        return render_model(self)


def default_aliases(
    dimension_names: Sequence[str], user_dim: str | None = None, item_dim: str | None = None
) -> dict[str, str]:
    """Single-letter alias table for up to four dimensions.

    U and I map to the user and item dimensions, S and Q to the remaining
    context dimensions in order; every dimension also maps to itself so
    the long form always works.
    """
    aliases: dict[str, str] = {}
    names = list(dimension_names)
    if user_dim is None:
        user_dim = names[0] if names else None
    if item_dim is None:
        item_dim = names[1] if len(names) > 1 else None
    rest = [n for n in names if n not in (user_dim, item_dim)]
    lettered = [user_dim, item_dim] + rest
    for letter, name in zip(DEFAULT_LETTERS, lettered):
        if name is not None:
            aliases[letter] = name
    for name in names:
        aliases.setdefault(name, name)
    return aliases


def parse_model(text: str, dimension_aliases: Mapping[str, str] | None = None) -> PreferenceModel:
    """Parse a ``+``-separated model expression into a PreferenceModel.

    Groups without ``*`` are read as single-letter aliases (``USI``);
    groups with ``*`` are split on it (``user*season*item``). When an
    alias table is given, every token must resolve through it.
    """
    if not text or not text.strip():
        raise ModelParseError("empty model expression")

    terms: list[Term] = []
    seen: set[tuple[str, ...]] = set()
    pos = 0
    for group in text.split("+"):
        group_start = pos
        pos += len(group) + 1
        stripped = group.strip()
        offset = group_start + (len(group) - len(group.lstrip()))
        if not stripped:
            raise ModelParseError("empty term", position=group_start)

        if "*" in stripped:
            tokens = []
            tok_pos = offset
            for part in stripped.split("*"):
                tokens.append((part.strip(), tok_pos))
                tok_pos += len(part) + 1
        else:
            tokens = [(ch, offset + i) for i, ch in enumerate(stripped)]

        dims: list[str] = []
        for token, tok_at in tokens:
            if not token:
                raise ModelParseError("empty dimension name", position=tok_at)
            if dimension_aliases is not None:
                if token not in dimension_aliases:
                    raise ModelParseError(f"unknown alias {token!r}", position=tok_at)
                name = dimension_aliases[token]
            else:
                name = token
            if name in dims:
                raise ModelParseError(
                    f"dimension {name!r} repeated within a term", position=tok_at
                )
            dims.append(name)
        if len(dims) < 2:
            raise ModelParseError(
                f"term {stripped!r} needs at least two dimensions", position=offset
            )
        key = tuple(sorted(dims))
        if key in seen:
            raise ModelParseError(f"duplicate term {stripped!r}", position=offset)
        seen.add(key)
        terms.append(tuple(dims))

    return PreferenceModel(tuple(terms))


def render_model(model: PreferenceModel, dimension_aliases: Mapping[str, str] | None = None) -> str:
    """Render a model back to expression text.

    A term is written in letter form when every dimension has a
    single-letter alias, otherwise in ``*``-separated long form.
    """
    reverse: dict[str, str] = {}
    if dimension_aliases:
        for alias, name in dimension_aliases.items():
            if len(alias) == 1 and (name not in reverse or alias < reverse[name]):
                reverse[name] = alias

    rendered = []
    for term in model.terms:
        letters = [reverse.get(d, d) for d in term]
        if all(len(x) == 1 for x in letters):
            rendered.append("".join(letters))
        else:
            rendered.append("*".join(term))
    return "+".join(rendered)


@dataclass(frozen=True)
class Diagnostic:
    """One validation finding; level is ``error`` or ``warning``."""

    level: str
    message: str


def validate_model(model: PreferenceModel, dataspace) -> list[Diagnostic]:
    """Check a model against a dataspace.

    Errors: a term references an unknown dimension, or a dataspace
    dimension appears in no term. Warning: the model omits the user or
    item dimension.
    """
    diags: list[Diagnostic] = []
    known = set(dataspace.names)
    used = model.dimension_set()
    for term in model.terms:
        for dim in term:
            if dim not in known:
                diags.append(
                    Diagnostic("error", f"term {'*'.join(term)} references unknown dimension {dim!r}")
                )
    for dim in dataspace.names:
        if dim not in used:
            diags.append(Diagnostic("error", f"dimension {dim!r} appears in no term"))
    if dataspace.user_dim not in used or dataspace.item_dim not in used:
        diags.append(Diagnostic("warning", "model does not use the user or item dimension"))
    return diags


def ensure_valid(model: PreferenceModel, dataspace) -> None:
    """Raise ModelValidationError if validation produced any errors."""
    diags = validate_model(model, dataspace)
    errors = [d for d in diags if d.level == "error"]
    if errors:
        raise ModelValidationError(
            "; ".join(d.message for d in errors), diagnostics=diags
        )


def model_complexity(model: PreferenceModel) -> int:
    """Number of vector operations to evaluate the model once.

    Each term of p dimensions costs p-1 elementwise products; summing q
    terms costs q-1 additions.
    """
    return sum(len(t) - 1 for t in model.terms) + (len(model.terms) - 1)


def possible_interactions(dimensions: Sequence[str]) -> list[Term]:
    """All subsets of two or more dimensions, in combination order."""
    dims = list(dimensions)
    out: list[Term] = []
    for size in range(2, len(dims) + 1):
        out.extend(itertools.combinations(dims, size))
    return out


def enumerate_models(
    dimensions: Sequence[str],
    max_terms: int | None = None,
    containing: Iterable[str] = (),
) -> Iterator[PreferenceModel]:
    """Yield every model whose terms form a non-empty interaction subset.

    ``containing`` restricts the output to models in which each of the
    given dimensions appears somewhere. Guarded to 2..5 dimensions; the
    model count is exponential in the interaction count.
    """
    dims = list(dimensions)
    if not 2 <= len(dims) <= 5:
        raise ConfigError("enumerate_models supports 2 to 5 dimensions")
    required = frozenset(containing)
    unknown = required - set(dims)
    if unknown:
        raise ConfigError(f"unknown dimension(s) in filter: {sorted(unknown)}")

    interactions = possible_interactions(dims)
    limit = len(interactions) if max_terms is None else min(max_terms, len(interactions))
    for n_terms in range(1, limit + 1):
        for combo in itertools.combinations(interactions, n_terms):
            model = PreferenceModel(tuple(combo))
            if required and not required <= model.dimension_set():
                continue
            yield model
