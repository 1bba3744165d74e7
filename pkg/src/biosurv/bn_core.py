"""Discrete Bayesian networks with exact inference.

Networks here are small (a couple of dozen nodes at most) but get queried
many thousands of times, so inference is variable elimination over numpy
factors with min-fill ordering, with barren-node pruning and a full
enumeration path for tiny residual problems.

Evidence maps a variable name to either a state label (hard evidence) or a
collection of labels (the variable is known to lie in that set).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Collection, Iterable, Mapping, Sequence, Union

import numpy as np

ROW_TOLERANCE = 1e-9
DEFAULT_ENUMERATION_THRESHOLD = 4

EvidenceValue = Union[str, Collection[str]]
EvidenceMap = Mapping[str, EvidenceValue]

_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


class NetworkError(ValueError):
    """Base class for network construction and inference errors."""


class CycleDetected(NetworkError):
    pass


class CardinalityMismatch(NetworkError):
    pass


class RowNotNormalized(NetworkError):
    pass


class UnknownVariable(NetworkError):
    pass


class UnknownState(NetworkError):
    pass


class ZeroEvidenceProbability(NetworkError):
    pass


class NetworkFormatError(NetworkError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class VariableSpec:
    name: str
    states: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        if not _IDENT.match(self.name):
            raise NetworkError(f"variable name {self.name!r} is not an identifier")
        if len(self.states) < 2:
            raise CardinalityMismatch(f"variable {self.name!r} needs at least two states")
        if len(set(self.states)) != len(self.states):
            raise NetworkError(f"variable {self.name!r} has duplicate state labels")
        for s in self.states:
            if not s or any(c.isspace() for c in s):
                raise NetworkError(f"state label {s!r} of {self.name!r} is empty or has whitespace")

    @property
    def card(self) -> int:
        return len(self.states)


@dataclass(frozen=True, eq=False)
class CptSpec:
    """One conditional probability table.

    ``table`` has one row per joint parent configuration, in row-major
    order over ``parents`` (last parent varies fastest), and one column per
    child state.
    """

    child: str
    parents: tuple[str, ...]
    table: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "parents", tuple(self.parents))
        object.__setattr__(self, "table", np.asarray(self.table, dtype=np.float64))


class Network:
    """A validated, immutable discrete Bayesian network.

    Build with :func:`build_network`. CPTs are held as arrays shaped
    ``(card(parent_1), ..., card(parent_k), card(child))``.
    """

    def __init__(self, variables: Sequence[VariableSpec], arrays: Mapping[str, np.ndarray],
                 parents: Mapping[str, tuple[str, ...]], topo: Sequence[str],
                 enumeration_threshold: int = DEFAULT_ENUMERATION_THRESHOLD):
        self._vars = {v.name: v for v in variables}
        self._order = tuple(v.name for v in variables)
        self._arrays = dict(arrays)
        self._parents = dict(parents)
        self._topo = tuple(topo)
        self._index = {v.name: {s: i for i, s in enumerate(v.states)} for v in variables}
        self._children: dict[str, list[str]] = {n: [] for n in self._order}
        for child, ps in self._parents.items():
            for p in ps:
                self._children[p].append(child)
        self.enumeration_threshold = enumeration_threshold
        # elimination orders keyed by problem shape; benign memo on an otherwise frozen object
        self._order_cache: dict = {}
        for a in self._arrays.values():
            a.setflags(write=False)

    def __repr__(self):
        return f"Network({len(self._order)} variables)"

    def __contains__(self, name: str) -> bool:
        return name in self._vars

    @property
    def names(self) -> tuple[str, ...]:
        return self._order

    @property
    def variables(self) -> list[VariableSpec]:
        return [self._vars[n] for n in self._order]

    @property
    def topological_order(self) -> tuple[str, ...]:
        return self._topo

    def variable(self, name: str) -> VariableSpec:
        try:
            return self._vars[name]
        except KeyError:
            raise UnknownVariable(f"unknown variable {name!r}") from None

    def states(self, name: str) -> tuple[str, ...]:
        return self.variable(name).states

    def card(self, name: str) -> int:
        return self.variable(name).card

    def state_index(self, name: str, state: str) -> int:
        idx = self._index.get(name)
        if idx is None:
            raise UnknownVariable(f"unknown variable {name!r}")
        try:
            return idx[state]
        except KeyError:
            raise UnknownState(f"variable {name!r} has no state {state!r}") from None

    def parents(self, name: str) -> tuple[str, ...]:
        self.variable(name)
        return self._parents[name]

    def children(self, name: str) -> tuple[str, ...]:
        self.variable(name)
        return tuple(self._children[name])

    def cpt(self, name: str) -> np.ndarray:
        """The CPT array of ``name`` (read-only), parents first, child last."""
        self.variable(name)
        return self._arrays[name]

    def cpt_spec(self, name: str) -> CptSpec:
        a = self.cpt(name)
        return CptSpec(name, self._parents[name], a.reshape(-1, a.shape[-1]))

    def ancestors(self, names: Iterable[str]) -> set[str]:
        """``names`` together with all their ancestors."""
        seen: set[str] = set()
        stack = list(names)
        while stack:
            n = stack.pop()
            if n in seen:
                continue
            self.variable(n)
            seen.add(n)
            stack.extend(self._parents[n])
        return seen


def build_network(variables: Sequence[VariableSpec], cpts: Sequence[CptSpec],
                  enumeration_threshold: int = DEFAULT_ENUMERATION_THRESHOLD) -> Network:
    """Validate variables and CPTs and assemble a :class:`Network`.

    Raises:
        CycleDetected: the parent lists do not form a DAG.
        CardinalityMismatch: a table has the wrong number of rows or columns.
        RowNotNormalized: a row has negative entries or does not sum to 1.
    """
    variables = list(variables)
    by_name: dict[str, VariableSpec] = {}
    for v in variables:
        if v.name in by_name:
            raise NetworkError(f"duplicate variable {v.name!r}")
        by_name[v.name] = v
    cpt_by_child: dict[str, CptSpec] = {}
    for c in cpts:
        if c.child not in by_name:
            raise UnknownVariable(f"CPT for unknown variable {c.child!r}")
        if c.child in cpt_by_child:
            raise NetworkError(f"more than one CPT for {c.child!r}")
        cpt_by_child[c.child] = c
    missing = [n for n in by_name if n not in cpt_by_child]
    if missing:
        raise NetworkError(f"no CPT for {missing}")

    arrays: dict[str, np.ndarray] = {}
    parents: dict[str, tuple[str, ...]] = {}
    for name, c in cpt_by_child.items():
        for p in c.parents:
            if p not in by_name:
                raise UnknownVariable(f"{name!r} has unknown parent {p!r}")
        if len(set(c.parents)) != len(c.parents) or name in c.parents:
            raise NetworkError(f"{name!r} has a repeated or self parent")
        pcards = [by_name[p].card for p in c.parents]
        n_rows = int(np.prod(pcards, dtype=np.int64)) if pcards else 1
        t = c.table
        if t.ndim == 1 and not pcards:
            t = t.reshape(1, -1)
        if t.ndim != 2 or t.shape != (n_rows, by_name[name].card):
            raise CardinalityMismatch(
                f"CPT of {name!r} has shape {t.shape}, expected ({n_rows}, {by_name[name].card})")
        _check_rows(name, c.parents, pcards, t, by_name)
        arrays[name] = np.array(t.reshape(*pcards, by_name[name].card), dtype=np.float64)
        parents[name] = c.parents

    topo = _topological_sort([v.name for v in variables], parents)
    return Network(variables, arrays, parents, topo, enumeration_threshold)


def _check_rows(name, parent_names, pcards, table, by_name):
    bad = (table < 0) | (table > 1) | ~np.isfinite(table)
    sums = table.sum(axis=1)
    off = np.abs(sums - 1.0) > ROW_TOLERANCE
    rows = np.flatnonzero(bad.any(axis=1) | off)
    if rows.size:
        r = int(rows[0])
        cfg = np.unravel_index(r, pcards) if pcards else ()
        desc = ", ".join(f"{p}={by_name[p].states[i]}" for p, i in zip(parent_names, cfg))
        raise RowNotNormalized(
            f"CPT of {name!r}, row {r} ({desc or 'prior'}): {table[r].tolist()} sums to {sums[r]!r}")


def _topological_sort(names: list[str], parents: Mapping[str, tuple[str, ...]]) -> list[str]:
    indeg = {n: len(parents[n]) for n in names}
    children: dict[str, list[str]] = {n: [] for n in names}
    for n in names:
        for p in parents[n]:
            children[p].append(n)
    ready = [n for n in names if indeg[n] == 0]
    out = []
    while ready:
        n = ready.pop(0)
        out.append(n)
        for c in children[n]:
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
    if len(out) != len(names):
        cyc = sorted(n for n in names if indeg[n] > 0)
        raise CycleDetected(f"parent structure has a cycle through {cyc}")
    return out


# --------------------------------------------------------------------------
# inference

def normalize_evidence(net: Network, evidence: EvidenceMap | None
                       ) -> tuple[dict[str, int], dict[str, np.ndarray]]:
    """Split evidence into hard (state index) and set-valued (0/1 mask) parts."""
    hard: dict[str, int] = {}
    soft: dict[str, np.ndarray] = {}
    for var, val in (evidence or {}).items():
        if isinstance(val, str):
            hard[var] = net.state_index(var, val)
        else:
            mask = np.zeros(net.card(var))
            for s in val:
                mask[net.state_index(var, s)] = 1.0
            soft[var] = mask
    return hard, soft


def _reduce(scope: tuple[str, ...], arr: np.ndarray, hard: Mapping[str, int],
            soft: Mapping[str, np.ndarray]):
    if not any(v in hard or v in soft for v in scope):
        return scope, arr
    index = []
    new_scope = []
    for ax, v in enumerate(scope):
        if v in hard:
            index.append(hard[v])
        else:
            index.append(slice(None))
            new_scope.append(v)
    arr = arr[tuple(index)]
    for ax, v in enumerate(new_scope):
        if v in soft:
            shape = [1] * len(new_scope)
            shape[ax] = -1
            arr = arr * soft[v].reshape(shape)
    return tuple(new_scope), arr


def _einsum(factors, out_scope):
    labels: dict[str, int] = {}
    args = []
    for scope, arr in factors:
        args.append(arr)
        args.append([labels.setdefault(v, len(labels)) for v in scope])
    for v in out_scope:
        labels.setdefault(v, len(labels))
    args.append([labels[v] for v in out_scope])
    return np.einsum(*args)


def min_fill_order(scopes: Iterable[Iterable[str]], eliminate: Iterable[str]) -> list[str]:
    """Greedy min-fill elimination order, ties broken by variable name."""
    adj: dict[str, set[str]] = {}
    for scope in scopes:
        scope = list(scope)
        for v in scope:
            adj.setdefault(v, set()).update(u for u in scope if u != v)
    todo = set(eliminate)
    for v in todo:
        adj.setdefault(v, set())
    order = []
    while todo:
        best, best_fill = None, None
        for v in sorted(todo):
            nb = list(adj[v])
            fill = 0
            for i in range(len(nb)):
                ai = adj[nb[i]]
                for j in range(i + 1, len(nb)):
                    if nb[j] not in ai:
                        fill += 1
            if best_fill is None or fill < best_fill:
                best, best_fill = v, fill
                if fill == 0:
                    break
        nb = adj.pop(best)
        for u in nb:
            adj[u].discard(best)
            adj[u].update(w for w in nb if w != u)
        todo.discard(best)
        order.append(best)
    return order


def joint_factor(net: Network, evidence: EvidenceMap | None = None, keep: Sequence[str] = (),
                 drop: Collection[str] = (), order: str | Sequence[str] = "min_fill") -> np.ndarray:
    """Sum of the product of CPTs over every variable not in ``keep``.

    Returns an array with one axis per ``keep`` variable (in that order)
    whose entries are ``P(keep = k, evidence)``. Variables in ``drop`` have
    their own CPT left out of the product; when they are root nodes this
    conditions on them, giving ``P(evidence, keep=k | drop)``.

    ``order`` is ``"min_fill"``, ``"reverse_topological"``,
    ``"enumeration"`` or an explicit elimination sequence.
    """
    keep = tuple(keep)
    for v in keep:
        net.variable(v)
    for v in drop:
        net.variable(v)
    hard, soft = normalize_evidence(net, evidence)
    # a kept variable with hard evidence keeps its axis, zero off the observed state
    for v in keep:
        if v in hard:
            mask = np.zeros(net.card(v))
            mask[hard.pop(v)] = 1.0
            soft[v] = soft[v] * mask if v in soft else mask

    relevant = net.ancestors(list(hard) + list(soft) + list(keep))
    factors = []
    for name in net.topological_order:
        if name not in relevant or name in drop:
            continue
        scope = net.parents(name) + (name,)
        factors.append(_reduce(scope, net.cpt(name), hard, soft))
    # set evidence on a dropped variable still needs its indicator
    for v in drop:
        if v in soft and v in relevant:
            factors.append(((v,), soft[v]))

    present = set()
    for scope, _ in factors:
        present.update(scope)
    to_eliminate = present - set(keep)

    if isinstance(order, str) and order == "enumeration" or (
            isinstance(order, str) and order == "min_fill"
            and len(to_eliminate) + len(keep) <= net.enumeration_threshold):
        result_scope = tuple(v for v in keep if v in present)
        result = _einsum(factors, result_scope) if factors else np.float64(1.0)
    else:
        if isinstance(order, str):
            if order == "min_fill":
                key = (tuple(sorted(hard)), tuple(sorted(soft)), keep, tuple(sorted(drop)))
                elim = net._order_cache.get(key)
                if elim is None:
                    elim = min_fill_order([s for s, _ in factors], to_eliminate)
                    net._order_cache[key] = elim
            elif order == "reverse_topological":
                elim = [v for v in reversed(net.topological_order) if v in to_eliminate]
            else:
                raise ValueError(f"unknown elimination order {order!r}")
        else:
            elim = [v for v in order if v in to_eliminate]
            if set(elim) != to_eliminate:
                raise ValueError("explicit elimination order does not cover all variables")
        for v in elim:
            involved = [f for f in factors if v in f[0]]
            if not involved:
                continue
            rest = [f for f in factors if v not in f[0]]
            out_scope = []
            for scope, _ in involved:
                for u in scope:
                    if u != v and u not in out_scope:
                        out_scope.append(u)
            out_scope = tuple(out_scope)
            rest.append((out_scope, _einsum(involved, out_scope)))
            factors = rest
        result_scope = tuple(v for v in keep if v in present)
        result = _einsum(factors, result_scope) if factors else np.float64(1.0)

    result = np.asarray(result, dtype=np.float64)
    if len(result_scope) != len(keep):
        # kept variables that touch no factor are constant along their axis
        shape = [net.card(v) if v in present else 1 for v in keep]
        perm = [result_scope.index(v) for v in keep if v in present]
        result = np.transpose(result, perm).reshape(shape) if perm else result.reshape(shape)
        full = [net.card(v) for v in keep]
        result = np.broadcast_to(result, full).copy()
        for ax, v in enumerate(keep):
            if v not in present and v in soft:
                sh = [1] * len(keep)
                sh[ax] = -1
                result = result * soft[v].reshape(sh)
    return result


def evidence_probability(net: Network, evidence: EvidenceMap | None = None,
                         order: str | Sequence[str] = "min_fill") -> float:
    """P(evidence), summing the joint over every unobserved variable."""
    return float(joint_factor(net, evidence, order=order))


def posterior_marginal(net: Network, evidence: EvidenceMap | None, target: str) -> dict[str, float]:
    """Posterior distribution of ``target`` given ``evidence``.

    Raises:
        ZeroEvidenceProbability: the evidence is impossible under the model.
    """
    f = joint_factor(net, evidence, keep=(target,))
    z = f.sum()
    if not z > 0:
        raise ZeroEvidenceProbability(f"evidence has probability 0 (querying {target!r})")
    return dict(zip(net.states(target), (f / z).tolist()))


def conditional_joint(net: Network, evidence: EvidenceMap | None, targets: Sequence[str]) -> np.ndarray:
    """Normalized joint posterior of ``targets``, one axis per target."""
    f = joint_factor(net, evidence, keep=tuple(targets))
    z = f.sum()
    if not z > 0:
        raise ZeroEvidenceProbability("evidence has probability 0")
    return f / z


def _rng(rng_seed) -> np.random.Generator:
    if isinstance(rng_seed, np.random.Generator):
        return rng_seed
    return np.random.default_rng(rng_seed)


def sample_conditional(net: Network, evidence: EvidenceMap | None, targets: Sequence[str],
                       rng_seed=None) -> dict[str, str]:
    """Draw one joint assignment of ``targets`` from P(targets | evidence).

    Targets are drawn one at a time, each from its posterior marginal given
    the evidence plus the targets already drawn. ``rng_seed`` is a seed or
    a ``numpy.random.Generator``.
    """
    rng = _rng(rng_seed)
    current = dict(evidence or {})
    out = {}
    for t in targets:
        dist = posterior_marginal(net, current, t)
        states = list(dist)
        p = np.fromiter(dist.values(), dtype=np.float64)
        s = states[int(rng.choice(len(states), p=p / p.sum()))]
        out[t] = s
        current[t] = s
    return out


# --------------------------------------------------------------------------
# parameter file format
#
#   # comment
#   variable <name>
#   states <s1> <s2> ...
#   parents [<p1> <p2> ...]
#   row <p> <p> ...          one per parent configuration, last parent fastest
#   end

def serialize_network(net: Network) -> str:
    lines = []
    for v in net.variables:
        lines.append(f"variable {v.name}")
        lines.append("states " + " ".join(v.states))
        ps = net.parents(v.name)
        lines.append("parents" + ("".join(" " + p for p in ps)))
        arr = net.cpt(v.name)
        for row in arr.reshape(-1, arr.shape[-1]):
            lines.append("row " + " ".join(repr(float(x)) for x in row))
        lines.append("end")
    return "\n".join(lines) + "\n"


def parse_network(text: str, enumeration_threshold: int = DEFAULT_ENUMERATION_THRESHOLD) -> Network:
    specs: list[tuple[VariableSpec, tuple[str, ...], list[list[float]]]] = []
    cur: dict | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        head, _, rest = line.partition(" ")
        toks = rest.split()
        if head == "variable":
            if cur is not None:
                raise NetworkFormatError("'variable' before 'end'", lineno)
            if len(toks) != 1:
                raise NetworkFormatError("expected 'variable <name>'", lineno)
            cur = {"name": toks[0], "states": None, "parents": None, "rows": [], "line": lineno}
        elif cur is None:
            raise NetworkFormatError(f"{head!r} outside a variable section", lineno)
        elif head == "states":
            cur["states"] = tuple(toks)
        elif head == "parents":
            cur["parents"] = tuple(toks)
        elif head == "row":
            try:
                cur["rows"].append([float(t) for t in toks])
            except ValueError:
                raise NetworkFormatError("non-numeric probability", lineno) from None
        elif head == "end":
            if cur["states"] is None or cur["parents"] is None:
                raise NetworkFormatError(f"variable {cur['name']!r} lacks states or parents", lineno)
            try:
                spec = VariableSpec(cur["name"], cur["states"])
            except NetworkError as exc:
                raise NetworkFormatError(str(exc), cur["line"]) from None
            specs.append((spec, cur["parents"], cur["rows"]))
            cur = None
        else:
            raise NetworkFormatError(f"unknown keyword {head!r}", lineno)
    if cur is not None:
        raise NetworkFormatError(f"variable {cur['name']!r} not terminated by 'end'")
    variables = [s for s, _, _ in specs]
    cpts = []
    for spec, parents, rows in specs:
        width = {len(r) for r in rows}
        if len(width) > 1:
            raise CardinalityMismatch(f"ragged CPT rows for {spec.name!r}")
        cpts.append(CptSpec(spec.name, parents, np.array(rows, dtype=np.float64).reshape(len(rows), -1)))
    return build_network(variables, cpts, enumeration_threshold)


def read_network(path) -> Network:
    with open(path, encoding="utf-8") as fh:
        return parse_network(fh.read())


def write_network(net: Network, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_network(net))
