"""Power low-rank ensembles: the smoothing engine.

A model of order n keeps one *level* per order n, n-1, ..., 2 plus a unigram
base distribution.  The level of order k owns an adjusted count table
c̃_k — raw counts at the top order, and at every lower order the number of
distinct one-word-older extensions in the adjusted table one order above —
and a chain of element-wise powers 1 = rho_0 > rho_1 > ... > rho_eta > 0.
Each step j of the chain discounts the powered counts c̃^rho_j by
d* * c̃^rho_{j+1} and hands the removed mass to the next step through

    gamma_j(h) = d* * sum_w c̃(w,h)^rho_{j+1} / sum_w c̃(w,h)^rho_j ,

which makes the per-context identity

    c̃^rho_j / S_j(h)  =  (c̃^rho_j - d* c̃^rho_{j+1}) / S_j(h)
                          + gamma_j(h) * c̃^rho_{j+1} / S_{j+1}(h)

hold exactly.  The j = 0 term stays sparse; each intermediate term is
factorized per slice at low rank (conditional lookups then cost one
L-row . R-column inner product); after the last step the gamma product
hands off to the level one order lower.  Querying walks the levels top-down
and ends at the base distribution.

Two facts make the whole ensemble preserve the observed lower-order
marginals: the factorization preserves per-slice row sums (exactly for the
closed-form rank-1 and full-rank paths, to reported tolerance for iterative
NMF), and the adjusted tables are derived recursively from support, so the
discounted mass a level releases is exactly the mass the next level's table
normalizes over.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .baselines import (
    count_of_counts,
    good_turing_discount,
    make_base_distribution,
)
from .corpus import CountTable, Key, Vocabulary, adjusted_tables
from .errors import ConfigError, FactorizationError
from .factorization import (
    ConvergenceReport,
    FactorPair,
    SparseMatrix,
    nmf_gkl,
    sum_residual,
)


class OpCounter:
    """Counts multiply-adds spent in low-rank lookups (query-cost probe)."""

    __slots__ = ("muladds",)

    def __init__(self):
        self.muladds = 0


class PoweredCounts:
    """Element-wise power of a count table over its sparse support.

    Zeros stay absent for every power (0^rho := 0, including rho = 0), so a
    power-0 table is the binary support pattern and its context sums are the
    distinct-continuation counts N+.
    """

    __slots__ = ("order", "power", "entries", "context_sums", "source")

    def __init__(self, source: CountTable, power: float):
        if not 0.0 <= power <= 1.0:
            raise ValueError(f"power must be in [0, 1], got {power}")
        self.source = source
        self.order = source.order
        self.power = power
        if power == 1.0:
            self.entries = {key: float(c) for key, c in source.entries.items()}
        elif power == 0.0:
            self.entries = {key: 1.0 for key in source.entries}
        else:
            self.entries = {key: c**power for key, c in source.entries.items()}
        sums: Dict[Key, float] = {}
        for key, v in self.entries.items():
            h = key[1:]
            sums[h] = sums.get(h, 0.0) + v
        self.context_sums = sums


def power_counts(table: CountTable, power: float) -> PoweredCounts:
    return PoweredCounts(table, power)


@dataclass
class DiscountSpec:
    """Discount step j of a level's power chain.

    The implied discount for an entry with count c is d* * c^next_power;
    gamma maps every observed context to the fraction of this step's powered
    mass handed to the next step.
    """

    level: int
    power: float
    next_power: float
    dstar: float
    gamma: Dict[Key, float]

    def discount(self, count: int) -> float:
        return self.dstar * count**self.next_power


def compute_discounts(
    base: PoweredCounts, next_power: float, dstar: float, level: int = 0
) -> DiscountSpec:
    """Discounts and gammas for one chain step (powered counts at rho_j in,
    target power rho_{j+1})."""
    if not 0.0 <= next_power <= base.power:
        raise ValueError(
            f"next power {next_power} must lie in [0, {base.power}] (descending chain)"
        )
    if not 0.0 <= dstar <= 1.0:
        raise ValueError(f"d* must be in [0, 1], got {dstar}")
    next_sums: Dict[Key, float] = {}
    for key, c in base.source.entries.items():
        h = key[1:]
        next_sums[h] = next_sums.get(h, 0.0) + float(c) ** next_power
    gamma = {
        h: dstar * next_sums[h] / s for h, s in base.context_sums.items()
    }
    return DiscountSpec(level, base.power, next_power, dstar, gamma)


@dataclass
class SliceFactors:
    """Factorized compacted slice plus the id maps to re-expand on query."""

    pair: FactorPair
    row_ids: np.ndarray
    col_ids: np.ndarray
    row_index: Dict[int, int]
    col_index: Dict[int, int]
    report: Optional[ConvergenceReport]


class LowRankCPT:
    """Discounted low-rank conditional probability table for one chain step.

    Slices are keyed by the interior context (everything between the
    predicted word and the oldest context word; empty for order 2).  A
    conditional lookup finds the slice, takes one L-row . R-column inner
    product, and divides by the precomputed powered context sum.
    """

    __slots__ = ("order", "power", "rank", "slices", "denominators")

    def __init__(
        self,
        order: int,
        power: float,
        rank: int,
        slices: Dict[Key, SliceFactors],
        denominators: Dict[Key, float],
    ):
        self.order = order
        self.power = power
        self.rank = rank
        self.slices = slices
        self.denominators = denominators

    def cond(self, w: int, context: Key, counter: Optional[OpCounter] = None) -> float:
        denom = self.denominators.get(context)
        if denom is None:
            return 0.0
        sl = self.slices.get(context[:-1])
        if sl is None:
            return 0.0
        i = sl.row_index.get(w)
        j = sl.col_index.get(context[-1])
        if i is None or j is None:
            return 0.0
        if counter is not None:
            counter.muladds += sl.pair.rank
        return float(sl.pair.L[i] @ sl.pair.R[:, j]) / denom

    def lookup_rank(self, w: int, context: Key) -> int:
        """Multiply-adds a cond() call with these arguments will spend."""
        if context not in self.denominators:
            return 0
        sl = self.slices.get(context[:-1])
        if sl is None or w not in sl.row_index or context[-1] not in sl.col_index:
            return 0
        return sl.pair.rank

    def add_column(self, context: Key, vec: np.ndarray, weight: float) -> None:
        """vec += weight * Z(.|context) over the vocabulary, vectorized."""
        denom = self.denominators.get(context)
        if denom is None:
            return
        sl = self.slices.get(context[:-1])
        if sl is None:
            return
        j = sl.col_index.get(context[-1])
        if j is None:
            return
        vec[sl.row_ids] += (weight / denom) * (sl.pair.L @ sl.pair.R[:, j])


def _factor_slice(
    entries: Dict[Tuple[int, int], float],
    rank: int,
    max_iters: int,
    rel_tol: float,
    eps: float,
    seed: np.random.SeedSequence,
) -> SliceFactors:
    row_ids = sorted({w for w, _ in entries})
    col_ids = sorted({x for _, x in entries})
    row_index = {w: i for i, w in enumerate(row_ids)}
    col_index = {x: j for j, x in enumerate(col_ids)}
    M = SparseMatrix(
        len(row_ids),
        len(col_ids),
        {(row_index[w], col_index[x]): v for (w, x), v in entries.items()},
    )
    small = min(M.rows, M.cols)
    if rank >= small > 1:
        # Requested rank covers the slice: reproduce it exactly instead of
        # iterating toward it.  Identity on the smaller side keeps the
        # stored rank at min(rows, cols).
        if M.rows <= M.cols:
            pair = FactorPair(np.eye(M.rows), M.to_dense())
        else:
            pair = FactorPair(M.to_dense(), np.eye(M.cols))
        row_res, col_res = sum_residual(M, pair)
        report = ConvergenceReport(
            iterations=0,
            final_gkl=0.0,
            max_row_residual=row_res,
            max_col_residual=col_res,
            rank=small,
            converged=True,
            objective_history=[0.0],
        )
    else:
        pair, report = nmf_gkl(
            M, rank, max_iters=max_iters, rel_tol=rel_tol, eps=eps, seed=seed
        )
    return SliceFactors(
        pair,
        np.asarray(row_ids, dtype=np.int64),
        np.asarray(col_ids, dtype=np.int64),
        row_index,
        col_index,
        report,
    )


def compute_z(
    base: PoweredCounts,
    spec: DiscountSpec,
    rank: int,
    max_iters: int = 200,
    rel_tol: float = 1e-6,
    eps: float = 1e-12,
    seed: int = 0,
    threads: int = 1,
) -> LowRankCPT:
    """Factorize the discounted powered counts into a LowRankCPT.

    Each interior-context slice (predicted word x oldest context word) is
    compacted to its nonzero rows/columns and factorized at
    min(rank, slice dims); conditional queries divide by the undiscounted
    powered context sums, so column-sum preservation of the factorization
    is exactly what keeps each level's terms summing to gamma-complementary
    mass.  Slices whose entries are all discounted away are skipped (their
    contexts then contribute only through gamma).  Deterministic for a
    given seed, regardless of thread count.
    """
    if rank < 1:
        raise ConfigError(f"rank must be >= 1, got {rank}")
    if base.order < 2:
        raise ValueError("low-rank tables need order >= 2")
    slice_entries: Dict[Key, Dict[Tuple[int, int], float]] = {}
    for key, powered in base.entries.items():
        v = powered - spec.discount(base.source.entries[key])
        if v < -1e-9 * max(1.0, powered):
            raise FactorizationError(
                f"negative discounted count {v} at {key}: discount bound broken"
            )
        if v <= 0.0:
            continue
        slice_entries.setdefault(key[1:-1], {})[(key[0], key[-1])] = v

    interiors = sorted(slice_entries)

    def task(item: Tuple[int, Key]) -> Tuple[Key, SliceFactors]:
        idx, interior = item
        seq = np.random.SeedSequence(
            entropy=seed, spawn_key=(base.order, spec.level, idx)
        )
        return interior, _factor_slice(
            slice_entries[interior], rank, max_iters, rel_tol, eps, seq
        )

    if threads > 1 and len(interiors) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(task, enumerate(interiors)))
    else:
        results = [task(item) for item in enumerate(interiors)]
    return LowRankCPT(
        base.order, base.power, rank, dict(results), dict(base.context_sums)
    )


def derive_dstar(d_gt: float, eta: int) -> float:
    """(eta+1)-th root of a discount: the chain of eta+1 steps then hands
    off exactly d_gt-worth of mass, matching a single-discount smoother."""
    if not 0.0 < d_gt < 1.0:
        raise ValueError(f"discount must be in (0, 1), got {d_gt}")
    if eta < 0:
        raise ValueError(f"eta must be >= 0, got {eta}")
    return d_gt ** (1.0 / (eta + 1))


class PlreLevel:
    """One order's stack: sparse top term, low-rank middles, gamma chain."""

    __slots__ = (
        "order",
        "dstar",
        "powers",
        "counts",
        "context_totals",
        "top_numerators",
        "gammas",
        "z_tables",
        "_top_by_context",
        "_nplus",
    )

    def __init__(
        self,
        order: int,
        dstar: float,
        powers: Tuple[float, ...],
        counts: Dict[Key, int],
        context_totals: Dict[Key, int],
        top_numerators: Dict[Key, float],
        gammas: List[Dict[Key, float]],
        z_tables: List[LowRankCPT],
    ):
        if len(gammas) != len(powers) + 1 or len(z_tables) != len(powers):
            raise ValueError("gamma/z tables inconsistent with power chain")
        self.order = order
        self.dstar = dstar
        self.powers = powers
        self.counts = counts
        self.context_totals = context_totals
        self.top_numerators = top_numerators
        self.gammas = gammas
        self.z_tables = z_tables
        self._top_by_context = None
        self._nplus = None

    @property
    def eta(self) -> int:
        return len(self.powers)

    def eval(
        self, w: int, context: Key, counter: Optional[OpCounter] = None
    ) -> Tuple[float, float]:
        """(level value, gamma hand-off) for one word.

        A context missing from this level's table contributes nothing and
        hands off with multiplier 1 (fall through to the shorter history).
        """
        total = self.context_totals.get(context)
        if not total:
            return 0.0, 1.0
        value = self.top_numerators.get((w,) + context, 0.0) / total
        g = self.gammas[0][context]
        for j, z in enumerate(self.z_tables):
            value += g * z.cond(w, context, counter)
            g *= self.gammas[j + 1][context]
        return value, g

    def eval_dist(self, context: Key, vsize: int) -> Tuple[Optional[np.ndarray], float]:
        """Vectorized eval over the whole vocabulary."""
        total = self.context_totals.get(context)
        if not total:
            return None, 1.0
        vec = np.zeros(vsize)
        for w, num in self.top_by_context().get(context, ()):
            vec[w] += num / total
        g = self.gammas[0][context]
        for j, z in enumerate(self.z_tables):
            z.add_column(context, vec, g)
            g *= self.gammas[j + 1][context]
        return vec, g

    def top_by_context(self) -> Dict[Key, List[Tuple[int, float]]]:
        if self._top_by_context is None:
            grouped: Dict[Key, List[Tuple[int, float]]] = {}
            for key, num in self.top_numerators.items():
                grouped.setdefault(key[1:], []).append((key[0], num))
            self._top_by_context = grouped
        return self._top_by_context

    def nplus(self) -> Dict[Key, int]:
        """Distinct-continuation counts per context of this level's table."""
        if self._nplus is None:
            np_: Dict[Key, int] = {}
            for key in self.counts:
                h = key[1:]
                np_[h] = np_.get(h, 0) + 1
            self._nplus = np_
        return self._nplus

    def gamma_product(self, context: Key) -> float:
        g = 1.0
        for table in self.gammas:
            g *= table[context]
        return g


class PlreModel:
    """Assembled ensemble: levels for orders n..2 plus the unigram base."""

    def __init__(
        self,
        vocab: Vocabulary,
        order: int,
        levels: Dict[int, PlreLevel],
        base_counts: np.ndarray,
        dstars: Dict[int, float],
        resolved_ranks: Dict[int, Tuple[int, ...]],
        seed: int,
        warnings: Optional[List[str]] = None,
    ):
        self.vocab = vocab
        self.order = order
        self.levels = levels
        self.base_counts = np.asarray(base_counts, dtype=np.int64)
        self.base = make_base_distribution(self.base_counts)
        self.dstars = dstars
        self.resolved_ranks = resolved_ranks
        self.seed = seed
        self.warnings = warnings or []
        self.smoother = "plre"

    def prob(
        self, w: int, context: Sequence[int] = (), counter: Optional[OpCounter] = None
    ) -> float:
        """P(w | context), context most-recent-first, truncated to order-1."""
        ctx = tuple(context)[: self.order - 1]
        acc = 0.0
        mult = 1.0
        for k in range(len(ctx) + 1, 1, -1):
            value, g = self.levels[k].eval(w, ctx[: k - 1], counter)
            acc += mult * value
            mult *= g
        return acc + mult * float(self.base[w])

    def dist(self, context: Sequence[int] = ()) -> np.ndarray:
        """Conditional distribution over the whole vocabulary."""
        ctx = tuple(context)[: self.order - 1]
        vsize = len(self.vocab)
        acc = np.zeros(vsize)
        mult = 1.0
        for k in range(len(ctx) + 1, 1, -1):
            vec, g = self.levels[k].eval_dist(ctx[: k - 1], vsize)
            if vec is not None:
                acc += mult * vec
            mult *= g
        return acc + mult * self.base

    def query_cost(self, w: int, context: Sequence[int]) -> int:
        """Multiply-adds a prob() call will spend in low-rank lookups."""
        ctx = tuple(context)[: self.order - 1]
        cost = 0
        for k in range(len(ctx) + 1, 1, -1):
            level = self.levels[k]
            h = ctx[: k - 1]
            if not level.context_totals.get(h):
                continue
            for z in level.z_tables:
                cost += z.lookup_rank(w, h)
        return cost

    def check_discount_bounds(self) -> float:
        """Max violation of 0 <= D_j(w,h) <= c̃(w,h)^rho_j over everything."""
        worst = 0.0
        for level in self.levels.values():
            counts = np.fromiter(level.counts.values(), dtype=np.float64)
            chain = (1.0,) + level.powers + (0.0,)
            for j in range(len(chain) - 1):
                d = level.dstar * counts ** chain[j + 1]
                excess = float(np.max(d - counts ** chain[j], initial=0.0))
                worst = max(worst, excess, float(np.max(-d, initial=0.0)))
        return worst

    def check_local_constraints(self) -> float:
        """Max violation of the per-entry discount identity across all levels.

        For every entry, chain step j must satisfy
        c^rho_j/S_j(h) = (c^rho_j - D_j)/S_j(h) + gamma_j(h) * c^rho_{j+1}/S_{j+1}(h),
        where the powered context sums S are recomputed here from the raw
        level counts rather than read from the model.
        """
        worst = 0.0
        for level in self.levels.values():
            chain = (1.0,) + level.powers + (0.0,)
            sums: List[Dict[Key, float]] = []
            for rho in chain:
                s: Dict[Key, float] = {}
                for key, c in level.counts.items():
                    h = key[1:]
                    s[h] = s.get(h, 0.0) + float(c) ** rho
                sums.append(s)
            for key, c in level.counts.items():
                h = key[1:]
                for j in range(len(chain) - 1):
                    cj = float(c) ** chain[j]
                    cn = float(c) ** chain[j + 1]
                    lhs = cj / sums[j][h]
                    rhs = (cj - level.dstar * cn) / sums[j][h] + level.gammas[j][
                        h
                    ] * cn / sums[j + 1][h]
                    worst = max(worst, abs(lhs - rhs))
        return worst

    def check_gamma_closed_form(self) -> float:
        """Max deviation of each level's gamma product from
        d*^(eta+1) * N+(h) / c̃(h) over all observed contexts."""
        worst = 0.0
        for level in self.levels.values():
            scale = level.dstar ** (level.eta + 1)
            nplus = level.nplus()
            for h, total in level.context_totals.items():
                expected = scale * nplus[h] / total
                worst = max(worst, abs(level.gamma_product(h) - expected))
        return worst

    def convergence_reports(self) -> List[ConvergenceReport]:
        """All per-slice factorization reports (empty for loaded models)."""
        reports = []
        for level in self.levels.values():
            for z in level.z_tables:
                for sl in z.slices.values():
                    if sl.report is not None:
                        reports.append(sl.report)
        return reports


def _resolve_rank(value: Union[int, float], vsize: int) -> Tuple[int, Optional[str]]:
    """Absolute rank, or a vocabulary fraction resolved as ceil(f*V)."""
    if isinstance(value, float) and 0.0 < value < 1.0:
        return max(1, math.ceil(value * vsize)), None
    rank = int(value)
    if rank < 1:
        raise ConfigError(f"rank must be positive or a fraction in (0,1): {value}")
    if rank > vsize:
        return vsize, f"rank {rank} clamped to vocabulary size {vsize}"
    return rank, None


def default_powers(order: int) -> Dict[int, Tuple[float, ...]]:
    """One intermediate power 0.5 per order, except none at orders >= 4
    (the low-rank 4-gram term buys little and costs the most)."""
    return {k: ((0.5,) if k <= 3 else ()) for k in range(2, order + 1)}


def build_plre(
    tables: Union[CountTable, Mapping[int, CountTable]],
    vocab: Vocabulary,
    powers: Optional[Dict[int, Tuple[float, ...]]] = None,
    ranks: Optional[Dict[int, Tuple[Union[int, float], ...]]] = None,
    dstar: Union[str, float] = "gt-root",
    nmf_max_iters: int = 200,
    nmf_rel_tol: float = 1e-6,
    nmf_eps: float = 1e-12,
    seed: int = 0,
    threads: int = 1,
) -> PlreModel:
    """Build a PLRE model from the top-order raw count table.

    ``powers[k]`` is the tuple of intermediate powers for the order-k level
    (strictly descending, all in (0,1) exclusive; empty for a pure
    sparse-plus-handoff level); ``ranks[k]`` gives one rank per intermediate
    power, each either an absolute int or a vocabulary fraction in (0,1).
    ``dstar`` is "gt-root" (per-order Good-Turing estimate through the
    root rule) or a fixed float in (0,1) used at every order.
    """
    top = tables if isinstance(tables, CountTable) else tables[max(tables)]
    order = top.order
    if order < 2:
        raise ConfigError("PLRE needs order >= 2")
    if powers is None:
        powers = default_powers(order)
    if ranks is None:
        ranks = {k: tuple(0.005 for _ in powers.get(k, ())) for k in powers}

    warnings: List[str] = []
    vsize = len(vocab)
    resolved_ranks: Dict[int, Tuple[int, ...]] = {}
    for k in range(2, order + 1):
        chain = tuple(powers.get(k, ()))
        for lo, hi in zip(chain[1:], chain[:-1]):
            if not lo < hi:
                raise ConfigError(f"powers for order {k} must strictly descend: {chain}")
        if chain and not (0.0 < chain[-1] and chain[0] < 1.0):
            raise ConfigError(f"powers for order {k} must lie strictly in (0,1): {chain}")
        rk = tuple(ranks.get(k, ()))
        if len(rk) != len(chain):
            raise ConfigError(
                f"order {k}: {len(chain)} power(s) but {len(rk)} rank(s)"
            )
        resolved = []
        for value in rk:
            r, warn = _resolve_rank(value, vsize)
            if warn:
                warnings.append(f"order {k}: {warn}")
            resolved.append(r)
        resolved_ranks[k] = tuple(resolved)

    ctabs = adjusted_tables(top)
    dstars: Dict[int, float] = {}
    levels: Dict[int, PlreLevel] = {}
    for k in range(order, 1, -1):
        ctab = ctabs[k]
        chain_mid = tuple(powers.get(k, ()))
        eta = len(chain_mid)
        if dstar == "gt-root":
            n1, n2, _, _ = count_of_counts(ctab.entries.values())
            dstars[k] = derive_dstar(good_turing_discount(n1, n2), eta)
        else:
            d = float(dstar)
            if not 0.0 < d < 1.0:
                raise ConfigError(f"fixed d* must be in (0,1), got {dstar}")
            dstars[k] = d
        chain = (1.0,) + chain_mid + (0.0,)

        powered = [power_counts(ctab, rho) for rho in chain[:-1]]
        specs = [
            compute_discounts(powered[j], chain[j + 1], dstars[k], level=j)
            for j in range(eta + 1)
        ]
        top_numerators = {
            key: v - specs[0].discount(ctab.entries[key])
            for key, v in powered[0].entries.items()
        }
        z_tables = [
            compute_z(
                powered[j],
                specs[j],
                resolved_ranks[k][j - 1],
                max_iters=nmf_max_iters,
                rel_tol=nmf_rel_tol,
                eps=nmf_eps,
                seed=seed,
                threads=threads,
            )
            for j in range(1, eta + 1)
        ]
        levels[k] = PlreLevel(
            order=k,
            dstar=dstars[k],
            powers=chain_mid,
            counts=ctab.entries,
            context_totals=ctab.context_totals,
            top_numerators=top_numerators,
            gammas=[spec.gamma for spec in specs],
            z_tables=z_tables,
        )

    base_counts = np.zeros(vsize, dtype=np.int64)
    for (w,), c in ctabs[1].entries.items():
        base_counts[w] = c
    return PlreModel(
        vocab,
        order,
        levels,
        base_counts,
        dstars,
        resolved_ranks,
        seed,
        warnings,
    )


def verify_marginal(model: PlreModel, order: Optional[int] = None) -> float:
    """Brute-force marginal-constraint check at one order.

    Sums P(w|h) * P̂(h) over every context h observed in the order-k adjusted
    table (weights = the table's context marginals) and compares, per
    vocabulary word, against the table's own word marginals.  At the top
    order the adjusted table is the raw table, so this is exactly the
    preserve-the-observed-(n-1)-gram-distribution statement; the returned
    value is the max absolute violation over the vocabulary.
    """
    k = model.order if order is None else order
    if not 2 <= k <= model.order:
        raise ValueError(f"order must be in [2, {model.order}], got {k}")
    level = model.levels[k]
    vsize = len(model.vocab)
    total = float(sum(level.context_totals.values()))
    expected = np.zeros(vsize)
    for key, c in level.counts.items():
        expected[key[0]] += c
    expected /= total
    acc = np.zeros(vsize)
    for h, ctx_count in level.context_totals.items():
        acc += (ctx_count / total) * model.dist(h)
    return float(np.max(np.abs(acc - expected)))


def marginal_error_bound(model: PlreModel, order: Optional[int] = None) -> float:
    """Upper bound on verify_marginal implied by the stored factors.

    The marginal identity telescopes exactly except where a low-rank slice
    fails to reproduce its target's row sums; every such failure enters the
    order-k marginal at a closed-form weight (the handoff mass arriving at
    that level times d*^j over the level total).  Summing |row-sum residual|
    worst-case per word therefore bounds the marginal deviation, and the
    bound is zero for closed-form rank-1 and full-rank slices.
    """
    k = model.order if order is None else order
    if not 2 <= k <= model.order:
        raise ValueError(f"order must be in [2, {model.order}], got {k}")
    bound = 0.0
    lam = 1.0
    upper_total = None
    for kk in range(k, 1, -1):
        level = model.levels[kk]
        total = float(sum(level.context_totals.values()))
        if upper_total is not None:
            up = model.levels[kk + 1]
            lam *= (up.dstar ** (up.eta + 1)) * total / upper_total
        chain = (1.0,) + level.powers + (0.0,)
        for j, z in enumerate(level.z_tables, start=1):
            rho, rho_next = chain[j], chain[j + 1]
            groups: Dict[Key, Dict[int, float]] = {}
            for key, c in level.counts.items():
                v = float(c) ** rho - level.dstar * float(c) ** rho_next
                if v <= 0.0:
                    continue
                rows = groups.setdefault(key[1:-1], {})
                rows[key[0]] = rows.get(key[0], 0.0) + v
            resid: Dict[int, float] = {}
            for interior, rows in groups.items():
                sl = z.slices.get(interior)
                if sl is None:
                    for w, m in rows.items():
                        resid[w] = resid.get(w, 0.0) - m
                    continue
                f_rows = sl.pair.row_sums()
                for w, i in sl.row_index.items():
                    resid[w] = resid.get(w, 0.0) + float(f_rows[i]) - rows.pop(w, 0.0)
                for w, m in rows.items():
                    resid[w] = resid.get(w, 0.0) - m
            worst = max((abs(v) for v in resid.values()), default=0.0)
            bound += lam * (level.dstar ** j) / total * worst
        upper_total = total
    return bound
