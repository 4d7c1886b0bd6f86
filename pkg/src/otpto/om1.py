"""Historical-optimum stocking model: exact branch-and-bound plus a brute-force oracle.

A day's orders, the warehouse limits (K, N, B) and an objective define a 0-1
program over per-SKU stock levels. The only levels worth considering for a
SKU are its breakpoints ``max(B, c_oi)``: between two breakpoints a larger
quantity covers no extra order line and only spends capacity.

Objective scores are kept as exact integers. ``rate_only`` counts fulfilled
orders. ``rate_plus_gmv`` scores a plan as ``(G + 1) * count + gmv`` where
``G`` is the day's total GMV in cents; ranking by this integer is the same as
ranking by the weighted rate + GMV share objective, with the rare exact ties
of that objective resolved toward more fulfilled orders.

Remaining ties go to the plan with fewer total units, then the
lexicographically smallest stocked SKU tuple, then the smallest quantity
vector. Both the solver and the oracle use :func:`_better` for this.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from otpto.core import (
    DayOrders,
    EmptyDayError,
    StockPlan,
    ValidationError,
    WarehouseConfig,
    simulate_day,
)

RATE_ONLY = "rate_only"
RATE_PLUS_GMV = "rate_plus_gmv"
OBJECTIVE_MODES = (RATE_ONLY, RATE_PLUS_GMV)

PROVEN_OPTIMAL = "proven_optimal"
INCUMBENT_WITH_BOUND = "incumbent_with_bound"
INFEASIBLE = "infeasible"


class SolverSizeError(ValueError):
    """The brute-force oracle refuses instances beyond its enumeration guard."""


@dataclass(frozen=True)
class SolverConfig:
    objective_mode: str = RATE_ONLY
    time_limit: float | None = None
    node_limit: int | None = None
    delta: float = 1e-3
    big_m: float = 1e5

    def __post_init__(self) -> None:
        if self.objective_mode not in OBJECTIVE_MODES:
            raise ValueError(f"objective_mode must be one of {OBJECTIVE_MODES}, got {self.objective_mode!r}")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.big_m <= 1:
            raise ValueError("big_m must be large")


@dataclass(frozen=True)
class SolveOutcome:
    plan: StockPlan
    objective_rate: float
    objective_gmv_term: float
    status: str
    upper_bound: float
    nodes_explored: int
    fulfilled_count: int = 0
    score: int = 0

    @property
    def objective(self) -> float:
        """Value of the configured objective (rate, or rate plus GMV share)."""
        return self.objective_rate + self.objective_gmv_term


def _order_weights(day: DayOrders, mode: str) -> list[int]:
    if mode == RATE_ONLY:
        return [1] * day.n_orders
    total = sum(day.gmv_cents)
    return [total + 1 + g for g in day.gmv_cents]


def _key(score: int, entries: dict[str, int]) -> tuple:
    skus = tuple(sorted(entries))
    return (score, -sum(entries.values()), skus, tuple(entries[s] for s in skus))


def _better(a: tuple, b: tuple | None) -> bool:
    """True when key ``a`` beats key ``b`` (higher score, then fewer units, then smaller SKU/quantity tuples)."""
    if b is None:
        return True
    if a[0] != b[0]:
        return a[0] > b[0]
    if a[1] != b[1]:
        return a[1] > b[1]
    if a[2] != b[2]:
        return a[2] < b[2]
    return a[3] < b[3]


def _outcome(day: DayOrders, entries: dict[str, int], mode: str, status: str,
             upper_bound: float | None, nodes: int) -> SolveOutcome:
    plan = StockPlan(day.day, entries)
    report = simulate_day(day, plan)
    n = day.n_orders
    total_gmv = sum(day.gmv_cents)
    fulfilled_gmv = sum(g for g, ok in zip(day.gmv_cents, report.fulfilled) if ok)
    rate = report.fulfilled_count / n
    gmv_term = fulfilled_gmv / total_gmv / n if (mode == RATE_PLUS_GMV and total_gmv) else 0.0
    weights = _order_weights(day, mode)
    score = sum(w for w, ok in zip(weights, report.fulfilled) if ok)
    return SolveOutcome(
        plan=plan,
        objective_rate=rate,
        objective_gmv_term=gmv_term,
        status=status,
        upper_bound=rate if upper_bound is None else upper_bound,
        nodes_explored=nodes,
        fulfilled_count=report.fulfilled_count,
        score=score,
    )


def candidate_levels(day: DayOrders, B: int) -> dict[str, list[int]]:
    """Distinct breakpoints ``max(B, c_oi)`` per SKU, ascending."""
    levels: dict[str, set[int]] = {}
    for lines in day.lines:
        for sku, _, cum, _ in lines:
            levels.setdefault(sku, set()).add(max(B, cum))
    return {sku: sorted(v) for sku, v in sorted(levels.items())}


def canonical_entries(day: DayOrders, fulfilled: Sequence[bool], B: int) -> dict[str, int]:
    """Smallest plan that fulfils exactly the given orders."""
    need: dict[str, int] = {}
    for lines, ok in zip(day.lines, fulfilled):
        if ok:
            for sku, _, cum, _ in lines:
                need[sku] = max(need.get(sku, 0), max(B, cum))
    return need


# ---------------------------------------------------------------------------
# Brute-force oracle
# ---------------------------------------------------------------------------

def brute_force_oracle(day: DayOrders, config: WarehouseConfig, objective_mode: str = RATE_ONLY,
                       max_skus: int = 8, max_combinations: int = 10**7) -> SolveOutcome:
    """Enumerate every per-SKU breakpoint combination and score it by replay."""
    if objective_mode not in OBJECTIVE_MODES:
        raise ValueError(f"unknown objective_mode {objective_mode!r}")
    if day.n_orders == 0:
        raise EmptyDayError(f"no orders on {day.day}")
    levels = candidate_levels(day, config.B)
    skus = list(levels)
    if len(skus) > max_skus:
        raise SolverSizeError(f"{len(skus)} SKUs exceeds oracle guard of {max_skus}")
    combos = math.prod(len(v) + 1 for v in levels.values())
    if combos > max_combinations:
        raise SolverSizeError(f"{combos} combinations exceeds oracle guard of {max_combinations}")

    weights = _order_weights(day, objective_mode)
    best_key = None
    best_entries: dict[str, int] = {}
    for choice in itertools.product(*[[0] + levels[s] for s in skus]):
        entries = {s: q for s, q in zip(skus, choice) if q > 0}
        if len(entries) > config.K or sum(entries.values()) > config.N:
            continue
        report = simulate_day(day, StockPlan(day.day, entries))
        score = sum(w for w, ok in zip(weights, report.fulfilled) if ok)
        key = _key(score, entries)
        if _better(key, best_key):
            best_key, best_entries = key, entries
    return _outcome(day, best_entries, objective_mode, PROVEN_OPTIMAL, None, combos)


# ---------------------------------------------------------------------------
# Branch and bound
# ---------------------------------------------------------------------------

def _bits(mask: int):
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


class _MaxFlow:
    """Dinic max-flow over a fixed edge list; capacities are supplied per call."""

    def __init__(self, n: int):
        self.n = n
        self.adj: list[list[int]] = [[] for _ in range(n)]
        self.to: list[int] = []

    def add_edge(self, u: int, v: int) -> int:
        self.adj[u].append(len(self.to))
        self.to.append(v)
        self.adj[v].append(len(self.to))
        self.to.append(u)
        return len(self.to) - 2

    def solve(self, cap: list[float], s: int, t: int, eps: float) -> tuple[float, list[bool]]:
        """Push max flow through ``cap`` (mutated into residuals); return flow and the source side of a min cut."""
        adj, to, n = self.adj, self.to, self.n
        flow = 0.0
        while True:
            level = [-1] * n
            level[s] = 0
            queue = [s]
            for u in queue:
                lu = level[u] + 1
                if 0 <= level[t] < lu:
                    break  # nodes past the sink's level never lie on a shortest path
                for e in adj[u]:
                    v = to[e]
                    if level[v] < 0 and cap[e] > eps:
                        level[v] = lu
                        queue.append(v)
            if level[t] < 0:
                break
            it = [0] * n
            target = level[t]
            # iterative blocking-flow search keeping the path as a stack of edges;
            # after each push the walk resumes from the tail of the bottleneck edge
            path: list[int] = []
            u = s
            while True:
                if u == t:
                    k = 0
                    f = cap[path[0]]
                    for i in range(1, len(path)):
                        c = cap[path[i]]
                        if c < f:
                            f, k = c, i
                    for e in path:
                        cap[e] -= f
                        cap[e ^ 1] += f
                    flow += f
                    del path[k:]
                    u = to[path[-1]] if path else s
                    continue
                edges = adj[u]
                deg = len(edges)
                i = it[u]
                nxt = level[u] + 1
                while i < deg:
                    e = edges[i]
                    if cap[e] > eps:
                        v = to[e]
                        if level[v] == nxt and (nxt < target or v == t):
                            break
                    i += 1
                it[u] = i
                if i < deg:
                    path.append(edges[i])
                    u = to[edges[i]]
                else:
                    if u == s:
                        break
                    level[u] = -1
                    e = path.pop()
                    u = to[e ^ 1]
                    it[u] += 1
        seen = [False] * n
        seen[s] = True
        queue = [s]
        for u in queue:
            for e in adj[u]:
                v = to[e]
                if not seen[v] and cap[e] > eps:
                    seen[v] = True
                    queue.append(v)
        return flow, seen


def _minimize_convex(f, hi: float, tol: float, stop) -> tuple[float, float]:
    """Minimise a convex piecewise-linear ``f(x) -> (value, slope)`` on ``[0, hi]`` by kink intersection."""
    v_lo, s_lo = f(0.0)
    best, arg = v_lo, 0.0
    if s_lo >= 0 or stop(best):
        return best, arg
    lo = 0.0
    v_hi, s_hi = f(hi)
    if v_hi < best:
        best, arg = v_hi, hi
    if s_hi <= 0:
        return best, arg
    for _ in range(60):
        x = (v_hi - v_lo + s_lo * lo - s_hi * hi) / (s_lo - s_hi)
        if not lo < x < hi:
            break
        v, s = f(x)
        if v < best:
            best, arg = v, x
        if stop(best) or v <= v_lo + s_lo * (x - lo) + tol:
            break
        if s < 0:
            lo, v_lo, s_lo = x, v, s
        elif s > 0:
            hi, v_hi, s_hi = x, v, s
        else:
            break
    return best, arg


class _Search:
    """Depth-first search over SKUs in id order; each SKU takes one of its breakpoints or 0.

    Orders are bitmask positions. ``alive`` holds orders that can still be
    fulfilled given the decisions so far. Only canonical plans are explored:
    a SKU is stocked at level L only if some live order needs exactly L.

    Nodes are valued on the integer scale ``score * U - units`` with
    ``U = N + 1``, so the bound also covers the fewer-units tie-break.
    Bounds are the smaller of a combinatorial share bound and a Lagrangian
    bound that prices the K and N budgets; with both budgets priced the
    remaining problem is a maximum-weight closure (orders need SKU levels,
    levels need the level below), solved by a min cut.
    """

    def __init__(self, day: DayOrders, config: WarehouseConfig, mode: str):
        self.K, self.N, self.B = config.K, config.N, config.B
        B = self.B
        self.U = config.N + 1
        self.weights = _order_weights(day, mode)
        self.n = day.n_orders

        possible = []
        for lines in day.lines:
            cost = sum(max(B, cum) for _, _, cum, _ in lines)
            possible.append(len(lines) <= self.K and cost <= self.N)
        self.possible = [o for o, ok in enumerate(possible) if ok]
        self.possible_mask = sum(1 << o for o in self.possible)

        lines_by_sku: dict[str, list[tuple[int, int]]] = {}
        for o in self.possible:
            for sku, _, cum, _ in day.lines[o]:
                lines_by_sku.setdefault(sku, []).append((o, max(B, cum)))

        self.skus = sorted(lines_by_sku)
        pos = {s: j for j, s in enumerate(self.skus)}
        self.m = len(self.skus)

        self.levels: list[list[int]] = []
        self.cover: list[list[int]] = []
        self.new_at: list[list[int]] = []
        self.contain: list[int] = []
        for s in self.skus:
            entries = lines_by_sku[s]
            lv = sorted({lvl for _, lvl in entries})
            cover, new = [], []
            prev = 0
            for level in lv:
                mask = sum(1 << o for o, lvl in entries if lvl <= level)
                cover.append(mask)
                new.append(mask & ~prev)
                prev = mask
            self.levels.append(lv)
            self.cover.append(cover)
            self.new_at.append(new)
            self.contain.append(sum(1 << o for o, _ in entries))

        self.order_lines: dict[int, list[tuple[int, int]]] = {}
        last_pos = {}
        for o in self.possible:
            ol = sorted((pos[sku], max(B, cum)) for sku, _, cum, _ in day.lines[o])
            self.order_lines[o] = ol
            last_pos[o] = ol[-1][0]
        self.done_by = [0] * (self.m + 1)
        for j in range(self.m + 1):
            self.done_by[j] = sum(1 << o for o, p in last_pos.items() if p < j)

    def examine(self, j: int, alive: int, count: int, units: int):
        """Split a node's live orders into finished and pending ones.

        Returns ``(alive, score_done, pending)`` where ``pending`` maps each
        still-open order to its undecided ``(position, level)`` lines. Orders
        whose undecided lines can no longer fit the remaining budget are dropped.
        """
        weights = self.weights
        done = alive & self.done_by[j]
        score_done = 0
        for o in _bits(done):
            score_done += weights[o]
        rest = alive & ~done
        pending: dict[int, list[tuple[int, int]]] = {}
        if not rest:
            return alive, score_done, pending
        cap = self.N - units
        r = min(self.K - count, cap // self.B)
        for o in _bits(rest):
            undecided = [(p, lvl) for p, lvl in self.order_lines[o] if p >= j]
            if len(undecided) > r or sum(lvl for _, lvl in undecided) > cap:
                alive &= ~(1 << o)
            else:
                pending[o] = undecided
        return alive, score_done, pending

    def share_bound(self, pending: dict, count: int, units: int) -> float:
        """Upper bound on the pending orders' weight ignoring how SKUs combine."""
        weights = self.weights
        cap = self.N - units
        r = min(self.K - count, cap // self.B)
        share: dict[int, float] = {}
        by_sku: dict[int, list[tuple[int, int]]] = {}
        for o, undecided in pending.items():
            w = weights[o] / len(undecided)
            for p, lvl in undecided:
                share[p] = share.get(p, 0.0) + w
                by_sku.setdefault(p, []).append((lvl, o))
        k_bound = sum(sorted(share.values(), reverse=True)[:r])

        # A SKU's level pays for its orders incrementally along its
        # breakpoints, so attributed costs never exceed the level.
        cost = dict.fromkeys(pending, 0)
        for entries in by_sku.values():
            entries.sort()
            prev = 0
            for lvl, o in entries:
                cost[o] += lvl - prev
                prev = lvl
        n_bound = 0.0
        paid = []
        for o in pending:
            if cost[o] == 0:
                n_bound += weights[o]
            else:
                paid.append(o)
        paid.sort(key=lambda o: (-weights[o] / cost[o], o))
        room = cap
        for o in paid:
            c = cost[o]
            if c <= room:
                room -= c
                n_bound += weights[o]
            else:
                n_bound += weights[o] * room / c
                break
        return min(k_bound, n_bound)

    def lagrangian_bound(self, pending: dict, count: int, units: int, stop, on_primal,
                         start: tuple[float, float] | None = None) -> tuple[float, tuple[float, float]]:
        """Bound on ``pending score * U - new units`` via priced K/N budgets and a min cut.

        ``stop(value)`` ends the dual search early once the node is known to be
        prunable; ``on_primal(levels)`` receives every budget-feasible closure.
        ``start`` is a multiplier pair tried first (typically the parent's).
        Returns the bound and the best multipliers found.
        """
        k_left = self.K - count
        n_left = self.N - units
        U = self.U
        orders = list(pending)
        node_of: dict[tuple[int, int], int] = {}
        need: dict[int, set[int]] = {}
        for o in orders:
            for p, lvl in pending[o]:
                need.setdefault(p, set()).add(lvl)
        flow = _MaxFlow(2 + len(orders) + sum(len(v) for v in need.values()))
        s, t = 0, 1
        base: list[float] = []
        profit_edges = []
        for idx, o in enumerate(orders):
            e = flow.add_edge(s, 2 + idx)
            base += [float(self.weights[o] * U), 0.0]
            profit_edges.append(e)
        nid = 2 + len(orders)
        sink_edges = []  # (edge, is_first, delta, position, level)
        for p in sorted(need):
            prev_node, prev_lvl = None, 0
            for lvl in sorted(need[p]):
                node_of[(p, lvl)] = nid
                e = flow.add_edge(nid, t)
                base += [0.0, 0.0]
                sink_edges.append((e, prev_node is None, lvl - prev_lvl, p, lvl, nid))
                if prev_node is not None:
                    flow.add_edge(nid, prev_node)
                    base += [math.inf, 0.0]
                prev_node, prev_lvl = nid, lvl
                nid += 1
        for idx, o in enumerate(orders):
            for p, lvl in pending[o]:
                flow.add_edge(2 + idx, node_of[(p, lvl)])
                base += [math.inf, 0.0]
        total = sum(base[e] for e in profit_edges)
        eps = 1e-12 * (total + 1.0)
        tol = 1e-9 * (total + 1.0)

        # Sink capacities grow with both multipliers, so a flow found at
        # (lam0, mu0) stays feasible at any (lam, mu) above it and is resumed.
        states: list[tuple[float, float, list[float], float]] = []

        def sink_cap(first: bool, delta: int, lam: float, mu: float) -> float:
            return (lam if first else 0.0) + (mu + 1.0) * delta

        def evaluate(lam: float, mu: float) -> tuple[float, int, int]:
            warm = None
            for st in states:
                if st[0] <= lam and st[1] <= mu and (warm is None or st[3] > warm[3]):
                    warm = st
            if warm is None:
                cap = list(base)
                for e, first, delta, _, _, _ in sink_edges:
                    cap[e] = sink_cap(first, delta, lam, mu)
                start_flow = 0.0
            else:
                lam0, mu0, cap, start_flow = warm
                cap = list(cap)
                for e, first, delta, _, _, _ in sink_edges:
                    cap[e] += sink_cap(first, delta, lam, mu) - sink_cap(first, delta, lam0, mu0)
            value, side = flow.solve(cap, s, t, eps)
            value += start_flow
            states.append((lam, mu, cap, value))
            if len(states) > 8:
                states.pop(0)
            chosen: dict[int, int] = {}
            for _, _, _, p, lvl, node in sink_edges:
                if side[node] and lvl > chosen.get(p, 0):
                    chosen[p] = lvl
            n_sel = len(chosen)
            u_sel = sum(chosen.values())
            if n_sel <= k_left and u_sel <= n_left:
                on_primal(chosen)
            return lam * k_left + mu * n_left + (total - value), n_sel, u_sel

        best = math.inf
        lam = mu = 0.0
        arg = (0.0, 0.0)
        if start is not None:
            best = evaluate(*start)[0]
            arg = start
            if stop(best):
                return best, arg
            mu = start[1]
        for round_ in range(_DUAL_ROUNDS):
            def f_lam(x: float) -> tuple[float, float]:
                v, n_sel, _ = evaluate(x, mu)
                return v, k_left - n_sel
            v, lam = _minimize_convex(f_lam, total + 1.0, tol, stop)
            if v < best:
                best, arg = v, (lam, mu)
            if stop(best):
                break

            def f_mu(x: float) -> tuple[float, float]:
                v, _, u_sel = evaluate(lam, x)
                return v, n_left - u_sel
            v, mu_new = _minimize_convex(f_mu, total + 1.0, tol, stop)
            if v < best:
                best, arg = v, (lam, mu_new)
            if stop(best) or mu_new == mu:
                break
            mu = mu_new
        return best, arg


_DUAL_ROUNDS = 2


def _floor_bound(ub: float) -> int:
    return math.floor(ub * (1 + 1e-12) + 1e-6)


def _lex_can_improve(stocked: tuple[str, ...], incumbent: tuple[str, ...]) -> bool:
    """Whether some plan extending ``stocked`` with larger SKU ids can tie-break below ``incumbent``."""
    for a, b in zip(stocked, incumbent):
        if a != b:
            return a < b
    return len(stocked) <= len(incumbent)


def solve_exact(day: DayOrders, config: WarehouseConfig, solver: SolverConfig | None = None) -> SolveOutcome:
    """Maximise the day's fulfillment objective under the K/N/B limits."""
    solver = solver or SolverConfig()
    mode = solver.objective_mode
    if day.n_orders == 0:
        raise EmptyDayError(f"no orders on {day.day}")
    search = _Search(day, config, mode)
    U = search.U
    deadline = None if solver.time_limit is None else time.monotonic() + solver.time_limit
    total_gmv = sum(day.gmv_cents)

    best_key = _key(0, {})
    best_val = 0
    best_entries: dict[str, int] = {}

    def offer(levels: dict[int, int]) -> None:
        nonlocal best_key, best_val, best_entries
        fulfilled = [False] * search.n
        for o in search.possible:
            fulfilled[o] = all(levels.get(p, 0) >= lvl for p, lvl in search.order_lines[o])
        entries = canonical_entries(day, fulfilled, search.B)
        score = sum(search.weights[o] for o, ok in enumerate(fulfilled) if ok)
        key = _key(score, entries)
        if _better(key, best_key):
            best_key, best_entries = key, entries
            best_val = score * U + key[1]

    def decided_levels(chosen) -> dict[int, int]:
        out = {}
        while chosen is not None:
            chosen, p, level = chosen
            out[p] = level
        return out

    def hopeless(ub_int: int, stocked: tuple[str, ...]) -> bool:
        if ub_int != best_val:
            return ub_int < best_val
        return not _lex_can_improve(stocked, best_key[2])

    def make_node(j, alive, count, units, chosen, stocked, start=None):
        """Bound a child; returns a stack entry or None when it is closed."""
        alive, score_done, pending = search.examine(j, alive, count, units)
        if not pending:
            offer(decided_levels(chosen))
            return None
        base_val = score_done * U - units
        ub = base_val + search.share_bound(pending, count, units) * U
        if hopeless(_floor_bound(ub), stocked):
            return None
        fixed = decided_levels(chosen)

        def on_primal(new_levels: dict[int, int]) -> None:
            merged = dict(fixed)
            merged.update(new_levels)
            offer(merged)

        lag, mult = search.lagrangian_bound(
            pending, count, units,
            stop=lambda v: hopeless(_floor_bound(base_val + v), stocked),
            on_primal=on_primal, start=start,
        )
        ub_int = _floor_bound(min(ub, base_val + lag))
        if hopeless(ub_int, stocked):
            return None
        pmask = sum(1 << o for o in pending)
        return (ub_int, len(stocked), j, alive, pmask, count, units, chosen, stocked, mult)

    stack = []
    root = make_node(0, search.possible_mask, 0, 0, None, ())
    if root is not None:
        stack.append(root)
    nodes = 0
    aborted = False
    while stack:
        if (solver.node_limit is not None and nodes >= solver.node_limit) or (
            deadline is not None and time.monotonic() > deadline
        ):
            aborted = True
            break
        ub_int, _, j, alive, pending, count, units, chosen, stocked, mult = stack.pop()
        if hopeless(ub_int, stocked):
            continue
        nodes += 1
        # positions no pending order needs stay at 0
        while not (search.contain[j] & pending):
            alive &= ~search.contain[j]
            j += 1
        base = alive & ~search.contain[j]
        sku = search.skus[j]
        children = []
        child = make_node(j + 1, base, count, units, chosen, stocked, mult)
        if child is not None:
            children.append(child)
        for k, level in enumerate(search.levels[j]):
            if count + 1 > search.K or units + level > search.N:
                break
            if search.new_at[j][k] & pending:
                child = make_node(j + 1, alive & (base | search.cover[j][k]), count + 1, units + level,
                                  (chosen, j, level), stocked + (sku,), mult)
                if child is not None:
                    children.append(child)
        # best bound on top; among equals prefer stocking the smaller id
        children.sort(key=lambda ch: (ch[0], ch[1]))
        stack.extend(children)

    n = day.n_orders
    if aborted:
        open_bounds = [entry[0] for entry in stack if not hopeless(entry[0], entry[8])]
        ub_val = max([best_val] + open_bounds)
        if ub_val <= best_val:
            status, upper = PROVEN_OPTIMAL, None
        else:
            status = INCUMBENT_WITH_BOUND
            ub_score = (ub_val + search.N) // U
            count_ub = ub_score if mode == RATE_ONLY else ub_score // (total_gmv + 1)
            upper = min(1.0, count_ub / n)
    else:
        status, upper = PROVEN_OPTIMAL, None
    out = _outcome(day, best_entries, mode, status, upper, nodes)
    if status == INCUMBENT_WITH_BOUND and out.upper_bound < out.objective_rate:
        out = SolveOutcome(out.plan, out.objective_rate, out.objective_gmv_term, status,
                           out.objective_rate, nodes, out.fulfilled_count, out.score)
    return out

# ---------------------------------------------------------------------------
# Big-M formulation: residual check and LP export
# ---------------------------------------------------------------------------

def supply_indicators(day: DayOrders, stock: dict[str, float]) -> dict[tuple[int, str], int]:
    """z_oi for every (order, SKU) pair of the day, lines or not: ``[x_i >= c_oi]``."""
    skus = day.skus
    running = dict.fromkeys(skus, 0)
    z = {}
    for o, lines in enumerate(day.lines):
        for sku, qty, _, _ in lines:
            running[sku] += qty
        for sku in skus:
            z[(o, sku)] = int(stock.get(sku, 0.0) >= running[sku])
    return z


def bigm_violations(day: DayOrders, stock: dict[str, float], z: dict[tuple[int, str], int],
                    p: Sequence[int], delta: float = 1e-3, big_m: float = 1e5) -> list[str]:
    """Evaluate the linking constraints between stock, line supply and order fulfilment.

    Returns a description of every violated constraint (empty when satisfied).
    """
    out = []
    skus = day.skus
    running = dict.fromkeys(skus, 0)
    for o, lines in enumerate(day.lines):
        for sku, qty, _, _ in lines:
            running[sku] += qty
        for sku in skus:
            x = stock.get(sku, 0.0)
            c = running[sku]
            zz = z[(o, sku)]
            if x - c + delta > big_m * zz:
                out.append(f"supply-upper o={o} i={sku}")
            if x - c < big_m * (zz - 1):
                out.append(f"supply-lower o={o} i={sku}")
        total = sum(z[(o, sku)] for sku, _, _, _ in lines)
        size = len(lines)
        if total - size + delta > big_m * p[o]:
            out.append(f"order-upper o={o}")
        if total - size < big_m * (p[o] - 1):
            out.append(f"order-lower o={o}")
    return out


def _lp_name(sku: str) -> str:
    return "".join(ch if ch.isalnum() or ch == "_" else "_" for ch in sku)


def write_lp(day: DayOrders, config: WarehouseConfig, solver: SolverConfig | None = None,
             out_dir: str | Path = ".") -> Path:
    """Write the big-M model for one day in CPLEX LP format as ``om1_<date>.lp``."""
    solver = solver or SolverConfig()
    d, M = solver.delta, solver.big_m
    skus = day.skus
    names = {s: _lp_name(s) for s in skus}
    n = day.n_orders
    if solver.objective_mode == RATE_PLUS_GMV and sum(day.gmv_cents):
        total = sum(day.gmv_cents)
        coef = [(1 + g / total) / n for g in day.gmv_cents]
    else:
        coef = [1 / n] * n
    rows = ["\\ historical-optimum stocking model", "Maximize",
            " obj: " + " + ".join(f"{c:.12g} p_{o}" for o, c in enumerate(coef)), "Subject To"]
    rows.append(" types: " + " + ".join(f"y_{names[s]}" for s in skus) + f" <= {config.K}")
    rows.append(" units: " + " + ".join(f"x_{names[s]}" for s in skus) + f" <= {config.N}")
    for s in skus:
        v = names[s]
        rows.append(f" minq_{v}: x_{v} - {config.B} y_{v} >= 0")
        rows.append(f" maxq_{v}: x_{v} <= {max(config.B, day.demand[s])}")
        rows.append(f" link1_{v}: x_{v} - {M:g} y_{v} <= 0")
        rows.append(f" link2_{v}: {M:g} x_{v} - y_{v} >= 0")
    running = dict.fromkeys(skus, 0)
    for o, lines in enumerate(day.lines):
        for sku, qty, _, _ in lines:
            running[sku] += qty
        for s in skus:
            v = names[s]
            c = running[s]
            rows.append(f" zu_{o}_{v}: x_{v} - {M:g} z_{o}_{v} <= {c - d:.12g}")
            rows.append(f" zl_{o}_{v}: x_{v} - {M:g} z_{o}_{v} >= {c - M:.12g}")
        zs = " + ".join(f"z_{o}_{names[sku]}" for sku, _, _, _ in lines)
        size = len(lines)
        rows.append(f" pu_{o}: {zs} - {M:g} p_{o} <= {size - d:.12g}")
        rows.append(f" pl_{o}: {zs} - {M:g} p_{o} >= {size - M:.12g}")
    rows.append("Bounds")
    for s in skus:
        rows.append(f" x_{names[s]} >= 0")
    rows.append("Binary")
    binaries = [f"y_{names[s]}" for s in skus] + [f"p_{o}" for o in range(n)]
    binaries += [f"z_{o}_{names[s]}" for o in range(n) for s in skus]
    for i in range(0, len(binaries), 8):
        rows.append(" " + " ".join(binaries[i:i + 8]))
    rows.append("End")
    path = Path(out_dir) / f"om1_{day.day.isoformat()}.lp"
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return path
