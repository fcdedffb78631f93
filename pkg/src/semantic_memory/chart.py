"""Chart algorithms for binary-branching PCFGs in Chomsky normal form.

Parameters are a rule tensor ``rules[i, j, k]`` (nonterminal ``i`` rewrites to
``j k``) and an emission matrix ``emit[i, t]``, both 0-indexed here. Charts are
kept in log space; span products are rescaled by their maxima before the
einsum so that long sequences with small modulation factors neither underflow
nor lose the ``-inf`` of impossible spans.

Every binary application over the split ``s < m < t`` may be weighted by a
span modulation ``log_mod[s, m, t]``; passing ``None`` gives the plain PCFG.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .trees import Leaf, Node, ParseTree, canonical_form

NEG_INF = -np.inf

#: Candidates within this log-score distance are treated as tied in Viterbi.
TIE_ATOL = 1e-12


def _scaled(v: np.ndarray) -> tuple[np.ndarray | None, float]:
    m = float(v.max())
    if m == NEG_INF:
        return None, m
    return np.exp(v - m), m


def _mod(log_mod: np.ndarray | None, s: int, m: int, t: int) -> float:
    return 0.0 if log_mod is None else float(log_mod[s, m, t])


def inside_chart(rules: np.ndarray, emit: np.ndarray, seq, log_mod=None) -> np.ndarray:
    """Log inside chart ``beta[s, t, i]`` for the span ``[s, t)``."""
    n_nt = rules.shape[0]
    n = len(seq)
    beta = np.full((n + 1, n + 1, n_nt), NEG_INF)
    with np.errstate(divide="ignore"):
        for s in range(n):
            beta[s, s + 1] = np.log(emit[:, seq[s]])
        for width in range(2, n + 1):
            for s in range(n - width + 1):
                t = s + width
                acc = np.full(n_nt, NEG_INF)
                for m in range(s + 1, t):
                    lv, lmax = _scaled(beta[s, m])
                    rv, rmax = _scaled(beta[m, t])
                    if lv is None or rv is None:
                        continue
                    val = np.log(np.einsum("ijk,j,k->i", rules, lv, rv))
                    acc = np.logaddexp(acc, val + (lmax + rmax + _mod(log_mod, s, m, t)))
                beta[s, t] = acc
    return beta


def outside_chart(rules: np.ndarray, beta: np.ndarray, start: int, log_mod=None) -> np.ndarray:
    """Log outside chart ``alpha[s, t, i]`` given the inside chart."""
    n = beta.shape[0] - 1
    alpha = np.full_like(beta, NEG_INF)
    alpha[0, n, start] = 0.0
    with np.errstate(divide="ignore"):
        for width in range(n, 1, -1):
            for s in range(n - width + 1):
                t = s + width
                av, amax = _scaled(alpha[s, t])
                if av is None:
                    continue
                for m in range(s + 1, t):
                    lmod = _mod(log_mod, s, m, t)
                    lv, lmax = _scaled(beta[s, m])
                    rv, rmax = _scaled(beta[m, t])
                    if rv is not None:
                        val = np.log(np.einsum("i,ijk,k->j", av, rules, rv))
                        alpha[s, m] = np.logaddexp(alpha[s, m], val + (amax + rmax + lmod))
                    if lv is not None:
                        val = np.log(np.einsum("i,ijk,j->k", av, rules, lv))
                        alpha[m, t] = np.logaddexp(alpha[m, t], val + (amax + lmax + lmod))
    return alpha


def expected_counts(rules, emit, seq, start=0, log_mod=None, weight=1.0):
    """Posterior rule and emission counts for one sequence.

    Returns ``(rule_counts, emit_counts, log_z)``. When ``log_z`` is ``-inf``
    the counts are zero and the caller decides what that means.
    """
    n = len(seq)
    beta = inside_chart(rules, emit, seq, log_mod)
    log_z = float(beta[0, n, start])
    rule_counts = np.zeros_like(rules)
    emit_counts = np.zeros_like(emit)
    if log_z == NEG_INF:
        return rule_counts, emit_counts, log_z
    alpha = outside_chart(rules, beta, start, log_mod)
    for width in range(2, n + 1):
        for s in range(n - width + 1):
            t = s + width
            av, amax = _scaled(alpha[s, t])
            if av is None:
                continue
            for m in range(s + 1, t):
                lv, lmax = _scaled(beta[s, m])
                rv, rmax = _scaled(beta[m, t])
                if lv is None or rv is None:
                    continue
                scale = np.exp(amax + lmax + rmax + _mod(log_mod, s, m, t) - log_z)
                if scale == 0.0:
                    continue
                rule_counts += (weight * scale) * rules * np.einsum("i,j,k->ijk", av, lv, rv)
    for s in range(n):
        post = np.exp(alpha[s, s + 1] + beta[s, s + 1] - log_z)
        emit_counts[:, seq[s]] += weight * post
    return rule_counts, emit_counts, log_z


def reestimate(rules, emit, rule_counts, emit_counts):
    """M-step: normalize expected counts per nonterminal.

    A nonterminal with zero expected use keeps its previous distribution.
    """
    n = rules.shape[0]
    flat = np.concatenate([rule_counts.reshape(n, -1), emit_counts], axis=1)
    old = np.concatenate([rules.reshape(n, -1), emit], axis=1)
    totals = flat.sum(axis=1, keepdims=True)
    new = np.where(totals > 0, flat / np.where(totals > 0, totals, 1.0), old)
    return new[:, : n * n].reshape(rules.shape).copy(), new[:, n * n :].copy()


@dataclass
class ViterbiResult:
    tree: ParseTree
    score: float
    runner_up: float

    @property
    def margin(self) -> float:
        return self.score - self.runner_up


class _ViterbiChart:
    """Max-product chart tracking the best and second-best canonical tree per cell.

    Candidates for a cell are (split, left label, right label) triples, except
    that a width-1 child contributes no label: trees differing only in a
    preterminal serialize identically, so those alternatives are maxed out
    before ranking.
    """

    def __init__(self, rules, emit, seq, codes, log_mod):
        with np.errstate(divide="ignore"):
            self.lr = np.log(rules)
            self.le = np.log(emit)
        self.seq = list(seq)
        self.codes = list(codes)
        self.log_mod = log_mod
        n = len(self.seq)
        n_nt = rules.shape[0]
        self.n = n
        self.best = np.full((n + 1, n + 1, n_nt), NEG_INF)
        self.second = np.full((n + 1, n + 1, n_nt), NEG_INF)
        self.cands: dict[tuple[int, int], list[tuple[int, np.ndarray]]] = {}
        self._memo: dict[tuple[int, int, int], tuple[str, ParseTree]] = {}
        for s in range(n):
            self.best[s, s + 1] = self.le[:, self.seq[s]]
        for width in range(2, n + 1):
            for s in range(n - width + 1):
                self._fill(s, s + width)

    def _fill(self, s: int, t: int) -> None:
        lr = self.lr
        n_nt = lr.shape[0]
        cand_blocks = []
        alt_blocks = []
        per_split = []
        for m in range(s + 1, t):
            lmod = _mod(self.log_mod, s, m, t)
            L, L2 = self.best[s, m], self.second[s, m]
            R, R2 = self.best[m, t], self.second[m, t]
            base = lr + lmod
            X = base + L[None, :, None] + R[None, None, :]
            XL2 = base + L2[None, :, None] + R[None, None, :]
            XR2 = base + L[None, :, None] + R2[None, None, :]
            if m - s == 1:
                X = X.max(axis=1, keepdims=True)
                XL2 = np.full_like(X, NEG_INF)
                XR2 = XR2.max(axis=1, keepdims=True)
            if t - m == 1:
                X = X.max(axis=2, keepdims=True)
                XR2 = np.full_like(X, NEG_INF)
                XL2 = XL2.max(axis=2, keepdims=True)
            per_split.append((m, X))
            cand_blocks.append(X.reshape(n_nt, -1))
            alt_blocks.append(np.maximum(XL2, XR2).reshape(n_nt, -1))
        self.cands[(s, t)] = per_split
        C = np.concatenate(cand_blocks, axis=1)
        D = np.concatenate(alt_blocks, axis=1)
        top = np.argmax(C, axis=1)
        rows = np.arange(n_nt)
        best = C[rows, top]
        if C.shape[1] > 1:
            runner = np.partition(C, C.shape[1] - 2, axis=1)[:, -2]
        else:
            runner = np.full(n_nt, NEG_INF)
        self.best[s, t] = best
        self.second[s, t] = np.maximum(runner, D[rows, top])

    def tree(self, s: int, t: int, i: int) -> tuple[str, ParseTree]:
        if t - s == 1:
            leaf = Leaf(self.codes[self.seq[s]])
            return canonical_form(leaf), leaf
        key = (s, t, i)
        if key in self._memo:
            return self._memo[key]
        target = self.best[s, t, i]
        chosen: tuple[str, ParseTree] | None = None
        for m, X in self.cands[(s, t)]:
            slab = X[i]
            for j, k in zip(*np.nonzero(slab >= target - TIE_ATOL)):
                left = self.tree(s, m, int(j))[1]
                right = self.tree(m, t, int(k))[1]
                node = Node(i + 1, left, right)
                text = canonical_form(node)
                if chosen is None or text < chosen[0]:
                    chosen = (text, node)
        assert chosen is not None
        self._memo[key] = chosen
        return chosen


def viterbi(rules, emit, seq, codes, start=0, log_mod=None) -> ViterbiResult | None:
    """Best canonical parse of ``seq``; ``None`` when the sequence has probability 0.

    ``codes[t]`` is the terminal code printed for terminal index ``t``.
    Exact and near ties are resolved by the lexicographically smallest
    canonical form; ``runner_up`` is the score of the best different tree.
    """
    chart = _ViterbiChart(rules, emit, seq, codes, log_mod)
    n = chart.n
    score = float(chart.best[0, n, start])
    if score == NEG_INF:
        return None
    _, tree = chart.tree(0, n, start)
    return ViterbiResult(tree=tree, score=score, runner_up=float(chart.second[0, n, start]))
