import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semantic_memory import (
    ArtifactVersionError,
    DegenerateInstanceError,
    Observation,
    SpatialGrammar,
    TimeStep,
    UnparseableError,
    build_association_matrix,
    init_grammar,
    inside_outside_step,
    modulated_rule_prob,
    most_probable_parse,
    train_spatial,
)
from semantic_memory import chart
from semantic_memory.spatial import split_log_modulation, training_instances
from semantic_memory.trees import canonical_form

from oracles import enumerate_derivations, mean_association, random_association, random_grammar, textbook_inside


def _log(x):
    return math.log(x) if x > 0 else -math.inf


# -- initialization -------------------------------------------------------------


def test_init_single_nonterminal():
    g = init_grammar(1, 1, seed=123)
    assert g.rules[0, 0, 0] + g.emissions[0, 0] == pytest.approx(1.0, abs=1e-15)


def test_init_bit_identical():
    a, b = init_grammar(8, 9, 42), init_grammar(8, 9, 42)
    assert a.rules.tobytes() == b.rules.tobytes()
    assert a.emissions.tobytes() == b.emissions.tobytes()
    assert init_grammar(8, 9, 43).rules.tobytes() != a.rules.tobytes()


def test_init_rows_normalized():
    g = init_grammar(3, 6, 7)
    assert np.abs(g.row_mass() - 1.0).max() <= 1e-12


def test_init_perturbation_bounded():
    g = init_grammar(4, 5, 0)
    flat = np.concatenate([g.rules.reshape(4, -1), g.emissions], axis=1)
    uniform = 1.0 / flat.shape[1]
    # row normalization can stretch the +-10% band by at most another 10%
    assert np.all(np.abs(flat / uniform - 1.0) <= 0.1 / 0.9 + 1e-12)


@pytest.mark.parametrize("n, v", [(0, 3), (3, 0)])
def test_init_rejects_empty(n, v):
    with pytest.raises(ValueError):
        init_grammar(n, v, 0)


# -- modulated rule probability -------------------------------------------------


def _step_assoc(*obs, v=6):
    return build_association_matrix(TimeStep(0, tuple(Observation(*o) for o in obs)), v)


def test_modulated_singletons():
    g = init_grammar(3, 6, 1)
    assoc = _step_assoc((2, 0, 0), (6, 40, 0))
    assert modulated_rule_prob(g, 1, 2, 3, {2}, {6}, assoc) == pytest.approx(g.rules[0, 1, 2] * assoc[1, 5], rel=1e-15)


def test_modulated_zero_rule():
    g = init_grammar(3, 6, 1)
    g.rules[0, 1, 2] = 0.0
    assert modulated_rule_prob(g, 1, 2, 3, {1}, {5}, np.ones((6, 6))) == 0.0


def test_modulated_mean_of_equal_entries():
    g = init_grammar(3, 6, 1)
    assoc = _step_assoc((2, 0, 0), (3, 0, 0), (6, 40, 0))
    assert assoc[1, 5] == assoc[2, 5] == pytest.approx(math.exp(-2))
    got = modulated_rule_prob(g, 2, 1, 3, {2, 3}, {6}, assoc)
    assert got == pytest.approx(g.rules[1, 0, 2] * math.exp(-2), rel=1e-14)


@pytest.mark.parametrize("P, Q", [(set(), {1}), ({1}, set()), ({1, 2}, {2})])
def test_modulated_bad_covers(P, Q):
    with pytest.raises(ValueError):
        modulated_rule_prob(init_grammar(2, 3, 0), 1, 1, 1, P, Q, np.ones((3, 3)))


def test_split_modulation_matches_pairwise_mean():
    rng = np.random.default_rng(5)
    assoc = random_association(rng, 6)
    seq = (1, 2, 4, 6)
    mod = mean_association(seq, assoc)
    log_mod = split_log_modulation(seq, assoc)
    for s, t in itertools.combinations(range(5), 2):
        for m in range(s + 1, t):
            assert log_mod[s, m, t] == pytest.approx(math.log(mod(s, m, t)), abs=1e-14)


# -- inside-outside against the oracle ------------------------------------------


def test_single_terminal_loglik():
    g = init_grammar(4, 6, 3)
    _, ll = inside_outside_step(g, [((4,), np.eye(6))])
    assert ll == pytest.approx(math.log(g.emissions[0, 3]), abs=1e-15)


def _random_case(seed, n_max=3, v_max=4, len_max=3):
    rng = np.random.default_rng(seed)
    n_nt = int(rng.integers(1, n_max + 1))
    v = int(rng.integers(1, v_max + 1))
    rules, emit = random_grammar(rng, n_nt, v, sparsity=0.3 if seed % 3 == 0 else 0.0)
    length = int(rng.integers(1, len_max + 1))
    seq = [int(c) for c in rng.integers(1, v + 1, size=length)]
    return rules, emit, seq, random_association(rng, v)


@pytest.mark.parametrize("seed", range(40))
def test_expected_counts_match_enumeration(seed):
    rules, emit, seq, assoc = _random_case(seed)
    terms = [c - 1 for c in seq]
    ref = enumerate_derivations(rules, emit, terms, mod=mean_association(seq, assoc))
    rc, ec, log_z = chart.expected_counts(rules, emit, terms, 0, split_log_modulation(seq, assoc))
    if ref.total == 0:
        assert log_z == -math.inf
        return
    assert log_z == pytest.approx(math.log(ref.total), abs=1e-10)
    assert np.abs(rc - ref.rule_counts).max() <= 1e-10
    assert np.abs(ec - ref.emit_counts).max() <= 1e-10


@pytest.mark.parametrize("seed", range(20))
def test_unmodulated_inside_matches_textbook(seed):
    rules, emit, seq, _ = _random_case(seed, len_max=5)
    terms = [c - 1 for c in seq]
    beta = chart.inside_chart(rules, emit, terms)
    assert beta[0, len(seq), 0] == pytest.approx(_log(textbook_inside(rules, emit, terms)), abs=1e-10)


@pytest.mark.parametrize("seed", range(40))
def test_viterbi_matches_enumeration(seed):
    rules, emit, seq, assoc = _random_case(seed, len_max=4)
    g = SpatialGrammar(rules, emit)
    ref = enumerate_derivations(rules, emit, [c - 1 for c in seq], mod=mean_association(seq, assoc))
    if ref.best == 0:
        with pytest.raises(UnparseableError):
            most_probable_parse(g, seq, assoc)
        return
    parse = most_probable_parse(g, seq, assoc)
    ranked = ref.ranked()
    assert parse.score == pytest.approx(math.log(ref.best), abs=1e-10)
    second = _log(ranked[1][1]) if len(ranked) > 1 else -math.inf
    if second == -math.inf:
        assert parse.runner_up == -math.inf
    else:
        assert parse.runner_up == pytest.approx(second, abs=1e-10)
    if parse.margin > 1e-9:
        assert canonical_form(parse.tree) == ranked[0][0]


def test_viterbi_tie_breaks_lexicographically():
    # two nonterminals with identical rows: every labeling and bracketing ties
    rules = np.full((2, 2, 2), 0.1)
    emit = np.full((2, 3), 0.2)
    g = SpatialGrammar(rules, emit)
    parse = most_probable_parse(g, (1, 2, 3), np.ones((3, 3)))
    assert canonical_form(parse.tree) == "(1 (1 t1 t2) t3)"
    assert parse.margin == pytest.approx(0.0, abs=1e-12)


def test_length_two_has_no_runner_up():
    # root label is fixed and preterminals are not part of the form
    g = SpatialGrammar(np.full((2, 2, 2), 0.1), np.full((2, 2), 0.1))
    assert most_probable_parse(g, (1, 2), np.ones((2, 2))).runner_up == -math.inf


def test_single_terminal_parse():
    g = init_grammar(3, 6, 9)
    parse = most_probable_parse(g, (5,), np.eye(6))
    assert canonical_form(parse.tree) == "t5"
    assert parse.score == pytest.approx(math.log(g.emissions[0, 4]), abs=1e-15)


def test_zero_emission_is_degenerate():
    g = init_grammar(2, 3, 0)
    g.emissions[:, 2] = 0.0
    with pytest.raises(DegenerateInstanceError, match="codes"):
        inside_outside_step(g, [((1, 3), np.ones((3, 3)))], names=["s/e/0"])
    with pytest.raises(UnparseableError):
        most_probable_parse(g, (1, 3), np.ones((3, 3)))


def test_sequence_too_long():
    with pytest.raises(ValueError, match="length"):
        inside_outside_step(init_grammar(2, 2, 0), [((1,) * 9, np.ones((2, 2)))], l_max=8)


# -- EM behaviour ---------------------------------------------------------------


def _em_trace(g, batch, iters):
    lls = []
    for _ in range(iters):
        g, ll = inside_outside_step(g, batch)
        assert np.abs(g.row_mass() - 1.0).max() <= 1e-12
        lls.append(ll)
    return lls


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_em_monotone_random_batches(seed):
    rng = np.random.default_rng(seed)
    v = int(rng.integers(2, 5))
    batch = []
    for _ in range(int(rng.integers(1, 4))):
        length = int(rng.integers(1, 4))
        batch.append((tuple(int(c) for c in rng.integers(1, v + 1, size=length)), random_association(rng, v)))
    lls = _em_trace(init_grammar(3, v, seed), batch, 15)
    assert all(b >= a - 1e-9 for a, b in zip(lls, lls[1:]))


def test_em_monotone_scenario1(scenario1):
    batch = [(s, a) for s, a, _ in training_instances([scenario1])]
    lls = _em_trace(init_grammar(8, 6, 42), batch, 50)
    assert all(b >= a - 1e-9 for a, b in zip(lls, lls[1:]))


def test_single_repeated_step_converges():
    step = TimeStep(0, (Observation(1), Observation(5, 6, 0), Observation(6, 40, 0)))
    assoc = build_association_matrix(step, 6)
    history = []
    g = train_spatial_on([(step.terminals, assoc)] * 4, history)
    assert len(history) < 200
    assert history[-1] == pytest.approx(max(history), abs=1e-9)
    # emissions concentrate on the step's own terminals
    assert g.emissions[:, [1, 2, 3]].max() < 1e-3


def train_spatial_on(batch, history, iters=200):
    g = init_grammar(8, 6, 42)
    prev = None
    for _ in range(iters):
        g, ll = inside_outside_step(g, batch)
        history.append(ll)
        if prev is not None and ll - prev <= 1e-6 * abs(prev):
            break
        prev = ll
    return g


def test_single_terminal_step_converges_fast():
    history = []
    g = train_spatial_on([((1,), np.eye(6))], history)
    assert len(history) <= 5
    assert g.emissions[0, 0] == pytest.approx(1.0, abs=1e-12)


def test_training_bit_identical(scenario1):
    a = train_spatial([scenario1], n=8, seed=42)
    b = train_spatial([scenario1], n=8, seed=42)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())


def test_training_requires_steps(scenario1):
    with pytest.raises(ValueError):
        train_spatial([])


def test_scenario1_three_trees(scenario1):
    g = train_spatial([scenario1], n=8, seed=42)
    forms = {
        canonical_form(most_probable_parse(g, seq, assoc).tree) for seq, assoc, _ in training_instances([scenario1])
    }
    assert len(forms) == 3


# -- persistence ----------------------------------------------------------------


def test_grammar_round_trip(tmp_path):
    g = init_grammar(3, 5, 11)
    path = tmp_path / "g.json"
    g.save(path)
    back = SpatialGrammar.load(path)
    assert back.rules.tobytes() == g.rules.tobytes()
    assert back.emissions.tobytes() == g.emissions.tobytes()
    assert (back.seed, back.start) == (11, 1)


def test_grammar_version_checked():
    doc = init_grammar(2, 2, 0).to_dict()
    doc["format_version"] = "spatial-grammar/0"
    with pytest.raises(ArtifactVersionError):
        SpatialGrammar.from_dict(doc)
