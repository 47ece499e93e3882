import pytest
from hypothesis import given, strategies as st

from ddztd.errors import DanglingEdge, DuplicateNode, EmptyVisitedSet, EntryEqualsTarget, GraphError, IllegalMove
from ddztd.netgraph import (
    apply_move,
    authentication_subgraph,
    build_graph,
    frontier_edges,
    hop_distances,
    initial_state,
    random_dag,
)


def chain(n=3):
    names = [chr(ord("a") + i) for i in range(n)]
    return build_graph(names, list(zip(names, names[1:])), names[0], names[-1])


def test_two_node_graph_is_valid():
    g = build_graph(["a", "b"], [("a", "b")], "a", "b")
    assert g.nodes == ("a", "b") and g.edges == (("a", "b"),)


@pytest.mark.parametrize(
    "nodes, edges, entry, target, exc",
    [
        (["a", "b"], [("a", "c")], "a", "b", DanglingEdge),
        (["a", "a"], [], "a", "a", DuplicateNode),
        (["a", "b"], [("a", "b")], "a", "a", EntryEqualsTarget),
        (["a", "b"], [("a", "b")], "z", "b", DanglingEdge),
        (["a", "b"], [("a", "a")], "a", "b", GraphError),
    ],
)
def test_build_graph_rejects(nodes, edges, entry, target, exc):
    with pytest.raises(exc):
        build_graph(nodes, edges, entry, target)


def test_node_limit():
    with pytest.raises(GraphError):
        build_graph([str(i) for i in range(65)], [], "0", "1")


def test_random_dag_reproducible():
    g1, g2 = random_dag(10, 0.3, seed=5), random_dag(10, 0.3, seed=5)
    assert g1 == g2 and len(g1.nodes) == 10
    assert random_dag(10, 0.3, seed=6) != g1
    assert hop_distances(g1)[g1.entry] < float("inf")


def test_auth_subgraph_chain():
    g = chain()
    assert authentication_subgraph(g, {"a"}).edges == (("a", "b"),)
    full = authentication_subgraph(g, set(g.nodes))
    assert full.edges == g.edges


def test_auth_subgraph_needs_visited():
    with pytest.raises(EmptyVisitedSet):
        authentication_subgraph(chain(), set())


def test_apply_move_pass_and_reject():
    g = chain()
    s0 = initial_state(g)
    s1 = apply_move(g, s0, ("a", "b"), True)
    assert s1.visited == {"a", "b"} and s1.current == "b" and s1.time == 2
    s1r = apply_move(g, s0, ("a", "b"), False)
    assert s1r.visited == {"a"} and s1r.current == "a" and s1r.time == 2


def test_apply_move_illegal():
    g = chain()
    with pytest.raises(IllegalMove):
        apply_move(g, initial_state(g), ("b", "c"), True)
    with pytest.raises(IllegalMove):
        apply_move(g, initial_state(g), None, True)


def test_path_graph_four_moves_visits_prefix():
    g = chain(5)
    s = initial_state(g)
    names = list(g.nodes)
    for k in range(4):
        s = apply_move(g, s, (names[k], names[k + 1]), True)
        assert s.visited == set(names[: k + 2])


@st.composite
def graph_and_moves(draw):
    seed = draw(st.integers(0, 2**32))
    n = draw(st.integers(2, 8))
    g = random_dag(n, draw(st.floats(0.1, 0.9)), seed)
    outcomes = draw(st.lists(st.tuples(st.integers(0, 50), st.booleans()), max_size=10))
    return g, outcomes


@given(graph_and_moves())
def test_random_trajectory_invariants(case):
    g, outcomes = case
    s = initial_state(g)
    passed = 0
    for pick, ok in outcomes:
        front = frontier_edges(g, s.visited)
        if not front:
            break
        prev = s
        s = apply_move(g, s, front[pick % len(front)], ok)
        passed += ok
        assert prev.visited <= s.visited  # monotone
        assert s.current in s.visited
        assert len(s.visited) <= 1 + passed
        # recomputation from scratch equals the cached call, and is idempotent
        brute = tuple(e for e in sorted(g.edges) if e[0] in s.visited)
        assert authentication_subgraph(g, s.visited).edges == brute
        assert authentication_subgraph(g, s.visited) == authentication_subgraph(g, set(s.visited))
        assert all(e[0] in s.visited for e in authentication_subgraph(g, s.visited).edges)
