import numpy as np
import pytest

from scenemt import semgraph

# "I saw the dog that barked ." -- two scenes sharing "dog"; "that" and "."
# hang outside both scenes.
TWO_SCENE_GRAPH = """\
#L 7
T tI 0 I
T tsaw 1 saw
T tthe 2 the
T tdog 3 dog
T tthat 4 that
T tbarked 5 barked
T tdot 6 .
E root s1 H
E root s2 H
E root tthat R
E root tdot U
E s1 tsaw P
E s1 tI A
E s1 udog A
E udog tthe F
E udog tdog C
E s2 tbarked P
E s2 tdog A R
ROOT root
"""

TWO_SCENE_TOKENS = "I saw the dog that barked .".split()
I, SAW, THE, DOG, THAT, BARKED, DOT = range(7)


@pytest.fixture
def two_scene_graph():
    return semgraph.parse_ucca(TWO_SCENE_GRAPH)


@pytest.fixture
def two_scene_cover(two_scene_graph):
    return semgraph.extract_scenes(two_scene_graph)


def random_tree_heads(n, rng):
    """Random rooted tree: node i>0 hangs off a random earlier node."""
    heads = [semgraph.ROOT_HEAD]
    for i in range(1, n):
        heads.append(int(rng.integers(0, i)))
    order = rng.permutation(n)
    # relabel so the root is not always token 0
    relabel = {int(old): new for new, old in enumerate(order)}
    new_heads = [0] * n
    for old, h in enumerate(heads):
        new_heads[relabel[old]] = semgraph.ROOT_HEAD if h == semgraph.ROOT_HEAD else relabel[h]
    return new_heads


def random_ud_graph(n, rng):
    heads = random_tree_heads(n, rng)
    return semgraph.UdGraph(n, heads, ["dep"] * n, [f"w{i}" for i in range(n)])


def random_cover(rng, max_len=10, max_scenes=4):
    """Random scene cover; scenes may overlap and some tokens stay out."""
    L = int(rng.integers(2, max_len + 1))
    n_scenes = int(rng.integers(1, max_scenes + 1))
    scenes = []
    for sid in range(n_scenes):
        size = int(rng.integers(1, L + 1))
        tokens = frozenset(int(t) for t in rng.choice(L, size=size, replace=False))
        main = frozenset({min(tokens)})
        kind = "P" if rng.random() < 0.7 else "S"
        scenes.append(semgraph.Scene(sid, tokens, kind, main))
    assigned = frozenset().union(*(s.tokens for s in scenes))
    cover = semgraph.SceneCover(L, scenes, frozenset(range(L)) - assigned)
    cover.validate()
    return cover


def floyd_warshall(n, edges):
    """Independent all-pairs shortest paths for oracle comparisons."""
    dist = np.full((n, n), np.inf)
    np.fill_diagonal(dist, 0.0)
    for u, v in edges:
        dist[u, v] = dist[v, u] = 1.0
    for k in range(n):
        for i in range(n):
            for j in range(n):
                through = dist[i, k] + dist[k, j]
                if through < dist[i, j]:
                    dist[i, j] = through
    return dist
