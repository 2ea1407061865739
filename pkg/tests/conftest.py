import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gqe import kgraph  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_files(tmp_path):
    """Drug/disease/protein toy graph written as TSV files."""
    nodes = "d1\tdrug\nd2\tdrug\nx1\tdisease\nx2\tdisease\np1\tprotein\n"
    edges = "# header comment\nd1\ttreats\tx1\nd1\ttreats\tx2\nd2\ttreats\tx2\n\nd1\ttargets\tp1\n"
    (tmp_path / "nodes.tsv").write_text(nodes)
    (tmp_path / "edges.tsv").write_text(edges)
    return tmp_path


@pytest.fixture
def toy_graph(toy_files):
    return kgraph.ingest(toy_files / "edges.tsv", toy_files / "nodes.tsv")


@pytest.fixture(scope="session")
def small_blocks():
    return kgraph.synthetic_blocks(3, 20, 0.4, 4, 3, seed=7)
