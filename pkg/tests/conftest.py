import numpy as np
import pytest

from treegan import datasets as ds
from treegan.grammar import palindrome_grammar, parse_grammar_text
from treegan.parse_tree import tree_from_nested

# 010010 derived as P -> 0P0 -> 01P10 -> 010P010 -> 010010
WORKED_NESTED = ("P", ["0", ("P", ["1", ("P", ["0", ("P", [""]), "0"]), "1"]), "0"])
WORKED_ACTIONS = (3, 5, 4, 6, 3, 5, 0, 5, 6, 5)
WORKED_PARENTS = (0, 1, 1, 3, 3, 5, 5, 5, 3, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def pal():
    return palindrome_grammar()


@pytest.fixture(scope="session")
def worked_tree(pal):
    return tree_from_nested(pal, WORKED_NESTED)


@pytest.fixture(scope="session")
def two_nt():
    return parse_grammar_text("start S; term a b c; S -> A B | c; A -> a | a A; B -> b")


@pytest.fixture(scope="session")
def sql_demo():
    return ds.demo_sql_grammar(), ds.demo_schema()


@pytest.fixture(scope="session")
def sql_a():
    return ds.gen_sql_spec(ds.PRESETS["sql-a"])


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
