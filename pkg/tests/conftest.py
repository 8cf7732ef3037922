import numpy as np
import pytest

from enzkg.kg import EquationKG, InternTable, parse_equation_file

# two-equation fixture used across the suite:
#   {c1,c2} -> {c3,c4} via e1      {c2,c3} -> {c4} via e2
# hyperedges: 0 = educt{c1,c2}, 1 = product{c3,c4},
#             2 = educt{c2,c3}, 3 = product{c4}
TOY_TSV = "c1;c2\te1\tc3;c4\nc2;c3\te2\tc4\n"


def kg_from_tsv(tmp_path, text, name="eq.tsv") -> EquationKG:
    path = tmp_path / name
    path.write_text(text)
    return parse_equation_file(path)


@pytest.fixture
def toy_kg(tmp_path) -> EquationKG:
    return kg_from_tsv(tmp_path, TOY_TSV)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def random_kg(tmp_path, rng, n_compounds=12, n_enzymes=5, n_complete=30,
              n_incomplete=10, name="rand.tsv") -> EquationKG:
    """Small random corpus for property tests."""
    lines = []
    for i in range(n_complete + n_incomplete):
        s = rng.choice(n_compounds, size=rng.integers(1, 4), replace=False)
        p = rng.choice(n_compounds, size=rng.integers(1, 4), replace=False)
        enzyme = f"e{rng.integers(n_enzymes)}" if i < n_complete else "?"
        lines.append(";".join(f"c{j}" for j in sorted(s)) + f"\t{enzyme}\t"
                     + ";".join(f"c{j}" for j in sorted(p)))
    return kg_from_tsv(tmp_path, "\n".join(lines) + "\n", name=name)
