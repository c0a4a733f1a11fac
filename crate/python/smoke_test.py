#!/usr/bin/env python3
"""Smoke test for the ancreg_py extension module.

Build the module first:

    cargo build --release -p ancreg-python

then run this script from the repository root:

    python3 python/smoke_test.py
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def load_module():
    candidates = [
        REPO / "target" / "release" / "libancreg_py.so",
        REPO / "target" / "debug" / "libancreg_py.so",
        REPO / "target" / "release" / "libancreg_py.dylib",
        REPO / "target" / "debug" / "libancreg_py.dylib",
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        sys.exit("build the module first: cargo build --release -p ancreg-python")
    stage = Path(tempfile.mkdtemp(prefix="ancreg-py-"))
    # CPython loads extension modules named <module>.so on linux and mac.
    shutil.copy2(built, stage / "ancreg_py.so")
    sys.path.insert(0, str(stage))
    import ancreg_py

    return ancreg_py


def main():
    ancreg = load_module()

    # Model handling: the bundled benchmark round-trips through text.
    model = ancreg.Model.reference()
    assert model.p == 6
    assert len(model.edges()) == 6
    again = ancreg.Model.parse(model.to_text())
    assert again.to_text() == model.to_text()
    assert model.ancestors(3) == [0, 1, 2]
    assert model.ancestors(5) == [0, 1, 2, 3, 4]

    # Seeded simulation is reproducible.
    rows = model.simulate(20_000, seed=7)
    assert rows == model.simulate(20_000, seed=7)
    assert rows != model.simulate(20_000, seed=8)
    assert len(rows) == 20_000 and len(rows[0]) == 6

    # Nodewise scan: ancestors of X4 (index 3) stand out, non-ancestors do not.
    scan = ancreg.scan(rows, target=3)
    assert scan.z[3] is None and scan.p_raw[3] is None
    assert all(abs(z) > 3.0 for z in (scan.z[0], scan.z[1], scan.z[2])), scan.z
    assert all(abs(scan.z[k]) < 4.0 for k in (4, 5)), scan.z

    # Holm correction matches the hand-computed step-down values.
    corrected = ancreg.holm([0.01, 0.04], cap=True)
    assert abs(corrected[0] - 0.02) < 1e-12 and abs(corrected[1] - 0.04) < 1e-12
    uncapped = ancreg.holm([0.6, 0.7], cap=False)
    assert abs(uncapped[0] - 1.2) < 1e-12 and abs(uncapped[1] - 1.2) < 1e-12

    # Tail probabilities stay accurate far out.
    assert abs(ancreg.pvalue_from_z(1.959964) - 0.05) < 1e-6
    assert 0.0 < ancreg.pvalue_from_z(30.74) < 1e-200

    # Full graph detection: no false claims on this seed, and the strong
    # relations around X4 are recovered at n = 20k.
    graph = ancreg.detect_graph(rows, alpha=0.05)
    truth = {j: set(model.ancestors(j)) for j in range(6)}
    for j, claimed in enumerate(graph.ancestors):
        assert set(claimed) <= truth[j], (j, claimed)
    assert {1, 2} <= set(graph.ancestors[3])
    assert graph.alpha_hat <= graph.alpha
    assert graph.model_check_p is not None

    # Parent refinement: X2, X3 are direct causes of X4, X1 is not.
    tests = ancreg.parents(rows, target=3, ancestors=[0, 1, 2])
    by_node = {k: p for (k, _, _, p) in tests}
    assert by_node[1] < 1e-10 and by_node[2] < 1e-10
    assert by_node[0] > 1e-4

    # Errors surface as ValueError.
    try:
        ancreg.scan(rows, target=3, f="no-such-f")
    except ValueError as e:
        assert "nonlinearity" in str(e)
    else:
        raise AssertionError("expected ValueError")

    print("ancreg_py smoke test: OK")
    print(f"  z for X1..X3 vs X4: {[round(scan.z[k], 2) for k in range(3)]}")
    print(f"  detected ancestors of X4: {sorted(graph.ancestors[3])}")
    print(f"  alpha_hat = {graph.alpha_hat}, model check p = {graph.model_check_p}")


if __name__ == "__main__":
    main()
