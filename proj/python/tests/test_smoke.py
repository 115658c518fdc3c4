import itertools
import math

import pytest

import mtpc


def spec(kind, n=3, r=2, v=3):
    return mtpc.ArchitectureSpec(kind, n, 1 if kind == mtpc.ArchKind.FF else r, v)


@pytest.mark.parametrize("kind", [mtpc.ArchKind.FF, mtpc.ArchKind.CP, mtpc.ArchKind.HMM, mtpc.ArchKind.BTREE])
def test_joint_sums_to_one(kind):
    c = mtpc.build_circuit(spec(kind))
    assert c.validate()["ok"]
    p = mtpc.CircuitParams.random(c, seed=3, logit_scale=1.5)
    table = mtpc.enumerate_joint(c, p)
    assert math.fsum(table) == pytest.approx(1.0, abs=1e-12)
    assert mtpc.partition(c, p) == pytest.approx(0.0, abs=1e-12)
    for i, w in enumerate(itertools.product(range(3), repeat=3)):
        assert math.exp(mtpc.evaluate(c, p, list(w))) == pytest.approx(table[i], abs=1e-12)


def test_prefix_and_conditional_agree():
    c = mtpc.build_circuit(spec(mtpc.ArchKind.HMM))
    p = mtpc.CircuitParams.random(c, seed=1)
    pm = mtpc.prefix_marginals(c, p, [2, 0, 1])
    cond = mtpc.conditional_distribution(c, p, [2])
    assert sum(cond) == pytest.approx(1.0)
    assert math.exp(pm[1] - pm[0]) == pytest.approx(cond[0])


def test_sampling_is_seeded():
    c = mtpc.build_circuit(spec(mtpc.ArchKind.CP))
    p = mtpc.CircuitParams.random(c, seed=2)
    assert mtpc.sample_window(c, p, seed=9) == mtpc.sample_window(c, p, seed=9)
    assert len(mtpc.greedy_window(c, p)) == 3


def test_json_round_trip():
    c = mtpc.build_circuit(spec(mtpc.ArchKind.BTREE, n=4))
    again = mtpc.Circuit.from_json(c.to_json())
    assert again.to_json() == c.to_json()
    with pytest.raises(mtpc.ConfigError):
        mtpc.Circuit.from_json("{")


def test_errors_map_to_python():
    with pytest.raises(mtpc.SpecError):
        mtpc.build_circuit(mtpc.ArchitectureSpec(mtpc.ArchKind.CP, 0, 2, 3))
    c = mtpc.build_circuit(spec(mtpc.ArchKind.FF))
    p = mtpc.CircuitParams.uniform(c)
    with pytest.raises(mtpc.ContractError):
        mtpc.evaluate(c, p, [0, 5, 0])


def test_cli_entry_point():
    code, out, _ = mtpc.cli(["selftest"])
    assert code == 0, out
    code, _, err = mtpc.cli(["frobnicate"])
    assert code == 2
