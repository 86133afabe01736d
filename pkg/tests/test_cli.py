import json

import numpy as np
import pytest

from parametrix.cli import main
from parametrix.io import params_to_doc, plant_to_doc
from parametrix.lti import FIR
from parametrix.plants import h2_weighted_plant
from parametrix.synthesis import chain_adjacency, example1_plant, synthesize

from conftest import scalar_plant


def write(path, doc):
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


def run(args, tmp_path, name="out.json"):
    out = tmp_path / name
    code = main([*args, "--out", str(out)])
    doc = json.loads(out.read_text(encoding="utf-8")) if out.exists() else None
    return code, doc


@pytest.fixture
def scalar_file(tmp_path):
    return write(tmp_path / "scalar.json", plant_to_doc(scalar_plant(0.5)))


@pytest.fixture
def chain_file(tmp_path):
    return write(tmp_path / "chain.json", plant_to_doc(example1_plant(3)))


def test_factorize_scalar_deadbeat(tmp_path, scalar_file):
    code, doc = run(["factorize", scalar_file, "--mode", "deadbeat"], tmp_path)
    assert code == 0 and doc["pass"]
    assert doc["max_residual"] < 1e-10
    assert set(doc["factors"]) == {"Ul", "Vl", "Nl", "Ml", "Ur", "Vr", "Nr", "Mr"}
    assert doc["command"][:2] == ["factorize", scalar_file]


def test_factorize_unstable_plant_stable_mode_is_precondition_error(tmp_path):
    f = write(tmp_path / "p.json", plant_to_doc(scalar_plant(1.5)))
    code, doc = run(["factorize", f, "--mode", "stable"], tmp_path)
    assert code == 2 and doc["error"] == "PRECONDITION"


def test_factorize_statefb_example1(tmp_path, chain_file):
    code, doc = run(["factorize", chain_file, "--mode", "statefb"], tmp_path)
    assert code == 0
    A = example1_plant(3).A
    Mr = np.array(doc["factors"]["Mr"]["coeffs"])
    assert np.allclose(Mr[0], np.eye(3)) and np.allclose(Mr[1], -A)


def test_verify_bezout_perturbed_factors_exit_3(tmp_path, scalar_file):
    _, doc = run(["factorize", scalar_file], tmp_path, "f.json")
    facs = doc["factors"]
    facs["Vr"]["coeffs"][0][0][0] += 0.1
    ff = write(tmp_path / "bad.json", facs)
    code, doc = run(["verify", scalar_file, ff, "--kind", "bezout"], tmp_path)
    assert code == 3 and not doc["pass"]


def test_map_youla_to_iop_zero_q(tmp_path, scalar_file):
    q = write(tmp_path / "q.json", {"Q": {"coeffs": [[[0.0]]]}})
    code, doc = run(["map", scalar_file, q, "--from", "youla", "--to", "iop", "--mode", "stable"], tmp_path)
    assert code == 0
    Y = np.array(doc["params"]["Y"]["coeffs"])
    U = np.array(doc["params"]["U"]["coeffs"])
    assert np.allclose(Y[0], 1) and np.allclose(Y[1:], 0) and np.allclose(U, 0)


def test_map_slp_to_youla_example1_optimum_is_zero(tmp_path, chain_file):
    r = synthesize(example1_plant(3), "slp", 8)
    p = write(tmp_path / "slp.json", params_to_doc(r.params))
    code, doc = run(["map", chain_file, p, "--from", "slp", "--to", "youla", "--mode", "statefb"], tmp_path)
    assert code == 0
    assert np.max(np.abs(doc["params"]["Q"]["coeffs"])) < 1e-9


def test_map_round_trip_youla_slp_youla(tmp_path, scalar_file):
    Q = [[[0.3]], [[-0.2]], [[0.1]]]
    q = write(tmp_path / "q.json", {"Q": {"coeffs": Q}})
    code, doc = run(["map", scalar_file, q, "--from", "youla", "--to", "slp"], tmp_path, "s.json")
    assert code == 0
    s = write(tmp_path / "s_params.json", doc["params"])
    code, doc = run(["map", scalar_file, s, "--from", "slp", "--to", "youla"], tmp_path, "q2.json")
    assert code == 0
    back = np.array(doc["params"]["Q"]["coeffs"])
    ref = np.zeros_like(back)
    ref[:3] = Q
    assert np.max(np.abs(back - ref)) < 1e-9


def test_map_rejects_bad_source(tmp_path, scalar_file):
    bad = {"Y": {"coeffs": [[[2.0]]]}, "U": {"coeffs": [[[0.0]]]},
           "W": {"coeffs": [[[0.0]]]}, "Z": {"coeffs": [[[1.0]]]}}
    p = write(tmp_path / "iop.json", bad)
    code, doc = run(["map", scalar_file, p, "--from", "iop", "--to", "youla"], tmp_path)
    assert code == 3 and not doc["source_report"]["pass"]


def test_synthesize_example1_slp_si(tmp_path, chain_file):
    s = write(tmp_path / "s.json", {"mask": (chain_adjacency(3) != 0).astype(int).tolist()})
    code, doc = run(["synthesize", chain_file, "--param", "slp", "--structure", s, "--si", "--horizon", "8"],
                    tmp_path)
    assert code == 0
    K = np.array(doc["controller"]["coeffs"])
    assert np.max(np.abs(K[0] + example1_plant(3).A)) < 1e-6
    assert np.max(np.abs(K[1:])) < 1e-6
    assert abs(doc["h2_cost_squared"] - 3) < 1e-8


def test_synthesize_non_qi_structure_exit_4(tmp_path, chain_file, capsys):
    s = write(tmp_path / "s.json", {"mask": (chain_adjacency(3) != 0).astype(int).tolist()})
    code, doc = run(["synthesize", chain_file, "--param", "youla", "--structure", s], tmp_path)
    assert code == 4 and doc["error"] == "QI_VIOLATION"
    assert "--si" in capsys.readouterr().err


def test_synthesize_three_routes_agree(tmp_path):
    rng = np.random.default_rng(5)
    A = rng.standard_normal((2, 2))
    A *= 0.5 / max(abs(np.linalg.eigvals(A)))
    P = h2_weighted_plant(A, rng.standard_normal((2, 1)), rng.standard_normal((1, 2)))
    f = write(tmp_path / "p.json", plant_to_doc(P))
    costs = []
    for route in ("youla", "iop", "slp"):
        extra = ["--tail", "open"] if route == "slp" else []
        code, doc = run(["synthesize", f, "--param", route, *extra], tmp_path, f"{route}.json")
        assert code == 0 and doc["internally_stable"]
        costs.append(doc["h2_cost"])
    assert max(costs) - min(costs) < 1e-6


def test_qi_check(tmp_path, chain_file):
    d = write(tmp_path / "d.json", {"mask": np.eye(3, dtype=int).tolist()})
    diag = write(tmp_path / "diag.json", plant_to_doc(example1_plant(A=np.diag([0.5, 0.2, 0.1]))))
    code, doc = run(["qi-check", diag, d], tmp_path, "a.json")
    assert code == 0 and doc["qi"]
    full = write(tmp_path / "full.json", {"mask": (chain_adjacency(3) != 0).astype(int).tolist()})
    code, doc = run(["qi-check", chain_file, full], tmp_path, "b.json")
    assert code == 3 and doc["qi"] is False


def test_example1_n3(tmp_path):
    code, doc = run(["example1", "--n", "3"], tmp_path)
    assert code == 0 and set(doc["routes"]) == {"youla", "iop", "slp"}
    assert all(r["k_error"] <= 1e-6 for r in doc["routes"].values())


def test_usage_errors_exit_1(tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        main(["synthesize"])
    assert e.value.code == 1
    missing = str(tmp_path / "nope.json")
    assert main(["factorize", missing]) == 1
    bad = write(tmp_path / "bad.json", {"A": [[0.5]]})
    assert main(["factorize", bad]) == 1


def test_infeasible_program_exit_5(tmp_path):
    # K = 0 cannot stabilize an unstable plant, so the structured SLP is empty
    P = scalar_plant(1.5)
    f = write(tmp_path / "p.json", plant_to_doc(P))
    s = write(tmp_path / "s.json", {"mask": [[0]]})
    code, doc = run(["synthesize", f, "--param", "slp", "--structure", s], tmp_path)
    assert code == 5 and doc["error"] == "INFEASIBLE"


def test_output_is_byte_identical(tmp_path, chain_file):
    args = ["synthesize", chain_file, "--param", "youla", "--horizon", "4"]
    main([*args, "--out", str(tmp_path / "a1.json")])
    main([*args, "--out", str(tmp_path / "a2.json")])
    assert (tmp_path / "a1.json").read_bytes() == (tmp_path / "a2.json").read_bytes()


def test_emitted_fir_round_trips(tmp_path, scalar_file):
    _, doc = run(["factorize", scalar_file, "--mode", "riccati"], tmp_path)
    text = (tmp_path / "out.json").read_text(encoding="utf-8")
    again = json.loads(text)
    for k, v in again["factors"].items():
        assert np.array_equal(np.array(v["coeffs"]), np.array(doc["factors"][k]["coeffs"]))
    g = FIR(np.array(doc["factors"]["Nr"]["coeffs"]))
    assert g.coeffs.dtype == float


def test_tolerance_env_override(tmp_path, scalar_file, monkeypatch):
    _, doc = run(["factorize", scalar_file, "--mode", "riccati"], tmp_path)
    monkeypatch.setenv("PARAMETRIX_TOL", "1e-30")
    code, _ = run(["factorize", scalar_file, "--mode", "riccati"], tmp_path, "strict.json")
    assert code == (0 if doc["max_residual"] <= 1e-30 else 3)
