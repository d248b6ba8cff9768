import pytest

from finsler.config import ExperimentConfig, load_config
from finsler.geometry import ConfigError
from finsler.solver import SolverOptions


def write(tmp_path, text, name="c.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_defaults_build_a_valid_geometry():
    cfg = ExperimentConfig.from_dict({})
    base = cfg.base_config()
    assert base.p == 2.0 and base.delta == max(cfg.deltas)
    assert cfg.norm == {"norm": "euclidean"}
    assert isinstance(cfg.solver_options(), SolverOptions)


def test_full_toml_round_trip(tmp_path):
    path = write(tmp_path, """
norm = "lq"
q = 4.0
p = 1.7
deltas = [0.1, 0.02]
w = 0.2
[phi]
kind = "affine"
coefficients = [0.5, 1.0]
[mesh]
h_far = 0.3
mesh_check = false
[solver]
gtol = 1e-9
[domain]
half_width = 5.0
""")
    cfg = load_config(path)
    assert cfg.norm == {"norm": "lq", "q": 4.0}
    base = cfg.base_config(0.02)
    assert base.delta == 0.02 and base.half_width == 5.0
    assert cfg.mesh_options() == ({"h_far": 0.3}, False)
    assert cfg.solver_options().gtol == 1e-9


def test_single_delta_key(tmp_path):
    assert load_config(write(tmp_path, "delta = 0.05\n")).deltas == [0.05]


@pytest.mark.parametrize("text,match", [
    ("colour = 1\n", "unknown key"),
    ("[mesh]\nh_fra = 0.1\n", r"\[mesh\]"),
    ("[solver]\ntolerance = 1\n", r"\[solver\]"),
    ("delta = 0.1\ndeltas = [0.1]\n", "either"),
    ("p = 0.5\n", r"p in \(1, N\]"),
    ("p = 2.5\n", r"p in \(1, N\]"),
    ("deltas = []\n", "empty"),
    ("deltas = [0.1, 0.1]\n", "distinct"),
    ("deltas = [-0.1]\n", "positive"),
    ("tau = 0.7\n", "tau"),
    ('norm = "lq"\nq = 1.0\n', "q"),
    ('norm = "spline"\n', "unknown norm"),
    ('[solver]\ninitial = "guess"\n', "initial"),
    ("R1 = -1.0\n", "radi"),
])
def test_invalid_configs_raise(tmp_path, text, match):
    with pytest.raises(ConfigError, match=match):
        load_config(write(tmp_path, text))


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.toml")
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "p = = 2\n"))
