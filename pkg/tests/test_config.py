import pytest

from steklov_lab.errors import ConfigError
from steklov_lab.experiments.config_file import parse_config, parse_config_text

EXAMPLE = """
# Koch snowflake, interior spectrum
experiment = steklov
boundary = koch
generation = 3
h = 0.02   # target edge length
k_compare = 5
lambdas = 0.1, 1, 10
dset_radii = 1/3, 1/9, 1/27
"""


def test_parse_example():
    config = parse_config_text(EXAMPLE)
    assert config.experiment == "steklov"
    assert config.boundary == "koch"
    assert config.generation == 3
    assert config.h == 0.02
    assert config.lambdas == [0.1, 1.0, 10.0]
    assert config.dset_radii == pytest.approx([1 / 3, 1 / 9, 1 / 27])


def test_defaults():
    config = parse_config_text("experiment=mesh")
    assert config.h == 0.05
    assert config.domain == "interior"
    assert config.outer_condition == "dirichlet"
    assert config.h_outer is None
    assert config.seed == 0


def test_parse_list_of_shapes():
    config = parse_config_text("experiment=truncation-convergence\nouter_shapes = circle, koch\nL = 2, 4")
    assert config.outer_shapes == ["circle", "koch"]
    assert config.L == [2.0, 4.0]


@pytest.mark.parametrize(
    "text,line,key",
    [
        ("experiment=mesh\nh=0.1\nwidth=3", 3, "width"),
        ("experiment=mesh\nh=0.1\nh=0.2", 3, "h"),
        ("experiment=mesh\njust a line", 2, None),
        ("experiment=eigen", 1, "experiment"),
        ("experiment=mesh\n\nh=-1", 3, "h"),
        ("experiment=mesh\nsegments=many", 2, "segments"),
        ("experiment=mesh\ngeneration=12", 2, "generation"),
        ("experiment=mesh\nlambdas=1, fast", 2, "lambdas"),
    ],
)
def test_config_errors_name_line_and_key(text, line, key):
    with pytest.raises(ConfigError) as excinfo:
        parse_config_text(text, source="run.cfg")
    assert excinfo.value.line == line
    assert excinfo.value.key == key
    assert excinfo.value.message.startswith(f"run.cfg:{line}:")


def test_missing_experiment():
    with pytest.raises(ConfigError) as excinfo:
        parse_config_text("h=0.1")
    assert excinfo.value.key == "experiment"


def test_parse_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(EXAMPLE)
    assert parse_config(path).k_compare == 5
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "missing.cfg")


def test_config_is_frozen():
    config = parse_config_text("experiment=mesh")
    with pytest.raises(Exception):
        config.h = 0.1
