import pytest

from agebif.config import ConfigError, load_config, parse_config

TABLE_17 = ", ".join(["1.0"] * 17)


def test_minimal_config_takes_defaults():
    cfg = parse_config("[grid]\nn_interior = 16\n[params]\nalpha1 = 2.0\n")
    assert cfg.age.steps == 128 and cfg.age.a_max == 1.0
    assert cfg.params.alpha1 == 2.0 and cfg.params.beta2 == 1.0
    assert cfg.prey.kind == "constant" and cfg.run.slack == 0.05
    assert cfg.output.formats == ("csv", "json")


def test_shipped_default_config_loads():
    cfg = load_config("configs/default.toml")
    assert cfg.grid.n_interior == 64 and cfg.age.steps == 128
    assert cfg.run.eta == (1.2, 1.5, 2.0, 3.0)


def test_profile_kinds_build():
    text = f"""
[age]
steps = 16
[profiles.prey]
kind = "exp_decay"
rate = 2.0
[profiles.predator]
kind = "table"
values = [{TABLE_17}]
"""
    model = parse_config(text).build()
    assert model.prey.raw_samples[-1] < model.prey.raw_samples[0]
    assert model.predator.raw_samples.shape == (17,)


def test_perturbation_rescales_normalized_profile():
    base = parse_config("[grid]\nn_interior = 8\n[age]\nsteps = 16").build()
    bent = parse_config("[grid]\nn_interior = 8\n[age]\nsteps = 16\n[profiles.prey]\nperturb = 1.01").build()
    assert bent.prey.scale == pytest.approx(1.01 * base.prey.scale)
    assert bent.predator.scale == base.predator.scale


@pytest.mark.parametrize(
    "text",
    [
        "[params]\nalpha1 = -1.0",
        "[params]\nbeta2 = 0",
        "[age]\nsteps = 16\n[profiles.prey]\nkind = \"table\"\nvalues = [1.0, 1.0]",
        "[age]\nsteps = 16\n[profiles.prey]\nkind = \"table\"\nvalues = [" + ", ".join(["1.0"] * 8 + ["0.0"] * 9) + "]",
        "[grid]\nn_interior = 2",
        "[grid]\nlength = 0.0",
        "[age]\nsteps = 8",
        "[grid]\nbogus = 1",
        "[nonsense]\nx = 1",
        "[profiles.prey]\nkind = \"weird\"",
        "[profiles.herbivore]\nkind = \"constant\"",
        "[run]\neta = 1.5",
        "[run]\neta = [1.5, -2.0]",
        "[run]\npoint_cap = 0",
        "[output]\nformats = [\"xml\"]",
        "[grid]\nn_interior = \"many\"",
        "this is not toml",
    ],
)
def test_invalid_configs_are_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.toml")


def test_echo_round_trips_values():
    cfg = parse_config("[run]\neta = [1.5]\n")
    echo = cfg.echo()
    assert echo["run"]["eta"] == [1.5]
    assert echo["profiles"]["prey"]["kind"] == "constant"
