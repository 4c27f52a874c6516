import numpy as np
import pytest

from inspectsim.scenario import (
    FIGURE_TAGS,
    SCHEMA_VERSION,
    ScenarioError,
    bundled_path,
    load_scenario,
    loads_scenario,
)

MINIMAL = """
schema = 1
duration = 2.0
[initial]
position = [0.0, 0.0, 1.0]
[[planes]]
normal = [0.0, -1.0, 0.0]
distance = 10.0
extent_u = [0.0, 5.0]
extent_v = [0.0, 3.0]
features = 20
"""


def with_lines(*extra, base=MINIMAL):
    head, _, rest = base.partition("[initial]")
    return head + "\n".join(extra) + "\n[initial]" + rest


@pytest.mark.parametrize("tag", FIGURE_TAGS)
def test_bundled_scenarios_validate(tag):
    assert bundled_path(tag).exists()
    sc = load_scenario(tag)
    assert sc.name == tag
    assert sc.n_ticks == round(sc.duration * sc.camera_rate)


def test_minimal_defaults():
    sc = loads_scenario(MINIMAL)
    assert sc.mode == "observer" and sc.camera_rate == 10.0
    np.testing.assert_allclose(sc.chi0, [0, 0, 0.2])
    assert sc.n_ticks == 20 and sc.sample_every == 1
    assert sc.theta_n == 0.05 and sc.theta_d == 0.1


def test_schema_version_checked():
    assert SCHEMA_VERSION == 1
    with pytest.raises(ScenarioError) as err:
        loads_scenario(MINIMAL.replace("schema = 1", "schema = 2"))
    assert err.value.path == "schema"


@pytest.mark.parametrize("lines, path", [
    (['duration_s = 3'], "duration_s"),
    (['camera_rate = -1.0'], "camera_rate"),
    (['control_rate = 5.0'], "control_rate"),
    (['mode = "flying"'], "mode"),
    (['mode = "closed_loop"'], "spec"),
    (['noise = [0.1]'], "noise"),
    (['seed = -3'], "seed"),
    (['ekf = "yes"'], "ekf"),
    (['sample_interval = 0.15'], "sample_interval"),
])
def test_field_paths_in_errors(lines, path):
    with pytest.raises(ScenarioError) as err:
        loads_scenario(with_lines(*lines))
    assert err.value.path == path


def test_plane_errors_carry_index():
    with pytest.raises(ScenarioError) as err:
        loads_scenario(MINIMAL.replace("normal = [0.0, -1.0, 0.0]", "normal = [0.0, 0.0, 0.0]"))
    assert err.value.path == "planes[0].normal"
    with pytest.raises(ScenarioError) as err:
        loads_scenario(MINIMAL.replace("features = 20", "features = 2.5"))
    assert err.value.path == "planes[0].features"


def test_missing_required():
    with pytest.raises(ScenarioError) as err:
        loads_scenario(MINIMAL.replace("duration = 2.0", ""))
    assert err.value.path == "duration"


def test_bad_toml_and_files(tmp_path):
    with pytest.raises(ScenarioError) as err:
        loads_scenario("schema = = 1")
    assert err.value.path == "<file>"
    with pytest.raises(ScenarioError):
        load_scenario(tmp_path / "missing.toml")
    with pytest.raises(ScenarioError):
        bundled_path("fig99")


def test_closed_loop_scenario_contents():
    sc = load_scenario("fig6-9")
    assert sc.mode == "closed_loop" and len(sc.planes) == 2
    assert sc.spec.d_s == 10 and sc.spec.u_max == 0.5 and sc.spec.v_max == 3
    assert sc.mpc.ts == pytest.approx(sc.dt)


def test_error_message_names_field():
    err = ScenarioError("planes[1].extent", "bad")
    assert str(err) == "planes[1].extent: bad"
