"""Topology file parsing."""

import pytest

from tileblas.config import default_topology, load_topology, parse_topology
from tileblas.devices import ACCELERATOR, HOST_COMPUTE
from tileblas.errors import ConfigError

GOOD = """
# the fast pair
host_device_bandwidth = 6.54e9
peer_bandwidth = 7.8e9          ; trailing comment

[device 0]
kind = accelerator
speed = 2e12
arena_capacity = 268435456
peer_group = hub0

[device 1]
speed = 1e12                    # kind defaults to accelerator
arena_capacity = 134217728
peer_group = hub0

[device 2]
kind = host_compute
speed = 5e10
"""


def test_parse_full_example():
    t = parse_topology(GOOD)
    assert t.host_device_bandwidth == 6.54e9
    assert t.peer_bandwidth == 7.8e9
    assert [d.device_id for d in t.devices] == [0, 1, 2]
    d0, d1, d2 = t.devices
    assert d0.kind == ACCELERATOR and d0.speed == 2e12
    assert d0.arena_capacity == 268435456 and d0.peer_group == "hub0"
    assert d1.kind == ACCELERATOR          # defaulted
    assert d2.kind == HOST_COMPUTE and d2.speed == 5e10
    assert t.peer_group_of(d0) == t.peer_group_of(d1) == "hub0"


def test_defaults_when_globals_absent():
    t = parse_topology("[device 0]\nspeed = 1e12\n")
    assert t.host_device_bandwidth == 6.54e9
    assert t.peer_bandwidth == 7.8e9
    assert t.devices[0].peer_group is None


def test_comments_and_blank_lines_ignored():
    t = parse_topology("\n# hi\n; yo\n[device 3]  # inline\nspeed=1e9\n")
    assert t.devices[0].device_id == 3


def _expect_error(text, fragment):
    with pytest.raises(ConfigError) as exc:
        parse_topology(text)
    assert fragment in str(exc.value), str(exc.value)


def test_error_line_numbers():
    _expect_error("x = 1\n", "line 1")
    _expect_error("[device 0]\nspeed = 1\nbogus = 2\n", "line 3")


def test_unknown_keys_rejected():
    _expect_error("volume = 11\n[device 0]\n", "unknown top-level key")
    _expect_error("[device 0]\ncolor = red\n", "unknown device key")


def test_bad_section_headers():
    _expect_error("[device 0\n", "unterminated")
    _expect_error("[gadget 0]\n", "expected [device <id>]")
    _expect_error("[device zero]\n", "not an integer")
    _expect_error("[device 0 1]\n", "expected [device <id>]")


def test_missing_value_and_bad_numbers():
    _expect_error("[device 0]\nspeed =\n", "missing value")
    _expect_error("[device 0]\nspeed = fast\n", "not a number")
    _expect_error("[device 0]\nspeed = -1\n", "must not be negative")
    _expect_error("host_device_bandwidth = 0\n[device 0]\n", "must be > 0")


def test_duplicate_key_and_device():
    _expect_error("[device 0]\nspeed=1\nspeed=2\n", "duplicate key")
    _expect_error("[device 0]\n[device 0]\n", "duplicate device id")


def test_host_compute_rejects_accelerator_keys():
    _expect_error("[device 0]\nkind=host_compute\narena_capacity=64\n",
                  "does not apply")
    _expect_error("[device 0]\nkind=host_compute\npeer_group=g\n",
                  "does not apply")


def test_fractional_arena_capacity_rejected():
    _expect_error("[device 0]\narena_capacity = 100.5\n", "whole number")


def test_no_devices_rejected():
    _expect_error("host_device_bandwidth = 1e9\n", "no [device")
    _expect_error("", "no [device")


def test_zero_speed_accelerator_rejected_by_topology():
    _expect_error("[device 0]\nspeed = 0\n", "speed must be > 0")


def test_host_only_topology_is_valid():
    t = parse_topology("[device 0]\nkind = host_compute\nspeed = 1e10\n")
    assert t.accelerators() == []
    assert len(t.host_workers()) == 1


def test_load_topology_missing_file(tmp_path):
    with pytest.raises(ConfigError) as exc:
        load_topology(str(tmp_path / "nope.topo"))
    assert "cannot read" in str(exc.value)


def test_load_topology_round_trip(tmp_path):
    p = tmp_path / "fabric.topo"
    p.write_text(GOOD)
    t = load_topology(str(p))
    assert len(t.devices) == 3


def test_default_topology_shape():
    t = default_topology()
    assert len(t.accelerators()) == 2
    assert t.peer_group_of(t.devices[0]) == t.peer_group_of(t.devices[1])


def test_bundled_config_files_parse():
    import pathlib
    root = pathlib.Path(__file__).resolve().parent.parent / "configs"
    for path in sorted(root.glob("*.topo")):
        load_topology(str(path))
