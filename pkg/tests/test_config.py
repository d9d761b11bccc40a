"""Config grammar, typed sections, and override handling."""

import pytest
from hypothesis import given, strategies as st

from kslogistic.config import (
    ConfigError, apply_overrides, dump_config, parse_config_text, typed_section,
)

SAMPLE = """
# comment line
[pde]
chi = 10.0      # inline comment
mu = 5
init = "gaussian"
t_end = 0.5

[experiment]
n_values = [250, 500, 1000]
resolution_check = false
"""


class TestParser:
    def test_sections_and_types(self):
        cfg = parse_config_text(SAMPLE)
        assert cfg["pde"]["chi"] == 10.0
        assert cfg["pde"]["mu"] == 5
        assert cfg["pde"]["init"] == "gaussian"
        assert cfg["experiment"]["n_values"] == [250, 500, 1000]
        assert cfg["experiment"]["resolution_check"] is False

    def test_hash_inside_string_kept(self):
        cfg = parse_config_text('[a]\nkey = "x # y"\n')
        assert cfg["a"]["key"] == "x # y"

    @pytest.mark.parametrize("bad,frag", [
        ("key = 1\n", "outside"),
        ("[s]\nnovalue\n", "key = value"),
        ("[s]\nk = @@\n", "cannot parse"),
        ("[]\n", "empty section"),
    ])
    def test_errors_carry_location(self, bad, frag):
        with pytest.raises(ConfigError, match=frag):
            parse_config_text(bad, source="t.toml")

    @given(st.dictionaries(
        st.text(alphabet="abcdefgh_", min_size=1, max_size=8),
        st.one_of(st.integers(-10**6, 10**6),
                  st.floats(-1e6, 1e6, allow_nan=False),
                  st.booleans(),
                  st.text(alphabet="xyz 0-9", max_size=10)),
        max_size=6))
    def test_dump_parse_roundtrip(self, body):
        text = dump_config({"sec": body})
        assert parse_config_text(text)["sec"] == body


class TestTypedSections:
    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown keys"):
            typed_section({"pde": {"tau": 1.0}}, "pde")

    def test_defaults_fill_in(self):
        cfg = typed_section({"pde": {"chi": 3.0}}, "pde")
        assert cfg.chi == 3.0
        assert cfg.m_grid == 256

    def test_n_values_coerced_to_tuple(self):
        cfg = typed_section({"experiment": {"n_values": [10, 20, 40]}},
                            "experiment")
        assert cfg.n_values == (10, 20, 40)


class TestOverrides:
    def test_scalar_and_list(self):
        base = parse_config_text(SAMPLE)
        out = apply_overrides(base, ["pde.mu=0", "experiment.n_values=[5, 10]"])
        assert out["pde"]["mu"] == 0
        assert out["experiment"]["n_values"] == [5, 10]
        assert base["pde"]["mu"] == 5  # original untouched

    def test_bad_override_shapes(self):
        with pytest.raises(ConfigError, match="section.key=value"):
            apply_overrides({}, ["pde.mu"])
        with pytest.raises(ConfigError, match="dotted"):
            apply_overrides({}, ["mu=0"])
