import pytest

from hydrolink.scenario import (ScenarioError, bundled_scenarios,
                                load_scenario, modal_sigma_table,
                                parse_scenario, schema_reference,
                                set_by_path)

MINIMAL_WAVEFRONT = """
name: minimal
grid:
  n_samples: 384
  spacing: 12.5e-6
analysis:
  kind: wavefront
"""


class TestParse:
    def test_minimal_wavefront_gets_sensor_defaults(self):
        s = parse_scenario(MINIMAL_WAVEFRONT)
        assert s.sensor.count_x == 23
        assert s.sensor.count_y == 23
        assert s.sensor.pitch == pytest.approx(150e-6)
        assert s.sensor.focal_length == pytest.approx(5.2e-3)
        assert s.seed == 1234
        assert s.channel.length == 5.5
        assert s.channel.attenuation_db_per_m == 5.4

    def test_zero_frames_rejected_with_range_diagnostic(self):
        with pytest.raises(ScenarioError, match="frames"):
            parse_scenario(MINIMAL_WAVEFRONT + "frames: 0\n")

    def test_misspelled_key_gets_suggestion(self):
        doc = MINIMAL_WAVEFRONT.replace(
            "analysis:", "sensor:\n  lenslet_pich: 1.0e-4\nanalysis:")
        with pytest.raises(ScenarioError, match="pitch"):
            parse_scenario(doc)

    def test_unknown_top_key(self):
        with pytest.raises(ScenarioError, match="unknown key"):
            parse_scenario(MINIMAL_WAVEFRONT + "extra_section: 1\n")

    def test_syntax_error_carries_position(self):
        with pytest.raises(ScenarioError, match=r"line \d+"):
            parse_scenario("name: x\nanalysis:\n  kind: [unclosed\n")

    def test_missing_required_name(self):
        with pytest.raises(ScenarioError, match="name"):
            parse_scenario("analysis:\n  kind: wavefront\n")

    def test_missing_analysis_kind(self):
        with pytest.raises(ScenarioError, match="analysis.kind"):
            parse_scenario("name: x\n")

    def test_bad_enum_value(self):
        with pytest.raises(ScenarioError, match="one of"):
            parse_scenario("name: x\nanalysis:\n  kind: wavelet\n")

    def test_out_of_range_value(self):
        with pytest.raises(ScenarioError, match=">="):
            parse_scenario(
                "name: x\nanalysis:\n  kind: qkd-pol\n"
                "channel:\n  length: -2.0\n")

    def test_wrong_type(self):
        with pytest.raises(ScenarioError, match="integer"):
            parse_scenario(
                "name: x\nframes: two\nanalysis:\n  kind: qkd-pol\n")

    def test_empty_document(self):
        with pytest.raises(ScenarioError, match="empty"):
            parse_scenario("")

    def test_images_needs_modes(self):
        with pytest.raises(ScenarioError, match="modes"):
            parse_scenario("name: x\nanalysis:\n  kind: images\n")

    def test_oam_ell_values_validated(self):
        with pytest.raises(ScenarioError, match="distinct"):
            parse_scenario(
                "name: x\nanalysis:\n  kind: qkd-oam\n"
                "  ell_values: [4, 4]\n")

    def test_incommensurate_sensor_grid_rejected(self):
        with pytest.raises(ScenarioError, match="pitch"):
            parse_scenario(
                "name: x\ngrid:\n  n_samples: 384\n  spacing: 1.3e-5\n"
                "analysis:\n  kind: wavefront\n")

    def test_kolmogorov_requires_r0(self):
        with pytest.raises(ScenarioError, match="r0"):
            parse_scenario(
                "name: x\nanalysis:\n  kind: qkd-pol\n"
                "channel:\n  n_screens: 2\n  screens:\n"
                "    kind: kolmogorov\n")

    def test_waist_must_fit_grid(self):
        with pytest.raises(ScenarioError, match="waist"):
            parse_scenario(
                "name: x\nsource:\n  waist: 0.01\nanalysis:\n"
                "  kind: qkd-pol\n")

    def test_scientific_notation_strings_accepted(self):
        # YAML 1.1 parses dotless exponents as strings; coerce them
        s = parse_scenario(
            "name: x\nsensor:\n  pitch: 150e-6\nanalysis:\n"
            "  kind: qkd-pol\n")
        assert s.sensor.pitch == pytest.approx(150e-6)

    def test_explicit_sigma_table(self):
        s = parse_scenario(
            "name: x\nanalysis:\n  kind: qkd-pol\n"
            "channel:\n  n_screens: 1\n  screens:\n"
            "    kind: modal\n    sigmas: {2: 0.4, 5: 0.1}\n")
        assert s.channel.modal_sigmas == ((2, 0.4), (5, 0.1))


class TestRoundTrip:
    def test_yaml_echo_reparses_identically(self):
        s1 = parse_scenario(MINIMAL_WAVEFRONT)
        s2 = parse_scenario(s1.to_yaml())
        assert s1.resolved == s2.resolved
        assert s1.channel == s2.channel
        assert s1.sensor == s2.sensor

    def test_bundled_scenarios_parse(self):
        bundled = bundled_scenarios()
        assert set(bundled) == {"wavefront-survey", "polarization-qkd",
                                "oam-crosstalk", "oam-gallery"}
        for name, text in bundled.items():
            s = parse_scenario(text)
            assert s.name == name

    def test_load_by_name_and_path(self, tmp_path):
        s = load_scenario("polarization-qkd")
        assert s.analysis.kind == "qkd-pol"
        path = tmp_path / "custom.yaml"
        path.write_text(MINIMAL_WAVEFRONT)
        assert load_scenario(path).name == "minimal"

    def test_load_missing(self):
        with pytest.raises(ScenarioError, match="bundled"):
            load_scenario("no-such-scenario")


class TestHelpers:
    def test_modal_sigma_table_tilt_dominated(self):
        table = modal_sigma_table(0.3, 15)
        assert set(table) == set(range(2, 16))
        assert table[2] == pytest.approx(0.3)         # n = 1 anchor
        assert table[2] > table[5] > table[15]

    def test_set_by_path(self):
        doc = {"channel": {"length": 5.5}}
        set_by_path(doc, "channel.length", "3.0")
        set_by_path(doc, "frames", "7")
        assert doc["channel"]["length"] == 3.0
        assert doc["frames"] == 7

    def test_schema_reference_mentions_every_section(self):
        text = schema_reference()
        for token in ("grid", "source", "channel.screens", "sensor",
                      "analysis", "default", "required"):
            assert token in text
