"""INI run-configuration parsing and validation."""
import numpy as np
import pytest

from mvfuse.config import load_config, parse_config
from mvfuse.dataio import BoxCluster, GroundAnnulus, VerticalPole
from mvfuse.errors import ConfigError

MINIMAL = """
[run]
seed = 7
num_classes = 3
num_scans = 2
points_per_scan = 500

[scene]
primitive0 = annulus class=0 weight=1.0 r=2:40 z=-2.0:-1.6

[scorer_a]
base_accuracy = 0.9

[scorer_b]
base_accuracy = 0.8
"""


class TestSyntheticParsing:
    def test_minimal_file_fills_defaults(self):
        cfg = parse_config(MINIMAL)
        assert cfg.seed == 7
        assert cfg.num_classes == 3
        assert cfg.synthetic
        assert cfg.tau == 0.85
        assert cfg.histogram_bins == 50
        assert cfg.strata_edges == (0.0, 10.0, 20.0, 30.0, 45.0)
        assert cfg.rv.height == 64 and cfg.rv.width == 2048
        assert cfg.bev.r_bins == 128 and cfg.bev.r_max == 50.0
        assert cfg.head.num_neighbors == 15
        assert cfg.head.epochs == 20
        assert cfg.head.hidden == (64, 64, 64)
        assert cfg.head.seed == 7  # the run seed feeds the head
        assert cfg.head.tau == cfg.tau
        assert cfg.augment.jitter_sigma == 0.0
        assert cfg.data_dir is None
        assert cfg.raw_text == MINIMAL

    def test_all_three_primitive_kinds_parse(self):
        cfg = parse_config(MINIMAL.replace(
            "primitive0 = annulus class=0 weight=1.0 r=2:40 z=-2.0:-1.6",
            "primitive0 = annulus class=0 weight=0.5 r=2:40 z=-2.0:-1.6 intensity=0.1:0.2\n"
            "primitive1 = box class=1 weight=0.3 size=4x2x1.6 r=6:30 z=-1.7 count=6\n"
            "primitive2 = pole class=2 weight=0.2 radius=0.15 z=-1.7:2.5 r=5:35 count=8",
        ))
        ann, box, pole = cfg.primitives
        assert isinstance(ann, GroundAnnulus) and ann.intensity == (0.1, 0.2)
        assert isinstance(box, BoxCluster) and box.size == (4.0, 2.0, 1.6)
        assert box.count == 6 and box.z_base == -1.7
        assert isinstance(pole, VerticalPole) and pole.radius == 0.15
        assert pole.count == 8

    def test_scorer_options_parse(self):
        cfg = parse_config(MINIMAL.replace(
            "[scorer_a]\nbase_accuracy = 0.9",
            "[scorer_a]\nbase_accuracy = 0.9\ntemperature = 0.3\n"
            "error_temperature = 0.8\nrange_curve = 5:0.0, 40:0.3\n"
            "confusions = 0>1:0.2, 2>0:0.1\ntemperature_jitter = 0.5",
        ))
        prof = cfg.scorer_a
        assert prof.base_accuracy == 0.9
        assert prof.error_temperature == 0.8
        assert prof.range_curve == ((5.0, 0.0), (40.0, 0.3))
        assert prof.confusions == ((0, 1, 0.2), (2, 0, 0.1))
        assert prof.temperature_jitter == 0.5

    def test_inline_comments_are_stripped(self):
        cfg = parse_config(MINIMAL.replace("seed = 7", "seed = 7  # the run seed"))
        assert cfg.seed == 7

    def test_overrides_reach_every_section(self):
        text = MINIMAL + """
[rv]
height = 32
width = 512
mode = cylindrical

[bev]
r_bins = 64
r_max = 40.0

[head]
num_neighbors = 5
epochs = 3
hidden = 16,16

[augment]
jitter_sigma = 0.02
flip_prob = 0.25
"""
        cfg = parse_config(text)
        assert cfg.rv.height == 32 and cfg.rv.mode == "cylindrical"
        assert cfg.bev.r_bins == 64 and cfg.bev.r_max == 40.0
        assert cfg.head.num_neighbors == 5 and cfg.head.hidden == (16, 16)
        assert cfg.augment.jitter_sigma == 0.02 and cfg.augment.flip_prob == 0.25


class TestDataMode:
    def test_data_section_switches_modes(self):
        cfg = parse_config("""
[run]
seed = 1
num_classes = 4

[data]
dir = /tmp/scans
remap = /tmp/remap.txt
""")
        assert not cfg.synthetic
        assert str(cfg.data_dir) == "/tmp/scans"
        assert str(cfg.remap_path) == "/tmp/remap.txt"
        assert cfg.primitives is None and cfg.scorer_a is None


class TestErrors:
    def _fails(self, text, match):
        with pytest.raises(ConfigError, match=match):
            parse_config(text)

    def test_missing_run_section(self):
        self._fails("[scene]\nprimitive0 = annulus", r"\[run\]")

    def test_scene_and_data_are_mutually_exclusive(self):
        self._fails(MINIMAL + "\n[data]\ndir = x\nremap = y\n", "exactly one")
        self._fails("[run]\nseed = 1\nnum_classes = 2\n", "exactly one")

    def test_missing_required_keys(self):
        self._fails(MINIMAL.replace("seed = 7\n", ""), "missing required key")
        self._fails(MINIMAL.replace("num_scans = 2\n", ""), "missing required key")

    def test_unparsable_value_names_the_key(self):
        self._fails(MINIMAL.replace("seed = 7", "seed = banana"),
                    r"\[run\] seed: cannot parse")

    def test_tau_bounds(self):
        self._fails(MINIMAL.replace("[run]", "[run]\ntau = 1.5"), "tau")
        self._fails(MINIMAL.replace("[run]", "[run]\ntau = -0.1"), "tau")

    def test_strata_must_increase(self):
        self._fails(MINIMAL.replace("[run]", "[run]\nstrata_edges = 0,20,10"),
                    "increasing")

    def test_histogram_bins_positive(self):
        self._fails(MINIMAL.replace("[run]", "[run]\nhistogram_bins = 0"),
                    "histogram_bins")

    def test_unknown_sections_are_rejected(self):
        self._fails(MINIMAL + "\n[banana]\nx = 1\n", "unknown sections")

    def test_unknown_scene_keys_are_rejected(self):
        self._fails(MINIMAL.replace("primitive0", "shape0"), "unknown key")

    def test_primitive_problems(self):
        self._fails(MINIMAL.replace("annulus", "sphere"), "unknown primitive kind")
        self._fails(MINIMAL.replace(" weight=1.0", ""), "missing field 'weight'")
        self._fails(MINIMAL.replace("r=2:40", "r=2:40 r=3:4"), "duplicate field")
        self._fails(MINIMAL.replace("z=-2.0:-1.6", "z=-2.0:-1.6 wings=2"),
                    "unknown fields")
        self._fails(MINIMAL.replace("class=0", "class=9"), "outside")
        self._fails(MINIMAL.replace("r=2:40", "r=40:2"), r"\[scene\]")
        self._fails(MINIMAL.replace(
            "primitive0 = annulus class=0 weight=1.0 r=2:40 z=-2.0:-1.6\n", ""),
            "no primitives")

    def test_scorer_problems(self):
        self._fails(MINIMAL.replace("[scorer_b]\nbase_accuracy = 0.8", ""),
                    r"\[scorer_b\]")
        self._fails(MINIMAL.replace("base_accuracy = 0.9", "base_accuracy = 1.4"),
                    r"\[scorer_a\]")
        self._fails(MINIMAL.replace(
            "base_accuracy = 0.9", "base_accuracy = 0.9\nconfusions = 0>9:0.2"),
            r"\[scorer_a\]")

    def test_projection_sections_validate(self):
        self._fails(MINIMAL + "\n[rv]\nmode = panorama\n", r"\[rv\]")
        self._fails(MINIMAL + "\n[rv]\nfov_up_deg = -30\n", r"\[rv\]")
        self._fails(MINIMAL + "\n[bev]\nr_max = -1\n", r"\[bev\]")

    def test_head_section_validates(self):
        self._fails(MINIMAL + "\n[head]\nepochs = -1\n", r"\[head\]")
        self._fails(MINIMAL + "\n[head]\nhidden =\n", r"\[head\]")
        self._fails(MINIMAL + "\n[head]\nclass_weighting = log\n", r"\[head\]")

    def test_augment_bounds(self):
        self._fails(MINIMAL + "\n[augment]\nflip_prob = 1.5\n", "flip_prob")
        self._fails(MINIMAL + "\n[augment]\njitter_sigma = -0.1\n", "jitter_sigma")

    def test_syntax_errors_surface_as_config_errors(self):
        self._fails("run]\nseed = 1\n", "syntax")

    def test_data_mode_requires_paths(self):
        self._fails("[run]\nseed = 1\nnum_classes = 2\n\n[data]\ndir = x\n",
                    "missing required key")


class TestReferenceFile:
    def test_reference_run_settings(self):
        cfg = load_config("configs/reference.ini")
        assert cfg.seed == 42
        assert cfg.num_classes == 8
        assert cfg.num_scans == 20
        assert cfg.points_per_scan == 20000
        assert cfg.tau == 0.85
        assert cfg.strata_edges == (0.0, 10.0, 20.0, 30.0, 45.0)
        assert len(cfg.primitives) == 8
        assert cfg.head.seed == 42
        assert cfg.head.num_neighbors == 15
        assert cfg.head.epochs == 20
        assert cfg.head.lr_max == 0.05
        assert cfg.scorer_a.temperature_jitter == 0.85
        assert cfg.scorer_b.temperature_jitter == 0.85
        # soft random errors are what lets the score average beat either
        # single view; sharp confusions are what the head is left to fix
        assert cfg.scorer_a.error_temperature == 0.7
        assert cfg.scorer_b.error_temperature == 0.7
        # the two views must be differently wrong or fusion has nothing to do
        assert cfg.scorer_a != cfg.scorer_b

    def test_loading_missing_file_fails_cleanly(self):
        with pytest.raises(ConfigError, match="does not exist"):
            load_config("configs/never-written.ini")
