import numpy as np
import pytest

from curvecal import iodesign as io
from curvecal.errors import ConfigError, CurveParseError

TABLE_TOML = """
[[parameter]]
name = "damping1"
role = "calibration"
range = [0.125, 0.875]

[[parameter]]
name = "damping2"
role = "calibration"
range = [0.125, 0.875]

[[parameter]]
name = "x5"
role = "variation"
range = [0.3529, 0.6471]
"""


class TestIUMap:
    def test_table_values(self, tmp_path):
        p = tmp_path / "iumap.toml"
        p.write_text(TABLE_TOML)
        m = io.load_iu_map(p)
        assert m.d == 3
        u1 = m.entries[0]
        assert u1.role == "calibration" and (u1.lo, u1.hi) == (0.125, 0.875)
        x5 = m.entries[2]
        assert x5.role == "variation"
        assert x5.sd == pytest.approx((0.6471 - 0.3529) / 6, abs=1e-12)  # 0.04903...
        assert x5.sd == pytest.approx(0.04903, abs=1e-4)
        assert x5.trunc == pytest.approx(0.1471, abs=1e-6)
        assert x5.nominal == pytest.approx(0.5, abs=1e-12)

    def test_missing_field_named(self, tmp_path):
        p = tmp_path / "iumap.toml"
        p.write_text('[[parameter]]\nname = "a"\nrole = "calibration"\n')
        with pytest.raises(ConfigError, match="range"):
            io.load_iu_map(p)

    def test_lo_ge_hi_rejected(self, tmp_path):
        p = tmp_path / "iumap.toml"
        p.write_text('[[parameter]]\nname = "a"\nrole = "calibration"\nrange = [0.9, 0.1]\n')
        with pytest.raises(ConfigError, match="lo must be < hi"):
            io.load_iu_map(p)

    def test_empty_rejected(self, tmp_path):
        p = tmp_path / "iumap.toml"
        p.write_text("\n")
        with pytest.raises(ConfigError):
            io.load_iu_map(p)

    def test_unit_cube_round_trip(self, tmp_path):
        p = tmp_path / "iumap.toml"
        p.write_text(TABLE_TOML)
        m = io.load_iu_map(p)
        vals = np.array([0.3, 0.7, 0.5])
        assert np.allclose(m.from_unit(m.to_unit(vals)), vals)

    def test_assemble_order(self, tmp_path):
        p = tmp_path / "iumap.toml"
        p.write_text(TABLE_TOML)
        m = io.load_iu_map(p)
        v = m.assemble(delta=[0.1], u=[0.2, 0.3])
        assert v == pytest.approx([0.2, 0.3, 0.6])  # x5 nominal 0.5 + 0.1

    def test_write_round_trip(self, tmp_path):
        p = tmp_path / "iumap.toml"
        p.write_text(TABLE_TOML)
        m = io.load_iu_map(p)
        io.write_iu_map(m, tmp_path / "copy.toml")
        m2 = io.load_iu_map(tmp_path / "copy.toml")
        assert m2 == m


class TestCurves:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(4)
        c = io.Curve(np.sort(rng.uniform(0, 65, 50)), rng.normal(size=50), label="c")
        io.write_curve(c, tmp_path / "c.csv")
        first = (tmp_path / "c.csv").read_bytes()
        c2 = io.load_curve(tmp_path / "c.csv")
        io.write_curve(c2, tmp_path / "c2.csv")
        assert (tmp_path / "c2.csv").read_bytes() == first

    def test_non_monotone_reports_row(self, tmp_path):
        (tmp_path / "bad.csv").write_text("t,y\n1,0.5\n1,0.6\n2,0.7\n")
        with pytest.raises(CurveParseError, match="row 2"):
            io.load_curve(tmp_path / "bad.csv")

    def test_length_mismatch(self, tmp_path):
        (tmp_path / "bad.csv").write_text("t,y\n1\n2,0.7\n")
        with pytest.raises(CurveParseError, match="two columns"):
            io.load_curve(tmp_path / "bad.csv")

    def test_load_dir_counts_and_order(self, tmp_path):
        d = tmp_path / "field"
        d.mkdir()
        t = np.linspace(0, 1, 8)
        for r in range(7):
            io.write_curve(io.Curve(t, np.full(8, float(r))), d / f"rep_{r}.csv")
        curves = io.load_curves(d, kind="field")
        assert len(curves) == 7
        assert [c.label for c in curves] == [f"rep_{r}" for r in range(7)]

    def test_model_curves_carry_design_index(self, tmp_path):
        d = tmp_path / "model"
        d.mkdir()
        t = np.linspace(0, 1, 4)
        # deliberately unpadded names: natural sort must hold 2 < 10
        for k in (1, 2, 10):
            io.write_curve(io.Curve(t, np.full(4, float(k))), d / f"run_{k}.csv")
        curves = io.load_curves(d, kind="model")
        assert [c.label for c in curves] == ["run_1", "run_2", "run_10"]
        assert [c.design_index for c in curves] == [0, 1, 2]


class TestLhd:
    def test_k2_d1_cell_centers(self):
        dm = io.generate_lhd(2, 1, n_restarts=2, seed=0)
        assert sorted(dm.points[:, 0].tolist()) == [0.25, 0.75]

    def test_lhd_property_all_strata(self):
        dm = io.generate_lhd(65, 9, n_restarts=1, seed=12)
        assert dm.points.shape == (65, 9)
        for col in dm.points.T:
            strata = np.floor(col * 65).astype(int)
            assert sorted(strata.tolist()) == list(range(65))

    def test_beats_random_lhds(self):
        seed = 99
        dm = io.generate_lhd(4, 2, n_restarts=50, seed=seed)
        best = dm_min = io.min_pairwise_distance(dm.points)
        rng = np.random.default_rng(seed)
        rand_best = max(
            io.min_pairwise_distance(io._random_lhd(4, 2, rng)) for _ in range(1000)
        )
        assert dm_min >= rand_best - 1e-12

    def test_exchange_history_monotone(self):
        rng = np.random.default_rng(3)
        x = io._random_lhd(20, 3, rng)
        _, history = io._coordinate_exchange(x, rng)
        assert all(b >= a for a, b in zip(history, history[1:]))
        assert history[-1] >= history[0]

    def test_deterministic(self):
        a = io.generate_lhd(16, 4, n_restarts=3, seed=7)
        b = io.generate_lhd(16, 4, n_restarts=3, seed=7)
        assert np.array_equal(a.points, b.points)

    def test_k_too_small(self):
        with pytest.raises(ValueError):
            io.generate_lhd(1, 2, seed=0)

    def test_design_csv_round_trip(self, tmp_path):
        dm = io.generate_lhd(10, 3, n_restarts=2, seed=5, names=("a", "b", "c"))
        io.write_design(dm, tmp_path / "d.csv")
        dm2 = io.load_design(tmp_path / "d.csv")
        assert dm2.column_names == ("a", "b", "c")
        assert np.array_equal(dm2.points, dm.points)

    def test_all_points_distinct(self):
        dm = io.generate_lhd(30, 2, n_restarts=2, seed=1)
        assert len(np.unique(dm.points, axis=0)) == 30
