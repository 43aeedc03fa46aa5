import copy
import csv
import json
import os
import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from peridisloc import cli
from peridisloc.harness import (ConfigError, FieldOutput, build_case, config_from_dict,
                                delta_convergence_study, force_sweep_study, jump_profile,
                                load_config, read_fields_csv, run, sample_line, write_fields)
from peridisloc.harness import runner
from peridisloc.harness.output import read_table, write_fields_vtk
from peridisloc.oracle import edge_fields

B = 8.551e-10

EDGE = {
    "name": "edge-small",
    "geometry": {"dim": 2, "length": 1e-6, "nodes": 20},
    "material": {"E": 1.2141e11, "nu": 0.34, "mode": "plane_strain"},
    "dislocations": [{"type": "edge", "burgers": [B, 0.0], "core": [0.0, 0.0],
                      "cut_direction": [-1.0, 0.0], "normal": [0.0, 1.0]}],
    "discretization": {"M": 3.15},
    "boundary": {"source": "oracle-edge"},
}

TRIVIAL = {
    "geometry": {"dim": 2, "length": 1.0, "nodes": 2},
    "material": {"E": 1e9, "nu": 0.25},
    "discretization": {"M": 1.8},
}


def edge_config(**changes):
    d = copy.deepcopy(EDGE)
    for key, value in changes.items():
        d[key] = value
    return config_from_dict(d)


def write_toml(path, text):
    path.write_text(text)
    return path


EDGE_TOML = """
name = "cli-edge"
[geometry]
dim = 2
length = 1e-6
nodes = 20
[material]
E = 1.2141e11
nu = 0.34
[[dislocations]]
type = "edge"
burgers = [8.551e-10, 0.0]
[discretization]
M = 3.15
[boundary]
source = "oracle-edge"
"""


class TestConfig:
    @pytest.mark.parametrize("mutate, field", [
        (lambda d: d["geometry"].pop("nodes"), "geometry.nodes"),
        (lambda d: d["material"].update(nu=0.5), "material.nu"),
        (lambda d: d["material"].update(mode="3d"), "material.mode"),
        (lambda d: d["dislocations"][0].update(burgers=[0.0, B]), "dislocations[0].burgers"),
        (lambda d: d["dislocations"][0].update(core=[2e-6, 0.0]), "dislocations[0].core"),
        (lambda d: d["dislocations"][0].update(type="kink"), "dislocations[0].type"),
        (lambda d: d["discretization"].update(delta=1e-8), "discretization"),
        (lambda d: d["discretization"].update(M=0.5), "discretization"),
        (lambda d: d["boundary"].update(source="oracle-screw"), "boundary.source"),
        (lambda d: d.update(solver={"f_dec": 2.0}), "solver"),
        (lambda d: d.update(solver={"warm_start": "yes"}), "solver.warm_start"),
        (lambda d: d.update(output={"formats": ["png"]}), "output.formats"),
        (lambda d: d.update(study={"type": "force-sweep", "separations": [0.0]}), "study.type"),
        (lambda d: d["geometry"].update(colour="red"), "geometry"),
    ])
    def test_field_level_messages(self, mutate, field):
        d = copy.deepcopy(EDGE)
        mutate(d)
        with pytest.raises(ConfigError) as info:
            config_from_dict(d)
        assert str(info.value).startswith(field)

    def test_defaults(self):
        cfg = edge_config()
        assert cfg.material.rho == 8000.0
        assert_allclose(cfg.horizon, 3.15 * 5e-8)
        assert cfg.dislocations[0].line_direction == pytest.approx((0, 0, 1))
        assert cfg.study.type == "single" and not cfg.warm_start

    def test_hash(self):
        a, b = edge_config(), edge_config()
        assert a.hash() == b.hash()
        moved = edge_config(output={"directory": "elsewhere"})
        assert moved.hash() == a.hash()
        stiffer = edge_config(material={"E": 2e11, "nu": 0.34})
        assert stiffer.hash() != a.hash()

    def test_load_errors(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "missing.toml")
        bad = write_toml(tmp_path / "bad.toml", "[geometry\n")
        with pytest.raises(ConfigError):
            load_config(bad)

    def test_load_toml(self, tmp_path):
        cfg = load_config(write_toml(tmp_path / "e.toml", EDGE_TOML))
        assert cfg.name == "cli-edge" and cfg.geometry.nodes == (20, 20)

    def test_demo_configs_validate(self):
        demos = os.path.join(os.path.dirname(__file__), os.pardir, "demos")
        names = sorted(f for f in os.listdir(demos) if f.endswith(".toml"))
        assert names
        for name in names:
            load_config(os.path.join(demos, name))


class TestOutput:
    def fields(self, n=25, seed=0):
        rng = np.random.default_rng(seed)
        return FieldOutput(np.arange(n) * 3, rng.normal(size=(n, 3)) * 1e-7,
                           rng.normal(size=(n, 3)) * 1e-10, rng.normal(size=(n, 6)) * 1e8,
                           rng.normal(size=n) * 1e-3)

    def test_csv_round_trip_bitwise(self, tmp_path):
        f = self.fields()
        (path,) = write_fields(f, tmp_path, ("csv",))
        g = read_fields_csv(path)
        assert_array_equal(g.ids, f.ids)
        assert_array_equal(g.table(), f.table())
        header = path.read_text().splitlines()[0]
        assert header == "id,x,y,z,ux,uy,uz,sxx,syy,szz,sxy,sxz,syz,theta"

    def test_vtk_layout(self, tmp_path):
        f = self.fields(4)
        path = write_fields_vtk(f, tmp_path / "f.vtk")
        lines = path.read_text().splitlines()
        assert lines[0] == "# vtk DataFile Version 3.0"
        assert lines[2:5] == ["ASCII", "DATASET POLYDATA", "POINTS 4 double"]
        assert "VECTORS displacement double" in lines
        assert "TENSORS stress double" in lines
        k = lines.index("TENSORS stress double")
        t = np.array(lines[k + 1].split(), dtype=float).reshape(3, 3)
        assert_array_equal(t, t.T)
        assert t[0, 1] == f.stress[0, 3]

    def test_shape_checked(self):
        with pytest.raises(ValueError, match="stress"):
            FieldOutput(np.arange(2), np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((2, 5)), np.zeros(2))

    def test_sample_line(self):
        X = np.column_stack([np.arange(10.0), np.zeros(10), np.zeros(10)])
        idx, s = sample_line(X, [0, 0, 0], [9, 0, 0], spacing=1.0)
        assert_array_equal(idx, np.arange(10))
        assert_allclose(s, np.arange(10.0))
        idx, _ = sample_line(X, [0, 0, 0], [9, 0, 0], points=50)
        assert_array_equal(idx, np.arange(10))
        with pytest.raises(ValueError, match="zero length"):
            sample_line(X, [1, 1, 1], [1, 1, 1], points=3)


class TestRun:
    def test_trivial_four_nodes(self, tmp_path):
        res = run(config_from_dict(TRIVIAL), tmp_path, formats=("csv", "vtk"))
        lines = (tmp_path / "fields.csv").read_text().splitlines()
        assert len(lines) == 5
        rows = list(csv.DictReader(lines))
        for r in rows:
            assert float(r["z"]) == 0 and float(r["uz"]) == 0
            assert float(r["sxz"]) == 0 and float(r["syz"]) == 0 and float(r["szz"]) == 0
        assert (tmp_path / "fields.vtk").exists()
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["D_u"] is None and report["nodes_interior"] == 4
        assert res.state.converged

    def test_zero_dislocation_zero_fields(self):
        d = copy.deepcopy(EDGE)
        d.pop("dislocations")
        d["boundary"] = {"source": "zero"}
        res = run(config_from_dict(d), write=False)
        assert not res.fields.displacement.any()
        assert not res.fields.stress.any()
        assert res.report["D_u"] is None and res.report["total_energy"] == 0

    def test_edge_report(self, tmp_path):
        cfg = edge_config(output={"probes": [{"name": "vertical", "start": [0.0, -2e-7],
                                              "end": [0.0, 2e-7]}]})
        res = run(cfg, tmp_path)
        r = res.report
        assert r["converged"] and 0 < r["D_u"] < 0.05
        assert r["config_hash"] == cfg.hash()
        assert r["residual_final"] <= 1e-6 * r["residual_initial"]
        assert r["sign_flips"] == []
        prof = r["jump_profiles"][0]
        s, j = np.asarray(prof["s"]), np.asarray(prof["jump_over_b"])
        # s > 0 on the cut side: jump rises toward b away from the core, decays beyond it
        assert np.all(np.diff(j[s > 0][::-1]) > 0)
        assert j[s > 3 * cfg.horizon].min() > 0.95
        assert j[s < -3 * cfg.horizon].max() < 0.05
        rows = read_table(tmp_path / "probe_vertical.csv")
        assert len(rows) >= 8 and "sxx_ref" in rows[0]
        s = [float(row["s"]) for row in rows]
        assert all(b > a for a, b in zip(s, s[1:]))
        saved = json.loads((tmp_path / "report.json").read_text())
        assert saved["config_hash"] == cfg.hash()

    def test_deterministic_given_hash(self):
        a = run(edge_config(), write=False)
        b = run(edge_config(), write=False)
        assert a.report["config_hash"] == b.report["config_hash"]
        assert_array_equal(a.fields.table(), b.fields.table())

    def test_unwritable_fails_before_solving(self, tmp_path, monkeypatch):
        blocker = tmp_path / "file"
        blocker.write_text("x")

        def boom(cfg):
            raise AssertionError("solver reached")

        monkeypatch.setattr(runner, "build_case", boom)
        with pytest.raises(OSError):
            run(edge_config(), blocker / "out")

    def test_warm_start_matches_cold(self):
        d = copy.deepcopy(EDGE)
        d["solver"] = {"warm_start": True, "rtol": 1e-9}
        warm = run(config_from_dict(d), write=False)
        d["solver"] = {"rtol": 1e-9}
        cold = run(config_from_dict(d), write=False)
        assert abs(warm.report["D_u"] - cold.report["D_u"]) < 1e-6
        assert warm.report["iterations"] < cold.report["iterations"]


class TestMeasurements:
    def test_jump_profile_of_oracle_field(self):
        case = build_case(edge_config(geometry={"dim": 2, "length": 1e-6, "nodes": 40}))
        u = edge_fields(B, 0.34, case.material.mu).displacement(case.nodes.positions)
        prof = jump_profile(case.nodes, u, case.dislocations[0])
        far = np.asarray(prof["s"]) > 1e-7
        assert_allclose(np.asarray(prof["jump_over_b"])[far], 1.0, atol=0.02)

    def test_jump_profile_unaligned_is_none(self):
        d = copy.deepcopy(EDGE)
        d["dislocations"][0].update(cut_direction=[-0.6, -0.8], normal=[-0.8, 0.6],
                                    burgers=[-0.6 * B, -0.8 * B])
        d["boundary"] = {"source": "oracle"}
        case = build_case(config_from_dict(d))
        assert jump_profile(case.nodes, np.zeros((case.nodes.size, 3)), case.dislocations[0]) is None

    def test_interpolate_grid_linear_exact(self):
        case = build_case(edge_config())
        X = case.nodes.positions
        vals = np.column_stack([X[:, 0] * 2 + X[:, 1], -X[:, 1]])
        pts = np.array([[1.3e-8, -2.1e-8, 0], [0.2e-6, 0.1e-6, 0]])
        got = runner.interpolate_grid(case.nodes, vals, pts)
        assert_allclose(got, np.column_stack([pts[:, 0] * 2 + pts[:, 1], -pts[:, 1]]), rtol=1e-10)

    def test_sign_verification_flips(self, monkeypatch):
        real = runner.oracle_for

        class Reversed:
            def __init__(self, f):
                self.f = f

            def displacement(self, X):
                return -self.f.displacement(X)

        def reversed_oracle(dislocations, material, **kw):
            return Reversed(real(dislocations, material, **kw))

        case = build_case(edge_config())
        d = case.dislocations[0]
        same, flipped = runner.verify_sign(d, case.material, case.nodes.spacing, 1e-17)
        assert not flipped and same is d
        monkeypatch.setattr(runner, "oracle_for", reversed_oracle)
        other, flipped = runner.verify_sign(d, case.material, case.nodes.spacing, 1e-17)
        assert flipped and other.sign == -d.sign


class TestStudies:
    def test_single_entry_table(self, tmp_path):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            rows = delta_convergence_study(edge_config(), horizons=[3.15 * 5e-8], out_dir=tmp_path)
        assert len(rows) == 1 and rows[0]["N"] == 20
        table = read_table(tmp_path / "delta_convergence.csv")
        assert list(table[0]) == ["delta", "M", "N", "D_u", "iterations", "converged", "wall_time"]

    def test_non_integer_node_count(self):
        with pytest.raises(ConfigError, match="integer"):
            delta_convergence_study(edge_config(), horizons=[1e-7], write=False)

    def fake_run(self, values, fail_at=None):
        calls = []

        def fake(cfg, out=None, write=True, **kw):
            k = len(calls)
            calls.append(cfg)
            if k == fail_at:
                raise RuntimeError("member run failed")
            report = {"D_u": values[k], "iterations": 1, "converged": True, "wall_time": 0.0}
            return runner.RunResult(None, None, None, report)

        return fake

    def test_sorted_and_warns_when_not_monotone(self, monkeypatch, tmp_path):
        monkeypatch.setattr(runner, "run", self.fake_run([0.03, 0.02, 0.01]))
        with pytest.warns(RuntimeWarning, match="monotone"):
            rows = delta_convergence_study(edge_config(), nodes=[20, 40, 30], out_dir=tmp_path)
        assert [r["N"] for r in rows] == [40, 30, 20]

    def test_partial_results_saved(self, monkeypatch, tmp_path):
        monkeypatch.setattr(runner, "run", self.fake_run([0.03, 0.02, 0.01], fail_at=1))
        with pytest.raises(RuntimeError):
            delta_convergence_study(edge_config(), nodes=[20, 30, 40], out_dir=tmp_path)
        assert len(read_table(tmp_path / "delta_convergence.csv")) == 1

    def pair_config(self):
        d = copy.deepcopy(EDGE)
        second = copy.deepcopy(d["dislocations"][0])
        second["core"] = [1e-7, 0.0]
        d["dislocations"].append(second)
        d["boundary"] = {"source": "oracle-superposition"}
        return config_from_dict(d)

    def test_force_sweep_rejects_sub_spacing(self):
        cfg = self.pair_config()
        with pytest.raises(ConfigError, match="grid spacing"):
            force_sweep_study(cfg, separations=[0.0, 2e-8], write=False)
        with pytest.raises(ConfigError):
            force_sweep_study(edge_config(), separations=[1e-7], write=False)

    def test_force_sweep_small(self, tmp_path):
        cfg = self.pair_config()
        dx = cfg.spacing
        seps = np.arange(5) * dx + 4 * dx
        rows = force_sweep_study(cfg, separations=seps, out_dir=tmp_path)
        table = read_table(tmp_path / "force_sweep.csv")
        assert list(table[0]) == ["separation", "NLPK", "LPK", "EG", "energy"]
        got = {m: np.array([r[m] for r in rows]) for m in ("NLPK", "LPK", "EG")}
        mu = cfg.material.E / (2 * (1 + cfg.material.nu))
        assert_allclose(got["LPK"], mu * B**2 / (2 * np.pi * (1 - 0.34) * seps), rtol=1e-9)
        assert np.all(np.isfinite(got["NLPK"]))
        assert np.all(np.isfinite(got["EG"][1:-1])) and np.isnan(got["EG"][[0, -1]]).all()
        # like edges repel: positive glide force along +x for every method
        assert np.all(got["NLPK"] > 0) and np.all(got["EG"][1:-1] > 0)

    def test_eg_symmetric_pair_is_zero(self):
        # energies of a pair are even in the separation: E(s) = E(-s)
        from peridisloc.oracle import driving_force_eg
        s = np.arange(-3, 4) * 5e-9
        pos, F = driving_force_eg(list(zip(s, 1e-9 / (1 + (s / 2e-8) ** 2))))
        assert F[list(pos).index(0.0)] == 0.0


class TestCli:
    def test_run_ok(self, tmp_path, capsys):
        path = write_toml(tmp_path / "e.toml", EDGE_TOML)
        log = tmp_path / "log.csv"
        code = cli.main(["run", "--config", str(path), "--out", str(tmp_path / "o"),
                         "--format", "both", "--log-csv", str(log), "--threads", "1"])
        assert code == 0
        assert (tmp_path / "o" / "fields.csv").exists() and (tmp_path / "o" / "fields.vtk").exists()
        assert log.read_text().startswith("iteration,residual,dt,gamma,power_sign")
        assert "D_u=" in capsys.readouterr().out

    def test_config_error_exit(self, tmp_path, capsys):
        path = write_toml(tmp_path / "e.toml", EDGE_TOML.replace("nu = 0.34", "nu = 0.7"))
        assert cli.main(["run", "--config", str(path)]) == 2
        assert "material.nu" in capsys.readouterr().err
        assert cli.main(["run", "--config", str(tmp_path / "nope.toml")]) == 2

    def test_unwritable_exit(self, tmp_path):
        path = write_toml(tmp_path / "e.toml", EDGE_TOML)
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert cli.main(["run", "--config", str(path), "--out", str(blocker / "o")]) == 2

    def test_solver_error_exit(self, tmp_path, capsys):
        path = write_toml(tmp_path / "e.toml", EDGE_TOML + "[solver]\nmax_iter = 3\n")
        assert cli.main(["run", "--config", str(path), "--out", str(tmp_path)]) == 3
        assert "solver error" in capsys.readouterr().err

    def test_probe_from_fields(self, tmp_path):
        path = write_toml(tmp_path / "e.toml", EDGE_TOML)
        assert cli.main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == 0
        code = cli.main(["probe", "--fields", str(tmp_path / "o" / "fields.csv"),
                         "--start", "0,-2e-7", "--end=0,2e-7", "--out", str(tmp_path / "p")])
        assert code == 0
        rows = read_table(tmp_path / "p" / "probe.csv")
        assert len(rows) >= 8
        assert all(abs(float(r["x"])) < 5e-8 for r in rows)

    def test_probe_needs_inputs(self):
        assert cli.main(["probe", "--fields", "x.csv"]) == 2

    def test_threads_env_and_flag(self, monkeypatch):
        import numba
        old = numba.get_num_threads()
        try:
            monkeypatch.setenv(cli.THREADS_ENV, "1")
            assert cli.set_threads() == 1
            monkeypatch.setenv(cli.THREADS_ENV, "not-a-number")
            with pytest.raises(ConfigError):
                cli.set_threads()
            # the flag wins over the environment, even a malformed one
            assert cli.set_threads(1) == 1
            assert cli.set_threads(10**6) == numba.config.NUMBA_NUM_THREADS
        finally:
            numba.set_num_threads(old)
