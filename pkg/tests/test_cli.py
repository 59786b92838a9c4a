import json
import os

import numpy as np
import pytest

from glsurf.cli import ConfigError, parse_config, plan_from_config, main


class TestParseConfig:
    def test_empty_gives_defaults(self):
        cfg = parse_config(None)
        assert cfg["kappa_list"] == "25"
        assert cfg["delta"] == 0.5
        plan = plan_from_config(cfg | {"e1": 0.15, "e2": 0.42})
        assert plan.kappa_list == [25.0]

    def test_file_parsing(self, tmp_path):
        p = tmp_path / "plan.cfg"
        p.write_text("# comment\nkappa_list = 15,25,35\nmu_list = 1\nres = 48x96\n")
        cfg = parse_config(str(p))
        assert cfg["kappa_list"] == "15,25,35"
        plan = plan_from_config(cfg | {"e1": 0.15, "e2": 0.42})
        assert plan.kappa_list == [15.0, 25.0, 35.0]
        assert plan.resolution.n_r == 48

    def test_unknown_key_named(self, tmp_path):
        p = tmp_path / "plan.cfg"
        p.write_text("frobnicate = 1\n")
        with pytest.raises(ConfigError, match="frobnicate"):
            parse_config(str(p))

    def test_type_error(self, tmp_path):
        p = tmp_path / "plan.cfg"
        p.write_text("seed = notanumber\n")
        with pytest.raises(ConfigError, match="seed"):
            parse_config(str(p))

    def test_overrides_beat_file(self, tmp_path):
        p = tmp_path / "plan.cfg"
        p.write_text("seed = 1\n")
        cfg = parse_config(str(p), {"seed": "7"})
        assert cfg["seed"] == 7

    def test_mu_regime_warning(self, capsys):
        cfg = parse_config(None, {"kappa_list": "16", "mu_list": "2.5", "e1": "0.1", "e2": "0.4"})
        plan_from_config(cfg)
        err = capsys.readouterr().err
        assert "warning" in err and "regime" in err

    def test_nonpositive_H_is_error(self):
        cfg = parse_config(None, {"kappa_list": "16", "mu_list": "5", "e1": "0.1", "e2": "0.4"})
        with pytest.raises(ConfigError):
            plan_from_config(cfg)


class TestExitCodes:
    def test_no_command_usage(self, capsys):
        assert main([]) == 2

    def test_unknown_subcommand(self):
        with pytest.raises(SystemExit) as exc:
            main(["definitely-not-a-command"])
        assert exc.value.code == 2

    def test_config_error_exit_2(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("res = banana\n")
        code = main(["verify-expansion", "--plan", str(cfg), "--out", str(tmp_path)])
        assert code == 2


class TestSubcommands:
    def test_bulk_e2_n1(self, tmp_path, capsys):
        code = main(["bulk-e2", "--N", "1", "--res", "64", "--out", str(tmp_path)])
        assert code == 0
        out = capsys.readouterr().out
        assert "E2 =" in out and "beta" in out
        table = (tmp_path / "bulk_e2.csv").read_text().splitlines()
        assert table[0].startswith("N,")
        data = json.loads((tmp_path / "bulk_e2.json").read_text())
        assert 0.0 < data["E2"] <= 0.5

    def test_project_lll(self, tmp_path, capsys):
        code = main(["project-lll", "--patch", "16", "--n", "65", "--seed", "3",
                     "--out", str(tmp_path)])
        assert code == 0
        out = capsys.readouterr().out
        assert "idempotence residual" in out
        assert (tmp_path / "lll_projection.csv").exists()

    @pytest.mark.slow
    def test_surface_e1_small(self, tmp_path, capsys):
        code = main(["surface-e1", "--ell", "2,4", "--T", "8", "--out", str(tmp_path)])
        assert code == 0
        out = capsys.readouterr().out
        assert "E1 =" in out
        rows = (tmp_path / "surface_e1.csv").read_text().splitlines()
        assert rows[0] == "ell,d_ell,e1_est,tail,iters"
        assert len(rows) == 3

    @pytest.mark.slow
    def test_gl_min_writes_run_dir_and_is_deterministic(self, tmp_path):
        args = ["gl-min", "--kappa_list", "8", "--mu_list", "0",
                "--res", "48x96", "--tol", "1e-8", "--restarts", "1",
                "--seed", "7", "--out", str(tmp_path)]
        assert main(args) == 0
        assert main(args) == 0
        runs = sorted(os.listdir(tmp_path))
        assert len(runs) == 2
        manifests = []
        for r in runs:
            with open(tmp_path / r / "manifest.json") as fh:
                m = json.load(fh)
            m.pop("timing")
            manifests.append(m)
        assert manifests[0] == manifests[1]
        assert (tmp_path / runs[0] / "diagnostics.json").exists()
        files = os.listdir(tmp_path / runs[0])
        assert any(f.startswith("fields_") for f in files)
