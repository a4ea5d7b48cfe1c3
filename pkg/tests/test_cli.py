"""Tests for the command-line interface."""

import numpy as np
import pytest
from typer.testing import CliRunner

from ephemap import __version__
from ephemap.cli import app
from ephemap.config import read_config_file
from ephemap.model import AttributedPointCloud
from ephemap.update import DeltaMap
from ephemap.utils.io import MapArchive, read_archive, write_archive, write_delta, write_poses

from .scenes import map_from_session

runner = CliRunner()


@pytest.fixture
def archive(tmp_path):
    rng = np.random.default_rng(0)
    cloud = AttributedPointCloud(rng.uniform(0, 5, (40, 3)), rng.uniform(0.01, 0.99, 40), rng.uniform(0.01, 0.99, 40))
    path = tmp_path / "m.ephm"
    write_archive(MapArchive(cloud, "0123456789abcdef", ("s1",)), path)
    return path


@pytest.fixture
def delta_file(tmp_path):
    delta = DeltaMap(
        "s2",
        "abc",
        np.array([[0.5, 0.5, 0.0], [3.5, 0.5, 0.0]]),
        np.array([1, 2], dtype=np.int8),
        np.array([0.3, 0.5]),
        np.array([0.9, 0.36]),
        np.array([1.0, 0.0]),
    )
    path = tmp_path / "d.delta.txt"
    write_delta(delta, path)
    return path


class TestBasics:
    """Tests for version and listing commands."""

    def test_version(self):
        result = runner.invoke(app, ["--version"])
        assert result.exit_code == 0
        assert __version__ in result.output

    def test_scenarios(self):
        result = runner.invoke(app, ["scenarios"])
        assert result.exit_code == 0
        assert "parking-lot" in result.output
        assert "drift-corridor" in result.output

    def test_info(self, archive):
        result = runner.invoke(app, ["info", str(archive)])
        assert result.exit_code == 0
        assert "points: 40" in result.output
        assert "0123456789abcdef" in result.output


class TestExitCodes:
    """Tests for error reporting."""

    def test_corrupt_poses(self, tmp_path):
        session = tmp_path / "s"
        (session / "scans").mkdir(parents=True)
        (session / "poses.txt").write_text("1 0 0\n")
        result = runner.invoke(app, ["init", str(session), "-o", str(tmp_path / "m.ephm")])
        assert result.exit_code == 2
        assert not (tmp_path / "m.ephm").exists()

    def test_unknown_scene(self, tmp_path):
        result = runner.invoke(app, ["synth", "no-such-scene", str(tmp_path / "out")])
        assert result.exit_code == 2

    def test_missing_config_file(self, archive, tmp_path):
        result = runner.invoke(app, ["extract-static", str(archive), "-o", str(tmp_path / "s.ply"), "-c", "none.toml"])
        assert result.exit_code == 2

    def test_missing_archive(self, tmp_path):
        result = runner.invoke(app, ["info", str(tmp_path / "none.ephm")])
        assert result.exit_code == 2

    def test_empty_seed_file(self, archive, tmp_path):
        seed = tmp_path / "seed.txt"
        seed.write_text("")
        result = runner.invoke(app, ["update", str(archive), str(tmp_path), "--init-pose", str(seed)])
        assert result.exit_code == 2
        assert "No pose" in result.output


class TestMapCommands:
    """Tests for commands that read or write archives and deltas."""

    def test_extract_two_thresholds(self, archive, tmp_path):
        out = tmp_path / "static.xyz"
        result = runner.invoke(app, ["extract-static", str(archive), "-o", str(out), "--tau", "0.3", "--tau", "0.7"])
        assert result.exit_code == 0
        assert (tmp_path / "static_tau0.30.xyz").exists()
        assert (tmp_path / "static_tau0.70.xyz").exists()
        assert not out.exists()

    def test_extract_with_preview(self, archive, tmp_path):
        preview = tmp_path / "p.png"
        result = runner.invoke(
            app, ["extract-static", str(archive), "-o", str(tmp_path / "s.ephm"), "--preview", str(preview)]
        )
        assert result.exit_code == 0
        assert preview.read_bytes()[:4] == b"\x89PNG"

    def test_delta_summary(self, delta_file):
        result = runner.invoke(app, ["delta", "summary", str(delta_file)])
        assert result.exit_code == 0
        assert "deleted" in result.output
        assert "emerged" in result.output

    def test_heatmap(self, delta_file, tmp_path):
        out = tmp_path / "heat.txt"
        result = runner.invoke(app, ["heatmap", str(delta_file), "-o", str(out), "--cell", "1.0"])
        assert result.exit_code == 0
        assert out.read_text().splitlines()[0] == "# cell=1"

    def test_eval_align_record_on_stdout(self, tmp_path):
        cloud = tmp_path / "a.xyz"
        cloud.write_text("0 0 0\n1 0 0\n0 1 0\n")
        result = runner.invoke(app, ["eval", "align", str(cloud), str(cloud)])
        assert result.exit_code == 0
        assert result.stdout.strip() == "ac=1 rmse=0 cd=0 inliers=3"


class TestConfigCommands:
    """Tests for the config subcommands."""

    def test_set_get_unset(self, tmp_path):
        path = tmp_path / "c.toml"
        result = runner.invoke(app, ["config", "set", "tau_g", "0.6", "-f", str(path)])
        assert result.exit_code == 0
        assert read_config_file(path) == {"tau_g": 0.6}

        result = runner.invoke(app, ["config", "get", "tau_g", "-f", str(path)])
        assert "tau_g: 0.6" in result.output

        result = runner.invoke(app, ["config", "unset", "tau_g", "-f", str(path)])
        assert result.exit_code == 0
        assert read_config_file(path) == {}

    def test_set_unknown_key(self, tmp_path):
        result = runner.invoke(app, ["config", "set", "colour", "red", "-f", str(tmp_path / "c.toml")])
        assert result.exit_code == 1

    def test_set_out_of_range(self, tmp_path):
        result = runner.invoke(app, ["config", "set", "tau_l", "2", "-f", str(tmp_path / "c.toml")])
        assert result.exit_code == 2

    def test_get_default(self, tmp_path):
        result = runner.invoke(app, ["config", "get", "sigma_o", "-f", str(tmp_path / "c.toml")])
        assert result.exit_code == 0
        assert "sigma_o: 0.1" in result.output
        assert "default" in result.output

    def test_show(self, tmp_path):
        result = runner.invoke(app, ["config", "show", "-f", str(tmp_path / "c.toml")])
        assert result.exit_code == 0
        assert "sigma_f" in result.output


class TestPipelineCommands:
    """Tests for init and update through the CLI."""

    def test_init_then_update_with_seed(self, room_dir, room_spec, tmp_path):
        config = str(room_dir / "config.toml")
        base = tmp_path / "base.ephm"
        result = runner.invoke(app, ["init", str(room_dir / "session_01"), "-o", str(base), "-c", config])
        assert result.exit_code == 0, result.output

        seed = tmp_path / "seed.txt"
        write_poses([map_from_session(room_spec, 2)], seed)
        nxt = tmp_path / "next.ephm"
        delta = tmp_path / "d.txt"
        result = runner.invoke(
            app,
            [
                "update",
                str(base),
                str(room_dir / "session_02"),
                "-o",
                str(nxt),
                "-d",
                str(delta),
                "--init-pose",
                str(seed),
                "--diagnostics",
                str(tmp_path / "diag.txt"),
                "-c",
                config,
            ],
        )
        assert result.exit_code == 0, result.output
        assert read_archive(nxt).lineage == ("room-01", "room-02")
        assert delta.exists()
        assert (tmp_path / "diag.txt").exists()

        replayed = tmp_path / "replayed.ephm"
        result = runner.invoke(app, ["delta", "replay", str(base), str(delta), "-o", str(replayed), "-c", config])
        assert result.exit_code == 0
        assert np.array_equal(read_archive(replayed).cloud.eps_g, read_archive(nxt).cloud.eps_g)
