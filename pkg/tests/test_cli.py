import json

import numpy as np
import pytest

from qchom.cli import main, resolve_config
from qchom.errors import ConfigError


def run_cli(tmp_path, config, name="cfg.json", extra_args=()):
    path = tmp_path / name
    path.write_text(json.dumps(config))
    return main(["--config", str(path), *extra_args])


def read_manifest(outdir):
    with open(outdir / "manifest.json") as f:
        return json.load(f)


HARMONIC_A = {"type": "trig", "const": 2.0,
              "terms": [{"k": [1, 0], "sin": 1.0}, {"k": [0, 1], "cos": 0.5}]}


class TestCheckMap:
    def test_rational_map_exit_2_with_violation_in_manifest(self, tmp_path):
        out = tmp_path / "out"
        cfg = {"command": "check-map", "map": {"R": [[1.0], [2.0]],
                                               "grid_shape": [8, 8]},
               "k_max": 3, "output_dir": str(out)}
        assert run_cli(tmp_path, cfg) == 2
        manifest = read_manifest(out)
        assert [-2, 1] in manifest["result"]["violations"]
        assert (out / "violations.csv").exists()

    def test_golden_map_exit_0(self, tmp_path):
        out = tmp_path / "out"
        cfg = {"command": "check-map", "map": "golden", "k_max": 10,
               "output_dir": str(out)}
        assert run_cli(tmp_path, cfg) == 0
        manifest = read_manifest(out)
        assert manifest["result"]["passed"]
        assert not (out / "violations.csv").exists()


class TestValidation:
    def test_unknown_key_rejected_by_name(self, tmp_path, capsys):
        cfg = {"command": "check-map", "map": "golden", "bogus_key": 1}
        assert run_cli(tmp_path, cfg) == 2
        assert "bogus_key" in capsys.readouterr().err

    def test_unknown_nested_key_rejected(self, tmp_path, capsys):
        cfg = {"command": "check-map", "map": {"preset": "golden",
                                               "wrong": True}}
        assert run_cli(tmp_path, cfg) == 2
        assert "map.wrong" in capsys.readouterr().err

    def test_missing_required_key(self, tmp_path, capsys):
        cfg = {"command": "solve-cell", "map": "golden"}
        assert run_cli(tmp_path, cfg) == 2
        err = capsys.readouterr().err
        assert "operator" in err or "density" in err or "xi" in err

    def test_unknown_command(self, tmp_path, capsys):
        assert run_cli(tmp_path, {"command": "frobnicate"}) == 2
        assert "command" in capsys.readouterr().err

    def test_invalid_json(self, tmp_path, capsys):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        assert main(["--config", str(path)]) == 2

    def test_threads_auto_resolves(self):
        resolved = resolve_config({"command": "check-map", "map": "golden",
                                   "threads": "auto"}, {})
        assert isinstance(resolved["threads"], int) and resolved["threads"] >= 1

    def test_bad_threads_rejected(self):
        with pytest.raises(ConfigError):
            resolve_config({"command": "check-map", "map": "golden",
                            "threads": "sixteen"}, {})


class TestManifest:
    def test_defaults_are_materialized(self, tmp_path):
        out = tmp_path / "out"
        cfg = {"command": "check-map", "map": "golden", "output_dir": str(out)}
        assert run_cli(tmp_path, cfg) == 0
        manifest = read_manifest(out)
        config = manifest["config"]
        # every default the program filled in appears explicitly
        for key in ("k_max", "hard_tolerance", "seed", "threads", "verbose"):
            assert key in config
        assert config["k_max"] == 8
        assert config["hard_tolerance"] == 1e-12
        assert "qchom_version" in manifest


class TestDeterminism:
    def test_byte_identical_reruns(self, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            cfg = {"command": "verify-1d", "map": "golden", "a": HARMONIC_A,
                   "epsilons": [0.25, 0.125], "threads": 1, "seed": 7,
                   "output_dir": str(out),
                   "map": {"preset": "golden", "grid_shape": [32, 32]}}
            assert run_cli(tmp_path, cfg, name=f"{name}.json") == 0
            outs.append(out)
        a = (outs[0] / "verify_1d.csv").read_bytes()
        b = (outs[1] / "verify_1d.csv").read_bytes()
        assert a == b

    def test_penrose_pgm_deterministic(self, tmp_path):
        images = []
        for name in ("a", "b"):
            out = tmp_path / f"p{name}"
            cfg = {"command": "penrose", "resolution": 64, "extent": 5.0,
                   "output_dir": str(out)}
            assert run_cli(tmp_path, cfg, name=f"p{name}.json") == 0
            images.append((out / "penrose.pgm").read_bytes())
        assert images[0] == images[1]
        assert images[0].startswith(b"P5\n64 64\n255\n")


class TestCommands:
    def test_check_rank(self, tmp_path):
        out = tmp_path / "out"
        cfg = {"command": "check-rank", "operator": "curl3",
               "output_dir": str(out)}
        assert run_cli(tmp_path, cfg) == 0
        manifest = read_manifest(out)
        assert manifest["result"]["constant_rank"] and manifest["result"]["r"] == 2
        assert (out / "rank_report.csv").exists()

    def test_gen_field_roundtrip(self, tmp_path):
        out = tmp_path / "out"
        cfg = {"command": "gen-field",
               "map": {"preset": "golden", "grid_shape": [16, 16]},
               "field": HARMONIC_A, "output_dir": str(out)}
        assert run_cli(tmp_path, cfg) == 0
        from qchom.fourier import load_field
        field = load_field(out / "field.qlhf")
        assert field.values.shape == (16, 16, 1)
        assert float(field.values.mean()) == pytest.approx(2.0, abs=1e-12)
        assert (out / "field_slice.png").exists()

    def test_solve_cell_quadratic(self, tmp_path):
        out = tmp_path / "out"
        cfg = {"command": "solve-cell",
               "map": {"preset": "golden", "grid_shape": [64, 64]},
               "operator": "curl1",
               "density": {"type": "isotropic_quadratic", "a": HARMONIC_A},
               "xi": [1.0], "tol": 1e-10, "output_dir": str(out)}
        assert run_cli(tmp_path, cfg) == 0
        manifest = read_manifest(out)
        assert manifest["result"]["converged"]
        assert manifest["result"]["energy"] == pytest.approx(1.6150804387832627,
                                                             rel=1e-6)
        for name in ("history.csv", "solution.csv", "corrector.qlhf",
                     "history.png"):
            assert (out / name).exists()

    def test_solve_cell_nonconvergence_exit_3(self, tmp_path):
        out = tmp_path / "out"
        cfg = {"command": "solve-cell",
               "map": {"preset": "golden", "grid_shape": [64, 64]},
               "operator": "curl1",
               "density": {"type": "isotropic_quadratic", "a": HARMONIC_A},
               "xi": [1.0], "tol": 1e-14, "max_iter": 2,
               "output_dir": str(out)}
        assert run_cli(tmp_path, cfg) == 3

    def test_effective_tensor_constant_matrix_verbatim(self, tmp_path):
        out = tmp_path / "out"
        cfg = {"command": "effective-tensor",
               "map": {"preset": "identity2", "grid_shape": [16, 16]},
               "operator": "curl2",
               "density": {"type": "isotropic_quadratic", "d": 2,
                           "a": {"type": "constant", "value": 3.0}},
               "output_dir": str(out)}
        assert run_cli(tmp_path, cfg) == 0
        rows = (out / "tensor.csv").read_text().strip().splitlines()
        data = np.array([[float(v) for v in line.split(",")]
                         for line in rows[1:]])
        assert np.abs(data - 3.0 * np.eye(2)).max() <= 1e-12

    def test_fhom_table(self, tmp_path):
        out = tmp_path / "out"
        cfg = {"command": "fhom-table",
               "map": {"preset": "golden", "grid_shape": [32, 32]},
               "operator": "curl1",
               "density": {"type": "isotropic_quadratic", "a": HARMONIC_A},
               "xis": [[0.0], [1.0], [2.0]], "output_dir": str(out)}
        assert run_cli(tmp_path, cfg) == 0
        rows = (out / "fhom_table.csv").read_text().strip().splitlines()
        assert rows[0] == "xi1,f_hom"
        values = [float(r.split(",")[1]) for r in rows[1:]]
        assert values[0] == pytest.approx(0.0, abs=1e-12)
        assert values[2] == pytest.approx(4.0 * values[1], rel=1e-8)

    def test_pairing_stdout_block(self, tmp_path, capsys):
        out = tmp_path / "out"
        cfg = {"command": "pairing",
               "map": {"preset": "golden", "grid_shape": [16, 16]},
               "u": {"terms": [{"amplitude": 1.0}]},
               "phi": {"terms": [{"k": [0, 1], "y_phase": -1.5707963267948966}]},
               "epsilons": [0.125, 0.0625], "output_dir": str(out)}
        assert run_cli(tmp_path, cfg) == 0
        captured = capsys.readouterr().out
        assert "pairing experiment" in captured
        assert "limit" in captured
        assert (out / "pairing.csv").exists()
        assert (out / "pairing.png").exists()

    def test_verify_1d_records_error(self, tmp_path):
        out = tmp_path / "out"
        cfg = {"command": "verify-1d",
               "map": {"preset": "golden", "grid_shape": [64, 64]},
               "a": HARMONIC_A, "epsilons": [0.125, 0.0625, 0.03125],
               "output_dir": str(out)}
        assert run_cli(tmp_path, cfg) == 0
        manifest = read_manifest(out)
        assert manifest["result"]["final_relative_error"] < 1e-2
        rows = (out / "verify_1d.csv").read_text().strip().splitlines()
        assert rows[0] == "epsilon,a_eff,error"
        assert len(rows) == 4

    def test_output_flag_overrides_config(self, tmp_path):
        other = tmp_path / "elsewhere"
        cfg = {"command": "check-map", "map": "golden",
               "output_dir": str(tmp_path / "ignored")}
        assert run_cli(tmp_path, cfg, extra_args=["--output", str(other)]) == 0
        assert (other / "manifest.json").exists()
        assert not (tmp_path / "ignored").exists()
