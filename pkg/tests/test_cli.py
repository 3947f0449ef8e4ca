import json

import numpy as np
import pytest

from remle import cli
from remle import mp_theory as mp
from remle import sim_harness as sh
from remle import snr_single as ss
from remle import spectral_core as sc

from conftest import make_instance


def write_vector_csv(path, v):
    np.savetxt(path, np.asarray(v).reshape(-1, 1), delimiter=",", fmt="%.17g")


@pytest.fixture
def dataset(tmp_path):
    Z, beta, y, cache, ry = make_instance(31, 120, 150)
    mpath, ypath = tmp_path / "Z.csv", tmp_path / "y.csv"
    np.savetxt(mpath, Z, delimiter=",", fmt="%.17g")
    write_vector_csv(ypath, y)
    return Z, beta, y, mpath, ypath


class TestEstimate:
    def test_single_fit(self, dataset, tmp_path, capsys):
        Z, beta, y, mpath, ypath = dataset
        out = tmp_path / "est.csv"
        code = cli.main(["estimate", str(mpath), str(ypath), "--out", str(out)])
        assert code == 0
        header, row = out.read_text().splitlines()
        cells = dict(zip(header.split(","), row.split(",")))
        cache = sc.decompose(Z)
        est = ss.mm_fit(cache, sc.rotate_response(cache, y))
        assert cells["gamma_hat"] == sh.fmt_num(est.gamma_hat)
        assert cells["converged"] == "true"
        assert "gamma_hat" in capsys.readouterr().out

    def test_pure_noise_fixture(self, tmp_path):
        rng = np.random.default_rng(322)
        Z = rng.standard_normal((150, 200))
        y = rng.standard_normal(150)
        mpath, ypath = tmp_path / "Z.csv", tmp_path / "y.csv"
        np.savetxt(mpath, Z, delimiter=",", fmt="%.17g")
        write_vector_csv(ypath, y)
        out = tmp_path / "est.csv"
        code = cli.main(["estimate", str(mpath), str(ypath), "--out", str(out)])
        assert code in (0, 2)
        header, row = out.read_text().splitlines()
        cells = dict(zip(header.split(","), row.split(",")))
        assert float(cells["gamma_hat"]) <= 0.05
        assert cells["boundary"] == "true"

    def test_group_size_mismatch_exits_1(self, dataset, tmp_path):
        _, _, _, mpath, ypath = dataset
        code = cli.main(["estimate", str(mpath), str(ypath), "--groups", "100,40"])
        assert code == 1

    def test_group_fit(self, dataset, tmp_path):
        _, _, _, mpath, ypath = dataset
        out = tmp_path / "est.csv"
        code = cli.main(["estimate", str(mpath), str(ypath), "--groups", "75,75", "--out", str(out)])
        assert code in (0, 2)
        header = out.read_text().splitlines()[0].split(",")
        assert "gamma_hat_1" in header and "gamma_hat_total" in header

    def test_nonconverged_exit_2_still_writes(self, dataset, tmp_path):
        _, _, _, mpath, ypath = dataset
        out = tmp_path / "est.csv"
        code = cli.main(["estimate", str(mpath), str(ypath), "--max-iter", "3", "--out", str(out)])
        assert code == 2
        assert out.exists()

    def test_dimension_mismatch_exits_1(self, dataset, tmp_path):
        _, _, y, mpath, _ = dataset
        short = tmp_path / "short.csv"
        write_vector_csv(short, y[:-3])
        assert cli.main(["estimate", str(mpath), str(short)]) == 1

    def test_unreadable_path_exits_1(self, dataset):
        _, _, _, mpath, _ = dataset
        assert cli.main(["estimate", str(mpath), "/nonexistent/y.csv"]) == 1


class TestSimulate:
    def write_config(self, path, reps=3, seed=11, threads_note=None):
        path.write_text(
            'design = "gaussian"\nn = 60\np = 80\ng = 0.5\ngamma0 = 2.0\n'
            f"sigma0_sq = 0.5\nreplications = {reps}\nbase_seed = {seed}\n"
        )

    def test_end_to_end(self, tmp_path):
        cfg = tmp_path / "exp.toml"
        self.write_config(cfg)
        out = tmp_path / "run"
        assert cli.main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
        records = (tmp_path / "run.records.csv").read_text().splitlines()
        assert records[0] == ",".join(sh.SINGLE_CSV_COLUMNS)
        assert len(records) == 4
        manifest = json.loads((tmp_path / "run.manifest.json").read_text())
        assert manifest["config"]["base_seed"] == 11
        assert len(manifest["record_seeds"]) == 3

    def test_byte_identical_reruns(self, tmp_path):
        cfg = tmp_path / "exp.toml"
        self.write_config(cfg)
        blobs = []
        for name in ("a", "b"):
            out = tmp_path / name
            cli.main(["simulate", "--config", str(cfg), "--out", str(out)])
            blobs.append((tmp_path / f"{name}.records.csv").read_bytes()
                         + (tmp_path / f"{name}.summary.csv").read_bytes())
        assert blobs[0] == blobs[1]

    def test_round_trip_reproduces_record(self, tmp_path):
        cfg = tmp_path / "exp.toml"
        self.write_config(cfg, reps=2, seed=77)
        out = tmp_path / "run"
        cli.main(["simulate", "--config", str(cfg), "--out", str(out)])
        rows = (tmp_path / "run.records.csv").read_text().splitlines()
        cells = dict(zip(rows[0].split(","), rows[2].split(",")))  # rep_index 1
        config = sh.load_config(cfg)
        designs, _, y = sh.materialize_replication(config, 0, 1)
        mpath, ypath, epath = tmp_path / "Z.csv", tmp_path / "y.csv", tmp_path / "e.csv"
        np.savetxt(mpath, designs[0], delimiter=",", fmt="%.17g")
        write_vector_csv(ypath, y)
        code = cli.main(["estimate", str(mpath), str(ypath), "--out", str(epath)])
        assert code == 0
        eheader, erow = (epath.read_text().splitlines())
        ecells = dict(zip(eheader.split(","), erow.split(",")))
        assert ecells["gamma_hat"] == cells["gamma_hat"]
        assert ecells["sigma_eps_hat"] == cells["sigma_eps_hat"]

    def test_invalid_enum_value_exits_1(self, tmp_path, capsys):
        cfg = tmp_path / "bad.toml"
        cfg.write_text(
            'design = "uniform"\nn = 10\np = 10\ngamma0 = 1.0\n'
            "sigma0_sq = 0.5\nreplications = 1\nbase_seed = 1\n"
        )
        assert cli.main(["simulate", "--config", str(cfg)]) == 1
        assert "design" in capsys.readouterr().err


class TestTheory:
    def test_grid_rows_and_zero_crossing(self, tmp_path):
        out = tmp_path / "theory.csv"
        code = cli.main([
            "theory", "--tau", "0.6", "--gamma-grid", "1.0,2.0,3.0",
            "--gamma0", "2.0", "--sigma0-sq", "0.5", "--out", str(out),
        ])
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == ",".join(cli.THEORY_CSV_COLUMNS)
        assert len(lines) == 4
        rows = [dict(zip(lines[0].split(","), ln.split(","))) for ln in lines[1:]]
        assert float(rows[1]["c_gamma"]) == 0.0  # gamma == gamma0 row
        assert all(float(r["d_factor"]) > 0.0 for r in rows)
        # values equal direct library calls at the printed precision
        spec = mp.MpSpec.from_tau(0.6)
        assert rows[0]["s_bar"] == sh.fmt_num(mp.s_bar(spec, 1.0, 2.0, 0.5))

    def test_range_grid(self, tmp_path):
        out = tmp_path / "theory.csv"
        cli.main(["theory", "--tau", "1.5", "--gamma-grid", "0.5:2.5:5", "--out", str(out)])
        assert len(out.read_text().splitlines()) == 6

    def test_bad_grid_exits_1(self):
        assert cli.main(["theory", "--tau", "0.6", "--gamma-grid", "0,1"]) == 1


class TestDiagnose:
    @pytest.fixture
    def truth_file(self, tmp_path):
        def write(beta, sigma0_sq):
            path = tmp_path / "truth.csv"
            lines = ["beta,sigma0_sq"] + [f"%.17g,%.17g" % (b, sigma0_sq) for b in beta]
            path.write_text("\n".join(lines) + "\n")
            return path
        return write

    def test_curves(self, tmp_path, truth_file):
        Z, beta, y, cache, ry = make_instance(32, 100, 140)
        mpath, ypath = tmp_path / "Z.csv", tmp_path / "y.csv"
        np.savetxt(mpath, Z, delimiter=",", fmt="%.17g")
        write_vector_csv(ypath, y)
        tpath = truth_file(beta, 0.5)
        out = tmp_path / "diag.csv"
        code = cli.main([
            "diagnose", str(mpath), str(ypath), "--truth", str(tpath),
            "--gamma-grid", "1.0,2.0,4.0", "--out", str(out),
        ])
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == ",".join(cli.DIAGNOSE_CSV_COLUMNS)
        rows = [dict(zip(lines[0].split(","), ln.split(","))) for ln in lines[1:]]
        # pass-through: CSV equals library values at printed precision
        params = ss.TrueParameters.from_beta(beta, 0.5)
        want = ss.delta(cache, ry, 1.0)
        assert abs(float(rows[0]["delta"]) - want) <= 1e-12 * max(abs(want), 1.0)
        # delta** vanishes on the gamma = gamma0 row
        g0_row = min(rows, key=lambda r: abs(float(r["gamma"]) - params.gamma0))
        assert abs(float(g0_row["delta_starstar"])) <= 1e-9

    def test_delta_close_to_surrogate_at_scale(self, tmp_path, truth_file):
        Z, beta, y, _, _ = make_instance(33, 800, 1200)
        mpath, ypath = tmp_path / "Z.csv", tmp_path / "y.csv"
        np.savetxt(mpath, Z, delimiter=",", fmt="%.17g")
        write_vector_csv(ypath, y)
        tpath = truth_file(beta, 0.5)
        out = tmp_path / "diag.csv"
        cli.main([
            "diagnose", str(mpath), str(ypath), "--truth", str(tpath),
            "--gamma-grid", "0.5:4.0:8", "--out", str(out),
        ])
        lines = out.read_text().splitlines()
        rows = [dict(zip(lines[0].split(","), ln.split(","))) for ln in lines[1:]]
        gaps = [abs(float(r["delta"]) - float(r["delta_starstar"])) for r in rows]
        assert float(np.median(gaps)) < 0.05

    def test_wrong_beta_length_exits_1(self, tmp_path, truth_file):
        Z, beta, y, _, _ = make_instance(34, 30, 40)
        mpath, ypath = tmp_path / "Z.csv", tmp_path / "y.csv"
        np.savetxt(mpath, Z, delimiter=",", fmt="%.17g")
        write_vector_csv(ypath, y)
        tpath = truth_file(beta[:-2], 0.5)
        assert cli.main([
            "diagnose", str(mpath), str(ypath), "--truth", str(tpath), "--gamma-grid", "1.0",
        ]) == 1


def test_output_byte_stability(tmp_path):
    # same inputs and flags twice: identical bytes for every subcommand output
    Z, beta, y, _, _ = make_instance(35, 40, 50)
    mpath, ypath = tmp_path / "Z.csv", tmp_path / "y.csv"
    np.savetxt(mpath, Z, delimiter=",", fmt="%.17g")
    write_vector_csv(ypath, y)
    outs = []
    for name in ("r1", "r2"):
        out = tmp_path / f"{name}.csv"
        cli.main(["estimate", str(mpath), str(ypath), "--out", str(out)])
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    outs = []
    for name in ("t1", "t2"):
        out = tmp_path / f"{name}.csv"
        cli.main(["theory", "--tau", "0.8", "--gamma-grid", "0.5:3:7", "--out", str(out)])
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
