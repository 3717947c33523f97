import csv
import io

import numpy as np
import pytest

from intformer.bench import microbench, parse_size
from intformer.cli import isqrt_verify, main
from intformer.oracles import CURVES


def run(capsys, *args):
    code = main(list(args))
    out = capsys.readouterr()
    return code, out.out, out.err


class TestApproxError:
    def test_default_table(self, capsys, tmp_path):
        out_csv = tmp_path / "t.csv"
        code, out, _ = run(capsys, "approx-error", "--out", str(out_csv))
        assert code == 0
        for name in ("sigmoid-GELU", "h-GELU", "i-GELU", "i-exp"):
            assert name in out
        rows = {r["method"]: r for r in csv.DictReader(out_csv.open())}
        assert float(rows["i-GELU"]["linf"]) == pytest.approx(0.018, abs=0.002)
        assert float(rows["i-GELU"]["l2_rms"]) < float(rows["sigmoid-GELU"]["l2_rms"]) \
            < float(rows["h-GELU"]["l2_rms"])

    def test_exp_only(self, capsys):
        code, out, _ = run(capsys, "approx-error", "--function", "exp")
        assert code == 0 and "i-exp" in out and "i-GELU" not in out

    def test_bad_interval(self, capsys):
        code, _, err = run(capsys, "approx-error", "--lo", "2", "--hi", "1")
        assert code == 2 and "lo < hi" in err

    def test_positive_exp_interval(self, capsys):
        assert run(capsys, "approx-error", "--function", "exp", "--hi", "1")[0] == 2


class TestCurves:
    def test_csv(self, capsys, tmp_path):
        p = tmp_path / "c.csv"
        assert run(capsys, "curves", "--points", "101", "--out", str(p))[0] == 0
        rows = list(csv.reader(p.open()))
        assert rows[0] == ["x", "relu", "gelu", "h_gelu", "i_gelu"]
        assert len(rows) == 102
        data = np.array(rows[1:], dtype=float)
        for j, name in enumerate(rows[0][1:], start=1):
            np.testing.assert_allclose(data[:, j], CURVES[name](data[:, 0]), rtol=1e-12, atol=1e-300)

    def test_exp_to_stdout(self, capsys):
        code, out, _ = run(capsys, "curves", "--function", "exp", "--points", "5")
        rows = list(csv.reader(io.StringIO(out)))
        assert code == 0 and rows[0] == ["x", "exp", "i_exp"] and len(rows) == 6

    def test_byte_identical(self, capsys, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run(capsys, "curves", "--out", str(a))
        run(capsys, "curves", "--out", str(b))
        assert a.read_bytes() == b.read_bytes()

    def test_too_few_points(self, capsys):
        assert run(capsys, "curves", "--points", "1")[0] == 2

    def test_unwritable(self, capsys, tmp_path):
        with pytest.raises(OSError):
            main(["curves", "--out", str(tmp_path / "missing" / "c.csv")])


class TestIsqrtVerify:
    def test_small_run(self):
        failures, max_u, hist = isqrt_verify(1 << 12, 10_000, seed=0)
        assert failures == 0
        assert 4 <= max_u <= 64
        assert sum(hist.values()) == (1 << 12) + 1 + 10_000

    def test_perfect_squares(self):
        from intformer.kernels import i_sqrt_array

        r = np.arange(0, 1025)
        roots, _ = i_sqrt_array(r * r)
        np.testing.assert_array_equal(roots, r)


class TestEncoderDemo:
    def test_small_dims(self, capsys):
        code, out, _ = run(capsys, "encoder-demo", "--dims", "8x32x2x64", "--samples", "32")
        assert code == 0
        assert "float ops in integer path:          0" in out

    def test_deterministic(self, capsys):
        args = ("encoder-demo", "--dims", "4x16x2x32", "--samples", "8", "--seed", "3")
        assert run(capsys, *args)[1] == run(capsys, *args)[1]

    def test_bad_dims(self, capsys):
        assert run(capsys, "encoder-demo", "--dims", "8x30x4x64")[0] == 2
        assert run(capsys, "encoder-demo", "--samples", "0")[0] == 2


class TestFit:
    def test_report(self, capsys, tmp_path):
        p = tmp_path / "f.csv"
        code, out, _ = run(capsys, "fit", "--out", str(p))
        assert code == 0 and "0.3585" in out
        rows = list(csv.DictReader(p.open()))
        exp_row = rows[0]
        for key, want in (("a", 0.3585), ("b", 1.353), ("c", 0.344)):
            assert abs(float(exp_row[key]) - want) / want < 0.02

    def test_small_grid_refused(self, capsys):
        assert run(capsys, "fit", "--points", "100")[0] == 2


class TestBench:
    def test_rows(self):
        rows = microbench("gelu", [64, "4x16"], repetitions=30)
        assert [r.size for r in rows] == ["64", "4x16"]
        assert all(r.int_median_ns > 0 and r.speedup > 0 for r in rows)

    def test_repetitions_enforced(self):
        with pytest.raises(ValueError):
            microbench("gemm", ["4x4x4"], repetitions=29)

    def test_unknown_op(self):
        with pytest.raises(ValueError):
            microbench("conv", [4])

    def test_parse_size(self):
        assert parse_size("128x768x768") == (128, 768, 768)
        with pytest.raises(ValueError):
            parse_size("0x3")

    def test_cli_csv(self, capsys, tmp_path):
        p = tmp_path / "b.csv"
        code, _, _ = run(capsys, "bench", "--op", "softmax", "--sizes", "8x16", "--out", str(p))
        assert code == 0
        header = p.read_text().splitlines()[0]
        assert header == "op,size,int_median_ns,float_median_ns,speedup"

    def test_cli_bad_reps(self, capsys):
        assert run(capsys, "bench", "--reps", "5", "--sizes", "4x4x4")[0] == 2

    def test_cli_unknown_op(self, capsys):
        assert run(capsys, "bench", "--op", "conv")[0] == 2


def test_no_command(capsys):
    assert run(capsys)[0] == 2
