import struct

import pytest

from plots.cli import main
from plots.render import SchemaError, read_csv


def png_size(path):
    data = path.read_bytes()
    assert data[:8] == b"\x89PNG\r\n\x1a\n"
    w, h = struct.unpack(">II", data[16:24])
    return w, h


def sweep_csv(tmp_path, name, rows, header=None):
    header = header or "lambda,mu_star,pfa,pfa_stderr,edd,edd_stderr,trials,policy,seed"
    path = tmp_path / name
    path.write_text(
        "# config-hash: abcdef0123456789\n" + header + "\n" + "".join(r + "\n" for r in rows)
    )
    return path


def trace_csv(tmp_path, rows, gamma="7", header="stage,alpha_sq,c,mu,policy"):
    path = tmp_path / "trace.csv"
    lines = ["# config-hash: abcdef0123456789"]
    if gamma is not None:
        lines.append(f"# gamma: {gamma}")
    lines.append(header)
    lines.extend(rows)
    path.write_text("".join(ln + "\n" for ln in lines))
    return path


class TestReadCsv:
    def test_collects_comment_metadata(self, tmp_path):
        path = trace_csv(tmp_path, ["0,1.0,0.0,0.0,optimal"])
        cols, meta = read_csv(
            str(path), ("stage", "mu"), {"stage", "alpha_sq", "c", "mu"}
        )
        assert meta["gamma"] == "7"
        assert meta["config-hash"] == "abcdef0123456789"
        assert cols["mu"] == [0.0]

    def test_missing_column_named(self, tmp_path):
        path = sweep_csv(tmp_path, "s.csv", ["0.1,1.0"], header="lambda,mu_star")
        with pytest.raises(SchemaError, match="pfa"):
            read_csv(str(path), ("pfa", "edd"), {"pfa"})

    def test_bad_cell_names_row_and_column(self, tmp_path):
        path = sweep_csv(
            tmp_path,
            "s.csv",
            ["0.01,0.9,0.1,0.0,5.0,0.1,100,optimal,0",
             "0.02,0.9,oops,0.0,4.0,0.1,100,optimal,0"],
        )
        with pytest.raises(SchemaError, match=r"row 4.*'pfa'"):
            read_csv(str(path), ("pfa", "edd"), {"pfa", "edd"})

    def test_ragged_row_reported(self, tmp_path):
        path = sweep_csv(
            tmp_path, "s.csv",
            ["0.01,0.9,0.1,0.0,5.0,0.1,100,optimal,0", "1,2,3"],
        )
        with pytest.raises(SchemaError, match="row 4"):
            read_csv(str(path), ("pfa",), {"pfa"})

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(SchemaError):
            read_csv(str(path), (), set())


class TestCurves:
    def rows(self, policy, pts):
        return [
            f"0.01,0.9,{pfa},0.001,{edd},0.05,1000,{policy},0" for pfa, edd in pts
        ]

    def test_single_point_plot(self, tmp_path):
        path = sweep_csv(tmp_path, "one.csv", self.rows("optimal", [(0.1, 5.0)]))
        out = tmp_path / "fig.png"
        assert main(["curves", "--in", str(path), "--out", str(out)]) == 0
        assert png_size(out) == (1200, 800)

    def test_three_series_overlay(self, tmp_path):
        paths = [
            sweep_csv(
                tmp_path,
                f"{name}.csv",
                self.rows(name, [(0.3, 2.0 + i), (0.1, 4.0 + i), (0.02, 7.0 + i)]),
            )
            for i, name in enumerate(["optimal", "suboptimal", "quantizer"])
        ]
        out = tmp_path / "overlay.png"
        rc = main(["curves", "--in", *map(str, paths), "--out", str(out)])
        assert rc == 0
        assert png_size(out) == (1200, 800)

    def test_missing_column_exits_2(self, tmp_path, capsys):
        path = sweep_csv(tmp_path, "bad.csv", ["0.1,1.0"], header="pfa,policy")
        rc = main(["curves", "--in", str(path), "--out", str(tmp_path / "f.png")])
        assert rc == 2
        assert "edd" in capsys.readouterr().err

    def test_missing_file_exits_2(self, tmp_path):
        rc = main(
            ["curves", "--in", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "f.png")]
        )
        assert rc == 2

    def test_deterministic_output(self, tmp_path):
        path = sweep_csv(
            tmp_path, "s.csv", self.rows("optimal", [(0.3, 2.0), (0.05, 6.0)])
        )
        outs = []
        for name in ("a.png", "b.png"):
            out = tmp_path / name
            assert main(["curves", "--in", str(path), "--out", str(out)]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_custom_labels(self, tmp_path):
        path = sweep_csv(tmp_path, "s.csv", self.rows("optimal", [(0.1, 5.0)]))
        out = tmp_path / "f.png"
        rc = main(
            ["curves", "--in", str(path), "--out", str(out), "--labels", "mine"]
        )
        assert rc == 0


class TestSamplepath:
    def rows(self, n, policy="energy"):
        return [
            f"{k},{0.2 if k < 7 else 1.4},{0.1},{min(0.05 * k, 0.95)},{policy}"
            for k in range(n)
        ]

    def test_renders_three_panels(self, tmp_path):
        path = trace_csv(tmp_path, self.rows(15))
        out = tmp_path / "path.png"
        assert main(["samplepath", "--in", str(path), "--out", str(out)]) == 0
        assert png_size(out) == (1200, 800)

    def test_without_gamma_comment_still_renders(self, tmp_path):
        path = trace_csv(tmp_path, self.rows(10), gamma=None)
        out = tmp_path / "path.png"
        assert main(["samplepath", "--in", str(path), "--out", str(out)]) == 0

    def test_empty_trace_exits_2(self, tmp_path, capsys):
        path = trace_csv(tmp_path, [])
        rc = main(["samplepath", "--in", str(path), "--out", str(tmp_path / "f.png")])
        assert rc == 2
        assert "no data rows" in capsys.readouterr().err

    def test_deterministic_output(self, tmp_path):
        path = trace_csv(tmp_path, self.rows(12))
        outs = []
        for name in ("a.png", "b.png"):
            out = tmp_path / name
            assert main(["samplepath", "--in", str(path), "--out", str(out)]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]
