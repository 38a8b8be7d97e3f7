import csv
import io
import json
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ckstab.cli import ConfigError, RunConfig, main, parse_config_text


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(list(argv), stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def parse(text):
    """(metadata, rows as dicts, footer) of one CSV table."""
    lines = text.splitlines()
    body = [l for l in lines if not l.startswith("#")]
    first = lines.index(body[0])
    head = dict(l[2:].split(" = ", 1) for l in lines[:first])
    foot = dict(l[2:].split(" = ", 1) for l in lines[first + len(body):])
    rows = list(csv.DictReader(body))
    return head, rows, foot


def test_steady_zero_drive():
    code, out, _ = run("steady", "--alpha-in", "0")
    assert code == 0
    _, rows, _ = parse(out)
    assert len(rows) == 1 and float(rows[0]["n"]) == 0


def test_steady_bistable_drive():
    _, rows, _ = parse(run("steady", "--alpha-in", "0.3")[1])
    assert len(rows) == 3
    for r in rows:
        assert float(r["residual"]) < 1e-9
    _, rows, _ = parse(run("steady", "--alpha-in", "0.4")[1])
    assert len(rows) == 1


def test_header_echoes_config():
    head, _, _ = parse(run("steady", "--alpha-in", "0.3", "--gck", "0.2", "--susceptibility", "full")[1])
    assert head["gck"] == "0.2" and head["susceptibility"] == "full" and head["command"] == "steady"


@pytest.mark.parametrize("args, klass", [(("--alpha-in", "0"), "Stable"), (("--n", "0.3"), "UnstableStatic"), (("--n", "1.0"), "UnstableOscillatory")])
def test_classify_examples(args, klass):
    code, out, _ = run("classify", *args)
    assert code == 0
    _, rows, _ = parse(out)
    assert [r["klass"] for r in rows] == [klass]
    for key in ("a0_margin", "rh_margin", "max_re_lambda"):
        assert math.isfinite(float(rows[0][key]))


def test_output_is_deterministic(tmp_path):
    out = tmp_path / "a.csv"
    args = ["sweep", "--n-max", "2", "--n-points", "300", "--out", str(out)]
    assert run(*args)[0] == 0
    first = out.read_bytes()
    assert run(*args)[0] == 0
    assert out.read_bytes() == first
    assert run(*args, "--workers", "2")[0] == 0
    strip = lambda b: [l for l in b.decode().splitlines() if not l.startswith("# workers")]
    assert strip(out.read_bytes()) == strip(first)


def test_json_output():
    code, out, _ = run("classify", "--n", "0.3", "--format", "json")
    doc = json.loads(out)
    assert code == 0 and doc["table"] == "classify"
    assert doc["rows"][0][doc["columns"].index("klass")] == "UnstableStatic"
    assert doc["metadata"]["n"] == "0.3"


def test_config_round_trip():
    cfg = RunConfig(command="sweep", gck=0.2, gck_list=(0.0, 0.2), alpha_in=0.28, n_points=17, out="x.csv")
    assert RunConfig.from_text(cfg.to_text()) == cfg


@given(
    kappa=st.floats(1e-3, 10),
    gck=st.floats(0, 5),
    delta0=st.floats(-3, 3),
    alpha=st.one_of(st.none(), st.floats(0, 100)),
    lst=st.lists(st.floats(0, 5), max_size=4),
    fmt=st.sampled_from(["csv", "json"]),
)
def test_config_round_trip_property(kappa, gck, delta0, alpha, lst, fmt):
    cfg = RunConfig(kappa=kappa, gck=gck, delta0=delta0, alpha_in=alpha, gck_list=tuple(lst), format=fmt)
    assert RunConfig.from_text(cfg.to_text()) == cfg


def test_config_parsing_errors():
    with pytest.raises(ConfigError):
        parse_config_text("colour = blue\n")
    with pytest.raises(ConfigError):
        parse_config_text("kappa 0.3\n")
    assert parse_config_text("# comment\n\nkappa = 0.3  # trailing\n") == {"kappa": 0.3}


def test_flags_override_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("kappa = 0.5\ngamma = 0.2\nalpha_in = 0.1\n")
    head, _, _ = parse(run("steady", "--config", str(cfg), "--kappa", "0.7")[1])
    assert head["kappa"] == "0.7" and head["gamma"] == "0.2" and head["alpha_in"] == "0.1"


def test_exit_codes(tmp_path):
    assert run("steady", "--raw", "--alpha-in", "1")[0] == 2
    assert run("steady", "--raw", "--g0", "1e-5", "--alpha-in", "1")[0] == 0
    assert run("steady", "--kappa", "abc")[0] == 2
    assert run("frobnicate")[0] == 2
    code, _, err = run("classify", "--n", "-1")
    assert code == 1 and err
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = blue\n")
    assert run("steady", "--config", str(bad))[0] == 2
    assert run("steady", "--linearization", "both", "--alpha-in", "0.3")[0] == 2


def _bc_width(path):
    _, rows, _ = parse(path.read_text())
    drives = [float(r["alpha_in_scaled"]) for r in rows if r["verdict"] == "UnstableStatic"]
    return max(drives) - min(drives) if drives else 0.0


def test_fig3_files(tmp_path):
    code, _, err = run("figure", "--id", "fig3", "--out", str(tmp_path))
    assert code == 0
    files = [tmp_path / f"fig3_gck{t}.csv" for t in ("0", "0p2", "0p4")]
    assert all(f.exists() for f in files)
    assert sorted(tmp_path.iterdir()) == sorted(files)
    widths = [_bc_width(f) for f in files]
    assert widths[0] > widths[1] > widths[2] > 0
    head, rows, _ = parse(files[0].read_text())
    assert head["figure"] == "fig3" and set(rows[0]) >= {"n", "alpha_in_scaled", "verdict", "a0_margin", "rh_margin"}


def test_fig5_detuning_files(tmp_path):
    code, _, _ = run("figure", "--id", "fig5", "--out", str(tmp_path), "--delta0-points", "41")
    assert code == 0
    names = sorted(p.name for p in tmp_path.iterdir())
    assert len(names) == 6 and "fig5_gck0p2_alpha0p35.csv" in names
    _, rows, _ = parse((tmp_path / "fig5_gck0_alpha0p28.csv").read_text())
    sel = [float(r["n"]) for r in rows if r["selected"] == "true"]
    assert len(sel) == 41
    # one resonance peak, red of bare resonance
    peak = max(range(41), key=lambda i: sel[i])
    assert 0 < peak < 40


def test_critical_labels():
    code, out, _ = run("critical", "--s-max", "5")
    assert code == 0
    _, rows, _ = parse(out)
    for r in rows:
        assert (r["label"] == "comparison only") == (r["kind"] != "numeric")
    paper = {r["quantity"]: r for r in rows if r["linearization"] == "paper" and r["kind"] == "numeric"}
    assert 1.9 <= float(paper["g_star"]["value_scaled"]) <= 2.1
    assert 0.4 < float(paper["g_c1"]["value_scaled"]) < 1.0
    eq16 = [r for r in rows if r["kind"] == "analytic Eq16"]
    assert eq16 and float(eq16[0]["value_scaled"]) == pytest.approx(14.40)


def test_branches_rows():
    _, rows, _ = parse(run("branches")[1])
    by = {(r["quantity"], r["source"]): r for r in rows}
    assert abs(float(by[("n_B", "Eq7")]["deviation"])) < 0.02
    assert abs(float(by[("n_E", "Eq5")]["deviation"])) < 0.10
    _, rows, _ = parse(run("branches", "--delta0", "1")[1])
    assert any("no B-C branch" in r["note"] for r in rows)


def test_simulate_footer():
    code, out, _ = run("simulate", "--alpha-in", "0.3", "--root", "0", "--t-end", "300", "--stride", "200")
    assert code == 0
    _, rows, foot = parse(out)
    assert foot["verdict"] == "Stable" and foot["diverged"] == "false"
    assert list(rows[0]) == ["t", "re_a", "im_a", "re_b", "im_b", "perturbation_norm"]
    code, out, _ = run("simulate", "--alpha-in", "0.3", "--root", "1", "--t-end", "100", "--stride", "200")
    assert parse(out)[2]["verdict"] == "Unstable"


def test_simulate_saddle_escapes_to_neighbor():
    common = ("--alpha-in", "0.28", "--susceptibility", "full")
    _, states, _ = parse(run("steady", *common)[1])
    code, out, _ = run("simulate", *common, "--root", "1", "--t-end", "600", "--stride", "1000")
    assert code == 0
    _, rows, foot = parse(out)
    assert foot["verdict"] == "Unstable"
    end = complex(float(rows[-1]["re_a"]), float(rows[-1]["im_a"]))
    dist = [abs(end - complex(float(s["re_alpha"]), float(s["im_alpha"]))) for s in states]
    assert min(dist[0], dist[2]) < 1e-3 < dist[1]
