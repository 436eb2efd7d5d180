"""Command-line workflows: exit codes, CSV/VTK artifacts, determinism."""

import csv
import math

import pytest

from shapehess.cli import main

DISK_DILATION = """
[geometry]
kind = "disk"
h = {h}
[integrand]
kind = "torsion"
[deformation]
preset = "dilation"
{run}
"""


def write_cfg(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------- solve


def test_solve_writes_summary_and_state(tmp_path):
    cfg = write_cfg(tmp_path, DISK_DILATION.format(h=0.05, run=""))
    out = str(tmp_path / "out")
    assert main(["solve", "--config", cfg, "--out", out]) == 0
    (row,) = read_rows(tmp_path / "out" / "summary.csv")
    assert float(row["J_value"]) == pytest.approx(math.pi / 16.0, rel=0.01)
    assert float(row["el_residual"]) <= 1e-8
    assert float(row["neumann_flux"]) == 0.0
    assert float(row["duality_gap"]) <= 1e-3 * float(row["J_value"])
    assert float(row["max_grad"]) == pytest.approx(0.5, rel=0.02)
    state_rows = read_rows(tmp_path / "out" / "state.csv")
    assert len(state_rows) == int(row["n_dofs"])
    boundary_u = [float(r["u"]) for r in state_rows if r["dirichlet"] == "true"]
    assert boundary_u and max(abs(v) for v in boundary_u) == 0.0


def test_solve_vtk_structure(tmp_path):
    cfg = write_cfg(tmp_path, DISK_DILATION.format(h=0.2, run=""))
    out = str(tmp_path / "out")
    assert main(["solve", "--config", cfg, "--out", out]) == 0
    lines = (tmp_path / "out" / "fields.vtk").read_text().splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert "DATASET UNSTRUCTURED_GRID" in lines
    n_pts = int(next(l for l in lines if l.startswith("POINTS")).split()[1])
    assert n_pts > 0
    for section in ("SCALARS u double 1", "VECTORS sigma double",
                    "SCALARS C_dot_n double 1"):
        assert any(l == section for l in lines)


def test_lambda_zero_gives_zero_functional(tmp_path):
    text = DISK_DILATION.format(h=0.2, run="").replace(
        'kind = "torsion"', 'kind = "torsion"\nlam = 0.0'
    )
    cfg = write_cfg(tmp_path, text)
    out = str(tmp_path / "out")
    assert main(["solve", "--config", cfg, "--out", out]) == 0
    (row,) = read_rows(tmp_path / "out" / "summary.csv")
    assert float(row["J_value"]) == 0.0


# ---------------------------------------------------------------- derive


def test_derive_route_values(tmp_path):
    cfg = write_cfg(tmp_path, DISK_DILATION.format(h=0.1, run=""))
    out = str(tmp_path / "out")
    assert main(["derive", "--config", cfg, "--out", out]) == 0
    rows = {r["route"]: r for r in read_rows(tmp_path / "out" / "derivatives.csv")}
    assert float(rows["J1_volume"]["value"]) == pytest.approx(math.pi / 4, rel=0.01)
    assert float(rows["J1_boundary"]["value"]) == pytest.approx(math.pi / 4, rel=0.01)
    for name in ("J2_volume", "J2_boundary", "J2_special"):
        assert float(rows[name]["value"]) == pytest.approx(0.75 * math.pi, rel=0.02)
    assert rows["J1_volume"]["order"] == "1"
    assert rows["J2_volume"]["order"] == "2"


def test_derive_respects_route_selection(tmp_path):
    run = '[run]\nroutes = ["volume"]'
    cfg = write_cfg(tmp_path, DISK_DILATION.format(h=0.2, run=run))
    out = str(tmp_path / "out")
    assert main(["derive", "--config", cfg, "--out", out]) == 0
    names = {r["route"] for r in read_rows(tmp_path / "out" / "derivatives.csv")}
    assert names == {"J_value", "J1_volume", "J2_volume"}


def test_derive_fd_rows(tmp_path):
    run = "[run]\nwith_fd = true\neps_list = [0.1, 0.05]"
    cfg = write_cfg(tmp_path, DISK_DILATION.format(h=0.1, run=run))
    out = str(tmp_path / "out")
    assert main(["derive", "--config", cfg, "--out", out]) == 0
    rows = {r["route"]: r for r in read_rows(tmp_path / "out" / "derivatives.csv")}
    assert float(rows["fd_first"]["value"]) == pytest.approx(
        float(rows["J1_volume"]["value"]), rel=0.01
    )
    assert float(rows["fd_second"]["value"]) == pytest.approx(
        float(rows["J2_volume"]["value"]), rel=0.01
    )
    assert "eps_list=" in rows["fd_second"]["notes"]


def test_derive_zero_field_rows_vanish(tmp_path):
    text = DISK_DILATION.format(h=0.2, run="").replace(
        'preset = "dilation"', 'preset = "zero"'
    )
    cfg = write_cfg(tmp_path, text)
    out = str(tmp_path / "out")
    assert main(["derive", "--config", cfg, "--out", out]) == 0
    rows = {r["route"]: r for r in read_rows(tmp_path / "out" / "derivatives.csv")}
    for name in ("J1_volume", "J1_boundary", "J2_volume", "J2_boundary", "J2_special"):
        assert float(rows[name]["value"]) == 0.0


def test_reruns_are_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, DISK_DILATION.format(h=0.1, run=""))
    outs = []
    for sub in ("a", "b"):
        out = str(tmp_path / sub)
        assert main(["solve", "--config", cfg, "--out", out, "--threads", "4"]) == 0
        assert main(["derive", "--config", cfg, "--out", out, "--threads", "4"]) == 0
        outs.append(out)
    for name in ("summary.csv", "state.csv", "fields.vtk", "derivatives.csv"):
        a = (tmp_path / "a" / name).read_bytes()
        b = (tmp_path / "b" / name).read_bytes()
        assert a == b, name


# ---------------------------------------------------------------- validate


def test_validate_passes_on_resolved_disk(tmp_path):
    run = "[run]\neps_list = [0.08, 0.04]"
    cfg = write_cfg(tmp_path, DISK_DILATION.format(h=0.05, run=run))
    out = str(tmp_path / "out")
    assert main(["validate", "--config", cfg, "--out", out]) == 0
    rows = read_rows(tmp_path / "out" / "invariants.csv")
    assert all(r["pass"] == "true" for r in rows)
    names = {r["check_name"] for r in rows}
    assert {"el_residual", "j2_route_disagreement_rel", "fd_second_rel",
            "duality_gap_rel"} <= names
    sweep_rows = read_rows(tmp_path / "out" / "fd_sweep.csv")
    assert sweep_rows[-1]["eps"] == "extrapolated"


def test_validate_flags_unresolved_junction_mesh(tmp_path, capsys):
    text = (
        '[geometry]\nkind = "disk"\nh = 0.4\ndirichlet_fraction = 0.5\n'
        '[integrand]\nkind = "torsion"\n'
        '[deformation]\npreset = "normal"\n'
        "[run]\neps_list = [0.1, 0.05]\n"
    )
    cfg = write_cfg(tmp_path, text)
    out = str(tmp_path / "out")
    assert main(["validate", "--config", cfg, "--out", out]) == 1
    rows = read_rows(tmp_path / "out" / "invariants.csv")
    failed = {r["check_name"] for r in rows if r["pass"] == "false"}
    assert failed  # the coarse mixed-boundary run must trip at least one check
    assert any("disagreement" in n or "flux" in n or "gap" in n for n in failed)


def test_validate_gamma_rows_for_compact_field(tmp_path):
    # at h = 0.1 the volume-route noise for a compact field still exceeds the
    # null-direction floor; h = 0.05 is the resolved setting this check targets
    text = DISK_DILATION.format(h=0.05, run="[run]\neps_list = [0.08, 0.04]").replace(
        'preset = "dilation"', 'preset = "radial_bump"\nr0 = 0.7'
    )
    cfg = write_cfg(tmp_path, text)
    out = str(tmp_path / "out")
    code = main(["validate", "--config", cfg, "--out", out])
    rows = {r["check_name"]: r for r in read_rows(tmp_path / "out" / "invariants.csv")}
    assert code == 0
    assert float(rows["gamma_slope_at_least_0.9"]["value"]) >= 0.9
    assert any(n.startswith("gamma_distance_eps_") for n in rows)


# ---------------------------------------------------------------- sweep


def test_sweep_reports_convergence_orders(tmp_path):
    run = "[run]\nlevels = 3"
    cfg = write_cfg(tmp_path, DISK_DILATION.format(h=0.2, run=run))
    out = str(tmp_path / "out")
    assert main(["sweep", "--config", cfg, "--out", out]) == 0
    rows = read_rows(tmp_path / "out" / "convergence.csv")
    by_q = {}
    for r in rows:
        by_q.setdefault(r["quantity"], []).append(r)
    hs = [float(r["h"]) for r in by_q["J_value"]]
    assert hs == sorted(hs, reverse=True)
    # the functional converges at second order; its order estimate needs
    # three levels so only the last slot is filled
    j_orders = [r["order"] for r in by_q["J_value"]]
    assert j_orders[0] == "" and j_orders[1] == ""
    assert float(j_orders[2]) >= 1.5
    dis_orders = [float(r["order"]) for r in by_q["j2_route_disagreement"]
                  if r["order"] != ""]
    assert dis_orders and sum(dis_orders) / len(dis_orders) >= 0.8


def test_sweep_single_level_leaves_orders_empty(tmp_path):
    run = "[run]\nlevels = 1"
    cfg = write_cfg(tmp_path, DISK_DILATION.format(h=0.2, run=run))
    out = str(tmp_path / "out")
    assert main(["sweep", "--config", cfg, "--out", out]) == 0
    rows = read_rows(tmp_path / "out" / "convergence.csv")
    assert rows and all(r["order"] == "" for r in rows)


# ---------------------------------------------------------------- exit codes


def test_unknown_config_key_exits_2(tmp_path, capsys):
    text = DISK_DILATION.format(h=0.2, run="").replace(
        "[integrand]", "[geometry.typo]\nx = 1\n[integrand]"
    )
    cfg = write_cfg(tmp_path, text)
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "[CONFIG_ERROR]" in err and "typo" in err


def test_ptorsion_special_route_with_neumann_exits_3(tmp_path, capsys):
    text = (
        '[geometry]\nkind = "disk"\nh = 0.3\ndirichlet_fraction = 0.5\n'
        '[integrand]\nkind = "p_torsion"\np = 3.0\ndelta = 1e-4\n'
        '[deformation]\npreset = "normal"\n'
    )
    cfg = write_cfg(tmp_path, text)
    assert main(["derive", "--config", cfg, "--out", str(tmp_path / "o")]) == 3
    err = capsys.readouterr().err
    assert "[UNSUPPORTED_COMBINATION]" in err
    assert "dirichlet_fraction" in err


def test_missing_config_file_exits_2(tmp_path, capsys):
    missing = str(tmp_path / "nope.toml")
    assert main(["solve", "--config", missing, "--out", str(tmp_path / "o")]) == 2
    assert "[IO_ERROR]" in capsys.readouterr().err


def test_bad_thread_count_exits_2(tmp_path, capsys):
    cfg = write_cfg(tmp_path, DISK_DILATION.format(h=0.3, run=""))
    args = ["solve", "--config", cfg, "--out", str(tmp_path / "o"), "--threads", "0"]
    assert main(args) == 2
    assert "[CONFIG_ERROR]" in capsys.readouterr().err
