import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recsys_lens.recurrence import recurrence_plot
from recsys_lens.viz import PlotSpec, fmt, plot_name, ramp_color, render, render_heatmap, save

NS = "{http://www.w3.org/2000/svg}"


def elements(svg, tag, cls):
    root = ET.fromstring(svg.encode())
    return [e for e in root.iter(f"{NS}{tag}") if e.get("class") == cls]


def test_single_point_line():
    svg = render(PlotSpec("line", [("mf", [0.01], [1.2])], xlabel="gamma", ylabel="MAE"))
    assert len(elements(svg, "circle", "vertex")) == 1
    assert len(elements(svg, "rect", "frame")) == 1
    assert len(elements(svg, "line", "tick")) >= 2
    assert len(elements(svg, "text", "axislabel")) == 2


def test_line_vertex_count():
    svg = render(PlotSpec("line", [("a", [1, 2, 3], [1, 2, 1]), ("b", [1, 2], [3, 3])]))
    assert len(elements(svg, "circle", "vertex")) == 5


def test_deterministic_bytes():
    spec = PlotSpec("scatter2d", [("c", np.array([[0.1, 0.2], [0.3, 0.5]]))], title="t")
    assert render(spec) == render(spec)


def test_scatter_3d_panels():
    svg = render(PlotSpec("scatter2d", [("c", np.random.default_rng(0).random((7, 3)))]))
    assert len(elements(svg, "circle", "pt")) == 21


def test_recurrence_cells():
    g = recurrence_plot([0, 1, 0], 0.5)
    svg = render(PlotSpec("recurrence", g.bits))
    assert len(elements(svg, "rect", "on")) == 5


def test_heatmap_single_cell_at_max():
    svg = render_heatmap([[1.0]])
    cells = elements(svg, "rect", "cell")
    assert len(cells) == 1 and cells[0].get("fill") == ramp_color(1.0, 0, 1)
    assert ramp_color(1.0, 0, 1) == "#08306b"


def test_heatmap_off_diagonal_same_fill():
    cells = elements(render_heatmap([[1, 0.8], [0.8, 1]]), "rect", "cell")
    assert cells[1].get("fill") == cells[2].get("fill")
    assert cells[0].get("fill") != cells[1].get("fill")


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6).flatmap(lambda n: st.lists(st.floats(0, 1), min_size=n * n, max_size=n * n)))
def test_heatmap_symmetric_colors(flat):
    n = int(round(len(flat) ** 0.5))
    A = np.array(flat).reshape(n, n)
    S = (A + A.T) / 2
    fills = [c.get("fill") for c in elements(render_heatmap(S), "rect", "cell")]
    grid = np.array(fills).reshape(n, n)
    assert (grid == grid.T).all()


def test_graph_counts():
    payload = ([(0, 1, 0.5), (1, 2, 0.9)], np.array([[0, 0], [1, 0], [0, 1.0]]), [1, 2, 3], [0, 0, 1])
    svg = render(PlotSpec("graph", payload))
    assert len(elements(svg, "circle", "node")) == 3
    assert len(elements(svg, "line", "edge")) == 2


def test_loglog_floor_marks_zero():
    svg = render(PlotSpec("loglog", [("r", [(1, 10), (2, 5), (3, 0)])]))
    assert len(elements(svg, "circle", "pt")) == 2
    assert len(elements(svg, "rect", "pt floor")) == 1
    assert "smallest positive" in svg


def test_non_finite_is_rejected():
    with pytest.raises(ValueError, match="non-finite"):
        render(PlotSpec("line", [("a", [1, 2], [1, float("nan")])]))
    with pytest.raises(ValueError):
        render_heatmap([[0.1, float("inf")]])


def test_bad_kind_and_empty():
    with pytest.raises(ValueError):
        PlotSpec("pie", [])
    with pytest.raises(ValueError):
        render(PlotSpec("line", []))


def test_fmt_six_digits():
    assert fmt(1 / 3) == "0.333333"
    assert fmt(-0.0) == "0"


def test_save_and_name(tmp_path):
    assert plot_name("mini", "mae", "all") == "mini_mae_all.svg"
    p = save(render_heatmap([[0.5]]), tmp_path / "h.svg")
    assert b"\r" not in p.read_bytes()
