import numpy as np
import pytest

from hiergraph.costing import count_grouping_pipeline, count_nonlocal
from hiergraph.errors import InvalidConfig
from hiergraph.graphs import HierarchyConfig


def desk_resolutions(side=768, levels=4):
    return [(side // s, side // s) for s in (4, 8, 16, 32)[:levels]]


def test_degenerate_hand_count():
    # L=1, D=1, N=1, C=1, 1x1 grid, K irrelevant (no pooling):
    #   pooling: C*h*w                       = 1
    #   input projection: N*C*D              = 1
    #   readout: N*D                         = 1
    #   top-down: distances N*1*D = 1, normalize N*1 = 1,
    #             aggregate (N*1+N)*D = 2, weight N*D^2 = 1
    #   re-projection: aggregate (N*N+N)*D = 2, weight N*D^2 = 1, output N*D*C = 1
    # total = 12
    cfg = HierarchyConfig(levels=1, graph_width=1)
    report = count_grouping_pipeline(cfg, [(1, 1)], [1], n_regions=1, k=1)
    assert report.total_madds == 12
    # parameters: input 1, topdown 1, reproj 1, output 1
    assert report.total_params == 4


def test_width_scaling_term_wise():
    cfg1 = HierarchyConfig(levels=3, graph_width=16)
    cfg2 = HierarchyConfig(levels=3, graph_width=32)
    res = desk_resolutions(levels=3)
    r1 = count_grouping_pipeline(cfg1, res, [12] * 3, n_regions=64, k=5)
    r2 = count_grouping_pipeline(cfg2, res, [12] * 3, n_regions=64, k=5)
    assert set(r1.terms) == set(r2.terms)
    for name, t1 in r1.terms.items():
        t2 = r2.terms[name]
        assert t2.madds == t1.madds * (2 ** t1.width_degree), name


def test_default_config_beats_nonlocal_by_10x():
    cfg = HierarchyConfig()  # L=4, D=256, cap 512
    ours = count_grouping_pipeline(cfg, desk_resolutions(), [12] * 4, k=10)
    h, w = desk_resolutions()[0]
    baseline = count_nonlocal(h, w, cfg.graph_width)
    assert baseline.total_madds > 10 * ours.total_madds


def test_tdmp_marginal_under_25_percent():
    cfg_on = HierarchyConfig()
    cfg_off = HierarchyConfig(tdmp_enabled=False)
    res = desk_resolutions()
    on = count_grouping_pipeline(cfg_on, res, [12] * 4, k=10)
    off = count_grouping_pipeline(cfg_off, res, [12] * 4, k=10)
    marginal = on.total_madds - off.total_madds
    assert marginal > 0
    assert marginal < 0.25 * on.total_madds


def test_linear_in_k():
    cfg = HierarchyConfig()
    res = desk_resolutions()
    c5 = count_grouping_pipeline(cfg, res, [12] * 4, k=5).total_madds
    c10 = count_grouping_pipeline(cfg, res, [12] * 4, k=10).total_madds
    c20 = count_grouping_pipeline(cfg, res, [12] * 4, k=20).total_madds
    assert c20 - c10 == 2 * (c10 - c5)


def test_nonlocal_single_position():
    report = count_nonlocal(1, 1, 8)
    assert report.terms["pairwise"].madds == 2 * 4  # 2 * (hw)^2 * c/2


def test_nonlocal_quadratic_scaling():
    a = count_nonlocal(10, 10, 16).terms["pairwise"].madds
    b = count_nonlocal(20, 20, 16).terms["pairwise"].madds
    assert b == 16 * a


def test_nonlocal_hand_evaluated():
    # 96*96 at 256 channels, embedding 128:
    #   pairwise    2 * 9216^2 * 128 = 21_743_271_936
    #   projections 3 * 9216 * 256 * 128 = 905_969_664
    report = count_nonlocal(96, 96, 256)
    assert report.terms["pairwise"].madds == 21_743_271_936
    assert report.terms["projections"].madds == 905_969_664
    assert report.total_madds == 22_649_241_600
    assert report.total_params == 3 * 256 * 128


def test_crossover_with_resolution():
    # the grouping pipeline is resolution-light; the dense baseline is
    # quadratic in pixels, so the gap widens monotonically
    cfg = HierarchyConfig()
    ratios = []
    for side in (256, 512, 768):
        res = [(side // s, side // s) for s in (4, 8, 16, 32)]
        ours = count_grouping_pipeline(cfg, res, [12] * 4, k=10).total_madds
        base = count_nonlocal(side // 4, side // 4, cfg.graph_width).total_madds
        ratios.append(base / ours)
    assert ratios[0] < ratios[1] < ratios[2]


def test_invalid_configs():
    cfg = HierarchyConfig(levels=2)
    with pytest.raises(InvalidConfig):
        count_grouping_pipeline(cfg, [(4, 4)], [12, 12])
    with pytest.raises(InvalidConfig):
        count_grouping_pipeline(cfg, [(4, 4), (0, 2)], [12, 12])
    with pytest.raises(InvalidConfig):
        count_nonlocal(0, 4, 8)


def test_report_serialization():
    cfg = HierarchyConfig(levels=2, graph_width=8)
    report = count_grouping_pipeline(cfg, [(8, 8), (4, 4)], [6, 6], n_regions=16, k=3)
    doc = report.to_json()
    assert "total_madds" in doc
    text = report.to_text()
    assert "total" in text and "parameters" in text
    groups = report.group_totals()
    assert sum(groups.values()) == report.total_madds