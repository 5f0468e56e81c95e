from collections import Counter

import numpy as np
from shapely.geometry import Point

from geoprog.programs import check_program, parse_program
from geoprog.providers import normalize_text
from geoprog.suite import make_generator


def test_task_mix(suite):
    counts = Counter(r.task for r in suite.records)
    assert len(suite.records) == 30
    assert counts == {"GRD": 10, "CNT": 5, "MES_H": 4, "MES_D": 4,
                      "CMP": 3, "SPR": 4}


def test_every_query_has_a_checked_program(suite):
    assert set(suite.programs) == {r.query for r in suite.records}
    for text in suite.programs.values():
        assert check_program(parse_program(text)).clean


def test_queries_unique(suite):
    queries = [r.query for r in suite.records]
    assert len(set(queries)) == len(queries)
    normalized = [normalize_text(q) for q in queries]
    assert len(set(normalized)) == len(normalized)


def test_grd_masks_nonempty(suite):
    for r in suite.records:
        if r.task == "GRD":
            assert r.gt_mask is not None and r.gt_mask.any()


def test_spr_answers_cover_both(suite):
    answers = {r.answer for r in suite.records if r.task == "SPR"}
    assert answers == {"yes", "no"}


def test_counts_match_geometry(bundle, suite):
    gt = bundle.gt
    by_query = {r.query: r for r in suite.records}
    assert by_query["How many cars are there?"].answer == len(gt.cars)
    assert by_query["How many sports fields are there?"].answer == len(gt.fields)


def test_heights_match_ground_truth(bundle, suite):
    names = {b.name: b.height for b in bundle.gt.buildings}
    for r in suite.records:
        if r.task == "MES_H":
            name = r.query.replace("How tall is ", "").rstrip("?")
            assert r.answer == names[name]


def test_distances_match_centroids(bundle, suite):
    cents = {b.name: b.centroid for b in bundle.gt.buildings}
    for r in suite.records:
        if r.task == "MES_D":
            body = r.query.replace("How far is ", "").rstrip("?")
            a, b = body.split(" from ")
            assert r.answer == float(np.linalg.norm(cents[a] - cents[b]))


def test_cmp_answers_are_taller_names(bundle, suite):
    heights = {b.name: b.height for b in bundle.gt.buildings}
    for r in suite.records:
        if r.task == "CMP":
            body = r.query.replace("Which is taller, ", "").rstrip("?")
            a, b = body.split(" or ")
            expected = a if heights[a] > heights[b] else b
            assert r.answer == expected


def test_generator_covers_suite(suite):
    gen = make_generator(suite)
    for r in suite.records:
        prompt = f"instructions\nQuery: {r.query}"
        assert gen.generate(prompt) == suite.programs[r.query]


def test_suite_deterministic(bundle):
    from geoprog.suite import build_query_suite
    s1 = build_query_suite(bundle)
    s2 = build_query_suite(bundle)
    assert [r.query for r in s1.records] == [r.query for r in s2.records]
    assert s1.programs == s2.programs


def test_around_counts_have_margin(bundle, suite):
    """The ring-count answers must be stable to ~1 px of boundary error."""
    gt = bundle.gt
    buildings = {b.name: b for b in gt.buildings}
    for r in suite.records:
        if r.task != "CNT" or " meters of " not in r.query:
            continue
        head, name = r.query.split(" meters of ")
        dist = float(head.rsplit(" ", 1)[-1])
        poly = buildings[name.rstrip("?")].polygon
        ds = sorted(poly.distance(Point(*c.position)) for c in gt.cars)
        inside = sum(1 for d in ds if d <= dist)
        assert inside == r.answer
        assert all(abs(d - dist) > 1.5 for d in ds)
