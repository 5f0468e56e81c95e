"""Self-contained demo city: engine wiring plus a handcrafted query suite.

Builds everything an end-to-end run needs from one seed: the synthetic
scene with baked language features, its landmark registry, deterministic
provider stubs, and a five-task query/answer suite whose ground truth is
derived from the generator's object placements with safety margins, so
every answer is unambiguous.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from shapely.geometry import Point
from shapely.ops import unary_union

from .errors import SpecInfeasible
from .georef import GeoTransform
from .grids import TopDownView
from .gvapi import GeoEngine
from .harness import TaskRecord
from .language import IdentityCodec, bake_features
from .programs import ICEStore
from .providers import OracleDetector, OracleEmbedder, OracleGenerator
from .registry import rasterize_polygon
from .synth import (CLASS_COLORS, CityGroundTruth, SynthSpec, build_registry,
                    default_view, synth_city)

DETECTABLE_CLASSES = ("car", "sports field")


@dataclass
class CityBundle:
    tree: object
    gt: CityGroundTruth
    view: TopDownView
    transform: GeoTransform
    registry: object
    embedder: OracleEmbedder
    detector: OracleDetector
    engine: GeoEngine


def build_city_bundle(seed=7, spec: SynthSpec | None = None,
                      resolution=1.0) -> CityBundle:
    spec = spec or SynthSpec()
    tree, gt = synth_city(seed, spec)
    embedder = OracleEmbedder(sorted(CLASS_COLORS), dim=spec.latent_dim)
    codec = IdentityCodec(spec.latent_dim)
    tree = bake_features(tree, gt.labels, embedder, codec)
    transform = GeoTransform.identity()
    registry = build_registry(gt, transform)
    view = default_view(spec, resolution)
    detector = OracleDetector(
        {name: CLASS_COLORS[name] for name in DETECTABLE_CLASSES})
    engine = GeoEngine(tree, registry, transform, view,
                       embedder=embedder, detector=detector, codec=codec)
    return CityBundle(tree=tree, gt=gt, view=view, transform=transform,
                      registry=registry, embedder=embedder, detector=detector,
                      engine=engine)


@dataclass
class SuiteBundle:
    records: list
    programs: dict      # query text -> program text
    ice_store: ICEStore


# margins (meters) that keep every ground-truth answer unambiguous
_EDGE_MARGIN = 2.5
_RING_CLEARANCE = 15.0


def build_query_suite(bundle: CityBundle, scene_id="synth") -> SuiteBundle:
    gt = bundle.gt
    view = bundle.view
    transform = bundle.transform
    buildings = sorted(gt.buildings, key=lambda b: b.name)
    if len(buildings) < 8 or len(gt.fields) < 1 or len(gt.cars) < 2:
        raise SpecInfeasible("suite needs >= 8 buildings, a field, and cars")

    def raster(footprint):
        return rasterize_polygon(transform.to_world(footprint), view, transform).mask

    b_masks = [raster(b.footprint) for b in buildings]
    f_masks = [raster(f.footprint) for f in gt.fields]

    records = []
    programs = {}

    def add(task, query, answer, program, gt_mask=None):
        records.append(TaskRecord(scene=scene_id, task=task, query=query,
                                  answer=answer, view=view, gt_mask=gt_mask))
        programs[query] = program

    # ---- grounding ---------------------------------------------------------
    for b, mask in zip(buildings[:6], b_masks[:6]):
        add("GRD", f"Where is {b.name}?", None,
            f"ANSWER=GetLandmarkSeg(query='{b.name}')", gt_mask=mask)

    union_fields = np.logical_or.reduce(f_masks)
    add("GRD", "Where are the sports fields?", None,
        "SEG0=FullSeg()\nANSWER=GetStructureSeg(query='sports field',area=SEG0)",
        gt_mask=union_fields)
    union_buildings = np.logical_or.reduce(b_masks)
    add("GRD", "Where are the buildings?", None,
        "SEG0=FullSeg()\nANSWER=GetStructureSeg(query='building',area=SEG0)",
        gt_mask=union_buildings)

    areas = [m.sum() for m in b_masks]
    order = np.argsort(areas)
    if areas[order[-1]] >= 1.05 * areas[order[-2]]:
        add("GRD", "Where is the building with the largest footprint?", None,
            "SEG0=FullSeg()\n"
            "SEG1=GetStructureSeg(query='building',area=SEG0)\n"
            "ANSWER=LargestSeg(segs=SEG1)",
            gt_mask=b_masks[order[-1]])
    else:
        b = buildings[6]
        add("GRD", f"Where is {b.name}?", None,
            f"ANSWER=GetLandmarkSeg(query='{b.name}')", gt_mask=b_masks[6])

    pair = _field_near_building(gt, buildings)
    if pair is not None:
        b, field_idx, dist = pair
        add("GRD", f"Where is the sports field within {dist:.0f} meters of {b.name}?",
            None,
            f"SEG0=GetLandmarkSeg(query='{b.name}')\n"
            f"SEG1=SegAround(area=SEG0,distance={dist:.0f})\n"
            "ANSWER=GetStructureSeg(query='sports field',area=SEG1)",
            gt_mask=f_masks[field_idx])
    else:
        b = buildings[7]
        add("GRD", f"Where is {b.name}?", None,
            f"ANSWER=GetLandmarkSeg(query='{b.name}')", gt_mask=b_masks[7])

    # ---- counting ----------------------------------------------------------
    add("CNT", "How many cars are there?", float(len(gt.cars)),
        "SEG0=FullSeg()\n"
        "DET0=GetObjectSeg(query='car',area=SEG0)\n"
        "ANSWER=Count(dets=DET0)")
    add("CNT", "How many sports fields are there?", float(len(gt.fields)),
        "SEG0=FullSeg()\n"
        "DET0=GetObjectSeg(query='sports field',area=SEG0)\n"
        "ANSWER=Count(dets=DET0)")

    around = _cars_around_splits(gt, buildings, want=2)
    for b, dist, count in around:
        add("CNT", f"How many cars are there within {dist:.0f} meters of {b.name}?",
            float(count),
            f"SEG0=GetLandmarkSeg(query='{b.name}')\n"
            f"SEG1=SegAround(area=SEG0,distance={dist:.0f})\n"
            "DET0=GetObjectSeg(query='car',area=SEG1)\n"
            "ANSWER=Count(dets=DET0)")

    between = _cars_between(gt, buildings)
    if between is not None:
        a, b, count = between
        add("CNT", f"How many cars are there between {a.name} and {b.name}?",
            float(count),
            f"SEG0=GetLandmarkSeg(query='{a.name}')\n"
            f"SEG1=GetLandmarkSeg(query='{b.name}')\n"
            "SEG2=SegBetween(seg1=SEG0,seg2=SEG1)\n"
            "DET0=GetObjectSeg(query='car',area=SEG2)\n"
            "ANSWER=Count(dets=DET0)")
    else:
        extra = _cars_around_splits(gt, buildings, want=3)[-1]
        b, dist, count = extra
        add("CNT", f"How many cars can be found within {dist:.0f} meters of {b.name}?",
            float(count),
            f"SEG0=GetLandmarkSeg(query='{b.name}')\n"
            f"SEG1=SegAround(area=SEG0,distance={dist:.0f})\n"
            "DET0=GetObjectSeg(query='car',area=SEG1)\n"
            "ANSWER=Count(dets=DET0)")

    # ---- measuring ---------------------------------------------------------
    for b in buildings[:4]:
        add("MES_H", f"How tall is {b.name}?", float(b.height),
            f"SEG0=GetLandmarkSeg(query='{b.name}')\n"
            "ANSWER=MeasureHeight(area=SEG0)")

    for a, b in [(0, 1), (2, 3), (4, 5), (1, 6)]:
        ba, bb = buildings[a], buildings[b]
        dist = float(np.linalg.norm(
            transform.to_world(ba.centroid) - transform.to_world(bb.centroid)))
        add("MES_D", f"How far is {ba.name} from {bb.name}?", dist,
            f"SEG0=GetLandmarkSeg(query='{ba.name}')\n"
            f"SEG1=GetLandmarkSeg(query='{bb.name}')\n"
            "ANSWER=MeasureDist(from=SEG0,to=SEG1)")

    # ---- comparison --------------------------------------------------------
    for a, b in [(0, 1), (2, 5), (3, 6)]:
        ba, bb = buildings[a], buildings[b]
        taller = ba.name if ba.height > bb.height else bb.name
        add("CMP", f"Which is taller, {ba.name} or {bb.name}?", taller,
            _cmp_program(ba.name, bb.name))

    # ---- spatial reasoning -------------------------------------------------
    hi = max(buildings[:4], key=lambda b: b.height)
    lo = min(buildings[:4], key=lambda b: b.height)
    add("SPR", f"Is {hi.name} taller than {lo.name}?", "yes",
        _taller_program(hi.name, lo.name))
    add("SPR", f"Is {lo.name} taller than {hi.name}?", "no",
        _taller_program(lo.name, hi.name))

    north = _car_north_case(gt, buildings)
    if north is None:
        raise SpecInfeasible("no building with unambiguous car-north answer")
    b, answer = north
    add("SPR", f"Is there a car north of {b.name}?", answer,
        f"SEG0=GetLandmarkSeg(query='{b.name}')\n"
        "SEG1=SegDirection(seg=SEG0,direction='north')\n"
        "DET0=GetObjectSeg(query='car',area=SEG1)\n"
        "N0=Count(dets=DET0)\n"
        "C0=GE(a=N0,b=1)\n"
        "ANSWER=YesNo(b=C0)")

    field_case = _field_around_case(gt, buildings)
    if field_case is None:
        raise SpecInfeasible("no building with unambiguous field-around answer")
    b, dist, answer = field_case
    add("SPR", f"Is there a sports field within {dist:.0f} meters of {b.name}?",
        answer,
        f"SEG0=GetLandmarkSeg(query='{b.name}')\n"
        f"SEG1=SegAround(area=SEG0,distance={dist:.0f})\n"
        "SEG2=GetStructureSeg(query='sports field',area=SEG1)\n"
        "B0=Exists(seg=SEG2)\n"
        "ANSWER=YesNo(b=B0)")

    return SuiteBundle(records=records, programs=programs,
                       ice_store=default_ice_store())


def _cmp_program(name_a, name_b):
    return (f"SEG0=GetLandmarkSeg(query='{name_a}')\n"
            f"SEG1=GetLandmarkSeg(query='{name_b}')\n"
            "H0=MeasureHeight(area=SEG0)\n"
            "H1=MeasureHeight(area=SEG1)\n"
            "C0=GT(a=H0,b=H1)\n"
            f"ANSWER=IfElse(cond=C0,a='{name_a}',b='{name_b}')")


def _taller_program(name_a, name_b):
    return (f"SEG0=GetLandmarkSeg(query='{name_a}')\n"
            f"SEG1=GetLandmarkSeg(query='{name_b}')\n"
            "H0=MeasureHeight(area=SEG0)\n"
            "H1=MeasureHeight(area=SEG1)\n"
            "C0=GT(a=H0,b=H1)\n"
            "ANSWER=YesNo(b=C0)")


def _field_near_building(gt, buildings):
    """A (building, field, distance) triple where exactly one field sits
    fully inside the ring and all others are far outside it."""
    for b in buildings:
        poly = b.polygon
        for fi, f in enumerate(gt.fields):
            far_corner = max(poly.distance(Point(*c)) for c in f.footprint)
            dist = float(np.ceil(far_corner) + 10.0)
            others_clear = all(
                min(poly.distance(Point(*c)) for c in other.footprint)
                > dist + _RING_CLEARANCE
                for oi, other in enumerate(gt.fields) if oi != fi)
            if others_clear:
                return b, fi, dist
    return None


def _cars_around_splits(gt, buildings, want):
    """(building, ring distance, car count) cases with >= 5 m count margins."""
    out = []
    for b in buildings:
        poly = b.polygon
        dists = sorted(poly.distance(Point(*c.position)) for c in gt.cars)
        candidates = []
        for k in range(1, len(dists)):
            if dists[k] - dists[k - 1] >= 2 * _EDGE_MARGIN:
                candidates.append(((dists[k] + dists[k - 1]) / 2, k))
        if candidates:
            mid, count = candidates[len(candidates) // 2]
            out.append((b, float(round(mid)), count))
        if len(out) >= want:
            break
    if len(out) < want:
        raise SpecInfeasible("not enough unambiguous car-ring cases")
    return out


def _cars_between(gt, buildings):
    for i in range(len(buildings)):
        for j in range(i + 1, len(buildings)):
            pa, pb = buildings[i].polygon, buildings[j].polygon
            hull = unary_union([pa, pb]).convex_hull
            region = hull.difference(pa).difference(pb)
            if region.is_empty or region.area < 50:
                continue
            ambiguous = False
            count = 0
            for c in gt.cars:
                p = Point(*c.position)
                inside = region.contains(p)
                near_edge = region.boundary.distance(p) < _EDGE_MARGIN
                if near_edge:
                    ambiguous = True
                    break
                if inside:
                    count += 1
            if not ambiguous and count >= 1:
                return buildings[i], buildings[j], count
    return None


def _car_north_case(gt, buildings):
    for b in buildings:
        ymax = b.footprint[:, 1].max()
        ys = np.array([c.position[1] for c in gt.cars])
        if np.any(np.abs(ys - ymax) < _EDGE_MARGIN):
            continue
        return b, ("yes" if np.any(ys > ymax) else "no")
    return None


def _field_around_case(gt, buildings):
    # prefer a clean "no": every field far outside a small ring
    for b in buildings:
        poly = b.polygon
        dist = 40.0
        if all(min(poly.distance(Point(*c)) for c in f.footprint)
               > dist + _RING_CLEARANCE for f in gt.fields):
            return b, dist, "no"
    pair = _field_near_building(gt, buildings)
    if pair is not None:
        b, _, dist = pair
        return b, dist, "yes"
    return None


def make_generator(suite: SuiteBundle, min_ice=None) -> OracleGenerator:
    return OracleGenerator(programs=dict(suite.programs),
                           min_ice=dict(min_ice or {}))


def default_ice_store() -> ICEStore:
    """Fifteen generic query/program examples for prompting."""
    examples = [
        ("The car north of Building Z",
         "SEG0=GetLandmarkSeg(query='Building Z')\n"
         "SEG1=SegDirection(seg=SEG0,direction='north')\n"
         "ANSWER=GetStructureSeg(query='car',area=SEG1)"),
        ("Red-letter billboard within 100 meters of The View",
         "SEG0=GetLandmarkSeg(query='The View')\n"
         "SEG1=SegAround(area=SEG0,distance=100)\n"
         "ANSWER=GetStructureSeg(query='Red-letter billboard',area=SEG1)"),
        ("Where is Trinity Church?",
         "ANSWER=GetLandmarkSeg(query='Trinity Church')"),
        ("How many cars are there?",
         "SEG0=FullSeg()\n"
         "DET0=GetObjectSeg(query='car',area=SEG0)\n"
         "ANSWER=Count(dets=DET0)"),
        ("How tall is Quik Park?",
         "SEG0=GetLandmarkSeg(query='Quik Park')\n"
         "ANSWER=MeasureHeight(area=SEG0)"),
        ("How far is The View from Quik Park?",
         "SEG0=GetLandmarkSeg(query='The View')\n"
         "SEG1=GetLandmarkSeg(query='Quik Park')\n"
         "ANSWER=MeasureDist(from=SEG0,to=SEG1)"),
        ("Which is taller, The View or Quik Park?",
         _cmp_program("The View", "Quik Park")),
        ("Is The View taller than Quik Park?",
         _taller_program("The View", "Quik Park")),
        ("The largest green area",
         "SEG0=FullSeg()\n"
         "SEG1=GetStructureSeg(query='green area',area=SEG0)\n"
         "ANSWER=LargestSeg(segs=SEG1)"),
        ("The area between Trinity Church and Quik Park",
         "SEG0=GetLandmarkSeg(query='Trinity Church')\n"
         "SEG1=GetLandmarkSeg(query='Quik Park')\n"
         "ANSWER=SegBetween(seg1=SEG0,seg2=SEG1)"),
        ("How many ships are there northwest of 200 Vesey Street?",
         "SEG0=GetLandmarkSeg(query='200 Vesey Street')\n"
         "SEG1=SegDirection(seg=SEG0,direction='northwest')\n"
         "DET0=GetObjectSeg(query='ship',area=SEG1)\n"
         "ANSWER=Count(dets=DET0)"),
        ("Is there a tennis court around Amity Hall?",
         "SEG0=GetLandmarkSeg(query='Amity Hall')\n"
         "SEG1=SegAround(area=SEG0,distance=100)\n"
         "SEG2=GetStructureSeg(query='tennis court',area=SEG1)\n"
         "B0=Exists(seg=SEG2)\n"
         "ANSWER=YesNo(b=B0)"),
        ("Are there at least two fountains west of Washington Square Arch?",
         "SEG0=GetLandmarkSeg(query='Washington Square Arch')\n"
         "SEG1=SegDirection(seg=SEG0,direction='west')\n"
         "DET0=GetObjectSeg(query='fountain',area=SEG1)\n"
         "N0=Count(dets=DET0)\n"
         "C0=GE(a=N0,b=2)\n"
         "ANSWER=YesNo(b=C0)"),
        ("The bridge south of Mott Street",
         "SEG0=GetLandmarkSeg(query='Mott Street')\n"
         "SEG1=SegDirection(seg=SEG0,direction='south')\n"
         "SEG2=GetStructureSeg(query='bridge',area=SEG1)\n"
         "ANSWER=LargestSeg(segs=SEG2)"),
        ("How many cars are there between Little Stadium and Huiyi building?",
         "SEG0=GetLandmarkSeg(query='Little Stadium')\n"
         "SEG1=GetLandmarkSeg(query='Huiyi building')\n"
         "SEG2=SegBetween(seg1=SEG0,seg2=SEG1)\n"
         "DET0=GetObjectSeg(query='car',area=SEG2)\n"
         "ANSWER=Count(dets=DET0)"),
    ]
    return ICEStore(examples=[{"query": q, "program": p} for q, p in examples])
