#!/usr/bin/env python3
"""Generate data/face_template.txt: the canonical 96x96 face template.

Mesh construction: Delaunay triangulation over the 68 landmarks plus the 4
image corners (the landmarks are strictly interior, so this yields exactly
2*68 + 4 - 2 = 138 triangles), then each border edge is split at its edge
midpoint, adding one triangle per side for a total of 142. The result is a
valid, non-overlapping triangulation of the full image rectangle whose
vertex list is the 68 landmarks followed by 8 boundary control points.

Run from the repository root:  python3 scripts/gen_face_template.py
"""

import os

import numpy as np
from scipy.spatial import Delaunay

SIZE = 96.0

# 68-point layout (x, y) in a 96x96 canonical frontal frame, y down.
# Groups: 0-16 jaw, 17-26 brows, 27-35 nose, 36-47 eyes, 48-67 mouth.
LANDMARKS = [
    (13.2, 38.4), (14.1, 46.7), (15.6, 54.8), (17.8, 62.6), (21.3, 69.8),
    (26.2, 76.1), (32.3, 81.2), (39.6, 84.8), (48.1, 86.2), (56.5, 84.7),
    (63.8, 81.0), (69.9, 75.8), (74.7, 69.5), (78.1, 62.3), (80.3, 54.5),
    (81.8, 46.4), (82.7, 38.1),
    (20.6, 33.1), (25.4, 30.2), (31.2, 29.3), (37.0, 30.4), (42.1, 32.6),
    (54.2, 32.4), (59.3, 30.1), (65.1, 29.5), (70.8, 30.6), (75.5, 33.3),
    (48.2, 38.6), (48.3, 44.9), (48.1, 51.2), (48.0, 57.5),
    (41.9, 60.8), (44.8, 61.9), (48.1, 62.7), (51.4, 61.8), (54.3, 60.7),
    (23.8, 40.3), (27.6, 38.1), (32.4, 38.0), (36.5, 40.1), (32.5, 42.3),
    (27.7, 42.4),
    (59.4, 40.2), (63.5, 38.2), (68.3, 38.1), (72.2, 40.4), (68.2, 42.2),
    (63.4, 42.5),
    (35.4, 72.1), (39.2, 69.4), (43.6, 67.9), (48.0, 67.5), (52.5, 67.8),
    (56.9, 69.3), (60.8, 72.0), (56.8, 74.9), (52.4, 76.6), (48.1, 77.1),
    (43.7, 76.7), (39.3, 75.0),
    (38.9, 72.0), (43.8, 70.8), (48.0, 70.5), (52.3, 70.7), (57.2, 71.9),
    (52.2, 73.4), (48.0, 73.7), (43.9, 73.5),
]

CORNERS = [(0.0, 0.0), (SIZE, 0.0), (SIZE, SIZE), (0.0, SIZE)]
MIDPOINTS = [(SIZE / 2, 0.0), (SIZE, SIZE / 2), (SIZE / 2, SIZE), (0.0, SIZE / 2)]
# boundary indices: corners 68..71, midpoints 72..75
# midpoint 72 splits side (68,69), 73 splits (69,70), 74 (70,71), 75 (71,68)
SIDE_OF_MID = {72: (68, 69), 73: (69, 70), 74: (70, 71), 75: (71, 68)}


def signed_area(pts, tri):
    a, b, c = (np.asarray(pts[i]) for i in tri)
    return 0.5 * float(np.cross(b - a, c - a))


def barycentric(p, a, b, c):
    m = np.array([[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]])
    det = np.linalg.det(m)
    rhs = np.array([p[0] - a[0], p[1] - a[1]])
    beta, gamma = np.linalg.solve(m, rhs) if abs(det) > 1e-12 else (np.nan, np.nan)
    return 1.0 - beta - gamma, beta, gamma


def main():
    pts = [np.array(p) for p in LANDMARKS + CORNERS + MIDPOINTS]
    core = np.array(LANDMARKS + CORNERS)
    tri = Delaunay(core)
    simplices = [tuple(int(i) for i in s) for s in tri.simplices]
    assert len(simplices) == 138, f"core mesh has {len(simplices)} triangles"
    used = set(i for s in simplices for i in s)
    assert used == set(range(72)), "core mesh dropped points"

    # split each border edge at its midpoint
    for mid, (a, b) in SIDE_OF_MID.items():
        owners = [s for s in simplices if a in s and b in s]
        assert len(owners) == 1, f"border edge ({a},{b}) owned by {len(owners)} triangles"
        s = owners[0]
        c = next(i for i in s if i not in (a, b))
        simplices.remove(s)
        simplices.append((a, mid, c))
        simplices.append((mid, b, c))
    assert len(simplices) == 142, f"{len(simplices)} triangles after splits"

    # orient consistently (positive signed area in the y-down frame)
    oriented = []
    for s in simplices:
        if signed_area(pts, s) < 0:
            s = (s[0], s[2], s[1])
        area = signed_area(pts, s)
        assert area > 1e-6, f"degenerate triangle {s} area {area}"
        oriented.append(s)
    oriented.sort()

    total = sum(signed_area(pts, s) for s in oriented)
    assert abs(total - SIZE * SIZE) < 1e-6, f"tiling area {total}"

    # every pixel center lies in at least one triangle
    for py in range(96):
        for px in range(96):
            p = (px + 0.5, py + 0.5)
            hit = False
            for s in oriented:
                al, be, ga = barycentric(p, pts[s[0]], pts[s[1]], pts[s[2]])
                if al >= -1e-9 and be >= -1e-9 and ga >= -1e-9:
                    hit = True
                    break
            assert hit, f"pixel center {p} uncovered"

    # landmark-only triangles must cover a usable central zone (occluders
    # anchor all four corners in triangles whose vertices are all landmarks)
    core_zone = 0
    for py in range(30, 80):
        for px in range(20, 76):
            p = (px + 0.5, py + 0.5)
            for s in oriented:
                al, be, ga = barycentric(p, pts[s[0]], pts[s[1]], pts[s[2]])
                if al >= -1e-9 and be >= -1e-9 and ga >= -1e-9:
                    if max(s) < 68:
                        core_zone += 1
                    break
    assert core_zone > 2000, f"landmark-only coverage too small: {core_zone}"

    def region_polygon(indices, scale):
        sub = np.array([LANDMARKS[i] for i in indices])
        from scipy.spatial import ConvexHull
        hull = ConvexHull(sub)
        centroid = sub.mean(axis=0)
        poly = [(centroid + scale * (sub[v] - centroid)) for v in hull.vertices]
        return [(round(float(x), 2), round(float(y), 2)) for x, y in poly]

    regions = {
        "eyes": region_polygon(range(36, 48), 1.30),
        "nose": region_polygon(range(29, 36), 1.35),
        "mouth": region_polygon(range(48, 68), 1.25),
    }

    out_path = os.path.join(os.path.dirname(__file__), "..", "data", "face_template.txt")
    os.makedirs(os.path.dirname(out_path), exist_ok=True)
    with open(out_path, "w") as f:
        f.write("# canonical frontal face template\n")
        f.write("# sections: size W H; landmarks N then 'index x y' rows;\n")
        f.write("# boundary M then 'index x y' rows (corners TL,TR,BR,BL then\n")
        f.write("# edge midpoints top,right,bottom,left); triangles T then\n")
        f.write("# 'i j k' vertex-index rows; region NAME V then 'x y' rows.\n")
        f.write(f"size {int(SIZE)} {int(SIZE)}\n")
        f.write(f"landmarks {len(LANDMARKS)}\n")
        for i, (x, y) in enumerate(LANDMARKS):
            f.write(f"{i} {x} {y}\n")
        bpts = CORNERS + MIDPOINTS
        f.write(f"boundary {len(bpts)}\n")
        for j, (x, y) in enumerate(bpts):
            f.write(f"{68 + j} {x} {y}\n")
        f.write(f"triangles {len(oriented)}\n")
        for a, b, c in oriented:
            f.write(f"{a} {b} {c}\n")
        for name, poly in regions.items():
            f.write(f"region {name} {len(poly)}\n")
            for x, y in poly:
                f.write(f"{x} {y}\n")
    print(f"wrote {out_path}: {len(oriented)} triangles, regions "
          f"{ {k: len(v) for k, v in regions.items()} }")


if __name__ == "__main__":
    main()
