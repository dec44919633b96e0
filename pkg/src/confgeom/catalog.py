"""Built-in scenarios, stored as the same TOML text a user would write."""

from __future__ import annotations

CATALOG: dict[str, str] = {}


def _add(name: str, text: str) -> None:
    CATALOG[name] = text.strip() + "\n"


_add("flat_line_r3", """
name = "flat_line_r3"
description = "Straight line in flat R^3: totally geodesic, zero invariants, affinely parametrized conformal geodesic."
tol = 1e-9
tasks = ["invariants", "classify", "geodesic"]

[manifold]
kind = "euclidean"
dim = 3

[weyl]
theta = ["0.4*x2", "x1*x3", "(-0.3)+x1^2"]

[immersion]
dim = 1
components = ["x1", "0", "0"]
points = [[-0.5], [0.0], [0.7]]

[immersion.laplace]
sigma = "0"

[curve]
x0 = [0.0, 0.0, 0.0]
v0 = [1.0, 0.0, 0.0]
a0 = [0.0, 0.0, 0.0]
t_end = 1.0
step = 0.01

[expect]
verdict = "strongly_geodesic"
mu_zero = true
rho = [[0.0]]
""")

_add("flat_circle_r3", """
name = "flat_circle_r3"
description = "Unit-speed circle data in flat R^3; the integrated conformal geodesic stays on a round circle."
tol = 1e-5
tasks = ["geodesic"]

[manifold]
kind = "euclidean"
dim = 3

[curve]
x0 = [1.0, 0.0, 0.0]
v0 = [0.0, 1.0, 0.0]
a0 = [-1.0, 0.0, 0.0]
t_end = 1.0
step = 0.001

[expect]
circle = true
""")

_add("section5_pseudogeodesic", """
name = "section5_pseudogeodesic"
description = "Flat plane in a realized 4-manifold, spanned by common conformal geodesics yet nowhere umbilic."
tol = 1e-6
tasks = ["verify_section5"]

[section5]
grid = 8
""")

_add("product_r3_s2", """
name = "product_r3_s2"
description = "R^3 x {x} in the Riemannian product R^3 x S^2: weakly but not strongly geodesic, rho = -g/12."
tol = 1e-6
tasks = ["invariants", "classify"]

[weyl]
theta = ["0.3*x1", "x2*x4", "0", "0.2*x5", "x3"]

[manifold]
kind = "metric"
dim = 5
metric = [
  ["1", "0", "0", "0", "0"],
  ["0", "1", "0", "0", "0"],
  ["0", "0", "1", "0", "0"],
  ["0", "0", "0", "4/(1+x4^2+x5^2)^2", "0"],
  ["0", "0", "0", "0", "4/(1+x4^2+x5^2)^2"],
]

[immersion]
dim = 3
components = ["x1", "x2", "x3", "0", "0"]
points = [[0.0, 0.0, 0.0], [0.4, -0.3, 0.2], [-1.0, 0.5, 2.0]]

[expect]
verdict = "weakly_geodesic"
mu_zero = true
rho = [
  [-0.08333333333333333, 0.0, 0.0],
  [0.0, -0.08333333333333333, 0.0],
  [0.0, 0.0, -0.08333333333333333],
]
""")

_add("sphere_s3_in_r4", """
name = "sphere_s3_in_r4"
description = "Unit S^3 in flat R^4 via inverse stereographic projection: strongly geodesic."
tol = 1e-8
tasks = ["invariants", "classify"]

[manifold]
kind = "euclidean"
dim = 4

[weyl]
theta = ["0.2*x4", "x1*x2", "0.5", "x3^2"]

[immersion]
dim = 3
components = [
  "2*x1/(1+x1^2+x2^2+x3^2)",
  "2*x2/(1+x1^2+x2^2+x3^2)",
  "2*x3/(1+x1^2+x2^2+x3^2)",
  "(x1^2+x2^2+x3^2-1)/(1+x1^2+x2^2+x3^2)",
]
points = [[0.0, 0.0, 0.0], [0.3, -0.2, 0.5], [1.2, 0.4, -0.7]]

[expect]
verdict = "strongly_geodesic"
mu_zero = true
rho = [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]
""")

_add("round_s3_stereographic", """
name = "round_s3_stereographic"
description = "Round unit S^3 in the stereographic gauge: Schouten tensor g/2 and a great-circle conformal geodesic."
tol = 1e-7
tasks = ["curvature", "geodesic"]

[manifold]
kind = "sphere"
dim = 3
radius = 1.0

[weyl]
theta = ["0.3*x2", "x1*x3", "-0.2"]

[curvature]
points = [[0.0, 0.0, 0.0], [0.2, -0.4, 0.3], [0.5, 0.5, -0.1]]

[curve]
x0 = [0.0, 0.0, 0.0]
v0 = [0.5, 0.0, 0.0]
a0 = [0.0, 0.0, 0.0]
t_end = 1.0
step = 0.01

[expect]
schouten_factor = 0.5
""")

_add("sphere_s2_stereographic", """
name = "sphere_s2_stereographic"
description = "Round S^2 as a Mobius surface in its stereographic gauge, with the flat Mobius structure of the chart."
tol = 1e-8
tasks = ["curvature"]

[manifold]
kind = "sphere"
dim = 2
radius = 1.0

[mobius]
h0 = [["0", "0"], ["0", "0"]]

[weyl]
theta = ["x2", "0.5*x1^2"]

[curvature]
points = [[0.0, 0.0], [0.3, -0.6]]

[expect]
schouten_factor = 0.5
""")

_add("circle_in_mobius_plane", """
name = "circle_in_mobius_plane"
description = "Circle of radius 2 in the flat Mobius plane with an arc-length Laplace structure."
tol = 1e-9
tasks = ["invariants", "classify"]

[manifold]
kind = "euclidean"
dim = 2

[weyl]
theta = ["0.3*x2", "x1*x2"]

[mobius]
h0 = [["0", "0"], ["0", "0"]]

[immersion]
dim = 1
components = ["2*cos(x1/2)", "2*sin(x1/2)"]
points = [[0.0], [1.3]]

[immersion.laplace]
sigma = "0.125"

[expect]
verdict = "strongly_geodesic"
mu_zero = true
rho = [[0.0]]
""")

_add("realize_plane_codim2", """
name = "realize_plane_codim2"
description = "Prescribe B0, mu, rho on a conformally flat plane with a rotating normal connection and rebuild them."
tol = 1e-5
tasks = ["realize"]

[realize]
base_metric = [["exp(0.2*x1)", "0"], ["0", "exp(0.2*x1)"]]
g_nu = [[1.0, 0.0], [0.0, 1.0]]
B0 = [[["0.5+0.1*x2", "0.2"], ["0.3", "x1"]], [["0.3", "x1"], ["-0.5-0.1*x2", "-0.2"]]]
connection = [[["0", "0.4*x2"], ["-0.4*x2", "0"]], [["0", "0.1"], ["-0.1", "0"]]]
mu = [[0.2, -0.4], [0.1, 0.3]]
rho = [[-0.3, 0.1], [0.1, 0.25]]
points = [[0.0, 0.0], [0.2, -0.1]]

[realize.mobius]
h0 = [["0", "0"], ["0", "0"]]
""")

_add("random_poly_7", """
name = "random_poly_7"
description = "Seeded random cubic metric on R^3 with a random Weyl structure and a random graph surface."
seed = 7
tol = 1e-6
tasks = ["curvature", "invariants"]

[manifold]
kind = "random_poly"
dim = 3
scale = 0.1

[weyl]
random = true
scale = 0.5

[immersion]
random_graph = true
dim = 2
npoints = 3

[curvature]
npoints = 3

[expect]
mu_zero = true
""")

_add("random_poly_42", """
name = "random_poly_42"
description = "Seeded random cubic metric on R^4 with a random Weyl structure and a random graph hypersurface."
seed = 42
tol = 1e-6
tasks = ["curvature", "invariants"]

[manifold]
kind = "random_poly"
dim = 4
scale = 0.1

[weyl]
random = true
scale = 0.5

[immersion]
random_graph = true
dim = 3
npoints = 2

[curvature]
npoints = 2

[expect]
mu_zero = true
""")


def names() -> list[str]:
    return sorted(CATALOG)


def get(name: str) -> str:
    if name not in CATALOG:
        raise KeyError(f"unknown catalog scenario {name!r}; available: {', '.join(names())}")
    return CATALOG[name]
