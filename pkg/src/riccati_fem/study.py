"""Convergence studies: gain errors, rate fits, CSV and SVG artifacts."""

import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import fem, models
from .riccati import DreConfig, solve_care


class DomainMismatch(ValueError):
    """Gains to compare live on different domains or component counts."""


class InsufficientPoints(ValueError):
    """Fewer than two error points above the floor; no rate can be fit."""


class IoError(OSError):
    """Artifact file could not be written."""


CSV_HEADER = "case,k,n,h,error_l2,error_h1l2,rate"

#: slope of the reference guide line drawn per order in the SVG plots
EXPECTED_RATES = {
    "scalar": lambda k: 1.0,
    "thermal1d": lambda k: k + 1.0,
    "thermal2d": lambda k: k + 1.0,
    "wave": lambda k: float(k),
    "violation-gaussian2d": lambda k: 0.9,
    "violation-delta1d": lambda k: k + 1.0,
}

CASES = tuple(EXPECTED_RATES)


@dataclass(frozen=True)
class StudyConfig:
    """One convergence experiment: which case, meshes, and model numbers."""

    case: str
    orders: tuple = ()
    mesh_sizes: tuple = ()
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1e-4
    wave_speed: float = 1.0
    r_weight: float = 1e-4
    beta_weight: float = 1e-2
    tau: float = 0.1
    dt: float = 1e-3
    scalar_a: float = 1.0
    scalar_f: float = 1.0
    scalar_g: float = 1.0
    eps_grid: tuple = ()
    reference_p: int = 128
    reference_factor: int = 4
    out_csv: str = ""
    out_svg: str = ""

    def __post_init__(self):
        if self.case not in CASES:
            raise ValueError("unknown case %r (one of %s)" % (self.case, ", ".join(CASES)))
        if self.case == "scalar":
            if len(self.eps_grid) == 0:
                object.__setattr__(
                    self, "eps_grid",
                    tuple(np.logspace(-4.0, 0.0, 16)),
                )
        else:
            if not self.orders or not self.mesh_sizes:
                raise ValueError("orders and mesh_sizes must be nonempty")
            if any(k < 1 for k in self.orders) or any(n < 1 for n in self.mesh_sizes):
                raise ValueError("orders and mesh_sizes must be positive")
        for name in ("alpha", "beta", "gamma", "wave_speed", "r_weight",
                     "beta_weight", "tau", "dt"):
            if getattr(self, name) <= 0.0:
                raise ValueError("%s must be positive" % name)


@dataclass(frozen=True)
class StudyRow:
    case: str
    k: int | None
    n: int | None
    h: float
    error_l2: float | None
    error_h1l2: float | None
    rate: float | None


@dataclass
class StudyResult:
    case: str
    norm_label: str
    rows: list = field(default_factory=list)
    rates: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)


def _quad_points_1d(domain, n_sub=256, n_gauss=6):
    rule = fem.quad_rule("gauss-legendre", n_gauss)
    a, b = domain
    h = (b - a) / n_sub
    xs = (a + h * (np.arange(n_sub)[:, None] + (rule.points[None, :] + 1.0) / 2.0))
    ws = np.broadcast_to(rule.weights * (h / 2.0), xs.shape)
    return xs.ravel(), ws.ravel().copy()


def _quad_points_on_mesh(space):
    rule = fem.quad_rule("gauss-legendre", space.order + 2)
    a = space.domain[0]
    xs = (a + space.h * (np.arange(space.n_elem)[:, None]
                         + (rule.points[None, :] + 1.0) / 2.0))
    ws = np.broadcast_to(rule.weights * (space.h / 2.0), xs.shape)
    return xs.ravel(), ws.ravel().copy()


def _component_norms_1d(coarse, ref):
    """L2 and H1 norms of the per-component differences of two 1D gains."""
    xs, ws = _quad_points_1d(coarse.space.domain)
    vc, dc = fem.evaluate(coarse, xs)
    vr, dr = fem.evaluate(ref, xs)
    l2sq = float(np.sum(ws * (vc - vr) ** 2))
    h1sq = l2sq + float(np.sum(ws * (dc - dr) ** 2))
    return np.sqrt(l2sq), np.sqrt(h1sq)


def _l2_norm_2d(coarse, ref):
    ref_space = ref.space
    xs, wx = _quad_points_on_mesh(ref_space)
    vc, _, _ = fem.evaluate_grid(coarse, xs, xs)
    vr, _, _ = fem.evaluate_grid(ref, xs, xs)
    diff2 = (vc - vr) ** 2
    return float(np.sqrt(wx @ diff2 @ wx))


def gain_error(coarse, ref, norm="L2"):
    """Error between two gains in L2 or the H1 x L2 product norm.

    Both gains must share domain and component count.  Product norms
    follow ||(v, w)|| = ||v||_X + ||w||_Y; H1 is the full Sobolev norm.
    The integrals use a fixed composite Gauss rule (256 x 6 points in 1D,
    the reference-mesh tensor rule in 2D), accurate far below the 1e-8
    error floor of the studies.
    """
    cc, rc = coarse.components, ref.components
    if len(cc) != len(rc):
        raise DomainMismatch("component counts differ")
    for fc, fr in zip(cc, rc):
        if fc.space.domain != fr.space.domain or fc.space.dim_kind != fr.space.dim_kind:
            raise DomainMismatch("gains live on different domains")
    if norm not in ("L2", "H1xL2"):
        raise ValueError("norm must be 'L2' or 'H1xL2'")
    if cc[0].space.dim_kind == "2d":
        if norm != "L2":
            raise ValueError("2D gains are compared in L2 only")
        return sum(_l2_norm_2d(fc, fr) for fc, fr in zip(cc, rc))
    total = 0.0
    for idx, (fc, fr) in enumerate(zip(cc, rc)):
        l2, h1 = _component_norms_1d(fc, fr)
        if norm == "H1xL2" and idx == 0:
            if len(cc) < 2:
                raise DomainMismatch("H1xL2 norm needs a two-component gain")
            total += h1
        else:
            total += l2
    return total


def fit_rate(points, floor=1e-8):
    """Least-squares slope of log(error) against log(h).

    Points with error at or below ``floor`` are discarded (they sit in the
    numerical noise); fewer than two surviving points raises
    InsufficientPoints.
    """
    kept = [(h, e) for h, e in points if e > floor]
    if len(kept) < 2:
        raise InsufficientPoints(
            "need at least two points above the %g floor, have %d"
            % (floor, len(kept))
        )
    hs = np.log([h for h, _ in kept])
    es = np.log([e for _, e in kept])
    return float(np.polyfit(hs, es, 1)[0])


def _threads():
    env = os.environ.get("RICCATI_FEM_THREADS", "")
    if env.strip():
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _thermal1d_cell(config, case, reference, k, n):
    model = models.thermal1d_model(n, k, config.alpha, config.beta,
                                   case.b, case.q)
    gain = models.gain_trajectory(model, DreConfig(tau=case.tau, dt=case.dt))
    err = gain_error(gain, reference, "L2")
    return err, None


def _thermal2d_cell(config, case, reference, k, n):
    model = models.thermal2d_model(n, k, case.alpha, case.beta, case.b,
                                   case.q, case.r_weight)
    sol = solve_care(model.care_problem())
    gain = models.gain_from_care(model, sol.P)
    err = gain_error(gain, reference, "L2")
    return err, None


def _wave_cell(config, case, reference, k, n):
    model = models.wave_model(n, k, case.c, case.gamma, case.b1, case.b2,
                              case.q1, case.q2, case.beta_weight)
    sol = solve_care(model.care_problem())
    gain = models.gain_from_care(model, sol.P)
    err_l2 = gain_error(gain, reference, "L2")
    err_h1 = gain_error(gain, reference, "H1xL2")
    return err_l2, err_h1


def _scalar_result(config):
    result = StudyResult(case="scalar", norm_label="abs")
    data = models.scalar_study(config.scalar_a, config.scalar_f,
                               config.scalar_g, config.eps_grid)
    pts = [(eps, err) for eps, err in data]
    try:
        rate = fit_rate(pts, floor=0.0)
    except InsufficientPoints:
        rate = None
    for eps, err in data:
        result.rows.append(StudyRow(case="scalar", k=None, n=None, h=eps,
                                    error_l2=err, error_h1l2=None, rate=rate))
    if rate is not None:
        result.rates[0] = rate
    return result


_CELL_RUNNERS = {
    "thermal1d": _thermal1d_cell,
    "thermal2d": _thermal2d_cell,
    "wave": _wave_cell,
    "violation-gaussian2d": _thermal2d_cell,
    "violation-delta1d": _thermal1d_cell,
}


def _case_setup(config):
    """Model case dataclass, element length factor, and reference builder."""
    if config.case in ("thermal1d", "violation-delta1d"):
        b = "delta1d" if config.case == "violation-delta1d" else "bump1d"
        case = models.Thermal1dCase(alpha=config.alpha, beta=config.beta,
                                    b=b, q="bump1d", tau=config.tau,
                                    dt=config.dt)
        make_ref = lambda k: models.reference_1d("thermal", case,
                                                 config.reference_p)
        return case, 2.0, make_ref, "L2", False
    if config.case in ("thermal2d", "violation-gaussian2d"):
        prof = "gaussian2d" if config.case == "violation-gaussian2d" else "bump2d"
        case = models.Thermal2dCase(alpha=config.alpha, beta=config.beta,
                                    b=prof, q=prof, r_weight=config.r_weight)
        n_ref = config.reference_factor * max(config.mesh_sizes)
        make_ref = lambda k: models.thermal2d_reference_gain(n_ref, k, case)
        return case, 1.0, make_ref, "L2", True
    if config.case == "wave":
        case = models.WaveCase(c=config.wave_speed, gamma=config.gamma,
                               beta_weight=config.beta_weight)
        make_ref = lambda k: models.reference_1d("wave", case,
                                                 config.reference_p)
        return case, 2.0, make_ref, "H1xL2", False
    raise ValueError("unhandled case %r" % config.case)


def run_study(config):
    """Run every (k, n) cell of a study and fit per-order rates.

    Independent cells execute on a thread pool sized by the
    RICCATI_FEM_THREADS environment variable (hardware count by default);
    output ordering and values are deterministic.  Per-cell failures are
    collected in result.failures with their context and do not stop the
    remaining cells.
    """
    if config.case == "scalar":
        return _scalar_result(config)
    case, length, make_ref, norm_label, ref_per_order = _case_setup(config)
    runner = _CELL_RUNNERS[config.case]
    result = StudyResult(case=config.case, norm_label=norm_label)
    references = {}
    ref_orders = tuple(config.orders) if ref_per_order else (None,)
    for ko in ref_orders:
        try:
            references[ko] = make_ref(ko)
        except Exception as exc:  # noqa: BLE001 - reported with context
            result.failures.append("reference (k=%s): %s" % (ko, exc))
    cells = [(k, n) for k in config.orders for n in config.mesh_sizes]

    def worker(cell):
        k, n = cell
        ref = references.get(k if ref_per_order else None)
        if ref is None:
            raise RuntimeError("reference unavailable")
        return runner(config, case, ref, k, n)

    outcomes = {}
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        futures = {pool.submit(worker, cell): cell for cell in cells}
        for fut, cell in futures.items():
            try:
                outcomes[cell] = fut.result()
            except Exception as exc:  # noqa: BLE001 - reported with context
                result.failures.append("k=%d n=%d: %s" % (cell[0], cell[1], exc))
    for k in config.orders:
        pts = []
        for n in config.mesh_sizes:
            if (k, n) in outcomes:
                err = outcomes[(k, n)][1 if norm_label == "H1xL2" else 0]
                pts.append((length / n, err))
        try:
            rate = fit_rate(pts) if pts else None
        except InsufficientPoints:
            rate = None
        if rate is not None:
            result.rates[k] = rate
        for n in config.mesh_sizes:
            if (k, n) not in outcomes:
                continue
            err_l2, err_h1 = outcomes[(k, n)]
            result.rows.append(StudyRow(
                case=config.case, k=k, n=n, h=length / n,
                error_l2=err_l2, error_h1l2=err_h1, rate=rate,
            ))
    return result


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return "%.17g" % value
    return str(value)


def write_csv(result, path):
    """Write the study rows as CSV (atomically: temp file then rename)."""
    lines = [CSV_HEADER]
    for row in result.rows:
        lines.append(",".join([
            row.case, _fmt(row.k), _fmt(row.n), _fmt(row.h),
            _fmt(row.error_l2), _fmt(row.error_h1l2), _fmt(row.rate),
        ]))
    payload = "\n".join(lines) + "\n"
    _atomic_write(path, payload)


def _atomic_write(path, payload):
    directory = os.path.dirname(os.path.abspath(path))
    try:
        fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError("cannot write %s: %s" % (path, exc)) from exc


def read_csv(path):
    """Parse a CSV produced by write_csv back into a StudyResult."""
    with open(path, "r", encoding="utf-8") as handle:
        lines = [ln.rstrip("\n") for ln in handle if ln.strip()]
    if not lines or lines[0] != CSV_HEADER:
        raise IoError("unrecognized CSV header in %s" % path)
    result = StudyResult(case="", norm_label="")
    for line in lines[1:]:
        parts = line.split(",")
        case, k, n, h, e2, eh, rate = parts
        row = StudyRow(
            case=case,
            k=int(k) if k else None,
            n=int(n) if n else None,
            h=float(h),
            error_l2=float(e2) if e2 else None,
            error_h1l2=float(eh) if eh else None,
            rate=float(rate) if rate else None,
        )
        result.rows.append(row)
        result.case = case
        if row.rate is not None and row.k is not None:
            result.rates[row.k] = row.rate
    return result


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

_VIEW_W, _VIEW_H = 640.0, 480.0
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 70.0, 20.0, 20.0, 50.0


def write_svg(result, path):
    """Deterministic standalone log-log SVG plot of a study result.

    One polyline per order with a dashed guide line at the case's
    expected rate anchored at the series' first point, decade ticks, and
    a legend.  Identical results produce byte-identical files.
    """
    series = {}
    for row in result.rows:
        err = row.error_h1l2 if result.norm_label == "H1xL2" else row.error_l2
        if err is None:
            err = row.error_l2
        if err is None or err <= 0.0:
            continue
        series.setdefault(row.k if row.k is not None else 0, []).append((row.h, err))
    body = _svg_body(result, series)
    _atomic_write(path, body)


def _svg_body(result, series):
    xs = [h for pts in series.values() for h, _ in pts]
    ys = [e for pts in series.values() for _, e in pts]
    if xs:
        x_lo, x_hi = _decade_bounds(min(xs), max(xs))
        y_lo, y_hi = _decade_bounds(min(ys), max(ys))
    else:
        x_lo, x_hi, y_lo, y_hi = 1e-2, 1.0, 1e-8, 1.0

    def to_px(h, e):
        fx = (np.log10(h) - np.log10(x_lo)) / (np.log10(x_hi) - np.log10(x_lo))
        fy = (np.log10(e) - np.log10(y_lo)) / (np.log10(y_hi) - np.log10(y_lo))
        px = _MARGIN_L + fx * (_VIEW_W - _MARGIN_L - _MARGIN_R)
        py = _VIEW_H - _MARGIN_B - fy * (_VIEW_H - _MARGIN_T - _MARGIN_B)
        return px, py

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        '<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        'width="%d" height="%d" viewBox="0 0 %d %d">'
        % (int(_VIEW_W), int(_VIEW_H), int(_VIEW_W), int(_VIEW_H)),
        '<rect width="%d" height="%d" fill="white"/>' % (int(_VIEW_W), int(_VIEW_H)),
        '<rect x="%.1f" y="%.1f" width="%.1f" height="%.1f" '
        'fill="none" stroke="black" stroke-width="1"/>'
        % (_MARGIN_L, _MARGIN_T, _VIEW_W - _MARGIN_L - _MARGIN_R,
           _VIEW_H - _MARGIN_T - _MARGIN_B),
    ]
    for exp in range(int(np.floor(np.log10(x_lo))), int(np.ceil(np.log10(x_hi))) + 1):
        h = 10.0 ** exp
        if x_lo <= h <= x_hi:
            px, _ = to_px(h, y_lo)
            parts.append('<line x1="%.2f" y1="%.1f" x2="%.2f" y2="%.1f" '
                         'stroke="#cccccc" stroke-width="0.5"/>'
                         % (px, _MARGIN_T, px, _VIEW_H - _MARGIN_B))
            parts.append('<text x="%.2f" y="%.1f" font-size="12" '
                         'text-anchor="middle">1e%d</text>'
                         % (px, _VIEW_H - _MARGIN_B + 16.0, exp))
    for exp in range(int(np.floor(np.log10(y_lo))), int(np.ceil(np.log10(y_hi))) + 1):
        e = 10.0 ** exp
        if y_lo <= e <= y_hi:
            _, py = to_px(x_lo, e)
            parts.append('<line x1="%.1f" y1="%.2f" x2="%.1f" y2="%.2f" '
                         'stroke="#cccccc" stroke-width="0.5"/>'
                         % (_MARGIN_L, py, _VIEW_W - _MARGIN_R, py))
            parts.append('<text x="%.1f" y="%.2f" font-size="12" '
                         'text-anchor="end">1e%d</text>'
                         % (_MARGIN_L - 6.0, py + 4.0, exp))
    parts.append('<text x="%.1f" y="%.1f" font-size="13" text-anchor="middle">h'
                 '</text>' % (_MARGIN_L + 0.5 * (_VIEW_W - _MARGIN_L - _MARGIN_R),
                              _VIEW_H - 12.0))
    parts.append('<text x="16" y="%.1f" font-size="13" text-anchor="middle" '
                 'transform="rotate(-90 16 %.1f)">error (%s)</text>'
                 % (_MARGIN_T + 0.5 * (_VIEW_H - _MARGIN_T - _MARGIN_B),
                    _MARGIN_T + 0.5 * (_VIEW_H - _MARGIN_T - _MARGIN_B),
                    result.norm_label or "L2"))
    expected = EXPECTED_RATES.get(result.case, lambda k: 1.0)
    legend_y = _MARGIN_T + 16.0
    for idx, k in enumerate(sorted(series)):
        pts = sorted(series[k])
        color = _PALETTE[idx % len(_PALETTE)]
        coords = " ".join("%.2f,%.2f" % to_px(h, e) for h, e in pts)
        parts.append('<polyline points="%s" fill="none" stroke="%s" '
                     'stroke-width="1.5"/>' % (coords, color))
        for h, e in pts:
            px, py = to_px(h, e)
            parts.append('<circle cx="%.2f" cy="%.2f" r="3" fill="%s"/>'
                         % (px, py, color))
        slope = expected(k)
        h0, e0 = pts[0]
        h1 = pts[-1][0]
        e1 = e0 * (h1 / h0) ** slope
        (gx0, gy0), (gx1, gy1) = to_px(h0, e0), to_px(h1, e1)
        parts.append('<line x1="%.2f" y1="%.2f" x2="%.2f" y2="%.2f" '
                     'stroke="%s" stroke-width="1" stroke-dasharray="5,4"/>'
                     % (gx0, gy0, gx1, gy1, color))
        fitted = result.rates.get(k)
        label = "k=%s" % k
        if fitted is not None:
            label += " (rate %.2f, guide %.2f)" % (fitted, slope)
        parts.append('<text x="%.1f" y="%.2f" font-size="12" fill="%s">%s</text>'
                     % (_MARGIN_L + 10.0, legend_y, color, label))
        legend_y += 16.0
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _decade_bounds(lo, hi):
    lo_b = 10.0 ** np.floor(np.log10(lo))
    hi_b = 10.0 ** np.ceil(np.log10(hi))
    if lo_b == hi_b:
        hi_b = lo_b * 10.0
    return lo_b, hi_b
