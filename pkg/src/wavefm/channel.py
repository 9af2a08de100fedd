"""Geometric multipath channel synthesis.

Paths are the line-of-sight ray plus one first-order specular reflection
candidate per building face (image method). Each path carries a complex
gain with free-space amplitude, a delay, and departure/arrival angles;
the channel matrix is the standard sum of rank-one outer products of the
array responses weighted by gain and delay phase.

Angle convention: for an array with orthonormal in-plane axes (e1, e2),
a unit propagation direction u maps to elevation/azimuth via
sin(theta)cos(phi) = u.e1 and sin(theta)sin(phi) = u.e2, so the steering
phase of element (n, m) is -2*pi*spacing*(n u.e1 + m u.e2). The transmit
array spans (x, z); the receive line array spans x.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .profiles import SPEED_OF_LIGHT, Profile
from .scene import SceneMap, los_blocked

REFLECTION_COEFF = 0.7 * np.exp(1j * np.pi)  # fixed facade reflectivity
TX_AXES = (np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0]))
RX_AXES = (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]))


@dataclass(frozen=True)
class ArrayGeometry:
    n_x: int
    n_y: int
    spacing_wl: float = 0.5
    axes: tuple = TX_AXES

    @property
    def size(self):
        return self.n_x * self.n_y


@dataclass
class PathComponent:
    gain: complex
    delay_s: float
    aod: tuple  # (theta, phi) at the transmitter
    aoa: tuple  # (theta, phi) at the receiver
    kind: str  # "los" | "reflection"


@dataclass
class ChannelSample:
    H: np.ndarray  # (N_r, N_t) complex
    rx_position: np.ndarray  # (2,) meters relative to the base station
    scene_id: int
    paths: list = field(default_factory=list)

    @property
    def deep_nlos(self):
        return len(self.paths) == 0


def direction_to_angles(direction, axes):
    """(theta, phi) of a propagation direction w.r.t. array axes."""
    u = np.asarray(direction, dtype=np.float64)
    u = u / np.linalg.norm(u)
    s1 = float(u @ axes[0])
    s2 = float(u @ axes[1])
    sin_theta = min(np.hypot(s1, s2), 1.0)
    theta = np.arcsin(sin_theta)
    phi = np.arctan2(s2, s1)
    return theta, phi


def steering_vector(array: ArrayGeometry, theta, phi):
    """Unit-modulus array response, flattened as index = n * n_y + m."""
    n = np.arange(array.n_x)[:, None]
    m = np.arange(array.n_y)[None, :]
    u1 = np.sin(theta) * np.cos(phi)
    u2 = np.sin(theta) * np.sin(phi)
    phase = -2j * np.pi * array.spacing_wl * (n * u1 + m * u2)
    return np.exp(phase).reshape(array.size)


def _path(gain, dist, wavelength, aod, aoa, kind):
    amp = wavelength / (4.0 * np.pi * dist)
    return PathComponent(
        gain=complex(gain * amp * np.exp(-2j * np.pi * dist / wavelength)),
        delay_s=dist / SPEED_OF_LIGHT,
        aod=aod,
        aoa=aoa,
        kind=kind,
    )


def _face_reflection(scene, tx, rx, plane_axis, plane_value, sign, span, top, eps):
    """Image-method candidate off one vertical face; None if infeasible.

    plane_axis: 0 for x = const faces, 1 for y = const faces. `sign` is the
    outward normal direction; both endpoints must lie on that side.
    """
    if sign * (tx[plane_axis] - plane_value) <= 0.0:
        return None
    if sign * (rx[plane_axis] - plane_value) <= 0.0:
        return None
    image = tx.copy()
    image[plane_axis] = 2.0 * plane_value - tx[plane_axis]
    denom = rx[plane_axis] - image[plane_axis]
    if denom == 0.0:
        return None
    t = (plane_value - image[plane_axis]) / denom
    if not 0.0 < t < 1.0:
        return None
    point = image + t * (rx - image)
    other = 1 - plane_axis
    if not span[0] <= point[other] <= span[1]:
        return None
    if not 0.0 < point[2] <= top:
        return None
    # nudge off the face so the blockage test does not hit the reflector itself
    offset = point.copy()
    offset[plane_axis] += sign * eps
    if los_blocked(scene, tx, offset) or los_blocked(scene, offset, rx):
        return None
    return point


def trace_paths(scene: SceneMap, tx, rx, wavelength, max_reflections=1):
    """LOS plus first-order specular reflections off building faces.

    Returns possibly-empty list (deep NLOS is a data condition, not an
    error). `max_reflections` beyond 1 is not implemented.
    """
    if max_reflections > 1:
        raise NotImplementedError("only first-order reflections are modeled")
    tx = np.asarray(tx, dtype=np.float64)
    rx = np.asarray(rx, dtype=np.float64)
    paths = []
    if not los_blocked(scene, tx, rx):
        d = float(np.linalg.norm(rx - tx))
        aod = direction_to_angles(rx - tx, TX_AXES)
        aoa = direction_to_angles(tx - rx, RX_AXES)
        paths.append(_path(1.0, d, wavelength, aod, aoa, "los"))
    if max_reflections < 1:
        return paths
    eps = scene.cell_m * 1e-2
    for b in scene.buildings:
        x0, y0, x1, y1 = b.bounds_m(scene.cell_m)
        faces = (
            (0, x0, -1.0, (y0, y1)),
            (0, x1, +1.0, (y0, y1)),
            (1, y0, -1.0, (x0, x1)),
            (1, y1, +1.0, (x0, x1)),
        )
        for axis, value, sign, span in faces:
            point = _face_reflection(
                scene, tx, rx, axis, value, sign, span, b.height, eps
            )
            if point is None:
                continue
            dist = float(np.linalg.norm(point - tx) + np.linalg.norm(rx - point))
            aod = direction_to_angles(point - tx, TX_AXES)
            aoa = direction_to_angles(point - rx, RX_AXES)
            paths.append(
                _path(REFLECTION_COEFF, dist, wavelength, aod, aoa, "reflection")
            )
    return paths


def synthesize_channel(paths, array_tx: ArrayGeometry, array_rx: ArrayGeometry, f):
    """H[i, j] = sum_l gain_l * a_r,i(aoa_l) * conj(a_t,j(aod_l)) * e^{-2j pi f tau_l}."""
    h = np.zeros((array_rx.size, array_tx.size), dtype=np.complex128)
    for p in paths:
        a_t = steering_vector(array_tx, *p.aod)
        a_r = steering_vector(array_rx, *p.aoa)
        h += p.gain * np.exp(-2j * np.pi * f * p.delay_s) * np.outer(a_r, a_t.conj())
    return h


def add_noise(h, snr_db, rng):
    """Circularly-symmetric complex Gaussian noise at the requested SNR.

    Per-element variance is ||H||_F^2 / (N * 10^(snr/10)); snr_db=None
    means noiseless passthrough.
    """
    if snr_db is None or np.isinf(snr_db):
        return h.copy()
    power = float((np.abs(h) ** 2).sum())
    if power == 0.0:
        raise ValueError("cannot scale noise to an all-zero channel")
    var = power / (h.size * 10.0 ** (snr_db / 10.0))
    noise = rng.standard_normal(h.shape) + 1j * rng.standard_normal(h.shape)
    return h + np.sqrt(var / 2.0) * noise


def tx_array_for(profile: Profile):
    return ArrayGeometry(profile.array_nx, profile.array_ny, profile.spacing_wl, TX_AXES)


def rx_array_for(profile: Profile, n_antennas=1):
    return ArrayGeometry(n_antennas, 1, profile.spacing_wl, RX_AXES)


def channel_for_user(scene: SceneMap, profile: Profile, user_pos, n_rx=1):
    """One (scene, user) channel realization at the profile's carrier."""
    tx = scene.bs_position
    paths = trace_paths(scene, tx, user_pos, profile.wavelength_m)
    h = synthesize_channel(
        paths, tx_array_for(profile), rx_array_for(profile, n_rx), profile.carrier_hz
    )
    rel = np.asarray(user_pos[:2], dtype=np.float64) - tx[:2]
    return ChannelSample(H=h, rx_position=rel, scene_id=scene.scene_id, paths=paths)
