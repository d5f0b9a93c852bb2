"""Physical model of the climbing robot and synthetic sensor-signal generation.

The robot-wall connection is a lumped spring-mass-damper whose stiffness is
proportional to the number of attached magnetic plates; a slender elastic rod
couples a remote sensor to the body and acts as a mechanical amplifier for
small vibrations.  ``simulate_response`` integrates both with a fixed-step
explicit 4th-order Runge-Kutta scheme and emits a nine-channel sensor frame
(body accelerometer, rod-tip accelerometer, body gyro), deterministic per
seed.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigurationError, DetachedError, DomainError

BODY_ACC_AXES = ("body_ax", "body_ay", "body_az")
ROD_ACC_AXES = ("rod_ax", "rod_ay", "rod_az")
GYRO_AXES = ("gyro_x", "gyro_y", "gyro_z")
ALL_CHANNELS = BODY_ACC_AXES + ROD_ACC_AXES + GYRO_AXES

# Body rocking rate picked up by the gyro, in deg/s per m/s of body velocity.
GYRO_RATE_PER_VELOCITY = 60.0
# Reference along-wall load (N) at which the excitation scale factor is 1.
REFERENCE_WALL_LOAD = 100.0


# ---------------------------------------------------------------------------
# configuration types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlateGeometry:
    """Geometry and force state of one magnetic plate at the track front."""

    magnetic_coefficient: float   # N*m^2, attraction = coeff / standoff^2
    standoff: float               # m, plate-to-wall distance
    restore_force: float = 0.0    # N, track restorative force
    tension_force: float = 0.0    # N, track tension force
    bend_angle: float = 0.0       # rad, track bending angle

    def __post_init__(self):
        if self.standoff <= 0:
            raise DomainError(f"standoff must be positive, got {self.standoff}")
        if not 0.0 <= self.bend_angle <= math.pi / 2:
            raise DomainError(f"bend_angle must lie in [0, pi/2], got {self.bend_angle}")
        if self.restore_force < 0 or self.tension_force < 0:
            raise DomainError("track forces must be non-negative")


@dataclass(frozen=True)
class ClimbState:
    """Weights and wall inclination for one climb."""

    robot_weight: float           # N
    load_weight: float = 0.0      # N
    wall_angle: float = 0.0       # rad, inclination from the vertical plane

    def __post_init__(self):
        if self.robot_weight <= 0:
            raise DomainError("robot_weight must be positive")
        if self.load_weight < 0:
            raise DomainError("load_weight must be non-negative")
        if not 0.0 <= self.wall_angle <= math.pi / 2:
            raise DomainError(f"wall_angle must lie in [0, pi/2], got {self.wall_angle}")


@dataclass(frozen=True)
class AdhesionConfig:
    """Lumped parameters of the robot-wall contact."""

    plate_count: int              # attached plates N
    per_plate_stiffness: float    # N/m per plate
    mass: float                   # kg, robot + load
    damping: float                # N*s/m

    def __post_init__(self):
        if self.plate_count < 0:
            raise DomainError("plate_count must be non-negative")
        if self.per_plate_stiffness <= 0:
            raise DomainError("per_plate_stiffness must be positive")
        if self.mass <= 0:
            raise DomainError("mass must be positive")
        if self.damping < 0:
            raise DomainError("damping must be non-negative")


@dataclass(frozen=True)
class RodModel:
    """Spring-damper model of the sensor rod (rod mass neglected, tip mass M)."""

    stiffness: float              # N/m
    damping: float                # N*s/m
    tip_mass: float               # kg

    def __post_init__(self):
        if self.stiffness <= 0:
            raise DomainError("stiffness must be positive")
        if self.damping < 0:
            raise DomainError("damping must be non-negative")
        if self.tip_mass <= 0:
            raise DomainError("tip_mass must be positive")


@dataclass(frozen=True)
class ExcitationModel:
    """Forcing applied to the body oscillator.

    A single motor tone whose amplitude grows linearly with the excitation
    level (level 0 = no tone) on top of always-present band-limited ambient
    force noise.  Amplitudes are calibration constants of the simulator.
    ``amp_drift_sigma`` models slow log-normal drift of the overall forcing
    amplitude within a run (motor and contact variability); zero gives the
    exactly repeatable bench behaviour.
    """

    tone_hz: float = 25.0
    tone_amp: float = 40.0        # N per excitation level step
    ambient_std: float = 15.0     # N RMS of the band-limited ambient forcing
    ambient_cutoff_hz: float = 45.0
    amp_drift_sigma: float = 0.3
    amp_drift_cutoff_hz: float = 0.1


# Defaults chosen so the contact resonance for 4..6 plates falls at 36-44 Hz:
# inside the 50 Hz Nyquist band of the 100 Hz sensors, inside the ambient
# forcing band, and inside the rod's amplification band.
DEFAULT_ADHESION = AdhesionConfig(plate_count=6, per_plate_stiffness=1.5e5,
                                  mass=12.0, damping=150.0)
DEFAULT_ROD = RodModel(stiffness=1200.0, damping=0.8, tip_mass=0.03)
DEFAULT_CLIMB = ClimbState(robot_weight=68.6, load_weight=49.0,
                           wall_angle=math.radians(55.0))


@dataclass(frozen=True)
class SimScenario:
    """Everything needed to produce one deterministic sensor recording."""

    adhesion: AdhesionConfig = DEFAULT_ADHESION
    rod: RodModel = DEFAULT_ROD
    climb: ClimbState = DEFAULT_CLIMB
    excitation_level: int = 0
    sensor_noise_std: float | dict = 0.02   # channel units; scalar or per-channel map
    gravity_mag: float = 9.81
    duration_s: float = 10.0
    sample_rate_hz: float = 100.0
    seed: int = 0
    excitation: ExcitationModel = field(default_factory=ExcitationModel)

    def __post_init__(self):
        if self.excitation_level not in (0, 1, 2, 3):
            raise DomainError(f"excitation_level must be 0..3, got {self.excitation_level}")
        if self.duration_s <= 0:
            raise DomainError("duration_s must be positive")
        if self.sample_rate_hz <= 0:
            raise DomainError("sample_rate_hz must be positive")
        if self.gravity_mag < 0:
            raise DomainError("gravity_mag must be non-negative")

    def noise_std_for(self, channel: str) -> float:
        if isinstance(self.sensor_noise_std, dict):
            return float(self.sensor_noise_std.get(channel, 0.0))
        return float(self.sensor_noise_std)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "SimScenario":
        raw = json.loads(text)
        return SimScenario(
            adhesion=AdhesionConfig(**raw["adhesion"]) if "adhesion" in raw else DEFAULT_ADHESION,
            rod=RodModel(**raw["rod"]) if "rod" in raw else DEFAULT_ROD,
            climb=ClimbState(**raw["climb"]) if "climb" in raw else DEFAULT_CLIMB,
            excitation_level=raw.get("excitation_level", 0),
            sensor_noise_std=raw.get("sensor_noise_std", 0.02),
            gravity_mag=raw.get("gravity_mag", 9.81),
            duration_s=raw.get("duration_s", 10.0),
            sample_rate_hz=raw.get("sample_rate_hz", 100.0),
            seed=raw.get("seed", 0),
            excitation=ExcitationModel(**raw["excitation"]) if "excitation" in raw else ExcitationModel(),
        )


@dataclass
class SignalFrame:
    """Multi-channel sampled time series with a common sample rate."""

    sample_rate_hz: float
    timestamps: np.ndarray
    channels: dict  # name -> np.ndarray, all of equal length

    def __post_init__(self):
        n = len(self.timestamps)
        for name, values in self.channels.items():
            if len(values) != n:
                raise DomainError(f"channel {name!r} has {len(values)} samples, expected {n}")
        if n >= 2:
            dt = np.diff(self.timestamps)
            if np.any(dt <= 0):
                raise DomainError("timestamps must be strictly increasing")
            if not np.allclose(dt, 1.0 / self.sample_rate_hz, rtol=1e-9, atol=1e-12):
                raise DomainError("timestamp spacing must equal 1/sample_rate_hz")

    def __len__(self):
        return len(self.timestamps)

    def channel(self, name: str) -> np.ndarray:
        if name not in self.channels:
            raise KeyError(f"unknown channel {name!r}; have {sorted(self.channels)}")
        return self.channels[name]


def frame_to_csv(frame: SignalFrame, path) -> None:
    """Write ``t,<channels>`` rows; float repr keeps the round trip lossless."""
    names = list(frame.channels)
    with open(path, "w", newline="") as fh:
        fh.write("t," + ",".join(names) + "\n")
        cols = [frame.timestamps] + [frame.channels[n] for n in names]
        for row in zip(*cols):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def frame_from_csv(path) -> SignalFrame:
    with open(path, newline="") as fh:
        header = fh.readline().strip().split(",")
        if not header or header[0] != "t":
            raise ConfigurationError(f"{path}: first CSV column must be 't'")
        names = header[1:]
        rows = [line.strip().split(",") for line in fh if line.strip()]
    data = np.array([[float(v) for v in row] for row in rows], dtype=float)
    t = data[:, 0]
    rate = 1.0 / (t[1] - t[0]) if len(t) >= 2 else 1.0
    channels = {name: data[:, i + 1] for i, name in enumerate(names)}
    return SignalFrame(sample_rate_hz=rate, timestamps=t, channels=channels)


# ---------------------------------------------------------------------------
# static force model
# ---------------------------------------------------------------------------

def magnetic_force_vector(geom: PlateGeometry) -> np.ndarray:
    """Adhesion force components: magnetic pull plus track restore/tension terms."""
    cos_t = math.cos(geom.bend_angle)
    return np.array([
        geom.magnetic_coefficient / geom.standoff ** 2,
        geom.restore_force * cos_t,
        geom.tension_force * cos_t,
    ])


def gravity_load_force(climb: ClimbState, bend_angle: float) -> float:
    """Detaching load from robot+payload weight at the current track angle."""
    return (climb.robot_weight + climb.load_weight) * math.sin(bend_angle + climb.wall_angle)


def adhesion_holds(adhesion_force: np.ndarray, load_force: float) -> bool:
    """True when the adhesion force magnitude covers the detaching load."""
    if load_force < 0:
        raise DomainError("load_force must be non-negative")
    return float(np.linalg.norm(adhesion_force)) >= abs(load_force)


# ---------------------------------------------------------------------------
# modal parameters of the plate contact
# ---------------------------------------------------------------------------

def contact_stiffness(cfg: AdhesionConfig) -> float:
    """Total contact stiffness: plate count times per-plate stiffness."""
    return cfg.plate_count * cfg.per_plate_stiffness


def natural_frequency(cfg: AdhesionConfig) -> float:
    """Undamped natural frequency (rad/s) of the robot-wall oscillator."""
    if cfg.plate_count == 0:
        raise DetachedError("no plates attached: no oscillatory mode exists")
    return math.sqrt(contact_stiffness(cfg) / cfg.mass)


def damping_ratio(cfg: AdhesionConfig) -> float:
    if cfg.plate_count == 0:
        raise DetachedError("no plates attached: no oscillatory mode exists")
    return cfg.damping / (2.0 * math.sqrt(cfg.mass * contact_stiffness(cfg)))


# ---------------------------------------------------------------------------
# rod frequency response
# ---------------------------------------------------------------------------

def rod_transfer(omega: float, rod: RodModel) -> complex:
    """Tip response per unit base motion at angular frequency ``omega``."""
    k, c, m = rod.stiffness, rod.damping, rod.tip_mass
    den = complex(k - m * omega * omega, omega * c)
    if den == 0:
        raise DomainError("undamped resonance: transfer function has a pole at this frequency")
    return complex(k, omega * c) / den


def rod_gain_phase(omega: float, rod: RodModel) -> tuple:
    """(gain, phase) of the rod transfer, phase on a quadrant-correct branch."""
    k, c, m = rod.stiffness, rod.damping, rod.tip_mass
    wc = omega * c
    re = k - m * omega * omega
    den_mag = math.hypot(re, wc)
    if den_mag == 0:
        raise DomainError("undamped resonance: transfer function has a pole at this frequency")
    gain = math.hypot(k, wc) / den_mag
    phase = math.atan2(wc, k) - math.atan2(wc, re)
    return gain, phase


def rod_amplification_edge(rod: RodModel) -> float:
    """Angular frequency above which the rod attenuates instead of amplifying."""
    return math.sqrt(2.0 * rod.stiffness / rod.tip_mass)


# ---------------------------------------------------------------------------
# fixed-step integration
# ---------------------------------------------------------------------------

def rk4(f, y0, t0: float, h: float, steps: int) -> np.ndarray:
    """Classic explicit 4th-order Runge-Kutta.

    ``f(t, y)`` returns the state derivative as a sequence; the returned array
    has shape (steps+1, len(y0)) including the initial state.
    """
    y = np.asarray(y0, dtype=float)
    out = np.empty((steps + 1, y.size))
    out[0] = y
    t = t0
    for i in range(steps):
        k1 = np.asarray(f(t, y))
        k2 = np.asarray(f(t + 0.5 * h, y + 0.5 * h * k1))
        k3 = np.asarray(f(t + 0.5 * h, y + 0.5 * h * k2))
        k4 = np.asarray(f(t + h, y + h * k3))
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[i + 1] = y
        t += h
    return out


def rod_time_response(rod: RodModel, base_pos: np.ndarray, base_vel: np.ndarray,
                      sample_rate_hz: float):
    """Integrate the rod tip driven by a sampled base motion.

    Base position/velocity are linearly interpolated at RK4 half steps.
    Returns (tip_pos, tip_vel, tip_acc) sampled on the same grid.
    """
    kr, cr, m = rod.stiffness, rod.damping, rod.tip_mass
    n = len(base_pos)
    h = 1.0 / sample_rate_hz
    x2 = 0.0
    v2 = 0.0
    pos = np.empty(n)
    vel = np.empty(n)
    acc = np.empty(n)
    pos[0], vel[0] = x2, v2
    acc[0] = (kr * (base_pos[0] - x2) + cr * (base_vel[0] - v2)) / m

    def accel(x1, v1, x2, v2):
        return (kr * (x1 - x2) + cr * (v1 - v2)) / m

    for i in range(n - 1):
        x1a, v1a = base_pos[i], base_vel[i]
        x1b, v1b = base_pos[i + 1], base_vel[i + 1]
        x1h, v1h = 0.5 * (x1a + x1b), 0.5 * (v1a + v1b)
        k1x = v2
        k1v = accel(x1a, v1a, x2, v2)
        k2x = v2 + 0.5 * h * k1v
        k2v = accel(x1h, v1h, x2 + 0.5 * h * k1x, v2 + 0.5 * h * k1v)
        k3x = v2 + 0.5 * h * k2v
        k3v = accel(x1h, v1h, x2 + 0.5 * h * k2x, v2 + 0.5 * h * k2v)
        k4x = v2 + h * k3v
        k4v = accel(x1b, v1b, x2 + h * k3x, v2 + h * k3v)
        x2 += (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        v2 += (h / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        pos[i + 1], vel[i + 1] = x2, v2
        acc[i + 1] = accel(x1b, v1b, x2, v2)
    return pos, vel, acc


# ---------------------------------------------------------------------------
# full response simulation
# ---------------------------------------------------------------------------

def _derived_rng(seed: int, tag: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([seed & 0xFFFFFFFF, zlib.crc32(tag.encode())])))


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def _band_limited_noise(rng: np.random.Generator, n: int, rate_hz: float,
                        cutoff_hz: float, std: float) -> np.ndarray:
    """Gaussian noise shaped by a 2nd-order low-pass magnitude, unit-free RMS ``std``."""
    if std == 0.0:
        return np.zeros(n)
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, d=1.0 / rate_hz)
    spec *= 1.0 / np.sqrt(1.0 + (freqs / cutoff_hz) ** 4)
    shaped = np.fft.irfft(spec, n=n)
    rms = float(np.sqrt(np.mean(shaped ** 2)))
    if rms > 0:
        shaped *= std / rms
    return shaped


def minimum_sample_rate(scenario: SimScenario) -> float:
    """Lowest usable sensor rate: both resonances must stay below Nyquist."""
    wn = natural_frequency(scenario.adhesion)
    wr = math.sqrt(scenario.rod.stiffness / scenario.rod.tip_mass)
    return max(wn, wr) / math.pi


def simulate_response(scenario: SimScenario) -> SignalFrame:
    """Synthesize a nine-channel sensor recording for one scenario.

    The body oscillator (mass m, damping c, stiffness N*k_i) is driven by the
    excitation model; the rod tip rides on the body motion through the rod's
    own spring-damper dynamics.  Integration is RK4 with internal sub-stepping
    for accuracy; outputs are sampled at ``sample_rate_hz``.  Deterministic for
    a fixed scenario (all randomness flows from ``seed``).
    """
    adh = scenario.adhesion
    if adh.plate_count < 4:
        raise ConfigurationError(
            f"plate_count {adh.plate_count} below the monitored range (minimum 4)")
    k_total = contact_stiffness(adh)
    wn = natural_frequency(adh)
    fs = scenario.sample_rate_hz
    min_rate = minimum_sample_rate(scenario)
    if fs < min_rate:
        raise ConfigurationError(
            f"sample_rate_hz={fs:g} cannot capture the contact/rod resonances; "
            f"minimum usable rate is {min_rate:.2f} Hz")

    n_samples = int(round(scenario.duration_s * fs))
    if n_samples < 2:
        raise ConfigurationError("duration too short for the given sample rate")

    # sub-step so the stiffest mode is well inside the RK4 stability region
    w_max = max(wn, math.sqrt(scenario.rod.stiffness / scenario.rod.tip_mass))
    substeps = max(1, math.ceil(w_max / (0.35 * fs)))
    h = 1.0 / (fs * substeps)
    n_steps = n_samples * substeps

    exc = scenario.excitation
    load = (scenario.climb.robot_weight + scenario.climb.load_weight) \
        * math.sin(scenario.climb.wall_angle)
    scale = load / REFERENCE_WALL_LOAD if load > 0 else 1.0
    tone_amp = exc.tone_amp * scenario.excitation_level * scale

    # forcing on a grid twice the integration rate so RK4 half steps are exact
    fine_rate = 2.0 * fs * substeps
    n_fine = 2 * n_steps + 1
    rng_amb = _derived_rng(scenario.seed, "ambient")
    forcing = _band_limited_noise(rng_amb, n_fine, fine_rate,
                                  exc.ambient_cutoff_hz, exc.ambient_std * scale)
    if tone_amp != 0.0:
        t_fine = np.arange(n_fine) / fine_rate
        forcing = forcing + tone_amp * np.sin(2.0 * math.pi * exc.tone_hz * t_fine)
    if exc.amp_drift_sigma > 0:
        drift = _band_limited_noise(_derived_rng(scenario.seed, "amp-drift"),
                                    n_fine, fine_rate, exc.amp_drift_cutoff_hz, 1.0)
        forcing = forcing * np.exp(exc.amp_drift_sigma * drift)
    u = forcing.tolist()

    m, c = adh.mass, adh.damping
    kr, cr, mr = scenario.rod.stiffness, scenario.rod.damping, scenario.rod.tip_mass
    x1 = v1 = x2 = v2 = 0.0
    body_acc = np.empty(n_samples)
    rod_acc = np.empty(n_samples)
    body_vel = np.empty(n_samples)
    body_acc[0] = (u[0] - c * v1 - k_total * x1) / m
    rod_acc[0] = (kr * (x1 - x2) + cr * (v1 - v2)) / mr
    body_vel[0] = v1

    h2 = 0.5 * h
    h6 = h / 6.0
    idx = 0
    for s in range(1, n_samples):
        for _ in range(substeps):
            u0, uh, u1_ = u[idx], u[idx + 1], u[idx + 2]
            idx += 2
            # k1
            a1 = (u0 - c * v1 - k_total * x1) / m
            b1 = (kr * (x1 - x2) + cr * (v1 - v2)) / mr
            # k2
            x1k = x1 + h2 * v1; v1k = v1 + h2 * a1
            x2k = x2 + h2 * v2; v2k = v2 + h2 * b1
            a2 = (uh - c * v1k - k_total * x1k) / m
            b2 = (kr * (x1k - x2k) + cr * (v1k - v2k)) / mr
            # k3
            x1l = x1 + h2 * v1k; v1l = v1 + h2 * a2
            x2l = x2 + h2 * v2k; v2l = v2 + h2 * b2
            a3 = (uh - c * v1l - k_total * x1l) / m
            b3 = (kr * (x1l - x2l) + cr * (v1l - v2l)) / mr
            # k4
            x1m = x1 + h * v1l; v1m = v1 + h * a3
            x2m = x2 + h * v2l; v2m = v2 + h * b3
            a4 = (u1_ - c * v1m - k_total * x1m) / m
            b4 = (kr * (x1m - x2m) + cr * (v1m - v2m)) / mr

            x1 += h6 * (v1 + 2.0 * v1k + 2.0 * v1l + v1m)
            v1 += h6 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
            x2 += h6 * (v2 + 2.0 * v2k + 2.0 * v2l + v2m)
            v2 += h6 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        body_acc[s] = (u[idx] - c * v1 - k_total * x1) / m
        rod_acc[s] = (kr * (x1 - x2) + cr * (v1 - v2)) / mr
        body_vel[s] = v1

    # geometry: vibration is along the wall normal; gravity makes an angle
    # (pi/2 - wall_angle) with it, so their dot product is sin(wall_angle)
    alpha = scenario.climb.wall_angle
    vib_dir = np.array([0.0, 0.0, 1.0])
    grav_dir = np.array([0.0, math.cos(alpha), math.sin(alpha)])
    rot_body = _random_rotation(_derived_rng(scenario.seed, "mount-body"))
    rot_rod = _random_rotation(_derived_rng(scenario.seed, "mount-rod"))
    gravity = scenario.gravity_mag * grav_dir

    body_vec = rot_body @ (np.outer(vib_dir, body_acc) + gravity[:, None])
    rod_vec = rot_rod @ (np.outer(vib_dir, rod_acc) + gravity[:, None])
    gyro_vec = rot_body @ np.outer(np.array([1.0, 0.0, 0.0]),
                                   GYRO_RATE_PER_VELOCITY * body_vel)

    rng_noise = _derived_rng(scenario.seed, "sensor-noise")
    channels = {}
    for group, names in ((body_vec, BODY_ACC_AXES), (rod_vec, ROD_ACC_AXES),
                         (gyro_vec, GYRO_AXES)):
        for i, name in enumerate(names):
            std = scenario.noise_std_for(name)
            noise = std * rng_noise.standard_normal(n_samples) if std > 0 else 0.0
            channels[name] = group[i] + noise

    timestamps = np.arange(n_samples) / fs
    return SignalFrame(sample_rate_hz=fs, timestamps=timestamps, channels=channels)
