"""Monte-Carlo link-level BER engine and its scenario-config plumbing.

Reproducibility contract
------------------------
Every trial owns a counter-based random stream::

    Generator(Philox(key=[master_seed, 0],
                     counter=[trial_index, snr_index, detector_index, 0]))

``detector_index`` is the detector's position in :data:`DETECTOR_NAMES`
(not in the scenario's detector list) and ``snr_index`` its position in
the ascending SNR grid, so results are bit-identical no matter how trials
are ordered, parallelized, or which detector subset runs. Inside a trial
the stream is consumed in a fixed documented order:

1. user channel matrix, then interferer matrix;
2. (``ls_pilot`` only) pilot symbols, pilot interferer symbols, pilot
   noise; covariance-slot symbols, interferer symbols, noise;
3. data bits (or the coded message), interferer data symbols, data noise.

SNR definition
--------------
``snr_db`` is the expected per-receive-antenna power of the target users
over the noise power: with unit-energy symbols and unit-variance channel
entries the expected signal power per antenna is ``n_users``, so
``sigma_n2 = n_users * 10**(-snr_db / 10)``. Interferers are excluded
from the numerator.

Noiseless runs (``noiseless=true``) transmit with zero noise while the
detectors are fed ``sigma_n2 = NOISELESS_FLOOR`` and a matching covariance
floor so every matrix stays positive definite.

Coded path
----------
One (288, 144) codeword per trial rides a single channel realization
(the resource-block assumption); codeword bits fill users first, then
channel uses, zero-padded up to a whole number of uses. Decoding sees
the first 288 detector LLRs; errors are counted on the 144 message bits.
"""

import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import fec
from .airlink import (
    ChannelConfig,
    build_constellation,
    complex_randn,
    estimate_channel,
    estimate_covariance,
    generate_channel,
)
from .detectors import (
    SrKBestParams,
    build_extended,
    compute_llrs,
    equalizer_llrs,
    kbest_detect,
    ml_bruteforce,
    mmse_irc_weights,
    osic_detect,
    robust_apply,
    robust_plan,
    sr_kbest_detect,
)
from .errors import ConfigParseError, ConfigValidationError
from .numkit import solve_hermitian, sorted_qr

DETECTOR_NAMES = ("mrc", "mmse-irc", "osic", "kbest", "sr-kbest", "robust-sr-kbest", "ml")

NOISELESS_FLOOR = 1e-12

ML_CANDIDATE_GUARD = 10**6

CSV_HEADER = "detector,snr_db,trials,bits,bit_errors,ber,coded,ce_mode,seed"

_LDPC_CODE_SEED = 0


@dataclass(frozen=True)
class ScenarioConfig:
    """Fully-validated simulation scenario; the desk-scale defaults run in
    seconds and keep brute-force ML feasible."""

    n_rx: int = 16
    n_users: int = 4
    n_interferers: int = 0
    constellation: str = "qam16"
    snr_grid_db: tuple = tuple(float(s) for s in range(0, 21, 2))
    trials_per_point: int = 10
    symbols_per_trial: int = 50
    master_seed: int = 1
    ce_mode: str = "ideal"
    pilot_count: int = 8
    covariance_samples: int = 168
    detectors: tuple = ("mrc", "mmse-irc", "osic", "kbest", "sr-kbest", "robust-sr-kbest")
    coded: bool = False
    noiseless: bool = False
    rx_correlation: float = 0.0
    interferer_power_ratio: float = 1.0
    sr_params: SrKBestParams = field(default_factory=SrKBestParams.default_16_4)
    kbest_k: int = 16
    kbest_expand: int = 16
    # decoder-input clip; list detectors produce hypothesis-clamped LLRs whose
    # +/-30 extremes are over-confident for min-sum, so the coded path caps
    # every detector's LLR stream at this magnitude
    llr_clip: float = 8.0

    def validate(self) -> None:
        if self.n_users < 1 or self.n_rx < self.n_users:
            raise ConfigValidationError("n_users", "need n_rx >= n_users >= 1")
        if self.n_interferers < 0:
            raise ConfigValidationError("n_interferers", "must be >= 0")
        if self.constellation not in ("qpsk", "qam16"):
            raise ConfigValidationError("constellation", f"unknown kind {self.constellation!r}")
        if len(self.snr_grid_db) == 0:
            raise ConfigValidationError("snr_db", "SNR grid must be non-empty")
        if self.trials_per_point < 1:
            raise ConfigValidationError("trials_per_point", "must be >= 1")
        if self.symbols_per_trial < 1:
            raise ConfigValidationError("symbols_per_trial", "must be >= 1")
        if self.ce_mode not in ("ideal", "ls_pilot"):
            raise ConfigValidationError("ce_mode", f"unknown mode {self.ce_mode!r}")
        if self.pilot_count < 1:
            raise ConfigValidationError("pilot_count", "must be >= 1")
        if self.covariance_samples < 1:
            raise ConfigValidationError("covariance_samples", "must be >= 1")
        if not self.detectors:
            raise ConfigValidationError("detectors", "detector list must be non-empty")
        for name in self.detectors:
            if name not in DETECTOR_NAMES:
                raise ConfigValidationError(
                    "detectors", f"unknown detector {name!r}; choose from {DETECTOR_NAMES}"
                )
        if not 0.0 <= self.rx_correlation < 1.0:
            raise ConfigValidationError("rx_correlation", "must be in [0, 1)")
        if self.interferer_power_ratio <= 0.0:
            raise ConfigValidationError("interferer_power_ratio", "must be > 0")
        if self.kbest_k < 1:
            raise ConfigValidationError("kbest.k", "must be >= 1")
        cons_size = 4 if self.constellation == "qpsk" else 16
        if not 1 <= self.kbest_expand <= cons_size:
            raise ConfigValidationError("kbest.expand", "must be in [1, constellation size]")
        if self.llr_clip <= 0:
            raise ConfigValidationError("llr_clip", "must be > 0")
        if "ml" in self.detectors and cons_size**self.n_users > ML_CANDIDATE_GUARD:
            raise ConfigValidationError(
                "detectors", "ml is infeasible at this scale; drop it or shrink n_users"
            )


@dataclass(frozen=True)
class BerRecord:
    """Aggregated error counts of one (detector, SNR) cell."""

    detector: str
    snr_db: float
    trials: int
    bits: int
    bit_errors: int
    ber: float
    coded: bool
    ce_mode: str
    seed: int


# ---------------------------------------------------------------------------
# configuration parsing

_LIST_KEYS = {"sr.p", "sr.v", "sr.q"}

_KNOWN_KEYS = {
    "n_rx", "n_users", "n_interferers", "constellation", "snr_db",
    "trials_per_point", "symbols_per_trial", "master_seed", "ce_mode",
    "pilot_count", "covariance_samples", "detectors", "coded", "noiseless",
    "rx_correlation", "interferer_power_ratio",
    "sr.k", "sr.s", "sr.p", "sr.v", "sr.q", "sr.expand",
    "kbest.k", "kbest.expand", "llr_clip",
}


def parse_snr_spec(spec: str) -> tuple:
    """Parse ``lo:hi:step`` (inclusive of ``hi`` within half a step) or a
    comma list into an ascending, de-duplicated SNR grid."""
    spec = spec.strip()
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise ValueError("SNR range must be lo:hi:step")
        lo, hi, step = (float(p) for p in parts)
        if step <= 0 or hi < lo:
            raise ValueError("need step > 0 and hi >= lo")
        count = int(math.floor((hi - lo) / step + 0.5)) + 1
        values = [lo + i * step for i in range(count)]
    else:
        values = [float(p) for p in spec.split(",") if p.strip()]
        if not values:
            raise ValueError("empty SNR list")
    return tuple(sorted(set(values)))


def _parse_bool(value: str) -> bool:
    lowered = value.lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def parse_config(text: str) -> ScenarioConfig:
    """Parse ``key=value`` lines (``#`` comments) into a validated config.

    Omitted keys take the documented desk-scale defaults; an empty file is
    a valid scenario.
    """
    raw: dict[str, tuple[str, int]] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigParseError(line_no, f"expected key=value, got {stripped!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if not key or not value:
            raise ConfigParseError(line_no, "empty key or value")
        if key not in _KNOWN_KEYS:
            raise ConfigValidationError(key, "unknown configuration key")
        raw[key] = (value, line_no)

    def take(key, convert, default):
        if key not in raw:
            return default
        value, line_no = raw[key]
        try:
            return convert(value)
        except ValueError as exc:
            raise ConfigParseError(line_no, f"{key}: {exc}") from exc

    int_list = lambda v: tuple(int(p) for p in v.split(","))
    str_list = lambda v: tuple(p.strip() for p in v.split(",") if p.strip())

    defaults = ScenarioConfig()
    sr_default = SrKBestParams.default_16_4()
    sr_fields = {
        "k": take("sr.k", int, sr_default.k),
        "s": take("sr.s", int, sr_default.s),
        "p": take("sr.p", int_list, tuple(sr_default.p)),
        "v": take("sr.v", int_list, tuple(sr_default.v)),
        "q": take("sr.q", int_list, tuple(sr_default.q)),
        "expand": take("sr.expand", int, sr_default.expand),
    }
    try:
        sr_params = SrKBestParams(**sr_fields)
    except ValueError as exc:
        raise ConfigValidationError("sr", str(exc)) from exc

    cfg = ScenarioConfig(
        n_rx=take("n_rx", int, defaults.n_rx),
        n_users=take("n_users", int, defaults.n_users),
        n_interferers=take("n_interferers", int, defaults.n_interferers),
        constellation=take("constellation", lambda v: v.lower(), defaults.constellation),
        snr_grid_db=take("snr_db", parse_snr_spec, defaults.snr_grid_db),
        trials_per_point=take("trials_per_point", int, defaults.trials_per_point),
        symbols_per_trial=take("symbols_per_trial", int, defaults.symbols_per_trial),
        master_seed=take("master_seed", int, defaults.master_seed),
        ce_mode=take("ce_mode", lambda v: v.lower(), defaults.ce_mode),
        pilot_count=take("pilot_count", int, defaults.pilot_count),
        covariance_samples=take("covariance_samples", int, defaults.covariance_samples),
        detectors=take("detectors", str_list, defaults.detectors),
        coded=take("coded", _parse_bool, defaults.coded),
        noiseless=take("noiseless", _parse_bool, defaults.noiseless),
        rx_correlation=take("rx_correlation", float, defaults.rx_correlation),
        interferer_power_ratio=take(
            "interferer_power_ratio", float, defaults.interferer_power_ratio
        ),
        sr_params=sr_params,
        kbest_k=take("kbest.k", int, defaults.kbest_k),
        kbest_expand=take("kbest.expand", int, defaults.kbest_expand),
        llr_clip=take("llr_clip", float, defaults.llr_clip),
    )
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# random streams


def trial_stream(
    master_seed: int, detector_index: int, snr_index: int, trial_index: int
) -> np.random.Generator:
    """Counter-based per-trial stream; see the module docstring."""
    bits = np.random.Philox(
        key=np.array([master_seed, 0], dtype=np.uint64),
        counter=np.array([trial_index, snr_index, detector_index, 0], dtype=np.uint64),
    )
    return np.random.Generator(bits)


def snr_to_noise_power(snr_db: float, n_users: int) -> float:
    return n_users * 10.0 ** (-snr_db / 10.0)


# ---------------------------------------------------------------------------
# per-trial engine


@dataclass(frozen=True)
class _TrialKnowledge:
    """Receiver-side knowledge shared by every detector in a trial."""

    h_hat: np.ndarray
    r_uu: np.ndarray
    sigma_det: float
    sigma_i2: float


def _acquire_knowledge(cfg, cons_pilot, cons_interf, channel, rng) -> _TrialKnowledge:
    sigma_det = max(channel.sigma_n2, NOISELESS_FLOOR)
    n_rx = cfg.n_rx
    if cfg.ce_mode == "ideal":
        h_hat = channel.h
        r_uu = channel.g @ channel.g.conj().T + sigma_det * np.eye(n_rx)
    else:
        h_hat = _ls_pilot_estimate(cfg, cons_pilot, cons_interf, channel, rng)
        r_uu = _pilot_covariance(cfg, cons_pilot, cons_interf, channel, h_hat, rng)
    sigma_i2 = max(float(np.real(np.trace(r_uu))) / n_rx - sigma_det, 0.0)
    return _TrialKnowledge(h_hat=h_hat, r_uu=r_uu, sigma_det=sigma_det, sigma_i2=sigma_i2)


def _reference_slots(cfg, cons_pilot, cons_interf, channel, rng, n_slots):
    """Round-robin known-symbol slots: one user transmits per slot."""
    users = np.arange(n_slots) % cfg.n_users
    symbols = cons_pilot.points[rng.integers(0, cons_pilot.size, n_slots)]
    y = channel.h[:, users] * symbols
    if cfg.n_interferers:
        s_i = cons_interf.points[rng.integers(0, cons_interf.size, (n_slots, cfg.n_interferers))]
        y = y + channel.g @ s_i.T
    y = y + np.sqrt(channel.sigma_n2) * complex_randn(rng, cfg.n_rx, n_slots)
    return users, symbols, y


def _ls_pilot_estimate(cfg, cons_pilot, cons_interf, channel, rng):
    users, symbols, y = _reference_slots(
        cfg, cons_pilot, cons_interf, channel, rng, cfg.pilot_count * cfg.n_users
    )
    return estimate_channel(channel, users, symbols, y, mode="ls_pilot").h_hat


def _pilot_covariance(cfg, cons_pilot, cons_interf, channel, h_hat, rng):
    users, symbols, y = _reference_slots(
        cfg, cons_pilot, cons_interf, channel, rng, cfg.covariance_samples
    )
    residuals = (y - h_hat[:, users] * symbols).T
    return estimate_covariance(residuals).r_uu


def _detect_uses(cfg, name: str, cons, know: _TrialKnowledge, y_block, need_llr: bool):
    """Run one detector over every use of a trial.

    Returns hard decisions ``(n_uses, n_users)`` and, when requested,
    LLRs ``(n_uses, n_users * bits_per_symbol)``.
    """
    n_uses = y_block.shape[0]
    n_users = cfg.n_users
    h_hat, r_uu, sigma_det = know.h_hat, know.r_uu, know.sigma_det

    if name in ("mrc", "mmse-irc"):
        if name == "mrc":
            gram = sigma_det * np.eye(n_users) + h_hat.conj().T @ h_hat
            gram = 0.5 * (gram + gram.conj().T)
            w = solve_hermitian(gram, h_hat.conj().T)
            r_model = sigma_det * np.eye(cfg.n_rx)
        else:
            w = mmse_irc_weights(h_hat, r_uu, sigma_det)
            r_model = r_uu
        x_eq = y_block @ w.T
        hard = cons.nearest(x_eq)
        if not need_llr:
            return hard, None
        gain = w @ h_hat
        bias = np.diag(gain)
        inter = np.sum(np.abs(gain) ** 2, axis=1) - np.abs(bias) ** 2
        noise = np.real(np.diag(w @ r_model @ w.conj().T))
        nu = inter + noise
        llr = np.stack([equalizer_llrs(row, bias, nu, cons) for row in x_eq])
        return hard, llr

    if name in ("osic", "kbest", "sr-kbest"):
        ext = build_extended(h_hat, np.zeros(cfg.n_rx), sigma_det, know.sigma_i2)
        sq = sorted_qr(ext.h_ext)
        zeros_tail = np.zeros(n_users, dtype=complex)
        hard = np.empty((n_uses, n_users), dtype=np.int64)
        llr = np.empty((n_uses, n_users * cons.bits_per_symbol)) if need_llr else None
        for t in range(n_uses):
            y_ext = np.concatenate([y_block[t], zeros_tail])
            if name == "osic":
                out = osic_detect(sq, y_ext, cons)
                hard[t] = out.hard
                if need_llr:
                    llr[t] = out.llr
                continue
            y_tilde = sq.q.conj().T @ y_ext
            if name == "kbest":
                cands = kbest_detect(sq.r, y_tilde, cfg.kbest_k, cons, cfg.kbest_expand)
            else:
                cands = sr_kbest_detect(sq.r, y_tilde, cfg.sr_params, cons)
            cands = cands.permuted(sq.perm)
            hard[t] = cands.symbols[0]
            if need_llr:
                llr[t] = compute_llrs(cands, cons, n_users)
        return hard, llr

    if name == "robust-sr-kbest":
        plan = robust_plan(h_hat, r_uu)
        hard = np.empty((n_uses, n_users), dtype=np.int64)
        llr = np.empty((n_uses, n_users * cons.bits_per_symbol)) if need_llr else None
        for t in range(n_uses):
            state = robust_apply(plan, y_block[t])
            cands = sr_kbest_detect(state.r2, state.y3, cfg.sr_params, cons)
            cands = cands.permuted(state.perm)
            hard[t] = cands.symbols[0]
            if need_llr:
                llr[t] = compute_llrs(cands, cons, n_users)
        return hard, llr

    if name == "ml":
        hard = np.empty((n_uses, n_users), dtype=np.int64)
        llr = np.empty((n_uses, n_users * cons.bits_per_symbol)) if need_llr else None
        for t in range(n_uses):
            out = ml_bruteforce(h_hat, y_block[t], cons)
            hard[t] = out.hard
            if need_llr:
                llr[t] = out.llr
        return hard, llr

    raise ValueError(f"unknown detector {name!r}")


def _run_trial(
    cfg, det_name: str, cons, cons_interf, cons_pilot, code, snr_db: float, rng
) -> tuple[int, int]:
    """One independent trial; returns (bits counted, bit errors)."""
    sigma_n2 = 0.0 if cfg.noiseless else snr_to_noise_power(snr_db, cfg.n_users)
    chan_cfg = ChannelConfig(
        n_rx=cfg.n_rx,
        n_users=cfg.n_users,
        n_interferers=cfg.n_interferers,
        rx_correlation=cfg.rx_correlation,
        interferer_power_ratio=cfg.interferer_power_ratio,
    )
    channel = generate_channel(chan_cfg, rng, sigma_n2)
    know = _acquire_knowledge(cfg, cons_pilot, cons_interf, channel, rng)

    bits_per_use = cfg.n_users * cons.bits_per_symbol
    if cfg.coded:
        n_uses = math.ceil(code.n / bits_per_use)
        message = rng.integers(0, 2, code.k, dtype=np.uint8)
        codeword = fec.encode(code, message)
        tx_bits = np.zeros(n_uses * bits_per_use, dtype=np.uint8)
        tx_bits[: code.n] = codeword
        tx_bits = tx_bits.reshape(n_uses, bits_per_use)
    else:
        n_uses = cfg.symbols_per_trial
        tx_bits = rng.integers(0, 2, (n_uses, bits_per_use), dtype=np.uint8)

    tx_idx = cons.bits_to_indices(tx_bits.reshape(n_uses, cfg.n_users, cons.bits_per_symbol))
    y_block = cons.points[tx_idx] @ channel.h.T
    if cfg.n_interferers:
        s_i = cons_interf.points[
            rng.integers(0, cons_interf.size, (n_uses, cfg.n_interferers))
        ]
        y_block = y_block + s_i @ channel.g.T
    y_block = y_block + np.sqrt(sigma_n2) * complex_randn(rng, n_uses, cfg.n_rx)

    hard, llr = _detect_uses(cfg, det_name, cons, know, y_block, need_llr=cfg.coded)

    if not cfg.coded:
        rx_bits = cons.indices_to_bits(hard).reshape(n_uses, bits_per_use)
        return tx_bits.size, int(np.sum(rx_bits != tx_bits))
    llr_stream = np.clip(llr.reshape(-1)[: code.n], -cfg.llr_clip, cfg.llr_clip)
    decoded, _, _ = fec.decode_min_sum(code, llr_stream)
    return code.k, int(np.sum(decoded != message))


def run_scenario(cfg: ScenarioConfig) -> list[BerRecord]:
    """Run every (detector, SNR) cell of a scenario.

    Trials are independent and aggregated by commutative integer sums, so
    any execution order produces identical records.
    """
    cfg.validate()
    cons = build_constellation(cfg.constellation)
    cons_interf = build_constellation("qam16")
    cons_pilot = build_constellation("qpsk")
    code = fec.build_code(seed=_LDPC_CODE_SEED) if cfg.coded else None
    snr_grid = tuple(sorted(cfg.snr_grid_db))
    records = []
    for det_name in cfg.detectors:
        det_index = DETECTOR_NAMES.index(det_name)
        for snr_index, snr_db in enumerate(snr_grid):
            bits = errors = 0
            for trial in range(cfg.trials_per_point):
                rng = trial_stream(cfg.master_seed, det_index, snr_index, trial)
                try:
                    b, e = _run_trial(
                        cfg, det_name, cons, cons_interf, cons_pilot, code, snr_db, rng
                    )
                except Exception as exc:
                    raise RuntimeError(
                        f"trial aborted (detector={det_name}, snr_db={snr_db:g}, "
                        f"trial={trial}): {exc}"
                    ) from exc
                bits += b
                errors += e
            records.append(
                BerRecord(
                    detector=det_name,
                    snr_db=snr_db,
                    trials=cfg.trials_per_point,
                    bits=bits,
                    bit_errors=errors,
                    ber=errors / bits,
                    coded=cfg.coded,
                    ce_mode=cfg.ce_mode,
                    seed=cfg.master_seed,
                )
            )
    return records


# ---------------------------------------------------------------------------
# output sinks


def _ordered(records):
    first_seen: dict[str, int] = {}
    for rec in records:
        first_seen.setdefault(rec.detector, len(first_seen))
    return sorted(records, key=lambda r: (first_seen[r.detector], r.snr_db))


def _open_sink(sink):
    if hasattr(sink, "write"):
        return sink, False
    return open(sink, "w", encoding="utf-8", newline=""), True


def format_record(rec: BerRecord) -> str:
    return (
        f"{rec.detector},{rec.snr_db:g},{rec.trials},{rec.bits},{rec.bit_errors},"
        f"{rec.ber:.6g},{'true' if rec.coded else 'false'},{rec.ce_mode},{rec.seed}"
    )


def write_csv(records, sink) -> None:
    """Write records as CSV: fixed header, detector order then ascending SNR."""
    fh, close = _open_sink(sink)
    try:
        fh.write(CSV_HEADER + "\n")
        for rec in _ordered(records):
            fh.write(format_record(rec) + "\n")
    finally:
        if close:
            fh.close()


def emit_plot_data(records, sink) -> None:
    """Write whitespace-separated (snr_db, ber) blocks, one per detector,
    separated by blank lines; digestible by gnuplot and friends."""
    fh, close = _open_sink(sink)
    try:
        ordered = _ordered(records)
        current = None
        for rec in ordered:
            if rec.detector != current:
                if current is not None:
                    fh.write("\n")
                fh.write(f"# {rec.detector}\n")
                current = rec.detector
            fh.write(f"{rec.snr_db:g} {rec.ber:.6g}\n")
    finally:
        if close:
            fh.close()


def csv_bytes(records) -> bytes:
    """The exact bytes :func:`write_csv` would produce (for tests)."""
    buf = io.StringIO()
    write_csv(records, buf)
    return buf.getvalue().encode("utf-8")
