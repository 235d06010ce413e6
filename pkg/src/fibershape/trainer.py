"""End-to-end autoencoder training of constellation geometry.

Encoder MLP maps the M one-hot classes to 2N real coordinates, power
normalization constrains the mean symbol power to 1, the differentiable
channel adds reparameterized Gaussian noise whose variance depends on the
launch power and (for the NLIN model) on the batch moments mu4/mu6, and a
decoder MLP classifies back to M logits under softmax cross-entropy.

Batches are stratified: every class appears exactly batch_multiple times.
The encoder therefore only ever evaluates M distinct rows, which are tiled
to the batch inside the graph (gradients sum over the copies), and the
batch moments equal the exact constellation moments with zero sampling
variance.

Training the launch power keeps the scalar in dBm and converts to mW
in-graph (P = exp(P_dbm * ln10/10)), so the same Adam update rule applies;
it gets its own learning rate because a dB-scale scalar at the
constellation's 1e-3 rate would take ~10^4 iterations per dB.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import constellation as cst
from .autodiff import Adam, NonFiniteError, Tape
from .channel import ChannelModel
from .errors import ConfigError, TrainingDiverged

LN10 = np.log(10.0)

#: training aborts when a trainable launch power leaves this range (dBm)
POWER_DIVERGENCE_LIMIT_DBM = 20.0


@dataclass(frozen=True)
class TrainConfig:
    """Network sizes, schedule and channel for one training run.

    batch_schedule is a list of (iteration_threshold, batch_multiple); the
    active multiple is the entry with the largest threshold <= iteration.
    The default schedule is coarse-to-fine: small batches explore, the late
    large batches polish.
    """

    channel: ChannelModel
    m: int = 64
    n_complex_dims: int = 1
    hidden_layers: int = 1
    hidden_units: int = 32
    learning_rate: float = 0.001
    batch_schedule: tuple = ((0, 8), (100, 2048))
    max_iterations: int = 10000
    seed: int = 0
    train_launch_power: bool = False
    initial_launch_power_dbm: float = None
    power_learning_rate: float = 0.02
    sever_moment_gradient: bool = False
    early_stop_window: int = 1000
    early_stop_rel_change: float = 1e-3

    def __post_init__(self):
        if self.m < 2:
            raise ConfigError(f"m must be >= 2, got {self.m}")
        if self.n_complex_dims != 1:
            raise ConfigError("only n_complex_dims=1 is supported")
        if self.hidden_layers < 1 or self.hidden_units < 1:
            raise ConfigError("need at least one hidden layer and one unit")
        sched = tuple((int(t), int(mult)) for t, mult in self.batch_schedule)
        object.__setattr__(self, "batch_schedule", sched)
        if sched[0][0] != 0:
            raise ConfigError("batch_schedule must start at iteration 0")
        thresholds = [t for t, _ in sched]
        if thresholds != sorted(set(thresholds)):
            raise ConfigError("batch_schedule thresholds must be strictly increasing")
        if any(mult < 1 for _, mult in sched):
            raise ConfigError("batch multiples must be positive")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")

    def batch_multiple_at(self, iteration: int) -> int:
        mult = self.batch_schedule[0][1]
        for threshold, m in self.batch_schedule:
            if iteration >= threshold:
                mult = m
        return mult

    @property
    def last_switch_iteration(self) -> int:
        return self.batch_schedule[-1][0]


@dataclass
class TrainResult:
    constellation: "cst.Constellation"
    trace: np.ndarray  # columns: iteration, loss, mu4, mu6, power_dbm
    final_launch_power_dbm: float
    iterations_run: int
    stopped_early: bool

    @property
    def loss_trace(self) -> np.ndarray:
        return self.trace[:, 1]

    @property
    def final_loss(self) -> float:
        return float(self.trace[-1, 1])


def _glorot(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Autoencoder:
    """Parameter container plus the per-batch graph builder."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        m, h, d = cfg.m, cfg.hidden_units, 2 * cfg.n_complex_dims
        params = {}
        widths_enc = [m] + [h] * cfg.hidden_layers + [d]
        widths_dec = [d] + [h] * cfg.hidden_layers + [m]
        for prefix, widths in (("enc", widths_enc), ("dec", widths_dec)):
            for i in range(len(widths) - 1):
                params[f"{prefix}_w{i}"] = _glorot(rng, widths[i], widths[i + 1])
                params[f"{prefix}_b{i}"] = np.zeros(widths[i + 1])
        if cfg.train_launch_power:
            p0 = cfg.initial_launch_power_dbm
            if p0 is None:
                p0 = cfg.channel.launch_power_dbm
            params["p_dbm"] = np.asarray(float(p0))
        self.params = params
        self._n_layers = cfg.hidden_layers

    def parameter_count(self) -> int:
        return sum(int(np.asarray(v).size) for v in self.params.values())

    # -- graph pieces --------------------------------------------------------

    def _encode(self, tape, nodes):
        """Encoder on the M distinct one-hot rows (one-hot @ W0 is just W0)."""
        h = tape.relu(tape.add(nodes["enc_w0"], nodes["enc_b0"]))
        for i in range(1, self._n_layers):
            h = tape.relu(tape.add(tape.matmul(h, nodes[f"enc_w{i}"]), nodes[f"enc_b{i}"]))
        out = self._n_layers
        raw = tape.add(tape.matmul(h, nodes[f"enc_w{out}"]), nodes[f"enc_b{out}"])
        return tape.power_normalize(raw)

    def _decode(self, tape, nodes, y):
        h = tape.relu(tape.add(tape.matmul(y, nodes["dec_w0"]), nodes["dec_b0"]))
        for i in range(1, self._n_layers):
            h = tape.relu(tape.add(tape.matmul(h, nodes[f"dec_w{i}"]), nodes[f"dec_b{i}"]))
        out = self._n_layers
        return tape.add(tape.matmul(h, nodes[f"dec_w{out}"]), nodes[f"dec_b{out}"])

    def build_loss(self, tape: Tape, eps: np.ndarray, batch_multiple: int):
        """Full encoder-channel-decoder cross-entropy for one batch.

        eps is the pre-drawn noise, shape (batch_multiple*M, 2N) with
        per-component std 1/sqrt(2) (unit total complex variance), kept
        outside the graph so the variance gradient flows through its scale.
        Returns (loss_node, diagnostics dict with mu4/mu6/power_dbm floats).
        """
        cfg = self.cfg
        ch_model = cfg.channel
        nodes = {name: tape.param(arr, name) for name, arr in self.params.items()}
        xnorm = self._encode(tape, nodes)

        # batch moments == constellation moments (stratified batch)
        psym = tape.sum_axis(tape.mul(xnorm, xnorm), 1)
        mp = tape.mean(psym)
        mu4 = tape.mul(tape.mean(tape.mul(psym, psym)), tape.powf(mp, -2.0))
        mu6 = tape.mul(tape.mean(tape.mul(tape.mul(psym, psym), psym)), tape.powf(mp, -3.0))
        if cfg.sever_moment_gradient:
            mu4 = tape.stop_gradient(mu4)
            mu6 = tape.stop_gradient(mu6)

        if cfg.train_launch_power:
            p_dbm_node = nodes["p_dbm"]
            p_mw = tape.exp(tape.mul(p_dbm_node, LN10 / 10.0))
            p_dbm_value = float(self.params["p_dbm"])
        else:
            p_mw = tape.const(ch_model.launch_power_mw)
            p_dbm_value = ch_model.launch_power_dbm

        coeffs = ch_model.coeffs
        if ch_model.kind == "gn":
            bracket = tape.const(coeffs.kappa0)
        else:
            bracket = tape.add(
                tape.add(
                    coeffs.kappa0,
                    tape.mul(tape.sub(mu4, 2.0), coeffs.kappa1),
                ),
                tape.mul(tape.sub(mu6, 6.0), coeffs.kappa2),
            )
        s2_nlin = tape.clamp_min(
            tape.mul(tape.powf(p_mw, 3.0), bracket), ch_model.variance_floor_mw
        )
        s2 = tape.add(s2_nlin, ch_model.sigma2_ase_mw)
        if ch_model.tx_awgn_snr_db is not None:
            s2 = tape.add(s2, tape.mul(p_mw, 10.0 ** (-ch_model.tx_awgn_snr_db / 10.0)))

        x_tiled = tape.tile_rows(xnorm, batch_multiple)
        x_scaled = tape.mul(x_tiled, tape.powf(p_mw, 0.5))
        y = tape.add(x_scaled, tape.mul(tape.powf(s2, 0.5), tape.const(eps)))
        # rescale to O(1) before decoding; differentiable in P on purpose
        y_in = tape.mul(y, tape.powf(p_mw, -0.5))

        logits = self._decode(tape, nodes, y_in)
        labels = np.tile(np.arange(cfg.m), batch_multiple)
        loss = tape.softmax_cross_entropy(logits, labels)
        diag = {
            "mu4": float(mu4.value),
            "mu6": float(mu6.value),
            "power_dbm": p_dbm_value,
        }
        return loss, diag

    def loss_value(self, params, eps, batch_multiple) -> float:
        """Pure re-evaluation of the loss for finite-difference checks."""
        saved = self.params
        self.params = params
        try:
            loss, _ = self.build_loss(Tape(), eps, batch_multiple)
        finally:
            self.params = saved
        return float(loss.value)

    def constellation(self) -> "cst.Constellation":
        """Run the encoder on the M classes and export the point set."""
        p = self.params
        h = np.maximum(p["enc_w0"] + p["enc_b0"], 0.0)
        for i in range(1, self._n_layers):
            h = np.maximum(h @ p[f"enc_w{i}"] + p[f"enc_b{i}"], 0.0)
        out = self._n_layers
        raw = h @ p[f"enc_w{out}"] + p[f"enc_b{out}"]
        points = raw[:, 0] + 1j * raw[:, 1]
        c = cst.Constellation(
            points,
            metadata={
                "family": "learned",
                "channel": self.cfg.channel.kind,
                "m": self.cfg.m,
                "seed": self.cfg.seed,
            },
        )
        return cst.normalize_unit_power(c)


def draw_noise(rng, batch_size, n_coords=2) -> np.ndarray:
    """Reparameterization noise: per-component std 1/sqrt(2)."""
    return rng.standard_normal((batch_size, n_coords)) / np.sqrt(2.0)


def train(cfg: TrainConfig) -> TrainResult:
    """Run Adam over the autoencoder until budget or loss plateau.

    Noise is redrawn every iteration.  A non-finite loss or gradient stops
    the run with TrainingDiverged carrying the iteration and the last
    finite loss; so does a trainable launch power beyond +-20 dBm.
    """
    ae = Autoencoder(cfg)
    # noise stream separate from the init stream but fixed by the same seed
    rng = np.random.default_rng((cfg.seed, 1))
    opt = Adam(
        lr=cfg.learning_rate,
        lr_overrides={"p_dbm": cfg.power_learning_rate} if cfg.train_launch_power else None,
    )
    trace = np.zeros((cfg.max_iterations, 5))
    last_loss = None
    stopped_early = False
    n_done = 0
    for j in range(cfg.max_iterations):
        mult = cfg.batch_multiple_at(j)
        eps = draw_noise(rng, mult * cfg.m, 2 * cfg.n_complex_dims)
        try:
            # divergence is detected and raised; the numpy warnings on the
            # way down (overflow in matmul etc.) are just noise
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                tape = Tape()
                loss, diag = ae.build_loss(tape, eps, mult)
                tape.backward(loss)
                grads = tape.param_grads()
        except NonFiniteError as e:
            raise TrainingDiverged(
                f"non-finite value at iteration {j}: {e}",
                iteration=j,
                last_finite_loss=last_loss,
            ) from e
        opt.step(ae.params, grads)
        last_loss = float(loss.value)
        trace[j] = (j, last_loss, diag["mu4"], diag["mu6"], diag["power_dbm"])
        n_done = j + 1
        if cfg.train_launch_power and abs(float(ae.params["p_dbm"])) > POWER_DIVERGENCE_LIMIT_DBM:
            raise TrainingDiverged(
                f"launch power ran away to {float(ae.params['p_dbm']):.1f} dBm "
                f"at iteration {j}",
                iteration=j,
                last_finite_loss=last_loss,
            )
        if _plateaued(cfg, trace, j):
            stopped_early = True
            break
    return TrainResult(
        constellation=ae.constellation(),
        trace=trace[:n_done].copy(),
        final_launch_power_dbm=float(trace[n_done - 1, 4]),
        iterations_run=n_done,
        stopped_early=stopped_early,
    )


def _plateaued(cfg: TrainConfig, trace, j) -> bool:
    w = cfg.early_stop_window
    if j + 1 < cfg.last_switch_iteration + w or j + 1 < w:
        return False
    losses = trace[j + 1 - w : j + 1, 1]
    half = w // 2
    prev = losses[:half].mean()
    recent = losses[half:].mean()
    return abs(prev - recent) < cfg.early_stop_rel_change * abs(prev)


def train_joint_power(cfg: TrainConfig) -> TrainResult:
    """train() with the launch power registered as a trainable scalar."""
    return train(replace(cfg, train_launch_power=True))
