"""Learning the observer maps T and T*.

Two trainers: a supervised one regressing on backward-forward pairs over a
whole omega_c grid, and an autoencoder trained on x samples only with the
PDE residual dT/dx f - D T - F h as a loss term, optionally optimizing D.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Protocol, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from .dynamics import SystemModel
from .errors import ConfigError, InputError, TrainingError
from .linfilter import FilterDesign, build_design, design_from_poles
from .neural import (
    Adam,
    MlpParams,
    Normalizer,
    backward,
    forward,
    forward_with_tape,
    grad_params,
    input_jacobian,
    jvp,
    jvp_backward,
)
from .sampling import Dataset

logger = logging.getLogger(__name__)

MIN_POLE_DECAY = 1e-4
EIGENVALUE_DRIFT_WARNING = 0.25

# (model, x_batch) -> (loss, {"encoder": [...], "decoder": [...], "poles": [...]})
PenaltyHook = Callable[["AutoencoderModel", np.ndarray], Tuple[float, Dict[str, List[np.ndarray]]]]


@dataclass
class TrainingSettings:
    """Architecture and optimizer settings shared by both trainers."""

    hidden_sizes: Tuple[int, ...] = (50, 50, 50, 50, 50)
    activation: str = "silu"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 1024
    epochs: int = 100
    validation_split: float = 0.1
    patience: int = 10
    omega_transform: str = "log10"
    show_progress: bool = True

    def digest(self) -> str:
        payload = asdict(self)
        payload.pop("show_progress")
        payload["hidden_sizes"] = list(self.hidden_sizes)
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()

    def optimizer(self, state: Optional[Dict[str, Any]] = None) -> Adam:
        """Fresh Adam, or one continuing the moments and step count of ``state``.

        Learning rate and betas always come from the settings.
        """
        optimizer = Adam(lr=self.learning_rate, beta1=self.beta1, beta2=self.beta2, eps=self.eps)
        if not state:
            return optimizer
        restored = Adam.from_dict(state)
        return replace(optimizer, t=restored.t, m=restored.m, v=restored.v)


class StateObserver(Protocol):
    """What tuning and evaluation need from a trained observer."""

    d_x: int
    d_y: int

    def encode(self, x: np.ndarray, omega_c: float) -> np.ndarray: ...

    def decode(self, z: np.ndarray, omega_c: float) -> np.ndarray: ...

    def decoder_jacobian(self, z: np.ndarray, omega_c: float) -> np.ndarray: ...

    def design(self, omega_c: float) -> FilterDesign: ...


def omega_feature(omega_c: Union[float, np.ndarray], transform: str) -> np.ndarray:
    omega_c = np.asarray(omega_c, dtype=float)
    if transform == "log10":
        return np.log10(omega_c)
    if transform == "raw":
        return omega_c
    raise InputError(f"unknown omega transform '{transform}'")


@dataclass
class LearnedObserver:
    """T_theta(x, omega_c) and T*_eta(z, omega_c) with their normalizers."""

    t_params: MlpParams
    tstar_params: MlpParams
    x_normalizer: Normalizer
    z_normalizer: Normalizer
    omega_normalizer: Normalizer
    d_x: int
    d_y: int
    omega_transform: str = "log10"
    training_meta: Dict[str, Any] = field(default_factory=dict)
    # Adam state per network ("T", "Tstar"), restored on resume
    optimizer_state: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.t_params.layer_sizes[0] != self.d_x + 1 or self.t_params.n_outputs != self.d_z:
            raise InputError(f"T network shape {self.t_params.layer_sizes} does not fit d_x={self.d_x}, d_z={self.d_z}")
        if self.tstar_params.layer_sizes[0] != self.d_z + 1 or self.tstar_params.n_outputs != self.d_x:
            raise InputError(f"T* network shape {self.tstar_params.layer_sizes} does not fit d_z={self.d_z}, d_x={self.d_x}")

    @property
    def d_z(self) -> int:
        return self.d_y * (self.d_x + 1)

    def _with_omega(self, normalized: np.ndarray, omega_c: float) -> np.ndarray:
        w = self.omega_normalizer.transform(omega_feature(omega_c, self.omega_transform))
        return np.concatenate([normalized, np.broadcast_to(w, (len(normalized), 1))], axis=1)

    def encoder_inputs(self, x: np.ndarray, omega_c: float) -> np.ndarray:
        return self._with_omega(self.x_normalizer.transform(np.atleast_2d(x)), omega_c)

    def decoder_inputs(self, z: np.ndarray, omega_c: float) -> np.ndarray:
        return self._with_omega(self.z_normalizer.transform(np.atleast_2d(z)), omega_c)

    def encode(self, x: np.ndarray, omega_c: float) -> np.ndarray:
        z = self.z_normalizer.inverse_transform(forward(self.t_params, self.encoder_inputs(x, omega_c)))
        return z[0] if np.ndim(x) == 1 else z

    def decode(self, z: np.ndarray, omega_c: float) -> np.ndarray:
        x = self.x_normalizer.inverse_transform(forward(self.tstar_params, self.decoder_inputs(z, omega_c)))
        return x[0] if np.ndim(z) == 1 else x

    def decoder_jacobian(self, z: np.ndarray, omega_c: float) -> np.ndarray:
        """dT*/dz in raw coordinates, (batch, d_x, d_z)."""
        J = input_jacobian(self.tstar_params, self.decoder_inputs(z, omega_c))[:, :, : self.d_z]
        J = self.x_normalizer.scale[None, :, None] * J / self.z_normalizer.scale[None, None, :]
        return J[0] if np.ndim(z) == 1 else J

    def encoder_jacobian(self, x: np.ndarray, omega_c: float) -> np.ndarray:
        """dT/dx in raw coordinates, (batch, d_z, d_x)."""
        J = input_jacobian(self.t_params, self.encoder_inputs(x, omega_c))[:, :, : self.d_x]
        J = self.z_normalizer.scale[None, :, None] * J / self.x_normalizer.scale[None, None, :]
        return J[0] if np.ndim(x) == 1 else J

    def design(self, omega_c: float) -> FilterDesign:
        return build_design(omega_c, self.d_x, self.d_y)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": "supervised",
            "d_x": self.d_x,
            "d_y": self.d_y,
            "omega_transform": self.omega_transform,
            "t_params": self.t_params.to_dict(),
            "tstar_params": self.tstar_params.to_dict(),
            "x_normalizer": self.x_normalizer.to_dict(),
            "z_normalizer": self.z_normalizer.to_dict(),
            "omega_normalizer": self.omega_normalizer.to_dict(),
            "training_meta": self.training_meta,
            "optimizer_state": self.optimizer_state,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LearnedObserver":
        return cls(
            t_params=MlpParams.from_dict(data["t_params"]),
            tstar_params=MlpParams.from_dict(data["tstar_params"]),
            x_normalizer=Normalizer.from_dict(data["x_normalizer"]),
            z_normalizer=Normalizer.from_dict(data["z_normalizer"]),
            omega_normalizer=Normalizer.from_dict(data["omega_normalizer"]),
            d_x=int(data["d_x"]),
            d_y=int(data["d_y"]),
            omega_transform=data.get("omega_transform", "log10"),
            training_meta=data.get("training_meta", {}),
            optimizer_state=data.get("optimizer_state", {}),
        )


@dataclass
class PoleParameters:
    """Unconstrained coordinates of a Hurwitz pole set.

    Real poles are -(exp(rho) + MIN_POLE_DECAY); pairs are the same real part
    with imaginary parts +/- mu. D keeps a fixed layout: real 1x1 blocks first,
    then one [[a, mu], [-mu, a]] block per pair.
    """

    rho_real: np.ndarray
    rho_pair: np.ndarray
    mu_pair: np.ndarray

    @classmethod
    def from_poles(cls, poles: np.ndarray) -> "PoleParameters":
        poles = np.asarray(poles, dtype=complex)
        real = np.array([p.real for p in poles if p.imag == 0])
        pairs = np.array([p for p in poles if p.imag > 0])
        if np.any(-real <= MIN_POLE_DECAY) or np.any(-pairs.real <= MIN_POLE_DECAY):
            raise InputError(f"initial poles must have real part below -{MIN_POLE_DECAY:g}")
        return cls(
            rho_real=np.log(-real - MIN_POLE_DECAY),
            rho_pair=np.log(-pairs.real - MIN_POLE_DECAY) if len(pairs) else np.zeros(0),
            mu_pair=pairs.imag.astype(float) if len(pairs) else np.zeros(0),
        )

    @property
    def dimension(self) -> int:
        return len(self.rho_real) + 2 * len(self.rho_pair)

    def parameters(self) -> List[np.ndarray]:
        return [self.rho_real, self.rho_pair, self.mu_pair]

    def poles(self) -> np.ndarray:
        real = -(np.exp(self.rho_real) + MIN_POLE_DECAY)
        pair_re = -(np.exp(self.rho_pair) + MIN_POLE_DECAY)
        out = [complex(r, 0.0) for r in real]
        for a, mu in zip(pair_re, self.mu_pair):
            out.extend([complex(a, mu), complex(a, -mu)])
        return np.array(out, dtype=complex)

    def matrix(self) -> np.ndarray:
        n_real = len(self.rho_real)
        D = np.zeros((self.dimension, self.dimension))
        D[np.arange(n_real), np.arange(n_real)] = -(np.exp(self.rho_real) + MIN_POLE_DECAY)
        for j, (rho, mu) in enumerate(zip(self.rho_pair, self.mu_pair)):
            o = n_real + 2 * j
            a = -(np.exp(rho) + MIN_POLE_DECAY)
            D[o : o + 2, o : o + 2] = [[a, mu], [-mu, a]]
        return D

    def gradient(self, grad_D: np.ndarray) -> List[np.ndarray]:
        """Chain a gradient with respect to D onto (rho_real, rho_pair, mu_pair)."""
        n_real = len(self.rho_real)
        g_real = np.diag(grad_D)[:n_real] * -np.exp(self.rho_real)
        g_rho = np.zeros_like(self.rho_pair)
        g_mu = np.zeros_like(self.mu_pair)
        for j, rho in enumerate(self.rho_pair):
            o = n_real + 2 * j
            g_rho[j] = (grad_D[o, o] + grad_D[o + 1, o + 1]) * -np.exp(rho)
            g_mu[j] = grad_D[o, o + 1] - grad_D[o + 1, o]
        return [g_real, g_rho, g_mu]

    def to_dict(self) -> Dict[str, Any]:
        return {k: v.tolist() for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PoleParameters":
        return cls(**{k: np.asarray(v, dtype=float) for k, v in data.items()})


@dataclass
class AutoencoderModel:
    """Encoder x -> z, decoder z -> x and the filter matrix D they conjugate to."""

    encoder: MlpParams
    decoder: MlpParams
    D: np.ndarray
    F: np.ndarray
    lambda_weight: float
    pole_params: PoleParameters
    x_normalizer: Normalizer
    d_x: int
    d_y: int
    omega_c: float
    optimize_D: bool = False
    training_meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.lambda_weight <= 0:
            raise InputError(f"lambda_weight must be positive, got {self.lambda_weight}")

    @property
    def d_z(self) -> int:
        return self.D.shape[0]

    def encode(self, x: np.ndarray, omega_c: Optional[float] = None) -> np.ndarray:
        z = forward(self.encoder, self.x_normalizer.transform(np.atleast_2d(x)))
        return z[0] if np.ndim(x) == 1 else z

    def decode(self, z: np.ndarray, omega_c: Optional[float] = None) -> np.ndarray:
        x = self.x_normalizer.inverse_transform(forward(self.decoder, np.atleast_2d(z)))
        return x[0] if np.ndim(z) == 1 else x

    def decoder_jacobian(self, z: np.ndarray, omega_c: Optional[float] = None) -> np.ndarray:
        J = self.x_normalizer.scale[None, :, None] * input_jacobian(self.decoder, np.atleast_2d(z))
        return J[0] if np.ndim(z) == 1 else J

    def design(self, omega_c: Optional[float] = None) -> FilterDesign:
        """The current D in the model's own block layout.

        The poles go through the same validation as a Bessel design, so a
        learned pole set that lost controllability raises DesignError.
        """
        checked = design_from_poles(self.pole_params.poles(), self.omega_c, d_y=self.d_y)
        # the encoder is tied to this layout, not to the canonical pole order
        return replace(checked, D=self.D.copy(), F=self.F.copy())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": "autoencoder",
            "d_x": self.d_x,
            "d_y": self.d_y,
            "omega_c": self.omega_c,
            "lambda_weight": self.lambda_weight,
            "optimize_D": self.optimize_D,
            "encoder": self.encoder.to_dict(),
            "decoder": self.decoder.to_dict(),
            "D": self.D.tolist(),
            "F": self.F.tolist(),
            "pole_params": self.pole_params.to_dict(),
            "x_normalizer": self.x_normalizer.to_dict(),
            "training_meta": self.training_meta,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AutoencoderModel":
        return cls(
            encoder=MlpParams.from_dict(data["encoder"]),
            decoder=MlpParams.from_dict(data["decoder"]),
            D=np.asarray(data["D"], dtype=float),
            F=np.asarray(data["F"], dtype=float),
            lambda_weight=float(data["lambda_weight"]),
            pole_params=PoleParameters.from_dict(data["pole_params"]),
            x_normalizer=Normalizer.from_dict(data["x_normalizer"]),
            d_x=int(data["d_x"]),
            d_y=int(data["d_y"]),
            omega_c=float(data["omega_c"]),
            optimize_D=bool(data["optimize_D"]),
            training_meta=data.get("training_meta", {}),
        )


Model = Union[LearnedObserver, AutoencoderModel]


def save_model(model: Model, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model.to_dict()))
    logger.info(f"Saved {model.to_dict()['kind']} checkpoint to {path}")


def load_model(path: Union[str, Path]) -> Model:
    data = json.loads(Path(path).read_text())
    kind = data.get("kind")
    if kind == "supervised":
        return LearnedObserver.from_dict(data)
    if kind == "autoencoder":
        return AutoencoderModel.from_dict(data)
    raise InputError(f"{path}: unknown checkpoint kind {kind!r}")


def fit_normalizers(
    x: np.ndarray, z: np.ndarray, omegas: np.ndarray, omega_transform: str = "log10"
) -> Dict[str, Normalizer]:
    """Standardization statistics of the training split."""
    if len(x) == 0:
        raise InputError("cannot fit normalizers on an empty dataset")
    return {
        "x": Normalizer.fit(x, "x"),
        "z": Normalizer.fit(z, "z"),
        "omega": Normalizer.fit(omega_feature(omegas, omega_transform), "omega_c"),
    }


def _split(n: int, fraction: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    order = rng.permutation(n)
    n_val = int(round(fraction * n)) if n >= 10 else 0
    if n_val >= n:
        raise ConfigError(
            "validation_split", f"{fraction:g} of {n} samples leaves no training samples"
        )
    return order[n_val:], order[:n_val]


LossFn = Callable[[np.ndarray], Tuple[Dict[str, float], List[np.ndarray]]]


def _optimize(
    label: str,
    parameters: List[np.ndarray],
    loss_and_grads: LossFn,
    train_idx: np.ndarray,
    val_idx: np.ndarray,
    settings: TrainingSettings,
    rng: np.random.Generator,
    after_step: Optional[Callable[[], None]] = None,
    optimizer: Optional[Adam] = None,
) -> pd.DataFrame:
    """Mini-batch Adam with early stopping on the validation split.

    Returns one row per epoch (epoch 0 is the initial loss) with the mean
    training loss components and the validation total. A given ``optimizer``
    is stepped in place, so the caller can store its state afterwards.
    """
    if optimizer is None:
        optimizer = settings.optimizer()

    def evaluate(idx: np.ndarray) -> Dict[str, float]:
        sums: Dict[str, float] = {}
        for start in range(0, len(idx), settings.batch_size):
            chunk = idx[start : start + settings.batch_size]
            losses, _ = loss_and_grads(chunk)
            for key, value in losses.items():
                sums[key] = sums.get(key, 0.0) + value * len(chunk)
        return {key: value / len(idx) for key, value in sums.items()}

    rows = [{"epoch": 0, **evaluate(train_idx)}]
    if len(val_idx):
        rows[0]["val_total"] = evaluate(val_idx)["total"]
    best = rows[0].get("val_total", rows[0]["total"])
    best_state = [p.copy() for p in parameters]
    stale = 0

    epochs = tqdm(range(1, settings.epochs + 1), desc=f"Training {label}", disable=not settings.show_progress)
    for epoch in epochs:
        order = rng.permutation(train_idx)
        sums: Dict[str, float] = {}
        for batch_no, start in enumerate(range(0, len(order), settings.batch_size)):
            batch = order[start : start + settings.batch_size]
            losses, grads = loss_and_grads(batch)
            if not np.isfinite(losses["total"]):
                raise TrainingError(label, epoch, batch_no, losses["total"])
            optimizer.step(parameters, grads)
            if after_step is not None:
                after_step()
            for key, value in losses.items():
                sums[key] = sums.get(key, 0.0) + value * len(batch)
        row: Dict[str, float] = {"epoch": epoch, **{k: v / len(order) for k, v in sums.items()}}

        monitored = row["total"]
        if len(val_idx):
            row["val_total"] = monitored = evaluate(val_idx)["total"]
        rows.append(row)
        logger.debug(f"{label} epoch {epoch}: loss {row['total']:.4e}")

        if monitored < best:
            best, stale = monitored, 0
            best_state = [p.copy() for p in parameters]
        else:
            stale += 1
            if stale >= settings.patience:
                logger.info(f"{label}: early stop at epoch {epoch} (best {best:.4e})")
                break

    for p, saved in zip(parameters, best_state):
        p[...] = saved
    if after_step is not None:
        after_step()
    return pd.DataFrame(rows)


def _regression_loss(params: MlpParams, inputs: np.ndarray, targets: np.ndarray) -> LossFn:
    def loss_and_grads(idx: np.ndarray) -> Tuple[Dict[str, float], List[np.ndarray]]:
        loss, grads = grad_params(params, inputs[idx], targets[idx])
        return {"total": loss}, grads

    return loss_and_grads


def train_supervised(
    dataset: Dataset,
    settings: TrainingSettings,
    seed: int,
    init: Optional[LearnedObserver] = None,
    meta: Optional[Dict[str, Any]] = None,
    resume_optimizer: bool = True,
) -> Tuple[LearnedObserver, pd.DataFrame]:
    """Fit T_theta(x, omega_c) -> z and T*_eta(z, omega_c) -> x on the dataset.

    With ``init`` the networks and normalizers of an existing observer are
    the starting point (resume and fine-tuning). Its Adam moments and step
    counts carry over unless ``resume_optimizer`` is False.
    """
    if len(dataset) == 0:
        raise InputError("empty dataset")
    x, z, w = dataset.arrays()
    d_x, d_z = x.shape[1], z.shape[1]
    if d_z % (d_x + 1):
        raise InputError(f"filter dimension {d_z} is not a multiple of d_x + 1 = {d_x + 1}")
    d_y = d_z // (d_x + 1)

    seeds = np.random.SeedSequence(seed).generate_state(4)
    rng = np.random.default_rng(seeds[0])
    train_idx, val_idx = _split(len(x), settings.validation_split, rng)

    if init is not None:
        norms = {"x": init.x_normalizer, "z": init.z_normalizer, "omega": init.omega_normalizer}
        t_params, tstar_params = init.t_params.copy(), init.tstar_params.copy()
    else:
        norms = fit_normalizers(x[train_idx], z[train_idx], w[train_idx], settings.omega_transform)
        hidden = list(settings.hidden_sizes)
        t_params = MlpParams.init([d_x + 1, *hidden, d_z], int(seeds[1]), settings.activation)
        tstar_params = MlpParams.init([d_z + 1, *hidden, d_x], int(seeds[2]), settings.activation)

    wn = norms["omega"].transform(omega_feature(w, settings.omega_transform)[:, None])
    xn, zn = norms["x"].transform(x), norms["z"].transform(z)

    saved = init.optimizer_state if init is not None and resume_optimizer else {}
    optimizers = {key: settings.optimizer(saved.get(key)) for key in ("T", "Tstar")}
    if saved:
        logger.info(f"Resuming Adam at step {optimizers['T'].t} (T) and {optimizers['Tstar'].t} (T*)")

    history_T = _optimize(
        "T", t_params.parameters(),
        _regression_loss(t_params, np.hstack([xn, wn]), zn),
        train_idx, val_idx, settings, rng, optimizer=optimizers["T"],
    )
    history_Tstar = _optimize(
        "T*", tstar_params.parameters(),
        _regression_loss(tstar_params, np.hstack([zn, wn]), xn),
        train_idx, val_idx, settings, rng, optimizer=optimizers["Tstar"],
    )

    observer = LearnedObserver(
        t_params=t_params,
        tstar_params=tstar_params,
        x_normalizer=norms["x"],
        z_normalizer=norms["z"],
        omega_normalizer=norms["omega"],
        d_x=d_x,
        d_y=d_y,
        omega_transform=settings.omega_transform,
        training_meta={
            "seed": int(seed),
            "settings_digest": settings.digest(),
            "settings": {**asdict(settings), "hidden_sizes": list(settings.hidden_sizes)},
            "omegas": [float(v) for v in dataset.omegas],
            **(meta or {}),
        },
        optimizer_state={key: optimizer.to_dict() for key, optimizer in optimizers.items()},
    )
    history = pd.merge(
        history_T.rename(columns={"total": "loss_T", "val_total": "val_loss_T"}),
        history_Tstar.rename(columns={"total": "loss_Tstar", "val_total": "val_loss_Tstar"}),
        on="epoch",
        how="outer",
    )
    columns = ["epoch", "loss_T", "loss_Tstar"] + [c for c in history.columns if c.startswith("val_")]
    logger.info(
        f"Supervised training done: loss_T {history_T['total'].iloc[-1]:.4e}, "
        f"loss_Tstar {history_Tstar['total'].iloc[-1]:.4e}"
    )
    return observer, history[columns]


def fine_tune(
    observer: LearnedObserver,
    dataset: Dataset,
    omega_c: float,
    settings: TrainingSettings,
    seed: int,
) -> Tuple[LearnedObserver, pd.DataFrame]:
    """Retrain both networks on the pairs generated at one omega_c."""
    tuned, history = train_supervised(
        dataset.at_omega(omega_c), settings, seed, init=observer,
        meta={"fine_tuned_omega_c": float(omega_c)}, resume_optimizer=False,
    )
    tuned.training_meta["omegas"] = observer.training_meta.get("omegas", tuned.training_meta["omegas"])
    return tuned, history


def _pde_terms(
    params: MlpParams,
    x: np.ndarray,
    system: SystemModel,
    D: np.ndarray,
    F: np.ndarray,
    x_normalizer: Normalizer,
    z_normalizer: Normalizer,
    extra_inputs: Optional[np.ndarray] = None,
):
    """Residual dT/dx(x) f(x) - D T(x) - F h(x) in raw coordinates.

    The network sees normalized x (plus optional extra columns held fixed),
    so the raw tangent f(x) is divided by the x scale on the way in and the
    output tangent multiplied by the z scale on the way out.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    inputs = x_normalizer.transform(x)
    tangents = system.f(x) / x_normalizer.scale
    if extra_inputs is not None:
        inputs = np.hstack([inputs, extra_inputs])
        tangents = np.hstack([tangents, np.zeros_like(extra_inputs)])
    out, out_dot, tape = jvp(params, inputs, tangents)
    z = z_normalizer.inverse_transform(out)
    z_dot = out_dot * z_normalizer.scale
    residual = z_dot - z @ D.T - system.h(x) @ F.T
    return residual, z, tape


def pde_residual(
    model: Model, system: SystemModel, x: np.ndarray, omega_c: Optional[float] = None
) -> np.ndarray:
    """Defect of the conjugacy PDE at x (one row per point)."""
    if isinstance(model, LearnedObserver):
        if omega_c is None:
            raise InputError("omega_c is required for an omega-conditioned observer")
        design = model.design(omega_c)
        n = len(np.atleast_2d(x))
        w = model.omega_normalizer.transform(omega_feature(omega_c, model.omega_transform))
        residual, _, _ = _pde_terms(
            model.t_params, x, system, design.D, design.F,
            model.x_normalizer, model.z_normalizer, np.full((n, 1), float(w[0])),
        )
    else:
        residual, _, _ = _pde_terms(
            model.encoder, x, system, model.D, model.F,
            model.x_normalizer, Normalizer.identity(model.d_z),
        )
    return residual[0] if np.ndim(x) == 1 else residual


def autoencoder_loss(
    model: AutoencoderModel, system: SystemModel, x: np.ndarray
) -> Tuple[Dict[str, float], Dict[str, Any]]:
    """Weighted reconstruction error plus PDE residual, with gradients.

    loss = 0.5 * mean(lambda ||x_n - T*(T(x))_n||^2 + ||residual||^2), the
    reconstruction measured in normalized x coordinates.
    """
    residual, z, enc_tape = _pde_terms(
        model.encoder, x, system, model.D, model.F, model.x_normalizer, Normalizer.identity(model.d_z)
    )
    n = len(residual)
    x_n = model.x_normalizer.transform(x)
    x_hat, dec_tape = forward_with_tape(model.decoder, z)
    recon = x_hat - x_n

    loss_recon = 0.5 * model.lambda_weight * float(np.mean(np.sum(recon**2, axis=1)))
    loss_pde = 0.5 * float(np.mean(np.sum(residual**2, axis=1)))

    dec_grads, g_z = backward(model.decoder, dec_tape, model.lambda_weight * recon / n)
    g_residual = residual / n
    g_z = g_z - g_residual @ model.D
    enc_grads = jvp_backward(model.encoder, enc_tape, g_z, g_residual)
    grad_D = -g_residual.T @ z
    losses = {"total": loss_recon + loss_pde, "recon": loss_recon, "pde": loss_pde}
    return losses, {"encoder": enc_grads, "decoder": dec_grads, "D": grad_D}


def _eigenvalue_drift(initial: np.ndarray, final: np.ndarray) -> float:
    key = lambda p: (round(abs(p.imag), 9), p.real, p.imag)  # noqa: E731
    a = np.array(sorted(initial, key=key))
    b = np.array(sorted(final, key=key))
    return float(np.max(np.abs(b - a) / np.abs(a)))


def train_autoencoder(
    x_samples: np.ndarray,
    system: SystemModel,
    lambda_weight: float,
    D_init: FilterDesign,
    optimize_D: bool,
    settings: TrainingSettings,
    seed: int,
    penalty: Optional[PenaltyHook] = None,
    meta: Optional[Dict[str, Any]] = None,
) -> Tuple[AutoencoderModel, pd.DataFrame]:
    """Learn T and T* from x samples alone, optionally adapting D.

    ``penalty`` is an extra loss term evaluated on each batch; it returns its
    value and gradients keyed like the model parts ("encoder", "decoder",
    "poles"). None is shipped by default.
    """
    x_samples = np.atleast_2d(np.asarray(x_samples, dtype=float))
    if x_samples.shape[1] != system.d_x:
        raise InputError(f"x samples have width {x_samples.shape[1]}, system has d_x={system.d_x}")
    seeds = np.random.SeedSequence(seed).generate_state(4)
    rng = np.random.default_rng(seeds[0])
    train_idx, val_idx = _split(len(x_samples), settings.validation_split, rng)

    hidden = list(settings.hidden_sizes)
    d_z = D_init.d_z
    pole_params = PoleParameters.from_poles(D_init.poles)
    model = AutoencoderModel(
        encoder=MlpParams.init([system.d_x, *hidden, d_z], int(seeds[1]), settings.activation),
        decoder=MlpParams.init([d_z, *hidden, system.d_x], int(seeds[2]), settings.activation),
        D=D_init.D.copy(),
        F=D_init.F.copy(),
        lambda_weight=lambda_weight,
        pole_params=pole_params,
        x_normalizer=Normalizer.fit(x_samples[train_idx], "x"),
        d_x=system.d_x,
        d_y=system.d_y,
        omega_c=D_init.omega_c,
        optimize_D=optimize_D,
    )

    parameters = model.encoder.parameters() + model.decoder.parameters()
    if optimize_D:
        parameters += pole_params.parameters()

    def loss_and_grads(idx: np.ndarray) -> Tuple[Dict[str, float], List[np.ndarray]]:
        batch = x_samples[idx]
        losses, grads = autoencoder_loss(model, system, batch)
        pole_grads = pole_params.gradient(grads["D"]) if optimize_D else []
        enc_grads, dec_grads = grads["encoder"], grads["decoder"]
        if penalty is not None:
            value, extra = penalty(model, batch)
            losses["total"] += value
            enc_grads = [g + e for g, e in zip(enc_grads, extra.get("encoder", [0] * len(enc_grads)))]
            dec_grads = [g + e for g, e in zip(dec_grads, extra.get("decoder", [0] * len(dec_grads)))]
            if optimize_D:
                pole_grads = [g + e for g, e in zip(pole_grads, extra.get("poles", [0] * 3))]
        return losses, enc_grads + dec_grads + pole_grads

    def refresh_D() -> None:
        if optimize_D:
            model.D = pole_params.matrix()

    history = _optimize(
        "autoencoder", parameters, loss_and_grads, train_idx, val_idx, settings, rng,
        after_step=refresh_D,
    )

    drift = _eigenvalue_drift(D_init.poles, model.design().poles)
    if drift > EIGENVALUE_DRIFT_WARNING:
        logger.warning(f"D eigenvalues drifted by {drift:.1%} from their initialization")
    else:
        logger.info(f"D eigenvalue drift after training: {drift:.1%}")
    model.training_meta = {
        "seed": int(seed),
        "settings_digest": settings.digest(),
        "settings": {**asdict(settings), "hidden_sizes": hidden},
        "initial_poles": [[float(p.real), float(p.imag)] for p in D_init.poles],
        "eigenvalue_drift": drift,
        **(meta or {}),
    }
    history = history.rename(
        columns={"total": "loss_total", "recon": "loss_recon", "pde": "loss_pde"}
    )
    return model, history
