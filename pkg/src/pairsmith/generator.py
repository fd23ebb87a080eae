"""Frozen, analytic, differentiable image generator.

Renders anisotropic Gaussian blobs on an S x S grayscale canvas from an
attribute code y (what annotators are asked about) and a nuisance code z
(everything else).  Four designed properties carry the rest of the system:

1. No trainable parameters: the controller can never cheat by bending the
   generator itself.
2. C1 smooth in (y, z) everywhere, so ranker gradients reach the codes.
3. Pixels confined to [0, 1] by a smooth logistic clamp (gradients stay
   alive near saturation, unlike a hard clip).
4. Each attribute moves exactly one measurable image statistic monotonically:
   y[0] blob area, y[1] mean intensity, y[2] axis ratio, y[3] tilt angle.

The same traced code path produces both gradient-carrying renders (for the
adversarial controller) and plain renders (for pools, PNG export, replay),
so stored codes reproduce pixels bit for bit.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from . import autograd as ag
from .autograd import Tensor

__all__ = ["BlobGenerator", "DistilledDecoder", "blob_area", "mean_intensity",
           "axis_ratio", "principal_angle"]


def _pixel_centers(s: int) -> np.ndarray:
    # cell midpoints of an s-cell partition of [-1, 1]; no sample sits on the rim
    return (2.0 * np.arange(s) + 1.0) / s - 1.0


class BlobGenerator:
    """G(y, z) -> image, with reverse-mode gradients through the whole map.

    Attribute transfers (logistic sigma keeps every factor bounded):
        radius        r = 0.10 + 0.25 * sigma(y[0])
        amplitude     A = 0.20 + 0.80 * sigma(y[1])
        eccentricity  e = 0.90 * sigma(y[2]),  axes r(1+e) / r(1-e)
        tilt          theta = pi * sigma(y[3]) - pi/2
    Nuisance transfers:
        center        (cx, cy) = 0.4 * tanh(z[0]), 0.4 * tanh(z[1])
        background    b = 0.1 * sigma(z[2])
        z[3]          slack, no visual effect
    Final pixel = sigma(4 * (raw - 0.5)) with raw = b + A * blob.
    """

    # largest angle gap whose apparent tilt order still matches the code
    # order, with a small safety margin below pi/2
    TILT_CONSISTENT = 1.3

    def __init__(self, image_side: int = 32, num_attributes: int = 4, latent_dim: int = 4):
        if image_side < 1 or num_attributes < 4 or latent_dim < 3:
            raise ValueError(
                f"need image_side >= 1, >= 4 attributes and >= 3 latents, "
                f"got S={image_side}, N={num_attributes}, M={latent_dim}"
            )
        self.image_side = int(image_side)
        self.num_attributes = int(num_attributes)
        self.latent_dim = int(latent_dim)
        u = _pixel_centers(self.image_side)
        uu, vv = np.meshgrid(u, u)  # row index = v, column index = u
        self._grid_u = Tensor(uu.reshape(1, -1))
        self._grid_v = Tensor(vv.reshape(1, -1))

    # -- transfer functions on plain arrays, for oracle labels and tests ----

    def transfers(self, y) -> dict:
        """Blob shape factors induced by an attribute code (no gradients)."""
        y = np.asarray(y, dtype=np.float64)
        r = 0.10 + 0.25 * expit(y[0])
        e = 0.9 * expit(y[2])
        return {
            "radius": r,
            "amplitude": 0.2 + 0.8 * expit(y[1]),
            "eccentricity": e,
            "sigma_major": r * (1.0 + e),
            "sigma_minor": r * (1.0 - e),
            "tilt": np.pi * expit(y[3]) - np.pi / 2.0,
        }

    def true_attribute_strength(self, y) -> np.ndarray:
        """Ground-truth strength of each attribute: the code itself."""
        return np.asarray(y, dtype=np.float64).copy()

    def attribute_legibility(self, Y_a: Tensor, Y_b: Tensor, attribute: int) -> Tensor:
        """How visibly a candidate pair differs along one attribute, on tape.

        Code gaps are a poor visibility proxy: the transfers saturate, so a
        large |dy| can render as no pixel change at all.  Size, brightness and
        elongation therefore measure the gap between their transfer sigmoids.
        Orientation needs two corrections.  It is circular: an ellipse tilted
        +89 deg renders the same as -89 deg, and past a quarter turn the
        apparent order of a pair flips outright, so credit rises with the
        angle gap only up to just short of pi/2 and then drops steeply
        (slope -7) instead of wrapping.  And it is only readable on an
        elongated blob, so the whole term is weighted by the smaller of the
        two eccentricities.
        """
        if not 0 <= attribute < self.num_attributes:
            raise ValueError(f"attribute index {attribute} out of range")
        if attribute < 3:
            gap = (ag.sigmoid(ag.take_column(Y_a, attribute))
                   - ag.sigmoid(ag.take_column(Y_b, attribute)))
            return ag.absolute(gap)
        th_gap = ag.absolute(ag.scale(ag.sigmoid(ag.take_column(Y_a, 3))
                                      - ag.sigmoid(ag.take_column(Y_b, 3)), np.pi))
        tent = th_gap - ag.scale(ag.relu(th_gap + (-self.TILT_CONSISTENT)), 8.0)
        e_a = ag.scale(ag.sigmoid(ag.take_column(Y_a, 2)), 0.9)
        e_b = ag.scale(ag.sigmoid(ag.take_column(Y_b, 2)), 0.9)
        e_min = e_a - ag.relu(e_a - e_b)
        return ag.mul(tent, e_min)

    # -- rendering -----------------------------------------------------------

    def render_batch(self, Y: Tensor, Z: Tensor) -> Tensor:
        """Render B images at once; returns a (B, S*S) tensor on the tape.

        Y is (B, N) and Z is (B, M).  Per-sample factors are (B, 1) columns
        broadcast against the (1, S*S) coordinate grids, so a whole batch is
        a fixed ~70-node tape regardless of B.
        """
        if Y.data.ndim != 2 or Y.shape[1] != self.num_attributes:
            raise ag.ShapeError(f"Y must be (B, {self.num_attributes}), got {Y.shape}")
        if Z.data.ndim != 2 or Z.shape[1] != self.latent_dim:
            raise ag.ShapeError(f"Z must be (B, {self.latent_dim}), got {Z.shape}")
        if Y.shape[0] != Z.shape[0]:
            raise ag.ShapeError(f"batch sizes differ: {Y.shape[0]} vs {Z.shape[0]}")
        if not (np.all(np.isfinite(Y.data)) and np.all(np.isfinite(Z.data))):
            raise ag.DomainError("render requires finite attribute and latent codes")

        r = ag.scale(ag.sigmoid(ag.take_column(Y, 0)), 0.25) + 0.10
        amp = ag.scale(ag.sigmoid(ag.take_column(Y, 1)), 0.8) + 0.2
        ecc = ag.scale(ag.sigmoid(ag.take_column(Y, 2)), 0.9)
        theta = ag.scale(ag.sigmoid(ag.take_column(Y, 3)), np.pi) + (-np.pi / 2.0)

        cx = ag.scale(ag.tanh(ag.take_column(Z, 0)), 0.4)
        cy = ag.scale(ag.tanh(ag.take_column(Z, 1)), 0.4)
        bg = ag.scale(ag.sigmoid(ag.take_column(Z, 2)), 0.1)

        sig_maj = r + ag.mul(r, ecc)
        sig_min = r - ag.mul(r, ecc)
        # reciprocal via exp(-log x); both axes are bounded away from zero
        inv_maj = ag.exp(ag.neg(ag.log(sig_maj)))
        inv_min = ag.exp(ag.neg(ag.log(sig_min)))

        du = self._grid_u - cx
        dv = self._grid_v - cy
        ct = ag.cos(theta)
        st = ag.sin(theta)
        major = ag.mul(du, ct) + ag.mul(dv, st)
        minor = ag.mul(dv, ct) - ag.mul(du, st)
        qa = ag.mul(major, inv_maj)
        qb = ag.mul(minor, inv_min)
        blob = ag.exp(ag.scale(ag.mul(qa, qa) + ag.mul(qb, qb), -0.5))

        raw = bg + ag.mul(amp, blob)
        return ag.sigmoid(ag.scale(raw + (-0.5), 4.0))

    def render(self, y, z) -> np.ndarray:
        """Single image as a plain (S, S) float64 array in [0, 1]."""
        Y = Tensor(np.asarray(y, dtype=np.float64).reshape(1, -1))
        Z = Tensor(np.asarray(z, dtype=np.float64).reshape(1, -1))
        out = self.render_batch(Y, Z)
        return out.data.reshape(self.image_side, self.image_side)


# ---------------------------------------------------------------------------
# image statistics used by monotone-perception checks and diagnostics


def blob_area(img: np.ndarray) -> float:
    """Smooth count of pixels above half intensity, as a fraction of the canvas."""
    return float(np.mean(expit(12.0 * (img - 0.5))))


def mean_intensity(img: np.ndarray) -> float:
    return float(np.mean(img))


def _central_moments(img: np.ndarray):
    s = img.shape[0]
    u = _pixel_centers(s)
    uu, vv = np.meshgrid(u, u)
    w = img - img.min()
    total = w.sum()
    if total <= 0.0:
        raise ValueError("flat image has no principal axes")
    mu = (w * uu).sum() / total
    mv = (w * vv).sum() / total
    cuu = (w * (uu - mu) ** 2).sum() / total
    cvv = (w * (vv - mv) ** 2).sum() / total
    cuv = (w * (uu - mu) * (vv - mv)).sum() / total
    return cuu, cvv, cuv


def axis_ratio(img: np.ndarray) -> float:
    """sqrt of the intensity covariance eigenvalue ratio, >= 1."""
    cuu, cvv, cuv = _central_moments(img)
    tr = cuu + cvv
    det = cuu * cvv - cuv * cuv
    disc = max(tr * tr / 4.0 - det, 0.0)
    lam_hi = tr / 2.0 + np.sqrt(disc)
    lam_lo = tr / 2.0 - np.sqrt(disc)
    return float(np.sqrt(lam_hi / max(lam_lo, 1e-12)))


def principal_angle(img: np.ndarray) -> float:
    """Major-axis angle in (-pi/2, pi/2], measured in grid coordinates."""
    cuu, cvv, cuv = _central_moments(img)
    return float(0.5 * np.arctan2(2.0 * cuv, cuu - cvv))


# ---------------------------------------------------------------------------
# optional stand-in for a pretrained neural decoder


class DistilledDecoder:
    """A small frozen MLP fit to mimic BlobGenerator, off by default.

    Exercises the code path where the image comes from learned weights that
    must stay fixed: after ``distill`` the weight tensors have
    requires_grad=False, so adversarial backprop can only reach (y, z).
    Fidelity is coarse; this is an interface double, not a better renderer.
    """

    def __init__(self, generator: BlobGenerator, hidden: int = 64):
        self.generator = generator
        self.hidden = int(hidden)
        self._params: list[Tensor] | None = None

    @property
    def is_distilled(self) -> bool:
        return self._params is not None

    def distill(self, seed: int, n_samples: int = 256, epochs: int = 2000,
                lr: float = 1.0) -> float:
        """Fit to random (y, z) renders; returns final mean squared error."""
        rng = np.random.default_rng(seed)
        gen = self.generator
        d_in = gen.num_attributes + gen.latent_dim
        d_out = gen.image_side ** 2
        Y = rng.normal(size=(n_samples, gen.num_attributes))
        Z = rng.normal(size=(n_samples, gen.latent_dim))
        target = gen.render_batch(Tensor(Y), Tensor(Z)).data

        w1 = ag.parameter(rng.normal(size=(d_in, self.hidden)) * np.sqrt(2.0 / d_in))
        b1 = ag.parameter(np.zeros((1, self.hidden)))
        w2 = ag.parameter(rng.normal(size=(self.hidden, d_out)) * np.sqrt(2.0 / self.hidden))
        b2 = ag.parameter(np.zeros((1, d_out)))
        params = [w1, b1, w2, b2]
        X = Tensor(np.concatenate([Y, Z], axis=1))
        T = Tensor(target)
        mse = np.inf
        for _ in range(epochs):
            ag.zero_grads(params)
            pred = ag.sigmoid(ag.matmul(ag.relu(ag.matmul(X, w1) + b1), w2) + b2)
            diff = pred - T
            loss = ag.tmean(ag.mul(diff, diff))
            ag.backward(loss)
            ag.sgd_step(params, lr)
            mse = loss.item()
        for p in params:
            p.requires_grad = False
            p.grad = None
        self._params = params
        return mse

    def render_batch(self, Y: Tensor, Z: Tensor) -> Tensor:
        if self._params is None:
            raise RuntimeError("decoder not distilled yet")
        w1, b1, w2, b2 = self._params
        # identity embeddings route Y into the first N input slots and Z into
        # the rest, standing in for a concat primitive
        n = Y.shape[1]
        embed_y = np.zeros((n, w1.shape[0]))
        embed_y[:, :n] = np.eye(n)
        embed_z = np.zeros((Z.shape[1], w1.shape[0]))
        embed_z[:, n:] = np.eye(Z.shape[1])
        X = ag.matmul(Y, Tensor(embed_y)) + ag.matmul(Z, Tensor(embed_z))
        return ag.sigmoid(ag.matmul(ag.relu(ag.matmul(X, w1) + b1), w2) + b2)
