"""Deep collective matrix tri-factorization: network construction, two-phase training, inference and search.

Per (entity, matrix) edge a VAE encodes the entity's view of the matrix. Entities in
several matrices fuse their VAE means into one representation U^[e]; entities in one
matrix use the mean directly. A clustering net per entity maps U^[e] to C~^[e], which a
frozen Cholesky tail turns into an orthonormal C^[e].

Training alternates two passes per epoch:
  pass 1: L1 = L_A + L_R (VAE losses + reconstruction of X by U^[r] U^[c]^T), updating
          encoders, decoders and fusion nets;
  pass 2: L2 = L_A + L_C (VAE losses + Tr(C^T L C) on cluster-aware similarities),
          updating encoders and clustering nets; decoders and fusion nets stay fixed.

Each epoch costs O(sum_m d_r d_c l) for the reconstruction terms and O(d_e^2 sum k) per
entity for the similarity graphs.
"""
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from typing import Any, Callable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy.special import expit

from cfrm import AssociationMatrix, association
from clustering import ClusterIndicator, VigorousIndicator, kmeans, to_vigorous
from core import DataType, EntityMatrixGraph, neighbors
from errors import (
    AllTrialsDiverged,
    BadOrdering,
    DegenerateScale,
    InvalidHyper,
    MissingIndicator,
    NumericalDivergence,
    NumericalError,
    ShapeMismatch,
)
from linalg import AUTO_SIGMA, LaplacianPair, Normalization, gaussian_similarity, laplacian, orthogonalize
from neural import (
    Activation,
    DenseNet,
    ForwardCache,
    Vae,
    VaeOutputs,
    clip_gradients,
    encoder_backward,
    loss_matrix_recon,
    loss_trace,
    loss_vae,
    vae_forward,
)
from workers import run_ordered

logger = logging.getLogger(__name__)

LOG_EVERY = 50
ORTHO_TOL = 1e-6

Edge = tuple[int, int]


class DcmtfVariant(str, Enum):
    FULL = "full"
    AE_TO_FFN = "ae-to-ffn"  # plain autoencoders: deterministic latent, no KL
    CLUSTER_TO_KMEANS = "cluster-to-kmeans"  # no clustering nets; k-means on U
    ONE_PHASE = "one-phase"  # single combined loss and update per epoch


@dataclass(frozen=True)
class DcmtfHyper:
    l: int = 50
    lr: float = 1e-3
    weight_decay: float = 1e-5
    epochs: int = 500
    hidden_layers: int = 1
    sigma: float | str = AUTO_SIGMA
    j_refresh: int = 1
    seed: int = 0
    convergence: float = 1e-6
    max_grad_norm: float = 10.0
    kmeans_restarts: int = 10
    normalization: Normalization = Normalization.NONE

    def validate(self) -> "DcmtfHyper":
        if self.l < 1:
            raise InvalidHyper(f"l must be >= 1, got {self.l}")
        if self.epochs < 0:
            raise InvalidHyper(f"epochs must be >= 0, got {self.epochs}")
        if self.j_refresh < 1:
            raise InvalidHyper(f"j_refresh must be >= 1, got {self.j_refresh}")
        if self.hidden_layers < 0:
            raise InvalidHyper(f"hidden_layers must be >= 0, got {self.hidden_layers}")
        if self.lr < 0 or self.weight_decay < 0 or self.convergence < 0 or self.max_grad_norm < 0:
            raise InvalidHyper("lr, weight_decay, convergence and max_grad_norm must be non-negative")
        if self.kmeans_restarts < 1:
            raise InvalidHyper(f"kmeans_restarts must be >= 1, got {self.kmeans_restarts}")
        if isinstance(self.sigma, str):
            if self.sigma != AUTO_SIGMA:
                raise InvalidHyper(f"sigma must be positive or '{AUTO_SIGMA}', got '{self.sigma}'")
        elif not self.sigma > 0:
            raise InvalidHyper(f"sigma must be positive, got {self.sigma}")
        if Normalization(self.normalization) is Normalization.RANDOM_WALK:
            raise InvalidHyper("DCMTF supports 'none' or 'symmetric' Laplacians")
        return self

    def to_dict(self) -> dict:
        out = asdict(self)
        out["normalization"] = Normalization(self.normalization).value
        return out


class ScaleParams(NamedTuple):
    minimum: float
    span: float


@dataclass(frozen=True)
class DcmtfData:
    """Network inputs: real matrices min-max scaled to [0, 1], binary ones unchanged."""
    graph: EntityMatrixGraph
    scaled: dict[int, np.ndarray]
    scales: dict[int, ScaleParams | None]
    views: dict[Edge, np.ndarray]

    def unscale(self, m: int, values: np.ndarray) -> np.ndarray:
        params = self.scales[m]
        if params is None:
            return expit(values)
        return params.minimum + params.span * values


def prepare_data(g: EntityMatrixGraph) -> DcmtfData:
    scaled, scales = {}, {}
    for mat in g.matrices:
        if mat.datatype is DataType.REAL:
            lo, hi = float(mat.values.min()), float(mat.values.max())
            span = hi - lo if hi > lo else 1.0
            scaled[mat.id] = (mat.values - lo) / span
            scales[mat.id] = ScaleParams(lo, span)
        else:
            scaled[mat.id] = np.asarray(mat.values, dtype=np.float64)
            scales[mat.id] = None
    views = {}
    for e, m in g.edges:
        views[(e, m)] = scaled[m] if g.matrix(m).rows == e else scaled[m].T
    return DcmtfData(g, scaled, scales, views)


@dataclass
class DcmtfNet:
    graph: EntityMatrixGraph
    hyper: DcmtfHyper
    variant: DcmtfVariant
    vaes: dict[Edge, Vae]
    fusions: dict[int, DenseNet]
    clusterers: dict[int, DenseNet]
    current_j: dict[int, VigorousIndicator]
    noise: np.random.Generator

    def subnets(self) -> list[tuple[str, DenseNet]]:
        """Every trainable net with a stable name, in construction order."""
        nets = []
        for (e, m), vae in self.vaes.items():
            nets.append((f"vae.{e}.{m}.encoder", vae.encoder))
            nets.append((f"vae.{e}.{m}.decoder", vae.decoder))
        nets.extend((f"fusion.{e}", net) for e, net in self.fusions.items())
        nets.extend((f"clusterer.{e}", net) for e, net in self.clusterers.items())
        return nets

    def checkpoint(self) -> list[dict[str, Any]]:
        """Flat, ordered list of named parameter arrays (frozen tails included)."""
        return [
            {"name": f"{name}.{pname}", "values": np.array(arr)}
            for name, net in self.subnets()
            for pname, arr in net.named_parameters()
        ]


class EpochRecord(NamedTuple):
    epoch: int
    l1: float
    l2: float
    l_a1: float
    l_r: float
    l_a2: float
    l_c: float
    ortho_residual: dict[int, float]


class Gradients(NamedTuple):
    encoders: dict[Edge, list[np.ndarray]]
    decoders: dict[Edge, list[np.ndarray]]
    fusions: dict[int, list[np.ndarray]]
    clusterers: dict[int, list[np.ndarray]]


class PassResult(NamedTuple):
    value: float
    terms: dict[str, float]
    grads: Gradients
    u: dict[int, np.ndarray]
    c: dict[int, np.ndarray]
    ortho_residual: dict[int, float]


@dataclass
class DcmtfResult:
    u: dict[int, np.ndarray]
    c: dict[int, np.ndarray]
    indicators: dict[int, ClusterIndicator]
    vigorous: dict[int, VigorousIndicator]
    associations: dict[int, AssociationMatrix]
    reconstructions: dict[int, np.ndarray]
    loss_history: list[EpochRecord] = field(default_factory=list)
    epochs_run: int = 0
    converged: bool = False


class _Encoded(NamedTuple):
    outputs: dict[Edge, VaeOutputs]
    u: dict[int, np.ndarray]
    fusion_caches: dict[int, ForwardCache]


def construct(
    g: EntityMatrixGraph,
    hyper: DcmtfHyper,
    variant: DcmtfVariant = DcmtfVariant.FULL,
    data: DcmtfData | None = None,
) -> DcmtfNet:
    """Build one VAE per edge, one fusion net per entity of degree > 1 and one clusterer per entity.

    Indicators are bootstrapped by k-means on the initial deterministic representations.
    """
    hyper.validate()
    variant = DcmtfVariant(variant)
    data = data or prepare_data(g)
    init_seq, noise_seq = np.random.SeedSequence(hyper.seed).spawn(2)
    rng = np.random.default_rng(init_seq)
    l, hidden = hyper.l, hyper.hidden_layers

    vaes = {}
    for e, m in g.edges:
        vaes[(e, m)] = Vae.build(
            data.views[(e, m)].shape[1],
            l,
            g.matrix(m).datatype,
            rng,
            hidden_layers=hidden,
            variational=variant is not DcmtfVariant.AE_TO_FFN,
        )
    fusions = {}
    for e in g.entity_ids:
        degree = g.degree(e)
        if degree > 1:
            fusions[e] = DenseNet.build(
                [degree * l, *[2 * l] * hidden, l],
                [Activation.TANH] * hidden + [Activation.IDENTITY],
                rng,
            )
    clusterers = {}
    if variant is not DcmtfVariant.CLUSTER_TO_KMEANS:
        for e in g.entity_ids:
            k = g.entity(e).k
            net = DenseNet.build(
                [l, *[2 * l] * hidden, k],
                [Activation.TANH] * hidden + [Activation.IDENTITY],
                rng,
            )
            net.freeze_tail(np.eye(k))
            clusterers[e] = net

    net = DcmtfNet(g, hyper, variant, vaes, fusions, clusterers, {}, np.random.default_rng(noise_seq))
    encoded = _encode(net, data, sample=False)
    for e in g.entity_ids:
        ind = kmeans(encoded.u[e], g.entity(e).k, hyper.seed, hyper.kmeans_restarts)
        net.current_j[e] = to_vigorous(ind, allow_empty=True)
    logger.info(
        f"DCMTF network: {len(vaes)} VAEs, {len(fusions)} fusion nets, {len(clusterers)} clusterers "
        f"(variant={variant.value}, l={l})"
    )
    return net


def _fuse_forward(net: DcmtfNet, e: int, means: Sequence[tuple[int, np.ndarray]]) -> tuple[np.ndarray, ForwardCache | None]:
    order = [m for m, _ in means]
    if order != neighbors(net.graph, e):
        raise BadOrdering(f"means for entity {e} must follow matrices {neighbors(net.graph, e)}, got {order}")
    if len(means) == 1:
        return means[0][1], None
    concat = np.hstack([mu for _, mu in means])
    return net.fusions[e].forward(concat)


def fuse(net: DcmtfNet, e: int, means: Sequence[tuple[int, np.ndarray]]) -> np.ndarray:
    """U^[e] from the (matrix id, mean) pairs of entity e, ordered by ascending matrix id.

    A single mean passes through unchanged; several go through the fusion net.
    """
    return _fuse_forward(net, e, means)[0]


def similarity_inputs(
    g: EntityMatrixGraph,
    x_recon: Mapping[int, np.ndarray],
    js: Mapping[int, VigorousIndicator],
    e: int,
) -> np.ndarray:
    """P^[e]: concatenation over matrices containing e of X'' J_partner (row-oriented for e)."""
    blocks = []
    for m in neighbors(g, e):
        mat = g.matrix(m)
        partner = mat.cols if mat.rows == e else mat.rows
        if partner not in js:
            raise MissingIndicator(f"entity {partner} has no current indicator")
        x = np.asarray(x_recon[m], dtype=np.float64)
        if x.shape != mat.values.shape:
            raise ShapeMismatch(f"X'' for matrix {m} has shape {x.shape}, expected {mat.values.shape}")
        blocks.append(x @ js[partner].j if mat.rows == e else x.T @ js[partner].j)
    return np.hstack(blocks)


def _encode(net: DcmtfNet, data: DcmtfData, sample: bool) -> _Encoded:
    outputs = {}
    for edge, vae in net.vaes.items():
        outputs[edge] = vae_forward(vae, data.views[edge], net.noise if sample else None)
    u, caches = {}, {}
    for e in net.graph.entity_ids:
        means = [(m, outputs[(e, m)].mu) for m in neighbors(net.graph, e)]
        u[e], cache = _fuse_forward(net, e, means)
        if cache is not None:
            caches[e] = cache
    return _Encoded(outputs, u, caches)


def _check_finite(value: float, what: str) -> float:
    if not np.isfinite(value):
        raise NumericalDivergence(f"{what} is not finite ({value})")
    return value


def _entity_laplacian(net: DcmtfNet, x_recon: dict[int, np.ndarray], e: int) -> LaplacianPair:
    p = similarity_inputs(net.graph, x_recon, net.current_j, e)
    try:
        s = gaussian_similarity(p, net.hyper.sigma).s
    except DegenerateScale:
        logger.debug(f"Entity {e}: all similarity inputs coincide, using a constant similarity")
        s = np.ones((p.shape[0], p.shape[0]))
    return laplacian(s, net.hyper.normalization)


def _run_pass(
    net: DcmtfNet,
    data: DcmtfData,
    *,
    recon: bool,
    trace: bool,
    update_fusion: bool,
    update_decoder: bool = True,
    sample: bool = True,
) -> PassResult:
    g = net.graph
    enc = _encode(net, data, sample)
    terms = {"L_A": 0.0, "L_R": 0.0, "L_C": 0.0}
    enc_grads: dict[Edge, list[np.ndarray]] = {}
    dec_grads: dict[Edge, list[np.ndarray]] = {}
    for edge, vae in net.vaes.items():
        loss = loss_vae(vae, data.views[edge], enc.outputs[edge])
        terms["L_A"] += loss.value
        enc_grads[edge] = loss.grads["encoder"]
        if update_decoder:
            dec_grads[edge] = loss.grads["decoder"]

    d_u = {e: np.zeros_like(enc.u[e]) for e in g.entity_ids}
    if recon:
        for mat in g.matrices:
            loss = loss_matrix_recon(data.scaled[mat.id], enc.u[mat.rows], enc.u[mat.cols], mat.datatype)
            terms["L_R"] += loss.value
            d_u[mat.rows] += loss.grads["u_r"]
            d_u[mat.cols] += loss.grads["u_c"]

    clusterer_grads: dict[int, list[np.ndarray]] = {}
    embeddings: dict[int, np.ndarray] = {}
    residuals: dict[int, float] = {}
    if trace and net.clusterers:
        x_recon = {mat.id: enc.u[mat.rows] @ enc.u[mat.cols].T for mat in g.matrices}
        for e, clusterer in net.clusterers.items():
            pair = _entity_laplacian(net, x_recon, e)
            c_tilde, cache = clusterer.forward(enc.u[e], use_tail=False)
            ortho = orthogonalize(c_tilde)
            clusterer.freeze_tail(ortho.h_inv_t)
            loss = loss_trace(ortho.c, pair, ortho)
            terms["L_C"] += loss.value
            clusterer_grads[e], d_ue = clusterer.backward(loss.grads["c_tilde"], cache)
            d_u[e] += d_ue
            embeddings[e] = ortho.c
            k = ortho.c.shape[1]
            residuals[e] = float(np.linalg.norm(ortho.c.T @ ortho.c - np.eye(k)))
            if residuals[e] > ORTHO_TOL:
                logger.warning(f"Entity {e}: orthogonality residual {residuals[e]:.2e} exceeds {ORTHO_TOL:g}")

    fusion_grads: dict[int, list[np.ndarray]] = {}
    d_mu: dict[Edge, np.ndarray] = {}
    l = net.hyper.l
    for e in g.entity_ids:
        nbrs = neighbors(g, e)
        if e in enc.fusion_caches:
            grads, d_concat = net.fusions[e].backward(d_u[e], enc.fusion_caches[e])
            if update_fusion:
                fusion_grads[e] = grads
            for idx, m in enumerate(nbrs):
                d_mu[(e, m)] = d_concat[:, idx * l:(idx + 1) * l]
        else:
            d_mu[(e, nbrs[0])] = d_u[e]
    for edge, vae in net.vaes.items():
        extra, _ = encoder_backward(vae, enc.outputs[edge], d_mu[edge])
        enc_grads[edge] = [a + b for a, b in zip(enc_grads[edge], extra)]

    value = terms["L_A"] + (terms["L_R"] if recon else 0.0) + (terms["L_C"] if trace else 0.0)
    _check_finite(value, "DCMTF loss")
    return PassResult(
        value,
        terms,
        Gradients(enc_grads, dec_grads, fusion_grads, clusterer_grads),
        enc.u,
        embeddings,
        residuals,
    )


def pass1(net: DcmtfNet, data: DcmtfData) -> PassResult:
    """L1 = L_A + L_R; gradients for encoders, decoders and fusion nets."""
    return _run_pass(net, data, recon=True, trace=False, update_fusion=True)


def pass2(net: DcmtfNet, data: DcmtfData) -> PassResult:
    """L2 = L_A + L_C; gradients for encoders and clusterers only."""
    return _run_pass(net, data, recon=False, trace=True, update_fusion=False, update_decoder=False)


def combined_pass(net: DcmtfNet, data: DcmtfData) -> PassResult:
    """L_A + L_R + L_C in one pass; gradients for every subnet."""
    return _run_pass(net, data, recon=True, trace=True, update_fusion=True)


def apply_gradients(net: DcmtfNet, grads: Gradients) -> None:
    """One clipped SGD step for every subnet that received gradients."""
    hyper = net.hyper
    updates: list[tuple[DenseNet, list[np.ndarray]]] = []
    for edge, g in grads.encoders.items():
        updates.append((net.vaes[edge].encoder, g))
    for edge, g in grads.decoders.items():
        updates.append((net.vaes[edge].decoder, g))
    updates.extend((net.fusions[e], g) for e, g in grads.fusions.items())
    updates.extend((net.clusterers[e], g) for e, g in grads.clusterers.items())
    for subnet, g in updates:
        clipped, _ = clip_gradients(g, hyper.max_grad_norm)
        subnet.apply_gradients(clipped, hyper.lr, hyper.weight_decay)


def _refresh_indicators(net: DcmtfNet, source: Mapping[int, np.ndarray]) -> None:
    for e, points in source.items():
        ind = kmeans(points, net.graph.entity(e).k, net.hyper.seed, net.hyper.kmeans_restarts)
        if ind.degenerate:
            logger.warning(f"Entity {e}: degenerate indicator refresh, keeping the previous one")
            continue
        net.current_j[e] = to_vigorous(ind)


def train(
    net: DcmtfNet,
    data: DcmtfData,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> DcmtfResult:
    """Coordinate descent over epochs, then inference.

    Stops at the epoch cap or when |dL1| + |dL2| falls below the convergence threshold.
    """
    hyper, variant = net.hyper, net.variant
    history: list[EpochRecord] = []
    converged = False
    logger.info(f"DCMTF training: variant={variant.value}, epochs={hyper.epochs}, lr={hyper.lr}")
    for epoch in range(1, hyper.epochs + 1):
        if variant is DcmtfVariant.ONE_PHASE:
            res = combined_pass(net, data)
            apply_gradients(net, res.grads)
            l_a1 = l_a2 = res.terms["L_A"]
            l_r, l_c = res.terms["L_R"], res.terms["L_C"]
            embeddings, residuals, u = res.c, res.ortho_residual, res.u
        else:
            res1 = pass1(net, data)
            apply_gradients(net, res1.grads)
            res2 = pass2(net, data)
            apply_gradients(net, res2.grads)
            l_a1, l_r = res1.terms["L_A"], res1.terms["L_R"]
            l_a2, l_c = res2.terms["L_A"], res2.terms["L_C"]
            embeddings, residuals, u = res2.c, res2.ortho_residual, res2.u

        record = EpochRecord(epoch, l_a1 + l_r, l_a2 + l_c, l_a1, l_r, l_a2, l_c, residuals)
        history.append(record)
        if on_epoch:
            on_epoch(record)
        logger.debug(f"Epoch {epoch}: L1={record.l1:.6g} L2={record.l2:.6g} L_C={l_c:.6g}")
        if epoch % LOG_EVERY == 0:
            logger.info(f"Epoch {epoch}/{hyper.epochs}: L1={record.l1:.6g} L2={record.l2:.6g}")

        if epoch % hyper.j_refresh == 0:
            _refresh_indicators(net, u if variant is DcmtfVariant.CLUSTER_TO_KMEANS else embeddings)

        if len(history) > 1:
            prev = history[-2]
            if abs(record.l1 - prev.l1) + abs(record.l2 - prev.l2) < hyper.convergence:
                converged = True
                logger.info(f"DCMTF converged at epoch {epoch}")
                break

    result = infer(net, data)
    result.loss_history = history
    result.epochs_run = len(history)
    result.converged = converged
    return result


def infer(net: DcmtfNet, data: DcmtfData) -> DcmtfResult:
    """Deterministic representations, embeddings, indicators and associations; the net is not modified."""
    g = net.graph
    enc = _encode(net, data, sample=False)
    c = {}
    for e in g.entity_ids:
        if net.variant is DcmtfVariant.CLUSTER_TO_KMEANS:
            c[e] = enc.u[e]
        else:
            c_tilde, _ = net.clusterers[e].forward(enc.u[e], use_tail=False)
            c[e] = orthogonalize(c_tilde).c
    indicators = {
        e: kmeans(c[e], g.entity(e).k, net.hyper.seed, net.hyper.kmeans_restarts) for e in g.entity_ids
    }
    vigorous = {e: to_vigorous(ind, allow_empty=True) for e, ind in indicators.items()}
    associations = {}
    reconstructions = {}
    for mat in g.matrices:
        associations[mat.id] = association(mat, vigorous[mat.rows], vigorous[mat.cols])
        reconstructions[mat.id] = data.unscale(mat.id, enc.u[mat.rows] @ enc.u[mat.cols].T)
    return DcmtfResult(enc.u, c, indicators, vigorous, associations, reconstructions)


def evaluate_losses(net: DcmtfNet, data: DcmtfData) -> tuple[float, float]:
    """Deterministic (L1, L2) of the current network without updating it."""
    saved = {e: clusterer.frozen_last for e, clusterer in net.clusterers.items()}
    res1 = _run_pass(net, data, recon=True, trace=False, update_fusion=False, sample=False)
    res2 = _run_pass(net, data, recon=False, trace=True, update_fusion=False, sample=False)
    for e, tail in saved.items():
        net.clusterers[e].freeze_tail(tail)
    return res1.value, res2.value


@dataclass(frozen=True)
class ParamRange:
    """Sampling range for one hyperparameter."""
    low: float
    high: float
    log: bool = False
    integer: bool = False

    def sample(self, rng: np.random.Generator) -> float | int:
        if self.high < self.low:
            raise InvalidHyper(f"range [{self.low}, {self.high}] is empty")
        if self.low == self.high:
            value = self.low
        elif self.log:
            value = float(np.exp(rng.uniform(np.log(self.low), np.log(self.high))))
        else:
            value = float(rng.uniform(self.low, self.high))
        return int(round(value)) if self.integer else value


SearchSpace = Mapping[str, "ParamRange | Sequence"]


class TrialRecord(NamedTuple):
    index: int
    hyper: DcmtfHyper
    l1: float
    l2: float
    diverged: bool
    indicators: dict[int, ClusterIndicator] | None = None


class SearchResult(NamedTuple):
    hyper: DcmtfHyper
    result: DcmtfResult
    net: DcmtfNet
    trials: list[TrialRecord]


def sample_hypers(space: SearchSpace, budget: int, seed: int, base: DcmtfHyper) -> list[DcmtfHyper]:
    names = {f.name for f in fields(DcmtfHyper)}
    for key in space:
        if key not in names or key == "seed":
            raise InvalidHyper(f"'{key}' is not a searchable hyperparameter")
    rng = np.random.default_rng(seed)
    hypers = []
    for _ in range(budget):
        values = {}
        for key, spec in space.items():
            if isinstance(spec, ParamRange):
                values[key] = spec.sample(rng)
            else:
                choices = list(spec)
                if not choices:
                    raise InvalidHyper(f"no choices for '{key}'")
                values[key] = choices[int(rng.integers(len(choices)))]
        hypers.append(replace(base, **values).validate())
    return hypers


def hpo_search(
    g: EntityMatrixGraph,
    data: DcmtfData,
    space: SearchSpace,
    budget: int,
    seed: int,
    base: DcmtfHyper | None = None,
    variant: DcmtfVariant = DcmtfVariant.FULL,
    threads: int = 1,
) -> SearchResult:
    """Seeded random search; the trial with the smallest final L1 + L2 wins, earliest on ties."""
    if budget < 1:
        raise InvalidHyper(f"budget must be >= 1, got {budget}")
    hypers = sample_hypers(space, budget, seed, base or DcmtfHyper())

    def run_trial(hyper: DcmtfHyper) -> tuple[DcmtfNet | None, DcmtfResult | None, float, float]:
        try:
            net = construct(g, hyper, variant, data)
            result = train(net, data)
            l1, l2 = evaluate_losses(net, data)
        except NumericalError as e:
            logger.warning(f"Search trial diverged: {e}")
            return None, None, float("nan"), float("nan")
        return net, result, l1, l2

    outcomes = run_ordered(run_trial, hypers, threads)
    trials = []
    best: int | None = None
    for idx, (hyper, (_, result, l1, l2)) in enumerate(zip(hypers, outcomes)):
        diverged = result is None or not np.isfinite(l1 + l2)
        trials.append(TrialRecord(idx, hyper, l1, l2, diverged, None if result is None else result.indicators))
        if not diverged and (best is None or l1 + l2 < trials[best].l1 + trials[best].l2):
            best = idx
        logger.info(f"Trial {idx}: L1+L2={l1 + l2:.6g}{' (diverged)' if diverged else ''}")
    if best is None:
        raise AllTrialsDiverged(f"all {budget} search trials diverged")
    net, result, _, _ = outcomes[best]
    return SearchResult(hypers[best], result, net, trials)
