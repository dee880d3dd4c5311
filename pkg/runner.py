"""Experiment runner: loads data, dispatches the configured method and builds reports."""
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterator

import numpy as np
import psutil

from cfrm import CfrmInit, UpdateOrder, association, extract_chains, src_fit
from clustering import (
    DEFAULT_RESTARTS,
    ClusterIndicator,
    align_clusters,
    evaluate_partition,
    kmeans,
    silhouette,
    to_vigorous,
)
from config import ExperimentConfig
from core import DataMatrix, Entity, EntityMatrixGraph, build_graph, concatenated_view
from dcmtf import EpochRecord, construct, hpo_search, prepare_data, train
from errors import ConfigError, DcmtfError, SingleCluster, UnknownEntity
from linalg import AUTO_SIGMA, Normalization, gaussian_similarity
from matrix_io import load_labels, load_matrix
from reports import RunReport, emit_report, read_report
from spectral import spectral_fit
from synth import PlantTruth, generate
from utils import get_version
from workers import TaskPool, default_threads

logger = logging.getLogger(__name__)

SUMMARY_NAME = "summary.json"


@dataclass
class LoadedData:
    graph: EntityMatrixGraph
    matrix_names: dict[int, str]
    labels: dict[int, np.ndarray] = field(default_factory=dict)
    truth: PlantTruth | None = None

    def entity_name(self, e: int) -> str:
        return self.graph.entity(e).name


@dataclass
class MethodOutput:
    """What every method hands back for reporting."""
    embeddings: dict[int, np.ndarray]
    indicators: dict[int, ClusterIndicator]
    associations: dict[int, np.ndarray]
    extra: dict[str, Any] = field(default_factory=dict)


class ExperimentRunner:
    """Runs one configured experiment, stage by stage.

    Args:
        config: Experiment configuration.
        log: Optional progress callback (one line per milestone).
        threads: Worker count for search trials and sweep points.
    """

    def __init__(
        self,
        config: ExperimentConfig,
        log: Callable[[str], None] | None = None,
        threads: int | None = None,
    ) -> None:
        self.config = config
        self.log: Callable[[str], None] = log if log else lambda msg: None
        self.threads = threads or config.Threads.get() or default_threads()
        self.timings: dict[str, float] = {}
        self._peak_rss = 0

    @contextmanager
    def _stage(self, name: str) -> Iterator[None]:
        """Time a stage and tag errors escaping it with the stage name."""
        start = time.perf_counter()
        logger.debug(f"Stage '{name}': starting")
        try:
            yield
        except DcmtfError as e:
            if e.stage is None:
                e.stage = name
            logger.error(f"Stage '{name}' failed: {e}")
            raise
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - start
            self._peak_rss = max(self._peak_rss, psutil.Process().memory_info().rss)

    # data

    def load_data(self) -> LoadedData:
        with self._stage("load"):
            return self._load()

    def _k_override(self, name: str) -> int | None:
        for section in self.config.entities():
            if section.name == name:
                return section.k
        return None

    def _load(self) -> LoadedData:
        cfg = self.config
        spec = cfg.plant_spec()
        file_matrices = cfg.matrices()
        if spec is not None and file_matrices:
            raise ConfigError("configure either [synth] or [matrix:*] sections, not both")

        if spec is not None:
            matrices, truth = generate(spec)
            names = spec.names()
            entities = []
            for idx, (name, count, k) in enumerate(zip(names, spec.entity_sizes, spec.ks), start=1):
                entities.append(Entity(idx, count, name, self._k_override(name) or k))
            graph = build_graph(entities, matrices)
            labels = {e: truth.indicators[e].assignments for e in graph.entity_ids}
            matrix_names = {mat.id: f"m{mat.id}" for mat in matrices}
            self.log(f"generated planted data: {len(matrices)} matrices, {len(entities)} entities")
            return LoadedData(graph, matrix_names, labels, truth)

        sections = cfg.entities()
        if not sections or not file_matrices:
            raise ConfigError("no data source: add a [synth] section or [entity:*] and [matrix:*] sections")
        ids = {s.name: idx for idx, s in enumerate(sections, start=1)}
        loaded: list[DataMatrix] = []
        matrix_names = {}
        for m, section in enumerate(file_matrices, start=1):
            for side in (section.rows, section.cols):
                if side not in ids:
                    raise UnknownEntity(f"[matrix:{section.name}] references unknown entity '{side}'")
            mat = load_matrix(
                section.path,
                section.fmt,
                matrix_id=m,
                rows=ids[section.rows],
                cols=ids[section.cols],
                datatype=section.datatype,
            )
            loaded.append(mat)
            matrix_names[m] = section.name

        entities = []
        for s in sections:
            count = s.count
            if count is None:
                count = _infer_count(ids[s.name], loaded)
            entities.append(Entity(ids[s.name], count, s.name, s.k))
        graph = build_graph(entities, loaded)
        labels = {ids[s.name]: load_labels(s.labels, graph.entity(ids[s.name]).count) for s in sections if s.labels}
        self.log(f"loaded {len(loaded)} matrices over {len(entities)} entities")
        return LoadedData(graph, matrix_names, labels)

    # methods

    def _run_dcmtf(self, data: LoadedData) -> MethodOutput:
        cfg = self.config
        g = data.graph
        hyper = cfg.hyper()
        variant = cfg.variant()
        budget = cfg.search_budget()
        extra: dict[str, Any] = {"variant": variant.value}

        with self._stage("build"):
            dcmtf_data = prepare_data(g)

        def on_epoch(record: EpochRecord) -> None:
            if record.epoch % max(1, hyper.epochs // 10) == 0:
                self.log(f"epoch {record.epoch}: L1={record.l1:.6g} L2={record.l2:.6g}")

        with self._stage("train"):
            if budget > 0:
                search_seed = cfg.SearchSeed.get()
                found = hpo_search(
                    g,
                    dcmtf_data,
                    cfg.search_space(),
                    budget,
                    hyper.seed if search_seed is None else search_seed,
                    base=hyper,
                    variant=variant,
                    threads=self.threads,
                )
                result, hyper, net = found.result, found.hyper, found.net
                extra["search_trials"] = [
                    {"index": t.index, "hyper": t.hyper.to_dict(), "l1": t.l1, "l2": t.l2, "diverged": t.diverged}
                    for t in found.trials
                ]
            else:
                net = construct(g, hyper, variant, dcmtf_data)
                result = train(net, dcmtf_data, on_epoch)

        extra["hyper"] = hyper.to_dict()
        if cfg.Checkpoint.get() is not False:
            extra["checkpoint"] = net.checkpoint()
        extra["converged"] = result.converged
        extra["epochs_run"] = result.epochs_run
        extra["loss_history"] = [
            {**rec._asdict(), "ortho_residual": {data.entity_name(e): r for e, r in rec.ortho_residual.items()}}
            for rec in result.loss_history
        ]
        if cfg.Reconstructions.get():
            extra["reconstructions"] = {data.matrix_names[m]: x for m, x in result.reconstructions.items()}
        return MethodOutput(
            result.c,
            result.indicators,
            {m: a.a for m, a in result.associations.items()},
            extra,
        )

    def _run_cfrm(self, data: LoadedData) -> MethodOutput:
        cfg = self.config
        try:
            init = CfrmInit((cfg.CfrmInit.get() or CfrmInit.RANDOM.value).lower())
            update = UpdateOrder((cfg.CfrmUpdate.get() or UpdateOrder.JACOBI.value).lower())
        except ValueError as e:
            raise ConfigError(f"[cfrm] {e}") from None
        with self._stage("train"):
            result = src_fit(
                data.graph,
                init=init,
                sweeps=cfg.CfrmSweeps.get() or 30,
                seed=cfg.seed(),
                update=update,
                restarts=cfg.CfrmRestarts.get() or DEFAULT_RESTARTS,
                log=self.log,
            )
        extra = {
            "converged": result.converged,
            "trace_history": result.trace_history,
            "cfrm_steps": [
                {**step._asdict(), "entity": data.entity_name(step.entity)} for step in result.steps
            ],
            "sweeps": result.sweeps,
        }
        return MethodOutput(
            result.embeddings,
            result.indicators,
            {m: a.a for m, a in result.associations.items()},
            extra,
        )

    def _selected(self, data: LoadedData, names: list[str] | None) -> list[int]:
        if not names:
            return data.graph.entity_ids
        return [data.graph.entity_by_name(name).id for name in names]

    def _run_spectral(self, data: LoadedData) -> MethodOutput:
        cfg = self.config
        g = data.graph
        sigma = cfg.SpectralSigma.get() or AUTO_SIGMA
        try:
            normalization = Normalization((cfg.SpectralNormalization.get() or Normalization.NONE.value).lower())
        except ValueError as e:
            raise ConfigError(f"[spectral] {e}") from None
        restarts = cfg.SpectralRestarts.get() or DEFAULT_RESTARTS
        embeddings, indicators = {}, {}
        with self._stage("train"):
            for e in self._selected(data, cfg.SpectralEntities.get()):
                s = gaussian_similarity(concatenated_view(g, e), sigma)
                fit = spectral_fit(s, g.entity(e).k, cfg.seed(), normalization, restarts)
                embeddings[e], indicators[e] = fit.embedding, fit.indicator
                self.log(f"spectral: entity {data.entity_name(e)} clustered (sigma={s.sigma:.6g})")
        return MethodOutput(embeddings, indicators, self._associations(g, indicators))

    def _run_kmeans(self, data: LoadedData) -> MethodOutput:
        g = data.graph
        restarts = self.config.KMeansRestarts.get() or DEFAULT_RESTARTS
        embeddings, indicators = {}, {}
        with self._stage("train"):
            for e in g.entity_ids:
                embeddings[e] = concatenated_view(g, e)
                indicators[e] = kmeans(embeddings[e], g.entity(e).k, self.config.seed(), restarts)
        return MethodOutput(embeddings, indicators, self._associations(g, indicators))

    @staticmethod
    def _associations(g: EntityMatrixGraph, indicators: dict[int, ClusterIndicator]) -> dict[int, np.ndarray]:
        """A for every matrix whose two entities were both clustered."""
        out = {}
        for mat in g.matrices:
            if mat.rows in indicators and mat.cols in indicators:
                j_r = to_vigorous(indicators[mat.rows], allow_empty=True)
                j_c = to_vigorous(indicators[mat.cols], allow_empty=True)
                out[mat.id] = association(mat, j_r, j_c).a
        return out

    # evaluation and report

    def _evaluate(self, data: LoadedData, output: MethodOutput) -> tuple[dict, dict]:
        names = self.config.EvaluateEntities.get()
        targets = self._selected(data, names) if names else sorted(data.labels)
        metrics = {}
        for e in targets:
            if e not in output.indicators:
                continue
            if e not in data.labels:
                raise ConfigError(f"entity '{data.entity_name(e)}' has no truth labels to evaluate against")
            metrics[data.entity_name(e)] = evaluate_partition(output.indicators[e], data.labels[e])._asdict()
        silhouettes = {}
        for e, ind in output.indicators.items():
            try:
                silhouettes[e] = silhouette(output.embeddings[e], ind)
            except SingleCluster:
                silhouettes[e] = None
        return metrics, silhouettes

    def _plant_check(self, data: LoadedData, output: MethodOutput) -> dict[str, bool]:
        """Does the learnt association pattern match the planted one once clusters are aligned?"""
        truth = data.truth
        checks = {}
        for m, a in output.associations.items():
            mat = data.graph.matrix(m)
            pred_r, pred_c = output.indicators[mat.rows], output.indicators[mat.cols]
            true_r, true_c = truth.indicators[mat.rows], truth.indicators[mat.cols]
            if pred_r.k != true_r.k or pred_c.k != true_c.k:
                continue
            map_r, map_c = align_clusters(pred_r, true_r), align_clusters(pred_c, true_c)
            aligned = np.zeros_like(a)
            aligned[np.ix_(map_r, map_c)] = a
            planted = truth.associations[m]
            rows = np.any(planted != 0, axis=1)
            checks[data.matrix_names[m]] = bool(
                np.array_equal(np.argmax(np.abs(aligned[rows]), axis=1), np.argmax(np.abs(planted[rows]), axis=1))
            )
        return checks

    def run(self) -> RunReport:
        method = self.config.method()
        seed = self.config.seed()
        logger.info(f"Run: method={method}, seed={seed}")
        data = self.load_data()
        dispatch = {
            "dcmtf": self._run_dcmtf,
            "cfrm": self._run_cfrm,
            "spectral": self._run_spectral,
            "kmeans": self._run_kmeans,
        }
        output = dispatch[method](data)

        with self._stage("evaluate"):
            metrics, silhouettes = self._evaluate(data, output)
            plant_check = self._plant_check(data, output) if data.truth is not None else None

        g = data.graph
        report: dict[str, Any] = {
            "version": get_version(),
            "name": self.config.Name.get(),
            "method": method,
            "seed": seed,
            "config": self.config.to_dict(),
            "config_dir": str(self.config.base_dir),
            "schema": schema_of(data),
            "entities": {
                data.entity_name(e): {
                    "id": e,
                    "k": ind.k,
                    "assignments": ind.assignments,
                    "silhouette": silhouettes.get(e),
                }
                for e, ind in output.indicators.items()
            },
            "metrics": metrics,
            "associations": {data.matrix_names[m]: a for m, a in output.associations.items()},
            "loss_history": output.extra.pop("loss_history", []),
            **output.extra,
        }
        if plant_check is not None:
            report["plant_check"] = plant_check
        report["timings"] = {
            **{f"{name}_seconds": secs for name, secs in self.timings.items()},
            "peak_rss_mb": self._peak_rss / 2**20,
        }
        for name, values in metrics.items():
            logger.info(f"Entity {name}: ARI={values['ari']:.4f} NMI={values['nmi']:.4f}")
        logger.info(f"Run finished: {len(g.entity_ids)} entities clustered")
        return report

    def run_to(self, path: str | Path) -> RunReport:
        report = self.run()
        with self._stage("report"):
            emit_report(report, path)
        return report

    # sweeps

    def sweep(self, out_dir: str | Path) -> dict[str, Any]:
        """One report per value of [sweep] parameter, plus a summary table.

        Point i runs with seed = base seed + i. Points run on `threads` workers.
        """
        parameter = self.config.SweepParameter.get()
        values = self.config.SweepValues.get()
        if not parameter or not values:
            raise ConfigError("[sweep] needs parameter and values")
        out_dir = Path(out_dir)
        base_seed = self.config.seed()
        points = [(idx, value) for idx, value in enumerate(values)]
        logger.info(f"Sweep over {parameter} = {values} on {self.threads} thread(s)")

        def run_point(point: tuple[int, str]) -> dict[str, Any]:
            idx, value = point
            cfg = self.config.copy()
            _set_sweep_value(cfg, parameter, value)
            cfg.Seed.set(base_seed + idx)
            runner = ExperimentRunner(cfg, threads=1)
            path = out_dir / f"point-{idx:02d}.json"
            report = runner.run_to(path)
            return {
                "index": idx,
                "parameter": parameter,
                "value": value,
                "seed": base_seed + idx,
                "report": path.name,
                "ari": {name: m["ari"] for name, m in report["metrics"].items()},
                "silhouette": {name: ent["silhouette"] for name, ent in report["entities"].items()},
            }

        rows = TaskPool(self.threads, self.log).map(run_point, points)
        summary = {"version": get_version(), "name": self.config.Name.get(), "parameter": parameter, "points": rows}
        with self._stage("report"):
            emit_report(summary, out_dir / SUMMARY_NAME)
        return summary


def _infer_count(e: int, matrices: list[DataMatrix]) -> int:
    for mat in matrices:
        if mat.rows == e:
            return mat.values.shape[0]
        if mat.cols == e:
            return mat.values.shape[1]
    raise ConfigError(f"entity {e} has no count and appears in no matrix")


def _set_sweep_value(cfg: ExperimentConfig, parameter: str, value: str) -> None:
    """`l`, `k` (every entity), `k:<entity>` or an explicit `section.option`."""
    if parameter == "k" or parameter.startswith("k:"):
        names = [parameter[2:]] if parameter.startswith("k:") else _entity_names(cfg)
        for name in names:
            section = f"entity:{name}"
            if not cfg.config.has_section(section):
                cfg.config.add_section(section)
            cfg.config.set(section, "k", value)
        return
    section, _, option = parameter.rpartition(".")
    section = section or "dcmtf"
    if not cfg.config.has_section(section):
        cfg.config.add_section(section)
    cfg.config.set(section, option, value)


def _entity_names(cfg: ExperimentConfig) -> list[str]:
    spec = cfg.plant_spec()
    if spec is not None:
        return spec.names()
    return [s.name for s in cfg.entities()]


def schema_of(data: LoadedData) -> dict[str, Any]:
    g = data.graph
    return {
        "entities": {ent.name: {"id": ent.id, "count": ent.count, "k": ent.k} for ent in g.entities},
        "matrices": {
            data.matrix_names[mat.id]: {
                "id": mat.id,
                "rows": data.entity_name(mat.rows),
                "cols": data.entity_name(mat.cols),
            }
            for mat in g.matrices
        },
    }


def schema_graph(report: dict[str, Any]) -> tuple[EntityMatrixGraph, dict[str, int]]:
    """Structure-only graph from a report's schema block, plus matrix name -> id."""
    schema = report["schema"]
    entities = [Entity(v["id"], v["count"], name, v["k"]) for name, v in schema["entities"].items()]
    ids = {name: v["id"] for name, v in schema["entities"].items()}
    matrices = [
        DataMatrix(v["id"], ids[v["rows"]], ids[v["cols"]], np.empty((0, 0)))
        for v in schema["matrices"].values()
    ]
    return EntityMatrixGraph(entities, matrices), {name: v["id"] for name, v in schema["matrices"].items()}


def evaluate_report(report_path: str | Path, labels: dict[str, str | Path] | None = None) -> dict[str, dict]:
    """Score a report's assignments against truth labels.

    Labels come from `labels` (entity name -> label file) when given, otherwise from
    the report's configuration echo (label files or the regenerated plant).
    """
    report = read_report(report_path)
    truth: dict[str, np.ndarray] = {}
    if labels:
        for name, path in labels.items():
            if name not in report["entities"]:
                raise UnknownEntity(f"report has no entity '{name}'")
            truth[name] = load_labels(path, len(report["entities"][name]["assignments"]))
    else:
        cfg = ExperimentConfig.from_dict(report["config"], report.get("config_dir"))
        data = ExperimentRunner(cfg, threads=1).load_data()
        truth = {data.entity_name(e): lab for e, lab in data.labels.items()}
    metrics = {}
    for name, values in sorted(truth.items()):
        if name not in report["entities"]:
            continue
        pred = np.asarray(report["entities"][name]["assignments"], dtype=np.int64)
        metrics[name] = evaluate_partition(pred, values)._asdict()
    return metrics


def chains_from_report(
    report_path: str | Path,
    start: tuple[str, int, int],
    max_len: int | None = None,
) -> dict[str, Any]:
    """Follow a cluster chain over a report's association matrices from (matrix name, u, v)."""
    report = read_report(report_path)
    g, matrix_ids = schema_graph(report)
    name, u, v = start
    if name not in matrix_ids:
        raise ConfigError(f"report has no matrix '{name}'")
    assocs = {matrix_ids[n]: np.asarray(a, dtype=np.float64) for n, a in report["associations"].items()}
    chain = extract_chains(g, assocs, (matrix_ids[name], u, v), max_len)
    names = {mid: n for n, mid in matrix_ids.items()}
    return {
        "flagged": chain.flagged,
        "links": [
            {"matrix": names[link.matrix_id], "row_cluster": link.row_cluster,
             "col_cluster": link.col_cluster, "strength": link.strength}
            for link in chain.links
        ],
    }
