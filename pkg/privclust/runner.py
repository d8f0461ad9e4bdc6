import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from rich.table import Table

from privclust.attack import AttackCurve, attack_power
from privclust.clustering import ClusterAssignment, get_algorithm
from privclust.config_wrapper import ConfigWrapper
from privclust.dataset import Dataset, load_dataset, partition, share_sizes, standardize
from privclust.errors import ConfigError, ParameterError, StateError, UndefinedMetricError
from privclust.ldp import (
    discretize,
    estimate_marginals,
    fit_bin_edges,
    load_noisy,
    perturb_dataset,
    save_noisy,
)
from privclust.metrics import silhouette
from privclust.protocol import RunReport, owner_prepare, run_protocol, shared_count
from privclust.selection import Recommendation, elbow_k, server_recommend, server_view, silhouette_k
from privclust.utils import rich_as_completed

AGGREGATE_COLUMNS = [
    "dataset",
    "algorithm",
    "shared",
    "epsilon",
    "seed",
    "params",
    "recommended",
    "ari",
    "silhouette",
    "ch",
    "homogeneity",
    "completeness",
    "accuracy_raw",
    "accuracy_mapped",
]
SERVER_SCORE_COLUMNS = [
    "dataset",
    "algorithm",
    "shared",
    "epsilon",
    "seed",
    "params",
    "silhouette",
    "ch",
    "selected",
]
K_ESTIMATE_COLUMNS = ["epsilon", "share", "seed", "baseline_k", "silhouette_k", "elbow_k"]
MARGINAL_COLUMNS = ["epsilon", "share", "seed", "feature", "state", "observed", "estimated", "true"]
GAP_COLUMNS = ["id", "x_orig", "y_orig", "x_noisy", "y_noisy", "cluster"]
GAP_SUMMARY_COLUMNS = [
    "epsilon",
    "silhouette_original",
    "silhouette_noisy",
    "mean_displacement",
    "bin_width",
    "clean_k",
    "noisy_k",
]

GridPoint = Tuple[float, float, int]


def cell(value: Any) -> str:
    """CSV rendering shared by every output file; undefined values become '-'."""
    if value is None:
        return "-"
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([cell(v) for v in row])


def _tag(epsilon: float, f: Optional[float] = None, seed: Optional[int] = None) -> str:
    parts = [f"eps{epsilon:g}"]
    if f is not None:
        parts.append(f"f{f:g}")
    if seed is not None:
        parts.append(f"seed{seed}")
    return "_".join(parts)


def _k_or_none(fn: Callable[..., int], data: np.ndarray, k_range: Tuple[int, int], **kwargs) -> Optional[int]:
    try:
        return fn(data, k_range, **kwargs)
    except ParameterError:
        return None


class ExperimentRunner(ConfigWrapper):
    """
    Runs the experiment commands of one configuration: the (epsilon, share
    fraction, seed) protocol sweep, standalone server selection on a noisy
    CSV, the membership-inference curve, and the gap-preservation plot data.

    Every command writes into its own directory under the run directory and
    refuses to reuse one that already exists.

    Attributes:
        experiment (ExperimentConfig): The validated configuration.
        max_threads (int): Worker pool size for grid points.
        console (Console): Rich console for progress and summaries.
    """

    def __init__(self, config: Dict[str, Any], **kwargs: Any):
        super().__init__(config, **kwargs)
        self.population: Optional[Dataset] = None

    def syntax_check(self) -> None:
        """
        Check everything that can fail before a long sweep starts: the
        dataset loads, every algorithm resolves, and every owner shares at
        least one row at every share fraction.

        Raises:
            ConfigError: If any check fails.
        """
        self.console.rule("[yellow]Syntax Check[/yellow]")
        for kind in self.experiment.selection.algorithms:
            try:
                get_algorithm(kind)
            except KeyError as e:
                raise ConfigError(str(e)) from e

        population = self.load()
        sizes = share_sizes(len(population), self.experiment.owners.shares)
        for f in self.experiment.shared_fractions:
            for i, size in enumerate(sizes):
                if shared_count(size, f) == 0:
                    raise ConfigError(
                        f"owner {i} holds {size} rows and would share none at fraction {f}"
                    )
        self.console.print("[green]Syntax check passed.[/green]")

    def load(self) -> Dataset:
        if self.population is None:
            self.console.rule("[cyan]Loading Dataset[/cyan]")
            data = load_dataset(self.experiment.dataset)
            if self.experiment.standardize:
                data = standardize(data)
            self.console.print(
                f"Loaded dataset: [bold]{data.name}[/bold] ({len(data)} rows, {data.d} features)"
            )
            self.population = data
        return self.population

    def prepare_output(self, command: str) -> str:
        out = self.run_dir(command)
        if os.path.exists(out):
            raise StateError(f"run directory already exists: {out}")
        os.makedirs(out)
        return out

    def write_metadata(self, out: str, command: str, started: datetime, **extra: Any) -> None:
        from privclust import __version__

        meta = {
            "command": command,
            "name": self.experiment.name,
            "config_hash": self.hash,
            "version": __version__,
            "started_at": started.isoformat(),
            "finished_at": datetime.now(timezone.utc).isoformat(),
            "config": self.config,
            **extra,
        }
        with open(os.path.join(out, "metadata.json"), "w", encoding="utf-8") as f:
            json.dump(meta, f, indent=2, default=str)

    # simulate

    def grid(self) -> List[GridPoint]:
        points = [
            (float(epsilon), float(f), int(seed))
            for epsilon in self.experiment.epsilons
            for f in self.experiment.shared_fractions
            for seed in self.seeds
        ]
        return list(dict.fromkeys(points))

    def run_point(self, point: GridPoint) -> RunReport:
        epsilon, f, seed = point
        owners = partition(self.load(), self.experiment.owners.shares, seed)
        # the sweep is parallel over grid points, so each point runs serially
        config = self.experiment.protocol(evaluate_all=True).model_copy(update={"workers": 1})
        return run_protocol(owners, epsilon, f, config, seed=seed, console=self.console)

    def simulate(self) -> str:
        """
        Run the protocol over the whole grid and write the aggregate tables.

        Returns:
            str: The output directory.
        """
        started = datetime.now(timezone.utc)
        self.syntax_check()
        out = self.prepare_output("simulate")
        points = self.grid()

        self.console.rule("[bold blue]Protocol Sweep[/bold blue]")
        with ThreadPoolExecutor(max_workers=self.max_threads) as executor:
            futures = [executor.submit(self.run_point, point) for point in points]
            reports: List[RunReport] = rich_as_completed(
                futures, desc="Running grid", console=self.console
            )

        self.console.rule("[cyan]Saving Output[/cyan]")
        self.save_simulation(out, points, reports)
        self.write_metadata(out, "simulate", started, grid_points=len(points))
        self.print_simulation_summary(points, reports)
        self.console.print(f"[green italic]💾 Output saved to {out}[/green italic]")
        return out

    def save_simulation(
        self, out: str, points: Sequence[GridPoint], reports: Sequence[RunReport]
    ) -> None:
        dataset = self.load().name
        aggregate: List[List[Any]] = []
        scores: List[List[Any]] = []
        k_rows: List[List[Any]] = []
        marginal_rows: List[List[Any]] = []

        runs_dir = os.path.join(out, "runs")
        os.makedirs(runs_dir)
        for (epsilon, f, seed), report in zip(points, reports):
            for c in report.candidates:
                m = c.metrics
                aggregate.append(
                    [
                        dataset,
                        c.scored.candidate.kind,
                        f,
                        epsilon,
                        seed,
                        c.scored.candidate.describe(),
                        c.recommended,
                        m.ari,
                        m.silhouette,
                        m.ch,
                        m.homogeneity,
                        m.completeness,
                        m.accuracy_raw,
                        m.accuracy_mapped,
                    ]
                )
            for s in report.recommendation.scored:
                scores.append(
                    [
                        dataset,
                        s.candidate.kind,
                        f,
                        epsilon,
                        seed,
                        s.candidate.describe(),
                        s.silhouette_score,
                        s.ch_index,
                        s.candidate == report.recommendation.best_algorithm,
                    ]
                )
            k_rows.append([epsilon, f, seed, *self.k_estimates(report)])
            marginal_rows.extend([epsilon, f, seed, *row] for row in self.marginals(report))

            tag = _tag(epsilon, f, seed)
            with open(os.path.join(runs_dir, f"{tag}.json"), "w", encoding="utf-8") as fh:
                json.dump(report.to_record(), fh, indent=2, default=str)
            report.final_assignment.to_csv(
                os.path.join(runs_dir, f"{tag}_assignment.csv"), report.clean.ids
            )
            save_noisy(report.combined, os.path.join(runs_dir, f"{tag}_shared.csv"))

        write_csv(os.path.join(out, "aggregate.csv"), AGGREGATE_COLUMNS, aggregate)
        write_csv(os.path.join(out, "server_scores.csv"), SERVER_SCORE_COLUMNS, scores)
        write_csv(os.path.join(out, "k_estimates.csv"), K_ESTIMATE_COLUMNS, k_rows)
        write_csv(os.path.join(out, "marginals.csv"), MARGINAL_COLUMNS, marginal_rows)

    def k_estimates(self, report: RunReport) -> List[Optional[int]]:
        """Elbow k on the clean pooled rows, then silhouette and elbow k on the server's view."""
        selection = self.experiment.selection
        seed = report.provenance["server_seed"]
        restarts = selection.kmeans_restarts
        lo, hi = selection.k_range

        clean = report.clean.rows
        baseline = _k_or_none(elbow_k, clean, (lo, min(hi, len(clean))), seed=seed, n_init=restarts)
        view = server_view(report.combined, selection.server_standardize)
        by_silhouette = _k_or_none(
            silhouette_k, view, (max(lo, 2), min(hi, len(view) - 1)), seed=seed, n_init=restarts
        )
        by_elbow = _k_or_none(elbow_k, view, (lo, min(hi, len(view))), seed=seed, n_init=restarts)
        return [baseline, by_silhouette, by_elbow]

    def marginals(self, report: RunReport) -> List[List[Any]]:
        """Observed, estimated and true state frequencies of the shared rows."""
        combined = report.combined
        edges = {f.name: f.bin_edges for f in combined.schema if f.bin_edges is not None}
        clean = discretize(report.clean, bins=self.experiment.bins, bin_edges=edges)
        shared = np.isin(clean.ids, combined.ids)
        estimates = estimate_marginals(combined)
        rows = []
        for j, feature in enumerate(combined.schema):
            m = feature.state_count or 1
            observed = combined.counts(feature.name) / len(combined)
            true = np.bincount(clean.rows[shared, j].astype(np.int64), minlength=m) / shared.sum()
            for state in range(m):
                rows.append(
                    [feature.name, state, observed[state], estimates[feature.name][state], true[state]]
                )
        return rows

    def print_simulation_summary(
        self, points: Sequence[GridPoint], reports: Sequence[RunReport]
    ) -> None:
        self.console.rule("[bold green]Execution Summary[/bold green]")
        table = Table(title="Server recommendations")
        for column in ("epsilon", "shared", "seed", "algorithm", "params", "ARI"):
            table.add_column(column)
        for (epsilon, f, seed), report in zip(points, reports):
            best = report.recommendation.best_algorithm
            table.add_row(
                f"{epsilon:g}",
                f"{f:g}",
                str(seed),
                best.kind,
                best.describe(),
                "-" if report.metrics.ari is None else f"{report.metrics.ari:.3f}",
            )
        self.console.print(table)

    # select

    def select(self, noisy_csv: str) -> Recommendation:
        """Run the server's selection standalone on a saved noisy CSV."""
        started = datetime.now(timezone.utc)
        self.console.rule("[cyan]Loading Noisy Sample[/cyan]")
        noisy = load_noisy(noisy_csv)
        self.console.print(
            f"Loaded [bold]{noisy_csv}[/bold] ({len(noisy)} rows, epsilon = {noisy.epsilon})"
        )

        self.console.rule("[bold blue]Server Selection[/bold blue]")
        recommendation = server_recommend(
            noisy,
            self.experiment.selection,
            seed=self.seeds[0],
            workers=self.max_threads,
            console=self.console,
        )

        stem = os.path.splitext(os.path.basename(noisy_csv))[0]
        out = self.prepare_output(os.path.join("select", stem))
        payload = {
            "source": os.path.abspath(noisy_csv),
            "rows": len(noisy),
            "epsilon": noisy.epsilon,
            "recommendation": recommendation.to_payload(),
            "scored": [s.model_dump(mode="json") for s in recommendation.scored],
        }
        with open(os.path.join(out, "recommendation.json"), "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2)
        self.write_metadata(out, "select", started)
        self.print_recommendation(recommendation)
        self.console.print(f"[green italic]💾 Output saved to {out}[/green italic]")
        return recommendation

    def print_recommendation(self, recommendation: Recommendation) -> None:
        table = Table(title="Candidate scores")
        for column in ("algorithm", "params", "silhouette", "CH", "selected"):
            table.add_column(column)
        for s in recommendation.scored:
            chosen = s.candidate == recommendation.best_algorithm
            table.add_row(
                s.candidate.kind,
                s.candidate.describe(),
                "-" if s.silhouette_score is None else f"{s.silhouette_score:.4f}",
                "-" if s.ch_index is None else f"{s.ch_index:.2f}",
                "[bold green]yes[/bold green]" if chosen else "",
            )
        self.console.print(table)
        best = recommendation.best_algorithm
        self.console.print(
            f"[bold green]Recommended: {best.kind} ({best.describe()})[/bold green] "
            f"silhouette threshold {recommendation.silhouette_threshold:.4f}"
        )

    # attack

    def attack(self) -> AttackCurve:
        """Membership-inference power over the budget grid."""
        started = datetime.now(timezone.utc)
        population = self.load()
        attack = self.experiment.attack
        if attack.case_size + attack.control_size > len(population):
            raise ConfigError(
                f"case_size + control_size = {attack.case_size + attack.control_size} "
                f"exceeds the {len(population)} rows of the dataset"
            )
        out = self.prepare_output("attack")

        self.console.rule("[bold blue]Membership Inference[/bold blue]")
        curve = attack_power(
            lambda seed: population,
            self.experiment.epsilons,
            attack.case_size,
            attack.control_size,
            target_fpr=attack.target_fpr,
            seeds=self.seeds,
            bins=self.experiment.bins,
            workers=self.max_threads,
            console=self.console,
        )

        self.console.rule("[cyan]Saving Output[/cyan]")
        curve.to_csv(os.path.join(out, "attack_curve.csv"))
        self.write_metadata(out, "attack", started)
        self.print_attack_summary(curve)
        self.console.print(f"[green italic]💾 Output saved to {out}[/green italic]")
        return curve

    def print_attack_summary(self, curve: AttackCurve) -> None:
        self.console.rule("[bold green]Execution Summary[/bold green]")
        table = Table(title=f"Attack power at target FPR {curve.target_fpr:g}")
        for column in ("epsilon", "tau", "TPR", "FPR", "runs"):
            table.add_column(column)
        for e in curve.entries:
            table.add_row(f"{e.epsilon:g}", f"{e.tau:.4f}", f"{e.tpr:.3f}", f"{e.fpr:.3f}", str(e.runs))
        self.console.print(table)
        self.console.print(
            f"Trend: [bold]{curve.trend()}[/bold], TPR min {min(curve.tprs):.3f}, "
            f"max {max(curve.tprs):.3f}"
        )
        for low, high in curve.inversions():
            self.console.log(
                f"[yellow]Warning: TPR drops between epsilon {low:g} and {high:g}[/yellow]"
            )

    # gapviz

    def gap_clusters(self, population: Dataset) -> Tuple[int, int]:
        if population.labels is None:
            raise ConfigError("gapviz needs a dataset with ground-truth labels")
        _, first = np.unique(population.labels, return_index=True)
        present = [int(v) for v in population.labels[np.sort(first)]]
        if len(present) < 2:
            raise ConfigError(f"gapviz needs at least 2 clusters, the dataset has {len(present)}")
        chosen = self.experiment.gapviz.clusters or present[:2]
        missing = [c for c in chosen if c not in present]
        if missing:
            raise ConfigError(f"gapviz clusters {missing} are not labels of the dataset")
        if chosen[0] == chosen[1]:
            raise ConfigError("gapviz needs two different clusters")
        return chosen[0], chosen[1]

    def gapviz(self) -> str:
        """
        Paired original and noisy coordinates of two clusters, one CSV per
        budget, plus a summary of how well the gap between them survives.
        """
        started = datetime.now(timezone.utc)
        population = self.load()
        clusters = self.gap_clusters(population)
        fx, fy = self.experiment.gapviz.features
        if max(fx, fy) >= population.d:
            raise ConfigError(
                f"gapviz features {[fx, fy]} exceed the {population.d} features of the dataset"
            )
        pair = population.subset(np.flatnonzero(np.isin(population.labels, clusters)))
        out = self.prepare_output("gapviz")

        seed = self.seeds[0]
        bins = self.experiment.bins
        edges = fit_bin_edges([pair], bins)
        discrete = discretize(pair, bins=bins, bin_edges=edges)
        original = pair.decoded()
        truth = ClusterAssignment.from_labels(pair.labels)
        widths = [e[1] - e[0] for e in edges.values()]
        k_hi = self.experiment.selection.k_range[1]
        restarts = self.experiment.selection.kmeans_restarts
        clean_k = _k_or_none(elbow_k, original, (1, min(k_hi, len(pair))), seed=seed, n_init=restarts)

        self.console.rule("[bold blue]Gap Preservation[/bold blue]")
        summary = []
        for epsilon in dict.fromkeys(float(e) for e in self.experiment.epsilons):
            noisy = perturb_dataset(discrete.without_labels(), epsilon, seed).decoded()
            write_csv(
                os.path.join(out, f"gap_{_tag(epsilon)}.csv"),
                GAP_COLUMNS,
                (
                    [rid, o[fx], o[fy], z[fx], z[fy], label]
                    for rid, o, z, label in zip(pair.ids, original, noisy, pair.labels)
                ),
            )
            sample = server_view(
                owner_prepare(pair, epsilon, 0.1, seed, bins=bins, bin_edges=edges).shared,
                self.experiment.selection.server_standardize,
            )
            summary.append(
                [
                    epsilon,
                    self._silhouette_or_none(original, truth),
                    self._silhouette_or_none(noisy, truth),
                    float(np.linalg.norm(noisy - original, axis=1).mean()),
                    float(np.mean(widths)) if widths else None,
                    clean_k,
                    _k_or_none(elbow_k, sample, (1, min(k_hi, len(sample))), seed=seed, n_init=restarts),
                ]
            )
            self.console.print(f"epsilon {epsilon:g}: noisy silhouette {cell(summary[-1][2])}")

        write_csv(os.path.join(out, "gap_summary.csv"), GAP_SUMMARY_COLUMNS, summary)
        self.write_metadata(out, "gapviz", started, clusters=list(clusters), features=[fx, fy])
        self.console.print(f"[green italic]💾 Output saved to {out}[/green italic]")
        return out

    @staticmethod
    def _silhouette_or_none(data: np.ndarray, assignment: ClusterAssignment) -> Optional[float]:
        try:
            return silhouette(data, assignment)
        except UndefinedMetricError:
            return None
