#!/usr/bin/env python3
"""
Evaluation Kit - Metrics, Significance and Reporting
=====================================================

TREC-style evaluation of entity rankings.

Features:
- Qrels and run file I/O (``qid 0 entity grade`` / ``qid Q0 entity rank score tag``)
- Per-query AP at a ranking cutoff and P@k through ir_measures (trec_eval semantics)
- Two-sided sign-flip permutation test (exhaustive for small query sets,
  seeded Monte-Carlo otherwise)
- Win/tie/loss counts and relative improvements
- Per-group evaluation and multi-system comparison tables (text + JSON)
- Feature-weight distribution over FSDM / ENT / Others
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import ir_measures
import numpy as np

from core.errors import EvaluationError, MalformedInputError
from core.utils import write_text_atomic


logger = logging.getLogger(__name__)

Qrels = Dict[str, Dict[str, int]]

ALL_GROUP = 'ALL'
WEIGHT_GROUPS = ('FSDM', 'ENT', 'Others')
DEFAULT_METRICS = ('MAP', 'P@10', 'P@20')
_CHUNK = 10000
_TIE = 1e-12


@dataclass
class RunResult:
    """query id -> ranked (entity, score) list"""

    rankings: Dict[str, List[Tuple[str, float]]] = field(default_factory=dict)

    def __post_init__(self):
        for qid, ranking in self.rankings.items():
            entities = [e for e, _ in ranking]
            if len(set(entities)) != len(entities):
                raise EvaluationError(f"run lists an entity twice for query {qid}")

    def queries(self) -> List[str]:
        return sorted(self.rankings)

    def ranked_entities(self, qid: str) -> List[str]:
        return [e for e, _ in self.rankings.get(qid, [])]

    def __len__(self) -> int:
        return len(self.rankings)


# -- file formats -----------------------------------------------------------

def load_qrels(path: Path) -> Qrels:
    """``qid 0 entity grade``, whitespace separated"""
    qrels: Qrels = {}
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            parts = line.split()
            if not parts or parts[0].startswith('#'):
                continue
            if len(parts) != 4:
                raise MalformedInputError("expected 'qid 0 entity grade'", path=path, line_no=line_no)
            try:
                grade = int(parts[3])
            except ValueError as e:
                raise MalformedInputError(f"grade {parts[3]!r} is not an integer",
                                          path=path, line_no=line_no) from e
            if grade < 0:
                raise MalformedInputError(f"negative grade {grade}", path=path, line_no=line_no)
            qrels.setdefault(parts[0], {})[parts[2]] = grade
    logger.info(f"Loaded qrels for {len(qrels)} queries from {path}")
    return qrels


def load_query_groups(path: Optional[Path]) -> Dict[str, str]:
    """``qid<TAB>group``; missing file means no groups"""
    groups: Dict[str, str] = {}
    if path is None:
        return groups
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip('\r\n')
            if not line.strip() or line.startswith('#'):
                continue
            parts = line.split('\t')
            if len(parts) != 2:
                raise MalformedInputError("expected 'qid<TAB>group'", path=path, line_no=line_no)
            groups[parts[0].strip()] = parts[1].strip()
    return groups


def write_run(run: RunResult, path: Path, tag: str = 'erank') -> Path:
    """TREC run format; scores to 6 decimals, ranks from 1. The tag carries provenance."""
    lines = []
    for qid in run.queries():
        for rank, (entity_id, score) in enumerate(run.rankings[qid], start=1):
            lines.append(f"{qid} Q0 {entity_id} {rank} {score:.6f} {tag}")
    return write_text_atomic(path, ''.join(line + '\n' for line in lines))


def read_run(path: Path) -> RunResult:
    entries: Dict[str, List[Tuple[int, str, float]]] = {}
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            parts = line.split()
            if not parts or parts[0].startswith('#'):
                continue
            if len(parts) != 6:
                raise MalformedInputError("expected 'qid Q0 entity rank score tag'",
                                          path=path, line_no=line_no)
            try:
                entries.setdefault(parts[0], []).append((int(parts[3]), parts[2], float(parts[4])))
            except ValueError as e:
                raise MalformedInputError(f"bad run line: {e}", path=path, line_no=line_no) from e
    return RunResult({qid: [(e, s) for _, e, s in sorted(rows)] for qid, rows in entries.items()})


# -- metrics ----------------------------------------------------------------

def measure_for(metric: str, cutoff: int = 100):
    """'MAP' / 'AP' -> AP@cutoff; 'P@k' -> P@k, as ir_measures measures"""
    name = metric.upper()
    if name in ('MAP', 'AP'):
        return ir_measures.AP @ cutoff
    if name.startswith('P@'):
        try:
            k = int(name[2:])
        except ValueError as e:
            raise EvaluationError(f"bad precision cutoff in {metric!r}") from e
        if k < 1:
            raise EvaluationError(f"precision cutoff must be >= 1, got {k}")
        return ir_measures.P @ k
    raise EvaluationError(f"unknown metric {metric!r}")


def _rank_scores(ranking: Sequence[str]) -> Dict[str, float]:
    # strictly decreasing, so the evaluator keeps the run's own order and tie-breaks
    return {entity_id: float(len(ranking) - i) for i, entity_id in enumerate(ranking)}


def per_query_metrics(run: RunResult, qrels: Qrels, metrics: Sequence[str] = DEFAULT_METRICS,
                      cutoff: int = 100) -> Dict[str, Dict[str, float]]:
    """
    metric -> query id -> value for every judged query of the run

    Values come from ``ir_measures`` (trec_eval semantics: AP normalised by all
    relevant entities, P@k divided by k). Queries without a relevant judgment or
    without retrieved entities score 0; unjudged queries are skipped with a warning.
    """
    measures: Dict[object, List[str]] = {}
    for metric in metrics:
        measures.setdefault(measure_for(metric, cutoff), []).append(metric)

    judged = []
    for qid in run.queries():
        if qid not in qrels:
            logger.warning(f"Query {qid} has no judgments; excluded from evaluation")
            continue
        judged.append(qid)
    values = {metric: {qid: 0.0 for qid in judged} for metric in metrics}

    eval_qrels = {qid: dict(qrels[qid]) for qid in judged
                  if any(grade > 0 for grade in qrels[qid].values()) and run.ranked_entities(qid)}
    if eval_qrels:
        eval_run = {qid: _rank_scores(run.ranked_entities(qid)) for qid in eval_qrels}
        for result in ir_measures.iter_calc(list(measures), eval_qrels, eval_run):
            for metric in measures[result.measure]:
                values[metric][result.query_id] = float(result.value)
    return values


def per_query_scores(run: RunResult, qrels: Qrels, metric: str = 'MAP',
                     cutoff: int = 100) -> Dict[str, float]:
    """One metric per judged query"""
    return per_query_metrics(run, qrels, [metric], cutoff)[metric]


def metric_value(metric: str, ranking: Sequence[str], relevant: Mapping[str, int],
                 cutoff: int = 100) -> float:
    """Metric of a single ranking against its judgments"""
    run = RunResult({'q': [(entity_id, 0.0) for entity_id in ranking]})
    return per_query_scores(run, {'q': dict(relevant)}, metric, cutoff)['q']


def average_precision(ranking: Sequence[str], relevant: Mapping[str, int], cutoff: int = 100) -> float:
    return metric_value('MAP', ranking, relevant, cutoff)


def precision_at_k(ranking: Sequence[str], relevant: Mapping[str, int], k: int) -> float:
    if k < 1:
        raise EvaluationError(f"precision cutoff must be >= 1, got {k}")
    return metric_value(f'P@{k}', ranking, relevant)


@dataclass
class EvaluationReport:
    per_query: Dict[str, Dict[str, float]]
    summary: Dict[str, Dict[str, float]]
    counts: Dict[str, int]

    def to_dict(self) -> Dict:
        return {'summary': self.summary, 'counts': self.counts, 'per_query': self.per_query}


def evaluate_run(run: RunResult, qrels: Qrels, groups: Optional[Mapping[str, str]] = None,
                 metrics: Sequence[str] = DEFAULT_METRICS, cutoff: int = 100) -> EvaluationReport:
    """Per-query metrics and their means over ALL and every query group"""
    per_metric = per_query_metrics(run, qrels, metrics, cutoff)
    qids = sorted(per_metric[metrics[0]]) if metrics else []
    per_query = {qid: {m: per_metric[m][qid] for m in metrics} for qid in qids}

    members: Dict[str, List[str]] = {ALL_GROUP: qids}
    for qid in qids:
        group = (groups or {}).get(qid)
        if group:
            members.setdefault(group, []).append(qid)

    summary = {}
    counts = {}
    for group, group_qids in members.items():
        counts[group] = len(group_qids)
        summary[group] = {m: (float(np.mean([per_query[q][m] for q in group_qids])) if group_qids else 0.0)
                          for m in metrics}
    return EvaluationReport(per_query=per_query, summary=summary, counts=counts)


# -- significance -----------------------------------------------------------

def _shared(a: Mapping[str, float], b: Mapping[str, float]) -> List[str]:
    shared = sorted(set(a) & set(b))
    if not shared:
        raise EvaluationError("the two runs share no evaluated queries")
    return shared


def paired_permutation_test(differences: Sequence[float], iterations: int = 100000, seed: int = 0,
                            exhaustive_limit: int = 20) -> float:
    """Two-sided sign-flip test on the mean of per-query differences"""
    diffs = np.asarray(differences, dtype=np.float64)
    n = diffs.shape[0]
    if n == 0:
        raise EvaluationError("permutation test needs at least one query")
    observed = abs(float(diffs.mean()))

    if n <= exhaustive_limit:
        total = 1 << n
        bits = np.arange(n, dtype=np.int64)
        count = 0
        for start in range(0, total, _CHUNK):
            patterns = np.arange(start, min(total, start + _CHUNK), dtype=np.int64)
            signs = 1.0 - 2.0 * ((patterns[:, None] >> bits) & 1)
            means = np.abs(signs @ diffs) / n
            count += int(np.count_nonzero(means >= observed - _TIE))
        return count / total

    if iterations < 1:
        raise EvaluationError(f"iterations must be >= 1, got {iterations}")
    # one child stream per chunk keeps results independent of chunk scheduling
    n_chunks = (iterations + _CHUNK - 1) // _CHUNK
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    count = 0
    for chunk, child in enumerate(children):
        size = min(_CHUNK, iterations - chunk * _CHUNK)
        rng = np.random.default_rng(child)
        signs = rng.choice(np.array([-1.0, 1.0]), size=(size, n))
        means = np.abs(signs @ diffs) / n
        count += int(np.count_nonzero(means >= observed - _TIE))
    return (1 + count) / (1 + iterations)


def permutation_test(run_a: RunResult, run_b: RunResult, qrels: Qrels, metric: str = 'MAP',
                     iterations: int = 100000, seed: int = 0, exhaustive_limit: int = 20,
                     cutoff: int = 100) -> float:
    scores_a = per_query_scores(run_a, qrels, metric, cutoff)
    scores_b = per_query_scores(run_b, qrels, metric, cutoff)
    shared = _shared(scores_a, scores_b)
    diffs = [scores_a[q] - scores_b[q] for q in shared]
    return paired_permutation_test(diffs, iterations, seed, exhaustive_limit)


def wtl_from_scores(scores_a: Mapping[str, float], scores_b: Mapping[str, float],
                    epsilon: float = 1e-6) -> Tuple[int, int, int]:
    wins = ties = losses = 0
    for qid in _shared(scores_a, scores_b):
        diff = scores_a[qid] - scores_b[qid]
        if abs(diff) <= epsilon:
            ties += 1
        elif diff > 0:
            wins += 1
        else:
            losses += 1
    return wins, ties, losses


def wtl_counts(run_a: RunResult, run_b: RunResult, qrels: Qrels, metric: str = 'MAP',
               epsilon: float = 1e-6, cutoff: int = 100) -> Tuple[int, int, int]:
    """Per-query wins/ties/losses of A against B"""
    return wtl_from_scores(per_query_scores(run_a, qrels, metric, cutoff),
                           per_query_scores(run_b, qrels, metric, cutoff), epsilon)


def format_wtl(counts: Tuple[int, int, int]) -> str:
    return '/'.join(str(c) for c in counts)


def relative_improvement(base: float, system: float) -> float:
    if base == 0:
        raise EvaluationError("relative improvement is undefined for a zero baseline")
    return 100.0 * (system - base) / base


def format_relative(value: float) -> str:
    return f"{value:+.2f}%"


# -- weight analysis --------------------------------------------------------

def weight_distribution(model, groups: Mapping[str, str]) -> Dict[str, float]:
    """Share of total absolute weight per feature group, in percent"""
    names = list(model.feature_names)
    weights = [float(w) for w in model.weights]
    missing = [n for n in names if n not in groups]
    if missing:
        raise EvaluationError(f"features without a weight group: {missing}")
    total = sum(abs(w) for w in weights)
    if total == 0:
        raise EvaluationError("weight distribution is undefined for an all-zero model")

    sums = {g: 0.0 for g in WEIGHT_GROUPS}
    for name, weight in zip(names, weights):
        sums.setdefault(groups[name], 0.0)
        sums[groups[name]] += abs(weight)
    return {g: 100.0 * s / total for g, s in sums.items()}


def average_weight_distribution(models: Iterable, groups: Mapping[str, str]) -> Dict[str, float]:
    """Mean of the per-model distributions (e.g. over cross-validation folds)"""
    distributions = [weight_distribution(m, groups) for m in models]
    if not distributions:
        raise EvaluationError("no models to analyse")
    keys = sorted({k for d in distributions for k in d}, key=lambda g: (g not in WEIGHT_GROUPS, g))
    return {k: float(np.mean([d.get(k, 0.0) for d in distributions])) for k in keys}


# -- system comparison ------------------------------------------------------

@dataclass
class ComparisonRow:
    system: str
    metrics: Dict[str, float]
    relative: Dict[str, Optional[float]]
    markers: Dict[str, str]
    p_values: Dict[str, Dict[str, float]]
    wtl: Optional[Tuple[int, int, int]]


@dataclass
class ComparisonReport:
    metrics: List[str]
    groups: Dict[str, List[ComparisonRow]]
    counts: Dict[str, int]
    alpha: float

    def to_dict(self) -> Dict:
        return {
            'alpha': self.alpha,
            'metrics': self.metrics,
            'groups': {
                group: {
                    'queries': self.counts[group],
                    'systems': [{
                        'system': row.system,
                        'metrics': row.metrics,
                        'relative': row.relative,
                        'markers': row.markers,
                        'p_values': row.p_values,
                        'wtl': format_wtl(row.wtl) if row.wtl else None,
                    } for row in rows],
                }
                for group, rows in self.groups.items()
            },
        }


def compare_systems(systems: Sequence[Tuple[str, RunResult]], qrels: Qrels,
                    groups: Optional[Mapping[str, str]] = None,
                    metrics: Sequence[str] = DEFAULT_METRICS, cutoff: int = 100,
                    iterations: int = 100000, seed: int = 0, exhaustive_limit: int = 20,
                    alpha: float = 0.05, tie_epsilon: float = 1e-6) -> ComparisonReport:
    """Compare systems against the first (dagger) and the second (double dagger)"""
    if not systems:
        raise EvaluationError("no systems to compare")
    scores = {name: per_query_metrics(run, qrels, metrics, cutoff)
              for name, run in systems}
    names = [name for name, _ in systems]

    all_qids = sorted(set.intersection(*(set(scores[n][metrics[0]]) for n in names)))
    if not all_qids:
        raise EvaluationError("systems share no evaluated queries")
    members: Dict[str, List[str]] = {ALL_GROUP: all_qids}
    for qid in all_qids:
        group = (groups or {}).get(qid)
        if group:
            members.setdefault(group, []).append(qid)

    references = [(names[0], '†')]
    if len(names) > 1:
        references.append((names[1], '‡'))

    report_groups: Dict[str, List[ComparisonRow]] = {}
    for group, qids in members.items():
        subset = {n: {m: {q: scores[n][m][q] for q in qids} for m in metrics} for n in names}
        means = {n: {m: float(np.mean(list(subset[n][m].values()))) for m in metrics} for n in names}
        rows = []
        for name in names:
            relative: Dict[str, Optional[float]] = {}
            markers: Dict[str, str] = {}
            p_values: Dict[str, Dict[str, float]] = {}
            for m in metrics:
                base = means[names[0]][m]
                relative[m] = None if name == names[0] or base == 0 else \
                    relative_improvement(base, means[name][m])
                marks = ''
                for ref, symbol in references:
                    if ref == name:
                        continue
                    diffs = [subset[name][m][q] - subset[ref][m][q] for q in qids]
                    p = paired_permutation_test(diffs, iterations, seed, exhaustive_limit)
                    p_values.setdefault(m, {})[ref] = p
                    if p < alpha:
                        marks += symbol
                markers[m] = marks
            wtl = None
            if name != names[0]:
                wtl = wtl_from_scores(subset[name][metrics[0]], subset[names[0]][metrics[0]], tie_epsilon)
            rows.append(ComparisonRow(name, means[name], relative, markers, p_values, wtl))
        report_groups[group] = rows

    return ComparisonReport(metrics=list(metrics), groups=report_groups,
                            counts={g: len(q) for g, q in members.items()}, alpha=alpha)


def render_table(report: ComparisonReport) -> str:
    """Aligned text table: metric, relative %, significance markers, W/T/L"""
    lines = []
    for group, rows in report.groups.items():
        header = ['System']
        for m in report.metrics:
            header += [m, '%']
        header.append('W/T/L')
        table = [header]
        for row in rows:
            cells = [row.system]
            for m in report.metrics:
                cells.append(f"{row.metrics[m]:.4f}{row.markers.get(m, '')}")
                rel = row.relative.get(m)
                cells.append(format_relative(rel) if rel is not None else '-')
            cells.append(format_wtl(row.wtl) if row.wtl else '-')
            table.append(cells)
        widths = [max(len(r[i]) for r in table) for i in range(len(header))]
        lines.append(f"{group} ({report.counts[group]} queries)")
        for r in table:
            lines.append('  '.join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
        lines.append('')
    lines.append(f"† / ‡: significant against the first / second system "
                 f"(permutation test, p < {report.alpha})")
    return '\n'.join(lines) + '\n'


def write_report(report: ComparisonReport, text_path: Path, json_path: Path,
                 config_hash: str = None) -> Tuple[Path, Path]:
    header = f"# erank config={config_hash}\n" if config_hash else ''
    write_text_atomic(text_path, header + render_table(report))
    payload = dict(report.to_dict(), config_hash=config_hash)
    write_text_atomic(json_path, json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + '\n')
    return Path(text_path), Path(json_path)
