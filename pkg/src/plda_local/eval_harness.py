"""Trial construction, EER computation, strategy comparison, and sweeps.

Strategies mirror the training regimes under comparison: GT (global labels),
LT (local labels), Pool (disjoint union of both), and a cosine baseline that
skips PLDA training entirely. Every comparison scores one fixed trial set so
differences are purely training-side.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import plda, preprocess
from .data_model import (
    Dataset,
    build_global_view,
    build_local_view,
    build_pooled_view,
    format_float,
    merge_datasets,
)
from .plda import TrainConfig, train_em


class EvalError(Exception):
    pass


class TrialSet:
    """Ordered (model_id, test_utt_id) trials with target/nontarget keys.

    Stored as index arrays into the model and test id lists so that
    million-trial cross products stay cheap.
    """

    def __init__(self, model_ids, test_utt_ids, model_idx, test_idx, target):
        self.model_ids = list(model_ids)
        self.test_utt_ids = list(test_utt_ids)
        self.model_idx = np.asarray(model_idx, dtype=np.int64)
        self.test_idx = np.asarray(test_idx, dtype=np.int64)
        self.target = np.asarray(target, dtype=bool)
        if not (len(self.model_idx) == len(self.test_idx) == len(self.target)):
            raise EvalError("trial arrays have inconsistent lengths")
        pair_codes = self.model_idx * len(self.test_utt_ids) + self.test_idx
        if len(np.unique(pair_codes)) != len(pair_codes):
            raise EvalError("duplicate trial pairs")

    def __len__(self):
        return len(self.model_idx)

    @property
    def n_target(self) -> int:
        return int(np.count_nonzero(self.target))

    @property
    def n_nontarget(self) -> int:
        return len(self) - self.n_target

    def iter_trials(self):
        for m, t in zip(self.model_idx, self.test_idx):
            yield self.model_ids[m], self.test_utt_ids[t]

    def is_target(self, model_id: str, test_utt_id: str) -> bool:
        m = self.model_ids.index(model_id)
        t = self.test_utt_ids.index(test_utt_id)
        hit = np.nonzero((self.model_idx == m) & (self.test_idx == t))[0]
        if not len(hit):
            raise EvalError(f"no trial ({model_id}, {test_utt_id})")
        return bool(self.target[hit[0]])

    @classmethod
    def from_pairs(cls, trials, key) -> "TrialSet":
        """Build from an explicit trial list and a (model, utt) -> bool key."""
        model_ids, test_ids = [], []
        mpos, tpos = {}, {}
        mi, ti, tg = [], [], []
        for m, t in trials:
            if m not in mpos:
                mpos[m] = len(model_ids)
                model_ids.append(m)
            if t not in tpos:
                tpos[t] = len(test_ids)
                test_ids.append(t)
            if (m, t) not in key:
                raise EvalError(f"trial ({m}, {t}) has no key entry")
            mi.append(mpos[m])
            ti.append(tpos[t])
            tg.append(bool(key[(m, t)]))
        return cls(model_ids, test_ids, mi, ti, tg)


def generate_trials(enroll_ids, test: Dataset, key_source: dict) -> TrialSet:
    """Full cross product of enroll models and test utterances, model-major.

    A trial is target iff the test utterance's true speaker (key_source)
    equals the enroll model's speaker id.
    """
    model_ids = list(enroll_ids)
    test_ids = [r.utt_id for r in test.records]
    for tid in test_ids:
        if tid not in key_source:
            raise EvalError(f"test utterance {tid!r} has no true-speaker key")
    spk = np.array([key_source[t] for t in test_ids])
    M, T = len(model_ids), len(test_ids)
    model_idx = np.repeat(np.arange(M, dtype=np.int64), T)
    test_idx = np.tile(np.arange(T, dtype=np.int64), M)
    target = (np.asarray(model_ids)[:, None] == spk[None, :]).ravel()
    return TrialSet(model_ids, test_ids, model_idx, test_idx, target)


def det_curve(target_scores, nontarget_scores):
    """(thresholds, FAR, FRR) staircase over all observed score values.

    FAR(t) = fraction of nontarget scores >= t (score at threshold accepts);
    FRR(t) = fraction of target scores < t. Sentinel thresholds below and
    above all scores bracket the curve at (1, 0) and (0, 1).
    """
    ts = np.sort(np.asarray(target_scores, dtype=np.float64))
    ns = np.sort(np.asarray(nontarget_scores, dtype=np.float64))
    if len(ts) == 0 or len(ns) == 0:
        raise EvalError("both score lists must be non-empty")
    if not (np.all(np.isfinite(ts)) and np.all(np.isfinite(ns))):
        raise EvalError("non-finite score")
    uniq = np.unique(np.concatenate([ts, ns]))
    thresholds = np.concatenate([[uniq[0] - 1.0], uniq, [uniq[-1] + 1.0]])
    far = 1.0 - np.searchsorted(ns, thresholds, side="left") / len(ns)
    frr = np.searchsorted(ts, thresholds, side="left") / len(ts)
    return thresholds, far, frr


def compute_eer(target_scores, nontarget_scores):
    """EER and threshold via linear interpolation at the FAR/FRR crossing."""
    thresholds, far, frr = det_curve(target_scores, nontarget_scores)
    diff = far - frr  # monotone non-increasing, from +1 to -1
    k = int(np.nonzero(diff >= 0)[0][-1])
    denom = diff[k] - diff[k + 1]
    alpha = 0.0 if denom == 0 else diff[k] / denom
    eer = far[k] + alpha * (far[k + 1] - far[k])
    thr = thresholds[k] + alpha * (thresholds[k + 1] - thresholds[k])
    return float(eer), float(thr)


@dataclass(frozen=True)
class EvalReport:
    eer: float
    threshold: float
    det_points: np.ndarray  # (K, 2) columns (false-alarm rate, miss rate)
    n_target: int
    n_nontarget: int
    scores_path: str | None = None


@dataclass(frozen=True)
class StrategyConfig:
    latent_dim: int
    iterations: int
    seed: int
    whiten: bool = True
    min_class_size: int = 1
    loglik_tol: float = 1e-7
    threads: int = 1

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            latent_dim=self.latent_dim,
            iterations=self.iterations,
            seed=self.seed,
            min_class_size=self.min_class_size,
            loglik_tol=self.loglik_tol,
        )


STRATEGIES = ("cosine", "GT", "LT", "Pool")


def _training_material(strategy, global_data, local_data):
    if strategy == "GT":
        if global_data is None:
            raise EvalError("GT strategy needs globally labeled data")
        return global_data, build_global_view(global_data)
    if strategy == "LT":
        if local_data is None:
            raise EvalError("LT strategy needs locally labeled data")
        return local_data, build_local_view(local_data)
    if strategy == "Pool":
        if global_data is None or local_data is None:
            raise EvalError("Pool strategy needs both datasets")
        view = build_pooled_view(
            build_global_view(global_data), build_local_view(local_data)
        )
        return merge_datasets(global_data, local_data), view
    if strategy == "cosine":
        if global_data is not None and local_data is not None:
            return merge_datasets(global_data, local_data), None
        data = global_data if global_data is not None else local_data
        if data is None:
            raise EvalError("cosine strategy needs at least one dataset")
        return data, None
    raise EvalError(f"unknown strategy {strategy!r}")


def _cosine_scores(pp, eval_enroll, trials, test_vecs):
    enroll_dirs = {}
    for mid, recs in eval_enroll.items():
        normed = pp.apply(np.stack([r.vector for r in recs]))
        mean = normed.mean(axis=0)
        enroll_dirs[mid] = mean / np.linalg.norm(mean)
    E = np.stack([enroll_dirs[m] for m in trials.model_ids])
    T = np.stack([test_vecs[t] for t in trials.test_utt_ids])
    full = E @ T.T
    return full[trials.model_idx, trials.test_idx]


def run_strategy(strategy, global_data, local_data, eval_enroll, eval_test,
                 cfg: StrategyConfig, scores_path=None) -> EvalReport:
    """Train under one strategy and evaluate on the enroll/test split.

    eval_enroll maps speaker id to its enrollment records; eval_test records
    carry true speakers for the trial key. Returns the EvalReport; per-trial
    scores are written to scores_path when given.
    """
    train_data, view = _training_material(strategy, global_data, local_data)
    pp = preprocess.fit(train_data.vectors(), whiten=cfg.whiten)

    key_source = {r.utt_id: r.global_spk for r in eval_test.records}
    trials = generate_trials(sorted(eval_enroll), eval_test, key_source)
    test_vecs = {r.utt_id: pp.apply(r.vector) for r in eval_test.records}

    if strategy == "cosine":
        scores = _cosine_scores(pp, eval_enroll, trials, test_vecs)
    else:
        model, _ = train_em(train_data, view, pp, cfg.train_config())
        enroll_vecs = {
            mid: pp.apply(np.stack([r.vector for r in recs]))
            for mid, recs in eval_enroll.items()
        }
        scores = plda.score_trialset(
            model, enroll_vecs, trials, test_vecs, threads=cfg.threads
        )

    if scores_path is not None:
        write_scores(zip(trials.iter_trials(), scores), scores_path)
    eer, thr = compute_eer(scores[trials.target], scores[~trials.target])
    _, far, frr = det_curve(scores[trials.target], scores[~trials.target])
    return EvalReport(
        eer=eer,
        threshold=thr,
        det_points=np.column_stack([far, frr]),
        n_target=trials.n_target,
        n_nontarget=trials.n_nontarget,
        scores_path=None if scores_path is None else str(scores_path),
    )


@dataclass(frozen=True)
class SweepSpec:
    axis_global: tuple[int, ...]
    axis_local: tuple[int, ...]
    repeats: int
    base_seed: int

    def __post_init__(self):
        if any(g < 0 for g in self.axis_global) or any(l < 0 for l in self.axis_local):
            raise EvalError("axis values must be non-negative")
        if self.repeats < 1:
            raise EvalError("repeats must be >= 1")


@dataclass(frozen=True)
class SweepGrid:
    axis_global: tuple[int, ...]
    axis_local: tuple[int, ...]
    repeats: int
    cells: dict = field(default_factory=dict)  # (g, l) -> per-seed EER array

    def mean(self, g: int, l: int) -> float:
        return float(np.mean(self.cells[(g, l)]))

    def std(self, g: int, l: int) -> float:
        return float(np.std(self.cells[(g, l)]))


def run_sweep(spec: SweepSpec, global_data, local_data, eval_enroll, eval_test,
              cfg: StrategyConfig) -> SweepGrid:
    """Grid of pooled trainings over (global speaker count, local slot count).

    Each cell subsamples whole classes (never utterances within a class),
    trains, and scores the one fixed TrialSet. g=0 is pure local training,
    l=0 pure global; (0, 0) is rejected. A cell that cannot train raises.
    """
    g_view = build_global_view(global_data) if global_data is not None else None
    l_view = build_local_view(local_data) if local_data is not None else None
    g_classes = sorted(g_view.classes) if g_view else []
    l_classes = sorted(l_view.classes) if l_view else []

    key_source = {r.utt_id: r.global_spk for r in eval_test.records}
    trials = generate_trials(sorted(eval_enroll), eval_test, key_source)

    cells = {}
    for g in spec.axis_global:
        for l in spec.axis_local:
            if g == 0 and l == 0:
                raise EvalError("cell (0, 0) has no training data")
            if g > len(g_classes):
                raise EvalError(f"cell asks for {g} global speakers, have {len(g_classes)}")
            if l > len(l_classes):
                raise EvalError(f"cell asks for {l} local slots, have {len(l_classes)}")
            eers = []
            for rep in range(spec.repeats):
                seed = spec.base_seed + rep
                rng = np.random.default_rng([seed, g, l])
                eers.append(
                    _sweep_cell(
                        rng, g, l, g_classes, l_classes, g_view, l_view,
                        global_data, local_data, eval_enroll, eval_test,
                        trials, key_source, cfg, seed,
                    )
                )
            cells[(g, l)] = np.array(eers)
    return SweepGrid(
        axis_global=tuple(spec.axis_global),
        axis_local=tuple(spec.axis_local),
        repeats=spec.repeats,
        cells=cells,
    )


def _sweep_cell(rng, g, l, g_classes, l_classes, g_view, l_view,
                global_data, local_data, eval_enroll, eval_test,
                trials, key_source, cfg, seed):
    from .data_model import LabelView

    parts = []
    if g > 0:
        chosen = [g_classes[i] for i in rng.choice(len(g_classes), size=g, replace=False)]
        sub = LabelView("global", {c: g_view.classes[c] for c in chosen})
        utts = [u for c in chosen for u in g_view.classes[c]]
        parts.append((global_data.subset(utts), sub))
    if l > 0:
        chosen = [l_classes[i] for i in rng.choice(len(l_classes), size=l, replace=False)]
        sub = LabelView("local", {c: l_view.classes[c] for c in chosen})
        utts = [u for c in chosen for u in l_view.classes[c]]
        parts.append((local_data.subset(utts), sub))

    if len(parts) == 2:
        train_data = merge_datasets(parts[0][0], parts[1][0])
        view = build_pooled_view(parts[0][1], parts[1][1])
    else:
        train_data, view = parts[0]

    pp = preprocess.fit(train_data.vectors(), whiten=cfg.whiten)
    tc = TrainConfig(
        latent_dim=cfg.latent_dim,
        iterations=cfg.iterations,
        seed=seed,
        min_class_size=cfg.min_class_size,
        loglik_tol=cfg.loglik_tol,
    )
    model, _ = train_em(train_data, view, pp, tc)
    enroll_vecs = {
        mid: pp.apply(np.stack([r.vector for r in recs]))
        for mid, recs in eval_enroll.items()
    }
    test_vecs = {r.utt_id: pp.apply(r.vector) for r in eval_test.records}
    scores = plda.score_trialset(model, enroll_vecs, trials, test_vecs,
                                 threads=cfg.threads)
    eer, _ = compute_eer(scores[trials.target], scores[~trials.target])
    return eer


def write_scores(rows, path) -> None:
    """rows: iterable of ((model_id, utt_id), score) or (model_id, utt_id, score)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("model_id,test_utt_id,score\n")
        for row in rows:
            if len(row) == 2:
                (mid, tid), s = row
            else:
                mid, tid, s = row
            fh.write(f"{mid},{tid},{format_float(s)}\n")


def read_scores(path):
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("model_id,"):
            raise EvalError(f"{path}: missing scores header")
        for line in fh:
            if not line.strip():
                continue
            mid, tid, s = line.rstrip("\n").split(",")
            out.append((mid, tid, float(s)))
    return out


def write_key(trials: TrialSet, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("model_id,test_utt_id,key\n")
        for (mid, tid), tgt in zip(trials.iter_trials(), trials.target):
            fh.write(f"{mid},{tid},{'target' if tgt else 'nontarget'}\n")


def read_key(path):
    """Key file rows model_id,test_utt_id,target|nontarget; header optional."""
    pairs = []
    key = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split(",")
            if lineno == 1 and parts[-1] not in ("target", "nontarget"):
                continue  # header
            if len(parts) != 3 or parts[2] not in ("target", "nontarget"):
                raise EvalError(f"{path}: line {lineno}: malformed key row")
            pairs.append((parts[0], parts[1]))
            key[(parts[0], parts[1])] = parts[2] == "target"
    return pairs, key


def write_report(obj, path) -> None:
    """EvalReport -> metric,value CSV plus DET section; SweepGrid -> long form."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if isinstance(obj, EvalReport):
            fh.write("metric,value\n")
            fh.write(f"eer,{format_float(obj.eer)}\n")
            fh.write(f"threshold,{format_float(obj.threshold)}\n")
            fh.write(f"n_target,{obj.n_target}\n")
            fh.write(f"n_nontarget,{obj.n_nontarget}\n")
            fh.write("det_far,det_miss\n")
            for far, miss in obj.det_points:
                fh.write(f"{format_float(far)},{format_float(miss)}\n")
        elif isinstance(obj, SweepGrid):
            fh.write("n_global,n_local,seed,eer\n")
            for g in obj.axis_global:
                for l in obj.axis_local:
                    if (g, l) not in obj.cells:
                        continue
                    for rep, eer in enumerate(obj.cells[(g, l)]):
                        fh.write(f"{g},{l},{rep},{format_float(eer)}\n")
        else:
            raise EvalError(f"cannot write report for {type(obj).__name__}")
